//! Special functions backing the ANOVA p-values: log-gamma, the regularized
//! incomplete beta function, and the F-distribution upper tail. Generic over
//! the floating-point scalar.

use num_traits::Float;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SpecialError {
    #[error("F statistic must be finite and non-negative, got {0}")]
    BadF(String),
    #[error("degrees of freedom must be >= 1")]
    BadDf,
    #[error("incomplete beta argument x={0} outside [0, 1]")]
    BadX(String),
    #[error("continued fraction failed to converge")]
    NoConvergence,
}

fn c<T: Float>(x: f64) -> T {
    T::from(x).expect("constant representable in scalar type")
}

/// Natural log of the gamma function via the Lanczos approximation (g = 7,
/// nine coefficients), with the reflection formula below 1/2. Accurate to
/// ~1e-13 relative error for f64.
pub fn ln_gamma<T: Float>(x: T) -> T {
    const COEFFS: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507343278686905,
        -0.13857109526572012,
        9.984_369_578_019_572e-6,
        1.5056327351493116e-7,
    ];
    let half = c::<T>(0.5);
    if x < half {
        // ln Γ(x) = ln(π / sin(πx)) − ln Γ(1 − x)
        let pi = c::<T>(std::f64::consts::PI);
        return (pi / (pi * x).sin()).ln() - ln_gamma(T::one() - x);
    }
    let x = x - T::one();
    let mut acc = c::<T>(0.99999999999980993);
    for (i, &coeff) in COEFFS.iter().enumerate() {
        acc = acc + c::<T>(coeff) / (x + c::<T>((i + 1) as f64));
    }
    let t = x + c::<T>(7.5);
    let sqrt_two_pi = c::<T>((2.0 * std::f64::consts::PI).sqrt());
    (sqrt_two_pi * acc).ln() + (x + half) * t.ln() - t
}

/// Continued fraction for the incomplete beta function, evaluated with the
/// modified Lentz algorithm.
fn betacf<T: Float>(a: T, b: T, x: T) -> Result<T, SpecialError> {
    // 1e-12 for f64; wider scalars scale with their machine epsilon.
    let eps = c::<T>(1e-12).max(T::epsilon() * c::<T>(8.0));
    let fpmin = T::min_positive_value() / T::epsilon();
    let one = T::one();
    let two = c::<T>(2.0);

    let qab = a + b;
    let qap = a + one;
    let qam = a - one;
    let mut cc = one;
    let mut d = one - qab * x / qap;
    if d.abs() < fpmin {
        d = fpmin;
    }
    d = one / d;
    let mut h = d;
    for m in 1..=300 {
        let m_t = c::<T>(m as f64);
        let m2 = two * m_t;
        // Even step.
        let aa = m_t * (b - m_t) * x / ((qam + m2) * (a + m2));
        d = one + aa * d;
        if d.abs() < fpmin {
            d = fpmin;
        }
        cc = one + aa / cc;
        if cc.abs() < fpmin {
            cc = fpmin;
        }
        d = one / d;
        h = h * d * cc;
        // Odd step.
        let aa = -(a + m_t) * (qab + m_t) * x / ((a + m2) * (qap + m2));
        d = one + aa * d;
        if d.abs() < fpmin {
            d = fpmin;
        }
        cc = one + aa / cc;
        if cc.abs() < fpmin {
            cc = fpmin;
        }
        d = one / d;
        let del = d * cc;
        h = h * del;
        if (del - one).abs() < eps {
            return Ok(h);
        }
    }
    Err(SpecialError::NoConvergence)
}

/// Regularized incomplete beta function `I_x(a, b)`, switching to the
/// symmetric form `1 − I_{1−x}(b, a)` when x exceeds (a+1)/(a+b+2) so the
/// continued fraction converges quickly on both sides.
pub fn betainc<T: Float>(a: T, b: T, x: T) -> Result<T, SpecialError> {
    let zero = T::zero();
    let one = T::one();
    if x < zero || x > one {
        return Err(SpecialError::BadX(format!("{:?}", x.to_f64())));
    }
    if x == zero {
        return Ok(zero);
    }
    if x == one {
        return Ok(one);
    }
    let front =
        (ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (one - x).ln()).exp();
    let switch = (a + one) / (a + b + c::<T>(2.0));
    if x < switch {
        Ok(front * betacf(a, b, x)? / a)
    } else {
        Ok(one - front * betacf(b, a, one - x)? / b)
    }
}

/// `P(X > F)` for `X ~ F(df1, df2)`: `I_x(df2/2, df1/2)` at
/// `x = df2 / (df2 + df1·F)`. F = 0 gives exactly 1.
pub fn f_upper_tail<T: Float>(f: T, df1: usize, df2: usize) -> Result<T, SpecialError> {
    if !f.is_finite() || f < T::zero() {
        return Err(SpecialError::BadF(format!("{:?}", f.to_f64())));
    }
    if df1 < 1 || df2 < 1 {
        return Err(SpecialError::BadDf);
    }
    let d1 = c::<T>(df1 as f64);
    let d2 = c::<T>(df2 as f64);
    let x = d2 / (d2 + d1 * f);
    let p = betainc(d2 / c::<T>(2.0), d1 / c::<T>(2.0), x)?;
    Ok(p.max(T::zero()).min(T::one()))
}
