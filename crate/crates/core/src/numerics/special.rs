//! Special functions and the closed-form Weibull/Gamma pieces used by the
//! variational objective.

use statrs::function::gamma as sgamma;

use super::NumericsError;

/// Euler–Mascheroni constant, 20 significant digits.
#[allow(clippy::excessive_precision)]
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_860_61;

/// Uniform draws are kept inside `[UNIFORM_LO, UNIFORM_HI]`.
pub const UNIFORM_LO: f64 = 1e-12;
pub const UNIFORM_HI: f64 = 1.0 - 1e-7;

pub fn lgamma(x: f64) -> Result<f64, NumericsError> {
    if x <= 0.0 || x.is_nan() {
        return Err(NumericsError::Domain {
            op: "lgamma",
            value: x,
        });
    }
    Ok(sgamma::ln_gamma(x))
}

pub fn digamma(x: f64) -> f64 {
    sgamma::digamma(x)
}

pub fn gamma(x: f64) -> f64 {
    sgamma::gamma(x)
}

pub fn clamp_uniform(u: f64) -> f64 {
    u.clamp(UNIFORM_LO, UNIFORM_HI)
}

/// Inverse-CDF Weibull draw `λ · (−ln(1 − u))^{1/k}`.
pub fn weibull_quantile(k: f64, lam: f64, u: f64) -> f64 {
    let w = -(1.0 - clamp_uniform(u)).ln();
    lam * (w.ln() / k).exp()
}

pub fn weibull_cdf(k: f64, lam: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        1.0 - (-(x / lam).powf(k)).exp()
    }
}

/// `E[x] = λ Γ(1 + 1/k)`.
pub fn weibull_mean(k: f64, lam: f64) -> f64 {
    lam * gamma(1.0 + 1.0 / k)
}

/// KL(Weibull(k, λ) ‖ Gamma(α, rate)) in closed form:
///
/// `γ_E α / k − α ln λ + ln k + rate · λ Γ(1 + 1/k) − γ_E − 1 − α ln rate + ln Γ(α)`
pub fn kl_weibull_gamma(k: f64, lam: f64, alpha: f64, rate: f64) -> Result<f64, NumericsError> {
    for (name, v) in [("k", k), ("lambda", lam), ("alpha", alpha), ("rate", rate)] {
        if v <= 0.0 || v.is_nan() {
            return Err(NumericsError::DomainArg {
                op: "kl_weibull_gamma",
                arg: name,
                value: v,
            });
        }
    }
    Ok(kl_unchecked(k, lam, alpha, rate))
}

#[inline]
pub(crate) fn kl_unchecked(k: f64, lam: f64, alpha: f64, rate: f64) -> f64 {
    EULER_GAMMA * alpha / k - alpha * lam.ln() + k.ln() + rate * lam * gamma(1.0 + 1.0 / k)
        - EULER_GAMMA
        - 1.0
        - alpha * rate.ln()
        + sgamma::ln_gamma(alpha)
}

/// Partial derivatives of the closed-form KL with respect to `(k, λ, α)`.
#[inline]
pub(crate) fn kl_grad(k: f64, lam: f64, alpha: f64, rate: f64) -> (f64, f64, f64) {
    let z = 1.0 + 1.0 / k;
    let g = gamma(z);
    let dk = -EULER_GAMMA * alpha / (k * k) + 1.0 / k - rate * lam * g * digamma(z) / (k * k);
    let dlam = -alpha / lam + rate * g;
    let dalpha = EULER_GAMMA / k - lam.ln() - rate.ln() + digamma(alpha);
    (dk, dlam, dalpha)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_is_zero_for_identical_exponentials() {
        let v = kl_weibull_gamma(1.0, 1.0, 1.0, 1.0).unwrap();
        assert!(v.abs() < 1e-12, "{v}");
    }

    #[test]
    fn kl_rejects_non_positive_arguments() {
        assert!(kl_weibull_gamma(0.0, 1.0, 1.0, 1.0).is_err());
        assert!(kl_weibull_gamma(1.0, 1.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn lgamma_domain() {
        assert!(lgamma(0.0).is_err());
        assert!(lgamma(-2.5).is_err());
        assert!((lgamma(5.0).unwrap() - 24f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn weibull_quantile_closed_forms() {
        let e = std::f64::consts::E;
        let x = weibull_quantile(1.0, 1.0, 1.0 - 1.0 / e);
        assert!((x - 1.0).abs() < 1e-12);
        let x = weibull_quantile(2.0, 3.0, 1.0 - (-4.0f64).exp());
        assert!((x - 6.0).abs() < 1e-9, "{x}");
    }

    #[test]
    fn kl_gradient_matches_finite_differences() {
        let h = 1e-6;
        for &(k, lam, a, c) in &[(0.7, 1.3, 2.0, 1.0), (3.0, 0.4, 0.6, 2.5)] {
            let (dk, dl, da) = kl_grad(k, lam, a, c);
            let fd_k = (kl_unchecked(k + h, lam, a, c) - kl_unchecked(k - h, lam, a, c)) / (2.0 * h);
            let fd_l = (kl_unchecked(k, lam + h, a, c) - kl_unchecked(k, lam - h, a, c)) / (2.0 * h);
            let fd_a = (kl_unchecked(k, lam, a + h, c) - kl_unchecked(k, lam, a - h, c)) / (2.0 * h);
            assert!((dk - fd_k).abs() < 1e-6 * (1.0 + fd_k.abs()));
            assert!((dl - fd_l).abs() < 1e-6 * (1.0 + fd_l.abs()));
            assert!((da - fd_a).abs() < 1e-6 * (1.0 + fd_a.abs()));
        }
    }
}
