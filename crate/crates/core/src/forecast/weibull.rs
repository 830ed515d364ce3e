//! Weibull survival function and the right-censored negative log-likelihood
//! used to fit it.

use crate::error::{Error, Result};

fn check_params(lambda: f64, rho: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite() && rho > 0.0 && rho.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "Weibull parameters must be positive and finite, got lambda = {lambda}, rho = {rho}"
        )));
    }
    Ok(())
}

/// `S(τ) = exp(-(τ/λ)^ρ)`.
pub fn weibull_survival(tau: f64, lambda: f64, rho: f64) -> Result<f64> {
    check_params(lambda, rho)?;
    if tau.is_nan() || tau < 0.0 {
        return Err(Error::InvalidArgument(format!("tau must be >= 0, got {tau}")));
    }
    Ok(survival_unchecked(tau, lambda, rho))
}

#[inline]
pub(crate) fn survival_unchecked(tau: f64, lambda: f64, rho: f64) -> f64 {
    (-(tau / lambda).powf(rho)).exp()
}

/// Probability that the success event falls in `[t, t + T_F]`.
pub fn window_probability(t: f64, window: f64, lambda: f64, rho: f64) -> Result<f64> {
    let now = weibull_survival(t, lambda, rho)?;
    let later = weibull_survival(t + window.max(0.0), lambda, rho)?;
    Ok((now - later).max(0.0))
}

/// Value and partial derivatives `(L, ∂L/∂λ, ∂L/∂ρ)` of the per-sample
/// negative log-likelihood.
///
/// Observed event: `-[ln ρ - ln λ + (ρ-1) ln(T/λ) - (T/λ)^ρ]`.
/// Censored at `T`: `-ln S(T) = (T/λ)^ρ`.
pub fn censored_weibull_nll_grad(lambda: f64, rho: f64, time: f64, censored: bool) -> Result<(f64, f64, f64)> {
    check_params(lambda, rho)?;
    if time.is_nan() || time <= 0.0 {
        return Err(Error::InvalidArgument(format!("event time must be > 0, got {time}")));
    }
    let log_ratio = (time / lambda).ln();
    let h = (rho * log_ratio).exp();
    let (loss, d_lambda, d_rho) = if censored {
        (h, -rho * h / lambda, h * log_ratio)
    } else {
        (
            -(rho.ln() - lambda.ln() + (rho - 1.0) * log_ratio - h),
            rho * (1.0 - h) / lambda,
            -1.0 / rho - log_ratio + h * log_ratio,
        )
    };
    if !loss.is_finite() || !d_lambda.is_finite() || !d_rho.is_finite() {
        return Err(Error::NonFinite(format!(
            "censored Weibull NLL at lambda = {lambda}, rho = {rho}, time = {time}, censored = {censored}"
        )));
    }
    Ok((loss, d_lambda, d_rho))
}

pub fn censored_weibull_nll(lambda: f64, rho: f64, time: f64, censored: bool) -> Result<f64> {
    censored_weibull_nll_grad(lambda, rho, time, censored).map(|(l, _, _)| l)
}
