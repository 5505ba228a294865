//! How many modes survive an RD-AE phase started from a plain-AE warm-up, and
//! the loss floor that follows.
//!
//! After a warm-up of length `T_wu` from `u = v = ε`, mode `j` carries latent
//! variance `σ_j² g_j(T_wu)` with `g_j` the logistic activation. At most
//!
//! ```text
//! m_wu = max { m : R > ½ Σ_{i<m} log2( σ_i² g_i / σ_m² g_m ) }
//! ```
//!
//! modes remain active once the channel is switched on, and the converged
//! loss is at least `m_wu δ_m + Σ_{j>m_wu} σ_j²` with
//! `δ_m = (Π_{i≤m} σ_i²)^{1/m} 2^{-2R/m}`.

use std::f64::consts::LN_2;

use crate::ae_flow::{closed_form_activation, InitConfig};
use crate::error::{invalid, Error, Result};
use crate::rdae_diag::plateau_loss;
use crate::spectral::Spectrum;
use crate::waterfill::solve_water_level;

#[derive(Debug, Clone, PartialEq)]
pub struct WarmupPrediction {
    pub m_wu: usize,
    pub loss_lower_bound: f64,
    pub delta_m: f64,
    pub rate_bits: f64,
    pub t_wu: f64,
}

/// Warm-up activations `g_j(T_wu)` from `u = v = ε`; `T_wu = ∞` gives all ones.
pub fn warmup_gains(spectrum: &Spectrum, epsilon: f64, t_wu: f64) -> Result<Vec<f64>> {
    let init = InitConfig::from_epsilon(epsilon)?;
    if !(t_wu >= 0.0) {
        return Err(invalid(format!("warm-up duration must be nonnegative, got {t_wu}")));
    }
    spectrum
        .values()
        .iter()
        .map(|&s| if t_wu.is_infinite() { Ok(1.0) } else { closed_form_activation(s, init.scale(), t_wu) })
        .collect()
}

/// The largest `m` satisfying the strict surviving-mode inequality; always ≥ 1.
///
/// Requires a strictly decreasing spectrum; ties are rejected rather than
/// perturbed.
pub fn predict_surviving_modes(spectrum: &Spectrum, epsilon: f64, t_wu: f64, rate_bits: f64) -> Result<usize> {
    if !spectrum.is_strictly_decreasing() {
        return Err(invalid("surviving-mode prediction needs a strictly decreasing spectrum"));
    }
    if !(rate_bits >= 0.0) {
        return Err(invalid(format!("rate must be nonnegative, got {rate_bits}")));
    }
    let gains = warmup_gains(spectrum, epsilon, t_wu)?;
    let log_var: Vec<f64> = spectrum.values().iter().zip(&gains).map(|(s, g)| (s * g).ln()).collect();
    let mut best = 1;
    for m in 2..=log_var.len() {
        let last = log_var[m - 1];
        let mut sum = 0.0;
        for &l in &log_var[..m - 1] {
            sum += l - last;
        }
        if rate_bits > 0.5 * sum / LN_2 {
            best = m;
        }
    }
    Ok(best)
}

/// `δ_m(R) = (Π_{i≤m} σ_i²)^{1/m} 2^{-2R/m}`.
pub fn delta_m(spectrum: &Spectrum, m: usize, rate_bits: f64) -> Result<f64> {
    check_m(spectrum, m)?;
    let mean_log: f64 = spectrum.values()[..m].iter().map(|s| s.ln()).sum::<f64>() / m as f64;
    Ok((mean_log - 2.0 * rate_bits * LN_2 / m as f64).exp())
}

/// `m δ_m(R) + Σ_{j>m} σ_j²`.
pub fn loss_lower_bound(spectrum: &Spectrum, m: usize, rate_bits: f64) -> Result<f64> {
    check_m(spectrum, m)?;
    plateau_loss(spectrum, m, rate_bits)
}

fn check_m(spectrum: &Spectrum, m: usize) -> Result<()> {
    if m == 0 || m > spectrum.len() {
        return Err(invalid(format!("mode count must lie in 1..={}, got {m}", spectrum.len())));
    }
    Ok(())
}

/// Surviving-mode count together with its loss bound.
pub fn predict(spectrum: &Spectrum, epsilon: f64, t_wu: f64, rate_bits: f64) -> Result<WarmupPrediction> {
    let m_wu = predict_surviving_modes(spectrum, epsilon, t_wu, rate_bits)?;
    Ok(WarmupPrediction {
        m_wu,
        loss_lower_bound: loss_lower_bound(spectrum, m_wu, rate_bits)?,
        delta_m: delta_m(spectrum, m_wu, rate_bits)?,
        rate_bits,
        t_wu,
    })
}

/// Number of measured principal components strictly above the water line:
/// an upper bound on how many latent dimensions a rate-`R` codebook can keep.
pub fn predict_from_spectrum(empirical: &Spectrum, rate_bits: f64) -> Result<usize> {
    Ok(solve_water_level(empirical, rate_bits)?.active_count())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwitchAdvice {
    /// Recommended switch time.
    pub t: f64,
    /// Position of `t` in the series.
    pub index: usize,
    /// False when no plateau was found and `t` is just the last time.
    pub converged: bool,
}

/// Earliest time after which the next `patience` values all stay within
/// `relative_tol · |x_T|` of the value `x_T` at that time.
pub fn advise_switch(series: &[(f64, f64)], patience: usize, relative_tol: f64) -> Result<SwitchAdvice> {
    if series.is_empty() {
        return Err(invalid("empty series"));
    }
    if !(relative_tol >= 0.0) {
        return Err(invalid(format!("tolerance must be nonnegative, got {relative_tol}")));
    }
    if let Some(w) = series.windows(2).find(|w| !(w[1].0 > w[0].0)) {
        return Err(invalid(format!("times must increase strictly, got {} then {}", w[0].0, w[1].0)));
    }
    if let Some(&(t, x)) = series.iter().find(|(t, x)| !t.is_finite() || !x.is_finite()) {
        return Err(Error::NonFinite(format!("series entry ({t}, {x})")));
    }
    for i in 0..series.len() {
        let end = i + patience;
        if end >= series.len() {
            break;
        }
        let x = series[i].1;
        let band = relative_tol * x.abs();
        if series[i + 1..=end].iter().all(|&(_, y)| (y - x).abs() <= band) {
            return Ok(SwitchAdvice { t: series[i].0, index: i, converged: true });
        }
    }
    let last = series.len() - 1;
    Ok(SwitchAdvice { t: series[last].0, index: last, converged: false })
}
