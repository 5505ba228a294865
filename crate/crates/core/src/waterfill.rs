//! Gaussian reverse water-filling.
//!
//! For latent variances `λ_j` and a rate budget of `R` bits, the
//! distortion-minimizing channel picks a water level `D*` with
//!
//! ```text
//! Σ_j ½ log2⁺(λ_j / D*) = R
//! ```
//!
//! and acts on each coordinate as `z_q,j | z_j ~ N(c_j z_j, τ_j²)` with
//! `D_j = min(λ_j, D*)`, `c_j = 1 - D_j/λ_j` and `τ_j² = c_j D*`. A mode is
//! active when `λ_j > D*` (strictly); at `λ_j = D*` it carries no rate.
//!
//! The solver enumerates prefix lengths of the descending spectrum: for a
//! prefix of `k` modes the candidate level is the geometric mean of the
//! prefix times `2^(-2R/k)`, and the answer is the largest `k` whose last
//! mode still sits above its own candidate level.

use std::f64::consts::LN_2;

use crate::error::{check_len, invalid, Error, Result};
use crate::spectral::Spectrum;

/// Per-mode channel parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeChannel {
    /// `D_j = min(λ_j, D*)`.
    pub distortion: f64,
    /// `c_j = 1 - D_j/λ_j`, zero for inactive modes.
    pub gain: f64,
    /// `τ_j² = c_j D*`.
    pub noise_var: f64,
}

/// The solved rate-`R` channel for one set of latent variances.
#[derive(Debug, Clone, PartialEq)]
pub struct RdChannel {
    pub water_level: f64,
    /// Indexed like the variances the channel was solved for.
    pub per_mode: Vec<ModeChannel>,
    /// Active mode indices in ascending index order.
    pub active_set: Vec<usize>,
    pub rate_bits: f64,
}

impl RdChannel {
    /// Solves the channel for variances in any order. Per-mode parameters and
    /// active indices refer to the input order.
    pub fn solve(variances: &[f64], rate_bits: f64) -> Result<Self> {
        if variances.is_empty() {
            return Err(invalid("cannot water-fill an empty spectrum"));
        }
        if !(rate_bits >= 0.0) || !rate_bits.is_finite() {
            return Err(invalid(format!("rate must be finite and nonnegative, got {rate_bits}")));
        }
        for (j, &v) in variances.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("variance {j} is {v}")));
            }
            if v < 0.0 {
                return Err(invalid(format!("variance {j} is negative ({v})")));
            }
        }
        let mut order: Vec<usize> = (0..variances.len()).collect();
        // Stable: ties keep index order.
        order.sort_by(|&a, &b| variances[b].partial_cmp(&variances[a]).expect("finite"));
        let top = variances[order[0]];
        if !(top > 0.0) {
            return Err(Error::ZeroSpectrum);
        }

        let (water_level, k) = solve_sorted(order.iter().map(|&i| variances[i]), rate_bits, top);

        let mut active_set: Vec<usize> = order[..k].to_vec();
        active_set.sort_unstable();
        let mut is_active = vec![false; variances.len()];
        for &i in &active_set {
            is_active[i] = true;
        }
        let per_mode = variances
            .iter()
            .zip(&is_active)
            .map(|(&lambda, &active)| {
                if active {
                    let gain = 1.0 - water_level / lambda;
                    ModeChannel { distortion: water_level, gain, noise_var: gain * water_level }
                } else {
                    ModeChannel { distortion: lambda, gain: 0.0, noise_var: 0.0 }
                }
            })
            .collect();
        Ok(RdChannel { water_level, per_mode, active_set, rate_bits })
    }

    pub fn active_count(&self) -> usize {
        self.active_set.len()
    }

    pub fn is_active(&self, j: usize) -> bool {
        self.active_set.binary_search(&j).is_ok()
    }

    /// Total latent distortion `Σ_j D_j`.
    pub fn total_distortion(&self) -> f64 {
        self.per_mode.iter().map(|m| m.distortion).sum()
    }

    pub fn gains(&self) -> Vec<f64> {
        self.per_mode.iter().map(|m| m.gain).collect()
    }

    /// `Σ_{j∈A} ½ log2(λ_j / D*)` for the given variances; equals the rate
    /// budget for a correctly solved channel.
    pub fn spent_rate(&self, variances: &[f64]) -> f64 {
        self.active_set
            .iter()
            .map(|&j| 0.5 * (variances[j] / self.water_level).log2())
            .sum()
    }
}

/// Returns `(D*, k)` for values given in descending order.
fn solve_sorted(sorted: impl Iterator<Item = f64>, rate_bits: f64, top: f64) -> (f64, usize) {
    let mut log_sum = 0.0;
    let mut best = (top, 0);
    for (idx, lambda) in sorted.enumerate() {
        // Zero variances carry no rate and can never be active.
        if lambda <= 0.0 {
            break;
        }
        let k = idx + 1;
        log_sum += lambda.ln();
        let candidate = (log_sum / k as f64 - 2.0 * rate_bits * LN_2 / k as f64).exp();
        if lambda > candidate {
            best = (candidate, k);
        }
    }
    best
}

/// Like [`RdChannel::solve`], but an all-zero input yields the degenerate
/// channel with water level 0, no active modes and `D_j = λ_j = 0`.
pub fn solve_or_empty(variances: &[f64], rate_bits: f64) -> Result<RdChannel> {
    match RdChannel::solve(variances, rate_bits) {
        Err(Error::ZeroSpectrum) => Ok(RdChannel {
            water_level: 0.0,
            per_mode: variances
                .iter()
                .map(|&l| ModeChannel { distortion: l, gain: 0.0, noise_var: 0.0 })
                .collect(),
            active_set: Vec::new(),
            rate_bits,
        }),
        other => other,
    }
}

/// Solves the water level for a descending spectrum.
pub fn solve_water_level(spectrum: &Spectrum, rate_bits: f64) -> Result<RdChannel> {
    RdChannel::solve(spectrum.values(), rate_bits)
}

/// The Shannon distortion floor `D(R) = Σ_j D_j`.
pub fn shannon_distortion(spectrum: &Spectrum, rate_bits: f64) -> Result<f64> {
    Ok(solve_water_level(spectrum, rate_bits)?.total_distortion())
}

/// Channel parameters `(D_j, c_j, τ_j²)` of a single mode at a given water level.
pub fn channel_params(lambda: f64, water_level: f64) -> Result<ModeChannel> {
    if !(lambda >= 0.0) || !(water_level >= 0.0) {
        return Err(invalid(format!(
            "variance and water level must be nonnegative, got {lambda} and {water_level}"
        )));
    }
    if lambda > water_level {
        let gain = 1.0 - water_level / lambda;
        Ok(ModeChannel { distortion: water_level, gain, noise_var: gain * water_level })
    } else {
        Ok(ModeChannel { distortion: lambda, gain: 0.0, noise_var: 0.0 })
    }
}

/// Instantaneous `Ḋ*/D* = (2/k) Σ_{i∈A} u̇_i/u_i` for a diagonal encoder.
pub fn water_level_log_derivative(channel: &RdChannel, u: &[f64], u_dot: &[f64]) -> Result<f64> {
    check_len(channel.per_mode.len(), u.len())?;
    check_len(u.len(), u_dot.len())?;
    if channel.active_set.is_empty() {
        return Err(Error::EmptyActiveSet);
    }
    let mut sum = 0.0;
    for &i in &channel.active_set {
        if u[i] == 0.0 {
            return Err(Error::ZeroActiveWeight(i));
        }
        sum += u_dot[i] / u[i];
    }
    Ok(2.0 * sum / channel.active_set.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(v: &[f64]) -> Spectrum {
        Spectrum::new(v.to_vec()).unwrap()
    }

    #[test]
    fn equal_variances() {
        let ch = solve_water_level(&spec(&[1.0; 4]), 2.0).unwrap();
        assert!((ch.water_level - 0.5).abs() < 1e-15);
        assert_eq!(ch.active_set, vec![0, 1, 2, 3]);
        assert!((ch.total_distortion() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn two_modes_both_active() {
        let s = spec(&[4.0, 2.0]);
        let ch = solve_water_level(&s, 1.0).unwrap();
        assert!((ch.water_level - 2f64.sqrt()).abs() < 1e-14);
        assert_eq!(ch.active_set, vec![0, 1]);
        assert!((ch.spent_rate(s.values()) - 1.0).abs() < 1e-12);
        assert!((shannon_distortion(&s, 1.0).unwrap() - 2.0 * 2f64.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn weak_mode_below_water() {
        let ch = solve_water_level(&spec(&[1.0, 0.25]), 0.5).unwrap();
        assert!((ch.water_level - 0.5).abs() < 1e-15);
        assert_eq!(ch.active_set, vec![0]);
        assert_eq!(ch.per_mode[1].gain, 0.0);
        assert_eq!(ch.per_mode[1].distortion, 0.25);
    }

    #[test]
    fn zero_rate_passes_nothing() {
        let s = spec(&[3.0, 2.0, 0.5]);
        let ch = solve_water_level(&s, 0.0).unwrap();
        assert_eq!(ch.water_level, 3.0);
        assert!(ch.active_set.is_empty());
        assert_eq!(ch.total_distortion(), 5.5);
    }

    #[test]
    fn boundary_mode_is_inactive() {
        // Prefix {4} at R = 1 gives D* = 4 / 4 = 1, exactly the second variance.
        let ch = solve_water_level(&spec(&[4.0, 1.0]), 1.0).unwrap();
        assert_eq!(ch.water_level, 1.0);
        assert_eq!(ch.active_set, vec![0]);
        assert_eq!(ch.per_mode[1].gain, 0.0);
    }

    #[test]
    fn zero_variances_never_active() {
        let ch = solve_water_level(&spec(&[2.0, 1.0, 0.0]), 40.0).unwrap();
        assert_eq!(ch.active_set, vec![0, 1]);
        assert_eq!(ch.per_mode[2], ModeChannel { distortion: 0.0, gain: 0.0, noise_var: 0.0 });
    }

    #[test]
    fn unsorted_input_keeps_indices() {
        let ch = RdChannel::solve(&[0.25, 1.0], 0.5).unwrap();
        assert_eq!(ch.active_set, vec![1]);
        assert!((ch.per_mode[1].gain - 0.5).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert_eq!(solve_water_level(&spec(&[0.0, 0.0]), 1.0), Err(Error::ZeroSpectrum));
        assert!(solve_water_level(&spec(&[1.0]), -1.0).is_err());
        assert!(RdChannel::solve(&[], 1.0).is_err());
        assert!(channel_params(-1.0, 1.0).is_err());
        assert!(channel_params(1.0, -1.0).is_err());
    }

    #[test]
    fn channel_params_examples() {
        assert_eq!(
            channel_params(2.0, 1.0).unwrap(),
            ModeChannel { distortion: 1.0, gain: 0.5, noise_var: 0.5 }
        );
        assert_eq!(
            channel_params(1.0, 1.0).unwrap(),
            ModeChannel { distortion: 1.0, gain: 0.0, noise_var: 0.0 }
        );
        assert_eq!(
            channel_params(0.5, 1.0).unwrap(),
            ModeChannel { distortion: 0.5, gain: 0.0, noise_var: 0.0 }
        );
    }

    #[test]
    fn log_derivative_examples() {
        let ch = RdChannel::solve(&[4.0, 1.0], 1.0).unwrap();
        assert_eq!(water_level_log_derivative(&ch, &[2.0, 1.0], &[1.0, 5.0]).unwrap(), 1.0);
        assert_eq!(water_level_log_derivative(&ch, &[2.0, 1.0], &[0.0, 5.0]).unwrap(), 0.0);

        let ch = RdChannel::solve(&[4.0, 2.0], 1.0).unwrap();
        assert_eq!(water_level_log_derivative(&ch, &[1.0, 2.0], &[1.0, 2.0]).unwrap(), 2.0);
        assert_eq!(
            water_level_log_derivative(&ch, &[0.0, 2.0], &[1.0, 2.0]),
            Err(Error::ZeroActiveWeight(0))
        );

        let empty = RdChannel::solve(&[4.0, 2.0], 0.0).unwrap();
        assert_eq!(water_level_log_derivative(&empty, &[1.0, 1.0], &[0.0, 0.0]), Err(Error::EmptyActiveSet));
    }
}
