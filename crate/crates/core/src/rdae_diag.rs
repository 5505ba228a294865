//! Diagonal RD-AE flow: the plain linear autoencoder with its bottleneck
//! replaced by the rate-`R` water-filling channel, trained with the
//! straight-through estimator and a `β`-weighted commitment term.
//!
//! ```text
//! u̇_j = 2σ_j² v_j (1 - c_j u_j v_j) - 2β D_j / u_j
//! v̇_j = 2σ_j² c_j u_j (1 - u_j v_j)
//! ```
//!
//! The channel `(D*, c_j, D_j)` is re-solved from the current latent
//! variances `λ_j = u_j² σ_j²` at every Runge–Kutta stage. Nothing is frozen
//! by hand: inactive modes stop moving only because, at `β = 1` and balance,
//! the two encoder terms cancel.

use crate::ae_flow::{check_divergence, deff_or_zero, DiagState, InitConfig};
use crate::error::{check_len, invalid, Result};
use crate::ode::Rk4;
use crate::spectral::Spectrum;
use crate::trajectory::{Snapshot, Trajectory, TrajectoryKind};
use crate::waterfill::{solve_or_empty, RdChannel};

/// Default convergence tolerance on `max(|u̇|, |v̇|)`.
pub const DEFAULT_CONVERGENCE_TOL: f64 = 1e-8;

/// Consecutive recorded snapshots below tolerance needed to declare convergence.
pub const CONVERGENCE_WINDOW: usize = 100;

/// Starting point of a diagonal simulation.
#[derive(Debug, Clone, PartialEq)]
pub enum DiagInit {
    Balanced(InitConfig),
    State(DiagState),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagSimConfig {
    pub spectrum: Spectrum,
    pub rate_bits: f64,
    pub beta: f64,
    pub init: DiagInit,
    pub dt: f64,
    pub steps: usize,
    pub record_every: usize,
    pub convergence_tol: f64,
    /// Stop as soon as convergence is declared instead of running all steps.
    pub stop_on_convergence: bool,
}

impl DiagSimConfig {
    /// Balanced start with the default step size, recording cadence and tolerance.
    pub fn new(spectrum: Spectrum, rate_bits: f64, beta: f64, init: DiagInit, steps: usize) -> Self {
        let dt = crate::ae_flow::default_dt(&spectrum);
        DiagSimConfig {
            spectrum,
            rate_bits,
            beta,
            init,
            dt,
            steps,
            record_every: crate::ae_flow::DEFAULT_RECORD_EVERY,
            convergence_tol: DEFAULT_CONVERGENCE_TOL,
            stop_on_convergence: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate_bits >= 0.0) || !self.rate_bits.is_finite() {
            return Err(invalid(format!("rate must be nonnegative, got {}", self.rate_bits)));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(invalid(format!("beta must be nonnegative, got {}", self.beta)));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if self.record_every == 0 {
            return Err(invalid("record_every must be at least 1"));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(invalid("convergence tolerance must be positive"));
        }
        if let DiagInit::State(s) = &self.init {
            check_len(self.spectrum.len(), s.u.len())?;
            check_len(self.spectrum.len(), s.v.len())?;
        }
        Ok(())
    }
}

/// Final outcome of a diagonal RD-AE run.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    /// Active modes at the end of the run.
    pub k_infinity: usize,
    pub water_level_final: f64,
    pub loss_final: f64,
    pub converged: bool,
    pub final_state: DiagState,
}

/// Solves the channel for the latent variances of `state`.
pub fn diag_channel(state: &DiagState, spectrum: &Spectrum, rate_bits: f64) -> Result<RdChannel> {
    check_len(spectrum.len(), state.u.len())?;
    solve_or_empty(&state.latent_variances(spectrum), rate_bits)
}

/// Right-hand side of the diagonal RD-AE flow for a given channel.
pub fn diag_rdae_derivatives(
    state: &DiagState,
    spectrum: &Spectrum,
    channel: &RdChannel,
    beta: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = spectrum.len();
    check_len(d, state.u.len())?;
    check_len(d, state.v.len())?;
    check_len(d, channel.per_mode.len())?;
    let mut du = vec![0.0; d];
    let mut dv = vec![0.0; d];
    rdae_rhs(&state.u, &state.v, spectrum.values(), channel, beta, &mut du, &mut dv);
    Ok((du, dv))
}

fn rdae_rhs(
    u: &[f64],
    v: &[f64],
    sigma_sq: &[f64],
    channel: &RdChannel,
    beta: f64,
    du: &mut [f64],
    dv: &mut [f64],
) {
    for j in 0..u.len() {
        let m = &channel.per_mode[j];
        let (c, distortion) = (m.gain, m.distortion);
        let s = sigma_sq[j];
        // D_j / u_j = u_j σ_j² (1 - c_j); the second form is the u_j → 0 limit.
        let commitment = if u[j] != 0.0 { distortion / u[j] } else { (1.0 - c) * u[j] * s };
        du[j] = 2.0 * s * v[j] * (1.0 - c * u[j] * v[j]) - 2.0 * beta * commitment;
        dv[j] = 2.0 * s * c * u[j] * (1.0 - u[j] * v[j]);
    }
}

/// Reconstruction loss `Σ_j [σ_j² (1 - c_j u_j v_j)² + v_j² τ_j²]`.
pub fn reconstruction_loss_diag(state: &DiagState, spectrum: &Spectrum, channel: &RdChannel) -> Result<f64> {
    let d = spectrum.len();
    check_len(d, state.u.len())?;
    check_len(d, state.v.len())?;
    check_len(d, channel.per_mode.len())?;
    Ok((0..d)
        .map(|j| {
            let m = &channel.per_mode[j];
            let fit = 1.0 - m.gain * state.u[j] * state.v[j];
            spectrum.values()[j] * fit * fit + state.v[j] * state.v[j] * m.noise_var
        })
        .sum())
}

/// Balanced-mode activation rate `ṙ = 4σ² c r (1 - r)`.
pub fn logistic_rate(r: f64, sigma_sq: f64, c: f64) -> f64 {
    4.0 * sigma_sq * c * r * (1.0 - r)
}

/// Loss once the top `k_active` modes have fully activated and spend the
/// whole rate: `k D* + Σ_{j>k} σ_j²` with `D* = (Π_{i≤k} σ_i²)^{1/k} 2^{-2R/k}`.
pub fn plateau_loss(spectrum: &Spectrum, k_active: usize, rate_bits: f64) -> Result<f64> {
    let d = spectrum.len();
    if k_active == 0 || k_active > d {
        return Err(invalid(format!("active count must lie in 1..={d}, got {k_active}")));
    }
    let head = &spectrum.values()[..k_active];
    let k = k_active as f64;
    let log_mean: f64 = head.iter().map(|s| s.ln()).sum::<f64>() / k;
    let level = (log_mean - 2.0 * rate_bits * std::f64::consts::LN_2 / k).exp();
    let tail: f64 = spectrum.values()[k_active..].iter().sum();
    Ok(k * level + tail)
}

/// Integrates the diagonal RD-AE flow.
pub fn integrate_diag_rdae(config: &DiagSimConfig) -> Result<(Trajectory, ConvergenceReport)> {
    let mut tr = Trajectory::new(TrajectoryKind::DiagRdae);
    let report = integrate_diag_rdae_into(config, &mut tr)?;
    Ok((tr, report))
}

/// Like [`integrate_diag_rdae`], recording into `tr`; on error `tr` keeps
/// every snapshot taken before the failure.
pub fn integrate_diag_rdae_into(config: &DiagSimConfig, tr: &mut Trajectory) -> Result<ConvergenceReport> {
    config.validate()?;
    let spectrum = &config.spectrum;
    let d = spectrum.len();
    let sigma_sq = spectrum.values();
    let start = match &config.init {
        DiagInit::Balanced(init) => DiagState::balanced(d, init),
        DiagInit::State(s) => s.clone(),
    };
    let mut y = start.pack();
    let mut t = start.t;
    let mut rk = Rk4::new(2 * d);
    let mut calm_streak = 0usize;
    let mut converged = false;

    // Records a snapshot and reports whether the flow is below tolerance there.
    let record = |y: &[f64], t: f64, tr: &mut Trajectory| -> Result<bool> {
        let state = DiagState::unpack(y, t);
        let channel = diag_channel(&state, spectrum, config.rate_bits)?;
        let (du, dv) = diag_rdae_derivatives(&state, spectrum, &channel, config.beta)?;
        let speed = du.iter().chain(&dv).fold(0.0_f64, |m, x| m.max(x.abs()));
        tr.push(diag_snapshot(&state, spectrum, &channel, config.beta)?);
        Ok(speed < config.convergence_tol)
    };
    let mut observe = |calm: bool| {
        calm_streak = if calm { calm_streak + 1 } else { 0 };
        converged |= calm_streak >= CONVERGENCE_WINDOW;
        converged
    };

    observe(record(&y, t, tr)?);
    for step in 1..=config.steps {
        rk.step(&mut y, config.dt, |s, ds| {
            let state_u = &s[..d];
            let lambda: Vec<f64> = state_u.iter().zip(sigma_sq).map(|(u, s2)| u * u * s2).collect();
            let channel = solve_or_empty(&lambda, config.rate_bits)?;
            let (du, dv) = ds.split_at_mut(d);
            rdae_rhs(state_u, &s[d..], sigma_sq, &channel, config.beta, du, dv);
            Ok(())
        })?;
        t = start.t + step as f64 * config.dt;
        check_divergence(&y, t)?;
        if step % config.record_every == 0 || step == config.steps {
            let done = observe(record(&y, t, tr)?);
            if done && config.stop_on_convergence {
                break;
            }
        }
    }

    let final_state = DiagState::unpack(&y, t);
    let channel = diag_channel(&final_state, spectrum, config.rate_bits)?;
    let report = ConvergenceReport {
        k_infinity: channel.active_count(),
        water_level_final: channel.water_level,
        loss_final: reconstruction_loss_diag(&final_state, spectrum, &channel)?,
        converged,
        final_state,
    };
    Ok(report)
}

fn diag_snapshot(state: &DiagState, spectrum: &Spectrum, channel: &RdChannel, beta: f64) -> Result<Snapshot> {
    let lambda = state.latent_variances(spectrum);
    Ok(Snapshot {
        t: state.t,
        l_rec: reconstruction_loss_diag(state, spectrum, channel)?,
        l_com: beta * channel.total_distortion(),
        d_eff: deff_or_zero(&lambda),
        active_count: channel.active_count() as f64,
        water_level: channel.water_level,
        modes: state.u.clone(),
        utilization: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::waterfill::ModeChannel;

    fn single(sigma_sq: f64) -> Spectrum {
        Spectrum::new(vec![sigma_sq]).unwrap()
    }

    fn fixed_channel(gain: f64, water_level: f64, lambda: f64) -> RdChannel {
        let distortion = if gain > 0.0 { water_level } else { lambda };
        RdChannel {
            water_level,
            per_mode: vec![ModeChannel { distortion, gain, noise_var: gain * water_level }],
            active_set: if gain > 0.0 { vec![0] } else { vec![] },
            rate_bits: 1.0,
        }
    }

    #[test]
    fn inactive_mode_at_balance_is_stationary() {
        let sp = single(0.3);
        let st = DiagState::new(vec![0.2], vec![0.2]).unwrap();
        let lambda = 0.04 * 0.3;
        let ch = fixed_channel(0.0, 1.0, lambda);
        let (du, dv) = diag_rdae_derivatives(&st, &sp, &ch, 1.0).unwrap();
        assert!(du[0].abs() < 1e-16);
        assert_eq!(dv[0], 0.0);
    }

    #[test]
    fn full_gain_matches_plain_ae() {
        let sp = single(1.0);
        let st = DiagState::new(vec![0.5], vec![0.5]).unwrap();
        let ch = fixed_channel(1.0, 0.0, 0.25);
        let (du, dv) = diag_rdae_derivatives(&st, &sp, &ch, 1.0).unwrap();
        assert_eq!((du[0], dv[0]), (0.75, 0.75));
    }

    #[test]
    fn half_gain_example() {
        let sp = single(1.0);
        let st = DiagState::new(vec![0.5], vec![0.5]).unwrap();
        let ch = fixed_channel(0.5, 0.125, 0.25);
        let (du, dv) = diag_rdae_derivatives(&st, &sp, &ch, 1.0).unwrap();
        assert!((du[0] - 0.375).abs() < 1e-15);
        assert!((dv[0] - 0.375).abs() < 1e-15);
    }

    #[test]
    fn zero_encoder_weight_uses_limit() {
        let sp = single(1.0);
        let st = DiagState::new(vec![0.0], vec![0.5]).unwrap();
        let ch = fixed_channel(0.0, 1.0, 0.0);
        let (du, _) = diag_rdae_derivatives(&st, &sp, &ch, 1.0).unwrap();
        assert_eq!(du[0], 1.0);
    }

    #[test]
    fn loss_examples() {
        let sp = Spectrum::new(vec![2.0, 1.0]).unwrap();
        let st = DiagState::new(vec![0.5, 0.7], vec![0.9, 0.3]).unwrap();
        let full = RdChannel {
            water_level: 0.0,
            per_mode: vec![ModeChannel { distortion: 0.0, gain: 1.0, noise_var: 0.0 }; 2],
            active_set: vec![0, 1],
            rate_bits: f64::INFINITY,
        };
        let plain = 2.0 * (1.0 - 0.45f64).powi(2) + (1.0 - 0.21f64).powi(2);
        assert!((reconstruction_loss_diag(&st, &sp, &full).unwrap() - plain).abs() < 1e-15);

        let zero = DiagState::new(vec![0.0, 0.0], vec![0.0, 0.0]).unwrap();
        let ch = diag_channel(&zero, &sp, 3.0).unwrap();
        assert_eq!(reconstruction_loss_diag(&zero, &sp, &ch).unwrap(), 3.0);

        let one = DiagState::new(vec![1.0], vec![1.0]).unwrap();
        let ch = fixed_channel(0.5, 0.5, 1.0);
        assert!((reconstruction_loss_diag(&one, &single(1.0), &ch).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn logistic_rate_examples() {
        assert_eq!(logistic_rate(0.0, 1.0, 0.5), 0.0);
        assert_eq!(logistic_rate(1.0, 1.0, 0.5), 0.0);
        assert_eq!(logistic_rate(0.4, 1.0, 0.0), 0.0);
        assert_eq!(logistic_rate(0.5, 1.0, 0.5), 0.5);
    }

    #[test]
    fn plateau_examples() {
        let flat = Spectrum::new(vec![1.0; 8]).unwrap();
        let r = 5.0;
        assert!((plateau_loss(&flat, 8, r).unwrap() - 8.0 * 2f64.powf(-2.0 * r / 8.0)).abs() < 1e-14);
        let two = Spectrum::new(vec![1.0, 0.3, 0.2]).unwrap();
        assert!((plateau_loss(&two, 1, 2.0).unwrap() - (0.0625 + 0.5)).abs() < 1e-15);
        assert!(plateau_loss(&two, 0, 2.0).is_err());
        assert!(plateau_loss(&two, 4, 2.0).is_err());
    }

    #[test]
    fn config_validation() {
        let sp = single(1.0);
        let init = DiagInit::Balanced(InitConfig::from_scale(0.01).unwrap());
        let mut c = DiagSimConfig::new(sp.clone(), 1.0, 1.0, init, 10);
        c.dt = 0.0;
        assert!(integrate_diag_rdae(&c).is_err());
        c.dt = 0.01;
        c.rate_bits = -1.0;
        assert!(integrate_diag_rdae(&c).is_err());
        c.rate_bits = 1.0;
        c.init = DiagInit::State(DiagState::new(vec![0.1, 0.1], vec![0.1, 0.1]).unwrap());
        assert!(integrate_diag_rdae(&c).is_err());
    }

    #[test]
    fn stops_early_on_convergence() {
        let sp = Spectrum::new(vec![1.0, 0.5]).unwrap();
        let init = DiagInit::Balanced(InitConfig::from_scale(0.01).unwrap());
        let mut c = DiagSimConfig::new(sp, 2.0, 1.0, init, 200_000);
        c.dt = 0.01;
        c.record_every = 10;
        c.stop_on_convergence = true;
        let (tr, rep) = integrate_diag_rdae(&c).unwrap();
        assert!(rep.converged);
        assert!(tr.last().unwrap().t < 2000.0);
    }
}
