//! Gradient flow of the plain two-layer linear autoencoder on the diagonal
//! manifold `W1 = diag(u)`, `W2 = diag(v)`.
//!
//! Each mode evolves independently:
//!
//! ```text
//! u̇_j = 2σ_j² v_j (1 - u_j v_j),   v̇_j = 2σ_j² u_j (1 - u_j v_j)
//! ```
//!
//! and from the balanced start `u_j = v_j = √s` the activation `r_j = u_j v_j`
//! follows the logistic `r_j(t) = (1 + (1-s)/s · e^{-4σ_j² t})⁻¹`.

use crate::error::{check_len, invalid, Error, Result};
use crate::ode::Rk4;
use crate::spectral::{effective_dimension_unsorted, Spectrum, DEFAULT_DEFF_THRESHOLD};
use crate::trajectory::{Snapshot, Trajectory, TrajectoryKind};

/// Any `|u_j|` or `|v_j|` above this aborts an integration.
pub const DIVERGENCE_BOUND: f64 = 1e6;

/// Default number of steps between recorded snapshots.
pub const DEFAULT_RECORD_EVERY: usize = 100;

/// Diagonal encoder/decoder weights and the simulation clock.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagState {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub t: f64,
}

impl DiagState {
    pub fn new(u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        check_len(u.len(), v.len())?;
        if u.iter().chain(&v).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("diagonal state".into()));
        }
        Ok(DiagState { u, v, t: 0.0 })
    }

    /// `u_j = v_j = √s` for every mode.
    pub fn balanced(d: usize, init: &InitConfig) -> Self {
        let a = init.epsilon();
        DiagState { u: vec![a; d], v: vec![a; d], t: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.u.len()
    }

    /// Mode activations `r_j = u_j v_j`.
    pub fn activations(&self) -> Vec<f64> {
        self.u.iter().zip(&self.v).map(|(u, v)| u * v).collect()
    }

    /// Latent variances `λ_j = u_j² σ_j²`.
    pub fn latent_variances(&self, spectrum: &Spectrum) -> Vec<f64> {
        self.u.iter().zip(spectrum.values()).map(|(u, s)| u * u * s).collect()
    }

    pub(crate) fn pack(&self) -> Vec<f64> {
        let mut y = self.u.clone();
        y.extend_from_slice(&self.v);
        y
    }

    pub(crate) fn unpack(y: &[f64], t: f64) -> Self {
        let d = y.len() / 2;
        DiagState { u: y[..d].to_vec(), v: y[d..].to_vec(), t }
    }
}

/// Balanced small initialization: `u_j(0) = v_j(0) = √s`, i.e. `ε² = s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitConfig {
    scale: f64,
}

impl InitConfig {
    /// Initial activation `s ∈ (0, 1)`.
    pub fn from_scale(scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale < 1.0) {
            return Err(invalid(format!("init scale must lie in (0, 1), got {scale}")));
        }
        Ok(InitConfig { scale })
    }

    /// Initial weight `ε`, with `ε² ∈ (0, 1)`.
    pub fn from_epsilon(epsilon: f64) -> Result<Self> {
        InitConfig::from_scale(epsilon * epsilon)
            .map_err(|_| invalid(format!("epsilon² must lie in (0, 1), got epsilon = {epsilon}")))
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn epsilon(&self) -> f64 {
        self.scale.sqrt()
    }
}

/// Right-hand side of the plain-AE flow.
pub fn ae_derivatives(state: &DiagState, spectrum: &Spectrum) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len(spectrum.len(), state.u.len())?;
    check_len(spectrum.len(), state.v.len())?;
    let mut du = vec![0.0; state.dim()];
    let mut dv = vec![0.0; state.dim()];
    ae_rhs(&state.u, &state.v, spectrum.values(), &mut du, &mut dv);
    Ok((du, dv))
}

fn ae_rhs(u: &[f64], v: &[f64], sigma_sq: &[f64], du: &mut [f64], dv: &mut [f64]) {
    for j in 0..u.len() {
        let residual = 1.0 - u[j] * v[j];
        du[j] = 2.0 * sigma_sq[j] * v[j] * residual;
        dv[j] = 2.0 * sigma_sq[j] * u[j] * residual;
    }
}

/// Closed-form activation of a balanced mode with variance `sigma_sq` at time `t`.
pub fn closed_form_activation(sigma_sq: f64, s: f64, t: f64) -> Result<f64> {
    if !(s > 0.0 && s < 1.0) {
        return Err(invalid(format!("init scale must lie in (0, 1), got {s}")));
    }
    if !(t >= 0.0) {
        return Err(invalid(format!("time must be nonnegative, got {t}")));
    }
    Ok(1.0 / (1.0 + (1.0 - s) / s * (-4.0 * sigma_sq * t).exp()))
}

/// Plain-AE reconstruction loss `Σ σ_j² (1 - u_j v_j)²`.
pub fn ae_loss(state: &DiagState, spectrum: &Spectrum) -> f64 {
    spectrum
        .values()
        .iter()
        .zip(state.activations())
        .map(|(s, r)| s * (1.0 - r) * (1.0 - r))
        .sum()
}

/// Step size that resolves the fastest mode: `1e-3 / σ_1²`.
pub fn default_dt(spectrum: &Spectrum) -> f64 {
    1e-3 / spectrum.values()[0].max(f64::MIN_POSITIVE)
}

/// Integrates the plain-AE flow from balanced initialization.
pub fn integrate_ae(
    spectrum: &Spectrum,
    init: &InitConfig,
    dt: f64,
    steps: usize,
    record_every: usize,
) -> Result<Trajectory> {
    let start = DiagState::balanced(spectrum.len(), init);
    integrate_ae_from(start, spectrum, dt, steps, record_every).map(|(tr, _)| tr)
}

/// Integrates the plain-AE flow from an arbitrary diagonal state, returning
/// the trajectory and the final state.
pub fn integrate_ae_from(
    start: DiagState,
    spectrum: &Spectrum,
    dt: f64,
    steps: usize,
    record_every: usize,
) -> Result<(Trajectory, DiagState)> {
    let mut tr = Trajectory::new(TrajectoryKind::Ae);
    let end = integrate_ae_into(start, spectrum, dt, steps, record_every, &mut tr)?;
    Ok((tr, end))
}

/// Like [`integrate_ae_from`], recording into `tr`; on error `tr` keeps every
/// snapshot taken before the failure.
pub fn integrate_ae_into(
    start: DiagState,
    spectrum: &Spectrum,
    dt: f64,
    steps: usize,
    record_every: usize,
    tr: &mut Trajectory,
) -> Result<DiagState> {
    check_len(spectrum.len(), start.dim())?;
    check_len(start.u.len(), start.v.len())?;
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(invalid(format!("dt must be positive, got {dt}")));
    }
    if record_every == 0 {
        return Err(invalid("record_every must be at least 1"));
    }
    let d = spectrum.len();
    let sigma_sq = spectrum.values();
    let mut y = start.pack();
    let mut t = start.t;
    let mut rk = Rk4::new(2 * d);
    let record = |y: &[f64], t: f64, tr: &mut Trajectory| {
        let state = DiagState::unpack(y, t);
        tr.push(ae_snapshot(&state, spectrum));
    };
    record(&y, t, tr);
    for step in 1..=steps {
        rk.step(&mut y, dt, |s, ds| {
            let (du, dv) = ds.split_at_mut(d);
            ae_rhs(&s[..d], &s[d..], sigma_sq, du, dv);
            Ok(())
        })?;
        t = start.t + step as f64 * dt;
        check_divergence(&y, t)?;
        if step % record_every == 0 || step == steps {
            record(&y, t, tr);
        }
    }
    Ok(DiagState::unpack(&y, t))
}

fn ae_snapshot(state: &DiagState, spectrum: &Spectrum) -> Snapshot {
    let lambda = state.latent_variances(spectrum);
    Snapshot {
        t: state.t,
        l_rec: ae_loss(state, spectrum),
        l_com: 0.0,
        d_eff: deff_or_zero(&lambda),
        active_count: spectrum.len() as f64,
        water_level: 0.0,
        modes: state.activations(),
        utilization: None,
    }
}

/// Effective dimension of unsorted variances, reporting 0 for an all-zero set.
pub(crate) fn deff_or_zero(values: &[f64]) -> f64 {
    effective_dimension_unsorted(values, DEFAULT_DEFF_THRESHOLD).map_or(0.0, |m| m as f64)
}

pub(crate) fn check_divergence(y: &[f64], t: f64) -> Result<()> {
    if let Some((i, v)) = y.iter().enumerate().find(|(_, v)| !v.is_finite() || v.abs() > DIVERGENCE_BOUND) {
        return Err(Error::Divergence { t, detail: format!("state component {i} reached {v}") });
    }
    Ok(())
}

/// Analytic state after plain-AE warm-up of length `t_wu` from `u = v = ε`:
/// `u_j = v_j = √g_j(t_wu)`.
pub fn warmup_checkpoint(spectrum: &Spectrum, epsilon: f64, t_wu: f64) -> Result<DiagState> {
    let init = InitConfig::from_epsilon(epsilon)?;
    if !(t_wu >= 0.0) {
        return Err(invalid(format!("warm-up duration must be nonnegative, got {t_wu}")));
    }
    let mut u = Vec::with_capacity(spectrum.len());
    for &s in spectrum.values() {
        let g = if t_wu.is_infinite() { 1.0 } else { closed_form_activation(s, init.scale(), t_wu)? };
        u.push(g.sqrt());
    }
    Ok(DiagState { v: u.clone(), u, t: t_wu })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(s: f64) -> Spectrum {
        Spectrum::new(vec![s]).unwrap()
    }

    #[test]
    fn derivative_examples() {
        let sp = one(1.0);
        let fixed = DiagState::new(vec![1.0], vec![1.0]).unwrap();
        assert_eq!(ae_derivatives(&fixed, &sp).unwrap(), (vec![0.0], vec![0.0]));
        let saddle = DiagState::new(vec![0.0], vec![0.0]).unwrap();
        assert_eq!(ae_derivatives(&saddle, &sp).unwrap(), (vec![0.0], vec![0.0]));
        let half = DiagState::new(vec![0.5], vec![0.5]).unwrap();
        assert_eq!(ae_derivatives(&half, &sp).unwrap(), (vec![0.75], vec![0.75]));
        let two = Spectrum::new(vec![1.0, 0.5]).unwrap();
        assert!(matches!(ae_derivatives(&half, &two), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn closed_form_examples() {
        assert!((closed_form_activation(1.0, 0.01, 0.0).unwrap() - 0.01).abs() < 1e-15);
        let s: f64 = 0.01;
        let t_late = 3.0 * ((1.0 - s) / s).ln() / 4.0;
        assert!(closed_form_activation(1.0, s, t_late).unwrap() > 0.999);
        let t_half = 99f64.ln() / 4.0;
        assert!((t_half - 1.148_779_96).abs() < 1e-6);
        assert!((closed_form_activation(1.0, s, t_half).unwrap() - 0.5).abs() < 1e-14);
        assert!(closed_form_activation(1.0, 0.0, 1.0).is_err());
        assert!(closed_form_activation(1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn init_config_validation() {
        assert!(InitConfig::from_scale(0.0).is_err());
        assert!(InitConfig::from_scale(1.0).is_err());
        assert!(InitConfig::from_epsilon(1.5).is_err());
        let c = InitConfig::from_epsilon(0.1).unwrap();
        assert!((c.scale() - 0.01).abs() < 1e-17);
    }

    #[test]
    fn warmup_checkpoint_examples() {
        let sp = Spectrum::new(vec![1.0, 0.5]).unwrap();
        let s0 = warmup_checkpoint(&sp, 0.1, 0.0).unwrap();
        assert!(s0.u.iter().chain(&s0.v).all(|&x| (x - 0.1).abs() < 1e-15));
        let sinf = warmup_checkpoint(&sp, 0.1, f64::INFINITY).unwrap();
        assert_eq!(sinf.u, vec![1.0, 1.0]);
        let slate = warmup_checkpoint(&sp, 0.1, 1e4).unwrap();
        assert!(slate.u.iter().all(|&x| (x - 1.0).abs() < 1e-12));
        let mid = warmup_checkpoint(&one(1.0), 0.1, 99f64.ln() / 4.0).unwrap();
        assert!((mid.u[0] - 0.5f64.sqrt()).abs() < 1e-12);
        assert!((mid.u[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-5);
        assert!(warmup_checkpoint(&sp, 1.0, 1.0).is_err());
        assert!(warmup_checkpoint(&sp, 0.1, -1.0).is_err());
    }

    #[test]
    fn single_mode_matches_logistic() {
        let sp = one(1.0);
        let init = InitConfig::from_scale(0.01).unwrap();
        let tr = integrate_ae(&sp, &init, 1e-3, 5000, 100).unwrap();
        for s in &tr.snapshots {
            let exact = closed_form_activation(1.0, 0.01, s.t).unwrap();
            assert!((s.modes[0] - exact).abs() < 1e-6, "t = {}", s.t);
        }
    }

    #[test]
    fn flat_spectrum_keeps_full_dimension() {
        let sp = Spectrum::new(vec![1.0; 5]).unwrap();
        let init = InitConfig::from_scale(0.01).unwrap();
        let tr = integrate_ae(&sp, &init, 1e-2, 500, 50).unwrap();
        assert!(tr.snapshots.iter().all(|s| s.d_eff == 5.0));
    }

    #[test]
    fn divergence_is_reported() {
        // Far from the fixed point the cubic term overshoots on the first step.
        let sp = Spectrum::new(vec![1.0]).unwrap();
        let start = DiagState::new(vec![2e5], vec![2e5]).unwrap();
        let err = integrate_ae_from(start, &sp, 1e-3, 10, 1).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }

    #[test]
    fn records_final_step() {
        let sp = one(1.0);
        let init = InitConfig::from_scale(0.5).unwrap();
        let tr = integrate_ae(&sp, &init, 0.1, 7, 5).unwrap();
        let t: Vec<f64> = tr.times();
        assert_eq!(t.len(), 3);
        assert!((t[2] - 0.7).abs() < 1e-12);
    }
}
