//! Dense RD-AE flow with full `d × d` encoder and decoder.
//!
//! ```text
//! Ẇ1 = -2 (W2ᵀ W2 M W1 - W2ᵀ) Σ - 2β (W1 - M W1) Σ
//! Ẇ2 =  2 Σ W1ᵀ M - 2 W2 Γ_q
//! ```
//!
//! `M = U diag(c) Uᵀ` and `Γ_q = U diag(c λ) Uᵀ` come from water-filling the
//! eigenvalues of the latent covariance `Σ_z = W1 Σ W1ᵀ = U diag(λ) Uᵀ`,
//! recomputed at every Runge–Kutta stage. With the channel forced to the
//! identity (`M = I`, `Γ_q = Σ_z`) the commitment term vanishes and the flow is
//! plain-AE gradient descent.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::ae_flow::{check_divergence, deff_or_zero, DiagState};
use crate::error::{check_len, invalid, Error, Result};
use crate::ode::Rk4;
use crate::seed::run_rng;
use crate::spectral::{clamp_eigenvalues, Spectrum};
use crate::trajectory::{median_trajectory, Snapshot, Trajectory, TrajectoryKind};
use crate::waterfill::{solve_or_empty, RdChannel};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseState {
    pub w1: DMatrix<f64>,
    pub w2: DMatrix<f64>,
    pub t: f64,
}

impl DenseState {
    pub fn new(w1: DMatrix<f64>, w2: DMatrix<f64>) -> Result<Self> {
        let d = w1.nrows();
        check_len(d, w1.ncols())?;
        check_len(d, w2.nrows())?;
        check_len(d, w2.ncols())?;
        if w1.iter().chain(w2.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("dense state".into()));
        }
        Ok(DenseState { w1, w2, t: 0.0 })
    }

    /// Embeds a diagonal state: `W1 = diag(u)`, `W2 = diag(v)`.
    pub fn from_diag(state: &DiagState) -> Self {
        DenseState {
            w1: DMatrix::from_diagonal(&DVector::from_column_slice(&state.u)),
            w2: DMatrix::from_diagonal(&DVector::from_column_slice(&state.v)),
            t: state.t,
        }
    }

    /// I.i.d. `N(0, s²/(4d))` entries, `W1` drawn before `W2`, both row-major.
    pub fn gaussian<R: Rng + ?Sized>(d: usize, init_scale: f64, rng: &mut R) -> Self {
        let std = init_scale / (2.0 * (d as f64).sqrt());
        let draw = |rng: &mut R| {
            DMatrix::from_row_iterator(d, d, (0..d * d).map(|_| std * rng.sample::<f64, _>(StandardNormal)))
        };
        let w1 = draw(rng);
        let w2 = draw(rng);
        DenseState { w1, w2, t: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.w1.nrows()
    }

    fn pack(&self) -> Vec<f64> {
        let mut y = Vec::with_capacity(2 * self.w1.len());
        y.extend_from_slice(self.w1.as_slice());
        y.extend_from_slice(self.w2.as_slice());
        y
    }

    fn unpack(y: &[f64], d: usize, t: f64) -> Self {
        let (a, b) = y.split_at(d * d);
        DenseState { w1: DMatrix::from_column_slice(d, d, a), w2: DMatrix::from_column_slice(d, d, b), t }
    }
}

/// Channel matrices for the current latent covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseChannel {
    /// Orthonormal eigenvectors of `Σ_z` as columns, ordered like `eigvals`.
    pub eigvecs: DMatrix<f64>,
    /// Eigenvalues of `Σ_z`, descending.
    pub eigvals: Vec<f64>,
    /// Water-filling solution for `eigvals`, indexed in the same order.
    pub rd: RdChannel,
    /// Conditional-mean map `U diag(c) Uᵀ`.
    pub m: DMatrix<f64>,
    /// Code second moment `U diag(c λ) Uᵀ`.
    pub gamma_q: DMatrix<f64>,
    pub water_level: f64,
    pub active_count: usize,
}

/// Whether the bottleneck is the rate-limited channel or the identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelMode {
    RateDistortion,
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseSimConfig {
    pub spectrum: Spectrum,
    pub rate_bits: f64,
    pub beta: f64,
    pub init_scale: f64,
    pub seed: u64,
    pub dt: f64,
    pub steps: usize,
    pub record_every: usize,
    pub num_seeds: usize,
    pub mode: ChannelMode,
}

impl DenseSimConfig {
    pub fn dim(&self) -> usize {
        self.spectrum.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate_bits >= 0.0) || self.rate_bits.is_nan() {
            return Err(invalid(format!("rate must be nonnegative, got {}", self.rate_bits)));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(invalid(format!("beta must be nonnegative, got {}", self.beta)));
        }
        if !(self.init_scale > 0.0) || !self.init_scale.is_finite() {
            return Err(invalid(format!("init scale must be positive, got {}", self.init_scale)));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if self.record_every == 0 {
            return Err(invalid("record_every must be at least 1"));
        }
        if self.num_seeds == 0 {
            return Err(invalid("need at least one seed"));
        }
        Ok(())
    }
}

/// `Σ_z = W1 diag(σ²) W1ᵀ`.
pub fn latent_covariance(w1: &DMatrix<f64>, spectrum: &Spectrum) -> Result<DMatrix<f64>> {
    check_len(spectrum.len(), w1.ncols())?;
    let scaled = scale_columns(w1, spectrum.values());
    let cov = &scaled * w1.transpose();
    let t = cov.transpose();
    Ok((cov + t) * 0.5)
}

fn scale_columns(a: &DMatrix<f64>, s: &[f64]) -> DMatrix<f64> {
    let mut out = a.clone();
    for (mut col, &x) in out.column_iter_mut().zip(s) {
        col *= x;
    }
    out
}

fn scale_rows(a: &DMatrix<f64>, s: &[f64]) -> DMatrix<f64> {
    let mut out = a.clone();
    for (mut row, &x) in out.row_iter_mut().zip(s) {
        row *= x;
    }
    out
}

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted
/// descending (stable in the solver's order), tiny values clamped to zero and
/// each eigenvector's largest-magnitude component made positive.
pub fn sorted_eigen(sym: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    if sym.iter().any(|x| !x.is_finite()) {
        return Err(Error::Eigen("non-finite matrix entry".into()));
    }
    let eig = SymmetricEigen::try_new(sym.clone(), f64::EPSILON, 0)
        .ok_or_else(|| Error::Eigen("symmetric eigensolver did not converge".into()))?;
    let raw = eig.eigenvalues.as_slice();
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| raw[b].total_cmp(&raw[a]));
    let clamped = clamp_eigenvalues(raw);
    let values = order.iter().map(|&i| clamped[i]).collect();
    let mut vecs = eig.eigenvectors.select_columns(&order);
    for mut col in vecs.column_iter_mut() {
        let pivot = col.iter().cloned().fold(0.0_f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if pivot < 0.0 {
            col.neg_mut();
        }
    }
    Ok((values, vecs))
}

/// Water-fills the latent covariance of `w1` and assembles `M` and `Γ_q`.
pub fn dense_channel(w1: &DMatrix<f64>, spectrum: &Spectrum, rate_bits: f64) -> Result<DenseChannel> {
    let cov = latent_covariance(w1, spectrum)?;
    let (eigvals, eigvecs) = sorted_eigen(&cov)?;
    let rd = solve_or_empty(&eigvals, rate_bits)?;
    let gains: Vec<f64> = rd.per_mode.iter().map(|m| m.gain).collect();
    let weighted: Vec<f64> = gains.iter().zip(&eigvals).map(|(c, l)| c * l).collect();
    let m = conjugate_diag(&eigvecs, &gains);
    let gamma_q = conjugate_diag(&eigvecs, &weighted);
    Ok(DenseChannel {
        water_level: rd.water_level,
        active_count: rd.active_count(),
        eigvecs,
        eigvals,
        rd,
        m,
        gamma_q,
    })
}

/// `U diag(w) Uᵀ`, symmetrized.
fn conjugate_diag(u: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let a = scale_columns(u, w) * u.transpose();
    let t = a.transpose();
    (a + t) * 0.5
}

/// Right-hand side of the dense RD-AE flow for a given channel.
pub fn dense_rdae_derivatives(
    state: &DenseState,
    spectrum: &Spectrum,
    channel: &DenseChannel,
    beta: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_shapes(state, spectrum)?;
    check_len(spectrum.len(), channel.m.nrows())?;
    Ok(rhs(&state.w1, &state.w2, spectrum.values(), &channel.m, &channel.gamma_q, beta))
}

fn rhs(
    w1: &DMatrix<f64>,
    w2: &DMatrix<f64>,
    sigma_sq: &[f64],
    m: &DMatrix<f64>,
    gamma_q: &DMatrix<f64>,
    beta: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let mw1 = m * w1;
    let w2t = w2.transpose();
    let fit = &w2t * w2 * &mw1 - &w2t;
    let inner = fit * -2.0 - (w1 - &mw1) * (2.0 * beta);
    let w1_dot = scale_columns(&inner, sigma_sq);
    let w2_dot = scale_rows(&w1.transpose(), sigma_sq) * m * 2.0 - w2 * gamma_q * 2.0;
    (w1_dot, w2_dot)
}

/// Plain-AE right-hand side: `M = I`, `Γ_q = Σ_z`.
fn plain_rhs(w1: &DMatrix<f64>, w2: &DMatrix<f64>, sigma_sq: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let w2t = w2.transpose();
    let fit = &w2t * w2 * w1 - &w2t;
    let w1_dot = scale_columns(&fit, sigma_sq) * -2.0;
    let sw1t = scale_rows(&w1.transpose(), sigma_sq);
    let sigma_z = w1 * &sw1t;
    let w2_dot = (sw1t - w2 * sigma_z) * 2.0;
    (w1_dot, w2_dot)
}

/// The identity channel for `w1`: `M = I`, `Γ_q = Σ_z`, every mode passed with
/// unit gain and water level 0.
pub fn identity_channel(w1: &DMatrix<f64>, spectrum: &Spectrum) -> Result<DenseChannel> {
    let cov = latent_covariance(w1, spectrum)?;
    let (eigvals, eigvecs) = sorted_eigen(&cov)?;
    let d = eigvals.len();
    let rd = RdChannel {
        water_level: 0.0,
        per_mode: vec![crate::waterfill::ModeChannel { distortion: 0.0, gain: 1.0, noise_var: 0.0 }; d],
        active_set: (0..d).collect(),
        rate_bits: f64::INFINITY,
    };
    Ok(DenseChannel {
        water_level: 0.0,
        active_count: d,
        m: DMatrix::identity(d, d),
        gamma_q: cov,
        eigvecs,
        eigvals,
        rd,
    })
}

/// `tr Σ - 2 tr(W2 M W1 Σ) + tr(W2ᵀ W2 Γ_q)`, exact from the channel moments.
pub fn dense_reconstruction_loss(state: &DenseState, spectrum: &Spectrum, channel: &DenseChannel) -> Result<f64> {
    check_shapes(state, spectrum)?;
    let cross = &state.w2 * &channel.m * scale_columns(&state.w1, spectrum.values());
    let w2tw2 = state.w2.transpose() * &state.w2;
    Ok(spectrum.total() - 2.0 * cross.trace() + w2tw2.component_mul(&channel.gamma_q).sum())
}

fn check_shapes(state: &DenseState, spectrum: &Spectrum) -> Result<()> {
    let d = spectrum.len();
    for m in [&state.w1, &state.w2] {
        check_len(d, m.nrows())?;
        check_len(d, m.ncols())?;
    }
    Ok(())
}

/// `λ̇ = uᵀ (Ẇ1 Σ W1ᵀ + W1 Σ Ẇ1ᵀ) u` for an eigenvector `u` of `Σ_z`.
///
/// `u` is normalized internally; a zero vector is rejected.
pub fn dense_eigenvalue_rate(
    w1: &DMatrix<f64>,
    w1_dot: &DMatrix<f64>,
    spectrum: &Spectrum,
    eigvec: &[f64],
) -> Result<f64> {
    let d = spectrum.len();
    check_len(d, eigvec.len())?;
    check_len(d, w1.nrows())?;
    check_len(d, w1_dot.nrows())?;
    let u = DVector::from_column_slice(eigvec);
    let norm = u.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(invalid("eigenvector must be nonzero and finite"));
    }
    let u = u / norm;
    // Both terms of the symmetric sum have the same quadratic form.
    let a = w1.transpose() * &u;
    let b = w1_dot.transpose() * &u;
    Ok(2.0 * (0..d).map(|k| b[k] * spectrum.values()[k] * a[k]).sum::<f64>())
}

/// `λ̇_j` for every eigenvector of the channel, in the channel's order.
pub fn dense_eigenvalue_rates(
    w1: &DMatrix<f64>,
    w1_dot: &DMatrix<f64>,
    spectrum: &Spectrum,
    channel: &DenseChannel,
) -> Result<Vec<f64>> {
    channel
        .eigvecs
        .column_iter()
        .map(|col| dense_eigenvalue_rate(w1, w1_dot, spectrum, col.as_slice()))
        .collect()
}

/// `Ḋ*/D* = (1/k) Σ_{j∈A} λ̇_j/λ_j`.
pub fn dense_water_level_log_derivative(channel: &DenseChannel, lambda_dot: &[f64]) -> Result<f64> {
    check_len(channel.eigvals.len(), lambda_dot.len())?;
    let active = &channel.rd.active_set;
    if active.is_empty() {
        return Err(Error::EmptyActiveSet);
    }
    let sum: f64 = active.iter().map(|&j| lambda_dot[j] / channel.eigvals[j]).sum();
    Ok(sum / active.len() as f64)
}

/// One seed's run. On failure the trajectory holds every snapshot recorded
/// before the abort.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub seed_index: usize,
    pub trajectory: Trajectory,
    pub failure: Option<Error>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseOutcome {
    pub runs: Vec<SeedRun>,
    /// Pointwise median over the seeds that did not abort; `None` if all did.
    pub median: Option<Trajectory>,
    pub aborted: usize,
}

impl DenseOutcome {
    pub fn completed(&self) -> impl Iterator<Item = &SeedRun> {
        self.runs.iter().filter(|r| r.failure.is_none())
    }
}

/// Runs every seed of `config` (in parallel on the current rayon pool) and
/// aggregates the pointwise median over the seeds that completed.
pub fn integrate_dense_rdae(config: &DenseSimConfig) -> Result<DenseOutcome> {
    config.validate()?;
    let runs: Vec<SeedRun> = (0..config.num_seeds)
        .into_par_iter()
        .map(|i| {
            let mut rng = run_rng(config.seed, i as u64);
            let start = DenseState::gaussian(config.dim(), config.init_scale, &mut rng);
            let mut run = integrate_dense_from(config, start);
            run.seed_index = i;
            run
        })
        .collect();
    let ok: Vec<&Trajectory> = runs.iter().filter(|r| r.failure.is_none()).map(|r| &r.trajectory).collect();
    let aborted = runs.len() - ok.len();
    let median = if ok.is_empty() { None } else { Some(median_trajectory(&ok)?) };
    Ok(DenseOutcome { runs, median, aborted })
}

/// Integrates one trajectory from an explicit start. Configuration errors are
/// reported through `failure` like numerical ones.
pub fn integrate_dense_from(config: &DenseSimConfig, start: DenseState) -> SeedRun {
    let mut tr = Trajectory::new(TrajectoryKind::Dense);
    let failure = config
        .validate()
        .and_then(|_| check_shapes(&start, &config.spectrum))
        .and_then(|_| run_dense(config, &start, &mut tr))
        .err();
    SeedRun { seed_index: 0, trajectory: tr, failure }
}

fn run_dense(config: &DenseSimConfig, start: &DenseState, tr: &mut Trajectory) -> Result<DenseState> {
    let spectrum = &config.spectrum;
    let sigma_sq = spectrum.values();
    let d = spectrum.len();
    let mut y = start.pack();
    let mut t = start.t;
    let mut rk = Rk4::new(y.len());
    let record = |state: &DenseState, tr: &mut Trajectory| -> Result<()> {
        tr.push(dense_snapshot(state, config)?);
        Ok(())
    };
    record(start, tr)?;
    for step in 1..=config.steps {
        rk.step(&mut y, config.dt, |s, ds| {
            let w1 = DMatrix::from_column_slice(d, d, &s[..d * d]);
            let w2 = DMatrix::from_column_slice(d, d, &s[d * d..]);
            let (a, b) = match config.mode {
                ChannelMode::Identity => plain_rhs(&w1, &w2, sigma_sq),
                ChannelMode::RateDistortion => {
                    let ch = dense_channel(&w1, spectrum, config.rate_bits)?;
                    rhs(&w1, &w2, sigma_sq, &ch.m, &ch.gamma_q, config.beta)
                }
            };
            ds[..d * d].copy_from_slice(a.as_slice());
            ds[d * d..].copy_from_slice(b.as_slice());
            Ok(())
        })?;
        t = start.t + step as f64 * config.dt;
        check_divergence(&y, t)?;
        if step % config.record_every == 0 || step == config.steps {
            record(&DenseState::unpack(&y, d, t), tr)?;
        }
    }
    Ok(DenseState::unpack(&y, d, t))
}

fn channel_for(state: &DenseState, config: &DenseSimConfig) -> Result<DenseChannel> {
    match config.mode {
        ChannelMode::Identity => identity_channel(&state.w1, &config.spectrum),
        ChannelMode::RateDistortion => dense_channel(&state.w1, &config.spectrum, config.rate_bits),
    }
}

fn dense_snapshot(state: &DenseState, config: &DenseSimConfig) -> Result<Snapshot> {
    let channel = channel_for(state, config)?;
    let l_com = match config.mode {
        ChannelMode::Identity => 0.0,
        ChannelMode::RateDistortion => config.beta * channel.rd.total_distortion(),
    };
    Ok(Snapshot {
        t: state.t,
        l_rec: dense_reconstruction_loss(state, &config.spectrum, &channel)?,
        l_com,
        d_eff: deff_or_zero(&channel.eigvals),
        active_count: channel.active_count as f64,
        water_level: channel.water_level,
        modes: channel.eigvals,
        utilization: None,
    })
}

/// Integrates one trajectory and returns the final state as well.
pub fn integrate_dense_state(config: &DenseSimConfig, start: DenseState) -> Result<(Trajectory, DenseState)> {
    config.validate()?;
    check_shapes(&start, &config.spectrum)?;
    let mut tr = Trajectory::new(TrajectoryKind::Dense);
    let end = run_dense(config, &start, &mut tr)?;
    Ok((tr, end))
}
