//! Desk-scale hard vector-quantized linear autoencoder.
//!
//! Training is minibatch SGD on `‖x − W2 z_q‖² + β ‖z − sg(z_q)‖²` with
//! `z = W1 x` and `z_q` the nearest code. The decoder receives its exact
//! gradient. The encoder receives the straight-through reconstruction gradient
//! (as if `∂z_q/∂z = I`) plus the commitment gradient with `z_q` held fixed.
//! Codes move by an exponential moving average of their assigned latents, not
//! by SGD. Codes whose usage average decays below a threshold are respawned
//! at random encoder outputs.
//!
//! A run warms up as a plain autoencoder (quantizer = identity) for
//! `warmup_steps`, seeds the codebook by k-means on fresh latents, then trains
//! with the quantizer on.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::ae_flow::{deff_or_zero, DIVERGENCE_BOUND};
use crate::error::{check_len, invalid, Error, Result};
use crate::rdae_dense::DenseState;
use crate::seed::run_rng;
use crate::spectral::{eigen_spectrum, Spectrum};
use crate::trajectory::{fmt_float, Snapshot, Trajectory, TrajectoryKind};
use crate::waterfill::solve_or_empty;

pub const DEFAULT_EMA_DECAY: f64 = 0.99;

/// Floor on the EMA count when dividing mass by count.
pub const EMA_COUNT_FLOOR: f64 = 1e-8;

/// Upper limit on the k-means sample drawn at the phase boundary.
pub const KMEANS_SAMPLE_CAP: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    /// `K × d`, one code per row.
    pub codes: DMatrix<f64>,
    /// EMA of per-step assignment counts (`N_k`).
    pub usage_ema: Vec<f64>,
    /// EMA of summed assigned latents (`m_k`); `codes[k] = m_k / N_k`.
    pub mass: DMatrix<f64>,
    pub ema_decay: f64,
    pub respawn_threshold: f64,
}

impl Codebook {
    /// Codes with every usage set to `initial_usage` and consistent masses.
    pub fn from_codes(codes: DMatrix<f64>, initial_usage: f64, ema_decay: f64, respawn_threshold: f64) -> Result<Self> {
        if codes.nrows() == 0 || codes.ncols() == 0 {
            return Err(invalid("codebook must have at least one code and one dimension"));
        }
        if !(ema_decay > 0.0 && ema_decay < 1.0) {
            return Err(invalid(format!("EMA decay must lie in (0, 1), got {ema_decay}")));
        }
        if !(respawn_threshold >= 0.0) || !(initial_usage >= 0.0) {
            return Err(invalid("usage and respawn threshold must be nonnegative"));
        }
        if codes.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("codebook entry".into()));
        }
        let mass = &codes * initial_usage;
        Ok(Codebook { usage_ema: vec![initial_usage; codes.nrows()], mass, codes, ema_decay, respawn_threshold })
    }

    pub fn len(&self) -> usize {
        self.codes.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.codes.ncols()
    }

    /// Resets every usage to `usage` and rescales masses to match.
    pub fn reset_usage(&mut self, usage: f64) {
        self.usage_ema.iter_mut().for_each(|u| *u = usage);
        self.mass = &self.codes * usage;
    }

    /// Applies one EMA step for `latents` (rows) assigned to `assignment`.
    /// Codes that received no latents keep their position exactly.
    pub fn ema_update(&mut self, latents: &DMatrix<f64>, assignment: &[usize]) -> Result<()> {
        check_len(latents.nrows(), assignment.len())?;
        check_len(self.dim(), latents.ncols())?;
        let k = self.len();
        let mut counts = vec![0usize; k];
        let mut sums = DMatrix::zeros(k, self.dim());
        for (i, &a) in assignment.iter().enumerate() {
            if a >= k {
                return Err(invalid(format!("assignment {a} out of range for {k} codes")));
            }
            counts[a] += 1;
            let mut row = sums.row_mut(a);
            row += latents.row(i);
        }
        let g = self.ema_decay;
        for c in 0..k {
            self.usage_ema[c] = g * self.usage_ema[c] + counts[c] as f64;
            let updated = self.mass.row(c) * g + sums.row(c);
            self.mass.set_row(c, &updated);
            if counts[c] > 0 {
                let code = self.mass.row(c) / self.usage_ema[c].max(EMA_COUNT_FLOOR);
                self.codes.set_row(c, &code);
            }
        }
        Ok(())
    }

    /// CSV export: a `# dims=<d> samples=<K>` line, then one code per row.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# dims={} samples={}\n", self.dim(), self.len());
        for row in self.codes.row_iter() {
            let fields: Vec<String> = row.iter().map(|&v| fmt_float(v)).collect();
            let _ = writeln!(out, "{}", fields.join(","));
        }
        out
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Row-major copy of a point set for cache-friendly nearest-neighbor scans.
struct Rows {
    d: usize,
    data: Vec<f64>,
}

impl Rows {
    fn of(m: &DMatrix<f64>) -> Self {
        let d = m.ncols();
        let mut data = Vec::with_capacity(m.len());
        for r in m.row_iter() {
            data.extend(r.iter());
        }
        Rows { d, data }
    }

    fn len(&self) -> usize {
        self.data.len() / self.d.max(1)
    }

    fn get(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    fn set(&mut self, i: usize, v: &[f64]) {
        self.data[i * self.d..(i + 1) * self.d].copy_from_slice(v);
    }

    /// Index of the nearest row, lowest index on ties, and its squared distance.
    fn nearest(&self, z: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (k, c) in self.data.chunks_exact(self.d).enumerate() {
            let d = sq_dist(z, c);
            if d < best.1 {
                best = (k, d);
            }
        }
        best
    }

    fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.len(), self.d, &self.data)
    }
}

/// Nearest-neighbor quantization of a single latent.
pub fn quantize(z: &[f64], codebook: &Codebook) -> Result<(usize, Vec<f64>)> {
    if codebook.is_empty() {
        return Err(invalid("empty codebook"));
    }
    check_len(codebook.dim(), z.len())?;
    let (k, _) = Rows::of(&codebook.codes).nearest(z);
    Ok((k, codebook.codes.row(k).iter().cloned().collect()))
}

/// Quantizes every row of `latents`, returning assignments and `Z_q`.
pub fn quantize_batch(latents: &DMatrix<f64>, codes: &DMatrix<f64>) -> (Vec<usize>, DMatrix<f64>) {
    let table = Rows::of(codes);
    let points = Rows::of(latents);
    let mut zq = DMatrix::zeros(latents.nrows(), codes.ncols());
    let assign: Vec<usize> = (0..points.len())
        .map(|i| {
            let (k, _) = table.nearest(points.get(i));
            zq.set_row(i, &codes.row(k));
            k
        })
        .collect();
    (assign, zq)
}

/// k-means++ seeding followed by at most `iters` Lloyd iterations. An empty
/// cluster is re-seeded at the point farthest from its current center.
/// The returned codebook has zero usage and threshold 0.
pub fn kmeans_init<R: Rng + ?Sized>(latents: &DMatrix<f64>, k: usize, iters: usize, rng: &mut R) -> Result<Codebook> {
    let n = latents.nrows();
    let d = latents.ncols();
    if k == 0 {
        return Err(invalid("k-means needs at least one cluster"));
    }
    if n < k {
        return Err(invalid(format!("k-means needs at least {k} points, got {n}")));
    }
    if latents.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("k-means input".into()));
    }
    let points = Rows::of(latents);
    let mut centers = Rows { d, data: vec![0.0; k * d] };
    centers.set(0, points.get(rng.random_range(0..n)));
    let mut dist: Vec<f64> = (0..n).map(|i| sq_dist(points.get(i), centers.get(0))).collect();
    for c in 1..k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in dist.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.set(c, points.get(pick));
        for (i, di) in dist.iter_mut().enumerate() {
            *di = di.min(sq_dist(points.get(i), centers.get(c)));
        }
    }

    let mut assign = vec![usize::MAX; n];
    let mut point_dist = vec![0.0; n];
    for _ in 0..iters {
        let mut changed = false;
        for i in 0..n {
            let (a, dd) = centers.nearest(points.get(i));
            changed |= assign[i] != a;
            assign[i] = a;
            point_dist[i] = dd;
        }
        if !changed {
            break;
        }
        let mut counts = vec![0usize; k];
        let mut sums = vec![0.0; k * d];
        for (i, &a) in assign.iter().enumerate() {
            counts[a] += 1;
            for (s, x) in sums[a * d..(a + 1) * d].iter_mut().zip(points.get(i)) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let mean: Vec<f64> = sums[c * d..(c + 1) * d].iter().map(|s| s / counts[c] as f64).collect();
                centers.set(c, &mean);
            } else {
                let far = (0..n).fold(0, |b, i| if point_dist[i] > point_dist[b] { i } else { b });
                centers.set(c, points.get(far));
                point_dist[far] = 0.0;
            }
        }
    }
    let centers = centers.to_matrix();
    Codebook::from_codes(centers, 0.0, DEFAULT_EMA_DECAY, 0.0)
}

/// Replaces every code with `usage_ema < respawn_threshold` by a uniformly
/// drawn row of `batch_latents`, resetting its usage to the mean usage over
/// all codes (measured before any replacement). Returns the number replaced.
pub fn respawn_dead_codes<R: Rng + ?Sized>(
    codebook: &mut Codebook,
    batch_latents: &DMatrix<f64>,
    rng: &mut R,
) -> Result<usize> {
    let b = batch_latents.nrows();
    if b == 0 {
        return Err(invalid("empty batch"));
    }
    check_len(codebook.dim(), batch_latents.ncols())?;
    let mean_usage = codebook.usage_ema.iter().sum::<f64>() / codebook.len() as f64;
    let mut count = 0;
    for c in 0..codebook.len() {
        if codebook.usage_ema[c] < codebook.respawn_threshold {
            let row = batch_latents.row(rng.random_range(0..b)).into_owned();
            codebook.codes.set_row(c, &row);
            codebook.mass.set_row(c, &(&row * mean_usage));
            codebook.usage_ema[c] = mean_usage;
            count += 1;
        }
    }
    Ok(count)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VQTrainConfig {
    pub spectrum: Spectrum,
    pub codebook_size: usize,
    pub beta: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub total_steps: usize,
    /// Plain-AE steps before the quantizer is switched on.
    pub warmup_steps: usize,
    pub seed: u64,
    pub kmeans_iters: usize,
    pub init_scale: f64,
    pub ema_decay: f64,
    /// Raw EMA-count threshold; `None` means `0.01 · batch_size / K`.
    pub respawn_threshold: Option<f64>,
    pub record_every: usize,
    /// Size of the fixed held-out set used for recorded metrics.
    pub eval_samples: usize,
}

impl VQTrainConfig {
    pub fn dim(&self) -> usize {
        self.spectrum.len()
    }

    pub fn threshold(&self) -> f64 {
        self.respawn_threshold.unwrap_or(0.01 * self.batch_size as f64 / self.codebook_size as f64)
    }

    /// `max(100 K, 10 B)` latents, capped.
    pub fn kmeans_sample_size(&self) -> usize {
        (100 * self.codebook_size).max(10 * self.batch_size).min(KMEANS_SAMPLE_CAP)
    }

    pub fn validate(&self) -> Result<()> {
        if self.codebook_size == 0 {
            return Err(invalid("codebook size must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(invalid("empty batch"));
        }
        if self.warmup_steps > self.total_steps {
            return Err(invalid("warm-up longer than the step budget"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(invalid(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(invalid(format!("beta must be nonnegative, got {}", self.beta)));
        }
        if !(self.init_scale > 0.0) {
            return Err(invalid("init scale must be positive"));
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return Err(invalid("EMA decay must lie in (0, 1)"));
        }
        if self.record_every == 0 {
            return Err(invalid("record_every must be at least 1"));
        }
        if self.eval_samples < 2 {
            return Err(invalid("need at least 2 evaluation samples"));
        }
        if let Some(t) = self.respawn_threshold {
            if !(t >= 0.0) {
                return Err(invalid("respawn threshold must be nonnegative"));
            }
        }
        Ok(())
    }
}

/// Per-step diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct StepMetrics {
    pub l_rec: f64,
    pub l_com: f64,
    /// Fraction of codes hit by at least one latent of the batch; 1 during warm-up.
    pub utilization: f64,
    pub latent_deff: f64,
    pub code_deff: f64,
}

/// Draws `n` samples from `N(0, diag(σ²))`, one per row.
pub fn sample_batch<R: Rng + ?Sized>(spectrum: &Spectrum, n: usize, rng: &mut R) -> DMatrix<f64> {
    let std: Vec<f64> = spectrum.values().iter().map(|s| s.sqrt()).collect();
    let mut x = DMatrix::zeros(n, std.len());
    for i in 0..n {
        for (j, &s) in std.iter().enumerate() {
            x[(i, j)] = s * rng.sample::<f64, _>(StandardNormal);
        }
    }
    x
}

/// One SGD step on `batch` (rows are samples). `codebook = None` is the
/// warm-up phase: the quantizer is the identity and there is no commitment.
pub fn vq_train_step(
    model: &mut DenseState,
    batch: &DMatrix<f64>,
    codebook: Option<&mut Codebook>,
    beta: f64,
    learning_rate: f64,
) -> Result<StepMetrics> {
    let b = batch.nrows();
    if b == 0 {
        return Err(invalid("empty batch"));
    }
    check_len(model.dim(), batch.ncols())?;
    let z = batch * model.w1.transpose();
    let (zq, assignment) = match &codebook {
        Some(cb) => {
            check_len(model.dim(), cb.dim())?;
            let (a, zq) = quantize_batch(&z, &cb.codes);
            (zq, Some(a))
        }
        None => (z.clone(), None),
    };
    let residual = batch - &zq * model.w2.transpose();
    let gap = &z - &zq;
    let scale = 2.0 / b as f64;
    let grad_w2 = residual.transpose() * &zq * -scale;
    let mut grad_w1 = (&model.w2.transpose() * residual.transpose() * batch) * -scale;
    if assignment.is_some() {
        grad_w1 += gap.transpose() * batch * (scale * beta);
    }

    let l_rec = residual.norm_squared() / b as f64;
    let l_com = beta * gap.norm_squared() / b as f64;
    let latent_deff = spectrum_deff(&z);
    let (utilization, code_deff) = match (codebook, &assignment) {
        (Some(cb), Some(a)) => {
            let mut hit = vec![false; cb.len()];
            a.iter().for_each(|&k| hit[k] = true);
            let used = hit.iter().filter(|&&h| h).count() as f64 / cb.len() as f64;
            cb.ema_update(&z, a)?;
            (used, spectrum_deff(&cb.codes))
        }
        _ => (1.0, latent_deff),
    };

    model.w1 -= grad_w1 * learning_rate;
    model.w2 -= grad_w2 * learning_rate;
    if let Some(v) = model.w1.iter().chain(model.w2.iter()).find(|v| !v.is_finite() || v.abs() > DIVERGENCE_BOUND) {
        return Err(Error::Divergence { t: model.t, detail: format!("weight reached {v}") });
    }
    model.t += 1.0;
    Ok(StepMetrics { l_rec, l_com, utilization, latent_deff, code_deff })
}

/// d_eff of the PCA spectrum of the rows, 0 when degenerate.
fn spectrum_deff(rows: &DMatrix<f64>) -> f64 {
    if rows.nrows() < 2 {
        return 0.0;
    }
    eigen_spectrum(rows).map_or(0.0, |s| deff_or_zero(s.values()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VqReport {
    /// Fraction of codes used on the held-out set.
    pub utilization: f64,
    pub codebook_deff: f64,
    pub latent_deff: f64,
    pub l_rec: f64,
    pub l_com: f64,
    pub respawned: usize,
    pub codebook: Option<Codebook>,
}

/// Full warm-up + VQ run. Streams of the seed: 0 weights, 1 training
/// batches, 2 held-out set, 3 k-means, 4 respawn draws.
pub fn run_vq_experiment(config: &VQTrainConfig) -> Result<(Trajectory, VqReport)> {
    let mut tr = Trajectory::new(TrajectoryKind::ToyVq);
    let report = run_vq_experiment_into(config, &mut tr)?;
    Ok((tr, report))
}

/// Like [`run_vq_experiment`], recording into `tr`; on error `tr` keeps every
/// snapshot taken before the failure.
pub fn run_vq_experiment_into(config: &VQTrainConfig, tr: &mut Trajectory) -> Result<VqReport> {
    config.validate()?;
    let d = config.dim();
    let mut model = DenseState::gaussian(d, config.init_scale, &mut run_rng(config.seed, 0));
    let mut batch_rng = run_rng(config.seed, 1);
    let eval = sample_batch(&config.spectrum, config.eval_samples, &mut run_rng(config.seed, 2));
    let mut kmeans_rng = run_rng(config.seed, 3);
    let mut respawn_rng = run_rng(config.seed, 4);
    let rate = (config.codebook_size as f64).log2();

    let mut codebook: Option<Codebook> = None;
    let mut respawned = 0;
    for step in 0..=config.total_steps {
        if step == config.warmup_steps && codebook.is_none() {
            codebook = Some(boundary_codebook(&model, config, &mut kmeans_rng)?);
        }
        if step % config.record_every == 0 || step == config.total_steps {
            tr.push(evaluate(&model, codebook.as_ref(), &eval, config.beta, rate)?.0);
        }
        if step == config.total_steps {
            break;
        }
        let batch = sample_batch(&config.spectrum, config.batch_size, &mut batch_rng);
        vq_train_step(&mut model, &batch, codebook.as_mut(), config.beta, config.learning_rate)?;
        if let Some(cb) = codebook.as_mut() {
            let z = &batch * model.w1.transpose();
            respawned += respawn_dead_codes(cb, &z, &mut respawn_rng)?;
        }
    }
    let (snap, util) = evaluate(&model, codebook.as_ref(), &eval, config.beta, rate)?;
    let report = VqReport {
        utilization: util,
        codebook_deff: codebook.as_ref().map_or(snap.d_eff, |cb| spectrum_deff(&cb.codes)),
        latent_deff: snap.d_eff,
        l_rec: snap.l_rec,
        l_com: snap.l_com,
        respawned,
        codebook,
    };
    Ok(report)
}

fn boundary_codebook<R: Rng + ?Sized>(model: &DenseState, config: &VQTrainConfig, rng: &mut R) -> Result<Codebook> {
    let x = sample_batch(&config.spectrum, config.kmeans_sample_size(), rng);
    let z = x * model.w1.transpose();
    let mut cb = kmeans_init(&z, config.codebook_size, config.kmeans_iters, rng)?;
    cb.ema_decay = config.ema_decay;
    cb.respawn_threshold = config.threshold();
    // Steady-state count for uniform use, so fresh codes are not respawned at once.
    cb.reset_usage(config.batch_size as f64 / (config.codebook_size as f64 * (1.0 - config.ema_decay)));
    Ok(cb)
}

/// Held-out metrics; also returns the code utilization on that set.
fn evaluate(
    model: &DenseState,
    codebook: Option<&Codebook>,
    eval: &DMatrix<f64>,
    beta: f64,
    rate_bits: f64,
) -> Result<(Snapshot, f64)> {
    let n = eval.nrows() as f64;
    let z = eval * model.w1.transpose();
    let (zq, util) = match codebook {
        Some(cb) => {
            let (a, zq) = quantize_batch(&z, &cb.codes);
            let mut hit = vec![false; cb.len()];
            a.iter().for_each(|&k| hit[k] = true);
            (zq, hit.iter().filter(|&&h| h).count() as f64 / cb.len() as f64)
        }
        None => (z.clone(), f64::NAN),
    };
    let residual = eval - &zq * model.w2.transpose();
    let lambda = eigen_spectrum(&z).map(|s| s.values().to_vec()).unwrap_or_else(|_| vec![0.0; z.ncols()]);
    let channel = solve_or_empty(&lambda, rate_bits)?;
    let snap = Snapshot {
        t: model.t,
        l_rec: residual.norm_squared() / n,
        l_com: if codebook.is_some() { beta * (&z - &zq).norm_squared() / n } else { 0.0 },
        d_eff: deff_or_zero(&lambda),
        active_count: channel.active_count() as f64,
        water_level: channel.water_level,
        modes: lambda,
        utilization: codebook.map(|_| util),
    };
    Ok((snap, util))
}

/// Latents `Z = X W1ᵀ` of a batch.
pub fn encode(model: &DenseState, batch: &DMatrix<f64>) -> DMatrix<f64> {
    batch * model.w1.transpose()
}
