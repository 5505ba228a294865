//! TOML experiment configs.
//!
//! Top-level keys pick the mode and the output location; the spectrum comes
//! from `[source]`; each mode reads its own section, named after the mode.
//! Input files are resolved against the config's directory, `output_dir`
//! against the working directory.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use vqcollapse::ae_flow::InitConfig;
use vqcollapse::spectral::{parse_spectrum_text, power_law_spectrum, Spectrum};

use crate::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Ae,
    RdaeDiag,
    RdaeDense,
    Toyvq,
    Waterfill,
    Predict,
    Advise,
    Spectrum,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Ae => "ae",
            Mode::RdaeDiag => "rdae-diag",
            Mode::RdaeDense => "rdae-dense",
            Mode::Toyvq => "toyvq",
            Mode::Waterfill => "waterfill",
            Mode::Predict => "predict",
            Mode::Advise => "advise",
            Mode::Spectrum => "spectrum",
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn one() -> f64 {
    1.0
}

fn default_record_every() -> usize {
    100
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub output_dir: PathBuf,
    /// Master seeds; the deterministic flows ignore them.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Worker threads; 0 means available parallelism.
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub svg: bool,
    pub source: Option<SourceSection>,
    pub ae: Option<AeSection>,
    #[serde(rename = "rdae-diag")]
    pub rdae_diag: Option<DiagSection>,
    #[serde(rename = "rdae-dense")]
    pub rdae_dense: Option<DenseSection>,
    pub toyvq: Option<ToyVqSection>,
    pub waterfill: Option<RatesSection>,
    pub predict: Option<PredictSection>,
    pub advise: Option<AdviseSection>,
    pub spectrum: Option<LatentsSection>,
}

/// Exactly one of: `dim` (with optional `exponent`), `values`, or `file`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSection {
    pub dim: Option<usize>,
    pub exponent: Option<f64>,
    pub values: Option<Vec<f64>>,
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AeSection {
    pub init_scale: f64,
    pub dt: f64,
    pub steps: usize,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagSection {
    pub rates: Vec<f64>,
    #[serde(default = "one")]
    pub beta: f64,
    /// Balanced start `u = v = √s`; ignored when `warmup_times` is set.
    pub init_scale: Option<f64>,
    /// Start from the analytic warm-up checkpoint at each of these times.
    pub warmup_times: Option<Vec<f64>>,
    pub epsilon: Option<f64>,
    pub dt: f64,
    pub steps: usize,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default)]
    pub stop_on_convergence: bool,
    pub convergence_tol: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelChoice {
    RateDistortion,
    Identity,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseSection {
    pub rates: Vec<f64>,
    #[serde(default = "one")]
    pub beta: f64,
    pub init_scale: f64,
    pub dt: f64,
    pub steps: usize,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    pub num_seeds: usize,
    #[serde(default = "rate_distortion")]
    pub channel: ChannelChoice,
    /// Also write every seed's trajectory, not just the median.
    #[serde(default)]
    pub write_seed_runs: bool,
}

fn rate_distortion() -> ChannelChoice {
    ChannelChoice::RateDistortion
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyVqSection {
    pub codebook_sizes: Vec<usize>,
    /// One cell per entry; 0 is a cold start.
    pub warmup_steps: Vec<usize>,
    #[serde(default = "one")]
    pub beta: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub total_steps: usize,
    pub kmeans_iters: usize,
    pub init_scale: f64,
    #[serde(default = "default_decay")]
    pub ema_decay: f64,
    pub respawn_threshold: Option<f64>,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    pub eval_samples: usize,
    #[serde(default = "yes")]
    pub write_codebooks: bool,
}

fn default_decay() -> f64 {
    vqcollapse::toyvq::DEFAULT_EMA_DECAY
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesSection {
    pub rates: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictSection {
    pub epsilon: f64,
    pub warmup_times: Vec<f64>,
    pub rates: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdviseSection {
    pub series: PathBuf,
    pub patience: usize,
    pub tol: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatentsSection {
    pub latents: PathBuf,
    pub rates: Vec<f64>,
}

/// A parsed config plus where it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub text: String,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// `output_dir`, unless the environment overrides it.
    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(crate::OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.config.output_dir.clone(),
        }
    }

    pub fn spectrum(&self) -> Result<Spectrum> {
        let src = self
            .config
            .source
            .as_ref()
            .ok_or_else(|| CliError::Config(format!("mode {} needs a [source] section", self.config.mode.name())))?;
        let forms = src.dim.is_some() as u8 + src.values.is_some() as u8 + src.file.is_some() as u8;
        if forms != 1 {
            return Err(CliError::Config("[source] needs exactly one of dim, values or file".into()));
        }
        if src.exponent.is_some() && src.dim.is_none() {
            return Err(CliError::Config("[source] exponent only applies together with dim".into()));
        }
        if let Some(d) = src.dim {
            return Ok(power_law_spectrum(d, src.exponent.unwrap_or(1.0))?);
        }
        if let Some(v) = &src.values {
            return Ok(Spectrum::from_unsorted(v.clone())?);
        }
        let path = self.resolve(src.file.as_ref().expect("checked above"));
        let text = read_text(&path)?;
        Ok(parse_spectrum_text(&text)?)
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Reads and parses a config file without running anything.
pub fn load(path: &Path) -> Result<LoadedConfig> {
    let text = read_text(path)?;
    let config: ExperimentConfig = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(LoadedConfig { config, text, base_dir })
}

pub(crate) fn section<T>(s: &Option<T>, mode: Mode) -> Result<&T> {
    s.as_ref().ok_or_else(|| CliError::Config(format!("mode {0} needs a [{0}] section", mode.name())))
}

pub(crate) fn check_rates(rates: &[f64]) -> Result<()> {
    if rates.is_empty() {
        return Err(CliError::Config("rates must not be empty".into()));
    }
    if let Some(r) = rates.iter().find(|r| !(**r >= 0.0) || !r.is_finite()) {
        return Err(CliError::Config(format!("rates must be finite and nonnegative, got {r}")));
    }
    Ok(())
}

pub(crate) fn init(scale: f64) -> Result<InitConfig> {
    Ok(InitConfig::from_scale(scale)?)
}
