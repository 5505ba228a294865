//! One-shot analyses behind the `predict`, `advise`, `waterfill` and
//! `spectrum` subcommands. Each returns the text to print.

use std::fmt::Write as _;
use std::path::Path;

use serde_json::{json, Map, Value};
use vqcollapse::spectral::{
    effective_dimension, eigen_spectrum, parse_latent_csv, parse_spectrum_text, power_law_spectrum, Spectrum,
    DEFAULT_DEFF_THRESHOLD,
};
use vqcollapse::trajectory::fmt_float;
use vqcollapse::warmup::{advise_switch, predict, predict_from_spectrum, SwitchAdvice};
use vqcollapse::waterfill::{solve_water_level, RdChannel};

use crate::artifacts::{json_float, json_text};
use crate::config::read_text;
use crate::{CliError, Result};

/// Per-mode water-filling table: `j,lambda,distortion,gain,noise_var,active`.
pub fn channel_table(spectrum: &Spectrum, channel: &RdChannel) -> String {
    let mut out = String::from("j,lambda,distortion,gain,noise_var,active\n");
    for (j, (lambda, m)) in spectrum.values().iter().zip(&channel.per_mode).enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            j + 1,
            fmt_float(*lambda),
            fmt_float(m.distortion),
            fmt_float(m.gain),
            fmt_float(m.noise_var),
            u8::from(channel.is_active(j))
        );
    }
    out
}

/// Header lines summarizing a channel, as `#`-comments.
fn channel_header(channel: &RdChannel) -> String {
    format!(
        "# rate_bits={}\n# water_level={}\n# distortion={}\n# active_count={}\n",
        fmt_float(channel.rate_bits),
        fmt_float(channel.water_level),
        fmt_float(channel.total_distortion()),
        channel.active_count()
    )
}

pub fn load_spectrum(path: &Path) -> Result<Spectrum> {
    Ok(parse_spectrum_text(&read_text(path)?)?)
}

/// `waterfill --spectrum <csv> --rate <bits>`.
pub fn waterfill(spectrum: &Spectrum, rate_bits: f64) -> Result<String> {
    let ch = solve_water_level(spectrum, rate_bits)?;
    Ok(channel_header(&ch) + &channel_table(spectrum, &ch))
}

/// Spectrum for `predict`: a file, or a synthetic power law `j^{-exponent}`.
pub enum SpectrumInput<'a> {
    File(&'a Path),
    PowerLaw { dim: usize, exponent: f64 },
}

impl SpectrumInput<'_> {
    pub fn load(&self) -> Result<Spectrum> {
        match *self {
            SpectrumInput::File(p) => load_spectrum(p),
            SpectrumInput::PowerLaw { dim, exponent } => Ok(power_law_spectrum(dim, exponent)?),
        }
    }
}

/// `predict`: with a warm-up (`epsilon`, `t_wu`) the spectrum is read as the
/// data variances and the surviving-mode bound is reported; without one the
/// spectrum is read as measured latent eigenvalues and the water-filling count
/// is reported.
pub fn predict_cmd(spectrum: &Spectrum, rate_bits: f64, warmup: Option<(f64, f64)>) -> Result<String> {
    let mut rec = Map::new();
    rec.insert("rate_bits".into(), json_float(rate_bits));
    rec.insert("dims".into(), json!(spectrum.len()));
    match warmup {
        Some((epsilon, t_wu)) => {
            let p = predict(spectrum, epsilon, t_wu, rate_bits)?;
            rec.insert("epsilon".into(), json_float(epsilon));
            rec.insert("t_wu".into(), if t_wu.is_infinite() { json!("inf") } else { json_float(t_wu) });
            rec.insert("m_wu".into(), json!(p.m_wu));
            rec.insert("delta_m".into(), json_float(p.delta_m));
            rec.insert("loss_lower_bound".into(), json_float(p.loss_lower_bound));
        }
        None => {
            let ch = solve_water_level(spectrum, rate_bits)?;
            rec.insert("surviving_modes".into(), json!(predict_from_spectrum(spectrum, rate_bits)?));
            rec.insert("water_level".into(), json_float(ch.water_level));
            rec.insert("distortion".into(), json_float(ch.total_distortion()));
        }
    }
    Ok(json_text(&Value::Object(rec)))
}

/// Reads `(t, value)` pairs from a CSV. `column` picks the value column by
/// header name or zero-based index; the time is always column 0. A first line
/// that does not parse as numbers is taken as the header; `#` lines are
/// skipped.
pub fn parse_series(text: &str, column: &str) -> Result<Vec<(f64, f64)>> {
    let mut header: Option<Vec<String>> = None;
    let mut col: Option<usize> = column.parse().ok();
    let mut out = Vec::new();
    let mut seen_data = false;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let nums: std::result::Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        let nums = match nums {
            Ok(n) => n,
            Err(_) if header.is_none() && !seen_data => {
                let names: Vec<String> = fields.iter().map(|s| s.to_string()).collect();
                if col.is_none() {
                    col = names.iter().position(|n| n == column);
                    if col.is_none() {
                        return Err(CliError::Config(format!("no column named {column:?} in header {names:?}")));
                    }
                }
                header = Some(names);
                continue;
            }
            Err(e) => return Err(CliError::Config(format!("line {}: {e}", idx + 1))),
        };
        seen_data = true;
        let c = col.ok_or_else(|| CliError::Config(format!("column {column:?} needs a header line")))?;
        if c == 0 || c >= nums.len() {
            return Err(CliError::Config(format!("line {}: no value column {c} in {} fields", idx + 1, nums.len())));
        }
        out.push((nums[0], nums[c]));
    }
    if out.is_empty() {
        return Err(CliError::Config("series has no data rows".into()));
    }
    Ok(out)
}

pub fn advice_json(a: &SwitchAdvice) -> Value {
    json!({ "t": json_float(a.t), "index": a.index, "converged": a.converged })
}

/// `advise --series <csv> --patience <n> --tol <x>`.
pub fn advise_cmd(series: &[(f64, f64)], patience: usize, tol: f64) -> Result<String> {
    let a = advise_switch(series, patience, tol)?;
    Ok(json_text(&advice_json(&a)))
}

/// Latent samples to their PCA spectrum.
pub fn latent_spectrum(path: &Path) -> Result<Spectrum> {
    let z = parse_latent_csv(&read_text(path)?)?;
    Ok(eigen_spectrum(&z)?)
}

/// `spectrum --latents <csv> --rate <bits>`: the water-fill table of the
/// measured spectrum and the number of dimensions a rate-`R` codebook can keep.
pub fn spectrum_cmd(spectrum: &Spectrum, rate_bits: f64) -> Result<String> {
    let ch = solve_water_level(spectrum, rate_bits)?;
    let deff = effective_dimension(spectrum, DEFAULT_DEFF_THRESHOLD).unwrap_or(0);
    Ok(format!(
        "# predicted_modes={}\n# d_eff={deff}\n{}{}",
        predict_from_spectrum(spectrum, rate_bits)?,
        channel_header(&ch),
        channel_table(spectrum, &ch)
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_by_name_or_index() {
        let text = "t,L_rec,d_eff\n0,3.0,1\n1,2.0,2\n";
        assert_eq!(parse_series(text, "L_rec").unwrap(), vec![(0.0, 3.0), (1.0, 2.0)]);
        assert_eq!(parse_series(text, "2").unwrap(), vec![(0.0, 1.0), (1.0, 2.0)]);
        assert_eq!(parse_series("# c\n0,5\n1,6\n", "1").unwrap(), vec![(0.0, 5.0), (1.0, 6.0)]);
        assert!(parse_series(text, "missing").is_err());
        assert!(parse_series("0,1\nx,2\n", "1").is_err());
        assert!(parse_series("0,1\n", "0").is_err());
    }

    #[test]
    fn waterfill_table_marks_boundary_inactive() {
        let sp = Spectrum::new(vec![4.0, 1.0]).unwrap();
        let text = waterfill(&sp, 1.0).unwrap();
        assert!(text.contains("# active_count=1\n"));
        assert!(text.ends_with("2,1.0000000000000000e0,1.0000000000000000e0,0.0000000000000000e0,0.0000000000000000e0,0\n"));
    }
}
