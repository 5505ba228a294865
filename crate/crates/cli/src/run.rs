//! `run <config>`: plan every cell (validating all inputs first), execute them
//! on the worker pool, then write artifacts, summaries and the manifest.
//!
//! Every run writes `summary.json` (one record per cell), `cells.csv` (one
//! row per cell, one column per metric) and `manifest.json`, plus whatever
//! the mode produces.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};
use vqcollapse::ae_flow::{integrate_ae_into, warmup_checkpoint, DiagState};
use vqcollapse::rdae_dense::{integrate_dense_rdae, ChannelMode, DenseSimConfig};
use vqcollapse::rdae_diag::{integrate_diag_rdae_into, DiagInit, DiagSimConfig};
use vqcollapse::spectral::Spectrum;
use vqcollapse::toyvq::{run_vq_experiment_into, VQTrainConfig};
use vqcollapse::trajectory::{fmt_float, median};
use vqcollapse::warmup::{advise_switch, predict, predict_from_spectrum};
use vqcollapse::waterfill::{shannon_distortion, solve_water_level};
use vqcollapse::{Trajectory, TrajectoryKind};

use crate::artifacts::{json_float, json_text, ArtifactWriter, CellRecord};
use crate::commands::{advice_json, channel_table, latent_spectrum, parse_series};
use crate::config::{check_rates, init, load, read_text, section, ChannelChoice, LoadedConfig, Mode};
use crate::plot::{emit_plot_data, Series};
use crate::sweep::{run_cells, Cell, CellResult, CellStatus};
use crate::{CliError, Result, EXIT_DIVERGENCE, EXIT_PARSE};

/// What a finished run left on disk.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub output_dir: PathBuf,
    pub manifest: PathBuf,
    pub cells: Vec<CellRecord>,
}

impl RunReport {
    /// 0 if every cell succeeded, 3 if any diverged, else 2.
    pub fn exit_code(&self) -> i32 {
        if self.cells.iter().all(|c| c.status == "ok") {
            0
        } else if self.cells.iter().any(|c| c.status == "diverged") {
            EXIT_DIVERGENCE
        } else {
            EXIT_PARSE
        }
    }
}

/// Artifacts that belong to the run rather than to a cell.
type Extra = Box<dyn FnOnce(&[CellResult], bool) -> Result<Vec<(String, Vec<u8>)>>>;

struct Plan {
    cells: Vec<Cell>,
    /// Written before the cells' artifacts.
    inputs: Vec<(String, Vec<u8>)>,
    extra: Option<Extra>,
}

/// Loads and validates `config_path`, returning the cell names without
/// running anything.
pub fn plan_config(config_path: &Path) -> Result<Vec<String>> {
    let loaded = load(config_path)?;
    Ok(plan(&loaded)?.cells.into_iter().map(|c| c.name).collect())
}

/// Loads, plans and executes `config_path`. `workers` overrides the config.
pub fn run_config(config_path: &Path, workers: Option<usize>) -> Result<RunReport> {
    let loaded = load(config_path)?;
    let plan = plan(&loaded)?;
    let workers = workers.unwrap_or(loaded.config.workers);
    let results = run_cells(plan.cells, workers)?;

    let mut writer = ArtifactWriter::create(loaded.output_dir())?;
    for (name, bytes) in &plan.inputs {
        writer.write(name, bytes)?;
    }
    let svg = loaded.config.svg;
    for r in &results {
        for a in &r.artifacts {
            writer.write(&a.name, &a.bytes)?;
        }
        for (stem, series) in &r.plots {
            write_plot(&mut writer, stem, series, svg)?;
        }
    }
    if let Some(extra) = plan.extra {
        for (name, bytes) in extra(&results, svg)? {
            writer.write(&name, &bytes)?;
        }
    }
    writer.write("summary.json", json_text(&summary(loaded.config.mode, &results)).as_bytes())?;
    writer.write("cells.csv", cells_csv(&results).as_bytes())?;
    let cells: Vec<CellRecord> = results
        .iter()
        .map(|r| CellRecord { name: r.name.clone(), status: r.status.label().into(), detail: r.status.detail() })
        .collect();
    let output_dir = writer.dir().to_path_buf();
    let manifest = writer.finish(loaded.config.mode.name(), &loaded.text, &cells)?;
    Ok(RunReport { output_dir, manifest, cells })
}

fn write_plot(writer: &mut ArtifactWriter, stem: &str, series: &[Series], svg: bool) -> Result<()> {
    let data = emit_plot_data(series, svg)?;
    writer.write(&format!("{stem}.plot.csv"), data.csv.as_bytes())?;
    if let Some(s) = data.svg {
        writer.write(&format!("{stem}.svg"), s.as_bytes())?;
    }
    Ok(())
}

fn plot_files(stem: &str, series: &[Series], svg: bool) -> Result<Vec<(String, Vec<u8>)>> {
    let data = emit_plot_data(series, svg)?;
    let mut out = vec![(format!("{stem}.plot.csv"), data.csv.into_bytes())];
    if let Some(s) = data.svg {
        out.push((format!("{stem}.svg"), s.into_bytes()));
    }
    Ok(out)
}

fn summary(mode: Mode, results: &[CellResult]) -> Value {
    let cells: Vec<Value> = results
        .iter()
        .map(|r| {
            let metrics: Map<String, Value> = r.metrics.iter().map(|(k, v)| (k.clone(), json_float(*v))).collect();
            let mut rec = Map::new();
            rec.insert("name".into(), json!(r.name));
            rec.insert("status".into(), json!(r.status.label()));
            if let Some(d) = r.status.detail() {
                rec.insert("detail".into(), json!(d));
            }
            rec.insert("metrics".into(), Value::Object(metrics));
            Value::Object(rec)
        })
        .collect();
    json!({ "mode": mode.name(), "cells": cells })
}

/// One row per cell; metric columns in order of first appearance, empty when
/// a cell lacks one.
fn cells_csv(results: &[CellResult]) -> String {
    let mut keys: Vec<&str> = Vec::new();
    for r in results {
        for (k, _) in &r.metrics {
            if !keys.contains(&k.as_str()) {
                keys.push(k);
            }
        }
    }
    let mut out = String::from("cell,status");
    for k in &keys {
        let _ = write!(out, ",{k}");
    }
    out.push('\n');
    for r in results {
        let _ = write!(out, "{},{}", r.name, r.status.label());
        for k in &keys {
            out.push(',');
            if let Some(v) = r.get(k) {
                out.push_str(&fmt_float(v));
            }
        }
        out.push('\n');
    }
    out
}

fn tag(v: f64) -> String {
    format!("{v}")
}

fn series_of(tr: &Trajectory, label: &str, f: impl Fn(&vqcollapse::Snapshot) -> f64) -> Series {
    Series::new(label, tr.times(), tr.snapshots.iter().map(f).collect())
}

fn plan(loaded: &LoadedConfig) -> Result<Plan> {
    let cfg = &loaded.config;
    if cfg.seeds.is_empty() {
        return Err(CliError::Config("seeds must not be empty".into()));
    }
    match cfg.mode {
        Mode::Ae => plan_ae(loaded),
        Mode::RdaeDiag => plan_diag(loaded),
        Mode::RdaeDense => plan_dense(loaded),
        Mode::Toyvq => plan_toyvq(loaded),
        Mode::Waterfill => plan_waterfill(loaded),
        Mode::Predict => plan_predict(loaded),
        Mode::Advise => plan_advise(loaded),
        Mode::Spectrum => plan_spectrum(loaded),
    }
}

fn check_steps(dt: f64, record_every: usize) -> Result<()> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(CliError::Config(format!("dt must be positive, got {dt}")));
    }
    if record_every == 0 {
        return Err(CliError::Config("record_every must be at least 1".into()));
    }
    Ok(())
}

fn plan_ae(loaded: &LoadedConfig) -> Result<Plan> {
    let sec = section(&loaded.config.ae, Mode::Ae)?.clone();
    let sp = loaded.spectrum()?;
    let start = DiagState::balanced(sp.len(), &init(sec.init_scale)?);
    check_steps(sec.dt, sec.record_every)?;
    let cell = Cell::new("ae", move || {
        let mut r = CellResult::new("ae");
        let mut tr = Trajectory::new(TrajectoryKind::Ae);
        match integrate_ae_into(start, &sp, sec.dt, sec.steps, sec.record_every, &mut tr) {
            Ok(_) => {
                let last = tr.last().expect("initial snapshot is always recorded");
                r.metric("L_rec", last.l_rec);
                r.metric("d_eff", last.d_eff);
                r.add("ae.csv", tr.to_csv());
                r.plots.push(("ae".into(), vec![series_of(&tr, "L_rec", |s| s.l_rec), series_of(&tr, "d_eff", |s| s.d_eff)]));
            }
            Err(e) => {
                r.fail(&e);
                r.add_partial("ae.csv", tr.to_csv());
            }
        }
        r
    });
    Ok(Plan { cells: vec![cell], inputs: Vec::new(), extra: None })
}

fn plan_diag(loaded: &LoadedConfig) -> Result<Plan> {
    let sec = section(&loaded.config.rdae_diag, Mode::RdaeDiag)?.clone();
    let sp = loaded.spectrum()?;
    check_rates(&sec.rates)?;
    let warmup: Option<(f64, Vec<f64>)> = match (&sec.warmup_times, sec.epsilon, sec.init_scale) {
        (Some(times), Some(eps), _) => {
            if times.is_empty() || times.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
                return Err(CliError::Config("warmup_times must be finite, nonnegative and non-empty".into()));
            }
            Some((eps, times.clone()))
        }
        (Some(_), None, _) => return Err(CliError::Config("warmup_times needs epsilon".into())),
        (None, _, Some(_)) => None,
        (None, _, None) => return Err(CliError::Config("[rdae-diag] needs init_scale or warmup_times".into())),
    };

    let mut cells = Vec::new();
    for &rate in &sec.rates {
        let starts: Vec<(Option<f64>, DiagInit)> = match &warmup {
            Some((eps, times)) => times
                .iter()
                .map(|&t| Ok((Some(t), DiagInit::State(warmup_checkpoint(&sp, *eps, t)?))))
                .collect::<Result<_>>()?,
            None => vec![(None, DiagInit::Balanced(init(sec.init_scale.expect("checked above"))?))],
        };
        for (t_wu, start) in starts {
            let mut c = DiagSimConfig::new(sp.clone(), rate, sec.beta, start, sec.steps);
            c.dt = sec.dt;
            c.record_every = sec.record_every;
            c.stop_on_convergence = sec.stop_on_convergence;
            if let Some(tol) = sec.convergence_tol {
                c.convergence_tol = tol;
            }
            c.validate()?;
            let prediction = match (&warmup, t_wu) {
                (Some((eps, _)), Some(t)) => Some(predict(&sp, *eps, t, rate)?),
                _ => None,
            };
            let floor = shannon_distortion(&sp, rate)?;
            let name = match t_wu {
                Some(t) => format!("diag_R{}_T{}", tag(rate), tag(t)),
                None => format!("diag_R{}", tag(rate)),
            };
            let cell_name = name.clone();
            cells.push(Cell::new(name, move || {
                let mut r = CellResult::new(cell_name.clone());
                r.metric("rate_bits", rate);
                if let Some(t) = t_wu {
                    r.metric("t_wu", t);
                }
                r.metric("shannon_distortion", floor);
                if let Some(p) = &prediction {
                    r.metric("m_wu", p.m_wu as f64);
                    r.metric("loss_lower_bound", p.loss_lower_bound);
                }
                let mut tr = Trajectory::new(TrajectoryKind::DiagRdae);
                let file = format!("{cell_name}.csv");
                match integrate_diag_rdae_into(&c, &mut tr) {
                    Ok(rep) => {
                        r.metric("k_infinity", rep.k_infinity as f64);
                        r.metric("loss_final", rep.loss_final);
                        r.metric("water_level_final", rep.water_level_final);
                        r.metric("converged", f64::from(u8::from(rep.converged)));
                        r.add(file, tr.to_csv());
                        r.plots.push((
                            cell_name.clone(),
                            vec![series_of(&tr, "L_rec", |s| s.l_rec), series_of(&tr, "active_count", |s| s.active_count)],
                        ));
                    }
                    Err(e) => {
                        r.fail(&e);
                        r.add_partial(&file, tr.to_csv());
                    }
                }
                r
            }));
        }
    }

    let extra: Option<Extra> = warmup.map(|(_, times)| {
        let rates = sec.rates.clone();
        Box::new(move |results: &[CellResult], svg: bool| warmup_grid_plots(results, &rates, &times, svg)) as Extra
    });
    Ok(Plan { cells, inputs: Vec::new(), extra })
}

/// Predicted vs observed surviving modes and losses along the warm-up grid.
fn warmup_grid_plots(results: &[CellResult], rates: &[f64], times: &[f64], svg: bool) -> Result<Vec<(String, Vec<u8>)>> {
    let pick = |rate: f64, key: &str| -> Vec<f64> {
        times
            .iter()
            .map(|&t| {
                results
                    .iter()
                    .find(|r| r.get("rate_bits") == Some(rate) && r.get("t_wu") == Some(t))
                    .and_then(|r| r.get(key))
                    .unwrap_or(f64::NAN)
            })
            .collect()
    };
    let mut modes = Vec::new();
    let mut losses = Vec::new();
    for &rate in rates {
        let r = tag(rate);
        modes.push(Series::new(format!("R={r} observed k"), times.to_vec(), pick(rate, "k_infinity")));
        modes.push(Series::new(format!("R={r} predicted m_wu"), times.to_vec(), pick(rate, "m_wu")));
        losses.push(Series::new(format!("R={r} observed L_rec"), times.to_vec(), pick(rate, "loss_final")));
        losses.push(Series::new(format!("R={r} lower bound"), times.to_vec(), pick(rate, "loss_lower_bound")));
        losses.push(Series::new(format!("R={r} D(R)"), times.to_vec(), pick(rate, "shannon_distortion")));
    }
    let mut out = plot_files("warmup_modes", &modes, svg)?;
    out.extend(plot_files("warmup_loss", &losses, svg)?);
    Ok(out)
}

fn plan_dense(loaded: &LoadedConfig) -> Result<Plan> {
    let sec = section(&loaded.config.rdae_dense, Mode::RdaeDense)?.clone();
    let sp = loaded.spectrum()?;
    check_rates(&sec.rates)?;
    let mode = match sec.channel {
        ChannelChoice::RateDistortion => ChannelMode::RateDistortion,
        ChannelChoice::Identity => ChannelMode::Identity,
    };
    let mut cells = Vec::new();
    for &seed in &loaded.config.seeds {
        for &rate in &sec.rates {
            let c = DenseSimConfig {
                spectrum: sp.clone(),
                rate_bits: rate,
                beta: sec.beta,
                init_scale: sec.init_scale,
                seed,
                dt: sec.dt,
                steps: sec.steps,
                record_every: sec.record_every,
                num_seeds: sec.num_seeds,
                mode,
            };
            c.validate()?;
            let floor = shannon_distortion(&sp, rate)?;
            let name = format!("dense_s{seed}_R{}", tag(rate));
            let write_runs = sec.write_seed_runs;
            let cell_name = name.clone();
            cells.push(Cell::new(name, move || dense_cell(&cell_name, &c, floor, write_runs)));
        }
    }
    let rates = sec.rates.clone();
    let seeds = loaded.config.seeds.clone();
    let n = sec.num_seeds;
    let extra: Extra = Box::new(move |results, svg| {
        let mut out = Vec::new();
        for seed in seeds {
            let mut series = Vec::new();
            for &rate in &rates {
                let Some(r) = results.iter().find(|r| r.name == format!("dense_s{seed}_R{}", tag(rate))) else { continue };
                if let Some((_, s)) = r.plots.iter().find(|(stem, _)| stem == &r.name) {
                    for x in s {
                        series.push(Series::new(format!("R={} {}", tag(rate), x.label), x.t.clone(), x.values.clone()));
                    }
                }
            }
            // Rates whose every seed failed have no median; plot the rest if they agree.
            if !series.is_empty() && series.iter().all(|s| s.t == series[0].t) {
                out.extend(plot_files(&format!("dense_s{seed}_n{n}"), &series, svg)?);
            }
        }
        Ok(out)
    });
    Ok(Plan { cells, inputs: Vec::new(), extra: Some(extra) })
}

fn dense_cell(name: &str, c: &DenseSimConfig, floor: f64, write_runs: bool) -> CellResult {
    let mut r = CellResult::new(name);
    r.metric("rate_bits", c.rate_bits);
    r.metric("master_seed", c.seed as f64);
    r.metric("shannon_distortion", floor);
    let out = match integrate_dense_rdae(c) {
        Ok(o) => o,
        Err(e) => {
            r.fail(&e);
            return r;
        }
    };
    for run in &out.runs {
        let file = format!("{name}_seed{}.csv", run.seed_index);
        if run.failure.is_some() {
            r.add_partial(&file, run.trajectory.to_csv());
        } else if write_runs {
            r.add(file, run.trajectory.to_csv());
        }
    }
    let mut final_loss: Vec<f64> = out.completed().filter_map(|s| s.trajectory.last().map(|l| l.l_rec)).collect();
    r.metric("seeds_completed", final_loss.len() as f64);
    r.metric("seeds_failed", out.aborted as f64);
    if let Some(m) = &out.median {
        let last = m.last().expect("median of recorded runs");
        r.metric("d_eff_median", last.d_eff);
        r.metric("L_rec_median", last.l_rec);
        r.metric("water_level_median", last.water_level);
        r.metric("active_count_median", last.active_count);
        let n = final_loss.len() as f64;
        let mean = final_loss.iter().sum::<f64>() / n;
        let var = final_loss.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        r.metric("L_rec_seed_variance", var);
        r.metric("L_rec_final_median", median(&mut final_loss).expect("non-empty"));
        let k = out.completed().count();
        r.add(format!("{name}_median.csv"), m.to_csv());
        r.plots.push((
            name.to_string(),
            vec![
                series_of(m, &format!("L_rec median of {k} seeds"), |s| s.l_rec),
                series_of(m, &format!("d_eff median of {k} seeds"), |s| s.d_eff),
            ],
        ));
    }
    if out.aborted > 0 {
        let first = out.runs.iter().find_map(|s| s.failure.as_ref()).expect("aborted run has a failure");
        let detail = format!("{} of {} seeds failed; first: {first}", out.aborted, out.runs.len());
        r.status = if crate::is_numerical(first) { CellStatus::Diverged(detail) } else { CellStatus::Failed(detail) };
    }
    r
}

fn plan_toyvq(loaded: &LoadedConfig) -> Result<Plan> {
    let sec = section(&loaded.config.toyvq, Mode::Toyvq)?.clone();
    let sp = loaded.spectrum()?;
    if sec.codebook_sizes.is_empty() || sec.warmup_steps.is_empty() {
        return Err(CliError::Config("codebook_sizes and warmup_steps must not be empty".into()));
    }
    let mut cells = Vec::new();
    for &seed in &loaded.config.seeds {
        for &k in &sec.codebook_sizes {
            for &wu in &sec.warmup_steps {
                let c = VQTrainConfig {
                    spectrum: sp.clone(),
                    codebook_size: k,
                    beta: sec.beta,
                    learning_rate: sec.learning_rate,
                    batch_size: sec.batch_size,
                    total_steps: sec.total_steps,
                    warmup_steps: wu,
                    seed,
                    kmeans_iters: sec.kmeans_iters,
                    init_scale: sec.init_scale,
                    ema_decay: sec.ema_decay,
                    respawn_threshold: sec.respawn_threshold,
                    record_every: sec.record_every,
                    eval_samples: sec.eval_samples,
                };
                c.validate()?;
                let name = format!("vq_s{seed}_K{k}_wu{wu}");
                let cell_name = name.clone();
                let write_codebook = sec.write_codebooks;
                cells.push(Cell::new(name, move || {
                    let mut r = CellResult::new(cell_name.clone());
                    r.metric("seed", seed as f64);
                    r.metric("codebook_size", k as f64);
                    r.metric("warmup_steps", wu as f64);
                    let mut tr = Trajectory::new(TrajectoryKind::ToyVq);
                    let file = format!("{cell_name}.csv");
                    match run_vq_experiment_into(&c, &mut tr) {
                        Ok(rep) => {
                            r.metric("L_rec", rep.l_rec);
                            r.metric("L_com", rep.l_com);
                            r.metric("utilization", rep.utilization);
                            r.metric("codebook_d_eff", rep.codebook_deff);
                            r.metric("latent_d_eff", rep.latent_deff);
                            r.metric("respawned", rep.respawned as f64);
                            r.add(file, tr.to_csv());
                            if let (true, Some(cb)) = (write_codebook, &rep.codebook) {
                                r.add(format!("{cell_name}_codebook.csv"), cb.to_csv());
                            }
                            r.plots.push((
                                cell_name.clone(),
                                vec![series_of(&tr, "L_rec", |s| s.l_rec), series_of(&tr, "latent d_eff", |s| s.d_eff)],
                            ));
                        }
                        Err(e) => {
                            r.fail(&e);
                            r.add_partial(&file, tr.to_csv());
                        }
                    }
                    r
                }));
            }
        }
    }
    Ok(Plan { cells, inputs: Vec::new(), extra: None })
}

fn rate_table_cells(prefix: &str, sp: &Spectrum, rates: &[f64]) -> Result<Vec<Cell>> {
    check_rates(rates)?;
    let mut cells = Vec::new();
    for &rate in rates {
        let name = format!("{prefix}_R{}", tag(rate));
        let sp = sp.clone();
        let cell_name = name.clone();
        cells.push(Cell::new(name, move || {
            let mut r = CellResult::new(cell_name.clone());
            r.metric("rate_bits", rate);
            match solve_water_level(&sp, rate).and_then(|ch| Ok((predict_from_spectrum(&sp, rate)?, ch))) {
                Ok((kept, ch)) => {
                    r.metric("water_level", ch.water_level);
                    r.metric("distortion", ch.total_distortion());
                    r.metric("active_count", ch.active_count() as f64);
                    r.metric("predicted_modes", kept as f64);
                    r.add(format!("{cell_name}.csv"), channel_table(&sp, &ch));
                }
                Err(e) => r.fail(&e),
            }
            r
        }));
    }
    Ok(cells)
}

fn plan_waterfill(loaded: &LoadedConfig) -> Result<Plan> {
    let sec = section(&loaded.config.waterfill, Mode::Waterfill)?;
    let sp = loaded.spectrum()?;
    Ok(Plan { cells: rate_table_cells("waterfill", &sp, &sec.rates)?, inputs: Vec::new(), extra: None })
}

fn plan_predict(loaded: &LoadedConfig) -> Result<Plan> {
    let sec = section(&loaded.config.predict, Mode::Predict)?.clone();
    let sp = loaded.spectrum()?;
    check_rates(&sec.rates)?;
    if !sp.is_strictly_decreasing() {
        return Err(CliError::Config("predict needs a strictly decreasing spectrum".into()));
    }
    if sec.warmup_times.is_empty() || sec.warmup_times.iter().any(|t| !(*t >= 0.0)) {
        return Err(CliError::Config("warmup_times must be nonnegative and non-empty".into()));
    }
    let mut cells = Vec::new();
    for &t in &sec.warmup_times {
        for &rate in &sec.rates {
            let name = format!("predict_T{}_R{}", tag(t), tag(rate));
            let sp = sp.clone();
            let cell_name = name.clone();
            let eps = sec.epsilon;
            cells.push(Cell::new(name, move || {
                let mut r = CellResult::new(cell_name);
                r.metric("t_wu", t);
                r.metric("rate_bits", rate);
                match predict(&sp, eps, t, rate).and_then(|p| Ok((p, shannon_distortion(&sp, rate)?))) {
                    Ok((p, floor)) => {
                        r.metric("m_wu", p.m_wu as f64);
                        r.metric("delta_m", p.delta_m);
                        r.metric("loss_lower_bound", p.loss_lower_bound);
                        r.metric("shannon_distortion", floor);
                    }
                    Err(e) => r.fail(&e),
                }
                r
            }));
        }
    }
    Ok(Plan { cells, inputs: Vec::new(), extra: None })
}

fn plan_advise(loaded: &LoadedConfig) -> Result<Plan> {
    let sec = section(&loaded.config.advise, Mode::Advise)?.clone();
    let series = parse_series(&read_text(&loaded.resolve(&sec.series))?, "1")?;
    let cell = Cell::new("advise", move || {
        let mut r = CellResult::new("advise");
        match advise_switch(&series, sec.patience, sec.tol) {
            Ok(a) => {
                r.metric("t", a.t);
                r.metric("index", a.index as f64);
                r.metric("converged", f64::from(u8::from(a.converged)));
                r.add("advise.json", json_text(&advice_json(&a)));
            }
            Err(e) => r.fail(&e),
        }
        r
    });
    Ok(Plan { cells: vec![cell], inputs: Vec::new(), extra: None })
}

fn plan_spectrum(loaded: &LoadedConfig) -> Result<Plan> {
    let sec = section(&loaded.config.spectrum, Mode::Spectrum)?.clone();
    let sp = latent_spectrum(&loaded.resolve(&sec.latents))?;
    let mut eig = String::from("j,lambda\n");
    for (j, v) in sp.values().iter().enumerate() {
        let _ = writeln!(eig, "{},{}", j + 1, fmt_float(*v));
    }
    Ok(Plan {
        cells: rate_table_cells("spectrum", &sp, &sec.rates)?,
        inputs: vec![("eigenvalues.csv".into(), eig.into_bytes())],
        extra: None,
    })
}
