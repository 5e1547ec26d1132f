use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use fictdisc_core::audit::{
    audit_models, audit_span_trace, bias_scaling_study, compose_theorem_bounds, evaluate_theta, missing_claims,
    write_audit_csv, AuditRecord,
};
use fictdisc_core::bounds::fictitious_discount;
use fictdisc_core::estimators::Estimator;
use fictdisc_core::fixtures::{by_name, generate};
use fictdisc_core::mixing::mixing_constants;
use fictdisc_core::train::{run_exact_gradient_training, run_training, StopReason, TrainConfig};
use fictdisc_core::Mdp;
use log::{info, warn};
use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, TrainSection};
use crate::error::CliError;
use crate::output::{
    bias_series, write_bias_csv, write_gnuplot_series, write_timing, write_trace_csv, Checkpoint, EVAL_HEADER,
    EVAL_SCHEMA,
};

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

pub fn gen_mdp(states: usize, actions: usize, seed: u64, floor: f64, out: Option<&Path>) -> Result<(), CliError> {
    let mdp = generate(states, actions, seed, floor)?;
    let text = mdp.to_json_string();
    match out {
        Some(path) => {
            let mut w = create(path)?;
            w.write_all(text.as_bytes())?;
            w.flush()?;
            info!("wrote {} (fingerprint {})", path.display(), mdp.fingerprint());
        }
        None => print!("{text}"),
    }
    Ok(())
}

pub fn audit(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<AuditRecord>, CliError> {
    let section = cfg.audit.as_ref().ok_or_else(|| CliError::Config("config has no `audit` section".into()))?;
    let suite = section.suite(cfg.seed)?;
    let models = cfg.load_models()?;
    let mut records = audit_models(&models, &suite)?;

    if section.span {
        let spans: Vec<Vec<AuditRecord>> = models
            .par_iter()
            .map(|(name, mdp)| Ok(audit_span_trace(mdp, name, &mixing_constants(mdp)?)?))
            .collect::<Result<_, CliError>>()?;
        records.extend(spans.into_iter().flatten());
    }

    let jobs: Vec<_> = models
        .iter()
        .flat_map(|m| section.compose.iter().flat_map(move |p| [Estimator::Dae, Estimator::Dd].map(|a| (m, *p, a))))
        .collect();
    let composed: Vec<Option<AuditRecord>> = jobs
        .par_iter()
        .map(|((name, mdp), probe, algorithm)| {
            let train = TrainConfig::new(*algorithm, probe.horizon, probe.sigma, probe.epsilon, probe.k_max, cfg.seed);
            let trace = run_exact_gradient_training(mdp, &train)?;
            if trace.certificate.is_none() {
                warn!("{name} {algorithm} H={}: no certificate within {} iterations", probe.horizon, probe.k_max);
                return Ok(None);
            }
            Ok(Some(compose_theorem_bounds(mdp, name, &trace, probe.horizon, probe.sigma, *algorithm)?.record))
        })
        .collect::<Result<_, CliError>>()?;
    records.extend(composed.into_iter().flatten());

    let path = out_dir.join("audit.csv");
    let mut w = create(&path)?;
    write_audit_csv(&records, &mut w)?;
    w.flush()?;

    let missing = missing_claims(&records);
    if !missing.is_empty() {
        warn!("claims without records: {}", missing.join(", "));
    }
    let vacuous = records.iter().filter(|r| r.vacuous).count();
    let failed = records.iter().filter(|r| !r.pass).count();
    info!("{} records, {failed} failed, {vacuous} vacuous; wrote {}", records.len(), path.display());
    if failed > 0 {
        for r in records.iter().filter(|r| !r.pass) {
            warn!("FAIL {} on {}: lhs {} > rhs {}", r.claim_id, r.fixture, r.lhs, r.rhs);
        }
        return Err(CliError::AuditFailed { failed, total: records.len() });
    }
    Ok(records)
}

/// Flag values that replace fields of the config's `train` section.
#[derive(Debug, Clone, Default)]
pub struct TrainOverrides {
    pub algorithm: Option<Estimator>,
    pub horizon: Option<usize>,
    pub sigma: Option<f64>,
    pub epsilon: Option<f64>,
    pub k_max: Option<usize>,
    pub seed: Option<u64>,
    pub log_every: Option<usize>,
    pub exact: bool,
}

impl TrainOverrides {
    pub fn apply(&self, mut section: TrainSection) -> TrainSection {
        let c = &mut section.config;
        c.algorithm = self.algorithm.unwrap_or(c.algorithm);
        c.horizon = self.horizon.unwrap_or(c.horizon);
        c.sigma = self.sigma.unwrap_or(c.sigma);
        c.epsilon = self.epsilon.unwrap_or(c.epsilon);
        c.k_max = self.k_max.unwrap_or(c.k_max);
        c.seed = self.seed.unwrap_or(c.seed);
        c.log_every = self.log_every.unwrap_or(c.log_every);
        section.exact |= self.exact;
        section
    }
}

pub fn train(cfg: &ExperimentConfig, overrides: &TrainOverrides, out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let section = cfg.train.clone().ok_or_else(|| CliError::Config("config has no `train` section".into()))?;
    let section = overrides.apply(section);
    let models = cfg.load_models()?;
    let mut seeds = vec![section.config.seed];
    seeds.extend(section.extra_seeds.iter().copied().filter(|s| *s != section.config.seed));
    for (_, mdp) in &models {
        section.config.validate(mdp)?;
    }

    let jobs: Vec<(&(String, Mdp), u64)> = models.iter().flat_map(|m| seeds.iter().map(move |s| (m, *s))).collect();
    let results = jobs
        .par_iter()
        .map(|((name, mdp), seed)| {
            let run = TrainConfig { seed: *seed, ..section.config.clone() };
            let trace = if section.exact { run_exact_gradient_training(mdp, &run)? } else { run_training(mdp, &run)? };
            Ok((name.as_str(), mdp, *seed, trace))
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let mut written = Vec::new();
    for (name, mdp, seed, trace) in results {
        let stem = format!("{name}-{}-seed{seed}", section.config.algorithm);
        let trace_path = out_dir.join(format!("trace-{stem}.csv"));
        let mut w = create(&trace_path)?;
        write_trace_csv(&trace.rows, &mut w)?;
        w.flush()?;
        let mut w = create(&out_dir.join(format!("timing-{stem}.csv")))?;
        write_timing(&trace.rows, &mut w)?;
        w.flush()?;
        let checkpoint = Checkpoint::from_trace(name, mdp.fingerprint(), &trace);
        fs::write(
            out_dir.join(format!("theta-{stem}.json")),
            serde_json::to_string_pretty(&checkpoint).expect("plain data"),
        )?;
        if let Some(cert) = &trace.certificate {
            let text = serde_json::to_string_pretty(cert).expect("plain data");
            fs::write(out_dir.join(format!("certificate-{stem}.json")), text)?;
        }
        match trace.stop {
            StopReason::Certified => info!("{stem}: certified at k={}", trace.last_k),
            StopReason::IterationCap => info!("{stem}: iteration cap {} reached", trace.last_k),
            StopReason::Diverged => warn!("{stem}: diverged after k={}", trace.last_k),
        }
        written.push(trace_path);
    }
    Ok(written)
}

pub fn compare_bias(
    cfg: &ExperimentConfig,
    sigma: Option<f64>,
    beta: Option<f64>,
    out_dir: &Path,
) -> Result<(), CliError> {
    let section = cfg.bias.as_ref().ok_or_else(|| CliError::Config("config has no `bias` section".into()))?;
    if section.h_grid.is_empty() || section.h_grid.contains(&0) {
        return Err(CliError::Config("bias `h_grid` must be non-empty with positive horizons".into()));
    }
    let (sigma, beta) = (sigma.unwrap_or(section.sigma), beta.unwrap_or(section.beta));
    let models = cfg.load_models()?;
    let table = models
        .par_iter()
        .map(|(name, mdp)| {
            let theta = match &section.theta {
                Some(rows) => rows_to_matrix(rows, mdp)?,
                None => DMatrix::zeros(mdp.num_states(), mdp.num_actions()),
            };
            let rows = bias_scaling_study(mdp, &mixing_constants(mdp)?, &section.h_grid, sigma, beta, &theta)?;
            Ok((name.clone(), rows))
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let mut w = create(&out_dir.join("bias.csv"))?;
    write_bias_csv(&table, &mut w)?;
    w.flush()?;
    for (name, rows) in &table {
        for (series, points) in bias_series(rows) {
            let mut w = create(&out_dir.join("gnuplot").join(format!("{name}-{series}.dat")))?;
            write_gnuplot_series(series, &points, &mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn rows_to_matrix(rows: &[Vec<f64>], mdp: &Mdp) -> Result<DMatrix<f64>, CliError> {
    if rows.len() != mdp.num_states() || rows.iter().any(|r| r.len() != mdp.num_actions()) {
        return Err(CliError::Config(format!("logits must be {}x{}", mdp.num_states(), mdp.num_actions())));
    }
    Ok(DMatrix::from_fn(rows.len(), mdp.num_actions(), |s, a| rows[s][a]))
}

/// A fixture name or a model file path.
pub fn load_model(spec: &str) -> Result<(String, Mdp), CliError> {
    if let Some(mdp) = by_name(spec) {
        return Ok((spec.to_string(), mdp));
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(CliError::Config(format!("`{spec}` is neither a fixture nor an existing file")));
    }
    let label = path.file_stem().map_or_else(|| spec.to_string(), |s| s.to_string_lossy().into_owned());
    Ok((label, Mdp::from_json_file(path)?))
}

pub fn eval<W: Write>(model: &str, checkpoint: &Path, horizon: usize, gamma: f64, mut w: W) -> Result<(), CliError> {
    let (name, mdp) = load_model(model)?;
    let text = fs::read_to_string(checkpoint)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", checkpoint.display())))?;
    let ckpt: Checkpoint =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", checkpoint.display())))?;
    let theta = rows_to_matrix(&ckpt.theta, &mdp)?;
    if ckpt.fingerprint != mdp.fingerprint() {
        warn!("checkpoint was trained on model {}, evaluating on {}", ckpt.fingerprint, mdp.fingerprint());
    }
    let (vh, vg, eta, opt) = evaluate_theta(&mdp, &theta, horizon, gamma)?;
    writeln!(w, "{EVAL_SCHEMA}")?;
    writeln!(w, "{EVAL_HEADER}")?;
    writeln!(
        w,
        "{name},{horizon},{gamma},{vh},{vg},{eta},{},{},{}",
        opt.vh - vh,
        opt.vgamma_hi - vg,
        opt.eta_hi - eta
    )?;
    Ok(())
}

/// `γ` from an explicit value or from `1 − H^{−σ}`.
pub fn resolve_gamma(horizon: usize, gamma: Option<f64>, sigma: Option<f64>) -> Result<f64, CliError> {
    match (gamma, sigma) {
        (Some(g), None) if (0.0..1.0).contains(&g) => Ok(g),
        (Some(g), None) => Err(CliError::Config(format!("γ = {g} must lie in [0, 1)"))),
        (None, Some(s)) if s > 0.0 => Ok(fictitious_discount(horizon, s)),
        (None, Some(s)) => Err(CliError::Config(format!("σ = {s} must be positive"))),
        _ => Err(CliError::Config("give exactly one of --gamma and --sigma".into())),
    }
}
