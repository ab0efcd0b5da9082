//! The subcommands.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use cmmd::cmmd::{discrete_cmmd_sq, estimate, CmmdConfig, EstimatorKind};
use cmmd::datagen::{toy_tables, Scenario, ScenarioConfig};
use cmmd::doubly_robust::{estimate_dr, PropensityModel, DEFAULT_OVERLAP_DELTA};
use cmmd::embeddings::{Lambda, PairedDataset};
use cmmd::kernels::{Bandwidth, KernelSpec};
use cmmd::seeds::derive_seed;
use cmmd::testing::{run_test, Algorithm, TestConfig, DEFAULT_BOOTSTRAP, DEFAULT_SIGNIFICANCE};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::args::{Command, Opts};
use crate::io::{read_dataset, read_propensity_table, write_dataset_file};
use crate::CliError;

pub const DEFAULT_N: usize = 100;
pub const DEFAULT_TRIALS: usize = 10;
pub const DEFAULT_LEVEL: f64 = 1.0;
/// Overlap guard used for the dr scenario unless `--overlap-delta` is given.
/// Arcsine-distributed covariates put propensities below 1e-3 for a few
/// points in every few thousand.
pub const DR_SCENARIO_OVERLAP_DELTA: f64 = 1e-6;

pub fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Estimate(o) => cmd_estimate(&o.resolve()?),
        Command::Test(o) => cmd_test(&o.resolve()?),
        Command::Experiment(o) => cmd_experiment(&o.resolve()?),
        Command::Toy(o) => cmd_toy(&o.resolve()?),
        Command::Generate(o) => cmd_generate(&o.resolve()?),
    }
}

fn input(msg: impl Into<String>) -> CliError {
    CliError::Input(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Format {
    Json,
    Csv,
}

fn output_format(o: &Opts, default: Format) -> Result<Format, CliError> {
    match o.format.as_deref() {
        None => Ok(default),
        Some("json") => Ok(Format::Json),
        Some("csv") => Ok(Format::Csv),
        Some(other) => Err(input(format!("unknown format {other:?} (expected json or csv)"))),
    }
}

fn emit(o: &Opts, mut text: String) -> Result<(), CliError> {
    if !text.ends_with('\n') {
        text.push('\n');
    }
    match &o.out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn json_text(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("json values serialize")
}

fn csv_text(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out
}

fn single<T: Copy>(values: &Option<Vec<T>>, default: Option<T>, flag: &str) -> Result<T, CliError> {
    match values.as_deref() {
        None => default.ok_or_else(|| input(format!("--{flag} is required"))),
        Some([v]) => Ok(*v),
        Some(_) => Err(input(format!("--{flag} takes a single value for this command"))),
    }
}

/// A grid point: parameter name, printable value and the scenario itself.
struct GridPoint {
    param: &'static str,
    value: String,
    scenario: Scenario,
}

fn scenario_grid(o: &Opts, name: &str) -> Result<Vec<GridPoint>, CliError> {
    let null = o.null.unwrap_or(false);
    let thetas = || o.theta.clone().ok_or_else(|| input(format!("scenario {name} needs --theta")));
    let points: Vec<GridPoint> = match name {
        "sine_vs_linear" => thetas()?
            .into_iter()
            .map(|theta| GridPoint { param: "theta", value: theta.to_string(), scenario: Scenario::SineVsLinear { theta, null } })
            .collect(),
        "multidim" => o
            .dim
            .clone()
            .ok_or_else(|| input("scenario multidim needs --dim"))?
            .into_iter()
            .map(|dim| GridPoint { param: "dim", value: dim.to_string(), scenario: Scenario::Multidim { dim, null } })
            .collect(),
        "beta1" | "beta2" => thetas()?
            .into_iter()
            .map(|theta| GridPoint {
                param: "theta",
                value: theta.to_string(),
                scenario: if name == "beta1" { Scenario::Beta1 { theta } } else { Scenario::Beta2 { theta } },
            })
            .collect(),
        "dr" => vec![GridPoint {
            param: "null",
            value: null.to_string(),
            scenario: Scenario::Dr { null, printed_propensity: o.printed_propensity.unwrap_or(false) },
        }],
        other => {
            return Err(input(format!(
                "unknown scenario {other:?} (expected sine_vs_linear, multidim, beta1, beta2 or dr)"
            )))
        }
    };
    if points.is_empty() {
        return Err(input("scenario grid is empty"));
    }
    for p in &points {
        p.scenario.validate()?;
    }
    Ok(points)
}

struct Loaded {
    p: PairedDataset,
    q: PairedDataset,
    source: Value,
    scenario: Option<Scenario>,
}

fn load_data(o: &Opts, seed: u64) -> Result<Loaded, CliError> {
    match (&o.input_p, &o.input_q, &o.scenario) {
        (Some(ip), Some(iq), None) => Ok(Loaded {
            p: read_dataset(ip)?,
            q: read_dataset(iq)?,
            source: json!({"type": "csv", "input_p": ip.display().to_string(), "input_q": iq.display().to_string()}),
            scenario: None,
        }),
        (None, None, Some(name)) => {
            let grid = scenario_grid(o, name)?;
            if grid.len() != 1 {
                return Err(input("this command takes a single scenario parameter value"));
            }
            let cfg = ScenarioConfig { scenario: grid[0].scenario.clone(), n: o.n.unwrap_or(DEFAULT_N), seed };
            let (p, q) = cfg.generate()?;
            Ok(Loaded { p, q, source: serde_json::to_value(&cfg).expect("scenario serializes"), scenario: Some(cfg.scenario) })
        }
        _ => Err(input("give either both --input-p and --input-q, or --scenario")),
    }
}

fn kernel(spec: Option<&str>, bandwidth: Option<Bandwidth>) -> Result<KernelSpec, CliError> {
    let s = spec.unwrap_or("gaussian");
    if s.eq_ignore_ascii_case("gaussian") || s.eq_ignore_ascii_case("rbf") {
        return Ok(KernelSpec::Gaussian { bandwidth: bandwidth.unwrap_or(Bandwidth::Median) });
    }
    s.parse().map_err(|e: String| input(e))
}

fn stat_config(o: &Opts, level: f64, seed: u64) -> Result<CmmdConfig, CliError> {
    let mut cfg = CmmdConfig::new(
        level,
        kernel(o.kernel_x.as_deref(), o.bandwidth)?,
        kernel(o.kernel_y.as_deref(), o.bandwidth)?,
    );
    if let Some(e) = &o.estimator {
        cfg.estimator = e.parse().map_err(|e: String| input(e))?;
    }
    cfg.lambda_p = o.lambda_p.unwrap_or_default();
    cfg.lambda_q = o.lambda_q.unwrap_or_default();
    cfg.lambda_shared = o.lambda_shared.unwrap_or(Lambda::CrossValidated);
    cfg.alpha = o.alpha_mix;
    if let Some(f) = o.cv_folds {
        cfg.cv.folds = f;
    }
    if let Some(g) = &o.cv_grid {
        cfg.cv.grid = g.clone();
    }
    cfg.cv.seed = seed;
    cfg.validate()?;
    Ok(cfg)
}

fn propensity(o: &Opts, scenario: Option<&Scenario>) -> Result<Option<PropensityModel>, CliError> {
    let model = match o.propensity.as_deref() {
        Some(s) => Some(if let Some(v) = s.strip_prefix("constant:") {
            let v: f64 = v.parse().map_err(|_| input(format!("bad constant propensity {v:?}")))?;
            PropensityModel::constant(v)?
        } else if let Some(path) = s.strip_prefix("file:") {
            read_propensity_table(Path::new(path))?
        } else {
            PropensityModel::named(s)?
        }),
        None => scenario.map(Scenario::propensity).transpose()?,
    };
    let default_delta = match scenario {
        Some(Scenario::Dr { .. }) => DR_SCENARIO_OVERLAP_DELTA,
        _ => DEFAULT_OVERLAP_DELTA,
    };
    let delta = o.overlap_delta.unwrap_or(default_delta);
    model.map(|m| m.with_delta(delta)).transpose().map_err(CliError::from)
}

fn algorithm(o: &Opts, prop: Option<&PropensityModel>) -> Result<Algorithm, CliError> {
    match o.algorithm.as_deref().unwrap_or("pooled") {
        "pooled" => Ok(Algorithm::Pooled),
        "propensity" => prop
            .cloned()
            .map(Algorithm::Propensity)
            .ok_or_else(|| input("--algorithm propensity needs --propensity")),
        other => Err(input(format!("unknown algorithm {other:?} (expected pooled or propensity)"))),
    }
}

fn lambda_doc(cfg: &CmmdConfig) -> Value {
    let mut v = json!({"p": cfg.lambda_p, "q": cfg.lambda_q});
    if cfg.estimator == EstimatorKind::DoublyRobust {
        v["shared"] = json!(cfg.lambda_shared);
    }
    v
}

pub fn cmd_estimate(o: &Opts) -> Result<(), CliError> {
    let format = output_format(o, Format::Json)?;
    let seed = o.seed.unwrap_or(0);
    let data = load_data(o, seed)?;
    let cfg = stat_config(o, single(&o.level, Some(DEFAULT_LEVEL), "level")?, seed)?;
    let est = match cfg.estimator {
        EstimatorKind::DoublyRobust => {
            let prop = propensity(o, data.scenario.as_ref())?
                .ok_or_else(|| input("the dr estimator needs --propensity"))?;
            estimate_dr(&data.p, &data.q, &prop, &cfg)?
        }
        _ => estimate(&data.p, &data.q, &cfg)?,
    };
    let c = &est.config;
    let text = match format {
        Format::Json => json_text(&json!({
            "cmmd_squared": est.value,
            "level": c.level,
            "estimator": c.estimator.name(),
            "n": est.sample_sizes.0,
            "m": est.sample_sizes.1,
            "kernels": {"x": c.kernel_x.to_string(), "y": c.kernel_y.to_string()},
            "lambda": lambda_doc(c),
            "seed": seed,
            "source": data.source,
            "config": c,
        })),
        Format::Csv => csv_text(
            &["cmmd_squared", "level", "estimator", "n", "m"],
            &[vec![
                est.value.to_string(),
                c.level.to_string(),
                c.estimator.name().to_string(),
                est.sample_sizes.0.to_string(),
                est.sample_sizes.1.to_string(),
            ]],
        ),
    };
    emit(o, text)
}

fn test_config(o: &Opts, statistic: CmmdConfig, prop: Option<PropensityModel>, seed: u64) -> Result<TestConfig, CliError> {
    let alg = algorithm(o, prop.as_ref())?;
    let mut cfg = TestConfig::new(statistic, alg, seed);
    cfg.significance = o.significance.unwrap_or(DEFAULT_SIGNIFICANCE);
    cfg.bootstrap = o.bootstrap.unwrap_or(DEFAULT_BOOTSTRAP);
    cfg.dr_propensity = prop;
    cfg.workers = o.workers;
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_test(o: &Opts) -> Result<(), CliError> {
    let format = output_format(o, Format::Json)?;
    let seed = o.seed.unwrap_or(0);
    let data = load_data(o, seed)?;
    let stat = stat_config(o, single(&o.level, Some(DEFAULT_LEVEL), "level")?, seed)?;
    let prop = propensity(o, data.scenario.as_ref())?;
    let cfg = test_config(o, stat, prop, seed)?;
    let r = run_test(&data.p, &data.q, &cfg)?;
    let text = match format {
        Format::Json => json_text(&json!({
            "statistic": r.statistic,
            "p_value": r.p_value,
            "reject": r.reject,
            "bootstrap": cfg.bootstrap,
            "seed": r.seed,
            "significance": r.significance,
            "algorithm": r.algorithm,
            "level": r.config.level,
            "estimator": r.config.estimator.name(),
            "n": data.p.len(),
            "m": data.q.len(),
            "kernels": {"x": r.config.kernel_x.to_string(), "y": r.config.kernel_y.to_string()},
            "lambda": lambda_doc(&r.config),
            "source": data.source,
            "config": r.config,
            "bootstrap_statistics": r.bootstrap_statistics,
        })),
        Format::Csv => csv_text(
            &["statistic", "p_value", "reject", "bootstrap", "seed"],
            &[vec![
                r.statistic.to_string(),
                r.p_value.to_string(),
                r.reject.to_string(),
                cfg.bootstrap.to_string(),
                r.seed.to_string(),
            ]],
        ),
    };
    emit(o, text)
}

/// Seed of trial `t` under master seed `master`; both the data and the
/// bootstrap use it.
pub fn trial_seed(master: u64, t: usize) -> u64 {
    derive_seed(master, t as u64)
}

pub fn cmd_experiment(o: &Opts) -> Result<(), CliError> {
    let format = output_format(o, Format::Csv)?;
    if o.input_p.is_some() || o.input_q.is_some() {
        return Err(input("experiment runs on generated data; use --scenario"));
    }
    let name = o.scenario.clone().ok_or_else(|| input("experiment needs --scenario"))?;
    let grid = scenario_grid(o, &name)?;
    let levels = o.level.clone().unwrap_or_else(|| vec![0.0, 1.0, 2.0]);
    let trials = o.trials.unwrap_or(DEFAULT_TRIALS);
    if trials == 0 {
        return Err(input("--trials must be at least 1"));
    }
    let n = o.n.unwrap_or(DEFAULT_N);
    let master = o.seed.unwrap_or(0);
    // validate everything once before spending time on trials
    let mut configs = Vec::with_capacity(levels.len());
    for &level in &levels {
        configs.push(stat_config(o, level, master)?);
    }
    let first_prop = propensity(o, Some(&grid[0].scenario))?;
    let template = test_config(o, configs[0].clone(), first_prop, master)?;
    let algorithm_name = template.algorithm.name();

    let pairs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|g| (0..trials).map(move |t| (g, t))).collect();
    let done = AtomicUsize::new(0);
    let outcomes: Vec<Vec<bool>> = pairs
        .par_iter()
        .map(|&(g, t)| -> Result<Vec<bool>, CliError> {
            let seed = trial_seed(master, t);
            let scenario = &grid[g].scenario;
            let (p, q) = ScenarioConfig { scenario: scenario.clone(), n, seed }.generate()?;
            let prop = propensity(o, Some(scenario))?;
            let mut rejections = Vec::with_capacity(levels.len());
            for stat in &configs {
                let mut stat = stat.clone();
                stat.cv.seed = seed;
                let cfg = test_config(o, stat, prop.clone(), seed)?;
                rejections.push(run_test(&p, &q, &cfg)?.reject);
            }
            let k = done.fetch_add(1, Ordering::Relaxed) + 1;
            eprintln!("experiment: {k}/{} trials done", pairs.len());
            Ok(rejections)
        })
        .collect::<Result<_, _>>()?;

    let mut rows = Vec::new();
    for (g, point) in grid.iter().enumerate() {
        for (l, cfg) in configs.iter().enumerate() {
            let hits = (0..trials).filter(|&t| outcomes[g * trials + t][l]).count();
            rows.push((point, cfg, hits as f64 / trials as f64));
        }
    }
    let bootstrap = template.bootstrap;
    let text = match format {
        Format::Csv => csv_text(
            &["scenario", "param", "value", "level", "estimator", "algorithm", "n", "trials", "bootstrap", "rejection_rate"],
            &rows
                .iter()
                .map(|(pt, cfg, rate)| {
                    vec![
                        name.clone(),
                        pt.param.to_string(),
                        pt.value.clone(),
                        cfg.level.to_string(),
                        cfg.estimator.name().to_string(),
                        algorithm_name.to_string(),
                        n.to_string(),
                        trials.to_string(),
                        bootstrap.to_string(),
                        rate.to_string(),
                    ]
                })
                .collect::<Vec<_>>(),
        ),
        Format::Json => json_text(&json!({
            "scenario": name,
            "n": n,
            "trials": trials,
            "bootstrap": bootstrap,
            "seed": master,
            "algorithm": algorithm_name,
            "significance": template.significance,
            "config": configs[0],
            "rows": rows.iter().map(|(pt, cfg, rate)| json!({
                "param": pt.param,
                "value": pt.value,
                "scenario_config": pt.scenario,
                "level": cfg.level,
                "estimator": cfg.estimator.name(),
                "rejection_rate": rate,
            })).collect::<Vec<_>>(),
        })),
    };
    emit(o, text)
}

pub fn cmd_toy(o: &Opts) -> Result<(), CliError> {
    let format = output_format(o, Format::Json)?;
    let (p, candidates) = toy_tables();
    let mut table = Vec::new();
    for (i, q) in candidates.iter().enumerate() {
        let vals = [0.0, 1.0, 2.0].map(|s| discrete_cmmd_sq(&p, q, s));
        let [a, b, c] = vals;
        table.push((format!("Q{}", i + 1), [a?, b?, c?]));
    }
    let text = match format {
        Format::Json => json_text(&json!({
            "table": table.iter().map(|(name, v)| json!({
                "model": name,
                "cmmd0_squared": v[0],
                "cmmd1_squared": v[1],
                "cmmd2_squared": v[2],
            })).collect::<Vec<_>>(),
        })),
        Format::Csv => csv_text(
            &["model", "cmmd0_squared", "cmmd1_squared", "cmmd2_squared"],
            &table
                .iter()
                .map(|(name, v)| std::iter::once(name.clone()).chain(v.iter().map(f64::to_string)).collect())
                .collect::<Vec<_>>(),
        ),
    };
    emit(o, text)
}

pub fn cmd_generate(o: &Opts) -> Result<(), CliError> {
    let name = o.scenario.clone().ok_or_else(|| input("generate needs --scenario"))?;
    let (out_p, out_q) = match (&o.out, &o.out_q) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(input("generate needs --out (first sample) and --out-q (second sample)")),
    };
    let grid = scenario_grid(o, &name)?;
    if grid.len() != 1 {
        return Err(input("generate takes a single scenario parameter value"));
    }
    let cfg = ScenarioConfig { scenario: grid[0].scenario.clone(), n: o.n.unwrap_or(DEFAULT_N), seed: o.seed.unwrap_or(0) };
    let (p, q) = cfg.generate()?;
    write_dataset_file(out_p, &p)?;
    write_dataset_file(out_q, &q)
}
