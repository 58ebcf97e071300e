use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use meanfield_core::catalog::{self, CatalogEntry};
use meanfield_core::fbsde::{PathBundle, StageRecord, TimeGrid};
use meanfield_core::hamiltonian::{cone_bound_check, p_concavity_check_1d};
use meanfield_core::lq_oracle::{solve_lq_mfg, solve_lq_mftc, LqSolution, DEFAULT_ODE_STEPS};
use meanfield_core::meanfield::assemble_mfg;
use meanfield_core::meanfield::{
    solve_mfg, solve_mfg_generic_drift, solve_mftc, solve_mftc_generic_drift, solve_mftc_with,
    EquilibriumSolution, Summary,
};
use meanfield_core::measure::write_cloud_csv;
use meanfield_core::model::{draw_point_samples, finite_difference_audit, AuditReport, Vector};
use meanfield_core::monotonicity::{
    anti_monotonicity_budget, check_beta_monotonicity, check_condition_separable,
    check_condition_split, check_displacement_quasi, check_generic_drift, check_mftc_convexity,
    check_small_mean_field_effect, threshold_big_lambda, threshold_big_lambda_reduced,
    threshold_c_lt, CltVariant, CouplingSampler,
};
use meanfield_core::rng::substream_seed;
use meanfield_core::{CheckReport, ParticleCloud, Witness};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::error::CliError;

pub const CONDITIONS: [&str; 10] = [
    "displacement_quasi",
    "separable",
    "small_mean_field",
    "split",
    "beta_monotonicity",
    "mftc_convexity",
    "generic_drift",
    "cone_bound",
    "p_concavity",
    "fd_audit",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveKind {
    Mfg,
    Mftc,
    MfgGeneric,
    MftcGeneric,
}

fn output_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Output(format!("{}: {e}", path.display()))
}

struct OutputDir(PathBuf);

impl OutputDir {
    fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| output_error(dir, e))?;
        Ok(Self(dir.to_path_buf()))
    }

    fn file(&self, name: &str) -> Result<(PathBuf, BufWriter<File>), CliError> {
        let path = self.0.join(name);
        let file = File::create(&path).map_err(|e| output_error(&path, e))?;
        Ok((path, BufWriter::new(file)))
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let (path, mut w) = self.file(name)?;
        serde_json::to_writer_pretty(&mut w, value).map_err(|e| output_error(&path, e))?;
        writeln!(w)
            .and_then(|_| w.flush())
            .map_err(|e| output_error(&path, e))
    }
}

struct Setup {
    entry: CatalogEntry,
    grid: TimeGrid,
    paths: PathBundle,
}

fn setup(config: &ExperimentConfig) -> Result<Setup, CliError> {
    let entry = catalog::model(&config.model_name, &config.overrides)?;
    let grid = config.time_grid()?;
    let paths = entry.path_bundle(&grid, config.particles, config.seed)?;
    Ok(Setup { entry, grid, paths })
}

#[derive(Serialize)]
struct SolveSummary<'a> {
    model: &'a str,
    seed: u64,
    particles: usize,
    #[serde(flatten)]
    result: Summary,
    #[serde(skip_serializing_if = "<[_]>::is_empty")]
    stages: &'a [StageRecord],
    config: &'a ExperimentConfig,
}

pub fn solve(config: &ExperimentConfig, kind: SolveKind) -> Result<(), CliError> {
    let s = setup(config)?;
    let params = config.solver_params();
    let spec = &s.entry.spec;
    let sol = match kind {
        SolveKind::Mfg => solve_mfg(spec, &s.grid, &s.paths, &params)?,
        SolveKind::Mftc => {
            solve_mftc_with(spec, config.solver.mftc_driver, &s.grid, &s.paths, &params)?
        }
        SolveKind::MfgGeneric => solve_mfg_generic_drift(spec, &s.grid, &s.paths, &params)?,
        SolveKind::MftcGeneric => solve_mftc_generic_drift(spec, &s.grid, &s.paths, &params)?,
    };
    let out = OutputDir::create(&config.output_dir)?;
    let (path, w) = out.file("paths.csv")?;
    sol.paths.write_csv(w).map_err(|e| output_error(&path, e))?;
    out.json(
        "summary.json",
        &SolveSummary {
            model: &config.model_name,
            seed: config.seed,
            particles: config.particles,
            result: sol.summary(),
            stages: &sol.diagnostics.stages,
            config,
        },
    )?;
    run_checks(config, &s.entry, &out, &config.checks)
}

/// Run the named checks, write their reports and fail if any verdict is fail.
fn run_checks(
    config: &ExperimentConfig,
    entry: &CatalogEntry,
    out: &OutputDir,
    names: &[String],
) -> Result<(), CliError> {
    for name in names {
        if !CONDITIONS.contains(&name.as_str()) {
            return Err(CliError::Config(format!(
                "unknown check `{name}`; known: {}",
                CONDITIONS.join(", ")
            )));
        }
    }
    let mut failed = Vec::new();
    for name in names {
        let report = evaluate_check(name, entry, config)?;
        write_report(out, name, &report)?;
        if report.verdict == meanfield_core::Verdict::Fail {
            failed.push(name.clone());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::ChecksFailed(failed))
    }
}

pub fn check(config: &ExperimentConfig, condition: &str) -> Result<(), CliError> {
    let entry = catalog::model(&config.model_name, &config.overrides)?;
    let out = OutputDir::create(&config.output_dir)?;
    run_checks(config, &entry, &out, &[condition.to_string()])
}

fn write_report(out: &OutputDir, name: &str, report: &CheckReport) -> Result<(), CliError> {
    out.json(&format!("check_{name}.json"), report)?;
    for (i, w) in report.witnesses.iter().enumerate() {
        for (role, rows) in &w.clouds {
            let points: Vec<Vector> = rows.iter().map(|r| Vector::from_row_slice(r)).collect();
            let cloud = ParticleCloud::uniform(points)?;
            let (path, file) = out.file(&format!("check_{name}_witness{i}_{role}.csv"))?;
            write_cloud_csv(&cloud, file).map_err(|e| output_error(&path, e))?;
        }
    }
    Ok(())
}

fn evaluate_check(
    name: &str,
    entry: &CatalogEntry,
    config: &ExperimentConfig,
) -> Result<CheckReport, CliError> {
    let spec = &entry.spec;
    let seed = substream_seed(config.seed, &format!("check/{name}"));
    let samples = config.check_samples;
    let sampler = CouplingSampler::new(spec.n, seed);
    let report = match name {
        "displacement_quasi" => {
            let lambda_m = config
                .lambda_m
                .unwrap_or_else(|| spec.constants.value_or_zero("lambda_m"));
            let dx_g = spec.dx_g.clone();
            let grad = move |x: &Vector, m: &ParticleCloud| dx_g(x, m);
            check_displacement_quasi(&grad, lambda_m, &sampler, samples)?
        }
        "separable" => check_condition_separable(spec, &sampler, samples)?,
        "small_mean_field" => check_small_mean_field_effect(spec, &sampler, samples)?,
        "split" => check_condition_split(spec, &sampler, samples)?,
        "beta_monotonicity" => {
            let zero = ParticleCloud::uniform(vec![Vector::zeros(spec.n)])?;
            let noise_dim =
                (spec.sigma)(0.0, &Vector::zeros(spec.n), &zero, &Vector::zeros(spec.d)).ncols();
            check_beta_monotonicity(&assemble_mfg(spec)?, noise_dim, &sampler, samples)?
        }
        "mftc_convexity" => check_mftc_convexity(spec, &sampler, samples)?,
        "generic_drift" => check_generic_drift(spec, &sampler, samples)?,
        "cone_bound" => cone_bound_check(spec, &draw_point_samples(spec.n, spec.d, samples, seed))?,
        "p_concavity" => {
            p_concavity_check_1d(spec, &draw_point_samples(spec.n, spec.d, samples, seed))?
        }
        "fd_audit" => audit_as_report(&finite_difference_audit(spec, samples, seed)?),
        _ => unreachable!("condition names are validated"),
    };
    Ok(report)
}

fn audit_as_report(audit: &AuditReport) -> CheckReport {
    let mut report = CheckReport::new("fd_audit", audit.samples);
    for e in &audit.entries {
        report.set_margin(&e.derivative, audit.tolerance - e.max_relative_error);
    }
    if let Some(err) = audit.split_max_abs_error {
        report.set_margin("split_max_abs_error", err);
    }
    if let Some(err) = audit.sigma_control_sensitivity {
        report.set_margin("sigma_control_sensitivity", err);
    }
    let ok = audit.passed();
    let witness = (!ok).then(|| {
        let flagged: Vec<&str> = audit
            .entries
            .iter()
            .filter(|e| e.flagged)
            .map(|e| e.derivative.as_str())
            .collect();
        let worst = audit
            .entries
            .iter()
            .map(|e| audit.tolerance - e.max_relative_error)
            .fold(f64::INFINITY, f64::min);
        Witness::new(
            format!(
                "derivatives disagree with finite differences: {}",
                flagged.join(", ")
            ),
            worst,
        )
    });
    report.conclude(ok, witness)
}

/// JSON has no infinities; overflowing thresholds are written as strings.
fn number(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        json!(x.to_string())
    }
}

pub fn thresholds(config: &ExperimentConfig) -> Result<(), CliError> {
    let entry = catalog::model(&config.model_name, &config.overrides)?;
    let c = &entry.spec.constants;
    let horizon = config.time_grid()?.horizon();
    let l = match config.thresholds.l {
        Some(l) => l,
        None => c.value("L")?,
    };
    let k_beta = config.thresholds.k_beta.unwrap_or(l);
    let gamma_beta = config.thresholds.gamma_beta;

    let mut c_lt = serde_json::Map::new();
    for (key, variant) in [
        ("mp_full", CltVariant::MpFull),
        ("mp_reduced", CltVariant::MpReduced),
        ("fbsde_local", CltVariant::FbsdeLocal),
        ("fbsde_local_reduced", CltVariant::FbsdeLocalReduced),
    ] {
        c_lt.insert(key.into(), number(threshold_c_lt(l, horizon, variant)?));
    }
    let budget = (|| {
        anti_monotonicity_budget(
            c.value("lambda_v")?,
            c.value("lambda_x")?,
            c.value_or_zero("lambda_m"),
            c.value_or_zero("L_x"),
            c.value_or_zero("L_v"),
            c.value_or_zero("l_x"),
            l,
            c.value_or_zero("l_g"),
        )
    })();
    let (budget, budget_error) = match budget {
        Ok(b) => (
            json!({"A": number(b.a), "denominator": number(b.denominator), "budget_ok": b.budget_ok}),
            Value::Null,
        ),
        Err(e) => (Value::Null, json!(e.to_string())),
    };
    let report = json!({
        "model": config.model_name,
        "T": horizon,
        "L": l,
        "K_beta": k_beta,
        "Gamma_beta": gamma_beta,
        "big_lambda": number(threshold_big_lambda(horizon, k_beta, gamma_beta)?),
        "big_lambda_reduced": number(threshold_big_lambda_reduced(horizon, k_beta, gamma_beta)?),
        "c_lt": c_lt,
        "budget": budget,
        "budget_error": budget_error,
    });
    OutputDir::create(&config.output_dir)?.json("thresholds.json", &report)
}

#[derive(Serialize)]
struct Comparison {
    problem: &'static str,
    cost: f64,
    cost_stderr: f64,
    /// relative L2 error of the particle controls against the oracle feedback
    control_relative_l2: f64,
    /// largest deviation of the empirical mean from the oracle mean, in standard errors
    mean_max_standard_errors: f64,
    riccati_at_t0: f64,
}

fn compare(sol: &EquilibriumSolution, oracle: &LqSolution, problem: &'static str) -> Comparison {
    let paths = &sol.paths;
    let n = paths.state_dim();
    let (mut err, mut norm) = (0.0, 0.0);
    let mut worst_se = 0.0f64;
    for node in 0..paths.nodes() {
        let t = paths.times[node];
        for k in 0..paths.particles() {
            let target = oracle.control(t, paths.x[node][k].as_slice());
            for (j, want) in target.iter().enumerate() {
                err += (paths.v[node][k][j] - want).powi(2);
                norm += want * want;
            }
        }
        let count = paths.particles() as f64;
        for j in 0..n {
            let xs = paths.x[node].iter().map(|x| x[j]);
            let mean = xs.clone().sum::<f64>() / count;
            let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (count - 1.0);
            let dev = (mean - oracle.mean_at(t, j)).abs();
            let se = (var / count).sqrt();
            worst_se = worst_se.max(if se > 0.0 {
                dev / se
            } else if dev > 0.0 {
                f64::INFINITY
            } else {
                0.0
            });
        }
    }
    Comparison {
        problem,
        cost: sol.cost.value,
        cost_stderr: sol.cost.stderr,
        control_relative_l2: if norm > 0.0 {
            (err / norm).sqrt()
        } else {
            err.sqrt()
        },
        mean_max_standard_errors: worst_se,
        riccati_at_t0: oracle.riccati[0][0],
    }
}

pub fn lq_compare(config: &ExperimentConfig) -> Result<(), CliError> {
    let s = setup(config)?;
    let lq = s.entry.lq.as_ref().ok_or_else(|| {
        CliError::Config(format!(
            "model {} has no closed-form counterpart",
            config.model_name
        ))
    })?;
    if (s.grid.t0, s.grid.t_end) != (lq.t0, lq.t_end) {
        return Err(CliError::Config(format!(
            "grid [{}, {}] differs from the model horizon [{}, {}]",
            s.grid.t0, s.grid.t_end, lq.t0, lq.t_end
        )));
    }
    let params = config.solver_params();
    let out = OutputDir::create(&config.output_dir)?;
    let mfg_oracle = solve_lq_mfg(lq, DEFAULT_ODE_STEPS)?;
    let mftc_oracle = solve_lq_mftc(lq, DEFAULT_ODE_STEPS)?;
    let mfg = solve_mfg(&s.entry.spec, &s.grid, &s.paths, &params)?;
    let mftc = solve_mftc(&s.entry.spec, &s.grid, &s.paths, &params)?;
    for (name, oracle) in [
        ("oracle_mfg.csv", &mfg_oracle),
        ("oracle_mftc.csv", &mftc_oracle),
    ] {
        let (path, w) = out.file(name)?;
        oracle.write_csv(w).map_err(|e| output_error(&path, e))?;
    }
    let gap = |a: &[Vec<f64>], b: &[Vec<f64>]| {
        a.iter()
            .zip(b)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    };
    out.json(
        "lq_compare.json",
        &json!({
            "model": config.model_name,
            "seed": config.seed,
            "particles": config.particles,
            "mfg": compare(&mfg, &mfg_oracle, "mfg"),
            "mftc": compare(&mftc, &mftc_oracle, "mftc"),
            "oracle_gain_gap": gap(&mfg_oracle.gain, &mftc_oracle.gain),
            "oracle_offset_gap": gap(&mfg_oracle.offset, &mftc_oracle.offset),
        }),
    )
}
