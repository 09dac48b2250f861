//! Experiment driver: reads a flat key-value config, dispatches to the
//! library, and writes seed- and config-tagged artifacts.

mod config;

use brwre::env::presets;
use brwre::rates::{critical_a, solve_q_shooting};
use brwre::sim::{estimate_extinction_rate, estimate_survival, BarrierMode, BarrierSpec};
use brwre::stats::{check_conditions, solve_theta_star, LambdaConfig};
use brwre::walk::{builtin_many_to_one_checks, tube_probability, TubeSpec};
use brwre::{estimate_gamma, gamma_sigma, CountLaw, EnvironmentModel, GammaParams};
use clap::{Parser, Subcommand};
use config::{Config, ConfigError};
use serde_json::json;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "brwre", version, about = "Barrier problems for branching walks in random environments")]
struct Cli {
    /// Experiment config (key = value lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config's `seed` key.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (never affects results).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Critical tilt, dispersion constants, tube constant, and a_c.
    Constants,
    /// Estimate the tube decay constant gamma(beta).
    Gamma,
    /// Empirical check of the moment conditions.
    Conditions,
    /// Survival frequency of the killed population at one horizon.
    Survive,
    /// Normalized extinction rates over a horizon grid.
    Rate,
    /// Corridor confinement probability of the associated walk.
    Tube,
    /// Exact many-to-one identity checks on the shipped fixtures.
    M2oCheck,
    /// Extinction-rate solutions over a barrier-coefficient grid.
    Sweep,
}

enum AppError {
    Config(String),
    Numeric(String),
    Io(String),
}

impl AppError {
    fn code(&self) -> u8 {
        match self {
            AppError::Config(_) => 2,
            AppError::Numeric(_) => 3,
            AppError::Io(_) => 4,
        }
    }
    fn render(&self) -> String {
        let (kind, msg) = match self {
            AppError::Config(m) => ("config", m),
            AppError::Numeric(m) => ("numeric", m),
            AppError::Io(m) => ("io", m),
        };
        format!("error[{kind}]: {msg}")
    }
}

impl From<ConfigError> for AppError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io(m) => AppError::Io(m),
            other => AppError::Config(other.to_string()),
        }
    }
}

impl From<brwre::Error> for AppError {
    fn from(e: brwre::Error) -> Self {
        match e {
            // Bad values straight out of the config violate a documented
            // precondition; everything else is a genuine numeric failure.
            brwre::Error::InvalidParameter { .. } => AppError::Config(e.to_string()),
            other => AppError::Numeric(other.to_string()),
        }
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Io(e.to_string())
    }
}

struct App {
    config: Config,
    seed: u64,
    out: PathBuf,
}

impl App {
    fn cfg(&self) -> &Config {
        &self.config
    }

    fn write_csv(&self, name: &str, columns: &[&str], rows: &[Vec<String>]) -> Result<PathBuf, AppError> {
        let path = self.out.join(name);
        let mut text = format!("# config={} seed={}\n", self.config.hash, self.seed);
        text.push_str(&columns.join(","));
        text.push('\n');
        for row in rows {
            text.push_str(&row.join(","));
            text.push('\n');
        }
        std::fs::write(&path, text)?;
        Ok(path)
    }

    fn emit(&self, payload: serde_json::Value) {
        let mut root = json!({
            "config_hash": self.config.hash,
            "seed": self.seed,
        });
        root.as_object_mut()
            .unwrap()
            .extend(payload.as_object().cloned().unwrap_or_default());
        println!("{}", serde_json::to_string_pretty(&root).unwrap());
    }
}

/// Lossless decimal rendering for CSV cells.
fn fnum(x: f64) -> String {
    format!("{x:.16e}")
}

fn fopt(x: Option<f64>) -> String {
    x.map_or_else(|| "nan".to_string(), fnum)
}

fn build_model(cfg: &Config) -> Result<EnvironmentModel, AppError> {
    match cfg.str_or("model.family", "gaussian") {
        "gaussian" => {
            let count = cfg.usize_or("model.count", 2)?;
            let mu = cfg.f64_or("model.mu", 0.0)?;
            let sigma = cfg.f64_or("model.sigma", 1.0)?;
            Ok(presets::degenerate_gaussian(count as u32, mu, sigma))
        }
        "gaussian-family" => {
            let weights = cfg.list_f64("model.weights")?;
            let sigmas = cfg.list_f64("model.sigmas")?;
            let mus = cfg
                .opt_list_f64("model.mus")?
                .unwrap_or_else(|| vec![0.0; sigmas.len()]);
            if weights.len() != sigmas.len() || mus.len() != sigmas.len() {
                return Err(AppError::Config(
                    "model.weights, model.sigmas, model.mus must have equal lengths".into(),
                ));
            }
            let count = cfg.usize_or("model.count", 2)? as u32;
            let displacement = weights
                .into_iter()
                .zip(mus.into_iter().zip(sigmas))
                .map(|(w, (mu, sigma))| (w, (mu, sigma)))
                .collect();
            let spec = brwre::GaussianFamilySpec::new(
                vec![(1.0, CountLaw::fixed(count))],
                displacement,
            );
            Ok(EnvironmentModel::gaussian_family("config-family", spec)?)
        }
        "preset" => match cfg.require_str("model.preset")? {
            "binary-flat" => Ok(presets::binary_flat()),
            "unit-dispersion" => Ok(presets::unit_dispersion_gaussian()),
            "two-sigma" => Ok(presets::two_sigma_family()),
            "skewed-binary" => Ok(presets::skewed_binary()),
            "lower-gap-mixture" => Ok(presets::condition4_violating_mixture()),
            other => Err(AppError::Config(format!(
                "unknown model.preset `{other}` (binary-flat, unit-dispersion, two-sigma, skewed-binary, lower-gap-mixture)"
            ))),
        },
        other => Err(AppError::Config(format!(
            "unknown model.family `{other}` (gaussian, gaussian-family, preset)"
        ))),
    }
}

fn build_barrier(cfg: &Config) -> Result<BarrierSpec, AppError> {
    let a = cfg.require_f64("barrier.a")?;
    let alpha = cfg.f64_or("barrier.alpha", 1.0 / 3.0)?;
    let mode = match cfg.str_or("barrier.mode", "random-centered") {
        "random-centered" => BarrierMode::RandomCentered,
        "fixed-centered" => BarrierMode::FixedCentered,
        other => {
            return Err(AppError::Config(format!(
                "unknown barrier.mode `{other}` (random-centered, fixed-centered)"
            )))
        }
    };
    Ok(BarrierSpec::new(a, alpha, mode)?)
}

fn gamma_params(cfg: &Config, seed: u64) -> Result<GammaParams, AppError> {
    let defaults = GammaParams::default();
    Ok(GammaParams {
        horizon: cfg.f64_or("gamma.horizon", defaults.horizon)?,
        dt: cfg.f64_or("gamma.dt", defaults.dt)?,
        grid: cfg.usize_or("gamma.grid", defaults.grid)?,
        replicas: cfg.usize_or("gamma.replicas", defaults.replicas)?,
        window: (
            cfg.f64_or("gamma.window_lo", defaults.window.0)?,
            cfg.f64_or("gamma.window_hi", defaults.window.1)?,
        ),
        tube_width: cfg.f64_or("gamma.tube_width", defaults.tube_width)?,
        bridge_correction: cfg.bool_or("gamma.bridge", defaults.bridge_correction)?,
        seed,
    })
}

/// The tube constant: exact for degenerate environments, otherwise the MC
/// estimate at beta = sigma_A / sigma_Q. An explicit `<prefix>.gamma_sigma`
/// config value short-circuits both.
fn resolve_gamma_sigma(
    app: &App,
    model: &EnvironmentModel,
    prefix: &str,
) -> Result<Option<f64>, AppError> {
    if let Some(v) = app.cfg().opt_f64(&format!("{prefix}.gamma_sigma"))? {
        return Ok(Some(v));
    }
    if model.is_degenerate() {
        let constants = solve_theta_star(model)?;
        let gs = gamma_sigma(&constants, &gamma_params(app.cfg(), app.seed)?)?;
        return Ok(Some(gs.value));
    }
    Ok(None)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.render());
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), AppError> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(AppError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| AppError::Config(format!("thread pool: {e}")))?;
    }
    let config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => match cli.cmd {
            // The fixture battery ships its own inputs.
            Cmd::M2oCheck => Config::empty(),
            _ => return Err(AppError::Config("--config is required".into())),
        },
    };
    let seed = cli
        .seed
        .map(Ok)
        .or_else(|| config.opt_u64("seed").transpose())
        .transpose()?
        .unwrap_or(0);
    std::fs::create_dir_all(&cli.out)?;
    let app = App {
        config,
        seed,
        out: cli.out,
    };
    match cli.cmd {
        Cmd::Constants => cmd_constants(&app),
        Cmd::Gamma => cmd_gamma(&app),
        Cmd::Conditions => cmd_conditions(&app),
        Cmd::Survive => cmd_survive(&app),
        Cmd::Rate => cmd_rate(&app),
        Cmd::Tube => cmd_tube(&app),
        Cmd::M2oCheck => cmd_m2o(&app),
        Cmd::Sweep => cmd_sweep(&app),
    }
}

fn cmd_constants(app: &App) -> Result<(), AppError> {
    let model = build_model(app.cfg())?;
    let constants = solve_theta_star(&model)?;
    let gs = gamma_sigma(&constants, &gamma_params(app.cfg(), app.seed)?)?;
    let a_c = critical_a(gs.value, constants.theta_star)?;
    app.emit(json!({
        "constants": constants,
        "gamma_sigma": { "beta": gs.beta, "value": gs.value, "stderr": gs.stderr },
        "a_c": a_c,
    }));
    Ok(())
}

fn cmd_gamma(app: &App) -> Result<(), AppError> {
    let beta = app.cfg().f64_or("gamma.beta", 0.0)?;
    let params = gamma_params(app.cfg(), app.seed)?;
    let est = estimate_gamma(beta, &params)?;
    let rows: Vec<Vec<String>> = est
        .per_replica
        .iter()
        .map(|r| {
            vec![
                r.replica.to_string(),
                fnum(r.slope),
                fnum(r.log_mass_final),
            ]
        })
        .collect();
    let path = app.write_csv("gamma.csv", &["replica", "slope", "log_mass_final"], &rows)?;
    app.emit(json!({
        "beta": est.beta,
        "value": est.value,
        "stderr": est.stderr,
        "replicas": est.per_replica.len(),
        "artifact": path.display().to_string(),
    }));
    Ok(())
}

fn cmd_conditions(app: &App) -> Result<(), AppError> {
    let model = build_model(app.cfg())?;
    let cfg = app.cfg();
    let defaults = LambdaConfig::default();
    let lambda = LambdaConfig {
        lambda1: cfg.f64_or("conditions.lambda1", defaults.lambda1)?,
        lambda2: cfg.f64_or("conditions.lambda2", defaults.lambda2)?,
        lambda3: cfg.f64_or("conditions.lambda3", defaults.lambda3)?,
        lambda4: cfg.f64_or("conditions.lambda4", defaults.lambda4)?,
        lambda5: cfg.f64_or("conditions.lambda5", defaults.lambda5)?,
        ys: cfg
            .opt_list_f64("conditions.ys")?
            .unwrap_or(defaults.ys),
    };
    let samples = cfg.usize_or("conditions.samples", 20_000)?;
    let report = check_conditions(&model, &lambda, samples, app.seed)?;
    app.emit(json!({ "report": report }));
    Ok(())
}

fn cmd_survive(app: &App) -> Result<(), AppError> {
    let model = build_model(app.cfg())?;
    let barrier = build_barrier(app.cfg())?;
    let n = app.cfg().usize_or("sim.n", 0)?;
    let replicas = app.cfg().usize_or("sim.replicas", 0)?;
    let cap = app.cfg().usize_or("sim.cap", 100_000)?;
    let est = estimate_survival(&model, &barrier, n, replicas, cap, app.seed)?;
    let rows: Vec<Vec<String>> = est
        .outcomes
        .iter()
        .map(|o| {
            vec![
                o.replica.to_string(),
                o.y_n.to_string(),
                fopt(o.m_n),
                (o.survived as u8).to_string(),
                (o.truncated as u8).to_string(),
            ]
        })
        .collect();
    let path = app.write_csv(
        "survive.csv",
        &["replica", "y_n", "m_n", "survived", "truncated"],
        &rows,
    )?;
    app.emit(json!({
        "n": est.n,
        "replicas": est.replicas,
        "survivors": est.survivors,
        "p_survive_hat": est.p_survive_hat,
        "stderr": est.stderr,
        "truncation_rate": est.truncation_rate,
        "artifact": path.display().to_string(),
    }));
    Ok(())
}

fn cmd_rate(app: &App) -> Result<(), AppError> {
    let model = build_model(app.cfg())?;
    let barrier = build_barrier(app.cfg())?;
    let n_grid = app.cfg().list_usize("sim.n_grid")?;
    let replicas = app.cfg().usize_or("sim.replicas", 0)?;
    let cap = app.cfg().usize_or("sim.cap", 100_000)?;
    let gs = resolve_gamma_sigma(app, &model, "rate")?;
    let points = estimate_extinction_rate(&model, &barrier, &n_grid, replicas, cap, gs, app.seed)?;
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| {
            vec![
                p.n.to_string(),
                p.replicas.to_string(),
                p.survivors.to_string(),
                fnum(p.p_hat),
                fopt(p.normalized_rate),
                fopt(p.one_sided_rate_bound),
                fopt(p.predicted_rate),
                fnum(p.truncation_rate),
            ]
        })
        .collect();
    let path = app.write_csv(
        "rate.csv",
        &[
            "n",
            "replicas",
            "survivors",
            "p_hat",
            "normalized_rate",
            "one_sided_rate_bound",
            "predicted_rate",
            "truncation_rate",
        ],
        &rows,
    )?;
    app.emit(json!({ "points": points, "artifact": path.display().to_string() }));
    Ok(())
}

fn cmd_tube(app: &App) -> Result<(), AppError> {
    let model = build_model(app.cfg())?;
    let cfg = app.cfg();
    let half_width = cfg.require_f64("tube.half_width")?;
    let mut spec = if cfg.bool_or("tube.boundary_start", false)? {
        TubeSpec::boundary_start(half_width)
    } else {
        TubeSpec::flat(half_width)
    };
    spec.alpha = cfg.f64_or("tube.alpha", spec.alpha)?;
    if let Some(v) = cfg.opt_f64("tube.xi_cap_exponent")? {
        spec = spec.with_xi_caps(v);
    }
    let n = cfg.usize_or("tube.n", 0)?;
    let replicas = cfg.usize_or("tube.replicas", 0)?;
    let gs = resolve_gamma_sigma(app, &model, "tube")?;
    let est = tube_probability(&model, &spec, n, replicas, gs, app.seed)?;
    let row = vec![
        est.n.to_string(),
        est.replicas.to_string(),
        est.hits.to_string(),
        fnum(est.p_hat),
        fopt(est.normalized_rate),
        fopt(est.one_sided_rate_bound),
        fnum(est.corridor_constant),
        fopt(est.predicted_rate),
    ];
    let path = app.write_csv(
        "tube.csv",
        &[
            "n",
            "replicas",
            "hits",
            "p_hat",
            "normalized_rate",
            "one_sided_rate_bound",
            "corridor_constant",
            "predicted_rate",
        ],
        &[row],
    )?;
    app.emit(json!({ "estimate": est, "artifact": path.display().to_string() }));
    Ok(())
}

fn cmd_m2o(app: &App) -> Result<(), AppError> {
    let checks = builtin_many_to_one_checks()?;
    let rows: Vec<Vec<String>> = checks
        .iter()
        .map(|c| {
            vec![
                c.fixture.clone(),
                c.functional.clone(),
                (c.capped as u8).to_string(),
                c.n.to_string(),
                fnum(c.lhs),
                fnum(c.rhs),
                fnum(c.relative_gap),
            ]
        })
        .collect();
    let path = app.write_csv(
        "m2o.csv",
        &[
            "fixture",
            "functional",
            "capped",
            "n",
            "lhs",
            "rhs",
            "relative_gap",
        ],
        &rows,
    )?;
    let worst = checks.iter().map(|c| c.relative_gap).fold(0.0, f64::max);
    app.emit(json!({
        "checks": checks.len(),
        "max_relative_gap": worst,
        "artifact": path.display().to_string(),
    }));
    if worst > 1e-10 {
        return Err(AppError::Numeric(format!(
            "many-to-one identity gap {worst:e} exceeds 1e-10"
        )));
    }
    Ok(())
}

fn cmd_sweep(app: &App) -> Result<(), AppError> {
    let model = build_model(app.cfg())?;
    let constants = solve_theta_star(&model)?;
    let theta = constants.theta_star;
    let gs = resolve_gamma_sigma(app, &model, "sweep")?.ok_or_else(|| {
        AppError::Config("sweep.gamma_sigma is required for non-degenerate models".into())
    })?;
    let a_c = critical_a(gs, theta)?;
    let a_grid = app
        .cfg()
        .opt_list_f64("sweep.a_grid")?
        .unwrap_or_else(|| vec![0.0, 0.25 * a_c, 0.5 * a_c, 0.75 * a_c]);
    let mesh = app.cfg().usize_or("sweep.mesh", 10_000)?;
    let mut rows = Vec::with_capacity(a_grid.len());
    let mut summary = Vec::with_capacity(a_grid.len());
    for &a in &a_grid {
        let sol = solve_q_shooting(a, 1.0 / 3.0, gs, theta, mesh)?;
        rows.push(vec![
            fnum(a),
            fnum(sol.q0),
            fnum(sol.rate),
            fnum(sol.residual_at_1),
            fnum(sol.integral_check),
        ]);
        summary.push(json!({ "a": a, "q0": sol.q0, "rate": sol.rate }));
    }
    let path = app.write_csv(
        "sweep.csv",
        &["a", "q0", "rate", "residual_at_1", "integral_check"],
        &rows,
    )?;
    app.emit(json!({
        "theta": theta,
        "gamma_sigma": gs,
        "a_c": a_c,
        "solutions": summary,
        "artifact": path.display().to_string(),
    }));
    Ok(())
}
