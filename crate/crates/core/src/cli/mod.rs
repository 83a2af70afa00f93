//! Batch front end. Every command prints exactly one JSON summary line on
//! stdout; logs and tables go to stderr.

pub mod config;
pub mod demos;
pub mod golden;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::field::{Field, FieldError};
use crate::functional::{fit_multipliers, FunctionalError, VariationalProblem};
use crate::optimize::{kkt_residual, minimize_with, Init, OptimizeError, Progress};
use crate::problems::{run_m1, M1Oracle, ProblemError};
use crate::splitting::{split_family, SplitError, SplitMode, SplitQuery};
use crate::symmetry::{detect_symmetry, SymmetryError, SymmetryOptions, Verdict};

use config::{read_field, InitConfig, ProblemConfig, RunConfig};
use demos::DemoOutcome;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at `{pointer}`: {message}")]
    Config { pointer: String, message: String },
    #[error("io: {0}")]
    Io(String),
    #[error("{0}")]
    Usage(String),
    #[error("golden file not found: {}", .0.display())]
    MissingGolden(PathBuf),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
    #[error(transparent)]
    Functional(#[from] FunctionalError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Symmetry(#[from] SymmetryError),
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Config { .. } => "config_schema",
            CliError::Io(_) => "io",
            CliError::Usage(_) => "usage",
            CliError::MissingGolden(_) => "missing_golden",
            CliError::Problem(e) => e.code(),
            CliError::Optimize(e) => e.code(),
            CliError::Functional(e) => e.code(),
            CliError::Field(_) => "field",
            CliError::Split(e) => e.code(),
            CliError::Symmetry(e) => e.code(),
        }
    }

    fn details(&self) -> Value {
        let mut v = json!({"code": self.code(), "message": self.to_string()});
        if let CliError::Config { pointer, .. } = self {
            v["pointer"] = json!(pointer);
        }
        let density = match self {
            CliError::Problem(ProblemError::Density(e)) => Some(e),
            CliError::Problem(ProblemError::Functional(FunctionalError::Density(e))) => Some(e),
            CliError::Functional(FunctionalError::Density(e)) => Some(e),
            _ => None,
        };
        if let Some(pos) = density.and_then(|e| e.position()) {
            v["position"] = json!(pos);
        }
        v
    }
}

#[derive(Debug, Parser)]
#[command(name = "varsym", version, about = "Constrained minimization and symmetry detection on grids")]
pub struct Cli {
    /// Run configuration (JSON); relative paths inside resolve against its directory.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory for artifacts.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the node count per axis.
    #[arg(long, global = true)]
    pub grid: Option<usize>,
    /// Machine output only: no tables or progress on stderr.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DemoName {
    M1,
    M2,
    Decoupled,
    OneD,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Minimize the configured problem.
    Minimize,
    /// Find splitting hyperplanes for the configured field.
    SplitFind,
    /// Run symmetry detection on the configured field.
    Symmetrize,
    /// Recompute the oracle and compare with the golden file.
    Verify {
        #[arg(long)]
        golden: Option<PathBuf>,
    },
    /// Shoot the radial ground state and write the profile.
    Oracle {
        /// Rewrite the golden file from a fresh oracle run.
        #[arg(long)]
        regenerate: bool,
        #[arg(long)]
        golden: Option<PathBuf>,
    },
    /// Run one of the catalog examples end to end.
    Demo { name: DemoName },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Minimize => "minimize",
            Command::SplitFind => "split-find",
            Command::Symmetrize => "symmetrize",
            Command::Verify { .. } => "verify",
            Command::Oracle { .. } => "oracle",
            Command::Demo { .. } => "demo",
        }
    }
}

/// Exit code and the summary line of one command.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub exit_code: i32,
    pub summary: Value,
}

enum Status {
    Ok,
    Inconclusive,
    Failed,
}

impl Status {
    fn exit(&self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::Inconclusive => 2,
            Status::Failed => 1,
        }
    }

    fn label(&self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::Inconclusive => "inconclusive",
            Status::Failed => "failed",
        }
    }
}

/// Parses arguments, runs the command and prints the summary line.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprint!("{e}");
            let summary = json!({"status": "error", "exit_code": 1, "error": {"code": "usage", "message": e.kind().to_string()}});
            println!("{summary}");
            return 1;
        }
    };
    let level = if cli.json { "warn" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).target(env_logger::Target::Stderr).try_init();
    let out = execute(&cli);
    println!("{}", out.summary);
    out.exit_code
}

pub fn execute(cli: &Cli) -> Outcome {
    let mut ctx = Context { cli, artifacts: Vec::new(), config_hash: None, seed: cli.seed, grid: Value::Null, tolerances: Value::Null };
    let result = match &cli.command {
        Command::Minimize => ctx.minimize(),
        Command::SplitFind => ctx.split_find(),
        Command::Symmetrize => ctx.symmetrize(),
        Command::Verify { golden } => ctx.verify(golden.as_deref()),
        Command::Oracle { regenerate, golden } => ctx.oracle(*regenerate, golden.as_deref()),
        Command::Demo { name } => ctx.demo(*name),
    };
    let (status, body, error) = match result {
        Ok((s, b)) => (s, b, None),
        Err(e) => {
            log::error!("{e}");
            (Status::Failed, Value::Null, Some(e))
        }
    };
    let exit_code = status.exit();
    let mut summary = Map::new();
    summary.insert("command".into(), json!(cli.command.name()));
    summary.insert("status".into(), json!(if error.is_some() { "error" } else { status.label() }));
    summary.insert("exit_code".into(), json!(exit_code));
    summary.insert("config_hash".into(), json!(ctx.config_hash));
    summary.insert("seed".into(), json!(ctx.seed));
    summary.insert("grid".into(), ctx.grid);
    summary.insert("tolerances".into(), ctx.tolerances);
    summary.insert("artifacts".into(), json!(ctx.artifacts));
    if let Some(e) = error {
        summary.insert("error".into(), e.details());
    }
    if let Value::Object(b) = body {
        summary.extend(b);
    }
    Outcome { exit_code, summary: Value::Object(summary) }
}

struct Context<'a> {
    cli: &'a Cli,
    artifacts: Vec<String>,
    config_hash: Option<String>,
    seed: Option<u64>,
    grid: Value,
    tolerances: Value,
}

fn grid_json(p: &VariationalProblem) -> Value {
    json!({"domain": p.domain(), "counts": p.grid.counts(), "spacing": p.grid.spacing()})
}

fn tolerances_json(cfg: &RunConfig) -> Value {
    json!({
        "eps_q": cfg.optimizer.eps_q,
        "eps_k": cfg.optimizer.eps_k,
        "radial_tol": cfg.symmetry.radial_tol,
        "identity_tol": cfg.symmetry.identity_tol,
        "split_rel_tol": cfg.symmetry.split.rel_tol,
    })
}

fn log_progress(p: &Progress) {
    log::info!(
        "outer {} inner {} energy {:.10e} violation {:.3e} kkt {:.3e} penalty {:.1e}",
        p.outer,
        p.inner,
        p.energy,
        p.violation,
        p.kkt,
        p.penalty
    );
}

/// Values along axis 0 through the node nearest the middle of the other axes.
pub fn write_slice(u: &Field, path: &Path) -> Result<(), CliError> {
    use std::io::Write;
    let g = u.grid();
    let mut idx: Vec<usize> = g.counts().iter().map(|c| c / 2).collect();
    let file = std::fs::File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e: std::io::Error| CliError::Io(e.to_string());
    let header: Vec<String> = (1..=u.components()).map(|c| format!("u{c}")).collect();
    writeln!(w, "x,{}", header.join(",")).map_err(io)?;
    for i in 0..g.counts()[0] {
        idx[0] = i;
        let node = g.node_index(&idx);
        if !g.inside(node) {
            continue;
        }
        let vals: Vec<String> = u.at(node).iter().map(|v| format!("{v:.17e}")).collect();
        writeln!(w, "{:.17e},{}", g.coord(node, 0), vals.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

impl Context<'_> {
    fn out_dir(&self, cfg: Option<&RunConfig>) -> Result<PathBuf, CliError> {
        let dir = match (&self.cli.out, cfg.and_then(|c| c.output.clone())) {
            (Some(d), _) => d.clone(),
            (None, Some(d)) => self.config_dir().join(d),
            (None, None) => PathBuf::from("varsym-out"),
        };
        std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        Ok(dir)
    }

    fn config_dir(&self) -> PathBuf {
        self.cli.config.as_ref().and_then(|p| p.parent().map(Path::to_path_buf)).unwrap_or_default()
    }

    fn record(&mut self, path: &Path) {
        self.artifacts.push(path.display().to_string());
    }

    fn write_json(&mut self, dir: &Path, name: &str, v: &Value) -> Result<(), CliError> {
        let path = dir.join(name);
        let text = serde_json::to_string_pretty(v).map_err(|e| CliError::Io(e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.record(&path);
        Ok(())
    }

    fn write_text(&mut self, dir: &Path, name: &str, text: &str) -> Result<(), CliError> {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.record(&path);
        Ok(())
    }

    fn write_field(&mut self, dir: &Path, stem: &str, u: &Field) -> Result<(), CliError> {
        let path = dir.join(format!("{stem}.bin"));
        let file = std::fs::File::create(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        u.write_binary(std::io::BufWriter::new(file))?;
        self.record(&path);
        let slice = dir.join(format!("{stem}_slice.csv"));
        write_slice(u, &slice)?;
        self.record(&slice);
        Ok(())
    }

    /// Loads the config, applies the command-line overrides and records the
    /// effective hash.
    fn load_config(&mut self) -> Result<RunConfig, CliError> {
        let path = self.cli.config.as_ref().ok_or_else(|| CliError::Usage("--config is required".into()))?;
        let mut cfg = RunConfig::load(path)?;
        if let Some(s) = self.cli.seed {
            cfg.seed = s;
        }
        if let Some(n) = self.cli.grid {
            cfg.set_grid(n);
        }
        cfg.optimizer.seed = cfg.seed;
        cfg.symmetry.split.seed = cfg.seed;
        self.seed = Some(cfg.seed);
        self.config_hash = Some(cfg.hash());
        self.tolerances = tolerances_json(&cfg);
        Ok(cfg)
    }

    fn input_field(&self, cfg: &RunConfig, p: &VariationalProblem) -> Result<Field, CliError> {
        let rel = cfg.field.as_ref().ok_or_else(|| CliError::Usage("config has no `field` to read".into()))?;
        let u = read_field(&self.config_dir().join(rel))?;
        if u.grid().counts() != p.grid.counts() || u.grid().domain() != p.domain() {
            return Err(CliError::Field(FieldError::GridMismatch));
        }
        Ok(Field::new(p.grid.clone(), u.components(), u.into_values())?)
    }

    fn minimize(&mut self) -> Result<(Status, Value), CliError> {
        let cfg = self.load_config()?;
        let built = cfg.problem.build()?;
        self.grid = grid_json(&built.problem);
        let dir = self.out_dir(Some(&cfg))?;
        if let (ProblemConfig::M1(config::M1Config { n, box_factor, .. }), InitConfig::Auto, Some(oracle)) = (&cfg.problem, &cfg.init, &built.oracle) {
            let run = run_m1(oracle, *n, *box_factor, &cfg.optimizer, &mut log_progress)?;
            let mut result = run.summary();
            result["oracle"] = json!(oracle.golden());
            self.write_json(&dir, "result.json", &result)?;
            self.write_field(&dir, "field", &run.u)?;
            let status = if run.result.converged { Status::Ok } else { Status::Failed };
            return Ok((status, json!({"result": result})));
        }
        let p = &built.problem;
        let init = match cfg.initial_field(&built, &self.config_dir())? {
            Some(f) => Init::Field(f),
            None => Init::Seed(cfg.seed),
        };
        let res = minimize_with(p, init, &cfg.optimizer, &mut log_progress)?;
        let mut result = res.summary();
        if p.k() > 0 {
            let (alpha, fit) = fit_multipliers(p, &res.u)?;
            result["fitted_multipliers"] = json!(alpha);
            result["fit_residual"] = json!(fit);
            result["fitted_kkt"] = json!(kkt_residual(p, &res.u, &alpha)?);
        }
        if p.dim() == 1 && p.components() == 1 {
            result["symmetry_1d"] = json!(crate::problems::check_1d_symmetry(&res.u)?);
        }
        self.write_json(&dir, "result.json", &result)?;
        self.write_field(&dir, "field", &res.u)?;
        let status = if res.converged { Status::Ok } else { Status::Failed };
        Ok((status, json!({"result": result})))
    }

    fn split_find(&mut self) -> Result<(Status, Value), CliError> {
        let cfg = self.load_config()?;
        let built = cfg.problem.build()?;
        let p = &built.problem;
        self.grid = grid_json(p);
        let u = self.input_field(&cfg, p)?;
        let theorem = cfg.symmetry.theorem.unwrap_or(if p.translation_invariant { 2 } else { 1 });
        let (mode, count) = match theorem {
            1 => (SplitMode::Vector, p.dim().saturating_sub(p.k())),
            _ => (SplitMode::Affine, (p.dim() + 1).saturating_sub(p.k())),
        };
        if count == 0 {
            return Err(CliError::Usage(format!("no splitting planes to find for k = {} in dimension {}", p.k(), p.dim())));
        }
        let q = SplitQuery::new(p, &u, mode)?.with_options(cfg.symmetry.split.clone());
        let (status, planes, note) = match split_family(q, count) {
            Ok(z) => (Status::Ok, z, None),
            Err(e @ (SplitError::NotConverged { .. } | SplitError::NoSignChange { .. })) => (Status::Inconclusive, vec![], Some(e.to_string())),
            Err(e) => return Err(e.into()),
        };
        let body = json!({"theorem": theorem, "mode": mode, "planes": planes, "note": note});
        let dir = self.out_dir(Some(&cfg))?;
        self.write_json(&dir, "splits.json", &body)?;
        Ok((status, body))
    }

    fn symmetrize(&mut self) -> Result<(Status, Value), CliError> {
        let cfg = self.load_config()?;
        let built = cfg.problem.build()?;
        let p = &built.problem;
        self.grid = grid_json(p);
        let u = self.input_field(&cfg, p)?;
        let report = detect_symmetry(p, &u, &cfg.symmetry)?;
        if !self.cli.json {
            eprint!("{}", report.text_summary());
        }
        let dir = self.out_dir(Some(&cfg))?;
        self.write_json(&dir, "report.json", &report.to_json())?;
        self.write_text(&dir, "report.txt", &report.text_summary())?;
        let status = if report.verdict == Verdict::Inconclusive { Status::Inconclusive } else { Status::Ok };
        Ok((status, json!({"verdict": report.verdict, "subspace_dim": report.subspace.as_ref().map(|v| v.dim()), "radial_defect": report.radial_defect, "point_defect": report.point_defect})))
    }

    fn verify(&mut self, root: Option<&Path>) -> Result<(Status, Value), CliError> {
        let root = root.map(Path::to_path_buf).unwrap_or_else(golden::default_root);
        let file = golden::load(&root)?;
        let rows = golden::verify(&file)?;
        if !self.cli.json {
            eprint!("{}", golden::table(&rows));
        }
        let failed: Vec<&str> = rows.iter().filter(|r| !r.pass).map(|r| r.name.as_str()).collect();
        self.tolerances = json!(file.entries.iter().map(|e| (e.name.clone(), json!(e.rel_tol))).collect::<Map<String, Value>>());
        let status = if failed.is_empty() { Status::Ok } else { Status::Failed };
        Ok((status, json!({"golden": root.display().to_string(), "rows": rows, "failed": failed})))
    }

    fn oracle(&mut self, regenerate: bool, root: Option<&Path>) -> Result<(Status, Value), CliError> {
        if regenerate {
            let root = root.map(Path::to_path_buf).unwrap_or_else(golden::default_root);
            let (path, file) = golden::regenerate(&root)?;
            self.record(&path);
            return Ok((Status::Ok, json!({"golden": file})));
        }
        let (oracle, cfg) = match self.cli.config {
            Some(_) => {
                let cfg = self.load_config()?;
                let oracle = match &cfg.problem {
                    ProblemConfig::M1(config::M1Config { compacton, dim, .. }) | ProblemConfig::M2(config::M2Config { compacton, dim, .. }) => M1Oracle::new(&compacton.spec()?, *dim, 1e-4)?,
                    _ => return Err(CliError::Usage("the oracle exists for the compacton catalogs only".into())),
                };
                (oracle, Some(cfg))
            }
            None => (M1Oracle::reference()?, None),
        };
        let dir = self.out_dir(cfg.as_ref())?;
        let path = dir.join("profile.csv");
        let file = std::fs::File::create(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        oracle.profile.write_csv(std::io::BufWriter::new(file)).map_err(|e| CliError::Io(e.to_string()))?;
        self.record(&path);
        let meta = json!({
            "profile": oracle.profile.metadata(),
            "constants": oracle.constants,
            "golden": oracle.golden(),
            "shooting_residual": oracle.ground_state.ode_residual(&oracle.spec),
            "compacton": oracle.spec.verify(),
        });
        self.write_json(&dir, "profile.json", &meta)?;
        Ok((Status::Ok, meta))
    }

    fn demo(&mut self, name: DemoName) -> Result<(Status, Value), CliError> {
        let cfg = match self.cli.config {
            Some(_) => Some(self.load_config()?),
            None => None,
        };
        let optimizer = cfg.as_ref().map(|c| c.optimizer.clone()).unwrap_or_default();
        let symmetry = cfg.as_ref().map(|c| c.symmetry.clone()).unwrap_or_else(SymmetryOptions::default);
        if cfg.is_none() {
            self.tolerances = json!({"eps_q": optimizer.eps_q, "eps_k": optimizer.eps_k, "radial_tol": symmetry.radial_tol, "identity_tol": symmetry.identity_tol, "split_rel_tol": symmetry.split.rel_tol});
        }
        let grid = self.cli.grid;
        let outcome: DemoOutcome = match name {
            DemoName::M1 => {
                let mut d = demos::M1Demo { optimizer, symmetry, ..Default::default() };
                d.n = grid.unwrap_or(d.n);
                demos::m1(&d, &mut log_progress)?
            }
            DemoName::M2 => {
                let mut d = demos::M2Demo { symmetry, ..Default::default() };
                d.n = grid.unwrap_or(d.n);
                demos::m2(&d)?
            }
            DemoName::Decoupled => {
                let mut d = demos::DecoupledDemo { optimizer, symmetry, ..Default::default() };
                d.n = grid.unwrap_or(d.n);
                demos::decoupled(&d, &mut log_progress)?
            }
            DemoName::OneD => {
                let mut d = demos::OneDDemo { optimizer, ..Default::default() };
                d.n = grid.unwrap_or(d.n);
                demos::one_d(&d, &mut log_progress)?
            }
        };
        if let Some((_, f)) = outcome.fields.first() {
            self.grid = json!({"domain": f.grid().domain(), "counts": f.grid().counts(), "spacing": f.grid().spacing()});
        }
        if !self.cli.json {
            eprint!("{}", outcome.table());
            if let Some(r) = &outcome.report {
                eprint!("{}", r.text_summary());
            }
        }
        let dir = self.out_dir(cfg.as_ref())?;
        let checks = json!(outcome.checks);
        self.write_json(&dir, "result.json", &json!({"demo": outcome.name, "checks": checks, "details": outcome.details}))?;
        if let Some(r) = &outcome.report {
            self.write_json(&dir, "report.json", &r.to_json())?;
            self.write_text(&dir, "report.txt", &(r.text_summary() + &outcome.table()))?;
        }
        for (stem, f) in &outcome.fields {
            self.write_field(&dir, stem, f)?;
        }
        if let Some(prof) = &outcome.profile {
            let path = dir.join("profile.csv");
            let file = std::fs::File::create(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            prof.write_csv(std::io::BufWriter::new(file)).map_err(|e| CliError::Io(e.to_string()))?;
            self.record(&path);
            self.write_json(&dir, "profile.json", &prof.metadata())?;
        }
        let status = if outcome.passed() { Status::Ok } else { Status::Failed };
        Ok((
            status,
            json!({
                "demo": outcome.name,
                "passed": outcome.passed(),
                "failed_checks": outcome.failed(),
                "verdict": outcome.report.as_ref().map(|r| r.verdict),
            }),
        ))
    }
}
