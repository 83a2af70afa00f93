//! Run configuration files: JSON, `_`-prefixed keys ignored anywhere, schema
//! errors reported with JSON-pointer paths.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::compacton::{CompactonSpec, REFERENCE_DELTA};
use crate::density::DensitySet;
use crate::field::Field;
use crate::functional::VariationalProblem;
use crate::grid::{Domain, Grid};
use crate::optimize::MinimizeOptions;
use crate::problems::{bump_field, make_1d, make_m1, make_m2_on, make_pk_decoupled, m1_init, two_bump_grid, M1Oracle};
use crate::symmetry::SymmetryOptions;

use super::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Mandatory: nothing defaults to the clock.
    pub seed: u64,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub init: InitConfig,
    #[serde(default)]
    pub optimizer: MinimizeOptions,
    #[serde(default)]
    pub symmetry: SymmetryOptions,
    /// Input field (binary container) for split-find and symmetrize.
    #[serde(default)]
    pub field: Option<PathBuf>,
    /// Output directory.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompactonParams {
    pub alpha: f64,
    pub s1: f64,
    pub s2: f64,
    pub delta: f64,
}

impl Default for CompactonParams {
    fn default() -> Self {
        CompactonParams { alpha: 0.5, s1: 1.5, s2: 2.5, delta: REFERENCE_DELTA }
    }
}

impl CompactonParams {
    pub fn spec(&self) -> Result<CompactonSpec, CliError> {
        Ok(CompactonSpec::new(self.alpha, self.s1, self.s2, self.delta).map_err(crate::problems::ProblemError::from)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintConfig {
    pub density: String,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineProblem {
    #[serde(default = "one")]
    pub components: usize,
    pub energy: String,
    pub constraints: Vec<ConstraintConfig>,
    pub domain: Domain,
    pub n: usize,
    #[serde(default)]
    pub translation_invariant: bool,
}

fn one() -> usize {
    1
}

fn three() -> usize {
    3
}

/// One constraint `V(u) = -1` on a cube of half-width `box_factor * R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct M1Config {
    #[serde(default)]
    pub compacton: CompactonParams,
    #[serde(default = "three")]
    pub dim: usize,
    pub n: usize,
    pub box_factor: f64,
}

/// Two constraints on the elongated two-bump box; `separation` is `|y| / R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct M2Config {
    #[serde(default)]
    pub compacton: CompactonParams,
    #[serde(default = "three")]
    pub dim: usize,
    pub n: usize,
    pub separation: f64,
    pub margin: f64,
}

/// `copies` uncoupled copies of a scalar inline problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoupledConfig {
    pub copies: usize,
    pub base: InlineProblem,
}

/// `1/2 u'^2 + F(u)` on `[-half_width, half_width]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OneDConfig {
    pub potential: String,
    pub constraints: Vec<ConstraintConfig>,
    pub half_width: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "catalog", rename_all = "snake_case")]
pub enum ProblemConfig {
    M1(M1Config),
    M2(M2Config),
    Decoupled(DecoupledConfig),
    OneD(OneDConfig),
    Inline(InlineProblem),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitConfig {
    /// Catalog default for the compacton problems, seeded bumps otherwise.
    #[default]
    Auto,
    Seed,
    Bump { center: Vec<f64>, amp: f64, radius: f64 },
    File { path: PathBuf },
}

/// Removes every object key starting with `_`.
pub fn strip_notes(v: &mut Value) {
    match v {
        Value::Object(map) => {
            map.retain(|k, _| !k.starts_with('_'));
            map.values_mut().for_each(strip_notes);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_notes),
        _ => {}
    }
}

fn pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{}", key.replace('~', "~0").replace('/', "~1"))),
            Segment::Enum { variant } => out.push_str(&format!("/{variant}")),
            Segment::Unknown => {}
        }
    }
    out
}

/// Tagged enums buffer their content, which hides the path of an error inside
/// the problem; this re-parses the selected variant alone to recover it.
fn problem_error(v: &Value) -> Option<CliError> {
    fn inner<T: serde::de::DeserializeOwned>(v: Value) -> Option<CliError> {
        serde_path_to_error::deserialize::<_, T>(v)
            .err()
            .map(|e| CliError::Config { pointer: format!("/problem{}", pointer(e.path())), message: e.inner().to_string() })
    }
    let mut body = v.clone();
    let catalog = body.as_object_mut()?.remove("catalog")?;
    match catalog.as_str()? {
        "m1" => inner::<M1Config>(body),
        "m2" => inner::<M2Config>(body),
        "decoupled" => inner::<DecoupledConfig>(body),
        "one_d" => inner::<OneDConfig>(body),
        "inline" => inner::<InlineProblem>(body),
        _ => None,
    }
}

impl RunConfig {
    pub fn from_str(text: &str) -> Result<Self, CliError> {
        let mut v: Value = serde_json::from_str(text).map_err(|e| CliError::Config { pointer: String::new(), message: e.to_string() })?;
        strip_notes(&mut v);
        serde_path_to_error::deserialize(v.clone()).map_err(|e| {
            let ptr = pointer(e.path());
            if ptr == "/problem" {
                if let Some(inner) = problem_error(&v["problem"]) {
                    return inner;
                }
            }
            CliError::Config { pointer: ptr, message: e.inner().to_string() }
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_str(&text)
    }

    /// SHA-256 of the canonical JSON of the effective configuration.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).unwrap_or_default();
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Replaces the node count of the problem.
    pub fn set_grid(&mut self, n: usize) {
        match &mut self.problem {
            ProblemConfig::M1(c) => c.n = n,
            ProblemConfig::M2(c) => c.n = n,
            ProblemConfig::OneD(c) => c.n = n,
            ProblemConfig::Decoupled(DecoupledConfig { base, .. }) | ProblemConfig::Inline(base) => base.n = n,
        }
    }
}

fn inline_problem(p: &InlineProblem) -> Result<VariationalProblem, CliError> {
    let cons: Vec<(&str, f64)> = p.constraints.iter().map(|c| (c.density.as_str(), c.target)).collect();
    let d = DensitySet::parse(p.components, &p.energy, &cons).map_err(crate::problems::ProblemError::from)?;
    let g = Arc::new(Grid::uniform(p.domain.clone(), p.n).map_err(crate::problems::ProblemError::from)?);
    Ok(VariationalProblem::new(g, d, p.translation_invariant).map_err(crate::problems::ProblemError::from)?)
}

/// Problem built from a config, with the oracle when the catalog has one.
pub struct Built {
    pub problem: VariationalProblem,
    pub oracle: Option<M1Oracle>,
}

impl ProblemConfig {
    pub fn build(&self) -> Result<Built, CliError> {
        Ok(match self {
            ProblemConfig::M1(M1Config { compacton, dim, n, box_factor }) => {
                let oracle = M1Oracle::new(&compacton.spec()?, *dim, 1e-4)?;
                let problem = make_m1(&oracle.spec, *dim, box_factor * oracle.support_radius(), *n)?;
                Built { problem, oracle: Some(oracle) }
            }
            ProblemConfig::M2(M2Config { compacton, dim, n, separation, margin }) => {
                let oracle = M1Oracle::new(&compacton.spec()?, *dim, 1e-4)?;
                let r = oracle.support_radius();
                let grid = two_bump_grid(*dim, r, separation * r, *margin, *n)?;
                let problem = make_m2_on(&oracle.spec, grid)?;
                Built { problem, oracle: Some(oracle) }
            }
            ProblemConfig::Decoupled(DecoupledConfig { copies, base }) => {
                Built { problem: make_pk_decoupled(&inline_problem(base)?, *copies)?, oracle: None }
            }
            ProblemConfig::OneD(OneDConfig { potential, constraints, half_width, n }) => {
                let cons: Vec<(&str, f64)> = constraints.iter().map(|c| (c.density.as_str(), c.target)).collect();
                Built { problem: make_1d(potential, &cons, *half_width, *n)?, oracle: None }
            }
            ProblemConfig::Inline(p) => Built { problem: inline_problem(p)?, oracle: None },
        })
    }
}

impl RunConfig {
    /// Starting field for the optimizer; `base_dir` resolves relative paths.
    pub fn initial_field(&self, built: &Built, base_dir: &Path) -> Result<Option<Field>, CliError> {
        let p = &built.problem;
        Ok(match &self.init {
            InitConfig::Auto => match &self.problem {
                ProblemConfig::M1(_) => Some(m1_init(p)),
                ProblemConfig::M2(M2Config { separation, .. }) => {
                    let r = built.oracle.as_ref().map(|o| o.support_radius()).unwrap_or(1.0);
                    let mut y = vec![0.0; p.dim()];
                    y[0] = separation * r;
                    let half: Vec<f64> = y.iter().map(|v| 0.5 * v).collect();
                    let minus: Vec<f64> = y.iter().map(|v| -0.5 * v).collect();
                    let a = bump_field(&p.grid, &half, 1.5, 0.6 * r);
                    let b = bump_field(&p.grid, &minus, 1.5, 0.6 * r);
                    Some(a.axpy(-1.0, &b)?)
                }
                _ => None,
            },
            InitConfig::Seed => None,
            InitConfig::Bump { center, amp, radius } => {
                let f = bump_field(&p.grid, center, *amp, *radius);
                let parts = vec![f; p.components()];
                Some(Field::stack(&parts)?)
            }
            InitConfig::File { path } => Some(read_field(&base_dir.join(path))?),
        })
    }
}

pub fn read_field(path: &Path) -> Result<Field, CliError> {
    let file = std::fs::File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(Field::read_binary(std::io::BufReader::new(file))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn notes_are_ignored_and_defaults_fill_in() {
        let c = RunConfig::from_str(
            r#"{"_note": "top", "seed": 3, "problem": {"catalog": "m1", "n": 24, "box_factor": 1.3, "_note": "inner"}}"#,
        )
        .unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.optimizer, MinimizeOptions::default());
        assert!(matches!(c.problem, ProblemConfig::M1(M1Config { dim: 3, n: 24, .. })));
    }

    #[test]
    fn schema_errors_carry_pointers() {
        let e = RunConfig::from_str(r#"{"seed": 1, "problem": {"catalog": "m1", "n": "many", "box_factor": 1.3}}"#).unwrap_err();
        match e {
            CliError::Config { pointer, .. } => assert_eq!(pointer, "/problem/n"),
            other => panic!("{other:?}"),
        }
        let e = RunConfig::from_str(r#"{"problem": {"catalog": "m1", "n": 4, "box_factor": 1.3}}"#).unwrap_err();
        assert!(e.to_string().contains("seed"), "{e}");
        let e = RunConfig::from_str(r#"{"seed": 1, "problem": {"catalog": "m1", "n": 4, "box_factor": 1.3}, "optimizer": {"eps_q": 1e-8, "bogus": 1}}"#)
            .unwrap_err();
        match e {
            CliError::Config { pointer, .. } => assert!(pointer.starts_with("/optimizer"), "{pointer}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::from_str(r#"{"seed": 1, "problem": {"catalog": "m1", "n": 24, "box_factor": 1.3}}"#).unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.set_grid(32);
        assert_ne!(a.hash(), b.hash());
    }
}
