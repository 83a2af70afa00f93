//! Golden values of the shooting oracle and the verification table.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::compacton::CompactonSpec;
use crate::problems::M1Oracle;

use super::CliError;

pub const GOLDEN_VERSION: u32 = 1;
pub const GOLDEN_FILE: &str = "m1_reference.json";

/// Reproducibility tolerance of the oracle constants.
const ORACLE_TOL: f64 = 1e-3;
/// `zeta` and `F(zeta)` come from a closed-form piecewise polynomial.
const SHAPE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoldenEntry {
    pub name: String,
    pub value: f64,
    pub rel_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoldenSpec {
    pub alpha: f64,
    pub s1: f64,
    pub s2: f64,
    pub delta: f64,
    pub dim: usize,
    pub dr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoldenFile {
    pub version: u32,
    pub spec: GoldenSpec,
    pub entries: Vec<GoldenEntry>,
}

/// One row of the verification table. Golden rows compare against a stored
/// value; check rows compare a computed quantity against a bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyRow {
    pub name: String,
    pub expected: Option<f64>,
    pub computed: f64,
    pub error: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Directory of the current golden version under `root`.
pub fn versioned_dir(root: &Path) -> PathBuf {
    root.join(format!("v{GOLDEN_VERSION}"))
}

/// Golden directory shipped with the crate.
pub fn default_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("golden")
}

fn reference_spec() -> GoldenSpec {
    let s = CompactonSpec::reference();
    GoldenSpec { alpha: s.alpha, s1: s.s1, s2: s.s2, delta: s.delta, dim: 3, dr: 1e-4 }
}

fn oracle_for(spec: &GoldenSpec) -> Result<M1Oracle, CliError> {
    let s = CompactonSpec::new(spec.alpha, spec.s1, spec.s2, spec.delta).map_err(crate::problems::ProblemError::from)?;
    Ok(M1Oracle::new(&s, spec.dim, spec.dr)?)
}

fn entries_of(oracle: &M1Oracle) -> Vec<GoldenEntry> {
    let g = oracle.golden();
    let (zeta, f_min) = oracle.spec.argmin_f();
    let e = |name: &str, value: f64, rel_tol: f64| GoldenEntry { name: name.into(), value, rel_tol };
    vec![
        e("infimum", g.infimum, ORACLE_TOL),
        e("beta0", g.beta0, ORACLE_TOL),
        e("support_radius", g.support_radius, ORACLE_TOL),
        e("zeta", zeta, SHAPE_TOL),
        e("f_min", f_min, SHAPE_TOL),
    ]
}

/// Runs the oracle for the reference spec and writes the golden file.
pub fn regenerate(root: &Path) -> Result<(PathBuf, GoldenFile), CliError> {
    let spec = reference_spec();
    let oracle = oracle_for(&spec)?;
    let file = GoldenFile { version: GOLDEN_VERSION, entries: entries_of(&oracle), spec };
    let dir = versioned_dir(root);
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let path = dir.join(GOLDEN_FILE);
    let text = serde_json::to_string_pretty(&file).map_err(|e| CliError::Io(e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok((path, file))
}

pub fn load(root: &Path) -> Result<GoldenFile, CliError> {
    let path = versioned_dir(root).join(GOLDEN_FILE);
    if !path.is_file() {
        return Err(CliError::MissingGolden(path));
    }
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config { pointer: String::new(), message: format!("{}: {e}", path.display()) })
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// Recomputes the oracle from the golden spec and compares every entry, then
/// appends the self-consistency checks of the oracle and the compacton.
pub fn verify(golden: &GoldenFile) -> Result<Vec<VerifyRow>, CliError> {
    let oracle = oracle_for(&golden.spec)?;
    let fresh = entries_of(&oracle);
    let mut rows = Vec::new();
    for e in &golden.entries {
        let computed = fresh.iter().find(|f| f.name == e.name).map(|f| f.value).unwrap_or(f64::NAN);
        let error = rel(computed, e.value);
        rows.push(VerifyRow { name: e.name.clone(), expected: Some(e.value), computed, error, tol: e.rel_tol, pass: error <= e.rel_tol });
    }
    let check = |name: &str, computed: f64, tol: f64| VerifyRow { name: name.into(), expected: None, computed, error: computed, tol, pass: computed <= tol };
    let c = oracle.constants;
    rows.push(check("shooting_residual", oracle.ground_state.ode_residual(&oracle.spec), 1e-6));
    rows.push(check("lambda_scale_sq_vs_beta0", rel(c.lambda_scale * c.lambda_scale, c.beta0), 1e-3));
    let report = oracle.spec.verify();
    let flag = |b: bool| if b { 0.0 } else { 1.0 };
    rows.push(check("compacton_c1_c3", flag(report.c1 && report.c2 && report.c3 && report.smooth_knots), 0.0));
    Ok(rows)
}

/// Fixed-width text rendering for stderr.
pub fn table(rows: &[VerifyRow]) -> String {
    let mut s = format!("{:<26} {:>16} {:>16} {:>10} {:>9}  result\n", "entry", "expected", "computed", "error", "tol");
    for r in rows {
        let exp = r.expected.map(|v| format!("{v:16.9e}")).unwrap_or_else(|| format!("{:>16}", "-"));
        s.push_str(&format!(
            "{:<26} {} {:16.9e} {:10.2e} {:9.1e}  {}\n",
            r.name,
            exp,
            r.computed,
            r.error,
            r.tol,
            if r.pass { "pass" } else { "FAIL" }
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regenerate_then_verify_and_perturb() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load(dir.path()), Err(CliError::MissingGolden(_))));
        let (_, file) = regenerate(dir.path()).unwrap();
        let back = load(dir.path()).unwrap();
        assert_eq!(back, file);
        let rows = verify(&back).unwrap();
        assert!(rows.iter().all(|r| r.pass), "{}", table(&rows));

        let mut bad = back.clone();
        let e = &mut bad.entries[1];
        e.value *= 1.0 + 10.0 * e.rel_tol;
        let rows = verify(&bad).unwrap();
        let failed: Vec<_> = rows.iter().filter(|r| !r.pass).map(|r| r.name.as_str()).collect();
        assert_eq!(failed, vec!["beta0"]);
    }
}
