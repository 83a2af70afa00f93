//! Zero finders for the odd split maps: bisection along a great circle for a
//! single constraint, scan plus Newton on a sphere chart for several, and the
//! compactified affine search.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::Field;
use crate::functional::{plane_to_sphere, sphere_to_plane, FunctionalError, SplitEvaluator, VariationalProblem};
use crate::numeric::{dot, norm, orthonormal_complement};

#[derive(Debug, Error)]
pub enum SplitError {
    #[error(transparent)]
    Functional(#[from] FunctionalError),
    #[error("search sphere has dimension {sphere_dim} < {k} constraints")]
    Inadmissible { sphere_dim: usize, k: usize },
    #[error("no sign change found along {attempts} great-circle arcs")]
    NoSignChange { attempts: usize },
    #[error("zero finder stopped at |defect| = {defect:.3e} > tol {tol:.3e}; try a finer grid")]
    NotConverged { best: Box<SplitZero>, defect: f64, tol: f64 },
    #[error("all constraint targets are zero")]
    AllLambdaZero,
    #[error("constraint vectors are not orthonormal")]
    NotOrthonormal,
    #[error("requested {count} normals but at most {max} exist")]
    TooMany { count: usize, max: usize },
    #[error("this finder handles {expected} constraint(s), problem has {got}")]
    WrongK { expected: &'static str, got: usize },
}

impl SplitError {
    pub fn code(&self) -> &'static str {
        match self {
            SplitError::Functional(e) => e.code(),
            SplitError::Inadmissible { .. } => "inadmissible",
            SplitError::NoSignChange { .. } => "no_sign_change",
            SplitError::NotConverged { .. } => "not_converged",
            SplitError::AllLambdaZero => "all_lambda_zero",
            SplitError::NotOrthonormal => "not_orthonormal",
            SplitError::TooMany { .. } => "too_many",
            SplitError::WrongK { .. } => "wrong_k",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// planes through the origin (`Phi`)
    Vector,
    /// affine planes (`psi~`, searched on the compactified sphere)
    Affine,
}

/// A splitting normal (and offset) with its defect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitZero {
    pub normal: Vec<f64>,
    pub offset: f64,
    pub defect: Vec<f64>,
    pub defect_norm: f64,
    pub tol: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// Points at which the odd map was evaluated.
    #[serde(skip)]
    pub trace: Vec<Vec<f64>>,
}

/// Search settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitOptions {
    /// Relative tolerance; the absolute one is `rel_tol * scale(Q)`.
    pub rel_tol: f64,
    pub max_bisections: usize,
    pub scan_points: usize,
    pub max_newton: usize,
    pub pole_cap: f64,
    pub seed: u64,
}

impl Default for SplitOptions {
    fn default() -> Self {
        SplitOptions { rel_tol: 1e-8, max_bisections: 60, scan_points: 2000, max_newton: 60, pole_cap: 1e-6, seed: 0 }
    }
}

/// Field plus problem, restricted to normals orthogonal to `orthogonal_to`.
pub struct SplitQuery {
    pub eval: SplitEvaluator,
    pub orthogonal_to: Vec<Vec<f64>>,
    pub mode: SplitMode,
    pub opts: SplitOptions,
}

impl SplitQuery {
    pub fn new(p: &VariationalProblem, u: &Field, mode: SplitMode) -> Result<Self, SplitError> {
        Ok(SplitQuery { eval: SplitEvaluator::new(p, u)?, orthogonal_to: Vec::new(), mode, opts: SplitOptions::default() })
    }

    pub fn restricted(mut self, vs: Vec<Vec<f64>>) -> Result<Self, SplitError> {
        for (i, a) in vs.iter().enumerate() {
            for (j, b) in vs.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                if a.len() != self.eval.dim() || (dot(a, b) - want).abs() > 1e-10 {
                    return Err(SplitError::NotOrthonormal);
                }
            }
        }
        self.orthogonal_to = vs;
        Ok(self)
    }

    pub fn with_options(mut self, opts: SplitOptions) -> Self {
        self.opts = opts;
        self
    }

    pub fn tol(&self) -> f64 {
        self.opts.rel_tol * self.eval.scale()
    }

    /// Orthonormal basis of the admissible normal directions.
    pub fn free_basis(&self) -> Vec<Vec<f64>> {
        orthonormal_complement(&self.orthogonal_to, self.eval.dim())
    }

    /// Dimension of the sphere the search runs on.
    pub fn sphere_dim(&self) -> usize {
        let d = self.free_basis().len();
        match self.mode {
            SplitMode::Vector => d.saturating_sub(1),
            SplitMode::Affine => d,
        }
    }

    fn admissible(&self) -> Result<(), SplitError> {
        let k = self.eval.k();
        let sd = self.sphere_dim();
        if k == 0 || sd < k || self.free_basis().is_empty() {
            return Err(SplitError::Inadmissible { sphere_dim: sd, k });
        }
        Ok(())
    }
}

fn combine(basis: &[Vec<f64>], z: &[f64], dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for (b, zi) in basis.iter().zip(z) {
        for (vi, bi) in v.iter_mut().zip(b) {
            *vi += zi * bi;
        }
    }
    v
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let n = norm(&v);
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// Single constraint, planes through the origin: bisection on the sign of
/// `Phi` along the half great circle from `v0` to `-v0`. The value at `-v0`
/// is known to be `-Phi(v0)` and is never evaluated.
pub fn find_zero_k1(q: &SplitQuery) -> Result<SplitZero, SplitError> {
    if q.eval.k() != 1 {
        return Err(SplitError::WrongK { expected: "exactly one", got: q.eval.k() });
    }
    if q.mode != SplitMode::Vector {
        return Err(SplitError::WrongK { expected: "vector-mode", got: q.eval.k() });
    }
    q.admissible()?;
    let basis = q.free_basis();
    let dim = q.eval.dim();
    let tol = q.tol();
    let mut trace = Vec::new();
    let phi = |v: &[f64], trace: &mut Vec<Vec<f64>>| -> Result<f64, SplitError> {
        trace.push(v.to_vec());
        Ok(q.eval.phi(v)?[0])
    };
    let attempts = 8;
    let mut best: Option<(f64, Vec<f64>, usize)> = None;
    for attempt in 0..attempts {
        // rotate the start inside the first two free directions on retries
        let rot = attempt as f64 * std::f64::consts::PI / (2.0 * attempts as f64);
        let v0 = normalized(combine(&basis, &[rot.cos(), rot.sin()], dim));
        let w = normalized(combine(&basis, &[-rot.sin(), rot.cos()], dim));
        let f0 = phi(&v0, &mut trace)?;
        if f0.abs() <= tol {
            let n = trace.len();
            return Ok(SplitZero { normal: v0, offset: 0.0, defect: vec![f0], defect_norm: f0.abs(), tol, iterations: 0, evaluations: n, trace });
        }
        let s0 = f0.signum();
        let (mut lo, mut hi) = (0.0f64, std::f64::consts::PI);
        for it in 1..=q.opts.max_bisections {
            let mid = 0.5 * (lo + hi);
            let v: Vec<f64> = v0.iter().zip(&w).map(|(a, b)| mid.cos() * a + mid.sin() * b).collect();
            let f = phi(&v, &mut trace)?;
            if best.as_ref().is_none_or(|b| f.abs() < b.0) {
                best = Some((f.abs(), v.clone(), it));
            }
            if f.abs() <= tol {
                let n = trace.len();
                return Ok(SplitZero { normal: v, offset: 0.0, defect: vec![f], defect_norm: f.abs(), tol, iterations: it, evaluations: n, trace });
            }
            if f.signum() == s0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    match best {
        Some((d, v, it)) => {
            let n = trace.len();
            let z = SplitZero { normal: v, offset: 0.0, defect: vec![d], defect_norm: d, tol, iterations: it, evaluations: n, trace };
            Err(SplitError::NotConverged { best: Box::new(z), defect: d, tol })
        }
        None => Err(SplitError::NoSignChange { attempts }),
    }
}

/// Quasi-uniform points on the upper half of `S^{d-1}` (last coordinate
/// non-negative).
pub fn hemisphere_scan(d: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    match d {
        0 => Vec::new(),
        1 => vec![vec![1.0]],
        2 => (0..n)
            .map(|i| {
                let th = std::f64::consts::PI * (i as f64 + 0.5) / n as f64;
                vec![th.cos(), th.sin()]
            })
            .collect(),
        3 => {
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..n)
                .map(|i| {
                    let z = (i as f64 + 0.5) / n as f64;
                    let r = (1.0 - z * z).sqrt();
                    let ph = golden * i as f64;
                    vec![r * ph.cos(), r * ph.sin(), z]
                })
                .collect()
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n)
                .map(|_| {
                    let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                    if v[d - 1] < 0.0 {
                        v.iter_mut().for_each(|x| *x = -*x);
                    }
                    normalized(v)
                })
                .collect()
        }
    }
}

/// Odd map on the search sphere in free coordinates `z`.
struct SphereMap<'a> {
    q: &'a SplitQuery,
    basis: Vec<Vec<f64>>,
    evaluations: usize,
}

impl SphereMap<'_> {
    fn free_dim(&self) -> usize {
        match self.q.mode {
            SplitMode::Vector => self.basis.len(),
            SplitMode::Affine => self.basis.len() + 1,
        }
    }

    fn in_cap(&self, z: &[f64]) -> bool {
        self.q.mode == SplitMode::Affine && z[z.len() - 1].abs() > 1.0 - self.q.opts.pole_cap
    }

    fn eval(&mut self, z: &[f64]) -> Result<Vec<f64>, SplitError> {
        self.evaluations += 1;
        let dim = self.q.eval.dim();
        Ok(match self.q.mode {
            SplitMode::Vector => self.q.eval.phi(&normalized(combine(&self.basis, z, dim)))?,
            SplitMode::Affine => {
                let nb = self.basis.len();
                let mut y = combine(&self.basis, &z[..nb], dim);
                y.push(z[nb]);
                let y = normalized(y);
                self.q.eval.psi(&y)?
            }
        })
    }

    fn to_plane(&self, z: &[f64]) -> (Vec<f64>, f64) {
        let dim = self.q.eval.dim();
        match self.q.mode {
            SplitMode::Vector => (normalized(combine(&self.basis, z, dim)), 0.0),
            SplitMode::Affine => {
                let nb = self.basis.len();
                let mut y = combine(&self.basis, &z[..nb], dim);
                y.push(z[nb]);
                sphere_to_plane(&normalized(y)).expect("outside pole caps")
            }
        }
    }
}

/// Orthonormal basis of the tangent space at `z` on the unit sphere.
fn tangent_basis(z: &[f64]) -> Vec<Vec<f64>> {
    orthonormal_complement(&[z.to_vec()], z.len())
}

/// Scan plus damped Gauss-Newton on tangent charts.
fn scan_newton(q: &SplitQuery) -> Result<SplitZero, SplitError> {
    q.admissible()?;
    let mut map = SphereMap { q, basis: q.free_basis(), evaluations: 0 };
    let d = map.free_dim();
    let tol = q.tol();
    // coordinate directions first: they reflect by index permutation
    let mut pts: Vec<Vec<f64>> = (0..map.basis.len())
        .map(|i| {
            let mut z = vec![0.0; d];
            z[i] = 1.0;
            z
        })
        .collect();
    pts.extend(hemisphere_scan(d, q.opts.scan_points, q.opts.seed));
    let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    for z in pts {
        if map.in_cap(&z) {
            continue;
        }
        let f = map.eval(&z)?;
        let n = norm(&f);
        // lowest index wins ties
        if best.as_ref().is_none_or(|b| n < b.0) {
            best = Some((n, z, f));
        }
    }
    let (mut fnorm, mut z, mut f) = best.ok_or(SplitError::Inadmissible { sphere_dim: d - 1, k: q.eval.k() })?;
    let mut iterations = 0;
    let k = f.len();
    while fnorm > tol && iterations < q.opts.max_newton {
        iterations += 1;
        let tb = tangent_basis(&z);
        let fd = 1e-7;
        let mut jac = DMatrix::<f64>::zeros(k, tb.len());
        for (c, t) in tb.iter().enumerate() {
            let zp = normalized(z.iter().zip(t).map(|(a, b)| a + fd * b).collect());
            let zm = normalized(z.iter().zip(t).map(|(a, b)| a - fd * b).collect());
            let (fp, fm) = if map.in_cap(&zp) || map.in_cap(&zm) {
                let fp = map.eval(&zp)?;
                (fp, f.clone())
            } else {
                (map.eval(&zp)?, map.eval(&zm)?)
            };
            let h = if map.in_cap(&zp) || map.in_cap(&zm) { fd } else { 2.0 * fd };
            for r in 0..k {
                jac[(r, c)] = (fp[r] - fm[r]) / h;
            }
        }
        let svd = jac.clone().svd(true, true);
        let step = match svd.solve(&DVector::from_column_slice(&f), 1e-14 * svd.singular_values.max()) {
            Ok(s) => s,
            Err(_) => break,
        };
        let mut lam = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let mut zn = z.clone();
            for (c, t) in tb.iter().enumerate() {
                for (zi, ti) in zn.iter_mut().zip(t) {
                    *zi -= lam * step[c] * ti;
                }
            }
            let zn = normalized(zn);
            if !map.in_cap(&zn) {
                let fnew = map.eval(&zn)?;
                let nn = norm(&fnew);
                if nn < fnorm {
                    z = zn;
                    f = fnew;
                    fnorm = nn;
                    improved = true;
                    break;
                }
            }
            lam *= 0.5;
        }
        if !improved {
            break;
        }
    }
    let (normal, offset) = map.to_plane(&z);
    let out = SplitZero {
        normal,
        offset,
        defect: f,
        defect_norm: fnorm,
        tol,
        iterations,
        evaluations: map.evaluations,
        trace: Vec::new(),
    };
    if fnorm <= tol {
        Ok(out)
    } else {
        Err(SplitError::NotConverged { defect: fnorm, tol, best: Box::new(out) })
    }
}

/// Several constraints (or one), planes through the origin.
pub fn find_zero_k_general(q: &SplitQuery) -> Result<SplitZero, SplitError> {
    if q.mode != SplitMode::Vector {
        return Err(SplitError::WrongK { expected: "vector-mode", got: q.eval.k() });
    }
    scan_newton(q)
}

/// Affine splitting plane `(v, t)` via the compactified sphere.
pub fn find_affine_zero(q: &SplitQuery) -> Result<SplitZero, SplitError> {
    if q.eval.targets().iter().all(|&l| l == 0.0) {
        return Err(SplitError::AllLambdaZero);
    }
    if q.mode != SplitMode::Affine {
        return Err(SplitError::WrongK { expected: "affine-mode", got: q.eval.k() });
    }
    if q.eval.k() == 1 {
        return meridian_bisection(q);
    }
    scan_newton(q)
}

/// One constraint, affine planes: `psi` runs from `-lambda` at the north
/// pole to `+lambda` at the south pole, so bisection along the meridian
/// through the first free direction brackets a zero. The caps are never
/// evaluated; their values are the pole limits.
fn meridian_bisection(q: &SplitQuery) -> Result<SplitZero, SplitError> {
    q.admissible()?;
    let lambda = q.eval.targets()[0];
    let mut map = SphereMap { q, basis: q.free_basis(), evaluations: 0 };
    let d = map.free_dim();
    let tol = q.tol();
    let at = |th: f64| {
        let mut z = vec![0.0; d];
        z[0] = th.sin();
        z[d - 1] = th.cos();
        z
    };
    let (mut lo, mut hi) = (0.0f64, std::f64::consts::PI);
    let mut best: Option<(f64, Vec<f64>, Vec<f64>, usize)> = None;
    for it in 1..=q.opts.max_bisections {
        let mid = 0.5 * (lo + hi);
        let z = at(mid);
        let f = if map.in_cap(&z) { vec![-lambda * z[d - 1].signum()] } else { map.eval(&z)? };
        let n = f[0].abs();
        if !map.in_cap(&z) && best.as_ref().is_none_or(|b| n < b.0) {
            best = Some((n, z.clone(), f.clone(), it));
        }
        if n <= tol && !map.in_cap(&z) {
            break;
        }
        if f[0].signum() == -lambda.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let Some((n, z, f, it)) = best else {
        return Err(SplitError::NoSignChange { attempts: 1 });
    };
    let (normal, offset) = map.to_plane(&z);
    let out = SplitZero { normal, offset, defect: f, defect_norm: n, tol, iterations: it, evaluations: map.evaluations, trace: Vec::new() };
    if n <= tol {
        Ok(out)
    } else {
        Err(SplitError::NotConverged { defect: n, tol, best: Box::new(out) })
    }
}

/// Mutually orthogonal splitting normals through the origin.
pub fn orthogonal_split_basis(p: &VariationalProblem, u: &Field, count: usize, opts: &SplitOptions) -> Result<Vec<SplitZero>, SplitError> {
    let k = p.k();
    let max = p.dim().saturating_sub(k);
    if count > max {
        return Err(SplitError::TooMany { count, max });
    }
    let base = SplitQuery::new(p, u, SplitMode::Vector)?.with_options(opts.clone());
    split_family(base, count)
}

/// Runs the appropriate finder `count` times, each restricted to the
/// orthogonal complement of the normals found so far.
pub fn split_family(mut q: SplitQuery, count: usize) -> Result<Vec<SplitZero>, SplitError> {
    let mut out: Vec<SplitZero> = Vec::new();
    let fixed = q.orthogonal_to.clone();
    for _ in 0..count {
        let mut cons = fixed.clone();
        cons.extend(out.iter().map(|z| z.normal.clone()));
        q.orthogonal_to = cons;
        let z = match q.mode {
            SplitMode::Vector if q.eval.k() == 1 => find_zero_k1(&q)?,
            SplitMode::Vector => find_zero_k_general(&q)?,
            SplitMode::Affine => find_affine_zero(&q)?,
        };
        // re-orthogonalize against earlier normals to remove round-off drift
        let mut v = z.normal.clone();
        for prev in &q.orthogonal_to {
            let c = dot(&v, prev);
            v.iter_mut().zip(prev).for_each(|(a, b)| *a -= c * b);
        }
        let v = normalized(v);
        let z = SplitZero { normal: v, ..z };
        out.push(z);
    }
    Ok(out)
}

/// `(v, t)` to a point of `S^N`, exposed for reports.
pub fn compactify(v: &[f64], t: f64) -> Vec<f64> {
    plane_to_sphere(v, t)
}
