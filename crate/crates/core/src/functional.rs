//! Discrete energy and constraint functionals, half-space splits, the odd
//! sphere maps used to find splitting hyperplanes, first variations and
//! multiplier recovery.
//!
//! The gradient magnitude inside densities uses a compact stencil: on every
//! axis `g^2` averages the squared forward and backward differences to the
//! in-domain neighbours. The quadratic part of `0.5*g*g` then reproduces the
//! standard `2N+1` point Laplacian exactly.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::density::{DensityError, DensityExpr, DensitySet, Scratch, Var};
use crate::field::{Field, FieldError};
use crate::geometry::Hyperplane;
use crate::grid::{Domain, Grid};
use crate::numeric::CompensatedSum;

/// Tolerance on `|v| = 1` and `|y| = 1` inputs.
pub const UNIT_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum FunctionalError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error("problem is not translation invariant: densities reference r")]
    NotTranslationInvariant,
    #[error("constraint gradients are degenerate (Gram condition {cond:.3e})")]
    DegenerateGram { cond: f64 },
    #[error("field has {got} components, problem expects {expected}")]
    Components { expected: usize, got: usize },
    #[error("vector has length {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("vector is not of unit length (norm {0})")]
    NotUnit(f64),
    #[error("operation needs at least one constraint")]
    NoConstraints,
}

impl FunctionalError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            FunctionalError::Field(FieldError::OriginRequired(_)) => "origin_required",
            FunctionalError::Field(FieldError::GridMismatch) => "grid_mismatch",
            FunctionalError::Field(_) => "field",
            FunctionalError::Density(e) => e.code(),
            FunctionalError::NotTranslationInvariant => "not_translation_invariant",
            FunctionalError::DegenerateGram { .. } => "degenerate_gram",
            FunctionalError::Components { .. } => "components",
            FunctionalError::Dimension { .. } => "dimension",
            FunctionalError::NotUnit(_) => "not_unit",
            FunctionalError::NoConstraints => "no_constraints",
        }
    }
}

/// `E(u) = int F` subject to `Q_j(u) = int G_j = lambda_j` on a fixed grid.
#[derive(Debug, Clone)]
pub struct VariationalProblem {
    pub grid: Arc<Grid>,
    pub densities: DensitySet,
    pub translation_invariant: bool,
}

impl VariationalProblem {
    pub fn new(grid: Arc<Grid>, densities: DensitySet, translation_invariant: bool) -> Result<Self, FunctionalError> {
        if translation_invariant && densities.uses_radius() {
            return Err(FunctionalError::NotTranslationInvariant);
        }
        Ok(VariationalProblem { grid, densities, translation_invariant })
    }

    pub fn domain(&self) -> &Domain {
        self.grid.domain()
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn components(&self) -> usize {
        self.densities.arity()
    }

    pub fn k(&self) -> usize {
        self.densities.k()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.densities.targets()
    }

    fn check(&self, u: &Field) -> Result<(), FunctionalError> {
        if **u.grid_arc() != *self.grid {
            return Err(FieldError::GridMismatch.into());
        }
        if u.components() != self.components() {
            return Err(FunctionalError::Components { expected: self.components(), got: u.components() });
        }
        Ok(())
    }

    fn check_unit(&self, v: &[f64]) -> Result<(), FunctionalError> {
        if v.len() != self.dim() {
            return Err(FunctionalError::Dimension { expected: self.dim(), got: v.len() });
        }
        let n = crate::numeric::norm(v);
        if (n - 1.0).abs() > UNIT_TOL {
            return Err(FunctionalError::NotUnit(n));
        }
        Ok(())
    }
}

/// Squared gradient magnitude at every node with the compact stencil
/// (zero off-domain).
pub fn compact_gradient_sq(u: &Field) -> Vec<f64> {
    let grid = u.grid();
    let m = u.components();
    let dim = grid.dim();
    let vals = u.values();
    let inv_h2: Vec<f64> = grid.spacing().iter().map(|h| 1.0 / (h * h)).collect();
    let mut out = vec![0.0; grid.len()];
    for (node, g2) in out.iter_mut().enumerate() {
        if !grid.inside(node) {
            continue;
        }
        let mut acc = 0.0;
        for a in 0..dim {
            let up = grid.neighbor(node, a, 1);
            let dn = grid.neighbor(node, a, -1);
            let kappa = match (up, dn) {
                (Some(_), Some(_)) => 0.5,
                (None, None) => continue,
                _ => 1.0,
            };
            let mut s = 0.0;
            for c in 0..m {
                let x = vals[node * m + c];
                if let Some(p) = up {
                    let d = vals[p * m + c] - x;
                    s += d * d;
                }
                if let Some(q) = dn {
                    let d = x - vals[q * m + c];
                    s += d * d;
                }
            }
            acc += kappa * s * inv_h2[a];
        }
        *g2 = acc;
    }
    out
}

/// Values and (optionally) continuum-scaled gradients of `E` and all `Q_j`.
#[derive(Debug, Clone)]
pub struct Assembly {
    pub energy: f64,
    pub constraints: Vec<f64>,
    /// `dE/du` divided by the quadrature weight, node-major like `Field`.
    pub grad_energy: Vec<f64>,
    pub grad_constraints: Vec<Vec<f64>>,
    /// Number of (node, density) evaluations that hit a kink.
    pub nondifferentiable: usize,
}

struct DensityEval<'a> {
    expr: &'a DensityExpr,
    scratch: Scratch,
    uses_g: bool,
    uses_r: bool,
}

/// Evaluates `E`, `Q` and, when `gradients` is set, their first variations in
/// one deterministic sweep over the nodes.
pub fn assemble(p: &VariationalProblem, u: &Field, gradients: bool) -> Result<Assembly, FunctionalError> {
    p.check(u)?;
    let grid = u.grid();
    let m = u.components();
    let dim = grid.dim();
    let n = grid.len();
    let vals = u.values();
    let w = grid.weights();
    let g2 = compact_gradient_sq(u);
    let k = p.k();
    let mut evals: Vec<DensityEval> = std::iter::once(&p.densities.energy)
        .chain(p.densities.constraints.iter().map(|c| &c.0))
        .map(|e| DensityEval { expr: e, scratch: Scratch::default(), uses_g: e.uses(Var::G), uses_r: e.uses(Var::R) })
        .collect();
    let mut sums = vec![CompensatedSum::new(); k + 1];
    let mut grads: Vec<Vec<f64>> = if gradients { vec![vec![0.0; n * m]; k + 1] } else { Vec::new() };
    let mut du = vec![0.0; m];
    let mut x = vec![0.0; dim];
    let mut kinks = 0usize;
    let inv_h2: Vec<f64> = grid.spacing().iter().map(|h| 1.0 / (h * h)).collect();
    for node in 0..n {
        if !grid.inside(node) {
            continue;
        }
        let un = &vals[node * m..(node + 1) * m];
        let g = g2[node].sqrt();
        let r = if evals.iter().any(|e| e.uses_r) {
            grid.coords_into(node, &mut x);
            crate::numeric::norm(&x)
        } else {
            0.0
        };
        for (j, ev) in evals.iter_mut().enumerate() {
            if !gradients {
                sums[j].add(w[node] * ev.expr.eval_with(r, un, g, &mut ev.scratch)?);
                continue;
            }
            let (val, dg, kink) = ev.expr.partials_with(r, un, g, &mut ev.scratch, &mut du)?;
            if kink {
                kinks += 1;
            }
            sums[j].add(w[node] * val);
            let gr = &mut grads[j];
            for c in 0..m {
                gr[node * m + c] += w[node] * du[c];
            }
            if !ev.uses_g {
                continue;
            }
            // chain rule through g = sqrt(g2): dF/d(g2) = F_g / (2 g)
            let coef = if g > 0.0 {
                dg / (2.0 * g)
            } else {
                let eps = 1e-8;
                let (_, dge, _) = ev.expr.partials_with(r, un, eps, &mut ev.scratch, &mut du)?;
                dge / (2.0 * eps)
            };
            if coef == 0.0 {
                continue;
            }
            let wc = w[node] * coef;
            for a in 0..dim {
                let up = grid.neighbor(node, a, 1);
                let dn = grid.neighbor(node, a, -1);
                let kappa = match (up, dn) {
                    (Some(_), Some(_)) => 0.5,
                    (None, None) => continue,
                    _ => 1.0,
                };
                let s = 2.0 * kappa * inv_h2[a] * wc;
                for c in 0..m {
                    let xc = un[c];
                    if let Some(pn) = up {
                        let d = vals[pn * m + c] - xc;
                        gr[pn * m + c] += s * d;
                        gr[node * m + c] -= s * d;
                    }
                    if let Some(qn) = dn {
                        let d = xc - vals[qn * m + c];
                        gr[node * m + c] += s * d;
                        gr[qn * m + c] -= s * d;
                    }
                }
            }
        }
    }
    if gradients {
        for gr in &mut grads {
            for node in 0..n {
                let s = if w[node] > 0.0 { 1.0 / w[node] } else { 0.0 };
                for c in 0..m {
                    gr[node * m + c] *= s;
                }
            }
        }
    }
    let mut it = grads.into_iter();
    let grad_energy = it.next().unwrap_or_default();
    let grad_constraints: Vec<Vec<f64>> = if gradients { it.collect() } else { Vec::new() };
    Ok(Assembly {
        energy: sums[0].value(),
        constraints: sums[1..].iter().map(|s| s.value()).collect(),
        grad_energy,
        grad_constraints,
        nondifferentiable: kinks,
    })
}

pub fn energy(p: &VariationalProblem, u: &Field) -> Result<f64, FunctionalError> {
    Ok(assemble(p, u, false)?.energy)
}

pub fn constraints(p: &VariationalProblem, u: &Field) -> Result<Vec<f64>, FunctionalError> {
    Ok(assemble(p, u, false)?.constraints)
}

/// First variation of the discrete functional.
#[derive(Debug, Clone)]
pub struct Variation {
    pub grad_energy: Field,
    pub grad_constraints: Vec<Field>,
    pub nondifferentiable: usize,
}

pub fn first_variation(p: &VariationalProblem, u: &Field) -> Result<Variation, FunctionalError> {
    let a = assemble(p, u, true)?;
    let grid = u.grid_arc().clone();
    let m = u.components();
    Ok(Variation {
        grad_energy: Field::new(grid.clone(), m, a.grad_energy)?,
        grad_constraints: a
            .grad_constraints
            .into_iter()
            .map(|g| Field::new(grid.clone(), m, g))
            .collect::<Result<_, _>>()?,
        nondifferentiable: a.nondifferentiable,
    })
}

/// Per-constraint integrals over the two open half-spaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitValue {
    pub plus: Vec<f64>,
    pub minus: Vec<f64>,
}

impl SplitValue {
    pub fn totals(&self) -> Vec<f64> {
        self.plus.iter().zip(&self.minus).map(|(a, b)| a + b).collect()
    }
}

/// Cached constraint densities of one field, for repeated plane queries.
///
/// A node at signed distance `d` from the plane contributes the fraction
/// `(1 + s)/2` to `Pi+` and `(1 - s)/2` to `Pi-`, with
/// `s = clamp(2d/h, -1, 1)`. The odd maps are evaluated as `sum w G s`, so
/// flipping the plane negates every term exactly.
#[derive(Debug, Clone)]
pub struct SplitEvaluator {
    dim: usize,
    k: usize,
    width: f64,
    radial_domain: bool,
    /// in-domain node coordinates, flattened
    coords: Vec<f64>,
    /// `w * G_j` per in-domain node, flattened `[node][j]`
    mass: Vec<f64>,
    abs_total: f64,
    totals: Vec<f64>,
    targets: Vec<f64>,
    translation_invariant: bool,
    calls: std::cell::Cell<usize>,
}

impl SplitEvaluator {
    pub fn new(p: &VariationalProblem, u: &Field) -> Result<Self, FunctionalError> {
        p.check(u)?;
        let grid = u.grid();
        let m = u.components();
        let dim = grid.dim();
        let k = p.k();
        let g2 = compact_gradient_sq(u);
        let w = grid.weights();
        let mut coords = Vec::new();
        let mut mass = Vec::new();
        let mut x = vec![0.0; dim];
        let mut scratch = Scratch::default();
        let mut totals = vec![CompensatedSum::new(); k];
        let mut abs_total = CompensatedSum::new();
        for node in 0..grid.len() {
            if !grid.inside(node) {
                continue;
            }
            grid.coords_into(node, &mut x);
            let r = crate::numeric::norm(&x);
            coords.extend_from_slice(&x);
            let un = &u.values()[node * m..(node + 1) * m];
            for (j, (g, _)) in p.densities.constraints.iter().enumerate() {
                let v = w[node] * g.eval_with(r, un, g2[node].sqrt(), &mut scratch)?;
                mass.push(v);
                totals[j].add(v);
                abs_total.add(v.abs());
            }
        }
        Ok(SplitEvaluator {
            dim,
            k,
            width: grid.h(),
            radial_domain: grid.domain().is_bounded_radial(),
            coords,
            mass,
            abs_total: abs_total.value(),
            totals: totals.iter().map(|s| s.value()).collect(),
            targets: p.targets(),
            translation_invariant: p.translation_invariant,
            calls: std::cell::Cell::new(0),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `sum_j int |G_j|`, the normalization for split tolerances.
    pub fn scale(&self) -> f64 {
        self.abs_total
    }

    /// `Q_j(u)`.
    pub fn totals(&self) -> &[f64] {
        &self.totals
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Number of odd-map evaluations so far.
    pub fn calls(&self) -> usize {
        self.calls.get()
    }

    #[inline]
    fn side(&self, x: &[f64], v: &[f64], t: f64) -> f64 {
        let mut d = 0.0;
        for (xi, vi) in x.iter().zip(v) {
            d += (xi - t * vi) * vi;
        }
        (2.0 * d / self.width).clamp(-1.0, 1.0)
    }

    fn check_plane(&self, v: &[f64], t: f64) -> Result<(), FunctionalError> {
        if v.len() != self.dim {
            return Err(FunctionalError::Dimension { expected: self.dim, got: v.len() });
        }
        let n = crate::numeric::norm(v);
        if (n - 1.0).abs() > UNIT_TOL {
            return Err(FunctionalError::NotUnit(n));
        }
        if self.radial_domain && t != 0.0 {
            return Err(FieldError::OriginRequired(t).into());
        }
        Ok(())
    }

    /// `(I+, I-)` for the plane `x.v = t`.
    pub fn split(&self, v: &[f64], t: f64) -> Result<SplitValue, FunctionalError> {
        self.check_plane(v, t)?;
        let mut plus = vec![CompensatedSum::new(); self.k];
        let mut minus = vec![CompensatedSum::new(); self.k];
        for (x, ms) in self.coords.chunks_exact(self.dim).zip(self.mass.chunks_exact(self.k.max(1))) {
            let s = self.side(x, v, t);
            for j in 0..self.k {
                plus[j].add(0.5 * (1.0 + s) * ms[j]);
                minus[j].add(0.5 * (1.0 - s) * ms[j]);
            }
        }
        Ok(SplitValue {
            plus: plus.iter().map(|a| a.value()).collect(),
            minus: minus.iter().map(|a| a.value()).collect(),
        })
    }

    fn odd(&self, v: &[f64], t: f64) -> Vec<f64> {
        self.calls.set(self.calls.get() + 1);
        let mut acc = vec![CompensatedSum::new(); self.k];
        if self.k == 0 {
            return Vec::new();
        }
        for (x, ms) in self.coords.chunks_exact(self.dim).zip(self.mass.chunks_exact(self.k)) {
            let s = self.side(x, v, t);
            if s == 0.0 {
                continue;
            }
            for j in 0..self.k {
                acc[j].add(s * ms[j]);
            }
        }
        acc.iter().map(|a| a.value()).collect()
    }

    /// `Phi(v) = I+ - I-` for the plane through the origin with normal `v`.
    pub fn phi(&self, v: &[f64]) -> Result<Vec<f64>, FunctionalError> {
        self.check_plane(v, 0.0)?;
        Ok(self.odd(v, 0.0))
    }

    /// Affine version `psi~(v, t)`.
    pub fn psi_tilde(&self, v: &[f64], t: f64) -> Result<Vec<f64>, FunctionalError> {
        if !self.translation_invariant {
            return Err(FunctionalError::NotTranslationInvariant);
        }
        self.check_plane(v, t)?;
        Ok(self.odd(v, t))
    }

    /// `psi` on `S^N`: the affine map composed with
    /// `y -> (y'/|y'|, y_{N+1}/(1-|y_{N+1}|))`, equal to `-lambda` at the north
    /// pole and `+lambda` at the south pole.
    pub fn psi(&self, y: &[f64]) -> Result<Vec<f64>, FunctionalError> {
        if !self.translation_invariant {
            return Err(FunctionalError::NotTranslationInvariant);
        }
        if y.len() != self.dim + 1 {
            return Err(FunctionalError::Dimension { expected: self.dim + 1, got: y.len() });
        }
        let n = crate::numeric::norm(y);
        if (n - 1.0).abs() > UNIT_TOL {
            return Err(FunctionalError::NotUnit(n));
        }
        let (v, t) = match sphere_to_plane(y) {
            Some(vt) => vt,
            None => {
                let sign = if y[self.dim] > 0.0 { -1.0 } else { 1.0 };
                return Ok(self.targets.iter().map(|l| sign * l).collect());
            }
        };
        // y' may carry the tolerance slack of |y| = 1; v is renormalized exactly
        if self.radial_domain && t != 0.0 {
            return Err(FieldError::OriginRequired(t).into());
        }
        Ok(self.odd(&v, t))
    }
}

/// Maps `y in S^N` to `(v, t)`; `None` at the poles.
pub fn sphere_to_plane(y: &[f64]) -> Option<(Vec<f64>, f64)> {
    let dim = y.len() - 1;
    let last = y[dim];
    let rest = crate::numeric::norm(&y[..dim]);
    if rest == 0.0 || last.abs() >= 1.0 {
        return None;
    }
    let v: Vec<f64> = y[..dim].iter().map(|a| a / rest).collect();
    Some((v, last / (1.0 - last.abs())))
}

/// Inverse of [`sphere_to_plane`].
pub fn plane_to_sphere(v: &[f64], t: f64) -> Vec<f64> {
    // t = s/(1-|s|)  =>  s = t/(1+|t|)
    let s = t / (1.0 + t.abs());
    let c = (1.0 - s * s).sqrt();
    let mut y: Vec<f64> = v.iter().map(|a| a * c).collect();
    y.push(s);
    y
}

pub fn half_space_split(p: &VariationalProblem, u: &Field, h: &Hyperplane) -> Result<SplitValue, FunctionalError> {
    SplitEvaluator::new(p, u)?.split(h.normal(), h.offset())
}

pub fn split_defect(p: &VariationalProblem, u: &Field, v: &[f64]) -> Result<Vec<f64>, FunctionalError> {
    p.check_unit(v)?;
    SplitEvaluator::new(p, u)?.phi(v)
}

pub fn affine_split_defect(p: &VariationalProblem, u: &Field, v: &[f64], t: f64) -> Result<Vec<f64>, FunctionalError> {
    if !p.translation_invariant {
        return Err(FunctionalError::NotTranslationInvariant);
    }
    p.check_unit(v)?;
    SplitEvaluator::new(p, u)?.psi_tilde(v, t)
}

pub fn compactified_defect(p: &VariationalProblem, u: &Field, y: &[f64]) -> Result<Vec<f64>, FunctionalError> {
    if !p.translation_invariant {
        return Err(FunctionalError::NotTranslationInvariant);
    }
    SplitEvaluator::new(p, u)?.psi(y)
}

/// In-domain nodes whose full `2N`-point neighbourhood is in the domain.
pub fn interior_nodes(grid: &Grid) -> Vec<usize> {
    (0..grid.len())
        .filter(|&n| grid.inside(n) && (0..grid.dim()).all(|a| grid.neighbor(n, a, 1).is_some() && grid.neighbor(n, a, -1).is_some()))
        .collect()
}

/// Least-squares multipliers for a given variation.
pub fn fit_multipliers_from(var: &Variation) -> Result<(Vec<f64>, f64), FunctionalError> {
    let k = var.grad_constraints.len();
    if k == 0 {
        return Err(FunctionalError::NoConstraints);
    }
    let grid = var.grad_energy.grid();
    let m = var.grad_energy.components();
    let nodes = interior_nodes(grid);
    let w = grid.weights();
    let ge = var.grad_energy.values();
    let gq: Vec<&[f64]> = var.grad_constraints.iter().map(|f| f.values()).collect();
    let pair = |a: &[f64], b: &[f64]| {
        let mut s = CompensatedSum::new();
        for &n in &nodes {
            for c in 0..m {
                s.add(w[n] * a[n * m + c] * b[n * m + c]);
            }
        }
        s.value()
    };
    let gram = DMatrix::from_fn(k, k, |i, j| pair(gq[i], gq[j]));
    let rhs = DVector::from_fn(k, |i, _| -pair(gq[i], ge));
    let sv = gram.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(cond <= 1e12) {
        return Err(FunctionalError::DegenerateGram { cond });
    }
    let alpha = gram.lu().solve(&rhs).ok_or(FunctionalError::DegenerateGram { cond })?;
    let mut res = CompensatedSum::new();
    let mut base = CompensatedSum::new();
    for &n in &nodes {
        for c in 0..m {
            let i = n * m + c;
            let mut r = ge[i];
            for j in 0..k {
                r += alpha[j] * gq[j][i];
            }
            res.add(w[n] * r * r);
            base.add(w[n] * ge[i] * ge[i]);
        }
    }
    let denom = base.value().sqrt();
    let rel = if denom > 0.0 { res.value().sqrt() / denom } else { res.value().sqrt() };
    Ok((alpha.iter().copied().collect(), rel))
}

/// Multipliers `alpha` minimizing `|grad E + sum alpha_j grad Q_j|` over
/// interior nodes, with the relative residual.
pub fn fit_multipliers(p: &VariationalProblem, u: &Field) -> Result<(Vec<f64>, f64), FunctionalError> {
    if p.k() == 0 {
        return Err(FunctionalError::NoConstraints);
    }
    fit_multipliers_from(&first_variation(p, u)?)
}

/// Pohozaev balance for `-Delta u + beta f(u) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pohozaev {
    /// `(N-2) T + 2 beta N V`
    pub defect: f64,
    /// `(N-2)/(2N) T`, the multiplier predicted when `V = -1`
    pub predicted_beta: f64,
}

pub fn pohozaev_defect(beta: f64, dim: usize, t: f64, v: f64) -> Pohozaev {
    let n = dim as f64;
    Pohozaev { defect: (n - 2.0) * t + 2.0 * beta * n * v, predicted_beta: (n - 2.0) / (2.0 * n) * t }
}
