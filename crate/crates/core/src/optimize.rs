//! Constrained minimization: augmented-Lagrangian outer loop around a
//! limited-memory BFGS inner solver working in the quadrature-weighted inner
//! product, so gradients are the continuum-scaled first variations.

use std::collections::VecDeque;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{Field, FieldError};
use crate::functional::{assemble, fit_multipliers_from, Assembly, FunctionalError, Variation, VariationalProblem};
use crate::grid::Grid;
use crate::numeric::CompensatedSum;

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error(transparent)]
    Functional(#[from] FunctionalError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("invalid options: {0}")]
    Options(String),
    #[error("constraint gradients are degenerate (Gram condition {cond:.3e})")]
    DegenerateGram { cond: f64 },
    #[error("constraint restoration did not converge (violation {violation:.3e})")]
    RestoreFailed { violation: f64 },
}

impl OptimizeError {
    pub fn code(&self) -> &'static str {
        match self {
            OptimizeError::Functional(e) => e.code(),
            OptimizeError::Field(_) => "field",
            OptimizeError::Options(_) => "options",
            OptimizeError::DegenerateGram { .. } => "degenerate_gram",
            OptimizeError::RestoreFailed { .. } => "restore_failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinimizeOptions {
    /// relative constraint tolerance
    pub eps_q: f64,
    /// relative KKT tolerance
    pub eps_k: f64,
    pub max_outer: usize,
    pub penalty_growth: f64,
    pub max_inner: usize,
    pub initial_penalty: f64,
    pub memory: usize,
    pub seed: u64,
    /// Pointwise bounds a converged minimizer must respect.
    pub value_bounds: Option<(f64, f64)>,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions {
            eps_q: 1e-8,
            eps_k: 1e-6,
            max_outer: 50,
            penalty_growth: 10.0,
            max_inner: 2000,
            initial_penalty: 10.0,
            memory: 12,
            seed: 0,
            value_bounds: None,
        }
    }
}

impl MinimizeOptions {
    pub fn validate(&self) -> Result<(), OptimizeError> {
        if !(self.eps_q > 0.0 && self.eps_k > 0.0) {
            return Err(OptimizeError::Options("tolerances must be positive".into()));
        }
        if !(self.penalty_growth > 1.0) {
            return Err(OptimizeError::Options("penalty growth must exceed 1".into()));
        }
        if !(self.initial_penalty > 0.0) || self.memory == 0 || self.max_outer == 0 {
            return Err(OptimizeError::Options("penalty, memory and outer cap must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    MaxIterations,
    DivergentPenalty,
    BoundsViolated,
}

#[derive(Debug, Clone)]
pub struct MinimizeResult {
    pub u: Field,
    pub energy: f64,
    pub constraints: Vec<f64>,
    pub multipliers: Vec<f64>,
    pub kkt: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub converged: bool,
    pub status: Status,
    pub support_margin: f64,
}

impl MinimizeResult {
    pub fn summary(&self) -> serde_json::Value {
        serde_json::json!({
            "energy": self.energy,
            "constraints": self.constraints,
            "multipliers": self.multipliers,
            "kkt": self.kkt,
            "outer_iterations": self.outer_iterations,
            "inner_iterations": self.inner_iterations,
            "converged": self.converged,
            "status": self.status,
            "support_margin": self.support_margin,
        })
    }
}

/// One line of the progress log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub outer: usize,
    pub inner: usize,
    pub energy: f64,
    pub violation: f64,
    pub kkt: f64,
    pub penalty: f64,
}

pub enum Init {
    Field(Field),
    Seed(u64),
}

/// Smooth random start: a few Gaussian bumps with seeded centers and signs.
pub fn random_init(grid: &Arc<Grid>, m: usize, seed: u64) -> Field {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hw = grid.domain().bounding_half_widths();
    let dim = grid.dim();
    let bumps: Vec<(Vec<f64>, f64, Vec<f64>)> = (0..3)
        .map(|_| {
            let c: Vec<f64> = hw.iter().map(|a| rng.random_range(-0.4..0.4) * a).collect();
            let s = 0.25 * hw.iter().cloned().fold(f64::INFINITY, f64::min);
            let amp: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
            (c, s, amp)
        })
        .collect();
    Field::from_fn(grid.clone(), m, |x, out| {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (c, s, amp) in &bumps {
            let d2: f64 = (0..dim).map(|a| (x[a] - c[a]).powi(2)).sum();
            let e = (-d2 / (s * s)).exp();
            for (o, a) in out.iter_mut().zip(amp) {
                *o += a * e;
            }
        }
    })
}

struct Weighted {
    w: Vec<f64>,
}

impl Weighted {
    fn new(grid: &Grid, m: usize) -> Weighted {
        Weighted { w: grid.weights().iter().flat_map(|&x| std::iter::repeat_n(x, m)).collect() }
    }

    fn dot(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut s = CompensatedSum::new();
        for ((w, x), y) in self.w.iter().zip(a).zip(b) {
            s.add(w * x * y);
        }
        s.value()
    }

    fn norm(&self, a: &[f64]) -> f64 {
        self.dot(a, a).sqrt()
    }
}

struct Merit<'a> {
    p: &'a VariationalProblem,
    grid: Arc<Grid>,
    m: usize,
    alpha: Vec<f64>,
    rho: f64,
    targets: Vec<f64>,
    evals: usize,
}

struct Point {
    x: Vec<f64>,
    value: f64,
    grad: Vec<f64>,
    asm: Assembly,
}

impl Merit<'_> {
    fn eval(&mut self, x: Vec<f64>) -> Result<Point, OptimizeError> {
        self.evals += 1;
        let u = Field::new(self.grid.clone(), self.m, x)?;
        let asm = assemble(self.p, &u, true)?;
        let x = u.into_values();
        let mut value = asm.energy;
        let mut grad = asm.grad_energy.clone();
        for (j, gq) in asm.grad_constraints.iter().enumerate() {
            let c = asm.constraints[j] - self.targets[j];
            value += self.alpha[j] * c + 0.5 * self.rho * c * c;
            let coef = self.alpha[j] + self.rho * c;
            for (g, q) in grad.iter_mut().zip(gq) {
                *g += coef * q;
            }
        }
        Ok(Point { x, value, grad, asm })
    }
}

fn violation(asm: &Assembly, targets: &[f64]) -> f64 {
    asm.constraints
        .iter()
        .zip(targets)
        .map(|(q, l)| (q - l).abs() / l.abs().max(1.0))
        .fold(0.0, f64::max)
}

fn kkt_of(ws: &Weighted, asm: &Assembly, alpha: &[f64]) -> f64 {
    let mut r = asm.grad_energy.clone();
    for (a, gq) in alpha.iter().zip(&asm.grad_constraints) {
        for (ri, qi) in r.iter_mut().zip(gq) {
            *ri += a * qi;
        }
    }
    ws.norm(&r) / ws.norm(&asm.grad_energy).max(1.0)
}

/// Relative Euler-Lagrange residual `|gE + sum alpha_j gQ_j|_W / max(1, |gE|_W)`
/// of `u` for given multipliers.
pub fn kkt_residual(p: &VariationalProblem, u: &Field, alpha: &[f64]) -> Result<f64, OptimizeError> {
    let asm = assemble(p, u, true)?;
    Ok(kkt_of(&Weighted::new(&p.grid, p.components()), &asm, alpha))
}

struct InnerOutcome {
    point: Point,
    iterations: usize,
    stalled: bool,
}

/// L-BFGS on the merit function until the weighted gradient norm drops
/// below `tol`.
fn lbfgs(merit: &mut Merit, ws: &Weighted, start: Point, tol: f64, opts: &MinimizeOptions) -> Result<InnerOutcome, OptimizeError> {
    let mut cur = start;
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut it = 0;
    let mut stalled = false;
    while it < opts.max_inner {
        let gnorm = ws.norm(&cur.grad);
        if gnorm <= tol {
            break;
        }
        // two-loop recursion in the weighted metric
        let mut q = cur.grad.clone();
        let mut coefs = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * ws.dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            coefs.push(a);
        }
        let gamma = match hist.back() {
            Some((s, y, _)) => ws.dot(s, y) / ws.dot(y, y),
            None => 1.0 / gnorm.max(1.0),
        };
        q.iter_mut().for_each(|x| *x *= gamma);
        for ((s, y, rho), a) in hist.iter().zip(coefs.iter().rev()) {
            let b = rho * ws.dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        let mut d: Vec<f64> = q.iter().map(|x| -x).collect();
        let mut slope = ws.dot(&cur.grad, &d);
        if !(slope < 0.0) {
            hist.clear();
            d = cur.grad.iter().map(|x| -x / gnorm.max(1.0)).collect();
            slope = ws.dot(&cur.grad, &d);
        }
        let Some(next) = line_search(merit, ws, &cur, &d, slope)? else {
            if hist.is_empty() {
                stalled = true;
                break;
            }
            hist.clear();
            continue;
        };
        it += 1;
        let s: Vec<f64> = next.x.iter().zip(&cur.x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next.grad.iter().zip(&cur.grad).map(|(a, b)| a - b).collect();
        let sy = ws.dot(&s, &y);
        if sy > 1e-12 * ws.norm(&s) * ws.norm(&y) && sy > 0.0 {
            if hist.len() == opts.memory {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        cur = next;
    }
    Ok(InnerOutcome { point: cur, iterations: it, stalled })
}

/// Strong-Wolfe line search (bracketing plus cubic zoom). Returns `None`
/// when no acceptable decrease is found.
fn line_search(merit: &mut Merit, ws: &Weighted, cur: &Point, d: &[f64], slope0: f64) -> Result<Option<Point>, OptimizeError> {
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    let f0 = cur.value;
    let at = |merit: &mut Merit, a: f64| -> Result<(Point, f64), OptimizeError> {
        let x: Vec<f64> = cur.x.iter().zip(d).map(|(x, di)| x + a * di).collect();
        let p = merit.eval(x)?;
        let s = ws.dot(&p.grad, d);
        Ok((p, s))
    };
    let armijo = |f: f64, a: f64| f <= f0 + C1 * a * slope0;
    let mut a_prev = 0.0;
    let mut f_prev = f0;
    let mut s_prev = slope0;
    let mut a = 1.0;
    let mut best: Option<Point> = None;
    for i in 0..20 {
        let (p, s) = at(merit, a)?;
        if !p.value.is_finite() || !armijo(p.value, a) || (i > 0 && p.value >= f_prev) {
            return zoom(merit, ws, cur, d, slope0, (a_prev, f_prev, s_prev), (a, p.value, s), best);
        }
        if s.abs() <= -C2 * slope0 {
            return Ok(Some(p));
        }
        if s >= 0.0 {
            return zoom(merit, ws, cur, d, slope0, (a, p.value, s), (a_prev, f_prev, s_prev), Some(p));
        }
        a_prev = a;
        f_prev = p.value;
        s_prev = s;
        best = Some(p);
        a *= 2.0;
    }
    Ok(best)
}

#[allow(clippy::too_many_arguments)]
fn zoom(
    merit: &mut Merit,
    ws: &Weighted,
    cur: &Point,
    d: &[f64],
    slope0: f64,
    mut lo: (f64, f64, f64),
    mut hi: (f64, f64, f64),
    mut best: Option<Point>,
) -> Result<Option<Point>, OptimizeError> {
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    let f0 = cur.value;
    for _ in 0..30 {
        let (a0, f0_, s0) = lo;
        let (a1, f1, s1) = hi;
        // cubic interpolation, safeguarded into the middle of the bracket
        let d1 = s0 + s1 - 3.0 * (f0_ - f1) / (a0 - a1);
        let disc = d1 * d1 - s0 * s1;
        let mut a = if disc >= 0.0 {
            let d2 = (a1 - a0).signum() * disc.sqrt();
            a1 - (a1 - a0) * (s1 + d2 - d1) / (s1 - s0 + 2.0 * d2)
        } else {
            0.5 * (a0 + a1)
        };
        let (l, r) = if a0 < a1 { (a0, a1) } else { (a1, a0) };
        let margin = 0.1 * (r - l);
        if !a.is_finite() || a < l + margin || a > r - margin {
            a = 0.5 * (a0 + a1);
        }
        if (r - l) <= 1e-14 * r.max(1e-300) {
            break;
        }
        let x: Vec<f64> = cur.x.iter().zip(d).map(|(x, di)| x + a * di).collect();
        let p = merit.eval(x)?;
        let s = ws.dot(&p.grad, d);
        if !p.value.is_finite() || p.value > f0 + C1 * a * slope0 || p.value >= lo.1 {
            hi = (a, p.value, s);
        } else {
            if s.abs() <= -C2 * slope0 {
                return Ok(Some(p));
            }
            if s * (a1 - a0) >= 0.0 {
                hi = lo;
            }
            lo = (a, p.value, s);
            best = Some(p);
        }
    }
    // accept the best Armijo point found if any
    Ok(best.filter(|p| p.value <= f0))
}

/// Support margin: smallest fraction of the box half-width between the
/// `|u| > 1e-6` set and the box boundary.
pub fn support_margin(u: &Field) -> f64 {
    let grid = u.grid();
    let hw = grid.domain().bounding_half_widths();
    let mut margin: f64 = 1.0;
    let mut x = vec![0.0; grid.dim()];
    for node in 0..grid.len() {
        if u.at(node).iter().any(|v| v.abs() > 1e-6) {
            grid.coords_into(node, &mut x);
            for (xa, a) in x.iter().zip(&hw) {
                margin = margin.min((a - xa.abs()) / a);
            }
        }
    }
    margin
}

fn initial_multipliers(asm: &Assembly, grid: &Arc<Grid>, m: usize) -> Vec<f64> {
    let k = asm.constraints.len();
    if k == 0 {
        return Vec::new();
    }
    let mk = |v: &Vec<f64>| Field::new(grid.clone(), m, v.clone());
    let var = (|| -> Result<Variation, FieldError> {
        Ok(Variation {
            grad_energy: mk(&asm.grad_energy)?,
            grad_constraints: asm.grad_constraints.iter().map(mk).collect::<Result<_, _>>()?,
            nondifferentiable: 0,
        })
    })();
    match var.ok().map(|v| fit_multipliers_from(&v)) {
        Some(Ok((a, _))) => a,
        _ => vec![0.0; k],
    }
}

/// Augmented-Lagrangian minimization with a progress callback.
pub fn minimize_with(
    p: &VariationalProblem,
    init: Init,
    opts: &MinimizeOptions,
    log: &mut dyn FnMut(&Progress),
) -> Result<MinimizeResult, OptimizeError> {
    opts.validate()?;
    let m = p.components();
    let grid = p.grid.clone();
    let u0 = match init {
        Init::Field(f) => f,
        Init::Seed(s) => random_init(&grid, m, s),
    };
    if *u0.grid() != *grid {
        return Err(FieldError::GridMismatch.into());
    }
    let ws = Weighted::new(&grid, m);
    let targets = p.targets();
    let k = targets.len();
    let mut merit = Merit { p, grid: grid.clone(), m, alpha: vec![0.0; k], rho: opts.initial_penalty, targets: targets.clone(), evals: 0 };
    let mut cur = merit.eval(u0.into_values())?;
    merit.alpha = initial_multipliers(&cur.asm, &grid, m);
    // penalty large enough that collapsing onto a trivial infeasible state
    // does not pay off against the starting energy
    let c2: f64 = cur.asm.constraints.iter().zip(&targets).map(|(q, l)| (q - l) * (q - l)).sum();
    let scaled = 10.0 * cur.asm.energy.abs().max(1.0) / (0.5 * c2).max(1.0);
    merit.rho = opts.initial_penalty.max(scaled.min(1e8));
    cur = merit.eval(cur.x)?;
    let scale_e = |asm: &Assembly| ws.norm(&asm.grad_energy).max(1.0);
    let mut eta = 0.1f64.max(opts.eps_q);
    let mut omega = 1e-2 * scale_e(&cur.asm);
    let mut inner_total = 0;
    let mut status = Status::MaxIterations;
    let mut outer = 0;
    let mut kkt = f64::INFINITY;
    let mut last_viol = violation(&cur.asm, &targets);
    while outer < opts.max_outer {
        outer += 1;
        let target = omega.max(0.2 * opts.eps_k * scale_e(&cur.asm));
        let res = lbfgs(&mut merit, &ws, cur, target, opts)?;
        inner_total += res.iterations;
        cur = res.point;
        let viol = violation(&cur.asm, &targets);
        // multipliers implied by the current penalty term
        let implied: Vec<f64> =
            (0..k).map(|j| merit.alpha[j] + merit.rho * (cur.asm.constraints[j] - targets[j])).collect();
        kkt = kkt_of(&ws, &cur.asm, &implied);
        log(&Progress { outer, inner: res.iterations, energy: cur.asm.energy, violation: viol, kkt, penalty: merit.rho });
        if !cur.asm.energy.is_finite() || cur.asm.energy < -1e12 {
            status = Status::DivergentPenalty;
            merit.alpha = implied;
            break;
        }
        if viol <= opts.eps_q && kkt <= opts.eps_k {
            merit.alpha = implied;
            status = Status::Converged;
            break;
        }
        if viol <= eta.max(opts.eps_q) || k == 0 {
            merit.alpha = implied;
            eta = (eta * 0.1).max(0.1 * opts.eps_q);
            omega = (omega * 0.1).max(0.2 * opts.eps_k * scale_e(&cur.asm));
        } else if viol > 0.25 * last_viol || res.stalled {
            merit.rho *= opts.penalty_growth;
            if merit.rho > 1e14 {
                status = Status::DivergentPenalty;
                break;
            }
        } else {
            merit.alpha = implied;
        }
        last_viol = viol;
        cur = merit.eval(cur.x)?;
    }
    let u = Field::new(grid.clone(), m, cur.x)?;
    if status == Status::Converged {
        if let Some((lo, hi)) = opts.value_bounds {
            if u.values().iter().any(|&v| v < lo || v > hi) {
                status = Status::BoundsViolated;
            }
        }
    }
    let support_margin = support_margin(&u);
    Ok(MinimizeResult {
        energy: cur.asm.energy,
        constraints: cur.asm.constraints.clone(),
        multipliers: merit.alpha.clone(),
        kkt,
        outer_iterations: outer,
        inner_iterations: inner_total,
        converged: status == Status::Converged,
        status,
        support_margin,
        u,
    })
}

pub fn minimize(p: &VariationalProblem, init: Init, opts: &MinimizeOptions) -> Result<MinimizeResult, OptimizeError> {
    minimize_with(p, init, opts, &mut |_| {})
}

/// Newton projection onto `{Q = lambda}` along the span of the constraint
/// gradients (minimal-norm correction in the weighted metric).
pub fn restore_constraints(p: &VariationalProblem, u: &Field, eps_q: f64) -> Result<Field, OptimizeError> {
    let k = p.k();
    if k == 0 {
        return Err(FunctionalError::NoConstraints.into());
    }
    let m = p.components();
    let ws = Weighted::new(&p.grid, m);
    let targets = p.targets();
    let mut x = u.values().to_vec();
    for _ in 0..50 {
        let f = Field::new(p.grid.clone(), m, x.clone())?;
        let asm = assemble(p, &f, true)?;
        let c: Vec<f64> = asm.constraints.iter().zip(&targets).map(|(q, l)| q - l).collect();
        if violation(&asm, &targets) <= eps_q {
            return Ok(f);
        }
        let gram = DMatrix::from_fn(k, k, |i, j| ws.dot(&asm.grad_constraints[i], &asm.grad_constraints[j]));
        let sv = gram.singular_values();
        let cond = if sv.min() > 0.0 { sv.max() / sv.min() } else { f64::INFINITY };
        if !(cond <= 1e12) {
            return Err(OptimizeError::DegenerateGram { cond });
        }
        let beta = gram.lu().solve(&DVector::from_vec(c.iter().map(|v| -v).collect())).ok_or(OptimizeError::DegenerateGram { cond })?;
        for (j, g) in asm.grad_constraints.iter().enumerate() {
            for (xi, gi) in x.iter_mut().zip(g) {
                *xi += beta[j] * gi;
            }
        }
    }
    let f = Field::new(p.grid.clone(), m, x)?;
    let asm = assemble(p, &f, false)?;
    Err(OptimizeError::RestoreFailed { violation: violation(&asm, &targets) })
}

/// Rotation- and translation-invariant fingerprint: per component, moments
/// `int |u_c| |x - c|^p` (p = 0..3) about the component's center of mass,
/// collected and sorted.
pub fn fingerprint(u: &Field) -> Vec<f64> {
    let grid = u.grid();
    let m = u.components();
    let dim = grid.dim();
    let w = grid.weights();
    let mut out = Vec::new();
    let mut x = vec![0.0; dim];
    for c in 0..m {
        let mut mass = CompensatedSum::new();
        let mut first = vec![CompensatedSum::new(); dim];
        for node in 0..grid.len() {
            let a = w[node] * u.get(node, c).abs();
            if a == 0.0 {
                continue;
            }
            grid.coords_into(node, &mut x);
            mass.add(a);
            for (f, xi) in first.iter_mut().zip(&x) {
                f.add(a * xi);
            }
        }
        let m0 = mass.value();
        let center: Vec<f64> = first.iter().map(|f| if m0 > 0.0 { f.value() / m0 } else { 0.0 }).collect();
        let mut mom = vec![CompensatedSum::new(); 3];
        for node in 0..grid.len() {
            let a = w[node] * u.get(node, c).abs();
            if a == 0.0 {
                continue;
            }
            grid.coords_into(node, &mut x);
            let r = x.iter().zip(&center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            mom[0].add(a * r);
            mom[1].add(a * r * r);
            mom[2].add(a * r * r * r);
        }
        out.push(m0);
        out.extend(mom.iter().map(|s| s.value()));
    }
    out.sort_by(|a, b| a.total_cmp(b));
    out
}

fn same_minimizer(a: &MinimizeResult, b: &MinimizeResult, fa: &[f64], fb: &[f64]) -> bool {
    let scale = a.energy.abs().max(b.energy.abs()).max(1.0);
    if (a.energy - b.energy).abs() > 1e-6 * scale {
        return false;
    }
    fa.iter().zip(fb).all(|(x, y)| (x - y).abs() <= 1e-3 * x.abs().max(y.abs()).max(1e-12))
}

/// One failed start of [`multi_start`].
#[derive(Debug)]
pub struct StartFailure {
    pub seed: u64,
    pub error: OptimizeError,
}

/// Independent runs from seeds `opts.seed, opts.seed + 1, ...`; results are
/// sorted by energy and deduplicated by energy and [`fingerprint`].
pub fn multi_start(
    p: &VariationalProblem,
    opts: &MinimizeOptions,
    n_starts: usize,
    init: Option<&dyn Fn(u64) -> Field>,
) -> Result<(Vec<MinimizeResult>, Vec<StartFailure>), OptimizeError> {
    if n_starts == 0 {
        return Err(OptimizeError::Options("need at least one start".into()));
    }
    let mut found: Vec<(MinimizeResult, Vec<f64>)> = Vec::new();
    let mut failures = Vec::new();
    for i in 0..n_starts as u64 {
        let seed = opts.seed.wrapping_add(i);
        let start = match init {
            Some(f) => Init::Field(f(seed)),
            None => Init::Seed(seed),
        };
        match minimize(p, start, opts) {
            Ok(r) => {
                let fp = fingerprint(&r.u);
                if !found.iter().any(|(q, fq)| same_minimizer(q, &r, fq, &fp)) {
                    found.push((r, fp));
                }
            }
            Err(error) => failures.push(StartFailure { seed, error }),
        }
    }
    found.sort_by(|a, b| a.0.energy.total_cmp(&b.0.energy));
    Ok((found.into_iter().map(|x| x.0).collect(), failures))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::DensitySet;
    use crate::functional::{fit_multipliers, interior_nodes};
    use crate::grid::Domain;

    fn quad_problem(n: usize) -> VariationalProblem {
        let g = Arc::new(Grid::uniform(Domain::cube(2, 1.0), n).unwrap());
        VariationalProblem::new(g, DensitySet::parse(1, "g*g + (1 + r*r)*u1*u1", &[("u1", 1.0)]).unwrap(), false).unwrap()
    }

    /// Dense KKT solve of the discrete quadratic problem.
    fn quad_oracle(p: &VariationalProblem) -> Vec<f64> {
        let g = &p.grid;
        let n = g.len();
        let w = g.weights();
        // E(u) = u^T A u with A assembled from the compact stencil
        let mut a = DMatrix::<f64>::zeros(n + 1, n + 1);
        let h2: Vec<f64> = g.spacing().iter().map(|h| h * h).collect();
        for node in 0..n {
            let r2: f64 = g.coords(node).iter().map(|x| x * x).sum();
            a[(node, node)] += 2.0 * w[node] * (1.0 + r2);
            for ax in 0..g.dim() {
                let up = g.neighbor(node, ax, 1);
                let dn = g.neighbor(node, ax, -1);
                let kappa = if up.is_some() && dn.is_some() { 0.5 } else { 1.0 };
                for nb in [up, dn].into_iter().flatten() {
                    let c = 2.0 * w[node] * kappa / h2[ax];
                    a[(node, node)] += c;
                    a[(nb, nb)] += c;
                    a[(node, nb)] -= c;
                    a[(nb, node)] -= c;
                }
            }
            a[(node, n)] = w[node];
            a[(n, node)] = w[node];
        }
        let mut rhs = DVector::zeros(n + 1);
        rhs[n] = 1.0;
        let sol = a.lu().solve(&rhs).unwrap();
        sol.iter().take(n).copied().collect()
    }

    #[test]
    fn quadratic_problem_matches_kkt_solve() {
        let p = quad_problem(13);
        let exact = quad_oracle(&p);
        let r = minimize(&p, Init::Seed(1), &MinimizeOptions::default()).unwrap();
        assert!(r.converged, "{:?}", r.status);
        let err = r.u.values().iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-6, "{err}");
        let (alpha, res) = fit_multipliers(&p, &r.u).unwrap();
        assert!((alpha[0] - r.multipliers[0]).abs() <= 1e-4 * alpha[0].abs(), "{alpha:?} {:?}", r.multipliers);
        assert!(res <= 1e-5);
        assert!(!interior_nodes(&p.grid).is_empty());
    }

    #[test]
    fn restart_from_minimizer_is_fixed_point() {
        let p = quad_problem(11);
        let r = minimize(&p, Init::Seed(2), &MinimizeOptions::default()).unwrap();
        let again = minimize(&p, Init::Field(r.u.clone()), &MinimizeOptions::default()).unwrap();
        assert!(again.converged && again.outer_iterations <= 2);
        assert!(again.energy <= r.energy + 1e-12 * r.energy.abs());
    }

    #[test]
    fn deterministic_given_seed() {
        let p = quad_problem(9);
        let a = minimize(&p, Init::Seed(5), &MinimizeOptions::default()).unwrap();
        let b = minimize(&p, Init::Seed(5), &MinimizeOptions::default()).unwrap();
        assert_eq!(a.u, b.u);
        assert_eq!(a.energy.to_bits(), b.energy.to_bits());
    }

    #[test]
    fn merit_decreases_within_outer_iterations() {
        let p = quad_problem(9);
        let ws = Weighted::new(&p.grid, 1);
        let mut merit = Merit { p: &p, grid: p.grid.clone(), m: 1, alpha: vec![0.3], rho: 10.0, targets: vec![1.0], evals: 0 };
        let mut cur = merit.eval(random_init(&p.grid, 1, 4).into_values()).unwrap();
        let mut last = cur.value;
        for _ in 0..30 {
            let opts = MinimizeOptions { max_inner: 1, ..Default::default() };
            cur = lbfgs(&mut merit, &ws, cur, 0.0, &opts).unwrap().point;
            assert!(cur.value <= last);
            last = cur.value;
        }
    }

    #[test]
    fn multi_start_on_convex_problem() {
        let p = quad_problem(9);
        let (rs, fails) = multi_start(&p, &MinimizeOptions::default(), 3, None).unwrap();
        assert!(fails.is_empty());
        assert_eq!(rs.len(), 1);
        let (one, _) = multi_start(&p, &MinimizeOptions::default(), 1, None).unwrap();
        assert_eq!(one.len(), 1);
    }

    #[test]
    fn restore_scaled_field() {
        let g = Arc::new(Grid::uniform(Domain::cube(2, 1.0), 17).unwrap());
        let p = VariationalProblem::new(g.clone(), DensitySet::parse(1, "g*g", &[("u1*u1", 1.0)]).unwrap(), false).unwrap();
        let u = Field::scalar_fn(g.clone(), |x| (1.0 - x[0] * x[0]) * (1.0 - x[1] * x[1]));
        let feasible = restore_constraints(&p, &u, 1e-12).unwrap();
        let same = restore_constraints(&p, &feasible, 1e-12).unwrap();
        assert!(same.max_abs_difference(&feasible).unwrap() <= 1e-12);
        let scaled = feasible.scaled(1.01);
        let back = restore_constraints(&p, &scaled, 1e-8).unwrap();
        let q = crate::functional::constraints(&p, &back).unwrap();
        assert!((q[0] - 1.0).abs() <= 1e-8);
        let pd = VariationalProblem::new(g.clone(), DensitySet::parse(1, "g*g", &[("u1*u1", 1.0), ("2*u1*u1", 3.0)]).unwrap(), false).unwrap();
        assert!(matches!(restore_constraints(&pd, &u, 1e-8), Err(OptimizeError::DegenerateGram { .. })));
    }

    #[test]
    fn fingerprint_is_translation_invariant() {
        let g = Arc::new(Grid::uniform(Domain::cube(2, 2.0), 41).unwrap());
        let b = |c: [f64; 2]| Field::scalar_fn(g.clone(), move |x| (-((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2)) / 0.1).exp());
        let a = fingerprint(&b([0.5, 0.0]));
        let c = fingerprint(&b([0.0, -0.5]));
        assert!(a.iter().zip(&c).all(|(x, y)| (x - y).abs() <= 1e-6 * x.abs().max(1e-12)));
    }
}
