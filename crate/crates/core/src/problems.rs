//! Catalog of example problems: the compacton problems with one and two
//! constraints, decoupled vector problems, one-dimensional problems, the
//! two-bump construction and the shooting oracle bundle.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compacton::{CompactonError, CompactonSpec};
use crate::density::{BinOp, DensityError, DensityExpr, DensitySet, Expr, Var};
use crate::field::{Field, FieldError};
use crate::functional::{constraints, energy, fit_multipliers, pohozaev_defect, FunctionalError, Pohozaev, VariationalProblem};
use crate::optimize::{kkt_residual, minimize_with, Init, MinimizeOptions, MinimizeResult, OptimizeError, Progress};
use crate::grid::{Domain, Grid};
use crate::numeric::norm;
use crate::radial::{rescale_profile, shoot_ground_state, M1Constants, RadialError, RadialProfile};

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("the compacton problems need N >= 3 (got N = {0})")]
    Dimension(usize),
    #[error(transparent)]
    Compacton(#[from] CompactonError),
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error(transparent)]
    Functional(#[from] FunctionalError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Radial(#[from] RadialError),
    #[error("decoupling needs a scalar problem with one constraint")]
    NotScalar,
    #[error("energy is not of the form a*g^2 + V(u1): {0}")]
    NotSeparable(String),
    #[error("bump supports overlap: |y| = {norm} < {needed}")]
    SupportsOverlap { norm: f64, needed: f64 },
    #[error("bump support leaves the box")]
    OutOfBox,
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
}

impl ProblemError {
    pub fn code(&self) -> &'static str {
        match self {
            ProblemError::Dimension(_) => "dimension",
            ProblemError::Compacton(_) => "compacton",
            ProblemError::Density(e) => e.code(),
            ProblemError::Functional(e) => e.code(),
            ProblemError::Field(_) => "field",
            ProblemError::Radial(_) => "radial",
            ProblemError::NotScalar => "not_scalar",
            ProblemError::NotSeparable(_) => "not_separable",
            ProblemError::SupportsOverlap { .. } => "supports_overlap",
            ProblemError::OutOfBox => "out_of_box",
            ProblemError::Optimize(e) => e.code(),
        }
    }
}

fn box_grid(dim: usize, half_width: f64, n: usize) -> Result<Arc<Grid>, ProblemError> {
    Ok(Arc::new(Grid::uniform(Domain::cube(dim, half_width), n)?))
}

/// Minimize `T(u) = int |grad u|^2` subject to `V(u) = int F(u) = -1`.
pub fn make_m1(spec: &CompactonSpec, dim: usize, half_width: f64, n: usize) -> Result<VariationalProblem, ProblemError> {
    if dim < 3 {
        return Err(ProblemError::Dimension(dim));
    }
    let d = DensitySet::new(DensityExpr::parse("g*g", 1)?, vec![(spec.potential(1), -1.0)])?;
    Ok(VariationalProblem::new(box_grid(dim, half_width, n)?, d, true)?)
}

/// As [`make_m1`] with the second constraint `W(u) = int F(-u) = -1`.
pub fn make_m2(spec: &CompactonSpec, dim: usize, half_width: f64, n: usize) -> Result<VariationalProblem, ProblemError> {
    if dim < 3 {
        return Err(ProblemError::Dimension(dim));
    }
    make_m2_on(spec, box_grid(dim, half_width, n)?)
}

/// [`make_m2`] on a caller-supplied grid (e.g. from [`two_bump_grid`]).
pub fn make_m2_on(spec: &CompactonSpec, grid: Arc<Grid>) -> Result<VariationalProblem, ProblemError> {
    if grid.dim() < 3 {
        return Err(ProblemError::Dimension(grid.dim()));
    }
    let d = DensitySet::new(
        DensityExpr::parse("g*g", 1)?,
        vec![(spec.potential(1), -1.0), (spec.mirrored_potential(1), -1.0)],
    )?;
    Ok(VariationalProblem::new(grid, d, true)?)
}

/// Box elongated along `x1` holding two supports of radius `support` centred
/// at `+-y/2` on that axis, with margin factor `margin` and `n` nodes across
/// the short axes. The long axis gets the same spacing (to within rounding).
pub fn two_bump_grid(dim: usize, support: f64, y_norm: f64, margin: f64, n: usize) -> Result<Arc<Grid>, ProblemError> {
    let short = margin * support;
    let long = 0.5 * y_norm + short;
    let n_long = ((long / short) * (n - 1) as f64).round() as usize + 1;
    let mut half_widths = vec![short; dim];
    half_widths[0] = long;
    let mut counts = vec![n; dim];
    counts[0] = n_long;
    Ok(Arc::new(Grid::new(Domain::Box { half_widths }, counts)?))
}

fn with_var(e: &Expr, from: Var, to: Expr) -> Expr {
    e.substitute(&|v| if v == from { Some(to.clone()) } else { None })
}

/// `k` uncoupled copies of a scalar problem `a*g^2 + V(u)` with constraint
/// `int G(u) = lambda`: energy `a*g^2 + sum_j V(u_j)`, constraint `j` on
/// component `j`.
pub fn make_pk_decoupled(p1: &VariationalProblem, k: usize) -> Result<VariationalProblem, ProblemError> {
    if p1.components() != 1 || p1.k() != 1 || k == 0 {
        return Err(ProblemError::NotScalar);
    }
    if k == 1 {
        return Ok(p1.clone());
    }
    let e = p1.densities.energy.expr();
    // separability check on sample points: e(u,g) = e(0,g) + e(u,0) - e(0,0), e(0,g) = a g^2 + e(0,0)
    let ev = |u: f64, g: f64| p1.densities.energy.eval(0.0, &[u], g);
    let e00 = ev(0.0, 0.0)?;
    let a = ev(0.0, 1.0)? - e00;
    for &(u, g) in &[(0.3, 0.7), (-1.1, 2.0), (1.7, 0.2), (0.9, 3.1)] {
        let sep = ev(u, g)? - (ev(0.0, g)? + ev(u, 0.0)? - e00);
        let quad = ev(0.0, g)? - e00 - a * g * g;
        if sep.abs() > 1e-12 * (1.0 + ev(u, g)?.abs()) || quad.abs() > 1e-12 * (1.0 + a.abs() * g * g) {
            return Err(ProblemError::NotSeparable(p1.densities.energy.to_string()));
        }
    }
    let grad_part = with_var(e, Var::U(0), Expr::Const(0.0));
    let pot = with_var(e, Var::G, Expr::Const(0.0));
    let mut energy = grad_part;
    for j in 0..k {
        let pj = with_var(&pot, Var::U(0), Expr::Var(Var::U(j)));
        let shifted = Expr::bin(BinOp::Sub, pj, Expr::Const(e00));
        energy = Expr::bin(BinOp::Add, energy, shifted);
    }
    let (g, lambda) = &p1.densities.constraints[0];
    let cons = (0..k)
        .map(|j| (DensityExpr::from_expr(with_var(g.expr(), Var::U(0), Expr::Var(Var::U(j))), k), *lambda))
        .collect();
    let d = DensitySet::new(DensityExpr::from_expr(energy, k), cons)?;
    Ok(VariationalProblem::new(p1.grid.clone(), d, p1.translation_invariant)?)
}

/// `E(u) = int 1/2 |u'|^2 + F(u)` on `[-half_width, half_width]` with any
/// number of constraints.
pub fn make_1d(f_text: &str, constraints: &[(&str, f64)], half_width: f64, n: usize) -> Result<VariationalProblem, ProblemError> {
    let f = crate::density::parse_expr(f_text, 1)?;
    let grad = Expr::bin(BinOp::Mul, Expr::Const(0.5), Expr::bin(BinOp::Mul, Expr::Var(Var::G), Expr::Var(Var::G)));
    let energy = DensityExpr::from_expr(Expr::bin(BinOp::Add, grad, f), 1);
    let cons = constraints
        .iter()
        .map(|(t, l)| Ok((DensityExpr::parse(t, 1)?, *l)))
        .collect::<Result<Vec<_>, DensityError>>()?;
    let d = DensitySet::new(energy, cons)?;
    let ti = !d.uses_radius();
    Ok(VariationalProblem::new(box_grid(1, half_width, n)?, d, ti)?)
}

/// Shooting oracle for the one-constraint compacton problem.
#[derive(Debug, Clone)]
pub struct M1Oracle {
    pub spec: CompactonSpec,
    /// Unscaled ground state `v`.
    pub ground_state: RadialProfile,
    /// Constrained minimizer profile `u*` with `V(u*) = -1`.
    pub profile: RadialProfile,
    pub constants: M1Constants,
}

/// Golden values of the oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct M1Golden {
    pub infimum: f64,
    pub beta0: f64,
    pub support_radius: f64,
}

impl M1Oracle {
    pub fn new(spec: &CompactonSpec, dim: usize, dr: f64) -> Result<Self, ProblemError> {
        let v = shoot_ground_state(spec, dim, dr)?;
        let (u, constants) = rescale_profile(&v, spec)?;
        Ok(M1Oracle { spec: spec.clone(), ground_state: v, profile: u, constants })
    }

    /// Reference instance in three dimensions.
    pub fn reference() -> Result<Self, ProblemError> {
        Self::new(&CompactonSpec::reference(), 3, 1e-4)
    }

    pub fn support_radius(&self) -> f64 {
        self.profile.support
    }

    pub fn golden(&self) -> M1Golden {
        M1Golden { infimum: self.constants.infimum, beta0: self.constants.beta0, support_radius: self.support_radius() }
    }

    /// `u*(|x - center|)` on a grid.
    pub fn sample(&self, grid: &Arc<Grid>, center: &[f64]) -> Field {
        Field::scalar_fn(grid.clone(), |x| {
            let r = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            self.profile.eval(r)
        })
    }
}

/// Positive bump `amp * cos^2(pi r / (2 radius))` inside `radius`.
pub fn bump_field(grid: &Arc<Grid>, center: &[f64], amp: f64, radius: f64) -> Field {
    Field::scalar_fn(grid.clone(), |x| {
        let r = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        if r >= radius {
            0.0
        } else {
            amp * (std::f64::consts::FRAC_PI_2 * r / radius).cos().powi(2)
        }
    })
}

/// Default start for the one-constraint problem: amplitude 1.5, radius a
/// quarter of the box width, centered.
pub fn m1_init(p: &VariationalProblem) -> Field {
    let hw = p.domain().bounding_half_widths();
    let dim = p.dim();
    bump_field(&p.grid, &vec![0.0; dim], 1.5, 0.5 * hw[0])
}

/// Default start for the two-constraint problem: a bump minus a copy shifted
/// by `y`.
pub fn m2_init(p: &VariationalProblem, y: &[f64], radius: f64) -> Field {
    let dim = p.dim();
    let a = bump_field(&p.grid, &vec![0.0; dim], 1.5, radius);
    let shifted: Vec<f64> = y.iter().map(|v| -v).collect();
    let b = bump_field(&p.grid, &shifted, 1.5, radius);
    a.axpy(-1.0, &b).expect("same grid")
}

/// `u_y(x) = u*(x - y/2) - u*(x + y/2)`, the two-bump field translated so
/// that the pair is centred in the box.
pub fn build_u_y(profile: &RadialProfile, y: &[f64], grid: &Arc<Grid>) -> Result<Field, ProblemError> {
    let r = profile.support;
    let ny = norm(y);
    let needed = 2.0 * r + 2.0 * grid.h();
    if ny < needed {
        return Err(ProblemError::SupportsOverlap { norm: ny, needed });
    }
    let hw = grid.domain().bounding_half_widths();
    if y.iter().zip(&hw).any(|(ya, w)| 0.5 * ya.abs() + r > *w) {
        return Err(ProblemError::OutOfBox);
    }
    Ok(Field::scalar_fn(grid.clone(), |x| {
        let r0 = x.iter().zip(y).map(|(a, b)| (a - 0.5 * b) * (a - 0.5 * b)).sum::<f64>().sqrt();
        let r1 = x.iter().zip(y).map(|(a, b)| (a + 0.5 * b) * (a + 0.5 * b)).sum::<f64>().sqrt();
        profile.eval(r0) - profile.eval(r1)
    }))
}

/// Grid run of the one-constraint problem checked against the oracle.
#[derive(Debug, Clone)]
pub struct M1Run {
    pub problem: VariationalProblem,
    /// Raw optimizer output.
    pub result: MinimizeResult,
    /// Nonnegative part of the optimizer output. `F` vanishes for negative
    /// arguments, so this keeps `V` and does not raise `T`.
    pub u: Field,
    pub energy: f64,
    pub constraint: f64,
    /// Half the fitted multiplier: `-Lap u + beta f(u) = 0`.
    pub beta: f64,
    pub fit_residual: f64,
    pub kkt: f64,
    pub pohozaev: Pohozaev,
    /// `(N-2)T + 2 beta N V` over `(N-2)T`.
    pub pohozaev_rel: f64,
    /// `T / I - 1`
    pub energy_error: f64,
    /// `beta / beta0 - 1`
    pub beta_error: f64,
    pub min: f64,
    pub max: f64,
    /// Smallest value before taking the nonnegative part.
    pub raw_min: f64,
    /// Centroid of `u`.
    pub center: Vec<f64>,
    /// Largest `|u|` farther than `1.2 R_support` from the centroid.
    pub outside_max: f64,
    /// Ball-likeness of the support, see [`support_ball_ratio`].
    pub ball_ratio: f64,
}

impl M1Run {
    pub fn summary(&self) -> serde_json::Value {
        serde_json::json!({
            "energy": self.energy,
            "constraint": self.constraint,
            "beta": self.beta,
            "fit_residual": self.fit_residual,
            "kkt": self.kkt,
            "pohozaev_rel": self.pohozaev_rel,
            "energy_error": self.energy_error,
            "beta_error": self.beta_error,
            "min": self.min,
            "max": self.max,
            "raw_min": self.raw_min,
            "center": self.center,
            "outside_max": self.outside_max,
            "ball_ratio": self.ball_ratio,
            "optimizer": self.result.summary(),
        })
    }
}

/// Minimizes the one-constraint problem on an `n`-node cube of half-width
/// `box_factor * R_support`. Two starts are run, the centred bump and the
/// sampled oracle profile, and the converged one with lower energy is kept:
/// on coarse grids the discrete problem has several nearby critical points.
pub fn run_m1(oracle: &M1Oracle, n: usize, box_factor: f64, opts: &MinimizeOptions, progress: &mut dyn FnMut(&Progress)) -> Result<M1Run, ProblemError> {
    let dim = oracle.profile.dim;
    let r = oracle.support_radius();
    let p = make_m1(&oracle.spec, dim, box_factor * r, n)?;
    let starts = [m1_init(&p), oracle.sample(&p.grid, &vec![0.0; dim])];
    let mut best: Option<MinimizeResult> = None;
    for start in starts {
        let res = minimize_with(&p, Init::Field(start), opts, progress)?;
        let better = match &best {
            None => true,
            Some(b) => (res.converged, -res.energy) > (b.converged, -b.energy),
        };
        if better {
            best = Some(res);
        }
    }
    let result = best.expect("two starts");
    let u = result.u.map(|v| v.max(0.0));
    let t = energy(&p, &u)?;
    let q = constraints(&p, &u)?[0];
    let (alpha, fit_residual) = fit_multipliers(&p, &u)?;
    let kkt = kkt_residual(&p, &u, &alpha)?;
    let beta = 0.5 * alpha[0];
    let pohozaev = pohozaev_defect(beta, dim, t, q);
    let nd = dim as f64;
    let g = u.grid();
    let mut mass = 0.0;
    let mut center = vec![0.0; dim];
    for node in 0..g.len() {
        let w = g.weights()[node] * u.get(node, 0);
        mass += w;
        center.iter_mut().zip(g.coords(node)).for_each(|(c, x)| *c += w * x);
    }
    center.iter_mut().for_each(|c| *c /= mass);
    let mut outside_max: f64 = 0.0;
    for node in 0..g.len() {
        let d: f64 = g.coords(node).iter().zip(&center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        if d > 1.2 * r {
            outside_max = outside_max.max(u.get(node, 0).abs());
        }
    }
    let consts = &oracle.constants;
    let ball_ratio = support_ball_ratio(&u, &center, 1e-6 * u.max_abs());
    Ok(M1Run {
        ball_ratio,
        pohozaev_rel: pohozaev.defect / ((nd - 2.0) * t),
        energy_error: t / consts.infimum - 1.0,
        beta_error: beta / consts.beta0 - 1.0,
        min: u.values().iter().copied().fold(f64::INFINITY, f64::min),
        raw_min: result.u.values().iter().copied().fold(f64::INFINITY, f64::min),
        max: u.max_abs(),
        problem: p,
        result,
        u,
        energy: t,
        constraint: q,
        beta,
        fit_residual,
        kkt,
        pohozaev,
        center,
        outside_max,
    })
}

/// Conjecture check that the support `{|u| > threshold}` is a ball: the
/// equal-volume radius over the radius of gyration about `center`, scaled so
/// that a ball gives 1.
pub fn support_ball_ratio(u: &Field, center: &[f64], threshold: f64) -> f64 {
    let g = u.grid();
    let nd = g.dim() as f64;
    let mut vol = 0.0;
    let mut second = 0.0;
    for node in 0..g.len() {
        if g.inside(node) && u.at(node).iter().any(|v| v.abs() > threshold) {
            let w = g.weights()[node];
            vol += w;
            second += w * g.coords(node).iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
    }
    if vol == 0.0 {
        return f64::NAN;
    }
    let omega = crate::radial::sphere_area(g.dim()) / nd;
    let r_vol = (vol / omega).powf(1.0 / nd);
    let r_gyr = ((nd + 2.0) / nd * second / vol).sqrt();
    r_vol / r_gyr
}

/// Point symmetry and monotonicity of a one-dimensional field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Symmetry1d {
    pub center: f64,
    pub defect: f64,
    pub monotone_left: bool,
    pub monotone_right: bool,
}

pub fn check_1d_symmetry(u: &Field) -> Result<Symmetry1d, ProblemError> {
    let grid = u.grid();
    if grid.dim() != 1 {
        return Err(ProblemError::Dimension(grid.dim()));
    }
    let xs = grid.axis_coords(0);
    let h = grid.spacing()[0];
    let n = xs.len();
    let vals: Vec<f64> = (0..n).map(|i| u.get(i, 0)).collect();
    let mut i0 = 0;
    for i in 0..n {
        if vals[i].abs() > vals[i0].abs() {
            i0 = i;
        }
    }
    // quadratic refinement of the extremum
    let mut center = xs[i0];
    if i0 > 0 && i0 + 1 < n {
        let (a, b, c) = (vals[i0 - 1], vals[i0], vals[i0 + 1]);
        let den = a - 2.0 * b + c;
        if den != 0.0 {
            center += 0.5 * h * (a - c) / den;
        }
    }
    let sample = |x: f64| u.sample(&[x])[0];
    let reach = (center - xs[0]).min(xs[n - 1] - center);
    let steps = (reach / h).floor() as usize;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n {
        den += h * vals[i] * vals[i];
    }
    for s in 1..=steps {
        let d = s as f64 * h;
        let diff = sample(center + d) - sample(center - d);
        num += 2.0 * h * diff * diff;
    }
    let defect = if den > 0.0 { (num / den).sqrt() } else { 0.0 };
    let sign = if vals[i0] >= 0.0 { 1.0 } else { -1.0 };
    // ripples below the solver's relative accuracy do not count
    let tol = 1e-8 * vals[i0].abs();
    let monotone_left = (1..=i0).all(|i| sign * (vals[i] - vals[i - 1]) >= -tol);
    let monotone_right = (i0 + 1..n).all(|i| sign * (vals[i] - vals[i - 1]) <= tol);
    Ok(Symmetry1d { center, defect, monotone_left, monotone_right })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functional::{constraints, energy};

    #[test]
    fn ball_ratio_separates_balls_from_ellipsoids() {
        let g = Arc::new(Grid::uniform(Domain::cube(3, 2.0), 41).unwrap());
        let ball = Field::scalar_fn(g.clone(), |x| (1.5 - (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()).max(0.0));
        let r = support_ball_ratio(&ball, &[0.0; 3], 0.0);
        assert!((r - 1.0).abs() < 0.02, "{r}");
        let ell = Field::scalar_fn(g, |x| (1.0 - (x[0] * x[0] / 2.25 + x[1] * x[1] + x[2] * x[2] / 0.36).sqrt()).max(0.0));
        let r = support_ball_ratio(&ell, &[0.0; 3], 0.0);
        assert!((r - 1.0).abs() > 0.05, "{r}");
    }

    #[test]
    fn m1_and_m2_shapes() {
        let spec = CompactonSpec::reference();
        let p = make_m1(&spec, 3, 3.0, 9).unwrap();
        assert_eq!(p.k(), 1);
        assert!(p.translation_invariant);
        let vars = p.densities.energy.variables();
        assert!(!vars.contains(&Var::R));
        assert!(matches!(make_m1(&spec, 2, 3.0, 9), Err(ProblemError::Dimension(2))));
        let msg = make_m2(&spec, 2, 3.0, 9).unwrap_err().to_string();
        assert!(msg.contains("N >= 3"));
        let p2 = make_m2(&spec, 3, 3.0, 9).unwrap();
        assert_eq!(p2.k(), 2);
        let (g1, g2) = (&p2.densities.constraints[0].0, &p2.densities.constraints[1].0);
        for s in [-2.7, -1.2, -0.3, 0.0, 0.4, 1.6, 2.2] {
            assert_eq!(g2.eval(0.0, &[s], 0.0).unwrap(), g1.eval(0.0, &[-s], 0.0).unwrap());
        }
    }

    #[test]
    fn decoupled_energy_sums_components() {
        let g = box_grid(2, 4.0, 41).unwrap();
        let d = DensitySet::parse(1, "0.5*g*g + 0.25*pow(u1,4) - 0.5*u1*u1", &[("u1*u1", 1.0)]).unwrap();
        let p1 = VariationalProblem::new(g.clone(), d, true).unwrap();
        assert_eq!(make_pk_decoupled(&p1, 1).unwrap().densities, p1.densities);
        let p2 = make_pk_decoupled(&p1, 2).unwrap();
        assert_eq!(p2.components(), 2);
        let a = Field::scalar_fn(g.clone(), |x| (-(x[0] - 1.0).powi(2) - 2.0 * x[1] * x[1]).exp());
        let b = Field::scalar_fn(g.clone(), |x| (-2.0 * x[0] * x[0] - (x[1] - 1.0).powi(2)).exp());
        let both = Field::stack(&[a.clone(), b.clone()]).unwrap();
        let sum = energy(&p1, &a).unwrap() + energy(&p1, &b).unwrap();
        assert!((energy(&p2, &both).unwrap() - sum).abs() <= 1e-12 * sum.abs());
        let q = constraints(&p2, &both).unwrap();
        assert!((q[0] - constraints(&p1, &a).unwrap()[0]).abs() < 1e-14);
        assert!((q[1] - constraints(&p1, &b).unwrap()[0]).abs() < 1e-14);
        let bad = VariationalProblem::new(g, DensitySet::parse(1, "u1*g*g", &[("u1", 1.0)]).unwrap(), true).unwrap();
        assert!(matches!(make_pk_decoupled(&bad, 2), Err(ProblemError::NotSeparable(_))));
    }

    #[test]
    fn one_dimensional_energy_matches_independent_sum() {
        let p = make_1d("0.25*pow(u1,4) - 0.5*u1*u1", &[("u1*u1", 2.0), ("u1", 1.0), ("pow(u1,4)", 1.0)], 20.0, 4097).unwrap();
        assert_eq!(p.k(), 3);
        let u = Field::scalar_fn(p.grid.clone(), |x| 1.0 / x[0].cosh());
        let e = energy(&p, &u).unwrap();
        // trapezoid sum written out directly
        let xs = p.grid.axis_coords(0);
        let h = p.grid.spacing()[0];
        let v: Vec<f64> = xs.iter().map(|x| 1.0 / x.cosh()).collect();
        let n = v.len();
        let mut s = 0.0;
        for i in 0..n {
            let g2 = if i == 0 {
                ((v[1] - v[0]) / h).powi(2)
            } else if i == n - 1 {
                ((v[n - 1] - v[n - 2]) / h).powi(2)
            } else {
                0.5 * (((v[i + 1] - v[i]) / h).powi(2) + ((v[i] - v[i - 1]) / h).powi(2))
            };
            let w = if i == 0 || i == n - 1 { 0.5 * h } else { h };
            s += w * (0.5 * g2 + 0.25 * v[i].powi(4) - 0.5 * v[i] * v[i]);
        }
        assert!((e - s).abs() <= 1e-8 * s.abs(), "{e} {s}");
        // the continuum value is -2/3 + 1/3 ... checked loosely against the exact integral
        let exact = 1.0 / 3.0 + 0.25 * 4.0 / 3.0 - 0.5 * 2.0;
        assert!((e - exact).abs() < 1e-4, "{e} {exact}");
        let c = Field::scalar_fn(p.grid.clone(), |_| 0.05);
        let q = constraints(&p, &c).unwrap();
        assert!((q[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn one_dimensional_symmetry_checks() {
        let g = box_grid(1, 20.0, 4097).unwrap();
        let u = Field::scalar_fn(g.clone(), |x| 1.0 / (x[0] - 3.0).cosh());
        let s = check_1d_symmetry(&u).unwrap();
        assert!((s.center - 3.0).abs() <= g.h());
        assert!(s.defect <= 1e-6, "{}", s.defect);
        assert!(s.monotone_left && s.monotone_right);
        let v = Field::scalar_fn(g.clone(), |x| 1.0 / x[0].cosh() + 0.5 / (x[0] - 8.0).cosh());
        let s = check_1d_symmetry(&v).unwrap();
        assert!(s.defect >= 0.1, "{}", s.defect);
    }

    #[test]
    fn two_bump_field_guards() {
        let o = M1Oracle::reference().unwrap();
        let r = o.support_radius();
        let g = box_grid(3, 3.0 * r, 25).unwrap();
        assert!(matches!(build_u_y(&o.profile, &[r, 0.0, 0.0], &g), Err(ProblemError::SupportsOverlap { .. })));
        assert!(matches!(build_u_y(&o.profile, &[4.5 * r, 0.0, 0.0], &g), Err(ProblemError::OutOfBox)));
    }

    #[test]
    fn two_bump_field_is_feasible() {
        let o = M1Oracle::reference().unwrap();
        let r = o.support_radius();
        let y = 2.5 * r;
        let g = two_bump_grid(3, r, y, 1.15, 49).unwrap();
        let p = make_m2_on(&o.spec, g.clone()).unwrap();
        let u = build_u_y(&o.profile, &[y, 0.0, 0.0], &g).unwrap();
        let q = constraints(&p, &u).unwrap();
        let t = energy(&p, &u).unwrap();
        let i = o.constants.infimum;
        assert!((q[0] + 1.0).abs() < 0.02 && (q[1] + 1.0).abs() < 0.02, "{q:?}");
        assert!((t / (2.0 * i) - 1.0).abs() < 0.02, "{t} vs {}", 2.0 * i);
        let disjoint = u.values().iter().enumerate().all(|(node, &v)| {
            let x = g.coord(node, 0);
            v == 0.0 || (v > 0.0) == (x > 0.0)
        });
        assert!(disjoint);
    }
}
