//! Reflection pipeline and quantitative symmetry checks: reflect across
//! splitting planes, verify the halving identities, then measure how far the
//! field is from being radial about the remaining subspace.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{Field, FieldError, Side};
use crate::functional::{assemble, half_space_split, FunctionalError, SplitEvaluator, VariationalProblem};
use crate::geometry::{orbit_samples, AffineSubspace, GeometryError, Hyperplane};
use crate::numeric::orthonormal_complement;
use crate::splitting::{split_family, SplitError, SplitMode, SplitOptions, SplitQuery, SplitZero};

#[derive(Debug, Error)]
pub enum SymmetryError {
    #[error(transparent)]
    Functional(#[from] FunctionalError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error("hyperplane does not split the constraints: |defect| = {defect:.3e} > {tol:.3e}")]
    NotSplitting { defect: f64, tol: f64 },
    #[error("theorem {0} is not available here: {1}")]
    Theorem(u8, &'static str),
}

impl SymmetryError {
    pub fn code(&self) -> &'static str {
        match self {
            SymmetryError::Functional(e) => e.code(),
            SymmetryError::Field(_) => "field",
            SymmetryError::Geometry(_) => "geometry",
            SymmetryError::Split(e) => e.code(),
            SymmetryError::NotSplitting { .. } => "not_splitting",
            SymmetryError::Theorem(..) => "theorem",
        }
    }
}

/// Thresholds and search settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SymmetryOptions {
    /// Largest relative L2 defect accepted as radial symmetry.
    pub radial_tol: f64,
    /// Relative tolerance for the energy and constraint identities.
    pub identity_tol: f64,
    /// Slack for the no-energy-decrease check, relative to `max(1, |E|)`.
    pub eps_k: f64,
    pub orbit_samples: usize,
    /// `None` picks 2 for translation-invariant problems, else 1.
    pub theorem: Option<u8>,
    pub split: SplitOptions,
}

impl Default for SymmetryOptions {
    fn default() -> Self {
        SymmetryOptions {
            radial_tol: 1e-2,
            identity_tol: 1e-6,
            eps_k: 1e-6,
            orbit_samples: 32,
            theorem: None,
            split: SplitOptions::default(),
        }
    }
}

/// Energies and constraint values of `u` and its two reflections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Identities {
    pub energy: f64,
    pub energy_plus: f64,
    pub energy_minus: f64,
    /// `|E+ + E- - 2E| / max(|2E|, 1e-300)`
    pub energy_sum_defect: f64,
    pub constraints: Vec<f64>,
    pub constraints_plus: Vec<f64>,
    pub constraints_minus: Vec<f64>,
    /// `max_j |Q_j(u+-) - Q_j(u)|`
    pub constraint_defect: f64,
    /// `||u+ - u-||_2 / ||u||_2`
    pub plus_minus_distance: f64,
    /// `min(E+, E-) < E - eps_k max(1, |E|)`: `u` is not a minimizer.
    pub energy_decrease: bool,
}

pub struct Reflection {
    pub plus: Field,
    pub minus: Field,
    pub split_defect: f64,
    pub identities: Identities,
}

/// Reflects `u` across `h` both ways and evaluates the halving identities.
/// `h` must split the constraints to within `opts.split.rel_tol * scale`.
pub fn reflect_and_compare(p: &VariationalProblem, u: &Field, h: &Hyperplane, opts: &SymmetryOptions) -> Result<Reflection, SymmetryError> {
    let sv = half_space_split(p, u, h)?;
    let scale = SplitEvaluator::new(p, u)?.scale();
    let tol = opts.split.rel_tol * scale;
    let split_defect = sv.plus.iter().zip(&sv.minus).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    if split_defect > tol {
        return Err(SymmetryError::NotSplitting { defect: split_defect, tol });
    }
    let plus = u.reflect(h, Side::Plus)?;
    let minus = u.reflect(h, Side::Minus)?;
    let a = assemble(p, u, false)?;
    let ap = assemble(p, &plus, false)?;
    let am = assemble(p, &minus, false)?;
    let constraint_defect = ap
        .constraints
        .iter()
        .chain(&am.constraints)
        .zip(a.constraints.iter().chain(&a.constraints))
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let norm = u.l2_norm();
    let plus_minus_distance = plus.l2_distance(&minus)? / norm.max(f64::MIN_POSITIVE);
    let slack = opts.eps_k * a.energy.abs().max(1.0);
    let identities = Identities {
        energy: a.energy,
        energy_plus: ap.energy,
        energy_minus: am.energy,
        energy_sum_defect: (ap.energy + am.energy - 2.0 * a.energy).abs() / (2.0 * a.energy).abs().max(1e-300),
        constraints: a.constraints,
        constraints_plus: ap.constraints,
        constraints_minus: am.constraints,
        constraint_defect,
        plus_minus_distance,
        energy_decrease: ap.energy.min(am.energy) < a.energy - slack,
    };
    Ok(Reflection { plus, minus, split_defect, identities })
}

/// Relative L2 distance between `u` and its average over the orbit of the
/// rotations fixing `v`, with 32 cubic-interpolated samples per node.
/// Samples leaving the domain are dropped from the average. Zero for fields
/// radial about `v`.
pub fn radial_defect(u: &Field, v: &AffineSubspace) -> f64 {
    radial_defect_with(u, v, 32)
}

pub fn radial_defect_with(u: &Field, v: &AffineSubspace, samples: usize) -> f64 {
    let g = u.grid();
    if v.dim() >= g.dim() {
        return 0.0;
    }
    let m = u.components();
    let mut num = 0.0;
    let mut den = 0.0;
    let mut acc = vec![0.0; m];
    let mut tmp = vec![0.0; m];
    for node in 0..g.len() {
        if !g.inside(node) {
            continue;
        }
        let x = g.coords(node);
        acc.iter_mut().for_each(|a| *a = 0.0);
        let mut count = 0usize;
        for y in orbit_samples(&x, v, samples) {
            if !g.domain().contains(&y) {
                continue;
            }
            u.sample_cubic_into(&y, &mut tmp);
            acc.iter_mut().zip(&tmp).for_each(|(a, t)| *a += t);
            count += 1;
        }
        let w = g.weights()[node];
        for (c, a) in acc.iter().enumerate() {
            let val = u.get(node, c);
            let diff = val - a / count.max(1) as f64;
            num += w * diff * diff;
            den += w * val * val;
        }
    }
    if den <= 0.0 {
        return 0.0;
    }
    (num / den).sqrt()
}

/// Largest normal derivative of `u` on the plane, relative to `max |grad u|`.
/// The derivative field uses central differences and is interpolated to the
/// projections of nodes lying within half a cell of the plane.
pub fn normal_derivative_defect(u: &Field, h: &Hyperplane) -> f64 {
    let g = u.grid();
    let dim = g.dim();
    let m = u.components();
    let jac = u.jacobian();
    let mut dn = vec![0.0; g.len() * m];
    let mut gmax: f64 = 0.0;
    for node in 0..g.len() {
        if !g.inside(node) {
            continue;
        }
        let mut sq = 0.0;
        for c in 0..m {
            let row = &jac[(node * m + c) * dim..(node * m + c + 1) * dim];
            dn[node * m + c] = row.iter().zip(h.normal()).map(|(a, b)| a * b).sum();
            sq += row.iter().map(|a| a * a).sum::<f64>();
        }
        gmax = gmax.max(sq.sqrt());
    }
    if gmax == 0.0 {
        return 0.0;
    }
    let Ok(dfield) = u.with_values(dn) else {
        return f64::NAN;
    };
    let half = 0.5 * g.h();
    let mut worst: f64 = 0.0;
    let mut out = vec![0.0; m];
    for node in 0..g.len() {
        if !g.inside(node) {
            continue;
        }
        let x = g.coords(node);
        let d = h.signed_distance(&x);
        if d.abs() > half {
            continue;
        }
        let p = h.project(&x);
        if !g.domain().contains(&p) {
            continue;
        }
        dfield.sample_into(&p, &mut out);
        worst = out.iter().fold(worst, |w, v| w.max(v.abs()));
    }
    worst / gmax
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    RadialAboutV,
    SymmetricOnly,
    Inconclusive,
}

/// One splitting plane of the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneRecord {
    pub normal: Vec<f64>,
    pub offset: f64,
    pub split_defect: f64,
    pub identities: Identities,
    pub normal_derivative_defect: f64,
}

/// A candidate subspace and its radial defect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub subspace: AffineSubspace,
    pub defect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetryReport {
    pub theorem: u8,
    pub verdict: Verdict,
    /// Smallest subspace meeting `radial_tol`, or the guaranteed one if none does.
    pub subspace: Option<AffineSubspace>,
    pub radial_defect: Option<f64>,
    /// Subspace the theorem guarantees (dimension `k` or `k - 1`).
    pub guaranteed: Option<AffineSubspace>,
    pub guaranteed_defect: Option<f64>,
    /// Best radial defect about a single point among the natural centres.
    pub point_defect: Option<f64>,
    pub candidates: Vec<Candidate>,
    pub planes: Vec<PlaneRecord>,
    pub identities_ok: bool,
    /// Some reflection lowered the energy.
    pub non_minimizer: bool,
    pub radial_tol: f64,
    pub identity_tol: f64,
    pub note: Option<String>,
}

impl SymmetryReport {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).unwrap_or(serde_json::Value::Null)
    }

    pub fn text_summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "theorem {}: verdict {:?}", self.theorem, self.verdict);
        if let (Some(v), Some(d)) = (&self.subspace, self.radial_defect) {
            let _ = writeln!(s, "subspace dim {} at {:?}, radial defect {:.3e} (tol {:.1e})", v.dim(), v.base(), d, self.radial_tol);
        }
        if let Some(d) = self.point_defect {
            let _ = writeln!(s, "best point defect {d:.3e}");
        }
        for (i, p) in self.planes.iter().enumerate() {
            let id = &p.identities;
            let _ = writeln!(
                s,
                "plane {i}: n={:?} t={:.3e} split {:.2e} E={:.6} E+={:.6} E-={:.6} sum {:.2e} Q {:.2e} dn {:.2e} |u+-u-| {:.2e}",
                p.normal, p.offset, p.split_defect, id.energy, id.energy_plus, id.energy_minus, id.energy_sum_defect, id.constraint_defect, p.normal_derivative_defect, id.plus_minus_distance
            );
        }
        if self.non_minimizer {
            s.push_str("a reflection lowered the energy: input is not a minimizer\n");
        }
        if let Some(n) = &self.note {
            let _ = writeln!(s, "{n}");
        }
        s
    }
}

fn subsets(n: usize, size: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    fn rec(start: usize, n: usize, size: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == size {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, size, cur, out);
            cur.pop();
        }
    }
    rec(0, n, size, &mut cur, &mut out);
    out
}

/// Centre of mass of `|u|^2` and the node of largest `|u|`.
fn natural_centres(u: &Field) -> Vec<Vec<f64>> {
    let g = u.grid();
    let dim = g.dim();
    let mut com = vec![0.0; dim];
    let mut mass = 0.0;
    let mut best = (0.0, 0usize);
    for node in 0..g.len() {
        if !g.inside(node) {
            continue;
        }
        let a2: f64 = u.at(node).iter().map(|v| v * v).sum();
        let w = g.weights()[node] * a2;
        let x = g.coords(node);
        com.iter_mut().zip(&x).for_each(|(c, xi)| *c += w * xi);
        mass += w;
        if a2 > best.0 {
            best = (a2, node);
        }
    }
    let mut out = Vec::new();
    if mass > 0.0 {
        out.push(com.iter().map(|c| c / mass).collect());
        out.push(g.coords(best.1));
    }
    out
}

/// Runs the reflection pipeline of the chosen theorem and certifies
/// radial symmetry about the remaining subspace by defect thresholds.
pub fn detect_symmetry(p: &VariationalProblem, u: &Field, opts: &SymmetryOptions) -> Result<SymmetryReport, SymmetryError> {
    let theorem = opts.theorem.unwrap_or(if p.translation_invariant { 2 } else { 1 });
    let dim = p.dim();
    let k = p.k();
    let (mode, count) = match theorem {
        1 if k < dim => (SplitMode::Vector, dim - k),
        1 => return Err(SymmetryError::Theorem(1, "needs k <= N - 1")),
        2 if k >= 1 && k <= dim => (SplitMode::Affine, dim - k + 1),
        2 => return Err(SymmetryError::Theorem(2, "needs 1 <= k <= N")),
        _ => return Err(SymmetryError::Theorem(theorem, "only theorems 1 and 2 exist")),
    };
    let mut report = SymmetryReport {
        theorem,
        verdict: Verdict::Inconclusive,
        subspace: None,
        radial_defect: None,
        guaranteed: None,
        guaranteed_defect: None,
        point_defect: None,
        candidates: Vec::new(),
        planes: Vec::new(),
        identities_ok: false,
        non_minimizer: false,
        radial_tol: opts.radial_tol,
        identity_tol: opts.identity_tol,
        note: None,
    };
    let q = SplitQuery::new(p, u, mode)?.with_options(opts.split.clone());
    let scale = q.eval.scale();
    let zeros: Vec<SplitZero> = match split_family(q, count) {
        Ok(z) => z,
        Err(e @ (SplitError::NotConverged { .. } | SplitError::NoSignChange { .. })) => {
            report.note = Some(format!("splitting search failed: {e}"));
            return Ok(report);
        }
        Err(e) => return Err(e.into()),
    };

    let mut identities_ok = true;
    for z in &zeros {
        let h = Hyperplane::new(z.normal.clone(), z.offset)?;
        let r = reflect_and_compare(p, u, &h, opts)?;
        let id = &r.identities;
        identities_ok &= id.energy_sum_defect <= opts.identity_tol && id.constraint_defect <= opts.identity_tol * scale;
        report.non_minimizer |= id.energy_decrease;
        report.planes.push(PlaneRecord {
            normal: z.normal.clone(),
            offset: z.offset,
            split_defect: r.split_defect,
            identities: r.identities,
            normal_derivative_defect: normal_derivative_defect(u, &h),
        });
    }
    report.identities_ok = identities_ok;

    let normals: Vec<Vec<f64>> = zeros.iter().map(|z| z.normal.clone()).collect();
    let mut base = vec![0.0; dim];
    for z in &zeros {
        base.iter_mut().zip(&z.normal).for_each(|(b, v)| *b += z.offset * v);
    }
    let guaranteed = AffineSubspace::new(base, orthonormal_complement(&normals, dim))?;
    let gdef = radial_defect_with(u, &guaranteed, opts.orbit_samples);
    report.candidates.push(Candidate { subspace: guaranteed.clone(), defect: gdef });

    // search downward for a smaller subspace that still meets tolerance
    let mut chosen = (guaranteed.clone(), gdef);
    for size in (0..guaranteed.dim()).rev() {
        let mut best: Option<Candidate> = None;
        for keep in subsets(guaranteed.dim(), size) {
            let sub = guaranteed.restricted(&keep);
            let d = radial_defect_with(u, &sub, opts.orbit_samples);
            report.candidates.push(Candidate { subspace: sub.clone(), defect: d });
            if best.as_ref().is_none_or(|b| d < b.defect) {
                best = Some(Candidate { subspace: sub, defect: d });
            }
        }
        match best {
            Some(b) if b.defect <= opts.radial_tol => chosen = (b.subspace, b.defect),
            _ => break,
        }
    }

    let mut point = if guaranteed.dim() == 0 { Some(gdef) } else { None };
    for c in std::iter::once(guaranteed.base().to_vec()).chain(natural_centres(u)) {
        let d = radial_defect_with(u, &AffineSubspace::point(c), opts.orbit_samples);
        point = Some(point.map_or(d, |p: f64| p.min(d)));
    }
    report.point_defect = point;

    report.verdict = if !identities_ok {
        Verdict::Inconclusive
    } else if chosen.1 <= opts.radial_tol {
        Verdict::RadialAboutV
    } else {
        Verdict::SymmetricOnly
    };
    report.guaranteed = Some(guaranteed);
    report.guaranteed_defect = Some(gdef);
    report.subspace = Some(chosen.0);
    report.radial_defect = Some(chosen.1);
    Ok(report)
}
