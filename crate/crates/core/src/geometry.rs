//! Hyperplanes, affine subspaces, reflections and symmetry orbits in R^N.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{dot, norm, orthonormal_complement};

const UNIT_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("normal vector has zero length")]
    ZeroNormal,
    #[error("basis of affine subspace is not orthonormal (gram defect {0:.3e})")]
    NotOrthonormal(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// The hyperplane `{x : (x - t v) . v = 0}` with unit normal `v` and offset `t`.
///
/// `Pi^+` is the open half-space where `(x - t v) . v > 0`. The plane
/// `(-v, -t)` is the same set with the two half-spaces swapped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperplane {
    normal: Vec<f64>,
    offset: f64,
}

impl Hyperplane {
    /// Builds a plane from any nonzero normal; the normal is rescaled to unit length.
    pub fn new(normal: Vec<f64>, offset: f64) -> Result<Self, GeometryError> {
        let n = norm(&normal);
        if !(n > 0.0) || !n.is_finite() {
            return Err(GeometryError::ZeroNormal);
        }
        let normal = if (n - 1.0).abs() <= UNIT_TOL {
            normal
        } else {
            normal.iter().map(|x| x / n).collect()
        };
        Ok(Self { normal, offset })
    }

    pub fn through_origin(normal: Vec<f64>) -> Result<Self, GeometryError> {
        Self::new(normal, 0.0)
    }

    /// Coordinate plane `x_axis = offset`.
    pub fn axis(dim: usize, axis: usize, offset: f64) -> Self {
        let mut normal = vec![0.0; dim];
        normal[axis] = 1.0;
        Self { normal, offset }
    }

    pub fn normal(&self) -> &[f64] {
        &self.normal
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn dim(&self) -> usize {
        self.normal.len()
    }

    /// Same plane, half-spaces swapped.
    pub fn flipped(&self) -> Self {
        Self {
            normal: self.normal.iter().map(|x| -x).collect(),
            offset: -self.offset,
        }
    }

    /// `(x - t v) . v`. Evaluated term by term so that the flipped plane
    /// yields exactly the negated value.
    #[inline]
    pub fn signed_distance(&self, x: &[f64]) -> f64 {
        let mut d = 0.0;
        for (xi, vi) in x.iter().zip(&self.normal) {
            d += (xi - self.offset * vi) * vi;
        }
        d
    }

    /// The index of the coordinate axis this plane is normal to, if any.
    pub fn aligned_axis(&self) -> Option<usize> {
        let mut axis = None;
        for (i, v) in self.normal.iter().enumerate() {
            if (v.abs() - 1.0).abs() <= UNIT_TOL {
                axis = Some(i);
            } else if v.abs() > UNIT_TOL {
                return None;
            }
        }
        axis
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let d = self.signed_distance(x);
        x.iter().zip(&self.normal).map(|(xi, vi)| xi - d * vi).collect()
    }
}

/// Mirror image `s_H(x) = 2 p_H(x) - x`.
pub fn reflect_point(x: &[f64], h: &Hyperplane) -> Vec<f64> {
    let d = h.signed_distance(x);
    x.iter()
        .zip(h.normal())
        .map(|(xi, vi)| xi - 2.0 * d * vi)
        .collect()
}

/// An affine subspace `b + span{b_1..b_d}` with orthonormal directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineSubspace {
    base: Vec<f64>,
    basis: Vec<Vec<f64>>,
}

impl AffineSubspace {
    pub fn new(base: Vec<f64>, basis: Vec<Vec<f64>>) -> Result<Self, GeometryError> {
        let n = base.len();
        let mut worst: f64 = 0.0;
        for (i, a) in basis.iter().enumerate() {
            if a.len() != n {
                return Err(GeometryError::DimensionMismatch { expected: n, got: a.len() });
            }
            for (j, b) in basis.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot(a, b) - target).abs());
            }
        }
        if worst > UNIT_TOL {
            return Err(GeometryError::NotOrthonormal(worst));
        }
        Ok(Self { base, basis })
    }

    pub fn point(p: Vec<f64>) -> Self {
        Self { base: p, basis: Vec::new() }
    }

    /// Vector subspace spanned by orthonormal `basis`.
    pub fn linear(dim: usize, basis: Vec<Vec<f64>>) -> Result<Self, GeometryError> {
        Self::new(vec![0.0; dim], basis)
    }

    pub fn base(&self) -> &[f64] {
        &self.base
    }

    pub fn basis(&self) -> &[Vec<f64>] {
        &self.basis
    }

    /// Dimension `d` of the subspace.
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn ambient_dim(&self) -> usize {
        self.base.len()
    }

    /// Orthonormal basis of the directions orthogonal to the subspace.
    pub fn normal_directions(&self) -> Vec<Vec<f64>> {
        orthonormal_complement(&self.basis, self.ambient_dim())
    }

    /// Subspace with the same base point and only the listed directions.
    pub fn restricted(&self, keep: &[usize]) -> Self {
        Self {
            base: self.base.clone(),
            basis: keep.iter().map(|&i| self.basis[i].clone()).collect(),
        }
    }
}

/// Orthogonal projection `b + sum ((x - b).b_i) b_i`.
pub fn project_point(x: &[f64], v: &AffineSubspace) -> Vec<f64> {
    let diff: Vec<f64> = x.iter().zip(v.base()).map(|(a, b)| a - b).collect();
    let mut p = v.base().to_vec();
    for b in v.basis() {
        let c = dot(&diff, b);
        for (pi, bi) in p.iter_mut().zip(b) {
            *pi += c * bi;
        }
    }
    p
}

/// `n` points of the orbit of `x` under rotations fixing `V` pointwise:
/// the sphere of radius `|x - p_V(x)|` centred at `p_V(x)` inside the
/// affine slice through `p_V(x)` orthogonal to `V`.
///
/// Codimension 1 alternates the two mirror points, codimension 2 uses
/// uniform angles starting at `x`, codimension 3 a Fibonacci lattice and
/// higher codimensions a fixed pseudo-random (seeded) point set.
///
/// Panics if `n == 0` or `dim(V) >= N`.
pub fn orbit_samples(x: &[f64], v: &AffineSubspace, n: usize) -> Vec<Vec<f64>> {
    let dim = x.len();
    assert!(n >= 1, "orbit_samples needs n >= 1");
    assert!(v.dim() < dim, "orbit_samples needs dim(V) <= N-1");
    let p = project_point(x, v);
    let r: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a - b).collect();
    let rho = norm(&r);
    if rho <= f64::MIN_POSITIVE {
        return vec![x.to_vec(); n];
    }
    let w1: Vec<f64> = r.iter().map(|c| c / rho).collect();
    let mut known = v.basis().to_vec();
    known.push(w1.clone());
    let mut frame = vec![w1];
    frame.extend(orthonormal_complement(&known, dim));
    let codim = frame.len();

    let at = |coef: &[f64]| -> Vec<f64> {
        let mut y = p.clone();
        for (c, w) in coef.iter().zip(&frame) {
            for (yi, wi) in y.iter_mut().zip(w) {
                *yi += rho * c * wi;
            }
        }
        y
    };

    match codim {
        1 => (0..n)
            .map(|i| if i % 2 == 0 { x.to_vec() } else { at(&[-1.0]) })
            .collect(),
        2 => (0..n)
            .map(|i| {
                let th = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                at(&[th.cos(), th.sin()])
            })
            .collect(),
        3 => {
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..n)
                .map(|i| {
                    let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
                    let s = (1.0 - z * z).max(0.0).sqrt();
                    let phi = golden * i as f64;
                    at(&[z, s * phi.cos(), s * phi.sin()])
                })
                .collect()
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(0x0b17_5eed);
            (0..n)
                .map(|_| {
                    let mut g: Vec<f64> =
                        (0..codim).map(|_| StandardNormal.sample(&mut rng)).collect();
                    let gn = norm(&g);
                    g.iter_mut().for_each(|c| *c /= gn);
                    at(&g)
                })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn reflect_across_coordinate_planes() {
        let h = Hyperplane::axis(2, 0, 0.0);
        assert_eq!(reflect_point(&[1.0, 2.0], &h), vec![-1.0, 2.0]);
        let h = Hyperplane::axis(3, 0, 1.0);
        assert_eq!(reflect_point(&[3.0, 0.0, 0.0], &h), vec![-1.0, 0.0, 0.0]);
        let on = [1.0, 5.0, -2.0];
        assert_eq!(reflect_point(&on, &h), on.to_vec());
    }

    #[test]
    fn flipped_plane_negates_signed_distance_exactly() {
        let h = Hyperplane::new(vec![0.3, -0.7, 0.2], 0.37).unwrap();
        let f = h.flipped();
        for x in [[0.1, 0.2, 0.3], [-1.7, 3.3, 0.01], [1e3, -2e-3, 7.0]] {
            assert_eq!(h.signed_distance(&x), -f.signed_distance(&x));
        }
    }

    #[test]
    fn projections() {
        let v = AffineSubspace::linear(2, vec![vec![1.0, 0.0]]).unwrap();
        assert_eq!(project_point(&[3.0, 4.0], &v), vec![3.0, 0.0]);
        assert_eq!(project_point(&[3.0, 0.0], &v), vec![3.0, 0.0]);
        let p = AffineSubspace::point(vec![1.0, -2.0]);
        assert_eq!(project_point(&[7.0, 7.0], &p), vec![1.0, -2.0]);
    }

    #[test]
    fn non_orthonormal_basis_rejected() {
        let r = AffineSubspace::linear(2, vec![vec![1.0, 0.0], vec![1.0, 1.0]]);
        assert!(matches!(r, Err(GeometryError::NotOrthonormal(_))));
    }

    #[test]
    fn orbit_of_point_in_subspace_is_constant() {
        let v = AffineSubspace::linear(3, vec![vec![0.0, 0.0, 1.0]]).unwrap();
        let pts = orbit_samples(&[0.0, 0.0, 2.0], &v, 5);
        assert_eq!(pts.len(), 5);
        assert!(pts.iter().all(|p| p == &vec![0.0, 0.0, 2.0]));
    }

    #[test]
    fn orbit_planar_uniform_angles() {
        let v = AffineSubspace::point(vec![0.0, 0.0]);
        let pts = orbit_samples(&[1.0, 0.0], &v, 4);
        let expect = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]];
        // orientation of the second frame vector is arbitrary
        for e in expect {
            assert!(pts.iter().any(|p| close(p, &e, 1e-15)), "missing {e:?}");
        }
    }

    #[test]
    fn orbit_circle_around_axis() {
        let v = AffineSubspace::linear(3, vec![vec![0.0, 0.0, 1.0]]).unwrap();
        let pts = orbit_samples(&[1.0, 0.0, 5.0], &v, 8);
        for (i, p) in pts.iter().enumerate() {
            assert!((p[2] - 5.0).abs() < 1e-15);
            assert!((p[0].hypot(p[1]) - 1.0).abs() < 1e-15);
            let th = 2.0 * std::f64::consts::PI * i as f64 / 8.0;
            assert!((p[0] - th.cos()).abs() < 1e-15);
            assert!((p[1].abs() - th.sin().abs()).abs() < 1e-15);
        }
    }

    #[test]
    fn orbit_on_two_sphere_has_fixed_radius() {
        let v = AffineSubspace::point(vec![1.0, 1.0, 1.0]);
        for p in orbit_samples(&[2.0, 1.0, 1.0], &v, 32) {
            let r: Vec<f64> = p.iter().map(|c| c - 1.0).collect();
            assert!((norm(&r) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn orbit_codim_one_is_mirror_pair() {
        let v = AffineSubspace::point(vec![3.0]);
        let pts = orbit_samples(&[5.0], &v, 4);
        assert_eq!(pts, vec![vec![5.0], vec![1.0], vec![5.0], vec![1.0]]);
    }

    fn unit_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1.0f64..1.0, dim)
            .prop_filter("nonzero", |v| norm(v) > 1e-3)
            .prop_map(|v| {
                let n = norm(&v);
                v.into_iter().map(|x| x / n).collect()
            })
    }

    proptest! {
        #[test]
        fn reflection_is_an_involution(
            v in unit_vec(3),
            t in -2.0f64..2.0,
            x in prop::collection::vec(-5.0f64..5.0, 3),
        ) {
            let h = Hyperplane::new(v, t).unwrap();
            let back = reflect_point(&reflect_point(&x, &h), &h);
            for (a, b) in back.iter().zip(&x) {
                prop_assert!((a - b).abs() <= 8.0 * f64::EPSILON * (1.0 + x.iter().map(|c| c.abs()).sum::<f64>()));
            }
        }

        #[test]
        fn axis_reflection_is_exact_involution(
            axis in 0usize..3,
            t in -8i32..8,
            x in prop::collection::vec(-320i32..320, 3),
        ) {
            // dyadic data: every intermediate is representable
            let x: Vec<f64> = x.into_iter().map(|k| k as f64 / 64.0).collect();
            let h = Hyperplane::axis(3, axis, t as f64 / 4.0);
            let back = reflect_point(&reflect_point(&x, &h), &h);
            prop_assert_eq!(back, x);
        }

        #[test]
        fn projection_minimizes_distance(
            b in prop::collection::vec(-2.0f64..2.0, 3),
            dir in unit_vec(3),
            x in prop::collection::vec(-3.0f64..3.0, 3),
        ) {
            let v = AffineSubspace::new(b.clone(), vec![dir.clone()]).unwrap();
            let p = project_point(&x, &v);
            let dist = |y: &[f64]| norm(&x.iter().zip(y).map(|(a, c)| a - c).collect::<Vec<_>>());
            let best = dist(&p);
            // brute force over a line grid
            for i in -400..=400 {
                let s = i as f64 * 0.02;
                let y: Vec<f64> = b.iter().zip(&dir).map(|(bi, di)| bi + s * di).collect();
                prop_assert!(dist(&y) >= best - 1e-12);
            }
            // idempotent
            let pp = project_point(&p, &v);
            prop_assert!(close(&pp, &p, 1e-12));
        }
    }
}
