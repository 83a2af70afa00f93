//! Rotation-invariant domains and the uniform tensor grids that sample them.

use serde::{Deserialize, Serialize};

use crate::field::FieldError;

/// Computational domain. Balls and annuli are centred at the origin; a box
/// is the symmetric truncation `[-a_1, a_1] x ... x [-a_N, a_N]` used to
/// represent all of R^N.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Domain {
    Ball { dim: usize, radius: f64 },
    Annulus { dim: usize, inner: f64, outer: f64 },
    Box { half_widths: Vec<f64> },
}

impl Domain {
    pub fn ball(dim: usize, radius: f64) -> Self {
        Domain::Ball { dim, radius }
    }

    pub fn annulus(dim: usize, inner: f64, outer: f64) -> Self {
        Domain::Annulus { dim, inner, outer }
    }

    pub fn cube(dim: usize, half_width: f64) -> Self {
        Domain::Box { half_widths: vec![half_width; dim] }
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::Ball { dim, .. } | Domain::Annulus { dim, .. } => *dim,
            Domain::Box { half_widths } => half_widths.len(),
        }
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        let bad = |m: &str| Err(FieldError::InvalidGrid(m.to_string()));
        if self.dim() == 0 {
            return bad("dimension must be >= 1");
        }
        match self {
            Domain::Ball { radius, .. } if !(*radius > 0.0) => bad("ball radius must be positive"),
            Domain::Annulus { inner, outer, .. } if !(*inner >= 0.0 && inner < outer) => {
                bad("annulus needs 0 <= inner < outer")
            }
            Domain::Box { half_widths } if half_widths.iter().any(|a| !(*a > 0.0)) => {
                bad("box half-widths must be positive")
            }
            _ => Ok(()),
        }
    }

    /// Ball and annulus domains only admit reflections through the origin.
    pub fn is_bounded_radial(&self) -> bool {
        !matches!(self, Domain::Box { .. })
    }

    pub fn bounding_half_widths(&self) -> Vec<f64> {
        match self {
            Domain::Ball { dim, radius } => vec![*radius; *dim],
            Domain::Annulus { dim, outer, .. } => vec![*outer; *dim],
            Domain::Box { half_widths } => half_widths.clone(),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Domain::Ball { radius, .. } => {
                let r2: f64 = x.iter().map(|c| c * c).sum();
                r2 <= radius * radius * (1.0 + 1e-12)
            }
            Domain::Annulus { inner, outer, .. } => {
                let r2: f64 = x.iter().map(|c| c * c).sum();
                r2 > inner * inner * (1.0 + 1e-12) && r2 <= outer * outer * (1.0 + 1e-12)
            }
            Domain::Box { half_widths } => x
                .iter()
                .zip(half_widths)
                .all(|(c, a)| c.abs() <= a * (1.0 + 1e-12)),
        }
    }
}

/// Uniform tensor grid over the domain's bounding box with a precomputed
/// in-domain mask and quadrature weights (trapezoid product rule on boxes,
/// cell volume on masked ball/annulus nodes).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Grid {
    domain: Domain,
    counts: Vec<usize>,
    #[serde(skip)]
    cache: GridCache,
}

#[derive(Debug, Clone, Default)]
struct GridCache {
    lo: Vec<f64>,
    spacing: Vec<f64>,
    strides: Vec<usize>,
    axis_coords: Vec<Vec<f64>>,
    mask: Vec<bool>,
    weights: Vec<f64>,
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.domain == other.domain && self.counts == other.counts
    }
}

impl Grid {
    pub fn new(domain: Domain, counts: Vec<usize>) -> Result<Self, FieldError> {
        domain.validate()?;
        if counts.len() != domain.dim() {
            return Err(FieldError::InvalidGrid(format!(
                "{} axis counts for a {}-dimensional domain",
                counts.len(),
                domain.dim()
            )));
        }
        if counts.iter().any(|&n| n < 3) {
            return Err(FieldError::InvalidGrid("need at least 3 points per axis".into()));
        }
        let total: usize = counts.iter().product();
        if total > 50_000_000 {
            return Err(FieldError::InvalidGrid(format!("{total} nodes exceed the grid size cap")));
        }
        let hw = domain.bounding_half_widths();
        let dim = counts.len();
        let lo: Vec<f64> = hw.iter().map(|a| -a).collect();
        let spacing: Vec<f64> = hw
            .iter()
            .zip(&counts)
            .map(|(a, &n)| 2.0 * a / (n - 1) as f64)
            .collect();
        let mut strides = vec![1usize; dim];
        for a in (0..dim.saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * counts[a + 1];
        }
        let axis_coords: Vec<Vec<f64>> = (0..dim)
            .map(|a| {
                let n = counts[a];
                (0..n)
                    .map(|i| {
                        // symmetric construction so that mirrored nodes are exact negatives
                        let j = (n - 1 - i) as f64;
                        let c = (i as f64 - j) * 0.5 * spacing[a];
                        if 2 * i + 1 == n {
                            0.0
                        } else {
                            c
                        }
                    })
                    .collect()
            })
            .collect();
        let mut grid = Grid {
            domain,
            counts,
            cache: GridCache { lo, spacing, strides, axis_coords, mask: Vec::new(), weights: Vec::new() },
        };
        let mut mask = Vec::with_capacity(total);
        let mut weights = Vec::with_capacity(total);
        let mut x = vec![0.0; dim];
        let cell: f64 = grid.cache.spacing.iter().product();
        let is_box = !grid.domain.is_bounded_radial();
        for node in 0..total {
            grid.coords_into(node, &mut x);
            let inside = grid.domain.contains(&x);
            mask.push(inside);
            let w = if !inside {
                0.0
            } else if is_box {
                let mut w = 1.0;
                for a in 0..dim {
                    let i = grid.axis_index(node, a);
                    let h = grid.cache.spacing[a];
                    w *= if i == 0 || i == grid.counts[a] - 1 { 0.5 * h } else { h };
                }
                w
            } else {
                cell
            };
            weights.push(w);
        }
        grid.cache.mask = mask;
        grid.cache.weights = weights;
        Ok(grid)
    }

    /// Cube grid with `n` points on every axis.
    pub fn uniform(domain: Domain, n: usize) -> Result<Self, FieldError> {
        let dim = domain.dim();
        Self::new(domain, vec![n; dim])
    }

    /// Rebuilds cached tables after deserialization.
    pub fn rebuilt(&self) -> Result<Self, FieldError> {
        Self::new(self.domain.clone(), self.counts.clone())
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.cache.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cache.mask.is_empty()
    }

    pub fn spacing(&self) -> &[f64] {
        &self.cache.spacing
    }

    /// Largest spacing over all axes.
    pub fn h(&self) -> f64 {
        self.cache.spacing.iter().cloned().fold(0.0, f64::max)
    }

    pub fn lo(&self) -> &[f64] {
        &self.cache.lo
    }

    pub fn strides(&self) -> &[usize] {
        &self.cache.strides
    }

    pub fn axis_coords(&self, axis: usize) -> &[f64] {
        &self.cache.axis_coords[axis]
    }

    pub fn mask(&self) -> &[bool] {
        &self.cache.mask
    }

    pub fn weights(&self) -> &[f64] {
        &self.cache.weights
    }

    #[inline]
    pub fn inside(&self, node: usize) -> bool {
        self.cache.mask[node]
    }

    #[inline]
    pub fn axis_index(&self, node: usize, axis: usize) -> usize {
        (node / self.cache.strides[axis]) % self.counts[axis]
    }

    #[inline]
    pub fn coord(&self, node: usize, axis: usize) -> f64 {
        self.cache.axis_coords[axis][self.axis_index(node, axis)]
    }

    pub fn coords_into(&self, node: usize, out: &mut [f64]) {
        for (a, o) in out.iter_mut().enumerate() {
            *o = self.coord(node, a);
        }
    }

    pub fn coords(&self, node: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        self.coords_into(node, &mut x);
        x
    }

    pub fn node_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.cache.strides).map(|(i, s)| i * s).sum()
    }

    /// Neighbour of `node` one step along `axis` in direction `dir` (+1/-1),
    /// if it exists and lies in the domain.
    #[inline]
    pub fn neighbor(&self, node: usize, axis: usize, dir: isize) -> Option<usize> {
        let i = self.axis_index(node, axis);
        let s = self.cache.strides[axis];
        let nb = if dir > 0 {
            if i + 1 >= self.counts[axis] {
                return None;
            }
            node + s
        } else {
            if i == 0 {
                return None;
            }
            node - s
        };
        if self.cache.mask[nb] {
            Some(nb)
        } else {
            None
        }
    }

    /// Total quadrature volume of the domain.
    pub fn volume(&self) -> f64 {
        crate::numeric::compensated_sum(self.cache.weights.iter().copied())
    }

    /// Continuous index of coordinate `x` on `axis`.
    #[inline]
    pub fn fractional_index(&self, x: f64, axis: usize) -> f64 {
        (x - self.cache.lo[axis]) / self.cache.spacing[axis]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_grid_is_symmetric_and_weights_integrate_volume() {
        let g = Grid::new(Domain::Box { half_widths: vec![1.0, 2.0] }, vec![5, 9]).unwrap();
        assert_eq!(g.len(), 45);
        assert_eq!(g.axis_coords(0), &[-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert!((g.volume() - 8.0).abs() < 1e-14);
        for a in 0..2 {
            let c = g.axis_coords(a);
            for i in 0..c.len() {
                assert_eq!(c[i], -c[c.len() - 1 - i]);
            }
        }
    }

    #[test]
    fn ball_mask_consistent_with_domain() {
        let d = Domain::ball(2, 1.0);
        let g = Grid::uniform(d.clone(), 21).unwrap();
        for n in 0..g.len() {
            assert_eq!(g.inside(n), d.contains(&g.coords(n)));
        }
        let area = g.volume();
        assert!((area - std::f64::consts::PI).abs() < 0.1);
    }

    #[test]
    fn annulus_excludes_hole() {
        let g = Grid::uniform(Domain::annulus(2, 0.5, 1.0), 21).unwrap();
        let centre = g.node_index(&[10, 10]);
        assert!(!g.inside(centre));
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(Grid::uniform(Domain::cube(2, 1.0), 2).is_err());
        assert!(Grid::uniform(Domain::annulus(2, 1.0, 0.5), 9).is_err());
        assert!(Grid::new(Domain::cube(2, 1.0), vec![5]).is_err());
    }

    #[test]
    fn neighbors_respect_mask_and_edges() {
        let g = Grid::uniform(Domain::cube(2, 1.0), 3).unwrap();
        let corner = g.node_index(&[0, 0]);
        assert_eq!(g.neighbor(corner, 0, -1), None);
        assert_eq!(g.neighbor(corner, 0, 1), Some(g.node_index(&[1, 0])));
        assert_eq!(g.neighbor(corner, 1, 1), Some(g.node_index(&[0, 1])));
    }
}
