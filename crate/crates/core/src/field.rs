//! Grid-sampled vector fields: interpolation, differentiation, reflection
//! resampling and (de)serialization.

use std::io::{BufRead, Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Hyperplane;
use crate::grid::{Domain, Grid};
use crate::numeric::CompensatedSum;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("reflections on ball/annulus domains must pass through the origin (offset {0})")]
    OriginRequired(f64),
    #[error("reflected support leaves the box: clipped mass fraction {fraction:.3e}")]
    SupportClipped { fraction: f64 },
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("field has {got} values, expected {expected}")]
    Shape { expected: usize, got: usize },
    #[error("non-finite value at node {0}")]
    NonFinite(usize),
    #[error("bad field file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which closed half-space a reflection keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Plus,
    Minus,
}

/// Relative squared mass that may be lost off the box before a reflection
/// is rejected.
pub const CLIP_TOL: f64 = 1e-10;

/// Vector field `u: grid -> R^m`, stored node-major (`values[node * m + c]`).
#[derive(Debug, Clone)]
pub struct Field {
    grid: Arc<Grid>,
    m: usize,
    values: Vec<f64>,
}

impl PartialEq for Field {
    fn eq(&self, other: &Self) -> bool {
        self.m == other.m && *self.grid == *other.grid && self.values == other.values
    }
}

impl Field {
    /// Wraps raw values; out-of-domain entries are forced to zero.
    pub fn new(grid: Arc<Grid>, m: usize, mut values: Vec<f64>) -> Result<Self, FieldError> {
        if m == 0 {
            return Err(FieldError::InvalidGrid("field needs at least one component".into()));
        }
        let expected = grid.len() * m;
        if values.len() != expected {
            return Err(FieldError::Shape { expected, got: values.len() });
        }
        for node in 0..grid.len() {
            let row = &mut values[node * m..(node + 1) * m];
            if grid.inside(node) {
                if row.iter().any(|v| !v.is_finite()) {
                    return Err(FieldError::NonFinite(node));
                }
            } else {
                row.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        Ok(Field { grid, m, values })
    }

    pub fn zeros(grid: Arc<Grid>, m: usize) -> Self {
        let n = grid.len() * m;
        Field { grid, m, values: vec![0.0; n] }
    }

    /// Samples `f(x, out)` at every in-domain node.
    pub fn from_fn(grid: Arc<Grid>, m: usize, mut f: impl FnMut(&[f64], &mut [f64])) -> Self {
        let mut values = vec![0.0; grid.len() * m];
        let mut x = vec![0.0; grid.dim()];
        for node in 0..grid.len() {
            if grid.inside(node) {
                grid.coords_into(node, &mut x);
                f(&x, &mut values[node * m..(node + 1) * m]);
            }
        }
        Field { grid, m, values }
    }

    pub fn scalar_fn(grid: Arc<Grid>, f: impl Fn(&[f64]) -> f64) -> Self {
        Self::from_fn(grid, 1, |x, out| out[0] = f(x))
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn grid_arc(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn components(&self) -> usize {
        self.m
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, node: usize) -> &[f64] {
        &self.values[node * self.m..(node + 1) * self.m]
    }

    #[inline]
    pub fn get(&self, node: usize, c: usize) -> f64 {
        self.values[node * self.m + c]
    }

    pub fn same_grid(&self, other: &Field) -> bool {
        self.m == other.m && (Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid)
    }

    /// Same grid, new values (zeroed off-domain).
    pub fn with_values(&self, values: Vec<f64>) -> Result<Field, FieldError> {
        Field::new(self.grid.clone(), self.m, values)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        let mut out = self.clone();
        for node in 0..self.grid.len() {
            if self.grid.inside(node) {
                for v in &mut out.values[node * self.m..(node + 1) * self.m] {
                    *v = f(*v);
                }
            }
        }
        out
    }

    /// `self + s * other`.
    pub fn axpy(&self, s: f64, other: &Field) -> Result<Field, FieldError> {
        if !self.same_grid(other) {
            return Err(FieldError::GridMismatch);
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + s * b).collect();
        Ok(Field { grid: self.grid.clone(), m: self.m, values })
    }

    pub fn scaled(&self, s: f64) -> Field {
        self.map(|v| s * v)
    }

    /// One component as a scalar field.
    pub fn component(&self, c: usize) -> Field {
        let values = (0..self.grid.len()).map(|n| self.get(n, c)).collect();
        Field { grid: self.grid.clone(), m: 1, values }
    }

    /// Stacks scalar fields on a common grid into one vector field.
    pub fn stack(parts: &[Field]) -> Result<Field, FieldError> {
        let first = parts.first().ok_or(FieldError::InvalidGrid("nothing to stack".into()))?;
        let grid = first.grid.clone();
        let m: usize = parts.iter().map(|p| p.m).sum();
        let mut values = Vec::with_capacity(grid.len() * m);
        for p in parts {
            if *p.grid != *grid {
                return Err(FieldError::GridMismatch);
            }
        }
        for node in 0..grid.len() {
            for p in parts {
                values.extend_from_slice(p.at(node));
            }
        }
        Ok(Field { grid, m, values })
    }

    /// Weighted L2 norm `(sum_i w_i |u_i|^2)^(1/2)`.
    pub fn l2_norm(&self) -> f64 {
        let w = self.grid.weights();
        let mut acc = CompensatedSum::new();
        for (node, wi) in w.iter().enumerate() {
            if *wi > 0.0 {
                acc.add(wi * self.at(node).iter().map(|v| v * v).sum::<f64>());
            }
        }
        acc.value().max(0.0).sqrt()
    }

    /// Weighted L2 distance to another field on the same grid.
    pub fn l2_distance(&self, other: &Field) -> Result<f64, FieldError> {
        Ok(self.axpy(-1.0, other)?.l2_norm())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_difference(&self, other: &Field) -> Result<f64, FieldError> {
        if !self.same_grid(other) {
            return Err(FieldError::GridMismatch);
        }
        Ok(self.values.iter().zip(&other.values).fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    /// Multilinear interpolation at an arbitrary point. Points outside the
    /// domain evaluate to zero; near masked boundaries the stencil weights
    /// are renormalized over in-domain corners.
    pub fn sample_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let g = &*self.grid;
        if !g.domain().contains(x) {
            return;
        }
        let dim = g.dim();
        let mut base = 0usize;
        let mut frac = [0.0f64; 8];
        let mut stride = [0usize; 8];
        debug_assert!(dim <= 8);
        for a in 0..dim {
            let n = g.counts()[a];
            let s = g.fractional_index(x[a], a);
            let tol = 1e-9;
            if s < -tol || s > (n - 1) as f64 + tol {
                return;
            }
            let s = s.clamp(0.0, (n - 1) as f64);
            let i0 = (s.floor() as usize).min(n - 2);
            frac[a] = s - i0 as f64;
            stride[a] = g.strides()[a];
            base += i0 * stride[a];
        }
        let mut wsum = 0.0;
        for corner in 0..(1usize << dim) {
            let mut w = 1.0;
            let mut node = base;
            for a in 0..dim {
                if corner >> a & 1 == 1 {
                    w *= frac[a];
                    node += stride[a];
                } else {
                    w *= 1.0 - frac[a];
                }
            }
            if w == 0.0 || !g.inside(node) {
                continue;
            }
            wsum += w;
            for (c, o) in out.iter_mut().enumerate() {
                *o += w * self.values[node * self.m + c];
            }
        }
        if wsum > 0.0 && wsum != 1.0 {
            out.iter_mut().for_each(|v| *v /= wsum);
        }
    }

    /// Tensor Catmull-Rom interpolation (fourth-order accurate for smooth
    /// fields). Falls back to [`Field::sample_into`] where the 4-point stencil
    /// leaves the grid or touches masked nodes.
    pub fn sample_cubic_into(&self, x: &[f64], out: &mut [f64]) {
        let g = &*self.grid;
        let dim = g.dim();
        if dim > 4 || !g.domain().contains(x) {
            return self.sample_into(x, out);
        }
        let mut w = [[0.0f64; 4]; 4];
        let mut base = 0usize;
        for a in 0..dim {
            let n = g.counts()[a];
            let s = g.fractional_index(x[a], a);
            let i0 = s.floor();
            if i0 < 1.0 || i0 + 2.0 > (n - 1) as f64 {
                return self.sample_into(x, out);
            }
            let t = s - i0;
            let (t2, t3) = (t * t, t * t * t);
            w[a] = [
                0.5 * (-t3 + 2.0 * t2 - t),
                0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
                0.5 * (-3.0 * t3 + 4.0 * t2 + t),
                0.5 * (t3 - t2),
            ];
            base += (i0 as usize - 1) * g.strides()[a];
        }
        out.iter_mut().for_each(|v| *v = 0.0);
        for corner in 0..(1usize << (2 * dim)) {
            let mut wt = 1.0;
            let mut node = base;
            for a in 0..dim {
                let o = corner >> (2 * a) & 3;
                wt *= w[a][o];
                node += o * g.strides()[a];
            }
            if !g.inside(node) {
                return self.sample_into(x, out);
            }
            for (c, o) in out.iter_mut().enumerate() {
                *o += wt * self.values[node * self.m + c];
            }
        }
    }

    pub fn sample(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        self.sample_into(x, &mut out);
        out
    }

    /// Resamples `w(x) = u(x + offset)`.
    pub fn shifted(&self, offset: &[f64]) -> Field {
        let mut y = vec![0.0; offset.len()];
        Field::from_fn(self.grid.clone(), self.m, |x, out| {
            for (yi, (xi, oi)) in y.iter_mut().zip(x.iter().zip(offset)) {
                *yi = xi + oi;
            }
            self.sample_into(&y, out);
        })
    }

    /// Nodal Jacobian `du_c/dx_a`, stored `[node][c][a]`. Central differences
    /// where both neighbours are in the domain, second-order one-sided
    /// stencils otherwise.
    pub fn jacobian(&self) -> Vec<f64> {
        let g = &*self.grid;
        let dim = g.dim();
        let m = self.m;
        let mut jac = vec![0.0; g.len() * m * dim];
        for node in 0..g.len() {
            if !g.inside(node) {
                continue;
            }
            for a in 0..dim {
                let h = g.spacing()[a];
                let fwd = g.neighbor(node, a, 1);
                let bwd = g.neighbor(node, a, -1);
                for c in 0..m {
                    let u = |n: usize| self.values[n * m + c];
                    let d = match (bwd, fwd) {
                        (Some(b), Some(f)) => (u(f) - u(b)) / (2.0 * h),
                        (None, Some(f)) => match g.neighbor(f, a, 1) {
                            Some(ff) => (-3.0 * u(node) + 4.0 * u(f) - u(ff)) / (2.0 * h),
                            None => (u(f) - u(node)) / h,
                        },
                        (Some(b), None) => match g.neighbor(b, a, -1) {
                            Some(bb) => (3.0 * u(node) - 4.0 * u(b) + u(bb)) / (2.0 * h),
                            None => (u(node) - u(b)) / h,
                        },
                        (None, None) => 0.0,
                    };
                    jac[(node * m + c) * dim + a] = d;
                }
            }
        }
        jac
    }

    /// Frobenius norm of the Jacobian at every node.
    pub fn gradient_magnitude(&self) -> Field {
        let dim = self.grid.dim();
        let jac = self.jacobian();
        let values = jac
            .chunks(self.m * dim)
            .map(|row| row.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        Field { grid: self.grid.clone(), m: 1, values }
    }

    /// Reflection `u_{H^side}`: keeps the chosen closed half-space and
    /// mirrors it onto the other one.
    pub fn reflect(&self, h: &Hyperplane, side: Side) -> Result<Field, FieldError> {
        let g = &*self.grid;
        if h.dim() != g.dim() {
            return Err(FieldError::InvalidGrid("hyperplane dimension mismatch".into()));
        }
        if g.domain().is_bounded_radial() && h.offset() != 0.0 {
            return Err(FieldError::OriginRequired(h.offset()));
        }
        if let Some(out) = self.reflect_aligned(h, side)? {
            return Ok(out);
        }
        let keep = |d: f64| match side {
            Side::Plus => d >= 0.0,
            Side::Minus => d <= 0.0,
        };
        let dim = g.dim();
        let m = self.m;
        let mut values = vec![0.0; g.len() * m];
        let mut x = vec![0.0; dim];
        let mut y = vec![0.0; dim];
        let mut kept_mass = CompensatedSum::new();
        let mut lost_mass = CompensatedSum::new();
        let hw = g.domain().bounding_half_widths();
        for node in 0..g.len() {
            if !g.inside(node) {
                continue;
            }
            g.coords_into(node, &mut x);
            let d = h.signed_distance(&x);
            for (yi, (xi, vi)) in y.iter_mut().zip(x.iter().zip(h.normal())) {
                *yi = xi - 2.0 * d * vi;
            }
            let out = &mut values[node * m..(node + 1) * m];
            if keep(d) {
                out.copy_from_slice(self.at(node));
                let mass = g.weights()[node] * out.iter().map(|v| v * v).sum::<f64>();
                kept_mass.add(mass);
                let outside = y
                    .iter()
                    .zip(&hw)
                    .any(|(yi, a)| yi.abs() > a * (1.0 + 1e-9));
                if outside {
                    lost_mass.add(mass);
                }
            } else {
                self.sample_into(&y, out);
            }
        }
        check_clip(kept_mass.value(), lost_mass.value())?;
        Field::new(self.grid.clone(), m, values)
    }

    /// Exact index-permutation reflection for axis-aligned planes through
    /// nodes or cell midpoints. Returns `None` when not applicable.
    fn reflect_aligned(&self, h: &Hyperplane, side: Side) -> Result<Option<Field>, FieldError> {
        let g = &*self.grid;
        let Some(axis) = h.aligned_axis() else {
            return Ok(None);
        };
        let sigma = h.normal()[axis].signum();
        let c = sigma * h.offset();
        // mirror centre in doubled index units
        let s2 = 2.0 * g.fractional_index(c, axis);
        let m2 = s2.round();
        if (s2 - m2).abs() > 1e-9 {
            return Ok(None);
        }
        let m2 = m2 as i64;
        let n = g.counts()[axis] as i64;
        let stride = g.strides()[axis];
        let m = self.m;
        let mut values = vec![0.0; g.len() * m];
        let mut kept_mass = CompensatedSum::new();
        let mut lost_mass = CompensatedSum::new();
        for node in 0..g.len() {
            if !g.inside(node) {
                continue;
            }
            let i = g.axis_index(node, axis) as i64;
            let side_sign = sigma as i64 * (2 * i - m2);
            let kept = match side {
                Side::Plus => side_sign >= 0,
                Side::Minus => side_sign <= 0,
            };
            let j = m2 - i;
            let out = &mut values[node * m..(node + 1) * m];
            if kept {
                out.copy_from_slice(self.at(node));
                let mass = g.weights()[node] * out.iter().map(|v| v * v).sum::<f64>();
                kept_mass.add(mass);
                if j < 0 || j >= n {
                    lost_mass.add(mass);
                }
            } else if (0..n).contains(&j) {
                let mirror = (node as i64 + (j - i) * stride as i64) as usize;
                if g.inside(mirror) {
                    out.copy_from_slice(self.at(mirror));
                }
            }
        }
        check_clip(kept_mass.value(), lost_mass.value())?;
        Ok(Some(Field { grid: self.grid.clone(), m, values }))
    }

    /// Writes the binary container: magic, header, domain JSON, f64 LE payload.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<(), FieldError> {
        let g = &*self.grid;
        let domain = serde_json::to_vec(g.domain()).map_err(|e| FieldError::Format(e.to_string()))?;
        w.write_all(MAGIC)?;
        w.write_all(&(g.dim() as u32).to_le_bytes())?;
        for &n in g.counts() {
            w.write_all(&(n as u64).to_le_bytes())?;
        }
        w.write_all(&(self.m as u32).to_le_bytes())?;
        w.write_all(&(domain.len() as u32).to_le_bytes())?;
        w.write_all(&domain)?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Field, FieldError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(FieldError::Format("bad magic".into()));
        }
        let dim = read_u32(&mut r)? as usize;
        if dim == 0 || dim > 8 {
            return Err(FieldError::Format(format!("unsupported dimension {dim}")));
        }
        let mut counts = Vec::with_capacity(dim);
        for _ in 0..dim {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            counts.push(u64::from_le_bytes(b) as usize);
        }
        let m = read_u32(&mut r)? as usize;
        let len = read_u32(&mut r)? as usize;
        if len > 1 << 20 {
            return Err(FieldError::Format("domain descriptor too long".into()));
        }
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)?;
        let domain: Domain =
            serde_json::from_slice(&json).map_err(|e| FieldError::Format(e.to_string()))?;
        let grid = Arc::new(Grid::new(domain, counts)?);
        let total = grid.len() * m;
        let mut payload = vec![0u8; total * 8];
        r.read_exact(&mut payload)?;
        let values = payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Field::new(grid, m, values)
    }

    /// CSV with header `x1..xN,u1..um`, one in-domain node per row.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), FieldError> {
        let g = &*self.grid;
        let mut header: Vec<String> = (1..=g.dim()).map(|i| format!("x{i}")).collect();
        header.extend((1..=self.m).map(|i| format!("u{i}")));
        writeln!(w, "{}", header.join(","))?;
        let mut x = vec![0.0; g.dim()];
        for node in 0..g.len() {
            if !g.inside(node) {
                continue;
            }
            g.coords_into(node, &mut x);
            let row: Vec<String> = x.iter().chain(self.at(node)).map(|v| format!("{v:?}")).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Reads values back from CSV onto a known grid (rows matched by node order).
    pub fn read_csv<R: BufRead>(grid: Arc<Grid>, m: usize, r: R) -> Result<Field, FieldError> {
        let mut values = vec![0.0; grid.len() * m];
        let inside: Vec<usize> = (0..grid.len()).filter(|&n| grid.inside(n)).collect();
        let mut rows = 0;
        for (k, line) in r.lines().skip(1).enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let node = *inside
                .get(k)
                .ok_or_else(|| FieldError::Format("more rows than in-domain nodes".into()))?;
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != grid.dim() + m {
                return Err(FieldError::Format(format!("row {} has {} columns", k + 2, cols.len())));
            }
            for c in 0..m {
                values[node * m + c] = cols[grid.dim() + c]
                    .trim()
                    .parse()
                    .map_err(|e| FieldError::Format(format!("row {}: {e}", k + 2)))?;
            }
            rows += 1;
        }
        if rows != inside.len() {
            return Err(FieldError::Format(format!("{rows} rows for {} nodes", inside.len())));
        }
        Field::new(grid, m, values)
    }
}

const MAGIC: &[u8; 8] = b"VSFIELD1";

fn read_u32<R: Read>(r: &mut R) -> Result<u32, FieldError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn check_clip(kept: f64, lost: f64) -> Result<(), FieldError> {
    if lost > 0.0 {
        let fraction = lost / kept.max(f64::MIN_POSITIVE);
        if fraction > CLIP_TOL {
            return Err(FieldError::SupportClipped { fraction });
        }
    }
    Ok(())
}

/// Free-function form of [`Field::reflect`].
pub fn reflect_field(u: &Field, h: &Hyperplane, side: Side) -> Result<Field, FieldError> {
    u.reflect(h, side)
}

/// Free-function form of [`Field::gradient_magnitude`].
pub fn gradient_magnitude(u: &Field) -> Field {
    u.gradient_magnitude()
}
