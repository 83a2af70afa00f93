//! Radial shooting for compact-support ground states of `-Δv + f(v) = 0`
//! and the rescaling that turns them into constrained minimizers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compacton::CompactonSpec;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RadialError {
    #[error("shooting needs N >= 3, got {0}")]
    Dimension(usize),
    #[error("no ground state: bracket ends behave as {low} / {high}")]
    NoGroundState { low: String, high: String },
    #[error("potential integral {0} is not negative")]
    NonNegativePotential(f64),
}

/// Radial profile sampled on `r_i = i * dr`, identically zero past `support`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialProfile {
    pub dim: usize,
    pub dr: f64,
    pub values: Vec<f64>,
    pub slopes: Vec<f64>,
    pub support: f64,
}

/// Integrals of the unscaled ground state and the derived constants of the
/// constrained problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct M1Constants {
    pub infimum: f64,
    pub beta0: f64,
    pub lambda_scale: f64,
    pub t_v: f64,
    pub v_v: f64,
}

impl RadialProfile {
    /// Cubic Hermite interpolation in `r`.
    pub fn eval(&self, r: f64) -> f64 {
        let r = r.abs();
        if r >= self.support {
            return 0.0;
        }
        let s = r / self.dr;
        let i = (s.floor() as usize).min(self.values.len().saturating_sub(2));
        let t = s - i as f64;
        let (p0, p1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.slopes[i] * self.dr, self.slopes[i + 1] * self.dr);
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * p0 + (t3 - 2.0 * t2 + t) * m0 + (-2.0 * t3 + 3.0 * t2) * p1 + (t3 - t2) * m1
    }

    /// `r,v` rows up to the support radius.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "r,v")?;
        for (r, v) in self.radii().zip(&self.values) {
            if r > self.support {
                break;
            }
            writeln!(w, "{r:.17e},{v:.17e}")?;
        }
        Ok(())
    }

    pub fn metadata(&self) -> serde_json::Value {
        serde_json::json!({ "dim": self.dim, "dr": self.dr, "support": self.support, "samples": self.values.len() })
    }

    pub fn radii(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.values.len()).map(|i| i as f64 * self.dr)
    }

    /// Profile of `x -> v(scale * x)`.
    pub fn scaled(&self, scale: f64) -> RadialProfile {
        RadialProfile {
            dim: self.dim,
            dr: self.dr / scale,
            values: self.values.clone(),
            slopes: self.slopes.iter().map(|w| w * scale).collect(),
            support: self.support / scale,
        }
    }

    /// `omega_{N-1} * int_0^inf g(r, v, v') r^{N-1} dr` by composite Simpson.
    pub fn radial_integral(&self, g: impl Fn(f64, f64, f64) -> f64) -> f64 {
        let n = self.values.len();
        let mut acc = crate::numeric::CompensatedSum::new();
        let last = if n % 2 == 1 { n - 1 } else { n - 2 };
        for i in 0..=last {
            let r = i as f64 * self.dr;
            let w = if i == 0 || i == last { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            acc.add(w * g(r, self.values[i], self.slopes[i]) * r.powi(self.dim as i32 - 1));
        }
        let mut total = acc.value() * self.dr / 3.0;
        if last + 1 < n {
            let (r0, r1) = (last as f64 * self.dr, (last + 1) as f64 * self.dr);
            let f0 = g(r0, self.values[last], self.slopes[last]) * r0.powi(self.dim as i32 - 1);
            let f1 = g(r1, self.values[last + 1], self.slopes[last + 1]) * r1.powi(self.dim as i32 - 1);
            total += 0.5 * (f0 + f1) * self.dr;
        }
        sphere_area(self.dim) * total
    }

    /// Max-norm residual of `v'' + (N-1)/r v' - f(v)` at recorded samples
    /// whose difference stencil does not touch the snapped tail.
    pub fn ode_residual(&self, spec: &CompactonSpec) -> f64 {
        let n1 = (self.dim - 1) as f64;
        let cut = ((self.support / self.dr).round() as usize).min(self.values.len() - 1);
        let end = cut.saturating_sub(1);
        let mut worst: f64 = 0.0;
        let w = &self.slopes;
        for i in 1..end.saturating_sub(1) {
            let r = i as f64 * self.dr;
            let vpp = if i < 2 {
                (w[i + 1] - w[i - 1]) / (2.0 * self.dr)
            } else {
                (8.0 * (w[i + 1] - w[i - 1]) - (w[i + 2] - w[i - 2])) / (12.0 * self.dr)
            };
            let res = vpp + n1 / r * w[i] - spec.f(self.values[i]);
            worst = worst.max(res.abs());
        }
        worst
    }
}

/// Surface area of the unit sphere in R^N.
pub fn sphere_area(n: usize) -> f64 {
    use std::f64::consts::PI;
    let (mut area, start) = if n % 2 == 0 { (2.0 * PI, 2) } else { (2.0, 1) };
    let mut k = start;
    while k < n {
        area *= 2.0 * PI / k as f64;
        k += 2;
    }
    area
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Fate {
    /// crosses zero while still descending
    Overshoot,
    /// turns back up before reaching zero
    Undershoot,
    /// lands on zero with vanishing slope
    Touchdown,
}

impl Fate {
    fn name(self) -> &'static str {
        match self {
            Fate::Overshoot => "overshoot",
            Fate::Undershoot => "undershoot",
            Fate::Touchdown => "touchdown",
        }
    }
}

const SNAP: f64 = 1e-10;
const R_MAX: f64 = 200.0;

struct Shooter<'a> {
    spec: &'a CompactonSpec,
    n1: f64,
    dim: f64,
}

impl Shooter<'_> {
    #[inline]
    fn rhs(&self, r: f64, y: [f64; 2]) -> [f64; 2] {
        let f = self.spec.f(y[0]);
        let acc = if r == 0.0 { f / self.dim } else { f - self.n1 / r * y[1] };
        [y[1], acc]
    }

    /// One Dormand-Prince 5(4) step; returns the new state and an error estimate.
    fn step(&self, r: f64, y: [f64; 2], h: f64) -> ([f64; 2], f64) {
        const C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
        const A: [[f64; 6]; 6] = [
            [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
            [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
            [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
            [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
            [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
        ];
        const E: [f64; 7] = [
            71.0 / 57600.0,
            0.0,
            -71.0 / 16695.0,
            71.0 / 1920.0,
            -17253.0 / 339200.0,
            22.0 / 525.0,
            -1.0 / 40.0,
        ];
        let mut k = [[0.0; 2]; 7];
        k[0] = self.rhs(r, y);
        for s in 0..6 {
            let mut ys = y;
            for (j, kj) in k.iter().enumerate().take(s + 1) {
                ys[0] += h * A[s][j] * kj[0];
                ys[1] += h * A[s][j] * kj[1];
            }
            k[s + 1] = self.rhs(r + C[s] * h, ys);
        }
        // the last stage is evaluated at the 5th-order solution
        let mut ynew = y;
        for (j, kj) in k.iter().enumerate().take(6) {
            ynew[0] += h * A[5][j] * kj[0];
            ynew[1] += h * A[5][j] * kj[1];
        }
        let mut err: f64 = 0.0;
        for c in 0..2 {
            let e: f64 = (0..7).map(|j| E[j] * k[j][c]).sum::<f64>() * h;
            let sc = 1e-13 + 1e-12 * y[c].abs().max(ynew[c].abs());
            err = err.max((e / sc).abs());
        }
        (ynew, err)
    }

    /// Integrates from `v(0) = v0`, optionally recording on the grid `dr`.
    fn shoot(&self, v0: f64, record: Option<f64>) -> (Fate, Option<RadialProfile>) {
        let mut r = 0.0;
        let mut y = [v0, 0.0];
        let mut h: f64 = 1e-3;
        let hmax = record.unwrap_or(0.02);
        let mut values = vec![v0];
        let mut slopes = vec![0.0];
        let mut next_out = record.map(|dr| dr);
        let fate;
        loop {
            let mut hs = h.min(hmax);
            if let Some(t) = next_out {
                hs = hs.min(t - r);
            }
            let (ynew, err) = self.step(r, y, hs);
            if err > 1.0 && hs > 1e-14 {
                h = hs * (0.9 * err.powf(-0.2)).max(0.1);
                continue;
            }
            r += hs;
            y = ynew;
            h = hs * (0.9 * err.max(1e-10).powf(-0.2)).min(5.0);
            if let (Some(t), Some(dr)) = (next_out, record) {
                if (r - t).abs() <= 1e-12 * t.max(1.0) {
                    r = t;
                    values.push(y[0]);
                    slopes.push(y[1]);
                    next_out = Some(values.len() as f64 * dr);
                }
            }
            if y[0].abs() + y[1].abs() <= SNAP {
                fate = Fate::Touchdown;
                break;
            }
            if y[0] <= 0.0 {
                fate = Fate::Overshoot;
                break;
            }
            if y[1] >= 0.0 && r > 0.0 {
                fate = Fate::Undershoot;
                break;
            }
            if r > R_MAX {
                fate = Fate::Undershoot;
                break;
            }
        }
        let profile = record.map(|dr| {
            // snap the tail: everything from the stopping point on is zero
            let cut = values.iter().position(|&v| v <= 0.0).unwrap_or(values.len());
            let support = cut as f64 * dr;
            values.truncate(cut);
            slopes.truncate(cut);
            values.extend([0.0; 4]);
            slopes.extend([0.0; 4]);
            RadialProfile { dim: self.dim as usize, dr, values, slopes, support }
        });
        (fate, profile)
    }
}

/// Ground state of `v'' + (N-1)/r v' = f(v)` with `v'(0) = 0` that lands on
/// zero with zero slope, found by bisection on `v(0)`.
pub fn shoot_ground_state(spec: &CompactonSpec, dim: usize, dr: f64) -> Result<RadialProfile, RadialError> {
    if dim < 3 {
        return Err(RadialError::Dimension(dim));
    }
    let sh = Shooter { spec, n1: (dim - 1) as f64, dim: dim as f64 };
    let z0 = spec.f_zero();
    let (zeta, _) = spec.argmin_f();
    // scan for the first undershoot -> overshoot transition, refining
    // geometrically towards the hilltop at zeta
    let n = 64;
    let mut starts: Vec<f64> = (1..n).map(|i| z0 + (zeta - z0) * i as f64 / n as f64).collect();
    starts.extend((7..48).map(|k| zeta - (zeta - z0) * 0.5f64.powi(k)));
    let mut lo = None;
    let mut hi = None;
    let mut prev: Option<(f64, Fate)> = None;
    for v0 in starts {
        let (fate, _) = sh.shoot(v0, None);
        if fate == Fate::Touchdown {
            lo = Some(v0);
            hi = Some(v0);
            break;
        }
        if let Some((pv, pf)) = prev {
            if pf == Fate::Undershoot && fate == Fate::Overshoot {
                lo = Some(pv);
                hi = Some(v0);
                break;
            }
        }
        prev = Some((v0, fate));
    }
    let (Some(mut lo), Some(mut hi)) = (lo, hi) else {
        let low = sh.shoot(z0 + 1e-6, None).0.name().to_string();
        let high = sh.shoot(zeta - 1e-6, None).0.name().to_string();
        return Err(RadialError::NoGroundState { low, high });
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        match sh.shoot(mid, None).0 {
            Fate::Undershoot => lo = mid,
            Fate::Overshoot => hi = mid,
            Fate::Touchdown => {
                lo = mid;
                hi = mid;
            }
        }
    }
    let (_, profile) = sh.shoot(lo, Some(dr));
    Ok(profile.expect("recording run returns a profile"))
}

/// Scales the ground state so that `V(u*) = -1` and derives `I` and `beta0`.
pub fn rescale_profile(v: &RadialProfile, spec: &CompactonSpec) -> Result<(RadialProfile, M1Constants), RadialError> {
    let n = v.dim as f64;
    let t_v = v.radial_integral(|_, _, w| w * w);
    let v_v = v.radial_integral(|_, s, _| spec.big_f(s));
    if v_v >= 0.0 {
        return Err(RadialError::NonNegativePotential(v_v));
    }
    let lambda_scale = (-v_v).powf(1.0 / n);
    let infimum = lambda_scale.powf(2.0 - n) * t_v;
    let beta0 = (n - 2.0) / (2.0 * n) * infimum;
    let u = v.scaled(lambda_scale);
    Ok((u, M1Constants { infimum, beta0, lambda_scale, t_v, v_v }))
}
