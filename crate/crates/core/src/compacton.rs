//! Sublinear nonlinearity `f` with a balanced negative well, and its exact
//! piecewise-polynomial antiderivative `F`.
//!
//! `f(s) = 0` for `s <= 0`, `s^alpha` on `(0, 1]`, a cubic Hermite descent to
//! `-delta` on `[1, s1]`, then on `[s1, s2]` a smoothstep return to zero plus
//! the lobe `c (s - s1)^2 (s - s2)^2`. The lobe coefficient `c` is the one
//! free parameter; it is fixed so that `int_0^{s2} f = 0`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::density::{BinOp, DensityExpr, Expr, Var};

/// Well depth of the reference instance.
pub const REFERENCE_DELTA: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompactonError {
    #[error("need 0 < alpha < 1 and 1 < s1 < s2 and delta > 0")]
    BadParameters,
    #[error("well depth {delta} cannot balance the positive lobe; need delta > {min_delta:.6}")]
    Infeasible { delta: f64, min_delta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompactonSpec {
    pub alpha: f64,
    pub s1: f64,
    pub s2: f64,
    pub delta: f64,
    /// Solved lobe coefficient.
    pub lobe: f64,
    /// Pieces of `f` on `[1,s1]` (in `s-1`) and `[s1,s2]` (in `s-s1`).
    pub f_pieces: [Vec<f64>; 2],
    /// Pieces of `F - 1/(alpha+1)` on `[1,s1]`, `[s1,s2]` and `[s2,inf)`.
    pub big_f_pieces: [Vec<f64>; 3],
}

/// Check outcome for conditions C1-C3 plus the integrability of `F^{-1/2}` near 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompactonReport {
    pub c1: bool,
    pub c2: bool,
    pub c3: bool,
    /// Argmin of F and the minimum value.
    pub zeta: f64,
    pub f_min: f64,
    pub integrable: bool,
    /// Closed form of `int_0^1 F(s)^{-1/2} ds`.
    pub inverse_sqrt_integral: f64,
    pub smooth_knots: bool,
    pub balance: f64,
}

fn poly_eval(p: &[f64], t: f64) -> f64 {
    p.iter().rev().fold(0.0, |acc, c| acc * t + c)
}

fn poly_deriv(p: &[f64]) -> Vec<f64> {
    p.iter().enumerate().skip(1).map(|(k, c)| k as f64 * c).collect()
}

fn poly_integral(p: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0];
    out.extend(p.iter().enumerate().map(|(k, c)| c / (k + 1) as f64));
    out
}

/// Hermite polynomial in `t in [0, l]` with the given end values and slopes.
fn hermite(p0: f64, m0: f64, p1: f64, m1: f64, l: f64) -> Vec<f64> {
    let c2 = (3.0 * (p1 - p0) - (2.0 * m0 + m1) * l) / (l * l);
    let c3 = (2.0 * (p0 - p1) + (m0 + m1) * l) / (l * l * l);
    vec![p0, m0, c2, c3]
}

impl CompactonSpec {
    /// Builds `f` and solves the lobe coefficient for zero net integral.
    pub fn new(alpha: f64, s1: f64, s2: f64, delta: f64) -> Result<Self, CompactonError> {
        if !(alpha > 0.0 && alpha < 1.0 && 1.0 < s1 && s1 < s2 && delta > 0.0) {
            return Err(CompactonError::BadParameters);
        }
        let l1 = s1 - 1.0;
        let l = s2 - s1;
        let head = 1.0 / (alpha + 1.0);
        // integral of the descent piece for unit depth is linear in delta
        let descent = |d: f64| poly_eval(&poly_integral(&hermite(1.0, alpha, -d, 0.0, l1)), l1);
        let net = |d: f64| head + descent(d) - d * l / 2.0;
        let a = net(delta);
        if a >= 0.0 {
            let slope = net(1.0) - net(0.0);
            let min_delta = -net(0.0) / slope;
            return Err(CompactonError::Infeasible { delta, min_delta });
        }
        let lobe = -a * 30.0 / l.powi(5);
        Ok(Self::from_parts(alpha, s1, s2, delta, lobe))
    }

    /// Assembles the pieces for an explicit lobe coefficient, without the
    /// balance solve. Used to build deliberately broken specs.
    pub fn from_parts(alpha: f64, s1: f64, s2: f64, delta: f64, lobe: f64) -> Self {
        let l1 = s1 - 1.0;
        let l = s2 - s1;
        let p1 = hermite(1.0, alpha, -delta, 0.0, l1);
        let (l2, l3) = (l * l, l * l * l);
        let p2 = vec![
            -delta,
            0.0,
            3.0 * delta / l2 + lobe * l2,
            -2.0 * delta / l3 - 2.0 * lobe * l,
            lobe,
        ];
        let f1 = poly_integral(&p1);
        let mut f2 = poly_integral(&p2);
        f2[0] = poly_eval(&f1, l1);
        let tail = vec![poly_eval(&f2, l)];
        CompactonSpec { alpha, s1, s2, delta, lobe, f_pieces: [p1, p2], big_f_pieces: [f1, f2, tail] }
    }

    /// The reference instance used throughout the examples.
    pub fn reference() -> Self {
        Self::new(0.5, 1.5, 2.5, REFERENCE_DELTA).expect("reference compacton is feasible")
    }

    pub fn f(&self, s: f64) -> f64 {
        if s <= 0.0 {
            0.0
        } else if s <= 1.0 {
            s.powf(self.alpha)
        } else if s < self.s1 {
            poly_eval(&self.f_pieces[0], s - 1.0)
        } else if s < self.s2 {
            poly_eval(&self.f_pieces[1], s - self.s1)
        } else {
            0.0
        }
    }

    pub fn big_f(&self, s: f64) -> f64 {
        let head = 1.0 / (self.alpha + 1.0);
        if s <= 0.0 {
            0.0
        } else if s <= 1.0 {
            s.powf(self.alpha + 1.0) / (self.alpha + 1.0)
        } else if s < self.s1 {
            head + poly_eval(&self.big_f_pieces[0], s - 1.0)
        } else if s < self.s2 {
            head + poly_eval(&self.big_f_pieces[1], s - self.s1)
        } else {
            head + self.big_f_pieces[2][0]
        }
    }

    /// Zero crossing of `F` inside `(1, s2)` (where the well begins).
    pub fn f_zero(&self) -> f64 {
        let (mut lo, mut hi) = (1.0, self.argmin_f().0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.big_f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// `(zeta, F(zeta))`: the sign change of `f` from negative to positive.
    pub fn argmin_f(&self) -> (f64, f64) {
        let n = 10_000;
        let h = self.s2 / n as f64;
        let mut best = (0.0, 0.0);
        for i in 1..n {
            let s = i as f64 * h;
            let v = self.big_f(s);
            if v < best.1 {
                best = (s, v);
            }
        }
        let (mut lo, mut hi) = ((best.0 - h).max(self.s1), (best.0 + h).min(self.s2));
        if self.f(lo) < 0.0 && self.f(hi) > 0.0 {
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if self.f(mid) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let z = 0.5 * (lo + hi);
            best = (z, self.big_f(z));
        }
        best
    }

    /// `pow(pos(min(a,1)),p)/d + piecewise(a; 1,s1,s2; pieces)`.
    fn build(&self, arg: Expr, exponent: f64, divisor: f64, pieces: Vec<Vec<f64>>) -> Expr {
        let core = Expr::Pow(
            Box::new(Expr::Pos(Box::new(Expr::Min(Box::new(arg.clone()), Box::new(Expr::Const(1.0)))))),
            exponent,
        );
        let core = if divisor == 1.0 { core } else { Expr::bin(BinOp::Div, core, Expr::Const(divisor)) };
        let pw = Expr::Piecewise { arg: Box::new(arg), knots: vec![1.0, self.s1, self.s2], pieces };
        Expr::bin(BinOp::Add, core, pw)
    }

    /// `f(a)` as a density expression.
    pub fn f_expr(&self, arg: Expr) -> Expr {
        let mut p1 = self.f_pieces[0].clone();
        p1[0] -= 1.0;
        let mut p2 = self.f_pieces[1].clone();
        p2[0] -= 1.0;
        self.build(arg, self.alpha, 1.0, vec![vec![0.0], p1, p2, vec![-1.0]])
    }

    /// `F(a)` as a density expression.
    pub fn big_f_expr(&self, arg: Expr) -> Expr {
        let mut all = vec![vec![0.0]];
        all.extend(self.big_f_pieces.iter().cloned());
        self.build(arg, self.alpha + 1.0, self.alpha + 1.0, all)
    }

    /// `F(u1)` for a field with `arity` components.
    pub fn potential(&self, arity: usize) -> DensityExpr {
        DensityExpr::from_expr(self.big_f_expr(Expr::Var(Var::U(0))), arity)
    }

    /// `F(-u1)`.
    pub fn mirrored_potential(&self, arity: usize) -> DensityExpr {
        DensityExpr::from_expr(self.big_f_expr(Expr::Neg(Box::new(Expr::Var(Var::U(0))))), arity)
    }

    pub fn f_density(&self) -> DensityExpr {
        DensityExpr::from_expr(self.f_expr(Expr::Var(Var::U(0))), 1)
    }

    /// Checks C1-C3, knot smoothness and the `F^{-1/2}` integrability.
    pub fn verify(&self) -> CompactonReport {
        let a = self.alpha;
        let c1 = (1..=100).all(|i| {
            let s = i as f64 / 100.0;
            self.f(s) == s.powf(a) && self.f(-s) == 0.0
        });
        let c2 = (0..100).all(|i| {
            let s = self.s2 + i as f64 * 0.05;
            self.big_f(s).abs() <= 1e-10 && self.f(s) == 0.0
        });
        let (zeta, f_min) = self.argmin_f();
        let c3 = f_min < -1e-6;
        let balance = self.big_f(self.s2);

        // value and slope matches at 1, s1, s2
        let l1 = self.s1 - 1.0;
        let l = self.s2 - self.s1;
        let (p1, p2) = (&self.f_pieces[0], &self.f_pieces[1]);
        let (d1, d2) = (poly_deriv(p1), poly_deriv(p2));
        let checks = [
            (poly_eval(p1, 0.0) - 1.0).abs() <= 1e-12,
            (poly_eval(&d1, 0.0) - a).abs() <= 1e-10,
            (poly_eval(p1, l1) - poly_eval(p2, 0.0)).abs() <= 1e-12,
            (poly_eval(&d1, l1) - poly_eval(&d2, 0.0)).abs() <= 1e-10,
            poly_eval(p2, l).abs() <= 1e-12,
            poly_eval(&d2, l).abs() <= 1e-10,
        ];
        let smooth_knots = checks.iter().all(|&b| b);
        CompactonReport {
            c1,
            c2,
            c3,
            zeta,
            f_min,
            integrable: a < 0.95,
            inverse_sqrt_integral: (a + 1.0).sqrt() * 2.0 / (1.0 - a),
            smooth_knots,
            balance,
        }
    }
}

pub fn make_compacton_f(alpha: f64, s1: f64, s2: f64, delta: f64) -> Result<CompactonSpec, CompactonError> {
    CompactonSpec::new(alpha, s1, s2, delta)
}

pub fn verify_compacton_conditions(spec: &CompactonSpec) -> CompactonReport {
    spec.verify()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_satisfies_all_conditions() {
        let spec = CompactonSpec::reference();
        let rep = spec.verify();
        assert!(rep.c1 && rep.c2 && rep.c3 && rep.smooth_knots && rep.integrable, "{rep:?}");
        assert!(rep.balance.abs() <= 1e-12);
        assert!(rep.zeta > 1.0 && rep.zeta < spec.s2);
        assert!((rep.inverse_sqrt_integral - 4.898979485566356).abs() < 1e-12);
    }

    #[test]
    fn antiderivative_pieces_differentiate_to_f() {
        let spec = CompactonSpec::reference();
        for (fp, big) in spec.f_pieces.iter().zip(&spec.big_f_pieces) {
            let d = poly_deriv(big);
            for (a, b) in d.iter().zip(fp) {
                assert!((a - b).abs() <= 1e-13 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn density_expressions_agree_with_direct_evaluation() {
        let spec = CompactonSpec::reference();
        let f = spec.f_density();
        let big = spec.potential(1);
        assert_eq!(f.eval(0.0, &[0.25], 0.0).unwrap(), 0.5);
        assert_eq!(big.eval(0.0, &[1.0], 0.0).unwrap(), 2.0 / 3.0);
        let p = big.partials(0.0, &[0.25], 0.0).unwrap();
        assert!((p.du[0] - 0.5).abs() < 1e-15);
        for i in -40..=300 {
            let s = i as f64 * 0.01;
            let fe = f.eval(0.0, &[s], 0.0).unwrap();
            let be = big.eval(0.0, &[s], 0.0).unwrap();
            assert!((fe - spec.f(s)).abs() < 1e-13, "f({s})");
            assert!((be - spec.big_f(s)).abs() < 1e-13, "F({s})");
            let d = big.partials(0.0, &[s], 0.0).unwrap().du[0];
            assert!((d - spec.f(s)).abs() < 1e-12, "F'({s})");
        }
        let w = spec.mirrored_potential(1);
        assert_eq!(w.eval(0.0, &[-2.0], 0.0).unwrap(), big.eval(0.0, &[2.0], 0.0).unwrap());
    }

    #[test]
    fn shallow_well_is_infeasible() {
        match CompactonSpec::new(0.5, 1.5, 2.5, 0.5) {
            Err(CompactonError::Infeasible { min_delta, .. }) => {
                assert!(CompactonSpec::new(0.5, 1.5, 2.5, min_delta * 1.001).is_ok());
                assert!(CompactonSpec::new(0.5, 1.5, 2.5, min_delta * 0.999).is_err());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sabotaged_spec_fails_c2() {
        let good = CompactonSpec::reference();
        let bad = CompactonSpec::from_parts(good.alpha, good.s1, good.s2, good.delta / 2.0, good.lobe);
        let rep = bad.verify();
        assert!(!rep.c2);
        assert!(rep.balance.abs() > 1e-3);
    }

    #[test]
    fn inverse_sqrt_integral_matches_quadrature() {
        // substitute s = w^q so the endpoint singularity disappears
        for alpha in [0.25, 0.5, 0.75] {
            let spec = CompactonSpec::new(alpha, 1.5, 2.5, 10.0).unwrap();
            let q = 4.0 / (1.0 - alpha);
            let n = 2000;
            let g = |w: f64| {
                if w == 0.0 {
                    return 0.0;
                }
                let s: f64 = w.powf(q);
                q * w.powf(q - 1.0) / spec.big_f(s).sqrt()
            };
            let h = 1.0 / n as f64;
            let mut acc = g(0.0) + g(1.0);
            for i in 1..n {
                acc += g(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            let quad = acc * h / 3.0;
            let rep = spec.verify();
            assert!((quad - rep.inverse_sqrt_integral).abs() < 1e-8, "{quad} {}", rep.inverse_sqrt_integral);
        }
    }
}
