//! Reflect a field across an aligned and a tilted line and measure how far
//! each result is from the exactly mirrored function.

use std::sync::Arc;

use varsym::field::{reflect_field, Field, Side};
use varsym::geometry::{reflect_point, Hyperplane};
use varsym::grid::{Domain, Grid};

fn f(x: &[f64]) -> f64 {
    (-(x[0] - 0.4).powi(2) / 0.3 - (x[1] + 0.2).powi(2) / 0.5).exp()
}

fn main() {
    let planes = [
        ("aligned x = 0", Hyperplane::axis(2, 0, 0.0)),
        ("tilted", Hyperplane::new(vec![0.3f64.cos(), 0.3f64.sin()], 0.05).unwrap()),
    ];
    for (name, h) in &planes {
        println!("{name}");
        for n in [65, 129, 257] {
            let g = Arc::new(Grid::uniform(Domain::cube(2, 3.0), n).unwrap());
            let u = Field::scalar_fn(g.clone(), f);
            let r = reflect_field(&u, h, Side::Plus).unwrap();
            let mut err: f64 = 0.0;
            for node in 0..g.len() {
                let x = g.coords(node);
                if h.signed_distance(&x) < 0.0 {
                    err = err.max((r.get(node, 0) - f(&reflect_point(&x, h))).abs());
                }
            }
            println!("  n = {n:>3}  h = {:.4}  max error {err:.3e}", g.h());
        }
    }
}
