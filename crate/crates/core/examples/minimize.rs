//! Minimize a focusing energy on the unit disk under a fixed L2 mass and
//! report the fitted Lagrange multiplier.

use std::sync::Arc;

use varsym::density::DensitySet;
use varsym::functional::{fit_multipliers, VariationalProblem};
use varsym::grid::{Domain, Grid};
use varsym::optimize::{minimize_with, Init, MinimizeOptions};
use varsym::problems::bump_field;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let grid = Arc::new(Grid::uniform(Domain::ball(2, 1.0), 41)?);
    let densities = DensitySet::parse(1, "0.5*g*g - pow(pos(u1),3)/3", &[("u1*u1", 20.0)])?;
    let p = VariationalProblem::new(grid.clone(), densities, false)?;

    let init = bump_field(&grid, &[0.3, -0.2], 3.0, 0.5);
    let res = minimize_with(&p, Init::Field(init), &MinimizeOptions::default(), &mut |s| {
        eprintln!("outer {:>2}  energy {:.8}  violation {:.1e}  kkt {:.1e}", s.outer, s.energy, s.violation, s.kkt);
    })?;
    let (alpha, fit) = fit_multipliers(&p, &res.u)?;
    println!("{}", serde_json::to_string_pretty(&res.summary())?);
    println!("fitted multiplier {:.6} (relative fit residual {fit:.1e})", alpha[0]);
    Ok(())
}
