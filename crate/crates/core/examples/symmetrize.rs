//! Minimize, then run the reflection pipeline on the minimizer and print the
//! symmetry verdict.

use std::sync::Arc;

use varsym::density::DensitySet;
use varsym::functional::VariationalProblem;
use varsym::grid::{Domain, Grid};
use varsym::optimize::{minimize, Init, MinimizeOptions};
use varsym::problems::bump_field;
use varsym::symmetry::{detect_symmetry, SymmetryOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let grid = Arc::new(Grid::uniform(Domain::ball(2, 1.0), 49)?);
    let densities = DensitySet::parse(1, "0.5*g*g - pow(pos(u1),3)/3", &[("u1*u1", 20.0)])?;
    let p = VariationalProblem::new(grid.clone(), densities, false)?;
    let res = minimize(&p, Init::Field(bump_field(&grid, &[0.2, 0.1], 3.0, 0.5)), &MinimizeOptions::default())?;
    println!("energy {:.6}  converged {}", res.energy, res.converged);

    let report = detect_symmetry(&p, &res.u, &SymmetryOptions::default())?;
    print!("{}", report.text_summary());
    Ok(())
}
