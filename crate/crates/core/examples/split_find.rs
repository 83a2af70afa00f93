//! Find hyperplanes that bisect several integrals of a field at once: one
//! through the origin for a single constraint, and an affine one for two.

use std::sync::Arc;

use varsym::density::DensitySet;
use varsym::field::Field;
use varsym::functional::VariationalProblem;
use varsym::grid::{Domain, Grid};
use varsym::splitting::{find_affine_zero, find_zero_k1, SplitMode, SplitQuery};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let grid = Arc::new(Grid::uniform(Domain::cube(2, 3.0), 97)?);
    let u = Field::scalar_fn(grid.clone(), |x| {
        (-(x[0] - 0.8).powi(2) - (x[1] - 0.3).powi(2)).exp() + 0.6 * (-(x[0] + 0.5).powi(2) * 2.0 - (x[1] + 0.9).powi(2)).exp()
    });

    let one = VariationalProblem::new(grid.clone(), DensitySet::parse(1, "g*g", &[("u1*u1", 1.0)])?, true)?;
    let z = find_zero_k1(&SplitQuery::new(&one, &u, SplitMode::Vector)?)?;
    println!("k = 1, plane through 0: normal {:.6?}  |Phi| {:.1e} (tol {:.1e})", z.normal, z.defect_norm, z.tol);

    let two = DensitySet::parse(1, "g*g", &[("u1*u1", 1.0), ("pow(pos(u1),3)", 1.0)])?;
    let two = VariationalProblem::new(grid.clone(), two, true)?;
    let z = find_affine_zero(&SplitQuery::new(&two, &u, SplitMode::Affine)?)?;
    println!("k = 2, affine plane: normal {:.6?} offset {:.6}  |psi| {:.1e}", z.normal, z.offset, z.defect_norm);
    Ok(())
}
