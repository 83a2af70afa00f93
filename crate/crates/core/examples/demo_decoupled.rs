//! Two uncoupled copies of a scalar problem, the second rotated a quarter
//! turn: each component keeps its own axis, the pair has no common centre.

use varsym::cli::demos::{decoupled, DecoupledDemo};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = decoupled(&DecoupledDemo::default(), &mut |_| {})?;
    print!("{}", out.table());
    Ok(())
}
