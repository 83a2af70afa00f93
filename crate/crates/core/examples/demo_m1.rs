//! Grid minimizer of the one-constraint compacton problem against the
//! shooting oracle, plus the affine symmetry verdict. Takes a few minutes.

use varsym::cli::demos::{m1, M1Demo};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = m1(&M1Demo::default(), &mut |p| eprintln!("outer {:>2}  energy {:.8}  kkt {:.1e}", p.outer, p.energy, p.kkt))?;
    print!("{}", out.table());
    Ok(())
}
