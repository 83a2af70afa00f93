//! Parse a density, print it back, evaluate it and its partial derivatives.

use varsym::density::{parse_density, DensityError};

fn main() -> Result<(), DensityError> {
    let text = "0.5*g*g + r*u1*u1 - pow(pos(u2), 2.5)/2.5 + min(u1, u2)";
    let e = parse_density(text, 2)?;
    println!("parsed   {e}");
    println!("nodes    {}", e.node_count());

    let (r, u, g) = (0.7, [0.3, 1.2], 0.4);
    let p = e.partials(r, &u, g)?;
    println!("value    {:.6}", p.value);
    println!("d/du     {:?}", p.du);
    println!("d/dg     {:.6}", p.dg);
    println!("kink hit {}", p.nondifferentiable);

    for bad in ["u1 +* 2", "u3*u3", "pow(u1)"] {
        match parse_density(bad, 2) {
            Ok(_) => println!("{bad:>10}: accepted"),
            Err(err) => println!("{bad:>10}: {} at {:?}: {err}", err.code(), err.position()),
        }
    }
    Ok(())
}
