//! One-dimensional double well with one and with three constraints.

use varsym::cli::demos::{one_d, OneDDemo};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = one_d(&OneDDemo::default(), &mut |_| {})?;
    println!("{}", serde_json::to_string_pretty(&out.details)?);
    print!("{}", out.table());
    Ok(())
}
