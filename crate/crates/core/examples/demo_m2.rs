//! Two separated compactons: a minimizer of the two-constraint problem that
//! is symmetric about an axis but not about any point.

use varsym::cli::demos::{m2, M2Demo};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = m2(&M2Demo::default())?;
    if let Some(r) = &out.report {
        print!("{}", r.text_summary());
    }
    print!("{}", out.table());
    Ok(())
}
