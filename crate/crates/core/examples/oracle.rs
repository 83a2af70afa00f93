//! Shoot the radial ground state of the compacton problem and print the
//! constants every grid run is compared against.

use varsym::compacton::CompactonSpec;
use varsym::problems::M1Oracle;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = CompactonSpec::reference();
    let report = spec.verify();
    println!("f: alpha {} s1 {} s2 {} delta {}", spec.alpha, spec.s1, spec.s2, spec.delta);
    println!("C1 {}  C2 {}  C3 {}  zeta {:.6}  F(zeta) {:.6}", report.c1, report.c2, report.c3, report.zeta, report.f_min);

    let o = M1Oracle::reference()?;
    let c = o.constants;
    println!("infimum I        {:.6}", c.infimum);
    println!("beta0            {:.6}", c.beta0);
    println!("lambda scale     {:.6}  (squared {:.6})", c.lambda_scale, c.lambda_scale * c.lambda_scale);
    println!("support radius   {:.6}", o.support_radius());
    println!("ODE residual     {:.2e}", o.ground_state.ode_residual(&o.spec));

    println!("\n   r        u*(r)");
    let r_s = o.support_radius();
    for i in 0..=12 {
        let r = r_s * 1.1 * i as f64 / 12.0;
        println!("{r:7.4}  {:.6}", o.profile.eval(r));
    }
    Ok(())
}
