//! Calibrate a two-child lattice law on {1, 0, -2} to the boundary case and
//! verify the normalisation exactly.
use brwlab::laws::{calibrate_lattice, verify_boundary, VerifyMode};

fn main() -> brwlab::Result<()> {
    let law = calibrate_lattice(&[1, 0, -2], 2)?;
    for (k, v) in law.config_fragment() {
        println!("{k} = {v}");
    }
    let r = verify_boundary(&law, VerifyMode::Exact, 1e-12)?;
    println!("E sum e^V       = {}", r.mean_exp.value);
    println!("E sum V e^V     = {}", r.mean_lin.value);
    println!("sigma^2         = {}", r.sigma2.value);
    println!("all conditions  : {}", r.flags.all());
    Ok(())
}
