//! Left tail of the maximum: Monte Carlo r(n, y) with a prune-doubling
//! certificate, next to the exact lattice values.
use brwlab::estimate::SeedSource;
use brwlab::extremes::{tail_estimate, TailOptions};
use brwlab::laws::OffspringLaw;
use brwlab::simulate::PruneRule;

fn main() -> brwlab::Result<()> {
    let law = OffspringLaw::lattice_three_point();
    let t = tail_estimate(&law, &[16, 32], &[0.0, 1.0, 2.0, 4.0], &PruneRule::window(20.0), 2000, &SeedSource::new(5), TailOptions::default())?;
    println!("{:>4} {:>3} {:>10} {:>10} {:>10}", "n", "y", "P", "r", "exact r");
    for c in &t.cells {
        let exact = c.exact.map(|e| e * c.y.exp() / (1.0 + c.y)).unwrap_or(f64::NAN);
        println!("{:>4} {:>3} {:>10.5} {:>10.5} {:>10.5}", c.n, c.y, c.probability.value, c.normalized.value, exact);
    }
    println!("band max/min = {:.3}", t.band.ratio());
    if let Some(cert) = &t.certificate {
        println!("doubling to {}: max shift {:.2} SE, pass = {}", cert.doubled, cert.max_shift_se, cert.pass);
    }
    Ok(())
}
