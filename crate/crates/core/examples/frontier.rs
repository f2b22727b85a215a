//! First crossings of the curve f_n + y, Monte Carlo against the exact
//! backward recursion.
use brwlab::estimate::SeedSource;
use brwlab::extremes::frontier_crossing;
use brwlab::laws::OffspringLaw;

fn main() -> brwlab::Result<()> {
    let law = OffspringLaw::lattice_three_point();
    for y in [0.0, 2.0, 4.0] {
        let r = frontier_crossing(&law, 64, y, None, 30.0, 4000, &SeedSource::new(y as u64))?;
        let exact = r.exact.map(|e| e.probability).unwrap_or(f64::NAN);
        println!(
            "y={y}: P={:.5} +- {:.5} (exact {exact:.5}), P e^y/(1+y) = {:.4}, E sum Z_k = {:.4}",
            r.probability.value, r.probability.std_error, r.normalized.value, r.mean_first_crossings.value
        );
    }
    Ok(())
}
