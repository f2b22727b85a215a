//! Exact ballot probabilities of the lattice spine walk and their
//! n^{1/2} / (1 + y) scaling.
use brwlab::estimate::SeedSource;
use brwlab::laws::{OffspringLaw, XiSign};
use brwlab::walks::{ballot_scaling, Curve, EnrichedWalkLaw, Mode};

fn main() -> brwlab::Result<()> {
    let walk = EnrichedWalkLaw::from_brw(&OffspringLaw::lattice_three_point(), XiSign::default())?;
    let rows = ballot_scaling(&walk, &Curve::Zero, &[100, 1000, 10_000], &[0.0, 1.0, 2.0, 5.0], Mode::Dp, &SeedSource::new(0))?;
    println!("{:>6} {:>4} {:>12} {:>10}", "n", "y", "P", "scaled");
    for r in rows {
        println!("{:>6} {:>4} {:>12.6e} {:>10.5}", r.n, r.y, r.raw.value, r.normalized.value);
    }
    Ok(())
}
