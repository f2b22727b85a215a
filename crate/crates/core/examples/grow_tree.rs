//! Grow one tree, print its labelled nodes and a few generation summaries.
use brwlab::estimate::SeedSource;
use brwlab::laws::OffspringLaw;
use brwlab::simulate::{grow, GrowOptions};

fn main() -> brwlab::Result<()> {
    let law = OffspringLaw::lattice_three_point();
    let mut rng = SeedSource::new(3).stream(0);
    let t = grow(&law, 4, 0.0, &GrowOptions::default(), &mut rng)?;
    print!("{}", t.dump());
    for k in 0..=t.depth() {
        println!(
            "gen {k}: {} particles, max {}, W = {}",
            t.generation_size(k),
            t.max_position(k),
            t.additive_martingale(k)
        );
    }
    let leaves: Vec<_> = t.generation_nodes(4).collect();
    if leaves.len() >= 2 {
        let m = t.mrca(leaves[0], leaves[leaves.len() - 1])?;
        println!("first and last leaf split at generation {}", t.generation(m)?);
    }
    Ok(())
}
