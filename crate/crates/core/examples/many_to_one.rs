//! Both sides of the many-to-one identity: exactly at small depth, then by
//! Monte Carlo for binary Gaussian children.
use brwlab::estimate::SeedSource;
use brwlab::laws::OffspringLaw;
use brwlab::oracle::many_to_one_exact;
use brwlab::simulate::PruneRule;
use brwlab::spine::{default_path_battery, many_to_one_pair};

fn main() -> brwlab::Result<()> {
    let fs = default_path_battery();
    let law = OffspringLaw::lattice_three_point();
    for f in &fs {
        let (l, r) = many_to_one_exact(&law, 3, 0.0, |p| f.eval_path(p))?;
        println!("exact n=3 {:<28} {l:.12} {r:.12}", f.name());
    }
    let pairs = many_to_one_pair(&OffspringLaw::binary_gaussian(), 8, 0.0, &fs, &PruneRule::none(), 20_000, &SeedSource::new(2))?;
    for p in pairs {
        let z = (p.lhs.value - p.rhs.value) / p.lhs.combined_se(&p.rhs);
        println!("mc    n=8 {:<28} {:.5} {:.5} z={z:.2}", p.name, p.lhs.value, p.rhs.value);
    }
    Ok(())
}
