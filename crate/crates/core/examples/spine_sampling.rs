//! Sample the spine construction and compare the spine walk with its
//! tilted step law.
use brwlab::estimate::{Moments, SeedSource};
use brwlab::laws::{spine_child_law, spine_step_law, OffspringLaw};
use brwlab::spine::{sample_spine, SpineOptions};

fn main() -> brwlab::Result<()> {
    let law = OffspringLaw::lattice_three_point();
    let tilted = spine_child_law(&law)?;
    let n = 20;
    let seeds = SeedSource::new(1);
    let mut end = Moments::new();
    for i in 0..20_000 {
        let s = sample_spine(&law, &tilted, n, 0.0, &SpineOptions::spine_only(), &mut seeds.stream(i))?;
        end.push(s.positions()[n]);
    }
    let steps = spine_step_law(&law)?;
    let (mean, var) = steps.moments().expect("enumerable law");
    println!("spine step mean {mean}, variance {var}");
    println!("E V(w_n) = {} +- {} (n = {n})", end.mean(), end.std_error());
    println!("Var V(w_n) / n = {}", end.variance() / n as f64);
    Ok(())
}
