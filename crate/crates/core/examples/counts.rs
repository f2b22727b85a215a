//! Truncated counts Y_n(y, z) near the boundary, their second moment and the
//! pair counts split by the generation of the common ancestor. Lines more
//! than 20 below f_n + y are dropped.
use brwlab::estimate::SeedSource;
use brwlab::extremes::{mean_count_exact, truncated_counts, CountOptions, CountParams};
use brwlab::laws::{OffspringLaw, XiSign};

fn main() -> brwlab::Result<()> {
    let law = OffspringLaw::lattice_three_point();
    let n = 32;
    let opts = CountOptions {
        depth: Some(20.0),
        ..CountOptions::default()
    };
    for y in [0.0, 2.0, 4.0] {
        let p = CountParams::new(y, 1.0, 2.0);
        let r = truncated_counts(&law, n, &p, &opts, 400, &SeedSource::new(4))?;
        let exact = mean_count_exact(&law, n, &p, XiSign::default())?;
        println!(
            "y={y}: E Y = {:.4} +- {:.4} (exact {exact:.4}), E Y^2 = {:.3}, P(Y>=1) >= {:.4}",
            r.mean.value, r.mean.std_error, r.second_moment.value, r.second_moment_ratio
        );
        let peak = r.pair_profile.iter().cloned().fold(0.0, f64::max);
        println!("      pair profile peak {peak:.3}, identity failures {}", r.identity_failures);
    }
    Ok(())
}
