//! Excursions of the spine walk above and below the log boundary, with the
//! window depth H calibrated from the conditioned local limit.
use brwlab::estimate::SeedSource;
use brwlab::laws::{OffspringLaw, XiSign};
use brwlab::walks::{
    calibrate_h, enriched_excursion, excursion_lower_scaling, excursion_upper_scaling, Curve, EnrichedWalkLaw,
    HSettings, Mode, Orientation,
};

fn main() -> brwlab::Result<()> {
    let walk = EnrichedWalkLaw::from_brw(&OffspringLaw::lattice_three_point(), XiSign::default())?;
    let curve = Curve::LogBoundary { lambda: 1.5 };
    let seeds = SeedSource::new(0);
    let ns = [64, 256, 1024];
    let h = calibrate_h(&walk, &HSettings::default(), Mode::Dp, &seeds)?.h;
    println!("calibrated H = {h}");
    for r in excursion_upper_scaling(&walk, &curve, &ns, &[0.0, 2.0], &[(2.0, 2.0)], Mode::Dp, &seeds)? {
        println!("upper n={:<5} y={} P={:.4e} scaled={:.4}", r.n, r.y, r.raw.value, r.normalized.value);
    }
    for r in excursion_lower_scaling(&walk, &curve, &ns, &[0.0, 1.0, 2.0], h, Orientation::Below, Mode::Dp, &seeds)? {
        println!("lower n={:<5} y={} P={:.4e} scaled={:.4}", r.n, r.y, r.raw.value, r.normalized.value);
    }
    for r in enriched_excursion(&walk, &curve, &ns, &[0.0, 2.0], h, Mode::Dp, &seeds)? {
        println!(
            "enriched n={:<5} y={} excursion={:.4} ballot-spine={:.4}",
            r.n, r.y, r.excursion_normalized.value, r.ballot_spine_normalized.value
        );
    }
    Ok(())
}
