//! Survival-conditioned medians of M_n recentred by (3/2) log n, and the
//! exceedance probabilities of |M_n - m_n|.
use brwlab::estimate::SeedSource;
use brwlab::extremes::concentration;
use brwlab::laws::OffspringLaw;
use brwlab::simulate::PruneRule;

fn main() -> brwlab::Result<()> {
    let law = OffspringLaw::lattice_three_point();
    let ys = [0.0, 1.0, 2.0, 3.0, 4.0];
    let r = concentration(&law, &[32, 64, 128], &ys, &PruneRule::window(25.0), 1000, &SeedSource::new(8))?;
    for row in &r.rows {
        let ex: Vec<String> = row.exceedance.iter().map(|(_, e)| format!("{:.3}", e.value)).collect();
        println!(
            "n={:<4} median={:>8.3} centred={:>6.3} exact median={:?} exceedance [{}]",
            row.n, row.median, row.centered, row.exact_median, ex.join(" ")
        );
    }
    println!("centred range {:.3}, monotone {}", r.centered.max - r.centered.min, r.monotone);
    Ok(())
}
