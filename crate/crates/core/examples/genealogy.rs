//! How far back two particles above m_n share an ancestor: q(R) over R.
use brwlab::estimate::SeedSource;
use brwlab::extremes::{genealogy_stat, GenealogyEngine};
use brwlab::laws::OffspringLaw;

fn main() -> brwlab::Result<()> {
    let law = OffspringLaw::lattice_three_point();
    let g = genealogy_stat(&law, 128, &[1, 2, 4, 8, 16, 32], &GenealogyEngine::Reduced, 4000, &SeedSource::new(6))?;
    for r in &g.rows {
        println!("R={:<3} q={:.4} +- {:.4}", r.r, r.q.value, r.q.std_error);
    }
    println!("monotone = {}, q(first) - q(last) = {:.2} SE", g.monotone, g.decrease_z);
    Ok(())
}
