//! Exact expectations by enumerating every tree of depth 3, and the exact
//! law of the maximum for large n.
use brwlab::laws::OffspringLaw;
use brwlab::oracle::max_law::MaxLaw;
use brwlab::oracle::{configuration_bound, exact_expectation, Measure};

fn main() -> brwlab::Result<()> {
    let law = OffspringLaw::lattice_three_point();
    let n = 3;
    println!("{} trees of depth {n}", configuration_bound(&law, n)?);
    let w = |t: &brwlab::tree::MarkedTree| t.additive_martingale(n);
    let max_ge0 = |t: &brwlab::tree::MarkedTree| (t.max_position(n) >= 0.0) as u8 as f64;
    println!("E W_n                 = {}", exact_expectation(&law, n, 0.0, Measure::Plain, w)?);
    println!("E[W_n 1{{M_n >= 0}}]   = {}", exact_expectation(&law, n, 0.0, Measure::SizeBiased, max_ge0)?);
    println!("spine P(M_n >= 0)     = {}", exact_expectation(&law, n, 0.0, Measure::Spine, max_ge0)?);
    let ml = MaxLaw::compute(&law, 1024)?;
    for k in [64, 256, 1024] {
        let m = -1.5 * (k as f64).ln();
        println!("n={k:<5} P(M_n >= m_n) = {:.6}, median M_n + 1.5 log n = {:.3}", ml.tail(k, m), ml.median(k) - m);
    }
    Ok(())
}
