use brwlab::laws::OffspringLaw;
use brwlab::oracle::{exact_expectation, many_to_one_exact, Measure};

#[test]
fn size_biased_mass_is_one() {
    let law = OffspringLaw::lattice_three_point();
    for n in 1..=3 {
        let m = exact_expectation(&law, n, 0.0, Measure::SizeBiased, |_| 1.0).unwrap();
        assert!((m - 1.0).abs() < 1e-12, "n={n}: {m}");
        let s = exact_expectation(&law, n, 0.0, Measure::Spine, |_| 1.0).unwrap();
        assert!((s - 1.0).abs() < 1e-12, "n={n}: {s}");
    }
}

#[test]
fn martingale_and_derivative_means() {
    let law = OffspringLaw::lattice_three_point();
    for n in 1..=3 {
        let w = exact_expectation(&law, n, 0.0, Measure::Plain, |t| t.additive_martingale(n)).unwrap();
        assert!((w - 1.0).abs() < 1e-12, "E[W_{n}] = {w}");
        let d = exact_expectation(&law, n, 0.0, Measure::Plain, |t| {
            t.generation_positions(n).iter().map(|v| v * v.exp()).sum()
        })
        .unwrap();
        assert!(d.abs() < 1e-12, "E[D_{n}] = {d}");
    }
}

#[test]
fn many_to_one_on_path_functionals() {
    let law = OffspringLaw::lattice_three_point();
    let fs: [fn(&[f64]) -> f64; 3] = [
        |p| p.iter().all(|v| *v >= -1.0) as u8 as f64,
        |p| p[p.len() - 1].max(-3.0),
        |p| p.iter().cloned().fold(f64::NEG_INFINITY, f64::max).sin(),
    ];
    for n in 1..=3 {
        for f in &fs {
            let (l, r) = many_to_one_exact(&law, n, 0.0, f).unwrap();
            assert!((l - r).abs() < 1e-10, "n={n}: {l} vs {r}");
        }
    }
}

#[test]
fn shifted_start_scales_plain_martingale() {
    let law = OffspringLaw::lattice_three_point();
    let x = 0.7;
    let w = exact_expectation(&law, 2, x, Measure::Plain, |t| t.additive_martingale(2)).unwrap();
    assert!((w - x.exp()).abs() < 1e-12);
}
