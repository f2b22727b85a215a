use brwlab::laws::{OffspringLaw, XiSign};
use brwlab::walks::{
    dp_enriched, dp_exact, enumerate_enriched, enumerate_probability, Curve, EnrichedEvent, EnrichedWalkLaw,
    Orientation, WalkEvent,
};
use proptest::prelude::*;

fn law_from(weights: &[f64]) -> EnrichedWalkLaw {
    let total: f64 = weights.iter().sum();
    let steps: Vec<(i64, f64)> = weights
        .iter()
        .enumerate()
        .map(|(i, w)| (i as i64 - 2, w / total))
        .collect();
    EnrichedWalkLaw::lattice_steps("test", 0.5, &steps, 0.0).unwrap()
}

fn reflected(weights: &[f64]) -> Vec<f64> {
    weights.iter().rev().copied().collect()
}

fn curves() -> Vec<Curve> {
    vec![Curve::Zero, Curve::LogBoundary { lambda: 1.5 }, Curve::LogBoundary { lambda: -1.5 }]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn dp_matches_enumeration(
        w in prop::collection::vec(0.05f64..1.0, 5),
        n in 1usize..7,
        y in 0.0f64..2.0,
        z in 0.0f64..3.0,
        h in 0.1f64..2.0,
    ) {
        let law = law_from(&w);
        for curve in curves() {
            for e in [
                WalkEvent::Ballot { y },
                WalkEvent::ExcursionUpper { y, z, h },
                WalkEvent::ExcursionLower { y, window: h, orientation: Orientation::Above },
                WalkEvent::ExcursionLower { y, window: h, orientation: Orientation::Below },
            ] {
                let a = dp_exact(&law, &curve, n, &e).unwrap();
                let b = enumerate_probability(&law, &curve, n, &e).unwrap();
                prop_assert!((a - b).abs() <= 1e-12, "{e:?} {curve:?}: dp {a} vs brute {b}");
            }
        }
    }

    #[test]
    fn reflection_swaps_orientation(
        w in prop::collection::vec(0.05f64..1.0, 5),
        n in 1usize..40,
        y in 0.0f64..3.0,
        h in 0.1f64..3.0,
    ) {
        let law = law_from(&w);
        let mirror = law_from(&reflected(&w));
        for curve in curves() {
            let above = WalkEvent::ExcursionLower { y, window: h, orientation: Orientation::Above };
            let below = WalkEvent::ExcursionLower { y, window: h, orientation: Orientation::Below };
            let a = dp_exact(&law, &curve, n, &above).unwrap();
            let b = dp_exact(&mirror, &curve.negated(), n, &below).unwrap();
            prop_assert!((a - b).abs() <= 1e-12, "{curve:?}: {a} vs {b}");
        }
    }
}

#[test]
fn enriched_dp_matches_enumeration_on_brw_walk() {
    let law = EnrichedWalkLaw::from_brw(&OffspringLaw::lattice_three_point(), XiSign::default()).unwrap();
    let curve = Curve::LogBoundary { lambda: 1.5 };
    for n in 1..=6 {
        for y in [0.0, 1.0, 2.5] {
            for e in [EnrichedEvent::Excursion { y, window: 2.0 }, EnrichedEvent::BallotSpine { y }] {
                let a = dp_enriched(&law, &curve, n, &e).unwrap();
                let b = enumerate_enriched(&law, &curve, n, &e).unwrap();
                assert!((a - b).abs() <= 1e-12, "n={n} {e:?}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn ballot_probability_decreases_in_n() {
    let law = law_from(&[1.0, 2.0, 2.0, 2.0, 1.0]);
    let mut last = 1.0;
    for n in [1, 4, 16, 64, 256] {
        let p = dp_exact(&law, &Curve::Zero, n, &WalkEvent::Ballot { y: 1.0 }).unwrap();
        assert!(p > 0.0 && p <= last);
        last = p;
    }
}
