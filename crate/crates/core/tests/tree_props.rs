use brwlab::estimate::SeedSource;
use brwlab::extremes::{tree_counts, CountParams};
use brwlab::laws::{OffspringLaw, XiSign};
use brwlab::simulate::{grow, GrowOptions, PruneRule};
use brwlab::tree::MarkedTree;
use proptest::prelude::*;

fn random_tree(seed: u64, n: usize) -> MarkedTree {
    let law = OffspringLaw::lattice_three_point();
    let mut rng = SeedSource::new(seed).stream(0);
    let opts = GrowOptions {
        record_xi: true,
        ..GrowOptions::pruned(PruneRule::none())
    };
    grow(&law, n, 0.0, &opts, &mut rng).unwrap()
}

fn brute_mrca(t: &MarkedTree, u: brwlab::tree::NodeId, v: brwlab::tree::NodeId) -> Vec<u32> {
    let (a, b) = (t.label(u).unwrap(), t.label(v).unwrap());
    a.iter().zip(&b).take_while(|(x, y)| x == y).map(|(x, _)| *x).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn labels_round_trip(seed in any::<u64>(), n in 0usize..7) {
        let t = random_tree(seed, n);
        for u in t.nodes() {
            let l = t.label(u).unwrap();
            prop_assert_eq!(l.len(), t.generation(u).unwrap());
            prop_assert_eq!(t.node_by_label(&l), Some(u));
        }
    }

    #[test]
    fn mrca_is_longest_common_label_prefix(seed in any::<u64>(), n in 1usize..7) {
        let t = random_tree(seed, n);
        let gen: Vec<_> = t.generation_nodes(n).collect();
        for &u in gen.iter().take(12) {
            for &v in gen.iter().take(12) {
                let m = t.mrca(u, v).unwrap();
                prop_assert_eq!(t.label(m).unwrap(), brute_mrca(&t, u, v));
                prop_assert_eq!(m, t.mrca(v, u).unwrap());
            }
        }
    }

    #[test]
    fn pairing_identity(seed in any::<u64>(), n in 1usize..9, y in 0.0f64..4.0, z in 0.0f64..6.0, h in 0.0f64..4.0) {
        let t = random_tree(seed, n);
        let c = tree_counts(&t, n, &CountParams::new(y, z, h), XiSign::default()).unwrap();
        prop_assert!(c.pairing_holds(), "Y = {}, pairs = {:?}", c.count, c.pairs);
        prop_assert_eq!(c.pairs.len(), n);
    }

    #[test]
    fn path_positions_end_at_node(seed in any::<u64>(), n in 1usize..7) {
        let t = random_tree(seed, n);
        for u in t.generation_nodes(n) {
            let p = t.path_positions(u).unwrap();
            prop_assert_eq!(p.len(), n + 1);
            prop_assert_eq!(p[n], t.position(u).unwrap());
            prop_assert_eq!(p[0], 0.0);
        }
    }
}

#[test]
fn counts_grow_with_z() {
    let t = random_tree(7, 8);
    let mut last = 0;
    for z in [0.0, 0.5, 1.0, 2.0, 4.0, f64::INFINITY] {
        let c = tree_counts(&t, 8, &CountParams::new(3.0, z, 3.0), XiSign::default()).unwrap();
        assert!(c.count >= last);
        last = c.count;
    }
}
