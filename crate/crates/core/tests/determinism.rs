use brwlab::estimate::{with_workers, SeedSource};
use brwlab::extremes::{tail_estimate, TailOptions};
use brwlab::laws::OffspringLaw;
use brwlab::simulate::{simulate_replicates, PruneRule};

#[test]
fn replicates_do_not_depend_on_worker_count() {
    let law = OffspringLaw::lattice_three_point();
    let seeds = SeedSource::new(5);
    let run = |w| with_workers(w, || simulate_replicates(&law, 12, 0.0, &PruneRule::window(10.0), 300, &seeds).unwrap());
    assert_eq!(run(1), run(4));
}

#[test]
fn tail_table_does_not_depend_on_worker_count() {
    let law = OffspringLaw::lattice_three_point();
    let seeds = SeedSource::new(9);
    let run = |w| {
        with_workers(w, || {
            tail_estimate(&law, &[16], &[0.0, 1.0], &PruneRule::window(10.0), 500, &seeds, TailOptions::default())
                .unwrap()
        })
    };
    let (a, b) = (run(1), run(3));
    assert_eq!(format!("{a:?}"), format!("{b:?}"));
}

#[test]
fn different_seeds_differ() {
    let law = OffspringLaw::binary_gaussian();
    let a = simulate_replicates(&law, 8, 0.0, &PruneRule::none(), 50, &SeedSource::new(1)).unwrap();
    let b = simulate_replicates(&law, 8, 0.0, &PruneRule::none(), 50, &SeedSource::new(2)).unwrap();
    assert_ne!(a, b);
}
