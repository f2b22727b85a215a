//! Build an experiment config in code, run it and write CSV plus manifest,
//! as the `brwlab` binary does.
use brwlab::cli::{execute, ExperimentConfig, ExperimentKind, LawBlock};
use brwlab::simulate::PruneRule;

fn main() -> brwlab::Result<()> {
    let mut c = ExperimentConfig::new(ExperimentKind::Simulate).with_law(LawBlock::new("lattice3"));
    c.n = vec![32];
    c.reps = 200;
    c.prune = PruneRule::window(20.0);
    c.seed = 42;
    let dir = std::env::temp_dir().join("brwlab-example");
    std::fs::create_dir_all(&dir)?;
    c.out = Some(dir.join("simulate.csv"));
    print!("{}", c.to_text());
    let (out, written) = execute(&c)?;
    println!("{}", out.summary);
    println!("wrote {:?} and {:?}", written.payload, written.manifest);
    Ok(())
}
