use std::path::PathBuf;
use std::process::ExitCode;

use brwlab::cli::{self, ExperimentConfig, ExperimentKind, LawBlock};
use brwlab::simulate::PruneRule;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "brwlab", version, about = "Branching random walks in the boundary case")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate a lattice law to the boundary case and print it as a config fragment.
    Calibrate {
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        values: Vec<i64>,
        #[arg(long, default_value_t = 2)]
        arity: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Simulate replicates and summarise the last generation.
    Simulate(Common),
    /// Check the spinal decomposition and many-to-one identities.
    SpineCheck {
        #[arg(long, default_value = "default")]
        battery: String,
        #[command(flatten)]
        common: Common,
    },
    /// Ballot and excursion probabilities of the spine walk.
    Walks {
        /// ballot | upper | lower-above | lower-below | enriched
        #[arg(long, default_value = "ballot")]
        event: String,
        /// dp | mc
        #[arg(long)]
        mode: Option<String>,
        /// zero | log:LAMBDA
        #[arg(long)]
        curve: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Left tail of the maximum.
    Tail {
        /// Skip the prune-doubling rerun.
        #[arg(long)]
        no_certify: bool,
        #[command(flatten)]
        common: Common,
    },
    /// First crossings of the curve f_n + y.
    Frontier {
        #[arg(long)]
        margin: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Truncated counts Y_n(y, z) and their pair counts.
    Counts {
        #[arg(long)]
        depth: Option<f64>,
        /// child-minus-parent | parent-minus-child
        #[arg(long)]
        xi_sign: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Genealogy of particles near the maximum.
    Genealogy {
        /// reduced | direct
        #[arg(long)]
        engine: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Survival-conditioned medians and exceedance of M_n - m_n.
    Concentration(Common),
    /// Exact expectations by enumeration.
    Oracle {
        /// wn | derivative | tail:Y | count:ge:X | count:le:X
        #[arg(long, default_value = "wn")]
        functional: String,
        /// plain | size-biased | spine
        #[arg(long)]
        measure: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Run the acceptance suite.
    Accept {
        #[arg(long, default_value = "desk")]
        suite: String,
        /// Comma list of criterion numbers (all by default).
        #[arg(long)]
        criteria: Option<String>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Default)]
struct Common {
    /// Experiment config file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Law name (lattice3, binary-gaussian, ...) or a config file with a law block.
    #[arg(long)]
    law: Option<String>,
    /// Extra law parameter, `key=value`.
    #[arg(long = "law-param")]
    law_param: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    y: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    z: Vec<f64>,
    #[arg(long = "R", value_delimiter = ',')]
    r: Vec<usize>,
    #[arg(long = "H")]
    h: Option<f64>,
    #[arg(long)]
    reps: Option<u64>,
    #[arg(long)]
    prune: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Any config entry, `key=value` (e.g. `tol.band=20`).
    #[arg(long)]
    set: Vec<String>,
    /// Print the resolved config and exit.
    #[arg(long)]
    print_config: bool,
}

fn key_value(s: &str) -> brwlab::Result<(String, String)> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| brwlab::Error::InvalidArgument(format!("`{s}` is not key=value")))
}

fn law_block(arg: &str) -> brwlab::Result<LawBlock> {
    let path = PathBuf::from(arg);
    if !path.is_file() {
        return Ok(LawBlock::new(arg));
    }
    let text = std::fs::read_to_string(&path)?;
    let mut block: Option<LawBlock> = None;
    let mut params = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let (k, v) = key_value(line)?;
        if k == "law.kind" {
            block = Some(LawBlock::new(&v));
        } else if let Some(p) = k.strip_prefix("law.params.") {
            params.push((p.to_string(), v));
        }
    }
    let mut block = block.ok_or_else(|| brwlab::Error::Config {
        key: "law.kind".into(),
        message: format!("missing in `{}`", path.display()),
    })?;
    block.params.extend(params);
    Ok(block)
}

fn build(kind: ExperimentKind, c: Common, options: Vec<(&str, Option<String>)>) -> brwlab::Result<(ExperimentConfig, bool)> {
    let mut cfg = match &c.config {
        Some(p) => {
            let mut cfg = ExperimentConfig::from_text(&std::fs::read_to_string(p)?)?;
            cfg.kind = kind;
            cfg
        }
        None => ExperimentConfig::new(kind),
    };
    if let Some(l) = &c.law {
        cfg.law = Some(law_block(l)?);
    }
    for p in &c.law_param {
        let (k, v) = key_value(p)?;
        let law = cfg.law.as_mut().ok_or_else(|| brwlab::Error::Config {
            key: "law.kind".into(),
            message: "--law-param needs --law".into(),
        })?;
        law.params.insert(k, v);
    }
    if !c.n.is_empty() {
        cfg.n = c.n;
    }
    if !c.y.is_empty() {
        cfg.y = c.y;
    }
    if !c.z.is_empty() {
        cfg.z = c.z;
    }
    if !c.r.is_empty() {
        cfg.r = c.r;
    }
    cfg.h = c.h.or(cfg.h);
    cfg.reps = c.reps.unwrap_or(cfg.reps);
    cfg.seed = c.seed.unwrap_or(cfg.seed);
    cfg.workers = c.workers.or(cfg.workers);
    cfg.out = c.out.or(cfg.out);
    if let Some(p) = &c.prune {
        cfg.prune = PruneRule::parse(p)?;
    }
    for (k, v) in options {
        if let Some(v) = v {
            cfg.options.insert(k.into(), v);
        }
    }
    if !c.set.is_empty() {
        let mut text = cfg.to_text();
        for s in &c.set {
            let (k, v) = key_value(s)?;
            text = text
                .lines()
                .filter(|l| l.split_once('=').map(|(a, _)| a.trim()) != Some(k.as_str()))
                .map(|l| format!("{l}\n"))
                .collect();
            text.push_str(&format!("{k} = {v}\n"));
        }
        cfg = ExperimentConfig::from_text(&text)?;
    }
    Ok((cfg, c.print_config))
}

fn resolve(command: Command) -> brwlab::Result<(ExperimentConfig, bool)> {
    use ExperimentKind as K;
    match command {
        Command::Calibrate { values, arity, common } => {
            let list = values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
            build(K::Calibrate, common, vec![("values", Some(list)), ("arity", Some(arity.to_string()))])
        }
        Command::Simulate(common) => build(K::Simulate, common, vec![]),
        Command::SpineCheck { battery, common } => build(K::SpineCheck, common, vec![("battery", Some(battery))]),
        Command::Walks { event, mode, curve, common } => build(
            K::Walks,
            common,
            vec![("event", Some(event)), ("mode", mode), ("curve", curve)],
        ),
        Command::Tail { no_certify, common } => build(
            K::Tail,
            common,
            vec![("certify", no_certify.then(|| "false".to_string()))],
        ),
        Command::Frontier { margin, common } => build(
            K::Frontier,
            common,
            vec![("margin", margin.map(brwlab::format::real))],
        ),
        Command::Counts { depth, xi_sign, common } => build(
            K::Counts,
            common,
            vec![("depth", depth.map(brwlab::format::real)), ("xi_sign", xi_sign)],
        ),
        Command::Genealogy { engine, common } => build(K::Genealogy, common, vec![("engine", engine)]),
        Command::Concentration(common) => build(K::Concentration, common, vec![]),
        Command::Oracle { functional, measure, common } => build(
            K::Oracle,
            common,
            vec![("functional", Some(functional)), ("measure", measure)],
        ),
        Command::Accept { suite, criteria, common } => build(
            K::Accept,
            common,
            vec![("suite", Some(suite)), ("criteria", criteria)],
        ),
    }
}

fn main() -> ExitCode {
    let args = Cli::parse();
    let (cfg, print_config) = match resolve(args.command) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("brwlab: {e}");
            return ExitCode::from(1);
        }
    };
    if print_config {
        print!("{}", cfg.to_text());
        return ExitCode::SUCCESS;
    }
    match cli::execute(&cfg) {
        Ok((out, written)) => {
            match &written.payload {
                Some(p) => {
                    println!("{}", out.summary);
                    println!("wrote {}", p.display());
                    if let Some(m) = &written.manifest {
                        println!("wrote {}", m.display());
                    }
                }
                None => {
                    print!("{}", out.payload);
                    eprintln!("{}", out.summary);
                }
            }
            if out.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("brwlab: {e}");
            ExitCode::from(1)
        }
    }
}
