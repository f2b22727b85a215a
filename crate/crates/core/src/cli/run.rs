//! Experiment dispatch: one function per experiment kind, each producing a
//! payload (CSV or JSON) and, for sampled experiments, a manifest.

use std::collections::BTreeMap;

use serde::Serialize;

use super::config::{parse_list, parse_xi_sign, ExperimentConfig, ExperimentKind, LawBlock};
use super::output::{to_json, BandEntry, Manifest, Table};
use crate::estimate::{Band, SeedSource};
use crate::extremes::{self, CountOptions, CountParams, GenealogyEngine, TailOptions};
use crate::format::real;
use crate::laws::{calibrate_lattice, verify_boundary, OffspringLaw, VerifyMode, XiSign};
use crate::oracle::{exact_expectation, many_to_one_exact, Measure};
use crate::simulate::{simulate_replicates, DEFAULT_CAP};
use crate::spine::{default_path_battery, many_to_one_pair, size_biased_pair, tree_battery, PairEstimate};
use crate::tree::MarkedTree;
use crate::walks::{self, Curve, EnrichedWalkLaw, HSettings, Mode, Orientation};
use crate::{Error, Result};

/// What a run produced, before anything is written.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub kind: ExperimentKind,
    /// CSV or JSON text for `out.path` (or stdout).
    pub payload: String,
    pub manifest: Option<Manifest>,
    /// One-line human summary.
    pub summary: String,
    /// False when the experiment reports a failed check (accept, spine-check).
    pub passed: bool,
}

impl RunOutput {
    fn new(kind: ExperimentKind, payload: String, manifest: Option<Manifest>, summary: String) -> Self {
        RunOutput {
            kind,
            payload,
            manifest,
            summary,
            passed: true,
        }
    }
}

/// Run the experiment described by a validated config on the current
/// thread pool.
pub fn run(c: &ExperimentConfig) -> Result<RunOutput> {
    c.validate()?;
    match c.kind {
        ExperimentKind::Calibrate => calibrate(c),
        ExperimentKind::Simulate => simulate(c),
        ExperimentKind::SpineCheck => spine_check(c),
        ExperimentKind::Walks => walks_table(c),
        ExperimentKind::Tail => tail(c),
        ExperimentKind::Frontier => frontier(c),
        ExperimentKind::Counts => counts(c),
        ExperimentKind::Genealogy => genealogy(c),
        ExperimentKind::Concentration => concentration(c),
        ExperimentKind::Oracle => oracle(c),
        ExperimentKind::Accept => accept(c),
    }
}

fn law_of(c: &ExperimentConfig) -> Result<OffspringLaw> {
    c.law
        .as_ref()
        .ok_or_else(|| Error::Config {
            key: "law.kind".into(),
            message: "missing law block".into(),
        })?
        .build()
}

fn xi_sign(c: &ExperimentConfig) -> Result<XiSign> {
    c.option("xi_sign").map_or(Ok(XiSign::default()), parse_xi_sign)
}

fn ys_or(c: &ExperimentConfig, default: &[f64]) -> Vec<f64> {
    if c.y.is_empty() {
        default.to_vec()
    } else {
        c.y.clone()
    }
}

fn single_n(c: &ExperimentConfig) -> Result<usize> {
    match c.n.as_slice() {
        [n] => Ok(*n),
        _ => Err(Error::Config {
            key: "grid.n".into(),
            message: format!("{} takes a single n", c.kind),
        }),
    }
}

fn results<T: Serialize>(v: &T) -> Result<serde_json::Value> {
    serde_json::to_value(v).map_err(|e| Error::Io(format!("json: {e}")))
}

fn calibrate(c: &ExperimentConfig) -> Result<RunOutput> {
    let values: Vec<i64> = parse_list("option.values", c.option("values").unwrap_or(""))?;
    let arity: usize = match c.option("arity") {
        Some(a) => a.parse().map_err(|_| Error::Config {
            key: "option.arity".into(),
            message: format!("`{a}` is not an integer"),
        })?,
        None => 2,
    };
    let law = calibrate_lattice(&values, arity)?;
    let report = verify_boundary(&law, VerifyMode::Exact, 1e-10)?;
    let mut text = String::new();
    for (k, v) in law.config_fragment() {
        text.push_str(&format!("{k} = {v}\n"));
    }
    text.push_str(&format!(
        "# E sum e^V = {}, E sum V e^V = {}, sigma^2 = {}\n",
        real(report.mean_exp.value),
        real(report.mean_lin.value),
        real(report.sigma2.value)
    ));
    let summary = format!("calibrated lattice law on {values:?} with arity {arity}");
    Ok(RunOutput::new(c.kind, text, None, summary))
}

fn simulate(c: &ExperimentConfig) -> Result<RunOutput> {
    let law = law_of(c)?;
    let n = single_n(c)?;
    let rows = simulate_replicates(&law, n, 0.0, &c.prune, c.reps, &SeedSource::new(c.seed))
        .map_err(|e| e.in_cell(format!("n={n}")))?;
    let mut t = Table::new(&["replicate", "survived", "M_n", "W_n", "population", "pruned_flag"]);
    for r in &rows {
        t.push(vec![
            r.replicate.into(),
            r.survived.into(),
            r.max.into(),
            r.martingale.into(),
            r.population.into(),
            r.pruned.into(),
        ]);
    }
    let survived = rows.iter().filter(|r| r.survived).count();
    let mut m = Manifest::new(c);
    m.cell(0, &[("n", n.to_string()), ("rows", format!("0..{}", rows.len()))], c.reps);
    m.results = serde_json::json!({ "survivors": survived });
    let summary = format!("{survived} of {} replicates survived to n = {n}", c.reps);
    Ok(RunOutput::new(c.kind, t.render(), Some(m), summary))
}

#[derive(Debug, Clone, Serialize)]
struct IdentityRecord {
    identity: String,
    functional: String,
    method: String,
    lhs: f64,
    lhs_se: f64,
    rhs: f64,
    rhs_se: f64,
    combined_se: f64,
    pass: bool,
}

#[derive(Debug, Clone, Serialize)]
struct SpineCheckReport {
    law: BTreeMap<String, String>,
    n: usize,
    reps: u64,
    seed: u64,
    se_limit: f64,
    exact_tolerance: f64,
    records: Vec<IdentityRecord>,
    pass: bool,
}

fn mc_records(identity: &str, pairs: Vec<PairEstimate>, k: f64) -> Vec<IdentityRecord> {
    pairs
        .into_iter()
        .map(|p| IdentityRecord {
            identity: identity.into(),
            pass: p.agrees(k),
            functional: p.name,
            method: "monte-carlo".into(),
            lhs: p.lhs.value,
            lhs_se: p.lhs.std_error,
            rhs: p.rhs.value,
            rhs_se: p.rhs.std_error,
            combined_se: p.lhs.combined_se(&p.rhs),
        })
        .collect()
}

fn exact_record(identity: &str, functional: String, lhs: f64, rhs: f64, tol: f64) -> IdentityRecord {
    IdentityRecord {
        identity: identity.into(),
        functional,
        method: "exact".into(),
        lhs,
        lhs_se: 0.0,
        rhs,
        rhs_se: 0.0,
        combined_se: 0.0,
        pass: (lhs - rhs).abs() <= tol,
    }
}

fn spine_check(c: &ExperimentConfig) -> Result<RunOutput> {
    let law = law_of(c)?;
    let n = single_n(c)?;
    let battery = c.option("battery").unwrap_or("default");
    let (paths, trees) = match battery {
        "default" => (true, true),
        "path" => (true, false),
        "tree" => (false, true),
        other => {
            return Err(Error::Config {
                key: "option.battery".into(),
                message: format!("`{other}` (default | path | tree)"),
            })
        }
    };
    let k = c.tolerance("se", 4.0);
    let tol = c.tolerance("exact", 1e-10);
    let seeds = SeedSource::new(c.seed);
    let mut records = Vec::new();
    if paths {
        let fs = default_path_battery();
        let pairs = many_to_one_pair(&law, n, 0.0, &fs, &c.prune, c.reps, &seeds.child(1))?;
        records.extend(mc_records("many-to-one", pairs, k));
        if law.is_enumerable() && n <= 3 {
            for f in &fs {
                let (l, r) = many_to_one_exact(&law, n, 0.0, |p| f.eval_path(p))?;
                records.push(exact_record("many-to-one", f.name(), l, r, tol));
            }
        }
    }
    if trees {
        let fs = tree_battery();
        let pairs = size_biased_pair(&law, n, &fs, c.reps, &seeds.child(2))?;
        records.extend(mc_records("size-biased", pairs, k));
        if law.is_enumerable() && n <= 3 {
            for f in &fs {
                let eval = |t: &MarkedTree| f.eval(t, n);
                let l = exact_expectation(&law, n, 0.0, Measure::SizeBiased, eval)?;
                let r = exact_expectation(&law, n, 0.0, Measure::Spine, eval)?;
                records.push(exact_record("size-biased", f.name(), l, r, tol));
            }
        }
    }
    let pass = records.iter().all(|r| r.pass);
    let failed = records.iter().filter(|r| !r.pass).count();
    let report = SpineCheckReport {
        law: law.config_fragment().into_iter().collect(),
        n,
        reps: c.reps,
        seed: c.seed,
        se_limit: k,
        exact_tolerance: tol,
        records,
        pass,
    };
    let mut m = Manifest::new(c);
    m.cell(0, &[("n", n.to_string())], c.reps);
    let summary = format!(
        "{} identities checked at n = {n}, {failed} failed",
        report.records.len()
    );
    let mut out = RunOutput::new(c.kind, to_json(&report)?, Some(m), summary);
    out.passed = pass;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum WalkKind {
    Ballot,
    Upper,
    Lower(Orientation),
    Enriched,
}

pub(crate) fn parse_walk_event(s: &str) -> Result<WalkKind> {
    match s {
        "ballot" => Ok(WalkKind::Ballot),
        "upper" => Ok(WalkKind::Upper),
        "lower-above" => Ok(WalkKind::Lower(Orientation::Above)),
        "lower-below" | "lower" => Ok(WalkKind::Lower(Orientation::Below)),
        "enriched" => Ok(WalkKind::Enriched),
        other => Err(Error::Config {
            key: "option.event".into(),
            message: format!("`{other}` (ballot | upper | lower-above | lower-below | enriched)"),
        }),
    }
}

fn walk_mode(c: &ExperimentConfig, walk: &EnrichedWalkLaw) -> Result<Mode> {
    match c.option("mode") {
        None if walk.is_lattice() => Ok(Mode::Dp),
        None => Ok(Mode::Mc { reps: c.reps }),
        Some("dp") => Ok(Mode::Dp),
        Some("mc") => Ok(Mode::Mc { reps: c.reps }),
        Some(other) => Err(Error::Config {
            key: "option.mode".into(),
            message: format!("`{other}` (dp | mc)"),
        }),
    }
}

/// `grid.h` if set, otherwise the calibrated endpoint window.
fn window_h(
    c: &ExperimentConfig,
    walk: &EnrichedWalkLaw,
    mode: Mode,
    seeds: &SeedSource,
) -> Result<(f64, Option<walks::HCalibration>)> {
    match c.h {
        Some(h) => Ok((h, None)),
        None => {
            let cal = walks::calibrate_h(walk, &HSettings::default(), mode, seeds)?;
            Ok((cal.h, Some(cal)))
        }
    }
}

fn walks_table(c: &ExperimentConfig) -> Result<RunOutput> {
    let law = law_of(c)?;
    let event = parse_walk_event(c.option("event").unwrap_or("ballot"))?;
    let walk = EnrichedWalkLaw::from_brw(&law, xi_sign(c)?)?;
    let mode = walk_mode(c, &walk)?;
    let curve: Curve = match c.option("curve") {
        Some(s) => s.parse()?,
        None if event == WalkKind::Ballot => Curve::Zero,
        None => Curve::LogBoundary { lambda: 1.5 },
    };
    let ys = ys_or(c, &[0.0, 1.0, 2.0]);
    let seeds = SeedSource::new(c.seed);
    let mut m = Manifest::new(c);
    let mut t = Table::new(&["event", "n", "y", "raw_p", "normalized", "z", "h", "raw_se", "normalized_se"]);
    let push = |t: &mut Table, m: &mut Manifest, event: &str, n: usize, y: f64, z: f64, h: f64, raw: crate::estimate::Estimate, norm: crate::estimate::Estimate| {
        let row = t.rows.len();
        t.push(vec![
            event.into(),
            n.into(),
            y.into(),
            raw.value.into(),
            norm.value.into(),
            z.into(),
            h.into(),
            raw.std_error.into(),
            norm.std_error.into(),
        ]);
        m.cell(
            row,
            &[("event", event.to_string()), ("n", n.to_string()), ("y", real(y)), ("z", real(z)), ("h", real(h))],
            raw.reps,
        );
    };
    let mut normalized = Vec::new();
    match event {
        WalkKind::Ballot => {
            for r in walks::ballot_scaling(&walk, &curve, &c.n, &ys, mode, &seeds)? {
                normalized.push(r.normalized.value);
                push(&mut t, &mut m, &r.event, r.n, r.y, r.z, r.h, r.raw, r.normalized);
            }
        }
        WalkKind::Upper => {
            let zs = if c.z.is_empty() { vec![1.0, 2.0, 4.0] } else { c.z.clone() };
            let windows: Vec<(f64, f64)> = zs.iter().map(|&z| (z, c.h.unwrap_or(z))).collect();
            for r in walks::excursion_upper_scaling(&walk, &curve, &c.n, &ys, &windows, mode, &seeds)? {
                normalized.push(r.normalized.value);
                push(&mut t, &mut m, &r.event, r.n, r.y, r.z, r.h, r.raw, r.normalized);
            }
        }
        WalkKind::Lower(o) => {
            let (h, cal) = window_h(c, &walk, mode, &seeds.child(99))?;
            m.h = Some(h);
            if let Some(cal) = cal {
                m.results = results(&cal)?;
            }
            for r in walks::excursion_lower_scaling(&walk, &curve, &c.n, &ys, h, o, mode, &seeds)? {
                normalized.push(r.normalized.value);
                push(&mut t, &mut m, &r.event, r.n, r.y, r.z, r.h, r.raw, r.normalized);
            }
        }
        WalkKind::Enriched => {
            let (h, cal) = window_h(c, &walk, mode, &seeds.child(99))?;
            m.h = Some(h);
            if let Some(cal) = cal {
                m.results = results(&cal)?;
            }
            for r in walks::enriched_excursion(&walk, &curve, &c.n, &ys, h, mode, &seeds)? {
                normalized.push(r.excursion_normalized.value);
                push(&mut t, &mut m, "enriched-excursion", r.n, r.y, 0.0, h, r.excursion, r.excursion_normalized);
                push(&mut t, &mut m, "ballot-spine", r.n, r.y, 0.0, 0.0, r.ballot_spine, r.ballot_spine_normalized);
            }
        }
    }
    let band = Band::of(normalized);
    m.bands.insert("normalized".into(), BandEntry::of(band, Some(c.tolerance("band", 10.0))));
    let summary = format!("{} cells, normalized band ratio {}", t.rows.len(), real(band.ratio()));
    Ok(RunOutput::new(c.kind, t.render(), Some(m), summary))
}

fn tail(c: &ExperimentConfig) -> Result<RunOutput> {
    let law = law_of(c)?;
    let ys = ys_or(c, &[0.0, 1.0, 2.0]);
    let opts = TailOptions {
        certify: c.option_bool("certify", true)?,
        exact: c.option_bool("exact", true)?,
    };
    let table = extremes::tail_estimate(&law, &c.n, &ys, &c.prune, c.reps, &SeedSource::new(c.seed), opts)?;
    let mut t = Table::new(&[
        "n", "y", "probability", "se", "normalized", "normalized_se", "doubled", "shift_se", "exact",
    ]);
    let mut m = Manifest::new(c);
    for cell in &table.cells {
        m.cell(t.rows.len(), &[("n", cell.n.to_string()), ("y", real(cell.y))], table.reps);
        t.push(vec![
            cell.n.into(),
            cell.y.into(),
            cell.probability.value.into(),
            cell.probability.std_error.into(),
            cell.normalized.value.into(),
            cell.normalized.std_error.into(),
            cell.doubled.map(|d| d.value).into(),
            cell.shift_se.into(),
            cell.exact.into(),
        ]);
    }
    m.bands
        .insert("tail r(n,y)".into(), BandEntry::of(table.band, Some(c.tolerance("band", 20.0))));
    m.certificates.extend(table.certificate.clone());
    let summary = format!(
        "{} cells, band ratio {}, doubling {}",
        table.cells.len(),
        real(table.band.ratio()),
        match &table.certificate {
            Some(cert) if cert.pass => "passed",
            Some(_) => "FAILED",
            None => "not run",
        }
    );
    m.results = results(&table)?;
    Ok(RunOutput::new(c.kind, t.render(), Some(m), summary))
}

fn frontier(c: &ExperimentConfig) -> Result<RunOutput> {
    let law = law_of(c)?;
    let ys = ys_or(c, &[0.0, 2.0, 4.0, 6.0]);
    let margin = c.option_f64("margin")?.unwrap_or(40.0);
    let prune = (!c.prune.is_none()).then_some(&c.prune);
    let seeds = SeedSource::new(c.seed);
    let mut t = Table::new(&[
        "n",
        "y",
        "probability",
        "se",
        "normalized",
        "normalized_se",
        "first_crossings",
        "first_crossings_se",
        "exact_probability",
        "exact_first_crossings",
    ]);
    let mut m = Manifest::new(c);
    let mut reports = Vec::new();
    for (ni, &n) in c.n.iter().enumerate() {
        for (yi, &y) in ys.iter().enumerate() {
            let cell_seeds = seeds.child(ni as u64).child(yi as u64);
            let r = extremes::frontier_crossing(&law, n, y, prune, margin, c.reps, &cell_seeds)
                .map_err(|e| e.in_cell(format!("n={n}, y={}", real(y))))?;
            m.cell(t.rows.len(), &[("n", n.to_string()), ("y", real(y))], c.reps);
            t.push(vec![
                n.into(),
                y.into(),
                r.probability.value.into(),
                r.probability.std_error.into(),
                r.normalized.value.into(),
                r.normalized.std_error.into(),
                r.mean_first_crossings.value.into(),
                r.mean_first_crossings.std_error.into(),
                r.exact.map(|e| e.probability).into(),
                r.exact.map(|e| e.mean_first_crossings).into(),
            ]);
            reports.push(r);
        }
    }
    let band = Band::of(reports.iter().map(|r| r.normalized.value));
    m.bands
        .insert("frontier normalized".into(), BandEntry::of(band, Some(c.tolerance("band", 20.0))));
    m.results = results(&reports)?;
    let summary = format!("{} cells, normalized band ratio {}", reports.len(), real(band.ratio()));
    Ok(RunOutput::new(c.kind, t.render(), Some(m), summary))
}

fn counts(c: &ExperimentConfig) -> Result<RunOutput> {
    let law = law_of(c)?;
    let sign = xi_sign(c)?;
    let ys = ys_or(c, &[0.0, 1.0, 2.0]);
    let seeds = SeedSource::new(c.seed);
    let walk = EnrichedWalkLaw::from_brw(&law, sign)?;
    let mode = if walk.is_lattice() {
        Mode::Dp
    } else {
        Mode::Mc { reps: c.reps.max(10_000) }
    };
    let (h, cal) = window_h(c, &walk, mode, &seeds.child(99))?;
    let mut extra = serde_json::Map::new();
    if let Some(cal) = &cal {
        extra.insert("h_calibration".into(), results(cal)?);
    }
    let zs = if c.z.is_empty() {
        let threshold = c.tolerance("z_threshold", 0.5);
        let sweep = extremes::sweep_z(&law, &c.n, &ys, h, &[1.0, 2.0, 4.0, 8.0], threshold, sign)?;
        let z = sweep.chosen.ok_or_else(|| {
            Error::CalibrationFailed(format!("no Z in {{1,2,4,8}} reaches the ratio threshold {threshold}"))
        })?;
        extra.insert("z_sweep".into(), results(&sweep)?);
        vec![z]
    } else {
        c.z.clone()
    };
    let opts = CountOptions {
        depth: c.option_f64("depth")?,
        cap: c.option_f64("cap")?.map_or(DEFAULT_CAP, |v| v as usize),
        xi_sign: sign,
    };
    let mut t = Table::new(&[
        "n",
        "y",
        "z",
        "h",
        "mean",
        "mean_se",
        "second_moment",
        "second_moment_se",
        "second_moment_ratio",
        "normalized_mean",
        "positive",
        "spine_mean",
        "identity_failures",
    ]);
    let mut m = Manifest::new(c);
    m.h = Some(h);
    m.z = (zs.len() == 1).then(|| zs[0]);
    let mut reports = Vec::new();
    let mut i = 0u64;
    for &n in &c.n {
        for &y in &ys {
            for &z in &zs {
                let p = CountParams::new(y, z, h);
                let cell = format!("n={n}, y={}, z={}", real(y), real(z));
                let r = extremes::truncated_counts(&law, n, &p, &opts, c.reps, &seeds.child(i))
                    .map_err(|e| e.in_cell(cell))?;
                i += 1;
                m.cell(
                    t.rows.len(),
                    &[("n", n.to_string()), ("y", real(y)), ("z", real(z))],
                    c.reps,
                );
                t.push(vec![
                    n.into(),
                    y.into(),
                    z.into(),
                    h.into(),
                    r.mean.value.into(),
                    r.mean.std_error.into(),
                    r.second_moment.value.into(),
                    r.second_moment.std_error.into(),
                    r.second_moment_ratio.into(),
                    r.normalized_mean.into(),
                    r.positive.value.into(),
                    r.spine_mean.into(),
                    r.identity_failures.into(),
                ]);
                reports.push(r);
            }
        }
    }
    let band = Band::of(reports.iter().map(|r| r.normalized_mean));
    m.bands.insert("counts normalized mean".into(), BandEntry::of(band, None));
    extra.insert("cells".into(), results(&reports)?);
    m.results = serde_json::Value::Object(extra);
    let failures: u64 = reports.iter().map(|r| r.identity_failures).sum();
    let summary = format!("{} cells with H = {}, pairing identity failures: {failures}", reports.len(), real(h));
    let mut out = RunOutput::new(c.kind, t.render(), Some(m), summary);
    out.passed = failures == 0;
    Ok(out)
}

fn genealogy(c: &ExperimentConfig) -> Result<RunOutput> {
    let law = law_of(c)?;
    let engine = match c.option("engine").unwrap_or("reduced") {
        "direct" => GenealogyEngine::Direct(c.prune.clone()),
        _ => GenealogyEngine::Reduced,
    };
    let seeds = SeedSource::new(c.seed);
    let mut t = Table::new(&["n", "R", "q", "se"]);
    let mut m = Manifest::new(c);
    let mut reports = Vec::new();
    for &n in &c.n {
        let rs: Vec<usize> = if c.r.is_empty() {
            (0..).map(|k| 1usize << k).take_while(|&r| r <= (n / 2).max(1)).collect()
        } else {
            c.r.clone()
        };
        let r = extremes::genealogy_stat(&law, n, &rs, &engine, c.reps, &seeds.child(n as u64))
            .map_err(|e| e.in_cell(format!("n={n}")))?;
        for row in &r.rows {
            m.cell(t.rows.len(), &[("n", n.to_string()), ("R", row.r.to_string())], c.reps);
            t.push(vec![n.into(), row.r.into(), row.q.value.into(), row.q.std_error.into()]);
        }
        reports.push(r);
    }
    let summary = reports
        .iter()
        .map(|r| format!("n = {}: monotone {}, paired decrease z = {}", r.n, r.monotone, real(r.decrease_z)))
        .collect::<Vec<_>>()
        .join("; ");
    m.results = results(&reports)?;
    Ok(RunOutput::new(c.kind, t.render(), Some(m), summary))
}

fn concentration(c: &ExperimentConfig) -> Result<RunOutput> {
    let law = law_of(c)?;
    let ys = ys_or(c, &[1.0, 2.0, 3.0]);
    let report = extremes::concentration(&law, &c.n, &ys, &c.prune, c.reps, &SeedSource::new(c.seed))?;
    let mut t = Table::new(&[
        "n",
        "y",
        "reps",
        "survivors",
        "median",
        "median_lo",
        "median_hi",
        "centered",
        "exceedance",
        "exceedance_se",
        "exact_median",
        "exact_exceedance",
    ]);
    let mut m = Manifest::new(c);
    for row in &report.rows {
        for (i, (y, e)) in row.exceedance.iter().enumerate() {
            m.cell(t.rows.len(), &[("n", row.n.to_string()), ("y", real(*y))], row.reps);
            t.push(vec![
                row.n.into(),
                (*y).into(),
                row.reps.into(),
                row.survivors.into(),
                row.median.into(),
                row.median_ci[0].into(),
                row.median_ci[1].into(),
                row.centered.into(),
                e.value.into(),
                e.std_error.into(),
                row.exact_median.into(),
                row.exact_exceedance.as_ref().map(|v| v[i]).into(),
            ]);
        }
    }
    let mut band = BandEntry::of(report.centered, None);
    band.limit = Some(c.tolerance("range", 3.0));
    band.pass = Some(report.centered.max - report.centered.min <= c.tolerance("range", 3.0));
    m.bands.insert("centered medians (range)".into(), band);
    m.results = results(&report)?;
    let summary = format!(
        "centered medians range {}, exceedance monotone {}",
        real(report.centered.max - report.centered.min),
        report.monotone
    );
    Ok(RunOutput::new(c.kind, t.render(), Some(m), summary))
}

/// Tree functional for `brwlab oracle`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OracleFunctional {
    /// `W_n`.
    Martingale,
    /// `sum V e^V`.
    Derivative,
    /// `1{M_n >= m_n + y}`.
    Tail(f64),
    /// Number of generation-`n` particles at or above `t`.
    CountAtLeast(f64),
    /// Number of generation-`n` particles at or below `t`.
    CountAtMost(f64),
}

impl OracleFunctional {
    pub fn eval(&self, t: &MarkedTree, n: usize) -> f64 {
        let gen = t.generation_positions(n);
        match *self {
            OracleFunctional::Martingale => t.additive_martingale(n),
            OracleFunctional::Derivative => gen.iter().map(|v| v * v.exp()).sum(),
            OracleFunctional::Tail(y) => (t.max_position(n) >= extremes::m_n(n) + y) as u8 as f64,
            OracleFunctional::CountAtLeast(x) => gen.iter().filter(|&&v| v >= x).count() as f64,
            OracleFunctional::CountAtMost(x) => gen.iter().filter(|&&v| v <= x).count() as f64,
        }
    }
}

/// `wn`, `derivative`, `tail:Y`, `count:ge:X` or `count:le:X`.
pub fn parse_functional(s: &str) -> Result<OracleFunctional> {
    let bad = || Error::Config {
        key: "option.functional".into(),
        message: format!("`{s}` (wn | derivative | tail:Y | count:ge:X | count:le:X)"),
    };
    let num = |t: &str| t.parse::<f64>().map_err(|_| bad());
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        ["wn"] => Ok(OracleFunctional::Martingale),
        ["derivative"] => Ok(OracleFunctional::Derivative),
        ["tail", y] => Ok(OracleFunctional::Tail(num(y)?)),
        ["count", "ge", x] => Ok(OracleFunctional::CountAtLeast(num(x)?)),
        ["count", "le", x] => Ok(OracleFunctional::CountAtMost(num(x)?)),
        _ => Err(bad()),
    }
}

#[derive(Debug, Clone, Serialize)]
struct OracleRow {
    n: usize,
    functional: String,
    measure: String,
    value: f64,
}

fn oracle(c: &ExperimentConfig) -> Result<RunOutput> {
    let law = law_of(c)?;
    let name = c.option("functional").unwrap_or("wn");
    let f = parse_functional(name)?;
    let (measure, mname) = match c.option("measure").unwrap_or("plain") {
        "plain" => (Measure::Plain, "plain"),
        "size-biased" => (Measure::SizeBiased, "size-biased"),
        "spine" => (Measure::Spine, "spine"),
        other => {
            return Err(Error::Config {
                key: "option.measure".into(),
                message: format!("`{other}` (plain | size-biased | spine)"),
            })
        }
    };
    let mut rows = Vec::new();
    for &n in &c.n {
        let value = exact_expectation(&law, n, 0.0, measure, |t| f.eval(t, n))
            .map_err(|e| e.in_cell(format!("n={n}")))?;
        rows.push(OracleRow {
            n,
            functional: name.into(),
            measure: mname.into(),
            value,
        });
    }
    let law_block: BTreeMap<String, String> = law.config_fragment().into_iter().collect();
    let payload = to_json(&serde_json::json!({ "law": law_block, "exact": rows }))?;
    let summary = rows
        .iter()
        .map(|r| format!("n = {}: {}", r.n, real(r.value)))
        .collect::<Vec<_>>()
        .join(", ");
    Ok(RunOutput::new(c.kind, payload, None, summary))
}

fn accept(c: &ExperimentConfig) -> Result<RunOutput> {
    let suite = c.option("suite").unwrap_or("desk");
    let suite = crate::acceptance::Suite::parse(suite)?;
    let ids: Vec<u32> = match c.option("criteria") {
        Some(list) => parse_list("option.criteria", list)?,
        None => crate::acceptance::ALL_CRITERIA.to_vec(),
    };
    let report = crate::acceptance::run_criteria(suite, c.seed, &ids, |k| eprintln!("{}", k.line()))?;
    let mut m = Manifest::new(c);
    for r in &report.criteria {
        for b in &r.bands {
            m.bands.insert(format!("criterion {} {}", r.id, b.0), b.1.clone());
        }
        m.certificates.extend(r.certificates.iter().cloned());
        if let Some(h) = r.h {
            m.h = Some(h);
        }
        if let Some(z) = r.z {
            m.z = Some(z);
        }
    }
    m.results = results(&report)?;
    let summary = report.lines().join("\n");
    let mut out = RunOutput::new(c.kind, to_json(&report)?, Some(m), summary);
    out.passed = report.passed();
    Ok(out)
}

/// Shorthand used by the binary and tests: config for `kind` on a named law.
pub fn config_for(kind: ExperimentKind, law: &str) -> ExperimentConfig {
    ExperimentConfig::new(kind).with_law(LawBlock::new(law))
}
