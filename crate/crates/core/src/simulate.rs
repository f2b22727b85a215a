//! Forward simulation of the branching random walk, with pruning.
//!
//! Two engines share one pruning vocabulary:
//! * [`grow`] builds the full genealogy as a [`MarkedTree`];
//! * [`sweep`] evolves only the current generation, either as a list of
//!   positions or, for lattice laws, as occupation counts per lattice site.
//!   Counts are `u128`, so fronts holding `e^40` particles stay cheap.

use std::fmt;

use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::estimate::{try_fold_replicates, KahanSum, SeedSource, SimRng};
use crate::format::real;
use crate::laws::{xi_of, OffspringLaw, XiSign};
use crate::tree::{MarkedTree, TreeBuilder};
use crate::{Error, Result};

/// Default hard cap on stored nodes per tree.
pub const DEFAULT_CAP: usize = 10_000_000;

/// Largest total count the occupation engine accepts.
const MAX_OCCUPATION: u128 = 1 << 120;

/// The curve `f_n(k) = (3/2) log((n-k+1)/(n+1))`.
pub fn log_boundary(n: usize, k: usize) -> f64 {
    1.5 * (((n - k.min(n) + 1) as f64) / ((n + 1) as f64)).ln()
}

/// Per-generation position bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Barrier {
    /// `intercept + slope * k`.
    Linear { slope: f64, intercept: f64 },
    /// `f_n(k) + y + offset` (offset is usually `-margin` or 0).
    Frontier { n: usize, y: f64, offset: f64 },
    /// Explicit values; generations past the table are unbounded.
    Table(Vec<f64>),
}

impl Barrier {
    pub fn at(&self, k: usize, unbounded: f64) -> f64 {
        match self {
            Barrier::Linear { slope, intercept } => intercept + slope * k as f64,
            Barrier::Frontier { n, y, offset } => {
                if k <= *n {
                    log_boundary(*n, k) + y + offset
                } else {
                    unbounded
                }
            }
            Barrier::Table(t) => t.get(k).copied().unwrap_or(unbounded),
        }
    }

    fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |t: &str| -> Result<f64> {
            t.parse::<f64>()
                .map_err(|_| Error::InvalidPrune(format!("`{t}` is not a number in `{s}`")))
        };
        match parts.as_slice() {
            ["linear", sl, ic] => Ok(Barrier::Linear {
                slope: num(sl)?,
                intercept: num(ic)?,
            }),
            ["linear", sl] => Ok(Barrier::Linear {
                slope: num(sl)?,
                intercept: 0.0,
            }),
            ["const", c] => Ok(Barrier::Linear {
                slope: 0.0,
                intercept: num(c)?,
            }),
            ["frontier", n, y, off] => Ok(Barrier::Frontier {
                n: num(n)? as usize,
                y: num(y)?,
                offset: num(off)?,
            }),
            _ => Err(Error::InvalidPrune(format!(
                "unknown barrier `{s}` (expected linear:S:I, const:C or frontier:N:Y:OFFSET)"
            ))),
        }
    }
}

impl fmt::Display for Barrier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Barrier::Linear { slope, intercept } => {
                write!(f, "linear:{}:{}", real(*slope), real(*intercept))
            }
            Barrier::Frontier { n, y, offset } => {
                write!(f, "frontier:{n}:{}:{}", real(*y), real(*offset))
            }
            Barrier::Table(t) => write!(f, "table[{}]", t.len()),
        }
    }
}

/// Population control. Components combine; an empty rule keeps everything.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PruneRule {
    /// Keep at most this many particles per generation (the highest).
    pub beam: Option<u64>,
    /// Drop particles more than this far below the generation maximum.
    pub window: Option<f64>,
    /// Drop particles strictly below this bound.
    pub barrier: Option<Barrier>,
    /// Drop particles strictly above this bound.
    pub ceiling: Option<Barrier>,
}

impl PruneRule {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn beam(k: u64) -> Self {
        PruneRule {
            beam: Some(k),
            ..Self::default()
        }
    }

    pub fn window(delta: f64) -> Self {
        PruneRule {
            window: Some(delta),
            ..Self::default()
        }
    }

    pub fn barrier(b: Barrier) -> Self {
        PruneRule {
            barrier: Some(b),
            ..Self::default()
        }
    }

    pub fn with_beam(mut self, k: u64) -> Self {
        self.beam = Some(k);
        self
    }

    pub fn with_window(mut self, delta: f64) -> Self {
        self.window = Some(delta);
        self
    }

    pub fn with_barrier(mut self, b: Barrier) -> Self {
        self.barrier = Some(b);
        self
    }

    pub fn with_ceiling(mut self, b: Barrier) -> Self {
        self.ceiling = Some(b);
        self
    }

    pub fn is_none(&self) -> bool {
        self.beam.is_none() && self.window.is_none() && self.barrier.is_none() && self.ceiling.is_none()
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam == Some(0) {
            return Err(Error::InvalidPrune("beam size K must be at least 1".into()));
        }
        if let Some(d) = self.window {
            if !(d > 0.0) {
                return Err(Error::InvalidPrune(format!("window depth {d} must be positive")));
            }
        }
        Ok(())
    }

    /// Beam and window doubled; barriers unchanged.
    pub fn doubled(&self) -> Self {
        PruneRule {
            beam: self.beam.map(|k| k * 2),
            window: self.window.map(|d| d * 2.0),
            ..self.clone()
        }
    }

    /// Parse `none` or a comma list of `beam:K`, `window:D`,
    /// `barrier:<curve>`, `ceiling:<curve>`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        let mut rule = PruneRule::default();
        if s.is_empty() || s == "none" {
            return Ok(rule);
        }
        for item in s.split(',') {
            let item = item.trim();
            let (head, rest) = item
                .split_once(':')
                .ok_or_else(|| Error::InvalidPrune(format!("`{item}` has no value")))?;
            match head {
                "beam" => {
                    let k: f64 = rest
                        .parse()
                        .map_err(|_| Error::InvalidPrune(format!("bad beam size `{rest}`")))?;
                    if !(k >= 1.0 && k.fract() == 0.0) {
                        return Err(Error::InvalidPrune(format!("beam size `{rest}` must be a positive integer")));
                    }
                    rule.beam = Some(k as u64);
                }
                "window" => {
                    rule.window = Some(
                        rest.parse()
                            .map_err(|_| Error::InvalidPrune(format!("bad window depth `{rest}`")))?,
                    )
                }
                "barrier" => rule.barrier = Some(Barrier::parse(rest)?),
                "ceiling" => rule.ceiling = Some(Barrier::parse(rest)?),
                other => return Err(Error::InvalidPrune(format!("unknown prune component `{other}`"))),
            }
        }
        rule.validate()?;
        Ok(rule)
    }
}

impl fmt::Display for PruneRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if let Some(k) = self.beam {
            parts.push(format!("beam:{k}"));
        }
        if let Some(d) = self.window {
            parts.push(format!("window:{}", real(d)));
        }
        if let Some(b) = &self.barrier {
            parts.push(format!("barrier:{b}"));
        }
        if let Some(b) = &self.ceiling {
            parts.push(format!("ceiling:{b}"));
        }
        if parts.is_empty() {
            write!(f, "none")
        } else {
            write!(f, "{}", parts.join(","))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrowOptions {
    pub prune: PruneRule,
    pub cap: usize,
    pub xi_sign: XiSign,
    /// Store `xi(u)` (computed from all children, before pruning).
    pub record_xi: bool,
}

impl Default for GrowOptions {
    fn default() -> Self {
        GrowOptions {
            prune: PruneRule::none(),
            cap: DEFAULT_CAP,
            xi_sign: XiSign::default(),
            record_xi: false,
        }
    }
}

impl GrowOptions {
    pub fn pruned(prune: PruneRule) -> Self {
        GrowOptions {
            prune,
            ..Self::default()
        }
    }
}

/// Indices of `pos` kept by `rule` at generation `k`.
pub(crate) fn select(rule: &PruneRule, k: usize, pos: &[f64]) -> Vec<usize> {
    let lo = rule
        .barrier
        .as_ref()
        .map_or(f64::NEG_INFINITY, |b| b.at(k, f64::NEG_INFINITY));
    let hi = rule
        .ceiling
        .as_ref()
        .map_or(f64::INFINITY, |b| b.at(k, f64::INFINITY));
    let mut keep: Vec<usize> = (0..pos.len()).filter(|&i| pos[i] >= lo && pos[i] <= hi).collect();
    if let Some(d) = rule.window {
        let mx = keep.iter().map(|&i| pos[i]).fold(f64::NEG_INFINITY, f64::max);
        keep.retain(|&i| pos[i] >= mx - d);
    }
    if let Some(b) = rule.beam {
        let b = b as usize;
        if keep.len() > b {
            // Highest first; ties resolved by breadth-first order.
            keep.sort_by(|&i, &j| pos[j].total_cmp(&pos[i]).then(i.cmp(&j)));
            keep.truncate(b);
            keep.sort_unstable();
        }
    }
    keep
}

/// Grow a tree to depth `n` from position `x`.
pub fn grow<R: Rng + ?Sized>(
    law: &OffspringLaw,
    n: usize,
    x: f64,
    opts: &GrowOptions,
    rng: &mut R,
) -> Result<MarkedTree> {
    grow_filtered(law, n, x, opts, rng, |_, _, _| true)
}

/// Like [`grow`], but a node whose `expand(generation, position, xi)` is
/// false keeps no children (its line is removed). `xi` is NaN unless
/// `opts.record_xi` is set.
pub fn grow_filtered<R, F>(
    law: &OffspringLaw,
    n: usize,
    x: f64,
    opts: &GrowOptions,
    rng: &mut R,
    expand: F,
) -> Result<MarkedTree>
where
    R: Rng + ?Sized,
    F: Fn(usize, f64, f64) -> bool,
{
    opts.prune.validate()?;
    let mut b = TreeBuilder::new(x);
    if opts.record_xi {
        b.record_xi();
    }
    let mut kids = Vec::new();
    let mut cand_pos: Vec<f64> = Vec::new();
    let mut cand_parent: Vec<usize> = Vec::new();
    for k in 0..n {
        let range = b.generation_range(k);
        if range.is_empty() {
            break;
        }
        cand_pos.clear();
        cand_parent.clear();
        for p in range.clone() {
            kids.clear();
            law.sample_children(rng, &mut kids);
            let pp = b.position(p);
            let xi = if opts.record_xi {
                let v = if kids.is_empty() {
                    f64::NEG_INFINITY
                } else {
                    let abs: Vec<f64> = kids.iter().map(|d| pp + d).collect();
                    xi_of(pp, &abs, opts.xi_sign)?
                };
                b.set_xi(p, v);
                v
            } else {
                f64::NAN
            };
            if let Some(&bad) = kids.iter().find(|v| !v.is_finite()) {
                return Err(Error::NonFinite(bad));
            }
            if !expand(k, pp, xi) {
                if !kids.is_empty() {
                    b.set_truncated(p, true);
                }
                continue;
            }
            for &d in &kids {
                cand_pos.push(pp + d);
                cand_parent.push(p);
            }
        }
        let keep = if opts.prune.is_none() {
            (0..cand_pos.len()).collect()
        } else {
            select(&opts.prune, k + 1, &cand_pos)
        };
        if b.len() + keep.len() > opts.cap {
            return Err(Error::PopulationOverflow {
                size: (b.len() + keep.len()) as u128,
                cap: opts.cap as u128,
            });
        }
        // Mark parents that lost a child.
        let mut kept_flag = vec![false; cand_pos.len()];
        for &i in &keep {
            kept_flag[i] = true;
        }
        for (i, &kf) in kept_flag.iter().enumerate() {
            if !kf {
                b.set_truncated(cand_parent[i], true);
            }
        }
        let mut j = 0;
        let mut block = Vec::new();
        while j < keep.len() {
            let p = cand_parent[keep[j]];
            block.clear();
            while j < keep.len() && cand_parent[keep[j]] == p {
                block.push(cand_pos[keep[j]]);
                j += 1;
            }
            b.add_children(p, &block);
        }
    }
    Ok(b.finish(n))
}

/// `M_n`, with `-inf` for an extinct generation.
pub fn max_displacement(tree: &MarkedTree, n: usize) -> f64 {
    tree.max_position(n)
}

/// Occupation counts on the lattice `base + span * (lo + i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Occupation {
    pub base: f64,
    pub span: f64,
    pub lo: i64,
    pub counts: Vec<u128>,
}

impl Occupation {
    pub fn site_position(&self, i: usize) -> f64 {
        self.base + self.span * (self.lo + i as i64) as f64
    }

    fn trim(&mut self) {
        let first = self.counts.iter().position(|&c| c > 0);
        match first {
            None => {
                self.counts.clear();
            }
            Some(f) => {
                let last = self.counts.iter().rposition(|&c| c > 0).expect("nonzero");
                self.counts.truncate(last + 1);
                self.counts.drain(..f);
                self.lo += f as i64;
            }
        }
    }
}

/// One generation of particles.
#[derive(Debug, Clone, PartialEq)]
pub enum Population {
    Particles(Vec<f64>),
    Lattice(Occupation),
}

impl Population {
    pub fn total(&self) -> u128 {
        match self {
            Population::Particles(p) => p.len() as u128,
            Population::Lattice(o) => o.counts.iter().sum(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }

    pub fn max(&self) -> f64 {
        match self {
            Population::Particles(p) => p.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Population::Lattice(o) => match o.counts.iter().rposition(|&c| c > 0) {
                Some(i) => o.site_position(i),
                None => f64::NEG_INFINITY,
            },
        }
    }

    /// Visit `(position, multiplicity)` pairs.
    pub fn for_each(&self, mut f: impl FnMut(f64, u128)) {
        match self {
            Population::Particles(p) => p.iter().for_each(|&x| f(x, 1)),
            Population::Lattice(o) => {
                for (i, &c) in o.counts.iter().enumerate() {
                    if c > 0 {
                        f(o.site_position(i), c);
                    }
                }
            }
        }
    }

    /// `sum g(V) over particles`, compensated.
    pub fn sum_of(&self, g: impl Fn(f64) -> f64) -> f64 {
        let mut s = KahanSum::default();
        self.for_each(|x, c| s.add(c as f64 * g(x)));
        s.value()
    }

    /// `W = sum e^V`.
    pub fn sum_exp(&self) -> f64 {
        self.sum_of(f64::exp)
    }

    pub fn count_at_least(&self, t: f64) -> u128 {
        let mut s = 0u128;
        self.for_each(|x, c| {
            if x >= t {
                s += c
            }
        });
        s
    }

    /// Remove particles with `V >= t`; returns how many were removed.
    pub fn remove_at_least(&mut self, t: f64) -> u128 {
        match self {
            Population::Particles(p) => {
                let before = p.len();
                p.retain(|&x| x < t);
                (before - p.len()) as u128
            }
            Population::Lattice(o) => {
                let mut removed = 0;
                for i in 0..o.counts.len() {
                    if o.site_position(i) >= t {
                        removed += o.counts[i];
                        o.counts[i] = 0;
                    }
                }
                o.trim();
                removed
            }
        }
    }

    /// Apply `rule` at generation `k`; returns whether anything was removed.
    pub fn prune(&mut self, rule: &PruneRule, k: usize) -> bool {
        if rule.is_none() {
            return false;
        }
        match self {
            Population::Particles(p) => {
                let keep = select(rule, k, p);
                let cut = keep.len() < p.len();
                if cut {
                    *p = keep.into_iter().map(|i| p[i]).collect();
                }
                cut
            }
            Population::Lattice(o) => {
                let mut cut = false;
                let lo = rule
                    .barrier
                    .as_ref()
                    .map_or(f64::NEG_INFINITY, |b| b.at(k, f64::NEG_INFINITY));
                let hi = rule
                    .ceiling
                    .as_ref()
                    .map_or(f64::INFINITY, |b| b.at(k, f64::INFINITY));
                for i in 0..o.counts.len() {
                    let x = o.site_position(i);
                    if o.counts[i] > 0 && (x < lo || x > hi) {
                        o.counts[i] = 0;
                        cut = true;
                    }
                }
                o.trim();
                if let Some(d) = rule.window {
                    if let Some(top) = o.counts.len().checked_sub(1) {
                        let floor = o.site_position(top) - d;
                        for i in 0..o.counts.len() {
                            if o.site_position(i) < floor && o.counts[i] > 0 {
                                o.counts[i] = 0;
                                cut = true;
                            }
                        }
                    }
                }
                if let Some(beam) = rule.beam {
                    let mut left = beam as u128;
                    for i in (0..o.counts.len()).rev() {
                        let c = o.counts[i];
                        if c <= left {
                            left -= c;
                        } else {
                            o.counts[i] = left;
                            left = 0;
                            cut = true;
                        }
                    }
                }
                o.trim();
                cut
            }
        }
    }
}

/// Draw Binomial(n, p) for counts that may exceed `u64`.
pub fn binomial_u128<R: Rng + ?Sized>(n: u128, p: f64, rng: &mut R) -> u128 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    if n <= u64::MAX as u128 {
        Binomial::new(n as u64, p).expect("valid binomial").sample(rng) as u128
    } else {
        // Beyond 1.8e19 trials the normal approximation is exact to
        // well below one part in 1e9.
        let nf = n as f64;
        let z: f64 = StandardNormal.sample(rng);
        let x = (nf * p + z * (nf * p * (1.0 - p)).sqrt()).round();
        (x.max(0.0) as u128).min(n)
    }
}

/// Multinomial split of `n` over `probs`, added into `out` through `sink`.
fn multinomial<R: Rng + ?Sized>(n: u128, probs: &[f64], rng: &mut R, mut sink: impl FnMut(usize, u128)) {
    let mut left = n;
    let mut rest = 1.0;
    for (j, &p) in probs.iter().enumerate() {
        if left == 0 {
            break;
        }
        let x = if j + 1 == probs.len() {
            left
        } else {
            binomial_u128(left, (p / rest).min(1.0), rng)
        };
        if x > 0 {
            sink(j, x);
        }
        left -= x;
        rest -= p;
    }
}

/// Which engine [`sweep`] uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Backend {
    /// Occupation counts when the law is a lattice law, particles otherwise.
    #[default]
    Auto,
    Particles,
    Occupation,
}

/// Returned by a sweep visitor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Stop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub population: Population,
    /// Last generation reached.
    pub generation: usize,
    pub truncated: bool,
}

/// Evolve one generation at a time to depth `n`. `visit(k, pop)` sees
/// generation `k` after pruning (including `k = 0`) and may edit it.
pub fn sweep<R, F>(
    law: &OffspringLaw,
    n: usize,
    x: f64,
    prune: &PruneRule,
    backend: Backend,
    rng: &mut R,
    mut visit: F,
) -> Result<SweepOutcome>
where
    R: Rng + ?Sized,
    F: FnMut(usize, &mut Population) -> Result<Flow>,
{
    prune.validate()?;
    let lattice = law.lattice();
    let use_lattice = match backend {
        Backend::Auto => lattice.is_some(),
        Backend::Particles => false,
        Backend::Occupation => {
            if lattice.is_none() {
                return Err(Error::NotLattice(law.name().to_string()));
            }
            true
        }
    };
    let mut pop = if use_lattice {
        Population::Lattice(Occupation {
            base: x,
            span: lattice.expect("lattice").span,
            lo: 0,
            counts: vec![1],
        })
    } else {
        Population::Particles(vec![x])
    };
    let mut truncated = pop.prune(prune, 0);
    let mut generation = 0;
    if visit(0, &mut pop)? == Flow::Stop {
        return Ok(SweepOutcome {
            population: pop,
            generation,
            truncated,
        });
    }
    let mut kids = Vec::new();
    for k in 0..n {
        if pop.is_empty() {
            break;
        }
        pop = match pop {
            Population::Particles(p) => {
                let mut next = Vec::with_capacity(p.len() * 2);
                for &pp in &p {
                    kids.clear();
                    law.sample_children(rng, &mut kids);
                    for &d in &kids {
                        if !d.is_finite() {
                            return Err(Error::NonFinite(d));
                        }
                        next.push(pp + d);
                    }
                }
                if next.len() > DEFAULT_CAP {
                    return Err(Error::PopulationOverflow {
                        size: next.len() as u128,
                        cap: DEFAULT_CAP as u128,
                    });
                }
                Population::Particles(next)
            }
            Population::Lattice(o) => {
                Population::Lattice(step_occupation(&o, lattice.expect("lattice"), law, rng)?)
            }
        };
        generation = k + 1;
        truncated |= pop.prune(prune, k + 1);
        if visit(k + 1, &mut pop)? == Flow::Stop {
            break;
        }
    }
    Ok(SweepOutcome {
        population: pop,
        generation,
        truncated,
    })
}

fn step_occupation<R: Rng + ?Sized>(
    o: &Occupation,
    lattice: &crate::laws::Lattice,
    law: &OffspringLaw,
    rng: &mut R,
) -> Result<Occupation> {
    let (vmin, vmax) = lattice
        .offsets
        .iter()
        .flatten()
        .fold((i64::MAX, i64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    if vmin > vmax {
        return Ok(Occupation {
            counts: Vec::new(),
            ..o.clone()
        });
    }
    let width = o.counts.len() + (vmax - vmin) as usize;
    let mut next = vec![0u128; width];
    if let Some(iid) = &lattice.iid {
        for (i, &c) in o.counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let trials = c * iid.arity as u128;
            multinomial(trials, &iid.probs, rng, |j, m| {
                next[(i as i64 + iid.values[j] - vmin) as usize] += m;
            });
        }
    } else {
        let outcomes = law.require_outcomes()?;
        let probs: Vec<f64> = outcomes.iter().map(|o| o.probability).collect();
        for (i, &c) in o.counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            multinomial(c, &probs, rng, |j, m| {
                for &v in &lattice.offsets[j] {
                    next[(i as i64 + v - vmin) as usize] += m;
                }
            });
        }
    }
    let mut out = Occupation {
        base: o.base,
        span: o.span,
        lo: o.lo + vmin,
        counts: next,
    };
    out.trim();
    let total: u128 = out.counts.iter().sum();
    if total > MAX_OCCUPATION {
        return Err(Error::PopulationOverflow {
            size: total,
            cap: MAX_OCCUPATION,
        });
    }
    Ok(out)
}

/// One simulated replicate as reported by `brwlab simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateSummary {
    pub replicate: u64,
    pub survived: bool,
    pub max: f64,
    pub martingale: f64,
    pub population: u128,
    pub pruned: bool,
}

/// Simulate `reps` replicates to depth `n` and summarise generation `n`.
pub fn simulate_replicates(
    law: &OffspringLaw,
    n: usize,
    x: f64,
    prune: &PruneRule,
    reps: u64,
    seeds: &SeedSource,
) -> Result<Vec<ReplicateSummary>> {
    crate::estimate::map_replicates(reps, seeds, |i, rng| {
        let out = sweep(law, n, x, prune, Backend::Auto, rng, |_, _| Ok(Flow::Continue))?;
        let reached = out.generation == n && !out.population.is_empty();
        Ok(ReplicateSummary {
            replicate: i,
            survived: reached,
            max: if reached { out.population.max() } else { f64::NEG_INFINITY },
            martingale: if reached { out.population.sum_exp() } else { 0.0 },
            population: if reached { out.population.total() } else { 0 },
            pruned: out.truncated,
        })
    })
}

/// Outcome of the exponential-growth count for one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub n: usize,
    pub a: f64,
    pub count: u128,
    pub survived: bool,
    pub rho_check: bool,
}

/// Count generation-`n` particles at or above `-n a` and compare with
/// `rho^n`, per replicate.
///
/// Only the empty rule or a lower barrier lying at or below `-k a` at every
/// generation `k` is accepted. A barrier can only lower the count, so a
/// passing `rho^n` comparison under it also holds without it.
pub fn growth_count(
    law: &OffspringLaw,
    n: usize,
    a: f64,
    rho: f64,
    prune: &PruneRule,
    reps: u64,
    seeds: &SeedSource,
) -> Result<Vec<GrowthReport>> {
    if !(a > 0.0) {
        return Err(Error::InvalidArgument(format!("slope a = {a} must be positive")));
    }
    if !(rho > 1.0) {
        return Err(Error::InvalidArgument(format!("rho = {rho} must exceed 1")));
    }
    if prune.beam.is_some() || prune.window.is_some() || prune.ceiling.is_some() {
        return Err(Error::InvalidPrune(
            "growth counts allow only a lower barrier at or below -k a".into(),
        ));
    }
    if let Some(b) = &prune.barrier {
        if let Some(k) = (0..=n).find(|&k| b.at(k, f64::NEG_INFINITY) > -(k as f64) * a + 1e-12) {
            return Err(Error::InvalidPrune(format!(
                "barrier {b} cuts above -k a at generation {k}"
            )));
        }
    }
    let threshold = rho.powi(n as i32);
    crate::estimate::map_replicates(reps, seeds, |_, rng| {
        let out = sweep(law, n, 0.0, prune, Backend::Auto, rng, |_, _| Ok(Flow::Continue))?;
        let survived = out.generation == n && !out.population.is_empty();
        let count = if survived {
            out.population.count_at_least(-(n as f64) * a - 1e-9)
        } else {
            0
        };
        Ok(GrowthReport {
            n,
            a,
            count,
            survived,
            rho_check: count as f64 >= threshold,
        })
    })
}

/// Mean `W_n` and `sum V e^V` over replicates grown with `prune`.
pub fn martingale_moments(
    law: &OffspringLaw,
    n: usize,
    prune: &PruneRule,
    reps: u64,
    seeds: &SeedSource,
) -> Result<(crate::estimate::Estimate, crate::estimate::Estimate)> {
    use crate::estimate::{Estimate, Moments};
    let acc = try_fold_replicates(
        reps,
        seeds,
        || vec![Moments::new(); 2],
        |m: &mut Vec<Moments>, _, rng: &mut SimRng| {
            let out = sweep(law, n, 0.0, prune, Backend::Auto, rng, |_, _| Ok(Flow::Continue))?;
            let alive = out.generation == n;
            m[0].push(if alive { out.population.sum_exp() } else { 0.0 });
            m[1].push(if alive {
                out.population.sum_of(|v| v * v.exp())
            } else {
                0.0
            });
            Ok(())
        },
    )?;
    Ok((Estimate::from_moments(&acc[0]), Estimate::from_moments(&acc[1])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::SeedSource;

    #[test]
    fn depth_zero_is_root_only() {
        let law = OffspringLaw::lattice_three_point();
        let t = grow(&law, 0, 1.5, &GrowOptions::default(), &mut SeedSource::new(1).stream(0)).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(max_displacement(&t, 0), 1.5);
    }

    #[test]
    fn binary_tree_population() {
        let law = OffspringLaw::lattice_three_point();
        let t = grow(&law, 3, 0.0, &GrowOptions::default(), &mut SeedSource::new(1).stream(0)).unwrap();
        assert_eq!(t.generation_size(3), 8);
        assert_eq!(t.len(), 15);
        assert!(!t.any_truncated());
    }

    #[test]
    fn cap_is_enforced() {
        let law = OffspringLaw::lattice_three_point();
        let opts = GrowOptions {
            cap: 100,
            ..GrowOptions::default()
        };
        let e = grow(&law, 10, 0.0, &opts, &mut SeedSource::new(1).stream(0));
        assert!(matches!(e, Err(Error::PopulationOverflow { .. })));
    }

    #[test]
    fn beam_keeps_highest_and_flags() {
        let law = OffspringLaw::binary_gaussian();
        let mut r1 = SeedSource::new(9).stream(0);
        let mut r2 = SeedSource::new(9).stream(0);
        let full = grow(&law, 1, 0.0, &GrowOptions::default(), &mut r1).unwrap();
        let pruned = grow(&law, 1, 0.0, &GrowOptions::pruned(PruneRule::beam(1)), &mut r2).unwrap();
        assert_eq!(pruned.generation_size(1), 1);
        assert_eq!(max_displacement(&pruned, 1), max_displacement(&full, 1));
        assert!(pruned.truncated(pruned.root()).unwrap());
    }

    #[test]
    fn prune_rule_text_round_trip() {
        for s in ["none", "beam:100000,window:30", "window:40", "barrier:linear:-0.5:0", "beam:5,ceiling:frontier:64:1:0"] {
            let r = PruneRule::parse(s).unwrap();
            assert_eq!(PruneRule::parse(&r.to_string()).unwrap(), r);
        }
        assert_eq!(PruneRule::parse("beam:100000,window:30").unwrap().to_string(), "beam:100000,window:30");
        assert!(PruneRule::parse("beam:0").is_err());
        assert!(PruneRule::parse("window:-1").is_err());
        assert!(PruneRule::parse("sideways:3").is_err());
    }

    #[test]
    fn occupation_prune_matches_particle_prune() {
        let mut occ = Population::Lattice(Occupation {
            base: 0.0,
            span: 1.0,
            lo: -3,
            counts: vec![5, 0, 2, 3, 4],
        });
        let mut parts = Population::Particles(
            [(-3.0, 5), (-1.0, 2), (0.0, 3), (1.0, 4)]
                .iter()
                .flat_map(|&(x, c)| std::iter::repeat_n(x, c))
                .collect(),
        );
        let rule = PruneRule::window(2.5).with_beam(6);
        occ.prune(&rule, 1);
        parts.prune(&rule, 1);
        assert_eq!(occ.total(), 6);
        assert_eq!(parts.total(), 6);
        assert_eq!(occ.sum_exp(), parts.sum_exp());
    }

    #[test]
    fn occupation_engine_keeps_martingale_mean() {
        let law = OffspringLaw::lattice_three_point();
        let (w, c) = martingale_moments(&law, 8, &PruneRule::none(), 20_000, &SeedSource::new(5)).unwrap();
        assert!(w.within(1.0, 4.0), "{w:?}");
        assert!(c.within(0.0, 4.0), "{c:?}");
    }

    #[test]
    fn growth_rejects_front_relative_pruning() {
        let law = OffspringLaw::lattice_three_point();
        let s = SeedSource::new(1);
        assert!(growth_count(&law, 5, 0.5, 1.05, &PruneRule::window(3.0), 10, &s).is_err());
        let tight = PruneRule::barrier(Barrier::Linear { slope: -0.25, intercept: 0.0 });
        assert!(growth_count(&law, 5, 0.5, 1.05, &tight, 10, &s).is_err());
        let ok = PruneRule::barrier(Barrier::Linear { slope: -0.5, intercept: 0.0 });
        let r = growth_count(&law, 0, 0.5, 1.05, &ok, 3, &s).unwrap();
        assert!(r.iter().all(|g| g.count == 1 && g.rho_check));
    }

    #[test]
    fn binomial_beyond_u64_is_centred() {
        let mut rng = SeedSource::new(2).stream(0);
        let n: u128 = 1 << 80;
        let x = binomial_u128(n, 0.25, &mut rng);
        let rel = (x as f64 / n as f64 - 0.25).abs();
        assert!(rel < 1e-9);
    }
}
