//! The maximal displacement `M_n` and the particle counts used to bound it:
//! the tail of `M_n` against `(1+y)e^{-y}`, first crossings of the curve
//! `f_n + y`, the truncated counts `Y_n(y, z)` with their pair counts by
//! most recent common ancestor, the genealogy of particles above `m_n`, and
//! concentration of `M_n` around `m_n`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::estimate::{map_replicates, try_fold_replicates, Band, Estimate, Moments, SeedSource, SimRng, Z95};
use crate::laws::{xi_of, OffspringLaw, XiSign};
use crate::oracle::max_law::{crossing_exact, CrossingExact, MaxLaw};
use crate::simulate::{grow, log_boundary, sweep, Backend, Barrier, Flow, GrowOptions, PruneRule, DEFAULT_CAP};
use crate::spine::pair_counts_by_mrca;
use crate::tree::MarkedTree;
use crate::walks::{EnrichedWalkLaw, MAX_SITES};
use crate::{Error, Result};

/// One-sided 95% normal quantile.
const Z95_ONE_SIDED: f64 = 1.644_853_626_951_472_2;

/// Comparison slack for lattice positions against the crossing curve; the
/// exact crossing oracle uses the same value.
const CROSS_EPS: f64 = 1e-12;

/// `m_n = -(3/2) log n`, with `m_0 = 0`.
pub fn m_n(n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        -1.5 * (n as f64).ln()
    }
}

/// `m_n` and the curve `f_n(k)` for `k <= n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryProfile {
    pub n: usize,
    pub m_n: f64,
    pub f: Vec<f64>,
}

impl BoundaryProfile {
    pub fn new(n: usize) -> Self {
        BoundaryProfile {
            n,
            m_n: m_n(n),
            f: (0..=n).map(|k| log_boundary(n, k)).collect(),
        }
    }

    pub fn at(&self, k: usize) -> f64 {
        self.f[k]
    }
}

/// Membership of one line in `A_n(y)`, `Ā_n(y)` and `B_n(y, z)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Membership {
    pub a: bool,
    pub a_bar: bool,
    pub b: bool,
}

/// The three parameters of the truncated count: barrier shift `y`, the
/// offspring allowance `z` (may be `+inf`), and the window depth `h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountParams {
    pub y: f64,
    pub z: f64,
    pub h: f64,
}

impl CountParams {
    pub fn new(y: f64, z: f64, h: f64) -> Self {
        CountParams { y, z, h }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.y >= 0.0) || !self.y.is_finite() {
            return Err(Error::InvalidArgument(format!("y = {} must be finite and non-negative", self.y)));
        }
        if !(self.z >= 0.0) {
            return Err(Error::InvalidArgument(format!("z = {} must be non-negative", self.z)));
        }
        if !(self.h >= 0.0) || !self.h.is_finite() {
            return Err(Error::InvalidArgument(format!("H = {} must be finite and non-negative", self.h)));
        }
        Ok(())
    }
}

/// Classify the line `V(u_0), ..., V(u_n)` with `xi(u_0), ..., xi(u_{n-1})`.
///
/// The offspring condition runs over `j < n`: `xi(u_n)` would describe
/// generation `n + 1`, which the count never looks at.
pub fn classify_path(
    profile: &BoundaryProfile,
    path: &[f64],
    xi_path: &[f64],
    y: f64,
    z: f64,
    h: f64,
) -> Result<Membership> {
    let n = profile.n;
    if path.len() != n + 1 {
        return Err(Error::InvalidArgument(format!(
            "path has {} positions, expected n + 1 = {}",
            path.len(),
            n + 1
        )));
    }
    if xi_path.len() != n {
        return Err(Error::InvalidArgument(format!(
            "xi path has {} values, expected n = {n}",
            xi_path.len()
        )));
    }
    let f = &profile.f;
    let a = path.iter().zip(f).all(|(v, fj)| *v <= fj + y);
    let a_bar = a && path[n] >= f[n] + y - h;
    let b = (0..n).all(|j| xi_path[j] <= z + (f[j] + y - path[j]) / 2.0);
    Ok(Membership { a, a_bar, b })
}

/// `Y_n(y, z)` and the pair counts `Y^{(2)}_{n,k}(y, z)`, `k < n`, of one
/// realisation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrontWindowCounts {
    pub count: u128,
    pub pairs: Vec<u128>,
}

impl FrontWindowCounts {
    pub fn square(&self) -> u128 {
        self.count * self.count
    }

    /// `Y^2 = Y + sum_k Y^{(2)}_k`.
    pub fn pairing_holds(&self) -> bool {
        self.square() == self.count + self.pairs.iter().sum::<u128>()
    }
}

/// Counts on a stored tree of depth at least `n`.
///
/// `xi` is the value recorded at growth time when the tree keeps it, and is
/// computed from the stored children otherwise.
pub fn tree_counts(tree: &MarkedTree, n: usize, p: &CountParams, sign: XiSign) -> Result<FrontWindowCounts> {
    p.validate()?;
    if tree.depth() < n {
        return Err(Error::InvalidArgument(format!("tree depth {} is below n = {n}", tree.depth())));
    }
    let prof = BoundaryProfile::new(n);
    let pos = tree.raw_positions();
    let recorded = tree.raw_xi();
    let end = tree.generation_range(n).end;
    // in_a[i]: the line to i stays in A; b_above[i]: every strict ancestor
    // satisfies the offspring condition.
    let mut in_a = vec![false; end];
    let mut b_above = vec![false; end];
    let mut b_self = vec![false; end];
    for (g, i) in (0..=n).flat_map(|g| tree.generation_range(g).map(move |i| (g, i))) {
        let parent = tree.raw_parent(i);
        let (pa, pb) = match parent {
            None => (true, true),
            Some(q) => (in_a[q], b_above[q] && b_self[q]),
        };
        in_a[i] = pa && pos[i] <= prof.f[g] + p.y;
        b_above[i] = pb;
        if g < n && in_a[i] && pb {
            let xi = match recorded {
                Some(x) => x[i],
                None => {
                    let kids = &pos[tree.child_range(i)];
                    if kids.is_empty() {
                        f64::NEG_INFINITY
                    } else {
                        xi_of(pos[i], kids, sign)?
                    }
                }
            };
            b_self[i] = xi <= p.z + (prof.f[g] + p.y - pos[i]) / 2.0;
        }
    }
    let floor = prof.f[n] + p.y - p.h;
    let selected: Vec<bool> = tree
        .generation_range(n)
        .map(|i| in_a[i] && b_above[i] && pos[i] >= floor)
        .collect();
    let (count, pairs) = pair_counts_by_mrca(tree, n, &selected);
    Ok(FrontWindowCounts { count, pairs })
}

/// Options of the depth-first counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountOptions {
    /// Drop lines more than this far below `f_n + y` (a window anchored to
    /// the barrier). `None` keeps every line that can still reach the
    /// endpoint window.
    pub depth: Option<f64>,
    /// Cap on visited nodes per realisation.
    pub cap: usize,
    pub xi_sign: XiSign,
}

impl Default for CountOptions {
    fn default() -> Self {
        CountOptions {
            depth: None,
            cap: DEFAULT_CAP,
            xi_sign: XiSign::default(),
        }
    }
}

/// Largest single displacement of an enumerable law, `+inf` otherwise.
fn max_step(law: &OffspringLaw) -> f64 {
    law.outcomes().map_or(f64::INFINITY, |o| {
        o.iter()
            .flat_map(|o| o.displacements.iter().copied())
            .fold(f64::NEG_INFINITY, f64::max)
    })
}

struct Dfs<'a, R: Rng + ?Sized> {
    law: &'a OffspringLaw,
    prof: BoundaryProfile,
    p: CountParams,
    depth: Option<f64>,
    reach: f64,
    sign: XiSign,
    rng: &'a mut R,
    pairs: Vec<u128>,
    nodes: usize,
    cap: usize,
    bufs: Vec<Vec<f64>>,
}

impl<R: Rng + ?Sized> Dfs<'_, R> {
    fn visit(&mut self, j: usize, x: f64) -> Result<u128> {
        self.nodes += 1;
        if self.nodes > self.cap {
            return Err(Error::PopulationOverflow {
                size: self.nodes as u128,
                cap: self.cap as u128,
            });
        }
        let n = self.prof.n;
        let floor = self.prof.f[n] + self.p.y - self.p.h;
        if j == n {
            return Ok((x >= floor) as u128);
        }
        let mut kids = std::mem::take(&mut self.bufs[j]);
        kids.clear();
        self.law.sample_children(self.rng, &mut kids);
        if let Some(&bad) = kids.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(bad));
        }
        kids.iter_mut().for_each(|d| *d += x);
        let xi = if kids.is_empty() {
            f64::NEG_INFINITY
        } else {
            xi_of(x, &kids, self.sign)?
        };
        let (mut total, mut sq) = (0u128, 0u128);
        if xi <= self.p.z + (self.prof.f[j] + self.p.y - x) / 2.0 {
            let top = self.prof.f[j + 1] + self.p.y;
            let left = (n - j - 1) as f64;
            for &c in &kids {
                if c > top || self.depth.is_some_and(|d| c < top - d) {
                    continue;
                }
                if self.reach.is_finite() && c + self.reach * left < floor {
                    continue;
                }
                let s = self.visit(j + 1, c)?;
                total += s;
                sq += s * s;
            }
        }
        self.pairs[j] += total * total - sq;
        self.bufs[j] = kids;
        Ok(total)
    }
}

/// One realisation of the counts, grown depth first without storing the
/// tree. Lines leave as soon as they exit `A_n(y)` or fail the offspring
/// condition, or can no longer reach the endpoint window.
pub fn dfs_counts<R: Rng + ?Sized>(
    law: &OffspringLaw,
    n: usize,
    p: &CountParams,
    opts: &CountOptions,
    rng: &mut R,
) -> Result<FrontWindowCounts> {
    p.validate()?;
    if let Some(d) = opts.depth {
        if !(d > 0.0) {
            return Err(Error::InvalidPrune(format!("window depth {d} must be positive")));
        }
    }
    let mut dfs = Dfs {
        law,
        prof: BoundaryProfile::new(n),
        p: *p,
        depth: opts.depth,
        reach: max_step(law),
        sign: opts.xi_sign,
        rng,
        pairs: vec![0; n],
        nodes: 0,
        cap: opts.cap,
        bufs: vec![Vec::new(); n],
    };
    let count = dfs.visit(0, 0.0)?;
    Ok(FrontWindowCounts { count, pairs: dfs.pairs })
}

/// Monte Carlo moments of the truncated counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountsReport {
    pub n: usize,
    pub params: CountParams,
    pub options: CountOptions,
    pub mean: Estimate,
    pub second_moment: Estimate,
    /// `E Y^{(2)}_{n,k}` for `k < n`.
    pub pairs: Vec<Estimate>,
    /// `E Y^{(2)}_{n,k} ((k+1)(n-k+1))^{3/2} / (n+1)^{3/2}`.
    pub pair_profile: Vec<f64>,
    /// `E Y e^y / (1+y)`.
    pub normalized_mean: f64,
    /// `E Y^2 e^{y-z} / (1+y)`; zero when `z` is infinite.
    pub normalized_second: f64,
    /// `(E Y)^2 / E Y^2`, the second-moment lower bound on `P(Y >= 1)`.
    pub second_moment_ratio: f64,
    /// Fraction of realisations with `Y >= 1`.
    pub positive: Estimate,
    /// Realisations where the pairing identity failed (always 0).
    pub identity_failures: u64,
    /// Exact `E Y` from the spine, when the law allows it.
    pub spine_mean: Option<f64>,
}

/// Estimate `E Y`, `E Y^2` and `E Y^{(2)}_{n,k}` over `reps` realisations.
pub fn truncated_counts(
    law: &OffspringLaw,
    n: usize,
    p: &CountParams,
    opts: &CountOptions,
    reps: u64,
    seeds: &SeedSource,
) -> Result<CountsReport> {
    p.validate()?;
    if reps == 0 {
        return Err(Error::InvalidArgument("reps must be positive".into()));
    }
    let acc = try_fold_replicates(
        reps,
        seeds,
        || vec![Moments::new(); n + 4],
        |m: &mut Vec<Moments>, _, rng: &mut SimRng| {
            let c = dfs_counts(law, n, p, opts, rng)?;
            m[0].push(c.count as f64);
            m[1].push(c.square() as f64);
            m[2].push((c.count > 0) as u8 as f64);
            m[3].push((!c.pairing_holds()) as u8 as f64);
            for (k, &v) in c.pairs.iter().enumerate() {
                m[4 + k].push(v as f64);
            }
            Ok(())
        },
    )?;
    let mean = Estimate::from_moments(&acc[0]);
    let second_moment = Estimate::from_moments(&acc[1]);
    let pairs: Vec<Estimate> = acc[4..].iter().map(Estimate::from_moments).collect();
    let nf = (n + 1) as f64;
    let pair_profile = pairs
        .iter()
        .enumerate()
        .map(|(k, e)| e.value * (((k + 1) * (n - k + 1)) as f64).powf(1.5) / nf.powf(1.5))
        .collect();
    let weight = p.y.exp() / (1.0 + p.y);
    let spine_mean = if law.lattice().is_some() && law.is_enumerable() && opts.depth.is_none() {
        Some(mean_count_exact(law, n, p, opts.xi_sign)?)
    } else {
        None
    };
    Ok(CountsReport {
        n,
        params: *p,
        options: opts.clone(),
        mean,
        second_moment,
        pairs,
        pair_profile,
        normalized_mean: mean.value * weight,
        normalized_second: if p.z.is_finite() {
            second_moment.value * weight * (-p.z).exp()
        } else {
            0.0
        },
        second_moment_ratio: if second_moment.value > 0.0 {
            mean.value * mean.value / second_moment.value
        } else {
            0.0
        },
        positive: Estimate::from_moments(&acc[2]),
        identity_failures: (acc[3].mean() * acc[3].count() as f64).round() as u64,
        spine_mean,
    })
}

/// Exact `E Y_n(y, z)` for an enumerable lattice law, by the first-moment
/// formula `E Y = Ê[e^{-V(w_n)} 1{w_n in Y}]` and a lattice DP over the
/// spine's joint law of (step, xi of the spine parent).
pub fn mean_count_exact(law: &OffspringLaw, n: usize, p: &CountParams, sign: XiSign) -> Result<f64> {
    p.validate()?;
    let walk = EnrichedWalkLaw::from_brw(law, sign)?;
    let span = walk.span().ok_or_else(|| Error::NotLattice(law.name().into()))?;
    let atoms: Vec<(i64, f64, f64)> = walk
        .atoms()
        .ok_or_else(|| Error::NotEnumerable(law.name().into()))?
        .iter()
        .map(|a| ((a.step / span).round() as i64, a.xi, a.mass))
        .collect();
    let (smin, smax) = atoms
        .iter()
        .fold((i64::MAX, i64::MIN), |(a, b), &(s, _, _)| (a.min(s), b.max(s)));
    let width = n as i64 * (smax - smin) + 1;
    if width as usize > MAX_SITES {
        return Err(Error::MemoryBound(width as usize));
    }
    let prof = BoundaryProfile::new(n);
    let mut lo = 0i64;
    let mut mass = vec![1.0f64];
    for j in 0..n {
        let top = prof.f[j + 1] + p.y;
        let mut next = vec![0.0f64; mass.len() + (smax - smin) as usize];
        for (i, &m) in mass.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            let x = (lo + i as i64) as f64 * span;
            let allowance = p.z + (prof.f[j] + p.y - x) / 2.0;
            for &(s, xi, w) in &atoms {
                if xi > allowance || (lo + i as i64 + s) as f64 * span > top {
                    continue;
                }
                next[(i as i64 + s - smin) as usize] += m * w;
            }
        }
        lo += smin;
        let first = next.iter().position(|&m| m != 0.0).unwrap_or(next.len());
        let last = next.iter().rposition(|&m| m != 0.0).map_or(first, |l| l + 1);
        mass = next[first..last].to_vec();
        lo += first as i64;
        if mass.is_empty() {
            return Ok(0.0);
        }
    }
    let floor = prof.f[n] + p.y - p.h;
    Ok(mass
        .iter()
        .enumerate()
        .map(|(i, &m)| (i, m, (lo + i as i64) as f64 * span))
        .filter(|&(_, _, x)| x >= floor)
        .map(|(_, m, x)| m * (-x).exp())
        .sum())
}

/// One cell of the `Z` sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZRow {
    pub z: f64,
    pub n: usize,
    pub y: f64,
    pub mean: f64,
    /// `E Y_n(y, +inf) = E #Ā_n(y)`.
    pub unrestricted: f64,
    pub ratio: f64,
    /// `E Y e^y / (1+y)`.
    pub normalized: f64,
}

/// Smallest `z` among the candidates for which `E Y_n(y, z)` keeps at least
/// `threshold` of `E Y_n(y, +inf)` over the whole `(n, y)` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZSweep {
    pub h: f64,
    pub threshold: f64,
    pub rows: Vec<ZRow>,
    pub chosen: Option<f64>,
}

pub fn sweep_z(
    law: &OffspringLaw,
    ns: &[usize],
    ys: &[f64],
    h: f64,
    candidates: &[f64],
    threshold: f64,
    sign: XiSign,
) -> Result<ZSweep> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!("threshold {threshold} must lie in (0, 1]")));
    }
    let mut rows = Vec::new();
    let mut chosen = None;
    for &z in candidates {
        let mut pass = true;
        for &n in ns {
            for &y in ys {
                let mean = mean_count_exact(law, n, &CountParams::new(y, z, h), sign)?;
                let unrestricted = mean_count_exact(law, n, &CountParams::new(y, f64::INFINITY, h), sign)?;
                let ratio = if unrestricted > 0.0 { mean / unrestricted } else { 0.0 };
                pass &= ratio >= threshold;
                rows.push(ZRow {
                    z,
                    n,
                    y,
                    mean,
                    unrestricted,
                    ratio,
                    normalized: mean * y.exp() / (1.0 + y),
                });
            }
        }
        if pass && chosen.is_none() {
            chosen = Some(z);
        }
    }
    Ok(ZSweep {
        h,
        threshold,
        rows,
        chosen,
    })
}

fn proportion(hits: u64, reps: u64) -> Estimate {
    let p = hits as f64 / reps as f64;
    Estimate::new(p, (p * (1.0 - p) / reps as f64).sqrt(), reps)
}

/// `M_n` per replicate (`-inf` on extinction) under `prune`.
pub fn sample_maxima(
    law: &OffspringLaw,
    n: usize,
    prune: &PruneRule,
    reps: u64,
    seeds: &SeedSource,
) -> Result<Vec<f64>> {
    map_replicates(reps, seeds, |_, rng| {
        let out = sweep(law, n, 0.0, prune, Backend::Auto, rng, |_, _| Ok(Flow::Continue))?;
        Ok(if out.generation == n {
            out.population.max()
        } else {
            f64::NEG_INFINITY
        })
    })
}

/// One `(n, y)` cell of the tail table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailCell {
    pub n: usize,
    pub y: f64,
    /// `P(M_n >= m_n + y)`.
    pub probability: Estimate,
    /// `P e^y / (1+y)`.
    pub normalized: Estimate,
    /// Same probability under the doubled rule, independent streams.
    pub doubled: Option<Estimate>,
    /// `|P - P_doubled|` in combined standard errors.
    pub shift_se: Option<f64>,
    /// Exact value for lattice laws.
    pub exact: Option<f64>,
}

/// Evidence that a pruning rule does not move the estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoublingCertificate {
    pub rule: PruneRule,
    pub doubled: PruneRule,
    pub max_shift_se: f64,
    pub limit_se: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailTable {
    pub prune: PruneRule,
    pub reps: u64,
    pub cells: Vec<TailCell>,
    /// Spread of the normalised values.
    pub band: Band,
    pub certificate: Option<DoublingCertificate>,
    /// False when the doubling test failed.
    pub valid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TailOptions {
    /// Rerun every `n` under the doubled rule (skipped when unpruned).
    pub certify: bool,
    /// Attach exact values for lattice laws.
    pub exact: bool,
}

impl Default for TailOptions {
    fn default() -> Self {
        TailOptions {
            certify: true,
            exact: true,
        }
    }
}

/// Doubling tests fail beyond this many combined standard errors.
pub const DOUBLING_LIMIT_SE: f64 = 4.0;

/// `r(n, y) = P(M_n >= m_n + y) e^y / (1+y)` over an `(n, y)` grid.
pub fn tail_estimate(
    law: &OffspringLaw,
    ns: &[usize],
    ys: &[f64],
    prune: &PruneRule,
    reps: u64,
    seeds: &SeedSource,
    opts: TailOptions,
) -> Result<TailTable> {
    prune.validate()?;
    if ns.is_empty() || ys.is_empty() {
        return Err(Error::InvalidArgument("empty n or y grid".into()));
    }
    if reps == 0 {
        return Err(Error::InvalidArgument("reps must be positive".into()));
    }
    for &n in ns {
        if n == 0 {
            return Err(Error::InvalidArgument("n must be at least 1".into()));
        }
        if let Some(y) = ys.iter().find(|&&y| !(y >= 0.0) || y > (n as f64).sqrt()) {
            return Err(Error::InvalidArgument(format!("y = {y} outside [0, n^(1/2)] for n = {n}")));
        }
    }
    let certify = opts.certify && !prune.is_none();
    let doubled_rule = prune.doubled();
    let mut cells = Vec::new();
    let mut max_shift: f64 = 0.0;
    for &n in ns {
        let cell_seeds = seeds.child(n as u64);
        let maxima = sample_maxima(law, n, prune, reps, &cell_seeds)?;
        let doubled = if certify {
            Some(sample_maxima(law, n, &doubled_rule, reps, &cell_seeds.child(1))?)
        } else {
            None
        };
        let exact = match (opts.exact, law.lattice()) {
            (true, Some(_)) => Some(MaxLaw::compute(law, n)?),
            _ => None,
        };
        let mn = m_n(n);
        for &y in ys {
            let t = mn + y;
            let hits = |m: &[f64]| m.iter().filter(|&&v| v >= t).count() as u64;
            let probability = proportion(hits(&maxima), reps);
            let d = doubled.as_ref().map(|m| proportion(hits(m), reps));
            let shift_se = d.map(|d| {
                let se = probability.combined_se(&d);
                let diff = (probability.value - d.value).abs();
                if se > 0.0 {
                    diff / se
                } else if diff > 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                }
            });
            if let Some(s) = shift_se {
                max_shift = max_shift.max(s);
            }
            cells.push(TailCell {
                n,
                y,
                probability,
                normalized: probability.scaled(y.exp() / (1.0 + y)),
                doubled: d,
                shift_se,
                exact: exact.as_ref().map(|e| e.tail(n, t)),
            });
        }
    }
    let band = Band::of(cells.iter().map(|c| c.normalized.value));
    let certificate = certify.then(|| DoublingCertificate {
        rule: prune.clone(),
        doubled: doubled_rule,
        max_shift_se: max_shift,
        limit_se: DOUBLING_LIMIT_SE,
        pass: max_shift <= DOUBLING_LIMIT_SE,
    });
    let valid = certificate.as_ref().is_none_or(|c| c.pass);
    Ok(TailTable {
        prune: prune.clone(),
        reps,
        cells,
        band,
        certificate,
        valid,
    })
}

/// First crossings of the curve `f_n + y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierReport {
    pub n: usize,
    pub y: f64,
    pub margin: f64,
    pub prune: PruneRule,
    /// `P(exists |u| <= n: V(u) >= f_n(|u|) + y)`.
    pub probability: Estimate,
    /// `P e^y / (1+y)`.
    pub normalized: Estimate,
    /// `E sum_k Z_k`.
    pub mean_first_crossings: Estimate,
    /// `E Z_k` for `k <= n`.
    pub per_generation: Vec<f64>,
    pub exact: Option<CrossingExact>,
}

/// Check that `prune` keeps every particle above `f_n(k) + y - margin`.
pub fn check_crossing_prune(prune: &PruneRule, n: usize, y: f64, margin: f64) -> Result<()> {
    if prune.beam.is_some() || prune.window.is_some() || prune.ceiling.is_some() {
        return Err(Error::InvalidPrune(
            "crossing counts allow only a lower barrier; beam, window and ceiling bias detection".into(),
        ));
    }
    if let Some(b) = &prune.barrier {
        for k in 0..=n {
            let keep = log_boundary(n, k) + y - margin;
            if b.at(k, f64::NEG_INFINITY) > keep + 1e-9 {
                return Err(Error::InvalidPrune(format!(
                    "barrier {b} at generation {k} lies above f_n(k) + y - margin = {keep}"
                )));
            }
        }
    }
    Ok(())
}

/// Estimate the crossing probability and the mean number of first crossings.
/// Without a rule, particles more than `margin` below the curve are dropped.
pub fn frontier_crossing(
    law: &OffspringLaw,
    n: usize,
    y: f64,
    prune: Option<&PruneRule>,
    margin: f64,
    reps: u64,
    seeds: &SeedSource,
) -> Result<FrontierReport> {
    if !(y >= 0.0) || !y.is_finite() {
        return Err(Error::InvalidArgument(format!("y = {y} must be finite and non-negative")));
    }
    if !(margin > 0.0) {
        return Err(Error::InvalidArgument(format!("margin {margin} must be positive")));
    }
    if reps == 0 {
        return Err(Error::InvalidArgument("reps must be positive".into()));
    }
    let rule = match prune {
        Some(r) => r.clone(),
        None => PruneRule::barrier(Barrier::Frontier { n, y, offset: -margin }),
    };
    check_crossing_prune(&rule, n, y, margin)?;
    let prof = BoundaryProfile::new(n);
    let acc = try_fold_replicates(
        reps,
        seeds,
        || vec![Moments::new(); n + 3],
        |m: &mut Vec<Moments>, _, rng: &mut SimRng| {
            let mut z = vec![0u128; n + 1];
            sweep(law, n, 0.0, &rule, Backend::Auto, rng, |k, pop| {
                z[k] = pop.remove_at_least(prof.f[k] + y - CROSS_EPS);
                Ok(Flow::Continue)
            })?;
            let total: u128 = z.iter().sum();
            m[0].push((total > 0) as u8 as f64);
            m[1].push(total as f64);
            for (k, &c) in z.iter().enumerate() {
                m[2 + k].push(c as f64);
            }
            Ok(())
        },
    )?;
    let probability = Estimate::from_moments(&acc[0]);
    let exact = match law.lattice() {
        Some(_) if law.is_enumerable() => Some(crossing_exact(law, n, y)?),
        _ => None,
    };
    Ok(FrontierReport {
        n,
        y,
        margin,
        prune: rule,
        probability,
        normalized: probability.scaled(y.exp() / (1.0 + y)),
        mean_first_crossings: Estimate::from_moments(&acc[1]),
        per_generation: acc[2..].iter().map(|m| m.mean()).collect(),
        exact,
    })
}

/// First-crossing counts `Z_k` on a stored tree; a line is counted only at
/// its first crossing.
pub fn tree_first_crossings(tree: &MarkedTree, n: usize, y: f64) -> Result<Vec<u128>> {
    if tree.depth() < n {
        return Err(Error::InvalidArgument(format!("tree depth {} is below n = {n}", tree.depth())));
    }
    let prof = BoundaryProfile::new(n);
    let pos = tree.raw_positions();
    let end = tree.generation_range(n).end;
    let mut crossed_before = vec![false; end];
    let mut z = vec![0u128; n + 1];
    for (g, i) in (0..=n).flat_map(|g| tree.generation_range(g).map(move |i| (g, i))) {
        let before = tree.raw_parent(i).is_some_and(|q| crossed_before[q]);
        let here = pos[i] >= prof.f[g] + y - CROSS_EPS;
        if here && !before {
            z[g] += 1;
        }
        crossed_before[i] = before || here;
    }
    Ok(z)
}

/// How genealogies above `m_n` are sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GenealogyEngine {
    /// Exact: only lines with a descendant above `m_n` are sampled, using the
    /// exact law of the maximum (lattice laws).
    Reduced,
    /// Grow the tree under a pruning rule and scan it.
    Direct(PruneRule),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenealogyRow {
    pub r: usize,
    /// `P(exists |u| = |v| = n: V(u), V(v) >= m_n, |u ∧ v| in [R, n - R])`.
    pub q: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenealogyReport {
    pub n: usize,
    pub engine: GenealogyEngine,
    pub rows: Vec<GenealogyRow>,
    /// `q` non-increasing along the grid.
    pub monotone: bool,
    /// `(q(first R) - q(last R)) / SE` of the paired difference.
    pub decrease_z: f64,
    /// The paired one-sided 95% test rejects `q(last) >= q(first)`.
    pub decrease_confident: bool,
}

/// Generations of the most recent common ancestors of pairs above `t` at
/// generation `n`, sampled from the reduced tree.
fn reduced_branch_generations<R: Rng + ?Sized>(
    kernel: &[(f64, Vec<i64>)],
    ml: &MaxLaw,
    n: usize,
    it: i64,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    if rng.random::<f64>() >= ml.tail_index(n, it) {
        return Ok(out);
    }
    let mut stack = vec![(0usize, 0i64)];
    let mut visited = 0usize;
    let mut weights: Vec<(usize, u32, f64)> = Vec::new();
    while let Some((j, s)) = stack.pop() {
        if j == n {
            continue;
        }
        visited += 1;
        if visited > DEFAULT_CAP {
            return Err(Error::PopulationOverflow {
                size: visited as u128,
                cap: DEFAULT_CAP as u128,
            });
        }
        weights.clear();
        let mut total = 0.0;
        for (o, (p, offs)) in kernel.iter().enumerate() {
            let g: Vec<f64> = offs.iter().map(|&v| ml.tail_index(n - j - 1, it - s - v)).collect();
            for mask in 1u32..(1u32 << offs.len()) {
                let w = g.iter().enumerate().fold(*p, |acc, (c, &gc)| {
                    acc * if mask >> c & 1 == 1 { gc } else { 1.0 - gc }
                });
                if w > 0.0 {
                    total += w;
                    weights.push((o, mask, total));
                }
            }
        }
        if total <= 0.0 {
            return Err(Error::Contract(format!(
                "reduced tree reached a line without descendants above the threshold (generation {j})"
            )));
        }
        let u = rng.random::<f64>() * total;
        let k = weights.partition_point(|w| w.2 <= u).min(weights.len() - 1);
        let (o, mask, _) = weights[k];
        if mask.count_ones() >= 2 {
            out.push(j);
        }
        for (c, &v) in kernel[o].1.iter().enumerate() {
            if mask >> c & 1 == 1 {
                stack.push((j + 1, s + v));
            }
        }
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

fn direct_branch_generations<R: Rng + ?Sized>(
    law: &OffspringLaw,
    n: usize,
    prune: &PruneRule,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let tree = grow(law, n, 0.0, &GrowOptions::pruned(prune.clone()), rng)?;
    if tree.depth() < n || tree.generation_size(n) == 0 {
        return Ok(Vec::new());
    }
    let t = m_n(n);
    let selected: Vec<bool> = tree.generation_positions(n).iter().map(|&v| v >= t).collect();
    let (_, pairs) = pair_counts_by_mrca(&tree, n, &selected);
    Ok((0..n).filter(|&k| pairs[k] > 0).collect())
}

/// `q(R)` over a grid of `R`, all from the same realisations.
pub fn genealogy_stat(
    law: &OffspringLaw,
    n: usize,
    rs: &[usize],
    engine: &GenealogyEngine,
    reps: u64,
    seeds: &SeedSource,
) -> Result<GenealogyReport> {
    if rs.is_empty() || rs.contains(&0) {
        return Err(Error::InvalidArgument("R grid must be non-empty with R >= 1".into()));
    }
    if reps == 0 {
        return Err(Error::InvalidArgument("reps must be positive".into()));
    }
    let gens: Vec<Vec<usize>> = match engine {
        GenealogyEngine::Reduced => {
            let lattice = law.require_lattice()?;
            let outcomes = law.require_outcomes()?;
            if law.max_children().unwrap_or(0) > 16 {
                return Err(Error::InvalidArgument("reduced tree supports at most 16 children".into()));
            }
            let kernel: Vec<(f64, Vec<i64>)> = outcomes
                .iter()
                .zip(&lattice.offsets)
                .map(|(o, k)| (o.probability, k.clone()))
                .collect();
            let ml = MaxLaw::compute(law, n)?;
            let it = ml.index_at_least(m_n(n));
            map_replicates(reps, seeds, |_, rng| reduced_branch_generations(&kernel, &ml, n, it, rng))?
        }
        GenealogyEngine::Direct(prune) => {
            prune.validate()?;
            map_replicates(reps, seeds, |_, rng| direct_branch_generations(law, n, prune, rng))?
        }
    };
    let hit = |g: &[usize], r: usize| r <= n.saturating_sub(r) && g.iter().any(|&k| k >= r && k <= n - r);
    let rows: Vec<GenealogyRow> = rs
        .iter()
        .map(|&r| GenealogyRow {
            r,
            q: proportion(gens.iter().filter(|g| hit(g, r)).count() as u64, reps),
        })
        .collect();
    let monotone = rows.windows(2).all(|w| w[1].q.value <= w[0].q.value);
    let (first, last) = (rs[0], rs[rs.len() - 1]);
    let mut diff = Moments::new();
    for g in &gens {
        diff.push(hit(g, first) as u8 as f64 - hit(g, last) as u8 as f64);
    }
    let decrease_z = if diff.std_error() > 0.0 {
        diff.mean() / diff.std_error()
    } else if diff.mean() > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    Ok(GenealogyReport {
        n,
        engine: engine.clone(),
        rows,
        monotone,
        decrease_z,
        decrease_confident: decrease_z > Z95_ONE_SIDED,
    })
}

/// Concentration of `M_n` at one `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationRow {
    pub n: usize,
    pub reps: u64,
    pub survivors: u64,
    /// Lower sample median of `M_n` given survival.
    pub median: f64,
    /// Distribution-free 95% interval from order statistics.
    pub median_ci: [f64; 2],
    /// `median + (3/2) log n`.
    pub centered: f64,
    /// `(y, P(|M_n - m_n| >= y, survival))`.
    pub exceedance: Vec<(f64, Estimate)>,
    pub exact_median: Option<f64>,
    pub exact_exceedance: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub prune: PruneRule,
    pub rows: Vec<ConcentrationRow>,
    /// Spread of the centred medians.
    pub centered: Band,
    /// Exceedance non-increasing in `y` at every `n`.
    pub monotone: bool,
}

/// Survival-conditioned medians of `M_n` and the exceedance table.
pub fn concentration(
    law: &OffspringLaw,
    ns: &[usize],
    ys: &[f64],
    prune: &PruneRule,
    reps: u64,
    seeds: &SeedSource,
) -> Result<ConcentrationReport> {
    prune.validate()?;
    if ns.is_empty() || ns.contains(&0) {
        return Err(Error::InvalidArgument("n grid must be non-empty with n >= 1".into()));
    }
    if let Some(y) = ys.iter().find(|&&y| !(y >= 0.0)) {
        return Err(Error::InvalidArgument(format!("y = {y} must be non-negative")));
    }
    let mut rows = Vec::new();
    for &n in ns {
        let maxima = sample_maxima(law, n, prune, reps, &seeds.child(n as u64))?;
        let mut alive: Vec<f64> = maxima.iter().copied().filter(|m| m.is_finite()).collect();
        let survivors = alive.len() as u64;
        if survivors == 0 {
            return Err(Error::AllExtinct);
        }
        if (survivors as f64) < 0.1 * reps as f64 {
            return Err(Error::Contract(format!(
                "only {survivors} of {reps} replicates survive at n = {n}; enlarge reps"
            )));
        }
        alive.sort_by(f64::total_cmp);
        let s = alive.len();
        let median = alive[s.div_ceil(2) - 1];
        let half = Z95 * (s as f64).sqrt() / 2.0;
        let lo = ((s as f64 / 2.0 - half).floor().max(0.0) as usize).min(s - 1);
        let hi = ((s as f64 / 2.0 + half).ceil() as usize).min(s - 1);
        let mn = m_n(n);
        let exceedance = ys
            .iter()
            .map(|&y| {
                let hits = alive.iter().filter(|&&m| (m - mn).abs() >= y).count() as u64;
                (y, proportion(hits, reps))
            })
            .collect();
        let exact = match law.lattice() {
            Some(_) => Some(MaxLaw::compute(law, n)?),
            None => None,
        };
        rows.push(ConcentrationRow {
            n,
            reps,
            survivors,
            median,
            median_ci: [alive[lo], alive[hi]],
            centered: median - mn,
            exceedance,
            exact_median: exact.as_ref().map(|e| e.median(n)),
            exact_exceedance: exact.as_ref().map(|e| {
                ys.iter()
                    .map(|&y| {
                        if y == 0.0 {
                            e.survival(n)
                        } else {
                            e.tail(n, mn + y) + e.survival(n) - e.tail_above(n, mn - y)
                        }
                    })
                    .collect()
            }),
        });
    }
    let centered = Band::of(rows.iter().map(|r| r.centered));
    let monotone = rows
        .iter()
        .all(|r| r.exceedance.windows(2).all(|w| w[0].0 > w[1].0 || w[1].1.value <= w[0].1.value));
    Ok(ConcentrationReport {
        prune: prune.clone(),
        rows,
        centered,
        monotone,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{enumerate, exact_expectation, Measure, ENUMERATION_CAP};

    fn lattice3() -> OffspringLaw {
        OffspringLaw::lattice_three_point()
    }

    #[test]
    fn profile_invariants() {
        for n in [1usize, 2, 10, 1000] {
            let p = BoundaryProfile::new(n);
            assert_eq!(p.f[0], 0.0);
            assert!(p.f.windows(2).all(|w| w[1] <= w[0]));
            assert!(p.f[n] <= p.m_n && p.f[n] >= p.m_n - 2.0, "n={n}");
        }
    }

    #[test]
    fn constant_path_membership() {
        // f_n(j) + 1 >= 0 for all j iff (n+1) e^{-2/3} <= 1.
        for n in [1usize, 2, 5, 50] {
            let p = BoundaryProfile::new(n);
            let m = classify_path(&p, &vec![0.0; n + 1], &vec![0.0; n], 1.0, 1.0, 1.0).unwrap();
            assert_eq!(m.a, (n as f64 + 1.0) * (-2.0f64 / 3.0).exp() <= 1.0, "n={n}");
        }
        let p = BoundaryProfile::new(4);
        let m = classify_path(&p, &[0.0; 5], &[5.0; 4], f64::INFINITY, 0.0, 3.0).unwrap();
        assert!(m.a && !m.a_bar && m.b);
        let m = classify_path(&p, &[0.0; 5], &[1e6; 4], 0.5, f64::INFINITY, 3.0).unwrap();
        assert!(m.b);
        assert!(classify_path(&p, &[0.0; 4], &[0.0; 4], 0.0, 0.0, 1.0).is_err());
        assert!(classify_path(&p, &[0.0; 5], &[0.0; 5], 0.0, 0.0, 1.0).is_err());
    }

    fn oracle_counts(n: usize, p: &CountParams) -> (f64, f64, Vec<f64>) {
        let law = lattice3();
        let mut acc = (0.0, 0.0, vec![0.0; n]);
        enumerate(&law, n, 0.0, ENUMERATION_CAP, |o| {
            let c = tree_counts(o.tree, n, p, XiSign::default()).unwrap();
            assert!(c.pairing_holds());
            acc.0 += o.probability * c.count as f64;
            acc.1 += o.probability * c.square() as f64;
            for (k, &v) in c.pairs.iter().enumerate() {
                acc.2[k] += o.probability * v as f64;
            }
        })
        .unwrap();
        acc
    }

    #[test]
    fn spine_mean_matches_enumeration() {
        for n in [1usize, 2, 3] {
            for p in [
                CountParams::new(0.0, 1.0, 1.0),
                CountParams::new(1.0, 0.5, 2.0),
                CountParams::new(2.0, f64::INFINITY, 3.0),
            ] {
                let (ey, _, _) = oracle_counts(n, &p);
                let dp = mean_count_exact(&lattice3(), n, &p, XiSign::default()).unwrap();
                assert!((ey - dp).abs() < 1e-10, "n={n} {p:?}: {ey} vs {dp}");
            }
        }
    }

    #[test]
    fn depth_two_counts_frozen() {
        let p = CountParams::new(1.0, 1.0, 2.0);
        let (ey, ey2, pairs) = oracle_counts(2, &p);
        let s: f64 = pairs.iter().sum();
        assert!((ey2 - ey - s).abs() < 1e-14);
        let mc = truncated_counts(&lattice3(), 2, &p, &CountOptions::default(), 40_000, &SeedSource::new(3)).unwrap();
        assert_eq!(mc.identity_failures, 0);
        assert!(mc.mean.within(ey, 4.0), "{:?} vs {ey}", mc.mean);
        assert!(mc.second_moment.within(ey2, 4.0), "{:?} vs {ey2}", mc.second_moment);
        for (e, &x) in mc.pairs.iter().zip(&pairs) {
            assert!(e.within(x, 4.0), "{e:?} vs {x}");
        }
        assert!((mc.spine_mean.unwrap() - ey).abs() < 1e-12);
    }

    #[test]
    fn dfs_and_tree_counts_agree_in_law() {
        // Same seeds cannot be shared (sampling orders differ), so compare
        // means at depth 6 against the exact spine value.
        let law = lattice3();
        let p = CountParams::new(1.5, 2.0, 2.0);
        let exact = mean_count_exact(&law, 6, &p, XiSign::default()).unwrap();
        let mut m = Moments::new();
        for i in 0..20_000 {
            let t = grow(&law, 6, 0.0, &GrowOptions::default(), &mut SeedSource::new(8).stream(i)).unwrap();
            let c = tree_counts(&t, 6, &p, XiSign::default()).unwrap();
            assert!(c.pairing_holds());
            m.push(c.count as f64);
        }
        assert!(Estimate::from_moments(&m).within(exact, 4.0));
        let d = truncated_counts(&law, 6, &p, &CountOptions::default(), 20_000, &SeedSource::new(9)).unwrap();
        assert!(d.mean.within(exact, 4.0), "{:?} vs {exact}", d.mean);
    }

    #[test]
    fn counts_reject_bad_parameters() {
        let law = lattice3();
        let opts = CountOptions::default();
        let s = SeedSource::new(1);
        assert!(truncated_counts(&law, 2, &CountParams::new(-1.0, 1.0, 1.0), &opts, 10, &s).is_err());
        assert!(truncated_counts(&law, 2, &CountParams::new(1.0, -1.0, 1.0), &opts, 10, &s).is_err());
    }

    #[test]
    fn z_sweep_is_monotone() {
        let s = sweep_z(&lattice3(), &[16, 64], &[0.0, 1.0, 2.0], 1.0, &[1.0, 2.0, 4.0, 8.0], 0.5, XiSign::default()).unwrap();
        for w in s.rows.chunks(6).collect::<Vec<_>>().windows(2) {
            for (a, b) in w[0].iter().zip(w[1]) {
                assert!(b.mean >= a.mean);
            }
        }
        assert!(s.chosen.is_some());
    }

    #[test]
    fn tail_depth_one_anchor() {
        let t = tail_estimate(&lattice3(), &[1], &[0.0], &PruneRule::none(), 20_000, &SeedSource::new(4), TailOptions::default()).unwrap();
        let c = &t.cells[0];
        assert!((c.exact.unwrap() - 0.48028942424057475).abs() < 1e-15);
        assert!(c.probability.within(0.48028942424057475, 4.0));
        assert!(t.valid && t.certificate.is_none());
    }

    #[test]
    fn tail_depth_two_matches_oracle() {
        let law = lattice3();
        let m2 = m_n(2);
        let exact = exact_expectation(&law, 2, 0.0, Measure::Plain, |t| (t.max_position(2) >= m2) as u8 as f64).unwrap();
        let t = tail_estimate(&law, &[2], &[0.0], &PruneRule::window(10.0), 20_000, &SeedSource::new(5), TailOptions::default()).unwrap();
        assert!((t.cells[0].exact.unwrap() - exact).abs() < 1e-14);
        assert!(t.cells[0].probability.within(exact, 4.0));
        assert!(t.valid);
    }

    #[test]
    fn tail_rejects_large_y() {
        let r = tail_estimate(&lattice3(), &[4], &[3.0], &PruneRule::none(), 10, &SeedSource::new(1), TailOptions::default());
        assert!(r.is_err());
    }

    #[test]
    fn frontier_depth_one_and_far_y() {
        let law = lattice3();
        let r = frontier_crossing(&law, 1, 2.0, None, 40.0, 20_000, &SeedSource::new(6)).unwrap();
        assert!(r.probability.within(0.13841495684154514, 4.0));
        let e = r.exact.unwrap();
        assert!(r.mean_first_crossings.within(e.mean_first_crossings, 4.0));
        let far = frontier_crossing(&law, 16, 45.0, None, 40.0, 100, &SeedSource::new(6)).unwrap();
        assert_eq!(far.probability.value, 0.0);
        let y0 = frontier_crossing(&law, 8, 0.0, None, 40.0, 100, &SeedSource::new(6)).unwrap();
        assert_eq!(y0.probability.value, 1.0);
    }

    #[test]
    fn frontier_rejects_biased_rules() {
        let law = lattice3();
        let s = SeedSource::new(1);
        assert!(frontier_crossing(&law, 8, 1.0, Some(&PruneRule::window(50.0)), 40.0, 10, &s).is_err());
        let high = PruneRule::barrier(Barrier::Frontier { n: 8, y: 1.0, offset: -5.0 });
        assert!(frontier_crossing(&law, 8, 1.0, Some(&high), 40.0, 10, &s).is_err());
    }

    #[test]
    fn first_crossings_on_trees_match_exact_mean() {
        let law = lattice3();
        for (n, y) in [(2usize, 1.0), (3, 0.5)] {
            let exact = crossing_exact(&law, n, y).unwrap();
            let (mut p, mut m) = (0.0, 0.0);
            enumerate(&law, n, 0.0, ENUMERATION_CAP, |o| {
                let z = tree_first_crossings(o.tree, n, y).unwrap();
                let total: u128 = z.iter().sum();
                p += o.probability * (total > 0) as u8 as f64;
                m += o.probability * total as f64;
            })
            .unwrap();
            assert!((p - exact.probability).abs() < 1e-10, "n={n}: {p} vs {}", exact.probability);
            assert!((m - exact.mean_first_crossings).abs() < 1e-10);
        }
    }

    #[test]
    fn genealogy_depth_two_against_oracle() {
        let law = lattice3();
        let m2 = m_n(2);
        let exact = exact_expectation(&law, 2, 0.0, Measure::Plain, |t| {
            let sel: Vec<bool> = t.generation_positions(2).iter().map(|&v| v >= m2).collect();
            let (_, pairs) = pair_counts_by_mrca(t, 2, &sel);
            (pairs[1] > 0) as u8 as f64
        })
        .unwrap();
        let g = genealogy_stat(&law, 2, &[1, 2], &GenealogyEngine::Reduced, 40_000, &SeedSource::new(7)).unwrap();
        assert!(g.rows[0].q.within(exact, 4.0), "{:?} vs {exact}", g.rows[0].q);
        assert_eq!(g.rows[1].q.value, 0.0);
        let d = genealogy_stat(&law, 2, &[1], &GenealogyEngine::Direct(PruneRule::none()), 40_000, &SeedSource::new(8)).unwrap();
        assert!(d.rows[0].q.within(exact, 4.0));
    }

    #[test]
    fn reduced_and_direct_genealogies_agree() {
        let law = lattice3();
        let rs = [1, 2, 3];
        let a = genealogy_stat(&law, 8, &rs, &GenealogyEngine::Reduced, 20_000, &SeedSource::new(10)).unwrap();
        let b = genealogy_stat(&law, 8, &rs, &GenealogyEngine::Direct(PruneRule::none()), 20_000, &SeedSource::new(11)).unwrap();
        for (x, y) in a.rows.iter().zip(&b.rows) {
            assert!(x.q.agrees_with(&y.q, 4.0), "R={}: {:?} vs {:?}", x.r, x.q, y.q);
        }
        assert!(a.monotone && b.monotone);
    }

    #[test]
    fn concentration_depth_one_exact() {
        let r = concentration(&lattice3(), &[1, 16], &[0.0, 1.0, 2.0], &PruneRule::window(40.0), 20_000, &SeedSource::new(12)).unwrap();
        let row = &r.rows[0];
        assert_eq!(row.exact_median, Some(-2.0));
        assert_eq!(row.median, -2.0);
        for ((_, e), x) in row.exceedance.iter().zip(row.exact_exceedance.as_ref().unwrap()) {
            assert!(e.within(*x, 4.0), "{e:?} vs {x}");
        }
        assert!(r.monotone);
        let row = &r.rows[1];
        for ((_, e), x) in row.exceedance.iter().zip(row.exact_exceedance.as_ref().unwrap()) {
            assert!(e.within(*x, 4.0), "{e:?} vs {x}");
        }
    }
}
