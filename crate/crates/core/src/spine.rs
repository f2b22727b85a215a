//! The spinal decomposition: sampling trees with a distinguished ray under
//! the size-biased law, and paired estimators for the change-of-measure
//! identities (first moment, many-to-one, size-biasing, spine posterior).

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial as BinomialDist, DiscreteCDF};

use crate::estimate::{try_fold_replicates, Estimate, KahanSum, Moments, SeedSource, SimRng};
use crate::laws::{spine_child_law, verify_boundary, xi_of, OffspringLaw, TiltedLaw, VerifyMode, XiSign};
use crate::simulate::{PruneRule, DEFAULT_CAP};
use crate::tree::{MarkedTree, NodeId, TreeBuilder};
use crate::{Error, Result};

/// What the spine sees at one generation.
#[derive(Debug, Clone, PartialEq)]
pub struct SpineRecord {
    /// `V(w_{k+1}) - V(w_k)`.
    pub step: f64,
    /// Children of `w_k` other than `w_{k+1}` (those retained in the tree).
    pub siblings: Vec<NodeId>,
    /// Relative displacements of all siblings, retained or not.
    pub sibling_steps: Vec<f64>,
    /// `xi(w_k)` over all children of `w_k`.
    pub xi: f64,
}

#[derive(Debug, Clone)]
pub struct SpineRealization {
    pub tree: MarkedTree,
    /// `w_0, ..., w_n`.
    pub spine: Vec<NodeId>,
    pub records: Vec<SpineRecord>,
}

impl SpineRealization {
    /// Spine positions `V(w_0), ..., V(w_n)`.
    pub fn positions(&self) -> Vec<f64> {
        self.spine
            .iter()
            .map(|&w| self.tree.position(w).expect("spine node"))
            .collect()
    }

    /// Recompute `xi(w_k)` from the record and compare.
    pub fn xi_consistent(&self, sign: XiSign, tol: f64) -> bool {
        self.records.iter().all(|r| {
            let mut rel = r.sibling_steps.clone();
            rel.push(r.step);
            xi_of(0.0, &rel, sign).is_ok_and(|x| (x - r.xi).abs() <= tol)
        })
    }
}

/// Treatment of the subtrees hanging off the spine.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum OffSpine {
    /// Grow them as independent unpruned walks.
    #[default]
    Full,
    /// Grow them with a prune rule (spine child always kept).
    Pruned(PruneRule),
    /// Do not grow them at all.
    Drop,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpineOptions {
    pub off_spine: OffSpine,
    /// Must be set to use anything but [`OffSpine::Full`]: the caller
    /// declares that its estimand only looks at the spine.
    pub spine_marginal: bool,
    pub xi_sign: XiSign,
}

impl SpineOptions {
    pub fn spine_only() -> Self {
        SpineOptions {
            off_spine: OffSpine::Drop,
            spine_marginal: true,
            ..Self::default()
        }
    }
}

/// Sample `(T, V, w)` to depth `n` under the spine construction from `x`.
pub fn sample_spine<R: Rng + ?Sized>(
    law: &OffspringLaw,
    tilted: &TiltedLaw,
    n: usize,
    x: f64,
    opts: &SpineOptions,
    rng: &mut R,
) -> Result<SpineRealization> {
    if opts.off_spine != OffSpine::Full && !opts.spine_marginal {
        return Err(Error::Contract(
            "off-spine pruning requires the spine-marginal flag".into(),
        ));
    }
    let mut b = TreeBuilder::new(x);
    let mut spine_idx = vec![0usize];
    let mut records = Vec::with_capacity(n);
    let mut kids = Vec::new();
    let mut cand_pos: Vec<f64> = Vec::new();
    let mut cand_parent: Vec<usize> = Vec::new();
    for k in 0..n {
        let range = b.generation_range(k);
        cand_pos.clear();
        cand_parent.clear();
        let mut spine_cand = usize::MAX;
        for p in range {
            kids.clear();
            let pp = b.position(p);
            if p == spine_idx[k] {
                let j = tilted.sample(rng, &mut kids);
                if kids.is_empty() {
                    return Err(Error::Contract("tilted law produced no children".into()));
                }
                if let Some(&bad) = kids.iter().find(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(bad));
                }
                let xi = xi_of(0.0, &kids, opts.xi_sign)?;
                records.push(SpineRecord {
                    step: kids[j],
                    siblings: Vec::new(),
                    sibling_steps: kids
                        .iter()
                        .enumerate()
                        .filter(|&(i, _)| i != j)
                        .map(|(_, &v)| v)
                        .collect(),
                    xi,
                });
                for (i, &d) in kids.iter().enumerate() {
                    if i == j {
                        spine_cand = cand_pos.len();
                    } else if opts.off_spine == OffSpine::Drop {
                        continue;
                    }
                    cand_pos.push(pp + d);
                    cand_parent.push(p);
                }
            } else {
                law.sample_children(rng, &mut kids);
                if let Some(&bad) = kids.iter().find(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(bad));
                }
                for &d in &kids {
                    cand_pos.push(pp + d);
                    cand_parent.push(p);
                }
            }
        }
        let keep: Vec<usize> = match &opts.off_spine {
            OffSpine::Pruned(rule) if !rule.is_none() => {
                let mut pruned = crate::simulate::select(rule, k + 1, &cand_pos);
                if !pruned.contains(&spine_cand) {
                    pruned.push(spine_cand);
                    pruned.sort_unstable();
                }
                pruned
            }
            _ => (0..cand_pos.len()).collect(),
        };
        if b.len() + keep.len() > DEFAULT_CAP {
            return Err(Error::PopulationOverflow {
                size: (b.len() + keep.len()) as u128,
                cap: DEFAULT_CAP as u128,
            });
        }
        let mut j = 0;
        let mut block = Vec::new();
        let mut next_spine = usize::MAX;
        while j < keep.len() {
            let p = cand_parent[keep[j]];
            block.clear();
            let start = j;
            while j < keep.len() && cand_parent[keep[j]] == p {
                block.push(cand_pos[keep[j]]);
                j += 1;
            }
            let first = b.add_children(p, &block);
            if let Some(off) = keep[start..j].iter().position(|&c| c == spine_cand) {
                next_spine = first + off;
            }
            let offered = cand_parent.partition_point(|&q| q <= p) - cand_parent.partition_point(|&q| q < p);
            if j - start < offered {
                b.set_truncated(p, true);
            }
        }
        if opts.off_spine == OffSpine::Drop && kids.len() > 1 {
            b.set_truncated(spine_idx[k], true);
        }
        spine_idx.push(next_spine);
    }
    let tree = b.finish(n);
    let spine: Vec<NodeId> = spine_idx.iter().map(|&i| tree.node_at(i).expect("spine")).collect();
    for (k, r) in records.iter_mut().enumerate() {
        r.siblings = tree
            .children(spine[k])
            .expect("spine")
            .filter(|&c| c != spine[k + 1])
            .collect();
    }
    Ok(SpineRealization {
        tree,
        spine,
        records,
    })
}

/// Start, end, running minimum and maximum of a path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSummary {
    pub start: f64,
    pub end: f64,
    pub min: f64,
    pub max: f64,
}

impl PathSummary {
    pub fn of(path: &[f64]) -> Self {
        PathSummary {
            start: path[0],
            end: *path.last().expect("non-empty"),
            min: path.iter().copied().fold(f64::INFINITY, f64::min),
            max: path.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    fn extend(&self, v: f64) -> Self {
        PathSummary {
            start: self.start,
            end: v,
            min: self.min.min(v),
            max: self.max.max(v),
        }
    }
}

pub type CustomPathFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Bounded functional of a particle's path `(V(u_0), ..., V(u_n))`.
#[derive(Clone)]
pub enum PathFunctional {
    Const(f64),
    /// `1{V(u_n) >= t}`.
    EndAtLeast(f64),
    /// `1{a <= V(u_n) <= b}`.
    EndBetween(f64, f64),
    /// `1{min_j V(u_j) >= t}`.
    StayAtLeast(f64),
    /// `1{max_j V(u_j) <= t}`.
    StayAtMost(f64),
    /// `1{min >= lo, a <= end <= b}`.
    StayAboveEndBetween { lo: f64, a: f64, b: f64 },
    /// `1{max >= h, end >= t}`.
    ReachEndAtLeast { h: f64, t: f64 },
    /// `e^{-rate (end - floor)} 1{end >= floor}`.
    EndDecay { floor: f64, rate: f64 },
    /// `exp(-(end - c)^2 / 2)`.
    GaussianBump(f64),
    /// Arbitrary path function with a declared bound on `|f|` and, if the
    /// function vanishes below some endpoint, that floor.
    Custom {
        name: String,
        bound: f64,
        end_floor: Option<f64>,
        f: CustomPathFn,
    },
}

impl std::fmt::Debug for PathFunctional {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.name())
    }
}

impl PathFunctional {
    pub fn name(&self) -> String {
        match self {
            PathFunctional::Const(c) => format!("const({c})"),
            PathFunctional::EndAtLeast(t) => format!("end>={t}"),
            PathFunctional::EndBetween(a, b) => format!("end in [{a},{b}]"),
            PathFunctional::StayAtLeast(t) => format!("min>={t}"),
            PathFunctional::StayAtMost(t) => format!("max<={t}"),
            PathFunctional::StayAboveEndBetween { lo, a, b } => format!("min>={lo}, end in [{a},{b}]"),
            PathFunctional::ReachEndAtLeast { h, t } => format!("max>={h}, end>={t}"),
            PathFunctional::EndDecay { floor, rate } => format!("exp(-{rate}(end-{floor}))1{{end>={floor}}}"),
            PathFunctional::GaussianBump(c) => format!("bump({c})"),
            PathFunctional::Custom { name, .. } => name.clone(),
        }
    }

    fn needs_path(&self) -> bool {
        matches!(self, PathFunctional::Custom { .. })
    }

    pub fn eval(&self, s: &PathSummary, path: &[f64]) -> f64 {
        let ind = |b: bool| if b { 1.0 } else { 0.0 };
        match self {
            PathFunctional::Const(c) => *c,
            PathFunctional::EndAtLeast(t) => ind(s.end >= *t),
            PathFunctional::EndBetween(a, b) => ind(s.end >= *a && s.end <= *b),
            PathFunctional::StayAtLeast(t) => ind(s.min >= *t),
            PathFunctional::StayAtMost(t) => ind(s.max <= *t),
            PathFunctional::StayAboveEndBetween { lo, a, b } => ind(s.min >= *lo && s.end >= *a && s.end <= *b),
            PathFunctional::ReachEndAtLeast { h, t } => ind(s.max >= *h && s.end >= *t),
            PathFunctional::EndDecay { floor, rate } => {
                if s.end >= *floor {
                    (-rate * (s.end - floor)).exp()
                } else {
                    0.0
                }
            }
            PathFunctional::GaussianBump(c) => (-(s.end - c).powi(2) / 2.0).exp(),
            PathFunctional::Custom { f, .. } => f(path),
        }
    }

    pub fn eval_path(&self, path: &[f64]) -> f64 {
        self.eval(&PathSummary::of(path), path)
    }

    /// `sup |f|`.
    pub fn bound(&self) -> f64 {
        match self {
            PathFunctional::Const(c) => c.abs(),
            PathFunctional::Custom { bound, .. } => *bound,
            _ => 1.0,
        }
    }

    fn is_zero(&self) -> bool {
        matches!(self, PathFunctional::Const(c) if *c == 0.0)
    }

    /// Lower bound on `V(u_n) - x` on the support of `f`, if any.
    pub fn end_floor(&self, x: f64) -> Option<f64> {
        match self {
            PathFunctional::EndAtLeast(t) => Some(t - x),
            PathFunctional::EndBetween(a, _) => Some(a - x),
            PathFunctional::StayAtLeast(t) => Some(t - x),
            PathFunctional::StayAboveEndBetween { lo, a, .. } => Some(lo.max(*a) - x),
            PathFunctional::ReachEndAtLeast { t, .. } => Some(t - x),
            PathFunctional::EndDecay { floor, .. } => Some(floor - x),
            PathFunctional::Custom { end_floor, .. } => end_floor.map(|f| f - x),
            _ => None,
        }
    }

    /// `sup e^{x - S_n} |f(S)|` given the lowest reachable endpoint offset.
    pub fn weighted_bound(&self, x: f64, lowest_end: Option<f64>) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        let floor = match (self.end_floor(x), lowest_end) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        };
        match floor {
            Some(f) => self.bound() * (-f).exp(),
            None => f64::INFINITY,
        }
    }
}

/// The default bounded battery used by `brwlab spine-check`.
pub fn default_path_battery() -> Vec<PathFunctional> {
    vec![
        PathFunctional::EndAtLeast(0.0),
        PathFunctional::EndAtLeast(-1.0),
        PathFunctional::EndBetween(-1.0, 2.0),
        PathFunctional::StayAtLeast(-3.0),
        PathFunctional::StayAboveEndBetween { lo: -2.0, a: 0.0, b: 3.0 },
        PathFunctional::ReachEndAtLeast { h: 2.0, t: 0.0 },
        PathFunctional::EndDecay { floor: -1.0, rate: 0.5 },
    ]
}

fn lowest_endpoint(law: &OffspringLaw, n: usize) -> Option<f64> {
    law.outcomes().map(|o| {
        let vmin = o
            .iter()
            .flat_map(|x| x.displacements.iter().copied())
            .fold(f64::INFINITY, f64::min);
        vmin.min(0.0) * n as f64
    })
}

fn expected_population(law: &OffspringLaw, n: usize) -> Result<f64> {
    let r = match law.outcomes() {
        Some(_) => verify_boundary(law, VerifyMode::Exact, 1e-9)?.supercritical_mean.value,
        None => verify_boundary(law, VerifyMode::MonteCarlo { reps: 20_000, seed: 0 }, 1e-2)?
            .supercritical_mean
            .value,
    };
    Ok(r.powi(n as i32))
}

/// Sum `f(path(u))` over generation-`n` particles of one unpruned tree,
/// generated depth first without storing the tree.
fn dfs_sums<R: Rng + ?Sized>(
    law: &OffspringLaw,
    n: usize,
    x: f64,
    fs: &[PathFunctional],
    rng: &mut R,
    out: &mut [f64],
) -> Result<()> {
    let need_path = fs.iter().any(|f| f.needs_path());
    let mut path = vec![x];
    // One child buffer per generation, reused across the whole tree.
    let mut kids: Vec<Vec<f64>> = vec![Vec::new(); n];
    fn rec<R: Rng + ?Sized>(
        law: &OffspringLaw,
        s: PathSummary,
        fs: &[PathFunctional],
        rng: &mut R,
        out: &mut [f64],
        path: &mut Vec<f64>,
        need_path: bool,
        kids: &mut [Vec<f64>],
    ) -> Result<()> {
        let Some((mine, deeper)) = kids.split_first_mut() else {
            for (o, f) in out.iter_mut().zip(fs) {
                *o += f.eval(&s, path);
            }
            return Ok(());
        };
        mine.clear();
        law.sample_children(rng, mine);
        if deeper.is_empty() && !need_path {
            for &d in mine.iter() {
                if !d.is_finite() {
                    return Err(Error::NonFinite(d));
                }
                let leaf = s.extend(s.end + d);
                for (o, f) in out.iter_mut().zip(fs) {
                    *o += f.eval(&leaf, path);
                }
            }
            return Ok(());
        }
        for &d in mine.iter() {
            if !d.is_finite() {
                return Err(Error::NonFinite(d));
            }
            let v = s.end + d;
            if need_path {
                path.push(v);
            }
            rec(law, s.extend(v), fs, rng, out, path, need_path, deeper)?;
            if need_path {
                path.pop();
            }
        }
        Ok(())
    }
    let s = PathSummary {
        start: x,
        end: x,
        min: x,
        max: x,
    };
    rec(law, s, fs, rng, out, &mut path, need_path, &mut kids)
}

/// Paired estimates of one identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEstimate {
    pub name: String,
    pub lhs: Estimate,
    pub rhs: Estimate,
}

impl PairEstimate {
    /// Agreement within `k` combined standard errors.
    pub fn agrees(&self, k: f64) -> bool {
        let tol = k * self.lhs.combined_se(&self.rhs);
        (self.lhs.value - self.rhs.value).abs() <= tol.max(1e-12 * self.lhs.value.abs().max(1.0))
    }
}

/// Many-to-one pairs for a battery of path functionals: the left side sums
/// over all generation-`n` particles of unpruned trees, the right side
/// weights spine walks by `e^{x - S_n}`. The two sides use independent
/// streams derived from `seeds`.
pub fn many_to_one_pair(
    law: &OffspringLaw,
    n: usize,
    x: f64,
    fs: &[PathFunctional],
    prune: &PruneRule,
    reps: u64,
    seeds: &SeedSource,
) -> Result<Vec<PairEstimate>> {
    if !prune.is_none() {
        return Err(Error::Contract("the particle side of many-to-one must be unpruned".into()));
    }
    let lowest = lowest_endpoint(law, n);
    for f in fs {
        let wb = f.weighted_bound(x, lowest);
        if !wb.is_finite() || !f.bound().is_finite() {
            return Err(Error::InvalidArgument(format!(
                "functional `{}` is unbounded once weighted by e^(x - S_n)",
                f.name()
            )));
        }
    }
    let pop = expected_population(law, n)?;
    if pop > DEFAULT_CAP as f64 {
        return Err(Error::PopulationOverflow {
            size: pop as u128,
            cap: DEFAULT_CAP as u128,
        });
    }
    let m = fs.len();
    let lhs = try_fold_replicates(
        reps,
        &seeds.child(1),
        || vec![Moments::new(); m],
        |acc: &mut Vec<Moments>, _, rng: &mut SimRng| {
            let mut out = vec![0.0; m];
            dfs_sums(law, n, x, fs, rng, &mut out)?;
            acc.iter_mut().zip(out).for_each(|(a, v)| a.push(v));
            Ok(())
        },
    )?;
    let tilted = spine_child_law(law)?;
    let need_path = fs.iter().any(|f| f.needs_path());
    let rhs = try_fold_replicates(
        reps,
        &seeds.child(2),
        || vec![Moments::new(); m],
        |acc: &mut Vec<Moments>, _, rng: &mut SimRng| {
            let mut path = Vec::with_capacity(n + 1);
            path.push(x);
            let mut s = PathSummary {
                start: x,
                end: x,
                min: x,
                max: x,
            };
            let mut kids = Vec::new();
            for _ in 0..n {
                kids.clear();
                let j = tilted.sample(rng, &mut kids);
                let v = s.end + kids[j];
                s = s.extend(v);
                if need_path {
                    path.push(v);
                }
            }
            // Weight accumulated in log space, exponentiated once.
            let logw = x - s.end;
            for (a, f) in acc.iter_mut().zip(fs) {
                let fv = f.eval(&s, &path);
                a.push(if fv == 0.0 { 0.0 } else { fv * logw.exp() });
            }
            Ok(())
        },
    )?;
    Ok(fs
        .iter()
        .zip(lhs.iter().zip(&rhs))
        .map(|(f, (l, r))| PairEstimate {
            name: f.name(),
            lhs: Estimate::from_moments(l),
            rhs: Estimate::from_moments(r),
        })
        .collect())
}

pub type CustomTreeFn = Arc<dyn Fn(&MarkedTree, usize) -> f64 + Send + Sync>;

/// Functional of the tree up to generation `n` (never of the spine).
#[derive(Clone)]
pub enum TreeFunctional {
    One,
    Population,
    Martingale,
    MaxAtLeast(f64),
    /// `max(M_n, floor)`.
    ClippedMax(f64),
    /// `max(min_{|u|=n} V(u), floor)`.
    ClippedMin(f64),
    DerivativeSum,
    CountAtLeast(f64),
    MartingaleSquared,
    TotalNodes,
    FirstGenerationMaxAtLeast(f64),
    PositionSum,
    /// Ordered pairs at generation `n` with `V(u) + V(v) >= t`.
    PairsSumAtLeast(f64),
    ExpMinusMartingale,
    /// Particles at `n` whose path never went below `t`.
    CountStayedAtLeast(f64),
    /// Largest position over all generations up to `n`.
    GlobalMax,
    MartingaleAbove(f64),
    /// Number of nodes before generation `n` with no children.
    DeadNodes,
    /// `1{M_n - min_{|u|=n} V(u) >= d}`.
    SpreadAtLeast(f64),
    /// `sum_{|u|=n} sin(V(u))`.
    SinSum,
    Custom { name: String, f: CustomTreeFn },
}

impl std::fmt::Debug for TreeFunctional {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.name())
    }
}

impl TreeFunctional {
    pub fn name(&self) -> String {
        match self {
            TreeFunctional::One => "one".into(),
            TreeFunctional::Population => "population".into(),
            TreeFunctional::Martingale => "W_n".into(),
            TreeFunctional::MaxAtLeast(t) => format!("1{{M_n>={t}}}"),
            TreeFunctional::ClippedMax(f) => format!("max(M_n,{f})"),
            TreeFunctional::ClippedMin(f) => format!("max(min_n,{f})"),
            TreeFunctional::DerivativeSum => "sum V e^V".into(),
            TreeFunctional::CountAtLeast(t) => format!("#{{V>={t}}}"),
            TreeFunctional::MartingaleSquared => "W_n^2".into(),
            TreeFunctional::TotalNodes => "nodes".into(),
            TreeFunctional::FirstGenerationMaxAtLeast(t) => format!("1{{M_1>={t}}}"),
            TreeFunctional::PositionSum => "sum V".into(),
            TreeFunctional::PairsSumAtLeast(t) => format!("pairs(V+V'>={t})"),
            TreeFunctional::ExpMinusMartingale => "exp(-W_n)".into(),
            TreeFunctional::CountStayedAtLeast(t) => format!("#{{min path>={t}}}"),
            TreeFunctional::GlobalMax => "global max".into(),
            TreeFunctional::MartingaleAbove(t) => format!("1{{W_n>{t}}}"),
            TreeFunctional::DeadNodes => "dead nodes".into(),
            TreeFunctional::SpreadAtLeast(d) => format!("1{{spread>={d}}}"),
            TreeFunctional::SinSum => "sum sin V".into(),
            TreeFunctional::Custom { name, .. } => name.clone(),
        }
    }

    pub fn eval(&self, t: &MarkedTree, n: usize) -> f64 {
        self.eval_with(&TreeStats::of(t, n))
    }

    /// Evaluate a battery on one tree, sharing the generation-`n` summary.
    pub fn eval_all(fs: &[TreeFunctional], t: &MarkedTree, n: usize, out: &mut [f64]) {
        let st = TreeStats::of(t, n);
        for (o, f) in out.iter_mut().zip(fs) {
            *o = f.eval_with(&st);
        }
    }

    fn eval_with(&self, st: &TreeStats<'_>) -> f64 {
        let TreeStats { t, n, gen, mx, mn, w } = *st;
        let ind = |b: bool| if b { 1.0 } else { 0.0 };
        match self {
            TreeFunctional::One => 1.0,
            TreeFunctional::Population => gen.len() as f64,
            TreeFunctional::Martingale => w,
            TreeFunctional::MaxAtLeast(x) => ind(mx >= *x),
            TreeFunctional::ClippedMax(f) => mx.max(*f),
            TreeFunctional::ClippedMin(f) => mn.max(*f),
            TreeFunctional::DerivativeSum => gen.iter().map(|v| v * v.exp()).collect::<KahanSum>().value(),
            TreeFunctional::CountAtLeast(x) => gen.iter().filter(|&&v| v >= *x).count() as f64,
            TreeFunctional::MartingaleSquared => w.powi(2),
            TreeFunctional::TotalNodes => (0..=n).map(|k| t.generation_size(k)).sum::<usize>() as f64,
            TreeFunctional::FirstGenerationMaxAtLeast(x) => ind(n >= 1 && t.max_position(1) >= *x),
            TreeFunctional::PositionSum => gen.iter().copied().collect::<KahanSum>().value(),
            TreeFunctional::PairsSumAtLeast(x) => {
                let mut c = 0usize;
                for (i, a) in gen.iter().enumerate() {
                    for (j, b) in gen.iter().enumerate() {
                        if i != j && a + b >= *x {
                            c += 1;
                        }
                    }
                }
                c as f64
            }
            TreeFunctional::ExpMinusMartingale => (-w).exp(),
            TreeFunctional::CountStayedAtLeast(x) => {
                let pos = t.raw_positions();
                t.generation_range(n)
                    .filter(|&i| {
                        let mut cur = Some(i);
                        while let Some(j) = cur {
                            if pos[j] < *x {
                                return false;
                            }
                            cur = t.raw_parent(j);
                        }
                        true
                    })
                    .count() as f64
            }
            TreeFunctional::GlobalMax => (0..=n).map(|k| t.max_position(k)).fold(f64::NEG_INFINITY, f64::max),
            TreeFunctional::MartingaleAbove(x) => ind(w > *x),
            TreeFunctional::DeadNodes => (0..n)
                .flat_map(|k| t.generation_nodes(k))
                .filter(|&u| t.children(u).expect("valid").next().is_none())
                .count() as f64,
            TreeFunctional::SpreadAtLeast(d) => ind(!gen.is_empty() && mx - mn >= *d),
            TreeFunctional::SinSum => gen.iter().map(|v| v.sin()).sum(),
            TreeFunctional::Custom { f, .. } => f(t, n),
        }
    }
}

/// Generation-`n` summary shared by a battery of tree functionals.
#[derive(Clone, Copy)]
struct TreeStats<'a> {
    t: &'a MarkedTree,
    n: usize,
    gen: &'a [f64],
    mx: f64,
    mn: f64,
    w: f64,
}

impl<'a> TreeStats<'a> {
    fn of(t: &'a MarkedTree, n: usize) -> Self {
        let gen = t.generation_positions(n);
        TreeStats {
            t,
            n,
            gen,
            mx: t.max_position(n),
            mn: gen.iter().copied().fold(f64::INFINITY, f64::min),
            w: t.additive_martingale(n),
        }
    }
}

/// Twenty tree functionals exercising population, positions, martingale
/// and shape.
pub fn tree_battery() -> Vec<TreeFunctional> {
    vec![
        TreeFunctional::One,
        TreeFunctional::Population,
        TreeFunctional::Martingale,
        TreeFunctional::MaxAtLeast(0.0),
        TreeFunctional::MaxAtLeast(-1.0),
        TreeFunctional::ClippedMax(-10.0),
        TreeFunctional::ClippedMin(-10.0),
        TreeFunctional::DerivativeSum,
        TreeFunctional::CountAtLeast(0.0),
        TreeFunctional::MartingaleSquared,
        TreeFunctional::TotalNodes,
        TreeFunctional::FirstGenerationMaxAtLeast(1.0),
        TreeFunctional::PositionSum,
        TreeFunctional::PairsSumAtLeast(-1.0),
        TreeFunctional::ExpMinusMartingale,
        TreeFunctional::CountStayedAtLeast(-2.0),
        TreeFunctional::GlobalMax,
        TreeFunctional::MartingaleAbove(1.0),
        TreeFunctional::SpreadAtLeast(2.0),
        TreeFunctional::SinSum,
    ]
}

/// `E[W_n F]` under the plain law against `Ê[F]` under the spine
/// construction, for tree functionals `F` up to generation `n`.
pub fn size_biased_pair(
    law: &OffspringLaw,
    n: usize,
    fs: &[TreeFunctional],
    reps: u64,
    seeds: &SeedSource,
) -> Result<Vec<PairEstimate>> {
    let pop = expected_population(law, n)?;
    if pop > DEFAULT_CAP as f64 {
        return Err(Error::PopulationOverflow {
            size: pop as u128,
            cap: DEFAULT_CAP as u128,
        });
    }
    let m = fs.len();
    let e_side = try_fold_replicates(
        reps,
        &seeds.child(1),
        || vec![Moments::new(); m],
        |acc: &mut Vec<Moments>, _, rng: &mut SimRng| {
            let t = crate::simulate::grow(law, n, 0.0, &Default::default(), rng)?;
            let w = t.additive_martingale(n);
            acc.iter_mut().zip(fs).for_each(|(a, f)| a.push(w * f.eval(&t, n)));
            Ok(())
        },
    )?;
    let tilted = spine_child_law(law)?;
    let hat_side = try_fold_replicates(
        reps,
        &seeds.child(2),
        || vec![Moments::new(); m],
        |acc: &mut Vec<Moments>, _, rng: &mut SimRng| {
            let s = sample_spine(law, &tilted, n, 0.0, &SpineOptions::default(), rng)?;
            acc.iter_mut().zip(fs).for_each(|(a, f)| a.push(f.eval(&s.tree, n)));
            Ok(())
        },
    )?;
    Ok(fs
        .iter()
        .zip(e_side.iter().zip(&hat_side))
        .map(|(f, (l, r))| PairEstimate {
            name: f.name(),
            lhs: Estimate::from_moments(l),
            rhs: Estimate::from_moments(r),
        })
        .collect())
}

/// First-moment identity `E[A_n] = e^x Ê[e^{-V(w_n)} 1{w_n in A_n}]` for a
/// path selector.
pub fn selector_moment_pair(
    law: &OffspringLaw,
    n: usize,
    x: f64,
    selector: &PathFunctional,
    reps: u64,
    seeds: &SeedSource,
) -> Result<PairEstimate> {
    if !selector.weighted_bound(x, lowest_endpoint(law, n)).is_finite() {
        return Err(Error::InvalidArgument(format!(
            "selector `{}` is unbounded once weighted by e^(x - S_n)",
            selector.name()
        )));
    }
    let direct = try_fold_replicates(reps, &seeds.child(1), Moments::new, |acc: &mut Moments, _, rng: &mut SimRng| {
        let mut out = [0.0];
        dfs_sums(law, n, x, std::slice::from_ref(selector), rng, &mut out)?;
        acc.push(out[0]);
        Ok(())
    })?;
    let tilted = spine_child_law(law)?;
    let spine_side = try_fold_replicates(reps, &seeds.child(2), Moments::new, |acc: &mut Moments, _, rng: &mut SimRng| {
        let s = sample_spine(law, &tilted, n, x, &SpineOptions::spine_only(), rng)?;
        let path = s.positions();
        let end = *path.last().expect("spine");
        let v = selector.eval_path(&path);
        acc.push(if v == 0.0 { 0.0 } else { v * (x - end).exp() });
        Ok(())
    })?;
    Ok(PairEstimate {
        name: selector.name(),
        lhs: Estimate::from_moments(&direct),
        rhs: Estimate::from_moments(&spine_side),
    })
}

/// One conditioning class of the posterior check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorClass {
    /// Tree dump identifying the class.
    pub key: String,
    pub samples: u64,
    /// Observed spine-leaf counts in breadth-first order.
    pub counts: Vec<u64>,
    /// `e^{V(u)} / W_n` per leaf.
    pub weights: Vec<f64>,
    /// Two-sided exact binomial p-value per leaf.
    pub p_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorReport {
    pub classes: Vec<PosteriorClass>,
    pub dropped_classes: usize,
    /// Sample-weighted squared-L2 distance between observed frequencies and
    /// weights, bias-corrected so that it has mean 0 when the weights are
    /// right; the standard error is its null-hypothesis scale.
    pub discrepancy: Estimate,
    pub min_p_value: f64,
    pub tests: usize,
    /// No leaf rejected at `alpha / tests`.
    pub pass: bool,
    pub alpha: f64,
}

fn binomial_two_sided(k: u64, n: u64, p: f64) -> f64 {
    if p <= 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if p >= 1.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    let d = BinomialDist::new(p, n).expect("valid binomial");
    let lower = d.cdf(k);
    let upper = if k == 0 { 1.0 } else { d.sf(k - 1) };
    (2.0 * lower.min(upper)).min(1.0)
}

/// Compare spine-leaf frequencies within each tree class against
/// `e^{V(u)} / W_n`. Classes with fewer than `min_samples` samples are
/// dropped and counted.
pub fn spine_posterior_check(
    law: &OffspringLaw,
    n: usize,
    reps: u64,
    seeds: &SeedSource,
    min_samples: u64,
    alpha: f64,
) -> Result<PosteriorReport> {
    if !law.is_enumerable() {
        return Err(Error::NotEnumerable(law.name().into()));
    }
    let tilted = spine_child_law(law)?;
    let samples = crate::estimate::map_replicates(reps, seeds, |_, rng| {
        let s = sample_spine(law, &tilted, n, 0.0, &SpineOptions::default(), rng)?;
        let leaf = s.spine[n].index() - s.tree.generation_range(n).start;
        Ok((s.tree.dump(), leaf, s.tree.generation_positions(n).to_vec()))
    })?;
    let mut classes: BTreeMap<String, (Vec<u64>, Vec<f64>)> = BTreeMap::new();
    for (key, leaf, pos) in samples {
        let e = classes.entry(key).or_insert_with(|| {
            let w: f64 = pos.iter().map(|v| v.exp()).sum();
            (vec![0; pos.len()], pos.iter().map(|v| v.exp() / w).collect())
        });
        e.0[leaf] += 1;
    }
    let mut out = Vec::new();
    let mut dropped = 0;
    let total: u64 = classes.values().map(|(c, _)| c.iter().sum::<u64>()).sum();
    let mut disc = 0.0;
    let mut disc_var = 0.0;
    let mut tests = 0usize;
    for (key, (counts, weights)) in classes {
        let m: u64 = counts.iter().sum();
        if m < min_samples {
            dropped += 1;
            continue;
        }
        let mf = m as f64;
        let wc = mf / total as f64;
        let mut d = 0.0;
        let mut v = 0.0;
        for (&c, &p) in counts.iter().zip(&weights) {
            let ph = c as f64 / mf;
            d += (ph - p).powi(2) - ph * (1.0 - ph) / (mf - 1.0);
            v += 2.0 * (p * (1.0 - p) / mf).powi(2);
        }
        disc += wc * d;
        disc_var += wc * wc * v;
        let p_values: Vec<f64> = if counts.len() > 1 {
            counts.iter().zip(&weights).map(|(&c, &p)| binomial_two_sided(c, m, p)).collect()
        } else {
            vec![1.0]
        };
        tests += p_values.len();
        out.push(PosteriorClass {
            key,
            samples: m,
            counts,
            weights,
            p_values,
        });
    }
    let min_p = out
        .iter()
        .flat_map(|c| c.p_values.iter().copied())
        .fold(1.0, f64::min);
    Ok(PosteriorReport {
        classes: out,
        dropped_classes: dropped,
        discrepancy: Estimate::new(disc, disc_var.sqrt(), reps),
        min_p_value: min_p,
        tests,
        pass: min_p >= alpha / tests.max(1) as f64,
        alpha,
    })
}

/// Pair counts of the second-moment identity for one tree: given which
/// generation-`n` particles are selected, returns `A_n` and
/// `A^{(2)}_{n,k}` for `k < n` (ordered pairs `u != v` with `|u ∧ v| = k`).
pub fn pair_counts_by_mrca(tree: &MarkedTree, n: usize, selected: &[bool]) -> (u128, Vec<u128>) {
    let range = tree.generation_range(n);
    assert_eq!(selected.len(), range.len(), "one flag per generation-n particle");
    let mut sub = vec![0u128; tree.len()];
    for (i, &s) in range.clone().zip(selected) {
        if s {
            sub[i] = 1;
        }
    }
    let mut pairs = vec![0u128; n];
    for k in (0..n).rev() {
        for z in tree.generation_range(k) {
            let mut s = 0u128;
            let mut sq = 0u128;
            for c in tree.child_range(z) {
                s += sub[c];
                sq += sub[c] * sub[c];
            }
            sub[z] = s;
            pairs[k] += s * s - sq;
        }
    }
    (selected.iter().filter(|&&s| s).count() as u128, pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::laws::spine_step_law;

    #[test]
    fn depth_zero_spine_is_root() {
        let law = OffspringLaw::lattice_three_point();
        let t = spine_child_law(&law).unwrap();
        let s = sample_spine(&law, &t, 0, 0.0, &SpineOptions::default(), &mut SeedSource::new(1).stream(0)).unwrap();
        assert_eq!(s.spine, vec![s.tree.root()]);
        assert!(s.records.is_empty());
    }

    #[test]
    fn spine_records_are_consistent() {
        let law = OffspringLaw::lattice_three_point();
        let t = spine_child_law(&law).unwrap();
        let mut rng = SeedSource::new(4).stream(0);
        for _ in 0..50 {
            let s = sample_spine(&law, &t, 4, 0.0, &SpineOptions::default(), &mut rng).unwrap();
            assert!(s.xi_consistent(XiSign::default(), 1e-12));
            for k in 0..4 {
                assert_eq!(s.tree.parent(s.spine[k + 1]).unwrap(), Some(s.spine[k]));
                assert_eq!(s.records[k].siblings.len(), 1);
                let d = s.tree.position(s.spine[k + 1]).unwrap() - s.tree.position(s.spine[k]).unwrap();
                assert_eq!(d, s.records[k].step);
            }
        }
    }

    #[test]
    fn off_spine_pruning_needs_flag() {
        let law = OffspringLaw::lattice_three_point();
        let t = spine_child_law(&law).unwrap();
        let opts = SpineOptions {
            off_spine: OffSpine::Drop,
            ..SpineOptions::default()
        };
        let e = sample_spine(&law, &t, 2, 0.0, &opts, &mut SeedSource::new(1).stream(0));
        assert!(matches!(e, Err(Error::Contract(_))));
        let s = sample_spine(&law, &t, 3, 0.0, &SpineOptions::spine_only(), &mut SeedSource::new(1).stream(0)).unwrap();
        assert_eq!(s.tree.len(), 4);
    }

    #[test]
    fn pruned_off_spine_keeps_spine() {
        let law = OffspringLaw::lattice_three_point();
        let t = spine_child_law(&law).unwrap();
        let opts = SpineOptions {
            off_spine: OffSpine::Pruned(PruneRule::beam(1)),
            spine_marginal: true,
            ..SpineOptions::default()
        };
        let s = sample_spine(&law, &t, 6, 0.0, &opts, &mut SeedSource::new(3).stream(0)).unwrap();
        for k in 1..=6 {
            assert!(s.tree.generation_size(k) <= 2);
            assert_eq!(s.tree.generation(s.spine[k]).unwrap(), k);
        }
    }

    #[test]
    fn spine_step_distribution_depth_one() {
        let law = OffspringLaw::lattice_three_point();
        let t = spine_child_law(&law).unwrap();
        let step = spine_step_law(&law).unwrap();
        let reps = 100_000u64;
        let counts = crate::estimate::map_replicates(reps, &SeedSource::new(8), |_, rng| {
            let s = sample_spine(&law, &t, 1, 0.0, &SpineOptions::spine_only(), rng)?;
            Ok(s.records[0].step)
        })
        .unwrap();
        let mut chi2 = 0.0;
        for &(v, p) in step.mass_function().unwrap() {
            let o = counts.iter().filter(|&&s| s == v).count() as f64;
            let e = p * reps as f64;
            chi2 += (o - e).powi(2) / e;
        }
        // 99% quantile of chi-square with 2 degrees of freedom.
        assert!(chi2 < 9.21, "chi2 = {chi2}");
    }

    #[test]
    fn many_to_one_lattice_depth_one() {
        let law = OffspringLaw::lattice_three_point();
        let fs = [PathFunctional::Const(1.0), PathFunctional::EndAtLeast(0.0), PathFunctional::Const(0.0)];
        let r = many_to_one_pair(&law, 1, 0.0, &fs, &PruneRule::none(), 50_000, &SeedSource::new(2)).unwrap();
        assert!(r[0].lhs.within(2.0, 1e-9));
        assert!(r[0].rhs.within(2.0, 4.0));
        assert!(r[1].lhs.within(0.558180904885186, 4.0));
        assert!(r[1].rhs.within(0.558180904885186, 4.0));
        assert_eq!((r[2].lhs.value, r[2].rhs.value), (0.0, 0.0));
        assert!(r.iter().all(|p| p.agrees(4.0)));
    }

    #[test]
    fn many_to_one_rejects_unbounded_and_pruned() {
        let law = OffspringLaw::binary_gaussian();
        let s = SeedSource::new(1);
        let e = many_to_one_pair(&law, 2, 0.0, &[PathFunctional::Const(1.0)], &PruneRule::none(), 10, &s);
        assert!(matches!(e, Err(Error::InvalidArgument(_))));
        let e = many_to_one_pair(&law, 2, 0.0, &[PathFunctional::EndAtLeast(0.0)], &PruneRule::beam(3), 10, &s);
        assert!(matches!(e, Err(Error::Contract(_))));
    }

    #[test]
    fn posterior_depth_one_class() {
        let law = OffspringLaw::lattice_three_point();
        let r = spine_posterior_check(&law, 1, 100_000, &SeedSource::new(5), 30, 0.01).unwrap();
        let c = r.classes.iter().find(|c| c.key == "()\t0\t0\n(1)\t1\t1\n(2)\t1\t0\n").unwrap();
        assert!((c.weights[0] - 0.7310585786300049).abs() < 1e-15);
        let equal = r.classes.iter().find(|c| c.key == "()\t0\t0\n(1)\t1\t0\n(2)\t1\t0\n").unwrap();
        assert_eq!(equal.weights, vec![0.5, 0.5]);
        assert!(r.pass, "min p = {}", r.min_p_value);
        assert!(r.discrepancy.value.abs() <= 4.0 * r.discrepancy.std_error);
    }

    #[test]
    fn pairing_identity_small_tree() {
        let law = OffspringLaw::lattice_three_point();
        let t = crate::simulate::grow(&law, 4, 0.0, &Default::default(), &mut SeedSource::new(1).stream(0)).unwrap();
        let sel: Vec<bool> = t.generation_positions(4).iter().map(|&v| v >= -3.0).collect();
        let (a, pairs) = pair_counts_by_mrca(&t, 4, &sel);
        assert_eq!(a * a, a + pairs.iter().sum::<u128>());
        // Brute force through the arena's mrca.
        let nodes: Vec<NodeId> = t.generation_nodes(4).zip(&sel).filter(|(_, &s)| s).map(|(u, _)| u).collect();
        let mut brute = vec![0u128; 4];
        for &u in &nodes {
            for &v in &nodes {
                if u != v {
                    brute[t.generation(t.mrca(u, v).unwrap()).unwrap()] += 1;
                }
            }
        }
        assert_eq!(brute, pairs);
    }
}
