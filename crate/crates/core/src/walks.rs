//! Random-walk estimates for the spine walk: exact lattice dynamic
//! programming and Monte Carlo for ballot, local-limit and excursion
//! probabilities, including walks enriched with a companion variable `xi`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::estimate::{fold_replicates, Estimate, KahanSum, Moments, SeedSource, SimRng};
use crate::laws::{cumulative_of, pick, spine_child_law, xi_of, OffspringLaw, TiltedLaw, XiSign};
use crate::{Error, Result};

/// Largest DP state (sites times flag layers) we allocate.
pub const MAX_SITES: usize = 50_000_000;

/// One atom of a discrete joint law of `(X, xi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WalkAtom {
    pub step: f64,
    pub xi: f64,
    pub mass: f64,
}

#[derive(Debug, Clone)]
enum Source {
    Atoms {
        cumulative: Vec<f64>,
    },
    Spine {
        tilted: TiltedLaw,
        sign: XiSign,
        xi_const: Option<f64>,
        flip: bool,
    },
}

/// Joint law of a walk step `X` and its companion `xi`.
#[derive(Debug, Clone)]
pub struct EnrichedWalkLaw {
    name: String,
    atoms: Option<Vec<WalkAtom>>,
    /// Span and integer offsets aligned with `atoms`.
    lattice: Option<(f64, Vec<i64>)>,
    source: Source,
}

/// Moment report of an enriched walk law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WalkMoments {
    pub mean: Estimate,
    pub variance: f64,
    /// `P(xi >= 0)`.
    pub xi_nonnegative: f64,
    /// `E[(xi_+)^2]`.
    pub xi_positive_square: f64,
    pub exact: bool,
}

impl WalkMoments {
    /// `P(xi >= 0) + E[(xi_+)^2]`.
    pub fn xi_factor(&self) -> f64 {
        self.xi_nonnegative + self.xi_positive_square
    }
}

fn integer_offset(v: f64, span: f64) -> Option<i64> {
    let q = v / span;
    let r = q.round();
    ((q - r).abs() <= 1e-9 * r.abs().max(1.0)).then_some(r as i64)
}

impl EnrichedWalkLaw {
    /// Explicit discrete joint law; `span` declares a lattice.
    pub fn from_atoms(name: &str, atoms: Vec<WalkAtom>, span: Option<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidLaw("no atoms".into()));
        }
        for a in &atoms {
            if !a.step.is_finite() || a.xi.is_nan() || !(a.mass >= 0.0) {
                return Err(Error::InvalidLaw(format!("bad atom {a:?}")));
            }
        }
        let total: f64 = atoms.iter().map(|a| a.mass).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidLaw(format!("masses sum to {total}")));
        }
        let lattice = match span {
            Some(s) => {
                if !(s > 0.0) {
                    return Err(Error::InvalidLaw(format!("span {s}")));
                }
                let offs: Option<Vec<i64>> = atoms.iter().map(|a| integer_offset(a.step, s)).collect();
                Some((s, offs.ok_or_else(|| Error::NotLattice(format!("{name} is not on span {s}")))?))
            }
            None => None,
        };
        let cumulative = cumulative_of(&atoms.iter().map(|a| a.mass).collect::<Vec<_>>());
        Ok(EnrichedWalkLaw {
            name: name.into(),
            atoms: Some(atoms),
            lattice,
            source: Source::Atoms { cumulative },
        })
    }

    /// Lattice walk with integer steps (in units of `span`) and constant `xi`.
    pub fn lattice_steps(name: &str, span: f64, steps: &[(i64, f64)], xi: f64) -> Result<Self> {
        let atoms = steps
            .iter()
            .map(|&(k, m)| WalkAtom {
                step: k as f64 * span,
                xi,
                mass: m,
            })
            .collect();
        Self::from_atoms(name, atoms, Some(span))
    }

    /// The spine walk of a branching random walk: `X` is the spine
    /// increment and `xi` the log-weighted summary of the spine's
    /// generation, both taken from one tilted reproduction.
    pub fn from_brw(law: &OffspringLaw, sign: XiSign) -> Result<Self> {
        let tilted = spine_child_law(law)?;
        match law.outcomes() {
            Some(outcomes) => {
                let mut atoms = Vec::new();
                for o in outcomes {
                    let xi = xi_of(0.0, &o.displacements, sign)?;
                    for &v in &o.displacements {
                        atoms.push(WalkAtom {
                            step: v,
                            xi,
                            mass: o.probability * v.exp(),
                        });
                    }
                }
                let span = law.lattice().map(|l| l.span);
                Self::from_atoms(&format!("{}-spine", law.name()), atoms, span)
            }
            None => Ok(EnrichedWalkLaw {
                name: format!("{}-spine", law.name()),
                atoms: None,
                lattice: None,
                source: Source::Spine {
                    tilted,
                    sign,
                    xi_const: None,
                    flip: false,
                },
            }),
        }
    }

    /// Same steps, `xi` replaced by the constant `c` (may be `-inf`).
    pub fn with_constant_xi(&self, c: f64) -> Self {
        let mut w = self.clone();
        if let Some(a) = &mut w.atoms {
            a.iter_mut().for_each(|a| a.xi = c);
        }
        if let Source::Spine { xi_const, .. } = &mut w.source {
            *xi_const = Some(c);
        }
        w.name = format!("{}[xi={c}]", self.name);
        w
    }

    /// The law of `(-X, xi)`. Atom order is kept, so lattice DP on the
    /// flipped law performs the same floating-point operations mirrored.
    pub fn flipped(&self) -> Self {
        let mut w = self.clone();
        if let Some(a) = &mut w.atoms {
            a.iter_mut().for_each(|a| a.step = -a.step);
        }
        if let Some((_, offs)) = &mut w.lattice {
            offs.iter_mut().for_each(|o| *o = -*o);
        }
        if let Source::Spine { flip, .. } = &mut w.source {
            *flip = !*flip;
        }
        w.name = format!("{}[flipped]", self.name);
        w
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn atoms(&self) -> Option<&[WalkAtom]> {
        self.atoms.as_deref()
    }

    pub fn span(&self) -> Option<f64> {
        self.lattice.as_ref().map(|l| l.0)
    }

    pub fn is_lattice(&self) -> bool {
        self.lattice.is_some()
    }

    fn require_lattice(&self) -> Result<(f64, &[i64], &[WalkAtom])> {
        match (&self.lattice, &self.atoms) {
            (Some((s, o)), Some(a)) => Ok((*s, o, a)),
            _ => Err(Error::NotLattice(self.name.clone())),
        }
    }

    /// Step offsets aggregated in first-appearance order.
    fn aggregated_steps(&self) -> Result<(f64, Vec<(i64, f64)>)> {
        let (span, offs, atoms) = self.require_lattice()?;
        let mut out: Vec<(i64, KahanSum)> = Vec::new();
        for (&o, a) in offs.iter().zip(atoms) {
            match out.iter_mut().find(|e| e.0 == o) {
                Some(e) => e.1.add(a.mass),
                None => {
                    let mut s = KahanSum::default();
                    s.add(a.mass);
                    out.push((o, s));
                }
            }
        }
        Ok((span, out.into_iter().map(|(o, s)| (o, s.value())).collect()))
    }

    /// Draw `(X, xi)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, scratch: &mut Vec<f64>) -> Result<(f64, f64)> {
        match &self.source {
            Source::Atoms { cumulative } => {
                let a = self.atoms.as_ref().expect("atoms")[pick(cumulative, rng)];
                Ok((a.step, a.xi))
            }
            Source::Spine {
                tilted,
                sign,
                xi_const,
                flip,
            } => {
                scratch.clear();
                let j = tilted.sample(rng, scratch);
                let xi = match xi_const {
                    Some(c) => *c,
                    None => xi_of(0.0, scratch, *sign)?,
                };
                if !xi.is_finite() && xi_const.is_none() {
                    return Err(Error::NonFinite(xi));
                }
                let x = if *flip { -scratch[j] } else { scratch[j] };
                Ok((x, xi))
            }
        }
    }

    /// Exact moments for discrete laws; otherwise `reps` samples from `seeds`.
    pub fn moments(&self, reps: u64, seeds: &SeedSource) -> Result<WalkMoments> {
        if let Some(atoms) = &self.atoms {
            let mean: KahanSum = atoms.iter().map(|a| a.step * a.mass).collect();
            let second: KahanSum = atoms.iter().map(|a| a.step * a.step * a.mass).collect();
            let nonneg: KahanSum = atoms.iter().filter(|a| a.xi >= 0.0).map(|a| a.mass).collect();
            let sq: KahanSum = atoms
                .iter()
                .filter(|a| a.xi > 0.0)
                .map(|a| a.xi * a.xi * a.mass)
                .collect();
            return Ok(WalkMoments {
                mean: Estimate::exact(mean.value()),
                variance: second.value() - mean.value().powi(2),
                xi_nonnegative: nonneg.value(),
                xi_positive_square: sq.value(),
                exact: true,
            });
        }
        let m = crate::estimate::try_fold_replicates(
            reps,
            seeds,
            || vec![Moments::new(); 4],
            |acc: &mut Vec<Moments>, _, rng: &mut SimRng| {
                let mut scratch = Vec::new();
                let (x, xi) = self.sample(rng, &mut scratch)?;
                acc[0].push(x);
                acc[1].push(x * x);
                acc[2].push(if xi >= 0.0 { 1.0 } else { 0.0 });
                acc[3].push(xi.max(0.0).powi(2));
                Ok(())
            },
        )?;
        Ok(WalkMoments {
            mean: Estimate::from_moments(&m[0]),
            variance: m[1].mean() - m[0].mean().powi(2),
            xi_nonnegative: m[2].mean(),
            xi_positive_square: m[3].mean(),
            exact: false,
        })
    }

    /// Check the walk assumptions: centred steps with positive finite variance.
    pub fn validate(&self) -> Result<WalkMoments> {
        let m = self.moments(100_000, &SeedSource::new(0))?;
        let centred = if m.exact {
            m.mean.value.abs() <= 1e-9
        } else {
            m.mean.within(0.0, 4.0)
        };
        if !centred {
            return Err(Error::InvalidLaw(format!("step mean {} is not 0", m.mean.value)));
        }
        if !(m.variance > 1e-12) || !m.variance.is_finite() {
            return Err(Error::InvalidLaw(format!("step variance {} must be positive", m.variance)));
        }
        Ok(m)
    }
}

/// Boundary curve `k -> f_n(k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Curve {
    Zero,
    /// `lambda * log((n - k + 1) / (n + 1))`; negative `lambda` gives the
    /// reflected curve.
    LogBoundary { lambda: f64 },
    /// Tabulated `f_n(0..=n)` for a single `n` with declared regularity
    /// constants: `|f(j)| <= a j^alpha` and `|f(n) - f(j)| <= a (n-j)^alpha`.
    General { table: Vec<f64>, a: f64, alpha: f64 },
}

impl Curve {
    pub fn at(&self, n: usize, k: usize) -> f64 {
        match self {
            Curve::Zero => 0.0,
            Curve::LogBoundary { lambda } => lambda * (((n - k + 1) as f64) / ((n + 1) as f64)).ln(),
            Curve::General { table, .. } => table[k],
        }
    }

    pub fn negated(&self) -> Curve {
        match self {
            Curve::Zero => Curve::Zero,
            Curve::LogBoundary { lambda } => Curve::LogBoundary { lambda: -lambda },
            Curve::General { table, a, alpha } => Curve::General {
                table: table.iter().map(|v| -v).collect(),
                a: *a,
                alpha: *alpha,
            },
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            Curve::Zero => Ok(()),
            Curve::LogBoundary { lambda } => {
                if lambda.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidArgument(format!("lambda {lambda}")))
                }
            }
            Curve::General { table, a, alpha } => {
                if table.len() != n + 1 {
                    return Err(Error::InvalidArgument(format!(
                        "curve table has {} entries, need {}",
                        table.len(),
                        n + 1
                    )));
                }
                if table[0] != 0.0 {
                    return Err(Error::InvalidArgument("curve must start at 0".into()));
                }
                if !(*alpha < 0.5) {
                    return Err(Error::InvalidArgument(format!("alpha {alpha} must be < 1/2")));
                }
                let tol = 1e-12;
                for j in 1..=n {
                    if table[j].abs() > a * (j as f64).powf(*alpha) + tol {
                        return Err(Error::InvalidArgument(format!("|f({j})| exceeds A j^alpha")));
                    }
                }
                for j in 0..n {
                    if (table[n] - table[j]).abs() > a * ((n - j) as f64).powf(*alpha) + tol {
                        return Err(Error::InvalidArgument(format!("|f(n) - f({j})| exceeds A (n-j)^alpha")));
                    }
                }
                Ok(())
            }
        }
    }
}

impl fmt::Display for Curve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Curve::Zero => write!(f, "zero"),
            Curve::LogBoundary { lambda } => write!(f, "log:{lambda}"),
            Curve::General { a, alpha, .. } => write!(f, "table(A={a},alpha={alpha})"),
        }
    }
}

impl FromStr for Curve {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "zero" => Ok(Curve::Zero),
            Some(("log", l)) => l
                .parse()
                .map(|lambda| Curve::LogBoundary { lambda })
                .map_err(|_| Error::InvalidArgument(format!("bad lambda in `{s}`"))),
            _ => Err(Error::InvalidArgument(format!("unknown curve `{s}` (zero | log:LAMBDA)"))),
        }
    }
}

/// Which side of the curve the excursion lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Orientation {
    /// `T_j >= f(j) - y` for all `j`, `T_n <= f(n) - y + H`.
    Above,
    /// `T_j <= f(j) + y` for all `j`, `T_n >= f(n) + y - H`.
    Below,
}

/// Path events for the plain walk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum WalkEvent {
    /// `T_j >= f(j) - y` for `j <= n`.
    Ballot { y: f64 },
    /// `T_j >= f(j) - y` for `j <= n` and `T_n - f(n) + y` in `[z - h, z]`.
    ExcursionUpper { y: f64, z: f64, h: f64 },
    /// Excursion ending within `window` of the shifted curve.
    ExcursionLower { y: f64, window: f64, orientation: Orientation },
    /// `T_n` in `[x, x + h]`.
    EndpointWindow { x: f64, h: f64 },
}

impl WalkEvent {
    pub fn name(&self) -> &'static str {
        match self {
            WalkEvent::Ballot { .. } => "ballot",
            WalkEvent::ExcursionUpper { .. } => "excursion-upper",
            WalkEvent::ExcursionLower { .. } => "excursion-lower",
            WalkEvent::EndpointWindow { .. } => "endpoint-window",
        }
    }

    /// Whether a path `T_0..T_n` belongs to the event.
    pub fn holds(&self, curve: &Curve, path: &[f64]) -> bool {
        let n = path.len() - 1;
        let f = |k: usize| curve.at(n, k);
        let t = path[n];
        match *self {
            WalkEvent::Ballot { y } => (0..=n).all(|j| path[j] >= f(j) - y),
            WalkEvent::ExcursionUpper { y, z, h } => {
                let e = t - f(n) + y;
                (0..=n).all(|j| path[j] >= f(j) - y) && e >= z - h && e <= z
            }
            WalkEvent::ExcursionLower { y, window, orientation } => match orientation {
                Orientation::Above => (0..=n).all(|j| path[j] >= f(j) - y) && t <= f(n) - y + window,
                Orientation::Below => (0..=n).all(|j| path[j] <= f(j) + y) && t >= f(n) + y - window,
            },
            WalkEvent::EndpointWindow { x, h } => t >= x && t <= x + h,
        }
    }

    /// Per-time lower and upper real barriers and the terminal window.
    fn barriers(&self, curve: &Curve, n: usize) -> (Vec<f64>, Vec<f64>, (f64, f64)) {
        let inf = f64::INFINITY;
        let f: Vec<f64> = (0..=n).map(|k| curve.at(n, k)).collect();
        match *self {
            WalkEvent::Ballot { y } => (f.iter().map(|v| v - y).collect(), vec![inf; n + 1], (-inf, inf)),
            WalkEvent::ExcursionUpper { y, z, h } => (
                f.iter().map(|v| v - y).collect(),
                vec![inf; n + 1],
                (f[n] - y + z - h, f[n] - y + z),
            ),
            WalkEvent::ExcursionLower { y, window, orientation } => match orientation {
                Orientation::Above => (f.iter().map(|v| v - y).collect(), vec![inf; n + 1], (-inf, f[n] - y + window)),
                Orientation::Below => (vec![-inf; n + 1], f.iter().map(|v| v + y).collect(), (f[n] + y - window, inf)),
            },
            WalkEvent::EndpointWindow { x, h } => (vec![-inf; n + 1], vec![inf; n + 1], (x, x + h)),
        }
    }
}

/// Events for the enriched walk `(T, xi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EnrichedEvent {
    /// `T_n <= f(n) - y + window`, `tau < n`, `T_j >= f(j) - y` for `j <= n`,
    /// with `tau = inf{k : T_k <= f(k) - y + xi_{k+1}}`.
    Excursion { y: f64, window: f64 },
    /// Some `1 <= k <= n` has `T_k <= f(k) - y + xi_k`, and
    /// `T_j >= f(j) - y` for `j <= n`.
    BallotSpine { y: f64 },
}

impl EnrichedEvent {
    pub fn name(&self) -> &'static str {
        match self {
            EnrichedEvent::Excursion { .. } => "enriched-excursion",
            EnrichedEvent::BallotSpine { .. } => "ballot-spine",
        }
    }

    fn y(&self) -> f64 {
        match *self {
            EnrichedEvent::Excursion { y, .. } | EnrichedEvent::BallotSpine { y } => y,
        }
    }

    /// `path` is `T_0..T_n`, `xis[k]` is `xi_{k+1}`.
    pub fn holds(&self, curve: &Curve, path: &[f64], xis: &[f64]) -> bool {
        let n = path.len() - 1;
        let y = self.y();
        let f = |k: usize| curve.at(n, k);
        if !(0..=n).all(|j| path[j] >= f(j) - y) {
            return false;
        }
        match *self {
            EnrichedEvent::Excursion { window, .. } => {
                path[n] <= f(n) - y + window && (0..n).any(|k| path[k] <= f(k) - y + xis[k])
            }
            EnrichedEvent::BallotSpine { .. } => (1..=n).any(|k| path[k] <= f(k) - y + xis[k - 1]),
        }
    }
}

fn ceil_site(v: f64, span: f64) -> i64 {
    if v == f64::NEG_INFINITY {
        return i64::MIN / 4;
    }
    let q = v / span;
    let r = q.round();
    if (q - r).abs() <= 1e-12 * r.abs().max(1.0) {
        r as i64
    } else {
        q.ceil() as i64
    }
}

fn floor_site(v: f64, span: f64) -> i64 {
    if v == f64::INFINITY {
        return i64::MAX / 4;
    }
    let q = v / span;
    let r = q.round();
    if (q - r).abs() <= 1e-12 * r.abs().max(1.0) {
        r as i64
    } else {
        q.floor() as i64
    }
}

/// Sum in ascending order, so mirrored arrays give identical totals.
fn canonical_sum(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.into_iter().collect::<KahanSum>().value()
}

/// Sub-probability distribution of `T_n` on a lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeDist {
    pub span: f64,
    /// Site of `mass[0]`.
    pub lo: i64,
    pub mass: Vec<f64>,
}

impl LatticeDist {
    pub fn total(&self) -> f64 {
        canonical_sum(&self.mass)
    }

    /// Mass of sites in the closed window `[a, b]`.
    pub fn mass_between(&self, a: f64, b: f64) -> f64 {
        if self.mass.is_empty() || a > b {
            return 0.0;
        }
        let hi_site = self.lo + self.mass.len() as i64 - 1;
        let s = ceil_site(a, self.span).max(self.lo);
        let e = floor_site(b, self.span).min(hi_site);
        if s > e {
            return 0.0;
        }
        canonical_sum(&self.mass[(s - self.lo) as usize..=(e - self.lo) as usize])
    }

    fn points(&self) -> Vec<(f64, f64)> {
        self.mass
            .iter()
            .enumerate()
            .map(|(i, &m)| ((self.lo + i as i64) as f64 * self.span, m))
            .collect()
    }
}

/// Forward DP for `T_n` killed outside `[lower(k), upper(k)]`.
pub fn dp_distribution(law: &EnrichedWalkLaw, n: usize, lower: &[f64], upper: &[f64]) -> Result<LatticeDist> {
    let (span, steps) = law.aggregated_steps()?;
    let dmin = steps.iter().map(|s| s.0).min().expect("steps");
    let dmax = steps.iter().map(|s| s.0).max().expect("steps");
    let empty = LatticeDist {
        span,
        lo: 0,
        mass: Vec::new(),
    };
    if 0 < ceil_site(lower[0], span) || 0 > floor_site(upper[0], span) {
        return Ok(empty);
    }
    let mut lo = 0i64;
    let mut cur = vec![1.0];
    for k in 1..=n {
        let hi = lo + cur.len() as i64 - 1;
        let nlo = (lo + dmin).max(ceil_site(lower[k], span));
        let nhi = (hi + dmax).min(floor_site(upper[k], span));
        if nlo > nhi {
            return Ok(empty);
        }
        let width = (nhi - nlo + 1) as usize;
        if width > MAX_SITES {
            return Err(Error::MemoryBound(width));
        }
        let mut next = vec![0.0; width];
        for (slot, i) in next.iter_mut().zip(nlo..=nhi) {
            let mut s = 0.0;
            for &(d, p) in &steps {
                let src = i - d;
                if src >= lo && src <= hi {
                    s += cur[(src - lo) as usize] * p;
                }
            }
            *slot = s;
        }
        lo = nlo;
        cur = next;
    }
    Ok(LatticeDist { span, lo, mass: cur })
}

/// Exact probability of a plain-walk event by lattice DP.
pub fn dp_exact(law: &EnrichedWalkLaw, curve: &Curve, n: usize, event: &WalkEvent) -> Result<f64> {
    curve.validate(n)?;
    let (lower, upper, (a, b)) = event.barriers(curve, n);
    let dist = dp_distribution(law, n, &lower, &upper)?;
    Ok(dist.mass_between(a, b))
}

/// Exact probability of an enriched event by DP over `(site, flag)` for
/// discrete lattice joint laws.
pub fn dp_enriched(law: &EnrichedWalkLaw, curve: &Curve, n: usize, event: &EnrichedEvent) -> Result<f64> {
    curve.validate(n)?;
    let (span, offs, atoms) = law.require_lattice()?;
    let y = event.y();
    let f: Vec<f64> = (0..=n).map(|k| curve.at(n, k)).collect();
    if 0.0 < f[0] - y {
        return Ok(0.0);
    }
    let dmin = *offs.iter().min().expect("atoms");
    let dmax = *offs.iter().max().expect("atoms");
    let mut lo = 0i64;
    // Layer 0: flag unset, layer 1: flag set.
    let mut cur = [vec![1.0], vec![0.0]];
    for k in 1..=n {
        let hi = lo + cur[0].len() as i64 - 1;
        let nlo = (lo + dmin).max(ceil_site(f[k] - y, span));
        let nhi = hi + dmax;
        if nlo > nhi {
            return Ok(0.0);
        }
        let width = (nhi - nlo + 1) as usize;
        if 2 * width > MAX_SITES {
            return Err(Error::MemoryBound(2 * width));
        }
        let mut next = [vec![0.0; width], vec![0.0; width]];
        for i in lo..=hi {
            let t = i as f64 * span;
            for (layer, src) in cur.iter().enumerate() {
                let m = src[(i - lo) as usize];
                if m == 0.0 {
                    continue;
                }
                for (&d, a) in offs.iter().zip(atoms) {
                    let j = i + d;
                    if j < nlo {
                        continue;
                    }
                    let trig = match event {
                        EnrichedEvent::Excursion { .. } => t <= f[k - 1] - y + a.xi,
                        EnrichedEvent::BallotSpine { .. } => j as f64 * span <= f[k] - y + a.xi,
                    };
                    let to = if layer == 1 || trig { 1 } else { 0 };
                    next[to][(j - nlo) as usize] += m * a.mass;
                }
            }
        }
        lo = nlo;
        cur = next;
    }
    let dist = LatticeDist {
        span,
        lo,
        mass: cur[1].clone(),
    };
    Ok(match event {
        EnrichedEvent::Excursion { window, .. } => dist.mass_between(f64::NEG_INFINITY, f[n] - y + window),
        EnrichedEvent::BallotSpine { .. } => dist.total(),
    })
}

/// Atoms merged by `(step, xi)`, or by step alone when `xi` is irrelevant.
fn merged_atoms(law: &EnrichedWalkLaw, n: usize, keep_xi: bool) -> Result<Vec<WalkAtom>> {
    let raw = law
        .atoms()
        .ok_or_else(|| Error::NotEnumerable(law.name().into()))?;
    let mut atoms: Vec<WalkAtom> = Vec::new();
    for a in raw {
        let xi = if keep_xi { a.xi } else { 0.0 };
        match atoms.iter_mut().find(|b| b.step == a.step && b.xi.to_bits() == xi.to_bits()) {
            Some(b) => b.mass += a.mass,
            None => atoms.push(WalkAtom { xi, ..*a }),
        }
    }
    let count = (atoms.len() as f64).powi(n as i32);
    if count > 1e7 {
        return Err(Error::EnumerationCap { count, cap: 1e7 });
    }
    Ok(atoms)
}

fn for_each_path(atoms: &[WalkAtom], n: usize, mut visit: impl FnMut(&[f64], &[f64], f64)) {
    let mut idx = vec![0usize; n];
    let mut path = vec![0.0; n + 1];
    let mut xis = vec![0.0; n];
    loop {
        let mut p = 1.0;
        for k in 0..n {
            let a = atoms[idx[k]];
            path[k + 1] = path[k] + a.step;
            xis[k] = a.xi;
            p *= a.mass;
        }
        visit(&path, &xis, p);
        let mut k = n;
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < atoms.len() {
                break;
            }
            idx[k] = 0;
        }
    }
}

/// Probability of a plain-walk event by enumerating every step sequence.
pub fn enumerate_probability(law: &EnrichedWalkLaw, curve: &Curve, n: usize, event: &WalkEvent) -> Result<f64> {
    let atoms = merged_atoms(law, n, false)?;
    let mut s = KahanSum::default();
    for_each_path(&atoms, n, |path, _, p| {
        if event.holds(curve, path) {
            s.add(p)
        }
    });
    Ok(s.value())
}

/// Enriched counterpart of [`enumerate_probability`].
pub fn enumerate_enriched(law: &EnrichedWalkLaw, curve: &Curve, n: usize, event: &EnrichedEvent) -> Result<f64> {
    let atoms = merged_atoms(law, n, true)?;
    let mut s = KahanSum::default();
    for_each_path(&atoms, n, |path, xis, p| {
        if event.holds(curve, path, xis) {
            s.add(p)
        }
    });
    Ok(s.value())
}

fn mc_probability(
    law: &EnrichedWalkLaw,
    n: usize,
    reps: u64,
    seeds: &SeedSource,
    check: impl Fn(&[f64], &[f64]) -> bool + Sync,
) -> Result<Estimate> {
    let failures = std::sync::Mutex::new(None);
    let m = fold_replicates(reps, seeds, Moments::new, |acc: &mut Moments, _, rng: &mut SimRng| {
        let mut path = vec![0.0; n + 1];
        let mut xis = vec![0.0; n];
        let mut scratch = Vec::new();
        for k in 0..n {
            match law.sample(rng, &mut scratch) {
                Ok((x, xi)) => {
                    path[k + 1] = path[k] + x;
                    xis[k] = xi;
                }
                Err(e) => {
                    failures.lock().expect("lock").get_or_insert(e);
                    acc.push(0.0);
                    return;
                }
            }
        }
        acc.push(if check(&path, &xis) { 1.0 } else { 0.0 });
    });
    if let Some(e) = failures.into_inner().expect("lock") {
        return Err(e);
    }
    Ok(Estimate::from_moments(&m))
}

/// Exact DP or Monte Carlo.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Dp,
    Mc { reps: u64 },
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dp" => Ok(Mode::Dp),
            "mc" => Ok(Mode::Mc { reps: 10_000 }),
            _ => Err(Error::InvalidArgument(format!("mode `{s}` (dp | mc)"))),
        }
    }
}

/// Probability of a plain-walk event.
pub fn probability(
    law: &EnrichedWalkLaw,
    curve: &Curve,
    n: usize,
    event: &WalkEvent,
    mode: Mode,
    seeds: &SeedSource,
) -> Result<Estimate> {
    curve.validate(n)?;
    match mode {
        Mode::Dp => dp_exact(law, curve, n, event).map(Estimate::exact),
        Mode::Mc { reps } => mc_probability(law, n, reps, seeds, |p, _| event.holds(curve, p)),
    }
}

/// Probability of an enriched event.
pub fn enriched_probability(
    law: &EnrichedWalkLaw,
    curve: &Curve,
    n: usize,
    event: &EnrichedEvent,
    mode: Mode,
    seeds: &SeedSource,
) -> Result<Estimate> {
    curve.validate(n)?;
    match mode {
        Mode::Dp => dp_enriched(law, curve, n, event).map(Estimate::exact),
        Mode::Mc { reps } => mc_probability(law, n, reps, seeds, |p, x| event.holds(curve, p, x)),
    }
}

/// One cell of a scaling table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub event: String,
    pub n: usize,
    pub y: f64,
    pub z: f64,
    pub h: f64,
    pub raw: Estimate,
    pub normalized: Estimate,
}

fn run_cells<C: Sync, T: Send>(cells: &[C], mode: Mode, f: impl Fn(usize, &C) -> Result<T> + Sync) -> Result<Vec<T>> {
    match mode {
        Mode::Dp => cells.par_iter().enumerate().map(|(i, c)| f(i, c)).collect(),
        Mode::Mc { .. } => cells.iter().enumerate().map(|(i, c)| f(i, c)).collect(),
    }
}

fn check_reps(mode: Mode, min: u64) -> Result<()> {
    match mode {
        Mode::Mc { reps } if reps < min => Err(Error::InvalidArgument(format!(
            "Monte Carlo needs at least {min} replicates per cell, got {reps}"
        ))),
        _ => Ok(()),
    }
}

fn check_grid(name: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::InvalidArgument(format!("{name} grid is empty")));
    }
    if let Some(bad) = v.iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidArgument(format!("{name} = {bad} must be finite and non-negative")));
    }
    Ok(())
}

/// `n^{1/2} P(T_j >= f(j) - y, j <= n) / (1 + y)` over an `(n, y)` grid.
pub fn ballot_scaling(
    law: &EnrichedWalkLaw,
    curve: &Curve,
    ns: &[usize],
    ys: &[f64],
    mode: Mode,
    seeds: &SeedSource,
) -> Result<Vec<ScalingRow>> {
    check_reps(mode, 10_000)?;
    check_grid("y", ys)?;
    if ns.is_empty() {
        return Err(Error::InvalidArgument("n grid is empty".into()));
    }
    let cells: Vec<(usize, f64)> = ns.iter().flat_map(|&n| ys.iter().map(move |&y| (n, y))).collect();
    run_cells(&cells, mode, |i, &(n, y)| {
        let raw = probability(law, curve, n, &WalkEvent::Ballot { y }, mode, &seeds.child(i as u64))?;
        Ok(ScalingRow {
            event: "ballot".into(),
            n,
            y,
            z: 0.0,
            h: 0.0,
            raw,
            normalized: raw.scaled((n as f64).sqrt() / (1.0 + y)),
        })
    })
}

/// `n^{3/2} P / ((1 + y^√n)(1 + h^√n)(1 + z^√n))` for the upper excursion,
/// where `a^b` is the minimum, over `n`, `y` and `(z, h)` windows.
pub fn excursion_upper_scaling(
    law: &EnrichedWalkLaw,
    curve: &Curve,
    ns: &[usize],
    ys: &[f64],
    windows: &[(f64, f64)],
    mode: Mode,
    seeds: &SeedSource,
) -> Result<Vec<ScalingRow>> {
    check_reps(mode, 10_000)?;
    check_grid("y", ys)?;
    check_grid("z", &windows.iter().map(|w| w.0).collect::<Vec<_>>())?;
    check_grid("h", &windows.iter().map(|w| w.1).collect::<Vec<_>>())?;
    let mut cells = Vec::new();
    for &n in ns {
        for &y in ys {
            for &(z, h) in windows {
                cells.push((n, y, z, h));
            }
        }
    }
    run_cells(&cells, mode, |i, &(n, y, z, h)| {
        let raw = probability(law, curve, n, &WalkEvent::ExcursionUpper { y, z, h }, mode, &seeds.child(i as u64))?;
        let r = (n as f64).sqrt();
        let norm = (n as f64).powf(1.5) / ((1.0 + y.min(r)) * (1.0 + h.min(r)) * (1.0 + z.min(r)));
        Ok(ScalingRow {
            event: "excursion-upper".into(),
            n,
            y,
            z,
            h,
            raw,
            normalized: raw.scaled(norm),
        })
    })
}

/// `n^{3/2} P / (1 + y)` for the excursion ending within `window` of the
/// shifted curve; `y` must lie in `[0, n^{1/2}]`.
pub fn excursion_lower_scaling(
    law: &EnrichedWalkLaw,
    curve: &Curve,
    ns: &[usize],
    ys: &[f64],
    window: f64,
    orientation: Orientation,
    mode: Mode,
    seeds: &SeedSource,
) -> Result<Vec<ScalingRow>> {
    check_reps(mode, 10_000)?;
    check_grid("y", ys)?;
    let mut cells = Vec::new();
    for &n in ns {
        for &y in ys {
            if y > (n as f64).sqrt() {
                return Err(Error::InvalidArgument(format!("y = {y} exceeds n^(1/2) at n = {n}")));
            }
            cells.push((n, y));
        }
    }
    run_cells(&cells, mode, |i, &(n, y)| {
        let ev = WalkEvent::ExcursionLower { y, window, orientation };
        let raw = probability(law, curve, n, &ev, mode, &seeds.child(i as u64))?;
        Ok(ScalingRow {
            event: format!("excursion-lower-{}", if orientation == Orientation::Above { "above" } else { "below" }),
            n,
            y,
            z: 0.0,
            h: window,
            raw,
            normalized: raw.scaled((n as f64).powf(1.5) / (1.0 + y)),
        })
    })
}

/// Endpoint distribution as sorted points with prefix masses.
struct Endpoint {
    pos: Vec<f64>,
    prefix: Vec<f64>,
}

impl Endpoint {
    fn new(mut pts: Vec<(f64, f64)>) -> Self {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut prefix = Vec::with_capacity(pts.len() + 1);
        let mut acc = KahanSum::default();
        prefix.push(0.0);
        for p in &pts {
            acc.add(p.1);
            prefix.push(acc.value());
        }
        Endpoint {
            pos: pts.into_iter().map(|p| p.0).collect(),
            prefix,
        }
    }

    fn total(&self) -> f64 {
        *self.prefix.last().expect("prefix")
    }

    fn window(&self, x: f64, h: f64) -> f64 {
        let a = self.pos.partition_point(|&p| p < x);
        let b = self.pos.partition_point(|&p| p <= x + h);
        if b > a {
            self.prefix[b] - self.prefix[a]
        } else {
            0.0
        }
    }

    /// Extreme of `x -> mass([x, x + h])` over `x` in `[lo, hi]`.
    fn extreme(&self, lo: f64, hi: f64, h: f64, want_max: bool) -> f64 {
        let mut cand: Vec<f64> = vec![lo, hi];
        let s = self.pos.partition_point(|&p| p < lo - h);
        let e = self.pos.partition_point(|&p| p <= hi + h);
        for &p in &self.pos[s..e] {
            for c in [p, p - h] {
                if c >= lo && c <= hi {
                    cand.push(c);
                }
            }
        }
        cand.sort_by(f64::total_cmp);
        cand.dedup();
        let mids: Vec<f64> = cand.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        cand.extend(mids);
        let vals = cand.iter().map(|&x| self.window(x, h));
        if want_max {
            vals.fold(0.0, f64::max)
        } else {
            vals.fold(f64::INFINITY, f64::min)
        }
    }
}

fn endpoint_of(
    law: &EnrichedWalkLaw,
    n: usize,
    lower: f64,
    mode: Mode,
    seeds: &SeedSource,
) -> Result<Endpoint> {
    match mode {
        Mode::Dp => {
            let lo = vec![lower; n + 1];
            let up = vec![f64::INFINITY; n + 1];
            Ok(Endpoint::new(dp_distribution(law, n, &lo, &up)?.points()))
        }
        Mode::Mc { reps } => {
            let ends = crate::estimate::map_replicates(reps, seeds, |_, rng| {
                let mut t = 0.0;
                let mut alive = true;
                let mut scratch = Vec::new();
                for _ in 0..n {
                    t += law.sample(rng, &mut scratch)?.0;
                    alive &= t >= lower;
                }
                Ok(alive.then_some(t))
            })?;
            let w = 1.0 / reps as f64;
            Ok(Endpoint::new(ends.into_iter().flatten().map(|t| (t, w)).collect()))
        }
    }
}

/// One row of the unconditioned local-limit table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalLimitRow {
    pub n: usize,
    pub a: f64,
    pub h: f64,
    /// `sup_{|x| >= a n^{1/2}} P(T_n in [x, x + h])`.
    pub sup: f64,
    pub scaled: f64,
    /// `exp(-a^2 / (2 sigma^2))`.
    pub envelope: f64,
}

/// Unconditioned local-limit scaling `n^{1/2} sup_{|x| >= a n^{1/2}} P(T_n in [x, x+h])`.
pub fn local_limit_scaling(
    law: &EnrichedWalkLaw,
    ns: &[usize],
    a_grid: &[f64],
    h: f64,
    mode: Mode,
    seeds: &SeedSource,
) -> Result<Vec<LocalLimitRow>> {
    check_grid("a", a_grid)?;
    check_grid("h", &[h])?;
    if let (Mode::Dp, Some(span)) = (mode, law.span()) {
        if h < span && h != 0.0 {
            return Err(Error::InvalidArgument(format!("h = {h} is below the lattice span {span}")));
        }
    }
    let sigma2 = law.validate()?.variance;
    let mut out = Vec::new();
    for (i, &n) in ns.iter().enumerate() {
        let ep = endpoint_of(law, n, f64::NEG_INFINITY, mode, &seeds.child(i as u64))?;
        let lo = ep.pos.first().copied().unwrap_or(0.0) - h - 1.0;
        let hi = ep.pos.last().copied().unwrap_or(0.0) + h + 1.0;
        for &a in a_grid {
            let r = a * (n as f64).sqrt();
            let right = if hi >= r { ep.extreme(r, hi, h, true) } else { 0.0 };
            let left = if lo <= -r { ep.extreme(lo, -r, h, true) } else { 0.0 };
            let sup = right.max(left);
            out.push(LocalLimitRow {
                n,
                a,
                h,
                sup,
                scaled: sup * (n as f64).sqrt(),
                envelope: (-a * a / (2.0 * sigma2)).exp(),
            });
        }
    }
    Ok(out)
}

/// Settings of the conditioned local-limit calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HSettings {
    pub ns: Vec<usize>,
    pub a: f64,
    pub b: f64,
    /// `r_n = r_factor * n^{1/2}`.
    pub r_factor: f64,
    pub threshold: f64,
}

impl Default for HSettings {
    fn default() -> Self {
        HSettings {
            ns: vec![64, 256, 1024],
            a: 0.5,
            b: 2.0,
            r_factor: 1.0,
            threshold: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HRow {
    pub h: f64,
    pub n: usize,
    /// `n^{1/2} inf_y inf_x P(T_n in [x, x + H] | T_j >= -y, j <= n)`.
    pub scaled_inf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HCalibration {
    pub h: f64,
    pub settings: HSettings,
    pub rows: Vec<HRow>,
}

/// Conditioned local-limit table for the given window sizes.
pub fn conditioned_local_limit(
    law: &EnrichedWalkLaw,
    settings: &HSettings,
    hs: &[f64],
    mode: Mode,
    seeds: &SeedSource,
) -> Result<Vec<HRow>> {
    let HSettings { ns, a, b, r_factor, .. } = settings;
    if !(0.0 < *a && a < b) {
        return Err(Error::InvalidArgument(format!("need 0 < a < b, got a = {a}, b = {b}")));
    }
    let mut inf = vec![vec![f64::INFINITY; hs.len()]; ns.len()];
    for (ni, &n) in ns.iter().enumerate() {
        let rn = r_factor * (n as f64).sqrt();
        let ys: Vec<f64> = match (mode, law.span()) {
            (Mode::Dp, Some(s)) => (0..=(rn / s).floor() as i64).map(|k| k as f64 * s).collect(),
            _ => (0..=4).map(|k| rn * k as f64 / 4.0).collect(),
        };
        let per_y: Vec<Vec<f64>> = run_cells(&ys, mode, |yi, &y| {
            let ep = endpoint_of(law, n, -y, mode, &seeds.child((ni * 1000 + yi) as u64))?;
            let z = ep.total();
            let sq = (n as f64).sqrt();
            Ok(hs
                .iter()
                .map(|&h| {
                    if z > 0.0 {
                        ep.extreme(a * sq, b * sq, h, false) / z
                    } else {
                        0.0
                    }
                })
                .collect())
        })?;
        for v in per_y {
            for (slot, x) in inf[ni].iter_mut().zip(v) {
                *slot = slot.min(x);
            }
        }
    }
    let mut rows = Vec::new();
    for (hi, &h) in hs.iter().enumerate() {
        for (ni, &n) in ns.iter().enumerate() {
            rows.push(HRow {
                h,
                n,
                scaled_inf: inf[ni][hi] * (n as f64).sqrt(),
            });
        }
    }
    Ok(rows)
}

/// Smallest `H` in `{1, 2, 4, ..., 64}` whose scaled conditioned
/// local-limit infimum exceeds the threshold at every `n`.
pub fn calibrate_h(law: &EnrichedWalkLaw, settings: &HSettings, mode: Mode, seeds: &SeedSource) -> Result<HCalibration> {
    law.validate()?;
    if settings.ns.is_empty() {
        return Err(Error::InvalidArgument("n grid is empty".into()));
    }
    let hs: Vec<f64> = (0..7).map(|k| (1u32 << k) as f64).collect();
    let rows = conditioned_local_limit(law, settings, &hs, mode, seeds)?;
    for &h in &hs {
        if rows
            .iter()
            .filter(|r| r.h == h)
            .all(|r| r.scaled_inf > settings.threshold)
        {
            return Ok(HCalibration {
                h,
                settings: settings.clone(),
                rows,
            });
        }
    }
    Err(Error::CalibrationFailed(format!(
        "no H <= 64 reaches the threshold {}",
        settings.threshold
    )))
}

/// One `(n, y)` cell of the enriched-walk table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrichedRow {
    pub n: usize,
    pub y: f64,
    pub window: f64,
    pub excursion: Estimate,
    /// `n^{3/2} / (1 + y)` times the excursion probability.
    pub excursion_normalized: Estimate,
    pub ballot_spine: Estimate,
    /// `n^{1/2} / (1 + y)` times the ballot-with-spine probability.
    pub ballot_spine_normalized: Estimate,
    /// `P(xi >= 0) + E[(xi_+)^2]`.
    pub xi_factor: f64,
}

pub fn enriched_excursion(
    law: &EnrichedWalkLaw,
    curve: &Curve,
    ns: &[usize],
    ys: &[f64],
    window: f64,
    mode: Mode,
    seeds: &SeedSource,
) -> Result<Vec<EnrichedRow>> {
    check_grid("y", ys)?;
    let moments = law.validate()?;
    let cells: Vec<(usize, f64)> = ns.iter().flat_map(|&n| ys.iter().map(move |&y| (n, y))).collect();
    run_cells(&cells, mode, |i, &(n, y)| {
        let s = seeds.child(i as u64);
        let exc = enriched_probability(law, curve, n, &EnrichedEvent::Excursion { y, window }, mode, &s.child(1))?;
        let bal = enriched_probability(law, curve, n, &EnrichedEvent::BallotSpine { y }, mode, &s.child(2))?;
        let nf = n as f64;
        Ok(EnrichedRow {
            n,
            y,
            window,
            excursion: exc,
            excursion_normalized: exc.scaled(nf.powf(1.5) / (1.0 + y)),
            ballot_spine: bal,
            ballot_spine_normalized: bal.scaled(nf.sqrt() / (1.0 + y)),
            xi_factor: moments.xi_factor(),
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spine3() -> EnrichedWalkLaw {
        EnrichedWalkLaw::from_brw(&OffspringLaw::lattice_three_point(), XiSign::default()).unwrap()
    }

    #[test]
    fn ballot_depth_one() {
        let w = spine3();
        let p = dp_exact(&w, &Curve::Zero, 1, &WalkEvent::Ballot { y: 0.0 }).unwrap();
        assert!((p - 0.80487100438668).abs() < 1e-13);
        let direct = 0.3902579912266399 + 0.4146130131600401;
        assert!((p - direct).abs() < 1e-14);
    }

    #[test]
    fn depth_zero_events() {
        let w = spine3();
        let c = Curve::LogBoundary { lambda: 1.5 };
        assert_eq!(dp_exact(&w, &c, 0, &WalkEvent::Ballot { y: 0.0 }).unwrap(), 1.0);
        let up = WalkEvent::ExcursionUpper { y: 0.0, z: 2.0, h: 1.0 };
        assert_eq!(dp_exact(&w, &c, 0, &up).unwrap(), 0.0);
        let below = WalkEvent::ExcursionLower { y: 1.0, window: 0.5, orientation: Orientation::Below };
        assert_eq!(dp_exact(&w, &c, 0, &below).unwrap(), 0.0);
        let below = WalkEvent::ExcursionLower { y: 0.5, window: 1.0, orientation: Orientation::Below };
        assert_eq!(dp_exact(&w, &c, 0, &below).unwrap(), 1.0);
    }

    #[test]
    fn dp_matches_enumeration() {
        let w = spine3();
        let c = Curve::LogBoundary { lambda: 1.5 };
        for n in [2usize, 5, 8] {
            for ev in [
                WalkEvent::Ballot { y: 1.0 },
                WalkEvent::ExcursionUpper { y: 1.0, z: 2.0, h: 1.5 },
                WalkEvent::ExcursionLower { y: 1.0, window: 1.0, orientation: Orientation::Above },
                WalkEvent::ExcursionLower { y: 2.0, window: 2.0, orientation: Orientation::Below },
                WalkEvent::EndpointWindow { x: -1.0, h: 2.0 },
            ] {
                let a = dp_exact(&w, &c, n, &ev).unwrap();
                let b = enumerate_probability(&w, &c, n, &ev).unwrap();
                assert!((a - b).abs() < 1e-13, "{ev:?} n={n}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn enriched_dp_matches_enumeration() {
        let w = spine3();
        let c = Curve::LogBoundary { lambda: 1.5 };
        for n in [1usize, 4, 7] {
            for y in [0.0, 1.0, 2.5] {
                for ev in [EnrichedEvent::Excursion { y, window: 2.0 }, EnrichedEvent::BallotSpine { y }] {
                    let a = dp_enriched(&w, &c, n, &ev).unwrap();
                    let b = enumerate_enriched(&w, &c, n, &ev).unwrap();
                    assert!((a - b).abs() < 1e-13, "{ev:?} n={n}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn reflection_is_exact() {
        let w = spine3();
        let c = Curve::LogBoundary { lambda: 1.5 };
        for n in [10usize, 64] {
            for y in [0.0, 1.0, 3.0] {
                let below = WalkEvent::ExcursionLower { y, window: 2.0, orientation: Orientation::Below };
                let above = WalkEvent::ExcursionLower { y, window: 2.0, orientation: Orientation::Above };
                let p = dp_exact(&w, &c, n, &below).unwrap();
                let q = dp_exact(&w.flipped(), &c.negated(), n, &above).unwrap();
                assert_eq!(p.to_bits(), q.to_bits());
            }
        }
    }

    #[test]
    fn xi_minus_infinity_never_triggers() {
        let w = spine3().with_constant_xi(f64::NEG_INFINITY);
        let c = Curve::LogBoundary { lambda: 1.5 };
        let p = dp_enriched(&w, &c, 20, &EnrichedEvent::Excursion { y: 0.0, window: 1.0 }).unwrap();
        assert_eq!(p, 0.0);
    }

    #[test]
    fn constant_xi_zero_matches_mc() {
        let w = spine3().with_constant_xi(0.0);
        let c = Curve::LogBoundary { lambda: 1.5 };
        let ev = EnrichedEvent::Excursion { y: 0.0, window: 2.0 };
        let exact = dp_enriched(&w, &c, 16, &ev).unwrap();
        let mc = enriched_probability(&w, &c, 16, &ev, Mode::Mc { reps: 40_000 }, &SeedSource::new(3)).unwrap();
        assert!(mc.within(exact, 4.0), "{exact} vs {mc:?}");
    }

    #[test]
    fn curve_validation() {
        assert!(Curve::General { table: vec![0.0, 0.5, 0.7], a: 1.0, alpha: 0.4 }.validate(2).is_ok());
        assert!(Curve::General { table: vec![0.0, 3.0, 0.7], a: 1.0, alpha: 0.4 }.validate(2).is_err());
        assert!(Curve::General { table: vec![0.1, 0.5, 0.7], a: 1.0, alpha: 0.4 }.validate(2).is_err());
        assert!("log:1.5".parse::<Curve>().unwrap() == Curve::LogBoundary { lambda: 1.5 });
    }

    #[test]
    fn zero_width_window_between_sites() {
        let w = spine3();
        let p = dp_exact(&w, &Curve::Zero, 5, &WalkEvent::EndpointWindow { x: 0.5, h: 0.0 }).unwrap();
        assert_eq!(p, 0.0);
    }

    #[test]
    fn h_is_one_for_unit_lattice() {
        let w = spine3();
        let s = HSettings {
            ns: vec![16, 64],
            ..HSettings::default()
        };
        let cal = calibrate_h(&w, &s, Mode::Dp, &SeedSource::new(0)).unwrap();
        assert_eq!(cal.h, 1.0);
    }

    #[test]
    fn degenerate_walk_rejected() {
        let w = EnrichedWalkLaw::lattice_steps("flat", 1.0, &[(0, 1.0)], 0.0).unwrap();
        assert!(matches!(calibrate_h(&w, &HSettings::default(), Mode::Dp, &SeedSource::new(0)), Err(Error::InvalidLaw(_))));
    }
}
