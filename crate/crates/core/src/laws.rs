//! Offspring point-process laws, boundary-case verification and calibration,
//! and the spine-tilted laws derived from them.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Geometric, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::format::real;
use crate::estimate::{fold_replicates, Estimate, KahanSum, Moments, SeedSource, SimRng};
use crate::{Error, Result};

/// Largest outcome list built for an i.i.d. lattice law.
const MAX_OUTCOMES: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LawKind {
    EnumerableDiscrete,
    Continuous,
}

/// One atom of an enumerable law: a displacement multiset and its mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub displacements: Vec<f64>,
    pub probability: f64,
}

/// Lattice description: every displacement is `span * k` for an integer `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    pub span: f64,
    /// Integer offsets of each outcome's children, aligned with `outcomes`.
    pub offsets: Vec<Vec<i64>>,
    /// Present when children are i.i.d. with a fixed arity.
    pub iid: Option<IidMarginal>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IidMarginal {
    pub arity: usize,
    pub values: Vec<i64>,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
enum Model {
    Enumerable {
        outcomes: Vec<Outcome>,
        cumulative: Vec<f64>,
        lattice: Option<Lattice>,
    },
    Gaussian {
        arity: usize,
        mean: f64,
        sd: f64,
    },
    PoissonGeometric {
        lambda: f64,
        ratio: f64,
        shift: f64,
    },
}

/// A reproduction law: how many children a particle has and where they land
/// relative to it.
#[derive(Debug, Clone, PartialEq)]
pub struct OffspringLaw {
    name: String,
    params: BTreeMap<String, String>,
    model: Model,
}

fn cumulative(outcomes: &[Outcome]) -> Vec<f64> {
    let mut acc = 0.0;
    outcomes
        .iter()
        .map(|o| {
            acc += o.probability;
            acc
        })
        .collect()
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

fn fmt_list<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn fmt_reals(xs: &[f64]) -> String {
    xs.iter().map(|&x| real(x)).collect::<Vec<_>>().join(",")
}

impl OffspringLaw {
    /// Enumerable law from an explicit outcome list.
    pub fn enumerable(name: &str, outcomes: Vec<Outcome>) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(Error::InvalidLaw("empty outcome list".into()));
        }
        let mut total = KahanSum::default();
        for o in &outcomes {
            if !(o.probability > 0.0 && o.probability.is_finite()) {
                return Err(Error::InvalidLaw(format!(
                    "outcome probability {} is not positive",
                    o.probability
                )));
            }
            if let Some(&v) = o.displacements.iter().find(|v| !v.is_finite()) {
                return Err(Error::NonFinite(v));
            }
            total.add(o.probability);
        }
        if (total.value() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidLaw(format!(
                "outcome probabilities sum to {}",
                total.value()
            )));
        }
        let cumulative = cumulative(&outcomes);
        let mut params = BTreeMap::new();
        params.insert("outcomes".into(), outcomes.len().to_string());
        Ok(OffspringLaw {
            name: name.to_string(),
            params,
            model: Model::Enumerable {
                outcomes,
                cumulative,
                lattice: None,
            },
        })
    }

    /// Enumerable lattice law from explicit integer outcomes on `span * Z`.
    pub fn lattice_outcomes(name: &str, span: f64, outcomes: Vec<(Vec<i64>, f64)>) -> Result<Self> {
        if !(span > 0.0) {
            return Err(Error::InvalidLaw("lattice span must be positive".into()));
        }
        let offsets: Vec<Vec<i64>> = outcomes.iter().map(|(k, _)| k.clone()).collect();
        let outs = outcomes
            .into_iter()
            .map(|(k, p)| Outcome {
                displacements: k.iter().map(|&j| j as f64 * span).collect(),
                probability: p,
            })
            .collect();
        let mut law = Self::enumerable(name, outs)?;
        if let Model::Enumerable { lattice, .. } = &mut law.model {
            *lattice = Some(Lattice {
                span,
                offsets,
                iid: None,
            });
        }
        law.params.insert("span".into(), real(span));
        Ok(law)
    }

    /// Fixed arity, children i.i.d. on integer `values` with masses `probs`.
    pub fn iid_lattice(name: &str, values: &[i64], probs: &[f64], arity: usize) -> Result<Self> {
        if values.len() != probs.len() || values.is_empty() {
            return Err(Error::InvalidLaw("values and probabilities differ in length".into()));
        }
        if arity == 0 {
            return Err(Error::InvalidLaw("arity must be at least 1".into()));
        }
        let count = (values.len() as f64).powi(arity as i32);
        if count > MAX_OUTCOMES as f64 {
            return Err(Error::InvalidLaw(format!("{count} outcomes is too many to list")));
        }
        let mut outcomes = Vec::with_capacity(count as usize);
        let mut idx = vec![0usize; arity];
        loop {
            let ks: Vec<i64> = idx.iter().map(|&i| values[i]).collect();
            let p: f64 = idx.iter().map(|&i| probs[i]).product();
            outcomes.push((ks, p));
            let mut d = arity;
            loop {
                if d == 0 {
                    break;
                }
                d -= 1;
                idx[d] += 1;
                if idx[d] < values.len() {
                    break;
                }
                idx[d] = 0;
            }
            if idx.iter().all(|&i| i == 0) {
                break;
            }
        }
        let span = values.iter().fold(0, |g, &v| gcd(g, v)).max(1);
        let mut law = Self::lattice_outcomes(name, 1.0, outcomes)?;
        if let Model::Enumerable { lattice: Some(l), .. } = &mut law.model {
            l.iid = Some(IidMarginal {
                arity,
                values: values.to_vec(),
                probs: probs.to_vec(),
            });
        }
        law.params.insert("arity".into(), arity.to_string());
        law.params.insert("values".into(), fmt_list(values));
        law.params.insert("probs".into(), fmt_reals(probs));
        law.params.insert("span".into(), span.to_string());
        Ok(law)
    }

    /// Two i.i.d. children on {1, 0, -2}, calibrated to the boundary case.
    pub fn lattice_three_point() -> Self {
        let mut law = calibrate_lattice(&[1, 0, -2], 2).expect("lattice3 calibration is feasible");
        law.name = "lattice3".into();
        law
    }

    /// `arity` i.i.d. Gaussian children.
    pub fn gaussian(arity: usize, mean: f64, variance: f64) -> Result<Self> {
        if arity == 0 || !(variance >= 0.0) || !mean.is_finite() || !variance.is_finite() {
            return Err(Error::InvalidLaw("gaussian needs arity >= 1 and finite variance >= 0".into()));
        }
        let mut params = BTreeMap::new();
        params.insert("arity".into(), arity.to_string());
        params.insert("mean".into(), real(mean));
        params.insert("variance".into(), real(variance));
        Ok(OffspringLaw {
            name: "gaussian".into(),
            params,
            model: Model::Gaussian {
                arity,
                mean,
                sd: variance.sqrt(),
            },
        })
    }

    /// Two Gaussian children with mean `-2 ln 2` and variance `2 ln 2`.
    pub fn binary_gaussian() -> Self {
        let l2 = std::f64::consts::LN_2;
        let mut law = Self::gaussian(2, -2.0 * l2, 2.0 * l2).expect("valid gaussian");
        law.name = "binary-gaussian".into();
        law
    }

    /// Poisson number of children, each at `shift - G` with `G` geometric of
    /// ratio `q`; `lambda` and `shift` are fixed by the boundary equations.
    pub fn poisson_geometric(ratio: f64) -> Result<Self> {
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::InvalidLaw(format!("geometric ratio {ratio} must lie in (0,1)")));
        }
        let r = ratio / std::f64::consts::E;
        // E e^{-G} and E G e^{-G} for P(G = g) = (1-q) q^g.
        let m0 = (1.0 - ratio) / (1.0 - r);
        let m1 = (1.0 - ratio) * r / (1.0 - r).powi(2);
        let shift = m1 / m0;
        let lambda = 1.0 / (shift.exp() * m0);
        let mut params = BTreeMap::new();
        params.insert("ratio".into(), real(ratio));
        Ok(OffspringLaw {
            name: "poisson-geometric".into(),
            params,
            model: Model::PoissonGeometric {
                lambda,
                ratio,
                shift,
            },
        })
    }

    /// Deterministic children at fixed displacements.
    pub fn deterministic(displacements: &[f64]) -> Result<Self> {
        let mut law = Self::enumerable(
            "deterministic",
            vec![Outcome {
                displacements: displacements.to_vec(),
                probability: 1.0,
            }],
        )?;
        law.params.insert("displacements".into(), fmt_reals(displacements));
        if displacements.iter().all(|v| v.fract() == 0.0) {
            let ks: Vec<i64> = displacements.iter().map(|&v| v as i64).collect();
            if let Model::Enumerable { lattice, .. } = &mut law.model {
                *lattice = Some(Lattice {
                    span: 1.0,
                    offsets: vec![ks.clone()],
                    iid: None,
                });
            }
        }
        Ok(law)
    }

    /// Build a law from a config kind and its `law.params.*` entries.
    pub fn from_config(kind: &str, params: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| params.get(k).map(|s| s.trim().to_string());
        let num = |k: &str| -> Result<Option<f64>> {
            get(k)
                .map(|s| s.parse::<f64>().map_err(|_| Error::Config {
                    key: format!("law.params.{k}"),
                    message: format!("`{s}` is not a number"),
                }))
                .transpose()
        };
        let list_i = |k: &str| -> Result<Option<Vec<i64>>> {
            get(k)
                .map(|s| {
                    s.split(',')
                        .map(|t| t.trim().parse::<i64>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| Error::Config {
                            key: format!("law.params.{k}"),
                            message: format!("`{s}` is not a list of integers"),
                        })
                })
                .transpose()
        };
        let list_f = |k: &str| -> Result<Option<Vec<f64>>> {
            get(k)
                .map(|s| {
                    s.split(',')
                        .map(|t| t.trim().parse::<f64>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| Error::Config {
                            key: format!("law.params.{k}"),
                            message: format!("`{s}` is not a list of numbers"),
                        })
                })
                .transpose()
        };
        let missing = |k: &str| Error::Config {
            key: format!("law.params.{k}"),
            message: format!("required for law kind `{kind}`"),
        };
        match kind {
            "lattice3" => Ok(Self::lattice_three_point()),
            "binary-gaussian" => Ok(Self::binary_gaussian()),
            "lattice" => {
                let values = list_i("values")?.ok_or_else(|| missing("values"))?;
                let arity = num("arity")?.ok_or_else(|| missing("arity"))? as usize;
                match list_f("probs")? {
                    Some(p) => Self::iid_lattice("lattice", &values, &p, arity),
                    None => calibrate_lattice(&values, arity),
                }
            }
            "gaussian" => {
                let arity = num("arity")?.ok_or_else(|| missing("arity"))? as usize;
                let mean = num("mean")?.ok_or_else(|| missing("mean"))?;
                let var = num("variance")?.ok_or_else(|| missing("variance"))?;
                Self::gaussian(arity, mean, var)
            }
            "poisson-geometric" => Self::poisson_geometric(num("ratio")?.unwrap_or(0.5)),
            "deterministic" => {
                let d = list_f("displacements")?.ok_or_else(|| missing("displacements"))?;
                Self::deterministic(&d)
            }
            other => Err(Error::Config {
                key: "law.kind".into(),
                message: format!(
                    "unknown law kind `{other}` (expected lattice3, lattice, binary-gaussian, gaussian, poisson-geometric or deterministic)"
                ),
            }),
        }
    }

    /// Config keys reproducing this law.
    pub fn config_fragment(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let kind = match (&self.model, self.name.as_str()) {
            (_, "lattice3") => "lattice3",
            (_, "binary-gaussian") => "binary-gaussian",
            (Model::Gaussian { .. }, _) => "gaussian",
            (Model::PoissonGeometric { .. }, _) => "poisson-geometric",
            (_, "deterministic") => "deterministic",
            _ => "lattice",
        };
        out.push(("law.kind".to_string(), kind.to_string()));
        if !matches!(kind, "lattice3" | "binary-gaussian") {
            for (k, v) in &self.params {
                if matches!(k.as_str(), "outcomes" | "span") {
                    continue;
                }
                out.push((format!("law.params.{k}"), v.clone()));
            }
        }
        out
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn params(&self) -> &BTreeMap<String, String> {
        &self.params
    }

    pub fn kind(&self) -> LawKind {
        match self.model {
            Model::Enumerable { .. } => LawKind::EnumerableDiscrete,
            _ => LawKind::Continuous,
        }
    }

    pub fn is_enumerable(&self) -> bool {
        self.kind() == LawKind::EnumerableDiscrete
    }

    /// Outcome list of an enumerable law.
    pub fn outcomes(&self) -> Option<&[Outcome]> {
        match &self.model {
            Model::Enumerable { outcomes, .. } => Some(outcomes),
            _ => None,
        }
    }

    pub fn require_outcomes(&self) -> Result<&[Outcome]> {
        self.outcomes().ok_or_else(|| Error::NotEnumerable(self.name.clone()))
    }

    pub fn lattice(&self) -> Option<&Lattice> {
        match &self.model {
            Model::Enumerable { lattice, .. } => lattice.as_ref(),
            _ => None,
        }
    }

    pub fn require_lattice(&self) -> Result<&Lattice> {
        self.lattice().ok_or_else(|| Error::NotLattice(self.name.clone()))
    }

    /// Largest child count the law can produce (`None` when unbounded).
    pub fn max_children(&self) -> Option<usize> {
        match &self.model {
            Model::Enumerable { outcomes, .. } => {
                outcomes.iter().map(|o| o.displacements.len()).max()
            }
            Model::Gaussian { arity, .. } => Some(*arity),
            Model::PoissonGeometric { .. } => None,
        }
    }

    /// Append one draw of relative child displacements to `out`.
    pub fn sample_children<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<f64>) {
        match &self.model {
            Model::Enumerable {
                outcomes,
                cumulative,
                ..
            } => {
                let i = pick(cumulative, rng);
                out.extend_from_slice(&outcomes[i].displacements);
            }
            Model::Gaussian { arity, mean, sd } => {
                let normal = Normal::new(*mean, *sd).expect("finite gaussian");
                out.extend((0..*arity).map(|_| normal.sample(rng)));
            }
            Model::PoissonGeometric {
                lambda,
                ratio,
                shift,
            } => {
                let k = Poisson::new(*lambda).expect("positive rate").sample(rng) as usize;
                let geo = Geometric::new(1.0 - ratio).expect("ratio in (0,1)");
                out.extend((0..k).map(|_| shift - geo.sample(rng) as f64));
            }
        }
    }
}

pub(crate) fn pick<R: Rng + ?Sized>(cumulative: &[f64], rng: &mut R) -> usize {
    let total = *cumulative.last().expect("non-empty");
    let u = rng.random::<f64>() * total;
    cumulative
        .partition_point(|&c| c <= u)
        .min(cumulative.len() - 1)
}

/// How a boundary report was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum VerifyMode {
    Exact,
    MonteCarlo { reps: u64, seed: u64 },
}

/// Pass/fail of each boundary condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryFlags {
    pub mean_exp: bool,
    pub mean_lin: bool,
    pub sigma2: bool,
    pub supercritical: bool,
}

impl BoundaryFlags {
    pub fn all(&self) -> bool {
        self.mean_exp && self.mean_lin && self.sigma2 && self.supercritical
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    pub mean_exp: Estimate,
    pub mean_lin: Estimate,
    pub sigma2: Estimate,
    pub spine_integrability: Estimate,
    pub supercritical_mean: Estimate,
    pub method: VerifyMode,
    pub tol: f64,
    pub flags: BoundaryFlags,
}

/// Per-draw terms whose means make up a boundary report.
fn boundary_terms(children: &[f64]) -> [f64; 5] {
    let mut s0 = 0.0;
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    let mut g = 0.0;
    for &v in children {
        let e = v.exp();
        s0 += e;
        s1 += v * e;
        s2 += v * v * e;
        g += (1.0 + v.max(0.0)) * e;
    }
    let lg = if g > 0.0 { g.ln().max(0.0) } else { 0.0 };
    [s0, s1, s2, s0 * lg * lg, children.len() as f64]
}

/// Check the boundary normalisation, centring, finite variance, spine
/// integrability and supercriticality of `law`.
///
/// In Monte Carlo mode a condition passes when the target lies within
/// `max(tol, 4 SE)` of the estimate.
pub fn verify_boundary(law: &OffspringLaw, mode: VerifyMode, tol: f64) -> Result<BoundaryReport> {
    let est: Vec<Estimate> = match mode {
        VerifyMode::Exact => {
            let outcomes = law.require_outcomes()?;
            let mut sums = [KahanSum::default(); 5];
            for o in outcomes {
                let t = boundary_terms(&o.displacements);
                for (s, x) in sums.iter_mut().zip(t) {
                    s.add(o.probability * x);
                }
            }
            sums.iter().map(|s| Estimate::exact(s.value())).collect()
        }
        VerifyMode::MonteCarlo { reps, seed } => {
            if reps < 1000 {
                return Err(Error::InvalidArgument(format!(
                    "monte carlo verification needs at least 1000 replicates, got {reps}"
                )));
            }
            let seeds = SeedSource::new(seed);
            let acc = fold_replicates(
                reps,
                &seeds,
                || vec![Moments::new(); 6],
                |m: &mut Vec<Moments>, _, rng: &mut SimRng| {
                    let mut kids = Vec::new();
                    law.sample_children(rng, &mut kids);
                    let bad = kids.iter().find(|v| !v.is_finite()).copied();
                    for (mm, x) in m.iter_mut().zip(boundary_terms(&kids)) {
                        mm.push(x);
                    }
                    m[5].push(if bad.is_some() { 1.0 } else { 0.0 });
                },
            );
            if acc[5].mean() > 0.0 {
                return Err(Error::NonFinite(f64::NAN));
            }
            acc[..5].iter().map(Estimate::from_moments).collect()
        }
    };
    let slack = |e: &Estimate| tol.max(4.0 * e.std_error);
    let flags = BoundaryFlags {
        mean_exp: (est[0].value - 1.0).abs() <= slack(&est[0]),
        mean_lin: est[1].value.abs() <= slack(&est[1]),
        sigma2: est[2].value > slack(&est[2]).min(tol) && est[2].value.is_finite(),
        supercritical: est[4].value > 1.0 + 4.0 * est[4].std_error,
    };
    Ok(BoundaryReport {
        mean_exp: est[0],
        mean_lin: est[1],
        sigma2: est[2],
        spine_integrability: est[3],
        supercritical_mean: est[4],
        method: mode,
        tol,
        flags,
    })
}

fn require_normalised(law: &OffspringLaw) -> Result<()> {
    let tol = 1e-9;
    let mean_exp = match &law.model {
        Model::Enumerable { outcomes, .. } => outcomes
            .iter()
            .map(|o| o.probability * o.displacements.iter().map(|v| v.exp()).sum::<f64>())
            .collect::<KahanSum>()
            .value(),
        Model::Gaussian { arity, mean, sd } => *arity as f64 * (mean + sd * sd / 2.0).exp(),
        Model::PoissonGeometric {
            lambda,
            ratio,
            shift,
        } => {
            let r = ratio / std::f64::consts::E;
            lambda * shift.exp() * (1.0 - ratio) / (1.0 - r)
        }
    };
    if (mean_exp - 1.0).abs() > tol {
        return Err(Error::NotBoundary { mean_exp, tol });
    }
    Ok(())
}

/// Solve `{sum p = 1, sum p e^v = 1/arity, sum p v e^v = 0}` for a strictly
/// positive probability vector on `values`, and return the i.i.d. lattice
/// law with that marginal.
pub fn calibrate_lattice(values: &[i64], arity: usize) -> Result<OffspringLaw> {
    let mut vals = values.to_vec();
    vals.sort_unstable();
    vals.dedup();
    if vals.len() != values.len() {
        return Err(Error::InvalidArgument("calibration values must be distinct".into()));
    }
    if arity == 0 {
        return Err(Error::InvalidArgument("arity must be at least 1".into()));
    }
    if vals.len() < 3 {
        return Err(Error::Infeasible(format!(
            "{} distinct values cannot satisfy three independent equations",
            vals.len()
        )));
    }
    let target = (1.0 / arity as f64, 0.0);
    if !strictly_inside_hull(&vals, target) {
        return Err(Error::Infeasible(format!(
            "no positive probability vector on {:?} gives E sum e^V = 1 and E sum V e^V = 0 with arity {arity}",
            values
        )));
    }
    let rows: Vec<[f64; 3]> = values
        .iter()
        .map(|&v| {
            let e = (v as f64).exp();
            [1.0, e, v as f64 * e]
        })
        .collect();
    let b = [1.0, target.0, target.1];
    let mut p = least_norm(&rows, b);
    if p.iter().any(|&x| !(x > 0.0)) {
        p = max_entropy(&rows, b)?;
    }
    let resid = residual(&rows, &p, b);
    if resid > 1e-12 {
        return Err(Error::CalibrationFailed(format!("residual {resid:e} above 1e-12")));
    }
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= s);
    let law = OffspringLaw::iid_lattice("lattice", values, &p, arity)?;
    let report = verify_boundary(&law, VerifyMode::Exact, 1e-10)?;
    if !(report.flags.mean_exp && report.flags.mean_lin) {
        return Err(Error::CalibrationFailed(format!(
            "calibrated law misses the boundary equations ({}, {})",
            report.mean_exp.value, report.mean_lin.value
        )));
    }
    Ok(law)
}

/// Points `(e^v, v e^v)` lie on the strictly convex curve `y = x ln x`, so
/// their hull is bounded below by consecutive chords and above by the chord
/// joining the extreme points.
fn strictly_inside_hull(sorted: &[i64], t: (f64, f64)) -> bool {
    let pts: Vec<(f64, f64)> = sorted
        .iter()
        .map(|&v| {
            let e = (v as f64).exp();
            (e, v as f64 * e)
        })
        .collect();
    let (first, last) = (pts[0], pts[pts.len() - 1]);
    if !(t.0 > first.0 && t.0 < last.0) {
        return false;
    }
    let chord = |a: (f64, f64), b: (f64, f64), x: f64| a.1 + (b.1 - a.1) * (x - a.0) / (b.0 - a.0);
    let upper = chord(first, last, t.0);
    let lower = pts
        .windows(2)
        .find(|w| t.0 <= w[1].0)
        .map(|w| chord(w[0], w[1], t.0))
        .expect("x within range");
    t.1 > lower && t.1 < upper
}

fn residual(rows: &[[f64; 3]], p: &[f64], b: [f64; 3]) -> f64 {
    (0..3)
        .map(|j| {
            let s: KahanSum = rows.iter().zip(p).map(|(r, &pi)| r[j] * pi).collect();
            (s.value() - b[j]).abs()
        })
        .fold(0.0, f64::max)
}

fn solve3(m: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let mut a = [[0.0; 4]; 3];
    for i in 0..3 {
        a[i][..3].copy_from_slice(&m[i]);
        a[i][3] = b[i];
    }
    for c in 0..3 {
        let piv = (c..3).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[piv][c].abs() < 1e-300 {
            return None;
        }
        a.swap(c, piv);
        for r in 0..3 {
            if r != c {
                let f = a[r][c] / a[c][c];
                for k in c..4 {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
    }
    Some([a[0][3] / a[0][0], a[1][3] / a[1][1], a[2][3] / a[2][2]])
}

/// Minimum-norm solution of `A^T p = b` with `A` given by rows.
fn least_norm(rows: &[[f64; 3]], b: [f64; 3]) -> Vec<f64> {
    let mut g = [[0.0; 3]; 3];
    for r in rows {
        for i in 0..3 {
            for j in 0..3 {
                g[i][j] += r[i] * r[j];
            }
        }
    }
    let lam = solve3(g, b).unwrap_or([f64::NAN; 3]);
    let mut p: Vec<f64> = rows
        .iter()
        .map(|r| r[0] * lam[0] + r[1] * lam[1] + r[2] * lam[2])
        .collect();
    // One refinement step against round-off.
    let res: Vec<f64> = (0..3)
        .map(|j| b[j] - rows.iter().zip(&p).map(|(r, &pi)| r[j] * pi).sum::<f64>())
        .collect();
    if let Some(d) = solve3(g, [res[0], res[1], res[2]]) {
        for (pi, r) in p.iter_mut().zip(rows) {
            *pi += r[0] * d[0] + r[1] * d[1] + r[2] * d[2];
        }
    }
    p
}

/// Maximum-entropy positive solution via Newton on the dual.
fn max_entropy(rows: &[[f64; 3]], b: [f64; 3]) -> Result<Vec<f64>> {
    let mut lam = [0.0f64; 3];
    let weights = |lam: &[f64; 3]| -> Vec<f64> {
        let expo: Vec<f64> = rows
            .iter()
            .map(|r| lam[0] * r[0] + lam[1] * r[1] + lam[2] * r[2])
            .collect();
        let mx = expo.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        expo.iter().map(|e| (e - mx).exp()).collect()
    };
    for _ in 0..200 {
        let w = weights(&lam);
        let s: f64 = w.iter().sum();
        let p: Vec<f64> = w.iter().map(|x| x / s).collect();
        let m: Vec<f64> = (0..3)
            .map(|j| rows.iter().zip(&p).map(|(r, &pi)| r[j] * pi).sum())
            .collect();
        let g = [0.0, b[1] - m[1], b[2] - m[2]];
        if g[1].abs().max(g[2].abs()) < 1e-15 {
            return Ok(p);
        }
        let mut h = [[0.0; 2]; 2];
        for (r, &pi) in rows.iter().zip(&p) {
            for i in 0..2 {
                for j in 0..2 {
                    h[i][j] += pi * (r[i + 1] - m[i + 1]) * (r[j + 1] - m[j + 1]);
                }
            }
        }
        let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
        if det.abs() < 1e-300 {
            break;
        }
        let d1 = (h[1][1] * g[1] - h[0][1] * g[2]) / det;
        let d2 = (h[0][0] * g[2] - h[1][0] * g[1]) / det;
        // Damped step keeps the dual objective decreasing.
        let mut t = 1.0;
        let norm0 = g[1].hypot(g[2]);
        loop {
            let trial = [0.0, lam[1] + t * d1, lam[2] + t * d2];
            let w = weights(&trial);
            let s: f64 = w.iter().sum();
            let gn = (0..2)
                .map(|j| {
                    b[j + 1] - rows.iter().zip(&w).map(|(r, &wi)| r[j + 1] * wi / s).sum::<f64>()
                })
                .fold(0.0f64, |a, x| a.hypot(x));
            if gn < norm0 || t < 1e-6 {
                lam = trial;
                break;
            }
            t *= 0.5;
        }
    }
    Err(Error::CalibrationFailed("max-entropy iteration did not converge".into()))
}

/// Draw from the size-biased reproduction law together with the spine child.
#[derive(Debug, Clone)]
pub enum TiltedLaw {
    /// Joint atoms `(outcome, spine child)` with masses `p(outcome) e^{v_j}`.
    Enumerable {
        atoms: Vec<(usize, usize)>,
        cumulative: Vec<f64>,
        outcome_mass: Vec<f64>,
        law: OffspringLaw,
    },
    /// One uniformly chosen child is shifted by the variance.
    Gaussian { arity: usize, mean: f64, sd: f64 },
    /// The untouched Poisson process plus one extra (spine) point.
    PoissonGeometric {
        lambda: f64,
        ratio: f64,
        shift: f64,
    },
    /// Sampling-importance-resampling from the plain law.
    Resampling { law: OffspringLaw, pool: usize },
}

impl TiltedLaw {
    /// Append children to `out` and return the index (within the appended
    /// block) of the spine child.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<f64>) -> usize {
        match self {
            TiltedLaw::Enumerable {
                atoms,
                cumulative,
                law,
                ..
            } => {
                let (o, j) = atoms[pick(cumulative, rng)];
                let outcomes = law.outcomes().expect("enumerable");
                out.extend_from_slice(&outcomes[o].displacements);
                j
            }
            TiltedLaw::Gaussian { arity, mean, sd } => {
                let j = rng.random_range(0..*arity);
                let plain = Normal::new(*mean, *sd).expect("finite");
                let shifted = Normal::new(mean + sd * sd, *sd).expect("finite");
                for i in 0..*arity {
                    out.push(if i == j {
                        shifted.sample(rng)
                    } else {
                        plain.sample(rng)
                    });
                }
                j
            }
            TiltedLaw::PoissonGeometric {
                lambda,
                ratio,
                shift,
            } => {
                let k = Poisson::new(*lambda).expect("rate").sample(rng) as usize;
                let geo = Geometric::new(1.0 - ratio).expect("ratio");
                let tilted = Geometric::new(1.0 - ratio / std::f64::consts::E).expect("ratio");
                let j = rng.random_range(0..=k);
                for i in 0..=k {
                    let g = if i == j {
                        tilted.sample(rng)
                    } else {
                        geo.sample(rng)
                    };
                    out.push(shift - g as f64);
                }
                j
            }
            TiltedLaw::Resampling { law, pool } => {
                let mut draws: Vec<Vec<f64>> = Vec::with_capacity(*pool);
                let mut cum = Vec::with_capacity(*pool);
                let mut acc = 0.0;
                for _ in 0..*pool {
                    let mut kids = Vec::new();
                    law.sample_children(rng, &mut kids);
                    acc += kids.iter().map(|v| v.exp()).sum::<f64>();
                    cum.push(acc);
                    draws.push(kids);
                }
                let kids = if acc > 0.0 {
                    draws.swap_remove(pick(&cum, rng))
                } else {
                    // A pool of empty draws; fall back to the first nonempty draw.
                    loop {
                        let mut k = Vec::new();
                        law.sample_children(rng, &mut k);
                        if !k.is_empty() {
                            break k;
                        }
                    }
                };
                let w: Vec<f64> = kids
                    .iter()
                    .scan(0.0, |a, v| {
                        *a += v.exp();
                        Some(*a)
                    })
                    .collect();
                let j = pick(&w, rng);
                out.extend_from_slice(&kids);
                j
            }
        }
    }

    /// Tilted outcome masses `p(outcome) * sum_i e^{v_i}` for enumerable laws.
    pub fn outcome_masses(&self) -> Option<&[f64]> {
        match self {
            TiltedLaw::Enumerable { outcome_mass, .. } => Some(outcome_mass),
            _ => None,
        }
    }

    /// Joint atoms `(outcome index, spine child index, mass)`.
    pub fn joint_atoms(&self) -> Option<Vec<(usize, usize, f64)>> {
        match self {
            TiltedLaw::Enumerable {
                atoms, cumulative, ..
            } => {
                let mut prev = 0.0;
                Some(
                    atoms
                        .iter()
                        .zip(cumulative)
                        .map(|(&(o, j), &c)| {
                            let m = c - prev;
                            prev = c;
                            (o, j, m)
                        })
                        .collect(),
                )
            }
            _ => None,
        }
    }
}

/// The size-biased reproduction law `sum_u e^{V(u)} * law`, sampled jointly
/// with the spine child (chosen with probability proportional to `e^V`).
pub fn spine_child_law(law: &OffspringLaw) -> Result<TiltedLaw> {
    require_normalised(law)?;
    Ok(match &law.model {
        Model::Enumerable { outcomes, .. } => {
            let mut atoms = Vec::new();
            let mut masses = Vec::new();
            let mut outcome_mass = Vec::with_capacity(outcomes.len());
            for (o, out) in outcomes.iter().enumerate() {
                let mut s = 0.0;
                for (j, v) in out.displacements.iter().enumerate() {
                    let m = out.probability * v.exp();
                    atoms.push((o, j));
                    masses.push(m);
                    s += m;
                }
                outcome_mass.push(s);
            }
            let cumulative = cumulative_of(&masses);
            TiltedLaw::Enumerable {
                atoms,
                cumulative,
                outcome_mass,
                law: law.clone(),
            }
        }
        Model::Gaussian { arity, mean, sd } => TiltedLaw::Gaussian {
            arity: *arity,
            mean: *mean,
            sd: *sd,
        },
        Model::PoissonGeometric {
            lambda,
            ratio,
            shift,
        } => TiltedLaw::PoissonGeometric {
            lambda: *lambda,
            ratio: *ratio,
            shift: *shift,
        },
    })
}

/// Importance-resampling version of [`spine_child_law`]: draw `pool`
/// reproductions from `law` and keep one with probability proportional to
/// `sum e^V`. Only asymptotically exact in `pool`.
pub fn spine_child_law_resampled(law: &OffspringLaw, pool: usize) -> Result<TiltedLaw> {
    require_normalised(law)?;
    if pool == 0 {
        return Err(Error::InvalidArgument("resampling pool must be positive".into()));
    }
    Ok(TiltedLaw::Resampling {
        law: law.clone(),
        pool,
    })
}

pub(crate) fn cumulative_of(masses: &[f64]) -> Vec<f64> {
    let mut acc = KahanSum::default();
    masses
        .iter()
        .map(|&m| {
            acc.add(m);
            acc.value()
        })
        .collect()
}

/// Law of one spine increment `S_1`.
#[derive(Debug, Clone)]
pub struct SpineStepLaw {
    tilted: TiltedLaw,
    masses: Option<Vec<(f64, f64)>>,
    lattice_masses: Option<Vec<(i64, f64)>>,
    span: Option<f64>,
    cumulative: Vec<f64>,
}

impl SpineStepLaw {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.masses {
            Some(m) => m[pick(&self.cumulative, rng)].0,
            None => {
                let mut kids = Vec::new();
                let j = self.tilted.sample(rng, &mut kids);
                kids[j]
            }
        }
    }

    /// Exact mass function, sorted by value (enumerable laws).
    pub fn mass_function(&self) -> Option<&[(f64, f64)]> {
        self.masses.as_deref()
    }

    /// Exact masses on integer lattice offsets (lattice laws).
    pub fn lattice_masses(&self) -> Option<&[(i64, f64)]> {
        self.lattice_masses.as_deref()
    }

    pub fn span(&self) -> Option<f64> {
        self.span
    }

    pub fn tilted(&self) -> &TiltedLaw {
        &self.tilted
    }

    /// Exact mean and variance (enumerable laws).
    pub fn moments(&self) -> Option<(f64, f64)> {
        let m = self.masses.as_ref()?;
        let mean: KahanSum = m.iter().map(|(v, p)| v * p).collect();
        let second: KahanSum = m.iter().map(|(v, p)| v * v * p).collect();
        Some((mean.value(), second.value() - mean.value().powi(2)))
    }
}

/// The step law of the spine walk: draw the tilted reproduction, then take
/// the spine child's displacement.
pub fn spine_step_law(law: &OffspringLaw) -> Result<SpineStepLaw> {
    let tilted = spine_child_law(law)?;
    let (masses, lattice_masses, span) = match &law.model {
        Model::Enumerable {
            outcomes, lattice, ..
        } => {
            let mut by_value: BTreeMap<i64, (f64, KahanSum)> = BTreeMap::new();
            let mut by_bits: Vec<(f64, KahanSum)> = Vec::new();
            for (oi, o) in outcomes.iter().enumerate() {
                for (j, &v) in o.displacements.iter().enumerate() {
                    let m = o.probability * v.exp();
                    if let Some(l) = lattice {
                        let k = l.offsets[oi][j];
                        by_value.entry(k).or_insert((v, KahanSum::default())).1.add(m);
                    } else if let Some(e) = by_bits.iter_mut().find(|e| e.0 == v) {
                        e.1.add(m);
                    } else {
                        let mut s = KahanSum::default();
                        s.add(m);
                        by_bits.push((v, s));
                    }
                }
            }
            if let Some(l) = lattice {
                let lm: Vec<(i64, f64)> = by_value.iter().map(|(&k, (_, s))| (k, s.value())).collect();
                let m: Vec<(f64, f64)> = by_value.values().map(|(v, s)| (*v, s.value())).collect();
                (Some(m), Some(lm), Some(l.span))
            } else {
                by_bits.sort_by(|a, b| a.0.total_cmp(&b.0));
                let m: Vec<(f64, f64)> = by_bits.iter().map(|(v, s)| (*v, s.value())).collect();
                (Some(m), None, None)
            }
        }
        _ => (None, None, None),
    };
    let cumulative = masses
        .as_ref()
        .map(|m| cumulative_of(&m.iter().map(|x| x.1).collect::<Vec<_>>()))
        .unwrap_or_default();
    Ok(SpineStepLaw {
        tilted,
        masses,
        lattice_masses,
        span,
        cumulative,
    })
}

/// Sign convention inside `xi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum XiSign {
    /// Relative displacement `V(v) - V(u)`.
    #[default]
    ChildMinusParent,
    /// Relative displacement `V(u) - V(v)`.
    ParentMinusChild,
}

impl XiSign {
    pub fn apply(self, rel: f64) -> f64 {
        match self {
            XiSign::ChildMinusParent => rel,
            XiSign::ParentMinusChild => -rel,
        }
    }
}

/// `log sum_v (1 + r_+) e^r` over children with relative displacements `r`.
pub fn xi_of(parent: f64, children: &[f64], sign: XiSign) -> Result<f64> {
    if children.is_empty() {
        return Err(Error::NoChildren);
    }
    let terms: Vec<f64> = children
        .iter()
        .map(|&c| {
            let r = sign.apply(c - parent);
            r + r.max(0.0).ln_1p()
        })
        .collect();
    let mx = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    let s: f64 = terms.iter().map(|t| (t - mx).exp()).sum();
    Ok(mx + s.ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    const P3: [f64; 3] = [0.07178394586257297, 0.20730650658002006, 0.720909547557407];

    #[test]
    fn lattice3_probabilities_match_linear_solve() {
        let law = OffspringLaw::lattice_three_point();
        let iid = law.lattice().unwrap().iid.clone().unwrap();
        assert_eq!(iid.values, vec![1, 0, -2]);
        for (p, q) in iid.probs.iter().zip(P3) {
            assert!((p - q).abs() < 1e-14, "{p} vs {q}");
        }
        assert_eq!(law.outcomes().unwrap().len(), 9);
    }

    #[test]
    fn lattice3_boundary_report_is_exact() {
        let r = verify_boundary(&OffspringLaw::lattice_three_point(), VerifyMode::Exact, 1e-10).unwrap();
        assert!((r.mean_exp.value - 1.0).abs() < 1e-14);
        assert!(r.mean_lin.value.abs() < 1e-14);
        assert!((r.sigma2.value - 1.1707739736799199).abs() < 1e-13);
        assert!((r.spine_integrability.value - 1.461426032133687).abs() < 1e-12);
        assert_eq!(r.supercritical_mean.value, 2.0);
        assert!(r.flags.all());
    }

    #[test]
    fn gaussian_exact_mode_is_rejected() {
        let e = verify_boundary(&OffspringLaw::binary_gaussian(), VerifyMode::Exact, 1e-3);
        assert!(matches!(e, Err(Error::NotEnumerable(_))));
    }

    #[test]
    fn binary_gaussian_monte_carlo_report() {
        let r = verify_boundary(
            &OffspringLaw::binary_gaussian(),
            VerifyMode::MonteCarlo { reps: 200_000, seed: 3 },
            1e-3,
        )
        .unwrap();
        assert!(r.mean_exp.within(1.0, 4.0));
        assert!(r.mean_lin.within(0.0, 4.0));
        assert!(r.sigma2.within(2.0 * std::f64::consts::LN_2, 4.0));
        assert!(r.flags.all());
    }

    #[test]
    fn deterministic_identity_law_fails_supercriticality() {
        let law = OffspringLaw::deterministic(&[0.0]).unwrap();
        let r = verify_boundary(&law, VerifyMode::Exact, 1e-10).unwrap();
        assert_eq!((r.mean_exp.value, r.mean_lin.value, r.sigma2.value), (1.0, 0.0, 0.0));
        assert!(r.flags.mean_exp && r.flags.mean_lin);
        assert!(!r.flags.sigma2 && !r.flags.supercritical);
    }

    #[test]
    fn calibration_cases() {
        let law = calibrate_lattice(&[2, 0, -1, -3], 2).unwrap();
        let p = law.lattice().unwrap().iid.clone().unwrap().probs;
        let expect = [0.01224187, 0.2670163, 0.33526183, 0.38548];
        for (a, b) in p.iter().zip(expect) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        assert!(matches!(calibrate_lattice(&[1, -1], 2), Err(Error::Infeasible(_))));
        // All values below zero leave 1/arity outside the hull.
        assert!(matches!(calibrate_lattice(&[-1, -2, -3], 2), Err(Error::Infeasible(_))));
    }

    #[test]
    fn max_entropy_fallback_solves_skewed_system() {
        let law = calibrate_lattice(&[3, 1, 0, -1, -2, -6], 3).unwrap();
        let r = verify_boundary(&law, VerifyMode::Exact, 1e-10).unwrap();
        assert!(r.flags.mean_exp && r.flags.mean_lin);
        let p = law.lattice().unwrap().iid.clone().unwrap().probs;
        assert!(p.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn tilted_masses_follow_the_tilt_formula() {
        let law = OffspringLaw::lattice_three_point();
        let t = spine_child_law(&law).unwrap();
        let m = t.outcome_masses().unwrap();
        let total: KahanSum = m.iter().copied().collect();
        assert!((total.value() - 1.0).abs() < 1e-12);
        // Outcome (1,1) is listed first: p1^2 * 2e.
        assert_eq!(law.outcomes().unwrap()[0].displacements, vec![1.0, 1.0]);
        assert!((m[0] - 0.028014258514649597).abs() < 1e-15);
    }

    #[test]
    fn identity_law_tilt_is_itself() {
        let law = OffspringLaw::deterministic(&[0.0]).unwrap();
        let t = spine_child_law(&law).unwrap();
        assert_eq!(t.outcome_masses().unwrap(), &[1.0]);
        let s = spine_step_law(&law).unwrap();
        assert_eq!(s.mass_function().unwrap(), &[(0.0, 1.0)]);
    }

    #[test]
    fn spine_step_masses_and_moments() {
        let s = spine_step_law(&OffspringLaw::lattice_three_point()).unwrap();
        let m = s.mass_function().unwrap();
        let expect = [(-2.0, 0.19512899561331995), (0.0, 0.4146130131600401), (1.0, 0.3902579912266399)];
        for ((v, p), (ev, ep)) in m.iter().zip(expect) {
            assert_eq!(*v, ev);
            assert!((p - ep).abs() < 1e-15);
        }
        let (mean, var) = s.moments().unwrap();
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.1707739736799199).abs() < 1e-12);
    }

    #[test]
    fn unnormalised_law_cannot_be_tilted() {
        let law = OffspringLaw::deterministic(&[0.0, 0.0]).unwrap();
        assert!(matches!(spine_child_law(&law), Err(Error::NotBoundary { .. })));
    }

    #[test]
    fn xi_examples() {
        assert!((xi_of(0.0, &[0.0, 0.0, 0.0], XiSign::default()).unwrap() - 3f64.ln()).abs() < 1e-15);
        assert!((xi_of(2.0, &[3.0], XiSign::default()).unwrap() - 1.6931471805599452).abs() < 1e-15);
        assert!((xi_of(0.0, &[-1.0, -1.0], XiSign::default()).unwrap() - (-0.30685281944005466)).abs() < 1e-15);
        assert_eq!(xi_of(0.0, &[], XiSign::default()), Err(Error::NoChildren));
        let flipped = xi_of(0.0, &[1.0], XiSign::ParentMinusChild).unwrap();
        assert!((flipped - (-1.0)).abs() < 1e-15);
    }

    #[test]
    fn poisson_geometric_is_boundary() {
        let law = OffspringLaw::poisson_geometric(0.5).unwrap();
        require_normalised(&law).unwrap();
        let r = verify_boundary(&law, VerifyMode::MonteCarlo { reps: 200_000, seed: 11 }, 1e-3).unwrap();
        assert!(r.mean_exp.within(1.0, 4.0));
        assert!(r.mean_lin.within(0.0, 4.0));
        assert!(r.supercritical_mean.value > 1.0);
    }

    #[test]
    fn config_fragment_round_trips() {
        let law = calibrate_lattice(&[2, 0, -1, -3], 2).unwrap();
        let frag: BTreeMap<String, String> = law
            .config_fragment()
            .into_iter()
            .filter_map(|(k, v)| k.strip_prefix("law.params.").map(|k| (k.to_string(), v)))
            .collect();
        let back = OffspringLaw::from_config("lattice", &frag).unwrap();
        assert_eq!(back.outcomes(), law.outcomes());
    }
}
