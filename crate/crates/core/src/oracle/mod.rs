//! Exact brute-force engine for enumerable laws at small depth.
//!
//! Every reproduction outcome of every node is enumerated depth-first, nodes
//! taken in breadth-first (= label) order, so the stream of trees is
//! deterministic. Probabilities are plain products of outcome masses and
//! all sums are compensated.

pub mod max_law;

use crate::estimate::KahanSum;
use crate::laws::{spine_child_law, spine_step_law, OffspringLaw};
use crate::tree::{MarkedTree, NodeId, TreeBuilder};
use crate::{Error, Result};

/// Default cap on the number of enumerated trees.
pub const ENUMERATION_CAP: f64 = 1e7;

/// One complete tree to depth `n` with its probability under `P_x`.
#[derive(Debug)]
pub struct WeightedOutcome<'a> {
    pub tree: &'a MarkedTree,
    pub probability: f64,
    /// Outcome index used by each expanded node, in breadth-first order.
    pub outcomes: &'a [usize],
}

/// Upper bound on the number of trees of depth `n`.
pub fn configuration_bound(law: &OffspringLaw, n: usize) -> Result<f64> {
    let m = law.require_outcomes()?.len() as f64;
    let k = law.max_children().unwrap_or(0) as f64;
    let nodes: f64 = (0..n).map(|j| k.powi(j as i32)).sum();
    Ok(m.powf(nodes))
}

/// Visit every tree of depth `n` started at `x`.
pub fn enumerate<F>(law: &OffspringLaw, n: usize, x: f64, cap: f64, mut visit: F) -> Result<()>
where
    F: FnMut(&WeightedOutcome<'_>),
{
    let outcomes = law.require_outcomes()?;
    if let Some(k) = outcomes.iter().map(|o| o.displacements.len()).find(|&k| k > 16) {
        return Err(Error::InvalidArgument(format!("enumeration supports at most 16 children, got {k}")));
    }
    let bound = configuration_bound(law, n)?;
    if bound > cap {
        return Err(Error::EnumerationCap { count: bound, cap });
    }
    let mut b = TreeBuilder::new(x);
    b.set_depth(n);
    let mut used = Vec::new();
    let positions: Vec<Vec<f64>> = outcomes.iter().map(|o| o.displacements.clone()).collect();
    fn rec<F: FnMut(&WeightedOutcome<'_>)>(
        b: &mut TreeBuilder,
        i: usize,
        n: usize,
        prob: f64,
        law_probs: &[f64],
        positions: &[Vec<f64>],
        used: &mut Vec<usize>,
        visit: &mut F,
    ) {
        if i >= b.len() || b.generation_of(i) >= n {
            visit(&WeightedOutcome {
                tree: b.as_tree(),
                probability: prob,
                outcomes: used,
            });
            return;
        }
        let mark = b.len();
        let base = b.position(i);
        let mut abs = [0.0; 16];
        for (o, d) in positions.iter().enumerate() {
            for (a, v) in abs.iter_mut().zip(d) {
                *a = base + v;
            }
            b.rewind_to(i);
            b.add_children(i, &abs[..d.len()]);
            used.push(o);
            rec(b, i + 1, n, prob * law_probs[o], law_probs, positions, used, visit);
            used.pop();
            b.truncate(mark);
        }
    }
    let probs: Vec<f64> = outcomes.iter().map(|o| o.probability).collect();
    rec(&mut b, 0, n, 1.0, &probs, &positions, &mut used, &mut visit);
    Ok(())
}

/// Which law an exact expectation is taken under.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measure {
    /// `P_x`.
    Plain,
    /// `e^{-x} W_n dP_x`.
    SizeBiased,
    /// The spine construction (tilted reproduction along the spine, spine
    /// child chosen proportionally to `e^V`), spine forgotten.
    Spine,
}

/// Joint masses `(spine leaf, mass)` of the spine construction for one tree,
/// computed from the tilted law's outcome masses and the `e^V` choice rule.
pub fn spine_assignments(
    law: &OffspringLaw,
    tilted_mass: &[f64],
    out: &WeightedOutcome<'_>,
) -> Vec<(NodeId, f64)> {
    let t = out.tree;
    let outcomes = law.outcomes().expect("enumerable");
    let n = t.depth();
    let mut res = Vec::new();
    for u in t.generation_nodes(n) {
        let mut ancestors = Vec::with_capacity(n + 1);
        let mut cur = Some(u);
        while let Some(c) = cur {
            ancestors.push(c);
            cur = t.parent(c).expect("valid");
        }
        ancestors.reverse();
        let mut mass = out.probability;
        for w in ancestors.windows(2) {
            let (p, c) = (w[0], w[1]);
            let o = out.outcomes[p.index()];
            let pv = t.position(p).expect("valid");
            let denom: f64 = t
                .child_positions(p)
                .expect("valid")
                .iter()
                .map(|v| (v - pv).exp())
                .sum();
            let choose = (t.position(c).expect("valid") - pv).exp() / denom;
            mass *= tilted_mass[o] / outcomes[o].probability * choose;
        }
        res.push((u, mass));
    }
    res
}

/// Exact `E[F]` under `measure` over trees of depth `n` from `x`.
pub fn exact_expectation<F>(law: &OffspringLaw, n: usize, x: f64, measure: Measure, f: F) -> Result<f64>
where
    F: Fn(&MarkedTree) -> f64,
{
    let ratio = match measure {
        Measure::Spine => tilt_ratio(law)?,
        _ => Vec::new(),
    };
    let mut mass = Vec::new();
    let mut s = KahanSum::default();
    enumerate(law, n, x, ENUMERATION_CAP, |o| match measure {
        Measure::Plain => s.add(o.probability * f(o.tree)),
        Measure::SizeBiased => s.add(o.probability * (-x).exp() * o.tree.additive_martingale(n) * f(o.tree)),
        Measure::Spine => s.add(spine_total(&ratio, o, &mut mass).0 * (-x).exp() * f(o.tree)),
    })?;
    Ok(s.value())
}

/// Tilted over plain mass of each outcome.
fn tilt_ratio(law: &OffspringLaw) -> Result<Vec<f64>> {
    let tilted = spine_child_law(law)?;
    let tm = tilted.outcome_masses().expect("enumerable tilt");
    Ok(law
        .require_outcomes()?
        .iter()
        .zip(tm)
        .map(|(o, t)| t / o.probability)
        .collect())
}

/// `(E[W_n F_i], Ê[F_i])` for a vector of functionals in one enumeration.
/// `f` fills one value per functional.
pub fn exact_size_biased_pairs<F>(
    law: &OffspringLaw,
    n: usize,
    width: usize,
    f: F,
) -> Result<Vec<(f64, f64)>>
where
    F: Fn(&MarkedTree, &mut [f64]),
{
    let ratio = tilt_ratio(law)?;
    let mut lhs = vec![KahanSum::default(); width];
    let mut rhs = vec![KahanSum::default(); width];
    let mut vals = vec![0.0; width];
    let mut mass = Vec::new();
    enumerate(law, n, 0.0, ENUMERATION_CAP, |o| {
        f(o.tree, &mut vals);
        let (s, w) = spine_total(&ratio, o, &mut mass);
        let w = o.probability * w;
        for i in 0..width {
            lhs[i].add(w * vals[i]);
            rhs[i].add(s * vals[i]);
        }
    })?;
    Ok(lhs.iter().zip(&rhs).map(|(l, r)| (l.value(), r.value())).collect())
}

/// Total spine-construction mass of one tree, summed over spine leaves in a
/// single top-down pass, and `W_n`. `ratio[o]` is the tilted over the plain
/// mass of outcome `o`; `buf` is scratch space.
fn spine_total(ratio: &[f64], out: &WeightedOutcome<'_>, buf: &mut Vec<f64>) -> (f64, f64) {
    let t = out.tree;
    let gen_n = t.generation_range(t.depth());
    buf.clear();
    buf.extend(t.raw_positions().iter().map(|v| v.exp()));
    let (ev, mass) = {
        let len = buf.len();
        buf.resize(2 * len, 0.0);
        buf.split_at_mut(len)
    };
    mass[0] = out.probability;
    for p in 0..gen_n.start {
        let kids = t.child_range(p);
        let denom: f64 = ev[kids.clone()].iter().sum();
        let base = mass[p] * ratio[out.outcomes[p]] / denom;
        for c in kids {
            mass[c] = base * ev[c];
        }
    }
    let spine = mass[gen_n.clone()].iter().sum();
    let w: KahanSum = ev[gen_n].iter().copied().collect();
    (spine, w.value())
}

/// Exact expectation of a functional of the tree and its spine leaf under
/// the spine construction.
pub fn exact_spine_expectation<F>(law: &OffspringLaw, n: usize, x: f64, f: F) -> Result<f64>
where
    F: Fn(&MarkedTree, NodeId) -> f64,
{
    let tilted = spine_child_law(law)?;
    let tm = tilted.outcome_masses().expect("enumerable tilt").to_vec();
    let mut s = KahanSum::default();
    enumerate(law, n, x, ENUMERATION_CAP, |o| {
        for (u, m) in spine_assignments(law, &tm, o) {
            s.add(m * (-x).exp() * f(o.tree, u));
        }
    })?;
    Ok(s.value())
}

/// Both sides of the many-to-one identity, exactly: the sum over particles
/// by enumeration, the spine side by convolving spine-step masses.
pub fn many_to_one_exact<F>(law: &OffspringLaw, n: usize, x: f64, f: F) -> Result<(f64, f64)>
where
    F: Fn(&[f64]) -> f64,
{
    let lhs = exact_expectation(law, n, x, Measure::Plain, |t| {
        t.generation_nodes(n)
            .map(|u| f(&t.path_positions(u).expect("valid")))
            .collect::<KahanSum>()
            .value()
    })?;
    let step = spine_step_law(law)?;
    let masses = step.mass_function().ok_or_else(|| Error::NotEnumerable(law.name().into()))?;
    let mut rhs = KahanSum::default();
    let mut idx = vec![0usize; n];
    let mut path = vec![x; n + 1];
    loop {
        let mut m = 1.0;
        for k in 0..n {
            let (v, p) = masses[idx[k]];
            path[k + 1] = path[k] + v;
            m *= p;
        }
        rhs.add(m * (x - path[n]).exp() * f(&path));
        let mut d = n;
        loop {
            if d == 0 {
                return Ok((lhs, rhs.value()));
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < masses.len() {
                break;
            }
            idx[d] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outcome_counts_and_mass() {
        let law = OffspringLaw::lattice_three_point();
        for (n, count) in [(0, 1), (1, 9), (2, 729)] {
            let mut c = 0;
            let mut s = KahanSum::default();
            enumerate(&law, n, 0.0, ENUMERATION_CAP, |o| {
                c += 1;
                s.add(o.probability);
            })
            .unwrap();
            assert_eq!(c, count);
            assert!((s.value() - 1.0).abs() < 1e-12);
        }
        assert!(matches!(
            enumerate(&law, 4, 0.0, ENUMERATION_CAP, |_| {}),
            Err(Error::EnumerationCap { .. })
        ));
    }

    #[test]
    fn first_outcome_is_lexicographically_first() {
        let law = OffspringLaw::lattice_three_point();
        let mut first = None;
        enumerate(&law, 1, 0.0, ENUMERATION_CAP, |o| {
            if first.is_none() {
                first = Some(o.tree.generation_positions(1).to_vec());
            }
        })
        .unwrap();
        assert_eq!(first.unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn martingale_and_centering_exact() {
        let law = OffspringLaw::lattice_three_point();
        for n in 1..=3 {
            let w = exact_expectation(&law, n, 0.0, Measure::Plain, |t| t.additive_martingale(n)).unwrap();
            assert!((w - 1.0).abs() < 1e-12, "n={n}: {w}");
        }
        let c = exact_expectation(&law, 1, 0.0, Measure::Plain, |t| {
            t.generation_positions(1).iter().map(|v| v * v.exp()).sum()
        })
        .unwrap();
        assert!(c.abs() < 1e-15);
        for m in [Measure::Plain, Measure::SizeBiased, Measure::Spine] {
            let one = exact_expectation(&law, 2, 0.0, m, |_| 1.0).unwrap();
            assert!((one - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn frozen_depth_two_values() {
        let law = OffspringLaw::lattice_three_point();
        let m2 = -1.5 * 2f64.ln();
        let p = exact_expectation(&law, 2, 0.0, Measure::Plain, |t| (t.max_position(2) >= m2) as u8 as f64).unwrap();
        assert!((p - 0.4687568795048844).abs() < 1e-14);
        let q = exact_expectation(&law, 2, 0.0, Measure::Plain, |t| (t.max_position(2) >= 0.0) as u8 as f64).unwrap();
        assert!((q - 0.25012053982885474).abs() < 1e-14);
        let sb = exact_expectation(&law, 2, 0.0, Measure::SizeBiased, |t| (t.max_position(2) >= 0.0) as u8 as f64)
            .unwrap();
        assert!((sb - 0.7329821057191933).abs() < 1e-13);
        let sp = exact_expectation(&law, 2, 0.0, Measure::Spine, |t| (t.max_position(2) >= 0.0) as u8 as f64).unwrap();
        assert!((sp - sb).abs() < 1e-12);
    }

    #[test]
    fn many_to_one_examples() {
        let law = OffspringLaw::lattice_three_point();
        let (l, r) = many_to_one_exact(&law, 1, 0.0, |_| 1.0).unwrap();
        assert!((l - 2.0).abs() < 1e-14 && (r - 2.0).abs() < 1e-14);
        let (l, r) = many_to_one_exact(&law, 1, 0.0, |p| (p[1] >= 0.0) as u8 as f64).unwrap();
        assert!((l - 0.558180904885186).abs() < 1e-14);
        assert!((r - 0.558180904885186).abs() < 1e-14);
        let (l, r) = many_to_one_exact(&law, 2, 0.0, |p| (p[2] >= 0.0) as u8 as f64).unwrap();
        assert!((l - 0.3115659225784456).abs() < 1e-14);
        assert!((r - l).abs() < 1e-13);
        let (l, r) = many_to_one_exact(&law, 3, 0.0, |_| 0.0).unwrap();
        assert_eq!((l, r), (0.0, 0.0));
    }
}
