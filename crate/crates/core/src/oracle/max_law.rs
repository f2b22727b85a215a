//! Exact laws of the maximum and of first crossings for lattice laws, by
//! recursion over the first generation.
//!
//! With `G_k(i) = P(M_k >= i)` (positions in lattice units, start at 0),
//! `G_{k+1}(i) = sum_o p_o (1 - prod_{c in o} (1 - G_k(i - v_c)))`. The
//! complement products are formed as `-expm1(sum log1p(-G))` so far-tail
//! values keep full relative precision.

use serde::{Deserialize, Serialize};

use crate::laws::OffspringLaw;
use crate::simulate::log_boundary;
use crate::{Error, Result};

/// Sites above which the table would exceed the memory bound.
const MAX_SITES: usize = 200_000_000;

struct Kernel {
    /// `(probability, offsets)` per outcome.
    outcomes: Vec<(f64, Vec<i64>)>,
    /// `(arity, [(value, prob)])` when children are i.i.d.
    iid: Option<(usize, Vec<(i64, f64)>)>,
    span: f64,
    vmin: i64,
    vmax: i64,
}

impl Kernel {
    fn new(law: &OffspringLaw) -> Result<Self> {
        let lattice = law.require_lattice()?;
        let outs = law.require_outcomes()?;
        let outcomes: Vec<(f64, Vec<i64>)> = outs
            .iter()
            .zip(&lattice.offsets)
            .map(|(o, k)| (o.probability, k.clone()))
            .collect();
        let (vmin, vmax) = lattice
            .offsets
            .iter()
            .flatten()
            .fold((0i64, 0i64), |(a, b), &v| (a.min(v), b.max(v)));
        let iid = lattice.iid.as_ref().map(|m| {
            (
                m.arity,
                m.values.iter().copied().zip(m.probs.iter().copied()).collect(),
            )
        });
        Ok(Kernel {
            outcomes,
            iid,
            span: lattice.span,
            vmin,
            vmax,
        })
    }

    /// `P(some child's subtree has the event)` given the per-child
    /// probability `q(offset)`.
    fn any(&self, q: impl Fn(i64) -> f64) -> f64 {
        match &self.iid {
            Some((arity, vp)) => {
                let a: f64 = vp.iter().map(|&(v, p)| p * q(v)).sum();
                -(*arity as f64 * (-a.min(1.0)).ln_1p()).exp_m1()
            }
            None => self
                .outcomes
                .iter()
                .map(|(p, ks)| {
                    let l: f64 = ks.iter().map(|&v| (-q(v).min(1.0)).ln_1p()).sum();
                    p * -l.exp_m1()
                })
                .sum(),
        }
    }
}

/// Table of `P(M_k >= i)` for `k <= n`.
#[derive(Debug, Clone)]
pub struct MaxLaw {
    span: f64,
    lo: Vec<i64>,
    tails: Vec<Vec<f64>>,
    survival: Vec<f64>,
}

impl MaxLaw {
    pub fn compute(law: &OffspringLaw, n: usize) -> Result<Self> {
        let ker = Kernel::new(law)?;
        let width = (n as i64 * (ker.vmax - ker.vmin) + 1) as usize;
        if width.saturating_mul(n + 1) > MAX_SITES {
            return Err(Error::MemoryBound(width.saturating_mul(n + 1)));
        }
        let mut lo = vec![0i64];
        let mut tails = vec![vec![1.0]];
        let mut survival = vec![1.0];
        for k in 0..n {
            let (plo, prev, ps) = (lo[k], &tails[k], survival[k]);
            let phi = plo + prev.len() as i64;
            let g = |i: i64| -> f64 {
                if i < plo {
                    ps
                } else if i >= phi {
                    0.0
                } else {
                    prev[(i - plo) as usize]
                }
            };
            let nlo = plo + ker.vmin;
            let nhi = phi + ker.vmax;
            let next: Vec<f64> = (nlo..nhi).map(|i| ker.any(|v| g(i - v))).collect();
            let s = ker.any(|_| ps);
            lo.push(nlo);
            tails.push(next);
            survival.push(s);
        }
        Ok(MaxLaw {
            span: ker.span,
            lo,
            tails,
            survival,
        })
    }

    pub fn depth(&self) -> usize {
        self.tails.len() - 1
    }

    pub fn span(&self) -> f64 {
        self.span
    }

    /// `P(M_k >= i)` for an integer lattice index.
    pub fn tail_index(&self, k: usize, i: i64) -> f64 {
        let lo = self.lo[k];
        let t = &self.tails[k];
        if i < lo {
            self.survival[k]
        } else if i >= lo + t.len() as i64 {
            0.0
        } else {
            t[(i - lo) as usize]
        }
    }

    /// Smallest lattice index whose position is `>= t`.
    pub fn index_at_least(&self, t: f64) -> i64 {
        (t / self.span - 1e-9).ceil() as i64
    }

    /// `P(M_k >= t)` (start at 0).
    pub fn tail(&self, k: usize, t: f64) -> f64 {
        self.tail_index(k, self.index_at_least(t))
    }

    /// `P(M_k > t)` (start at 0).
    pub fn tail_above(&self, k: usize, t: f64) -> f64 {
        self.tail_index(k, (t / self.span + 1e-9).floor() as i64 + 1)
    }

    /// `P(generation k is non-empty)`.
    pub fn survival(&self, k: usize) -> f64 {
        self.survival[k]
    }

    /// Smallest lattice position `m` with `P(M_k <= m | survival) >= 1/2`.
    pub fn median(&self, k: usize) -> f64 {
        let s = self.survival[k];
        let lo = self.lo[k];
        let hi = lo + self.tails[k].len() as i64;
        for i in lo..hi {
            if (s - self.tail_index(k, i + 1)) / s >= 0.5 {
                return i as f64 * self.span;
            }
        }
        (hi - 1) as f64 * self.span
    }
}

/// Exact crossing statistics of the curve `f_n(k) + y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossingExact {
    /// `P(exists |u| <= n: V(u) >= f_n(|u|) + y)`.
    pub probability: f64,
    /// `E[sum_k Z_k]`: expected number of first crossings.
    pub mean_first_crossings: f64,
}

/// Exact crossing probability and mean first-crossing count, start at 0.
pub fn crossing_exact(law: &OffspringLaw, n: usize, y: f64) -> Result<CrossingExact> {
    let ker = Kernel::new(law)?;
    let span = ker.span;
    let crosses = |k: usize, i: i64| i as f64 * span >= log_boundary(n, k) + y - 1e-12;
    // Backward: q_k(i) = P(crossing in the subtree of a gen-k particle at i).
    let range = |k: usize| (k as i64 * ker.vmin, k as i64 * ker.vmax);
    let (lo_n, hi_n) = range(n);
    let mut q: Vec<f64> = (lo_n..=hi_n).map(|i| crosses(n, i) as u8 as f64).collect();
    let mut qlo = lo_n;
    for k in (0..n).rev() {
        let (lo, hi) = range(k);
        let prev = &q;
        let plo = qlo;
        let next: Vec<f64> = (lo..=hi)
            .map(|i| {
                if crosses(k, i) {
                    1.0
                } else {
                    ker.any(|v| {
                        let j = i + v - plo;
                        if j < 0 || j as usize >= prev.len() {
                            0.0
                        } else {
                            prev[j as usize]
                        }
                    })
                }
            })
            .collect();
        q = next;
        qlo = lo;
    }
    let probability = q[(0 - qlo) as usize];
    // Forward: expected density of particles whose line has not crossed.
    let mut mean_kids: Vec<(i64, f64)> = Vec::new();
    for (p, ks) in &ker.outcomes {
        for &v in ks {
            match mean_kids.iter_mut().find(|e| e.0 == v) {
                Some(e) => e.1 += p,
                None => mean_kids.push((v, *p)),
            }
        }
    }
    let mut d = vec![1.0f64];
    let mut dlo = 0i64;
    let mut total = 0.0;
    for k in 0..=n {
        for (j, x) in d.iter_mut().enumerate() {
            if crosses(k, dlo + j as i64) {
                total += *x;
                *x = 0.0;
            }
        }
        if k == n {
            break;
        }
        let mut next = vec![0.0; d.len() + (ker.vmax - ker.vmin) as usize];
        for (j, &x) in d.iter().enumerate() {
            if x != 0.0 {
                for &(v, m) in &mean_kids {
                    next[(j as i64 + v - ker.vmin) as usize] += x * m;
                }
            }
        }
        d = next;
        dlo += ker.vmin;
    }
    Ok(CrossingExact {
        probability,
        mean_first_crossings: total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_one_tails() {
        let law = OffspringLaw::lattice_three_point();
        let m = MaxLaw::compute(&law, 1).unwrap();
        assert!((m.tail(1, 0.0) - 0.48028942424057475).abs() < 1e-15);
        assert_eq!(m.tail(1, 2.0), 0.0);
        assert_eq!(m.tail(1, -5.0), 1.0);
        assert_eq!(m.median(1), -2.0);
    }

    #[test]
    fn depth_two_matches_enumeration_value() {
        let law = OffspringLaw::lattice_three_point();
        let m = MaxLaw::compute(&law, 2).unwrap();
        assert!((m.tail(2, -1.5 * 2f64.ln()) - 0.4687568795048844).abs() < 1e-14);
        assert!((m.tail(2, 0.0) - 0.25012053982885474).abs() < 1e-14);
    }

    #[test]
    fn large_depth_reference_values() {
        let law = OffspringLaw::lattice_three_point();
        let m = MaxLaw::compute(&law, 256).unwrap();
        let mn = -1.5 * 256f64.ln();
        assert!((m.tail(256, mn) - 0.59608).abs() < 5e-5);
        assert_eq!(m.median(256), -8.0);
        assert_eq!(m.survival(256), 1.0);
    }

    #[test]
    fn crossing_depth_one() {
        let law = OffspringLaw::lattice_three_point();
        for (y, p) in [(0.5, 0.48028942424057475), (1.0, 0.48028942424057475), (2.0, 0.13841495684154514), (0.0, 1.0)] {
            let c = crossing_exact(&law, 1, y).unwrap();
            assert!((c.probability - p).abs() < 1e-14, "y={y}: {}", c.probability);
        }
        let c = crossing_exact(&law, 1, 2.0).unwrap();
        // Expected number of children at +1.
        assert!((c.mean_first_crossings - 2.0 * 0.07178394586257297).abs() < 1e-15);
    }
}
