//! Upper occupancy measures: the largest visit probability of each state over
//! every transition in the current confidence set.

use crate::error::{Error, Result};
use crate::estimation::EpochSnapshot;
use crate::mdp::{Layout, OccupancyMeasure, StochasticPolicy, VALIDATION_TOL};

/// `{p ∈ simplex : lo ≤ p ≤ hi}` with `lo = max(0, center - halfwidth)` and
/// `hi = min(1, center + halfwidth)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxSimplex {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl BoxSimplex {
    pub fn new(center: &[f64], halfwidth: &[f64]) -> Result<Self> {
        if center.len() != halfwidth.len() || center.is_empty() {
            return Err(Error::structural("box center and half-widths differ in length"));
        }
        let lo: Vec<f64> = center.iter().zip(halfwidth).map(|(c, b)| (c - b).max(0.0)).collect();
        let hi: Vec<f64> = center.iter().zip(halfwidth).map(|(c, b)| (c + b).min(1.0)).collect();
        let (sl, sh): (f64, f64) = (lo.iter().sum(), hi.iter().sum());
        if sl > 1.0 + 1e-12 || sh < 1.0 - 1e-12 {
            return Err(Error::structural(format!("infeasible box: Σlo = {sl}, Σhi = {sh}")));
        }
        Ok(BoxSimplex { lo, hi })
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn len(&self) -> usize {
        self.lo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lo.is_empty()
    }

    pub fn contains(&self, p: &[f64], tol: f64) -> bool {
        p.len() == self.len()
            && (p.iter().sum::<f64>() - 1.0).abs() <= tol
            && p.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(x, (l, h))| *x >= l - tol && *x <= h + tol)
    }
}

/// Maximizes `Σ p(y) f(y)` over the box-simplex: start at `lo` and pour the
/// remaining mass into successors by decreasing `f` (ties by index) up to `hi`.
pub fn max_linear_over_box_simplex(bx: &BoxSimplex, f: &[f64]) -> (f64, Vec<f64>) {
    let mut p = bx.lo.clone();
    let value = fill_greedy(bx, f, &mut p, &mut Vec::new());
    (value, p)
}

fn fill_greedy(bx: &BoxSimplex, f: &[f64], p: &mut [f64], order: &mut Vec<usize>) -> f64 {
    debug_assert_eq!(f.len(), bx.len());
    p.copy_from_slice(&bx.lo);
    order.clear();
    order.extend(0..f.len());
    order.sort_by(|&a, &b| f[b].total_cmp(&f[a]).then(a.cmp(&b)));
    let mut remaining = 1.0 - bx.lo.iter().sum::<f64>();
    for &j in order.iter() {
        if remaining <= 0.0 {
            break;
        }
        let add = (bx.hi[j] - bx.lo[j]).min(remaining);
        p[j] += add;
        remaining -= add;
    }
    p.iter().zip(f).map(|(x, y)| x * y).sum()
}

/// Confidence boxes of every pair in an epoch snapshot.
pub fn confidence_boxes(snapshot: &EpochSnapshot) -> Vec<BoxSimplex> {
    (0..snapshot.layout().n_pairs())
        .map(|p| {
            BoxSimplex::new(snapshot.empirical.row_of_pair(p), &snapshot.widths[p])
                .expect("the empirical row lies in its own box")
        })
        .collect()
}

/// Upper occupancy bounds, per state and per pair.
#[derive(Clone, Debug, PartialEq)]
pub struct UpperOccupancy {
    /// `u(s)` for every state (`u(s_0) = 1`).
    pub state: Vec<f64>,
    /// `u(s, a) = π(a|s) u(s)`.
    pub pair: Vec<f64>,
}

/// `u(s) = max_{P̂ ∈ boxes} q^{P̂,π}(s)` by one backward pass per target state.
pub fn upper_occupancy(layout: &Layout, boxes: &[BoxSimplex], policy: &StochasticPolicy) -> Result<UpperOccupancy> {
    if boxes.len() != layout.n_pairs() || policy.as_slice().len() != layout.n_pairs() {
        return Err(Error::structural("boxes or policy do not match the layout"));
    }
    let mut state = vec![0.0; layout.n_states()];
    state[0] = 1.0;
    let mut f = vec![0.0; layout.n_states()];
    let mut scratch = Vec::new();
    let mut order = Vec::new();
    for target in 1..layout.n_states() {
        let k = layout.layer_of(target);
        for s in layout.layer(k) {
            f[s] = 0.0;
        }
        f[target] = 1.0;
        for j in (0..k).rev() {
            for x in layout.layer(j) {
                let succ = layout.successors(x);
                let mut fx = 0.0;
                for a in 0..layout.n_actions() {
                    let pi = policy.prob(x, a);
                    if pi == 0.0 {
                        continue;
                    }
                    let bx = &boxes[layout.pair(x, a)];
                    scratch.resize(bx.len(), 0.0);
                    fx += pi * fill_greedy(bx, &f[succ.clone()], &mut scratch, &mut order);
                }
                f[x] = fx.clamp(0.0, 1.0);
            }
        }
        state[target] = f[0];
    }
    let pair = (0..layout.n_pairs())
        .map(|p| policy.as_slice()[p] * state[layout.pair_state(p)])
        .collect();
    Ok(UpperOccupancy { state, pair })
}

/// Upper occupancy under an epoch's confidence set.
pub fn upper_occupancy_for(snapshot: &EpochSnapshot, policy: &StochasticPolicy) -> Result<UpperOccupancy> {
    upper_occupancy(snapshot.layout(), &confidence_boxes(snapshot), policy)
}

/// Whether `u(s, a) ≥ q(s, a) - 1e-9` on every pair.
pub fn dominance_check(u: &UpperOccupancy, q_true: &OccupancyMeasure) -> bool {
    u.pair
        .iter()
        .zip(q_true.as_slice())
        .all(|(u, q)| *u >= q - VALIDATION_TOL)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{occupancy_of, TransitionKernel};
    use crate::rng::RngStream;
    use rand::Rng;

    #[test]
    fn degenerate_box_returns_center() {
        let bx = BoxSimplex::new(&[0.2, 0.3, 0.5], &[0.0; 3]).unwrap();
        let (v, p) = max_linear_over_box_simplex(&bx, &[1.0, 2.0, 3.0]);
        assert_eq!(p, vec![0.2, 0.3, 0.5]);
        assert!((v - (0.2 + 0.6 + 1.5)).abs() < 1e-15);
    }

    #[test]
    fn constant_objective() {
        let bx = BoxSimplex::new(&[0.2, 0.3, 0.5], &[0.1, 0.4, 0.2]).unwrap();
        let (v, _) = max_linear_over_box_simplex(&bx, &[0.7; 3]);
        assert!((v - 0.7).abs() < 1e-15);
    }

    #[test]
    fn greedy_beats_random_feasible_points() {
        let mut rng = RngStream::new(9, 0);
        for _ in 0..20 {
            let c: Vec<f64> = {
                let w: Vec<f64> = (0..3).map(|_| rng.gen::<f64>() + 1e-3).collect();
                let s: f64 = w.iter().sum();
                w.iter().map(|x| x / s).collect()
            };
            let b: Vec<f64> = (0..3).map(|_| 0.3 * rng.gen::<f64>()).collect();
            let f: Vec<f64> = (0..3).map(|_| rng.gen()).collect();
            let bx = BoxSimplex::new(&c, &b).unwrap();
            let (best, p) = max_linear_over_box_simplex(&bx, &f);
            assert!(bx.contains(&p, 1e-12));
            for _ in 0..10_000 {
                // Random convex combination of the center and a random box point, projected onto the simplex
                // along the center direction keeps feasibility.
                let y: Vec<f64> = (0..3)
                    .map(|j| bx.lo()[j] + rng.gen::<f64>() * (bx.hi()[j] - bx.lo()[j]))
                    .collect();
                let s: f64 = y.iter().sum();
                let lam = rng.gen::<f64>();
                let z: Vec<f64> = (0..3).map(|j| lam * y[j] / s + (1.0 - lam) * c[j]).collect();
                if bx.contains(&z, 0.0) {
                    let v: f64 = z.iter().zip(&f).map(|(a, b)| a * b).sum();
                    assert!(v <= best + 1e-12);
                }
            }
        }
    }

    #[test]
    fn collapsed_set_gives_occupancy() {
        let layout = Layout::new(vec![1, 2, 3, 1], 2).unwrap();
        let mut rng = RngStream::new(4, 0);
        let k = TransitionKernel::random(layout.clone(), &mut rng);
        let pi = StochasticPolicy::random(&layout, &mut rng);
        let boxes: Vec<BoxSimplex> = (0..layout.n_pairs())
            .map(|p| BoxSimplex::new(k.row_of_pair(p), &vec![0.0; k.row_of_pair(p).len()]).unwrap())
            .collect();
        let u = upper_occupancy(&layout, &boxes, &pi).unwrap();
        let q = occupancy_of(&k, &pi).unwrap();
        for p in 0..layout.n_pairs() {
            assert!((u.pair[p] - q.get(p)).abs() < 1e-12);
        }
        for a in 0..2 {
            assert_eq!(u.pair[layout.pair(0, a)], pi.prob(0, a));
        }
    }

    #[test]
    fn vacuous_box_equals_kernel_enumeration() {
        // L = 2, |S_1| = 2, one action: with unit widths every deterministic
        // kernel is in the set and the maximum is attained at one of them.
        let layout = Layout::new(vec![1, 2, 1], 1).unwrap();
        let center = TransitionKernel::uniform(layout.clone());
        let boxes: Vec<BoxSimplex> = (0..layout.n_pairs())
            .map(|p| BoxSimplex::new(center.row_of_pair(p), &[1.0; 2][..center.row_of_pair(p).len()]).unwrap())
            .collect();
        let pi = StochasticPolicy::uniform(&layout);
        let u = upper_occupancy(&layout, &boxes, &pi).unwrap();
        let mut best = vec![0.0f64; layout.n_states()];
        for choice in 0..2 {
            let mut rows = center.rows();
            rows[0] = if choice == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] };
            let k = TransitionKernel::new(layout.clone(), rows).unwrap();
            let q = occupancy_of(&k, &pi).unwrap();
            for s in 0..layout.n_nonterminal() {
                best[s] = best[s].max(q.state_mass(&layout, s));
            }
        }
        for s in 0..layout.n_nonterminal() {
            assert!((u.state[s] - best[s]).abs() < 1e-15, "state {s}");
        }
        assert_eq!(u.state[layout.terminal()], 1.0);
    }
}
