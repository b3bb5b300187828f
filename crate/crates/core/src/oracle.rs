//! Slow reference computations used to certify the fast solvers.
//!
//! The FTRL reference is entropic mirror descent in the primal: every step is
//! a KL projection onto `Ω(P)` solved by equality-constrained Newton, with its
//! own copies of the regularizer formulas. Convergence is certified by the
//! Frank-Wolfe gap, which bounds the distance to the optimal objective.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mdp::{occupancy_of, optimal_values, Layout, StochasticPolicy, TransitionKernel};
use crate::uob::BoxSimplex;

/// Regularizers as seen by the oracle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OracleRegularizer {
    /// `(1/η) Σ q ln q`
    Shannon { eta: f64 },
    /// `-(1/η) Σ √q - β Σ ln q`
    Tsallis { eta: f64, beta: f64 },
}

impl OracleRegularizer {
    fn objective(&self, cost: &[f64], q: &[f64], active: &[usize]) -> f64 {
        active
            .iter()
            .map(|&p| {
                let x = q[p];
                let h = match *self {
                    OracleRegularizer::Shannon { eta } => {
                        if x > 0.0 {
                            x * x.ln() / eta
                        } else {
                            0.0
                        }
                    }
                    OracleRegularizer::Tsallis { eta, beta } => -x.sqrt() / eta - beta * x.ln(),
                };
                cost[p] * x + h
            })
            .sum()
    }

    fn gradient(&self, cost: &[f64], q: &[f64], active: &[usize], out: &mut [f64]) {
        out.iter_mut().for_each(|g| *g = 0.0);
        for &p in active {
            let x = q[p];
            out[p] = cost[p]
                + match *self {
                    OracleRegularizer::Shannon { eta } => (1.0 + x.ln()) / eta,
                    OracleRegularizer::Tsallis { eta, beta } => -1.0 / (2.0 * eta * x.sqrt()) - beta / x,
                };
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleOptions {
    pub max_iterations: usize,
    /// Stop once the Frank-Wolfe gap is below this.
    pub gap_tolerance: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            max_iterations: 1_000_000,
            gap_tolerance: 1e-10,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OracleResult {
    pub q: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Upper bound on `objective - optimum`.
    pub gap: f64,
}

/// Flow constraints `A q = e_{s_0}` restricted to the reachable pairs.
struct Constraints {
    active: Vec<usize>,
    a: DMatrix<f64>,
}

impl Constraints {
    fn new(kernel: &TransitionKernel) -> Self {
        let l = kernel.layout();
        let reach = kernel.reachable();
        let states: Vec<usize> = (0..l.n_nonterminal()).filter(|&s| reach[s]).collect();
        let mut row_of = vec![usize::MAX; l.n_states()];
        for (i, &s) in states.iter().enumerate() {
            row_of[s] = i;
        }
        let active: Vec<usize> = states.iter().flat_map(|&s| l.pairs_of(s)).collect();
        let mut a = DMatrix::zeros(states.len(), active.len());
        for (col, &p) in active.iter().enumerate() {
            let s = l.pair_state(p);
            a[(row_of[s], col)] += 1.0;
            let succ = l.successors(s);
            for (j, &pr) in kernel.row_of_pair(p).iter().enumerate() {
                let next = succ.start + j;
                if next != l.terminal() && row_of[next] != usize::MAX {
                    a[(row_of[next], col)] -= pr;
                }
            }
        }
        Constraints { active, a }
    }

    /// `argmin_{y ∈ Ω} Σ y ln(y / z) - y` with `ln z = ln q + shift`, started at
    /// the feasible `q`. Works on the active coordinates only.
    fn kl_projection(&self, q: &[f64], shift: &[f64]) -> Option<Vec<f64>> {
        let n = self.active.len();
        let log_z: Vec<f64> = (0..n).map(|i| q[i].ln() + shift[i]).collect();
        let objective = |y: &[f64]| -> f64 { (0..n).map(|i| y[i] * (y[i].ln() - log_z[i]) - y[i]).sum() };
        let mut y = q.to_vec();
        let mut val = objective(&y);
        for _ in 0..200 {
            let r: Vec<f64> = (0..n).map(|i| y[i].ln() - log_z[i]).collect();
            let ay = DMatrix::from_fn(self.a.nrows(), n, |row, col| self.a[(row, col)] * y[col]);
            let m = &ay * self.a.transpose();
            let rhs = -(&ay * DVector::from_column_slice(&r));
            let mu = m
                .clone()
                .cholesky()
                .map(|c| c.solve(&rhs))
                .or_else(|| m.lu().solve(&rhs))?;
            let atmu = self.a.transpose() * mu;
            let dy: Vec<f64> = (0..n).map(|i| -y[i] * (r[i] + atmu[i])).collect();
            let decrement: f64 = (0..n).map(|i| dy[i] * dy[i] / y[i]).sum();
            if decrement < 1e-28 {
                break;
            }
            let mut t: f64 = 1.0;
            for i in 0..n {
                if dy[i] < 0.0 {
                    t = t.min(-0.99 * y[i] / dy[i]);
                }
            }
            let slope: f64 = (0..n).map(|i| r[i] * dy[i]).sum();
            let mut accepted = false;
            for _ in 0..60 {
                let trial: Vec<f64> = (0..n).map(|i| y[i] + t * dy[i]).collect();
                if trial.iter().all(|v| *v > 0.0) {
                    let tv = objective(&trial);
                    if tv <= val + 1e-4 * t * slope || (tv - val).abs() <= 1e-15 * (1.0 + val.abs()) {
                        y = trial;
                        val = tv;
                        accepted = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        Some(y)
    }
}

/// `argmin_{q ∈ Ω(kernel)} ⟨q, cost⟩ + φ(q)` by entropic mirror descent with
/// steps adapted to local relative smoothness.
pub fn mirror_descent_oracle(
    kernel: &TransitionKernel,
    cost: &[f64],
    reg: OracleRegularizer,
    options: OracleOptions,
) -> Result<OracleResult> {
    let l = kernel.layout();
    if cost.len() != l.n_pairs() {
        return Err(Error::structural("cost does not match the kernel"));
    }
    let cons = Constraints::new(kernel);
    let n = cons.active.len();
    let mut q = occupancy_of(kernel, &StochasticPolicy::uniform(l))?.into_values();
    let mut grad = vec![0.0; l.n_pairs()];
    let mut f = reg.objective(cost, &q, &cons.active);
    let mut alpha = 1.0;
    let mut gap = f64::INFINITY;
    let mut iterations = 0;
    while iterations < options.max_iterations {
        reg.gradient(cost, &q, &cons.active, &mut grad);
        let (_, best) = optimal_values(kernel, &grad);
        let inner: f64 = cons.active.iter().map(|&p| grad[p] * q[p]).sum();
        gap = inner - best.v[0];
        if gap <= options.gap_tolerance {
            break;
        }
        iterations += 1;
        let local: Vec<f64> = cons.active.iter().map(|&p| q[p]).collect();
        loop {
            let shift: Vec<f64> = cons.active.iter().map(|&p| -alpha * grad[p]).collect();
            let Some(y) = cons.kl_projection(&local, &shift) else {
                alpha *= 0.5;
                continue;
            };
            let mut next = q.clone();
            for (i, &p) in cons.active.iter().enumerate() {
                next[p] = y[i];
            }
            let fy = reg.objective(cost, &next, &cons.active);
            let lin: f64 = (0..n).map(|i| grad[cons.active[i]] * (y[i] - local[i])).sum();
            let kl: f64 = (0..n).map(|i| y[i] * (y[i] / local[i]).ln() - y[i] + local[i]).sum();
            if fy.is_finite() && fy <= f + lin + kl / alpha + 1e-15 * f.abs().max(1.0) {
                q = next;
                f = fy;
                alpha *= 1.5;
                break;
            }
            alpha *= 0.5;
            if alpha < 1e-300 {
                return Err(Error::structural("mirror descent step collapsed"));
            }
        }
    }
    Ok(OracleResult {
        q,
        objective: f,
        iterations,
        gap,
    })
}

/// Vertices of a box-simplex: at most one coordinate strictly inside its bounds.
pub fn box_vertices(bx: &BoxSimplex) -> Vec<Vec<f64>> {
    let w = bx.len();
    let mut out = Vec::new();
    for free in 0..w {
        for mask in 0u32..(1 << (w - 1)) {
            let mut p = vec![0.0; w];
            let mut bit = 0;
            for (j, pj) in p.iter_mut().enumerate() {
                if j == free {
                    continue;
                }
                *pj = if mask >> bit & 1 == 1 { bx.hi()[j] } else { bx.lo()[j] };
                bit += 1;
            }
            let rest = 1.0 - p.iter().sum::<f64>();
            if rest >= bx.lo()[free] - 1e-15 && rest <= bx.hi()[free] + 1e-15 {
                p[free] = rest.clamp(bx.lo()[free], bx.hi()[free]);
                out.push(p);
            }
        }
    }
    out
}

/// `max_{P̂} q^{P̂,π}(s)` per state by enumerating every kernel whose rows are
/// box vertices. Exponential; only for tiny layouts.
pub fn uob_enumeration_oracle(layout: &Layout, boxes: &[BoxSimplex], policy: &StochasticPolicy) -> Result<Vec<f64>> {
    let vertices: Vec<Vec<Vec<f64>>> = boxes.iter().map(box_vertices).collect();
    let total: f64 = vertices.iter().map(|v| v.len() as f64).product();
    if total > 1e6 {
        return Err(Error::config("too many vertex kernels to enumerate"));
    }
    let mut best = vec![0.0f64; layout.n_states()];
    let mut index = vec![0usize; vertices.len()];
    loop {
        let rows = index.iter().zip(&vertices).map(|(&i, v)| v[i].clone()).collect();
        let kernel = TransitionKernel::with_tolerance(layout.clone(), rows, 1e-9)?;
        let q = occupancy_of(&kernel, policy)?;
        for s in 0..layout.n_nonterminal() {
            best[s] = best[s].max(q.state_mass(layout, s));
        }
        let mut k = 0;
        loop {
            if k == index.len() {
                best[layout.terminal()] = 1.0;
                return Ok(best);
            }
            index[k] += 1;
            if index[k] < vertices[k].len() {
                break;
            }
            index[k] = 0;
            k += 1;
        }
    }
}
