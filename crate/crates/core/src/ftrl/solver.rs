//! Damped Newton ascent on the Lagrangian dual of
//! `min_{q ∈ Ω(P)} ⟨q, c⟩ + Σ h(q(s, a))`.
//!
//! With one multiplier `v(s)` per reachable non-terminal state (and
//! `v(s_L) = 0`) the Lagrangian separates over pairs with reduced cost
//! `b(s, a) = c(s, a) - v(s) + Σ_{s'} P(s'|s, a) v(s')`, every `q(s, a)` has a
//! closed form in `b(s, a)`, and the dual gradient is the flow residual.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::regularizer::Regularizer;
use crate::error::{Error, Result};
use crate::mdp::{OccupancyMeasure, TransitionKernel};

/// Convergence controls of [`solve_ftrl`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Stop once the flow residual (∞-norm) is below this.
    pub tolerance: f64,
    /// Largest residual still returned as a solution when progress stalls.
    pub accept_tolerance: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iterations: 500,
            tolerance: 1e-12,
            accept_tolerance: 1e-10,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SolverDiagnostics {
    pub iterations: usize,
    pub flow_residual: f64,
    pub objective: f64,
    pub duality_gap: f64,
    /// Smallest entry on a reachable pair.
    pub min_entry: f64,
    pub converged: bool,
    /// Whether the supplied warm start was unusable and a cold start was taken.
    pub cold_start: bool,
}

impl fmt::Display for SolverDiagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} iterations, flow residual {:.3e}, objective {:.12e}, duality gap {:.3e}",
            self.iterations, self.flow_residual, self.objective, self.duality_gap
        )
    }
}

#[derive(Clone, Debug)]
pub struct FtrlSolution {
    pub q: OccupancyMeasure,
    /// Multipliers per state (zero on the terminal and unreachable states).
    pub dual: Vec<f64>,
    pub diagnostics: SolverDiagnostics,
}

struct Problem<'a> {
    kernel: &'a TransitionKernel,
    cost: &'a [f64],
    reg: Regularizer,
    /// Pairs whose state is reachable under the kernel's support.
    active: Vec<usize>,
    /// Dual variable index of each state.
    var: Vec<Option<usize>>,
    states: Vec<usize>,
}

struct Point {
    dual_value: f64,
    /// Sum of the magnitudes of the terms of `dual_value`, for its rounding error.
    magnitude: f64,
    x: Vec<f64>,
    grad: Vec<f64>,
}

impl<'a> Problem<'a> {
    fn new(kernel: &'a TransitionKernel, cost: &'a [f64], reg: Regularizer) -> Self {
        let l = kernel.layout();
        let reach = kernel.reachable();
        let mut var = vec![None; l.n_states()];
        let mut states = Vec::new();
        for s in 0..l.n_nonterminal() {
            if reach[s] {
                var[s] = Some(states.len());
                states.push(s);
            }
        }
        let active = states.iter().flat_map(|&s| l.pairs_of(s)).collect();
        Problem {
            kernel,
            cost,
            reg,
            active,
            var,
            states,
        }
    }

    fn reduced_cost(&self, p: usize, v: &[f64]) -> f64 {
        let l = self.kernel.layout();
        let s = l.pair_state(p);
        let succ = l.successors(s);
        let ahead: f64 = self
            .kernel
            .row_of_pair(p)
            .iter()
            .zip(&v[succ])
            .map(|(pr, x)| pr * x)
            .sum();
        self.cost[p] - v[s] + ahead
    }

    fn evaluate(&self, v: &[f64]) -> Option<Point> {
        let l = self.kernel.layout();
        let mut x = vec![0.0; l.n_pairs()];
        let mut dual_value = v[0];
        let mut magnitude = v[0].abs();
        let mut grad = vec![0.0; self.states.len()];
        grad[0] = 1.0;
        for &p in &self.active {
            let b = self.reduced_cost(p, v);
            let xp = self.reg.conjugate_point(b)?;
            if !xp.is_finite() {
                return None;
            }
            x[p] = xp;
            let h = self.reg.value(xp);
            dual_value += xp * b + h;
            magnitude += (xp * b).abs() + h.abs();
            let s = l.pair_state(p);
            grad[self.var[s].unwrap()] -= xp;
            if xp != 0.0 {
                let succ = l.successors(s);
                for (j, &pr) in self.kernel.row_of_pair(p).iter().enumerate() {
                    if pr > 0.0 {
                        if let Some(i) = self.var[succ.start + j] {
                            grad[i] += xp * pr;
                        }
                    }
                }
            }
        }
        dual_value.is_finite().then_some(Point {
            dual_value,
            magnitude,
            x,
            grad,
        })
    }

    fn primal_objective(&self, x: &[f64]) -> f64 {
        self.active
            .iter()
            .map(|&p| self.cost[p] * x[p] + self.reg.value(x[p]))
            .sum()
    }

    /// Newton direction `H d = g` with `H = Σ w j jᵀ`, solved after symmetric
    /// diagonal scaling.
    fn newton_direction(&self, point: &Point) -> Option<Vec<f64>> {
        let l = self.kernel.layout();
        let n = self.states.len();
        let mut h = DMatrix::<f64>::zeros(n, n);
        let mut j: Vec<(usize, f64)> = Vec::new();
        for &p in &self.active {
            let w = self.reg.inverse_curvature(point.x[p]);
            if w == 0.0 {
                continue;
            }
            let s = l.pair_state(p);
            j.clear();
            j.push((self.var[s].unwrap(), -1.0));
            let succ = l.successors(s);
            for (k, &pr) in self.kernel.row_of_pair(p).iter().enumerate() {
                if pr > 0.0 {
                    if let Some(i) = self.var[succ.start + k] {
                        j.push((i, pr));
                    }
                }
            }
            for &(a, ja) in &j {
                for &(b, jb) in &j {
                    h[(a, b)] += w * ja * jb;
                }
            }
        }
        let scale: Vec<f64> = (0..n)
            .map(|i| {
                let d = h[(i, i)];
                if d > 0.0 && d.is_finite() {
                    d.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        for a in 0..n {
            for b in 0..n {
                h[(a, b)] /= scale[a] * scale[b];
            }
            h[(a, a)] += 1e-14;
        }
        let rhs = DVector::from_iterator(n, (0..n).map(|i| point.grad[i] / scale[i]));
        let sol = match h.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => h.lu().solve(&rhs)?,
        };
        let d: Vec<f64> = (0..n).map(|i| sol[i] / scale[i]).collect();
        d.iter().all(|x| x.is_finite()).then_some(d)
    }

    fn cold_start(&self) -> Vec<f64> {
        let l = self.kernel.layout();
        let mut v = vec![0.0; l.n_states()];
        let mut z = vec![0.0; l.n_actions()];
        for &s in self.states.iter().rev() {
            for (a, za) in z.iter_mut().enumerate() {
                let p = l.pair(s, a);
                *za = self.cost[p] + self.kernel.expect(s, a, &v);
            }
            v[s] = match self.reg {
                Regularizer::Shannon { eta } => {
                    let m = z.iter().map(|&za| -eta * za).fold(f64::NEG_INFINITY, f64::max);
                    let lse = m + z.iter().map(|&za| (-eta * za - m).exp()).sum::<f64>().ln();
                    (1.0 - lse) / eta
                }
                Regularizer::TsallisLogBarrier { eta, beta } => {
                    let x0 = 1.0 / l.n_actions() as f64;
                    let kappa = 0.5 / (eta * x0.sqrt()) + beta / x0;
                    z.iter().copied().fold(f64::INFINITY, f64::min) - kappa
                }
            };
        }
        v
    }
}

fn sup_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Solves the FTRL step over `Ω(kernel)` for cumulative loss `cost`.
///
/// States that no pair reaches under the kernel's support keep zero
/// occupancy and do not enter the regularizer.
pub fn solve_ftrl(
    kernel: &TransitionKernel,
    cost: &[f64],
    reg: Regularizer,
    warm: Option<&[f64]>,
) -> Result<FtrlSolution> {
    solve_ftrl_with(kernel, cost, reg, warm, SolverOptions::default())
}

pub fn solve_ftrl_with(
    kernel: &TransitionKernel,
    cost: &[f64],
    reg: Regularizer,
    warm: Option<&[f64]>,
    options: SolverOptions,
) -> Result<FtrlSolution> {
    let l = kernel.layout();
    if cost.len() != l.n_pairs() {
        return Err(Error::structural(format!(
            "cumulative loss has {} entries, expected {}",
            cost.len(),
            l.n_pairs()
        )));
    }
    if !(reg.eta() > 0.0) || !reg.eta().is_finite() {
        return Err(Error::config(format!("learning rate {} must be positive", reg.eta())));
    }
    if let Regularizer::TsallisLogBarrier { beta, .. } = reg {
        if !(beta >= 0.0) {
            return Err(Error::config(format!("log-barrier weight {beta} must be nonnegative")));
        }
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::structural("cumulative loss is not finite"));
    }
    let problem = Problem::new(kernel, cost, reg);

    let mut cold = false;
    let (mut v, mut point) = match warm
        .filter(|w| w.len() == l.n_states())
        .and_then(|w| problem.evaluate(w).map(|pt| (w.to_vec(), pt)))
    {
        Some(start) => start,
        None => {
            cold = warm.is_some();
            let v = problem.cold_start();
            let pt = problem.evaluate(&v).ok_or_else(|| {
                Error::Solver(SolverDiagnostics {
                    cold_start: true,
                    ..SolverDiagnostics::default()
                })
            })?;
            (v, pt)
        }
    };

    let mut iterations = 0;
    let mut residual = sup_norm(&point.grad);
    while residual > options.tolerance && iterations < options.max_iterations {
        iterations += 1;
        let Some(d) = problem.newton_direction(&point) else {
            break;
        };
        let slope: f64 = d.iter().zip(&point.grad).map(|(a, b)| a * b).sum();
        let mut alpha = 1.0;
        let mut accepted = None;
        let mut trial = v.clone();
        for _ in 0..60 {
            for (i, &s) in problem.states.iter().enumerate() {
                trial[s] = v[s] + alpha * d[i];
            }
            if let Some(pt) = problem.evaluate(&trial) {
                let armijo = pt.dual_value >= point.dual_value + 1e-4 * alpha * slope;
                let noise = 64.0 * f64::EPSILON * (1.0 + point.magnitude.max(pt.magnitude));
                let flat = pt.dual_value >= point.dual_value - noise;
                if armijo || (flat && sup_norm(&pt.grad) < residual) {
                    accepted = Some(pt);
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some(pt) = accepted else {
            break;
        };
        v.clone_from(&trial);
        point = pt;
        residual = sup_norm(&point.grad);
    }

    let objective = problem.primal_objective(&point.x);
    let q = OccupancyMeasure::from_values(point.x);
    let residual = residual.max(q.flow_residual(kernel));
    let min_entry = problem.active.iter().map(|&p| q.get(p)).fold(f64::INFINITY, f64::min);
    let diagnostics = SolverDiagnostics {
        iterations,
        flow_residual: residual,
        objective,
        duality_gap: objective - point.dual_value,
        min_entry,
        converged: residual <= options.tolerance,
        cold_start: cold,
    };
    if residual > options.accept_tolerance {
        return Err(Error::Solver(diagnostics));
    }
    Ok(FtrlSolution {
        q,
        dual: v,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::Layout;
    use crate::rng::RngStream;
    use rand::Rng;

    #[test]
    fn one_layer_shannon_is_exponential_weights() {
        let layout = Layout::new(vec![1, 1], 4).unwrap();
        let k = TransitionKernel::uniform(layout);
        let c = [0.3, 2.0, -1.0, 0.7];
        let eta = 0.8;
        let sol = solve_ftrl(&k, &c, Regularizer::Shannon { eta }, None).unwrap();
        let w: Vec<f64> = c.iter().map(|x| (-eta * x).exp()).collect();
        let z: f64 = w.iter().sum();
        for a in 0..4 {
            assert!((sol.q.get(a) - w[a] / z).abs() < 1e-12);
        }
    }

    #[test]
    fn one_layer_tsallis_zero_loss_is_uniform() {
        let layout = Layout::new(vec![1, 1], 3).unwrap();
        let k = TransitionKernel::uniform(layout);
        let sol = solve_ftrl(
            &k,
            &[0.0; 3],
            Regularizer::TsallisLogBarrier { eta: 0.5, beta: 8.0 },
            None,
        )
        .unwrap();
        for a in 0..3 {
            assert!((sol.q.get(a) - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn feasible_on_random_instances() {
        let mut rng = RngStream::new(5, 0);
        for trial in 0..40 {
            let layout = Layout::new(vec![1, 2, 3, 1], 2).unwrap();
            let k = TransitionKernel::random(layout.clone(), &mut rng);
            let c: Vec<f64> = (0..layout.n_pairs()).map(|_| 10.0 * rng.gen::<f64>() - 5.0).collect();
            let reg = if trial % 2 == 0 {
                Regularizer::Shannon { eta: 0.5 }
            } else {
                Regularizer::TsallisLogBarrier { eta: 0.5, beta: 6.0 }
            };
            let sol = solve_ftrl(&k, &c, reg, None).unwrap();
            assert!(sol.diagnostics.flow_residual <= 1e-10);
            sol.q.validate(&k, 1e-10).unwrap();
            assert!(sol.q.as_slice().iter().all(|x| *x > 0.0));
        }
    }

    #[test]
    fn unreachable_states_get_zero_mass() {
        let layout = Layout::new(vec![1, 2, 1], 2).unwrap();
        let rows = vec![
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![1.0],
            vec![1.0],
            vec![1.0],
            vec![1.0],
        ];
        let k = TransitionKernel::new(layout.clone(), rows).unwrap();
        let sol = solve_ftrl(
            &k,
            &[0.0; 6],
            Regularizer::TsallisLogBarrier { eta: 1.0, beta: 1.0 },
            None,
        )
        .unwrap();
        assert_eq!(sol.q.state_mass(&layout, 2), 0.0);
        assert!((sol.q.state_mass(&layout, 1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn warm_start_matches_cold_start() {
        let mut rng = RngStream::new(8, 0);
        let layout = Layout::new(vec![1, 3, 2, 1], 3).unwrap();
        let k = TransitionKernel::random(layout.clone(), &mut rng);
        let c1: Vec<f64> = (0..layout.n_pairs()).map(|_| rng.gen::<f64>()).collect();
        let c2: Vec<f64> = c1.iter().map(|x| x + 0.5 * rng.gen::<f64>()).collect();
        let reg = Regularizer::TsallisLogBarrier { eta: 0.3, beta: 2.0 };
        let first = solve_ftrl(&k, &c1, reg, None).unwrap();
        let warm = solve_ftrl(&k, &c2, reg, Some(&first.dual)).unwrap();
        let cold = solve_ftrl(&k, &c2, reg, None).unwrap();
        assert!((warm.diagnostics.objective - cold.diagnostics.objective).abs() < 1e-8);
    }

    #[test]
    fn converges_when_dual_is_flat_to_rounding() {
        let layout = Layout::new(vec![1, 2, 1], 2).unwrap();
        let rows = vec![
            vec![0.7682198327359617, 0.23178016726403824],
            vec![0.362922138836773, 0.6370778611632271],
            vec![1.0],
            vec![1.0],
            vec![1.0],
            vec![1.0],
        ];
        let k = TransitionKernel::new(layout, rows).unwrap();
        let cost = [
            -65.60828572464162,
            482.9678270148583,
            340.0522298460984,
            174.72297910040243,
            -217.38929791012995,
            319.68686568818185,
        ];
        let warm = [66.68486410131656, 199.61740430483604, -233.31989213810624, 0.0];
        let reg = Regularizer::Shannon {
            eta: 0.029844343538350485,
        };
        let sol = solve_ftrl(&k, &cost, reg, Some(&warm)).unwrap();
        assert!(sol.diagnostics.converged);
    }
}
