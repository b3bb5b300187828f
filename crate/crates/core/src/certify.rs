//! Randomized certification of the FTRL solver and the upper occupancy bounds
//! against their slow reference oracles.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::ftrl::{solve_ftrl, Regularizer};
use crate::mdp::{Layout, StochasticPolicy, TransitionKernel};
use crate::oracle::{mirror_descent_oracle, uob_enumeration_oracle, OracleOptions, OracleRegularizer};
use crate::rng::RngStream;
use crate::uob::{upper_occupancy, BoxSimplex};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerKind {
    Shannon,
    TsallisLogBarrier,
}

/// Solver against oracle on one random instance.
#[derive(Clone, Debug, Serialize)]
pub struct FtrlCase {
    pub instance: usize,
    pub layers: usize,
    pub solver_objective: f64,
    pub oracle_objective: f64,
    pub oracle_gap: f64,
    pub flow_residual: f64,
}

impl FtrlCase {
    pub fn objective_error(&self) -> f64 {
        (self.solver_objective - self.oracle_objective).abs()
    }
}

/// Random layout with `layers` layers of 1 to 3 states and 2 or 3 actions.
pub fn random_layout(rng: &mut RngStream, layers: usize) -> Layout {
    let mut sizes = vec![1];
    for _ in 1..layers {
        sizes.push(rng.gen_range(1..=3));
    }
    sizes.push(1);
    Layout::new(sizes, rng.gen_range(2..=3)).expect("valid random layout")
}

/// Random FTRL problem: kernel, cumulative cost and regularizer of `kind`.
pub fn random_ftrl_instance(rng: &mut RngStream, kind: RegularizerKind) -> (TransitionKernel, Vec<f64>, Regularizer) {
    let layers = rng.gen_range(1..=3);
    let layout = random_layout(rng, layers);
    let kernel = TransitionKernel::random(layout.clone(), rng);
    let scale = 10f64.powf(rng.gen_range(-1.0..2.0));
    let cost = (0..layout.n_pairs())
        .map(|_| scale * (rng.gen::<f64>() - 0.3))
        .collect();
    let eta = 10f64.powf(rng.gen_range(-1.5..0.5));
    let reg = match kind {
        RegularizerKind::Shannon => Regularizer::Shannon { eta },
        RegularizerKind::TsallisLogBarrier => Regularizer::TsallisLogBarrier {
            eta,
            beta: 10f64.powf(rng.gen_range(-2.0..1.0)),
        },
    };
    (kernel, cost, reg)
}

fn oracle_of(reg: Regularizer) -> OracleRegularizer {
    match reg {
        Regularizer::Shannon { eta } => OracleRegularizer::Shannon { eta },
        Regularizer::TsallisLogBarrier { eta, beta } => OracleRegularizer::Tsallis { eta, beta },
    }
}

/// Solves `instances` random problems with both the solver and the oracle.
pub fn certify_ftrl(kind: RegularizerKind, instances: usize, seed: u64) -> Result<Vec<FtrlCase>> {
    let mut rng = RngStream::new(seed, kind as u64);
    let problems: Vec<_> = (0..instances).map(|_| random_ftrl_instance(&mut rng, kind)).collect();
    problems
        .into_par_iter()
        .enumerate()
        .map(|(instance, (kernel, cost, reg))| {
            let sol = solve_ftrl(&kernel, &cost, reg, None)?;
            let orc = mirror_descent_oracle(&kernel, &cost, oracle_of(reg), OracleOptions::default())?;
            Ok(FtrlCase {
                instance,
                layers: kernel.layout().horizon(),
                solver_objective: sol.diagnostics.objective,
                oracle_objective: orc.objective,
                oracle_gap: orc.gap,
                flow_residual: sol.diagnostics.flow_residual,
            })
        })
        .collect()
}

/// Largest deviation of one-layer Shannon FTRL from exponential weights
/// `q(a) ∝ exp(-η c(a))` over `instances` random problems.
pub fn one_layer_closed_form_error(instances: usize, seed: u64) -> Result<f64> {
    let mut rng = RngStream::new(seed, 7);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let n = rng.gen_range(2..=6);
        let layout = Layout::new(vec![1, 1], n)?;
        let kernel = TransitionKernel::uniform(layout);
        let cost: Vec<f64> = (0..n).map(|_| 20.0 * rng.gen::<f64>()).collect();
        let eta = 10f64.powf(rng.gen_range(-1.5..0.5));
        let sol = solve_ftrl(&kernel, &cost, Regularizer::Shannon { eta }, None)?;
        let min = cost.iter().copied().fold(f64::INFINITY, f64::min);
        let w: Vec<f64> = cost.iter().map(|c| (-eta * (c - min)).exp()).collect();
        let z: f64 = w.iter().sum();
        for (q, wi) in sol.q.as_slice().iter().zip(&w) {
            worst = worst.max((q - wi / z).abs());
        }
    }
    Ok(worst)
}

/// Greedy upper occupancy against vertex enumeration on one random instance.
#[derive(Clone, Debug, Serialize)]
pub struct UobCase {
    pub instance: usize,
    pub max_error: f64,
}

/// Compares the greedy upper occupancy bound with brute-force enumeration on
/// random two- and three-layer instances with random box widths.
pub fn certify_uob(instances: usize, seed: u64) -> Result<Vec<UobCase>> {
    let mut rng = RngStream::new(seed, 11);
    let mut out = Vec::with_capacity(instances);
    for instance in 0..instances {
        let layers = rng.gen_range(2..=3);
        let layout = loop {
            let l = random_layout(&mut rng, layers);
            if l.n_pairs() <= 8 {
                break l;
            }
        };
        let center = TransitionKernel::random(layout.clone(), &mut rng);
        let boxes = (0..layout.n_pairs())
            .map(|p| {
                let row = center.row_of_pair(p);
                let width: Vec<f64> = row.iter().map(|_| rng.gen::<f64>() * 0.5).collect();
                BoxSimplex::new(row, &width)
            })
            .collect::<Result<Vec<_>>>()?;
        let policy = StochasticPolicy::random(&layout, &mut rng);
        let greedy = upper_occupancy(&layout, &boxes, &policy)?;
        let brute = uob_enumeration_oracle(&layout, &boxes, &policy)?;
        let max_error = (0..layout.n_nonterminal())
            .map(|s| (greedy.state[s] - brute[s]).abs())
            .fold(0.0, f64::max);
        out.push(UobCase { instance, max_error });
    }
    Ok(out)
}
