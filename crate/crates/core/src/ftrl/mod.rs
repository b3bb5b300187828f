//! Follow-the-regularized-leader over the occupancy polytope of a fixed
//! transition kernel.

mod regularizer;
mod solver;

use std::sync::Arc;

pub use regularizer::{shannon_eta, EtaSchedule, Regularizer, RegularizerSpec};
pub use solver::{solve_ftrl, solve_ftrl_with, FtrlSolution, SolverDiagnostics, SolverOptions};

use crate::error::{Error, Result};
use crate::mdp::{value_functions_raw, OccupancyMeasure, StochasticPolicy, TransitionKernel};

/// Loss sum, Shannon statistic and warm start of one FTRL instance. Each epoch
/// of the unknown-transition learners runs a fresh instance.
#[derive(Clone, Debug)]
pub struct FtrlState {
    kernel: Arc<TransitionKernel>,
    cumulative: Vec<f64>,
    episodes: usize,
    m_stat: f64,
    warm: Option<Vec<f64>>,
}

impl FtrlState {
    pub fn new(kernel: Arc<TransitionKernel>) -> Self {
        let n = kernel.layout().n_pairs();
        FtrlState {
            kernel,
            cumulative: vec![0.0; n],
            episodes: 0,
            m_stat: 0.0,
            warm: None,
        }
    }

    /// Starts over on a new kernel with an empty loss sum.
    pub fn reset(&mut self, kernel: Arc<TransitionKernel>) {
        *self = FtrlState::new(kernel);
    }

    pub fn kernel(&self) -> &Arc<TransitionKernel> {
        &self.kernel
    }

    /// Sum of the losses accumulated since the last reset.
    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    /// Number of losses accumulated since the last reset.
    pub fn episodes(&self) -> usize {
        self.episodes
    }

    /// Accumulated Shannon statistic `M`.
    pub fn m_stat(&self) -> f64 {
        self.m_stat
    }

    pub fn accumulate(&mut self, loss: &[f64], m_increment: f64) -> Result<()> {
        if loss.len() != self.cumulative.len() {
            return Err(Error::structural("loss does not match the FTRL state"));
        }
        for (c, l) in self.cumulative.iter_mut().zip(loss) {
            *c += l;
        }
        self.episodes += 1;
        self.m_stat += m_increment;
        Ok(())
    }

    /// Solves the current step, warm-started from the previous solution.
    pub fn solve(&mut self, reg: Regularizer) -> Result<FtrlSolution> {
        let sol = solve_ftrl(&self.kernel, &self.cumulative, reg, self.warm.as_deref())?;
        self.warm = Some(sol.dual.clone());
        Ok(sol)
    }
}

/// `min{Σ q ℓ², Σ q (Q - V)²}` with `Q`, `V` the values of `policy` for `loss`
/// under `kernel`.
pub fn m_increment(
    kernel: &TransitionKernel,
    q: &OccupancyMeasure,
    loss: &[f64],
    policy: &StochasticPolicy,
) -> Result<f64> {
    let layout = kernel.layout();
    let values = value_functions_raw(kernel, loss, policy)?;
    let mut direct = 0.0;
    let mut shifted = 0.0;
    for p in 0..layout.n_pairs() {
        let adv = values.q[p] - values.v[layout.pair_state(p)];
        direct += q.get(p) * loss[p] * loss[p];
        shifted += q.get(p) * adv * adv;
    }
    Ok(direct.min(shifted))
}

/// `g(s, a) = Q(s, a) - V(s) - ℓ(s, a)` for the values of `policy` under
/// `kernel`; `⟨q, g⟩ = -V(s_0)` for every `q ∈ Ω(kernel)`.
pub fn loss_shift(kernel: &TransitionKernel, policy: &StochasticPolicy, loss: &[f64]) -> Result<Vec<f64>> {
    let layout = kernel.layout();
    let values = value_functions_raw(kernel, loss, policy)?;
    Ok((0..layout.n_pairs())
        .map(|p| values.q[p] - values.v[layout.pair_state(p)] - loss[p])
        .collect())
}
