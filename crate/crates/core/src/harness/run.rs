use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::environment::{rollout, FeedbackMode, LossSequence};
use crate::error::{Error, Result};
use crate::estimation::{contains_true, epoch_count_bound, EpochSnapshot, EpochTraceRow};
use crate::learner::{optimism_audit, Learner, LearnerConfig, OptimismViolation};
use crate::mdp::{best_policy_in_hindsight, occupancy_of, value_functions_raw, LossFunction, StochasticPolicy};
use crate::rng::{RngStream, StreamPurpose};
use crate::uob::dominance_check;

use super::config::{ExperimentConfig, World};

/// Who picks the policies: one of the FTRL learners, or a fixed policy used
/// as a baseline.
#[derive(Clone, Debug)]
pub enum Player {
    Learner(LearnerConfig),
    Fixed(StochasticPolicy),
}

/// One row of the per-episode CSV.
///
/// `cum_reg_opt` is measured against the hindsight-optimal policy of the whole
/// run, so intermediate values use the final comparator.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpisodeRow {
    pub rep: usize,
    pub t: usize,
    pub epoch: usize,
    pub eta: Option<f64>,
    pub learner_exp_loss: f64,
    pub learner_sampled_loss: f64,
    pub cum_reg_opt: f64,
    pub cum_reg_pistar: Option<f64>,
    pub ledger_increment: Option<f64>,
    #[serde(rename = "A_holds")]
    pub a_holds: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolverRow {
    pub rep: usize,
    pub t: usize,
    pub iterations: usize,
    pub flow_residual: f64,
    pub objective: f64,
}

/// End-of-run numbers for one replication.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub rep: usize,
    pub player: String,
    pub horizon: usize,
    pub epochs: usize,
    pub epoch_bound: f64,
    /// Whether the true transition stayed in every confidence set.
    pub a_held: Option<bool>,
    pub a_holds_episodes: usize,
    pub learner_exp_loss: f64,
    pub learner_sampled_loss: f64,
    pub hindsight_loss: f64,
    /// `Reg_T(π̊)` from occupancy inner products.
    pub reg_opt: f64,
    /// `Reg_T(π̊)` from value recursions.
    pub reg_opt_by_values: f64,
    pub reg_pistar: Option<f64>,
    pub ledger: Option<f64>,
    pub corruption_spent: f64,
    pub optimism_checks: usize,
    /// Violations on episodes where the confidence event held.
    pub optimism_violations: usize,
    pub optimism_violations_outside_a: usize,
    pub uob_checks: usize,
    pub uob_lower_violations: usize,
    pub uob_dominance_violations: usize,
    pub floor_triggers: usize,
    pub max_flow_residual: f64,
    pub max_solver_iterations: usize,
    pub cold_starts: usize,
}

/// Everything one replication produced.
#[derive(Clone, Debug)]
pub struct RunReport {
    pub summary: RunSummary,
    /// Empty unless the config keeps episodes.
    pub episodes: Vec<EpisodeRow>,
    pub epoch_trace: Vec<EpochTraceRow>,
    pub solver: Vec<SolverRow>,
    /// The first few optimism violations, for diagnosis.
    pub violations: Vec<OptimismViolation>,
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub runs: Vec<RunReport>,
}

const KEPT_VIOLATIONS: usize = 16;

/// Builds the world and runs every replication of `config` in parallel.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let world = config.build()?;
    let runs = run_with_player(config, &world, &Player::Learner(config.learner.clone()))?;
    Ok(ExperimentReport {
        config: config.clone(),
        runs,
    })
}

/// Runs every replication of `config` on a prebuilt `world` with `player`.
/// Replications own isolated random streams, so the result does not depend on
/// scheduling.
pub fn run_with_player(config: &ExperimentConfig, world: &World, player: &Player) -> Result<Vec<RunReport>> {
    (0..config.replications)
        .into_par_iter()
        .map(|rep| run_replication(config, world, player, rep))
        .collect()
}

struct Agent {
    learner: Option<Learner>,
    fixed: Option<StochasticPolicy>,
    mode: FeedbackMode,
}

/// Plays one replication.
pub fn run_replication(config: &ExperimentConfig, world: &World, player: &Player, rep: usize) -> Result<RunReport> {
    let kernel = world.mdp.transition();
    let layout = world.mdp.layout();
    let horizon = config.horizon;
    let n = layout.n_pairs();

    let mut agent = match player {
        Player::Learner(cfg) => {
            let known = cfg.variant.knows_transition().then(|| kernel.clone());
            Agent {
                learner: Some(Learner::new(cfg.clone(), layout.clone(), horizon, known)?),
                fixed: None,
                mode: cfg.variant.feedback(),
            }
        }
        Player::Fixed(pi) => {
            pi.check_layout(layout)?;
            Agent {
                learner: None,
                fixed: Some(pi.clone()),
                mode: FeedbackMode::Full,
            }
        }
    };
    let player_name = match player {
        Player::Learner(cfg) => cfg.variant.name().to_string(),
        Player::Fixed(_) => "fixed".to_string(),
    };
    let audit = config.audit && agent.learner.as_ref().is_some_and(|l| l.epochs().is_some());

    let pistar = world.gaps.as_ref().map(|g| g.policy(layout));
    let q_star = pistar.as_ref().map(|p| occupancy_of(kernel, p)).transpose()?;

    let loss_stream = RngStream::for_replication(config.seed, rep as u64, StreamPurpose::Losses);
    let mut losses = LossSequence::new(world.generator.clone(), loss_stream.clone());
    let mut roll_rng = RngStream::for_replication(config.seed, rep as u64, StreamPurpose::Rollout);

    let mut cumulative = vec![0.0; n];
    let mut cum_exp = 0.0;
    let mut cum_values = 0.0;
    let mut cum_sampled = 0.0;
    let mut cum_pistar = 0.0;
    let mut ledger = 0.0;
    let mut episodes = Vec::with_capacity(if config.keep_episodes { horizon } else { 0 });
    let mut solver = Vec::new();
    let mut violations = Vec::new();
    let mut summary = RunSummary {
        rep,
        player: player_name,
        horizon,
        epochs: 1,
        epoch_bound: epoch_count_bound(layout.n_states(), layout.n_actions(), horizon),
        a_held: None,
        a_holds_episodes: 0,
        learner_exp_loss: 0.0,
        learner_sampled_loss: 0.0,
        hindsight_loss: 0.0,
        reg_opt: 0.0,
        reg_opt_by_values: 0.0,
        reg_pistar: None,
        ledger: None,
        corruption_spent: 0.0,
        optimism_checks: 0,
        optimism_violations: 0,
        optimism_violations_outside_a: 0,
        uob_checks: 0,
        uob_lower_violations: 0,
        uob_dominance_violations: 0,
        floor_triggers: 0,
        max_flow_residual: 0.0,
        max_solver_iterations: 0,
        cold_starts: 0,
    };
    let mut a_cache: Option<(Arc<EpochSnapshot>, bool)> = None;

    for t in 1..=horizon {
        let loss = losses.next_loss(t)?;
        let policy = match (&mut agent.learner, &agent.fixed) {
            (Some(l), _) => l.act()?.policy.clone(),
            (None, Some(p)) => p.clone(),
            _ => unreachable!("agent has a learner or a fixed policy"),
        };
        let q = occupancy_of(kernel, &policy)?;
        let exp_loss = q.inner(loss.as_slice());
        cum_exp += exp_loss;
        cum_values += value_functions_raw(kernel, loss.as_slice(), &policy)?.v[0];
        for (c, l) in cumulative.iter_mut().zip(loss.as_slice()) {
            *c += l;
        }
        let (trajectory, feedback) = rollout(kernel, &policy, &loss, agent.mode, &mut roll_rng);
        let sampled: f64 = trajectory.pairs(layout).map(|p| loss.get(p)).sum();
        cum_sampled += sampled;

        let mut ledger_increment = None;
        if let (Some(qs), Some(gaps)) = (&q_star, &world.gaps) {
            cum_pistar += exp_loss - qs.inner(loss.as_slice());
            let inc = q.inner(&gaps.gaps);
            ledger += inc;
            ledger_increment = Some(inc);
        }

        let (epoch, eta, a_holds) = match &mut agent.learner {
            None => (1, None, None),
            Some(learner) => {
                let record = learner.observe(&trajectory, &feedback)?;
                let d = &record.decision;
                summary.max_flow_residual = summary.max_flow_residual.max(d.solver.flow_residual);
                summary.max_solver_iterations = summary.max_solver_iterations.max(d.solver.iterations);
                summary.cold_starts += d.solver.cold_start as usize;
                summary.floor_triggers += record.floor_triggered as usize;
                if config.output.solver_diagnostics {
                    solver.push(SolverRow {
                        rep,
                        t,
                        iterations: d.solver.iterations,
                        flow_residual: d.solver.flow_residual,
                        objective: d.solver.objective,
                    });
                }
                let a_holds = record.snapshot.as_ref().map(|snap| match &a_cache {
                    Some((cached, held)) if Arc::ptr_eq(cached, snap) => *held,
                    _ => {
                        let held = contains_true(snap, kernel);
                        a_cache = Some((Arc::clone(snap), held));
                        held
                    }
                });
                if a_holds == Some(true) {
                    summary.a_holds_episodes += 1;
                }
                if audit {
                    let found = optimism_audit(&record, kernel, loss.as_slice(), pistar.as_ref())?;
                    summary.optimism_checks += 1;
                    if a_holds == Some(true) {
                        summary.optimism_violations += found.len();
                    } else {
                        summary.optimism_violations_outside_a += found.len();
                    }
                    let room = KEPT_VIOLATIONS.saturating_sub(violations.len());
                    violations.extend(found.into_iter().take(room));
                    if let Some(u) = &record.upper {
                        summary.uob_checks += 1;
                        let bound = 1.0 / (layout.n_states() as f64 * t as f64);
                        summary.uob_lower_violations += u.state.iter().filter(|&&x| x < bound).count();
                        if a_holds == Some(true) && !dominance_check(u, &q) {
                            summary.uob_dominance_violations += 1;
                        }
                    }
                }
                (d.epoch, Some(d.eta), a_holds)
            }
        };

        if config.keep_episodes {
            episodes.push(EpisodeRow {
                rep,
                t,
                epoch,
                eta,
                learner_exp_loss: exp_loss,
                learner_sampled_loss: sampled,
                cum_reg_opt: 0.0,
                cum_reg_pistar: q_star.as_ref().map(|_| cum_pistar),
                ledger_increment,
                a_holds,
            });
        }
    }

    let (hindsight, hindsight_loss) = best_policy_in_hindsight(&world.mdp, &LossFunction::unbounded(cumulative))?;
    if config.keep_episodes {
        // Replay the loss stream to charge the final comparator episode by episode.
        let q_opt = occupancy_of(kernel, &hindsight)?;
        let mut replay = LossSequence::new(world.generator.clone(), loss_stream);
        let mut learner_sum = 0.0;
        let mut opt_sum = 0.0;
        for row in episodes.iter_mut() {
            let loss = replay.next_loss(row.t)?;
            learner_sum += row.learner_exp_loss;
            opt_sum += q_opt.inner(loss.as_slice());
            row.cum_reg_opt = learner_sum - opt_sum;
        }
    }

    if let Some(learner) = &agent.learner {
        if let Some(e) = learner.epochs() {
            summary.epochs = e.epochs_used();
            summary.a_held = Some(summary.a_holds_episodes == horizon);
        }
    }
    let epoch_trace = match agent.learner.as_ref().and_then(|l| l.epochs()) {
        Some(e) if config.output.epoch_trace => e.trace().to_vec(),
        _ => Vec::new(),
    };
    summary.learner_exp_loss = cum_exp;
    summary.learner_sampled_loss = cum_sampled;
    summary.hindsight_loss = hindsight_loss;
    summary.reg_opt = cum_exp - hindsight_loss;
    summary.reg_opt_by_values = cum_values - hindsight_loss;
    summary.corruption_spent = losses.corruption_spent();
    if q_star.is_some() {
        summary.reg_pistar = Some(cum_pistar);
        summary.ledger = Some(ledger);
    }
    Ok(RunReport {
        summary,
        episodes,
        epoch_trace,
        solver,
        violations,
    })
}

/// `Σ_t Σ_{s, a ≠ π*(s)} q_t(s, a) Δ(s, a)` of a run, with `q_t` the true
/// occupancy of the played policy.
pub fn condition_ledger(report: &RunReport) -> Result<f64> {
    report.summary.ledger.ok_or_else(|| {
        Error::NotApplicable("the gap ledger needs a stochastic world with a unique optimal policy".into())
    })
}
