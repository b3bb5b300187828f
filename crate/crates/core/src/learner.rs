//! The four learners: unknown or known transition, full-information or bandit
//! feedback. Each is a state machine driven by [`Learner::act`] and
//! [`Learner::observe`].

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::environment::{EpisodeFeedback, FeedbackMode, Trajectory};
use crate::error::{Error, Result};
use crate::estimation::{EpochSnapshot, EpochState};
use crate::ftrl::{m_increment, FtrlState, RegularizerSpec, SolverDiagnostics};
use crate::mdp::{
    occupancy_of, policy_from_occupancy, value_functions_raw, Layout, OccupancyMeasure, StochasticPolicy,
    TransitionKernel,
};
use crate::uob::{confidence_boxes, upper_occupancy, BoxSimplex, UpperOccupancy};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    UnknownFull,
    UnknownBandit,
    KnownFull,
    KnownBandit,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::UnknownFull,
        Variant::UnknownBandit,
        Variant::KnownFull,
        Variant::KnownBandit,
    ];

    pub fn feedback(self) -> FeedbackMode {
        match self {
            Variant::UnknownFull | Variant::KnownFull => FeedbackMode::Full,
            Variant::UnknownBandit | Variant::KnownBandit => FeedbackMode::Bandit,
        }
    }

    pub fn knows_transition(self) -> bool {
        matches!(self, Variant::KnownFull | Variant::KnownBandit)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::UnknownFull => "unknown_full",
            Variant::UnknownBandit => "unknown_bandit",
            Variant::KnownFull => "known_full",
            Variant::KnownBandit => "known_bandit",
        }
    }
}

fn default_gamma() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerConfig {
    pub variant: Variant,
    /// Confidence parameter; defaults to `1/T²` (full information) or `1/T³` (bandit).
    #[serde(default)]
    pub delta: Option<f64>,
    /// Learning-rate scale of the known-transition bandit learner.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
}

impl LearnerConfig {
    pub fn new(variant: Variant) -> Self {
        LearnerConfig {
            variant,
            delta: None,
            gamma: 1.0,
        }
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = Some(delta);
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    /// The confidence parameter used for horizon `horizon`.
    pub fn resolved_delta(&self, horizon: usize) -> f64 {
        self.delta.unwrap_or_else(|| {
            let t = horizon as f64;
            match self.variant.feedback() {
                FeedbackMode::Full => 1.0 / (t * t),
                FeedbackMode::Bandit => 1.0 / (t * t * t),
            }
        })
    }

    pub fn regularizer(&self, layout: &Layout) -> RegularizerSpec {
        match self.variant {
            Variant::UnknownFull => RegularizerSpec::unknown_full(layout),
            Variant::KnownFull => RegularizerSpec::known_full(layout),
            Variant::UnknownBandit => RegularizerSpec::unknown_bandit(layout),
            Variant::KnownBandit => RegularizerSpec::known_bandit(layout, self.gamma),
        }
    }

    pub fn validate(&self, horizon: usize) -> Result<()> {
        let delta = self.resolved_delta(horizon);
        if !self.variant.knows_transition() && !(delta > 0.0 && delta <= 1.0) {
            return Err(Error::config(format!("confidence parameter δ = {delta} not in (0, 1]")));
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::config(format!("γ = {} must be positive", self.gamma)));
        }
        Ok(())
    }
}

/// `ℓ̂ = observed - bonus`, with both parts kept for auditing.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjustedLoss {
    /// `ℓ` (full information) or the importance-weighted `ℓ 𝟙 / u` (bandit).
    pub observed: Vec<f64>,
    /// `L · B(s, a)`; zero for known transitions.
    pub bonus: Vec<f64>,
}

impl AdjustedLoss {
    pub fn values(&self) -> Vec<f64> {
        self.observed.iter().zip(&self.bonus).map(|(o, b)| o - b).collect()
    }
}

/// What the learner commits to at the start of an episode.
#[derive(Clone, Debug)]
pub struct Decision {
    pub t: usize,
    pub epoch: usize,
    pub epoch_start: usize,
    pub eta: f64,
    pub q_hat: OccupancyMeasure,
    pub policy: StochasticPolicy,
    pub solver: SolverDiagnostics,
}

/// One episode from the learner's point of view.
#[derive(Clone, Debug)]
pub struct EpisodeRecord {
    pub decision: Decision,
    pub trajectory: Trajectory,
    pub adjusted: AdjustedLoss,
    /// Upper occupancy bounds (unknown-transition bandit only).
    pub upper: Option<UpperOccupancy>,
    /// Epoch quantities in force during the episode (unknown transition only).
    pub snapshot: Option<Arc<EpochSnapshot>>,
    pub m_increment: f64,
    /// Whether the episode closed its epoch.
    pub rollover: bool,
    /// Whether some visited `u(s, a)` fell below the numerical floor.
    pub floor_triggered: bool,
}

/// Multiplier of the `1/(|S| t)` bound below which `u(s, a)` is floored.
pub const UOB_FLOOR_FACTOR: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct Learner {
    config: LearnerConfig,
    layout: Layout,
    horizon: usize,
    spec: RegularizerSpec,
    known: Option<Arc<TransitionKernel>>,
    epochs: Option<EpochState>,
    boxes: Vec<BoxSimplex>,
    ftrl: FtrlState,
    pending: Option<Decision>,
    episodes: usize,
}

impl Learner {
    /// `known_transition` must be given exactly for the known-transition variants.
    pub fn new(
        config: LearnerConfig,
        layout: Layout,
        horizon: usize,
        known_transition: Option<TransitionKernel>,
    ) -> Result<Self> {
        config.validate(horizon)?;
        let spec = config.regularizer(&layout);
        let (known, epochs, kernel, boxes) = match (config.variant.knows_transition(), known_transition) {
            (true, Some(p)) => {
                if p.layout() != &layout {
                    return Err(Error::structural("known transition does not match the layout"));
                }
                let p = Arc::new(p);
                (Some(Arc::clone(&p)), None, p, Vec::new())
            }
            (false, None) => {
                let epochs = EpochState::new(layout.clone(), config.resolved_delta(horizon), horizon)?;
                let kernel = Arc::new(epochs.snapshot().empirical.clone());
                let boxes = confidence_boxes(epochs.snapshot());
                (None, Some(epochs), kernel, boxes)
            }
            (true, None) => {
                return Err(Error::config(format!(
                    "{} needs the true transition",
                    config.variant.name()
                )))
            }
            (false, Some(_)) => {
                return Err(Error::config(format!(
                    "{} must not be given the true transition",
                    config.variant.name()
                )))
            }
        };
        Ok(Learner {
            config,
            layout,
            horizon,
            spec,
            known,
            epochs,
            boxes,
            ftrl: FtrlState::new(kernel),
            pending: None,
            episodes: 0,
        })
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn regularizer(&self) -> &RegularizerSpec {
        &self.spec
    }

    pub fn epochs(&self) -> Option<&EpochState> {
        self.epochs.as_ref()
    }

    pub fn ftrl(&self) -> &FtrlState {
        &self.ftrl
    }

    fn epoch_info(&self) -> (usize, usize) {
        match &self.epochs {
            Some(e) => (e.epoch(), e.epoch_start()),
            None => (1, 1),
        }
    }

    /// Solves the FTRL step for the next episode and returns its policy.
    pub fn act(&mut self) -> Result<&Decision> {
        if self.pending.is_some() {
            return Err(Error::config("act called twice without observe"));
        }
        if self.episodes >= self.horizon {
            return Err(Error::config(format!("horizon T = {} exhausted", self.horizon)));
        }
        let t = self.episodes + 1;
        let (epoch, epoch_start) = self.epoch_info();
        let eta = self.spec.eta(t, epoch_start, self.ftrl.m_stat());
        let sol = self.ftrl.solve(self.spec.at(eta))?;
        let policy = policy_from_occupancy(&self.layout, &sol.q);
        Ok(self.pending.insert(Decision {
            t,
            epoch,
            epoch_start,
            eta,
            q_hat: sol.q,
            policy,
            solver: sol.diagnostics,
        }))
    }

    /// Consumes the episode's trajectory and feedback, updates the estimator
    /// and the FTRL state, and returns the episode's record.
    pub fn observe(&mut self, trajectory: &Trajectory, feedback: &EpisodeFeedback) -> Result<EpisodeRecord> {
        let decision = self
            .pending
            .take()
            .ok_or_else(|| Error::config("observe called before act"))?;
        trajectory.check(&self.layout)?;
        if feedback.mode() != self.config.variant.feedback() {
            return Err(Error::config("feedback mode does not match the learner"));
        }
        let t = decision.t;
        let l = &self.layout;
        let n = l.n_pairs();
        let snapshot = self.epochs.as_ref().map(|e| Arc::clone(e.snapshot()));
        let bonus: Vec<f64> = match &snapshot {
            Some(s) => s.aggregate.iter().map(|b| l.horizon() as f64 * b).collect(),
            None => vec![0.0; n],
        };

        let mut upper = None;
        let mut floor_triggered = false;
        let observed: Vec<f64> = match feedback {
            EpisodeFeedback::Full(loss) => {
                loss.check_layout(l)?;
                loss.as_slice().to_vec()
            }
            EpisodeFeedback::Bandit(entries) => {
                check_bandit(l, trajectory, entries)?;
                let weights = match &self.known {
                    Some(p) => occupancy_of(p, &decision.policy)?.into_values(),
                    None => {
                        let u = upper_occupancy(l, &self.boxes, &decision.policy)?;
                        let floor = UOB_FLOOR_FACTOR / (l.n_states() as f64 * t as f64);
                        let mut w = u.pair.clone();
                        for &(s, a, _) in entries {
                            let p = l.pair(s, a);
                            if w[p] < floor {
                                w[p] = floor;
                                floor_triggered = true;
                            }
                        }
                        upper = Some(u);
                        w
                    }
                };
                let mut obs = vec![0.0; n];
                for &(s, a, loss) in entries {
                    let p = l.pair(s, a);
                    obs[p] = loss / weights[p];
                }
                obs
            }
        };
        let adjusted = AdjustedLoss { observed, bonus };
        let values = adjusted.values();

        let m_inc = match (self.config.variant, feedback) {
            (Variant::UnknownFull, _) => m_increment(self.ftrl.kernel(), &decision.q_hat, &values, &decision.policy)?,
            (Variant::KnownFull, EpisodeFeedback::Full(loss)) => {
                let p = self.known.as_ref().expect("known transition");
                let q = occupancy_of(p, &decision.policy)?;
                m_increment(p, &q, loss.as_slice(), &decision.policy)?
            }
            _ => 0.0,
        };
        self.ftrl.accumulate(&values, m_inc)?;

        let mut rollover = false;
        if let Some(epochs) = self.epochs.as_mut() {
            rollover = epochs.observe_transition(t, trajectory)?;
            if rollover {
                self.boxes = confidence_boxes(epochs.snapshot());
                self.ftrl.reset(Arc::new(epochs.snapshot().empirical.clone()));
            }
        }
        self.episodes = t;
        Ok(EpisodeRecord {
            decision,
            trajectory: trajectory.clone(),
            adjusted,
            upper,
            snapshot,
            m_increment: m_inc,
            rollover,
            floor_triggered,
        })
    }
}

fn check_bandit(layout: &Layout, trajectory: &Trajectory, entries: &[(usize, usize, f64)]) -> Result<()> {
    if entries.len() != layout.horizon()
        || entries
            .iter()
            .enumerate()
            .any(|(k, &(s, a, _))| s != trajectory.states[k] || a != trajectory.actions[k])
    {
        return Err(Error::structural("bandit feedback does not follow the trajectory"));
    }
    Ok(())
}

/// A pair where the estimated value exceeded the true one.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OptimismViolation {
    pub t: usize,
    /// `"played"` or `"optimal"`.
    pub policy: &'static str,
    pub state: usize,
    pub action: usize,
    pub estimated: f64,
    pub truth: f64,
}

/// Tolerance of the optimism check.
pub const OPTIMISM_TOL: f64 = 1e-9;

/// Checks `Q̂^π ≤ Q^π` (full information) or `Q̃^π ≤ Q^π` (bandit, with
/// `ℓ̃ = ℓ q_t / u_t - L B`) for the played policy and `comparator`. Only
/// meaningful for unknown-transition records; returns no violations otherwise.
pub fn optimism_audit(
    record: &EpisodeRecord,
    truth: &TransitionKernel,
    loss: &[f64],
    comparator: Option<&StochasticPolicy>,
) -> Result<Vec<OptimismViolation>> {
    let Some(snapshot) = &record.snapshot else {
        return Ok(Vec::new());
    };
    let layout = truth.layout();
    let estimate: Vec<f64> = match &record.upper {
        None => record.adjusted.values(),
        Some(u) => {
            let q = occupancy_of(truth, &record.decision.policy)?;
            (0..layout.n_pairs())
                .map(|p| {
                    let ratio = if q.get(p) == 0.0 { 0.0 } else { q.get(p) / u.pair[p] };
                    ratio * loss[p] - record.adjusted.bonus[p]
                })
                .collect()
        }
    };
    let mut out = Vec::new();
    let mut policies = vec![("played", &record.decision.policy)];
    if let Some(c) = comparator {
        policies.push(("optimal", c));
    }
    for (name, pi) in policies {
        let est = value_functions_raw(&snapshot.empirical, &estimate, pi)?;
        let tru = value_functions_raw(truth, loss, pi)?;
        for p in 0..layout.n_pairs() {
            if est.q[p] > tru.q[p] + OPTIMISM_TOL {
                let s = layout.pair_state(p);
                out.push(OptimismViolation {
                    t: record.decision.t,
                    policy: name,
                    state: s,
                    action: p - layout.pair(s, 0),
                    estimated: est.q[p],
                    truth: tru.q[p],
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::rollout;
    use crate::mdp::LossFunction;
    use crate::rng::RngStream;
    use rand::Rng;

    fn setup() -> (Layout, TransitionKernel) {
        let layout = Layout::new(vec![1, 2, 1], 2).unwrap();
        let mut rng = RngStream::new(17, 2);
        let k = TransitionKernel::random(layout.clone(), &mut rng);
        (layout, k)
    }

    #[test]
    fn default_deltas() {
        assert_eq!(LearnerConfig::new(Variant::UnknownFull).resolved_delta(10), 0.01);
        assert_eq!(LearnerConfig::new(Variant::UnknownBandit).resolved_delta(10), 0.001);
    }

    #[test]
    fn capability_separation() {
        let (layout, k) = setup();
        assert!(Learner::new(
            LearnerConfig::new(Variant::UnknownFull),
            layout.clone(),
            10,
            Some(k.clone())
        )
        .is_err());
        assert!(Learner::new(LearnerConfig::new(Variant::KnownBandit), layout, 10, None).is_err());
    }

    #[test]
    fn unknown_full_cold_start() {
        let (layout, k) = setup();
        let mut learner = Learner::new(LearnerConfig::new(Variant::UnknownFull), layout.clone(), 100, None).unwrap();
        let mut rng = RngStream::new(1, 1);
        let d = learner.act().unwrap().clone();
        assert_eq!(d.eta, 1.0 / 32.0);
        let loss = LossFunction::unit((0..6).map(|_| rng.gen()).collect()).unwrap();
        let (traj, fb) = rollout(&k, &d.policy, &loss, FeedbackMode::Full, &mut rng);
        let rec = learner.observe(&traj, &fb).unwrap();
        for p in 0..6 {
            assert_eq!(rec.adjusted.values()[p], loss.get(p) - 2.0);
        }
        assert!(rec.rollover);
        // The sum restarts with the new epoch.
        assert!(learner.ftrl().cumulative().iter().all(|c| *c == 0.0));
    }

    #[test]
    fn known_bandit_importance_weights() {
        let layout = Layout::new(vec![1, 1], 2).unwrap();
        let k = TransitionKernel::uniform(layout.clone());
        let mut learner = Learner::new(LearnerConfig::new(Variant::KnownBandit), layout, 10, Some(k.clone())).unwrap();
        let mut rng = RngStream::new(3, 1);
        let d = learner.act().unwrap().clone();
        let loss = LossFunction::unit(vec![0.4, 0.9]).unwrap();
        let (traj, fb) = rollout(&k, &d.policy, &loss, FeedbackMode::Bandit, &mut rng);
        let rec = learner.observe(&traj, &fb).unwrap();
        let a = traj.actions[0];
        for b in 0..2 {
            let expect = if a == b { loss.get(b) / d.policy.prob(0, b) } else { 0.0 };
            assert!((rec.adjusted.observed[b] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn maximal_bonus_is_optimistic() {
        let (layout, k) = setup();
        let mut learner = Learner::new(LearnerConfig::new(Variant::UnknownBandit), layout.clone(), 50, None).unwrap();
        let mut rng = RngStream::new(5, 1);
        let d = learner.act().unwrap().clone();
        let loss = LossFunction::unit((0..6).map(|_| rng.gen()).collect()).unwrap();
        let (traj, fb) = rollout(&k, &d.policy, &loss, FeedbackMode::Bandit, &mut rng);
        let rec = learner.observe(&traj, &fb).unwrap();
        assert!(rec.snapshot.as_ref().unwrap().aggregate.iter().all(|b| *b == 1.0));
        let v = optimism_audit(&rec, &k, loss.as_slice(), None).unwrap();
        assert!(v.is_empty());
    }
}
