//! Loss processes for the adversarial and stochastic worlds, and episode rollout.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{GapInfo, LayeredMdp, Layout, LossFunction, StochasticPolicy, TransitionKernel};
use crate::rng::RngStream;

/// How an i.i.d. table of means turns into a per-episode loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Each entry is an independent Bernoulli draw with the given mean.
    #[default]
    Bernoulli,
    /// Every episode emits the mean table itself.
    DeterministicMean,
}

/// Loss tables for a scripted adversary: inline or a JSON file holding an
/// array of tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LossScript {
    Inline(Vec<Vec<f64>>),
    File { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossGenerator {
    IidStochastic {
        means: Vec<f64>,
        #[serde(default)]
        sampling: Sampling,
    },
    AdversarialScripted {
        script: LossScript,
    },
    /// I.i.d. losses whose scheduled episodes are replaced by `replacement`,
    /// with the total deviation `Σ_t ‖ℓ_t − ℓ_t^{iid}‖_∞` capped at `budget`.
    CorruptedIid {
        means: Vec<f64>,
        #[serde(default)]
        sampling: Sampling,
        budget: f64,
        episodes: Vec<usize>,
        replacement: Vec<f64>,
    },
    /// Alternates between two mean tables every `block` episodes, starting with the first.
    SwitchingAdversary {
        tables: Vec<Vec<f64>>,
        block: usize,
        #[serde(default = "deterministic")]
        sampling: Sampling,
    },
}

fn deterministic() -> Sampling {
    Sampling::DeterministicMean
}

fn check_table(name: &str, table: &[f64], n_pairs: usize) -> Result<()> {
    if table.len() != n_pairs {
        return Err(Error::config(format!(
            "{name} has {} entries, MDP has {n_pairs} state-action pairs",
            table.len()
        )));
    }
    if let Some(x) = table.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(Error::config(format!("{name} entry {x} outside [0, 1]")));
    }
    Ok(())
}

fn read_script(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_script(&text)
}

/// Parses a loss script: a JSON array of loss tables.
pub fn parse_script(text: &str) -> Result<Vec<Vec<f64>>> {
    serde_json::from_str(text).map_err(|source| Error::Json {
        context: "loss script".into(),
        source,
    })
}

impl LossGenerator {
    /// Loads any script file and checks the generator against a layout and horizon.
    pub fn resolve(&self, base_dir: Option<&Path>, layout: &Layout, horizon: usize) -> Result<Self> {
        let n = layout.n_pairs();
        let resolved = match self {
            LossGenerator::AdversarialScripted { script } => {
                let tables = match script {
                    LossScript::Inline(t) => t.clone(),
                    LossScript::File { path } => {
                        let full = match base_dir {
                            Some(dir) if path.is_relative() => dir.join(path),
                            _ => path.clone(),
                        };
                        read_script(&full)?
                    }
                };
                if tables.len() < horizon {
                    return Err(Error::config(format!(
                        "loss script has {} tables but T = {horizon}",
                        tables.len()
                    )));
                }
                for (i, t) in tables.iter().enumerate() {
                    check_table(&format!("script table {i}"), t, n)?;
                }
                LossGenerator::AdversarialScripted {
                    script: LossScript::Inline(tables),
                }
            }
            other => other.clone(),
        };
        match &resolved {
            LossGenerator::IidStochastic { means, .. } => check_table("means", means, n)?,
            LossGenerator::CorruptedIid {
                means,
                budget,
                episodes,
                replacement,
                ..
            } => {
                check_table("means", means, n)?;
                check_table("replacement", replacement, n)?;
                if !(*budget >= 0.0) || !budget.is_finite() {
                    return Err(Error::config("corruption budget must be finite and ≥ 0"));
                }
                if let Some(e) = episodes.iter().find(|&&e| e == 0 || e > horizon) {
                    return Err(Error::config(format!("corruption episode {e} outside 1..={horizon}")));
                }
            }
            LossGenerator::SwitchingAdversary { tables, block, .. } => {
                if tables.len() != 2 {
                    return Err(Error::config("switching adversary needs exactly two tables"));
                }
                if *block == 0 {
                    return Err(Error::config("switching block length must be positive"));
                }
                for (i, t) in tables.iter().enumerate() {
                    check_table(&format!("switching table {i}"), t, n)?;
                }
            }
            LossGenerator::AdversarialScripted { .. } => {}
        }
        Ok(resolved)
    }

    /// Mean loss of a stochastic world, `None` for adversarial kinds.
    pub fn mean_table(&self) -> Option<&[f64]> {
        match self {
            LossGenerator::IidStochastic { means, .. } | LossGenerator::CorruptedIid { means, .. } => Some(means),
            _ => None,
        }
    }

    pub fn is_stochastic(&self) -> bool {
        self.mean_table().is_some()
    }

    /// Loss of episode `t` (1-based) before any corruption.
    ///
    /// Pure given `t` and the state of `rng`; corrupted generators return
    /// their i.i.d. component here and are corrupted by [`LossSequence`].
    pub fn draw(&self, t: usize, rng: &mut RngStream) -> Result<LossFunction> {
        if t == 0 {
            return Err(Error::config("episodes are numbered from 1"));
        }
        let values = match self {
            LossGenerator::IidStochastic { means, sampling } | LossGenerator::CorruptedIid { means, sampling, .. } => {
                sample_table(means, *sampling, rng)
            }
            LossGenerator::AdversarialScripted { script } => match script {
                LossScript::Inline(tables) => tables
                    .get(t - 1)
                    .cloned()
                    .ok_or_else(|| Error::config(format!("loss script exhausted at episode {t}")))?,
                LossScript::File { path } => {
                    return Err(Error::config(format!(
                        "script {} must be resolved before drawing",
                        path.display()
                    )))
                }
            },
            LossGenerator::SwitchingAdversary {
                tables,
                block,
                sampling,
            } => {
                let which = ((t - 1) / block) % 2;
                sample_table(&tables[which], *sampling, rng)
            }
        };
        LossFunction::unit(values)
    }
}

fn sample_table(means: &[f64], sampling: Sampling, rng: &mut RngStream) -> Vec<f64> {
    match sampling {
        Sampling::DeterministicMean => means.to_vec(),
        Sampling::Bernoulli => means
            .iter()
            .map(|&m| if rng.uniform() < m { 1.0 } else { 0.0 })
            .collect(),
    }
}

/// A loss process being played out: the generator, its random stream and
/// the corruption spent so far.
#[derive(Clone, Debug)]
pub struct LossSequence {
    generator: LossGenerator,
    rng: RngStream,
    corruption_spent: f64,
    scheduled: Vec<bool>,
}

impl LossSequence {
    /// `generator` must already be [resolved](LossGenerator::resolve).
    pub fn new(generator: LossGenerator, rng: RngStream) -> Self {
        let scheduled = match &generator {
            LossGenerator::CorruptedIid { episodes, .. } => {
                let max = episodes.iter().copied().max().unwrap_or(0);
                let mut s = vec![false; max + 1];
                for &e in episodes {
                    s[e] = true;
                }
                s
            }
            _ => Vec::new(),
        };
        LossSequence {
            generator,
            rng,
            corruption_spent: 0.0,
            scheduled,
        }
    }

    pub fn generator(&self) -> &LossGenerator {
        &self.generator
    }

    /// Total `Σ_t ‖ℓ_t − ℓ_t^{iid}‖_∞` applied so far.
    pub fn corruption_spent(&self) -> f64 {
        self.corruption_spent
    }

    pub fn next_loss(&mut self, t: usize) -> Result<LossFunction> {
        let base = self.generator.draw(t, &mut self.rng)?;
        let LossGenerator::CorruptedIid {
            budget, replacement, ..
        } = &self.generator
        else {
            return Ok(base);
        };
        if !self.scheduled.get(t).copied().unwrap_or(false) {
            return Ok(base);
        }
        let full = base
            .as_slice()
            .iter()
            .zip(replacement)
            .map(|(b, r)| (r - b).abs())
            .fold(0.0, f64::max);
        let remaining = (budget - self.corruption_spent).max(0.0);
        if full == 0.0 || remaining == 0.0 {
            return Ok(base);
        }
        // Interpolate toward the replacement when the budget cannot cover it all.
        let lambda = (remaining / full).min(1.0);
        let values: Vec<f64> = base
            .as_slice()
            .iter()
            .zip(replacement)
            .map(|(b, r)| (b + lambda * (r - b)).clamp(0.0, 1.0))
            .collect();
        let spent = values
            .iter()
            .zip(base.as_slice())
            .map(|(c, b)| (c - b).abs())
            .fold(0.0, f64::max);
        self.corruption_spent += spent;
        LossFunction::unit(values)
    }
}

/// Mean table with a planted unique optimal policy whose gaps are all at
/// least `delta_min`, with equality on at least one pair.
pub fn planted_gap_means(mdp: &LayeredMdp, delta_min: f64, rng: &mut RngStream) -> Result<(Vec<f64>, GapInfo)> {
    let l = mdp.layout();
    if l.n_actions() < 2 || !(delta_min > 0.0 && delta_min < 0.5) {
        return Err(Error::config("planted gaps need |A| ≥ 2 and Δ_min in (0, 0.5)"));
    }
    for _attempt in 0..10_000 {
        let mut means = vec![0.0; l.n_pairs()];
        let mut v = vec![0.0; l.n_states()];
        let mut ok = true;
        let mut first = true;
        for k in (0..l.horizon()).rev() {
            for s in l.layer(k) {
                let star = (rng.uniform() * l.n_actions() as f64) as usize % l.n_actions();
                let base = 0.05 + 0.3 * rng.uniform();
                means[l.pair(s, star)] = base;
                v[s] = base + mdp.transition().expect(s, star, &v);
                for a in (0..l.n_actions()).filter(|&a| a != star) {
                    let gap = if first {
                        first = false;
                        delta_min
                    } else {
                        delta_min + 0.2 * rng.uniform()
                    };
                    let m = v[s] + gap - mdp.transition().expect(s, a, &v);
                    if !(0.0..=1.0).contains(&m) {
                        ok = false;
                    }
                    means[l.pair(s, a)] = m;
                }
            }
        }
        if !ok {
            continue;
        }
        let table = LossFunction::unit(means.clone())?;
        if let Ok(info) = crate::mdp::gap_function(mdp, &table) {
            if (info.delta_min - delta_min).abs() < 1e-12 {
                return Ok((means, info));
            }
        }
    }
    Err(Error::config(
        "could not plant a gap structure with means in [0, 1] for this MDP",
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackMode {
    Full,
    Bandit,
}

/// One episode's path: `states[k]` is the state at layer `k` (ending at the
/// terminal state) and `actions[k]` the action taken there.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
}

impl Trajectory {
    /// Visited pair ids, one per layer.
    pub fn pairs<'a>(&'a self, layout: &'a Layout) -> impl Iterator<Item = usize> + 'a {
        self.states
            .iter()
            .zip(&self.actions)
            .map(move |(&s, &a)| layout.pair(s, a))
    }

    /// `(s_k, a_k, s_{k+1})` for every layer.
    pub fn transitions(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (0..self.actions.len()).map(|k| (self.states[k], self.actions[k], self.states[k + 1]))
    }

    /// Checks that the path walks the layers in order from `s_0` to `s_L`.
    pub fn check(&self, layout: &Layout) -> Result<()> {
        let l = layout.horizon();
        if self.states.len() != l + 1 || self.actions.len() != l {
            return Err(Error::structural("trajectory length does not match the horizon"));
        }
        for (k, &s) in self.states.iter().enumerate() {
            if s >= layout.n_states() || layout.layer_of(s) != k {
                return Err(Error::structural(format!("state {s} is not in layer {k}")));
            }
        }
        if self.actions.iter().any(|&a| a >= layout.n_actions()) {
            return Err(Error::structural("action out of range"));
        }
        Ok(())
    }
}

/// What the learner observes at the end of an episode.
#[derive(Clone, Debug, PartialEq)]
pub enum EpisodeFeedback {
    Full(LossFunction),
    /// `(s_k, a_k, ℓ_t(s_k, a_k))` for each layer `k`.
    Bandit(Vec<(usize, usize, f64)>),
}

impl EpisodeFeedback {
    pub fn mode(&self) -> FeedbackMode {
        match self {
            EpisodeFeedback::Full(_) => FeedbackMode::Full,
            EpisodeFeedback::Bandit(_) => FeedbackMode::Bandit,
        }
    }
}

/// Samples one episode of `policy` under `kernel` and packages the feedback.
pub fn rollout(
    kernel: &TransitionKernel,
    policy: &StochasticPolicy,
    loss: &LossFunction,
    mode: FeedbackMode,
    rng: &mut RngStream,
) -> (Trajectory, EpisodeFeedback) {
    let l = kernel.layout();
    let horizon = l.horizon();
    let mut states = Vec::with_capacity(horizon + 1);
    let mut actions = Vec::with_capacity(horizon);
    let mut s = l.initial();
    states.push(s);
    for _ in 0..horizon {
        let a = rng.categorical(policy.row(s));
        let next = l.successors(s).start + rng.categorical(kernel.row(s, a));
        actions.push(a);
        states.push(next);
        s = next;
    }
    let trajectory = Trajectory { states, actions };
    let feedback = match mode {
        FeedbackMode::Full => EpisodeFeedback::Full(loss.clone()),
        FeedbackMode::Bandit => EpisodeFeedback::Bandit(
            trajectory
                .states
                .iter()
                .zip(&trajectory.actions)
                .map(|(&s, &a)| (s, a, loss.get(l.pair(s, a))))
                .collect(),
        ),
    };
    (trajectory, feedback)
}
