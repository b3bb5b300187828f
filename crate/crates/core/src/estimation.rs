//! Transition estimation with doubling epochs and Bernstein confidence widths.
//!
//! Counters live in two copies: the frozen counts `m_i` taken at the start of
//! epoch `i`, which feed the empirical transition and every width formula,
//! and the live counts used only to decide when the next epoch starts.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use crate::environment::Trajectory;
use crate::error::{Error, Result};
use crate::mdp::{Layout, TransitionKernel};

/// `ln(T |S| |A| / δ)`.
pub fn log_iota(horizon: usize, n_states: usize, n_actions: usize, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::config(format!("confidence parameter δ = {delta} not in (0, 1]")));
    }
    if horizon == 0 {
        return Err(Error::config("horizon T must be at least 1"));
    }
    Ok((horizon as f64).ln() + (n_states as f64).ln() + (n_actions as f64).ln() - delta.ln())
}

/// Per-successor Bernstein widths for a pair visited `m` times with empirical row `row`:
/// `min{2√(P̄ ln ι / max(m,1)) + 14 ln ι / (3 max(m,1)), 1}`.
pub fn confidence_width(
    m: u64,
    row: &[f64],
    delta: f64,
    horizon: usize,
    n_states: usize,
    n_actions: usize,
) -> Result<Vec<f64>> {
    let li = log_iota(horizon, n_states, n_actions, delta)?;
    Ok(widths_with_log_iota(m, row, li))
}

pub(crate) fn widths_with_log_iota(m: u64, row: &[f64], log_iota: f64) -> Vec<f64> {
    let m = m.max(1) as f64;
    row.iter()
        .map(|&p| (2.0 * (p * log_iota / m).sqrt() + 14.0 * log_iota / (3.0 * m)).min(1.0))
        .collect()
}

/// Upper bound on the number of epochs after `horizon` episodes.
pub fn epoch_count_bound(n_states: usize, n_actions: usize, horizon: usize) -> f64 {
    4.0 * (n_states * n_actions) as f64 * ((horizon as f64).log2() + 1.0)
}

/// Everything that stays fixed during one epoch.
#[derive(Clone, Debug)]
pub struct EpochSnapshot {
    /// Epoch index `i ≥ 1`.
    pub index: usize,
    /// First episode `t_i` of the epoch.
    pub start: usize,
    /// Frozen visit counts `m_i(s, a)` per pair.
    pub counts: Vec<u64>,
    /// Empirical transition `P̄_i`; rows of unvisited pairs are uniform.
    pub empirical: TransitionKernel,
    /// `B_i(s, a, s')`, rows local to the next layer as in the kernel.
    pub widths: Vec<Vec<f64>>,
    /// `B_i(s, a) = min{1, Σ_{s'} B_i(s, a, s')}`.
    pub aggregate: Vec<f64>,
    pub log_iota: f64,
}

impl EpochSnapshot {
    fn build(
        layout: &Layout,
        index: usize,
        start: usize,
        counts: Vec<u64>,
        counts3: &[Vec<u64>],
        log_iota: f64,
    ) -> Self {
        let mut rows = Vec::with_capacity(layout.n_pairs());
        let mut widths = Vec::with_capacity(layout.n_pairs());
        let mut aggregate = Vec::with_capacity(layout.n_pairs());
        for p in 0..layout.n_pairs() {
            let m = counts[p];
            let row: Vec<f64> = if m == 0 {
                let w = counts3[p].len();
                vec![1.0 / w as f64; w]
            } else {
                counts3[p].iter().map(|&c| c as f64 / m as f64).collect()
            };
            let b = widths_with_log_iota(m, &row, log_iota);
            aggregate.push(b.iter().sum::<f64>().min(1.0));
            widths.push(b);
            rows.push(row);
        }
        // Count ratios sum to one up to rounding of the divisions.
        let empirical =
            TransitionKernel::with_tolerance(layout.clone(), rows, 1e-12).expect("empirical rows are distributions");
        EpochSnapshot {
            index,
            start,
            counts,
            empirical,
            widths,
            aggregate,
            log_iota,
        }
    }

    pub fn layout(&self) -> &Layout {
        self.empirical.layout()
    }

    /// Whether `truth` lies in the confidence set `{P̂ : |P̂ − P̄_i| ≤ B_i}`.
    pub fn contains(&self, truth: &TransitionKernel) -> bool {
        contains_true(self, truth)
    }
}

/// Whether the true kernel lies within every per-triple width of `snapshot`.
pub fn contains_true(snapshot: &EpochSnapshot, truth: &TransitionKernel) -> bool {
    let layout = snapshot.layout();
    if truth.layout() != layout {
        return false;
    }
    (0..layout.n_pairs()).all(|p| {
        truth
            .row_of_pair(p)
            .iter()
            .zip(snapshot.empirical.row_of_pair(p))
            .zip(&snapshot.widths[p])
            .all(|((t, e), b)| (t - e).abs() <= *b)
    })
}

/// One epoch start in the optional trace dump.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EpochTraceRow {
    pub epoch: usize,
    pub t_start: usize,
    /// Pair whose count doubled, `None` for the first epoch.
    pub triggering_pair: Option<usize>,
    pub total_visits: u64,
}

#[derive(Clone, Debug)]
pub struct EpochState {
    layout: Layout,
    delta: f64,
    horizon: usize,
    log_iota: f64,
    snapshot: Arc<EpochSnapshot>,
    live: Vec<u64>,
    live3: Vec<Vec<u64>>,
    last_episode: usize,
    trace: Vec<EpochTraceRow>,
}

impl EpochState {
    pub fn new(layout: Layout, delta: f64, horizon: usize) -> Result<Self> {
        let log_iota = log_iota(horizon, layout.n_states(), layout.n_actions(), delta)?;
        let live3: Vec<Vec<u64>> = (0..layout.n_pairs())
            .map(|p| vec![0; layout.successors(layout.pair_state(p)).len()])
            .collect();
        let live = vec![0; layout.n_pairs()];
        let snapshot = EpochSnapshot::build(&layout, 1, 1, live.clone(), &live3, log_iota);
        Ok(EpochState {
            layout,
            delta,
            horizon,
            log_iota,
            snapshot: Arc::new(snapshot),
            live,
            live3,
            last_episode: 0,
            trace: vec![EpochTraceRow {
                epoch: 1,
                t_start: 1,
                triggering_pair: None,
                total_visits: 0,
            }],
        })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn log_iota(&self) -> f64 {
        self.log_iota
    }

    /// Current epoch's frozen quantities.
    pub fn snapshot(&self) -> &Arc<EpochSnapshot> {
        &self.snapshot
    }

    pub fn epoch(&self) -> usize {
        self.snapshot.index
    }

    pub fn epoch_start(&self) -> usize {
        self.snapshot.start
    }

    /// Live visit counts (including the current epoch).
    pub fn live_counts(&self) -> &[u64] {
        &self.live
    }

    pub fn live_transition_counts(&self) -> &[Vec<u64>] {
        &self.live3
    }

    /// Number of epochs that contain at least one observed episode.
    pub fn epochs_used(&self) -> usize {
        if self.snapshot.start > self.last_episode {
            self.snapshot.index - 1
        } else {
            self.snapshot.index
        }
        .max(1)
    }

    pub fn trace(&self) -> &[EpochTraceRow] {
        &self.trace
    }

    /// Records the transitions of episode `t` and starts a new epoch when
    /// some visited pair reached `max{1, 2 m_i(s, a)}` visits. Returns
    /// whether a new epoch started (it begins at episode `t + 1`).
    pub fn observe_transition(&mut self, t: usize, trajectory: &Trajectory) -> Result<bool> {
        trajectory.check(&self.layout)?;
        self.last_episode = t;
        let mut trigger = None;
        for (s, a, next) in trajectory.transitions() {
            let p = self.layout.pair(s, a);
            self.live[p] += 1;
            self.live3[p][next - self.layout.successors(s).start] += 1;
            if trigger.is_none() && self.live[p] >= (2 * self.snapshot.counts[p]).max(1) {
                trigger = Some(p);
            }
        }
        let Some(p) = trigger else {
            return Ok(false);
        };
        let index = self.snapshot.index + 1;
        self.snapshot = Arc::new(EpochSnapshot::build(
            &self.layout,
            index,
            t + 1,
            self.live.clone(),
            &self.live3,
            self.log_iota,
        ));
        self.trace.push(EpochTraceRow {
            epoch: index,
            t_start: t + 1,
            triggering_pair: Some(p),
            total_visits: self.live.iter().sum(),
        });
        Ok(true)
    }
}

/// Writes the epoch trace as CSV with columns
/// `epoch,t_start,triggering_pair,total_visits`.
pub fn write_epoch_trace(path: &Path, rows: &[EpochTraceRow]) -> Result<()> {
    let mut out = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::from("epoch,t_start,triggering_pair,total_visits\n");
    for r in rows {
        let pair = r.triggering_pair.map(|p| p.to_string()).unwrap_or_default();
        text.push_str(&format!("{},{},{},{}\n", r.epoch, r.t_start, pair, r.total_visits));
    }
    out.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
