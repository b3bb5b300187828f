//! Layered (loop-free) episodic MDPs.
//!
//! States carry dense integer ids grouped by layer: layer `k` owns the
//! contiguous id range `offsets[k]..offsets[k + 1]`, so `0` is the initial
//! state and `n_states - 1` the terminal state. A state-action *pair* is only
//! defined for non-terminal states and is indexed `s * |A| + a`.
//!
//! Transition rows are stored locally: the row of `(s, a)` with `s` in layer
//! `k` has one entry per state of layer `k + 1`, which makes the layer
//! structure an invariant of the representation rather than something to
//! check.

use std::ops::Range;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when a distribution is built by this crate.
pub const CONSTRUCTION_TOL: f64 = 1e-12;
/// Tolerance used when validating the output of iterative procedures.
pub const VALIDATION_TOL: f64 = 1e-9;
/// State masses at or below this are treated as zero by [`policy_from_occupancy`].
pub const UNDERFLOW_FLOOR: f64 = 1e-300;
/// Largest supported number of state-action pairs.
pub const MAX_PAIRS: usize = 1 << 24;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    layer_sizes: Vec<usize>,
    offsets: Vec<usize>,
    layer_of: Vec<usize>,
    n_actions: usize,
}

impl Layout {
    pub fn new(layer_sizes: Vec<usize>, n_actions: usize) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::structural("a layered MDP needs at least two layers"));
        }
        if layer_sizes[0] != 1 || *layer_sizes.last().unwrap() != 1 {
            return Err(Error::structural(
                "first and last layers must each hold exactly one state",
            ));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::structural("empty layer"));
        }
        if n_actions == 0 {
            return Err(Error::structural("action set is empty"));
        }
        let pairs = layer_sizes
            .iter()
            .try_fold(0usize, |acc, &n| acc.checked_add(n))
            .and_then(|total| (total - 1).checked_mul(n_actions));
        if !matches!(pairs, Some(p) if p <= MAX_PAIRS) {
            return Err(Error::structural(format!(
                "layout exceeds {MAX_PAIRS} state-action pairs"
            )));
        }
        let mut offsets = Vec::with_capacity(layer_sizes.len() + 1);
        let mut layer_of = Vec::new();
        let mut acc = 0;
        for (k, &n) in layer_sizes.iter().enumerate() {
            offsets.push(acc);
            layer_of.extend(std::iter::repeat_n(k, n));
            acc += n;
        }
        offsets.push(acc);
        Ok(Layout {
            layer_sizes,
            offsets,
            layer_of,
            n_actions,
        })
    }

    /// Horizon `L`: the number of decisions per episode.
    pub fn horizon(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn n_states(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn n_nonterminal(&self) -> usize {
        self.n_states() - 1
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_pairs(&self) -> usize {
        self.n_nonterminal() * self.n_actions
    }

    pub fn initial(&self) -> usize {
        0
    }

    pub fn terminal(&self) -> usize {
        self.n_states() - 1
    }

    pub fn layer_of(&self, s: usize) -> usize {
        self.layer_of[s]
    }

    pub fn layer(&self, k: usize) -> Range<usize> {
        self.offsets[k]..self.offsets[k + 1]
    }

    pub fn layer_size(&self, k: usize) -> usize {
        self.layer_sizes[k]
    }

    /// States of the layer following `s`.
    pub fn successors(&self, s: usize) -> Range<usize> {
        self.layer(self.layer_of(s) + 1)
    }

    #[inline]
    pub fn pair(&self, s: usize, a: usize) -> usize {
        s * self.n_actions + a
    }

    #[inline]
    pub fn pair_state(&self, p: usize) -> usize {
        p / self.n_actions
    }

    /// Pair ids of state `s`.
    pub fn pairs_of(&self, s: usize) -> Range<usize> {
        s * self.n_actions..(s + 1) * self.n_actions
    }

    /// Pair ids of every state in layer `k`.
    pub fn layer_pairs(&self, k: usize) -> Range<usize> {
        let r = self.layer(k);
        r.start * self.n_actions..r.end * self.n_actions
    }
}

/// A transition kernel over a fixed [`Layout`]; rows are local to the next layer.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionKernel {
    layout: Layout,
    row_offsets: Vec<usize>,
    probs: Vec<f64>,
}

impl TransitionKernel {
    /// Builds a kernel from per-pair rows (indexed by pair id), validating
    /// nonnegativity and normalization within [`CONSTRUCTION_TOL`].
    pub fn new(layout: Layout, rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::with_tolerance(layout, rows, CONSTRUCTION_TOL)
    }

    pub fn with_tolerance(layout: Layout, rows: Vec<Vec<f64>>, tol: f64) -> Result<Self> {
        if rows.len() != layout.n_pairs() {
            return Err(Error::structural(format!(
                "expected {} transition rows, got {}",
                layout.n_pairs(),
                rows.len()
            )));
        }
        let mut row_offsets = Vec::with_capacity(rows.len() + 1);
        let mut probs = Vec::new();
        for (p, row) in rows.into_iter().enumerate() {
            let s = layout.pair_state(p);
            let width = layout.successors(s).len();
            if row.len() != width {
                return Err(Error::structural(format!(
                    "row of pair {p} (state {s}) has {} entries, next layer has {width}",
                    row.len()
                )));
            }
            check_distribution(&row, tol).map_err(|e| Error::structural(format!("row of pair {p}: {e}")))?;
            row_offsets.push(probs.len());
            probs.extend(row);
        }
        row_offsets.push(probs.len());
        Ok(TransitionKernel {
            layout,
            row_offsets,
            probs,
        })
    }

    pub fn uniform(layout: Layout) -> Self {
        let rows = (0..layout.n_pairs())
            .map(|p| {
                let w = layout.successors(layout.pair_state(p)).len();
                vec![1.0 / w as f64; w]
            })
            .collect();
        Self::new(layout, rows).expect("uniform rows are valid")
    }

    /// Random kernel with rows drawn uniformly from the simplex.
    pub fn random<R: Rng + ?Sized>(layout: Layout, rng: &mut R) -> Self {
        let rows = (0..layout.n_pairs())
            .map(|p| {
                let w = layout.successors(layout.pair_state(p)).len();
                random_simplex_point(w, rng)
            })
            .collect();
        Self::new(layout, rows).expect("normalized rows are valid")
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Distribution over the next layer after playing `a` in `s`.
    #[inline]
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let p = self.layout.pair(s, a);
        &self.probs[self.row_offsets[p]..self.row_offsets[p + 1]]
    }

    #[inline]
    pub fn row_of_pair(&self, p: usize) -> &[f64] {
        &self.probs[self.row_offsets[p]..self.row_offsets[p + 1]]
    }

    /// `P(next | s, a)` with `next` a global state id.
    pub fn prob(&self, s: usize, a: usize, next: usize) -> f64 {
        let succ = self.layout.successors(s);
        if succ.contains(&next) {
            self.row(s, a)[next - succ.start]
        } else {
            0.0
        }
    }

    /// Expected value of `v` (indexed by global state id) after `(s, a)`.
    #[inline]
    pub fn expect(&self, s: usize, a: usize, v: &[f64]) -> f64 {
        let succ = self.layout.successors(s);
        self.row(s, a).iter().zip(&v[succ]).map(|(p, x)| p * x).sum()
    }

    /// Rows as nested vectors, indexed by pair id.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.layout.n_pairs())
            .map(|p| self.row_of_pair(p).to_vec())
            .collect()
    }

    /// States that receive positive probability from `s_0` under some policy
    /// with full support; unreachable states carry zero occupancy for every policy.
    pub fn reachable(&self) -> Vec<bool> {
        let l = &self.layout;
        let mut reach = vec![false; l.n_states()];
        reach[0] = true;
        for k in 0..l.horizon() {
            for s in l.layer(k) {
                if !reach[s] {
                    continue;
                }
                let succ = l.successors(s);
                for a in 0..l.n_actions() {
                    for (j, &p) in self.row(s, a).iter().enumerate() {
                        if p > 0.0 {
                            reach[succ.start + j] = true;
                        }
                    }
                }
            }
        }
        reach
    }
}

fn check_distribution(row: &[f64], tol: f64) -> std::result::Result<(), String> {
    if let Some(x) = row.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(format!("invalid probability {x}"));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > tol {
        return Err(format!("probabilities sum to {sum}"));
    }
    Ok(())
}

fn random_simplex_point<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    // Normalized exponentials are uniform on the simplex.
    let mut w: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    w
}

/// The ground-truth world: layer structure plus the true transition.
#[derive(Clone, Debug, PartialEq)]
pub struct LayeredMdp {
    transition: TransitionKernel,
    names: Option<Vec<String>>,
}

impl LayeredMdp {
    pub fn new(transition: TransitionKernel) -> Self {
        LayeredMdp {
            transition,
            names: None,
        }
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.layout().n_states() {
            return Err(Error::structural(format!(
                "{} names for {} states",
                names.len(),
                self.layout().n_states()
            )));
        }
        self.names = Some(names);
        Ok(self)
    }

    pub fn layout(&self) -> &Layout {
        &self.transition.layout
    }

    pub fn transition(&self) -> &TransitionKernel {
        &self.transition
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: MdpFile = serde_json::from_str(text).map_err(|source| Error::Json {
            context: "MDP instance".into(),
            source,
        })?;
        file.into_mdp()
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_file(&self) -> MdpFile {
        MdpFile {
            layers: self.layout().layer_sizes().to_vec(),
            actions: self.layout().n_actions(),
            transition: (0..self.layout().n_nonterminal())
                .map(|s| {
                    (0..self.layout().n_actions())
                        .map(|a| self.transition.row(s, a).to_vec())
                        .collect()
                })
                .collect(),
            names: self.names.clone(),
        }
    }
}

/// On-disk MDP instance.
///
/// `transition[s][a]` lists next-state probabilities for non-terminal state
/// `s`. A row may either cover only the next layer (local indexing) or every
/// state (global indexing, in which case mass outside the next layer is
/// rejected).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpFile {
    pub layers: Vec<usize>,
    pub actions: usize,
    pub transition: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub names: Option<Vec<String>>,
}

impl MdpFile {
    pub fn into_mdp(self) -> Result<LayeredMdp> {
        let states = self.layers.iter().try_fold(0usize, |acc, &n| acc.checked_add(n));
        if states != Some(self.transition.len() + 1) {
            return Err(Error::structural(format!(
                "transition lists {} states, layers need one per non-terminal state",
                self.transition.len()
            )));
        }
        let layout = Layout::new(self.layers, self.actions)?;
        let mut rows = Vec::with_capacity(layout.n_pairs());
        for (s, per_action) in self.transition.into_iter().enumerate() {
            if per_action.len() != layout.n_actions() {
                return Err(Error::structural(format!(
                    "state {s} lists {} actions, expected {}",
                    per_action.len(),
                    layout.n_actions()
                )));
            }
            let succ = layout.successors(s);
            for (a, row) in per_action.into_iter().enumerate() {
                if row.len() == succ.len() {
                    rows.push(row);
                } else if row.len() == layout.n_states() {
                    let outside = row.iter().enumerate().any(|(j, &p)| !succ.contains(&j) && p != 0.0);
                    if outside {
                        return Err(Error::structural(format!(
                            "transition of ({s}, {a}) leaves the next layer"
                        )));
                    }
                    rows.push(row[succ.clone()].to_vec());
                } else {
                    return Err(Error::structural(format!(
                        "transition row ({s}, {a}) has {} entries; expected {} or {}",
                        row.len(),
                        succ.len(),
                        layout.n_states()
                    )));
                }
            }
        }
        let mdp = LayeredMdp::new(TransitionKernel::new(layout, rows)?);
        match self.names {
            Some(names) => mdp.with_names(names),
            None => Ok(mdp),
        }
    }
}

/// `π(·|s)` for every non-terminal state.
#[derive(Clone, Debug, PartialEq)]
pub struct StochasticPolicy {
    n_actions: usize,
    probs: Vec<f64>,
}

impl StochasticPolicy {
    pub fn new(layout: &Layout, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != layout.n_pairs() {
            return Err(Error::structural(format!(
                "policy has {} entries, expected {}",
                probs.len(),
                layout.n_pairs()
            )));
        }
        for (s, row) in probs.chunks(layout.n_actions()).enumerate() {
            check_distribution(row, CONSTRUCTION_TOL).map_err(|e| Error::structural(format!("policy row {s}: {e}")))?;
        }
        Ok(StochasticPolicy {
            n_actions: layout.n_actions(),
            probs,
        })
    }

    pub fn uniform(layout: &Layout) -> Self {
        StochasticPolicy {
            n_actions: layout.n_actions(),
            probs: vec![1.0 / layout.n_actions() as f64; layout.n_pairs()],
        }
    }

    pub fn deterministic(layout: &Layout, actions: &[usize]) -> Result<Self> {
        if actions.len() != layout.n_nonterminal() {
            return Err(Error::structural("one action per non-terminal state expected"));
        }
        let mut probs = vec![0.0; layout.n_pairs()];
        for (s, &a) in actions.iter().enumerate() {
            if a >= layout.n_actions() {
                return Err(Error::structural(format!("action {a} out of range")));
            }
            probs[layout.pair(s, a)] = 1.0;
        }
        Ok(StochasticPolicy {
            n_actions: layout.n_actions(),
            probs,
        })
    }

    /// Random policy with rows uniform on the simplex.
    pub fn random<R: Rng + ?Sized>(layout: &Layout, rng: &mut R) -> Self {
        let probs = (0..layout.n_nonterminal())
            .flat_map(|_| random_simplex_point(layout.n_actions(), rng))
            .collect();
        StochasticPolicy {
            n_actions: layout.n_actions(),
            probs,
        }
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn check_layout(&self, layout: &Layout) -> Result<()> {
        if self.n_actions != layout.n_actions() || self.probs.len() != layout.n_pairs() {
            return Err(Error::structural(format!(
                "policy over {} pairs / {} actions does not fit layout with {} pairs / {} actions",
                self.probs.len(),
                self.n_actions,
                layout.n_pairs(),
                layout.n_actions()
            )));
        }
        Ok(())
    }
}

/// Visit probability `q(s, a)` of every non-terminal pair.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyMeasure {
    values: Vec<f64>,
}

impl OccupancyMeasure {
    pub fn from_values(values: Vec<f64>) -> Self {
        OccupancyMeasure { values }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, p: usize) -> f64 {
        self.values[p]
    }

    /// `q(s) = Σ_a q(s, a)`.
    pub fn state_mass(&self, layout: &Layout, s: usize) -> f64 {
        self.values[layout.pairs_of(s)].iter().sum()
    }

    pub fn inner(&self, other: &[f64]) -> f64 {
        self.values.iter().zip(other).map(|(q, l)| q * l).sum()
    }

    /// Largest violation of the layer-mass and flow-conservation constraints
    /// of `Ω(kernel)`.
    pub fn flow_residual(&self, kernel: &TransitionKernel) -> f64 {
        let l = kernel.layout();
        if self.values.len() != l.n_pairs() {
            return f64::INFINITY;
        }
        let mut inflow = vec![0.0; l.n_states()];
        inflow[0] = 1.0;
        let mut worst: f64 = 0.0;
        for k in 0..l.horizon() {
            let mut layer_mass = 0.0;
            for s in l.layer(k) {
                let mass = self.state_mass(l, s);
                layer_mass += mass;
                worst = worst.max((mass - inflow[s]).abs());
                let succ = l.successors(s);
                for a in 0..l.n_actions() {
                    let q = self.values[l.pair(s, a)];
                    for (j, &p) in kernel.row(s, a).iter().enumerate() {
                        inflow[succ.start + j] += q * p;
                    }
                }
            }
            worst = worst.max((layer_mass - 1.0).abs());
        }
        worst
    }

    /// Checks nonnegativity, layer mass and flow conservation within `tol`.
    pub fn validate(&self, kernel: &TransitionKernel, tol: f64) -> Result<()> {
        if let Some(x) = self.values.iter().find(|x| !x.is_finite() || **x < -tol) {
            return Err(Error::structural(format!("occupancy entry {x}")));
        }
        let r = self.flow_residual(kernel);
        if r > tol {
            return Err(Error::structural(format!(
                "occupancy violates flow constraints by {r:e}"
            )));
        }
        Ok(())
    }
}

/// Whether a loss table is a true loss (entries in `[0, 1]`) or an
/// estimate/adjusted loss without range guarantees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossRange {
    Unit,
    Unbounded,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossFunction {
    values: Vec<f64>,
    range: LossRange,
}

impl LossFunction {
    /// A true loss; every entry must lie in `[0, 1]`.
    pub fn unit(values: Vec<f64>) -> Result<Self> {
        if let Some(x) = values.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::structural(format!("true loss entry {x} outside [0, 1]")));
        }
        Ok(LossFunction {
            values,
            range: LossRange::Unit,
        })
    }

    pub fn unbounded(values: Vec<f64>) -> Self {
        LossFunction {
            values,
            range: LossRange::Unbounded,
        }
    }

    pub fn zeros(layout: &Layout) -> Self {
        LossFunction {
            values: vec![0.0; layout.n_pairs()],
            range: LossRange::Unit,
        }
    }

    pub fn range(&self) -> LossRange {
        self.range
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, p: usize) -> f64 {
        self.values[p]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check_layout(&self, layout: &Layout) -> Result<()> {
        if self.values.len() != layout.n_pairs() {
            return Err(Error::structural(format!(
                "loss has {} entries, expected {}",
                self.values.len(),
                layout.n_pairs()
            )));
        }
        Ok(())
    }
}

/// `Q(s, a)` per pair (with `Q(s_L, ·) = 0` implicit) and `V(s)` per state
/// (with `V(s_L) = 0`).
#[derive(Clone, Debug, PartialEq)]
pub struct ValueFunctions {
    pub q: Vec<f64>,
    pub v: Vec<f64>,
}

impl ValueFunctions {
    /// `V(s_0)`.
    pub fn initial_value(&self) -> f64 {
        self.v[0]
    }

    /// `Q(s, a) - V(s)` per pair.
    pub fn advantages(&self, layout: &Layout) -> Vec<f64> {
        (0..layout.n_pairs())
            .map(|p| self.q[p] - self.v[layout.pair_state(p)])
            .collect()
    }
}

/// Occupancy measure of `policy` under `kernel` by forward recursion.
pub fn occupancy_of(kernel: &TransitionKernel, policy: &StochasticPolicy) -> Result<OccupancyMeasure> {
    let l = kernel.layout();
    policy.check_layout(l)?;
    let mut state_mass = vec![0.0; l.n_states()];
    state_mass[0] = 1.0;
    let mut q = vec![0.0; l.n_pairs()];
    for k in 0..l.horizon() {
        for s in l.layer(k) {
            let succ = l.successors(s);
            for a in 0..l.n_actions() {
                let qsa = policy.prob(s, a) * state_mass[s];
                q[l.pair(s, a)] = qsa;
                if qsa != 0.0 {
                    for (j, &p) in kernel.row(s, a).iter().enumerate() {
                        state_mass[succ.start + j] += qsa * p;
                    }
                }
            }
        }
    }
    Ok(OccupancyMeasure { values: q })
}

/// `π(a|s) ∝ q(s, a)`; rows whose mass is at most [`UNDERFLOW_FLOOR`] become uniform.
pub fn policy_from_occupancy(layout: &Layout, q: &OccupancyMeasure) -> StochasticPolicy {
    let n = layout.n_actions();
    let mut probs = vec![0.0; layout.n_pairs()];
    for s in 0..layout.n_nonterminal() {
        let row = &q.values[layout.pairs_of(s)];
        let mass: f64 = row.iter().map(|x| x.max(0.0)).sum();
        let out = &mut probs[layout.pairs_of(s)];
        if mass <= UNDERFLOW_FLOOR {
            out.iter_mut().for_each(|x| *x = 1.0 / n as f64);
        } else {
            for (o, x) in out.iter_mut().zip(row) {
                *o = x.max(0.0) / mass;
            }
        }
    }
    StochasticPolicy { n_actions: n, probs }
}

/// `Q^π` and `V^π` for `loss` under `kernel` by backward recursion.
pub fn value_functions(
    kernel: &TransitionKernel,
    loss: &LossFunction,
    policy: &StochasticPolicy,
) -> Result<ValueFunctions> {
    value_functions_raw(kernel, loss.as_slice(), policy)
}

/// As [`value_functions`] for a bare loss slice indexed by pair id.
pub fn value_functions_raw(
    kernel: &TransitionKernel,
    loss: &[f64],
    policy: &StochasticPolicy,
) -> Result<ValueFunctions> {
    let l = kernel.layout();
    policy.check_layout(l)?;
    if loss.len() != l.n_pairs() {
        return Err(Error::structural(format!(
            "loss has {} entries, expected {}",
            loss.len(),
            l.n_pairs()
        )));
    }
    let mut v = vec![0.0; l.n_states()];
    let mut q = vec![0.0; l.n_pairs()];
    for k in (0..l.horizon()).rev() {
        for s in l.layer(k) {
            let mut vs = 0.0;
            for a in 0..l.n_actions() {
                let p = l.pair(s, a);
                q[p] = loss[p] + kernel.expect(s, a, &v);
                vs += policy.prob(s, a) * q[p];
            }
            v[s] = vs;
        }
    }
    Ok(ValueFunctions { q, v })
}

/// Optimal deterministic policy for `loss` (one action per non-terminal
/// state) together with its optimal `Q*`/`V*`. Ties go to the lowest action.
pub fn optimal_values(kernel: &TransitionKernel, loss: &[f64]) -> (Vec<usize>, ValueFunctions) {
    let l = kernel.layout();
    let mut v = vec![0.0; l.n_states()];
    let mut q = vec![0.0; l.n_pairs()];
    let mut actions = vec![0; l.n_nonterminal()];
    for k in (0..l.horizon()).rev() {
        for s in l.layer(k) {
            let mut best = f64::INFINITY;
            for a in 0..l.n_actions() {
                let p = l.pair(s, a);
                q[p] = loss[p] + kernel.expect(s, a, &v);
                if q[p] < best {
                    best = q[p];
                    actions[s] = a;
                }
            }
            v[s] = best;
        }
    }
    (actions, ValueFunctions { q, v })
}

/// Deterministic policy minimizing `⟨q^{P,π}, cumulative_loss⟩`, and that minimum.
pub fn best_policy_in_hindsight(mdp: &LayeredMdp, cumulative_loss: &LossFunction) -> Result<(StochasticPolicy, f64)> {
    let l = mdp.layout();
    cumulative_loss.check_layout(l)?;
    if cumulative_loss.as_slice().iter().any(|x| !x.is_finite()) {
        return Err(Error::structural("cumulative loss is not finite"));
    }
    let (actions, values) = optimal_values(mdp.transition(), cumulative_loss.as_slice());
    Ok((StochasticPolicy::deterministic(l, &actions)?, values.v[0]))
}

/// Result of [`gap_function`].
#[derive(Clone, Debug, PartialEq)]
pub struct GapInfo {
    /// `π*(s)` for every non-terminal state.
    pub pi_star: Vec<usize>,
    /// `Δ(s, a) = Q*(s, a) - V*(s)` per pair.
    pub gaps: Vec<f64>,
    pub delta_min: f64,
}

impl GapInfo {
    pub fn policy(&self, layout: &Layout) -> StochasticPolicy {
        StochasticPolicy::deterministic(layout, &self.pi_star).expect("π* fits its layout")
    }
}

/// Minimum margin between the best and second-best action for `π*` to count as unique.
pub const GAP_UNIQUENESS_MARGIN: f64 = 1e-9;

/// Optimal policy, gaps and `Δ_min` under a mean loss.
pub fn gap_function(mdp: &LayeredMdp, mean_loss: &LossFunction) -> Result<GapInfo> {
    let l = mdp.layout();
    mean_loss.check_layout(l)?;
    if mean_loss.as_slice().iter().any(|x| !(0.0..=1.0).contains(x)) {
        return Err(Error::config("mean loss must lie in [0, 1]"));
    }
    if l.n_actions() < 2 {
        return Err(Error::config("gaps need at least two actions"));
    }
    let (pi_star, values) = optimal_values(mdp.transition(), mean_loss.as_slice());
    let mut gaps = vec![0.0; l.n_pairs()];
    let mut delta_min = f64::INFINITY;
    for s in 0..l.n_nonterminal() {
        for a in 0..l.n_actions() {
            let p = l.pair(s, a);
            if a == pi_star[s] {
                continue;
            }
            let gap = values.q[p] - values.v[s];
            if gap <= GAP_UNIQUENESS_MARGIN {
                return Err(Error::config(format!(
                    "optimal action at state {s} is not unique (actions {} and {a} within {gap:e})",
                    pi_star[s]
                )));
            }
            gaps[p] = gap;
            delta_min = delta_min.min(gap);
        }
    }
    Ok(GapInfo {
        pi_star,
        gaps,
        delta_min,
    })
}
