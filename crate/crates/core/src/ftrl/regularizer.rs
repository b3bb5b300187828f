use serde::{Deserialize, Serialize};

use crate::mdp::Layout;

/// Learning-rate schedule of the Tsallis regularizer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaSchedule {
    /// `η_t = γ / √(t - t_i + 1)`, restarted with each epoch.
    PerEpoch,
    /// `η_t = γ / √t`.
    Global,
}

/// Which regularizer FTRL uses and how its learning rate evolves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegularizerSpec {
    /// `(1/η) Σ q ln q` with `η = √(L ln(|S||A|) / (c ln(|S||A|) + M))`.
    Shannon { horizon: usize, log_sa: f64, constant: f64 },
    /// `-(1/η) Σ √q + β Σ ln(1/q)`.
    TsallisLogBarrier {
        beta: f64,
        gamma: f64,
        schedule: EtaSchedule,
    },
}

impl RegularizerSpec {
    fn shannon(layout: &Layout, power: i32) -> Self {
        let l = layout.horizon();
        RegularizerSpec::Shannon {
            horizon: l,
            log_sa: ((layout.n_states() * layout.n_actions()) as f64).ln(),
            constant: 64.0 * (l as f64).powi(power),
        }
    }

    /// Shannon with constant `64 L⁵` (unknown transition).
    pub fn unknown_full(layout: &Layout) -> Self {
        Self::shannon(layout, 5)
    }

    /// Shannon with constant `64 L³` (known transition).
    pub fn known_full(layout: &Layout) -> Self {
        Self::shannon(layout, 3)
    }

    /// Tsallis with `β = 128 L⁴` and a per-epoch schedule.
    pub fn unknown_bandit(layout: &Layout) -> Self {
        RegularizerSpec::TsallisLogBarrier {
            beta: 128.0 * (layout.horizon() as f64).powi(4),
            gamma: 1.0,
            schedule: EtaSchedule::PerEpoch,
        }
    }

    /// Tsallis with `β = 64 L` and `η_t = γ/√t`.
    pub fn known_bandit(layout: &Layout, gamma: f64) -> Self {
        RegularizerSpec::TsallisLogBarrier {
            beta: 64.0 * layout.horizon() as f64,
            gamma,
            schedule: EtaSchedule::Global,
        }
    }

    /// Learning rate for episode `t` of an epoch started at `t_start`, given the
    /// accumulated Shannon statistic `m` (ignored by Tsallis).
    pub fn eta(&self, t: usize, t_start: usize, m: f64) -> f64 {
        match *self {
            RegularizerSpec::Shannon {
                horizon,
                log_sa,
                constant,
            } => shannon_eta(horizon, log_sa, constant, m),
            RegularizerSpec::TsallisLogBarrier { gamma, schedule, .. } => {
                let n = match schedule {
                    EtaSchedule::PerEpoch => t + 1 - t_start,
                    EtaSchedule::Global => t,
                };
                gamma / (n as f64).sqrt()
            }
        }
    }

    /// Concrete regularizer for learning rate `eta`.
    pub fn at(&self, eta: f64) -> Regularizer {
        match *self {
            RegularizerSpec::Shannon { .. } => Regularizer::Shannon { eta },
            RegularizerSpec::TsallisLogBarrier { beta, .. } => Regularizer::TsallisLogBarrier { eta, beta },
        }
    }
}

/// `√(L ln(|S||A|) / (c ln(|S||A|) + M))`.
pub fn shannon_eta(horizon: usize, log_sa: f64, constant: f64, m: f64) -> f64 {
    (horizon as f64 * log_sa / (constant * log_sa + m)).sqrt()
}

/// A regularizer with its learning rate fixed for one solve. It is separable:
/// `φ(q) = Σ h(q(s, a))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Regularizer {
    Shannon { eta: f64 },
    TsallisLogBarrier { eta: f64, beta: f64 },
}

impl Regularizer {
    pub fn eta(&self) -> f64 {
        match *self {
            Regularizer::Shannon { eta } | Regularizer::TsallisLogBarrier { eta, .. } => eta,
        }
    }

    /// Whether every minimizer is forced into the interior.
    pub fn is_barrier(&self) -> bool {
        matches!(self, Regularizer::TsallisLogBarrier { .. })
    }

    /// `h(x)`; `0 ln 0 = 0` for Shannon.
    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            Regularizer::Shannon { eta } => {
                if x > 0.0 {
                    x * x.ln() / eta
                } else {
                    0.0
                }
            }
            Regularizer::TsallisLogBarrier { eta, beta } => {
                let mut h = -x.sqrt() / eta;
                if beta > 0.0 {
                    h -= beta * x.ln();
                }
                h
            }
        }
    }

    /// `h'(x)`.
    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            Regularizer::Shannon { eta } => (x.ln() + 1.0) / eta,
            Regularizer::TsallisLogBarrier { eta, beta } => -0.5 / (eta * x.sqrt()) - beta / x,
        }
    }

    /// The minimizer of `x b + h(x)` over `x > 0`, which exists when `b > 0`
    /// for Tsallis and for every `b` for Shannon. Returns `None` otherwise.
    #[inline]
    pub fn conjugate_point(&self, b: f64) -> Option<f64> {
        match *self {
            Regularizer::Shannon { eta } => Some((-eta * b - 1.0).exp()),
            Regularizer::TsallisLogBarrier { eta, beta } => {
                if !(b > 0.0) || !b.is_finite() {
                    return None;
                }
                // √x solves b y² - y/(2η) - β = 0.
                let a = 0.5 / eta;
                let y = (a + (a * a + 4.0 * b * beta).sqrt()) / (2.0 * b);
                Some(y * y)
            }
        }
    }

    /// `1 / h''(x)`, the weight of the pair in the dual Hessian.
    #[inline]
    pub fn inverse_curvature(&self, x: f64) -> f64 {
        match *self {
            Regularizer::Shannon { eta } => eta * x,
            Regularizer::TsallisLogBarrier { eta, beta } => 1.0 / (0.25 / (eta * x * x.sqrt()) + beta / (x * x)),
        }
    }
}
