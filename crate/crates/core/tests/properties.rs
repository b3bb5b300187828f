use std::sync::Arc;

use proptest::prelude::*;
use rand::Rng;

use bobw::environment::{rollout, EpisodeFeedback, FeedbackMode, LossGenerator, LossSequence, Sampling};
use bobw::estimation::{confidence_width, epoch_count_bound, EpochState};
use bobw::ftrl::{solve_ftrl, Regularizer, RegularizerSpec};
use bobw::learner::{Learner, LearnerConfig, Variant};
use bobw::mdp::{
    best_policy_in_hindsight, occupancy_of, value_functions_raw, LayeredMdp, Layout, LossFunction, StochasticPolicy,
    TransitionKernel, VALIDATION_TOL,
};
use bobw::oracle::box_vertices;
use bobw::rng::RngStream;
use bobw::uob::{max_linear_over_box_simplex, upper_occupancy, BoxSimplex};

fn layout_strategy() -> impl Strategy<Value = Layout> {
    (prop::collection::vec(1usize..=3, 0..=3), 2usize..=3).prop_map(|(inner, actions)| {
        let mut layers = vec![1];
        layers.extend(inner);
        layers.push(1);
        Layout::new(layers, actions).unwrap()
    })
}

fn unit_loss(layout: &Layout, rng: &mut RngStream) -> Vec<f64> {
    (0..layout.n_pairs()).map(|_| rng.gen()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn performance_difference_identity(layout in layout_strategy(), seed in any::<u64>()) {
        let mut rng = RngStream::new(seed, 0);
        let k = TransitionKernel::random(layout.clone(), &mut rng);
        let pi = StochasticPolicy::random(&layout, &mut rng);
        let other = StochasticPolicy::random(&layout, &mut rng);
        let loss = unit_loss(&layout, &mut rng);
        let base = value_functions_raw(&k, &loss, &pi).unwrap();
        let alt = value_functions_raw(&k, &loss, &other).unwrap();
        let q = occupancy_of(&k, &other).unwrap();
        let adv: f64 = (0..layout.n_pairs())
            .map(|p| q.get(p) * (base.q[p] - base.v[layout.pair_state(p)]))
            .sum();
        prop_assert!((alt.v[0] - base.v[0] - adv).abs() < 1e-10);
    }

    #[test]
    fn occupancy_inner_product_is_value(layout in layout_strategy(), seed in any::<u64>()) {
        let mut rng = RngStream::new(seed, 1);
        let k = TransitionKernel::random(layout.clone(), &mut rng);
        let pi = StochasticPolicy::random(&layout, &mut rng);
        let loss = unit_loss(&layout, &mut rng);
        let q = occupancy_of(&k, &pi).unwrap();
        q.validate(&k, VALIDATION_TOL).unwrap();
        let v = value_functions_raw(&k, &loss, &pi).unwrap().v[0];
        prop_assert!((q.inner(&loss) - v).abs() < 1e-12);
    }

    #[test]
    fn hindsight_beats_random_policies(layout in layout_strategy(), seed in any::<u64>()) {
        let mut rng = RngStream::new(seed, 2);
        let mdp = LayeredMdp::new(TransitionKernel::random(layout.clone(), &mut rng));
        let total: Vec<f64> = (0..layout.n_pairs()).map(|_| 50.0 * rng.gen::<f64>()).collect();
        let (_, best) = best_policy_in_hindsight(&mdp, &LossFunction::unbounded(total.clone())).unwrap();
        for _ in 0..100 {
            let pi = StochasticPolicy::random(&layout, &mut rng);
            let q = occupancy_of(mdp.transition(), &pi).unwrap();
            prop_assert!(best <= q.inner(&total) + 1e-9);
        }
    }

    #[test]
    fn loss_streams_and_rollouts_replay(layout in layout_strategy(), seed in any::<u64>()) {
        let mut rng = RngStream::new(seed, 3);
        let k = TransitionKernel::random(layout.clone(), &mut rng);
        let pi = StochasticPolicy::random(&layout, &mut rng);
        let means = unit_loss(&layout, &mut rng);
        let gen = LossGenerator::IidStochastic { means, sampling: Sampling::Bernoulli };
        let play = || {
            let mut losses = LossSequence::new(gen.clone(), RngStream::new(seed, 10));
            let mut roll = RngStream::new(seed, 11);
            (1..=30)
                .map(|t| {
                    let loss = losses.next_loss(t).unwrap();
                    let (traj, _) = rollout(&k, &pi, &loss, FeedbackMode::Bandit, &mut roll);
                    (loss.into_values(), traj)
                })
                .collect::<Vec<_>>()
        };
        prop_assert_eq!(play(), play());
    }

    #[test]
    fn corruption_is_accounted_exactly(seed in any::<u64>(), budget in 0.0f64..6.0) {
        let layout = Layout::new(vec![1, 2, 1], 2).unwrap();
        let mut rng = RngStream::new(seed, 4);
        let means = unit_loss(&layout, &mut rng);
        let episodes: Vec<usize> = (1..=40).filter(|_| rng.gen_bool(0.4)).collect();
        let replacement = unit_loss(&layout, &mut rng);
        let gen = LossGenerator::CorruptedIid {
            means,
            sampling: Sampling::Bernoulli,
            budget,
            episodes,
            replacement,
        };
        let mut seq = LossSequence::new(gen.clone(), RngStream::new(seed, 5));
        let mut clean = RngStream::new(seed, 5);
        let mut total = 0.0;
        for t in 1..=40 {
            let corrupted = seq.next_loss(t).unwrap();
            let iid = gen.draw(t, &mut clean).unwrap();
            total += corrupted
                .as_slice()
                .iter()
                .zip(iid.as_slice())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
        }
        prop_assert!(total <= budget + 1e-12);
        prop_assert!((total - seq.corruption_spent()).abs() < 1e-12);
    }

    #[test]
    fn counters_and_epochs(layout in layout_strategy(), seed in any::<u64>(), horizon in 1usize..400) {
        let mut rng = RngStream::new(seed, 6);
        let k = TransitionKernel::random(layout.clone(), &mut rng);
        let pi = StochasticPolicy::random(&layout, &mut rng);
        let zero = LossFunction::zeros(&layout);
        let mut epochs = EpochState::new(layout.clone(), 0.1, horizon).unwrap();
        for t in 1..=horizon {
            let before = Arc::clone(epochs.snapshot());
            let (traj, _) = rollout(&k, &pi, &zero, FeedbackMode::Full, &mut rng);
            let rolled = epochs.observe_transition(t, &traj).unwrap();
            prop_assert_eq!(rolled, !Arc::ptr_eq(&before, epochs.snapshot()));
            if !rolled {
                prop_assert_eq!(before.widths.clone(), epochs.snapshot().widths.clone());
            }
        }
        let visits: u64 = epochs.live_counts().iter().sum();
        prop_assert_eq!(visits, (layout.horizon() * horizon) as u64);
        let bound = epoch_count_bound(layout.n_states(), layout.n_actions(), horizon);
        prop_assert!(epochs.epochs_used() as f64 <= bound);
    }

    #[test]
    fn widths_shrink_with_visits(p in 0.0f64..=1.0, m in 0u64..10_000) {
        let row = [p, 1.0 - p];
        let a = confidence_width(m, &row, 0.01, 1000, 5, 2).unwrap();
        let b = confidence_width(m + 1, &row, 0.01, 1000, 5, 2).unwrap();
        prop_assert!(b[0] <= a[0] && b[1] <= a[1]);
    }

    #[test]
    fn upper_occupancy_properties(layout in layout_strategy(), seed in any::<u64>()) {
        let mut rng = RngStream::new(seed, 7);
        let center = TransitionKernel::random(layout.clone(), &mut rng);
        let pi = StochasticPolicy::random(&layout, &mut rng);
        let widths: Vec<Vec<f64>> = (0..layout.n_pairs())
            .map(|p| center.row_of_pair(p).iter().map(|_| 0.4 * rng.gen::<f64>()).collect())
            .collect();
        let boxes = |grow: f64| -> Vec<BoxSimplex> {
            (0..layout.n_pairs())
                .map(|p| {
                    let w: Vec<f64> = widths[p].iter().map(|b| b * grow).collect();
                    BoxSimplex::new(center.row_of_pair(p), &w).unwrap()
                })
                .collect()
        };
        let small = upper_occupancy(&layout, &boxes(1.0), &pi).unwrap();
        let large = upper_occupancy(&layout, &boxes(1.5), &pi).unwrap();
        for p in 0..layout.n_pairs() {
            prop_assert!(large.pair[p] >= small.pair[p] - 4.0 * f64::EPSILON, "{} < {}", large.pair[p], small.pair[p]);
        }
        for a in 0..layout.n_actions() {
            prop_assert_eq!(small.pair[layout.pair(0, a)], pi.prob(0, a));
        }
        let truth = occupancy_of(&center, &pi).unwrap();
        for p in 0..layout.n_pairs() {
            prop_assert!(small.pair[p] >= truth.get(p) - VALIDATION_TOL);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn greedy_beats_random_feasible_points(seed in any::<u64>(), width in 2usize..=5) {
        let mut rng = RngStream::new(seed, 8);
        let center: Vec<f64> = {
            let raw: Vec<f64> = (0..width).map(|_| rng.gen::<f64>() + 1e-3).collect();
            let z: f64 = raw.iter().sum();
            raw.iter().map(|x| x / z).collect()
        };
        let half: Vec<f64> = (0..width).map(|_| 0.5 * rng.gen::<f64>()).collect();
        let bx = BoxSimplex::new(&center, &half).unwrap();
        let f: Vec<f64> = (0..width).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let (best, point) = max_linear_over_box_simplex(&bx, &f);
        prop_assert!(bx.contains(&point, 1e-12));
        let vertices = box_vertices(&bx);
        for v in &vertices {
            prop_assert!(best >= v.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>() - 1e-12);
        }
        for _ in 0..10_000 {
            let w: Vec<f64> = vertices.iter().map(|_| -rng.gen::<f64>().ln()).collect();
            let z: f64 = w.iter().sum();
            let value: f64 = (0..width)
                .map(|j| f[j] * vertices.iter().zip(&w).map(|(v, wi)| v[j] * wi / z).sum::<f64>())
                .sum();
            prop_assert!(best >= value - 1e-12);
        }
    }

    #[test]
    fn ftrl_solutions(layout in layout_strategy(), seed in any::<u64>(), tsallis in any::<bool>()) {
        let mut rng = RngStream::new(seed, 9);
        let k = TransitionKernel::random(layout.clone(), &mut rng);
        let cost: Vec<f64> = (0..layout.n_pairs()).map(|_| 30.0 * rng.gen::<f64>() - 10.0).collect();
        let eta = 0.05 + rng.gen::<f64>();
        let reg = if tsallis {
            Regularizer::TsallisLogBarrier { eta, beta: 0.01 + 5.0 * rng.gen::<f64>() }
        } else {
            Regularizer::Shannon { eta }
        };
        let cold = solve_ftrl(&k, &cost, reg, None).unwrap();
        cold.q.validate(&k, 1e-10).unwrap();
        let floor = if tsallis { (-40.0f64).exp() } else { 0.0 };
        prop_assert!(cold.q.as_slice().iter().all(|&x| x > floor));

        // Per-layer constants are constant on the polytope.
        let mut shifted = cost.clone();
        for kk in 0..layout.horizon() {
            let c = 20.0 * rng.gen::<f64>() - 10.0;
            for p in layout.layer_pairs(kk) {
                shifted[p] += c;
            }
        }
        let moved = solve_ftrl(&k, &shifted, reg, None).unwrap();
        let diff = cold.q.as_slice().iter().zip(moved.q.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(diff <= 1e-6);

        let nudged: Vec<f64> = cost.iter().map(|c| c + rng.gen::<f64>()).collect();
        let first = solve_ftrl(&k, &cost, reg, None).unwrap();
        let warm = solve_ftrl(&k, &nudged, reg, Some(&first.dual)).unwrap();
        let fresh = solve_ftrl(&k, &nudged, reg, None).unwrap();
        prop_assert!((warm.diagnostics.objective - fresh.diagnostics.objective).abs() < 1e-8);
    }

    #[test]
    fn per_epoch_tsallis_rate_is_monotone(start in 1usize..1000, len in 1usize..1000) {
        let layout = Layout::new(vec![1, 2, 1], 2).unwrap();
        let spec = RegularizerSpec::unknown_bandit(&layout);
        for t in start..start + len {
            prop_assert!(spec.eta(t + 1, start, 0.0) <= spec.eta(t, start, 0.0));
        }
        prop_assert_eq!(spec.eta(start + len, start + len, 0.0), spec.eta(start, start, 0.0));
    }

    #[test]
    fn learner_bookkeeping(seed in any::<u64>(), bandit in any::<bool>()) {
        let layout = Layout::new(vec![1, 2, 2, 1], 2).unwrap();
        let mut rng = RngStream::new(seed, 12);
        let k = TransitionKernel::random(layout.clone(), &mut rng);
        let variant = if bandit { Variant::UnknownBandit } else { Variant::UnknownFull };
        let horizon = 120;
        let mut learner = Learner::new(LearnerConfig::new(variant), layout.clone(), horizon, None).unwrap();
        let mut since_rollover: Vec<Vec<f64>> = Vec::new();
        for _ in 0..horizon {
            let policy = learner.act().unwrap().policy.clone();
            let loss: Vec<f64> = (0..layout.n_pairs()).map(|_| 0.1 + 0.9 * rng.gen::<f64>()).collect();
            let loss = LossFunction::unit(loss).unwrap();
            let (traj, feedback) = rollout(&k, &policy, &loss, variant.feedback(), &mut rng);
            let record = learner.observe(&traj, &feedback).unwrap();
            let values = record.adjusted.values();
            for p in 0..layout.n_pairs() {
                prop_assert_eq!(values[p], record.adjusted.observed[p] - record.adjusted.bonus[p]);
            }
            if let EpisodeFeedback::Bandit(_) = feedback {
                let visited: Vec<usize> = traj.pairs(&layout).collect();
                for p in 0..layout.n_pairs() {
                    prop_assert_eq!(record.adjusted.observed[p] != 0.0, visited.contains(&p));
                }
            }
            since_rollover.push(values);
            if record.rollover {
                since_rollover.clear();
            }
            let ftrl = learner.ftrl();
            prop_assert_eq!(ftrl.episodes(), since_rollover.len());
            let mut sum = vec![0.0; layout.n_pairs()];
            for v in &since_rollover {
                for (s, x) in sum.iter_mut().zip(v) {
                    *s += x;
                }
            }
            prop_assert_eq!(ftrl.cumulative(), &sum[..]);
        }
    }

    #[test]
    fn bandit_learner_ignores_unvisited_losses(seed in any::<u64>()) {
        let layout = Layout::new(vec![1, 2, 1], 2).unwrap();
        let mut rng = RngStream::new(seed, 13);
        let k = TransitionKernel::random(layout.clone(), &mut rng);
        let mut a = Learner::new(LearnerConfig::new(Variant::UnknownBandit), layout.clone(), 60, None).unwrap();
        let mut b = a.clone();
        let mut roll_a = RngStream::new(seed, 14);
        let mut roll_b = roll_a.clone();
        for _ in 0..60 {
            let pa = a.act().unwrap().policy.clone();
            let pb = b.act().unwrap().policy.clone();
            prop_assert_eq!(&pa, &pb);
            let loss = unit_loss(&layout, &mut rng);
            // Same visited losses, unrelated losses elsewhere.
            let noise: Vec<f64> = unit_loss(&layout, &mut rng);
            let (ta, fa) = rollout(&k, &pa, &LossFunction::unit(loss.clone()).unwrap(), FeedbackMode::Bandit, &mut roll_a);
            let visited: Vec<usize> = ta.pairs(&layout).collect();
            let other: Vec<f64> = (0..layout.n_pairs())
                .map(|p| if visited.contains(&p) { loss[p] } else { noise[p] })
                .collect();
            let (tb, fb) = rollout(&k, &pb, &LossFunction::unit(other).unwrap(), FeedbackMode::Bandit, &mut roll_b);
            prop_assert_eq!(&ta, &tb);
            a.observe(&ta, &fa).unwrap();
            b.observe(&tb, &fb).unwrap();
        }
    }
}
