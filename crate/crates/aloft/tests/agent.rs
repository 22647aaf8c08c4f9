//! Q-learning tests: schedule arithmetic, exploration statistics, TD target
//! and loss oracles, target-network sync timing, optimizer behavior, and
//! tabular convergence against value iteration.

use aloft::agent::{
    act, compute_targets, greedy_action, tabular_q_update, td_loss, window_tensors, AgentConfig,
    Learner, ReplayBuffer, TrainOutcome, Transition,
};
use aloft::env::Action;
use aloft::net::{init_params, NetConfig, QNetworkParams, Variant};
use aloft::optim::OptimizerKind;
use aloft::tensor::{check_gradients, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

/// Tiny fully connected Q-network: 6 inputs, one observation per window.
fn tiny_config(window: usize) -> NetConfig {
    NetConfig {
        variant: Variant::Dqn,
        in_channels: 1,
        in_height: 1,
        in_width: 6,
        conv_layers: vec![],
        feature_dim: 5,
        hidden_dim: 4,
        attention_dim: 3,
        head_hidden: 4,
        n_actions: 3,
        window,
    }
}

fn rand_frame(rng: &mut ChaCha8Rng, n: usize) -> Arc<Vec<f64>> {
    Arc::new((0..n).map(|_| rng.gen_range(0.05..1.0)).collect())
}

fn rand_transition(rng: &mut ChaCha8Rng, cfg: &NetConfig, done: bool) -> Transition {
    let n = cfg.in_channels * cfg.in_height * cfg.in_width;
    Transition {
        window: (0..cfg.window).map(|_| rand_frame(rng, n)).collect(),
        action: Action::from_index(rng.gen_range(0..3)).unwrap(),
        reward: rng.gen_range(-1.0..2.0),
        next_window: (0..cfg.window).map(|_| rand_frame(rng, n)).collect(),
        done,
    }
}

/// Zero network whose Q-values equal the output bias regardless of input.
fn bias_only_params(cfg: &NetConfig, b2: [f64; 3]) -> QNetworkParams {
    let mut params = QNetworkParams::zeros(cfg).unwrap();
    params.head.b2 = Tensor::from_vec(b2.to_vec());
    params
}

fn param_bits(p: &QNetworkParams) -> Vec<u64> {
    let mut bits = Vec::new();
    p.visit(&mut |_, t| bits.extend(t.data().iter().map(|x| x.to_bits())));
    bits
}

// ---------------------------------------------------------------------------
// Epsilon schedule.

#[test]
fn epsilon_anneals_linearly_then_holds() {
    let cfg = AgentConfig::default();
    assert_eq!(cfg.epsilon_at(0), 1.0);
    assert_eq!(cfg.epsilon_at(20_000), 0.05);
    assert_eq!(cfg.epsilon_at(1_000_000), 0.05);
    for step in [1_000, 5_000, 13_000] {
        let expected = 1.0 - (1.0 - 0.05) * step as f64 / 20_000.0;
        assert!((cfg.epsilon_at(step) - expected).abs() < 1e-12, "step {step}");
    }
    // Affine in the annealing range: midpoint of two values matches.
    let (a, b, c) = (
        cfg.epsilon_at(4_000),
        cfg.epsilon_at(8_000),
        cfg.epsilon_at(12_000),
    );
    assert!((a + c - 2.0 * b).abs() < 1e-15);
}

// ---------------------------------------------------------------------------
// Action selection.

#[test]
fn full_exploration_is_uniform_within_two_percent() {
    let cfg = tiny_config(1);
    let params = bias_only_params(&cfg, [5.0, 0.0, 0.0]);
    let frame = Arc::new(vec![0.5; 6]);
    let window = window_tensors(&cfg, &[frame]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let mut counts = [0usize; 3];
    let n = 100_000;
    for _ in 0..n {
        let a = act(&params, &window, 1.0, &mut rng).unwrap();
        counts[a.index()] += 1;
    }
    for (i, &c) in counts.iter().enumerate() {
        let freq = c as f64 / n as f64;
        assert!(
            (freq - 1.0 / 3.0).abs() < 0.02,
            "action {i} frequency {freq}"
        );
    }
}

#[test]
fn zero_epsilon_is_always_greedy() {
    let cfg = tiny_config(1);
    let params = bias_only_params(&cfg, [0.0, 2.0, 1.0]);
    let window = window_tensors(&cfg, &[Arc::new(vec![0.3; 6])]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..200 {
        assert_eq!(act(&params, &window, 0.0, &mut rng).unwrap(), Action::TurnLeft);
    }
}

#[test]
fn greedy_ties_break_toward_lowest_index() {
    let cfg = tiny_config(1);
    let window = window_tensors(&cfg, &[Arc::new(vec![0.3; 6])]).unwrap();

    let all_equal = bias_only_params(&cfg, [0.0, 0.0, 0.0]);
    assert_eq!(greedy_action(&all_equal, &window).unwrap(), Action::GoStraight);

    let pair_tie = bias_only_params(&cfg, [1.0, 5.0, 5.0]);
    assert_eq!(greedy_action(&pair_tie, &window).unwrap(), Action::TurnLeft);
}

#[test]
fn greedy_choice_ignores_constant_shift_of_all_q_values() {
    let cfg = tiny_config(1);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..20 {
        let q: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
        let window = window_tensors(&cfg, &[rand_frame(&mut rng, 6)]).unwrap();
        let base = greedy_action(&bias_only_params(&cfg, q), &window).unwrap();
        for shift in [-3.0, 0.5, 7.25] {
            let shifted = bias_only_params(&cfg, q.map(|v| v + shift));
            assert_eq!(greedy_action(&shifted, &window).unwrap(), base);
        }
    }
}

// ---------------------------------------------------------------------------
// Targets and loss.

#[test]
fn targets_use_reward_only_for_terminal_transitions() {
    let cfg = tiny_config(2);
    let target = bias_only_params(&cfg, [2.0, 1.0, 0.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let mut done = rand_transition(&mut rng, &cfg, true);
    done.reward = -10.0;
    let mut live = rand_transition(&mut rng, &cfg, false);
    live.reward = 1.5;
    let mut zero_r = rand_transition(&mut rng, &cfg, false);
    zero_r.reward = 0.0;

    let targets = compute_targets(&target, &[&done, &live, &zero_r], 0.99).unwrap();
    assert_eq!(targets[0], -10.0);
    assert_eq!(targets[1], 1.5 + 0.99 * 2.0);
    assert_eq!(targets[2], 0.99 * 2.0);
}

#[test]
fn zero_network_with_target_two_gives_loss_four() {
    let cfg = tiny_config(2);
    let params = QNetworkParams::zeros(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let batch: Vec<Transition> = (0..3)
        .map(|_| rand_transition(&mut rng, &cfg, false))
        .collect();
    let refs: Vec<&Transition> = batch.iter().collect();
    let mut tape = Tape::new();
    let loss = td_loss(&mut tape, &params, &refs, &[2.0, 2.0, 2.0]).unwrap();
    assert_eq!(loss.item(), 4.0);
}

#[test]
fn td_loss_matches_scalar_replay() {
    // Mean of (Q(s, a) - y)^2 recomputed with plain f64 forward passes.
    let cfg = tiny_config(2);
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    let params = init_params(&cfg, &mut rng).unwrap();
    let batch: Vec<Transition> = (0..4)
        .map(|i| rand_transition(&mut rng, &cfg, i % 2 == 0))
        .collect();
    let refs: Vec<&Transition> = batch.iter().collect();
    let targets = [0.5, -0.25, 1.0, 2.0];

    let mut expected = 0.0;
    for (t, &y) in refs.iter().zip(&targets) {
        let window = window_tensors(&cfg, &t.window).unwrap();
        let mut tape = Tape::new();
        let q = aloft::net::q_forward(&mut tape, &params, &window).unwrap();
        let diff = q.q.data()[t.action.index()] - y;
        expected += diff * diff;
    }
    expected /= 4.0;

    let mut tape = Tape::new();
    let loss = td_loss(&mut tape, &params, &refs, &targets).unwrap();
    assert!((loss.item() - expected).abs() < 1e-12);
}

#[test]
fn td_loss_gradient_matches_finite_differences() {
    let cfg = tiny_config(2);
    let mut rng = ChaCha8Rng::seed_from_u64(46);
    let params = init_params(&cfg, &mut rng).unwrap();
    let batch: Vec<Transition> = (0..3)
        .map(|i| rand_transition(&mut rng, &cfg, i == 2))
        .collect();
    let refs: Vec<&Transition> = batch.iter().collect();
    let targets = [1.0, -0.5, 0.25];

    let named = params.named();
    let items: Vec<(&str, Tensor)> =
        named.iter().map(|(n, t)| (n.as_str(), t.clone())).collect();
    let report = check_gradients(&items, 1e-5, 1e-4, |tape, tracked| {
        let mut p = params.clone();
        let mut i = 0;
        p.visit_mut(&mut |_, slot| {
            *slot = tracked[i].clone();
            i += 1;
        });
        td_loss(tape, &p, &refs, &targets).map_err(|e| match e {
            aloft::agent::AgentError::Tensor(t) => t,
            other => panic!("unexpected error kind: {other}"),
        })
    })
    .unwrap();
    assert!(report.within(1e-4), "{report:?}");
}

// ---------------------------------------------------------------------------
// Replay buffer.

#[test]
fn replay_evicts_oldest_first() {
    let cfg = tiny_config(1);
    let mut rng = ChaCha8Rng::seed_from_u64(47);
    let mut buf = ReplayBuffer::new(5);
    for i in 0..8 {
        let mut t = rand_transition(&mut rng, &cfg, false);
        t.reward = i as f64;
        buf.push(t);
    }
    assert_eq!(buf.len(), 5);
    let rewards: Vec<f64> = buf.iter().map(|t| t.reward).collect();
    assert_eq!(rewards, vec![3.0, 4.0, 5.0, 6.0, 7.0]);
}

#[test]
fn replay_samples_uniformly_within_three_sigma() {
    let cfg = tiny_config(1);
    let mut rng = ChaCha8Rng::seed_from_u64(48);
    let mut buf = ReplayBuffer::new(100);
    for i in 0..100 {
        let mut t = rand_transition(&mut rng, &cfg, false);
        t.reward = i as f64;
        buf.push(t);
    }
    let n = 100_000;
    let mut counts = vec![0usize; 100];
    for t in buf.sample(n, &mut rng) {
        counts[t.reward as usize] += 1;
    }
    let expected = n as f64 / 100.0;
    let sigma = (n as f64 * 0.01 * 0.99).sqrt();
    for (i, &c) in counts.iter().enumerate() {
        assert!(
            (c as f64 - expected).abs() <= 3.0 * sigma,
            "bucket {i}: {c} vs {expected} +- {}",
            3.0 * sigma
        );
    }
}

// ---------------------------------------------------------------------------
// Training steps.

fn filled_learner(
    window: usize,
    tweak: impl FnOnce(&mut AgentConfig),
    seed: u64,
) -> (Learner, ReplayBuffer, ChaCha8Rng) {
    let cfg = tiny_config(window);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = init_params(&cfg, &mut rng).unwrap();
    let mut agent_cfg = AgentConfig {
        batch_size: 4,
        warmup_steps: 8,
        replay_capacity: 64,
        window_len: window,
        learning_rate: 1e-3,
        target_sync_every: 1_000_000,
        anneal_steps: 100,
        ..AgentConfig::default()
    };
    tweak(&mut agent_cfg);
    let learner = Learner::new(params, agent_cfg).unwrap();
    let mut buf = ReplayBuffer::new(64);
    for i in 0..16 {
        buf.push(rand_transition(&mut rng, &cfg, i % 5 == 0));
    }
    (learner, buf, rng)
}

#[test]
fn train_step_skips_below_warmup_without_touching_params() {
    let (mut learner, _, mut rng) = filled_learner(2, |_| {}, 49);
    let cfg = tiny_config(2);
    let mut small = ReplayBuffer::new(64);
    for _ in 0..7 {
        small.push(rand_transition(&mut rng, &cfg, false));
    }
    let before = param_bits(&learner.params);
    let outcome = learner.train_step(&small, &mut rng).unwrap();
    assert_eq!(outcome, TrainOutcome::Skipped);
    assert_eq!(param_bits(&learner.params), before);
    assert_eq!(learner.updates(), 0);
}

#[test]
fn zero_learning_rate_leaves_params_bitwise_identical() {
    let (mut learner, buf, mut rng) = filled_learner(2, |c| c.learning_rate = 0.0, 50);
    let before = param_bits(&learner.params);
    for _ in 0..5 {
        match learner.train_step(&buf, &mut rng).unwrap() {
            TrainOutcome::Stepped { .. } => {}
            other => panic!("expected a step, got {other:?}"),
        }
    }
    assert_eq!(param_bits(&learner.params), before);
}

#[test]
fn target_syncs_exactly_at_multiples_of_sync_interval() {
    let (mut learner, buf, mut rng) = filled_learner(2, |c| c.target_sync_every = 3, 51);
    let initial_target = param_bits(&learner.target);
    let mut frozen_at_3 = Vec::new();
    for step in 1..=7 {
        let outcome = learner.train_step(&buf, &mut rng).unwrap();
        let synced = matches!(outcome, TrainOutcome::Stepped { synced: true, .. });
        assert_eq!(synced, step % 3 == 0, "step {step}");
        match step {
            1 | 2 => assert_eq!(param_bits(&learner.target), initial_target),
            3 => {
                assert_eq!(param_bits(&learner.target), param_bits(&learner.params));
                frozen_at_3 = param_bits(&learner.target);
            }
            4 | 5 => {
                assert_eq!(param_bits(&learner.target), frozen_at_3);
                assert_ne!(param_bits(&learner.target), param_bits(&learner.params));
            }
            6 => assert_eq!(param_bits(&learner.target), param_bits(&learner.params)),
            _ => {}
        }
    }
}

#[test]
fn overfitting_one_transition_drives_loss_down_monotonically() {
    let cfg = tiny_config(2);
    let mut rng = ChaCha8Rng::seed_from_u64(52);
    let params = init_params(&cfg, &mut rng).unwrap();
    let agent_cfg = AgentConfig {
        batch_size: 4,
        warmup_steps: 4,
        replay_capacity: 8,
        window_len: 2,
        learning_rate: 1e-3,
        target_sync_every: 1_000_000,
        ..AgentConfig::default()
    };
    let mut learner = Learner::new(params, agent_cfg).unwrap();
    let mut buf = ReplayBuffer::new(8);
    let mut t = rand_transition(&mut rng, &cfg, true);
    t.reward = 1.0;
    for _ in 0..4 {
        buf.push(t.clone());
    }
    let mut losses = Vec::new();
    for _ in 0..60 {
        match learner.train_step(&buf, &mut rng).unwrap() {
            TrainOutcome::Stepped { loss, .. } => losses.push(loss),
            other => panic!("expected a step, got {other:?}"),
        }
    }
    for w in losses[10..].windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "loss rose from {} to {}", w[0], w[1]);
    }
    assert!(losses.last().unwrap() < &losses[10]);
}

#[test]
fn learner_rejects_window_mismatch_and_bad_gamma() {
    let cfg = tiny_config(2);
    let mut rng = ChaCha8Rng::seed_from_u64(53);
    let params = init_params(&cfg, &mut rng).unwrap();
    let bad_window = AgentConfig {
        window_len: 5,
        ..AgentConfig::default()
    };
    assert!(Learner::new(params.clone(), bad_window).is_err());
    let bad_gamma = AgentConfig {
        gamma: 1.0,
        window_len: 2,
        ..AgentConfig::default()
    };
    assert!(Learner::new(params, bad_gamma).is_err());
}

#[test]
fn sgd_variant_trains_too() {
    let (mut learner, buf, mut rng) =
        filled_learner(2, |c| c.optimizer = OptimizerKind::Sgd, 54);
    let before = param_bits(&learner.params);
    match learner.train_step(&buf, &mut rng).unwrap() {
        TrainOutcome::Stepped { loss, .. } => assert!(loss.is_finite()),
        other => panic!("expected a step, got {other:?}"),
    }
    assert_ne!(param_bits(&learner.params), before);
}

// ---------------------------------------------------------------------------
// Tabular learning on the five-state chain.

/// States 0..5, terminals at both ends. Action 0 walks left, action 1 walks
/// right. Entering state 0 pays 0.9; entering state 4 pays 1.0.
fn chain_step(s: usize, a: usize) -> (usize, f64, bool) {
    let next = if a == 0 { s - 1 } else { s + 1 };
    match next {
        0 => (0, 0.9, true),
        4 => (4, 1.0, true),
        _ => (next, 0.0, false),
    }
}

fn chain_value_iteration(gamma: f64) -> Vec<[f64; 2]> {
    let mut q = vec![[0.0f64; 2]; 5];
    for _ in 0..500 {
        let prev = q.clone();
        for s in 1..4 {
            for a in 0..2 {
                let (sn, r, done) = chain_step(s, a);
                let v = if done { 0.0 } else { prev[sn][0].max(prev[sn][1]) };
                q[s][a] = r + gamma * v;
            }
        }
    }
    q
}

#[test]
fn terminal_update_with_full_step_size_writes_the_reward() {
    let mut q = vec![vec![0.0; 2]; 5];
    tabular_q_update(&mut q, 3, 1, 1.0, 4, true, 1.0, 0.9);
    assert_eq!(q[3][1], 1.0);
}

#[test]
fn bootstrapped_update_applies_discount_and_step_size() {
    let mut q = vec![vec![0.0; 2]; 5];
    q[2] = vec![1.0, 1.0];
    tabular_q_update(&mut q, 1, 1, 0.0, 2, false, 0.5, 0.99);
    assert_eq!(q[1][1], 0.5 * 0.99);
}

#[test]
fn tabular_sweeps_converge_to_value_iteration_fixed_point() {
    let gamma = 0.9;
    let oracle = chain_value_iteration(gamma);
    let mut q = vec![vec![0.0; 2]; 5];
    for _ in 0..400 {
        for s in 1..4 {
            for a in 0..2 {
                let (sn, r, done) = chain_step(s, a);
                tabular_q_update(&mut q, s, a, r, sn, done, 0.5, gamma);
            }
        }
    }
    for s in 1..4 {
        for a in 0..2 {
            assert!(
                (q[s][a] - oracle[s][a]).abs() < 1e-6,
                "Q({s},{a}) = {} vs {}",
                q[s][a],
                oracle[s][a]
            );
        }
    }
    // The chain's optimal policy: state 1 banks the near reward, 2 and 3
    // chase the far one.
    assert!(q[1][0] > q[1][1]);
    assert!(q[2][1] > q[2][0]);
    assert!(q[3][1] > q[3][0]);
}
