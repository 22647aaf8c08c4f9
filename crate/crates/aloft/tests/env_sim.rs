//! Simulator tests: reward shaping against direct arithmetic, ray casts
//! against a 1 mm marching oracle, noise moments, spawn statistics, and
//! trajectory determinism.

use aloft::env::{
    apply_noise, clearance, depth_image, raycast_depth, render_pseudo_rgb, reward, Action,
    DistanceSource, DroneState, Env, EnvError, MoverState, NoiseConfig, RewardConfig, SimConfig,
    Vec2, WorldMap,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;
use std::sync::Arc;

fn worlds_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../worlds")
}

fn load_world(name: &str) -> Arc<WorldMap> {
    Arc::new(WorldMap::load(worlds_dir().join(name)).unwrap())
}

fn inline_world(text: &str) -> Arc<WorldMap> {
    Arc::new(WorldMap::parse(text, "<inline>").unwrap())
}

/// 30 x 4 m empty corridor with a centered, nearly fixed spawn.
const CORRIDOR: &str = "\
[meta]
name corridor
bounds 0 0 30 4

[spawn]
rect 3 1.95 3.1 2.05
heading 0 0
";

// ---------------------------------------------------------------------------
// Reward shaping.

#[test]
fn reward_matches_direct_arithmetic_bit_for_bit() {
    let cfg = RewardConfig::default();
    for i in 0..=80 {
        let d = i as f64 * 0.05;
        let base = ((d - 0.292) / (1.5 - 0.292)).min(1.0);
        let straight = reward(d, Action::GoStraight, false, &cfg);
        let turn = reward(d, Action::TurnLeft, false, &cfg);
        assert_eq!(straight.to_bits(), (base + 0.5).to_bits(), "d = {d}");
        assert_eq!(turn.to_bits(), base.to_bits(), "d = {d}");
    }
}

#[test]
fn reward_frozen_examples() {
    let cfg = RewardConfig::default();
    assert_eq!(reward(cfg.sigma, Action::TurnLeft, false, &cfg), 1.0);
    assert_eq!(reward(cfg.r_drone, Action::TurnRight, false, &cfg), 0.0);
    assert_eq!(reward(5.0, Action::GoStraight, false, &cfg), 1.5);
    assert_eq!(reward(0.05, Action::GoStraight, true, &cfg), -10.0);
    let expected = ((0.896_f64 - 0.292) / (1.5 - 0.292)).min(1.0) + 0.5;
    assert_eq!(
        reward(0.896, Action::GoStraight, false, &cfg).to_bits(),
        expected.to_bits()
    );
}

#[test]
fn turn_reward_saturates_at_one_exactly_at_sigma() {
    let cfg = RewardConfig::default();
    for i in 0..200 {
        let d = cfg.r_drone + i as f64 * 0.012;
        let r = reward(d, Action::TurnLeft, false, &cfg);
        if d >= cfg.sigma {
            assert_eq!(r, 1.0, "d = {d}");
        } else {
            assert!(r < 1.0, "d = {d} gave {r}");
        }
    }
}

// ---------------------------------------------------------------------------
// Ray casting.

#[test]
fn empty_world_saturates_every_ray() {
    let map = inline_world(
        "[meta]\nname void\nbounds 0 0 1000 1000\n[spawn]\nrect 499 499 501 501\n",
    );
    let config = SimConfig::default();
    let drone = DroneState {
        pos: Vec2::new(500.0, 500.0),
        heading: 1.234,
    };
    let obs = raycast_depth(&map, &[], &drone, &config).unwrap();
    assert_eq!(obs.depths.len(), 32);
    assert!(obs.depths.iter().all(|&d| d == config.d_max));
    assert!(obs.materials.iter().all(|m| m.is_none()));
}

#[test]
fn perpendicular_wall_two_meters_ahead_reads_two_on_center_ray() {
    let map = inline_world(
        "[meta]\nname wall\nbounds 0 0 100 100\n[walls]\n52 40 52 60\n[spawn]\nrect 49 49 51 51\n",
    );
    let config = SimConfig {
        n_rays: 5,
        ..SimConfig::default()
    };
    let drone = DroneState {
        pos: Vec2::new(50.0, 50.0),
        heading: 0.0,
    };
    let obs = raycast_depth(&map, &[], &drone, &config).unwrap();
    assert!((obs.depths[2] - 2.0).abs() < 1e-9, "got {}", obs.depths[2]);
    assert!(obs.materials[2].is_some());
}

#[test]
fn raycast_rejects_pose_outside_bounds() {
    let map = inline_world(CORRIDOR);
    let drone = DroneState {
        pos: Vec2::new(-5.0, 2.0),
        heading: 0.0,
    };
    let err = raycast_depth(&map, &[], &drone, &SimConfig::default()).unwrap_err();
    assert!(matches!(err, EnvError::Contract(_)), "got {err}");
}

/// Marches 1 mm at a time until the sample point falls inside a solid or
/// leaves the bounds. Independent of the analytic intersection code.
fn march_ray(map: &WorldMap, origin: Vec2, angle: f64, d_max: f64) -> f64 {
    let dir = Vec2::from_angle(angle);
    let mut t = 0.0;
    while t <= d_max {
        let p = origin.add(dir.scale(t));
        let solid = !map.bounds.contains(p)
            || map
                .circles
                .iter()
                .any(|c| p.sub(c.center).norm() <= c.radius)
            || map.rects.iter().any(|r| r.rect.contains(p));
        if solid {
            return t;
        }
        t += 0.001;
    }
    d_max
}

#[test]
fn random_scenes_agree_with_marching_oracle_within_one_centimeter() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let config = SimConfig {
        n_rays: 16,
        ..SimConfig::default()
    };
    for scene in 0..5 {
        let mut text = String::from("[meta]\nname scene\nbounds 0 0 20 20\n[obstacles]\n");
        for _ in 0..5 {
            text += &format!(
                "circle {:.3} {:.3} {:.3}\n",
                rng.gen_range(2.0..18.0),
                rng.gen_range(2.0..18.0),
                rng.gen_range(0.3..1.2)
            );
        }
        for _ in 0..3 {
            text += &format!(
                "rect {:.3} {:.3} {:.3} {:.3}\n",
                rng.gen_range(2.0..15.0),
                rng.gen_range(2.0..15.0),
                rng.gen_range(0.5..2.0),
                rng.gen_range(0.5..2.0)
            );
        }
        text += "[spawn]\nrect 1 1 19 19\n";
        let map = inline_world(&text);

        let mut poses = 0;
        while poses < 3 {
            let pos = Vec2::new(rng.gen_range(1.0..19.0), rng.gen_range(1.0..19.0));
            if clearance(&map, &[], pos) < 0.3 {
                continue;
            }
            poses += 1;
            let drone = DroneState {
                pos,
                heading: rng.gen_range(0.0..std::f64::consts::TAU),
            };
            let obs = raycast_depth(&map, &[], &drone, &config).unwrap();
            for (i, &cast) in obs.depths.iter().enumerate() {
                let offset = -config.fov / 2.0 + config.fov * i as f64 / 15.0;
                let marched = march_ray(&map, pos, drone.heading + offset, config.d_max);
                assert!(
                    (cast - marched).abs() <= 0.01,
                    "scene {scene} ray {i}: cast {cast} vs marched {marched}"
                );
            }
        }
    }
}

#[test]
fn rays_see_movers() {
    let map = inline_world(CORRIDOR);
    let config = SimConfig {
        n_rays: 5,
        ..SimConfig::default()
    };
    let drone = DroneState {
        pos: Vec2::new(2.0, 2.0),
        heading: 0.0,
    };
    let mover = MoverState {
        pos: Vec2::new(5.0, 2.0),
        radius: 0.5,
        speed: 0.0,
        heading: 0.0,
    };
    let clear = raycast_depth(&map, &[], &drone, &config).unwrap();
    let blocked = raycast_depth(&map, &[mover], &drone, &config).unwrap();
    assert!((blocked.depths[2] - 2.5).abs() < 1e-9);
    assert!(clear.depths[2] > blocked.depths[2]);
    assert_eq!(blocked.materials[2], Some(aloft::env::Material::Actor));
}

// ---------------------------------------------------------------------------
// Stepping.

fn corridor_env(seed: u64) -> Env {
    Env::new(
        inline_world(CORRIDOR),
        SimConfig::default(),
        ChaCha8Rng::seed_from_u64(seed),
    )
    .unwrap()
}

#[test]
fn straight_step_advances_step_len_along_heading() {
    let mut env = corridor_env(3);
    let before = env.drone();
    let result = env.step(Action::GoStraight).unwrap();
    let after = env.drone();
    let expected = before
        .pos
        .add(Vec2::from_angle(before.heading).scale(0.25));
    assert_eq!(after.pos.x.to_bits(), expected.x.to_bits());
    assert_eq!(after.pos.y.to_bits(), expected.y.to_bits());
    assert_eq!(after.heading, before.heading);
    assert!(!result.done);
}

#[test]
fn turn_steps_rotate_then_advance_half() {
    for (action, sign) in [(Action::TurnLeft, 1.0), (Action::TurnRight, -1.0)] {
        let mut env = corridor_env(4);
        let before = env.drone();
        env.step(action).unwrap();
        let after = env.drone();
        let heading = (before.heading + sign * std::f64::consts::PI / 12.0)
            .rem_euclid(std::f64::consts::TAU);
        let expected = before.pos.add(Vec2::from_angle(heading).scale(0.125));
        assert_eq!(after.heading.to_bits(), heading.to_bits());
        assert_eq!(after.pos.x.to_bits(), expected.x.to_bits());
        assert_eq!(after.pos.y.to_bits(), expected.y.to_bits());
    }
}

#[test]
fn open_corridor_straight_step_earns_one_point_five() {
    let mut env = corridor_env(5);
    let result = env.step(Action::GoStraight).unwrap();
    assert_eq!(result.reward, 1.5);
    assert!(!result.collided);
}

#[test]
fn flying_into_wall_collides_with_penalty() {
    let map = inline_world(
        "[meta]\nname dead-end\nbounds 0 0 30 4\n[walls]\n2.5 0 2.5 4\n[spawn]\nrect 1 1.95 1.02 2.05\nheading 0 0\n",
    );
    let mut env = Env::new(map, SimConfig::default(), ChaCha8Rng::seed_from_u64(6)).unwrap();
    let mut last = None;
    for _ in 0..20 {
        let r = env.step(Action::GoStraight).unwrap();
        let done = r.done;
        last = Some(r);
        if done {
            break;
        }
    }
    let last = last.unwrap();
    assert!(last.done && last.collided);
    assert_eq!(last.reward, -10.0);
    assert!(env.has_collided());
}

#[test]
fn stepping_after_done_is_a_contract_error() {
    let mut env = corridor_env(7);
    loop {
        if env.step(Action::TurnLeft).unwrap().done {
            break;
        }
    }
    let err = env.step(Action::GoStraight).unwrap_err();
    assert!(matches!(err, EnvError::Contract(_)), "got {err}");
}

#[test]
fn step_cap_ends_episode_without_penalty() {
    let mut config = SimConfig::default();
    config.reward.max_steps = 50;
    let mut env = Env::new(inline_world(CORRIDOR), config, ChaCha8Rng::seed_from_u64(8)).unwrap();
    for i in 1..=50 {
        let r = env.step(Action::GoStraight).unwrap();
        if i < 50 {
            assert!(!r.done);
        } else {
            assert!(r.done);
            assert!(!r.collided);
            assert_eq!(r.reward, 1.5);
        }
    }
}

#[test]
fn distance_source_switch_changes_reward_basis() {
    // Wall close behind the drone, open space ahead: true clearance is small
    // but the forward sensor sees nothing nearby.
    let text = "[meta]\nname behind\nbounds 0 0 30 30\n[walls]\n1 0 1 30\n[spawn]\nrect 1.55 14.95 1.6 15.05\nheading 0 0\n";
    let run = |source: DistanceSource| {
        let config = SimConfig {
            distance_source: source,
            ..SimConfig::default()
        };
        let mut env =
            Env::new(inline_world(text), config, ChaCha8Rng::seed_from_u64(9)).unwrap();
        env.step(Action::GoStraight).unwrap().nearest_distance
    };
    let geo = run(DistanceSource::Geometry);
    let obs = run(DistanceSource::Observation);
    assert!(geo < 1.0, "geometry clearance {geo}");
    assert!(obs > 5.0, "observation clearance {obs}");
}

// ---------------------------------------------------------------------------
// Observation noise.

#[test]
fn zero_scale_noise_is_identity() {
    let cfg = NoiseConfig {
        blur_sigma: 0.0,
        jitter_sigma: 0.0,
        block_len: 4,
        replace_prob: 0.0,
    };
    let depths: Vec<f64> = (1..=32).map(|i| i as f64 * 0.3).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let out = apply_noise(&depths, &cfg, 10.0, &mut rng);
    assert_eq!(out, depths);
}

#[test]
fn whole_vector_block_collapses_to_exact_mean() {
    let depths: Vec<f64> = vec![1.0, 2.0, 3.5, 4.0, 5.25, 6.0, 7.0, 8.0];
    let cfg = NoiseConfig {
        blur_sigma: 0.0,
        jitter_sigma: 0.0,
        block_len: depths.len(),
        replace_prob: 1.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let out = apply_noise(&depths, &cfg, 10.0, &mut rng);
    let mean = depths.iter().sum::<f64>() / depths.len() as f64;
    assert!(out.iter().all(|&x| x.to_bits() == mean.to_bits()));
}

#[test]
fn jitter_standard_deviation_matches_nominal_within_five_percent() {
    let cfg = NoiseConfig {
        blur_sigma: 0.0,
        jitter_sigma: 0.05,
        block_len: 4,
        replace_prob: 0.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut samples = Vec::with_capacity(100_000);
    for _ in 0..100_000 {
        let out = apply_noise(&[5.0], &cfg, 10.0, &mut rng);
        samples.push(out[0] - 5.0);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    let std = var.sqrt();
    assert!(
        (std - 0.05).abs() / 0.05 < 0.05,
        "sample std {std} vs nominal 0.05"
    );
    assert!(mean.abs() < 0.002, "sample mean {mean}");
}

#[test]
fn blur_preserves_constant_vectors_and_output_stays_in_range() {
    let cfg = NoiseConfig {
        blur_sigma: 1.5,
        jitter_sigma: 0.0,
        block_len: 4,
        replace_prob: 0.0,
    };
    let depths = vec![4.25; 32];
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let out = apply_noise(&depths, &cfg, 10.0, &mut rng);
    assert!(out.iter().all(|&x| (x - 4.25).abs() < 1e-12));

    let full = NoiseConfig::default();
    let ramp: Vec<f64> = (0..32).map(|i| 0.2 + i as f64 * 0.31).collect();
    for _ in 0..200 {
        let out = apply_noise(&ramp, &full, 10.0, &mut rng);
        assert!(out.iter().all(|&x| x > 0.0 && x <= 10.0));
    }
}

// ---------------------------------------------------------------------------
// Reset statistics.

#[test]
fn spawn_positions_cover_region_uniformly() {
    let map = inline_world(
        "[meta]\nname open\nbounds 0 0 40 40\n[spawn]\nrect 10 10 20 20\n",
    );
    let mut env = Env::new(
        map,
        SimConfig::default(),
        ChaCha8Rng::seed_from_u64(14),
    )
    .unwrap();
    let mut counts = [[0usize; 4]; 4];
    let n = 10_000;
    for k in 0..n {
        env.reset(ChaCha8Rng::seed_from_u64(1_000 + k)).unwrap();
        let p = env.drone().pos;
        let cx = (((p.x - 10.0) / 2.5) as usize).min(3);
        let cy = (((p.y - 10.0) / 2.5) as usize).min(3);
        counts[cx][cy] += 1;
    }
    let expected = n as f64 / 16.0;
    let chi2: f64 = counts
        .iter()
        .flatten()
        .map(|&o| {
            let d = o as f64 - expected;
            d * d / expected
        })
        .sum();
    // df = 15, alpha = 0.01.
    assert!(chi2 < 30.578, "chi-square {chi2}");
}

#[test]
fn resets_never_start_in_collision() {
    let map = load_world("room-scattered.world");
    let config = SimConfig::default();
    let mut env = Env::new(map.clone(), config.clone(), ChaCha8Rng::seed_from_u64(15)).unwrap();
    for k in 0..10_000 {
        env.reset(ChaCha8Rng::seed_from_u64(20_000 + k)).unwrap();
        let c = clearance(&map, env.movers(), env.drone().pos);
        assert!(c >= config.reward.r_drone, "reset {k} spawned at clearance {c}");
    }
}

#[test]
fn blocked_spawn_region_is_a_config_error() {
    let map = inline_world(
        "[meta]\nname blocked\nbounds 0 0 10 10\n[obstacles]\nrect 3 3 4 4\n[spawn]\nrect 4 4 6 6\n",
    );
    let err = match Env::new(map, SimConfig::default(), ChaCha8Rng::seed_from_u64(16)) {
        Ok(_) => panic!("blocked spawn region was accepted"),
        Err(e) => e,
    };
    assert!(matches!(err, EnvError::Config(_)), "got {err}");
    assert!(err.to_string().contains("spawn"));
}

// ---------------------------------------------------------------------------
// Determinism and movers.

fn action_script(i: usize) -> Action {
    match i % 4 {
        0 | 2 => Action::GoStraight,
        1 => Action::TurnLeft,
        _ => Action::TurnRight,
    }
}

fn run_trace(seed: u64, steps: usize) -> Vec<u64> {
    let map = load_world("cafe-movers.world");
    let mut env = Env::new(map, SimConfig::default(), ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let mut trace = Vec::new();
    for i in 0..steps {
        if env.is_done() {
            env.reset(ChaCha8Rng::seed_from_u64(seed ^ (i as u64) << 32)).unwrap();
        }
        let r = env.step(action_script(i)).unwrap();
        trace.push(r.reward.to_bits());
        trace.push(env.drone().pos.x.to_bits());
        trace.push(env.drone().pos.y.to_bits());
        for d in &r.observation.depths {
            trace.push(d.to_bits());
        }
        for m in env.movers() {
            trace.push(m.pos.x.to_bits());
            trace.push(m.pos.y.to_bits());
        }
    }
    trace
}

#[test]
fn seed_and_actions_fully_determine_the_trajectory() {
    let a = run_trace(17, 120);
    let b = run_trace(17, 120);
    assert_eq!(a, b);
    let c = run_trace(18, 120);
    assert_ne!(a, c);
}

#[test]
fn movers_stay_inside_bounds_and_off_static_geometry() {
    let map = load_world("cafe-movers.world");
    for seed in [19, 20, 21] {
        let mut env = Env::new(
            map.clone(),
            SimConfig::default(),
            ChaCha8Rng::seed_from_u64(seed),
        )
        .unwrap();
        for i in 0..300 {
            if env.is_done() {
                env.reset(ChaCha8Rng::seed_from_u64(seed * 1000 + i)).unwrap();
            }
            env.step(action_script(i as usize)).unwrap();
            for m in env.movers() {
                assert!(map.bounds.contains(m.pos), "mover at {:?}", m.pos);
                let c = clearance(&map, &[], m.pos);
                assert!(c >= m.radius - 1e-9, "mover clearance {c}");
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Rendering.

#[test]
fn render_is_bounded_and_bitwise_stable() {
    let map = load_world("room-scattered.world");
    let env = Env::new(
        map.clone(),
        SimConfig::default(),
        ChaCha8Rng::seed_from_u64(22),
    )
    .unwrap();
    let drone = env.drone();
    let a = render_pseudo_rgb(&map, env.movers(), &drone, env.config()).unwrap();
    let b = render_pseudo_rgb(&map, env.movers(), &drone, env.config()).unwrap();
    assert_eq!(a.shape(), &[3, 32, 32]);
    assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    let bits = |t: &aloft::tensor::Tensor| -> Vec<u64> {
        t.data().iter().map(|v| v.to_bits()).collect()
    };
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn material_changes_color_but_not_depth() {
    let base = "[meta]\nname m\nbounds 0 0 100 100\n[walls]\n52 40 52 60 WHICH\n[spawn]\nrect 49 49 51 51\n";
    let plain = inline_world(&base.replace(" WHICH", ""));
    let brick = inline_world(&base.replace("WHICH", "brick"));
    let drone = DroneState {
        pos: Vec2::new(50.0, 50.0),
        heading: 0.0,
    };
    let config = SimConfig::default();
    let obs_p = raycast_depth(&plain, &[], &drone, &config).unwrap();
    let obs_b = raycast_depth(&brick, &[], &drone, &config).unwrap();
    assert_eq!(obs_p.depths, obs_b.depths);

    let img_p = render_pseudo_rgb(&plain, &[], &drone, &config).unwrap();
    let img_b = render_pseudo_rgb(&brick, &[], &drone, &config).unwrap();
    assert_ne!(img_p.data(), img_b.data());

    let y_p = depth_image(&obs_p.depths, &config);
    let y_b = depth_image(&obs_b.depths, &config);
    assert_eq!(y_p.data(), y_b.data());
    assert_eq!(y_p.shape(), &[1, 32, 32]);
}

#[test]
fn shipped_worlds_parse_and_spawn() {
    for entry in std::fs::read_dir(worlds_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("world") {
            continue;
        }
        let map = Arc::new(WorldMap::load(&path).unwrap());
        let env = Env::new(map, SimConfig::default(), ChaCha8Rng::seed_from_u64(23));
        assert!(env.is_ok(), "world {path:?} failed: {:?}", env.err());
    }
}

// ---------------------------------------------------------------------------
// Properties.

mod properties {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn noise_output_stays_in_sensor_range(
            depths in prop::collection::vec(1e-3..10.0f64, 1..64),
            blur in 0.0..3.0f64,
            jitter in 0.0..0.5f64,
            block in 1usize..8,
            prob in 0.0..1.0f64,
            seed in 0u64..1000,
        ) {
            let cfg = NoiseConfig {
                blur_sigma: blur,
                jitter_sigma: jitter,
                block_len: block,
                replace_prob: prob,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = apply_noise(&depths, &cfg, 10.0, &mut rng);
            prop_assert_eq!(out.len(), depths.len());
            for &x in &out {
                prop_assert!(x > 0.0 && x <= 10.0);
            }
        }

        #[test]
        fn straight_reward_is_turn_reward_plus_bonus(d in 0.0..20.0f64) {
            let cfg = RewardConfig::default();
            let s = reward(d, Action::GoStraight, false, &cfg);
            let t = reward(d, Action::TurnLeft, false, &cfg);
            prop_assert_eq!(s.to_bits(), (t + 0.5).to_bits());
            prop_assert!(t <= 1.0);
        }
    }
}
