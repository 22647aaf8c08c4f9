//! 2D flight simulator: a disc-shaped drone with a forward depth sensor
//! moving through walled worlds with static and moving obstacles.
//!
//! The drone flies at constant speed and chooses between three actions each
//! step: go straight, turn left, or turn right. Turning advances a reduced
//! distance. The sensor casts rays across a forward field of view and
//! reports clamped depths; a paired pseudo-RGB renderer produces the imagery
//! used to train the depth estimation network.
//!
//! Within a step the drone moves first, then every mover takes one random
//! walk step, then collisions are evaluated. This order is part of the
//! determinism contract: a world, a seed, and an action sequence fully
//! determine the trajectory.

mod geometry;
mod world;

pub use geometry::{
    dist_point_rect, dist_point_segment, ray_circle, ray_rect, ray_segment, Rect, Segment, Vec2,
};
pub use world::{
    CircleObstacle, Material, MoverSpec, RectObstacle, SpawnRegion, Wall, WorldMap,
};

use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};
use std::sync::Arc;

/// Depths are clamped below by this to keep observations strictly positive.
const DEPTH_FLOOR: f64 = 1e-9;

/// Spawn rejection sampling gives up after this many attempts.
const SPAWN_ATTEMPTS: usize = 10_000;

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("{origin}:{line}: {msg}")]
    WorldFile {
        origin: String,
        line: usize,
        msg: String,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
}

/// The three flight actions, in Q-value output order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    GoStraight = 0,
    TurnLeft = 1,
    TurnRight = 2,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::GoStraight, Action::TurnLeft, Action::TurnRight];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::GoStraight => "straight",
            Action::TurnLeft => "left",
            Action::TurnRight => "right",
        }
    }
}

/// Reward shaping and episode-termination constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Clearance (meters) at and beyond which the distance term saturates at 1.
    pub sigma: f64,
    /// Drone body radius (meters); clearance below this is a collision.
    pub r_drone: f64,
    /// Added when the chosen action is go-straight.
    pub straight_bonus: f64,
    /// Returned instead of the shaped reward when the step collides.
    pub collision_penalty: f64,
    /// Episode length cap; reaching it ends the episode without penalty.
    pub max_steps: usize,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            sigma: 1.5,
            r_drone: 0.292,
            straight_bonus: 0.5,
            collision_penalty: -10.0,
            max_steps: 1000,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if !(self.r_drone > 0.0 && self.sigma > self.r_drone) {
            return Err(EnvError::Config(format!(
                "need 0 < r_drone < sigma, got r_drone={} sigma={}",
                self.r_drone, self.sigma
            )));
        }
        if self.max_steps == 0 {
            return Err(EnvError::Config("max_steps must be at least 1".into()));
        }
        for (name, v) in [
            ("sigma", self.sigma),
            ("r_drone", self.r_drone),
            ("straight_bonus", self.straight_bonus),
            ("collision_penalty", self.collision_penalty),
        ] {
            if !v.is_finite() {
                return Err(EnvError::Config(format!("{name} must be finite")));
            }
        }
        Ok(())
    }
}

/// Which clearance estimate feeds the reward's distance term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceSource {
    /// True nearest-surface distance from world geometry.
    Geometry,
    /// Minimum of the current (clean) depth observation; forward rays only.
    Observation,
}

/// Sensor, motion, and rendering constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Number of depth rays per observation.
    pub n_rays: usize,
    /// Field of view in radians, centered on the heading.
    pub fov: f64,
    /// Sensor range in meters; depths are clamped to it.
    pub d_max: f64,
    /// Meters advanced by a go-straight step.
    pub step_len: f64,
    /// Heading change (radians) per turn action.
    pub turn_angle: f64,
    /// Fraction of `step_len` advanced while turning.
    pub turn_advance_factor: f64,
    /// Std-dev (radians) of each mover's per-step heading jitter.
    pub mover_turn_sigma: f64,
    /// Rows in rendered pseudo-RGB and depth images.
    pub render_height: usize,
    pub distance_source: DistanceSource,
    pub reward: RewardConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_rays: 32,
            fov: PI / 2.0,
            d_max: 10.0,
            step_len: 0.25,
            turn_angle: PI / 12.0,
            turn_advance_factor: 0.5,
            mover_turn_sigma: 0.4,
            render_height: 32,
            distance_source: DistanceSource::Geometry,
            reward: RewardConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        self.reward.validate()?;
        if self.n_rays == 0 {
            return Err(EnvError::Config("n_rays must be at least 1".into()));
        }
        if !(self.fov > 0.0 && self.fov <= TAU) {
            return Err(EnvError::Config(format!(
                "fov must be in (0, 2*pi], got {}",
                self.fov
            )));
        }
        if !(self.d_max > 0.0 && self.d_max.is_finite()) {
            return Err(EnvError::Config("d_max must be positive".into()));
        }
        if !(self.step_len > 0.0) {
            return Err(EnvError::Config("step_len must be positive".into()));
        }
        if self.step_len >= 2.0 * self.reward.r_drone {
            return Err(EnvError::Config(format!(
                "step_len {} can tunnel through walls; needs < 2 * r_drone = {}",
                self.step_len,
                2.0 * self.reward.r_drone
            )));
        }
        if !(self.turn_angle > 0.0 && self.turn_angle < PI) {
            return Err(EnvError::Config("turn_angle must be in (0, pi)".into()));
        }
        if !(0.0..=1.0).contains(&self.turn_advance_factor) {
            return Err(EnvError::Config(
                "turn_advance_factor must be in [0, 1]".into(),
            ));
        }
        if !(self.mover_turn_sigma >= 0.0 && self.mover_turn_sigma.is_finite()) {
            return Err(EnvError::Config(
                "mover_turn_sigma must be non-negative".into(),
            ));
        }
        if self.render_height < 4 {
            return Err(EnvError::Config("render_height must be at least 4".into()));
        }
        Ok(())
    }
}

/// Depth-sensor corruption applied to observations during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Gaussian blur std-dev across neighboring rays (ray-index units).
    pub blur_sigma: f64,
    /// Std-dev of additive per-ray Gaussian jitter (meters).
    pub jitter_sigma: f64,
    /// Rays per dropout block.
    pub block_len: usize,
    /// Probability that a block collapses to its mean.
    pub replace_prob: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            blur_sigma: 0.8,
            jitter_sigma: 0.05,
            block_len: 4,
            replace_prob: 0.5,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if !(self.blur_sigma >= 0.0 && self.blur_sigma.is_finite()) {
            return Err(EnvError::Config("blur_sigma must be non-negative".into()));
        }
        if !(self.jitter_sigma >= 0.0 && self.jitter_sigma.is_finite()) {
            return Err(EnvError::Config("jitter_sigma must be non-negative".into()));
        }
        if self.block_len == 0 {
            return Err(EnvError::Config("block_len must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.replace_prob) {
            return Err(EnvError::Config("replace_prob must be in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DroneState {
    pub pos: Vec2,
    pub heading: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoverState {
    pub pos: Vec2,
    pub radius: f64,
    pub speed: f64,
    pub heading: f64,
}

/// One depth sweep: per-ray clamped distances plus the material of the
/// surface each ray hit (`None` when nothing lies within sensor range).
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub depths: Vec<f64>,
    pub materials: Vec<Option<Material>>,
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub collided: bool,
    /// The clearance estimate the reward used (meters).
    pub nearest_distance: f64,
}

/// Shaped step reward: a distance term rising linearly from 0 at contact
/// range to 1 at `sigma`, plus a bonus for flying straight, replaced by the
/// collision penalty on impact.
pub fn reward(d_nearest: f64, action: Action, collided: bool, cfg: &RewardConfig) -> f64 {
    if collided {
        return cfg.collision_penalty;
    }
    let base = ((d_nearest - cfg.r_drone) / (cfg.sigma - cfg.r_drone)).min(1.0);
    if action == Action::GoStraight {
        base + cfg.straight_bonus
    } else {
        base
    }
}

fn static_clearance(map: &WorldMap, p: Vec2) -> f64 {
    let mut d = f64::INFINITY;
    for seg in map.boundary_edges() {
        d = d.min(dist_point_segment(p, &seg));
    }
    for w in &map.walls {
        d = d.min(dist_point_segment(p, &w.seg));
    }
    for c in &map.circles {
        d = d.min(p.sub(c.center).norm() - c.radius);
    }
    for r in &map.rects {
        d = d.min(dist_point_rect(p, &r.rect));
    }
    d
}

/// Signed distance from `p` to the nearest surface, movers included.
/// Negative inside a circular obstacle; zero inside a rectangular one.
pub fn clearance(map: &WorldMap, movers: &[MoverState], p: Vec2) -> f64 {
    let mut d = static_clearance(map, p);
    for m in movers {
        d = d.min(p.sub(m.pos).norm() - m.radius);
    }
    d
}

fn cast_ray(
    map: &WorldMap,
    movers: &[MoverState],
    origin: Vec2,
    angle: f64,
    d_max: f64,
) -> (f64, Option<Material>) {
    let dir = Vec2::from_angle(angle);
    let mut best = f64::INFINITY;
    let mut material = None;
    let mut consider = |t: Option<f64>, m: Material| {
        if let Some(t) = t {
            if t < best {
                best = t;
                material = Some(m);
            }
        }
    };
    for seg in map.boundary_edges() {
        consider(ray_segment(origin, dir, &seg), Material::Plain);
    }
    for w in &map.walls {
        consider(ray_segment(origin, dir, &w.seg), w.material);
    }
    for c in &map.circles {
        consider(ray_circle(origin, dir, c.center, c.radius), c.material);
    }
    for r in &map.rects {
        consider(ray_rect(origin, dir, &r.rect), r.material);
    }
    for m in movers {
        consider(ray_circle(origin, dir, m.pos, m.radius), Material::Actor);
    }
    if best >= d_max {
        (d_max, None)
    } else {
        (best.max(DEPTH_FLOOR), material)
    }
}

fn ray_angles(heading: f64, fov: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| {
        let offset = if n == 1 {
            0.0
        } else {
            -fov / 2.0 + fov * i as f64 / (n - 1) as f64
        };
        heading + offset
    })
}

/// Sweeps the depth sensor from `drone`'s pose: `n_rays` rays evenly
/// spanning the field of view, leftmost first, clamped to `d_max`.
/// The drone must be inside the world bounds.
pub fn raycast_depth(
    map: &WorldMap,
    movers: &[MoverState],
    drone: &DroneState,
    config: &SimConfig,
) -> Result<Observation, EnvError> {
    if !map.bounds.contains(drone.pos) {
        return Err(EnvError::Contract(format!(
            "raycast from ({}, {}) outside world bounds",
            drone.pos.x, drone.pos.y
        )));
    }
    let mut depths = Vec::with_capacity(config.n_rays);
    let mut materials = Vec::with_capacity(config.n_rays);
    for angle in ray_angles(drone.heading, config.fov, config.n_rays) {
        let (d, m) = cast_ray(map, movers, drone.pos, angle, config.d_max);
        depths.push(d);
        materials.push(m);
    }
    Ok(Observation { depths, materials })
}

/// Corrupts a clean depth vector: Gaussian blur across rays, additive
/// per-ray jitter, then random contiguous blocks collapsed to their mean.
/// Results are re-clamped to `(0, d_max]`. Stages with zero scale are
/// skipped, so an all-zero config is the identity.
pub fn apply_noise(
    depths: &[f64],
    cfg: &NoiseConfig,
    d_max: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let mut v = depths.to_vec();
    let n = v.len();

    if cfg.blur_sigma > 0.0 && n > 1 {
        let radius = (3.0 * cfg.blur_sigma).ceil() as isize;
        let mut out = vec![0.0; n];
        for (i, slot) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for k in -radius..=radius {
                let j = i as isize + k;
                if j < 0 || j >= n as isize {
                    continue;
                }
                let w = (-(k as f64 * k as f64) / (2.0 * cfg.blur_sigma * cfg.blur_sigma)).exp();
                acc += w * v[j as usize];
                wsum += w;
            }
            *slot = acc / wsum;
        }
        v = out;
    }

    if cfg.jitter_sigma > 0.0 {
        let normal = Normal::new(0.0, cfg.jitter_sigma).expect("finite jitter_sigma");
        for x in v.iter_mut() {
            *x += normal.sample(rng);
        }
    }

    if cfg.replace_prob > 0.0 {
        let mut start = 0;
        while start < n {
            let end = (start + cfg.block_len).min(n);
            let u: f64 = rng.gen();
            if u < cfg.replace_prob {
                let mean = v[start..end].iter().sum::<f64>() / (end - start) as f64;
                v[start..end].fill(mean);
            }
            start = end;
        }
    }

    for x in v.iter_mut() {
        *x = x.clamp(DEPTH_FLOOR, d_max);
    }
    v
}

/// Per-material base colors for the pseudo-RGB renderer, indexed by
/// [`Material::index`].
const PALETTE: [[f64; 3]; 6] = [
    [0.70, 0.70, 0.70],
    [0.80, 0.35, 0.25],
    [0.55, 0.60, 0.70],
    [0.60, 0.45, 0.28],
    [0.30, 0.60, 0.30],
    [0.85, 0.55, 0.15],
];

/// Renders the drone's view as a `[3, render_height, n_rays]` image in
/// `[0, 1]`: one column per ray, wall band height and shading driven by true
/// depth, hue driven by the hit surface's material, sky above and floor
/// below. Deterministic in the scene state.
pub fn render_pseudo_rgb(
    map: &WorldMap,
    movers: &[MoverState],
    drone: &DroneState,
    config: &SimConfig,
) -> Result<Tensor, EnvError> {
    let obs = raycast_depth(map, movers, drone, config)?;
    let h = config.render_height;
    let w = config.n_rays;
    let mut img = vec![0.0; 3 * h * w];
    let mut put = |ch: usize, row: usize, col: usize, val: f64| {
        img[ch * h * w + row * w + col] = val;
    };
    let center = h / 2;
    for (col, (&d, &m)) in obs.depths.iter().zip(&obs.materials).enumerate() {
        let nd = (d / config.d_max).clamp(0.0, 1.0);
        let band = match m {
            Some(mat) => {
                let half = ((0.08 * h as f64 / nd.max(0.05)).round() as usize).clamp(1, center);
                let base = PALETTE[mat.index()];
                let shade = 1.0 - 0.65 * nd;
                Some((center - half, center + half, base.map(|c| c * shade)))
            }
            None => None,
        };
        for row in 0..h {
            let (lo, hi) = band.map_or((h, h), |(lo, hi, _)| (lo, hi));
            if row >= lo && row < hi {
                let color = band.expect("band bounds imply color").2;
                for (ch, &c) in color.iter().enumerate() {
                    put(ch, row, col, c);
                }
            } else if row < center {
                let t = row as f64 / h as f64;
                put(0, row, col, 0.45 + 0.10 * t);
                put(1, row, col, 0.62 + 0.10 * t);
                put(2, row, col, 0.90);
            } else {
                let t = (row - center) as f64 / center.max(1) as f64;
                let g = 0.20 + 0.45 * t;
                put(0, row, col, g);
                put(1, row, col, g * 0.95);
                put(2, row, col, g * 0.88);
            }
        }
    }
    Ok(Tensor::new(vec![3, h, w], img).expect("image buffer matches shape"))
}

/// Renders the matching ground-truth depth image `[1, render_height,
/// n_rays]`: each column holds its ray's depth normalized by `d_max`.
pub fn depth_image(depths: &[f64], config: &SimConfig) -> Tensor {
    let h = config.render_height;
    let w = depths.len();
    let mut img = vec![0.0; h * w];
    for (col, &d) in depths.iter().enumerate() {
        let nd = (d / config.d_max).clamp(0.0, 1.0);
        for row in 0..h {
            img[row * w + col] = nd;
        }
    }
    Tensor::new(vec![1, h, w], img).expect("image buffer matches shape")
}

pub struct Env {
    map: Arc<WorldMap>,
    config: SimConfig,
    drone: DroneState,
    movers: Vec<MoverState>,
    steps: usize,
    done: bool,
    collided: bool,
    rng: ChaCha8Rng,
}

impl Env {
    /// Validates the configuration against the map and starts a first
    /// episode with `rng`.
    pub fn new(
        map: Arc<WorldMap>,
        config: SimConfig,
        rng: ChaCha8Rng,
    ) -> Result<Env, EnvError> {
        config.validate()?;
        for (i, m) in map.movers.iter().enumerate() {
            if m.speed >= 2.0 * m.radius {
                return Err(EnvError::Config(format!(
                    "mover {i} speed {} can tunnel through walls; needs < 2 * radius = {}",
                    m.speed,
                    2.0 * m.radius
                )));
            }
            if static_clearance(&map, m.start) < m.radius {
                return Err(EnvError::Config(format!(
                    "mover {i} starts embedded in static geometry"
                )));
            }
        }
        let mut env = Env {
            map,
            config,
            drone: DroneState {
                pos: Vec2::new(0.0, 0.0),
                heading: 0.0,
            },
            movers: Vec::new(),
            steps: 0,
            done: false,
            collided: false,
            rng: rng.clone(),
        };
        env.reset(rng)?;
        Ok(env)
    }

    /// Starts a fresh episode: movers return to their start points with
    /// random headings, then the drone pose is rejection-sampled uniformly
    /// over the spawn region until collision-free.
    pub fn reset(&mut self, rng: ChaCha8Rng) -> Result<Observation, EnvError> {
        self.rng = rng;
        self.movers = self
            .map
            .movers
            .iter()
            .map(|spec| MoverState {
                pos: spec.start,
                radius: spec.radius,
                speed: spec.speed,
                heading: self.rng.gen_range(0.0..TAU),
            })
            .collect();

        let region = self.map.spawn.region;
        let (h_lo, h_hi) = (self.map.spawn.heading_min, self.map.spawn.heading_max);
        let r_drone = self.config.reward.r_drone;
        let mut accepted = None;
        for _ in 0..SPAWN_ATTEMPTS {
            let pos = Vec2::new(
                self.rng.gen_range(region.min.x..region.max.x),
                self.rng.gen_range(region.min.y..region.max.y),
            );
            let heading = if h_hi > h_lo {
                self.rng.gen_range(h_lo..h_hi)
            } else {
                h_lo
            };
            if clearance(&self.map, &self.movers, pos) >= r_drone {
                accepted = Some(DroneState { pos, heading });
                break;
            }
        }
        self.drone = accepted.ok_or_else(|| {
            EnvError::Config(format!(
                "no collision-free spawn found in {SPAWN_ATTEMPTS} attempts; \
                 spawn region of world {:?} appears blocked",
                self.map.name
            ))
        })?;
        self.steps = 0;
        self.done = false;
        self.collided = false;
        self.observe()
    }

    /// Casts the depth sensor from the current pose.
    pub fn observe(&self) -> Result<Observation, EnvError> {
        raycast_depth(&self.map, &self.movers, &self.drone, &self.config)
    }

    /// Advances one step. Returns a contract error if the episode is done.
    pub fn step(&mut self, action: Action) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::Contract(
                "step called on a finished episode; call reset first".into(),
            ));
        }

        let cfg = &self.config;
        let (turn, advance) = match action {
            Action::GoStraight => (0.0, cfg.step_len),
            Action::TurnLeft => (cfg.turn_angle, cfg.step_len * cfg.turn_advance_factor),
            Action::TurnRight => (-cfg.turn_angle, cfg.step_len * cfg.turn_advance_factor),
        };
        self.drone.heading = (self.drone.heading + turn).rem_euclid(TAU);
        self.drone.pos = self
            .drone
            .pos
            .add(Vec2::from_angle(self.drone.heading).scale(advance));

        let turn_sigma = cfg.mover_turn_sigma;
        for i in 0..self.movers.len() {
            let jitter = if turn_sigma > 0.0 {
                Normal::new(0.0, turn_sigma)
                    .expect("finite mover_turn_sigma")
                    .sample(&mut self.rng)
            } else {
                0.0
            };
            let m = &mut self.movers[i];
            m.heading = (m.heading + jitter).rem_euclid(TAU);
            let candidate = m.pos.add(Vec2::from_angle(m.heading).scale(m.speed));
            let radius = m.radius;
            if static_clearance(&self.map, candidate) >= radius {
                self.movers[i].pos = candidate;
            } else {
                self.movers[i].heading = (self.movers[i].heading + PI).rem_euclid(TAU);
            }
        }

        self.steps += 1;
        let d_true = clearance(&self.map, &self.movers, self.drone.pos);
        self.collided = d_true < self.config.reward.r_drone
            || !self.map.bounds.contains(self.drone.pos);

        let observation = if self.map.bounds.contains(self.drone.pos) {
            self.observe()?
        } else {
            Observation {
                depths: vec![DEPTH_FLOOR; self.config.n_rays],
                materials: vec![Some(Material::Plain); self.config.n_rays],
            }
        };

        let d_nearest = match self.config.distance_source {
            DistanceSource::Geometry => d_true.max(0.0),
            DistanceSource::Observation => observation
                .depths
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min),
        };
        let reward = reward(d_nearest, action, self.collided, &self.config.reward);
        self.done = self.collided || self.steps >= self.config.reward.max_steps;

        Ok(StepResult {
            observation,
            reward,
            done: self.done,
            collided: self.collided,
            nearest_distance: d_nearest,
        })
    }

    pub fn map(&self) -> &WorldMap {
        &self.map
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn drone(&self) -> DroneState {
        self.drone
    }

    pub fn movers(&self) -> &[MoverState] {
        &self.movers
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn has_collided(&self) -> bool {
        self.collided
    }
}
