//! Deterministic synthetic driving scenarios.
//!
//! Each scene is a straight or gently curved multi-lane road with an
//! intersection: the leftmost lane branches into a left turn and the
//! rightmost lane into a right turn. Agents follow lane-consistent paths and
//! execute one sampled maneuver, which starts at the current time step so
//! that similar histories lead to different futures.

use std::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::scenario::{AgentKind, AgentTrack, MapElement, Pose2, Scenario, SceneVector, TrajState};
use crate::{Error, Result};

pub const LANE_WIDTH: f64 = 3.5;
pub const MAX_SPEED: f64 = 20.0;
/// Agent pairs in every scenario come at least this close during the future.
pub const INTERACTION_DISTANCE: f64 = 15.0;
/// Route polylines are sampled this finely before arc-length lookup.
const ROUTE_STEP: f64 = 0.25;
/// Routes extend this far beyond the drawn lane length.
const ROUTE_EXTENSION: f64 = 150.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Maneuver {
    KeepLane,
    LaneChange,
    Turn,
    SlowDown,
    Accelerate,
}

/// Sampling probabilities over [`Maneuver`]s.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ManeuverMix {
    pub keep_lane: f64,
    pub lane_change: f64,
    pub turn: f64,
    pub slow_down: f64,
    pub accelerate: f64,
}

impl Default for ManeuverMix {
    fn default() -> Self {
        Self { keep_lane: 0.3, lane_change: 0.2, turn: 0.3, slow_down: 0.1, accelerate: 0.1 }
    }
}

impl ManeuverMix {
    pub fn only(m: Maneuver) -> Self {
        let mut mix = Self { keep_lane: 0.0, lane_change: 0.0, turn: 0.0, slow_down: 0.0, accelerate: 0.0 };
        *mix.weight_mut(m) = 1.0;
        mix
    }

    fn entries(&self) -> [(Maneuver, f64); 5] {
        [
            (Maneuver::KeepLane, self.keep_lane),
            (Maneuver::LaneChange, self.lane_change),
            (Maneuver::Turn, self.turn),
            (Maneuver::SlowDown, self.slow_down),
            (Maneuver::Accelerate, self.accelerate),
        ]
    }

    fn weight_mut(&mut self, m: Maneuver) -> &mut f64 {
        match m {
            Maneuver::KeepLane => &mut self.keep_lane,
            Maneuver::LaneChange => &mut self.lane_change,
            Maneuver::Turn => &mut self.turn,
            Maneuver::SlowDown => &mut self.slow_down,
            Maneuver::Accelerate => &mut self.accelerate,
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> Maneuver {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (m, p) in self.entries() {
            acc += p;
            if u < acc {
                return m;
            }
        }
        // round-off: fall back to the last maneuver with positive weight
        self.entries().iter().rev().find(|(_, p)| *p > 0.0).map_or(Maneuver::KeepLane, |(m, _)| *m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub rng_seed: u64,
    pub n_scenarios: usize,
    /// Inclusive range of parallel lanes per road.
    pub lanes_per_scene: (usize, usize),
    /// Inclusive range of agents per scenario.
    pub agents_per_scene: (usize, usize),
    pub lane_length: f64,
    pub lane_sample_spacing: f64,
    pub maneuver_mix: ManeuverMix,
    pub noise_sigma: f64,
    pub past_steps: usize,
    pub future_steps: usize,
    pub step_dt: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            rng_seed: 0,
            n_scenarios: 1000,
            lanes_per_scene: (1, 3),
            agents_per_scene: (2, 5),
            lane_length: 100.0,
            lane_sample_spacing: 2.0,
            maneuver_mix: ManeuverMix::default(),
            noise_sigma: 0.05,
            past_steps: 20,
            future_steps: 30,
            step_dt: 0.1,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let entries = self.maneuver_mix.entries();
        if entries.iter().any(|(_, p)| !(p.is_finite() && *p >= 0.0)) {
            return bad("maneuver probabilities must be non-negative".into());
        }
        let total: f64 = entries.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("maneuver probabilities sum to {total}, expected 1"));
        }
        if self.past_steps < 2 {
            return bad("past_steps must be at least 2".into());
        }
        if self.future_steps < 1 {
            return bad("future_steps must be at least 1".into());
        }
        if !(self.lane_sample_spacing > 0.0) {
            return bad("lane_sample_spacing must be positive".into());
        }
        if !(self.step_dt > 0.0) {
            return bad("step_dt must be positive".into());
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be non-negative".into());
        }
        let (lmin, lmax) = self.lanes_per_scene;
        if lmin == 0 || lmin > lmax {
            return bad(format!("lanes_per_scene range {lmin}..={lmax} needs at least one lane"));
        }
        let (amin, amax) = self.agents_per_scene;
        if amin < 2 || amin > amax {
            return bad(format!("agents_per_scene range {amin}..={amax} needs at least two agents"));
        }
        // agents must be able to build their full history before the intersection
        let history = MAX_SPEED * self.step_dt * self.past_steps as f64;
        if self.lane_length < 2.0 * history.max(20.0) {
            return bad(format!("lane_length {} too short for {} past steps", self.lane_length, self.past_steps));
        }
        Ok(())
    }

    fn intersection(&self) -> f64 {
        0.6 * self.lane_length
    }
}

/// Train/validation/test scenarios with disjoint ids.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<Scenario>,
    pub val: Vec<Scenario>,
    pub test: Vec<Scenario>,
}

/// Ground-truth geometry behind a generated scenario, in world coordinates.
#[derive(Clone, Debug)]
pub struct Layout {
    /// Lane centerlines (main lanes extended past the drawn length, plus turn branches).
    pub lanes: Vec<Vec<(f64, f64)>>,
    /// Path followed by each agent, in agent order.
    pub routes: Vec<Vec<(f64, f64)>>,
    pub maneuvers: Vec<Maneuver>,
}

/// Densely sampled path with cumulative arc length.
#[derive(Clone, Debug)]
struct Polyline {
    pts: Vec<(f64, f64)>,
    cum: Vec<f64>,
}

impl Polyline {
    fn new(pts: Vec<(f64, f64)>) -> Self {
        let mut cum = Vec::with_capacity(pts.len());
        let mut total = 0.0;
        for (i, p) in pts.iter().enumerate() {
            if i > 0 {
                let q = pts[i - 1];
                total += (p.0 - q.0).hypot(p.1 - q.1);
            }
            cum.push(total);
        }
        Self { pts, cum }
    }

    fn length(&self) -> f64 {
        *self.cum.last().unwrap_or(&0.0)
    }

    /// Point at arc length `s`, clamped to the ends.
    fn at(&self, s: f64) -> (f64, f64) {
        let s = s.clamp(0.0, self.length());
        let i = match self.cum.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(i) => return self.pts[i],
            Err(i) => i.clamp(1, self.pts.len() - 1),
        };
        let (a, b) = (self.pts[i - 1], self.pts[i]);
        let seg = self.cum[i] - self.cum[i - 1];
        let t = if seg > 0.0 { (s - self.cum[i - 1]) / seg } else { 0.0 };
        (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1))
    }

    /// Points every `spacing` meters in `[from, to]`.
    fn resample(&self, from: f64, to: f64, spacing: f64) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        let mut s = from;
        while s <= to.min(self.length()) + 1e-9 {
            out.push(self.at(s));
            s += spacing;
        }
        out
    }
}

/// Integrates constant-curvature segments `(length, curvature)` from `start`.
fn arc_path(start: Pose2, segments: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let (mut x, mut y, mut h) = (start.x, start.y, start.heading);
    let mut pts = vec![(x, y)];
    for &(len, kappa) in segments {
        let n = (len / ROUTE_STEP).ceil().max(1.0) as usize;
        let ds = len / n as f64;
        for _ in 0..n {
            if kappa.abs() < 1e-12 {
                x += ds * h.cos();
                y += ds * h.sin();
            } else {
                let h2 = h + kappa * ds;
                x += (h2.sin() - h.sin()) / kappa;
                y -= (h2.cos() - h.cos()) / kappa;
                h = h2;
            }
            pts.push((x, y));
        }
    }
    pts
}

/// Road geometry in the road-local frame.
struct Road {
    lanes: usize,
    curvature: f64,
    intersection: f64,
    left_radius: f64,
    right_radius: f64,
}

impl Road {
    /// Lateral offset of lane `k`; lane 0 is leftmost.
    fn offset(&self, k: usize) -> f64 {
        ((self.lanes as f64 - 1.0) / 2.0 - k as f64) * LANE_WIDTH
    }

    /// Reference-line point shifted laterally by `l` at reference arc length `s`.
    fn point(&self, s: f64, l: f64) -> (f64, f64) {
        let k = self.curvature;
        let (rx, ry, h) = if k.abs() < 1e-12 {
            (s, 0.0, 0.0)
        } else {
            ((k * s).sin() / k, (1.0 - (k * s).cos()) / k, k * s)
        };
        (rx - l * h.sin(), ry + l * h.cos())
    }

    fn lane_curvature(&self, l: f64) -> f64 {
        self.curvature / (1.0 - self.curvature * l)
    }

    /// Lane arc length corresponding to reference arc length `s`.
    fn lane_arc(&self, s: f64, l: f64) -> f64 {
        s * (1.0 - self.curvature * l)
    }

    fn main_lane(&self, k: usize, length: f64) -> Polyline {
        let l = self.offset(k);
        Polyline::new(arc_path(
            Pose2::new(0.0, l, 0.0),
            &[(self.lane_arc(length + ROUTE_EXTENSION, l), self.lane_curvature(l))],
        ))
    }

    /// Lane `k` up to the intersection, then a quarter turn and a straight.
    fn turn_route(&self, k: usize, left: bool, straight: f64) -> Polyline {
        let l = self.offset(k);
        let (radius, sign) = if left { (self.left_radius, 1.0) } else { (self.right_radius, -1.0) };
        Polyline::new(arc_path(
            Pose2::new(0.0, l, 0.0),
            &[
                (self.lane_arc(self.intersection, l), self.lane_curvature(l)),
                (radius * FRAC_PI_2, sign / radius),
                (straight, 0.0),
            ],
        ))
    }

    /// Smooth lateral move from lane `from` to lane `to` starting at
    /// reference arc length `start` over `span` meters.
    fn lane_change_route(&self, from: usize, to: usize, start: f64, span: f64, length: f64) -> Polyline {
        let (l0, l1) = (self.offset(from), self.offset(to));
        let end = length + ROUTE_EXTENSION;
        let n = (end / ROUTE_STEP).ceil() as usize;
        let pts = (0..=n)
            .map(|i| {
                let s = end * i as f64 / n as f64;
                let u = ((s - start) / span).clamp(0.0, 1.0);
                let blend = u * u * (3.0 - 2.0 * u);
                self.point(s, l0 + (l1 - l0) * blend)
            })
            .collect();
        Polyline::new(pts)
    }
}

struct AgentPlan {
    kind: AgentKind,
    maneuver: Maneuver,
    route: Polyline,
    /// Arc length along the route at the current time step.
    s_now: f64,
    v0: f64,
    accel: f64,
}

fn speed_profile(plan: &AgentPlan, past: usize, future: usize, dt: f64) -> Vec<f64> {
    // arc length at each of the past + future steps
    let mut s = Vec::with_capacity(past + future);
    for k in 0..past {
        s.push(plan.s_now - plan.v0 * dt * (past - 1 - k) as f64);
    }
    let mut v = plan.v0;
    let mut pos = plan.s_now;
    for _ in 0..future {
        v = match plan.maneuver {
            Maneuver::SlowDown => (v - plan.accel * dt).max(0.0),
            Maneuver::Accelerate => (v + plan.accel * dt).min(MAX_SPEED).min(1.6 * plan.v0),
            Maneuver::Turn => (v - plan.accel * dt).max(plan.v0.min(8.0)),
            Maneuver::KeepLane | Maneuver::LaneChange => v,
        };
        pos += v * dt;
        s.push(pos);
    }
    s
}

fn scenario_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn min_future_distance(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p.0 - q.0).hypot(p.1 - q.1)).fold(f64::INFINITY, f64::min)
}

/// Generates scenario `index`; a pure function of `(config, index)`.
pub fn generate_scenario(config: &GeneratorConfig, index: u64) -> Result<Scenario> {
    generate_with_layout(config, index).map(|(s, _)| s)
}

/// [`generate_scenario`] plus the underlying lane and route geometry.
pub fn generate_with_layout(config: &GeneratorConfig, index: u64) -> Result<(Scenario, Layout)> {
    config.validate()?;
    let mut rng = scenario_rng(config.rng_seed, index);
    let (t_past, t_future, dt) = (config.past_steps, config.future_steps, config.step_dt);

    let lanes = rng.random_range(config.lanes_per_scene.0..=config.lanes_per_scene.1);
    let curvature = if rng.random::<bool>() {
        0.0
    } else {
        let k = rng.random_range(1.0 / 400.0..1.0 / 150.0);
        if rng.random::<bool>() { k } else { -k }
    };
    let road = Road {
        lanes,
        curvature,
        intersection: config.intersection(),
        left_radius: rng.random_range(12.0..20.0),
        right_radius: rng.random_range(10.0..15.0),
    };
    let length = config.lane_length;
    let n_agents = rng.random_range(config.agents_per_scene.0..=config.agents_per_scene.1);
    let history = |v: f64| v * dt * t_past as f64 + 1.0;

    let plan_agent = |rng: &mut ChaCha8Rng, anchor: Option<f64>| -> AgentPlan {
        let kind = if rng.random::<f64>() < 0.9 { AgentKind::Vehicle } else { AgentKind::Cyclist };
        let v0 = match kind {
            AgentKind::Cyclist => rng.random_range(3.0..7.0),
            _ => rng.random_range(5.0..14.0),
        };
        let mut maneuver = config.maneuver_mix.sample(rng);
        if maneuver == Maneuver::LaneChange && lanes == 1 {
            maneuver = Maneuver::KeepLane;
        }
        let left = rng.random::<bool>();
        let mut lane = rng.random_range(0..lanes);
        if maneuver == Maneuver::Turn {
            lane = if left { 0 } else { lanes - 1 };
        }
        let l = road.offset(lane);
        let int_arc = road.lane_arc(road.intersection, l);
        let lo = history(v0);
        let s_now = match anchor {
            Some(s) => (s + rng.random_range(-10.0..10.0)).clamp(lo, int_arc),
            None if maneuver == Maneuver::Turn => (int_arc - v0 * rng.random_range(0.0..1.2)).max(lo),
            None => rng.random_range(lo..int_arc + 10.0),
        };
        let accel = match maneuver {
            Maneuver::SlowDown => rng.random_range(1.5..4.0),
            Maneuver::Accelerate => rng.random_range(1.0..2.5),
            Maneuver::Turn => rng.random_range(2.0..4.0),
            _ => 0.0,
        };
        let route = match maneuver {
            Maneuver::Turn => road.turn_route(lane, left, ROUTE_EXTENSION),
            Maneuver::LaneChange => {
                let to = if lane == 0 || (lane + 1 < lanes && rng.random::<bool>()) { lane + 1 } else { lane - 1 };
                let span = rng.random_range(25.0..40.0);
                let s_ref = s_now / (1.0 - road.curvature * l);
                road.lane_change_route(lane, to, s_ref, span, length)
            }
            _ => road.main_lane(lane, length),
        };
        AgentPlan { kind, maneuver, route, s_now, v0, accel }
    };

    let mut plans: Vec<AgentPlan> = (0..n_agents).map(|_| plan_agent(&mut rng, None)).collect();
    let positions = |plan: &AgentPlan| -> Vec<(f64, f64)> {
        speed_profile(plan, t_past, t_future, dt).iter().map(|&s| plan.route.at(s)).collect()
    };
    let mut paths: Vec<Vec<(f64, f64)>> = plans.iter().map(positions).collect();
    let interacting = |paths: &[Vec<(f64, f64)>]| {
        (0..paths.len()).any(|i| {
            (i + 1..paths.len()).any(|j| min_future_distance(&paths[i][t_past..], &paths[j][t_past..]) < INTERACTION_DISTANCE)
        })
    };
    let mut attempts = 0;
    while !interacting(&paths) {
        // move agent 1 next to the target; the lateral gap is at most two lanes
        let anchor = Some(plans[0].s_now);
        plans[1] = plan_agent(&mut rng, anchor);
        paths[1] = positions(&plans[1]);
        attempts += 1;
        if attempts > 100 {
            return Err(Error::Config("could not place interacting agents".into()));
        }
    }

    // scene vectors in the road frame
    let spacing = config.lane_sample_spacing;
    let mut scene = Vec::new();
    let mut layout_lanes = Vec::new();
    for k in 0..lanes {
        let lane = road.main_lane(k, length);
        let drawn = road.lane_arc(length, road.offset(k));
        scene.extend(lane.resample(0.0, drawn, spacing).into_iter().map(|p| (p, MapElement::LaneCenterline)));
        layout_lanes.push(lane.pts);
    }
    let branch_len = 30.0;
    for (k, left) in [(0, true), (lanes - 1, false)] {
        let route = road.turn_route(k, left, branch_len);
        let start = road.lane_arc(road.intersection, road.offset(k)) + spacing;
        scene.extend(route.resample(start, route.length(), spacing).into_iter().map(|p| (p, MapElement::LaneCenterline)));
        layout_lanes.push(road.turn_route(k, left, ROUTE_EXTENSION).pts);
    }
    let (outer_left, outer_right) = (road.offset(0) + LANE_WIDTH / 2.0, road.offset(lanes - 1) - LANE_WIDTH / 2.0);
    let gap = (road.intersection - 3.0, road.intersection + road.left_radius.max(road.right_radius) + 3.0);
    let mut s = 0.0;
    while s <= length {
        if s < gap.0 || s > gap.1 {
            scene.push((road.point(s, outer_left), MapElement::RoadBoundary));
            scene.push((road.point(s, outer_right), MapElement::RoadBoundary));
        }
        s += 2.0 * spacing;
    }
    let mut l = outer_right;
    while l <= outer_left + 1e-9 {
        scene.push((road.point(road.intersection - 4.0, l), MapElement::Crosswalk));
        l += 2.0;
    }

    // random world placement
    let world = Pose2::new(rng.random_range(-200.0..200.0), rng.random_range(-200.0..200.0), rng.random_range(-std::f64::consts::PI..std::f64::consts::PI));
    let to_world = |p: (f64, f64)| world.to_parent(p.0, p.1);
    let noise = Normal::new(0.0, config.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");

    let mut agents = Vec::with_capacity(n_agents);
    for (i, (plan, path)) in plans.iter().zip(&paths).enumerate() {
        let mut past = Vec::with_capacity(t_past);
        for &p in &path[..t_past] {
            let (x, y) = to_world(p);
            let (nx, ny) = if config.noise_sigma > 0.0 { (noise.sample(&mut rng), noise.sample(&mut rng)) } else { (0.0, 0.0) };
            past.push(TrajState::new(x + nx, y + ny, plan.kind));
        }
        let future = path[t_past..]
            .iter()
            .map(|&p| {
                let (x, y) = to_world(p);
                TrajState::new(x, y, plan.kind)
            })
            .collect();
        agents.push(AgentTrack::new(format!("a{i}"), past, Some(future))?);
    }
    let scene = scene
        .into_iter()
        .map(|(p, attr)| {
            let (x, y) = to_world(p);
            SceneVector::new(x, y, attr)
        })
        .collect();
    let scenario = Scenario::new(format!("{}-{index}", config.rng_seed), scene, agents, Pose2::identity())?;
    let layout = Layout {
        lanes: layout_lanes.into_iter().map(|l| l.into_iter().map(to_world).collect()).collect(),
        routes: plans.iter().map(|p| p.route.pts.iter().copied().map(to_world).collect()).collect(),
        maneuvers: plans.iter().map(|p| p.maneuver).collect(),
    };
    Ok((scenario, layout))
}

/// Generates scenarios `start..start + count`.
pub fn generate_range(config: &GeneratorConfig, start: u64, count: usize) -> Result<Vec<Scenario>> {
    (start..start + count as u64).map(|i| generate_scenario(config, i)).collect()
}

/// Splits `config.n_scenarios` consecutive indices into train/val/test
/// (10% each for validation and test, rounded down).
pub fn generate_split(config: &GeneratorConfig) -> Result<DatasetSplit> {
    let n = config.n_scenarios;
    if n == 0 {
        return Err(Error::Config("n_scenarios must be ≥ 1".into()));
    }
    let (n_val, n_test) = (n / 10, n / 10);
    let n_train = n - n_val - n_test;
    Ok(DatasetSplit {
        train: generate_range(config, 0, n_train)?,
        val: generate_range(config, n_train as u64, n_val)?,
        test: generate_range(config, (n_train + n_val) as u64, n_test)?,
    })
}

/// Largest per-step speed and heading change over all agents' noise-free
/// futures.
pub fn kinematic_extremes(scenario: &Scenario, dt: f64) -> (f64, f64) {
    let mut max_speed: f64 = 0.0;
    let mut max_turn: f64 = 0.0;
    for a in &scenario.agents {
        let states: Vec<&TrajState> = a.future.iter().flatten().collect();
        let mut prev_heading: Option<f64> = None;
        for w in states.windows(2) {
            let (dx, dy) = (w[1].x - w[0].x, w[1].y - w[0].y);
            let d = dx.hypot(dy);
            max_speed = max_speed.max(d / dt);
            if d > 1e-3 {
                let h = dy.atan2(dx);
                if let Some(p) = prev_heading {
                    max_turn = max_turn.max(crate::scenario::normalize_angle(h - p).abs());
                }
                prev_heading = Some(h);
            }
        }
    }
    (max_speed, max_turn)
}
