//! Scenario domain types and rigid frame transforms.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Displacements at or below this length carry no heading information.
pub const MIN_HEADING_DISPLACEMENT: f64 = 1e-6;

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    let mut h = a % (2.0 * PI);
    if h <= -PI {
        h += 2.0 * PI;
    } else if h > PI {
        h -= 2.0 * PI;
    }
    h
}

/// Planar pose: position in meters, heading in radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self { x, y, heading: normalize_angle(heading) }
    }

    pub fn identity() -> Self {
        Self { x: 0.0, y: 0.0, heading: 0.0 }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.heading.is_finite()
    }

    /// Expresses a parent-frame point in this pose's local frame.
    pub fn to_local(&self, px: f64, py: f64) -> (f64, f64) {
        let (s, c) = self.heading.sin_cos();
        let (dx, dy) = (px - self.x, py - self.y);
        (c * dx + s * dy, -s * dx + c * dy)
    }

    /// Maps a local point back into the parent frame.
    pub fn to_parent(&self, lx: f64, ly: f64) -> (f64, f64) {
        let (s, c) = self.heading.sin_cos();
        (c * lx - s * ly + self.x, s * lx + c * ly + self.y)
    }

    /// Pose of `other` (given in parent coordinates) relative to `self`.
    pub fn relative(&self, other: &Pose2) -> Pose2 {
        let (x, y) = self.to_local(other.x, other.y);
        Pose2::new(x, y, other.heading - self.heading)
    }

    /// `self` followed by `local`, where `local` is expressed in `self`'s frame.
    pub fn compose(&self, local: &Pose2) -> Pose2 {
        let (x, y) = self.to_parent(local.x, local.y);
        Pose2::new(x, y, self.heading + local.heading)
    }
}

/// Agent category code carried with every state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum AgentKind {
    Vehicle = 0,
    Pedestrian = 1,
    Cyclist = 2,
}

impl AgentKind {
    pub const COUNT: usize = 3;

    pub fn code(self) -> u8 {
        self as u8
    }
}

impl From<AgentKind> for u8 {
    fn from(k: AgentKind) -> u8 {
        k as u8
    }
}

impl TryFrom<u8> for AgentKind {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            0 => Ok(AgentKind::Vehicle),
            1 => Ok(AgentKind::Pedestrian),
            2 => Ok(AgentKind::Cyclist),
            other => Err(format!("unknown agent semantic code {other}")),
        }
    }
}

/// Map component code carried with every scene vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum MapElement {
    LaneCenterline = 0,
    RoadBoundary = 1,
    Crosswalk = 2,
}

impl MapElement {
    pub const COUNT: usize = 3;

    pub fn code(self) -> u8 {
        self as u8
    }
}

impl From<MapElement> for u8 {
    fn from(k: MapElement) -> u8 {
        k as u8
    }
}

impl TryFrom<u8> for MapElement {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            0 => Ok(MapElement::LaneCenterline),
            1 => Ok(MapElement::RoadBoundary),
            2 => Ok(MapElement::Crosswalk),
            other => Err(format!("unknown map attribute code {other}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajState {
    pub x: f64,
    pub y: f64,
    pub semantic: AgentKind,
}

impl TrajState {
    pub fn new(x: f64, y: f64, semantic: AgentKind) -> Self {
        Self { x, y, semantic }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneVector {
    pub x: f64,
    pub y: f64,
    pub attribute: MapElement,
}

impl SceneVector {
    pub fn new(x: f64, y: f64, attribute: MapElement) -> Self {
        Self { x, y, attribute }
    }
}

/// Heading of the most recent past displacement longer than
/// [`MIN_HEADING_DISPLACEMENT`]; `(0, true)` when the track never moved.
pub fn heading_from_history(past: &[TrajState]) -> (f64, bool) {
    for pair in past.windows(2).rev() {
        let (dx, dy) = (pair[1].x - pair[0].x, pair[1].y - pair[0].y);
        if dx.hypot(dy) > MIN_HEADING_DISPLACEMENT {
            return (normalize_angle(dy.atan2(dx)), false);
        }
    }
    (0.0, true)
}

/// One agent's observed history and, for training data, its future.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentTrack {
    pub id: String,
    pub past: Vec<TrajState>,
    pub future: Option<Vec<TrajState>>,
    pub current_pose: Pose2,
    /// Set when the history had no usable displacement and the heading
    /// defaulted to zero.
    pub degenerate_heading: bool,
}

impl AgentTrack {
    /// Builds a track, deriving the current pose from the last past state
    /// and the latest non-trivial displacement.
    pub fn new(id: impl Into<String>, past: Vec<TrajState>, future: Option<Vec<TrajState>>) -> Result<Self> {
        if past.len() < 2 {
            return Err(Error::Scenario(format!("history of {} states, need at least 2", past.len())));
        }
        let last = past[past.len() - 1];
        let (heading, degenerate_heading) = heading_from_history(&past);
        Ok(Self {
            id: id.into(),
            past,
            future,
            current_pose: Pose2::new(last.x, last.y, heading),
            degenerate_heading,
        })
    }

    pub fn future_len(&self) -> Option<usize> {
        self.future.as_ref().map(Vec::len)
    }

    fn is_finite(&self) -> bool {
        let states = self.past.iter().chain(self.future.iter().flatten());
        self.current_pose.is_finite() && states.into_iter().all(|s| s.x.is_finite() && s.y.is_finite())
    }
}

/// One prediction instance. Agent 0 is the target.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub id: String,
    pub scene: Vec<SceneVector>,
    pub agents: Vec<AgentTrack>,
    /// Pose, in world coordinates, of the frame the coordinates are expressed in.
    pub frame: Pose2,
}

impl Scenario {
    pub fn new(id: impl Into<String>, scene: Vec<SceneVector>, agents: Vec<AgentTrack>, frame: Pose2) -> Result<Self> {
        let s = Self { id: id.into(), scene, agents, frame };
        s.validate()?;
        Ok(s)
    }

    /// Checks agent count, history/future length consistency and finiteness.
    pub fn validate(&self) -> Result<()> {
        let first = self.agents.first().ok_or_else(|| Error::Scenario("no agents".into()))?;
        let t = first.past.len();
        if t < 2 {
            return Err(Error::Scenario(format!("history of {t} states, need at least 2")));
        }
        let f = self.agents.iter().find_map(AgentTrack::future_len);
        for (i, a) in self.agents.iter().enumerate() {
            if a.past.len() != t {
                return Err(Error::Scenario(format!("agent {i} has {} past states, expected {t}", a.past.len())));
            }
            if let (Some(len), Some(expected)) = (a.future_len(), f) {
                if len != expected || len == 0 {
                    return Err(Error::Scenario(format!("agent {i} has {len} future states, expected {expected}")));
                }
            }
            if !a.is_finite() {
                return Err(Error::NonFiniteCoordinate("agent track"));
            }
        }
        if !self.frame.is_finite() || self.scene.iter().any(|v| !v.x.is_finite() || !v.y.is_finite()) {
            return Err(Error::NonFiniteCoordinate("scene"));
        }
        Ok(())
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn past_len(&self) -> usize {
        self.agents[0].past.len()
    }

    /// Future length shared by agents that carry ground truth.
    pub fn future_len(&self) -> Option<usize> {
        self.agents.iter().find_map(AgentTrack::future_len)
    }

    pub fn target(&self) -> &AgentTrack {
        &self.agents[0]
    }

    /// Applies the rigid map `pose.to_local` to every coordinate.
    fn transformed(&self, pose: &Pose2) -> Scenario {
        let map_state = |s: &TrajState| {
            let (x, y) = pose.to_local(s.x, s.y);
            TrajState { x, y, semantic: s.semantic }
        };
        let agents = self
            .agents
            .iter()
            .map(|a| AgentTrack {
                id: a.id.clone(),
                past: a.past.iter().map(map_state).collect(),
                future: a.future.as_ref().map(|f| f.iter().map(map_state).collect()),
                current_pose: pose.relative(&a.current_pose),
                degenerate_heading: a.degenerate_heading,
            })
            .collect();
        let scene = self
            .scene
            .iter()
            .map(|v| {
                let (x, y) = pose.to_local(v.x, v.y);
                SceneVector { x, y, attribute: v.attribute }
            })
            .collect();
        Scenario { id: self.id.clone(), scene, agents, frame: self.frame.compose(pose) }
    }
}

/// Re-expresses the scenario so that agent `target_index` sits at the
/// origin facing +x. Agent order is unchanged.
pub fn to_agent_frame(scenario: &Scenario, target_index: usize) -> Result<Scenario> {
    let agent = scenario.agents.get(target_index).ok_or(Error::AgentIndex {
        index: target_index,
        count: scenario.agents.len(),
    })?;
    let pose = agent.current_pose;
    if pose.x == 0.0 && pose.y == 0.0 && pose.heading == 0.0 {
        return Ok(scenario.clone());
    }
    Ok(scenario.transformed(&pose))
}

/// Maps agent-frame points back into the parent frame described by `frame`.
pub fn from_agent_frame(points: &[(f64, f64)], frame: &Pose2) -> Result<Vec<(f64, f64)>> {
    if !frame.is_finite() {
        return Err(Error::NonFiniteCoordinate("frame"));
    }
    points
        .iter()
        .map(|&(x, y)| {
            if x.is_finite() && y.is_finite() {
                Ok(frame.to_parent(x, y))
            } else {
                Err(Error::NonFiniteCoordinate("point"))
            }
        })
        .collect()
}

/// Moves agent `index` to position 0 (others keep their relative order)
/// and expresses the scenario in that agent's frame.
pub fn retarget(scenario: &Scenario, index: usize) -> Result<Scenario> {
    if index >= scenario.agents.len() {
        return Err(Error::AgentIndex { index, count: scenario.agents.len() });
    }
    let mut permuted = scenario.clone();
    let agent = permuted.agents.remove(index);
    permuted.agents.insert(0, agent);
    to_agent_frame(&permuted, 0)
}
