//! Per-agent views of one scenario.

use crate::scenario::{to_agent_frame, Pose2, Scenario, SceneVector, TrajState};
use crate::{Error, Result};

/// A scenario expressed in its target-centric frame, plus every agent's
/// history, future and scene re-expressed in that agent's own frame.
#[derive(Clone, Debug)]
pub struct AgentViews {
    /// The scenario in the common (target-centric) frame.
    pub scenario: Scenario,
    /// Agent poses in the common frame.
    pub poses: Vec<Pose2>,
    pub pasts: Vec<Vec<TrajState>>,
    pub futures: Vec<Option<Vec<[f64; 2]>>>,
    pub scenes: Vec<Vec<SceneVector>>,
}

impl AgentViews {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        scenario.validate()?;
        let common = to_agent_frame(scenario, 0)?;
        let poses: Vec<Pose2> = common.agents.iter().map(|a| a.current_pose).collect();
        let mut pasts = Vec::with_capacity(poses.len());
        let mut futures = Vec::with_capacity(poses.len());
        let mut scenes = Vec::with_capacity(poses.len());
        for (agent, pose) in common.agents.iter().zip(&poses) {
            pasts.push(
                agent
                    .past
                    .iter()
                    .map(|s| {
                        let (x, y) = pose.to_local(s.x, s.y);
                        TrajState { x, y, semantic: s.semantic }
                    })
                    .collect(),
            );
            futures.push(agent.future.as_ref().map(|f| {
                f.iter()
                    .map(|s| {
                        let (x, y) = pose.to_local(s.x, s.y);
                        [x, y]
                    })
                    .collect()
            }));
            scenes.push(
                common
                    .scene
                    .iter()
                    .map(|v| {
                        let (x, y) = pose.to_local(v.x, v.y);
                        SceneVector { x, y, attribute: v.attribute }
                    })
                    .collect(),
            );
        }
        Ok(Self { scenario: common, poses, pasts, futures, scenes })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Ground truth of agent `i` in its own frame.
    pub fn future(&self, i: usize) -> Result<&[[f64; 2]]> {
        self.futures.get(i).and_then(|f| f.as_deref()).ok_or(Error::MissingFuture(i))
    }
}
