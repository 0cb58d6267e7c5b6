//! Per-scenario prediction export for external plotting.
//!
//! Positions are in the scenario's parent ("world") frame. Scales are
//! per-axis Laplace scales along the target agent's own axes.

use rpred_core::model::{Model, RefineTargets};
use rpred_core::refiner::RefinedPrediction;
use rpred_core::Scenario;
use rpred_numeric::{Graph, ParameterStore};
use serde::{Deserialize, Serialize};

use crate::CliResult;

pub type Track = Vec<[f64; 2]>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentExport {
    pub id: String,
    /// `M x F` world-frame proposals.
    pub proposals: Vec<Track>,
    pub confidences: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetExport {
    pub proposal_scales: Vec<Track>,
    pub refined_means: Option<Vec<Track>>,
    pub refined_scales: Option<Vec<Track>>,
    pub refined_confidences: Option<Vec<f64>>,
    /// Per mode, indices into the scenario's scene list.
    pub tube_pools: Vec<Vec<usize>>,
    /// Per mode, `(agent, mode)` of each grouped proposal.
    pub groups: Vec<Vec<(usize, usize)>>,
    pub future: Option<Track>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioExport {
    pub id: String,
    /// World pose `[x, y, heading]` of the target agent's frame.
    pub target_frame: [f64; 3],
    pub tau: f64,
    pub agents: Vec<AgentExport>,
    pub target: TargetExport,
}

pub fn export_scenario(model: &Model, store: &ParameterStore, scenario: &Scenario) -> CliResult<ScenarioExport> {
    let mut g = Graph::eval();
    let out = model.forward(&mut g, store, scenario, RefineTargets::Target)?;
    let frame = out.views.scenario.frame;
    let world = |p: &[f64; 2]| {
        let (x, y) = frame.to_parent(p[0], p[1]);
        [x, y]
    };
    let set = &out.proposals;
    let agents = scenario
        .agents
        .iter()
        .enumerate()
        .map(|(i, a)| AgentExport {
            id: a.id.clone(),
            proposals: (0..set.modes).map(|m| set.trajectory(i, m).iter().map(world).collect()).collect(),
            confidences: set.confidences(i).to_vec(),
        })
        .collect();

    let rows = |v| -> Vec<Track> {
        let t = g.value(v);
        (0..set.modes).map(|m| t.row_slice(m).chunks(2).map(|p| [p[0], p[1]]).collect()).collect()
    };
    let proposal_scales = rows(out.proposer.scales);
    let refined = out.refined.first();
    let plain = refined.map(|r| RefinedPrediction::from_graph(&g, r));
    let target = TargetExport {
        proposal_scales,
        refined_means: plain.as_ref().map(|p| p.means.iter().map(|t| t.iter().map(world).collect()).collect()),
        refined_scales: plain.as_ref().map(|p| p.scales.clone()),
        refined_confidences: plain.as_ref().map(|p| p.confidences.clone()),
        tube_pools: refined.map_or_else(Vec::new, |r| r.pools.iter().map(|p| p.member_indices.clone()).collect()),
        groups: refined.map_or_else(Vec::new, |r| r.groups.iter().map(|gr| gr.member_refs.clone()).collect()),
        future: out.views.futures[0].as_ref().map(|f| f.iter().map(world).collect()),
    };
    Ok(ScenarioExport {
        id: scenario.id.clone(),
        target_frame: [frame.x, frame.y, frame.heading],
        tau: model.config().refiner.tau,
        agents,
        target,
    })
}
