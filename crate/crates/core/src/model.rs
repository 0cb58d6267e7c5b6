//! The two stages wired together.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rpred_numeric::{Graph, ParameterStore, Tensor};

use crate::config::ModelConfig;
use crate::proposer::{ProposalSet, Proposer, ProposerOutput};
use crate::refiner::{ProposalGroup, RefinedOutput, RefinedPrediction, Refiner, TubePool};
use crate::scenario::Scenario;
use crate::views::AgentViews;
use crate::Result;

/// Which agents the refiner processes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RefineTargets {
    /// Agent 0 only (evaluation).
    Target,
    /// Every agent (training).
    All,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub views: AgentViews,
    pub proposer: ProposerOutput,
    pub proposals: ProposalSet,
    /// Empty when the refiner is disabled.
    pub refined: Vec<RefinedOutput>,
}

/// Plain-value prediction for agent 0, in its own frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// Proposal-stage trajectories, `M x F`.
    pub proposals: Vec<Vec<[f64; 2]>>,
    pub proposal_scales: Vec<Vec<[f64; 2]>>,
    pub proposal_confidences: Vec<f64>,
    pub refined: Option<RefinedPrediction>,
    pub pools: Vec<TubePool>,
    pub groups: Vec<ProposalGroup>,
    /// Ground truth of agent 0 in its own frame, when the scenario has one.
    pub target_future: Option<Vec<[f64; 2]>>,
}

impl Prediction {
    /// Trajectories and confidences used for scoring: refined when present.
    pub fn final_modes(&self) -> (&[Vec<[f64; 2]>], &[f64]) {
        match &self.refined {
            Some(r) => (&r.means, &r.confidences),
            None => (&self.proposals, &self.proposal_confidences),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    proposer: Proposer,
    refiner: Refiner,
}

impl Model {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config: config.clone(), proposer: Proposer::new(config)?, refiner: Refiner::new(config)? })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn proposer(&self) -> &Proposer {
        &self.proposer
    }

    pub fn refiner(&self) -> &Refiner {
        &self.refiner
    }

    /// Fresh parameters for both stages; the refiner's are created even
    /// when it is disabled so checkpoints share one layout.
    pub fn init(&self, seed: u64) -> Result<ParameterStore> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new(seed);
        self.proposer.init(&mut store, &mut rng)?;
        self.refiner.init(&mut store, &mut rng)?;
        Ok(store)
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParameterStore,
        scenario: &Scenario,
        targets: RefineTargets,
    ) -> Result<ForwardOutput> {
        let views = AgentViews::new(scenario)?;
        self.forward_views(g, store, views, targets)
    }

    pub fn forward_views(
        &self,
        g: &mut Graph,
        store: &ParameterStore,
        views: AgentViews,
        targets: RefineTargets,
    ) -> Result<ForwardOutput> {
        let proposer = self.proposer.forward(g, store, &views)?;
        let proposals = ProposalSet::from_graph(g, &proposer, &views.poses, self.config.modes())?;
        let refined = if self.config.refiner.enabled {
            let list: Vec<usize> = match targets {
                RefineTargets::Target => vec![0],
                RefineTargets::All => (0..views.len()).collect(),
            };
            self.refiner.refine(g, store, &views, &proposer, &proposals, &list)?
        } else {
            Vec::new()
        };
        Ok(ForwardOutput { views, proposer, proposals, refined })
    }

    /// Inference on agent 0 with dropout off.
    pub fn predict(&self, store: &ParameterStore, scenario: &Scenario) -> Result<Prediction> {
        let mut g = Graph::eval();
        let out = self.forward(&mut g, store, scenario, RefineTargets::Target)?;
        let modes = self.config.modes();
        let rows = |t: &Tensor| -> Vec<Vec<[f64; 2]>> {
            (0..modes).map(|m| t.row_slice(m).chunks(2).map(|p| [p[0], p[1]]).collect()).collect()
        };
        let proposals = rows(g.value(out.proposer.trajectories));
        let proposal_scales = rows(g.value(out.proposer.scales));
        let proposal_confidences = g.value(out.proposer.confidences).row_slice(0).to_vec();
        let (refined, pools, groups) = match out.refined.first() {
            Some(r) => (Some(RefinedPrediction::from_graph(&g, r)), r.pools.clone(), r.groups.clone()),
            None => (None, Vec::new(), Vec::new()),
        };
        let target_future = out.views.futures[0].clone();
        Ok(Prediction { proposals, proposal_scales, proposal_confidences, refined, pools, groups, target_future })
    }
}
