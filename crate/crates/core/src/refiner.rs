//! Second stage: refines each proposal of a target agent.
//!
//! For proposal `m` of target `n`, in `n`'s frame:
//!
//! * TQSA attends from `f_n^m` onto the embedded scene vectors lying within
//!   `tau` of any waypoint of the proposal (the tube pool);
//! * PIA attends from `f_n^m` onto the features of other agents' proposals
//!   that are confident enough and come close to proposal `m` in time;
//! * `j = [t, p]` feeds a regression MLP (offsets added to the proposal plus
//!   Laplace scales) and, concatenated over modes, a classification MLP.
//!
//! Keys and values are projected once per target (scene) or once per
//! scenario (proposal features) and then gathered per mode, so each mode
//! only ever sees its own pool and group.

use rand::Rng;
use rpred_numeric::nn::{init_linear, init_mlp, mlp_forward, mlp_layers};
use rpred_numeric::{Graph, ParameterStore, Var};

use crate::attention::AttentionBlock;
use crate::config::ModelConfig;
use crate::proposer::{embed_vectors, scene_inputs, ProposalSet, ProposerOutput, SCALE_FLOOR, SCENE_INPUTS};
use crate::scenario::SceneVector;
use crate::views::AgentViews;
use crate::{Error, Result};

/// Embedded scene `Psi`, index-aligned with `source`.
#[derive(Clone, Debug)]
pub struct SceneEmbeddings<'a> {
    /// `L x d`, `None` when `L = 0`.
    pub psi: Option<Var>,
    pub source: &'a [SceneVector],
}

/// Scene indices inside the tube around one proposal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TubePool {
    /// Strictly increasing.
    pub member_indices: Vec<usize>,
    pub proposal_mode: usize,
}

/// Other agents' proposals selected as interaction context for one proposal.
#[derive(Clone, Debug, PartialEq)]
pub struct ProposalGroup {
    pub member_features: Vec<Vec<f64>>,
    /// `(agent, mode)` of each member, ascending.
    pub member_refs: Vec<(usize, usize)>,
}

/// Graph handles of one refined target.
#[derive(Clone, Debug)]
pub struct RefinedOutput {
    pub target: usize,
    /// `M x 2F` refined means in the target's frame.
    pub means: Var,
    /// `M x 2F`, each entry `> SCALE_FLOOR`.
    pub scales: Var,
    /// `1 x M`.
    pub confidences: Var,
    /// Per mode, TQSA output `t` (`1 x d`).
    pub scene_context: Vec<Var>,
    /// Per mode, PIA output `p` (`1 x d`).
    pub interaction_context: Vec<Var>,
    pub pools: Vec<TubePool>,
    pub groups: Vec<ProposalGroup>,
}

/// Plain values of a refined target: `M x F` means and scales, `M`
/// confidences.
#[derive(Clone, Debug, PartialEq)]
pub struct RefinedPrediction {
    pub means: Vec<Vec<[f64; 2]>>,
    pub scales: Vec<Vec<[f64; 2]>>,
    pub confidences: Vec<f64>,
}

impl RefinedPrediction {
    pub fn from_graph(g: &Graph, out: &RefinedOutput) -> Self {
        let rows = |v: Var| -> Vec<Vec<[f64; 2]>> {
            let t = g.value(v);
            (0..t.rows()).map(|r| t.row_slice(r).chunks(2).map(|p| [p[0], p[1]]).collect()).collect()
        };
        Self {
            means: rows(out.means),
            scales: rows(out.scales),
            confidences: g.value(out.confidences).data().to_vec(),
        }
    }
}

/// Indices of scene vectors strictly within `tau` of at least one waypoint.
pub fn tubular_region_pooling(proposal: &[[f64; 2]], scene: &[SceneVector], tau: f64, mode: usize) -> TubePool {
    let tau2 = tau * tau;
    let member_indices = scene
        .iter()
        .enumerate()
        .filter(|(_, v)| {
            proposal.iter().any(|w| {
                let (dx, dy) = (w[0] - v.x, w[1] - v.y);
                dx * dx + dy * dy < tau2
            })
        })
        .map(|(l, _)| l)
        .collect();
    TubePool { member_indices, proposal_mode: mode }
}

/// Minimum over aligned steps of the distance between two trajectories.
pub fn trajectory_min_distance(a: &[[f64; 2]], b: &[[f64; 2]]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Scenario(format!("trajectory lengths {} and {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(p, q)| (p[0] - q[0]).hypot(p[1] - q[1])).fold(f64::INFINITY, f64::min))
}

/// Proposals of agents other than `target` with confidence `> threshold`
/// whose min-distance to `target`'s proposal `mode` is `< max_distance`.
pub fn distance_proposal_grouping(
    set: &ProposalSet,
    target: usize,
    mode: usize,
    max_distance: f64,
    threshold: f64,
) -> Result<ProposalGroup> {
    let query = set.trajectory(target, mode);
    let mut group = ProposalGroup { member_features: Vec::new(), member_refs: Vec::new() };
    for i in (0..set.num_agents).filter(|&i| i != target) {
        for m in 0..set.modes {
            if set.confidence(i, m) > threshold && trajectory_min_distance(query, set.trajectory(i, m))? < max_distance {
                group.member_features.push(set.feature(i, m).to_vec());
                group.member_refs.push((i, m));
            }
        }
    }
    Ok(group)
}

#[derive(Clone, Debug)]
pub struct Refiner {
    cfg: ModelConfig,
    tqsa: AttentionBlock,
    pia: AttentionBlock,
    regression: Vec<String>,
    classification: Vec<String>,
}

impl Refiner {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let r = &cfg.refiner;
        let d = cfg.d();
        Ok(Self {
            cfg: cfg.clone(),
            tqsa: AttentionBlock::new("refiner.tqsa", d, r.heads, &cfg.phi_hidden, r.dropout)?,
            pia: AttentionBlock::new("refiner.pia", d, r.heads, &cfg.phi_hidden, r.dropout)?,
            regression: mlp_layers("refiner.regression", 2),
            classification: mlp_layers("refiner.classification", 2),
        })
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParameterStore, rng: &mut R) -> Result<()> {
        let d = self.cfg.d();
        let hidden = self.cfg.head_hidden;
        let f = self.cfg.future_steps;
        let m = self.cfg.modes();
        init_linear(store, "refiner.scene_embed", SCENE_INPUTS, d, rng)?;
        self.tqsa.init(store, &self.cfg.phi_hidden, rng)?;
        self.pia.init(store, &self.cfg.phi_hidden, rng)?;
        init_mlp(store, "refiner.regression", &[2 * d, hidden, 4 * f], rng)?;
        init_mlp(store, "refiner.classification", &[2 * d * m, hidden, m], rng)?;
        Ok(())
    }

    /// Name prefix of the last regression layer; zeroing it makes every
    /// refined mean equal its proposal.
    pub fn regression_output_layer(&self) -> &str {
        self.regression.last().expect("two layers")
    }

    pub fn tqsa(&self) -> &AttentionBlock {
        &self.tqsa
    }

    pub fn pia(&self) -> &AttentionBlock {
        &self.pia
    }

    pub fn embed_scene<'a>(&self, g: &mut Graph, store: &ParameterStore, scene: &'a [SceneVector]) -> Result<SceneEmbeddings<'a>> {
        let psi = embed_vectors(g, store, "refiner.scene_embed", scene.iter(), self.cfg.position_scale)?;
        Ok(SceneEmbeddings { psi, source: scene })
    }

    /// Refines every proposal of each agent in `targets`.
    pub fn refine(
        &self,
        g: &mut Graph,
        store: &ParameterStore,
        views: &AgentViews,
        proposals: &ProposerOutput,
        set: &ProposalSet,
        targets: &[usize],
    ) -> Result<Vec<RefinedOutput>> {
        let n = views.len();
        let modes = self.cfg.modes();
        let f = self.cfg.future_steps;
        let r = &self.cfg.refiner;
        let interaction_kv = if n > 1 { Some(self.pia.project_context(g, store, proposals.features)?) } else { None };
        let mut outputs = Vec::with_capacity(targets.len());
        for &t in targets {
            if t >= n {
                return Err(Error::AgentIndex { index: t, count: n });
            }
            let scene = &views.scenes[t];
            // Psi is folded into the key/value projections; rows stay aligned with `scene`
            let scene_kv = match scene_inputs(g, scene.iter(), self.cfg.position_scale)? {
                Some(x) => Some(self.tqsa.project_embedded(g, store, x, "refiner.scene_embed")?),
                None => None,
            };
            let own = g.slice_rows(proposals.trajectories, t * modes, modes)?;
            let (mut joint, mut scene_context, mut interaction_context) = (vec![], vec![], vec![]);
            let (mut pools, mut groups) = (vec![], vec![]);
            for m in 0..modes {
                let query = g.slice_rows(proposals.features, t * modes + m, 1)?;
                let waypoints: Vec<[f64; 2]> =
                    g.value(proposals.trajectories).row_slice(t * modes + m).chunks(2).map(|p| [p[0], p[1]]).collect();
                let pool = tubular_region_pooling(&waypoints, scene, r.tau, m);
                let tq = self.tqsa.forward_rows(g, store, query, scene_kv, &pool.member_indices)?;
                let group = distance_proposal_grouping(set, t, m, r.group_distance, r.confidence_threshold)?;
                let rows: Vec<usize> = group.member_refs.iter().map(|&(i, mm)| i * modes + mm).collect();
                let pi = self.pia.forward_rows(g, store, query, interaction_kv, &rows)?;
                joint.push(g.concat_cols(&[tq, pi])?);
                scene_context.push(tq);
                interaction_context.push(pi);
                pools.push(pool);
                groups.push(group);
            }
            let joint = if modes == 1 { joint[0] } else { g.concat_rows(&joint)? };
            let reg = mlp_forward(g, store, &self.regression, joint)?;
            let offsets = g.slice_cols(reg, 0, 2 * f)?;
            let means = g.add(own, offsets)?;
            let raw = g.slice_cols(reg, 2 * f, 2 * f)?;
            let sp = g.softplus(raw)?;
            let scales = g.add_scalar(sp, SCALE_FLOOR)?;
            let flat = g.reshape(joint, &[1, 2 * self.cfg.d() * modes])?;
            let logits = mlp_forward(g, store, &self.classification, flat)?;
            let confidences = g.softmax(logits)?;
            outputs.push(RefinedOutput {
                target: t,
                means,
                scales,
                confidences,
                scene_context,
                interaction_context,
                pools,
                groups,
            });
        }
        Ok(outputs)
    }
}
