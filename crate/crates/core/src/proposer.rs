//! First stage: encodes every agent and emits `M` trajectory proposals,
//! their confidences and the proposal features the refiner queries with.
//!
//! Per agent, in its own frame: a GRU over past displacements, cross-attention
//! onto nearby scene vectors, cross-attention onto the other agents' history
//! features, then `M` mode branches `f^m = g + relu(g W_m + b_m)`. Each
//! branch has its own decoder MLP emitting per-step offsets (integrated into
//! a trajectory) and Laplace scales; a shared head scores the branches.

use rand::Rng;
use rpred_numeric::nn::{init_linear, init_matrix, init_mlp, linear, mlp_forward, mlp_layers};
use rpred_numeric::{Graph, ParameterStore, Tensor, Var};

use crate::attention::AttentionBlock;
use crate::config::ModelConfig;
use crate::scenario::{AgentKind, MapElement, Pose2, SceneVector, TrajState};
use crate::views::AgentViews;
use crate::{Error, Result};

/// Inputs per scene vector: scaled position and a one-hot attribute.
pub const SCENE_INPUTS: usize = 2 + MapElement::COUNT;
const HISTORY_INPUTS: usize = 2 + AgentKind::COUNT;
const RELATIVE_INPUTS: usize = 4;
/// Lower bound added to every softplus scale.
pub const SCALE_FLOOR: f64 = 1e-3;

/// Graph handles for one proposer pass. Rows of the per-mode matrices are
/// agent-major: row `i * M + m` is mode `m` of agent `i`.
#[derive(Clone, Copy, Debug)]
pub struct ProposerOutput {
    /// `N x d` history features.
    pub history: Var,
    /// `N*M x 2F`, flattened `[x0, y0, x1, y1, ...]`, each agent in its own frame.
    pub trajectories: Var,
    pub scales: Var,
    /// `N x M`.
    pub confidences: Var,
    /// `N*M x d`.
    pub features: Var,
}

/// Plain-value proposals for all agents, trajectories in the scenario's
/// common frame.
#[derive(Clone, Debug, PartialEq)]
pub struct ProposalSet {
    pub num_agents: usize,
    pub modes: usize,
    pub future_steps: usize,
    pub d: usize,
    trajectories: Vec<[f64; 2]>,
    confidences: Vec<f64>,
    features: Vec<f64>,
}

impl ProposalSet {
    /// Builds a set from raw parts (`N*M*F` points, `N*M` confidences,
    /// `N*M*d` features, all agent-major).
    pub fn new(
        num_agents: usize,
        modes: usize,
        future_steps: usize,
        trajectories: Vec<[f64; 2]>,
        confidences: Vec<f64>,
        features: Vec<f64>,
    ) -> Result<Self> {
        let nm = num_agents * modes;
        if modes == 0 || future_steps == 0 || trajectories.len() != nm * future_steps || confidences.len() != nm {
            return Err(Error::Scenario(format!(
                "proposal set of {num_agents} agents x {modes} modes x {future_steps} steps has {} points and {} confidences",
                trajectories.len(),
                confidences.len()
            )));
        }
        if nm == 0 || !features.len().is_multiple_of(nm) {
            return Err(Error::Scenario(format!("{} feature values for {nm} proposals", features.len())));
        }
        let d = features.len() / nm;
        Ok(Self { num_agents, modes, future_steps, d, trajectories, confidences, features })
    }

    pub(crate) fn from_graph(g: &Graph, out: &ProposerOutput, poses: &[Pose2], modes: usize) -> Result<Self> {
        let n = poses.len();
        let traj = g.value(out.trajectories);
        let f = traj.cols() / 2;
        let mut trajectories = Vec::with_capacity(n * modes * f);
        for (i, pose) in poses.iter().enumerate() {
            for m in 0..modes {
                for p in traj.row_slice(i * modes + m).chunks(2) {
                    let (x, y) = pose.to_parent(p[0], p[1]);
                    trajectories.push([x, y]);
                }
            }
        }
        let confidences = g.value(out.confidences).data().to_vec();
        let features = g.value(out.features).data().to_vec();
        Self::new(n, modes, f, trajectories, confidences, features)
    }

    pub fn trajectory(&self, agent: usize, mode: usize) -> &[[f64; 2]] {
        let start = (agent * self.modes + mode) * self.future_steps;
        &self.trajectories[start..start + self.future_steps]
    }

    pub fn confidence(&self, agent: usize, mode: usize) -> f64 {
        self.confidences[agent * self.modes + mode]
    }

    pub fn confidences(&self, agent: usize) -> &[f64] {
        &self.confidences[agent * self.modes..(agent + 1) * self.modes]
    }

    pub fn feature(&self, agent: usize, mode: usize) -> &[f64] {
        let start = (agent * self.modes + mode) * self.d;
        &self.features[start..start + self.d]
    }
}

#[derive(Clone, Debug)]
pub struct Proposer {
    cfg: ModelConfig,
    scene_attn: AttentionBlock,
    interaction_attn: AttentionBlock,
    decoders: Vec<Vec<String>>,
    confidence: Vec<String>,
}

impl Proposer {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let p = &cfg.proposer;
        Ok(Self {
            cfg: cfg.clone(),
            scene_attn: AttentionBlock::new("proposer.scene_attn", p.d, p.heads, &cfg.phi_hidden, p.dropout)?,
            interaction_attn: AttentionBlock::new("proposer.interaction_attn", p.d, p.heads, &cfg.phi_hidden, p.dropout)?,
            decoders: (0..p.modes).map(|m| mlp_layers(&format!("proposer.decoder.{m}"), 2)).collect(),
            confidence: mlp_layers("proposer.confidence", 2),
        })
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParameterStore, rng: &mut R) -> Result<()> {
        let d = self.cfg.d();
        let hidden = self.cfg.head_hidden;
        let f = self.cfg.future_steps;
        for layer in 0..self.cfg.proposer.history_depth {
            let fan_in = if layer == 0 { HISTORY_INPUTS } else { d };
            init_matrix(store, &format!("proposer.history.{layer}.w_x"), fan_in, 3 * d, rng)?;
            init_matrix(store, &format!("proposer.history.{layer}.w_h"), d, 3 * d, rng)?;
            store.insert(format!("proposer.history.{layer}.bias"), Tensor::zeros(&[1, 3 * d])?)?;
        }
        init_linear(store, "proposer.scene_embed", SCENE_INPUTS, d, rng)?;
        init_linear(store, "proposer.relative_embed", RELATIVE_INPUTS, d, rng)?;
        self.scene_attn.init(store, &self.cfg.phi_hidden, rng)?;
        self.interaction_attn.init(store, &self.cfg.phi_hidden, rng)?;
        init_linear(store, "proposer.modes", d, self.cfg.modes() * d, rng)?;
        for m in 0..self.cfg.modes() {
            init_mlp(store, &format!("proposer.decoder.{m}"), &[d, hidden, 4 * f], rng)?;
        }
        init_mlp(store, "proposer.confidence", &[d, hidden, 1], rng)?;
        Ok(())
    }

    /// Encodes a batch of histories, each already in its own agent frame,
    /// into an `N x d` matrix (one final GRU state per row).
    pub fn encode_history(&self, g: &mut Graph, store: &ParameterStore, pasts: &[&[TrajState]]) -> Result<Var> {
        let t = self.cfg.past_steps;
        let d = self.cfg.d();
        let n = pasts.len();
        if n == 0 {
            return Err(Error::Empty("history batch"));
        }
        if let Some(p) = pasts.iter().find(|p| p.len() < t) {
            return Err(Error::Scenario(format!("history of {} steps, need {t}", p.len())));
        }
        let steps = t - 1;
        // step-major rows: row s * n + i
        let mut rows = Vec::with_capacity(steps * n * HISTORY_INPUTS);
        for s in 0..steps {
            for past in pasts {
                let past = &past[past.len() - t..];
                let (a, b) = (&past[s], &past[s + 1]);
                let mut one_hot = [0.0; AgentKind::COUNT];
                one_hot[b.semantic.code() as usize] = 1.0;
                rows.extend_from_slice(&[b.x - a.x, b.y - a.y]);
                rows.extend_from_slice(&one_hot);
            }
        }
        let mut input = g.constant(Tensor::new(&[steps * n, HISTORY_INPUTS], rows)?)?;
        let mut last = input;
        for layer in 0..self.cfg.proposer.history_depth {
            let w_x = g.param(store, &format!("proposer.history.{layer}.w_x"))?;
            let w_h = g.param(store, &format!("proposer.history.{layer}.w_h"))?;
            let bias = g.param(store, &format!("proposer.history.{layer}.bias"))?;
            let xw = g.matmul(input, w_x)?;
            let xw = g.add_row(xw, bias)?;
            let mut h = g.constant(Tensor::zeros(&[n, d])?)?;
            let mut states = Vec::with_capacity(steps);
            for s in 0..steps {
                let x = g.slice_rows(xw, s * n, n)?;
                let hu = g.matmul(h, w_h)?;
                let (xz, xr, xn) = (g.slice_cols(x, 0, d)?, g.slice_cols(x, d, d)?, g.slice_cols(x, 2 * d, d)?);
                let (hz, hr, hn) = (g.slice_cols(hu, 0, d)?, g.slice_cols(hu, d, d)?, g.slice_cols(hu, 2 * d, d)?);
                let z = g.add(xz, hz)?;
                let z = g.sigmoid(z)?;
                let r = g.add(xr, hr)?;
                let r = g.sigmoid(r)?;
                let rh = g.mul(r, hn)?;
                let cand = g.add(xn, rh)?;
                let cand = g.tanh(cand)?;
                // h' = (1 - z) * cand + z * h
                let diff = g.sub(h, cand)?;
                let keep = g.mul(z, diff)?;
                h = g.add(cand, keep)?;
                states.push(h);
            }
            input = g.concat_rows(&states)?;
            last = h;
        }
        Ok(last)
    }

    fn in_radius<'a>(&self, scene: &'a [SceneVector]) -> impl Iterator<Item = &'a SceneVector> {
        let radius = self.cfg.proposer.scene_radius;
        scene.iter().filter(move |v| v.x.hypot(v.y) < radius)
    }

    /// Embeds the scene vectors strictly inside the scene radius; `None`
    /// when there are none.
    pub fn encode_scene_global(&self, g: &mut Graph, store: &ParameterStore, scene: &[SceneVector]) -> Result<Option<Var>> {
        embed_vectors(g, store, "proposer.scene_embed", self.in_radius(scene), self.cfg.position_scale)
    }

    /// Runs the proposal stage on every agent of `views`.
    pub fn forward(&self, g: &mut Graph, store: &ParameterStore, views: &AgentViews) -> Result<ProposerOutput> {
        let n = views.len();
        let d = self.cfg.d();
        let modes = self.cfg.modes();
        let f = self.cfg.future_steps;
        let scale = self.cfg.position_scale;
        let pasts: Vec<&[TrajState]> = views.pasts.iter().map(Vec::as_slice).collect();
        let history = self.encode_history(g, store, &pasts)?;

        let mut fused = Vec::with_capacity(n);
        for i in 0..n {
            let hi = g.slice_rows(history, i, 1)?;
            // the embedding is folded into the key/value projections
            let scene = match scene_inputs(g, self.in_radius(&views.scenes[i]), scale)? {
                Some(x) => Some(self.scene_attn.project_embedded(g, store, x, "proposer.scene_embed")?),
                None => None,
            };
            let s = self.scene_attn.forward_projected(g, store, hi, scene)?;
            let context = if n > 1 {
                let others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
                let mut rel = Vec::with_capacity(others.len() * RELATIVE_INPUTS);
                for &j in &others {
                    let p = views.poses[i].relative(&views.poses[j]);
                    rel.extend_from_slice(&[p.x * scale, p.y * scale, p.heading.cos(), p.heading.sin()]);
                }
                let rel = g.constant(Tensor::new(&[others.len(), RELATIVE_INPUTS], rel)?)?;
                let rel = linear(g, store, "proposer.relative_embed", rel)?;
                let hj = g.gather_rows(history, &others)?;
                Some(g.add(hj, rel)?)
            } else {
                None
            };
            fused.push(self.interaction_attn.forward(g, store, s, context)?);
        }
        let base = if n == 1 { fused[0] } else { g.concat_rows(&fused)? };

        let branches = linear(g, store, "proposer.modes", base)?;
        let branches = g.relu(branches)?;
        let cumulative = g.constant(cumulative_matrix(f))?;
        let (mut feats, mut trajs, mut scales, mut logits) = (vec![], vec![], vec![], vec![]);
        for m in 0..modes {
            let delta = if modes == 1 { branches } else { g.slice_cols(branches, m * d, d)? };
            let fm = g.add(base, delta)?;
            let out = mlp_forward(g, store, &self.decoders[m], fm)?;
            let offsets = g.slice_cols(out, 0, 2 * f)?;
            let raw_scale = g.slice_cols(out, 2 * f, 2 * f)?;
            trajs.push(g.matmul(offsets, cumulative)?);
            let sp = g.softplus(raw_scale)?;
            scales.push(g.add_scalar(sp, SCALE_FLOOR)?);
            logits.push(mlp_forward(g, store, &self.confidence, fm)?);
            feats.push(fm);
        }
        // mode-major (m * n + i) to agent-major (i * M + m)
        let order: Vec<usize> = (0..n * modes).map(|r| (r % modes) * n + r / modes).collect();
        let agent_major = |g: &mut Graph, parts: &[Var]| -> Result<Var> {
            let stacked = if parts.len() == 1 { parts[0] } else { g.concat_rows(parts)? };
            Ok(g.gather_rows(stacked, &order)?)
        };
        let features = agent_major(g, &feats)?;
        let trajectories = agent_major(g, &trajs)?;
        let scales = agent_major(g, &scales)?;
        let logits = if modes == 1 { logits[0] } else { g.concat_cols(&logits)? };
        let confidences = g.softmax(logits)?;
        Ok(ProposerOutput { history, trajectories, scales, confidences, features })
    }

    /// Inference-mode proposals for every agent, in the common frame.
    pub fn propose(&self, store: &ParameterStore, views: &AgentViews) -> Result<ProposalSet> {
        let mut g = Graph::eval();
        let out = self.forward(&mut g, store, views)?;
        ProposalSet::from_graph(&g, &out, &views.poses, self.cfg.modes())
    }
}

/// Raw per-vector inputs (scaled position, one-hot attribute) as an
/// `L x SCENE_INPUTS` constant; `None` for an empty input.
pub(crate) fn scene_inputs<'a>(
    g: &mut Graph,
    vectors: impl Iterator<Item = &'a SceneVector>,
    position_scale: f64,
) -> Result<Option<Var>> {
    let mut rows = Vec::new();
    for v in vectors {
        let mut one_hot = [0.0; MapElement::COUNT];
        one_hot[v.attribute.code() as usize] = 1.0;
        rows.extend_from_slice(&[v.x * position_scale, v.y * position_scale]);
        rows.extend_from_slice(&one_hot);
    }
    if rows.is_empty() {
        return Ok(None);
    }
    let n = rows.len() / SCENE_INPUTS;
    Ok(Some(g.constant(Tensor::new(&[n, SCENE_INPUTS], rows)?)?))
}

/// Linear embedding of scene vectors via `{prefix}.weight/bias`.
pub(crate) fn embed_vectors<'a>(
    g: &mut Graph,
    store: &ParameterStore,
    prefix: &str,
    vectors: impl Iterator<Item = &'a SceneVector>,
    position_scale: f64,
) -> Result<Option<Var>> {
    match scene_inputs(g, vectors, position_scale)? {
        Some(x) => Ok(Some(linear(g, store, prefix, x)?)),
        None => Ok(None),
    }
}

/// `2F x 2F` matrix turning interleaved per-step offsets into positions.
fn cumulative_matrix(f: usize) -> Tensor {
    let n = 2 * f;
    let mut data = vec![0.0; n * n];
    for k in 0..n {
        for j in (k..n).step_by(2) {
            data[k * n + j] = 1.0;
        }
    }
    Tensor::new(&[n, n], data).expect("square")
}
