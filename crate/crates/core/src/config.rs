use serde::{Deserialize, Serialize};

use crate::metrics::MetricsConfig;
use crate::synthgen::GeneratorConfig;
use crate::training::TrainConfig;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProposerConfig {
    /// Embedding size shared by every feature in both stages.
    pub d: usize,
    /// Number of modes `M`.
    pub modes: usize,
    /// Stacked recurrent layers in the history encoder.
    pub history_depth: usize,
    /// Scene vectors strictly inside this radius feed the global scene context.
    pub scene_radius: f64,
    pub heads: usize,
    pub dropout: f64,
}

impl Default for ProposerConfig {
    fn default() -> Self {
        Self { d: 128, modes: 6, history_depth: 1, scene_radius: 50.0, heads: 4, dropout: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefinerConfig {
    /// Without the refiner the model is the proposal stage alone.
    pub enabled: bool,
    /// Tube radius around each proposal waypoint, meters.
    pub tau: f64,
    /// Trajectory min-distance threshold for proposal grouping, meters.
    pub group_distance: f64,
    /// Neighbor proposals need a confidence strictly above this.
    pub confidence_threshold: f64,
    pub heads: usize,
    pub dropout: f64,
}

impl Default for RefinerConfig {
    fn default() -> Self {
        Self { enabled: true, tau: 20.0, group_distance: 10.0, confidence_threshold: 0.1, heads: 4, dropout: 0.1 }
    }
}

/// Architecture of the whole two-stage model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub past_steps: usize,
    pub future_steps: usize,
    /// Coordinates are multiplied by this before any learned projection.
    pub position_scale: f64,
    /// Hidden widths of the `phi` MLP inside every attention block.
    pub phi_hidden: Vec<usize>,
    /// Hidden width of decoder, regression and classification MLPs.
    pub head_hidden: usize,
    pub proposer: ProposerConfig,
    pub refiner: RefinerConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            past_steps: 20,
            future_steps: 30,
            position_scale: 0.1,
            phi_hidden: vec![128],
            head_hidden: 128,
            proposer: ProposerConfig::default(),
            refiner: RefinerConfig::default(),
        }
    }
}

impl ModelConfig {
    /// Desk-scale profile: embedding 64 instead of 128.
    pub fn desk() -> Self {
        let mut c = Self::default();
        c.proposer.d = 64;
        c.phi_hidden = vec![64];
        c.head_hidden = 64;
        c
    }

    pub fn d(&self) -> usize {
        self.proposer.d
    }

    pub fn modes(&self) -> usize {
        self.proposer.modes
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let p = &self.proposer;
        let r = &self.refiner;
        if self.past_steps < 2 || self.future_steps < 1 {
            return bad("need past_steps >= 2 and future_steps >= 1".into());
        }
        if p.d < 2 || p.modes < 1 || p.history_depth < 1 {
            return bad("need d >= 2, modes >= 1, history_depth >= 1".into());
        }
        if p.heads == 0 || !p.d.is_multiple_of(p.heads) || r.heads == 0 || !p.d.is_multiple_of(r.heads) {
            return bad(format!("d = {} must be divisible by the head counts", p.d));
        }
        if !(0.0..1.0).contains(&p.dropout) || !(0.0..1.0).contains(&r.dropout) {
            return bad("dropout must lie in [0, 1)".into());
        }
        if !(r.tau > 0.0) || !(r.group_distance > 0.0) || !(0.0..1.0).contains(&r.confidence_threshold) {
            return bad("need tau > 0, group_distance > 0, 0 <= confidence_threshold < 1".into());
        }
        if !(self.position_scale > 0.0) || self.head_hidden == 0 || self.phi_hidden.contains(&0) {
            return bad("position_scale and hidden widths must be positive".into());
        }
        Ok(())
    }
}

/// Every knob of a run, one section per module.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed: drives data generation, initialisation, shuffling and dropout.
    pub seed: u64,
    pub synthgen: GeneratorConfig,
    pub model: ModelConfig,
    pub training: TrainConfig,
    pub metrics: MetricsConfig,
}


impl RunConfig {
    /// Smaller model and larger batches for quick runs.
    pub fn desk() -> Self {
        let mut c = Self { model: ModelConfig::desk(), ..Self::default() };
        c.training.batch_size = 64;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.synthgen.validate()?;
        self.model.validate()?;
        self.training.validate()?;
        if self.model.past_steps != self.synthgen.past_steps || self.model.future_steps != self.synthgen.future_steps {
            return Err(Error::Config("model and generator disagree on past/future steps".into()));
        }
        Ok(())
    }

    /// Generator settings with the master seed applied.
    pub fn generator(&self) -> GeneratorConfig {
        GeneratorConfig { rng_seed: self.seed, ..self.synthgen.clone() }
    }
}
