#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rpred_core::config::{ModelConfig, RunConfig};
use rpred_core::synthgen::{generate_scenario, GeneratorConfig};
use rpred_core::{AgentKind, AgentTrack, MapElement, Pose2, Scenario, SceneVector, TrajState};

pub const PAST: usize = 6;
pub const FUTURE: usize = 5;

/// Tiny model: d = 8, two heads, three modes, five future steps.
pub fn tiny_model() -> ModelConfig {
    let mut c = ModelConfig::default();
    c.past_steps = PAST;
    c.future_steps = FUTURE;
    c.phi_hidden = vec![8];
    c.head_hidden = 8;
    c.proposer.d = 8;
    c.proposer.modes = 3;
    c.proposer.heads = 2;
    c.refiner.heads = 2;
    c
}

pub fn tiny_generator(seed: u64) -> GeneratorConfig {
    GeneratorConfig { rng_seed: seed, past_steps: PAST, future_steps: FUTURE, ..GeneratorConfig::default() }
}

pub fn tiny_run(seed: u64) -> RunConfig {
    let mut c = RunConfig { seed, model: tiny_model(), ..RunConfig::default() };
    c.synthgen = tiny_generator(seed);
    c.metrics.ks = vec![1, 3];
    c
}

pub fn generated(seed: u64, index: u64) -> Scenario {
    generate_scenario(&tiny_generator(seed), index).unwrap()
}

/// Hand-rolled scenario with `n` agents moving roughly along +x near the
/// origin and a sparse random scene.
pub fn random_scenario(seed: u64, n: usize, past: usize, future: usize) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kinds = [AgentKind::Vehicle, AgentKind::Pedestrian, AgentKind::Cyclist];
    let mut agents = Vec::new();
    for i in 0..n {
        let (x0, y0) = (rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
        let (vx, vy) = (rng.random_range(0.5..2.0), rng.random_range(-0.5..0.5));
        let kind = kinds[rng.random_range(0..3)];
        let step = |t: f64, rng: &mut ChaCha8Rng| {
            TrajState::new(x0 + vx * t + rng.random_range(-0.05..0.05), y0 + vy * t, kind)
        };
        let past_states = (0..past).map(|t| step(t as f64, &mut rng)).collect();
        let fut = (past..past + future).map(|t| step(t as f64, &mut rng)).collect();
        agents.push(AgentTrack::new(format!("a{i}"), past_states, Some(fut)).unwrap());
    }
    let attrs = [MapElement::LaneCenterline, MapElement::RoadBoundary, MapElement::Crosswalk];
    let scene = (0..12)
        .map(|_| SceneVector::new(rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0), attrs[rng.random_range(0..3)]))
        .collect();
    Scenario::new(format!("r{seed}"), scene, agents, Pose2::identity()).unwrap()
}

/// Unwraps a core result inside a numeric-only closure (grad checks).
pub fn num<T>(r: rpred_core::Result<T>) -> rpred_numeric::Result<T> {
    r.map_err(|e| match e {
        rpred_core::Error::Numeric(n) => n,
        other => panic!("{other}"),
    })
}

/// Copy of `store` restricted to names starting with one of `prefixes`.
pub fn subset(store: &rpred_numeric::ParameterStore, prefixes: &[&str]) -> rpred_numeric::ParameterStore {
    let mut out = rpred_numeric::ParameterStore::new(store.rng_seed());
    for (name, t) in store.iter() {
        if prefixes.iter().any(|p| name.starts_with(p)) {
            out.insert(name, t.clone()).unwrap();
        }
    }
    out
}

/// Same scenario with every world coordinate shifted by `(dx, dy)`.
pub fn translated(s: &Scenario, dx: f64, dy: f64) -> Scenario {
    let shift = |p: &TrajState| TrajState::new(p.x + dx, p.y + dy, p.semantic);
    let agents = s
        .agents
        .iter()
        .map(|a| AgentTrack::new(a.id.clone(), a.past.iter().map(shift).collect(), a.future.as_ref().map(|f| f.iter().map(shift).collect())).unwrap())
        .collect();
    let scene = s.scene.iter().map(|v| SceneVector::new(v.x + dx, v.y + dy, v.attribute)).collect();
    Scenario::new(s.id.clone(), scene, agents, s.frame).unwrap()
}

/// Overwrites every parameter with uniform noise in `[-a, a]`.
pub fn randomize(store: &mut rpred_numeric::ParameterStore, seed: u64, a: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (_, t) in store.iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-a..a));
    }
}

pub type Mat = Vec<Vec<f64>>;

pub fn mat(store: &rpred_numeric::ParameterStore, name: &str) -> Mat {
    let t = store.get(name).unwrap_or_else(|| panic!("missing {name}"));
    (0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect()
}

pub fn vecmat(x: &[f64], w: &Mat) -> Vec<f64> {
    let mut out = vec![0.0; w[0].len()];
    for (xi, row) in x.iter().zip(w) {
        for (o, wij) in out.iter_mut().zip(row) {
            *o += xi * wij;
        }
    }
    out
}

/// Gated cross-attention written out loop by loop, inference mode.
pub fn attention_oracle(store: &rpred_numeric::ParameterStore, prefix: &str, heads: usize, phi_layers: usize, f: &[f64], context: &[Vec<f64>]) -> Vec<f64> {
    if context.is_empty() {
        return f.to_vec();
    }
    let p = |s: &str| mat(store, &format!("{prefix}.{s}"));
    let d = f.len();
    let dk = d / heads;
    let q = vecmat(f, &p("wq"));
    let keys: Mat = context.iter().map(|c| vecmat(c, &p("wk"))).collect();
    let values: Mat = context.iter().map(|c| vecmat(c, &p("wv"))).collect();
    let mut attended = vec![0.0; d];
    for h in 0..heads {
        let cols = h * dk..(h + 1) * dk;
        let scores: Vec<f64> =
            keys.iter().map(|k| cols.clone().map(|j| q[j] * k[j]).sum::<f64>() / (dk as f64).sqrt()).collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        for (w, v) in exps.iter().zip(&values) {
            for j in cols.clone() {
                attended[j] += w / z * v[j];
            }
        }
    }
    let fi = vecmat(f, &p("w_input"));
    let ah = vecmat(&attended, &p("w_hidden"));
    let fg = vecmat(f, &p("w_gate"));
    let fused: Vec<f64> = (0..d)
        .map(|j| {
            let lambda = 1.0 / (1.0 + (-(fi[j] + ah[j])).exp());
            lambda * fg[j] + (1.0 - lambda) * attended[j]
        })
        .collect();
    let mean = fused.iter().sum::<f64>() / d as f64;
    let var = fused.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
    let (gain, bias) = (&p("norm.gain")[0], &p("norm.bias")[0]);
    let mut h: Vec<f64> = (0..d).map(|j| (fused[j] - mean) / (var + 1e-5).sqrt() * gain[j] + bias[j]).collect();
    for l in 0..phi_layers {
        let w = p(&format!("phi.{l}.weight"));
        let b = &p(&format!("phi.{l}.bias"))[0];
        h = vecmat(&h, &w).iter().zip(b).map(|(a, b)| a + b).collect();
        if l + 1 < phi_layers {
            h.iter_mut().for_each(|v| *v = v.max(0.0));
        }
    }
    f.iter().zip(&h).map(|(a, b)| a + b).collect()
}
