//! One line per acceptance criterion. Criterion 8 trains six desk-scale
//! models and dominates the runtime; set `RPRED_ACCEPTANCE_SKIP_SLOW=1` to
//! report it as skipped.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rpred_core::attention::AttentionBlock;
use rpred_core::config::RunConfig;
use rpred_core::metrics::{brier_fde, evaluate, min_fde, EvalReport, MetricsConfig};
use rpred_core::model::{Model, RefineTargets};
use rpred_core::proposer::ProposalSet;
use rpred_core::refiner::{distance_proposal_grouping, tubular_region_pooling};
use rpred_core::synthgen::generate_range;
use rpred_core::training::{classification_loss, laplace_nll, total_loss, Trainer};
use rpred_core::{MapElement, Scenario, SceneVector};
use rpred_numeric::{grad_check, grad_check_with, Graph, ParameterStore, Tensor, Var};

type Outcome = Result<String, String>;

fn check(cond: bool, ok: String, bad: String) -> Outcome {
    if cond { Ok(ok) } else { Err(bad) }
}

fn within(label: &str, start: Instant, limit: Duration) -> Outcome {
    let t = start.elapsed();
    check(t < limit, format!("{label} in {:.1}s", t.as_secs_f64()), format!("{label} took {:.1}s, limit {}s", t.as_secs_f64(), limit.as_secs()))
}

fn attr(code: usize) -> MapElement {
    [MapElement::LaneCenterline, MapElement::RoadBoundary, MapElement::Crosswalk][code % 3]
}

fn pooling() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for case in 0..200 {
        let f = rng.random_range(1..15);
        let proposal: Vec<[f64; 2]> = (0..f).map(|_| [rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0)]).collect();
        let scene: Vec<SceneVector> = (0..rng.random_range(0..60))
            .map(|i| SceneVector::new(rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0), attr(i)))
            .collect();
        let tau = rng.random_range(0.5..25.0);
        let expected: Vec<usize> = (0..scene.len())
            .filter(|&l| proposal.iter().any(|w| ((w[0] - scene[l].x).powi(2) + (w[1] - scene[l].y).powi(2)).sqrt() < tau))
            .collect();
        let got = tubular_region_pooling(&proposal, &scene, tau, 0).member_indices;
        if got != expected {
            return Err(format!("instance {case}: {got:?} vs {expected:?}"));
        }
    }
    within("200 instances exact", start, Duration::from_secs(5))
}

fn grouping() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let (t_conf, d_max) = (0.1, 10.0);
    for case in 0..200 {
        let (n, m, f) = (rng.random_range(1..5), rng.random_range(1..6), rng.random_range(1..8));
        let mut conf = Vec::new();
        for _ in 0..n {
            let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0f64).powi(2) + 1e-9).collect();
            let z: f64 = raw.iter().sum();
            conf.extend(raw.iter().map(|c| c / z));
        }
        let mut traj = Vec::new();
        for _ in 0..n * m {
            let (x0, y0, vx, vy) = (rng.random_range(-15.0..15.0), rng.random_range(-15.0..15.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            traj.extend((0..f).map(|t| [x0 + vx * t as f64, y0 + vy * t as f64]));
        }
        let feats: Vec<f64> = (0..n * m * 2).map(|i| i as f64).collect();
        let set = ProposalSet::new(n, m, f, traj.clone(), conf.clone(), feats).unwrap();
        let (target, mode) = (rng.random_range(0..n), rng.random_range(0..m));
        let at = |i: usize, k: usize, t: usize| traj[(i * m + k) * f + t];
        let mut expected = Vec::new();
        for i in 0..n {
            if i == target {
                continue;
            }
            for k in 0..m {
                let mut dmin = f64::INFINITY;
                for t in 0..f {
                    let (p, q) = (at(target, mode, t), at(i, k, t));
                    dmin = dmin.min(((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt());
                }
                if conf[i * m + k] > t_conf && dmin < d_max {
                    expected.push((i, k));
                }
            }
        }
        let got = distance_proposal_grouping(&set, target, mode, d_max, t_conf).unwrap().member_refs;
        if got != expected {
            return Err(format!("instance {case}: {got:?} vs {expected:?}"));
        }
    }
    within("200 instances exact", start, Duration::from_secs(5))
}

fn attention() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut worst = 0.0f64;
    for case in 0..50u64 {
        let heads = [1, 2, 4][case as usize % 3];
        let d = (heads * rng.random_range(1..=4)).clamp(2, 16);
        let k = rng.random_range(0..=8);
        let block = AttentionBlock::new("blk", d, heads, &[d], 0.1).unwrap();
        let mut store = ParameterStore::new(case);
        block.init(&mut store, &[d], &mut ChaCha8Rng::seed_from_u64(case)).unwrap();
        common::randomize(&mut store, case + 1000, 0.5);
        let f: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ctx: Vec<Vec<f64>> = (0..k).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let mut g = Graph::eval();
        let q = g.constant(Tensor::row(&f).unwrap()).unwrap();
        let c = if k == 0 { None } else { Some(g.constant(Tensor::from_rows(&ctx).unwrap()).unwrap()) };
        let out = block.forward(&mut g, &store, q, c).unwrap();
        let expected = common::attention_oracle(&store, "blk", heads, 2, &f, &ctx);
        for (a, b) in g.value(out).data().iter().zip(&expected) {
            worst = worst.max((a - b).abs());
        }
    }
    check(worst < 1e-12, format!("max abs diff {worst:.2e} over 50 instances"), format!("max abs diff {worst:.2e}"))
}

fn store_with(entries: &[(&str, Tensor)]) -> ParameterStore {
    let mut s = ParameterStore::new(0);
    for (name, t) in entries {
        s.insert(*name, t.clone()).unwrap();
    }
    s
}

fn weighted_sum(g: &mut Graph, v: Var) -> rpred_numeric::Result<Var> {
    let dims = g.shape(v).dims().to_vec();
    let n = g.shape(v).numel();
    let w = g.constant(Tensor::new(&dims, (0..n).map(|i| 0.3 + 0.17 * i as f64 - 0.01 * (i * i) as f64).collect())?)?;
    let p = g.mul(v, w)?;
    g.sum(p)
}

/// Entries bounded away from the kinks of relu, abs and clamp.
fn off_kink(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| if rng.random::<bool>() { rng.random_range(0.1..2.0) } else { -rng.random_range(0.1..2.0) }).collect()
}

type Unary = fn(&mut Graph, Var) -> rpred_numeric::Result<Var>;
type Binary = fn(&mut Graph, Var, Var) -> rpred_numeric::Result<Var>;

fn op_gradients() -> Result<f64, String> {
    let unary: Vec<(&str, Unary)> = vec![
        ("sigmoid", |g, x| g.sigmoid(x)),
        ("tanh", |g, x| g.tanh(x)),
        ("softplus", |g, x| g.softplus(x)),
        ("exp", |g, x| g.exp(x)),
        ("abs", |g, x| g.abs(x)),
        ("relu", |g, x| g.relu(x)),
        ("softmax", |g, x| g.softmax(x)),
        ("transpose", |g, x| g.transpose(x)),
        ("cumsum_rows", |g, x| g.cumsum_rows(x)),
        ("scale", |g, x| g.scale(x, -1.5)),
        ("add_scalar", |g, x| g.add_scalar(x, 0.7)),
        ("one_minus", |g, x| g.one_minus(x)),
        ("slice_cols", |g, x| g.slice_cols(x, 1, 2)),
        ("slice_rows", |g, x| g.slice_rows(x, 1, 2)),
        ("gather_rows", |g, x| g.gather_rows(x, &[2, 0, 2])),
        ("reshape", |g, x| g.reshape(x, &[2, 6])),
        ("sum", |g, x| g.sum(x)),
        ("mean", |g, x| g.mean(x)),
        ("select", |g, x| g.select(x, 7)),
        ("log", |g, x| {
            let a = g.exp(x)?;
            g.log(a)
        }),
        ("clamp_min", |g, x| g.clamp_min(x, 0.05)),
        ("concat_cols", |g, x| {
            let t = g.tanh(x)?;
            g.concat_cols(&[x, t])
        }),
        ("concat_rows", |g, x| {
            let t = g.sigmoid(x)?;
            g.concat_rows(&[t, x])
        }),
    ];
    let binary: Vec<(&str, Binary)> = vec![
        ("add", |g, a, b| g.add(a, b)),
        ("sub", |g, a, b| g.sub(a, b)),
        ("mul", |g, a, b| g.mul(a, b)),
        ("div", |g, a, b| {
            let d = g.exp(b)?;
            g.div(a, d)
        }),
        ("matmul", |g, a, b| {
            let bt = g.transpose(b)?;
            g.matmul(a, bt)
        }),
        ("add_row", |g, a, b| {
            let row = g.slice_rows(b, 0, 1)?;
            g.add_row(a, row)
        }),
        ("layer_norm", |g, a, b| {
            let gain = g.slice_rows(b, 0, 1)?;
            let bias = g.slice_rows(b, 1, 1)?;
            g.layer_norm(a, gain, bias)
        }),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let x = Tensor::new(&[3, 4], off_kink(&mut rng, 12)).unwrap();
        let y = Tensor::new(&[3, 4], off_kink(&mut rng, 12)).unwrap();
        for (name, f) in &unary {
            let store = store_with(&[("x", x.clone())]);
            let err = grad_check(|g, s| {
                let v = g.param(s, "x")?;
                let out = f(g, v)?;
                weighted_sum(g, out)
            }, &store, 1e-6)
            .map_err(|e| format!("{name}: {e}"))?;
            if err >= 1e-5 {
                return Err(format!("{name}: {err:.2e}"));
            }
            worst = worst.max(err);
        }
        for (name, f) in &binary {
            let store = store_with(&[("a", x.clone()), ("b", y.clone())]);
            let err = grad_check(|g, s| {
                let (a, b) = (g.param(s, "a")?, g.param(s, "b")?);
                let out = f(g, a, b)?;
                weighted_sum(g, out)
            }, &store, 1e-6)
            .map_err(|e| format!("{name}: {e}"))?;
            if err >= 1e-5 {
                return Err(format!("{name}: {err:.2e}"));
            }
            worst = worst.max(err);
        }
        let store = store_with(&[("x", x.clone())]);
        let r = grad_check_with(|g, s| {
            let v = g.param(s, "x")?;
            let out = g.dropout(v, 0.3)?;
            weighted_sum(g, out)
        }, &store, 1e-6, true, 7)
        .map_err(|e| format!("dropout: {e}"))?;
        if r.max_rel_error >= 1e-5 {
            return Err(format!("dropout: {:.2e}", r.max_rel_error));
        }
        worst = worst.max(r.max_rel_error);
    }
    Ok(worst)
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let ops = op_gradients()?;
    let mut cfg = common::tiny_model();
    cfg.refiner.group_distance = 50.0;
    cfg.refiner.confidence_threshold = 0.0;
    let model = Model::new(&cfg).unwrap();
    let step = 1e-6;
    for seed in 0..20 {
        let scenario = common::random_scenario(seed, 2, common::PAST, common::FUTURE);
        let store = model.init(seed).unwrap();
        let report = grad_check_with(|g, p| {
            let out = common::num(model.forward(g, p, &scenario, RefineTargets::All))?;
            let (loss, _) = common::num(total_loss(g, &out, Default::default()))?;
            Ok(loss)
        }, &store, step, false, 0)
        .map_err(|e| e.to_string())?;
        // retry on another instance if a ReLU input sits within reach of the probe
        if report.relu_margin <= 10.0 * step {
            continue;
        }
        let err = report.max_rel_error;
        let ok = ops < 1e-5 && err < 1e-4;
        check(ok, String::new(), format!("full graph {err:.2e} at {}[{}]", report.worst_param, report.worst_index))?;
        return within(&format!("ops max {ops:.2e}, full two-stage graph {err:.2e} over {} entries", report.entries_checked), start, Duration::from_secs(60));
    }
    Err("no scenario with a safe ReLU margin".into())
}

fn anchors() -> Outcome {
    let gt = [[1.0, -2.0], [0.5, 3.0], [4.0, 4.0], [-1.0, 0.0], [2.0, 2.0]];
    let nll = laplace_nll(&gt, &[[1.0, 1.0]; 5], &gt).unwrap();
    let e1 = (nll - 2.0 * 2f64.ln()).abs();
    let mut e2 = 0.0f64;
    for m in [2usize, 3, 6, 10] {
        let ce = classification_loss(&vec![1.0 / m as f64; m], m / 2);
        e2 = e2.max((ce - (m as f64).ln()).abs());
    }
    let preds = vec![gt.iter().map(|p| [p[0] + 1.0, p[1]]).collect::<Vec<_>>(), gt.iter().map(|p| [p[0], p[1] + 0.3]).collect(), gt.iter().map(|p| [p[0] - 2.0, p[1]]).collect()];
    let conf = [0.0, 1.0, 0.0];
    let brier = brier_fde(&preds, &conf, &gt, 3).unwrap();
    let fde = min_fde(&preds, &conf, &gt, 3).unwrap();
    let ok = e1 < 1e-9 && e2 < 1e-9 && brier == fde;
    check(ok, format!("laplace {e1:.1e}, CE {e2:.1e}, brier == minFDE"), format!("laplace {e1:.1e}, CE {e2:.1e}, brier {brier} vs {fde}"))
}

fn anchoring() -> Outcome {
    let model = Model::new(&common::tiny_model()).unwrap();
    let mut store = model.init(105).unwrap();
    let last = model.refiner().regression_output_layer().to_string();
    for p in ["weight", "bias"] {
        store.get_mut(&format!("{last}.{p}")).unwrap().data_mut().fill(0.0);
    }
    for idx in 0..20 {
        let s = common::generated(105, idx);
        let pred = model.predict(&store, &s).unwrap();
        let refined = pred.refined.as_ref().ok_or("refiner disabled")?;
        let same = refined.means.iter().flatten().zip(pred.proposals.iter().flatten())
            .all(|(a, b)| a[0].to_bits() == b[0].to_bits() && a[1].to_bits() == b[1].to_bits());
        if !same {
            return Err(format!("scenario {idx} differs"));
        }
    }
    Ok("20 scenarios bit-exact".into())
}

fn overfit(reports: &mut Vec<EvalReport>) -> Outcome {
    let start = Instant::now();
    let mut cfg = RunConfig { seed: 106, ..RunConfig::default() };
    cfg.model.proposer.d = 32;
    cfg.model.phi_hidden = vec![32];
    cfg.model.head_hidden = 64;
    cfg.model.proposer.dropout = 0.0;
    cfg.model.refiner.dropout = 0.0;
    cfg.training.lr = 1e-3;
    let data = generate_range(&cfg.generator(), 0, 8).unwrap();
    let mut trainer = Trainer::new(&cfg).unwrap();
    let batch: Vec<&Scenario> = data.iter().collect();
    let mut at10 = None;
    for step in 1..=500 {
        trainer.step(&batch, cfg.training.lr).map_err(|e| e.to_string())?;
        if step == 10 {
            let r = trainer.evaluate(&data).unwrap();
            at10 = Some(r.get(6).unwrap().min_ade);
            reports.push(r);
        }
    }
    let end = trainer.evaluate(&data).unwrap();
    let (a, b) = (at10.unwrap(), end.get(6).unwrap().min_ade);
    reports.push(end);
    let drop = 1.0 - b / a;
    check(drop >= 0.5, String::new(), format!("minADE6 {a:.3} -> {b:.3} ({:.0}% drop)", drop * 100.0))?;
    within(&format!("minADE6 {a:.3} -> {b:.3} ({:.0}% drop)", drop * 100.0), start, Duration::from_secs(600))
}

fn refinement(reports: &mut Vec<EvalReport>) -> Outcome {
    if std::env::var_os("RPRED_ACCEPTANCE_SKIP_SLOW").is_some() {
        return Err("skipped".into());
    }
    let start = Instant::now();
    let mut gains = Vec::new();
    let mut detail = Vec::new();
    let mut refined_ok = true;
    for seed in 0..3u64 {
        let mut cfg = RunConfig { seed, ..RunConfig::default() };
        cfg.model.proposer.d = 32;
        cfg.model.phi_hidden = vec![32];
        cfg.model.head_hidden = 64;
        cfg.training.batch_size = 8;
        cfg.training.epochs = 20;
        let gen = cfg.generator();
        let train = generate_range(&gen, 0, 2000).unwrap();
        let val = generate_range(&gen, 2000, 200).unwrap();
        let mut fde = [0.0; 2];
        for (slot, enabled) in [(0, true), (1, false)] {
            let mut c = cfg.clone();
            c.model.refiner.enabled = enabled;
            let mut trainer = Trainer::new(&c).unwrap();
            for _ in 0..c.training.epochs {
                trainer.run_epoch(&train).map_err(|e| e.to_string())?;
            }
            let r = trainer.evaluate(&val).unwrap();
            fde[slot] = r.get(6).unwrap().min_fde;
            if enabled {
                let prop = r.proposal(6).unwrap().min_fde;
                refined_ok &= fde[0] <= prop;
                let flag = if fde[0] <= prop { "" } else { " (refined > proposal)" };
                detail.push(format!("seed {seed}: refined {:.4} / proposal {prop:.4}{flag} / baseline", fde[0]));
            }
            reports.push(r);
        }
        detail.last_mut().unwrap().push_str(&format!(" {:.4}", fde[1]));
        gains.push(fde[1] - fde[0]);
    }
    let mean = gains.iter().sum::<f64>() / 3.0;
    let summary = format!("{}; mean gain {mean:.3} m", detail.join("; "));
    check(refined_ok && mean > 0.0, summary.clone(), summary.clone())?;
    within(&summary, start, Duration::from_secs(7200))
}

fn invariants(reports: &[EvalReport]) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    let model = Model::new(&common::tiny_model()).unwrap();
    let config = MetricsConfig { ks: vec![1, 2, 3] };
    let mut extra = Vec::new();
    for seed in 0..5 {
        let mut store = model.init(seed).unwrap();
        common::randomize(&mut store, seed, rng.random_range(0.05..0.5));
        let data: Vec<Scenario> = (0..10).map(|i| common::generated(seed, i)).collect();
        extra.push(evaluate(&model, &store, &data, &config).map_err(|e| e.to_string())?);
    }
    for (i, r) in reports.iter().chain(&extra).enumerate() {
        r.check_invariants().map_err(|e| format!("report {i}: {e}"))?;
    }
    Ok(format!("{} evaluation runs", reports.len() + extra.len()))
}

fn run_binary(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_rpred")).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() { Ok(()) } else { Err(String::from_utf8_lossy(&out.stderr).into_owned()) }
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = dir.path().join("tiny.toml");
    std::fs::write(&config, "[synthgen]\npast_steps = 6\nfuture_steps = 5\n[model]\npast_steps = 6\nfuture_steps = 5\nphi_hidden = [8]\nhead_hidden = 8\n[model.proposer]\nd = 8\nmodes = 3\nheads = 2\n[model.refiner]\nheads = 2\n[training]\nepochs = 2\nbatch_size = 4\n[metrics]\nks = [1, 3]\n").unwrap();
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let mut outputs = Vec::new();
    for rep in 0..2 {
        let root = dir.path().join(format!("rep{rep}"));
        let (data, run, eval) = (root.join("data"), root.join("run"), root.join("eval"));
        run_binary(&["gen-data", "--config", &s(&config), "--seed", "11", "--n", "20", "--out", &s(&data)])?;
        run_binary(&["train", "--config", &s(&config), "--seed", "11", "--data", &s(&data), "--out", &s(&run)])?;
        run_binary(&["eval", "--checkpoint", &s(&run.join("last.ckpt")), "--data", &s(&data), "--out", &s(&eval)])?;
        let files = [data.join("train.jsonl"), data.join("val.jsonl"), data.join("test.jsonl"), run.join("last.ckpt"), run.join("best.ckpt"), eval.join("eval_test.json")];
        outputs.push(files.iter().map(|f| std::fs::read(f).map_err(|e| format!("{}: {e}", f.display()))).collect::<Result<Vec<_>, _>>()?);
    }
    check(outputs[0] == outputs[1], "datasets, checkpoints and eval JSON identical across processes".into(), "outputs differ between invocations".into())
}

fn main() {
    let mut reports = Vec::new();
    let mut failed = 0;
    let mut line = |n: usize, name: &str, outcome: Outcome| {
        let (tag, text) = match outcome {
            Ok(t) => ("PASS", t),
            Err(t) if t == "skipped" => ("SKIP", t),
            Err(t) => {
                failed += 1;
                ("FAIL", t)
            }
        };
        println!("criterion {n:>2} {name:<22} {tag}  {text}");
    };
    line(1, "pooling oracle", pooling());
    line(2, "grouping oracle", grouping());
    line(3, "attention fidelity", attention());
    line(4, "gradient suite", gradients());
    line(5, "loss anchors", anchors());
    line(6, "residual anchoring", anchoring());
    line(7, "overfit", overfit(&mut reports));
    line(8, "refinement benefit", refinement(&mut reports));
    line(9, "metric invariants", invariants(&reports));
    line(10, "determinism", determinism());
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
