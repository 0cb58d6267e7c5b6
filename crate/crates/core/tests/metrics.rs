mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rpred_core::metrics::{aggregate, brier_fde, evaluate, min_ade, min_fde, miss_rate, EvalSample, MetricsConfig};
use rpred_core::model::Model;

fn line(offset: f64, f: usize) -> Vec<[f64; 2]> {
    (0..f).map(|i| [i as f64, offset]).collect()
}

fn random_sample(rng: &mut ChaCha8Rng, m: usize, f: usize) -> EvalSample {
    let gt: Vec<[f64; 2]> = (0..f).map(|_| [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)]).collect();
    let predictions = (0..m)
        .map(|_| gt.iter().map(|p| [p[0] + rng.random_range(-3.0..3.0), p[1] + rng.random_range(-3.0..3.0)]).collect())
        .collect();
    let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.01..1.0)).collect();
    let z: f64 = raw.iter().sum();
    EvalSample { predictions, confidences: raw.iter().map(|c| c / z).collect(), gt }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

#[test]
fn displacement_examples() {
    let gt = line(0.0, 4);
    assert_eq!(min_ade(&[gt.clone(), line(5.0, 4)], &[0.5, 0.5], &gt, 2).unwrap(), 0.0);
    assert!((min_ade(&[line(2.0, 4)], &[1.0], &gt, 1).unwrap() - 2.0).abs() < 1e-12);
    assert_eq!(min_fde(&[line(1.0, 4), line(4.0, 4)], &[0.5, 0.5], &gt, 2).unwrap(), 1.0);
    let mut tail = line(3.0, 4);
    tail[3] = gt[3];
    assert_eq!(min_fde(&[tail], &[1.0], &gt, 1).unwrap(), 0.0);
    assert!(min_ade(&[gt.clone()], &[1.0], &gt, 2).is_err());
}

#[test]
fn brier_examples() {
    let gt = line(0.0, 3);
    let preds = [line(1.0, 3), line(3.0, 3)];
    assert_eq!(brier_fde(&preds, &[1.0, 0.0], &gt, 2).unwrap(), min_fde(&preds, &[1.0, 0.0], &gt, 2).unwrap());
    assert!((brier_fde(&preds, &[0.5, 0.5], &gt, 2).unwrap() - 1.25).abs() < 1e-12);
}

#[test]
fn miss_rate_threshold() {
    let gt = line(0.0, 3);
    let sample = |d: f64| EvalSample { predictions: vec![line(d, 3)], confidences: vec![1.0], gt: gt.clone() };
    assert_eq!(miss_rate(&[sample(0.0)], 1).unwrap(), 0.0);
    assert_eq!(miss_rate(&[sample(1.5), sample(2.5)], 1).unwrap(), 0.5);
    assert_eq!(miss_rate(&[sample(2.0)], 1).unwrap(), 1.0);
    assert!(miss_rate(&[], 1).is_err());
}

#[test]
fn metrics_match_brute_force_over_top_k() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let s = random_sample(&mut rng, 6, 5);
        for k in 1..=6 {
            // top-k by confidence, index breaks ties
            let mut idx: Vec<usize> = (0..6).collect();
            idx.sort_by(|&a, &b| s.confidences[b].partial_cmp(&s.confidences[a]).unwrap().then(a.cmp(&b)));
            let chosen = &idx[..k];
            let ade = chosen
                .iter()
                .map(|&m| s.predictions[m].iter().zip(&s.gt).map(|(p, y)| dist(*p, *y)).sum::<f64>() / 5.0)
                .fold(f64::INFINITY, f64::min);
            let (fde, best) = chosen
                .iter()
                .map(|&m| (dist(s.predictions[m][4], s.gt[4]), m))
                .fold((f64::INFINITY, 0), |a, b| if b.0 < a.0 { b } else { a });
            assert!((min_ade(&s.predictions, &s.confidences, &s.gt, k).unwrap() - ade).abs() < 1e-12);
            assert!((min_fde(&s.predictions, &s.confidences, &s.gt, k).unwrap() - fde).abs() < 1e-12);
            let brier = fde + (1.0 - s.confidences[best]).powi(2);
            assert!((brier_fde(&s.predictions, &s.confidences, &s.gt, k).unwrap() - brier).abs() < 1e-12);
        }
    }
}

#[test]
fn aggregates_are_monotone_and_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let samples: Vec<EvalSample> = (0..40).map(|_| random_sample(&mut rng, 6, 5)).collect();
    let ks: Vec<usize> = (1..=6).collect();
    let agg = aggregate(&samples, &ks).unwrap();
    for w in agg.windows(2) {
        assert!(w[1].min_ade <= w[0].min_ade && w[1].min_fde <= w[0].min_fde && w[1].miss_rate <= w[0].miss_rate);
    }
    for m in &agg {
        assert!((0.0..=1.0).contains(&m.miss_rate));
        let gap = m.brier_fde - m.min_fde;
        assert!((0.0..=1.0).contains(&gap));
    }
}

#[test]
fn evaluate_matches_per_sample_recomputation() {
    let model = Model::new(&common::tiny_model()).unwrap();
    let store = model.init(3).unwrap();
    let split: Vec<_> = (0..6).map(|i| common::generated(3, i)).collect();
    let cfg = MetricsConfig { ks: vec![1, 3, 6] };
    let report = evaluate(&model, &store, &split, &cfg).unwrap();
    assert_eq!(report.n, 6);
    assert_eq!(report.metrics.iter().map(|m| m.k).collect::<Vec<_>>(), vec![1, 3]);

    let mut fde3 = 0.0;
    for s in &split {
        let pred = model.predict(&store, s).unwrap();
        let (modes, conf) = pred.final_modes();
        fde3 += min_fde(modes, conf, pred.target_future.as_ref().unwrap(), 3).unwrap();
    }
    assert!((report.get(3).unwrap().min_fde - fde3 / 6.0).abs() < 1e-12);

    let single = evaluate(&model, &store, &split[..1], &cfg).unwrap();
    let pred = model.predict(&store, &split[0]).unwrap();
    let (modes, conf) = pred.final_modes();
    let gt = pred.target_future.as_ref().unwrap();
    assert_eq!(single.get(1).unwrap().min_ade, min_ade(modes, conf, gt, 1).unwrap());

    let doubled: Vec<_> = split.iter().chain(&split).cloned().collect();
    let twice = evaluate(&model, &store, &doubled, &cfg).unwrap();
    for (a, b) in twice.metrics.iter().zip(&report.metrics) {
        assert!((a.min_ade - b.min_ade).abs() < 1e-12 && (a.miss_rate - b.miss_rate).abs() < 1e-12);
    }
    assert_eq!(evaluate(&model, &store, &split, &cfg).unwrap(), report);
    assert!(evaluate(&model, &store, &[], &cfg).is_err());

    let map = report.to_map();
    for key in ["minade3", "minfde3", "mr3", "brierfde3", "proposal_minfde3", "n"] {
        assert!(map.contains_key(key), "{key}");
    }
    let json: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
    assert_eq!(json["n"], 6);
    assert!(report.to_string().contains("minFDE"));
}
