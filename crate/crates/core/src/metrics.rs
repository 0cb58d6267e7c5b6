//! Displacement metrics over multimodal predictions.
//!
//! When `k < M` only the `k` most confident modes are scored (ties keep the
//! lower index). A sample is a miss when its best endpoint error is at
//! least [`MISS_THRESHOLD`].

use std::collections::BTreeMap;
use std::fmt;

use rpred_numeric::ParameterStore;
use serde::{Deserialize, Serialize};

use crate::model::Model;
use crate::scenario::Scenario;
use crate::{Error, Result};

pub const MISS_THRESHOLD: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Mode budgets to report; values above `M` are skipped.
    pub ks: Vec<usize>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { ks: vec![1, 6] }
    }
}

/// One scored sample: `M x F` predictions, `M` confidences, `F` ground-truth points.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSample {
    pub predictions: Vec<Vec<[f64; 2]>>,
    pub confidences: Vec<f64>,
    pub gt: Vec<[f64; 2]>,
}

fn top_k(confidences: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > confidences.len() {
        return Err(Error::Config(format!("k = {k} with {} modes", confidences.len())));
    }
    let mut order: Vec<usize> = (0..confidences.len()).collect();
    order.sort_by(|&a, &b| confidences[b].total_cmp(&confidences[a]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(order)
}

fn check_lengths(predictions: &[Vec<[f64; 2]>], confidences: &[f64], gt: &[[f64; 2]]) -> Result<()> {
    if gt.is_empty() || predictions.len() != confidences.len() || predictions.iter().any(|p| p.len() != gt.len()) {
        return Err(Error::Scenario("prediction, confidence and ground-truth sizes disagree".into()));
    }
    Ok(())
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub fn min_ade(predictions: &[Vec<[f64; 2]>], confidences: &[f64], gt: &[[f64; 2]], k: usize) -> Result<f64> {
    check_lengths(predictions, confidences, gt)?;
    Ok(top_k(confidences, k)?
        .into_iter()
        .map(|m| predictions[m].iter().zip(gt).map(|(&p, &y)| dist(p, y)).sum::<f64>() / gt.len() as f64)
        .fold(f64::INFINITY, f64::min))
}

/// Best endpoint error among the top-`k` modes and the mode achieving it.
fn best_endpoint(predictions: &[Vec<[f64; 2]>], confidences: &[f64], gt: &[[f64; 2]], k: usize) -> Result<(f64, usize)> {
    check_lengths(predictions, confidences, gt)?;
    let end = gt[gt.len() - 1];
    let mut best = (f64::INFINITY, 0);
    for m in top_k(confidences, k)? {
        let e = dist(predictions[m][gt.len() - 1], end);
        if e < best.0 || (e == best.0 && m < best.1) {
            best = (e, m);
        }
    }
    Ok(best)
}

pub fn min_fde(predictions: &[Vec<[f64; 2]>], confidences: &[f64], gt: &[[f64; 2]], k: usize) -> Result<f64> {
    Ok(best_endpoint(predictions, confidences, gt, k)?.0)
}

/// `minFDE_k + (1 - p)^2`, `p` the confidence of the minFDE mode.
pub fn brier_fde(predictions: &[Vec<[f64; 2]>], confidences: &[f64], gt: &[[f64; 2]], k: usize) -> Result<f64> {
    let (fde, m) = best_endpoint(predictions, confidences, gt, k)?;
    Ok(fde + (1.0 - confidences[m]).powi(2))
}

/// Fraction of samples whose best top-`k` endpoint error is `>= 2 m`.
pub fn miss_rate(samples: &[EvalSample], k: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let mut misses = 0usize;
    for s in samples {
        if min_fde(&s.predictions, &s.confidences, &s.gt, k)? >= MISS_THRESHOLD {
            misses += 1;
        }
    }
    Ok(misses as f64 / samples.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMetrics {
    pub k: usize,
    pub min_ade: f64,
    pub min_fde: f64,
    pub miss_rate: f64,
    pub brier_fde: f64,
}

/// Averages of the per-sample metrics for each `k`.
pub fn aggregate(samples: &[EvalSample], ks: &[usize]) -> Result<Vec<KMetrics>> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let n = samples.len() as f64;
    let mut out = Vec::with_capacity(ks.len());
    for &k in ks {
        let (mut ade, mut fde, mut brier) = (0.0, 0.0, 0.0);
        for s in samples {
            ade += min_ade(&s.predictions, &s.confidences, &s.gt, k)?;
            fde += min_fde(&s.predictions, &s.confidences, &s.gt, k)?;
            brier += brier_fde(&s.predictions, &s.confidences, &s.gt, k)?;
        }
        out.push(KMetrics { k, min_ade: ade / n, min_fde: fde / n, miss_rate: miss_rate(samples, k)?, brier_fde: brier / n });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub n: usize,
    /// Final predictions (refined when the refiner is enabled).
    pub metrics: Vec<KMetrics>,
    /// Proposal-stage predictions of the same samples.
    pub proposal_metrics: Vec<KMetrics>,
}

impl EvalReport {
    pub fn get(&self, k: usize) -> Option<&KMetrics> {
        self.metrics.iter().find(|m| m.k == k)
    }

    pub fn proposal(&self, k: usize) -> Option<&KMetrics> {
        self.proposal_metrics.iter().find(|m| m.k == k)
    }

    /// Flat map `minade{k}`, `minfde{k}`, `mr{k}`, `brierfde{k}` (with a
    /// `proposal_` prefix for the first stage) plus `n`.
    pub fn to_map(&self) -> BTreeMap<String, f64> {
        let mut map = BTreeMap::new();
        for (prefix, list) in [("", &self.metrics), ("proposal_", &self.proposal_metrics)] {
            for m in list {
                map.insert(format!("{prefix}minade{}", m.k), m.min_ade);
                map.insert(format!("{prefix}minfde{}", m.k), m.min_fde);
                map.insert(format!("{prefix}mr{}", m.k), m.miss_rate);
                map.insert(format!("{prefix}brierfde{}", m.k), m.brier_fde);
            }
        }
        map.insert("n".into(), self.n as f64);
        map
    }

    pub fn to_json(&self) -> String {
        let mut obj = serde_json::Map::new();
        for (key, value) in self.to_map() {
            let v = if key == "n" { serde_json::Value::from(self.n) } else { serde_json::Value::from(value) };
            obj.insert(key, v);
        }
        serde_json::to_string_pretty(&serde_json::Value::Object(obj)).expect("plain map") + "\n"
    }

    /// Non-increasing error in `k`, miss rate in `[0, 1]` and
    /// `brierFDE - minFDE` in `[0, 1]`, for both stages.
    pub fn check_invariants(&self) -> Result<()> {
        for list in [&self.metrics, &self.proposal_metrics] {
            let mut sorted: Vec<&KMetrics> = list.iter().collect();
            sorted.sort_by_key(|m| m.k);
            for w in sorted.windows(2) {
                if w[1].min_fde > w[0].min_fde || w[1].min_ade > w[0].min_ade {
                    return Err(Error::Scenario(format!("metrics increase from k={} to k={}", w[0].k, w[1].k)));
                }
            }
            for m in list {
                let gap = m.brier_fde - m.min_fde;
                if !(0.0..=1.0).contains(&m.miss_rate) || !(0.0..=1.0).contains(&gap) || m.min_ade < 0.0 {
                    return Err(Error::Scenario(format!("metric bounds violated at k={}: {m:?}", m.k)));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>4} {:>9} {:>9} {:>7} {:>9}", "stage", "k", "minADE", "minFDE", "MR", "brierFDE")?;
        for (stage, list) in [("final", &self.metrics), ("proposal", &self.proposal_metrics)] {
            for m in list {
                writeln!(
                    f,
                    "{:<10} {:>4} {:>9.4} {:>9.4} {:>7.4} {:>9.4}",
                    stage, m.k, m.min_ade, m.min_fde, m.miss_rate, m.brier_fde
                )?;
            }
        }
        write!(f, "n = {}", self.n)
    }
}

/// Scores agent 0 of every scenario in inference mode.
pub fn evaluate(model: &Model, store: &ParameterStore, scenarios: &[Scenario], config: &MetricsConfig) -> Result<EvalReport> {
    if scenarios.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    let modes = model.config().modes();
    let ks: Vec<usize> = config.ks.iter().copied().filter(|&k| k >= 1 && k <= modes).collect();
    if ks.is_empty() {
        return Err(Error::Config(format!("no k in {:?} fits {modes} modes", config.ks)));
    }
    let mut finals = Vec::with_capacity(scenarios.len());
    let mut proposals = Vec::with_capacity(scenarios.len());
    for s in scenarios {
        let pred = model.predict(store, s)?;
        let gt = pred.target_future.clone().ok_or(Error::MissingFuture(0))?;
        let (modes_f, conf_f) = pred.final_modes();
        finals.push(EvalSample { predictions: modes_f.to_vec(), confidences: conf_f.to_vec(), gt: gt.clone() });
        proposals.push(EvalSample { predictions: pred.proposals, confidences: pred.proposal_confidences, gt });
    }
    let report = EvalReport {
        n: scenarios.len(),
        metrics: aggregate(&finals, &ks)?,
        proposal_metrics: aggregate(&proposals, &ks)?,
    };
    report.check_invariants()?;
    Ok(report)
}
