//! Winner-takes-all Laplace regression and cross-entropy classification.

use rpred_numeric::{Graph, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::model::ForwardOutput;
use crate::{Error, Result};

/// Floor applied to a probability before taking its log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub reg_pro: f64,
    pub cls_pro: f64,
    pub reg_ref: f64,
    pub cls_ref: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { reg_pro: 1.0, cls_pro: 1.0, reg_ref: 1.0, cls_ref: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub reg_pro: f64,
    pub cls_pro: f64,
    pub reg_ref: f64,
    pub cls_ref: f64,
    pub total: f64,
    pub weights: LossWeights,
}

impl LossBreakdown {
    pub(crate) fn accumulate(&mut self, other: &LossBreakdown, w: f64) {
        self.reg_pro += w * other.reg_pro;
        self.cls_pro += w * other.cls_pro;
        self.reg_ref += w * other.reg_ref;
        self.cls_ref += w * other.cls_ref;
        self.total += w * other.total;
    }

    pub(crate) fn empty(weights: LossWeights) -> Self {
        Self { reg_pro: 0.0, cls_pro: 0.0, reg_ref: 0.0, cls_ref: 0.0, total: 0.0, weights }
    }
}

/// Mean over waypoints of `sum_axes log(2b) + |y - mean| / b`.
pub fn laplace_nll(mean: &[[f64; 2]], scale: &[[f64; 2]], gt: &[[f64; 2]]) -> Result<f64> {
    if mean.len() != gt.len() || scale.len() != gt.len() || gt.is_empty() {
        return Err(Error::Scenario(format!(
            "laplace_nll lengths: mean {}, scale {}, gt {}",
            mean.len(),
            scale.len(),
            gt.len()
        )));
    }
    let mut total = 0.0;
    for ((m, b), y) in mean.iter().zip(scale).zip(gt) {
        for a in 0..2 {
            if !(b[a] > 0.0) {
                return Err(Error::Scenario(format!("non-positive Laplace scale {}", b[a])));
            }
            total += (2.0 * b[a]).ln() + (y[a] - m[a]).abs() / b[a];
        }
    }
    Ok(total / gt.len() as f64)
}

/// Graph form over `R x 2F` rows; averages over rows and waypoints.
pub fn laplace_nll_graph(g: &mut Graph, mean: Var, scale: Var, gt: Var) -> Result<Var> {
    let shape = g.shape(mean);
    let waypoints = (shape.numel() / 2) as f64;
    let residual = g.sub(gt, mean)?;
    let residual = g.abs(residual)?;
    let ratio = g.div(residual, scale)?;
    let doubled = g.scale(scale, 2.0)?;
    let log_b = g.log(doubled)?;
    let terms = g.add(log_b, ratio)?;
    let sum = g.sum(terms)?;
    Ok(g.scale(sum, 1.0 / waypoints)?)
}

/// Mode with the smallest summed per-step displacement; lowest index on ties.
pub fn wta_mode<T: AsRef<[[f64; 2]]>>(predictions: &[T], gt: &[[f64; 2]]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (m, p) in predictions.iter().enumerate() {
        let err: f64 = p.as_ref().iter().zip(gt).map(|(a, b)| (a[0] - b[0]).hypot(a[1] - b[1])).sum();
        if err < best.1 {
            best = (m, err);
        }
    }
    best.0
}

/// `-ln(max(c[m], 1e-12))`.
pub fn classification_loss(confidences: &[f64], mode: usize) -> f64 {
    -confidences[mode].max(PROB_FLOOR).ln()
}

/// Mean over rows of `-ln p[row, winners[row]]` for an `R x M` matrix.
pub fn classification_loss_graph(g: &mut Graph, confidences: Var, winners: &[usize]) -> Result<Var> {
    let modes = g.shape(confidences).cols();
    let rows = g.shape(confidences).rows();
    let flat = g.reshape(confidences, &[rows * modes, 1])?;
    let idx: Vec<usize> = winners.iter().enumerate().map(|(r, &m)| r * modes + m).collect();
    let picked = g.gather_rows(flat, &idx)?;
    let picked = g.clamp_min(picked, PROB_FLOOR)?;
    let logs = g.log(picked)?;
    let mean = g.mean(logs)?;
    Ok(g.scale(mean, -1.0)?)
}

fn rows_of(g: &Graph, v: Var, start: usize, count: usize) -> Vec<Vec<[f64; 2]>> {
    let t = g.value(v);
    (start..start + count).map(|r| t.row_slice(r).chunks(2).map(|p| [p[0], p[1]]).collect()).collect()
}

/// WTA-selected Laplace NLL over `agents` plus cross-entropy, for one stage.
/// `means`/`scales` are agent-major `(agents*M) x 2F`, `confidences` is
/// `agents x M`, `gts[a]` is agent `a`'s ground truth in the same frame.
fn stage_loss(
    g: &mut Graph,
    means: Var,
    scales: Var,
    confidences: Var,
    gts: &[&[[f64; 2]]],
    modes: usize,
) -> Result<(Var, Var)> {
    let mut winners = Vec::with_capacity(gts.len());
    let mut gt_rows = Vec::new();
    for (a, gt) in gts.iter().enumerate() {
        let preds = rows_of(g, means, a * modes, modes);
        winners.push(wta_mode(&preds, gt));
        gt_rows.extend(gt.iter().flat_map(|p| [p[0], p[1]]));
    }
    let idx: Vec<usize> = winners.iter().enumerate().map(|(a, &m)| a * modes + m).collect();
    let mean = g.gather_rows(means, &idx)?;
    let scale = g.gather_rows(scales, &idx)?;
    let cols = g.shape(mean).cols();
    let gt = g.constant(Tensor::new(&[gts.len(), cols], gt_rows)?)?;
    let reg = laplace_nll_graph(g, mean, scale, gt)?;
    let cls = classification_loss_graph(g, confidences, &winners)?;
    Ok((reg, cls))
}

/// Weighted four-term objective of one forward pass. Returns the graph
/// handle of the total and the component values.
pub fn total_loss(g: &mut Graph, out: &ForwardOutput, weights: LossWeights) -> Result<(Var, LossBreakdown)> {
    let views = &out.views;
    let modes = out.proposals.modes;
    let gts: Vec<&[[f64; 2]]> = (0..views.len()).map(|i| views.future(i)).collect::<Result<_>>()?;
    let p = &out.proposer;
    let (reg_pro, cls_pro) = stage_loss(g, p.trajectories, p.scales, p.confidences, &gts, modes)?;
    let mut terms = vec![(reg_pro, weights.reg_pro), (cls_pro, weights.cls_pro)];

    if !out.refined.is_empty() {
        let means: Vec<Var> = out.refined.iter().map(|r| r.means).collect();
        let scales: Vec<Var> = out.refined.iter().map(|r| r.scales).collect();
        let confs: Vec<Var> = out.refined.iter().map(|r| r.confidences).collect();
        let cat = |g: &mut Graph, v: &[Var]| -> Result<Var> {
            Ok(if v.len() == 1 { v[0] } else { g.concat_rows(v)? })
        };
        let (means, scales, confs) = (cat(g, &means)?, cat(g, &scales)?, cat(g, &confs)?);
        let ref_gts: Vec<&[[f64; 2]]> = out.refined.iter().map(|r| gts[r.target]).collect();
        let (reg_ref, cls_ref) = stage_loss(g, means, scales, confs, &ref_gts, modes)?;
        terms.push((reg_ref, weights.reg_ref));
        terms.push((cls_ref, weights.cls_ref));
    }

    let mut total = None;
    for &(v, w) in &terms {
        let scaled = g.scale(v, w)?;
        total = Some(match total {
            None => scaled,
            Some(t) => g.add(t, scaled)?,
        });
    }
    let total = total.expect("at least two terms");
    let value = |i: usize| terms.get(i).map_or(0.0, |&(v, _)| g.value(v).item());
    let breakdown = LossBreakdown {
        reg_pro: value(0),
        cls_pro: value(1),
        reg_ref: value(2),
        cls_ref: value(3),
        total: g.value(total).item(),
        weights,
    };
    Ok((total, breakdown))
}
