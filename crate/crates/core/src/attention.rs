//! Multi-head cross-attention with gated fusion.
//!
//! For a query feature `f` (`1 x d`) and a context `C` (`K x d`):
//!
//! ```text
//! Q = f Wq,  K = C Wk,  V = C Wv
//! A = concat_h softmax(Q_h K_h^T / sqrt(d_k)) V_h          d_k = d / heads
//! lambda = sigmoid(f Winput + A Whidden)
//! fused  = lambda * (f Wgate) + (1 - lambda) * A
//! out    = f + dropout(phi(LayerNorm(fused)))
//! ```
//!
//! Dropout is also applied to the attention weights. An empty context
//! returns `f` unchanged.

use rand::Rng;
use rpred_numeric::nn::{init_matrix, init_mlp, mlp_forward};
use rpred_numeric::{Graph, ParameterStore, Tensor, Var};

use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct AttentionBlock {
    prefix: String,
    d: usize,
    heads: usize,
    dropout: f64,
    phi: Vec<String>,
}

/// Intermediate values of one attention call, kept for inspection.
#[derive(Clone, Copy, Debug)]
pub struct AttentionTrace {
    pub output: Var,
    /// Gate `lambda`, `1 x d`.
    pub gate: Var,
    /// Concatenated head outputs `A`, `1 x d`.
    pub attended: Var,
}

impl AttentionBlock {
    /// Parameter layout for a block; does not touch any store.
    pub fn new(prefix: &str, d: usize, heads: usize, phi_hidden: &[usize], dropout: f64) -> Result<Self> {
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(Error::Config(format!("embedding size {d} not divisible by {heads} heads")));
        }
        let phi = (0..=phi_hidden.len()).map(|i| format!("{prefix}.phi.{i}")).collect();
        Ok(Self { prefix: prefix.to_string(), d, heads, dropout, phi })
    }

    /// Registers the block's parameters: six `d x d` projections, the
    /// normalisation gain/bias and the `phi` MLP.
    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParameterStore, phi_hidden: &[usize], rng: &mut R) -> Result<()> {
        for w in ["wq", "wk", "wv", "w_input", "w_hidden", "w_gate"] {
            init_matrix(store, &self.name(w), self.d, self.d, rng)?;
        }
        store.insert(self.name("norm.gain"), Tensor::new(&[1, self.d], vec![1.0; self.d])?)?;
        store.insert(self.name("norm.bias"), Tensor::zeros(&[1, self.d])?)?;
        let mut dims = vec![self.d];
        dims.extend_from_slice(phi_hidden);
        dims.push(self.d);
        init_mlp(store, &format!("{}.phi", self.prefix), &dims, rng)?;
        Ok(())
    }

    fn name(&self, suffix: &str) -> String {
        format!("{}.{suffix}", self.prefix)
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    /// Projects a context matrix into keys and values. Each output row
    /// depends only on the matching context row.
    pub fn project_context(&self, g: &mut Graph, store: &ParameterStore, context: Var) -> Result<(Var, Var)> {
        let wk = g.param(store, &self.name("wk"))?;
        let wv = g.param(store, &self.name("wv"))?;
        Ok((g.matmul(context, wk)?, g.matmul(context, wv)?))
    }

    /// Keys and values of a context that is itself the affine embedding
    /// `x W_e + b_e` of raw inputs `x` (`L x in`). The embedding is folded
    /// into the projections, `K = x (W_e Wk) + b_e Wk`, which avoids the
    /// `L x d x d` products.
    pub fn project_embedded(&self, g: &mut Graph, store: &ParameterStore, x: Var, embed: &str) -> Result<(Var, Var)> {
        let we = g.param(store, &format!("{embed}.weight"))?;
        let be = g.param(store, &format!("{embed}.bias"))?;
        let mut out = [x; 2];
        for (slot, name) in out.iter_mut().zip(["wk", "wv"]) {
            let w = g.param(store, &self.name(name))?;
            let wf = g.matmul(we, w)?;
            let bf = g.matmul(be, w)?;
            let xw = g.matmul(x, wf)?;
            *slot = g.add_row(xw, bf)?;
        }
        Ok((out[0], out[1]))
    }

    /// Attends from `query` over precomputed `keys`/`values` (`K x d`, `K >= 1`).
    pub fn attend(&self, g: &mut Graph, store: &ParameterStore, query: Var, keys: Var, values: Var) -> Result<AttentionTrace> {
        let d = self.d;
        let dk = d / self.heads;
        let wq = g.param(store, &self.name("wq"))?;
        let q = g.matmul(query, wq)?;
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, keys, values)
            } else {
                (g.slice_cols(q, h * dk, dk)?, g.slice_cols(keys, h * dk, dk)?, g.slice_cols(values, h * dk, dk)?)
            };
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, 1.0 / (dk as f64).sqrt())?;
            let weights = g.softmax(scores)?;
            let weights = g.dropout(weights, self.dropout)?;
            heads.push(g.matmul(weights, vh)?);
        }
        let attended = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads)? };

        let w_input = g.param(store, &self.name("w_input"))?;
        let w_hidden = g.param(store, &self.name("w_hidden"))?;
        let w_gate = g.param(store, &self.name("w_gate"))?;
        let fi = g.matmul(query, w_input)?;
        let ah = g.matmul(attended, w_hidden)?;
        let pre = g.add(fi, ah)?;
        let gate = g.sigmoid(pre)?;
        let fg = g.matmul(query, w_gate)?;
        let kept = g.mul(gate, fg)?;
        let inv = g.one_minus(gate)?;
        let mixed = g.mul(inv, attended)?;
        let fused = g.add(kept, mixed)?;

        let gain = g.param(store, &self.name("norm.gain"))?;
        let bias = g.param(store, &self.name("norm.bias"))?;
        let normed = g.layer_norm(fused, gain, bias)?;
        let update = mlp_forward(g, store, &self.phi, normed)?;
        let update = g.dropout(update, self.dropout)?;
        let output = g.add(query, update)?;
        Ok(AttentionTrace { output, gate, attended })
    }

    /// Full block on a raw context; `None` (no context rows) is a passthrough.
    pub fn forward(&self, g: &mut Graph, store: &ParameterStore, query: Var, context: Option<Var>) -> Result<Var> {
        match context {
            None => Ok(query),
            Some(c) => {
                let (k, v) = self.project_context(g, store, c)?;
                Ok(self.attend(g, store, query, k, v)?.output)
            }
        }
    }

    /// Like [`forward`](Self::forward) on already-projected keys and values.
    pub fn forward_projected(&self, g: &mut Graph, store: &ParameterStore, query: Var, projected: Option<(Var, Var)>) -> Result<Var> {
        match projected {
            Some((k, v)) => Ok(self.attend(g, store, query, k, v)?.output),
            None => Ok(query),
        }
    }

    /// Like [`forward`](Self::forward) but over a subset of rows of
    /// already-projected keys and values.
    pub fn forward_rows(
        &self,
        g: &mut Graph,
        store: &ParameterStore,
        query: Var,
        projected: Option<(Var, Var)>,
        rows: &[usize],
    ) -> Result<Var> {
        match projected {
            Some((k, v)) if !rows.is_empty() => {
                let k = g.gather_rows(k, rows)?;
                let v = g.gather_rows(v, rows)?;
                Ok(self.attend(g, store, query, k, v)?.output)
            }
            _ => Ok(query),
        }
    }
}
