//! Affine layers and MLPs over named parameters.

use rand::Rng;

use crate::{Graph, NumericError, ParameterStore, Result, Tensor, Var};

/// Registers `{prefix}.weight` (`fan_in x fan_out`, Glorot-uniform) and a
/// zero `{prefix}.bias`.
pub fn init_linear<R: Rng + ?Sized>(
    store: &mut ParameterStore,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Result<()> {
    store.insert(format!("{prefix}.weight"), Tensor::glorot(fan_in, fan_out, rng)?)?;
    store.insert(format!("{prefix}.bias"), Tensor::zeros(&[1, fan_out])?)?;
    Ok(())
}

/// Registers a bias-free `fan_in x fan_out` matrix under `name`.
pub fn init_matrix<R: Rng + ?Sized>(
    store: &mut ParameterStore,
    name: &str,
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Result<()> {
    store.insert(name, Tensor::glorot(fan_in, fan_out, rng)?)
}

/// Registers one affine layer per consecutive pair in `dims` under
/// `{prefix}.{i}` and returns the layer prefixes.
pub fn init_mlp<R: Rng + ?Sized>(
    store: &mut ParameterStore,
    prefix: &str,
    dims: &[usize],
    rng: &mut R,
) -> Result<Vec<String>> {
    if dims.len() < 2 {
        return Err(NumericError::InvalidArgument {
            op: "init_mlp",
            detail: format!("need at least two dims, got {dims:?}"),
        });
    }
    let mut layers = Vec::new();
    for (i, pair) in dims.windows(2).enumerate() {
        let name = format!("{prefix}.{i}");
        init_linear(store, &name, pair[0], pair[1], rng)?;
        layers.push(name);
    }
    Ok(layers)
}

/// `x * W + b` using `{prefix}.weight` and `{prefix}.bias`.
pub fn linear(g: &mut Graph, store: &ParameterStore, prefix: &str, x: Var) -> Result<Var> {
    let w = g.param(store, &format!("{prefix}.weight"))?;
    let b = g.param(store, &format!("{prefix}.bias"))?;
    let xw = g.matmul(x, w)?;
    g.add_row(xw, b)
}

/// Alternating affine + ReLU, with a final affine layer.
pub fn mlp_forward(g: &mut Graph, store: &ParameterStore, layers: &[String], x: Var) -> Result<Var> {
    let mut h = x;
    for (i, layer) in layers.iter().enumerate() {
        h = linear(g, store, layer, h)?;
        if i + 1 < layers.len() {
            h = g.relu(h)?;
        }
    }
    Ok(h)
}

/// Layer prefixes `{prefix}.0 .. {prefix}.{n-1}`.
pub fn mlp_layers(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}.{i}")).collect()
}
