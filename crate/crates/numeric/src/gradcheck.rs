use crate::{Graph, NumericError, ParameterStore, Result, Var};

/// Outcome of a central-difference gradient comparison.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// max over entries of `|analytic - numeric| / max(1, |numeric|)`.
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub entries_checked: usize,
    /// Smallest ReLU pre-activation magnitude seen in the unperturbed pass.
    pub relu_margin: f64,
}

/// Compares reverse-mode gradients of `build` against central differences
/// for every entry of every parameter in `params`.
///
/// Each evaluation runs on a fresh graph with the same `training` flag and
/// `seed`, so dropout masks are identical across probes.
pub fn grad_check_with<F>(build: F, params: &ParameterStore, step: f64, training: bool, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParameterStore) -> Result<Var>,
{
    if !(1e-8..=1e-3).contains(&step) {
        return Err(NumericError::InvalidArgument {
            op: "grad_check",
            detail: format!("step {step} outside [1e-8, 1e-3]"),
        });
    }
    let mut g = Graph::new(training, seed);
    let loss = build(&mut g, params)?;
    g.backward(loss)?;
    let relu_margin = g.relu_margin();

    let eval = |store: &ParameterStore| -> Result<f64> {
        let mut g = Graph::new(training, seed);
        let v = build(&mut g, store)?;
        Ok(g.value(v).item())
    };

    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        entries_checked: 0,
        relu_margin,
    };
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let analytic: Vec<f64> = match g.param_var(&name).and_then(|v| g.grad(v)) {
            Some(grad) => grad.to_vec(),
            None => vec![0.0; params.get(&name).expect("listed").numel()],
        };
        for (i, &a) in analytic.iter().enumerate() {
            let original = params.get(&name).expect("listed").data()[i];
            probe.get_mut(&name).expect("listed").data_mut()[i] = original + step;
            let plus = eval(&probe)?;
            probe.get_mut(&name).expect("listed").data_mut()[i] = original - step;
            let minus = eval(&probe)?;
            probe.get_mut(&name).expect("listed").data_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * step);
            let err = (a - numeric).abs() / numeric.abs().max(1.0);
            report.entries_checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = name.clone();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}

/// [`grad_check_with`] on an inference-mode graph.
pub fn grad_check<F>(build: F, params: &ParameterStore, step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &ParameterStore) -> Result<Var>,
{
    grad_check_with(build, params, step, false, 0).map(|r| r.max_rel_error)
}
