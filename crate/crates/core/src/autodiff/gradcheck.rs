use rand::seq::index;
use rand::Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::AutodiffError;

/// A scalar-valued function built on a fresh tape from its input leaves.
pub type TapeFn<'f> = dyn Fn(&Tape<f64>, &[Var]) -> Result<Var, AutodiffError> + 'f;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Max over checked coordinates of `|analytic - numeric| / max(1, |numeric|)`.
    pub max_rel_error: f64,
    pub coordinates: usize,
}

fn evaluate(f: &TapeFn<'_>, inputs: &[Tensor<f64>]) -> Result<f64, AutodiffError> {
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&tape, &vars)?;
    let v = tape.value(out);
    if v.numel() != 1 {
        return Err(AutodiffError::NonScalarLoss(v.shape().to_vec()));
    }
    Ok(v.data()[0])
}

fn analytic(f: &TapeFn<'_>, inputs: &[Tensor<f64>]) -> Result<Vec<Tensor<f64>>, AutodiffError> {
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&tape, &vars)?;
    let grads = tape.backward(out)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| {
            grads
                .get(*v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()))
        })
        .collect())
}

fn check_coords(
    f: &TapeFn<'_>,
    inputs: &[Tensor<f64>],
    eps: f64,
    coords: &[(usize, usize)],
) -> Result<GradCheckReport, AutodiffError> {
    let grads = analytic(f, inputs)?;
    let mut work = inputs.to_vec();
    let mut max_rel_error = 0.0f64;
    for &(t, i) in coords {
        let orig = work[t].data()[i];
        work[t].data_mut()[i] = orig + eps;
        let plus = evaluate(f, &work)?;
        work[t].data_mut()[i] = orig - eps;
        let minus = evaluate(f, &work)?;
        work[t].data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let a = grads[t].data()[i];
        max_rel_error = max_rel_error.max((a - numeric).abs() / numeric.abs().max(1.0));
    }
    Ok(GradCheckReport {
        max_rel_error,
        coordinates: coords.len(),
    })
}

/// Central finite differences on every coordinate of every input.
pub fn grad_check(
    f: &TapeFn<'_>,
    inputs: &[Tensor<f64>],
    eps: f64,
) -> Result<GradCheckReport, AutodiffError> {
    let coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(t, x)| (0..x.numel()).map(move |i| (t, i)))
        .collect();
    check_coords(f, inputs, eps, &coords)
}

/// Like [`grad_check`] on `samples` coordinates drawn without replacement
/// (all of them if there are fewer).
pub fn grad_check_sampled<R: Rng + ?Sized>(
    f: &TapeFn<'_>,
    inputs: &[Tensor<f64>],
    eps: f64,
    samples: usize,
    rng: &mut R,
) -> Result<GradCheckReport, AutodiffError> {
    let flat: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(t, x)| (0..x.numel()).map(move |i| (t, i)))
        .collect();
    let coords: Vec<(usize, usize)> = if samples >= flat.len() {
        flat
    } else {
        index::sample(rng, flat.len(), samples)
            .into_iter()
            .map(|k| flat[k])
            .collect()
    };
    check_coords(f, inputs, eps, &coords)
}
