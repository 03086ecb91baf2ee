use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{batch_loss, split_rows, TrainConfig, TrainError};
use crate::autodiff::{grad_check_sampled, AutodiffError, GradCheckReport, Tape, Tensor, Var};
use crate::graph::{HeteroGraph, Split};
use crate::model::{forward_on_tape, Model, ModelError};
use crate::propagate::MessageCache;

/// Finite-difference check of the full training loss over `samples` random
/// parameter coordinates, in 64-bit, at the initialization given by
/// `config.seed`.
pub fn loss_grad_check(
    graph: &HeteroGraph,
    cache: &MessageCache,
    config: &TrainConfig,
    samples: usize,
    eps: f64,
) -> Result<GradCheckReport, TrainError> {
    config.validate()?;
    let targets: Vec<(usize, usize)> = split_rows(graph, Split::Train)
        .into_iter()
        .map(|r| (r, graph.labels()[r] as usize))
        .collect();
    if targets.is_empty() {
        return Err(TrainError::NoTrainNodes);
    }
    let model = Model::<f64>::for_cache(
        config.model_config(),
        cache,
        graph.num_classes(),
        config.seed,
    )?;
    let inputs: Vec<Tensor<f64>> = model
        .params
        .named()
        .into_iter()
        .map(|(_, t)| t.clone())
        .collect();
    let f = |tape: &Tape<f64>, vars: &[Var]| {
        let mut next = vars.iter().copied();
        let bound = model
            .params
            .map(|_, _| next.next().expect("one leaf per parameter"));
        let fwd = forward_on_tape(tape, cache, &bound, config.heads).map_err(|e| match e {
            ModelError::Autodiff(a) => a,
            other => AutodiffError::Shape {
                op: "forward",
                detail: other.to_string(),
            },
        })?;
        let loss = batch_loss(
            tape,
            &fwd,
            config.heads,
            &targets,
            config.lambda1,
            config.lambda2,
            1.0,
            1.0,
        )?;
        Ok(loss.total)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    Ok(grad_check_sampled(&f, &inputs, eps, samples, &mut rng)?)
}
