use crate::autodiff::{AutodiffError, Real, Tape, Tensor, Var};
use crate::model::ForwardVars;

/// Negative mean symmetric KL divergence between every unordered pair of
/// heads, averaged over rows. `attn` is `[N*H, S, S]`, head-major per node.
/// Returns `None` for a single head (no pairs).
pub fn head_diversity<T: Real>(
    tape: &Tape<T>,
    attn: Var,
    heads: usize,
) -> Result<Option<Var>, AutodiffError> {
    if heads < 2 {
        return Ok(None);
    }
    let per_head: Vec<Var> = (0..heads)
        .map(|h| tape.select_head(attn, heads, h))
        .collect::<Result<_, _>>()?;
    let mut total: Option<Var> = None;
    let mut pairs = 0usize;
    for a in 0..heads {
        for b in a + 1..heads {
            let ab = tape.kl_div(per_head[a], per_head[b])?;
            let ba = tape.kl_div(per_head[b], per_head[a])?;
            let sym = tape.add(ab, ba)?;
            total = Some(match total {
                Some(t) => tape.add(t, sym)?,
                None => sym,
            });
            pairs += 1;
        }
    }
    let total = total.expect("at least one pair");
    Ok(Some(tape.scale(total, T::of(-0.5 / pairs as f64))))
}

/// Loss terms for one batch.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub cross_entropy: Option<Var>,
    pub coarse_reg: Option<Var>,
    pub fine_reg: Option<Var>,
}

/// `CE + lambda1 * R_coarse + lambda2 * R_fine`.
///
/// `targets` holds `(row, class)` pairs of the training nodes inside this
/// batch. `ce_weight` and `reg_weight` rescale the batch terms so that
/// summing over batches reproduces full-batch means.
#[allow(clippy::too_many_arguments)]
pub fn batch_loss<T: Real>(
    tape: &Tape<T>,
    vars: &ForwardVars,
    heads: usize,
    targets: &[(usize, usize)],
    lambda1: f64,
    lambda2: f64,
    ce_weight: f64,
    reg_weight: f64,
) -> Result<LossVars, AutodiffError> {
    let cross_entropy = if targets.is_empty() {
        None
    } else {
        Some(tape.cross_entropy(vars.logits, targets)?)
    };
    let coarse_reg = head_diversity(tape, vars.coarse_attention, heads)?;
    let fine_reg = head_diversity(tape, vars.fine_attention, heads)?;
    let mut terms = Vec::new();
    if let Some(ce) = cross_entropy {
        terms.push(tape.scale(ce, T::of(ce_weight)));
    }
    for (r, lambda) in [(coarse_reg, lambda1), (fine_reg, lambda2)] {
        if let (Some(r), true) = (r, lambda != 0.0) {
            terms.push(tape.scale(r, T::of(lambda * reg_weight)));
        }
    }
    let mut terms = terms.into_iter();
    let mut total = terms
        .next()
        .unwrap_or_else(|| tape.constant(Tensor::scalar(T::zero())));
    for t in terms {
        total = tape.add(total, t)?;
    }
    Ok(LossVars {
        total,
        cross_entropy,
        coarse_reg,
        fine_reg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn opposite_one_hot_heads() {
        let tape = Tape::new();
        let attn = tape.constant(Tensor::new(vec![2, 1, 2], vec![1.0, 0.0, 0.0, 1.0]));
        let r = head_diversity(&tape, attn, 2).unwrap().unwrap();
        let v = tape.value(r).data()[0];
        assert!((v + 1e8f64.ln()).abs() < 1e-6, "{v}");
    }

    #[test]
    fn identical_heads_and_single_head() {
        let tape = Tape::new();
        let attn = tape.constant(Tensor::new(
            vec![3, 2, 2],
            [0.3f64, 0.7, 0.5, 0.5].repeat(3),
        ));
        let r = head_diversity(&tape, attn, 3).unwrap().unwrap();
        assert!(tape.value(r).data()[0].abs() < 1e-12);
        assert!(head_diversity(&tape, attn, 1).unwrap().is_none());
    }
}
