use std::fmt::Write as _;

use super::EpochRecord;
use crate::autodiff::Real;
use crate::model::{Model, ModelLayout, ModelOutput};

/// `epoch,loss,val_macro,val_micro`.
pub fn metrics_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,loss,val_macro,val_micro\n");
    for r in history {
        writeln!(
            out,
            "{},{:.8},{:.6},{:.6}",
            r.epoch, r.loss, r.val_macro, r.val_micro
        )
        .expect("write to string");
    }
    out
}

/// `path,hop,value`; label paths carry a `label:` prefix.
pub fn gamma_csv<T: Real>(model: &Model<T>) -> String {
    let mut out = String::from("path,hop,value\n");
    for (key, is_label, values) in model.gamma_values() {
        let name = if is_label {
            format!("label:{key}")
        } else {
            key
        };
        for (hop, v) in values.iter().enumerate() {
            writeln!(out, "{name},{hop},{v:.8}").expect("write to string");
        }
    }
    out
}

/// Influence factor per token averaged over all nodes, in token order.
pub fn beta_means<T: Real>(layout: &ModelLayout, output: &ModelOutput<T>) -> Vec<(String, f64)> {
    let s = layout.num_tokens();
    let rows = output.beta.numel() / s.max(1);
    let mut sums = vec![0.0; s];
    for row in output.beta.data().chunks(s.max(1)) {
        for (acc, v) in sums.iter_mut().zip(row) {
            *acc += v.as_f64();
        }
    }
    layout
        .token_keys()
        .into_iter()
        .zip(sums)
        .map(|(k, total)| (k, if rows == 0 { 0.0 } else { total / rows as f64 }))
        .collect()
}

/// `path,beta`.
pub fn beta_csv<T: Real>(layout: &ModelLayout, output: &ModelOutput<T>) -> String {
    let mut out = String::from("path,beta\n");
    for (k, v) in beta_means(layout, output) {
        writeln!(out, "{k},{v:.8}").expect("write to string");
    }
    out
}
