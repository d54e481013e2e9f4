use super::{softmax, AttnModel, Params};
use crate::geometry::layernorm_vjp;
use crate::linalg::{axpy, Mat};
use crate::par::{map_range, Exec};
use crate::{Error, Result};

/// Loss and its exact gradient with respect to every parameter, for one
/// sequence.
pub fn backward(model: &AttnModel, tokens: &[usize], labels: &[usize]) -> Result<(f64, Params)> {
    let trace = model.forward(tokens)?;
    let loss = super::cross_entropy(&trace.logits, labels)?;
    let p = &model.params;
    let len = tokens.len();
    let d = model.d();
    let inv_sqrt_d = 1.0 / (d as f64).sqrt();

    let mut dlogits = Mat::zeros(len, model.k_out());
    for i in 0..len {
        let probs = softmax(trace.logits.row(i));
        let row = dlogits.row_mut(i);
        for (r, pr) in row.iter_mut().zip(&probs) {
            *r = pr / len as f64;
        }
        row[labels[i]] -= 1.0 / len as f64;
    }

    let mut grads = Params::zeros_like(p);
    grads.head = trace.residual.t_matmul(&dlogits);
    // d residual; flows into both h (skip path) and the context.
    let dres = dlogits.matmul_t(&p.head);
    let mut dh = dres.clone();

    let dattn = dres.matmul_t(&trace.values);
    let dvalues = trace.attn_weights.t_matmul(&dres);
    let mut dscores = Mat::zeros(len, len);
    for i in 0..len {
        let a = trace.attn_weights.row(i);
        let g = dattn.row(i);
        let inner: f64 = a.iter().zip(g).map(|(x, y)| x * y).sum();
        for (j, ds) in dscores.row_mut(i).iter_mut().enumerate() {
            *ds = a[j] * (g[j] - inner) * inv_sqrt_d;
        }
    }
    let dqueries = dscores.matmul(&trace.keys);
    let dkeys = dscores.t_matmul(&trace.queries);

    let h = &trace.normed_inputs;
    grads.query = h.t_matmul(&dqueries);
    grads.key = h.t_matmul(&dkeys);
    grads.value = h.t_matmul(&dvalues);
    dh.add_assign(&dqueries.matmul_t(&p.query));
    dh.add_assign(&dkeys.matmul_t(&p.key));
    dh.add_assign(&dvalues.matmul_t(&p.value));

    for (i, &t) in tokens.iter().enumerate() {
        let dx = layernorm_vjp(trace.inputs.row(i), model.ln_variant, dh.row(i))?;
        axpy(1.0, &dx, grads.embed.row_mut(t));
        if let Some(pos) = &mut grads.pos {
            axpy(1.0, &dx, pos.row_mut(i));
        }
    }
    Ok((loss, grads))
}

/// Sequences per work item in [`batch_backward`]. Fixed so that the
/// summation order, and hence every bit of the result, is independent of
/// the thread count.
const CHUNK: usize = 16;

/// Mean loss and mean gradient over a batch of `(tokens, labels)` pairs.
pub fn batch_backward(
    model: &AttnModel,
    batch: &[(&[usize], &[usize])],
    exec: Exec,
) -> Result<(f64, Params)> {
    if batch.is_empty() {
        return Err(Error::Precondition("empty batch".into()));
    }
    let chunks = batch.len().div_ceil(CHUNK);
    let partial = map_range(exec, chunks, |c| -> Result<(f64, Params)> {
        let mut loss = 0.0;
        let mut acc = Params::zeros_like(&model.params);
        for (tokens, labels) in &batch[c * CHUNK..((c + 1) * CHUNK).min(batch.len())] {
            let (l, g) = backward(model, tokens, labels)?;
            loss += l;
            acc.add_assign(&g);
        }
        Ok((loss, acc))
    });
    let mut loss = 0.0;
    let mut grads = Params::zeros_like(&model.params);
    for part in partial {
        let (l, g) = part?;
        loss += l;
        grads.add_assign(&g);
    }
    let scale = 1.0 / batch.len() as f64;
    grads.scale(scale);
    Ok((loss * scale, grads))
}
