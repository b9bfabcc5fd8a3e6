use std::collections::BTreeMap;

use super::{Result, TrainError};
use crate::model::{Model, ParameterSet};
use crate::tensor::{Graph, Tensor};

/// Loss, per-parameter gradients and logits of one forward/backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradients {
    pub loss: f64,
    pub grads: BTreeMap<String, Tensor>,
    pub logits: Tensor,
}

/// Mean BCE over `[B, A]` targets and its gradient for every parameter.
pub fn batch_gradients(
    model: &Model,
    params: &ParameterSet,
    images: &Tensor,
    labels: &Tensor,
    pos_weight: Option<&[f64]>,
) -> Result<BatchGradients> {
    let mut g = Graph::<f64>::new();
    let pv = params.bind(&mut g, true);
    let x = g.constant(images.clone());
    let logits = model.forward(&mut g, &pv, x)?;
    let loss = g.bce_with_logits(logits, labels, pos_weight)?;
    let loss_value = g.value(loss).item();
    if !loss_value.is_finite() {
        return Err(TrainError::NonFiniteLoss);
    }
    let logits_value = g.value(logits).clone();
    let mut grads = g.backward(loss)?;
    let grads = pv
        .iter()
        .map(|(path, v)| {
            let t = grads
                .take(v)
                .unwrap_or_else(|| Tensor::zeros(params.get(path).expect("bound parameter").shape().to_vec()));
            (path.to_string(), t)
        })
        .collect();
    Ok(BatchGradients {
        loss: loss_value,
        grads,
        logits: logits_value,
    })
}

/// Splits the batch into `num_workers` equal contiguous shards, runs each
/// shard's backward pass on its own thread and averages the results.
///
/// Shard gradients are summed per parameter in shard order and then divided
/// by the shard count, so the result is independent of thread scheduling.
pub fn parallel_gradients(
    model: &Model,
    params: &ParameterSet,
    images: &Tensor,
    labels: &Tensor,
    num_workers: usize,
    pos_weight: Option<&[f64]>,
) -> Result<BatchGradients> {
    let batch = images.shape().first().copied().unwrap_or(0);
    if num_workers == 0 || batch == 0 || batch % num_workers != 0 {
        return Err(TrainError::IndivisibleBatch {
            batch,
            workers: num_workers,
        });
    }
    if num_workers == 1 {
        return batch_gradients(model, params, images, labels, pos_weight);
    }
    let shard = batch / num_workers;
    let shards: Vec<(Tensor, Tensor)> = (0..num_workers)
        .map(|k| Ok((rows(images, k * shard, shard)?, rows(labels, k * shard, shard)?)))
        .collect::<Result<_>>()?;
    let results: Vec<Result<BatchGradients>> = std::thread::scope(|s| {
        let handles: Vec<_> = shards
            .iter()
            .map(|(x, y)| s.spawn(move || batch_gradients(model, params, x, y, pos_weight)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("gradient worker panicked"))
            .collect()
    });
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    average(results)
}

fn average(results: Vec<BatchGradients>) -> Result<BatchGradients> {
    let k = results.len() as f64;
    let mut iter = results.into_iter();
    let first = iter.next().expect("at least one shard");
    let mut loss = first.loss;
    let mut grads = first.grads;
    let mut logits = first.logits.data().to_vec();
    let a = first.logits.shape()[1];
    for r in iter {
        loss += r.loss;
        for (path, g) in r.grads {
            let acc = grads.get_mut(&path).expect("shards share parameters");
            for (d, s) in acc.data_mut().iter_mut().zip(g.data()) {
                *d += s;
            }
        }
        logits.extend_from_slice(r.logits.data());
    }
    for g in grads.values_mut() {
        for v in g.data_mut() {
            *v /= k;
        }
    }
    let n = logits.len() / a;
    Ok(BatchGradients {
        loss: loss / k,
        grads,
        logits: Tensor::new(vec![n, a], logits)?,
    })
}

/// `count` leading-axis rows starting at `start`.
fn rows(t: &Tensor, start: usize, count: usize) -> Result<Tensor> {
    let per = t.len() / t.shape()[0];
    let mut shape = t.shape().to_vec();
    shape[0] = count;
    Ok(Tensor::new(
        shape,
        t.data()[start * per..(start + count) * per].to_vec(),
    )?)
}
