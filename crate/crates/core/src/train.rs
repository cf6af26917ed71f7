//! Mini-batch training loop shared by the segmentation network, the
//! translator, and the serial baseline.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::optim::AdadeltaState;
use crate::params::{Bound, ParamGrads, Params};

/// How long and in what chunks to train.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            epochs: 20,
            batch_size: 8,
        }
    }
}

/// Trains `params` in place and returns the mean per-sample loss of each epoch.
///
/// Samples are reshuffled every epoch from a stream seeded by `seed`; the
/// batch gradient is the mean of per-sample gradients, summed in sample
/// order so results are bit-reproducible.
pub(crate) fn fit<S, F>(
    params: &mut Params,
    samples: &[S],
    schedule: Schedule,
    opt: &mut AdadeltaState,
    seed: u64,
    mut loss_fn: F,
) -> Result<Vec<f64>>
where
    F: FnMut(&mut Graph, &Bound, &S) -> Result<Var>,
{
    if schedule.batch_size == 0 {
        return Err(Error::contract("fit", "batch size must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut curve = Vec::with_capacity(schedule.epochs);
    for epoch in 0..schedule.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(schedule.batch_size) {
            let mut acc = ParamGrads::default();
            for &i in batch {
                let mut g = Graph::new();
                let bound = params.bind(&mut g, true);
                let loss = loss_fn(&mut g, &bound, &samples[i])?;
                let value = g.value(loss).item().ok_or_else(|| {
                    Error::contract("fit", "loss function must return a scalar")
                })?;
                if !value.is_finite() {
                    return Err(Error::NonFinite {
                        iteration: epoch,
                        detail: format!("training loss {value} on sample {i}"),
                    });
                }
                total += value;
                acc.add_assign(&bound.gradients(&g.backward(loss)?));
            }
            acc.scale(1.0 / batch.len() as f64);
            opt.step(params, &acc)?;
        }
        curve.push(total / samples.len().max(1) as f64);
    }
    Ok(curve)
}
