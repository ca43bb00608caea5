//! The training loop: mini-batch AdamW with cosine annealing, per-epoch
//! validation, early stopping, and best-checkpoint retention.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;
use rsfiqa_core::model::{ModelConfig, ModelParams, bind, forward};
use rsfiqa_core::optim::{AdamW, cosine_lr};
use rsfiqa_core::regressor::{ScoreNormalizer, mse_loss};
use rsfiqa_core::tape::Tape;
use rsfiqa_core::{Error, Result, metrics};

use crate::checkpoint::{Checkpoint, EpochLog};
use crate::config::RunConfig;
use crate::data::{DatasetIndex, Split};
use crate::prepare::Prepared;

/// Scores one prepared sample without touching gradients. Raw scale: the
/// sigmoid output in (0, 1).
pub fn score_sample(
    mcfg: &ModelConfig,
    params: &ModelParams,
    prep: &Prepared,
    i: usize,
) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = bind(&mut tape, params);
    let y = forward(&mut tape, mcfg, &bound, &prep.images[i], &prep.masks[i], &prep.descs[i])?;
    tape.value(y).item()
}

/// Raw scores for a list of sample indices, in order.
pub fn predict_raw(
    mcfg: &ModelConfig,
    params: &ModelParams,
    prep: &Prepared,
    idx: &[usize],
) -> Result<Vec<f64>> {
    idx.iter().map(|&i| score_sample(mcfg, params, prep, i)).collect()
}

/// Result of a training run. `best` holds the parameters selected on
/// validation; `final_params` is the state after the last epoch.
#[derive(Debug)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub final_params: ModelParams,
    pub log: Vec<EpochLog>,
}

/// Trains on `split.train`, selecting on `split.val`. When the validation
/// split is too small for rank correlation, selection falls back to the
/// train loss and the logged SRCC is NaN.
pub fn train(
    cfg: &RunConfig,
    index: &DatasetIndex,
    prep: &Prepared,
    split: &Split,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    if split.train.is_empty() {
        return Err(Error::EmptyInput { what: "training split" });
    }
    let mcfg = cfg.model_config();
    let train_mos: Vec<f64> = split.train.iter().map(|&i| index.records[i].mos).collect();
    let normalizer = ScoreNormalizer::fit(&train_mos)?;
    let targets: Vec<f64> = normalizer.apply_all(&train_mos);
    let val_mos: Vec<f64> = split.val.iter().map(|&i| index.records[i].mos).collect();

    let mut params = ModelParams::init(&mcfg, cfg.seed)?;
    let lambda_at = params.flat_index_of("rsa.lambda");
    let mut opt = AdamW::new(params.param_count(), cfg.weight_decay);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best_score = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut best_flat = params.flatten();
    let mut best_log_len = 0;
    let mut since_best = 0usize;
    let mut global_batch = 0usize;

    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg.scheduler.t_max, cfg.scheduler.eta_min, cfg.eta_max());
        let mut order: Vec<usize> = (0..split.train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64 + 1));
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let bound = bind(&mut tape, &params);
            let mut preds = Vec::with_capacity(chunk.len());
            let mut batch_targets = Vec::with_capacity(chunk.len());
            for &j in chunk {
                let i = split.train[j];
                preds.push(forward(
                    &mut tape,
                    &mcfg,
                    &bound,
                    &prep.images[i],
                    &prep.masks[i],
                    &prep.descs[i],
                )?);
                batch_targets.push(targets[j]);
            }
            let loss = mse_loss(&mut tape, &preds, &batch_targets)?;
            let loss_val = tape.value(loss).item()?;
            if !loss_val.is_finite() {
                return Err(Error::NonFiniteLoss { batch: global_batch });
            }
            tape.backward(loss)?;
            let mut grads = Vec::with_capacity(params.param_count());
            for v in bound.values() {
                grads.extend_from_slice(tape.grad(v).data());
            }
            let mut flat = params.flatten();
            opt.step(&mut flat, &grads, lr)?;
            // The bias coefficient must stay nonnegative after every update.
            if let Some(li) = lambda_at {
                if flat[li] < 0.0 {
                    flat[li] = 0.0;
                }
            }
            params.assign_flat(&flat)?;
            loss_sum += loss_val * chunk.len() as f64;
            global_batch += 1;
        }
        let train_loss = loss_sum / split.train.len() as f64;

        let val_srcc = if val_mos.len() >= 2 {
            let preds = predict_raw(&mcfg, &params, prep, &split.val)?;
            match metrics::srcc(&preds, &val_mos) {
                Ok(s) => s,
                // A constant predictor carries no rank signal this epoch.
                Err(Error::DegenerateVariance { .. }) => f64::NAN,
                Err(e) => return Err(e),
            }
        } else {
            f64::NAN
        };

        let entry = EpochLog { epoch, train_loss, val_srcc, lr };
        on_epoch(&entry);
        log.push(entry);

        // Higher is better; without a usable validation split the negated
        // train loss stands in. Ties keep the later, longer-trained state.
        let score = if val_mos.len() >= 2 {
            if val_srcc.is_nan() { f64::NEG_INFINITY } else { val_srcc }
        } else {
            -train_loss
        };
        if score > best_score {
            best_score = score;
            best_epoch = epoch;
            best_flat = params.flatten();
            best_log_len = log.len();
            since_best = 0;
        } else {
            if score == best_score {
                best_epoch = epoch;
                best_flat = params.flatten();
                best_log_len = log.len();
            }
            since_best += 1;
        }
        if since_best >= cfg.patience {
            break;
        }
    }

    let mut best_params = ModelParams::init(&mcfg, cfg.seed)?;
    best_params.assign_flat(&best_flat)?;
    let best = Checkpoint {
        config: cfg.clone(),
        normalizer,
        log: log[..best_log_len].to_vec(),
        params: best_params,
    };
    Ok(TrainOutcome { best, best_epoch, final_params: params, log })
}
