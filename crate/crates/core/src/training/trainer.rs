//! Epoch loop: shuffled mini-batches, one Adam step per batch, validation
//! after every epoch, plateau decay and best-validation selection.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, Moments};
use super::loss::{entry_loss, LossKind, MAPE_FLOOR};
use crate::error::{Error, Result};
use crate::labeling::PHASES;
use crate::neural::{backward, forward, init_params, Checkpoint, LstmParams, Peephole};
use crate::sequencer::{make_batches, Dataset, SampleIndex, SampleRef, BATCH_SIZE};

fn default_lr() -> f64 {
    0.01
}
fn default_factor() -> f64 {
    0.3
}
fn default_patience() -> u32 {
    1
}
fn default_epochs() -> u32 {
    10
}
fn default_batch() -> usize {
    BATCH_SIZE
}
fn default_floor() -> f64 {
    MAPE_FLOOR
}
fn default_neurons() -> usize {
    12
}
fn default_one() -> usize {
    1
}
fn default_chunk() -> usize {
    25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default = "default_factor")]
    pub plateau_factor: f64,
    #[serde(default = "default_patience")]
    pub plateau_patience: u32,
    #[serde(default = "default_epochs")]
    pub epochs: u32,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_floor")]
    pub mape_floor: f64,
    #[serde(default = "default_neurons")]
    pub neurons: usize,
    #[serde(default)]
    pub peephole: Peephole,
    /// Keep every n-th training sample.
    #[serde(default = "default_one")]
    pub train_stride: usize,
    /// Keep every n-th validation sample.
    #[serde(default = "default_one")]
    pub val_stride: usize,
    /// Samples per gradient work unit; fixes the summation order.
    #[serde(default = "default_chunk")]
    pub chunk_size: usize,
}

impl TrainConfig {
    pub fn new(loss: LossKind) -> Self {
        TrainConfig {
            loss,
            learning_rate: default_lr(),
            adam: AdamConfig::default(),
            plateau_factor: default_factor(),
            plateau_patience: default_patience(),
            epochs: default_epochs(),
            batch_size: default_batch(),
            seed: 0,
            mape_floor: default_floor(),
            neurons: default_neurons(),
            peephole: Peephole::default(),
            train_stride: 1,
            val_stride: 1,
            chunk_size: default_chunk(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor <= 1.0) {
            return bad("plateau factor must be in (0, 1]");
        }
        if self.neurons == 0 || self.batch_size == 0 || self.chunk_size == 0 {
            return bad("neurons, batch size and chunk size must be positive");
        }
        if self.train_stride == 0 || self.val_stride == 0 {
            return bad("strides must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub improved: bool,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub loss: LossKind,
    /// Validation loss of the initial parameters.
    pub baseline_val_loss: f64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: u32,
    pub best_val_loss: f64,
}

impl TrainReport {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("epoch\tlearning_rate\ttrain_loss\tval_loss\timproved\tbest\tcheckpoint\n");
        for e in &self.epochs {
            s.push_str(&format!(
                "{}\t{}\t{:.9}\t{:.9}\t{}\t{}\t{}\n",
                e.epoch,
                e.learning_rate,
                e.train_loss,
                e.val_loss,
                e.improved,
                e.epoch == self.best_epoch,
                e.checkpoint.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
            ));
        }
        s
    }
}

/// Sum of entry losses, valid entry count and summed gradient over `refs`.
/// Work is split into fixed chunks and reduced in index order, so the result
/// does not depend on the thread count.
pub fn batch_gradient(
    params: &LstmParams,
    data: &Dataset,
    refs: &[SampleRef],
    kind: LossKind,
    mape_floor: f64,
    chunk: usize,
) -> Result<(f64, usize, Vec<f64>)> {
    let parts: Vec<Result<(f64, usize, LstmParams)>> = refs
        .par_chunks(chunk.max(1))
        .map(|c| {
            let mut g = params.zeros_like();
            let mut loss = 0.0;
            let mut count = 0;
            for &r in c {
                let s = data.sample(r);
                let cache = forward(s.window, params)?;
                let mut dy = [0.0; PHASES];
                for k in 0..PHASES {
                    if s.mask[k] {
                        let (l, d) = entry_loss(kind, cache.prediction[k], s.target[k], mape_floor);
                        loss += l;
                        dy[k] = d;
                        count += 1;
                    }
                }
                backward(&cache, &dy, params, &mut g);
            }
            Ok((loss, count, g))
        })
        .collect();
    let mut total = 0.0;
    let mut count = 0;
    let mut grad = vec![0.0; params.len()];
    for part in parts {
        let (l, c, g) = part?;
        total += l;
        count += c;
        for (a, b) in grad.iter_mut().zip(&g.data) {
            *a += b;
        }
    }
    Ok((total, count, grad))
}

/// Mean loss of `kind` over every valid entry of `refs`.
pub fn mean_loss(params: &LstmParams, data: &Dataset, refs: &[SampleRef], kind: LossKind, mape_floor: f64, chunk: usize) -> Result<f64> {
    let parts: Vec<Result<(f64, usize)>> = refs
        .par_chunks(chunk.max(1))
        .map(|c| {
            let mut loss = 0.0;
            let mut count = 0;
            for &r in c {
                let s = data.sample(r);
                let pred = forward(s.window, params)?.prediction;
                for k in (0..PHASES).filter(|&k| s.mask[k]) {
                    loss += entry_loss(kind, pred[k], s.target[k], mape_floor).0;
                    count += 1;
                }
            }
            Ok((loss, count))
        })
        .collect();
    let (mut total, mut count) = (0.0, 0usize);
    for p in parts {
        let (l, c) = p?;
        total += l;
        count += c;
    }
    if count == 0 {
        return Err(Error::NoValidEntries);
    }
    Ok(total / count as f64)
}

/// Optimizer state for one model.
pub struct Trainer {
    pub params: LstmParams,
    pub moments: Moments,
    pub step: u64,
    pub adam: AdamConfig,
    pub kind: LossKind,
    pub mape_floor: f64,
    pub chunk: usize,
}

impl Trainer {
    pub fn new(params: LstmParams, config: &TrainConfig) -> Self {
        Trainer {
            moments: Moments::zeros(params.len()),
            params,
            step: 0,
            adam: config.adam,
            kind: config.loss,
            mape_floor: config.mape_floor,
            chunk: config.chunk_size,
        }
    }

    /// One Adam step on the batch-mean loss; returns (loss sum, valid count).
    pub fn run_batch(&mut self, data: &Dataset, refs: &[SampleRef], lr: f64, batch_id: usize) -> Result<(f64, usize)> {
        let (loss, count, mut grad) =
            batch_gradient(&self.params, data, refs, self.kind, self.mape_floor, self.chunk).map_err(|e| match e {
                Error::NonFiniteActivation { detail, .. } => Error::NonFiniteActivation { batch: batch_id, detail },
                other => other,
            })?;
        if count == 0 {
            return Err(Error::NoValidEntries);
        }
        let scale = 1.0 / count as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        self.step += 1;
        adam_step(&mut self.params.data, &grad, &mut self.moments, self.step, lr, &self.adam);
        if !self.params.is_finite() {
            return Err(Error::NonFiniteActivation {
                batch: batch_id,
                detail: "parameters left the finite range after the update".into(),
            });
        }
        Ok((loss, count))
    }
}

/// Train from `init`, calling `validate` for the baseline and after every
/// epoch and `on_epoch` with each epoch's checkpoint.
pub fn fit_with<V, S>(
    data: &Dataset,
    index: &SampleIndex,
    init: LstmParams,
    config: &TrainConfig,
    mut validate: V,
    mut on_epoch: S,
) -> Result<(TrainReport, Checkpoint)>
where
    V: FnMut(&LstmParams) -> Result<f64>,
    S: FnMut(&Checkpoint) -> Result<Option<PathBuf>>,
{
    config.validate()?;
    if index.is_empty() {
        return Err(Error::NoValidEntries);
    }
    let hash = data.manifest_hash().unwrap_or([0; 32]);
    let mut trainer = Trainer::new(init, config);
    let baseline = validate(&trainer.params)?;
    let mut best_seen = baseline;
    let mut best: Option<Checkpoint> = None;
    let mut lr = config.learning_rate;
    let mut stale = 0u32;
    let mut epochs = Vec::new();
    let mut batch_id = 0usize;

    for epoch in 1..=config.epochs {
        let epoch_lr = lr;
        let (mut loss_sum, mut count) = (0.0, 0usize);
        for batch in make_batches(index.len(), config.batch_size, config.seed, epoch as u64) {
            let refs: Vec<SampleRef> = batch.iter().map(|&i| index.refs[i as usize]).collect();
            let (l, c) = trainer.run_batch(data, &refs, lr, batch_id)?;
            loss_sum += l;
            count += c;
            batch_id += 1;
        }
        let val = validate(&trainer.params)?;
        let ck = Checkpoint {
            params: trainer.params.clone(),
            loss: config.loss,
            epoch,
            val_loss: val,
            manifest_hash: hash,
        };
        let path = on_epoch(&ck)?;
        let improved = val < best_seen;
        if improved {
            best_seen = val;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.plateau_patience {
                lr *= config.plateau_factor;
                stale = 0;
            }
        }
        if best.as_ref().map_or(true, |b| val < b.val_loss) {
            best = Some(ck);
        }
        log::info!("{} epoch {epoch}: lr {epoch_lr} train {:.6} val {val:.6}", config.loss, loss_sum / count.max(1) as f64);
        epochs.push(EpochRecord {
            epoch,
            learning_rate: epoch_lr,
            train_loss: loss_sum / count.max(1) as f64,
            val_loss: val,
            improved,
            checkpoint: path,
        });
    }
    let best = best.unwrap_or_else(|| Checkpoint {
        params: trainer.params.clone(),
        loss: config.loss,
        epoch: 0,
        val_loss: baseline,
        manifest_hash: hash,
    });
    let report = TrainReport {
        loss: config.loss,
        baseline_val_loss: baseline,
        epochs,
        best_epoch: best.epoch,
        best_val_loss: best.val_loss,
    };
    Ok((report, best))
}

/// Train on `train`, validate on `val`, and write per-epoch checkpoints,
/// `best.ckpt` and `train-report.tsv` under `out_dir` when given.
pub fn train(
    train: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<(TrainReport, Checkpoint)> {
    if train.manifest_hash() != val.manifest_hash() {
        return Err(Error::HashMismatch {
            expected: hex::encode(train.manifest_hash().unwrap_or_default()),
            found: hex::encode(val.manifest_hash().unwrap_or_default()),
        });
    }
    let index = train.index().strided(config.train_stride, 0);
    let val_index = val.index().strided(config.val_stride, 0);
    let init = init_params(train.feature_count, config.neurons, config.seed, config.peephole);
    if let Some(d) = out_dir {
        std::fs::create_dir_all(d)?;
    }
    let validate = |p: &LstmParams| mean_loss(p, val, &val_index.refs, config.loss, config.mape_floor, config.chunk_size);
    let save = |ck: &Checkpoint| -> Result<Option<PathBuf>> {
        match out_dir {
            Some(d) => {
                let name = format!("epoch-{:02}.ckpt", ck.epoch);
                ck.save(d.join(&name))?;
                Ok(Some(PathBuf::from(name)))
            }
            None => Ok(None),
        }
    };
    let (report, best) = fit_with(train, &index, init, config, validate, save)?;
    if let Some(d) = out_dir {
        best.save(d.join("best.ckpt"))?;
        let mut f = std::fs::File::create(d.join("train-report.tsv"))?;
        f.write_all(report.to_tsv().as_bytes())?;
    }
    Ok((report, best))
}
