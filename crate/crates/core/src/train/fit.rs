//! Epoch loop, validation and the multi-fold protocol.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::metrics::{binarize_logits, f1_iou, mean_var};
use super::optim::Adam;
use super::plan::{cosine_lr, split_folds, TrainPlan};
use crate::arch::{build_model, Mode, Model, UNeXtConfig};
use crate::error::{Error, Result};
use crate::io::{save_checkpoint_with, Dataset};
use crate::tensor::Tape;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_f1: Option<f64>,
    pub val_iou: Option<f64>,
}

pub const LOG_HEADER: &str = "epoch,lr,train_loss,val_f1,val_iou";

pub fn log_csv(logs: &[EpochLog]) -> String {
    let mut s = format!("{LOG_HEADER}\n");
    let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
    for l in logs {
        let _ = writeln!(s, "{},{:e},{:.8},{},{}", l.epoch, l.lr, l.train_loss, opt(l.val_f1), opt(l.val_iou));
    }
    s
}

/// Mean per-sample `(f1, iou)` of eval-mode predictions on `ids`.
pub fn evaluate(model: &Model<f32>, data: &Dataset, ids: &[usize]) -> Result<(f64, f64)> {
    if ids.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let (mut f1_sum, mut iou_sum) = (0.0, 0.0);
    for &i in ids {
        let s = &data.samples[i];
        let shape = s.image.shape();
        let x = s.image.clone().reshape(&[1, shape[0], shape[1], shape[2]])?;
        let pred = binarize_logits(&model.infer(&x)?);
        let (f1, iou) = f1_iou(&pred, &s.mask.clone().reshape(pred.shape())?)?;
        f1_sum += f1;
        iou_sum += iou;
    }
    let n = ids.len() as f64;
    Ok((f1_sum / n, iou_sum / n))
}

/// Trains `model` in place on `train` ids for `plan.epochs` epochs, calling
/// `on_epoch` after each one.
pub fn train_model(
    model: &mut Model<f32>,
    data: &Dataset,
    train: &[usize],
    val: &[usize],
    plan: &TrainPlan,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    plan.validate()?;
    if train.is_empty() {
        return Err(Error::Contract("empty training split".into()));
    }
    let mut opt = Adam::<f32>::new(plan.lr_max);
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut order = train.to_vec();
    let mut logs = Vec::with_capacity(plan.epochs);
    for epoch in 0..plan.epochs {
        let lr = cosine_lr(epoch, plan)?;
        opt.lr = lr;
        model.set_mode(Mode::Train);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut batches) = (0.0f64, 0usize);
        for ids in order.chunks(plan.batch_size) {
            let (x, y) = data.batch(ids)?;
            let tape = Tape::new();
            let xv = tape.constant(x);
            let logits = model.forward(&tape, &xv)?;
            let loss = tape.bce_dice_loss(&logits, &y)?;
            let value = loss.value().item()? as f64;
            if !value.is_finite() {
                return Err(Error::Training(format!("non-finite loss {value} at epoch {epoch}")));
            }
            let grads = tape.backward(&loss)?;
            opt.step(model.params_mut(), &grads)?;
            loss_sum += value;
            batches += 1;
        }
        model.set_mode(Mode::Eval);
        let last = epoch + 1 == plan.epochs;
        let validate = !val.is_empty() && (last || (plan.eval_every > 0 && (epoch + 1) % plan.eval_every == 0));
        let (val_f1, val_iou) = if validate {
            let (f, i) = evaluate(model, data, val)?;
            (Some(f), Some(i))
        } else {
            (None, None)
        };
        let log = EpochLog { epoch, lr, train_loss: loss_sum / batches as f64, val_f1, val_iou };
        on_epoch(&log);
        logs.push(log);
    }
    model.set_mode(Mode::Eval);
    Ok(logs)
}

#[derive(Debug, Clone, Serialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub f1: f64,
    pub iou: f64,
    pub final_loss: Option<f64>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub folds: Vec<FoldResult>,
    pub f1_mean: f64,
    pub f1_var: f64,
    pub iou_mean: f64,
    pub iou_var: f64,
}

/// Where `fit` writes per-fold artifacts; `None` keeps everything in memory.
#[derive(Debug, Clone, Default)]
pub struct FitOutput {
    pub dir: Option<PathBuf>,
    /// Extra key=value entries stored in each checkpoint.
    pub meta: Vec<(String, String)>,
}

fn fold_path(dir: &Path, fold: usize, ext: &str) -> PathBuf {
    dir.join(format!("fold{fold}.{ext}"))
}

/// Runs `plan.folds` independent 80/20 splits, each training a fresh model
/// seeded by `(plan.seed, fold)` and evaluating its final epoch.
pub fn fit(
    cfg: &UNeXtConfig,
    data: &Dataset,
    plan: &TrainPlan,
    out: &FitOutput,
    mut on_epoch: impl FnMut(usize, &EpochLog),
) -> Result<(MetricReport, Vec<Model<f32>>)> {
    plan.validate()?;
    if data.is_empty() {
        return Err(Error::Contract("empty dataset".into()));
    }
    if let Some(dir) = &out.dir {
        std::fs::create_dir_all(dir)?;
    }
    let splits = split_folds(data.len(), plan)?;
    let mut folds = Vec::new();
    let mut models = Vec::new();
    for (fold, (train, val)) in splits.into_iter().enumerate() {
        if let Some(dir) = &out.dir {
            let ids = |v: &[usize]| v.iter().map(|&i| data.samples[i].id.clone()).collect::<Vec<_>>().join("\n");
            std::fs::write(fold_path(dir, fold, "train.txt"), ids(&train))?;
            std::fs::write(fold_path(dir, fold, "val.txt"), ids(&val))?;
        }
        let seed = plan.seed.wrapping_add(fold as u64);
        let mut model = build_model::<f32>(cfg, seed)?;
        let fold_plan = TrainPlan { seed, ..plan.clone() };
        let logs = train_model(&mut model, data, &train, &val, &fold_plan, |l| on_epoch(fold, l))?;
        model.set_mode(Mode::Eval);
        let (f1, iou) = evaluate(&model, data, &val)?;
        let checkpoint = match &out.dir {
            Some(dir) => {
                std::fs::write(fold_path(dir, fold, "csv"), log_csv(&logs))?;
                let path = fold_path(dir, fold, "ckpt");
                let meta: Vec<(&str, String)> = out.meta.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
                save_checkpoint_with(&model, &path, &meta)?;
                Some(path)
            }
            None => None,
        };
        folds.push(FoldResult {
            fold,
            n_train: train.len(),
            n_val: val.len(),
            f1,
            iou,
            final_loss: logs.last().map(|l| l.train_loss),
            checkpoint,
        });
        models.push(model);
    }
    let (f1_mean, f1_var) = mean_var(&folds.iter().map(|f| f.f1).collect::<Vec<_>>());
    let (iou_mean, iou_var) = mean_var(&folds.iter().map(|f| f.iou).collect::<Vec<_>>());
    let report = MetricReport { folds, f1_mean, f1_var, iou_mean, iou_var };
    if let Some(dir) = &out.dir {
        let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Training(e.to_string()))?;
        std::fs::write(dir.join("report.json"), json)?;
    }
    Ok((report, models))
}
