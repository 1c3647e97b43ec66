//! The optimization loop and pooled split evaluation.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;

use crate::data::WindowSample;
use crate::models::{load_into, save_checkpoint, FireModel, ModelConfig, ModelInput};
use crate::objectives::{
    alpha_from_prevalence, average_precision, max_f1, FocalConfig, LossFn, LossKind,
};
use crate::util::stream_rng;

use super::{
    improves, write_json, AdamW, CheckpointChoice, EvalMetrics, EvalPoint, RunRecord, TrainConfig,
    TrainError,
};

/// Resolve a loss kind into concrete hyperparameters from the training
/// split: the class-weighted losses follow the prevalence of positive
/// pixels, the overlap losses use a fixed smoothing epsilon.
pub fn resolve_loss(kind: LossKind, train: &[WindowSample]) -> LossFn {
    let alpha = alpha_from_prevalence(train);
    match kind {
        LossKind::Bce => LossFn::Bce { pos_weight: alpha / (1.0 - alpha) },
        LossKind::Focal => {
            LossFn::Focal(FocalConfig::new(alpha, 2.0).expect("alpha is clamped into range"))
        }
        LossKind::Dice => LossFn::Dice { eps: 1e-6 },
        LossKind::Jaccard => LossFn::Jaccard { eps: 1e-6 },
    }
}

/// Pooled average precision and max-F1 over every valid pixel of `samples`.
pub fn evaluate(model: &FireModel<f32>, samples: &[WindowSample]) -> Result<EvalMetrics, TrainError> {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for sample in samples {
        let proba = model.predict_proba(&ModelInput::from_sample(sample))?;
        for ((&p, &y), &ok) in proba.iter().zip(sample.target.iter()).zip(sample.valid.iter()) {
            if ok {
                scores.push(p as f64);
                labels.push(y > 0.5);
            }
        }
    }
    let ap = average_precision(&scores, &labels);
    let (f1, _) = max_f1(&scores, &labels);
    Ok(EvalMetrics { ap, f1 })
}

fn shuffled_indices(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream_rng(seed, &["shuffle", &epoch.to_string()]));
    idx
}

fn param_norm(model: &FireModel<f32>) -> f64 {
    let sq: f64 = model
        .named_params()
        .iter()
        .map(|(_, t)| t.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>())
        .sum();
    sq.sqrt()
}

/// Run exactly `cfg.iterations` optimizer steps and keep the best model
/// under each selection rule.
///
/// The model is initialized from `cfg.seed`; when the model config names a
/// checkpoint, matching tensors are loaded over that initialization (this
/// is how encoder pretraining enters a run). Validation is evaluated every
/// `cfg.eval_every` steps and at the final step, and both checkpoints are
/// written into `out_dir` together with the run record.
pub fn train_run(
    model_cfg: &ModelConfig,
    train: &[WindowSample],
    val: &[WindowSample],
    cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<RunRecord, TrainError> {
    model_cfg.validate()?;
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if val.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    std::fs::create_dir_all(out_dir).map_err(|source| TrainError::Io {
        action: "create",
        path: out_dir.to_path_buf(),
        source,
    })?;
    let started = Instant::now();

    let mut model = FireModel::<f32>::from_seed(model_cfg.clone(), cfg.seed)?;
    if let Some(warm) = &model_cfg.checkpoint_path {
        load_into(&mut model, Path::new(warm))?;
    }
    let loss = resolve_loss(cfg.loss, train);
    let mut opt = AdamW::<f32>::new(cfg.learning_rate, cfg.weight_decay);
    let mut grads = model.zeros_like();

    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0usize;
    let mut epoch = 0usize;
    let mut evals: Vec<EvalPoint> = Vec::new();
    let mut best_ap: Option<(usize, f64, FireModel<f32>)> = None;
    let mut best_f1: Option<(usize, f64, FireModel<f32>)> = None;
    let inv_batch = 1.0f32 / cfg.batch_size as f32;

    for step in 1..=cfg.iterations {
        for (_, g) in grads.named_params_mut().iter_mut() {
            g.fill(0.0);
        }
        let mut step_loss = 0.0f64;
        for _ in 0..cfg.batch_size {
            if cursor >= order.len() {
                order = shuffled_indices(train.len(), cfg.seed, epoch);
                epoch += 1;
                cursor = 0;
            }
            let sample = &train[order[cursor]];
            cursor += 1;
            let input = ModelInput::from_sample(sample);
            let (logits, trace) = model.forward(&input)?;
            let out = loss.evaluate(logits.view(), sample.target.view(), sample.valid.view());
            step_loss += out.value as f64;
            model.backward(&(out.grad * inv_batch), &trace, &mut grads);
        }
        step_loss /= cfg.batch_size as f64;
        if !step_loss.is_finite() {
            return Err(TrainError::NanLoss { step, param_norm: param_norm(&model) });
        }
        opt.step(&mut model.named_params_mut(), &grads.named_params());

        if step % cfg.eval_every == 0 || step == cfg.iterations {
            let m = evaluate(&model, val)?;
            evals.push(EvalPoint { step, val_ap: m.ap, val_f1: m.f1 });
            if best_ap.as_ref().is_none_or(|(_, v, _)| improves(m.ap, *v)) {
                best_ap = Some((step, m.ap, model.clone()));
            }
            if best_f1.as_ref().is_none_or(|(_, v, _)| improves(m.f1, *v)) {
                best_f1 = Some((step, m.f1, model.clone()));
            }
        }
    }

    let (ap_step, ap_value, ap_model) = best_ap.expect("final step always evaluates");
    let (f1_step, f1_value, f1_model) = best_f1.expect("final step always evaluates");
    let ap_path = out_dir.join("best_ap.fckp");
    let f1_path = out_dir.join("best_f1.fckp");
    save_checkpoint(&ap_model, &ap_path)?;
    save_checkpoint(&f1_model, &f1_path)?;

    let record = RunRecord {
        config_fingerprint: crate::util::fingerprint(
            serde_json::to_string(&(model_cfg, cfg)).expect("serializable configs").as_bytes(),
        ),
        model_config: model_cfg.clone(),
        train_config: cfg.clone(),
        evals,
        best_by_ap: CheckpointChoice { step: ap_step, value: ap_value, path: ap_path },
        best_by_f1: CheckpointChoice { step: f1_step, value: f1_value, path: f1_path },
        wall_seconds: started.elapsed().as_secs_f64(),
        test: None,
    };
    write_json(&out_dir.join("record.json"), &record)?;
    Ok(record)
}
