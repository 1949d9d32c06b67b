use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::objective::{elbo_on_tape, mean_nll};
use crate::autodiff::{Adam, AdamConfig, Checkpoint, ParamGrads, Tape};
use crate::data::TrainingExample;
use crate::error::{Error, Result};
use crate::model::WeightRegistry;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// β rises linearly from 0 to 1 over this many steps; 0 means β = 1.
    pub kl_anneal_steps: usize,
    /// Global gradient-norm cap; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Validation NLL is logged every this many steps, and at the first and
    /// last step.
    pub eval_every: usize,
    /// Periodic evaluation uses every `val_stride`-th validation example.
    pub val_stride: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            steps: 230,
            batch_size: 8,
            learning_rate: 3e-3,
            kl_anneal_steps: 50,
            grad_clip: Some(10.0),
            eval_every: 10,
            val_stride: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.eval_every == 0 || self.val_stride == 0 {
            return Err(Error::Config(
                "batch_size, eval_every and val_stride must be positive".into(),
            ));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(
                "learning_rate must be finite and non-negative".into(),
            ));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config("grad_clip must be positive".into()));
            }
        }
        Ok(())
    }

    /// KL weight used at 1-based `step`.
    pub fn beta(&self, step: usize) -> f64 {
        if self.kl_anneal_steps == 0 {
            1.0
        } else {
            (step.saturating_sub(1) as f64 / self.kl_anneal_steps as f64).min(1.0)
        }
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    /// Mean per-example ELBO of the step's batch.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_elbo: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_nll: Option<f64>,
    pub beta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_norm: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub records: Vec<MetricsRecord>,
    pub initial_val_nll: Option<f64>,
    pub final_val_nll: Option<f64>,
    pub checkpoint: Checkpoint,
}

/// Gradient of the mean batch loss `−ELBO`, and the mean ELBO.
pub fn batch_gradient(
    reg: &WeightRegistry,
    batch: &[&TrainingExample],
    beta: f64,
) -> Result<(ParamGrads, f64)> {
    let mut grads = ParamGrads::empty(reg.store().len());
    let mut total = 0.0;
    for ex in batch {
        let mut tape = Tape::new();
        let e = elbo_on_tape(&mut tape, reg, ex, beta)?;
        let loss = tape.neg(e);
        let value = tape.value(e).data()[0];
        if !value.is_finite() {
            return Err(Error::Divergence {
                step: 0,
                detail: format!("non-finite ELBO on example {}@{}", ex.play_id, ex.t),
            });
        }
        total += value;
        grads.accumulate(&tape.backward(loss)?.param_grads(reg.store()));
    }
    let n = batch.len() as f64;
    grads.scale(1.0 / n);
    Ok((grads, total / n))
}

/// Minibatch ascent on the ELBO with Adam. `on_record` sees every metrics
/// line as it is produced.
pub fn train(
    reg: &mut WeightRegistry,
    train_set: &[TrainingExample],
    val_set: &[TrainingExample],
    cfg: &TrainConfig,
    mut on_record: impl FnMut(&MetricsRecord) -> Result<()>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let val: Vec<TrainingExample> = val_set.iter().step_by(cfg.val_stride).cloned().collect();
    let evaluate = |reg: &WeightRegistry| -> Result<Option<f64>> {
        if val.is_empty() {
            Ok(None)
        } else {
            mean_nll(&val, reg).map(Some)
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..AdamConfig::default()
        },
        reg.store(),
    );
    let mut records = Vec::with_capacity(cfg.steps + 1);
    let initial = evaluate(reg)?;
    let first = MetricsRecord {
        step: 0,
        train_elbo: None,
        val_nll: initial,
        beta: cfg.beta(0),
        grad_norm: None,
    };
    on_record(&first)?;
    records.push(first);
    let mut last_val = initial;

    for step in 1..=cfg.steps {
        let beta = cfg.beta(step);
        let batch: Vec<&TrainingExample> = (0..cfg.batch_size)
            .map(|_| &train_set[rng.random_range(0..train_set.len())])
            .collect();
        let (mut grads, mean_elbo) = batch_gradient(reg, &batch, beta).map_err(|e| match e {
            Error::Divergence { detail, .. } => Error::Divergence { step, detail },
            other => other,
        })?;
        let norm = grads.global_norm();
        if !norm.is_finite() || !grads.all_finite() {
            return Err(Error::Divergence {
                step,
                detail: format!("gradient norm {norm}"),
            });
        }
        if let Some(cap) = cfg.grad_clip {
            if norm > cap {
                grads.scale(cap / norm);
            }
        }
        adam.step(reg.store_mut(), &grads);

        let val_nll = if step % cfg.eval_every == 0 || step == cfg.steps {
            let v = evaluate(reg)?;
            if let Some(x) = v {
                if !x.is_finite() {
                    return Err(Error::Divergence {
                        step,
                        detail: format!("validation NLL {x}"),
                    });
                }
            }
            last_val = v;
            v
        } else {
            None
        };
        let rec = MetricsRecord {
            step,
            train_elbo: Some(mean_elbo),
            val_nll,
            beta,
            grad_norm: Some(norm),
        };
        on_record(&rec)?;
        records.push(rec);
    }

    let meta = serde_json::json!({
        "seed": cfg.seed,
        "steps": cfg.steps,
        "model": reg.config(),
        "types": reg.types(),
    });
    Ok(TrainReport {
        records,
        initial_val_nll: initial,
        final_val_nll: last_val,
        checkpoint: Checkpoint::from_store(reg.store(), meta),
    })
}
