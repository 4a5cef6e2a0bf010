use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::AppGenModel;
use crate::corpus::{AppId, TrajectoryPoint, UserSequence};
use crate::diffusion::{loss_value, training_loss, LossInput};
use crate::error::{Error, Result};
use crate::history::{AttentionParams, NoLog};
use crate::optim::Adam;
use crate::rng::{normal_vec, sub_rng};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    /// Cap on validation examples scored per epoch (a fixed subset).
    pub validation_examples: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 128,
            learning_rate: 1e-2,
            lr_schedule: LrSchedule::Cosine,
            validation_examples: 2048,
            seed: 42,
        }
    }
}

/// Learning-rate curve over the whole run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine from the base rate down to zero at the last batch.
    #[default]
    Cosine,
}

impl LrSchedule {
    /// Rate multiplier after `done` of `total` optimizer steps.
    pub fn factor(self, done: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine => 0.5 * (1.0 + (std::f64::consts::PI * done as f64 / total.max(1) as f64).cos()),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LrSchedule::Constant => "constant",
            LrSchedule::Cosine => "cosine",
        }
    }
}

impl std::str::FromStr for LrSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(LrSchedule::Constant),
            "cosine" => Ok(LrSchedule::Cosine),
            other => Err(Error::invalid(
                "train.lr_schedule",
                format!("unknown schedule `{other}` (expected constant or cosine)"),
            )),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("train.epochs", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("train.batch_size", "must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("train.learning_rate", "must be positive"));
        }
        Ok(())
    }
}

/// Per-epoch losses and the epoch whose parameters were kept.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs_run: usize,
    /// 0-based epoch with the lowest monitored loss.
    pub best_epoch: usize,
    /// Monitored loss of the untrained model.
    pub initial_loss: f64,
    pub train_loss: Vec<f64>,
    /// Empty when no validation data was given; training loss is then
    /// monitored instead.
    pub validation_loss: Vec<f64>,
}

struct Prepared {
    trajectory: Vec<TrajectoryPoint>,
    apps: Vec<AppId>,
}

fn prepare<F: Scalar>(model: &AppGenModel<F>, data: &[UserSequence]) -> Result<Vec<Prepared>> {
    data.iter()
        .map(|s| {
            for e in s.events() {
                if e.app.index() >= model.num_apps() {
                    return Err(Error::UnknownId {
                        domain: "app",
                        id: e.app.to_string(),
                    });
                }
                if e.location.index() >= model.num_locations() {
                    return Err(Error::UnknownId {
                        domain: "location",
                        id: e.location.to_string(),
                    });
                }
            }
            Ok(Prepared {
                trajectory: s.trajectory(),
                apps: s.apps(),
            })
        })
        .collect()
}

fn positions(data: &[Prepared]) -> Vec<(usize, usize)> {
    data.iter()
        .enumerate()
        .flat_map(|(s, p)| (0..p.apps.len()).map(move |i| (s, i)))
        .collect()
}

/// Mean loss over `examples` with noise drawn from a stream seeded by
/// `seed`, so repeated calls score identical draws.
fn monitor_loss<F: Scalar>(model: &AppGenModel<F>, data: &[Prepared], examples: &[(usize, usize)], seed: u64) -> Result<f64> {
    let mut rng = sub_rng(seed, "monitor", 0);
    let d = model.tables.app.dim();
    let cfg = model.config.loss();
    let mut total = 0.0;
    for &(s, i) in examples {
        let p = &data[s];
        let cond = model.conditions(&p.trajectory, &p.apps, i, &mut NoLog)?;
        let target = model.tables.app.row(p.apps[i].index());
        let x0: Vec<F> = target.iter().map(|&v| v * model.scale).collect();
        let t = rng.random_range(1..=model.schedule.steps());
        let eps: Vec<F> = normal_vec(&mut rng, d);
        let input = LossInput {
            x0: &x0,
            target,
            scale: model.scale,
            t,
            eps: &eps,
            hist: &cond.hist,
            ctx: &cond.ctx,
        };
        total += loss_value(&model.denoiser, &model.schedule, &input, &cfg)?.total.as_f64();
    }
    Ok(total / examples.len().max(1) as f64)
}

fn diverged(epoch: usize, batch: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(detail) => Error::Diverged { epoch, batch, detail },
        other => other,
    }
}

/// Trains attention and denoiser with teacher forcing: every position of
/// every training sequence is an example whose history comes from the
/// ground-truth apps. The parameters of the epoch with the lowest
/// validation loss are returned.
pub fn train<F: Scalar>(
    mut model: AppGenModel<F>,
    train_data: &[UserSequence],
    validation: &[UserSequence],
    cfg: &TrainConfig,
) -> Result<(AppGenModel<F>, TrainingMeta)> {
    cfg.validate()?;
    let train_set = prepare(&model, train_data)?;
    let mut examples = positions(&train_set);
    if examples.is_empty() {
        return Err(Error::Empty("training split"));
    }
    let val_set = prepare(&model, validation)?;
    let mut val_examples = positions(&val_set);
    val_examples.shuffle(&mut sub_rng(cfg.seed, "validation-subset", 0));
    val_examples.truncate(cfg.validation_examples);
    val_examples.sort_unstable();
    // without validation data the monitor falls back to a training subset
    let (monitor_set, monitor_examples) = if val_examples.is_empty() {
        let mut sub = examples.clone();
        sub.shuffle(&mut sub_rng(cfg.seed, "validation-subset", 1));
        sub.truncate(cfg.validation_examples.max(1));
        sub.sort_unstable();
        (&train_set, sub)
    } else {
        (&val_set, val_examples)
    };

    let mut rng = sub_rng(cfg.seed, "train", 0);
    let d = model.tables.app.dim();
    let loss_cfg = model.config.loss();
    let train_attention = model.variant != super::AblationVariant::NoHistory;
    let mut opt_den = Adam::new(model.denoiser.len(), cfg.learning_rate);
    let mut opt_att: Vec<Adam<F>> = model.attention.params().iter().map(|p| Adam::new(p.len(), cfg.learning_rate)).collect();
    let mut g_den = vec![F::zero(); model.denoiser.len()];
    let mut g_att = AttentionParams::zeros(model.attention.input_dim, model.attention.attn_dim);

    let initial_loss = monitor_loss(&model, monitor_set, &monitor_examples, cfg.seed)?;
    let mut meta = TrainingMeta {
        seed: cfg.seed,
        initial_loss,
        ..Default::default()
    };
    let mut best = (f64::INFINITY, 0usize, model.attention.clone(), model.denoiser.clone());

    let batches_per_epoch = examples.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * batches_per_epoch;
    for epoch in 0..cfg.epochs {
        examples.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, batch) in examples.chunks(cfg.batch_size).enumerate() {
            let lr = F::of(cfg.learning_rate * cfg.lr_schedule.factor(epoch * batches_per_epoch + b, total_steps));
            opt_den.lr = lr;
            opt_att.iter_mut().for_each(|o| o.lr = lr);
            g_den.iter_mut().for_each(|g| *g = F::zero());
            for m in g_att.params_mut() {
                m.iter_mut().for_each(|g| *g = F::zero());
            }
            for &(s, i) in batch {
                let p = &train_set[s];
                let (hist, trace) = model.history(&p.trajectory, &p.apps, i, &mut NoLog).map_err(|e| diverged(epoch, b, e))?;
                let ctx = model.context(&p.trajectory, i, &mut NoLog)?;
                let target = model.tables.app.row(p.apps[i].index());
                let x0: Vec<F> = target.iter().map(|&v| v * model.scale).collect();
                let t = rng.random_range(1..=model.schedule.steps());
                let eps: Vec<F> = normal_vec(&mut rng, d);
                let input = LossInput {
                    x0: &x0,
                    target,
                    scale: model.scale,
                    t,
                    eps: &eps,
                    hist: &hist,
                    ctx: &ctx,
                };
                let (loss, g_hist) =
                    training_loss(&model.denoiser, &model.schedule, &input, &loss_cfg, &mut g_den).map_err(|e| diverged(epoch, b, e))?;
                if !loss.total.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        batch: b,
                        detail: format!("loss is {} at diffusion step {t}", loss.total),
                    });
                }
                epoch_loss += loss.total.as_f64();
                if let (true, Some((window, tr))) = (train_attention, trace) {
                    model.attention.backward(&window, &tr, &g_hist, &mut g_att);
                }
            }
            let scale = F::one() / F::of_usize(batch.len());
            g_den.iter_mut().for_each(|g| *g *= scale);
            opt_den.step(model.denoiser.as_flat_mut(), &g_den);
            if train_attention {
                for ((opt, p), g) in opt_att.iter_mut().zip(model.attention.params_mut()).zip(g_att.params()) {
                    let g: Vec<F> = g.iter().map(|&x| x * scale).collect();
                    opt.step(p, &g);
                }
            }
            if !crate::scalar::all_finite(model.denoiser.as_flat()) {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    detail: "denoiser parameters became non-finite".into(),
                });
            }
        }
        meta.train_loss.push(epoch_loss / examples.len() as f64);
        let monitored = monitor_loss(&model, monitor_set, &monitor_examples, cfg.seed).map_err(|e| diverged(epoch, 0, e))?;
        if !val_set.is_empty() {
            meta.validation_loss.push(monitored);
        }
        if monitored < best.0 {
            best = (monitored, epoch, model.attention.clone(), model.denoiser.clone());
        }
        meta.epochs_run = epoch + 1;
    }
    meta.best_epoch = best.1;
    model.attention = best.2;
    model.denoiser = best.3;
    Ok((model, meta))
}
