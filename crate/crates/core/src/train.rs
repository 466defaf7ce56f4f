//! Training regimes: standard, data augmentation, and certifiably robust.
//!
//! The robust objective is the weighted combination
//! (1 − κ)·f + κ·u_final of the clean loss and the IBP upper bound on the
//! worst-case loss. The schedule ramps ε from 0 to 1 and κ from 0 to κ*
//! linearly over the first `t_init` epochs, then holds both for `t_final`
//! epochs. ε = 0 makes the bound collapse onto the clean loss, so a
//! robust run with a zero schedule takes exactly the standard-training
//! path, bit for bit.
//!
//! Early stopping follows the regime: clean dev accuracy for standard
//! training, accuracy on a fixed augmented dev set for augmentation, and
//! certified dev accuracy for robust training.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::eval::{augmented_accuracy, certified_accuracy, clean_accuracy};
use crate::graph::Mode;
use crate::lexicon::{PreparedExample, SubstitutionSpec};
use crate::models::TextModel;
use crate::optim::Optimizer;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Standard,
    Augment,
    Robust,
}

impl Regime {
    pub fn parse(tag: &str) -> Result<Self> {
        match tag {
            "standard" => Ok(Regime::Standard),
            "augment" => Ok(Regime::Augment),
            "robust" => Ok(Regime::Robust),
            other => Err(Error::Config(format!("unknown regime '{other}'"))),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Regime::Standard => "standard",
            Regime::Augment => "augment",
            Regime::Robust => "robust",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub regime: Regime,
    pub kappa_star: f64,
    pub t_init: usize,
    pub t_final: usize,
    /// Hold ε at its maximum from epoch 0 (schedule ablation).
    pub fixed_eps: bool,
    /// Hold κ at κ* from epoch 0.
    pub fixed_kappa: bool,
    /// Ceiling of the ε ramp. 1 is the full perturbation set; 0 makes
    /// robust training coincide with standard training.
    pub eps_max: f64,
    /// Augmentation samples per example.
    pub k_augment: usize,
    /// Redraw augmentation samples every epoch (default) or freeze the
    /// epoch-0 draw.
    pub resample_augment: bool,
    pub lr: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Stop after this many epochs without dev improvement.
    pub early_stop_patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            regime: Regime::Standard,
            kappa_star: 0.8,
            t_init: 10,
            t_final: 10,
            fixed_eps: false,
            fixed_kappa: false,
            eps_max: 1.0,
            k_augment: 4,
            resample_augment: true,
            lr: 1e-3,
            weight_decay: 1e-4,
            grad_clip: 0.25,
            batch_size: 32,
            seed: 0,
            early_stop_patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.kappa_star) {
            return Err(Error::Config("kappa_star must be in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.eps_max) {
            return Err(Error::Config("eps_max must be in [0, 1]".into()));
        }
        if self.k_augment < 1 {
            return Err(Error::Config("k_augment must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let d = TrainConfig::default();
        let cfg = TrainConfig {
            regime: match kv.get("regime") {
                Some(r) => Regime::parse(r)?,
                None => d.regime,
            },
            kappa_star: kv.get_parsed("kappa_star")?.unwrap_or(d.kappa_star),
            t_init: kv.get_parsed("t_init")?.unwrap_or(d.t_init),
            t_final: kv.get_parsed("t_final")?.unwrap_or(d.t_final),
            fixed_eps: kv.get_parsed("fixed_eps")?.unwrap_or(d.fixed_eps),
            fixed_kappa: kv.get_parsed("fixed_kappa")?.unwrap_or(d.fixed_kappa),
            eps_max: kv.get_parsed("eps_max")?.unwrap_or(d.eps_max),
            k_augment: kv.get_parsed("k_augment")?.unwrap_or(d.k_augment),
            resample_augment: kv
                .get_parsed("resample_augment")?
                .unwrap_or(d.resample_augment),
            lr: kv.get_parsed("lr")?.unwrap_or(d.lr),
            weight_decay: kv.get_parsed("weight_decay")?.unwrap_or(d.weight_decay),
            grad_clip: kv.get_parsed("grad_clip")?.unwrap_or(d.grad_clip),
            batch_size: kv.get_parsed("batch_size")?.unwrap_or(d.batch_size),
            seed: kv.get_parsed("seed")?.unwrap_or(d.seed),
            early_stop_patience: kv.get_parsed("early_stop_patience")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Scheduled ε and κ at a given epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleState {
    pub epoch: usize,
    pub eps: f64,
    pub kappa: f64,
}

/// Linear ramp over `t_init` epochs, then constant. `t_init` = 0 starts
/// at the ceiling immediately (the fixed-ε-and-κ ablation).
pub fn schedule(cfg: &TrainConfig, epoch: usize) -> ScheduleState {
    let ramp = if cfg.t_init == 0 {
        1.0
    } else {
        (epoch as f64 / cfg.t_init as f64).min(1.0)
    };
    let eps_ramp = if cfg.fixed_eps { 1.0 } else { ramp };
    let kappa_ramp = if cfg.fixed_kappa { 1.0 } else { ramp };
    ScheduleState {
        epoch,
        eps: cfg.eps_max * eps_ramp,
        kappa: cfg.kappa_star * kappa_ramp,
    }
}

/// The certifiably robust training objective (1 − κ)·f + κ·u_final.
pub fn objective(f: f64, u_final: f64, kappa: f64) -> f64 {
    (1.0 - kappa) * f + kappa * u_final
}

/// One metric observation; serialized as `epoch<TAB>metric<TAB>value`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub epoch: usize,
    pub metric: String,
    pub value: f64,
}

pub fn history_lines(history: &[MetricRecord]) -> String {
    let mut out = String::new();
    for r in history {
        out.push_str(&format!("{}\t{}\t{}\n", r.epoch, r.metric, r.value));
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub history: Vec<MetricRecord>,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub epochs_run: usize,
}

struct EpochPlan {
    eps: f64,
    kappa: f64,
    early_stop_active: bool,
}

fn snapshot(model: &TextModel) -> Vec<Tensor> {
    model.params.iter().map(|(_, p)| p.value.clone()).collect()
}

fn restore(model: &mut TextModel, snap: &[Tensor]) {
    for ((_, p), s) in model.params.iter_mut().zip(snap) {
        p.value = s.clone();
    }
}

/// Dev metric per regime. A robust run with a zero ε ceiling *is*
/// standard training, so it early-stops on clean accuracy like one.
fn dev_metric_name(cfg: &TrainConfig) -> &'static str {
    match cfg.regime {
        Regime::Standard => "dev_acc",
        Regime::Augment => "dev_aug_acc",
        Regime::Robust => {
            if cfg.eps_max == 0.0 {
                "dev_acc"
            } else {
                "dev_cert_acc"
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run_epochs(
    model: &mut TextModel,
    train_data: &[PreparedExample],
    train_specs: &[SubstitutionSpec],
    dev_data: &[PreparedExample],
    dev_specs: &[SubstitutionSpec],
    cfg: &TrainConfig,
    plan: &dyn Fn(usize) -> Option<EpochPlan>,
) -> Result<TrainResult> {
    cfg.validate()?;
    if train_data.len() != train_specs.len() {
        return Err(Error::Precondition(
            "training needs one substitution spec per example".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Optimizer::adam(cfg.lr, &model.params);
    let metric_name = dev_metric_name(cfg);

    // Fixed augmented dev set, drawn once from its own stream.
    let dev_aug_rng_seed = cfg.seed ^ 0x5DEE_CE66_D153_2705;
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Vec<Tensor>)> = None;
    let mut epochs_run = 0;
    let mut frozen_augment: Option<Vec<PreparedExample>> = None;

    let mut epoch = 0;
    while let Some(plan_state) = plan(epoch) {
        let EpochPlan {
            eps,
            kappa,
            early_stop_active,
        } = plan_state;

        // Assemble this epoch's training instances.
        // Items are (example index, Option<perturbed tokens>).
        let mut items: Vec<(usize, Option<Vec<usize>>)> =
            (0..train_data.len()).map(|i| (i, None)).collect();
        if cfg.regime == Regime::Augment {
            if cfg.resample_augment || frozen_augment.is_none() {
                let mut samples = Vec::with_capacity(train_data.len() * cfg.k_augment);
                for (i, spec) in train_specs.iter().enumerate() {
                    for _ in 0..cfg.k_augment {
                        let tokens = spec.sample_uniform(&mut rng);
                        samples.push(PreparedExample {
                            premise: train_data[i].premise.clone(),
                            tokens,
                            label: train_data[i].label,
                        });
                    }
                }
                frozen_augment = Some(samples);
            }
            let aug = frozen_augment.as_ref().expect("augment samples present");
            items.extend((0..aug.len()).map(|j| (usize::MAX, Some(aug[j].tokens.clone()))));
            // Map augmented items back to their source example for labels.
            let mut k = 0;
            for item in items.iter_mut().filter(|(i, _)| *i == usize::MAX) {
                item.0 = k / cfg.k_augment;
                k += 1;
            }
        }
        items.shuffle(&mut rng);

        // The bound collapses at ε = 0, so skip the bound track entirely
        // and train on the plain loss; this is what makes a zero-schedule
        // robust run bit-identical to standard training.
        let use_bounds = cfg.regime == Regime::Robust && eps > 0.0;
        let effective_kappa = if use_bounds { kappa } else { 0.0 };

        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for (batch_no, batch) in items.chunks(cfg.batch_size).enumerate() {
            model.params.zero_grad();
            let mut batch_obj = 0.0;
            for (idx, perturbed) in batch {
                let base = &train_data[*idx];
                let owned;
                let ex: &PreparedExample = match perturbed {
                    None => base,
                    Some(tokens) => {
                        owned = PreparedExample {
                            premise: base.premise.clone(),
                            tokens: tokens.clone(),
                            label: base.label,
                        };
                        &owned
                    }
                };
                let spec = if use_bounds {
                    Some(&train_specs[*idx])
                } else {
                    None
                };
                let mut lg =
                    model.build_loss_graph(ex, spec, if use_bounds { eps } else { 0.0 }, Some(effective_kappa))?;
                lg.graph.forward(&model.params, Mode::Train(&mut rng))?;
                let obj_node = lg.objective.expect("objective requested");
                let obj = lg.graph.value(obj_node).item();
                if !obj.is_finite() {
                    return Err(Error::Training {
                        epoch,
                        batch: batch_no,
                        msg: format!("non-finite objective {obj}"),
                    });
                }
                batch_obj += obj;
                lg.graph
                    .backward(obj_node, 1.0 / batch.len() as f64, &mut model.params)?;
            }
            opt.step(&mut model.params, Some(cfg.grad_clip), cfg.weight_decay)
                .map_err(|e| match e {
                    Error::Training { msg, .. } => Error::Training {
                        epoch,
                        batch: batch_no,
                        msg,
                    },
                    other => other,
                })?;
            epoch_loss += batch_obj / batch.len() as f64;
            batches += 1;
        }
        let train_loss = epoch_loss / batches.max(1) as f64;
        history.push(MetricRecord {
            epoch,
            metric: "train_loss".into(),
            value: train_loss,
        });
        history.push(MetricRecord {
            epoch,
            metric: "eps".into(),
            value: eps,
        });
        history.push(MetricRecord {
            epoch,
            metric: "kappa".into(),
            value: effective_kappa,
        });

        if !dev_data.is_empty() {
            let value = match metric_name {
                "dev_acc" => clean_accuracy(model, dev_data)?,
                "dev_aug_acc" => {
                    let mut aug_rng = ChaCha8Rng::seed_from_u64(dev_aug_rng_seed);
                    augmented_accuracy(model, dev_data, dev_specs, cfg.k_augment, &mut aug_rng)?
                }
                _ => certified_accuracy(model, dev_data, dev_specs)?.0,
            };
            history.push(MetricRecord {
                epoch,
                metric: metric_name.into(),
                value,
            });

            let improved = best.as_ref().map_or(true, |(b, _, _)| value > *b);
            if improved {
                best = Some((value, epoch, snapshot(model)));
            } else if early_stop_active {
                if let Some(patience) = cfg.early_stop_patience {
                    let since = epoch - best.as_ref().map_or(0, |(_, e, _)| *e);
                    if since >= patience {
                        epochs_run = epoch + 1;
                        break;
                    }
                }
            }
        }
        epochs_run = epoch + 1;
        epoch += 1;
    }

    let (best_metric, best_epoch) = match &best {
        Some((value, at, snap)) => {
            restore(model, snap);
            (*value, *at)
        }
        None => (f64::NAN, epochs_run.saturating_sub(1)),
    };
    Ok(TrainResult {
        history,
        best_epoch,
        best_metric,
        epochs_run,
    })
}

/// Train under the configured regime for `t_init` + `t_final` epochs.
///
/// Standard and augmentation runs keep ε = κ = 0 throughout. Robust runs
/// ramp per [`schedule`]. The model keeps its best-dev-metric parameters.
pub fn train(
    model: &mut TextModel,
    train_data: &[PreparedExample],
    train_specs: &[SubstitutionSpec],
    dev_data: &[PreparedExample],
    dev_specs: &[SubstitutionSpec],
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    let total = cfg.t_init + cfg.t_final;
    let plan_cfg = cfg.clone();
    let plan = move |epoch: usize| -> Option<EpochPlan> {
        if epoch >= total {
            return None;
        }
        let s = match plan_cfg.regime {
            Regime::Standard | Regime::Augment => ScheduleState {
                epoch,
                eps: 0.0,
                kappa: 0.0,
            },
            Regime::Robust => schedule(&plan_cfg, epoch),
        };
        Some(EpochPlan {
            eps: s.eps,
            kappa: s.kappa,
            early_stop_active: epoch >= plan_cfg.t_init,
        })
    };
    run_epochs(model, train_data, train_specs, dev_data, dev_specs, cfg, &plan)
}

/// Staged schedule for the first-equals-last memory task: `stage1` epochs
/// of standard training, `stage2` epochs ramping ε to 1 and κ to κ*, then
/// up to `stage3_max` epochs held at the final values with early stopping
/// on certified dev accuracy.
#[derive(Debug, Clone)]
pub struct StagedConfig {
    pub stage1: usize,
    pub stage2: usize,
    pub stage3_max: usize,
    pub base: TrainConfig,
}

impl Default for StagedConfig {
    fn default() -> Self {
        StagedConfig {
            stage1: 50,
            stage2: 50,
            stage3_max: 50,
            base: TrainConfig {
                regime: Regime::Robust,
                kappa_star: 0.5,
                lr: 1e-3,
                weight_decay: 0.0,
                grad_clip: 0.25,
                batch_size: 32,
                early_stop_patience: Some(10),
                ..TrainConfig::default()
            },
        }
    }
}

pub fn staged_train_memory_task(
    model: &mut TextModel,
    train_data: &[PreparedExample],
    train_specs: &[SubstitutionSpec],
    dev_data: &[PreparedExample],
    dev_specs: &[SubstitutionSpec],
    cfg: &StagedConfig,
) -> Result<TrainResult> {
    let staged = cfg.clone();
    let base = {
        let mut b = cfg.base.clone();
        b.regime = Regime::Robust;
        b
    };
    let plan = move |epoch: usize| -> Option<EpochPlan> {
        let s1 = staged.stage1;
        let s2 = staged.stage2;
        if epoch < s1 {
            Some(EpochPlan {
                eps: 0.0,
                kappa: 0.0,
                early_stop_active: false,
            })
        } else if epoch < s1 + s2 {
            let t = (epoch - s1 + 1) as f64 / s2 as f64;
            Some(EpochPlan {
                eps: staged.base.eps_max * t,
                kappa: staged.base.kappa_star * t,
                early_stop_active: false,
            })
        } else if epoch < s1 + s2 + staged.stage3_max {
            Some(EpochPlan {
                eps: staged.base.eps_max,
                kappa: staged.base.kappa_star,
                early_stop_active: true,
            })
        } else {
            None
        }
    };
    run_epochs(model, train_data, train_specs, dev_data, dev_specs, &base, &plan)
}
