//! Translation from a [`RunConfig`] to core datasets and configs.

use shiftlab_core::continual::{ContinualConfig, ContinualMethod, HeadMode, RotatedTaskSpec, TwoTaskConfig};
use shiftlab_core::datasets::{
    gen_distractor_text, gen_two_domain_gaussian, inject_label_noise, load_csv, DistractorTextSpec, Split, TwoDomainSpec,
};
use shiftlab_core::diffcore::{Input, LossKind, ModelSpec};
use shiftlab_core::dro::{AdvObjective, DroConfig, Method, NormMode};
use shiftlab_core::seeding::derive_seed;
use shiftlab_core::train::{SelectionMode, TrainConfig};
use shiftlab_core::Dataset;

use crate::config::{Flag, RunConfig};
use crate::error::{HarnessError, Result};

/// Seed streams derived from the run seed.
pub mod stream {
    pub const TRAIN_DATA: u64 = 10;
    pub const VALID_DATA: u64 = 11;
    pub const TEST_DATA: u64 = 12;
    pub const LABEL_NOISE: u64 = 13;
    pub const TASKS: u64 = 20;
    pub const ATTACK: u64 = 30;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
}

fn bad(key: &str, value: &str, reason: &str) -> HarnessError {
    HarnessError::BadValue { key: key.into(), value: value.into(), reason: reason.into() }
}

pub fn two_domain_spec(cfg: &RunConfig, seed: u64) -> Result<TwoDomainSpec> {
    let d = TwoDomainSpec::default();
    Ok(TwoDomainSpec {
        total_points: cfg.opt("n")?.unwrap_or(d.total_points),
        minority_ratio: cfg.opt("minority_ratio")?.unwrap_or(d.minority_ratio),
        sigma: cfg.opt("sigma")?.unwrap_or(d.sigma),
        minority_offset: cfg.opt("minority_offset")?.unwrap_or(d.minority_offset),
        seed,
    })
}

pub fn distractor_spec(cfg: &RunConfig, seed: u64) -> Result<DistractorTextSpec> {
    let d = DistractorTextSpec::default();
    Ok(DistractorTextSpec {
        n: cfg.opt("n")?.unwrap_or(d.n),
        vocab_size: cfg.opt("vocab_size")?.unwrap_or(d.vocab_size),
        seq_len: cfg.opt("seq_len")?.unwrap_or(d.seq_len),
        bias: cfg.opt("bias")?.unwrap_or(d.bias),
        signal: cfg.opt("signal")?.unwrap_or(d.signal),
        purity: cfg.opt("purity")?.unwrap_or(d.purity),
        split: Split::Train,
        seed,
    })
}

/// Train, validation and test data. Validation follows the training
/// distribution; the test split is group-balanced.
pub fn build_splits(cfg: &RunConfig, seed: u64) -> Result<Splits> {
    let valid_n: usize = cfg.get("valid_n")?;
    let test_n: usize = cfg.get("test_n")?;
    let kind = cfg.raw("dataset");
    let mut splits = match kind {
        "two_domain" => {
            let base = two_domain_spec(cfg, derive_seed(seed, stream::TRAIN_DATA))?;
            Splits {
                train: gen_two_domain_gaussian(&base)?,
                valid: gen_two_domain_gaussian(&TwoDomainSpec {
                    total_points: valid_n,
                    seed: derive_seed(seed, stream::VALID_DATA),
                    ..base
                })?,
                test: gen_two_domain_gaussian(&TwoDomainSpec {
                    total_points: test_n,
                    minority_ratio: 0.5,
                    seed: derive_seed(seed, stream::TEST_DATA),
                    ..base
                })?,
            }
        }
        "distractor" => {
            let base = distractor_spec(cfg, derive_seed(seed, stream::TRAIN_DATA))?;
            Splits {
                train: gen_distractor_text(&base)?,
                valid: gen_distractor_text(&DistractorTextSpec {
                    n: valid_n,
                    seed: derive_seed(seed, stream::VALID_DATA),
                    ..base
                })?,
                test: gen_distractor_text(&DistractorTextSpec {
                    n: test_n,
                    split: Split::Test,
                    seed: derive_seed(seed, stream::TEST_DATA),
                    ..base
                })?,
            }
        }
        "csv" => {
            let path = |key: &str| -> Result<String> {
                if cfg.is_set(key) {
                    Ok(cfg.raw(key).to_string())
                } else {
                    Err(bad(key, "", "required when dataset = csv"))
                }
            };
            Splits {
                train: load_csv(path("train_csv")?)?,
                valid: load_csv(path("valid_csv")?)?,
                test: load_csv(path("test_csv")?)?,
            }
        }
        other => return Err(bad("dataset", other, "expected two_domain, distractor or csv")),
    };
    let p: f64 = cfg.get("label_noise")?;
    if p > 0.0 {
        splits.train = inject_label_noise(&splits.train, p, derive_seed(seed, stream::LABEL_NOISE))?;
    }
    Ok(splits)
}

fn max_token(data: &Dataset) -> Option<u32> {
    data.examples
        .iter()
        .filter_map(|e| match &e.input {
            Input::Tokens(t) => t.iter().copied().max(),
            Input::Dense(_) => None,
        })
        .max()
}

pub fn model_spec(cfg: &RunConfig, splits: &Splits) -> Result<ModelSpec> {
    let classes = splits.train.num_classes;
    let dense = splits.train.input_dim();
    let default = if dense.is_some() { "linear" } else { "embed_bag" };
    let kind = if cfg.is_set("model") { cfg.raw("model") } else { default };
    let need_dense = || dense.ok_or_else(|| bad("model", kind, "needs dense features"));
    match kind {
        "linear" => Ok(ModelSpec::linear(need_dense()?, classes)),
        "mlp" => Ok(ModelSpec::mlp(need_dense()?, cfg.get("hidden_units")?, classes)),
        "embed_bag" => {
            if dense.is_some() {
                return Err(bad("model", kind, "needs token data"));
            }
            let seen = [&splits.train, &splits.valid, &splits.test]
                .iter()
                .filter_map(|d| max_token(d))
                .max()
                .map_or(0, |t| t as usize + 1);
            let vocab = cfg.opt::<usize>("vocab_size")?.unwrap_or(0).max(seen).max(2);
            Ok(ModelSpec::embed_bag(vocab, cfg.get("embed_dim")?, classes))
        }
        other => Err(bad("model", other, "expected linear, mlp or embed_bag")),
    }
}

pub fn parse_loss_kind(key: &str, s: &str) -> Result<LossKind> {
    match s {
        "nll" => Ok(LossKind::Nll),
        "zero_one" => Ok(LossKind::ZeroOne),
        other => Err(bad(key, other, "expected nll or zero_one")),
    }
}

pub fn dro_config(cfg: &RunConfig) -> Result<DroConfig> {
    let d = DroConfig::default();
    let c = DroConfig {
        method: cfg.get::<Method>("method")?,
        lr: cfg.opt("lr")?.unwrap_or(d.lr),
        tau: cfg.opt("tau")?.unwrap_or(d.tau),
        kappa: cfg.opt("kappa")?.unwrap_or(d.kappa),
        k_window: cfg.opt("k_window")?.unwrap_or(d.k_window),
        adv_lr: cfg.opt("adv_lr")?.unwrap_or(d.adv_lr),
        eta_group: cfg.opt("eta_group")?.unwrap_or(d.eta_group),
        beta_selfnorm: cfg.opt("beta")?.unwrap_or(d.beta_selfnorm),
        norm_mode: cfg.opt::<NormMode>("norm_mode")?.unwrap_or(d.norm_mode),
        adv_objective: cfg.opt::<AdvObjective>("adv_objective")?.unwrap_or(d.adv_objective),
        project: cfg.opt::<Flag>("project")?.map_or(d.project, |f| f.0),
        adv_steps_per_model_step: cfg.opt("adv_steps")?.unwrap_or(d.adv_steps_per_model_step),
        adv_sigma: cfg.opt("adv_sigma")?.unwrap_or(d.adv_sigma),
    };
    c.validate()?;
    Ok(c)
}

pub fn train_config(cfg: &RunConfig, seed: u64) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    Ok(TrainConfig {
        dro: dro_config(cfg)?,
        epochs: cfg.opt("epochs")?.unwrap_or(d.epochs),
        batch_size: cfg.opt("batch_size")?.unwrap_or(d.batch_size),
        seed,
        selection: cfg.opt::<SelectionMode>("selection")?.unwrap_or(d.selection),
        selection_loss: match cfg.opt::<String>("selection_loss")? {
            Some(s) => parse_loss_kind("selection_loss", &s)?,
            None => d.selection_loss,
        },
        kl_threshold: cfg.opt("kl_threshold")?.unwrap_or(d.kl_threshold),
    })
}

pub fn continual_config(cfg: &RunConfig, seed: u64) -> Result<ContinualConfig> {
    let d = ContinualConfig::default();
    let heads = match cfg.opt::<String>("heads")?.as_deref() {
        None => d.heads,
        Some("shared") => HeadMode::Shared,
        Some("per_task") => HeadMode::PerTask,
        Some(other) => return Err(bad("heads", other, "expected shared or per_task")),
    };
    let c = ContinualConfig {
        method: cfg.get::<ContinualMethod>("cl_method")?,
        lr: cfg.opt("lr")?.unwrap_or(d.lr),
        epochs_per_task: cfg.opt("epochs_per_task")?.unwrap_or(d.epochs_per_task),
        batch_size: cfg.opt("batch_size")?.unwrap_or(d.batch_size),
        alpha: cfg.opt("alpha")?.unwrap_or(d.alpha),
        gamma: cfg.opt("gamma")?.unwrap_or(d.gamma),
        ewc_lambda: cfg.opt("ewc_lambda")?.unwrap_or(d.ewc_lambda),
        memory_capacity: cfg.opt("memory_capacity")?.unwrap_or(d.memory_capacity),
        fisher_samples: cfg.opt("fisher_samples")?.unwrap_or(d.fisher_samples),
        heads,
        grad_noise: cfg.opt("grad_noise")?.unwrap_or(d.grad_noise),
        seed,
    };
    c.validate()?;
    Ok(c)
}

pub fn rotated_spec(cfg: &RunConfig, seed: u64) -> Result<RotatedTaskSpec> {
    let d = RotatedTaskSpec::default();
    Ok(RotatedTaskSpec {
        num_tasks: cfg.opt("num_tasks")?.unwrap_or(d.num_tasks),
        train_per_task: cfg.opt("train_per_task")?.unwrap_or(d.train_per_task),
        test_per_task: cfg.opt("test_per_task")?.unwrap_or(d.test_per_task),
        dim: cfg.opt("dim")?.unwrap_or(d.dim),
        separation: cfg.opt("separation")?.unwrap_or(d.separation),
        feature_decay: cfg.opt("feature_decay")?.unwrap_or(d.feature_decay),
        seed: derive_seed(seed, stream::TASKS),
    })
}

pub fn two_task_config(cfg: &RunConfig, seed: u64) -> Result<TwoTaskConfig> {
    let d = TwoTaskConfig::default();
    Ok(TwoTaskConfig {
        points_per_task: cfg.opt("points_per_task")?.unwrap_or(d.points_per_task),
        t1_steps: cfg.opt("t1_steps")?.unwrap_or(d.t1_steps),
        t2_steps: cfg.opt("t2_steps")?.unwrap_or(d.t2_steps),
        lr: cfg.opt("lr")?.unwrap_or(d.lr),
        alpha: cfg.opt("alpha")?.unwrap_or(d.alpha),
        gamma: cfg.opt("gamma")?.unwrap_or(d.gamma),
        grad_noise: cfg.opt("grad_noise")?.unwrap_or(d.grad_noise),
        fisher_samples: cfg.opt("fisher_samples")?.unwrap_or(d.fisher_samples),
        seed,
    })
}
