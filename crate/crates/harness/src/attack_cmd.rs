use std::path::Path;

use serde_json::json;
use shiftlab_core::advmetrics::{
    adversarial_training_epoch, attack_example, synthetic_vocabulary, AttackKind, AttackOutcome, Constraint,
};
use shiftlab_core::datasets::group_metrics;
use shiftlab_core::diffcore::{Architecture, Input};
use shiftlab_core::seeding::derive_seed;
use shiftlab_core::Error as CoreError;

use crate::config::{Flag, RunConfig};
use crate::error::{HarnessError, Result};
use crate::fsutil::write_csv_atomic;
use crate::metrics::{row, METRICS_HEADER};
use crate::modelio::{load_model, save_model};
use crate::runlog::RunLog;
use crate::setup::{build_splits, stream};

/// Corpus means for one substitution budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackPoint {
    pub substitutions: usize,
    pub s_src: f64,
    pub d_tgt: f64,
    pub success: f64,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackSummary {
    pub points: Vec<AttackPoint>,
    /// Clean test accuracy of the attacked model.
    pub clean_accuracy: f64,
}

pub fn attack_kind(cfg: &RunConfig, vocab_size: usize) -> Result<AttackKind> {
    let unk_id = cfg.opt::<usize>("unk_id")?.unwrap_or(vocab_size - 1);
    match cfg.raw("attack") {
        "char_swap" => Ok(AttackKind::CharSwap { max_scrambling: cfg.get("max_scrambling")?, unk_id }),
        "first_order" => {
            let constraint = match cfg.raw("constraint") {
                "none" => Constraint::None,
                "knn" => Constraint::Knn { k: cfg.get("knn_k")? },
                "char_swap_oov" => Constraint::CharSwapOov { unk_id },
                other => {
                    return Err(HarnessError::BadValue {
                        key: "constraint".into(),
                        value: other.into(),
                        reason: "expected none, knn or char_swap_oov".into(),
                    })
                }
            };
            Ok(AttackKind::FirstOrder { constraint, sign_normalize: cfg.get::<Flag>("sign_normalize")?.0 })
        }
        other => Err(HarnessError::BadValue {
            key: "attack".into(),
            value: other.into(),
            reason: "expected char_swap or first_order".into(),
        }),
    }
}

fn tokens_text(tokens: &[u32]) -> String {
    tokens.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ")
}

/// Attacks the first `attack_n` test examples of the configured dataset with
/// a trained embed_bag model, once per substitution budget.
pub fn run_attack(cfg: &RunConfig, seed: u64, out: &Path) -> Result<AttackSummary> {
    std::fs::create_dir_all(out)?;
    if !cfg.is_set("model_path") {
        return Err(HarnessError::BadValue { key: "model_path".into(), value: String::new(), reason: "required".into() });
    }
    let (_, mut model) = load_model(cfg.raw("model_path"))?;
    let vocab_size = match model.spec().architecture {
        Architecture::EmbedBag { vocab_size, .. } => vocab_size,
        other => return Err(CoreError::UnsupportedArchitecture(format!("{other:?} cannot be attacked; need embed_bag")).into()),
    };
    let splits = build_splits(cfg, seed)?;
    if splits.test.examples.iter().any(|e| matches!(e.input, Input::Dense(_))) {
        return Err(CoreError::UnsupportedArchitecture("token attacks need token data".into()).into());
    }
    let kind = attack_kind(cfg, vocab_size)?;
    let words = synthetic_vocabulary(vocab_size);
    let budgets: Vec<usize> = cfg.list("substitutions")?;
    let n: usize = cfg.get::<usize>("attack_n")?.min(splits.test.len());

    let mut log = RunLog::create(out.join("run.jsonl"))?;
    log.record(&json!({"kind": "config", "command": "attack", "seed": seed, "config": cfg.resolved(), "attack": kind}))?;

    let adv_epochs: usize = cfg.get("adv_train_epochs")?;
    if adv_epochs > 0 {
        let constraint = match kind {
            AttackKind::FirstOrder { constraint, .. } => constraint,
            AttackKind::CharSwap { unk_id, .. } => Constraint::CharSwapOov { unk_id },
        };
        let alpha: f64 = cfg.get("adv_train_alpha")?;
        let lr: f64 = cfg.opt("lr")?.unwrap_or(0.1);
        let bs: usize = cfg.opt("batch_size")?.unwrap_or(64);
        for epoch in 0..adv_epochs {
            let s = derive_seed(seed, stream::ATTACK + 1 + epoch as u64);
            model = adversarial_training_epoch(&model, &splits.train.examples, bs, lr, alpha, constraint, s)?;
            let m = group_metrics(&model, &splits.test)?;
            log.record(&json!({"kind": "adv_train_epoch", "epoch": epoch, "split": "test", "metrics": m}))?;
        }
        save_model(out.join("model.bin"), &model, seed, "attack")?;
    }
    let clean = group_metrics(&model, &splits.test)?;

    let mut perturbed_rows = Vec::new();
    let mut points = Vec::with_capacity(budgets.len());
    for &budget in &budgets {
        let mut sums = (0.0, 0.0, 0.0, 0usize);
        for (i, e) in splits.test.examples.iter().take(n).enumerate() {
            let s = derive_seed(derive_seed(seed, stream::ATTACK), (budget as u64) << 32 | i as u64);
            let o: AttackOutcome = attack_example(&model, e, &words, kind, budget, s)?;
            let sc = o.scores;
            sums.0 += sc.s_src;
            sums.1 += sc.d_tgt;
            sums.2 += sc.success;
            sums.3 += usize::from(sc.is_success());
            let original = match &e.input {
                Input::Tokens(t) => tokens_text(t),
                Input::Dense(_) => unreachable!("checked above"),
            };
            perturbed_rows.push(vec![
                budget.to_string(),
                e.id.to_string(),
                e.label.to_string(),
                original,
                tokens_text(&o.tokens),
                o.text,
                sc.s_src.to_string(),
                sc.d_tgt.to_string(),
                sc.success.to_string(),
            ]);
        }
        let k = n.max(1) as f64;
        let p = AttackPoint {
            substitutions: budget,
            s_src: sums.0 / k,
            d_tgt: sums.1 / k,
            success: sums.2 / k,
            success_rate: sums.3 as f64 / k,
        };
        log.record(&json!({
            "kind": "attack_point",
            "substitutions": budget,
            "s_src": p.s_src,
            "d_tgt": p.d_tgt,
            "success": p.success,
            "success_rate": p.success_rate,
        }))?;
        points.push(p);
    }

    write_csv_atomic(
        out.join("perturbed.csv"),
        &["substitutions", "id", "label", "tokens", "perturbed_tokens", "perturbed_text", "s_src", "d_tgt", "success"],
        &perturbed_rows,
    )?;
    let plot: Vec<Vec<String>> = points
        .iter()
        .map(|p| {
            vec![
                p.substitutions.to_string(),
                p.s_src.to_string(),
                p.d_tgt.to_string(),
                p.success.to_string(),
                p.success_rate.to_string(),
            ]
        })
        .collect();
    write_csv_atomic(out.join("plotdata_attack.csv"), &["substitutions", "s_src", "d_tgt", "success", "success_rate"], &plot)?;
    let mut rows = vec![row("clean", "average_accuracy", None, clean.average_accuracy)];
    for p in &points {
        rows.push(row("attack", "s_src", Some(p.substitutions), p.s_src));
        rows.push(row("attack", "d_tgt", Some(p.substitutions), p.d_tgt));
        rows.push(row("attack", "success", Some(p.substitutions), p.success));
        rows.push(row("attack", "success_rate", Some(p.substitutions), p.success_rate));
    }
    write_csv_atomic(out.join("metrics.csv"), METRICS_HEADER, &rows)?;
    log.record(&json!({"kind": "final", "clean_accuracy": clean.average_accuracy}))?;
    log.flush()?;
    Ok(AttackSummary { points, clean_accuracy: clean.average_accuracy })
}
