use std::collections::HashMap;
use std::io::Write;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shiftlab_core::advmetrics::{chrf, chrf2, first_order_substitution, Constraint, EmbeddingTable};
use shiftlab_core::continual::{
    conatural_raw, continual_train, gen_rotated_tasks, reservoir_add, residual_check, two_task_logistic_trajectory,
    ContinualConfig, ContinualMethod, FisherState, ReplayMemory, RotatedTaskSpec, TwoTaskConfig,
};
use shiftlab_core::datasets::{
    gen_distractor_text, gen_two_domain_gaussian, group_metrics, inject_label_noise, DistractorTextSpec, GroupedDataset, Split,
    TwoDomainSpec,
};
use shiftlab_core::diffcore::{finite_diff_check, Example, LossKind, ModelSpec, ModelState};
use shiftlab_core::dro::{
    kl_to_uniform, nonparam_weights, rpdro_batch_weights, AdvObjective, DroConfig, Method, LOG10_TAU_BOUNDS,
};
use shiftlab_core::selection::{default_kl_threshold, greedy_minmax_update, minmax_from_table, AdversaryRecord, SelectionState};
use shiftlab_core::train::{train_run, SelectionMode, TrainConfig};

fn report(id: usize, name: &str, pass: bool, detail: String) {
    // Written to the handle directly so the line shows even when the test passes.
    let line = format!("criterion {id:>2} {name}: {} ({detail})\n", if pass { "PASS" } else { "FAIL" });
    std::io::stdout().lock().write_all(line.as_bytes()).unwrap();
    assert!(pass, "criterion {id} {name} failed: {detail}");
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

#[test]
fn criterion_01_gradient_correctness() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = HashMap::new();
    for arch in ["linear", "mlp", "embed_bag"] {
        let mut w: f64 = 0.0;
        for i in 0..100 {
            let classes = rng.random_range(2..5);
            let (spec, batch): (ModelSpec, Vec<Example<f64>>) = if arch == "embed_bag" {
                let vocab = rng.random_range(5..30);
                let spec = ModelSpec::embed_bag(vocab, rng.random_range(2..6), classes);
                let batch = (0..rng.random_range(1..6))
                    .map(|j| {
                        let len = rng.random_range(1..6);
                        let tokens = (0..len).map(|_| rng.random_range(0..vocab as u32)).collect();
                        Example::tokens(tokens, rng.random_range(0..classes), None, j)
                    })
                    .collect();
                (spec, batch)
            } else {
                let dim = rng.random_range(1..6);
                let spec = if arch == "linear" {
                    ModelSpec::linear(dim, classes)
                } else {
                    ModelSpec::mlp(dim, rng.random_range(1..6), classes)
                };
                let batch = (0..rng.random_range(1..6))
                    .map(|j| {
                        let x = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
                        Example::dense(x, rng.random_range(0..classes), None, j)
                    })
                    .collect();
                (spec, batch)
            };
            let model = ModelState::<f64>::init(spec, 1000 + i).unwrap();
            w = w.max(finite_diff_check(&model, &batch, 1e-5).unwrap());
        }
        worst.insert(arch, w);
    }
    let elapsed = t0.elapsed();
    let max = worst.values().copied().fold(0.0, f64::max);
    report(
        1,
        "gradient correctness",
        max < 1e-4 && elapsed < Duration::from_secs(10),
        format!(
            "worst linear {:.1e} mlp {:.1e} embed_bag {:.1e}, {}",
            worst["linear"],
            worst["mlp"],
            worst["embed_bag"],
            secs(elapsed)
        ),
    );
}

fn toy_robust_accuracy(seed: u64, dro: &DroConfig) -> f64 {
    let base = TwoDomainSpec::default();
    let train = gen_two_domain_gaussian::<f64>(&TwoDomainSpec { seed, ..base }).unwrap();
    let valid = gen_two_domain_gaussian::<f64>(&TwoDomainSpec { seed: seed + 500, total_points: 2000, ..base }).unwrap();
    let test =
        gen_two_domain_gaussian::<f64>(&TwoDomainSpec { seed: seed + 1000, total_points: 4000, minority_ratio: 0.5, ..base })
            .unwrap();
    let cfg = TrainConfig {
        dro: dro.clone(),
        epochs: 20,
        batch_size: 64,
        seed,
        selection: SelectionMode::Minmax,
        ..Default::default()
    };
    let out = train_run(&train, &valid, &ModelSpec::linear(2, 2), &cfg).unwrap();
    assert!(out.diverged.is_none(), "{:?}", out.diverged);
    group_metrics(&out.model, &test).unwrap().robust_accuracy
}

#[test]
fn criterion_02_toy_pdro_ablation() {
    let t0 = Instant::now();
    let base = DroConfig { lr: 0.1, tau: 1.0, kappa: 2.0, adv_lr: 3.0, k_window: 10, ..DroConfig::default() };
    let erm = DroConfig { method: Method::Erm, ..base.clone() };
    let pdro = DroConfig { method: Method::Pdro, ..base.clone() };
    let bare = DroConfig { method: Method::Pdro, adv_objective: AdvObjective::Direct, project: false, ..base };
    let run = |c: &DroConfig| mean(&(0..10).map(|s| toy_robust_accuracy(s, c)).collect::<Vec<_>>());
    let (e, p, b) = (run(&erm), run(&pdro), run(&bare));
    let elapsed = t0.elapsed();
    report(
        2,
        "toy P-DRO ablation",
        (e - 0.5).abs() <= 0.03 && p >= e + 0.08 && b <= e + 0.02 && elapsed < Duration::from_secs(120),
        format!("robust accuracy ERM {:.1}, P-DRO {:.1}, bare min-max {:.1}, {}", 100.0 * e, 100.0 * p, 100.0 * b, secs(elapsed)),
    );
}

#[test]
fn criterion_03_nonparam_kl_exactness() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (lo, hi) = (10f64.powf(LOG10_TAU_BOUNDS.0), 10f64.powf(LOG10_TAU_BOUNDS.1));
    let (mut worst, mut cases, mut bounds_ok) = (0.0_f64, 0, true);
    while cases < 100 {
        let n = rng.random_range(2..200);
        let losses: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..5.0)).collect();
        let kappa = rng.random_range(0.01..(n as f64).ln() * 0.9);
        let (w, tau) = nonparam_weights(&losses, kappa).unwrap();
        bounds_ok &= (lo..=hi).contains(&tau);
        if tau <= lo || tau >= hi {
            continue;
        }
        worst = worst.max((kl_to_uniform(&w) - kappa).abs());
        cases += 1;
    }
    report(
        3,
        "NonParam KL exactness",
        worst <= 1e-6 && bounds_ok,
        format!("max |KL - kappa| {worst:.1e} over {cases} interior cases"),
    );
}

#[test]
fn criterion_04_rpdro_normalization() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut sum_err, mut shift_err) = (0.0_f64, 0.0_f64);
    for _ in 0..200 {
        let n = rng.random_range(1..128);
        let f: Vec<f64> = (0..n).map(|_| rng.random_range(-50.0..50.0)).collect();
        let w = rpdro_batch_weights(&f);
        sum_err = sum_err.max((w.iter().sum::<f64>() - 1.0).abs());
        let c = rng.random_range(-20.0..20.0);
        let shifted: Vec<f64> = f.iter().map(|x| x + c).collect();
        let ws = rpdro_batch_weights(&shifted);
        shift_err = shift_err.max(w.iter().zip(&ws).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    report(
        4,
        "R-PDRO normalization",
        sum_err <= 1e-9 && shift_err <= 1e-12,
        format!("sum error {sum_err:.1e}, shift error {shift_err:.1e}"),
    );
}

struct DistractorRun {
    robust: f64,
    average: f64,
}

fn distractor_run(seed: u64, dro: &DroConfig, loss: LossKind, bias: f64, noise: f64) -> DistractorRun {
    let base = DistractorTextSpec { bias, ..Default::default() };
    let mut train = gen_distractor_text::<f64>(&DistractorTextSpec { seed, ..base }).unwrap();
    if noise > 0.0 {
        train = inject_label_noise(&train, noise, seed + 7).unwrap();
    }
    let valid = gen_distractor_text::<f64>(&DistractorTextSpec { seed: seed + 500, n: 1000, ..base }).unwrap();
    let test =
        gen_distractor_text::<f64>(&DistractorTextSpec { seed: seed + 1000, n: 4000, split: Split::Test, ..base }).unwrap();
    let cfg = TrainConfig {
        dro: dro.clone(),
        epochs: 15,
        batch_size: 64,
        seed,
        selection: SelectionMode::Minmax,
        selection_loss: loss,
        ..Default::default()
    };
    let out = train_run(&train, &valid, &ModelSpec::embed_bag(64, 16, 2), &cfg).unwrap();
    assert!(out.diverged.is_none(), "{:?}", out.diverged);
    let m = group_metrics(&out.model, &test).unwrap();
    DistractorRun { robust: m.robust_accuracy, average: m.average_accuracy }
}

fn text_methods() -> [(&'static str, DroConfig, LossKind); 3] {
    [
        ("ERM", DroConfig { method: Method::Erm, lr: 0.5, ..DroConfig::default() }, LossKind::Nll),
        ("NonParam", DroConfig { method: Method::NonParam, lr: 0.5, kappa: 0.5, ..DroConfig::default() }, LossKind::Nll),
        (
            "R-PDRO",
            DroConfig { method: Method::Rpdro, lr: 0.5, tau: 0.01, adv_lr: 1.0, ..DroConfig::default() },
            LossKind::ZeroOne,
        ),
    ]
}

#[test]
fn criterion_05_distractor_ordering() {
    let t0 = Instant::now();
    let robust: Vec<f64> = text_methods()
        .iter()
        .map(|(_, c, l)| mean(&(0..5).map(|s| distractor_run(s, c, *l, 0.95, 0.0).robust).collect::<Vec<_>>()))
        .collect();
    let elapsed = t0.elapsed();
    report(
        5,
        "distractor ordering",
        robust[1] >= robust[0] + 0.05 && robust[2] >= robust[1] + 0.05 && elapsed < Duration::from_secs(300),
        format!(
            "robust accuracy ERM {:.1}, NonParam {:.1}, R-PDRO {:.1}, {}",
            100.0 * robust[0],
            100.0 * robust[1],
            100.0 * robust[2],
            secs(elapsed)
        ),
    );
}

#[test]
fn criterion_06_label_noise_resilience() {
    let methods = text_methods();
    let drop = |(_, c, l): &(&str, DroConfig, LossKind)| {
        let clean = mean(&(0..5).map(|s| distractor_run(s, c, *l, 0.5, 0.0).average).collect::<Vec<_>>());
        let noisy = mean(&(0..5).map(|s| distractor_run(s, c, *l, 0.5, 0.2).average).collect::<Vec<_>>());
        clean - noisy
    };
    let np = drop(&methods[1]);
    let rp = drop(&methods[2]);
    report(
        6,
        "label-noise resilience",
        np > 0.0 && rp <= 0.5 * np,
        format!("average-accuracy drop NonParam {:.1}, R-PDRO {:.1} points", 100.0 * np, 100.0 * rp),
    );
}

#[test]
fn criterion_07_conatural_trajectory() {
    let wins = (0..10)
        .filter(|&seed| {
            let c = TwoTaskConfig { seed, ..Default::default() };
            let plain = two_task_logistic_trajectory::<f64>(&c, false).unwrap();
            let conat = two_task_logistic_trajectory::<f64>(&c, true).unwrap();
            conat.final_t1_loss < plain.final_t1_loss
        })
        .count();
    report(7, "co-natural trajectory", wins >= 8, format!("co-natural keeps lower T1 loss in {wins}/10 seeds"));
}

fn forgetting(seed: u64, method: ContinualMethod, alpha: f64) -> f64 {
    let tasks = gen_rotated_tasks::<f64>(&RotatedTaskSpec { seed, ..Default::default() }).unwrap();
    let cfg = ContinualConfig { method, lr: 0.2, epochs_per_task: 10, memory_capacity: 50, alpha, seed, ..Default::default() };
    continual_train(&tasks, &ModelSpec::mlp(10, 4, 2), &cfg).unwrap().metrics.final_forgetting().unwrap()
}

#[test]
fn criterion_08_continual_forgetting() {
    let t0 = Instant::now();
    let alpha = ContinualConfig::default().alpha;
    let f = |m| mean(&(0..5).map(|s| forgetting(s, m, alpha)).collect::<Vec<_>>());
    let (ft, cn, er, cer) =
        (f(ContinualMethod::Finetune), f(ContinualMethod::Conatural), f(ContinualMethod::Er), f(ContinualMethod::ConaturalEr));
    let elapsed = t0.elapsed();
    report(
        8,
        "continual forgetting reduction",
        cn <= 0.5 * ft && cer <= er && elapsed < Duration::from_secs(180),
        format!(
            "forgetting finetune {:.2} -> co-natural {:.2}, ER {:.2} -> co-natural ER {:.2}, {}",
            100.0 * ft,
            100.0 * cn,
            100.0 * er,
            100.0 * cer,
            secs(elapsed)
        ),
    );
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        for k in i..=j {
            r[idx[k]] = (i + j) as f64 / 2.0;
        }
        i = j + 1;
    }
    r
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let (ma, mb) = (mean(&ra), mean(&rb));
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn criterion_09_damping_monotonicity() {
    let mut alphas = vec![0.0];
    alphas.extend((-7..=2).map(|e| 10f64.powi(e)));
    alphas.push(f64::INFINITY);
    let curve: Vec<f64> = alphas
        .iter()
        .map(|&a| mean(&(0..10).map(|s| forgetting(s, ContinualMethod::Conatural, a)).collect::<Vec<_>>()))
        .collect();
    let order: Vec<f64> = (0..alphas.len()).map(|i| i as f64).collect();
    let rho = spearman(&order, &curve);
    let shown: Vec<String> = curve.iter().map(|f| format!("{:.2}", 100.0 * f)).collect();
    report(9, "damping monotonicity", rho >= 0.9, format!("Spearman rho {rho:.3}, forgetting by alpha [{}]", shown.join(", ")));
}

#[test]
fn criterion_10_stationarity_residual() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = 0.0_f64;
    for i in 0..100 {
        let n = rng.random_range(1..64);
        let alpha = if i % 10 == 0 { 0.0 } else { 10f64.powf(rng.random_range(-8.0..2.0)) };
        let mut fisher = FisherState::new(n, rng.random_range(0.1..=1.0), alpha).unwrap();
        fisher.diag = (0..n).map(|_| 10f64.powf(rng.random_range(-6.0..3.0))).collect();
        let grad: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let delta = conatural_raw(&grad, &fisher).unwrap();
        worst = worst.max(residual_check(&grad, &fisher, &delta));
    }
    report(10, "stationarity residual", worst < 1e-10, format!("worst relative residual {worst:.1e}"));
}

fn ngram_oracle(s: &[char], n: usize) -> Vec<Vec<char>> {
    if s.len() < n {
        return Vec::new();
    }
    (0..=s.len() - n).map(|i| s[i..i + n].to_vec()).collect()
}

fn chrf_oracle(reference: &str, hypothesis: &str, max_n: usize, beta: f64) -> f64 {
    let squash = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ").chars().collect::<Vec<char>>();
    let (r, h) = (squash(reference), squash(hypothesis));
    if r.is_empty() && h.is_empty() {
        return 100.0;
    }
    let (mut p, mut rc, mut orders) = (0.0, 0.0, 0);
    for n in 1..=max_n {
        let rg = ngram_oracle(&r, n);
        let hg = ngram_oracle(&h, n);
        if rg.is_empty() && hg.is_empty() {
            continue;
        }
        let mut used = vec![false; rg.len()];
        let mut matches = 0;
        for g in &hg {
            if let Some(k) = (0..rg.len()).find(|&k| !used[k] && &rg[k] == g) {
                used[k] = true;
                matches += 1;
            }
        }
        if !hg.is_empty() {
            p += matches as f64 / hg.len() as f64;
        }
        if !rg.is_empty() {
            rc += matches as f64 / rg.len() as f64;
        }
        orders += 1;
    }
    let (p, rc) = (p / orders as f64, rc / orders as f64);
    if p == 0.0 && rc == 0.0 {
        return 0.0;
    }
    let b2 = beta * beta;
    100.0 * (1.0 + b2) * p * rc / (b2 * p + rc)
}

#[test]
fn criterion_11_chrf_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let alphabet: Vec<char> = "abcab cde  xyz".chars().collect();
    let text = |rng: &mut ChaCha8Rng| -> String {
        (0..rng.random_range(0..30)).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect()
    };
    let (mut worst, mut identity) = (0.0_f64, true);
    for _ in 0..50 {
        let (a, b) = (text(&mut rng), text(&mut rng));
        worst = worst.max((chrf2(&a, &b) - chrf_oracle(&a, &b, 6, 2.0)).abs());
        worst = worst.max((chrf(&a, &b, 3, 1.0) - chrf_oracle(&a, &b, 3, 1.0)).abs());
        identity &= chrf2(&a, &a) == 100.0;
    }
    report(
        11,
        "chrF oracle equivalence",
        worst <= 1e-9 && identity,
        format!("max deviation {worst:.1e}, chrf(x, x) = 100: {identity}"),
    );
}

#[test]
fn criterion_12_attack_argmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut agree = 0;
    for _ in 0..100 {
        let (vocab, dim, n) = (rng.random_range(2..=50), rng.random_range(1..6), rng.random_range(1..=5));
        let vectors: Vec<Vec<f64>> = (0..vocab).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let table = EmbeddingTable::new(vectors.clone(), (0..vocab).map(|i| format!("w{i}")).collect()).unwrap();
        let ids: Vec<usize> = (0..n).map(|_| rng.random_range(0..vocab)).collect();
        let grads: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let got = first_order_substitution(&grads, &ids, &table, Constraint::None, false).unwrap();
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            for w in 0..vocab {
                if w == ids[i] {
                    continue;
                }
                let score: f64 = (0..dim).map(|d| (vectors[w][d] - vectors[ids[i]][d]) * grads[i][d]).sum();
                if best.is_none_or(|(s, _, _)| score > s) {
                    best = Some((score, i, w));
                }
            }
        }
        let (_, i, w) = best.unwrap();
        agree += usize::from(got == (i, w));
    }
    report(12, "attack argmax exactness", agree == 100, format!("{agree}/100 instances match the double-loop oracle"));
}

#[test]
fn criterion_13_reservoir() {
    let (streams, capacity, length) = (10_000, 10, 40);
    let mut counts = vec![0usize; length];
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..streams {
        let mut mem = ReplayMemory::new(capacity).unwrap();
        for item in 0..length {
            mem = reservoir_add(mem, item, &mut rng);
        }
        for &item in mem.items() {
            counts[item] += 1;
        }
    }
    let p = capacity as f64 / length as f64;
    let sigma = (streams as f64 * p * (1.0 - p)).sqrt();
    let worst = counts.iter().map(|&c| (c as f64 - streams as f64 * p).abs() / sigma).fold(0.0, f64::max);
    report(13, "reservoir correctness", worst <= 3.0, format!("largest deviation {worst:.2} sigma over {length} items"));
}

#[test]
fn criterion_14_selection_filter() {
    let threshold = default_kl_threshold();
    let n = 40;
    let mut peaked = vec![0.0; n];
    peaked[..2].fill(1.0);
    let heavy = AdversaryRecord::<f64>::new(1, peaked).unwrap();
    let excluded = (heavy.kl_estimate - 20f64.ln()).abs() < 1e-12 && !heavy.survives(threshold);
    let uniform = AdversaryRecord::<f64>::uniform(0, n);
    let psi0_kept = [0.0, 1e-9, threshold].iter().all(|&t| uniform.survives(t));
    let losses: Vec<f64> = (0..n).map(|i| if i < 2 { 9.0 } else { 0.0 }).collect();
    let other: Vec<f64> = vec![0.5; n];
    let pick = minmax_from_table(&[losses, other], &[uniform.clone(), heavy], threshold).unwrap();

    let examples: Vec<Example<f64>> =
        (0..n).map(|i| Example::dense(vec![i as f64 / n as f64], i % 2, Some(i % 2), i as u64)).collect();
    let valid = GroupedDataset::new(examples, vec!["a".into(), "b".into()], 2).unwrap();
    let mut state = SelectionState::new(n, threshold, LossKind::Nll);
    let mut most = 0;
    for epoch in 0..20 {
        let candidate = ModelState::<f64>::init(ModelSpec::linear(1, 2), epoch as u64).unwrap();
        let record = AdversaryRecord::new(epoch + 1, (0..n).map(|i| 1.0 + ((i + epoch) % 3) as f64).collect()).unwrap();
        state = greedy_minmax_update(state, epoch, &candidate, Some(record), &valid).unwrap();
        most = most.max(usize::from(state.best_model.is_some()) + 1);
    }
    report(
        14,
        "selection filter",
        excluded && psi0_kept && pick.index == 0 && most <= 2,
        format!("ln 20 record excluded: {excluded}, uniform record kept: {psi0_kept}, peak snapshots {most}"),
    );
}
