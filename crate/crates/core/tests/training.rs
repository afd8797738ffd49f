use shiftlab_core::datasets::{
    gen_distractor_text, gen_two_domain_gaussian, group_metrics, load_csv, save_csv, DistractorTextSpec, TwoDomainSpec,
};
use shiftlab_core::diffcore::ModelSpec;
use shiftlab_core::dro::{DroConfig, Method, NormMode};
use shiftlab_core::train::{train_run, SelectionMode, TrainConfig};
use shiftlab_core::{Dataset, Dataset32};

fn small_toy(seed: u64) -> (Dataset, Dataset) {
    let spec = TwoDomainSpec { total_points: 1000, minority_ratio: 0.2, ..Default::default() };
    let train = gen_two_domain_gaussian(&TwoDomainSpec { seed, ..spec }).unwrap();
    let valid = gen_two_domain_gaussian(&TwoDomainSpec { seed: seed + 1, total_points: 300, ..spec }).unwrap();
    (train, valid)
}

#[test]
fn every_method_trains_and_is_deterministic() {
    let (train, valid) = small_toy(0);
    for method in [Method::Erm, Method::Pdro, Method::NonParam, Method::GroupDro, Method::Rpdro] {
        for selection in [SelectionMode::Last, SelectionMode::Minmax, SelectionMode::GreedyMinmax, SelectionMode::Oracle] {
            let cfg = TrainConfig { dro: DroConfig::with_method(method), epochs: 3, seed: 4, selection, ..Default::default() };
            let a = train_run(&train, &valid, &ModelSpec::mlp(2, 4, 2), &cfg).unwrap();
            let b = train_run(&train, &valid, &ModelSpec::mlp(2, 4, 2), &cfg).unwrap();
            assert!(a.diverged.is_none(), "{method:?}");
            assert_eq!(a.model, b.model, "{method:?} {selection:?}");
            assert_eq!(a.selected, b.selected);
            assert!(a.selected < a.checkpoints.len());
            assert_eq!(a.model, a.checkpoints[a.selected]);
        }
    }
}

#[test]
fn self_normalized_ratio_adversary_trains() {
    let data = gen_distractor_text::<f64>(&DistractorTextSpec { n: 800, ..Default::default() }).unwrap();
    let valid = gen_distractor_text::<f64>(&DistractorTextSpec { n: 200, seed: 9, ..Default::default() }).unwrap();
    let dro = DroConfig { method: Method::Rpdro, norm_mode: NormMode::SelfNorm, lr: 0.5, ..Default::default() };
    let cfg = TrainConfig { dro, epochs: 3, ..Default::default() };
    let out = train_run(&data, &valid, &ModelSpec::embed_bag(64, 8, 2), &cfg).unwrap();
    assert!(out.diverged.is_none());
    assert_eq!(out.records.len(), out.epochs.len() + 1);
}

#[test]
fn single_precision_matches_double_closely() {
    let (train, valid) = small_toy(2);
    let dir = tempfile::tempdir().unwrap();
    save_csv(&train, dir.path().join("train.csv")).unwrap();
    save_csv(&valid, dir.path().join("valid.csv")).unwrap();
    let train32: Dataset32 = load_csv(dir.path().join("train.csv")).unwrap();
    let valid32: Dataset32 = load_csv(dir.path().join("valid.csv")).unwrap();
    let reloaded: Dataset = load_csv(dir.path().join("train.csv")).unwrap();
    assert_eq!(reloaded.examples, train.examples);

    let cfg = TrainConfig { epochs: 3, selection: SelectionMode::Last, ..Default::default() };
    let spec = ModelSpec::linear(2, 2);
    let m64 = train_run(&train, &valid, &spec, &cfg).unwrap().model;
    let m32 = train_run(&train32, &valid32, &spec, &cfg).unwrap().model;
    for (a, b) in m64.params().iter().zip(m32.params()) {
        assert!((a - f64::from(*b)).abs() < 1e-3, "{a} vs {b}");
    }
    let acc64 = group_metrics(&m64, &valid).unwrap().average_accuracy;
    let acc32 = group_metrics(&m32, &valid32).unwrap().average_accuracy;
    assert!((acc64 - acc32).abs() < 0.01);
}
