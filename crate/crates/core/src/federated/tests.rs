use super::*;
use crate::datagen::{make_benchmark, Benchmark, BenchmarkConfig, SplitCounts};
use crate::model::EncoderConfig;
use crate::training::pretrain;

fn small_bench() -> Benchmark {
    let cfg = BenchmarkConfig {
        pretrain_tasks: 3,
        pretrain_counts: SplitCounts {
            train: 60,
            val: 20,
            test: 40,
        },
        ..BenchmarkConfig::default()
    };
    make_benchmark(&cfg).unwrap()
}

fn model_config() -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            input_dim: 16,
            embedding_dim: 8,
            depth: 2,
            hidden: 16,
        },
        knowledge_dim: 8,
        mlp_hidden: 16,
        projector_dim: 8,
        tau: 0.1,
    }
}

fn fed_config(rounds: usize, local: usize, weighting: Weighting) -> FederationConfig {
    FederationConfig {
        rounds,
        local_iterations: local,
        weighting,
        teacher: TeacherMode::Persistent,
        train: TrainConfig {
            seed: 11,
            ..TrainConfig::default()
        },
    }
}

#[test]
fn equal_sites_average_to_midpoint() {
    let w = aggregation_weights(&[50, 50], Weighting::BySampleCount).unwrap();
    assert_eq!(weighted_mean(&[&[0.0], &[2.0]], &w).unwrap(), vec![1.0]);
    let w = aggregation_weights(&[10, 990], Weighting::Uniform).unwrap();
    assert_eq!(weighted_mean(&[&[0.0], &[2.0]], &w).unwrap(), vec![1.0]);
}

#[test]
fn sample_weighting_matches_hand_mean() {
    let w = aggregation_weights(&[100, 300], Weighting::BySampleCount).unwrap();
    assert_eq!(w, vec![0.25, 0.75]);
    assert_eq!(weighted_mean(&[&[0.0, 4.0], &[2.0, 8.0]], &w).unwrap(), vec![1.5, 7.0]);
}

#[test]
fn weight_errors() {
    assert!(aggregation_weights(&[], Weighting::Uniform).is_err());
    assert!(aggregation_weights(&[0, 0], Weighting::BySampleCount).is_err());
    assert!(weighted_mean(&[&[1.0], &[1.0, 2.0]], &[0.5, 0.5]).is_err());
}

#[test]
fn single_site_equals_centralized_run() {
    let b = small_bench();
    let site = Site::new("only", b.pretrain.clone()).unwrap();
    let cfg = fed_config(3, 2, Weighting::BySampleCount);
    let run = run_federation(std::slice::from_ref(&site), model_config(), &cfg).unwrap();
    assert_eq!(run.records.len(), 3);

    let tasks: Vec<&TaskDataset> = b.pretrain.iter().collect();
    let central = pretrain(
        &tasks,
        model_config(),
        &TrainConfig {
            epochs: 6,
            ..cfg.train.clone()
        },
    )
    .unwrap();
    assert_eq!(run.global.params(), central.student.params());
    assert_eq!(run.global.checksum(), central.student.checksum());
}

#[test]
fn identical_sites_uniform_track_centralized_each_round() {
    let b = small_bench();
    let sites = vec![
        Site::new("a", b.pretrain.clone()).unwrap(),
        Site::new("b", b.pretrain.clone()).unwrap(),
    ];
    let cfg = fed_config(2, 1, Weighting::Uniform);
    let mut fed = Federation::init(&sites, model_config(), &cfg).unwrap();
    let tasks: Vec<&TaskDataset> = b.pretrain.iter().collect();
    for r in 1..=2 {
        fed_round(&mut fed, &sites, &cfg).unwrap();
        let central = pretrain(
            &tasks,
            model_config(),
            &TrainConfig {
                epochs: r,
                ..cfg.train.clone()
            },
        )
        .unwrap();
        assert_eq!(fed.global.checksum(), central.student.checksum(), "round {r}");
    }
}

#[test]
fn single_owner_heads_and_rows_are_copied() {
    let b = small_bench();
    let sites = vec![
        Site::new("a", vec![b.pretrain[0].clone()]).unwrap(),
        Site::new("b", vec![b.pretrain[1].clone(), b.pretrain[2].clone()]).unwrap(),
    ];
    let cfg = fed_config(1, 1, Weighting::BySampleCount);
    let fed = Federation::init(&sites, model_config(), &cfg).unwrap();
    let mut sa = fed.global.clone();
    let mut sb = fed.global.clone();
    for (_, t) in sa.params_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = 1.0);
    }
    for (_, t) in sb.params_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = 3.0);
    }
    let w = aggregation_weights(&[1, 3], Weighting::BySampleCount).unwrap();
    let g = aggregate(&fed.global, &[sa, sb], &sites, &w).unwrap();
    let t0 = &b.pretrain[0].task_id;
    let t1 = &b.pretrain[1].task_id;
    assert!(g.head(t0).unwrap().linear.weight.data().iter().all(|&v| v == 1.0));
    assert!(g.head(t1).unwrap().linear.weight.data().iter().all(|&v| v == 3.0));
    assert!(g.kb.row(0).iter().all(|&v| v == 1.0));
    assert!(g.kb.row(1).iter().all(|&v| v == 3.0));
    // shared parameters: 0.25·1 + 0.75·3
    assert!(g.projector.data().iter().all(|&v| v == 2.5));
    assert!(g.template.t_pk.data().iter().all(|&v| v == 2.5));
}

#[test]
fn shape_drift_is_rejected() {
    let b = small_bench();
    let sites = vec![Site::new("a", vec![b.pretrain[0].clone()]).unwrap()];
    let cfg = fed_config(1, 1, Weighting::BySampleCount);
    let fed = Federation::init(&sites, model_config(), &cfg).unwrap();
    let mut drifted = fed.global.clone();
    drifted.add_task("extra", 2, 9).unwrap();
    assert!(aggregate(&fed.global, &[drifted], &sites, &[1.0]).is_err());
}

#[test]
fn sites_refuse_foreign_data() {
    let b = small_bench();
    let site = Site::new("a", vec![b.pretrain[0].clone()]).unwrap();
    assert!(site.dataset(&b.pretrain[0].task_id).is_ok());
    let err = site.dataset(&b.pretrain[1].task_id).unwrap_err();
    assert!(matches!(err, Error::DataIsolation { ref site, .. } if site == "a"));
    assert!(Site::new("empty", vec![]).is_err());
    assert!(Site::new("dup", vec![b.pretrain[0].clone(), b.pretrain[0].clone()]).is_err());
}

#[test]
fn failing_site_aborts_round_and_is_named() {
    let b = small_bench();
    let mut broken = b.pretrain[1].clone();
    broken.train.clear();
    let sites = vec![
        Site::new("good", vec![b.pretrain[0].clone()]).unwrap(),
        Site::new("bad", vec![broken]).unwrap(),
    ];
    let cfg = fed_config(1, 1, Weighting::Uniform);
    let mut fed = Federation::init(&sites, model_config(), &cfg).unwrap();
    let before = fed.global.checksum();
    let err = fed_round(&mut fed, &sites, &cfg).unwrap_err();
    assert!(matches!(err, Error::SiteFailure { ref site, .. } if site == "bad"), "{err}");
    assert_eq!(fed.global.checksum(), before);
    assert_eq!(fed.rounds_done, 0);
}

#[test]
fn federation_is_deterministic_and_records_rounds() {
    let b = small_bench();
    let sites = vec![
        Site::new("a", vec![b.pretrain[0].clone()]).unwrap(),
        Site::new("b", vec![b.pretrain[1].clone(), b.pretrain[2].clone()]).unwrap(),
    ];
    let mut cfg = fed_config(2, 1, Weighting::BySampleCount);
    cfg.teacher = TeacherMode::RestartFromGlobal;
    let r1 = run_federation(&sites, model_config(), &cfg).unwrap();
    let r2 = run_federation(&sites, model_config(), &cfg).unwrap();
    assert_eq!(r1.records, r2.records);
    assert_eq!(r1.global.checksum(), r2.global.checksum());
    let csv = rounds_csv(&r1.records);
    assert_eq!(csv.lines().count(), 1 + 2 * 2);
    assert!(r1.records.iter().all(|r| r.sites.iter().all(|s| s.val_accuracy.is_some())));
}

#[test]
fn config_validation_and_toml() {
    assert!(fed_config(0, 1, Weighting::Uniform).validate().is_err());
    assert!(fed_config(1, 0, Weighting::Uniform).validate().is_err());
    let c: FederationConfig = toml::from_str("rounds = 3\nweighting = \"uniform\"\nteacher = \"restart-from-global\"").unwrap();
    assert_eq!(c.rounds, 3);
    assert_eq!(c.weighting, Weighting::Uniform);
    assert!(toml::from_str::<FederationConfig>("roundz = 3").is_err());
}
