//! Library-level runs at FilmTrust scale on synthetic stand-ins.

mod common;

use grouprec::aggregation::{
    predict_group_gpa_raw, predict_group_ipa_raw, weights_average, Strategy,
};
use grouprec::eval::{evaluate, EvalOptions};
use grouprec::groups::{generate_groups, GroupsFile};
use grouprec::model::{train, ModelParams, ModelType, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rmse(model: &ModelParams, ds: &grouprec::data::RatingsDataset) -> f64 {
    let (mut se, mut n) = (0.0, 0);
    for r in ds.test() {
        se += (model.predict(r.user, r.item).unwrap() - r.value).powi(2);
        n += 1;
    }
    (se / n as f64).sqrt()
}

#[test]
fn proxy_has_filmtrust_shape() {
    let ds = common::filmtrust_proxy(1);
    let stats = ds.stats();
    assert_eq!(
        (stats.users, stats.items, stats.ratings),
        (1508, 2071, 35_497)
    );
    assert_eq!((stats.score_min, stats.score_max), (0.5, 4.0));
}

#[test]
fn proxy_training_beats_the_mean_and_round_trips() {
    let ds = common::filmtrust_proxy(1).split(0.2, 2).unwrap();
    let mean = ds.mean_train_rating().unwrap();
    let baseline = (ds.test().map(|r| (r.value - mean).powi(2)).sum::<f64>()
        / ds.test().count() as f64)
        .sqrt();
    for mt in [ModelType::Gmf, ModelType::Mlp] {
        let trained = train(&ds, mt, &TrainConfig::default()).unwrap();
        let losses = &trained.epoch_losses;
        assert_eq!(losses.len(), 20);
        assert!(losses.last() < losses.first());
        let err = rmse(&trained.params, &ds);
        assert!(
            err < baseline,
            "{mt}: rmse {err} vs mean predictor {baseline}"
        );

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        trained.params.save_checkpoint(&path).unwrap();
        let back = ModelParams::load_checkpoint(&path).unwrap();
        assert_eq!(
            back.to_checkpoint_bytes(),
            trained.params.to_checkpoint_bytes()
        );
        for r in ds.test().take(200) {
            let a = trained.params.predict(r.user, r.item).unwrap();
            let b = back.predict(r.user, r.item).unwrap();
            assert!((a - b).abs() < 1e-4);
        }
    }
}

#[test]
fn trained_gmf_average_matches_ipa() {
    let ds = common::filmtrust_proxy(3).split(0.2, 4).unwrap();
    let cfg = TrainConfig {
        epochs: 5,
        ..TrainConfig::default()
    };
    let model = train(&ds, ModelType::Gmf, &cfg).unwrap().params;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let size = rng.gen_range(2..=10);
        let members: Vec<u32> = rand::seq::index::sample(&mut rng, ds.users(), size)
            .into_iter()
            .map(|u| u as u32)
            .collect();
        let w = weights_average(&members).unwrap();
        for _ in 0..5 {
            let item = rng.gen_range(0..ds.items() as u32);
            let gpa = predict_group_gpa_raw(&model, &w, item).unwrap();
            let ipa = predict_group_ipa_raw(&model, &members, item).unwrap();
            assert!((gpa - ipa).abs() < 1e-6);
        }
    }
}

#[test]
fn proxy_group_synthesis_reports_shortfall_deterministically() {
    let ds = common::filmtrust_proxy(1).split(0.2, 2).unwrap();
    let a = generate_groups(&ds, &[2, 10], 20, 9, 500).unwrap();
    let b = generate_groups(&ds, &[2, 10], 20, 9, 500).unwrap();
    assert_eq!(a.groups, b.groups);
    assert_eq!(a.reports, b.reports);
    for r in &a.reports {
        assert_eq!(r.produced + r.shortfall(), 20);
        assert!(r.qualifying_items > 0);
    }
}

#[test]
fn group_error_grows_with_group_size_on_dense_data() {
    // strong per-user offsets make members disagree in a learnable way
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let bias: Vec<f64> = (0..200).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let base = common::low_rank(200, 40, 3, 0.95, 8);
    let noisy: Vec<(usize, usize, f64)> = base
        .ratings()
        .iter()
        .map(|r| {
            let v = 3.0 + bias[r.user as usize] + (r.value - 0.75) + rng.gen_range(-0.3..0.3);
            (r.user as usize, r.item as usize, v.clamp(1.0, 5.0))
        })
        .collect();
    let ds = grouprec::data::RatingsDataset::from_triples(200, 40, &noisy)
        .unwrap()
        .split(0.5, 3)
        .unwrap();
    let generated = generate_groups(&ds, &[2, 6, 10], 200, 4, 10_000).unwrap();
    for r in &generated.reports {
        assert_eq!(r.produced, 200, "{r:?}");
    }
    let file = GroupsFile {
        dataset: ds.fingerprint(),
        config: None,
        groups: generated.groups,
    };
    for mt in [ModelType::Gmf, ModelType::Mlp] {
        let model = train(&ds, mt, &TrainConfig::default()).unwrap().params;
        for s in Strategy::ALL {
            let report = evaluate(&model, &ds, &file, s, &EvalOptions::default()).unwrap();
            let mae = |size| report.row(mt, s, size).unwrap().mae.mean;
            assert!(mae(10) > mae(2), "{mt}/{s}: {} vs {}", mae(10), mae(2));
            for row in &report.rows {
                assert!((0.0..=1.0).contains(&row.ndcg.mean));
                assert_eq!(row.n_groups, 200);
            }
        }
    }
}
