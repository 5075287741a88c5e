use std::collections::HashSet;

use ndarray::{arr2, concatenate, Array2, Axis};
use proptest::prelude::*;
use rand::Rng;

use super::report::{ablation_to_string, report_to_string};
use super::*;
use crate::rng::{stream, Purpose};

fn building_set(m: &Array2<bool>) -> HashSet<(usize, usize)> {
    m.indexed_iter().filter(|(_, &v)| v).map(|(i, _)| i).collect()
}

/// |a ∩ b| / |a ∪ b| over building pixels, with the empty/empty case as 1.
fn set_iou(a: &Array2<bool>, b: &Array2<bool>) -> f64 {
    let (sa, sb) = (building_set(a), building_set(b));
    let union = sa.union(&sb).count();
    if union == 0 {
        1.0
    } else {
        sa.intersection(&sb).count() as f64 / union as f64
    }
}

fn random_mask(rng: &mut impl Rng, p: f64) -> Array2<bool> {
    Array2::from_shape_fn((32, 32), |_| rng.random_bool(p))
}

fn all_valid(h: usize, w: usize) -> Array2<bool> {
    Array2::from_elem((h, w), true)
}

fn score(id: &str, city: &str, pred: &Array2<bool>, gt: &Array2<bool>) -> ImageScore {
    let (h, w) = pred.dim();
    ImageScore {
        id: id.into(),
        city: city.into(),
        counts: confusion_counts(pred.view(), gt.view(), all_valid(h, w).view()).unwrap(),
    }
}

#[test]
fn four_pixel_counts() {
    let pred = arr2(&[[true, true], [false, false]]);
    let gt = arr2(&[[true, false], [false, true]]);
    let c = confusion_counts(pred.view(), gt.view(), all_valid(2, 2).view()).unwrap();
    assert_eq!(c, ConfusionCounts { tp: 1, fp: 1, fn_: 1, tn: 1 });
    let same = confusion_counts(gt.view(), gt.view(), all_valid(2, 2).view()).unwrap();
    assert_eq!((same.fp, same.fn_), (0, 0));
    let none = confusion_counts(pred.view(), gt.view(), Array2::from_elem((2, 2), false).view()).unwrap();
    assert_eq!(none, ConfusionCounts::default());
    assert!(confusion_counts(pred.view(), gt.view(), all_valid(2, 3).view()).is_err());
}

#[test]
fn iou_examples() {
    let m = arr2(&[[true, false], [true, true]]);
    assert_eq!(iou(&confusion_counts(m.view(), m.view(), all_valid(2, 2).view()).unwrap()), 1.0);
    let other = m.mapv(|v| !v);
    assert_eq!(iou(&confusion_counts(m.view(), other.view(), all_valid(2, 2).view()).unwrap()), 0.0);
    assert_eq!(iou(&ConfusionCounts { tp: 6, fp: 2, fn_: 4, tn: 0 }), 0.5);
    assert_eq!(iou(&ConfusionCounts { tp: 0, fp: 0, fn_: 0, tn: 9 }), 1.0);
    assert_eq!(iou(&ConfusionCounts { tp: 0, fp: 3, fn_: 0, tn: 9 }), 0.0);
}

#[test]
fn iou_equals_set_oracle_on_random_pairs() {
    let mut rng = stream(21, Purpose::GradCheck, 0);
    for k in 0..100 {
        let density = [0.0, 0.02, 0.3, 0.7][k % 4];
        let (a, b) = (random_mask(&mut rng, density), random_mask(&mut rng, 0.3));
        let c = confusion_counts(a.view(), b.view(), all_valid(32, 32).view()).unwrap();
        assert_eq!(iou(&c), set_iou(&a, &b));
        assert_eq!(c.total(), 1024);
        let swapped = confusion_counts(b.view(), a.view(), all_valid(32, 32).view()).unwrap();
        assert_eq!(iou(&swapped), iou(&c));
    }
}

#[test]
fn city_pooling_equals_concatenated_masks() {
    let mut rng = stream(22, Purpose::GradCheck, 0);
    let pairs: Vec<_> = (0..3).map(|_| (random_mask(&mut rng, 0.3), random_mask(&mut rng, 0.4))).collect();
    let images = pairs.iter().enumerate().map(|(i, (p, g))| score(&format!("A_{i:05}"), "A", p, g)).collect();
    let report = aggregate(images, "h", 0.0).unwrap();
    let cat = |sel: fn(&(Array2<bool>, Array2<bool>)) -> &Array2<bool>| {
        let views: Vec<_> = pairs.iter().map(|p| sel(p).view()).collect();
        concatenate(Axis(0), &views).unwrap()
    };
    let pooled = set_iou(&cat(|p| &p.0), &cat(|p| &p.1));
    assert!((report.city("A").unwrap().iou_percent() - 100.0 * pooled).abs() < 1e-12);
}

#[test]
fn aggregation_rules() {
    let one = |tp, fp| ImageScore { id: "x".into(), city: "C".into(), counts: ConfusionCounts { tp, fp, fn_: 0, tn: 0 } };
    let single = aggregate(vec![one(3, 1)], "", 0.0).unwrap();
    assert_eq!(single.miou(), 75.0);
    let two = aggregate(vec![one(2, 3), one(3, 2)], "", 0.0).unwrap();
    assert!((two.miou() - 50.0).abs() < 1e-12);
    assert!(aggregate(vec![], "", 0.0).is_err());

    let cities = ["US_Kitsap", "KR_Ulsan", "SD_Khartoum", "BR_Brasilia", "TZ_Dar"];
    let images = cities
        .iter()
        .enumerate()
        .map(|(i, c)| ImageScore { id: format!("{c}_{i:05}"), city: c.to_string(), counts: ConfusionCounts { tp: i as u64, fp: 1, fn_: 1, tn: 5 } })
        .collect();
    let five = aggregate(images, "", 0.0).unwrap();
    assert_eq!(five.cities.len(), 5);
    assert!(five.cities.windows(2).all(|w| w[0].city < w[1].city));
}

fn sample_report(seed: u64) -> EvalReport {
    let mut rng = stream(seed, Purpose::GradCheck, 0);
    let images = (0..6)
        .map(|i| {
            let city = if i % 3 == 0 { "SynB" } else { "SynC" };
            score(&format!("{city}_{i:05}"), city, &random_mask(&mut rng, 0.2), &random_mask(&mut rng, 0.3))
        })
        .collect();
    aggregate(images, "0123abcd", 1.25).unwrap()
}

#[test]
fn report_parses_back() {
    let r = sample_report(1);
    let text = report_to_string(&r);
    assert_eq!(parse_report(&text).unwrap(), r);
    assert!(text.contains(&format!("miou={}", r.miou())));
    assert!(parse_report("kind=ablation\nrows=0\n").is_err());
    assert!(parse_report("kind=eval\nnot a pair\n").is_err());
}

#[test]
fn ablation_parses_back_including_failures() {
    let rows = vec![
        AblationRow { submodules: Submodules::NONE, protocol_hash: "p".into(), seconds: 2.5, outcome: Ok(sample_report(2)) },
        AblationRow { submodules: Submodules::ALL, protocol_hash: "p".into(), seconds: 0.5, outcome: Err("loss diverged".into()) },
    ];
    let table = AblationTable { rows };
    assert_eq!(parse_ablation(&ablation_to_string(&table)).unwrap(), table);
    let rendered = render_ablation_table(&table);
    assert!(rendered.contains("failed") && rendered.contains("GA+CA+SM"));
}

#[test]
fn tables_use_two_decimals() {
    let images = vec![ImageScore {
        id: "a".into(),
        city: "SynB".into(),
        counts: ConfusionCounts { tp: 5889, fp: 4000, fn_: 111, tn: 0 },
    }];
    let table = render_report_table(&aggregate(images, "", 0.0).unwrap());
    assert!(table.contains("58.89"), "{table}");
}

#[test]
fn emits_files_and_handles_empty_ablation() {
    let dir = tempfile::tempdir().unwrap();
    let paths = emit_ablation(&AblationTable::default(), dir.path()).unwrap();
    assert!(paths.iter().all(|p| p.exists()));
    let text = std::fs::read_to_string(dir.path().join(ABLATION_FILE)).unwrap();
    assert_eq!(parse_ablation(&text).unwrap(), AblationTable::default());

    let r = sample_report(3);
    emit_report(&r, dir.path()).unwrap();
    let back = parse_report(&std::fs::read_to_string(dir.path().join(REPORT_FILE)).unwrap()).unwrap();
    assert_eq!(back, r);
    let chart = image::open(dir.path().join("report_chart.png")).unwrap();
    assert!(chart.width() >= 64);
    assert!(emit_report(&r, &dir.path().join(REPORT_FILE).join("sub")).is_err());
}

#[test]
fn evaluation_is_worker_independent() {
    use crate::data::{render_tile, SyntheticSpec};
    let spec = SyntheticSpec::default();
    let tiles: Vec<_> = (0..5).map(|i| render_tile(&spec, 1, i)).collect();
    let model = crate::model::SegModel::new(crate::model::SegModelConfig::tiny()).unwrap();
    let a = evaluate(&model, &tiles, 1, "h").unwrap();
    let b = evaluate(&model, &tiles, 3, "h").unwrap();
    assert_eq!(a.images, b.images);
    assert_eq!(a.images.iter().map(|s| s.id.as_str()).collect::<Vec<_>>(), tiles.iter().map(|t| t.id.as_str()).collect::<Vec<_>>());
}

#[test]
fn failing_rows_are_recorded_and_others_continue() {
    use crate::data::{render_tile, SyntheticSpec};
    let spec = SyntheticSpec::default();
    let train_tiles: Vec<_> = (0..4).map(|i| render_tile(&spec, 0, i)).collect();
    let test_tiles: Vec<_> = (0..2).map(|i| render_tile(&spec, 1, i)).collect();
    let setup = AblationSetup {
        model: crate::model::SegModelConfig::tiny(),
        bsm: BsmConfig::default(),
        train: TrainConfig { total_iterations: Some(0), batch_size: 2, ..Default::default() },
        seed: 0,
        workers: 1,
    };
    let table = run_ablation(&train_tiles, &test_tiles, &setup, &Submodules::ablation_rows()).unwrap();
    assert_eq!(table.rows.len(), 8);
    assert!(table.rows.windows(2).all(|w| w[0].protocol_hash == w[1].protocol_hash));
    // Untrained models are identical across rows.
    assert!(table.rows.windows(2).all(|w| w[0].miou() == w[1].miou()));

    let broken = AblationSetup {
        train: TrainConfig { total_iterations: None, ..setup.train.clone() },
        ..setup.clone()
    };
    let table = run_ablation(&train_tiles, &test_tiles, &broken, &[Submodules::NONE, Submodules::ALL]).unwrap();
    assert!(table.rows.iter().all(|r| r.outcome.is_err()));
    assert_eq!(table.rows.len(), 2);
}

proptest! {
    #[test]
    fn counts_cover_valid_pixels(seed in 0u64..10_000) {
        let mut rng = stream(seed, Purpose::GradCheck, 1);
        let (a, b) = (random_mask(&mut rng, 0.5), random_mask(&mut rng, 0.5));
        let valid = random_mask(&mut rng, 0.8);
        let c = confusion_counts(a.view(), b.view(), valid.view()).unwrap();
        prop_assert_eq!(c.total() as usize, valid.iter().filter(|&&v| v).count());
    }
}
