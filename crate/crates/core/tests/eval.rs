use std::collections::BTreeMap;
use std::path::Path;

use proptest::prelude::*;
use ranksurge::eval::*;
use ranksurge::metrics::{MetricRegistry, MetricScore, Orientation};
use ranksurge::rankdata::MethodCorpus;
use ranksurge::{Error, Image};

fn fixtures() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/images")
}

fn row(method: &str, metric: &str, mean: f64) -> ScoreRow {
    ScoreRow {
        dataset_id: "pirm".into(),
        method_id: method.into(),
        image_ids: vec!["a".into()],
        means: BTreeMap::from([(metric.to_string(), MetricScore::new(metric, mean, true))]),
        per_image: BTreeMap::new(),
        failures: BTreeMap::new(),
    }
}

#[test]
fn bound_examples() {
    let r = compute_upper_bounds(
        &MethodScores::from_values("sr1", &[3.0, 1.0]),
        &MethodScores::from_values("sr2", &[2.0, 2.0]),
        Orientation::LowerIsBetter,
    )
    .unwrap();
    assert_eq!((r.ub_mc, r.ub_mr), (2.0, 1.5));
    assert_eq!(r.per_image_choices.values().cloned().collect::<Vec<_>>(), vec!["sr2", "sr1"]);
    let same = MethodScores::from_values("x", &[4.0, 2.5, 3.0]);
    let r = compute_upper_bounds(&same, &MethodScores { method_id: "y".into(), ..same.clone() }, Orientation::LowerIsBetter)
        .unwrap();
    assert_eq!(r.ub_mc, r.ub_mr);
}

#[test]
fn evaluate_toy_corpus() {
    let dir = fixtures();
    let mut images = BTreeMap::new();
    for id in ["camera", "coffee"] {
        images.insert(id.to_string(), dir.join(format!("{id}.png")));
    }
    let sr = MethodCorpus::new("sr", images);
    let reg = MetricRegistry::with_builtins();
    let metrics = vec!["niqe".to_string(), "psnr".to_string()];
    let row = evaluate_method("toy", &sr, Some(&sr), &metrics, &reg, 2).unwrap();
    let direct: Vec<f64> =
        ["camera", "coffee"].iter().map(|id| ranksurge::metrics::niqe(&Image::load(dir.join(format!("{id}.png"))).unwrap()).unwrap().value).collect();
    let mean = (direct[0] + direct[1]) / 2.0;
    assert!((row.mean("niqe").unwrap() - mean).abs() < 1e-9);
    assert!(row.per_image["psnr"].values().all(|s| s.is_infinite()));
    assert!(row.mean("psnr").unwrap().is_infinite());
    assert_eq!(row.failures["niqe"], 0);

    let err = evaluate_method("toy", &sr, None, &metrics, &reg, 1).unwrap_err();
    assert!(matches!(err, Error::Alignment(_)), "{err}");
    let err = evaluate_method("toy", &sr, None, &["nope".into()], &reg, 1).unwrap_err();
    assert!(matches!(err, Error::MissingMetric(_)), "{err}");
}

#[test]
fn failed_images_are_excluded_from_the_mean() {
    let dir = tempfile::tempdir().unwrap();
    let good = Image::load(fixtures().join("chelsea.png")).unwrap();
    good.save(dir.path().join("good.png")).unwrap();
    Image::filled(96, 96, 3, 0.5).unwrap().save(dir.path().join("flat.png")).unwrap();
    let sr = MethodCorpus::from_dir("sr", dir.path()).unwrap();
    let reg = MetricRegistry::with_builtins();
    let row = evaluate_method("d", &sr, None, &["niqe".into()], &reg, 1).unwrap();
    assert_eq!(row.failures["niqe"], 1);
    let kept = &row.per_image["niqe"];
    assert_eq!(kept.keys().collect::<Vec<_>>(), vec!["good"]);
    let mean = kept.values().map(|s| s.value).sum::<f64>() / kept.len() as f64;
    assert!((row.mean("niqe").unwrap() - mean).abs() < 1e-9);
}

#[test]
fn score_table_round_trip_and_alignment() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = ScoreTable::default();
    t.insert(row("srgan", "niqe", 2.71)).unwrap();
    t.insert(row("ranked", "niqe", 2.51)).unwrap();
    let mut odd = row("esrgan", "niqe", 2.55);
    odd.image_ids = vec!["b".into()];
    assert!(matches!(t.insert(odd), Err(Error::Alignment(_))));
    t.write_json(dir.path().join("t.json")).unwrap();
    t.write_csv(dir.path().join("t.csv")).unwrap();
    let back = ScoreTable::load_json(dir.path().join("t.json")).unwrap();
    assert_eq!(back.rows.len(), 2);
    assert_eq!(back.get("pirm", "ranked").unwrap().mean("niqe"), Some(2.51));
    assert_eq!(back.metrics(), vec!["niqe"]);
}

fn write_log(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("train_log.csv");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn curve_examples() {
    let dir = tempfile::tempdir().unwrap();
    let header = "iteration,l_p,l_g,l_r,l_total,val_psnr,val_niqe\n";
    let log = write_log(dir.path(), &format!("{header}100,1,1,0.5,1,20.5,7.0\n200,1,1,0.5,1,22.0,6.0\n300,1,1,0.5,1,21.0,5.5\n"));
    let out = dir.path().join("plots");
    let s = convergence_curves(&log, Some(&out)).unwrap();
    let niqe = &s.metrics["val_niqe"];
    assert_eq!((niqe.best, niqe.best_iteration, niqe.final_value), (5.5, 300, 5.5));
    let psnr = &s.metrics["val_psnr"];
    assert_eq!((psnr.best, psnr.best_iteration, psnr.final_value, psnr.final_iteration), (22.0, 200, 21.0, 300));
    assert_eq!(psnr.points, vec![(100, 20.5), (200, 22.0), (300, 21.0)]);
    for f in ["val_niqe.svg", "val_psnr.svg", "summary.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert!(std::fs::read_to_string(out.join("val_niqe.svg")).unwrap().contains("<polyline"));

    let empty = write_log(dir.path(), header);
    assert!(matches!(convergence_curves(&empty, None), Err(Error::MalformedLog(_))));
    let blank = write_log(dir.path(), "");
    assert!(matches!(convergence_curves(&blank, None), Err(Error::MalformedLog(_))));
    let sparse = write_log(dir.path(), &format!("{header}1,1,1,,1,,\n2,1,1,,1,,\n"));
    assert!(matches!(convergence_curves(&sparse, None), Err(Error::MalformedLog(_))));
    let bad = write_log(dir.path(), &format!("{header}x,1,1,,1,2,3\n"));
    assert!(matches!(convergence_curves(&bad, None), Err(Error::MalformedLog(_))));
}

#[test]
fn ablation_examples() {
    let results: BTreeMap<String, ScoreRow> =
        [row("srgan", "niqe", 2.71), row("ranked", "niqe", 2.51)].into_iter().map(|r| (r.method_id.clone(), r)).collect();
    let runs = vec!["srgan".to_string(), "ranked".to_string()];
    let t = ablation_report(&runs, "srgan", &["niqe".into()], &results).unwrap();
    assert_eq!(t.rows.len(), 2);
    assert_eq!(t.rows[0].deltas, vec![0.0]);
    assert!((t.rows[1].deltas[0] + 0.20).abs() < 1e-12);
    let md = t.to_markdown();
    assert!(md.contains("| ranked | 2.51 | -0.2 |"), "{md}");
    assert!(md.contains("srgan (baseline)"));

    let err = ablation_report(&["esrgan".into()], "srgan", &["niqe".into()], &results).unwrap_err();
    assert!(matches!(err, Error::MissingRun(_)));
    let err = ablation_report(&runs, "srgan", &["psnr".into()], &results).unwrap_err();
    assert!(matches!(err, Error::MissingMetric(_)));
}

fn vectors() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..40).prop_flat_map(|n| (prop::collection::vec(0.0f64..20.0, n), prop::collection::vec(0.0f64..20.0, n)))
}

proptest! {
    #[test]
    fn bound_sandwich((a, b) in vectors()) {
        let (s1, s2) = (MethodScores::from_values("a", &a), MethodScores::from_values("b", &b));
        let r = compute_upper_bounds(&s1, &s2, Orientation::LowerIsBetter).unwrap();
        let mean = |s: &MethodScores| s.scores.values().sum::<f64>() / s.scores.len() as f64;
        prop_assert_eq!(r.ub_mc, mean(&s2));
        prop_assert!(r.ub_mr <= mean(&s1).min(mean(&s2)) + 1e-12);
        prop_assert!(r.ub_mr <= r.ub_mc + 1e-12);
    }

    #[test]
    fn choices_are_pointwise_optimal((a, b) in vectors(), flip in any::<prop::sample::Index>()) {
        let (s1, s2) = (MethodScores::from_values("a", &a), MethodScores::from_values("b", &b));
        let r = compute_upper_bounds(&s1, &s2, Orientation::LowerIsBetter).unwrap();
        let value = |id: &str, m: &str| if m == "a" { s1.scores[id] } else { s2.scores[id] };
        for (id, m) in &r.per_image_choices {
            prop_assert!(value(id, m) <= s1.scores[id].min(s2.scores[id]));
        }
        // Switching any single choice never lowers the bound.
        let ids: Vec<&String> = r.per_image_choices.keys().collect();
        let id = ids[flip.index(ids.len())];
        let other = if r.per_image_choices[id] == "a" { "b" } else { "a" };
        let n = ids.len() as f64;
        let switched = r.ub_mr + (value(id, other) - value(id, &r.per_image_choices[id])) / n;
        prop_assert!(switched >= r.ub_mr - 1e-12);
    }

    #[test]
    fn higher_is_better_mirrors_lower((a, b) in vectors()) {
        let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<_>>();
        let lo = compute_upper_bounds(&MethodScores::from_values("a", &a), &MethodScores::from_values("b", &b), Orientation::LowerIsBetter).unwrap();
        let hi = compute_upper_bounds(&MethodScores::from_values("a", &neg(&a)), &MethodScores::from_values("b", &neg(&b)), Orientation::HigherIsBetter).unwrap();
        prop_assert!((lo.ub_mr + hi.ub_mr).abs() < 1e-9);
        prop_assert_eq!(lo.per_image_choices, hi.per_image_choices);
    }
}
