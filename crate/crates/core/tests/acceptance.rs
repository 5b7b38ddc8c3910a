//! Acceptance suite. Prints one `PASS`/`FAIL`/`SKIP` line per criterion and
//! exits non-zero when any criterion fails.
//!
//! `RANKSURGE_PIRM_DIR` enables the reference-fixture check. It must hold one
//! subdirectory of released outputs per method (`srgan/`, `esrgan/`, and
//! optionally `srresnet/`), with identical file stems.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use ranksurge::checkpoint::TrainState;
use ranksurge::eval::{compute_upper_bounds, evaluate_method, MethodScores};
use ranksurge::metrics::{niqe, ranks_from_scores, srocc_from_scores, MetricRegistry, Orientation};
use ranksurge::nn::{seeded_rng, Layer, Mode, Tensor};
use ranksurge::rankdata::{
    build_rank_dataset, synthetic, MethodCorpus, RankDataset, RankgenConfig, Split, Strategy, MANIFEST_FILE,
};
use ranksurge::ranker::{
    level_distance, margin_rank_grad, margin_rank_loss, regression_grad, regression_loss, train_ranker, LossMode,
    RankerArch, RankerConfig, RankerModel,
};
use ranksurge::srgan::{
    rank_content_grad, rank_content_loss, sigmoid, total_generator_loss, train_srgan, FeatureArch, FeatureExtractor,
    LossComponents, LossWeights, ModelBundle, PairedDataset, SrganConfig,
};
use ranksurge::Image;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn fixture_images() -> Vec<(String, Image)> {
    ["camera", "chelsea", "coffee", "gravel", "immunohistochemistry"]
        .iter()
        .map(|n| (n.to_string(), Image::load(fixtures().join("images").join(format!("{n}.png"))).unwrap()))
        .collect()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

fn central(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

struct Suite {
    failed: usize,
}

impl Suite {
    fn run(&mut self, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let outcome = f();
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > budget => Err(format!("{detail}; over the {budget:?} budget")),
            other => other,
        };
        let (status, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                self.failed += 1;
                ("FAIL", d)
            }
        };
        println!("{status}  {name:<28} {:>8.1}s  {detail}", elapsed.as_secs_f64());
        std::io::stdout().flush().ok();
    }

    fn skip(&self, name: &str, reason: &str) {
        println!("SKIP  {name:<28} {:>8}   {reason}", "-");
    }
}

// Loss arithmetic

/// Ranker with every parameter zero except the output bias.
fn constant_ranker(bias: f32) -> RankerModel<f32> {
    let mut r = RankerModel::new(RankerArch::desk(), &mut seeded_rng(0, "acceptance.const")).unwrap();
    let mut params = r.net_mut().params_mut();
    for p in params.iter_mut() {
        p.value.iter_mut().for_each(|v| *v = 0.0);
    }
    params.last_mut().unwrap().value[0] = bias;
    r
}

fn loss_math() -> Outcome {
    let exact = |got: f64, want: f64, what: &str| ensure((got - want).abs() <= 1e-9, || format!("{what}: {got} != {want}"));
    exact(margin_rank_loss(0.0, 1.0, 1.0, 0.5), 0.0, "margin correct order")?;
    exact(margin_rank_loss(1.0, 0.0, 1.0, 0.5), 1.5, "margin wrong order")?;
    for gamma in [1.0, -1.0] {
        exact(margin_rank_loss(0.42, 0.42, gamma, 0.5), 0.5, "margin tie")?;
    }
    exact(regression_loss(0.3, 0.3), 0.0, "regression at target")?;
    exact(regression_loss(3.0, 1.0), 4.0, "regression arithmetic")?;
    let fd = central(|s| regression_loss(s, 0.2), 0.7, 1e-5);
    ensure(rel_err(regression_grad(0.7, 0.2), fd) < 1e-4, || format!("regression grad {} vs {fd}", regression_grad(0.7, 0.2)))?;

    let mut rng = seeded_rng(1, "acceptance.loss");
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    while checked < 1000 {
        let (s1, s2, eps): (f64, f64, f64) = (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(0.01..2.0));
        let gamma = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        exact(margin_rank_loss(s1, s2, gamma, eps), margin_rank_loss(s2, s1, -gamma, eps), "margin antisymmetry")?;
        if (gamma * (s1 - s2) + eps).abs() <= 1e-3 {
            continue;
        }
        let (g1, g2) = margin_rank_grad(s1, s2, gamma, eps);
        let f1 = central(|x| margin_rank_loss(x, s2, gamma, eps), s1, 1e-5);
        let f2 = central(|x| margin_rank_loss(s1, x, gamma, eps), s2, 1e-5);
        let t = rng.random_range(-5.0..5.0);
        let fr = central(|x| regression_loss(x, t), s1, 1e-5);
        for (a, b) in [(g1, f1), (g2, f2), (regression_grad(s1, t), fr)] {
            let e = if a == 0.0 && b == 0.0 { 0.0 } else { rel_err(a, b) };
            worst = worst.max(e);
        }
        checked += 1;
    }
    ensure(worst < 1e-4, || format!("finite-difference rel error {worst:.2e}"))?;

    let img = Image::filled(16, 16, 3, 0.3).unwrap();
    exact(rank_content_loss(&mut constant_ranker(0.0), &img, 1.0).unwrap(), 0.5, "L_R at R = 0")?;
    // Bias 1 at temperature 1/ln 3 scores exactly ln 3 before the sigmoid.
    exact(rank_content_loss(&mut constant_ranker(1.0), &img, 1.0 / 3f64.ln()).unwrap(), 0.75, "L_R at R = ln 3")?;
    let rank_fd = rank_content_fd()?;

    let w = LossWeights::default();
    ensure((w.w_adv, w.w_rank, w.w_mse) == (0.005, 0.03, 0.0), || format!("default weights {w:?}"))?;
    let c = LossComponents { l_p: 1.0, l_g: 2.0, l_r: 0.5, l_m: 0.0 };
    exact(total_generator_loss(&c, &w).unwrap(), 1.025, "total loss")?;
    let only_p = LossWeights { w_adv: 0.0, w_rank: 0.0, w_mse: 0.0 };
    exact(total_generator_loss(&c, &only_p).unwrap(), 1.0, "L_P only")?;
    let at = |w_rank: f64| total_generator_loss(&c, &LossWeights { w_rank, ..w }).unwrap();
    exact(at(0.06) - at(0.0), 2.0 * (at(0.03) - at(0.0)), "linearity in w_rank")?;
    ensure(total_generator_loss(&LossComponents { l_r: f64::NAN, ..c }, &w).is_err(), || "NaN accepted".into())?;

    Ok(format!("examples exact; {checked} scalar gradients worst rel {worst:.1e}; L_R pixel gradient worst rel {rank_fd:.1e}"))
}

/// Rank-content pixel gradient of a 16x16 toy ranker against f64 central
/// differences through a double-precision replica of the same network.
fn rank_content_fd() -> Result<f64, String> {
    let mut r = RankerModel::<f32>::new(RankerArch::desk(), &mut seeded_rng(5, "acceptance.toy")).unwrap();
    let mut rng = seeded_rng(6, "acceptance.toy.input");
    let mut x = Tensor::<f32>::zeros([1, 3, 16, 16]);
    x.data_mut().iter_mut().for_each(|v| *v = rng.random_range(0.0..1.0));
    let (_, _, grad) = rank_content_grad(&mut r, &x, 1.0);
    let mut r64 = RankerModel::<f64>::from_checkpoint(&r.to_checkpoint(TrainState::default()).unwrap()).unwrap();
    let mut loss = |t: &Tensor<f64>| sigmoid(r64.forward(t, Mode::Eval)[0]);
    let base: Tensor<f64> = x.cast();
    let g = grad.data();
    let mut order: Vec<usize> = (0..g.len()).collect();
    order.sort_by(|&a, &b| g[b].abs().total_cmp(&g[a].abs()));
    let max = f64::from(g[order[0]].abs());
    let mut worst: f64 = 0.0;
    for &i in order.iter().take(16) {
        let h = 1e-6;
        let mut p = base.clone();
        p.data_mut()[i] += h;
        let mut m = base.clone();
        m.data_mut()[i] -= h;
        let fd = (loss(&p) - loss(&m)) / (2.0 * h);
        worst = worst.max(rel_err(f64::from(g[i]), fd));
    }
    ensure(max > 0.0 && worst < 1e-3, || format!("L_R pixel gradient rel error {worst:.2e}"))?;
    Ok(worst)
}

// Rank statistics

fn srocc_oracle() -> Outcome {
    let mut rng = seeded_rng(2, "acceptance.srocc");
    for trial in 0..1000 {
        let n = rng.random_range(2..=10usize);
        let mut a: Vec<f64> = (0..n).map(|i| i as f64 + 0.5).collect();
        let mut b = a.clone();
        a.shuffle(&mut rng);
        b.shuffle(&mut rng);
        // Rank by counting strictly smaller entries, then sum squared differences.
        let rank = |v: &[f64], i: usize| 1 + v.iter().filter(|&&x| x < v[i]).count();
        let d2: usize = (0..n).map(|i| (rank(&a, i) as isize - rank(&b, i) as isize).pow(2) as usize).sum();
        let want = 1.0 - 6.0 * d2 as f64 / (n * (n * n - 1)) as f64;
        let got = srocc_from_scores(&a, Orientation::LowerIsBetter, &b, Orientation::LowerIsBetter).map_err(|e| e.to_string())?;
        ensure((got - want).abs() <= 1e-12, || format!("trial {trial}, n {n}: {got} vs {want}"))?;
        let ra = ranks_from_scores(&a, Orientation::LowerIsBetter);
        ensure((0..n).all(|i| ra[i] == rank(&a, i)), || format!("trial {trial}: ranks {ra:?}"))?;
    }
    Ok("1000 permutations, N in 2..=10, exact to 1e-12".into())
}

fn upper_bounds() -> Outcome {
    let mut rng = seeded_rng(3, "acceptance.bounds");
    for trial in 0..1000 {
        let n = rng.random_range(1..=60usize);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..20.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..20.0)).collect();
        let (s1, s2) = (MethodScores::from_values("sr1", &a), MethodScores::from_values("sr2", &b));
        let r = compute_upper_bounds(&s1, &s2, Orientation::LowerIsBetter).map_err(|e| e.to_string())?;
        let mean = |s: &MethodScores| s.scores.values().sum::<f64>() / n as f64;
        let (m1, m2) = (mean(&s1), mean(&s2));
        ensure(r.ub_mc == m2, || format!("trial {trial}: ub_mc {} != mean2 {m2}", r.ub_mc))?;
        ensure(r.ub_mr <= m1.min(m2) + 1e-12, || format!("trial {trial}: ub_mr {} above min({m1}, {m2})", r.ub_mr))?;
        for (id, chosen) in &r.per_image_choices {
            let (v1, v2) = (s1.scores[id], s2.scores[id]);
            let picked = if chosen == "sr1" { v1 } else { v2 };
            ensure(picked <= v1.min(v2), || format!("trial {trial}: image {id} picked {picked} over {}", v1.min(v2)))?;
        }
    }
    Ok("1000 random pairs: sandwich, ub_mc = mean2, pointwise optimal choices".into())
}

// NIQE

fn niqe_oracle() -> Outcome {
    let text = std::fs::read_to_string(fixtures().join("niqe_reference.json")).map_err(|e| e.to_string())?;
    let reference: BTreeMap<String, f64> = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    ensure(reference.len() == 5, || format!("{} reference scores", reference.len()))?;
    let mut worst: f64 = 0.0;
    let mut rng = seeded_rng(4, "acceptance.niqe");
    for (name, img) in fixture_images() {
        let want = *reference.get(&name).ok_or_else(|| format!("no reference for {name}"))?;
        let got = niqe(&img).map_err(|e| e.to_string())?.value;
        let e = rel_err(got, want);
        worst = worst.max(e);
        ensure(e < 1e-3, || format!("{name}: {got} vs reference {want}"))?;
        let blurred = niqe(&img.gaussian_blur(3.0)).map_err(|e| e.to_string())?.value;
        let noisy = niqe(&img.add_gaussian_noise(0.1, &mut rng)).map_err(|e| e.to_string())?.value;
        ensure(blurred > got && noisy > got, || format!("{name}: original {got:.3}, blur {blurred:.3}, noise {noisy:.3}"))?;
    }
    Ok(format!("5 fixtures, worst rel {worst:.1e}; blur sigma 3 and noise sigma 0.1 both raise NIQE"))
}

// Ranker

/// Original vs. blurred patches of the fixture photos, ordered by method.
fn synthetic_config(workers: usize) -> RankgenConfig {
    RankgenConfig {
        strategy: Strategy::ModelClassification,
        precedence: vec![synthetic::ORIGINAL.into(), synthetic::BLURRED.into()],
        patch: 48,
        stride: 48,
        niqe_block: Some(24),
        val_fraction: 0.25,
        workers,
        ..RankgenConfig::desk()
    }
}

const BLUR_SIGMA: f64 = 1.5;
const SEED: u64 = 7;

fn synthetic_corpora(root: &Path) -> Vec<MethodCorpus> {
    synthetic::blur_corpora(&fixture_images(), BLUR_SIGMA, root.join("corpora")).unwrap()
}

fn build(corpora: &[MethodCorpus], workers: usize, out: &Path) -> Result<RankDataset, String> {
    build_rank_dataset(corpora, &MetricRegistry::with_builtins(), &synthetic_config(workers), SEED, out).map_err(|e| e.to_string())?;
    RankDataset::load(out.join(MANIFEST_FILE)).map_err(|e| e.to_string())
}

fn ranker_config(mode: LossMode, iters: u64) -> RankerConfig {
    let mut cfg = RankerConfig::desk();
    cfg.loss.mode = mode;
    cfg.train.total_iters = iters;
    cfg
}

fn determinism(root: &Path) -> Outcome {
    let corpora = synthetic_corpora(&root.join("det"));
    let read = |p: PathBuf| std::fs::read(p).map_err(|e| e.to_string());
    let ds = build(&corpora, 1, &root.join("det/a"))?;
    build(&corpora, 2, &root.join("det/b"))?;
    ensure(read(root.join("det/a").join(MANIFEST_FILE))? == read(root.join("det/b").join(MANIFEST_FILE))?, || {
        "rankgen manifests differ".into()
    })?;
    let cfg = ranker_config(LossMode::MarginRank, 200);
    for name in ["r1", "r2"] {
        train_ranker(&ds, &cfg, SEED, Some(&root.join("det").join(name))).map_err(|e| e.to_string())?;
    }
    let (c1, c2) = (read(root.join("det/r1/ranker.ckpt"))?, read(root.join("det/r2/ranker.ckpt"))?);
    ensure(c1 == c2, || "ranker checkpoints differ".into())?;
    Ok(format!("rankgen manifests identical across 1 and 2 workers; ranker checkpoints identical ({} bytes, 200 iterations)", c1.len()))
}

/// Share of held-out sites where the original patch outscores the blurred one.
fn held_out_consistency(m: &mut RankerModel<f32>, ds: &RankDataset) -> Result<f64, String> {
    let sites = ds.sites_in(Split::Val);
    let mut good = 0;
    for site in &sites {
        let by_method: BTreeMap<&str, usize> =
            site.patches.iter().map(|&i| (ds.manifest.patches[i].method_id.as_str(), i)).collect();
        let (o, b) = (by_method[synthetic::ORIGINAL], by_method[synthetic::BLURRED]);
        let s = m.score_images(&[ds.image(o), ds.image(b)]).map_err(|e| e.to_string())?;
        good += usize::from(s[0] < s[1]);
    }
    Ok(good as f64 / sites.len() as f64)
}

struct RankerRun {
    model: RankerModel<f32>,
    distance: f64,
}

fn ranker_learning(ds: &RankDataset, out: &Path, trained: &mut Option<RankerRun>) -> Outcome {
    let cfg = ranker_config(LossMode::MarginRank, 2000);
    let (mut m, report) = train_ranker(ds, &cfg, SEED, Some(out)).map_err(|e| e.to_string())?;
    let srocc = report.final_val_srocc.ok_or("no validation SROCC")?;
    let consistency = held_out_consistency(&mut m, ds)?;
    let distance = level_distance(&mut m, ds, synthetic::ORIGINAL, synthetic::BLURRED, Split::Val).map_err(|e| e.to_string())?;
    let h = &ds.manifest.header;
    let detail = format!(
        "{} sites ({} val), {} iterations: val SROCC {srocc:.4}, original ranked better on {:.1}% of val sites",
        h.site_count,
        h.val_site_count,
        report.iterations,
        100.0 * consistency
    );
    *trained = Some(RankerRun { model: m, distance });
    ensure(srocc >= 0.85 && consistency >= 0.9, || detail.clone())?;
    Ok(detail)
}

fn rank_vs_regression(ds: &RankDataset, trained: &Option<RankerRun>) -> Outcome {
    let rank = trained.as_ref().ok_or("margin-rank ranker did not train")?;
    let cfg = ranker_config(LossMode::Regression, 2000);
    let (mut m, _) = train_ranker(ds, &cfg, SEED, None).map_err(|e| e.to_string())?;
    let reg = level_distance(&mut m, ds, synthetic::ORIGINAL, synthetic::BLURRED, Split::Val).map_err(|e| e.to_string())?;
    let detail = format!("E|s_A - s_B| on val: margin-rank {:.3}, regression {reg:.3}", rank.distance);
    ensure(rank.distance > reg, || detail.clone())?;
    Ok(detail)
}

// SRGAN

fn srgan_smoke(trained: &Option<RankerRun>) -> Outcome {
    let ranker = trained.as_ref().ok_or("no frozen ranker available")?.model.clone();
    let images = fixture_images();
    let train = PairedDataset::from_hr(&images[..4]).map_err(|e| e.to_string())?;
    let val = PairedDataset::from_hr(&images[4..]).map_err(|e| e.to_string())?;
    let cfg = SrganConfig::desk();
    let f = FeatureExtractor::fallback(FeatureArch::desk());
    let mut b = ModelBundle::new(&cfg, SEED, f, Some(ranker)).map_err(|e| e.to_string())?;
    let f_before = b.f.to_checkpoint().map_err(|e| e.to_string())?.to_bytes();
    let r_bytes = |b: &ModelBundle| b.r.as_ref().unwrap().to_checkpoint(TrainState::default()).unwrap().to_bytes();
    let r_before = r_bytes(&b);

    let report = train_srgan(&mut b, &train, Some(&val), &cfg, SEED, None).map_err(|e| e.to_string())?;
    ensure(report.iterations == cfg.train.total_iters, || format!("ran {} iterations", report.iterations))?;
    ensure(report.frozen.unchanged(), || "F or R digest moved".into())?;
    ensure(b.f.to_checkpoint().unwrap().to_bytes() == f_before && r_bytes(&b) == r_before, || {
        "F or R checkpoint bytes changed".into()
    })?;
    let open = |v: f64| v > 0.0 && v < 1.0;
    let (lo, hi) = report.l_r_range.ok_or("no L_R logged")?;
    ensure(open(lo) && open(hi), || format!("L_R range ({lo}, {hi})"))?;
    let logged: Vec<f64> = report.rows.iter().filter_map(|r| r.l_r).chain(report.validation.iter().filter_map(|v| v.l_r)).collect();
    ensure(!logged.is_empty() && logged.iter().all(|&v| open(v)), || "logged L_R outside (0, 1)".into())?;
    let first = report.validation.first().ok_or("no validation")?;
    let last = report.validation.last().unwrap();
    let (l0, l1) = (first.l_r.ok_or("no validation L_R")?, last.l_r.ok_or("no validation L_R")?);
    let detail = format!(
        "val L_R {l0:.4e} at {} -> {l1:.4e} at {}; L_R range ({lo:.3e}, {hi:.3e}); F/R unchanged",
        first.iteration, last.iteration
    );
    ensure(first.iteration == 0 && last.iteration == cfg.train.total_iters && l1 < l0, || detail.clone())?;
    Ok(detail)
}

// Released outputs

fn reference_fixtures(root: &Path) -> Outcome {
    let registry = MetricRegistry::with_builtins();
    let metric = vec!["niqe".to_string()];
    let targets = [("srresnet", 5.968), ("srgan", 2.705), ("esrgan", 2.557)];
    let mut means = Vec::new();
    let mut rows = BTreeMap::new();
    for (method, want) in targets {
        let dir = root.join(method);
        if !dir.is_dir() {
            ensure(method == "srresnet", || format!("missing {}", dir.display()))?;
            continue;
        }
        let corpus = MethodCorpus::from_dir(method, &dir).map_err(|e| e.to_string())?;
        let row = evaluate_method("pirm", &corpus, None, &metric, &registry, 0).map_err(|e| e.to_string())?;
        let got = row.mean("niqe").ok_or("no NIQE mean")?;
        ensure((got - want).abs() <= 0.05, || format!("{method} NIQE {got:.3}, expected {want} +- 0.05"))?;
        means.push(format!("{method} {got:.3}"));
        rows.insert(method, row);
    }
    let scores = |m: &str| MethodScores {
        method_id: m.into(),
        scores: rows[m].per_image["niqe"].iter().map(|(k, v)| (k.clone(), v.value)).collect(),
    };
    let r = compute_upper_bounds(&scores("srgan"), &scores("esrgan"), Orientation::LowerIsBetter).map_err(|e| e.to_string())?;
    ensure(r.ub_mr < 2.557, || format!("ub_mr {:.3}", r.ub_mr))?;
    Ok(format!("NIQE means {}; ub_mc {:.3}, ub_mr {:.3}", means.join(", "), r.ub_mc, r.ub_mr))
}

fn main() {
    let mut suite = Suite { failed: 0 };
    let secs = Duration::from_secs;
    suite.run("loss math", secs(10), loss_math);
    suite.run("srocc oracle", secs(10), srocc_oracle);
    suite.run("upper-bound properties", secs(5), upper_bounds);
    suite.run("niqe oracle", secs(30), niqe_oracle);

    let dir = tempfile::tempdir().expect("temporary directory");
    let root = dir.path();
    suite.run("determinism", secs(15 * 60), || determinism(root));

    let ds = build(&synthetic_corpora(root), 0, &root.join("synthetic"));
    let mut trained = None;
    match &ds {
        Ok(ds) => {
            let start = Instant::now();
            suite.run("ranker desk learning", secs(15 * 60), || ranker_learning(ds, &root.join("ranker"), &mut trained));
            let remaining = secs(30 * 60).saturating_sub(start.elapsed());
            suite.run("rank vs regression", remaining, || rank_vs_regression(ds, &trained));
        }
        Err(e) => {
            suite.run("ranker desk learning", secs(0), || Err(format!("rank dataset: {e}")));
            suite.run("rank vs regression", secs(0), || Err(format!("rank dataset: {e}")));
        }
    }
    suite.run("srgan end-to-end smoke", secs(30 * 60), || srgan_smoke(&trained));

    match std::env::var_os("RANKSURGE_PIRM_DIR") {
        Some(p) => suite.run("reference fixtures", secs(30 * 60), || reference_fixtures(Path::new(&p))),
        None => suite.skip("reference fixtures", "set RANKSURGE_PIRM_DIR to the released PIRM-Test outputs"),
    }

    if suite.failed > 0 {
        println!("{} criteria failed", suite.failed);
        std::process::exit(1);
    }
}
