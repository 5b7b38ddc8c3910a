use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::Args;
use log::{info, warn};
use ranksurge::eval::{
    ablation_report, compute_upper_bounds, convergence_curves, evaluate_method, MethodScores, ScoreTable,
};
use ranksurge::metrics::{known_orientation, read_score_csv, write_score_csv, ExternalScorer, MetricRegistry, NiqeModel, NiqeScorer, Orientation};
use ranksurge::rankdata::{build_rank_dataset, synthetic, MethodCorpus, RankDataset, MANIFEST_FILE};
use ranksurge::ranker::{train_ranker as run_ranker, RankerModel};
use ranksurge::srgan::{train_srgan, FeatureExtractor, GeneratorModel, ModelBundle, PairedDataset};
use ranksurge::{Error, Image, Result};
use serde_json::json;

use crate::config::{under_root, RunConfig};
use crate::Common;

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut overrides = match std::env::var("RANKSURGE_WORKERS") {
        Ok(w) if !w.trim().is_empty() => vec![format!("workers={}", w.trim())],
        _ => Vec::new(),
    };
    overrides.extend(common.overrides.iter().cloned());
    if let Some(s) = common.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(w) = common.workers {
        overrides.push(format!("workers={w}"));
    }
    let file = common.config.as_ref().map(|p| under_root(&common.root, p));
    RunConfig::resolve(file.as_deref(), common.profile, &overrides)
}

fn path(common: &Common, p: &Path) -> PathBuf {
    under_root(&common.root, p)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.into(), source: e })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io { path: path.into(), source: e })
}

/// Writes `run.json` (command, versions, seed, config hash, resolved config,
/// inputs) and `config.toml` next to a command's outputs.
fn write_manifest(out_dir: &Path, command: &str, cfg: &RunConfig, inputs: serde_json::Value) -> Result<()> {
    create_dir(out_dir)?;
    let manifest = json!({
        "command": command,
        "versions": { "ranksurge": ranksurge::VERSION, "ranksurge-cli": env!("CARGO_PKG_VERSION") },
        "seed": cfg.seed,
        "config_hash": cfg.hash(),
        "config": cfg,
        "inputs": inputs,
    });
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    write_text(&out_dir.join("run.json"), &text)?;
    write_text(&out_dir.join("config.toml"), &cfg.to_toml()?)
}

fn registry(niqe_block: Option<usize>, scorers: &[String]) -> Result<MetricRegistry> {
    let mut r = MetricRegistry::with_builtins();
    if let Some(b) = niqe_block {
        r.register(Arc::new(NiqeScorer::new(NiqeModel::pristine().with_block_size(b)?)));
    }
    for s in scorers {
        let (name, program) =
            s.split_once('=').ok_or_else(|| Error::Config(format!("--scorer `{s}` is not NAME=PROGRAM")))?;
        let lower = known_orientation(name).is_none_or(|o| o == Orientation::LowerIsBetter);
        r.register(Arc::new(ExternalScorer::new(name, program, Vec::new(), lower)));
    }
    Ok(r)
}

fn load_dir_images(dir: &Path) -> Result<Vec<(String, Image)>> {
    let corpus = MethodCorpus::from_dir("input", dir)?;
    corpus.images.iter().map(|(id, p)| Ok((id.clone(), Image::load(p)?))).collect()
}

#[derive(Args, Debug)]
pub struct RankgenArgs {
    /// Directory holding one subdirectory of PNGs per method.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Treat `--input` as clean PNGs and build original/blurred corpora with this blur sigma.
    #[arg(long)]
    blur_sigma: Option<f64>,
    /// External metric `NAME=PROGRAM`; the program prints a score for the PNG path it is given.
    #[arg(long = "scorer")]
    scorers: Vec<String>,
}

pub fn rankgen(common: &Common, a: RankgenArgs) -> Result<()> {
    let cfg = resolve(common)?;
    let rg = cfg.rankgen_config();
    let (input, out) = (path(common, &a.input), path(common, &a.output));
    let corpora = match a.blur_sigma {
        Some(sigma) => synthetic::blur_corpora(&load_dir_images(&input)?, sigma, out.join("corpora"))?,
        None => MethodCorpus::discover(&input, &rg.methods)?,
    };
    let manifest = build_rank_dataset(&corpora, &registry(None, &a.scorers)?, &rg, cfg.seed, &out)?;
    let h = &manifest.header;
    info!("{} sites ({} val, {} dropped), {} patches, {} pairs", h.site_count, h.val_site_count, h.dropped_sites, h.patch_count, h.pair_count);
    write_manifest(&out, "rankgen", &cfg, json!({ "input": input, "blur_sigma": a.blur_sigma, "scorers": a.scorers }))
}

#[derive(Args, Debug)]
pub struct TrainRankerArgs {
    /// Rank dataset directory (or its manifest file).
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

pub fn train_ranker(common: &Common, a: TrainRankerArgs) -> Result<()> {
    let cfg = resolve(common)?;
    let mut manifest = path(common, &a.dataset);
    if manifest.is_dir() {
        manifest = manifest.join(MANIFEST_FILE);
    }
    let ds = RankDataset::load(&manifest)?;
    let out = path(common, &a.output);
    let (_, report) = run_ranker(&ds, &cfg.train_ranker, cfg.seed, Some(&out))?;
    info!("final val srocc {:?}, val loss {:?}", report.final_val_srocc, report.final_val_loss);
    write_manifest(&out, "train-ranker", &cfg, json!({ "dataset": manifest }))
}

#[derive(Args, Debug)]
pub struct TrainSrArgs {
    /// Paired dataset root with `lr/` and `hr/`, or HR PNGs with `--hr-only`.
    #[arg(long)]
    train: PathBuf,
    /// Validation dataset in the same layout as `--train`.
    #[arg(long)]
    val: Option<PathBuf>,
    /// Derive LR inputs by bicubic downsampling of HR PNGs.
    #[arg(long)]
    hr_only: bool,
    /// Frozen ranker checkpoint; required unless the rank weight is 0.
    #[arg(long)]
    ranker: Option<PathBuf>,
    /// Feature extractor weights; the pinned random extractor is used otherwise.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Generator checkpoint to start from.
    #[arg(long)]
    init_generator: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
}

pub fn train_sr(common: &Common, a: TrainSrArgs) -> Result<()> {
    let cfg = resolve(common)?;
    let sc = &cfg.train_sr;
    let load = |p: &Path| -> Result<PairedDataset> {
        let p = path(common, p);
        if a.hr_only { PairedDataset::from_hr(&load_dir_images(&p)?) } else { PairedDataset::load(&p) }
    };
    let train = load(&a.train)?;
    let val = a.val.as_deref().map(load).transpose()?;
    let ranker = a.ranker.as_ref().map(|p| RankerModel::load(path(common, p))).transpose()?;
    let features = match &a.features {
        Some(p) => FeatureExtractor::load(path(common, p))?,
        None => {
            warn!("no --features weights; using the pinned random-weight extractor");
            FeatureExtractor::fallback(sc.features.clone())
        }
    };
    let mut bundle = ModelBundle::new(sc, cfg.seed, features, ranker)?;
    if let Some(p) = &a.init_generator {
        bundle.g = GeneratorModel::load(path(common, p))?;
    }
    let out = path(common, &a.output);
    let report = train_srgan(&mut bundle, &train, val.as_ref(), sc, cfg.seed, Some(&out))?;
    if let Some(v) = report.validation.last() {
        info!("final val psnr {:.3}, niqe {:?}, l_r {:?}", v.psnr, v.niqe, v.l_r);
    }
    write_manifest(
        &out,
        "train-sr",
        &cfg,
        json!({
            "train": path(common, &a.train), "val": a.val.as_ref().map(|p| path(common, p)), "hr_only": a.hr_only,
            "ranker": a.ranker.as_ref().map(|p| path(common, p)),
            "features": a.features.as_ref().map(|p| path(common, p)),
            "init_generator": a.init_generator.as_ref().map(|p| path(common, p)),
        }),
    )
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// SR corpus `METHOD=DIR`; repeatable.
    #[arg(long = "method", required = true)]
    methods: Vec<String>,
    /// Ground-truth directory for full-reference metrics.
    #[arg(long)]
    hr: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
    #[arg(long = "scorer")]
    scorers: Vec<String>,
}

pub fn evaluate(common: &Common, a: EvaluateArgs) -> Result<()> {
    let cfg = resolve(common)?;
    let ec = &cfg.evaluate;
    let reg = registry(ec.niqe_block, &a.scorers)?;
    let hr = a.hr.as_ref().map(|p| MethodCorpus::from_dir("hr", path(common, p))).transpose()?;
    let out = path(common, &a.output);
    create_dir(&out)?;
    let mut table = ScoreTable::default();
    for m in &a.methods {
        let (name, dir) = m.split_once('=').ok_or_else(|| Error::Config(format!("--method `{m}` is not METHOD=DIR")))?;
        let sr = MethodCorpus::from_dir(name, path(common, Path::new(dir)))?;
        let row = evaluate_method(&ec.dataset_id, &sr, hr.as_ref(), &ec.metrics, &reg, cfg.workers)?;
        for (metric, n) in &row.failures {
            if *n > 0 {
                warn!("{name}: {n} images failed {metric}");
            }
        }
        let rows = row.per_image.values().flat_map(|m| m.iter().map(|(id, s)| (id.as_str(), s)));
        write_score_csv(out.join(format!("{name}_scores.csv")), rows)?;
        table.insert(row)?;
    }
    table.write_csv(out.join("scores.csv"))?;
    table.write_json(out.join("scores.json"))?;
    println!("{}", serde_json::to_string_pretty(&table.rows.iter().map(|r| (&r.method_id, &r.means)).collect::<BTreeMap<_, _>>())?);
    write_manifest(&out, "evaluate", &cfg, json!({ "methods": a.methods, "hr": a.hr.as_ref().map(|p| path(common, p)) }))
}

#[derive(Args, Debug)]
pub struct BoundsArgs {
    /// Per-image score CSV of the first method.
    #[arg(long)]
    sr1: PathBuf,
    /// Per-image score CSV of the second method.
    #[arg(long)]
    sr2: PathBuf,
    /// Also write the report and a run manifest into this directory.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn method_scores(p: &Path, metric: &str) -> Result<(MethodScores, Orientation)> {
    let rows = read_score_csv(p, Some(metric))?;
    if rows.is_empty() {
        return Err(Error::MissingMetric(format!("{metric} in {}", p.display())));
    }
    let orientation = rows[0].1.orientation();
    let name = p.file_stem().and_then(|s| s.to_str()).unwrap_or("sr").trim_end_matches("_scores").to_string();
    Ok((MethodScores::new(name, rows.into_iter().map(|(id, s)| (id, s.value))), orientation))
}

pub fn bounds(common: &Common, a: BoundsArgs) -> Result<()> {
    let cfg = resolve(common)?;
    let metric = &cfg.bounds.metric;
    let (s1, o) = method_scores(&path(common, &a.sr1), metric)?;
    let (s2, _) = method_scores(&path(common, &a.sr2), metric)?;
    let report = compute_upper_bounds(&s1, &s2, o)?;
    let text = serde_json::to_string_pretty(&report)?;
    println!("{text}");
    if let Some(out) = &a.output {
        let out = path(common, out);
        create_dir(&out)?;
        write_text(&out.join("bounds.json"), &(text + "\n"))?;
        write_manifest(&out, "bounds", &cfg, json!({ "sr1": path(common, &a.sr1), "sr2": path(common, &a.sr2) }))?;
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct CurvesArgs {
    /// Training log CSV with val_psnr / val_niqe columns.
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

pub fn curves(common: &Common, a: CurvesArgs) -> Result<()> {
    let cfg = resolve(common)?;
    let out = path(common, &a.output);
    let summary = convergence_curves(path(common, &a.log), Some(&out))?;
    let brief: BTreeMap<_, _> = summary
        .metrics
        .iter()
        .map(|(k, c)| (k, json!({ "final": c.final_value, "best": c.best, "best_iteration": c.best_iteration })))
        .collect();
    println!("{}", serde_json::to_string_pretty(&brief)?);
    write_manifest(&out, "curves", &cfg, json!({ "log": path(common, &a.log) }))
}

#[derive(Args, Debug)]
pub struct AblationArgs {
    /// `scores.json` written by `evaluate`.
    #[arg(long)]
    table: PathBuf,
    #[arg(long)]
    dataset: String,
    #[arg(long)]
    baseline: String,
    /// Runs to compare, in order; defaults to every method of the dataset.
    #[arg(long, value_delimiter = ',')]
    runs: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "niqe")]
    metrics: Vec<String>,
    #[arg(long)]
    output: Option<PathBuf>,
}

pub fn ablation(common: &Common, a: AblationArgs) -> Result<()> {
    let cfg = resolve(common)?;
    let table = ScoreTable::load_json(path(common, &a.table))?;
    let results: BTreeMap<String, _> =
        table.rows.into_iter().filter(|r| r.dataset_id == a.dataset).map(|r| (r.method_id.clone(), r)).collect();
    let runs = if a.runs.is_empty() { results.keys().cloned().collect() } else { a.runs.clone() };
    let report = ablation_report(&runs, &a.baseline, &a.metrics, &results)?;
    let md = report.to_markdown();
    print!("{md}");
    if let Some(out) = &a.output {
        let out = path(common, out);
        create_dir(&out)?;
        write_text(&out.join("ablation.md"), &md)?;
        report.write_csv(out.join("ablation.csv"))?;
        write_manifest(&out, "ablation", &cfg, json!({ "table": path(common, &a.table), "dataset": a.dataset }))?;
    }
    Ok(())
}
