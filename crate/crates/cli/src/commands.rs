use std::fs;
use std::path::Path;

use mmrec::dataset::{load_dataset, Dataset, Entity};
use mmrec::eval::{eval_model, subset_grid};
use mmrec::gap::{pca_project, separability_probe, EmbeddingBank, GapStats, EXPORT_ITEMS, PROBE_SEEDS, PROBE_TRAIN_FRACTION};
use mmrec::models::{load_checkpoint, save_checkpoint, Model, ModelConfig};
use mmrec::rng::mix;
use mmrec::splits::{load_split, save_split, split_cold, split_warm, Phase, Split, DEFAULT_RATIOS};
use mmrec::stats::paired_ttest;
use mmrec::synth::{generate, write_synth, SynthConfig};
use mmrec::trainer::{train, TrainConfig};
use mmrec::view::DataView;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::manifest::{hash_dir, sha256_hex, RunManifest};
use crate::report::{self, num, MetricSummary};
use crate::{Command, DataSplit, OutSeed, PhaseArg, ScenarioArg};

/// Contents of a `--config` file for train and sweep.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

pub fn run(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Synth { common, config } => synth(&common, config.as_deref()),
        Command::Split { data, common, scenario } => split(&data, &common, scenario),
        Command::Train { input, common, config } => train_cmd(&input, &common, config.as_deref()),
        Command::Eval {
            input,
            run,
            common,
            k,
            phase,
            modalities,
        } => eval_cmd(&input, &run, &common, k, phase, modalities),
        Command::EvalGrid {
            input,
            run,
            common,
            k,
            phase,
            modalities,
        } => eval_grid(&input, &run, &common, k, phase, modalities),
        Command::Sweep {
            input,
            common,
            config,
            k,
            alphas,
            taus,
        } => sweep(&input, &common, config.as_deref(), k, &alphas, &taus),
        Command::Gap { input, run, common } => gap(&input, &run, &common),
        Command::Probe { input, run, common } => probe(&input, &run, &common),
        Command::Compare {
            a,
            b,
            metric,
            n_comparisons,
            out,
        } => compare(&a, &b, &metric, n_comparisons, &out),
        Command::Report { run, out } => report_cmd(&run, &out),
    }
}

fn create_out(out: &Path, inputs: &[&Path]) -> CliResult<()> {
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let canon = |p: &Path| fs::canonicalize(p).ok();
    let o = canon(out);
    if inputs.iter().any(|p| canon(p) == o) {
        return Err(CliError::Usage(format!(
            "output directory {} is also an input",
            out.display()
        )));
    }
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn read_run_config(path: Option<&Path>) -> CliResult<RunConfig> {
    let cfg: RunConfig = match path {
        Some(p) => read_json(p)?,
        None => RunConfig::default(),
    };
    cfg.model.validate()?;
    cfg.train.validate()?;
    Ok(cfg)
}

/// A missing input is a usage error rather than a runtime failure.
fn require(path: &Path) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{} does not exist", path.display())))
    }
}

fn load_data(dir: &Path, manifest: &mut RunManifest) -> CliResult<Dataset> {
    require(&dir.join("dataset.json"))?;
    let data = load_dataset(&dir.join("dataset.json"))?;
    manifest.dataset_hash = Some(hash_dir(dir)?);
    Ok(data)
}

struct Loaded {
    data: Dataset,
    split: Split,
}

fn load_inputs(input: &DataSplit, manifest: &mut RunManifest) -> CliResult<Loaded> {
    let data = load_data(&input.data, manifest)?;
    require(&input.split.join("split.json"))?;
    let split = load_split(&input.split)?;
    Ok(Loaded { data, split })
}

fn load_model(run: &Path, loaded: &Loaded) -> CliResult<Model> {
    require(&run.join("params.json"))?;
    let model = load_checkpoint(run, &loaded.data)?;
    if model.net.shape.scenario != loaded.split.scenario {
        return Err(CliError::Usage(format!(
            "checkpoint was trained for {:?}, split is {:?}",
            model.net.shape.scenario, loaded.split.scenario
        )));
    }
    Ok(model)
}

fn phase(p: PhaseArg) -> Phase {
    match p {
        PhaseArg::Val => Phase::Val,
        PhaseArg::Test => Phase::Test,
    }
}

fn phase_name(p: PhaseArg) -> &'static str {
    match p {
        PhaseArg::Val => "val",
        PhaseArg::Test => "test",
    }
}

fn synth(common: &OutSeed, config: Option<&Path>) -> CliResult<()> {
    let mut manifest = RunManifest::start("synth", common.seed);
    let mut cfg: SynthConfig = match config {
        Some(p) => read_json(p)?,
        None => SynthConfig::default(),
    };
    cfg.seed = common.seed;
    manifest.config_hash = Some(sha256_hex(serde_json::to_string(&cfg)?.as_bytes()));
    let (data, truth) = generate(&cfg)?;
    create_out(&common.out, &[])?;
    write_synth(&common.out, &data, &truth)?;
    report::write_json(&common.out.join("synth_config.json"), &cfg)?;
    log::info!(
        "{} users, {} items, {} interactions (density {:.4})",
        data.n_users(),
        data.n_items(),
        data.interactions().len(),
        truth.realized_density
    );
    manifest.finish(&common.out)
}

fn split(data_dir: &Path, common: &OutSeed, scenario: ScenarioArg) -> CliResult<()> {
    let mut manifest = RunManifest::start("split", common.seed);
    let data = load_data(data_dir, &mut manifest)?;
    let s = match scenario {
        ScenarioArg::Warm => split_warm(&data, DEFAULT_RATIOS, common.seed)?,
        ScenarioArg::UserCold => split_cold(&data, Entity::User, DEFAULT_RATIOS, common.seed)?,
        ScenarioArg::ItemCold => split_cold(&data, Entity::Item, DEFAULT_RATIOS, common.seed)?,
    };
    create_out(&common.out, &[data_dir])?;
    save_split(&common.out, &s)?;
    log::info!("train {} / val {} / test {}", s.train.len(), s.val.len(), s.test.len());
    manifest.finish(&common.out)
}

/// Trains one model; `seed` drives initialization and all training draws.
fn fit(loaded: &Loaded, cfg: &RunConfig, seed: u64) -> CliResult<(Model, mmrec::trainer::TrainHistory)> {
    let view = DataView::new(&loaded.data, &loaded.split)?;
    let model = Model::new(&cfg.model, &loaded.data, loaded.split.scenario, seed)?;
    let tc = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    Ok(train(model, &view, &loaded.split, &tc)?)
}

fn train_cmd(input: &DataSplit, common: &OutSeed, config: Option<&Path>) -> CliResult<()> {
    let mut manifest = RunManifest::start("train", common.seed);
    let mut cfg = read_run_config(config)?;
    cfg.train.seed = common.seed;
    manifest.config_hash = Some(sha256_hex(serde_json::to_string(&cfg)?.as_bytes()));
    let loaded = load_inputs(input, &mut manifest)?;
    let (mut model, history) = fit(&loaded, &cfg, common.seed)?;
    create_out(&common.out, &[&input.data, &input.split])?;
    save_checkpoint(&mut model, &common.out)?;
    report::write_text(&common.out.join("history.csv"), &history.to_csv())?;
    report::write_json(&common.out.join("config.json"), &cfg)?;
    if !history.epochs.is_empty() {
        log::info!("best epoch {}", history.best_epoch);
    }
    manifest.finish(&common.out)
}

fn eval_cmd(
    input: &DataSplit,
    run: &Path,
    common: &OutSeed,
    k: usize,
    p: PhaseArg,
    modalities: Option<Vec<String>>,
) -> CliResult<()> {
    let mut manifest = RunManifest::start("eval", common.seed);
    require(run)?;
    manifest.config_hash = Some(hash_dir(run)?);
    let loaded = load_inputs(input, &mut manifest)?;
    let mut model = load_model(run, &loaded)?;
    let view = DataView::new(&loaded.data, &loaded.split)?;
    let r = eval_model(&mut model, &view, &loaded.split, phase(p), k, modalities.as_deref())?;
    create_out(&common.out, &[&input.data, &input.split, run])?;
    report::write_metrics(&common.out.join("metrics.csv"), &r)?;
    report::write_per_user(&common.out.join("per_user.csv"), &r, &loaded.data)?;
    let summary = MetricSummary {
        k,
        phase: phase_name(p),
        subset: modalities.as_deref(),
        n_users_evaluated: r.n_users_evaluated,
        pl_excluded: r.pl_excluded,
        mean: &r.mean,
    };
    report::write_json(&common.out.join("metrics.json"), &summary)?;
    log::info!("ndcg@{k} {:.5} over {} users", r.get("ndcg"), r.n_users_evaluated);
    manifest.finish(&common.out)
}

fn eval_grid(
    input: &DataSplit,
    run: &Path,
    common: &OutSeed,
    k: usize,
    p: PhaseArg,
    modalities: Option<Vec<String>>,
) -> CliResult<()> {
    let mut manifest = RunManifest::start("eval-grid", common.seed);
    require(run)?;
    manifest.config_hash = Some(hash_dir(run)?);
    let loaded = load_inputs(input, &mut manifest)?;
    let mut model = load_model(run, &loaded)?;
    let view = DataView::new(&loaded.data, &loaded.split)?;
    let grid = subset_grid(&mut model, &view, &loaded.split, phase(p), k, modalities.as_deref())?;
    create_out(&common.out, &[&input.data, &input.split, run])?;
    report::write_grid(&common.out.join("grid.csv"), &grid)?;
    report::write_grid_by_count(&common.out.join("grid_by_count.csv"), &grid)?;
    #[derive(Serialize)]
    struct Row<'a> {
        mask: u32,
        subset: &'a [String],
        mean: &'a std::collections::BTreeMap<String, f64>,
    }
    #[derive(Serialize)]
    struct Grid<'a> {
        k: usize,
        phase: &'a str,
        modalities: &'a [String],
        rows: Vec<Row<'a>>,
    }
    let json = Grid {
        k,
        phase: phase_name(p),
        modalities: &grid.modalities,
        rows: grid
            .rows
            .iter()
            .map(|r| Row {
                mask: r.mask,
                subset: &r.subset,
                mean: &r.report.mean,
            })
            .collect(),
    };
    report::write_json(&common.out.join("grid.json"), &json)?;
    manifest.finish(&common.out)
}

/// Seed of sweep cell (a, t). Cell (0, 0) reuses the master seed, so a 1×1
/// sweep reproduces a plain train run.
pub fn cell_seed(master: u64, a: usize, t: usize) -> u64 {
    if a == 0 && t == 0 {
        master
    } else {
        mix(&[master, a as u64, t as u64])
    }
}

#[derive(Clone, Debug, Serialize)]
struct SweepRow {
    alpha: f64,
    tau: f64,
    seed: u64,
    ndcg10: Option<f64>,
    intra_cs: Option<f64>,
    intra_ed: Option<f64>,
    best_epoch: Option<usize>,
    error: Option<String>,
}

fn sweep_cell(loaded: &Loaded, base: &RunConfig, k: usize, alpha: f64, tau: f64, seed: u64) -> CliResult<(f64, GapStats, usize)> {
    let mut cfg = base.clone();
    cfg.model.loss.alpha = alpha;
    cfg.model.loss.tau = tau;
    cfg.model.validate()?;
    let (mut model, history) = fit(loaded, &cfg, seed)?;
    let view = DataView::new(&loaded.data, &loaded.split)?;
    let r = eval_model(&mut model, &view, &loaded.split, Phase::Test, k, None)?;
    let items: Vec<usize> = (0..loaded.data.n_items()).collect();
    let bank = EmbeddingBank::from_model(&mut model, &view, &items)?;
    Ok((r.get("ndcg"), GapStats::compute(&bank)?, history.best_epoch))
}

fn sweep(input: &DataSplit, common: &OutSeed, config: Option<&Path>, k: usize, alphas: &[f64], taus: &[f64]) -> CliResult<()> {
    let mut manifest = RunManifest::start("sweep", common.seed);
    let base = read_run_config(config)?;
    manifest.config_hash = Some(sha256_hex(serde_json::to_string(&base)?.as_bytes()));
    if !base.model.kind.is_multimodal() {
        return Err(CliError::Usage("a sweep needs a multimodal model".into()));
    }
    let loaded = load_inputs(input, &mut manifest)?;
    let cells: Vec<(usize, usize)> = (0..alphas.len()).flat_map(|a| (0..taus.len()).map(move |t| (a, t))).collect();
    let rows: Vec<SweepRow> = cells
        .par_iter()
        .map(|&(a, t)| {
            let seed = cell_seed(common.seed, a, t);
            let (alpha, tau) = (alphas[a], taus[t]);
            match sweep_cell(&loaded, &base, k, alpha, tau, seed) {
                Ok((ndcg, gap, best)) => SweepRow {
                    alpha,
                    tau,
                    seed,
                    ndcg10: Some(ndcg),
                    intra_cs: Some(gap.intra_cs),
                    intra_ed: Some(gap.intra_ed),
                    best_epoch: Some(best),
                    error: None,
                },
                Err(e) => {
                    log::warn!("cell alpha={alpha} tau={tau} failed: {e}");
                    SweepRow {
                        alpha,
                        tau,
                        seed,
                        ndcg10: None,
                        intra_cs: None,
                        intra_ed: None,
                        best_epoch: None,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();
    create_out(&common.out, &[&input.data, &input.split])?;
    let path = common.out.join("sweep.csv");
    let mut w = report::csv_writer(&path)?;
    w.write_record(["alpha", "tau", "alpha_over_tau", "seed", "ndcg10", "intra_cs", "intra_ed", "best_epoch", "error"])?;
    let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
    for r in &rows {
        w.write_record([
            num(r.alpha),
            num(r.tau),
            num(r.alpha / r.tau),
            r.seed.to_string(),
            opt(r.ndcg10),
            opt(r.intra_cs),
            opt(r.intra_ed),
            r.best_epoch.map(|b| b.to_string()).unwrap_or_default(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    report::write_json(&common.out.join("sweep.json"), &rows)?;
    manifest.finish(&common.out)
}

/// Item-modality embeddings of the whole catalog (`all`) or of the test items.
fn item_bank(input: &DataSplit, run: &Path, manifest: &mut RunManifest, all: bool) -> CliResult<EmbeddingBank> {
    require(run)?;
    manifest.config_hash = Some(hash_dir(run)?);
    let loaded = load_inputs(input, manifest)?;
    let mut model = load_model(run, &loaded)?;
    if !model.config().kind.is_multimodal() {
        return Err(CliError::Usage("gap analysis needs a multimodal model".into()));
    }
    let view = DataView::new(&loaded.data, &loaded.split)?;
    let items = if all {
        (0..loaded.data.n_items()).collect()
    } else {
        loaded.split.phase_items(Phase::Test)
    };
    Ok(EmbeddingBank::from_model(&mut model, &view, &items)?)
}

fn gap(input: &DataSplit, run: &Path, common: &OutSeed) -> CliResult<()> {
    let mut manifest = RunManifest::start("gap", common.seed);
    let bank = item_bank(input, run, &mut manifest, true)?;
    let stats = GapStats::compute(&bank)?;
    let sub = bank.subsample(EXPORT_ITEMS, common.seed);
    let proj = pca_project(&sub, 2.min(sub.dim))?;
    create_out(&common.out, &[&input.data, &input.split, run])?;
    report::write_text(&common.out.join("gap.csv"), &stats.to_csv())?;
    report::write_text(&common.out.join("projection.csv"), &proj.to_csv(&sub))?;
    #[derive(Serialize)]
    struct GapJson<'a> {
        n_items: usize,
        modalities: &'a [String],
        stats: &'a GapStats,
        explained_ratio: &'a [f64],
    }
    report::write_json(
        &common.out.join("gap.json"),
        &GapJson {
            n_items: bank.n_items(),
            modalities: &bank.modalities,
            stats: &stats,
            explained_ratio: &proj.explained_ratio,
        },
    )?;
    manifest.finish(&common.out)
}

fn probe(input: &DataSplit, run: &Path, common: &OutSeed) -> CliResult<()> {
    let mut manifest = RunManifest::start("probe", common.seed);
    let bank = item_bank(input, run, &mut manifest, false)?;
    let r = separability_probe(&bank, PROBE_TRAIN_FRACTION, PROBE_SEEDS, common.seed)?;
    create_out(&common.out, &[&input.data, &input.split, run])?;
    report::write_text(&common.out.join("probe.csv"), &r.to_csv())?;
    report::write_json(&common.out.join("probe.json"), &r)?;
    log::info!("probe accuracy {:.4} (random {:.4})", r.mean_accuracy, r.random_baseline);
    manifest.finish(&common.out)
}

fn compare(a: &Path, b: &Path, metric: &str, n_comparisons: usize, out: &Path) -> CliResult<()> {
    let manifest = RunManifest::start("compare", 0);
    require(&a.join("per_user.csv"))?;
    require(&b.join("per_user.csv"))?;
    let (ua, va) = report::read_per_user(&a.join("per_user.csv"), metric)?;
    let (ub, vb) = report::read_per_user(&b.join("per_user.csv"), metric)?;
    if ua != ub {
        return Err(CliError::Usage("the two runs evaluated different users".into()));
    }
    // users without a defined value in either run are left out of the pairing
    let (xa, xb): (Vec<f64>, Vec<f64>) = va
        .iter()
        .zip(&vb)
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .map(|(x, y)| (*x, *y))
        .unzip();
    let t = paired_ttest(&xa, &xb, n_comparisons)?;
    create_out(out, &[a, b])?;
    let path = out.join("compare.csv");
    let mut w = report::csv_writer(&path)?;
    w.write_record(["metric", "n", "mean_a", "mean_b", "mean_diff", "t", "df", "p", "threshold", "significant"])?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    w.write_record([
        metric.to_string(),
        t.n.to_string(),
        num(mean(&xa)),
        num(mean(&xb)),
        num(t.mean_diff),
        num(t.t),
        t.df.to_string(),
        num(t.p),
        num(t.threshold),
        t.significant.to_string(),
    ])?;
    w.flush().map_err(|e| CliError::io(&path, e))?;
    report::write_json(&out.join("compare.json"), &t)?;
    log::info!("t = {:.4}, p = {:.3e}, significant: {}", t.t, t.p, t.significant);
    manifest.finish(out)
}

fn report_cmd(run: &Path, out: &Path) -> CliResult<()> {
    let manifest = RunManifest::start("report", 0);
    require(run)?;
    let md = report::markdown_summary(run)?;
    create_out(out, &[run])?;
    report::write_text(&out.join("report.md"), &md)?;
    manifest.finish(out)
}
