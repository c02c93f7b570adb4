use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use limbnet_core::attributes::{build_table, nna_identify, AttributeSchema, AttributeTable, Similarity};
use limbnet_core::data::{load_dataset, ChannelStats, DatasetManifest, Recording};
use limbnet_core::evaluation::{
    aggregate_ioa, compute_ioa, emit_report, group_hit_rate, read_report, run_loocv, write_json_report, IoaReport, LoocvConfig,
    ReportFormat, SummaryRow, SummaryTable,
};
use limbnet_core::experiment::{fit, model_config, prepare, ExperimentRun, PrepareSpec, Prepared, Target};
use limbnet_core::explain::{lrp_explain, positive_rms_per_limb, write_relevance_csv};
use limbnet_core::model::{load_checkpoint, save_checkpoint, Model};
use limbnet_core::synth::{generate, SynthSpec};
use limbnet_core::training::{argmax, evaluate, repeat_runs, MeanSd, RunMetrics, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::cache;
use crate::config::{ExperimentConfig, Task};
use crate::error::{CliError, CliResult};

/// Resolved config plus the output directory every command writes into.
pub struct Context {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
}

impl Context {
    pub fn new(mut cfg: ExperimentConfig, out: Option<PathBuf>) -> CliResult<Self> {
        cfg.validate()?;
        let out = out
            .or_else(|| cfg.out.clone())
            .unwrap_or_else(|| PathBuf::from("runs").join(format!("{:?}", cfg.task).to_lowercase()));
        cfg.out = Some(out.clone());
        fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
        let ctx = Context { cfg, out };
        ctx.write_text("config.toml", &ctx.cfg.to_toml()?)?;
        Ok(ctx)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write_text(&self, name: &str, text: &str) -> CliResult<()> {
        let p = self.path(name);
        fs::write(&p, text).map_err(|e| CliError::io(&p, e))
    }

    fn write_json<T: Serialize>(&self, name: &str, kind: &str, value: &T) -> CliResult<()> {
        Ok(write_json_report(&self.path(name), kind, value)?)
    }

    fn write_table(&self, stem: &str, table: &SummaryTable) -> CliResult<()> {
        emit_report(table, ReportFormat::Json, &self.path(&format!("{stem}.json")))?;
        emit_report(table, ReportFormat::Csv, &self.path(&format!("{stem}.csv")))?;
        Ok(())
    }

    fn checkpoint_path(&self) -> PathBuf {
        self.cfg.checkpoint.clone().unwrap_or_else(|| self.path("model.ckpt"))
    }
}

struct Dataset {
    manifest: DatasetManifest,
    recordings: Vec<Recording>,
}

fn load(ctx: &Context) -> CliResult<Dataset> {
    let manifest = DatasetManifest::load(&ctx.cfg.dataset)?;
    let recordings = load_dataset(&manifest)?;
    Ok(Dataset { manifest, recordings })
}

/// Prepared windows from the cache when the content hash matches.
fn prepared(ctx: &Context, data: &Dataset, spec: &PrepareSpec) -> CliResult<(Prepared, bool)> {
    let hash = cache::content_hash(&data.manifest, spec)?;
    let path = cache::cache_path(&cache::cache_dir(&ctx.out), &hash);
    if path.is_file() {
        match cache::read(&path, &hash) {
            Ok(p) => return Ok((p, true)),
            Err(e) => log::warn!("ignoring unusable cache entry: {}", e.detail()),
        }
    }
    let p = prepare(&data.recordings, spec)?;
    cache::write(&path, &hash, &p)?;
    Ok((p, false))
}

fn schema_table(ctx: &Context, manifest: &DatasetManifest) -> CliResult<AttributeTable> {
    let name = ctx.cfg.schema.as_deref().ok_or_else(|| CliError::Config("no attribute schema configured".into()))?;
    let schema = AttributeSchema::load(name)?;
    let recorded = manifest.recorded_subjects();
    let subjects: Vec<_> = manifest.subjects.iter().filter(|s| recorded.contains(&s.id)).cloned().collect();
    let (_, table) = build_table(&subjects, &schema, true)?;
    Ok(table)
}

/// Everything beyond the weights that eval and explain need.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    task: Task,
    class_ids: Option<Vec<u32>>,
    table: Option<AttributeTable>,
    stats: ChannelStats,
    normalized: bool,
    channels: Vec<String>,
}

impl CheckpointMeta {
    fn target(&self) -> CliResult<Target> {
        match (&self.class_ids, &self.table) {
            (Some(ids), _) => Ok(Target::Identity { class_ids: ids.clone() }),
            (None, Some(t)) => Ok(Target::Attributes(t.clone())),
            _ => Err(CliError::Cache("checkpoint metadata names no target".into())),
        }
    }
}

fn target_for(ctx: &Context, data: &Dataset, p: &Prepared) -> CliResult<Target> {
    match ctx.cfg.task {
        Task::SoftBiometric | Task::Loocv => Ok(Target::Attributes(schema_table(ctx, &data.manifest)?)),
        Task::PersonId | Task::Ioa | Task::Explain => Ok(Target::identity_of(&p.train)),
    }
}

fn training_log(metrics: &RunMetrics) -> String {
    let mut s = String::new();
    for e in &metrics.epochs {
        let _ = writeln!(
            s,
            "epoch {} train_loss {:.6} val_accuracy {:.4} val_weighted_f1 {:.4}",
            e.epoch, e.train_loss, e.val_accuracy, e.val_weighted_f1
        );
    }
    let _ = writeln!(s, "best_epoch {} best_val_weighted_f1 {:.4}", metrics.best_epoch, metrics.best_val_weighted_f1);
    if let Some(t) = &metrics.test {
        let _ = writeln!(s, "test_accuracy {:.4} test_weighted_f1 {:.4}", t.accuracy, t.weighted_f1);
    }
    s
}

#[derive(Serialize)]
struct NnaHits {
    cosine: f64,
    prm: f64,
}

fn nna_hits(run: &ExperimentRun, table: &AttributeTable) -> CliResult<NnaHits> {
    let n = run.test.subject_ids.len();
    let rate = |metric| -> CliResult<f64> {
        let r = (0..n)
            .map(|i| nna_identify(run.test.scores.row(i), table, metric))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(group_hit_rate(&r, &run.test.subject_ids)?)
    };
    Ok(NnaHits {
        cosine: rate(Similarity::Cosine)?,
        prm: rate(Similarity::Prm)?,
    })
}

#[derive(Serialize)]
struct RunReport<'a> {
    seed: u64,
    metrics: &'a RunMetrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    nna_hit_rate: Option<NnaHits>,
}

pub fn cmd_prepare(ctx: &Context) -> CliResult<()> {
    let data = load(ctx)?;
    let (p, hit) = prepared(ctx, &data, &ctx.cfg.prepare)?;
    let hash = cache::content_hash(&data.manifest, &ctx.cfg.prepare)?;
    if hit {
        println!("prepare: cache {hash} is current, nothing to do");
    } else {
        println!(
            "prepare: wrote cache {hash} ({} train / {} val / {} test windows)",
            p.train.len(),
            p.val.len(),
            p.test.len()
        );
    }
    Ok(())
}

/// One training run per seed; the first run's model is kept as the checkpoint.
fn train_runs(ctx: &Context, data: &Dataset) -> CliResult<(Target, Vec<(u64, ExperimentRun)>)> {
    let (p, _) = prepared(ctx, data, &ctx.cfg.prepare)?;
    let target = target_for(ctx, data, &p)?;
    let limbs = data.manifest.limb_grouping()?;
    let base = ctx.cfg.train_config();
    let mut runs = Vec::new();
    for i in 0..ctx.cfg.repeat as u64 {
        let seed = base.seed.wrapping_add(i);
        log::info!("run {}/{} (seed {seed})", i + 1, ctx.cfg.repeat);
        let run = fit(&p, &limbs, &target, &ctx.cfg.model, &TrainConfig { seed, ..base.clone() })?;
        if i == 0 {
            let meta = CheckpointMeta {
                task: ctx.cfg.task,
                class_ids: match &target {
                    Target::Identity { class_ids } => Some(class_ids.clone()),
                    Target::Attributes(_) => None,
                },
                table: match &target {
                    Target::Attributes(t) => Some(t.clone()),
                    Target::Identity { .. } => None,
                },
                stats: p.stats.clone(),
                normalized: p.normalized,
                channels: data.manifest.channels.clone(),
            };
            let extra = serde_json::to_value(&meta).map_err(limbnet_core::Error::from)?;
            save_checkpoint(&ctx.path("model.ckpt"), &run.model, &extra)?;
        }
        let nna = match &target {
            Target::Attributes(t) => Some(nna_hits(&run, t)?),
            Target::Identity { .. } => None,
        };
        ctx.write_json(
            &format!("run_{i}.json"),
            "run_metrics",
            &RunReport {
                seed,
                metrics: &run.metrics,
                nna_hit_rate: nna,
            },
        )?;
        ctx.write_text(&format!("train_{i}.log"), &training_log(&run.metrics))?;
        runs.push((seed, run));
    }
    Ok((target, runs))
}

fn test_scores(run: &ExperimentRun) -> (f64, f64) {
    run.metrics.test.as_ref().map_or((0.0, 0.0), |t| (t.accuracy, t.weighted_f1))
}

pub fn cmd_train(ctx: &Context) -> CliResult<()> {
    let data = load(ctx)?;
    let (_, runs) = train_runs(ctx, &data)?;
    let mut it = runs.iter();
    let summary = repeat_runs(runs.len(), runs[0].0, |_| Ok(test_scores(&it.next().expect("one run per seed").1)))?;
    let table = SummaryTable::new(
        "repeat",
        vec![
            SummaryRow::new("accuracy", summary.accuracy_stats),
            SummaryRow::new("weighted_f1", summary.weighted_f1_stats),
        ],
    )?;
    ctx.write_table("summary", &table)?;
    println!(
        "train: test accuracy {} / weighted F1 {} over {} run(s) -> {}",
        summary.accuracy_stats.display(),
        summary.weighted_f1_stats.display(),
        runs.len(),
        ctx.out.display()
    );
    Ok(())
}

fn load_model(ctx: &Context) -> CliResult<(Model, CheckpointMeta)> {
    let path = ctx.checkpoint_path();
    if !path.is_file() {
        return Err(CliError::MissingCheckpoint(path));
    }
    let ckpt = load_checkpoint(&path)?;
    let meta: CheckpointMeta = serde_json::from_value(ckpt.extra.clone()).map_err(limbnet_core::Error::from)?;
    Ok((ckpt.model, meta))
}

pub fn cmd_eval(ctx: &Context) -> CliResult<()> {
    let (model, meta) = load_model(ctx)?;
    let data = load(ctx)?;
    let (p, _) = prepared(ctx, &data, &ctx.cfg.prepare)?;
    if p.normalized != meta.normalized || (p.normalized && p.stats != meta.stats) {
        return Err(CliError::Config("checkpoint was trained with different normalization statistics".into()));
    }
    let target = meta.target()?;
    let window_len = p.train[0].len();
    let expected = model_config(&ctx.cfg.model, &data.manifest.limb_grouping()?, window_len, &target)?;
    if expected.fingerprint() != model.config().fingerprint() {
        return Err(CliError::Core(limbnet_core::Error::Checkpoint(format!(
            "config fingerprint mismatch: checkpoint has {}, config gives {}",
            model.config().fingerprint(),
            expected.fingerprint()
        ))));
    }
    let report = evaluate(&model, &target.labeled(&p.test)?)?;
    ctx.write_json("eval.json", "eval", &report)?;
    println!("eval: test accuracy {:.2} / weighted F1 {:.2}", report.accuracy, report.weighted_f1);
    Ok(())
}

pub fn cmd_loocv(ctx: &Context) -> CliResult<()> {
    let data = load(ctx)?;
    let table = schema_table(ctx, &data.manifest)?;
    let cfg = LoocvConfig {
        prepare: ctx.cfg.prepare.clone(),
        model: ctx.cfg.model.clone(),
        train: ctx.cfg.train_config(),
        subjects: Vec::new(),
    };
    let report = run_loocv(&data.recordings, &data.manifest.limb_grouping()?, &table, &cfg)?;
    ctx.write_json("loocv.json", "loocv", &report)?;
    ctx.write_table("loocv_summary", &report.summary()?)?;
    println!(
        "loocv: {} folds, mean per-bit accuracy {} -> {}",
        report.folds.len(),
        report.mean_bit_accuracy.display(),
        ctx.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct IoaOutput<'a> {
    activities: &'a BTreeMap<String, i32>,
    runs: &'a [IoaReport],
}

pub fn cmd_ioa(ctx: &Context) -> CliResult<()> {
    let data = load(ctx)?;
    let (target, runs) = train_runs(ctx, &data)?;
    let Target::Identity { class_ids } = &target else {
        return Err(CliError::Config("ioa needs an identity (softmax) model".into()));
    };
    let declared: Vec<i32> = data.manifest.activities.values().copied().collect();
    let mut reports = Vec::new();
    for (_, run) in &runs {
        let n = run.test.subject_ids.len();
        let predicted: Vec<u32> = (0..n).map(|i| class_ids[argmax(run.test.scores.row(i))]).collect();
        reports.push(compute_ioa(&predicted, &run.test.subject_ids, &run.test.activity_labels, &declared)?);
    }
    let names: BTreeMap<i32, &str> = data.manifest.activities.iter().map(|(n, &i)| (i, n.as_str())).collect();
    let mut rows: Vec<SummaryRow> = aggregate_ioa(&reports)?
        .into_iter()
        .map(|a| SummaryRow::new(names.get(&a.activity).map_or(a.activity.to_string(), |n| n.to_string()), a.ioa))
        .collect();
    let overall: Vec<f64> = reports.iter().map(IoaReport::weighted_mean).collect();
    rows.push(SummaryRow::new("all", MeanSd::of(&overall)?));
    ctx.write_json(
        "ioa.json",
        "ioa",
        &IoaOutput {
            activities: &data.manifest.activities,
            runs: &reports,
        },
    )?;
    ctx.write_table("ioa_summary", &SummaryTable::new("ioa", rows)?)?;
    println!("ioa: {} run(s) -> {}", reports.len(), ctx.out.display());
    Ok(())
}

#[derive(Serialize)]
struct ExplainOutput<'a> {
    window: usize,
    subject_id: u32,
    recording_id: &'a str,
    start_frame: usize,
    class: usize,
    class_subject: u32,
    score: f64,
    epsilon: f64,
    layers: &'a [limbnet_core::explain::LayerRelevance],
    limb_rms: &'a [limbnet_core::explain::LimbRms],
}

pub fn cmd_explain(ctx: &Context) -> CliResult<()> {
    let (model, meta) = load_model(ctx)?;
    let ids = meta
        .class_ids
        .clone()
        .ok_or_else(|| CliError::Config("explain needs an identity (softmax) checkpoint".into()))?;
    let data = load(ctx)?;
    let (p, _) = prepared(ctx, &data, &ctx.cfg.prepare)?;
    let s = &ctx.cfg.explain;
    let w = p.test.get(s.window).ok_or_else(|| {
        CliError::Config(format!("explain window {} out of range ({} test windows)", s.window, p.test.len()))
    })?;
    let class = match s.class {
        Some(c) => c,
        None => ids
            .binary_search(&w.subject_id)
            .map_err(|_| CliError::Config(format!("subject {} is not a model class", w.subject_id)))?,
    };
    let e = lrp_explain(&model, &w.data, class, s.epsilon)?;
    write_relevance_csv(&ctx.path("relevance.csv"), &e.map, &data.manifest.channels)?;
    let rms = positive_rms_per_limb(&e.map, &data.manifest.limb_grouping()?)?;
    ctx.write_json("limb_rms.json", "limb_rms", &rms)?;
    ctx.write_json(
        "explain.json",
        "explain",
        &ExplainOutput {
            window: s.window,
            subject_id: w.subject_id,
            recording_id: &w.recording_id,
            start_frame: w.start_frame,
            class,
            class_subject: ids.get(class).copied().unwrap_or_default(),
            score: e.map.score,
            epsilon: e.map.epsilon,
            layers: &e.layers,
            limb_rms: &rms,
        },
    )?;
    println!("explain: relevance of class {class} for test window {} -> {}", s.window, ctx.out.display());
    Ok(())
}

pub fn cmd_report(input: &Path, output: &Path) -> CliResult<()> {
    let table = read_report(input)?;
    emit_report(&table, ReportFormat::from_path(output)?, output)?;
    println!("report: {} rows -> {}", table.rows.len(), output.display());
    Ok(())
}

pub fn cmd_synth(spec: &SynthSpec, out: &Path) -> CliResult<()> {
    let s = generate(spec)?;
    let manifest = s.write(out)?;
    let echo = toml::to_string_pretty(spec).map_err(|e| CliError::Config(e.to_string()))?;
    let p = out.join("synth.toml");
    fs::write(&p, echo).map_err(|e| CliError::io(&p, e))?;
    println!(
        "synth: {} subjects, {} channels in {} limbs -> {}",
        spec.subjects,
        spec.channels(),
        spec.limbs,
        manifest.display()
    );
    Ok(())
}
