use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use reqadapt::corpus::{tokenize, EncodedExample, Task};
use reqadapt::eval::{
    evaluate_predictions, five_by_two_cv_f_test, read_predictions, summarize, write_predictions, ConfusionMatrix,
    EvalError, MajorityClassifier, MetricsReport, PredictionRecord,
};
use reqadapt::model::{
    load_checkpoint, save_checkpoint, train_static_embeddings, Checkpoint, EncoderConfig, EncoderParams,
    FrozenSentenceBaseline, PoolingBaseline, ProbeConfig, Stage, StaticEmbeddings, MAGIC,
};
use reqadapt::seed;
use reqadapt::train::{
    encode_corpus, encode_labeled, mlm_loss_on, predict, run_adapt, run_finetune, run_pretrain, FinetuneData,
    FinetuneOutcome, StageConfig, StageData, TrainReport,
};
use reqadapt::Scalar;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Precision};
use crate::data::{holdout, require, write_file, write_json, Dataset, Layout, Stamp};
use crate::error::CliError;
use crate::report::{AdaptationSummary, ComparisonTable, MetricsFile, Row, RunRecord, Significance, Variant};

macro_rules! with_precision {
    ($cfg:expr, $f:ident($($arg:expr),*)) => {
        match $cfg.precision {
            Precision::F32 => $f::<f32>($($arg),*),
            Precision::F64 => $f::<f64>($($arg),*),
        }
    };
}

pub fn layout(cfg: &ExperimentConfig) -> Layout {
    Layout::new(&cfg.out_dir)
}

/// A stage config whose seed is derived from the master seed and `label`.
fn seeded(stage: &StageConfig, master: u64, label: &str) -> StageConfig {
    StageConfig {
        seed: seed::derive(master, label),
        ..stage.clone()
    }
}

fn encoder_config(cfg: &ExperimentConfig, ds: &Dataset) -> Result<EncoderConfig, CliError> {
    cfg.model.encoder_config(ds.vocab.len()).map_err(CliError::Config)
}

#[derive(Serialize)]
struct Stamped<'a, B: Serialize> {
    stamp: Stamp,
    #[serde(flatten)]
    body: &'a B,
}

fn write_stamped<B: Serialize>(cfg: &ExperimentConfig, path: &Path, body: &B) -> Result<(), CliError> {
    write_json(
        path,
        &Stamped {
            stamp: Stamp::of(cfg),
            body,
        },
    )
}

fn save_stamped<T: Scalar>(cfg: &ExperimentConfig, ckpt: &mut Checkpoint<T>, path: &Path) -> Result<(), CliError> {
    ckpt.meta.notes.insert("config_hash".into(), cfg.hash());
    ckpt.meta.notes.insert("master_seed".into(), cfg.seed.to_string());
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    save_checkpoint(ckpt, path)?;
    Ok(())
}

fn load<T: Scalar>(path: &Path, expected: &[Stage]) -> Result<Checkpoint<T>, CliError> {
    require(path)?;
    Ok(load_checkpoint::<T>(path, expected)?.0)
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

// ---------------------------------------------------------------- generate

pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<Dataset, CliError> {
    let ds = Dataset::generate(cfg)?;
    ds.save(&layout(cfg))?;
    log::info!(
        "generated {} labeled, {} unlabeled and {} generic documents; vocabulary {}",
        ds.labeled.len(),
        ds.unlabeled.len(),
        ds.generic.len(),
        ds.vocab.len()
    );
    Ok(ds)
}

// ---------------------------------------------------------------- pretrain

fn generic_examples(cfg: &ExperimentConfig, ds: &Dataset, max_len: usize) -> Result<(Vec<EncodedExample>, Vec<EncodedExample>), CliError> {
    let ex = encode_corpus(&ds.generic, &ds.vocab, max_len)?;
    Ok(holdout(&ex, cfg.mlm_holdout, seed::derive(cfg.seed, "pretrain-holdout")))
}

fn pretrain_with<T: Scalar>(cfg: &ExperimentConfig, ds: &Dataset) -> Result<(Checkpoint<T>, TrainReport), CliError> {
    let enc = encoder_config(cfg, ds)?;
    let (train, val) = generic_examples(cfg, ds, enc.max_len)?;
    let stage = seeded(&cfg.pretrain, cfg.seed, "pretrain");
    let out = run_pretrain::<T>(StageData { train: &train, val: &val }, &enc, &stage, &cfg.masking)?;
    log::info!(
        "pretraining: validation MLM loss {:.4} -> {:.4} (best epoch {})",
        out.report.initial_val_loss,
        out.report.best_val_loss.unwrap_or(f64::NAN),
        out.report.best_epoch
    );
    let mut ckpt = out.checkpoint;
    let l = layout(cfg);
    save_stamped(cfg, &mut ckpt, &l.pretrained())?;
    write_stamped(cfg, &l.train_report("pretrain"), &out.report)?;
    Ok((ckpt, out.report))
}

pub fn cmd_pretrain(cfg: &ExperimentConfig) -> Result<TrainReport, CliError> {
    let ds = Dataset::load(&layout(cfg))?;
    with_precision!(cfg, pretrain_report(cfg, &ds))
}

fn pretrain_report<T: Scalar>(cfg: &ExperimentConfig, ds: &Dataset) -> Result<TrainReport, CliError> {
    Ok(pretrain_with::<T>(cfg, ds)?.1)
}

// ---------------------------------------------------------------- adapt

fn adapt_with<T: Scalar>(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    pre: &Checkpoint<T>,
) -> Result<(Checkpoint<T>, TrainReport, AdaptationSummary), CliError> {
    let enc = encoder_config(cfg, ds)?;
    let pool = ds.adaptation_pool(cfg.paper_faithful_adaptation_pool);
    let ex = encode_corpus(&pool, &ds.vocab, enc.max_len)?;
    let (train, val) = holdout(&ex, cfg.mlm_holdout, seed::derive(cfg.seed, "adapt-holdout"));
    let stage = seeded(&cfg.adapt, cfg.seed, "adapt");
    let out = run_adapt(pre.clone(), StageData { train: &train, val: &val }, Some(&enc), &stage, &cfg.masking)?;
    let (_, generic_val) = generic_examples(cfg, ds, enc.max_len)?;
    let probe_seed = seed::derive(cfg.seed, "generic-probe");
    let summary = AdaptationSummary {
        in_domain_before: out.val_loss_before,
        in_domain_after: out.val_loss_after,
        generic_before: mlm_loss_on(pre, &generic_val, &cfg.masking, probe_seed)?,
        generic_after: mlm_loss_on(&out.checkpoint, &generic_val, &cfg.masking, probe_seed)?,
    };
    log::info!(
        "adaptation on {} texts: in-domain MLM loss {:.4} -> {:.4}, generic {:.4} -> {:.4}",
        pool.len(),
        summary.in_domain_before,
        summary.in_domain_after,
        summary.generic_before,
        summary.generic_after
    );
    let mut ckpt = out.checkpoint;
    let l = layout(cfg);
    save_stamped(cfg, &mut ckpt, &l.adapted())?;
    write_stamped(cfg, &l.train_report("adapt"), &out.report)?;
    write_stamped(cfg, &adaptation_path(&l), &summary)?;
    Ok((ckpt, out.report, summary))
}

fn adaptation_path(l: &Layout) -> PathBuf {
    l.root.join("reports/adaptation.json")
}

fn adapt_from_path<T: Scalar>(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    path: &Path,
) -> Result<AdaptationSummary, CliError> {
    let pre = load::<T>(path, &[Stage::Pretrained, Stage::Adapted])?;
    Ok(adapt_with(cfg, ds, &pre)?.2)
}

/// Stage 2 from `checkpoint` (default: the run's pretrained checkpoint).
pub fn cmd_adapt(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<AdaptationSummary, CliError> {
    let l = layout(cfg);
    let ds = Dataset::load(&l)?;
    let path = checkpoint.map_or_else(|| l.pretrained(), Path::to_path_buf);
    with_precision!(cfg, adapt_from_path(cfg, &ds, &path))
}

// ---------------------------------------------------------------- finetune

/// Train/val/test examples of the shared split for `task`.
pub struct TaskData {
    pub all: Vec<EncodedExample>,
    pub train: Vec<EncodedExample>,
    pub val: Vec<EncodedExample>,
    pub test: Vec<EncodedExample>,
}

pub fn task_data(ds: &Dataset, task: Task, max_len: usize) -> Result<TaskData, CliError> {
    let all = encode_labeled(&ds.labeled, &ds.vocab, max_len, task)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| all[i].clone()).collect::<Vec<_>>();
    Ok(TaskData {
        train: pick(&ds.splits.train),
        val: pick(&ds.splits.val),
        test: pick(&ds.splits.test),
        all,
    })
}

fn variant_of(stage: Stage) -> Result<Variant, CliError> {
    match stage {
        Stage::Pretrained => Ok(Variant::Encoder),
        Stage::Adapted => Ok(Variant::EncoderAdapted),
        Stage::Finetuned => Err(CliError::Config(
            "fine-tuning needs a pretrained or adapted checkpoint, not a fine-tuned one".into(),
        )),
    }
}

fn prediction_records(ds: &Dataset, task: Task, predictions: &[usize]) -> Vec<PredictionRecord> {
    let classes = task.classes();
    ds.splits
        .test
        .iter()
        .zip(predictions)
        .map(|(&i, &p)| {
            let doc = &ds.labeled.documents[i];
            PredictionRecord {
                id: doc.id.clone(),
                truth: doc.label(task).unwrap_or_default().to_string(),
                prediction: classes[p].to_string(),
            }
        })
        .collect()
}

#[derive(Serialize)]
struct FinetuneSummary<'a> {
    variant: Variant,
    task: Task,
    metrics: &'a MetricsReport,
    report: &'a TrainReport,
    warnings: &'a [String],
}

fn finetune_with<T: Scalar>(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    data: &TaskData,
    ckpt: &Checkpoint<T>,
    task: Task,
) -> Result<FinetuneOutcome<T>, CliError> {
    let variant = variant_of(ckpt.stage)?;
    let stage = seeded(&cfg.finetune, cfg.seed, &format!("finetune-{}", task.name()));
    let fd = FinetuneData {
        train: &data.train,
        val: &data.val,
        test: &data.test,
    };
    let mut out = run_finetune(ckpt.clone(), &fd, task, &stage)?;
    log::info!(
        "{} on {}: accuracy {:.4}, macro-F1 {:.4}",
        variant.label(),
        task.name(),
        out.metrics.accuracy,
        out.metrics.macro_f1
    );
    let l = layout(cfg);
    save_stamped(cfg, &mut out.checkpoint, &l.finetuned(variant.slug(), task))?;
    let path = l.predictions(variant.slug(), task);
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    write_predictions(&path, &prediction_records(ds, task, &out.predictions))?;
    write_stamped(
        cfg,
        &l.train_report(&format!("finetune-{}-{}", variant.slug(), task.name().to_lowercase())),
        &FinetuneSummary {
            variant,
            task,
            metrics: &out.metrics,
            report: &out.report,
            warnings: &out.warnings,
        },
    )?;
    Ok(out)
}

fn finetune_from_path<T: Scalar>(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    path: &Path,
    task: Task,
) -> Result<MetricsReport, CliError> {
    let ckpt = load::<T>(path, &[Stage::Pretrained, Stage::Adapted])?;
    let enc = encoder_config(cfg, ds)?;
    let data = task_data(ds, task, enc.max_len)?;
    Ok(finetune_with(cfg, ds, &data, &ckpt, task)?.metrics)
}

/// Stage 3 from `checkpoint` (default: the run's pretrained checkpoint).
pub fn cmd_finetune(cfg: &ExperimentConfig, checkpoint: Option<&Path>, task: Task) -> Result<MetricsReport, CliError> {
    let l = layout(cfg);
    let ds = Dataset::load(&l)?;
    let path = checkpoint.map_or_else(|| l.pretrained(), Path::to_path_buf);
    with_precision!(cfg, finetune_from_path(cfg, &ds, &path, task))
}

// ---------------------------------------------------------------- evaluate

fn evaluate_checkpoint<T: Scalar>(
    ds: &Dataset,
    path: &Path,
    task: Task,
) -> Result<MetricsReport, CliError> {
    let ckpt = load::<T>(path, &[Stage::Finetuned])?;
    let head = ckpt
        .head
        .clone()
        .ok_or_else(|| CliError::Config(format!("{} has no classifier head", path.display())))?;
    if head.task() != Some(task) {
        return Err(CliError::Config(format!(
            "{} was fine-tuned for {:?}, not {}",
            path.display(),
            head.task(),
            task
        )));
    }
    let model = reqadapt::model::Model::new(ckpt.encoder, head)?;
    let data = task_data(ds, task, model.encoder.config.max_len)?;
    let predictions = predict(&model, &data.test)?;
    let truth: Vec<usize> = data.test.iter().filter_map(|e| e.label).collect();
    Ok(summarize(&ConfusionMatrix::from_indices(&truth, &predictions, task.classes())?)?)
}

/// Scores a fine-tuned checkpoint on the test split, or a prediction file as is.
pub fn cmd_evaluate(cfg: &ExperimentConfig, path: &Path, task: Task) -> Result<MetricsReport, CliError> {
    require(path)?;
    let head = {
        use std::io::Read;
        let mut buf = [0u8; 8];
        let n = fs::File::open(path)?.read(&mut buf)?;
        buf[..n].to_vec()
    };
    if head == MAGIC {
        let ds = Dataset::load(&layout(cfg))?;
        with_precision!(cfg, evaluate_checkpoint(&ds, path, task))
    } else {
        let records = read_predictions(path)?;
        Ok(evaluate_predictions(&records, task.classes())?)
    }
}

// ---------------------------------------------------------------- baselines

fn report_of(truth: &[usize], pred: &[usize], task: Task) -> Result<MetricsReport, CliError> {
    Ok(summarize(&ConfusionMatrix::from_indices(truth, pred, task.classes())?)?)
}

struct BaselineInputs<'a> {
    embeddings: Option<&'a StaticEmbeddings>,
    encoder: Option<&'a EncoderParams<f64>>,
}

fn run_baselines(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    data: &TaskData,
    task: Task,
    inputs: &BaselineInputs<'_>,
) -> Result<Vec<(Variant, MetricsReport, Vec<usize>)>, CliError> {
    let labels = |ex: &[EncodedExample]| ex.iter().filter_map(|e| e.label).collect::<Vec<usize>>();
    let (train_y, test_y) = (labels(&data.train), labels(&data.test));
    let probe = ProbeConfig {
        seed: seed::derive(cfg.seed, &format!("probe-{}", task.name())),
        ..cfg.baselines.probe
    };
    let mut out = Vec::new();
    if cfg.baselines.majority {
        let pred = MajorityClassifier::fit(&train_y, task.num_classes())?.predict(test_y.len());
        out.push((Variant::Majority, report_of(&test_y, &pred, task)?, pred));
    }
    if let Some(emb) = inputs.embeddings {
        let docs = |idx: &[usize]| -> Vec<Vec<String>> {
            idx.iter()
                .map(|&i| tokenize(&ds.labeled.documents[i].summary))
                .collect()
        };
        let model = PoolingBaseline::fit(emb.clone(), &docs(&ds.splits.train), &train_y, task.num_classes(), &probe)?;
        let pred = model.predict(&docs(&ds.splits.test));
        out.push((Variant::Pooling, report_of(&test_y, &pred, task)?, pred));
    }
    if let Some(enc) = inputs.encoder {
        let model = FrozenSentenceBaseline::fit(enc.clone(), &data.train, &train_y, task.num_classes(), &probe)?;
        let pred = model.predict(&data.test)?;
        out.push((Variant::FrozenSentence, report_of(&test_y, &pred, task)?, pred));
    }
    Ok(out)
}

// ---------------------------------------------------------------- compare

fn metric_on<T: Scalar>(out: &FinetuneOutcome<T>, cfg: &ExperimentConfig) -> f64 {
    cfg.compare.metric.of(&out.metrics)
}

fn significance_with<T: Scalar>(
    cfg: &ExperimentConfig,
    data: &TaskData,
    task: Task,
    pre: &Checkpoint<T>,
    adapted: &Checkpoint<T>,
    ds: &Dataset,
) -> Result<Significance, CliError> {
    let mut pool: Vec<usize> = ds.splits.train.iter().chain(&ds.splits.test).copied().collect();
    pool.sort_unstable();
    let strata: Vec<usize> = pool.iter().map(|&i| data.all[i].label.unwrap_or(0)).collect();
    let run = |ckpt: &Checkpoint<T>, fd: &FinetuneData<'_>, stage: &StageConfig| {
        run_finetune(ckpt.clone(), fd, task, stage)
            .map(|o| metric_on(&o, cfg))
            .map_err(|e| EvalError::Run(e.to_string()))
    };
    let test = five_by_two_cv_f_test(
        &strata,
        seed::derive(cfg.seed, &format!("5x2cv-{}", task.name())),
        cfg.compare.alpha,
        |fold| {
            let pick = |idx: &[usize]| idx.iter().map(|&k| data.all[pool[k]].clone()).collect::<Vec<_>>();
            let (train, test) = (pick(&fold.train), pick(&fold.test));
            let fd = FinetuneData {
                train: &train,
                val: &data.val,
                test: &test,
            };
            let stage = StageConfig {
                seed: fold.seed,
                ..cfg.finetune.clone()
            };
            Ok((run(adapted, &fd, &stage)?, run(pre, &fd, &stage)?))
        },
    )?;
    let improvement = test.differences.iter().flatten().sum::<f64>() / 10.0;
    log::info!(
        "5x2cv on {}: improvement {:+.4}, p = {:.4}",
        task.name(),
        improvement,
        test.p_value
    );
    Ok(Significance {
        metric: cfg.compare.metric,
        improvement,
        test,
    })
}

/// Outcome of the comparison stage.
pub struct Comparison {
    pub table: ComparisonTable,
    pub train_reports: BTreeMap<String, TrainReport>,
    pub warnings: Vec<String>,
}

fn compare_with<T: Scalar>(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    pre: &Checkpoint<T>,
    adapted: Option<&Checkpoint<T>>,
) -> Result<Comparison, CliError> {
    let enc = encoder_config(cfg, ds)?;
    let data: Vec<TaskData> = cfg
        .tasks
        .iter()
        .map(|&t| task_data(ds, t, enc.max_len))
        .collect::<Result<_, _>>()?;
    let mut jobs: Vec<(usize, &Checkpoint<T>)> = Vec::new();
    for i in 0..cfg.tasks.len() {
        jobs.push((i, pre));
        if let Some(a) = adapted {
            jobs.push((i, a));
        }
    }
    let finetunes = jobs
        .par_iter()
        .map(|&(i, ckpt)| finetune_with(cfg, ds, &data[i], ckpt, cfg.tasks[i]))
        .collect::<Result<Vec<_>, _>>()?;

    let embeddings = cfg.baselines.pooling.then(|| {
        train_static_embeddings(
            &[&ds.generic],
            cfg.baselines.embedding_width,
            cfg.baselines.embedding_epochs,
            seed::derive(cfg.seed, "static-embeddings"),
        )
    });
    let frozen = cfg.baselines.frozen_sentence.then(|| pre.encoder.cast::<f64>());
    let inputs = BaselineInputs {
        embeddings: embeddings.as_ref(),
        encoder: frozen.as_ref(),
    };
    let order = [
        Variant::Majority,
        Variant::Pooling,
        Variant::FrozenSentence,
        Variant::Encoder,
        Variant::EncoderAdapted,
    ];
    let mut cells: BTreeMap<Variant, BTreeMap<Task, MetricsReport>> = BTreeMap::new();
    let l = layout(cfg);
    for (i, &task) in cfg.tasks.iter().enumerate() {
        for (variant, report, pred) in run_baselines(cfg, ds, &data[i], task, &inputs)? {
            let path = l.predictions(variant.slug(), task);
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir)?;
            }
            write_predictions(&path, &prediction_records(ds, task, &pred))?;
            cells.entry(variant).or_default().insert(task, report);
        }
    }
    let mut train_reports = BTreeMap::new();
    let mut warnings = Vec::new();
    for ((i, ckpt), out) in jobs.iter().zip(&finetunes) {
        let variant = variant_of(ckpt.stage)?;
        let task = cfg.tasks[*i];
        cells.entry(variant).or_default().insert(task, out.metrics.clone());
        train_reports.insert(
            format!("finetune-{}-{}", variant.slug(), task.name().to_lowercase()),
            out.report.clone(),
        );
        warnings.extend(out.warnings.iter().cloned());
    }
    let mut significance = BTreeMap::new();
    if let (true, Some(a)) = (cfg.compare.significance, adapted) {
        for (i, &task) in cfg.tasks.iter().enumerate() {
            significance.insert(task, significance_with(cfg, &data[i], task, pre, a, ds)?);
        }
    }
    let table = ComparisonTable {
        stamp: Stamp::of(cfg),
        tasks: cfg.tasks.clone(),
        metrics: cfg.metrics.clone(),
        rows: order
            .iter()
            .filter_map(|v| cells.remove(v).map(|c| Row { variant: *v, cells: c }))
            .collect(),
        significance,
    };
    table.check().map_err(CliError::Other)?;
    Ok(Comparison {
        table,
        train_reports,
        warnings,
    })
}

fn write_comparison(
    cfg: &ExperimentConfig,
    pretrain_val_loss: Option<f64>,
    adaptation: Option<AdaptationSummary>,
    table: &ComparisonTable,
) -> Result<MetricsFile, CliError> {
    let l = layout(cfg);
    let file = MetricsFile {
        stamp: Stamp::of(cfg),
        pretrain_val_loss,
        adaptation,
        table: table.clone(),
    };
    write_json(&l.metrics(), &file)?;
    write_file(&l.comparison(), table.render().as_bytes())?;
    Ok(file)
}

fn compare_from_disk<T: Scalar>(cfg: &ExperimentConfig, ds: &Dataset) -> Result<MetricsFile, CliError> {
    let l = layout(cfg);
    let pre = load::<T>(&l.pretrained(), &[Stage::Pretrained])?;
    let adapted = if cfg.adaptation {
        Some(load::<T>(&l.adapted(), &[Stage::Adapted])?)
    } else {
        None
    };
    let adaptation = if cfg.adaptation {
        let path = adaptation_path(&l);
        require(&path)?;
        Some(serde_json::from_str(&fs::read_to_string(path)?)?)
    } else {
        None
    };
    let cmp = compare_with(cfg, ds, &pre, adapted.as_ref())?;
    write_comparison(cfg, pre.meta.final_val_loss, adaptation, &cmp.table)
}

/// Fine-tunes every variant on every task, runs the baselines and, when
/// enabled, the 5x2cv test between the vanilla and adapted encoders.
pub fn cmd_compare(cfg: &ExperimentConfig) -> Result<MetricsFile, CliError> {
    let ds = Dataset::load(&layout(cfg))?;
    with_precision!(cfg, compare_from_disk(cfg, &ds))
}

// ---------------------------------------------------------------- full

fn full_with<T: Scalar>(cfg: &ExperimentConfig, ds: &Dataset) -> Result<(MetricsFile, BTreeMap<String, TrainReport>, Vec<String>), CliError> {
    let (pre, pre_report) = pretrain_with::<T>(cfg, ds)?;
    let mut reports = BTreeMap::from([("pretrain".to_string(), pre_report)]);
    let (adapted, summary) = if cfg.adaptation {
        let (a, r, s) = adapt_with(cfg, ds, &pre)?;
        reports.insert("adapt".into(), r);
        (Some(a), Some(s))
    } else {
        (None, None)
    };
    let cmp = compare_with(cfg, ds, &pre, adapted.as_ref())?;
    reports.extend(cmp.train_reports);
    let file = write_comparison(cfg, pre.meta.final_val_loss, summary, &cmp.table)?;
    Ok((file, reports, cmp.warnings))
}

/// generate, pretrain, adapt, then compare.
pub fn cmd_full(cfg: &ExperimentConfig) -> Result<RunRecord, CliError> {
    let started_unix = unix_now();
    let clock = Instant::now();
    let ds = cmd_generate(cfg)?;
    let (metrics, train_reports, warnings) = with_precision!(cfg, full_with(cfg, &ds))?;
    let l = layout(cfg);
    let mut checkpoints = BTreeMap::from([("pretrained".to_string(), l.pretrained().display().to_string())]);
    if cfg.adaptation {
        checkpoints.insert("adapted".into(), l.adapted().display().to_string());
    }
    for row in &metrics.table.rows {
        if matches!(row.variant, Variant::Encoder | Variant::EncoderAdapted) {
            for task in row.cells.keys() {
                checkpoints.insert(
                    format!("finetuned-{}-{}", row.variant.slug(), task.name().to_lowercase()),
                    l.finetuned(row.variant.slug(), *task).display().to_string(),
                );
            }
        }
    }
    let record = RunRecord {
        stamp: Stamp::of(cfg),
        config: cfg.clone(),
        started_unix,
        finished_unix: unix_now(),
        wall_clock_secs: clock.elapsed().as_secs_f64(),
        metrics,
        train_reports,
        checkpoints,
        warnings,
    };
    write_json(&l.run_record(), &record)?;
    Ok(record)
}

// ---------------------------------------------------------------- sweep

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SettleStatus {
    Converged,
    NoSettle,
    Diverged,
}

impl SettleStatus {
    pub fn flagged(self) -> bool {
        self != SettleStatus::Converged
    }
}

/// Moving averages of `losses` over `window` steps.
pub fn smooth(losses: &[f64], window: usize) -> Vec<f64> {
    let w = window.clamp(1, losses.len().max(1));
    losses.windows(w).map(|x| x.iter().sum::<f64>() / w as f64).collect()
}

/// Diverged on any non-finite loss or when the final smoothed loss is above
/// the initial one; no-settle when it is more than `tolerance` above the
/// smoothed minimum.
pub fn settle_status(losses: &[f64], window: usize, tolerance: f64) -> SettleStatus {
    if losses.is_empty() || losses.iter().any(|l| !l.is_finite()) {
        return SettleStatus::Diverged;
    }
    let s = smooth(losses, window);
    let (first, last) = (s[0], s[s.len() - 1]);
    let min = s.iter().copied().fold(f64::INFINITY, f64::min);
    if last > first {
        SettleStatus::Diverged
    } else if last > (1.0 + tolerance) * min {
        SettleStatus::NoSettle
    } else {
        SettleStatus::Converged
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrCurve {
    pub lr: f64,
    pub status: SettleStatus,
    /// Steps per epoch; also the smoothing window.
    pub window: usize,
    pub initial_smoothed: f64,
    pub final_smoothed: f64,
    pub min_smoothed: f64,
    pub test_accuracy: Option<f64>,
    pub epoch_train_loss: Vec<f64>,
    pub val_loss: Vec<(usize, f64)>,
    pub step_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub stamp: Stamp,
    pub task: Task,
    pub tolerance: f64,
    pub curves: Vec<LrCurve>,
}

impl SweepReport {
    pub fn curve(&self, lr: f64) -> Option<&LrCurve> {
        self.curves.iter().find(|c| (c.lr - lr).abs() <= 1e-12 * lr.abs().max(1.0))
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "config {} seed {}\nlearning-rate sweep on {} (tolerance {})\n\n",
            self.stamp.config_hash,
            self.stamp.seed,
            self.task.name(),
            self.tolerance
        );
        out.push_str("lr        status     initial  final    min      accuracy\n");
        for c in &self.curves {
            let status = match c.status {
                SettleStatus::Converged => "converged",
                SettleStatus::NoSettle => "no-settle",
                SettleStatus::Diverged => "diverged",
            };
            out.push_str(&format!(
                "{:<9} {:<10} {:<8.4} {:<8.4} {:<8.4} {}\n",
                format!("{:e}", c.lr),
                status,
                c.initial_smoothed,
                c.final_smoothed,
                c.min_smoothed,
                c.test_accuracy.map_or("-".to_string(), |a| format!("{a:.4}"))
            ));
        }
        out
    }
}

fn sweep_with<T: Scalar>(cfg: &ExperimentConfig, ds: &Dataset, task: Task) -> Result<SweepReport, CliError> {
    let l = layout(cfg);
    let pre = load::<T>(&l.pretrained(), &[Stage::Pretrained])?;
    let data = task_data(ds, task, pre.encoder.config.max_len)?;
    let fd = FinetuneData {
        train: &data.train,
        val: &data.val,
        test: &data.test,
    };
    let base = seeded(&cfg.finetune, cfg.seed, "sweep");
    let window = data.train.len().div_ceil(base.batch_size);
    let mut curves = Vec::new();
    for &lr in &cfg.sweep.lrs {
        let stage = StageConfig { lr, ..base.clone() };
        let (report, accuracy) = match run_finetune(pre.clone(), &fd, task, &stage) {
            Ok(out) => (out.report, Some(out.metrics.accuracy)),
            Err(reqadapt::train::TrainError::Diverged(report)) => (*report, None),
            Err(e) => return Err(e.into()),
        };
        let s = smooth(&report.step_losses, window);
        let finite: Vec<f64> = s.iter().copied().filter(|x| x.is_finite()).collect();
        let curve = LrCurve {
            lr,
            status: settle_status(&report.step_losses, window, cfg.sweep.tolerance),
            window,
            initial_smoothed: s.first().copied().unwrap_or(f64::NAN),
            final_smoothed: s.last().copied().unwrap_or(f64::NAN),
            min_smoothed: finite.iter().copied().fold(f64::INFINITY, f64::min),
            test_accuracy: accuracy,
            epoch_train_loss: report.train_loss,
            val_loss: report.val_loss,
            step_losses: report.step_losses,
        };
        log::info!("sweep lr {lr:e}: {:?}", curve.status);
        write_stamped(cfg, &l.sweep(&format!("curve-{lr:e}.json")), &curve)?;
        curves.push(curve);
    }
    let report = SweepReport {
        stamp: Stamp::of(cfg),
        task,
        tolerance: cfg.sweep.tolerance,
        curves,
    };
    write_json(&l.sweep("summary.json"), &report)?;
    write_file(&l.sweep("summary.txt"), report.render().as_bytes())?;
    Ok(report)
}

/// Fine-tuning loss curves over the configured learning rates, each run from
/// the pretrained checkpoint with identical seeds.
pub fn cmd_sweep(cfg: &ExperimentConfig, task: Option<Task>) -> Result<SweepReport, CliError> {
    let ds = Dataset::load(&layout(cfg))?;
    let task = task.unwrap_or(cfg.sweep.task);
    with_precision!(cfg, sweep_with(cfg, &ds, task))
}
