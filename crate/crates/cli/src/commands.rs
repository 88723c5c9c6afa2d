use std::fs;
use std::path::{Path, PathBuf};

use mixforge::data::{corrupt, export_batch, pipeline_hash, Dataset, ExportInfo, Manifest};
use mixforge::trainer::{
    compute_mce, load_checkpoint, save_checkpoint, train, EpochMetrics, Evaluator, InferenceMode, Model,
    TrainData, Trained,
};
use mixforge::{build_batch, derive_stream, domain_seed, Error, Result};
use serde::Serialize;

use crate::config::RunConfig;
use crate::report::{write_csv, Table};

const MODEL_DOMAIN: u64 = 2;
const CORRUPTION_DOMAIN: u64 = 3;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const EVAL_CSV: &str = "eval.csv";
pub const ABLATION_CSV: &str = "ablate_k.csv";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

/// Write `count` batches from the training split to
/// `out_dir/batch_{i}`.
pub fn cmd_augment(config: &RunConfig, count: usize) -> Result<Vec<Manifest>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let data = config.datasets()?;
    let hash = pipeline_hash(&config.pipeline);
    let mut manifests = Vec::with_capacity(count);
    for b in 0..count {
        let batch = build_batch(
            &data.train,
            &config.pipeline,
            config.optimizer.batch_size,
            config.seed,
            0,
            b as u64,
        )?;
        let dir = config.out_dir.join(format!("batch_{b:05}"));
        let info = ExportInfo {
            seed: config.seed,
            epoch: 0,
            batch_index: b as u64,
            pipeline_hash: hash.clone(),
        };
        manifests.push(export_batch(&batch, &dir, &info)?);
    }
    Ok(manifests)
}

/// Initial model for a config: He-initialized from the run seed.
pub fn initial_model(config: &RunConfig, train: &Dataset) -> Result<Model> {
    Model::init(
        config.input_dim(train)?,
        &config.model.hidden,
        train.n_classes(),
        domain_seed(config.seed, MODEL_DOMAIN),
    )
}

fn train_config(config: &RunConfig) -> Result<Trained> {
    let data = config.datasets()?;
    let model = initial_model(config, &data.train)?;
    let inputs = TrainData {
        train: &data.train,
        test: &data.test,
        unlabeled: data.unlabeled.as_ref(),
    };
    train(
        &inputs,
        &config.pipeline,
        model,
        &config.optimizer,
        config.ssl.as_ref().map(|s| &s.config),
        config.seed,
        &config.evaluator(),
    )
}

fn write_metrics(path: &Path, log: &[EpochMetrics]) -> Result<()> {
    let mut text = Vec::new();
    for m in log {
        serde_json::to_writer(&mut text, m).map_err(|e| Error::Format(e.to_string()))?;
        text.push(b'\n');
    }
    fs::write(path, text).map_err(io_err(path))
}

/// Train and write `checkpoint/` and `metrics.jsonl` under `out_dir`.
pub fn cmd_train(config: &RunConfig) -> Result<Trained> {
    let trained = train_config(config)?;
    create_dir(&config.out_dir)?;
    save_checkpoint(&trained.model, &config.out_dir.join(CHECKPOINT_DIR))?;
    write_metrics(&config.out_dir.join(METRICS_FILE), &trained.log)?;
    Ok(trained)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub mode: InferenceMode,
    pub clean_error: f64,
    /// `(label, error)` per requested corruption, in request order.
    pub corruption_errors: Vec<(String, f64)>,
    pub mce: Option<f64>,
}

impl EvalReport {
    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["mode".to_string(), "clean".to_string()];
        h.extend(self.corruption_errors.iter().map(|(l, _)| l.clone()));
        if self.mce.is_some() {
            h.push("mce".into());
        }
        h
    }

    pub fn row(&self) -> Vec<String> {
        let mut r = vec![self.mode.name().to_string(), fmt_err(self.clean_error)];
        r.extend(self.corruption_errors.iter().map(|(_, e)| fmt_err(*e)));
        if let Some(m) = self.mce {
            r.push(fmt_err(m));
        }
        r
    }
}

fn fmt_err(e: f64) -> String {
    format!("{e:.6}")
}

/// Clean and per-corruption test error of `model`. Each corruption uses
/// the same per-image streams, so repeated entries give repeated columns.
pub fn evaluate_model(config: &RunConfig, model: &Model, test: &Dataset, evaluator: &Evaluator) -> Result<EvalReport> {
    if let Some(dim) = evaluator.input_dim(test)? {
        if dim != model.input_dim() {
            return Err(Error::Shape(format!(
                "{} inference produces {dim} inputs, checkpoint expects {}",
                evaluator.mode.name(),
                model.input_dim()
            )));
        }
    }
    let clean_error = evaluator.error(model, test)?;
    let seed = domain_seed(config.seed, CORRUPTION_DOMAIN);
    let corruption_errors = config
        .corruptions
        .iter()
        .map(|spec| {
            let corrupted = test.map_images(|i, img| corrupt(img, spec, &mut derive_stream(seed, i as u64)))?;
            Ok((spec.label(), evaluator.error(model, &corrupted)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mce = if corruption_errors.is_empty() {
        None
    } else {
        Some(compute_mce(&corruption_errors.iter().map(|(_, e)| *e).collect::<Vec<_>>())?)
    };
    Ok(EvalReport {
        mode: evaluator.mode,
        clean_error,
        corruption_errors,
        mce,
    })
}

/// Evaluate a checkpoint and write `eval.csv` under `out_dir`.
pub fn cmd_eval(config: &RunConfig, checkpoint: &Path) -> Result<EvalReport> {
    let model = load_checkpoint(checkpoint)?;
    let test = config.test_set()?;
    let report = evaluate_model(config, &model, &test, &config.evaluator())?;
    create_dir(&config.out_dir)?;
    write_csv(&config.out_dir.join(EVAL_CSV), &report.header(), &[report.row()])?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub k: usize,
    pub raw_images_per_sample: usize,
    pub input_shape: (usize, usize, usize),
    pub final_train_loss: Option<f64>,
    pub eval: EvalReport,
}

pub fn ablation_header(rows: &[AblationRow]) -> Vec<String> {
    let mut h: Vec<String> = ["k", "raw_images", "input_h", "input_w", "input_c", "train_loss"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    if let Some(r) = rows.first() {
        h.extend(r.eval.header());
    }
    h
}

impl AblationRow {
    pub fn cells(&self) -> Vec<String> {
        let (h, w, c) = self.input_shape;
        let mut r = vec![
            self.k.to_string(),
            self.raw_images_per_sample.to_string(),
            h.to_string(),
            w.to_string(),
            c.to_string(),
            self.final_train_loss.map_or_else(|| "-".into(), |l| format!("{l:.6}")),
        ];
        r.extend(self.eval.row());
        r
    }
}

/// Train and evaluate one run per `k`, replacing the terminal stackmix
/// width and using self-concatenation at test time. Every run shares the
/// config seed. One exported batch per `k` goes to `out_dir/k_{k}`.
pub fn cmd_ablate_k(config: &RunConfig, ks: &[usize]) -> Result<Vec<AblationRow>> {
    if ks.is_empty() {
        return Err(Error::Config("ablation needs at least one k".into()));
    }
    if let Some(k) = ks.iter().find(|&&k| k == 0) {
        return Err(Error::Config(format!("ablation k must be >= 1, got {k}")));
    }
    if config.inference != InferenceMode::SelfConcat {
        return Err(Error::Config(format!(
            "ablation evaluates with self_concat, config requests {}",
            config.inference.name()
        )));
    }
    let mut rows = Vec::with_capacity(ks.len());
    for &k in ks {
        let mut run = config.clone();
        run.pipeline = config.pipeline.with_stack_k(k)?;
        run.k = k;
        run.out_dir = config.out_dir.join(format!("k_{k}"));
        run.validate()?;
        let input_shape = cmd_augment(&run, 1)?[0].image_shape;
        let trained = train_config(&run)?;
        let test = run.test_set()?;
        let eval = evaluate_model(&run, &trained.model, &test, &run.evaluator())?;
        rows.push(AblationRow {
            k,
            raw_images_per_sample: run.pipeline.raw_images_per_sample(),
            input_shape,
            final_train_loss: trained.log.last().map(|m| m.train_loss),
            eval,
        });
    }
    create_dir(&config.out_dir)?;
    let cells: Vec<Vec<String>> = rows.iter().map(AblationRow::cells).collect();
    write_csv(&config.out_dir.join(ABLATION_CSV), &ablation_header(&rows), &cells)?;
    Ok(rows)
}

/// Print an aligned table to `out`.
pub fn print_table(out: &mut impl std::io::Write, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let table = Table::new(header.to_vec(), rows.to_vec());
    write!(out, "{table}").map_err(|e| Error::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    })?;
    out.flush().map_err(|e| Error::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    })
}
