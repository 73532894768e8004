//! The epoch loop, evaluation, and the four-variant ablation.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use somspike_core::data::{batch_plan, stratified_split, FeatureStore, SplitAssignment, Subset};
use somspike_core::metrics::{ClassReport, ConfusionMatrix};
use somspike_core::network::{Model, Variant};
use somspike_core::objective::{smoothed_ce, AdamState, TrainingProtocol};
use somspike_core::{rng, Error, Matrix, Mode};

use crate::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use crate::config::{PrototypeInitStrategy, TrainConfig};
use crate::error::{IoError, IoResult};

const EVAL_BATCH: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    /// Fraction in `[0, 1]`.
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
}

/// Eval-mode predictions over `indices`; never touches the model.
pub fn evaluate(model: &Model, store: &FeatureStore, indices: &[usize]) -> IoResult<Evaluation> {
    if indices.is_empty() {
        return Err(Error::Empty("evaluation subset").into());
    }
    let mut preds = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(EVAL_BATCH) {
        let logits = model.predict(&store.gather(chunk))?;
        preds.extend(logits.argmax_rows());
    }
    let labels = store.gather_labels(indices);
    let confusion = ConfusionMatrix::from_predictions(&preds, &labels, store.num_classes())?
        .with_names(store.manifest().class_names.clone())?;
    let correct = preds.iter().zip(&labels).filter(|(p, l)| p == l).count();
    Ok(Evaluation {
        accuracy: correct as f64 / indices.len() as f64,
        confusion,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Percent.
    pub val_accuracy: f64,
    /// Rate used for this epoch's updates.
    pub learning_rate: f64,
    pub checkpoint_saved: bool,
    pub lr_reduced: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestMetrics {
    /// Fraction in `[0, 1]`.
    pub accuracy: f64,
    pub report: ClassReport,
    pub confusion: Vec<Vec<u64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub config: TrainConfig,
    pub epochs: Vec<EpochRecord>,
    /// 0 when no epoch beat a validation accuracy of 0.
    pub best_epoch: usize,
    /// Percent.
    pub best_val_accuracy: f64,
    pub stopped_early: bool,
    /// Mini-batches dropped because batchnorm needs two rows in train mode.
    pub skipped_batches: usize,
    pub test: TestMetrics,
}

fn subset(split: &SplitAssignment, which: Subset) -> IoResult<Vec<usize>> {
    let idx = split.indices(which);
    if idx.is_empty() {
        return Err(Error::Empty(match which {
            Subset::Train => "train subset",
            Subset::Val => "val subset",
            Subset::Test => "test subset",
        })
        .into());
    }
    Ok(idx)
}

fn check_store(config: &TrainConfig, store: &FeatureStore) -> IoResult<()> {
    config.validate()?;
    let m = &config.model;
    if m.input_dim != store.dim() {
        return Err(Error::DimensionMismatch {
            what: "model input_dim vs store d",
            expected: store.dim(),
            found: m.input_dim,
        }
        .into());
    }
    if m.num_classes != store.num_classes() {
        return Err(Error::DimensionMismatch {
            what: "model num_classes vs store classes",
            expected: store.num_classes(),
            found: m.num_classes,
        }
        .into());
    }
    Ok(())
}

/// `count` training records taken round-robin over classes, each class in
/// seeded random order, so every class seeds at least one prototype when
/// `count ≥ C`.
pub fn prototype_source(store: &FeatureStore, train: &[usize], count: usize, seed: u64) -> Vec<usize> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); store.num_classes()];
    for &i in train {
        by_class[store.labels()[i]].push(i);
    }
    let mut rng = rng::stream(seed, 7);
    for members in &mut by_class {
        members.shuffle(&mut rng);
    }
    let mut out = Vec::with_capacity(count);
    for round in 0.. {
        let before = out.len();
        out.extend(by_class.iter().filter_map(|m| m.get(round)).take(count - out.len()));
        if out.len() == count || out.len() == before {
            break;
        }
    }
    out
}

/// Model initialization shared by every variant of one run.
pub fn init_model(config: &TrainConfig, store: &FeatureStore, train: &[usize]) -> IoResult<Model> {
    let mut model = Model::new(config.model, rng::mix(config.seed, 0x6d6f64656c))?;
    if config.prototype_init == PrototypeInitStrategy::Sample && model.som.is_some() {
        let seed = rng::mix(config.seed, 0x70726f746f);
        let source = prototype_source(store, train, config.model.prototypes, seed);
        model.init_prototypes_from(&store.gather(&source), seed)?;
    }
    Ok(model)
}

/// Trains with the real validation pass.
pub fn train(config: &TrainConfig, store: &FeatureStore, split: Option<&SplitAssignment>) -> IoResult<TrainReport> {
    let owned;
    let split = match split {
        Some(s) => s,
        None => {
            owned = stratified_split(store.labels(), store.num_classes(), config.split_ratios, config.seed)?;
            &owned
        }
    };
    let val = subset(split, Subset::Val)?;
    train_with_validator(config, store, split, |_, model| {
        Ok(100.0 * evaluate(model, store, &val)?.accuracy)
    })
}

/// Trains with `validate(epoch, model)` supplying the per-epoch validation
/// accuracy in percent.
pub fn train_with_validator<V>(
    config: &TrainConfig,
    store: &FeatureStore,
    split: &SplitAssignment,
    mut validate: V,
) -> IoResult<TrainReport>
where
    V: FnMut(usize, &Model) -> IoResult<f64>,
{
    check_store(config, store)?;
    if split.len() != store.len() {
        return Err(Error::DimensionMismatch {
            what: "split length vs store records",
            expected: store.len(),
            found: split.len(),
        }
        .into());
    }
    let train_idx = subset(split, Subset::Train)?;
    let test_idx = subset(split, Subset::Test)?;

    let mut model = init_model(config, store, &train_idx)?;
    let needs_pairs = model.variant().has_spiking_head();
    let mut adam = AdamState::new(config.adam);
    let mut protocol = TrainingProtocol::new(config.adam.learning_rate);
    protocol.scheduler.patience = config.plateau_patience;
    protocol.scheduler.factor = config.plateau_factor;
    protocol.early_stop.window = config.early_stop_window;
    protocol.early_stop.delta = config.early_stop_delta;

    let mut best: Option<Model> = None;
    let mut epochs = Vec::new();
    let mut stopped_early = false;
    let mut skipped_batches = 0;

    for epoch in 1..=config.max_epochs {
        let learning_rate = adam.learning_rate();
        let plan = batch_plan(&train_idx, config.batch_size, true, config.seed, epoch as u64)?;
        let epoch_seed = rng::mix(config.seed, epoch as u64);
        let (mut loss_sum, mut rows) = (0.0, 0usize);
        for (b, indices) in plan.iter().enumerate() {
            if needs_pairs && indices.len() < 2 {
                skipped_batches += 1;
                continue;
            }
            let x = store.gather(indices);
            let labels = store.gather_labels(indices);
            loss_sum += step(&mut model, &mut adam, &x, &labels, config.smoothing, rng::mix(epoch_seed, b as u64))?
                * indices.len() as f64;
            rows += indices.len();
        }
        let val_accuracy = validate(epoch, &model)?;
        if !val_accuracy.is_finite() {
            return Err(Error::NonFinite("validation accuracy").into());
        }
        let decision = protocol.observe(epoch, val_accuracy)?;
        if decision.save_checkpoint {
            if let Some(path) = &config.checkpoint {
                save_checkpoint(&model, &CheckpointMeta::new(&model, epoch, val_accuracy), path)?;
            }
            best = Some(model.clone());
        }
        adam.set_learning_rate(decision.learning_rate);
        epochs.push(EpochRecord {
            epoch,
            train_loss: if rows > 0 { loss_sum / rows as f64 } else { 0.0 },
            val_accuracy,
            learning_rate,
            checkpoint_saved: decision.save_checkpoint,
            lr_reduced: decision.lr_reduced,
        });
        if decision.stop {
            stopped_early = epoch < config.max_epochs;
            break;
        }
    }

    let final_model = match (&config.checkpoint, best) {
        (Some(path), Some(_)) => load_checkpoint(path, Some(model.variant()))?.0,
        (None, Some(m)) => m,
        (_, None) => model,
    };
    let eval = evaluate(&final_model, store, &test_idx)?;
    Ok(TrainReport {
        seed: config.seed,
        config: config.clone(),
        epochs,
        best_epoch: protocol.best_epoch,
        best_val_accuracy: protocol.best_accuracy,
        stopped_early,
        skipped_batches,
        test: TestMetrics {
            accuracy: eval.accuracy,
            report: ClassReport::from_confusion(&eval.confusion)?,
            confusion: (0..eval.confusion.num_classes()).map(|c| eval.confusion.row(c).to_vec()).collect(),
        },
    })
}

/// One Adam update on a mini-batch; returns its mean loss.
fn step(model: &mut Model, adam: &mut AdamState, x: &Matrix, labels: &[usize], smoothing: f64, seed: u64) -> IoResult<f64> {
    model.zero_grad();
    let logits = model.forward(x, Mode::Train, seed)?;
    let (loss, delta) = smoothed_ce(&logits, labels, smoothing)?;
    model.backward(&delta)?;
    adam.step(model.named_params_mut().into_iter().map(|(_, p)| p))?;
    Ok(loss)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    /// Fraction in `[0, 1]`.
    pub test_accuracy: f64,
}

/// Trains each variant once with the same seed and split.
pub fn ablate(config: &TrainConfig, store: &FeatureStore, split: Option<&SplitAssignment>) -> IoResult<Vec<AblationRow>> {
    let owned;
    let split = match split {
        Some(s) => s,
        None => {
            owned = stratified_split(store.labels(), store.num_classes(), config.split_ratios, config.seed)?;
            &owned
        }
    };
    Variant::ALL
        .into_iter()
        .map(|variant| {
            let mut cfg = config.clone();
            cfg.model.variant = variant;
            cfg.checkpoint = config.checkpoint.as_ref().map(|p| {
                let mut name = p.as_os_str().to_owned();
                name.push(format!(".{variant}"));
                name.into()
            });
            let report = train(&cfg, store, Some(split))?;
            Ok(AblationRow {
                variant,
                test_accuracy: report.test.accuracy,
            })
        })
        .collect()
}

pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> IoResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["variant", "test_accuracy"]).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record([row.variant.as_str(), &row.test_accuracy.to_string()])
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| IoError::io(path, e))
}

/// Header row of class names, then one row of counts per true class.
pub fn write_confusion_csv(path: &Path, cm: &ConfusionMatrix) -> IoResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec!["true\\predicted".to_string()];
    header.extend(cm.class_names.iter().cloned());
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for (c, name) in cm.class_names.iter().enumerate() {
        let row = cm.row(c);
        let mut record = vec![name.clone()];
        record.extend(row.iter().map(u64::to_string));
        w.write_record(&record).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| IoError::io(path, e))
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> IoError {
    IoError::Csv {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

/// Reads a run series: every numeric field of a CSV, in order. A leading
/// non-numeric row is taken as a header.
pub fn read_series(path: &Path) -> IoResult<Vec<f64>> {
    let bytes = std::fs::read(path).map_err(|e| IoError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes.as_slice());
    let mut values = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let parsed: Result<Vec<f64>, _> = record.iter().filter(|f| !f.is_empty()).map(str::parse).collect();
        match parsed {
            Ok(row) => values.extend(row),
            Err(_) if i == 0 => continue,
            Err(_) => {
                return Err(IoError::Csv {
                    path: path.to_path_buf(),
                    reason: format!("non-numeric field on line {}", i + 1),
                })
            }
        }
    }
    Ok(values)
}

/// Serializes `value` as pretty JSON, newline-terminated.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> IoResult<()> {
    let mut file = std::fs::File::create(path).map_err(|e| IoError::io(path, e))?;
    serde_json::to_writer_pretty(&mut file, value).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    file.write_all(b"\n").map_err(|e| IoError::io(path, e))
}
