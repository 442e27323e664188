//! Leave-one-event-out cross-validation and macro-averaged precision,
//! recall and F-score.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{designate_labeled, encode_all, stack, EmbeddingTable, EncodedSample, Label, TweetRecord};
use crate::error::{Error, Result};
use crate::network::{argmax_rows, forward_two_path, Dropout, NetworkParams};
use crate::train::{train, TrainConfig};

/// One fold: every record of `held_out` is a test record, all others train.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub held_out: String,
    /// Indices into the record list.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl FoldPlan {
    pub fn train_ids<'a>(&self, records: &'a [TweetRecord]) -> Vec<&'a str> {
        self.train.iter().map(|&i| records[i].id.as_str()).collect()
    }

    pub fn test_ids<'a>(&self, records: &'a [TweetRecord]) -> Vec<&'a str> {
        self.test.iter().map(|&i| records[i].id.as_str()).collect()
    }
}

/// One fold per distinct event, ordered by event name.
pub fn loeo_folds(records: &[TweetRecord]) -> Result<Vec<FoldPlan>> {
    let mut by_event: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_event.entry(r.event.as_str()).or_default().push(i);
    }
    if by_event.len() < 2 {
        return Err(Error::Invalid(format!(
            "leave-one-event-out needs at least 2 events, found {}",
            by_event.len()
        )));
    }
    Ok(by_event
        .iter()
        .map(|(event, test)| FoldPlan {
            held_out: event.to_string(),
            train: (0..records.len()).filter(|&i| records[i].event != *event).collect(),
            test: test.clone(),
        })
        .collect())
}

/// Counts indexed `[true class][predicted class]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_rows(counts: Vec<Vec<u64>>) -> Result<Self> {
        let classes = counts.len();
        if counts.iter().any(|r| r.len() != classes) {
            return Err(Error::Invalid("confusion matrix must be square".into()));
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth][predicted]
    }

    pub fn rows(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn add(&mut self, truth: usize, predicted: usize) -> Result<()> {
        if truth >= self.classes || predicted >= self.classes {
            return Err(Error::Invalid(format!(
                "class pair ({truth}, {predicted}) out of range for {} classes",
                self.classes
            )));
        }
        self.counts[truth][predicted] += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::Invalid("cannot merge confusion matrices of different size".into()));
        }
        for (a, b) in self.counts.iter_mut().flatten().zip(other.counts.iter().flatten()) {
            *a += b;
        }
        Ok(())
    }
}

pub fn confusion(labels: &[usize], predictions: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if labels.len() != predictions.len() {
        return Err(Error::Invalid(format!(
            "{} labels but {} predictions",
            labels.len(),
            predictions.len()
        )));
    }
    let mut cm = ConfusionMatrix::new(classes);
    for (&t, &p) in labels.iter().zip(predictions) {
        cm.add(t, p)?;
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    /// Number of samples whose true class is this one.
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrfReport {
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class P/R/F with 0 for any zero denominator, plus unweighted means.
pub fn macro_prf(cm: &ConfusionMatrix) -> PrfReport {
    let n = cm.classes();
    let per_class: Vec<ClassMetrics> = (0..n)
        .map(|c| {
            let tp = cm.get(c, c);
            let predicted: u64 = (0..n).map(|t| cm.get(t, c)).sum();
            let actual: u64 = cm.rows()[c].iter().sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, actual);
            let f_score = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                precision,
                recall,
                f_score,
                support: actual,
            }
        })
        .collect();
    let mean = |f: fn(&ClassMetrics) -> f64| {
        if n == 0 {
            0.0
        } else {
            per_class.iter().map(f).sum::<f64>() / n as f64
        }
    };
    PrfReport {
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f: mean(|m| m.f_score),
        per_class,
    }
}

/// Inference-mode predictions, evaluated in chunks of `chunk` samples.
pub fn predict_samples(params: &NetworkParams, samples: &[EncodedSample], chunk: usize) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(samples.len());
    for part in samples.chunks(chunk.max(1)) {
        let batch = stack(part)?;
        let z = forward_two_path(&batch, params, &Dropout::inference())?.z;
        out.extend(argmax_rows(&crate::layers::softmax(&z)?));
    }
    Ok(out)
}

pub(crate) const PREDICT_CHUNK: usize = 64;

/// Scores `params` on labeled samples; unlabeled samples are skipped.
pub fn score(params: &NetworkParams, samples: &[EncodedSample]) -> Result<ConfusionMatrix> {
    let scored: Vec<EncodedSample> = samples.iter().filter(|s| s.label.is_some()).cloned().collect();
    let predictions = predict_samples(params, &scored, PREDICT_CHUNK)?;
    let labels: Vec<usize> = scored.iter().map(|s| s.label.expect("filtered")).collect();
    confusion(&labels, &predictions, params.arch.classes)
}

/// Results for one held-out event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventReport {
    pub event: String,
    pub test_size: usize,
    pub train_size: usize,
    pub labeled_train: usize,
    pub confusion: ConfusionMatrix,
    pub metrics: PrfReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub labeled_ratio: f64,
    pub config_fingerprint: String,
    pub per_event: Vec<EventReport>,
    /// Test predictions of all folds pooled into one matrix.
    pub pooled_confusion: ConfusionMatrix,
    pub pooled: PrfReport,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Invalid(format!("bad metrics report: {e}")))
    }
}

/// Short hex digest of a serializable configuration.
pub fn fingerprint<T: Serialize>(config: &T) -> String {
    let bytes = serde_json::to_vec(config).expect("config serializes");
    hex::encode(&Sha256::digest(&bytes)[..8])
}

/// Trains one model per held-out event and scores it on that event.
///
/// Within each fold the labeled subset is drawn from the training events
/// only; the held-out event is scored against its full annotations.
pub fn run_loeo(records: &[TweetRecord], table: &EmbeddingTable, config: &TrainConfig) -> Result<MetricsReport> {
    run_loeo_with(records, table, config, |_, _| {})
}

/// [`run_loeo`] with a callback after every fold.
pub fn run_loeo_with(
    records: &[TweetRecord],
    table: &EmbeddingTable,
    config: &TrainConfig,
    mut on_fold: impl FnMut(usize, &EventReport),
) -> Result<MetricsReport> {
    config.validate()?;
    if table.dim() != config.arch.embed_dim {
        return Err(Error::Architecture(format!(
            "embeddings have dimension {}, configuration expects {}",
            table.dim(),
            config.arch.embed_dim
        )));
    }
    let folds = loeo_folds(records)?;
    let mut per_event = Vec::with_capacity(folds.len());
    let mut pooled = ConfusionMatrix::new(config.arch.classes);
    for (k, fold) in folds.iter().enumerate() {
        let pick = |idx: &[usize]| -> Vec<TweetRecord> { idx.iter().map(|&i| records[i].clone()).collect() };
        let train_samples = encode_all(&pick(&fold.train), table, config.arch.max_len)?;
        let test_samples = encode_all(&pick(&fold.test), table, config.arch.max_len)?;
        let split = designate_labeled(
            train_samples,
            config.labeled_ratio,
            config.designation_seed(k as u64),
        )?;
        let state = train(&split, config)?;
        let cm = score(&state.params, &test_samples)?;
        pooled.merge(&cm)?;
        let report = EventReport {
            event: fold.held_out.clone(),
            test_size: fold.test.len(),
            train_size: split.len(),
            labeled_train: split.labeled_count(),
            metrics: macro_prf(&cm),
            confusion: cm,
        };
        on_fold(k, &report);
        per_event.push(report);
    }
    Ok(MetricsReport {
        labeled_ratio: config.labeled_ratio,
        config_fingerprint: fingerprint(config),
        per_event,
        pooled: macro_prf(&pooled),
        pooled_confusion: pooled,
    })
}

/// Scores of always predicting the training portion's most frequent class.
pub fn majority_baseline(train_labels: &[usize], test_labels: &[usize], classes: usize) -> Result<PrfReport> {
    let mut freq = vec![0usize; classes];
    for &l in train_labels {
        *freq.get_mut(l).ok_or_else(|| Error::Invalid(format!("label {l} out of range")))? += 1;
    }
    let majority = freq
        .iter()
        .enumerate()
        .fold(0, |best, (c, &n)| if n > freq[best] { c } else { best });
    let cm = confusion(test_labels, &vec![majority; test_labels.len()], classes)?;
    Ok(macro_prf(&cm))
}

fn pct(v: f64) -> String {
    format!("{:.2}%", 100.0 * v)
}

fn label_name(c: usize) -> String {
    Label::from_index(c).map_or_else(|| format!("class{c}"), |l| l.as_str().to_string())
}

/// Per-event table (precision, recall, F-score per held-out event, macro
/// over classes) followed by the pooled macro summary.
pub fn render_table(report: &MetricsReport) -> String {
    let mut out = String::new();
    let ratio = format!("{:.0}%", 100.0 * report.labeled_ratio);
    let _ = writeln!(out, "Per-event results, labeled ratio {ratio} (config {})", report.config_fingerprint);
    let _ = writeln!(out, "{:<12} {:>8} {:>11} {:>11} {:>11}", "Event", "Tweets", "Precision", "Recall", "Fscore");
    for e in &report.per_event {
        let m = &e.metrics;
        let _ = writeln!(
            out,
            "{:<12} {:>8} {:>11} {:>11} {:>11}",
            e.event,
            e.test_size,
            pct(m.macro_precision),
            pct(m.macro_recall),
            pct(m.macro_f)
        );
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "{:<12} {:>11} {:>11} {:>11}", "Class", "Precision", "Recall", "Fscore");
    for (c, m) in report.pooled.per_class.iter().enumerate() {
        let _ = writeln!(
            out,
            "{:<12} {:>11} {:>11} {:>11}",
            label_name(c),
            pct(m.precision),
            pct(m.recall),
            pct(m.f_score)
        );
    }
    let _ = writeln!(out);
    out.push_str(&render_summary(std::slice::from_ref(report)));
    out
}

/// One `MP / MR / MF` row per report, e.g. one per labeled ratio.
pub fn render_summary(reports: &[MetricsReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<14} {:>9} {:>9} {:>9}", "Model", "MP", "MR", "MF");
    for r in reports {
        let name = format!("DTSL ({:.0}%)", 100.0 * r.labeled_ratio);
        let _ = writeln!(
            out,
            "{:<14} {:>9} {:>9} {:>9}",
            name,
            pct(r.pooled.macro_precision),
            pct(r.pooled.macro_recall),
            pct(r.pooled.macro_f)
        );
    }
    out
}
