//! Corpus ingestion, sentence "images", labeled/unlabeled designation and
//! minibatching.

mod corpus;
mod embeddings;
mod tokenize;

pub use corpus::{load_corpus, parse_corpus, write_corpus, CorpusLoad, Label, TweetRecord, MAX_MALFORMED_FRACTION};
pub use embeddings::{load_embeddings, parse_embeddings, EmbeddingTable};
pub use tokenize::tokenize;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::network::MIN_SPATIAL;
use crate::seed::derive_seed;

/// One text as an `[1, L, D]` matrix: row `j` is the embedding of token `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSample {
    pub matrix: Tensor,
    pub label: Option<usize>,
    pub id: String,
    pub event: String,
}

/// Embeds the first `max_len` tokens; unknown words and padding rows are zero.
pub fn encode(record: &TweetRecord, table: &EmbeddingTable, max_len: usize) -> Result<EncodedSample> {
    if max_len < MIN_SPATIAL {
        return Err(Error::Invalid(format!(
            "max_len must be at least {MIN_SPATIAL}, got {max_len}"
        )));
    }
    let dim = table.dim();
    let mut matrix = Tensor::zeros([1, max_len, dim]);
    let rows = matrix.data_mut();
    for (j, token) in tokenize(&record.text).iter().take(max_len).enumerate() {
        if let Some(v) = table.get(token) {
            rows[j * dim..(j + 1) * dim].copy_from_slice(v);
        }
    }
    Ok(EncodedSample {
        matrix,
        label: record.label.map(Label::index),
        id: record.id.clone(),
        event: record.event.clone(),
    })
}

pub fn encode_all(records: &[TweetRecord], table: &EmbeddingTable, max_len: usize) -> Result<Vec<EncodedSample>> {
    records.iter().map(|r| encode(r, table, max_len)).collect()
}

/// Stacks `[1, L, D]` samples into a `[B, 1, L, D]` batch.
pub fn stack<'a>(samples: impl IntoIterator<Item = &'a EncodedSample>) -> Result<Tensor> {
    let mut shape: Option<Vec<usize>> = None;
    let mut data = Vec::new();
    let mut count = 0;
    for s in samples {
        match &shape {
            None => shape = Some(s.matrix.shape().to_vec()),
            Some(sh) if sh.as_slice() != s.matrix.shape() => {
                return Err(Error::shape("batch stacking", sh, s.matrix.shape()));
            }
            Some(_) => {}
        }
        data.extend_from_slice(s.matrix.data());
        count += 1;
    }
    let shape = shape.ok_or_else(|| Error::Invalid("cannot stack an empty batch".into()))?;
    let mut full = vec![count];
    full.extend(shape);
    Tensor::new(full, data)
}

/// Training corpus with a designated labeled subset.
///
/// Labels of samples outside the subset are removed from the samples
/// themselves and kept apart for evaluation only.
#[derive(Debug, Clone)]
pub struct CorpusSplit {
    samples: Vec<EncodedSample>,
    labeled: Vec<bool>,
    ground_truth: Vec<Option<usize>>,
    labeled_ratio: f64,
}

impl CorpusSplit {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labeled_ratio(&self) -> f64 {
        self.labeled_ratio
    }

    pub fn labeled_count(&self) -> usize {
        self.labeled.iter().filter(|&&l| l).count()
    }

    pub fn is_labeled(&self, i: usize) -> bool {
        self.labeled[i]
    }

    pub fn labeled_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labeled[i]).collect()
    }

    /// Training-facing view: carries a label only for designated samples.
    pub fn sample(&self, i: usize) -> &EncodedSample {
        &self.samples[i]
    }

    pub fn samples(&self) -> &[EncodedSample] {
        &self.samples
    }

    /// Full annotations, for scoring only.
    pub fn ground_truth(&self) -> &[Option<usize>] {
        &self.ground_truth
    }
}

/// Keeps labels on a uniformly drawn subset of `round(ratio · N)` samples.
pub fn designate_labeled(samples: Vec<EncodedSample>, ratio: f64, seed: u64) -> Result<CorpusSplit> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Invalid(format!("labeled ratio must lie in (0, 1], got {ratio}")));
    }
    let n = samples.len();
    let m = (ratio * n as f64).round() as usize;
    if m == 0 {
        return Err(Error::Invalid(format!(
            "labeled ratio {ratio} of {n} samples leaves no labeled data"
        )));
    }
    let mut candidates: Vec<usize> = (0..n).filter(|&i| samples[i].label.is_some()).collect();
    if candidates.len() < m {
        return Err(Error::Invalid(format!(
            "{m} labeled samples requested but only {} carry labels",
            candidates.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    candidates.shuffle(&mut rng);
    let mut labeled = vec![false; n];
    for &i in &candidates[..m] {
        labeled[i] = true;
    }
    let ground_truth = samples.iter().map(|s| s.label).collect();
    let samples = samples
        .into_iter()
        .zip(&labeled)
        .map(|(mut s, &keep)| {
            if !keep {
                s.label = None;
            }
            s
        })
        .collect();
    Ok(CorpusSplit {
        samples,
        labeled,
        ground_truth,
        labeled_ratio: ratio,
    })
}

#[derive(Debug, Clone)]
pub struct Minibatch {
    /// `[B, 1, L, D]`.
    pub inputs: Tensor,
    /// Visible labels; `None` for unlabeled samples.
    pub labels: Vec<Option<usize>>,
    pub ids: Vec<String>,
    pub indices: Vec<usize>,
}

/// Sample order for one epoch, a permutation seeded by `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, epoch]));
    order.shuffle(&mut rng);
    order
}

/// Shuffled minibatches covering every sample exactly once; only the last
/// batch may be short.
pub fn batches(split: &CorpusSplit, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Minibatch>> {
    if batch_size == 0 {
        return Err(Error::Invalid("batch size must be at least 1".into()));
    }
    epoch_order(split.len(), seed, epoch)
        .chunks(batch_size)
        .map(|chunk| {
            let picked: Vec<&EncodedSample> = chunk.iter().map(|&i| split.sample(i)).collect();
            Ok(Minibatch {
                inputs: stack(picked.iter().copied())?,
                labels: picked.iter().map(|s| s.label).collect(),
                ids: picked.iter().map(|s| s.id.clone()).collect(),
                indices: chunk.to_vec(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn table() -> EmbeddingTable {
        let mut t = EmbeddingTable::new(8);
        t.insert("plane", vec![1.0; 8]).unwrap();
        t.insert("crash", (0..8).map(f64::from).collect()).unwrap();
        t
    }

    fn record(text: &str, label: Option<Label>) -> TweetRecord {
        TweetRecord {
            id: "r".into(),
            event: "gc".into(),
            text: text.into(),
            label,
        }
    }

    fn samples(n: usize) -> Vec<EncodedSample> {
        (0..n)
            .map(|i| EncodedSample {
                matrix: Tensor::full([1, 8, 8], i as f64),
                label: Some(i % 2),
                id: format!("s{i}"),
                event: "e".into(),
            })
            .collect()
    }

    #[test]
    fn empty_text_is_zero_matrix() {
        let s = encode(&record("", None), &table(), 8).unwrap();
        assert_eq!(s.matrix, Tensor::zeros([1, 8, 8]));
        assert_eq!(s.label, None);
    }

    #[test]
    fn known_tokens_fill_leading_rows() {
        let s = encode(&record("Plane CRASH", Some(Label::Fake)), &table(), 8).unwrap();
        let d = s.matrix.data();
        assert_eq!(&d[..8], table().get("plane").unwrap());
        assert_eq!(&d[8..16], table().get("crash").unwrap());
        assert!(d[16..].iter().all(|&v| v == 0.0));
        assert_eq!(s.label, Some(1));
        assert!(encode(&record("x", None), &table(), 4).is_err());
    }

    #[test]
    fn long_text_is_truncated() {
        let mut t = EmbeddingTable::new(8);
        let words: Vec<String> = (0..100).map(|i| format!("w{i}")).collect();
        for (i, w) in words.iter().enumerate() {
            t.insert(w.clone(), vec![i as f64 + 1.0; 8]).unwrap();
        }
        let s = encode(&record(&words.join(" "), None), &t, 64).unwrap();
        assert_eq!(s.matrix.shape(), &[1, 64, 8]);
        for j in 0..64 {
            assert_eq!(s.matrix.data()[j * 8], j as f64 + 1.0);
        }
    }

    #[test]
    fn designation_counts_and_determinism() {
        let all = designate_labeled(samples(10), 1.0, 0).unwrap();
        assert_eq!(all.labeled_count(), 10);
        let split = designate_labeled(samples(1000), 0.05, 3).unwrap();
        assert_eq!(split.labeled_count(), 50);
        let again = designate_labeled(samples(1000), 0.05, 3).unwrap();
        let other = designate_labeled(samples(1000), 0.05, 4).unwrap();
        assert_eq!(split.labeled_indices(), again.labeled_indices());
        assert_ne!(split.labeled_indices(), other.labeled_indices());
        assert_eq!(other.labeled_count(), 50);
        assert!(designate_labeled(samples(10), 0.01, 0).is_err());
        assert!(designate_labeled(samples(10), 0.0, 0).is_err());
        assert!(designate_labeled(samples(10), 1.5, 0).is_err());
    }

    #[test]
    fn unlabeled_samples_hide_their_labels() {
        let split = designate_labeled(samples(40), 0.25, 1).unwrap();
        for i in 0..split.len() {
            assert_eq!(split.sample(i).label.is_some(), split.is_labeled(i));
            assert_eq!(split.ground_truth()[i], Some(i % 2));
        }
        for b in batches(&split, 7, 0, 0).unwrap() {
            for (label, &idx) in b.labels.iter().zip(&b.indices) {
                assert_eq!(label.is_some(), split.is_labeled(idx));
            }
        }
    }

    #[test]
    fn batch_sizes_and_remainder() {
        let split = designate_labeled(samples(100), 1.0, 0).unwrap();
        let sizes: Vec<usize> = batches(&split, 25, 1, 0).unwrap().iter().map(|b| b.ids.len()).collect();
        assert_eq!(sizes, [25, 25, 25, 25]);
        let split = designate_labeled(samples(101), 1.0, 0).unwrap();
        let b = batches(&split, 25, 1, 0).unwrap();
        let sizes: Vec<usize> = b.iter().map(|b| b.ids.len()).collect();
        assert_eq!(sizes, [25, 25, 25, 25, 1]);
        assert_eq!(b[4].inputs.shape(), &[1, 1, 8, 8]);
        assert!(batches(&split, 0, 1, 0).is_err());
    }

    #[test]
    fn epoch_is_a_permutation_and_reshuffles() {
        let split = designate_labeled(samples(57), 1.0, 0).unwrap();
        let ids = |epoch| -> Vec<String> {
            batches(&split, 10, 9, epoch).unwrap().into_iter().flat_map(|b| b.ids).collect()
        };
        let e0 = ids(0);
        let set: HashSet<_> = e0.iter().cloned().collect();
        assert_eq!(e0.len(), 57);
        assert_eq!(set, (0..57).map(|i| format!("s{i}")).collect());
        assert_eq!(e0, ids(0));
        assert_ne!(e0, ids(1));
    }

    #[test]
    fn labeled_fraction_per_batch_matches_hypergeometric_mean() {
        // N = 200, M = 20, |B| = 25: E[labeled per batch] = 2.5.
        let split = designate_labeled(samples(200), 0.1, 5).unwrap();
        let mut total = 0usize;
        let mut count = 0usize;
        for seed in 0..400 {
            let b = &batches(&split, 25, seed, 0).unwrap()[0];
            total += b.labels.iter().filter(|l| l.is_some()).count();
            count += 1;
        }
        let mean = total as f64 / count as f64;
        // Hypergeometric variance 25·0.1·0.9·175/199; 3σ of the mean over 400 draws.
        let sd = (25.0 * 0.1 * 0.9 * 175.0 / 199.0f64).sqrt() / (count as f64).sqrt();
        assert!((mean - 2.5).abs() <= 3.0 * sd, "{mean}");
    }
}
