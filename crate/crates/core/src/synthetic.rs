//! Generated corpora and embedding tables for tests, demos and fixtures.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{EmbeddingTable, Label, TweetRecord};

/// Texts whose labels are carried by class-specific words.
///
/// Every text has `tokens` words: `class_tokens` of them come from its
/// class's private vocabulary, the rest from a pool shared by all classes
/// and from a pool specific to its event. Class words are embedded as
/// `signal · class direction + noise`; all other words as pure noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub events: Vec<String>,
    pub per_event: usize,
    pub class_vocab: usize,
    pub shared_vocab: usize,
    pub event_vocab: usize,
    pub tokens: usize,
    pub class_tokens: usize,
    pub dim: usize,
    pub signal: f64,
    pub seed: u64,
}

impl SyntheticConfig {
    /// Two classes, vocabularies disjoint, no shared words.
    pub fn separable(events: &[&str], per_event: usize, dim: usize, seed: u64) -> Self {
        SyntheticConfig {
            events: events.iter().map(|e| e.to_string()).collect(),
            per_event,
            class_vocab: 12,
            shared_vocab: 0,
            event_vocab: 0,
            tokens: 8,
            class_tokens: 8,
            dim,
            signal: 0.0,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub records: Vec<TweetRecord>,
    pub embeddings: EmbeddingTable,
}

fn class_word(label: Label, k: usize) -> String {
    format!("{}{k}", label.as_str())
}

fn noise(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

/// Balanced corpus: within each event, labels alternate fake/true.
pub fn generate(config: &SyntheticConfig) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dim = config.dim;
    let mut table = EmbeddingTable::new(dim);
    let unit = |v: Vec<f64>| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect::<Vec<_>>()
    };
    let labels = [Label::True, Label::Fake];
    let directions: Vec<Vec<f64>> = labels.iter().map(|_| unit(noise(&mut rng, dim))).collect();
    for (label, dir) in labels.iter().zip(&directions) {
        for k in 0..config.class_vocab {
            let v = noise(&mut rng, dim)
                .into_iter()
                .zip(dir)
                .map(|(n, d)| n + config.signal * d)
                .collect();
            table.insert(class_word(*label, k), v).expect("dimension matches");
        }
    }
    for k in 0..config.shared_vocab {
        table.insert(format!("w{k}"), noise(&mut rng, dim)).expect("dimension matches");
    }
    for event in &config.events {
        for k in 0..config.event_vocab {
            table.insert(format!("{event}{k}"), noise(&mut rng, dim)).expect("dimension matches");
        }
    }

    let mut records = Vec::with_capacity(config.events.len() * config.per_event);
    for event in &config.events {
        for i in 0..config.per_event {
            let label = if i % 2 == 0 { Label::Fake } else { Label::True };
            let mut slots: Vec<bool> = (0..config.tokens).map(|j| j < config.class_tokens).collect();
            slots.shuffle(&mut rng);
            let words: Vec<String> = slots
                .iter()
                .map(|&is_class| {
                    let pool = config.shared_vocab + config.event_vocab;
                    if is_class || pool == 0 {
                        class_word(label, rng.gen_range(0..config.class_vocab.max(1)))
                    } else {
                        let k = rng.gen_range(0..pool);
                        if k < config.shared_vocab {
                            format!("w{k}")
                        } else {
                            format!("{event}{}", k - config.shared_vocab)
                        }
                    }
                })
                .collect();
            records.push(TweetRecord {
                id: format!("{event}-{i:05}"),
                event: event.clone(),
                text: words.join(" "),
                label: Some(label),
            });
        }
    }
    SyntheticCorpus {
        records,
        embeddings: table,
    }
}

/// Event name with its fake and true counts.
pub type EventCounts = (&'static str, usize, usize);

/// Counts of the five-event rumour corpus (event, fake, true).
pub const FIVE_EVENT_COUNTS: [EventCounts; 5] = [
    ("GC", 2_637, 2_014),
    ("CH", 7_697, 32_481),
    ("SS", 9_046, 16_175),
    ("FE", 6_686, 18_368),
    ("OS", 6_624, 6_032),
];

/// Records with exactly the given per-event label counts, in shuffled
/// order. Texts are short placeholders.
pub fn counted_fixture(counts: &[EventCounts], seed: u64) -> Vec<TweetRecord> {
    let mut records = Vec::new();
    for &(event, fake, truth) in counts {
        for i in 0..fake + truth {
            let label = if i < fake { Label::Fake } else { Label::True };
            records.push(TweetRecord {
                id: format!("{event}-{i}"),
                event: event.to_string(),
                text: format!("{} report {i} from {event}", label.as_str()),
                label: Some(label),
            });
        }
    }
    records.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    records
}
