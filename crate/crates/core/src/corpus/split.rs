//! Train/validation/test partitions.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Corpus;

const RATIO_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitStrategy {
    /// Seeded shuffle, then contiguous cuts.
    Random,
    /// Sort by active-slot count and deal documents so every bucket sees the
    /// whole range of counts.
    BySlotCount,
}

impl std::str::FromStr for SplitStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(SplitStrategy::Random),
            "by_slot_count" | "by-slot-count" => Ok(SplitStrategy::BySlotCount),
            other => Err(format!("unknown split strategy {other:?} (expected random or by_slot_count)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SplitError {
    #[error("ratios must be non-negative and sum to 1, got {0:?}")]
    BadRatios([f64; 3]),
    #[error("cannot split {docs} documents into {buckets} buckets")]
    TooFewDocuments { docs: usize, buckets: usize },
}

/// Bucket sizes by largest-remainder rounding. Equal remainders favour the
/// later bucket.
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> Result<[usize; 3], SplitError> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || (sum - 1.0).abs() > RATIO_TOLERANCE {
        return Err(SplitError::BadRatios(ratios));
    }
    if n < ratios.len() {
        return Err(SplitError::TooFewDocuments {
            docs: n,
            buckets: ratios.len(),
        });
    }
    let quotas = ratios.map(|r| r * n as f64);
    let mut sizes = quotas.map(|q| (q + RATIO_TOLERANCE).floor() as usize);
    let assigned: usize = sizes.iter().sum();
    // Remainders on a 1e-9 grid so float noise cannot break ties.
    let mut order: Vec<(i64, usize)> = (0..3)
        .map(|i| (((quotas[i] - sizes[i] as f64) / RATIO_TOLERANCE).round() as i64, i))
        .collect();
    order.sort_by(|a, b| b.cmp(a));
    for &(_, i) in order.iter().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    Ok(sizes)
}

/// Partition a corpus into train, validation, and test.
pub fn split_corpus(
    corpus: &Corpus,
    ratios: [f64; 3],
    strategy: SplitStrategy,
    seed: u64,
) -> Result<[Corpus; 3], SplitError> {
    let n = corpus.documents.len();
    let sizes = split_sizes(n, ratios)?;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut buckets: [Vec<usize>; 3] = Default::default();
    match strategy {
        SplitStrategy::Random => {
            let mut rest = order.as_slice();
            for (b, &size) in sizes.iter().enumerate() {
                let (head, tail) = rest.split_at(size);
                buckets[b] = head.to_vec();
                rest = tail;
            }
        }
        SplitStrategy::BySlotCount => {
            order.sort_by_key(|&i| corpus.documents[i].final_cb.entries.slot_count());
            for (pos, &doc) in order.iter().enumerate() {
                // Bucket furthest behind its proportional share so far.
                let target = |b: usize| sizes[b] as f64 * (pos + 1) as f64 / n as f64;
                let pick = (0..3)
                    .filter(|&b| buckets[b].len() < sizes[b])
                    .max_by(|&a, &b| {
                        let da = target(a) - buckets[a].len() as f64;
                        let db = target(b) - buckets[b].len() as f64;
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .expect("sizes sum to n");
                buckets[pick].push(doc);
            }
        }
    }
    let names = ["train", "val", "test"];
    Ok(std::array::from_fn(|b| {
        let mut docs: Vec<_> = buckets[b].iter().map(|&i| corpus.documents[i].clone()).collect();
        docs.sort_by(|x, y| (&x.id, &x.annotator).cmp(&(&y.id, &y.annotator)));
        Corpus {
            provenance: format!("{} / {} split (seed {seed})", corpus.provenance, names[b]),
            ontology: corpus.ontology.clone(),
            documents: docs,
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn largest_remainder_sizes() {
        assert_eq!(split_sizes(235, [0.8, 0.1, 0.1]).unwrap(), [188, 23, 24]);
        assert_eq!(split_sizes(34, [0.2, 0.1, 0.7]).unwrap(), [7, 3, 24]);
        assert_eq!(split_sizes(20, [0.8, 0.1, 0.1]).unwrap(), [16, 2, 2]);
        assert_eq!(split_sizes(3, [1.0, 0.0, 0.0]).unwrap(), [3, 0, 0]);
    }

    #[test]
    fn invalid_inputs() {
        assert!(matches!(split_sizes(10, [0.5, 0.5, 0.1]), Err(SplitError::BadRatios(_))));
        assert!(matches!(split_sizes(10, [1.2, -0.1, -0.1]), Err(SplitError::BadRatios(_))));
        assert!(matches!(split_sizes(2, [0.5, 0.25, 0.25]), Err(SplitError::TooFewDocuments { .. })));
    }
}
