use rand::seq::index;
use rand::Rng;

use crate::data::SequenceSample;
use crate::error::{Error, Result};

/// One fragment of a training sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchItem {
    /// Class index in `0..classes`.
    pub label: usize,
    pub identity: usize,
    /// Index of the source sequence in the pool.
    pub sequence: usize,
    /// Frame indices into the source sequence; short sequences repeat their
    /// last frame.
    pub frames: Vec<usize>,
}

/// `p` identities times `k` fragments of `t` frames, grouped by identity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainBatch {
    pub items: Vec<BatchItem>,
}

impl TrainBatch {
    pub fn labels(&self) -> Vec<usize> {
        self.items.iter().map(|i| i.label).collect()
    }

    pub fn frame_count(&self) -> usize {
        self.items.iter().map(|i| i.frames.len()).sum()
    }
}

/// Training sequences grouped by identity, with identities mapped to
/// contiguous class indices in ascending id order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdentityPool {
    identities: Vec<usize>,
    by_class: Vec<Vec<usize>>,
    lengths: Vec<usize>,
}

impl IdentityPool {
    pub fn new(sequences: &[SequenceSample]) -> Self {
        let mut identities: Vec<usize> = sequences.iter().map(|s| s.identity).collect();
        identities.sort_unstable();
        identities.dedup();
        let mut by_class = vec![Vec::new(); identities.len()];
        for (i, s) in sequences.iter().enumerate() {
            let c = identities.binary_search(&s.identity).expect("collected above");
            by_class[c].push(i);
        }
        Self {
            identities,
            by_class,
            lengths: sequences.iter().map(|s| s.frames.len()).collect(),
        }
    }

    pub fn classes(&self) -> usize {
        self.identities.len()
    }

    /// Identity id of each class index.
    pub fn identities(&self) -> &[usize] {
        &self.identities
    }

    /// Draws a batch: `p` distinct identities, then for each `k` random
    /// fragments of `t` consecutive frames from random sequences of it.
    pub fn sample_batch<R: Rng + ?Sized>(&self, p: usize, k: usize, t: usize, rng: &mut R) -> Result<TrainBatch> {
        if p == 0 || k == 0 || t == 0 {
            return Err(Error::invalid("batch dimensions must be positive"));
        }
        if self.classes() < p {
            return Err(Error::invalid(format!(
                "need {p} identities per batch, the training split has {}",
                self.classes()
            )));
        }
        let mut classes = index::sample(rng, self.classes(), p).into_vec();
        classes.sort_unstable();
        let mut items = Vec::with_capacity(p * k);
        for c in classes {
            let seqs = &self.by_class[c];
            for _ in 0..k {
                let sequence = seqs[rng.random_range(0..seqs.len())];
                let len = self.lengths[sequence];
                if len == 0 {
                    return Err(Error::invalid(format!("training sequence {sequence} has no frames")));
                }
                let start = if len > t { rng.random_range(0..=len - t) } else { 0 };
                let frames = (start..start + t).map(|f| f.min(len - 1)).collect();
                items.push(BatchItem {
                    label: c,
                    identity: self.identities[c],
                    sequence,
                    frames,
                });
            }
        }
        Ok(TrainBatch { items })
    }
}
