use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Draws example indices with probability inversely proportional to the
/// frequency of their class, so every class is drawn equally often.
#[derive(Debug, Clone)]
pub struct InverseFrequencySampler {
    labels: Vec<usize>,
    counts: BTreeMap<usize, usize>,
    index: WeightedIndex<f64>,
    rng: ChaCha8Rng,
}

impl InverseFrequencySampler {
    pub fn new(labels: &[usize], seed: u64) -> Result<Self> {
        let mut counts = BTreeMap::new();
        for &label in labels {
            *counts.entry(label).or_insert(0usize) += 1;
        }
        if counts.len() < 2 {
            return Err(Error::Config(format!(
                "inverse-frequency sampling needs at least two classes, found {}",
                counts.len()
            )));
        }
        let weights: Vec<f64> = labels.iter().map(|l| 1.0 / counts[l] as f64).collect();
        let index = WeightedIndex::new(&weights).map_err(|e| Error::Config(e.to_string()))?;
        Ok(Self {
            labels: labels.to_vec(),
            counts,
            index,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Probability that a draw belongs to `class`.
    pub fn class_probability(&self, class: usize) -> f64 {
        if self.counts.contains_key(&class) {
            1.0 / self.counts.len() as f64
        } else {
            0.0
        }
    }

    pub fn label(&self, index: usize) -> usize {
        self.labels[index]
    }

    pub fn draw(&mut self) -> usize {
        self.index.sample(&mut self.rng)
    }

    pub fn draws(&mut self, n: usize) -> Vec<usize> {
        (0..n).map(|_| self.draw()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skewed_labels_balance_out() {
        let labels: Vec<usize> = (0..100).map(|i| usize::from(i < 10)).collect();
        let mut sampler = InverseFrequencySampler::new(&labels, 11).unwrap();
        let n = 100_000;
        let positives = sampler.draws(n).into_iter().filter(|&i| labels[i] == 1).count();
        let fraction = positives as f64 / n as f64;
        assert!((fraction - 0.5).abs() < 0.01, "fraction {fraction}");
        assert_eq!(sampler.class_probability(1), 0.5);
    }

    #[test]
    fn balanced_labels_sample_uniformly() {
        let labels = [0, 1, 0, 1];
        let sampler = InverseFrequencySampler::new(&labels, 0).unwrap();
        let weights: Vec<f64> = labels.iter().map(|l| 1.0 / sampler.counts[l] as f64).collect();
        assert!(weights.iter().all(|&w| w == weights[0]));
    }

    #[test]
    fn single_class_is_config_error() {
        assert!(matches!(InverseFrequencySampler::new(&[1, 1, 1], 0), Err(Error::Config(_))));
    }

    #[test]
    fn stream_is_deterministic() {
        let labels = [0, 0, 0, 1];
        let a = InverseFrequencySampler::new(&labels, 5).unwrap().draws(50);
        let b = InverseFrequencySampler::new(&labels, 5).unwrap().draws(50);
        assert_eq!(a, b);
    }
}
