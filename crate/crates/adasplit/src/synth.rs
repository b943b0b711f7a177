//! Synthetic multi-interest sequences with known latent partitions, and
//! normalized mutual information between the allocator's partition and the
//! planted one.
//!
//! Each user draws a subset of `K` interests; items are emitted by a Markov
//! process over those interests that stays put with probability
//! `1 - switch_prob` and otherwise jumps to a different drawn interest.
//! Items within an interest come uniformly from that interest's contiguous
//! id block, so the ground-truth label of an item id is `id /
//! items_per_interest`.

use std::fs;
use std::path::Path;

use crate::dataio::{DatasetStats, SequenceDataset};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug)]
pub struct SyntheticConfig {
    /// Planted interest count.
    pub num_interests: usize,
    pub items_per_interest: usize,
    pub num_users: usize,
    pub seq_len: usize,
    /// Probability that the next item comes from a different interest.
    pub switch_prob: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_interests: 3,
            items_per_interest: 30,
            num_users: 200,
            seq_len: 20,
            switch_prob: 0.2,
            seed: 42,
        }
    }
}

/// Latent interest label per user per position.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub labels: Vec<Vec<usize>>,
}

/// Generate sequences plus their generating labels.
pub fn generate(config: &SyntheticConfig) -> Result<(SequenceDataset, GroundTruth)> {
    if config.seq_len < 3 {
        return Err(Error::Config(format!(
            "seq_len must be >= 3, got {}",
            config.seq_len
        )));
    }
    if config.num_interests < 1 || config.items_per_interest < 1 || config.num_users < 1 {
        return Err(Error::Config("synthetic counts must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&config.switch_prob) {
        return Err(Error::Config(format!(
            "switch_prob must be in [0, 1], got {}",
            config.switch_prob
        )));
    }
    let k = config.num_interests;
    let catalog = k * config.items_per_interest;
    let mut rng = Rng::new(config.seed);
    let mut sequences = Vec::with_capacity(config.num_users);
    let mut times = Vec::with_capacity(config.num_users);
    let mut labels = Vec::with_capacity(config.num_users);
    for _ in 0..config.num_users {
        // each user draws a subset of interests; multi-interest users draw
        // at least two so the planted partition is non-trivial
        let m = if k == 1 { 1 } else { 2 + rng.below(k - 1) };
        let mut pool: Vec<usize> = (0..k).collect();
        rng.shuffle(&mut pool);
        let drawn = &pool[..m];

        let mut seq = Vec::with_capacity(config.seq_len);
        let mut lab = Vec::with_capacity(config.seq_len);
        let mut current = drawn[rng.below(m)];
        for _ in 0..config.seq_len {
            if m > 1 && rng.unit() < config.switch_prob {
                // jump to a different drawn interest
                let mut next = drawn[rng.below(m)];
                while next == current {
                    next = drawn[rng.below(m)];
                }
                current = next;
            }
            let item = current * config.items_per_interest + rng.below(config.items_per_interest);
            seq.push(item);
            lab.push(current);
        }
        times.push((0..config.seq_len as i64).collect());
        sequences.push(seq);
        labels.push(lab);
    }
    let interactions: usize = sequences.iter().map(Vec::len).sum();
    let density = 100.0 * interactions as f64 / (config.num_users as f64 * catalog as f64);
    let dataset = SequenceDataset {
        user_ids: (0..config.num_users).map(|u| format!("u{u}")).collect(),
        item_ids: (0..catalog).map(|i| format!("i{i}")).collect(),
        sequences,
        times,
        stats: DatasetStats {
            users: config.num_users,
            items: catalog,
            interactions,
            density_percent: density,
        },
    };
    Ok((dataset, GroundTruth { labels }))
}

/// Write the ground-truth labels sidecar next to the canonical dataset
/// files: one `user<TAB>position<TAB>label` line per interaction.
pub fn save_labels(truth: &GroundTruth, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut out = String::from("# adasplit-labels v1\n");
    for (u, labels) in truth.labels.iter().enumerate() {
        for (pos, label) in labels.iter().enumerate() {
            out.push_str(&format!("{u}\t{pos}\t{label}\n"));
        }
    }
    fs::write(dir.join("labels.tsv"), out)?;
    Ok(())
}

/// Normalized mutual information between two labelings of the same
/// positions, normalized by the arithmetic mean of the entropies. Label
/// values are opaque; the score is permutation-invariant and lies in
/// [0, 1]. Two trivial single-cluster labelings count as perfect
/// agreement.
pub fn partition_agreement(assignments: &[usize], labels: &[usize]) -> Result<f64> {
    if assignments.is_empty() || labels.is_empty() {
        return Err(Error::Config("partition agreement of empty labelings".into()));
    }
    if assignments.len() != labels.len() {
        return Err(Error::Config(format!(
            "labeling lengths differ: {} vs {}",
            assignments.len(),
            labels.len()
        )));
    }
    let n = assignments.len() as f64;
    let max_a = assignments.iter().max().unwrap() + 1;
    let max_b = labels.iter().max().unwrap() + 1;
    let mut joint = vec![0.0; max_a * max_b];
    let mut count_a = vec![0.0; max_a];
    let mut count_b = vec![0.0; max_b];
    for (&a, &b) in assignments.iter().zip(labels.iter()) {
        joint[a * max_b + b] += 1.0;
        count_a[a] += 1.0;
        count_b[b] += 1.0;
    }
    let entropy = |counts: &[f64]| -> f64 {
        counts
            .iter()
            .filter(|&&c| c > 0.0)
            .map(|&c| {
                let p = c / n;
                -p * p.ln()
            })
            .sum()
    };
    let h_a = entropy(&count_a);
    let h_b = entropy(&count_b);
    if h_a == 0.0 && h_b == 0.0 {
        return Ok(1.0);
    }
    if h_a == 0.0 || h_b == 0.0 {
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for a in 0..max_a {
        for b in 0..max_b {
            let c = joint[a * max_b + b];
            if c > 0.0 {
                let p_ab = c / n;
                mi += p_ab * (p_ab / ((count_a[a] / n) * (count_b[b] / n))).ln();
            }
        }
    }
    Ok((mi / ((h_a + h_b) / 2.0)).clamp(0.0, 1.0))
}
