use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ZslDataset;
use crate::error::{Error, Result};

/// One epoch of PK batches: each batch holds `P` distinct seen classes with
/// `K` training samples each. Samples are drawn without replacement within
/// the epoch until a class runs dry, after which its pool is reshuffled.
#[derive(Debug)]
pub struct PkBatches {
    rng: ChaCha8Rng,
    classes: Vec<usize>,
    pools: Vec<Vec<usize>>,
    queues: Vec<Vec<usize>>,
    class_queue: Vec<usize>,
    p: usize,
    k: usize,
    remaining: usize,
}

/// Batches over the training split. Seen classes with fewer than `K`
/// training samples are left out; fewer than `P` usable classes is an error.
pub fn pk_batches(ds: &ZslDataset, p: usize, k: usize, seed: u64) -> Result<PkBatches> {
    if p < 2 {
        return Err(Error::config("classes_per_batch", format!("P must be >= 2, got {p}")));
    }
    if k < 2 {
        return Err(Error::config("samples_per_class", format!("K must be >= 2, got {k}")));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &i in &ds.split.train_idx {
        by_class.entry(ds.labels[i]).or_default().push(i);
    }
    by_class.retain(|_, idx| idx.len() >= k);
    if by_class.len() < p {
        return Err(Error::config(
            "classes_per_batch",
            format!(
                "P={p} but only {} seen classes have >= K={k} training samples",
                by_class.len()
            ),
        ));
    }
    let total: usize = by_class.values().map(Vec::len).sum();
    let (classes, pools): (Vec<usize>, Vec<Vec<usize>>) = by_class.into_iter().unzip();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let queues = pools
        .iter()
        .map(|pool| {
            let mut q = pool.clone();
            q.shuffle(&mut rng);
            q
        })
        .collect();
    Ok(PkBatches {
        rng,
        classes,
        pools,
        queues,
        class_queue: Vec::new(),
        p,
        k,
        remaining: total.div_ceil(p * k),
    })
}

impl PkBatches {
    pub fn batch_size(&self) -> usize {
        self.p * self.k
    }

    fn next_classes(&mut self) -> Vec<usize> {
        let mut picked = Vec::with_capacity(self.p);
        while picked.len() < self.p {
            if self.class_queue.is_empty() {
                let mut order: Vec<usize> = (0..self.classes.len()).collect();
                order.shuffle(&mut self.rng);
                self.class_queue = order;
            }
            let c = self.class_queue.pop().expect("refilled");
            if !picked.contains(&c) {
                picked.push(c);
            }
        }
        picked
    }

    fn draw(&mut self, c: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.k);
        while out.len() < self.k {
            if self.queues[c].is_empty() {
                let mut fresh: Vec<usize> = self.pools[c].iter().copied().filter(|i| !out.contains(i)).collect();
                fresh.shuffle(&mut self.rng);
                self.queues[c] = fresh;
            }
            out.push(self.queues[c].pop().expect("pool holds >= K samples"));
        }
        out
    }
}

impl Iterator for PkBatches {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let picked = self.next_classes();
        Some(picked.into_iter().flat_map(|c| self.draw(c)).collect())
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining, Some(self.remaining))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_generate, SplitSpec, SynthConfig};
    use crate::tensor::Matrix;

    fn four_samples() -> ZslDataset {
        ZslDataset {
            features: Matrix::zeros(4, 2),
            labels: vec![0, 1, 0, 1],
            attributes: Matrix::zeros(2, 1),
            split: SplitSpec {
                seen_classes: vec![0, 1],
                unseen_classes: vec![],
                train_idx: vec![0, 1, 2, 3],
                ..SplitSpec::default()
            },
        }
    }

    #[test]
    fn exhaustive_single_batch() {
        let batches: Vec<_> = pk_batches(&four_samples(), 2, 2, 0).unwrap().collect();
        assert_eq!(batches.len(), 1);
        let mut b = batches[0].clone();
        b.sort();
        assert_eq!(b, vec![0, 1, 2, 3]);
    }

    #[test]
    fn batches_satisfy_mining_precondition() {
        let ds = synth_generate(&SynthConfig {
            samples_per_class: 30,
            ..SynthConfig::default()
        })
        .unwrap();
        let batches: Vec<_> = pk_batches(&ds, 8, 4, 3).unwrap().collect();
        assert!(!batches.is_empty());
        for b in &batches {
            assert_eq!(b.len(), 32);
            let mut counts = BTreeMap::new();
            for &i in b {
                assert!(ds.split.train_idx.contains(&i));
                *counts.entry(ds.labels[i]).or_insert(0) += 1;
            }
            assert_eq!(counts.len(), 8);
            assert!(counts.values().all(|&c| c == 4));
        }
    }

    #[test]
    fn deterministic_and_seed_dependent() {
        let ds = synth_generate(&SynthConfig {
            samples_per_class: 20,
            ..SynthConfig::default()
        })
        .unwrap();
        let a: Vec<_> = pk_batches(&ds, 4, 4, 1).unwrap().collect();
        let b: Vec<_> = pk_batches(&ds, 4, 4, 1).unwrap().collect();
        let c: Vec<_> = pk_batches(&ds, 4, 4, 2).unwrap().collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn infeasible_configurations() {
        let ds = four_samples();
        assert!(pk_batches(&ds, 1, 2, 0).is_err());
        assert!(pk_batches(&ds, 2, 1, 0).is_err());
        assert!(pk_batches(&ds, 3, 2, 0).is_err());
        assert!(pk_batches(&ds, 2, 3, 0).is_err());
    }
}
