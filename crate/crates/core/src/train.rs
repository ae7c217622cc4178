//! Early-stopped Adam training shared by the translation model, the
//! language model and fusion tuning.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{AdamConfig, AdamState, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSpec {
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub validation_interval: usize,
    pub patience: usize,
    pub max_updates: usize,
    /// Stop after this many passes over the data.
    pub max_epochs: Option<usize>,
    pub freeze_mask: Vec<String>,
    /// Global gradient-norm clipping threshold.
    pub clip_norm: Option<f64>,
    /// Restore the best validated checkpoint at the end. When false the
    /// final parameters are kept.
    pub keep_best: bool,
    pub seed: u64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            batch_size: 32,
            adam: AdamConfig::default(),
            validation_interval: 100,
            patience: 10,
            max_updates: 2000,
            max_epochs: None,
            freeze_mask: Vec::new(),
            clip_norm: Some(5.0),
            keep_best: true,
            seed: 1,
        }
    }
}

impl TrainSpec {
    pub fn validate(&self, groups: &[&str]) -> Result<()> {
        if self.batch_size == 0 || self.validation_interval == 0 {
            return Err(Error::Config("batch_size and validation_interval must be positive".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if let Some(g) = self.freeze_mask.iter().find(|g| !groups.contains(&g.as_str())) {
            return Err(Error::Config(format!("unknown parameter group {g:?} in freeze mask; known: {groups:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationPoint {
    pub update: usize,
    pub dev_loss: f64,
    /// Mean training loss since the previous validation (NaN at update 0).
    pub train_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub points: Vec<ValidationPoint>,
    pub updates: usize,
    pub epochs: usize,
    pub best_update: usize,
    pub best_dev_loss: f64,
    pub stopped_early: bool,
}

/// A model that can be trained by [`run`].
pub trait Objective {
    type Item;

    fn stores(&self) -> Vec<&ParamStore>;
    fn stores_mut(&mut self) -> Vec<&mut ParamStore>;
    /// Forward and backward over one batch; adds gradients of the batch
    /// loss to the stores and returns the loss.
    fn accumulate(&mut self, batch: &[&Self::Item]) -> Result<f64>;
    /// Loss on held-out items, without gradients.
    fn evaluate(&self, items: &[Self::Item]) -> Result<f64>;
    fn length(item: &Self::Item) -> usize;
}

/// Groups item indices into batches of similar length: items are shuffled,
/// cut into pools of ten batches, sorted by length within each pool, split,
/// and the resulting batches shuffled again.
pub fn length_buckets<R: rand::Rng>(lengths: &[usize], batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.shuffle(rng);
    let mut batches = Vec::new();
    for pool in order.chunks(batch_size * 10) {
        let mut pool = pool.to_vec();
        pool.sort_by_key(|&i| lengths[i]);
        batches.extend(pool.chunks(batch_size).map(<[usize]>::to_vec));
    }
    batches.shuffle(rng);
    batches
}

/// Trains `obj` on `train` with early stopping on `dev`. Freezing is taken
/// from `requires_grad` on the stores, which the caller sets up.
pub fn run<O: Objective>(obj: &mut O, train: &[O::Item], dev: &[O::Item], spec: &TrainSpec) -> Result<History> {
    if train.is_empty() || dev.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut optims: Vec<AdamState> = obj.stores().into_iter().map(|s| AdamState::new(spec.adam, s)).collect();
    let mut rng = rng::rng(spec.seed);
    let lengths: Vec<usize> = train.iter().map(O::length).collect();

    let dev0 = obj.evaluate(dev)?;
    let mut history = History {
        points: vec![ValidationPoint {
            update: 0,
            dev_loss: dev0,
            train_loss: f64::NAN,
        }],
        updates: 0,
        epochs: 0,
        best_update: 0,
        best_dev_loss: dev0,
        stopped_early: false,
    };
    let mut best: Vec<ParamStore> = obj.stores().into_iter().cloned().collect();
    let mut bad = 0usize;
    let (mut run_loss, mut run_n) = (0.0, 0usize);

    'outer: while history.updates < spec.max_updates && spec.max_epochs.is_none_or(|m| history.epochs < m) {
        for batch in length_buckets(&lengths, spec.batch_size, &mut rng) {
            for s in obj.stores_mut() {
                s.zero_grad();
            }
            let items: Vec<&O::Item> = batch.iter().map(|&i| &train[i]).collect();
            let loss = obj.accumulate(&items)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    update: history.updates + 1,
                    loss,
                });
            }
            if let Some(max) = spec.clip_norm {
                let norm = obj.stores().iter().map(|s| s.grad_sq_norm()).sum::<f64>().sqrt();
                if norm > max {
                    for s in obj.stores_mut() {
                        s.scale_grads(max / norm);
                    }
                }
            }
            for (s, o) in obj.stores_mut().into_iter().zip(&mut optims) {
                o.step(s)?;
            }
            history.updates += 1;
            run_loss += loss;
            run_n += 1;

            if history.updates % spec.validation_interval == 0 {
                let dev_loss = obj.evaluate(dev)?;
                history.points.push(ValidationPoint {
                    update: history.updates,
                    dev_loss,
                    train_loss: run_loss / run_n as f64,
                });
                (run_loss, run_n) = (0.0, 0);
                if dev_loss < history.best_dev_loss {
                    history.best_dev_loss = dev_loss;
                    history.best_update = history.updates;
                    best = obj.stores().into_iter().cloned().collect();
                    bad = 0;
                } else {
                    bad += 1;
                    if bad >= spec.patience {
                        history.stopped_early = true;
                        break 'outer;
                    }
                }
            }
            if history.updates >= spec.max_updates {
                break 'outer;
            }
        }
        history.epochs += 1;
    }

    if spec.keep_best {
        for (s, b) in obj.stores_mut().into_iter().zip(&best) {
            for (p, q) in s.iter_mut().zip(b.iter()) {
                p.value = q.value.clone();
            }
        }
    }
    for s in obj.stores_mut() {
        s.zero_grad();
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Graph, Tensor};

    /// Least squares fit of y = w·x.
    struct Line {
        store: ParamStore,
    }

    impl Objective for Line {
        type Item = (f64, f64);

        fn stores(&self) -> Vec<&ParamStore> {
            vec![&self.store]
        }

        fn stores_mut(&mut self) -> Vec<&mut ParamStore> {
            vec![&mut self.store]
        }

        fn accumulate(&mut self, batch: &[&(f64, f64)]) -> Result<f64> {
            let mut g = Graph::new();
            let b = self.store.bind(&mut g);
            let w = b.get(crate::tensor::ParamId(0));
            let xs = g.constant(Tensor::new(vec![batch.len(), 1], batch.iter().map(|p| p.0).collect())?);
            let ys = g.constant(Tensor::new(vec![batch.len(), 1], batch.iter().map(|p| p.1).collect())?);
            let pred = g.matmul(xs, w)?;
            let d = g.sub(pred, ys)?;
            let sq = g.mul(d, d)?;
            let loss = g.mean(sq);
            let mut grads = g.backward(loss)?;
            self.store.accumulate(&b, &mut grads);
            Ok(g.value(loss).item())
        }

        fn evaluate(&self, items: &[(f64, f64)]) -> Result<f64> {
            let w = self.store.iter().next().unwrap().value.item();
            Ok(items.iter().map(|(x, y)| (w * x - y).powi(2)).sum::<f64>() / items.len() as f64)
        }

        fn length(_: &(f64, f64)) -> usize {
            1
        }
    }

    fn line() -> Line {
        let mut store = ParamStore::new();
        store.add("w", "all", Tensor::zeros(&[1, 1]));
        Line { store }
    }

    fn data() -> Vec<(f64, f64)> {
        (0..20).map(|i| (i as f64 / 10.0, 3.0 * i as f64 / 10.0)).collect()
    }

    #[test]
    fn fits_and_keeps_history_bounded() {
        let mut m = line();
        let spec = TrainSpec {
            batch_size: 4,
            adam: AdamConfig { lr: 0.05, ..AdamConfig::default() },
            validation_interval: 10,
            max_updates: 300,
            patience: 100,
            ..TrainSpec::default()
        };
        let h = run(&mut m, &data(), &data(), &spec).unwrap();
        assert!(h.best_dev_loss < 1e-3, "{h:?}");
        assert!(h.points.len() <= spec.max_updates / spec.validation_interval + 1);
        assert!(h.points.iter().all(|p| h.best_dev_loss <= p.dev_loss));
    }

    #[test]
    fn frozen_store_is_untouched() {
        let mut m = line();
        m.store.set_requires_grad(false);
        let before = m.store.checksum(None);
        run(&mut m, &data(), &data(), &TrainSpec { max_updates: 20, ..TrainSpec::default() }).unwrap();
        assert_eq!(before, m.store.checksum(None));
    }

    #[test]
    fn divergence_is_reported() {
        let mut m = line();
        let bad = vec![(f64::NAN, 1.0)];
        let err = run(&mut m, &bad, &data(), &TrainSpec::default()).unwrap_err();
        assert!(matches!(err, Error::Diverged { update: 1, .. }));
    }

    #[test]
    fn buckets_cover_every_item_once() {
        let lengths: Vec<usize> = (0..53).map(|i| (i * 7) % 11).collect();
        let mut r = rng::rng(3);
        let mut seen: Vec<usize> = length_buckets(&lengths, 5, &mut r).concat();
        seen.sort();
        assert_eq!(seen, (0..53).collect::<Vec<_>>());
    }

    #[test]
    fn validate_rejects_unknown_group() {
        let spec = TrainSpec {
            freeze_mask: vec!["nope".into()],
            ..TrainSpec::default()
        };
        assert!(spec.validate(&["encoder"]).is_err());
        assert!(TrainSpec { patience: 0, ..TrainSpec::default() }.validate(&[]).is_err());
    }
}
