//! Joint two-exit training with AdamW and a cosine schedule.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use wisense_csi::{derive_seed, RadioImage};
use wisense_tensor::{Element, Gradients, Graph, Tensor, TensorError, Var};

use crate::augment::{augment, AugmentConfig};
use crate::error::{CoreError, Result};
use crate::model::{images_to_tensor, BranchyModel};
use crate::params::ParamStore;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub test_batch: usize,
    pub base_lr: f64,
    pub min_lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub adam_eps: f64,
    /// Weights of the occupancy and activity terms.
    pub loss_weights: (f64, f64),
    pub seed: u64,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 400,
            batch_size: 50,
            test_batch: 1,
            base_lr: 1e-3,
            min_lr: 1e-5,
            weight_decay: 0.05,
            betas: (0.9, 0.999),
            adam_eps: 1e-8,
            loss_weights: (1.0, 1.0),
            seed: 0,
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.test_batch == 0 {
            return Err(CoreError::Config("epochs and batch sizes must be at least 1".into()));
        }
        if !(self.base_lr >= 0.0) || !(self.min_lr >= 0.0) || self.min_lr > self.base_lr {
            return Err(CoreError::Config(format!(
                "need 0 <= min_lr <= base_lr (base {}, min {})",
                self.base_lr, self.min_lr
            )));
        }
        let (b1, b2) = self.betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) || !(self.adam_eps > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(CoreError::Config("betas must be in [0, 1), eps > 0, weight decay >= 0".into()));
        }
        self.augment.validate()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub rod_ce: f64,
    pub har_ce: f64,
    pub total: f64,
}

/// Weighted sum of occupancy cross-entropy and activity cross-entropy over
/// the samples carrying an activity label.
pub fn joint_loss<T: Element>(
    g: &mut Graph<'_, T>,
    rod_logits: Var,
    har_logits: Var,
    rod_labels: &[Option<usize>],
    har_labels: &[Option<usize>],
    weights: (f64, f64),
) -> Result<(Var, LossReport)> {
    let rod = g.cross_entropy(rod_logits, rod_labels)?;
    let har = g.cross_entropy(har_logits, har_labels)?;
    let a = g.scale(rod, weights.0)?;
    let b = g.scale(har, weights.1)?;
    let total = g.add(a, b)?;
    let item = |g: &Graph<'_, T>, v| g.value(v).item().map(|x| x.to_f64());
    let report = LossReport {
        rod_ce: item(g, rod)?,
        har_ce: item(g, har)?,
        total: item(g, total)?,
    };
    Ok((total, report))
}

/// `min + ½(base − min)(1 + cos(π·epoch/total))`.
pub fn cosine_lr(epoch: usize, total: usize, base: f64, min: f64) -> f64 {
    if total == 0 {
        return base;
    }
    let t = epoch.min(total) as f64 / total as f64;
    min + 0.5 * (base - min) * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Adam moments with weight decay applied directly to the parameters.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(betas: (f64, f64), eps: f64, weight_decay: f64) -> Self {
        AdamW {
            betas,
            eps,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// First and second moments of parameter `id`, if allocated.
    pub fn moments(&self, id: usize) -> Option<(&[f64], &[f64])> {
        Some((self.m.get(id)?.as_slice(), self.v.get(id)?.as_slice()))
    }

    /// One update; parameters without a gradient are treated as having a
    /// zero gradient.
    pub fn step<T: Element>(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>, lr: f64) {
        if self.m.len() != store.len() {
            self.m = store.params().iter().map(|e| vec![0.0; e.tensor.numel()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let (b1, b2) = self.betas;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let decay = 1.0 - lr * self.weight_decay;
        for (id, entry) in store.params_mut().enumerate() {
            let g = grads.param(id).map(Tensor::data);
            let (m, v) = (&mut self.m[id], &mut self.v[id]);
            for (i, p) in entry.tensor.data_mut().iter_mut().enumerate() {
                let gi = g.map_or(0.0, |g| g[i].to_f64());
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let update = (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
                *p = T::from_f64(p.to_f64() * decay - lr * update);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub lr: f64,
    pub loss: LossReport,
    /// Training accuracy of each head over the samples it has labels for.
    pub rod_accuracy: f64,
    pub har_accuracy: Option<f64>,
}

fn labels(batch: &[&RadioImage]) -> (Vec<Option<usize>>, Vec<Option<usize>>) {
    (
        batch.iter().map(|i| i.rod.map(|r| r.index())).collect(),
        batch.iter().map(|i| i.har.map(|h| h.index())).collect(),
    )
}

fn correct<T: Element>(logits: &Tensor<T>, labels: &[Option<usize>]) -> (usize, usize) {
    let k = logits.shape()[1];
    let mut hit = (0, 0);
    for (row, label) in logits.data().chunks(k).zip(labels) {
        if let Some(l) = label {
            hit.1 += 1;
            if wisense_tensor::ops::argmax(row) == *l {
                hit.0 += 1;
            }
        }
    }
    hit
}

/// Trains `model` in place; `on_epoch` sees every epoch's report as it
/// completes.
pub fn train<T: Element>(
    model: &mut BranchyModel<T>,
    data: &[RadioImage],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<Vec<EpochReport>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(CoreError::Param("training set is empty".into()));
    }
    if data.iter().all(|i| i.rod.is_none()) {
        return Err(CoreError::Param("training set carries no occupancy labels".into()));
    }
    let mut opt = AdamW::new(cfg.betas, cfg.adam_eps, cfg.weight_decay);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg.epochs, cfg.base_lr, cfg.min_lr);
        let epoch_seed = derive_seed(cfg.seed, epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));

        let mut sums = LossReport::default();
        let (mut rod_hit, mut har_hit) = ((0, 0), (0, 0));
        let batches = order.chunks(cfg.batch_size);
        let n_batches = batches.len();
        for (bi, idx) in batches.enumerate() {
            let images = idx
                .iter()
                .map(|&i| augment(&data[i], &cfg.augment, derive_seed(epoch_seed, i as u64)))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&RadioImage> = images.iter().collect();
            let (rod_l, har_l) = labels(&refs);
            let x = images_to_tensor::<T>(&refs)?;

            let (grads, updates, report) = {
                let mut g = Graph::new();
                let xv = g.input(x);
                let diverged = CoreError::Diverged { epoch, batch: bi, lr };
                let (loss, rod, har, report) = match model
                    .forward_full(&mut g, xv, true)
                    .and_then(|(rod, har)| {
                        let (loss, report) = joint_loss(&mut g, rod, har, &rod_l, &har_l, cfg.loss_weights)?;
                        Ok((loss, rod, har, report))
                    }) {
                    Err(CoreError::Tensor(TensorError::NonFinite { .. })) => return Err(diverged),
                    Err(e) => return Err(e),
                    Ok(r) if !r.3.total.is_finite() => return Err(diverged),
                    Ok(r) => r,
                };
                let r = correct(g.value(rod), &rod_l);
                let h = correct(g.value(har), &har_l);
                rod_hit = (rod_hit.0 + r.0, rod_hit.1 + r.1);
                har_hit = (har_hit.0 + h.0, har_hit.1 + h.1);
                (g.backward(loss)?, g.take_bn_updates(), report)
            };
            model.apply_bn_updates(&updates);
            opt.step(model.store_mut(), &grads, lr);
            sums.rod_ce += report.rod_ce;
            sums.har_ce += report.har_ce;
            sums.total += report.total;
        }
        let n = n_batches as f64;
        let rep = EpochReport {
            epoch,
            lr,
            loss: LossReport {
                rod_ce: sums.rod_ce / n,
                har_ce: sums.har_ce / n,
                total: sums.total / n,
            },
            rod_accuracy: rod_hit.0 as f64 / rod_hit.1.max(1) as f64,
            har_accuracy: (har_hit.1 > 0).then(|| har_hit.0 as f64 / har_hit.1 as f64),
        };
        log::info!(
            "epoch {epoch}: lr {lr:.2e} loss {:.4} rod acc {:.3}",
            rep.loss.total,
            rep.rod_accuracy
        );
        on_epoch(&rep);
        history.push(rep);
    }
    Ok(history)
}
