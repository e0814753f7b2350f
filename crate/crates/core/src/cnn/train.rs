//! Mini-batch training with Adam-style moment updates.
//!
//! Deterministic given the seed: batch order comes from a seeded
//! shuffle, per-sample gradients are computed in parallel but reduced in
//! index order, and the returned model carries the weights of the epoch
//! with the lowest validation loss.

use rayon::prelude::*;

use super::{loss, CnnModel, LayerGrads};
use crate::error::{Error, Result};
use crate::image::ComplexImage;
use crate::rng::Rng;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub lambda_gdl: f64,
    /// epochs without validation improvement before stopping early
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 16,
            epochs: 30,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            lambda_gdl: 1.0,
            patience: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // learning rate 0 is allowed (a no-op optimizer is well defined)
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::InvalidParameter("learning rate must be >= 0".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidParameter(
                "batch size and epochs must be >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidParameter("betas must lie in [0, 1)".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParameter("epsilon must be > 0".into()));
        }
        if self.lambda_gdl < 0.0 {
            return Err(Error::InvalidParameter("lambda_gdl must be >= 0".into()));
        }
        Ok(())
    }
}

/// One normalized (input, target) frame pair.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub input: ComplexImage,
    pub target: ComplexImage,
}

#[derive(Clone, Copy, Debug)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: usize,
}

impl AdamState {
    fn new(model: &CnnModel) -> Self {
        let shapes: Vec<usize> = model
            .layers()
            .iter()
            .flat_map(|l| [l.weights.len(), l.bias.len()])
            .collect();
        Self {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut CnnModel, grads: &[LayerGrads], cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        let mut slot = 0;
        for (layer, g) in model.layers_mut().iter_mut().zip(grads) {
            for (params, grad) in [
                (&mut layer.weights, &g.weights),
                (&mut layer.bias, &g.bias),
            ] {
                let m = &mut self.m[slot];
                let v = &mut self.v[slot];
                for i in 0..params.len() {
                    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
                    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
                    let mh = m[i] / bc1;
                    let vh = v[i] / bc2;
                    params[i] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.epsilon);
                }
                slot += 1;
            }
        }
    }
}

impl CnnModel {
    pub(crate) fn layers_mut(&mut self) -> &mut [super::ConvLayer] {
        &mut self.layers
    }
}

fn mean_loss(model: &CnnModel, set: &[TrainSample], lambda_gdl: f64) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Data("empty evaluation set".into()));
    }
    let losses: Vec<Result<f64>> = set
        .par_iter()
        .map(|s| {
            let pred = model.forward(&s.input)?;
            loss::loss(
                &super::image_to_tensor(&pred),
                &super::image_to_tensor(&s.target),
                lambda_gdl,
            )
        })
        .collect();
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / set.len() as f64)
}

/// Train the model; returns the weights with the best validation loss
/// together with the per-epoch loss log.
pub fn train(
    model: &CnnModel,
    train_set: &[TrainSample],
    val_set: &[TrainSample],
    cfg: &TrainConfig,
) -> Result<(CnnModel, Vec<EpochLog>)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    if val_set.is_empty() {
        return Err(Error::Data("empty validation set".into()));
    }

    let mut current = model.clone();
    let mut adam = AdamState::new(&current);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, CnnModel)> = None;
    let mut since_improvement = 0usize;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = Rng::stream(cfg.seed, epoch as u64);
        rng.shuffle(&mut order);

        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            // per-sample gradients in parallel, reduced in batch order
            let results: Vec<Result<(f64, Vec<LayerGrads>)>> = batch
                .par_iter()
                .map(|&i| {
                    let s = &train_set[i];
                    current.backward(&s.input, &s.target, cfg.lambda_gdl)
                })
                .collect();
            let mut batch_loss = 0.0;
            let mut acc: Option<Vec<LayerGrads>> = None;
            for r in results {
                let (l, g) = r?;
                batch_loss += l;
                match acc.as_mut() {
                    None => acc = Some(g),
                    Some(total) => {
                        for (t, gi) in total.iter_mut().zip(&g) {
                            for (a, b) in t.weights.iter_mut().zip(&gi.weights) {
                                *a += b;
                            }
                            for (a, b) in t.bias.iter_mut().zip(&gi.bias) {
                                *a += b;
                            }
                        }
                    }
                }
            }
            let mut grads = acc.expect("non-empty batch");
            let inv = 1.0 / batch.len() as f64;
            for g in grads.iter_mut() {
                g.weights.iter_mut().for_each(|v| *v *= inv);
                g.bias.iter_mut().for_each(|v| *v *= inv);
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss at epoch {epoch}"
                )));
            }
            epoch_loss += batch_loss;
            adam.step(&mut current, &grads, cfg);
        }
        let train_loss = epoch_loss / train_set.len() as f64;
        let val_loss = mean_loss(&current, val_set, cfg.lambda_gdl)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!("validation loss at epoch {epoch}")));
        }
        log.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
        });

        let improved = best.as_ref().map_or(true, |(b, _)| val_loss < *b);
        if improved {
            best = Some((val_loss, current.clone()));
            since_improvement = 0;
        } else {
            since_improvement += 1;
            if since_improvement >= cfg.patience {
                break;
            }
        }
    }
    let (_, best_model) = best.expect("at least one epoch ran");
    Ok((best_model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn random_image(n: usize, seed: u64) -> ComplexImage {
        let mut rng = Rng::new(seed);
        ComplexImage::from_fn(n, n, |_, _| {
            Complex64::new(rng.normal(0.0, 0.5), rng.normal(0.0, 0.5))
        })
    }

    /// Tiny synthetic task: input is the target with a fixed smoothing
    /// artifact, so the stack has something learnable.
    fn toy_set(count: usize, seed: u64) -> Vec<TrainSample> {
        (0..count)
            .map(|i| {
                let target = random_image(12, seed + i as u64);
                let n = target.height();
                let input = ComplexImage::from_fn(n, n, |r, c| {
                    let mut acc = Complex64::new(0.0, 0.0);
                    let mut count = 0.0;
                    for dr in -1i32..=1 {
                        for dc in -1i32..=1 {
                            let rr = r as i32 + dr;
                            let cc = c as i32 + dc;
                            if rr >= 0 && rr < n as i32 && cc >= 0 && cc < n as i32 {
                                acc += target.get(rr as usize, cc as usize);
                                count += 1.0;
                            }
                        }
                    }
                    acc / count
                });
                TrainSample { input, target }
            })
            .collect()
    }

    #[test]
    fn short_training_reduces_loss() {
        let train_set = toy_set(50, 100);
        let val_set = toy_set(8, 900);
        let mut rng = Rng::new(1);
        let model = CnnModel::standard(&mut rng);
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let (_, log) = train(&model, &train_set, &val_set, &cfg).unwrap();
        assert!(log.len() >= 2);
        assert!(
            log.last().unwrap().train_loss < log[0].train_loss,
            "loss did not decrease: {:?}",
            log
        );
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let train_set = toy_set(8, 200);
        let val_set = toy_set(4, 300);
        let mut rng = Rng::new(2);
        let model = CnnModel::standard(&mut rng);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 2,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let (trained, _) = train(&model, &train_set, &val_set, &cfg).unwrap();
        for (a, b) in model.layers().iter().zip(trained.layers()) {
            assert_eq!(a.weights, b.weights);
            assert_eq!(a.bias, b.bias);
        }
    }

    #[test]
    fn same_seed_same_curves_and_weights() {
        let train_set = toy_set(16, 400);
        let val_set = toy_set(4, 500);
        let mut rng = Rng::new(3);
        let model = CnnModel::standard(&mut rng);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            seed: 7,
            ..TrainConfig::default()
        };
        let (m1, log1) = train(&model, &train_set, &val_set, &cfg).unwrap();
        let (m2, log2) = train(&model, &train_set, &val_set, &cfg).unwrap();
        for (a, b) in log1.iter().zip(&log2) {
            assert_eq!(a.train_loss.to_bits(), b.train_loss.to_bits());
            assert_eq!(a.val_loss.to_bits(), b.val_loss.to_bits());
        }
        for (a, b) in m1.layers().iter().zip(m2.layers()) {
            assert_eq!(a.weights, b.weights);
            assert_eq!(a.bias, b.bias);
        }
    }

    #[test]
    fn empty_sets_rejected() {
        let model = CnnModel::zeros();
        let set = toy_set(4, 600);
        assert!(train(&model, &[], &set, &TrainConfig::default()).is_err());
        assert!(train(&model, &set, &[], &TrainConfig::default()).is_err());
    }

    #[test]
    fn config_validation() {
        let bad_lr = TrainConfig { learning_rate: -1.0, ..TrainConfig::default() };
        assert!(bad_lr.validate().is_err());
        let bad_batch = TrainConfig { batch_size: 0, ..TrainConfig::default() };
        assert!(bad_batch.validate().is_err());
        let ok_zero_lr = TrainConfig { learning_rate: 0.0, ..TrainConfig::default() };
        assert!(ok_zero_lr.validate().is_ok());
    }
}
