use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::net::{backward, Segmenter};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensorio::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr0: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// Source-model defaults: lr 0.01, momentum 0.9.
    pub fn source(epochs: usize, batch_size: usize, seed: u64) -> Self {
        Self {
            lr0: 0.01,
            epochs,
            batch_size,
            momentum: 0.9,
            seed,
        }
    }

    /// Adaptation defaults: lr 0.001, momentum 0.9.
    pub fn adaptation(epochs: usize, batch_size: usize, seed: u64) -> Self {
        Self {
            lr0: 0.001,
            ..Self::source(epochs, batch_size, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!("lr0 must be > 0, got {}", self.lr0)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainSample<T> {
    pub id: String,
    pub image: Tensor<T>,
    pub target: Tensor<u8>,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: Segmenter<T>,
    pub trace: Vec<TraceRow>,
}

/// Polynomial decay with power 0.9.
pub fn lr_schedule(lr0: f64, step: usize, total_steps: usize) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::Config("total_steps must be >= 1".into()));
    }
    if step > total_steps {
        return Err(Error::Config(format!("step {step} beyond total {total_steps}")));
    }
    Ok(lr0 * (1.0 - step as f64 / total_steps as f64).powf(0.9))
}

/// Mini-batch SGD with momentum over seeded shuffles.
///
/// Per-sample gradients within a batch are summed in batch order, so the
/// result depends only on `(model, data, cfg)`.
pub fn train<T: Scalar>(
    model: &Segmenter<T>,
    data: &[TrainSample<T>],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut model = model.clone();
    let n = data.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let total = cfg.epochs * steps_per_epoch;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut velocity = vec![T::zero(); model.params().len()];
    let mut grad = vec![T::zero(); model.params().len()];
    let momentum = T::lit(cfg.momentum);
    let mut trace = Vec::with_capacity(total);
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let lr = lr_schedule(cfg.lr0, step, total)?;
            grad.fill(T::zero());
            let mut batch_loss = T::zero();
            for &i in batch {
                let s = &data[i];
                let (l, g) = backward(&model, &s.image, &s.target, T::lit(s.weight))
                    .map_err(|e| e.in_slice(&s.id))?;
                batch_loss += l;
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += *b;
                }
            }
            let inv = T::one() / T::from_usize_lossy(batch.len());
            batch_loss *= inv;
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    step,
                    loss: batch_loss.as_f64(),
                });
            }
            let lr_t = T::lit(lr);
            for ((p, v), g) in model.params_mut().iter_mut().zip(&mut velocity).zip(&grad) {
                *v = momentum * *v + *g * inv;
                *p -= lr_t * *v;
            }
            trace.push(TraceRow {
                step,
                epoch,
                lr,
                loss: batch_loss.as_f64(),
            });
            step += 1;
        }
    }
    if let Some(i) = model.params().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "trained weights".into(),
            index: i,
        });
    }
    Ok(TrainOutcome { model, trace })
}

pub fn write_trace_csv(path: impl AsRef<Path>, trace: &[TraceRow]) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in trace {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints_and_midpoint() {
        assert_eq!(lr_schedule(0.01, 0, 100).unwrap(), 0.01);
        assert_eq!(lr_schedule(0.01, 100, 100).unwrap(), 0.0);
        let mid = lr_schedule(1.0, 50, 100).unwrap();
        assert!((mid - 0.5f64.powf(0.9)).abs() < 1e-15);
        assert!((mid - 0.53589).abs() < 1e-5);
        assert!(lr_schedule(0.01, 0, 0).is_err());
    }

    fn disc_sample() -> TrainSample<f32> {
        let (h, w) = (8, 8);
        let target = Tensor::from_fn(vec![h, w], |i| {
            let (y, x) = ((i / w) as f32 - 3.5, (i % w) as f32 - 3.5);
            (y * y + x * x < 7.0) as u8
        })
        .unwrap();
        let image = target.map(|&t| if t == 1 { 0.8f32 } else { 0.2 });
        TrainSample {
            id: "s".into(),
            image,
            target,
            weight: 1.0,
        }
    }

    #[test]
    fn single_sample_loss_decreases() {
        let m = Segmenter::<f32>::init(2, 3).unwrap();
        let cfg = TrainConfig {
            lr0: 0.05,
            epochs: 200,
            batch_size: 1,
            momentum: 0.9,
            seed: 1,
        };
        let out = train(&m, &[disc_sample()], &cfg).unwrap();
        assert_eq!(out.trace.len(), 200);
        assert!(out.trace.last().unwrap().loss < out.trace[0].loss);
    }

    #[test]
    fn training_is_deterministic() {
        let m = Segmenter::<f32>::init(2, 3).unwrap();
        let data = vec![disc_sample(), disc_sample(), disc_sample()];
        let cfg = TrainConfig::source(3, 2, 7);
        let a = train(&m, &data, &cfg).unwrap();
        let b = train(&m, &data, &cfg).unwrap();
        assert_eq!(a.trace.len(), 3 * 2);
        let bits = |m: &Segmenter<f32>| m.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.model), bits(&b.model));
    }

    #[test]
    fn invalid_configs_rejected() {
        let m = Segmenter::<f32>::zeros(2).unwrap();
        let mut cfg = TrainConfig::source(0, 1, 0);
        assert!(train(&m, &[disc_sample()], &cfg).is_err());
        cfg.epochs = 1;
        assert!(train(&m, &[], &cfg).is_err());
        cfg.lr0 = 0.0;
        assert!(train(&m, &[disc_sample()], &cfg).is_err());
    }

    #[test]
    fn divergence_reports_step() {
        let m = Segmenter::<f32>::init(2, 3).unwrap();
        let cfg = TrainConfig {
            lr0: 1e30,
            epochs: 20,
            batch_size: 1,
            momentum: 0.9,
            seed: 1,
        };
        match train(&m, &[disc_sample()], &cfg) {
            Err(Error::Diverged { .. }) | Err(Error::NonFinite { .. }) | Err(Error::Slice { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
