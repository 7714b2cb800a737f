//! Adam, early stopping and the mini-batch training loop.

use rand::seq::SliceRandom;
use serde::Serialize;

use super::{weighted_bce, Cnn, CnnConfig, CnnError, CnnParameters, Mode};
use crate::metrics::{self, ConfusionMatrix, MetricsSummary};
use crate::rng;

/// Bias-corrected Adam over a flat parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(cfg: &CnnConfig, n_params: usize) -> Self {
        Self {
            learning_rate: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let t = self.t as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Patience counter on the validation loss. An epoch improves only when its
/// loss is strictly below the best so far.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best_loss: f64,
    pub best_epoch: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best_loss: f64::INFINITY,
            best_epoch: 0,
        }
    }

    /// Epochs are 1-based.
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        if val_loss < self.best_loss {
            self.best_loss = val_loss;
            self.best_epoch = epoch;
            StopDecision::Improved
        } else if epoch - self.best_epoch >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_epoch: usize,
    pub stopped_early: bool,
    pub val_confusion: ConfusionMatrix,
    pub val_metrics: MetricsSummary,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, e.val_loss));
        }
        out
    }
}

/// Trains from a seeded Glorot initialization and returns the parameters of
/// the epoch with the lowest validation loss.
///
/// Each epoch shuffles the training rows, runs mini-batch Adam with dropout,
/// then scores the validation rows in eval mode. Training stops once
/// `patience` epochs pass without a strict improvement, or at `max_epochs`.
pub fn train(
    cfg: &CnnConfig,
    train_x: &[Vec<f64>],
    train_y: &[u8],
    val_x: &[Vec<f64>],
    val_y: &[u8],
) -> Result<(CnnParameters, TrainReport), CnnError> {
    if train_x.is_empty() || val_x.is_empty() {
        return Err(CnnError::InvalidConfig("empty train or validation set".into()));
    }
    if train_x.len() != train_y.len() || val_x.len() != val_y.len() {
        return Err(CnnError::ShapeMismatch("features and labels differ in length".into()));
    }
    if cfg.batch_size == 0 || cfg.max_epochs == 0 {
        return Err(CnnError::InvalidConfig("batch_size and max_epochs must be positive".into()));
    }
    let net = Cnn::new(cfg)?;
    let mut params = net.init_params(&mut rng::substream(cfg.seed, rng::streams::CNN_INIT));
    let mut shuffle_rng = rng::substream(cfg.seed, rng::streams::CNN_SHUFFLE);
    let mut dropout_rng = rng::substream(cfg.seed, rng::streams::CNN_DROPOUT);
    let mut adam = Adam::new(cfg, params.len());
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = params.clone();
    let mut epochs = Vec::new();
    let mut order: Vec<usize> = (0..train_x.len()).collect();
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let bx: Vec<Vec<f64>> = idx.iter().map(|&i| train_x[i].clone()).collect();
            let by: Vec<u8> = idx.iter().map(|&i| train_y[i]).collect();
            let diverged = || CnnError::NonFiniteActivation { epoch, batch: b };
            let pass = net
                .forward(&params, &bx, Mode::Train(&mut dropout_rng))
                .map_err(|e| match e {
                    CnnError::NonFiniteActivation { .. } => diverged(),
                    other => other,
                })?;
            loss_sum += weighted_bce(&pass.probs, &by, cfg.class_weights) * bx.len() as f64;
            let grads = net.backward(&params, &bx, &by, &pass)?;
            adam.step(&mut params.data, &grads.data);
            if !params.is_finite() {
                return Err(diverged());
            }
        }
        let train_loss = loss_sum / train_x.len() as f64;
        let val_probs = net.predict(&params, val_x).map_err(|e| match e {
            CnnError::NonFiniteActivation { .. } => CnnError::NonFiniteActivation { epoch, batch: 0 },
            other => other,
        })?;
        let val_loss = weighted_bce(&val_probs, val_y, None);
        if !val_loss.is_finite() {
            return Err(CnnError::NonFiniteActivation { epoch, batch: 0 });
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        match stopper.observe(epoch, val_loss) {
            StopDecision::Improved => best.data.copy_from_slice(&params.data),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                stopped_early = true;
                break;
            }
        }
        if epoch % 50 == 0 {
            log::debug!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5}");
        }
    }

    let stopped_epoch = epochs.len();
    let val_probs = net.predict(&best, val_x)?;
    let (val_confusion, val_metrics) = metrics::evaluate(&val_probs, val_y, metrics::DEFAULT_THRESHOLD)
        .map_err(|e| CnnError::ShapeMismatch(e.to_string()))?;
    log::info!(
        "trained {stopped_epoch} epochs, best epoch {} (val loss {:.5})",
        stopper.best_epoch,
        stopper.best_loss
    );
    Ok((
        best,
        TrainReport {
            epochs,
            best_epoch: stopper.best_epoch,
            best_val_loss: stopper.best_loss,
            stopped_epoch,
            stopped_early,
            val_confusion,
            val_metrics,
        },
    ))
}
