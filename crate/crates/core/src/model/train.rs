//! Adam training with validation-based early stopping.

use std::io::Write;

use rand::seq::SliceRandom;

use super::TrainedModel;
use crate::encoding::{batch_order, collate, encode_pair, EncodedPair};
use crate::error::{Error, Result};
use crate::mechanisms::ProtectedPair;
use crate::neuralnet::{AdamState, Param, Tensor};
use crate::rng::{mix_seed, sub_rng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { lr: 0.001, batch_size: 512, max_epochs: 500, early_stop_patience: 50, val_fraction: 0.1, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate {}", self.lr)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::config("batch_size and max_epochs must be positive"));
        }
        if self.early_stop_patience >= self.max_epochs {
            return Err(Error::config(format!(
                "patience {} must be below max_epochs {}",
                self.early_stop_patience, self.max_epochs
            )));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::config(format!("val_fraction {} outside [0, 1)", self.val_fraction)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    /// Equal to the training loss when there is no validation split.
    pub val_loss: f64,
}

pub fn write_history<W: Write>(history: &[EpochLoss], mut sink: W) -> Result<()> {
    writeln!(sink, "epoch,train_loss,val_loss")?;
    for h in history {
        writeln!(sink, "{},{},{}", h.epoch, h.train_loss, h.val_loss)?;
    }
    Ok(())
}

fn snapshot(params: &[&Param]) -> Vec<Tensor> {
    params.iter().map(|p| p.value.clone()).collect()
}

/// Row-weighted mean loss over `idx`, in fixed chunks.
fn evaluate(model: &TrainedModel, pairs: &[EncodedPair], idx: &[usize], batch_size: usize) -> Result<f64> {
    let mut total = 0.0;
    let mut rows = 0usize;
    for chunk in idx.chunks(batch_size) {
        let batch = collate(pairs, chunk)?;
        let n = batch.mask.iter().filter(|m| **m).count();
        let (loss, _, _) = model.net.batch_loss(&batch, &model.encoder)?;
        total += loss * n as f64;
        rows += n;
    }
    Ok(if rows == 0 { 0.0 } else { total / rows as f64 })
}

/// Trains `model` on protected → original pairs. The best-validation
/// weights are restored at the end and the per-epoch history is stored on
/// the model. `on_epoch` sees every history entry as it is produced.
pub fn train(
    model: &mut TrainedModel,
    pairs: &[ProtectedPair],
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLoss),
) -> Result<()> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::domain("no training pairs"));
    }
    let encoded: Vec<EncodedPair> = pairs.iter().map(|p| encode_pair(p, &model.encoder)).collect::<Result<_>>()?;

    let n = encoded.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut sub_rng(cfg.seed, 1));
    let mut n_val = (n as f64 * cfg.val_fraction).round() as usize;
    if cfg.val_fraction > 0.0 && n >= 2 {
        n_val = n_val.clamp(1, n - 1);
    }
    let (val_idx, train_idx) = order.split_at(n_val);
    let val_idx = val_idx.to_vec();
    let train_idx = train_idx.to_vec();

    let mut adam = AdamState::new(cfg.lr);
    let mut best = f64::INFINITY;
    let mut best_weights = snapshot(&model.net.params());
    let mut stale = 0;
    model.history.clear();

    for epoch in 1..=cfg.max_epochs {
        let mut total = 0.0;
        let mut rows = 0usize;
        for (bi, positions) in
            batch_order(train_idx.len(), cfg.batch_size, mix_seed(cfg.seed, 100 + epoch as u64)).iter().enumerate()
        {
            let idx: Vec<usize> = positions.iter().map(|&p| train_idx[p]).collect();
            let batch = collate(&encoded, &idx)?;
            let diverged = |loss: f64| Error::Divergence { epoch, batch: bi, loss };
            model.net.zero_grad();
            let (loss, grad, cache) = match model.net.batch_loss(&batch, &model.encoder) {
                Ok(v) => v,
                Err(Error::NonFinite(_)) => return Err(diverged(f64::NAN)),
                Err(e) => return Err(e),
            };
            model.net.backward(&cache, &grad)?;
            match adam.step(&mut model.net.params_mut()) {
                Ok(()) => {}
                Err(Error::NonFinite(_)) => return Err(diverged(loss)),
                Err(e) => return Err(e),
            }
            let r = cache.lengths().iter().sum::<usize>();
            total += loss * r as f64;
            rows += r;
        }
        let train_loss = if rows == 0 { 0.0 } else { total / rows as f64 };
        let val_loss =
            if val_idx.is_empty() { train_loss } else { evaluate(model, &encoded, &val_idx, cfg.batch_size)? };
        let entry = EpochLoss { epoch, train_loss, val_loss };
        model.history.push(entry);
        on_epoch(&entry);

        if val_loss < best {
            best = val_loss;
            best_weights = snapshot(&model.net.params());
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.early_stop_patience {
                break;
            }
        }
    }
    for (p, w) in model.net.params_mut().into_iter().zip(best_weights) {
        p.value = w;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{RawPoint, Trajectory};
    use crate::encoding::fit_encoder;
    use crate::mechanisms::{MechanismConfig, MechanismKind};
    use crate::model::ModelConfig;

    fn pairs(n: usize) -> Vec<ProtectedPair> {
        let mech = MechanismConfig::new(MechanismKind::CNoise, 1.0);
        (0..n)
            .map(|k| {
                let pts = (0..6)
                    .map(|i| {
                        RawPoint::new(
                            39.9 + 0.01 * (k + i) as f64,
                            116.4 - 0.005 * i as f64,
                            1_200_000_000 + 60 * i as i64,
                        )
                    })
                    .collect();
                let t = Trajectory::new("u", format!("t{k}"), pts);
                ProtectedPair { original: t.clone(), protected: t, mechanism: mech }
            })
            .collect()
    }

    fn small_model(p: &[ProtectedPair]) -> TrainedModel {
        let originals: Vec<Trajectory> = p.iter().map(|x| x.original.clone()).collect();
        let enc = fit_encoder(&originals, 6).unwrap();
        let cfg = ModelConfig {
            loc_embed_units: 8,
            hour_embed_units: 4,
            dow_embed_units: 3,
            fusion_units: 8,
            lstm_units: 6,
            max_len: 6,
        };
        TrainedModel::build(cfg, enc, 4).unwrap()
    }

    #[test]
    fn stops_after_exactly_patience_stale_epochs() {
        let p = pairs(20);
        let mut m = small_model(&p);
        let values = |m: &TrainedModel| m.net.params().iter().map(|p| p.value.clone()).collect::<Vec<_>>();
        let before = values(&m);
        let cfg =
            TrainConfig { lr: 0.0, batch_size: 8, max_epochs: 50, early_stop_patience: 3, val_fraction: 0.2, seed: 1 };
        train(&mut m, &p, &cfg, &mut |_| {}).unwrap();
        // Nothing moves, so epoch 1 is best and three stale epochs follow.
        assert_eq!(m.history.len(), 4);
        assert_eq!(values(&m), before);
    }

    #[test]
    fn loss_falls_and_best_weights_are_kept() {
        let p = pairs(40);
        let mut m = small_model(&p);
        let cfg = TrainConfig {
            lr: 0.01,
            batch_size: 16,
            max_epochs: 30,
            early_stop_patience: 10,
            val_fraction: 0.1,
            seed: 2,
        };
        let mut seen = 0;
        train(&mut m, &p, &cfg, &mut |_| seen += 1).unwrap();
        assert_eq!(seen, m.history.len());
        let first = m.history[0].val_loss;
        let best = m.history.iter().map(|h| h.val_loss).fold(f64::INFINITY, f64::min);
        assert!(best < first);

        let mut again = small_model(&p);
        train(&mut again, &p, &cfg, &mut |_| {}).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn history_csv() {
        let h = [EpochLoss { epoch: 1, train_loss: 2.5, val_loss: 3.0 }];
        let mut out = Vec::new();
        write_history(&h, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "epoch,train_loss,val_loss\n1,2.5,3\n");
    }

    #[test]
    fn config_checks() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig { early_stop_patience: 500, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
        let p = pairs(2);
        let mut m = small_model(&p);
        assert!(train(&mut m, &[], &TrainConfig::default(), &mut |_| {}).is_err());
    }
}
