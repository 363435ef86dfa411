//! Line-oriented `key = value` config files.
//!
//! `#` starts a comment, blank lines are ignored, and a key may appear only
//! once. Every key must be consumed by some config type; leftovers are an
//! error so typos do not pass silently.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::dataio::PreprocessConfig;
use crate::error::{Error, Result};
use crate::mechanisms::{MechanismConfig, MechanismKind};
use crate::model::{ModelConfig, TrainConfig};
use crate::synth::SynthConfig;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, (usize, String)>,
}

impl FromStr for KeyValues {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected `key = value`, got {raw:?}", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::config(format!("line {}: empty key", i + 1)));
            }
            if entries.insert(k.to_string(), (i + 1, v.to_string())).is_some() {
                return Err(Error::config(format!("line {}: duplicate key {k:?}", i + 1)));
            }
        }
        Ok(KeyValues { entries })
    }
}

impl KeyValues {
    pub fn read(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        text.parse()
    }

    /// Removes and parses `key` if present.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, v)) => {
                v.parse().map(Some).map_err(|_| Error::config(format!("line {line}: bad value {v:?} for {key}")))
            }
        }
    }

    pub fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        Ok(self.take(key)?.unwrap_or(default))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Errors if any key was not consumed.
    pub fn finish(self) -> Result<()> {
        match self.entries.into_iter().next() {
            None => Ok(()),
            Some((k, (line, _))) => Err(Error::config(format!("line {line}: unknown key {k:?}"))),
        }
    }

    pub fn synth(&mut self, mut cfg: SynthConfig) -> Result<SynthConfig> {
        cfg.n_users = self.take_or("n_users", cfg.n_users)?;
        cfg.trajs_per_user = self.take_or("trajs_per_user", cfg.trajs_per_user)?;
        cfg.len_range.0 = self.take_or("len_min", cfg.len_range.0)?;
        cfg.len_range.1 = self.take_or("len_max", cfg.len_range.1)?;
        cfg.bbox.0 = self.take_or("lat_min", cfg.bbox.0)?;
        cfg.bbox.1 = self.take_or("lat_max", cfg.bbox.1)?;
        cfg.bbox.2 = self.take_or("lon_min", cfg.bbox.2)?;
        cfg.bbox.3 = self.take_or("lon_max", cfg.bbox.3)?;
        cfg.speed_range.0 = self.take_or("speed_min", cfg.speed_range.0)?;
        cfg.speed_range.1 = self.take_or("speed_max", cfg.speed_range.1)?;
        cfg.sample_interval = self.take_or("sample_interval", cfg.sample_interval)?;
        cfg.turn_sigma = self.take_or("turn_sigma", cfg.turn_sigma)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn preprocess(&mut self, mut cfg: PreprocessConfig) -> Result<PreprocessConfig> {
        cfg.bbox_percentile = self.take_or("bbox_percentile", cfg.bbox_percentile)?;
        cfg.max_speed_mps = self.take_or("max_speed_mps", cfg.max_speed_mps)?;
        cfg.gap_seconds = self.take_or("gap_seconds", cfg.gap_seconds)?;
        cfg.min_len = self.take_or("min_len", cfg.min_len)?;
        cfg.max_len = self.take_or("max_len", cfg.max_len)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train(&mut self, mut cfg: TrainConfig) -> Result<TrainConfig> {
        cfg.lr = self.take_or("lr", cfg.lr)?;
        cfg.batch_size = self.take_or("batch_size", cfg.batch_size)?;
        cfg.max_epochs = self.take_or("max_epochs", cfg.max_epochs)?;
        cfg.early_stop_patience = self.take_or("early_stop_patience", cfg.early_stop_patience)?;
        cfg.val_fraction = self.take_or("val_fraction", cfg.val_fraction)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Model sizes; `max_len` is left to the caller.
    pub fn model(&mut self, mut cfg: ModelConfig) -> Result<ModelConfig> {
        cfg.loc_embed_units = self.take_or("loc_embed_units", cfg.loc_embed_units)?;
        cfg.hour_embed_units = self.take_or("hour_embed_units", cfg.hour_embed_units)?;
        cfg.dow_embed_units = self.take_or("dow_embed_units", cfg.dow_embed_units)?;
        cfg.fusion_units = self.take_or("fusion_units", cfg.fusion_units)?;
        cfg.lstm_units = self.take_or("lstm_units", cfg.lstm_units)?;
        Ok(cfg)
    }

    /// `sensitivity_m` and `max_inner_loops`, shared by every mechanism in
    /// one file.
    pub fn mechanism_shared(&mut self) -> Result<(f64, usize)> {
        Ok((
            self.take_or("sensitivity_m", crate::mechanisms::DEFAULT_SENSITIVITY_M)?,
            self.take_or("max_inner_loops", crate::mechanisms::DEFAULT_MAX_INNER_LOOPS)?,
        ))
    }

    /// A mechanism named by `kind_key` with budget `eps_key`.
    pub fn mechanism(&mut self, kind_key: &str, eps_key: &str, shared: (f64, usize)) -> Result<MechanismConfig> {
        let kind: MechanismKind = self.take(kind_key)?.ok_or_else(|| Error::config(format!("missing {kind_key}")))?;
        let eps: f64 = self.take(eps_key)?.ok_or_else(|| Error::config(format!("missing {eps_key}")))?;
        let mut m = MechanismConfig::new(kind, eps);
        (m.sensitivity_m, m.max_inner_loops) = shared;
        m.validate()?;
        Ok(m)
    }
}
