//! The RAoPT reconstruction network.
//!
//! ```text
//! mask → loc(2) / hour(24) / dow(7) → dense+relu embeddings (64/24/7)
//!      → concat(95) → dense(100)+relu fusion → biLSTM(100)
//!      → dense(1)+tanh lat head, dense(1)+tanh lon head
//! ```
//!
//! Every layer runs on mask-compacted rows, so padding never reaches the
//! arithmetic. Heads emit scaled offsets; the encoder's scales turn them back
//! into degrees.

mod checkpoint;
mod train;

use std::fmt;
use std::str::FromStr;

pub use checkpoint::{load, load_file, save, save_file, CHECKPOINT_HEADER};
pub use train::{train, write_history, EpochLoss, TrainConfig};

use crate::dataio::Trajectory;
use crate::encoding::{self, Batch, EncodedPair, EncoderConfig, DOW_FEATURES, FEATURES, HOUR_FEATURES, LOC_FEATURES};
use crate::error::{Error, Result};
use crate::neuralnet::gradcheck::Differentiable;
use crate::neuralnet::loss::mixed_rows;
use crate::neuralnet::lstm::BiLstmCache;
use crate::neuralnet::{pack, unpack, Activation, BiLstm, Dense, Packed, Param, Tensor};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub loc_embed_units: usize,
    pub hour_embed_units: usize,
    pub dow_embed_units: usize,
    pub fusion_units: usize,
    pub lstm_units: usize,
    pub max_len: usize,
}

impl ModelConfig {
    pub fn new(max_len: usize) -> Self {
        ModelConfig {
            loc_embed_units: 64,
            hour_embed_units: 24,
            dow_embed_units: 7,
            fusion_units: 100,
            lstm_units: 100,
            max_len,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.loc_embed_units,
            self.hour_embed_units,
            self.dow_embed_units,
            self.fusion_units,
            self.lstm_units,
            self.max_len,
        ];
        if all.contains(&0) {
            return Err(Error::config(format!("model sizes must be positive: {self}")));
        }
        Ok(())
    }

    pub fn concat_units(&self) -> usize {
        self.loc_embed_units + self.hour_embed_units + self.dow_embed_units
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let dense = |i: usize, o: usize| (i + 1) * o;
        let u = self.lstm_units;
        dense(LOC_FEATURES, self.loc_embed_units)
            + dense(HOUR_FEATURES, self.hour_embed_units)
            + dense(DOW_FEATURES, self.dow_embed_units)
            + dense(self.concat_units(), self.fusion_units)
            + 2 * 4 * u * (self.fusion_units + u + 1)
            + 2 * dense(2 * u, 1)
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "loc_embed_units={} hour_embed_units={} dow_embed_units={} fusion_units={} lstm_units={} max_len={}",
            self.loc_embed_units,
            self.hour_embed_units,
            self.dow_embed_units,
            self.fusion_units,
            self.lstm_units,
            self.max_len
        )
    }
}

impl FromStr for ModelConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut cfg = ModelConfig::new(0);
        let mut seen = 0;
        for tok in s.split_whitespace() {
            let (k, v) = tok.split_once('=').ok_or_else(|| Error::format(format!("model config token {tok:?}")))?;
            let v: usize = v.parse().map_err(|_| Error::format(format!("bad model config value {v:?}")))?;
            let slot = match k {
                "loc_embed_units" => &mut cfg.loc_embed_units,
                "hour_embed_units" => &mut cfg.hour_embed_units,
                "dow_embed_units" => &mut cfg.dow_embed_units,
                "fusion_units" => &mut cfg.fusion_units,
                "lstm_units" => &mut cfg.lstm_units,
                "max_len" => &mut cfg.max_len,
                _ => return Err(Error::format(format!("unknown model config key {k:?}"))),
            };
            *slot = v;
            seen += 1;
        }
        if seen != 6 {
            return Err(Error::format(format!("model config needs 6 fields, got {seen}")));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// The layers of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub loc_embed: Dense,
    pub hour_embed: Dense,
    pub dow_embed: Dense,
    pub fusion: Dense,
    pub bilstm: BiLstm,
    pub lat_head: Dense,
    pub lon_head: Dense,
}

/// Intermediates kept by [`Network::forward`] for the backward pass.
pub struct ForwardCache {
    x: Packed,
    loc: Tensor,
    hour: Tensor,
    dow: Tensor,
    loc_e: Tensor,
    hour_e: Tensor,
    dow_e: Tensor,
    concat: Tensor,
    fused: Packed,
    lstm_cache: BiLstmCache,
    h: Tensor,
    lat: Tensor,
    lon: Tensor,
}

impl ForwardCache {
    pub fn lengths(&self) -> &[usize] {
        self.x.lengths()
    }
}

impl Network {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng_from_seed(seed);
        let relu = Activation::Relu;
        Ok(Network {
            loc_embed: Dense::new("loc_embed", &mut rng, LOC_FEATURES, cfg.loc_embed_units, relu),
            hour_embed: Dense::new("hour_embed", &mut rng, HOUR_FEATURES, cfg.hour_embed_units, relu),
            dow_embed: Dense::new("dow_embed", &mut rng, DOW_FEATURES, cfg.dow_embed_units, relu),
            fusion: Dense::new("fusion", &mut rng, cfg.concat_units(), cfg.fusion_units, relu),
            bilstm: BiLstm::new("bilstm", &mut rng, cfg.fusion_units, cfg.lstm_units),
            lat_head: Dense::new("lat_head", &mut rng, 2 * cfg.lstm_units, 1, Activation::Tanh),
            lon_head: Dense::new("lon_head", &mut rng, 2 * cfg.lstm_units, 1, Activation::Tanh),
        })
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v = self.loc_embed.params();
        v.extend(self.hour_embed.params());
        v.extend(self.dow_embed.params());
        v.extend(self.fusion.params());
        v.extend(self.bilstm.params());
        v.extend(self.lat_head.params());
        v.extend(self.lon_head.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.loc_embed.params_mut();
        v.extend(self.hour_embed.params_mut());
        v.extend(self.dow_embed.params_mut());
        v.extend(self.fusion.params_mut());
        v.extend(self.bilstm.params_mut());
        v.extend(self.lat_head.params_mut());
        v.extend(self.lon_head.params_mut());
        v
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    /// Runs the packed `(rows, 33)` input through the network; returns
    /// packed `(rows, 2)` scaled offsets.
    pub fn forward(&self, x: Packed) -> Result<(Tensor, ForwardCache)> {
        let loc = x.data.columns(0, LOC_FEATURES)?;
        let hour = x.data.columns(LOC_FEATURES, LOC_FEATURES + HOUR_FEATURES)?;
        let dow = x.data.columns(LOC_FEATURES + HOUR_FEATURES, FEATURES)?;
        let loc_e = self.loc_embed.forward(&loc)?;
        let hour_e = self.hour_embed.forward(&hour)?;
        let dow_e = self.dow_embed.forward(&dow)?;
        let concat = Tensor::hcat(&[&loc_e, &hour_e, &dow_e])?;
        let fused = x.with_data(self.fusion.forward(&concat)?)?;
        let (h, lstm_cache) = self.bilstm.forward(&fused)?;
        let lat = self.lat_head.forward(&h)?;
        let lon = self.lon_head.forward(&h)?;
        let out = Tensor::hcat(&[&lat, &lon])?;
        Ok((out, ForwardCache { x, loc, hour, dow, loc_e, hour_e, dow_e, concat, fused, lstm_cache, h, lat, lon }))
    }

    /// Accumulates parameter gradients for `dout`, the loss gradient with
    /// respect to the packed output.
    pub fn backward(&mut self, cache: &ForwardCache, dout: &Tensor) -> Result<()> {
        let mut dh = self.lat_head.backward(&cache.h, &cache.lat, &dout.columns(0, 1)?)?;
        dh.add_assign(&self.lon_head.backward(&cache.h, &cache.lon, &dout.columns(1, 2)?)?)?;
        let dfused = self.bilstm.backward(&cache.fused, &cache.lstm_cache, &dh)?;
        let dconcat = self.fusion.backward(&cache.concat, &cache.fused.data, &dfused)?;
        let a = self.loc_embed.fan_out();
        let b = a + self.hour_embed.fan_out();
        let c = b + self.dow_embed.fan_out();
        self.loc_embed.backward(&cache.loc, &cache.loc_e, &dconcat.columns(0, a)?)?;
        self.hour_embed.backward(&cache.hour, &cache.hour_e, &dconcat.columns(a, b)?)?;
        self.dow_embed.backward(&cache.dow, &cache.dow_e, &dconcat.columns(b, c)?)?;
        Ok(())
    }

    /// Mean loss over the batch's real steps (haversine metres, or MSE for
    /// pairs flagged `use_mse`) and its packed output gradient.
    pub fn batch_loss(&self, batch: &Batch, enc: &EncoderConfig) -> Result<(f64, Tensor, ForwardCache)> {
        let x = pack(&batch.input, &batch.mask)?;
        let target = pack(&batch.target, &batch.mask)?;
        let (out, cache) = self.forward(x)?;
        let selectors: Vec<bool> =
            cache.lengths().iter().zip(&batch.use_mse).flat_map(|(&len, &m)| std::iter::repeat_n(m, len)).collect();
        let (loss, grad) = mixed_rows(&out, &target.data, &selectors, enc)?;
        Ok((loss, grad, cache))
    }
}

/// A network with its encoder and training history.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub config: ModelConfig,
    pub encoder: EncoderConfig,
    pub net: Network,
    pub history: Vec<EpochLoss>,
}

/// Rows per forward pass during reconstruction.
const RECONSTRUCT_CHUNK: usize = 256;

impl TrainedModel {
    /// An untrained model.
    pub fn build(config: ModelConfig, encoder: EncoderConfig, seed: u64) -> Result<Self> {
        if encoder.max_len != config.max_len {
            return Err(Error::config(format!(
                "encoder max_len {} differs from model max_len {}",
                encoder.max_len, config.max_len
            )));
        }
        Ok(TrainedModel { config, encoder, net: Network::new(&config, seed)?, history: Vec::new() })
    }

    pub fn param_count(&self) -> usize {
        self.net.params().iter().map(|p| p.value.len()).sum()
    }

    /// Scaled `(max_len, 2)` predictions for each input trajectory.
    pub fn predict(&self, protected: &[Trajectory]) -> Result<Vec<Tensor>> {
        let mut out = Vec::with_capacity(protected.len());
        for chunk in protected.chunks(RECONSTRUCT_CHUNK) {
            let encoded: Vec<EncodedPair> = chunk
                .iter()
                .map(|t| {
                    Ok(EncodedPair {
                        input: encoding::encode(t, &self.encoder)?,
                        target: Tensor::zeros(&[self.encoder.max_len, LOC_FEATURES]),
                        use_mse: false,
                    })
                })
                .collect::<Result<_>>()?;
            let idx: Vec<usize> = (0..encoded.len()).collect();
            let batch = encoding::collate(&encoded, &idx)?;
            let x = pack(&batch.input, &batch.mask)?;
            let (y, cache) = self.net.forward(x)?;
            let padded = unpack(&cache.x.with_data(y)?, self.encoder.max_len)?;
            let per = self.encoder.max_len * LOC_FEATURES;
            for seq in padded.data().chunks(per) {
                out.push(Tensor::from_vec(&[self.encoder.max_len, LOC_FEATURES], seq.to_vec())?);
            }
        }
        Ok(out)
    }

    /// Encode → forward → decode; ids and timestamps come from the input.
    pub fn reconstruct(&self, protected: &[Trajectory]) -> Result<Vec<Trajectory>> {
        self.predict(protected)?.iter().zip(protected).map(|(y, t)| encoding::decode(y, t, &self.encoder)).collect()
    }
}

/// Default seed of the gradient-check problems. Some random instances hold
/// parameters whose gradient is ~1e-9 (inputs from a nearly silent fusion
/// unit); there the `1e-5` central difference is dominated by the loss's
/// rounding noise and no finite-difference check can resolve them.
pub const GRADCHECK_SEED: u64 = 1;

/// The whole network on a fixed batch, for gradient checking.
pub struct ModelProblem {
    pub net: Network,
    pub batch: Batch,
    pub encoder: EncoderConfig,
}

impl ModelProblem {
    /// Tiny network (embeds 4/4/4, fusion 8, lstm 6) on two sequences of at
    /// most 5 steps; one pair uses the haversine loss, the other MSE.
    pub fn tiny(seed: u64) -> Result<Self> {
        use crate::geo::ReferenceFrame;
        use rand::Rng as _;

        let cfg = ModelConfig {
            loc_embed_units: 4,
            hour_embed_units: 4,
            dow_embed_units: 4,
            fusion_units: 8,
            lstm_units: 6,
            max_len: 5,
        };
        let mut net = Network::new(&cfg, seed)?;
        let mut rng = crate::rng::sub_rng(seed, 1);
        // Positive biases keep the relus active and off their kinks, so no
        // parameter is left with a vanishing gradient that finite differences
        // cannot resolve.
        for p in net.params_mut().into_iter().filter(|p| p.name.ends_with(".b")) {
            p.value.data_mut().iter_mut().for_each(|v| *v += rng.random_range(0.5..1.0));
        }
        let encoder = EncoderConfig::new(ReferenceFrame::new(39.9, 116.4)?, 0.1, 0.12, cfg.max_len)?;
        let (batch, time) = (2, cfg.max_len);
        let lengths = [5, 3];
        let mut input = Tensor::zeros(&[batch, time, FEATURES]);
        let mut target = Tensor::zeros(&[batch, time, LOC_FEATURES]);
        let mut mask = vec![false; batch * time];
        for (b, &len) in lengths.iter().enumerate() {
            for t in 0..len {
                let r = b * time + t;
                mask[r] = true;
                let row = input.row_mut(r);
                row[0] = rng.random_range(-1.5..1.5);
                row[1] = rng.random_range(-1.5..1.5);
                row[LOC_FEATURES + rng.random_range(0..HOUR_FEATURES)] = 1.0;
                row[LOC_FEATURES + HOUR_FEATURES + rng.random_range(0..DOW_FEATURES)] = 1.0;
                let tr = target.row_mut(r);
                tr[0] = rng.random_range(-0.9..0.9);
                tr[1] = rng.random_range(-0.9..0.9);
            }
        }
        // The haversine pair's targets sit tens of metres from the
        // current predictions. Its gradient keeps unit scale at any distance,
        // but a small loss keeps finite-difference rounding (ulp(loss) / step)
        // well below the tolerance.
        let batch = Batch { input, target, mask, use_mse: vec![false, true], indices: vec![0, 1] };
        let (pred, _) = net.forward(pack(&batch.input, &batch.mask)?)?;
        let mut batch = batch;
        for t in 0..lengths[0] {
            let tr = batch.target.row_mut(t);
            tr[0] = pred.row(t)[0] + rng.random_range(-0.02..0.02);
            tr[1] = pred.row(t)[1] + rng.random_range(-0.02..0.02);
        }
        Ok(ModelProblem { net, batch, encoder })
    }
}

impl Differentiable for ModelProblem {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.net.params_mut()
    }

    fn loss(&mut self) -> Result<f64> {
        Ok(self.net.batch_loss(&self.batch, &self.encoder)?.0)
    }

    fn loss_and_grad(&mut self) -> Result<f64> {
        self.net.zero_grad();
        let (loss, grad, cache) = self.net.batch_loss(&self.batch, &self.encoder)?;
        self.net.backward(&cache, &grad)?;
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::RawPoint;
    use crate::geo::ReferenceFrame;
    use crate::neuralnet::gradcheck::{grad_check, TOL_RECURRENT};

    fn encoder(max_len: usize) -> EncoderConfig {
        EncoderConfig::new(ReferenceFrame::new(39.9, 116.4).unwrap(), 0.08, 0.1, max_len).unwrap()
    }

    fn traj(n: usize, seed: f64) -> Trajectory {
        let pts = (0..n)
            .map(|i| {
                let f = i as f64 + seed;
                RawPoint::new(39.9 + 0.05 * f.sin(), 116.4 + 0.07 * (0.7 * f).cos(), 1_200_000_000 + 600 * i as i64)
            })
            .collect();
        Trajectory::new("u", format!("t{seed}"), pts)
    }

    #[test]
    fn default_parameter_count() {
        // embeds 3·64 + 25·24 + 8·7, fusion 96·100, biLSTM 2·400·201, heads 2·201
        assert_eq!(ModelConfig::new(60).param_count(), 171_650);
        let m = TrainedModel::build(ModelConfig::new(60), encoder(60), 1).unwrap();
        assert_eq!(m.param_count(), 171_650);
    }

    #[test]
    fn tiny_model_gradients() {
        for seed in [GRADCHECK_SEED, 2, 3] {
            let mut p = ModelProblem::tiny(seed).unwrap();
            let r = grad_check("model", &mut p, TOL_RECURRENT).unwrap();
            assert!(r.passed(), "seed {seed}: {r}");
        }
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let cfg = ModelConfig::new(8);
        assert_eq!(Network::new(&cfg, 5).unwrap(), Network::new(&cfg, 5).unwrap());
        assert_ne!(Network::new(&cfg, 5).unwrap(), Network::new(&cfg, 6).unwrap());
    }

    #[test]
    fn config_text_round_trip() {
        let cfg = ModelConfig::new(60);
        assert_eq!(cfg.to_string().parse::<ModelConfig>().unwrap(), cfg);
        assert!("max_len=3".parse::<ModelConfig>().is_err());
    }

    #[test]
    fn all_masked_batch_is_inert() {
        let cfg = ModelConfig::new(4);
        let net = Network::new(&cfg, 2).unwrap();
        let batch = Batch {
            input: Tensor::zeros(&[2, 4, FEATURES]),
            target: Tensor::zeros(&[2, 4, 2]),
            mask: vec![false; 8],
            use_mse: vec![false, false],
            indices: vec![0, 1],
        };
        let (loss, grad, _) = net.batch_loss(&batch, &encoder(4)).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.is_empty());
    }

    #[test]
    fn reconstruction_shape_and_range() {
        let m = TrainedModel::build(ModelConfig::new(12), encoder(12), 3).unwrap();
        let inputs: Vec<Trajectory> = (1..=12).map(|n| traj(n, n as f64)).collect();
        let out = m.reconstruct(&inputs).unwrap();
        for (a, b) in inputs.iter().zip(&out) {
            assert_eq!(a.len(), b.len());
            assert_eq!(a.traj_id, b.traj_id);
            for (p, q) in a.points.iter().zip(&b.points) {
                assert_eq!(p.timestamp, q.timestamp);
                assert!((q.lat - 39.9).abs() <= 0.08 && (q.lon - 116.4).abs() <= 0.1);
            }
        }
        assert_eq!(out, m.reconstruct(&inputs).unwrap());
        assert!(m.reconstruct(&[traj(13, 0.0)]).is_err());
    }

    #[test]
    fn longer_max_len_changes_nothing() {
        let short = TrainedModel::build(ModelConfig::new(10), encoder(10), 9).unwrap();
        let mut long = short.clone();
        long.config.max_len = 40;
        long.encoder.max_len = 40;
        let inputs: Vec<Trajectory> = (3..=10).map(|n| traj(n, 0.3 * n as f64)).collect();
        assert_eq!(short.reconstruct(&inputs).unwrap(), long.reconstruct(&inputs).unwrap());
    }
}
