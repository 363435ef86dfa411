//! Plain-text checkpoints.
//!
//! ```text
//! raopt-checkpoint v1
//! encoder lat0=… lon0=… scale_lat=… scale_lon=… max_len=…
//! model loc_embed_units=… … max_len=…
//! <name> <d0>x<d1>… <values…>       one line per parameter
//! end
//! ```
//!
//! Values use Rust's shortest round-trip float formatting, so a reload is
//! bit-exact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{ModelConfig, Network, TrainedModel};
use crate::encoding::EncoderConfig;
use crate::error::{Error, Result};

pub const CHECKPOINT_HEADER: &str = "raopt-checkpoint v1";

pub fn save<W: Write>(model: &TrainedModel, mut sink: W) -> Result<()> {
    writeln!(sink, "{CHECKPOINT_HEADER}")?;
    writeln!(sink, "encoder {}", model.encoder)?;
    writeln!(sink, "model {}", model.config)?;
    for p in model.net.params() {
        let shape: Vec<String> = p.value.shape().iter().map(usize::to_string).collect();
        write!(sink, "{} {}", p.name, shape.join("x"))?;
        for v in p.value.data() {
            write!(sink, " {v}")?;
        }
        writeln!(sink)?;
    }
    writeln!(sink, "end")?;
    Ok(())
}

pub fn save_file(model: &TrainedModel, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    save(model, &mut w)?;
    w.flush()?;
    Ok(())
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn load<R: BufRead>(source: R) -> Result<TrainedModel> {
    let mut lines = source.lines();
    let mut next = |what: &str| -> Result<String> {
        lines.next().transpose()?.ok_or_else(|| bad(format!("truncated before {what}")))
    };

    let header = next("header")?;
    if header.trim_end() != CHECKPOINT_HEADER {
        return Err(bad(format!("unsupported checkpoint header {header:?}")));
    }
    let enc_line = next("encoder")?;
    let encoder: EncoderConfig = enc_line
        .strip_prefix("encoder ")
        .ok_or_else(|| bad("missing encoder line"))?
        .parse()
        .map_err(|e| bad(format!("encoder: {e}")))?;
    let model_line = next("model config")?;
    let config: ModelConfig = model_line
        .strip_prefix("model ")
        .ok_or_else(|| bad("missing model line"))?
        .parse()
        .map_err(|e| bad(format!("model config: {e}")))?;

    let mut net = Network::new(&config, 0)?;
    for p in net.params_mut() {
        let line = next(&p.name)?;
        let mut toks = line.split_ascii_whitespace();
        let name = toks.next().unwrap_or_default();
        if name != p.name {
            return Err(bad(format!("expected parameter {}, found {name:?}", p.name)));
        }
        let shape: Vec<String> = p.value.shape().iter().map(usize::to_string).collect();
        let shape = shape.join("x");
        let found = toks.next().unwrap_or_default();
        if found != shape {
            return Err(bad(format!("{name}: shape {found} in file, model needs {shape}")));
        }
        let values: Vec<f64> = toks
            .map(|t| t.parse::<f64>().map_err(|_| bad(format!("{name}: bad value {t:?}"))))
            .collect::<Result<_>>()?;
        if values.len() != p.value.len() {
            return Err(bad(format!("{name}: {} values, expected {}", values.len(), p.value.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(bad(format!("{name}: non-finite value")));
        }
        p.value.data_mut().copy_from_slice(&values);
    }
    if next("end marker")?.trim_end() != "end" {
        return Err(bad("missing end marker"));
    }
    TrainedModel::build(config, encoder, 0).map(|mut m| {
        m.net = net;
        m
    })
}

pub fn load_file(path: &Path) -> Result<TrainedModel> {
    load(BufReader::new(File::open(path)?))
}
