use std::io::{Read, Write};

use super::{AnnError, LabelTransform, LayerSpec, Network, Standardizer, Topology, TrainingMeta};
use crate::io::*;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MUQM";
pub const CHECKPOINT_VERSION: u32 = 2;

fn write_layers<W: Write>(w: &mut W, layers: &[LayerSpec]) -> std::io::Result<()> {
    write_u32(w, layers.len() as u32)?;
    for l in layers {
        match *l {
            LayerSpec::Dense { units } => {
                write_u8(w, 0)?;
                write_u32(w, units as u32)?;
            }
            LayerSpec::Conv3D {
                filters,
                kernel,
                stride,
            } => {
                write_u8(w, 1)?;
                write_u32(w, filters as u32)?;
                write_u32(w, kernel as u32)?;
                write_u32(w, stride as u32)?;
            }
            LayerSpec::ReLU => write_u8(w, 2)?,
            LayerSpec::MaxPool3D { window } => {
                write_u8(w, 3)?;
                write_u32(w, window as u32)?;
            }
            LayerSpec::Flatten => write_u8(w, 4)?,
            LayerSpec::Dropout { rate } => {
                write_u8(w, 5)?;
                write_f64(w, rate)?;
            }
            LayerSpec::Concat => write_u8(w, 6)?,
            LayerSpec::Standardize => write_u8(w, 7)?,
        }
    }
    Ok(())
}

fn read_layers<R: Read>(r: &mut R) -> Result<Vec<LayerSpec>, AnnError> {
    let count = read_u32(r)? as usize;
    if count > 10_000 {
        return Err(AnnError::CorruptFile(format!("implausible layer count {count}")));
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let l = match read_u8(r)? {
            0 => LayerSpec::Dense {
                units: read_u32(r)? as usize,
            },
            1 => LayerSpec::Conv3D {
                filters: read_u32(r)? as usize,
                kernel: read_u32(r)? as usize,
                stride: read_u32(r)? as usize,
            },
            2 => LayerSpec::ReLU,
            3 => LayerSpec::MaxPool3D {
                window: read_u32(r)? as usize,
            },
            4 => LayerSpec::Flatten,
            5 => LayerSpec::Dropout { rate: read_f64(r)? },
            6 => LayerSpec::Concat,
            7 => LayerSpec::Standardize,
            k => return Err(AnnError::CorruptFile(format!("unknown layer kind {k}"))),
        };
        out.push(l);
    }
    Ok(out)
}

/// Writes the `MUQM` checkpoint: topology, standardizers, label transform,
/// training meta, parameters.
pub fn write_checkpoint<W: Write>(w: &mut W, net: &Network) -> Result<(), AnnError> {
    let t = net.topology();
    w.write_all(CHECKPOINT_MAGIC)?;
    write_u32(w, CHECKPOINT_VERSION)?;
    write_u32(w, t.grid_n as u32)?;
    write_u32(w, t.n_numeric as u32)?;
    write_layers(w, &t.cnn)?;
    write_layers(w, &t.numeric)?;
    write_layers(w, &t.trunk)?;
    write_f64s(w, &net.input_std.mean)?;
    write_f64s(w, &net.input_std.std)?;
    write_f64s(w, &net.label_std.mean)?;
    write_f64s(w, &net.label_std.std)?;
    match net.label_transform {
        LabelTransform::Identity => {
            write_u8(w, 0)?;
            write_f64(w, 0.0)?;
        }
        LabelTransform::SignedLog { scale } => {
            write_u8(w, 1)?;
            write_f64(w, scale)?;
        }
    }
    write_u32(w, net.meta.epochs)?;
    write_f64(w, net.meta.best_val_loss)?;
    write_u64(w, net.meta.seed)?;
    write_u64(w, net.n_params() as u64)?;
    write_f64s(w, net.params())?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Network, AnnError> {
    let corrupt = |e: std::io::Error| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            AnnError::CorruptFile("truncated file".into())
        } else {
            AnnError::Io(e)
        }
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(corrupt)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(AnnError::CorruptFile("bad magic".into()));
    }
    let version = read_u32(r).map_err(corrupt)?;
    if version != CHECKPOINT_VERSION {
        return Err(AnnError::CorruptFile(format!("unsupported version {version}")));
    }
    let mut body = || -> Result<Network, AnnError> {
        let grid_n = read_u32(r)? as usize;
        let n_numeric = read_u32(r)? as usize;
        let cnn = read_layers(r)?;
        let numeric = read_layers(r)?;
        let trunk = read_layers(r)?;
        let topology = Topology {
            grid_n,
            n_numeric,
            cnn,
            numeric,
            trunk,
        };
        let mut net = Network::zeros(topology)
            .map_err(|e| AnnError::CorruptFile(format!("stored topology invalid: {e}")))?;
        let n_out = net.n_out();
        net.input_std = Standardizer {
            mean: read_f64_vec(r, n_numeric)?,
            std: read_f64_vec(r, n_numeric)?,
        };
        net.label_std = Standardizer {
            mean: read_f64_vec(r, n_out)?,
            std: read_f64_vec(r, n_out)?,
        };
        let kind = read_u8(r)?;
        let scale = read_f64(r)?;
        net.label_transform = match kind {
            0 => LabelTransform::Identity,
            1 if scale > 0.0 && scale.is_finite() => LabelTransform::SignedLog { scale },
            _ => return Err(AnnError::CorruptFile(format!("bad label transform {kind} ({scale})"))),
        };
        if net.input_std.std.iter().chain(&net.label_std.std).any(|s| !(*s > 0.0)) {
            return Err(AnnError::CorruptFile("non-positive standardizer std".into()));
        }
        net.meta = TrainingMeta {
            epochs: read_u32(r)?,
            best_val_loss: read_f64(r)?,
            seed: read_u64(r)?,
        };
        let n_params = read_u64(r)? as usize;
        if n_params != net.n_params() {
            return Err(AnnError::CorruptFile(format!(
                "{n_params} stored parameters, topology needs {}",
                net.n_params()
            )));
        }
        let params = read_f64_vec(r, n_params)?;
        net.params_mut().copy_from_slice(&params);
        Ok(net)
    };
    body().map_err(|e| match e {
        AnnError::Io(io) => corrupt(io),
        other => other,
    })
}

impl Network {
    pub fn save(&self, path: &std::path::Path) -> Result<(), AnnError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        write_checkpoint(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Network, AnnError> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        read_checkpoint(&mut r)
    }
}
