//! Binary checkpoint of the end-of-training state.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic        8 bytes  "FLDRIFT\0"
//! version      u32
//! round        u64
//! seed         u64
//! rng stream   u64      selection stream id
//! rng word pos u128     selection stream position
//! head         u8       0 linear, 1 cosine, 2 calibrated
//! tau gamma alpha beta  f64 ×4
//! input dim    u32
//! layer count  u32, then per layer: width u32, activation u8
//! classes      u32
//! param count  u64, then that many f64
//! per class    u8 valid flag, then embedding-dim f64 when valid
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

use crate::causal::CalibrationParams;
use crate::model::{Activation, LayerSpec, ModelError, ModelParams, ModelShape};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FLDRIFT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("unknown {what} code {code}")]
    UnknownCode { what: &'static str, code: u8 },
    #[error("parameter count {found} does not match the stored shape ({expected})")]
    ParamCount { expected: usize, found: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Linear,
    Cosine,
    Calibrated,
}

impl HeadKind {
    fn code(self) -> u8 {
        match self {
            HeadKind::Linear => 0,
            HeadKind::Cosine => 1,
            HeadKind::Calibrated => 2,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(HeadKind::Linear),
            1 => Some(HeadKind::Cosine),
            2 => Some(HeadKind::Calibrated),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub round: u64,
    pub seed: u64,
    pub rng_stream: u64,
    pub rng_word_pos: u128,
    pub head: HeadKind,
    pub calibration: CalibrationParams,
    pub params: ModelParams,
    /// Per-class global drift direction, `None` when invalid.
    pub global_dirs: Vec<Option<Vec<f64>>>,
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), CheckpointError> {
        let shape = self.params.shape();
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
        w.write_u64::<LittleEndian>(self.round)?;
        w.write_u64::<LittleEndian>(self.seed)?;
        w.write_u64::<LittleEndian>(self.rng_stream)?;
        w.write_u128::<LittleEndian>(self.rng_word_pos)?;
        w.write_u8(self.head.code())?;
        let c = &self.calibration;
        for v in [c.tau, c.gamma, c.alpha, c.beta] {
            w.write_f64::<LittleEndian>(v)?;
        }
        w.write_u32::<LittleEndian>(shape.input_dim as u32)?;
        w.write_u32::<LittleEndian>(shape.layers.len() as u32)?;
        for l in &shape.layers {
            w.write_u32::<LittleEndian>(l.width as u32)?;
            w.write_u8(l.activation.code())?;
        }
        w.write_u32::<LittleEndian>(shape.num_classes as u32)?;
        let data = self.params.as_slice();
        w.write_u64::<LittleEndian>(data.len() as u64)?;
        for &v in data {
            w.write_f64::<LittleEndian>(v)?;
        }
        for d in &self.global_dirs {
            match d {
                Some(v) => {
                    w.write_u8(1)?;
                    for &x in v {
                        w.write_f64::<LittleEndian>(x)?;
                    }
                }
                None => w.write_u8(0)?,
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, CheckpointError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let round = r.read_u64::<LittleEndian>()?;
        let seed = r.read_u64::<LittleEndian>()?;
        let rng_stream = r.read_u64::<LittleEndian>()?;
        let rng_word_pos = r.read_u128::<LittleEndian>()?;
        let code = r.read_u8()?;
        let head = HeadKind::from_code(code).ok_or(CheckpointError::UnknownCode { what: "head", code })?;
        let mut cal = [0.0; 4];
        for v in &mut cal {
            *v = r.read_f64::<LittleEndian>()?;
        }
        let input_dim = r.read_u32::<LittleEndian>()? as usize;
        let layer_count = r.read_u32::<LittleEndian>()? as usize;
        let mut layers = Vec::with_capacity(layer_count);
        for _ in 0..layer_count {
            let width = r.read_u32::<LittleEndian>()? as usize;
            let code = r.read_u8()?;
            let activation = Activation::from_code(code).ok_or(CheckpointError::UnknownCode {
                what: "activation",
                code,
            })?;
            layers.push(LayerSpec { width, activation });
        }
        let num_classes = r.read_u32::<LittleEndian>()? as usize;
        let shape = ModelShape {
            input_dim,
            layers,
            num_classes,
        };
        let count = r.read_u64::<LittleEndian>()? as usize;
        if count != shape.num_params() {
            return Err(CheckpointError::ParamCount {
                expected: shape.num_params(),
                found: count,
            });
        }
        let mut data = vec![0.0; count];
        r.read_f64_into::<LittleEndian>(&mut data)?;
        let params = ModelParams::from_flat(shape, data)?;
        let dim = params.embedding_dim();
        let mut global_dirs = Vec::with_capacity(num_classes);
        for _ in 0..num_classes {
            match r.read_u8()? {
                0 => global_dirs.push(None),
                1 => {
                    let mut v = vec![0.0; dim];
                    r.read_f64_into::<LittleEndian>(&mut v)?;
                    global_dirs.push(Some(v));
                }
                code => {
                    return Err(CheckpointError::UnknownCode {
                        what: "direction flag",
                        code,
                    })
                }
            }
        }
        Ok(Self {
            round,
            seed,
            rng_stream,
            rng_word_pos,
            head,
            calibration: CalibrationParams {
                tau: cal[0],
                gamma: cal[1],
                alpha: cal[2],
                beta: cal[3],
            },
            params,
            global_dirs,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn sample() -> Checkpoint {
        let params = ModelParams::init(ModelShape::mlp(3, 4, 2), &mut rng::stream(1, rng::INIT));
        Checkpoint {
            round: 7,
            seed: 42,
            rng_stream: rng::SELECTION,
            rng_word_pos: 1 << 70,
            head: HeadKind::Calibrated,
            calibration: CalibrationParams::default(),
            params,
            global_dirs: vec![Some(vec![1.0, 0.0, 0.0, 0.0]), None],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..8], CHECKPOINT_MAGIC);
        assert_eq!(Checkpoint::read_from(buf.as_slice()).unwrap(), ck);
    }

    #[test]
    fn corrupt_headers_are_rejected() {
        let mut buf = Vec::new();
        sample().write_to(&mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            Checkpoint::read_from(bad.as_slice()),
            Err(CheckpointError::BadMagic)
        ));
        let mut bad = buf.clone();
        bad[8] = 9;
        assert!(matches!(
            Checkpoint::read_from(bad.as_slice()),
            Err(CheckpointError::Version(9))
        ));
        let truncated = &buf[..buf.len() - 3];
        assert!(matches!(Checkpoint::read_from(truncated), Err(CheckpointError::Io(_))));
    }
}
