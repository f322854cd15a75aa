//! `.twt` weight files.
//!
//! ```text
//! magic "TWT\0" | version u16 | arch u8 | reserved u8
//! n_fields u32 | config fields, n_fields × u32
//! n_params u64 | params, n_params × f32
//! crc32 (ISO-HDLC) over everything before it
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::io;
use std::path::Path;

use crc::{Crc, CRC_32_ISO_HDLC};

use super::{Arch, HybridConfig, LstmConfig, Model, ModelConfig, ModelError};

pub const MAGIC: [u8; 4] = *b"TWT\0";
pub const VERSION: u16 = 1;

const CRC32: Crc<u32> = Crc::<u32>::new(&CRC_32_ISO_HDLC);

#[derive(Debug, thiserror::Error)]
pub enum ParamsError {
    #[error("not a weight file (bad magic)")]
    BadMagic,
    #[error("unsupported weight file version {0}")]
    Version(u16),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("architecture mismatch: expected {expected}, file holds {found}")]
    ArchMismatch { expected: Arch, found: Arch },
    #[error("weight file truncated")]
    Truncated,
    #[error("malformed weight file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn arch_tag(a: Arch) -> u8 {
    match a {
        Arch::Hybrid => 0,
        Arch::Lstm => 1,
    }
}

fn config_fields(c: &ModelConfig) -> Vec<usize> {
    match c {
        ModelConfig::Hybrid(h) => vec![
            h.seq_len,
            h.grid,
            h.conv1,
            h.conv2,
            h.d_model,
            h.heads,
            h.ffn,
            h.layers,
            h.head_hidden,
            h.classes,
        ],
        ModelConfig::Lstm(l) => vec![l.seq_len, l.input, l.hidden, l.classes],
    }
}

fn config_from(arch: Arch, f: &[usize]) -> Result<ModelConfig, ParamsError> {
    let want = match arch {
        Arch::Hybrid => 10,
        Arch::Lstm => 4,
    };
    if f.len() != want {
        return Err(ParamsError::Corrupt(format!("{arch} config needs {want} fields, found {}", f.len())));
    }
    if f.iter().any(|&v| v == 0) {
        return Err(ParamsError::Corrupt("zero-sized config field".into()));
    }
    Ok(match arch {
        Arch::Hybrid => {
            let h = HybridConfig {
                seq_len: f[0],
                grid: f[1],
                conv1: f[2],
                conv2: f[3],
                d_model: f[4],
                heads: f[5],
                ffn: f[6],
                layers: f[7],
                head_hidden: f[8],
                classes: f[9],
            };
            if h.d_model % h.heads != 0 || h.grid < 2 {
                return Err(ParamsError::Corrupt("inconsistent hybrid config".into()));
            }
            ModelConfig::Hybrid(h)
        }
        Arch::Lstm => ModelConfig::Lstm(LstmConfig {
            seq_len: f[0],
            input: f[1],
            hidden: f[2],
            classes: f[3],
        }),
    })
}

pub fn encode_params(model: &Model<f32>) -> Vec<u8> {
    let fields = config_fields(model.config());
    let mut out = Vec::with_capacity(32 + 4 * (fields.len() + model.params().len()));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(arch_tag(model.arch()));
    out.push(0);
    out.extend_from_slice(&(fields.len() as u32).to_le_bytes());
    for f in fields {
        out.extend_from_slice(&(f as u32).to_le_bytes());
    }
    out.extend_from_slice(&(model.params().len() as u64).to_le_bytes());
    for p in model.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    let crc = CRC32.checksum(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ParamsError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(ParamsError::Truncated)?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ParamsError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Decodes a weight file; `expected` rejects files of another architecture.
pub fn decode_params(bytes: &[u8], expected: Option<Arch>) -> Result<Model<f32>, ParamsError> {
    if bytes.len() < MAGIC.len() || bytes[..4] != MAGIC {
        return Err(ParamsError::BadMagic);
    }
    if bytes.len() < 4 + 4 + 4 {
        return Err(ParamsError::Truncated);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = CRC32.checksum(body);
    if stored != computed {
        return Err(ParamsError::Checksum { stored, computed });
    }
    let mut r = Reader { buf: body, pos: 4 };
    let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
    if version != VERSION {
        return Err(ParamsError::Version(version));
    }
    let arch = match r.take(2)?[0] {
        0 => Arch::Hybrid,
        1 => Arch::Lstm,
        t => return Err(ParamsError::Corrupt(format!("unknown architecture tag {t}"))),
    };
    if let Some(want) = expected.filter(|&w| w != arch) {
        return Err(ParamsError::ArchMismatch { expected: want, found: arch });
    }
    let n_fields = r.u32()? as usize;
    if n_fields > 64 {
        return Err(ParamsError::Corrupt(format!("{n_fields} config fields")));
    }
    let fields = (0..n_fields).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>, _>>()?;
    let config = config_from(arch, &fields)?;
    let n = u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize;
    let data = r.take(n.checked_mul(4).ok_or(ParamsError::Truncated)?)?;
    if r.pos != body.len() {
        return Err(ParamsError::Corrupt(format!("{} trailing bytes", body.len() - r.pos)));
    }
    let params = data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(Model::from_params(config, params)?)
}

pub fn save_params(model: &Model<f32>, path: impl AsRef<Path>) -> Result<(), ParamsError> {
    fs::write(path, encode_params(model))?;
    Ok(())
}

pub fn load_params(path: impl AsRef<Path>, expected: Option<Arch>) -> Result<Model<f32>, ParamsError> {
    decode_params(&fs::read(path)?, expected)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_lstm() -> Model<f32> {
        Model::init(
            ModelConfig::Lstm(LstmConfig {
                seq_len: 3,
                input: 4,
                hidden: 5,
                classes: 15,
            }),
            1,
        )
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m: Model<f32> = Model::init(ModelConfig::standard(Arch::Hybrid), 3);
        let back = decode_params(&encode_params(&m), Some(Arch::Hybrid)).unwrap();
        assert_eq!(back, m);
        let l = small_lstm();
        assert_eq!(decode_params(&encode_params(&l), None).unwrap(), l);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.twt");
        let m = small_lstm();
        save_params(&m, &path).unwrap();
        assert_eq!(load_params(&path, Some(Arch::Lstm)).unwrap(), m);
    }

    #[test]
    fn wrong_architecture_is_rejected() {
        let m: Model<f32> = Model::init(ModelConfig::standard(Arch::Hybrid), 3);
        let err = decode_params(&encode_params(&m), Some(Arch::Lstm)).unwrap_err();
        assert!(matches!(
            err,
            ParamsError::ArchMismatch {
                expected: Arch::Lstm,
                found: Arch::Hybrid
            }
        ));
    }

    #[test]
    fn corruption_is_an_integrity_error() {
        let mut bytes = encode_params(&small_lstm());
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x01;
        assert!(matches!(decode_params(&bytes, None), Err(ParamsError::Checksum { .. })));
        let n = bytes.len();
        let mut bytes = encode_params(&small_lstm());
        bytes[n - 1] ^= 0xFF;
        assert!(matches!(decode_params(&bytes, None), Err(ParamsError::Checksum { .. })));
    }

    #[test]
    fn bad_magic_and_truncation() {
        assert!(matches!(decode_params(b"nope", None), Err(ParamsError::BadMagic)));
        let bytes = encode_params(&small_lstm());
        assert!(decode_params(&bytes[..bytes.len() - 10], None).is_err());
    }
}
