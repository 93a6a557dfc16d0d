//! Versioned binary checkpoints.
//!
//! ```text
//! offset  size      field
//! 0       8         magic "STYLENET"
//! 8       4         format version, u32 LE (currently 1)
//! 12      1         element width in bytes (4 = f32, 8 = f64)
//! 13      4         metadata length L, u32 LE
//! 17      L         metadata, UTF-8 "key=value\n" lines in a fixed order
//! 17+L    4         tensor count, u32 LE
//!         per tensor, in slot order:
//!           2       name length n, u16 LE
//!           n       name, UTF-8
//!           1       rank r
//!           4*r     extents, u32 LE
//!           8       Adam step count, u64 LE
//!           ...     values, Adam first moment, Adam second moment;
//!                   each prod(extents) little-endian elements
//! end-4   4         CRC-32 (IEEE) of every preceding byte
//! ```
//!
//! Encoding is a pure function of the trainer state, so save, load and save
//! again produces identical bytes.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Arch, ModelParams, Slot};
use crate::optim::AdamState;
use crate::tensor::{Real, Tensor};
use crate::train::{Precision, Preset, TrainConfig, Trainer};

pub const MAGIC: &[u8; 8] = b"STYLENET";
pub const FORMAT_VERSION: u32 = 1;

fn metadata<T: Real>(trainer: &Trainer<T>) -> String {
    let c = &trainer.config;
    let a = trainer.params.arch();
    let adam = trainer.params.adam(Slot::Conv1W);
    let fields: [(&str, String); 20] = [
        ("dataset", trainer.dataset_id.clone()),
        ("epochs_done", trainer.epochs_done.to_string()),
        ("seed", c.seed.to_string()),
        ("rng_stream", (u64::from(trainer.epochs_done) + 1).to_string()),
        ("preset", c.preset.name().to_string()),
        ("precision", c.precision.name().to_string()),
        ("alpha", format!("{:?}", c.alpha)),
        ("learning_rate", format!("{:?}", c.learning_rate)),
        ("epochs", c.epochs.to_string()),
        ("batch_size", c.batch_size.to_string()),
        ("sigma", format!("{:?}", c.sigma)),
        ("adam.beta1", format!("{:?}", adam.beta1)),
        ("adam.beta2", format!("{:?}", adam.beta2)),
        ("adam.epsilon", format!("{:?}", adam.epsilon)),
        ("arch.input_side", a.input_side.to_string()),
        ("arch.num_classes", a.num_classes.to_string()),
        ("arch.conv", format!("{},{}", a.conv1, a.conv2)),
        ("arch.fc", format!("{},{}", a.fc1, a.fc2)),
        ("arch.style", a.style.to_string()),
        ("format", "stylenet-checkpoint".to_string()),
    ];
    fields.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

fn write_tensor_data<T: Real>(t: &Tensor<T>, out: &mut Vec<u8>) {
    for &v in t.data() {
        v.write_le(out);
    }
}

/// Serializes a trainer (parameters, optimizer state, config, progress).
pub fn encode_checkpoint<T: Real>(trainer: &Trainer<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(T::BYTES as u8);
    let meta = metadata(trainer);
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    out.extend_from_slice(&(Slot::ALL.len() as u32).to_le_bytes());
    for slot in Slot::ALL {
        let value = trainer.params.get(slot);
        let adam = trainer.params.adam(slot);
        let name = slot.name().as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(value.rank() as u8);
        for &d in value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&adam.step_count.to_le_bytes());
        write_tensor_data(value, &mut out);
        write_tensor_data(&adam.first_moment, &mut out);
        write_tensor_data(&adam.second_moment, &mut out);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated: needed {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let mut buf = [0u8; 8];
        buf.copy_from_slice(self.take(8)?);
        Ok(u64::from_le_bytes(buf))
    }

    fn tensor<T: Real>(&mut self, shape: &[usize], width: usize) -> Result<Tensor<T>> {
        let n: usize = shape.iter().product();
        let raw = self.take(n.checked_mul(width).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
        let data = raw
            .chunks_exact(width)
            .map(|c| {
                if width == 4 {
                    T::lit(f64::from(f32::read_le(c)))
                } else {
                    T::lit(f64::read_le(c))
                }
            })
            .collect();
        Tensor::new(shape, data).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

fn field<'a>(meta: &'a [(String, String)], key: &str) -> Result<&'a str> {
    meta.iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| Error::Checkpoint(format!("metadata field `{key}` missing")))
}

fn parse_field<V: std::str::FromStr>(meta: &[(String, String)], key: &str) -> Result<V> {
    let raw = field(meta, key)?;
    raw.parse()
        .map_err(|_| Error::Checkpoint(format!("metadata field `{key}` has invalid value `{raw}`")))
}

fn parse_pair(meta: &[(String, String)], key: &str) -> Result<(usize, usize)> {
    let raw = field(meta, key)?;
    let bad = || Error::Checkpoint(format!("metadata field `{key}` has invalid value `{raw}`"));
    let (a, b) = raw.split_once(',').ok_or_else(bad)?;
    Ok((a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?))
}

/// Element width recorded in a checkpoint, after validating its envelope.
pub fn checkpoint_element_width(bytes: &[u8]) -> Result<usize> {
    verify_envelope(bytes)?;
    Ok(usize::from(bytes[12]))
}

fn verify_envelope(bytes: &[u8]) -> Result<()> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    if bytes.len() < 12 {
        return Err(Error::Checkpoint("truncated: missing format version".into()));
    }
    let version = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]);
    if version != FORMAT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    if bytes.len() < 17 + 4 + 4 {
        return Err(Error::Checkpoint("truncated: file shorter than the fixed header".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes([trailer[0], trailer[1], trailer[2], trailer[3]]);
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(Error::Checkpoint(format!(
            "checksum mismatch (stored {stored:08x}, computed {actual:08x}); file is corrupt or truncated"
        )));
    }
    match bytes[12] {
        4 | 8 => Ok(()),
        w => Err(Error::Checkpoint(format!("unsupported element width {w}"))),
    }
}

/// Parses a checkpoint, converting stored values to `T` if needed.
pub fn decode_checkpoint<T: Real>(bytes: &[u8]) -> Result<Trainer<T>> {
    verify_envelope(bytes)?;
    let body = &bytes[..bytes.len() - 4];
    let mut r = Reader { bytes: body, pos: 13 };
    let width = usize::from(bytes[12]);
    let meta_len = r.u32()? as usize;
    let meta_raw = std::str::from_utf8(r.take(meta_len)?)
        .map_err(|_| Error::Checkpoint("metadata is not UTF-8".into()))?;
    let meta: Vec<(String, String)> = meta_raw
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();

    let (conv1, conv2) = parse_pair(&meta, "arch.conv")?;
    let (fc1, fc2) = parse_pair(&meta, "arch.fc")?;
    let arch = Arch {
        input_side: parse_field(&meta, "arch.input_side")?,
        num_classes: parse_field(&meta, "arch.num_classes")?,
        conv1,
        conv2,
        fc1,
        fc2,
        style: parse_field(&meta, "arch.style")?,
    };
    arch.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
    let config = TrainConfig {
        alpha: parse_field(&meta, "alpha")?,
        learning_rate: parse_field(&meta, "learning_rate")?,
        epochs: parse_field(&meta, "epochs")?,
        batch_size: parse_field(&meta, "batch_size")?,
        sigma: parse_field(&meta, "sigma")?,
        seed: parse_field(&meta, "seed")?,
        precision: Precision::parse(field(&meta, "precision")?)
            .ok_or_else(|| Error::Checkpoint("unknown precision".into()))?,
        preset: Preset::parse(field(&meta, "preset")?).ok_or_else(|| Error::Checkpoint("unknown preset".into()))?,
    };
    let (beta1, beta2, epsilon): (f64, f64, f64) = (
        parse_field(&meta, "adam.beta1")?,
        parse_field(&meta, "adam.beta2")?,
        parse_field(&meta, "adam.epsilon")?,
    );

    let count = r.u32()? as usize;
    if count != Slot::ALL.len() {
        return Err(Error::Checkpoint(format!("expected {} tensors, found {count}", Slot::ALL.len())));
    }
    let mut values = Vec::with_capacity(count);
    let mut adam = Vec::with_capacity(count);
    for slot in Slot::ALL {
        let name_len = usize::from(r.u16()?);
        let name = std::str::from_utf8(r.take(name_len)?).unwrap_or("<invalid utf-8>");
        if name != slot.name() {
            return Err(Error::Checkpoint(format!("expected tensor `{}`, found `{name}`", slot.name())));
        }
        let rank = usize::from(r.u8()?);
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if shape != arch.shape_of(slot) {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` has shape {shape:?}, architecture expects {:?}",
                arch.shape_of(slot)
            )));
        }
        let step_count = r.u64()?;
        values.push(r.tensor::<T>(&shape, width)?);
        adam.push(AdamState {
            first_moment: r.tensor::<T>(&shape, width)?,
            second_moment: r.tensor::<T>(&shape, width)?,
            step_count,
            learning_rate: config.learning_rate,
            beta1,
            beta2,
            epsilon,
        });
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint(format!("{} unexpected trailing bytes", body.len() - r.pos)));
    }
    let params = ModelParams::from_parts(arch, values, adam).map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(Trainer {
        params,
        config,
        epochs_done: parse_field(&meta, "epochs_done")?,
        dataset_id: field(&meta, "dataset")?.to_string(),
    })
}

/// Writes a checkpoint via a temporary file and rename.
pub fn save_checkpoint<T: Real>(trainer: &Trainer<T>, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode_checkpoint(trainer)).map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming to {}", path.display()), e))
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Trainer<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading checkpoint {}", path.display()), e))?;
    decode_checkpoint(&bytes)
}
