//! Versioned binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "SIDAECKP" | u32 format_version | u64 header_len | header JSON
//! u64 entry_count
//! entry* = u32 name_len | name | u8 dtype | u32 ndim | u64 dim* | u64 byte_len | bytes
//! ```
//!
//! Entries are ordered and named `param/…`, `bn/…/{mean,var}` and
//! `momentum/…`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::Model;
use crate::tensor::{DType, Element, RunningStats, Tensor};

pub const MAGIC: &[u8; 8] = b"SIDAECKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub model_kind: String,
    pub epoch: usize,
    pub step: usize,
    /// Resolved experiment configuration.
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub bytes: Vec<u8>,
}

impl Entry {
    pub fn from_slice<T: Element>(name: impl Into<String>, shape: &[usize], values: &[T]) -> Self {
        let mut bytes = Vec::with_capacity(values.len() * T::DTYPE.size());
        for &v in values {
            v.write_le(&mut bytes);
        }
        Entry {
            name: name.into(),
            dtype: T::DTYPE,
            shape: shape.to_vec(),
            bytes,
        }
    }

    pub fn values<T: Element>(&self) -> Result<Vec<T>> {
        if self.dtype != T::DTYPE {
            return Err(Error::Config(format!(
                "checkpoint entry {} has dtype {:?}, expected {:?}",
                self.name,
                self.dtype,
                T::DTYPE
            )));
        }
        Ok(self.bytes.chunks(T::DTYPE.size()).map(T::read_le).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub entries: Vec<Entry>,
}

fn stats_entries(prefix: &str, stats: &RunningStats<f32>, out: &mut Vec<Entry>) {
    let n = stats.features();
    out.push(Entry::from_slice(format!("bn/{prefix}/mean"), &[n], &stats.mean.borrow()));
    out.push(Entry::from_slice(format!("bn/{prefix}/var"), &[n], &stats.var.borrow()));
}

impl Checkpoint {
    /// Snapshot of a model's parameters and running statistics.
    pub fn capture(model: &Model, epoch: usize, step: usize, config: serde_json::Value) -> Self {
        let mut entries = Vec::new();
        for (name, t) in model.named_parameters() {
            entries.push(Entry::from_slice(format!("param/{name}"), t.shape(), &t.data()));
        }
        for (name, stats) in model.named_buffers() {
            stats_entries(&name, stats, &mut entries);
        }
        Checkpoint {
            header: CheckpointHeader {
                format_version: FORMAT_VERSION,
                model_kind: model.kind.name().to_string(),
                epoch,
                step,
                config,
            },
            entries,
        }
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn entries_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a Entry> + 'a {
        self.entries.iter().filter(move |e| e.name.starts_with(prefix))
    }

    fn load_tensor(&self, key: &str, t: &Tensor) -> Result<()> {
        let e = self
            .get(key)
            .ok_or_else(|| Error::Config(format!("checkpoint is missing `{key}`")))?;
        if e.shape != t.shape() {
            return Err(Error::Config(format!(
                "checkpoint `{key}` has shape {:?}, model expects {:?}",
                e.shape,
                t.shape()
            )));
        }
        t.set_data(e.values()?)
    }

    fn load_stats(&self, prefix: &str, stats: &RunningStats<f32>) -> Result<()> {
        for (field, cell) in [("mean", &stats.mean), ("var", &stats.var)] {
            let key = format!("bn/{prefix}/{field}");
            let e = self
                .get(&key)
                .ok_or_else(|| Error::Config(format!("checkpoint is missing `{key}`")))?;
            if e.shape != [stats.features()] {
                return Err(Error::Config(format!("checkpoint `{key}` has shape {:?}", e.shape)));
            }
            *cell.borrow_mut() = e.values()?;
        }
        Ok(())
    }

    /// Copies every parameter and running statistic into `model`, checking
    /// names and shapes against the model's configuration.
    pub fn restore(&self, model: &Model) -> Result<()> {
        if self.header.model_kind != model.kind.name() {
            return Err(Error::Config(format!(
                "checkpoint holds a {} model, not {}",
                self.header.model_kind,
                model.kind.name()
            )));
        }
        for (name, t) in model.named_parameters() {
            self.load_tensor(&format!("param/{name}"), &t)?;
        }
        for (name, stats) in model.named_buffers() {
            self.load_stats(&name, stats)?;
        }
        Ok(())
    }

    /// Restores a named subset of parameters and statistics.
    pub fn restore_parts(&self, params: &[(String, Tensor)], buffers: &[(String, &RunningStats<f32>)]) -> Result<()> {
        for (name, t) in params {
            self.load_tensor(&format!("param/{name}"), t)?;
        }
        for (name, stats) in buffers {
            self.load_stats(name, stats)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.header.format_version.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(e.dtype.tag());
            out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
            for &d in &e.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&(e.bytes.len() as u64).to_le_bytes());
            out.extend_from_slice(&e.bytes);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: "not a checkpoint (bad magic)".into(),
            });
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format {
                offset: 8,
                message: format!("unsupported checkpoint version {version}"),
            });
        }
        let header_len = r.u64()? as usize;
        let at = r.pos;
        let header: CheckpointHeader = serde_json::from_slice(r.take(header_len)?).map_err(|e| Error::Format {
            offset: at,
            message: format!("header: {e}"),
        })?;
        let count = r.u64()? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let at = r.pos;
            let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| Error::Format {
                offset: at,
                message: "entry name is not UTF-8".into(),
            })?;
            let at = r.pos;
            let dtype = DType::from_tag(r.take(1)?[0]).ok_or_else(|| Error::Format {
                offset: at,
                message: "unknown dtype tag".into(),
            })?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let at = r.pos;
            let byte_len = r.u64()? as usize;
            if byte_len != shape.iter().product::<usize>() * dtype.size() {
                return Err(Error::Format {
                    offset: at,
                    message: format!("entry {name}: {byte_len} bytes do not match shape {shape:?}"),
                });
            }
            let bytes = r.take(byte_len)?.to_vec();
            entries.push(Entry {
                name,
                dtype,
                shape,
                bytes,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format {
                offset: r.pos,
                message: "trailing bytes".into(),
            });
        }
        Ok(Checkpoint { header, entries })
    }

    /// Writes atomically through a sibling temporary file.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Format {
                offset: self.pos,
                message: "unexpected end of checkpoint".into(),
            }),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn checkpoint_file_name(epoch: usize) -> String {
    format!("epoch_{epoch:04}.ckpt")
}

/// Epochs with a checkpoint file in `dir`, ascending.
pub fn available_epochs(dir: &Path) -> Vec<usize> {
    let mut epochs: Vec<usize> = fs::read_dir(dir)
        .into_iter()
        .flatten()
        .flatten()
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            name.strip_prefix("epoch_")?.strip_suffix(".ckpt")?.parse().ok()
        })
        .collect();
    epochs.sort_unstable();
    epochs
}

pub fn checkpoint_path(dir: &Path, epoch: usize) -> Result<PathBuf> {
    let path = dir.join(checkpoint_file_name(epoch));
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingCheckpoint {
            dir: dir.to_path_buf(),
            requested: epoch,
            available: available_epochs(dir),
        })
    }
}

/// SHA-256 over parameter values and running statistics, in order.
pub fn fingerprint(params: &[(String, Tensor)], buffers: &[(String, &RunningStats<f32>)]) -> String {
    let mut h = Sha256::new();
    for (name, t) in params {
        h.update(name.as_bytes());
        for v in t.data().iter() {
            h.update(v.to_le_bytes());
        }
    }
    for (name, s) in buffers {
        h.update(name.as_bytes());
        for v in s.mean.borrow().iter().chain(s.var.borrow().iter()) {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{BackboneKind, EncoderConfig, ModelKind};
    use crate::tensor::Mode;

    fn model(kind: ModelKind, seed: u64) -> Model {
        Model::new(kind, EncoderConfig::new(BackboneKind::Tiny, 16).unwrap(), seed).unwrap()
    }

    #[test]
    fn bytes_round_trip() {
        let m = model(ModelKind::Sidae, 0);
        let x = Tensor::full(&[2, 3, 32, 32], 0.3f32);
        m.sidae_forward(&x, &x, Mode::Train).unwrap();
        let ck = Checkpoint::capture(&m, 3, 17, serde_json::json!({"w": 0.5}));
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        let fresh = model(ModelKind::Sidae, 9);
        back.restore(&fresh).unwrap();
        let fp = |m: &Model| fingerprint(&m.named_parameters(), &m.named_buffers());
        assert_eq!(fp(&fresh), fp(&m));
    }

    #[test]
    fn restore_rejects_mismatches() {
        let ck = Checkpoint::capture(&model(ModelKind::Simsiam, 0), 0, 0, serde_json::Value::Null);
        assert!(matches!(ck.restore(&model(ModelKind::Dae, 0)), Err(Error::Config(_))));
        let wide = Model::new(ModelKind::Simsiam, EncoderConfig::new(BackboneKind::Tiny, 32).unwrap(), 0).unwrap();
        assert!(matches!(ck.restore(&wide), Err(Error::Config(_))));
    }

    #[test]
    fn simsiam_checkpoint_has_no_decoder() {
        let ck = Checkpoint::capture(&model(ModelKind::Simsiam, 0), 0, 0, serde_json::Value::Null);
        assert!(ck.entries.iter().all(|e| !e.name.contains("decoder")));
        assert!(ck.entries.iter().any(|e| e.name.starts_with("param/predictor")));
    }

    #[test]
    fn corrupt_input_fails_closed() {
        let bytes = Checkpoint::capture(&model(ModelKind::Dae, 0), 0, 0, serde_json::Value::Null).to_bytes();
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Format { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn missing_checkpoint_lists_available() {
        let dir = tempfile::tempdir().unwrap();
        let ck = Checkpoint::capture(&model(ModelKind::Dae, 0), 25, 0, serde_json::Value::Null);
        ck.save(&dir.path().join(checkpoint_file_name(25))).unwrap();
        ck.save(&dir.path().join(checkpoint_file_name(50))).unwrap();
        assert_eq!(available_epochs(dir.path()), vec![25, 50]);
        match checkpoint_path(dir.path(), 30) {
            Err(Error::MissingCheckpoint { available, .. }) => assert_eq!(available, vec![25, 50]),
            other => panic!("{other:?}"),
        }
    }
}
