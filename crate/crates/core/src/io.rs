//! Little-endian binary formats.
//!
//! | file      | layout |
//! |-----------|--------|
//! | features  | `"QCFV"`, u32 version, u32 N, u32 D, N·D f32 row-major |
//! | labels    | `"QCLB"`, u32 version, u32 N, N u32 |
//! | clusters  | `"QCCD"`, u32 version, u32 count, u32 k, u8 has_mask, then per instance: u32 center, k u32 members, k f64 sims, k u8 mask (if present) |
//! | checkpoint| `"QCKP"`, u32 version, u32 config length, config text, u32 epoch, u64 optimizer step, 32-byte RNG seed, u64 stream, u128 word position, u32 tensor count, tensors |
//!
//! A tensor is u32 name length, UTF-8 name, u32 rank, rank u32 dims, then
//! the f64 values. Checkpoint tensors are the model parameters in layout
//! order followed by `adam.m/<name>` and `adam.v/<name>` for each of them.
//!
//! Every reader rejects bad magic, unknown versions, truncation and trailing
//! bytes with [`Error::Format`].

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::clusterset::{ClusterInstance, FeatureSet};
use crate::error::{Error, Result};
use crate::qtransformer::EncoderParams;
use crate::trainer::{AdamState, Checkpoint, RngState, TrainConfig};

pub const FEATURES_MAGIC: &[u8; 4] = b"QCFV";
pub const LABELS_MAGIC: &[u8; 4] = b"QCLB";
pub const CLUSTERS_MAGIC: &[u8; 4] = b"QCCD";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"QCKP";
pub const VERSION: u32 = 1;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::format(
                self.pos,
                format!(
                    "truncated while reading {what} ({n} bytes wanted, {} left)",
                    self.buf.len() - self.pos
                ),
            )),
        }
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.array::<1>(what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }

    fn u128(&mut self, what: &str) -> Result<u128> {
        Ok(u128::from_le_bytes(self.array(what)?))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array(what)?))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array(what)?))
    }

    /// Element count that must still fit in the remaining bytes.
    fn count(&mut self, what: &str, elem_size: usize) -> Result<usize> {
        let at = self.pos;
        let n = self.u32(what)? as usize;
        if n.saturating_mul(elem_size) > self.buf.len() - self.pos {
            return Err(Error::format(
                at,
                format!("{what} = {n} exceeds remaining file size"),
            ));
        }
        Ok(n)
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != magic {
            return Err(Error::format(
                0,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(magic)
                ),
            ));
        }
        let at = self.pos;
        let version = self.u32("version")?;
        if version != VERSION {
            return Err(Error::format(at, format!("unsupported version {version}")));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(
                self.pos,
                format!("{} trailing bytes", self.buf.len() - self.pos),
            ));
        }
        Ok(())
    }
}

fn header(out: &mut Vec<u8>, magic: &[u8; 4]) {
    out.extend_from_slice(magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
}

fn u32_len(n: usize, what: &str) -> Result<[u8; 4]> {
    u32::try_from(n)
        .map(u32::to_le_bytes)
        .map_err(|_| Error::contract(format!("{what} {n} does not fit in u32")))
}

/// Writes `bytes` to a sibling temp file and renames it over `path`, so a
/// failed write never leaves a partial file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::Io(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    let res = fs::write(&tmp, bytes).and_then(|_| fs::rename(&tmp, path));
    if res.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    res.map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// features & labels

/// Feature values are stored as f32.
pub fn encode_features(features: &Array2<f64>) -> Result<Vec<u8>> {
    let (n, d) = features.dim();
    if n == 0 {
        return Err(Error::contract("refusing to write an empty feature set"));
    }
    let mut out = Vec::with_capacity(16 + 4 * n * d);
    header(&mut out, FEATURES_MAGIC);
    out.extend_from_slice(&u32_len(n, "N")?);
    out.extend_from_slice(&u32_len(d, "D")?);
    for v in features.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_features(bytes: &[u8]) -> Result<Array2<f64>> {
    let mut r = Reader::new(bytes);
    r.header(FEATURES_MAGIC)?;
    let at = r.pos;
    let n = r.u32("N")? as usize;
    let d = r.u32("D")? as usize;
    if n == 0 || d == 0 {
        return Err(Error::format(at, format!("empty feature matrix {n}×{d}")));
    }
    let need = n.saturating_mul(d).saturating_mul(4);
    if need > bytes.len() - r.pos {
        r.take(need, "feature values")?;
    }
    let mut values = Vec::with_capacity(n * d);
    for _ in 0..n * d {
        values.push(r.f32("feature value")? as f64);
    }
    r.finish()?;
    Ok(Array2::from_shape_vec((n, d), values).expect("sized above"))
}

pub fn encode_labels(labels: &[u32]) -> Result<Vec<u8>> {
    if labels.is_empty() {
        return Err(Error::contract("refusing to write an empty label file"));
    }
    let mut out = Vec::with_capacity(12 + 4 * labels.len());
    header(&mut out, LABELS_MAGIC);
    out.extend_from_slice(&u32_len(labels.len(), "N")?);
    for l in labels {
        out.extend_from_slice(&l.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_labels(bytes: &[u8]) -> Result<Vec<u32>> {
    let mut r = Reader::new(bytes);
    r.header(LABELS_MAGIC)?;
    let at = r.pos;
    let n = r.count("N", 4)?;
    if n == 0 {
        return Err(Error::format(at, "empty label file"));
    }
    let labels = (0..n).map(|_| r.u32("label")).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok(labels)
}

pub fn write_features(path: &Path, features: &FeatureSet) -> Result<()> {
    write_atomic(path, &encode_features(features.features())?)
}

/// Reads a feature file and, when given, its label file.
pub fn read_features(path: &Path, labels: Option<&Path>) -> Result<FeatureSet> {
    let x = decode_features(&read_file(path)?)?;
    let labels = labels.map(read_labels).transpose()?;
    FeatureSet::new(x, labels)
}

pub fn write_labels(path: &Path, labels: &[u32]) -> Result<()> {
    write_atomic(path, &encode_labels(labels)?)
}

pub fn read_labels(path: &Path) -> Result<Vec<u32>> {
    decode_labels(&read_file(path)?)
}

// ---------------------------------------------------------------------------
// cluster datasets

pub fn encode_clusters(clusters: &[ClusterInstance]) -> Result<Vec<u8>> {
    let first = clusters
        .first()
        .ok_or_else(|| Error::contract("refusing to write an empty cluster dataset"))?;
    let k = first.k();
    let has_mask = first.mask.is_some();
    let mut out = Vec::new();
    header(&mut out, CLUSTERS_MAGIC);
    out.extend_from_slice(&u32_len(clusters.len(), "instance count")?);
    out.extend_from_slice(&u32_len(k, "k")?);
    out.push(has_mask as u8);
    for c in clusters {
        if c.k() != k || c.sims.len() != k || c.mask.is_some() != has_mask {
            return Err(Error::contract(format!(
                "cluster {} does not match the dataset shape (k = {k}, mask = {has_mask})",
                c.center
            )));
        }
        out.extend_from_slice(&u32_len(c.center, "center")?);
        for &m in &c.members {
            out.extend_from_slice(&u32_len(m, "member")?);
        }
        for s in &c.sims {
            out.extend_from_slice(&s.to_le_bytes());
        }
        if let Some(mask) = &c.mask {
            out.extend(mask.iter().map(|&b| b as u8));
        }
    }
    Ok(out)
}

pub fn decode_clusters(bytes: &[u8]) -> Result<Vec<ClusterInstance>> {
    let mut r = Reader::new(bytes);
    r.header(CLUSTERS_MAGIC)?;
    let at = r.pos;
    let count = r.u32("instance count")? as usize;
    let k = r.u32("k")? as usize;
    if count == 0 || k == 0 {
        return Err(Error::format(at, "empty cluster dataset"));
    }
    let at = r.pos;
    let has_mask = match r.u8("mask flag")? {
        0 => false,
        1 => true,
        v => return Err(Error::format(at, format!("mask flag {v} is not 0 or 1"))),
    };
    let per = 4 + k * (4 + 8 + has_mask as usize);
    if count.saturating_mul(per) > bytes.len() - r.pos {
        r.take(count.saturating_mul(per), "cluster instances")?;
    }
    let mut clusters = Vec::with_capacity(count);
    for _ in 0..count {
        let center = r.u32("center")? as usize;
        let members = (0..k)
            .map(|_| r.u32("member").map(|m| m as usize))
            .collect::<Result<Vec<_>>>()?;
        let sims = (0..k)
            .map(|_| r.f64("similarity"))
            .collect::<Result<Vec<_>>>()?;
        let mask = if has_mask {
            let mut m = Vec::with_capacity(k);
            for _ in 0..k {
                let at = r.pos;
                m.push(match r.u8("mask")? {
                    0 => false,
                    1 => true,
                    v => return Err(Error::format(at, format!("mask byte {v} is not 0 or 1"))),
                });
            }
            Some(m)
        } else {
            None
        };
        clusters.push(ClusterInstance {
            center,
            members,
            sims,
            mask,
        });
    }
    r.finish()?;
    Ok(clusters)
}

pub fn write_clusters(path: &Path, clusters: &[ClusterInstance]) -> Result<()> {
    write_atomic(path, &encode_clusters(clusters)?)
}

pub fn read_clusters(path: &Path) -> Result<Vec<ClusterInstance>> {
    decode_clusters(&read_file(path)?)
}

// ---------------------------------------------------------------------------
// checkpoints

fn push_tensor(out: &mut Vec<u8>, name: &str, shape: &[usize], values: &[f64]) -> Result<()> {
    out.extend_from_slice(&u32_len(name.len(), "tensor name length")?);
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&u32_len(shape.len(), "rank")?);
    for &d in shape {
        out.extend_from_slice(&u32_len(d, "dimension")?);
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

struct RawTensor {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

fn read_tensor(r: &mut Reader<'_>) -> Result<RawTensor> {
    let name_len = r.count("tensor name length", 1)?;
    let at = r.pos;
    let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
        .map_err(|_| Error::format(at, "tensor name is not UTF-8"))?
        .to_string();
    let rank = r.count("rank", 4)?;
    let shape = (0..rank)
        .map(|_| r.u32("dimension").map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
    let len = match len {
        Some(l) if l.saturating_mul(8) <= r.buf.len() - r.pos => l,
        _ => {
            return Err(Error::format(
                r.pos,
                format!("tensor {name} of shape {shape:?} exceeds remaining file size"),
            ))
        }
    };
    let values = (0..len)
        .map(|_| r.f64("tensor value"))
        .collect::<Result<Vec<_>>>()?;
    Ok(RawTensor {
        name,
        shape,
        values,
    })
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let layout = ckpt.params.layout();
    if ckpt.adam.m.len() != layout.total() || ckpt.adam.v.len() != layout.total() {
        return Err(Error::contract(
            "optimizer state does not match parameter count",
        ));
    }
    let mut out = Vec::new();
    header(&mut out, CHECKPOINT_MAGIC);
    let config = ckpt.config.to_kv();
    out.extend_from_slice(&u32_len(config.len(), "config length")?);
    out.extend_from_slice(config.as_bytes());
    out.extend_from_slice(&ckpt.epoch.to_le_bytes());
    out.extend_from_slice(&ckpt.adam.step.to_le_bytes());
    out.extend_from_slice(&ckpt.rng.seed);
    out.extend_from_slice(&ckpt.rng.stream.to_le_bytes());
    out.extend_from_slice(&ckpt.rng.word_pos.to_le_bytes());
    out.extend_from_slice(&u32_len(3 * layout.tensors().len(), "tensor count")?);
    for spec in layout.tensors() {
        push_tensor(
            &mut out,
            &spec.name,
            &spec.shape,
            &ckpt.params.values()[spec.range()],
        )?;
    }
    for (prefix, buf) in [("adam.m/", &ckpt.adam.m), ("adam.v/", &ckpt.adam.v)] {
        for spec in layout.tensors() {
            push_tensor(
                &mut out,
                &format!("{prefix}{}", spec.name),
                &spec.shape,
                &buf[spec.range()],
            )?;
        }
    }
    Ok(out)
}

/// Parses a checkpoint. Tensors that do not match the layout implied by the
/// stored config are a [`Error::Contract`] error.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes);
    r.header(CHECKPOINT_MAGIC)?;
    let config_len = r.count("config length", 1)?;
    let at = r.pos;
    let text = std::str::from_utf8(r.take(config_len, "config")?)
        .map_err(|_| Error::format(at, "config block is not UTF-8"))?;
    let config = TrainConfig::from_kv(text).map_err(|e| Error::format(at, e.to_string()))?;
    let epoch = r.u32("epoch")?;
    let step = r.u64("optimizer step")?;
    let seed = r.array::<32>("rng seed")?;
    let stream = r.u64("rng stream")?;
    let word_pos = r.u128("rng word position")?;
    let count = r.count("tensor count", 12)?;
    let tensors = (0..count)
        .map(|_| read_tensor(&mut r))
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;

    let layout = config
        .encoder_config()
        .validate()
        .map(|_| config.encoder_config().layout())
        .map_err(|e| Error::contract(format!("checkpoint config invalid: {e}")))?;
    if tensors.len() != 3 * layout.tensors().len() {
        return Err(Error::contract(format!(
            "checkpoint holds {} tensors, config implies {}",
            tensors.len(),
            3 * layout.tensors().len()
        )));
    }
    let mut buffers = [
        vec![0.0; layout.total()],
        vec![0.0; layout.total()],
        vec![0.0; layout.total()],
    ];
    for (i, t) in tensors.into_iter().enumerate() {
        let (group, spec) = (
            i / layout.tensors().len(),
            &layout.tensors()[i % layout.tensors().len()],
        );
        let expected = match group {
            0 => spec.name.clone(),
            1 => format!("adam.m/{}", spec.name),
            _ => format!("adam.v/{}", spec.name),
        };
        if t.name != expected || t.shape != spec.shape {
            return Err(Error::contract(format!(
                "tensor {} {:?} does not match expected {expected} {:?}",
                t.name, t.shape, spec.shape
            )));
        }
        buffers[group][spec.range()].copy_from_slice(&t.values);
    }
    let [values, m, v] = buffers;
    Ok(Checkpoint {
        params: EncoderParams::from_values(layout, values)?,
        config,
        epoch,
        adam: AdamState { m, v, step },
        rng: RngState {
            seed,
            stream,
            word_pos,
        },
    })
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_atomic(path, &encode_checkpoint(ckpt)?)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&read_file(path)?)
}
