//! Binary weight files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "HLOC"  u32 version  u32 header_len  header (UTF-8 key=value lines)
//! u32 tensor_count
//! per tensor: u16 name_len  name  u32 rows  u32 cols  u64 offset
//! payload: f64 values, row-major, offsets relative to payload start
//! ```
//!
//! The header carries every hyperparameter plus the dataset layout, the
//! coordinate bounds and the training stage, so a file fully determines the
//! network shape. Loading rebuilds that shape and requires the tensor
//! directory to match it exactly.

use std::collections::BTreeMap;
use std::path::Path;

use super::{HierLocModel, HyperParams, TrainingStage};
use crate::dataset::{CoordinateBounds, DatasetLayout, DatasetMeta};
use crate::error::{Error, Result};
use crate::nn::Params;

pub const MAGIC: &[u8; 4] = b"HLOC";
pub const FORMAT_VERSION: u32 = 1;

fn header_text(model: &HierLocModel) -> String {
    let m = &model.meta;
    let mut pairs: Vec<(&str, String)> = model.params.to_pairs();
    pairs.extend([
        ("ap_count", m.layout.ap_count.to_string()),
        ("building_count", m.layout.building_count.to_string()),
        ("floor_count", m.layout.floor_count.to_string()),
        ("min_x", m.bounds.min_x.to_string()),
        ("max_x", m.bounds.max_x.to_string()),
        ("min_y", m.bounds.min_y.to_string()),
        ("max_y", m.bounds.max_y.to_string()),
        ("stage", model.stage.name().to_string()),
    ]);
    pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

pub fn save_model(model: &HierLocModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let header = header_text(model);
    let tensors = model.net.params();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    let mut offset = 0u64;
    for (name, m) in &tensors {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
        out.extend_from_slice(&offset.to_le_bytes());
        offset += 8 * m.data().len() as u64;
    }
    for (_, m) in &tensors {
        for v in m.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, out).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated(format!(
                "needed {n} bytes for {what} at offset {}, {} left",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

struct Entry {
    rows: usize,
    cols: usize,
    offset: usize,
}

struct Parsed {
    model: HierLocModel,
    entries: BTreeMap<String, Entry>,
    payload_start: usize,
}

fn parse_header(text: &str) -> Result<HierLocModel> {
    let mut kv = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("header line `{line}` is not key=value")))?;
        if kv.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
            return Err(Error::Format(format!("duplicate header key `{k}`")));
        }
    }
    let mut take = |k: &str| kv.remove(k).ok_or_else(|| Error::Format(format!("header lacks `{k}`")));
    let mut params = HyperParams::default();
    for key in super::HYPERPARAM_KEYS {
        let v = take(key)?;
        params.set(key, &v).map_err(|e| Error::Format(e.to_string()))?;
    }
    fn num<T: std::str::FromStr>(k: &str, v: String) -> Result<T> {
        v.parse().map_err(|_| Error::Format(format!("header `{k}` has bad value `{v}`")))
    }
    let layout = DatasetLayout {
        ap_count: num("ap_count", take("ap_count")?)?,
        building_count: num("building_count", take("building_count")?)?,
        floor_count: num("floor_count", take("floor_count")?)?,
    };
    let bounds = CoordinateBounds {
        min_x: num("min_x", take("min_x")?)?,
        max_x: num("max_x", take("max_x")?)?,
        min_y: num("min_y", take("min_y")?)?,
        max_y: num("max_y", take("max_y")?)?,
    };
    let stage_name = take("stage")?;
    let stage = TrainingStage::from_name(&stage_name).ok_or_else(|| Error::Format(format!("unknown stage `{stage_name}`")))?;
    if let Some(k) = kv.keys().next() {
        return Err(Error::Format(format!("unknown header key `{k}`")));
    }
    let meta = DatasetMeta::new(layout, bounds).map_err(|e| Error::Format(e.to_string()))?;
    let mut model = HierLocModel::new(params, meta).map_err(|e| Error::Format(e.to_string()))?;
    model.stage = stage;
    Ok(model)
}

fn parse(bytes: &[u8]) -> Result<Parsed> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format("bad magic, not a model file".into()));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}, expected {FORMAT_VERSION}")));
    }
    let header_len = r.u32("header length")? as usize;
    let header = std::str::from_utf8(r.take(header_len, "header")?).map_err(|_| Error::Format("header is not UTF-8".into()))?;
    let model = parse_header(header)?;
    let count = r.u32("tensor count")?;
    let mut entries = BTreeMap::new();
    for _ in 0..count {
        let len = r.u16("tensor name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "tensor name")?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let rows = r.u32("tensor rows")? as usize;
        let cols = r.u32("tensor cols")? as usize;
        let offset = r.u64("tensor offset")? as usize;
        if entries.insert(name.clone(), Entry { rows, cols, offset }).is_some() {
            return Err(Error::Format(format!("duplicate tensor `{name}`")));
        }
    }
    Ok(Parsed {
        model,
        entries,
        payload_start: r.pos,
    })
}

/// Copies the tensors accepted by `include` from the file into `model`.
fn fill(parsed: &Parsed, bytes: &[u8], model: &mut HierLocModel, include: impl Fn(&str) -> bool) -> Result<()> {
    let payload = &bytes[parsed.payload_start..];
    for (name, m) in model.net.params_mut() {
        if !include(&name) {
            continue;
        }
        let e = parsed
            .entries
            .get(&name)
            .ok_or_else(|| Error::Format(format!("tensor `{name}` is missing")))?;
        if (e.rows, e.cols) != m.shape() {
            return Err(Error::TensorShape {
                name,
                expected: m.shape(),
                found: (e.rows, e.cols),
            });
        }
        let len = 8 * e.rows * e.cols;
        let end = e.offset.checked_add(len).filter(|&end| end <= payload.len());
        let Some(end) = end else {
            return Err(Error::Truncated(format!("payload of tensor `{name}` runs past the end of the file")));
        };
        for (dst, chunk) in m.data_mut().iter_mut().zip(payload[e.offset..end].chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    Ok(())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_model(path: impl AsRef<Path>) -> Result<HierLocModel> {
    let bytes = read(path.as_ref())?;
    let parsed = parse(&bytes)?;
    let mut model = parsed.model.clone();
    let expected: Vec<String> = model.net.params().into_iter().map(|(n, _)| n).collect();
    if let Some(extra) = parsed.entries.keys().find(|k| !expected.contains(k)) {
        return Err(Error::Format(format!("unexpected tensor `{extra}`")));
    }
    fill(&parsed, &bytes, &mut model, |_| true)?;
    Ok(model)
}

/// Replaces the encoder of a fresh `model` with the one stored at `path` and
/// marks it pretrained. The stored encoder must have the same widths.
pub fn load_encoder_into(model: &mut HierLocModel, path: impl AsRef<Path>) -> Result<()> {
    if model.stage != TrainingStage::Initialized {
        return Err(Error::Stage(format!(
            "an encoder can only be loaded into a fresh model, stage is {}",
            model.stage.name()
        )));
    }
    let bytes = read(path.as_ref())?;
    let parsed = parse(&bytes)?;
    if parsed.model.stage < TrainingStage::Pretrained {
        return Err(Error::Stage("the stored model has no pretrained encoder".into()));
    }
    if parsed.model.meta.layout != model.meta.layout {
        return Err(Error::Format(format!(
            "stored layout {:?} differs from {:?}",
            parsed.model.meta.layout, model.meta.layout
        )));
    }
    let mut staged = model.clone();
    fill(&parsed, &bytes, &mut staged, |n| n.starts_with("encoder."))?;
    staged.stage = TrainingStage::Pretrained;
    *model = staged;
    Ok(())
}
