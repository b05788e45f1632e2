//! Self-describing binary checkpoints.
//!
//! Layout (little endian):
//!
//! ```text
//! magic      b"RVQMCKPT"
//! version    u32
//! header     u64 byte length, then UTF-8 JSON (config, skeleton, normalizer,
//!            labels, step counters, flags)
//! tensors    u32 count, then per tensor:
//!              u32 name length, name bytes, u32 rows, u32 cols,
//!              rows·cols f64 values, row-major
//! trailer    b"END."
//! ```
//!
//! Tensor names: network parameters as listed by
//! [`CodecModel::named_params_mut`], `book{i}.codes|ema_count|ema_sum|usage`,
//! and `adam.m.{k}` / `adam.v.{k}` when optimizer state is present.

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::CodecConfig;
use super::model::CodecModel;
use crate::error::{Error, Result};
use crate::motion::{Normalizer, Skeleton};
use crate::nn::{Adam, AdamState};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"RVQMCKPT";
const TRAILER: &[u8; 4] = b"END.";

#[derive(Serialize, Deserialize)]
struct Header {
    config: CodecConfig,
    parents: Vec<Option<usize>>,
    rest_offsets: Vec<[f64; 3]>,
    normalizer: Normalizer,
    labels: Vec<String>,
    step: u64,
    gamma: f64,
    content_cutoff: usize,
    data_initialized: bool,
    pinned_zero: Vec<bool>,
    adam: Option<AdamHeader>,
}

#[derive(Serialize, Deserialize)]
struct AdamHeader {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    slots: usize,
}

fn ck(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Array2<f64>) {
    out.extend((name.len() as u32).to_le_bytes());
    out.extend(name.as_bytes());
    out.extend((t.nrows() as u32).to_le_bytes());
    out.extend((t.ncols() as u32).to_le_bytes());
    for v in t.iter() {
        out.extend(v.to_le_bytes());
    }
}

fn row(v: impl IntoIterator<Item = f64>) -> Array2<f64> {
    let v: Vec<f64> = v.into_iter().collect();
    Array2::from_shape_vec((1, v.len()), v).expect("one row")
}

/// Serialises a model and, optionally, optimizer state.
pub fn checkpoint_bytes(model: &CodecModel, optimizer: Option<&Adam>) -> Result<Vec<u8>> {
    let mut model = model.clone();
    let header = Header {
        config: model.config.clone(),
        parents: model.skeleton.parents().to_vec(),
        rest_offsets: model.skeleton.rest_offsets().iter().map(|v| [v.x, v.y, v.z]).collect(),
        normalizer: model.normalizer.clone(),
        labels: model.labels.clone(),
        step: model.step,
        gamma: model.stack.gamma,
        content_cutoff: model.stack.content_cutoff,
        data_initialized: model.stack.data_initialized,
        pinned_zero: model.stack.books.iter().map(|b| b.pinned_zero).collect(),
        adam: optimizer.map(|a| AdamHeader {
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            step: a.state.step,
            slots: a.state.m.len(),
        }),
    };
    let json = serde_json::to_vec(&header).map_err(|e| ck(format!("header: {e}")))?;
    let mut tensors: Vec<(String, Array2<f64>)> = model
        .named_params_mut()
        .into_iter()
        .map(|(n, p)| (n, p.value.clone()))
        .collect();
    for (i, b) in model.stack.books.iter().enumerate() {
        tensors.push((format!("book{i}.codes"), b.codes.clone()));
        tensors.push((format!("book{i}.ema_count"), row(b.ema_count.iter().copied())));
        tensors.push((format!("book{i}.ema_sum"), b.ema_sum.clone()));
        tensors.push((format!("book{i}.usage"), row(b.usage.iter().map(|&u| u as f64))));
    }
    if let Some(a) = optimizer {
        for (k, (m, v)) in a.state.m.iter().zip(&a.state.v).enumerate() {
            tensors.push((format!("adam.m.{k}"), m.clone()));
            tensors.push((format!("adam.v.{k}"), v.clone()));
        }
    }

    let mut out = Vec::new();
    out.extend(MAGIC);
    out.extend(CHECKPOINT_VERSION.to_le_bytes());
    out.extend((json.len() as u64).to_le_bytes());
    out.extend(&json);
    out.extend((tensors.len() as u32).to_le_bytes());
    for (n, t) in &tensors {
        put_tensor(&mut out, n, t);
    }
    out.extend(TRAILER);
    Ok(out)
}

pub fn save_checkpoint(model: &CodecModel, optimizer: Option<&Adam>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = checkpoint_bytes(model, optimizer)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    data: &'a [u8],
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.data.len() < n {
            return Err(ck("file is truncated"));
        }
        let (a, b) = self.data.split_at(n);
        self.data = b;
        Ok(a)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn read_tensors(r: &mut Reader) -> Result<HashMap<String, Array2<f64>>> {
    let count = r.u32()?;
    let mut map = HashMap::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| ck("tensor name is not UTF-8"))?
            .to_string();
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let bytes = r.take(rows.checked_mul(cols).and_then(|n| n.checked_mul(8)).ok_or_else(|| ck("tensor size overflows"))?)?;
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Array2::from_shape_vec((rows, cols), values).expect("sized above");
        map.insert(name, t);
    }
    Ok(map)
}

fn fill(map: &mut HashMap<String, Array2<f64>>, name: &str, target: &mut Array2<f64>) -> Result<()> {
    let t = map.remove(name).ok_or_else(|| ck(format!("missing tensor {name}")))?;
    if t.dim() != target.dim() {
        return Err(ck(format!(
            "tensor {name} has shape {:?}, the configuration implies {:?}",
            t.dim(),
            target.dim()
        )));
    }
    *target = t;
    Ok(())
}

/// Parses checkpoint bytes into a model and, when stored, optimizer state.
pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<(CodecModel, Option<Adam>)> {
    let mut r = Reader { data: bytes };
    if r.take(MAGIC.len()).map_err(|_| ck("not a checkpoint file"))? != MAGIC {
        return Err(ck("not a checkpoint file (bad magic)"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(ck(format!(
            "format version {version} is not supported (expected {CHECKPOINT_VERSION})"
        )));
    }
    let hlen = usize::try_from(r.u64()?).map_err(|_| ck("header length overflows"))?;
    let header: Header =
        serde_json::from_slice(r.take(hlen)?).map_err(|e| ck(format!("header: {e}")))?;
    let mut map = read_tensors(&mut r)?;
    if r.take(TRAILER.len())? != TRAILER {
        return Err(ck("missing end marker"));
    }
    if !r.data.is_empty() {
        return Err(ck("trailing bytes after end marker"));
    }

    let skeleton = Skeleton::new(
        header.parents,
        header.rest_offsets.iter().map(|v| Vector3::new(v[0], v[1], v[2])).collect(),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = CodecModel::new(header.config, skeleton, header.normalizer, header.labels, &mut rng)
        .map_err(|e| ck(format!("embedded configuration: {e}")))?;
    for (name, p) in model.named_params_mut() {
        fill(&mut map, &name, &mut p.value)?;
        p.zero_grad();
    }
    if header.pinned_zero.len() != model.stack.len() {
        return Err(ck("codebook count disagrees with the configuration"));
    }
    for (i, b) in model.stack.books.iter_mut().enumerate() {
        fill(&mut map, &format!("book{i}.codes"), &mut b.codes)?;
        fill(&mut map, &format!("book{i}.ema_sum"), &mut b.ema_sum)?;
        let mut count = Array2::zeros((1, b.size()));
        fill(&mut map, &format!("book{i}.ema_count"), &mut count)?;
        b.ema_count = count.row(0).to_owned();
        let mut usage = Array2::zeros((1, b.size()));
        fill(&mut map, &format!("book{i}.usage"), &mut usage)?;
        b.usage = usage.iter().map(|&u| u as u64).collect();
        b.pinned_zero = header.pinned_zero[i];
    }
    model.stack.gamma = header.gamma;
    model.stack.content_cutoff = header.content_cutoff;
    model.stack.data_initialized = header.data_initialized;
    model.step = header.step;

    let adam = match header.adam {
        None => None,
        Some(h) => {
            let mut state = AdamState { step: h.step, m: Vec::with_capacity(h.slots), v: Vec::with_capacity(h.slots) };
            for k in 0..h.slots {
                let m = map.remove(&format!("adam.m.{k}")).ok_or_else(|| ck(format!("missing adam.m.{k}")))?;
                let v = map.remove(&format!("adam.v.{k}")).ok_or_else(|| ck(format!("missing adam.v.{k}")))?;
                if m.dim() != v.dim() {
                    return Err(ck(format!("optimizer slot {k} moments disagree in shape")));
                }
                state.m.push(m);
                state.v.push(v);
            }
            Some(Adam { lr: h.lr, beta1: h.beta1, beta2: h.beta2, eps: h.eps, state })
        }
    };
    if let Some(name) = map.keys().next() {
        return Err(ck(format!("unexpected tensor {name}")));
    }
    Ok((model, adam))
}

/// Model and optimizer state (if saved) from a checkpoint file.
pub fn load_training_state(path: impl AsRef<Path>) -> Result<(CodecModel, Option<Adam>)> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<CodecModel> {
    Ok(load_training_state(path)?.0)
}
