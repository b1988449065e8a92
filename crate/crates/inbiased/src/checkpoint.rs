//! Versioned checkpoint container.
//!
//! One file stores everything a run needs to stop and continue: parameters
//! of both networks, optimizer momentum buffers, the config hash, and the
//! number of completed epochs. [`export_inference`] rewrites a full
//! checkpoint into a smaller one holding only the primary network, which is
//! the only network used at inference time.
//!
//! # File layout (little-endian)
//!
//! ```text
//! magic            8 bytes  b"IBDCKPT1"
//! version          u32      currently 1
//! header length    u64
//! header           JSON     [`CheckpointMeta`]
//! tensor count     u64
//! per tensor:
//!   key length     u32      then UTF-8 key, e.g. "primary/param/0:fc1.w"
//!   element width  u8       4 (f32) or 8 (f64)
//!   rank           u32
//!   dims           u64 × rank
//!   data           width × product(dims) bytes, logical row-major order
//! digest           32 bytes SHA-256 over everything above
//! ```
//!
//! Floats are stored at their natural width, so a save/load round trip is
//! bit-exact. Files are written to a temporary sibling and renamed into
//! place, so a crash mid-write never clobbers the previous checkpoint.

use crate::error::{Error, Result};
use crate::models::{build_model, Arch, Model};
use crate::nn::Sgd;
use crate::num::Scalar;
use crate::record::EpochMetrics;
use crate::rng::stream;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{ArrayD, ArrayViewD, IxDyn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

const MAGIC: &[u8; 8] = b"IBDCKPT1";
const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

/// What a checkpoint file contains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    /// Both networks plus optimizer state; supports resuming training.
    Full,
    /// Primary network only; supports evaluation and deployment.
    Inference,
}

/// Self-describing header stored inside every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: CheckpointKind,
    /// Training mode that produced the file, e.g. `inbiased`.
    pub mode: String,
    /// Hash of the resolved training configuration.
    pub config_hash: String,
    /// Completed epochs at save time.
    pub epoch: usize,
    /// Epochs the run was configured for.
    pub total_epochs: usize,
    pub dataset: String,
    pub arch: String,
    pub seed: u64,
    pub num_classes: usize,
    /// Primary-network input as (channels, height, width).
    pub input_shape: (usize, usize, usize),
    /// Peer-network input, present for two-network modes.
    pub peer_input_shape: Option<(usize, usize, usize)>,
    /// Class-folder names in label order; folder evaluation validates
    /// against this list.
    pub label_map: Vec<String>,
    /// Byte width of the parameter scalars (4 = f32, 8 = f64).
    pub scalar_width: usize,
    /// Per-epoch metric history up to `epoch`.
    pub history: Vec<EpochMetrics>,
}

/// A full checkpoint loaded back into live objects, ready to resume.
pub struct TrainState<F: Scalar> {
    pub meta: CheckpointMeta,
    pub primary: Box<dyn Model<F>>,
    pub peer: Option<Box<dyn Model<F>>>,
    /// Momentum buffers for the primary network's optimizer, in parameter
    /// order; empty if no step had been taken.
    pub opt_primary: Vec<ArrayD<F>>,
    pub opt_peer: Vec<ArrayD<F>>,
}

// ---------------------------------------------------------------------------
// Tensor block encoding
// ---------------------------------------------------------------------------

/// One decoded tensor. Data is held as `f64`, which represents both stored
/// widths exactly; `width` remembers the on-disk element size.
struct RawTensor {
    width: u8,
    dims: Vec<usize>,
    data: Vec<f64>,
}

fn push_tensor<F: Scalar>(buf: &mut Vec<u8>, key: &str, view: ArrayViewD<'_, F>) {
    let width = std::mem::size_of::<F>() as u8;
    push_key_and_dims(buf, key, width, view.shape());
    if width == 4 {
        for v in view.iter() {
            buf.extend_from_slice(&v.to_f32().expect("f32 scalar").to_le_bytes());
        }
    } else {
        for v in view.iter() {
            buf.extend_from_slice(&v.to_f64().expect("f64 scalar").to_le_bytes());
        }
    }
}

fn push_tensor_f64(buf: &mut Vec<u8>, key: &str, dims: &[usize], data: &[f64]) {
    push_key_and_dims(buf, key, 8, dims);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn push_key_and_dims(buf: &mut Vec<u8>, key: &str, width: u8, dims: &[usize]) {
    buf.write_u32::<LittleEndian>(key.len() as u32).unwrap();
    buf.extend_from_slice(key.as_bytes());
    buf.push(width);
    buf.write_u32::<LittleEndian>(dims.len() as u32).unwrap();
    for &d in dims {
        buf.write_u64::<LittleEndian>(d as u64).unwrap();
    }
}

fn read_tensor(cur: &mut &[u8]) -> Result<(String, RawTensor)> {
    let key_len = cur.read_u32::<LittleEndian>()? as usize;
    let mut key_bytes = vec![0u8; key_len];
    cur.read_exact(&mut key_bytes)?;
    let key = String::from_utf8(key_bytes)
        .map_err(|_| Error::Checkpoint("tensor key is not valid UTF-8".into()))?;
    let width = cur.read_u8()?;
    if width != 4 && width != 8 {
        return Err(Error::Checkpoint(format!(
            "tensor `{key}` has unsupported element width {width}"
        )));
    }
    let rank = cur.read_u32::<LittleEndian>()? as usize;
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(cur.read_u64::<LittleEndian>()? as usize);
    }
    let count: usize = dims.iter().product();
    let mut data = Vec::with_capacity(count);
    if width == 4 {
        for _ in 0..count {
            data.push(cur.read_f32::<LittleEndian>()? as f64);
        }
    } else {
        for _ in 0..count {
            data.push(cur.read_f64::<LittleEndian>()?);
        }
    }
    Ok((key, RawTensor { width, dims, data }))
}

// ---------------------------------------------------------------------------
// Collecting state out of live models
// ---------------------------------------------------------------------------

fn append_model_tensors<F: Scalar>(
    buf: &mut Vec<u8>,
    model: &mut dyn Model<F>,
    prefix: &str,
) -> usize {
    let mut count = 0;
    for (i, p) in model.params_mut().into_iter().enumerate() {
        push_tensor(buf, &format!("{prefix}/param/{i}:{}", p.name), p.value.view());
        count += 1;
    }
    for (i, (name, stat)) in model.running_stats_mut().into_iter().enumerate() {
        let dims = [stat.len()];
        push_tensor_f64(
            buf,
            &format!("{prefix}/stats/{i}:{name}"),
            &dims,
            stat.as_slice().expect("running stats are contiguous"),
        );
        count += 1;
    }
    count
}

fn append_opt_tensors<F: Scalar>(buf: &mut Vec<u8>, opt: &Sgd<F>, prefix: &str) -> usize {
    for (i, b) in opt.buffers().iter().enumerate() {
        push_tensor(buf, &format!("{prefix}/{i}"), b.view());
    }
    opt.buffers().len()
}

/// Restores parameters and running statistics into a freshly built model.
/// Keys encode position and layer name, so any drift in architecture or
/// ordering is caught rather than silently mis-assigned.
fn apply_model_tensors<F: Scalar>(
    model: &mut dyn Model<F>,
    tensors: &BTreeMap<String, RawTensor>,
    prefix: &str,
) -> Result<()> {
    let want = std::mem::size_of::<F>() as u8;
    for (i, p) in model.params_mut().into_iter().enumerate() {
        let key = format!("{prefix}/param/{i}:{}", p.name);
        let t = tensors
            .get(&key)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{key}`")))?;
        if t.width != want {
            return Err(Error::Checkpoint(format!(
                "tensor `{key}` stored with element width {}, expected {want}",
                t.width
            )));
        }
        if t.dims != p.value.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor `{key}` has shape {:?}, model expects {:?}",
                t.dims,
                p.value.shape()
            )));
        }
        let values: Vec<F> = t
            .data
            .iter()
            .map(|&v| F::from_f64(v).expect("stored scalar fits target type"))
            .collect();
        p.value = ArrayD::from_shape_vec(IxDyn(&t.dims), values).expect("shape checked above");
        p.grad.fill(F::zero());
    }
    for (i, (name, stat)) in model.running_stats_mut().into_iter().enumerate() {
        let key = format!("{prefix}/stats/{i}:{name}");
        let t = tensors
            .get(&key)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{key}`")))?;
        if t.dims != [stat.len()] {
            return Err(Error::Checkpoint(format!(
                "tensor `{key}` has shape {:?}, model expects [{}]",
                t.dims,
                stat.len()
            )));
        }
        for (dst, &src) in stat.iter_mut().zip(&t.data) {
            *dst = src;
        }
    }
    Ok(())
}

fn collect_opt_buffers<F: Scalar>(
    tensors: &BTreeMap<String, RawTensor>,
    prefix: &str,
) -> Result<Vec<ArrayD<F>>> {
    let mut out = Vec::new();
    loop {
        let key = format!("{prefix}/{}", out.len());
        match tensors.get(&key) {
            None => break,
            Some(t) => {
                let values: Vec<F> = t
                    .data
                    .iter()
                    .map(|&v| F::from_f64(v).expect("stored scalar fits target type"))
                    .collect();
                out.push(
                    ArrayD::from_shape_vec(IxDyn(&t.dims), values)
                        .map_err(|e| Error::Checkpoint(format!("tensor `{key}`: {e}")))?,
                );
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Container read/write
// ---------------------------------------------------------------------------

fn write_container(path: &Path, meta: &CheckpointMeta, tensor_block: &[u8], count: usize) -> Result<()> {
    let header = serde_json::to_vec(meta)?;
    let mut buf = Vec::with_capacity(24 + header.len() + tensor_block.len() + DIGEST_LEN);
    buf.extend_from_slice(MAGIC);
    buf.write_u32::<LittleEndian>(FORMAT_VERSION).unwrap();
    buf.write_u64::<LittleEndian>(header.len() as u64).unwrap();
    buf.extend_from_slice(&header);
    buf.write_u64::<LittleEndian>(count as u64).unwrap();
    buf.extend_from_slice(tensor_block);
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);

    let tmp = path.with_extension("ckpt.tmp");
    std::fs::write(&tmp, &buf)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn read_container(path: &Path) -> Result<(CheckpointMeta, BTreeMap<String, RawTensor>)> {
    let buf = std::fs::read(path)?;
    if buf.len() < MAGIC.len() + 4 + 8 + DIGEST_LEN {
        return Err(Error::Checkpoint(format!(
            "{}: file too short to be a checkpoint",
            path.display()
        )));
    }
    let (body, digest) = buf.split_at(buf.len() - DIGEST_LEN);
    let actual = Sha256::digest(body);
    if actual.as_slice() != digest {
        return Err(Error::ChecksumMismatch {
            path: path.to_path_buf(),
            expected: hex(digest),
            actual: hex(&actual),
        });
    }
    let mut cur = body;
    let mut magic = [0u8; 8];
    cur.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: not a checkpoint file (bad magic)",
            path.display()
        )));
    }
    let version = cur.read_u32::<LittleEndian>()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported checkpoint format version {version} (this build reads {FORMAT_VERSION})",
            path.display()
        )));
    }
    let header_len = cur.read_u64::<LittleEndian>()? as usize;
    if header_len > cur.len() {
        return Err(Error::Checkpoint(format!(
            "{}: truncated checkpoint header",
            path.display()
        )));
    }
    let (header, rest) = cur.split_at(header_len);
    let meta: CheckpointMeta = serde_json::from_slice(header)?;
    let mut cur = rest;
    let count = cur.read_u64::<LittleEndian>()? as usize;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let (key, t) = read_tensor(&mut cur)?;
        if tensors.insert(key.clone(), t).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor key `{key}`")));
        }
    }
    if !cur.is_empty() {
        return Err(Error::Checkpoint(format!(
            "{}: {} trailing bytes after tensor block",
            path.display(),
            cur.len()
        )));
    }
    Ok((meta, tensors))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------------------
// Public API
// ---------------------------------------------------------------------------

/// Writes a full training checkpoint: both networks, optimizer momentum
/// buffers, config hash, and epoch counter, in one versioned file.
pub fn save_train_state<F: Scalar>(
    path: &Path,
    meta: &CheckpointMeta,
    primary: &mut dyn Model<F>,
    peer: Option<&mut (dyn Model<F> + 'static)>,
    opt_primary: &Sgd<F>,
    opt_peer: &Sgd<F>,
) -> Result<()> {
    let mut meta = meta.clone();
    meta.kind = CheckpointKind::Full;
    meta.scalar_width = std::mem::size_of::<F>();
    let mut block = Vec::new();
    let mut count = append_model_tensors(&mut block, primary, "primary");
    if let Some(peer) = peer {
        count += append_model_tensors(&mut block, peer, "peer");
        count += append_opt_tensors(&mut block, opt_peer, "opt/peer");
    }
    count += append_opt_tensors(&mut block, opt_primary, "opt/primary");
    write_container(path, &meta, &block, count)
}

/// Rebuilds a model of the checkpointed architecture and overwrites its
/// parameters and running statistics from the stored tensors.
fn rebuild_model<F: Scalar>(
    meta: &CheckpointMeta,
    tensors: &BTreeMap<String, RawTensor>,
    prefix: &str,
    input_shape: (usize, usize, usize),
) -> Result<Box<dyn Model<F>>> {
    let arch = Arch::from_str(&meta.arch)?;
    let mut model = build_model::<F>(
        arch,
        meta.num_classes,
        input_shape,
        &mut stream(meta.seed, &format!("checkpoint/rebuild/{prefix}")),
    )?;
    apply_model_tensors(model.as_mut(), tensors, prefix)?;
    Ok(model)
}

fn check_width<F: Scalar>(meta: &CheckpointMeta, path: &Path) -> Result<()> {
    if meta.scalar_width != std::mem::size_of::<F>() {
        return Err(Error::Config(format!(
            "{}: checkpoint stores {}-byte scalars but the caller asked for {}-byte scalars",
            path.display(),
            meta.scalar_width,
            std::mem::size_of::<F>()
        )));
    }
    Ok(())
}

/// Loads a full checkpoint back into live models and optimizer buffers.
/// Rejects inference-only files, which carry no training state.
pub fn load_train_state<F: Scalar>(path: &Path) -> Result<TrainState<F>> {
    let (meta, tensors) = read_container(path)?;
    if meta.kind != CheckpointKind::Full {
        return Err(Error::Checkpoint(format!(
            "{}: inference-only checkpoint cannot resume training (re-train or pass a full checkpoint)",
            path.display()
        )));
    }
    check_width::<F>(&meta, path)?;
    let primary = rebuild_model::<F>(&meta, &tensors, "primary", meta.input_shape)?;
    let peer = match meta.peer_input_shape {
        Some(shape) => Some(rebuild_model::<F>(&meta, &tensors, "peer", shape)?),
        None => None,
    };
    let opt_primary = collect_opt_buffers::<F>(&tensors, "opt/primary")?;
    let opt_peer = collect_opt_buffers::<F>(&tensors, "opt/peer")?;
    Ok(TrainState {
        meta,
        primary,
        peer,
        opt_primary,
        opt_peer,
    })
}

/// Loads just the primary network for evaluation. Accepts both full and
/// inference-only checkpoints.
pub fn load_model<F: Scalar>(path: &Path) -> Result<(CheckpointMeta, Box<dyn Model<F>>)> {
    let (meta, tensors) = read_container(path)?;
    check_width::<F>(&meta, path)?;
    let model = rebuild_model::<F>(&meta, &tensors, "primary", meta.input_shape)?;
    Ok((meta, model))
}

/// Rewrites `src` as an inference-only checkpoint at `dst`: the primary
/// network's parameters and statistics are kept; the peer network and all
/// optimizer state are dropped.
pub fn export_inference(src: &Path, dst: &Path) -> Result<()> {
    let (mut meta, tensors) = read_container(src)?;
    meta.kind = CheckpointKind::Inference;
    meta.peer_input_shape = None;
    let mut block = Vec::new();
    let mut count = 0;
    for (key, t) in &tensors {
        if !key.starts_with("primary/") {
            continue;
        }
        push_key_and_dims(&mut block, key, t.width, &t.dims);
        if t.width == 4 {
            for &v in &t.data {
                block.extend_from_slice(&(v as f32).to_le_bytes());
            }
        } else {
            for &v in &t.data {
                block.extend_from_slice(&v.to_le_bytes());
            }
        }
        count += 1;
    }
    write_container(dst, &meta, &block, count)
}

/// SHA-256 over every parameter and running statistic of a model.
/// Evaluation paths use this to prove they left the network untouched.
pub fn param_hash<F: Scalar>(model: &mut dyn Model<F>) -> String {
    let mut block = Vec::new();
    append_model_tensors(&mut block, model, "primary");
    hex(&Sha256::digest(&block))
}
