//! Versioned binary checkpoints.
//!
//! ```text
//! magic "DXGRCKPT" | version u32 | meta_len u32 | meta (JSON) |
//! per head (graspness, denoiser, joints):
//!   n_layers u32 | per layer: n_in u32, n_out u32, activation u8, residual u8 |
//!   per layer: weight (row-major f64), bias (f64)
//! ```
//! All integers and floats are little-endian.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::descriptor::{DescriptorConfig, FeatureScaling};
use super::heads::{GraspNet, HeadConfig};
use super::mlp::{Activation, LayerSpec, Mlp};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"DXGRCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub heads: HeadConfig,
    pub input: FeatureScaling,
    pub descriptor: DescriptorConfig,
    /// Hashes of the configuration and data the weights were trained on.
    pub provenance: BTreeMap<String, String>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn write_net(out: &mut Vec<u8>, net: &Mlp) {
    put_u32(out, net.layers.len() as u32);
    for s in net.specs() {
        put_u32(out, s.n_in as u32);
        put_u32(out, s.n_out as u32);
        out.push(s.activation.code());
        out.push(u8::from(s.residual));
    }
    for p in net.flat_params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
}

pub fn encode_checkpoint(net: &GraspNet, descriptor: &DescriptorConfig, provenance: BTreeMap<String, String>) -> Vec<u8> {
    let meta = CheckpointMeta {
        heads: net.config.clone(),
        input: net.input.clone(),
        descriptor: descriptor.clone(),
        provenance,
    };
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    let json = serde_json::to_vec(&meta).expect("metadata serializes");
    put_u32(&mut out, json.len() as u32);
    out.extend_from_slice(&json);
    for m in [&net.graspness, &net.denoiser, &net.joints] {
        write_net(&mut out, m);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn read_net(r: &mut Reader, expected: &[LayerSpec], name: &str) -> Result<Mlp> {
    let n = r.u32()? as usize;
    let mut specs = Vec::with_capacity(n);
    for _ in 0..n {
        let n_in = r.u32()? as usize;
        let n_out = r.u32()? as usize;
        let activation = Activation::from_code(r.u8()?)?;
        let residual = match r.u8()? {
            0 => false,
            1 => true,
            v => return Err(Error::Checkpoint(format!("bad residual flag {v}"))),
        };
        specs.push(LayerSpec {
            n_in,
            n_out,
            activation,
            residual,
        });
    }
    if specs != expected {
        return Err(Error::Checkpoint(format!("{name} layer sizes do not match the stored head config")));
    }
    let mut net = Mlp::new(&specs, true, &mut ChaCha8Rng::seed_from_u64(0))?;
    let params = (0..net.n_params()).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::Checkpoint(format!("{name} has non-finite parameters")));
    }
    net.set_flat_params(&params)?;
    Ok(net)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(GraspNet, CheckpointMeta)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}, expected {VERSION}")));
    }
    let len = r.u32()? as usize;
    let meta: CheckpointMeta =
        serde_json::from_slice(r.take(len)?).map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
    meta.heads.validate()?;
    meta.input.validate()?;
    if meta.input.dim() != meta.heads.feature_dim || meta.descriptor.dim != meta.heads.feature_dim {
        return Err(Error::Checkpoint("feature widths disagree".into()));
    }
    let graspness = read_net(&mut r, &meta.heads.graspness_specs(), "graspness head")?;
    let denoiser = read_net(&mut r, &meta.heads.denoiser_specs(), "denoiser")?;
    let joints = read_net(&mut r, &meta.heads.joint_specs(), "joint head")?;
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok((
        GraspNet {
            config: meta.heads.clone(),
            input: meta.input.clone(),
            graspness,
            denoiser,
            joints,
        },
        meta,
    ))
}
