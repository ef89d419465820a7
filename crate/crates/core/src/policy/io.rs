//! Binary model files.
//!
//! Layout: the magic bytes, a little-endian `u32` format version, a `u32`
//! header length, a JSON header, then one block per member. A block is the
//! member seed (`u64`), a value count (`u64`) and that many little-endian
//! `f64`: scaler mean, scaler std, then each layer's weights and biases.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Architecture, EnsemblePolicy, Network, PolicyError, PolicyMember, PolicyMode};
use crate::observe::{ObsParams, Observer, PcaModel};

const MAGIC: &[u8; 8] = b"REMOVEM\0";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    mode: PolicyMode,
    k: usize,
    mc_samples: usize,
    l: usize,
    input_dim: usize,
    architecture: Architecture,
    obs: ObsParams,
    pca: Option<String>,
}

fn bad(msg: impl Into<String>) -> PolicyError {
    PolicyError::Format(msg.into())
}

fn read_u32(r: &mut impl Read) -> Result<u32, PolicyError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| bad("truncated file"))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, PolicyError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| bad("truncated file"))?;
    Ok(u64::from_le_bytes(b))
}

impl EnsemblePolicy {
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<(), PolicyError> {
        let first = &self.members[0].net;
        let header = Header {
            mode: self.mode,
            k: self.members.len(),
            mc_samples: self.mc_samples,
            l: self.l,
            input_dim: first.input_dim(),
            architecture: first.architecture().clone(),
            obs: self.obs_params().clone(),
            pca: self.pca().map(|p| p.to_text()),
        };
        let json = serde_json::to_vec(&header).map_err(|e| bad(e.to_string()))?;
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&(json.len() as u32).to_le_bytes())?;
        out.write_all(&json)?;
        for m in &self.members {
            let values: Vec<f64> =
                m.net.scale_mean.iter().chain(&m.net.scale_std).copied().chain(m.net.params()).collect();
            out.write_all(&m.seed.to_le_bytes())?;
            out.write_all(&(values.len() as u64).to_le_bytes())?;
            let mut buf = Vec::with_capacity(values.len() * 8);
            for v in values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            out.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        buf
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<EnsemblePolicy, PolicyError> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic).map_err(|_| bad("truncated file"))?;
        if &magic != MAGIC {
            return Err(bad("not a model file"));
        }
        let version = read_u32(&mut input)?;
        if version != VERSION {
            return Err(bad(format!("unsupported format version {version}")));
        }
        let len = read_u32(&mut input)? as usize;
        let mut json = vec![0u8; len];
        input.read_exact(&mut json).map_err(|_| bad("truncated header"))?;
        let h: Header = serde_json::from_slice(&json).map_err(|e| bad(format!("header: {e}")))?;
        let features = h.architecture.transform.output_dim(h.input_dim);
        let mut members = Vec::with_capacity(h.k);
        for i in 0..h.k {
            let seed = read_u64(&mut input)?;
            let count = read_u64(&mut input)? as usize;
            if count < 2 * features || count > (1 << 32) {
                return Err(bad(format!("member {i}: implausible block size {count}")));
            }
            let mut raw = vec![0u8; count * 8];
            input.read_exact(&mut raw).map_err(|_| bad(format!("member {i}: truncated block")))?;
            let values: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            let mean = values[..features].to_vec();
            let std = values[features..2 * features].to_vec();
            let net = Network::from_parts(h.architecture.clone(), h.input_dim, mean, std, &values[2 * features..])
                .ok_or_else(|| bad(format!("member {i}: block does not match the architecture")))?;
            members.push(PolicyMember { seed, net });
        }
        let mut rest = Vec::new();
        input.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(bad("trailing bytes after last member"));
        }
        let observer = match h.pca {
            Some(text) => {
                let pca = PcaModel::from_text(&text).map_err(|e| bad(format!("pca: {e}")))?;
                Observer::with_pca(h.obs, Arc::new(pca))
            }
            None => Observer::new(h.obs),
        };
        EnsemblePolicy::new(h.mode, members, h.mc_samples, h.l, observer)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PolicyError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<EnsemblePolicy, PolicyError> {
        EnsemblePolicy::read_from(fs::read(path)?.as_slice())
    }
}
