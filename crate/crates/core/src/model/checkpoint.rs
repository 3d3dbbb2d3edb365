//! Checkpoint layout: a magic line, one line of JSON holding the network
//! spec and parameter shapes, then every parameter as little-endian `f64`
//! in declaration order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{Network, NetworkSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &str = "MLMUNMIX-CHECKPOINT 1";

#[derive(Serialize, Deserialize)]
struct Header {
    spec: NetworkSpec,
    shapes: Vec<Vec<usize>>,
}

pub fn checkpoint_bytes(net: &Network) -> Vec<u8> {
    let header = Header {
        spec: net.spec().clone(),
        shapes: net.params().iter().map(|p| p.shape().to_vec()).collect(),
    };
    let mut out = format!("{MAGIC}\n{}\n", serde_json::to_string(&header).expect("header serializes")).into_bytes();
    for p in net.params() {
        for v in p.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save_checkpoint(net: &Network, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, checkpoint_bytes(net)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Network> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |detail: &str| Error::format(path, detail.to_string());
    let mut lines = bytes.splitn(3, |&b| b == b'\n');
    if lines.next() != Some(MAGIC.as_bytes()) {
        return Err(bad("not a checkpoint (magic line missing)"));
    }
    let header = lines.next().ok_or_else(|| bad("missing header"))?;
    let header: Header = serde_json::from_slice(header).map_err(|e| bad(&format!("header: {e}")))?;
    let payload = lines.next().unwrap_or(&[]);
    let total: usize = header.shapes.iter().map(|s| s.iter().product::<usize>()).sum();
    if payload.len() != total * 8 {
        return Err(bad(&format!("payload has {} bytes, header implies {}", payload.len(), total * 8)));
    }
    let mut values = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let params = header
        .shapes
        .iter()
        .map(|s| {
            let n = s.iter().product();
            Tensor::new(s.clone(), values.by_ref().take(n).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Network::from_parts(header.spec, params)
}
