//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   "OSMGCKPT"
//! version      u32       CHECKPOINT_VERSION
//! meta_len     u64
//! meta         meta_len bytes of UTF-8 JSON (topology, pyramid, network
//!              config, frame rate, trained flags, training metadata)
//! array_count  u32
//! array_count times:
//!   name_len   u32
//!   name       name_len bytes UTF-8
//!   ndim       u32
//!   dims       ndim x u64
//!   data       prod(dims) x f64, row-major
//! ```
//!
//! Arrays: `normalizer.mean`, `normalizer.std`, `noise_amplitudes`,
//! `reconstruction_code`, and for every stage `i` (zero-based) and layer `l`
//! `stage{i}.{generator|discriminator}.layer{l}.{weight|bias}`. Weights are
//! stored dense (`out x kernel*in`); connectivity masks are rebuilt from the
//! topology and network config on load.

use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ConvStack, FeatureNormalizer, NetworkConfig, PyramidModel, TrainingMetadata};
use crate::error::{Error, Result};
use crate::motion::{PyramidConfig, SkeletonTopology};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"OSMGCKPT";

#[derive(Serialize, Deserialize)]
struct Meta {
    topology: SkeletonTopology,
    pyramid: PyramidConfig,
    network: NetworkConfig,
    frame_rate: f64,
    trained: Vec<bool>,
    metadata: TrainingMetadata,
}

fn put_array(out: &mut Vec<u8>, name: &str, dims: &[usize], data: impl Iterator<Item = f64>) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn stack_arrays(prefix: &str, net: &ConvStack, arrays: &mut Vec<(String, Vec<usize>, Vec<f64>)>) {
    for (l, layer) in net.layers.iter().enumerate() {
        let w = layer.weight.as_standard_layout();
        arrays.push((format!("{prefix}.layer{l}.weight"), w.shape().to_vec(), w.iter().copied().collect()));
        arrays.push((format!("{prefix}.layer{l}.bias"), vec![layer.bias.len()], layer.bias.to_vec()));
    }
}

pub fn save_checkpoint(m: &PyramidModel) -> Result<Vec<u8>> {
    let meta = Meta {
        topology: (*m.topology).clone(),
        pyramid: m.pyramid.clone(),
        network: m.network.clone(),
        frame_rate: m.frame_rate,
        trained: m.trained_mask(),
        metadata: m.metadata.clone(),
    };
    let meta = serde_json::to_vec(&meta)?;

    let mut arrays: Vec<(String, Vec<usize>, Vec<f64>)> = vec![
        ("normalizer.mean".into(), vec![m.normalizer.width()], m.normalizer.mean.to_vec()),
        ("normalizer.std".into(), vec![m.normalizer.width()], m.normalizer.std.to_vec()),
        ("noise_amplitudes".into(), vec![m.num_stages()], m.noise_amplitudes()),
        (
            "reconstruction_code".into(),
            m.reconstruction_code.shape().to_vec(),
            m.reconstruction_code.iter().copied().collect(),
        ),
    ];
    for (i, s) in m.stages.iter().enumerate() {
        stack_arrays(&format!("stage{i}.generator"), &s.generator, &mut arrays);
        stack_arrays(&format!("stage{i}.discriminator"), &s.discriminator, &mut arrays);
    }

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for (name, dims, data) in &arrays {
        put_array(&mut out, name, dims, data.iter().copied());
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Structural(format!("checkpoint truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Structural("length overflows usize".into()))
    }
}

fn read_arrays(r: &mut Reader<'_>) -> Result<std::collections::HashMap<String, ArrayD<f64>>> {
    let count = r.u32()?;
    let mut map = std::collections::HashMap::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Structural("array name is not UTF-8".into()))?
            .to_string();
        let ndim = r.u32()? as usize;
        let dims = (0..ndim).map(|_| r.len()).collect::<Result<Vec<usize>>>()?;
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Structural(format!("array {name} too large")))?;
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Structural("array too large".into()))?)?;
        let data: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let arr = ArrayD::from_shape_vec(IxDyn(&dims), data).map_err(|e| Error::Structural(e.to_string()))?;
        map.insert(name, arr);
    }
    Ok(map)
}

fn take_1d(map: &mut std::collections::HashMap<String, ArrayD<f64>>, name: &str, len: usize) -> Result<Array1<f64>> {
    let a = map.remove(name).ok_or_else(|| Error::Structural(format!("checkpoint lacks array {name}")))?;
    if a.shape() != [len] {
        return Err(Error::Structural(format!("array {name} has shape {:?}, expected [{len}]", a.shape())));
    }
    Ok(a.into_dimensionality().expect("checked shape"))
}

fn take_2d(map: &mut std::collections::HashMap<String, ArrayD<f64>>, name: &str, dim: (usize, usize)) -> Result<Array2<f64>> {
    let a = map.remove(name).ok_or_else(|| Error::Structural(format!("checkpoint lacks array {name}")))?;
    if a.shape() != [dim.0, dim.1] {
        return Err(Error::Structural(format!("array {name} has shape {:?}, expected {:?}", a.shape(), dim)));
    }
    Ok(a.into_dimensionality().expect("checked shape"))
}

fn fill_stack(prefix: &str, net: &mut ConvStack, map: &mut std::collections::HashMap<String, ArrayD<f64>>) -> Result<()> {
    for (l, layer) in net.layers.iter_mut().enumerate() {
        layer.weight = take_2d(map, &format!("{prefix}.layer{l}.weight"), layer.weight.dim())?;
        layer.bias = take_1d(map, &format!("{prefix}.layer{l}.bias"), layer.bias.len())?;
        if layer.weight.iter().zip(layer.mask.iter()).any(|(w, m)| *m == 0.0 && *w != 0.0) {
            return Err(Error::Structural(format!("{prefix}.layer{l} has weights outside the skeleton mask")));
        }
    }
    Ok(())
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<PyramidModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Structural("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Incompatible {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let meta_len = r.len()?;
    let meta: Meta = serde_json::from_slice(r.take(meta_len)?)?;
    let mut map = read_arrays(&mut r)?;
    if r.pos != bytes.len() {
        return Err(Error::Structural(format!("{} trailing bytes after checkpoint", bytes.len() - r.pos)));
    }

    let topology = Arc::new(meta.topology);
    let f = topology.feature_dim();
    let normalizer = FeatureNormalizer {
        mean: take_1d(&mut map, "normalizer.mean", f)?,
        std: take_1d(&mut map, "normalizer.std", f)?,
    };
    // Shapes and masks come from a throwaway initialization; every parameter
    // is then overwritten.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = PyramidModel::new(topology, meta.pyramid, meta.network, normalizer, meta.frame_rate, &mut rng)?;
    let n = model.num_stages();
    if meta.trained.len() != n {
        return Err(Error::Structural("trained flags do not match stage count".into()));
    }
    let sigma = take_1d(&mut map, "noise_amplitudes", n)?;
    model.reconstruction_code = take_2d(&mut map, "reconstruction_code", model.reconstruction_code.dim())?;
    for (i, s) in model.stages.iter_mut().enumerate() {
        fill_stack(&format!("stage{i}.generator"), &mut s.generator, &mut map)?;
        fill_stack(&format!("stage{i}.discriminator"), &mut s.discriminator, &mut map)?;
        s.noise_amplitude = sigma[i];
        s.trained = meta.trained[i];
    }
    model.metadata = meta.metadata;
    Ok(model)
}

pub fn save_checkpoint_file(m: &PyramidModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, save_checkpoint(m)?)?;
    Ok(())
}

pub fn load_checkpoint_file(path: impl AsRef<Path>) -> Result<PyramidModel> {
    load_checkpoint(&std::fs::read(path)?)
}
