//! Weight file serialization.
//!
//! Layout of a `.gmwt` file, everything little-endian:
//!
//! ```text
//! bytes 0..8    magic "GMWT01\0\0"
//! bytes 8..12   u32: byte length of the JSON manifest
//! bytes 12..12+n  manifest, UTF-8 JSON
//! rest          raw f32 parameter data, concatenated in manifest order
//! ```
//!
//! The manifest records the architecture tag, input channels, window
//! length, channel progression, and one entry per parameter tensor with
//! its name, shape, trainable flag, and byte offset into the data
//! section. Offsets are relative to the start of the data section.
//!
//! Loading rebuilds the network from the manifest and validates
//! everything against it: magic, manifest shape, parameter names, tensor
//! shapes, offsets, and total data length. Any mismatch, including a
//! file that cannot be read at all, reports the file as corrupt.

use crate::error::{Error, Result};
use crate::model::{build_custom_network, ArchId, Network, NetworkConfig};
use crate::tensor::{Rng, Scalar};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

pub const WEIGHT_MAGIC: &[u8; 8] = b"GMWT01\0\0";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    arch: String,
    in_channels: usize,
    window_len: usize,
    block_channels: Vec<usize>,
    hidden_width: usize,
    classes: usize,
    params: Vec<ManifestParam>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestParam {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
    byte_offset: u64,
}

fn corrupt(path: &Path, message: impl Into<String>) -> Error {
    Error::CorruptFile {
        path: path.display().to_string(),
        message: message.into(),
    }
}

/// Writes a network to `path` in the format above.
///
/// Parameters are stored as f32 regardless of the in-memory scalar type.
pub fn save_weights<T: Scalar>(net: &Network<T>, path: &Path) -> Result<()> {
    let mut params = Vec::new();
    let mut offset = 0u64;
    for layer in &net.layers {
        for (name, tensor) in layer.params() {
            params.push(ManifestParam {
                name,
                shape: tensor.shape().to_vec(),
                trainable: layer.trainable,
                byte_offset: offset,
            });
            offset += (tensor.len() * 4) as u64;
        }
    }
    let manifest = Manifest {
        arch: net.arch.as_str().to_string(),
        in_channels: net.in_channels,
        window_len: net.window_len,
        block_channels: net.config.block_channels.clone(),
        hidden_width: net.config.hidden_width,
        classes: net.config.classes,
        params,
    };
    let manifest_bytes =
        serde_json::to_vec(&manifest).map_err(|e| Error::InvalidState(e.to_string()))?;

    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out = std::io::BufWriter::new(file);
    let write = |out: &mut std::io::BufWriter<std::fs::File>, bytes: &[u8]| {
        out.write_all(bytes)
            .map_err(|e| Error::io(path.display().to_string(), e))
    };
    write(&mut out, WEIGHT_MAGIC)?;
    write(&mut out, &(manifest_bytes.len() as u32).to_le_bytes())?;
    write(&mut out, &manifest_bytes)?;
    let mut buf = Vec::new();
    for layer in &net.layers {
        for (_, tensor) in layer.params() {
            buf.clear();
            buf.reserve(tensor.len() * 4);
            for &v in tensor.data() {
                buf.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
            }
            write(&mut out, &buf)?;
        }
    }
    out.flush()
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads a network back from `path`, validating the file end to end.
pub fn load_weights<T: Scalar>(path: &Path) -> Result<Network<T>> {
    let bytes = std::fs::read(path).map_err(|e| corrupt(path, format!("cannot read: {e}")))?;
    if bytes.len() < 12 {
        return Err(corrupt(path, "file shorter than the fixed header"));
    }
    if &bytes[..8] != WEIGHT_MAGIC {
        return Err(corrupt(path, "bad magic (not a weight file)"));
    }
    let manifest_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let data_start = 12 + manifest_len;
    if bytes.len() < data_start {
        return Err(corrupt(path, "manifest length runs past end of file"));
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[12..data_start])
        .map_err(|e| corrupt(path, format!("bad manifest: {e}")))?;

    let arch = ArchId::parse(&manifest.arch)
        .map_err(|_| corrupt(path, format!("unknown architecture {:?}", manifest.arch)))?;
    let config = NetworkConfig {
        block_channels: manifest.block_channels.clone(),
        hidden_width: manifest.hidden_width,
        classes: manifest.classes,
    };
    if let Some(canonical) = NetworkConfig::for_arch(arch) {
        if canonical != config {
            return Err(corrupt(
                path,
                format!("manifest layout does not match the {:?} architecture", manifest.arch),
            ));
        }
    }
    let mut net: Network<T> = build_custom_network(
        config,
        manifest.in_channels,
        manifest.window_len,
        &mut Rng::seed(0),
    )
    .map_err(|e| corrupt(path, format!("manifest describes an unbuildable network: {e}")))?;
    net.arch = arch;

    // walk the network's own parameter order against the manifest
    let expected: Vec<(String, Vec<usize>)> = net
        .params()
        .iter()
        .map(|(n, t)| (n.clone(), t.shape().to_vec()))
        .collect();
    if expected.len() != manifest.params.len() {
        return Err(corrupt(
            path,
            format!(
                "manifest lists {} parameters, architecture has {}",
                manifest.params.len(),
                expected.len()
            ),
        ));
    }
    let mut offset = 0u64;
    for (entry, (name, shape)) in manifest.params.iter().zip(&expected) {
        if &entry.name != name {
            return Err(corrupt(
                path,
                format!("parameter {:?} where {name:?} was expected", entry.name),
            ));
        }
        if &entry.shape != shape {
            return Err(corrupt(
                path,
                format!("parameter {name} has shape {:?}, expected {shape:?}", entry.shape),
            ));
        }
        if entry.byte_offset != offset {
            return Err(corrupt(
                path,
                format!(
                    "parameter {name} at byte offset {}, expected {offset}",
                    entry.byte_offset
                ),
            ));
        }
        offset += shape.iter().product::<usize>() as u64 * 4;
    }
    if bytes.len() - data_start != offset as usize {
        return Err(corrupt(
            path,
            format!(
                "data section holds {} bytes, manifest wants {offset}",
                bytes.len() - data_start
            ),
        ));
    }

    {
        let mut slots = net.param_slots();
        let mut cursor = data_start;
        for slot in slots.iter_mut() {
            for v in slot.value.data_mut() {
                let raw = f32::from_le_bytes(bytes[cursor..cursor + 4].try_into().unwrap());
                *v = T::from_f64(raw as f64);
                cursor += 4;
            }
        }
    }

    // restore per-node trainable flags from the manifest
    let mut entry_iter = manifest.params.iter();
    for layer in &mut net.layers {
        let n = layer.params().len();
        if n == 0 {
            continue;
        }
        let flags: Vec<bool> = entry_iter.by_ref().take(n).map(|e| e.trainable).collect();
        if flags.windows(2).any(|w| w[0] != w[1]) {
            return Err(corrupt(
                path,
                format!("parameters of {} disagree on trainability", layer.name),
            ));
        }
        layer.trainable = flags[0];
    }
    Ok(net)
}
