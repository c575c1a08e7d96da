//! Checkpoint container: a plain-text index of (name, shape) entries
//! followed by concatenated FMAP1 payloads, one per tensor. Training runs
//! in `f32`, which FMAP1 stores losslessly, so save/load round trips are
//! byte-exact.

use std::fs;
use std::path::Path;

use super::net::{Arch, ModelState, Net};
use super::AdamState;
use crate::error::{Error, Result};
use crate::imaging::fmap;
use crate::imaging::Image;

const MAGIC: &str = "BSCKPT1";

pub fn save_checkpoint(state: &ModelState<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(state)).map_err(|e| Error::io(path, e))
}

pub fn encode_checkpoint(state: &ModelState<f32>) -> Vec<u8> {
    let arch = &state.net.arch;
    let mut index = String::new();
    index.push_str(MAGIC);
    index.push('\n');
    index.push_str(&format!("in_channels {}\n", arch.in_channels));
    index.push_str(&format!("step {}\n", state.opt.step));
    index.push_str(&format!("tensors {}\n", arch.groups.len() * 3));

    let mut payload: Vec<u8> = Vec::new();
    let mut emit = |index: &mut String, name: &str, shape: &[usize], values: &[f32]| {
        let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
        index.push_str(&format!("{name} {}\n", dims.join(",")));
        let img = Image {
            height: values.len(),
            width: 1,
            channels: 1,
            data: values.to_vec(),
        };
        payload.extend_from_slice(&fmap::encode_float_map(&img));
    };
    for g in &arch.groups {
        let range = g.offset..g.offset + g.len;
        emit(&mut index, &g.name, &g.shape, &state.net.params[range]);
    }
    for g in &arch.groups {
        let range = g.offset..g.offset + g.len;
        emit(
            &mut index,
            &format!("{}.adam_m", g.name),
            &[g.len],
            &state.opt.m[range],
        );
    }
    for g in &arch.groups {
        let range = g.offset..g.offset + g.len;
        emit(
            &mut index,
            &format!("{}.adam_v", g.name),
            &[g.len],
            &state.opt.v[range],
        );
    }

    let mut out = index.into_bytes();
    out.extend_from_slice(&payload);
    out
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelState<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<ModelState<f32>> {
    let fail = |reason: String| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    };
    let mut pos = 0usize;
    let next_line = |bytes: &[u8], pos: &mut usize| -> Result<String> {
        let end = bytes[*pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| fail("unterminated index line".into()))?;
        let line = std::str::from_utf8(&bytes[*pos..*pos + end])
            .map_err(|_| fail("index is not ASCII".into()))?
            .to_string();
        *pos += end + 1;
        Ok(line)
    };

    if next_line(bytes, &mut pos)? != MAGIC {
        return Err(fail(format!("bad magic, expected {MAGIC}")));
    }
    let parse_kv = |line: &str, key: &str| -> Result<u64> {
        line.strip_prefix(key)
            .and_then(|rest| rest.trim().parse().ok())
            .ok_or_else(|| fail(format!("expected `{key} <n>`, got {line:?}")))
    };
    let in_channels = parse_kv(&next_line(bytes, &mut pos)?, "in_channels")? as usize;
    let step = parse_kv(&next_line(bytes, &mut pos)?, "step")?;
    let n_tensors = parse_kv(&next_line(bytes, &mut pos)?, "tensors")? as usize;

    let mut entries = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let line = next_line(bytes, &mut pos)?;
        let (name, dims) = line
            .split_once(' ')
            .ok_or_else(|| fail(format!("bad index entry {line:?}")))?;
        let shape: Vec<usize> = dims
            .split(',')
            .map(|d| d.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| fail(format!("bad shape in {line:?}")))?;
        entries.push((name.to_string(), shape));
    }

    let arch = Arch::standard(in_channels);
    let mut params = vec![0.0f32; arch.n_params];
    let mut m = vec![0.0f32; arch.n_params];
    let mut v = vec![0.0f32; arch.n_params];
    for (name, shape) in &entries {
        let (img, used) = fmap::decode_float_map(&bytes[pos..], path)?;
        pos += used;
        let (base, dest): (&str, &mut [f32]) = if let Some(b) = name.strip_suffix(".adam_m") {
            (b, &mut m)
        } else if let Some(b) = name.strip_suffix(".adam_v") {
            (b, &mut v)
        } else {
            (name.as_str(), &mut params)
        };
        let group = arch
            .groups
            .iter()
            .find(|g| g.name == base)
            .ok_or_else(|| fail(format!("unknown tensor {name}")))?;
        let expected_len: usize = shape.iter().product();
        if expected_len != group.len || img.data.len() != group.len {
            return Err(fail(format!(
                "tensor {name}: {} values, arena slot holds {}",
                img.data.len(),
                group.len
            )));
        }
        dest[group.offset..group.offset + group.len].copy_from_slice(&img.data);
    }
    if pos != bytes.len() {
        return Err(fail(format!("{} trailing bytes", bytes.len() - pos)));
    }

    Ok(ModelState {
        net: Net { arch, params },
        opt: AdamState { m, v, step },
    })
}
