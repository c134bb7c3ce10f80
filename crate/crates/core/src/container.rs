//! Weight container: a text header describing every array followed by the raw
//! little-endian payload.
//!
//! ```text
//! adscreen-weights 1
//! array <layer> <name> <dtype> <d0,d1,..> <offset> <bytes>
//! ...
//! end
//! <payload bytes>
//! ```
//!
//! Offsets are relative to the first payload byte. Arrays stored in a dtype
//! other than the requested one are converted on load.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::{LayerParams, ParamStore};
use crate::tensor::{DType, Scalar, Tensor};

pub const MAGIC: &str = "adscreen-weights";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode<T: Scalar>(store: &ParamStore<T>) -> Result<Vec<u8>> {
    let mut header = format!("{MAGIC} {FORMAT_VERSION}\n");
    let mut payload = Vec::new();
    for layer in store.layers() {
        check_name(&layer.name)?;
        for (name, t) in layer.arrays() {
            check_name(name)?;
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            let offset = payload.len();
            for &v in t.data() {
                v.write_le(&mut payload);
            }
            header.push_str(&format!(
                "array {} {} {} {} {} {}\n",
                layer.name,
                name,
                T::DTYPE.name(),
                dims.join(","),
                offset,
                payload.len() - offset
            ));
        }
    }
    header.push_str("end\n");
    let mut out = header.into_bytes();
    out.extend_from_slice(&payload);
    Ok(out)
}

fn check_name(s: &str) -> Result<()> {
    if s.is_empty() || s.chars().any(char::is_whitespace) {
        return Err(Error::Container(format!("invalid name {s:?}")));
    }
    Ok(())
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<ParamStore<T>> {
    let end_marker = b"\nend\n";
    let header_end = bytes
        .windows(end_marker.len())
        .position(|w| w == end_marker)
        .map(|p| p + end_marker.len())
        .or_else(|| bytes.starts_with(b"end\n").then_some(4))
        .ok_or_else(|| Error::Container("missing header terminator".into()))?;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| Error::Container("header is not UTF-8".into()))?;
    let payload = &bytes[header_end..];
    let mut lines = header.lines();
    let first = lines.next().unwrap_or_default();
    let mut parts = first.split_whitespace();
    if parts.next() != Some(MAGIC) {
        return Err(Error::Container(format!("bad magic line {first:?}")));
    }
    let version: u32 = parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Container("missing format version".into()))?;
    if version != FORMAT_VERSION {
        return Err(Error::Container(format!("unsupported format version {version}")));
    }
    let mut store = ParamStore::new();
    for line in lines {
        if line == "end" {
            break;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 7 || f[0] != "array" {
            return Err(Error::Container(format!("malformed header line {line:?}")));
        }
        let dtype = DType::parse(f[3]).ok_or_else(|| Error::Container(format!("unknown dtype {}", f[3])))?;
        let shape: Vec<usize> = f[4]
            .split(',')
            .map(|d| d.parse().map_err(|_| Error::Container(format!("bad shape {}", f[4]))))
            .collect::<Result<_>>()?;
        let offset: usize = f[5].parse().map_err(|_| Error::Container(format!("bad offset {}", f[5])))?;
        let nbytes: usize = f[6].parse().map_err(|_| Error::Container(format!("bad length {}", f[6])))?;
        let count: usize = shape.iter().product();
        if count * dtype.size() != nbytes {
            return Err(Error::Container(format!("{}/{}: shape {shape:?} vs {nbytes} bytes", f[1], f[2])));
        }
        let raw = payload
            .get(offset..offset + nbytes)
            .ok_or_else(|| Error::Container(format!("{}/{}: payload truncated", f[1], f[2])))?;
        let data: Vec<T> = match dtype {
            d if d == T::DTYPE => raw.chunks(d.size()).map(T::read_le).collect(),
            DType::F32 => raw.chunks(4).map(|c| T::c(f32::read_le(c) as f64)).collect(),
            DType::F64 => raw.chunks(8).map(|c| T::c(f64::read_le(c))).collect(),
        };
        let tensor = Tensor::new(shape, data)?;
        match store.layer_mut(f[1]) {
            Some(layer) => layer.insert(f[2], tensor)?,
            None => {
                store.push(LayerParams::new(f[1]).with(f[2], tensor))?;
            }
        }
    }
    Ok(store)
}

pub fn save<T: Scalar>(store: &ParamStore<T>, path: &Path) -> Result<()> {
    let bytes = encode(store)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load<T: Scalar>(path: &Path) -> Result<ParamStore<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
