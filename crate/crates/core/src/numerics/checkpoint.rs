//! Parameter checkpoint container.
//!
//! Layout: an 8-byte little-endian header length `L`, then `L` bytes of UTF-8
//! JSON, then the raw little-endian `f32` data of every array back to back.
//! The header lists each array's name, shape, trainable flag and byte range
//! within the data section:
//!
//! ```text
//! {"format":"dapper-params","version":1,
//!  "arrays":[{"name":"map.fc0.b","shape":[64],"trainable":true,"offset":0,"len":256}, ...],
//!  "meta":{...}}
//! ```

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Array, ParamStore};
use crate::error::{Error, Result};

const FORMAT: &str = "dapper-params";

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    arrays: Vec<Entry>,
    #[serde(default)]
    meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
    offset: usize,
    len: usize,
}

pub fn encode(store: &ParamStore<f32>, meta: &serde_json::Value) -> Result<Vec<u8>> {
    let mut arrays = Vec::with_capacity(store.len());
    let mut offset = 0;
    for (name, p) in store.iter() {
        let len = p.value.len() * 4;
        arrays.push(Entry {
            name: name.to_string(),
            shape: p.value.shape().to_vec(),
            trainable: p.trainable,
            offset,
            len,
        });
        offset += len;
    }
    let header = serde_json::to_vec(&Header {
        format: FORMAT.into(),
        version: 1,
        arrays,
        meta: meta.clone(),
    })?;
    let mut out = Vec::with_capacity(8 + header.len() + offset);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, p) in store.iter() {
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<(ParamStore<f32>, serde_json::Value)> {
    if bytes.len() < 8 {
        return Err(Error::Format("truncated header length".into()));
    }
    let hlen = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    let body = bytes
        .get(8..8 + hlen)
        .ok_or_else(|| Error::Format("truncated header".into()))?;
    let header: Header = serde_json::from_slice(body)?;
    if header.format != FORMAT || header.version != 1 {
        return Err(Error::Format(format!(
            "unsupported container {} v{}",
            header.format, header.version
        )));
    }
    let data = &bytes[8 + hlen..];
    let mut store = ParamStore::new();
    for e in header.arrays {
        let raw = data
            .get(e.offset..e.offset + e.len)
            .ok_or_else(|| Error::Format(format!("{}: data out of range", e.name)))?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let arr = Array::from_vec(&e.shape, values)
            .map_err(|_| Error::Format(format!("{}: length does not match shape", e.name)))?;
        store.insert(e.name.clone(), arr)?;
        store.set_trainable(&e.name, e.trainable)?;
    }
    Ok((store, header.meta))
}

pub fn save(path: &Path, store: &ParamStore<f32>, meta: &serde_json::Value) -> Result<()> {
    let bytes = encode(store, meta)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(ParamStore<f32>, serde_json::Value)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn roundtrip_is_byte_exact(values in proptest::collection::vec(any::<f32>(), 1..40), frozen: bool) {
            let mut s = ParamStore::new();
            let n = values.len();
            s.insert("a.w", Array::from_vec(&[n], values).unwrap()).unwrap();
            s.insert("b", Array::from_vec(&[1, 2], vec![1.5, -0.0]).unwrap()).unwrap();
            s.set_trainable("b", !frozen).unwrap();
            let meta = serde_json::json!({"kind": "test"});
            let bytes = encode(&s, &meta).unwrap();
            let (back, m) = decode(&bytes).unwrap();
            prop_assert_eq!(encode(&back, &m).unwrap(), bytes);
            prop_assert_eq!(back.is_trainable("b"), !frozen);
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(decode(&[1, 2, 3]).is_err());
        let mut bytes = 4u64.to_le_bytes().to_vec();
        bytes.extend_from_slice(b"{}  ");
        assert!(decode(&bytes).is_err());
    }
}
