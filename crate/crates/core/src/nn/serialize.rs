//! Binary tensor-blob files: a JSON metadata header followed by named f32
//! tensors, little-endian. Used for checkpoints.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"KZCK";
const VERSION: u32 = 1;

pub struct NamedTensor {
    pub name: String,
    pub data: ArrayD<f32>,
}

pub fn write_blob(path: &Path, meta: &serde_json::Value, tensors: &[NamedTensor]) -> Result<()> {
    let f = File::create(path)?;
    let mut w = BufWriter::new(f);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let meta_bytes = serde_json::to_vec(meta)?;
    w.write_all(&(meta_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&meta_bytes)?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for t in tensors {
        let name = t.name.as_bytes();
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name)?;
        let shape = t.data.shape();
        w.write_all(&(shape.len() as u8).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let data = t
            .data
            .as_standard_layout();
        for v in data.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_exact_vec(r: &mut impl Read, n: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u16(r: &mut impl Read) -> Result<u16> {
    let b = read_exact_vec(r, 2)?;
    Ok(u16::from_le_bytes([b[0], b[1]]))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let b = read_exact_vec(r, 4)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let b = read_exact_vec(r, 8)?;
    Ok(u64::from_le_bytes(b.try_into().unwrap()))
}

pub fn read_blob(path: &Path) -> Result<(serde_json::Value, Vec<NamedTensor>)> {
    let f = File::open(path)?;
    let mut r = BufReader::new(f);
    let magic = read_exact_vec(&mut r, 4)?;
    if magic != MAGIC {
        return Err(Error::Serialize(format!(
            "{}: not a checkpoint blob",
            path.display()
        )));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Serialize(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let meta_len = read_u64(&mut r)? as usize;
    let meta_bytes = read_exact_vec(&mut r, meta_len)?;
    let meta: serde_json::Value = serde_json::from_slice(&meta_bytes)?;
    let count = read_u32(&mut r)? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u16(&mut r)? as usize;
        let name = String::from_utf8(read_exact_vec(&mut r, name_len)?)
            .map_err(|e| Error::Serialize(e.to_string()))?;
        let ndim = read_exact_vec(&mut r, 1)?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let bytes = read_exact_vec(&mut r, numel * 4)?;
        let mut data = Vec::with_capacity(numel);
        for chunk in bytes.chunks_exact(4) {
            data.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
        }
        let arr = ArrayD::from_shape_vec(IxDyn(&shape), data)
            .map_err(|e| Error::Serialize(e.to_string()))?;
        tensors.push(NamedTensor { name, data: arr });
    }
    Ok((meta, tensors))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_roundtrip_is_bitexact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ckpt");
        let meta = serde_json::json!({"task_index": 3, "seed": 17});
        let tensors = vec![
            NamedTensor {
                name: "a.w".into(),
                data: ArrayD::from_shape_vec(IxDyn(&[2, 3]), vec![1.5, -2.25, 0.1, 4.0, 5.5, -0.0])
                    .unwrap(),
            },
            NamedTensor {
                name: "b".into(),
                data: ArrayD::from_shape_vec(IxDyn(&[1]), vec![f32::MIN_POSITIVE]).unwrap(),
            },
        ];
        write_blob(&path, &meta, &tensors).unwrap();
        let (m2, t2) = read_blob(&path).unwrap();
        assert_eq!(m2["task_index"], 3);
        assert_eq!(t2.len(), 2);
        assert_eq!(t2[0].name, "a.w");
        assert_eq!(t2[0].data, tensors[0].data);
        assert_eq!(
            t2[1].data[[0]].to_bits(),
            tensors[1].data[[0]].to_bits()
        );
    }
}
