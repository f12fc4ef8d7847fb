//! Flat named-array container used for parameter checkpoints and replay snapshots.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes   b"MMPOARR\0"
//! version  u32       FORMAT_VERSION
//! count    u32       number of arrays
//! repeated count times:
//!   name_len u32, name (UTF-8, name_len bytes)
//!   ndim     u32, dims (ndim x u64)
//!   data     product(dims) x f64, row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::mlp::{Activation, Layer, MlpParams};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MMPOARR\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedArray {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            name: name.into(),
            shape,
            data,
        }
    }

    pub fn scalar(name: impl Into<String>, x: f64) -> Self {
        Self::new(name, vec![1], vec![x])
    }
}

pub fn write_arrays<W: Write>(mut w: W, arrays: &[NamedArray]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(arrays.len() as u32).to_le_bytes())?;
    for a in arrays {
        let name = a.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(a.shape.len() as u32).to_le_bytes())?;
        for &d in &a.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &x in &a.data {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_arrays<R: Read>(mut r: R) -> Result<Vec<NamedArray>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("array name is not UTF-8".into()))?;
        let ndim = read_u32(&mut r)? as usize;
        let shape = (0..ndim)
            .map(|_| read_u64(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut b = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut b)?;
            data.push(f64::from_le_bytes(b));
        }
        out.push(NamedArray { name, shape, data });
    }
    Ok(out)
}

pub fn save(path: &Path, arrays: &[NamedArray]) -> Result<()> {
    write_arrays(BufWriter::new(File::create(path)?), arrays)
}

pub fn load(path: &Path) -> Result<Vec<NamedArray>> {
    read_arrays(BufReader::new(File::open(path)?))
}

pub fn find<'a>(arrays: &'a [NamedArray], name: &str) -> Result<&'a NamedArray> {
    arrays
        .iter()
        .find(|a| a.name == name)
        .ok_or_else(|| Error::Format(format!("missing array {name}")))
}

/// `{prefix}.{k}.w` and `{prefix}.{k}.b` per layer.
pub fn mlp_to_arrays(prefix: &str, p: &MlpParams) -> Vec<NamedArray> {
    p.layers
        .iter()
        .enumerate()
        .flat_map(|(k, l)| {
            [
                NamedArray::new(format!("{prefix}.{k}.w"), l.w.shape().to_vec(), l.w.iter().copied().collect()),
                NamedArray::new(format!("{prefix}.{k}.b"), vec![l.b.len()], l.b.to_vec()),
            ]
        })
        .collect()
}

pub fn mlp_from_arrays(prefix: &str, arrays: &[NamedArray]) -> Result<MlpParams> {
    let mut layers = Vec::new();
    let mut sizes = Vec::new();
    for k in 0.. {
        let Ok(w) = find(arrays, &format!("{prefix}.{k}.w")) else { break };
        let b = find(arrays, &format!("{prefix}.{k}.b"))?;
        if w.shape.len() != 2 || b.shape.len() != 1 || b.shape[0] != w.shape[1] {
            return Err(Error::Format(format!("layer {prefix}.{k} has inconsistent shapes")));
        }
        if k == 0 {
            sizes.push(w.shape[0]);
        } else if sizes[k] != w.shape[0] {
            return Err(Error::Format(format!("layer {prefix}.{k} does not chain")));
        }
        sizes.push(w.shape[1]);
        layers.push(Layer {
            w: Array2::from_shape_vec((w.shape[0], w.shape[1]), w.data.clone())
                .map_err(|e| Error::Format(e.to_string()))?,
            b: Array1::from(b.data.clone()),
        });
    }
    if layers.is_empty() {
        return Err(Error::Format(format!("no layers under prefix {prefix}")));
    }
    Ok(MlpParams {
        sizes,
        layers,
        activation: Activation::Tanh,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mlp_round_trip_through_bytes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = MlpParams::init(&[4, 6, 2], false, &mut rng);
        let mut arrays = mlp_to_arrays("policy", &p);
        arrays.push(NamedArray::scalar("eta", 0.25));
        let mut buf = Vec::new();
        write_arrays(&mut buf, &arrays).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), FORMAT_VERSION);
        let back = read_arrays(buf.as_slice()).unwrap();
        assert_eq!(back, arrays);
        assert_eq!(mlp_from_arrays("policy", &back).unwrap(), p);
        assert_eq!(find(&back, "eta").unwrap().data, vec![0.25]);
    }

    #[test]
    fn rejects_bad_header() {
        assert!(matches!(read_arrays(&b"NOTMAGIC\x01\0\0\0\0\0\0\0"[..]), Err(Error::Format(_))));
        let mut buf = Vec::new();
        write_arrays(&mut buf, &[]).unwrap();
        buf[8] = 9;
        assert!(read_arrays(buf.as_slice()).is_err());
        assert!(mlp_from_arrays("q", &[]).is_err());
    }
}
