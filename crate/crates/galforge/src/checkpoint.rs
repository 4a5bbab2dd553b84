//! The GLT1 named-array container and the generator / classifier checkpoints
//! built on it.
//!
//! Layout (all integers little-endian): `"GLT1"`, `u32` version, `u32` array
//! count, then per array a `u32` name length, the UTF-8 name, a `u32` rank,
//! `rank` `u64` dims and the `f64` payload.

use std::path::Path;

use galforge_core::classifier::{ClassifierModel, ClassifierSpec};
use galforge_core::embedding::EmbeddingTable;
use galforge_core::generator::{GeneratorModel, NoiseSchedule};
use galforge_core::nn::{Activation, Mlp};
use galforge_core::optim::Param;
use galforge_core::Tensor;

use crate::error::{io_err, Error, Result};
use crate::fsutil::atomic_write;

pub const MAGIC: &[u8; 4] = b"GLT1";
pub const VERSION: u32 = 1;

pub fn encode(arrays: &[(&str, &Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for (name, t) in arrays {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or("truncated file")?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(buf: &[u8]) -> std::result::Result<Vec<(String, Tensor)>, String> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err("missing GLT1 magic".into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let count = r.u32()?;
    let mut arrays = Vec::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|e| e.to_string())?.to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or("array too large")?;
        let bytes = r.take(n.checked_mul(8).ok_or("array too large")?)?;
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        arrays.push((name, Tensor::new(shape, data).map_err(|e| e.to_string())?));
    }
    if r.pos != buf.len() {
        return Err("trailing bytes after last array".into());
    }
    Ok(arrays)
}

pub fn write_arrays(path: &Path, arrays: &[(&str, &Tensor)]) -> Result<()> {
    atomic_write(path, &encode(arrays))
}

pub fn read_arrays(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let buf = std::fs::read(path).map_err(io_err(path))?;
    decode(&buf).map_err(|msg| Error::Checkpoint {
        path: path.to_path_buf(),
        msg,
    })
}

fn take_array(arrays: &mut Vec<(String, Tensor)>, name: &str, path: &Path) -> Result<Tensor> {
    let i = arrays.iter().position(|(n, _)| n == name).ok_or_else(|| Error::Checkpoint {
        path: path.to_path_buf(),
        msg: format!("missing array `{name}`"),
    })?;
    Ok(arrays.remove(i).1)
}

/// Pull `layer{l}.weight` / `layer{l}.bias` pairs and infer the layer dims.
fn take_mlp(arrays: &mut Vec<(String, Tensor)>, path: &Path) -> Result<(Vec<usize>, Vec<Param>)> {
    let mut dims = Vec::new();
    let mut params = Vec::new();
    for l in 0.. {
        let wname = format!("layer{l}.weight");
        if !arrays.iter().any(|(n, _)| *n == wname) {
            break;
        }
        let w = take_array(arrays, &wname, path)?;
        let bname = format!("layer{l}.bias");
        let b = take_array(arrays, &bname, path)?;
        let [fi, fo] = w.shape() else {
            return Err(Error::Checkpoint {
                path: path.to_path_buf(),
                msg: format!("`{wname}` is not a matrix"),
            });
        };
        if dims.is_empty() {
            dims.push(*fi);
        }
        dims.push(*fo);
        params.push(Param::new(wname, w));
        params.push(Param::new(bname, b));
    }
    if params.is_empty() {
        return Err(Error::Checkpoint {
            path: path.to_path_buf(),
            msg: "no network layers".into(),
        });
    }
    Ok((dims, params))
}

fn net_arrays(net: &Mlp) -> Vec<(&str, &Tensor)> {
    net.params.iter().map(|p| (p.name.as_str(), &p.value)).collect()
}

pub fn save_generator(path: &Path, g: &GeneratorModel) -> Result<()> {
    let betas = Tensor::vector(g.schedule.betas().to_vec());
    let alpha_bar = Tensor::vector(g.schedule.alpha_bars().to_vec());
    let mut arrays = vec![
        ("class_embeddings", g.embeddings.class_embeddings()),
        ("template_offsets", g.embeddings.template_offsets()),
        ("betas", &betas),
        ("alpha_bar", &alpha_bar),
    ];
    arrays.extend(net_arrays(&g.net));
    write_arrays(path, &arrays)
}

pub fn load_generator(path: &Path) -> Result<GeneratorModel> {
    let mut arrays = read_arrays(path)?;
    let class_embeddings = take_array(&mut arrays, "class_embeddings", path)?;
    let template_offsets = take_array(&mut arrays, "template_offsets", path)?;
    let betas = take_array(&mut arrays, "betas", path)?;
    let alpha_bar = take_array(&mut arrays, "alpha_bar", path)?;
    let schedule = NoiseSchedule::from_betas(betas.into_data())?;
    if schedule.alpha_bars() != alpha_bar.data() {
        return Err(Error::Checkpoint {
            path: path.to_path_buf(),
            msg: "alpha_bar does not match betas".into(),
        });
    }
    let (dims, params) = take_mlp(&mut arrays, path)?;
    let net = Mlp::from_params(&dims, Activation::Tanh, params)?;
    let table = EmbeddingTable::new(class_embeddings, template_offsets)?;
    Ok(GeneratorModel::new(net, schedule, table)?)
}

pub fn save_classifier(path: &Path, m: &ClassifierModel) -> Result<()> {
    let rate = Tensor::scalar(m.spec.dropout_rate);
    let mut arrays = vec![("dropout_rate", &rate)];
    arrays.extend(net_arrays(&m.net));
    write_arrays(path, &arrays)
}

pub fn load_classifier(path: &Path) -> Result<ClassifierModel> {
    let mut arrays = read_arrays(path)?;
    let rate = take_array(&mut arrays, "dropout_rate", path)?.item();
    let (dims, params) = take_mlp(&mut arrays, path)?;
    let hidden = &dims[1..dims.len() - 1];
    let arch = format!("mlp-{}", hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join("x"));
    let mut spec = ClassifierSpec::new(&arch, dims[0], dims[dims.len() - 1])?;
    spec.dropout_rate = rate;
    Ok(ClassifierModel::from_params(&spec, params)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_round_trip() {
        let a = Tensor::matrix(2, 3, vec![1.0, -0.0, f64::MIN_POSITIVE, 1e300, -2.5, 0.1]).unwrap();
        let s = Tensor::scalar(7.0);
        let bytes = encode(&[("a", &a), ("s", &s)]);
        assert_eq!(&bytes[..4], b"GLT1");
        let back = decode(&bytes).unwrap();
        assert_eq!(back[0], ("a".to_string(), a));
        assert_eq!(back[1], ("s".to_string(), s));
    }

    #[test]
    fn rejects_corruption() {
        let a = Tensor::vector(vec![1.0, 2.0]);
        let bytes = encode(&[("a", &a)]);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode(&extra).is_err());
    }
}
