//! Binary model format.
//!
//! All multi-byte values are little-endian.
//!
//! | offset | size        | field                                            |
//! |--------|-------------|--------------------------------------------------|
//! | 0      | 4           | magic `BNSI`                                     |
//! | 4      | 1           | format version (1)                               |
//! | 5      | 1           | depth `h`                                        |
//! | 6      | 1           | projected dimension `d`                          |
//! | 7      | 1           | input dimension `D`                              |
//! | 8      | 4           | sigma, f32                                       |
//! | 12     | 4           | prediction offset, f32                           |
//! | 16     | 2           | number of nonzero projection entries `nz`, u16   |
//! | 18     | 6 `nz`      | `(u16 index, f32 value)` pairs, ascending index  |
//! | ...    | per node    | node blocks, breadth-first                       |
//!
//! The projection index addresses the row-major `d x (D + 1)` matrix. Each
//! node block holds its `w` vector, its `v` vector and, for internal nodes,
//! its `theta` vector. A vector is written as a `ceil(d / 8)`-byte presence
//! mask (bit `j` of byte `j / 8`, least significant bit first) followed by
//! one f32 per set bit. Zero entries are never stored.
//!
//! Total size: `18 + 6 nz + (2^(h+1) - 1) * 2 m + (2^h - 1) m + 4 (nnz_w + nnz_v + nnz_theta)`
//! with `m = ceil(d / 8)`.

use super::{BonsaiConfig, BonsaiModel};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"BNSI";
pub const FORMAT_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 18;

fn mask_len(d: usize) -> usize {
    d.div_ceil(8)
}

fn write_vector(out: &mut Vec<u8>, v: &[f64]) {
    let mut mask = vec![0u8; mask_len(v.len())];
    for (j, &p) in v.iter().enumerate() {
        if p != 0.0 {
            mask[j / 8] |= 1 << (j % 8);
        }
    }
    out.extend_from_slice(&mask);
    for &p in v.iter().filter(|&&p| p != 0.0) {
        out.extend_from_slice(&(p as f32).to_le_bytes());
    }
}

pub fn serialize(model: &BonsaiModel) -> Vec<u8> {
    let cfg = &model.config;
    let d = cfg.proj_dim;
    let mut out = Vec::with_capacity(1024);
    out.extend_from_slice(MAGIC);
    out.push(FORMAT_VERSION);
    out.push(cfg.depth as u8);
    out.push(d as u8);
    out.push(cfg.input_dim as u8);
    out.extend_from_slice(&(cfg.sigma as f32).to_le_bytes());
    out.extend_from_slice(&(model.offset as f32).to_le_bytes());

    let nz: Vec<(usize, f64)> = model
        .projection
        .iter()
        .copied()
        .enumerate()
        .filter(|&(_, p)| p != 0.0)
        .collect();
    out.extend_from_slice(&(nz.len() as u16).to_le_bytes());
    for (i, p) in nz {
        out.extend_from_slice(&(i as u16).to_le_bytes());
        out.extend_from_slice(&(p as f32).to_le_bytes());
    }

    for k in 0..model.node_count() {
        write_vector(&mut out, model.node_w(k));
        write_vector(&mut out, model.node_v(k));
        if !model.is_leaf(k) {
            write_vector(&mut out, model.node_theta(k));
        }
    }
    out
}

pub fn model_size(model: &BonsaiModel) -> usize {
    serialize(model).len()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos,
                message: format!("truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn f32(&mut self, what: &str) -> Result<f64> {
        let at = self.pos;
        let b = self.take(4, what)?;
        let v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        if !v.is_finite() {
            return Err(Error::Format {
                offset: at,
                message: format!("non-finite {what}"),
            });
        }
        Ok(f64::from(v))
    }

    fn vector(&mut self, d: usize, what: &str) -> Result<Vec<f64>> {
        let at = self.pos;
        let mask = self.take(mask_len(d), what)?.to_vec();
        let mut out = vec![0.0; d];
        for (j, slot) in out.iter_mut().enumerate() {
            if mask[j / 8] & (1 << (j % 8)) != 0 {
                let v = self.f32(what)?;
                if v == 0.0 {
                    return Err(Error::Format {
                        offset: self.pos - 4,
                        message: format!("explicit zero in {what}"),
                    });
                }
                *slot = v;
            }
        }
        for bit in d..mask.len() * 8 {
            if mask[bit / 8] & (1 << (bit % 8)) != 0 {
                return Err(Error::Format {
                    offset: at + bit / 8,
                    message: format!("padding bit set in {what} mask"),
                });
            }
        }
        Ok(out)
    }
}

pub fn deserialize(bytes: &[u8]) -> Result<BonsaiModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "bad magic (expected BNSI)".into(),
        });
    }
    let version = r.u8("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: u32::from(version),
            expected: u32::from(FORMAT_VERSION),
        });
    }
    let depth = r.u8("depth")? as usize;
    let d = r.u8("proj_dim")? as usize;
    let input_dim = r.u8("input_dim")? as usize;
    let sigma = r.f32("sigma")?;
    let offset = r.f32("offset")?;
    let config = BonsaiConfig {
        depth,
        proj_dim: d,
        input_dim,
        sigma,
        ..BonsaiConfig::default()
    };
    config.validate().map_err(|e| Error::Format {
        offset: 5,
        message: e.to_string(),
    })?;

    let total = d * config.projection_cols();
    let nz = r.u16("projection count")? as usize;
    if nz > total {
        return Err(Error::Format {
            offset: 16,
            message: format!("{nz} projection entries exceed matrix size {total}"),
        });
    }
    let mut projection = vec![0.0; total];
    let mut last: Option<usize> = None;
    for _ in 0..nz {
        let at = r.pos;
        let idx = r.u16("projection index")? as usize;
        if idx >= total || last.is_some_and(|l| idx <= l) {
            return Err(Error::Format {
                offset: at,
                message: format!("projection index {idx} out of range or out of order"),
            });
        }
        let v = r.f32("projection value")?;
        if v == 0.0 {
            return Err(Error::Format {
                offset: at + 2,
                message: "explicit zero in projection".into(),
            });
        }
        projection[idx] = v;
        last = Some(idx);
    }

    let nodes = config.node_count();
    let internal = config.internal_count();
    let mut w = Vec::with_capacity(nodes * d);
    let mut v = Vec::with_capacity(nodes * d);
    let mut theta = Vec::with_capacity(internal * d);
    for k in 0..nodes {
        w.extend(r.vector(d, "w")?);
        v.extend(r.vector(d, "v")?);
        if k < internal {
            theta.extend(r.vector(d, "theta")?);
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Format {
            offset: r.pos,
            message: format!("{} trailing bytes", bytes.len() - r.pos),
        });
    }
    Ok(BonsaiModel {
        config,
        projection,
        w,
        v,
        theta,
        offset,
    })
}
