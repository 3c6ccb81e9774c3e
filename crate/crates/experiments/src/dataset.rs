//! Binary channel dataset.
//!
//! Layout (little-endian): 8-byte magic `PMICH01\0`, `u32` version (1),
//! `u32 d`, `u32 n_r`, `u32 m`, `u8 has_covariance`, then `m` channel blocks
//! of `d * n_r` complex values, then, when flagged, `m` covariance blocks of
//! `d * d` complex values. Complex values are `(re, im)` pairs of `f64`;
//! matrices are stored column-major.

use std::path::Path;

use pmi_core::designs::synthetic_channel;
use pmi_core::linalg::{c, CMat};
use pmi_core::rng::stream;
use thiserror::Error;

pub const MAGIC: [u8; 8] = *b"PMICH01\0";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 * 4 + 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("bad magic at byte offset {offset}")]
    BadMagic { offset: usize },
    #[error("unsupported version {version} at byte offset {offset}")]
    Version { offset: usize, version: u32 },
    #[error("truncated file: needed {needed} bytes at byte offset {offset}, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("invalid header field `{field}` at byte offset {offset}: {detail}")]
    Header {
        offset: usize,
        field: &'static str,
        detail: String,
    },
    #[error("non-finite value at byte offset {offset}")]
    NonFinite { offset: usize },
    #[error("{extra} trailing bytes after offset {offset}")]
    Trailing { offset: usize, extra: usize },
    #[error("inconsistent dataset: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDataset {
    pub d: usize,
    pub n_r: usize,
    pub channels: Vec<CMat>,
    pub covariances: Option<Vec<CMat>>,
}

impl ChannelDataset {
    pub fn new(d: usize, n_r: usize, channels: Vec<CMat>, covariances: Option<Vec<CMat>>) -> Result<Self, DatasetError> {
        for (i, h) in channels.iter().enumerate() {
            if h.shape() != (d, n_r) {
                return Err(DatasetError::Shape(format!("channel {i} is {:?}, expected ({d}, {n_r})", h.shape())));
            }
        }
        if let Some(covs) = &covariances {
            if covs.len() != channels.len() {
                return Err(DatasetError::Shape(format!(
                    "{} covariances for {} channels",
                    covs.len(),
                    channels.len()
                )));
            }
            for (i, s) in covs.iter().enumerate() {
                if s.shape() != (d, d) {
                    return Err(DatasetError::Shape(format!("covariance {i} is {:?}, expected ({d}, {d})", s.shape())));
                }
            }
        }
        Ok(Self {
            d,
            n_r,
            channels,
            covariances,
        })
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let has_cov = self.covariances.is_some();
        let m = self.channels.len();
        let mut out = Vec::with_capacity(
            HEADER_LEN + 16 * m * (self.d * self.n_r + if has_cov { self.d * self.d } else { 0 }),
        );
        out.extend_from_slice(&MAGIC);
        for v in [VERSION, self.d as u32, self.n_r as u32, m as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(has_cov as u8);
        let push = |out: &mut Vec<u8>, mat: &CMat| {
            for z in mat.iter() {
                out.extend_from_slice(&z.re.to_le_bytes());
                out.extend_from_slice(&z.im.to_le_bytes());
            }
        };
        for h in &self.channels {
            push(&mut out, h);
        }
        if let Some(covs) = &self.covariances {
            for s in covs {
                push(&mut out, s);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DatasetError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(DatasetError::BadMagic { offset: 0 });
        }
        let off = r.pos;
        let version = r.u32()?;
        if version != VERSION {
            return Err(DatasetError::Version { offset: off, version });
        }
        let d_off = r.pos;
        let d = r.u32()? as usize;
        let n_r = r.u32()? as usize;
        let m = r.u32()? as usize;
        if d == 0 || n_r == 0 {
            return Err(DatasetError::Header {
                offset: d_off,
                field: "dims",
                detail: format!("d={d}, n_r={n_r}"),
            });
        }
        let flag_off = r.pos;
        let has_cov = match r.take(1)?[0] {
            0 => false,
            1 => true,
            other => {
                return Err(DatasetError::Header {
                    offset: flag_off,
                    field: "has_covariance",
                    detail: format!("expected 0 or 1, got {other}"),
                })
            }
        };
        let channels = (0..m).map(|_| r.matrix(d, n_r)).collect::<Result<Vec<_>, _>>()?;
        let covariances = if has_cov {
            Some((0..m).map(|_| r.matrix(d, d)).collect::<Result<Vec<_>, _>>()?)
        } else {
            None
        };
        if r.pos != bytes.len() {
            return Err(DatasetError::Trailing {
                offset: r.pos,
                extra: bytes.len() - r.pos,
            });
        }
        Self::new(d, n_r, channels, covariances)
    }

    pub fn write(&self, path: &Path) -> Result<(), DatasetError> {
        std::fs::write(path, self.to_bytes()).map_err(|e| DatasetError::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }

    pub fn read(path: &Path) -> Result<Self, DatasetError> {
        let bytes = std::fs::read(path).map_err(|e| DatasetError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_bytes(&bytes)
    }

    /// Synthetic ray-model channels with uplink covariances; sample `i` uses
    /// its own random stream so prefixes of larger datasets agree.
    pub fn synthetic(d: usize, n_r: usize, paths: usize, samples: usize, seed: u64) -> pmi_core::Result<Self> {
        let mut channels = Vec::with_capacity(samples);
        let mut covs = Vec::with_capacity(samples);
        for i in 0..samples {
            let mut rng = stream(seed, &[0xDA7A, i as u64]);
            let (h, sigma) = synthetic_channel(d, n_r, paths, &mut rng)?;
            channels.push(h.into_matrix());
            covs.push(sigma);
        }
        Ok(Self {
            d,
            n_r,
            channels,
            covariances: Some(covs),
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DatasetError> {
        let available = self.bytes.len() - self.pos;
        if available < n {
            return Err(DatasetError::Truncated {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, DatasetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64, DatasetError> {
        let off = self.pos;
        let v = f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        if !v.is_finite() {
            return Err(DatasetError::NonFinite { offset: off });
        }
        Ok(v)
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<CMat, DatasetError> {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            let re = self.f64()?;
            let im = self.f64()?;
            data.push(c(re, im));
        }
        Ok(CMat::from_vec(rows, cols, data))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> Vec<u8> {
        // 2 x 1, one sample: [1 - 2j, 0.5 + 0j], no covariance.
        let mut b = b"PMICH01\0".to_vec();
        b.extend_from_slice(&[1, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 0]);
        for v in [1.0f64, -2.0, 0.5, 0.0] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }

    #[test]
    fn hand_encoded_fixture() {
        let ds = ChannelDataset::from_bytes(&fixture()).unwrap();
        assert_eq!((ds.d, ds.n_r, ds.len()), (2, 1, 1));
        assert_eq!(ds.channels[0][(0, 0)], c(1.0, -2.0));
        assert_eq!(ds.channels[0][(1, 0)], c(0.5, 0.0));
        assert!(ds.covariances.is_none());
        assert_eq!(ds.to_bytes(), fixture());
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ds = ChannelDataset::synthetic(8, 2, 2, 3, 5).unwrap();
        let back = ChannelDataset::from_bytes(&ds.to_bytes()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn errors_name_offsets() {
        let good = fixture();
        match ChannelDataset::from_bytes(&good[..good.len() - 3]) {
            Err(DatasetError::Truncated { offset, .. }) => assert_eq!(offset, HEADER_LEN + 24),
            other => panic!("{other:?}"),
        }
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(ChannelDataset::from_bytes(&bad), Err(DatasetError::BadMagic { offset: 0 })));
        let mut v2 = good.clone();
        v2[8] = 2;
        assert!(matches!(ChannelDataset::from_bytes(&v2), Err(DatasetError::Version { offset: 8, version: 2 })));
        let mut flag = good.clone();
        flag[HEADER_LEN - 1] = 7;
        assert!(matches!(ChannelDataset::from_bytes(&flag), Err(DatasetError::Header { offset: 24, .. })));
        let mut nan = good.clone();
        nan[HEADER_LEN..HEADER_LEN + 8].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(ChannelDataset::from_bytes(&nan), Err(DatasetError::NonFinite { offset }) if offset == HEADER_LEN));
        let mut long = good;
        long.push(0);
        assert!(matches!(ChannelDataset::from_bytes(&long), Err(DatasetError::Trailing { extra: 1, .. })));
        let msg = ChannelDataset::from_bytes(&fixture()[..5]).unwrap_err().to_string();
        assert!(msg.contains("offset 0"), "{msg}");
    }

    #[test]
    fn synthetic_prefixes_agree() {
        let a = ChannelDataset::synthetic(8, 1, 2, 2, 9).unwrap();
        let b = ChannelDataset::synthetic(8, 1, 2, 4, 9).unwrap();
        assert_eq!(a.channels[..], b.channels[..2]);
    }
}
