//! `SMB1` binary dataset files and their JSON manifests.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "SMB1"  u16 version=1  u16 reserved=0
//! f64 q_pos  u32 s_low  u32 s_high  u32 M  u32 K  u32 R
//! f64 shift  f64 mean  f64 std  u64 seed
//! u64 N
//! N x { u32 S  u8 y  i32 u  S*M x f32 }
//! ```
//!
//! `u` is the one-based window start, or -1 for negative bags. Bag ids are
//! not stored; reading assigns ids `0..N` in file order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Bag, Dataset, GenParams};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"SMB1";
pub const FORMAT_VERSION: u16 = 1;

pub fn encode_dataset(ds: &Dataset) -> Vec<u8> {
    let p = &ds.params;
    let payload: usize = ds.bags.iter().map(|b| 9 + 4 * b.features().len()).sum();
    let mut out = Vec::with_capacity(80 + payload);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&p.q_pos.to_le_bytes());
    for v in [p.s_low, p.s_high, p.num_features, p.num_discriminative, p.window] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in [p.shift, p.base_mean, p.base_std] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&p.seed.to_le_bytes());
    out.extend_from_slice(&(ds.bags.len() as u64).to_le_bytes());
    for bag in &ds.bags {
        out.extend_from_slice(&(bag.num_instances() as u32).to_le_bytes());
        out.push(bag.label as u8);
        let u = bag.window_start.map_or(-1, |u| u as i32 + 1);
        out.extend_from_slice(&u.to_le_bytes());
        for x in bag.features() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N]> {
        let end = self.pos.checked_add(N).filter(|&e| e <= self.buf.len());
        let end = end.ok_or(Error::Truncated(what))?;
        let mut out = [0u8; N];
        out.copy_from_slice(&self.buf[self.pos..end]);
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.take::<1>(what)?[0])
    }
    fn u16(&mut self, what: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(what)?))
    }
    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(what)?))
    }
    fn i32(&mut self, what: &'static str) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(what)?))
    }
    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(what)?))
    }
    fn f64(&mut self, what: &'static str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(what)?))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

pub fn decode_dataset(buf: &[u8]) -> Result<Dataset> {
    let mut r = Reader { buf, pos: 0 };
    let magic = r.take::<4>("magic")?;
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = r.u16("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::BadVersion(version));
    }
    let reserved = r.u16("reserved")?;
    if reserved != 0 {
        return Err(Error::Corrupt(format!("reserved header field is {reserved}")));
    }
    let params = GenParams {
        q_pos: r.f64("q_pos")?,
        s_low: r.u32("s_low")?,
        s_high: r.u32("s_high")?,
        num_features: r.u32("num_features")?,
        num_discriminative: r.u32("num_discriminative")?,
        window: r.u32("window")?,
        shift: r.f64("shift")?,
        base_mean: r.f64("base_mean")?,
        base_std: r.f64("base_std")?,
        seed: r.u64("seed")?,
    };
    params.validate().map_err(|e| Error::Corrupt(format!("header: {e}")))?;
    let n = r.u64("bag count")?;
    let m = params.m();
    // Every bag occupies at least 9 + 4*M*s_low bytes.
    let min_bag = 9 + 4 * m * params.s_low as usize;
    if (n as u128) * (min_bag as u128) > r.remaining() as u128 {
        return Err(Error::Truncated("bags"));
    }

    let mut bags = Vec::with_capacity(n as usize);
    for id in 0..n {
        let s = r.u32("instance count")? as usize;
        if s < params.s_low as usize || s > params.s_high as usize {
            return Err(Error::Corrupt(format!("bag {id} has {s} instances")));
        }
        let label = match r.u8("label")? {
            0 => false,
            1 => true,
            other => return Err(Error::Corrupt(format!("bag {id} has label byte {other}"))),
        };
        let u = r.i32("window start")?;
        let window_start = match (label, u) {
            (false, -1) => None,
            (true, u) if u >= 1 && (u as usize) + params.r() - 1 <= s => Some(u as usize - 1),
            _ => {
                return Err(Error::Corrupt(format!(
                    "bag {id}: window start {u} invalid for label {} and {s} instances",
                    label as u8
                )))
            }
        };
        let count = s * m;
        if r.remaining() < 4 * count {
            return Err(Error::Truncated("features"));
        }
        let bytes = &r.buf[r.pos..r.pos + 4 * count];
        r.pos += 4 * count;
        let features: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let bag = Bag::new(id, label, window_start, m, features)?;
        bag.check(&params)?;
        bags.push(bag);
    }
    if r.remaining() != 0 {
        return Err(Error::Corrupt(format!("{} trailing bytes", r.remaining())));
    }
    Ok(Dataset { params, bags })
}

/// Hex SHA-256 of the encoded dataset.
pub fn dataset_checksum(ds: &Dataset) -> String {
    sha256_hex(&encode_dataset(ds))
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes the dataset; returns the checksum of the bytes written.
pub fn write_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<String> {
    let bytes = encode_dataset(ds);
    fs::write(path, &bytes)?;
    Ok(sha256_hex(&bytes))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    decode_dataset(&read_file(path.as_ref())?)
}

/// Human-readable sidecar describing a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u16,
    pub params: GenParams,
    pub n_bags: u64,
    pub n_positive: u64,
    pub positive_fraction: f64,
    pub checksum_sha256: String,
    /// True when bags carry no label information (zero shift or a
    /// degenerate prior).
    pub no_signal: bool,
}

impl Manifest {
    pub fn describe(ds: &Dataset, checksum: String) -> Self {
        Self {
            format: "SMB1".into(),
            version: FORMAT_VERSION,
            params: ds.params,
            n_bags: ds.len() as u64,
            n_positive: ds.num_positive() as u64,
            positive_fraction: ds.positive_fraction(),
            checksum_sha256: checksum,
            no_signal: !ds.params.has_signal(),
        }
    }

    /// `data.smb` -> `data.smb.json`
    pub fn path_for(dataset_path: &Path) -> PathBuf {
        let mut s = dataset_path.as_os_str().to_owned();
        s.push(".json");
        PathBuf::from(s)
    }
}

pub fn write_manifest(manifest: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(manifest)? + "\n")?;
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    Ok(serde_json::from_slice(&read_file(path.as_ref())?)?)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Error::File { path: path.to_path_buf(), source })
}
