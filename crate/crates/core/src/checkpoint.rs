//! Versioned binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "GPCK" | u32 version | u32 config_len | config bytes (key = value lines)
//! u32 param_count | per param: u32 name_len, name, u8 ndim, u64 dims..., f64 values...
//! u8 has_opt | optional Adam state (step, hyperparameters, moment arrays)
//! u32 crc32 of everything above
//! ```
//!
//! Values are raw IEEE-754 bits, so a write/read round trip is bit-exact.
//! The checksum is verified before any field is interpreted; a truncated or
//! corrupted file never yields a partial load.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::tensor::{AdamState, Tensor};

const MAGIC: &[u8; 4] = b"GPCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: BTreeMap<String, String>,
    pub params: ParamStore,
    pub opt: Option<AdamState>,
}

impl Checkpoint {
    pub fn new(config: BTreeMap<String, String>, params: ParamStore, opt: Option<AdamState>) -> Self {
        Checkpoint { config, params, opt }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());

        let mut config_text = String::new();
        for (k, v) in &self.config {
            config_text.push_str(k);
            config_text.push_str(" = ");
            config_text.push_str(v);
            config_text.push('\n');
        }
        buf.extend_from_slice(&(config_text.len() as u32).to_le_bytes());
        buf.extend_from_slice(config_text.as_bytes());

        write_named_tensors(&mut buf, self.params.map());

        match &self.opt {
            None => buf.push(0),
            Some(opt) => {
                buf.push(1);
                buf.extend_from_slice(&opt.step.to_le_bytes());
                for v in [opt.lr, opt.beta1, opt.beta2, opt.eps] {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
                write_named_tensors(&mut buf, &opt.m);
                write_named_tensors(&mut buf, &opt.v);
            }
        }

        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        if bytes.len() < 12 {
            return Err(Error::Checkpoint("file too short".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        if crc32fast::hash(body) != stored {
            return Err(Error::Checkpoint("checksum mismatch (truncated or corrupted file)".into()));
        }
        let mut cur = Cursor { buf: body, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version}, expected {VERSION}"
            )));
        }
        let config_len = cur.u32()? as usize;
        let config_text = std::str::from_utf8(cur.take(config_len)?)
            .map_err(|_| Error::Checkpoint("config echo is not UTF-8".into()))?;
        let mut config = BTreeMap::new();
        for line in config_text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                config.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        let params = ParamStore::from_map(read_named_tensors(&mut cur)?);
        let opt = match cur.u8()? {
            0 => None,
            1 => {
                let step = cur.u64()?;
                let lr = cur.f64()?;
                let beta1 = cur.f64()?;
                let beta2 = cur.f64()?;
                let eps = cur.f64()?;
                let m = read_named_tensors(&mut cur)?;
                let v = read_named_tensors(&mut cur)?;
                Some(AdamState { m, v, step, lr, beta1, beta2, eps })
            }
            other => return Err(Error::Checkpoint(format!("bad optimizer flag {other}"))),
        };
        if cur.pos != body.len() {
            return Err(Error::Checkpoint("trailing bytes after checkpoint body".into()));
        }
        Ok(Checkpoint { config, params, opt })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes();
        let mut f = std::fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Checkpoint> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// The integrity checksum: CRC32 of the serialized body, identical to the
    /// value stored in the trailing four bytes. Equal checksums mean
    /// bit-identical checkpoint files.
    pub fn checksum(&self) -> u32 {
        let bytes = self.to_bytes();
        stored_checksum(&bytes).expect("freshly serialized checkpoint")
    }
}

/// The checksum stored in a serialized checkpoint's trailing four bytes.
pub fn stored_checksum(bytes: &[u8]) -> Result<u32> {
    if bytes.len() < 4 {
        return Err(Error::Checkpoint("file too short".into()));
    }
    Ok(u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap()))
}

fn write_named_tensors(buf: &mut Vec<u8>, map: &BTreeMap<String, Tensor>) {
    buf.extend_from_slice(&(map.len() as u32).to_le_bytes());
    for (name, t) in map {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(t.shape().len() as u8);
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn read_named_tensors(cur: &mut Cursor<'_>) -> Result<BTreeMap<String, Tensor>> {
    let count = cur.u32()? as usize;
    let mut map = BTreeMap::new();
    for _ in 0..count {
        let name_len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let ndim = cur.u8()? as usize;
        if !(1..=3).contains(&ndim) {
            return Err(Error::Checkpoint(format!("parameter `{name}` has {ndim} dims")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(cur.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(cur.f64()?);
        }
        map.insert(name, Tensor::new(shape, data));
    }
    Ok(map)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("unexpected end of file".into()));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_checkpoint() -> Checkpoint {
        let mut params = ParamStore::new();
        params.insert("embed.e", Tensor::matrix(2, 3, vec![0.1, -0.2, 0.3, 1.5e-300, -0.0, 7.0]));
        params.insert("gcn.0.w1", Tensor::new(vec![2, 2, 2], (0..8).map(|i| i as f64).collect()));
        let config = BTreeMap::from([("model.hidden_dim".to_string(), "8".to_string())]);
        let mut opt = AdamState::new(1e-3);
        opt.step = 17;
        opt.m.insert("embed.e".to_string(), Tensor::matrix(2, 3, vec![0.5; 6]));
        opt.v.insert("embed.e".to_string(), Tensor::matrix(2, 3, vec![0.25; 6]));
        Checkpoint::new(config, params, Some(opt))
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let ck = sample_checkpoint();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.config, ck.config);
        let opt = back.opt.unwrap();
        assert_eq!(opt.step, 17);
        for (a, b) in ck.params.map()["embed.e"].data().iter().zip(back.params.map()["embed.e"].data())
        {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn truncated_file_fails_checksum() {
        let bytes = sample_checkpoint().to_bytes();
        for cut in [bytes.len() - 1, bytes.len() / 2, 8] {
            let err = Checkpoint::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::Checkpoint(_)), "cut at {cut}: {err}");
        }
    }

    #[test]
    fn corrupted_byte_fails_checksum() {
        let mut bytes = sample_checkpoint().to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }

    #[test]
    fn different_content_gives_different_checksums() {
        // Hashing a file that ends with its own CRC always yields the fixed
        // residue value, so the checksum must come from the stored field.
        let a = sample_checkpoint();
        let mut params = ParamStore::new();
        params.insert("embed.e", Tensor::matrix(1, 1, vec![42.0]));
        let b = Checkpoint::new(BTreeMap::new(), params, None);
        assert_ne!(a.checksum(), b.checksum());
        assert_eq!(stored_checksum(&a.to_bytes()).unwrap(), a.checksum());
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let mut bytes = sample_checkpoint().to_bytes();
        bytes[4] = 99;
        let body_len = bytes.len() - 4;
        let crc = crc32fast::hash(&bytes[..body_len]);
        bytes[body_len..].copy_from_slice(&crc.to_le_bytes());
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn random_params_roundtrip_bitwise(
            seeds in prop::collection::vec(any::<u64>(), 1..6),
            rows in 1usize..5,
            cols in 1usize..5,
        ) {
            let mut params = ParamStore::new();
            for (i, s) in seeds.iter().enumerate() {
                let data: Vec<f64> = (0..rows * cols)
                    .map(|j| f64::from_bits(s.wrapping_mul(j as u64 + 1) | 1) % 1e3)
                    .map(|v| if v.is_finite() { v } else { 0.0 })
                    .collect();
                params.insert(format!("p{i}"), Tensor::matrix(rows, cols, data));
            }
            let ck = Checkpoint::new(BTreeMap::new(), params, None);
            let bytes = ck.to_bytes();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
        }
    }
}
