//! Little-endian codebook file.
//!
//! ```text
//! "PRCB" | u32 version | u8 profile id | u8 name length | name
//! f64 theta_sq | f64 theta_vq | u32 quantizer count
//! per quantizer: u8 role tag | u32 dim | u32 K | f32 centroids[K * dim]
//!                | u8 has_table | u8 code lengths[K] (if has_table)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{BitrateProfile, Codebook, ProfileId, Role};
use crate::entropy::huffman::HuffmanTable;
use crate::error::{Error, Result};
use crate::predictor::hash64;

pub const CODEBOOK_MAGIC: &[u8; 4] = b"PRCB";
pub const CODEBOOK_VERSION: u32 = 1;

pub fn write_profile(p: &BitrateProfile) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CODEBOOK_MAGIC);
    out.extend_from_slice(&CODEBOOK_VERSION.to_le_bytes());
    out.push(p.id as u8);
    let name = p.id.name();
    out.push(name.len() as u8);
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&p.theta_sq.to_le_bytes());
    out.extend_from_slice(&p.theta_vq.to_le_bytes());
    let roles: Vec<(Role, &Codebook)> = Role::ALL
        .iter()
        .filter_map(|&r| p.codebook(r).map(|cb| (r, cb)))
        .collect();
    out.extend_from_slice(&(roles.len() as u32).to_le_bytes());
    for (role, cb) in roles {
        out.push(role.tag());
        out.extend_from_slice(&(cb.dim as u32).to_le_bytes());
        out.extend_from_slice(&(cb.size() as u32).to_le_bytes());
        for &c in &cb.centroids {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
        match p.huffman.get(&role) {
            Some(t) => {
                out.push(1);
                out.extend_from_slice(t.lengths());
            }
            None => out.push(0),
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format("codebook file is truncated"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

pub fn read_profile(bytes: &[u8]) -> Result<BitrateProfile> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != CODEBOOK_MAGIC {
        return Err(Error::format("not a codebook file (bad magic)"));
    }
    let version = r.u32()?;
    if version != CODEBOOK_VERSION {
        return Err(Error::format(format!(
            "unsupported codebook version {version}"
        )));
    }
    let id = ProfileId::from_u8(r.u8()?)?;
    let name_len = r.u8()? as usize;
    let name = r.take(name_len)?;
    if name != id.name().as_bytes() {
        return Err(Error::format("codebook profile name disagrees with its id"));
    }
    let theta_sq = r.f64()?;
    let theta_vq = r.f64()?;
    let count = r.u32()? as usize;
    let mut books: BTreeMap<Role, Codebook> = BTreeMap::new();
    let mut huffman = BTreeMap::new();
    for _ in 0..count {
        let role = Role::from_tag(r.u8()?)?;
        let dim = r.u32()? as usize;
        let k = r.u32()? as usize;
        if dim != role.dim() || k == 0 || k > 1 << 16 {
            return Err(Error::format(format!(
                "{} quantizer has bad shape {k}x{dim}",
                role.name()
            )));
        }
        let raw = r.take(k * dim * 4)?;
        let centroids: Vec<f64> = raw
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes(b.try_into().expect("4 bytes"))))
            .collect();
        let mut cb = Codebook::new(dim, centroids).map_err(|e| Error::format(e.to_string()))?;
        cb.snap();
        if books.insert(role, cb).is_some() {
            return Err(Error::format(format!(
                "duplicate {} quantizer",
                role.name()
            )));
        }
        match r.u8()? {
            0 => {}
            1 => {
                let lengths = r.take(k)?.to_vec();
                huffman.insert(role, HuffmanTable::from_lengths(lengths)?);
            }
            v => return Err(Error::format(format!("bad table marker {v}"))),
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::format("trailing bytes after codebooks"));
    }
    let mut take = |role: Role| books.remove(&role);
    let missing = |role: Role| Error::format(format!("missing {} codebook", role.name()));
    let profile = BitrateProfile {
        id,
        theta_sq,
        theta_vq,
        sq_large: take(Role::SqLarge).ok_or_else(|| missing(Role::SqLarge))?,
        sq_small: take(Role::SqSmall),
        vq_large: [
            take(Role::VqLarge1).ok_or_else(|| missing(Role::VqLarge1))?,
            take(Role::VqLarge2).ok_or_else(|| missing(Role::VqLarge2))?,
        ],
        vq_small: take(Role::VqSmall),
        huffman,
    };
    profile
        .validate()
        .map_err(|e| Error::format(e.to_string()))?;
    Ok(profile)
}

pub fn save_profile(p: &BitrateProfile, path: &Path) -> Result<()> {
    fs::write(path, write_profile(p))?;
    Ok(())
}

pub fn load_profile(path: &Path) -> Result<BitrateProfile> {
    read_profile(&fs::read(path)?)
}

/// First 8 bytes of the SHA-256 of the serialized codebook file.
pub fn codebook_hash(p: &BitrateProfile) -> u64 {
    hash64(&write_profile(p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::rate::attach_uniform_tables;
    use crate::quantization::test_support::random_profile;

    #[test]
    fn roundtrip_all_profiles() {
        for id in ProfileId::ALL {
            let mut p = random_profile(id, 21);
            assert_eq!(read_profile(&write_profile(&p)).unwrap(), p);
            attach_uniform_tables(&mut p).unwrap();
            let back = read_profile(&write_profile(&p)).unwrap();
            assert_eq!(back, p);
            assert_eq!(codebook_hash(&back), codebook_hash(&p));
        }
    }

    #[test]
    fn high_threshold_sentinel_survives() {
        let p = random_profile(ProfileId::High, 2);
        let back = read_profile(&write_profile(&p)).unwrap();
        assert_eq!(back.theta_sq, f64::NEG_INFINITY);
    }

    #[test]
    fn corrupt_files_rejected() {
        let bytes = write_profile(&random_profile(ProfileId::Mid, 2));
        assert!(matches!(
            read_profile(&bytes[..bytes.len() - 3]),
            Err(Error::Format(_))
        ));
        let mut bad = bytes.clone();
        bad[0] = b'Q';
        assert!(read_profile(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(read_profile(&extra).is_err());
    }
}
