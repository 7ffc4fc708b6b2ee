//! Wire format.
//!
//! Header (byte-aligned): magic `PRBS`, u16 version, u8 profile id, u64
//! predictor hash, u64 codebook hash, u32 frame count, all big-endian.
//! Then one packet per four frames, bit-packed MSB-first with no alignment:
//! 11 pitch bits, then per frame the two Q_L flags (except in the high
//! profile) and the Huffman codes in SQ, VQ stage 1, VQ stage 2 order. A
//! short final packet simply has fewer frames. The stream is zero-padded to
//! a whole byte.

use super::bits::{BitReader, BitWriter};
use super::pitch::{FRAMES_PER_PACKET, PITCH_BITS};
use crate::error::{Error, Result};
use crate::quantization::{BitrateProfile, CodedFrame, ProfileId, Role, ScalarCode, VectorCode};

pub const MAGIC: [u8; 4] = *b"PRBS";
pub const VERSION: u16 = 1;
pub const HEADER_BYTES: usize = 4 + 2 + 1 + 8 + 8 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub profile: ProfileId,
    pub weights_hash: u64,
    pub codebook_hash: u64,
    pub frame_count: u32,
}

impl Header {
    pub fn to_bytes(&self) -> [u8; HEADER_BYTES] {
        let mut out = [0u8; HEADER_BYTES];
        out[..4].copy_from_slice(&MAGIC);
        out[4..6].copy_from_slice(&VERSION.to_be_bytes());
        out[6] = self.profile as u8;
        out[7..15].copy_from_slice(&self.weights_hash.to_be_bytes());
        out[15..23].copy_from_slice(&self.codebook_hash.to_be_bytes());
        out[23..27].copy_from_slice(&self.frame_count.to_be_bytes());
        out
    }
}

pub fn read_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < HEADER_BYTES {
        return Err(Error::format(format!(
            "bitstream has {} bytes, header needs {HEADER_BYTES}",
            bytes.len()
        )));
    }
    if bytes[..4] != MAGIC {
        return Err(Error::format("not a bitstream (bad magic)"));
    }
    let version = u16::from_be_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::format(format!(
            "unsupported bitstream version {version}"
        )));
    }
    let u64_at = |i: usize| u64::from_be_bytes(bytes[i..i + 8].try_into().expect("8 bytes"));
    Ok(Header {
        profile: ProfileId::from_u8(bytes[6])?,
        weights_hash: u64_at(7),
        codebook_hash: u64_at(15),
        frame_count: u32::from_be_bytes(bytes[23..27].try_into().expect("4 bytes")),
    })
}

fn check_frame(frame: &CodedFrame, profile: &BitrateProfile) -> Result<()> {
    let layout = profile.layout();
    let ok_scalar = match frame.scalar {
        ScalarCode::Large(_) => true,
        ScalarCode::Small(_) => layout.sq_small_bits.is_some(),
        ScalarCode::Discard => layout.has_flags() && layout.sq_small_bits.is_none(),
    };
    let ok_vector = match frame.vector {
        VectorCode::Large(_) => true,
        VectorCode::Small(_) => layout.vq_small_bits.is_some(),
        VectorCode::Discard => layout.has_flags() && layout.vq_small_bits.is_none(),
    };
    if ok_scalar && ok_vector {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "coded frame {frame:?} does not fit the {} profile",
            profile.id.name()
        )))
    }
}

fn write_payload(
    w: &mut BitWriter,
    pitch_codes: &[u16],
    frames: &[CodedFrame],
    profile: &BitrateProfile,
) -> Result<()> {
    if pitch_codes.len() != frames.len().div_ceil(FRAMES_PER_PACKET) {
        return Err(Error::invalid(format!(
            "{} pitch codes for {} frames",
            pitch_codes.len(),
            frames.len()
        )));
    }
    let flags = profile.layout().has_flags();
    for (packet, &pitch) in frames.chunks(FRAMES_PER_PACKET).zip(pitch_codes) {
        if pitch >= 1 << PITCH_BITS {
            return Err(Error::invalid(format!(
                "pitch code {pitch} exceeds {PITCH_BITS} bits"
            )));
        }
        w.write_bits(u64::from(pitch), PITCH_BITS);
        for frame in packet {
            check_frame(frame, profile)?;
            if flags {
                w.write_bit(frame.sq_flag());
                w.write_bit(frame.vq_flag());
            }
            for (role, index) in frame.symbols() {
                profile.huffman_table(role)?.encode_symbol(index, w)?;
            }
        }
    }
    Ok(())
}

/// Exact number of payload bits (excluding header and final byte padding).
pub fn payload_bits(
    pitch_codes: &[u16],
    frames: &[CodedFrame],
    profile: &BitrateProfile,
) -> Result<usize> {
    let mut w = BitWriter::new();
    write_payload(&mut w, pitch_codes, frames, profile)?;
    Ok(w.bit_len())
}

pub fn pack(
    header: &Header,
    pitch_codes: &[u16],
    frames: &[CodedFrame],
    profile: &BitrateProfile,
) -> Result<Vec<u8>> {
    if header.frame_count as usize != frames.len() {
        return Err(Error::invalid(
            "header frame count disagrees with the frames",
        ));
    }
    if header.profile != profile.id {
        return Err(Error::invalid(
            "header profile disagrees with the codebooks",
        ));
    }
    let mut w = BitWriter::new();
    write_payload(&mut w, pitch_codes, frames, profile)?;
    let mut out = header.to_bytes().to_vec();
    out.extend(w.finish());
    Ok(out)
}

fn read_index(r: &mut BitReader, profile: &BitrateProfile, role: Role) -> Result<u16> {
    Ok(profile.huffman_table(role)?.decode_symbol(r)? as u16)
}

pub fn unpack(
    bytes: &[u8],
    profile: &BitrateProfile,
) -> Result<(Header, Vec<u16>, Vec<CodedFrame>)> {
    let header = read_header(bytes)?;
    if header.profile != profile.id {
        return Err(Error::format(format!(
            "stream uses the {} profile, codebooks are for {}",
            header.profile.name(),
            profile.id.name()
        )));
    }
    let layout = profile.layout();
    let n = header.frame_count as usize;
    let mut r = BitReader::new(&bytes[HEADER_BYTES..]);
    let mut pitch_codes = Vec::with_capacity(n.div_ceil(FRAMES_PER_PACKET));
    let mut frames = Vec::with_capacity(n);
    for start in (0..n).step_by(FRAMES_PER_PACKET) {
        pitch_codes.push(r.read_bits(PITCH_BITS)? as u16);
        for _ in start..(start + FRAMES_PER_PACKET).min(n) {
            let (sq_large, vq_large) = if layout.has_flags() {
                (r.read_bit()?, r.read_bit()?)
            } else {
                (true, true)
            };
            let scalar = if sq_large {
                ScalarCode::Large(read_index(&mut r, profile, Role::SqLarge)?)
            } else if layout.sq_small_bits.is_some() {
                ScalarCode::Small(read_index(&mut r, profile, Role::SqSmall)?)
            } else {
                ScalarCode::Discard
            };
            let vector = if vq_large {
                VectorCode::Large([
                    read_index(&mut r, profile, Role::VqLarge1)?,
                    read_index(&mut r, profile, Role::VqLarge2)?,
                ])
            } else if layout.vq_small_bits.is_some() {
                VectorCode::Small(read_index(&mut r, profile, Role::VqSmall)?)
            } else {
                VectorCode::Discard
            };
            frames.push(CodedFrame { scalar, vector });
        }
    }
    if r.remaining() >= 8 {
        return Err(Error::corrupt(format!(
            "{} unexpected trailing bits",
            r.remaining()
        )));
    }
    while r.remaining() > 0 {
        if r.read_bit()? {
            return Err(Error::corrupt("non-zero padding bits"));
        }
    }
    Ok((header, pitch_codes, frames))
}
