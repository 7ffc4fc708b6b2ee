//! Discriminative residual quantization.
//!
//! The 18-dim residual is split into its first coefficient (scalar path) and
//! the remaining 17 (vector path). Each path is thresholded on its own L1
//! norm: at or above the threshold the large scheme Q_L is used, below it the
//! small scheme Q_S, which in the low profile discards the component.

mod io;
mod kmeans;
mod residuals;
mod threshold;

use std::collections::BTreeMap;

use serde::Serialize;

pub use io::{codebook_hash, load_profile, read_profile, save_profile, write_profile};
pub use kmeans::{kmeans_train, KmeansResult};
pub use residuals::{generate_codebook_training_residuals, segment_bounds, TrainingResiduals};
pub use threshold::{calibrate_threshold, exceedance_fraction};

use crate::entropy::huffman::HuffmanTable;
use crate::error::{Error, Result};
use crate::features::NUM_CEPS;
use crate::grid;

pub const VQ_DIM: usize = NUM_CEPS - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum ProfileId {
    Low = 0,
    Mid = 1,
    High = 2,
}

impl ProfileId {
    pub const ALL: [ProfileId; 3] = [ProfileId::Low, ProfileId::Mid, ProfileId::High];

    pub fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(ProfileId::Low),
            1 => Ok(ProfileId::Mid),
            2 => Ok(ProfileId::High),
            _ => Err(Error::format(format!("unknown profile id {v}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ProfileId::Low => "low",
            ProfileId::Mid => "mid",
            ProfileId::High => "high",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "low" | "0" => Ok(ProfileId::Low),
            "mid" | "1" => Ok(ProfileId::Mid),
            "high" | "2" => Ok(ProfileId::High),
            _ => Err(Error::invalid(format!(
                "unknown profile '{s}' (low, mid, high)"
            ))),
        }
    }

    pub fn layout(self) -> ProfileLayout {
        match self {
            ProfileId::Low => ProfileLayout {
                id: self,
                ql_fraction_sq: 0.25,
                ql_fraction_vq: 0.25,
                sq_large_bits: 8,
                sq_small_bits: None,
                vq_large_bits: [10, 10],
                vq_small_bits: None,
            },
            ProfileId::Mid => ProfileLayout {
                id: self,
                ql_fraction_sq: 0.07,
                ql_fraction_vq: 0.07,
                sq_large_bits: 8,
                sq_small_bits: Some(4),
                vq_large_bits: [10, 10],
                vq_small_bits: Some(9),
            },
            ProfileId::High => ProfileLayout {
                id: self,
                ql_fraction_sq: 1.0,
                ql_fraction_vq: 1.0,
                sq_large_bits: 8,
                sq_small_bits: None,
                vq_large_bits: [10, 10],
                vq_small_bits: None,
            },
        }
    }
}

/// Fixed per-profile quantizer layout: Q_L target fractions and codebook
/// sizes in bits. `None` for a small scheme means DISCARD.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProfileLayout {
    pub id: ProfileId,
    pub ql_fraction_sq: f64,
    pub ql_fraction_vq: f64,
    pub sq_large_bits: u32,
    pub sq_small_bits: Option<u32>,
    pub vq_large_bits: [u32; 2],
    pub vq_small_bits: Option<u32>,
}

impl ProfileLayout {
    /// Whether per-frame Q_L/Q_S flags are transmitted.
    pub fn has_flags(&self) -> bool {
        self.id != ProfileId::High
    }

    pub fn roles(&self) -> Vec<Role> {
        let mut roles = vec![Role::SqLarge];
        if self.sq_small_bits.is_some() {
            roles.push(Role::SqSmall);
        }
        roles.extend([Role::VqLarge1, Role::VqLarge2]);
        if self.vq_small_bits.is_some() {
            roles.push(Role::VqSmall);
        }
        roles
    }

    pub fn role_bits(&self, role: Role) -> Option<u32> {
        match role {
            Role::SqLarge => Some(self.sq_large_bits),
            Role::SqSmall => self.sq_small_bits,
            Role::VqLarge1 => Some(self.vq_large_bits[0]),
            Role::VqLarge2 => Some(self.vq_large_bits[1]),
            Role::VqSmall => self.vq_small_bits,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Role {
    SqLarge = 0,
    SqSmall = 1,
    VqLarge1 = 2,
    VqLarge2 = 3,
    VqSmall = 4,
}

impl Role {
    pub const ALL: [Role; 5] = [
        Role::SqLarge,
        Role::SqSmall,
        Role::VqLarge1,
        Role::VqLarge2,
        Role::VqSmall,
    ];

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        Role::ALL
            .get(tag as usize)
            .copied()
            .ok_or_else(|| Error::format(format!("unknown quantizer role tag {tag}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Role::SqLarge => "SQ_L",
            Role::SqSmall => "SQ_S",
            Role::VqLarge1 => "VQ_L1",
            Role::VqLarge2 => "VQ_L2",
            Role::VqSmall => "VQ_S",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            Role::SqLarge | Role::SqSmall => 1,
            _ => VQ_DIM,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub dim: usize,
    /// `K x dim`, row-major, on the scaled-domain grid.
    pub centroids: Vec<f64>,
}

impl Codebook {
    pub fn new(dim: usize, centroids: Vec<f64>) -> Result<Self> {
        if dim == 0 || centroids.is_empty() || centroids.len() % dim != 0 {
            return Err(Error::invalid(
                "codebook size must be a positive multiple of dim",
            ));
        }
        if centroids.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("codebook centroids must be finite"));
        }
        Ok(Self { dim, centroids })
    }

    pub fn size(&self) -> usize {
        self.centroids.len() / self.dim
    }

    pub fn centroid(&self, i: usize) -> &[f64] {
        &self.centroids[i * self.dim..(i + 1) * self.dim]
    }

    /// Nearest centroid by squared Euclidean distance; lowest index on ties.
    pub fn nearest(&self, v: &[f64]) -> usize {
        debug_assert_eq!(v.len(), self.dim);
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, c) in self.centroids.chunks_exact(self.dim).enumerate() {
            let d: f64 = c.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    /// Rounds centroids to `f32` precision and onto the scaled-domain grid.
    pub fn snap(&mut self) {
        for c in &mut self.centroids {
            *c = grid::snap(f64::from(*c as f32));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScalarCode {
    Large(u16),
    Small(u16),
    Discard,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VectorCode {
    /// Stage-1 and stage-2 indices.
    Large([u16; 2]),
    Small(u16),
    Discard,
}

/// Quantizer output for one frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodedFrame {
    pub scalar: ScalarCode,
    pub vector: VectorCode,
}

impl CodedFrame {
    pub fn sq_flag(&self) -> bool {
        matches!(self.scalar, ScalarCode::Large(_))
    }

    pub fn vq_flag(&self) -> bool {
        matches!(self.vector, VectorCode::Large(_))
    }

    /// `(role, index)` pairs in transmission order.
    pub fn symbols(&self) -> Vec<(Role, usize)> {
        let mut out = Vec::with_capacity(3);
        match self.scalar {
            ScalarCode::Large(i) => out.push((Role::SqLarge, i as usize)),
            ScalarCode::Small(i) => out.push((Role::SqSmall, i as usize)),
            ScalarCode::Discard => {}
        }
        match self.vector {
            VectorCode::Large([a, b]) => {
                out.push((Role::VqLarge1, a as usize));
                out.push((Role::VqLarge2, b as usize));
            }
            VectorCode::Small(i) => out.push((Role::VqSmall, i as usize)),
            VectorCode::Discard => {}
        }
        out
    }
}

/// A trained profile: thresholds, codebooks and (once estimated) the
/// Huffman tables for every quantizer role.
#[derive(Debug, Clone, PartialEq)]
pub struct BitrateProfile {
    pub id: ProfileId,
    pub theta_sq: f64,
    pub theta_vq: f64,
    pub sq_large: Codebook,
    pub sq_small: Option<Codebook>,
    pub vq_large: [Codebook; 2],
    pub vq_small: Option<Codebook>,
    pub huffman: BTreeMap<Role, HuffmanTable>,
}

impl BitrateProfile {
    pub fn layout(&self) -> ProfileLayout {
        self.id.layout()
    }

    pub fn codebook(&self, role: Role) -> Option<&Codebook> {
        match role {
            Role::SqLarge => Some(&self.sq_large),
            Role::SqSmall => self.sq_small.as_ref(),
            Role::VqLarge1 => Some(&self.vq_large[0]),
            Role::VqLarge2 => Some(&self.vq_large[1]),
            Role::VqSmall => self.vq_small.as_ref(),
        }
    }

    /// Checks codebook presence, sizes and dimensions against the layout.
    pub fn validate(&self) -> Result<()> {
        let layout = self.layout();
        for role in Role::ALL {
            let expected = layout.role_bits(role);
            match (expected, self.codebook(role)) {
                (None, None) => {}
                (Some(bits), Some(cb)) => {
                    if cb.size() != 1usize << bits || cb.dim != role.dim() {
                        return Err(Error::invalid(format!(
                            "{} codebook is {}x{}, profile {} expects {}x{}",
                            role.name(),
                            cb.size(),
                            cb.dim,
                            self.id.name(),
                            1usize << bits,
                            role.dim()
                        )));
                    }
                    if let Some(t) = self.huffman.get(&role) {
                        if t.len() != cb.size() {
                            return Err(Error::invalid(format!(
                                "{} Huffman table has {} symbols for {} codewords",
                                role.name(),
                                t.len(),
                                cb.size()
                            )));
                        }
                    }
                }
                (None, Some(_)) => {
                    return Err(Error::invalid(format!(
                        "profile {} has no {} quantizer",
                        self.id.name(),
                        role.name()
                    )))
                }
                (Some(_), None) => {
                    return Err(Error::invalid(format!("missing {} codebook", role.name())))
                }
            }
        }
        if self.id == ProfileId::High
            && (self.theta_sq != f64::NEG_INFINITY || self.theta_vq != f64::NEG_INFINITY)
        {
            return Err(Error::invalid("high profile must not threshold"));
        }
        if self.theta_sq.is_nan() || self.theta_vq.is_nan() {
            return Err(Error::invalid("thresholds must not be NaN"));
        }
        Ok(())
    }

    pub fn has_huffman_tables(&self) -> bool {
        self.layout()
            .roles()
            .iter()
            .all(|r| self.huffman.contains_key(r))
    }

    pub fn huffman_table(&self, role: Role) -> Result<&HuffmanTable> {
        self.huffman
            .get(&role)
            .ok_or_else(|| Error::invalid(format!("no Huffman table for {}", role.name())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualSplit<'a> {
    pub r0: f64,
    pub r_vec: &'a [f64],
}

pub fn split(r: &[f64; NUM_CEPS]) -> ResidualSplit<'_> {
    ResidualSplit {
        r0: r[0],
        r_vec: &r[1..],
    }
}

pub fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

fn nearest_scalar(cb: &Codebook, x: f64) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, &c) in cb.centroids.iter().enumerate() {
        let d = (c - x).abs();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Chooses Q_L or Q_S per component by comparing its L1 norm to the
/// profile threshold, then finds the nearest codewords.
pub fn quantize_residual(r: &[f64; NUM_CEPS], profile: &BitrateProfile) -> CodedFrame {
    let s = split(r);
    let scalar = if s.r0.abs() >= profile.theta_sq {
        ScalarCode::Large(nearest_scalar(&profile.sq_large, s.r0) as u16)
    } else {
        match &profile.sq_small {
            Some(cb) => ScalarCode::Small(nearest_scalar(cb, s.r0) as u16),
            None => ScalarCode::Discard,
        }
    };
    let vector = if l1(s.r_vec) >= profile.theta_vq {
        let first = profile.vq_large[0].nearest(s.r_vec);
        let c = profile.vq_large[0].centroid(first);
        let remainder: Vec<f64> = s.r_vec.iter().zip(c).map(|(a, b)| a - b).collect();
        let second = profile.vq_large[1].nearest(&remainder);
        VectorCode::Large([first as u16, second as u16])
    } else {
        match &profile.vq_small {
            Some(cb) => VectorCode::Small(cb.nearest(s.r_vec) as u16),
            None => VectorCode::Discard,
        }
    };
    CodedFrame { scalar, vector }
}

fn lookup<'a>(profile: &'a BitrateProfile, role: Role, index: u16) -> Result<&'a [f64]> {
    let cb = profile.codebook(role).ok_or_else(|| {
        Error::corrupt(format!(
            "{} code in a {} profile stream",
            role.name(),
            profile.id.name()
        ))
    })?;
    if index as usize >= cb.size() {
        return Err(Error::corrupt(format!(
            "{} index {index} out of range ({} codewords)",
            role.name(),
            cb.size()
        )));
    }
    Ok(cb.centroid(index as usize))
}

pub fn dequantize_residual(code: &CodedFrame, profile: &BitrateProfile) -> Result<[f64; NUM_CEPS]> {
    let mut out = [0.0; NUM_CEPS];
    match code.scalar {
        ScalarCode::Large(i) => out[0] = lookup(profile, Role::SqLarge, i)?[0],
        ScalarCode::Small(i) => out[0] = lookup(profile, Role::SqSmall, i)?[0],
        ScalarCode::Discard => {
            if profile.sq_small.is_some() {
                return Err(Error::corrupt(
                    "discarded scalar in a profile without DISCARD",
                ));
            }
        }
    }
    match code.vector {
        VectorCode::Large([a, b]) => {
            let c1 = lookup(profile, Role::VqLarge1, a)?;
            let c2 = lookup(profile, Role::VqLarge2, b)?;
            for k in 0..VQ_DIM {
                out[k + 1] = c1[k] + c2[k];
            }
        }
        VectorCode::Small(i) => {
            out[1..].copy_from_slice(lookup(profile, Role::VqSmall, i)?);
        }
        VectorCode::Discard => {
            if profile.vq_small.is_some() {
                return Err(Error::corrupt(
                    "discarded vector in a profile without DISCARD",
                ));
            }
        }
    }
    Ok(out)
}
