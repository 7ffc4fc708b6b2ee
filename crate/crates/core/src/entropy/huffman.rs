//! Canonical Huffman codes.
//!
//! Code lengths come from the two-queue construction over symbols sorted by
//! (weight, id). Codes are then assigned canonically: shorter codes first,
//! ties by symbol id. Only the lengths need to be stored to rebuild a table.

use std::collections::VecDeque;

use super::bits::{BitReader, BitWriter};
use crate::error::{Error, Result};

/// Longest code the bit writer can emit in one call.
pub const MAX_CODE_LEN: u8 = 63;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HuffmanTable {
    lengths: Vec<u8>,
    codes: Vec<u64>,
    /// Symbols sorted by (length, id).
    sorted: Vec<u32>,
    /// Per length: number of codes, first code value, offset into `sorted`.
    count: Vec<u32>,
    first: Vec<u64>,
    offset: Vec<u32>,
}

/// Code lengths from symbol weights (any non-negative scale).
pub fn huffman_lengths(weights: &[f64]) -> Result<Vec<u8>> {
    if weights.is_empty() {
        return Err(Error::invalid("Huffman table needs at least one symbol"));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::invalid(
            "Huffman weights must be finite and non-negative",
        ));
    }
    let n = weights.len();
    if n == 1 {
        return Ok(vec![0]);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| weights[a].total_cmp(&weights[b]).then(a.cmp(&b)));

    // Node storage: leaves 0..n, internal nodes appended. parent[] links up.
    let mut weight: Vec<f64> = weights.to_vec();
    let mut parent: Vec<usize> = vec![usize::MAX; n];
    let mut leaves: VecDeque<usize> = order.into_iter().collect();
    let mut internal: VecDeque<usize> = VecDeque::new();

    let pop_min =
        |leaves: &mut VecDeque<usize>, internal: &mut VecDeque<usize>, weight: &[f64]| match (
            leaves.front(),
            internal.front(),
        ) {
            (Some(&l), Some(&i)) => {
                if weight[l] <= weight[i] {
                    leaves.pop_front().unwrap()
                } else {
                    internal.pop_front().unwrap()
                }
            }
            (Some(_), None) => leaves.pop_front().unwrap(),
            (None, Some(_)) => internal.pop_front().unwrap(),
            (None, None) => unreachable!(),
        };

    while leaves.len() + internal.len() > 1 {
        let a = pop_min(&mut leaves, &mut internal, &weight);
        let b = pop_min(&mut leaves, &mut internal, &weight);
        let node = weight.len();
        weight.push(weight[a] + weight[b]);
        parent.push(usize::MAX);
        parent[a] = node;
        parent[b] = node;
        internal.push_back(node);
    }

    let mut lengths = vec![0u8; n];
    for (sym, len) in lengths.iter_mut().enumerate() {
        let mut depth = 0u32;
        let mut node = sym;
        while parent[node] != usize::MAX {
            node = parent[node];
            depth += 1;
        }
        if depth > u32::from(MAX_CODE_LEN) {
            return Err(Error::invalid(format!(
                "Huffman code length {depth} too long"
            )));
        }
        *len = depth as u8;
    }
    Ok(lengths)
}

impl HuffmanTable {
    pub fn build(weights: &[f64]) -> Result<Self> {
        Self::from_lengths(huffman_lengths(weights)?)
    }

    pub fn from_lengths(lengths: Vec<u8>) -> Result<Self> {
        if lengths.is_empty() {
            return Err(Error::format("empty Huffman table"));
        }
        if lengths.len() == 1 {
            if lengths[0] != 0 {
                return Err(Error::format(
                    "single-symbol table must have a zero-length code",
                ));
            }
        } else if lengths.iter().any(|&l| l == 0 || l > MAX_CODE_LEN) {
            return Err(Error::format("Huffman code length out of range"));
        }
        let max_len = *lengths.iter().max().unwrap() as usize;
        // Kraft sum in units of 2^-max_len.
        let kraft: u128 = lengths
            .iter()
            .map(|&l| 1u128 << (max_len - l as usize))
            .sum();
        if kraft > 1u128 << max_len {
            return Err(Error::format(
                "Huffman lengths violate the Kraft inequality",
            ));
        }

        let mut sorted: Vec<u32> = (0..lengths.len() as u32).collect();
        sorted.sort_by_key(|&s| (lengths[s as usize], s));
        let mut count = vec![0u32; max_len + 1];
        for &l in &lengths {
            count[l as usize] += 1;
        }
        let mut first = vec![0u64; max_len + 1];
        let mut offset = vec![0u32; max_len + 1];
        let mut code = 0u64;
        let mut off = 0u32;
        for len in 1..=max_len {
            code = (code + u64::from(count[len - 1])) << 1;
            if len == 1 {
                code = 0;
            }
            first[len] = code;
            offset[len] = off + if len == 1 { count[0] } else { 0 };
            off = offset[len] + count[len];
        }
        let mut codes = vec![0u64; lengths.len()];
        for len in 1..=max_len {
            let base = offset[len] as usize;
            for k in 0..count[len] as usize {
                codes[sorted[base + k] as usize] = first[len] + k as u64;
            }
        }
        Ok(Self {
            lengths,
            codes,
            sorted,
            count,
            first,
            offset,
        })
    }

    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    pub fn lengths(&self) -> &[u8] {
        &self.lengths
    }

    pub fn code(&self, symbol: usize) -> (u64, u8) {
        (self.codes[symbol], self.lengths[symbol])
    }

    /// Expected code length under distribution `p`.
    pub fn average_length(&self, p: &[f64]) -> f64 {
        p.iter()
            .zip(&self.lengths)
            .map(|(p, &l)| p * f64::from(l))
            .sum()
    }

    pub fn encode_symbol(&self, symbol: usize, w: &mut BitWriter) -> Result<()> {
        if symbol >= self.len() {
            return Err(Error::invalid(format!(
                "symbol {symbol} outside table of {}",
                self.len()
            )));
        }
        let (code, len) = self.code(symbol);
        w.write_bits(code, u32::from(len));
        Ok(())
    }

    pub fn decode_symbol(&self, r: &mut BitReader) -> Result<usize> {
        if self.lengths.len() == 1 {
            return Ok(0);
        }
        let mut code = 0u64;
        for len in 1..self.count.len() {
            code = (code << 1) | u64::from(r.read_bit()?);
            let n = u64::from(self.count[len]);
            if n > 0 && code >= self.first[len] && code - self.first[len] < n {
                let idx = self.offset[len] as usize + (code - self.first[len]) as usize;
                return Ok(self.sorted[idx] as usize);
            }
        }
        Err(Error::corrupt("invalid Huffman code"))
    }
}

pub fn huffman_encode(indices: &[usize], table: &HuffmanTable) -> Result<(Vec<u8>, usize)> {
    let mut w = BitWriter::new();
    for &s in indices {
        table.encode_symbol(s, &mut w)?;
    }
    let bits = w.bit_len();
    Ok((w.finish(), bits))
}

pub fn huffman_decode(bytes: &[u8], table: &HuffmanTable, count: usize) -> Result<Vec<usize>> {
    let mut r = BitReader::new(bytes);
    (0..count).map(|_| table.decode_symbol(&mut r)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_equiprobable() {
        let t = HuffmanTable::build(&[0.5, 0.5]).unwrap();
        assert_eq!(t.lengths(), &[1, 1]);
        assert_eq!(t.code(0), (0, 1));
        assert_eq!(t.code(1), (1, 1));
    }

    #[test]
    fn textbook_lengths() {
        let p = [0.5, 0.25, 0.25];
        let t = HuffmanTable::build(&p).unwrap();
        assert_eq!(t.lengths(), &[1, 2, 2]);
        assert_eq!(t.average_length(&p), 1.5);
        assert_eq!(t.code(0), (0b0, 1));
        assert_eq!(t.code(1), (0b10, 2));
        assert_eq!(t.code(2), (0b11, 2));
    }

    #[test]
    fn single_symbol_costs_nothing() {
        let t = HuffmanTable::build(&[1.0]).unwrap();
        assert_eq!(t.lengths(), &[0]);
        let (bytes, bits) = huffman_encode(&[0, 0, 0], &t).unwrap();
        assert_eq!(bits, 0);
        assert_eq!(huffman_decode(&bytes, &t, 3).unwrap(), vec![0, 0, 0]);
    }

    #[test]
    fn canonical_prefix_free() {
        let p: Vec<f64> = (1..=40).map(|i| (i * i % 17 + 1) as f64).collect();
        let t = HuffmanTable::build(&p).unwrap();
        for a in 0..t.len() {
            for b in 0..t.len() {
                if a == b {
                    continue;
                }
                let (ca, la) = t.code(a);
                let (cb, lb) = t.code(b);
                if la <= lb {
                    assert_ne!(cb >> (lb - la), ca, "{a} is a prefix of {b}");
                }
            }
        }
    }

    #[test]
    fn rejects_bad_lengths() {
        assert!(HuffmanTable::from_lengths(vec![1, 1, 1]).is_err());
        assert!(HuffmanTable::from_lengths(vec![0, 1]).is_err());
        assert!(HuffmanTable::from_lengths(vec![]).is_err());
        // incomplete but valid
        assert!(HuffmanTable::from_lengths(vec![1, 2]).is_ok());
    }

    #[test]
    fn truncated_decode_fails() {
        let t = HuffmanTable::build(&[0.7, 0.1, 0.1, 0.1]).unwrap();
        let (bytes, bits) = huffman_encode(&[1, 2, 3, 1, 2, 3], &t).unwrap();
        assert!(bits > 8);
        assert!(huffman_decode(&bytes[..1], &t, 6).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip(weights in proptest::collection::vec(0.0f64..100.0, 1..64),
                     picks in proptest::collection::vec(any::<usize>(), 0..200)) {
            let t = HuffmanTable::build(&weights).unwrap();
            let idx: Vec<usize> = picks.iter().map(|p| p % weights.len()).collect();
            let (bytes, _) = huffman_encode(&idx, &t).unwrap();
            prop_assert_eq!(huffman_decode(&bytes, &t, idx.len()).unwrap(), idx);
        }
    }
}
