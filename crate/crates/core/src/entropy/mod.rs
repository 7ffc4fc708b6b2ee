//! Entropy coding, pitch coding and the packetized wire format.

pub mod bits;
pub mod bitstream;
pub mod huffman;
pub mod pitch;
pub mod rate;
