//! Closed-loop predictive coding of feature streams.
//!
//! The encoder predicts each frame from its own reconstruction of the
//! previous frame, quantizes the residual and feeds the noisy
//! reconstruction back, so the decoder can regenerate the same predictions
//! from the transmitted residuals alone. All arithmetic is in the scaled
//! domain and on the fixed grid, which makes both sides bit-identical.

use crate::entropy::bitstream::{self, Header};
use crate::entropy::pitch::{dequantize_pitch, packet_pitch_codes, FRAMES_PER_PACKET};
use crate::error::{Error, Result};
use crate::features::{FeatureFrame, FeatureStream, NUM_CEPS};
use crate::grid;
use crate::predictor::{weights_hash, PredictorState, PredictorWeights, Scaler};
use crate::quantization::{
    codebook_hash, dequantize_residual, quantize_residual, BitrateProfile, CodedFrame,
};

/// Predictor recursion shared by encoder, decoder and residual generation.
#[derive(Debug, Clone)]
pub struct Recursion<'w> {
    weights: &'w PredictorWeights,
    state: PredictorState,
    last_reconstruction: [f64; NUM_CEPS],
    frame_index: usize,
}

impl<'w> Recursion<'w> {
    pub fn new(weights: &'w PredictorWeights) -> Self {
        Self {
            weights,
            state: weights.initial_state(),
            last_reconstruction: [0.0; NUM_CEPS],
            frame_index: 0,
        }
    }

    pub fn last_reconstruction(&self) -> &[f64; NUM_CEPS] {
        &self.last_reconstruction
    }

    pub fn frame_index(&self) -> usize {
        self.frame_index
    }

    /// Grid-snapped prediction of the current frame plus the state the
    /// predictor moves to.
    pub fn predict(&self, pitch: (f64, f64)) -> Result<([f64; NUM_CEPS], PredictorState)> {
        let p = scaled_pitch(&self.weights.scaler, pitch);
        let (mut y, next) =
            self.weights
                .predict_step(&self.state, &self.last_reconstruction, &p)?;
        grid::snap_all(&mut y);
        Ok((y, next))
    }

    pub fn commit(&mut self, next: PredictorState, reconstruction: [f64; NUM_CEPS]) {
        self.state = next;
        self.last_reconstruction = reconstruction;
        self.frame_index += 1;
    }
}

pub fn scaled_pitch(scaler: &Scaler, (period, correlation): (f64, f64)) -> [f64; 2] {
    let mut p = scaler.scale_pitch(period, correlation);
    grid::snap_all(&mut p);
    p
}

/// Scaled, grid-snapped cepstrum of a frame.
pub fn scaled_target(scaler: &Scaler, frame: &FeatureFrame) -> [f64; NUM_CEPS] {
    let mut c = scaler.scale_cepstrum(&frame.cepstrum);
    grid::snap_all(&mut c);
    c
}

/// Everything the encoder computed for one frame, in scaled units.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTrace {
    pub target: [f64; NUM_CEPS],
    pub prediction: [f64; NUM_CEPS],
    pub residual: [f64; NUM_CEPS],
    pub quantized_residual: [f64; NUM_CEPS],
    pub reconstruction: [f64; NUM_CEPS],
}

pub struct Encoder<'a> {
    recursion: Recursion<'a>,
    profile: &'a BitrateProfile,
}

impl<'a> Encoder<'a> {
    pub fn new(weights: &'a PredictorWeights, profile: &'a BitrateProfile) -> Result<Self> {
        profile.validate()?;
        Ok(Self {
            recursion: Recursion::new(weights),
            profile,
        })
    }

    pub fn last_reconstruction(&self) -> &[f64; NUM_CEPS] {
        self.recursion.last_reconstruction()
    }

    /// `pitch` is the dequantized packet pitch the decoder will also see.
    pub fn encode_frame(
        &mut self,
        frame: &FeatureFrame,
        pitch: (f64, f64),
    ) -> Result<(CodedFrame, FrameTrace)> {
        let (prediction, next) = self.recursion.predict(pitch)?;
        let target = scaled_target(&self.recursion.weights.scaler, frame);
        let residual: [f64; NUM_CEPS] = std::array::from_fn(|d| target[d] - prediction[d]);
        let code = quantize_residual(&residual, self.profile);
        let quantized_residual = dequantize_residual(&code, self.profile)?;
        let reconstruction: [f64; NUM_CEPS] =
            std::array::from_fn(|d| prediction[d] + quantized_residual[d]);
        self.recursion.commit(next, reconstruction);
        Ok((
            code,
            FrameTrace {
                target,
                prediction,
                residual,
                quantized_residual,
                reconstruction,
            },
        ))
    }
}

pub struct Decoder<'a> {
    recursion: Recursion<'a>,
    profile: &'a BitrateProfile,
}

impl<'a> Decoder<'a> {
    pub fn new(weights: &'a PredictorWeights, profile: &'a BitrateProfile) -> Result<Self> {
        profile.validate()?;
        Ok(Self {
            recursion: Recursion::new(weights),
            profile,
        })
    }

    pub fn last_reconstruction(&self) -> &[f64; NUM_CEPS] {
        self.recursion.last_reconstruction()
    }

    /// Returns the scaled reconstruction of the frame.
    pub fn decode_frame(
        &mut self,
        code: &CodedFrame,
        pitch: (f64, f64),
    ) -> Result<[f64; NUM_CEPS]> {
        let (prediction, next) = self.recursion.predict(pitch)?;
        let r = dequantize_residual(code, self.profile)?;
        let reconstruction: [f64; NUM_CEPS] = std::array::from_fn(|d| prediction[d] + r[d]);
        self.recursion.commit(next, reconstruction);
        Ok(reconstruction)
    }
}

/// Output of the encoder for a whole stream.
#[derive(Debug, Clone)]
pub struct EncodedStream {
    pub pitch_codes: Vec<u16>,
    pub frames: Vec<CodedFrame>,
    pub traces: Vec<FrameTrace>,
}

fn packet_pitch(codes: &[u16]) -> Result<Vec<(f64, f64)>> {
    codes.iter().map(|&c| dequantize_pitch(c)).collect()
}

pub fn encode_frames(
    stream: &FeatureStream,
    weights: &PredictorWeights,
    profile: &BitrateProfile,
) -> Result<EncodedStream> {
    let pitch_codes = packet_pitch_codes(&stream.frames);
    let pitch = packet_pitch(&pitch_codes)?;
    let mut enc = Encoder::new(weights, profile)?;
    let mut frames = Vec::with_capacity(stream.len());
    let mut traces = Vec::with_capacity(stream.len());
    for (n, frame) in stream.frames.iter().enumerate() {
        let (code, trace) = enc.encode_frame(frame, pitch[n / FRAMES_PER_PACKET])?;
        frames.push(code);
        traces.push(trace);
    }
    Ok(EncodedStream {
        pitch_codes,
        frames,
        traces,
    })
}

/// Scaled reconstructions from pitch codes and coded frames.
pub fn decode_frames(
    pitch_codes: &[u16],
    frames: &[CodedFrame],
    weights: &PredictorWeights,
    profile: &BitrateProfile,
) -> Result<Vec<[f64; NUM_CEPS]>> {
    if pitch_codes.len() != frames.len().div_ceil(FRAMES_PER_PACKET) {
        return Err(Error::corrupt(format!(
            "{} pitch codes for {} frames",
            pitch_codes.len(),
            frames.len()
        )));
    }
    let pitch = packet_pitch(pitch_codes)?;
    let mut dec = Decoder::new(weights, profile)?;
    frames
        .iter()
        .enumerate()
        .map(|(n, code)| dec.decode_frame(code, pitch[n / FRAMES_PER_PACKET]))
        .collect()
}

/// Unscaled feature frames carrying the dequantized packet pitch.
pub fn to_feature_stream(
    reconstructions: &[[f64; NUM_CEPS]],
    pitch_codes: &[u16],
    scaler: &Scaler,
) -> Result<FeatureStream> {
    let pitch = packet_pitch(pitch_codes)?;
    Ok(FeatureStream::new(
        reconstructions
            .iter()
            .enumerate()
            .map(|(n, c)| {
                let (period, corr) = pitch[n / FRAMES_PER_PACKET];
                FeatureFrame {
                    cepstrum: scaler.unscale(c),
                    pitch_period: period,
                    pitch_correlation: corr,
                }
            })
            .collect(),
    ))
}

pub fn stream_header(
    weights: &PredictorWeights,
    profile: &BitrateProfile,
    frames: usize,
) -> Result<Header> {
    Ok(Header {
        profile: profile.id,
        weights_hash: weights_hash(weights),
        codebook_hash: codebook_hash(profile),
        frame_count: u32::try_from(frames)
            .map_err(|_| Error::invalid(format!("{frames} frames exceed the header limit")))?,
    })
}

/// Encodes a feature stream into a complete bitstream.
pub fn encode_stream(
    stream: &FeatureStream,
    weights: &PredictorWeights,
    profile: &BitrateProfile,
) -> Result<(Vec<u8>, EncodedStream)> {
    let encoded = encode_frames(stream, weights, profile)?;
    let header = stream_header(weights, profile, stream.len())?;
    let bytes = bitstream::pack(&header, &encoded.pitch_codes, &encoded.frames, profile)?;
    Ok((bytes, encoded))
}

#[derive(Debug, Clone)]
pub struct DecodedStream {
    pub header: Header,
    /// Scaled reconstructions.
    pub reconstructions: Vec<[f64; NUM_CEPS]>,
    pub features: FeatureStream,
}

/// Decodes a bitstream, refusing it unless its header matches the loaded
/// predictor and codebooks.
pub fn decode_stream(
    bytes: &[u8],
    weights: &PredictorWeights,
    profile: &BitrateProfile,
) -> Result<DecodedStream> {
    let header = bitstream::read_header(bytes)?;
    if header.profile != profile.id {
        return Err(Error::format(format!(
            "stream uses the {} profile, codebooks are for {}",
            header.profile.name(),
            profile.id.name()
        )));
    }
    let expected = stream_header(weights, profile, 0)?;
    if header.weights_hash != expected.weights_hash {
        return Err(Error::format(format!(
            "predictor hash mismatch: stream {:016x}, loaded {:016x}",
            header.weights_hash, expected.weights_hash
        )));
    }
    if header.codebook_hash != expected.codebook_hash {
        return Err(Error::format(format!(
            "codebook hash mismatch: stream {:016x}, loaded {:016x}",
            header.codebook_hash, expected.codebook_hash
        )));
    }
    let (header, pitch_codes, frames) = bitstream::unpack(bytes, profile)?;
    let reconstructions = decode_frames(&pitch_codes, &frames, weights, profile)?;
    let features = to_feature_stream(&reconstructions, &pitch_codes, &weights.scaler)?;
    Ok(DecodedStream {
        header,
        reconstructions,
        features,
    })
}
