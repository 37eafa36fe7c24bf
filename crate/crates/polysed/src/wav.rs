//! WAVE reading (16-bit PCM, 32-bit float) and 32-bit float writing.

use std::io::Cursor;
use std::path::Path;

use hound::{SampleFormat, WavSpec};
use polysed_core::AudioClip;

use crate::error::{read_file, write_file, Error, Result};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WavError {
    #[error("empty audio")]
    Empty,
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("amplitude out of range")]
    AmplitudeOutOfRange,
}

impl From<hound::Error> for WavError {
    fn from(e: hound::Error) -> Self {
        match e {
            hound::Error::Unsupported => Self::UnsupportedEncoding("format not handled by the reader".into()),
            hound::Error::UnfinishedSample => Self::MalformedHeader("data ends inside a sample".into()),
            other => Self::MalformedHeader(other.to_string()),
        }
    }
}

/// Decodes a WAVE byte stream; 16-bit integers map to `x / 32768`.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip, WavError> {
    let mut reader = hound::WavReader::new(Cursor::new(bytes))?;
    let spec = reader.spec();
    if spec.channels == 0 || spec.sample_rate == 0 {
        return Err(WavError::MalformedHeader("zero channels or sample rate".into()));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<Result<_, _>>()?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<Result<_, _>>()?,
        (fmt, bits) => {
            return Err(WavError::UnsupportedEncoding(format!("{bits}-bit {fmt:?}")));
        }
    };
    if samples.is_empty() {
        return Err(WavError::Empty);
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(WavError::MalformedHeader("non-finite sample".into()));
    }
    AudioClip::from_interleaved(&samples, spec.channels as usize, spec.sample_rate)
        .map_err(|_| WavError::MalformedHeader("data is not a whole number of frames".into()))
}

fn encode_with(clip: &AudioClip, bits: u16, format: SampleFormat) -> Result<Vec<u8>, WavError> {
    if clip.is_empty() {
        return Err(WavError::Empty);
    }
    if clip.check_range().is_err() {
        return Err(WavError::AmplitudeOutOfRange);
    }
    let channels = u16::try_from(clip.n_channels())
        .map_err(|_| WavError::UnsupportedEncoding("too many channels".into()))?;
    let spec = WavSpec {
        channels,
        sample_rate: clip.sample_rate(),
        bits_per_sample: bits,
        sample_format: format,
    };
    let mut buf = Cursor::new(Vec::new());
    {
        let mut w = hound::WavWriter::new(&mut buf, spec)?;
        for v in clip.interleaved() {
            match format {
                SampleFormat::Float => w.write_sample(v as f32)?,
                SampleFormat::Int => w.write_sample((v * 32768.0).round().clamp(-32768.0, 32767.0) as i16)?,
            }
        }
        w.finalize()?;
    }
    Ok(buf.into_inner())
}

/// Encodes a clip as 32-bit float WAVE.
pub fn encode_wav(clip: &AudioClip) -> Result<Vec<u8>, WavError> {
    encode_with(clip, 32, SampleFormat::Float)
}

/// Encodes 16-bit PCM, rounding `x · 32768` and saturating at full scale.
pub fn encode_wav_pcm16(clip: &AudioClip) -> Result<Vec<u8>, WavError> {
    encode_with(clip, 16, SampleFormat::Int)
}

pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let bytes = read_file(path)?;
    decode_wav(&bytes).map_err(|source| Error::Wav {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    let bytes = encode_wav(clip).map_err(|source| Error::Wav {
        path: path.to_path_buf(),
        source,
    })?;
    write_file(path, bytes)
}
