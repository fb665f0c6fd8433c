//! RIFF/WAVE PCM16 mono reader and writer.

use std::fs;
use std::path::Path;

use super::{AudioError, WavClip, SAMPLE_RATE_HZ};

const PCM_FORMAT_TAG: u16 = 1;
const PCM_SCALE: f32 = 32768.0;

#[derive(Debug, Clone, Copy)]
struct FmtChunk {
    format_tag: u16,
    channels: u16,
    sample_rate: u32,
    bits_per_sample: u16,
}

fn u16_at(buf: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([buf[at], buf[at + 1]])
}

fn u32_at(buf: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([buf[at], buf[at + 1], buf[at + 2], buf[at + 3]])
}

/// Reads a mono 16-bit PCM file sampled at 16 kHz.
///
/// Integer samples are mapped to amplitudes by `s / 32768`.
pub fn read_wav(path: impl AsRef<Path>) -> Result<WavClip, AudioError> {
    let bytes = fs::read(path.as_ref())?;
    decode_wav(&bytes)
}

/// Parses an in-memory RIFF/WAVE image.
pub fn decode_wav(bytes: &[u8]) -> Result<WavClip, AudioError> {
    if bytes.len() < 12 {
        return Err(AudioError::TruncatedFile {
            field: "riff header",
        });
    }
    if &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(AudioError::NotRiffWave);
    }

    let mut fmt: Option<FmtChunk> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start.checked_add(size).ok_or(AudioError::TruncatedFile {
            field: "chunk size",
        })?;
        match id {
            b"fmt " => {
                if size < 16 || body_end > bytes.len() {
                    return Err(AudioError::TruncatedFile { field: "fmt chunk" });
                }
                let b = &bytes[body_start..body_end];
                fmt = Some(FmtChunk {
                    format_tag: u16_at(b, 0),
                    channels: u16_at(b, 2),
                    sample_rate: u32_at(b, 4),
                    bits_per_sample: u16_at(b, 14),
                });
            }
            b"data" => {
                if body_end > bytes.len() {
                    return Err(AudioError::TruncatedFile {
                        field: "data chunk",
                    });
                }
                data = Some(&bytes[body_start..body_end]);
            }
            _ => {}
        }
        if data.is_some() && fmt.is_some() {
            break;
        }
        // chunks are word aligned
        pos = body_end + (size & 1);
    }

    let fmt = fmt.ok_or(AudioError::TruncatedFile { field: "fmt chunk" })?;
    if fmt.format_tag != PCM_FORMAT_TAG || fmt.bits_per_sample != 16 {
        return Err(AudioError::NotPcm16 {
            format_tag: fmt.format_tag,
            bits_per_sample: fmt.bits_per_sample,
        });
    }
    if fmt.channels != 1 {
        return Err(AudioError::NotMono {
            channels: fmt.channels,
        });
    }
    if fmt.sample_rate != SAMPLE_RATE_HZ {
        return Err(AudioError::WrongSampleRate {
            found: fmt.sample_rate,
        });
    }
    let data = data.ok_or(AudioError::TruncatedFile {
        field: "data chunk",
    })?;
    if data.len() % 2 != 0 {
        return Err(AudioError::TruncatedFile {
            field: "data chunk",
        });
    }

    let samples = data
        .chunks_exact(2)
        .map(|b| f32::from(i16::from_le_bytes([b[0], b[1]])) / PCM_SCALE)
        .collect();
    WavClip::new(samples, fmt.sample_rate)
}

/// Quantizes a clip to PCM16 and writes a canonical 44-byte-header WAV file.
pub fn write_wav(path: impl AsRef<Path>, clip: &WavClip) -> Result<(), AudioError> {
    fs::write(path.as_ref(), encode_wav(clip))?;
    Ok(())
}

pub fn encode_wav(clip: &WavClip) -> Vec<u8> {
    let n = clip.samples().len();
    let data_len = (n * 2) as u32;
    let rate = clip.sample_rate_hz();
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&PCM_FORMAT_TAG.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&rate.to_le_bytes());
    out.extend_from_slice(&(rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in clip.samples() {
        out.extend_from_slice(&quantize(s).to_le_bytes());
    }
    out
}

fn quantize(sample: f32) -> i16 {
    (sample * PCM_SCALE).round().clamp(-32768.0, 32767.0) as i16
}
