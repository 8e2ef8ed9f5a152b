//! 16-bit PCM mono RIFF/WAVE reading and writing.
//!
//! Only format tag 1 (integer PCM), one channel and 16 bits per sample are
//! accepted. Errors name the header field that failed.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::framing::AudioBuffer;

const SCALE: f32 = 32768.0;

fn format_err(field: &'static str, reason: impl Into<String>) -> Error {
    Error::Format {
        field,
        reason: reason.into(),
    }
}

fn u16_at(b: &[u8], at: usize, field: &'static str) -> Result<u16> {
    b.get(at..at + 2)
        .map(|s| u16::from_le_bytes([s[0], s[1]]))
        .ok_or_else(|| format_err(field, "truncated"))
}

fn u32_at(b: &[u8], at: usize, field: &'static str) -> Result<u32> {
    b.get(at..at + 4)
        .map(|s| u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
        .ok_or_else(|| format_err(field, "truncated"))
}

/// Decodes WAV bytes.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioBuffer> {
    if bytes.get(0..4) != Some(b"RIFF") {
        return Err(format_err("riff_id", "missing RIFF magic"));
    }
    if bytes.get(8..12) != Some(b"WAVE") {
        return Err(format_err("wave_id", "missing WAVE form type"));
    }
    let mut pos = 12;
    let mut sample_rate = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4, "chunk_size")? as usize;
        let body = pos + 8;
        let end = body
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| format_err("chunk_size", format!("chunk at byte {pos} runs past end of file")))?;
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(format_err("fmt_chunk", format!("size {size} < 16")));
                }
                let tag = u16_at(bytes, body, "format_tag")?;
                if tag != 1 {
                    return Err(format_err("format_tag", format!("{tag} is not integer PCM (1)")));
                }
                let channels = u16_at(bytes, body + 2, "channels")?;
                if channels != 1 {
                    return Err(format_err("channels", format!("{channels} channels, expected mono")));
                }
                let rate = u32_at(bytes, body + 4, "sample_rate")?;
                if rate == 0 {
                    return Err(format_err("sample_rate", "zero"));
                }
                let align = u16_at(bytes, body + 12, "block_align")?;
                let bits = u16_at(bytes, body + 14, "bits_per_sample")?;
                if bits != 16 {
                    return Err(format_err("bits_per_sample", format!("{bits}, expected 16")));
                }
                if align != 2 {
                    return Err(format_err("block_align", format!("{align}, expected 2")));
                }
                sample_rate = Some(rate);
            }
            b"data" => {
                let rate = sample_rate.ok_or_else(|| format_err("fmt_chunk", "data chunk before fmt chunk"))?;
                if !size.is_multiple_of(2) {
                    return Err(format_err("data_chunk", format!("odd byte count {size}")));
                }
                let samples = bytes[body..end]
                    .chunks_exact(2)
                    .map(|s| i16::from_le_bytes([s[0], s[1]]) as f32 / SCALE)
                    .collect();
                return AudioBuffer::new(samples, rate);
            }
            _ => {}
        }
        pos = end + (size & 1);
    }
    Err(match sample_rate {
        None => format_err("fmt_chunk", "missing"),
        Some(_) => format_err("data_chunk", "missing"),
    })
}

/// Encodes as 16-bit mono PCM; samples are clamped to `[-1, 1]`.
pub fn encode_wav(audio: &AudioBuffer) -> Vec<u8> {
    let data_len = audio.samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&audio.sample_rate.to_le_bytes());
    out.extend_from_slice(&(audio.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &audio.samples {
        let q = (s.clamp(-1.0, 1.0) * SCALE).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    decode_wav(&fs::read(path)?)
}

pub fn write_wav(path: impl AsRef<Path>, audio: &AudioBuffer) -> Result<()> {
    fs::write(path, encode_wav(audio))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn buf(samples: Vec<f32>) -> AudioBuffer {
        AudioBuffer::new(samples, 16_000).unwrap()
    }

    #[test]
    fn half_scale_sample_reads_as_half() {
        let mut bytes = encode_wav(&buf(vec![0.0]));
        let n = bytes.len();
        bytes[n - 2..].copy_from_slice(&16384i16.to_le_bytes());
        assert_eq!(decode_wav(&bytes).unwrap().samples, vec![0.5]);
    }

    #[test]
    fn sine_roundtrip_within_one_lsb() {
        let sine: Vec<f32> = (0..16_000)
            .map(|i| (2.0 * std::f32::consts::PI * 1000.0 * i as f32 / 16_000.0).sin())
            .collect();
        let back = decode_wav(&encode_wav(&buf(sine.clone()))).unwrap();
        assert_eq!(back.sample_rate, 16_000);
        let err = sine.iter().zip(&back.samples).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
        assert!(err <= 1.0 / 32768.0, "{err}");
    }

    #[test]
    fn out_of_range_samples_clamp() {
        let back = decode_wav(&encode_wav(&buf(vec![2.0, -3.0]))).unwrap();
        assert_eq!(back.samples, vec![32767.0 / 32768.0, -1.0]);
    }

    fn patched(offset: usize, value: &[u8]) -> Vec<u8> {
        let mut b = encode_wav(&buf(vec![0.1, 0.2]));
        b[offset..offset + value.len()].copy_from_slice(value);
        b
    }

    fn field_of(bytes: &[u8]) -> &'static str {
        match decode_wav(bytes) {
            Err(Error::Format { field, .. }) => field,
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_with_named_field() {
        assert_eq!(field_of(&patched(22, &2u16.to_le_bytes())), "channels");
        assert_eq!(field_of(&patched(34, &24u16.to_le_bytes())), "bits_per_sample");
        assert_eq!(field_of(&patched(20, &3u16.to_le_bytes())), "format_tag");
        assert_eq!(field_of(&patched(0, b"RIFX")), "riff_id");
        assert_eq!(field_of(&patched(8, b"AVI ")), "wave_id");
        let b = encode_wav(&buf(vec![0.1, 0.2]));
        assert_eq!(field_of(&b[..b.len() - 1]), "chunk_size");
        assert_eq!(field_of(&b[..36]), "data_chunk");
    }

    #[test]
    fn skips_unknown_chunks() {
        let mut b = encode_wav(&buf(vec![0.25]));
        let mut extra = b"LIST".to_vec();
        extra.extend_from_slice(&3u32.to_le_bytes());
        extra.extend_from_slice(&[1, 2, 3, 0]);
        b.splice(36..36, extra);
        assert_eq!(decode_wav(&b).unwrap().samples, vec![0.25]);
    }
}
