//! PCM16 WAV I/O and enhancement metrics.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Reported SI-SDR magnitude for perfect (or perfectly orthogonal) estimates.
pub const SI_SDR_CAP_DB: f64 = 100.0;

const SEG_FRAME: usize = 256;
const SEG_MIN_DB: f64 = -10.0;
const SEG_MAX_DB: f64 = 35.0;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidSignal("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidSignal("non-finite sample".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn err(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Wav {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(self.err(self.pos, format!("truncated while reading {what}")));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Reads a PCM16 RIFF/WAVE file. Multi-channel input is downmixed by
/// averaging; samples are scaled by `1 / 32768`.
pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_wav(&bytes, path)
}

pub fn parse_wav(bytes: &[u8], path: &Path) -> Result<AudioClip> {
    let mut c = Cursor {
        bytes,
        pos: 0,
        path,
    };
    if c.take(4, "RIFF tag")? != b"RIFF" {
        return Err(c.err(0, "missing RIFF tag"));
    }
    c.u32("RIFF size")?;
    if c.take(4, "WAVE tag")? != b"WAVE" {
        return Err(c.err(8, "missing WAVE tag"));
    }

    let mut format: Option<(u16, u32, u16)> = None;
    loop {
        let chunk_at = c.pos;
        let id: [u8; 4] = c.take(4, "chunk id")?.try_into().unwrap();
        let size = c.u32("chunk size")? as usize;
        let body_at = c.pos;
        match &id {
            b"fmt " => {
                if size < 16 {
                    return Err(c.err(chunk_at, format!("fmt chunk too small ({size} bytes)")));
                }
                let mut code = c.u16("format code")?;
                let channels = c.u16("channel count")?;
                let rate = c.u32("sample rate")?;
                c.u32("byte rate")?;
                c.u16("block align")?;
                let bits = c.u16("bits per sample")?;
                if code == 0xFFFE && size >= 40 {
                    c.take(8, "extension header")?;
                    code = c.u16("sub-format")?;
                }
                if code != 1 {
                    return Err(c.err(body_at, format!("unsupported format code {code:#06x}; only PCM")));
                }
                if bits != 16 {
                    return Err(c.err(body_at + 14, format!("unsupported {bits}-bit samples; only 16-bit")));
                }
                if channels == 0 {
                    return Err(c.err(body_at + 2, "zero channels"));
                }
                if rate == 0 {
                    return Err(c.err(body_at + 4, "zero sample rate"));
                }
                format = Some((channels, rate, bits));
                c.pos = body_at;
                c.take(size + (size & 1), "fmt chunk")?;
            }
            b"data" => {
                let (channels, rate, _) =
                    format.ok_or_else(|| c.err(chunk_at, "data chunk before fmt chunk"))?;
                let raw = c.take(size, "sample data")?;
                let ch = channels as usize;
                let frame_bytes = 2 * ch;
                if !size.is_multiple_of(frame_bytes) {
                    return Err(c.err(
                        body_at + size - size % frame_bytes,
                        "partial sample frame at end of data",
                    ));
                }
                let samples = raw
                    .chunks_exact(frame_bytes)
                    .map(|f| {
                        let sum: f64 = f
                            .chunks_exact(2)
                            .map(|b| f64::from(i16::from_le_bytes([b[0], b[1]])))
                            .sum();
                        sum / (ch as f64 * 32768.0)
                    })
                    .collect();
                return AudioClip::new(samples, rate);
            }
            _ => {
                c.take(size + (size & 1), "chunk body")?;
            }
        }
    }
}

fn quantize(v: f64) -> i16 {
    (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn encode_wav(clip: &AudioClip) -> Vec<u8> {
    let data_len = 2 * clip.samples.len();
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &clip.samples {
        out.extend_from_slice(&quantize(s).to_le_bytes());
    }
    out
}

/// Writes a mono PCM16 file. Samples outside `[-1, 1)` are clipped.
pub fn write_wav(clip: &AudioClip, path: &Path) -> Result<()> {
    fs::write(path, encode_wav(clip)).map_err(|e| Error::io(path, e))
}

/// Scale-invariant signal-to-distortion ratio in dB, capped at
/// `±SI_SDR_CAP_DB`.
pub fn si_sdr(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::LengthMismatch {
            expected: reference.len(),
            actual: estimate.len(),
        });
    }
    if reference.is_empty() {
        return Err(Error::Metric("empty signals".into()));
    }
    let ref_energy: f64 = reference.iter().map(|r| r * r).sum();
    if ref_energy == 0.0 {
        return Err(Error::Metric("reference is identically zero".into()));
    }
    let dot: f64 = estimate.iter().zip(reference).map(|(e, r)| e * r).sum();
    let alpha = dot / ref_energy;
    let (mut target, mut error) = (0.0, 0.0);
    for (e, r) in estimate.iter().zip(reference) {
        let proj = alpha * r;
        target += proj * proj;
        error += (e - proj) * (e - proj);
    }
    // Relative threshold: residue of a scaled copy is pure rounding.
    if error <= 1e-20 * target {
        return Ok(SI_SDR_CAP_DB);
    }
    if target == 0.0 {
        return Ok(-SI_SDR_CAP_DB);
    }
    Ok((10.0 * (target / error).log10()).clamp(-SI_SDR_CAP_DB, SI_SDR_CAP_DB))
}

/// Mean per-frame SNR over 256-sample frames, each clamped to [-10, 35] dB.
pub fn segmental_snr(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::LengthMismatch {
            expected: reference.len(),
            actual: estimate.len(),
        });
    }
    if reference.is_empty() {
        return Err(Error::Metric("empty signals".into()));
    }
    let frames: Vec<f64> = reference
        .chunks(SEG_FRAME)
        .zip(estimate.chunks(SEG_FRAME))
        .map(|(r, e)| {
            let sig: f64 = r.iter().map(|v| v * v).sum();
            let noise: f64 = r.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum();
            let db = if noise == 0.0 {
                SEG_MAX_DB
            } else if sig == 0.0 {
                SEG_MIN_DB
            } else {
                10.0 * (sig / noise).log10()
            };
            db.clamp(SEG_MIN_DB, SEG_MAX_DB)
        })
        .collect();
    Ok(frames.iter().sum::<f64>() / frames.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sine(n: usize, amp: f64) -> Vec<f64> {
        (0..n).map(|i| amp * (i as f64 * 0.0713).sin()).collect()
    }

    fn round_trip(clip: &AudioClip) -> AudioClip {
        parse_wav(&encode_wav(clip), Path::new("mem.wav")).unwrap()
    }

    #[test]
    fn zero_clip_round_trip() {
        let clip = AudioClip::new(vec![0.0; 100], 16_000).unwrap();
        assert_eq!(round_trip(&clip), clip);
    }

    #[test]
    fn full_scale_sine_round_trip() {
        let clip = AudioClip::new(sine(4000, 1.0), 22_050).unwrap();
        let back = round_trip(&clip);
        assert_eq!(back.sample_rate, 22_050);
        let worst = clip
            .samples
            .iter()
            .zip(&back.samples)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 2f64.powi(-15), "{worst}");
    }

    #[test]
    fn pcm_values_survive_exactly() {
        let samples: Vec<f64> = [-32768i32, -1, 0, 1, 12345, 32767]
            .iter()
            .map(|&v| v as f64 / 32768.0)
            .collect();
        let clip = AudioClip::new(samples, 8000).unwrap();
        assert_eq!(round_trip(&clip), clip);
    }

    #[test]
    fn truncated_file_reports_offset() {
        let bytes = encode_wav(&AudioClip::new(sine(10, 0.5), 8000).unwrap());
        let err = parse_wav(&bytes[..30], Path::new("t.wav")).unwrap_err();
        match err {
            Error::Wav { offset, .. } => assert_eq!(offset, 28),
            other => panic!("unexpected {other}"),
        }
        let err = parse_wav(&bytes[..50], Path::new("t.wav")).unwrap_err();
        assert!(matches!(err, Error::Wav { offset: 44, .. }), "{err}");
        let err = parse_wav(b"RIFX", Path::new("t.wav")).unwrap_err();
        assert!(matches!(err, Error::Wav { offset: 0, .. }));
    }

    #[test]
    fn rejects_non_pcm16() {
        let mut bytes = encode_wav(&AudioClip::new(sine(10, 0.5), 8000).unwrap());
        bytes[34] = 24;
        assert!(parse_wav(&bytes, Path::new("x.wav")).is_err());
        let mut bytes = encode_wav(&AudioClip::new(sine(10, 0.5), 8000).unwrap());
        bytes[20] = 3;
        assert!(parse_wav(&bytes, Path::new("x.wav")).is_err());
    }

    #[test]
    fn stereo_is_downmixed() {
        let mut bytes = Vec::new();
        let frames: [(i16, i16); 3] = [(1000, 3000), (-2000, 0), (32767, 32767)];
        let data_len = frames.len() * 4;
        bytes.extend_from_slice(b"RIFF");
        bytes.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
        bytes.extend_from_slice(b"WAVEfmt ");
        bytes.extend_from_slice(&16u32.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&2u16.to_le_bytes());
        bytes.extend_from_slice(&8000u32.to_le_bytes());
        bytes.extend_from_slice(&32000u32.to_le_bytes());
        bytes.extend_from_slice(&4u16.to_le_bytes());
        bytes.extend_from_slice(&16u16.to_le_bytes());
        // An unrelated chunk that must be skipped.
        bytes.extend_from_slice(b"LIST");
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(&[1, 2, 3, 0]);
        bytes.extend_from_slice(b"data");
        bytes.extend_from_slice(&(data_len as u32).to_le_bytes());
        for (l, r) in frames {
            bytes.extend_from_slice(&l.to_le_bytes());
            bytes.extend_from_slice(&r.to_le_bytes());
        }
        let clip = parse_wav(&bytes, Path::new("s.wav")).unwrap();
        assert_eq!(clip.samples, vec![2000.0 / 32768.0, -1000.0 / 32768.0, 32767.0 / 32768.0]);
    }

    #[test]
    fn si_sdr_examples() {
        let r = sine(512, 0.8);
        assert_eq!(si_sdr(&r, &r).unwrap(), SI_SDR_CAP_DB);
        let doubled: Vec<f64> = r.iter().map(|v| 2.0 * v).collect();
        assert_eq!(si_sdr(&doubled, &r).unwrap(), SI_SDR_CAP_DB);

        // Orthogonal noise with the reference's energy.
        let r = vec![1.0, 1.0, 0.0, 0.0];
        let est = vec![1.0, 1.0, 1.0, -1.0];
        assert!(si_sdr(&est, &r).unwrap().abs() < 1e-12);

        assert!(si_sdr(&[1.0], &[0.0]).is_err());
        assert!(si_sdr(&[1.0, 2.0], &[1.0]).is_err());
        assert!(si_sdr(&[], &[]).is_err());
    }

    #[test]
    fn segmental_snr_bounds() {
        let r = sine(1000, 0.5);
        assert_eq!(segmental_snr(&r, &r).unwrap(), SEG_MAX_DB);
        let zeros = vec![0.0; 1000];
        assert!((segmental_snr(&zeros, &r).unwrap() - 0.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn si_sdr_scale_invariant(
            seed in 0u64..1000,
            scale in prop_oneof![-50.0f64..-0.01, 0.01f64..50.0],
        ) {
            let r: Vec<f64> = (0..64).map(|i| ((i as f64 + seed as f64) * 0.37).sin()).collect();
            let e: Vec<f64> = r.iter().enumerate().map(|(i, v)| v + 0.3 * ((i * 7 + seed as usize) as f64).cos()).collect();
            let scaled: Vec<f64> = e.iter().map(|v| v * scale).collect();
            let a = si_sdr(&e, &r).unwrap();
            let b = si_sdr(&scaled, &r).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn wav_round_trip_bound(samples in proptest::collection::vec(-1.0f64..=1.0, 1..300)) {
            let clip = AudioClip::new(samples, 16_000).unwrap();
            let back = round_trip(&clip);
            prop_assert_eq!(back.samples.len(), clip.samples.len());
            for (a, b) in clip.samples.iter().zip(&back.samples) {
                prop_assert!((a - b).abs() <= 2f64.powi(-15));
            }
        }
    }
}
