use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::AudioClip;
use crate::error::{Error, Result};

/// Reads an 8/16/24/32-bit integer or 32-bit float PCM WAV as normalized mono.
/// Integer samples scale by `2^(bits-1)`; channels are averaged.
pub fn load_wav(path: &Path) -> Result<AudioClip> {
    let reader = WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        e => Error::Wav(format!("{}: {e}", path.display())),
    })?;
    read(reader, path)
}

pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip> {
    let reader = WavReader::new(std::io::Cursor::new(bytes)).map_err(|e| Error::Wav(e.to_string()))?;
    read(reader, Path::new("<memory>"))
}

fn read<R: std::io::Read>(reader: WavReader<R>, path: &Path) -> Result<AudioClip> {
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::Wav(format!("{}: zero channels", path.display())));
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?,
        (SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| (v as f64 / scale) as f32))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?
        }
        (fmt, bits) => {
            return Err(Error::Wav(format!(
                "{}: unsupported sample format {fmt:?} with {bits} bits",
                path.display()
            )))
        }
    };
    if interleaved.len() % channels != 0 {
        return Err(Error::Wav(format!("{}: truncated frame", path.display())));
    }
    let inv = 1.0 / channels as f32;
    let mono: Vec<f32> = interleaved
        .chunks(channels)
        .map(|f| f.iter().sum::<f32>() * inv)
        .collect();
    AudioClip::new(mono, spec.sample_rate).map_err(|_| Error::Wav(format!("{}: no samples", path.display())))
}

/// Writes a mono 16-bit PCM WAV (samples clamped to `[-1, 1]`).
pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut w = WavWriter::create(path, spec).map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
    for &s in &clip.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_sample(v).map_err(|e| Error::Wav(e.to_string()))?;
    }
    w.finalize().map_err(|e| Error::Wav(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wav_bytes(spec: WavSpec, write: impl FnOnce(&mut WavWriter<std::io::Cursor<&mut Vec<u8>>>)) -> Vec<u8> {
        let mut buf = Vec::new();
        {
            let mut w = WavWriter::new(std::io::Cursor::new(&mut buf), spec).unwrap();
            write(&mut w);
            w.finalize().unwrap();
        }
        buf
    }

    fn spec(channels: u16, bits: u16, fmt: SampleFormat) -> WavSpec {
        WavSpec {
            channels,
            sample_rate: 16000,
            bits_per_sample: bits,
            sample_format: fmt,
        }
    }

    #[test]
    fn sixteen_bit_full_scale() {
        let b = wav_bytes(spec(1, 16, SampleFormat::Int), |w| {
            w.write_sample(32767i16).unwrap();
            w.write_sample(-32768i16).unwrap();
        });
        let c = decode_wav(&b).unwrap();
        assert_eq!(c.samples, vec![32767.0 / 32768.0, -1.0]);
    }

    #[test]
    fn silence_is_zero() {
        let b = wav_bytes(spec(1, 24, SampleFormat::Int), |w| {
            for _ in 0..100 {
                w.write_sample(0i32).unwrap();
            }
        });
        assert!(decode_wav(&b).unwrap().samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn stereo_is_averaged() {
        let b = wav_bytes(spec(2, 32, SampleFormat::Float), |w| {
            w.write_sample(0.2f32).unwrap();
            w.write_sample(0.4f32).unwrap();
        });
        let c = decode_wav(&b).unwrap();
        assert!((c.samples[0] - 0.3).abs() < 1e-7);
    }

    #[test]
    fn eight_bit_scales() {
        let b = wav_bytes(spec(1, 8, SampleFormat::Int), |w| {
            w.write_sample(64i8).unwrap();
        });
        assert_eq!(decode_wav(&b).unwrap().samples, vec![0.5]);
    }

    #[test]
    fn truncated_or_garbage_fails() {
        let b = wav_bytes(spec(1, 16, SampleFormat::Int), |w| {
            for i in 0..50 {
                w.write_sample(i as i16).unwrap();
            }
        });
        assert!(decode_wav(&b[..30]).is_err());
        assert!(decode_wav(b"RIFF....WAVEjunk").is_err());
    }
}
