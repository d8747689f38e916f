//! WAV file read/write limited to the two encodings the CLI needs:
//! 16-bit PCM and 32-bit float, both little-endian.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};
use crate::signal::Waveform;

fn wav_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Wav {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Reads a 16-bit PCM or 32-bit float WAV file. PCM samples are scaled to
/// `[-1, 1)` by dividing by 32768.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let reader = WavReader::open(path).map_err(|e| wav_err(path, e.to_string()))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(wav_err(path, "zero channels"));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_err(path, e.to_string()))?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_err(path, e.to_string()))?,
        (fmt, bits) => {
            return Err(wav_err(
                path,
                format!("unsupported encoding {fmt:?}/{bits}-bit; expected PCM16 or float32"),
            ));
        }
    };
    if interleaved.len() % channels != 0 {
        return Err(wav_err(path, "truncated final frame"));
    }
    let frames = interleaved.len() / channels;
    let mut data = vec![Vec::with_capacity(frames); channels];
    for (i, v) in interleaved.into_iter().enumerate() {
        data[i % channels].push(v);
    }
    Waveform::new(data, spec.sample_rate)
}

fn write_with<S, F>(path: &Path, x: &Waveform, spec: WavSpec, convert: F) -> Result<()>
where
    S: hound::Sample + Copy,
    F: Fn(f64) -> S,
{
    let mut writer = WavWriter::create(path, spec).map_err(|e| wav_err(path, e.to_string()))?;
    for i in 0..x.len() {
        for c in 0..x.num_channels() {
            writer
                .write_sample(convert(x.channel(c)[i]))
                .map_err(|e| wav_err(path, e.to_string()))?;
        }
    }
    writer.finalize().map_err(|e| wav_err(path, e.to_string()))
}

/// Writes 32-bit float WAV (values stored as-is, narrowed to f32).
pub fn write_wav_f32(path: &Path, x: &Waveform) -> Result<()> {
    let spec = WavSpec {
        channels: x.num_channels() as u16,
        sample_rate: x.sample_rate(),
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    write_with(path, x, spec, |v| v as f32)
}

/// Writes 16-bit PCM WAV; samples are scaled by 32768 (mirroring the read
/// path) and clamped to the i16 range.
pub fn write_wav_pcm16(path: &Path, x: &Waveform) -> Result<()> {
    let spec = WavSpec {
        channels: x.num_channels() as u16,
        sample_rate: x.sample_rate(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    write_with(path, x, spec, |v| {
        (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn fixture(rng: &mut StdRng, channels: usize, len: usize) -> Waveform {
        let data = (0..channels)
            .map(|_| (0..len).map(|_| rng.gen_range(-0.9..0.9)).collect())
            .collect();
        Waveform::new(data, 8000).unwrap()
    }

    #[test]
    fn float32_roundtrip_is_exact_at_f32_precision() {
        let mut rng = StdRng::seed_from_u64(20);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f32.wav");
        let x = fixture(&mut rng, 2, 600);
        write_wav_f32(&path, &x).unwrap();
        let y = read_wav(&path).unwrap();
        assert_eq!(y.num_channels(), 2);
        assert_eq!(y.len(), 600);
        assert_eq!(y.sample_rate(), 8000);
        for c in 0..2 {
            for (a, b) in x.channel(c).iter().zip(y.channel(c)) {
                assert_eq!(*a as f32, *b as f32);
            }
        }
    }

    #[test]
    fn pcm16_roundtrip_within_quantization_step() {
        let mut rng = StdRng::seed_from_u64(21);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pcm.wav");
        let x = fixture(&mut rng, 1, 400);
        write_wav_pcm16(&path, &x).unwrap();
        let y = read_wav(&path).unwrap();
        for (a, b) in x.channel(0).iter().zip(y.channel(0)) {
            assert!((a - b).abs() < 1.0 / 32768.0 + 1e-9);
        }
    }

    #[test]
    fn missing_file_maps_to_wav_error_with_path() {
        let err = read_wav(Path::new("/nonexistent/x.wav")).unwrap_err();
        match err {
            Error::Wav { path, .. } => assert!(path.ends_with("x.wav")),
            other => panic!("expected Wav error, got {other:?}"),
        }
    }

    #[test]
    fn unsupported_bit_depth_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pcm24.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 24,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&path, spec).unwrap();
        for i in 0..10 {
            w.write_sample(i as i32 * 1000).unwrap();
        }
        w.finalize().unwrap();
        let err = read_wav(&path).unwrap_err();
        assert!(matches!(err, Error::Wav { .. }), "got {err:?}");
    }
}
