//! STFT extraction and assembly of the network input tensor.
//!
//! Frames are 40 ms Hamming windows (1764 samples at 44100 Hz) with 50 %
//! overlap, zero-padded to a 2048-point DFT. Bins 1..=1024 are retained
//! (positive frequencies without DC), so stored bin `b` sits at
//! `(b + 1) * 44100 / 2048` Hz.

use num_complex::Complex64;
use rustfft::{num_complex::Complex, FftPlanner};

use crate::ambisonics::{AmbisonicBuffer, CHANNELS, SAMPLE_RATE};
use crate::container::{TensorFile, TensorKind};
use crate::{Error, Result};

/// Analysis window length: 40 ms at 44100 Hz.
pub const WINDOW_LEN: usize = 1764;
/// Hop size: 50 % overlap.
pub const HOP: usize = 882;
/// DFT length (windowed frame is zero-padded up to this).
pub const FFT_LEN: usize = 2048;
/// Retained bins per frame.
pub const BINS: usize = 1024;
/// Default sequence length fed to the network (100 frames = 2 s).
pub const SEQUENCE_LEN: usize = 100;

/// Number of STFT frames produced for a recording of `samples` samples.
pub fn frame_count(samples: usize) -> usize {
    if samples < WINDOW_LEN {
        0
    } else {
        1 + (samples - WINDOW_LEN) / HOP
    }
}

/// Sample span `[start, end)` covered by feature frame `t`. Scene ground
/// truth is evaluated on the same windows.
pub fn frame_span(t: usize) -> (usize, usize) {
    (t * HOP, t * HOP + WINDOW_LEN)
}

/// Complex multichannel spectrogram, layout `(frame, bin, channel)` with the
/// channel axis contiguous.
#[derive(Debug, Clone)]
pub struct ComplexSpectrogram {
    frames: usize,
    channels: usize,
    data: Vec<Complex64>,
}

impl ComplexSpectrogram {
    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        BINS
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn at(&self, t: usize, f: usize, c: usize) -> Complex64 {
        self.data[(t * BINS + f) * self.channels + c]
    }

    /// The C-dimensional spectrogram vector X(f, t) as a contiguous slice.
    #[inline]
    pub fn vector(&self, t: usize, f: usize) -> &[Complex64] {
        let base = (t * BINS + f) * self.channels;
        &self.data[base..base + self.channels]
    }
}

/// Periodic Hamming window, `0.54 - 0.46 cos(2 pi n / N)`.
fn hamming(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
        .collect()
}

/// Short-time Fourier transform of all four Ambisonic channels.
pub fn stft(buffer: &AmbisonicBuffer) -> Result<ComplexSpectrogram> {
    if buffer.sample_rate() != SAMPLE_RATE {
        return Err(Error::InvalidArgument(format!(
            "expected {SAMPLE_RATE} Hz input, got {}",
            buffer.sample_rate()
        )));
    }
    if buffer.len() < WINDOW_LEN {
        return Err(Error::InvalidArgument(format!(
            "buffer of {} samples is shorter than one {WINDOW_LEN}-sample window",
            buffer.len()
        )));
    }
    let frames = frame_count(buffer.len());
    let window = hamming(WINDOW_LEN);
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(FFT_LEN);
    let mut scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
    let mut data = vec![Complex64::default(); frames * BINS * CHANNELS];
    let mut frame_buf = vec![Complex::default(); FFT_LEN];

    for c in 0..CHANNELS {
        let samples = buffer.channel(c);
        for t in 0..frames {
            let start = t * HOP;
            for (n, slot) in frame_buf.iter_mut().enumerate() {
                *slot = if n < WINDOW_LEN {
                    Complex::new(samples[start + n] as f64 * window[n], 0.0)
                } else {
                    Complex::default()
                };
            }
            fft.process_with_scratch(&mut frame_buf, &mut scratch);
            for b in 0..BINS {
                data[(t * BINS + b) * CHANNELS + c] = frame_buf[b + 1];
            }
        }
    }
    Ok(ComplexSpectrogram {
        frames,
        channels: CHANNELS,
        data,
    })
}

/// One network input sequence: `L x bins x 2C` with the magnitudes of all
/// channels first, then the phases. Trailing frames beyond `valid_frames`
/// are zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrogramTensor {
    pub seq_len: usize,
    pub bins: usize,
    /// 2C: magnitude channels followed by phase channels.
    pub channels: usize,
    pub valid_frames: usize,
    pub data: Vec<f32>,
}

impl SpectrogramTensor {
    #[inline]
    pub fn at(&self, t: usize, f: usize, c: usize) -> f32 {
        self.data[(t * self.bins + f) * self.channels + c]
    }

    pub fn into_tensor_file(self) -> TensorFile {
        TensorFile::new(
            TensorKind::Features,
            [self.seq_len, self.bins, self.channels],
            self.valid_frames,
            self.data,
        )
        .expect("consistent by construction")
    }

    pub fn from_tensor_file(t: TensorFile) -> Result<Self> {
        if t.kind != TensorKind::Features {
            return Err(Error::Format("not a feature tensor".into()));
        }
        Ok(Self {
            seq_len: t.dims[0],
            bins: t.dims[1],
            channels: t.dims[2],
            valid_frames: t.valid_frames,
            data: t.data,
        })
    }
}

/// Split a spectrogram into non-overlapping `seq_len`-frame input tensors.
/// The final partial block is zero padded and flagged with its valid length.
pub fn assemble_sequences(spec: &ComplexSpectrogram, seq_len: usize) -> Vec<SpectrogramTensor> {
    let channels2c = 2 * spec.channels();
    let n_seq = spec.frames().div_ceil(seq_len);
    let mut out = Vec::with_capacity(n_seq);
    for s in 0..n_seq {
        let start = s * seq_len;
        let valid = seq_len.min(spec.frames() - start);
        let mut data = vec![0.0f32; seq_len * BINS * channels2c];
        for t in 0..valid {
            for f in 0..BINS {
                let base = (t * BINS + f) * channels2c;
                for c in 0..spec.channels() {
                    let v = spec.at(start + t, f, c);
                    data[base + c] = v.norm() as f32;
                    let mut phase = v.im.atan2(v.re);
                    if phase <= -std::f64::consts::PI {
                        phase = std::f64::consts::PI;
                    }
                    data[base + spec.channels() + c] = phase as f32;
                }
            }
        }
        out.push(SpectrogramTensor {
            seq_len,
            bins: BINS,
            channels: channels2c,
            valid_frames: valid,
            data,
        });
    }
    out
}
