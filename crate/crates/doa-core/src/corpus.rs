//! Isolated sound examples used to build scenes.
//!
//! The built-in synthetic generator keeps the repository self-contained:
//! eleven classes of enveloped noise bursts, tone complexes, clicks, and
//! chirps between 0.2 and 4 seconds. A directory of mono WAV files (for
//! example the DCASE 2016 task-2 set) is a drop-in substitute.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::ambisonics::SAMPLE_RATE;
use crate::wav::read_wav;
use crate::{Error, Result};

pub const SYNTHETIC_CLASSES: [&str; 11] = [
    "white_burst",
    "lowpass_noise",
    "band_noise",
    "am_noise",
    "click_train",
    "low_tone",
    "high_tone",
    "tone_stack",
    "fm_tone",
    "chirp_up",
    "chirp_down",
];

/// One isolated sound example.
#[derive(Debug, Clone)]
pub struct CorpusExample {
    pub id: String,
    pub class: String,
    pub samples: Vec<f32>,
}

impl CorpusExample {
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / SAMPLE_RATE as f64
    }
}

/// A set of isolated examples plus lookup by id.
#[derive(Debug, Clone)]
pub struct Corpus {
    examples: Vec<CorpusExample>,
}

impl Corpus {
    /// Generate `examples_per_class` synthetic examples for each of the
    /// eleven classes. Fully determined by the seed.
    pub fn synthetic(examples_per_class: usize, seed: u64) -> Corpus {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut examples = Vec::new();
        for class in SYNTHETIC_CLASSES {
            for k in 0..examples_per_class {
                let dur = rng.random_range(0.2..4.0);
                let len = (dur * SAMPLE_RATE as f64) as usize;
                let mut samples = synthesize_class(class, len, &mut rng);
                apply_fade(&mut samples);
                normalize_peak(&mut samples, 0.7);
                examples.push(CorpusExample {
                    id: format!("{class}_{k:03}"),
                    class: class.to_string(),
                    samples,
                });
            }
        }
        Corpus { examples }
    }

    /// Load every `.wav` in a directory as one example. Files must be mono
    /// at 44100 Hz; the class is the file stem with trailing digits removed.
    pub fn from_wav_dir(dir: &Path) -> Result<Corpus> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| Error::MissingInput(format!("{}: {e}", dir.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(Error::MissingInput(format!(
                "no .wav files in {}",
                dir.display()
            )));
        }
        let mut examples = Vec::new();
        for path in paths {
            let wav = read_wav(&path)?;
            if wav.channels.len() != 1 {
                return Err(Error::Format(format!(
                    "{}: corpus files must be mono ({} channels found)",
                    path.display(),
                    wav.channels.len()
                )));
            }
            if wav.sample_rate != SAMPLE_RATE {
                return Err(Error::Format(format!(
                    "{}: corpus files must be {SAMPLE_RATE} Hz (found {})",
                    path.display(),
                    wav.sample_rate
                )));
            }
            let id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("example")
                .to_string();
            let class = id.trim_end_matches(|c: char| c.is_ascii_digit() || c == '_');
            examples.push(CorpusExample {
                id: id.clone(),
                class: if class.is_empty() { id } else { class.to_string() },
                samples: wav.channels.into_iter().next().unwrap(),
            });
        }
        Ok(Corpus { examples })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn example(&self, index: usize) -> &CorpusExample {
        &self.examples[index]
    }

    pub fn examples(&self) -> &[CorpusExample] {
        &self.examples
    }

    pub fn by_id(&self, id: &str) -> Result<&CorpusExample> {
        self.examples
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| Error::MissingInput(format!("corpus example {id} not found")))
    }

    pub fn classes(&self) -> Vec<String> {
        let mut classes: Vec<String> = self.examples.iter().map(|e| e.class.clone()).collect();
        classes.sort();
        classes.dedup();
        classes
    }

    /// Disjoint train/test example indices for one cross-validation split:
    /// per class, a seeded shuffle assigns the first `test_per_class`
    /// examples to the test role and the next `train_per_class` to training.
    pub fn split(
        &self,
        train_per_class: usize,
        test_per_class: usize,
        split_seed: u64,
    ) -> Result<(Vec<usize>, Vec<usize>)> {
        let mut rng = ChaCha12Rng::seed_from_u64(split_seed);
        let mut train = Vec::new();
        let mut test = Vec::new();
        for class in self.classes() {
            let mut members: Vec<usize> = self
                .examples
                .iter()
                .enumerate()
                .filter(|(_, e)| e.class == class)
                .map(|(i, _)| i)
                .collect();
            if members.len() < train_per_class + test_per_class {
                return Err(Error::InvalidArgument(format!(
                    "class {class} has {} examples, need {}",
                    members.len(),
                    train_per_class + test_per_class
                )));
            }
            // Fisher-Yates with the split rng.
            for i in (1..members.len()).rev() {
                let j = rng.random_range(0..=i);
                members.swap(i, j);
            }
            test.extend_from_slice(&members[..test_per_class]);
            train.extend_from_slice(&members[test_per_class..test_per_class + train_per_class]);
        }
        train.sort_unstable();
        test.sort_unstable();
        Ok((train, test))
    }
}

fn synthesize_class(class: &str, len: usize, rng: &mut ChaCha12Rng) -> Vec<f32> {
    let fs = SAMPLE_RATE as f64;
    let tau = std::f64::consts::TAU;
    match class {
        "white_burst" => (0..len).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
        "lowpass_noise" => {
            let alpha = rng.random_range(0.02..0.2);
            let mut y = 0.0f64;
            (0..len)
                .map(|_| {
                    y += alpha * (rng.random_range(-1.0..1.0) - y);
                    y as f32
                })
                .collect()
        }
        "band_noise" => {
            // Difference of two leaky integrators acts as a crude bandpass.
            let a_lo = rng.random_range(0.01..0.05);
            let a_hi = rng.random_range(0.2..0.5);
            let (mut lo, mut hi) = (0.0f64, 0.0f64);
            (0..len)
                .map(|_| {
                    let x: f64 = rng.random_range(-1.0..1.0);
                    lo += a_lo * (x - lo);
                    hi += a_hi * (x - hi);
                    (hi - lo) as f32
                })
                .collect()
        }
        "am_noise" => {
            let fm = rng.random_range(4.0..16.0);
            (0..len)
                .map(|i| {
                    let env = 0.5 + 0.5 * (tau * fm * i as f64 / fs).sin();
                    (rng.random_range(-1.0..1.0) * env) as f32
                })
                .collect()
        }
        "click_train" => {
            let rate = rng.random_range(8.0..30.0);
            let period = (fs / rate) as usize;
            let mut out = vec![0.0f32; len];
            let mut pos = 0usize;
            while pos < len {
                let sign: f32 = if rng.random_range(0.0..1.0) < 0.5 { -1.0 } else { 1.0 };
                for k in 0..60.min(len - pos) {
                    out[pos + k] += sign * (-(k as f32) / 12.0).exp();
                }
                pos += period.max(1);
            }
            out
        }
        "low_tone" => {
            let f0 = rng.random_range(150.0..400.0);
            let h2 = rng.random_range(0.1..0.5);
            let h3 = rng.random_range(0.05..0.3);
            (0..len)
                .map(|i| {
                    let t = i as f64 / fs;
                    ((tau * f0 * t).sin()
                        + h2 * (tau * 2.0 * f0 * t).sin()
                        + h3 * (tau * 3.0 * f0 * t).sin()) as f32
                })
                .collect()
        }
        "high_tone" => {
            let f0 = rng.random_range(1500.0..4000.0);
            (0..len)
                .map(|i| (tau * f0 * i as f64 / fs).sin() as f32)
                .collect()
        }
        "tone_stack" => {
            let freqs: Vec<f64> = (0..3).map(|_| rng.random_range(200.0..3000.0)).collect();
            (0..len)
                .map(|i| {
                    let t = i as f64 / fs;
                    freqs.iter().map(|f| (tau * f * t).sin()).sum::<f64>() as f32
                })
                .collect()
        }
        "fm_tone" => {
            let carrier = rng.random_range(500.0..2000.0);
            let dev = rng.random_range(20.0..100.0);
            let rate = rng.random_range(4.0..8.0);
            let mut phase = 0.0f64;
            (0..len)
                .map(|i| {
                    let f = carrier + dev * (tau * rate * i as f64 / fs).sin();
                    phase += tau * f / fs;
                    phase.sin() as f32
                })
                .collect()
        }
        "chirp_up" | "chirp_down" => {
            let mut f_start = rng.random_range(300.0..800.0);
            let mut f_end = rng.random_range(2000.0..6000.0);
            if class == "chirp_down" {
                std::mem::swap(&mut f_start, &mut f_end);
            }
            let mut phase = 0.0f64;
            (0..len)
                .map(|i| {
                    let frac = i as f64 / len.max(1) as f64;
                    let f = f_start + (f_end - f_start) * frac;
                    phase += tau * f / fs;
                    phase.sin() as f32
                })
                .collect()
        }
        other => unreachable!("unknown synthetic class {other}"),
    }
}

/// 10 ms raised-cosine fade at both ends to avoid onset/offset clicks.
fn apply_fade(samples: &mut [f32]) {
    let fade = ((SAMPLE_RATE as usize) / 100).min(samples.len() / 2);
    for i in 0..fade {
        let w = 0.5 - 0.5 * (std::f64::consts::PI * i as f64 / fade as f64).cos();
        samples[i] *= w as f32;
        let j = samples.len() - 1 - i;
        samples[j] *= w as f32;
    }
}

fn normalize_peak(samples: &mut [f32], target: f32) {
    let peak = samples.iter().fold(0.0f32, |m, &s| m.max(s.abs()));
    if peak > 0.0 {
        let g = target / peak;
        for s in samples {
            *s *= g;
        }
    }
}
