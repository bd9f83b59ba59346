//! Minimal RIFF/WAV reader and writer.
//!
//! Rendered scenes are stored as 4-channel 32-bit float WAV at 44100 Hz.
//! The reader additionally accepts 16-bit PCM so external mono corpora can
//! be dropped in without conversion.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::ambisonics::AmbisonicBuffer;
use crate::{Error, Result};

/// Deinterleaved samples plus the sample rate they were stored at.
#[derive(Debug, Clone)]
pub struct WavData {
    pub channels: Vec<Vec<f32>>,
    pub sample_rate: u32,
}

pub fn write_wav_f32(path: &Path, channels: &[&[f32]], sample_rate: u32) -> Result<()> {
    if channels.is_empty() {
        return Err(Error::InvalidArgument("no channels to write".into()));
    }
    let frames = channels[0].len();
    if channels.iter().any(|c| c.len() != frames) {
        return Err(Error::InvalidArgument(
            "all channels must share one length".into(),
        ));
    }
    let n_ch = channels.len() as u32;
    let data_bytes = (frames as u32) * n_ch * 4;
    let byte_rate = sample_rate * n_ch * 4;
    let block_align = (n_ch * 4) as u16;

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(b"RIFF")?;
    // 4 (WAVE) + 24 (fmt) + 12 (fact) + 8 (data header) + payload
    w.write_all(&(4 + 24 + 12 + 8 + data_bytes).to_le_bytes())?;
    w.write_all(b"WAVE")?;
    w.write_all(b"fmt ")?;
    w.write_all(&16u32.to_le_bytes())?;
    w.write_all(&3u16.to_le_bytes())?; // IEEE float
    w.write_all(&(n_ch as u16).to_le_bytes())?;
    w.write_all(&sample_rate.to_le_bytes())?;
    w.write_all(&byte_rate.to_le_bytes())?;
    w.write_all(&block_align.to_le_bytes())?;
    w.write_all(&32u16.to_le_bytes())?;
    // fact chunk is required for non-PCM formats
    w.write_all(b"fact")?;
    w.write_all(&4u32.to_le_bytes())?;
    w.write_all(&(frames as u32).to_le_bytes())?;
    w.write_all(b"data")?;
    w.write_all(&data_bytes.to_le_bytes())?;
    let mut buf = Vec::with_capacity(frames * n_ch as usize * 4);
    for i in 0..frames {
        for ch in channels {
            buf.extend_from_slice(&ch[i].to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn write_ambisonic_wav(path: &Path, buffer: &AmbisonicBuffer) -> Result<()> {
    let chans: Vec<&[f32]> = (0..4).map(|c| buffer.channel(c)).collect();
    write_wav_f32(path, &chans, buffer.sample_rate())
}

pub fn read_wav(path: &Path) -> Result<WavData> {
    let mut r = BufReader::new(
        File::open(path).map_err(|e| Error::MissingInput(format!("{}: {e}", path.display())))?,
    );
    let mut hdr = [0u8; 12];
    r.read_exact(&mut hdr)
        .map_err(|_| bad(path, "truncated RIFF header"))?;
    if &hdr[0..4] != b"RIFF" || &hdr[8..12] != b"WAVE" {
        return Err(bad(path, "not a RIFF/WAVE file"));
    }

    let mut format: Option<(u16, u16, u32, u16)> = None; // (codec, channels, rate, bits)
    let mut data: Option<Vec<u8>> = None;
    loop {
        let mut chunk_hdr = [0u8; 8];
        match r.read_exact(&mut chunk_hdr) {
            Ok(()) => {}
            Err(_) => break,
        }
        let id = [chunk_hdr[0], chunk_hdr[1], chunk_hdr[2], chunk_hdr[3]];
        let size = u32::from_le_bytes(chunk_hdr[4..8].try_into().unwrap()) as usize;
        let mut body = vec![0u8; size + (size & 1)]; // chunks are word-aligned
        r.read_exact(&mut body)
            .map_err(|_| bad(path, "truncated chunk"))?;
        body.truncate(size);
        match &id {
            b"fmt " => {
                if size < 16 {
                    return Err(bad(path, "fmt chunk too short"));
                }
                let codec = u16::from_le_bytes(body[0..2].try_into().unwrap());
                let channels = u16::from_le_bytes(body[2..4].try_into().unwrap());
                let rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes(body[14..16].try_into().unwrap());
                format = Some((codec, channels, rate, bits));
            }
            b"data" => data = Some(body),
            _ => {}
        }
    }

    let (codec, n_ch, rate, bits) = format.ok_or_else(|| bad(path, "missing fmt chunk"))?;
    let data = data.ok_or_else(|| bad(path, "missing data chunk"))?;
    if n_ch == 0 {
        return Err(bad(path, "zero channels"));
    }
    let n_ch = n_ch as usize;

    let interleaved: Vec<f32> = match (codec, bits) {
        (3, 32) => data
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect(),
        (1, 16) => data
            .chunks_exact(2)
            .map(|b| i16::from_le_bytes(b.try_into().unwrap()) as f32 / 32768.0)
            .collect(),
        _ => {
            return Err(bad(
                path,
                &format!("unsupported codec {codec} / {bits}-bit (need float32 or PCM16)"),
            ))
        }
    };

    let frames = interleaved.len() / n_ch;
    let mut channels = vec![Vec::with_capacity(frames); n_ch];
    for frame in interleaved.chunks_exact(n_ch) {
        for (c, &s) in frame.iter().enumerate() {
            channels[c].push(s);
        }
    }
    Ok(WavData {
        channels,
        sample_rate: rate,
    })
}

pub fn read_ambisonic_wav(path: &Path) -> Result<AmbisonicBuffer> {
    let wav = read_wav(path)?;
    if wav.channels.len() != 4 {
        return Err(bad(
            path,
            &format!("expected 4 channels, found {}", wav.channels.len()),
        ));
    }
    let mut it = wav.channels.into_iter();
    let channels = std::array::from_fn(|_| it.next().unwrap());
    AmbisonicBuffer::from_channels(channels, wav.sample_rate)
}

fn bad(path: &Path, msg: &str) -> Error {
    Error::Format(format!("{}: {msg}", path.display()))
}
