//! Random scene scheduling and rendering with frame-level ground truth.
//!
//! Anechoic scenes sum distance-attenuated encoded events; reverberant
//! scenes convolve each event with a 4-channel spatial impulse response
//! built from a rectangular-room image-source model. Ground truth marks an
//! event active in every feature frame its sample support overlaps.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rustfft::{num_complex::Complex, FftPlanner};

use crate::ambisonics::{distance_gain, encode_direction, spatialize, AmbisonicBuffer, SAMPLE_RATE};
use crate::container::{TensorFile, TensorKind};
use crate::corpus::Corpus;
use crate::features::{frame_count, frame_span};
use crate::geometry::{angular_distance, Direction, DirectionGrid};
use crate::{Error, Result};

/// Speed of sound used throughout the image-source model.
pub const SPEED_OF_SOUND: f64 = 343.0;

/// Maximum source distance in the anechoic context; also the distance-gain
/// normalization constant.
pub const MAX_DISTANCE_M: f64 = 10.0;

/// Minimum central angle between temporally overlapping events.
pub const MIN_SEPARATION_DEG: f64 = 10.0;

/// Wall clearance for reverberant source positions.
pub const WALL_CLEARANCE_M: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Context {
    Anechoic,
    Reverberant,
}

impl fmt::Display for Context {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Context::Anechoic => write!(f, "anechoic"),
            Context::Reverberant => write!(f, "reverberant"),
        }
    }
}

impl FromStr for Context {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "anechoic" => Ok(Context::Anechoic),
            "reverberant" => Ok(Context::Reverberant),
            other => Err(Error::InvalidArgument(format!("unknown context {other}"))),
        }
    }
}

/// Rectangular room with the microphone inside it.
#[derive(Debug, Clone, PartialEq)]
pub struct RoomSpec {
    pub dimensions: [f64; 3],
    pub microphone_position: [f64; 3],
    pub target_t60_s: f64,
    pub max_image_time_s: f64,
}

impl RoomSpec {
    pub fn new(
        dimensions: [f64; 3],
        microphone_position: [f64; 3],
        target_t60_s: f64,
    ) -> Result<Self> {
        if dimensions.iter().any(|&d| d <= 0.0) || target_t60_s <= 0.0 {
            return Err(Error::InvalidArgument(
                "room dimensions and target T60 must be positive".into(),
            ));
        }
        for a in 0..3 {
            if microphone_position[a] <= 0.0 || microphone_position[a] >= dimensions[a] {
                return Err(Error::InvalidArgument(
                    "microphone must be strictly inside the room".into(),
                ));
            }
        }
        Ok(Self {
            dimensions,
            microphone_position,
            target_t60_s,
            max_image_time_s: 2.0 * target_t60_s,
        })
    }

    /// The three office test rooms: 10x8x4 m at T60 0.5 s, 8x8x4 m at
    /// 0.4 s, and 8x6x4 m at 0.3 s, microphone centered.
    pub fn office(index: usize) -> Result<Self> {
        let (dims, t60) = match index {
            1 => ([10.0, 8.0, 4.0], 0.5),
            2 => ([8.0, 8.0, 4.0], 0.4),
            3 => ([8.0, 6.0, 4.0], 0.3),
            other => {
                return Err(Error::InvalidArgument(format!(
                    "room index {other} (expected 1..=3)"
                )))
            }
        };
        Self::new(dims, [dims[0] / 2.0, dims[1] / 2.0, dims[2] / 2.0], t60)
    }

    /// Uniform frequency-independent wall reflection coefficient solved from
    /// the target T60 with Sabine's formula.
    pub fn reflection_coefficient(&self) -> Result<f64> {
        let [lx, ly, lz] = self.dimensions;
        let volume = lx * ly * lz;
        let surface = 2.0 * (lx * ly + lx * lz + ly * lz);
        let absorption = 0.161 * volume / (surface * self.target_t60_s);
        if absorption >= 1.0 {
            return Err(Error::InvalidArgument(format!(
                "target T60 {} s is unreachable in this room (Sabine absorption {absorption:.2})",
                self.target_t60_s
            )));
        }
        Ok((1.0 - absorption).sqrt())
    }
}

/// One scheduled sound event. `source_position` is set in the reverberant
/// context; the anechoic context uses `distance_m` directly.
#[derive(Debug, Clone, PartialEq)]
pub struct SoundEvent {
    pub example_id: String,
    pub class: String,
    pub onset_s: f64,
    pub duration_s: f64,
    pub direction: Direction,
    pub distance_m: f64,
    pub source_position: Option<[f64; 3]>,
}

/// A fully scheduled scene, reproducible from its seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub context: Context,
    pub max_overlap: usize,
    pub length_s: f64,
    pub sample_rate: u32,
    pub events: Vec<SoundEvent>,
    pub room: Option<RoomSpec>,
    pub rng_seed: u64,
}

impl SceneSpec {
    pub fn total_samples(&self) -> usize {
        (self.length_s * self.sample_rate as f64).round() as usize
    }
}

/// Scheduling knobs. `allowed_examples` restricts the draw to one
/// cross-validation role; an empty slice means the whole corpus.
#[derive(Debug, Clone)]
pub struct SceneParams {
    pub context: Context,
    pub max_overlap: usize,
    pub length_s: f64,
    pub room: Option<RoomSpec>,
}

impl SceneParams {
    pub fn anechoic(max_overlap: usize) -> Self {
        Self {
            context: Context::Anechoic,
            max_overlap,
            length_s: 30.0,
            room: None,
        }
    }

    pub fn reverberant(max_overlap: usize, room: RoomSpec) -> Self {
        Self {
            context: Context::Reverberant,
            max_overlap,
            length_s: 30.0,
            room: Some(room),
        }
    }
}

/// Schedule one scene: per overlap layer, the first event starts uniformly
/// within the first second and successive events follow a uniform 250-500 ms
/// gap; directions are drawn uniformly from the DOA grid, re-drawn until all
/// temporally overlapping events are at least 10 degrees apart.
pub fn schedule_events(
    corpus: &Corpus,
    allowed_examples: &[usize],
    grid: &DirectionGrid,
    params: &SceneParams,
    seed: u64,
) -> Result<SceneSpec> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("corpus is empty".into()));
    }
    if !(1..=3).contains(&params.max_overlap) {
        return Err(Error::InvalidArgument(format!(
            "max_overlap {} outside 1..=3",
            params.max_overlap
        )));
    }
    if params.context == Context::Reverberant && params.room.is_none() {
        return Err(Error::InvalidArgument(
            "reverberant scenes need a room".into(),
        ));
    }
    let pool: Vec<usize> = if allowed_examples.is_empty() {
        (0..corpus.len()).collect()
    } else {
        allowed_examples.to_vec()
    };
    if pool.iter().any(|&i| i >= corpus.len()) {
        return Err(Error::InvalidArgument(
            "allowed example index out of corpus range".into(),
        ));
    }
    if pool
        .iter()
        .all(|&i| corpus.example(i).duration_s() > params.length_s)
    {
        return Err(Error::InvalidArgument(
            "every allowed corpus example is longer than the recording".into(),
        ));
    }

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut events: Vec<SoundEvent> = Vec::new();
    for _layer in 0..params.max_overlap {
        let mut t = rng.random_range(0.0..1.0);
        loop {
            let example = loop {
                let idx = pool[rng.random_range(0..pool.len())];
                let ex = corpus.example(idx);
                if ex.duration_s() <= params.length_s {
                    break ex;
                }
                eprintln!(
                    "warning: corpus example {} ({:.2} s) is longer than the recording; skipped",
                    ex.id,
                    ex.duration_s()
                );
            };
            let duration = example.duration_s();
            if t + duration > params.length_s {
                break;
            }
            let overlapping: Vec<&SoundEvent> = events
                .iter()
                .filter(|e| e.onset_s < t + duration && t < e.onset_s + e.duration_s)
                .collect();
            let placed = place_event(grid, params, &overlapping, &mut rng)?;
            events.push(SoundEvent {
                example_id: example.id.clone(),
                class: example.class.clone(),
                onset_s: t,
                duration_s: duration,
                direction: placed.0,
                distance_m: placed.1,
                source_position: placed.2,
            });
            t += duration + rng.random_range(0.25..0.5);
        }
    }
    events.sort_by(|a, b| a.onset_s.partial_cmp(&b.onset_s).unwrap());
    Ok(SceneSpec {
        context: params.context,
        max_overlap: params.max_overlap,
        length_s: params.length_s,
        sample_rate: SAMPLE_RATE,
        events,
        room: params.room.clone(),
        rng_seed: seed,
    })
}

/// Draw direction + distance (+ position for reverberant scenes) honoring
/// the spatial separation constraint against the given overlapping events.
fn place_event(
    grid: &DirectionGrid,
    params: &SceneParams,
    overlapping: &[&SoundEvent],
    rng: &mut ChaCha12Rng,
) -> Result<(Direction, f64, Option<[f64; 3]>)> {
    for _attempt in 0..10_000 {
        let (direction, distance, position) = match params.context {
            Context::Anechoic => {
                let dir = *grid.direction(rng.random_range(0..grid.len()));
                let dist = rng.random_range(1.0..MAX_DISTANCE_M);
                (dir, dist, None)
            }
            Context::Reverberant => {
                let room = params.room.as_ref().unwrap();
                let mic = room.microphone_position;
                let p: [f64; 3] = std::array::from_fn(|a| {
                    rng.random_range(WALL_CLEARANCE_M..room.dimensions[a] - WALL_CLEARANCE_M)
                });
                let delta: [f64; 3] = std::array::from_fn(|a| p[a] - mic[a]);
                let dist = (delta[0] * delta[0] + delta[1] * delta[1] + delta[2] * delta[2]).sqrt();
                if dist < 0.3 {
                    continue;
                }
                // Snap the direction to the grid, then place the source on
                // the snapped ray at the drawn distance.
                let raw = Direction::from_unit_vector(delta)?;
                let dir = *grid.direction(grid.nearest(&raw));
                let u = dir.unit_vector();
                let snapped: [f64; 3] = std::array::from_fn(|a| mic[a] + dist * u[a]);
                let inside = (0..3).all(|a| {
                    snapped[a] >= WALL_CLEARANCE_M
                        && snapped[a] <= room.dimensions[a] - WALL_CLEARANCE_M
                });
                if !inside {
                    continue;
                }
                (dir, dist, Some(snapped))
            }
        };
        let separated = overlapping
            .iter()
            .all(|e| angular_distance(&e.direction, &direction) >= MIN_SEPARATION_DEG);
        if separated {
            return Ok((direction, distance, position));
        }
    }
    Err(Error::Numeric(
        "could not satisfy the spatial separation constraint".into(),
    ))
}

/// Per-feature-frame sets of active ground-truth directions.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    frames: Vec<Vec<Direction>>,
}

impl GroundTruth {
    /// An event is active in a frame when its sample support overlaps the
    /// frame's analysis window.
    pub fn from_events(events: &[SoundEvent], total_samples: usize, sample_rate: u32) -> Self {
        let fs = sample_rate as f64;
        let spans: Vec<(usize, usize, Direction)> = events
            .iter()
            .map(|e| {
                let start = (e.onset_s * fs).round() as usize;
                let len = (e.duration_s * fs).round() as usize;
                (start, start + len, e.direction)
            })
            .collect();
        let n_frames = frame_count(total_samples);
        let mut frames = Vec::with_capacity(n_frames);
        for t in 0..n_frames {
            let (w0, w1) = frame_span(t);
            let mut active: Vec<Direction> = Vec::new();
            for &(s0, s1, d) in &spans {
                if s0 < w1 && w0 < s1 && !active.contains(&d) {
                    active.push(d);
                }
            }
            frames.push(active);
        }
        Self { frames }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame(&self, t: usize) -> &[Direction] {
        &self.frames[t]
    }

    pub fn frames(&self) -> &[Vec<Direction>] {
        &self.frames
    }

    pub fn counts(&self) -> Vec<usize> {
        self.frames.iter().map(|f| f.len()).collect()
    }

    /// 0/1 activity matrix over a DOA grid (frames x grid nodes).
    pub fn to_target_matrix(&self, grid: &DirectionGrid) -> Result<TensorFile> {
        let n = grid.len();
        let mut data = vec![0.0f32; self.frames.len() * n];
        for (t, frame) in self.frames.iter().enumerate() {
            for d in frame {
                let idx = grid.index_of(d).ok_or_else(|| {
                    Error::InvalidArgument(format!("ground-truth direction {d} not on grid"))
                })?;
                data[t * n + idx] = 1.0;
            }
        }
        TensorFile::new(
            TensorKind::DoaTargets,
            [self.frames.len(), n, 1],
            self.frames.len(),
            data,
        )
    }
}

/// Render an anechoic scene: the sum of distance-attenuated encoded events.
pub fn render_anechoic(spec: &SceneSpec, corpus: &Corpus) -> Result<(AmbisonicBuffer, GroundTruth)> {
    if spec.context != Context::Anechoic {
        return Err(Error::InvalidArgument(
            "render_anechoic needs an anechoic spec".into(),
        ));
    }
    let total = spec.total_samples();
    let mut out = AmbisonicBuffer::silent(total, spec.sample_rate);
    for event in &spec.events {
        let example = corpus.by_id(&event.example_id)?;
        let gain = distance_gain(event.distance_m, MAX_DISTANCE_M)?;
        let rendered = spatialize(&example.samples, &event.direction, gain);
        let onset = (event.onset_s * spec.sample_rate as f64).round() as usize;
        out.add_at(onset, &rendered);
    }
    Ok((
        out,
        GroundTruth::from_events(&spec.events, total, spec.sample_rate),
    ))
}

/// A mirrored source: position, reflection order, and the direct-path view
/// from the microphone.
#[derive(Debug, Clone)]
pub struct ImageSource {
    pub position: [f64; 3],
    pub reflection_order: u32,
    pub delay_s: f64,
    pub gain: f64,
    pub direction: Direction,
}

/// All image sources whose propagation delay stays within `max_time_s`,
/// with the wall reflection coefficient solved from the room's target T60.
pub fn compute_image_sources(
    room: &RoomSpec,
    source: [f64; 3],
    max_time_s: f64,
) -> Result<Vec<ImageSource>> {
    let beta = room.reflection_coefficient()?;
    compute_image_sources_with_beta(room, source, max_time_s, beta)
}

/// Image-source enumeration with an explicit reflection coefficient
/// (`beta = 0` keeps only the direct path).
pub fn compute_image_sources_with_beta(
    room: &RoomSpec,
    source: [f64; 3],
    max_time_s: f64,
    beta: f64,
) -> Result<Vec<ImageSource>> {
    for a in 0..3 {
        if source[a] < 0.0 || source[a] > room.dimensions[a] {
            return Err(Error::InvalidArgument(
                "source must be inside the room".into(),
            ));
        }
    }
    let mic = room.microphone_position;
    let max_dist = max_time_s * SPEED_OF_SOUND;
    let ranges: Vec<i64> = room
        .dimensions
        .iter()
        .map(|&l| (max_dist / (2.0 * l)).ceil() as i64 + 1)
        .collect();

    let mut images = Vec::new();
    for nx in -ranges[0]..=ranges[0] {
        for qx in 0..=1i64 {
            let x = 2.0 * nx as f64 * room.dimensions[0]
                + (1 - 2 * qx) as f64 * source[0];
            let dx = x - mic[0];
            if dx.abs() > max_dist {
                continue;
            }
            let order_x = (nx - qx).unsigned_abs() + nx.unsigned_abs();
            for ny in -ranges[1]..=ranges[1] {
                for qy in 0..=1i64 {
                    let y = 2.0 * ny as f64 * room.dimensions[1]
                        + (1 - 2 * qy) as f64 * source[1];
                    let dy = y - mic[1];
                    if dx * dx + dy * dy > max_dist * max_dist {
                        continue;
                    }
                    let order_y = (ny - qy).unsigned_abs() + ny.unsigned_abs();
                    for nz in -ranges[2]..=ranges[2] {
                        for qz in 0..=1i64 {
                            let z = 2.0 * nz as f64 * room.dimensions[2]
                                + (1 - 2 * qz) as f64 * source[2];
                            let dz = z - mic[2];
                            let dist_sqr = dx * dx + dy * dy + dz * dz;
                            if dist_sqr > max_dist * max_dist {
                                continue;
                            }
                            let order_z = (nz - qz).unsigned_abs() + nz.unsigned_abs();
                            let order = (order_x + order_y + order_z) as u32;
                            if beta == 0.0 && order > 0 {
                                continue;
                            }
                            let dist = dist_sqr.sqrt();
                            let delay = dist / SPEED_OF_SOUND;
                            if delay > max_time_s {
                                continue;
                            }
                            let direction = Direction::from_unit_vector([dx, dy, dz])?;
                            images.push(ImageSource {
                                position: [x, y, z],
                                reflection_order: order,
                                delay_s: delay,
                                gain: beta.powi(order as i32) / dist.max(0.1),
                                direction,
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(images)
}

/// 4-channel spatial impulse response: each image source contributes a
/// steering-vector-weighted impulse at its sample-quantized delay.
pub fn spatial_impulse_response(
    images: &[ImageSource],
    max_time_s: f64,
    sample_rate: u32,
) -> [Vec<f64>; 4] {
    let len = (max_time_s * sample_rate as f64).ceil() as usize + 1;
    let mut ir: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; len]);
    for img in images {
        let n = (img.delay_s * sample_rate as f64).round() as usize;
        if n >= len {
            continue;
        }
        let sv = encode_direction(&img.direction);
        for c in 0..4 {
            ir[c][n] += img.gain * sv.coefficients()[c];
        }
    }
    ir
}

/// Render a reverberant scene: each event is convolved with the spatial
/// impulse response of its source position; ground truth carries only the
/// direct-path DOA.
pub fn render_reverberant(
    spec: &SceneSpec,
    corpus: &Corpus,
) -> Result<(AmbisonicBuffer, GroundTruth)> {
    if spec.context != Context::Reverberant {
        return Err(Error::InvalidArgument(
            "render_reverberant needs a reverberant spec".into(),
        ));
    }
    let room = spec
        .room
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("reverberant spec without a room".into()))?;
    let total = spec.total_samples();
    let mut out = AmbisonicBuffer::silent(total, spec.sample_rate);
    let mut planner = FftPlanner::<f64>::new();
    for event in &spec.events {
        let example = corpus.by_id(&event.example_id)?;
        let position = event.source_position.ok_or_else(|| {
            Error::InvalidArgument(format!(
                "event {} has no source position",
                event.example_id
            ))
        })?;
        let images = compute_image_sources(room, position, room.max_image_time_s)?;
        let ir = spatial_impulse_response(&images, room.max_image_time_s, spec.sample_rate);
        let wet = convolve_channels(&example.samples, &ir, &mut planner);
        let onset = (event.onset_s * spec.sample_rate as f64).round() as usize;
        out.add_at(onset, &wet);
    }
    Ok((
        out,
        GroundTruth::from_events(&spec.events, total, spec.sample_rate),
    ))
}

/// FFT convolution of one mono signal with four impulse-response channels.
fn convolve_channels(
    signal: &[f32],
    ir: &[Vec<f64>; 4],
    planner: &mut FftPlanner<f64>,
) -> AmbisonicBuffer {
    let out_len = signal.len() + ir[0].len() - 1;
    let size = out_len.next_power_of_two();
    let fft = planner.plan_fft_forward(size);
    let ifft = planner.plan_fft_inverse(size);

    let mut sig_f: Vec<Complex<f64>> = signal
        .iter()
        .map(|&s| Complex::new(s as f64, 0.0))
        .chain(std::iter::repeat(Complex::default()))
        .take(size)
        .collect();
    fft.process(&mut sig_f);

    let channels: [Vec<f32>; 4] = std::array::from_fn(|c| {
        let mut ir_f: Vec<Complex<f64>> = ir[c]
            .iter()
            .map(|&s| Complex::new(s, 0.0))
            .chain(std::iter::repeat(Complex::default()))
            .take(size)
            .collect();
        fft.process(&mut ir_f);
        for (a, b) in ir_f.iter_mut().zip(&sig_f) {
            *a *= b;
        }
        ifft.process(&mut ir_f);
        let scale = 1.0 / size as f64;
        ir_f[..out_len]
            .iter()
            .map(|v| (v.re * scale) as f32)
            .collect()
    });
    AmbisonicBuffer::from_channels(channels, SAMPLE_RATE).expect("finite convolution output")
}

/// Render via the context recorded in the spec.
pub fn render(spec: &SceneSpec, corpus: &Corpus) -> Result<(AmbisonicBuffer, GroundTruth)> {
    match spec.context {
        Context::Anechoic => render_anechoic(spec, corpus),
        Context::Reverberant => render_reverberant(spec, corpus),
    }
}

/// Reverberation time by Schroeder backward integration: least-squares slope
/// of the energy decay curve between -5 and -25 dB, extrapolated to 60 dB.
/// Returns `None` when the response has no usable decay range.
pub fn schroeder_t60(ir: &[f64], sample_rate: u32) -> Option<f64> {
    let energy: Vec<f64> = ir.iter().map(|&x| x * x).collect();
    let total: f64 = energy.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let mut edc = vec![0.0f64; energy.len()];
    let mut acc = 0.0;
    for (i, &e) in energy.iter().enumerate().rev() {
        acc += e;
        edc[i] = acc;
    }
    let db: Vec<f64> = edc.iter().map(|&e| 10.0 * (e / total).log10()).collect();
    let start = db.iter().position(|&v| v <= -5.0)?;
    let end = db.iter().position(|&v| v <= -25.0)?;
    if end <= start + 1 {
        return None;
    }
    // Least-squares line through (time, dB) over the decay range.
    let fs = sample_rate as f64;
    let n = (end - start + 1) as f64;
    let (mut st, mut sd, mut std_, mut stt) = (0.0, 0.0, 0.0, 0.0);
    for i in start..=end {
        let t = i as f64 / fs;
        st += t;
        sd += db[i];
        std_ += t * db[i];
        stt += t * t;
    }
    let slope = (n * std_ - st * sd) / (n * stt - st * st);
    if slope >= 0.0 {
        return None;
    }
    Some(-60.0 / slope)
}

/// Scene metadata rows: `event_id,class,onset_s,duration_s,azimuth_deg,elevation_deg,distance_m`.
pub fn write_events_csv<W: Write>(events: &[SoundEvent], mut w: W) -> Result<()> {
    writeln!(
        w,
        "event_id,class,onset_s,duration_s,azimuth_deg,elevation_deg,distance_m"
    )?;
    for e in events {
        writeln!(
            w,
            "{},{},{:.6},{:.6},{},{},{:.6}",
            e.example_id,
            e.class,
            e.onset_s,
            e.duration_s,
            e.direction.azimuth_deg(),
            e.direction.elevation_deg(),
            e.distance_m
        )?;
    }
    Ok(())
}

/// Parse rows written by [`write_events_csv`]. Source positions are not part
/// of the metadata, so the result describes timing and ground truth only.
pub fn read_events_csv<R: BufRead>(r: R) -> Result<Vec<SoundEvent>> {
    let mut events = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::Format(format!(
                "events csv line {}: expected 7 fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::Format(format!("events csv line {}: bad number {s}", lineno + 1)))
        };
        events.push(SoundEvent {
            example_id: fields[0].to_string(),
            class: fields[1].to_string(),
            onset_s: parse(fields[2])?,
            duration_s: parse(fields[3])?,
            direction: Direction::new(parse(fields[4])?, parse(fields[5])?)?,
            distance_m: parse(fields[6])?,
            source_position: None,
        });
    }
    Ok(events)
}
