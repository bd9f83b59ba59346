//! Direction representation, spherical grids, and great-circle distance.
//!
//! Both the pseudo-spectrum and the network output layers bind node indices
//! to grid positions, so grid ordering is part of the contract: directions
//! are stored elevation-major ascending (south pole first, north pole last),
//! azimuth ascending within each elevation ring.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::io::Write;

use crate::{Error, Result};

/// A direction on the unit sphere in 2-D polar coordinates.
///
/// Azimuth is normalized into `[0, 360)` at construction; elevation outside
/// `[-90, +90]` is rejected. The poles are canonicalized to azimuth 0 so a
/// grid represents each pole exactly once.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction {
    azimuth_deg: f64,
    elevation_deg: f64,
}

impl Direction {
    pub fn new(azimuth_deg: f64, elevation_deg: f64) -> Result<Self> {
        if !azimuth_deg.is_finite() || !elevation_deg.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "non-finite direction ({azimuth_deg}, {elevation_deg})"
            )));
        }
        if !(-90.0..=90.0).contains(&elevation_deg) {
            return Err(Error::InvalidArgument(format!(
                "elevation {elevation_deg} outside [-90, 90]"
            )));
        }
        let azimuth_deg = if elevation_deg.abs() == 90.0 {
            0.0
        } else {
            azimuth_deg.rem_euclid(360.0)
        };
        Ok(Self {
            azimuth_deg,
            elevation_deg,
        })
    }

    pub fn azimuth_deg(&self) -> f64 {
        self.azimuth_deg
    }

    pub fn elevation_deg(&self) -> f64 {
        self.elevation_deg
    }

    /// Cartesian unit vector with x toward azimuth 0, y toward azimuth 90,
    /// z toward the north pole.
    pub fn unit_vector(&self) -> [f64; 3] {
        let az = self.azimuth_deg.to_radians();
        let el = self.elevation_deg.to_radians();
        [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()]
    }

    /// Inverse of [`unit_vector`](Self::unit_vector); the input need not be
    /// normalized (the zero vector is rejected).
    pub fn from_unit_vector(v: [f64; 3]) -> Result<Self> {
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::InvalidArgument(
                "cannot derive a direction from a zero or non-finite vector".into(),
            ));
        }
        let el = (v[2] / norm).clamp(-1.0, 1.0).asin().to_degrees();
        let az = v[1].atan2(v[0]).to_degrees();
        Direction::new(az, el)
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.azimuth_deg, self.elevation_deg)
    }
}

/// Great-circle (central) angle between two directions, in degrees `[0, 180]`.
///
/// Equal to the arccos of the clamped unit-vector dot product, evaluated in
/// the atan2 form so identical directions give exactly zero (plain arccos
/// loses ~1e-6 degrees of precision near 0 and 180).
pub fn angular_distance(a: &Direction, b: &Direction) -> f64 {
    let u = a.unit_vector();
    let v = b.unit_vector();
    let dot = (u[0] * v[0] + u[1] * v[1] + u[2] * v[2]).clamp(-1.0, 1.0);
    let cross = [
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    ];
    let cross_norm = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
    cross_norm.atan2(dot) * 180.0 / PI
}

/// Which sampling a grid represents: the full-sphere pseudo-spectrum grid or
/// the elevation-limited DOA output grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridKind {
    Sps,
    Doa,
}

/// An ordered set of grid directions with constant angular resolution.
#[derive(Debug, Clone)]
pub struct DirectionGrid {
    resolution_deg: u32,
    kind: GridKind,
    directions: Vec<Direction>,
    index: HashMap<(i32, i32), usize>,
}

fn check_resolution(resolution_deg: u32) -> Result<()> {
    if resolution_deg == 0 || 360 % resolution_deg != 0 || 180 % resolution_deg != 0 {
        return Err(Error::InvalidArgument(format!(
            "resolution {resolution_deg} must divide both 360 and 180"
        )));
    }
    Ok(())
}

/// Full-sphere grid: every elevation ring strictly between the poles crossed
/// with all azimuths, plus one point per pole. At resolution `r` the count is
/// `(360/r)(180/r - 1) + 2`; 10 degrees gives 614 directions.
pub fn build_sps_grid(resolution_deg: u32) -> Result<DirectionGrid> {
    check_resolution(resolution_deg)?;
    let r = resolution_deg as i32;
    let mut directions = Vec::new();
    directions.push(Direction::new(0.0, -90.0)?);
    let mut el = -90 + r;
    while el <= 90 - r {
        let mut az = 0;
        while az < 360 {
            directions.push(Direction::new(az as f64, el as f64)?);
            az += r;
        }
        el += r;
    }
    directions.push(Direction::new(0.0, 90.0)?);
    Ok(DirectionGrid::from_directions(
        resolution_deg,
        GridKind::Sps,
        directions,
    ))
}

/// DOA output grid with the default elevation span `[-60, +50]`: 36 azimuths
/// by 12 elevations = 432 directions at 10-degree resolution.
///
/// The closed span `[-60, +60]` would hold 468 points; dropping the top ring
/// reproduces the 432-node output layer. The span is configurable through
/// [`build_doa_grid_with_elevations`].
pub fn build_doa_grid(resolution_deg: u32) -> Result<DirectionGrid> {
    build_doa_grid_with_elevations(resolution_deg, -60, 50)
}

/// DOA grid over elevation multiples of the resolution within
/// `[min_elevation_deg, max_elevation_deg]` (inclusive).
pub fn build_doa_grid_with_elevations(
    resolution_deg: u32,
    min_elevation_deg: i32,
    max_elevation_deg: i32,
) -> Result<DirectionGrid> {
    check_resolution(resolution_deg)?;
    let r = resolution_deg as i32;
    if min_elevation_deg > max_elevation_deg
        || min_elevation_deg < -(90 - r)
        || max_elevation_deg > 90 - r
    {
        return Err(Error::InvalidArgument(format!(
            "DOA elevation span [{min_elevation_deg}, {max_elevation_deg}] must lie within \
             [{}, {}]",
            -(90 - r),
            90 - r
        )));
    }
    let mut directions = Vec::new();
    let first = min_elevation_deg.div_euclid(r) * r
        + if min_elevation_deg.rem_euclid(r) == 0 { 0 } else { r };
    let mut el = first;
    while el <= max_elevation_deg {
        let mut az = 0;
        while az < 360 {
            directions.push(Direction::new(az as f64, el as f64)?);
            az += r;
        }
        el += r;
    }
    Ok(DirectionGrid::from_directions(
        resolution_deg,
        GridKind::Doa,
        directions,
    ))
}

impl DirectionGrid {
    fn from_directions(resolution_deg: u32, kind: GridKind, directions: Vec<Direction>) -> Self {
        let index = directions
            .iter()
            .enumerate()
            .map(|(i, d)| (grid_key(d), i))
            .collect();
        Self {
            resolution_deg,
            kind,
            directions,
            index,
        }
    }

    pub fn resolution_deg(&self) -> u32 {
        self.resolution_deg
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn direction(&self, index: usize) -> &Direction {
        &self.directions[index]
    }

    pub fn directions(&self) -> &[Direction] {
        &self.directions
    }

    /// Exact lookup of a grid point (coordinates rounded to whole degrees).
    pub fn index_of(&self, d: &Direction) -> Option<usize> {
        self.index.get(&grid_key(d)).copied()
    }

    pub fn contains(&self, d: &Direction) -> bool {
        self.index_of(d).is_some()
    }

    /// Grid point with the smallest central angle to `d` (linear scan; ties
    /// resolve to the lowest index).
    pub fn nearest(&self, d: &Direction) -> usize {
        let u = d.unit_vector();
        let mut best = 0;
        let mut best_dot = f64::NEG_INFINITY;
        for (i, g) in self.directions.iter().enumerate() {
            let v = g.unit_vector();
            let dot = u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
            if dot > best_dot {
                best_dot = dot;
                best = i;
            }
        }
        best
    }

    /// Lattice neighbors of a grid point: the at-most-8 points adjacent in
    /// azimuth/elevation, with azimuth wrapping modulo 360. A pole neighbors
    /// its entire adjacent elevation ring; conversely a point on the ring
    /// next to a pole has that pole as its single upward neighbor.
    ///
    /// Returned indices are sorted and unique.
    pub fn neighbors(&self, index: usize) -> Result<Vec<usize>> {
        if index >= self.directions.len() {
            return Err(Error::InvalidArgument(format!(
                "grid index {index} out of range ({} directions)",
                self.directions.len()
            )));
        }
        let r = self.resolution_deg as i32;
        let d = &self.directions[index];
        let el = d.elevation_deg.round() as i32;
        let mut out: Vec<usize> = Vec::new();
        if el.abs() == 90 {
            let ring_el = if el > 0 { el - r } else { el + r };
            for (i, g) in self.directions.iter().enumerate() {
                if g.elevation_deg.round() as i32 == ring_el {
                    out.push(i);
                }
            }
        } else {
            let az = d.azimuth_deg.round() as i32;
            for del in [-r, 0, r] {
                for daz in [-r, 0, r] {
                    if del == 0 && daz == 0 {
                        continue;
                    }
                    let nel = el + del;
                    if nel.abs() > 90 {
                        continue;
                    }
                    let naz = if nel.abs() == 90 { 0 } else { (az + daz).rem_euclid(360) };
                    if let Some(&i) = self.index.get(&(naz, nel)) {
                        out.push(i);
                    }
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    /// Serialize as `index,azimuth_deg,elevation_deg` rows for traceability
    /// of pseudo-spectrum and network output nodes.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "index,azimuth_deg,elevation_deg")?;
        for (i, d) in self.directions.iter().enumerate() {
            writeln!(w, "{},{},{}", i, d.azimuth_deg, d.elevation_deg)?;
        }
        Ok(())
    }
}

fn grid_key(d: &Direction) -> (i32, i32) {
    (
        d.azimuth_deg.round() as i32 % 360,
        d.elevation_deg.round() as i32,
    )
}
