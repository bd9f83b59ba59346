//! Evaluation metrics: pseudo-spectrum SNR, Hungarian-matched DOA error,
//! frame recall, and count confusion matrices.

use std::fmt;
use std::io::Write;

use crate::geometry::{angular_distance, Direction};
use crate::subspace::PseudoSpectrum;
use crate::{Error, Result};

/// Reports are capped at this SNR when the error energy underflows, keeping
/// them finite and sortable.
pub const SNR_CAP_DB: f64 = 140.0;

/// Minimum-cost assignment on a rectangular cost matrix (rows x cols) via
/// the Hungarian method with potentials. Returns `min(rows, cols)` pairs
/// `(row, col)` and the summed cost of those pairs.
///
/// The matrix is padded square with zero-cost dummies internally; dummy
/// pairs are dropped from the result, so only real pairs carry cost.
pub fn hungarian(cost: &[Vec<f64>]) -> (Vec<(usize, usize)>, f64) {
    let rows = cost.len();
    let cols = cost.first().map_or(0, |r| r.len());
    if rows == 0 || cols == 0 {
        return (Vec::new(), 0.0);
    }
    let n = rows.max(cols);
    let at = |i: usize, j: usize| -> f64 {
        if i < rows && j < cols {
            cost[i][j]
        } else {
            0.0
        }
    };

    // Shortest augmenting path formulation; indices are 1-based with a
    // virtual column 0.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut assigned_row = vec![0usize; n + 1]; // column -> row
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        assigned_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = assigned_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[assigned_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if assigned_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            assigned_row[j0] = assigned_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs = Vec::new();
    let mut total = 0.0;
    for j in 1..=n {
        let i = assigned_row[j];
        if i >= 1 && i - 1 < rows && j - 1 < cols {
            pairs.push((i - 1, j - 1));
            total += cost[i - 1][j - 1];
        }
    }
    pairs.sort_unstable();
    (pairs, total)
}

/// Minimum-total-angular-distance pairing between estimated and ground-truth
/// directions. Unmatched elements carry no angular cost; count mismatches
/// are captured by frame recall instead.
pub fn match_doas(
    estimated: &[Direction],
    truth: &[Direction],
) -> (Vec<(usize, usize)>, f64) {
    let cost: Vec<Vec<f64>> = estimated
        .iter()
        .map(|e| truth.iter().map(|t| angular_distance(e, t)).collect())
        .collect();
    hungarian(&cost)
}

/// Dataset-level DOA error: total matched angular cost divided by the total
/// number of estimated directions. `None` when nothing was estimated at all
/// (undefined, distinct from a zero error).
pub fn doa_error(
    estimates: &[Vec<Direction>],
    truths: &[Vec<Direction>],
) -> Option<f64> {
    assert_eq!(estimates.len(), truths.len(), "frame ranges must align");
    let mut cost_sum = 0.0;
    let mut est_count = 0usize;
    for (est, truth) in estimates.iter().zip(truths) {
        if est.is_empty() {
            continue;
        }
        let (_, cost) = match_doas(est, truth);
        cost_sum += cost;
        est_count += est.len();
    }
    if est_count == 0 {
        None
    } else {
        Some(cost_sum / est_count as f64)
    }
}

/// Percentage of frames whose estimated direction count equals the true
/// count. Empty-versus-empty frames count as correct.
pub fn frame_recall(estimates: &[Vec<Direction>], truths: &[Vec<Direction>]) -> f64 {
    assert_eq!(estimates.len(), truths.len(), "frame ranges must align");
    if estimates.is_empty() {
        return 0.0;
    }
    let correct = estimates
        .iter()
        .zip(truths)
        .filter(|(e, t)| e.len() == t.len())
        .count();
    100.0 * correct as f64 / estimates.len() as f64
}

/// Entry `(i, j)` counts frames with true count `i` and estimated count `j`,
/// both clipped to `max_count`.
pub fn confusion_matrix(
    estimates: &[Vec<Direction>],
    truths: &[Vec<Direction>],
    max_count: usize,
) -> Vec<Vec<u64>> {
    assert_eq!(estimates.len(), truths.len(), "frame ranges must align");
    let mut m = vec![vec![0u64; max_count + 1]; max_count + 1];
    for (est, truth) in estimates.iter().zip(truths) {
        let i = truth.len().min(max_count);
        let j = est.len().min(max_count);
        m[i][j] += 1;
    }
    m
}

/// Running sums for the pseudo-spectrum SNR over many recordings.
#[derive(Debug, Clone, Default)]
pub struct SnrAccumulator {
    reference_energy: f64,
    error_energy: f64,
}

impl SnrAccumulator {
    pub fn add(&mut self, estimated: &PseudoSpectrum, reference: &PseudoSpectrum) -> Result<()> {
        if estimated.frames() != reference.frames()
            || estimated.grid().len() != reference.grid().len()
        {
            return Err(Error::InvalidArgument(format!(
                "pseudo-spectrum shapes differ: {}x{} vs {}x{}",
                estimated.frames(),
                estimated.grid().len(),
                reference.frames(),
                reference.grid().len()
            )));
        }
        for (e, r) in estimated.values().iter().zip(reference.values()) {
            self.reference_energy += r * r;
            self.error_energy += (e - r) * (e - r);
        }
        Ok(())
    }

    pub fn snr_db(&self) -> f64 {
        if self.error_energy <= 0.0 {
            return SNR_CAP_DB;
        }
        let db = 10.0 * (self.reference_energy / self.error_energy).log10();
        db.clamp(-SNR_CAP_DB, SNR_CAP_DB)
    }
}

/// `10 log10(sum ref^2 / sum (est - ref)^2)` over all frames and directions,
/// capped at +140 dB when the error energy underflows.
pub fn sps_snr(estimated: &PseudoSpectrum, reference: &PseudoSpectrum) -> Result<f64> {
    let mut acc = SnrAccumulator::default();
    acc.add(estimated, reference)?;
    Ok(acc.snr_db())
}

/// Aggregated scores for one dataset/split evaluation.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub label: String,
    pub sps_snr_db: Option<f64>,
    pub doa_error_deg: Option<f64>,
    pub frame_recall_pct: f64,
    pub confusion: Vec<Vec<u64>>,
    pub frames_evaluated: usize,
}

impl EvalReport {
    pub fn csv_header() -> &'static str {
        "label,frames,sps_snr_db,doa_error_deg,frame_recall_pct"
    }

    pub fn write_csv_row<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "{},{},{},{},{:.4}",
            self.label,
            self.frames_evaluated,
            self.sps_snr_db.map_or(String::from(""), |v| format!("{v:.4}")),
            self.doa_error_deg
                .map_or(String::from("undefined"), |v| format!("{v:.4}")),
            self.frame_recall_pct
        )?;
        Ok(())
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "=== {} ({} frames) ===", self.label, self.frames_evaluated)?;
        if let Some(snr) = self.sps_snr_db {
            writeln!(f, "SPS SNR (in dB):              {snr:.2}")?;
        }
        match self.doa_error_deg {
            Some(err) => writeln!(f, "DOA error (in deg):           {err:.2}")?,
            None => writeln!(f, "DOA error (in deg):           undefined (no estimates)")?,
        }
        writeln!(f, "Correctly predicted frames:   {:.1} %", self.frame_recall_pct)?;
        writeln!(f, "Confusion (rows: true count, cols: estimated):")?;
        for row in &self.confusion {
            write!(f, " ")?;
            for v in row {
                write!(f, " {v:>8}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}
