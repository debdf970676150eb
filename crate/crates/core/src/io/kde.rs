//! Gaussian kernel density estimates of UnC samples on `[0, 1]`.
//!
//! Bandwidth follows Silverman's rule `h = 0.9·min(σ, IQR/1.34)·n^(−1/5)`,
//! falling back to `σ` when the IQR is zero and floored at
//! [`BANDWIDTH_FLOOR`]. Density is evaluated on a uniform grid over the UnC
//! domain only, so samples piled against 0 or 1 leak some kernel mass outside
//! the grid and the trapezoidal integral comes out below 1.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::csv_util::{read_rows, write_rows};
use crate::error::{Error, Result};

pub const BANDWIDTH_FLOOR: f64 = 1e-3;
pub const MIN_GRID_POINTS: usize = 16;
pub const KDE_HEADER: [&str; 2] = ["x", "density"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KdePoint {
    pub x: f64,
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Kde {
    samples: Vec<f64>,
    bandwidth: f64,
    floored: bool,
}

impl Kde {
    pub fn fit(samples: &[f64]) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "KDE needs at least 2 samples, got {}",
                samples.len()
            )));
        }
        if let Some(index) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let mean = sorted.iter().sum::<f64>() / n;
        let sd = (sorted.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
        let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
        let raw = 0.9 * spread * n.powf(-0.2);
        let floored = !(raw >= BANDWIDTH_FLOOR);
        Ok(Self {
            samples: sorted,
            bandwidth: if floored { BANDWIDTH_FLOOR } else { raw },
            floored,
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Whether the rule-of-thumb bandwidth fell below the floor.
    pub fn floored(&self) -> bool {
        self.floored
    }

    pub fn sample_count(&self) -> usize {
        self.samples.len()
    }

    pub fn density_at(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let norm = 1.0 / (self.samples.len() as f64 * h * (2.0 * PI).sqrt());
        norm * self
            .samples
            .iter()
            .map(|s| (-0.5 * ((x - s) / h).powi(2)).exp())
            .sum::<f64>()
    }

    /// `grid_points` evenly spaced evaluations covering `[0, 1]` inclusive.
    pub fn grid(&self, grid_points: usize) -> Result<Vec<KdePoint>> {
        if grid_points < MIN_GRID_POINTS {
            return Err(Error::InvalidInput(format!(
                "KDE grid needs at least {MIN_GRID_POINTS} points, got {grid_points}"
            )));
        }
        let last = (grid_points - 1) as f64;
        Ok((0..grid_points)
            .map(|i| {
                let x = i as f64 / last;
                KdePoint {
                    x,
                    density: self.density_at(x),
                }
            })
            .collect())
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn trapezoid(points: &[KdePoint]) -> f64 {
    points
        .windows(2)
        .map(|w| 0.5 * (w[1].x - w[0].x) * (w[0].density + w[1].density))
        .sum()
}

/// Fits a KDE and writes `x,density` rows, preceded by a comment line giving
/// the sample count and bandwidth (and whether it was floored).
pub fn kde_emit(samples: &[f64], grid_points: usize, path: impl AsRef<Path>) -> Result<Kde> {
    let kde = Kde::fit(samples)?;
    let points = kde.grid(grid_points)?;
    let mut comment = format!("samples={} bandwidth={}", kde.sample_count(), kde.bandwidth());
    if kde.floored() {
        comment.push_str(&format!(" floored_to={BANDWIDTH_FLOOR}"));
    }
    write_rows(path.as_ref(), &KDE_HEADER, &points, Some(&comment))?;
    Ok(kde)
}

pub fn read_kde(path: impl AsRef<Path>) -> Result<Vec<KdePoint>> {
    read_rows(path.as_ref(), &KDE_HEADER)
}
