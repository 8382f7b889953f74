//! Discretized light space: a uniform azimuth × elevation grid over the
//! upper hemisphere and the greedy light-to-bin assignment.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{angle_between, cartesian_to_spherical, direction, UnitVector3};

pub const DEFAULT_AZIMUTH_BINS: usize = 8;
pub const DEFAULT_ELEVATION_BINS: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct LightBinGrid {
    n_azimuth: usize,
    n_elevation: usize,
    centers: Vec<UnitVector3>,
}

/// Grid dimensions alone, as stored in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridShape {
    pub n_azimuth: usize,
    pub n_elevation: usize,
}

impl Default for GridShape {
    fn default() -> Self {
        GridShape {
            n_azimuth: DEFAULT_AZIMUTH_BINS,
            n_elevation: DEFAULT_ELEVATION_BINS,
        }
    }
}

pub fn make_grid(n_azimuth: usize, n_elevation: usize) -> Result<LightBinGrid> {
    if n_azimuth == 0 || n_elevation == 0 {
        return Err(Error::Range(format!(
            "grid needs at least one cell per axis, got {n_azimuth}x{n_elevation}"
        )));
    }
    let az_width = 180.0 / n_azimuth as f64;
    let el_width = 180.0 / n_elevation as f64;
    let mut centers = Vec::with_capacity(n_azimuth * n_elevation);
    for e in 0..n_elevation {
        let el = -90.0 + (e as f64 + 0.5) * el_width;
        for a in 0..n_azimuth {
            let az = (a as f64 + 0.5) * az_width;
            centers.push(direction(az, el)?);
        }
    }
    Ok(LightBinGrid {
        n_azimuth,
        n_elevation,
        centers,
    })
}

impl Default for LightBinGrid {
    fn default() -> Self {
        make_grid(DEFAULT_AZIMUTH_BINS, DEFAULT_ELEVATION_BINS).expect("default grid")
    }
}

impl LightBinGrid {
    pub fn from_shape(shape: GridShape) -> Result<Self> {
        make_grid(shape.n_azimuth, shape.n_elevation)
    }

    pub fn shape(&self) -> GridShape {
        GridShape {
            n_azimuth: self.n_azimuth,
            n_elevation: self.n_elevation,
        }
    }

    pub fn n_azimuth(&self) -> usize {
        self.n_azimuth
    }

    pub fn n_elevation(&self) -> usize {
        self.n_elevation
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn centers(&self) -> &[UnitVector3] {
        &self.centers
    }

    pub fn center(&self, bin: usize) -> UnitVector3 {
        self.centers[bin]
    }

    pub fn azimuth_width_deg(&self) -> f64 {
        180.0 / self.n_azimuth as f64
    }

    pub fn elevation_width_deg(&self) -> f64 {
        180.0 / self.n_elevation as f64
    }

    /// Largest angular offset from a cell center along azimuth.
    pub fn max_azimuth_deviation_deg(&self) -> f64 {
        self.azimuth_width_deg() / 2.0
    }

    /// Largest angular offset from a cell center along elevation.
    pub fn max_elevation_deviation_deg(&self) -> f64 {
        self.elevation_width_deg() / 2.0
    }

    /// (azimuth, elevation) of a bin center in degrees.
    pub fn center_angles(&self, bin: usize) -> (f64, f64) {
        let a = bin % self.n_azimuth;
        let e = bin / self.n_azimuth;
        (
            (a as f64 + 0.5) * self.azimuth_width_deg(),
            -90.0 + (e as f64 + 0.5) * self.elevation_width_deg(),
        )
    }

    pub fn bin_of(&self, l: &UnitVector3) -> Result<usize> {
        let s = cartesian_to_spherical(*l)?;
        let cell = |angle: f64, width: f64, n: usize| -> usize {
            ((angle / width).floor().max(0.0) as usize).min(n - 1)
        };
        let a = cell(s.azimuth_deg(), self.azimuth_width_deg(), self.n_azimuth);
        let e = cell(
            s.elevation_deg() + 90.0,
            self.elevation_width_deg(),
            self.n_elevation,
        );
        Ok(e * self.n_azimuth + a)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinAssignment {
    pairs: Vec<Option<usize>>,
    residuals: Vec<Option<f64>>,
}

impl BinAssignment {
    /// Light index per bin, `None` when the bin is unassigned.
    pub fn pairs(&self) -> &[Option<usize>] {
        &self.pairs
    }

    pub fn light_for(&self, bin: usize) -> Option<usize> {
        self.pairs.get(bin).copied().flatten()
    }

    pub fn residual_deg(&self, bin: usize) -> Option<f64> {
        self.residuals.get(bin).copied().flatten()
    }

    /// Pairs in the `-1` sentinel encoding used on disk.
    pub fn raw_pairs(&self) -> Vec<i64> {
        self.pairs
            .iter()
            .map(|p| p.map_or(-1, |i| i as i64))
            .collect()
    }

    pub fn assigned_bins(&self) -> Vec<usize> {
        self.pairs
            .iter()
            .enumerate()
            .filter_map(|(b, p)| p.map(|_| b))
            .collect()
    }

    pub fn n_unassigned(&self) -> usize {
        self.pairs.iter().filter(|p| p.is_none()).count()
    }

    /// `bin_index,light_index,residual_deg` rows; unassigned bins carry `-1`
    /// and an empty residual.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_index,light_index,residual_deg\n");
        for (b, (p, r)) in self.pairs.iter().zip(&self.residuals).enumerate() {
            match (p, r) {
                (Some(l), Some(r)) => writeln!(out, "{b},{l},{r:.9}").unwrap(),
                _ => writeln!(out, "{b},-1,").unwrap(),
            }
        }
        out
    }
}

/// Greedy assignment of lights to bins in order of increasing angular
/// deviation.
///
/// All (bin, light) pairs are sorted by angle, ties by bin then light
/// index, and each bin takes the first pair that reaches it while still
/// empty. With `unique` set, a light that already filled a bin is skipped
/// so that no light serves two bins.
pub fn assign_lights(
    grid: &LightBinGrid,
    lights: &[UnitVector3],
    unique: bool,
) -> Result<BinAssignment> {
    if lights.is_empty() {
        return Err(Error::Input("no lights to assign".into()));
    }
    for l in lights {
        l.require_upper()?;
    }
    let mut candidates = Vec::with_capacity(grid.len() * lights.len());
    for (b, center) in grid.centers().iter().enumerate() {
        for (j, l) in lights.iter().enumerate() {
            candidates.push((angle_between(center, l), b, j));
        }
    }
    candidates.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });

    let mut pairs = vec![None; grid.len()];
    let mut residuals = vec![None; grid.len()];
    let mut used = vec![false; lights.len()];
    let mut remaining = grid.len();
    for (angle, b, j) in candidates {
        if remaining == 0 {
            break;
        }
        if pairs[b].is_some() || (unique && used[j]) {
            continue;
        }
        pairs[b] = Some(j);
        residuals[b] = Some(angle);
        used[j] = true;
        remaining -= 1;
    }
    Ok(BinAssignment { pairs, residuals })
}
