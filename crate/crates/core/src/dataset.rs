//! Rendered samples bound to a light-bin grid.

use crate::error::{Error, Result};
use crate::geometry::UnitVector3;
use crate::image::Image;
use crate::lightspace::{assign_lights, BinAssignment, LightBinGrid};
use crate::render::RenderedSample;

/// A sample whose lights have been assigned to grid bins (one light per
/// bin, no light reused).
#[derive(Debug, Clone)]
pub struct BinnedSample {
    pub sample: RenderedSample,
    pub assignment: BinAssignment,
    k: usize,
}

impl BinnedSample {
    pub fn new(sample: RenderedSample, grid: &LightBinGrid) -> Result<Self> {
        let assignment = assign_lights(grid, &sample.lights, true)?;
        Ok(BinnedSample {
            sample,
            assignment,
            k: grid.len(),
        })
    }

    /// Number of bins in the grid this sample was binned to.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn assigned_bins(&self) -> Vec<usize> {
        self.assignment.assigned_bins()
    }

    /// The image and light behind a bin.
    pub fn input(&self, bin: usize) -> Result<(&Image, UnitVector3)> {
        if bin >= self.k {
            return Err(Error::Range(format!(
                "bin {bin} outside grid of {} bins",
                self.k
            )));
        }
        let light = self
            .assignment
            .light_for(bin)
            .ok_or_else(|| Error::Dataset(format!("bin {bin} has no light assigned")))?;
        Ok((&self.sample.images[light], self.sample.lights[light]))
    }

    pub fn inputs(&self, bins: &[usize]) -> Result<Vec<(&Image, UnitVector3)>> {
        bins.iter().map(|&b| self.input(b)).collect()
    }
}

/// Bins assigned in every sample; errors when samples disagree.
pub fn common_bins(samples: &[BinnedSample]) -> Result<Vec<usize>> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Dataset("empty dataset".into()))?;
    let bins = first.assigned_bins();
    for (i, s) in samples.iter().enumerate().skip(1) {
        if s.k() != first.k() || s.assigned_bins() != bins {
            return Err(Error::Dataset(format!(
                "sample {i} covers a different set of bins than sample 0"
            )));
        }
    }
    Ok(bins)
}

/// Removes repeated indices, keeping first occurrences in order.
pub fn dedup_indices(bins: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(bins.len());
    for &b in bins {
        if !out.contains(&b) {
            out.push(b);
        }
    }
    out
}
