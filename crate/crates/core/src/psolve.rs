//! Least-squares photometric stereo and the mean angular error metric.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::dataset::{dedup_indices, BinnedSample};
use crate::error::{Error, Result};
use crate::geometry::{angle_between, UnitVector3};
use crate::image::{Image, Mask, NormalMap};
use crate::normalnet::NormalNetParams;

/// Largest light-matrix condition number accepted by the solver.
pub const MAX_CONDITION: f64 = 1e6;
/// Observations at or below this intensity count as shadowed.
pub const SHADOW_THRESHOLD: f64 = 1e-4;
/// Scaled-normal magnitude below which a pixel is degenerate.
pub const DEGENERATE_NORM: f64 = 1e-9;
const RCOND_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PsOutput {
    pub normals: NormalMap,
    pub n_pixels: usize,
    pub n_degenerate: usize,
}

/// Condition number of the `M × 3` light matrix (ratio of its extreme
/// singular values).
pub fn condition_number(lights: &[UnitVector3]) -> f64 {
    let gram = gram(lights.iter().map(|l| l.as_array()));
    let eig = SymmetricEigen::new(gram).eigenvalues;
    let max = eig.max();
    let min = eig.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        (max / min).sqrt()
    }
}

fn gram(lights: impl Iterator<Item = [f64; 3]>) -> Matrix3<f64> {
    let mut a = Matrix3::zeros();
    for l in lights {
        let v = Vector3::from(l);
        a += v * v.transpose();
    }
    a
}

/// Scaled normal `albedo · n` minimizing `Σ (l_k · b − i_k)²`.
fn solve_normal_equations(obs: impl Iterator<Item = (f64, [f64; 3])> + Clone) -> Option<Vector3<f64>> {
    let a = gram(obs.clone().map(|(_, l)| l));
    let mut rhs = Vector3::zeros();
    for (i, l) in obs {
        rhs += Vector3::from(l) * i;
    }
    let scale = a.trace() / 3.0;
    if scale <= 0.0 || a.determinant() / scale.powi(3) < RCOND_FLOOR {
        return None;
    }
    a.cholesky().map(|c| c.solve(&rhs))
}

/// Solves one pixel. Shadowed observations are dropped when at least three
/// lit ones remain and still determine the normal. Returns `None` for a
/// degenerate pixel.
pub fn solve_pixel(intensities: &[f64], lights: &[[f64; 3]]) -> Option<[f64; 3]> {
    let all = intensities.iter().copied().zip(lights.iter().copied());
    let lit = all.clone().filter(|(i, _)| *i > SHADOW_THRESHOLD);
    let b = if lit.clone().count() >= 3 {
        solve_normal_equations(lit).or_else(|| solve_normal_equations(all))
    } else {
        solve_normal_equations(all)
    }?;
    let norm = b.norm();
    if !(norm >= DEGENERATE_NORM) {
        return None;
    }
    Some([b[0] / norm, b[1] / norm, b[2] / norm])
}

fn check_lights(lights: &[UnitVector3]) -> Result<()> {
    if lights.len() < 3 {
        return Err(Error::Input(format!(
            "least squares needs at least 3 lights, got {}",
            lights.len()
        )));
    }
    let cond = condition_number(lights);
    if !(cond < MAX_CONDITION) {
        return Err(Error::Conditioning(cond));
    }
    Ok(())
}

/// Per-pixel least squares over the channel-mean intensity.
pub fn least_squares_normals(images: &[&Image], lights: &[UnitVector3], mask: &Mask) -> Result<PsOutput> {
    if images.len() != lights.len() {
        return Err(Error::Input(format!(
            "{} images but {} lights",
            images.len(),
            lights.len()
        )));
    }
    check_lights(lights)?;
    let l: Vec<[f64; 3]> = lights.iter().map(|v| v.as_array()).collect();
    let mut normals = NormalMap::zeros(mask.height(), mask.width());
    let mut n_degenerate = 0;
    let mut obs = vec![0.0; images.len()];
    let pixels = mask.indices();
    for &p in &pixels {
        for (o, img) in obs.iter_mut().zip(images) {
            *o = img.gray(p);
        }
        match solve_pixel(&obs, &l) {
            Some(n) => normals.set(p, n),
            None => {
                n_degenerate += 1;
                normals.set(p, [0.0, 0.0, 1.0]);
            }
        }
    }
    Ok(PsOutput {
        normals,
        n_pixels: pixels.len(),
        n_degenerate,
    })
}

/// Mean angle in degrees between estimated and true normals over the mask.
pub fn mean_angular_error(estimated: &NormalMap, truth: &NormalMap, mask: &Mask) -> Result<f64> {
    let pixels = mask.indices();
    if pixels.is_empty() {
        return Err(Error::Input("mean angular error over an empty mask".into()));
    }
    let mut total = 0.0;
    for &p in &pixels {
        total += angle_between(&estimated.unit(p)?, &truth.unit(p)?);
    }
    Ok(total / pixels.len() as f64)
}

/// Mean of `1 − n̂·n` over the mask.
pub fn mean_cosine_gap(estimated: &NormalMap, truth: &NormalMap, mask: &Mask) -> Result<f64> {
    let pixels = mask.indices();
    if pixels.is_empty() {
        return Err(Error::Input("cosine gap over an empty mask".into()));
    }
    let mut total = 0.0;
    for &p in &pixels {
        total += 1.0 - estimated.unit(p)?.dot(&truth.unit(p)?);
    }
    Ok(total / pixels.len() as f64)
}

#[derive(Debug, Clone, Copy)]
pub enum Backend<'a> {
    LeastSquares,
    Net(&'a NormalNetParams),
}

impl Backend<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Backend::LeastSquares => "ls",
            Backend::Net(_) => "net",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub mae_deg: f64,
    pub n_pixels: usize,
    pub n_degenerate: usize,
    pub bin_indices: Vec<usize>,
}

/// Estimates normals from the images of the given bins and scores them
/// against ground truth. Repeated bins count once.
pub fn evaluate_configuration(
    sample: &BinnedSample,
    bins: &[usize],
    backend: Backend<'_>,
) -> Result<Evaluation> {
    let bins = dedup_indices(bins);
    for &b in &bins {
        if b >= sample.k() {
            return Err(Error::Range(format!(
                "bin {b} outside grid of {} bins",
                sample.k()
            )));
        }
    }
    let inputs = sample.inputs(&bins)?;
    let mask = &sample.sample.mask;
    let (normals, n_degenerate) = match backend {
        Backend::LeastSquares => {
            let images: Vec<&Image> = inputs.iter().map(|(i, _)| *i).collect();
            let lights: Vec<UnitVector3> = inputs.iter().map(|(_, l)| *l).collect();
            let out = least_squares_normals(&images, &lights, mask)?;
            (out.normals, out.n_degenerate)
        }
        Backend::Net(params) => (params.predict(&inputs, mask)?, 0),
    };
    Ok(Evaluation {
        mae_deg: mean_angular_error(&normals, &sample.sample.normals_gt, mask)?,
        n_pixels: mask.count(),
        n_degenerate,
        bin_indices: bins,
    })
}

/// Mean of [`evaluate_configuration`] scores over several samples.
pub fn evaluate_on_samples(samples: &[BinnedSample], bins: &[usize], backend: Backend<'_>) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Input("no samples to evaluate".into()));
    }
    let mut total = 0.0;
    for s in samples {
        total += evaluate_configuration(s, bins, backend)?.mae_deg;
    }
    Ok(total / samples.len() as f64)
}

/// Channel-mean intensities of every bin at every masked pixel, laid out
/// for repeated least-squares scoring of many light subsets.
#[derive(Debug, Clone)]
pub struct LsTable {
    /// `gray[bin][j]` for the j-th masked pixel; empty for unassigned bins.
    gray: Vec<Vec<f64>>,
    lights: Vec<Option<[f64; 3]>>,
    truth: Vec<UnitVector3>,
}

impl LsTable {
    pub fn new(sample: &BinnedSample) -> Result<Self> {
        let pixels = sample.sample.mask.indices();
        if pixels.is_empty() {
            return Err(Error::Input("sample mask is empty".into()));
        }
        let mut gray = Vec::with_capacity(sample.k());
        let mut lights = Vec::with_capacity(sample.k());
        for b in 0..sample.k() {
            match sample.input(b) {
                Ok((img, l)) => {
                    gray.push(pixels.iter().map(|&p| img.gray(p)).collect());
                    lights.push(Some(l.as_array()));
                }
                Err(_) => {
                    gray.push(Vec::new());
                    lights.push(None);
                }
            }
        }
        let truth = pixels
            .iter()
            .map(|&p| sample.sample.normals_gt.unit(p))
            .collect::<Result<Vec<_>>>()?;
        Ok(LsTable { gray, lights, truth })
    }

    /// Least-squares MAE for a set of distinct bins; same result as
    /// [`evaluate_configuration`] with [`Backend::LeastSquares`].
    pub fn mae(&self, bins: &[usize]) -> Result<f64> {
        let mut lights = Vec::with_capacity(bins.len());
        for &b in bins {
            let l = self
                .lights
                .get(b)
                .copied()
                .flatten()
                .ok_or_else(|| Error::Dataset(format!("bin {b} has no light assigned")))?;
            lights.push(l);
        }
        let units: Vec<UnitVector3> = lights
            .iter()
            .map(|l| UnitVector3::normalize(l[0], l[1], l[2]))
            .collect::<Result<_>>()?;
        check_lights(&units)?;
        let mut obs = vec![0.0; bins.len()];
        let mut total = 0.0;
        for (j, truth) in self.truth.iter().enumerate() {
            for (o, &b) in obs.iter_mut().zip(bins) {
                *o = self.gray[b][j];
            }
            let n = solve_pixel(&obs, &lights).unwrap_or([0.0, 0.0, 1.0]);
            total += angle_between(&UnitVector3::normalize(n[0], n[1], n[2])?, truth);
        }
        Ok(total / self.truth.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::direction;
    use crate::lightspace::make_grid;
    use crate::render::{render_dataset, SceneSpec};
    use approx::assert_abs_diff_eq;

    fn pixel_image(values: &[f64]) -> Vec<Image> {
        values
            .iter()
            .map(|v| Image::from_data(1, 1, 3, vec![*v; 3]).unwrap())
            .collect()
    }

    #[test]
    fn constructed_lambertian_pixel() {
        let lights = [
            UnitVector3::Z,
            UnitVector3::new(0.6, 0.0, 0.8).unwrap(),
            UnitVector3::new(0.0, 0.6, 0.8).unwrap(),
        ];
        let imgs = pixel_image(&[1.0, 0.8, 0.8]);
        let refs: Vec<&Image> = imgs.iter().collect();
        let out = least_squares_normals(&refs, &lights, &Mask::full(1, 1)).unwrap();
        let n = out.normals.get(0);
        assert_abs_diff_eq!(n[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(n[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(n[2], 1.0, epsilon = 1e-12);
        assert_eq!(out.n_degenerate, 0);
    }

    #[test]
    fn dark_pixel_is_degenerate() {
        let lights = [
            UnitVector3::Z,
            UnitVector3::new(0.6, 0.0, 0.8).unwrap(),
            UnitVector3::new(0.0, 0.6, 0.8).unwrap(),
        ];
        let imgs = pixel_image(&[0.0, 0.0, 0.0]);
        let refs: Vec<&Image> = imgs.iter().collect();
        let out = least_squares_normals(&refs, &lights, &Mask::full(1, 1)).unwrap();
        assert_eq!(out.normals.get(0), [0.0, 0.0, 1.0]);
        assert_eq!(out.n_degenerate, 1);
    }

    #[test]
    fn coplanar_lights_rejected() {
        let lights = [
            direction(30.0, 0.0).unwrap(),
            direction(90.0, 0.0).unwrap(),
            direction(150.0, 0.0).unwrap(),
        ];
        let imgs = pixel_image(&[0.5, 0.5, 0.5]);
        let refs: Vec<&Image> = imgs.iter().collect();
        match least_squares_normals(&refs, &lights, &Mask::full(1, 1)) {
            Err(Error::Conditioning(c)) => assert!(c >= MAX_CONDITION),
            other => panic!("expected conditioning error, got {other:?}"),
        }
        assert!(matches!(
            least_squares_normals(&refs[..2], &lights[..2], &Mask::full(1, 1)),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn scale_invariance() {
        let lights: Vec<[f64; 3]> = [
            UnitVector3::Z,
            direction(60.0, 20.0).unwrap(),
            direction(120.0, -25.0).unwrap(),
            direction(90.0, 40.0).unwrap(),
        ]
        .iter()
        .map(|l| l.as_array())
        .collect();
        let obs = [0.7, 0.3, 0.55, 0.41];
        let a = solve_pixel(&obs, &lights).unwrap();
        for c in [0.1, 2.0, 17.0] {
            let scaled: Vec<f64> = obs.iter().map(|v| v * c).collect();
            let b = solve_pixel(&scaled, &lights).unwrap();
            for k in 0..3 {
                assert_abs_diff_eq!(a[k], b[k], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn mae_examples() {
        let mask = Mask::full(1, 2);
        let z = NormalMap::from_data(1, 2, vec![[0.0, 0.0, 1.0]; 2]).unwrap();
        let x = NormalMap::from_data(1, 2, vec![[1.0, 0.0, 0.0]; 2]).unwrap();
        assert_eq!(mean_angular_error(&z, &z, &mask).unwrap(), 0.0);
        assert_abs_diff_eq!(mean_angular_error(&x, &z, &mask).unwrap(), 90.0, epsilon = 1e-12);
        let t = 10f64.to_radians();
        let half = NormalMap::from_data(1, 2, vec![[0.0, 0.0, 1.0], [0.0, t.sin(), t.cos()]]).unwrap();
        assert_abs_diff_eq!(mean_angular_error(&half, &z, &mask).unwrap(), 5.0, epsilon = 1e-9);
        let empty = Mask::new(1, 2, vec![false, false]).unwrap();
        assert!(matches!(mean_angular_error(&z, &z, &empty), Err(Error::Input(_))));
    }

    #[test]
    fn table_agrees_with_direct_evaluation() {
        let grid = make_grid(4, 3).unwrap();
        let mut spec = SceneSpec::lambertian_sphere(24);
        spec.noise_sigma = 0.02;
        spec.specular_strength = 0.2;
        spec.specular_exponent = 15.0;
        let s = render_dataset(&spec, grid.centers()).unwrap();
        let b = BinnedSample::new(s, &grid).unwrap();
        let table = LsTable::new(&b).unwrap();
        for bins in [vec![1, 2, 5], vec![0, 4, 6, 10], vec![5, 6, 1, 2, 9]] {
            let direct = evaluate_configuration(&b, &bins, Backend::LeastSquares).unwrap();
            assert_abs_diff_eq!(direct.mae_deg, table.mae(&bins).unwrap(), epsilon = 1e-12);
        }
    }

    #[test]
    fn duplicate_bins_collapse() {
        let grid = make_grid(4, 3).unwrap();
        let s = render_dataset(&SceneSpec::lambertian_sphere(16), grid.centers()).unwrap();
        let b = BinnedSample::new(s, &grid).unwrap();
        let once = evaluate_configuration(&b, &[1, 2, 5], Backend::LeastSquares).unwrap();
        let twice = evaluate_configuration(&b, &[1, 2, 2, 5, 1], Backend::LeastSquares).unwrap();
        assert_eq!(once, twice);
        assert!(matches!(
            evaluate_configuration(&b, &[1, 2, 12], Backend::LeastSquares),
            Err(Error::Range(_))
        ));
    }
}
