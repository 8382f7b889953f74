//! Synthetic photometric-stereo scenes under distant lights and an
//! orthographic camera looking down `-z`.
//!
//! Per masked pixel the intensity is
//!
//! ```text
//! I = ψ · (albedo · max(0, n·l) + k_s · max(0, n·h)^p) + noise,   h = normalize(l + v)
//! ```
//!
//! clamped to `[0, 1]`, where `ψ` is zero under attached shadow and, when
//! enabled, under cast shadow found by marching the height field toward
//! the light.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::UnitVector3;
use crate::image::{Image, Mask, NormalMap};

pub const VIEW: UnitVector3 = UnitVector3::Z;
pub const MIN_IMAGE_SIDE: usize = 8;
const CAST_STEP_PX: f64 = 0.5;
const CAST_EPSILON: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianBump {
    /// Center column, row in pixel units.
    pub center: [f64; 2],
    pub amplitude: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ShapeKind {
    Sphere,
    GaussianBumps { bumps: Vec<GaussianBump> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Albedo {
    Uniform([f64; 3]),
    Map(Vec<[f64; 3]>),
}

impl Albedo {
    pub fn gray(value: f64) -> Self {
        Albedo::Uniform([value; 3])
    }

    fn at(&self, index: usize) -> [f64; 3] {
        match self {
            Albedo::Uniform(a) => *a,
            Albedo::Map(m) => m[index],
        }
    }

    pub fn scaled(&self, c: f64) -> Albedo {
        let s = |a: &[f64; 3]| [a[0] * c, a[1] * c, a[2] * c];
        match self {
            Albedo::Uniform(a) => Albedo::Uniform(s(a)),
            Albedo::Map(m) => Albedo::Map(m.iter().map(s).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub shape: ShapeKind,
    pub height: usize,
    pub width: usize,
    pub albedo: Albedo,
    pub specular_strength: f64,
    pub specular_exponent: f64,
    pub noise_sigma: f64,
    pub cast_shadows: bool,
    pub seed: u64,
}

impl SceneSpec {
    /// Noiseless Lambertian sphere with unit albedo.
    pub fn lambertian_sphere(size: usize) -> Self {
        SceneSpec {
            shape: ShapeKind::Sphere,
            height: size,
            width: size,
            albedo: Albedo::gray(1.0),
            specular_strength: 0.0,
            specular_exponent: 1.0,
            noise_sigma: 0.0,
            cast_shadows: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < MIN_IMAGE_SIDE || self.width < MIN_IMAGE_SIDE {
            return Err(Error::Configuration(format!(
                "image {}x{} is smaller than {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}",
                self.height, self.width
            )));
        }
        let in_unit = |a: &[f64; 3]| a.iter().all(|v| (0.0..=1.0).contains(v));
        let albedo_ok = match &self.albedo {
            Albedo::Uniform(a) => in_unit(a),
            Albedo::Map(m) => m.len() == self.height * self.width && m.iter().all(in_unit),
        };
        if !albedo_ok {
            return Err(Error::Configuration(
                "albedo must lie in [0, 1] and cover every pixel".into(),
            ));
        }
        if !(self.specular_strength >= 0.0) || !(self.specular_exponent >= 1.0) {
            return Err(Error::Configuration(format!(
                "specular strength {} must be >= 0 and exponent {} >= 1",
                self.specular_strength, self.specular_exponent
            )));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Configuration(format!(
                "noise sigma {} must be >= 0",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

/// Bumps with centers, amplitudes and widths drawn from `seed`.
pub fn random_bumps(count: usize, height: usize, width: usize, seed: u64) -> Vec<GaussianBump> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6275_6d70);
    let side = height.min(width) as f64;
    (0..count)
        .map(|_| GaussianBump {
            center: [
                rng.gen_range(0.2..0.8) * (width - 1) as f64,
                rng.gen_range(0.2..0.8) * (height - 1) as f64,
            ],
            amplitude: rng.gen_range(0.08..0.2) * side * if rng.gen_bool(0.8) { 1.0 } else { -1.0 },
            sigma: rng.gen_range(0.1..0.2) * side,
        })
        .collect()
}

/// `count` scenes alternating between a sphere and a bump field, and
/// between matte and glossy surfaces, with albedos drawn from `seed`.
pub fn scene_mix(count: usize, size: usize, noise_sigma: f64, seed: u64) -> Vec<SceneSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d69_78);
    (0..count)
        .map(|i| {
            let scene_seed = rng.gen();
            let shape = if i % 2 == 0 {
                ShapeKind::Sphere
            } else {
                ShapeKind::GaussianBumps {
                    bumps: random_bumps(rng.gen_range(2..=4), size, size, scene_seed),
                }
            };
            let glossy = (i / 2) % 2 == 1;
            SceneSpec {
                shape,
                height: size,
                width: size,
                albedo: Albedo::gray(rng.gen_range(0.6..1.0)),
                specular_strength: if glossy { rng.gen_range(0.2..0.5) } else { 0.0 },
                specular_exponent: if glossy { rng.gen_range(10.0..40.0) } else { 1.0 },
                noise_sigma,
                cast_shadows: i % 2 == 1,
                seed: scene_seed,
            }
        })
        .collect()
}

/// Ground-truth geometry of a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGeometry {
    pub normals: NormalMap,
    pub mask: Mask,
    /// Surface height above the image plane, in pixel units.
    pub depth: Vec<f64>,
}

impl SceneGeometry {
    pub fn height(&self) -> usize {
        self.mask.height()
    }

    pub fn width(&self) -> usize {
        self.mask.width()
    }
}

/// Camera-space coordinates of a pixel center, origin at the image center.
fn pixel_xy(row: usize, col: usize, height: usize, width: usize) -> (f64, f64) {
    (
        col as f64 - (width - 1) as f64 / 2.0,
        (height - 1) as f64 / 2.0 - row as f64,
    )
}

pub fn make_shape(spec: &SceneSpec) -> SceneGeometry {
    let (h, w) = (spec.height, spec.width);
    let mut normals = NormalMap::zeros(h, w);
    let mut mask = vec![false; h * w];
    let mut depth = vec![0.0; h * w];
    match &spec.shape {
        ShapeKind::Sphere => {
            let radius = 0.45 * h.min(w) as f64;
            for r in 0..h {
                for c in 0..w {
                    let (x, y) = pixel_xy(r, c, h, w);
                    let z2 = radius * radius - x * x - y * y;
                    // keep a sliver off the limb so every masked normal has z > 0
                    if z2 > 1e-3 * radius * radius {
                        let i = r * w + c;
                        let z = z2.sqrt();
                        mask[i] = true;
                        depth[i] = z;
                        normals.set(i, [x / radius, y / radius, z / radius]);
                    }
                }
            }
        }
        ShapeKind::GaussianBumps { bumps } => {
            for r in 0..h {
                for c in 0..w {
                    let i = r * w + c;
                    let (px, py) = (c as f64, r as f64);
                    let (mut hgt, mut dx, mut dy) = (0.0, 0.0, 0.0);
                    for b in bumps {
                        let ex = px - b.center[0];
                        let ey = py - b.center[1];
                        let s2 = b.sigma * b.sigma;
                        let g = b.amplitude * (-(ex * ex + ey * ey) / (2.0 * s2)).exp();
                        hgt += g;
                        dx += -g * ex / s2;
                        // rows grow downward, camera y grows upward
                        dy += g * ey / s2;
                    }
                    let n = (dx * dx + dy * dy + 1.0).sqrt();
                    mask[i] = true;
                    depth[i] = hgt;
                    normals.set(i, [-dx / n, -dy / n, 1.0 / n]);
                }
            }
        }
    }
    SceneGeometry {
        normals,
        mask: Mask::new(h, w, mask).expect("mask size"),
        depth,
    }
}

fn bilinear(depth: &[f64], h: usize, w: usize, col: f64, row: f64) -> f64 {
    let c0 = col.floor().clamp(0.0, (w - 1) as f64) as usize;
    let r0 = row.floor().clamp(0.0, (h - 1) as f64) as usize;
    let c1 = (c0 + 1).min(w - 1);
    let r1 = (r0 + 1).min(h - 1);
    let fc = (col - c0 as f64).clamp(0.0, 1.0);
    let fr = (row - r0 as f64).clamp(0.0, 1.0);
    let top = depth[r0 * w + c0] * (1.0 - fc) + depth[r0 * w + c1] * fc;
    let bottom = depth[r1 * w + c0] * (1.0 - fc) + depth[r1 * w + c1] * fc;
    top * (1.0 - fr) + bottom * fr
}

/// Marches from the surface point of pixel `index` toward `l` and reports
/// whether the height field blocks the ray.
pub fn is_cast_shadowed(geom: &SceneGeometry, index: usize, l: &UnitVector3) -> bool {
    let (h, w) = (geom.height(), geom.width());
    let lxy = (l.x() * l.x() + l.y() * l.y()).sqrt();
    if lxy < 1e-9 {
        return false;
    }
    let max_depth = geom.depth.iter().cloned().fold(f64::MIN, f64::max);
    // image columns follow +x, rows follow -y
    let dc = l.x() / lxy * CAST_STEP_PX;
    let dr = -l.y() / lxy * CAST_STEP_PX;
    let dz = l.z() / lxy * CAST_STEP_PX;
    let mut col = (index % w) as f64;
    let mut row = (index / w) as f64;
    let mut z = geom.depth[index];
    loop {
        col += dc;
        row += dr;
        z += dz;
        if col < 0.0 || row < 0.0 || col > (w - 1) as f64 || row > (h - 1) as f64 || z > max_depth {
            return false;
        }
        if bilinear(&geom.depth, h, w, col, row) > z + CAST_EPSILON {
            return true;
        }
    }
}

/// Noise-free shading at one pixel, before the shadow term.
pub fn shade(n: &UnitVector3, l: &UnitVector3, albedo: [f64; 3], ks: f64, p: f64) -> [f64; 3] {
    let ndotl = n.dot(l);
    if ndotl <= 0.0 {
        return [0.0; 3];
    }
    let spec = if ks > 0.0 {
        // l is in the upper hemisphere, so l + v never vanishes
        let half = UnitVector3::normalize(l.x() + VIEW.x(), l.y() + VIEW.y(), l.z() + VIEW.z())
            .expect("half vector");
        ks * n.dot(&half).max(0.0).powf(p)
    } else {
        0.0
    };
    [
        albedo[0] * ndotl + spec,
        albedo[1] * ndotl + spec,
        albedo[2] * ndotl + spec,
    ]
}

fn noise_seed(seed: u64, image_index: usize) -> u64 {
    // splitmix64 finalizer over (seed, image index)
    let mut z = seed ^ (image_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Renders one RGB image under light `l`. Noise for image `image_index`
/// comes from its own stream, drawn in pixel order.
pub fn render_image(
    geom: &SceneGeometry,
    spec: &SceneSpec,
    l: &UnitVector3,
    image_index: usize,
) -> Result<Image> {
    l.require_upper()?;
    let (h, w) = (geom.height(), geom.width());
    let mut img = Image::zeros(h, w, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed(spec.seed, image_index));
    for i in 0..h * w {
        let noise: [f64; 3] = if spec.noise_sigma > 0.0 {
            let mut draw = || rng.sample::<f64, _>(StandardNormal) * spec.noise_sigma;
            [draw(), draw(), draw()]
        } else {
            [0.0; 3]
        };
        if !geom.mask.get(i) {
            continue;
        }
        let n = geom.normals.unit(i)?;
        let lit = n.dot(l) > 0.0 && !(spec.cast_shadows && is_cast_shadowed(geom, i, l));
        let s = if lit {
            shade(
                &n,
                l,
                spec.albedo.at(i),
                spec.specular_strength,
                spec.specular_exponent,
            )
        } else {
            [0.0; 3]
        };
        let px = img.pixel_mut(i);
        for c in 0..3 {
            px[c] = (s[c] + noise[c]).clamp(0.0, 1.0);
        }
    }
    Ok(img)
}

/// One scene imaged under several lights.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedSample {
    pub images: Vec<Image>,
    pub lights: Vec<UnitVector3>,
    pub normals_gt: NormalMap,
    pub mask: Mask,
}

impl RenderedSample {
    pub fn new(
        images: Vec<Image>,
        lights: Vec<UnitVector3>,
        normals_gt: NormalMap,
        mask: Mask,
    ) -> Result<Self> {
        if images.len() != lights.len() {
            return Err(Error::Input(format!(
                "{} images but {} lights",
                images.len(),
                lights.len()
            )));
        }
        for img in &images {
            if img.height() != mask.height() || img.width() != mask.width() {
                return Err(Error::Input(format!(
                    "image {}x{} does not match mask {}x{}",
                    img.height(),
                    img.width(),
                    mask.height(),
                    mask.width()
                )));
            }
        }
        Ok(RenderedSample {
            images,
            lights,
            normals_gt,
            mask,
        })
    }

    pub fn height(&self) -> usize {
        self.mask.height()
    }

    pub fn width(&self) -> usize {
        self.mask.width()
    }
}

pub fn render_dataset(spec: &SceneSpec, lights: &[UnitVector3]) -> Result<RenderedSample> {
    spec.validate()?;
    if lights.is_empty() {
        return Err(Error::Input("render needs at least one light".into()));
    }
    let geom = make_shape(spec);
    let images = lights
        .iter()
        .enumerate()
        .map(|(k, l)| render_image(&geom, spec, l, k))
        .collect::<Result<Vec<_>>>()?;
    RenderedSample::new(images, lights.to_vec(), geom.normals, geom.mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::direction;
    use approx::assert_abs_diff_eq;

    fn center_index(spec: &SceneSpec) -> usize {
        (spec.height / 2) * spec.width + spec.width / 2
    }

    #[test]
    fn sphere_center_faces_camera() {
        let spec = SceneSpec::lambertian_sphere(33);
        let g = make_shape(&spec);
        let n = g.normals.get(center_index(&spec));
        assert_abs_diff_eq!(n[2], 1.0, epsilon = 1e-12);
        assert!(!g.mask.get(0));
    }

    #[test]
    fn masked_normals_are_unit_and_front_facing() {
        let mut spec = SceneSpec::lambertian_sphere(32);
        for shape in [
            ShapeKind::Sphere,
            ShapeKind::GaussianBumps {
                bumps: random_bumps(4, 32, 32, 3),
            },
        ] {
            spec.shape = shape;
            let g = make_shape(&spec);
            for i in g.mask.indices() {
                let n = g.normals.get(i);
                let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
                assert_abs_diff_eq!(len, 1.0, epsilon = 1e-12);
                assert!(n[2] > 0.0);
            }
        }
    }

    #[test]
    fn flat_field_and_bump_apex() {
        let mut spec = SceneSpec::lambertian_sphere(17);
        spec.shape = ShapeKind::GaussianBumps { bumps: vec![] };
        let g = make_shape(&spec);
        assert_eq!(g.mask.count(), 17 * 17);
        for n in g.normals.data() {
            assert_eq!(*n, [0.0, 0.0, 1.0]);
        }
        spec.shape = ShapeKind::GaussianBumps {
            bumps: vec![GaussianBump {
                center: [8.0, 8.0],
                amplitude: 3.0,
                sigma: 2.5,
            }],
        };
        let g = make_shape(&spec);
        let apex = g.normals.get(8 * 17 + 8);
        assert_abs_diff_eq!(apex[2], 1.0, epsilon = 1e-12);
        // right of the apex the surface descends, so the normal tilts to +x
        assert!(g.normals.get(8 * 17 + 10)[0] > 0.0);
        // above the apex (smaller row, +y) the normal tilts to +y
        assert!(g.normals.get(6 * 17 + 8)[1] > 0.0);
    }

    #[test]
    fn lambertian_pixel_values() {
        let spec = SceneSpec::lambertian_sphere(33);
        let g = make_shape(&spec);
        let c = center_index(&spec);
        let img = render_image(&g, &spec, &UnitVector3::Z, 0).unwrap();
        assert_abs_diff_eq!(img.gray(c), 1.0, epsilon = 1e-12);
        let l = UnitVector3::new(0.6, 0.0, 0.8).unwrap();
        let img = render_image(&g, &spec, &l, 0).unwrap();
        assert_abs_diff_eq!(img.gray(c), 0.8, epsilon = 1e-12);
        assert_eq!(img.gray(0), 0.0);
    }

    #[test]
    fn back_facing_pixels_are_dark() {
        let spec = SceneSpec::lambertian_sphere(32);
        let g = make_shape(&spec);
        let l = direction(0.0, 0.0).unwrap(); // +x, grazing
        let img = render_image(&g, &spec, &l, 0).unwrap();
        for i in g.mask.indices() {
            if g.normals.get(i)[0] <= 0.0 {
                assert_eq!(img.gray(i), 0.0);
            }
        }
    }

    #[test]
    fn lower_hemisphere_light_rejected() {
        let spec = SceneSpec::lambertian_sphere(16);
        let g = make_shape(&spec);
        let l = UnitVector3::normalize(0.0, 0.3, -1.0).unwrap();
        assert!(matches!(render_image(&g, &spec, &l, 0), Err(Error::Hemisphere(_))));
    }

    #[test]
    fn lambertian_matches_direct_formula() {
        let mut spec = SceneSpec::lambertian_sphere(24);
        spec.albedo = Albedo::Uniform([0.9, 0.5, 0.3]);
        spec.shape = ShapeKind::GaussianBumps {
            bumps: random_bumps(3, 24, 24, 9),
        };
        let l = direction(60.0, 20.0).unwrap();
        let s = render_dataset(&spec, &[l]).unwrap();
        for i in s.mask.indices() {
            let n = s.normals_gt.get(i);
            let d = (n[0] * l.x() + n[1] * l.y() + n[2] * l.z()).max(0.0);
            let px = s.images[0].pixel(i);
            assert_abs_diff_eq!(px[0], 0.9 * d, epsilon = 1e-12);
            assert_abs_diff_eq!(px[1], 0.5 * d, epsilon = 1e-12);
            assert_abs_diff_eq!(px[2], 0.3 * d, epsilon = 1e-12);
        }
    }

    #[test]
    fn albedo_scaling_is_linear() {
        let mut spec = SceneSpec::lambertian_sphere(20);
        spec.albedo = Albedo::gray(0.8);
        let lights = [direction(70.0, 10.0).unwrap(), direction(120.0, -30.0).unwrap()];
        let a = render_dataset(&spec, &lights).unwrap();
        spec.albedo = spec.albedo.scaled(0.5);
        let b = render_dataset(&spec, &lights).unwrap();
        for (ia, ib) in a.images.iter().zip(&b.images) {
            for (va, vb) in ia.data().iter().zip(ib.data()) {
                assert_abs_diff_eq!(va * 0.5, *vb, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn cast_shadows_only_darken() {
        let mut spec = SceneSpec::lambertian_sphere(32);
        spec.shape = ShapeKind::GaussianBumps {
            bumps: random_bumps(5, 32, 32, 1),
        };
        spec.specular_strength = 0.3;
        spec.specular_exponent = 20.0;
        let lights = [direction(20.0, 10.0).unwrap(), direction(150.0, -40.0).unwrap()];
        let off = render_dataset(&spec, &lights).unwrap();
        spec.cast_shadows = true;
        let on = render_dataset(&spec, &lights).unwrap();
        let mut darkened = 0;
        for (a, b) in off.images.iter().zip(&on.images) {
            for (va, vb) in a.data().iter().zip(b.data()) {
                assert!(vb <= va);
                if vb < va {
                    darkened += 1;
                }
            }
        }
        assert!(darkened > 0, "grazing lights over bumps should cast shadows");
    }

    #[test]
    fn sphere_casts_no_shadow_on_itself() {
        let mut spec = SceneSpec::lambertian_sphere(32);
        let l = direction(30.0, 20.0).unwrap();
        let off = render_dataset(&spec, &[l]).unwrap();
        spec.cast_shadows = true;
        let on = render_dataset(&spec, &[l]).unwrap();
        assert_eq!(off.images, on.images);
    }

    #[test]
    fn deterministic_given_seed() {
        let mut spec = SceneSpec::lambertian_sphere(16);
        spec.noise_sigma = 0.05;
        spec.seed = 42;
        let lights = [UnitVector3::Z, direction(45.0, 0.0).unwrap(), direction(100.0, 30.0).unwrap()];
        let a = render_dataset(&spec, &lights).unwrap();
        let b = render_dataset(&spec, &lights).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.images.len(), 3);
        spec.seed = 43;
        let c = render_dataset(&spec, &lights).unwrap();
        assert_ne!(a.images, c.images);
        // noise stream of an image does not depend on the images before it
        let d = render_dataset(&SceneSpec { seed: 42, ..spec.clone() }, &lights[..1]).unwrap();
        assert_eq!(a.images[0], d.images[0]);
    }

    #[test]
    fn specular_adds_highlight() {
        let mut spec = SceneSpec::lambertian_sphere(33);
        spec.albedo = Albedo::gray(0.5);
        spec.specular_strength = 0.4;
        spec.specular_exponent = 10.0;
        let s = render_dataset(&spec, &[UnitVector3::Z]).unwrap();
        let c = center_index(&spec);
        assert_abs_diff_eq!(s.images[0].gray(c), 0.9, epsilon = 1e-12);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = SceneSpec::lambertian_sphere(4);
        assert!(render_dataset(&spec, &[UnitVector3::Z]).is_err());
        spec = SceneSpec::lambertian_sphere(16);
        spec.albedo = Albedo::gray(1.5);
        assert!(render_dataset(&spec, &[UnitVector3::Z]).is_err());
        spec = SceneSpec::lambertian_sphere(16);
        assert!(render_dataset(&spec, &[]).is_err());
    }
}
