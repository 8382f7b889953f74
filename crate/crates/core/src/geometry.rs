//! Direction math on the upper hemisphere.
//!
//! Spherical convention: elevation `θ` tilts toward `+y`, azimuth `φ`
//! sweeps from `+x` through `+z` (the view axis) to `-x`:
//!
//! ```text
//! l = (cos θ · cos φ, sin θ, cos θ · sin φ)
//! ```
//!
//! With `φ ∈ [0°, 180°]` and `θ ∈ [-90°, 90°]` this covers exactly the
//! `z ≥ 0` hemisphere.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `|v|² - 1` accepted by [`UnitVector3::new`].
pub const UNIT_TOLERANCE: f64 = 1e-9;
/// How far below `z = 0` a direction may sit and still count as upper hemisphere.
pub const HEMISPHERE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct UnitVector3([f64; 3]);

impl UnitVector3 {
    pub const Z: UnitVector3 = UnitVector3([0.0, 0.0, 1.0]);

    /// Wraps components that already form a unit vector.
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        let n2 = x * x + y * y + z * z;
        if !n2.is_finite() || (n2 - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::Input(format!(
                "({x}, {y}, {z}) is not unit length (|v|^2 = {n2})"
            )));
        }
        Ok(UnitVector3([x, y, z]))
    }

    /// Normalizes an arbitrary nonzero vector.
    pub fn normalize(x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (x * x + y * y + z * z).sqrt();
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::Input(format!("cannot normalize ({x}, {y}, {z})")));
        }
        Ok(UnitVector3([x / n, y / n, z / n]))
    }

    pub fn x(&self) -> f64 {
        self.0[0]
    }

    pub fn y(&self) -> f64 {
        self.0[1]
    }

    pub fn z(&self) -> f64 {
        self.0[2]
    }

    pub fn as_array(&self) -> [f64; 3] {
        self.0
    }

    pub fn dot(&self, other: &UnitVector3) -> f64 {
        self.0[0] * other.0[0] + self.0[1] * other.0[1] + self.0[2] * other.0[2]
    }

    pub fn is_upper_hemisphere(&self) -> bool {
        self.0[2] >= -HEMISPHERE_SLACK
    }

    pub(crate) fn require_upper(&self) -> Result<()> {
        if self.is_upper_hemisphere() {
            Ok(())
        } else {
            Err(Error::Hemisphere(self.0))
        }
    }

    pub fn negate(&self) -> UnitVector3 {
        UnitVector3([-self.0[0], -self.0[1], -self.0[2]])
    }
}

impl TryFrom<[f64; 3]> for UnitVector3 {
    type Error = Error;

    fn try_from(v: [f64; 3]) -> Result<Self> {
        UnitVector3::new(v[0], v[1], v[2])
    }
}

impl From<UnitVector3> for [f64; 3] {
    fn from(v: UnitVector3) -> Self {
        v.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphericalCoord {
    azimuth_deg: f64,
    elevation_deg: f64,
}

impl SphericalCoord {
    pub fn new(azimuth_deg: f64, elevation_deg: f64) -> Result<Self> {
        if !azimuth_deg.is_finite() || !(0.0..=180.0).contains(&azimuth_deg) {
            return Err(Error::Range(format!(
                "azimuth {azimuth_deg} outside [0, 180] degrees"
            )));
        }
        if !elevation_deg.is_finite() || !(-90.0..=90.0).contains(&elevation_deg) {
            return Err(Error::Range(format!(
                "elevation {elevation_deg} outside [-90, 90] degrees"
            )));
        }
        Ok(SphericalCoord {
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
}

pub fn spherical_to_cartesian(s: SphericalCoord) -> UnitVector3 {
    let (sin_t, cos_t) = s.elevation_deg.to_radians().sin_cos();
    let (sin_p, cos_p) = s.azimuth_deg.to_radians().sin_cos();
    // sin/cos of in-range angles are already unit length to rounding.
    let x = cos_t * cos_p;
    let y = sin_t;
    let z = (cos_t * sin_p).max(0.0);
    UnitVector3([x, y, z])
}

/// Convenience wrapper: validate the angles and convert in one call.
pub fn direction(azimuth_deg: f64, elevation_deg: f64) -> Result<UnitVector3> {
    Ok(spherical_to_cartesian(SphericalCoord::new(
        azimuth_deg,
        elevation_deg,
    )?))
}

pub fn cartesian_to_spherical(v: UnitVector3) -> Result<SphericalCoord> {
    v.require_upper()?;
    let elevation = v.y().clamp(-1.0, 1.0).asin().to_degrees();
    let mut azimuth = v.z().max(0.0).atan2(v.x()).to_degrees();
    if azimuth < 0.0 {
        azimuth = 0.0;
    }
    Ok(SphericalCoord {
        azimuth_deg: azimuth.min(180.0),
        elevation_deg: elevation.clamp(-90.0, 90.0),
    })
}

/// Angle between two unit vectors in degrees, in `[0, 180]`.
///
/// Evaluated as `2·atan2(|a-b|, |a+b|)`, which equals `acos(clamp(a·b))`
/// but keeps full precision near 0° and 180°.
pub fn angle_between(a: &UnitVector3, b: &UnitVector3) -> f64 {
    let (mut d2, mut s2) = (0.0, 0.0);
    for i in 0..3 {
        let d = a.0[i] - b.0[i];
        let s = a.0[i] + b.0[i];
        d2 += d * d;
        s2 += s * s;
    }
    (2.0 * d2.sqrt().atan2(s2.sqrt())).to_degrees().clamp(0.0, 180.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn close(v: UnitVector3, e: [f64; 3], tol: f64) {
        for i in 0..3 {
            assert_abs_diff_eq!(v.as_array()[i], e[i], epsilon = tol);
        }
    }

    #[test]
    fn forward_examples() {
        close(direction(90.0, 0.0).unwrap(), [0.0, 0.0, 1.0], 1e-12);
        close(direction(0.0, 0.0).unwrap(), [1.0, 0.0, 0.0], 1e-12);
        close(direction(90.0, 30.0).unwrap(), [0.0, 0.5, 0.8660], 1e-4);
    }

    #[test]
    fn out_of_range_angles_rejected() {
        assert!(matches!(SphericalCoord::new(181.0, 0.0), Err(Error::Range(_))));
        assert!(matches!(SphericalCoord::new(-1.0, 0.0), Err(Error::Range(_))));
        assert!(matches!(SphericalCoord::new(10.0, 90.5), Err(Error::Range(_))));
        assert!(SphericalCoord::new(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn inverse_examples() {
        let s = cartesian_to_spherical(UnitVector3::Z).unwrap();
        assert_abs_diff_eq!(s.azimuth_deg(), 90.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.elevation_deg(), 0.0, epsilon = 1e-12);
        let s = cartesian_to_spherical(UnitVector3::new(1.0, 0.0, 0.0).unwrap()).unwrap();
        assert_abs_diff_eq!(s.azimuth_deg(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.elevation_deg(), 0.0, epsilon = 1e-12);
        let v = UnitVector3::normalize(0.0, 0.5, 0.8660).unwrap();
        let s = cartesian_to_spherical(v).unwrap();
        assert_abs_diff_eq!(s.azimuth_deg(), 90.0, epsilon = 1e-3);
        assert_abs_diff_eq!(s.elevation_deg(), 30.0, epsilon = 1e-3);
    }

    #[test]
    fn lower_hemisphere_rejected() {
        let v = UnitVector3::normalize(0.0, 0.0, -1.0).unwrap();
        assert!(matches!(cartesian_to_spherical(v), Err(Error::Hemisphere(_))));
    }

    #[test]
    fn angle_examples() {
        let a = UnitVector3::new(1.0, 0.0, 0.0).unwrap();
        let b = UnitVector3::new(0.0, 1.0, 0.0).unwrap();
        assert_abs_diff_eq!(angle_between(&a, &a), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(angle_between(&a, &b), 90.0, epsilon = 1e-12);
        let t = 10f64.to_radians();
        let c = UnitVector3::new(0.0, t.sin(), t.cos()).unwrap();
        assert_abs_diff_eq!(angle_between(&UnitVector3::Z, &c), 10.0, epsilon = 1e-6);
        assert_abs_diff_eq!(angle_between(&a, &a.negate()), 180.0, epsilon = 1e-12);
    }

    #[test]
    fn non_unit_rejected() {
        assert!(UnitVector3::new(1.0, 1.0, 0.0).is_err());
        assert!(UnitVector3::normalize(0.0, 0.0, 0.0).is_err());
    }

    fn unit() -> impl Strategy<Value = UnitVector3> {
        (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)
            .prop_filter("nonzero", |(x, y, z)| x * x + y * y + z * z > 1e-3)
            .prop_map(|(x, y, z)| UnitVector3::normalize(x, y, z).unwrap())
    }

    proptest! {
        #[test]
        fn round_trip(az in 0.0f64..=180.0, el in -90.0f64..=90.0) {
            let v = direction(az, el).unwrap();
            prop_assume!(v.z() > 1e-6);
            let back = spherical_to_cartesian(cartesian_to_spherical(v).unwrap());
            for i in 0..3 {
                prop_assert!((back.as_array()[i] - v.as_array()[i]).abs() < 1e-6);
            }
        }

        #[test]
        fn angle_symmetric_and_triangle(a in unit(), b in unit(), c in unit()) {
            let ab = angle_between(&a, &b);
            prop_assert!((ab - angle_between(&b, &a)).abs() < 1e-12);
            prop_assert!((0.0..=180.0).contains(&ab));
            prop_assert!(angle_between(&a, &c) <= ab + angle_between(&b, &c) + 1e-9);
        }

        #[test]
        fn angle_matches_acos(a in unit(), b in unit()) {
            let acos = a.dot(&b).clamp(-1.0, 1.0).acos().to_degrees();
            prop_assert!((angle_between(&a, &b) - acos).abs() < 1e-5);
        }
    }
}
