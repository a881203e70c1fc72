//! Points on the unit sphere and angular distances.

use super::{GeometryError, ARCSEC_PER_RAD};

/// A point on the celestial sphere, stored as a unit 3-vector.
///
/// x points at (ra=0, dec=0), y at (ra=90, dec=0), z at the north pole.
/// The fields are private so every value in circulation is normalized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkyPosition {
    x: f64,
    y: f64,
    z: f64,
}

impl SkyPosition {
    /// Builds a position from equatorial coordinates in degrees.
    ///
    /// Right ascension is reduced modulo 360; declination must lie in
    /// [-90, 90].
    pub fn from_radec_deg(ra_deg: f64, dec_deg: f64) -> Result<Self, GeometryError> {
        if !ra_deg.is_finite() || !dec_deg.is_finite() {
            return Err(GeometryError::NonFinite);
        }
        if !(-90.0..=90.0).contains(&dec_deg) {
            return Err(GeometryError::DecOutOfRange(dec_deg));
        }
        let ra = ra_deg.to_radians();
        let dec = dec_deg.to_radians();
        let (sin_ra, cos_ra) = ra.sin_cos();
        let (sin_dec, cos_dec) = dec.sin_cos();
        Ok(SkyPosition {
            x: cos_dec * cos_ra,
            y: cos_dec * sin_ra,
            z: sin_dec,
        })
    }

    /// Normalizes an arbitrary 3-vector onto the sphere.
    pub fn from_vector(x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let norm = (x * x + y * y + z * z).sqrt();
        if norm < 1e-300 {
            return Err(GeometryError::ZeroVector(norm));
        }
        Ok(SkyPosition {
            x: x / norm,
            y: y / norm,
            z: z / norm,
        })
    }

    /// Accepts a vector that is already unit-length (within 2e-12) without
    /// renormalizing, so serialized positions round-trip bit-exactly;
    /// anything farther from unit is normalized as usual.
    pub(crate) fn from_near_unit_vector(x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let norm2 = x * x + y * y + z * z;
        if (norm2 - 1.0).abs() <= 4e-12 {
            Ok(SkyPosition { x, y, z })
        } else {
            SkyPosition::from_vector(x, y, z)
        }
    }

    /// Recovers (ra, dec) in degrees, with ra in [0, 360).
    pub fn to_radec_deg(&self) -> (f64, f64) {
        let ra = self.y.atan2(self.x).to_degrees();
        let ra = if ra < 0.0 { ra + 360.0 } else { ra };
        // atan2(-0.0, x) yields -0.0 -> 360.0 after the shift; fold it back.
        let ra = if ra >= 360.0 { 0.0 } else { ra };
        let dec = self.z.clamp(-1.0, 1.0).asin().to_degrees();
        (ra, dec)
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn dot(&self, other: &SkyPosition) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(&self, other: &SkyPosition) -> (f64, f64, f64) {
        (
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )
    }

    /// Moves the point `distance_arcsec` along the great circle whose
    /// initial bearing is `bearing_rad` (0 = toward north, pi/2 = toward
    /// increasing ra). Used by the scenario generator to jitter and to
    /// offset injected objects by exact angular amounts.
    pub fn offset_by(&self, bearing_rad: f64, distance_arcsec: f64) -> SkyPosition {
        let d = distance_arcsec / ARCSEC_PER_RAD;
        // Local orthonormal frame: east and north tangent vectors.
        let (ra, dec) = self.to_radec_deg();
        let ra = ra.to_radians();
        let dec = dec.to_radians();
        let (sin_ra, cos_ra) = ra.sin_cos();
        let (sin_dec, cos_dec) = dec.sin_cos();
        let east = (-sin_ra, cos_ra, 0.0);
        let north = (-sin_dec * cos_ra, -sin_dec * sin_ra, cos_dec);
        let (sin_b, cos_b) = bearing_rad.sin_cos();
        // Tangent direction of travel.
        let tx = north.0 * cos_b + east.0 * sin_b;
        let ty = north.1 * cos_b + east.1 * sin_b;
        let tz = north.2 * cos_b + east.2 * sin_b;
        let (sin_d, cos_d) = d.sin_cos();
        SkyPosition::from_vector(
            self.x * cos_d + tx * sin_d,
            self.y * cos_d + ty * sin_d,
            self.z * cos_d + tz * sin_d,
        )
        .expect("rotating a unit vector keeps it normalizable")
    }
}

/// Angular separation between two positions, in arcseconds.
///
/// Computed as atan2(|a x b|, a . b), which stays fully conditioned at
/// both tiny separations (where acos of a dot product loses ~half the
/// mantissa) and near-antipodal ones.
pub fn angular_distance(a: &SkyPosition, b: &SkyPosition) -> f64 {
    let (cx, cy, cz) = a.cross(b);
    let cross_norm = (cx * cx + cy * cy + cz * cz).sqrt();
    cross_norm.atan2(a.dot(b)) * ARCSEC_PER_RAD
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::MAX_SEPARATION_ARCSEC;

    fn haversine_arcsec(ra1: f64, dec1: f64, ra2: f64, dec2: f64) -> f64 {
        // Independent oracle: classic haversine on degree inputs.
        let (ra1, dec1) = (ra1.to_radians(), dec1.to_radians());
        let (ra2, dec2) = (ra2.to_radians(), dec2.to_radians());
        let sd = ((dec2 - dec1) / 2.0).sin();
        let sr = ((ra2 - ra1) / 2.0).sin();
        let h = sd * sd + dec1.cos() * dec2.cos() * sr * sr;
        2.0 * h.sqrt().min(1.0).asin() * ARCSEC_PER_RAD
    }

    #[test]
    fn radec_roundtrip() {
        let cases = [
            (0.0, 0.0),
            (359.999999, -89.9),
            (180.0, 45.0),
            (12.34567, -0.000123),
            (90.0, 90.0),
            (270.0, -90.0),
        ];
        for &(ra, dec) in &cases {
            let p = SkyPosition::from_radec_deg(ra, dec).unwrap();
            let (ra2, dec2) = p.to_radec_deg();
            let d = angular_distance(&p, &SkyPosition::from_radec_deg(ra2, dec2).unwrap());
            assert!(d < 1e-9, "roundtrip moved ({ra},{dec}) by {d} arcsec");
        }
    }

    #[test]
    fn ra_wraps_into_range() {
        let p = SkyPosition::from_radec_deg(360.0, 10.0).unwrap();
        let (ra, _) = p.to_radec_deg();
        assert!((0.0..360.0).contains(&ra), "ra {ra} escaped [0,360)");
        let q = SkyPosition::from_radec_deg(-30.0, 0.0).unwrap();
        let (ra, _) = q.to_radec_deg();
        assert!((ra - 330.0).abs() < 1e-9, "ra -30 should map to 330, got {ra}");
    }

    #[test]
    fn dec_out_of_range_rejected() {
        assert!(SkyPosition::from_radec_deg(0.0, 90.0001).is_err());
        assert!(SkyPosition::from_radec_deg(0.0, -91.0).is_err());
        assert!(SkyPosition::from_radec_deg(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn antipodal_distance_is_half_turn() {
        let a = SkyPosition::from_radec_deg(10.0, 20.0).unwrap();
        let b = SkyPosition::from_radec_deg(190.0, -20.0).unwrap();
        let d = angular_distance(&a, &b);
        assert!(
            (d - MAX_SEPARATION_ARCSEC).abs() < 1e-6,
            "antipodal distance {d} != {MAX_SEPARATION_ARCSEC}"
        );
    }

    #[test]
    fn tiny_separation_keeps_precision() {
        // 0.000278 degrees of ra at the equator is very nearly 1.0008 arcsec.
        let a = SkyPosition::from_radec_deg(10.0, 0.0).unwrap();
        let b = SkyPosition::from_radec_deg(10.000278, 0.0).unwrap();
        let d = angular_distance(&a, &b);
        assert!((d - 1.0008).abs() < 1e-4, "got {d}");
        let oracle = haversine_arcsec(10.0, 0.0, 10.000278, 0.0);
        assert!((d - oracle).abs() < 1e-9, "atan2 {d} vs haversine {oracle}");
    }

    #[test]
    fn distance_matches_haversine_over_grid() {
        let mut worst = 0.0_f64;
        for i in 0..20 {
            for j in 0..20 {
                let (ra1, dec1) = (i as f64 * 18.3, (i as f64 - 10.0) * 8.9);
                let (ra2, dec2) = (j as f64 * 17.1, (j as f64 - 10.0) * 8.3);
                let a = SkyPosition::from_radec_deg(ra1, dec1).unwrap();
                let b = SkyPosition::from_radec_deg(ra2, dec2).unwrap();
                let d = angular_distance(&a, &b);
                let o = haversine_arcsec(ra1, dec1, ra2, dec2);
                worst = worst.max((d - o).abs());
            }
        }
        assert!(worst < 1e-6, "worst deviation from haversine {worst} arcsec");
    }

    #[test]
    fn offset_by_travels_requested_distance() {
        let p = SkyPosition::from_radec_deg(33.0, 57.0).unwrap();
        for k in 0..8 {
            let bearing = k as f64 * std::f64::consts::FRAC_PI_4;
            for dist in [0.1, 1.0, 30.0, 3600.0, 180_000.0] {
                let q = p.offset_by(bearing, dist);
                let d = angular_distance(&p, &q);
                assert!(
                    (d - dist).abs() < 1e-6 * dist.max(1.0),
                    "bearing {bearing}: asked {dist}, moved {d}"
                );
            }
        }
    }

    #[test]
    fn offset_due_north_increases_dec() {
        let p = SkyPosition::from_radec_deg(120.0, 10.0).unwrap();
        let q = p.offset_by(0.0, 3600.0);
        let (_, dec) = q.to_radec_deg();
        assert!((dec - 11.0).abs() < 1e-9, "1 degree north of dec 10 -> {dec}");
    }

    #[test]
    fn from_vector_normalizes() {
        let p = SkyPosition::from_vector(0.0, 0.0, 2.5).unwrap();
        let (_, dec) = p.to_radec_deg();
        assert!((dec - 90.0).abs() < 1e-12);
        assert!(SkyPosition::from_vector(0.0, 0.0, 0.0).is_err());
    }
}
