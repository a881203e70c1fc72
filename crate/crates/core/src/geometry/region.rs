//! Spherical regions: half-spaces, convexes, and unions of convexes.
//!
//! The algebra here is deliberately one-sided where exactness is
//! expensive: `buffer` dilates each half-space independently (a superset
//! of the true dilation), `erode` contracts the same way (a subset of the
//! true erosion), and emptiness testing falls back to fixed-seed sampling
//! when the deterministic tests are inconclusive. Callers rely only on
//! those directions, never on exactness — except for single caps, where
//! both operations are exact and tested as such.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{
    angular_distance, GeometryError, SkyPosition, ARCSEC_PER_RAD, EPS_GEOM,
    MAX_SEPARATION_ARCSEC,
};

/// Seed for the emptiness-test sampling fallback. Fixed so verdicts are
/// reproducible across runs and machines.
const EMPTINESS_SEED: u64 = 0x5EED_0001;

/// Sample count for the emptiness fallback.
const EMPTINESS_SAMPLES: usize = 100_000;

/// Margin (radians) required before pairwise pruning certifies emptiness.
/// acos near +/-1 carries ~1e-8 rad of noise; 1e-7 keeps the verdict sound.
const PRUNE_MARGIN_RAD: f64 = 1e-7;

/// Three-valued emptiness verdict. `PossiblyEmpty` means neither the
/// deterministic witnesses nor the sampling fallback found an interior
/// point; such regions are treated as empty downstream, and the variant
/// itself is the diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Emptiness {
    NonEmpty,
    Empty,
    PossiblyEmpty,
}

impl Emptiness {
    /// Whether downstream code should treat the region as empty.
    pub fn treat_as_empty(self) -> bool {
        !matches!(self, Emptiness::NonEmpty)
    }
}

/// A spherical half-space: the set of unit vectors p with
/// dot(normal, p) >= offset. Equivalently a cap of opening angle
/// acos(offset) around `normal`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfSpace {
    normal: SkyPosition,
    offset: f64,
}

impl HalfSpace {
    pub fn new(normal: SkyPosition, offset: f64) -> Result<Self, GeometryError> {
        if !offset.is_finite() || offset.abs() > 1.0 + 1e-9 {
            return Err(GeometryError::OffsetOutOfRange(offset));
        }
        Ok(HalfSpace {
            normal,
            offset: offset.clamp(-1.0, 1.0),
        })
    }

    /// Cap of the given angular radius around `center`.
    pub fn cap(center: SkyPosition, radius_arcsec: f64) -> Result<Self, GeometryError> {
        if !radius_arcsec.is_finite() || !(0.0..=MAX_SEPARATION_ARCSEC).contains(&radius_arcsec) {
            return Err(GeometryError::RadiusOutOfRange(radius_arcsec));
        }
        Ok(HalfSpace {
            normal: center,
            offset: (radius_arcsec / ARCSEC_PER_RAD).cos(),
        })
    }

    pub fn normal(&self) -> &SkyPosition {
        &self.normal
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Opening angle acos(offset), in radians.
    pub fn opening_angle_rad(&self) -> f64 {
        self.offset.clamp(-1.0, 1.0).acos()
    }

    pub fn contains(&self, p: &SkyPosition) -> bool {
        self.normal.dot(p) >= self.offset - EPS_GEOM
    }

    /// Widens the cap by `fuzz_arcsec`, saturating at the full sphere.
    pub fn dilated(&self, fuzz_arcsec: f64) -> HalfSpace {
        let theta = self.opening_angle_rad() + fuzz_arcsec / ARCSEC_PER_RAD;
        HalfSpace {
            normal: self.normal,
            offset: theta.min(std::f64::consts::PI).cos(),
        }
    }

    /// Narrows the cap by `fuzz_arcsec`, saturating at a single point.
    pub fn eroded(&self, fuzz_arcsec: f64) -> HalfSpace {
        let theta = self.opening_angle_rad() - fuzz_arcsec / ARCSEC_PER_RAD;
        HalfSpace {
            normal: self.normal,
            offset: theta.max(0.0).cos(),
        }
    }
}

/// Intersection of half-spaces. An empty list is the full sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct Convex {
    halfspaces: Vec<HalfSpace>,
}

impl Convex {
    pub fn new(halfspaces: Vec<HalfSpace>) -> Self {
        Convex { halfspaces }
    }

    pub fn full_sphere() -> Self {
        Convex { halfspaces: Vec::new() }
    }

    pub fn halfspaces(&self) -> &[HalfSpace] {
        &self.halfspaces
    }

    pub fn contains(&self, p: &SkyPosition) -> bool {
        self.halfspaces.iter().all(|h| h.contains(p))
    }

    fn dilated(&self, fuzz_arcsec: f64) -> Convex {
        Convex {
            halfspaces: self.halfspaces.iter().map(|h| h.dilated(fuzz_arcsec)).collect(),
        }
    }

    fn eroded(&self, fuzz_arcsec: f64) -> Convex {
        Convex {
            halfspaces: self.halfspaces.iter().map(|h| h.eroded(fuzz_arcsec)).collect(),
        }
    }

    /// Points where the boundary circles of half-spaces `i` and `j` meet.
    /// Solving p = a*n1 + b*n2 + t*(n1 x n2) with p.n1 = c1, p.n2 = c2.
    fn boundary_intersections(&self, i: usize, j: usize) -> Vec<SkyPosition> {
        let (h1, h2) = (&self.halfspaces[i], &self.halfspaces[j]);
        let g = h1.normal.dot(&h2.normal);
        let denom = 1.0 - g * g;
        if denom < 1e-14 {
            return Vec::new(); // parallel or antiparallel boundary circles
        }
        let a = (h1.offset - h2.offset * g) / denom;
        let b = (h2.offset - h1.offset * g) / denom;
        let (n1, n2) = (&h1.normal, &h2.normal);
        let qx = a * n1.x() + b * n2.x();
        let qy = a * n1.y() + b * n2.y();
        let qz = a * n1.z() + b * n2.z();
        let t2 = 1.0 - (qx * qx + qy * qy + qz * qz);
        if t2 < -1e-12 {
            return Vec::new(); // circles do not intersect
        }
        let t = t2.max(0.0).sqrt();
        let (cx, cy, cz) = n1.cross(n2);
        let cross_norm = (cx * cx + cy * cy + cz * cz).sqrt();
        let (ux, uy, uz) = (cx / cross_norm, cy / cross_norm, cz / cross_norm);
        let mut out = Vec::with_capacity(2);
        for sign in [1.0, -1.0] {
            if let Ok(p) =
                SkyPosition::from_vector(qx + sign * t * ux, qy + sign * t * uy, qz + sign * t * uz)
            {
                out.push(p);
            }
        }
        out
    }

    /// Deterministic candidate interior points: cap centers, the mean
    /// normal direction, and all pairwise boundary-circle intersections.
    /// If the convex is non-empty with nonzero area, one of these lies
    /// inside except in adversarially degenerate configurations.
    fn witness_candidates(&self) -> Vec<SkyPosition> {
        let mut out: Vec<SkyPosition> = Vec::new();
        for h in &self.halfspaces {
            out.push(h.normal);
        }
        let (mut mx, mut my, mut mz) = (0.0, 0.0, 0.0);
        for h in &self.halfspaces {
            mx += h.normal.x();
            my += h.normal.y();
            mz += h.normal.z();
        }
        if let Ok(mean) = SkyPosition::from_vector(mx, my, mz) {
            out.push(mean);
        }
        for i in 0..self.halfspaces.len() {
            for j in (i + 1)..self.halfspaces.len() {
                out.extend(self.boundary_intersections(i, j));
            }
        }
        out
    }

    /// Decides whether any point of the sphere lies in the convex.
    ///
    /// Order of attack: pairwise cap-overlap pruning (certifies Empty),
    /// deterministic witness points (certify NonEmpty), then a fixed-seed
    /// uniform sample of 100 000 points. If all three are silent the
    /// verdict is PossiblyEmpty.
    pub fn emptiness(&self) -> Emptiness {
        if self.halfspaces.is_empty() {
            return Emptiness::NonEmpty;
        }
        let theta: Vec<f64> = self.halfspaces.iter().map(|h| h.opening_angle_rad()).collect();
        for i in 0..self.halfspaces.len() {
            for j in (i + 1)..self.halfspaces.len() {
                let d = angular_distance(&self.halfspaces[i].normal, &self.halfspaces[j].normal)
                    / ARCSEC_PER_RAD;
                if d > theta[i] + theta[j] + PRUNE_MARGIN_RAD {
                    return Emptiness::Empty; // caps too far apart to overlap
                }
            }
        }
        if self.witness_candidates().iter().any(|p| self.contains(p)) {
            return Emptiness::NonEmpty;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(EMPTINESS_SEED);
        for _ in 0..EMPTINESS_SAMPLES {
            if self.contains(&sample_point(&mut rng)) {
                return Emptiness::NonEmpty;
            }
        }
        Emptiness::PossiblyEmpty
    }

    /// A circle guaranteed to contain the whole convex: the tightest
    /// single cap among the half-spaces (the convex is a subset of each).
    /// Exact for single-cap convexes; the full sphere gets radius 648000".
    pub fn bounding_circle(&self) -> Result<(SkyPosition, f64), GeometryError> {
        if self.emptiness().treat_as_empty() {
            return Err(GeometryError::EmptyConvex);
        }
        match self
            .halfspaces
            .iter()
            .min_by(|a, b| a.offset.partial_cmp(&b.offset).unwrap().reverse())
        {
            Some(tightest) => Ok((
                tightest.normal,
                tightest.opening_angle_rad() * ARCSEC_PER_RAD,
            )),
            None => Ok((
                SkyPosition::from_vector(0.0, 0.0, 1.0).unwrap(),
                MAX_SEPARATION_ARCSEC,
            )),
        }
    }
}

/// Union of convexes. An empty list is the empty region.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    region_id: String,
    convexes: Vec<Convex>,
}

impl Region {
    pub fn new(region_id: impl Into<String>, convexes: Vec<Convex>) -> Self {
        Region { region_id: region_id.into(), convexes }
    }

    pub fn empty(region_id: impl Into<String>) -> Self {
        Region::new(region_id, Vec::new())
    }

    pub fn full_sphere(region_id: impl Into<String>) -> Self {
        Region::new(region_id, vec![Convex::full_sphere()])
    }

    pub fn cap(
        region_id: impl Into<String>,
        center: SkyPosition,
        radius_arcsec: f64,
    ) -> Result<Self, GeometryError> {
        Ok(Region::new(region_id, vec![Convex::new(vec![HalfSpace::cap(
            center,
            radius_arcsec,
        )?])]))
    }

    /// Rectangle in (ra, dec): four half-spaces — two polar caps for the
    /// dec bounds, two great circles for the ra bounds. The ra span must
    /// not exceed 180 degrees (two half-spaces cannot express more).
    pub fn strip(
        region_id: impl Into<String>,
        ra_min_deg: f64,
        ra_max_deg: f64,
        dec_min_deg: f64,
        dec_max_deg: f64,
    ) -> Result<Self, GeometryError> {
        for v in [ra_min_deg, ra_max_deg, dec_min_deg, dec_max_deg] {
            if !v.is_finite() {
                return Err(GeometryError::NonFinite);
            }
        }
        if !(-90.0..=90.0).contains(&dec_min_deg) || dec_max_deg > 90.0 || dec_min_deg >= dec_max_deg
        {
            return Err(GeometryError::DecOutOfRange(dec_max_deg.min(dec_min_deg)));
        }
        if !(0.0..360.0).contains(&ra_min_deg)
            || ra_max_deg <= ra_min_deg
            || ra_max_deg - ra_min_deg > 180.0
            || ra_max_deg > 360.0
        {
            return Err(GeometryError::RadiusOutOfRange(ra_max_deg - ra_min_deg));
        }
        let north = SkyPosition::from_vector(0.0, 0.0, 1.0).unwrap();
        let south = SkyPosition::from_vector(0.0, 0.0, -1.0).unwrap();
        // ra >= ra_min: half-space whose pole sits 90 degrees east of ra_min.
        let east_pole = SkyPosition::from_radec_deg((ra_min_deg + 90.0) % 360.0, 0.0)?;
        let west_pole = SkyPosition::from_radec_deg((ra_max_deg + 270.0) % 360.0, 0.0)?;
        Ok(Region::new(
            region_id,
            vec![Convex::new(vec![
                HalfSpace::new(north, dec_min_deg.to_radians().sin())?,
                HalfSpace::new(south, -dec_max_deg.to_radians().sin())?,
                HalfSpace::new(east_pole, 0.0)?,
                HalfSpace::new(west_pole, 0.0)?,
            ])],
        ))
    }

    /// Union as concatenation of convex lists.
    pub fn union(region_id: impl Into<String>, parts: &[Region]) -> Self {
        Region::new(
            region_id,
            parts.iter().flat_map(|r| r.convexes.iter().cloned()).collect(),
        )
    }

    pub fn region_id(&self) -> &str {
        &self.region_id
    }

    pub fn with_id(mut self, region_id: impl Into<String>) -> Self {
        self.region_id = region_id.into();
        self
    }

    pub fn convexes(&self) -> &[Convex] {
        &self.convexes
    }

    pub fn contains(&self, p: &SkyPosition) -> bool {
        self.convexes.iter().any(|c| c.contains(p))
    }

    /// Pointwise intersection: every (convex1, convex2) pair concatenated,
    /// convexes that test empty pruned. The result id is synthesized from
    /// the operand ids; rename with [`Region::with_id`] when it matters.
    pub fn intersect(&self, other: &Region) -> Region {
        let mut convexes = Vec::new();
        for c1 in &self.convexes {
            for c2 in &other.convexes {
                let mut halfspaces = c1.halfspaces.clone();
                halfspaces.extend(c2.halfspaces.iter().copied());
                let candidate = Convex::new(halfspaces);
                if !candidate.emptiness().treat_as_empty() {
                    convexes.push(candidate);
                }
            }
        }
        Region::new(format!("{}&{}", self.region_id, other.region_id), convexes)
    }

    /// Per-half-space dilation: a superset of the true dilation, exact for
    /// single caps. Keeps the source regionID.
    pub fn buffer(&self, fuzz_arcsec: f64) -> Result<Region, GeometryError> {
        if !fuzz_arcsec.is_finite() || fuzz_arcsec < 0.0 {
            return Err(GeometryError::NegativeFuzz(fuzz_arcsec));
        }
        Ok(Region::new(
            self.region_id.clone(),
            self.convexes.iter().map(|c| c.dilated(fuzz_arcsec)).collect(),
        ))
    }

    /// Per-half-space contraction: a subset of the true erosion, exact for
    /// single caps. Keeps the source regionID.
    pub fn erode(&self, fuzz_arcsec: f64) -> Result<Region, GeometryError> {
        if !fuzz_arcsec.is_finite() || fuzz_arcsec < 0.0 {
            return Err(GeometryError::NegativeFuzz(fuzz_arcsec));
        }
        Ok(Region::new(
            self.region_id.clone(),
            self.convexes.iter().map(|c| c.eroded(fuzz_arcsec)).collect(),
        ))
    }

    pub fn emptiness(&self) -> Emptiness {
        let mut verdict = Emptiness::Empty;
        for c in &self.convexes {
            match c.emptiness() {
                Emptiness::NonEmpty => return Emptiness::NonEmpty,
                Emptiness::PossiblyEmpty => verdict = Emptiness::PossiblyEmpty,
                Emptiness::Empty => {}
            }
        }
        verdict
    }

    pub fn is_empty(&self) -> bool {
        self.emptiness().treat_as_empty()
    }

    /// A circle containing every non-empty convex, or None for an empty
    /// region. Used as a cheap prefilter before exact intersection.
    pub fn bounding_circle(&self) -> Option<(SkyPosition, f64)> {
        let circles: Vec<(SkyPosition, f64)> = self
            .convexes
            .iter()
            .filter_map(|c| c.bounding_circle().ok())
            .collect();
        match circles.len() {
            0 => None,
            1 => Some(circles[0]),
            _ => {
                let (mut mx, mut my, mut mz) = (0.0, 0.0, 0.0);
                for (c, _) in &circles {
                    mx += c.x();
                    my += c.y();
                    mz += c.z();
                }
                let center = SkyPosition::from_vector(mx, my, mz)
                    .unwrap_or(circles[0].0);
                let radius = circles
                    .iter()
                    .map(|(c, r)| angular_distance(&center, c) + r)
                    .fold(0.0, f64::max)
                    .min(MAX_SEPARATION_ARCSEC);
                Some((center, radius))
            }
        }
    }
}

/// Uniform point on the sphere (area-preserving cylindrical sampling).
fn sample_point(rng: &mut ChaCha8Rng) -> SkyPosition {
    let z: f64 = rng.gen_range(-1.0..=1.0);
    let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let r = (1.0 - z * z).max(0.0).sqrt();
    SkyPosition::from_vector(r * phi.cos(), r * phi.sin(), z)
        .expect("cylindrical sample is always a unit vector")
}

/// Deterministic uniform sphere sample, shared by tests and the region
/// emptiness fallback's acceptance checks.
pub fn uniform_sphere_sample(seed: u64, count: usize) -> Vec<SkyPosition> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| sample_point(&mut rng)).collect()
}

// JSON form: { "regionID": string, "convexes": [ [ [nx,ny,nz,offset], ... ], ... ] }
// Numbers go through serde_json's shortest-round-trip float formatting, so
// the exact f64 values survive a parse back.

impl Serialize for Region {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let convexes: Vec<Vec<[f64; 4]>> = self
            .convexes
            .iter()
            .map(|c| {
                c.halfspaces
                    .iter()
                    .map(|h| [h.normal.x(), h.normal.y(), h.normal.z(), h.offset])
                    .collect()
            })
            .collect();
        let mut s = serializer.serialize_struct("Region", 2)?;
        s.serialize_field("regionID", &self.region_id)?;
        s.serialize_field("convexes", &convexes)?;
        s.end()
    }
}

impl<'de> Deserialize<'de> for Region {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            #[serde(rename = "regionID")]
            region_id: String,
            convexes: Vec<Vec<[f64; 4]>>,
        }
        let raw = Raw::deserialize(deserializer)?;
        let mut convexes = Vec::with_capacity(raw.convexes.len());
        for (ci, raw_convex) in raw.convexes.iter().enumerate() {
            let mut halfspaces = Vec::with_capacity(raw_convex.len());
            for (hi, &[nx, ny, nz, offset]) in raw_convex.iter().enumerate() {
                let normal = SkyPosition::from_near_unit_vector(nx, ny, nz).map_err(|e| {
                    D::Error::custom(format!(
                        "region {:?} convex {ci} halfspace {hi}: bad normal: {e}",
                        raw.region_id
                    ))
                })?;
                let hs = HalfSpace::new(normal, offset).map_err(|e| {
                    D::Error::custom(format!(
                        "region {:?} convex {ci} halfspace {hi}: {e}",
                        raw.region_id
                    ))
                })?;
                halfspaces.push(hs);
            }
            convexes.push(Convex::new(halfspaces));
        }
        Ok(Region::new(raw.region_id, convexes))
    }
}
