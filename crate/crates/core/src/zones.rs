//! Declination-zone spatial join: all object pairs within a radius.
//!
//! The sky is cut into horizontal zones of fixed angular height; an
//! object's neighbors within r <= zoneHeight can only sit in its own zone
//! or the two adjacent ones, inside a right-ascension window around its
//! own ra. The window uses the exact chord bound
//!
//!   sin²(Δra/2) <= sin²(r/2) / (cos d1 · cos d2)
//!
//! maximized over the candidate zone's declination span, plus a 1e-9 rad
//! slack — slightly wider than the classic r/cos(dec) rule of thumb,
//! which can clip true pairs at the window edge. Near the poles
//! (|dec| + r >= 89.9 degrees) the window gives way to a full-zone scan.

use std::collections::BTreeMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::catalog::{CatalogObject, CatalogSet};
use crate::geometry::{angular_distance, SkyPosition};

#[derive(Debug, Error)]
pub enum ZoneError {
    #[error("zone height {0} arcseconds must be positive and finite")]
    BadZoneHeight(f64),
    #[error("search radius {0} arcseconds must be positive and finite")]
    BadRadius(f64),
    #[error(
        "search radius {radius}\" exceeds the zone height {zone_height}\"; \
         rebuild the index with a zone height of at least the radius"
    )]
    RadiusExceedsZoneHeight { radius: f64, zone_height: f64 },
}

/// Declination above which (counting the search radius) the ra window is
/// abandoned for a full-zone scan.
const POLAR_FALLBACK_DEG: f64 = 89.9;

/// Additive slack on the ra window, in radians.
const WINDOW_SLACK_RAD: f64 = 1e-9;

struct Entry<'a> {
    ra: f64,
    position: SkyPosition,
    obj: &'a CatalogObject,
}

/// Objects bucketed by declination zone, each zone sorted by ra.
pub struct ZoneIndex<'a> {
    zone_height_arcsec: f64,
    zone_height_deg: f64,
    zones: BTreeMap<i64, Vec<Entry<'a>>>,
}

/// zoneID = floor((dec + 90°) / zoneHeight).
fn zone_id(dec_deg: f64, zone_height_deg: f64) -> i64 {
    ((dec_deg + 90.0) / zone_height_deg).floor() as i64
}

impl<'a> ZoneIndex<'a> {
    /// Buckets every object of the catalog set. Deterministic: zones are
    /// keyed in order and entries sorted by (ra, runID, objectID).
    pub fn build(catalog: &'a CatalogSet, zone_height_arcsec: f64) -> Result<Self, ZoneError> {
        if !zone_height_arcsec.is_finite() || zone_height_arcsec <= 0.0 {
            return Err(ZoneError::BadZoneHeight(zone_height_arcsec));
        }
        let zone_height_deg = zone_height_arcsec / 3600.0;
        let mut zones: BTreeMap<i64, Vec<Entry<'a>>> = BTreeMap::new();
        for obj in catalog.objects() {
            zones
                .entry(zone_id(obj.dec_deg(), zone_height_deg))
                .or_default()
                .push(Entry { ra: obj.ra_deg(), position: *obj.position(), obj });
        }
        for entries in zones.values_mut() {
            entries.sort_by(|a, b| {
                a.ra
                    .partial_cmp(&b.ra)
                    .unwrap()
                    .then_with(|| a.obj.run_id().cmp(b.obj.run_id()))
                    .then_with(|| a.obj.object_id().cmp(&b.obj.object_id()))
            });
        }
        Ok(ZoneIndex { zone_height_arcsec, zone_height_deg, zones })
    }

    pub fn zone_height_arcsec(&self) -> f64 {
        self.zone_height_arcsec
    }

    pub fn zone_count(&self) -> usize {
        self.zones.len()
    }

    pub fn len(&self) -> usize {
        self.zones.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.zones.is_empty()
    }

    /// Zone populations, for diagnostics.
    pub fn zone_populations(&self) -> BTreeMap<i64, usize> {
        self.zones.iter().map(|(&z, v)| (z, v.len())).collect()
    }

    /// Every directed pair of distinct objects with separation <= radius,
    /// same-run pairs included. Each unordered pair appears exactly twice,
    /// once per direction. Requires radius <= zoneHeight so that adjacent
    /// zones cover the search circle.
    pub fn neighbors_within(
        &self,
        radius_arcsec: f64,
    ) -> Result<Vec<(&'a CatalogObject, &'a CatalogObject, f64)>, ZoneError> {
        if !radius_arcsec.is_finite() || radius_arcsec <= 0.0 {
            return Err(ZoneError::BadRadius(radius_arcsec));
        }
        if radius_arcsec > self.zone_height_arcsec {
            return Err(ZoneError::RadiusExceedsZoneHeight {
                radius: radius_arcsec,
                zone_height: self.zone_height_arcsec,
            });
        }
        let zone_ids: Vec<i64> = self.zones.keys().copied().collect();
        let per_zone: Vec<Vec<_>> = zone_ids
            .par_iter()
            .map(|&z| self.scan_zone(z, radius_arcsec))
            .collect();
        Ok(per_zone.into_iter().flatten().collect())
    }

    /// All pairs anchored at the objects of zone `z`.
    fn scan_zone(
        &self,
        z: i64,
        radius_arcsec: f64,
    ) -> Vec<(&'a CatalogObject, &'a CatalogObject, f64)> {
        let anchors = &self.zones[&z];
        let radius_deg = radius_arcsec / 3600.0;
        let mut out = Vec::new();
        for anchor in anchors {
            for dz in -1..=1i64 {
                let Some(candidates) = self.zones.get(&(z + dz)) else { continue };
                let window =
                    self.ra_window_deg(anchor.obj.dec_deg(), z + dz, radius_deg);
                self.scan_candidates(anchor, candidates, window, radius_arcsec, &mut out);
            }
        }
        out
    }

    /// Half-width (degrees) of the ra interval that can contain a
    /// neighbor within `radius_deg` of an anchor at `anchor_dec`, for
    /// candidates anywhere in zone `z`. Returns >= 180 to mean "whole
    /// zone".
    fn ra_window_deg(&self, anchor_dec: f64, z: i64, radius_deg: f64) -> f64 {
        if anchor_dec.abs() + radius_deg >= POLAR_FALLBACK_DEG {
            return 360.0; // polar fallback: scan the whole zone
        }
        let lo = (z as f64 * self.zone_height_deg - 90.0).max(-90.0);
        let hi = (lo + self.zone_height_deg).min(90.0);
        let cos_zone = lo.to_radians().cos().min(hi.to_radians().cos());
        let cos_anchor = anchor_dec.to_radians().cos();
        let denom = cos_anchor * cos_zone;
        if denom <= 0.0 {
            return 360.0;
        }
        let s = (radius_deg.to_radians() / 2.0).sin();
        let ratio = s * s / denom;
        if ratio >= 1.0 {
            return 360.0;
        }
        (2.0 * ratio.sqrt().asin() + WINDOW_SLACK_RAD).to_degrees()
    }

    fn scan_candidates(
        &self,
        anchor: &Entry<'a>,
        candidates: &[Entry<'a>],
        window_deg: f64,
        radius_arcsec: f64,
        out: &mut Vec<(&'a CatalogObject, &'a CatalogObject, f64)>,
    ) {
        let mut emit = |slice: &[Entry<'a>]| {
            for cand in slice {
                if std::ptr::eq(anchor.obj, cand.obj) {
                    continue;
                }
                let sep = angular_distance(&anchor.position, &cand.position);
                if sep <= radius_arcsec {
                    out.push((anchor.obj, cand.obj, sep));
                }
            }
        };
        if window_deg >= 180.0 {
            emit(candidates);
            return;
        }
        let (lo, hi) = (anchor.ra - window_deg, anchor.ra + window_deg);
        let range = |slice: &'_ [Entry<'a>], lo: f64, hi: f64| {
            let start = slice.partition_point(|e| e.ra < lo);
            let end = slice.partition_point(|e| e.ra <= hi);
            (start, end)
        };
        if lo < 0.0 {
            let (s1, e1) = range(candidates, lo + 360.0, 360.0);
            emit(&candidates[s1..e1]);
            let (s2, e2) = range(candidates, 0.0, hi);
            emit(&candidates[s2..e2]);
        } else if hi >= 360.0 {
            let (s1, e1) = range(candidates, lo, 360.0);
            emit(&candidates[s1..e1]);
            let (s2, e2) = range(candidates, 0.0, hi - 360.0);
            emit(&candidates[s2..e2]);
        } else {
            let (s, e) = range(candidates, lo, hi);
            emit(&candidates[s..e]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::CatalogObject;
    use crate::oracle::{brute_force_neighbors, NeighborPair};
    use crate::geometry::uniform_sphere_sample;

    fn catalog_from(positions: &[(&str, u64, f64, f64)]) -> CatalogSet {
        let mut set = CatalogSet::new();
        for &(run, id, ra, dec) in positions {
            set.ensure_run(run, &[]).unwrap();
            set.insert(CatalogObject::new(run, id, ra, dec, Some(0.1), vec![]).unwrap()).unwrap();
        }
        set
    }

    fn uniform_catalog(seed: u64, n: usize) -> CatalogSet {
        let mut set = CatalogSet::new();
        set.ensure_run("U", &[]).unwrap();
        for (i, p) in uniform_sphere_sample(seed, n).into_iter().enumerate() {
            let (ra, dec) = p.to_radec_deg();
            set.insert(CatalogObject::new("U", (i + 1) as u64, ra, dec, Some(0.1), vec![]).unwrap())
                .unwrap();
        }
        set
    }

    fn as_pairs(found: Vec<(&CatalogObject, &CatalogObject, f64)>) -> Vec<NeighborPair> {
        let mut pairs: Vec<NeighborPair> = found
            .into_iter()
            .map(|(a, b, sep)| NeighborPair {
                run1: a.run_id().to_string(),
                id1: a.object_id(),
                run2: b.run_id().to_string(),
                id2: b.object_id(),
                separation_arcsec: sep,
            })
            .collect();
        pairs.sort_by(|a, b| {
            (&a.run1, a.id1, &a.run2, a.id2).cmp(&(&b.run1, b.id1, &b.run2, b.id2))
        });
        pairs
    }

    #[test]
    fn empty_catalog_builds_empty_index() {
        let set = CatalogSet::new();
        let idx = ZoneIndex::build(&set, 3600.0).unwrap();
        assert_eq!(idx.zone_count(), 0);
        assert!(idx.neighbors_within(60.0).unwrap().is_empty());
    }

    #[test]
    fn south_pole_lands_in_zone_zero() {
        let set = catalog_from(&[("A", 1, 15.0, -90.0)]);
        let idx = ZoneIndex::build(&set, 3600.0).unwrap();
        assert_eq!(idx.zone_populations().into_iter().collect::<Vec<_>>(), vec![(0, 1)]);
    }

    #[test]
    fn zone_populations_partition_the_catalog() {
        let set = uniform_catalog(3, 1000);
        let idx = ZoneIndex::build(&set, 3600.0).unwrap();
        assert_eq!(idx.len(), 1000);
        assert_eq!(idx.zone_populations().values().sum::<usize>(), 1000);
    }

    #[test]
    fn close_pair_found_far_pair_not() {
        // 0.5 arcsec apart at the equator.
        let set = catalog_from(&[("A", 1, 20.0, 0.0), ("B", 2, 20.0 + 0.5 / 3600.0, 0.0)]);
        let idx = ZoneIndex::build(&set, 30.0).unwrap();
        let pairs = idx.neighbors_within(1.0).unwrap();
        assert_eq!(pairs.len(), 2, "both directions expected");

        let set = catalog_from(&[("A", 1, 20.0, 0.0), ("B", 2, 20.0 + 2.0 / 3600.0, 0.0)]);
        let idx = ZoneIndex::build(&set, 30.0).unwrap();
        assert!(idx.neighbors_within(1.0).unwrap().is_empty());
    }

    #[test]
    fn wraparound_pair_is_found() {
        let set = catalog_from(&[("A", 1, 359.9999, 0.0), ("B", 2, 0.0001, 0.0)]);
        let idx = ZoneIndex::build(&set, 30.0).unwrap();
        let pairs = as_pairs(idx.neighbors_within(1.0).unwrap());
        assert_eq!(pairs.len(), 2, "pair straddling ra=0 must be found");
        assert!((pairs[0].separation_arcsec - 0.72).abs() < 1e-3);
    }

    #[test]
    fn radius_above_zone_height_is_rejected() {
        let set = catalog_from(&[("A", 1, 10.0, 0.0)]);
        let idx = ZoneIndex::build(&set, 30.0).unwrap();
        let err = idx.neighbors_within(31.0).unwrap_err().to_string();
        assert!(err.contains("rebuild the index"), "{err}");
        assert!(ZoneIndex::build(&set, 0.0).is_err());
        assert!(idx.neighbors_within(0.0).is_err());
    }

    #[test]
    fn matches_oracle_on_uniform_sky() {
        let set = uniform_catalog(41, 2000);
        // 2000 uniform points: expected nearest-neighbor distance ~2.6
        // degrees, so use a large radius to get real pair counts.
        let radius = 4.0 * 3600.0;
        let idx = ZoneIndex::build(&set, radius).unwrap();
        let got = as_pairs(idx.neighbors_within(radius).unwrap());
        let want = brute_force_neighbors(&set, radius);
        assert!(!want.is_empty(), "oracle found nothing; test is vacuous");
        assert_eq!(got, want);
    }

    #[test]
    fn matches_oracle_on_clustered_sky() {
        // Dense clumps plus polar clusters: stresses the window math and
        // the polar fallback.
        let mut set = CatalogSet::new();
        set.ensure_run("C", &[]).unwrap();
        let mut id = 0u64;
        let anchors =
            [(0.01, 0.0), (180.0, 89.95), (12.0, -89.97), (359.999, 45.0), (90.0, -30.0)];
        for (i, &(ra, dec)) in anchors.iter().enumerate() {
            let center = SkyPosition::from_radec_deg(ra, dec).unwrap();
            for p in uniform_sphere_sample(100 + i as u64, 60) {
                // Pull the uniform point toward the anchor: keep direction,
                // shrink distance to within ~80 arcsec.
                let d = angular_distance(&center, &p);
                let frac = 80.0 / d.max(80.0);
                let q = if frac < 1.0 {
                    let t = frac;
                    SkyPosition::from_vector(
                        center.x() * (1.0 - t) + p.x() * t,
                        center.y() * (1.0 - t) + p.y() * t,
                        center.z() * (1.0 - t) + p.z() * t,
                    )
                    .unwrap()
                } else {
                    p
                };
                id += 1;
                let (qra, qdec) = q.to_radec_deg();
                set.insert(CatalogObject::new("C", id, qra, qdec, Some(0.1), vec![]).unwrap())
                    .unwrap();
            }
        }
        for radius in [1.0, 30.0, 300.0] {
            let idx = ZoneIndex::build(&set, 300.0).unwrap();
            let got = as_pairs(idx.neighbors_within(radius).unwrap());
            let want = brute_force_neighbors(&set, radius);
            assert_eq!(got, want, "radius {radius}");
        }
    }

    #[test]
    fn output_is_invariant_under_input_permutation() {
        let positions: Vec<(String, u64, f64, f64)> = uniform_sphere_sample(77, 300)
            .into_iter()
            .enumerate()
            .map(|(i, p)| {
                let (ra, dec) = p.to_radec_deg();
                ("P".to_string(), (i + 1) as u64, ra, dec)
            })
            .collect();
        let build = |order: &[usize]| {
            let mut set = CatalogSet::new();
            set.ensure_run("P", &[]).unwrap();
            for &i in order {
                let (ref run, id, ra, dec) = positions[i];
                set.insert(CatalogObject::new(run, id, ra, dec, Some(0.1), vec![]).unwrap())
                    .unwrap();
            }
            let idx = ZoneIndex::build(&set, 7200.0).unwrap();
            as_pairs(idx.neighbors_within(7200.0).unwrap())
        };
        let forward: Vec<usize> = (0..positions.len()).collect();
        let mut reversed = forward.clone();
        reversed.reverse();
        assert_eq!(build(&forward), build(&reversed));
    }
}
