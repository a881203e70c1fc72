//! Randomized properties over the geometry and matching layers.

use proptest::prelude::*;

use skymatch_core::catalog::{CatalogObject, CatalogSet, ClassificationDistance};
use skymatch_core::geometry::{angular_distance, uniform_sphere_sample, Region, SkyPosition};
use skymatch_core::matching::{sort_canonical, MatchRecord, Verdict};
use skymatch_core::oracle::brute_force_neighbors;
use skymatch_core::zones::ZoneIndex;

fn radec() -> impl Strategy<Value = (f64, f64)> {
    (0.0..360.0f64, -89.99..89.99f64)
}

proptest! {
    #[test]
    fn angular_distance_is_symmetric(a in radec(), b in radec()) {
        let pa = SkyPosition::from_radec_deg(a.0, a.1).unwrap();
        let pb = SkyPosition::from_radec_deg(b.0, b.1).unwrap();
        // Bitwise: |a x b| and a . b are both symmetric under swap.
        prop_assert_eq!(angular_distance(&pa, &pb), angular_distance(&pb, &pa));
        prop_assert!(angular_distance(&pa, &pa) == 0.0);
    }

    #[test]
    fn radec_round_trip_drift_is_sub_microarcsecond(p in radec()) {
        let first = SkyPosition::from_radec_deg(p.0, p.1).unwrap();
        let (ra1, dec1) = first.to_radec_deg();
        let second = SkyPosition::from_radec_deg(ra1, dec1).unwrap();
        let (ra2, dec2) = second.to_radec_deg();
        // atan2/sin/cos round trips may wobble by an ulp; anything past
        // that would show up as position drift on re-derived angles.
        prop_assert!(angular_distance(&first, &second) < 1e-6);
        prop_assert!((ra1 - ra2).abs() <= 2.0 * f64::EPSILON * ra1.abs().max(1.0));
        prop_assert!((dec1 - dec2).abs() <= 2.0 * f64::EPSILON * 90.0);
    }

    #[test]
    fn cap_membership_follows_angular_distance(
        c in radec(),
        radius in 10.0..500_000.0f64,
        bearing in 0.0..std::f64::consts::TAU,
        frac in 0.0..2.0f64,
    ) {
        let center = SkyPosition::from_radec_deg(c.0, c.1).unwrap();
        let cap = Region::cap("cap", center, radius).unwrap();
        let dist = radius * frac;
        prop_assume!(dist <= 648_000.0);
        let p = center.offset_by(bearing, dist);
        // A 2" guard band keeps us clear of the inclusive boundary.
        if dist < radius - 2.0 {
            prop_assert!(cap.contains(&p));
        } else if dist > radius + 2.0 {
            prop_assert!(!cap.contains(&p));
        }
    }

    #[test]
    fn zone_join_agrees_with_brute_force(
        seed in any::<u64>(),
        n in 2usize..40,
        radius in 1.0..5000.0f64,
    ) {
        let mut catalog = CatalogSet::new();
        catalog.ensure_run("P", &[]).unwrap();
        for (i, p) in uniform_sphere_sample(seed, n).iter().enumerate() {
            let (ra, dec) = p.to_radec_deg();
            catalog
                .insert(CatalogObject::new("P", i as u64 + 1, ra, dec, None, vec![]).unwrap())
                .unwrap();
        }
        let index = ZoneIndex::build(&catalog, radius.max(30.0)).unwrap();
        let mut got: Vec<(u64, u64, u64)> = index
            .neighbors_within(radius)
            .unwrap()
            .into_iter()
            .map(|(a, b, sep)| (a.object_id(), b.object_id(), sep.to_bits()))
            .collect();
        got.sort_unstable();
        let mut want: Vec<(u64, u64, u64)> = brute_force_neighbors(&catalog, radius)
            .into_iter()
            .map(|p| (p.id1, p.id2, p.separation_arcsec.to_bits()))
            .collect();
        want.sort_unstable();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn distance_spec_round_trips_through_text(
        scaled in any::<bool>(),
        value in 0.001..600_000.0f64,
    ) {
        let spec = if scaled {
            format!("scaled:{value}")
        } else {
            format!("fixed:{value}")
        };
        let parsed: ClassificationDistance = spec.parse().unwrap();
        let reparsed: ClassificationDistance = parsed.to_string().parse().unwrap();
        let d1 = parsed.distance(0.3, 0.7).unwrap();
        let d2 = reparsed.distance(0.3, 0.7).unwrap();
        prop_assert_eq!(d1.to_bits(), d2.to_bits());
    }

    #[test]
    fn canonical_sort_is_order_independent(
        keys in prop::collection::vec((0u8..4, 1u64..12, 0u8..4, 1u64..12), 1..60),
        rotation in 0usize..60,
    ) {
        let records: Vec<MatchRecord> = keys
            .iter()
            .map(|&(r1, i1, r2, i2)| MatchRecord {
                run1: format!("R{r1}"),
                object_id1: i1,
                run2: format!("R{r2}"),
                object_id2: i2,
                verdict: Verdict::Hit,
                separation_arcsec: Some(0.5),
                bundle_id: 0,
            })
            .collect();
        let mut sorted = records.clone();
        sort_canonical(&mut sorted);
        // Same multiset, different arrival order: same canonical order.
        let mut rotated: Vec<MatchRecord> = records.clone();
        rotated.rotate_left(rotation % records.len());
        sort_canonical(&mut rotated);
        let key = |r: &MatchRecord| (r.run1.clone(), r.object_id1, r.run2.clone(), r.object_id2);
        prop_assert_eq!(
            sorted.iter().map(key).collect::<Vec<_>>(),
            rotated.iter().map(key).collect::<Vec<_>>()
        );
        // And sorting is idempotent.
        let mut twice = sorted.clone();
        sort_canonical(&mut twice);
        prop_assert_eq!(
            sorted.iter().map(key).collect::<Vec<_>>(),
            twice.iter().map(key).collect::<Vec<_>>()
        );
    }
}
