//! Friends-of-friends bundling.
//!
//! Hits are edges of an undirected graph over (runID, objectID); a
//! bundle is one connected component. Components are computed with a
//! disjoint-set forest rather than the quadratic iterate-until-fixpoint
//! closure, which survives only as a test oracle. Bundle IDs are dense
//! positive integers handed out in order of each component's minimal
//! (runID, objectID) member, so the assignment is independent of record
//! order. Friend records then complete each bundle's directed relation,
//! and per-bundle statistics summarize hits, miss breakdowns, and the
//! position spread.

mod union_find;

pub use union_find::UnionFind;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::Write;

use thiserror::Error;

use crate::catalog::CatalogSet;
use crate::geometry::{angular_distance, GeometryError, SkyPosition};
use crate::matching::{sort_canonical, MatchRecord, Verdict};

#[derive(Debug, Error)]
pub enum FofError {
    #[error("object ({run}, {id}) referenced by a match record is missing from the catalog")]
    ObjectNotInCatalog { run: String, id: u64 },
    #[error("match record ({run1}, {id1}) -> ({run2}, {id2}) has no bundle assigned")]
    UnassignedRecord {
        run1: String,
        id1: u64,
        run2: String,
        id2: u64,
    },
    #[error("match record references unknown bundle {0}")]
    UnknownBundle(u64),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A bundle's identity and membership; statistics come later.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BundleMembers {
    pub bundle_id: u64,
    /// Sorted by (runID, objectID); the first entry is the representative.
    pub members: Vec<(String, u64)>,
}

/// A finalized bundle with statistics.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub bundle_id: u64,
    pub members: Vec<(String, u64)>,
    pub hits: u64,
    pub ephemeral: u64,
    pub masked: u64,
    pub edge: u64,
    pub position_average: SkyPosition,
    pub position_variance_arcsec2: f64,
    pub per_run_counts: BTreeMap<String, usize>,
}

/// Partitions every object referenced by the records into bundles and
/// stamps each record with the bundle of its (run1, objectID1) member.
pub fn compute_bundles(records: &mut [MatchRecord]) -> Vec<BundleMembers> {
    let mut universe: BTreeSet<(String, u64)> = BTreeSet::new();
    for r in records.iter() {
        universe.insert((r.run1.clone(), r.object_id1));
        if r.object_id2 != 0 {
            universe.insert((r.run2.clone(), r.object_id2));
        }
    }
    let members: Vec<(String, u64)> = universe.into_iter().collect();
    let index: HashMap<(&str, u64), usize> = members
        .iter()
        .enumerate()
        .map(|(i, (run, id))| ((run.as_str(), *id), i))
        .collect();
    let mut forest = UnionFind::new(members.len());
    for r in records.iter() {
        if r.object_id2 == 0 {
            continue;
        }
        let a = index[&(r.run1.as_str(), r.object_id1)];
        let b = index[&(r.run2.as_str(), r.object_id2)];
        forest.union(a, b);
    }
    let bundles = bundles_from_forest(&members, &mut forest);
    let id_of: HashMap<(&str, u64), u64> = bundles
        .iter()
        .flat_map(|b| b.members.iter().map(|(run, id)| ((run.as_str(), *id), b.bundle_id)))
        .collect();
    for r in records.iter_mut() {
        r.bundle_id = id_of[&(r.run1.as_str(), r.object_id1)];
    }
    bundles
}

/// Groups a forest into BundleMembers, ordering bundles by their minimal
/// member. `members` must be sorted.
fn bundles_from_forest(
    members: &[(String, u64)],
    forest: &mut UnionFind,
) -> Vec<BundleMembers> {
    let mut by_root: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..members.len() {
        let root = forest.find(i);
        by_root.entry(root).or_default().push(i);
    }
    let mut components: Vec<Vec<usize>> = by_root.into_values().collect();
    // Members are sorted, so the smallest index is the lexicographic
    // minimum; order bundles by it.
    components.sort_by_key(|c| c[0]);
    components
        .into_iter()
        .enumerate()
        .map(|(i, idxs)| BundleMembers {
            bundle_id: (i + 1) as u64,
            members: idxs.into_iter().map(|j| members[j].clone()).collect(),
        })
        .collect()
}

/// Emits a Friend record for every ordered pair of distinct co-bundle
/// members not already related by a Hit (or Friend), completing each
/// bundle's directed graph. Separations come from the catalog.
pub fn materialize_friends(
    records: &[MatchRecord],
    bundles: &[BundleMembers],
    catalog: &CatalogSet,
) -> Result<Vec<MatchRecord>, FofError> {
    let related: HashSet<(&str, u64, &str, u64)> = records
        .iter()
        .filter(|r| matches!(r.verdict, Verdict::Hit | Verdict::Friend))
        .map(|r| (r.run1.as_str(), r.object_id1, r.run2.as_str(), r.object_id2))
        .collect();
    let position = |run: &str, id: u64| -> Result<&SkyPosition, FofError> {
        catalog
            .get(run, id)
            .map(|o| o.position())
            .ok_or_else(|| FofError::ObjectNotInCatalog { run: run.to_string(), id })
    };
    let mut friends = Vec::new();
    for bundle in bundles {
        for (run1, id1) in &bundle.members {
            for (run2, id2) in &bundle.members {
                if (run1, id1) == (run2, id2)
                    || related.contains(&(run1.as_str(), *id1, run2.as_str(), *id2))
                {
                    continue;
                }
                let sep = angular_distance(position(run1, *id1)?, position(run2, *id2)?);
                friends.push(MatchRecord {
                    run1: run1.clone(),
                    object_id1: *id1,
                    run2: run2.clone(),
                    object_id2: *id2,
                    verdict: Verdict::Friend,
                    separation_arcsec: Some(sep),
                    bundle_id: bundle.bundle_id,
                });
            }
        }
    }
    sort_canonical(&mut friends);
    Ok(friends)
}

/// Fills in per-bundle statistics: directed Hit counts, miss breakdowns,
/// vector-mean position, and the mean squared angular deviation from it.
/// Friend records contribute to none of the counts.
pub fn bundle_statistics(
    bundles: &[BundleMembers],
    records: &[MatchRecord],
    catalog: &CatalogSet,
) -> Result<Vec<Bundle>, FofError> {
    let slot_of: HashMap<u64, usize> =
        bundles.iter().enumerate().map(|(i, b)| (b.bundle_id, i)).collect();
    let mut counts = vec![[0u64; 4]; bundles.len()];
    for r in records {
        let verdict_slot = match r.verdict {
            Verdict::Hit => 0,
            Verdict::Ephemeral => 1,
            Verdict::Masked => 2,
            Verdict::Edge => 3,
            Verdict::Friend => continue,
        };
        if r.bundle_id == 0 {
            return Err(FofError::UnassignedRecord {
                run1: r.run1.clone(),
                id1: r.object_id1,
                run2: r.run2.clone(),
                id2: r.object_id2,
            });
        }
        let slot = *slot_of.get(&r.bundle_id).ok_or(FofError::UnknownBundle(r.bundle_id))?;
        counts[slot][verdict_slot] += 1;
    }
    let mut out = Vec::with_capacity(bundles.len());
    for (b, c) in bundles.iter().zip(&counts) {
        let mut positions = Vec::with_capacity(b.members.len());
        let mut per_run_counts: BTreeMap<String, usize> = BTreeMap::new();
        let (mut sx, mut sy, mut sz) = (0.0, 0.0, 0.0);
        for (run, id) in &b.members {
            let obj = catalog.get(run, *id).ok_or_else(|| FofError::ObjectNotInCatalog {
                run: run.clone(),
                id: *id,
            })?;
            let p = obj.position();
            sx += p.x();
            sy += p.y();
            sz += p.z();
            positions.push(*p);
            *per_run_counts.entry(run.clone()).or_insert(0) += 1;
        }
        let average = SkyPosition::from_vector(sx, sy, sz)?;
        let variance = positions
            .iter()
            .map(|p| angular_distance(p, &average).powi(2))
            .sum::<f64>()
            / positions.len() as f64;
        out.push(Bundle {
            bundle_id: b.bundle_id,
            members: b.members.clone(),
            hits: c[0],
            ephemeral: c[1],
            masked: c[2],
            edge: c[3],
            position_average: average,
            position_variance_arcsec2: variance,
            per_run_counts,
        });
    }
    Ok(out)
}

/// `bundleID,memberCount,hits,ephemeral,masked,edge,raAvg_deg,decAvg_deg,posVar_arcsec2`
/// sorted by bundleID.
pub fn write_bundle_csv(bundles: &[Bundle], writer: impl Write) -> Result<(), FofError> {
    let mut sorted: Vec<&Bundle> = bundles.iter().collect();
    sorted.sort_by_key(|b| b.bundle_id);
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "bundleID",
        "memberCount",
        "hits",
        "ephemeral",
        "masked",
        "edge",
        "raAvg_deg",
        "decAvg_deg",
        "posVar_arcsec2",
    ])?;
    for b in sorted {
        let (ra, dec) = b.position_average.to_radec_deg();
        w.write_record([
            b.bundle_id.to_string(),
            b.members.len().to_string(),
            b.hits.to_string(),
            b.ephemeral.to_string(),
            b.masked.to_string(),
            b.edge.to_string(),
            ra.to_string(),
            dec.to_string(),
            b.position_variance_arcsec2.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Grow-only bundling that accepts match records run by run. The final
/// partition and ID assignment are identical to a batch
/// [`compute_bundles`] over the concatenation of everything inserted.
#[derive(Default)]
pub struct IncrementalBundles {
    index: BTreeMap<(String, u64), usize>,
    forest: UnionFind,
}

impl IncrementalBundles {
    pub fn new() -> Self {
        IncrementalBundles {
            index: BTreeMap::new(),
            forest: UnionFind::new(0),
        }
    }

    fn slot(&mut self, run: &str, id: u64) -> usize {
        if let Some(&i) = self.index.get(&(run.to_string(), id)) {
            return i;
        }
        let i = self.forest.push();
        self.index.insert((run.to_string(), id), i);
        i
    }

    pub fn merge_on_insert(&mut self, records: &[MatchRecord]) {
        for r in records {
            let a = self.slot(&r.run1, r.object_id1);
            if r.object_id2 != 0 {
                let b = self.slot(&r.run2, r.object_id2);
                self.forest.union(a, b);
            }
        }
    }

    /// Current partition under the same ordering rule as the batch path.
    pub fn bundles(&mut self) -> Vec<BundleMembers> {
        let members: Vec<(String, u64)> = self.index.keys().cloned().collect();
        // Map sorted-member order onto forest slots.
        let slots: Vec<usize> = self.index.values().copied().collect();
        let mut by_root: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (pos, &slot) in slots.iter().enumerate() {
            let root = self.forest.find(slot);
            by_root.entry(root).or_default().push(pos);
        }
        let mut components: Vec<Vec<usize>> = by_root.into_values().collect();
        components.sort_by_key(|c| c[0]);
        components
            .into_iter()
            .enumerate()
            .map(|(i, idxs)| BundleMembers {
                bundle_id: (i + 1) as u64,
                members: idxs.into_iter().map(|j| members[j].clone()).collect(),
            })
            .collect()
    }

    /// Re-stamps bundle IDs onto records after the partition settled.
    pub fn assign(&mut self, records: &mut [MatchRecord]) {
        let id_of: HashMap<(String, u64), u64> = self
            .bundles()
            .into_iter()
            .flat_map(|b| {
                let bid = b.bundle_id;
                b.members.into_iter().map(move |m| (m, bid))
            })
            .collect();
        for r in records.iter_mut() {
            r.bundle_id = id_of[&(r.run1.clone(), r.object_id1)];
        }
    }
}
