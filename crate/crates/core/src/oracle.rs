//! Brute-force reference implementations.
//!
//! Everything here is deliberately naive — O(n²) all-pairs scans, BFS,
//! and the iterative insert-until-fixpoint friend closure — so the fast
//! implementations (`zones`, `matching`, `fof`) have something honest to
//! be compared against. The CLI `verify` stage runs these on small
//! inputs; the test suites run them on fixed-seed instances.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};

use crate::catalog::{CatalogSet, ClassificationDistance, RunSet};
use crate::geometry::angular_distance;

/// (runID, objectID) — the universal object key.
pub type ObjKey = (String, u64);

/// One directed neighbor pair, as emitted by both the oracle and the
/// zone join (after mapping).
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborPair {
    pub run1: String,
    pub id1: u64,
    pub run2: String,
    pub id2: u64,
    pub separation_arcsec: f64,
}

fn canonical_sort(pairs: &mut [NeighborPair]) {
    pairs.sort_by(|a, b| {
        (&a.run1, a.id1, &a.run2, a.id2).cmp(&(&b.run1, b.id1, &b.run2, b.id2))
    });
}

/// Every directed pair of distinct objects with separation <= radius,
/// same-run pairs included, sorted by (run1, id1, run2, id2).
pub fn brute_force_neighbors(catalog: &CatalogSet, radius_arcsec: f64) -> Vec<NeighborPair> {
    let objects: Vec<_> = catalog.objects().collect();
    let mut out = Vec::new();
    for i in 0..objects.len() {
        for j in (i + 1)..objects.len() {
            let (a, b) = (objects[i], objects[j]);
            let sep = angular_distance(a.position(), b.position());
            if sep <= radius_arcsec {
                out.push(NeighborPair {
                    run1: a.run_id().to_string(),
                    id1: a.object_id(),
                    run2: b.run_id().to_string(),
                    id2: b.object_id(),
                    separation_arcsec: sep,
                });
                out.push(NeighborPair {
                    run1: b.run_id().to_string(),
                    id1: b.object_id(),
                    run2: a.run_id().to_string(),
                    id2: a.object_id(),
                    separation_arcsec: sep,
                });
            }
        }
    }
    canonical_sort(&mut out);
    out
}

/// Every directed cross-run pair with separation strictly below the
/// pair's classification distance — the Hit set, by brute force.
pub fn brute_force_hits(
    catalog: &CatalogSet,
    runs: &RunSet,
    dist: &ClassificationDistance,
) -> Vec<NeighborPair> {
    let default_err: HashMap<&str, f64> = runs
        .iter()
        .map(|r| (r.run_id(), r.default_pos_err_arcsec()))
        .collect();
    let objects: Vec<_> = catalog.objects().collect();
    let err: Vec<f64> = objects
        .iter()
        .map(|o| o.effective_position_error(*default_err.get(o.run_id()).unwrap_or(&f64::NAN)))
        .collect();
    let mut out = Vec::new();
    for i in 0..objects.len() {
        for j in (i + 1)..objects.len() {
            let (a, b) = (objects[i], objects[j]);
            if a.run_id() == b.run_id() {
                continue;
            }
            let sep = angular_distance(a.position(), b.position());
            if sep < dist.eval(err[i], err[j]) {
                out.push(NeighborPair {
                    run1: a.run_id().to_string(),
                    id1: a.object_id(),
                    run2: b.run_id().to_string(),
                    id2: b.object_id(),
                    separation_arcsec: sep,
                });
                out.push(NeighborPair {
                    run1: b.run_id().to_string(),
                    id1: b.object_id(),
                    run2: a.run_id().to_string(),
                    id2: a.object_id(),
                    separation_arcsec: sep,
                });
            }
        }
    }
    canonical_sort(&mut out);
    out
}

/// Connected components by breadth-first search. `nodes` may include
/// isolated keys. Each component is sorted; components are ordered by
/// their minimal member.
pub fn bfs_components(nodes: &[ObjKey], edges: &[(ObjKey, ObjKey)]) -> Vec<Vec<ObjKey>> {
    let mut keys: BTreeSet<ObjKey> = nodes.iter().cloned().collect();
    for (a, b) in edges {
        keys.insert(a.clone());
        keys.insert(b.clone());
    }
    let keys: Vec<ObjKey> = keys.into_iter().collect();
    let index: HashMap<&ObjKey, usize> = keys.iter().enumerate().map(|(i, k)| (k, i)).collect();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); keys.len()];
    for (a, b) in edges {
        let (ia, ib) = (index[a], index[b]);
        adj[ia].push(ib);
        adj[ib].push(ia);
    }
    let mut seen = vec![false; keys.len()];
    let mut components = Vec::new();
    // Keys are sorted, so scanning in order yields components ordered by
    // minimal member, each discovered from that minimal member.
    for start in 0..keys.len() {
        if seen[start] {
            continue;
        }
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        let mut members = Vec::new();
        while let Some(i) = queue.pop_front() {
            members.push(keys[i].clone());
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        members.sort();
        components.push(members);
    }
    components
}

/// The friends-of-friends fixed point, computed the slow way: keep
/// inserting (a, c) whenever (a, b) and (b, c) are present, quit when no
/// new rows are added. Returns only the added (Friend) pairs, sorted.
pub fn iterative_friend_closure(hits: &[(ObjKey, ObjKey)]) -> Vec<(ObjKey, ObjKey)> {
    let base: HashSet<(ObjKey, ObjKey)> = hits.iter().cloned().collect();
    let mut relation = base.clone();
    loop {
        let mut by_left: BTreeMap<&ObjKey, Vec<&ObjKey>> = BTreeMap::new();
        for (a, b) in &relation {
            by_left.entry(a).or_default().push(b);
        }
        let mut added = Vec::new();
        for (a, b) in &relation {
            if let Some(cs) = by_left.get(b) {
                for &c in cs {
                    if a != c && !relation.contains(&(a.clone(), c.clone())) {
                        added.push((a.clone(), c.clone()));
                    }
                }
            }
        }
        if added.is_empty() {
            break;
        }
        relation.extend(added);
    }
    let mut friends: Vec<(ObjKey, ObjKey)> =
        relation.into_iter().filter(|p| !base.contains(p)).collect();
    friends.sort();
    friends
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::CatalogObject;

    fn key(run: &str, id: u64) -> ObjKey {
        (run.to_string(), id)
    }

    #[test]
    fn neighbors_on_tiny_catalog() {
        let mut set = CatalogSet::new();
        set.ensure_run("A", &[]).unwrap();
        set.ensure_run("B", &[]).unwrap();
        set.insert(CatalogObject::new("A", 1, 10.0, 0.0, Some(0.1), vec![]).unwrap()).unwrap();
        set.insert(CatalogObject::new("B", 1, 10.0001, 0.0, Some(0.1), vec![]).unwrap()).unwrap();
        set.insert(CatalogObject::new("B", 2, 11.0, 0.0, Some(0.1), vec![]).unwrap()).unwrap();
        // 0.0001 deg = 0.36 arcsec apart; the B,2 object is a degree away.
        let pairs = brute_force_neighbors(&set, 1.0);
        assert_eq!(pairs.len(), 2);
        assert_eq!((pairs[0].run1.as_str(), pairs[0].id1), ("A", 1));
        assert_eq!((pairs[1].run1.as_str(), pairs[1].id1), ("B", 1));
        assert!((pairs[0].separation_arcsec - 0.36).abs() < 1e-3);
    }

    #[test]
    fn bfs_chain_and_isolates() {
        let nodes = vec![key("C", 9)];
        let edges = vec![
            (key("A", 1), key("B", 1)),
            (key("B", 1), key("A", 2)),
            (key("A", 3), key("B", 7)),
        ];
        let comps = bfs_components(&nodes, &edges);
        assert_eq!(comps.len(), 3);
        assert_eq!(comps[0], vec![key("A", 1), key("A", 2), key("B", 1)]);
        assert_eq!(comps[1], vec![key("A", 3), key("B", 7)]);
        assert_eq!(comps[2], vec![key("C", 9)]);
    }

    #[test]
    fn friend_closure_on_a_chain_of_three() {
        // Symmetric hits 1-2 and 2-3: closure adds (1,3) and (3,1) only.
        let hits = vec![
            (key("r1", 1), key("r2", 2)),
            (key("r2", 2), key("r1", 1)),
            (key("r2", 2), key("r3", 3)),
            (key("r3", 3), key("r2", 2)),
        ];
        let friends = iterative_friend_closure(&hits);
        assert_eq!(friends, vec![
            (key("r1", 1), key("r3", 3)),
            (key("r3", 3), key("r1", 1)),
        ]);
    }

    #[test]
    fn friend_closure_completes_the_graph() {
        // A 4-chain: closure must produce the complete directed graph
        // minus self-loops minus the 6 hit edges: 4*3 - 6 = 6 friends.
        let mut hits = Vec::new();
        for (a, b) in [(1u64, 2u64), (2, 3), (3, 4)] {
            hits.push((key("r", a), key("r", b)));
            hits.push((key("r", b), key("r", a)));
        }
        let friends = iterative_friend_closure(&hits);
        assert_eq!(friends.len(), 6);
        for (a, b) in &friends {
            assert_ne!(a, b);
            assert!(!hits.contains(&(a.clone(), b.clone())));
        }
    }

    #[test]
    fn friend_closure_empty_cases() {
        assert!(iterative_friend_closure(&[]).is_empty());
        // Two members fully joined by hits: nothing to add.
        let hits = vec![(key("a", 1), key("b", 1)), (key("b", 1), key("a", 1))];
        assert!(iterative_friend_closure(&hits).is_empty());
    }
}
