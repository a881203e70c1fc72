//! Pivoted cross-match: one row per bundle, one column per selected run.
//!
//! Each bundle expands to the Cartesian product of its per-run members
//! (a full outer join across the selected runs), with objectID 0 filling
//! runs where the bundle has no member. Exactly one row per bundle is
//! flagged primary: for every run it holds the member closest to the
//! bundle's average position, ties broken toward the smaller objectID.

use std::collections::HashSet;
use std::io::Write;

use thiserror::Error;

use crate::catalog::CatalogSet;
use crate::fof::Bundle;
use crate::geometry::angular_distance;

#[derive(Debug, Error)]
pub enum PivotError {
    #[error("pivot requires at least one run")]
    EmptyRunList,
    #[error("run {0:?} is not present in the catalog")]
    UnknownRun(String),
    #[error("run {0:?} listed twice")]
    DuplicateRun(String),
    #[error("bundle member ({run}, {id}) is missing from the catalog")]
    ObjectNotInCatalog { run: String, id: u64 },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PivotRow {
    pub bundle_id: u64,
    /// objectIDs parallel to the requested run order; 0 marks no member.
    pub cells: Vec<u64>,
    pub is_primary: bool,
}

/// Expands bundles against an ordered run selection. Bundles with no
/// member in any selected run are skipped entirely (they still took
/// part in bundling; they just have nothing to show here), so no row is
/// all zeros.
pub fn pivot(
    bundles: &[Bundle],
    runs: &[String],
    catalog: &CatalogSet,
) -> Result<Vec<PivotRow>, PivotError> {
    if runs.is_empty() {
        return Err(PivotError::EmptyRunList);
    }
    let mut seen = HashSet::new();
    for run in runs {
        if catalog.run(run).is_none() {
            return Err(PivotError::UnknownRun(run.clone()));
        }
        if !seen.insert(run.as_str()) {
            return Err(PivotError::DuplicateRun(run.clone()));
        }
    }
    let mut rows = Vec::new();
    for bundle in bundles {
        let mut per_run: Vec<Vec<u64>> = runs
            .iter()
            .map(|run| {
                let mut ids: Vec<u64> = bundle
                    .members
                    .iter()
                    .filter(|(r, _)| r == run)
                    .map(|(_, id)| *id)
                    .collect();
                ids.sort_unstable();
                ids
            })
            .collect();
        if per_run.iter().all(|ids| ids.is_empty()) {
            continue;
        }
        let primary: Vec<u64> = runs
            .iter()
            .zip(&per_run)
            .map(|(run, ids)| nearest_member(bundle, run, ids, catalog))
            .collect::<Result<_, _>>()?;
        for ids in &mut per_run {
            if ids.is_empty() {
                ids.push(0);
            }
        }
        // Odometer over the per-run member lists; ascending ids per
        // dimension keep the rows in lexicographic order.
        let mut counter = vec![0usize; per_run.len()];
        loop {
            let cells: Vec<u64> =
                counter.iter().zip(&per_run).map(|(&i, ids)| ids[i]).collect();
            rows.push(PivotRow {
                bundle_id: bundle.bundle_id,
                is_primary: cells == primary,
                cells,
            });
            let mut dim = per_run.len();
            loop {
                if dim == 0 {
                    break;
                }
                dim -= 1;
                counter[dim] += 1;
                if counter[dim] < per_run[dim].len() {
                    break;
                }
                counter[dim] = 0;
                if dim == 0 {
                    dim = usize::MAX;
                    break;
                }
            }
            if dim == usize::MAX {
                break;
            }
        }
    }
    Ok(rows)
}

fn nearest_member(
    bundle: &Bundle,
    run: &str,
    ids: &[u64],
    catalog: &CatalogSet,
) -> Result<u64, PivotError> {
    let mut best: Option<(f64, u64)> = None;
    for &id in ids {
        let obj = catalog.get(run, id).ok_or_else(|| PivotError::ObjectNotInCatalog {
            run: run.to_string(),
            id,
        })?;
        let d = angular_distance(obj.position(), &bundle.position_average);
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, id));
        }
    }
    Ok(best.map_or(0, |(_, id)| id))
}

/// `bundleID,<runID>_objID,...,isPrimary` with the columns following the
/// requested run order.
pub fn write_pivot_csv(
    rows: &[PivotRow],
    runs: &[String],
    writer: impl Write,
) -> Result<(), PivotError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["bundleID".to_string()];
    header.extend(runs.iter().map(|r| format!("{r}_objID")));
    header.push("isPrimary".to_string());
    w.write_record(&header)?;
    for row in rows {
        let mut record = vec![row.bundle_id.to_string()];
        record.extend(row.cells.iter().map(|id| id.to_string()));
        record.push(if row.is_primary { "true" } else { "false" }.to_string());
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}
