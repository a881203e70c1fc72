//! Run-pair overlaps and miss classification.
//!
//! For each ordered run pair the overlap is the part of run1's footprint
//! that run2 should also have seen: intersect(fp1, buffer(fp2, d)) where
//! d is the pair's classification distance. A run1 object inside that
//! overlap with no Hit against run2 is a miss, and every miss is exactly
//! one of:
//!
//! - **Edge** — within d of the overlap boundary (the erosion residue),
//! - **Masked** — inside one of run2's masks,
//! - **Ephemeral** — everything left over.
//!
//! Precedence is strict in that order, so a miss that is both near the
//! edge and inside a mask counts as Edge.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{CatalogSet, ClassificationDistance, RunSet};
use crate::geometry::{angular_distance, GeometryError, Region, SkyPosition};
use crate::matching::{sort_canonical, MatchRecord, Verdict};

#[derive(Debug, Error)]
pub enum MissError {
    #[error("no overlap record for run pair ({run1}, {run2})")]
    MissingOverlap { run1: String, run2: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{source_name}:{line}: {reason}")]
    Parse {
        source_name: String,
        line: u64,
        reason: String,
    },
}

/// Overlap geometry for one ordered run pair. The edge zone is the set
/// difference overlap \ eroded, tested point-wise via `in_edge_zone`.
#[derive(Debug, Clone)]
pub struct OverlapRecord {
    pub run1: String,
    pub run2: String,
    pub overlap: Region,
    pub eroded: Region,
    pub run2_masks: Region,
    pub pair_distance_arcsec: f64,
}

impl OverlapRecord {
    pub fn contains(&self, p: &SkyPosition) -> bool {
        self.overlap.contains(p)
    }

    pub fn in_edge_zone(&self, p: &SkyPosition) -> bool {
        self.overlap.contains(p) && !self.eroded.contains(p)
    }
}

/// A run1 object that run2 should have detected but did not.
#[derive(Debug, Clone, PartialEq)]
pub struct MissRecord {
    pub run1: String,
    pub object_id: u64,
    pub ra_deg: f64,
    pub dec_deg: f64,
    pub position: SkyPosition,
    pub run2: String,
}

/// Builds the overlap table over all ordered run pairs. Pairs whose
/// bounding circles are separated by more than the pair distance are
/// pruned before any region algebra; pairs whose overlap is empty are
/// dropped. Fewer than two runs gives an empty table.
pub fn compute_overlaps(
    runs: &RunSet,
    dist: &ClassificationDistance,
) -> Result<Vec<OverlapRecord>, MissError> {
    let mut overlaps = Vec::new();
    for run1 in runs.iter() {
        for run2 in runs.iter() {
            if run1.run_id() == run2.run_id() {
                continue;
            }
            let pair_distance =
                dist.eval(run1.default_pos_err_arcsec(), run2.default_pos_err_arcsec());
            if let (Some((c1, r1)), Some((c2, r2))) =
                (run1.footprint().bounding_circle(), run2.footprint().bounding_circle())
            {
                if angular_distance(&c1, &c2) > r1 + r2 + pair_distance {
                    continue;
                }
            }
            let reachable = run2.footprint().buffer(pair_distance)?;
            let overlap = run1
                .footprint()
                .intersect(&reachable)
                .with_id(format!("overlap:{}:{}", run1.run_id(), run2.run_id()));
            if overlap.is_empty() {
                continue;
            }
            let eroded = overlap
                .erode(pair_distance)?
                .with_id(format!("eroded:{}:{}", run1.run_id(), run2.run_id()));
            overlaps.push(OverlapRecord {
                run1: run1.run_id().to_string(),
                run2: run2.run_id().to_string(),
                overlap,
                eroded,
                run2_masks: run2.masks().clone(),
                pair_distance_arcsec: pair_distance,
            });
        }
    }
    Ok(overlaps)
}

/// Enumerates misses: for each overlap record, every run1 object inside
/// the overlap with no Hit against run2. Output is sorted by
/// (run1, objectID, run2).
pub fn compute_misses(
    catalog: &CatalogSet,
    matches: &[MatchRecord],
    overlaps: &[OverlapRecord],
) -> Vec<MissRecord> {
    let hit_keys: HashSet<(&str, u64, &str)> = matches
        .iter()
        .filter(|r| r.verdict == Verdict::Hit)
        .map(|r| (r.run1.as_str(), r.object_id1, r.run2.as_str()))
        .collect();
    let mut misses = Vec::new();
    for ov in overlaps {
        let Some(run) = catalog.run(&ov.run1) else { continue };
        for obj in run.objects() {
            if hit_keys.contains(&(ov.run1.as_str(), obj.object_id(), ov.run2.as_str())) {
                continue;
            }
            if ov.contains(obj.position()) {
                misses.push(MissRecord {
                    run1: ov.run1.clone(),
                    object_id: obj.object_id(),
                    ra_deg: obj.ra_deg(),
                    dec_deg: obj.dec_deg(),
                    position: *obj.position(),
                    run2: ov.run2.clone(),
                });
            }
        }
    }
    misses.sort_by(|a, b| {
        (&a.run1, a.object_id, &a.run2).cmp(&(&b.run1, b.object_id, &b.run2))
    });
    misses
}

/// Turns each miss into a MatchRecord with objectID2 = 0, applying the
/// Edge → Masked → Ephemeral precedence.
pub fn classify_misses(
    misses: &[MissRecord],
    overlaps: &[OverlapRecord],
) -> Result<Vec<MatchRecord>, MissError> {
    let by_pair: HashMap<(&str, &str), &OverlapRecord> =
        overlaps.iter().map(|o| ((o.run1.as_str(), o.run2.as_str()), o)).collect();
    let mut records = Vec::with_capacity(misses.len());
    for miss in misses {
        let ov = by_pair.get(&(miss.run1.as_str(), miss.run2.as_str())).ok_or_else(|| {
            MissError::MissingOverlap {
                run1: miss.run1.clone(),
                run2: miss.run2.clone(),
            }
        })?;
        let verdict = if ov.in_edge_zone(&miss.position) {
            Verdict::Edge
        } else if ov.run2_masks.contains(&miss.position) {
            Verdict::Masked
        } else {
            Verdict::Ephemeral
        };
        records.push(MatchRecord {
            run1: miss.run1.clone(),
            object_id1: miss.object_id,
            run2: miss.run2.clone(),
            object_id2: 0,
            verdict,
            separation_arcsec: None,
            bundle_id: 0,
        });
    }
    sort_canonical(&mut records);
    Ok(records)
}

pub fn write_miss_csv(misses: &[MissRecord], writer: impl Write) -> Result<(), MissError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["run1", "objectID", "ra_deg", "dec_deg", "run2"])?;
    for m in misses {
        w.write_record([
            m.run1.as_str(),
            &m.object_id.to_string(),
            &m.ra_deg.to_string(),
            &m.dec_deg.to_string(),
            &m.run2,
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_miss_csv(reader: impl Read, source_name: &str) -> Result<Vec<MissRecord>, MissError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let parse_err = |line: u64, reason: String| MissError::Parse {
        source_name: source_name.to_string(),
        line,
        reason,
    };
    let mut misses = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 5 {
            return Err(parse_err(line, format!("expected 5 fields, got {}", record.len())));
        }
        let field = |i: usize| record.get(i).unwrap_or("");
        let num = |i: usize, name: &str| -> Result<f64, MissError> {
            field(i)
                .parse::<f64>()
                .map_err(|e| parse_err(line, format!("{name} {:?}: {e}", field(i))))
        };
        let ra_deg = num(2, "ra_deg")?;
        let dec_deg = num(3, "dec_deg")?;
        let position = SkyPosition::from_radec_deg(ra_deg, dec_deg)
            .map_err(|e| parse_err(line, e.to_string()))?;
        misses.push(MissRecord {
            run1: field(0).to_string(),
            object_id: field(1)
                .parse()
                .map_err(|e| parse_err(line, format!("objectID {:?}: {e}", field(1))))?,
            ra_deg,
            dec_deg,
            position,
            run2: field(4).to_string(),
        });
    }
    Ok(misses)
}

/// One overlap-report entry: identifiers only; the regions themselves
/// are rebuilt from run metadata wherever they are needed.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct OverlapSummary {
    pub run1: String,
    pub run2: String,
    #[serde(rename = "overlapRegionID")]
    pub overlap_region_id: String,
    #[serde(rename = "erodedRegionID")]
    pub eroded_region_id: String,
    #[serde(rename = "run2MasksID")]
    pub run2_masks_id: String,
    #[serde(rename = "pairDistance_arcsec")]
    pub pair_distance_arcsec: f64,
}

pub fn overlap_report(overlaps: &[OverlapRecord]) -> Vec<OverlapSummary> {
    overlaps
        .iter()
        .map(|o| OverlapSummary {
            run1: o.run1.clone(),
            run2: o.run2.clone(),
            overlap_region_id: o.overlap.region_id().to_string(),
            eroded_region_id: o.eroded.region_id().to_string(),
            run2_masks_id: o.run2_masks.region_id().to_string(),
            pair_distance_arcsec: o.pair_distance_arcsec,
        })
        .collect()
}

pub fn write_overlap_report(
    overlaps: &[OverlapRecord],
    writer: impl Write,
) -> Result<(), MissError> {
    serde_json::to_writer_pretty(writer, &overlap_report(overlaps))?;
    Ok(())
}
