//! Hit computation and the Match record model.
//!
//! A Hit is a directed cross-run pair with separation strictly below the
//! pair's classification distance; both directions are always present.
//! Miss verdicts (Ephemeral/Masked/Edge, objectID2 = 0) and Friend
//! records share the same record type and the same CSV:
//!
//! `run1,objectID1,run2,objectID2,hitOrMiss,separation_arcsec,bundleID`
//!
//! sorted by (run1, objectID1, run2, objectID2). The separation field is
//! empty for misses.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use thiserror::Error;

use crate::catalog::{CatalogError, CatalogSet, ClassificationDistance, RunSet};
use crate::zones::{ZoneError, ZoneIndex};

#[derive(Debug, Error)]
pub enum MatchError {
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Zone(#[from] ZoneError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{source_name}:{line}: {reason}")]
    Parse {
        source_name: String,
        line: u64,
        reason: String,
    },
}

/// Floor applied to the default zone height, matching the classic 30"
/// neighborhood radius.
pub const MIN_ZONE_HEIGHT_ARCSEC: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    Hit,
    Ephemeral,
    Masked,
    Edge,
    Friend,
}

impl Verdict {
    pub fn is_miss(self) -> bool {
        matches!(self, Verdict::Ephemeral | Verdict::Masked | Verdict::Edge)
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Hit => "Hit",
            Verdict::Ephemeral => "Ephemeral",
            Verdict::Masked => "Masked",
            Verdict::Edge => "Edge",
            Verdict::Friend => "Friend",
        })
    }
}

impl FromStr for Verdict {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "Hit" => Ok(Verdict::Hit),
            "Ephemeral" => Ok(Verdict::Ephemeral),
            "Masked" => Ok(Verdict::Masked),
            "Edge" => Ok(Verdict::Edge),
            "Friend" => Ok(Verdict::Friend),
            other => Err(format!("unknown verdict {other:?}")),
        }
    }
}

/// One directed match-table row. objectID2 is 0 for misses; bundleID is
/// 0 until the fof stage assigns it.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchRecord {
    pub run1: String,
    pub object_id1: u64,
    pub run2: String,
    pub object_id2: u64,
    pub verdict: Verdict,
    pub separation_arcsec: Option<f64>,
    pub bundle_id: u64,
}

impl MatchRecord {
    fn sort_key(&self) -> (&str, u64, &str, u64) {
        (&self.run1, self.object_id1, &self.run2, self.object_id2)
    }
}

/// Canonical record order: (run1, objectID1, run2, objectID2).
pub fn sort_canonical(records: &mut [MatchRecord]) {
    records.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
}

/// Computes all Hit records via the zone join.
///
/// The join radius is the largest classification distance any object
/// pair can attain (for `Scaled`, driven by the largest position error
/// in the catalog). When no zone height is given, the default is the
/// largest run-pair distance floored at 30", raised to the radius if the
/// per-object errors push past it; an explicit zone height below the
/// radius is an error.
pub fn compute_hits(
    catalog: &CatalogSet,
    runs: &RunSet,
    dist: &ClassificationDistance,
    zone_height_arcsec: Option<f64>,
) -> Result<Vec<MatchRecord>, MatchError> {
    dist.validate()?;
    runs.check_covers(catalog)?;
    if catalog.len() < 2 {
        return Ok(Vec::new());
    }
    let defaults: HashMap<&str, f64> =
        runs.iter().map(|r| (r.run_id(), r.default_pos_err_arcsec())).collect();
    let max_err = catalog
        .objects()
        .map(|o| o.effective_position_error(defaults[o.run_id()]))
        .fold(0.0, f64::max);
    let radius = dist.eval(max_err, max_err);
    let zone_height = match zone_height_arcsec {
        Some(h) => h,
        None => default_zone_height(runs, dist).max(radius),
    };
    let index = ZoneIndex::build(catalog, zone_height)?;
    let mut records = Vec::new();
    for (a, b, sep) in index.neighbors_within(radius)? {
        if a.run_id() == b.run_id() {
            continue;
        }
        let e1 = a.effective_position_error(defaults[a.run_id()]);
        let e2 = b.effective_position_error(defaults[b.run_id()]);
        if sep < dist.eval(e1, e2) {
            records.push(MatchRecord {
                run1: a.run_id().to_string(),
                object_id1: a.object_id(),
                run2: b.run_id().to_string(),
                object_id2: b.object_id(),
                verdict: Verdict::Hit,
                separation_arcsec: Some(sep),
                bundle_id: 0,
            });
        }
    }
    sort_canonical(&mut records);
    Ok(records)
}

/// Largest run-pair classification distance, floored at 30".
pub fn default_zone_height(runs: &RunSet, dist: &ClassificationDistance) -> f64 {
    let mut height = MIN_ZONE_HEIGHT_ARCSEC;
    let metas: Vec<_> = runs.iter().collect();
    for (i, a) in metas.iter().enumerate() {
        for b in &metas[i + 1..] {
            height =
                height.max(dist.eval(a.default_pos_err_arcsec(), b.default_pos_err_arcsec()));
        }
    }
    height
}

/// True iff every Hit record's mirror image is present.
pub fn hit_symmetry_holds(records: &[MatchRecord]) -> bool {
    let hits: std::collections::HashSet<(&str, u64, &str, u64)> = records
        .iter()
        .filter(|r| r.verdict == Verdict::Hit)
        .map(|r| (r.run1.as_str(), r.object_id1, r.run2.as_str(), r.object_id2))
        .collect();
    hits.iter().all(|&(r1, o1, r2, o2)| hits.contains(&(r2, o2, r1, o1)))
}

/// Writes records in canonical order (sorting them in place first).
pub fn write_match_csv(records: &mut [MatchRecord], writer: impl Write) -> Result<(), MatchError> {
    sort_canonical(records);
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "run1",
        "objectID1",
        "run2",
        "objectID2",
        "hitOrMiss",
        "separation_arcsec",
        "bundleID",
    ])?;
    for r in records.iter() {
        w.write_record([
            r.run1.as_str(),
            &r.object_id1.to_string(),
            &r.run2,
            &r.object_id2.to_string(),
            &r.verdict.to_string(),
            &r.separation_arcsec.map(|s| s.to_string()).unwrap_or_default(),
            &r.bundle_id.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a match CSV, enforcing the record invariants (misses carry
/// objectID2 = 0 and no separation; hits and friends carry both).
pub fn read_match_csv(
    reader: impl Read,
    source_name: &str,
) -> Result<Vec<MatchRecord>, MatchError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let parse_err = |line: u64, reason: String| MatchError::Parse {
        source_name: source_name.to_string(),
        line,
        reason,
    };
    let mut records = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 7 {
            return Err(parse_err(line, format!("expected 7 fields, got {}", record.len())));
        }
        let field = |i: usize| record.get(i).unwrap_or("");
        let verdict: Verdict = field(4).parse().map_err(|e| parse_err(line, e))?;
        let object_id2: u64 = field(3)
            .parse()
            .map_err(|e| parse_err(line, format!("objectID2 {:?}: {e}", field(3))))?;
        let separation = match field(5) {
            "" => None,
            s => Some(
                s.parse::<f64>()
                    .map_err(|e| parse_err(line, format!("separation {s:?}: {e}")))?,
            ),
        };
        match verdict {
            Verdict::Hit | Verdict::Friend => {
                if object_id2 == 0 || separation.is_none() {
                    return Err(parse_err(
                        line,
                        format!("{verdict} record needs objectID2 > 0 and a separation"),
                    ));
                }
            }
            _ => {
                if object_id2 != 0 || separation.is_some() {
                    return Err(parse_err(
                        line,
                        format!("{verdict} record must have objectID2 = 0 and no separation"),
                    ));
                }
            }
        }
        records.push(MatchRecord {
            run1: field(0).to_string(),
            object_id1: field(1)
                .parse()
                .map_err(|e| parse_err(line, format!("objectID1 {:?}: {e}", field(1))))?,
            run2: field(2).to_string(),
            object_id2,
            verdict,
            separation_arcsec: separation,
            bundle_id: field(6)
                .parse()
                .map_err(|e| parse_err(line, format!("bundleID {:?}: {e}", field(6))))?,
        });
    }
    Ok(records)
}
