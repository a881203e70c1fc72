//! Catalog and run-metadata model: loading, validation, canonical export,
//! and the pluggable classification-distance strategy.
//!
//! Catalog CSV schema: `runID,objectID,ra_deg,dec_deg,posErr_arcsec[,attr...]`
//! with ra in [0, 360), dec in [-90, 90], objectID > 0 (0 is the miss
//! sentinel). The posErr field may be empty; the run's default applies.
//! Attribute columns are opaque pass-through scalars.
//!
//! Run metadata JSON schema:
//! `{ "runID", "footprint", "masks", "defaultPosErr_arcsec", "epoch_mjd" }`
//! with footprint/masks in the Region JSON form.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::geometry::{GeometryError, Region, SkyPosition};

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("{source_name}:{line}: {reason}")]
    Parse {
        source_name: String,
        line: u64,
        reason: String,
    },
    #[error("{source_name}: bad header: {reason}")]
    Header {
        source_name: String,
        reason: String,
    },
    #[error("duplicate object ({run_id}, {object_id})")]
    DuplicateObject { run_id: String, object_id: u64 },
    #[error("run {0:?} not registered in the catalog set")]
    UnknownRun(String),
    #[error("run {run_id:?}: attribute columns {got:?} do not match previously seen {expected:?}")]
    AttrSchemaMismatch {
        run_id: String,
        expected: Vec<String>,
        got: Vec<String>,
    },
    #[error("objectID must be positive (got {0})")]
    NonPositiveObjectId(u64),
    #[error("ra {0} degrees outside [0, 360)")]
    RaOutOfRange(f64),
    #[error("position error {0} arcseconds must be positive and finite")]
    BadPositionError(f64),
    #[error("non-finite attribute value {0}")]
    BadAttrValue(f64),
    #[error("classification distance spec {0:?}: expected fixed:<arcsec> or scaled:<k>")]
    BadDistanceSpec(String),
    #[error("classification distance parameter {0} must be positive and finite")]
    BadDistanceParam(f64),
    #[error("run {0:?}: footprint is empty")]
    EmptyFootprint(String),
    #[error("duplicate run metadata for {0:?}")]
    DuplicateRun(String),
    #[error("runs {0:?} appear in the catalog but have no metadata")]
    MissingRunMetadata(Vec<String>),
    #[error("cannot export mixed attribute schemas in one file (runs {0:?} and {1:?} differ)")]
    MixedSchemas(String, String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Leading columns every catalog CSV must carry, in order.
const FIXED_COLUMNS: [&str; 5] = ["runID", "objectID", "ra_deg", "dec_deg", "posErr_arcsec"];

/// One detection from one run.
///
/// The parsed (ra, dec) pair is kept alongside the derived unit vector so
/// exports reproduce the ingested text exactly (shortest-round-trip float
/// formatting is stable once a value has passed through it).
#[derive(Debug, Clone, PartialEq)]
pub struct CatalogObject {
    run_id: String,
    object_id: u64,
    ra_deg: f64,
    dec_deg: f64,
    position: SkyPosition,
    position_error: Option<f64>,
    attrs: Vec<f64>,
}

impl CatalogObject {
    pub fn new(
        run_id: impl Into<String>,
        object_id: u64,
        ra_deg: f64,
        dec_deg: f64,
        position_error: Option<f64>,
        attrs: Vec<f64>,
    ) -> Result<Self, CatalogError> {
        if object_id == 0 {
            return Err(CatalogError::NonPositiveObjectId(object_id));
        }
        if !ra_deg.is_finite() || !(0.0..360.0).contains(&ra_deg) {
            return Err(CatalogError::RaOutOfRange(ra_deg));
        }
        if let Some(e) = position_error {
            if !e.is_finite() || e <= 0.0 {
                return Err(CatalogError::BadPositionError(e));
            }
        }
        for &a in &attrs {
            if !a.is_finite() {
                return Err(CatalogError::BadAttrValue(a));
            }
        }
        let position = SkyPosition::from_radec_deg(ra_deg, dec_deg)?;
        Ok(CatalogObject {
            run_id: run_id.into(),
            object_id,
            ra_deg,
            dec_deg,
            position,
            position_error,
            attrs,
        })
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn object_id(&self) -> u64 {
        self.object_id
    }

    pub fn ra_deg(&self) -> f64 {
        self.ra_deg
    }

    pub fn dec_deg(&self) -> f64 {
        self.dec_deg
    }

    pub fn position(&self) -> &SkyPosition {
        &self.position
    }

    /// Per-object error when the CSV carried one.
    pub fn position_error(&self) -> Option<f64> {
        self.position_error
    }

    /// Per-object error, falling back to the run default.
    pub fn effective_position_error(&self, run_default: f64) -> f64 {
        self.position_error.unwrap_or(run_default)
    }

    pub fn attrs(&self) -> &[f64] {
        &self.attrs
    }
}

/// All objects of one run plus that run's attribute column names.
#[derive(Debug, Clone, Default)]
pub struct RunCatalog {
    run_id: String,
    attr_names: Vec<String>,
    objects: BTreeMap<u64, CatalogObject>,
}

impl RunCatalog {
    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn attr_names(&self) -> &[String] {
        &self.attr_names
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn get(&self, object_id: u64) -> Option<&CatalogObject> {
        self.objects.get(&object_id)
    }

    /// Objects in ascending objectID order.
    pub fn objects(&self) -> impl Iterator<Item = &CatalogObject> {
        self.objects.values()
    }
}

/// Catalogs for any number of runs, indexed by (runID, objectID).
#[derive(Debug, Clone, Default)]
pub struct CatalogSet {
    runs: BTreeMap<String, RunCatalog>,
}

impl CatalogSet {
    pub fn new() -> Self {
        CatalogSet::default()
    }

    /// Registers a run (or checks the attribute schema of an existing one).
    pub fn ensure_run(&mut self, run_id: &str, attr_names: &[String]) -> Result<(), CatalogError> {
        match self.runs.get(run_id) {
            Some(existing) if existing.attr_names != attr_names => {
                Err(CatalogError::AttrSchemaMismatch {
                    run_id: run_id.to_string(),
                    expected: existing.attr_names.clone(),
                    got: attr_names.to_vec(),
                })
            }
            Some(_) => Ok(()),
            None => {
                self.runs.insert(
                    run_id.to_string(),
                    RunCatalog {
                        run_id: run_id.to_string(),
                        attr_names: attr_names.to_vec(),
                        objects: BTreeMap::new(),
                    },
                );
                Ok(())
            }
        }
    }

    pub fn insert(&mut self, obj: CatalogObject) -> Result<(), CatalogError> {
        let run = self
            .runs
            .get_mut(&obj.run_id)
            .ok_or_else(|| CatalogError::UnknownRun(obj.run_id.clone()))?;
        if obj.attrs.len() != run.attr_names.len() {
            return Err(CatalogError::AttrSchemaMismatch {
                run_id: obj.run_id.clone(),
                expected: run.attr_names.clone(),
                got: vec![format!("<{} values>", obj.attrs.len())],
            });
        }
        if run.objects.contains_key(&obj.object_id) {
            return Err(CatalogError::DuplicateObject {
                run_id: obj.run_id.clone(),
                object_id: obj.object_id,
            });
        }
        run.objects.insert(obj.object_id, obj);
        Ok(())
    }

    /// Loads one catalog CSV (which may mix runs). Returns the number of
    /// objects added. Attribute columns come from this file's header; a
    /// run already present must carry the same attribute schema.
    pub fn load_csv(
        &mut self,
        reader: impl Read,
        source_name: &str,
    ) -> Result<usize, CatalogError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() < FIXED_COLUMNS.len() {
            return Err(CatalogError::Header {
                source_name: source_name.to_string(),
                reason: format!("expected at least {} columns", FIXED_COLUMNS.len()),
            });
        }
        for (i, want) in FIXED_COLUMNS.iter().enumerate() {
            if &headers[i] != *want {
                return Err(CatalogError::Header {
                    source_name: source_name.to_string(),
                    reason: format!("column {i} is {:?}, expected {want:?}", &headers[i]),
                });
            }
        }
        let attr_names: Vec<String> =
            headers.iter().skip(FIXED_COLUMNS.len()).map(str::to_string).collect();

        let parse_err = |line: u64, reason: String| CatalogError::Parse {
            source_name: source_name.to_string(),
            line,
            reason,
        };
        let mut added = 0usize;
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            let field = |i: usize| record.get(i).unwrap_or("");
            let run_id = field(0);
            if run_id.is_empty() {
                return Err(parse_err(line, "empty runID".into()));
            }
            let object_id: u64 = field(1)
                .parse()
                .map_err(|e| parse_err(line, format!("objectID {:?}: {e}", field(1))))?;
            let ra: f64 = field(2)
                .parse()
                .map_err(|e| parse_err(line, format!("ra_deg {:?}: {e}", field(2))))?;
            let dec: f64 = field(3)
                .parse()
                .map_err(|e| parse_err(line, format!("dec_deg {:?}: {e}", field(3))))?;
            let pos_err = match field(4) {
                "" => None,
                s => Some(
                    s.parse::<f64>()
                        .map_err(|e| parse_err(line, format!("posErr_arcsec {s:?}: {e}")))?,
                ),
            };
            let mut attrs = Vec::with_capacity(attr_names.len());
            for (k, name) in attr_names.iter().enumerate() {
                let s = field(FIXED_COLUMNS.len() + k);
                attrs.push(
                    s.parse::<f64>()
                        .map_err(|e| parse_err(line, format!("attribute {name} {s:?}: {e}")))?,
                );
            }
            let obj = CatalogObject::new(run_id, object_id, ra, dec, pos_err, attrs)
                .map_err(|e| parse_err(line, e.to_string()))?;
            self.ensure_run(run_id, &attr_names)?;
            self.insert(obj)?;
            added += 1;
        }
        Ok(added)
    }

    /// Writes one run's objects in canonical order (ascending objectID).
    pub fn write_csv_run(&self, run_id: &str, writer: impl Write) -> Result<(), CatalogError> {
        let run = self
            .runs
            .get(run_id)
            .ok_or_else(|| CatalogError::UnknownRun(run_id.to_string()))?;
        write_csv(writer, &run.attr_names, run.objects())
    }

    /// Writes every run into one file, sorted by (runID, objectID).
    /// All runs must share one attribute schema.
    pub fn write_csv_all(&self, writer: impl Write) -> Result<(), CatalogError> {
        let mut schema: Option<(&str, &[String])> = None;
        for run in self.runs.values() {
            match schema {
                None => schema = Some((&run.run_id, &run.attr_names)),
                Some((first, names)) if names != run.attr_names.as_slice() => {
                    return Err(CatalogError::MixedSchemas(first.to_string(), run.run_id.clone()))
                }
                Some(_) => {}
            }
        }
        let attr_names = schema.map(|(_, n)| n).unwrap_or(&[]);
        write_csv(writer, attr_names, self.objects())
    }

    pub fn run(&self, run_id: &str) -> Option<&RunCatalog> {
        self.runs.get(run_id)
    }

    /// Runs in ascending runID order.
    pub fn runs(&self) -> impl Iterator<Item = &RunCatalog> {
        self.runs.values()
    }

    pub fn run_ids(&self) -> Vec<String> {
        self.runs.keys().cloned().collect()
    }

    pub fn get(&self, run_id: &str, object_id: u64) -> Option<&CatalogObject> {
        self.runs.get(run_id).and_then(|r| r.objects.get(&object_id))
    }

    /// Total object count across runs.
    pub fn len(&self) -> usize {
        self.runs.values().map(|r| r.objects.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All objects, sorted by (runID, objectID).
    pub fn objects(&self) -> impl Iterator<Item = &CatalogObject> {
        self.runs.values().flat_map(|r| r.objects.values())
    }
}

fn write_csv<'a>(
    writer: impl Write,
    attr_names: &[String],
    objects: impl Iterator<Item = &'a CatalogObject>,
) -> Result<(), CatalogError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = FIXED_COLUMNS.to_vec();
    header.extend(attr_names.iter().map(String::as_str));
    w.write_record(&header)?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for obj in objects {
        row.clear();
        row.push(obj.run_id.clone());
        row.push(obj.object_id.to_string());
        row.push(obj.ra_deg.to_string());
        row.push(obj.dec_deg.to_string());
        row.push(obj.position_error.map(|e| e.to_string()).unwrap_or_default());
        row.extend(obj.attrs.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Footprint, masks, and defaults for one observation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    #[serde(rename = "runID")]
    run_id: String,
    footprint: Region,
    masks: Region,
    #[serde(rename = "defaultPosErr_arcsec")]
    default_pos_err_arcsec: f64,
    #[serde(rename = "epoch_mjd", default)]
    epoch_mjd: Option<f64>,
}

impl RunMetadata {
    pub fn new(
        run_id: impl Into<String>,
        footprint: Region,
        masks: Region,
        default_pos_err_arcsec: f64,
        epoch_mjd: Option<f64>,
    ) -> Result<Self, CatalogError> {
        let run_id = run_id.into();
        if footprint.is_empty() {
            return Err(CatalogError::EmptyFootprint(run_id));
        }
        if !default_pos_err_arcsec.is_finite() || default_pos_err_arcsec <= 0.0 {
            return Err(CatalogError::BadPositionError(default_pos_err_arcsec));
        }
        Ok(RunMetadata { run_id, footprint, masks, default_pos_err_arcsec, epoch_mjd })
    }

    pub fn from_json_reader(reader: impl Read) -> Result<Self, CatalogError> {
        let raw: RunMetadata = serde_json::from_reader(reader)?;
        // Re-validate: serde only checks shape.
        RunMetadata::new(
            raw.run_id,
            raw.footprint,
            raw.masks,
            raw.default_pos_err_arcsec,
            raw.epoch_mjd,
        )
    }

    pub fn to_json_string(&self) -> Result<String, CatalogError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn footprint(&self) -> &Region {
        &self.footprint
    }

    pub fn masks(&self) -> &Region {
        &self.masks
    }

    pub fn default_pos_err_arcsec(&self) -> f64 {
        self.default_pos_err_arcsec
    }

    pub fn epoch_mjd(&self) -> Option<f64> {
        self.epoch_mjd
    }
}

/// Run metadata keyed by runID, iterated in sorted order.
#[derive(Debug, Clone, Default)]
pub struct RunSet {
    runs: BTreeMap<String, RunMetadata>,
}

impl RunSet {
    pub fn new() -> Self {
        RunSet::default()
    }

    pub fn insert(&mut self, run: RunMetadata) -> Result<(), CatalogError> {
        if self.runs.contains_key(&run.run_id) {
            return Err(CatalogError::DuplicateRun(run.run_id));
        }
        self.runs.insert(run.run_id.clone(), run);
        Ok(())
    }

    pub fn get(&self, run_id: &str) -> Option<&RunMetadata> {
        self.runs.get(run_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &RunMetadata> {
        self.runs.values()
    }

    pub fn ids(&self) -> Vec<String> {
        self.runs.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.runs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    /// Every run present in the catalog must have metadata here.
    pub fn check_covers(&self, catalog: &CatalogSet) -> Result<(), CatalogError> {
        let missing: Vec<String> = catalog
            .runs()
            .filter(|r| !self.runs.contains_key(r.run_id()))
            .map(|r| r.run_id().to_string())
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(CatalogError::MissingRunMetadata(missing))
        }
    }
}

/// An object sitting outside its run's (slightly buffered) footprint.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestWarning {
    pub run_id: String,
    pub object_id: u64,
}

impl fmt::Display for IngestWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "object ({}, {}) lies outside its run footprint", self.run_id, self.object_id)
    }
}

/// Flags every object not inside buffer(footprint, 1"). The slack absorbs
/// boundary round-off; real strays are what this is for.
pub fn validate_containment(catalog: &CatalogSet, runs: &RunSet) -> Vec<IngestWarning> {
    let mut warnings = Vec::new();
    for run in catalog.runs() {
        let Some(meta) = runs.get(run.run_id()) else { continue };
        let Ok(buffered) = meta.footprint().buffer(1.0) else { continue };
        for obj in run.objects() {
            if !buffered.contains(obj.position()) {
                warnings.push(IngestWarning {
                    run_id: run.run_id().to_string(),
                    object_id: obj.object_id(),
                });
            }
        }
    }
    warnings
}

/// Angular threshold below which two cross-run detections are the same
/// object. `Fixed` ignores the per-object errors; `Scaled` multiplies
/// the larger of the two by a constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClassificationDistance {
    Fixed(f64),
    Scaled(f64),
}

impl ClassificationDistance {
    pub fn validate(&self) -> Result<(), CatalogError> {
        let p = match *self {
            ClassificationDistance::Fixed(d) => d,
            ClassificationDistance::Scaled(k) => k,
        };
        if !p.is_finite() || p <= 0.0 {
            return Err(CatalogError::BadDistanceParam(p));
        }
        Ok(())
    }

    /// Threshold for a pair with the given position errors (arcseconds).
    pub fn distance(&self, e1: f64, e2: f64) -> Result<f64, CatalogError> {
        for e in [e1, e2] {
            if !e.is_finite() || e <= 0.0 {
                return Err(CatalogError::BadPositionError(e));
            }
        }
        self.validate()?;
        Ok(self.eval(e1, e2))
    }

    /// Same as [`ClassificationDistance::distance`] for inputs already
    /// validated at catalog/metadata load time (hot-path form).
    pub(crate) fn eval(&self, e1: f64, e2: f64) -> f64 {
        match *self {
            ClassificationDistance::Fixed(d) => d,
            ClassificationDistance::Scaled(k) => k * e1.max(e2),
        }
    }
}

impl fmt::Display for ClassificationDistance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ClassificationDistance::Fixed(d) => write!(f, "fixed:{d}"),
            ClassificationDistance::Scaled(k) => write!(f, "scaled:{k}"),
        }
    }
}

impl FromStr for ClassificationDistance {
    type Err = CatalogError;

    /// Accepts `fixed:<arcsec>` or `scaled:<k>`.
    fn from_str(s: &str) -> Result<Self, CatalogError> {
        let bad = || CatalogError::BadDistanceSpec(s.to_string());
        let (kind, param) = s.split_once(':').ok_or_else(bad)?;
        let value: f64 = param.parse().map_err(|_| bad())?;
        let dist = match kind {
            "fixed" => ClassificationDistance::Fixed(value),
            "scaled" => ClassificationDistance::Scaled(value),
            _ => return Err(bad()),
        };
        dist.validate()?;
        Ok(dist)
    }
}

impl Serialize for ClassificationDistance {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ClassificationDistance {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    const CSV: &str = "runID,objectID,ra_deg,dec_deg,posErr_arcsec,mag\n\
                       A,1,10.5,-3.25,0.1,17.2\n\
                       A,2,11.125,0.5,,18\n\
                       B,7,10.5001,-3.25,0.2,16.9\n";

    #[test]
    fn load_round_trips_fields() {
        let mut set = CatalogSet::new();
        let added = set.load_csv(CSV.as_bytes(), "test.csv").unwrap();
        assert_eq!(added, 3);
        assert_eq!(set.len(), 3);
        let a2 = set.get("A", 2).unwrap();
        assert_eq!(a2.ra_deg(), 11.125);
        assert_eq!(a2.position_error(), None);
        assert_eq!(a2.effective_position_error(0.15), 0.15);
        assert_eq!(a2.attrs(), &[18.0]);
        let b7 = set.get("B", 7).unwrap();
        assert_eq!(b7.effective_position_error(0.15), 0.2);
        assert_eq!(set.run("A").unwrap().attr_names(), &["mag".to_string()]);
    }

    #[test]
    fn empty_stream_loads_zero() {
        let mut set = CatalogSet::new();
        let added = set
            .load_csv("runID,objectID,ra_deg,dec_deg,posErr_arcsec\n".as_bytes(), "empty.csv")
            .unwrap();
        assert_eq!(added, 0);
        assert!(set.is_empty());
    }

    #[test]
    fn duplicate_key_names_the_duplicate() {
        let csv = "runID,objectID,ra_deg,dec_deg,posErr_arcsec\nA,5,1,1,0.1\nA,5,2,2,0.1\n";
        let mut set = CatalogSet::new();
        let err = set.load_csv(csv.as_bytes(), "dup.csv").unwrap_err();
        match err {
            CatalogError::DuplicateObject { run_id, object_id } => {
                assert_eq!((run_id.as_str(), object_id), ("A", 5));
            }
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn malformed_rows_carry_line_numbers() {
        let csv = "runID,objectID,ra_deg,dec_deg,posErr_arcsec\nA,1,1,1,0.1\nA,2,badra,1,0.1\n";
        let mut set = CatalogSet::new();
        let err = set.load_csv(csv.as_bytes(), "bad.csv").unwrap_err().to_string();
        assert!(err.contains("bad.csv:3"), "missing line number: {err}");
        assert!(err.contains("ra_deg"), "missing field name: {err}");

        let dec = "runID,objectID,ra_deg,dec_deg,posErr_arcsec\nA,1,1,95,0.1\n";
        let err = CatalogSet::new().load_csv(dec.as_bytes(), "dec.csv").unwrap_err().to_string();
        assert!(err.contains("declination"), "dec range not reported: {err}");

        let zero = "runID,objectID,ra_deg,dec_deg,posErr_arcsec\nA,0,1,1,0.1\n";
        let err = CatalogSet::new().load_csv(zero.as_bytes(), "zero.csv").unwrap_err().to_string();
        assert!(err.contains("positive"), "objectID 0 not rejected: {err}");
    }

    #[test]
    fn header_is_validated() {
        let csv = "runID,objectID,ra,dec,posErr_arcsec\nA,1,1,1,0.1\n";
        let err = CatalogSet::new().load_csv(csv.as_bytes(), "h.csv").unwrap_err().to_string();
        assert!(err.contains("bad header"), "{err}");
    }

    #[test]
    fn export_is_canonical_and_byte_stable() {
        let shuffled = "runID,objectID,ra_deg,dec_deg,posErr_arcsec,mag\n\
                        B,7,10.5001,-3.25,0.2,16.9\n\
                        A,2,11.125,0.5,,18\n\
                        A,1,10.50,-3.25,0.1,17.20\n";
        let mut set = CatalogSet::new();
        set.load_csv(shuffled.as_bytes(), "s.csv").unwrap();
        let mut out1 = Vec::new();
        set.write_csv_all(&mut out1).unwrap();
        let mut set2 = CatalogSet::new();
        set2.load_csv(out1.as_slice(), "round1.csv").unwrap();
        let mut out2 = Vec::new();
        set2.write_csv_all(&mut out2).unwrap();
        assert_eq!(out1, out2, "export-load-export must be byte-stable");
        let text = String::from_utf8(out1).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[1].starts_with("A,1,"), "canonical order: {lines:?}");
        assert!(lines[3].starts_with("B,7,"), "canonical order: {lines:?}");
    }

    #[test]
    fn per_run_export_keeps_schema() {
        let mut set = CatalogSet::new();
        set.load_csv(CSV.as_bytes(), "t.csv").unwrap();
        let mut buf = Vec::new();
        set.write_csv_run("B", &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().nth(1).unwrap().starts_with("B,7,"));
    }

    #[test]
    fn run_metadata_json_round_trip() {
        let center = SkyPosition::from_radec_deg(20.0, 0.0).unwrap();
        let meta = RunMetadata::new(
            "A",
            Region::cap("footprint:A", center, 7200.0).unwrap(),
            Region::empty("masks:A"),
            0.1,
            Some(53000.5),
        )
        .unwrap();
        let json = meta.to_json_string().unwrap();
        assert!(json.contains("\"runID\":\"A\""));
        assert!(json.contains("\"defaultPosErr_arcsec\":0.1"));
        let back = RunMetadata::from_json_reader(json.as_bytes()).unwrap();
        assert_eq!(back, meta);
        assert_eq!(back.to_json_string().unwrap(), json);
    }

    #[test]
    fn run_metadata_rejects_empty_footprint() {
        assert!(matches!(
            RunMetadata::new("A", Region::empty("f"), Region::empty("m"), 0.1, None),
            Err(CatalogError::EmptyFootprint(_))
        ));
        let center = SkyPosition::from_radec_deg(0.0, 0.0).unwrap();
        assert!(RunMetadata::new(
            "A",
            Region::cap("f", center, 3600.0).unwrap(),
            Region::empty("m"),
            0.0,
            None
        )
        .is_err());
    }

    #[test]
    fn containment_warnings_flag_strays() {
        let center = SkyPosition::from_radec_deg(50.0, 0.0).unwrap();
        let mut runs = RunSet::new();
        runs.insert(
            RunMetadata::new(
                "A",
                Region::cap("footprint:A", center, 3600.0).unwrap(),
                Region::empty("masks:A"),
                0.1,
                None,
            )
            .unwrap(),
        )
        .unwrap();
        let mut set = CatalogSet::new();
        set.ensure_run("A", &[]).unwrap();
        set.insert(CatalogObject::new("A", 1, 50.0, 0.5, None, vec![]).unwrap()).unwrap();
        set.insert(CatalogObject::new("A", 2, 50.0, 5.0, None, vec![]).unwrap()).unwrap();
        let warnings = validate_containment(&set, &runs);
        assert_eq!(warnings.len(), 1);
        assert_eq!(warnings[0].object_id, 2);
        runs.check_covers(&set).unwrap();

        let mut orphan = CatalogSet::new();
        orphan.ensure_run("Z", &[]).unwrap();
        assert!(runs.check_covers(&orphan).is_err());
    }

    #[test]
    fn classification_distance_sdss_choice() {
        // Survey precision 0.1" with a 1.0" threshold: fixed ignores errors.
        let d = ClassificationDistance::Fixed(1.0);
        assert_eq!(d.distance(0.1, 0.1).unwrap(), 1.0);
        let s = ClassificationDistance::Scaled(3.0);
        assert!((s.distance(0.1, 0.2).unwrap() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn classification_distance_symmetric_and_positive() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let strategies =
            [ClassificationDistance::Fixed(0.7), ClassificationDistance::Scaled(2.5)];
        for _ in 0..200 {
            let e1: f64 = rng.gen_range(1e-3..10.0);
            let e2: f64 = rng.gen_range(1e-3..10.0);
            for s in strategies {
                let d12 = s.distance(e1, e2).unwrap();
                let d21 = s.distance(e2, e1).unwrap();
                assert_eq!(d12, d21, "{s} not symmetric");
                assert!(d12 > 0.0);
            }
        }
    }

    #[test]
    fn classification_distance_rejects_bad_input() {
        assert!(ClassificationDistance::Fixed(1.0).distance(0.0, 0.1).is_err());
        assert!(ClassificationDistance::Fixed(1.0).distance(0.1, -1.0).is_err());
        assert!(ClassificationDistance::Fixed(-1.0).validate().is_err());
        assert!(ClassificationDistance::Scaled(f64::NAN).validate().is_err());
    }

    #[test]
    fn distance_spec_parsing() {
        assert_eq!(
            "fixed:1.0".parse::<ClassificationDistance>().unwrap(),
            ClassificationDistance::Fixed(1.0)
        );
        assert_eq!(
            "scaled:3".parse::<ClassificationDistance>().unwrap(),
            ClassificationDistance::Scaled(3.0)
        );
        for bad in ["fixed", "fixed:", "fixed:x", "linear:2", "scaled:-1", "scaled:0"] {
            assert!(bad.parse::<ClassificationDistance>().is_err(), "{bad} should fail");
        }
        let json = serde_json::to_string(&ClassificationDistance::Fixed(1.0)).unwrap();
        assert_eq!(json, "\"fixed:1\"");
        let back: ClassificationDistance = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ClassificationDistance::Fixed(1.0));
    }
}
