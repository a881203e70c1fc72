//! Synthetic multi-run sky generator with exhaustive ground-truth labels.
//!
//! Objects are planted so that their eventual classification is forced
//! by construction, never inferred by running the classifier:
//!
//! - base objects sit deep inside the common footprint core, far from
//!   every boundary and mask, and appear in every run → all Hits;
//! - ephemeral objects are placed like base objects but deleted from one
//!   target run;
//! - masked objects sit well inside one of the target run's masks and
//!   are deleted from that run;
//! - edge objects sit in the thin band just *outside* the target run's
//!   footprint (inside the other runs), so the target misses them and
//!   the miss falls in the edge zone.
//!
//! Separating margins are 10x the run-pair classification distance, and
//! distinct objects are kept at least that far apart, so no chance
//! cross-hits or ambiguous classifications can occur. Edge objects get
//! no astrometric jitter: the band is a fraction of the classification
//! distance wide and jitter could push them across it.
//!
//! Generation is single-threaded and draws from one seeded stream in a
//! fixed order, so a seed determines every output byte.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{
    CatalogError, CatalogObject, CatalogSet, ClassificationDistance, RunMetadata, RunSet,
};
use crate::geometry::{GeometryError, Region, SkyPosition, ARCSEC_PER_RAD};
use crate::matching::Verdict;

#[derive(Debug, Error)]
pub enum SkygenError {
    #[error("invalid scenario: {0}")]
    BadScenario(String),
    #[error("cannot place {class} object: {detail}")]
    InfeasiblePlacement { class: &'static str, detail: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum ShapeSpec {
    Strip {
        ra_min_deg: f64,
        ra_max_deg: f64,
        dec_min_deg: f64,
        dec_max_deg: f64,
    },
    Cap {
        ra_deg: f64,
        dec_deg: f64,
        radius_arcsec: f64,
    },
}

impl ShapeSpec {
    fn to_region(&self, region_id: &str) -> Result<Region, GeometryError> {
        match *self {
            ShapeSpec::Strip {
                ra_min_deg,
                ra_max_deg,
                dec_min_deg,
                dec_max_deg,
            } => Region::strip(region_id, ra_min_deg, ra_max_deg, dec_min_deg, dec_max_deg),
            ShapeSpec::Cap {
                ra_deg,
                dec_deg,
                radius_arcsec,
            } => Region::cap(
                region_id,
                SkyPosition::from_radec_deg(ra_deg, dec_deg)?,
                radius_arcsec,
            ),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CapSpec {
    pub ra_deg: f64,
    pub dec_deg: f64,
    pub radius_arcsec: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSpec {
    pub run_id: String,
    pub footprint: ShapeSpec,
    #[serde(default)]
    pub masks: Vec<CapSpec>,
    #[serde(default = "default_sigma")]
    pub jitter_sigma_arcsec: f64,
    #[serde(default = "default_sigma")]
    pub default_pos_err_arcsec: f64,
    #[serde(default)]
    pub epoch_mjd: Option<f64>,
}

fn default_sigma() -> f64 {
    0.1
}

/// Injection rates as fractions of the base count. The defaults follow
/// the classic survey breakdown: roughly 11% ephemeral, 0.5% masked,
/// 5% edge.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Injections {
    pub ephemeral_fraction: f64,
    pub masked_fraction: f64,
    pub edge_fraction: f64,
}

impl Default for Injections {
    fn default() -> Self {
        Injections {
            ephemeral_fraction: 0.11,
            masked_fraction: 0.005,
            edge_fraction: 0.05,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub base_count: usize,
    pub distance: ClassificationDistance,
    pub runs: Vec<RunSpec>,
    #[serde(default)]
    pub injections: Injections,
    /// Label emission can be switched off for big performance scenarios.
    #[serde(default = "default_true")]
    pub emit_labels: bool,
}

fn default_true() -> bool {
    true
}

impl Scenario {
    /// The stock two-run configuration: a long equatorial strip crossed
    /// by a tall narrow one, masks on the second, survey-like injection
    /// rates.
    pub fn crossing_strips(seed: u64, base_count: usize) -> Scenario {
        Scenario {
            seed,
            base_count,
            distance: ClassificationDistance::Fixed(1.0),
            runs: vec![
                RunSpec {
                    run_id: "A".into(),
                    footprint: ShapeSpec::Strip {
                        ra_min_deg: 10.0,
                        ra_max_deg: 70.0,
                        dec_min_deg: -2.0,
                        dec_max_deg: 2.0,
                    },
                    masks: vec![],
                    jitter_sigma_arcsec: 0.1,
                    default_pos_err_arcsec: 0.1,
                    epoch_mjd: Some(51075.0),
                },
                RunSpec {
                    run_id: "B".into(),
                    footprint: ShapeSpec::Strip {
                        ra_min_deg: 38.0,
                        ra_max_deg: 42.0,
                        dec_min_deg: -30.0,
                        dec_max_deg: 30.0,
                    },
                    masks: vec![
                        CapSpec {
                            ra_deg: 39.0,
                            dec_deg: 0.8,
                            radius_arcsec: 150.0,
                        },
                        CapSpec {
                            ra_deg: 41.0,
                            dec_deg: -1.0,
                            radius_arcsec: 150.0,
                        },
                    ],
                    jitter_sigma_arcsec: 0.1,
                    default_pos_err_arcsec: 0.1,
                    epoch_mjd: Some(51819.0),
                },
            ],
            injections: Injections::default(),
            emit_labels: true,
        }
    }

    pub fn from_json_reader(reader: impl std::io::Read) -> Result<Scenario, SkygenError> {
        Ok(serde_json::from_reader(reader)?)
    }
}

/// One ground-truth expectation: what the classifier must say about
/// (run1, objectID) with respect to run2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelRecord {
    pub run1: String,
    pub object_id: u64,
    pub run2: String,
    pub expected: Verdict,
}

#[derive(Debug)]
pub struct GeneratedSky {
    pub catalog: CatalogSet,
    pub runs: RunSet,
    pub labels: Vec<LabelRecord>,
}

impl GeneratedSky {
    /// Writes `catalog_<run>.csv`, `run_<run>.json`, and `labels.csv`.
    pub fn write_files(&self, dir: &Path) -> Result<(), SkygenError> {
        fs::create_dir_all(dir)?;
        for run in self.catalog.runs() {
            let file = fs::File::create(dir.join(format!("catalog_{}.csv", run.run_id())))?;
            self.catalog.write_csv_run(run.run_id(), file)?;
        }
        for meta in self.runs.iter() {
            let path = dir.join(format!("run_{}.json", meta.run_id()));
            fs::write(path, meta.to_json_string()?)?;
        }
        let file = fs::File::create(dir.join("labels.csv"))?;
        write_labels_csv(&self.labels, file)?;
        Ok(())
    }
}

pub fn write_labels_csv(labels: &[LabelRecord], writer: impl Write) -> Result<(), SkygenError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["run1", "objectID", "run2", "expectedVerdict"])?;
    for l in labels {
        w.write_record([
            l.run1.as_str(),
            &l.object_id.to_string(),
            &l.run2,
            &l.expected.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels_csv(
    reader: impl std::io::Read,
    source_name: &str,
) -> Result<Vec<LabelRecord>, SkygenError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let mut labels = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |reason: String| SkygenError::BadScenario(format!("{source_name}:{line}: {reason}"));
        if record.len() != 4 {
            return Err(bad(format!("expected 4 fields, got {}", record.len())));
        }
        labels.push(LabelRecord {
            run1: record[0].to_string(),
            object_id: record[1].parse().map_err(|e| bad(format!("objectID: {e}")))?,
            run2: record[2].to_string(),
            expected: record[3].parse().map_err(bad)?,
        });
    }
    Ok(labels)
}

/// The classes an anchor object can belong to. Ephemeral, masked, and
/// edge anchors carry the run they are deleted from.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Class {
    Base,
    Ephemeral { target: usize },
    Masked { target: usize },
    Edge { target: usize },
}

struct Anchor {
    position: SkyPosition,
    class: Class,
    mag: f64,
}

/// Spatial hash over unit vectors for minimum-separation enforcement.
struct SeparationGrid {
    cell: f64,
    min_chord: f64,
    cells: HashMap<(i32, i32, i32), Vec<SkyPosition>>,
}

impl SeparationGrid {
    fn new(min_sep_rad: f64) -> Self {
        let min_chord = 2.0 * (min_sep_rad / 2.0).sin();
        SeparationGrid {
            cell: min_chord.max(1e-12),
            min_chord,
            cells: HashMap::new(),
        }
    }

    fn key(&self, p: &SkyPosition) -> (i32, i32, i32) {
        (
            (p.x() / self.cell).floor() as i32,
            (p.y() / self.cell).floor() as i32,
            (p.z() / self.cell).floor() as i32,
        )
    }

    fn far_enough(&self, p: &SkyPosition) -> bool {
        let (kx, ky, kz) = self.key(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(bucket) = self.cells.get(&(kx + dx, ky + dy, kz + dz)) else {
                        continue;
                    };
                    for q in bucket {
                        let (ex, ey, ez) = (p.x() - q.x(), p.y() - q.y(), p.z() - q.z());
                        if (ex * ex + ey * ey + ez * ez).sqrt() < self.min_chord {
                            return false;
                        }
                    }
                }
            }
        }
        true
    }

    fn insert(&mut self, p: SkyPosition) {
        let key = self.key(&p);
        self.cells.entry(key).or_default().push(p);
    }
}

/// Uniform sample inside the cap of the given angular radius around a
/// center.
fn sample_in_cap(rng: &mut ChaCha8Rng, center: &SkyPosition, radius_rad: f64) -> SkyPosition {
    let (e1, e2) = tangent_basis(center);
    let cos_r = radius_rad.min(std::f64::consts::PI).cos();
    let z: f64 = rng.gen_range(cos_r..=1.0);
    let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let s = (1.0 - z * z).max(0.0).sqrt();
    let (c1, c2) = (phi.cos() * s, phi.sin() * s);
    SkyPosition::from_vector(
        z * center.x() + c1 * e1.0 + c2 * e2.0,
        z * center.y() + c1 * e1.1 + c2 * e2.1,
        z * center.z() + c1 * e1.2 + c2 * e2.2,
    )
    .expect("cap sample is never the zero vector")
}

fn tangent_basis(c: &SkyPosition) -> ((f64, f64, f64), (f64, f64, f64)) {
    // Cross with whichever axis is least aligned with c.
    let (ax, ay, az) = if c.z().abs() < 0.9 { (0.0, 0.0, 1.0) } else { (1.0, 0.0, 0.0) };
    let (ux, uy, uz) = (
        c.y() * az - c.z() * ay,
        c.z() * ax - c.x() * az,
        c.x() * ay - c.y() * ax,
    );
    let n = (ux * ux + uy * uy + uz * uz).sqrt();
    let e1 = (ux / n, uy / n, uz / n);
    let e2 = (
        c.y() * e1.2 - c.z() * e1.1,
        c.z() * e1.0 - c.x() * e1.2,
        c.x() * e1.1 - c.y() * e1.0,
    );
    (e1, e2)
}

/// Isotropic tangent-plane Gaussian offset, redrawn beyond 4 sigma.
fn jitter(rng: &mut ChaCha8Rng, p: &SkyPosition, sigma_arcsec: f64) -> SkyPosition {
    if sigma_arcsec == 0.0 {
        return *p;
    }
    loop {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let r = (-2.0 * u1.ln()).sqrt();
        let (dx, dy) = (r * u2.cos(), r * u2.sin());
        let dist = (dx * dx + dy * dy).sqrt() * sigma_arcsec;
        if dist > 4.0 * sigma_arcsec {
            continue;
        }
        let bearing = dy.atan2(dx);
        return p.offset_by(bearing, dist);
    }
}

const PLACEMENT_ATTEMPTS: usize = 20_000;

struct Placement<'a> {
    rng: &'a mut ChaCha8Rng,
    grid: SeparationGrid,
    /// footprint of each run eroded by the margin
    deep: Vec<Region>,
    /// every mask, buffered by the margin (for avoidance)
    hot_masks: Vec<Region>,
    /// raw masks per run
    masks: Vec<Vec<Region>>,
    core_center: SkyPosition,
    core_radius_rad: f64,
    margin_arcsec: f64,
}

impl Placement<'_> {
    fn away_from_masks(&self, p: &SkyPosition) -> bool {
        !self.hot_masks.iter().any(|m| m.contains(p))
    }

    fn deep_in_all(&self, p: &SkyPosition) -> bool {
        self.deep.iter().all(|fp| fp.contains(p))
    }

    fn deep_in_all_but(&self, p: &SkyPosition, skip: usize) -> bool {
        self.deep.iter().enumerate().all(|(i, fp)| i == skip || fp.contains(p))
    }

    /// Core placement: deep inside every footprint, clear of all masks,
    /// min-separated. Used for base and ephemeral anchors.
    fn sample_core(&mut self, class: &'static str) -> Result<SkyPosition, SkygenError> {
        for _ in 0..PLACEMENT_ATTEMPTS {
            let p = sample_in_cap(self.rng, &self.core_center, self.core_radius_rad);
            if self.deep_in_all(&p) && self.away_from_masks(&p) && self.grid.far_enough(&p) {
                self.grid.insert(p);
                return Ok(p);
            }
        }
        Err(SkygenError::InfeasiblePlacement {
            class,
            detail: format!(
                "no room left in the common core after {PLACEMENT_ATTEMPTS} attempts \
                 (core radius {:.4} deg, margin {} arcsec)",
                self.core_radius_rad.to_degrees(),
                self.margin_arcsec
            ),
        })
    }

    /// Masked placement: at least the margin inside one of the target
    /// run's masks, deep inside every other footprint, clear of other
    /// masks.
    fn sample_masked(&mut self, target: usize) -> Result<SkyPosition, SkygenError> {
        let usable: Vec<(SkyPosition, f64)> = self.masks[target]
            .iter()
            .filter_map(|m| m.bounding_circle())
            .map(|(c, r)| (c, (r - self.margin_arcsec) / ARCSEC_PER_RAD))
            .filter(|(_, r)| *r > 0.0)
            .collect();
        if usable.is_empty() {
            return Err(SkygenError::InfeasiblePlacement {
                class: "masked",
                detail: format!(
                    "target run has no mask wider than the {} arcsec margin",
                    self.margin_arcsec
                ),
            });
        }
        for attempt in 0..PLACEMENT_ATTEMPTS {
            let (center, inner_rad) = &usable[attempt % usable.len()];
            let p = sample_in_cap(self.rng, center, *inner_rad);
            // Confirm the margin against the actual mask region, not
            // just its bounding circle, and keep clear of *other* masks.
            let inside_deeply = self.masks[target]
                .iter()
                .any(|m| m.erode(self.margin_arcsec).map_or(false, |e| e.contains(&p)));
            let off_other_masks = self
                .hot_masks
                .iter()
                .enumerate()
                .all(|(i, m)| mask_belongs_to(i, target, &self.masks) || !m.contains(&p));
            if inside_deeply
                && off_other_masks
                && self.deep_in_all_but(&p, target)
                && self.deep[target].contains(&p)
                && self.grid.far_enough(&p)
            {
                self.grid.insert(p);
                return Ok(p);
            }
        }
        Err(SkygenError::InfeasiblePlacement {
            class: "masked",
            detail: "masks overlap boundaries or other masks too tightly".into(),
        })
    }
}

/// hot_masks is flattened across runs in run order; map an index back to
/// its run to exempt the target run's own masks from avoidance.
fn mask_belongs_to(flat_index: usize, run: usize, masks: &[Vec<Region>]) -> bool {
    let mut start = 0;
    for (i, ms) in masks.iter().enumerate() {
        let end = start + ms.len();
        if flat_index >= start && flat_index < end {
            return i == run;
        }
        start = end;
    }
    false
}

/// Samples a point a controlled depth `q` outside the target footprint:
/// on a strip, pick an edge and push outward; on a cap, push past the
/// rim. Exactness of the depth comes from the per-half-space geometry.
fn sample_outside_boundary(
    rng: &mut ChaCha8Rng,
    shape: &ShapeSpec,
    q_arcsec: f64,
) -> Result<SkyPosition, GeometryError> {
    let q_deg = q_arcsec / 3600.0;
    match *shape {
        ShapeSpec::Strip {
            ra_min_deg,
            ra_max_deg,
            dec_min_deg,
            dec_max_deg,
        } => {
            match rng.gen_range(0..4u8) {
                0 => {
                    // north
                    let ra = rng.gen_range(ra_min_deg..ra_max_deg);
                    SkyPosition::from_radec_deg(ra, dec_max_deg + q_deg)
                }
                1 => {
                    // south
                    let ra = rng.gen_range(ra_min_deg..ra_max_deg);
                    SkyPosition::from_radec_deg(ra, dec_min_deg - q_deg)
                }
                2 => {
                    // east of ra_max: depth to the meridian plane is
                    // asin(cos(dec) sin(dra)) = q; clamp keeps polar
                    // declinations from producing NaN (the candidate is
                    // then simply rejected by the caller's checks)
                    let dec = rng.gen_range(dec_min_deg..dec_max_deg);
                    let ratio =
                        (q_deg.to_radians().sin() / dec.to_radians().cos()).min(1.0);
                    let dra = ratio.asin().to_degrees();
                    SkyPosition::from_radec_deg((ra_max_deg + dra).rem_euclid(360.0), dec)
                }
                _ => {
                    let dec = rng.gen_range(dec_min_deg..dec_max_deg);
                    let ratio =
                        (q_deg.to_radians().sin() / dec.to_radians().cos()).min(1.0);
                    let dra = ratio.asin().to_degrees();
                    SkyPosition::from_radec_deg((ra_min_deg - dra).rem_euclid(360.0), dec)
                }
            }
        }
        ShapeSpec::Cap {
            ra_deg,
            dec_deg,
            radius_arcsec,
        } => {
            let center = SkyPosition::from_radec_deg(ra_deg, dec_deg)?;
            let bearing = rng.gen_range(0.0..std::f64::consts::TAU);
            Ok(center.offset_by(bearing, radius_arcsec + q_arcsec))
        }
    }
}

pub fn generate(scenario: &Scenario) -> Result<GeneratedSky, SkygenError> {
    validate(scenario)?;
    let nruns = scenario.runs.len();
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);

    // Geometry prep.
    let mut footprints = Vec::with_capacity(nruns);
    let mut mask_regions: Vec<Vec<Region>> = Vec::with_capacity(nruns);
    for spec in &scenario.runs {
        footprints.push(spec.footprint.to_region(&format!("footprint:{}", spec.run_id))?);
        mask_regions.push(
            spec.masks
                .iter()
                .enumerate()
                .map(|(i, m)| {
                    Region::cap(
                        format!("mask:{}:{i}", spec.run_id),
                        SkyPosition::from_radec_deg(m.ra_deg, m.dec_deg)?,
                        m.radius_arcsec,
                    )
                })
                .collect::<Result<Vec<_>, _>>()?,
        );
    }

    let pair_distance = |i: usize, j: usize| {
        scenario.distance.eval(
            scenario.runs[i].default_pos_err_arcsec,
            scenario.runs[j].default_pos_err_arcsec,
        )
    };
    let mut d_max: f64 = 0.0;
    let mut d_min = f64::INFINITY;
    for i in 0..nruns {
        for j in 0..nruns {
            if i != j {
                d_max = d_max.max(pair_distance(i, j));
                d_min = d_min.min(pair_distance(i, j));
            }
        }
    }
    if nruns < 2 {
        // Single run: no pairs, no misses; only base objects make sense.
        d_max = 0.0;
        d_min = 0.0;
    }
    let sigma_max = scenario
        .runs
        .iter()
        .map(|r| r.jitter_sigma_arcsec)
        .fold(0.0, f64::max);
    if nruns >= 2 && 8.0 * sigma_max >= d_min {
        return Err(SkygenError::BadScenario(format!(
            "jitter sigma {sigma_max} arcsec can separate duplicate detections by up to \
             {} arcsec, which reaches the classification distance {d_min}; \
             lower the jitter or raise the distance",
            8.0 * sigma_max
        )));
    }
    let margin = if nruns >= 2 { 10.0 * d_max } else { 0.0 };

    // Deep interiors and mask avoidance zones.
    let deep: Vec<Region> = footprints
        .iter()
        .map(|fp| fp.erode(margin + d_max))
        .collect::<Result<_, _>>()?;
    let core = deep
        .iter()
        .skip(1)
        .fold(deep[0].clone(), |acc, fp| acc.intersect(fp))
        .with_id("core");
    if core.is_empty() {
        return Err(SkygenError::BadScenario(
            "run footprints share no common interior after margin erosion".into(),
        ));
    }
    let (core_center, core_radius) = core.bounding_circle().ok_or_else(|| {
        SkygenError::BadScenario("common core has no bounding circle".into())
    })?;
    let hot_masks: Vec<Region> = mask_regions
        .iter()
        .flatten()
        .map(|m| m.buffer(margin))
        .collect::<Result<_, _>>()?;

    let n_eph = (scenario.base_count as f64 * scenario.injections.ephemeral_fraction).round()
        as usize;
    let n_masked =
        (scenario.base_count as f64 * scenario.injections.masked_fraction).round() as usize;
    let n_edge =
        (scenario.base_count as f64 * scenario.injections.edge_fraction).round() as usize;
    if nruns < 2 && n_eph + n_masked + n_edge > 0 {
        return Err(SkygenError::BadScenario(
            "injections need at least two runs".into(),
        ));
    }

    let mask_unions: Vec<Region> = scenario
        .runs
        .iter()
        .zip(&mask_regions)
        .map(|(spec, ms)| Region::union(format!("masks:{}", spec.run_id), ms))
        .collect();

    let mut placement = Placement {
        rng: &mut rng,
        grid: SeparationGrid::new(if margin > 0.0 {
            margin / ARCSEC_PER_RAD
        } else {
            1.0 / ARCSEC_PER_RAD
        }),
        deep,
        hot_masks,
        masks: mask_regions,
        core_center,
        core_radius_rad: core_radius / ARCSEC_PER_RAD,
        margin_arcsec: margin,
    };

    // Anchor generation, in a fixed order.
    let mut anchors: Vec<Anchor> = Vec::with_capacity(
        scenario.base_count + n_eph + n_masked + n_edge,
    );
    for _ in 0..scenario.base_count {
        let position = placement.sample_core("base")?;
        let mag = placement.rng.gen_range(14.0..22.0);
        anchors.push(Anchor { position, class: Class::Base, mag });
    }
    for k in 0..n_eph {
        let target = k % nruns;
        let position = placement.sample_core("ephemeral")?;
        let mag = placement.rng.gen_range(14.0..22.0);
        anchors.push(Anchor { position, class: Class::Ephemeral { target }, mag });
    }
    let masked_targets: Vec<usize> =
        (0..nruns).filter(|&i| !placement.masks[i].is_empty()).collect();
    if n_masked > 0 && masked_targets.is_empty() {
        return Err(SkygenError::BadScenario(
            "masked injections requested but no run defines a mask".into(),
        ));
    }
    for k in 0..n_masked {
        let target = masked_targets[k % masked_targets.len()];
        let position = placement.sample_masked(target)?;
        let mag = placement.rng.gen_range(14.0..22.0);
        anchors.push(Anchor { position, class: Class::Masked { target }, mag });
    }
    for k in 0..n_edge {
        let (position, target) = place_edge(&mut placement, scenario, k, d_min)?;
        let mag = placement.rng.gen_range(14.0..22.0);
        anchors.push(Anchor { position, class: Class::Edge { target }, mag });
    }

    // Materialize catalogs: anchors expand to per-run detections.
    let attr_names = vec!["mag".to_string()];
    let mut catalog = CatalogSet::new();
    for spec in &scenario.runs {
        catalog.ensure_run(&spec.run_id, &attr_names)?;
    }
    let mut labels = Vec::new();
    for (idx, anchor) in anchors.iter().enumerate() {
        let object_id = (idx + 1) as u64;
        let (absent, jittered): (Option<usize>, bool) = match anchor.class {
            Class::Base => (None, true),
            Class::Ephemeral { target } | Class::Masked { target } => (Some(target), true),
            Class::Edge { target } => (Some(target), false),
        };
        let mut present_runs = Vec::new();
        for (i, spec) in scenario.runs.iter().enumerate() {
            if Some(i) == absent {
                continue;
            }
            let p = if jittered {
                jitter(&mut rng, &anchor.position, spec.jitter_sigma_arcsec)
            } else {
                anchor.position
            };
            // Round-trip through (ra, dec) so the in-memory object equals
            // its CSV round trip bit for bit.
            let (ra, dec) = p.to_radec_deg();
            catalog.insert(CatalogObject::new(
                &spec.run_id,
                object_id,
                ra,
                dec,
                None,
                vec![anchor.mag],
            )?)?;
            present_runs.push(i);
        }
        if !scenario.emit_labels {
            continue;
        }
        let miss_verdict = match anchor.class {
            Class::Base => None,
            Class::Ephemeral { .. } => Some(Verdict::Ephemeral),
            Class::Masked { .. } => Some(Verdict::Masked),
            Class::Edge { .. } => Some(Verdict::Edge),
        };
        for &i in &present_runs {
            for &j in &present_runs {
                if i != j {
                    labels.push(LabelRecord {
                        run1: scenario.runs[i].run_id.clone(),
                        object_id,
                        run2: scenario.runs[j].run_id.clone(),
                        expected: Verdict::Hit,
                    });
                }
            }
            if let (Some(verdict), Some(target)) = (miss_verdict, absent) {
                labels.push(LabelRecord {
                    run1: scenario.runs[i].run_id.clone(),
                    object_id,
                    run2: scenario.runs[target].run_id.clone(),
                    expected: verdict,
                });
            }
        }
    }
    labels.sort_by(|a, b| {
        (&a.run1, a.object_id, &a.run2).cmp(&(&b.run1, b.object_id, &b.run2))
    });

    let mut runs = RunSet::new();
    for ((spec, fp), masks) in scenario.runs.iter().zip(&footprints).zip(mask_unions) {
        runs.insert(RunMetadata::new(
            &spec.run_id,
            fp.clone(),
            masks,
            spec.default_pos_err_arcsec,
            spec.epoch_mjd,
        )?)?;
    }

    Ok(GeneratedSky { catalog, runs, labels })
}

/// Edge anchors: depth 0.25-0.75 of the smallest pair distance outside
/// the target footprint, deep inside every other run. Round-robins over
/// targets, skipping geometrically impossible ones.
fn place_edge(
    placement: &mut Placement<'_>,
    scenario: &Scenario,
    k: usize,
    d_min: f64,
) -> Result<(SkyPosition, usize), SkygenError> {
    let nruns = scenario.runs.len();
    for shift in 0..nruns {
        let target = (k + shift) % nruns;
        for _ in 0..PLACEMENT_ATTEMPTS / nruns {
            let q = placement.rng.gen_range(0.25 * d_min..0.75 * d_min);
            let p =
                sample_outside_boundary(placement.rng, &scenario.runs[target].footprint, q)?;
            if placement.deep_in_all_but(&p, target)
                && placement.away_from_masks(&p)
                && placement.grid.far_enough(&p)
            {
                placement.grid.insert(p);
                return Ok((p, target));
            }
        }
    }
    Err(SkygenError::InfeasiblePlacement {
        class: "edge",
        detail: "no target run's boundary band lies inside the other runs' footprints \
                 (identical footprints cannot host edge objects)"
            .into(),
    })
}

fn validate(scenario: &Scenario) -> Result<(), SkygenError> {
    if scenario.runs.is_empty() {
        return Err(SkygenError::BadScenario("at least one run is required".into()));
    }
    let mut seen = std::collections::HashSet::new();
    for spec in &scenario.runs {
        if !seen.insert(spec.run_id.as_str()) {
            return Err(SkygenError::BadScenario(format!(
                "run id {:?} appears twice",
                spec.run_id
            )));
        }
        if !(spec.jitter_sigma_arcsec >= 0.0 && spec.jitter_sigma_arcsec.is_finite()) {
            return Err(SkygenError::BadScenario(format!(
                "run {:?} has invalid jitter sigma",
                spec.run_id
            )));
        }
        if !(spec.default_pos_err_arcsec > 0.0 && spec.default_pos_err_arcsec.is_finite()) {
            return Err(SkygenError::BadScenario(format!(
                "run {:?} has invalid default position error",
                spec.run_id
            )));
        }
    }
    scenario.distance.validate()?;
    let inj = &scenario.injections;
    for (name, f) in [
        ("ephemeral", inj.ephemeral_fraction),
        ("masked", inj.masked_fraction),
        ("edge", inj.edge_fraction),
    ] {
        if !(0.0..=1.0).contains(&f) || !f.is_finite() {
            return Err(SkygenError::BadScenario(format!(
                "{name} fraction {f} outside [0, 1]"
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn same_seed_same_bytes() {
        let scenario = Scenario::crossing_strips(99, 150);
        let dir1 = tempdir("skygen_det_1");
        let dir2 = tempdir("skygen_det_2");
        generate(&scenario).unwrap().write_files(&dir1).unwrap();
        generate(&scenario).unwrap().write_files(&dir2).unwrap();
        for name in ["catalog_A.csv", "catalog_B.csv", "run_A.json", "run_B.json", "labels.csv"]
        {
            let a = fs::read(dir1.join(name)).unwrap();
            let b = fs::read(dir2.join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical seeds");
            assert!(!a.is_empty());
        }
        let other = generate(&Scenario::crossing_strips(100, 150)).unwrap();
        let first = generate(&scenario).unwrap();
        assert_ne!(
            other.catalog.run("A").unwrap().objects().next().unwrap().ra_deg(),
            first.catalog.run("A").unwrap().objects().next().unwrap().ra_deg(),
            "different seeds should differ"
        );
        fs::remove_dir_all(dir1).ok();
        fs::remove_dir_all(dir2).ok();
    }

    #[test]
    fn injection_counts_match_fractions() {
        let base = 400;
        let scenario = Scenario::crossing_strips(7, base);
        let sky = generate(&scenario).unwrap();
        let count = |v: Verdict| sky.labels.iter().filter(|l| l.expected == v).count();
        // Two runs: each ephemeral/masked/edge anchor is present in one
        // run and missed by the other, giving exactly one miss label.
        assert_eq!(count(Verdict::Ephemeral), (base as f64 * 0.11).round() as usize);
        assert_eq!(count(Verdict::Masked), (base as f64 * 0.005).round() as usize);
        assert_eq!(count(Verdict::Edge), (base as f64 * 0.05).round() as usize);
        // Base anchors appear in both runs: two directed Hit labels each.
        assert_eq!(count(Verdict::Hit), base * 2);
    }

    #[test]
    fn loaded_catalog_equals_generated_catalog() {
        let scenario = Scenario::crossing_strips(21, 60);
        let sky = generate(&scenario).unwrap();
        let dir = tempdir("skygen_roundtrip");
        sky.write_files(&dir).unwrap();
        let mut loaded = CatalogSet::new();
        for run in ["A", "B"] {
            let file = fs::File::open(dir.join(format!("catalog_{run}.csv"))).unwrap();
            loaded.load_csv(file, &format!("catalog_{run}.csv")).unwrap();
        }
        assert_eq!(loaded.len(), sky.catalog.len());
        for obj in sky.catalog.objects() {
            let got = loaded.get(obj.run_id(), obj.object_id()).unwrap();
            assert_eq!(got.ra_deg(), obj.ra_deg());
            assert_eq!(got.dec_deg(), obj.dec_deg());
            assert_eq!(got.position(), obj.position(), "positions must round trip exactly");
            assert_eq!(got.attrs(), obj.attrs());
        }
        fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn zero_injections_identical_footprints_all_hit() {
        let strip = ShapeSpec::Strip {
            ra_min_deg: 100.0,
            ra_max_deg: 110.0,
            dec_min_deg: -3.0,
            dec_max_deg: 3.0,
        };
        let scenario = Scenario {
            seed: 5,
            base_count: 80,
            distance: ClassificationDistance::Fixed(1.0),
            runs: vec![
                RunSpec {
                    run_id: "X".into(),
                    footprint: strip.clone(),
                    masks: vec![],
                    jitter_sigma_arcsec: 0.0,
                    default_pos_err_arcsec: 0.1,
                    epoch_mjd: None,
                },
                RunSpec {
                    run_id: "Y".into(),
                    footprint: strip,
                    masks: vec![],
                    jitter_sigma_arcsec: 0.0,
                    default_pos_err_arcsec: 0.1,
                    epoch_mjd: None,
                },
            ],
            injections: Injections {
                ephemeral_fraction: 0.0,
                masked_fraction: 0.0,
                edge_fraction: 0.0,
            },
            emit_labels: true,
        };
        let sky = generate(&scenario).unwrap();
        assert_eq!(sky.labels.len(), 160, "80 objects x 2 directions");
        assert!(sky.labels.iter().all(|l| l.expected == Verdict::Hit));
        // Sigma 0: paired detections coincide.
        for obj in sky.catalog.run("X").unwrap().objects() {
            let twin = sky.catalog.get("Y", obj.object_id()).unwrap();
            assert_eq!(obj.position(), twin.position());
        }
    }

    #[test]
    fn single_run_has_no_cross_run_labels() {
        let scenario = Scenario {
            seed: 1,
            base_count: 25,
            distance: ClassificationDistance::Fixed(1.0),
            runs: vec![RunSpec {
                run_id: "solo".into(),
                footprint: ShapeSpec::Cap {
                    ra_deg: 200.0,
                    dec_deg: 45.0,
                    radius_arcsec: 7200.0,
                },
                masks: vec![],
                jitter_sigma_arcsec: 0.1,
                default_pos_err_arcsec: 0.1,
                epoch_mjd: None,
            }],
            injections: Injections {
                ephemeral_fraction: 0.0,
                masked_fraction: 0.0,
                edge_fraction: 0.0,
            },
            emit_labels: true,
        };
        let sky = generate(&scenario).unwrap();
        assert!(sky.labels.is_empty());
        assert_eq!(sky.catalog.run("solo").unwrap().len(), 25);
    }

    #[test]
    fn margins_hold_for_every_class() {
        let scenario = Scenario::crossing_strips(13, 200);
        let sky = generate(&scenario).unwrap();
        let a = sky.runs.get("A").unwrap();
        let b = sky.runs.get("B").unwrap();
        // Anchor ids: 1..=200 base, then 22 ephemeral, 1 masked, 10 edge.
        let n_eph = 22;
        let n_masked = 1;
        let deep_a = a.footprint().erode(10.0).unwrap();
        let deep_b = b.footprint().erode(10.0).unwrap();
        let miss_labels: Vec<_> =
            sky.labels.iter().filter(|l| l.expected != Verdict::Hit).collect();
        for label in &miss_labels {
            let obj = sky.catalog.get(&label.run1, label.object_id).unwrap();
            match label.expected {
                Verdict::Ephemeral => {
                    assert!(deep_a.contains(obj.position()) && deep_b.contains(obj.position()));
                    assert!(!a.masks().contains(obj.position()));
                    assert!(!b.masks().contains(obj.position()));
                }
                Verdict::Masked => {
                    // Anchors sit 10" inside the mask; jitter moves the
                    // detection at most 0.4".
                    let masks =
                        if label.run2 == "A" { a.masks() } else { b.masks() };
                    assert!(masks.erode(9.5).unwrap().contains(obj.position()));
                }
                Verdict::Edge => {
                    let target_fp =
                        if label.run2 == "A" { a.footprint() } else { b.footprint() };
                    assert!(!target_fp.contains(obj.position()), "edge object outside target");
                    assert!(
                        target_fp.buffer(0.76).unwrap().contains(obj.position()),
                        "edge object within 3/4 of the pair distance of the target"
                    );
                    assert!(
                        !target_fp.buffer(0.24).unwrap().contains(obj.position()),
                        "edge object at least 1/4 pair distance outside"
                    );
                }
                _ => unreachable!(),
            }
        }
        let eph = miss_labels.iter().filter(|l| l.expected == Verdict::Ephemeral).count();
        let masked = miss_labels.iter().filter(|l| l.expected == Verdict::Masked).count();
        assert_eq!((eph, masked), (n_eph, n_masked));
    }

    #[test]
    fn separation_floor_between_distinct_anchors() {
        let scenario = Scenario::crossing_strips(31, 120);
        let sky = generate(&scenario).unwrap();
        // Distinct objectIDs must never come within the classification
        // distance of each other, in any run pairing.
        let all: Vec<&CatalogObject> = sky.catalog.objects().collect();
        for (i, o1) in all.iter().enumerate() {
            for o2 in &all[i + 1..] {
                if o1.object_id() == o2.object_id() {
                    continue;
                }
                let d = crate::geometry::angular_distance(o1.position(), o2.position());
                assert!(
                    d > 8.0,
                    "anchors {} and {} only {d:.3} arcsec apart",
                    o1.object_id(),
                    o2.object_id()
                );
            }
        }
    }

    #[test]
    fn infeasible_scenarios_are_rejected_with_diagnostics() {
        // Identical footprints cannot host edge objects.
        let strip = ShapeSpec::Strip {
            ra_min_deg: 10.0,
            ra_max_deg: 20.0,
            dec_min_deg: -3.0,
            dec_max_deg: 3.0,
        };
        let mut scenario = Scenario::crossing_strips(3, 10);
        scenario.runs[0].footprint = strip.clone();
        scenario.runs[1].footprint = strip;
        scenario.runs[1].masks.clear();
        scenario.injections =
            Injections { ephemeral_fraction: 0.0, masked_fraction: 0.0, edge_fraction: 0.1 };
        let err = generate(&scenario).unwrap_err();
        assert!(matches!(err, SkygenError::InfeasiblePlacement { class: "edge", .. }), "{err}");

        // Masks narrower than the margin cannot hold masked objects.
        let mut scenario = Scenario::crossing_strips(3, 10);
        scenario.runs[1].masks = vec![CapSpec { ra_deg: 40.0, dec_deg: 0.0, radius_arcsec: 5.0 }];
        scenario.injections =
            Injections { ephemeral_fraction: 0.0, masked_fraction: 0.1, edge_fraction: 0.0 };
        let err = generate(&scenario).unwrap_err();
        assert!(matches!(err, SkygenError::InfeasiblePlacement { class: "masked", .. }), "{err}");

        // Jitter big enough to break hit pairs is refused up front.
        let mut scenario = Scenario::crossing_strips(3, 10);
        scenario.runs[0].jitter_sigma_arcsec = 0.2;
        let err = generate(&scenario).unwrap_err();
        assert!(err.to_string().contains("jitter"), "{err}");
    }

    #[test]
    fn scenario_json_round_trips() {
        let scenario = Scenario::crossing_strips(11, 500);
        let text = serde_json::to_string_pretty(&scenario).unwrap();
        let back = Scenario::from_json_reader(text.as_bytes()).unwrap();
        assert_eq!(back.seed, 11);
        assert_eq!(back.base_count, 500);
        assert_eq!(back.runs.len(), 2);
        assert!(matches!(back.runs[0].footprint, ShapeSpec::Strip { .. }));
        assert_eq!(back.runs[1].masks.len(), 2);
        // Labels CSV round trip too.
        let labels = vec![LabelRecord {
            run1: "A".into(),
            object_id: 3,
            run2: "B".into(),
            expected: Verdict::Edge,
        }];
        let mut buf = Vec::new();
        write_labels_csv(&labels, &mut buf).unwrap();
        assert_eq!(read_labels_csv(buf.as_slice(), "labels.csv").unwrap(), labels);
    }

    #[test]
    fn duplicate_and_missing_run_validation() {
        let mut scenario = Scenario::crossing_strips(1, 10);
        scenario.runs[1].run_id = "A".into();
        assert!(matches!(generate(&scenario), Err(SkygenError::BadScenario(_))));
        let scenario = Scenario { runs: vec![], ..Scenario::crossing_strips(1, 10) };
        assert!(matches!(generate(&scenario), Err(SkygenError::BadScenario(_))));
    }

    #[test]
    fn edge_targets_rotate_over_runs() {
        let scenario = Scenario::crossing_strips(17, 200);
        let sky = generate(&scenario).unwrap();
        let targets: HashSet<&str> = sky
            .labels
            .iter()
            .filter(|l| l.expected == Verdict::Edge)
            .map(|l| l.run2.as_str())
            .collect();
        assert_eq!(targets.len(), 2, "both runs should serve as edge targets");
    }

    fn tempdir(tag: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("{tag}_{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir
    }
}
