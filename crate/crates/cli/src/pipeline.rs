use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use clap::ValueEnum;
use serde::Deserialize;
use serde_json::json;

use skymatch_core::catalog::{
    validate_containment, CatalogSet, ClassificationDistance, RunMetadata, RunSet,
};
use skymatch_core::fof::{
    bundle_statistics, compute_bundles, materialize_friends, write_bundle_csv,
};
use skymatch_core::matching::{
    compute_hits, default_zone_height, hit_symmetry_holds, read_match_csv, sort_canonical,
    write_match_csv, MatchRecord, Verdict,
};
use skymatch_core::missclass::{
    classify_misses, compute_misses, compute_overlaps, read_miss_csv, write_miss_csv,
    write_overlap_report,
};
use skymatch_core::oracle::{
    bfs_components, brute_force_hits, brute_force_neighbors, iterative_friend_closure, ObjKey,
};
use skymatch_core::pivot::{pivot as expand_pivot, write_pivot_csv};
use skymatch_core::skygen::{generate, Scenario};
use skymatch_core::zones::ZoneIndex;

use crate::Stage;

const INGESTED_PREFIX: &str = "ingested_";
const MATCH_HITS: &str = "match_hits.csv";
const MISSES: &str = "misses.csv";
const OVERLAPS: &str = "overlaps.json";
const MATCH_CLASSIFIED: &str = "match_classified.csv";
const MATCH_FULL: &str = "match.csv";
const BUNDLES: &str = "bundles.csv";
const PIVOT: &str = "pivot.csv";

fn default_distance() -> String {
    "fixed:1.0".to_string()
}

fn default_max_objects() -> usize {
    5000
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Input catalog CSVs. May be empty when a scenario generates them.
    #[serde(default)]
    catalogs: Vec<PathBuf>,
    /// Run metadata JSONs, one per run.
    #[serde(default)]
    runs: Vec<PathBuf>,
    #[serde(default = "default_distance")]
    distance: String,
    #[serde(default)]
    zone_height_arcsec: Option<f64>,
    out_dir: PathBuf,
    #[serde(default)]
    stage: Option<String>,
    #[serde(default)]
    scenario: Option<PathBuf>,
    /// Run order for the pivot; defaults to all runs sorted.
    #[serde(default)]
    pivot_runs: Option<Vec<String>>,
    #[serde(default)]
    threads: Option<usize>,
    #[serde(default)]
    seed: Option<u64>,
    /// Size cap for the quadratic verification oracles.
    #[serde(default = "default_max_objects")]
    max_objects: usize,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read {}", path.display()))?;
        let mut config: PipelineConfig = serde_json::from_str(&text)?;
        // Paths in the config are relative to the config file.
        let base = path.parent().unwrap_or(Path::new("."));
        for p in config.catalogs.iter_mut().chain(config.runs.iter_mut()) {
            *p = base.join(&*p);
        }
        if let Some(s) = &config.scenario {
            config.scenario = Some(base.join(s));
        }
        config.out_dir = base.join(&config.out_dir);
        Ok(config)
    }

    pub fn stage_from_config(&self) -> Result<Option<Stage>> {
        self.stage
            .as_deref()
            .map(|s| {
                Stage::from_str(s, true)
                    .map_err(|_| anyhow!("config stage {s:?} is not a known stage"))
            })
            .transpose()
    }
}

pub struct Pipeline {
    config: PipelineConfig,
    out: PathBuf,
    distance: ClassificationDistance,
    zone_height: Option<f64>,
    seed: Option<u64>,
}

impl Pipeline {
    pub fn new(
        config: PipelineConfig,
        out: Option<PathBuf>,
        seed: Option<u64>,
        distance: Option<&str>,
        zone_height: Option<f64>,
    ) -> Result<Pipeline> {
        let spec = distance.unwrap_or(&config.distance);
        let distance = ClassificationDistance::from_str(spec)
            .with_context(|| format!("distance {spec:?}"))?;
        let out = out.unwrap_or_else(|| config.out_dir.clone());
        let zone_height = zone_height.or(config.zone_height_arcsec);
        let seed = seed.or(config.seed);
        Ok(Pipeline { config, out, distance, zone_height, seed })
    }

    pub fn threads(&self) -> Option<usize> {
        self.config.threads
    }

    // ---- artifact plumbing -------------------------------------------

    fn require(&self, name: &str, produced_by: &str) -> Result<PathBuf> {
        let path = self.out.join(name);
        if !path.exists() {
            bail!(
                "missing artifact {}; run the {produced_by} stage first",
                path.display()
            );
        }
        Ok(path)
    }

    /// Input catalog files: configured ones, else whatever `gen` wrote.
    fn catalog_paths(&self) -> Result<Vec<PathBuf>> {
        if !self.config.catalogs.is_empty() {
            return Ok(self.config.catalogs.clone());
        }
        let found = self.discover("catalog_", ".csv")?;
        if found.is_empty() {
            if self.config.scenario.is_some() {
                bail!(
                    "no catalogs configured and none found in {}; run the gen stage first",
                    self.out.display()
                );
            }
            bail!("the config lists no catalogs");
        }
        Ok(found)
    }

    fn run_paths(&self) -> Result<Vec<PathBuf>> {
        if !self.config.runs.is_empty() {
            return Ok(self.config.runs.clone());
        }
        let found = self.discover("run_", ".json")?;
        if found.is_empty() {
            if self.config.scenario.is_some() {
                bail!(
                    "no run metadata configured and none found in {}; run the gen stage first",
                    self.out.display()
                );
            }
            bail!("the config lists no run metadata");
        }
        Ok(found)
    }

    fn discover(&self, prefix: &str, suffix: &str) -> Result<Vec<PathBuf>> {
        let mut found = Vec::new();
        if !self.out.exists() {
            return Ok(found);
        }
        for entry in fs::read_dir(&self.out)? {
            let path = entry?.path();
            let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
            if name.starts_with(prefix) && name.ends_with(suffix) {
                found.push(path);
            }
        }
        found.sort();
        Ok(found)
    }

    fn load_runs(&self) -> Result<RunSet> {
        let mut runs = RunSet::new();
        for path in self.run_paths()? {
            let file =
                File::open(&path).with_context(|| format!("cannot open {}", path.display()))?;
            let meta = RunMetadata::from_json_reader(file)
                .with_context(|| path.display().to_string())?;
            runs.insert(meta)?;
        }
        Ok(runs)
    }

    /// The canonical catalogs written by `ingest`.
    fn load_ingested(&self, runs: &RunSet) -> Result<CatalogSet> {
        let mut catalog = CatalogSet::new();
        for run_id in runs.ids() {
            let name = format!("{INGESTED_PREFIX}{run_id}.csv");
            let path = self.require(&name, "ingest")?;
            let file = File::open(&path)?;
            catalog
                .load_csv(file, &name)
                .with_context(|| path.display().to_string())?;
        }
        Ok(catalog)
    }

    fn read_matches(&self, name: &str, produced_by: &str) -> Result<Vec<MatchRecord>> {
        let path = self.require(name, produced_by)?;
        let file = File::open(&path)?;
        Ok(read_match_csv(file, name)?)
    }

    fn emit_summary(&self, stage: &str, summary: serde_json::Value) -> Result<()> {
        let text = serde_json::to_string(&summary)?;
        println!("{text}");
        fs::create_dir_all(&self.out)?;
        fs::write(self.out.join(format!("summary_{stage}.json")), text)?;
        Ok(())
    }

    // ---- stages ------------------------------------------------------

    pub fn gen(&self) -> Result<()> {
        let Some(scenario_path) = &self.config.scenario else {
            bail!("the gen stage needs a scenario file in the config");
        };
        let file = File::open(scenario_path)
            .with_context(|| format!("cannot open {}", scenario_path.display()))?;
        let mut scenario = Scenario::from_json_reader(file)
            .with_context(|| scenario_path.display().to_string())?;
        if let Some(seed) = self.seed {
            scenario.seed = seed;
        }
        let sky = generate(&scenario)?;
        fs::create_dir_all(&self.out)?;
        sky.write_files(&self.out)?;
        self.emit_summary(
            "gen",
            json!({
                "stage": "gen",
                "seed": scenario.seed,
                "runs": sky.runs.ids(),
                "objects": sky.catalog.len(),
                "labels": sky.labels.len(),
            }),
        )
    }

    pub fn ingest(&self) -> Result<()> {
        let runs = self.load_runs()?;
        let mut catalog = CatalogSet::new();
        for path in self.catalog_paths()? {
            let name = path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string());
            let file =
                File::open(&path).with_context(|| format!("cannot open {}", path.display()))?;
            catalog.load_csv(file, &name)?;
        }
        runs.check_covers(&catalog)?;
        let warnings = validate_containment(&catalog, &runs);
        for w in warnings.iter().take(5) {
            eprintln!("warning: {w}");
        }
        if warnings.len() > 5 {
            eprintln!("warning: ... and {} more containment warnings", warnings.len() - 5);
        }
        fs::create_dir_all(&self.out)?;
        let mut per_run = BTreeMap::new();
        for run in catalog.runs() {
            let name = format!("{INGESTED_PREFIX}{}.csv", run.run_id());
            let file = File::create(self.out.join(&name))?;
            catalog.write_csv_run(run.run_id(), file)?;
            per_run.insert(run.run_id().to_string(), run.len());
        }
        self.emit_summary(
            "ingest",
            json!({
                "stage": "ingest",
                "objects": catalog.len(),
                "perRun": per_run,
                "containmentWarnings": warnings.len(),
            }),
        )
    }

    pub fn hits(&self) -> Result<()> {
        let runs = self.load_runs()?;
        let catalog = self.load_ingested(&runs)?;
        let mut records = compute_hits(&catalog, &runs, &self.distance, self.zone_height)?;
        let file = File::create(self.out.join(MATCH_HITS))?;
        write_match_csv(&mut records, file)?;
        self.emit_summary(
            "hits",
            json!({
                "stage": "hits",
                "hits": records.len(),
                "symmetric": hit_symmetry_holds(&records),
            }),
        )
    }

    pub fn misses(&self) -> Result<()> {
        let runs = self.load_runs()?;
        let catalog = self.load_ingested(&runs)?;
        let matches = self.read_matches(MATCH_HITS, "hits")?;
        let overlaps = compute_overlaps(&runs, &self.distance)?;
        let misses = compute_misses(&catalog, &matches, &overlaps);
        write_overlap_report(&overlaps, File::create(self.out.join(OVERLAPS))?)?;
        write_miss_csv(&misses, File::create(self.out.join(MISSES))?)?;
        self.emit_summary(
            "misses",
            json!({
                "stage": "misses",
                "overlapPairs": overlaps.len(),
                "misses": misses.len(),
            }),
        )
    }

    pub fn classify(&self) -> Result<()> {
        let runs = self.load_runs()?;
        let misses_path = self.require(MISSES, "misses")?;
        let misses = read_miss_csv(File::open(&misses_path)?, MISSES)?;
        // Regions are rebuilt from run metadata rather than serialized.
        let overlaps = compute_overlaps(&runs, &self.distance)?;
        let verdicts = classify_misses(&misses, &overlaps)?;
        let mut records = self.read_matches(MATCH_HITS, "hits")?;
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        *counts.entry("Hit".into()).or_default() += records.len();
        for v in &verdicts {
            *counts.entry(v.verdict.to_string()).or_default() += 1;
        }
        records.extend(verdicts);
        let file = File::create(self.out.join(MATCH_CLASSIFIED))?;
        write_match_csv(&mut records, file)?;
        self.emit_summary(
            "classify",
            json!({
                "stage": "classify",
                "records": records.len(),
                "verdicts": counts,
            }),
        )
    }

    pub fn fof(&self) -> Result<()> {
        let runs = self.load_runs()?;
        let catalog = self.load_ingested(&runs)?;
        let mut records = self.read_matches(MATCH_CLASSIFIED, "classify")?;
        let bundles = compute_bundles(&mut records);
        let friends = materialize_friends(&records, &bundles, &catalog)?;
        let friend_count = friends.len();
        records.extend(friends);
        sort_canonical(&mut records);
        let file = File::create(self.out.join(MATCH_FULL))?;
        write_match_csv(&mut records, file)?;
        self.emit_summary(
            "fof",
            json!({
                "stage": "fof",
                "bundles": bundles.len(),
                "friends": friend_count,
                "records": records.len(),
            }),
        )
    }

    pub fn bundles(&self) -> Result<()> {
        let runs = self.load_runs()?;
        let catalog = self.load_ingested(&runs)?;
        let mut records = self.read_matches(MATCH_FULL, "fof")?;
        let members = compute_bundles(&mut records);
        let stats = bundle_statistics(&members, &records, &catalog)?;
        write_bundle_csv(&stats, File::create(self.out.join(BUNDLES))?)?;
        // Size histogram: how many bundles have k members.
        let mut histogram: BTreeMap<usize, usize> = BTreeMap::new();
        for b in &stats {
            *histogram.entry(b.members.len()).or_default() += 1;
        }
        let histogram: serde_json::Map<String, serde_json::Value> = histogram
            .into_iter()
            .map(|(k, v)| (k.to_string(), json!(v)))
            .collect();
        self.emit_summary(
            "bundles",
            json!({
                "stage": "bundles",
                "bundles": stats.len(),
                "sizeHistogram": histogram,
            }),
        )
    }

    pub fn pivot(&self) -> Result<()> {
        let runs = self.load_runs()?;
        let catalog = self.load_ingested(&runs)?;
        let mut records = self.read_matches(MATCH_FULL, "fof")?;
        let members = compute_bundles(&mut records);
        let stats = bundle_statistics(&members, &records, &catalog)?;
        let order = match &self.config.pivot_runs {
            Some(order) => order.clone(),
            None => catalog.run_ids(),
        };
        let rows = expand_pivot(&stats, &order, &catalog)?;
        write_pivot_csv(&rows, &order, File::create(self.out.join(PIVOT))?)?;
        self.emit_summary(
            "pivot",
            json!({
                "stage": "pivot",
                "runs": order,
                "rows": rows.len(),
                "primaryRows": rows.iter().filter(|r| r.is_primary).count(),
            }),
        )
    }

    pub fn all(&self) -> Result<()> {
        if self.config.scenario.is_some() {
            self.gen()?;
        }
        self.ingest()?;
        self.hits()?;
        self.misses()?;
        self.classify()?;
        self.fof()?;
        self.bundles()?;
        self.pivot()
    }

    // ---- verification ------------------------------------------------

    pub fn verify(&self) -> Result<()> {
        let runs = self.load_runs()?;
        let catalog = self.load_ingested(&runs)?;
        if catalog.len() > self.config.max_objects {
            bail!(
                "verify runs quadratic oracles and is capped at {} objects (got {}); \
                 raise max_objects in the config to override",
                self.config.max_objects,
                catalog.len()
            );
        }
        let neighbors = self.verify_neighbors(&catalog, &runs)?;
        let hits = self.verify_hits(&catalog, &runs)?;
        let (components, friends) = self.verify_fof()?;
        let checks =
            [("neighbors", neighbors), ("hits", hits), ("components", components), ("friends", friends)];
        for (name, ok) in checks {
            println!("[VERIFY] {name}: {}", if ok { "PASS" } else { "FAIL" });
        }
        let all_ok = checks.iter().all(|(_, ok)| *ok);
        self.emit_summary(
            "verify",
            json!({
                "stage": "verify",
                "objects": catalog.len(),
                "checks": checks
                    .iter()
                    .map(|(n, ok)| (n.to_string(), json!(if *ok { "PASS" } else { "FAIL" })))
                    .collect::<serde_json::Map<_, _>>(),
            }),
        )?;
        if !all_ok {
            bail!("verification failed");
        }
        Ok(())
    }

    /// Zone join vs. the all-pairs oracle at the effective hit radius.
    fn verify_neighbors(&self, catalog: &CatalogSet, runs: &RunSet) -> Result<bool> {
        let defaults: BTreeMap<&str, f64> =
            runs.iter().map(|r| (r.run_id(), r.default_pos_err_arcsec())).collect();
        let max_err = catalog
            .objects()
            .map(|o| {
                o.position_error()
                    .unwrap_or_else(|| defaults.get(o.run_id()).copied().unwrap_or(0.1))
            })
            .fold(0.1, f64::max);
        let radius = self
            .distance
            .distance(max_err, max_err)
            .unwrap_or(1.0)
            .max(0.1);
        let height = self
            .zone_height
            .unwrap_or_else(|| default_zone_height(runs, &self.distance))
            .max(radius);
        let index = ZoneIndex::build(catalog, height)?;
        let mut got: Vec<(ObjKey, ObjKey, f64)> = index
            .neighbors_within(radius)?
            .into_iter()
            .map(|(a, b, sep)| {
                (
                    (a.run_id().to_string(), a.object_id()),
                    (b.run_id().to_string(), b.object_id()),
                    sep,
                )
            })
            .collect();
        got.sort_by(|a, b| (&a.0, &a.1).cmp(&(&b.0, &b.1)));
        let want: Vec<(ObjKey, ObjKey, f64)> = brute_force_neighbors(catalog, radius)
            .into_iter()
            .map(|p| ((p.run1, p.id1), (p.run2, p.id2), p.separation_arcsec))
            .collect();
        Ok(got == want)
    }

    /// Hit records on disk vs. the brute-force hit oracle. Both the raw
    /// hit file and the final match file must carry the same hit set, so
    /// a hit deleted in both directions still trips this check.
    fn verify_hits(&self, catalog: &CatalogSet, runs: &RunSet) -> Result<bool> {
        let want: Vec<(ObjKey, ObjKey, f64)> = brute_force_hits(catalog, runs, &self.distance)
            .into_iter()
            .map(|p| ((p.run1, p.id1), (p.run2, p.id2), p.separation_arcsec))
            .collect();
        for (name, produced_by) in [(MATCH_HITS, "hits"), (MATCH_FULL, "fof")] {
            let records = self.read_matches(name, produced_by)?;
            let got: Vec<(ObjKey, ObjKey, f64)> = records
                .iter()
                .filter(|r| r.verdict == Verdict::Hit)
                .map(|r| {
                    (
                        (r.run1.clone(), r.object_id1),
                        (r.run2.clone(), r.object_id2),
                        r.separation_arcsec.unwrap_or(f64::NAN),
                    )
                })
                .collect();
            if got != want {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// The bundle partition and friend closure in match.csv vs. the BFS
    /// and fixed-point oracles over that file's own hit edges.
    fn verify_fof(&self) -> Result<(bool, bool)> {
        let records = self.read_matches(MATCH_FULL, "fof")?;
        let mut nodes: BTreeSet<ObjKey> = BTreeSet::new();
        let mut edges: Vec<(ObjKey, ObjKey)> = Vec::new();
        let mut partition: BTreeMap<u64, BTreeSet<ObjKey>> = BTreeMap::new();
        for r in &records {
            let a = (r.run1.clone(), r.object_id1);
            nodes.insert(a.clone());
            partition.entry(r.bundle_id).or_default().insert(a.clone());
            if r.object_id2 != 0 {
                let b = (r.run2.clone(), r.object_id2);
                nodes.insert(b.clone());
                if r.verdict == Verdict::Hit {
                    edges.push((a, b));
                }
            }
        }
        let nodes: Vec<ObjKey> = nodes.into_iter().collect();
        let oracle = bfs_components(&nodes, &edges);
        let mut stated: Vec<Vec<ObjKey>> = partition
            .into_values()
            .map(|s| s.into_iter().collect::<Vec<_>>())
            .collect();
        stated.sort_by(|a, b| a.first().cmp(&b.first()));
        let components_ok = stated == oracle;

        // Friend closure, bundle by bundle.
        let mut friends_ok = true;
        let mut by_bundle: BTreeMap<u64, Vec<&MatchRecord>> = BTreeMap::new();
        for r in &records {
            by_bundle.entry(r.bundle_id).or_default().push(r);
        }
        for bundle in by_bundle.values() {
            let members: BTreeSet<ObjKey> = bundle
                .iter()
                .map(|r| (r.run1.clone(), r.object_id1))
                .collect();
            let hits: Vec<(ObjKey, ObjKey)> = bundle
                .iter()
                .filter(|r| r.verdict == Verdict::Hit)
                .map(|r| ((r.run1.clone(), r.object_id1), (r.run2.clone(), r.object_id2)))
                .collect();
            let friends: Vec<(ObjKey, ObjKey)> = bundle
                .iter()
                .filter(|r| r.verdict == Verdict::Friend)
                .map(|r| ((r.run1.clone(), r.object_id1), (r.run2.clone(), r.object_id2)))
                .collect();
            let k = members.len();
            if k <= 6 {
                let mut want = iterative_friend_closure(&hits);
                want.sort();
                let mut got = friends;
                got.sort();
                if got != want {
                    friends_ok = false;
                }
            } else {
                // Complete directed graph minus self-loops.
                let relation: HashSet<_> =
                    hits.iter().chain(friends.iter()).cloned().collect();
                if relation.len() != k * (k - 1) {
                    friends_ok = false;
                }
            }
        }
        Ok((components_ok, friends_ok))
    }
}
