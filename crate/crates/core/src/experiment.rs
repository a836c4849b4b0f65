//! Experiment plans and the sweep runner behind the command-line tool.
//!
//! A plan file is one flat TOML table holding the scene keys plus the
//! plan keys below. Sweep axes accept a scalar or an array.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::{assemble_kernel, psf_values, AssemblyOptions, KernelKind, KernelMatrix};
use crate::error::{Error, Result};
use crate::masks::{
    check_measurement_count, ideal_masks_with, write_vector_set, MaskSet, PhaseRule, VectorStage,
};
use crate::measurement::{measure, NoiseMode, TargetModel};
use crate::reconstruct::{
    calibrate_estimate, estimate_c, nmse, reconstruct_2d, reconstruct_3d, Calibration, MaskVariance,
    ReconstructionResult, RunMetadata,
};
use crate::scene::{sample_grids, validate_scene, SampleGrids, SceneConfig, TargetKind, ValidatedScene, SCENE_KEYS};
use crate::synthesis::{
    gamma_for_distance, profile_summary, realize_masks, tikhonov_inverse_with, write_profiles, RegularizedInverse,
    TruncationRule, DEFAULT_THRESHOLD_FACTOR,
};
use crate::targets::{builtin_plane, builtin_volume, load_target_2d, load_target_3d, write_pgm};

/// Where the ground truth comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetSource {
    Builtin(String),
    /// `.pgm` for plane scenes, the volume text format otherwise.
    File(PathBuf),
}

impl TargetSource {
    pub fn parse(text: &str) -> Self {
        let builtin = crate::targets::BUILTIN_PLANES.contains(&text) || crate::targets::BUILTIN_VOLUMES.contains(&text);
        if builtin {
            TargetSource::Builtin(text.to_string())
        } else {
            TargetSource::File(PathBuf::from(text))
        }
    }

    fn as_config(&self) -> String {
        match self {
            TargetSource::Builtin(name) => name.clone(),
            TargetSource::File(path) => path.display().to_string(),
        }
    }

    pub fn load(&self, scene: &ValidatedScene) -> Result<TargetModel> {
        let [nx, ny, nz] = scene.target_samples;
        let target = match (self, scene.kind()) {
            (TargetSource::Builtin(name), TargetKind::Plane2d) => builtin_plane(name, nx, ny)?,
            (TargetSource::Builtin(name), TargetKind::Volume3d) => {
                builtin_volume(name, [nx, ny, nz], scene.angular_frequency())?
            }
            (TargetSource::File(path), TargetKind::Plane2d) => load_target_2d(path, nx, ny)?,
            (TargetSource::File(path), TargetKind::Volume3d) => load_target_3d(path, scene.angular_frequency())?,
        };
        if target.len() != scene.target_count() {
            return Err(Error::MalformedVolume(format!(
                "target has {} samples, scene grid has {}",
                target.len(),
                scene.target_count()
            )));
        }
        Ok(target)
    }
}

/// How receiver noise is set for every sweep point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseSetting {
    /// One run per entry of the SNR axis.
    Relative,
    /// Fixed thermal floor; the SNR axis is ignored.
    Absolute { density_dbm_per_hz: f64, bandwidth_hz: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub scene: SceneConfig,
    pub target: TargetSource,
    pub measurements: Vec<usize>,
    pub snr_db: Vec<f64>,
    pub distances: Vec<f64>,
    /// Overrides the distance schedule when set.
    pub gamma: Option<f64>,
    pub threshold_factor: f64,
    pub truncation: TruncationRule,
    pub seed: u64,
    /// Seeds `seed .. seed + repeats` are run at every point.
    pub repeats: usize,
    pub output: PathBuf,
    pub calibration: Calibration,
    pub noise: NoiseSetting,
    /// Skip synthesis and measure with the ideal masks.
    pub ideal_masks: bool,
    pub exact_phases: bool,
    pub keep_artifacts: bool,
    pub write_images: bool,
    /// Directory for on-disk kernel caches.
    pub kernel_cache: Option<PathBuf>,
    pub workers: usize,
    /// Record wall-clock time per point; off keeps the metrics byte-stable.
    pub timing: bool,
}

impl ExperimentPlan {
    /// Single-point plan around `scene` with default settings.
    pub fn new(scene: SceneConfig) -> Self {
        let m = scene.target_count();
        let default_i = match scene.target_kind {
            TargetKind::Plane2d => (m + 1).next_power_of_two(),
            TargetKind::Volume3d => m.next_power_of_two(),
        }
        .max(4);
        let target = match scene.target_kind {
            TargetKind::Plane2d => "letters-seu",
            TargetKind::Volume3d => "columnar-seu",
        };
        Self {
            distances: vec![scene.target_distance],
            scene,
            target: TargetSource::Builtin(target.into()),
            measurements: vec![default_i],
            snr_db: vec![20.0],
            gamma: None,
            threshold_factor: DEFAULT_THRESHOLD_FACTOR,
            truncation: TruncationRule::Squared,
            seed: 0,
            repeats: 1,
            output: PathBuf::from("run"),
            calibration: Calibration::CellMeasure,
            noise: NoiseSetting::Relative,
            ideal_masks: false,
            exact_phases: false,
            keep_artifacts: false,
            write_images: true,
            kernel_cache: None,
            workers: 1,
            timing: false,
        }
    }

    pub fn from_config_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let scene = SceneConfig::from_table(&table)?;
        let plan_table: toml::Table = table
            .into_iter()
            .filter(|(k, _)| !SCENE_KEYS.contains(&k.as_str()))
            .collect();
        let file: PlanFile = plan_table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let plan = file.into_plan(scene)?;
        plan.check()?;
        Ok(plan)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_config_str(&fs::read_to_string(path)?)
    }

    /// Resolved plan in the flat file format, keys sorted.
    pub fn to_config_string(&self) -> String {
        let mut table: BTreeMap<String, toml::Value> = self
            .scene
            .to_config_string()
            .parse::<toml::Table>()
            .expect("scene snapshot parses")
            .into_iter()
            .collect();
        let plan = toml::Table::try_from(PlanFile::from(self)).expect("plan serializes");
        table.extend(plan);
        table.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Checks sweep axes and measurement counts.
    pub fn check(&self) -> Result<()> {
        if self.measurements.is_empty() || self.distances.is_empty() || self.snr_db.is_empty() {
            return Err(Error::Config("sweep axes must be nonempty".into()));
        }
        if self.repeats == 0 || self.workers == 0 {
            return Err(Error::Config("repeats and workers must be at least 1".into()));
        }
        if let Some(bad) = self.distances.iter().find(|z| !(**z > 0.0 && z.is_finite())) {
            return Err(Error::NonPositiveDimension {
                name: "target_distance",
                value: *bad,
            });
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::NonPositiveDimension { name: "gamma", value: g });
            }
        }
        let points = self.scene.target_count();
        let required = match self.scene.target_kind {
            TargetKind::Plane2d => points + 1,
            TargetKind::Volume3d => points,
        };
        for &i in &self.measurements {
            check_measurement_count(i)?;
            if i < required {
                return Err(Error::InsufficientMeasurements {
                    measurements: i,
                    points,
                    required,
                });
            }
        }
        Ok(())
    }

    fn noise_points(&self) -> Vec<NoiseMode> {
        match self.noise {
            NoiseSetting::Relative => self.snr_db.iter().map(|&snr_db| NoiseMode::Relative { snr_db }).collect(),
            NoiseSetting::Absolute {
                density_dbm_per_hz,
                bandwidth_hz,
            } => vec![NoiseMode::Absolute {
                density_dbm_per_hz,
                bandwidth_hz,
            }],
        }
    }

    fn gamma_at(&self, distance: f64) -> f64 {
        self.gamma.unwrap_or_else(|| gamma_for_distance(distance))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T> OneOrMany<T> {
    fn into_vec(self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v],
            OneOrMany::Many(v) => v,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanFile {
    target: Option<String>,
    measurements: Option<OneOrMany<usize>>,
    snr_db: Option<OneOrMany<f64>>,
    distances: Option<OneOrMany<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
    threshold_factor: Option<f64>,
    truncation: Option<String>,
    seed: Option<u64>,
    repeats: Option<usize>,
    output: Option<String>,
    calibration: Option<String>,
    noise: Option<String>,
    noise_density_dbm_per_hz: Option<f64>,
    bandwidth_hz: Option<f64>,
    ideal_masks: Option<bool>,
    exact_phases: Option<bool>,
    keep_artifacts: Option<bool>,
    write_images: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    kernel_cache: Option<String>,
    workers: Option<usize>,
    timing: Option<bool>,
}

impl PlanFile {
    fn into_plan(self, scene: SceneConfig) -> Result<ExperimentPlan> {
        let mut plan = ExperimentPlan::new(scene);
        if let Some(t) = self.target {
            plan.target = TargetSource::parse(&t);
        }
        if let Some(v) = self.measurements {
            plan.measurements = v.into_vec();
        }
        if let Some(v) = self.snr_db {
            plan.snr_db = v.into_vec();
        }
        if let Some(v) = self.distances {
            plan.distances = v.into_vec();
        }
        plan.gamma = self.gamma;
        if let Some(v) = self.threshold_factor {
            plan.threshold_factor = v;
        }
        if let Some(v) = self.truncation {
            plan.truncation = match v.as_str() {
                "squared" => TruncationRule::Squared,
                "linear" => TruncationRule::Linear,
                other => return Err(Error::Config(format!("unknown truncation rule `{other}`"))),
            };
        }
        plan.seed = self.seed.unwrap_or(plan.seed);
        plan.repeats = self.repeats.unwrap_or(plan.repeats);
        if let Some(v) = self.output {
            plan.output = PathBuf::from(v);
        }
        if let Some(v) = self.calibration {
            plan.calibration = Calibration::parse(&v)?;
        }
        plan.noise = match self.noise.as_deref() {
            None | Some("relative") => NoiseSetting::Relative,
            Some("absolute") => NoiseSetting::Absolute {
                density_dbm_per_hz: self.noise_density_dbm_per_hz.unwrap_or(-174.0),
                bandwidth_hz: self.bandwidth_hz.unwrap_or(1e6),
            },
            Some(other) => return Err(Error::Config(format!("unknown noise mode `{other}`"))),
        };
        plan.ideal_masks = self.ideal_masks.unwrap_or(plan.ideal_masks);
        plan.exact_phases = self.exact_phases.unwrap_or(plan.exact_phases);
        plan.keep_artifacts = self.keep_artifacts.unwrap_or(plan.keep_artifacts);
        plan.write_images = self.write_images.unwrap_or(plan.write_images);
        plan.kernel_cache = self.kernel_cache.map(PathBuf::from);
        plan.workers = self.workers.unwrap_or(plan.workers);
        plan.timing = self.timing.unwrap_or(plan.timing);
        Ok(plan)
    }
}

impl From<&ExperimentPlan> for PlanFile {
    fn from(p: &ExperimentPlan) -> Self {
        let (noise, density, bandwidth) = match p.noise {
            NoiseSetting::Relative => ("relative", None, None),
            NoiseSetting::Absolute {
                density_dbm_per_hz,
                bandwidth_hz,
            } => ("absolute", Some(density_dbm_per_hz), Some(bandwidth_hz)),
        };
        Self {
            target: Some(p.target.as_config()),
            measurements: Some(OneOrMany::Many(p.measurements.clone())),
            snr_db: Some(OneOrMany::Many(p.snr_db.clone())),
            distances: Some(OneOrMany::Many(p.distances.clone())),
            gamma: p.gamma,
            threshold_factor: Some(p.threshold_factor),
            truncation: Some(
                match p.truncation {
                    TruncationRule::Squared => "squared",
                    TruncationRule::Linear => "linear",
                }
                .into(),
            ),
            seed: Some(p.seed),
            repeats: Some(p.repeats),
            output: Some(p.output.display().to_string()),
            calibration: Some(p.calibration.as_str().into()),
            noise: Some(noise.into()),
            noise_density_dbm_per_hz: density,
            bandwidth_hz: bandwidth,
            ideal_masks: Some(p.ideal_masks),
            exact_phases: Some(p.exact_phases),
            keep_artifacts: Some(p.keep_artifacts),
            write_images: Some(p.write_images),
            kernel_cache: p.kernel_cache.as_ref().map(|d| d.display().to_string()),
            workers: Some(p.workers),
            timing: Some(p.timing),
        }
    }
}

/// One line of the metrics table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub measurements: usize,
    pub snr_db: Option<f64>,
    pub target_distance: f64,
    pub gamma: Option<f64>,
    pub nmse: Option<f64>,
    pub retained_rank: Option<usize>,
    pub wall_ms: u64,
    pub seed: u64,
    pub error: Option<String>,
}

#[derive(Debug, Serialize)]
struct MetricsRow {
    #[serde(rename = "I")]
    measurements: usize,
    snr_db: Option<f64>,
    z_prime: f64,
    gamma: Option<f64>,
    nmse: Option<f64>,
    retained_rank: Option<usize>,
    wall_ms: u64,
    seed: u64,
}

impl From<&SweepRow> for MetricsRow {
    fn from(r: &SweepRow) -> Self {
        Self {
            measurements: r.measurements,
            snr_db: r.snr_db,
            z_prime: r.target_distance,
            gamma: r.gamma,
            nmse: r.nmse,
            retained_rank: r.retained_rank,
            wall_ms: r.wall_ms,
            seed: r.seed,
        }
    }
}

pub fn write_metrics<W: Write>(w: W, rows: &[SweepRow]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(w);
    for row in rows {
        writer.serialize(MetricsRow::from(row))?;
    }
    writer.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub output: PathBuf,
    pub rows: Vec<SweepRow>,
    pub kernel_builds: usize,
    pub svd_builds: usize,
}

impl RunReport {
    pub fn failures(&self) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(|r| r.error.is_some())
    }
}

/// In-memory cache of kernels (by scene fingerprint) and regularized
/// inverses (by fingerprint and regularization settings).
#[derive(Default)]
pub struct OperatorCache {
    kernels: HashMap<u64, Arc<KernelMatrix>>,
    inverses: HashMap<(u64, u64, u64, bool), Arc<RegularizedInverse>>,
    disk: Option<PathBuf>,
    pub kernel_builds: usize,
    pub svd_builds: usize,
}

impl OperatorCache {
    pub fn with_disk(dir: Option<PathBuf>) -> Self {
        Self {
            disk: dir,
            ..Self::default()
        }
    }

    pub fn kernel(&mut self, scene: &ValidatedScene, grids: &SampleGrids) -> Result<Arc<KernelMatrix>> {
        let key = scene.fingerprint();
        if let Some(k) = self.kernels.get(&key) {
            return Ok(k.clone());
        }
        let kind = KernelKind::for_target(scene.kind());
        let file = self.disk.as_ref().map(|d| d.join(format!("kernel-{key:016x}.bin")));
        let cached = match &file {
            Some(path) if path.exists() => {
                let k = KernelMatrix::read_from(std::io::BufReader::new(File::open(path)?))?;
                (k.fingerprint == key && k.kind == kind && k.rows() == grids.m() && k.cols() == grids.n()).then_some(k)
            }
            _ => None,
        };
        let kernel = match cached {
            Some(k) => k,
            None => {
                self.kernel_builds += 1;
                let k = assemble_kernel(scene, grids, kind, AssemblyOptions::default())?;
                if let Some(path) = &file {
                    fs::create_dir_all(path.parent().expect("cache file has a parent"))?;
                    k.write_to(BufWriter::new(File::create(path)?))?;
                }
                k
            }
        };
        let kernel = Arc::new(kernel);
        self.kernels.insert(key, kernel.clone());
        Ok(kernel)
    }

    pub fn inverse(
        &mut self,
        kernel: &KernelMatrix,
        gamma: f64,
        threshold_factor: f64,
        rule: TruncationRule,
    ) -> Result<Arc<RegularizedInverse>> {
        let key = (
            kernel.fingerprint,
            gamma.to_bits(),
            threshold_factor.to_bits(),
            rule == TruncationRule::Linear,
        );
        if let Some(inv) = self.inverses.get(&key) {
            return Ok(inv.clone());
        }
        self.svd_builds += 1;
        let inv = Arc::new(tikhonov_inverse_with(kernel, gamma, threshold_factor, rule)?);
        self.inverses.insert(key, inv.clone());
        Ok(inv)
    }
}

/// Masks and their variance for one `(distance, I)` pair.
struct PreparedMasks {
    masks: MaskSet,
    variance: MaskVariance,
    rank: Option<usize>,
}

struct Stage<'a> {
    plan: &'a ExperimentPlan,
    scene: &'a ValidatedScene,
    grids: &'a SampleGrids,
    target: &'a TargetModel,
    psf: &'a [Complex64],
    gamma: Option<f64>,
}

fn tag(value: f64) -> String {
    if value.is_infinite() {
        "inf".into()
    } else {
        format!("{value}")
    }
}

/// Scale that maps an ideal estimate onto the 0/1 or contrast truth.
pub fn cell_scale(scene: &ValidatedScene, grids: &SampleGrids) -> f64 {
    match scene.kind() {
        TargetKind::Plane2d => (Complex64::new(1.0, 0.0) - scene.reflection_coeff).norm() * grids.target_cell,
        TargetKind::Volume3d => grids.target_cell,
    }
}

/// Reconstructs the target from `masks` and a measurement set.
pub fn reconstruct(
    scene: &ValidatedScene,
    grids: &SampleGrids,
    set: &crate::measurement::MeasurementSet,
    masks: &[Vec<Complex64>],
    variance: &MaskVariance,
) -> Result<ReconstructionResult> {
    match scene.kind() {
        TargetKind::Plane2d => reconstruct_2d(set, masks, &psf_values(scene, grids), variance),
        TargetKind::Volume3d => reconstruct_3d(set, masks, scene.wavenumber(), variance),
    }
}

impl Stage<'_> {
    fn point(&self, prepared: &PreparedMasks, noise: NoiseMode, seed: u64) -> Result<(f64, Vec<Complex64>)> {
        let inputs = PointInputs {
            scene: self.scene,
            grids: self.grids,
            target: self.target,
            masks: &prepared.masks,
            variance: &prepared.variance,
            psf: self.psf,
        };
        let result = simulate_point(&inputs, noise, seed, self.plan.calibration, self.gamma)?;
        Ok((result.nmse.expect("scored"), result.estimate))
    }

    fn write_images(&self, dir: &Path, stem: &str, estimate: &[Complex64]) -> Result<()> {
        let [nx, ny, nz] = self.scene.target_samples;
        match self.scene.kind() {
            TargetKind::Plane2d => {
                let values: Vec<f64> = estimate.iter().map(|c| c.re).collect();
                write_pgm(BufWriter::new(File::create(dir.join(format!("{stem}.pgm")))?), nx, ny, &values, None)?;
            }
            TargetKind::Volume3d => {
                for (z, slice) in estimate.chunks(nx * ny).enumerate().take(nz) {
                    for (part, pick) in [("re", (|c: &Complex64| c.re) as fn(&Complex64) -> f64), ("im", |c| c.im)] {
                        let values: Vec<f64> = slice.iter().map(pick).collect();
                        let path = dir.join(format!("{stem}_slice{z}_{part}.pgm"));
                        write_pgm(BufWriter::new(File::create(path)?), nx, ny, &values, None)?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Everything one measurement-and-reconstruction pass reads.
pub struct PointInputs<'a> {
    pub scene: &'a ValidatedScene,
    pub grids: &'a SampleGrids,
    pub target: &'a TargetModel,
    pub masks: &'a MaskSet,
    pub variance: &'a MaskVariance,
    /// Plane scenes only; may be empty for volumes.
    pub psf: &'a [Complex64],
}

/// Measures, reconstructs and scores one point. The returned estimate is
/// calibrated with `calibration` and `nmse` is filled in.
pub fn simulate_point(
    inputs: &PointInputs,
    noise: NoiseMode,
    seed: u64,
    calibration: Calibration,
    gamma: Option<f64>,
) -> Result<ReconstructionResult> {
    let PointInputs {
        scene,
        grids,
        target,
        masks,
        variance,
        psf,
    } = *inputs;
    let active = masks.active();
    let set = measure(scene, grids, masks, target, noise, seed)?;
    let mut result = match scene.kind() {
        TargetKind::Plane2d => reconstruct_2d(&set, active, psf, variance)?,
        TargetKind::Volume3d => reconstruct_3d(&set, active, scene.wavenumber(), variance)?,
    };
    result.metadata = RunMetadata {
        measurements: active.len(),
        snr_db: noise.snr_db(),
        target_distance: scene.target_distance,
        gamma,
    };
    let truth = target.values();
    result.estimate = calibrate_estimate(&result.estimate, calibration, Some(&truth), cell_scale(scene, grids));
    result.nmse = Some(nmse(&truth, &result.estimate)?);
    Ok(result)
}

/// Runs every sweep point of `plan`, writing the run directory. Stage
/// failures are recorded per point; only output errors abort the run.
pub fn run_plan(plan: &ExperimentPlan) -> Result<RunReport> {
    plan.check()?;
    let out = plan.output.clone();
    fs::create_dir_all(&out)?;
    fs::write(out.join("config.toml"), plan.to_config_string())?;
    let images = out.join("images");
    if plan.write_images {
        fs::create_dir_all(&images)?;
    }
    let artifacts = out.join("artifacts");
    if plan.keep_artifacts {
        fs::create_dir_all(&artifacts)?;
    }

    let mut cache = OperatorCache::with_disk(plan.kernel_cache.clone());
    let mut rows = Vec::new();
    let noise_points = plan.noise_points();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.workers)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;

    for &distance in &plan.distances {
        let gamma = (!plan.ideal_masks).then(|| plan.gamma_at(distance));
        let failed = |rows: &mut Vec<SweepRow>, measurements: &[usize], err: &Error| {
            for &i in measurements {
                for noise in &noise_points {
                    for r in 0..plan.repeats {
                        rows.push(SweepRow {
                            measurements: i,
                            snr_db: noise.snr_db(),
                            target_distance: distance,
                            gamma,
                            nmse: None,
                            retained_rank: None,
                            wall_ms: 0,
                            seed: plan.seed + r as u64,
                            error: Some(err.to_string()),
                        });
                    }
                }
            }
        };
        let setup = (|| -> Result<_> {
            let scene = validate_scene(SceneConfig {
                target_distance: distance,
                ..plan.scene.clone()
            })?;
            let grids = sample_grids(&scene);
            let target = plan.target.load(&scene)?;
            Ok((scene, grids, target))
        })();
        let (scene, grids, target) = match setup {
            Ok(v) => v,
            Err(e) => {
                failed(&mut rows, &plan.measurements, &e);
                continue;
            }
        };
        let operators = if plan.ideal_masks {
            Ok(None)
        } else {
            cache.kernel(&scene, &grids).and_then(|k| {
                let inv = cache.inverse(&k, gamma.expect("synthesis has a gamma"), plan.threshold_factor, plan.truncation)?;
                Ok(Some((k, inv)))
            })
        };
        let operators = match operators {
            Ok(v) => v,
            Err(e) => {
                failed(&mut rows, &plan.measurements, &e);
                continue;
            }
        };
        let psf = match scene.kind() {
            TargetKind::Plane2d => psf_values(&scene, &grids),
            TargetKind::Volume3d => Vec::new(),
        };
        let stage = Stage {
            plan,
            scene: &scene,
            grids: &grids,
            target: &target,
            psf: &psf,
            gamma,
        };
        let rule = if plan.exact_phases {
            PhaseRule::Exact
        } else {
            PhaseRule::Linearized
        };

        for &i in &plan.measurements {
            let prepared = (|| -> Result<PreparedMasks> {
                let ideal = ideal_masks_with(&scene, &grids, i, rule)?;
                let (masks, rank) = match &operators {
                    None => (ideal, None),
                    Some((k, inv)) => (realize_masks(k, inv, &ideal, scene.amplification)?, Some(inv.rank)),
                };
                let variance = estimate_c(masks.active(), scene.kind())?;
                if plan.keep_artifacts {
                    let stem = format!("z{}_I{i}", tag(distance));
                    let w = BufWriter::new(File::create(artifacts.join(format!("{stem}_ideal.bin")))?);
                    write_vector_set(w, masks.kind, VectorStage::IdealMask, masks.fingerprint, &masks.ideal)?;
                    if let (Some(real), Some((_, inv))) = (&masks.realized, &operators) {
                        let w = BufWriter::new(File::create(artifacts.join(format!("{stem}_realized.bin")))?);
                        write_vector_set(w, masks.kind, VectorStage::RealizedMask, masks.fingerprint, &real.fields)?;
                        let w = BufWriter::new(File::create(artifacts.join(format!("{stem}_profiles.bin")))?);
                        write_profiles(w, masks.kind, masks.fingerprint, &real.profiles)?;
                        fs::write(artifacts.join(format!("{stem}_synthesis.txt")), profile_summary(inv, &real.profiles))?;
                    }
                }
                Ok(PreparedMasks { masks, variance, rank })
            })();
            let prepared = match prepared {
                Ok(p) => p,
                Err(e) => {
                    failed(&mut rows, &[i], &e);
                    continue;
                }
            };
            let points: Vec<(NoiseMode, u64)> = noise_points
                .iter()
                .flat_map(|&n| (0..plan.repeats).map(move |r| (n, plan.seed + r as u64)))
                .collect();
            let run_one = |&(noise, seed): &(NoiseMode, u64)| -> Result<SweepRow> {
                let start = Instant::now();
                let outcome = stage.point(&prepared, noise, seed);
                let (value, error) = match outcome {
                    Ok((value, estimate)) => {
                        if plan.write_images {
                            let snr = noise.snr_db().map_or_else(|| "abs".to_string(), tag);
                            let stem = format!("z{}_I{i}_snr{snr}_seed{seed}", tag(distance));
                            stage.write_images(&images, &stem, &estimate)?;
                        }
                        (Some(value), None)
                    }
                    Err(e) => (None, Some(e.to_string())),
                };
                Ok(SweepRow {
                    measurements: i,
                    snr_db: noise.snr_db(),
                    target_distance: distance,
                    gamma,
                    nmse: value,
                    retained_rank: prepared.rank,
                    wall_ms: if plan.timing { start.elapsed().as_millis() as u64 } else { 0 },
                    seed,
                    error,
                })
            };
            let point_rows: Vec<SweepRow> = if plan.workers > 1 {
                pool.install(|| points.par_iter().map(run_one).collect::<Result<_>>())?
            } else {
                points.iter().map(run_one).collect::<Result<_>>()?
            };
            rows.extend(point_rows);
        }
    }

    write_metrics(BufWriter::new(File::create(out.join("metrics.csv"))?), &rows)?;
    let mut log = BufWriter::new(File::create(out.join("errors.log"))?);
    for r in rows.iter().filter(|r| r.error.is_some()) {
        writeln!(
            log,
            "z_prime={} I={} snr_db={} seed={}: {}",
            r.target_distance,
            r.measurements,
            r.snr_db.map_or_else(|| "abs".to_string(), tag),
            r.seed,
            r.error.as_deref().unwrap_or_default()
        )?;
    }
    log.flush()?;
    Ok(RunReport {
        output: out,
        rows,
        kernel_builds: cache.kernel_builds,
        svd_builds: cache.svd_builds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_plan(dir: &Path) -> ExperimentPlan {
        let scene = SceneConfig {
            ris_samples: [8, 8],
            target_samples: [4, 4, 1],
            ..SceneConfig::desk_2d()
        };
        ExperimentPlan {
            measurements: vec![32],
            snr_db: vec![10.0, 20.0],
            target: TargetSource::Builtin("block".into()),
            output: dir.to_path_buf(),
            ..ExperimentPlan::new(scene)
        }
    }

    #[test]
    fn plan_round_trips_through_config_text() {
        let dir = tempfile::tempdir().unwrap();
        let mut plan = small_plan(dir.path());
        plan.gamma = Some(1e-13);
        plan.snr_db.push(f64::INFINITY);
        plan.noise = NoiseSetting::Absolute {
            density_dbm_per_hz: -174.0,
            bandwidth_hz: 1e6,
        };
        let text = plan.to_config_string();
        let back = ExperimentPlan::from_config_str(&text).unwrap();
        assert_eq!(back.to_config_string(), text);
        assert_eq!(back.measurements, plan.measurements);
        assert_eq!(back.gamma, Some(1e-13));
        assert_eq!(back.noise, plan.noise);
    }

    #[test]
    fn plan_rejects_bad_input() {
        assert!(ExperimentPlan::from_config_str("nonsense_key = 3").is_err());
        assert!(ExperimentPlan::from_config_str("measurements = []").is_err());
        // 2D needs I >= M + 1 with the default 16x16 grid
        assert!(matches!(
            ExperimentPlan::from_config_str("measurements = 256"),
            Err(Error::InsufficientMeasurements { required: 257, .. })
        ));
        assert!(matches!(
            ExperimentPlan::from_config_str("measurements = 768"),
            Err(Error::UnsupportedOrder(768))
        ));
        let ok = ExperimentPlan::from_config_str("measurements = [512, 1024]\nsnr_db = 30\n").unwrap();
        assert_eq!(ok.measurements, vec![512, 1024]);
        assert_eq!(ok.snr_db, vec![30.0]);
    }

    #[test]
    fn run_writes_outputs_and_reuses_operators() {
        let dir = tempfile::tempdir().unwrap();
        let plan = small_plan(dir.path());
        let report = run_plan(&plan).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert_eq!((report.kernel_builds, report.svd_builds), (1, 1));
        assert_eq!(report.failures().count(), 0);
        let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert!(csv.starts_with("I,snr_db,z_prime,gamma,nmse,retained_rank,wall_ms,seed\n"));
        assert!(dir.path().join("config.toml").exists());
        assert!(dir.path().join("images/z0.125_I32_snr10_seed0.pgm").exists());
    }

    #[test]
    fn stage_errors_are_recorded_per_point() {
        let dir = tempfile::tempdir().unwrap();
        let mut plan = small_plan(dir.path());
        // beyond the RIS Rayleigh distance the scene is rejected
        plan.distances = vec![0.125, 100.0];
        let report = run_plan(&plan).unwrap();
        assert_eq!(report.rows.len(), 4);
        assert_eq!(report.failures().count(), 2);
        let log = fs::read_to_string(dir.path().join("errors.log")).unwrap();
        assert_eq!(log.lines().count(), 2);
        assert!(log.contains("z_prime=100"));
    }

    #[test]
    fn ideal_mask_noiseless_run_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut plan = small_plan(dir.path());
        plan.ideal_masks = true;
        plan.exact_phases = true;
        plan.snr_db = vec![f64::INFINITY];
        plan.target = TargetSource::Builtin("letters-seu".into());
        let report = run_plan(&plan).unwrap();
        assert!(report.rows[0].nmse.unwrap() < 1e-6);
        assert_eq!(report.rows[0].gamma, None);
        assert_eq!((report.kernel_builds, report.svd_builds), (0, 0));
    }

    #[test]
    fn disk_kernel_cache_is_reused() {
        let dir = tempfile::tempdir().unwrap();
        let mut plan = small_plan(&dir.path().join("a"));
        plan.kernel_cache = Some(dir.path().join("cache"));
        plan.write_images = false;
        let first = run_plan(&plan).unwrap();
        assert_eq!(first.kernel_builds, 1);
        plan.output = dir.path().join("b");
        let second = run_plan(&plan).unwrap();
        assert_eq!(second.kernel_builds, 0);
        assert_eq!(first.rows, second.rows);
    }
}
