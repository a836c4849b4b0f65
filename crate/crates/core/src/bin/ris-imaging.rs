use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ris_imaging::em::{assemble_kernel, AssemblyOptions, KernelKind};
use ris_imaging::experiment::{cell_scale, reconstruct, run_plan, ExperimentPlan, NoiseSetting};
use ris_imaging::masks::{ideal_masks_with, write_vector_set, MaskSet, PhaseRule, VectorStage};
use ris_imaging::measurement::{measure, read_measurements_csv, write_measurements_csv, NoiseMode};
use ris_imaging::reconstruct::{calibrate_estimate, estimate_c, nmse, Calibration};
use ris_imaging::scene::{resolution, sample_grids, validate_scene, SampleGrids, SceneConfig, TargetKind, ValidatedScene};
use ris_imaging::synthesis::{
    gamma_for_distance, profile_summary, realize_masks, tikhonov_inverse_with, write_profiles,
};
use ris_imaging::targets::write_pgm;
use ris_imaging::{Error, Result};

/// Near-field imaging with RIS-generated virtual masks.
#[derive(Parser)]
#[command(name = "ris-imaging", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a configuration and print the derived scene quantities.
    Validate(Common),
    /// Assemble the RIS-to-target kernel and write it to disk.
    Kernel(Common),
    /// Write the ideal mask set.
    Masks(Common),
    /// Synthesize RIS profiles for the ideal masks.
    Synthesize(Common),
    /// Simulate receiver measurements and write them as CSV.
    Measure(Common),
    /// Reconstruct from a measurement CSV written by `measure`.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        /// Measurement CSV.
        #[arg(long)]
        input: PathBuf,
    },
    /// Run every point of a plan.
    Run(Common),
    /// Run a plan with its sweep axes replaced from the command line.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        distances: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        snr: Option<Vec<f64>>,
        #[arg(long)]
        repeats: Option<usize>,
    },
}

#[derive(Args)]
struct Common {
    /// Plan or scene file (flat TOML).
    config: PathBuf,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Measurement counts; single-stage verbs use the first.
    #[arg(short = 'I', long = "measurements", value_delimiter = ',')]
    measurements: Option<Vec<usize>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    workers: Option<usize>,
    /// none, max1, cell or lsq.
    #[arg(long)]
    calibration: Option<String>,
    /// Measure with the ideal masks and skip synthesis.
    #[arg(long)]
    ideal_masks: bool,
    #[arg(long)]
    exact_phases: bool,
    /// Record wall-clock milliseconds per point.
    #[arg(long)]
    timing: bool,
    #[arg(long)]
    keep_artifacts: bool,
    /// Builtin target name or target file.
    #[arg(long)]
    target: Option<String>,
}

impl Common {
    fn plan(&self) -> Result<ExperimentPlan> {
        let mut plan = ExperimentPlan::from_file(&self.config)?;
        if let Some(v) = &self.output {
            plan.output = v.clone();
        }
        if let Some(v) = &self.measurements {
            plan.measurements = v.clone();
        }
        if let Some(v) = self.seed {
            plan.seed = v;
        }
        if let Some(v) = self.gamma {
            plan.gamma = Some(v);
        }
        if let Some(v) = self.workers {
            plan.workers = v;
        }
        if let Some(v) = &self.calibration {
            plan.calibration = Calibration::parse(v)?;
        }
        if let Some(v) = &self.target {
            plan.target = ris_imaging::experiment::TargetSource::parse(v);
        }
        plan.ideal_masks |= self.ideal_masks;
        plan.exact_phases |= self.exact_phases;
        plan.timing |= self.timing;
        plan.keep_artifacts |= self.keep_artifacts;
        plan.check()?;
        Ok(plan)
    }
}

/// Scene at the first distance of the plan.
fn first_scene(plan: &ExperimentPlan) -> Result<(ValidatedScene, SampleGrids)> {
    let scene = validate_scene(SceneConfig {
        target_distance: plan.distances[0],
        ..plan.scene.clone()
    })?;
    let grids = sample_grids(&scene);
    Ok((scene, grids))
}

fn phase_rule(plan: &ExperimentPlan) -> PhaseRule {
    if plan.exact_phases {
        PhaseRule::Exact
    } else {
        PhaseRule::Linearized
    }
}

fn gamma(plan: &ExperimentPlan) -> f64 {
    plan.gamma.unwrap_or_else(|| gamma_for_distance(plan.distances[0]))
}

/// Masks used for measurement: ideal, or realized through the kernel.
fn active_masks(plan: &ExperimentPlan, scene: &ValidatedScene, grids: &SampleGrids) -> Result<MaskSet> {
    let ideal = ideal_masks_with(scene, grids, plan.measurements[0], phase_rule(plan))?;
    if plan.ideal_masks {
        return Ok(ideal);
    }
    let kernel = assemble_kernel(scene, grids, KernelKind::for_target(scene.kind()), AssemblyOptions::default())?;
    let inv = tikhonov_inverse_with(&kernel, gamma(plan), plan.threshold_factor, plan.truncation)?;
    realize_masks(&kernel, &inv, &ideal, scene.amplification)
}

fn noise(plan: &ExperimentPlan) -> NoiseMode {
    match plan.noise {
        NoiseSetting::Relative => NoiseMode::Relative { snr_db: plan.snr_db[0] },
        NoiseSetting::Absolute {
            density_dbm_per_hz,
            bandwidth_hz,
        } => NoiseMode::Absolute {
            density_dbm_per_hz,
            bandwidth_hz,
        },
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn validate(plan: &ExperimentPlan) -> Result<()> {
    let (scene, grids) = first_scene(plan)?;
    let res = resolution(&scene);
    println!("kind               {}", scene.kind().as_str());
    println!("fingerprint        {:016x}", scene.fingerprint());
    println!("ris samples N      {}", grids.n());
    println!("target samples M   {}", grids.m());
    println!("wavenumber         {:.6} rad/m", scene.wavenumber());
    println!("ris rayleigh       {:.6} m", scene.ris_rayleigh_distance());
    println!("target rayleigh    {:.6} m", scene.target_rayleigh_distance());
    println!("receiver distance  {:.6} m", scene.receiver_distance());
    println!("resolution x       {:.6} m (sin {:.6})", res.dx, res.sin_half_x);
    println!("resolution y       {:.6} m (sin {:.6})", res.dy, res.sin_half_y);
    println!("gamma              {:e}", gamma(plan));
    Ok(())
}

fn kernel(plan: &ExperimentPlan) -> Result<()> {
    let (scene, grids) = first_scene(plan)?;
    let kernel = assemble_kernel(&scene, &grids, KernelKind::for_target(scene.kind()), AssemblyOptions::default())?;
    let path = plan.output.join(format!("kernel-{:016x}.bin", kernel.fingerprint));
    kernel.write_to(create(&path)?)?;
    let inv = tikhonov_inverse_with(&kernel, gamma(plan), plan.threshold_factor, plan.truncation)?;
    let mut sv = String::from("index,singular_value\n");
    for (i, s) in inv.singular_values.iter().enumerate() {
        sv.push_str(&format!("{i},{s:e}\n"));
    }
    fs::write(plan.output.join("singular_values.csv"), sv)?;
    println!("wrote {} ({}x{}), retained rank {}", path.display(), kernel.rows(), kernel.cols(), inv.rank);
    Ok(())
}

fn masks(plan: &ExperimentPlan) -> Result<()> {
    let (scene, grids) = first_scene(plan)?;
    let set = ideal_masks_with(&scene, &grids, plan.measurements[0], phase_rule(plan))?;
    let path = plan.output.join(format!("masks-I{}.bin", set.count()));
    write_vector_set(create(&path)?, set.kind, VectorStage::IdealMask, set.fingerprint, &set.ideal)?;
    println!("wrote {} ({} masks of length {})", path.display(), set.count(), set.len());
    Ok(())
}

fn synthesize(plan: &ExperimentPlan) -> Result<()> {
    let (scene, grids) = first_scene(plan)?;
    let ideal = ideal_masks_with(&scene, &grids, plan.measurements[0], phase_rule(plan))?;
    let kernel = assemble_kernel(&scene, &grids, KernelKind::for_target(scene.kind()), AssemblyOptions::default())?;
    let inv = tikhonov_inverse_with(&kernel, gamma(plan), plan.threshold_factor, plan.truncation)?;
    let set = realize_masks(&kernel, &inv, &ideal, scene.amplification)?;
    let realized = set.realized.as_ref().expect("synthesis yields realized masks");
    let stem = plan.output.join(format!("I{}", set.count()));
    write_vector_set(
        create(&stem.with_extension("realized.bin"))?,
        set.kind,
        VectorStage::RealizedMask,
        set.fingerprint,
        &realized.fields,
    )?;
    write_profiles(create(&stem.with_extension("profiles.bin"))?, set.kind, set.fingerprint, &realized.profiles)?;
    let summary = profile_summary(&inv, &realized.profiles);
    fs::write(stem.with_extension("synthesis.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn measure_cmd(plan: &ExperimentPlan) -> Result<()> {
    let (scene, grids) = first_scene(plan)?;
    let target = plan.target.load(&scene)?;
    let set = active_masks(plan, &scene, &grids)?;
    let records = measure(&scene, &grids, &set, &target, noise(plan), plan.seed)?;
    let path = plan.output.join("measurements.csv");
    write_measurements_csv(create(&path)?, &records)?;
    println!("wrote {} ({} records, noise variance {:e})", path.display(), records.len(), records.noise_variance);
    Ok(())
}

fn reconstruct_cmd(plan: &ExperimentPlan, input: &Path) -> Result<()> {
    let (scene, grids) = first_scene(plan)?;
    let records = read_measurements_csv(BufReader::new(File::open(input)?))?;
    let set = active_masks(plan, &scene, &grids)?;
    let variance = estimate_c(set.active(), scene.kind())?;
    let result = reconstruct(&scene, &grids, &records, set.active(), &variance)?;
    let scale = cell_scale(&scene, &grids);
    let truth = plan.target.load(&scene).ok().map(|t| t.values());
    let calibrated = calibrate_estimate(&result.estimate, plan.calibration, truth.as_deref(), scale);
    let [nx, ny, nz] = scene.target_samples;
    fs::create_dir_all(&plan.output)?;
    for (z, slice) in calibrated.chunks(nx * ny).enumerate().take(nz) {
        let re: Vec<f64> = slice.iter().map(|c| c.re).collect();
        match scene.kind() {
            TargetKind::Plane2d => write_pgm(create(&plan.output.join("estimate.pgm"))?, nx, ny, &re, None)?,
            TargetKind::Volume3d => {
                let im: Vec<f64> = slice.iter().map(|c| c.im).collect();
                write_pgm(create(&plan.output.join(format!("estimate_slice{z}_re.pgm")))?, nx, ny, &re, None)?;
                write_pgm(create(&plan.output.join(format!("estimate_slice{z}_im.pgm")))?, nx, ny, &im, None)?;
            }
        }
    }
    println!("flagged points {}", variance.flagged_count());
    if let Some(truth) = truth {
        println!("nmse {:e}", nmse(&truth, &calibrated)?);
    }
    Ok(())
}

fn run(plan: &ExperimentPlan) -> Result<()> {
    let report = run_plan(plan)?;
    for row in &report.rows {
        let value = row.nmse.map_or_else(|| "failed".to_string(), |v| format!("{v:.6e}"));
        let snr = row.snr_db.map_or_else(|| "abs".to_string(), |v| format!("{v}"));
        println!(
            "z_prime={} I={} snr_db={} seed={} nmse={}",
            row.target_distance, row.measurements, snr, row.seed, value
        );
    }
    let failed = report.failures().count();
    if failed > 0 {
        eprintln!("{failed} point(s) failed; see {}", report.output.join("errors.log").display());
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Validate(c) => validate(&c.plan()?),
        Command::Kernel(c) => kernel(&c.plan()?),
        Command::Masks(c) => masks(&c.plan()?),
        Command::Synthesize(c) => synthesize(&c.plan()?),
        Command::Measure(c) => measure_cmd(&c.plan()?),
        Command::Reconstruct { common, input } => reconstruct_cmd(&common.plan()?, &input),
        Command::Run(c) => run(&c.plan()?),
        Command::Sweep {
            common,
            distances,
            snr,
            repeats,
        } => {
            let mut plan = common.plan()?;
            if let Some(v) = distances {
                plan.distances = v;
            }
            if let Some(v) = snr {
                plan.snr_db = v;
            }
            if let Some(v) = repeats {
                plan.repeats = v;
            }
            plan.check()?;
            run(&plan)
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Config(msg)) => {
            eprintln!("error: invalid configuration: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
