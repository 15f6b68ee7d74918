//! The `wflow` command line: data generation, PCA fitting, both training
//! stages, sampling and the conflict/variance diagnostics.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numerical abort.

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use waypoint_flow::backbone::BackboneConfig;
use waypoint_flow::data::checkpoint::atomic_write;
use waypoint_flow::data::config::format_kv;
use waypoint_flow::data::{
    export_dataset, export_image, generate_toy_dataset, load_image_folder, parse_kv, read_checkpoint, write_checkpoint,
    KvMap, ToyDatasetSpec,
};
use waypoint_flow::diagnostics::{compare_traces, trace_conflict, variance_decomposition, ConflictConfig, MixtureSpec};
use waypoint_flow::flow::Label;
use waypoint_flow::sampler::{sample, Models, SamplerConfig, Solver};
use waypoint_flow::training::{
    fit, load_pixel_models, load_waypoint_generator, projection_checkpoint, read_projection, PixelTrainer, Stage,
    StepRecord, TrainConfig, WaypointTrainer,
};
use waypoint_flow::waypoints::{fit_pca, stack_features, FeatureExtractor, ToyFeatureExtractor, WaypointGenerator};
use waypoint_flow::{Dataset32, Error, PixelGenerator32};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "wflow", version, about = "Waypoint-conditioned pixel flow matching")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the PCA projection of extractor features.
    PcaFit(PcaFitArgs),
    /// Train the waypoint generator.
    TrainWaypoints(TrainWaypointsArgs),
    /// Train the pixel generator under frozen waypoints, or the baseline.
    TrainPixel(TrainPixelArgs),
    /// Generate images from a pixel checkpoint.
    Sample(SampleArgs),
    /// Trace trajectory conflict along sampling paths.
    DiagnoseConflict(DiagnoseConflictArgs),
    /// Closed-form variance decomposition of a Gaussian mixture.
    DiagnoseVariance(DiagnoseVarianceArgs),
    /// Write the synthetic shape dataset as a PNG folder.
    MakeToyData(MakeToyDataArgs),
}

#[derive(Debug, Args)]
pub struct PcaFitArgs {
    /// Image folder with one subdirectory per class.
    #[arg(long)]
    pub data: PathBuf,
    /// Number of principal components kept.
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Fit on this many randomly chosen images instead of all of them.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long, default_value_t = 32)]
    pub image_size: usize,
    #[arg(long, default_value_t = 8)]
    pub patch_size: usize,
    #[arg(long, default_value_t = ToyFeatureExtractor::DEFAULT_DIM)]
    pub feature_dim: usize,
    #[arg(long, default_value_t = 0)]
    pub extractor_seed: u64,
    /// Seed of the image subsample.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keep raw PCA coordinates instead of unit-variance components.
    #[arg(long)]
    pub no_waypoint_norm: bool,
}

#[derive(Debug, Args)]
pub struct TrainWaypointsArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Projection file from `pca-fit`.
    #[arg(long, required_unless_present = "resume")]
    pub proj: Option<PathBuf>,
    /// `key = value` training settings.
    #[arg(long, required_unless_present = "resume")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a checkpoint of this stage; settings come from it.
    #[arg(long, conflicts_with_all = ["proj", "config"])]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainPixelArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint from `train-waypoints`.
    #[arg(long, required_unless_present_any = ["no_waypoints", "resume"], conflicts_with = "no_waypoints")]
    pub waypoints: Option<PathBuf>,
    #[arg(long, required_unless_present = "resume")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Train the baseline without waypoint conditioning.
    #[arg(long)]
    pub no_waypoints: bool,
    #[arg(long, conflicts_with_all = ["waypoints", "config", "no_waypoints"])]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct SamplerArgs {
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    #[arg(long, default_value = "heun", value_parser = parse_solver)]
    pub solver: Solver,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Checkpoint from `train-pixel`.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Class index, or `null` for unconditional samples.
    #[arg(long = "class", value_parser = parse_label)]
    pub class: Label,
    #[arg(long, default_value_t = 1)]
    pub num: usize,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[arg(long, default_value_t = 1.0)]
    pub cfg_scale: f64,
    #[arg(long, default_value = "0.1,1.0", value_parser = parse_interval)]
    pub cfg_interval: (f64, f64),
    #[arg(long)]
    pub out: PathBuf,
    /// Per-step trajectory norms as JSON lines.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagnoseConflictArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Second checkpoint; adds `<out>.b.csv` and the `a / b` ratios in `<out>.compare.json`.
    #[arg(long)]
    pub ckpt_b: Option<PathBuf>,
    /// Counterfactual label offset; defaults to half the class count.
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long, default_value_t = 4)]
    pub batches: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DiagnoseVarianceArgs {
    /// Preset name (`two-point`, `four-class`, `shared-tag`) or a JSON spec file.
    #[arg(long)]
    pub mixture: String,
    #[arg(long, default_value_t = 0.5)]
    pub t: f64,
    #[arg(long, default_value_t = 10_000)]
    pub num_z: usize,
    /// Posterior samples per point for the sampled estimate; 0 disables it.
    #[arg(long, default_value_t = 0)]
    pub num_x: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MakeToyDataArgs {
    #[arg(long)]
    pub classes: usize,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long)]
    pub per_class: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_solver(s: &str) -> Result<Solver, String> {
    Solver::parse(s).map_err(|e| e.to_string())
}

fn parse_label(s: &str) -> Result<Label, String> {
    if s.eq_ignore_ascii_case("null") {
        return Ok(Label::Null);
    }
    s.parse::<usize>().map(Label::Class).map_err(|_| format!("expected a class index or `null`, got `{s}`"))
}

fn parse_interval(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected `lo,hi`, got `{s}`"))?;
    let lo: f64 = a.trim().parse().map_err(|_| format!("bad interval start `{a}`"))?;
    let hi: f64 = b.trim().parse().map_err(|_| format!("bad interval end `{b}`"))?;
    if !(0.0 <= lo && lo < hi && hi <= 1.0) {
        return Err(format!("interval [{lo}, {hi}) is not inside [0, 1]"));
    }
    Ok((lo, hi))
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numerical { .. } | Error::NonFinite(_) => EXIT_NUMERICAL,
        _ => EXIT_DATA,
    }
}

pub fn execute(cmd: Command) -> waypoint_flow::Result<()> {
    match cmd {
        Command::PcaFit(a) => pca_fit(&a),
        Command::TrainWaypoints(a) => train_waypoints(&a),
        Command::TrainPixel(a) => train_pixel(&a),
        Command::Sample(a) => sample_cmd(&a),
        Command::DiagnoseConflict(a) => diagnose_conflict(&a),
        Command::DiagnoseVariance(a) => diagnose_variance(&a),
        Command::MakeToyData(a) => make_toy_data(&a),
    }
}

/// `<path>.<suffix>` next to an output file.
fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn ensure_parent(path: &Path) -> waypoint_flow::Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => Ok(fs::create_dir_all(p)?),
        _ => Ok(()),
    }
}

fn write_config(path: &Path, kv: &KvMap) -> waypoint_flow::Result<()> {
    atomic_write(path, format_kv(kv).as_bytes())
}

fn put(kv: &mut KvMap, key: &str, value: impl ToString) {
    kv.insert(key.to_string(), value.to_string());
}

fn put_path(kv: &mut KvMap, key: &str, path: &Path) {
    put(kv, key, path.display());
}

fn load_data(root: &Path, image_size: usize) -> waypoint_flow::Result<Dataset32> {
    let load = load_image_folder::<f32>(root, image_size)?;
    if !load.skipped.is_empty() {
        log::warn!("skipped {} unreadable files under {}", load.skipped.len(), root.display());
    }
    Ok(load.dataset)
}

fn class_count(root: &Path) -> waypoint_flow::Result<usize> {
    let mut n = 0;
    for e in fs::read_dir(root)? {
        if e?.path().is_dir() {
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InsufficientData(format!("no class directories under {}", root.display())));
    }
    Ok(n)
}

fn read_train_config(path: &Path, base: TrainConfig) -> waypoint_flow::Result<TrainConfig> {
    let text = fs::read_to_string(path)?;
    TrainConfig::from_kv(&parse_kv(&text)?, base)
}

fn pca_fit(a: &PcaFitArgs) -> waypoint_flow::Result<()> {
    let data = load_data(&a.data, a.image_size)?;
    let extractor = ToyFeatureExtractor::new(a.patch_size, a.feature_dim, a.extractor_seed)?;
    let images = match a.samples {
        Some(m) if m < data.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            let mut idx = sample_indices(&mut rng, data.len(), m).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| data.images[i].clone()).collect()
        }
        _ => data.images.clone(),
    };
    let features = stack_features(&extractor, &images)?;
    let fit = fit_pca(&features, a.dim)?;
    for w in &fit.warnings {
        log::warn!("{w:?}");
    }
    let proj = if a.no_waypoint_norm {
        fit.projection.with_unit_scales()
    } else {
        fit.projection
    };
    let mut ckpt = projection_checkpoint(&proj, &extractor);
    ckpt.set("images", images.len());
    ckpt.set("image_size", a.image_size);
    ckpt.set("normalized", !a.no_waypoint_norm);
    ensure_parent(&a.out)?;
    write_checkpoint(&a.out, &ckpt)?;
    let mut kv = ckpt.config.clone();
    put_path(&mut kv, "data", &a.data);
    put(&mut kv, "dim", a.dim);
    put(&mut kv, "seed", a.seed);
    write_config(&sidecar(&a.out, "cfg"), &kv)?;
    log::info!("fitted {} components on {} feature rows", proj.dim(), features.rows());
    Ok(())
}

/// Trains to the end, writing the checkpoint at every epoch boundary and a CSV step log.
fn run_stage<S: Stage>(stage: &mut S, out: &Path) -> waypoint_flow::Result<()> {
    ensure_parent(out)?;
    let mut log = BufWriter::new(fs::File::create(sidecar(out, "log.csv"))?);
    writeln!(log, "{}", StepRecord::CSV_HEADER)?;
    fit(stage, |s, rec, boundary| {
        rec.write_csv(&mut log)?;
        if boundary {
            log.flush()?;
            write_checkpoint(out, &s.to_checkpoint())?;
        }
        Ok(())
    })?;
    log.flush()?;
    if stage.total_steps() == stage.step_index() && !out.exists() {
        write_checkpoint(out, &stage.to_checkpoint())?;
    }
    Ok(())
}

fn echo_train_config(out: &Path, cfg: &TrainConfig, extra: &[(&str, String)]) -> waypoint_flow::Result<()> {
    let mut kv = KvMap::new();
    cfg.to_kv(&mut kv);
    for (k, v) in extra {
        put(&mut kv, k, v);
    }
    ensure_parent(out)?;
    write_config(&sidecar(out, "cfg"), &kv)
}

fn train_waypoints(a: &TrainWaypointsArgs) -> waypoint_flow::Result<()> {
    let mut trainer = if let Some(r) = &a.resume {
        let ckpt = read_checkpoint(r)?;
        let image_size = waypoint_flow::data::config::KvReader::new(&ckpt.config).require("model.image_size")?;
        WaypointTrainer::resume(&ckpt, load_data(&a.data, image_size)?)?
    } else {
        let (proj, config) = (a.proj.as_ref().expect("clap requires --proj"), a.config.as_ref().expect("clap requires --config"));
        let (projection, extractor) = read_projection::<f32>(&read_checkpoint(proj)?)?;
        let base = BackboneConfig {
            patch_size: extractor.patch_size(),
            waypoint_dim: projection.dim(),
            ..BackboneConfig::desk_waypoints(class_count(&a.data)?)
        };
        let cfg = read_train_config(config, TrainConfig::new(base))?;
        let data = load_data(&a.data, cfg.model.image_size)?;
        WaypointTrainer::new(cfg, data, projection, extractor)?
    };
    let mut extra = vec![("data", a.data.display().to_string())];
    if let Some(p) = &a.proj {
        extra.push(("proj", p.display().to_string()));
    }
    echo_train_config(&a.out, trainer.config(), &extra)?;
    run_stage(&mut trainer, &a.out)
}

fn train_pixel(a: &TrainPixelArgs) -> waypoint_flow::Result<()> {
    let mut trainer = if let Some(r) = &a.resume {
        let ckpt = read_checkpoint(r)?;
        let image_size = waypoint_flow::data::config::KvReader::new(&ckpt.config).require("model.image_size")?;
        PixelTrainer::resume(&ckpt, load_data(&a.data, image_size)?)?
    } else {
        let waypoints: Option<WaypointGenerator<f32>> = match &a.waypoints {
            Some(p) if !a.no_waypoints => Some(load_waypoint_generator(&read_checkpoint(p)?)?),
            _ => None,
        };
        let mut base = BackboneConfig::desk_pixel(class_count(&a.data)?);
        if let Some(w) = &waypoints {
            base.image_size = w.cfg.image_size;
            base.patch_size = w.cfg.patch_size;
            base.waypoint_dim = w.cfg.waypoint_dim;
            base.num_classes = w.cfg.num_classes;
            base.noise_reference = w.cfg.noise_reference;
        }
        let config = a.config.as_ref().expect("clap requires --config");
        let cfg = read_train_config(config, TrainConfig::new(base))?;
        let data = load_data(&a.data, cfg.model.image_size)?;
        PixelTrainer::new(cfg, data, waypoints)?
    };
    let mut extra = vec![
        ("data", a.data.display().to_string()),
        ("baseline", trainer.waypoints.is_none().to_string()),
    ];
    if let Some(p) = &a.waypoints {
        extra.push(("waypoints", p.display().to_string()));
    }
    echo_train_config(&a.out, trainer.config(), &extra)?;
    run_stage(&mut trainer, &a.out)
}

fn sampler_config(s: &SamplerArgs) -> SamplerConfig {
    SamplerConfig {
        steps: s.steps,
        solver: s.solver,
        seed: s.seed,
        ..SamplerConfig::default()
    }
}

fn model_kv(kv: &mut KvMap, pixel: &PixelGenerator32, waypoints: Option<&WaypointGenerator<f32>>) {
    waypoint_flow::data::config::backbone_to_kv("model.", &pixel.cfg, kv);
    put(kv, "baseline", waypoints.is_none());
    if let Some(w) = waypoints {
        waypoint_flow::data::config::backbone_to_kv("wgen.model.", &w.cfg, kv);
    }
}

fn sample_cmd(a: &SampleArgs) -> waypoint_flow::Result<()> {
    let (pixel, waypoints) = load_pixel_models::<f32>(&read_checkpoint(&a.ckpt)?)?;
    a.class.embedding_row(pixel.cfg.num_classes)?;
    let models = Models::new(&pixel, waypoints.as_ref());
    let base = SamplerConfig {
        cfg_scale: a.cfg_scale,
        cfg_interval: a.cfg_interval,
        ..sampler_config(&a.sampler)
    };
    base.validate()?;
    fs::create_dir_all(&a.out)?;
    let mut kv = KvMap::new();
    put_path(&mut kv, "ckpt", &a.ckpt);
    put(&mut kv, "class", match a.class {
        Label::Class(c) => c.to_string(),
        Label::Null => "null".into(),
    });
    put(&mut kv, "num", a.num);
    put(&mut kv, "steps", base.steps);
    put(&mut kv, "solver", base.solver.name());
    put(&mut kv, "cfg_scale", base.cfg_scale);
    put(&mut kv, "cfg_interval", format!("{},{}", base.cfg_interval.0, base.cfg_interval.1));
    put(&mut kv, "seed", base.seed);
    model_kv(&mut kv, &pixel, waypoints.as_ref());
    write_config(&a.out.join("config.txt"), &kv)?;

    let mut trace = Vec::new();
    for i in 0..a.num {
        let cfg = SamplerConfig {
            seed: base.seed.wrapping_add(i as u64),
            ..base
        };
        let (x, record) = sample(&models, a.class, &cfg)?;
        export_image(&x, &a.out.join(format!("sample_{i:05}.png")))?;
        if a.trace.is_some() {
            for line in jsonl_lines(&record)? {
                trace.extend_from_slice(format!("{{\"sample\":{i},{}", &line[1..]).as_bytes());
            }
        }
    }
    if let Some(path) = &a.trace {
        ensure_parent(path)?;
        atomic_write(path, &trace)?;
    }
    log::info!("wrote {} samples to {}", a.num, a.out.display());
    Ok(())
}

fn jsonl_lines(record: &waypoint_flow::sampler::TrajectoryRecord<f32>) -> waypoint_flow::Result<Vec<String>> {
    let mut buf = Vec::new();
    record.write_jsonl(&mut buf)?;
    let text = String::from_utf8(buf).expect("JSON is UTF-8");
    Ok(text.lines().map(|l| format!("{l}\n")).collect())
}

fn diagnose_conflict(a: &DiagnoseConflictArgs) -> waypoint_flow::Result<()> {
    let (pa, wa) = load_pixel_models::<f32>(&read_checkpoint(&a.ckpt)?)?;
    let b = match &a.ckpt_b {
        Some(p) => Some(load_pixel_models::<f32>(&read_checkpoint(p)?)?),
        None => None,
    };
    let c = pa.cfg.num_classes;
    let cfg = ConflictConfig {
        stride: a.stride.unwrap_or(c / 2),
        batches: a.batches,
        batch_size: a.batch_size,
        sampler: sampler_config(&a.sampler),
    };
    let trace_a = trace_conflict(&Models::new(&pa, wa.as_ref()), &cfg)?;
    ensure_parent(&a.out)?;
    let mut buf = Vec::new();
    trace_a.write_csv(&mut buf)?;
    atomic_write(&a.out, &buf)?;

    let mut kv = KvMap::new();
    put_path(&mut kv, "ckpt", &a.ckpt);
    put(&mut kv, "stride", cfg.stride);
    put(&mut kv, "batches", cfg.batches);
    put(&mut kv, "batch_size", cfg.batch_size);
    put(&mut kv, "steps", cfg.sampler.steps);
    put(&mut kv, "solver", cfg.sampler.solver.name());
    put(&mut kv, "seed", cfg.sampler.seed);
    model_kv(&mut kv, &pa, wa.as_ref());

    let summary = match &b {
        Some((pb, wb)) => {
            put_path(&mut kv, "ckpt_b", a.ckpt_b.as_deref().expect("b is loaded"));
            let trace_b = trace_conflict(&Models::new(pb, wb.as_ref()), &cfg)?;
            let mut buf = Vec::new();
            trace_b.write_csv(&mut buf)?;
            atomic_write(&sidecar(&a.out, "b.csv"), &buf)?;
            serde_json::to_string_pretty(&compare_traces(&trace_a, &trace_b)).expect("plain data")
        }
        None => serde_json::to_string_pretty(&trace_a.summary()).expect("plain data"),
    };
    let name = if b.is_some() { "compare.json" } else { "summary.json" };
    atomic_write(&sidecar(&a.out, name), summary.as_bytes())?;
    write_config(&sidecar(&a.out, "cfg"), &kv)?;
    println!("{summary}");
    Ok(())
}

fn diagnose_variance(a: &DiagnoseVarianceArgs) -> waypoint_flow::Result<()> {
    let mix = if MixtureSpec::PRESETS.contains(&a.mixture.as_str()) {
        MixtureSpec::preset(&a.mixture)?
    } else {
        MixtureSpec::from_json(&fs::read_to_string(&a.mixture)?)?
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let report = variance_decomposition(&mix, a.t, a.num_z, a.num_x, &mut rng)?;
    let json = serde_json::json!({
        "config": {"mixture": a.mixture, "t": a.t, "num_z": a.num_z, "num_x": a.num_x, "seed": a.seed},
        "report": report,
    });
    let text = serde_json::to_string_pretty(&json).expect("plain data");
    ensure_parent(&a.out)?;
    atomic_write(&a.out, text.as_bytes())?;
    println!("{text}");
    Ok(())
}

fn make_toy_data(a: &MakeToyDataArgs) -> waypoint_flow::Result<()> {
    let spec = ToyDatasetSpec {
        num_classes: a.classes,
        image_size: a.size,
        samples_per_class: a.per_class,
        seed: a.seed,
    };
    let data = generate_toy_dataset::<f32>(&spec)?;
    export_dataset(&data, &a.out)?;
    let mut kv = KvMap::new();
    put(&mut kv, "classes", a.classes);
    put(&mut kv, "size", a.size);
    put(&mut kv, "per_class", a.per_class);
    put(&mut kv, "seed", a.seed);
    write_config(&a.out.join("config.txt"), &kv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_parsers() {
        assert_eq!(parse_label("null"), Ok(Label::Null));
        assert_eq!(parse_label("3"), Ok(Label::Class(3)));
        assert!(parse_label("-1").is_err());
        assert_eq!(parse_interval("0.1,1.0"), Ok((0.1, 1.0)));
        assert!(parse_interval("0.5,0.5").is_err());
        assert!(parse_interval("0.5").is_err());
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["wflow"]), EXIT_USAGE);
        assert_eq!(run(["wflow", "make-toy-data", "--classes", "2"]), EXIT_USAGE);
        assert_eq!(run(["wflow", "sample", "--ckpt", "x", "--class", "0", "--out", "d", "--solver", "rk4"]), EXIT_USAGE);
        assert_eq!(run(["wflow", "--help"]), EXIT_OK);
    }

    #[test]
    fn sidecar_appends_suffix() {
        assert_eq!(sidecar(Path::new("a/b.ckpt"), "cfg"), PathBuf::from("a/b.ckpt.cfg"));
    }
}
