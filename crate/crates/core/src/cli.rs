//! Command-line front end. `run` parses arguments, prints the resolved
//! configuration and dispatches to a subcommand.

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::data::{load_sequences, split_train_val, synth_corpus, write_sequences, CameraOrbit, DataError, Gait, MotionSequence, SynthConfig};
use crate::geometry::{SkeletonTopology, TopologyError};
use crate::heatmap::{crop_window, render_heatmaps, resize_window, CropConfig, CropWindow, HeatmapError};
use crate::metrics::LossWeights;
use crate::nn::gradcheck::run_suite;
use crate::nn::{checkpoint, NnError, Variant};
use crate::occlusion::{BoxedManConfig, ClusterConfig, Labeler, OcclusionError};
use crate::train_eval::{evaluate, keypoints_2d, label_sequence, make_dataset, train, TrainConfig, TrainError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TopologyError> for CliError {
    fn from(e: TopologyError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<OcclusionError> for CliError {
    fn from(e: OcclusionError) -> Self {
        match e {
            OcclusionError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<HeatmapError> for CliError {
    fn from(e: HeatmapError) -> Self {
        match e {
            HeatmapError::InvalidArgument(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::Config(_) => CliError::Usage(e.to_string()),
            NnError::NonFiniteGradient(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::Usage(e.to_string()),
            TrainError::NonFiniteGradient { .. } => CliError::Numerical(e.to_string()),
            TrainError::Nn(inner) => inner.into(),
            TrainError::Occlusion(inner) => inner.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "occlift", version, about = "Occlusion-aware 2D-to-3D pose lifting")]
pub struct Cli {
    /// Seed for every random choice the subcommand makes.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Skeleton preset (h36m17, humaneva15) or a topology JSON file.
    #[arg(long, global = true, default_value = "h36m17")]
    pub topology: String,
    /// Output path (a file, or a directory for `render`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic walking sequences as a POSEQ1 file.
    Synth(SynthArgs),
    /// Attach per-frame occlusion labels to a sequence file.
    Label(LabelArgs),
    /// Render per-joint heatmaps (PNG max-projection and HMS1 stacks).
    Render(RenderArgs),
    /// Train the lifting network.
    Train(TrainArgs),
    /// Evaluate a checkpoint and print an MPJPE report.
    Eval(EvalArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    pub frames: usize,
    #[arg(long, default_value_t = 50.0)]
    pub fps: f64,
    /// Number of subjects; each gets its own sequence.
    #[arg(long, default_value_t = 1)]
    pub subjects: usize,
    #[arg(long, default_value = "Walking")]
    pub action: String,
    #[arg(long, default_value = "C1")]
    pub camera_id: String,
    #[arg(long, default_value_t = 1.4)]
    pub stride_m: f64,
    #[arg(long, default_value_t = 0.9)]
    pub cadence_hz: f64,
    #[arg(long, default_value_t = 0.6)]
    pub arm_swing_rad: f64,
    #[arg(long, default_value_t = 0.03)]
    pub hip_sway_m: f64,
    /// Camera distance from the center of the walking circle.
    #[arg(long, default_value_t = 7.0)]
    pub camera_radius_m: f64,
    #[arg(long, default_value_t = 1.2)]
    pub camera_height_m: f64,
    /// Angular speed of the walker around the circle, rad/s.
    #[arg(long, default_value_t = 0.5)]
    pub angular_speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LabelerKind {
    Clustered,
    Boxedman,
    /// Labels already stored in the input file.
    Precomputed,
}

#[derive(Debug, Args)]
pub struct LabelerArgs {
    #[arg(long, value_enum, default_value_t = LabelerKind::Clustered)]
    pub labeler: LabelerKind,
    /// Planar neighborhood radius for the clustered labeler, meters.
    #[arg(long, default_value_t = 0.06)]
    pub epsilon: f64,
    /// Merge overlapping clustered neighborhoods transitively.
    #[arg(long)]
    pub transitive: bool,
    /// Absolute boxed-man half-width in pixels [default: proportional to bone length]
    #[arg(long)]
    pub delta: Option<f64>,
}

impl LabelerArgs {
    fn build(&self) -> Result<Labeler, CliError> {
        Ok(match self.labeler {
            LabelerKind::Clustered => Labeler::Clustered(ClusterConfig {
                transitive: self.transitive,
                ..ClusterConfig::new(self.epsilon)?
            }),
            LabelerKind::Boxedman => Labeler::BoxedMan(match self.delta {
                Some(d) => BoxedManConfig::absolute(d)?,
                None => BoxedManConfig::default(),
            }),
            LabelerKind::Precomputed => Labeler::Precomputed,
        })
    }
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    /// POSEQ1 input file.
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub labeler: LabelerArgs,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Labeled POSEQ1 file; unlabeled files render every joint.
    #[arg(long)]
    pub input: PathBuf,
    /// Side of the square output heatmaps, pixels.
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    /// Gaussian width at output scale, pixels.
    #[arg(long, default_value_t = 2.0)]
    pub sigma: f64,
    /// Render every n-th frame.
    #[arg(long, default_value_t = 1)]
    pub frame_step: usize,
    /// Frames rendered per sequence, 0 for all.
    #[arg(long, default_value_t = 0)]
    pub max_frames: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    OneVector,
    ManyVectors,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::OneVector => Variant::OneVector,
            VariantArg::ManyVectors => Variant::ManyVectors,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training POSEQ1 file.
    #[arg(long)]
    pub train: PathBuf,
    /// Validation POSEQ1 file [default: split the training file by sequence]
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Fraction of sequences kept for training when splitting.
    #[arg(long, default_value_t = 0.5)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 0.95)]
    pub lr_decay: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda2: f64,
    #[arg(long, value_enum, default_value_t = VariantArg::ManyVectors)]
    pub variant: VariantArg,
    #[arg(long, default_value_t = 3)]
    pub kernel: usize,
    #[arg(long, default_value_t = 64)]
    pub channels: usize,
    #[arg(long, default_value_t = 2)]
    pub blocks: usize,
    #[arg(long, default_value_t = 0.25)]
    pub dropout: f64,
    /// Occlusion probability above which keypoints are zeroed.
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,
    /// Frame step between consecutive training windows.
    #[arg(long, default_value_t = 1)]
    pub window_stride: usize,
    /// TrainLog CSV path [default: <out>.log.csv]
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[command(flatten)]
    pub labeler: LabelerArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// POSEQ1 file to evaluate on.
    #[arg(long)]
    pub input: PathBuf,
    /// TCN1 checkpoint (with its `.cfg` sidecar).
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub window_stride: usize,
    /// Method name used in the report table.
    #[arg(long, default_value = "model")]
    pub name: String,
    #[command(flatten)]
    pub labeler: LabelerArgs,
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Synth(a) => synth(cli, a),
        Command::Label(a) => label(cli, a),
        Command::Render(a) => render(cli, a),
        Command::Train(a) => train_cmd(cli, a),
        Command::Eval(a) => eval_cmd(cli, a),
        Command::Gradcheck => gradcheck(cli),
    }
}

fn out_path(cli: &Cli, default: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn topology(cli: &Cli) -> Result<SkeletonTopology, CliError> {
    Ok(SkeletonTopology::resolve(&cli.topology)?)
}

fn load(path: &Path, topo: &SkeletonTopology) -> Result<Vec<MotionSequence>, CliError> {
    let (seqs, report) = load_sequences(path, Some(topo))?;
    println!(
        "loaded {}: {} sequences, {} frames, {} discarded",
        path.display(),
        report.sequences,
        report.frames_read,
        report.frames_discarded
    );
    Ok(seqs)
}

fn save_sequences(path: &Path, seqs: &[MotionSequence]) -> Result<(), CliError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_sequences(&mut w, seqs)?;
    w.flush()?;
    Ok(())
}

fn synth(cli: &Cli, a: &SynthArgs) -> Result<(), CliError> {
    let cfg = SynthConfig {
        seed: cli.seed,
        n_frames: a.frames,
        fps: a.fps,
        gait: Gait {
            stride_m: a.stride_m,
            cadence_hz: a.cadence_hz,
            arm_swing_rad: a.arm_swing_rad,
            hip_sway_m: a.hip_sway_m,
        },
        camera_orbit: CameraOrbit {
            radius_m: a.camera_radius_m,
            height_m: a.camera_height_m,
            angular_speed: a.angular_speed,
        },
        topology: cli.topology.clone(),
        action: a.action.clone(),
        camera_id: a.camera_id.clone(),
        ..SynthConfig::default()
    };
    let out = out_path(cli, "synth.poseq");
    println!("synth: {cfg:?} subjects={} out={}", a.subjects, out.display());
    if a.subjects == 0 {
        return Err(CliError::Usage("--subjects must be ≥ 1".into()));
    }
    let seqs = synth_corpus(&cfg, a.subjects)?;
    save_sequences(&out, &seqs)?;
    println!("wrote {} sequences × {} frames", seqs.len(), a.frames);
    Ok(())
}

fn label(cli: &Cli, a: &LabelArgs) -> Result<(), CliError> {
    let topo = topology(cli)?;
    let labeler = a.labeler.build()?;
    let out = out_path(cli, "labeled.poseq");
    println!(
        "label: input={} labeler={labeler:?} topology={} out={}",
        a.input.display(),
        topo.name,
        out.display()
    );
    let mut seqs = load(&a.input, &topo)?;
    let (mut frames, mut occluded) = (0usize, 0usize);
    for s in &mut seqs {
        let labels = label_sequence(s, &labeler, &topo)?;
        frames += labels.len();
        occluded += labels.iter().filter(|v| v.count_occluded() > 0).count();
        s.occ = Some(labels);
    }
    save_sequences(&out, &seqs)?;
    println!("labeled {frames} frames, {occluded} with at least one occluded joint");
    Ok(())
}

/// Smallest pixel rectangle `(col0, row0, cols, rows)` whose bilinear taps
/// cover `window`, clipped to the image.
fn window_support(w: &CropWindow, width: usize, height: usize) -> (usize, usize, usize, usize) {
    let span = |lo: f64, extent: usize| {
        let a = (lo.floor() - 1.0).max(0.0) as usize;
        let b = ((lo + w.side).ceil() + 1.0).min(extent as f64 - 1.0).max(a as f64) as usize;
        (a, b - a + 1)
    };
    let (c0, cols) = span(w.x0, width);
    let (r0, rows) = span(w.y0, height);
    (c0, r0, cols, rows)
}

fn render(cli: &Cli, a: &RenderArgs) -> Result<(), CliError> {
    let topo = topology(cli)?;
    let out = out_path(cli, "heatmaps");
    println!(
        "render: input={} size={} sigma={} frame_step={} max_frames={} out={}",
        a.input.display(),
        a.size,
        a.sigma,
        a.frame_step,
        a.max_frames,
        out.display()
    );
    if a.size == 0 || a.frame_step == 0 || !(a.sigma > 0.0) {
        return Err(CliError::Usage("--size, --frame-step and --sigma must be positive".into()));
    }
    let seqs = load(&a.input, &topo)?;
    fs::create_dir_all(&out)?;
    let crop_cfg = CropConfig::default();
    let (mut written, mut skipped) = (0usize, 0usize);
    for (si, s) in seqs.iter().enumerate() {
        let kp = keypoints_2d(s)?;
        let (width, height) = s.camera.image_size();
        let limit = if a.max_frames == 0 { usize::MAX } else { a.max_frames };
        for f in (0..s.len()).step_by(a.frame_step).take(limit) {
            let occ = match &s.occ {
                Some(o) => o[f].clone(),
                None => crate::occlusion::OcclusionVector::zeros(topo.joint_count),
            };
            let window = match crop_window(&kp[f], &occ, height, width, &crop_cfg) {
                Ok(w) => w,
                Err(HeatmapError::NoVisibleJoints) => {
                    skipped += 1;
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            // Render only the pixels the crop reads; shifting by whole pixels
            // leaves every sample unchanged.
            let (c0, r0, cols, rows) = window_support(&window, width, height);
            let mut local = kp[f].clone();
            for p in &mut local.joints {
                p[0] -= c0 as f64;
                p[1] -= r0 as f64;
            }
            let sigma_src = a.sigma * window.side / a.size as f64;
            let hm = render_heatmaps(&local, &occ, rows, cols, sigma_src)?;
            let shifted = CropWindow {
                x0: window.x0 - c0 as f64,
                y0: window.y0 - r0 as f64,
                side: window.side,
            };
            let mut crop = resize_window(&hm, shifted, a.size)?;
            crop.meta.source_size = (height, width);
            crop.meta.crop = Some(window);
            let stem = out.join(format!("seq{si:03}_f{:06}", s.first_frame + f));
            crop.write_png(&stem.with_extension("png"))?;
            let mut w = BufWriter::new(fs::File::create(stem.with_extension("hms1"))?);
            crop.write_hms1(&mut w)?;
            w.flush()?;
            written += 1;
        }
    }
    println!("rendered {written} frames, skipped {skipped} with every joint occluded");
    Ok(())
}

fn train_cmd(cli: &Cli, a: &TrainArgs) -> Result<(), CliError> {
    let topo = topology(cli)?;
    let out = out_path(cli, "model.tcn1");
    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut s = out.clone().into_os_string();
        s.push(".log.csv");
        PathBuf::from(s)
    });
    let mut cfg = TrainConfig::new(&topo, a.variant.into());
    cfg.epochs = a.epochs;
    cfg.batch_size = a.batch_size;
    cfg.lr = a.lr;
    cfg.momentum = a.momentum;
    cfg.lr_decay = a.lr_decay;
    cfg.loss_weights = LossWeights::new(a.lambda1, a.lambda2).map_err(|e| CliError::Usage(e.to_string()))?;
    cfg.labeler = a.labeler.build()?;
    cfg.tcn.kernel_w = a.kernel;
    cfg.tcn.channels_c = a.channels;
    cfg.tcn.blocks_b = a.blocks;
    cfg.tcn.dropout_p = a.dropout;
    cfg.tcn.gate_threshold_tau = a.tau;
    cfg.seed = cli.seed;
    cfg.checkpoint_path = Some(out.clone());
    println!("train: {cfg:?} window_stride={} log={}", a.window_stride, log_path.display());
    cfg.validate()?;
    if a.window_stride == 0 {
        return Err(CliError::Usage("--window-stride must be ≥ 1".into()));
    }
    let train_seqs = load(&a.train, &topo)?;
    let (train_seqs, val_seqs) = match &a.val {
        Some(p) => (train_seqs, load(p, &topo)?),
        None => split_train_val(train_seqs, a.train_fraction, cli.seed)?,
    };
    let tr = make_dataset(&train_seqs, &cfg.labeler, &topo, &cfg.tcn, a.window_stride)?;
    let va = make_dataset(&val_seqs, &cfg.labeler, &topo, &cfg.tcn, a.window_stride)?;
    println!("windows: train {} val {}", tr.len(), va.len());
    let outcome = train(&tr, &va, &cfg)?;
    fs::write(&log_path, outcome.log.to_csv())?;
    for r in &outcome.log.records {
        println!(
            "epoch {:3} loss {:.5} val_mpjpe {:.2} mm val_occ {:.4} lr {:.3e}",
            r.epoch, r.train_loss, r.val_mpjpe_mm, r.val_occ_loss, r.lr
        );
    }
    println!("best epoch {} saved to {}", outcome.best_epoch, out.display());
    Ok(())
}

fn eval_cmd(cli: &Cli, a: &EvalArgs) -> Result<(), CliError> {
    let topo = topology(cli)?;
    let (params, tcn, _) = checkpoint::load(&a.checkpoint)?;
    let labeler = a.labeler.build()?;
    println!(
        "eval: input={} checkpoint={} tcn={tcn:?} labeler={labeler:?} out={}",
        a.input.display(),
        a.checkpoint.display(),
        cli.out.as_ref().map_or("-".into(), |p| p.display().to_string())
    );
    if a.window_stride == 0 {
        return Err(CliError::Usage("--window-stride must be ≥ 1".into()));
    }
    let seqs = load(&a.input, &topo)?;
    let examples = make_dataset(&seqs, &labeler, &topo, &tcn, a.window_stride)?;
    let res = evaluate(&examples, &params, &tcn, topo.root_index)?;
    println!("{}", res.report.to_text());
    println!("{}", crate::metrics::method_table(&[(a.name.as_str(), &res.report)]));
    println!("occlusion loss {:.6}", res.occ_loss);
    if let Some(p) = &cli.out {
        fs::write(p, res.report.to_csv())?;
    }
    Ok(())
}

fn gradcheck(cli: &Cli) -> Result<(), CliError> {
    println!("gradcheck: seed={}", cli.seed);
    let report = run_suite(cli.seed)?;
    let text = report.to_text();
    println!("{text}");
    if let Some(p) = &cli.out {
        fs::write(p, &text)?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Numerical(format!(
            "gradient check failed: primitives {:.3e}, network {:.3e}",
            report.max_primitive_error(),
            report.max_network_error()
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["occlift"]), EXIT_USAGE);
        assert_eq!(run(["occlift", "synth", "--bogus"]), EXIT_USAGE);
        assert_eq!(run(["occlift", "label", "--input", "x", "--labeler", "nope"]), EXIT_USAGE);
        assert_eq!(run(["occlift", "--help"]), EXIT_OK);
    }

    #[test]
    fn missing_input_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("missing.poseq");
        let code = run(["occlift", "label", "--input", missing.to_str().unwrap()]);
        assert_eq!(code, EXIT_DATA);
    }

    #[test]
    fn bad_flag_values_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("s.poseq");
        let f = f.to_str().unwrap();
        assert_eq!(run(["occlift", "synth", "--frames", "20", "--out", f]), EXIT_OK);
        assert_eq!(run(["occlift", "label", "--input", f, "--epsilon", "-1"]), EXIT_USAGE);
        assert_eq!(run(["occlift", "synth", "--camera-radius-m", "1", "--out", f]), EXIT_USAGE);
    }

    #[test]
    fn help_lists_defaults() {
        let help = Cli::command()
            .find_subcommand_mut("train")
            .unwrap()
            .render_long_help()
            .to_string();
        for flag in ["--epochs", "--lr", "--lr-decay", "--channels", "--labeler", "--epsilon"] {
            assert!(help.contains(flag), "{flag} missing");
        }
        assert!(help.contains("[default: 0.001]"));
        assert!(help.contains("[default: clustered]"));
    }

    #[test]
    fn support_covers_window() {
        let w = CropWindow { x0: 10.3, y0: -0.5, side: 20.0 };
        let (c0, r0, cols, rows) = window_support(&w, 100, 50);
        assert!(c0 as f64 <= w.x0.floor() && (c0 + cols) as f64 >= w.x0 + w.side + 1.0);
        assert_eq!(r0, 0);
        assert!(rows >= 21 && rows <= 50);
    }
}
