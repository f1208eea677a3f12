//! The `signkit` command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 invalid input
//! data, 3 runtime failure (I/O, diverging training, failed verification).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use serde_json::json;
use signkit::experiment::{run_experiment, ExperimentConfig};
use signkit::gradcheck::{check_flat, gradient_check, sample_instance, DEFAULT_STEP};
use signkit::losses::{bone_length_loss, bone_pose_loss, eos_classification_loss, weighted_mse_loss};
use signkit::metrics::evaluate;
use signkit::model::{generate, generate_dataset, train, LengthPolicy, ToyModel, TrainConfig};
use signkit::posedata::{load_dataset, save_dataset, synthesize_dataset, Dataset, PoseSequence, Split, SynthConfig};
use signkit::report::emit_report;
use signkit::skeleton::{default_skeleton, Skeleton};
use signkit::termination::{EosPolarity, TerminationConfig, TerminationMode};
use signkit::weighting::{bone_length_lambda, joint_variances, parent_relative_weights, BoneLambdas, JointWeights};
use signkit::{Error, SeededRng};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

const FORMATS: &str = "\
File formats:
  dataset    JSON Lines, one sequence per line: {\"id\", \"tokens\": [..], \"frames\": [[[x,y,z], ..], ..]}
  skeleton   JSON {\"joint_names\", \"parents\" (-1 for the root), \"groups\": {group: [joint, ..]}}.
             When --skeleton is omitted, skeleton.json next to the dataset is used, else the built-in
             15-joint upper body.
  weights    JSON {\"w\": [..]} one per joint
  lambdas    JSON {\"lambda\": [..]} one per bone, bones in joint order skipping the root
  model      binary: \"SGKT\", version byte, little-endian u64 dimensions, vocabulary, f64 parameters
  configs    TOML, or JSON when the text starts with '{'";

#[derive(Parser, Debug)]
#[command(name = "signkit", version, about = "Skeletal pose-sequence losses, training and evaluation", after_help = FORMATS)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic sign-like motion dataset and its skeleton.
    #[command(after_help = FORMATS)]
    Synth(SynthArgs),
    /// Parent-relative joint weights from a training set.
    #[command(subcommand)]
    Weights(WeightsCommand),
    /// Per-bone length factors from predictions and references.
    #[command(subcommand)]
    Lambda(LambdaCommand),
    /// Train the toy autoregressive model.
    #[command(after_help = FORMATS)]
    Train(TrainArgs),
    /// Generate pose sequences with a trained model.
    #[command(after_help = FORMATS)]
    Generate(GenerateArgs),
    /// Compute every metric and write CSV tables and SVG charts.
    #[command(after_help = FORMATS)]
    Eval(EvalArgs),
    /// Check analytic loss gradients against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Train and evaluate every variant of an ablation config.
    #[command(after_help = FORMATS)]
    Experiment(ExperimentArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    seed: u64,
    /// Output directory; receives dataset.jsonl and skeleton.json.
    #[arg(long)]
    out: PathBuf,
    /// Number of sequences (overrides the config).
    #[arg(long)]
    num: Option<usize>,
    /// Generator config: vocabulary, frame_jitter, bone_lengths, max_tokens.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum WeightsCommand {
    /// Compute weights from joint variances pooled over all frames.
    #[command(after_help = FORMATS)]
    Compute {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        skeleton: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
enum LambdaCommand {
    /// Mean relative bone-length error of `pred` against `ref`, per bone.
    #[command(after_help = FORMATS)]
    Compute {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        skeleton: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Where to write the model.
    #[arg(long)]
    out: PathBuf,
    /// Training config; defaults apply to every missing key.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Per-epoch loss CSV (epoch,total,mse,bone,pose,eos).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Overrides `weights_path` in the config.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Overrides `lambdas_path` in the config.
    #[arg(long)]
    lambdas: Option<PathBuf>,
    #[arg(long)]
    skeleton: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LengthArg {
    /// Stop per the termination head or the frame cap.
    Free,
    /// Match each reference sequence's length (needs --data).
    Reference,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Eos,
    Counter,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PolarityArg {
    Continue,
    End,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Reference dataset supplying ids, tokens and (for --length reference) lengths.
    #[arg(long, conflicts_with = "tokens")]
    data: Option<PathBuf>,
    /// Tokens of a single sequence, separated by spaces or commas.
    #[arg(long)]
    tokens: Option<String>,
    #[arg(long, value_enum, default_value = "free")]
    length: LengthArg,
    #[arg(long, value_enum, default_value = "eos")]
    mode: ModeArg,
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    /// Hard frame cap; defaults to the model's time-encoding horizon.
    #[arg(long)]
    max_frames: Option<usize>,
    #[arg(long, value_enum, default_value = "continue")]
    eos_polarity: PolarityArg,
    #[arg(long)]
    skeleton: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Output directory for six CSV tables and six SVG charts.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    skeleton: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    instances: usize,
    #[arg(long, default_value_t = 3)]
    frames: usize,
    #[arg(long, default_value_t = DEFAULT_STEP)]
    step: f64,
    #[arg(long)]
    skeleton: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: u64,
    /// Receives table.csv and one directory per variant.
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Core(Error),
    Verification(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type Outcome = std::result::Result<(), Failure>;

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code. Errors are reported on standard error.
pub fn run_cli<I, T>(argv: I) -> i32
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
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Verification(msg)) => {
            eprintln!("error: {msg}");
            EXIT_RUNTIME
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        e if e.is_data_error() => EXIT_DATA,
        _ => EXIT_RUNTIME,
    }
}

fn dispatch(cmd: Command) -> Outcome {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Weights(WeightsCommand::Compute { data, out, skeleton }) => weights(&data, &out, skeleton),
        Command::Lambda(LambdaCommand::Compute {
            pred,
            reference,
            out,
            skeleton,
        }) => lambda(&pred, &reference, &out, skeleton),
        Command::Train(a) => train_cmd(a),
        Command::Generate(a) => generate_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Experiment(a) => experiment(a),
    }
}

fn print_config(value: &serde_json::Value) {
    println!("resolved config: {value}");
}

fn read_text(path: &Path) -> Result<String, Error> {
    std::fs::read_to_string(path).map_err(|e| Error::Io {
        context: format!("reading {}", path.display()),
        source: e,
    })
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        context: format!("creating {}", dir.display()),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        context: format!("writing {}", path.display()),
        source: e,
    })
}

/// Explicit path, else `skeleton.json` beside `data`, else the built-in one.
fn resolve_skeleton(explicit: Option<PathBuf>, data: &Path) -> Result<(Skeleton, String), Error> {
    let sibling = data.parent().unwrap_or(Path::new(".")).join("skeleton.json");
    match explicit {
        Some(p) => Ok((Skeleton::load(&p)?, p.display().to_string())),
        None if sibling.is_file() => Ok((Skeleton::load(&sibling)?, sibling.display().to_string())),
        None => Ok((default_skeleton(), "built-in".to_string())),
    }
}

fn synth(a: SynthArgs) -> Outcome {
    let mut cfg = match &a.config {
        Some(p) => SynthConfig::parse(&read_text(p)?)?,
        None => SynthConfig::default(),
    };
    if let Some(n) = a.num {
        cfg.num_sequences = n;
    }
    print_config(&json!({ "command": "synth", "seed": a.seed, "out": a.out, "synth": cfg }));
    let ds = synthesize_dataset(&cfg, a.seed)?;
    create_dir(&a.out)?;
    save_dataset(&ds, a.out.join("dataset.jsonl"))?;
    ds.skeleton.save(a.out.join("skeleton.json"))?;
    println!("wrote {} sequences ({} frames) to {}", ds.len(), ds.total_frames(), a.out.display());
    Ok(())
}

fn weights(data: &Path, out: &Path, skeleton: Option<PathBuf>) -> Outcome {
    let (skel, source) = resolve_skeleton(skeleton, data)?;
    print_config(&json!({ "command": "weights compute", "data": data, "out": out, "skeleton": source }));
    let ds = load_dataset(data, &skel, Split::Train)?;
    let w = parent_relative_weights(&joint_variances(&ds)?);
    w.save(out)?;
    for (j, v) in w.w.iter().enumerate() {
        println!("{:<16} {v:.6}", skel.joint_name(j));
    }
    Ok(())
}

fn lambda(pred: &Path, reference: &Path, out: &Path, skeleton: Option<PathBuf>) -> Outcome {
    let (skel, source) = resolve_skeleton(skeleton, reference)?;
    print_config(&json!({ "command": "lambda compute", "pred": pred, "ref": reference, "out": out, "skeleton": source }));
    let p = load_dataset(pred, &skel, Split::Dev)?;
    let r = load_dataset(reference, &skel, Split::Dev)?;
    let l = bone_length_lambda(&p, &r)?;
    l.save(out)?;
    for (k, v) in l.lambda.iter().enumerate() {
        println!("{:<16} {v:.6}", skel.joint_name(skel.bones()[k]));
    }
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Outcome {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::parse(&read_text(p)?)?,
        None => TrainConfig::with_seed(a.seed),
    };
    cfg.seed = a.seed;
    if a.weights.is_some() {
        cfg.weights_path = a.weights;
    }
    if a.lambdas.is_some() {
        cfg.lambdas_path = a.lambdas;
    }
    let (skel, source) = resolve_skeleton(a.skeleton, &a.data)?;
    print_config(&json!({ "command": "train", "data": a.data, "out": a.out, "skeleton": source, "train": cfg }));
    let ds = load_dataset(&a.data, &skel, Split::Train)?;
    let w = match &cfg.weights_path {
        Some(p) => JointWeights::load(p)?,
        None => JointWeights::uniform(skel.num_joints()),
    };
    let l = match &cfg.lambdas_path {
        Some(p) => BoneLambdas::load(p)?,
        None => BoneLambdas::uniform(skel.num_bones()),
    };
    let init = ToyModel::init(ds.vocabulary(), skel.num_joints(), cfg.termination.max_frames, &cfg)?;
    let (model, log) = train(&init, &ds, &w, &l, &cfg)?;
    model.save(&a.out)?;
    if let Some(p) = &a.log {
        write_text(p, &log.to_csv())?;
    }
    if let (Some(first), Some(last)) = (log.epochs.first(), log.epochs.last()) {
        println!(
            "trained {} epochs: total loss {:.6} -> {:.6}; model written to {}",
            log.epochs.len(),
            first.total,
            last.total,
            a.out.display()
        );
    }
    Ok(())
}

fn generate_cmd(a: GenerateArgs) -> Outcome {
    let model = ToyModel::load(&a.model)?;
    let termination = TerminationConfig {
        mode: match a.mode {
            ModeArg::Eos => TerminationMode::Eos,
            ModeArg::Counter => TerminationMode::Counter,
        },
        tau: a.tau,
        max_frames: a.max_frames.unwrap_or(model.max_frames()),
        eos_polarity: match a.eos_polarity {
            PolarityArg::Continue => EosPolarity::Continue,
            PolarityArg::End => EosPolarity::End,
        },
    };
    termination.validate()?;
    let near = a.data.as_deref().unwrap_or(&a.model).to_path_buf();
    let (skel, source) = resolve_skeleton(a.skeleton, &near)?;
    print_config(&json!({
        "command": "generate",
        "model": a.model,
        "out": a.out,
        "data": a.data,
        "tokens": a.tokens,
        "length": format!("{:?}", a.length).to_lowercase(),
        "termination": termination,
        "skeleton": source,
    }));
    if skel.num_joints() != model.dims().joints {
        return Err(Error::Shape {
            context: "skeleton joints vs model".into(),
            expected: model.dims().joints,
            found: skel.num_joints(),
        }
        .into());
    }
    let out = match (&a.data, &a.tokens, a.length) {
        (Some(d), _, length) => {
            let reference = load_dataset(d, &skel, Split::Test)?;
            let policy = match length {
                LengthArg::Free => LengthPolicy::Free(termination),
                LengthArg::Reference => LengthPolicy::Reference,
            };
            generate_dataset(&model, &reference, policy)?
        }
        (None, Some(_), LengthArg::Reference) => {
            return Err(Failure::Usage("--length reference needs --data".into()));
        }
        (None, Some(t), LengthArg::Free) => {
            let tokens: Vec<String> = t
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect();
            let frames = generate(&model, &tokens, &termination)?;
            let seq = PoseSequence {
                id: "gen00000".into(),
                tokens,
                frames,
            };
            Dataset::new(skel, vec![seq], Split::Test)?
        }
        (None, None, _) => return Err(Failure::Usage("give --data or --tokens".into())),
    };
    save_dataset(&out, &a.out)?;
    println!("wrote {} sequences ({} frames) to {}", out.len(), out.total_frames(), a.out.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Outcome {
    let (skel, source) = resolve_skeleton(a.skeleton, &a.reference)?;
    print_config(&json!({ "command": "eval", "pred": a.pred, "ref": a.reference, "out": a.out, "skeleton": source }));
    let p = load_dataset(&a.pred, &skel, Split::Test)?;
    let r = load_dataset(&a.reference, &skel, Split::Test)?;
    let report = evaluate(&p, &r)?;
    let files = emit_report(&report, &skel, &a.out)?;
    let show = |label: &str, v: Option<f64>| match v {
        Some(v) => println!("{label:<28} {v:.4}"),
        None => println!("{label:<28} n/a"),
    };
    show("bone_length_pct", report.bone_length.overall);
    show("variance_global_pct", report.variance_global.overall);
    show("variance_local_pct", report.variance_local.overall);
    show("velocity_global_pct", report.velocity_global.overall);
    show("velocity_local_pct", report.velocity_local.overall);
    show("frame_length_signed_pct", report.frame_length.mean_signed_rel_diff);
    show("frame_length_abs_pct", report.frame_length.mean_abs_rel_diff);
    println!("wrote {} files to {}", files.len(), a.out.display());
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Outcome {
    if a.frames == 0 || a.instances == 0 || !(a.step > 0.0) {
        return Err(Failure::Usage("--frames, --instances and --step must be positive".into()));
    }
    let skel = match &a.skeleton {
        Some(p) => Skeleton::load(p)?,
        None => default_skeleton(),
    };
    print_config(&json!({
        "command": "gradcheck", "seed": a.seed, "instances": a.instances, "frames": a.frames, "step": a.step,
        "skeleton": a.skeleton.as_ref().map_or("built-in".to_string(), |p| p.display().to_string()),
    }));
    let mut rng = SeededRng::seed_from_u64(a.seed);
    let n = skel.num_joints();
    let mut worst = [0.0f64; 4];
    for _ in 0..a.instances {
        let (pred, reference) = sample_instance(&mut rng, &skel, a.frames);
        let w = JointWeights {
            w: (0..n).map(|_| rng.random_range(0.0..2.0)).collect(),
        };
        let l = BoneLambdas {
            lambda: (0..skel.num_bones()).map(|_| rng.random_range(0.5..2.0)).collect(),
        };
        worst[0] = worst[0].max(gradient_check(|p| weighted_mse_loss(p, &reference, &w), &pred, a.step)?);
        worst[1] = worst[1].max(gradient_check(|p| bone_length_loss(p, &reference, &skel, &l), &pred, a.step)?);
        worst[2] = worst[2].max(gradient_check(|p| bone_pose_loss(p, &reference, &skel), &pred, a.step)?);
        let logits: Vec<f64> = (0..a.frames).map(|_| rng.random_range(-4.0..4.0)).collect();
        let targets: Vec<f64> = (0..a.frames).map(|t| if t + 1 < a.frames { 1.0 } else { 0.0 }).collect();
        worst[3] = worst[3].max(check_flat(
            |z| {
                let e = eos_classification_loss(z, &targets).expect("matching lengths");
                (e.value, e.grad_logits)
            },
            &logits,
            a.step,
        ));
    }
    let tolerance = [1e-7, 1e-5, 1e-5, 1e-5];
    let mut failed = Vec::new();
    for ((name, err), tol) in ["weighted_mse", "bone_length", "bone_pose", "eos"].iter().zip(worst).zip(tolerance) {
        let ok = err <= tol;
        println!("{name:<14} max rel err {err:.3e} (tolerance {tol:.0e}) {}", if ok { "ok" } else { "FAIL" });
        if !ok {
            failed.push(*name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Verification(format!("gradient check failed for {}", failed.join(", "))))
    }
}

fn experiment(a: ExperimentArgs) -> Outcome {
    let mut cfg = ExperimentConfig::parse(&read_text(&a.config)?)?;
    cfg.seed = a.seed;
    print_config(&json!({ "command": "experiment", "out": a.out, "experiment": cfg }));
    let result = run_experiment(&cfg)?;
    create_dir(&a.out)?;
    for run in &result.runs {
        let dir = a.out.join(&run.name);
        create_dir(&dir)?;
        run.model.save(dir.join("model.sgkt"))?;
        write_text(&dir.join("log.csv"), &run.log.to_csv())?;
        run.lambdas.save(dir.join("lambdas.json"))?;
        emit_report(&run.report, &default_skeleton(), dir.join("report"))?;
    }
    let table = result.to_csv();
    write_text(&a.out.join("table.csv"), &table)?;
    print!("{table}");
    Ok(())
}
