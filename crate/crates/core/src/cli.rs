//! The `lidreid` command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;

use crate::data::{frame_matrix, Dataset};
use crate::error::{Error, Result};
use crate::eval::{evaluate_model, write_evaluation};
use crate::geometry::{chamfer_distance, lpc};
use crate::nn::Checkpoint;
use crate::pretrain::{load_pretrained, run_pretraining, PretrainConfig};
use crate::reid::{load_reid, train, ReidTrainConfig};
use crate::seed;
use crate::synth::{generate_dataset, Split, SynthConfig};

pub const DATA_ENV: &str = "LIDREID_DATA";

#[derive(Debug, Parser)]
#[command(name = "lidreid", version, about = "LiDAR person re-identification toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic multi-view walking dataset.
    Synth(SynthArgs),
    /// Pre-train the frame encoder on completion and shape regression.
    Pretrain(PretrainArgs),
    /// Train the ReID network.
    Train(TrainArgs),
    /// Score cross-view retrieval with a trained checkpoint.
    Eval(EvalArgs),
    /// Complete single-view clouds with a pre-training checkpoint.
    Complete(CompleteArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with generator settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub ids: Option<usize>,
    #[arg(long)]
    pub views: Option<usize>,
    #[arg(long)]
    pub sequences: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// Dataset directory.
    #[arg(long, env = DATA_ENV)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Continue from a checkpoint of an interrupted run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, env = DATA_ENV)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Pre-training checkpoint whose encoder initializes the network.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, env = DATA_ENV)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct CompleteArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output directory; defaults to each input's own directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Input `.lpc` files.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run_from<I, A>(args: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => 2,
                _ => 1,
            }
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Pretrain(a) => pretrain(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Complete(a) => complete(a),
    }
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} {} does not exist", path.display())))
    }
}

fn open_dataset(path: &Path) -> Result<Dataset> {
    let manifest = if path.is_dir() { path.join(crate::synth::MANIFEST_FILE) } else { path.to_path_buf() };
    require_file(&manifest, "dataset manifest")?;
    Dataset::open(path)
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut config: SynthConfig = read_config(a.config.as_deref())?;
    if let Some(v) = a.ids {
        config.identities = v;
    }
    if let Some(v) = a.views {
        config.views = v;
    }
    if let Some(v) = a.sequences {
        config.sequences = v;
    }
    if let Some(v) = a.frames {
        config.frames = v;
    }
    config.validate()?;
    let m = generate_dataset(&config, &a.out, a.seed)?;
    println!(
        "identities={} sequences={} frames={} out={}",
        m.identities.len(),
        m.sequences.len(),
        m.frame_count(),
        a.out.display()
    );
    Ok(())
}

fn pretrain(a: PretrainArgs) -> Result<()> {
    let mut config: PretrainConfig = read_config(a.config.as_deref())?;
    if let Some(e) = a.epochs {
        config.epochs = e;
    }
    config.validate()?;
    if let Some(r) = &a.resume {
        require_file(r, "resume checkpoint")?;
    }
    let ds = open_dataset(&a.data)?;
    let run = run_pretraining(&ds, &config, &a.out, a.seed, a.resume.as_deref())?;
    if let Some(last) = run.history.last() {
        println!(
            "epoch={} loss={} coarse_cd={} detail_cd={} shape_mse={}",
            last.epoch, last.loss.total, last.loss.coarse_cd, last.loss.detail_cd, last.loss.shape_mse
        );
    }
    println!("checkpoint={}", run.checkpoint.display());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut config: ReidTrainConfig = read_config(a.config.as_deref())?;
    if let Some(e) = a.epochs {
        config.epochs = e;
    }
    config.validate()?;
    for (p, what) in [(&a.init, "init checkpoint"), (&a.resume, "resume checkpoint")] {
        if let Some(p) = p {
            require_file(p, what)?;
        }
    }
    let ds = open_dataset(&a.data)?;
    let run = train(&ds, &config, &a.out, a.seed, a.init.as_deref(), a.resume.as_deref())?;
    if let Some(last) = run.history.last() {
        println!(
            "epoch={} loss={} ce={} triplet={}",
            last.epoch, last.loss.total, last.loss.ce, last.loss.triplet
        );
    }
    println!("checkpoint={}", run.checkpoint.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    require_file(&a.checkpoint, "checkpoint")?;
    let ds = open_dataset(&a.data)?;
    let (model, config) = load_reid(&Checkpoint::load(&a.checkpoint)?)?;
    let split = match a.split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    };
    let result = evaluate_model(&model, &ds, split, config.encoder.points, a.seed)?;
    write_evaluation(&result, &a.out)?;
    let r = &result.report;
    println!("rank1={:.4} rank3={:.4} map={:.4}", r.rank(1), r.rank(3), r.map);
    Ok(())
}

fn complete(a: CompleteArgs) -> Result<()> {
    require_file(&a.checkpoint, "checkpoint")?;
    for input in &a.inputs {
        require_file(input, "input cloud")?;
    }
    let (model, config) = load_pretrained(&Checkpoint::load(&a.checkpoint)?)?;
    for (i, input) in a.inputs.iter().enumerate() {
        let cloud = lpc::load(input)?;
        let stem = cloud_stem(input);
        let src_dir = input.parent().unwrap_or(Path::new("."));
        let dir = a.out.as_deref().unwrap_or(src_dir);
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let x = frame_matrix::<f32, _>(&cloud, config.encoder.points, &mut seed::rng(a.seed, &[i as u64]))?;
        let out = model.decoder.decode(model.latent(x.view())?.view())?;
        let target = dir.join(format!("{stem}.lpc"));
        if !same_file(input, &target) {
            std::fs::copy(input, &target).map_err(|e| Error::io(&target, e))?;
        }
        lpc::save(dir.join(format!("{stem}.coarse.lpc")), &out.coarse)?;
        lpc::save(dir.join(format!("{stem}.detail.lpc")), &out.detail)?;
        let gt = src_dir.join(format!("{stem}.gt.lpc"));
        let mut line = format!("file={} coarse={} detail={}", input.display(), out.coarse.len(), out.detail.len());
        if gt.is_file() {
            let cd = chamfer_distance(&out.detail, &lpc::load(&gt)?)?;
            line.push_str(&format!(" cd_detail={cd:.6}"));
        }
        println!("{line}");
    }
    Ok(())
}

fn cloud_stem(path: &Path) -> String {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    name.strip_suffix(".lpc").unwrap_or(&name).to_string()
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}
