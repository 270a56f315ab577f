//! `crcseg` command-line front end.
//!
//! Exit codes: 0 success, 1 validation or feasibility failure, 2 I/O or
//! format error. With `--json`, results and errors go to stdout as JSON.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crcseg::calibrate::{calibrate, CalibrationArtifact, CalibrationConfig, DEFAULT_EPSILON};
use crcseg::error::{Error, ErrorClass, Result};
use crcseg::heatmap::{heatmap, HeatmapOptions, Normalization};
use crcseg::io::{npy, split, Manifest, SplitSpec};
use crcseg::losses::LossSpec;
use crcseg::metrics::{aggregate_runs, evaluate};
use crcseg::raster::RgbImage;
use crcseg::sets::lac_set;
use crcseg::synth::{generate, validate_guarantee, write_dataset, GuaranteeConfig, SynthConfig, DEFAULT_SIGNAL};
use crcseg::types::Dims;

#[derive(Parser, Debug)]
#[command(name = "crcseg", version, about = "Conformal risk control for semantic segmentation")]
struct Cli {
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true, env = "CRCSEG_THREADS")]
    threads: Option<usize>,

    /// Print machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Find λ̂ on a calibration manifest.
    Calibrate(CalibrateArgs),
    /// Threshold one score tensor into a multi-labeled mask.
    Predict(PredictArgs),
    /// Test-set risk and activation ratio for a calibrated artifact.
    Evaluate(EvaluateArgs),
    /// Render a set-size heatmap from a multi-labeled mask.
    Heatmap(HeatmapArgs),
    /// Write a synthetic dataset (NPY files plus manifest).
    Synth(SynthArgs),
    /// Monte-Carlo check that mean test risk stays below α.
    Validate(ValidateArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum LossKind {
    Binary,
    BinaryThreshold,
    Miscoverage,
    WeightedMiscoverage,
}

#[derive(Args, Debug)]
struct LossArgs {
    #[arg(long, value_enum, default_value = "miscoverage")]
    loss: LossKind,
    /// Coverage threshold for `binary-threshold`.
    #[arg(long)]
    tau: Option<f64>,
    /// JSON array of per-class weights for `weighted-miscoverage`.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    alpha: f64,
    /// Bisection tolerance.
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    /// Leave pixels with an empty set empty instead of adding the top class.
    #[arg(long)]
    no_fallback: bool,
}

impl LossArgs {
    fn loss_spec(&self) -> Result<LossSpec> {
        let spec = match self.loss {
            LossKind::Binary => LossSpec::Binary,
            LossKind::Miscoverage => LossSpec::Miscoverage,
            LossKind::BinaryThreshold => LossSpec::BinaryThreshold {
                tau: self.tau.ok_or_else(|| {
                    Error::InvalidParameter("--loss binary-threshold needs --tau".into())
                })?,
            },
            LossKind::WeightedMiscoverage => {
                let path = self.weights.as_ref().ok_or_else(|| {
                    Error::InvalidParameter("--loss weighted-miscoverage needs --weights".into())
                })?;
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                LossSpec::WeightedMiscoverage {
                    weights: serde_json::from_str(&text)?,
                }
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    fn config(&self, seed: u64) -> Result<CalibrationConfig> {
        let mut config = CalibrationConfig::new(self.alpha, self.loss_spec()?)
            .with_epsilon(self.epsilon)
            .with_top1_fallback(!self.no_fallback);
        config.seed = seed;
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    loss: LossArgs,
    /// Calibrate on this fraction of the manifest; the rest is held out.
    #[arg(long)]
    cal_fraction: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory receiving `cal.jsonl` and `test.jsonl` when splitting.
    #[arg(long)]
    split_out: Option<PathBuf>,
    /// Skip the softmax range and sum checks.
    #[arg(long)]
    no_validate: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    artifact: PathBuf,
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    no_validate: bool,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Repeat `--artifact A --manifest M` to aggregate several runs.
    #[arg(long, required = true)]
    artifact: Vec<PathBuf>,
    #[arg(long, required = true)]
    manifest: Vec<PathBuf>,
    /// Per-image CSV (single run only).
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    no_validate: bool,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    /// Divide set sizes by K.
    K,
    /// Divide set sizes by the largest size in the image.
    Max,
}

#[derive(Args, Debug)]
struct HeatmapArgs {
    #[arg(long)]
    multimask: PathBuf,
    #[arg(long, value_enum, default_value = "k")]
    mode: Mode,
    /// PNG or PPM photograph to blend under the heatmap.
    #[arg(long)]
    overlay: Option<PathBuf>,
    /// Heatmap weight in the overlay.
    #[arg(long)]
    blend: Option<f64>,
    /// Ground-truth mask, needed by `--blackout-void`.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    blackout_void: bool,
    /// Output path; `.ppm` selects PPM, anything else PNG.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(long, default_value_t = 5)]
    classes: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 12)]
    blobs: usize,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, default_value_t = 0.3)]
    corruption: f64,
    #[arg(long, default_value_t = DEFAULT_SIGNAL)]
    signal: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl ModelArgs {
    fn config(&self, n_images: usize) -> Result<SynthConfig> {
        let config = SynthConfig {
            dims: Dims::new(self.classes, self.height, self.width)?,
            n_images,
            blob_count: self.blobs,
            temperature: self.temperature,
            corruption: self.corruption,
            signal: self.signal,
            seed: self.seed,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 100)]
    n_images: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    loss: LossArgs,
    #[arg(long, default_value_t = 200)]
    n_cal: usize,
    #[arg(long, default_value_t = 200)]
    n_test: usize,
    #[arg(long, default_value_t = 50)]
    trials: usize,
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    code: &'a str,
    class: &'a str,
    message: String,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let json = cli.json;

    if let Some(n) = cli.threads {
        if n == 0 {
            return report_error(&Error::InvalidParameter("--threads must be positive".into()), json);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }

    match run(cli) {
        Ok(code) => code,
        Err(e) => report_error(&e, json),
    }
}

fn report_error(e: &Error, json: bool) -> ExitCode {
    let (class, code) = match e.class() {
        ErrorClass::Validation => ("validation", 1),
        ErrorClass::Format => ("format", 2),
    };
    if json {
        let body = serde_json::json!({ "error": ErrorReport { code: e.code(), class, message: e.to_string() } });
        println!("{body}");
    } else {
        eprintln!("error[{}]: {e}", e.code());
    }
    ExitCode::from(code)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let json = cli.json;
    match cli.command {
        Command::Calibrate(a) => cmd_calibrate(a, json),
        Command::Predict(a) => cmd_predict(a, json),
        Command::Evaluate(a) => cmd_evaluate(a, json),
        Command::Heatmap(a) => cmd_heatmap(a, json),
        Command::Synth(a) => cmd_synth(a, json),
        Command::Validate(a) => cmd_validate(a, json),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn cmd_calibrate(a: CalibrateArgs, json: bool) -> Result<ExitCode> {
    let config = a.loss.config(a.seed)?;
    let manifest = Manifest::read(&a.manifest)?;
    let cal_manifest = match a.cal_fraction {
        Some(cal_fraction) => {
            let (cal, test) = split(&manifest, &SplitSpec { seed: a.seed, cal_fraction })?;
            if let Some(dir) = &a.split_out {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                cal.write(dir.join("cal.jsonl"))?;
                test.write(dir.join("test.jsonl"))?;
            }
            cal
        }
        None => {
            if a.split_out.is_some() {
                return Err(Error::InvalidParameter("--split-out needs --cal-fraction".into()));
            }
            manifest
        }
    };
    if cal_manifest.is_empty() {
        return Err(Error::EmptyCalibrationSet);
    }
    // fail on α before touching any tensor
    crcseg::calibrate::feasibility_check(&config, cal_manifest.len())?;
    let data = cal_manifest.load(!a.no_validate)?;
    let artifact = calibrate(&data, &config)?;
    artifact.save(&a.out)?;

    if json {
        print_json(&artifact)?;
    } else {
        println!("lambda_hat  {}", artifact.lambda_hat);
        println!("alpha       {}", artifact.alpha);
        println!("loss        {}", artifact.loss);
        println!("n           {}", artifact.n);
        println!("probes      {}", artifact.risk_curve.len());
        println!("artifact    {}", a.out.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_predict(a: PredictArgs, json: bool) -> Result<ExitCode> {
    let artifact = CalibrationArtifact::load(&a.artifact)?;
    let scores = npy::read_scores(&a.scores, !a.no_validate)?;
    let z = lac_set(&scores, artifact.lambda()?, artifact.top1_fallback);
    npy::write_multimask(&a.out, &z)?;
    let pixels = z.dims().pixels();
    let mean_size = z.count_ones() as f64 / pixels as f64;
    if json {
        print_json(&serde_json::json!({
            "lambda_hat": artifact.lambda_hat,
            "dims": z.dims(),
            "mean_set_size": mean_size,
            "out": a.out,
        }))?;
    } else {
        println!("lambda_hat     {}", artifact.lambda_hat);
        println!("dims           {}", z.dims());
        println!("mean set size  {mean_size:.4}");
        println!("multimask      {}", a.out.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_evaluate(a: EvaluateArgs, json: bool) -> Result<ExitCode> {
    if a.artifact.len() != a.manifest.len() {
        return Err(Error::InvalidParameter(format!(
            "got {} artifacts but {} manifests; pass them in pairs",
            a.artifact.len(),
            a.manifest.len()
        )));
    }
    if a.csv.is_some() && a.artifact.len() > 1 {
        return Err(Error::InvalidParameter("--csv needs a single run".into()));
    }
    let reports = a
        .artifact
        .iter()
        .zip(&a.manifest)
        .map(|(art, man)| {
            let artifact = CalibrationArtifact::load(art)?;
            let data = Manifest::read(man)?.load(!a.no_validate)?;
            evaluate(&data, &artifact)
        })
        .collect::<Result<Vec<_>>>()?;
    let report = aggregate_runs(&reports)?;
    if let Some(csv) = &a.csv {
        report.write_per_image_csv(csv)?;
    }

    if json {
        let mut summary = report.clone();
        summary.per_image = None;
        print_json(&summary)?;
    } else {
        println!("runs              {}", report.runs);
        println!("n_test            {}", report.n_test);
        println!("lambda_hat        {}", report.lambda_hat);
        println!("alpha             {}", report.alpha);
        println!("loss              {}", report.loss);
        println!("empirical_risk    {:.6} (std {:.6})", report.empirical_risk, report.risk_std);
        println!(
            "activation_ratio  {:.6} (std {:.6})",
            report.activation_ratio, report.activation_ratio_std
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_heatmap(a: HeatmapArgs, json: bool) -> Result<ExitCode> {
    let z = npy::read_multimask(&a.multimask)?;
    let opts = HeatmapOptions {
        normalization: match a.mode {
            Mode::K => Normalization::ByK,
            Mode::Max => Normalization::ByObservedMax,
        },
        overlay_blend: a.blend,
        blackout_void: a.blackout_void,
        ..Default::default()
    };
    if a.blend.is_some() && a.overlay.is_none() {
        return Err(Error::InvalidParameter("--blend needs --overlay".into()));
    }
    let valid = match &a.mask {
        Some(path) => {
            let mask = npy::read_mask(path)?.into_mask(z.dims().k)?;
            if (mask.dims().h, mask.dims().w) != (z.dims().h, z.dims().w) {
                return Err(Error::DimensionMismatch {
                    expected: format!("{}x{}", z.dims().h, z.dims().w),
                    found: format!("{}x{}", mask.dims().h, mask.dims().w),
                });
            }
            Some(mask.valid_map())
        }
        None => None,
    };
    let photo = a.overlay.as_deref().map(RgbImage::load).transpose()?;
    let img = heatmap(&z, &opts, valid.as_deref(), photo.as_ref())?;
    img.save(&a.out)?;
    if json {
        print_json(&serde_json::json!({
            "width": img.width(),
            "height": img.height(),
            "out": a.out,
        }))?;
    } else {
        println!("wrote {}x{} heatmap to {}", img.width(), img.height(), a.out.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_synth(a: SynthArgs, json: bool) -> Result<ExitCode> {
    let config = a.model.config(a.n_images)?;
    let data = generate(&config)?;
    let manifest = write_dataset(&a.out_dir, &data)?;
    if json {
        print_json(&serde_json::json!({ "config": config, "manifest": manifest }))?;
    } else {
        println!("wrote {} images, manifest {}", data.len(), manifest.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(a: ValidateArgs, json: bool) -> Result<ExitCode> {
    let config = GuaranteeConfig {
        synth: a.model.config(a.n_cal + a.n_test)?,
        n_cal: a.n_cal,
        n_test: a.n_test,
        trials: a.trials,
    };
    let cal = a.loss.config(a.model.seed)?;
    let summary = validate_guarantee(&config, &cal)?;
    if json {
        print_json(&summary)?;
    } else {
        println!("trials          {}", summary.trials);
        println!("loss            {}", summary.loss);
        println!("alpha           {}", summary.alpha);
        println!("mean test risk  {:.6}", summary.mean_test_risk);
        println!("std test risk   {:.6}", summary.std_test_risk);
        println!("standard error  {:.6}", summary.standard_error);
        println!("mean lambda_hat {:.6}", summary.mean_lambda_hat);
        println!("mean AR         {:.6}", summary.mean_activation_ratio);
        println!("result          {}", if summary.pass { "PASS" } else { "FAIL" });
    }
    Ok(if summary.pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}
