//! The `llgm` command line: `fit`, `dict`, `enhance`, `eval`, `gradcheck`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

mod config;

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use config::{Preset, RunConfig};

use crate::dict::{build_dictionary, corpus_files, export_manifold_csv, load_dictionary, save_dictionary};
use crate::enhance::{chain_gradcheck, enhance_with_log, save_eta_raw, save_gain_png, save_omega_pngs};
use crate::error::{Error, Result};
use crate::field::{load_model, save_model};
use crate::image::{load_image, save_image};
use crate::metrics::MetricsReport;
use crate::raster::gradcheck::gradcheck;
use crate::recon::fit_with_log;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "llgm", version, about = "Low-light enhancement through a fitted 2D Gaussian field")]
pub struct Cli {
    /// key = value configuration file; flags override its entries.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base budgets: desk (default) or paper.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Worker threads (falls back to LLGM_THREADS, then all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit an image with a residual pyramid of Gaussians and save the frozen model.
    Fit(FitArgs),
    /// Learn a curve dictionary from a directory of images.
    Dict(DictArgs),
    /// Enhance an image with a fitted model and a dictionary.
    Enhance(EnhanceArgs),
    /// Print image-quality metrics as JSON.
    Eval(EvalArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    pub input: PathBuf,
    #[arg(long)]
    pub gaussians: Option<usize>,
    #[arg(long)]
    pub scales: Option<usize>,
    /// Iterations per pyramid level.
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-iteration CSV log.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DictArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    /// Comma-separated exposure targets.
    #[arg(long)]
    pub targets: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Directory for manifold.csv and curves.csv.
    #[arg(long)]
    pub export_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    pub input: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub dict: PathBuf,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub etarget: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Gain map, min-max normalized, as PNG.
    #[arg(long)]
    pub dump_gain: Option<PathBuf>,
    /// Raw gain map as f32 binary.
    #[arg(long)]
    pub dump_eta: Option<PathBuf>,
    /// Directory for one PNG per weight-map channel.
    #[arg(long)]
    pub dump_omega: Option<PathBuf>,
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    /// Reference (or original) image; enables PSNR, SSIM and LOE.
    #[arg(long = "ref")]
    pub reference: Option<PathBuf>,
    /// Also write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of consecutive seeds to check.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
}

/// A failure with its exit code.
struct Failure {
    code: i32,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::InvalidArgument(_) => EXIT_USAGE,
            _ => EXIT_FAILURE,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: String) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message,
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn build_config(cli: &Cli) -> std::result::Result<RunConfig, Failure> {
    let preset = cli.preset.as_deref().map(str::parse::<Preset>).transpose()?;
    let mut cfg = match &cli.config {
        Some(path) => {
            if !path.is_file() {
                return Err(usage(format!("config file {} does not exist", path.display())));
            }
            RunConfig::load(path, preset)?
        }
        None => RunConfig::new(preset.unwrap_or_default()),
    };
    let set = |v: Option<u64>, cfg: &mut RunConfig| {
        if let Some(s) = v {
            cfg.seed = s;
        }
    };
    match &cli.command {
        Command::Fit(a) => {
            let r = &mut cfg.recon;
            r.num_primitives = a.gaussians.unwrap_or(r.num_primitives);
            r.scales = a.scales.unwrap_or(r.scales);
            r.iterations = a.iters.unwrap_or(r.iterations);
            r.lr = a.lr.unwrap_or(r.lr);
            if a.scales.is_some() && r.level_split.len() != r.scales {
                r.level_split.clear();
            }
            set(a.seed, &mut cfg);
        }
        Command::Dict(a) => {
            let d = &mut cfg.dict;
            d.k = a.k.unwrap_or(d.k);
            d.order = a.p.unwrap_or(d.order);
            if let Some(t) = &a.targets {
                d.targets = config::list("--targets", t)?;
            }
            set(a.seed, &mut cfg);
        }
        Command::Enhance(a) => {
            let e = &mut cfg.enhance;
            e.iterations = a.iters.unwrap_or(e.iterations);
            e.e_target = a.etarget.unwrap_or(e.e_target);
            e.lr = a.lr.unwrap_or(e.lr);
            set(a.seed, &mut cfg);
        }
        Command::Eval(_) | Command::Gradcheck(_) => {}
    }
    if let Some(t) = cli.threads {
        cfg.threads = Some(t);
    }
    if cfg.threads.is_none() {
        if let Ok(v) = std::env::var("LLGM_THREADS") {
            cfg.threads = Some(v.trim().parse().map_err(|_| usage(format!("LLGM_THREADS='{v}' is not a thread count")))?);
        }
    }
    cfg.sync_seed();
    cfg.validate()?;
    Ok(cfg)
}

fn require_file(path: &Path) -> std::result::Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("input file {} does not exist", path.display())))
    }
}

fn execute(cli: Cli) -> std::result::Result<(), Failure> {
    let cfg = build_config(&cli)?;
    match &cli.command {
        Command::Fit(a) => require_file(&a.input)?,
        Command::Enhance(a) => {
            require_file(&a.input)?;
            require_file(&a.model)?;
            require_file(&a.dict)?;
        }
        Command::Eval(a) => {
            require_file(&a.pred)?;
            if let Some(r) = &a.reference {
                require_file(r)?;
            }
        }
        Command::Dict(a) => {
            if !a.corpus.is_dir() {
                return Err(usage(format!("corpus directory {} does not exist", a.corpus.display())));
            }
        }
        Command::Gradcheck(_) => {}
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cfg.threads {
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| usage(format!("cannot start thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Fit(a) => cmd_fit(a, &cfg),
        Command::Dict(a) => cmd_dict(a, &cfg),
        Command::Enhance(a) => cmd_enhance(a, &cfg),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn cmd_fit(a: &FitArgs, cfg: &RunConfig) -> std::result::Result<(), Failure> {
    let img = load_image(&a.input)?;
    let mut log = a.log.as_deref().map(create).transpose()?;
    let res = fit_with_log(&img, &cfg.recon, log.as_mut().map(|w| w as &mut dyn Write))?;
    if let (Some(w), Some(p)) = (log.as_mut(), a.log.as_ref()) {
        w.flush().map_err(|e| Error::io(p, e))?;
    }
    save_model(&res.set, &a.out)?;
    println!("reconstruction psnr: {:.3} dB", res.psnr);
    println!(
        "wrote {} ({} primitives over {} levels)",
        a.out.display(),
        res.set.total_count(),
        res.set.levels().len()
    );
    Ok(())
}

fn cmd_dict(a: &DictArgs, cfg: &RunConfig) -> std::result::Result<(), Failure> {
    let files = corpus_files(&a.corpus)?;
    if files.is_empty() {
        return Err(usage(format!("corpus directory {} holds no .png or .ppm files", a.corpus.display())));
    }
    let tag = a.corpus.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let build = build_dictionary(&files, &cfg.dict, &tag)?;
    save_dictionary(&build.dictionary, &a.out)?;
    if let Some(dir) = &a.export_csv {
        export_manifold_csv(&build.points, &build.assignments, &build.dictionary, dir)?;
    }
    println!("coefficient vectors: {} (degenerate fits dropped: {}, unreadable images skipped: {})", build.points.len(), build.degenerate_fits, build.skipped_images);
    println!("cluster inertia: {:.6e}", build.inertia());
    println!("atoms: {} (K = {} plus the zero atom)", build.dictionary.atom_count(), build.dictionary.k());
    println!("wrote {}", a.out.display());
    Ok(())
}

fn cmd_enhance(a: &EnhanceArgs, cfg: &RunConfig) -> std::result::Result<(), Failure> {
    let img = load_image(&a.input)?;
    let model = load_model(&a.model)?;
    let dict = load_dictionary(&a.dict)?;
    dict.check_compatible(model.enh_atoms())?;
    let mut log = a.log.as_deref().map(create).transpose()?;
    let res = enhance_with_log(&img, &model, &dict, &cfg.enhance, log.as_mut().map(|w| w as &mut dyn Write))?;
    if let (Some(w), Some(p)) = (log.as_mut(), a.log.as_ref()) {
        w.flush().map_err(|e| Error::io(p, e))?;
    }
    save_image(&res.output, &a.out)?;
    if let Some(p) = &a.dump_gain {
        save_gain_png(&res.gain.eta, p)?;
    }
    if let Some(p) = &a.dump_eta {
        save_eta_raw(&res.gain.eta, p)?;
    }
    if let Some(dir) = &a.dump_omega {
        save_omega_pngs(&res.omega, dir)?;
    }
    let d = &res.diagnostics;
    println!("final loss: {:.6}", d.final_terms.total);
    println!(
        "mean luminance: {:.4} -> {:.4} (delta {:+.4})",
        d.input_mean_luminance,
        d.output_mean_luminance,
        d.output_mean_luminance - d.input_mean_luminance
    );
    println!("wrote {}", a.out.display());
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> std::result::Result<(), Failure> {
    let pred = load_image(&a.pred)?;
    let reference = a.reference.as_deref().map(load_image).transpose()?;
    let report = MetricsReport::evaluate(&pred, reference.as_ref())?;
    let json = report.to_json();
    println!("{json}");
    if let Some(p) = &a.out {
        std::fs::write(p, format!("{json}\n")).map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}

fn cmd_gradcheck(a: &GradcheckArgs) -> std::result::Result<(), Failure> {
    let mut all_passed = true;
    for seed in a.seed..a.seed.saturating_add(a.seeds.max(1)) {
        let mut report = gradcheck(seed);
        report.merge(&chain_gradcheck(seed));
        let passed = report.passed();
        all_passed &= passed;
        println!("seed {seed}: {}", if passed { "pass" } else { "FAIL" });
        print!("{report}");
    }
    if all_passed {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_FAILURE,
            message: "gradient check failed".into(),
        })
    }
}
