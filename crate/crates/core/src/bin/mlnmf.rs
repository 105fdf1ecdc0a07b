use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mlnmf::bench::{self, ExperimentConfig};
use mlnmf::io::{self, Manifest};
use mlnmf::metrics::evaluate_factors;
use mlnmf::synth::{generate_scene, SceneSpec};
use mlnmf::{Error, InitMethod, MlnmfConfig, SpectralCube};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "mlnmf", version, about = "Multilayer sparse NMF for hyperspectral unmixing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene with known ground truth.
    Synth(SynthArgs),
    /// Unmix a cube stored as a bands × pixels matrix file.
    Unmix(UnmixArgs),
    /// Score estimated factors against the truth.
    Eval(EvalArgs),
    /// Run a Monte-Carlo benchmark described by a key=value config file.
    Bench(BenchArgs),
    /// Write the bundled spectral library to a file.
    ExportLibrary {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct SynthArgs {
    /// Image size, `ROWSxCOLS` or a single side length.
    #[arg(long, default_value = "64x64")]
    size: String,
    #[arg(long, default_value_t = 8)]
    block: usize,
    #[arg(long, default_value_t = 9)]
    filter: usize,
    #[arg(long, default_value_t = 0.8)]
    purity: f64,
    #[arg(long, default_value_t = 6)]
    p: usize,
    /// Signal-to-noise ratio in dB; `inf` for no noise.
    #[arg(long, default_value_t = 20.0)]
    snr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Library file; the bundled library when omitted.
    #[arg(long)]
    library: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct UnmixArgs {
    /// Input cube (matrix file, bands × pixels).
    input: PathBuf,
    #[arg(long)]
    p: usize,
    #[arg(long, default_value_t = 10)]
    layers: usize,
    #[arg(long, default_value_t = 0.1)]
    alpha0: f64,
    #[arg(long, default_value_t = 25.0)]
    tau: f64,
    #[arg(long, default_value_t = 25.0)]
    delta: f64,
    #[arg(long, default_value_t = 400)]
    tmax: usize,
    #[arg(long, default_value_t = 1e-4)]
    eps: f64,
    #[arg(long = "alpha-s-ratio", default_value_t = 2.0)]
    alpha_s_ratio: f64,
    #[arg(long, default_value = "vca")]
    init: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    a_true: PathBuf,
    #[arg(long)]
    s_true: PathBuf,
    #[arg(long)]
    a_est: PathBuf,
    #[arg(long)]
    s_est: PathBuf,
    /// Report file; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    config: PathBuf,
    /// Extra `key=value` settings applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn synth(args: SynthArgs) -> Result<(), Failure> {
    let (rows, cols) = bench::parse_size(&args.size)?;
    let spec = SceneSpec {
        rows,
        cols,
        block_size: args.block,
        filter_size: args.filter,
        purity_threshold: args.purity,
        p: args.p,
        seed: mlnmf::seed::split(args.seed, &[0]),
    };
    let lib = bench::load_library(args.library.as_deref())?;
    let truth = generate_scene(&lib, &spec)?.with_noise(args.snr, mlnmf::seed::split(args.seed, &[1]))?;

    let out = &args.out;
    std::fs::create_dir_all(out).map_err(Error::from)?;
    io::write_matrix(&out.join("clean.txt"), truth.clean_cube.data().view())?;
    io::write_matrix(&out.join("noisy.txt"), truth.noisy_cube.data().view())?;
    io::write_matrix(&out.join("a_true.txt"), truth.a_true.data().view())?;
    io::write_matrix(&out.join("s_true.txt"), truth.s_true.data().view())?;

    let mut m = Manifest::new();
    m.push("size", format!("{rows}x{cols}"))
        .push("block", args.block)
        .push("filter", args.filter)
        .push("purity", args.purity)
        .push("p", args.p)
        .push("snr_db", args.snr)
        .push("seed", args.seed)
        .push(
            "library",
            args.library.as_ref().map_or("builtin".to_string(), |p| p.display().to_string()),
        )
        .push(
            "library_indices",
            truth.library_indices.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(","),
        )
        .push_f64("sigma", truth.sigma);
    m.write(&out.join("manifest.txt"))?;
    Ok(())
}

fn unmix(args: UnmixArgs) -> Result<(), Failure> {
    let init: InitMethod = args.init.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?;
    let cube = SpectralCube::new(io::read_matrix(&args.input)?)?;
    let mut cfg = MlnmfConfig::new(args.p);
    cfg.layers = args.layers;
    cfg.init = init;
    cfg.seed = args.seed;
    cfg.layer.alpha0 = args.alpha0;
    cfg.layer.tau = args.tau;
    cfg.layer.delta = args.delta;
    cfg.layer.t_max = args.tmax;
    cfg.layer.epsilon = args.eps;
    cfg.layer.alpha_s_ratio = args.alpha_s_ratio;

    let result = mlnmf::run_mlnmf(&cube, &cfg)?;

    let out = &args.out;
    std::fs::create_dir_all(out).map_err(Error::from)?;
    io::write_matrix(&out.join("a.txt"), result.a.view())?;
    io::write_matrix(&out.join("s.txt"), result.s.view())?;
    for (l, layer) in result.per_layer.iter().enumerate() {
        let n = l + 1;
        io::write_matrix(&out.join(format!("layer_{n}_a.txt")), layer.a.view())?;
        let trace = ndarray::Array2::from_shape_vec((1, layer.cost_trace.len()), layer.cost_trace.clone())
            .expect("trace length matches shape");
        io::write_matrix(&out.join(format!("layer_{n}_cost.txt")), trace.view())?;
    }

    let mut m = Manifest::new();
    m.push("input", args.input.display())
        .push("p", cfg.p)
        .push("layers", cfg.layers)
        .push("alpha0", cfg.layer.alpha0)
        .push("tau", cfg.layer.tau)
        .push("delta", cfg.layer.delta)
        .push("tmax", cfg.layer.t_max)
        .push("eps", cfg.layer.epsilon)
        .push("alpha_s_ratio", cfg.layer.alpha_s_ratio)
        .push("init", cfg.init.as_str())
        .push("seed", cfg.seed);
    if let Some(idx) = &result.vca_indices {
        m.push(
            "vca_indices",
            idx.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(","),
        );
    }
    for (l, layer) in result.per_layer.iter().enumerate() {
        m.push(&format!("layer_{}_iterations", l + 1), layer.iterations_run)
            .push(&format!("layer_{}_stop", l + 1), layer.stop_reason.as_str());
    }
    m.write(&out.join("manifest.txt"))?;
    Ok(())
}

fn eval(args: EvalArgs) -> Result<(), Failure> {
    let a_true = io::read_matrix(&args.a_true)?;
    let s_true = io::read_matrix(&args.s_true)?;
    let a_est = io::read_matrix(&args.a_est)?;
    let s_est = io::read_matrix(&args.s_est)?;
    let report = evaluate_factors(a_true.view(), s_true.view(), a_est.view(), s_est.view())?;
    let text = io::report_to_string(&report);
    match &args.out {
        Some(p) => io::write_atomic(p, &text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn bench_cmd(args: BenchArgs) -> Result<(), Failure> {
    let mut manifest = Manifest::read(&args.config)?;
    for o in &args.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, found '{o}'")))?;
        manifest.push(k.trim(), v.trim());
    }
    let mut cfg = ExperimentConfig::from_manifest(&manifest)?;
    if let Some(out) = args.out {
        cfg.output_dir = out;
    }
    let lib = bench::load_library(cfg.library.as_deref())?;
    let outcome = bench::run_bench(&cfg, &lib)?;
    bench::write_outcome(&cfg.output_dir, &cfg, &outcome)?;
    for c in &outcome.cells {
        if let Err(msg) = &c.outcome {
            eprintln!(
                "cell snr={} run={} method={} failed: {msg}",
                c.snr_db,
                c.run,
                c.method.as_str()
            );
        }
    }
    let frac = outcome.failed_fraction();
    if frac > 0.1 {
        return Err(Failure::Lib(Error::Config(format!(
            "{:.1}% of cells failed",
            frac * 100.0
        ))));
    }
    Ok(())
}

fn export_library(out: &Path) -> Result<(), Failure> {
    io::write_library(out, &mlnmf::synth::SpectralLibrary::builtin())?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Unmix(a) => unmix(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench_cmd(a),
        Command::ExportLibrary { out } => export_library(&out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            match e {
                Error::Divergence { .. } => ExitCode::from(EXIT_DIVERGED),
                _ => ExitCode::from(EXIT_DATA),
            }
        }
    }
}
