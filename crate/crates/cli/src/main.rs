use std::fs;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vmstain_core::backends::BackendSpec;
use vmstain_core::io::load_image;
use vmstain_core::losses::{cycle_loss, total_loss, value_loss, LossComponents, LossWeights};
use vmstain_core::metrics::{histogram_correlation, line_profile, seam_discontinuity};
use vmstain_core::pipeline::{self, JobConfig};
use vmstain_core::tiling::build_weight_matrix;
use vmstain_core::{Error, GridSpec, Result};

#[derive(Parser)]
#[command(name = "vmstain", version, about = "Split, transform and seamlessly re-tile whole-slide images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run split -> backend -> blend from a JSON job file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Cut an image into overlapping patch files plus manifest.json.
    Split {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = pipeline::DEFAULT_PATCH)]
        n: usize,
        #[arg(long, default_value_t = pipeline::DEFAULT_STRIDE)]
        m: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Transform every patch of a split directory with a backend.
    Apply {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        patches_dir: PathBuf,
        /// Backend JSON, inline or as a path to a file.
        #[arg(long)]
        backend: String,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Blend patch files back into one image with confidence weights.
    Tile {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        patches_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump the weight matrix as raw little-endian f32 with a JSON header.
    Weights(WeightsArgs),
    #[command(subcommand)]
    Metrics(MetricsCmd),
    #[command(subcommand)]
    Loss(LossCmd),
}

#[derive(Args)]
struct WeightsArgs {
    /// Image side, or HEIGHTxWIDTH.
    #[arg(long)]
    size: String,
    #[arg(long, default_value_t = pipeline::DEFAULT_PATCH)]
    n: usize,
    #[arg(long, default_value_t = pipeline::DEFAULT_STRIDE)]
    m: usize,
    /// Raw output; the header goes to the same path with a .json extension.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum MetricsCmd {
    /// Histogram correlation between two images.
    HistCorr { a: PathBuf, b: PathBuf },
    /// Seam discontinuity at multiples of the patch size.
    Seam {
        img: PathBuf,
        #[arg(long)]
        n: usize,
    },
    /// Nearest-neighbour line profile written as CSV.
    Profile {
        img: PathBuf,
        #[arg(long, value_parser = parse_point)]
        from: (usize, usize),
        #[arg(long, value_parser = parse_point)]
        to: (usize, usize),
        #[arg(long)]
        csv: PathBuf,
    },
}

#[derive(Args)]
struct LossArgs {
    a: PathBuf,
    b: PathBuf,
    #[arg(long, default_value_t = LossWeights::default().lambda_cycle)]
    lambda_cycle: f64,
    #[arg(long, default_value_t = LossWeights::default().lambda_value)]
    lambda_value: f64,
}

#[derive(Subcommand)]
enum LossCmd {
    /// Value loss of B against A, reported as value_a.
    Value(LossArgs),
    /// Reconstruction loss of B against A, reported as cycle.
    Cycle(LossArgs),
}

fn parse_point(s: &str) -> std::result::Result<(usize, usize), String> {
    let (r, c) = s.split_once(',').ok_or_else(|| format!("expected ROW,COL, got `{s}`"))?;
    let r = r.trim().parse().map_err(|e| format!("bad row `{r}`: {e}"))?;
    let c = c.trim().parse().map_err(|e| format!("bad column `{c}`: {e}"))?;
    Ok((r, c))
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::config(format!("--size expects L or HxW, got `{s}`"));
    match s.split_once(['x', 'X']) {
        Some((h, w)) => Ok((h.parse().map_err(|_| bad())?, w.parse().map_err(|_| bad())?)),
        None => {
            let l = s.parse().map_err(|_| bad())?;
            Ok((l, l))
        }
    }
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn load_backend(arg: &str) -> Result<BackendSpec> {
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        fs::read_to_string(arg).map_err(|e| Error::io(arg, e))?
    };
    let spec: BackendSpec =
        serde_json::from_str(&text).map_err(|e| Error::config(format!("backend: {e}")))?;
    spec.validate()?;
    Ok(spec)
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config } => {
            let cfg = JobConfig::from_file(&config)?;
            print_json(&pipeline::run(&cfg)?);
        }
        Command::Split { input, n, m, out_dir } => {
            let manifest = pipeline::split_cmd(&input, n, m, &out_dir)?;
            eprintln!("wrote {} patches to {}", manifest.patch_count, out_dir.display());
        }
        Command::Apply { manifest, patches_dir, backend, out_dir, seed, workers } => {
            let backend = load_backend(&backend)?;
            pipeline::apply_cmd(&manifest, &patches_dir, &backend, seed, workers, &out_dir)?;
        }
        Command::Tile { manifest, patches_dir, out } => {
            pipeline::tile_cmd(&manifest, &patches_dir, &out)?;
        }
        Command::Weights(args) => weights(args)?,
        Command::Metrics(cmd) => metrics(cmd)?,
        Command::Loss(cmd) => loss(cmd)?,
    }
    Ok(())
}

fn weights(args: WeightsArgs) -> Result<()> {
    let (h, w) = parse_size(&args.size)?;
    let spec = GridSpec::new(h, w, args.n, args.m)?;
    let matrix = build_weight_matrix(&spec)?;
    let file = fs::File::create(&args.out).map_err(|e| Error::io(&args.out, e))?;
    matrix.write_raw_f32(BufWriter::new(file)).map_err(|e| Error::io(&args.out, e))?;
    let header_path = args.out.with_extension("json");
    let header = serde_json::to_string_pretty(&matrix.header()).expect("serializable");
    fs::write(&header_path, header + "\n").map_err(|e| Error::io(&header_path, e))?;
    Ok(())
}

fn metrics(cmd: MetricsCmd) -> Result<()> {
    match cmd {
        MetricsCmd::HistCorr { a, b } => {
            let corr = histogram_correlation(&load_image(&a)?, &load_image(&b)?)?;
            print_json(&serde_json::json!({ "hist_corr": corr }));
        }
        MetricsCmd::Seam { img, n } => {
            let seam = seam_discontinuity(&load_image(&img)?, n)?;
            print_json(&serde_json::json!({ "seam": seam, "n": n }));
        }
        MetricsCmd::Profile { img, from, to, csv } => {
            let profile = line_profile(&load_image(&img)?, from, to)?;
            fs::write(&csv, profile.to_csv()).map_err(|e| Error::io(&csv, e))?;
        }
    }
    Ok(())
}

fn load_pair(args: &LossArgs) -> Result<(vmstain_core::PlanarImage, vmstain_core::PlanarImage, LossWeights)> {
    let weights = LossWeights::new(args.lambda_cycle, args.lambda_value)?;
    Ok((load_image(&args.a)?, load_image(&args.b)?, weights))
}

fn loss(cmd: LossCmd) -> Result<()> {
    let report = match cmd {
        LossCmd::Value(args) => {
            let (a, b, w) = load_pair(&args)?;
            let c = LossComponents { value_a: value_loss(&a, &b)?, ..Default::default() };
            total_loss(c, w)?
        }
        LossCmd::Cycle(args) => {
            let (a, b, w) = load_pair(&args)?;
            let c = LossComponents { cycle: cycle_loss(&a, &b, &a, &a)?, ..Default::default() };
            total_loss(c, w)?
        }
    };
    print_json(&report);
    Ok(())
}

fn exit_code_for(e: &Error) -> u8 {
    if e.is_validation() {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(o) = e.origin() {
                eprintln!("failing patch origin: row {}, col {}", o.row, o.col);
            }
            ExitCode::from(exit_code_for(&e))
        }
    }
}
