//! `scpsim` command-line front end.
//!
//! Exit codes: 0 success, 1 usage, 2 I/O, 3 validation or constraint
//! failure, 4 round-trip regression.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::colorspace::{
    self, convert_image, Conversion, ConversionMatrix, PixelRgb, RoundTripStats,
    ROUNDTRIP_MAX_ERROR,
};
use crate::cycle_model::{
    BufferLocation, CalibrationProfile, CycleReport, Mode, DEFAULT_PROFILE_NAME,
};
use crate::histeq::histeq_image;
use crate::image_io::{self, ImageBuffer};

pub const PROFILE_DIR_ENV: &str = "SCPSIM_PROFILE_DIR";
const BENCH_SEED: u64 = 0x5c95_1a7e;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Validation(String),
    Regression(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Io(_) => 2,
            CliError::Validation(_) => 3,
            CliError::Regression(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m)
            | CliError::Io(m)
            | CliError::Validation(m)
            | CliError::Regression(m) => m,
        }
    }
}

fn validation(e: impl std::fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

#[derive(Debug, Parser)]
#[command(
    name = "scpsim",
    version,
    about = "Extension-instruction fabric simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert an RGB image (or an offset-128 YIQ image back to RGB).
    Convert(ConvertArgs),
    /// Equalize the histogram of a gray image; colour input is reduced to luma first.
    Histeq(HisteqArgs),
    /// Run every mode of a kernel on a synthetic workload and tabulate the cost.
    Bench(BenchArgs),
    /// Sweep RGB triples through forward and reverse YIQ and report the error.
    Roundtrip(RoundtripArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kernel {
    Yiq,
    Histeq,
}

#[derive(Debug, Args)]
struct CostArgs {
    /// Built-in profile name or path to a profile file.
    #[arg(long, default_value = DEFAULT_PROFILE_NAME)]
    profile: String,
    #[arg(long, default_value = "internal", value_parser = parse_buffers)]
    buffers: BufferLocation,
    /// Write the cycle report here.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Debug, Args)]
struct IoArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long = "out")]
    output: PathBuf,
    /// Headerless interleaved samples; needs --width, --height, --channels.
    #[arg(long)]
    raw: bool,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
}

#[derive(Debug, Args)]
struct ConvertArgs {
    #[command(flatten)]
    io: IoArgs,
    /// yiq | rgb | cmy | matrix:<file>
    #[arg(long, default_value = "yiq")]
    to: String,
    #[arg(long, default_value = "scalar", value_parser = parse_mode)]
    mode: Mode,
    #[command(flatten)]
    cost: CostArgs,
}

#[derive(Debug, Args)]
struct HisteqArgs {
    #[command(flatten)]
    io: IoArgs,
    #[arg(long, default_value = "isef", value_parser = parse_mode)]
    mode: Mode,
    #[command(flatten)]
    cost: CostArgs,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, value_enum)]
    kernel: Kernel,
    /// Workload size (default 64000 for yiq, 128x128 for histeq).
    #[arg(long)]
    pixels: Option<usize>,
    #[command(flatten)]
    cost: CostArgs,
}

#[derive(Debug, Args)]
struct RoundtripArgs {
    /// Check this many pseudo-random triples instead of the whole cube.
    #[arg(long)]
    sample: Option<u64>,
    /// Only the 256 gray triples.
    #[arg(long, conflicts_with = "sample")]
    gray: bool,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse()
}

fn parse_buffers(s: &str) -> Result<BufferLocation, String> {
    s.parse()
}

/// Resolves `--profile`: an existing path, then `$SCPSIM_PROFILE_DIR/<name>[.profile]`,
/// then the built-in profiles.
pub fn resolve_profile(name_or_path: &str) -> Result<CalibrationProfile, CliError> {
    let load = |p: &Path| CalibrationProfile::load(p).map_err(validation);
    let path = Path::new(name_or_path);
    if path.is_file() {
        return load(path);
    }
    if let Some(dir) = std::env::var_os(PROFILE_DIR_ENV) {
        let dir = PathBuf::from(dir);
        for candidate in [dir.join(name_or_path), dir.join(format!("{name_or_path}.profile"))] {
            if candidate.is_file() {
                return load(&candidate);
            }
        }
    }
    CalibrationProfile::builtin(name_or_path)
        .ok_or_else(|| CliError::Usage(format!("unknown profile {name_or_path:?}")))
}

fn read_input(io: &IoArgs) -> Result<ImageBuffer, CliError> {
    let bytes = std::fs::read(&io.input)
        .map_err(|e| CliError::Io(format!("{}: {e}", io.input.display())))?;
    if io.raw {
        let (Some(w), Some(h), Some(c)) = (io.width, io.height, io.channels) else {
            return Err(CliError::Usage(
                "--raw needs --width, --height and --channels".into(),
            ));
        };
        image_io::read_raw(&bytes, w, h, c).map_err(validation)
    } else {
        image_io::read_pnm(&bytes).map_err(validation)
    }
}

fn write_output(io: &IoArgs, img: &ImageBuffer) -> Result<(), CliError> {
    let bytes = if io.raw {
        image_io::write_raw(img)
    } else {
        image_io::write_pnm(img)
    };
    std::fs::write(&io.output, bytes)
        .map_err(|e| CliError::Io(format!("{}: {e}", io.output.display())))
}

pub fn render_json(profile: &CalibrationProfile, reports: &[CycleReport]) -> String {
    let doc = json!({
        "profile": profile.name,
        "reports": reports.iter().map(CycleReport::to_json).collect::<Vec<_>>(),
    });
    let mut s = serde_json::to_string_pretty(&doc).expect("report serializes");
    s.push('\n');
    s
}

pub fn render_csv(reports: &[CycleReport]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in reports {
        w.serialize(r.record()).expect("csv row serializes");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8")
}

pub fn render_table(reports: &[CycleReport]) -> String {
    let mut s = format!(
        "{:<8} {:<7} {:>8} {:>12} {:>10} {:>8} {:>6} {:>6} {:>6} {:>6}\n",
        "kernel", "mode", "pixels", "cycles", "cyc/px", "speedup", "mults", "alu", "iram", "stages"
    );
    for r in reports {
        s.push_str(&format!(
            "{:<8} {:<7} {:>8} {:>12} {:>10.4} {:>8.2} {:>6} {:>6} {:>6} {:>6}\n",
            r.kernel,
            r.mode.as_str(),
            r.pixels,
            r.cycles_total,
            r.record().cycles_per_pixel,
            r.record().speedup,
            r.resources.multipliers_used,
            r.resources.alu_ops_used,
            r.resources.iram_bytes_used,
            r.stages,
        ));
    }
    s
}

fn emit_reports(
    cost: &CostArgs,
    profile: &CalibrationProfile,
    reports: &[CycleReport],
    out: &mut dyn Write,
    table_on_stdout: bool,
) -> Result<(), CliError> {
    let render = |f: Format| match f {
        Format::Json => render_json(profile, reports),
        Format::Csv => render_csv(reports),
    };
    match (&cost.report, cost.format) {
        (Some(path), f) => {
            let text = render(f.unwrap_or(Format::Json));
            std::fs::write(path, text)
                .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            if table_on_stdout {
                write_stdout(out, &render_table(reports))?;
            }
        }
        (None, Some(f)) => write_stdout(out, &render(f))?,
        (None, None) if table_on_stdout => write_stdout(out, &render_table(reports))?,
        (None, None) => {}
    }
    Ok(())
}

fn write_stdout(out: &mut dyn Write, s: &str) -> Result<(), CliError> {
    out.write_all(s.as_bytes())
        .map_err(|e| CliError::Io(e.to_string()))
}

fn parse_conversion(to: &str) -> Result<Conversion, CliError> {
    match to {
        "yiq" => Ok(Conversion::Matrix(ConversionMatrix::rgb2yiq())),
        "rgb" => Ok(Conversion::Matrix(ConversionMatrix::yiq2rgb())),
        "cmy" => Ok(Conversion::Cmy),
        other => match other.strip_prefix("matrix:") {
            Some(path) => ConversionMatrix::load(Path::new(path))
                .map(Conversion::Matrix)
                .map_err(validation),
            None => Err(CliError::Usage(format!("unknown --to target {other:?}"))),
        },
    }
}

fn cmd_convert(args: &ConvertArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let conv = parse_conversion(&args.to)?;
    let profile = resolve_profile(&args.cost.profile)?;
    let img = read_input(&args.io)?;
    let (converted, report) =
        convert_image(&img, &conv, args.mode, &profile, args.cost.buffers).map_err(validation)?;
    write_output(&args.io, &converted)?;
    emit_reports(&args.cost, &profile, &[report], out, false)
}

fn cmd_histeq(args: &HisteqArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let profile = resolve_profile(&args.cost.profile)?;
    let mut img = read_input(&args.io)?;
    if img.channels() == 3 {
        img = image_io::to_gray(&img).map_err(validation)?;
    }
    let (equalized, report) =
        histeq_image(&img, args.mode, &profile, args.cost.buffers).map_err(validation)?;
    write_output(&args.io, &equalized)?;
    emit_reports(&args.cost, &profile, &[report], out, false)
}

/// Deterministic bench input: `pixels` samples in a single row.
pub fn synthetic_image(pixels: usize, channels: usize, seed: u64) -> ImageBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..pixels * channels).map(|_| rng.gen()).collect();
    ImageBuffer::new(pixels, 1, channels, samples).expect("positive size")
}

pub fn bench_reports(
    kernel: &str,
    pixels: Option<usize>,
    profile: &CalibrationProfile,
    buffers: BufferLocation,
) -> Result<Vec<CycleReport>, CliError> {
    let mut reports = Vec::new();
    let mut outputs = Vec::new();
    match kernel {
        "yiq" => {
            let img = synthetic_image(pixels.unwrap_or(64000).max(1), 3, BENCH_SEED);
            let conv = Conversion::Matrix(ConversionMatrix::rgb2yiq());
            for mode in [Mode::Scalar, Mode::Ei1, Mode::Ei5, Mode::Ei8] {
                let (o, r) =
                    convert_image(&img, &conv, mode, profile, buffers).map_err(validation)?;
                outputs.push(o);
                reports.push(r);
            }
        }
        "histeq" => {
            let img = match pixels {
                Some(n) => synthetic_image(n.max(1), 1, BENCH_SEED),
                None => {
                    let s = synthetic_image(128 * 128, 1, BENCH_SEED).into_samples();
                    ImageBuffer::new(128, 128, 1, s).expect("128x128")
                }
            };
            for mode in [Mode::Scalar, Mode::Isef] {
                let (o, r) = histeq_image(&img, mode, profile, buffers).map_err(validation)?;
                outputs.push(o);
                reports.push(r);
            }
        }
        other => return Err(CliError::Usage(format!("unknown kernel {other:?}"))),
    }
    if outputs.windows(2).any(|w| w[0] != w[1]) {
        return Err(CliError::Validation(
            "vector mode output differs from scalar".into(),
        ));
    }
    Ok(reports)
}

fn cmd_bench(args: &BenchArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let profile = resolve_profile(&args.cost.profile)?;
    let kernel = match args.kernel {
        Kernel::Yiq => "yiq",
        Kernel::Histeq => "histeq",
    };
    let reports = bench_reports(kernel, args.pixels, &profile, args.cost.buffers)?;
    emit_reports(&args.cost, &profile, &reports, out, true)
}

fn cmd_roundtrip(args: &RoundtripArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (scope, stats): (String, RoundTripStats) = if args.gray {
        ("gray".into(), colorspace::sweep_gray())
    } else if let Some(n) = args.sample {
        let mut rng = ChaCha8Rng::seed_from_u64(BENCH_SEED);
        let pixels = (0..n).map(|_| PixelRgb::new(rng.gen(), rng.gen(), rng.gen()));
        (format!("sample {n}"), colorspace::sweep_pixels(pixels))
    } else {
        ("exhaustive".into(), colorspace::sweep_exhaustive())
    };
    let mean = stats.mean();
    let worst = stats.worst();
    let text = match args.format {
        Some(Format::Json) => {
            let mut s = serde_json::to_string_pretty(&json!({
                "scope": scope,
                "triples": stats.count,
                "max_error": stats.max,
                "mean_error": mean,
                "argmax": stats.argmax.map(PixelRgb::to_array),
                "worst": worst.to_array(),
                "frozen_bound": ROUNDTRIP_MAX_ERROR,
            }))
            .expect("json");
            s.push('\n');
            s
        }
        Some(Format::Csv) => {
            let mut s = String::from("channel,max_error,mean_error,argmax_r,argmax_g,argmax_b\n");
            for (c, name) in ["r", "g", "b"].iter().enumerate() {
                let a = stats.argmax[c];
                s.push_str(&format!(
                    "{name},{},{},{},{},{}\n",
                    stats.max[c], mean[c], a.r, a.g, a.b
                ));
            }
            s
        }
        None => {
            let mut s = format!(
                "round trip rgb -> yiq -> rgb ({scope}, {} triples)\n",
                stats.count
            );
            for (c, name) in ["r", "g", "b"].iter().enumerate() {
                let a = stats.argmax[c];
                s.push_str(&format!(
                    "  {name}: max {} mean {:.6} at ({}, {}, {})\n",
                    stats.max[c], mean[c], a.r, a.g, a.b
                ));
            }
            s.push_str(&format!(
                "max error {} at ({}, {}, {}); frozen bound {}\n",
                stats.max_error(),
                worst.r,
                worst.g,
                worst.b,
                ROUNDTRIP_MAX_ERROR
            ));
            s
        }
    };
    write_stdout(out, &text)?;
    if stats.max_error() > ROUNDTRIP_MAX_ERROR {
        return Err(CliError::Regression(format!(
            "round-trip error {} exceeds frozen bound {ROUNDTRIP_MAX_ERROR}",
            stats.max_error()
        )));
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                out.write_all(text.as_bytes())
            } else {
                err.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Convert(a) => cmd_convert(a, out),
        Command::Histeq(a) => cmd_histeq(a, out),
        Command::Bench(a) => cmd_bench(a, out),
        Command::Roundtrip(a) => cmd_roundtrip(a, out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "scpsim: {}", e.message());
            e.exit_code()
        }
    }
}

pub fn run() -> i32 {
    run_with(
        std::env::args_os(),
        &mut std::io::stdout().lock(),
        &mut std::io::stderr().lock(),
    )
}
