//! Command-line front end.
//!
//! Raw weight files are flat little-endian binary32, row-major, with their
//! dimensions passed as flags. Errors print one line of the form
//! `itq3: error[<code>]: <message>` on stderr; exit status is 0 on success,
//! 1 for invalid arguments or a failed check, 2 for I/O and format errors.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::codec::{dequantize_tensor, quantize_tensor, read_container, write_container, QuantConfig, WeightTensor};
use crate::compute::{ablate_block_size, eval_error, eval_quantized, write_csv, write_json, GeneratorSpec, WeightDist};
use crate::error::{Error, Result};
use crate::packing::Variant;
use crate::quantizer::ScalePolicy;
use crate::selfcheck;

#[derive(Debug, Parser)]
#[command(name = "itq3", version, about = "Rotation-domain ternary weight quantization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic raw weight file.
    Gen(GenArgs),
    /// Raw weights to an ITQ3 container.
    Quantize(QuantizeArgs),
    /// ITQ3 container to raw weights.
    Dequantize(DequantizeArgs),
    /// Measure quantization error against reference weights.
    Eval(EvalArgs),
    /// Sweep block sizes over one synthetic tensor.
    Ablate(AblateArgs),
    /// Run the built-in correctness checks.
    Selfcheck(SelfcheckArgs),
}

#[derive(Debug, Args)]
struct DistArgs {
    #[arg(long, default_value = "gaussian", value_parser = ["gaussian", "laplace", "student-t", "outlier"])]
    dist: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Degrees of freedom for student-t.
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    outlier_frac: Option<f64>,
    #[arg(long)]
    outlier_mult: Option<f64>,
}

impl DistArgs {
    fn dist(&self) -> Result<WeightDist> {
        let dist = match self.dist.parse::<WeightDist>()? {
            WeightDist::StudentT { nu } => WeightDist::StudentT {
                nu: self.nu.unwrap_or(nu),
            },
            WeightDist::Outlier { frac, mult } => WeightDist::Outlier {
                frac: self.outlier_frac.unwrap_or(frac),
                mult: self.outlier_mult.unwrap_or(mult),
            },
            other => other,
        };
        dist.validate()?;
        Ok(dist)
    }
}

#[derive(Debug, Args)]
struct Dims {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    rows: u64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    cols: u64,
}

impl Dims {
    fn get(&self) -> Result<(usize, usize)> {
        let conv = |v: u64| usize::try_from(v).map_err(|_| Error::Shape(format!("dimension {v} too large")));
        Ok((conv(self.rows)?, conv(self.cols)?))
    }
}

#[derive(Debug, Args)]
struct ConfigArgs {
    #[arg(long = "block", default_value_t = 256, value_parser = parse_block)]
    block_n: usize,
    #[arg(long, default_value = "s", value_parser = parse_variant)]
    variant: Variant,
    #[arg(long, default_value = "paper", value_parser = parse_policy)]
    policy: ScalePolicy,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    symmetric: bool,
}

impl ConfigArgs {
    fn config(&self) -> QuantConfig {
        QuantConfig {
            block_n: self.block_n,
            variant: self.variant,
            policy: self.policy,
            symmetric: self.symmetric,
        }
    }
}

#[derive(Debug, Args)]
struct GenArgs {
    #[command(flatten)]
    dims: Dims,
    #[command(flatten)]
    dist: DistArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct QuantizeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[command(flatten)]
    dims: Dims,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DequantizeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Reference raw weights.
    #[arg(long = "ref")]
    reference: PathBuf,
    #[command(flatten)]
    dims: Dims,
    /// Evaluate this container instead of quantizing on the fly.
    #[arg(long, conflicts_with_all = ["block_n", "variant", "symmetric"])]
    quant: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
    /// Output path; stdout when absent.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[arg(long, value_delimiter = ',', default_value = "32,64,128,256", value_parser = parse_block)]
    blocks: Vec<usize>,
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(1..))]
    rows: u64,
    #[arg(long, default_value_t = 4096, value_parser = clap::value_parser!(u64).range(1..))]
    cols: u64,
    #[command(flatten)]
    dist: DistArgs,
    #[arg(long, default_value = "s", value_parser = parse_variant)]
    variant: Variant,
    #[arg(long, default_value = "paper", value_parser = parse_policy)]
    policy: ScalePolicy,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    symmetric: bool,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Debug, Args)]
struct SelfcheckArgs {
    /// Comma-separated check ids; all checks when absent.
    #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u32).range(1..=14))]
    only: Vec<u32>,
}

fn parse_block(s: &str) -> std::result::Result<usize, String> {
    let n: usize = s.parse().map_err(|e| format!("{e}"))?;
    QuantConfig::with_block(n).map(|_| n).map_err(|e| e.to_string())
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_policy(s: &str) -> std::result::Result<ScalePolicy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn read_raw(path: &Path, rows: usize, cols: usize) -> Result<WeightTensor> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Shape(format!("{rows}x{cols} overflows")))?;
    if bytes.len() != expected {
        return Err(Error::SizeMismatch(format!(
            "{} holds {} bytes, {rows}x{cols} binary32 needs {expected}",
            path.display(),
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    WeightTensor::new(rows, cols, values)
}

fn write_raw(path: &Path, w: &WeightTensor) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for v in w.values() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

fn sink(report: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match report {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn execute(command: Command) -> Result<i32> {
    match command {
        Command::Gen(a) => {
            let (rows, cols) = a.dims.get()?;
            let spec = GeneratorSpec {
                dist: a.dist.dist()?,
                rows,
                cols,
                seed: a.dist.seed,
            };
            write_raw(&a.out, &spec.generate()?)?;
        }
        Command::Quantize(a) => {
            let (rows, cols) = a.dims.get()?;
            let cfg = a.config.config();
            cfg.validate()?;
            let w = read_raw(&a.input, rows, cols)?;
            let q = quantize_tensor(&w, &cfg)?;
            let mut out = BufWriter::new(File::create(&a.out)?);
            write_container(&q, &mut out)?;
            out.flush()?;
        }
        Command::Dequantize(a) => {
            let q = read_container(BufReader::new(File::open(&a.input)?))?;
            write_raw(&a.out, &dequantize_tensor(&q)?)?;
        }
        Command::Eval(a) => {
            let (rows, cols) = a.dims.get()?;
            let w = read_raw(&a.reference, rows, cols)?;
            let report = match &a.quant {
                Some(path) => {
                    let q = read_container(BufReader::new(File::open(path)?))?;
                    if (q.rows(), q.cols()) != (rows, cols) {
                        return Err(Error::Shape(format!(
                            "container is {}x{}, reference is {rows}x{cols}",
                            q.rows(),
                            q.cols()
                        )));
                    }
                    eval_quantized(&w, &q, a.config.policy)?
                }
                None => eval_error(&w, &a.config.config())?,
            };
            let mut out = sink(a.report.as_deref())?;
            match a.format {
                Format::Json => {
                    serde_json::to_writer_pretty(&mut out, &report).map_err(|e| Error::Io(e.into()))?;
                    writeln!(out)?;
                }
                Format::Csv => write_csv(&[report], &mut out)?,
            }
            out.flush()?;
        }
        Command::Ablate(a) => {
            let dims = Dims {
                rows: a.rows,
                cols: a.cols,
            };
            let (rows, cols) = dims.get()?;
            let spec = GeneratorSpec {
                dist: a.dist.dist()?,
                rows,
                cols,
                seed: a.dist.seed,
            };
            let base = QuantConfig {
                variant: a.variant,
                policy: a.policy,
                symmetric: a.symmetric,
                ..QuantConfig::default()
            };
            let table = ablate_block_size(&spec, &a.blocks, &base)?;
            let mut out = sink(a.report.as_deref())?;
            match a.format {
                Format::Json => write_json(&table, &mut out)?,
                Format::Csv => write_csv(&table, &mut out)?,
            }
            out.flush()?;
        }
        Command::Selfcheck(a) => {
            let mut failed = 0;
            let mut stdout = io::stdout().lock();
            for (id, _, check) in selfcheck::CHECKS {
                if !a.only.is_empty() && !a.only.contains(&id) {
                    continue;
                }
                let result = check();
                if !result.passed {
                    failed += 1;
                }
                writeln!(stdout, "{result}")?;
            }
            writeln!(stdout, "{}", if failed == 0 { "all checks passed".to_string() } else { format!("{failed} check(s) failed") })?;
            return Ok(if failed == 0 { 0 } else { 1 });
        }
    }
    Ok(0)
}

/// Runs one invocation; `argv[0]` is the program name.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let rendered = e.render().to_string();
            let mut lines = rendered.lines();
            let first = lines.next().unwrap_or("invalid arguments");
            eprintln!("itq3: error[usage]: {}", first.trim_start_matches("error: "));
            for line in lines {
                eprintln!("{line}");
            }
            return 1;
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("itq3: error[{}]: {msg}", e.code());
            if e.is_format_or_io() {
                2
            } else {
                1
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_zero_rows() {
        let code = run(["itq3", "quantize", "--in", "x", "--rows", "0", "--cols", "4", "--out", "y"]);
        assert_eq!(code, 1);
    }

    #[test]
    fn rejects_unknown_flags_and_values() {
        assert_eq!(run(["itq3", "dequantize", "--in", "a", "--out", "b", "--bogus"]), 1);
        assert_eq!(run(["itq3", "quantize", "--in", "a", "--rows", "1", "--cols", "1", "--out", "b", "--block", "100"]), 1);
        assert_eq!(run(["itq3", "quantize", "--in", "a", "--rows", "1", "--cols", "1", "--out", "b", "--policy", "x"]), 1);
        assert_eq!(run(["itq3"]), 1);
    }

    #[test]
    fn missing_input_is_io_error() {
        let code = run(["itq3", "dequantize", "--in", "/nonexistent/w.itq3", "--out", "/nonexistent/w.bin"]);
        assert_eq!(code, 2);
    }
}
