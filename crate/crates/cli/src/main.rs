//! Command-line front end: `simulate` runs a full pass from a scenario file,
//! `calibrate` exposes the bench toolkit, `report` re-reads and checks a run
//! directory.
//!
//! Every error path exits nonzero after printing a single line
//! `error: <CODE>: <message>` to stderr so scripts can match on the code.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qkd_downlink::calibration::{
    divergence_fit, equalize_currents, hwp_sweep_fit, roi_counts, AccumulativeHistogram, RoiSpec,
    DEFAULT_BIN_WIDTH_S,
};
use qkd_downlink::io::{read_report, read_spots, read_sweep, read_timetags, write_report};
use qkd_downlink::scenario::Scenario;
use qkd_downlink::simulate::run_pass_to_dir;

#[derive(Parser)]
#[command(name = "qkdsim", version, about = "Satellite QKD downlink simulator and calibration toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a full simulated pass from a scenario file and write artifacts.
    ///
    /// Exit status: 0 if a secure key was produced, 2 if the protocol
    /// aborted (the report is still written), 1 on any fault.
    Simulate {
        /// Scenario TOML file.
        scenario: PathBuf,
        /// Override the scenario's RNG seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for the report and raw streams.
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Bench calibration fits on recorded data files.
    Calibrate {
        #[command(subcommand)]
        tool: CalibrateTool,
    },
    /// Re-read a run directory, verify its config hash, and print the report.
    Report {
        /// Directory written by `simulate`.
        run_dir: PathBuf,
    },
}

#[derive(Args)]
struct FoldArgs {
    /// Timetag file (`timetag v1` format).
    #[arg(long)]
    input: PathBuf,
    /// Folding period in seconds.
    #[arg(long)]
    period: f64,
    /// Histogram bin width in seconds.
    #[arg(long, default_value_t = DEFAULT_BIN_WIDTH_S)]
    bin_width: f64,
    /// Only fold tags from this port (H, V, D, A, B); default all.
    #[arg(long)]
    port: Option<String>,
}

#[derive(Subcommand)]
enum CalibrateTool {
    /// Fold timetags modulo a period and write the histogram.
    Histogram {
        #[command(flatten)]
        fold: FoldArgs,
        /// Output file; columnar `bin_start_s count`.
        #[arg(long, default_value = "histogram.txt")]
        out: PathBuf,
    },
    /// Integrate a folded histogram over labelled regions of interest.
    Roi {
        #[command(flatten)]
        fold: FoldArgs,
        /// Region as `name:start_s:end_s`; repeatable.
        #[arg(long, required = true)]
        roi: Vec<String>,
        #[arg(long, default_value = "roi.txt")]
        out: PathBuf,
    },
    /// Closed-loop drive-current equalization against a modelled bench.
    ///
    /// The bench responds with rate = gain * current^exponent per channel,
    /// standing in for live hardware so the loop itself can be exercised
    /// and its convergence trace inspected.
    Equalize {
        /// Initial drive currents in mA, `a,b,c,d`.
        #[arg(long, value_delimiter = ',')]
        initial: Vec<f64>,
        /// Per-channel bench gains, `a,b,c,d`.
        #[arg(long, value_delimiter = ',')]
        gains: Vec<f64>,
        /// Rate-vs-current exponent of the modelled bench.
        #[arg(long, default_value_t = 2.0)]
        exponent: f64,
        /// Target max relative rate deviation from the mean.
        #[arg(long, default_value_t = 0.01)]
        tol: f64,
        #[arg(long, default_value_t = 32)]
        max_iters: usize,
        #[arg(long, default_value = "equalize.txt")]
        out: PathBuf,
    },
    /// Fit a four-channel half-waveplate sweep.
    SweepFit {
        /// Sweep file: `angle_deg c_h c_v c_d c_a` rows.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "sweep_fit.txt")]
        out: PathBuf,
    },
    /// Fit beam divergence from spot widths at several distances.
    Divergence {
        /// Spot file: `distance_m width_x_m width_y_m` rows.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "divergence.txt")]
        out: PathBuf,
    },
}

struct CliError {
    code: &'static str,
    message: String,
}

impl CliError {
    fn new(code: &'static str, message: impl Into<String>) -> Self {
        // errors must stay machine-parsable: one line, no embedded newlines
        let message = message
            .into()
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect::<Vec<_>>()
            .join("; ");
        Self { code, message }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::new("E_IO", format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}: {}", e.code, e.message);
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Simulate { scenario, seed, out } => simulate(&scenario, seed, &out),
        Command::Calibrate { tool } => calibrate(tool).map(|()| ExitCode::SUCCESS),
        Command::Report { run_dir } => report(&run_dir).map(|()| ExitCode::SUCCESS),
    }
}

fn simulate(path: &Path, seed: Option<u64>, out: &Path) -> Result<ExitCode> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut scenario =
        Scenario::from_toml_str(&text).map_err(|e| CliError::new("E_SCENARIO", e.to_string()))?;
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    let output =
        run_pass_to_dir(&scenario, out).map_err(|e| CliError::new("E_RUN", e.to_string()))?;
    let aborted = output.key_report.as_ref().map_or(true, |k| k.aborted);
    println!("run written to {}", out.display());
    for key in ["qber", "secure_len_bits", "final_key_bits", "aborted"] {
        if let Some(v) = output.render_report().get(key) {
            println!("{key} = {v}");
        }
    }
    Ok(if aborted { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

fn fold(args: &FoldArgs) -> Result<AccumulativeHistogram> {
    let file = File::open(&args.input).map_err(|e| io_err(&args.input, e))?;
    let tags = read_timetags(&mut BufReader::new(file))
        .map_err(|e| CliError::new("E_FORMAT", format!("{}: {e}", args.input.display())))?;
    let mut hist = AccumulativeHistogram::new(args.period, args.bin_width)
        .map_err(|e| CliError::new("E_ARGS", e.to_string()))?;
    for tag in &tags {
        if let Some(port) = &args.port {
            if !tag.port.label().eq_ignore_ascii_case(port) {
                continue;
            }
        }
        hist.record(tag.time_s);
    }
    Ok(hist)
}

fn write_report_file(path: &Path, entries: &BTreeMap<String, String>) -> Result<()> {
    let mut buf = Vec::new();
    write_report(&mut buf, entries).map_err(|e| CliError::new("E_IO", e.to_string()))?;
    std::fs::write(path, buf).map_err(|e| io_err(path, e))?;
    println!("report written to {}", path.display());
    Ok(())
}

fn calibrate(tool: CalibrateTool) -> Result<()> {
    match tool {
        CalibrateTool::Histogram { fold: args, out } => {
            let hist = fold(&args)?;
            let mut file = File::create(&out).map_err(|e| io_err(&out, e))?;
            let mut write = || -> std::io::Result<()> {
                writeln!(file, "# histogram v1")?;
                writeln!(file, "# period_s {:e}", hist.period_s)?;
                writeln!(file, "# total {}", hist.total())?;
                writeln!(file, "# peak_phase_s {:e}", hist.peak_phase_s())?;
                writeln!(file, "# columns: bin_start_s count")?;
                for (i, count) in hist.counts.iter().enumerate() {
                    writeln!(file, "{:e} {count}", hist.bin_start_s(i))?;
                }
                Ok(())
            };
            write().map_err(|e| io_err(&out, e))?;
            println!("histogram written to {}", out.display());
            println!("peak_phase_s = {:e}", hist.peak_phase_s());
        }
        CalibrateTool::Roi { fold: args, roi, out } => {
            let hist = fold(&args)?;
            let mut specs = Vec::new();
            for raw in &roi {
                let parts: Vec<&str> = raw.split(':').collect();
                let parsed = (parts.len() == 3)
                    .then(|| -> Option<RoiSpec> {
                        Some(RoiSpec::new(
                            parts[0],
                            parts[1].parse().ok()?,
                            parts[2].parse().ok()?,
                        ))
                    })
                    .flatten();
                specs.push(parsed.ok_or_else(|| {
                    CliError::new("E_ARGS", format!("bad roi `{raw}`, want name:start_s:end_s"))
                })?);
            }
            let counts =
                roi_counts(&hist, &specs).map_err(|e| CliError::new("E_ARGS", e.to_string()))?;
            let mut entries = BTreeMap::new();
            entries.insert("total".into(), hist.total().to_string());
            entries.insert("outside".into(), counts.outside.to_string());
            for (name, count) in &counts.regions {
                entries.insert(format!("roi_{name}"), count.to_string());
            }
            write_report_file(&out, &entries)?;
        }
        CalibrateTool::Equalize {
            initial,
            gains,
            exponent,
            tol,
            max_iters,
            out,
        } => {
            let initial: [f64; 4] = initial
                .try_into()
                .map_err(|_| CliError::new("E_ARGS", "--initial needs 4 values"))?;
            let gains: [f64; 4] = gains
                .try_into()
                .map_err(|_| CliError::new("E_ARGS", "--gains needs 4 values"))?;
            let result = equalize_currents(
                initial,
                |currents| std::array::from_fn(|i| gains[i] * currents[i].powf(exponent)),
                tol,
                max_iters,
            )
            .map_err(|e| CliError::new("E_FIT", e.to_string()))?;
            let mut entries = BTreeMap::new();
            entries.insert("iterations".into(), result.iterations.to_string());
            entries.insert("spread".into(), format!("{:e}", result.spread));
            for i in 0..4 {
                entries.insert(format!("current_ma_{i}"), format!("{:e}", result.currents_ma[i]));
                entries.insert(format!("rate_{i}"), format!("{:e}", result.measured[i]));
            }
            write_report_file(&out, &entries)?;
        }
        CalibrateTool::SweepFit { input, out } => {
            let file = File::open(&input).map_err(|e| io_err(&input, e))?;
            let (angles, counts) = read_sweep(&mut BufReader::new(file))
                .map_err(|e| CliError::new("E_FORMAT", format!("{}: {e}", input.display())))?;
            let fit = hwp_sweep_fit(&angles, &counts)
                .map_err(|e| CliError::new("E_FIT", e.to_string()))?;
            let mut entries = BTreeMap::new();
            for (label, ch) in ["h", "v", "d", "a"].iter().zip(&fit.channels) {
                entries.insert(format!("{label}_phase_deg"), format!("{:e}", ch.phase_deg));
                entries.insert(format!("{label}_visibility"), format!("{:e}", ch.visibility));
                entries.insert(format!("{label}_offset"), format!("{:e}", ch.offset));
                entries.insert(format!("{label}_amplitude"), format!("{:e}", ch.amplitude));
                entries.insert(
                    format!("{label}_low_visibility"),
                    ch.low_visibility.to_string(),
                );
            }
            entries.insert("sep_h_v_deg".into(), format!("{:e}", fit.separation_deg(0, 1)));
            entries.insert("sep_h_d_deg".into(), format!("{:e}", fit.separation_deg(0, 2)));
            entries.insert("sep_d_a_deg".into(), format!("{:e}", fit.separation_deg(2, 3)));
            write_report_file(&out, &entries)?;
        }
        CalibrateTool::Divergence { input, out } => {
            let file = File::open(&input).map_err(|e| io_err(&input, e))?;
            let spots = read_spots(&mut BufReader::new(file))
                .map_err(|e| CliError::new("E_FORMAT", format!("{}: {e}", input.display())))?;
            let fit =
                divergence_fit(&spots).map_err(|e| CliError::new("E_FIT", e.to_string()))?;
            let mut entries = BTreeMap::new();
            entries.insert("divergence_x_rad".into(), format!("{:e}", fit.x.divergence_rad));
            entries.insert("divergence_y_rad".into(), format!("{:e}", fit.y.divergence_rad));
            entries.insert("waist_x_m".into(), format!("{:e}", fit.x.waist_m));
            entries.insert("waist_y_m".into(), format!("{:e}", fit.y.waist_m));
            entries.insert("astigmatic".into(), fit.astigmatic.to_string());
            entries.insert("converging".into(), fit.converging.to_string());
            write_report_file(&out, &entries)?;
        }
    }
    Ok(())
}

fn report(run_dir: &Path) -> Result<()> {
    let report_path = run_dir.join("report.txt");
    let file = File::open(&report_path).map_err(|e| io_err(&report_path, e))?;
    let entries = read_report(&mut BufReader::new(file))
        .map_err(|e| CliError::new("E_FORMAT", format!("{}: {e}", report_path.display())))?;

    let scenario_path = run_dir.join("scenario.toml");
    let text = std::fs::read_to_string(&scenario_path).map_err(|e| io_err(&scenario_path, e))?;
    let scenario =
        Scenario::from_toml_str(&text).map_err(|e| CliError::new("E_SCENARIO", e.to_string()))?;
    let expected = scenario.config_hash();
    match entries.get("config_hash") {
        Some(hash) if *hash == expected => {}
        Some(hash) => {
            return Err(CliError::new(
                "E_HASH",
                format!("report hash {hash} does not match scenario hash {expected}"),
            ))
        }
        None => return Err(CliError::new("E_FORMAT", "report has no config_hash")),
    }
    for (key, value) in &entries {
        println!("{key} = {value}");
    }
    Ok(())
}
