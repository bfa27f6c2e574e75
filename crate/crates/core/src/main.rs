use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use anneal_range::analysis::{branching_fit, load_records, BranchingFit, DEFAULT_FIT_S_STAR};
use anneal_range::dynamics::BasisMode;
use anneal_range::experiment::{grid, hex_digest, run_sweep, ExperimentConfig, SweepOptions};
use anneal_range::gadget::{build_gadget, validate_gadget, OutcomeClass};
use anneal_range::schedule::{Device, ScheduleTable};
use anneal_range::spectrum::{locate_crossing, CrossingOptions};
use anneal_range::{Error, Result};

#[derive(Parser)]
#[command(name = "anneal-range", version, about = "Reverse-annealing search-range simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the gadget at one barrier height and check its landscape by enumeration.
    Gadget(GadgetArgs),
    /// Locate the true/false avoided crossing for each barrier height.
    Crossing(CrossingArgs),
    /// Run the full device × J_t × τ × s* factorial.
    Sweep(SweepArgs),
    /// Fit branching ratios at one s* from sweep records.
    Fit(FitArgs),
    /// Synthesize or inspect annealing schedules.
    #[command(subcommand)]
    Schedule(ScheduleCommand),
}

fn unit_interval(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

fn device_arg(s: &str) -> std::result::Result<Device, String> {
    Device::parse(s).ok_or_else(|| format!("unknown device {s:?} (expected low-noise or high-noise)"))
}

fn basis_arg(s: &str) -> std::result::Result<BasisMode, String> {
    match s {
        "computational" | "computational-basis" => Ok(BasisMode::ComputationalBasis),
        "eigen" | "energy-eigenbasis" => Ok(BasisMode::EnergyEigenbasis),
        _ => Err(format!("unknown basis mode {s:?} (expected computational or eigen)")),
    }
}

#[derive(Args, Serialize)]
struct GadgetArgs {
    #[arg(long = "jt", value_parser = unit_interval)]
    j_t: f64,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct CrossingArgs {
    #[arg(long = "jt", value_delimiter = ',', value_parser = unit_interval, default_values_t = grid(0.2, 1.0, 0.1))]
    j_t: Vec<f64>,
    #[arg(long, default_value_t = 1e-4)]
    gamma_lo: f64,
    #[arg(long, default_value_t = 0.2)]
    gamma_hi: f64,
    /// CSV output; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Full reports including the bisection history, as JSON.
    #[arg(long)]
    reports: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// TOML configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "runs/sweep")]
    out: PathBuf,
    #[arg(long, env = "ANNEAL_RANGE_JOBS")]
    jobs: Option<usize>,
    /// Skip points already persisted in the output directory.
    #[arg(long)]
    resume: bool,
    #[arg(long)]
    quiet: bool,
    #[arg(long, value_delimiter = ',')]
    devices: Option<Vec<String>>,
    #[arg(long = "jt", value_delimiter = ',', value_parser = unit_interval)]
    j_t: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    s_star: Option<Vec<f64>>,
    #[arg(long = "tau", value_delimiter = ',')]
    tau_us: Option<Vec<f64>>,
    #[arg(long)]
    shots: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    eta_ratio: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    linewidth: Option<f64>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long, value_parser = basis_arg)]
    basis_mode: Option<BasisMode>,
}

#[derive(Args, Serialize)]
struct FitArgs {
    /// Sweep records (JSON lines or CSV).
    records: PathBuf,
    #[arg(long, default_value_t = DEFAULT_FIT_S_STAR)]
    s_star: f64,
    /// CSV output; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ScheduleCommand {
    /// Write a synthetic device schedule as CSV (s, A_GHz, B_GHz).
    Synthesize(SynthArgs),
    /// Tabulate A, B and Γ of a schedule at chosen s values.
    Inspect(InspectArgs),
}

#[derive(Args, Serialize)]
struct SynthArgs {
    #[arg(long, value_parser = device_arg)]
    device: Device,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct InspectArgs {
    #[arg(long, value_parser = device_arg, conflicts_with = "file", required_unless_present = "file")]
    device: Option<Device>,
    #[arg(long)]
    file: Option<PathBuf>,
    #[arg(long = "s", value_delimiter = ',', value_parser = unit_interval)]
    s: Option<Vec<f64>>,
}

fn args_hash<T: Serialize>(tag: &str, args: &T) -> Result<String> {
    Ok(hex_digest(format!("{tag}\n{}", serde_json::to_string(args)?).as_bytes()))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        }),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(|e| Error::Io {
            path: "<stdout>".into(),
            source: e,
        }),
    }
}

#[derive(Serialize)]
struct GadgetOutput {
    config_hash: String,
    start: String,
    true_min: String,
    false_representative: String,
    report: anneal_range::gadget::LandscapeReport,
    problem: anneal_range::ising::IsingProblem,
}

fn cmd_gadget(args: &GadgetArgs) -> Result<()> {
    let gadget = build_gadget(args.j_t)?;
    let report = validate_gadget(&gadget)?;
    let out = GadgetOutput {
        config_hash: args_hash("gadget", &(args.j_t,))?,
        start: gadget.spec.start_state.to_bits(),
        true_min: gadget.spec.true_min.to_bits(),
        false_representative: gadget.spec.false_set[0].to_bits(),
        report,
        problem: gadget.problem.clone(),
    };
    emit(args.out.as_deref(), &(serde_json::to_string_pretty(&out)? + "\n"))
}

fn cmd_crossing(args: &CrossingArgs) -> Result<()> {
    let hash = args_hash("crossing", &(&args.j_t, args.gamma_lo, args.gamma_hi))?;
    let low = ScheduleTable::synthetic(Device::LowNoise);
    let high = ScheduleTable::synthetic(Device::HighNoise);
    let opts = CrossingOptions {
        bracket: (args.gamma_lo, args.gamma_hi),
        ..CrossingOptions::default()
    };
    let mut csv = format!("# config-hash: {hash}\nJ_t,gamma_cross,gap_upper_bound,B_low_GHz,B_high_GHz\n");
    let mut reports = Vec::new();
    for &j_t in &args.j_t {
        let gadget = build_gadget(j_t)?;
        let report = locate_crossing(&gadget.problem, j_t, &[&low, &high], &opts)?;
        csv.push_str(&format!(
            "{},{:.12e},{:.6e},{:.9},{:.9}\n",
            j_t, report.gamma_cross, report.gap_upper_bound, report.b_at_crossing[0].b_ghz, report.b_at_crossing[1].b_ghz
        ));
        reports.push(report);
    }
    if let Some(path) = &args.reports {
        let body = serde_json::json!({ "config_hash": hash, "reports": reports });
        emit(Some(path), &(serde_json::to_string_pretty(&body)? + "\n"))?;
    }
    emit(args.out.as_deref(), &csv)
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(v) = &args.devices {
        cfg.devices = v.clone();
    }
    if let Some(v) = &args.j_t {
        cfg.j_t = v.clone();
    }
    if let Some(v) = &args.s_star {
        cfg.s_star = v.clone();
    }
    if let Some(v) = &args.tau_us {
        cfg.tau_us = v.clone();
    }
    if let Some(v) = args.shots {
        cfg.shots = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.eta {
        cfg.bath.eta = v;
    }
    if let Some(v) = args.eta_ratio {
        cfg.bath.eta_ratio = v;
    }
    if let Some(v) = args.temperature {
        cfg.bath.temperature = v;
    }
    if let Some(v) = args.linewidth {
        cfg.bath.linewidth = v;
    }
    if let Some(v) = args.levels {
        cfg.bath.levels = v;
    }
    if let Some(v) = args.basis_mode {
        cfg.bath.basis_mode = v;
    }
    let opts = SweepOptions {
        jobs: args.jobs,
        resume: args.resume,
        progress: !args.quiet,
    };
    let records = run_sweep(&cfg, &args.out, &opts)?;
    if !args.quiet {
        eprintln!("{} records written to {}", records.len(), args.out.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct FitRow {
    device: String,
    j_t: f64,
    n_tau: usize,
    fit: BranchingFit,
}

fn cmd_fit(args: &FitArgs) -> Result<()> {
    let hash = args_hash("fit", &(args.records.display().to_string(), args.s_star))?;
    let records = load_records(&args.records)?;
    let mut groups: BTreeMap<(String, u64), Vec<(f64, f64)>> = BTreeMap::new();
    for r in records.iter().filter(|r| (r.s_star - args.s_star).abs() < 1e-9) {
        groups
            .entry((r.device.clone(), r.j_t.to_bits()))
            .or_default()
            .push((r.tau_us, r.probability(OutcomeClass::FalseMin)));
    }
    if groups.is_empty() {
        return Err(Error::Fit(format!("no records at s* = {}", args.s_star)));
    }
    let mut rows = Vec::new();
    for ((device, jt_bits), points) in groups {
        let j_t = f64::from_bits(jt_bits);
        let mut taus: Vec<f64> = points.iter().map(|p| p.0).collect();
        taus.sort_by(f64::total_cmp);
        taus.dedup();
        if taus.len() < 3 {
            return Err(Error::Fit(format!(
                "{device} J_t={j_t}: only {} distinct hold times at s* = {} (need 3)",
                taus.len(),
                args.s_star
            )));
        }
        let fit = branching_fit(&points)?;
        rows.push(FitRow {
            device,
            j_t,
            n_tau: taus.len(),
            fit,
        });
    }
    let mut csv = format!(
        "# config-hash: {hash}\ndevice,J_t,R_false,R_false_err,kappa_per_us,kappa_err,rss,n_points,kappa_identifiable\n"
    );
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{:.9},{:.9},{:.9},{:.9},{:.6e},{},{}\n",
            r.device,
            r.j_t,
            r.fit.r_false,
            r.fit.sigma_r(),
            r.fit.kappa,
            r.fit.sigma_kappa(),
            r.fit.rss,
            r.fit.n_points,
            r.fit.kappa_identifiable
        ));
    }
    if let Some(path) = &args.json {
        let body = serde_json::json!({ "config_hash": hash, "s_star": args.s_star, "fits": rows });
        emit(Some(path), &(serde_json::to_string_pretty(&body)? + "\n"))?;
    }
    emit(args.out.as_deref(), &csv)
}

fn cmd_schedule(cmd: &ScheduleCommand) -> Result<()> {
    match cmd {
        ScheduleCommand::Synthesize(args) => {
            let table = ScheduleTable::synthetic(args.device);
            let mut buf = Vec::new();
            table.write_csv(&mut buf)?;
            emit(args.out.as_deref(), &String::from_utf8(buf).expect("csv is UTF-8"))
        }
        ScheduleCommand::Inspect(args) => {
            let table = match (&args.device, &args.file) {
                (Some(d), _) => ScheduleTable::synthetic(*d),
                (None, Some(path)) => ScheduleTable::load(path)?,
                (None, None) => unreachable!("clap requires one of --device and --file"),
            };
            let hash = args_hash("schedule-inspect", args)?;
            let points = args.s.clone().unwrap_or_else(|| grid(0.0, 1.0, 0.05));
            let mut out = format!("# config-hash: {hash}\ns,A_GHz,B_GHz,gamma\n");
            for s in points {
                let (a, b) = table.ab(s)?;
                out.push_str(&format!("{s},{a:.9},{b:.9},{:.9e}\n", a / b));
            }
            emit(None, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gadget(a) => cmd_gadget(a),
        Command::Crossing(a) => cmd_crossing(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Schedule(c) => cmd_schedule(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
