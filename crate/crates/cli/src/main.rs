//! Command-line front end: loads register configs, dispatches simulations and
//! solvers, and emits tables, CSV and plot-ready data.
//!
//! Exit codes: 0 success, 2 config error, 3 infeasible or degenerate input,
//! 4 numerical failure.

use clap::{Args, Parser, Subcommand};
use ddrf_core::dynamics::GateParams;
use ddrf_core::noise::{
    environment_spins, predict_ghz, simulate_bell_fidelity, MonteCarloConfig, NoiseError,
};
use ddrf_core::register::{RegisterConfig, RegisterError};
use ddrf_core::scheduler::{
    build_schedule, erf_envelope, solve_echo_timings, verify_refocus, OpKind, PulseSchedule,
    SchedulerError, TimelineOp,
};
use ddrf_core::spectroscopy::{
    ac_stark_shift, fit_cosine, resonance_frequencies, simulate_spectrum, SpectroscopyError,
    SweepParams,
};
use ddrf_core::tomography::{
    expectations_from_shots, fit_decay, ghz_fidelity_from_expectations, ghz_operator_set,
    parse_shot_csv, witness_ghz, TomographyError,
};
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_CONFIG: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Parser)]
#[command(
    name = "ddrf-sim",
    about = "Spin-register simulator and analysis toolkit"
)]
struct Cli {
    /// Register configuration JSON; falls back to $DDRF_SIM_CONFIG, then the
    /// bundled Tables I-III register.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// RNG seed recorded in every output header.
    #[arg(long, global = true, default_value_t = 0x5eed_dd8f)]
    seed: u64,
    /// Output directory for reports and CSV files.
    #[arg(long, global = true, default_value = ".")]
    output: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo electron-nuclear Bell-state fidelity for one spin.
    Bell(BellArgs),
    /// DDRF spectroscopy sweep over an RF frequency range.
    Spectrum(SpectrumArgs),
    /// Depolarizing-model GHZ fidelity predictions for growing registers.
    GhzPredict(GhzArgs),
    /// Echo-timing solution and validated pulse schedule.
    Schedule(ScheduleArgs),
    /// AC-Stark shift of a spectator spin.
    Stark(StarkArgs),
    /// Least-squares fits (decay or cosine) on CSV input.
    Fit(FitArgs),
    /// Shot-record ingestion, corrected expectations, fidelity and witness.
    Tomo(TomoArgs),
}

#[derive(Args)]
struct BellArgs {
    /// Spin label (for C1, `--regime amplifier` selects the starred row).
    #[arg(long)]
    spin: String,
    #[arg(long, default_value = "awg")]
    regime: String,
    #[arg(long, default_value_t = 500)]
    samples: u32,
    /// Override every T2* with this value in ms; `inf` disables dephasing.
    #[arg(long)]
    t2star: Option<String>,
    #[arg(long, default_value_t = false)]
    no_crosstalk: bool,
    /// Spectral window for crosstalk companions, Hz.
    #[arg(long, default_value_t = 5000.0)]
    window: f64,
    /// Drop the partially characterized environment spins near C7/C8.
    #[arg(long, default_value_t = false)]
    no_environment: bool,
}

#[derive(Args)]
struct SpectrumArgs {
    #[arg(long)]
    from_khz: f64,
    #[arg(long)]
    to_khz: f64,
    #[arg(long, default_value_t = 250.0)]
    step_hz: f64,
    /// Comma-separated spin labels; defaults to the eight 13C spins.
    #[arg(long)]
    spins: Option<String>,
    #[arg(long, default_value_t = 48)]
    n_pulses: u32,
    /// Interpulse half-spacing in us (default 1/54 kHz).
    #[arg(long, default_value_t = 18.518518518518519)]
    tau_us: f64,
    #[arg(long, default_value_t = 19)]
    phase_points: usize,
    #[arg(long, default_value = "spectrum.csv")]
    out: String,
}

#[derive(Args)]
struct GhzArgs {
    /// Replace a Bell-fidelity input, e.g. `--override C5=0.972` (repeatable).
    #[arg(long = "override", value_name = "LABEL=VALUE")]
    overrides: Vec<String>,
    /// All initialization and Bell fidelities set to one.
    #[arg(long, default_value_t = false)]
    perfect: bool,
}

#[derive(Args)]
struct ScheduleArgs {
    /// Comma-separated spin labels in sequence order.
    #[arg(long)]
    spins: String,
    /// Initial echo spacing parameter in us (default: longest echo pulse).
    #[arg(long)]
    spacing_us: Option<f64>,
    #[arg(long, default_value = "schedule.json")]
    out: String,
    /// Also sample the erf envelope of every echo pulse into this CSV.
    #[arg(long)]
    waveform: Option<String>,
    /// Waveform sample rate in MHz.
    #[arg(long, default_value_t = 1.0)]
    sample_rate_mhz: f64,
    /// Envelope rise time in us.
    #[arg(long, default_value_t = 7.5)]
    rise_us: f64,
}

#[derive(Args)]
struct StarkArgs {
    #[arg(long)]
    rabi_hz: f64,
    /// Detuning of the RF drive from the spectator's m_s = -1 frequency, Hz.
    #[arg(long, conflicts_with_all = ["spin", "rf_hz"])]
    detuning_hz: Option<f64>,
    /// Spectator spin label (with --rf-hz).
    #[arg(long, requires = "rf_hz")]
    spin: Option<String>,
    #[arg(long)]
    rf_hz: Option<f64>,
}

#[derive(Args)]
struct FitArgs {
    /// `decay` for A + B exp(-(t/T)^n), `cosine` for a + A cos(phi + phi0).
    #[arg(long)]
    kind: String,
    /// Two-column CSV: abscissa,value.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    fix_a: Option<f64>,
    #[arg(long)]
    fix_b: Option<f64>,
}

#[derive(Args)]
struct TomoArgs {
    /// Shot-record CSV: basis,sequence(A|B),photon(0|1),outcomes(+-1;...).
    #[arg(long)]
    shots: PathBuf,
    /// Per-qubit readout correction factors, comma separated.
    #[arg(long)]
    c_factors: Option<String>,
    #[arg(long, default_value = "expectations.csv")]
    out: String,
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    config_path: String,
    seed: u64,
    output_dir: String,
    overrides: Vec<String>,
}

fn sig9(x: f64) -> String {
    format!("{x:.8e}")
}

fn load_config(cli: &Cli) -> Result<(RegisterConfig, String), RegisterError> {
    if let Some(path) = &cli.config {
        return Ok((RegisterConfig::from_path(path)?, path.display().to_string()));
    }
    if let Ok(env_path) = std::env::var("DDRF_SIM_CONFIG") {
        return Ok((RegisterConfig::from_path(Path::new(&env_path))?, env_path));
    }
    Ok((RegisterConfig::bundled(), "<bundled>".to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Register(#[from] RegisterError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    Spectroscopy(#[from] SpectroscopyError),
    #[error(transparent)]
    Tomography(#[from] TomographyError),
    #[error("{0}")]
    Usage(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Register(_) | CliError::Usage(_) | CliError::Io(_) | CliError::Json(_) => {
                EXIT_CONFIG
            }
            CliError::Scheduler(SchedulerError::Infeasible)
            | CliError::Scheduler(SchedulerError::NoValidCount { .. })
            | CliError::Scheduler(SchedulerError::InvalidShape { .. })
            | CliError::Scheduler(SchedulerError::TooFewSpins(_))
            | CliError::Spectroscopy(SpectroscopyError::ZeroDetuning)
            | CliError::Spectroscopy(SpectroscopyError::DegenerateDesign)
            | CliError::Tomography(TomographyError::NoDetections)
            | CliError::Tomography(TomographyError::NonPositiveSignal(_))
            | CliError::Tomography(TomographyError::MalformedRecord(_))
            | CliError::Tomography(TomographyError::MissingOperator(_))
            | CliError::Noise(NoiseError::DegenerateDenominator)
            | CliError::Noise(NoiseError::InvalidProbability(_)) => EXIT_INFEASIBLE,
            _ => EXIT_NUMERIC,
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    std::fs::create_dir_all(&cli.output)?;
    match &cli.command {
        Command::Bell(args) => cmd_bell(cli, args),
        Command::Spectrum(args) => cmd_spectrum(cli, args),
        Command::GhzPredict(args) => cmd_ghz_predict(cli, args),
        Command::Schedule(args) => cmd_schedule(cli, args),
        Command::Stark(args) => cmd_stark(cli, args),
        Command::Fit(args) => cmd_fit(cli, args),
        Command::Tomo(args) => cmd_tomo(cli, args),
    }
}

fn manifest(cli: &Cli, command: &str, config_path: &str, overrides: Vec<String>) -> RunManifest {
    RunManifest {
        command: command.to_string(),
        config_path: config_path.to_string(),
        seed: cli.seed,
        output_dir: cli.output.display().to_string(),
        overrides,
    }
}

fn cmd_bell(cli: &Cli, args: &BellArgs) -> Result<(), CliError> {
    let (mut cfg, cfg_path) = load_config(cli)?;
    let label = match (args.spin.as_str(), args.regime.as_str()) {
        ("C1", "amplifier") => "C1*".to_string(),
        (other, "amplifier") if !other.ends_with('*') => format!("{other}*"),
        (other, _) => other.to_string(),
    };
    cfg.spin(&label)?; // fail early on unknown labels
    let mut overrides = Vec::new();
    if let Some(t2) = &args.t2star {
        let value_ms = if t2 == "inf" {
            1e15
        } else {
            t2.parse::<f64>()
                .map_err(|_| CliError::Usage(format!("bad --t2star value {t2:?}")))?
        };
        for s in cfg.spins.iter_mut() {
            s.t2_star_ms0_ms = value_ms;
            s.t2_star_ms1_ms = value_ms;
        }
        overrides.push(format!("t2star={t2}"));
    }
    let spin = cfg.spin(&label)?.clone();
    let gate = GateParams::entangling_for(&spin);
    let mc = MonteCarloConfig {
        samples: args.samples,
        seed: cli.seed,
        crosstalk_window_hz: args.window,
        include_crosstalk: !args.no_crosstalk,
    };
    let extras = if args.no_environment {
        Vec::new()
    } else {
        environment_spins(&cfg)
    };
    let result = simulate_bell_fidelity(&label, &cfg, &gate, &mc, &extras)?;
    println!(
        "bell {label}: fidelity = {:.6} +- {:.6} (optimized Rabi {:.2} Hz, crosstalk {:?})",
        result.mean_fidelity, result.std_error, result.optimized_rabi_hz, result.crosstalk
    );
    #[derive(Serialize)]
    struct BellReport {
        manifest: RunManifest,
        spin: String,
        samples: u32,
        fidelity: f64,
        std_error: f64,
        optimized_rabi_hz: f64,
        crosstalk: Vec<String>,
    }
    let report = BellReport {
        manifest: manifest(cli, "bell", &cfg_path, overrides),
        spin: label.clone(),
        samples: args.samples,
        fidelity: result.mean_fidelity,
        std_error: result.std_error,
        optimized_rabi_hz: result.optimized_rabi_hz,
        crosstalk: result.crosstalk,
    };
    let path = cli
        .output
        .join(format!("bell_{}.json", label.replace('*', "star")));
    std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
    println!("report written to {}", path.display());
    Ok(())
}

fn cmd_spectrum(cli: &Cli, args: &SpectrumArgs) -> Result<(), CliError> {
    let (cfg, cfg_path) = load_config(cli)?;
    if args.to_khz <= args.from_khz || args.step_hz <= 0.0 {
        return Err(CliError::Usage("empty or inverted frequency range".into()));
    }
    let labels: Vec<String> = match &args.spins {
        Some(list) if list.is_empty() || list == "none" => Vec::new(),
        Some(list) => list.split(',').map(|s| s.trim().to_string()).collect(),
        None => cfg
            .spins
            .iter()
            .filter(|s| !s.is_nitrogen() && !s.label.ends_with('*'))
            .map(|s| s.label.clone())
            .collect(),
    };
    let spins: Vec<&ddrf_core::NuclearSpinParams> = labels
        .iter()
        .map(|l| cfg.spin(l))
        .collect::<Result<_, _>>()?;
    let sweep = SweepParams {
        n_pulses: args.n_pulses,
        tau_s: args.tau_us * 1e-6,
        schedule_larmor_hz: cfg.gamma_c13_hz_per_gauss * cfg.b_field_gauss,
    };
    let mut freqs = Vec::new();
    let mut f = args.from_khz * 1e3;
    while f <= args.to_khz * 1e3 + 1e-9 {
        freqs.push(f);
        f += args.step_hz;
    }
    let grid: Vec<f64> = (0..args.phase_points)
        .map(|k| k as f64 * std::f64::consts::TAU / (args.phase_points.max(2) - 1) as f64)
        .collect();
    let points = simulate_spectrum(&spins, &sweep, &freqs, &grid)?;
    let path = cli.output.join(&args.out);
    let mut out = String::new();
    out.push_str(&format!("# seed={} config={}\n", cli.seed, cfg_path));
    out.push_str("rf_freq_hz,amplitude,phase_offset_rad\n");
    for p in &points {
        out.push_str(&format!(
            "{},{},{}\n",
            sig9(p.rf_freq_hz),
            sig9(p.amplitude),
            sig9(p.phase_offset_rad)
        ));
    }
    std::fs::write(&path, out)?;
    println!(
        "spectrum with {} points written to {}",
        points.len(),
        path.display()
    );
    println!("resonances in range:");
    for spin in &spins {
        let range = -30i64..=30;
        let (cond, unc) =
            resonance_frequencies(spin.omega_m1_hz, sweep.tau_s, range.clone(), range.clone());
        for (m, f) in range.clone().zip(cond) {
            if f >= args.from_khz * 1e3 && f <= args.to_khz * 1e3 {
                let kind = if m == 0 { "primary" } else { "conditional" };
                println!("  {} {}: m={} at {:.3} kHz", spin.label, kind, m, f / 1e3);
            }
        }
        for (p, f) in range.clone().zip(unc) {
            if f >= args.from_khz * 1e3 && f <= args.to_khz * 1e3 {
                println!(
                    "  {} unconditional: p={} at {:.3} kHz",
                    spin.label,
                    p,
                    f / 1e3
                );
            }
        }
    }
    Ok(())
}

fn cmd_ghz_predict(cli: &Cli, args: &GhzArgs) -> Result<(), CliError> {
    let (mut cfg, _cfg_path) = load_config(cli)?;
    let mut bells = cfg.bell_fidelity_electron.clone();
    if args.perfect {
        cfg.electron_init_fidelity = 1.0;
        for s in cfg.spins.iter_mut() {
            s.init_fidelity = 1.0;
        }
        for v in bells.values_mut() {
            *v = 1.0;
        }
    }
    for ov in &args.overrides {
        let (label, value) = ov
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("bad override {ov:?}")))?;
        let value: f64 = value
            .parse()
            .map_err(|_| CliError::Usage(format!("bad override value in {ov:?}")))?;
        bells.insert(label.to_string(), value);
    }
    let order = cfg.ghz_spin_order.clone();
    let rows = predict_ghz(&order, &cfg, &bells)?;
    println!("qubits  spin_added  init_predicted  ghz_predicted");
    for ((n, fi, fg), label) in rows.iter().zip(&order) {
        println!("{n:>6}  {label:>10}  {fi:>14.4}  {fg:>13.4}");
    }
    Ok(())
}

fn cmd_schedule(cli: &Cli, args: &ScheduleArgs) -> Result<(), CliError> {
    let (cfg, cfg_path) = load_config(cli)?;
    let labels: Vec<String> = args
        .spins
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let spins: Vec<&ddrf_core::NuclearSpinParams> = labels
        .iter()
        .map(|l| cfg.spin(l))
        .collect::<Result<_, _>>()?;
    let gates: Vec<f64> = spins
        .iter()
        .map(|s| 2.0 * s.n_pulses as f64 * s.tau_us)
        .collect();
    let echoes: Vec<f64> = spins.iter().map(|s| s.rf_pi_us).collect();
    let schedule = if labels.len() == 1 {
        // single spin: symmetric two-wait schedule around its echo
        let w = args.spacing_us.unwrap_or(echoes[0]);
        let mk = |spin: &str, kind: OpKind, duration_us: f64, start_us: f64| TimelineOp {
            spin: spin.to_string(),
            kind,
            duration_us,
            start_us,
        };
        let (g, e) = (gates[0], echoes[0]);
        let ops = vec![
            mk(&labels[0], OpKind::Gate, g, 0.0),
            mk("electron", OpKind::Wait, w, g),
            mk(&labels[0], OpKind::Echo, e, g + w),
            mk("electron", OpKind::Wait, w, g + w + e),
            mk(&labels[0], OpKind::Gate, g, g + 2.0 * w + e),
        ];
        let mut s = PulseSchedule {
            ops,
            refocus_residuals_us: vec![],
        };
        s.refocus_residuals_us = verify_refocus(&s)?;
        s
    } else {
        let spacing = args
            .spacing_us
            .unwrap_or_else(|| echoes.iter().cloned().fold(0.0, f64::max));
        let timings = solve_echo_timings(&gates, &echoes, spacing)?;
        build_schedule(&labels, &gates, &echoes, &timings)
    };
    let worst = schedule
        .refocus_residuals_us
        .iter()
        .map(|(_, r)| r.abs())
        .fold(0.0, f64::max);
    println!(
        "schedule with {} operations, worst refocus residual {:.3e} us",
        schedule.ops.len(),
        worst
    );
    #[derive(Serialize)]
    struct ScheduleReport {
        manifest: RunManifest,
        ops: Vec<TimelineOp>,
        refocus_residuals_us: Vec<(String, f64)>,
    }
    let report = ScheduleReport {
        manifest: manifest(cli, "schedule", &cfg_path, vec![]),
        ops: schedule.ops.clone(),
        refocus_residuals_us: schedule.refocus_residuals_us.clone(),
    };
    let path = cli.output.join(&args.out);
    std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
    println!("schedule written to {}", path.display());
    if let Some(wf) = &args.waveform {
        let mut out = String::new();
        out.push_str(&format!(
            "# seed={} sample_rate_mhz={}\n",
            cli.seed, args.sample_rate_mhz
        ));
        out.push_str("time_us,amplitude\n");
        let dt = 1.0 / args.sample_rate_mhz;
        for op in &schedule.ops {
            if op.kind != OpKind::Echo {
                continue;
            }
            let mut t = op.start_us;
            while t <= op.start_us + op.duration_us {
                let a = erf_envelope(t, args.rise_us, op.start_us, op.duration_us)?;
                out.push_str(&format!("{},{}\n", sig9(t), sig9(a)));
                t += dt;
            }
        }
        let wf_path = cli.output.join(wf);
        std::fs::write(&wf_path, out)?;
        println!("waveform written to {}", wf_path.display());
    }
    Ok(())
}

fn cmd_stark(cli: &Cli, args: &StarkArgs) -> Result<(), CliError> {
    let shift = match (args.detuning_hz, &args.spin, args.rf_hz) {
        (Some(d), None, None) => ac_stark_shift(args.rabi_hz, d, 0.0)?,
        (None, Some(label), Some(rf)) => {
            let (cfg, _) = load_config(cli)?;
            let spin = cfg.spin(label)?;
            ac_stark_shift(args.rabi_hz, rf, spin.omega_m1_hz)?
        }
        _ => {
            return Err(CliError::Usage(
                "provide either --detuning-hz or --spin with --rf-hz".into(),
            ))
        }
    };
    println!("ac stark shift: {:.4} Hz", shift);
    Ok(())
}

fn read_two_column_csv(path: &Path) -> Result<(Vec<f64>, Vec<f64>), CliError> {
    let text = std::fs::read_to_string(path)?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.chars().next().unwrap().is_alphabetic()
        {
            continue;
        }
        let mut it = line.split(',');
        let x: f64 = it
            .next()
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| CliError::Usage(format!("bad CSV line {line:?}")))?;
        let y: f64 = it
            .next()
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| CliError::Usage(format!("bad CSV line {line:?}")))?;
        xs.push(x);
        ys.push(y);
    }
    Ok((xs, ys))
}

fn cmd_fit(_cli: &Cli, args: &FitArgs) -> Result<(), CliError> {
    let (xs, ys) = read_two_column_csv(&args.input)?;
    match args.kind.as_str() {
        "decay" => {
            let fit = fit_decay(&xs, &ys, args.fix_a, args.fix_b)?;
            println!(
                "decay fit: A = {:.6} +- {:.2e}, B = {:.6} +- {:.2e}, T = {:.6} +- {:.2e}, n = {:.4} +- {:.2e}",
                fit.a, fit.errors[0], fit.b, fit.errors[1], fit.t, fit.errors[2], fit.n,
                fit.errors[3]
            );
        }
        "cosine" => {
            let (a, amp, phi0) = fit_cosine(&xs, &ys)?;
            println!(
                "cosine fit: a = {:.6}, A = {:.6}, phi0 = {:.6} rad",
                a, amp, phi0
            );
        }
        other => return Err(CliError::Usage(format!("unknown fit kind {other:?}"))),
    }
    Ok(())
}

fn cmd_tomo(cli: &Cli, args: &TomoArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.shots)?;
    let shots = parse_shot_csv(&text)?;
    let mut records = expectations_from_shots(&shots)?;
    if let Some(list) = &args.c_factors {
        let factors: Vec<f64> = list
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| CliError::Usage("bad --c-factors list".into()))?;
        for rec in records.iter_mut() {
            let mut correction = 1.0;
            for (q, ch) in rec.pauli_string.chars().enumerate() {
                if ch != 'I' {
                    let c = factors.get(q).copied().ok_or_else(|| {
                        CliError::Usage("fewer correction factors than qubits".into())
                    })?;
                    if c <= 0.0 {
                        return Err(CliError::Tomography(TomographyError::NonPositiveSignal(c)));
                    }
                    correction *= c;
                }
            }
            rec.value /= correction;
            rec.stderr /= correction;
            rec.corrected = true;
            if !rec.plausible() {
                eprintln!(
                    "warning: corrected {} = {:.4} exceeds the physical range",
                    rec.pauli_string, rec.value
                );
            }
        }
    }
    let path = cli.output.join(&args.out);
    let mut out = String::new();
    out.push_str(&format!("# seed={}\n", cli.seed));
    out.push_str("pauli_string,value,stderr\n");
    for r in &records {
        out.push_str(&format!(
            "{},{},{}\n",
            r.pauli_string,
            sig9(r.value),
            sig9(r.stderr)
        ));
    }
    std::fs::write(&path, out)?;
    println!(
        "{} expectation values written to {}",
        records.len(),
        path.display()
    );
    let qubits = records
        .first()
        .map(|r| r.pauli_string.len())
        .ok_or_else(|| CliError::Usage("no records in input".into()))?;
    let mut measured: BTreeMap<String, f64> = BTreeMap::new();
    let mut stderrs: BTreeMap<String, f64> = BTreeMap::new();
    for r in &records {
        measured.insert(r.pauli_string.clone(), r.value);
        stderrs.insert(r.pauli_string.clone(), r.stderr);
    }
    match ghz_fidelity_from_expectations(qubits, &measured) {
        Ok(f) => {
            let var: f64 = ghz_operator_set(qubits)
                .iter()
                .filter(|(s, _)| !s.chars().all(|c| c == 'I'))
                .map(|(s, _)| {
                    let se = stderrs.get(s).copied().unwrap_or(0.0);
                    (se / (1 << qubits) as f64).powi(2)
                })
                .sum();
            let stderr = var.sqrt().max(1e-12);
            let (entangled, significance) = witness_ghz(f, stderr);
            println!(
                "ghz fidelity = {f:.4} +- {stderr:.4}; witness negativity: {} ({significance:.1} sigma)",
                if entangled { "violated" } else { "not violated" }
            );
        }
        Err(TomographyError::MissingOperator(op)) => {
            println!("(incomplete operator set: missing {op}; fidelity not computed)");
        }
        Err(e) => return Err(e.into()),
    }
    Ok(())
}
