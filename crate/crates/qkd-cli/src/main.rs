//! Operator front end: runs one endpoint over TCP or both in-process,
//! generates parity-check code files, and writes key material, QBER series
//! and summary reports to disk.

mod config;

use clap::{Args, Parser, Subcommand};
use config::{
    build_plan, parse_config_file, ConfigError, Overrides, RoleArg, RunPlan, CONFIG_KEYS,
};
use qkd::engine::{run_alice, run_bob, run_loopback, RunArtifacts};
use qkd::metrics::SessionReport;
use qkd::net::{AlarmKind, CaptureChannel, CaptureLog, PublicChannel, TcpChannel};
use qkd::postproc::ldpc::LdpcCode;
use qkd::types::Role;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_ALARM: u8 = 2;
const EXIT_TRANSPORT: u8 = 3;
const EXIT_CONFIG: u8 = 4;

#[derive(Parser)]
#[command(
    name = "qkd",
    version,
    about = "Simulates a two-endpoint phase-encoded BB84 link over lossy fiber, \
             with reconciliation, verification and privacy amplification",
    after_help = after_help_text()
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an endpoint (alice or bob, over TCP) or both in-process (loopback)
    Run(RunArgs),
    /// Generate a deterministic parity-check code file
    GenCode(GenArgs),
}

#[derive(Args)]
struct RunArgs {
    /// alice, bob, or loopback
    #[arg(long)]
    role: Option<String>,
    /// Config file, one key = value per line, # for comments
    #[arg(long)]
    config: Option<PathBuf>,
    /// lab, bank18, bank35, or custom (custom needs every physical field)
    #[arg(long)]
    preset: Option<String>,
    /// Number of sessions to run (default 10)
    #[arg(long)]
    sessions: Option<u32>,
    /// Master seed, decimal or 0x-hex; drawn from the OS when absent
    #[arg(long)]
    seed: Option<String>,
    /// Output directory for key, manifest and CSV files (default .)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Bind and await the peer, e.g. 127.0.0.1:7001 (endpoint roles)
    #[arg(long)]
    listen: Option<String>,
    /// Connect to a listening peer (endpoint roles)
    #[arg(long)]
    dial: Option<String>,
    /// Record all wire traffic to this file
    #[arg(long)]
    capture: Option<PathBuf>,
    /// Override any config key, e.g. --set visibility=0.97 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct GenArgs {
    /// Block length in bits, a multiple of 64
    #[arg(long)]
    n: usize,
    /// Code rate in (0, 1)
    #[arg(long)]
    rate: f64,
    /// Construction seed
    #[arg(long)]
    seed: u64,
    /// Output file
    #[arg(long)]
    out: PathBuf,
}

fn after_help_text() -> String {
    format!(
        "Config keys (file and --set): {}\n\nExit codes: 0 success, {} alarm raised, \
         {} transport or run failure, {} configuration error",
        CONFIG_KEYS.join(", "),
        EXIT_ALARM,
        EXIT_TRANSPORT,
        EXIT_CONFIG
    )
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Transport(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) | CliError::Transport(m) => f.write_str(m),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> CliError {
        CliError::Config(e.to_string())
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Transport(_) => EXIT_TRANSPORT,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            e.print().ok();
            return ExitCode::from(code);
        }
    };
    let result = match cli.cmd {
        Cmd::Run(args) => run_cmd(args),
        Cmd::GenCode(args) => gen_code_cmd(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(e.code())
        }
    }
}

fn run_cmd(args: RunArgs) -> Result<ExitCode, CliError> {
    let file_layer = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("{}: {}", path.display(), e)))?;
            parse_config_file(&path.display().to_string(), &text)?
        }
        None => Overrides::default(),
    };

    let mut flag_layer = Overrides::default();
    let flag = |key: &str, value: &str, target: &mut Overrides| -> Result<(), CliError> {
        target.apply_kv(key, value).map_err(|m| CliError::Config(format!("--{}: {}", key, m)))
    };
    if let Some(v) = &args.role {
        flag("role", v, &mut flag_layer)?;
    }
    if let Some(v) = &args.preset {
        flag("preset", v, &mut flag_layer)?;
    }
    if let Some(v) = args.sessions {
        flag("sessions", &v.to_string(), &mut flag_layer)?;
    }
    if let Some(v) = &args.seed {
        flag("seed", v, &mut flag_layer)?;
    }
    if let Some(v) = &args.out {
        flag_layer.out = Some(v.clone());
    }
    if let Some(v) = &args.listen {
        flag("listen", v, &mut flag_layer)?;
    }
    if let Some(v) = &args.dial {
        flag("dial", v, &mut flag_layer)?;
    }
    if let Some(v) = &args.capture {
        flag_layer.capture = Some(v.clone());
    }
    for pair in &args.set {
        let (key, value) = pair.split_once('=').ok_or_else(|| {
            CliError::Config(format!("--set expects KEY=VALUE, got '{}'", pair))
        })?;
        flag_layer
            .apply_kv(key.trim(), value.trim())
            .map_err(|m| CliError::Config(format!("--set {}: {}", pair, m)))?;
    }

    let plan = build_plan(file_layer.overlay(flag_layer))?;
    if plan.seed_was_random {
        println!(
            "master seed: {:#018x} (drawn from the OS; pass --seed to reproduce)",
            plan.engine.master_seed.0
        );
    }
    match plan.role {
        RoleArg::Loopback => loopback_cmd(&plan),
        RoleArg::Alice | RoleArg::Bob => endpoint_cmd(&plan),
    }
}

fn loopback_cmd(plan: &RunPlan) -> Result<ExitCode, CliError> {
    let run = run_loopback(&plan.engine, plan.capture.is_some())
        .map_err(|e| CliError::Transport(e.to_string()))?;
    write_artifacts(&plan.out_dir, &run.alice, plan)?;
    write_artifacts(&plan.out_dir, &run.bob, plan)?;
    if let (Some(path), Some(bytes)) = (&plan.capture, &run.capture) {
        fs::write(path, bytes)
            .map_err(|e| CliError::Transport(format!("{}: {}", path.display(), e)))?;
        println!("capture: {}", path.display());
    }
    print_summary(&run.alice);
    print_summary(&run.bob);
    Ok(exit_for(run.alice.alarm.is_some() || run.bob.alarm.is_some()))
}

fn endpoint_cmd(plan: &RunPlan) -> Result<ExitCode, CliError> {
    let transport = |what: &str, e: &dyn fmt::Display| CliError::Transport(format!("{}: {}", what, e));
    let stream = if let Some(addr) = &plan.listen {
        let listener = TcpListener::bind(addr).map_err(|e| transport(&format!("bind {}", addr), &e))?;
        let local = listener.local_addr().map_err(|e| transport("local address", &e))?;
        println!("listening on {}", local);
        std::io::stdout().flush().ok();
        let (stream, peer) = listener.accept().map_err(|e| transport("accept", &e))?;
        println!("peer connected from {}", peer);
        stream
    } else if let Some(addr) = &plan.dial {
        TcpStream::connect(addr).map_err(|e| transport(&format!("dial {}", addr), &e))?
    } else {
        return Err(CliError::Config("endpoint roles need --listen or --dial".into()));
    };
    let tcp = TcpChannel::new(stream).map_err(|e| transport("socket setup", &e))?;

    let log = plan.capture.as_ref().map(|_| CaptureLog::new());
    let mut chan: Box<dyn PublicChannel> = match &log {
        Some(l) => Box::new(CaptureChannel::new(tcp, l.clone())),
        None => Box::new(tcp),
    };
    let artifacts = match plan.role {
        RoleArg::Alice => run_alice(&plan.engine, chan.as_mut()),
        RoleArg::Bob => run_bob(&plan.engine, chan.as_mut()),
        RoleArg::Loopback => unreachable!("dispatched above"),
    }
    .map_err(|e| CliError::Transport(e.to_string()))?;
    write_artifacts(&plan.out_dir, &artifacts, plan)?;
    if let (Some(path), Some(l)) = (&plan.capture, &log) {
        fs::write(path, l.bytes())
            .map_err(|e| CliError::Transport(format!("{}: {}", path.display(), e)))?;
        println!("capture: {}", path.display());
    }
    print_summary(&artifacts);
    Ok(exit_for(artifacts.alarm.is_some()))
}

fn exit_for(alarm: bool) -> ExitCode {
    if alarm {
        ExitCode::from(EXIT_ALARM)
    } else {
        ExitCode::SUCCESS
    }
}

fn gen_code_cmd(args: GenArgs) -> Result<ExitCode, CliError> {
    let code = LdpcCode::generate(args.n, args.rate, args.seed)
        .map_err(|e| CliError::Config(e.to_string()))?;
    fs::write(&args.out, code.to_file_string())
        .map_err(|e| CliError::Transport(format!("{}: {}", args.out.display(), e)))?;
    println!(
        "wrote {} ({} checks over {} bits, rate {}, seed {})",
        args.out.display(),
        code.m(),
        code.n(),
        args.rate,
        args.seed
    );
    Ok(ExitCode::SUCCESS)
}

fn role_name(role: Role) -> &'static str {
    match role {
        Role::Alice => "alice",
        Role::Bob => "bob",
    }
}

fn alarm_text(alarm: &Option<(AlarmKind, Option<f64>)>) -> String {
    match alarm {
        None => "none".to_string(),
        Some((AlarmKind::DiscardRun, Some(q))) => {
            format!("discard-run (estimated qber {:.6})", q)
        }
        Some((AlarmKind::DiscardRun, None)) => "discard-run".to_string(),
        Some((AlarmKind::EpochQber, Some(q))) => format!("epoch-qber (measured qber {:.6})", q),
        Some((AlarmKind::EpochQber, None)) => "epoch-qber".to_string(),
        Some((AlarmKind::DigestMismatch, _)) => "digest-mismatch".to_string(),
    }
}

fn write_artifacts(dir: &Path, a: &RunArtifacts, plan: &RunPlan) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Transport(format!("{}: {}", dir.display(), e)))?;
    let name = role_name(a.role);
    let write = |suffix: &str, bytes: &[u8]| -> Result<(), CliError> {
        let path = dir.join(format!("{}.{}", name, suffix));
        fs::write(&path, bytes)
            .map_err(|e| CliError::Transport(format!("{}: {}", path.display(), e)))
    };
    write("key", &a.final_key.to_bytes())?;
    write("qber.csv", a.series.to_csv().as_bytes())?;
    let summary = format!("{}\n{}\n", SessionReport::csv_header(), a.report.to_csv_line());
    write("summary.csv", summary.as_bytes())?;
    write("manifest.txt", manifest_text(a, plan).as_bytes())?;
    Ok(())
}

fn manifest_text(a: &RunArtifacts, plan: &RunPlan) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    let _ = writeln!(out, "endpoint: {}", role_name(a.role));
    let _ = writeln!(out, "master seed: {:#018x}", plan.engine.master_seed.0);
    let _ = writeln!(
        out,
        "sessions completed: {} (ids 0..={})",
        a.sessions_completed,
        a.sessions_completed.saturating_sub(1)
    );
    let _ = writeln!(out, "slots simulated: {}", a.slots_simulated);
    let _ = writeln!(out, "sifted bits: {}", a.sifted_bits);
    let _ = writeln!(out, "verified bits: {}", a.verified_bits);
    let _ = writeln!(out, "secret bits: {}", a.secret_bits);
    let _ = writeln!(out, "mean windowed qber: {:.6}", a.report.mean_qber);
    let _ = writeln!(out, "qber stddev: {:.6}", a.report.qber_stddev);
    let _ = writeln!(
        out,
        "extrapolated sifted rate: {:.3} bit/s (duty cycle {})",
        a.report.extrapolated_sifted_rate_bps, plan.engine.duty_cycle
    );
    let _ = writeln!(
        out,
        "extrapolated secret rate: {:.3} bit/s",
        a.report.extrapolated_secret_rate_bps
    );
    let _ = writeln!(out, "alarm: {}", alarm_text(&a.alarm));
    let _ = writeln!(
        out,
        "confirmed epochs: {} (l = floor(n*(1-h(q)) - leak_ec - leak_verify - 2*log2(1/eps)))",
        a.epochs.len()
    );
    for e in &a.epochs {
        let _ = writeln!(
            out,
            "  epoch {}: n_verified={} qber={:.6} leak_ec={} leak_verify={} eps_pa={:e} -> l={}",
            e.epoch_index,
            e.n_verified,
            e.qber,
            e.leak_ec,
            e.leak_verify,
            plan.engine.pa.eps_pa,
            e.key_yield.length().unwrap_or(0)
        );
    }
    out
}

fn print_summary(a: &RunArtifacts) {
    if a.alarm.is_some() {
        println!(
            "{}: ALARM {}, key withheld ({} sifted bits over {} sessions)",
            role_name(a.role),
            alarm_text(&a.alarm),
            a.sifted_bits,
            a.sessions_completed
        );
    } else {
        println!(
            "{}: {} secret bits from {} verified ({} sessions, mean qber {:.4}, \
             sifted {:.1} bit/s, secret {:.1} bit/s)",
            role_name(a.role),
            a.secret_bits,
            a.verified_bits,
            a.sessions_completed,
            a.report.mean_qber,
            a.report.extrapolated_sifted_rate_bps,
            a.report.extrapolated_secret_rate_bps
        );
    }
}
