//! `wristlab` command line: run the simulated controller, generate demo
//! routines, analyze routine files and check motor sizing.
//!
//! Exit codes: 0 success, 1 validation or adequacy failure, 2 usage or
//! input error.

use std::fs;
use std::io::{self, Write};
use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use wristlab::analysis::{self, assess_motor, MotorDemand};
use wristlab::service::library::DATA_DIR_ENV;
use wristlab::service::{
    parse_script, run_script, Controller, ControllerConfig, Server, ServerConfig,
};
use wristlab::trajectory::{generate_demo_with_period, DEFAULT_RECORD_PERIOD_MS};
use wristlab::{DeviceParams, MotorSpec, Routine, SafetyEnvelope};

#[derive(Parser)]
#[command(
    name = "wristlab",
    version,
    about = "Wrist rehabilitation device controller and analysis tools"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the controller against the simulated plant.
    Simulate(SimulateArgs),
    /// Write a growing-arc demo routine.
    Generate(GenerateArgs),
    /// Kinematic/kinetic analysis of a routine file.
    Analyze(AnalyzeArgs),
    /// Compare a torque/speed demand against a motor rating.
    CheckMotor(CheckMotorArgs),
}

#[derive(Args)]
struct MotorArgs {
    #[arg(long, default_value = "STM17")]
    motor_name: String,
    /// Rated motor torque, N·mm.
    #[arg(long, default_value_t = 480.18)]
    motor_torque: f64,
    /// Maximum motor speed, °/s.
    #[arg(long, default_value_t = 3600.0)]
    motor_speed: f64,
}

impl MotorArgs {
    fn spec(&self) -> anyhow::Result<MotorSpec> {
        let spec = MotorSpec {
            name: self.motor_name.clone(),
            max_speed_deg_s: self.motor_speed,
            rated_torque_nmm: self.motor_torque,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    /// TCP port for the line protocol; 0 picks a free port.
    #[arg(long, default_value_t = 7878)]
    port: u16,
    /// Also serve the protocol over WebSocket on this port.
    #[arg(long)]
    ws_port: Option<u16>,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u32).range(1..=1000))]
    tick_hz: u32,
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u32).range(1..=1000))]
    record_hz: u32,
    /// ADC noise standard deviation, counts.
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, env = DATA_DIR_ENV, default_value = "routines")]
    data_dir: PathBuf,
    /// Simulated seconds per wall-clock second.
    #[arg(long, default_value_t = 1.0)]
    speedup: f64,
    /// Stop after this much session time.
    #[arg(long)]
    run_for_ms: Option<u64>,
    /// Run a JSONL command script headless instead of serving clients.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Where the script run writes its message log (default stdout).
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    /// Routine length, seconds.
    #[arg(long, default_value_t = 30.0)]
    duration: f64,
    /// Arc frequency, Hz.
    #[arg(long, default_value_t = 0.5)]
    freq: f64,
    #[arg(long, default_value_t = DEFAULT_RECORD_PERIOD_MS)]
    period_ms: u64,
    #[arg(long, default_value = "demo")]
    name: String,
    /// Output file (default stdout).
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    file: PathBuf,
    /// Resampling period; defaults to the routine's own grid.
    #[arg(long)]
    dt_ms: Option<u64>,
    /// Moving-average window (odd) applied before differentiation.
    #[arg(long)]
    smooth: Option<usize>,
    /// Write the JSON report here (`-` for stdout).
    #[arg(long)]
    json: Option<PathBuf>,
    /// Write `t_ms,v_dp,v_cr,a_dp,a_cr,tau_motor_dp,tau_motor_cr` rows here.
    #[arg(long)]
    plot_csv: Option<PathBuf>,
    #[command(flatten)]
    motor: MotorArgs,
}

#[derive(Args)]
struct CheckMotorArgs {
    /// Required motor-side torque, N·mm.
    #[arg(long)]
    torque: f64,
    /// Required motor-side speed, °/s.
    #[arg(long)]
    speed: f64,
    #[command(flatten)]
    motor: MotorArgs,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Simulate(a) => simulate(a),
        Cmd::Generate(a) => generate(a),
        Cmd::Analyze(a) => analyze(a),
        Cmd::CheckMotor(a) => check_motor(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn simulate(args: SimulateArgs) -> anyhow::Result<ExitCode> {
    if !(args.speedup.is_finite() && args.speedup > 0.0) {
        bail!("--speedup must be positive");
    }
    if !(args.noise_sigma.is_finite() && args.noise_sigma >= 0.0) {
        bail!("--noise-sigma must be non-negative");
    }
    let config = ControllerConfig {
        tick_hz: args.tick_hz,
        record_hz: args.record_hz,
        data_dir: args.data_dir.clone(),
        ..ControllerConfig::default()
    };
    let mut controller = Controller::simulated(config, args.noise_sigma, args.seed)?;

    if let Some(path) = &args.script {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading script {}", path.display()))?;
        let script = parse_script(&text)?;
        let until = args
            .run_for_ms
            .unwrap_or_else(|| script.last().map_or(0, |e| e.at_ms) + 1000);
        let log = run_script(&mut controller, &script, until);
        let mut out: Box<dyn Write> = match &args.log {
            Some(p) => Box::new(io::BufWriter::new(
                fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
            )),
            None => Box::new(io::BufWriter::new(io::stdout().lock())),
        };
        for line in log {
            writeln!(out, "{line}")?;
        }
        out.flush()?;
        return Ok(ExitCode::SUCCESS);
    }

    let server = Server::bind(ServerConfig {
        tcp_addr: SocketAddr::new(args.host, args.port),
        ws_addr: args.ws_port.map(|p| SocketAddr::new(args.host, p)),
        speedup: args.speedup,
        run_for_ms: args.run_for_ms,
        ..ServerConfig::default()
    })
    .context("binding listener")?;
    let ports = server.ports()?;
    match ports.ws {
        Some(ws) => println!("listening tcp={} ws={}", ports.tcp, ws),
        None => println!("listening tcp={}", ports.tcp),
    }
    io::stdout().flush()?;
    server.run(&mut controller)?;
    Ok(ExitCode::SUCCESS)
}

fn generate(args: GenerateArgs) -> anyhow::Result<ExitCode> {
    if !(args.duration.is_finite() && args.duration > 0.0) {
        bail!("--duration must be positive, got {}", args.duration);
    }
    let duration_ms = (args.duration * 1000.0).round() as u64;
    let mut routine = generate_demo_with_period(
        duration_ms,
        args.freq,
        &SafetyEnvelope::default(),
        args.period_ms,
    )?;
    routine.set_name(args.name);
    let text = routine.serialize();
    match args.out {
        Some(path) => {
            fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?
        }
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(ExitCode::SUCCESS)
}

fn write_output(path: &PathBuf, text: &str) -> anyhow::Result<()> {
    if path.as_os_str() == "-" {
        io::stdout().write_all(text.as_bytes())?;
        Ok(())
    } else {
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }
}

fn analyze(args: AnalyzeArgs) -> anyhow::Result<ExitCode> {
    let motor = args.motor.spec()?;
    let bytes = fs::read(&args.file).with_context(|| format!("reading {}", args.file.display()))?;
    let routine =
        Routine::parse_bytes(&bytes).with_context(|| format!("parsing {}", args.file.display()))?;
    let mut uniform = analysis::prepare_uniform(&routine, args.dt_ms)?;
    if let Some(window) = args.smooth {
        uniform = uniform.smooth(window)?;
    }
    let params = DeviceParams::default();
    let envelope = SafetyEnvelope::default();
    let kin = analysis::differentiate(&uniform)?;
    let torques = analysis::torques_from_kinematics(&uniform, &kin, &params)?;
    let mut report =
        analysis::report_from_profiles(&uniform, &kin, &torques, &envelope, &params, &motor);
    // violations are counted on the samples as stored
    report.rom_violations = analysis::count_rom_violations(&routine, &envelope);

    if args.json.as_deref().is_some_and(|p| p.as_os_str() == "-") {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.render_text());
        if let Some(path) = &args.json {
            write_output(path, &report.to_json())?;
        }
    }
    if let Some(path) = &args.plot_csv {
        write_output(path, &analysis::plot_csv(&kin, &torques))?;
    }
    let ok = report.motor_adequate && report.rom_violations.count == 0;
    Ok(if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn check_motor(args: CheckMotorArgs) -> anyhow::Result<ExitCode> {
    let motor = args.motor.spec()?;
    if !(args.torque.is_finite()
        && args.torque >= 0.0
        && args.speed.is_finite()
        && args.speed >= 0.0)
    {
        bail!("demands must be finite and non-negative");
    }
    let verdict = assess_motor(
        MotorDemand {
            torque_nmm: args.torque,
            speed_deg_s: args.speed,
        },
        &motor,
    );
    let fmt = |m: Option<f64>| m.map_or_else(|| "inf".to_string(), |m| format!("{m:.2}"));
    println!(
        "motor {}: rated {} N·mm, {} °/s",
        motor.name, motor.rated_torque_nmm, motor.max_speed_deg_s
    );
    println!("demand: {} N·mm, {} °/s", args.torque, args.speed);
    println!("torque margin: {}", fmt(verdict.torque_margin));
    println!("speed margin: {}", fmt(verdict.speed_margin));
    println!(
        "verdict: {}",
        if verdict.adequate {
            "adequate"
        } else {
            "inadequate"
        }
    );
    Ok(if verdict.adequate {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}
