use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use grasshap_core::array::{
    build_array, field_scan, focus_phases, write_field_csv, write_field_metadata, ScanGrid,
};
use grasshap_core::headless::{run_headless, write_rows_csv, HeadlessOptions};
use grasshap_core::par::Execution;
use grasshap_core::session::{format_hash, read_log_jsonl, replay, write_log_jsonl};
use grasshap_core::stm::{schedule, write_schedule_csv};
use grasshap_core::waveform::spec_from_params;
use grasshap_core::{ParamVector, Vec3};

use crate::config::ServerConfig;

#[derive(Debug, Parser)]
#[command(name = "grasshap", version, about = "Midair haptic texture design studio")]
pub struct Cli {
    /// JSON config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Listen port; overrides the config's listen address port.
    #[arg(long)]
    pub port: Option<u16>,
    /// Session seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run the synthetic-user benchmark instead of serving.
    #[arg(long)]
    pub headless: bool,
    #[command(flatten)]
    pub bench: HeadlessArgs,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Args)]
pub struct HeadlessArgs {
    #[arg(long, default_value_t = 15, requires = "headless")]
    pub iterations: usize,
    /// Gumbel noise scale of the simulated chooser; 0 is greedy.
    #[arg(long, default_value_t = 0.0, requires = "headless")]
    pub noise: f64,
    /// Hidden optimum as 7 comma-separated values in [0, 1].
    #[arg(long, value_parser = parse_vector, requires = "headless")]
    pub target: Option<ParamVector>,
    /// Per-iteration CSV destination; stdout when absent.
    #[arg(long, requires = "headless")]
    pub out: Option<PathBuf>,
    /// Also write the session event log (JSONL) here.
    #[arg(long, requires = "headless")]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Export the focal-point schedule as CSV.
    Schedule {
        /// Normalized parameter vector, 7 comma-separated values.
        #[arg(long, value_parser = parse_vector)]
        params: Option<ParamVector>,
        #[arg(long, default_value_t = 0.0)]
        t0: f64,
        #[arg(long, default_value_t = 1.0)]
        duration: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scan the focused field on a lateral plane; writes CSV plus a JSON sidecar.
    Field {
        /// Focus target x,y,z in mm; defaults to the workspace origin.
        #[arg(long, value_parser = parse_point)]
        target: Option<Vec3>,
        #[arg(long, default_value_t = 40.0)]
        extent: f64,
        #[arg(long, default_value_t = 1.0)]
        resolution: f64,
        #[arg(long, default_value_t = 1.0)]
        drive: f64,
        /// CSV path; the sidecar goes next to it with a .json extension.
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay a JSONL event log and verify every state hash.
    Replay { log: PathBuf },
}

fn parse_reals(s: &str, n: usize) -> Result<Vec<f64>, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}")))
        .collect::<Result<_, _>>()?;
    if v.len() != n {
        return Err(format!("expected {n} comma-separated values, got {}", v.len()));
    }
    Ok(v)
}

pub fn parse_vector(s: &str) -> Result<ParamVector, String> {
    let v = parse_reals(s, 7)?;
    ParamVector::new(v.try_into().expect("length checked")).map_err(|e| e.to_string())
}

pub fn parse_point(s: &str) -> Result<Vec3, String> {
    let v = parse_reals(s, 3)?;
    Ok(Vec3::new(v[0], v[1], v[2]))
}

impl Cli {
    pub fn server_config(&self) -> anyhow::Result<ServerConfig> {
        let mut cfg = match &self.config {
            Some(p) => ServerConfig::load(p)?,
            None => ServerConfig::default(),
        };
        if let Some(port) = self.port {
            cfg.listen.set_port(port);
        }
        if let Some(seed) = self.seed {
            cfg.session.seed = seed;
        }
        Ok(cfg)
    }
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

pub fn run_benchmark(cfg: &ServerConfig, args: &HeadlessArgs, stdout: impl Write) -> anyhow::Result<()> {
    let opts = HeadlessOptions {
        iterations: args.iterations,
        noise_scale: args.noise,
        target: args.target,
        ..HeadlessOptions::default()
    };
    let run = run_headless(&cfg.session, &opts)?;
    match &args.out {
        Some(p) => write_rows_csv(&run.rows, create(p)?)?,
        None => write_rows_csv(&run.rows, stdout)?,
    }
    if let Some(p) = &args.log {
        let mut w = create(p)?;
        write_log_jsonl(&run.log, &mut w)?;
        w.flush()?;
    }
    Ok(())
}

pub fn run_command(cfg: &ServerConfig, cmd: &Command, mut stdout: impl Write) -> anyhow::Result<()> {
    match cmd {
        Command::Schedule {
            params,
            t0,
            duration,
            out,
        } => {
            let v = params.unwrap_or_else(ParamVector::center);
            let p = cfg.session.domain.to_physical(&v);
            let frames = schedule(&cfg.session.stm, &p, &spec_from_params(&p), *t0, *duration)?;
            write_schedule_csv(&frames, create(out)?)?;
            writeln!(stdout, "{} frames -> {}", frames.len(), out.display())?;
        }
        Command::Field {
            target,
            extent,
            resolution,
            drive,
            out,
        } => {
            let array_cfg = cfg.array_config()?;
            let array = build_array(&array_cfg)?;
            let target = target.unwrap_or(cfg.session.stm.workspace_origin);
            let phases = focus_phases(&array, &cfg.acoustic, &target)?;
            let grid = ScanGrid::lateral(target, *extent, *resolution);
            let mut map = field_scan(&array, &cfg.acoustic, &phases, &grid, Execution::default())?;
            map.values.iter_mut().for_each(|v| *v *= drive);
            write_field_csv(&map, create(out)?)?;
            let sidecar = out.with_extension("json");
            write_field_metadata(&map, target, &array_cfg, &cfg.acoustic, create(&sidecar)?)?;
            let (iu, iv) = map.argmax();
            let (u, v) = grid.offsets(iu, iv);
            writeln!(
                stdout,
                "{}x{} nodes, peak at ({u}, {v}) mm -> {} + {}",
                map.nu,
                map.nv,
                out.display(),
                sidecar.display()
            )?;
        }
        Command::Replay { log } => {
            let f = File::open(log).with_context(|| format!("opening {}", log.display()))?;
            let entries = read_log_jsonl(BufReader::new(f))?;
            let hash = replay(&cfg.session, &entries)?;
            writeln!(stdout, "{} entries replayed, final state {}", entries.len(), format_hash(hash))?;
        }
    }
    Ok(())
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = cli.server_config()?;
    if cli.headless && cli.command.is_some() {
        bail!("--headless cannot be combined with a subcommand");
    }
    let stdout = std::io::stdout().lock();
    if let Some(cmd) = &cli.command {
        return run_command(&cfg, cmd, stdout);
    }
    if cli.headless {
        return run_benchmark(&cfg, &cli.bench, stdout);
    }
    drop(stdout);
    tokio::runtime::Runtime::new()?.block_on(crate::app::serve(cfg))
}
