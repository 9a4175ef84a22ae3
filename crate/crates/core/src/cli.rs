//! Command-line front end: config parsing, sweep dispatch and result files.
//!
//! Configs are flat `key = value` files; `#` starts a comment. List values
//! are comma separated and 3D points are written `x,y,z`. Overrides given on
//! the command line replace file values.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use nalgebra::Point3;
use serde::Serialize;

use crate::channel::planar_shape;
use crate::error::{Error, Result};
use crate::sim::{SimConfig, Simulator, SweepKind, SweepResult};

/// Every accepted config key, in documentation order.
pub const CONFIG_KEYS: &[&str] = &[
    "n",
    "m",
    "q",
    "b",
    "pilots",
    "scatterers",
    "l_rb",
    "l_ur",
    "snr_db",
    "trials",
    "seed",
    "methods",
    "f_hat_rel_error",
    "omp_sparsity",
    "timing",
    "geometry.bs_position",
    "geometry.ris_position",
    "geometry.user_center",
    "geometry.user_radius",
    "geometry.carrier_frequency",
    "geometry.bs_spacing",
    "geometry.ris_rows",
    "geometry.ris_cols",
    "geometry.ris_spacing",
    "geometry.scatter_margin",
    "geometry.guard_radius",
    "geometry.ris_bs_los_k",
];

pub const CSV_HEADER: &str = "sweep,point,method,T,Q,B,L_rb,L_ur,snr_db,trials,mean_nmse,median_nmse,\
mean_worst_cond,mean_est_seconds,seed,partition_hash";

/// Parses `key = value` lines into a map, rejecting unknown and repeated keys.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = parse_assignment(line).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("line {}: {msg}", lineno + 1)),
            other => other,
        })?;
        if map.insert(key.clone(), value).is_some() {
            return Err(Error::Config(format!("line {}: key `{key}` set twice", lineno + 1)));
        }
    }
    Ok(map)
}

/// Splits one `key=value` pair and checks the key is known.
pub fn parse_assignment(pair: &str) -> Result<(String, String)> {
    let (key, value) = pair
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("expected key=value, got {pair:?}")))?;
    let key = key.trim().to_string();
    if !CONFIG_KEYS.contains(&key.as_str()) {
        return Err(Error::Config(format!("unknown config key `{key}`")));
    }
    Ok((key, value.trim().to_string()))
}

struct Resolver {
    values: BTreeMap<String, String>,
}

impl Resolver {
    fn get<T: FromStr>(&self, key: &str, default: T, expected: &str) -> Result<T>
    where
        T: std::fmt::Debug,
    {
        match self.values.get(key) {
            Some(raw) => raw
                .parse()
                .map_err(|_| Error::Config(format!("key `{key}`: expected {expected}, got {raw:?}"))),
            None => {
                info!("config: {key} defaulted to {default:?}");
                Ok(default)
            }
        }
    }

    fn list<T: FromStr + std::fmt::Debug>(&self, key: &str, default: Vec<T>, expected: &str) -> Result<Vec<T>> {
        match self.values.get(key) {
            Some(raw) => raw
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("key `{key}`: expected {expected}, got {raw:?}")))
                })
                .collect(),
            None => {
                info!("config: {key} defaulted to {default:?}");
                Ok(default)
            }
        }
    }

    fn point(&self, key: &str, default: Point3<f64>) -> Result<Point3<f64>> {
        let v = self.list(key, vec![default.x, default.y, default.z], "three comma-separated numbers")?;
        match v.as_slice() {
            [x, y, z] => Ok(Point3::new(*x, *y, *z)),
            _ => Err(Error::Config(format!("key `{key}`: expected three comma-separated numbers"))),
        }
    }
}

/// Resolves a config from file text plus overrides, filling and logging
/// defaults, then validates it.
pub fn parse_config_str(text: &str, overrides: &[(String, String)]) -> Result<SimConfig> {
    let mut values = parse_pairs(text)?;
    for (key, value) in overrides {
        if !CONFIG_KEYS.contains(&key.as_str()) {
            return Err(Error::Config(format!("unknown config key `{key}`")));
        }
        values.insert(key.clone(), value.clone());
    }
    let r = Resolver { values };
    let n = r.get("n", 64usize, "a positive integer")?;
    let m = r.get("m", 256usize, "a positive integer")?;
    let mut cfg = SimConfig::new(n, m);
    cfg.q = r.list("q", cfg.q, "a list of positive integers")?;
    cfg.b = r.get("b", cfg.b, "a positive integer")?;
    cfg.pilots = r.list("pilots", cfg.pilots, "a list of positive integers")?;
    cfg.scatterers = r.list("scatterers", cfg.scatterers, "a list of positive integers")?;
    cfg.l_rb = r.get("l_rb", cfg.l_rb, "a positive integer")?;
    cfg.l_ur = r.get("l_ur", cfg.l_ur, "a positive integer")?;
    cfg.snr_db = r.get("snr_db", cfg.snr_db, "a number")?;
    cfg.trials = r.get("trials", cfg.trials, "a positive integer")?;
    cfg.seed = r.get("seed", cfg.seed, "an unsigned 64-bit integer")?;
    cfg.methods = r.list("methods", cfg.methods, "a list drawn from conv2tce, omp, noperm, greedy")?;
    cfg.f_hat_rel_error = r.get("f_hat_rel_error", cfg.f_hat_rel_error, "a number >= 0")?;
    cfg.omp_sparsity = match r.values.get("omp_sparsity").map(String::as_str) {
        None | Some("auto") => {
            info!("config: omp_sparsity defaulted to L_ur");
            None
        }
        Some(_) => Some(r.get("omp_sparsity", 0usize, "a positive integer or `auto`")?),
    };
    cfg.timing = r.get("timing", cfg.timing, "true or false")?;

    let g = &mut cfg.geometry;
    let (rows, cols) = planar_shape(m);
    g.bs_position = r.point("geometry.bs_position", g.bs_position)?;
    g.ris_position = r.point("geometry.ris_position", g.ris_position)?;
    g.user_region_center = r.point("geometry.user_center", g.user_region_center)?;
    g.user_region_radius = r.get("geometry.user_radius", g.user_region_radius, "a number >= 0")?;
    g.carrier_frequency = r.get("geometry.carrier_frequency", g.carrier_frequency, "a frequency in Hz")?;
    g.bs_array.spacing = r.get("geometry.bs_spacing", g.bs_array.spacing, "a spacing in wavelengths")?;
    g.ris_array.rows = r.get("geometry.ris_rows", rows, "a positive integer")?;
    g.ris_array.cols = r.get("geometry.ris_cols", cols, "a positive integer")?;
    g.ris_array.spacing = r.get("geometry.ris_spacing", g.ris_array.spacing, "a spacing in wavelengths")?;
    g.scatter_margin = r.get("geometry.scatter_margin", g.scatter_margin, "a distance in meters")?;
    g.guard_radius = r.get("geometry.guard_radius", g.guard_radius, "a distance in meters")?;
    g.ris_bs_los_k = r.get("geometry.ris_bs_los_k", g.ris_bs_los_k, "a K-factor >= 0")?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path, overrides: &[(String, String)]) -> Result<SimConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse_config_str(&text, overrides)
}

/// Scientific notation with six significant digits; `nan` and `inf` spelled
/// in lowercase.
pub fn fmt_sci(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:.5e}")
    }
}

pub fn to_csv(result: &SweepResult) -> String {
    let mut out = String::with_capacity(128 * (result.rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in &result.rows {
        let point = if r.point.contains(',') { format!("\"{}\"", r.point) } else { r.point.clone() };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.sweep,
            point,
            r.method,
            r.t,
            r.q,
            r.b,
            r.l_rb,
            r.l_ur,
            r.snr_db,
            r.trials,
            fmt_sci(r.mean_nmse),
            fmt_sci(r.median_nmse),
            fmt_sci(r.mean_worst_cond),
            fmt_sci(r.mean_est_seconds.unwrap_or(f64::NAN)),
            r.seed,
            r.partition_hash
        )
        .expect("writing to a String");
    }
    out
}

/// Writes through a temporary file in the target directory and renames it
/// into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.to_string()))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "ris-chanest", version, about = "RIS channel estimation Monte Carlo benchmark")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct Common {
    /// Config file of `key = value` lines.
    #[arg(short, long)]
    pub config: PathBuf,
    /// Config override, repeatable.
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, clap::Args)]
pub struct Output {
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(short, long, value_enum, default_value = "csv")]
    pub format: Format,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// NMSE versus total pilot budget.
    SweepPilots {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        output: Output,
    },
    /// NMSE versus scatterer count at fixed Q and B.
    SweepScatterers {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        output: Output,
    },
    /// NMSE for every (Q, T) pair.
    SweepGroups {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        output: Output,
    },
    /// Greedy partition and group condition numbers for one channel draw.
    Partition {
        #[command(flatten)]
        common: Common,
        /// Trial index selecting the channel draw.
        #[arg(long, default_value_t = 0)]
        trial: usize,
        /// Optional JSON report path.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Parse and validate a config without running anything.
    ValidateConfig {
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> Result<SimConfig> {
    let overrides = common.overrides.iter().map(|p| parse_assignment(p)).collect::<Result<Vec<_>>>()?;
    parse_config(&common.config, &overrides)
}

#[derive(Serialize)]
struct Metadata<'a> {
    tool: &'static str,
    version: &'static str,
    sweep: SweepKind,
    config: &'a SimConfig,
}

fn run_sweep(common: &Common, output: &Output, kind: SweepKind) -> Result<()> {
    let config = load(common)?;
    let sim = Simulator::new(config)?;
    let result = sim.run_sweep(kind)?;
    let body = match output.format {
        Format::Csv => to_csv(&result),
        Format::Json => serde_json::to_string_pretty(&result).map_err(|e| Error::Io(e.to_string()))? + "\n",
    };
    let meta = Metadata { tool: env!("CARGO_PKG_NAME"), version: env!("CARGO_PKG_VERSION"), sweep: kind, config: sim.config() };
    let meta = serde_json::to_string_pretty(&meta).map_err(|e| Error::Io(e.to_string()))? + "\n";
    let mut meta_path = output.output.clone().into_os_string();
    meta_path.push(".meta.json");
    write_atomic(Path::new(&meta_path), meta.as_bytes())?;
    write_atomic(&output.output, body.as_bytes())?;

    let mut points: Vec<&str> = Vec::new();
    for r in &result.rows {
        if !points.contains(&r.point.as_str()) {
            points.push(&r.point);
        }
    }
    for p in points {
        let summary: Vec<String> = result
            .rows
            .iter()
            .filter(|r| r.point == p)
            .map(|r| format!("{} {}", r.method, fmt_sci(r.mean_nmse)))
            .collect();
        println!("{kind} {p}: {}", summary.join(", "));
    }
    Ok(())
}

fn run_partition(common: &Common, trial: usize, output: Option<&Path>) -> Result<()> {
    let config = load(common)?;
    let sim = Simulator::new(config)?;
    let cfg = sim.config();
    let (q, b) = (cfg.q[0], cfg.b);
    let point = sim.point(SweepKind::Pilots, q * b, q, cfg.l_rb, cfg.l_ur)?;
    let report = sim.partition_report(&point, trial)?;
    let worst = |v: &[f64]| v.iter().copied().fold(1.0f64, f64::max);
    println!("greedy partition {} (Q={q}, B={b}, trial {trial})", report.greedy_hash);
    for (i, g) in report.greedy.groups().iter().enumerate() {
        println!("  group {i:>3}: cond {} members {:?}", fmt_sci(report.greedy_conditions[i]), g);
    }
    println!(
        "worst condition: greedy {} contiguous {}; mean coherence {:.4}",
        fmt_sci(worst(&report.greedy_conditions)),
        fmt_sci(worst(&report.contiguous_conditions)),
        report.mean_coherence
    );
    if let Some(path) = output {
        let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Io(e.to_string()))? + "\n";
        write_atomic(path, json.as_bytes())?;
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::SweepPilots { common, output } => run_sweep(common, output, SweepKind::Pilots),
        Command::SweepScatterers { common, output } => run_sweep(common, output, SweepKind::Scatterers),
        Command::SweepGroups { common, output } => run_sweep(common, output, SweepKind::Groups),
        Command::Partition { common, trial, output } => run_partition(common, *trial, output.as_deref()),
        Command::ValidateConfig { common } => {
            let cfg = load(common)?;
            println!(
                "config ok: n={} m={} q={:?} b={} trials={} methods={}",
                cfg.n,
                cfg.m,
                cfg.q,
                cfg.b,
                cfg.trials,
                cfg.methods.iter().map(|m| m.name()).collect::<Vec<_>>().join(",")
            );
            Ok(())
        }
    }
}

/// 1 for config problems, 2 for everything else.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 1,
        _ => 2,
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
