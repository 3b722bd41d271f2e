//! The `dskm` command line: build, generate, verify, solve and stats.
//!
//! Exit codes: 0 success, 1 program error, 2 usage error, 3 algorithmic FAIL,
//! 4 a verification that did not pass.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::coreset::Coreset;
use crate::driver::Driver;
use crate::error::{domain, Error, Result};
use crate::generate::{churn, clustered, uniform, ChurnSpec, ClusteredSpec};
use crate::geometry::{ClusteringInstance, WeightedPoint};
use crate::offline::{kmeans_cost, kmeanspp_lloyd, verify_coreset, Family, FAMILIES};
use crate::params::Scaling;
use crate::stream::StreamFile;

pub const EXIT_ERROR: i32 = 1;
pub const EXIT_FAIL: i32 = 3;
pub const EXIT_NOT_VERIFIED: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "dskm", version, about = "k-means coresets over insert/delete point streams")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build a coreset from a stream in one pass.
    Build {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        stream: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic stream.
    Generate(GenerateArgs),
    /// Compare a coreset against the live set of a stream.
    Verify {
        #[arg(long)]
        stream: PathBuf,
        #[arg(long)]
        coreset: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0.3)]
        epsilon: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated `family:count` pairs, or `all:count`.
        #[arg(long, default_value = "all:40")]
        families: String,
    },
    /// Run k-means++ with Lloyd refinement on a coreset.
    Solve {
        #[arg(long)]
        coreset: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        restarts: usize,
        /// Also report the centers' cost on this stream's live set.
        #[arg(long)]
        stream: Option<PathBuf>,
    },
    /// Per-guess outcomes and memory for a stream.
    Stats {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        stream: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = 0.3)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Multiplier on the capacity constants of the chosen scaling.
    #[arg(long, default_value_t = 1.0)]
    pub kappa: f64,
    /// `desk`, `paper`, or a JSON file of scaling fields.
    #[arg(long, default_value = "desk")]
    pub scaling: String,
    #[arg(long, env = "DSKM_WORKERS", default_value_t = 1)]
    pub workers: usize,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(value_enum)]
    pub kind: Kind,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    #[arg(long = "levels", short = 'L', default_value_t = 6)]
    pub levels: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Operations (clustered) or insertions (uniform).
    #[arg(long, default_value_t = 2000)]
    pub ops: usize,
    #[arg(long, default_value_t = 3)]
    pub blobs: usize,
    #[arg(long, default_value_t = 6.0)]
    pub sigma: f64,
    /// Fraction of operations that delete a live point.
    #[arg(long, default_value_t = 0.0)]
    pub deletions: f64,
    #[arg(long, default_value_t = 4)]
    pub waves: usize,
    #[arg(long, default_value_t = 100)]
    pub wave_size: usize,
    #[arg(long, default_value_t = 0)]
    pub residual: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Clustered,
    Uniform,
    Churn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Json,
}

impl RunArgs {
    fn instance(&self, stream: &StreamFile) -> Result<ClusteringInstance> {
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return domain(format!("epsilon {} outside (0, 0.5)", self.epsilon));
        }
        if !(self.kappa > 0.0 && self.kappa <= 1.0) {
            return domain(format!("kappa {} outside (0, 1]", self.kappa));
        }
        ClusteringInstance::new(stream.d, stream.levels, self.k, self.epsilon)
    }

    fn scaling(&self) -> Result<Scaling> {
        let base = match self.scaling.as_str() {
            "desk" => Scaling::desk(),
            "paper" => Scaling::default(),
            path => {
                let text = std::fs::read_to_string(path)?;
                serde_json::from_str(&text).map_err(|e| Error::Domain(format!("scaling file {path}: {e}")))?
            }
        };
        let s = base.scaled(self.kappa);
        s.validate()?;
        Ok(s)
    }

    fn driver(&self, stream: &StreamFile) -> Result<Driver> {
        let inst = self.instance(stream)?;
        let mut driver = Driver::new(&inst, &self.scaling()?, self.seed)?;
        driver.update_batch(&stream.ops, self.workers);
        Ok(driver)
    }
}

pub fn parse_families(spec: &str) -> Result<Vec<(Family, usize)>> {
    let mut out = Vec::new();
    for part in spec.split(',').filter(|s| !s.is_empty()) {
        let (name, count) = part.split_once(':').unwrap_or((part, "40"));
        let count: usize = count.parse().map_err(|_| Error::Domain(format!("bad family count in {part:?}")))?;
        if name == "all" {
            out.extend(FAMILIES.iter().map(|&f| (f, count)));
        } else {
            out.push((Family::parse(name)?, count));
        }
    }
    if out.is_empty() {
        return domain("no verification families given");
    }
    Ok(out)
}

fn load_coreset(path: &Path) -> Result<(usize, u32, Coreset)> {
    Coreset::read_from(BufReader::new(File::open(path)?))
}

#[derive(Serialize)]
struct StatsLine<'a> {
    row: &'a str,
    u: Option<usize>,
    guess: Option<f64>,
    status: &'a str,
    samples: Option<usize>,
    nominal_buckets: f64,
    resident_bytes: usize,
}

fn json_line<W: Write, T: Serialize>(out: &mut W, v: &T) -> Result<()> {
    let s = serde_json::to_string(v).map_err(|e| Error::Domain(e.to_string()))?;
    writeln!(out, "{s}")?;
    Ok(())
}

/// Runs one command, writing results to `out` and diagnostics to `err`.
pub fn execute<W: Write, E: Write>(cli: Cli, out: &mut W, err: &mut E) -> Result<i32> {
    match cli.command {
        Command::Build { run, stream, out: path } => {
            let stream = StreamFile::load(&stream)?;
            let driver = run.driver(&stream)?;
            match driver.query() {
                Ok(res) => {
                    let mut w = BufWriter::new(File::create(&path)?);
                    res.coreset.write_to(driver.instance(), &mut w)?;
                    w.flush()?;
                    let how = match res.selected {
                        None => "shortcut (exact live set)".to_string(),
                        Some(u) => format!("guess u={} o={}", u + 1, driver.params().guesses[u]),
                    };
                    writeln!(
                        out,
                        "wrote {} entries ({} draws) via {how} to {}",
                        res.coreset.merged().len(),
                        res.coreset.meta.samples,
                        path.display()
                    )?;
                    Ok(0)
                }
                Err(fail) => {
                    writeln!(err, "{fail}")?;
                    Ok(EXIT_FAIL)
                }
            }
        }
        Command::Generate(g) => {
            let stream = match g.kind {
                Kind::Clustered => clustered(
                    &ClusteredSpec {
                        d: g.d,
                        levels: g.levels,
                        ops: g.ops,
                        blobs: g.blobs,
                        sigma: g.sigma,
                        deletions: g.deletions,
                    },
                    g.seed,
                )?,
                Kind::Uniform => uniform(g.d, g.levels, g.ops, g.seed)?,
                Kind::Churn => churn(
                    &ChurnSpec { d: g.d, levels: g.levels, waves: g.waves, wave_size: g.wave_size, residual: g.residual },
                    g.seed,
                )?,
            };
            stream.save(&g.out)?;
            writeln!(out, "wrote {} operations ({} live) to {}", stream.ops.len(), stream.live_points().len(), g.out.display())?;
            Ok(0)
        }
        Command::Verify { stream, coreset, k, epsilon, seed, families } => {
            let stream = StreamFile::load(&stream)?;
            let (d, l, coreset) = load_coreset(&coreset)?;
            if (d, l) != (stream.d, stream.levels) {
                return domain(format!("coreset has d={d} L={l}, stream has d={} L={}", stream.d, stream.levels));
            }
            let q = stream.live_points();
            let report = verify_coreset(&q, &coreset, k, 1u64 << l, epsilon, &parse_families(&families)?, seed)?;
            json_line(out, &report)?;
            Ok(if report.pass { 0 } else { EXIT_NOT_VERIFIED })
        }
        Command::Solve { coreset, k, seed, restarts, stream } => {
            let (d, l, coreset) = load_coreset(&coreset)?;
            let sol = kmeanspp_lloyd(&coreset.entries, k, restarts, seed)?;
            #[derive(Serialize)]
            struct Solved<'a> {
                centers: &'a [Vec<f64>],
                coreset_cost: f64,
                live_cost: Option<f64>,
            }
            let live_cost = match stream {
                None => None,
                Some(path) => {
                    let s = StreamFile::load(&path)?;
                    if (d, l) != (s.d, s.levels) {
                        return domain(format!("coreset has d={d} L={l}, stream has d={} L={}", s.d, s.levels));
                    }
                    let pts: Vec<(Vec<f64>, f64)> = s
                        .live_points()
                        .iter()
                        .map(|p| WeightedPoint { point: p.clone(), weight: 1.0 })
                        .map(|e| (crate::geometry::to_real(&e.point), e.weight))
                        .collect();
                    Some(kmeans_cost(&pts, &sol.centers))
                }
            };
            json_line(out, &Solved { centers: &sol.centers, coreset_cost: sol.cost, live_cost })?;
            Ok(0)
        }
        Command::Stats { run, stream, format } => {
            let stream = StreamFile::load(&stream)?;
            let driver = run.driver(&stream)?;
            let shortcut_status = match driver.shortcut_points() {
                Ok(p) => format!("ok ({} points)", p.len()),
                Err(e) => e.to_string(),
            };
            let guesses = driver.query_all();
            let mut rows = vec![StatsLine {
                row: "shortcut",
                u: None,
                guess: None,
                status: &shortcut_status,
                samples: None,
                nominal_buckets: driver.shortcut().nominal_buckets() as f64,
                resident_bytes: driver.shortcut().resident_bytes(),
            }];
            rows.extend(guesses.iter().map(|g| StatsLine {
                row: "guess",
                u: Some(g.u),
                guess: Some(g.guess),
                status: &g.status,
                samples: g.samples,
                nominal_buckets: g.nominal_buckets,
                resident_bytes: g.resident_bytes,
            }));
            let total = StatsLine {
                row: "total",
                u: None,
                guess: None,
                status: "",
                samples: None,
                nominal_buckets: driver.nominal_buckets(),
                resident_bytes: driver.resident_bytes(),
            };
            match format {
                Format::Json => {
                    for r in rows.iter().chain([&total]) {
                        json_line(out, r)?;
                    }
                }
                Format::Table => {
                    writeln!(out, "{:<9} {:>3} {:>12} {:<22} {:>8} {:>16} {:>14}", "row", "u", "guess", "status", "m", "nominal buckets", "resident bytes")?;
                    for r in rows.iter().chain([&total]) {
                        let opt = |v: Option<String>| v.unwrap_or_else(|| "-".into());
                        writeln!(
                            out,
                            "{:<9} {:>3} {:>12} {:<22} {:>8} {:>16.0} {:>14}",
                            r.row,
                            opt(r.u.map(|u| u.to_string())),
                            opt(r.guess.map(|g| format!("{g:.0}"))),
                            r.status,
                            opt(r.samples.map(|m| m.to_string())),
                            r.nominal_buckets,
                            r.resident_bytes
                        )?;
                    }
                }
            }
            Ok(0)
        }
    }
}

/// Process entry point: parses `std::env::args` and returns the exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    match execute(cli, &mut stdout.lock(), &mut stderr.lock()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}
