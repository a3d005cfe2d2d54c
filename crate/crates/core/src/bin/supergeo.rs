use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use supergeo::checks::{run_checks, RunOptions};
use supergeo::geodesic::{correspondence, integrate_super, CurveSample, InitialCondition};
use supergeo::reduction::{reduce_connection, reduce_metric, ReducedConnection};
use supergeo::sampling::sample_count;
use supergeo::scenario::{load_scenario, random_scenario, RandomOptions, Scenario};
use supergeo::superfield::FiberAffine;

#[derive(Parser)]
#[command(name = "supergeo", version, about = "Geodesics and connections on split supermanifolds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario's check suites and print a JSON report.
    Check {
        scenario: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Sample count; overrides the scenario and SUPERGEO_SAMPLES.
        #[arg(long)]
        samples: Option<usize>,
        /// Include per-suite wall time in the report.
        #[arg(long)]
        timings: bool,
    },
    /// Write the reduced connection and metric on E as JSON.
    Reduce {
        scenario: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Integrate the super geodesic of one initial condition to CSV.
    Geodesic {
        scenario: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Index of the initial condition to integrate.
        #[arg(long, default_value_t = 0)]
        ic: usize,
    },
    /// Integrate both sides of the correspondence and write the deviation as CSV.
    Correspond {
        scenario: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Index of the initial condition to integrate.
        #[arg(long, default_value_t = 0)]
        ic: usize,
    },
    /// Generate a random scenario.
    Random {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        q: usize,
        #[arg(long, default_value_t = 0)]
        parity: u8,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

enum Failure {
    Input(String),
    Check,
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Input(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check) => ExitCode::from(1),
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn emit(output: Option<&Path>, text: &str) -> Result<(), Failure> {
    match output {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::Input(format!("{}: {e}", p.display()))),
        None => match std::io::stdout().lock().write_all(text.as_bytes()) {
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Failure::Input(format!("stdout: {e}"))),
            _ => Ok(()),
        },
    }
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Check { scenario, output, samples, timings } => {
            let s = load_scenario(&scenario)?;
            let report = run_checks(&s, RunOptions { samples, timings });
            emit(output.as_deref(), &(report.to_json() + "\n"))?;
            if report.passed {
                Ok(())
            } else {
                Err(Failure::Check)
            }
        }
        Command::Reduce { scenario, output } => {
            let s = load_scenario(&scenario)?;
            let text = serde_json::to_string_pretty(&reduce_json(&s)?)?;
            emit(output.as_deref(), &(text + "\n"))
        }
        Command::Geodesic { scenario, output, ic } => {
            let s = load_scenario(&scenario)?;
            let conn = s.connection();
            let ic = pick(&s, ic)?;
            let curve = integrate_super(&conn, &s.chart_box, ic, s.integration.t_end, s.integration.dt)?;
            if curve.truncated {
                eprintln!("warning: curve left the chart box at t = {}", curve.times.last().unwrap_or(&0.0));
            }
            let mut csv = header(&s, false);
            write_rows(&mut csv, &curve, None);
            emit(output.as_deref(), &csv)
        }
        Command::Correspond { scenario, output, ic } => {
            let s = load_scenario(&scenario)?;
            let conn = s.connection();
            let rc = reduce_connection(&conn);
            let ic = pick(&s, ic)?;
            let c = correspondence(&conn, &rc, &s.chart_box, ic, s.integration.t_end, s.integration.dt)?;
            let mut csv = header(&s, true);
            write_rows(&mut csv, &c.super_curve, Some((&c.classical_curve, &c.deviation)));
            emit(output.as_deref(), &csv)
        }
        Command::Random { n, q, parity, seed, output } => {
            let s = random_scenario(n, q, parity, seed, &RandomOptions::default())?;
            emit(output.as_deref(), &(s.to_json() + "\n"))
        }
    }
}

fn pick(s: &Scenario, k: usize) -> Result<&InitialCondition, Failure> {
    s.initial_conditions.get(k).ok_or_else(|| {
        Failure::Input(format!("scenario has {} initial conditions, asked for index {k}", s.initial_conditions.len()))
    })
}

fn header(s: &Scenario, with_classical: bool) -> String {
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=s.chart.n).map(|i| format!("f_{i}")));
    cols.extend((1..=s.chart.q).map(|a| format!("h_{a}")));
    if with_classical {
        cols.extend((1..=s.chart.n + s.chart.q).map(|r| format!("y_{r}")));
        cols.push("deviation".into());
    }
    cols.join(",") + "\n"
}

fn write_rows(out: &mut String, curve: &CurveSample, classical: Option<(&CurveSample, &[f64])>) {
    for k in 0..curve.len() {
        let _ = write!(out, "{}", curve.times[k]);
        for v in curve.position(k) {
            let _ = write!(out, ",{v:e}");
        }
        if let Some((c, dev)) = classical {
            for v in c.position(k) {
                let _ = write!(out, ",{v:e}");
            }
            let _ = write!(out, ",{:e}", dev[k]);
        }
        out.push('\n');
    }
}

fn affine_text(a: &FiberAffine<supergeo::expr::ScalarExpr>) -> Value {
    json!({
        "constant": a.constant.to_string(),
        "linear": a.linear.iter().map(|e| e.to_string()).collect::<Vec<_>>(),
    })
}

fn nest<T: Clone>(flat: &[T], dim: usize, depth: usize) -> Value
where
    Value: From<T>,
{
    if depth == 1 {
        return Value::Array(flat.iter().cloned().map(Value::from).collect());
    }
    let stride = dim.pow(depth as u32 - 1);
    Value::Array(flat.chunks(stride).map(|c| nest(c, dim, depth - 1)).collect())
}

fn reduce_json(s: &Scenario) -> Result<Value, Failure> {
    let dim = s.chart.n + s.chart.q;
    let rc = reduce_connection(&s.connection());
    let mut out = json!({
        "chart": { "name": s.chart.name, "n": s.chart.n, "q": s.chart.q },
    });
    let gamma = match &rc {
        ReducedConnection::Symbolic { table, .. } => {
            json!({ "representation": "symbolic", "table": nest(&table.iter().map(affine_text).collect::<Vec<_>>(), dim, 3) })
        }
        _ => {
            let mut points = Vec::new();
            for x in s.chart_box.halton(sample_count(), 0.05) {
                let t = rc.symbols_at(&x)?;
                let mut flat = Vec::with_capacity(dim * dim * dim);
                for r in 0..dim {
                    for a in 0..dim {
                        for b in 0..dim {
                            flat.push(serde_json::to_value(t.get(r, a, b))?);
                        }
                    }
                }
                points.push(json!({ "x": x, "table": nest(&flat, dim, 3) }));
            }
            json!({ "representation": "sampled", "points": points })
        }
    };
    out["GammaTE"] = gamma;
    if let Some(g) = s.metric() {
        let rm = reduce_metric(g);
        let flat: Vec<Value> = rm.table().iter().map(affine_text).collect();
        out["gTE"] = json!({ "parity_origin": rm.parity_origin(), "table": nest(&flat, dim, 2) });
    }
    Ok(out)
}
