//! Command-line front end: benchmark-model demos, annealing experiment grids,
//! exact ground-state oracles, power-law fits, and trajectory dumps.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 run halted on a
//! criticality event (expected for super-critical sweeps; the event record is
//! printed).

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::Vector3;
use spinsta::anneal::{
    anneal_once, annealing_integrator, failure_statistics, fit_gamma, initial_state,
    ExperimentConfig,
};
use spinsta::cd::{integrate, IntegratorConfig};
use spinsta::io;
use spinsta::models::{
    annealing_hamiltonian, lmg_hamiltonian, rfim_instance_with_boundary, transverse_fields,
    BoundaryKind, FieldKind, IsingInstance, LmgParams, Schedule,
};
use spinsta::oracle::{ground_state_bruteforce, ground_state_maxflow, GroundStateResult};
use spinsta::rng::mix;
use spinsta::spin::SpinConfig;
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_CONFIG: u8 = 2;
const EXIT_CRITICALITY: u8 = 3;

#[derive(Parser)]
#[command(
    name = "spinsta",
    version,
    about = "Counter-diabatic classical spin dynamics and annealing experiments"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum FieldKindArg {
    /// h_i^x = 1 for every spin.
    Uniform,
    /// h_i^x i.i.d. uniform on [1, 2).
    Random,
}

impl From<FieldKindArg> for FieldKind {
    fn from(v: FieldKindArg) -> Self {
        match v {
            FieldKindArg::Uniform => FieldKind::Uniform,
            FieldKindArg::Random => FieldKind::RandomIid,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BoundaryArg {
    Open,
    Periodic,
}

impl From<BoundaryArg> for BoundaryKind {
    fn from(v: BoundaryArg) -> Self {
        match v {
            BoundaryArg::Open => BoundaryKind::Open,
            BoundaryArg::Periodic => BoundaryKind::Periodic,
        }
    }
}

/// Instance source shared by oracle, brute, and trace: either a JSON file or
/// a generated realization.
#[derive(Args)]
struct InstanceSource {
    /// Instance JSON file (keys L, seed, bonds, h_z).
    #[arg(long)]
    instance: Option<PathBuf>,
    /// Lattice side for a generated instance.
    #[arg(short = 'L', long)]
    l: Option<usize>,
    /// Master seed (falls back to SPINSTA_SEED, then 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Boundary convention for a generated instance.
    #[arg(long, value_enum, default_value = "open")]
    boundary: BoundaryArg,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sweep the fully connected benchmark model and dump t vs mean m_z.
    LmgDemo {
        /// Transverse-field amplitude ratio h0/J; 5/4, 1/4, and 3/4 reproduce
        /// the three reference regimes.
        #[arg(long, default_value_t = 1.25)]
        h0_over_j: f64,
        /// Coupling J.
        #[arg(short = 'J', long, default_value_t = 1.0)]
        coupling: f64,
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
        #[arg(short = 'N', long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        /// Keep every k-th step in the CSV.
        #[arg(long, default_value_t = 1)]
        stride: usize,
        /// CSV output path (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the (L, M, instances) annealing grid and write results/summary CSVs.
    Anneal {
        #[arg(short = 'L', long)]
        l: usize,
        /// Repetition checkpoints, e.g. "1,2,4,8".
        #[arg(short = 'M', long, default_value = "1")]
        m: String,
        #[arg(long, default_value_t = 200)]
        instances: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
        #[arg(long, default_value_t = 2.5e-3)]
        dt: f64,
        #[arg(long, value_enum, default_value = "uniform")]
        field_kind: FieldKindArg,
        #[arg(long, value_enum, default_value = "periodic")]
        boundary: BoundaryArg,
        /// Worker threads (defaults to all cores).
        #[arg(long)]
        threads: Option<usize>,
        /// Output prefix; writes <out>_results.csv and <out>_summary.csv.
        /// Summary goes to stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact ground state via max-flow/min-cut; prints JSON.
    Oracle {
        #[command(flatten)]
        source: InstanceSource,
    },
    /// Exact ground state by exhaustive enumeration (N <= 24); prints JSON.
    Brute {
        #[command(flatten)]
        source: InstanceSource,
    },
    /// Fit P_f ~ M^(-gamma) to a summary CSV; prints JSON.
    FitGamma {
        /// Summary CSV (header L,M,n_instances,P_f,stderr).
        summary: PathBuf,
    },
    /// Anneal one instance and dump the full spin trajectory as CSV.
    Trace {
        #[command(flatten)]
        source: InstanceSource,
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
        #[arg(long, default_value_t = 2.5e-3)]
        dt: f64,
        #[arg(long, value_enum, default_value = "random")]
        field_kind: FieldKindArg,
        /// Keep every k-th step in the CSV.
        #[arg(long, default_value_t = 10)]
        stride: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn master_seed(flag: Option<u64>) -> Result<u64, String> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("SPINSTA_SEED") {
        Ok(v) => v
            .parse::<u64>()
            .map_err(|e| format!("SPINSTA_SEED={v:?} is not a valid u64: {e}")),
        Err(_) => Ok(0),
    }
}

fn load_instance(source: &InstanceSource) -> Result<IsingInstance, String> {
    match (&source.instance, source.l) {
        (Some(path), _) => io::read_instance(path).map_err(|e| e.to_string()),
        (None, Some(l)) => {
            let seed = master_seed(source.seed)?;
            Ok(rfim_instance_with_boundary(
                l,
                mix(mix(seed, l as u64), 0),
                source.boundary.into(),
            ))
        }
        (None, None) => Err("provide --instance FILE or -L to generate one".into()),
    }
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), String> {
    match out {
        Some(path) => io::write_text(path, text).map_err(|e| e.to_string()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn print_ground_state(r: &GroundStateResult) {
    println!("{}", serde_json::to_string_pretty(r).expect("serializable"));
}

fn run(cli: Cli) -> Result<u8, String> {
    match cli.cmd {
        Cmd::LmgDemo {
            h0_over_j,
            coupling,
            tau,
            n,
            dt,
            stride,
            out,
        } => {
            let ham = lmg_hamiltonian(LmgParams {
                coupling,
                h0: h0_over_j * coupling,
                tau,
                n,
            })
            .map_err(|e| e.to_string())?;
            let cfg = IntegratorConfig {
                dt,
                record_stride: stride,
                ..Default::default()
            };
            cfg.validate()?;
            let state0 =
                SpinConfig::uniform(n, Vector3::new(0.0, 0.0, 1.0)).expect("unit vector");
            let rec = integrate(&ham, &state0, 0.0, tau, &cfg);
            emit(&out, &io::magnetization_csv(&rec))?;
            eprintln!(
                "final t = {}, mean m_z = {}",
                io::fmt_f64(rec.final_time),
                io::fmt_f64(rec.final_state.mean_mz())
            );
            if let Some(ev) = rec.criticality_event {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&ev).expect("serializable")
                );
                return Ok(EXIT_CRITICALITY);
            }
            Ok(0)
        }
        Cmd::Anneal {
            l,
            m,
            instances,
            seed,
            tau,
            dt,
            field_kind,
            boundary,
            threads,
            out,
        } => {
            if let Some(t) = threads {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(t)
                    .build_global()
                    .map_err(|e| format!("--threads: {e}"))?;
            }
            let m_values: Vec<usize> = m
                .split(',')
                .map(|v| v.trim().parse::<usize>())
                .collect::<Result<_, _>>()
                .map_err(|e| format!("-M {m:?}: {e}"))?;
            let config = ExperimentConfig {
                l,
                m_values,
                n_instances: instances,
                seed: master_seed(seed)?,
                tau,
                dt,
                field_kind: field_kind.into(),
                boundary: boundary.into(),
            };
            config.validate().map_err(|e| e.to_string())?;
            let (stats, sweeps) = failure_statistics(&config).map_err(|e| e.to_string())?;
            let summary = io::summary_csv(&stats);
            match &out {
                Some(prefix) => {
                    let base = prefix.display();
                    io::write_text(
                        &PathBuf::from(format!("{base}_results.csv")),
                        &io::results_csv(l, &config.m_values, &sweeps),
                    )
                    .map_err(|e| e.to_string())?;
                    io::write_text(&PathBuf::from(format!("{base}_summary.csv")), &summary)
                        .map_err(|e| e.to_string())?;
                    print!("{summary}");
                }
                None => print!("{summary}"),
            }
            Ok(0)
        }
        Cmd::Oracle { source } => {
            let instance = load_instance(&source)?;
            let r = ground_state_maxflow(&instance).map_err(|e| e.to_string())?;
            print_ground_state(&r);
            Ok(0)
        }
        Cmd::Brute { source } => {
            let instance = load_instance(&source)?;
            let r = ground_state_bruteforce(&instance).map_err(|e| e.to_string())?;
            print_ground_state(&r);
            Ok(0)
        }
        Cmd::FitGamma { summary } => {
            let text =
                std::fs::read_to_string(&summary).map_err(|e| format!("{summary:?}: {e}"))?;
            let stats = io::parse_summary_csv(&summary, &text).map_err(|e| e.to_string())?;
            let fit = fit_gamma(&stats).map_err(|e| e.to_string())?;
            println!(
                "{}",
                serde_json::to_string_pretty(&fit).expect("serializable")
            );
            Ok(0)
        }
        Cmd::Trace {
            source,
            tau,
            dt,
            field_kind,
            stride,
            out,
        } => {
            let instance = load_instance(&source)?;
            let seed = master_seed(source.seed)?;
            let fields = transverse_fields(
                instance.spin_count(),
                field_kind.into(),
                mix(seed, 0x7472_6163_65),
            );
            let schedule = Schedule::new(tau).map_err(|e| e.to_string())?;
            let ham = annealing_hamiltonian(instance, fields, schedule)
                .map_err(|e| e.to_string())?;
            let cfg = IntegratorConfig {
                record_stride: stride,
                ..annealing_integrator(dt)
            };
            cfg.validate()?;
            let state0 = initial_state(&ham.fields.h_x).map_err(|e| e.to_string())?;
            let rec = integrate(&ham, &state0, 0.0, tau, &cfg);
            emit(&out, &io::trajectory_csv(&rec))?;
            // Echo the rounded result so the dump is self-describing.
            let report = anneal_once(&ham, &cfg).map_err(|e| e.to_string())?;
            eprintln!(
                "E_est = {}, E_continuous = {}",
                io::fmt_f64(report.e_est),
                io::fmt_f64(report.e_continuous)
            );
            if let Some(ev) = rec.criticality_event {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&ev).expect("serializable")
                );
                return Ok(EXIT_CRITICALITY);
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}
