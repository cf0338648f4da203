//! Command-line front end for the benchmark harness.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::engine::{EngineConfig, TraceRecord};
use crate::error::Result;
use crate::proposal::ProposalKind;

use super::metrics::mae;
use super::problems::{SyntheticProblem, PROBLEM_NAMES};
use super::{mc_baseline_estimate, median_iqr, run_problem, BenchOptions, RunOutcome};

pub const CSV_HEADER: &str = "iter,evals,overhead_ms,Ez,VarZ,mae,kl";

#[derive(Parser, Debug)]
#[command(name = "basq", version, about = "Batch Bayesian quadrature benchmarks")]
pub struct Cli {
    /// List the registered problems.
    #[arg(long)]
    pub list: bool,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run the engine on a synthetic problem.
    Run(RunArgs),
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// List the registered problems and exit.
    #[arg(long)]
    pub list: bool,
    #[arg(long, value_parser = PROBLEM_NAMES, required_unless_present = "list")]
    pub problem: Option<String>,
    /// Dimension (gaussmix only).
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long, default_value_t = 100)]
    pub batch: usize,
    /// Likelihood evaluations after initialization.
    #[arg(long, default_value_t = 600)]
    pub budget: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of seeds, starting at --seed.
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0.5)]
    pub r: f64,
    #[arg(long, value_parser = parse_kind, default_value = "ivr")]
    pub proposal: ProposalKind,
    /// Also run a baseline with the same budget.
    #[arg(long, value_parser = ["mc"])]
    pub baseline: Option<String>,
    /// CSV trace path; a JSON summary is written next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Checkpoint file, resumed from when present.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Recombination candidates per iteration.
    #[arg(long)]
    pub n_rec: Option<usize>,
    /// Nyström landmarks per iteration.
    #[arg(long)]
    pub n_nys: Option<usize>,
    /// SMC candidates per accepted proposal sample.
    #[arg(long)]
    pub supersample: Option<usize>,
    /// Start from the full-size sampling defaults instead of the desk profile.
    #[arg(long)]
    pub full_scale: bool,
    /// Enforce the residual-diagonal constraint during recombination.
    #[arg(long)]
    pub proper: bool,
    /// Skip the KL column.
    #[arg(long)]
    pub no_kl: bool,
}

fn parse_kind(s: &str) -> std::result::Result<ProposalKind, String> {
    s.parse().map_err(|e: crate::error::BasqError| e.to_string())
}

impl RunArgs {
    pub fn engine_config(&self, seed: u64) -> EngineConfig {
        let base = if self.full_scale { EngineConfig::default() } else { EngineConfig::desk() };
        EngineConfig {
            batch_size: self.batch,
            budget: self.budget,
            seed,
            r: self.r,
            proposal: self.proposal,
            proper: self.proper,
            n_rec: self.n_rec.unwrap_or(base.n_rec),
            n_nys: self.n_nys.unwrap_or(base.n_nys.max(2 * self.batch)),
            supersample_ratio: self.supersample.unwrap_or(base.supersample_ratio),
            ..base
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_trace_csv(path: &Path, trace: &[TraceRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{CSV_HEADER}")?;
    for t in trace {
        writeln!(f, "{},{},{},{},{},{},{}", t.iteration, t.evals, t.overhead_ms, t.ez, t.var_z, fmt_opt(t.mae), fmt_opt(t.kl))?;
    }
    f.flush()?;
    Ok(())
}

/// `base` itself for a single run, otherwise `stem_seed{S}.ext`.
fn per_seed_path(base: &Path, seed: u64, repeats: usize, tag: &str) -> PathBuf {
    if repeats == 1 && tag.is_empty() {
        return base.to_path_buf();
    }
    let stem = base.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = base.extension().map(|e| format!(".{}", e.to_string_lossy())).unwrap_or_default();
    let seed_part = if repeats == 1 { String::new() } else { format!("_seed{seed}") };
    base.with_file_name(format!("{stem}{tag}{seed_part}{ext}"))
}

fn list_problems() {
    for name in PROBLEM_NAMES {
        let p = SyntheticProblem::by_name(name, None, 0).expect("registered problem");
        println!("{name}\tdim={}\tZ={}", p.dim, p.z_true.map_or("unknown".into(), |z| z.to_string()));
    }
}

pub fn run_command(args: &RunArgs) -> Result<serde_json::Value> {
    let name = args.problem.as_deref().expect("clap enforces --problem");
    let mut outcomes: Vec<RunOutcome> = Vec::new();
    let mut mc_maes = Vec::new();
    for k in 0..args.repeats.max(1) {
        let seed = args.seed + k as u64;
        let problem = SyntheticProblem::by_name(name, args.dim, seed)?;
        let opts = BenchOptions { kl: !args.no_kl, checkpoint: args.checkpoint.as_ref().map(|c| per_seed_path(c, seed, args.repeats, "")) };
        let out = run_problem(&problem, args.engine_config(seed), &opts)?;
        println!(
            "{name} seed={seed}: evals={} Ez={} VarZ={} mae={} kl={}",
            out.trace.last().map_or(0, |t| t.evals),
            out.ez,
            out.var_z,
            fmt_opt(out.mae),
            fmt_opt(out.kl)
        );
        if let Some(path) = &args.out {
            write_trace_csv(&per_seed_path(path, seed, args.repeats, ""), &out.trace)?;
        }
        if args.baseline.is_some() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let est = mc_baseline_estimate(&problem, args.budget, &mut rng);
            if let (Some(z), Some(last)) = (problem.z_true, est.last()) {
                mc_maes.push(mae(*last, z));
                println!("{name} seed={seed}: mc Ez={last} mae={}", mae(*last, z));
            }
            if let Some(path) = &args.out {
                let mut f = std::io::BufWriter::new(std::fs::File::create(per_seed_path(path, seed, args.repeats, "_mc"))?);
                writeln!(f, "evals,Ez,mae")?;
                for (i, e) in est.iter().enumerate() {
                    writeln!(f, "{},{},{}", i + 1, e, fmt_opt(problem.z_true.map(|z| mae(*e, z))))?;
                }
                f.flush()?;
            }
        }
        outcomes.push(out);
    }
    let maes: Vec<f64> = outcomes.iter().filter_map(|o| o.mae).collect();
    let kls: Vec<f64> = outcomes.iter().filter_map(|o| o.kl).collect();
    let stat = |v: &[f64]| median_iqr(v).map(|(m, i)| json!({ "median": m, "iqr": i }));
    let summary = json!({
        "problem": name,
        "seeds": outcomes.iter().map(|o| o.seed).collect::<Vec<_>>(),
        "final_ez": outcomes.iter().map(|o| o.ez).collect::<Vec<_>>(),
        "final_mae": stat(&maes),
        "final_kl": stat(&kls),
        "mc_final_mae": stat(&mc_maes),
        "config": args.engine_config(args.seed),
    });
    if let Some((m, i)) = median_iqr(&maes) {
        println!("final MAE: median={m} iqr={i} over {} seeds", maes.len());
    }
    if let Some(path) = &args.out {
        std::fs::write(path.with_extension("json"), serde_json::to_vec_pretty(&summary)?)?;
    }
    Ok(summary)
}

/// Parses the process arguments and runs; the return value is the exit code.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("BASQ_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            use clap::CommandFactory;
            let rendered = e.render().to_string();
            eprint!("{rendered}");
            if !rendered.contains("Usage:") {
                let mut cmd = Cli::command();
                cmd.build();
                let run = cmd.find_subcommand_mut("run").expect("run subcommand").render_usage();
                eprintln!("\n{run}");
            }
            return ExitCode::from(2);
        }
    };
    match cli.command {
        Some(Command::Run(args)) if !args.list => match run_command(&args) {
            Ok(_) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::FAILURE
            }
        },
        Some(Command::Run(_)) => {
            list_problems();
            ExitCode::SUCCESS
        }
        None if cli.list => {
            list_problems();
            ExitCode::SUCCESS
        }
        None => {
            use clap::CommandFactory;
            let _ = Cli::command().print_help();
            ExitCode::from(2)
        }
    }
}
