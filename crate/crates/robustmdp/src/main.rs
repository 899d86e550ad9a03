use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use robustmdp::acceptance::{select, Suite};
use robustmdp::formats::{to_json_bytes, write_bytes};
use robustmdp::grad::grad_dump;
use robustmdp::parallel::worker_threads;
use robustmdp::{solve, Error, GenerateSpec, RunConfig};

/// Robust MDP solvers over linearly parameterized kernel uncertainty sets.
#[derive(Parser)]
#[command(name = "robustmdp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a random instance (mdp.json, basis.json, set.json).
    Generate(GenerateArgs),
    /// Run a solver from a config; writes trace.csv and summary.json.
    Solve(SolveArgs),
    /// Run the acceptance criteria.
    Verify {
        /// Criterion tag or number, or a comma-separated list.
        #[arg(long)]
        only: Option<String>,
    },
    /// Dump the exact and sampled gradient at one point.
    Grad(GradArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// States, actions and successors per row.
    #[arg(long, num_args = 3, value_names = ["S", "A", "B"])]
    garnet: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    bases: usize,
    /// simplex-ball:R, vertices:K or srect:R
    #[arg(long, default_value = "simplex-ball:inf")]
    set: String,
    /// Mix basis rows with uniform so that P >= λ/S.
    #[arg(long, default_value_t = 0.0)]
    pmin: f64,
    #[arg(long)]
    discount: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Fill the wall_ms trace column.
    #[arg(long)]
    wall_clock: bool,
}

#[derive(Args)]
struct GradArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated ξ; defaults to the set's center.
    #[arg(long, value_delimiter = ',')]
    xi: Option<Vec<f64>>,
    /// Write grad.json here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load(config: &Path, seed: Option<u64>) -> Result<RunConfig, Error> {
    let cfg = RunConfig::load(config)?;
    Ok(match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Generate(a) => {
            let spec = GenerateSpec {
                n_states: a.garnet[0],
                n_actions: a.garnet[1],
                branching: a.garnet[2],
                seed: a.seed,
                bases: a.bases,
                set: a.set,
                lambda_pmin: a.pmin,
                discount: a.discount,
            };
            let inst = spec.build()?;
            inst.write(&a.out)?;
            println!("digest {}", inst.digest());
        }
        Command::Solve(a) => {
            let cfg = load(&a.config, a.seed)?;
            let report = solve(&cfg, worker_threads(), a.wall_clock)?;
            report.write(&a.out)?;
            let s = &report.summary;
            println!(
                "F {} after {} iterations (best {}), policy gap {:.3e}",
                s.final_f, s.iterations, s.best_iter, s.nash_gap.policy_gap
            );
        }
        Command::Verify { only } => {
            let ids = select(only.as_deref()).map_err(Error::Spec)?;
            let suite = Suite::new(worker_threads());
            let mut first_fail = None;
            for &id in &ids {
                let r = suite.run_one(id);
                println!("{r}");
                if !r.passed && first_fail.is_none() {
                    first_fail = Some(r);
                }
            }
            if let Some(r) = first_fail {
                eprintln!("error: criterion {} ({}) failed", r.id, r.name);
                return Ok(ExitCode::from(1));
            }
        }
        Command::Grad(a) => {
            let cfg = load(&a.config, a.seed)?;
            let dump = grad_dump(&cfg, a.xi, worker_threads())?;
            let bytes = to_json_bytes(&dump);
            match a.out {
                Some(dir) => write_bytes(&dir.join("grad.json"), &bytes)?,
                None => print!("{}", String::from_utf8_lossy(&bytes)),
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
