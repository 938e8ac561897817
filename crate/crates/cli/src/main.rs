use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use capflow::config::{parse_config, parse_config_unchecked, RunConfig};
use capflow::output::write_outputs;
use capflow::selftest::run_selftest;
use capflow::solver::{refinement_study, run_simulation};
use capflow::{validate_assumptions, Error, Model};

const EXIT_OTHER: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_ENTROPY: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "capflow", version, about = "Entropy-stable two-phase multicomponent flow solver")]
struct Cli {
    /// Worker threads for parallel studies.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for randomized self-tests.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the assumption report for a config.
    Validate { config: PathBuf },
    /// Run one simulation and write diagnostics.csv, snapshots.csv, manifest.json.
    Run {
        config: PathBuf,
        /// Abort on the first step violating the entropy inequality.
        #[arg(long)]
        strict_entropy: bool,
        /// Overrides `[output] directory`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Refinement study over κ and ε ladders; writes study.json.
    Study {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        kappas: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        epsilons: Vec<f64>,
        #[arg(long)]
        strict_entropy: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run the invariant suite on the reference parameters.
    Selftest,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Parse { .. } | Error::Assumptions(_) | Error::Precondition(_) | Error::Argument(_) => {
                EXIT_VALIDATION
            }
            Error::EntropyViolation { .. } => EXIT_ENTROPY,
            Error::Io(_) => EXIT_OTHER,
            _ => EXIT_SOLVER,
        };
        Failure { code, message: e.to_string() }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure {
        code: EXIT_OTHER,
        message: format!("{}: {e}", path.display()),
    })
}

fn load(path: &Path) -> Result<RunConfig, Failure> {
    Ok(parse_config(&read(path)?)?)
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("reports serialize")
}

fn validate(path: &Path) -> Result<(), Failure> {
    let cfg = parse_config_unchecked(&read(path)?)?;
    let report = validate_assumptions(&cfg.model);
    println!("{}", to_json(&report));
    if !report.accepted {
        return Err(Error::Assumptions(report.violated_clauses).into());
    }
    cfg.validate()?;
    Ok(())
}

fn run(path: &Path, strict: bool, output: Option<PathBuf>) -> Result<(), Failure> {
    let mut cfg = load(path)?;
    cfg.solver.strict_entropy |= strict;
    if let Some(dir) = output {
        cfg.output.directory = dir;
    }
    let model = Model::new(cfg.model.clone())?;
    let mesh = cfg.build_mesh()?;
    let init = cfg.initial_state(&model, &mesh)?;
    let traj = run_simulation(&init, &model, &cfg.diffusion, &mesh, &cfg.solver)?;
    let manifest = write_outputs(&traj, &cfg, &model, &cfg.output.directory)?;
    println!(
        "{} steps, min entropy margin {:e}, {} violations, outputs in {}",
        manifest.steps,
        manifest.entropy.min_margin,
        manifest.entropy.violations,
        cfg.output.directory.display()
    );
    Ok(())
}

fn study(
    path: &Path,
    kappas: &[f64],
    epsilons: &[f64],
    strict: bool,
    output: Option<PathBuf>,
) -> Result<(), Failure> {
    let mut cfg = load(path)?;
    cfg.solver.strict_entropy |= strict;
    let dir = output.unwrap_or_else(|| cfg.output.directory.clone());
    let eps = if epsilons.is_empty() { vec![cfg.model.eps] } else { epsilons.to_vec() };
    let model = Model::new(cfg.model.clone())?;
    let mesh = cfg.build_mesh()?;
    let init = cfg.initial_state(&model, &mesh)?;
    let report = refinement_study(&init, &model, &cfg.diffusion, &mesh, &cfg.solver, kappas, &eps)?;
    let io = |e: std::io::Error| Failure { code: EXIT_OTHER, message: format!("{}: {e}", dir.display()) };
    fs::create_dir_all(&dir).map_err(io)?;
    fs::write(dir.join("study.json"), to_json(&report) + "\n").map_err(io)?;
    println!("κ differences {:?}", report.kappa_differences);
    println!("κ orders {:?}", report.kappa_orders);
    println!("ε differences {:?}", report.eps_differences);
    for f in &report.flagged {
        println!("flagged {f}");
    }
    Ok(())
}

fn selftest(seed: u64) -> Result<(), Failure> {
    let results = run_selftest(seed);
    for r in &results {
        println!(
            "[{}] {:>2} {} ({:.2}s): {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.id,
            r.name,
            r.seconds,
            r.detail
        );
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(Failure { code: EXIT_SOLVER, message: format!("{failed} checks failed") });
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(EXIT_OTHER);
        }
    }
    let result = match cli.command {
        Command::Validate { config } => validate(&config),
        Command::Run { config, strict_entropy, output } => run(&config, strict_entropy, output),
        Command::Study { config, kappas, epsilons, strict_entropy, output } => {
            study(&config, &kappas, &epsilons, strict_entropy, output)
        }
        Command::Selftest => selftest(cli.seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
