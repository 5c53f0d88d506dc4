use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sosexit::certify::{CheckOptions, Tolerances};
use sosexit::mc::McSettings;
use sosexit_cli::commands::{self, CliError, SenseChoice, SolveOptions, EXIT_CERTIFICATE, EXIT_OK, EXIT_SOLVER};
use sosexit_cli::problem::{self, LoadOptions, LoadedProblem};
use sosexit_sdp::Sense;

#[derive(Parser)]
#[command(name = "sosexit", version, about = "Certified bounds on exit-location functionals of polynomial SDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ProblemArgs {
    /// Problem file (JSON).
    file: PathBuf,
    /// Append R^2 - |z|^2 >= 0 to the interior if no ball constraint is present.
    #[arg(long, value_name = "R")]
    add_ball: Option<f64>,
    /// Solve in the variables w_k = z_k / f_k (comma-separated factors).
    #[arg(long, value_name = "F1,F2,...", value_delimiter = ',')]
    rescale: Option<Vec<f64>>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SenseArg {
    Min,
    Max,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum OneSense {
    Min,
    Max,
}

impl From<OneSense> for Sense {
    fn from(s: OneSense) -> Sense {
        match s {
            OneSense::Min => Sense::Min,
            OneSense::Max => Sense::Max,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Lower and upper bounds for a list of relaxation orders.
    Solve {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long, value_delimiter = ',', default_value = "2,4,6,8,10")]
        degrees: Vec<u32>,
        #[arg(long, value_enum, default_value = "both")]
        sense: SenseArg,
        /// Solver feasibility and gap tolerance.
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 200)]
        max_iters: usize,
        /// Also extract and check a certificate for every bound.
        #[arg(long)]
        certify: bool,
        /// Sample points per piece for certificate checks.
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the report; the extension selects JSON (.json) or CSV (.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Euler-Maruyama estimate of E[g(X(tau))] and E[tau].
    Mc {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long, default_value_t = 100_000)]
        paths: usize,
        #[arg(long, default_value_t = 1e-4)]
        step: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Censoring horizon.
        #[arg(long, default_value_t = 1e3)]
        t_max: f64,
        /// Use the first Euler state outside the domain instead of bisecting the last step.
        #[arg(long)]
        no_bisection: bool,
        /// Write the estimate as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve one relaxation, extract its dual certificate and check it.
    Certify {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(short = 'r', long)]
        order: u32,
        #[arg(long, value_enum)]
        sense: OneSense,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Solver tolerance.
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        /// Lowest accepted Gram eigenvalue is minus this value.
        #[arg(long, default_value_t = 1e-7)]
        gram_tol: f64,
        /// Accepted relative coefficient residual of the identities.
        #[arg(long, default_value_t = 1e-6)]
        identity_tol: f64,
        /// Lowest accepted sampled value is minus this value.
        #[arg(long, default_value_t = 1e-6)]
        sampling_tol: f64,
        /// Write the certificate and the check report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sizes of a relaxation: truncation degrees, variables, rows and blocks.
    Info {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(short = 'r', long)]
        order: u32,
        /// Print JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Write a relaxation in sparse SDPA format.
    Export {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(short = 'r', long)]
        order: u32,
        #[arg(long, value_enum)]
        sense: OneSense,
        /// Output file (.dat-s).
        output: PathBuf,
    },
}

fn load(args: &ProblemArgs) -> Result<LoadedProblem, CliError> {
    let loaded = problem::load(
        &args.file,
        &LoadOptions {
            add_ball: args.add_ball,
            rescale: args.rescale.clone(),
            ..LoadOptions::default()
        },
    )?;
    for w in &loaded.warnings {
        eprintln!("{w}");
    }
    Ok(loaded)
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Solve {
            problem,
            degrees,
            sense,
            tol,
            max_iters,
            certify,
            samples,
            seed,
            out,
        } => {
            let loaded = load(&problem)?;
            let opts = SolveOptions {
                degrees,
                sense: match sense {
                    SenseArg::Min => SenseChoice::Min,
                    SenseArg::Max => SenseChoice::Max,
                    SenseArg::Both => SenseChoice::Both,
                },
                solver: commands::solver_settings(tol, max_iters),
                certify: certify.then_some(CheckOptions {
                    samples,
                    seed,
                    tol: Tolerances::default(),
                }),
            };
            let report = commands::cmd_solve(&loaded, &problem.file.display().to_string(), &opts, seed);
            print!("{}", report.to_table());
            if let Some(out) = out {
                let text = match out.extension().and_then(|e| e.to_str()) {
                    Some("csv") => report
                        .to_csv()
                        .map_err(|e| CliError::Usage(format!("cannot format CSV: {e}")))?,
                    _ => report.to_json(),
                };
                write_file(&out, &text)?;
            }
            Ok(if report.any_failed() {
                EXIT_SOLVER
            } else if report.any_certificate_failed() {
                EXIT_CERTIFICATE
            } else {
                EXIT_OK
            })
        }
        Command::Mc {
            problem,
            paths,
            step,
            seed,
            t_max,
            no_bisection,
            out,
        } => {
            let loaded = load(&problem)?;
            let settings = McSettings {
                step,
                paths,
                seed,
                t_max,
                bisection: !no_bisection,
            };
            let est = commands::cmd_mc(&loaded.problem, &settings)?;
            print!("{}", commands::mc_text(&est));
            if let Some(out) = out {
                let json = serde_json::json!({ "settings": settings, "estimate": est, "ci99": est.ci99() });
                write_file(&out, &format!("{}\n", serde_json::to_string_pretty(&json).expect("serializable")))?;
            }
            Ok(EXIT_OK)
        }
        Command::Certify {
            problem,
            order,
            sense,
            samples,
            seed,
            tol,
            gram_tol,
            identity_tol,
            sampling_tol,
            out,
        } => {
            let loaded = load(&problem)?;
            let opts = CheckOptions {
                samples,
                seed,
                tol: Tolerances {
                    gram: gram_tol,
                    identity: identity_tol,
                    sampling: sampling_tol,
                },
            };
            let settings = commands::solver_settings(tol, 200);
            let (cert, report) = commands::cmd_certify(&loaded.problem, order, sense.into(), &settings, &opts)?;
            print!("{}", commands::certify_text(&cert, &report));
            if let Some(out) = out {
                let doc = commands::CertifyOutput {
                    certificate: cert.to_json(),
                    report: &report,
                };
                write_file(&out, &format!("{}\n", serde_json::to_string_pretty(&doc).expect("serializable")))?;
            }
            Ok(if report.pass { EXIT_OK } else { EXIT_CERTIFICATE })
        }
        Command::Info { problem, order, json } => {
            let loaded = load(&problem)?;
            let info = commands::cmd_info(&loaded.problem, order)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&info).expect("serializable"));
            } else {
                print!("{}", info.to_text());
            }
            Ok(EXIT_OK)
        }
        Command::Export {
            problem,
            order,
            sense,
            output,
        } => {
            let loaded = load(&problem)?;
            commands::cmd_export(&loaded.problem, order, sense.into(), &output)?;
            println!("wrote {}", output.display());
            Ok(EXIT_OK)
        }
    }
}

fn configure_threads() {
    if let Ok(v) = std::env::var("SOSEXIT_THREADS") {
        match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => eprintln!("warning: ignoring SOSEXIT_THREADS={v:?}, expected a positive integer"),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_threads();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
