//! `clab`: scenario-driven front end for the lattice criticality workbench.
//!
//! Exit codes: 0 all non-diagnostic checks pass, 1 invariant failure,
//! 2 usage or input error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use clab_core::error::ScenarioError;
use clab_core::runner::{render_check_table, run_scenario, verify_all, ReportBundle};
use clab_core::scenario::{load_scenario, Scenario, Suite};
use clab_core::spaces::Exponent;

#[derive(Parser)]
#[command(name = "clab", version, about = "lattice Green-operator workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct SuiteArgs {
    /// Scenario file (TOML or JSON)
    scenario: PathBuf,
    /// Restrict the exhaustion to radii <= K (K must be a listed radius)
    #[arg(long)]
    radius: Option<i64>,
    /// Replace the scenario lambda list with a single shift
    #[arg(long)]
    lambda: Option<f64>,
    /// Replace the exponent list, e.g. "1,1.5,2,inf"
    #[arg(long)]
    p: Option<String>,
    /// Output directory (default: out/<scenario-name>)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the suites requested by the scenario file
    Run(SuiteArgs),
    /// Run every scenario in a directory and aggregate the results
    Verify {
        /// Directory containing scenario files
        dir: PathBuf,
        /// Output root (default: out)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Criticality classification only
    Classify(SuiteArgs),
    /// Weighted operator norm checks only
    Norms(SuiteArgs),
    /// Spectrum, Gelfand radii and resolvent identities only
    Spectrum(SuiteArgs),
    /// Generator and contraction semigroup checks only
    Semigroup(SuiteArgs),
    /// Tail perturbation functionals only
    Perturb(SuiteArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => run_suites(args, None),
        Command::Verify { dir, out } => {
            let out_root = out.unwrap_or_else(|| PathBuf::from("out"));
            match verify_all(&dir, &out_root) {
                Ok(outcome) => {
                    for bundle in &outcome.bundles {
                        print!("{}", render_check_table(bundle));
                    }
                    let total: usize = outcome.bundles.len();
                    let passed = outcome.bundles.iter().filter(|b| b.passed()).count();
                    println!("verify: {passed}/{total} scenarios passed");
                    Ok(outcome.passed())
                }
                Err(e) => Err(e),
            }
        }
        Command::Classify(args) => run_suites(args, Some(Suite::Classify)),
        Command::Norms(args) => run_suites(args, Some(Suite::Norms)),
        Command::Spectrum(args) => run_suites(args, Some(Suite::Spectrum)),
        Command::Semigroup(args) => run_suites(args, Some(Suite::Semigroup)),
        Command::Perturb(args) => run_suites(args, Some(Suite::Perturb)),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &ScenarioError) -> u8 {
    match e {
        ScenarioError::Parse { .. }
        | ScenarioError::Io { .. }
        | ScenarioError::EmptyDirectory(_)
        | ScenarioError::UnknownPreset(..) => 2,
        _ => 1,
    }
}

fn run_suites(args: SuiteArgs, only: Option<Suite>) -> Result<bool, ScenarioError> {
    let mut sc = load_scenario(&args.scenario)?;
    apply_overrides(&mut sc, &args)?;
    if let Some(suite) = only {
        let mut suites = vec![suite];
        if suite == Suite::Perturb {
            suites.push(Suite::Classify);
        }
        suites.sort();
        suites.dedup();
        sc.suites = suites;
    }
    let out_dir = args
        .out
        .unwrap_or_else(|| PathBuf::from("out").join(&sc.name));
    let bundle: ReportBundle = run_scenario(&sc, &out_dir)?;
    print!("{}", render_check_table(&bundle));
    println!(
        "{}: {} ({} checks, reports in {})",
        bundle.name,
        if bundle.passed() { "PASS" } else { "FAIL" },
        bundle.checks.len(),
        bundle.out_dir
    );
    Ok(bundle.passed())
}

fn apply_overrides(sc: &mut Scenario, args: &SuiteArgs) -> Result<(), ScenarioError> {
    if let Some(k) = args.radius {
        if !sc.exhaustion.contains_radius(k) {
            return Err(ScenarioError::Lattice(
                clab_core::error::LatticeError::UnknownRadius(k),
            ));
        }
        let radii: Vec<i64> = sc
            .exhaustion
            .radii()
            .iter()
            .copied()
            .filter(|&r| r <= k)
            .collect();
        let nodes = sc.exhaustion.grid_box(k).node_count() as f64;
        sc.tolerances.norm_box_cap = sc.tolerances.norm_box_cap.max(nodes);
        sc.tolerances.spectrum_box_cap = sc.tolerances.spectrum_box_cap.max(nodes);
        sc.tolerances.semigroup_box_cap = sc.tolerances.semigroup_box_cap.max(nodes);
        let nu = sc.exhaustion.measure().to_vec();
        let ambient = sc.exhaustion.ambient();
        sc.exhaustion = clab_core::lattice::build_exhaustion(
            sc.exhaustion.dim(),
            &radii,
            sc.exhaustion.ambient_radius(),
            Some(sc.exhaustion.anchor()),
            |node| nu[ambient.index_of(node).expect("node in ambient box")],
        )?;
    }
    if let Some(l) = args.lambda {
        sc.lambdas = vec![l];
    }
    if let Some(ps) = &args.p {
        let mut parsed = Vec::new();
        for tok in ps.split(',') {
            parsed.push(Exponent::parse(tok).map_err(|_| ScenarioError::Parse {
                path: "--p".into(),
                message: format!("bad exponent `{tok}`"),
            })?);
        }
        sc.ps = parsed;
    }
    Ok(())
}
