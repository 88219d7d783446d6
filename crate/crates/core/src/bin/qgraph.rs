use clap::{Args, Parser, Subcommand, ValueEnum};
use qgraph::boundary::BoundaryError;
use qgraph::config::{ConfigError, ExperimentConfig, RunParams};
use qgraph::graph::MetricGraph;
use qgraph::report::{
    convergence_rows, run_identity_suite, write_convergence_csv, write_heat_json,
    write_identities_json, write_report_json, write_spectrum_csv, write_spectrum_json,
    write_weyl_csv, HeatDocument, ReportError, SpectrumDocument, VerifyDocument,
};
use qgraph::scattering::{ScatteringError, ScatteringEvaluator};
use qgraph::spectrum::{compute_spectrum, SolverOptions, Spectrum, SpectrumError};
use qgraph::traceformula::{evaluate_tf, heat_trace, TestFunction, TraceError};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "qgraph",
    version,
    about = "Spectra and trace identities of self-adjoint Laplacians on compact metric graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the full spectrum; writes spectrum.csv, spectrum.json, weyl.csv.
    Spectrum(RunArgs),
    /// Evaluate one trace identity; writes report.json, convergence.csv.
    Verify(RunArgs),
    /// Run the structural consistency suite; writes identities.json.
    Check(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment description (JSON file).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory; created if missing.
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,
    /// Spectral cutoff.
    #[arg(long, value_name = "F")]
    kmax: Option<f64>,
    /// Orbit topological-length cutoff.
    #[arg(long, value_name = "N")]
    nmax: Option<usize>,
    /// Gaussian time parameter.
    #[arg(long, value_name = "F")]
    t: Option<f64>,
    /// Test function for verify.
    #[arg(long, value_enum)]
    test_fn: Option<TestFnArg>,
    /// Width parameter of the Cauchy test function.
    #[arg(long, value_name = "F")]
    cauchy_a: Option<f64>,
    /// Identity to verify.
    #[arg(long, value_enum)]
    identity: Option<IdentityArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TestFnArg {
    Gaussian,
    Cauchy,
}

#[derive(Clone, Copy, ValueEnum)]
enum IdentityArg {
    Tf1,
    Tf2,
    Heat,
}

impl IdentityArg {
    fn name(self) -> &'static str {
        match self {
            IdentityArg::Tf1 => "tf1",
            IdentityArg::Tf2 => "tf2",
            IdentityArg::Heat => "heat",
        }
    }
}

#[derive(Debug, thiserror::Error)]
enum CmdError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Boundary(#[from] BoundaryError),
    #[error("{0}")]
    Scattering(#[from] ScatteringError),
    #[error("{0}")]
    Spectrum(#[from] SpectrumError),
    #[error("{0}")]
    Trace(#[from] TraceError),
    #[error("{0}")]
    Report(#[from] ReportError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("identity checks failed: {0}")]
    ChecksFailed(String),
}

impl CmdError {
    /// 2 for configuration problems, 1 for computation and identity
    /// failures.
    fn exit_code(&self) -> ExitCode {
        match self {
            CmdError::Config(c) if !c.is_validation() => ExitCode::from(2),
            CmdError::Io(_) => ExitCode::from(2),
            _ => ExitCode::from(1),
        }
    }
}

fn main() -> ExitCode {
    init_threads();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// QGRAPH_THREADS caps internal parallelism.
fn init_threads() {
    if let Some(n) = std::env::var("QGRAPH_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
}

fn run(cli: Cli) -> Result<(), CmdError> {
    match cli.command {
        Command::Spectrum(args) => cmd_spectrum(&args),
        Command::Verify(args) => cmd_verify(&args),
        Command::Check(args) => cmd_check(&args),
    }
}

fn params_from(args: &RunArgs) -> RunParams {
    let mut p = RunParams::new(&args.config);
    if let Some(k) = args.kmax {
        p.k_max = k;
    }
    if let Some(n) = args.nmax {
        p.n_max = n;
    }
    if let Some(t) = args.t {
        p.t = t;
    }
    if let Some(tf) = args.test_fn {
        p.test_fn = match tf {
            TestFnArg::Gaussian => "gaussian".into(),
            TestFnArg::Cauchy => "cauchy".into(),
        };
    }
    if let Some(a) = args.cauchy_a {
        p.cauchy_a = a;
    }
    if let Some(id) = args.identity {
        p.identity = Some(id.name().into());
    }
    p
}

struct Job {
    graph: MetricGraph,
    ev: ScatteringEvaluator,
    params: RunParams,
}

fn load(args: &RunArgs) -> Result<Job, CmdError> {
    let cfg = ExperimentConfig::from_path(&args.config)?;
    let (graph, bc) = cfg.build()?;
    let ev = ScatteringEvaluator::new(&graph, &bc)?;
    std::fs::create_dir_all(&args.out)?;
    Ok(Job {
        graph,
        ev,
        params: params_from(args),
    })
}

fn solve(job: &Job) -> Result<Spectrum, CmdError> {
    let opts = SolverOptions {
        k_max: job.params.k_max,
        theta_tol: job.params.theta_tol,
        cluster_tol: job.params.cluster_tol,
        ..SolverOptions::default()
    };
    Ok(compute_spectrum(&job.graph, &job.ev, &opts)?)
}

fn cmd_spectrum(args: &RunArgs) -> Result<(), CmdError> {
    let job = load(args)?;
    let spectrum = solve(&job)?;
    write_spectrum_csv(&args.out.join("spectrum.csv"), &spectrum)?;
    write_weyl_csv(&args.out.join("weyl.csv"), &job.graph, &spectrum, 400)?;
    let n_pos: usize = spectrum.positive.iter().map(|p| p.multiplicity).sum();
    let n_neg: usize = spectrum.negative.iter().map(|n| n.multiplicity).sum();
    println!(
        "spectrum: {} negative, {} zero, {} positive eigenvalues up to k = {}",
        n_neg, spectrum.zero.g0, n_pos, spectrum.k_max
    );
    write_spectrum_json(
        &args.out.join("spectrum.json"),
        &SpectrumDocument {
            params: job.params,
            spectrum,
        },
    )?;
    Ok(())
}

fn cmd_verify(args: &RunArgs) -> Result<(), CmdError> {
    let job = load(args)?;
    let requested = job
        .params
        .identity
        .clone()
        .unwrap_or_else(|| "tf2".to_string());
    let spectrum = solve(&job)?;

    if requested == "heat" {
        let mut ts = vec![0.01, 0.02, 0.05, 0.1, 0.2, 0.5, job.params.t];
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        let mut reports = Vec::new();
        let mut rows = Vec::new();
        for &t in &ts {
            let r = heat_trace(&job.graph, &job.ev, &spectrum, t, job.params.n_max)?;
            rows.push((t, r.lhs, r.rhs, r.residual));
            println!("heat t = {t}: lhs = {}, residual = {:.3e}", r.lhs, r.residual);
            reports.push(r);
        }
        write_convergence_csv(&args.out.join("convergence.csv"), &rows)?;
        write_heat_json(
            &args.out.join("report.json"),
            &HeatDocument {
                params: job.params,
                reports,
            },
        )?;
        return Ok(());
    }

    let h = match job.params.test_fn.as_str() {
        "cauchy" => TestFunction::Cauchy {
            a: job.params.cauchy_a,
        },
        _ => TestFunction::Gaussian { t: job.params.t },
    };
    let report = evaluate_tf(&job.graph, &job.ev, &spectrum, &h, job.params.n_max)?;
    let grouping = report.identity.to_lowercase();
    let warning = if requested == "tf2" && grouping == "tf1" {
        let w = "requested tf2 but the orbit-sum convergence window is unsatisfied; \
                 falling back to tf1 grouping without tail bounds"
            .to_string();
        eprintln!("warning: {w}");
        Some(w)
    } else {
        None
    };
    println!(
        "{}: lhs = {}, rhs = {}, residual = {:.3e}",
        grouping, report.lhs, report.rhs, report.residual
    );
    write_convergence_csv(&args.out.join("convergence.csv"), &convergence_rows(&report))?;
    write_report_json(
        &args.out.join("report.json"),
        &VerifyDocument {
            params: job.params,
            requested_identity: requested,
            grouping,
            warning,
            report,
        },
    )?;
    Ok(())
}

fn cmd_check(args: &RunArgs) -> Result<(), CmdError> {
    let job = load(args)?;
    let suite = run_identity_suite(&job.graph, &job.ev, 7)?;
    write_identities_json(&args.out.join("identities.json"), &suite)?;
    for c in &suite.checks {
        println!(
            "{}: max residual {:.3e} (tolerance {:.0e}) {}",
            c.name,
            c.max_residual,
            c.tolerance,
            if c.pass { "pass" } else { "FAIL" }
        );
    }
    if !suite.all_pass {
        let failing: Vec<&str> = suite
            .checks
            .iter()
            .filter(|c| !c.pass)
            .map(|c| c.name.as_str())
            .collect();
        return Err(CmdError::ChecksFailed(failing.join(", ")));
    }
    Ok(())
}
