//! `loopfield` command line front end. Every command reads JSON inputs,
//! writes deterministic JSON into `--out-dir` and prints a short summary.
//!
//! Exit codes: 0 success, 1 unreadable or invalid input, 2 measure not
//! divergence-free, 3 solver certificate not reached, 4 self-test failure,
//! 5 experiment criterion failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use loopfield::experiments::{self, ExperimentReport, EXPERIMENTS};
use loopfield::field::{forward, forward_edges, MeasurementSetup, Reading};
use loopfield::geometry::{Edge, Grid, OrientedLoop};
use loopfield::graph::{silent_basis, Support};
use loopfield::inversion::{
    certify_tv_minimal, kernel_dimension_check, lambda_path, optimality_certificate,
    variational_certify, write_path_csv, CertifyMode, InversionProblem, SolveOptions,
};
use loopfield::loops::{decompose, reconstruct, representing_measure, rotated_gradient};
use loopfield::measures::{
    divergence, edge_measure_from_loop, DipoleAtom, DipoleField, EdgeMeasure, Magnetization,
    TotalVariation,
};
use loopfield::Error;
use serde::{Deserialize, Serialize};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "loopfield",
    version,
    about = "Planar magnetization inversion on pixel grids"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Directory for output files (created if missing).
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Run the command's invariant checks before the main task.
    #[arg(long)]
    self_test: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Loop decomposition of a divergence-free edge measure.
    Decompose {
        /// Edge measure JSON.
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Forward readings of a magnetization (or a bare edge measure).
    Forward {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        setup: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Regularized inversion of readings on a support.
    Invert {
        /// Reading JSON (`{"values": [...]}`).
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        setup: PathBuf,
        #[arg(long)]
        support: PathBuf,
        #[arg(long)]
        lambda: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of starts (the first is the zero start).
        #[arg(long, default_value_t = 1)]
        restarts: usize,
        /// Full solver options JSON; `--lambda`, `--seed` and `--restarts` override it.
        #[arg(long)]
        options: Option<PathBuf>,
        /// Comma-separated decreasing schedule ending at `--lambda`; writes
        /// `path.json` and `path.csv` and reports the final point.
        #[arg(long, value_delimiter = ',')]
        path: Option<Vec<f64>>,
        #[command(flatten)]
        common: Common,
    },
    /// Total-variation minimality of a magnetization within its field class.
    Certify {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        support: PathBuf,
        /// Sampled cycle mode with this many random combinations instead of
        /// exhaustive enumeration.
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Basis of the silent edge measures of a support.
    SilentBasis {
        #[arg(long)]
        support: PathBuf,
        /// Optional setup for a numerical kernel-dimension check.
        #[arg(long)]
        setup: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Named end-to-end scenario with a fixed seed.
    Experiment {
        /// One of unit_square, separated_segments, tree_like, coarea_fuzz,
        /// uniqueness_multistart. May be omitted when `--input` names a config.
        name: Option<String>,
        /// Experiment config JSON (`{"name": ..., "seed": ...}`).
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct ExperimentConfig {
    name: String,
    #[serde(default = "default_seed")]
    seed: u64,
}

fn default_seed() -> u64 {
    7
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn new(code: u8, error: anyhow::Error) -> Self {
        Failure { code, error }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let code = match error.downcast_ref::<Error>() {
            Some(Error::NotDivergenceFree { .. }) => 2,
            _ => 1,
        };
        Failure { code, error }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(value) = std::env::var("LOOPFIELD_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .with_context(|| format!("LOOPFIELD_THREADS must be a positive integer, got {value:?}"))?;
    if n == 0 {
        return Err(anyhow!(
            "LOOPFIELD_THREADS must be a positive integer, got 0"
        ));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()?;
    Ok(())
}

fn run(command: Command) -> CmdResult {
    match command {
        Command::Decompose { input, common } => {
            self_test(&common, "decompose", self_test_decompose)?;
            cmd_decompose(&input, &common.out_dir)
        }
        Command::Forward {
            input,
            setup,
            common,
        } => {
            self_test(&common, "forward", self_test_forward)?;
            cmd_forward(&input, &setup, &common.out_dir)
        }
        Command::Invert {
            input,
            setup,
            support,
            lambda,
            seed,
            restarts,
            options,
            path,
            common,
        } => {
            self_test(&common, "invert", self_test_invert)?;
            let mut opts: SolveOptions = match options {
                Some(p) => read_json(&p)?,
                None => SolveOptions::default(),
            };
            opts.lambda = lambda;
            opts.seed = seed;
            opts.restarts = restarts;
            cmd_invert(
                &input,
                &setup,
                &support,
                &opts,
                path.as_deref(),
                &common.out_dir,
            )
        }
        Command::Certify {
            input,
            support,
            samples,
            seed,
            common,
        } => {
            self_test(&common, "certify", self_test_certify)?;
            let mode = match samples {
                Some(samples) => CertifyMode::Sampled { samples, seed },
                None => CertifyMode::Exhaustive,
            };
            cmd_certify(&input, &support, mode, seed, &common.out_dir)
        }
        Command::SilentBasis {
            support,
            setup,
            common,
        } => {
            self_test(&common, "silent-basis", self_test_silent)?;
            cmd_silent_basis(&support, setup.as_deref(), &common.out_dir)
        }
        Command::Experiment {
            name,
            input,
            seed,
            common,
        } => {
            self_test(&common, "experiment", self_test_decompose)?;
            let mut config = match (&input, name) {
                (Some(p), None) => read_json::<ExperimentConfig>(p)?,
                (None, Some(name)) => ExperimentConfig {
                    name,
                    seed: default_seed(),
                },
                (Some(p), Some(name)) => ExperimentConfig {
                    name,
                    ..read_json(p)?
                },
                (None, None) => {
                    return Err(anyhow!(
                        "give an experiment name or --input config; known: {EXPERIMENTS:?}"
                    )
                    .into())
                }
            };
            if let Some(s) = seed {
                config.seed = s;
            }
            cmd_experiment(&config, &common.out_dir)
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(value)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf, Failure> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value).map_err(anyhow::Error::from)?;
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn cmd_decompose(input: &Path, out: &Path) -> CmdResult {
    let nu: EdgeMeasure = read_json(input)?;
    let d = decompose(&nu)?;
    let atoms = representing_measure(&d)?;
    let residual = reconstruct(&d)?.axpy(-1.0, &nu)?.max_abs();
    write_json(out, "decomposition.json", &d)?;
    write_json(out, "representing_measure.json", &atoms)?;
    println!("levels: {}", d.levels.len());
    println!("loops: {}", d.loop_count());
    println!("total mass: {}", d.total_mass());
    println!("total variation: {}", nu.tv_norm());
    println!("reconstruction residual: {residual}");
    Ok(())
}

/// A magnetization file, or a bare edge measure treated as one.
fn read_magnetization(path: &Path) -> Result<Magnetization, Failure> {
    let value: serde_json::Value = read_json(path)?;
    if value.get("edge_part").is_some() {
        Ok(serde_json::from_value(value).with_context(|| format!("parsing {}", path.display()))?)
    } else {
        let edges: EdgeMeasure =
            serde_json::from_value(value).with_context(|| format!("parsing {}", path.display()))?;
        Ok(Magnetization::from_edges(edges))
    }
}

fn cmd_forward(input: &Path, setup: &Path, out: &Path) -> CmdResult {
    let mu = read_magnetization(input)?;
    let setup: MeasurementSetup = read_json(setup)?;
    let reading = forward(&mu, &setup)?;
    write_json(
        out,
        "reading.json",
        &json!({
            "values": reading.values,
            "v": setup.direction(),
            "mu0": setup.mu0(),
            "points": setup.len(),
        }),
    )?;
    println!("points: {}", setup.len());
    println!("max |reading|: {}", reading.max_abs());
    Ok(())
}

fn cmd_invert(
    input: &Path,
    setup: &Path,
    support: &Path,
    opts: &SolveOptions,
    schedule: Option<&[f64]>,
    out: &Path,
) -> CmdResult {
    let f: Reading = read_json(input)?;
    let setup: MeasurementSetup = read_json(setup)?;
    let support: Support = read_json(support)?;
    opts.validate()?;
    let solution = match schedule {
        Some(schedule) => {
            if schedule.last() != Some(&opts.lambda) {
                return Err(anyhow!("--path must end at --lambda {}", opts.lambda).into());
            }
            let path = lambda_path(&f, &setup, &support, schedule, None, None, opts)?;
            write_json(out, "path.json", &path)?;
            fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
            let file = fs::File::create(out.join("path.csv")).context("creating path.csv")?;
            write_path_csv(&path, file)?;
            path.into_iter().last().expect("nonempty schedule").solution
        }
        None => {
            let problem = InversionProblem::new(&setup, &support, &f)?;
            let mut sols = problem.multistart(opts)?;
            sols.sort_by(|a, b| a.objective.total_cmp(&b.objective));
            sols.swap_remove(0)
        }
    };
    write_json(out, "solution.json", &solution)?;
    println!("objective: {}", solution.objective);
    println!("total variation: {}", solution.tv);
    println!("iterations: {}", solution.iterations);
    println!(
        "certificate: {} (off-support {:.3e}, on-support gap {:.3e}, tol {:e})",
        if solution.certificate.passed {
            "passed"
        } else {
            "failed"
        },
        solution.certificate.max_offsupport,
        solution.certificate.max_onsupport_gap,
        solution.certificate.tol
    );
    if solution.converged {
        Ok(())
    } else {
        Err(Failure::new(
            3,
            anyhow!("optimality certificate not reached; partial solution written"),
        ))
    }
}

fn cmd_certify(
    input: &Path,
    support: &Path,
    mode: CertifyMode,
    seed: u64,
    out: &Path,
) -> CmdResult {
    let mu = read_magnetization(input)?;
    let support: Support = read_json(support)?;
    let minimality = certify_tv_minimal(&mu, &support, mode)?;
    let variational = variational_certify(&mu, &support, 64, seed)?;
    write_json(
        out,
        "certify.json",
        &json!({ "minimality": minimality, "variational": variational }),
    )?;
    println!(
        "verdict: {}",
        serde_json::to_value(&minimality.verdict).map_err(anyhow::Error::from)?["verdict"]
            .as_str()
            .unwrap_or("?")
    );
    println!("cycles checked: {}", minimality.cycles_checked);
    if let Some(m) = minimality.min_margin {
        println!("min margin: {m}");
    }
    Ok(())
}

fn cmd_silent_basis(support: &Path, setup: Option<&Path>, out: &Path) -> CmdResult {
    let support: Support = read_json(support)?;
    let basis = silent_basis(&support);
    let g = support.graph();
    let kernel = match setup {
        Some(p) => Some(kernel_dimension_check(&read_json(p)?, &support, 1e-8)?),
        None => None,
    };
    write_json(
        out,
        "silent_basis.json",
        &json!({
            "edges": g.edge_count(),
            "vertices": g.vertex_count(),
            "components": g.component_count(),
            "dimension": basis.len(),
            "basis": basis,
            "kernel": kernel,
        }),
    )?;
    println!("silent dimension: {}", basis.len());
    if let Some(k) = kernel {
        println!(
            "numerical nullity: {} (sufficient: {})",
            k.nullity, k.sufficient
        );
    }
    Ok(())
}

fn cmd_experiment(config: &ExperimentConfig, out: &Path) -> CmdResult {
    let report: ExperimentReport = experiments::run(&config.name, config.seed)?;
    write_json(out, &format!("{}.json", report.name), &report)?;
    for c in &report.criteria {
        println!(
            "{} {}: {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    if report.passed {
        Ok(())
    } else {
        Err(Failure::new(
            5,
            anyhow!(
                "experiment {} failed: {}",
                report.name,
                report.failures().join(", ")
            ),
        ))
    }
}

fn self_test(common: &Common, name: &str, suite: fn() -> anyhow::Result<()>) -> CmdResult {
    if !common.self_test {
        return Ok(());
    }
    suite().map_err(|e| Failure::new(4, e.context(format!("{name} self-test failed"))))?;
    eprintln!("{name} self-test passed");
    Ok(())
}

fn ensure(cond: bool, what: &str) -> anyhow::Result<()> {
    if cond {
        Ok(())
    } else {
        Err(anyhow!("{what}"))
    }
}

fn self_test_decompose() -> anyhow::Result<()> {
    let g = Grid::unit(6, 5);
    let values = (0..g.cell_count())
        .map(|k| ((k * 7919) % 5) as f64 - 2.0)
        .collect();
    let nu = rotated_gradient(&loopfield::loops::CellFunction::new(g, values)?);
    let d = decompose(&nu)?;
    ensure(
        reconstruct(&d)? == nu,
        "decomposition does not reconstruct its input",
    )?;
    ensure(
        d.total_mass() == nu.tv_norm(),
        "loop masses do not sum to the total variation",
    )?;
    let square = edge_measure_from_loop(&g, &OrientedLoop::rectangle(1, 1, 2, 2)?, 1.0)?;
    ensure(
        decompose(&square)?.loop_count() == 1,
        "unit square does not give one loop",
    )
}

fn self_test_forward() -> anyhow::Result<()> {
    let g = Grid::unit(3, 3);
    let setup = MeasurementSetup::lattice([-1.0, 4.0], [-1.0, 4.0], [5, 5], 0.7, [0.0, 0.0, 1.0])?;
    let lp = edge_measure_from_loop(&g, &OrientedLoop::rectangle(0, 0, 2, 3)?, 1.0)?;
    ensure(
        forward_edges(&lp, &setup).max_abs() == 0.0,
        "loop measure is not silent",
    )?;
    let a = EdgeMeasure::from_entries(g, [(Edge::h(0, 0), 1.0), (Edge::v(2, 1), -0.5)])?;
    let b = EdgeMeasure::from_entries(g, [(Edge::h(1, 2), 0.25)])?;
    let dip = DipoleField::new(vec![DipoleAtom::new([1.5, 1.5], [0.1, -0.2, 0.3])])?;
    let sum = forward(&Magnetization::new(a.try_add(&b)?, dip.clone()), &setup)?;
    let parts = forward(&Magnetization::new(a, dip), &setup)?.add(&forward_edges(&b, &setup));
    ensure(
        sum.sub(&parts).max_abs() <= 1e-13 * parts.max_abs().max(1.0),
        "forward map is not linear",
    )
}

fn self_test_invert() -> anyhow::Result<()> {
    let g = Grid::unit(2, 1);
    let setup = MeasurementSetup::lattice([-1.0, 3.0], [-1.0, 2.0], [6, 5], 0.5, [0.0, 0.0, 1.0])?;
    let support = Support::full(g);
    let truth = EdgeMeasure::from_entries(g, [(Edge::h(0, 0), 1.0)])?;
    let f = forward_edges(&truth, &setup);
    let problem = InversionProblem::new(&setup, &support, &f)?;
    let big = problem.zero_threshold() * 1.5;
    let sol = problem.solve(&SolveOptions::with_lambda(big))?;
    ensure(
        sol.converged && sol.weights.values().all(|w| *w == 0.0),
        "large lambda does not give a certified zero",
    )?;
    let lambda = problem.zero_threshold() * 0.1;
    let sol = problem.solve(&SolveOptions::with_lambda(lambda))?;
    let cert = optimality_certificate(
        &sol.magnetization(&support)?,
        &f,
        &setup,
        &support,
        lambda,
        1e-6,
    )?;
    ensure(
        cert.passed,
        "solver certificate fails the independent check",
    )
}

fn self_test_certify() -> anyhow::Result<()> {
    let g = Grid::unit(1, 1);
    let support = Support::full(g);
    let lp = edge_measure_from_loop(&g, &OrientedLoop::rectangle(0, 0, 1, 1)?, 1.0)?;
    let half = EdgeMeasure::from_entries(g, [(Edge::h(0, 0), 1.0), (Edge::h(0, 1), -1.0)])?;
    let three = half.try_add(&EdgeMeasure::from_entries(g, [(Edge::v(1, 0), 1.0)])?)?;
    let verdict = |m: &EdgeMeasure| -> anyhow::Result<String> {
        let r = certify_tv_minimal(
            &Magnetization::from_edges(m.clone()),
            &support,
            CertifyMode::Exhaustive,
        )?;
        Ok(serde_json::to_value(&r.verdict)?["verdict"]
            .as_str()
            .unwrap_or_default()
            .to_string())
    };
    ensure(
        verdict(&lp)? == "violated",
        "a loop is not flagged as removable",
    )?;
    ensure(
        verdict(&half)? == "minimal",
        "opposite edges are not minimal",
    )?;
    ensure(
        verdict(&three)? == "violated",
        "three edges of a square are not flagged",
    )
}

fn self_test_silent() -> anyhow::Result<()> {
    let support = Support::full(Grid::unit(3, 2));
    let basis = silent_basis(&support);
    ensure(
        basis.len() == 6,
        "3x2 grid does not have six independent loops",
    )?;
    ensure(
        basis.iter().all(|b| divergence(b).max_abs() == 0.0),
        "basis element with nonzero divergence",
    )
}
