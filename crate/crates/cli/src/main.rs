use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use reihom::cell::solve_inner_corrector;
use reihom::effective::{outer_solve, MidFluxCache};
use reihom::grid::{write_field_csv, DomainGrid};
use reihom::harness::config::ExperimentConfig;
use reihom::harness::manufactured::{check_orders, manufactured_rows};
use reihom::harness::report::{write_resolved_config, write_rows_to};
use reihom::harness::study::{build_table, run_convergence, run_fine, run_macro};
use reihom::harness::twoscale::{pairing_defects, standard_family};
use reihom::operators::{verify_axioms, AxiomCheck};
use reihom::pde::{fine_grid_n, SolutionHistory};
use reihom::{Error, Result};

#[derive(Parser)]
#[command(name = "reihom", version, about = "Reiterated homogenization of monotone parabolic problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; falls back to `output_dir` from the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Outer and inner correctors at one macroscopic gradient.
    Cell {
        #[command(flatten)]
        common: Common,
        /// Macroscopic gradient, comma separated (default: all ones).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        xi: Option<Vec<f64>>,
        /// Slow cell point for the inner corrector (default: cell center).
        #[arg(long, value_delimiter = ',')]
        y: Option<Vec<f64>>,
        /// Fast time in [0, 1).
        #[arg(long, default_value_t = 0.0)]
        tau: f64,
    },
    /// Tabulate the effective flux on the configured box.
    Effective {
        #[command(flatten)]
        common: Common,
    },
    /// Solve the homogenized problem.
    Macro {
        #[command(flatten)]
        common: Common,
    },
    /// Solve the oscillatory problem at one scale.
    Fine {
        #[command(flatten)]
        common: Common,
        /// Scale; defaults to the smallest configured epsilon.
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Error sweep over the configured scales.
    Convergence {
        #[command(flatten)]
        common: Common,
    },
    /// Two-scale pairing defects over the configured scales.
    Twoscale {
        #[command(flatten)]
        common: Common,
    },
    /// Manufactured-solution order study.
    Manufactured {
        #[command(flatten)]
        common: Common,
    },
    /// Sampled check of the structural axioms of the configured operator.
    VerifyAxioms {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Cell { common, .. }
            | Command::Effective { common }
            | Command::Macro { common }
            | Command::Fine { common, .. }
            | Command::Convergence { common }
            | Command::Twoscale { common }
            | Command::Manufactured { common }
            | Command::VerifyAxioms { common, .. } => common,
        }
    }
}

fn create(dir: &Path, name: &str) -> Result<File> {
    Ok(File::create(dir.join(name))?)
}

fn write_history(h: &SolutionHistory, dir: &Path, stem: &str) -> Result<()> {
    h.write_csv(create(dir, &format!("{stem}_history.csv"))?)?;
    h.write_diagnostics(create(dir, &format!("{stem}_diagnostics.csv"))?)?;
    write_field_csv(&h.grid, h.final_state(), create(dir, &format!("{stem}_final.csv"))?)
}

fn check_len(v: &[f64], d: usize, what: &str) -> Result<()> {
    if v.len() == d {
        Ok(())
    } else {
        Err(Error::Config(format!("--{what} needs {d} components, got {}", v.len())))
    }
}

fn cell(cfg: &ExperimentConfig, dir: &Path, xi: Option<Vec<f64>>, y: Option<Vec<f64>>, tau: f64) -> Result<()> {
    let d = cfg.grid.d;
    let xi = xi.unwrap_or_else(|| vec![1.0; d]);
    let y = y.unwrap_or_else(|| vec![0.5; d]);
    check_len(&xi, d, "xi")?;
    check_len(&y, d, "y")?;
    let op = cfg.operator()?;
    let grids = cfg.cell_grids()?;
    let cache = MidFluxCache::new();
    let (outer, avg) = outer_solve(&op, &xi, tau, &grids, &cfg.effective_params(), &cache)?;
    write_field_csv(&grids.y, &outer.pi, create(dir, "outer_corrector.csv")?)?;
    outer.write_trace(create(dir, "outer_trace.csv")?)?;
    let inner = solve_inner_corrector(&op, &y, tau, &xi, &grids.z, &cfg.newton())?;
    write_field_csv(&grids.z, &inner.pi, create(dir, "inner_corrector.csv")?)?;
    inner.write_trace(create(dir, "inner_trace.csv")?)?;
    println!("xi = {xi:?}, tau = {tau}");
    println!("y-average of h at tau: {avg:?}");
    println!(
        "outer: {} iterations, residual {:.3e}, mean {:.1e}",
        outer.iterations,
        outer.residual_norm,
        outer.mean(&grids.y)
    );
    println!(
        "inner at y = {y:?}: {} iterations, residual {:.3e}, mean {:.1e}",
        inner.iterations,
        inner.residual_norm,
        inner.mean(&grids.z)
    );
    Ok(())
}

fn axiom_line(name: &str, c: &AxiomCheck) -> String {
    format!("{name},{},{},{:e},{}\n", c.passed, c.certified, c.worst_violation, c.samples)
}

fn run(cmd: Command) -> Result<()> {
    let common = cmd.common();
    let cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => {
            let c = ExperimentConfig::default();
            c.validate()?;
            c
        }
    };
    let dir = common.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    fs::create_dir_all(&dir)?;
    write_resolved_config(&cfg, &dir)?;
    log::info!("writing outputs to {}", dir.display());
    match cmd {
        Command::Cell { xi, y, tau, .. } => cell(&cfg, &dir, xi, y, tau),
        Command::Effective { .. } => {
            let op = cfg.operator()?;
            let cache = MidFluxCache::new();
            let table = build_table(&cfg, &op, &cache)?;
            table.write_csv(create(&dir, "q_table.csv")?)?;
            table.write_metadata(create(&dir, "q_table.json")?)?;
            println!(
                "{} samples, {} inner solves, worst inner residual {:.2e}, neighbour monotonicity {:.3e}",
                table.num_samples(),
                cache.misses(),
                table.metadata().worst_inner_residual,
                table.neighbor_monotonicity()
            );
            Ok(())
        }
        Command::Macro { .. } => {
            let run = run_macro(&cfg)?;
            write_history(&run.history, &dir, "macro")?;
            if let Some(t) = &run.table {
                t.write_csv(create(&dir, "q_table.csv")?)?;
                t.write_metadata(create(&dir, "q_table.json")?)?;
            }
            println!("macro solve in {:.2}s, final max |u| = {:.6e}", run.runtime_s, run.history.final_state().max_abs());
            Ok(())
        }
        Command::Fine { epsilon, .. } => {
            let eps = match epsilon.or_else(|| cfg.epsilons.last().copied()) {
                Some(e) => e,
                None => return Err(Error::Config("no epsilon given and none configured".into())),
            };
            let n = fine_grid_n(cfg.grid.n, eps);
            DomainGrid::new(cfg.grid.d, n)?;
            let run = run_fine(&cfg, &cfg.operator()?, eps)?;
            write_history(&run.history, &dir, "fine")?;
            println!("eps = {eps}: n = {n}, {:.2}s", run.runtime_s);
            Ok(())
        }
        Command::Convergence { .. } => {
            let study = run_convergence(&cfg)?;
            write_rows_to(&study.rows, &dir.join("convergence.csv"))?;
            for r in &study.rows {
                println!("eps = {}: rel_l2 = {:.4e}, rel_lux = {:.4e}", r.epsilon, r.rel_l2, r.rel_lux);
            }
            Ok(())
        }
        Command::Twoscale { .. } => {
            let study = run_convergence(&cfg)?;
            write_rows_to(&study.rows, &dir.join("convergence.csv"))?;
            let rep = pairing_defects(&cfg, &study, &standard_family())?;
            write_rows_to(&rep.rows, &dir.join("twoscale.csv"))?;
            if rep.max_corrector_mean > 1e-10 {
                return Err(Error::Assertion(format!("corrector mean {:e} exceeds 1e-10", rep.max_corrector_mean)));
            }
            let bad = rep.non_decreasing();
            if bad.is_empty() {
                println!("all {} pairing defects decrease", rep.rows.len() / cfg.epsilons.len().max(1));
                Ok(())
            } else {
                Err(Error::Assertion(format!("pairing defects do not decrease for {}", bad.join(", "))))
            }
        }
        Command::Manufactured { .. } => {
            let rows = manufactured_rows(&cfg)?;
            write_rows_to(&rows, &dir.join("manufactured.csv"))?;
            for r in &rows {
                println!("n = {}, M = {}: max_err = {:.4e}, order_s = {:?}, order_t = {:?}", r.n, r.m, r.max_err, r.order_s, r.order_t);
            }
            check_orders(&rows)
        }
        Command::VerifyAxioms { samples, .. } => {
            let report = verify_axioms(&cfg.operator()?, &cfg.nfunction()?, samples, cfg.seed);
            let mut text = String::from("check,passed,certified,worst_violation,samples\n");
            text += &axiom_line("monotonicity", &report.monotonicity);
            text += &axiom_line("growth", &report.growth);
            text += &axiom_line("periodicity", &report.periodicity);
            text += &axiom_line("zero_at_zero", &report.zero_at_zero);
            fs::write(dir.join("axioms.csv"), &text)?;
            print!("{text}");
            if report.structural_pass() {
                Ok(())
            } else {
                Err(Error::Assertion("structural axioms violated".into()))
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 4 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
