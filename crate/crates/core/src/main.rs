use clap::{Args, Parser, Subcommand};
use embsplit::bench::{
    fit_order, fmt_float, geometric_range, read_csv, run_adaptive_sweep, run_scan,
    CsvTrajectorySink, RunRecord, ScanConfig,
};
use embsplit::estgen::{solve_weights, verify_order, Pin, SchemeFile};
use embsplit::opalg::MAX_GRADE;
use embsplit::problems::{kepler_flows, kepler_init};
use embsplit::schemes::{catalog, export_scheme_file, find_method};
use embsplit::stepper::{integrate_adaptive, per_step_fevals, ControllerConfig};
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "embsplit",
    about = "Splitting/composition integrators with embedded error estimators",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Derive estimator weights for a scheme file at a given order.
    Derive(DeriveArgs),
    /// Check a catalog method's main and estimator orders.
    Verify {
        /// Method name or alias, e.g. SS11 or "SS11-6(5)".
        method: String,
    },
    /// Fixed-step Kepler error scan; writes one CSV row per run.
    Scan(ScanArgs),
    /// Adaptive tolerance sweep on Kepler.
    Adaptive(AdaptiveArgs),
    /// Fit convergence orders from a scan CSV, grouped by method and e.
    OrderFit {
        /// CSV file produced by `scan`.
        file: PathBuf,
    },
    /// List catalog methods.
    ListMethods,
    /// Write a catalog method in the scheme-file format.
    Export {
        method: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct DeriveArgs {
    /// Scheme file (TOML).
    scheme: PathBuf,
    /// Estimator order to solve for.
    #[arg(long)]
    order: u32,
    /// Extra pin constraints, each as index=value.
    #[arg(long = "pin", value_parser = parse_pin)]
    pins: Vec<Pin>,
}

#[derive(Args)]
struct ScanArgs {
    /// Comma-separated method names or aliases.
    #[arg(long, value_delimiter = ',', required = true)]
    methods: Vec<String>,
    /// Comma-separated eccentricities.
    #[arg(long = "e", value_delimiter = ',', default_values_t = vec![0.2, 0.4, 0.6, 0.8])]
    eccentricities: Vec<f64>,
    /// Comma-separated step sizes.
    #[arg(long = "h", value_delimiter = ',', conflicts_with = "h_range")]
    hs: Vec<f64>,
    /// Geometric step-size range min:max:count.
    #[arg(long = "h-range", value_parser = parse_h_range)]
    h_range: Option<(f64, f64, usize)>,
    /// Integration interval end.
    #[arg(long, default_value_t = 20.0)]
    tend: f64,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AdaptiveArgs {
    #[arg(long)]
    method: String,
    /// Comma-separated tolerances.
    #[arg(long, value_delimiter = ',', required = true)]
    tol: Vec<f64>,
    #[arg(long, default_value_t = 0.4)]
    e: f64,
    /// Initial step size.
    #[arg(long, default_value_t = 0.1)]
    h0: f64,
    /// End of the integration interval.
    #[arg(long, default_value_t = 20.0)]
    tend: f64,
    /// Controller exponent override.
    #[arg(long)]
    exponent: Option<f64>,
    /// Write the accepted trajectory of the last tolerance to this CSV.
    #[arg(long)]
    trajectory: Option<PathBuf>,
}

fn parse_pin(s: &str) -> Result<Pin, String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("pin '{s}' is not index=value"))?;
    Ok(Pin {
        k: k.trim().parse().map_err(|e| format!("pin index: {e}"))?,
        value: v.trim().parse().map_err(|e| format!("pin value: {e}"))?,
    })
}

fn parse_h_range(s: &str) -> Result<(f64, f64, usize), String> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(format!("h-range '{s}' is not min:max:count"));
    }
    Ok((
        parts[0].parse().map_err(|e| format!("min: {e}"))?,
        parts[1].parse().map_err(|e| format!("max: {e}"))?,
        parts[2].parse().map_err(|e| format!("count: {e}"))?,
    ))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Derive(args) => derive(&args),
        Command::Verify { method } => verify(&method),
        Command::Scan(args) => scan(args),
        Command::Adaptive(args) => adaptive(&args),
        Command::OrderFit { file } => order_fit(&file),
        Command::ListMethods => {
            list_methods();
            Ok(())
        }
        Command::Export { method, out } => {
            let m = find_method(&method).ok_or_else(|| format!("unknown method '{method}'"))?;
            export_scheme_file(&m)
                .save(&out)
                .map_err(|e| e.to_string())?;
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}

fn derive(args: &DeriveArgs) -> Result<(), String> {
    let file = SchemeFile::load(&args.scheme).map_err(|e| e.to_string())?;
    let scheme = file.to_scheme().map_err(|e| e.to_string())?;
    // Constraints from any stored estimator of the requested order, plus the
    // pins given on the command line.
    let mut symmetry = Vec::new();
    let mut pins = args.pins.clone();
    if let Some(spec) = file.estimators.iter().find(|s| s.order == args.order) {
        symmetry.extend(spec.symmetry.iter().copied());
        pins.extend(spec.pins.iter().copied());
    }
    let system =
        embsplit::estgen::assemble_system(&scheme, args.order).map_err(|e| e.to_string())?;
    let weights = solve_weights(&system, &symmetry, &pins).map_err(|e| e.to_string())?;
    println!(
        "family {} | {} stages | target order {} | {} conditions",
        scheme.family,
        scheme.stages.len(),
        args.order,
        system.words.len()
    );
    println!(
        "residual {:.3e} | nullspace dimension {}",
        weights.residual, weights.nullspace_dim
    );
    for (k, w) in weights.w.iter().enumerate() {
        println!("w[{k:2}] = {}", fmt_float(*w));
    }
    let n = (args.order + 1).min(MAX_GRADE);
    let report = verify_order(&scheme, Some(&weights), n).map_err(|e| e.to_string())?;
    println!("verified estimator order {}", report.order);
    Ok(())
}

fn verify(method: &str) -> Result<(), String> {
    let m = find_method(method).ok_or_else(|| format!("unknown method '{method}'"))?;
    let n = (m.main_order + 1).min(MAX_GRADE);
    let report = verify_order(&m.scheme, None, n).map_err(|e| e.to_string())?;
    println!(
        "{}: declared order {}, verified order {}",
        m.name, m.main_order, report.order
    );
    for (g, r) in report.residual_by_grade.iter().enumerate().skip(1) {
        println!("  grade {g}: max residual {r:.3e}");
    }
    for (i, (spec, weights)) in m.estimator_specs.iter().zip(&m.estimators).enumerate() {
        let n = (spec.order + 1).min(MAX_GRADE);
        let report = verify_order(&m.scheme, Some(weights), n).map_err(|e| e.to_string())?;
        println!(
            "estimator {}: declared order {}, verified order {}, solve residual {:.3e}, nullspace {}",
            i + 1,
            spec.order,
            report.order,
            weights.residual,
            weights.nullspace_dim
        );
    }
    Ok(())
}

fn scan(args: ScanArgs) -> Result<(), String> {
    let hs = match (args.hs.is_empty(), args.h_range) {
        (false, None) => args.hs,
        (true, Some((lo, hi, count))) => {
            geometric_range(lo, hi, count).map_err(|e| e.to_string())?
        }
        _ => return Err("give exactly one of --h and --h-range".into()),
    };
    let cfg = ScanConfig {
        methods: args.methods,
        eccentricities: args.eccentricities,
        hs,
        t_end: args.tend,
        out: Some(args.out.clone()),
    };
    let records = run_scan(&cfg).map_err(|e| e.to_string())?;
    let failed = records.iter().filter(|r| r.nsteps.is_none()).count();
    println!(
        "wrote {} rows to {} ({} failed runs)",
        records.len(),
        args.out.display(),
        failed
    );
    Ok(())
}

fn adaptive(args: &AdaptiveArgs) -> Result<(), String> {
    let m = find_method(&args.method).ok_or_else(|| format!("unknown method '{}'", args.method))?;
    let records = run_adaptive_sweep(&m, args.e, &args.tol, args.tend, args.h0, args.exponent)
        .map_err(|e| e.to_string())?;
    println!("method,e,tol,accepted,rejected,fevals,achieved_E1,aborted");
    for r in &records {
        println!(
            "{},{},{},{},{},{},{},{}",
            r.method,
            fmt_float(r.e),
            fmt_float(r.tol),
            r.accepted.map(|v| v.to_string()).unwrap_or_default(),
            r.rejected.map(|v| v.to_string()).unwrap_or_default(),
            r.fevals.map(|v| v.to_string()).unwrap_or_default(),
            r.achieved_e1.map(fmt_float).unwrap_or_default(),
            r.aborted
        );
    }
    if let Some(path) = &args.trajectory {
        let tol = *args.tol.last().expect("tol list nonempty");
        let init = kepler_init(args.e).map_err(|e| e.to_string())?;
        let flows = kepler_flows(init.mu).map_err(|e| e.to_string())?;
        let file = std::fs::File::create(path).map_err(|e| e.to_string())?;
        let mut sink = CsvTrajectorySink::new(file, 4).map_err(|e| e.to_string())?;
        let mut cfg = ControllerConfig::new(tol, args.h0);
        cfg.exponent = args.exponent;
        integrate_adaptive(
            &m,
            &flows,
            &init.to_state(),
            0.0,
            args.tend,
            &cfg,
            Some(&mut sink),
        )
        .map_err(|e| e.to_string())?;
        sink.finish().map_err(|e| e.to_string())?;
        println!("trajectory for tol {tol:.1e} written to {}", path.display());
    }
    Ok(())
}

fn order_fit(file: &std::path::Path) -> Result<(), String> {
    let records = read_csv(file).map_err(|e| e.to_string())?;
    let mut groups: BTreeMap<(String, String), Vec<RunRecord>> = BTreeMap::new();
    for r in &records {
        groups
            .entry((r.method.clone(), fmt_float(r.e)))
            .or_default()
            .push(r.clone());
    }
    for ((method, e), group) in &groups {
        match fit_order(group) {
            Ok(fit) => println!(
                "{method} e={e}: slope {:.3} over {} points (rms residual {:.2e})",
                fit.slope, fit.points, fit.residual
            ),
            Err(err) => println!("{method} e={e}: {err}"),
        }
    }
    Ok(())
}

fn list_methods() {
    println!("name           alias  family          stages  order  est.orders  fevals/step");
    for m in catalog() {
        let est: Vec<String> = m
            .estimator_specs
            .iter()
            .map(|s| s.order.to_string())
            .collect();
        println!(
            "{:<14} {:<6} {:<15} {:>6}  {:>5}  {:<10}  {:>11}",
            m.name,
            m.alias,
            m.scheme.family.to_string(),
            m.scheme.stages.len(),
            m.main_order,
            est.join(","),
            per_step_fevals(&m.scheme)
        );
    }
}
