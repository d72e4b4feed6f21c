//! Command-line front end: verify method coefficients, solve the bundled
//! test problems, run step-halving convergence studies, and locate events.
//!
//! Exit codes: 0 success, 1 a verification check failed, 2 bad input,
//! 3 the integration itself failed.

use clap::{Args, Parser, Subcommand};
use esdirk::dense_output::{self, order_condition_residual};
use esdirk::integrator::{self, Controls, Solution};
use esdirk::order_conditions::verify_order;
use esdirk::problems;
use esdirk::report;
use esdirk::stability::{a_stability_scan, laguerre, r_infinity_weights, stability_function};
use esdirk::tableau::{parse_tableau, ButcherTableau, Method};
use std::fmt::Write as _;
use std::process::ExitCode;
use std::str::FromStr;

#[derive(Parser)]
#[command(
    name = "esdirk",
    about = "Stiffly accurate singly diagonally implicit Runge-Kutta toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List builtin methods, test problems, and dense-output variants
    List,
    /// Check a method's structure, order, and stability properties
    Verify(VerifyArgs),
    /// Integrate a named test problem
    Solve(SolveArgs),
    /// Step-halving convergence study on a problem with a known solution
    Convergence(ConvergenceArgs),
    /// Integrate a problem with events and report the located roots
    Events(EventArgs),
}

#[derive(Args)]
struct MethodArg {
    /// Builtin method name (see `list`)
    #[arg(long, conflicts_with = "tableau_file")]
    method: Option<String>,
    /// Read coefficients from a tableau file instead
    #[arg(long)]
    tableau_file: Option<String>,
}

impl MethodArg {
    fn load(&self) -> Result<ButcherTableau, String> {
        match (&self.method, &self.tableau_file) {
            (Some(name), None) => ButcherTableau::builtin_by_name(name).map_err(|e| e.to_string()),
            (None, Some(path)) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| format!("cannot read {path}: {e}"))?;
                parse_tableau(&text).map_err(|e| e.to_string())
            }
            _ => Err("exactly one of --method or --tableau-file is required".into()),
        }
    }
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    method: MethodArg,
    /// Output format: text or csv
    #[arg(long, default_value = "text")]
    format: String,
    /// Write the report here instead of stdout
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    method: MethodArg,
    /// Problem name (see `list`)
    #[arg(long)]
    problem: String,
    #[arg(long, default_value_t = 1e-6)]
    rtol: f64,
    #[arg(long, default_value_t = 1e-8)]
    atol: f64,
    /// Initial step size (chosen automatically when absent)
    #[arg(long)]
    h0: Option<f64>,
    #[arg(long)]
    h_max: Option<f64>,
    /// Integrate with this constant step instead of adaptively
    #[arg(long)]
    fixed_h: Option<f64>,
    /// Also emit N dense samples on a uniform grid
    #[arg(long)]
    dense: Option<usize>,
    /// Continuous-extension variant for dense output
    #[arg(long)]
    dense_variant: Option<String>,
    /// Permit adaptive stepping with an estimator of uncertain order
    #[arg(long)]
    allow_uncertain_embedded: bool,
    /// Output format: csv or text
    #[arg(long, default_value = "text")]
    format: String,
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct ConvergenceArgs {
    #[command(flatten)]
    method: MethodArg,
    #[arg(long, default_value = "forced-linear")]
    problem: String,
    /// Coarsest step size
    #[arg(long, default_value_t = 0.1)]
    h0: f64,
    /// Number of step halvings
    #[arg(long, default_value_t = 5)]
    halvings: usize,
    #[arg(long, default_value = "text")]
    format: String,
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct EventArgs {
    #[command(flatten)]
    method: MethodArg,
    #[arg(long, default_value = "bouncing-ball")]
    problem: String,
    #[arg(long, default_value_t = 1e-8)]
    rtol: f64,
    #[arg(long, default_value_t = 1e-10)]
    atol: f64,
    #[arg(long)]
    out: Option<String>,
}

fn emit(out: &Option<String>, content: &str) -> Result<(), String> {
    match out {
        Some(path) => {
            std::fs::write(path, content).map_err(|e| format!("cannot write {path}: {e}"))
        }
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn check_line(out: &mut String, label: &str, pass: bool, detail: &str) -> bool {
    let _ = writeln!(
        out,
        "{:<44} {} {}",
        label,
        if pass { "pass" } else { "FAIL" },
        detail
    );
    pass
}

fn run_verify(args: &VerifyArgs) -> Result<ExitCode, String> {
    let tab = args.method.load()?;
    let mut out = String::new();
    let mut all_pass = true;
    let _ = writeln!(
        out,
        "method {} (s = {}, γ = {:.17}, orders {}/{})",
        tab.name, tab.s, tab.gamma, tab.p, tab.p_hat
    );

    let cons = tab.check_consistency();
    all_pass &= check_line(
        &mut out,
        "row-sum consistency",
        cons.pass,
        &format!("max residual {:.2e}", cons.max_residual),
    );
    let stage2 = tab.check_stage_order_2();
    check_line(
        &mut out,
        "stage order 2 structure (informational)",
        stage2.pass,
        &format!("max residual {:.2e}", stage2.max_residual),
    );

    if tab.p > 0 {
        let rep = verify_order(&tab, &tab.b, tab.p).map_err(|e| e.to_string())?;
        let worst = rep.rows.iter().map(|r| r.residual).fold(0.0, f64::max);
        all_pass &= check_line(
            &mut out,
            &format!("advancing order {}", tab.p),
            rep.pass,
            &format!("max residual {:.2e}", worst),
        );
        if let Some(next) = rep.next_order_pass {
            all_pass &= check_line(
                &mut out,
                &format!("order {} sharpness", tab.p + 1),
                !next,
                "(next order block must fail)",
            );
        }
    }
    if tab.p_hat > 0 && !tab.flags.embedded_order_uncertain {
        if let Some(bh) = &tab.b_hat {
            let rep = verify_order(&tab, bh, tab.p_hat).map_err(|e| e.to_string())?;
            let worst = rep.rows.iter().map(|r| r.residual).fold(0.0, f64::max);
            all_pass &= check_line(
                &mut out,
                &format!("embedded order {}", tab.p_hat),
                rep.pass,
                &format!("max residual {:.2e}", worst),
            );
        }
    }

    // stability: rational function, R(∞) two ways, boundary scan
    if tab.flags.esdirk {
        let sf = stability_function(&tab, &tab.b);
        let r_inf_tri = r_infinity_weights(&tab, &tab.b).ok();
        let detail = match r_inf_tri {
            Some(tri) => {
                // sf.r_inf is a magnitude; the triangular route is signed
                let agree = (sf.r_inf - tri.abs()).abs() <= 1e-10;
                all_pass &= check_line(
                    &mut out,
                    "R(∞) agreement (interpolation vs direct)",
                    agree,
                    &format!("{:.3e} vs {:.3e}", sf.r_inf, tri),
                );
                tri
            }
            None => sf.r_inf,
        };
        let scan = a_stability_scan(&sf, 2000);
        all_pass &= check_line(
            &mut out,
            "A-stability boundary scan",
            scan.a_stable_consistent,
            &format!(
                "min E = {:.2e}, deg P/Q = {}/{}",
                scan.min_e, scan.deg_p, scan.deg_q
            ),
        );
        // informational: the diagonal sits at a Laguerre root for the
        // family where R(∞) = 0 follows from the stage-count structure
        let n_implicit = tab.solution_stage.unwrap_or(tab.s) - 1;
        if n_implicit <= 8 && tab.gamma > 0.0 {
            let lag = laguerre(n_implicit, 1.0 / tab.gamma);
            let _ = writeln!(
                out,
                "L_{}(1/γ) = {:.2e}, |R(∞)| = {:.2e}",
                n_implicit,
                lag,
                detail.abs()
            );
        }
        if let Some(bh) = &tab.b_hat {
            if let Ok(r) = r_infinity_weights(&tab, bh) {
                let _ = writeln!(out, "embedded |R(∞)| = {:.6}", r.abs());
            } else {
                let sf_hat = stability_function(&tab, bh);
                let _ = writeln!(out, "embedded |R(∞)| = {:.6}", sf_hat.r_inf.abs());
            }
        }
    }

    // continuous extensions published for this method
    if let Ok(m) = Method::from_str(&tab.name) {
        for (method, variant) in dense_output::CATALOG {
            if method != m {
                continue;
            }
            let em = dense_output::builtin_extension(method, variant).map_err(|e| e.to_string())?;
            let res = order_condition_residual(&tab, &em);
            all_pass &= check_line(
                &mut out,
                &format!("extension {variant} order block"),
                res <= 1e-10,
                &format!("max residual {:.2e}", res),
            );
        }
    }

    let _ = writeln!(out, "overall: {}", if all_pass { "pass" } else { "FAIL" });
    emit(&args.out, &out)?;
    Ok(if all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn solve_named(
    tab: &ButcherTableau,
    problem_name: &str,
    controls: &Controls,
    fixed_h: Option<f64>,
) -> Result<Solution, ExitCode> {
    let Some(entry) = problems::by_name(problem_name) else {
        eprintln!("unknown problem '{problem_name}'; see `esdirk list`");
        return Err(ExitCode::from(2));
    };
    let problem = (entry.make)();
    let result = match fixed_h {
        Some(h) => integrator::solve_fixed(tab, &problem, controls, h),
        None => integrator::solve(tab, &problem, controls),
    };
    result.map_err(|e| {
        eprintln!("integration failed: {e}");
        ExitCode::from(3)
    })
}

fn run_solve(args: &SolveArgs) -> Result<ExitCode, String> {
    let tab = args.method.load()?;
    let controls = Controls {
        rtol: args.rtol,
        atol: args.atol,
        h0: args.h0,
        h_max: args.h_max,
        dense: args.dense.is_some(),
        dense_variant: args.dense_variant.clone(),
        allow_uncertain_embedded: args.allow_uncertain_embedded,
        ..Controls::default()
    };
    let sol = match solve_named(&tab, &args.problem, &controls, args.fixed_h) {
        Ok(s) => s,
        Err(code) => return Ok(code),
    };
    let mut out = String::new();
    match args.format.as_str() {
        "csv" => {
            out.push_str(&report::trajectory_csv(&sol));
            if let Some(n) = args.dense {
                out.push('\n');
                out.push_str(&report::dense_csv(&sol, n));
            }
        }
        "text" => {
            let xf = sol.final_state();
            let _ = writeln!(out, "t_final = {}", report::fmt_g(sol.final_time()));
            for (i, v) in xf.iter().enumerate() {
                let _ = writeln!(out, "x_{} = {}", i + 1, report::fmt_g(*v));
            }
            out.push_str(&report::stats_text(&sol.stats));
        }
        other => return Err(format!("unknown format '{other}'")),
    }
    emit(&args.out, &out)?;
    Ok(ExitCode::SUCCESS)
}

fn run_convergence(args: &ConvergenceArgs) -> Result<ExitCode, String> {
    let tab = args.method.load()?;
    let Some(entry) = problems::by_name(&args.problem) else {
        return Err(format!("unknown problem '{}'", args.problem));
    };
    let Some(analytic) = entry.analytic else {
        return Err(format!(
            "problem '{}' has no closed-form solution; convergence needs one",
            args.problem
        ));
    };
    let controls = Controls {
        rtol: 1e-12,
        atol: 1e-14,
        ..Controls::default()
    };
    let mut out = String::new();
    let csv = args.format == "csv";
    if csv {
        out.push_str("h,error,observed_order\n");
    }
    let mut errs: Vec<(f64, f64)> = Vec::new();
    let mut h = args.h0;
    for _ in 0..=args.halvings {
        let problem = (entry.make)();
        let tf = problem.t_span[1];
        let sol =
            integrator::solve_fixed(&tab, &problem, &controls, h).map_err(|e| e.to_string())?;
        let exact = analytic(tf);
        let err = (sol.final_state() - exact).norm();
        let rate = errs.last().map(|(hp, ep)| (ep / err).ln() / (hp / h).ln());
        if csv {
            let _ = writeln!(
                out,
                "{},{},{}",
                report::fmt_g(h),
                report::fmt_g(err),
                rate.map_or(String::from("nan"), |r| format!("{r:.4}")),
            );
        } else {
            let _ = writeln!(
                out,
                "h = {:10.4e}  error = {:12.5e}  order = {}",
                h,
                err,
                rate.map_or(String::from("   --"), |r| format!("{r:5.3}")),
            );
        }
        errs.push((h, err));
        h /= 2.0;
    }
    emit(&args.out, &out)?;
    Ok(ExitCode::SUCCESS)
}

fn run_events(args: &EventArgs) -> Result<ExitCode, String> {
    let tab = args.method.load()?;
    let controls = Controls {
        rtol: args.rtol,
        atol: args.atol,
        ..Controls::default()
    };
    let sol = match solve_named(&tab, &args.problem, &controls, None) {
        Ok(s) => s,
        Err(code) => return Ok(code),
    };
    let mut out = String::new();
    let _ = writeln!(out, "event,t,theta");
    for hit in &sol.events {
        let _ = writeln!(
            out,
            "{},{},{}",
            hit.name,
            report::fmt_g(hit.t),
            report::fmt_g(hit.theta)
        );
    }
    let _ = writeln!(out, "# {} events located", sol.events.len());
    emit(&args.out, &out)?;
    Ok(ExitCode::SUCCESS)
}

fn run_list() -> ExitCode {
    println!("methods:");
    for m in Method::ALL {
        let t = ButcherTableau::builtin(m);
        println!(
            "  {:<10} s = {}, orders {}/{}{}",
            t.name,
            t.s,
            t.p,
            t.p_hat,
            if t.flags.embedded_order_uncertain {
                " (embedded order uncertain)"
            } else {
                ""
            }
        );
    }
    println!("problems:");
    for p in problems::catalog() {
        println!("  {:<16} {}", p.name, p.description);
    }
    println!("dense-output variants:");
    for (m, v) in dense_output::CATALOG {
        println!("  {:<10} {v}", m.name());
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::List => return run_list(),
        Command::Verify(a) => run_verify(a),
        Command::Solve(a) => run_solve(a),
        Command::Convergence(a) => run_convergence(a),
        Command::Events(a) => run_events(a),
    };
    match result {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
