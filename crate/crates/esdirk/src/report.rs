//! Output formatting shared by the command-line tool: CSV trajectories,
//! order-condition tables, and run statistics. Numbers print with 17
//! significant digits so values round-trip through text.

use crate::integrator::{Solution, SolveStats};
use crate::order_conditions::OrderReport;
use std::fmt::Write as _;

/// Full-precision float formatting (17 significant digits).
pub fn fmt_g(x: f64) -> String {
    format!("{x:.16e}")
}

/// One row per step attempt: `t,h,err_norm,accepted,x_1..x_n`, preceded by
/// the initial state.
pub fn trajectory_csv(sol: &Solution) -> String {
    let n = sol.x[0].len();
    let mut out = String::from("t,h,err_norm,accepted");
    for i in 1..=n {
        let _ = write!(out, ",x_{i}");
    }
    out.push('\n');
    let _ = write!(out, "{},{},{},1", fmt_g(sol.t[0]), fmt_g(0.0), fmt_g(0.0));
    for v in sol.x[0].iter() {
        let _ = write!(out, ",{}", fmt_g(*v));
    }
    out.push('\n');
    for rec in &sol.steps {
        let _ = write!(
            out,
            "{},{},{},{}",
            fmt_g(rec.t + rec.h),
            fmt_g(rec.h),
            fmt_g(rec.err_norm),
            u8::from(rec.accepted)
        );
        for v in rec.x.iter() {
            let _ = write!(out, ",{}", fmt_g(*v));
        }
        out.push('\n');
    }
    out
}

/// Dense samples on a uniform time grid, marked with `interp=1` to
/// distinguish them from step endpoints.
pub fn dense_csv(sol: &Solution, n_samples: usize) -> String {
    let n = sol.x[0].len();
    let mut out = String::from("t,interp");
    for i in 1..=n {
        let _ = write!(out, ",x_{i}");
    }
    out.push('\n');
    let (t0, tf) = (sol.t[0], sol.final_time());
    for j in 0..n_samples {
        let t = t0 + (tf - t0) * j as f64 / (n_samples - 1).max(1) as f64;
        if let Some(x) = sol.eval(t) {
            let _ = write!(out, "{},1", fmt_g(t));
            for v in x.iter() {
                let _ = write!(out, ",{}", fmt_g(*v));
            }
            out.push('\n');
        }
    }
    out
}

/// One row per rooted tree: id, order, weight, target, residual, verdict.
pub fn order_report_csv(report: &OrderReport) -> String {
    let mut out = String::from("tree,order,phi,target,residual,pass\n");
    for row in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            row.tree_id,
            row.order,
            fmt_g(row.phi),
            fmt_g(row.target),
            fmt_g(row.residual),
            u8::from(row.pass)
        );
    }
    out
}

pub fn order_report_text(label: &str, report: &OrderReport) -> String {
    let mut out = format!(
        "{label}: claimed order {} — {}\n",
        report.claimed_p,
        if report.pass { "pass" } else { "FAIL" }
    );
    for row in &report.rows {
        let _ = writeln!(
            out,
            "  tree {:>2} (order {}): residual {:9.2e} {}",
            row.tree_id,
            row.order,
            row.residual,
            if row.pass { "ok" } else { "FAIL" }
        );
    }
    if let Some(next) = report.next_order_pass {
        let _ = writeln!(
            out,
            "  order {}: {}",
            report.claimed_p + 1,
            if next {
                "also satisfied (order understated)"
            } else {
                "fails, as expected for a sharp order"
            }
        );
    }
    out
}

pub fn stats_csv(stats: &SolveStats) -> String {
    format!(
        "steps_accepted,steps_rejected,n_rhs,n_jac,n_lu,n_newton_iters,n_events\n\
         {},{},{},{},{},{},{}\n",
        stats.steps_accepted,
        stats.steps_rejected,
        stats.n_rhs,
        stats.n_jac,
        stats.n_lu,
        stats.n_newton_iters,
        stats.n_events
    )
}

pub fn stats_text(stats: &SolveStats) -> String {
    format!(
        "steps: {} accepted, {} rejected; rhs evals: {}; jacobians: {}; \
         factorizations: {}; newton iterations: {}; events: {}\n",
        stats.steps_accepted,
        stats.steps_rejected,
        stats.n_rhs,
        stats.n_jac,
        stats.n_lu,
        stats.n_newton_iters,
        stats.n_events
    )
}
