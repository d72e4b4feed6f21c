#![allow(clippy::excessive_precision)] // literals kept at full printed length

//! End-to-end acceptance checks, one per headline guarantee. Each test
//! prints a single pass line with the quantity it pinned down.

use esdirk::dense_output::{
    self, builtin_extension, catalog_conditions, eval_extension, order_condition_residual,
    solve_extension, DenseOutputError, SideCondition, SolutionMode,
};
use esdirk::events::{Direction, EventSpec};
use esdirk::integrator::{solve, solve_fixed, step_once, Controls, IvpProblem};
use esdirk::order_conditions::verify_order;
use esdirk::problems;
use esdirk::stability::{laguerre, r_infinity_weights, stability_function};
use esdirk::tableau::{ButcherTableau, Method, GAMMA_L3};
use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn decay(lambda: f64) -> IvpProblem {
    IvpProblem::new(
        move |_t, x: &DVector<f64>| lambda * x,
        DVector::from_row_slice(&[1.0]),
        [0.0, 1.0],
    )
    .with_jacobian(move |_t, _x| DMatrix::from_row_slice(1, 1, &[lambda]))
}

fn forced_linear() -> IvpProblem {
    IvpProblem::new(
        |t: f64, x: &DVector<f64>| DVector::from_row_slice(&[-x[0] + t.sin()]),
        DVector::from_row_slice(&[1.0]),
        [0.0, 1.0],
    )
    .with_jacobian(|_t, _x| DMatrix::from_row_slice(1, 1, &[-1.0]))
}

fn forced_linear_exact(t: f64) -> f64 {
    1.5 * (-t).exp() + (t.sin() - t.cos()) / 2.0
}

#[test]
fn criterion_1_tableau_fidelity() {
    // every builtin must reproduce its stored decimal digits from the
    // defining closed forms
    let s2 = 2.0_f64.sqrt();

    let t23 = ButcherTableau::builtin(Method::Esdirk23);
    assert!((t23.gamma - (2.0 - s2) / 2.0).abs() < 1e-16);
    let bh = t23.b_hat.as_ref().unwrap();
    for (got, want) in bh.iter().zip([0.2155, 0.6869, 0.0976]) {
        assert!((got - want).abs() < 5e-5, "embedded weight {got} vs {want}");
    }

    let t34 = ButcherTableau::builtin(Method::Esdirk34);
    assert_eq!(t34.gamma, GAMMA_L3);
    // γ is the relevant root of the cubic L₃(1/γ) = 0
    assert!(laguerre(3, 1.0 / t34.gamma).abs() < 1e-13);
    assert!((t34.b[1] - (-0.3768784522555561061)).abs() < 1e-18);
    assert!((t34.a[(2, 1)] - (-0.1083655513813208000)).abs() < 1e-18);
    assert!((t34.c[2] - 0.46823874485184439565).abs() < 1e-18);

    // all builtins: exact row-sum consistency at storage precision
    for m in Method::ALL {
        let t = ButcherTableau::builtin(m);
        let rep = t.check_consistency();
        assert!(rep.pass, "{m}: row-sum residual {:.2e}", rep.max_residual);
    }
    let t43 = ButcherTableau::builtin(Method::Esdirk43b);
    assert!(
        (t43.gamma - GAMMA_L3).abs() < 1e-14,
        "43b shares the L₃ diagonal"
    );
    println!("criterion 1 (tableau fidelity): pass");
}

#[test]
fn criterion_2_order_matrix() {
    let expected = [
        (Method::Esdirk12, 1, 2),
        (Method::Esdirk23, 2, 3),
        (Method::Esdirk34, 3, 4),
        (Method::Esdirk32a, 3, 2),
        (Method::Esdirk32b, 2, 3),
        (Method::Esdirk43b, 3, 4),
    ];
    for (m, p, p_hat) in expected {
        let t = ButcherTableau::builtin(m);
        assert_eq!((t.p, t.p_hat), (p, p_hat), "{m}: stored orders");

        let adv = verify_order(&t, &t.b, p).unwrap();
        let worst = adv.rows.iter().map(|r| r.residual).fold(0.0, f64::max);
        assert!(
            adv.pass && worst <= 1e-12,
            "{m}: advancing residual {worst:.2e}"
        );
        assert_eq!(
            adv.next_order_pass,
            Some(false),
            "{m}: order {p} must be sharp for the advancing weights"
        );

        let bh = t.b_hat.as_ref().unwrap();
        let emb = verify_order(&t, bh, p_hat).unwrap();
        let worst = emb.rows.iter().map(|r| r.residual).fold(0.0, f64::max);
        assert!(
            emb.pass && worst <= 1e-12,
            "{m}: embedded residual {worst:.2e}"
        );
    }
    println!("criterion 2 (order matrix): pass");
}

#[test]
fn criterion_3_stability_matrix() {
    // advancing: |R(∞)| = 0 via both the triangular solve and the degree
    // structure of the interpolated rational function
    for m in Method::ALL {
        let t = ButcherTableau::builtin(m);
        let direct = r_infinity_weights(&t, &t.b).unwrap();
        let sf = stability_function(&t, &t.b);
        if m == Method::Esdirk32c {
            // the γ = 1/2 pair is A- but not L-stable
            continue;
        }
        assert!(
            direct.abs() <= 1e-10,
            "{m}: direct |R(∞)| = {:.2e}",
            direct.abs()
        );
        assert!(
            sf.r_inf.abs() <= 1e-10,
            "{m}: rational |R(∞)| = {:.2e}",
            sf.r_inf
        );
        assert!(
            (direct.abs() - sf.r_inf.abs()).abs() <= 1e-10,
            "{m}: route disagreement"
        );
    }

    // embedded: finite magnitudes to printed precision, ∞ by degree overflow
    let finite = [
        (Method::Esdirk32a, 0.9569),
        (Method::Esdirk32b, 1.609),
        (Method::Esdirk43b, 0.7175),
    ];
    for (m, want) in finite {
        let t = ButcherTableau::builtin(m);
        let r = r_infinity_weights(&t, t.b_hat.as_ref().unwrap()).unwrap();
        assert!(
            (r.abs() - want).abs() <= 1e-3,
            "{m}: |R̂(∞)| = {:.5}",
            r.abs()
        );
    }
    for m in [
        Method::Esdirk12,
        Method::Esdirk23,
        Method::Esdirk34,
        Method::Esdirk45c,
    ] {
        let t = ButcherTableau::builtin(m);
        let sf = stability_function(&t, t.b_hat.as_ref().unwrap());
        assert!(
            sf.deg_p() > sf.deg_q() && sf.r_inf.is_infinite(),
            "{m}: embedded must overflow at infinity"
        );
    }
    let t32c = ButcherTableau::builtin(Method::Esdirk32c);
    let r = r_infinity_weights(&t32c, t32c.b_hat.as_ref().unwrap())
        .map(|r| r.abs())
        .unwrap_or_else(|_| {
            stability_function(&t32c, t32c.b_hat.as_ref().unwrap())
                .r_inf
                .abs()
        });
    assert!((r - 1.0).abs() <= 1e-3, "32c embedded |R̂(∞)| = {r:.5}");

    // diagonal values annihilating R(∞) are roots of L_{s−1}(1/γ)
    for (n, gamma) in [(1, 1.0), (2, 0.29289322), (3, 0.43586652), (4, 0.57281606)] {
        let res = laguerre(n, 1.0 / gamma).abs();
        assert!(res <= 1e-6, "L_{n}(1/{gamma}) = {res:.2e}");
    }
    println!("criterion 3 (stability matrix): pass");
}

#[test]
fn criterion_4_extension_fidelity() {
    for (m, variant) in dense_output::CATALOG {
        let t = ButcherTableau::builtin(m);
        let stored = builtin_extension(m, variant).unwrap();
        let res = order_condition_residual(&t, &stored);
        assert!(
            res <= 1e-10,
            "{m}/{variant}: stored order residual {res:.2e}"
        );

        // re-derive from the side conditions and compare coefficientwise
        let (q, conds) = catalog_conditions(m, variant).unwrap();
        if variant == "o3_mincurv" {
            continue; // minimizes a different objective than the 2-norm
        }
        let derived = solve_extension(&t, q, &conds).unwrap();
        let tol = match derived.solution_mode {
            SolutionMode::Unique => 1e-10,
            _ => 1e-8,
        };
        let diff = (&derived.b_bar - &stored.b_bar).abs().max();
        assert!(
            diff <= tol,
            "{m}/{variant}: re-derivation differs by {diff:.2e}"
        );
    }

    // asserted non-existence cases must come back infeasible
    let t23 = ButcherTableau::builtin(Method::Esdirk23);
    let t34 = ButcherTableau::builtin(Method::Esdirk34);
    let t43 = ButcherTableau::builtin(Method::Esdirk43b);
    let infeasible: [(&ButcherTableau, usize, Vec<SideCondition>); 7] = [
        (&t23, 3, vec![SideCondition::EndpointB]),
        (
            &t34,
            2,
            vec![
                SideCondition::StageMatch(2),
                SideCondition::StageMatch(3),
                SideCondition::StageMatch(4),
            ],
        ),
        (
            &t34,
            3,
            vec![SideCondition::StageMatch(2), SideCondition::StageMatch(4)],
        ),
        (
            &t34,
            3,
            vec![SideCondition::StageMatch(3), SideCondition::StageMatch(4)],
        ),
        (&t34, 4, vec![]),
        (
            &t43,
            3,
            vec![SideCondition::EndpointB, SideCondition::StageMatch(2)],
        ),
        (
            &t43,
            3,
            vec![SideCondition::EndpointB, SideCondition::StageMatch(3)],
        ),
    ];
    for (t, q, conds) in &infeasible {
        let err = solve_extension(t, *q, conds).unwrap_err();
        assert!(
            matches!(err, DenseOutputError::Infeasible { .. }),
            "{}: q = {q} with {conds:?} must be infeasible, got {err}",
            t.name
        );
    }
    println!("criterion 4 (extension fidelity): pass");
}

#[test]
fn criterion_5_convergence_orders() {
    let controls = Controls {
        rtol: 1e-13,
        atol: 1e-15,
        ..Controls::default()
    };
    for (m, p) in [
        (Method::Esdirk12, 1.0),
        (Method::Esdirk23, 2.0),
        (Method::Esdirk34, 3.0),
    ] {
        let tab = ButcherTableau::builtin(m);

        // global order over 5 halvings from h = 0.1
        let mut errs = Vec::new();
        let mut h = 0.1;
        for _ in 0..=5 {
            let sol = solve_fixed(&tab, &forced_linear(), &controls, h).unwrap();
            errs.push((sol.final_state()[0] - forced_linear_exact(1.0)).abs());
            h /= 2.0;
        }
        let global = (errs[3] / errs[5]).log2() / 2.0;
        assert!(
            (global - p).abs() <= 0.2,
            "{m}: global order {global:.3} vs {p}"
        );

        // one-step estimate order: the estimator shrinks like h^(p+1)
        let est_controls = Controls {
            rtol: 0.0,
            atol: 1.0,
            ..Controls::default()
        };
        let x_start = DVector::from_row_slice(&[forced_linear_exact(0.3)]);
        let mut ests = Vec::new();
        let mut h = 0.1;
        for _ in 0..=5 {
            let res = step_once(&tab, &forced_linear(), &est_controls, 0.3, &x_start, h).unwrap();
            ests.push(res.record.err_norm);
            h /= 2.0;
        }
        let local = (ests[3] / ests[5]).log2() / 2.0;
        assert!(
            (local - (p + 1.0)).abs() <= 0.3,
            "{m}: estimate order {local:.3} vs {}",
            p + 1.0
        );
    }
    println!("criterion 5 (convergence orders): pass");
}

#[test]
fn criterion_6_linear_step_identity() {
    let mut rng = StdRng::seed_from_u64(42);
    let controls = Controls {
        rtol: 1e-14,
        atol: 1e-16,
        ..Controls::default()
    };
    for _ in 0..20 {
        let lambda = -rng.gen_range(0.1..5.0);
        let h = rng.gen_range(0.01..0.5);
        for m in Method::ALL {
            let tab = ButcherTableau::builtin(m);
            let problem = decay(lambda);
            let res = step_once(&tab, &problem, &controls, 0.0, &problem.x0, h).unwrap();
            let expected = stability_function(&tab, &tab.b).eval_real(h * lambda);
            assert!(
                (res.record.x[0] - expected).abs() <= 1e-12,
                "{m}: λ = {lambda:.4}, h = {h:.4}: {} vs {expected}",
                res.record.x[0]
            );
        }
    }
    println!("criterion 6 (linear step identity): pass");
}

#[test]
fn criterion_7_stiff_and_dae_behavior() {
    // strongly stiff interpolation problem: observed order stays ≥ 2
    let tab = ButcherTableau::builtin(Method::Esdirk34);
    let controls = Controls {
        rtol: 1e-13,
        atol: 1e-15,
        ..Controls::default()
    };
    let mut errs = Vec::new();
    let mut h = 0.1;
    for _ in 0..=4 {
        let p = problems::prothero_robinson(-1e6);
        let tf = p.t_span[1];
        let sol = solve_fixed(&tab, &p, &controls, h).unwrap();
        errs.push((sol.final_state()[0] - tf.sin()).abs());
        h /= 2.0;
    }
    // the observed order converges to the stage-order limit 2 from below
    // (1.93, 1.97, 1.99, …), so pin it to a tight band around 2 rather
    // than a one-sided bound no finite h can reach
    let order = (errs[2] / errs[4]).log2() / 2.0;
    assert!(
        (order - 2.0).abs() <= 0.1,
        "stiff observed order {order:.3}, expected ≈ 2 (no reduction below stage order)"
    );

    // index-1 DAE over a long horizon: algebraic residual stays small in
    // scaled-tolerance units at every accepted step
    let rtol = 1e-6;
    let atol = 1e-10;
    let dae_controls = Controls {
        rtol,
        atol,
        ..Controls::default()
    };
    let p = problems::robertson(1.0e4);
    let sol = solve(&tab, &p, &dae_controls).unwrap();
    let mut worst = 0.0_f64;
    for x in &sol.x {
        let g = x[0] + x[1] + x[2] - 1.0;
        let scaled = g.abs() / (atol + rtol * x[2].abs());
        worst = worst.max(scaled);
    }
    assert!(worst <= 2.0, "worst scaled algebraic residual {worst:.3}");
    assert!(sol.final_time() >= 1.0e4 * (1.0 - 1e-12));
    println!("criterion 7 (stiff/DAE behavior): pass");
}

#[test]
fn criterion_8_event_location() {
    // bouncing ball: five impact times against the closed form
    let tab = ButcherTableau::builtin(Method::Esdirk23);
    let controls = Controls {
        rtol: 1e-8,
        atol: 1e-10,
        ..Controls::default()
    };
    let sol = solve(&tab, &problems::bouncing_ball(3.0), &controls).unwrap();
    let expected = problems::bouncing_ball_impact_times(5);
    assert!(
        sol.events.len() >= 5,
        "only {} impacts located",
        sol.events.len()
    );
    for (i, want) in expected.iter().enumerate() {
        let got = sol.events[i].t;
        assert!(
            (got - want).abs() <= 1e-6,
            "impact {i}: {got:.9} vs {want:.9}"
        );
    }

    // trivial linear crossing at exactly t = 1/2
    let problem = IvpProblem::new(
        |_t, _x: &DVector<f64>| DVector::from_row_slice(&[1.0]),
        DVector::from_row_slice(&[0.0]),
        [0.0, 1.0],
    )
    .with_event(
        EventSpec::new("half", |_t, x: &DVector<f64>| x[0] - 0.5)
            .direction(Direction::Up)
            .terminal(),
    );
    let sol = solve(&tab, &problem, &controls).unwrap();
    assert!(
        (sol.events[0].t - 0.5).abs() <= 1e-10,
        "linear crossing at {:.15}",
        sol.events[0].t
    );
    println!("criterion 8 (event location): pass");
}

#[test]
fn criterion_9_dense_output_order() {
    // local interpolation error over a θ-grid must shrink like h^(q+1)
    let cases = [(Method::Esdirk23, "o3"), (Method::Esdirk34, "o3_deriv")];
    let controls = Controls {
        rtol: 1e-13,
        atol: 1e-15,
        ..Controls::default()
    };
    for (m, variant) in cases {
        let tab = ButcherTableau::builtin(m);
        let em = builtin_extension(m, variant).unwrap();
        let mut errs = Vec::new();
        let mut h = 0.2;
        for _ in 0..=5 {
            let problem = forced_linear();
            let res = step_once(&tab, &problem, &controls, 0.0, &problem.x0, h).unwrap();
            let mut worst = 0.0_f64;
            for j in 1..=16 {
                let theta = j as f64 / 16.0;
                let x = eval_extension(&em, &problem.x0, h, &res.k, theta).unwrap();
                worst = worst.max((x[0] - forced_linear_exact(theta * h)).abs());
            }
            errs.push(worst);
            h /= 2.0;
        }
        let slope = (errs[3] / errs[5]).log2() / 2.0;
        let want = (em.q + 1) as f64;
        assert!(
            (slope - want).abs() <= 0.3,
            "{m}/{variant}: interpolation exponent {slope:.3} vs {want}"
        );
    }
    println!("criterion 9 (dense-output order): pass");
}
