//! Named test problems addressable from the command line: stiff and
//! nonstiff ODEs, a semi-explicit index-1 DAE, and event-driven systems.

use crate::events::{Direction, EventSpec};
use crate::integrator::IvpProblem;
use nalgebra::{DMatrix, DVector};

/// A catalog entry: a fresh problem instance plus, where available, the
/// closed-form solution for error measurement.
pub struct NamedProblem {
    pub name: &'static str,
    pub description: &'static str,
    pub make: fn() -> IvpProblem,
    pub analytic: Option<fn(f64) -> DVector<f64>>,
}

pub const STIFF_LAMBDA: f64 = -1e6;

fn decay() -> IvpProblem {
    IvpProblem::new(
        |_t, x: &DVector<f64>| -x.clone(),
        DVector::from_row_slice(&[1.0]),
        [0.0, 2.0],
    )
    .with_jacobian(|_t, _x| DMatrix::from_row_slice(1, 1, &[-1.0]))
}

fn decay_analytic(t: f64) -> DVector<f64> {
    DVector::from_row_slice(&[(-t).exp()])
}

fn decay_stiff() -> IvpProblem {
    IvpProblem::new(
        |_t, x: &DVector<f64>| STIFF_LAMBDA * x,
        DVector::from_row_slice(&[1.0]),
        [0.0, 1.0],
    )
    .with_jacobian(|_t, _x| DMatrix::from_row_slice(1, 1, &[STIFF_LAMBDA]))
}

fn decay_stiff_analytic(t: f64) -> DVector<f64> {
    DVector::from_row_slice(&[(STIFF_LAMBDA * t).exp()])
}

/// ẋ = −x + sin t with x(0) = 1: x(t) = (3/2)e^{−t} + (sin t − cos t)/2.
fn forced_linear() -> IvpProblem {
    IvpProblem::new(
        |t: f64, x: &DVector<f64>| DVector::from_row_slice(&[-x[0] + t.sin()]),
        DVector::from_row_slice(&[1.0]),
        [0.0, 1.0],
    )
    .with_jacobian(|_t, _x| DMatrix::from_row_slice(1, 1, &[-1.0]))
}

pub fn forced_linear_analytic(t: f64) -> DVector<f64> {
    DVector::from_row_slice(&[1.5 * (-t).exp() + (t.sin() - t.cos()) / 2.0])
}

fn van_der_pol(mu: f64, tf: f64) -> IvpProblem {
    IvpProblem::new(
        move |_t, x: &DVector<f64>| {
            DVector::from_row_slice(&[x[1], mu * (1.0 - x[0] * x[0]) * x[1] - x[0]])
        },
        DVector::from_row_slice(&[2.0, 0.0]),
        [0.0, tf],
    )
    .with_jacobian(move |_t, x: &DVector<f64>| {
        DMatrix::from_row_slice(
            2,
            2,
            &[
                0.0,
                1.0,
                -2.0 * mu * x[0] * x[1] - 1.0,
                mu * (1.0 - x[0] * x[0]),
            ],
        )
    })
}

/// ẋ = λ(x − φ(t)) + φ'(t) with φ = sin t; started on the slow manifold
/// the exact solution is x = sin t regardless of λ.
pub fn prothero_robinson(lambda: f64) -> IvpProblem {
    IvpProblem::new(
        move |t: f64, x: &DVector<f64>| {
            DVector::from_row_slice(&[lambda * (x[0] - t.sin()) + t.cos()])
        },
        DVector::from_row_slice(&[0.0]),
        [0.0, 2.0],
    )
    .with_jacobian(move |_t, _x| DMatrix::from_row_slice(1, 1, &[lambda]))
}

pub fn prothero_robinson_analytic(t: f64) -> DVector<f64> {
    DVector::from_row_slice(&[t.sin()])
}

fn prothero_robinson_default() -> IvpProblem {
    prothero_robinson(STIFF_LAMBDA)
}

/// Three-species kinetics in semi-explicit index-1 form: the third
/// component is pinned by conservation x1 + x2 + x3 = 1 instead of its
/// differential equation, making the mass matrix singular.
pub fn robertson(tf: f64) -> IvpProblem {
    IvpProblem::new(
        |_t, x: &DVector<f64>| {
            let r1 = 0.04 * x[0];
            let r2 = 1.0e4 * x[1] * x[2];
            let r3 = 3.0e7 * x[1] * x[1];
            DVector::from_row_slice(&[-r1 + r2, r1 - r2 - r3, x[0] + x[1] + x[2] - 1.0])
        },
        DVector::from_row_slice(&[1.0, 0.0, 0.0]),
        [0.0, tf],
    )
    .with_jacobian(|_t, x: &DVector<f64>| {
        DMatrix::from_row_slice(
            3,
            3,
            &[
                -0.04,
                1.0e4 * x[2],
                1.0e4 * x[1],
                0.04,
                -1.0e4 * x[2] - 6.0e7 * x[1],
                -1.0e4 * x[1],
                1.0,
                1.0,
                1.0,
            ],
        )
    })
    .with_mass(DMatrix::from_row_slice(
        3,
        3,
        &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
    ))
}

fn robertson_default() -> IvpProblem {
    robertson(1.0e4)
}

pub const BALL_GRAVITY: f64 = 9.81;
pub const BALL_RESTITUTION: f64 = 0.8;

/// Free fall from height 1 with restitution impacts at the ground.
pub fn bouncing_ball(tf: f64) -> IvpProblem {
    IvpProblem::new(
        |_t, z: &DVector<f64>| DVector::from_row_slice(&[z[1], -BALL_GRAVITY]),
        DVector::from_row_slice(&[1.0, 0.0]),
        [0.0, tf],
    )
    .with_jacobian(|_t, _z| DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]))
    .with_event(
        EventSpec::new("impact", |_t, z: &DVector<f64>| z[0])
            .direction(Direction::Down)
            .action(|_t, z: &DVector<f64>| {
                DVector::from_row_slice(&[0.0, -BALL_RESTITUTION * z[1]])
            }),
    )
}

/// Closed-form impact times for the bouncing ball.
pub fn bouncing_ball_impact_times(n: usize) -> Vec<f64> {
    let t1 = (2.0 / BALL_GRAVITY).sqrt();
    let mut times = vec![t1];
    let mut v = BALL_RESTITUTION * BALL_GRAVITY * t1;
    let mut t = t1;
    for _ in 1..n {
        t += 2.0 * v / BALL_GRAVITY;
        times.push(t);
        v *= BALL_RESTITUTION;
    }
    times
}

fn bouncing_ball_default() -> IvpProblem {
    bouncing_ball(3.0)
}

/// A quadratic guard with two nearby roots, for exercising in-step
/// bracketing: ẋ = 1 with guard (x − 0.3)(x − 0.35).
fn double_crossing() -> IvpProblem {
    IvpProblem::new(
        |_t, _x: &DVector<f64>| DVector::from_row_slice(&[1.0]),
        DVector::from_row_slice(&[0.0]),
        [0.0, 1.0],
    )
    .with_event(
        EventSpec::new("pair", |_t, x: &DVector<f64>| (x[0] - 0.3) * (x[0] - 0.35)).terminal(),
    )
}

pub fn catalog() -> Vec<NamedProblem> {
    vec![
        NamedProblem {
            name: "decay",
            description: "ẋ = −x, x(0) = 1 on [0, 2]",
            make: decay,
            analytic: Some(decay_analytic),
        },
        NamedProblem {
            name: "decay-stiff",
            description: "ẋ = −10⁶x, x(0) = 1 on [0, 1]",
            make: decay_stiff,
            analytic: Some(decay_stiff_analytic),
        },
        NamedProblem {
            name: "forced-linear",
            description: "ẋ = −x + sin t, x(0) = 1 on [0, 1]",
            make: forced_linear,
            analytic: Some(forced_linear_analytic),
        },
        NamedProblem {
            name: "vdp1",
            description: "Van der Pol, μ = 1 on [0, 10]",
            make: || van_der_pol(1.0, 10.0),
            analytic: None,
        },
        NamedProblem {
            name: "vdp1000",
            description: "Van der Pol, μ = 1000 on [0, 300] (stiff)",
            make: || van_der_pol(1000.0, 300.0),
            analytic: None,
        },
        NamedProblem {
            name: "prothero-robinson",
            description: "ẋ = λ(x − sin t) + cos t, λ = −10⁶ on [0, 2]",
            make: prothero_robinson_default,
            analytic: Some(prothero_robinson_analytic),
        },
        NamedProblem {
            name: "robertson",
            description: "three-species kinetics as an index-1 DAE on [0, 10⁴]",
            make: robertson_default,
            analytic: None,
        },
        NamedProblem {
            name: "bouncing-ball",
            description: "free fall with restitution impacts on [0, 3]",
            make: bouncing_ball_default,
            analytic: None,
        },
        NamedProblem {
            name: "double-crossing",
            description: "ẋ = 1 with the quadratic guard (x−0.3)(x−0.35)",
            make: double_crossing,
            analytic: None,
        },
    ]
}

pub fn by_name(name: &str) -> Option<NamedProblem> {
    catalog().into_iter().find(|p| p.name == name)
}
