//! Guard-function event detection on dense-output segments: sample the
//! continuous extension, bracket a sign change, then bisect to the root.

use crate::integrator::DenseSegment;
use nalgebra::DVector;
use thiserror::Error;

/// Sample count per segment when hunting for a sign change.
pub const GUARD_SAMPLES: usize = 9;

#[derive(Debug, Error)]
pub enum EventError {
    #[error(
        "method {method} evaluates stages outside the step interval; \
         event localization on its extension is unreliable"
    )]
    MethodNotEventSafe { method: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Any sign change.
    Any,
    /// Guard increasing through zero.
    Up,
    /// Guard decreasing through zero.
    Down,
}

pub type GuardFn = Box<dyn Fn(f64, &DVector<f64>) -> f64>;
pub type ActionFn = Box<dyn Fn(f64, &DVector<f64>) -> DVector<f64>>;

/// A root-finding event: solve g(t, x(t)) = 0 along the trajectory.
pub struct EventSpec {
    pub name: String,
    pub guard: GuardFn,
    pub direction: Direction,
    /// Stop the integration at the event time.
    pub terminal: bool,
    /// State jump applied at the event (e.g. restitution).
    pub action: Option<ActionFn>,
}

impl EventSpec {
    pub fn new(name: &str, guard: impl Fn(f64, &DVector<f64>) -> f64 + 'static) -> EventSpec {
        EventSpec {
            name: name.to_string(),
            guard: Box::new(guard),
            direction: Direction::Any,
            terminal: false,
            action: None,
        }
    }

    pub fn direction(mut self, d: Direction) -> EventSpec {
        self.direction = d;
        self
    }

    pub fn terminal(mut self) -> EventSpec {
        self.terminal = true;
        self
    }

    pub fn action(mut self, a: impl Fn(f64, &DVector<f64>) -> DVector<f64> + 'static) -> EventSpec {
        self.action = Some(Box::new(a));
        self
    }

    fn matches(&self, g_lo: f64, g_hi: f64) -> bool {
        match self.direction {
            Direction::Any => (g_lo <= 0.0 && g_hi > 0.0) || (g_lo >= 0.0 && g_hi < 0.0),
            Direction::Up => g_lo <= 0.0 && g_hi > 0.0,
            Direction::Down => g_lo >= 0.0 && g_hi < 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EventHit {
    pub event_index: usize,
    pub name: String,
    pub t: f64,
    /// Normalized position within the step, θ ∈ (0, 1].
    pub theta: f64,
    pub x: DVector<f64>,
}

/// Finds the earliest guard root on the segment, if any. Roots sitting
/// exactly at θ = 0 are skipped: they belong to the previous segment (or
/// to the restart state right after an event fired).
pub fn scan_segment(
    events: &[EventSpec],
    seg: &DenseSegment,
) -> Result<Option<EventHit>, crate::dense_output::DenseOutputError> {
    if events.is_empty() {
        return Ok(None);
    }
    let n_grid = GUARD_SAMPLES;
    let mut thetas = Vec::with_capacity(n_grid);
    let mut states = Vec::with_capacity(n_grid);
    for j in 0..n_grid {
        let theta = seg.theta_end * j as f64 / (n_grid - 1) as f64;
        states.push(seg.eval_theta(theta)?);
        thetas.push(theta);
    }

    let mut best: Option<EventHit> = None;
    for (idx, ev) in events.iter().enumerate() {
        let g: Vec<f64> = (0..n_grid)
            .map(|j| (ev.guard)(seg.t0 + seg.h * thetas[j], &states[j]))
            .collect();
        for j in 0..n_grid - 1 {
            // a zero left endpoint at the segment start is not a crossing
            if j == 0 && g[0] == 0.0 {
                continue;
            }
            if !ev.matches(g[j], g[j + 1]) {
                continue;
            }
            if g[j] == 0.0 {
                continue; // root already counted at the previous interval
            }
            let hit = refine(ev, idx, seg, thetas[j], g[j], thetas[j + 1], g[j + 1])?;
            match &best {
                Some(b) if b.theta <= hit.theta => {}
                _ => best = Some(hit),
            }
            break; // earliest root for this event found
        }
    }
    Ok(best)
}

/// Bisection on θ down to an absolute time tolerance of
/// 1e-10·max(1, |t|).
fn refine(
    ev: &EventSpec,
    idx: usize,
    seg: &DenseSegment,
    mut lo: f64,
    mut g_lo: f64,
    mut hi: f64,
    _g_hi: f64,
) -> Result<EventHit, crate::dense_output::DenseOutputError> {
    let t_scale = (seg.t0 + seg.h).abs().max(1.0);
    let theta_tol = (1e-10 * t_scale / seg.h.abs()).max(f64::EPSILON * 4.0);
    for _ in 0..200 {
        if hi - lo <= theta_tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let x_mid = seg.eval_theta(mid)?;
        let g_mid = (ev.guard)(seg.t0 + seg.h * mid, &x_mid);
        // keep the bracket that still contains the sign change
        if g_mid == 0.0 {
            lo = mid;
            hi = mid;
            break;
        }
        if (g_lo < 0.0) == (g_mid < 0.0) {
            lo = mid;
            g_lo = g_mid;
        } else {
            hi = mid;
        }
    }
    let theta = 0.5 * (lo + hi);
    let x = seg.eval_theta(theta)?;
    Ok(EventHit {
        event_index: idx,
        name: ev.name.clone(),
        t: seg.t0 + seg.h * theta,
        theta,
        x,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::{solve, Controls, IvpProblem, SolveStatus};
    use crate::tableau::{ButcherTableau, Method};
    use nalgebra::DVector;

    fn controls(rtol: f64) -> Controls {
        Controls {
            rtol,
            atol: rtol * 1e-2,
            ..Controls::default()
        }
    }

    #[test]
    fn linear_guard_crossing_is_located_to_tight_tolerance() {
        // ẋ = 1, x(0) = 0, guard x − 1/2: root at exactly t = 1/2
        let problem = IvpProblem::new(
            |_t, _x: &DVector<f64>| DVector::from_row_slice(&[1.0]),
            DVector::from_row_slice(&[0.0]),
            [0.0, 1.0],
        )
        .with_event(EventSpec::new("half", |_t, x: &DVector<f64>| x[0] - 0.5).terminal());
        let tab = ButcherTableau::builtin(Method::Esdirk23);
        let sol = solve(&tab, &problem, &controls(1e-8)).unwrap();
        assert_eq!(sol.events.len(), 1);
        assert!(
            (sol.events[0].t - 0.5).abs() < 1e-10,
            "t_event = {:.15}",
            sol.events[0].t
        );
        assert!(matches!(sol.status, SolveStatus::EventTerminated { .. }));
    }

    #[test]
    fn trigonometric_guard_crossing() {
        // ẋ = cos t, x(0) = 0 ⇒ x = sin t; guard x − 1/2 crosses at π/6
        let problem = IvpProblem::new(
            |t: f64, _x: &DVector<f64>| DVector::from_row_slice(&[t.cos()]),
            DVector::from_row_slice(&[0.0]),
            [0.0, 1.0],
        )
        .with_event(EventSpec::new("sin-half", |_t, x: &DVector<f64>| x[0] - 0.5).terminal());
        let tab = ButcherTableau::builtin(Method::Esdirk34);
        let sol = solve(&tab, &problem, &controls(1e-10)).unwrap();
        let expected = std::f64::consts::FRAC_PI_6;
        assert!(
            (sol.events[0].t - expected).abs() < 1e-8,
            "t_event = {:.12}, want {expected:.12}",
            sol.events[0].t
        );
    }

    #[test]
    fn direction_filter_skips_wrong_way_crossings() {
        // x = sin t crosses 0 upward at 0 (skipped: start) and downward at π
        let problem = IvpProblem::new(
            |t: f64, _x: &DVector<f64>| DVector::from_row_slice(&[t.cos()]),
            DVector::from_row_slice(&[0.0]),
            [0.0, 5.0],
        )
        .with_event(
            EventSpec::new("down", |_t, x: &DVector<f64>| x[0])
                .direction(Direction::Down)
                .terminal(),
        );
        let tab = ButcherTableau::builtin(Method::Esdirk34);
        let sol = solve(&tab, &problem, &controls(1e-9)).unwrap();
        assert_eq!(sol.events.len(), 1);
        assert!((sol.events[0].t - std::f64::consts::PI).abs() < 1e-7);
    }

    #[test]
    fn bouncing_ball_impact_times_match_closed_form() {
        // ḣ = v, v̇ = −g from h0 = 1, v0 = 0, restitution 0.8; impact k at
        // t_k = t_impact·(1 + 2e(1−e^k)/(1−e)) ... computed directly below
        let g = 9.81;
        let e = 0.8;
        let problem = IvpProblem::new(
            move |_t, z: &DVector<f64>| DVector::from_row_slice(&[z[1], -g]),
            DVector::from_row_slice(&[1.0, 0.0]),
            [0.0, 3.0],
        )
        .with_event(
            EventSpec::new("impact", |_t, z: &DVector<f64>| z[0])
                .direction(Direction::Down)
                .action(move |_t, z: &DVector<f64>| DVector::from_row_slice(&[0.0, -e * z[1]])),
        );
        let tab = ButcherTableau::builtin(Method::Esdirk23);
        let sol = solve(&tab, &problem, &controls(1e-8)).unwrap();

        let t1 = (2.0_f64 / g).sqrt();
        let mut expected = vec![t1];
        let mut v = e * g * t1;
        let mut t = t1;
        for _ in 0..6 {
            t += 2.0 * v / g;
            expected.push(t);
            v *= e;
        }
        let n_check = 5.min(sol.events.len());
        assert!(n_check >= 5, "only {} impacts found", sol.events.len());
        for (i, hit) in sol.events.iter().take(n_check).enumerate() {
            assert!(
                (hit.t - expected[i]).abs() < 1e-6,
                "impact {}: got {:.10}, want {:.10}",
                i,
                hit.t,
                expected[i]
            );
        }
    }

    #[test]
    fn two_crossings_in_one_step_reports_the_earlier() {
        // guard (x − 0.3)(x − 0.35) with ẋ = 1 and a large forced step:
        // both roots can fall inside one step; the earlier must win
        let problem = IvpProblem::new(
            |_t, _x: &DVector<f64>| DVector::from_row_slice(&[1.0]),
            DVector::from_row_slice(&[0.0]),
            [0.0, 1.0],
        )
        .with_event(
            EventSpec::new("pair", |_t, x: &DVector<f64>| (x[0] - 0.3) * (x[0] - 0.35)).terminal(),
        );
        let tab = ButcherTableau::builtin(Method::Esdirk23);
        let mut c = controls(1e-8);
        c.h0 = Some(0.5);
        c.h_max = Some(0.5);
        let sol = solve(&tab, &problem, &c).unwrap();
        assert!((sol.events[0].t - 0.3).abs() < 1e-8);
    }

    #[test]
    fn events_on_non_event_safe_method_are_refused() {
        let problem = IvpProblem::new(
            |_t, _x: &DVector<f64>| DVector::from_row_slice(&[1.0]),
            DVector::from_row_slice(&[0.0]),
            [0.0, 1.0],
        )
        .with_event(EventSpec::new("g", |_t, x: &DVector<f64>| x[0] - 0.5));
        let tab = ButcherTableau::builtin(Method::Esdirk32c);
        let err = solve(&tab, &problem, &controls(1e-8)).unwrap_err();
        assert!(err.to_string().contains("event"));
    }
}
