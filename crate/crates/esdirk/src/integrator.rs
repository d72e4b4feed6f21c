//! Adaptive and fixed-step time integration driver: embedded error
//! estimation, PI step-size control, iteration-matrix reuse, first-same-as-last
//! stage caching, dense output segments, and event-terminated stepping.

use crate::dense_output::{self, DenseOutputError, ExtensionMatrix, SideCondition};
use crate::events::{self, EventHit, EventSpec};
use crate::stage_solver::{
    initial_derivative, numerical_jacobian, scaled_rms, solve_stage, IterationMatrix, StageError,
};
use crate::tableau::{ButcherTableau, Method};
use nalgebra::{DMatrix, DVector};
use std::str::FromStr;
use std::sync::Arc;
use thiserror::Error;

pub type RhsFn = dyn Fn(f64, &DVector<f64>) -> DVector<f64>;
pub type JacFn = dyn Fn(f64, &DVector<f64>) -> DMatrix<f64>;

/// An initial value problem M ẋ = f(t, x), x(t0) = x0, with optional
/// analytic Jacobian, mass matrix (singular rows mark algebraic
/// components), and guard-function events.
pub struct IvpProblem {
    pub rhs: Box<RhsFn>,
    pub jacobian: Option<Box<JacFn>>,
    pub mass: Option<DMatrix<f64>>,
    pub x0: DVector<f64>,
    pub t_span: [f64; 2],
    pub events: Vec<EventSpec>,
}

impl IvpProblem {
    pub fn new(
        rhs: impl Fn(f64, &DVector<f64>) -> DVector<f64> + 'static,
        x0: DVector<f64>,
        t_span: [f64; 2],
    ) -> IvpProblem {
        IvpProblem {
            rhs: Box::new(rhs),
            jacobian: None,
            mass: None,
            x0,
            t_span,
            events: Vec::new(),
        }
    }

    pub fn with_jacobian(
        mut self,
        jac: impl Fn(f64, &DVector<f64>) -> DMatrix<f64> + 'static,
    ) -> IvpProblem {
        self.jacobian = Some(Box::new(jac));
        self
    }

    pub fn with_mass(mut self, mass: DMatrix<f64>) -> IvpProblem {
        self.mass = Some(mass);
        self
    }

    pub fn with_event(mut self, event: EventSpec) -> IvpProblem {
        self.events.push(event);
        self
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }
}

/// Solver tuning knobs. Defaults match a mid-accuracy stiff solve.
#[derive(Debug, Clone)]
pub struct Controls {
    pub rtol: f64,
    pub atol: f64,
    /// Componentwise absolute tolerances; overrides `atol` when present.
    pub atol_vec: Option<DVector<f64>>,
    pub h0: Option<f64>,
    pub h_min: Option<f64>,
    pub h_max: Option<f64>,
    pub max_steps: usize,
    /// Build dense-output segments even when no events are present.
    pub dense: bool,
    /// Continuous-extension variant name; None picks the method default.
    pub dense_variant: Option<String>,
    /// Permit adaptive stepping with an estimator of uncertain order.
    pub allow_uncertain_embedded: bool,
    /// Steps an iteration matrix or Jacobian may survive before refresh.
    pub reuse_age_cap: usize,
}

impl Default for Controls {
    fn default() -> Controls {
        Controls {
            rtol: 1e-6,
            atol: 1e-8,
            atol_vec: None,
            h0: None,
            h_min: None,
            h_max: None,
            max_steps: 100_000,
            dense: false,
            dense_variant: None,
            allow_uncertain_embedded: false,
            reuse_age_cap: 20,
        }
    }
}

impl Controls {
    /// Componentwise tolerance scale atolᵢ + rtol·|xᵢ|.
    pub fn scale(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = x.len();
        DVector::from_fn(n, |i, _| {
            let a = match &self.atol_vec {
                Some(v) => v[i],
                None => self.atol,
            };
            a + self.rtol * x[i].abs()
        })
    }
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("step size underflow at t = {t:.6e} (h = {h:.3e})")]
    StepSizeUnderflow { t: f64, h: f64 },
    #[error("step budget of {max_steps} exhausted at t = {t:.6e}")]
    MaxStepsExceeded { t: f64, max_steps: usize },
    #[error("method {method} has no embedded error estimator; adaptive stepping unavailable")]
    NoEmbeddedEstimator { method: String },
    #[error(
        "method {method} has an error estimator of uncertain order; \
         pass the override to use it adaptively"
    )]
    UncertainEmbeddedEstimator { method: String },
    #[error("Newton iteration failed at t = {t:.6e} with fixed step h = {h:.3e}")]
    NewtonFailure { t: f64, h: f64 },
    #[error("no continuous extension available for method {method}")]
    NoDenseOutput { method: String },
    #[error(transparent)]
    Stage(#[from] StageError),
    #[error(transparent)]
    Event(#[from] events::EventError),
    #[error(transparent)]
    Dense(#[from] DenseOutputError),
}

/// One attempted step: the state reached, its error estimate, and whether
/// the controller accepted it.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub t: f64,
    pub h: f64,
    pub x: DVector<f64>,
    pub err_norm: f64,
    pub accepted: bool,
    pub newton_iters: usize,
}

/// A step's stage derivatives plus the continuous-extension weights that
/// interpolate on it. Valid for θ ∈ [0, theta_end].
#[derive(Debug, Clone)]
pub struct DenseSegment {
    pub t0: f64,
    pub h: f64,
    pub theta_end: f64,
    pub x0: DVector<f64>,
    /// Stage derivatives, one row per stage.
    pub k: DMatrix<f64>,
    pub ext: Arc<ExtensionMatrix>,
}

impl DenseSegment {
    pub fn t_end(&self) -> f64 {
        self.t0 + self.h * self.theta_end
    }

    pub fn eval_theta(&self, theta: f64) -> Result<DVector<f64>, DenseOutputError> {
        dense_output::eval_extension(&self.ext, &self.x0, self.h, &self.k, theta)
    }

    pub fn eval_time(&self, t: f64) -> Result<DVector<f64>, DenseOutputError> {
        let mut theta = (t - self.t0) / self.h;
        // absorb roundoff at the segment ends
        if theta < 0.0 && theta > -1e-12 {
            theta = 0.0;
        }
        if theta > self.theta_end && theta < self.theta_end + 1e-12 {
            theta = self.theta_end;
        }
        self.eval_theta(theta)
    }

    pub fn contains(&self, t: f64) -> bool {
        let lo = self.t0.min(self.t_end());
        let hi = self.t0.max(self.t_end());
        (lo..=hi).contains(&t)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SolveStats {
    pub steps_accepted: usize,
    pub steps_rejected: usize,
    pub n_rhs: usize,
    pub n_jac: usize,
    pub n_lu: usize,
    pub n_newton_iters: usize,
    pub n_events: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SolveStatus {
    Completed,
    EventTerminated { t: f64 },
}

#[derive(Debug)]
pub struct Solution {
    /// Accepted grid points, including t0.
    pub t: Vec<f64>,
    pub x: Vec<DVector<f64>>,
    /// All attempts in order, rejected ones included.
    pub steps: Vec<StepRecord>,
    pub dense: Vec<DenseSegment>,
    pub events: Vec<EventHit>,
    pub stats: SolveStats,
    pub status: SolveStatus,
}

impl Solution {
    pub fn final_time(&self) -> f64 {
        *self.t.last().unwrap()
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.x.last().unwrap()
    }

    /// Dense evaluation at an interior time; None when no segment covers t.
    pub fn eval(&self, t: f64) -> Option<DVector<f64>> {
        let seg = self.dense.iter().find(|s| s.contains(t))?;
        seg.eval_time(t).ok()
    }
}

/// Picks the continuous extension used for dense output and event
/// localization: the published variant for builtin methods, otherwise a
/// freshly derived one anchored at the step endpoint.
pub fn extension_for(
    tab: &ButcherTableau,
    variant: Option<&str>,
) -> Result<ExtensionMatrix, SolveError> {
    if let Ok(m) = Method::from_str(&tab.name) {
        let v = match variant {
            Some(v) => Some(v.to_string()),
            None => dense_output::default_variant(m).map(str::to_string),
        };
        if let Some(v) = v {
            return Ok(dense_output::builtin_extension(m, &v)?);
        }
    }
    let q = tab.p.clamp(1, 3);
    for q_try in (1..=q).rev() {
        if let Ok(em) = dense_output::solve_extension(tab, q_try, &[SideCondition::EndpointB]) {
            return Ok(em);
        }
    }
    Err(SolveError::NoDenseOutput {
        method: tab.name.clone(),
    })
}

struct StepAttempt {
    k: DMatrix<f64>,
    x_next: DVector<f64>,
    err_norm: f64,
    newton_iters: usize,
    converged: bool,
    worst_rate: f64,
}

/// Stepping engine: owns the Jacobian/iteration-matrix caches and the
/// evaluation counters.
struct Stepper<'p> {
    tab: &'p ButcherTableau,
    problem: &'p IvpProblem,
    controls: Controls,
    stats: SolveStats,
    itmat: Option<IterationMatrix>,
    jac: Option<DMatrix<f64>>,
    jac_fresh: bool,
    jac_age: usize,
}

impl<'p> Stepper<'p> {
    fn new(tab: &'p ButcherTableau, problem: &'p IvpProblem, controls: Controls) -> Stepper<'p> {
        Stepper {
            tab,
            problem,
            controls,
            stats: SolveStats::default(),
            itmat: None,
            jac: None,
            jac_fresh: false,
            jac_age: 0,
        }
    }

    fn eval_rhs(&mut self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        self.stats.n_rhs += 1;
        (self.problem.rhs)(t, x)
    }

    fn refresh_jacobian(&mut self, t: f64, x: &DVector<f64>) {
        self.stats.n_jac += 1;
        let j = match &self.problem.jacobian {
            Some(jac) => jac(t, x),
            None => {
                let rhs = &self.problem.rhs;
                let mut nf = 0usize;
                let mut f = |t: f64, x: &DVector<f64>| {
                    nf += 1;
                    rhs(t, x)
                };
                let j = numerical_jacobian(&mut f, t, x, 1.0);
                self.stats.n_rhs += nf;
                j
            }
        };
        self.jac = Some(j);
        self.jac_fresh = true;
        self.jac_age = 0;
        self.itmat = None;
    }

    /// Refresh policy: recompute J when stale or forced, refactor when the
    /// step size drifted past the threshold or the factorization aged out.
    fn ensure_iteration_matrix(
        &mut self,
        t: f64,
        x: &DVector<f64>,
        h: f64,
        force_jac: bool,
    ) -> Result<(), StageError> {
        if force_jac || self.jac.is_none() || self.jac_age > self.controls.reuse_age_cap {
            self.refresh_jacobian(t, x);
        }
        let need = match &self.itmat {
            None => true,
            Some(m) => m.needs_refresh(h, self.controls.reuse_age_cap),
        };
        if need {
            let itmat = IterationMatrix::factor(
                self.problem.mass.as_ref(),
                self.jac.as_ref().unwrap(),
                h,
                self.tab.gamma,
                t,
            )?;
            self.itmat = Some(itmat);
            self.stats.n_lu += 1;
        }
        Ok(())
    }

    fn initial_k1(&mut self, t0: f64, x0: &DVector<f64>) -> Result<DVector<f64>, StageError> {
        let scale = self.controls.scale(x0);
        let rhs = &self.problem.rhs;
        let nf = std::cell::Cell::new(0usize);
        let mut f = |t: f64, x: &DVector<f64>| {
            nf.set(nf.get() + 1);
            rhs(t, x)
        };
        let jac_closure = &self.problem.jacobian;
        let mut njac = 0usize;
        let mut jfn = |t: f64, x: &DVector<f64>| match jac_closure {
            Some(j) => {
                njac += 1;
                j(t, x)
            }
            None => {
                let mut g = |t: f64, x: &DVector<f64>| {
                    nf.set(nf.get() + 1);
                    rhs(t, x)
                };
                numerical_jacobian(&mut g, t, x, 1.0)
            }
        };
        let k1 = initial_derivative(&mut f, &mut jfn, self.problem.mass.as_ref(), t0, x0, &scale);
        self.stats.n_rhs += nf.get();
        self.stats.n_jac += njac;
        k1
    }

    /// One full stage sweep at step size h. The iteration matrix must
    /// already be factored.
    fn attempt(&mut self, t_n: f64, x_n: &DVector<f64>, k1: &DVector<f64>, h: f64) -> StepAttempt {
        let tab = self.tab;
        let (s, n) = (tab.s, x_n.len());
        let mut k = DMatrix::zeros(s, n);
        k.row_mut(0).copy_from(&k1.transpose());

        let scale = self.controls.scale(x_n);
        let rhs = &self.problem.rhs;
        let mut nf = 0usize;
        let mut f = |t: f64, x: &DVector<f64>| {
            nf += 1;
            rhs(t, x)
        };
        let itmat = self.itmat.as_ref().expect("iteration matrix factored");
        let mass = self.problem.mass.as_ref();

        let mut newton_iters = 0usize;
        let mut worst_rate = 0.0_f64;
        let mut converged = true;
        let mut x_solution: Option<DVector<f64>> = None;

        for i in 1..s {
            let t_i = t_n + tab.c[i] * h;
            let mut psi = x_n.clone();
            for j in 0..i {
                let kj = k.row(j).transpose();
                psi += (h * tab.a[(i, j)]) * kj;
            }
            let x_guess = x_n + (h * tab.c[i]) * k1;
            let (x_i, k_i, rep) = solve_stage(
                &mut f, mass, itmat, t_i, &psi, h, tab.gamma, &x_guess, &scale,
            );
            newton_iters += rep.iterations;
            worst_rate = worst_rate.max(rep.rate_estimate);
            if !rep.converged {
                converged = false;
                break;
            }
            k.row_mut(i).copy_from(&k_i.transpose());
            if tab.solution_stage == Some(i + 1) {
                x_solution = Some(x_i);
            }
        }
        self.stats.n_rhs += nf;
        self.stats.n_newton_iters += newton_iters;

        if !converged {
            return StepAttempt {
                k,
                x_next: x_n.clone(),
                err_norm: f64::INFINITY,
                newton_iters,
                converged: false,
                worst_rate,
            };
        }

        // the advancing value is the designated stage itself, bit for bit
        let x_next = match x_solution {
            Some(x) => x,
            None => x_n + h * (k.transpose() * &tab.b),
        };
        let err_norm = match &tab.d {
            Some(d) => {
                let e = h * (k.transpose() * d);
                let err_scale = self.controls.scale(&x_next);
                scaled_rms(&e, &err_scale)
            }
            None => 0.0,
        };
        let err_norm = if x_next.iter().all(|v| v.is_finite()) && err_norm.is_finite() {
            err_norm
        } else {
            f64::INFINITY
        };
        StepAttempt {
            k,
            x_next,
            err_norm,
            newton_iters,
            converged: true,
            worst_rate,
        }
    }

    /// Crude step-size guess from the first derivative when the caller
    /// gives none.
    fn initial_step(&mut self, t0: f64, x0: &DVector<f64>, k1: &DVector<f64>, span: f64) -> f64 {
        let scale = self.controls.scale(x0);
        let d0 = scaled_rms(x0, &scale);
        let d1 = scaled_rms(k1, &scale);
        let mut h = if d1 > 1e-10 {
            0.01 * d0.max(1e-5) / d1
        } else {
            span * 1e-3
        };
        h = h.min(span / 10.0);
        if self.problem.mass.is_none() {
            // refine with a curvature probe
            let x1 = x0 + h * k1;
            let f1 = self.eval_rhs(t0 + h, &x1);
            let d2 = scaled_rms(&(&f1 - k1), &scale) / h;
            if d2 > 1e-10 {
                let k_exp = (self.order_for_control() + 1) as f64;
                h = h.min((0.01 / d2).powf(1.0 / k_exp));
            }
        }
        h.max(1e-12 * span)
    }

    fn order_for_control(&self) -> usize {
        let (p, ph) = (self.tab.p, self.tab.p_hat);
        match (p, ph) {
            (0, 0) => 1,
            (p, 0) | (0, p) => p,
            (p, ph) => p.min(ph),
        }
    }
}

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 5.0;
/// Integral and proportional step-control gains, divided by k = min(p, p̂)+1.
const GAIN_I: f64 = 0.4;
const GAIN_P: f64 = 0.3;

/// Adaptive solve over the problem's time span.
pub fn solve(
    tab: &ButcherTableau,
    problem: &IvpProblem,
    controls: &Controls,
) -> Result<Solution, SolveError> {
    if tab.d.is_none() {
        return Err(SolveError::NoEmbeddedEstimator {
            method: tab.name.clone(),
        });
    }
    if tab.flags.embedded_order_uncertain && !controls.allow_uncertain_embedded {
        return Err(SolveError::UncertainEmbeddedEstimator {
            method: tab.name.clone(),
        });
    }
    let want_dense = controls.dense || !problem.events.is_empty();
    if !problem.events.is_empty() && !tab.flags.event_safe {
        return Err(events::EventError::MethodNotEventSafe {
            method: tab.name.clone(),
        }
        .into());
    }
    let ext: Option<Arc<ExtensionMatrix>> = if want_dense {
        Some(Arc::new(extension_for(
            tab,
            controls.dense_variant.as_deref(),
        )?))
    } else {
        None
    };

    let [t0, tf] = problem.t_span;
    let span = (tf - t0).abs();
    let mut st = Stepper::new(tab, problem, controls.clone());

    let mut t = t0;
    let mut x = problem.x0.clone();
    let mut k1 = st.initial_k1(t, &x)?;
    let mut h = match controls.h0 {
        Some(h0) => h0,
        None => st.initial_step(t, &x, &k1, span),
    };
    if let Some(hmax) = controls.h_max {
        h = h.min(hmax);
    }
    h = h.min(span);

    let k_exp = (st.order_for_control() + 1) as f64;
    let mut err_prev: Option<f64> = None;
    let mut just_rejected = false;

    let mut sol = Solution {
        t: vec![t0],
        x: vec![x.clone()],
        steps: Vec::new(),
        dense: Vec::new(),
        events: Vec::new(),
        stats: SolveStats::default(),
        status: SolveStatus::Completed,
    };

    let mut attempts = 0usize;
    while t < tf && (tf - t) > 1e-14 * span.max(1.0) {
        attempts += 1;
        if attempts > controls.max_steps {
            st.stats.steps_rejected = sol.steps.iter().filter(|r| !r.accepted).count();
            sol.stats = st.stats;
            return Err(SolveError::MaxStepsExceeded {
                t,
                max_steps: controls.max_steps,
            });
        }
        let h_floor = controls
            .h_min
            .unwrap_or(0.0)
            .max(16.0 * f64::EPSILON * t.abs().max(1.0));
        if h < h_floor {
            sol.stats = st.stats;
            return Err(SolveError::StepSizeUnderflow { t, h });
        }
        // land exactly on tf
        if t + h >= tf {
            h = tf - t;
        } else if t + 1.05 * h >= tf {
            h = (tf - t) / 2.0;
        }

        st.ensure_iteration_matrix(t, &x, h, false)?;
        let att = st.attempt(t, &x, &k1, h);

        if !att.converged {
            if !st.jac_fresh {
                // stale Jacobian is the usual culprit; rebuild and retry
                st.ensure_iteration_matrix(t, &x, h, true)?;
                continue;
            }
            st.stats.steps_rejected += 1;
            sol.steps.push(StepRecord {
                t,
                h,
                x: x.clone(),
                err_norm: f64::INFINITY,
                accepted: false,
                newton_iters: att.newton_iters,
            });
            h *= 0.5;
            st.itmat = None;
            just_rejected = true;
            continue;
        }

        let err = att.err_norm;
        if err <= 1.0 {
            // accepted
            st.stats.steps_accepted += 1;
            sol.steps.push(StepRecord {
                t,
                h,
                x: att.x_next.clone(),
                err_norm: err,
                accepted: true,
                newton_iters: att.newton_iters,
            });

            let mut event_hit: Option<EventHit> = None;
            if let Some(ext) = &ext {
                let mut seg = DenseSegment {
                    t0: t,
                    h,
                    theta_end: 1.0,
                    x0: x.clone(),
                    k: att.k.clone(),
                    ext: ext.clone(),
                };
                if !problem.events.is_empty() {
                    if let Some(hit) = events::scan_segment(&problem.events, &seg)? {
                        seg.theta_end = hit.theta;
                        event_hit = Some(hit);
                    }
                }
                sol.dense.push(seg);
            }

            if let Some(hit) = event_hit {
                st.stats.n_events += 1;
                let spec = &problem.events[hit.event_index];
                let x_event = hit.x.clone();
                let x_after = match &spec.action {
                    Some(a) => a(hit.t, &x_event),
                    None => x_event.clone(),
                };
                t = hit.t;
                sol.t.push(t);
                sol.x.push(x_after.clone());
                sol.events.push(hit);
                if spec.terminal {
                    sol.status = SolveStatus::EventTerminated { t };
                    break;
                }
                // restart: stage cache and controller history are invalid
                x = x_after;
                st.jac_fresh = false;
                st.itmat = None;
                k1 = st.initial_k1(t, &x)?;
                err_prev = None;
                just_rejected = false;
                continue;
            }

            // FSAL: the designated solution stage is next step's first stage
            t += h;
            x = att.x_next;
            sol.t.push(t);
            sol.x.push(x.clone());
            k1 = match tab.solution_stage {
                Some(m) if tab.flags.fsal => att.k.row(m - 1).transpose(),
                _ => st.eval_rhs(t, &x),
            };
            if let Some(m) = st.itmat.as_mut() {
                m.age += 1;
            }
            st.jac_age += 1;
            st.jac_fresh = false;
            if att.worst_rate > 0.5 {
                // sluggish Newton: retire the Jacobian early
                st.jac_age = st.controls.reuse_age_cap + 1;
            }

            // PI controller in predictive form
            let e = err.max(1e-16);
            let fac = match err_prev {
                Some(ep) => {
                    SAFETY * e.powf(-GAIN_I / k_exp) * (ep.max(1e-16) / e).powf(GAIN_P / k_exp)
                }
                None => SAFETY * e.powf(-1.0 / k_exp),
            };
            let fac_max = if just_rejected { 1.0 } else { FAC_MAX };
            h *= fac.clamp(FAC_MIN, fac_max);
            if let Some(hmax) = controls.h_max {
                h = h.min(hmax);
            }
            err_prev = Some(e);
            just_rejected = false;
        } else {
            st.stats.steps_rejected += 1;
            sol.steps.push(StepRecord {
                t,
                h,
                x: att.x_next,
                err_norm: err,
                accepted: false,
                newton_iters: att.newton_iters,
            });
            let fac = SAFETY * err.powf(-1.0 / k_exp);
            h *= fac.clamp(FAC_MIN, 1.0);
            just_rejected = true;
        }
    }

    sol.stats = st.stats;
    Ok(sol)
}

/// Fixed-step solve: no error control, no events. The final step is
/// shortened to land on tf.
pub fn solve_fixed(
    tab: &ButcherTableau,
    problem: &IvpProblem,
    controls: &Controls,
    h: f64,
) -> Result<Solution, SolveError> {
    let [t0, tf] = problem.t_span;
    let ext: Option<Arc<ExtensionMatrix>> = if controls.dense {
        Some(Arc::new(extension_for(
            tab,
            controls.dense_variant.as_deref(),
        )?))
    } else {
        None
    };
    let mut st = Stepper::new(tab, problem, controls.clone());
    let mut t = t0;
    let mut x = problem.x0.clone();
    let mut k1 = st.initial_k1(t, &x)?;

    let mut sol = Solution {
        t: vec![t0],
        x: vec![x.clone()],
        steps: Vec::new(),
        dense: Vec::new(),
        events: Vec::new(),
        stats: SolveStats::default(),
        status: SolveStatus::Completed,
    };

    let mut steps = 0usize;
    while t < tf && (tf - t) > 1e-14 * (tf - t0).abs().max(1.0) {
        steps += 1;
        if steps > controls.max_steps {
            sol.stats = st.stats;
            return Err(SolveError::MaxStepsExceeded {
                t,
                max_steps: controls.max_steps,
            });
        }
        let h_step = h.min(tf - t);
        st.ensure_iteration_matrix(t, &x, h_step, false)?;
        let mut att = st.attempt(t, &x, &k1, h_step);
        if !att.converged && !st.jac_fresh {
            st.ensure_iteration_matrix(t, &x, h_step, true)?;
            att = st.attempt(t, &x, &k1, h_step);
        }
        if !att.converged {
            sol.stats = st.stats;
            return Err(SolveError::NewtonFailure { t, h: h_step });
        }
        st.stats.steps_accepted += 1;
        sol.steps.push(StepRecord {
            t,
            h: h_step,
            x: att.x_next.clone(),
            err_norm: att.err_norm,
            accepted: true,
            newton_iters: att.newton_iters,
        });
        if let Some(ext) = &ext {
            sol.dense.push(DenseSegment {
                t0: t,
                h: h_step,
                theta_end: 1.0,
                x0: x.clone(),
                k: att.k.clone(),
                ext: ext.clone(),
            });
        }
        t += h_step;
        x = att.x_next;
        sol.t.push(t);
        sol.x.push(x.clone());
        k1 = match tab.solution_stage {
            Some(m) if tab.flags.fsal => att.k.row(m - 1).transpose(),
            _ => st.eval_rhs(t, &x),
        };
        if let Some(m) = st.itmat.as_mut() {
            m.age += 1;
        }
        st.jac_age += 1;
        st.jac_fresh = false;
    }
    sol.stats = st.stats;
    Ok(sol)
}

/// One step of the method from (t_n, x_n): the advanced state, the error
/// estimate, and the stage derivative matrix.
pub struct StepResult {
    pub record: StepRecord,
    pub k: DMatrix<f64>,
}

pub fn step_once(
    tab: &ButcherTableau,
    problem: &IvpProblem,
    controls: &Controls,
    t_n: f64,
    x_n: &DVector<f64>,
    h: f64,
) -> Result<StepResult, SolveError> {
    let mut st = Stepper::new(tab, problem, controls.clone());
    let k1 = st.initial_k1(t_n, x_n)?;
    st.ensure_iteration_matrix(t_n, x_n, h, true)?;
    let att = st.attempt(t_n, x_n, &k1, h);
    if !att.converged {
        return Err(SolveError::NewtonFailure { t: t_n, h });
    }
    Ok(StepResult {
        record: StepRecord {
            t: t_n,
            h,
            x: att.x_next,
            err_norm: att.err_norm,
            accepted: true,
            newton_iters: att.newton_iters,
        },
        k: att.k,
    })
}
