//! Evolution equations whose solutions lift to nearly parallel G₂-structures.
//!
//! The evolving variables are `(a, b, Q₁, Q₂)`:
//!
//! ```text
//! a′  = c·A        b′  = c·B        c = −2λ/det P
//! Q₁′ = c·R₁ + P   Q₂′ = c·R₂ − P
//! ```
//!
//! `P` has no equation of its own; it is recovered at every stage from
//! `Q₁ + Q₂ = −λ·Adj(Pᵀ)`.

use std::io::Write;
use std::path::Path;

use nalgebra::{SMatrix, SVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exterior::Form;
use crate::families::ClosedForm;
use crate::structure::{
    adjugate, build_omega, compute_abr, mixed_form, normalization_residual,
    omega_squared_from_adjugate, polarized_adjugate, symmetry_residual, validate, Mat3, NhfStructure,
};
use crate::SINGULAR_DET;

/// The evolving variables, or a derivative of them.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowVars {
    pub a: f64,
    pub b: f64,
    pub q1: Mat3,
    pub q2: Mat3,
}

impl FlowVars {
    pub fn from_structure(s: &NhfStructure) -> Self {
        FlowVars {
            a: s.a(),
            b: s.b(),
            q1: *s.q1(),
            q2: *s.q2(),
        }
    }

    /// Variables of a closed-form point and their exact derivative.
    pub fn from_closed_form(c: &ClosedForm) -> (Self, Self) {
        let half = c.lambda / 2.0;
        let m = adjugate(&c.p.transpose());
        let dm = polarized_adjugate(&c.p.transpose(), &c.dp.transpose());
        let vars = FlowVars {
            a: c.a,
            b: c.b,
            q1: c.q - m * half,
            q2: -c.q - m * half,
        };
        let deriv = FlowVars {
            a: c.da,
            b: c.db,
            q1: c.dq - dm * half,
            q2: -c.dq - dm * half,
        };
        (vars, deriv)
    }

    fn axpy(&self, h: f64, d: &FlowVars) -> FlowVars {
        FlowVars {
            a: self.a + h * d.a,
            b: self.b + h * d.b,
            q1: self.q1 + d.q1 * h,
            q2: self.q2 + d.q2 * h,
        }
    }

    /// Largest component difference.
    pub fn max_diff(&self, other: &FlowVars) -> f64 {
        [
            (self.a - other.a).abs(),
            (self.b - other.b).abs(),
            (self.q1 - other.q1).abs().max(),
            (self.q2 - other.q2).abs().max(),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    /// `Q = (Q₁ − Q₂)/2`.
    pub fn q(&self) -> Mat3 {
        (self.q1 - self.q2) * 0.5
    }

    pub fn to_structure(&self, lambda: f64, p: &Mat3) -> Result<NhfStructure> {
        NhfStructure::new(lambda, self.a, self.b, *p, self.q())
    }
}

/// Right-hand side of the evolution equations.
pub fn rhs(vars: &FlowVars, p: &Mat3, lambda: f64) -> Result<FlowVars> {
    let det_p = p.determinant();
    if det_p.abs() < SINGULAR_DET {
        return Err(Error::SingularFlow {
            t: f64::NAN,
            reason: format!("|det P| = {:e}", det_p.abs()),
        });
    }
    let abr = compute_abr(vars.a, vars.b, &vars.q1, &vars.q2);
    let c = -2.0 * lambda / det_p;
    Ok(FlowVars {
        a: c * abr.a_cap,
        b: c * abr.b_cap,
        q1: abr.r1 * c + p,
        q2: abr.r2 * c - p,
    })
}

/// How the sign of `det P` is fixed when recovering `P`.
#[derive(Clone, Copy, Debug)]
pub enum PRef<'a> {
    Orientation(i8),
    /// Continuity with a nearby `P`.
    Previous(&'a Mat3),
}

/// Inverts `Adj(Pᵀ) = M = −(Q₁ + Q₂)/λ` using `(det P)² = det M` and
/// `Pᵀ = Adj(M)/det P`.
pub fn recover_p(q1: &Mat3, q2: &Mat3, lambda: f64, reference: PRef<'_>) -> Result<Mat3> {
    let m = -(q1 + q2) / lambda;
    let det_m = m.determinant();
    if !(det_m > 0.0) {
        return Err(Error::Recovery(format!("det Adj(Pᵀ) = {det_m:e} is not positive")));
    }
    let root = det_m.sqrt();
    let candidate = |sign: f64| adjugate(&m).transpose() / (sign * root);
    match reference {
        PRef::Orientation(o) if o == 1 || o == -1 => Ok(candidate(f64::from(o))),
        PRef::Orientation(o) => Err(Error::Recovery(format!("orientation must be ±1, got {o}"))),
        PRef::Previous(prev) => {
            let sign = prev.determinant().signum();
            let same = candidate(sign);
            let flipped = candidate(-sign);
            if (same - prev).abs().max() > (flipped - prev).abs().max() {
                return Err(Error::Recovery("det P changed sign between steps".into()));
            }
            Ok(same)
        }
    }
}

/// Solves `d/dt Adj(Pᵀ) = Ṁ` for `Ṗ`.
pub fn p_derivative(p: &Mat3, m_dot: &Mat3) -> Result<Mat3> {
    let pt = p.transpose();
    let mut lin = SMatrix::<f64, 9, 9>::zeros();
    for k in 0..9 {
        let mut e = Mat3::zeros();
        e[(k / 3, k % 3)] = 1.0;
        let col = polarized_adjugate(&pt, &e.transpose());
        for r in 0..9 {
            lin[(r, k)] = col[(r / 3, r % 3)];
        }
    }
    let rhs = SVector::<f64, 9>::from_fn(|r, _| m_dot[(r / 3, r % 3)]);
    let x = lin
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Recovery("Adj is not invertible at this P".into()))?;
    Ok(Mat3::from_fn(|i, j| x[3 * i + j]))
}

/// Residuals of the lifted G₂-structure `φ = dt∧ω + γ`, `ψ = ½ω² − dt∧Jγ`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct G2Residual {
    /// `dγ − (λ/2)ω²`
    pub dphi_spatial: f64,
    /// `γ′ − dω + λJγ`
    pub dphi_time: f64,
    /// `½dω²`
    pub dpsi_spatial: f64,
    /// `½(ω²)′ + dJγ`
    pub dpsi_time: f64,
    /// max-abs of `dφ − λψ`
    pub dphi: f64,
    /// max-abs of `dψ`
    pub dpsi: f64,
    /// `dφ − λψ` divided by the max-abs of `λψ`
    pub relative: f64,
}

impl G2Residual {
    pub fn max(&self) -> f64 {
        self.dphi.max(self.dpsi)
    }
}

/// G₂ residual for a structure moving with the given time derivative.
pub fn g2_residual_with(s: &NhfStructure, deriv: &FlowVars) -> Result<G2Residual> {
    let lambda = s.lambda();
    let m_dot = -(deriv.q1 + deriv.q2) / lambda;
    let gamma_dot = Form::monomial(&[1, 3, 5]).scale(deriv.a)
        + Form::monomial(&[2, 4, 6]).scale(deriv.b)
        + mixed_form(&deriv.q1, &deriv.q2);
    let omega2_dot = omega_squared_from_adjugate(&m_dot);
    let dw = s.omega().d();

    let phi_space = s.gamma().d() - s.omega_squared().scale(lambda / 2.0);
    let phi_time = gamma_dot - dw + s.j_gamma().scale(lambda);
    let psi_space = s.omega_squared().d().scale(0.5);
    let psi_time = omega2_dot.scale(0.5) + s.j_gamma().d();

    let dphi = phi_space.max_abs().max(phi_time.max_abs());
    let dpsi = psi_space.max_abs().max(psi_time.max_abs());
    let lambda_psi = s
        .omega_squared()
        .max_abs()
        .max(s.j_gamma().max_abs())
        * lambda.abs();
    Ok(G2Residual {
        dphi_spatial: phi_space.max_abs(),
        dphi_time: phi_time.max_abs(),
        dpsi_spatial: psi_space.max_abs(),
        dpsi_time: psi_time.max_abs(),
        dphi,
        dpsi,
        relative: dphi / lambda_psi,
    })
}

/// G₂ residual with the time derivative taken from the evolution equations.
pub fn g2_residual_state(s: &NhfStructure) -> Result<G2Residual> {
    let vars = FlowVars::from_structure(s);
    let deriv = rhs(&vars, s.p(), s.lambda())?;
    g2_residual_with(s, &deriv)
}

/// Max-abs of `dJγ + ω′∧ω`, with `ω′` from the recovered `Ṗ`.
pub fn djgamma_constraint(s: &NhfStructure) -> Result<f64> {
    let vars = FlowVars::from_structure(s);
    let deriv = rhs(&vars, s.p(), s.lambda())?;
    let m_dot = -(deriv.q1 + deriv.q2) / s.lambda();
    let p_dot = p_derivative(s.p(), &m_dot)?;
    let omega_dot = build_omega(&p_dot);
    Ok((s.j_gamma().d() + omega_dot.wedge(s.omega())).max_abs())
}

/// Largest component of the analytic derivative minus the evolution equations.
pub fn ode_residual(c: &ClosedForm) -> Result<f64> {
    let (vars, deriv) = FlowVars::from_closed_form(c);
    Ok(deriv.max_diff(&rhs(&vars, &c.p, c.lambda)?))
}

/// One accepted sample of a trajectory.
#[derive(Clone, Debug)]
pub struct FlowState {
    pub t: f64,
    pub vars: FlowVars,
    pub p: Mat3,
    pub norm_resid: f64,
    pub sym_resid: f64,
    pub g2_resid: f64,
}

impl FlowState {
    pub fn structure(&self, lambda: f64) -> Result<NhfStructure> {
        self.vars.to_structure(lambda, &self.p)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Halt {
    /// Last time at which the state was good.
    pub t: f64,
    pub reason: String,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub lambda: f64,
    pub h: f64,
    pub method: &'static str,
    pub states: Vec<FlowState>,
    pub halt: Option<Halt>,
}

#[derive(Clone, Copy, Debug)]
pub struct FlowOptions {
    pub t0: f64,
    /// Integration halts once `|det P|` drops below this.
    pub halt_det: f64,
    /// Normalization or symmetry drift above this aborts with an error.
    pub abort_drift: f64,
    /// Tolerance for validating the initial structure.
    pub validate_tol: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            t0: 0.0,
            halt_det: 1e-6,
            abort_drift: 1e-5,
            validate_tol: crate::DEFAULT_TOL,
        }
    }
}

fn sym_residual(vars: &FlowVars, p: &Mat3) -> f64 {
    symmetry_residual(p, &vars.q())
}

fn make_state(t: f64, vars: FlowVars, p: Mat3, lambda: f64) -> FlowState {
    let norm_resid = normalization_residual(vars.a, vars.b, &vars.q1, &vars.q2, p.determinant()).abs();
    let g2_resid = vars
        .to_structure(lambda, &p)
        .and_then(|s| g2_residual_state(&s))
        .map(|r| r.max())
        .unwrap_or(f64::NAN);
    FlowState {
        t,
        vars,
        p,
        norm_resid,
        sym_resid: sym_residual(&vars, &p),
        g2_resid,
    }
}

enum StepError {
    Halt(String),
    Fail(Error),
}

fn stage(vars: &FlowVars, prev_p: &Mat3, lambda: f64, halt_det: f64) -> std::result::Result<(Mat3, FlowVars), StepError> {
    let p = recover_p(&vars.q1, &vars.q2, lambda, PRef::Previous(prev_p)).map_err(|e| StepError::Halt(e.to_string()))?;
    if p.determinant().abs() < halt_det {
        return Err(StepError::Halt(format!("|det P| = {:e} below threshold", p.determinant().abs())));
    }
    let d = rhs(vars, &p, lambda).map_err(StepError::Fail)?;
    Ok((p, d))
}

fn rk4_step(vars: &FlowVars, p: &Mat3, lambda: f64, h: f64, halt_det: f64) -> std::result::Result<(FlowVars, Mat3), StepError> {
    let (_, k1) = stage(vars, p, lambda, halt_det)?;
    let (p2, k2) = stage(&vars.axpy(h / 2.0, &k1), p, lambda, halt_det)?;
    let (p3, k3) = stage(&vars.axpy(h / 2.0, &k2), &p2, lambda, halt_det)?;
    let (_, k4) = stage(&vars.axpy(h, &k3), &p3, lambda, halt_det)?;
    let next = FlowVars {
        a: vars.a + h / 6.0 * (k1.a + 2.0 * k2.a + 2.0 * k3.a + k4.a),
        b: vars.b + h / 6.0 * (k1.b + 2.0 * k2.b + 2.0 * k3.b + k4.b),
        q1: vars.q1 + (k1.q1 + k2.q1 * 2.0 + k3.q1 * 2.0 + k4.q1) * (h / 6.0),
        q2: vars.q2 + (k1.q2 + k2.q2 * 2.0 + k3.q2 * 2.0 + k4.q2) * (h / 6.0),
    };
    let p_next = recover_p(&next.q1, &next.q2, lambda, PRef::Previous(&p3)).map_err(|e| StepError::Halt(e.to_string()))?;
    if p_next.determinant().abs() < halt_det {
        return Err(StepError::Halt(format!("|det P| = {:e} below threshold", p_next.determinant().abs())));
    }
    Ok((next, p_next))
}

/// Classical fixed-step RK4 from `options.t0` to `t_end`.
pub fn integrate(initial: &NhfStructure, lambda: f64, t_end: f64, h: f64) -> Result<Trajectory> {
    integrate_with(initial, lambda, t_end, h, &FlowOptions::default())
}

pub fn integrate_with(
    initial: &NhfStructure,
    lambda: f64,
    t_end: f64,
    h: f64,
    options: &FlowOptions,
) -> Result<Trajectory> {
    if (lambda - initial.lambda()).abs() > 1e-12 * lambda.abs().max(1.0) {
        return Err(Error::Precondition(format!(
            "flow λ = {lambda} differs from the structure's λ = {}",
            initial.lambda()
        )));
    }
    if !(h > 0.0) || !(t_end > options.t0) {
        return Err(Error::Precondition(format!(
            "need h > 0 and t_end > t0, got h = {h}, t0 = {}, t_end = {t_end}",
            options.t0
        )));
    }
    let report = validate(initial, options.validate_tol);
    if !report.passed() {
        return Err(Error::InvalidStructure(format!(
            "initial data fails {}",
            report.failures().join(", ")
        )));
    }

    let steps = ((t_end - options.t0) / h - 1e-9).ceil().max(1.0) as usize;
    let mut vars = FlowVars::from_structure(initial);
    let mut p = *initial.p();
    let mut t = options.t0;
    let mut states = vec![make_state(t, vars, p, lambda)];
    let mut halt = None;
    for k in 0..steps {
        let step = if k + 1 == steps { t_end - t } else { h };
        match rk4_step(&vars, &p, lambda, step, options.halt_det) {
            Ok((next, p_next)) => {
                vars = next;
                p = p_next;
                t = if k + 1 == steps { t_end } else { options.t0 + (k + 1) as f64 * h };
                let state = make_state(t, vars, p, lambda);
                let drift = state.norm_resid.max(state.sym_resid);
                if !(drift <= options.abort_drift) {
                    return Err(Error::Drift {
                        t,
                        drift,
                        threshold: options.abort_drift,
                    });
                }
                states.push(state);
            }
            Err(StepError::Halt(reason)) => {
                halt = Some(Halt { t, reason });
                break;
            }
            Err(StepError::Fail(e)) => return Err(e),
        }
    }
    Ok(Trajectory {
        lambda,
        h,
        method: "rk4",
        states,
        halt,
    })
}

/// Integrates several initial conditions on separate threads.
pub fn integrate_batch(jobs: &[(NhfStructure, f64, f64, FlowOptions)]) -> Vec<Result<Trajectory>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|(s, t_end, h, opts)| scope.spawn(move || integrate_with(s, s.lambda(), *t_end, *h, opts)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("flow worker panicked"))
            .collect()
    })
}

/// Row-major 3×3 block for serialization.
fn rows(m: &Mat3) -> [[f64; 3]; 3] {
    std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))
}

#[derive(Serialize)]
struct StateRecord {
    t: f64,
    a: f64,
    b: f64,
    #[serde(rename = "Q1")]
    q1: [[f64; 3]; 3],
    #[serde(rename = "Q2")]
    q2: [[f64; 3]; 3],
    #[serde(rename = "P")]
    p: [[f64; 3]; 3],
    norm_resid: f64,
    sym_resid: f64,
    g2_resid: f64,
}

#[derive(Serialize)]
struct TrajectoryRecord<'a> {
    lambda: f64,
    h: f64,
    method: &'a str,
    halt: &'a Option<Halt>,
    states: Vec<StateRecord>,
}

/// Summary of a trajectory's diagnostics.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Summary {
    pub steps: usize,
    pub t_last: f64,
    pub max_norm_resid: f64,
    pub max_sym_resid: f64,
    pub max_g2_resid: f64,
}

impl Trajectory {
    pub fn last(&self) -> &FlowState {
        self.states.last().expect("trajectory holds its initial state")
    }

    /// The sample closest to `t`.
    pub fn nearest(&self, t: f64) -> &FlowState {
        self.states
            .iter()
            .min_by(|x, y| (x.t - t).abs().total_cmp(&(y.t - t).abs()))
            .expect("trajectory holds its initial state")
    }

    /// G₂ residual at the sample nearest to `t`.
    pub fn g2_residual(&self, t: f64) -> Result<G2Residual> {
        g2_residual_state(&self.nearest(t).structure(self.lambda)?)
    }

    pub fn summary(&self) -> Summary {
        let max = |f: fn(&FlowState) -> f64| self.states.iter().map(f).fold(0.0, f64::max);
        Summary {
            steps: self.states.len() - 1,
            t_last: self.last().t,
            max_norm_resid: max(|s| s.norm_resid),
            max_sym_resid: max(|s| s.sym_resid),
            max_g2_resid: max(|s| s.g2_resid),
        }
    }

    pub fn csv_header() -> Vec<String> {
        let mut h = vec!["t".to_string(), "a".into(), "b".into()];
        for name in ["Q1", "Q2", "P"] {
            for i in 1..=3 {
                for j in 1..=3 {
                    h.push(format!("{name}_{i}{j}"));
                }
            }
        }
        h.extend(["norm_resid", "sym_resid", "g2_resid"].map(String::from));
        h
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::csv_header())?;
        for s in &self.states {
            let mut row = vec![s.t, s.vars.a, s.vars.b];
            for m in [&s.vars.q1, &s.vars.q2, &s.p] {
                row.extend(rows(m).iter().flatten());
            }
            row.extend([s.norm_resid, s.sym_resid, s.g2_resid]);
            w.write_record(row.iter().map(|x| format!("{x:e}")))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        let rec = TrajectoryRecord {
            lambda: self.lambda,
            h: self.h,
            method: self.method,
            halt: &self.halt,
            states: self
                .states
                .iter()
                .map(|s| StateRecord {
                    t: s.t,
                    a: s.vars.a,
                    b: s.vars.b,
                    q1: rows(&s.vars.q1),
                    q2: rows(&s.vars.q2),
                    p: rows(&s.p),
                    norm_resid: s.norm_resid,
                    sym_resid: s.sym_resid,
                    g2_resid: s.g2_resid,
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&rec)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::{berger_point, nearly_kahler, sine_cone_point};
    use crate::structure::{sample_random_structure, SampleMethod};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn closed_forms_solve_the_flow() {
        for k in 0..20 {
            let t = 0.05 + k as f64 * (PI / 6.0 - 0.1) / 19.0;
            assert!(ode_residual(&berger_point(t).unwrap()).unwrap() < 1e-8, "Berger t = {t}");
        }
        for k in 0..20 {
            let t = -0.3 + 0.6 * k as f64 / 19.0;
            for branch in [1.0, -1.0] {
                assert!(ode_residual(&sine_cone_point(t, branch).unwrap()).unwrap() < 1e-8);
            }
        }
    }

    #[test]
    fn sine_cone_start() {
        let c = sine_cone_point(0.0, 1.0).unwrap();
        let (vars, deriv) = FlowVars::from_closed_form(&c);
        let r = rhs(&vars, &c.p, 4.0).unwrap();
        assert!(r.a.abs() < 1e-15 && r.b.abs() < 1e-15);
        // Q′ = (Q₁′ − Q₂′)/2 is diagonal with entry q′(0) = −√3/108.
        let dq = (r.q1 - r.q2) * 0.5;
        assert!((dq - Mat3::identity() * (-(3f64.sqrt()) / 108.0)).abs().max() < 1e-14);
        assert!(deriv.max_diff(&r) < 1e-14);
    }

    #[test]
    fn recover_identity() {
        let m = Mat3::identity();
        let p = recover_p(&(-m), &(-m), 2.0, PRef::Orientation(1)).unwrap();
        assert!((p - Mat3::identity()).abs().max() < 1e-15);
        assert!(recover_p(&m, &m, 1.0, PRef::Orientation(1)).is_err());
    }

    proptest! {
        #[test]
        fn recover_round_trip(v in proptest::array::uniform9(-2.0..2.0f64), split in proptest::array::uniform9(-1.0..1.0f64), lambda in 0.5..5.0f64) {
            let p = Mat3::from_row_slice(&v);
            prop_assume!(p.determinant().abs() > 0.05);
            let total = -adjugate(&p.transpose()) * lambda;
            let x = Mat3::from_row_slice(&split);
            let o = if p.determinant() > 0.0 { 1 } else { -1 };
            let r = recover_p(&(total - x), &x, lambda, PRef::Orientation(o)).unwrap();
            prop_assert!((r - p).abs().max() < 1e-10 * (1.0 + p.abs().max().powi(2)));
        }

        #[test]
        fn sum_of_rhs_is_r(seed in any::<u64>()) {
            let s = sample_random_structure(seed, SampleMethod::RotateFamily).unwrap();
            let d = rhs(&FlowVars::from_structure(&s), s.p(), s.lambda()).unwrap();
            let expected = s.abr().r * (-2.0 * s.lambda() / s.det_p());
            prop_assert!((d.q1 + d.q2 - expected).abs().max() <= 1e-12 * (1.0 + expected.abs().max()));
        }

        #[test]
        fn p_derivative_matches_closed_form(t in 0.05..(PI / 6.0 - 0.05)) {
            let c = berger_point(t).unwrap();
            let m_dot = polarized_adjugate(&c.p.transpose(), &c.dp.transpose());
            prop_assert!((p_derivative(&c.p, &m_dot).unwrap() - c.dp).abs().max() < 1e-10);
        }
    }

    #[test]
    fn berger_recovery() {
        for k in 0..10 {
            let t = 0.05 + k as f64 * 0.04;
            let c = berger_point(t).unwrap();
            let (vars, _) = FlowVars::from_closed_form(&c);
            let p = recover_p(&vars.q1, &vars.q2, c.lambda, PRef::Orientation(-1)).unwrap();
            assert!((p - c.p).abs().max() < 1e-9);
        }
    }

    #[test]
    fn sine_cone_reproduced() {
        let nk = nearly_kahler(4.0, 1.0).unwrap();
        let traj = integrate(&nk, 4.0, 0.3, 1e-3).unwrap();
        assert!(traj.halt.is_none());
        let end = traj.last();
        assert!((end.t - 0.3).abs() < 1e-12);
        let (exact, _) = FlowVars::from_closed_form(&sine_cone_point(0.3, 1.0).unwrap());
        assert!(end.vars.max_diff(&exact) < 1e-6);
        let sum = traj.summary();
        assert!(sum.max_norm_resid < 1e-6 && sum.max_sym_resid < 1e-6);
        assert!(sum.max_g2_resid < 1e-6);
        assert!(traj.g2_residual(0.15).unwrap().max() < 1e-6);
        for s in &traj.states[1..] {
            let st = s.structure(4.0).unwrap();
            assert!(djgamma_constraint(&st).unwrap() < 1e-7);
        }
    }

    #[test]
    fn berger_reproduced() {
        let c0 = berger_point(PI / 12.0).unwrap();
        let opts = FlowOptions {
            t0: PI / 12.0,
            ..FlowOptions::default()
        };
        let traj = integrate_with(&c0.structure().unwrap(), c0.lambda, PI / 8.0, 1e-3, &opts).unwrap();
        let (exact, _) = FlowVars::from_closed_form(&berger_point(PI / 8.0).unwrap());
        assert!(traj.last().vars.max_diff(&exact) < 1e-6);
    }

    #[test]
    fn static_nk_is_not_g2() {
        let nk = nearly_kahler(4.0, 1.0).unwrap();
        let zero = FlowVars {
            a: 0.0,
            b: 0.0,
            q1: Mat3::zeros(),
            q2: Mat3::zeros(),
        };
        let r = g2_residual_with(&nk, &zero).unwrap();
        assert!(r.relative > 0.1);
        assert!(g2_residual_state(&nk).unwrap().max() < 1e-12);
    }

    #[test]
    fn halts_near_singular_orbit() {
        let nk = nearly_kahler(4.0, 1.0).unwrap();
        let traj = integrate(&nk, 4.0, 1.0, 1e-3).unwrap();
        let halt = traj.halt.as_ref().expect("halt before π/4");
        assert!(halt.t < PI / 4.0 && halt.t > 0.5);
        assert!(traj.last().p.determinant().abs() >= 1e-6);
    }

    #[test]
    fn rejects_bad_input() {
        let nk = nearly_kahler(4.0, 1.0).unwrap();
        assert!(matches!(integrate(&nk, 3.0, 0.1, 1e-3), Err(Error::Precondition(_))));
        assert!(matches!(integrate(&nk, 4.0, -0.1, 1e-3), Err(Error::Precondition(_))));
        let bad = NhfStructure::new(4.0, 0.1, 0.0, Mat3::identity(), Mat3::zeros()).unwrap();
        assert!(matches!(integrate(&bad, 4.0, 0.1, 1e-3), Err(Error::InvalidStructure(_))));
    }

    #[test]
    fn csv_layout() {
        let nk = nearly_kahler(4.0, 1.0).unwrap();
        let traj = integrate(&nk, 4.0, 0.003, 1e-3).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        assert!(header.starts_with("t,a,b,Q1_11,Q1_12"));
        assert!(header.ends_with("P_33,norm_resid,sym_resid,g2_resid"));
        assert_eq!(header.split(',').count(), 3 + 27 + 3);
        assert_eq!(lines.count(), 4);
        let json: serde_json::Value = serde_json::from_str(&traj.to_json().unwrap()).unwrap();
        assert_eq!(json["states"].as_array().unwrap().len(), 4);
    }

    #[test]
    fn batch_matches_serial() {
        let jobs: Vec<_> = [4.0, 2.0]
            .iter()
            .map(|&l| (nearly_kahler(l, 1.0).unwrap(), 0.05, 1e-3, FlowOptions::default()))
            .collect();
        let out = integrate_batch(&jobs);
        for ((s, t_end, h, _), r) in jobs.iter().zip(out) {
            let serial = integrate(s, s.lambda(), *t_end, *h).unwrap();
            assert_eq!(r.unwrap().last().vars, serial.last().vars);
        }
    }
}
