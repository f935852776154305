//! The `(λ, a, b, P, Q)` parameterization and everything derived from it.
//!
//! With `M = Adj(Pᵀ)` the structure is
//!
//! ```text
//! Q₁ = Q − (λ/2)M,   Q₂ = −Q − (λ/2)M
//! ω  = Σ P_ij e^{2i−1}∧e^{2j}
//! γ  = a e¹³⁵ + b e²⁴⁶ + Σ (Q₁)_ij de^{2i−1}∧e^{2j} + Σ (Q₂)_ij e^{2i−1}∧de^{2j}
//! ```
//!
//! and it is a genuine SU(3)-structure when γ∧ω = 0, the normalization
//! holds and the induced metric is positive definite. The Λ³A⊗Λ²B and
//! Λ²A⊗Λ³B parts of γ∧ω vanish exactly when `PᵀQ` and `QPᵀ` are both
//! symmetric, so generically `P` and `Q` diagonalize together.

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::{Quaternion, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exterior::{spd_inverse, two_form_matrix, Form, Matrix6, Vector6};
use crate::families;
use crate::SINGULAR_DET;

pub type Mat3 = nalgebra::Matrix3<f64>;

/// Transposed cofactor matrix, `M·Adj(M) = det(M)·Id` for every `M`.
pub fn adjugate(m: &Mat3) -> Mat3 {
    let c = |r0: usize, r1: usize, c0: usize, c1: usize| {
        m[(r0, c0)] * m[(r1, c1)] - m[(r0, c1)] * m[(r1, c0)]
    };
    Mat3::new(
        c(1, 2, 1, 2),
        -c(0, 2, 1, 2),
        c(0, 1, 1, 2),
        -c(1, 2, 0, 2),
        c(0, 2, 0, 2),
        -c(0, 1, 0, 2),
        c(1, 2, 0, 1),
        -c(0, 2, 0, 1),
        c(0, 1, 0, 1),
    )
}

/// Mixed bilinear term `Adj(P+X) − Adj(P) − Adj(X)`; since `Adj` is
/// quadratic this is also the derivative of `Adj` at `P` in direction `X`.
pub fn polarized_adjugate(p: &Mat3, x: &Mat3) -> Mat3 {
    adjugate(&(p + x)) - adjugate(p) - adjugate(x)
}

fn mat_max_abs(m: &Mat3) -> f64 {
    m.abs().max()
}

/// Largest antisymmetric entry of `PᵀQ` and `QPᵀ`; zero iff γ∧ω = 0.
pub fn symmetry_residual(p: &Mat3, q: &Mat3) -> f64 {
    let ptq = p.transpose() * q;
    let qpt = q * p.transpose();
    mat_max_abs(&(ptq - ptq.transpose())).max(mat_max_abs(&(qpt - qpt.transpose())))
}

/// Precomputed building blocks indexed by `(i, j)` with 0-based `i, j`.
struct Blocks {
    /// `e^{2i−1} ∧ e^{2j}`
    omega: [[Form; 3]; 3],
    /// `de^{2i−1} ∧ e^{2j}`
    left: [[Form; 3]; 3],
    /// `e^{2i−1} ∧ de^{2j}`
    right: [[Form; 3]; 3],
    /// `de^{2i−1} ∧ de^{2j}`
    dd: [[Form; 3]; 3],
}

fn blocks() -> &'static Blocks {
    static BLOCKS: OnceLock<Blocks> = OnceLock::new();
    BLOCKS.get_or_init(|| {
        let e = |k: usize| Form::monomial(&[k]);
        let table = |f: &dyn Fn(usize, usize) -> Form| {
            std::array::from_fn(|i| std::array::from_fn(|j| f(2 * i + 1, 2 * j + 2)))
        };
        Blocks {
            omega: table(&|o, v| e(o).wedge(&e(v))),
            left: table(&|o, v| e(o).d().wedge(&e(v))),
            right: table(&|o, v| e(o).wedge(&e(v).d())),
            dd: table(&|o, v| e(o).d().wedge(&e(v).d())),
        }
    })
}

fn combine(table: &[[Form; 3]; 3], m: &Mat3, degree: usize) -> Form {
    let mut out = Form::zero(degree);
    for i in 0..3 {
        for j in 0..3 {
            if m[(i, j)] != 0.0 {
                out += &table[i][j].scale(m[(i, j)]);
            }
        }
    }
    out
}

/// `Σ X_ij de^{2i−1}∧e^{2j} + Σ Y_ij e^{2i−1}∧de^{2j}`.
pub fn mixed_form(x: &Mat3, y: &Mat3) -> Form {
    let b = blocks();
    combine(&b.left, x, 3) + combine(&b.right, y, 3)
}

/// `ω = Σ P_ij e^{2i−1}∧e^{2j}`.
pub fn build_omega(p: &Mat3) -> Form {
    combine(&blocks().omega, p, 2)
}

/// `ω² = −2 Σ Adj(Pᵀ)_ij de^{2i−1}∧de^{2j}`.
pub fn omega_squared(p: &Mat3) -> Form {
    omega_squared_from_adjugate(&adjugate(&p.transpose()))
}

/// `−2 Σ M_ij de^{2i−1}∧de^{2j}`, linear in `M = Adj(Pᵀ)`.
pub fn omega_squared_from_adjugate(m: &Mat3) -> Form {
    combine(&blocks().dd, &(-2.0 * m), 4)
}

/// The symmetric primitive `δ` with `dδ = ω²` and `δ∧ω = 0`.
pub fn build_delta(p: &Mat3) -> Form {
    let m = -adjugate(&p.transpose());
    mixed_form(&m, &m)
}

/// `(Q₁, Q₂)` from `(λ, P, Q)`.
pub fn q1_q2(lambda: f64, p: &Mat3, q: &Mat3) -> (Mat3, Mat3) {
    let m = adjugate(&p.transpose()) * (lambda / 2.0);
    (q - m, -q - m)
}

pub fn build_gamma(lambda: f64, a: f64, b: f64, p: &Mat3, q: &Mat3) -> Form {
    let (q1, q2) = q1_q2(lambda, p, q);
    gamma_from(a, b, &q1, &q2)
}

fn gamma_from(a: f64, b: f64, q1: &Mat3, q2: &Mat3) -> Form {
    Form::monomial(&[1, 3, 5]).scale(a) + Form::monomial(&[2, 4, 6]).scale(b) + mixed_form(q1, q2)
}

/// The scalars and matrices that make up `Jγ` and drive the flow.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Abr {
    pub a_cap: f64,
    pub b_cap: f64,
    pub r1: Mat3,
    pub r2: Mat3,
    pub r: Mat3,
}

pub fn compute_abr(a: f64, b: f64, q1: &Mat3, q2: &Mat3) -> Abr {
    let t = (q1.transpose() * q2).trace();
    let a_cap = a * t - 2.0 * q1.determinant() - a * a * b;
    let b_cap = -(b * t - 2.0 * q2.determinant() - a * b * b);
    let r1 = -((a * b + t) * q1 - 2.0 * a * adjugate(&q2.transpose()) - 2.0 * q1 * q2.transpose() * q1);
    let r2 = (a * b + t) * q2 - 2.0 * b * adjugate(&q1.transpose()) - 2.0 * q2 * q1.transpose() * q2;
    Abr {
        a_cap,
        b_cap,
        r1,
        r2,
        r: r1 + r2,
    }
}

/// The bracket that `(det P)²` must equal.
pub fn normalization_bracket(a: f64, b: f64, q1: &Mat3, q2: &Mat3) -> f64 {
    let q1tq2 = q1.transpose() * q2;
    let t = q1tq2.trace();
    -(a * b - t).powi(2) - 4.0 * (a * q2.determinant() + b * q1.determinant())
        + 4.0 * adjugate(&q1tq2).trace()
}

/// `(det P)² − bracket`; zero exactly when `J² = −Id`.
pub fn normalization_residual(a: f64, b: f64, q1: &Mat3, q2: &Mat3, det_p: f64) -> f64 {
    det_p * det_p - normalization_bracket(a, b, q1, q2)
}

/// Closed-form almost complex structure, no validity check.
///
/// The result acts on tangent vectors: column `k` is `J e_{k+1}`. Its
/// transpose acts on the coframe, row `r` holding the coefficients of
/// `J e^{r+1}`.
pub fn build_j_unchecked(a: f64, b: f64, q1: &Mat3, q2: &Mat3, det_p: f64) -> Matrix6 {
    let q2q1t = q2 * q1.transpose();
    let q1tq2 = q1.transpose() * q2;
    let t = q1tq2.trace();
    let odd = a * q2 - adjugate(&q1.transpose());
    let even = b * q1.transpose() - adjugate(q2);
    let mut co = Matrix6::zeros();
    for r in 0..3 {
        co[(2 * r, 2 * r)] += a * b - t;
        co[(2 * r + 1, 2 * r + 1)] -= a * b - t;
        for i in 0..3 {
            co[(2 * r, 2 * i)] += 2.0 * q2q1t[(r, i)];
            co[(2 * r, 2 * i + 1)] -= 2.0 * odd[(r, i)];
            co[(2 * r + 1, 2 * i)] += 2.0 * even[(r, i)];
            co[(2 * r + 1, 2 * i + 1)] -= 2.0 * q1tq2[(r, i)];
        }
    }
    (co / det_p).transpose()
}

/// Closed-form almost complex structure, rejecting singular or non-normalized data.
pub fn build_j(a: f64, b: f64, q1: &Mat3, q2: &Mat3, det_p: f64, tol: f64) -> Result<Matrix6> {
    if det_p.abs() < SINGULAR_DET {
        return Err(Error::Singular(det_p.abs()));
    }
    let j = build_j_unchecked(a, b, q1, q2, det_p);
    let err = (j * j + Matrix6::identity()).abs().max();
    if err > tol {
        return Err(Error::InvalidStructure(format!("J² + Id = {err:e}")));
    }
    Ok(j)
}

/// Almost complex structure from the stable 3-form alone, `J = 6K/ω³` with
/// `K(X) = (X⌟γ)∧γ` read in `T ⊗ Λ⁶` through `α∧β = β(Y)·vol`.
pub fn hitchin_j(gamma: &Form, omega: &Form) -> Result<Matrix6> {
    if gamma.degree() != 3 || omega.degree() != 2 {
        return Err(Error::Shape("hitchin_j needs a 3-form and a 2-form".into()));
    }
    let omega3 = omega.power(3).coeffs()[0];
    if omega3.abs() < SINGULAR_DET {
        return Err(Error::Singular(omega3.abs()));
    }
    let mut k = Matrix6::zeros();
    for s in 0..6 {
        let mut x = Vector6::zeros();
        x[s] = 1.0;
        let five = gamma.contract(&x).wedge(gamma);
        for t in 0..6 {
            k[(t, s)] = five.wedge(&Form::monomial(&[t + 1])).coeffs()[0];
        }
    }
    Ok(k * (6.0 / omega3))
}

/// JSON record: `{"lambda", "a", "b", "P", "Q", "orientation"?}` with row-major matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureRecord {
    pub lambda: f64,
    pub a: f64,
    pub b: f64,
    #[serde(rename = "P")]
    pub p: [[f64; 3]; 3],
    #[serde(rename = "Q")]
    pub q: [[f64; 3]; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orientation: Option<i8>,
}

fn to_rows(m: &Mat3) -> [[f64; 3]; 3] {
    // `+ 0.0` turns -0.0 into 0.0 so records diff cleanly.
    std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)] + 0.0))
}

fn from_rows(r: &[[f64; 3]; 3]) -> Mat3 {
    Mat3::from_fn(|i, j| r[i][j])
}

/// An invariant nearly half-flat structure with its derived data.
///
/// Construction only rejects `λ = 0` and singular `P`; whether the data is a
/// genuine SU(3)-structure is reported by [`validate`].
#[derive(Clone, Debug)]
pub struct NhfStructure {
    lambda: f64,
    a: f64,
    b: f64,
    p: Mat3,
    q: Mat3,
    q1: Mat3,
    q2: Mat3,
    det_p: f64,
    abr: Abr,
    omega: Form,
    omega2: Form,
    gamma: Form,
    delta: Form,
    j_gamma: Form,
    j: Matrix6,
    g: Matrix6,
}

impl NhfStructure {
    pub fn new(lambda: f64, a: f64, b: f64, p: Mat3, q: Mat3) -> Result<Self> {
        let finite = [lambda, a, b].iter().all(|x| x.is_finite())
            && p.iter().chain(q.iter()).all(|x| x.is_finite());
        if !finite {
            return Err(Error::InvalidStructure("non-finite input".into()));
        }
        if lambda == 0.0 {
            return Err(Error::OutOfRange("λ must be nonzero".into()));
        }
        let det_p = p.determinant();
        if det_p.abs() < SINGULAR_DET {
            return Err(Error::Singular(det_p.abs()));
        }
        let (q1, q2) = q1_q2(lambda, &p, &q);
        let abr = compute_abr(a, b, &q1, &q2);
        let omega = build_omega(&p);
        let j_gamma = (Form::monomial(&[1, 3, 5]).scale(abr.a_cap)
            + Form::monomial(&[2, 4, 6]).scale(abr.b_cap)
            + mixed_form(&abr.r1, &abr.r2))
        .scale(2.0 / det_p);
        let j = build_j_unchecked(a, b, &q1, &q2, det_p);
        let g = two_form_matrix(&omega) * j;
        Ok(NhfStructure {
            lambda,
            a,
            b,
            p,
            q,
            q1,
            q2,
            det_p,
            abr,
            omega2: omega_squared(&p),
            gamma: gamma_from(a, b, &q1, &q2),
            delta: build_delta(&p),
            omega,
            j_gamma,
            j,
            g,
        })
    }

    pub fn from_record(rec: &StructureRecord) -> Result<Self> {
        let s = Self::new(rec.lambda, rec.a, rec.b, from_rows(&rec.p), from_rows(&rec.q))?;
        match rec.orientation {
            None => Ok(s),
            Some(o) if o == s.orientation() => Ok(s),
            Some(o) if o == 1 || o == -1 => Err(Error::InvalidStructure(format!(
                "orientation {o} disagrees with sign of det P = {}",
                s.det_p
            ))),
            Some(o) => Err(Error::InvalidStructure(format!("orientation must be ±1, got {o}"))),
        }
    }

    pub fn to_record(&self) -> StructureRecord {
        StructureRecord {
            lambda: self.lambda,
            a: self.a,
            b: self.b,
            p: to_rows(&self.p),
            q: to_rows(&self.q),
            orientation: Some(self.orientation()),
        }
    }

    /// `P ↦ gPhᵀ`, `Q ↦ gQhᵀ` for `(g, h) ∈ SO(3)×SO(3)`.
    pub fn rotated(&self, g: &Mat3, h: &Mat3) -> Result<Self> {
        Self::new(
            self.lambda,
            self.a,
            self.b,
            g * self.p * h.transpose(),
            g * self.q * h.transpose(),
        )
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn a(&self) -> f64 {
        self.a
    }
    pub fn b(&self) -> f64 {
        self.b
    }
    pub fn p(&self) -> &Mat3 {
        &self.p
    }
    pub fn q(&self) -> &Mat3 {
        &self.q
    }
    pub fn q1(&self) -> &Mat3 {
        &self.q1
    }
    pub fn q2(&self) -> &Mat3 {
        &self.q2
    }
    pub fn det_p(&self) -> f64 {
        self.det_p
    }
    /// Sign of `det P`; `ω³ = 6 det P · e¹²³⁴⁵⁶`.
    pub fn orientation(&self) -> i8 {
        if self.det_p > 0.0 {
            1
        } else {
            -1
        }
    }
    pub fn abr(&self) -> &Abr {
        &self.abr
    }
    pub fn omega(&self) -> &Form {
        &self.omega
    }
    pub fn omega_squared(&self) -> &Form {
        &self.omega2
    }
    pub fn gamma(&self) -> &Form {
        &self.gamma
    }
    pub fn delta(&self) -> &Form {
        &self.delta
    }
    /// Closed-form `Jγ`.
    pub fn j_gamma(&self) -> &Form {
        &self.j_gamma
    }
    /// Closed-form `J` on tangent vectors, whether or not `J² = −Id`.
    pub fn j(&self) -> &Matrix6 {
        &self.j
    }

    pub fn checked_j(&self, tol: f64) -> Result<Matrix6> {
        build_j(self.a, self.b, &self.q1, &self.q2, self.det_p, tol)
    }

    /// `g(X, Y) = ω(X, JY)`, rejected unless symmetric positive definite.
    pub fn metric(&self) -> Result<Matrix6> {
        spd_inverse(&self.g)
            .map(|_| self.g)
            .map_err(|_| Error::InvalidStructure("metric is not positive definite".into()))
    }

    /// `g` without the positivity check.
    pub fn raw_metric(&self) -> &Matrix6 {
        &self.g
    }

    pub fn normalization_residual(&self) -> f64 {
        normalization_residual(self.a, self.b, &self.q1, &self.q2, self.det_p)
    }
}

/// Residuals of every defining condition.
#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub tol: f64,
    pub symmetry: f64,
    pub normalization: f64,
    pub j_squared: f64,
    pub gamma_omega: f64,
    pub jgamma_omega: f64,
    pub gamma_jgamma: f64,
    pub dgamma: f64,
    pub metric_spd: bool,
}

impl ValidationReport {
    /// `(name, residual)` in a fixed order.
    pub fn residuals(&self) -> [(&'static str, f64); 7] {
        [
            ("PQ_symmetry", self.symmetry),
            ("normalization", self.normalization),
            ("J2_plus_id", self.j_squared),
            ("gamma_wedge_omega", self.gamma_omega),
            ("Jgamma_wedge_omega", self.jgamma_omega),
            ("gamma_wedge_Jgamma", self.gamma_jgamma),
            ("dgamma_minus_omega2", self.dgamma),
        ]
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals().iter().fold(0.0, |m, (_, r)| m.max(*r))
    }

    pub fn failures(&self) -> Vec<&'static str> {
        let mut out: Vec<_> = self
            .residuals()
            .iter()
            .filter(|(_, r)| !(*r <= self.tol))
            .map(|(n, _)| *n)
            .collect();
        if !self.metric_spd {
            out.push("metric_spd");
        }
        out
    }

    pub fn passed(&self) -> bool {
        self.failures().is_empty()
    }
}

pub fn validate(s: &NhfStructure, tol: f64) -> ValidationReport {
    let omega3 = s.omega.power(3);
    ValidationReport {
        tol,
        symmetry: symmetry_residual(&s.p, &s.q),
        normalization: s.normalization_residual().abs(),
        j_squared: (s.j * s.j + Matrix6::identity()).abs().max(),
        gamma_omega: s.gamma.wedge(&s.omega).max_abs(),
        jgamma_omega: s.j_gamma.wedge(&s.omega).max_abs(),
        gamma_jgamma: (s.gamma.wedge(&s.j_gamma) - omega3.scale(2.0 / 3.0)).max_abs(),
        dgamma: (s.gamma.d() - s.omega2.scale(s.lambda / 2.0)).max_abs(),
        metric_spd: s.metric().is_ok(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SampleMethod {
    /// Random family member moved by a random element of SO(3)×SO(3).
    #[default]
    RotateFamily,
    /// Random `(a, b, Q, S)` with `P = c·Q⁻ᵀS` and `c` solving the normalization.
    RootSolve,
}

/// Uniformly distributed rotation.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Mat3 {
    let w: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
    let q = UnitQuaternion::from_quaternion(Quaternion::new(w[0], w[1], w[2], w[3]));
    q.to_rotation_matrix().into_inner()
}

fn sign<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    if rng.random_bool(0.5) {
        1.0
    } else {
        -1.0
    }
}

fn random_family_member<R: Rng + ?Sized>(rng: &mut R) -> Result<NhfStructure> {
    match rng.random_range(0..6) {
        0 => families::nearly_kahler(rng.random_range(1.0..5.0) * sign(rng), sign(rng)),
        1 => {
            let lambda = rng.random_range(0.5..4.0);
            let edge = 4.0 * 3f64.sqrt() / (9.0 * lambda * lambda);
            let p = rng.random_range(0.05..0.95) * edge * sign(rng);
            families::w1_family(lambda, p, sign(rng))
        }
        2 => families::w1w3_family(rng.random_range(0.0045..0.05), sign(rng)),
        3 => {
            let inner = sign(rng);
            let p = rng.random_range(0.2..1.5) * sign(rng);
            families::zero_scalar_member(p, inner, sign(rng))
        }
        4 => families::sine_cone_trajectory(rng.random_range(-0.6..0.6), sign(rng)),
        _ => families::berger_trajectory(rng.random_range(0.05..PI / 6.0 - 0.05)),
    }
}

const MAX_ATTEMPTS: usize = 1000;

fn root_solve_attempt<R: Rng + ?Sized>(rng: &mut R) -> Option<NhfStructure> {
    let lambda = rng.random_range(0.5..5.0) * sign(rng);
    let a = rng.random_range(-0.5..0.5);
    let b = rng.random_range(-0.5..0.5);
    // Random simultaneous diagonal pair in random frames, the scale of P is
    // then fixed by the normalization.
    let mut diag = || Mat3::from_diagonal(&nalgebra::Vector3::from_fn(|_, _| rng.random_range(0.2..1.5) * sign(rng)));
    let (p0, q0) = (diag(), diag() * 0.1);
    let g = random_rotation(rng);
    let h = random_rotation(rng);
    let base = g * p0 * h.transpose();
    let q = g * q0 * h.transpose();
    // f is even in c, so only c > 0 is scanned.
    let f = |c: f64| {
        let p = base * c;
        let (q1, q2) = q1_q2(lambda, &p, &q);
        normalization_residual(a, b, &q1, &q2, p.determinant())
    };
    let grid: Vec<f64> = (0..=400).map(|k| 10f64.powf(-3.0 + 6.0 * k as f64 / 400.0)).collect();
    for w in grid.windows(2) {
        let (mut lo, mut hi) = (w[0], w[1]);
        let (mut flo, fhi) = (f(lo), f(hi));
        if flo.signum() == fhi.signum() {
            continue;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let fm = f(mid);
            if fm.signum() == flo.signum() {
                lo = mid;
                flo = fm;
            } else {
                hi = mid;
            }
        }
        let c = 0.5 * (lo + hi) * sign(rng);
        if let Ok(st) = NhfStructure::new(lambda, a, b, base * c, q) {
            let rep = validate(&st, 1e-9);
            if rep.passed() {
                return Some(st);
            }
        }
    }
    None
}

/// Deterministic random valid structure for tests and sweeps.
pub fn sample_random_structure(seed: u64, method: SampleMethod) -> Result<NhfStructure> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match method {
        SampleMethod::RotateFamily => {
            let base = random_family_member(&mut rng)?;
            let g = random_rotation(&mut rng);
            let h = random_rotation(&mut rng);
            base.rotated(&g, &h)
        }
        SampleMethod::RootSolve => (0..MAX_ATTEMPTS)
            .find_map(|_| root_solve_attempt(&mut rng))
            .ok_or(Error::SamplerExhausted(MAX_ATTEMPTS)),
    }
}
