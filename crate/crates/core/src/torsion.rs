//! Intrinsic torsion, scalar curvature and torsion classes.
//!
//! For a nearly half-flat structure the only torsion forms that can survive
//! are `w₁⁺`, `w₂⁻`, `w₃` and the constant `w₁⁻ = 3λ/4`:
//!
//! ```text
//! dω  = w₁⁺ γ + (3λ/4) Jγ + w₃
//! dJγ = −(2/3) w₁⁺ ω² + w₂⁻ ∧ ω
//! ```

use std::f64::consts::FRAC_PI_2;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exterior::{basis_len, Form};
use crate::structure::{adjugate, NhfStructure};

/// `w₁⁺ = tr(PᵀR) / (2 (det P)²)`.
pub fn w1_plus(s: &NhfStructure) -> f64 {
    (s.p().transpose() * s.abr().r).trace() / (2.0 * s.det_p() * s.det_p())
}

/// `w₁⁺` read off the forms: `dω ∧ Jγ = w₁⁺ γ ∧ Jγ`.
pub fn w1_plus_projection(s: &NhfStructure) -> f64 {
    let num = s.omega().d().wedge(s.j_gamma()).coeffs()[0];
    let den = s.gamma().wedge(s.j_gamma()).coeffs()[0];
    num / den
}

pub fn w1_minus(s: &NhfStructure) -> f64 {
    0.75 * s.lambda()
}

fn scale_of(forms: &[&Form]) -> f64 {
    forms.iter().fold(1.0, |m, f| m.max(f.max_abs()))
}

/// Largest of `w₃∧ω`, `w₃∧γ`, `w₃∧Jγ`.
pub fn w3_membership(s: &NhfStructure, w3: &Form) -> f64 {
    [s.omega(), s.gamma(), s.j_gamma()]
        .iter()
        .map(|f| w3.wedge(f).max_abs())
        .fold(0.0, f64::max)
}

/// `w₃ = dω − w₁⁺γ − (3λ/4)Jγ`, checked to lie in the 12-dimensional summand.
pub fn w3(s: &NhfStructure, tol: f64) -> Result<Form> {
    let dw = s.omega().d();
    let w = dw.clone() - s.gamma().scale(w1_plus(s)) - s.j_gamma().scale(w1_minus(s));
    let res = w3_membership(s, &w);
    let scale = scale_of(&[&dw, s.gamma(), s.j_gamma()]).powi(2);
    if !(res <= tol * scale) {
        return Err(Error::Inconsistent(format!("w3 membership residual {res:e}")));
    }
    Ok(w)
}

#[derive(Clone, Debug, Serialize)]
pub struct W2Solution {
    pub form: Form,
    /// Max-abs residual of the augmented system.
    pub residual: f64,
}

/// Solves `β∧ω = dJγ + (2/3)w₁⁺ω²` together with `β∧ω² = 0`, `β∧γ = 0`
/// in the least-squares sense.
pub fn w2_minus(s: &NhfStructure, tol: f64) -> Result<W2Solution> {
    let target = s.j_gamma().d() + s.omega_squared().scale(2.0 / 3.0 * w1_plus(s));
    let n = basis_len(2);
    let rows = basis_len(4) + 1 + basis_len(5);
    let mut a = DMatrix::zeros(rows, n);
    for j in 0..n {
        let mut coeffs = vec![0.0; n];
        coeffs[j] = 1.0;
        let e = Form::from_coeffs(2, coeffs)?;
        let col: Vec<f64> = [s.omega(), s.omega_squared(), s.gamma()]
            .iter()
            .flat_map(|f| e.wedge(f).coeffs().to_vec())
            .collect();
        a.set_column(j, &DVector::from_vec(col));
    }
    let mut rhs = DVector::zeros(rows);
    rhs.rows_mut(0, n).copy_from_slice(target.coeffs());
    let svd = a.clone().svd(true, true);
    let eps = svd.singular_values.max() * 1e-12;
    let beta = svd
        .solve(&rhs, eps)
        .map_err(|e| Error::Inconsistent(format!("w2 solve: {e}")))?;
    let residual = (&a * &beta - &rhs).abs().max();
    let scale = scale_of(&[&target, s.omega(), s.gamma()]).powi(2);
    if !(residual <= tol * scale) {
        return Err(Error::Inconsistent(format!("w2 solve residual {residual:e}")));
    }
    Ok(W2Solution {
        form: Form::from_coeffs(2, beta.iter().copied().collect())?,
        residual,
    })
}

/// `s = (10/3)(w₁⁺)² + 15λ²/8 − ½|w₂⁻|² − ½|w₃|²` with norms from the induced metric.
pub fn scalar_curvature(s: &NhfStructure, tol: f64) -> Result<f64> {
    let w1 = w1_plus(s);
    let w2 = w2_minus(s, tol)?.form;
    let w3 = w3(s, tol)?;
    scalar_from_parts(s, w1, &w2, &w3)
}

fn scalar_from_parts(s: &NhfStructure, w1: f64, w2: &Form, w3: &Form) -> Result<f64> {
    let g = s.metric()?;
    let n2 = w2.inner(w2, &g)?;
    let n3 = w3.inner(w3, &g)?;
    let l = s.lambda();
    Ok(10.0 / 3.0 * w1 * w1 + 15.0 * l * l / 8.0 - 0.5 * n2 - 0.5 * n3)
}

/// The torsion classes a nearly half-flat structure can have.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum TorsionClass {
    #[serde(rename = "W1−")]
    W1Minus,
    #[serde(rename = "W1")]
    W1,
    #[serde(rename = "W1−+W3")]
    W1MinusW3,
    #[serde(rename = "W1+W3")]
    W1W3,
    #[serde(rename = "W1−+W2−+W3")]
    W1MinusW2W3,
    #[serde(rename = "W1+W2−+W3")]
    W1W2W3,
}

impl TorsionClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            TorsionClass::W1Minus => "W1−",
            TorsionClass::W1 => "W1",
            TorsionClass::W1MinusW3 => "W1−+W3",
            TorsionClass::W1W3 => "W1+W3",
            TorsionClass::W1MinusW2W3 => "W1−+W2−+W3",
            TorsionClass::W1W2W3 => "W1+W2−+W3",
        }
    }

    /// Label from which torsion forms vanish. `w₂⁻ ≠ 0` with `w₃ = 0` is
    /// impossible; it is labelled by its `w₂⁻` class.
    pub fn from_vanishing(w1_zero: bool, w2_zero: bool, w3_zero: bool) -> Self {
        match (w1_zero, w2_zero, w3_zero) {
            (true, true, true) => TorsionClass::W1Minus,
            (false, true, true) => TorsionClass::W1,
            (true, true, false) => TorsionClass::W1MinusW3,
            (false, true, false) => TorsionClass::W1W3,
            (true, false, _) => TorsionClass::W1MinusW2W3,
            (false, false, _) => TorsionClass::W1W2W3,
        }
    }
}

impl fmt::Display for TorsionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Residuals of the matrix-level torsion predicates, each scaled to the
/// size of the torsion form it controls.
#[derive(Clone, Debug, Serialize)]
pub struct Predicates {
    pub nearly_kahler: f64,
    pub w1_plus_zero: f64,
    pub co_coupled: f64,
    pub coupled: f64,
}

pub fn predicates(s: &NhfStructure) -> Predicates {
    let abr = s.abr();
    let l = s.lambda();
    let dp = s.det_p();
    let tr = (s.p().transpose() * abr.r).trace();
    let nk_p = s.p() * (2.0 * dp / (3.0 * l));
    // Jγ carries a 2/det P in front of (A, B, R₁, R₂).
    let form_scale = 3.0 * l.abs() / (2.0 * dp.abs());
    let nearly_kahler = form_scale * [
        abr.a_cap.abs(),
        abr.b_cap.abs(),
        (abr.r1 - nk_p).abs().max(),
        (abr.r2 + nk_p).abs().max(),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    let co_coupled = 2.0 / dp.abs() * (abr.r - adjugate(&s.p().transpose()) * (tr / (3.0 * dp))).abs().max();
    let k = tr / (3.0 * l * dp);
    let r1 = (s.p() * (2.0 * dp) - s.q1() * (tr / dp)) / (3.0 * l);
    let r2 = -(s.p() * (2.0 * dp) + s.q2() * (tr / dp)) / (3.0 * l);
    let coupled = form_scale * [
        (abr.a_cap + k * s.a()).abs(),
        (abr.b_cap + k * s.b()).abs(),
        (abr.r1 - r1).abs().max(),
        (abr.r2 - r2).abs().max(),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    Predicates {
        nearly_kahler,
        w1_plus_zero: tr.abs() / (2.0 * dp * dp),
        co_coupled,
        coupled,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Classification {
    pub label: TorsionClass,
    pub pure_nearly_kahler: bool,
    pub predicates: Predicates,
    pub w1_plus: f64,
    pub w2_norm: f64,
    pub w3_norm: f64,
    /// Whether the matrix predicates agree with the extracted forms.
    pub consistent: bool,
}

/// Everything extracted from one structure.
#[derive(Clone, Debug, Serialize)]
pub struct TorsionData {
    pub w1plus: f64,
    pub w1minus: f64,
    pub w2minus: Form,
    pub w3: Form,
    pub s: f64,
    #[serde(rename = "class")]
    pub class_label: TorsionClass,
}

impl TorsionData {
    pub fn extract(s: &NhfStructure, tol: f64) -> Result<Self> {
        let w1 = w1_plus(s);
        let w2 = w2_minus(s, tol)?.form;
        let w3 = w3(s, tol)?;
        let sc = scalar_from_parts(s, w1, &w2, &w3)?;
        let ctol = tol.max(crate::CLASSIFY_TOL);
        Ok(TorsionData {
            w1plus: w1,
            w1minus: w1_minus(s),
            class_label: TorsionClass::from_vanishing(
                w1.abs() <= ctol,
                w2.max_abs() <= ctol,
                w3.max_abs() <= ctol,
            ),
            w2minus: w2,
            w3,
            s: sc,
        })
    }
}

pub fn classify(s: &NhfStructure, tol: f64) -> Result<Classification> {
    let w1 = w1_plus(s);
    let w2 = w2_minus(s, crate::DEFAULT_TOL.max(tol * 1e-2))?.form;
    let w3 = w3(s, crate::DEFAULT_TOL.max(tol * 1e-2))?;
    let (w1z, w2z, w3z) = (w1.abs() <= tol, w2.max_abs() <= tol, w3.max_abs() <= tol);
    let pred = predicates(s);
    let nk = pred.nearly_kahler <= tol;
    let consistent = (pred.w1_plus_zero <= tol) == w1z
        && (pred.co_coupled <= tol) == w2z
        && (pred.coupled <= tol) == w3z
        && nk == (w1z && w2z && w3z);
    Ok(Classification {
        label: TorsionClass::from_vanishing(w1z, w2z, w3z),
        pure_nearly_kahler: nk && w1z && w2z && w3z,
        predicates: pred,
        w1_plus: w1,
        w2_norm: w2.max_abs(),
        w3_norm: w3.max_abs(),
        consistent,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct HalfFlat {
    pub theta: f64,
    pub gamma_theta: Form,
    /// Max-abs coefficient of `dγ_θ`.
    pub residual: f64,
}

/// Rotates `γ` to `γ_θ = cos θ γ + sin θ Jγ` with `θ = arctan(3λ/(4w₁⁺))`,
/// which is closed whenever `w₂⁻ = 0`.
pub fn rotate_to_half_flat(s: &NhfStructure, tol: f64) -> Result<HalfFlat> {
    let w2 = w2_minus(s, tol)?.form;
    if w2.max_abs() > tol {
        return Err(Error::Precondition(format!(
            "w2- must vanish, max coefficient {:e}",
            w2.max_abs()
        )));
    }
    let w1 = w1_plus(s);
    let theta = if w1.abs() <= tol {
        FRAC_PI_2
    } else {
        (3.0 * s.lambda() / (4.0 * w1)).atan()
    };
    let gamma_theta = s.gamma().scale(theta.cos()) + s.j_gamma().scale(theta.sin());
    let residual = gamma_theta.d().max_abs();
    Ok(HalfFlat {
        theta,
        gamma_theta,
        residual,
    })
}
