//! Closed-form structures and trajectories used as oracles.
//!
//! The two time-dependent families come with analytic derivatives so the
//! evolution equations can be checked without finite differences.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::structure::{Mat3, NhfStructure};

fn sqrt3() -> f64 {
    3f64.sqrt()
}

fn diag(x: f64, y: f64, z: f64) -> Mat3 {
    Mat3::from_diagonal(&nalgebra::Vector3::new(x, y, z))
}

fn check_sign(name: &str, s: f64) -> Result<f64> {
    if s == 1.0 || s == -1.0 {
        Ok(s)
    } else {
        Err(Error::OutOfRange(format!("{name} must be +1 or -1, got {s}")))
    }
}

/// The invariant nearly Kähler structure: `P = ±(4√3/9λ²)Id`, `Q = 0`,
/// `a = b = 16/(27λ³)`.
pub fn nearly_kahler(lambda: f64, sign: f64) -> Result<NhfStructure> {
    let sign = check_sign("sign", sign)?;
    if lambda == 0.0 || !lambda.is_finite() {
        return Err(Error::OutOfRange("λ must be nonzero".into()));
    }
    let p = sign * 4.0 * sqrt3() / (9.0 * lambda * lambda);
    let a = 16.0 / (27.0 * lambda.powi(3));
    NhfStructure::new(lambda, a, a, Mat3::identity() * p, Mat3::zeros())
}

/// Upper end of the admissible `|p|` range of [`w1_family`].
pub fn w1_p_max(lambda: f64) -> f64 {
    4.0 * sqrt3() / (9.0 * lambda * lambda)
}

/// `q` of the W₁ family, `None` when the discriminant is negative.
pub fn w1_q(lambda: f64, p: f64, sign_q: f64) -> Option<f64> {
    let disc = 12.0 * sqrt3() * p.abs() - 27.0 * lambda * lambda * p * p;
    (disc >= 0.0).then(|| sign_q * p * disc.sqrt() / 6.0)
}

/// `P = pId`, `Q = qId`, `a = b = λp²`; torsion purely in W₁⁺ + W₁⁻.
pub fn w1_family(lambda: f64, p: f64, sign_q: f64) -> Result<NhfStructure> {
    let sign_q = check_sign("sign_q", sign_q)?;
    if lambda == 0.0 {
        return Err(Error::OutOfRange("λ must be nonzero".into()));
    }
    let edge = w1_p_max(lambda);
    let q = match w1_q(lambda, p, sign_q) {
        Some(q) if p != 0.0 => q,
        _ => {
            return Err(Error::OutOfRange(format!(
                "w1 family needs 0 < |p| ≤ 4√3/(9λ²) = {edge}, got p = {p}"
            )))
        }
    };
    NhfStructure::new(lambda, lambda * p * p, lambda * p * p, Mat3::identity() * p, Mat3::identity() * q)
}

/// `λ = 4`, `a > 1/256`; torsion in W₁⁻ + W₃, so `dJγ = 0`.
pub fn w1w3_family(a: f64, sign_p: f64) -> Result<NhfStructure> {
    let sign_p = check_sign("sign_p", sign_p)?;
    if !(a > 1.0 / 256.0) {
        return Err(Error::OutOfRange(format!("w1w3 family needs a > 1/256, got a = {a}")));
    }
    let k = 256.0 * a - 1.0;
    let b = 512.0 * a * a / k;
    let q = 128.0 * a * a / k;
    let p = sign_p * 8.0 * a / k.sqrt();
    NhfStructure::new(4.0, a, b, Mat3::identity() * p, Mat3::identity() * q)
}

/// `q` of the zero-scalar ansatz: `outer · p√(36p² + inner·3√3p)/3`.
pub fn zero_scalar_q(p: f64, inner: f64, outer: f64) -> Option<f64> {
    let disc = 36.0 * p * p + inner * 3.0 * sqrt3() * p;
    (disc >= 0.0).then(|| outer * p * disc.sqrt() / 3.0)
}

/// Closed-form scalar curvature `2(72p⁴ + 105p + inner·5√3)/(3p)` attached to the ansatz.
pub fn zero_scalar_s_formula(p: f64, inner: f64) -> f64 {
    2.0 * (72.0 * p.powi(4) + 105.0 * p + inner * 5.0 * sqrt3()) / (3.0 * p)
}

/// Member of the `a = b = 0`, `P = pId`, `Q = qId`, `λ = 4` ansatz.
pub fn zero_scalar_member(p: f64, inner: f64, outer: f64) -> Result<NhfStructure> {
    let inner = check_sign("inner", inner)?;
    let outer = check_sign("outer", outer)?;
    match zero_scalar_q(p, inner, outer) {
        Some(q) if p != 0.0 => {
            NhfStructure::new(4.0, 0.0, 0.0, Mat3::identity() * p, Mat3::identity() * q)
        }
        _ => Err(Error::OutOfRange(format!(
            "zero-scalar ansatz needs 36p² + ({inner})3√3p ≥ 0 and p ≠ 0, got p = {p}"
        ))),
    }
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// All real roots of `72p⁴ + 105p + inner·5√3`, ascending.
pub fn zero_scalar_quartic_roots(inner: f64) -> Vec<f64> {
    let f = |p: f64| 72.0 * p.powi(4) + 105.0 * p + inner * 5.0 * sqrt3();
    // Every root lies in |p| < 2 since 72p⁴ dominates there.
    let n = 40_000;
    let grid: Vec<f64> = (0..=n).map(|k| -2.0 + 4.0 * k as f64 / n as f64).collect();
    grid.windows(2)
        .filter(|w| f(w[0]).signum() != f(w[1]).signum())
        .map(|w| bisect(f, w[0], w[1]))
        .collect()
}

/// Roots of the closed-form `s(p)` for which `q` is real.
pub fn zero_scalar_roots(inner: f64) -> Vec<f64> {
    zero_scalar_quartic_roots(inner)
        .into_iter()
        .filter(|&p| zero_scalar_q(p, inner, 1.0).is_some())
        .collect()
}

/// One structure per admissible root of the chosen inner branch.
pub fn zero_scalar_family(inner: f64, outer: f64) -> Result<Vec<NhfStructure>> {
    let inner = check_sign("inner", inner)?;
    let roots = zero_scalar_roots(inner);
    if roots.is_empty() {
        return Err(Error::OutOfRange(format!("no admissible root for inner branch {inner}")));
    }
    roots.into_iter().map(|p| zero_scalar_member(p, inner, outer)).collect()
}

/// A point of a closed-form trajectory together with its time derivative.
#[derive(Clone, Copy, Debug)]
pub struct ClosedForm {
    pub lambda: f64,
    pub a: f64,
    pub b: f64,
    pub p: Mat3,
    pub q: Mat3,
    pub da: f64,
    pub db: f64,
    pub dp: Mat3,
    pub dq: Mat3,
}

impl ClosedForm {
    pub fn structure(&self) -> Result<NhfStructure> {
        NhfStructure::new(self.lambda, self.a, self.b, self.p, self.q)
    }
}

pub fn berger_lambda() -> f64 {
    6.0 / 5f64.sqrt()
}

/// Berger-space trajectory at flow time `t ∈ (0, π/6)`; the principal
/// orbits are parameterized by `u = 2t ∈ (0, π/3)`.
pub fn berger_point(t: f64) -> Result<ClosedForm> {
    if !(t > 0.0 && t < PI / 6.0) {
        return Err(Error::OutOfRange(format!(
            "Berger trajectory needs t in (0, π/6), got {t}"
        )));
    }
    let r5 = 5f64.sqrt();
    let u = 2.0 * t;
    let us = [u, u - 2.0 * PI / 3.0, u + 2.0 * PI / 3.0];
    let (c3, s3) = ((3.0 * u).cos(), (3.0 * u).sin());
    let sin = diag(us[0].sin(), us[1].sin(), us[2].sin());
    let cos = diag(us[0].cos(), us[1].cos(), us[2].cos());
    Ok(ClosedForm {
        lambda: berger_lambda(),
        a: (7.0 - 2.0 * c3) / (80.0 * r5),
        b: (7.0 + 2.0 * c3) / (80.0 * r5),
        p: sin / (2.0 * r5),
        q: (cos + Mat3::identity() * (0.5 * c3)) / (20.0 * r5),
        da: 12.0 * s3 / (80.0 * r5),
        db: -12.0 * s3 / (80.0 * r5),
        dp: cos / r5,
        dq: (-2.0 * sin - Mat3::identity() * (3.0 * s3)) / (20.0 * r5),
    })
}

pub fn berger_trajectory(t: f64) -> Result<NhfStructure> {
    berger_point(t)?.structure()
}

/// Sine-cone over the nearly Kähler structure (`λ = 4`). `branch = +1`
/// starts at `nearly_kahler(4, +1)`; `-1` is its image under `P ↦ −P`,
/// `t ↦ −t`.
pub fn sine_cone_point(t: f64, branch: f64) -> Result<ClosedForm> {
    let sigma = check_sign("branch", branch)?;
    let c = (2.0 * t).cos();
    let s = (2.0 * t).sin();
    if c.abs() < 1e-6 {
        return Err(Error::OutOfRange(format!("sine-cone degenerates at t = {t}")));
    }
    let r3 = sqrt3();
    let a = c.powi(4) / 108.0;
    let p = sigma * r3 / 36.0 * c * c;
    let q = -sigma * r3 / 216.0 * c.powi(3) * s;
    let da = -8.0 * c.powi(3) * s / 108.0;
    let dp = -sigma * r3 / 9.0 * c * s;
    let dq = -sigma * r3 / 216.0 * (2.0 * c.powi(4) - 6.0 * c * c * s * s);
    let id = Mat3::identity();
    Ok(ClosedForm {
        lambda: 4.0,
        a,
        b: a,
        p: id * p,
        q: id * q,
        da,
        db: da,
        dp: id * dp,
        dq: id * dq,
    })
}

pub fn sine_cone_trajectory(t: f64, branch: f64) -> Result<NhfStructure> {
    sine_cone_point(t, branch)?.structure()
}

/// Closed-form `w₁⁺` along the sine-cone, `6 cot(2t + π/2)`.
pub fn sine_cone_w1_plus(t: f64) -> f64 {
    6.0 / (2.0 * t + PI / 2.0).tan()
}

/// Family selector with its parameters.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum FamilySpec {
    Nk { lambda: f64, sign: f64 },
    W1 { lambda: f64, p: f64, sign_q: f64 },
    W1w3 { a: f64, sign_p: f64 },
    ZeroScalar { inner: f64, outer: f64 },
    Berger { t: f64 },
    SineCone { t: f64, branch: f64 },
}

impl FamilySpec {
    pub fn name(&self) -> &'static str {
        match self {
            FamilySpec::Nk { .. } => "nk",
            FamilySpec::W1 { .. } => "w1",
            FamilySpec::W1w3 { .. } => "w1w3",
            FamilySpec::ZeroScalar { .. } => "zero-scalar",
            FamilySpec::Berger { .. } => "berger",
            FamilySpec::SineCone { .. } => "sine-cone",
        }
    }

    pub fn build(&self) -> Result<Vec<NhfStructure>> {
        let one = |r: Result<NhfStructure>| r.map(|s| vec![s]);
        match *self {
            FamilySpec::Nk { lambda, sign } => one(nearly_kahler(lambda, sign)),
            FamilySpec::W1 { lambda, p, sign_q } => one(w1_family(lambda, p, sign_q)),
            FamilySpec::W1w3 { a, sign_p } => one(w1w3_family(a, sign_p)),
            FamilySpec::ZeroScalar { inner, outer } => zero_scalar_family(inner, outer),
            FamilySpec::Berger { t } => one(berger_trajectory(t)),
            FamilySpec::SineCone { t, branch } => one(sine_cone_trajectory(t, branch)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::validate;
    use proptest::prelude::*;

    fn close(x: f64, y: f64, tol: f64) -> bool {
        (x - y).abs() <= tol
    }

    #[test]
    fn nk_values() {
        let s = nearly_kahler(4.0, 1.0).unwrap();
        assert!(close(s.a(), 1.0 / 108.0, 1e-15));
        assert!(close(s.a(), 0.00925926, 1e-8));
        assert!(close(s.p()[(0, 0)], 0.0481125, 1e-7));
        assert_eq!(*s.q(), Mat3::zeros());
        for sign in [1.0, -1.0] {
            assert!(validate(&nearly_kahler(4.0, sign).unwrap(), 1e-10).passed());
        }
        assert!(nearly_kahler(0.0, 1.0).is_err());
    }

    #[test]
    fn w1_sample() {
        let q = w1_q(1.0, 0.5, 1.0).unwrap();
        assert!(close(q, 0.159044, 1e-5));
        assert!(w1_family(1.0, 0.9, 1.0).is_err());
        assert!(w1_family(1.0, 0.0, 1.0).is_err());
        let edge = w1_family(4.0, w1_p_max(4.0), 1.0).unwrap();
        assert!(edge.q()[(0, 0)].abs() < 1e-6);
    }

    #[test]
    fn w1w3_sample() {
        let s = w1w3_family(1.0 / 128.0, 1.0).unwrap();
        assert!(close(s.b(), 512.0 / (128.0 * 128.0), 1e-15));
        assert!(validate(&s, 1e-9).passed());
        assert!(w1w3_family(1.0 / 256.0, 1.0).is_err());
    }

    #[test]
    fn zero_scalar_bracket_expansion() {
        // Under the ansatz the bracket is 3(q² − 4p⁴)²; the normalization
        // then forces q² = 4p⁴ ± (√3/3)p³.
        for p in [0.2, 0.7, -0.4, 1.3] {
            let q: f64 = 0.37;
            let s = NhfStructure::new(4.0, 0.0, 0.0, Mat3::identity() * p, Mat3::identity() * q).unwrap();
            let bracket = s.det_p().powi(2) - s.normalization_residual();
            assert!(close(bracket, 3.0 * (q * q - 4.0 * p.powi(4)).powi(2), 1e-12));
        }
    }

    #[test]
    fn zero_scalar_root_counts() {
        let plus = zero_scalar_quartic_roots(1.0);
        let minus = zero_scalar_quartic_roots(-1.0);
        assert_eq!(plus.len(), 2);
        assert_eq!(minus.len(), 2);
        assert_eq!(zero_scalar_roots(1.0).len(), 1);
        for p in plus.iter().chain(&minus) {
            assert!(zero_scalar_s_formula(*p, if plus.contains(p) { 1.0 } else { -1.0 }).abs() < 1e-9);
        }
        for s in zero_scalar_family(1.0, 1.0).unwrap() {
            assert!(validate(&s, 1e-9).passed());
        }
    }

    #[test]
    fn berger_midpoint() {
        let c = berger_point(PI / 12.0).unwrap();
        let r5 = 5f64.sqrt();
        let expected = diag(0.5, -1.0, 0.5) / (2.0 * r5);
        assert!((c.p - expected).abs().max() < 1e-15);
        let s = c.structure().unwrap();
        assert!(validate(&s, 1e-10).passed());
        assert!(berger_point(0.0).is_err());
        assert!(berger_point(PI / 6.0).is_err());
    }

    #[test]
    fn sine_cone_start_is_nk() {
        let s = sine_cone_trajectory(0.0, 1.0).unwrap();
        let nk = nearly_kahler(4.0, 1.0).unwrap();
        assert!(close(s.a(), nk.a(), 1e-16));
        assert!((s.p() - nk.p()).abs().max() < 1e-16);
        assert!(s.q().abs().max() < 1e-16);
        assert!(sine_cone_trajectory(PI / 4.0, 1.0).is_err());
    }

    #[test]
    fn sine_cone_metric_scales() {
        let g0 = nearly_kahler(4.0, 1.0).unwrap().metric().unwrap();
        for t in [-0.5, -0.2, 0.1, 0.3, 0.6] {
            let g = sine_cone_trajectory(t, 1.0).unwrap().metric().unwrap();
            let c2 = (2.0 * t).cos().powi(2);
            assert!((g - g0 * c2).abs().max() < 1e-10, "t = {t}");
        }
    }

    fn derivative_matches(f: impl Fn(f64) -> ClosedForm, t: f64) {
        let h = 1e-6;
        let (fp, fm, c) = (f(t + h), f(t - h), f(t));
        let scalar = |x: f64, y: f64| (x - y) / (2.0 * h);
        assert!(close(scalar(fp.a, fm.a), c.da, 1e-7));
        assert!(close(scalar(fp.b, fm.b), c.db, 1e-7));
        assert!(((fp.p - fm.p) / (2.0 * h) - c.dp).abs().max() < 1e-7);
        assert!(((fp.q - fm.q) / (2.0 * h) - c.dq).abs().max() < 1e-7);
    }

    proptest! {
        #[test]
        fn berger_derivatives(t in 0.05..(PI / 6.0 - 0.05)) {
            derivative_matches(|t| berger_point(t).unwrap(), t);
            prop_assert!(validate(&berger_trajectory(t).unwrap(), 1e-10).passed());
        }

        #[test]
        fn sine_cone_derivatives(t in -0.6..0.6f64, branch in prop_oneof![Just(1.0), Just(-1.0)]) {
            derivative_matches(|t| sine_cone_point(t, branch).unwrap(), t);
            prop_assert!(validate(&sine_cone_trajectory(t, branch).unwrap(), 1e-9).passed());
        }

        #[test]
        fn w1_sweep(lambda in 0.3..5.0f64, frac in 0.01..1.0f64, neg in any::<bool>(), sq in prop_oneof![Just(1.0), Just(-1.0)]) {
            let p = frac * w1_p_max(lambda) * if neg { -1.0 } else { 1.0 };
            prop_assert!(validate(&w1_family(lambda, p, sq).unwrap(), 1e-9).passed());
        }

        #[test]
        fn w1w3_sweep(a in 0.0042..0.2f64, sp in prop_oneof![Just(1.0), Just(-1.0)]) {
            prop_assert!(validate(&w1w3_family(a, sp).unwrap(), 1e-9).passed());
        }
    }
}
