//! Exterior algebra over the left-invariant coframe `e¹ … e⁶` of S³×S³.
//!
//! Forms are dense coefficient vectors over the ascending-index monomial
//! basis of each degree, ordered lexicographically (`e¹²`, `e¹³`, …, `e⁵⁶`
//! in degree two). The coframe splits as `A = ⟨e¹, e³, e⁵⟩` and
//! `B = ⟨e², e⁴, e⁶⟩`, two copies of `su(2)`, with
//!
//! ```text
//! de¹ =  e³⁵   de³ = -e¹⁵   de⁵ = e¹³
//! de² =  e⁴⁶   de⁴ = -e²⁶   de⁶ = e²⁴
//! ```
//!
//! The positive orientation is `e¹²³⁴⁵⁶`. Monomials are addressed with the
//! 1-based labels used in the formulas (`Form::monomial(&[1, 3, 5])`).

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};
use std::sync::OnceLock;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dimension of the underlying vector space.
pub const DIM: usize = 6;

pub type Matrix6 = nalgebra::Matrix6<f64>;
pub type Vector6 = nalgebra::Vector6<f64>;

/// Structure constants: `de^i = sign · e^j ∧ e^k` with 0-based `(j, k)`.
const COFRAME_DIFFERENTIAL: [(usize, usize, i8); DIM] = [
    (2, 4, 1),  // de¹ = e³⁵
    (3, 5, 1),  // de² = e⁴⁶
    (0, 4, -1), // de³ = -e¹⁵
    (1, 5, -1), // de⁴ = -e²⁶
    (0, 2, 1),  // de⁵ = e¹³
    (1, 3, 1),  // de⁶ = e²⁴
];

/// Number of basis monomials of degree `k`, zero above the top degree.
pub fn basis_len(k: usize) -> usize {
    const LEN: [usize; DIM + 1] = [1, 6, 15, 20, 15, 6, 1];
    LEN.get(k).copied().unwrap_or(0)
}

struct Basis {
    monomials: Vec<Vec<u8>>,
    position: [usize; 1 << DIM],
    /// Sparse integer matrix of `d` per degree: for each source monomial the
    /// list of `(target position, sign)`.
    differential: Vec<Vec<Vec<(usize, i32)>>>,
}

fn indices_of(mask: u8) -> Vec<usize> {
    (0..DIM).filter(|i| mask & (1 << i) != 0).collect()
}

/// Product of two monomials as `(mask, sign)`, `None` when they share an index.
fn mask_wedge(a: u8, b: u8) -> Option<(u8, i32)> {
    if a & b != 0 {
        return None;
    }
    // Each pair (i in a, j in b) with i > j costs one transposition.
    let mut swaps = 0u32;
    for j in indices_of(b) {
        swaps += (a >> (j + 1)).count_ones();
    }
    Some((a | b, if swaps.is_multiple_of(2) { 1 } else { -1 }))
}

fn basis() -> &'static Basis {
    static BASIS: OnceLock<Basis> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut monomials = vec![Vec::new(); DIM + 1];
        let mut all: Vec<u8> = (0u8..(1 << DIM)).collect();
        all.sort_by_key(|&m| indices_of(m));
        for m in all {
            monomials[m.count_ones() as usize].push(m);
        }
        let mut position = [0usize; 1 << DIM];
        for list in &monomials {
            for (i, &m) in list.iter().enumerate() {
                position[m as usize] = i;
            }
        }

        let mut differential = Vec::with_capacity(DIM);
        for list in monomials.iter().take(DIM) {
            let mut rows = Vec::with_capacity(list.len());
            for &m in list {
                let idx = indices_of(m);
                let mut terms = Vec::new();
                for (pos, &i) in idx.iter().enumerate() {
                    let before = idx[..pos].iter().fold(0u8, |acc, &j| acc | (1 << j));
                    let after = idx[pos + 1..].iter().fold(0u8, |acc, &j| acc | (1 << j));
                    let (j, k, s) = COFRAME_DIFFERENTIAL[i];
                    let de = (1u8 << j) | (1u8 << k);
                    let leibniz = if pos % 2 == 0 { 1 } else { -1 };
                    let Some((left, s1)) = mask_wedge(before, de) else {
                        continue;
                    };
                    let Some((full, s2)) = mask_wedge(left, after) else {
                        continue;
                    };
                    terms.push((position[full as usize], leibniz * i32::from(s) * s1 * s2));
                }
                rows.push(terms);
            }
            differential.push(rows);
        }

        Basis {
            monomials,
            position,
            differential,
        }
    })
}

/// Ascending 0-based index lists of the degree-`k` basis, in coefficient order.
pub fn basis_indices(k: usize) -> Vec<Vec<usize>> {
    if k > DIM {
        return Vec::new();
    }
    basis().monomials[k].iter().map(|&m| indices_of(m)).collect()
}

/// Determinant of a small dense matrix by partial-pivot elimination.
fn small_det(mut a: Vec<f64>, n: usize) -> f64 {
    let mut det = 1.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&r, &s| a[r * n + col].abs().total_cmp(&a[s * n + col].abs()))
            .unwrap_or(col);
        if a[pivot * n + col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            for c in 0..n {
                a.swap(pivot * n + c, col * n + c);
            }
            det = -det;
        }
        let p = a[col * n + col];
        det *= p;
        for r in col + 1..n {
            let f = a[r * n + col] / p;
            if f != 0.0 {
                for c in col..n {
                    a[r * n + c] -= f * a[col * n + c];
                }
            }
        }
    }
    det
}

/// `k`-th compound matrix: entry `(I, J)` is the minor `det M[I, J]`.
pub fn compound(m: &Matrix6, k: usize) -> DMatrix<f64> {
    let idx = basis_indices(k);
    let n = idx.len();
    let mut out = DMatrix::zeros(n, n);
    for (r, rows) in idx.iter().enumerate() {
        for (c, cols) in idx.iter().enumerate() {
            let mut sub = Vec::with_capacity(k * k);
            for &i in rows {
                for &j in cols {
                    sub.push(m[(i, j)]);
                }
            }
            out[(r, c)] = if k == 0 { 1.0 } else { small_det(sub, k) };
        }
    }
    out
}

/// A constant-coefficient differential form on S³×S³.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Form {
    degree: usize,
    coeffs: Vec<f64>,
}

impl fmt::Debug for Form {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Form{{{}: ", self.degree)?;
        let mut first = true;
        for (idx, c) in basis_indices(self.degree).iter().zip(&self.coeffs) {
            if *c != 0.0 {
                if !first {
                    write!(f, " + ")?;
                }
                first = false;
                let label: String = idx.iter().map(|i| char::from(b'1' + *i as u8)).collect();
                write!(f, "{c}·e{label}")?;
            }
        }
        if first {
            write!(f, "0")?;
        }
        write!(f, "}}")
    }
}

impl Form {
    pub fn zero(degree: usize) -> Self {
        Form {
            degree,
            coeffs: vec![0.0; basis_len(degree)],
        }
    }

    /// The constant function 1.
    pub fn one() -> Self {
        Form {
            degree: 0,
            coeffs: vec![1.0],
        }
    }

    pub fn from_coeffs(degree: usize, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != basis_len(degree) {
            return Err(Error::Shape(format!(
                "degree-{degree} form needs {} coefficients, got {}",
                basis_len(degree),
                coeffs.len()
            )));
        }
        Ok(Form { degree, coeffs })
    }

    /// `e^{i₁} ∧ … ∧ e^{i_k}` for 1-based labels in any order.
    ///
    /// Repeated labels give the zero form.
    ///
    /// # Panics
    /// If a label is outside `1..=6`.
    pub fn monomial(labels: &[usize]) -> Self {
        let mut out = Form::zero(labels.len());
        let mut mask = 0u8;
        let mut sign = 1;
        for &l in labels {
            assert!((1..=DIM).contains(&l), "coframe label {l} out of range");
            match mask_wedge(mask, 1 << (l - 1)) {
                Some((m, s)) => {
                    mask = m;
                    sign *= s;
                }
                None => return out,
            }
        }
        if labels.len() <= DIM {
            out.coeffs[basis().position[mask as usize]] = f64::from(sign);
        }
        out
    }

    /// The 1-form with the given coefficients on `e¹ … e⁶`.
    pub fn one_form(v: &Vector6) -> Self {
        Form {
            degree: 1,
            coeffs: v.iter().copied().collect(),
        }
    }

    /// Positive volume form `e¹²³⁴⁵⁶`.
    pub fn volume() -> Self {
        Form {
            degree: DIM,
            coeffs: vec![1.0],
        }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Coefficient of the monomial with the given 1-based labels, sign-adjusted.
    pub fn coeff(&self, labels: &[usize]) -> f64 {
        if labels.len() != self.degree {
            return 0.0;
        }
        let m = Form::monomial(labels);
        m.coeffs.iter().zip(&self.coeffs).map(|(a, b)| a * b).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| *c == 0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    pub fn scale(&self, s: f64) -> Form {
        Form {
            degree: self.degree,
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    fn terms(&self) -> impl Iterator<Item = (u8, f64)> + '_ {
        let list = if self.degree <= DIM {
            &basis().monomials[self.degree][..]
        } else {
            &[][..]
        };
        list.iter()
            .zip(&self.coeffs)
            .filter(|(_, c)| **c != 0.0)
            .map(|(m, c)| (*m, *c))
    }

    /// Exterior product.
    pub fn wedge(&self, other: &Form) -> Form {
        let degree = self.degree + other.degree;
        let mut out = Form::zero(degree);
        if degree > DIM {
            return out;
        }
        let pos = &basis().position;
        for (a, ca) in self.terms() {
            for (b, cb) in other.terms() {
                if let Some((m, s)) = mask_wedge(a, b) {
                    out.coeffs[pos[m as usize]] += f64::from(s) * ca * cb;
                }
            }
        }
        out
    }

    /// `k`-fold wedge power.
    pub fn power(&self, k: usize) -> Form {
        (0..k).fold(Form::one(), |acc, _| acc.wedge(self))
    }

    /// Exterior derivative of the invariant form.
    pub fn d(&self) -> Form {
        let mut out = Form::zero(self.degree + 1);
        if self.degree >= DIM {
            return out;
        }
        let rows = &basis().differential[self.degree];
        for (c, terms) in self.coeffs.iter().zip(rows) {
            if *c == 0.0 {
                continue;
            }
            for &(target, s) in terms {
                out.coeffs[target] += f64::from(s) * c;
            }
        }
        out
    }

    /// Interior product `v ⌟ x` with a tangent vector in the dual basis `e₁ … e₆`.
    pub fn contract(&self, v: &Vector6) -> Form {
        if self.degree == 0 {
            return Form::zero(0).scale(0.0);
        }
        let mut out = Form::zero(self.degree - 1);
        let pos = &basis().position;
        for (m, c) in self.terms() {
            for (slot, i) in indices_of(m).into_iter().enumerate() {
                if v[i] == 0.0 {
                    continue;
                }
                let sign = if slot % 2 == 0 { 1.0 } else { -1.0 };
                let rest = m & !(1 << i);
                out.coeffs[pos[rest as usize]] += sign * v[i] * c;
            }
        }
        out
    }

    /// Pullback by a linear map `M` of tangent vectors:
    /// `(M*x)(X₁, …, X_k) = x(MX₁, …, MX_k)`, i.e. `e^i ↦ Σ_j M_ij e^j`.
    pub fn pullback(&self, m: &Matrix6) -> Form {
        if self.degree > DIM {
            return self.clone();
        }
        let c = compound(m, self.degree);
        let x = DVector::from_column_slice(&self.coeffs);
        let y = c.transpose() * x;
        Form {
            degree: self.degree,
            coeffs: y.iter().copied().collect(),
        }
    }

    /// Applies `M` in the first slot only and re-alternates:
    /// `(1/k) Σ_t e^t ∧ ((M e_t) ⌟ x)`. Equals `x(M·, ·, …)` whenever that
    /// tensor is already alternating.
    pub fn slot_apply(&self, m: &Matrix6) -> Form {
        let k = self.degree;
        let mut out = Form::zero(k);
        if k == 0 || k > DIM {
            return out;
        }
        for t in 0..DIM {
            let col: Vector6 = m.column(t).into_owned();
            let mut et = Vector6::zeros();
            et[t] = 1.0;
            out += &Form::one_form(&et).wedge(&self.contract(&col));
        }
        out.scale(1.0 / k as f64)
    }

    /// Inner product induced by the metric `g` on tangent vectors; monomials of
    /// a `g`-orthonormal coframe have unit norm.
    pub fn inner(&self, other: &Form, g: &Matrix6) -> Result<f64> {
        if self.degree != other.degree {
            return Err(Error::DegreeMismatch {
                left: self.degree,
                right: other.degree,
            });
        }
        let ginv = spd_inverse(g)?;
        Ok(gram_inner(&ginv, self, other))
    }

    /// Riemannian Hodge star of `g` with orientation `e¹²³⁴⁵⁶`.
    pub fn hodge(&self, g: &Matrix6) -> Result<Form> {
        let ginv = spd_inverse(g)?;
        let sqrt_det = g.determinant().sqrt();
        let k = self.degree;
        let mut out = Form::zero(DIM - k);
        let gram = compound(&ginv, k);
        let x = DVector::from_column_slice(&self.coeffs);
        let raised = gram * x;
        let full: u8 = (1 << DIM) - 1;
        let pos = &basis().position;
        for (i, &m) in basis().monomials[k].iter().enumerate() {
            let comp = full & !m;
            let (_, sign) = mask_wedge(m, comp).expect("complementary monomials");
            out.coeffs[pos[comp as usize]] = f64::from(sign) * sqrt_det * raised[i];
        }
        Ok(out)
    }
}

fn gram_inner(ginv: &Matrix6, x: &Form, y: &Form) -> f64 {
    let gram = compound(ginv, x.degree);
    let xv = DVector::from_column_slice(&x.coeffs);
    let yv = DVector::from_column_slice(&y.coeffs);
    xv.dot(&(gram * yv))
}

/// Inverse of a symmetric positive definite matrix, rejecting anything else.
pub fn spd_inverse(g: &Matrix6) -> Result<Matrix6> {
    if (g - g.transpose()).abs().max() > 1e-10 * g.abs().max().max(1.0) {
        return Err(Error::NotPositiveDefinite);
    }
    Cholesky::new(*g)
        .map(|c| c.inverse())
        .ok_or(Error::NotPositiveDefinite)
}

/// Matrix of a 2-form as a bilinear form on tangent vectors, `ω(e_i, e_j)`.
pub fn two_form_matrix(w: &Form) -> Matrix6 {
    assert_eq!(w.degree, 2, "two_form_matrix needs a 2-form");
    let mut m = Matrix6::zeros();
    for (idx, c) in basis_indices(2).iter().zip(&w.coeffs) {
        m[(idx[0], idx[1])] = *c;
        m[(idx[1], idx[0])] = -*c;
    }
    m
}

impl AddAssign<&Form> for Form {
    fn add_assign(&mut self, rhs: &Form) {
        assert_eq!(self.degree, rhs.degree, "adding forms of different degree");
        for (a, b) in self.coeffs.iter_mut().zip(&rhs.coeffs) {
            *a += b;
        }
    }
}

impl SubAssign<&Form> for Form {
    fn sub_assign(&mut self, rhs: &Form) {
        assert_eq!(self.degree, rhs.degree, "subtracting forms of different degree");
        for (a, b) in self.coeffs.iter_mut().zip(&rhs.coeffs) {
            *a -= b;
        }
    }
}

impl Add<&Form> for &Form {
    type Output = Form;
    fn add(self, rhs: &Form) -> Form {
        let mut out = self.clone();
        out += rhs;
        out
    }
}

impl Add for Form {
    type Output = Form;
    fn add(mut self, rhs: Form) -> Form {
        self += &rhs;
        self
    }
}

impl Sub<&Form> for &Form {
    type Output = Form;
    fn sub(self, rhs: &Form) -> Form {
        let mut out = self.clone();
        out -= rhs;
        out
    }
}

impl Sub for Form {
    type Output = Form;
    fn sub(mut self, rhs: Form) -> Form {
        self -= &rhs;
        self
    }
}

impl Mul<&Form> for f64 {
    type Output = Form;
    fn mul(self, rhs: &Form) -> Form {
        rhs.scale(self)
    }
}

impl Mul<Form> for f64 {
    type Output = Form;
    fn mul(self, rhs: Form) -> Form {
        rhs.scale(self)
    }
}

impl Neg for &Form {
    type Output = Form;
    fn neg(self) -> Form {
        self.scale(-1.0)
    }
}

impl Neg for Form {
    type Output = Form;
    fn neg(self) -> Form {
        self.scale(-1.0)
    }
}
