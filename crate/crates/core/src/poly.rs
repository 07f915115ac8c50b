//! Multivariate polynomials over the graded-lexicographic monomial basis.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 0..k {
        r = r * (n - i) as u128 / (i + 1) as u128;
    }
    r as usize
}

/// Number of monomials of total degree at most `degree` in `d` variables.
pub fn n_monomials(d: usize, degree: usize) -> usize {
    binomial(d + degree, degree)
}

/// Exponent vectors in graded-lexicographic order: by total degree, then
/// lexicographically descending within a degree (`x1` before `x2`).
pub fn monomials(d: usize, degree: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::with_capacity(n_monomials(d, degree));
    for deg in 0..=degree {
        let mut cur = vec![0u32; d];
        fill(&mut out, &mut cur, 0, deg as u32);
    }
    out
}

fn fill(out: &mut Vec<Vec<u32>>, cur: &mut Vec<u32>, pos: usize, left: u32) {
    let d = cur.len();
    if pos + 1 == d {
        cur[pos] = left;
        out.push(cur.clone());
        cur[pos] = 0;
        return;
    }
    if d == 0 {
        return;
    }
    for e in (0..=left).rev() {
        cur[pos] = e;
        fill(out, cur, pos + 1, left - e);
    }
    cur[pos] = 0;
}

/// Evaluate every monomial at `x` into `out`, following `exps`.
pub fn eval_monomials(exps: &[Vec<u32>], x: &[f64], out: &mut [f64]) {
    for (o, e) in out.iter_mut().zip(exps) {
        let mut v = 1.0;
        for (xi, &k) in x.iter().zip(e) {
            if k > 0 {
                v *= xi.powi(k as i32);
            }
        }
        *o = v;
    }
}

/// Dense polynomial of bounded total degree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolyRepr", into = "PolyRepr")]
pub struct Polynomial {
    d: usize,
    degree: usize,
    coeffs: Vec<f64>,
    exps: Vec<Vec<u32>>,
}

#[derive(Serialize, Deserialize)]
struct PolyRepr {
    d: usize,
    degree: usize,
    coeffs: Vec<f64>,
}

impl TryFrom<PolyRepr> for Polynomial {
    type Error = Error;
    fn try_from(r: PolyRepr) -> Result<Self> {
        Polynomial::new(r.d, r.degree, r.coeffs)
    }
}

impl From<Polynomial> for PolyRepr {
    fn from(p: Polynomial) -> Self {
        PolyRepr { d: p.d, degree: p.degree, coeffs: p.coeffs }
    }
}

impl Polynomial {
    pub fn new(d: usize, degree: usize, coeffs: Vec<f64>) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("polynomial needs at least one variable".into()));
        }
        check_dim(n_monomials(d, degree), coeffs.len())?;
        Ok(Self { d, degree, coeffs, exps: monomials(d, degree) })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn exponents(&self) -> &[Vec<u32>] {
        &self.exps
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for (c, e) in self.coeffs.iter().zip(&self.exps) {
            if *c == 0.0 {
                continue;
            }
            let mut v = *c;
            for (xi, &k) in x.iter().zip(e) {
                if k > 0 {
                    v *= xi.powi(k as i32);
                }
            }
            s += v;
        }
        s
    }

    /// The polynomial `x ↦ p(A(x − c))`, expanded exactly.
    pub fn compose_affine(&self, a: &DMatrix<f64>, c: &[f64]) -> Polynomial {
        let d = self.d;
        let ac = a * nalgebra::DVector::from_column_slice(c);
        // z_i as a sparse degree-1 polynomial in x.
        let linear: Vec<Sparse> = (0..d)
            .map(|i| {
                let mut s = Sparse::new();
                let zero = vec![0u32; d];
                if ac[i] != 0.0 {
                    s.insert(zero.clone(), -ac[i]);
                }
                for j in 0..d {
                    if a[(i, j)] != 0.0 {
                        let mut e = zero.clone();
                        e[j] = 1;
                        s.insert(e, a[(i, j)]);
                    }
                }
                s
            })
            .collect();
        let powers: Vec<Vec<Sparse>> = linear
            .iter()
            .map(|l| {
                let mut one = Sparse::new();
                one.insert(vec![0u32; d], 1.0);
                let mut v = vec![one];
                for k in 1..=self.degree {
                    let next = mul(&v[k - 1], l);
                    v.push(next);
                }
                v
            })
            .collect();
        let mut total = Sparse::new();
        for (coef, e) in self.coeffs.iter().zip(&self.exps) {
            if *coef == 0.0 {
                continue;
            }
            let mut term = Sparse::new();
            term.insert(vec![0u32; d], *coef);
            for (i, &k) in e.iter().enumerate() {
                if k > 0 {
                    term = mul(&term, &powers[i][k as usize]);
                }
            }
            for (m, v) in term {
                *total.entry(m).or_insert(0.0) += v;
            }
        }
        let coeffs = self.exps.iter().map(|e| total.get(e).copied().unwrap_or(0.0)).collect();
        Polynomial { d, degree: self.degree, coeffs, exps: self.exps.clone() }
    }
}

type Sparse = BTreeMap<Vec<u32>, f64>;

fn mul(a: &Sparse, b: &Sparse) -> Sparse {
    let mut out = Sparse::new();
    for (ea, ca) in a {
        for (eb, cb) in b {
            let e: Vec<u32> = ea.iter().zip(eb).map(|(x, y)| x + y).collect();
            *out.entry(e).or_insert(0.0) += ca * cb;
        }
    }
    out
}
