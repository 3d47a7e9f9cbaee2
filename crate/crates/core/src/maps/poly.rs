//! Univariate and sparse multivariate complex polynomials.

use crate::C64;
use smallvec::SmallVec;

/// Dense univariate polynomial, coefficients in ascending order.
#[derive(Clone, Debug, PartialEq)]
pub struct Poly {
    pub coeffs: Vec<C64>,
}

impl Poly {
    pub fn new(mut coeffs: Vec<C64>) -> Self {
        while coeffs.len() > 1 && coeffs.last().is_some_and(|c| *c == C64::new(0.0, 0.0)) {
            coeffs.pop();
        }
        if coeffs.is_empty() {
            coeffs.push(C64::new(0.0, 0.0));
        }
        Poly { coeffs }
    }

    pub fn from_real(c: &[f64]) -> Self {
        Self::new(c.iter().map(|&x| C64::new(x, 0.0)).collect())
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn eval(&self, z: C64) -> C64 {
        self.coeffs.iter().rev().fold(C64::new(0.0, 0.0), |acc, &c| acc * z + c)
    }

    /// Value and first derivative by a single Horner pass.
    pub fn eval_with_derivative(&self, z: C64) -> (C64, C64) {
        let mut p = C64::new(0.0, 0.0);
        let mut dp = C64::new(0.0, 0.0);
        for &c in self.coeffs.iter().rev() {
            dp = dp * z + p;
            p = p * z + c;
        }
        (p, dp)
    }
}

/// Sparse polynomial in several variables: `Σ c · x^e`.
#[derive(Clone, Debug, PartialEq)]
pub struct MPoly {
    pub terms: Vec<(C64, SmallVec<[u16; 4]>)>,
    pub nvars: usize,
}

impl MPoly {
    pub fn new(nvars: usize, terms: Vec<(C64, Vec<u16>)>) -> Self {
        let terms = terms
            .into_iter()
            .map(|(c, e)| {
                assert_eq!(e.len(), nvars, "exponent vector length");
                (c, SmallVec::from_vec(e))
            })
            .collect();
        MPoly { terms, nvars }
    }

    /// Monomial helper with real coefficient.
    pub fn term(c: f64, e: &[u16]) -> (C64, Vec<u16>) {
        (C64::new(c, 0.0), e.to_vec())
    }

    pub fn total_degree(&self) -> u32 {
        self.terms
            .iter()
            .filter(|(c, _)| *c != C64::new(0.0, 0.0))
            .map(|(_, e)| e.iter().map(|&x| x as u32).sum())
            .max()
            .unwrap_or(0)
    }

    pub fn eval(&self, x: &[C64]) -> C64 {
        self.terms
            .iter()
            .map(|(c, e)| e.iter().zip(x).fold(*c, |acc, (&k, &xi)| acc * xi.powu(k as u32)))
            .sum()
    }

    /// `∂/∂x_j`.
    pub fn partial(&self, j: usize, x: &[C64]) -> C64 {
        self.terms
            .iter()
            .filter(|(_, e)| e[j] > 0)
            .map(|(c, e)| {
                let mut acc = *c * e[j] as f64;
                for (i, (&k, &xi)) in e.iter().zip(x).enumerate() {
                    let k = if i == j { k - 1 } else { k };
                    acc *= xi.powu(k as u32);
                }
                acc
            })
            .sum()
    }

    /// Renames variables: the new variable `i` is the old variable `perm[i]`.
    pub fn permute_vars(&self, perm: &[usize]) -> MPoly {
        let terms = self
            .terms
            .iter()
            .map(|(c, e)| (*c, perm.iter().map(|&old| e[old]).collect()))
            .collect();
        MPoly { terms, nvars: self.nvars }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn horner_matches_naive() {
        let p = Poly::from_real(&[1.0, -1.0, 0.0, 2.0]);
        let z = C64::new(0.3, -1.2);
        let naive = C64::new(1.0, 0.0) - z + 2.0 * z * z * z;
        let (v, dv) = p.eval_with_derivative(z);
        assert!((v - naive).norm() < 1e-14);
        assert!((dv - (-1.0 + 6.0 * z * z)).norm() < 1e-14);
        assert_eq!(p.degree(), 3);
    }

    #[test]
    fn mpoly_partials() {
        // x² y − 3 z
        let q = MPoly::new(3, vec![MPoly::term(1.0, &[2, 1, 0]), MPoly::term(-3.0, &[0, 0, 1])]);
        let x = [C64::new(1.0, 1.0), C64::new(0.5, 0.0), C64::new(0.0, 2.0)];
        assert!((q.eval(&x) - (x[0] * x[0] * x[1] - 3.0 * x[2])).norm() < 1e-14);
        assert!((q.partial(0, &x) - 2.0 * x[0] * x[1]).norm() < 1e-14);
        assert!((q.partial(2, &x) - C64::new(-3.0, 0.0)).norm() < 1e-14);
        assert_eq!(q.total_degree(), 3);
    }
}
