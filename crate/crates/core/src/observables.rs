//! Closed-form real observables on `C^k`: smooth test functions for
//! correlations and invariance checks, and plurisubharmonic probes.

use crate::C64;
use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Observable {
    Constant { value: f64 },
    /// `Re(Σ cᵢ xᵢ + offset)`
    RealAffine { coeffs: Vec<(f64, f64)>, offset: (f64, f64) },
    /// `Re(c · x_index^power)`
    Monomial { index: usize, power: u32, coeff: (f64, f64) },
    /// `|x_index|`
    Modulus { index: usize },
    /// `log(ε² + |ℓ(x)|²)` with `ℓ` affine.
    LogAffine { coeffs: Vec<(f64, f64)>, offset: (f64, f64), eps: f64 },
    /// `log(δ + |ℓ(x)|)` with `ℓ` affine.
    LogDistance { coeffs: Vec<(f64, f64)>, offset: (f64, f64), delta: f64 },
    /// `exp(−1/(1 − ‖x − c‖²/r²))` inside the ball, 0 outside.
    Bump { center: Vec<(f64, f64)>, radius: f64 },
    /// Bump in the modulus of one coordinate: `β(((|x_index| − r0)/width)²)`.
    ModulusBump { index: usize, r0: f64, width: f64 },
    /// `clamp(φ, −bound, bound)`
    Clamped { inner: Box<Observable>, bound: f64 },
    /// `Σ wᵢ φᵢ`
    Sum { terms: Vec<(f64, Observable)> },
}

fn c(p: (f64, f64)) -> C64 {
    C64::new(p.0, p.1)
}

fn affine(coeffs: &[(f64, f64)], offset: (f64, f64), x: &[C64]) -> C64 {
    coeffs.iter().zip(x).fold(c(offset), |acc, (a, xi)| acc + c(*a) * xi)
}

fn bump_profile(s: f64) -> f64 {
    if s >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - s)).exp()
    }
}

impl Observable {
    pub fn constant(value: f64) -> Self {
        Observable::Constant { value }
    }

    /// `Re x_index`
    pub fn re(index: usize, k: usize) -> Self {
        let mut coeffs = vec![(0.0, 0.0); k];
        coeffs[index] = (1.0, 0.0);
        Observable::RealAffine { coeffs, offset: (0.0, 0.0) }
    }

    /// `Im x_index`
    pub fn im(index: usize, k: usize) -> Self {
        let mut coeffs = vec![(0.0, 0.0); k];
        coeffs[index] = (0.0, -1.0);
        Observable::RealAffine { coeffs, offset: (0.0, 0.0) }
    }

    pub fn bump(center: &[C64], radius: f64) -> Self {
        Observable::Bump { center: center.iter().map(|z| (z.re, z.im)).collect(), radius }
    }

    pub fn clamped(self, bound: f64) -> Self {
        Observable::Clamped { inner: Box::new(self), bound }
    }

    pub fn eval(&self, x: &[C64]) -> f64 {
        match self {
            Observable::Constant { value } => *value,
            Observable::RealAffine { coeffs, offset } => affine(coeffs, *offset, x).re,
            Observable::Monomial { index, power, coeff } => (c(*coeff) * x[*index].powu(*power)).re,
            Observable::Modulus { index } => x[*index].norm(),
            Observable::LogAffine { coeffs, offset, eps } => (eps * eps + affine(coeffs, *offset, x).norm_sqr()).ln(),
            Observable::LogDistance { coeffs, offset, delta } => (delta + affine(coeffs, *offset, x).norm()).ln(),
            Observable::Bump { center, radius } => {
                let d2: f64 = center.iter().zip(x).map(|(a, b)| (b - c(*a)).norm_sqr()).sum();
                bump_profile(d2 / (radius * radius))
            }
            Observable::ModulusBump { index, r0, width } => {
                let t = (x[*index].norm() - r0) / width;
                bump_profile(t * t)
            }
            Observable::Clamped { inner, bound } => inner.eval(x).clamp(-bound, *bound),
            Observable::Sum { terms } => terms.iter().map(|(w, o)| w * o.eval(x)).sum(),
        }
    }

    /// Whether the observable is plurisubharmonic by construction.
    pub fn is_psh(&self) -> bool {
        match self {
            Observable::Constant { .. } | Observable::RealAffine { .. } | Observable::Monomial { .. } => true,
            Observable::Modulus { .. } | Observable::LogAffine { .. } | Observable::LogDistance { .. } => true,
            Observable::Bump { .. } | Observable::ModulusBump { .. } | Observable::Clamped { .. } => false,
            Observable::Sum { terms } => terms.iter().all(|(w, o)| *w >= 0.0 && o.is_psh()),
        }
    }

    pub fn name(&self) -> String {
        serde_json::to_string(self).unwrap_or_else(|_| "observable".into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_values() {
        let x = [C64::new(0.5, -1.0), C64::new(2.0, 0.25)];
        assert_eq!(Observable::re(0, 2).eval(&x), 0.5);
        assert_eq!(Observable::im(1, 2).eval(&x), 0.25);
        assert_eq!(Observable::constant(3.0).eval(&x), 3.0);
        assert!((Observable::Modulus { index: 1 }.eval(&x) - x[1].norm()).abs() < 1e-15);
        let b = Observable::bump(&x, 1.0);
        assert!((b.eval(&x) - (-1.0f64).exp()).abs() < 1e-15);
        let l = Observable::LogAffine { coeffs: vec![(1.0, 0.0), (0.0, 0.0)], offset: (0.0, 0.0), eps: 0.0 }.clamped(1.0);
        assert_eq!(l.eval(&[C64::new(0.0, 0.0), C64::new(0.0, 0.0)]), -1.0);
        let m = Observable::Monomial { index: 0, power: 2, coeff: (1.0, 0.0) };
        assert!((m.eval(&x) - (x[0] * x[0]).re).abs() < 1e-15);
    }
}
