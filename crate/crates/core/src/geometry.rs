//! Product domains `D = M × N` with nested shells `D″ ⋐ D′ ⋐ D`.

use crate::rng::{self, StreamRng};
use crate::{invalid, Error, Result, C64};
use serde::Serialize;
use smallvec::SmallVec;
use std::ops::{Deref, DerefMut};

/// A point of `C^k`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ComplexVec(pub SmallVec<[C64; 4]>);

impl ComplexVec {
    pub fn zeros(k: usize) -> Self {
        ComplexVec(SmallVec::from_elem(C64::new(0.0, 0.0), k))
    }

    pub fn from_slice(v: &[C64]) -> Self {
        ComplexVec(SmallVec::from_slice(v))
    }

    pub fn from_parts(a: &[C64], b: &[C64]) -> Self {
        let mut v = SmallVec::with_capacity(a.len() + b.len());
        v.extend_from_slice(a);
        v.extend_from_slice(b);
        ComplexVec(v)
    }

    /// Convenience constructor from `(re, im)` pairs.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Self {
        ComplexVec(pairs.iter().map(|&(r, i)| C64::new(r, i)).collect())
    }

    pub fn norm_sqr(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Euclidean norm on `C^k = R^{2k}`, scaled to avoid overflow.
    pub fn norm(&self) -> f64 {
        let m = self.max_abs();
        if m == 0.0 || !m.is_finite() {
            return m;
        }
        let s: f64 = self.0.iter().map(|z| (z / m).norm_sqr()).sum();
        m * s.sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn dist(&self, other: &ComplexVec) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn add_scaled(&self, s: C64, dir: &[C64]) -> ComplexVec {
        ComplexVec(self.0.iter().zip(dir).map(|(a, b)| a + s * b).collect())
    }

    pub fn check_len(&self, k: usize) -> Result<()> {
        if self.len() != k {
            return Err(Error::Dimension { expected: k, got: self.len() });
        }
        Ok(())
    }
}

impl Deref for ComplexVec {
    type Target = [C64];
    fn deref(&self) -> &[C64] {
        &self.0
    }
}

impl DerefMut for ComplexVec {
    fn deref_mut(&mut self) -> &mut [C64] {
        &mut self.0
    }
}

impl From<Vec<C64>> for ComplexVec {
    fn from(v: Vec<C64>) -> Self {
        ComplexVec(SmallVec::from_vec(v))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Polydisc,
    Ball,
}

/// Selects one of the three nested shells.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Shell {
    /// `D = M × N`
    Outer,
    /// `D′ = M′ × N′`
    Prime,
    /// `D″ = M″ × N″`
    Second,
}

impl Shell {
    fn index(self) -> usize {
        match self {
            Shell::Outer => 0,
            Shell::Prime => 1,
            Shell::Second => 2,
        }
    }
}

/// One factor (`M` or `N`): a polydisc or ball centred at the origin with three radii.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Factor {
    pub dim: usize,
    pub shape: Shape,
    /// Outer, prime and second radius, strictly decreasing.
    pub radii: [f64; 3],
}

impl Factor {
    pub fn new(dim: usize, shape: Shape, radii: [f64; 3]) -> Result<Self> {
        if !(radii[0] > radii[1] && radii[1] > radii[2] && radii[2] > 0.0) {
            return invalid(format!("shell radii must be strictly decreasing and positive, got {radii:?}"));
        }
        if radii.iter().any(|r| !r.is_finite()) {
            return invalid("non-finite radius");
        }
        Ok(Factor { dim, shape, radii })
    }

    /// Default shells at 90% and 80% of the outer radius.
    pub fn with_default_shells(dim: usize, shape: Shape, r: f64) -> Result<Self> {
        Self::new(dim, shape, [r, 0.9 * r, 0.8 * r])
    }

    pub fn radius(&self, shell: Shell) -> f64 {
        self.radii[shell.index()]
    }

    /// Gauge of the factor shape: max modulus (polydisc) or Euclidean norm (ball).
    pub fn gauge(&self, pts: &[C64]) -> f64 {
        match self.shape {
            Shape::Polydisc => pts.iter().map(|z| z.norm()).fold(0.0, f64::max),
            Shape::Ball => pts.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt(),
        }
    }

    pub fn contains(&self, shell: Shell, pts: &[C64]) -> bool {
        self.dim == 0 || self.gauge(pts) < self.radius(shell)
    }

    /// Euclidean distance to the boundary of the outer shell, positive inside.
    /// For both shapes this equals `r − gauge`.
    pub fn boundary_distance(&self, pts: &[C64]) -> f64 {
        if self.dim == 0 {
            return f64::INFINITY;
        }
        self.radii[0] - self.gauge(pts)
    }

    /// Uniform sample of the shell interior.
    pub fn sample_interior(&self, rng: &mut StreamRng, shell: Shell) -> Vec<C64> {
        let r = self.radius(shell);
        match self.shape {
            Shape::Polydisc => (0..self.dim).map(|_| rng::in_disc(rng, r)).collect(),
            Shape::Ball => {
                let dir = unit_sphere(rng, self.dim);
                let rho = r * rng::uniform(rng).powf(1.0 / (2 * self.dim) as f64);
                dir.into_iter().map(|z| z * rho).collect()
            }
        }
    }

    /// Sample of the topological boundary of the outer shell.
    pub fn sample_boundary(&self, rng: &mut StreamRng) -> Vec<C64> {
        let r = self.radii[0];
        match self.shape {
            Shape::Polydisc => {
                let hit = (rng::uniform(rng) * self.dim as f64) as usize % self.dim.max(1);
                (0..self.dim)
                    .map(|i| {
                        if i == hit {
                            rng::unit_circle(rng) * r
                        } else {
                            rng::in_disc(rng, r)
                        }
                    })
                    .collect()
            }
            Shape::Ball => unit_sphere(rng, self.dim).into_iter().map(|z| z * r).collect(),
        }
    }

    /// Sample within the outer `frac` band next to the boundary.
    pub fn sample_near_boundary(&self, rng: &mut StreamRng, frac: f64) -> Vec<C64> {
        let r = self.radii[0];
        match self.shape {
            Shape::Polydisc => {
                let hit = (rng::uniform(rng) * self.dim as f64) as usize % self.dim.max(1);
                (0..self.dim)
                    .map(|i| {
                        if i == hit {
                            rng::in_annulus(rng, (1.0 - frac) * r, r)
                        } else {
                            rng::in_disc(rng, r)
                        }
                    })
                    .collect()
            }
            Shape::Ball => {
                let rho = r * (1.0 - frac * rng::uniform(rng));
                unit_sphere(rng, self.dim).into_iter().map(|z| z * rho).collect()
            }
        }
    }

    /// Same factor with the given shell promoted to the outer radius.
    /// The factor rescaled so that its outer radius becomes the radius of `shell`.
    pub fn shrunk(&self, shell: Shell) -> Factor {
        self.shrink(shell)
    }

    /// All radii multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Factor {
        Factor { dim: self.dim, shape: self.shape, radii: self.radii.map(|x| x * s) }
    }

    fn shrink(&self, shell: Shell) -> Factor {
        let r = self.radius(shell);
        let scale = r / self.radii[0];
        Factor { dim: self.dim, shape: self.shape, radii: self.radii.map(|x| x * scale) }
    }
}

fn unit_sphere(rng: &mut StreamRng, dim: usize) -> Vec<C64> {
    loop {
        let v = rng::complex_gaussian(rng, dim);
        let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|z| z / n).collect();
        }
    }
}

/// `D = M × N ⊂ C^p × C^(k−p)` with shells.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Domain {
    pub k: usize,
    pub p: usize,
    pub m: Factor,
    pub n: Factor,
}

impl Domain {
    pub fn new(m: Factor, n: Factor) -> Result<Self> {
        if m.dim == 0 {
            return invalid("horizontal factor must have positive dimension");
        }
        Ok(Domain { k: m.dim + n.dim, p: m.dim, m, n })
    }

    /// Polydisc `M × N` of common outer radius `r` with default shells.
    pub fn polydisc(k: usize, p: usize, r: f64) -> Result<Self> {
        if p == 0 || p > k {
            return invalid(format!("need 1 ≤ p ≤ k, got p={p}, k={k}"));
        }
        Self::new(
            Factor::with_default_shells(p, Shape::Polydisc, r)?,
            Factor::with_default_shells(k - p, Shape::Polydisc, r)?,
        )
    }

    pub fn bidisc(r: f64) -> Self {
        Self::polydisc(2, 1, r).expect("positive radius")
    }

    pub fn balls(k: usize, p: usize, r: f64) -> Result<Self> {
        if p == 0 || p > k {
            return invalid(format!("need 1 ≤ p ≤ k, got p={p}, k={k}"));
        }
        Self::new(
            Factor::with_default_shells(p, Shape::Ball, r)?,
            Factor::with_default_shells(k - p, Shape::Ball, r)?,
        )
    }

    pub fn split<'a>(&self, x: &'a [C64]) -> (&'a [C64], &'a [C64]) {
        x.split_at(self.p)
    }

    pub fn contains(&self, shell: Shell, x: &[C64]) -> Result<bool> {
        if x.len() != self.k {
            return Err(Error::Dimension { expected: self.k, got: x.len() });
        }
        Ok(self.contains_unchecked(shell, x))
    }

    pub(crate) fn contains_unchecked(&self, shell: Shell, x: &[C64]) -> bool {
        let (a, b) = self.split(x);
        self.m.contains(shell, a) && self.n.contains(shell, b)
    }

    pub fn in_outer(&self, x: &[C64]) -> bool {
        self.contains_unchecked(Shell::Outer, x)
    }

    pub fn sample_interior(&self, rng: &mut StreamRng, shell: Shell) -> ComplexVec {
        ComplexVec::from_parts(&self.m.sample_interior(rng, shell), &self.n.sample_interior(rng, shell))
    }

    /// Uniform in `D` with probability 1/2, otherwise within 5% of `∂M × N` or `M × ∂N`.
    pub fn sample_boundary_biased(&self, rng: &mut StreamRng) -> ComplexVec {
        let u = rng::uniform(rng);
        if u < 0.5 || self.n.dim == 0 {
            if u < 0.25 {
                let a = self.m.sample_near_boundary(rng, 0.05);
                let b = self.n.sample_interior(rng, Shell::Outer);
                return ComplexVec::from_parts(&a, &b);
            }
            return self.sample_interior(rng, Shell::Outer);
        }
        if u < 0.75 {
            let a = self.m.sample_near_boundary(rng, 0.05);
            let b = self.n.sample_interior(rng, Shell::Outer);
            ComplexVec::from_parts(&a, &b)
        } else {
            let a = self.m.sample_interior(rng, Shell::Outer);
            let b = self.n.sample_near_boundary(rng, 0.05);
            ComplexVec::from_parts(&a, &b)
        }
    }

    /// Domain whose outer shell is the selected shell of `self`, with the same relative gaps.
    pub fn shrink(&self, shell: Shell) -> Domain {
        Domain { k: self.k, p: self.p, m: self.m.shrink(shell), n: self.n.shrink(shell) }
    }

    /// The same set with vertical coordinates listed first (domain of the inverse map).
    pub fn swapped(&self) -> Result<Domain> {
        Domain::new(self.n.clone(), self.m.clone())
    }

    /// Product domain `(M₁ × M₂) × (N₁ × N₂)`; both factors must share shape and radii.
    pub fn product(a: &Domain, b: &Domain) -> Result<Domain> {
        let same = |x: &Factor, y: &Factor| x.shape == y.shape && x.radii == y.radii;
        if !same(&a.m, &b.m) || !same(&a.n, &b.n) {
            return invalid("product domains need matching shapes and radii");
        }
        if a.m.shape == Shape::Ball {
            return invalid("products of balls are not balls; use polydiscs");
        }
        let m = Factor { dim: a.m.dim + b.m.dim, ..a.m.clone() };
        let n = Factor { dim: a.n.dim + b.n.dim, ..a.n.clone() };
        Domain::new(m, n)
    }

    /// Largest outer radius, used to size boxes.
    pub fn outer_radius(&self) -> f64 {
        self.m.radii[0].max(if self.n.dim > 0 { self.n.radii[0] } else { 0.0 })
    }
}

/// Seeded sample of the vertical boundary `∂M × N`.
pub fn sample_vertical_boundary(dom: &Domain, count: usize, seed: u64) -> Result<Vec<ComplexVec>> {
    if count == 0 {
        return invalid("count must be at least 1");
    }
    Ok((0..count)
        .map(|i| {
            let mut r = rng::stream(seed, 0x5642, i as u64);
            let a = dom.m.sample_boundary(&mut r);
            let b = dom.n.sample_interior(&mut r, Shell::Outer);
            ComplexVec::from_parts(&a, &b)
        })
        .collect())
}

/// Bowen metric: largest pointwise distance along two orbits of equal length.
pub fn orbit_metric_distance(x: &[ComplexVec], y: &[ComplexVec]) -> Result<f64> {
    if x.len() != y.len() {
        return invalid(format!("orbit lengths differ: {} vs {}", x.len(), y.len()));
    }
    Ok(x.iter().zip(y).map(|(a, b)| a.dist(b)).fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cv(pairs: &[(f64, f64)]) -> ComplexVec {
        ComplexVec::from_pairs(pairs)
    }

    #[test]
    fn containment_examples() {
        let d = Domain::bidisc(2.0);
        assert!(d.contains(Shell::Outer, &cv(&[(0.0, 0.0), (0.0, 0.0)])).unwrap());
        assert!(!d.contains(Shell::Outer, &cv(&[(2.5, 0.0), (0.0, 0.0)])).unwrap());
        assert!(!d.contains(Shell::Prime, &cv(&[(1.9, 0.0), (0.0, 0.0)])).unwrap());
        assert!(d.contains(Shell::Outer, &cv(&[(0.0, 0.0)])).is_err());
    }

    #[test]
    fn vertical_boundary_samples() {
        let d = Domain::bidisc(2.0);
        let pts = sample_vertical_boundary(&d, 4, 7).unwrap();
        assert_eq!(pts.len(), 4);
        for p in &pts {
            assert!((p[0].norm() - 2.0).abs() < 2e-12);
            assert!(p[1].norm() < 2.0);
        }
        assert_eq!(pts, sample_vertical_boundary(&d, 4, 7).unwrap());
        assert!(sample_vertical_boundary(&d, 0, 7).is_err());
    }

    #[test]
    fn ball_boundary_samples() {
        let d = Domain::balls(3, 2, 1.5).unwrap();
        for p in sample_vertical_boundary(&d, 50, 1).unwrap() {
            let g = (p[0].norm_sqr() + p[1].norm_sqr()).sqrt();
            assert!((g - 1.5).abs() < 1.5e-12);
            assert!(p[2].norm() < 1.5);
        }
    }

    #[test]
    fn orbit_metric() {
        let a = vec![cv(&[(0.0, 0.0)]); 5];
        assert_eq!(orbit_metric_distance(&a, &a).unwrap(), 0.0);
        let mut b = a.clone();
        b[3] = cv(&[(0.5, 0.0)]);
        assert_eq!(orbit_metric_distance(&a, &b).unwrap(), 0.5);
        let x = vec![cv(&[(0.0, 0.0)]), cv(&[(0.0, 0.0)])];
        let y = vec![cv(&[(1.0, 0.0)]), cv(&[(0.0, 2.0)])];
        assert_eq!(orbit_metric_distance(&x, &y).unwrap(), 2.0);
        assert!(orbit_metric_distance(&x, &y[..1]).is_err());
    }

    #[test]
    fn bad_radii_rejected() {
        assert!(Factor::new(1, Shape::Polydisc, [1.0, 1.0, 0.5]).is_err());
        assert!(Domain::polydisc(2, 0, 1.0).is_err());
    }
}
