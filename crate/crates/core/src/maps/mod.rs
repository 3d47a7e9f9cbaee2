//! The map zoo: forward and inverse evaluation with exact complex Jacobians.
//!
//! Coordinates are always ordered horizontal-first: a map with `p` horizontal
//! directions acts on `(x_h, x_v) ∈ C^p × C^(k−p)`.

pub mod poly;

use crate::geometry::{ComplexVec, Domain};
use crate::{invalid, rng, Error, Result, C64};
use nalgebra::DMatrix;
pub use poly::{MPoly, Poly};

/// Holomorphic differential, a `k × k` complex matrix.
pub type Jacobian = DMatrix<C64>;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// `f(z, w) = (p(z) − a·w, z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Henon {
    pub poly: Poly,
    pub a: C64,
}

impl Henon {
    pub fn new(poly: Poly, a: C64) -> Result<Self> {
        if a.norm() == 0.0 {
            return invalid("henon parameter a must be nonzero");
        }
        if poly.degree() < 2 {
            return invalid("henon polynomial must have degree at least 2");
        }
        Ok(Henon { poly, a })
    }
}

/// Diagonal monomial map `x_i ↦ c_i · x_i^{m_i}` with `p` horizontal coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoupled {
    pub coeffs: Vec<C64>,
    pub exps: Vec<u32>,
    pub p: usize,
}

impl Decoupled {
    pub fn new(coeffs: Vec<C64>, exps: Vec<u32>, p: usize) -> Result<Self> {
        if coeffs.len() != exps.len() || coeffs.is_empty() {
            return invalid("decoupled map needs one coefficient per exponent");
        }
        if p == 0 || p > coeffs.len() {
            return invalid("decoupled map needs 1 ≤ p ≤ k");
        }
        if coeffs.iter().any(|c| c.norm() == 0.0) || exps.contains(&0) {
            return invalid("decoupled coefficients must be nonzero and exponents positive");
        }
        Ok(Decoupled { coeffs, exps, p })
    }

    fn root(&self, i: usize, y: C64) -> C64 {
        let m = self.exps[i];
        let t = y / self.coeffs[i];
        if m == 1 {
            t
        } else if t.norm() == 0.0 {
            ZERO
        } else {
            t.powf(1.0 / m as f64)
        }
    }
}

/// Polynomial automorphism with explicit polynomial inverse.
#[derive(Clone, Debug, PartialEq)]
pub struct RegularAuto {
    pub forward: Vec<MPoly>,
    pub inverse: Vec<MPoly>,
    pub p: usize,
    pub d_plus: u32,
    pub d_minus: u32,
    pub label: String,
}

impl RegularAuto {
    pub fn new(forward: Vec<MPoly>, inverse: Vec<MPoly>, p: usize, label: &str) -> Result<Self> {
        let k = forward.len();
        if inverse.len() != k || k < 2 || p == 0 || p >= k {
            return invalid("regular automorphism needs k ≥ 2 components, matching inverse and 1 ≤ p < k");
        }
        if forward.iter().chain(&inverse).any(|q| q.nvars != k) {
            return invalid("component polynomial has wrong number of variables");
        }
        let d_plus = forward.iter().map(MPoly::total_degree).max().unwrap_or(0);
        let d_minus = inverse.iter().map(MPoly::total_degree).max().unwrap_or(0);
        let lhs = (d_plus as u64).checked_pow(p as u32);
        let rhs = (d_minus as u64).checked_pow((k - p) as u32);
        if lhs.is_none() || lhs != rhs {
            return invalid(format!(
                "degree constraint violated: d+^p = {d_plus}^{p}, d-^(k-p) = {d_minus}^{}",
                k - p
            ));
        }
        let auto = RegularAuto { forward, inverse, p, d_plus, d_minus, label: label.to_string() };
        for i in 0..32 {
            let mut r = rng::stream(0x5EED, 0x4155, i);
            let x: Vec<C64> = (0..k).map(|_| rng::in_disc(&mut r, 1.0)).collect();
            let y: Vec<C64> = auto.forward.iter().map(|q| q.eval(&x)).collect();
            let back: Vec<C64> = auto.inverse.iter().map(|q| q.eval(&y)).collect();
            let err = back.iter().zip(&x).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            if err > 1e-9 {
                return invalid(format!("supplied inverse does not invert the map (error {err:.2e})"));
            }
        }
        Ok(auto)
    }

    /// `(x, y, z) ↦ ((x² − y)/a, (y² − z)/a, x)` on `C³`, horizontal in `(x, y)`.
    /// Here `d₊ = 2`, `d₋ = 4` and `p = 2`.
    pub fn shift_square(a: f64) -> Result<Self> {
        if a == 0.0 {
            return invalid("shift_square needs a ≠ 0");
        }
        let t = MPoly::term;
        let ia = 1.0 / a;
        let forward = vec![
            MPoly::new(3, vec![t(ia, &[2, 0, 0]), t(-ia, &[0, 1, 0])]),
            MPoly::new(3, vec![t(ia, &[0, 2, 0]), t(-ia, &[0, 0, 1])]),
            MPoly::new(3, vec![t(1.0, &[1, 0, 0])]),
        ];
        // (P, Q, S) ↦ (S, S² − aP, (S² − aP)² − aQ)
        let inverse = vec![
            MPoly::new(3, vec![t(1.0, &[0, 0, 1])]),
            MPoly::new(3, vec![t(1.0, &[0, 0, 2]), t(-a, &[1, 0, 0])]),
            MPoly::new(
                3,
                vec![
                    t(1.0, &[0, 0, 4]),
                    t(-2.0 * a, &[1, 0, 2]),
                    t(a * a, &[2, 0, 0]),
                    t(-a, &[0, 1, 0]),
                ],
            ),
        ];
        Self::new(forward, inverse, 2, "shift_square")
    }

    /// Hénon map written as a regular automorphism of `C²`.
    pub fn from_henon(h: &Henon) -> Result<Self> {
        let z = |c: C64, e: &[u16]| (c, e.to_vec());
        let mut fwd0: Vec<(C64, Vec<u16>)> =
            h.poly.coeffs.iter().enumerate().map(|(i, &c)| z(c, &[i as u16, 0])).collect();
        fwd0.push(z(-h.a, &[0, 1]));
        let ia = ONE / h.a;
        let mut inv1: Vec<(C64, Vec<u16>)> =
            h.poly.coeffs.iter().enumerate().map(|(i, &c)| z(c * ia, &[0, i as u16])).collect();
        inv1.push(z(-ia, &[1, 0]));
        Self::new(
            vec![MPoly::new(2, fwd0), MPoly::new(2, vec![z(ONE, &[1, 0])])],
            vec![MPoly::new(2, vec![z(ONE, &[0, 1])]), MPoly::new(2, inv1)],
            1,
            "henon",
        )
    }

    /// The inverse automorphism, with coordinates re-ordered horizontal-first.
    pub fn inverted(&self) -> RegularAuto {
        let k = self.forward.len();
        let perm = block_swap_perm(k, self.p);
        let remap = |polys: &[MPoly]| -> Vec<MPoly> {
            perm.iter().map(|&i| polys[i].permute_vars(&perm)).collect()
        };
        RegularAuto {
            forward: remap(&self.inverse),
            inverse: remap(&self.forward),
            p: k - self.p,
            d_plus: self.d_minus,
            d_minus: self.d_plus,
            label: format!("{}^-1", self.label),
        }
    }

    pub fn k(&self) -> usize {
        self.forward.len()
    }
}

/// Bounded analytic perturbation term added to one component.
#[derive(Clone, Debug, PartialEq)]
pub enum TermForm {
    /// `x^e`
    Monomial(Vec<u16>),
    /// `exp(Σ lᵢ xᵢ)`
    Exp(Vec<C64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerturbTerm {
    pub component: usize,
    pub coeff: C64,
    pub form: TermForm,
}

impl PerturbTerm {
    fn eval(&self, x: &[C64]) -> C64 {
        match &self.form {
            TermForm::Monomial(e) => e.iter().zip(x).fold(self.coeff, |acc, (&k, &xi)| acc * xi.powu(k as u32)),
            TermForm::Exp(l) => self.coeff * l.iter().zip(x).map(|(a, b)| a * b).sum::<C64>().exp(),
        }
    }

    fn partial(&self, j: usize, x: &[C64]) -> C64 {
        match &self.form {
            TermForm::Monomial(e) => {
                if e[j] == 0 {
                    return ZERO;
                }
                let mut acc = self.coeff * e[j] as f64;
                for (i, (&k, &xi)) in e.iter().zip(x).enumerate() {
                    acc *= xi.powu(if i == j { k as u32 - 1 } else { k as u32 });
                }
                acc
            }
            TermForm::Exp(l) => l[j] * self.eval(x),
        }
    }
}

/// `base + ε · S(x)/‖S‖_D` where `S` is a finite sum of terms normalised by its
/// sampled sup-norm on the domain it was built for.
#[derive(Clone, Debug, PartialEq)]
pub struct Perturbed {
    pub base: Box<MapSpec>,
    pub terms: Vec<PerturbTerm>,
    pub eps: f64,
    /// `1 / sup_D ‖S‖`
    pub scale: f64,
}

impl Perturbed {
    fn weight(&self) -> f64 {
        self.eps * self.scale
    }

    fn sum(&self, x: &[C64]) -> Vec<C64> {
        let mut out = vec![ZERO; x.len()];
        for t in &self.terms {
            out[t.component] += t.eval(x);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum MapSpec {
    Henon(Henon),
    Decoupled(Decoupled),
    RegularAuto(RegularAuto),
    /// `F(x₁, x₂) = (f₁(x₁), f₂(x₂))` in coordinates `(h₁, h₂, v₁, v₂)`.
    Product(Box<MapSpec>, Box<MapSpec>),
    Perturbed(Perturbed),
    /// `f⁻¹` in coordinates with the vertical block of `f` listed first.
    Inverted(Box<MapSpec>),
    /// `fⁿ`
    Iterate(Box<MapSpec>, u32),
}

/// Permutation `(v, h)` of a horizontal-first vector: new index `i` holds old index `perm[i]`.
pub fn block_swap_perm(k: usize, p: usize) -> Vec<usize> {
    (p..k).chain(0..p).collect()
}

/// Moves the first `p` coordinates to the back.
pub fn swap_blocks(x: &[C64], p: usize) -> ComplexVec {
    ComplexVec::from_parts(&x[p..], &x[..p])
}

impl MapSpec {
    pub fn henon_quadratic(c: f64, a: f64) -> MapSpec {
        MapSpec::Henon(Henon::new(Poly::from_real(&[c, 0.0, 1.0]), C64::new(a, 0.0)).expect("a ≠ 0"))
    }

    /// The decoupled model `g(z, w) = (z², w/4)`.
    pub fn decoupled_model() -> MapSpec {
        MapSpec::Decoupled(Decoupled::new(vec![ONE, C64::new(0.25, 0.0)], vec![2, 1], 1).expect("valid"))
    }

    pub fn product(f1: MapSpec, f2: MapSpec) -> MapSpec {
        MapSpec::Product(Box::new(f1), Box::new(f2))
    }

    pub fn iterate(f: MapSpec, n: u32) -> Result<MapSpec> {
        if n == 0 {
            return invalid("iterate count must be positive");
        }
        Ok(MapSpec::Iterate(Box::new(f), n))
    }

    pub fn inverse(&self) -> MapSpec {
        match self {
            MapSpec::Inverted(inner) => (**inner).clone(),
            other => MapSpec::Inverted(Box::new(other.clone())),
        }
    }

    /// Wraps `base` with `ε`-scaled terms normalised by their sup-norm sampled on `∂D`.
    pub fn perturbed(base: MapSpec, terms: Vec<PerturbTerm>, eps: f64, dom: &Domain) -> Result<MapSpec> {
        if !(eps >= 0.0) || !eps.is_finite() {
            return invalid("perturbation size must be finite and nonnegative");
        }
        let k = base.k();
        for t in &terms {
            let len = match &t.form {
                TermForm::Monomial(e) => e.len(),
                TermForm::Exp(l) => l.len(),
            };
            if t.component >= k || len != k {
                return invalid("perturbation term does not match the map dimension");
            }
        }
        let probe = Perturbed { base: Box::new(base), terms, eps, scale: 1.0 };
        // Holomorphic terms attain their sup on the distinguished boundary of a polydisc;
        // sampling the full boundary covers balls as well.
        let sup = (0..4096u64)
            .map(|i| {
                let mut r = rng::stream(0x5EED, 0x5355, i);
                let a = dom.m.sample_boundary(&mut r);
                let b = if dom.n.dim > 0 { dom.n.sample_boundary(&mut r) } else { vec![] };
                let x = ComplexVec::from_parts(&a, &b);
                probe.sum(&x).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
            })
            .fold(0.0, f64::max);
        let scale = if sup > 0.0 { 1.0 / sup } else { 0.0 };
        Ok(MapSpec::Perturbed(Perturbed { scale, ..probe }))
    }

    pub fn k(&self) -> usize {
        match self {
            MapSpec::Henon(_) => 2,
            MapSpec::Decoupled(d) => d.coeffs.len(),
            MapSpec::RegularAuto(r) => r.k(),
            MapSpec::Product(a, b) => a.k() + b.k(),
            MapSpec::Perturbed(p) => p.base.k(),
            MapSpec::Inverted(f) | MapSpec::Iterate(f, _) => f.k(),
        }
    }

    pub fn p(&self) -> usize {
        match self {
            MapSpec::Henon(_) => 1,
            MapSpec::Decoupled(d) => d.p,
            MapSpec::RegularAuto(r) => r.p,
            MapSpec::Product(a, b) => a.p() + b.p(),
            MapSpec::Perturbed(p) => p.base.p(),
            MapSpec::Inverted(f) => f.k() - f.p(),
            MapSpec::Iterate(f, _) => f.p(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            MapSpec::Henon(_) => "henon",
            MapSpec::Decoupled(_) => "decoupled",
            MapSpec::RegularAuto(_) => "regular_auto",
            MapSpec::Product(..) => "product",
            MapSpec::Perturbed(_) => "perturbed",
            MapSpec::Inverted(_) => "inverted",
            MapSpec::Iterate(..) => "iterate",
        }
    }

    /// Short human-readable descriptor.
    pub fn describe(&self) -> String {
        let cs = |v: &[C64]| v.iter().map(|c| fmt_c(*c)).collect::<Vec<_>>().join(",");
        match self {
            MapSpec::Henon(h) => format!("henon(p=[{}], a={})", cs(&h.poly.coeffs), fmt_c(h.a)),
            MapSpec::Decoupled(d) => format!("decoupled(c=[{}], m={:?}, p={})", cs(&d.coeffs), d.exps, d.p),
            MapSpec::RegularAuto(r) => format!("regular_auto({}, k={}, p={}, d+={}, d-={})", r.label, r.k(), r.p, r.d_plus, r.d_minus),
            MapSpec::Product(a, b) => format!("product({}, {})", a.describe(), b.describe()),
            MapSpec::Perturbed(p) => format!("perturbed({}, eps={}, terms={})", p.base.describe(), p.eps, p.terms.len()),
            MapSpec::Inverted(f) => format!("inverse({})", f.describe()),
            MapSpec::Iterate(f, n) => format!("iterate({}, {n})", f.describe()),
        }
    }

    /// Main dynamical degree recorded structurally for the kind.
    pub fn main_degree(&self) -> u64 {
        match self {
            MapSpec::Henon(h) => h.poly.degree() as u64,
            MapSpec::Decoupled(d) => d.exps[..d.p].iter().map(|&m| m as u64).product(),
            MapSpec::RegularAuto(r) => (r.d_plus as u64).pow(r.p as u32),
            MapSpec::Product(a, b) => a.main_degree() * b.main_degree(),
            MapSpec::Perturbed(p) => p.base.main_degree(),
            MapSpec::Inverted(f) => f.main_degree(),
            MapSpec::Iterate(f, n) => f.main_degree().pow(*n),
        }
    }

    /// Algebraic degree `d₊` governing the growth of forward orbits.
    pub fn degree_plus(&self) -> u64 {
        match self {
            MapSpec::Henon(h) => h.poly.degree() as u64,
            MapSpec::Decoupled(d) => d.exps[..d.p].iter().copied().max().unwrap_or(1) as u64,
            MapSpec::RegularAuto(r) => r.d_plus as u64,
            MapSpec::Product(a, b) => a.degree_plus().max(b.degree_plus()),
            MapSpec::Perturbed(p) => p.base.degree_plus(),
            MapSpec::Inverted(f) => f.degree_minus(),
            MapSpec::Iterate(f, n) => f.degree_plus().pow(*n),
        }
    }

    /// Algebraic degree `d₋` used for backward orbits. For the decoupled kind it is
    /// set to the main degree.
    pub fn degree_minus(&self) -> u64 {
        match self {
            MapSpec::Henon(h) => h.poly.degree() as u64,
            MapSpec::Decoupled(_) => self.main_degree(),
            MapSpec::RegularAuto(r) => r.d_minus as u64,
            MapSpec::Product(a, b) => a.degree_minus().max(b.degree_minus()),
            MapSpec::Perturbed(p) => p.base.degree_minus(),
            MapSpec::Inverted(f) => f.degree_plus(),
            MapSpec::Iterate(f, n) => f.degree_minus().pow(*n),
        }
    }

    /// Splits product coordinates `(h₁, h₂, v₁, v₂)` into the factor points.
    pub fn product_split(a: &MapSpec, b: &MapSpec, x: &[C64]) -> (ComplexVec, ComplexVec) {
        let (pa, pb) = (a.p(), b.p());
        let (ka, kb) = (a.k(), b.k());
        let h = &x[..pa + pb];
        let v = &x[pa + pb..];
        let x1 = ComplexVec::from_parts(&h[..pa], &v[..ka - pa]);
        let x2 = ComplexVec::from_parts(&h[pa..], &v[ka - pa..ka - pa + kb - pb]);
        (x1, x2)
    }

    pub fn product_join(a: &MapSpec, b: &MapSpec, x1: &[C64], x2: &[C64]) -> ComplexVec {
        let (pa, pb) = (a.p(), b.p());
        let mut v = ComplexVec::zeros(0);
        v.0.extend_from_slice(&x1[..pa]);
        v.0.extend_from_slice(&x2[..pb]);
        v.0.extend_from_slice(&x1[pa..]);
        v.0.extend_from_slice(&x2[pb..]);
        v
    }

    /// Index map from product coordinates to `(factor, local index)`.
    fn product_index(a: &MapSpec, b: &MapSpec) -> Vec<(usize, usize)> {
        let (pa, pb, ka, kb) = (a.p(), b.p(), a.k(), b.k());
        let mut idx = Vec::with_capacity(ka + kb);
        idx.extend((0..pa).map(|i| (0, i)));
        idx.extend((0..pb).map(|i| (1, i)));
        idx.extend((pa..ka).map(|i| (0, i)));
        idx.extend((pb..kb).map(|i| (1, i)));
        idx
    }

    pub fn eval(&self, x: &[C64]) -> ComplexVec {
        match self {
            MapSpec::Henon(h) => {
                let (z, w) = (x[0], x[1]);
                ComplexVec::from_slice(&[h.poly.eval(z) - h.a * w, z])
            }
            MapSpec::Decoupled(d) => {
                ComplexVec(x.iter().enumerate().map(|(i, &xi)| d.coeffs[i] * xi.powu(d.exps[i])).collect())
            }
            MapSpec::RegularAuto(r) => ComplexVec(r.forward.iter().map(|q| q.eval(x)).collect()),
            MapSpec::Product(a, b) => {
                let (x1, x2) = Self::product_split(a, b, x);
                Self::product_join(a, b, &a.eval(&x1), &b.eval(&x2))
            }
            MapSpec::Perturbed(p) => {
                let base = p.base.eval(x);
                if p.eps == 0.0 {
                    return base;
                }
                let w = p.weight();
                let s = p.sum(x);
                ComplexVec(base.iter().zip(&s).map(|(b, t)| b + w * t).collect())
            }
            MapSpec::Inverted(f) => {
                let inner = swap_blocks(x, self.p());
                match f.eval_inverse(&inner) {
                    Ok(y) => swap_blocks(&y, f.p()),
                    Err(_) => ComplexVec(std::iter::repeat_n(C64::new(f64::NAN, f64::NAN), x.len()).collect()),
                }
            }
            MapSpec::Iterate(f, n) => {
                let mut y = ComplexVec::from_slice(x);
                for _ in 0..*n {
                    y = f.eval(&y);
                }
                y
            }
        }
    }

    /// Inverse on the principal branch.
    pub fn eval_inverse(&self, y: &[C64]) -> Result<ComplexVec> {
        match self {
            MapSpec::Henon(h) => {
                let (z, w) = (y[0], y[1]);
                Ok(ComplexVec::from_slice(&[w, (h.poly.eval(w) - z) / h.a]))
            }
            MapSpec::Decoupled(d) => Ok(ComplexVec(y.iter().enumerate().map(|(i, &yi)| d.root(i, yi)).collect())),
            MapSpec::RegularAuto(r) => Ok(ComplexVec(r.inverse.iter().map(|q| q.eval(y)).collect())),
            MapSpec::Product(a, b) => {
                let (y1, y2) = Self::product_split(a, b, y);
                Ok(Self::product_join(a, b, &a.eval_inverse(&y1)?, &b.eval_inverse(&y2)?))
            }
            MapSpec::Perturbed(p) => newton_inverse(self, &p.base, y),
            MapSpec::Inverted(f) => Ok(swap_blocks(&f.eval(&swap_blocks(y, self.p())), f.p())),
            MapSpec::Iterate(f, n) => {
                let mut x = ComplexVec::from_slice(y);
                for _ in 0..*n {
                    x = f.eval_inverse(&x)?;
                }
                Ok(x)
            }
        }
    }

    /// All preimages of `y` (a single one for injective kinds).
    pub fn eval_inverse_branches(&self, y: &[C64]) -> Result<Vec<ComplexVec>> {
        match self {
            MapSpec::Decoupled(d) => {
                let mut out = vec![ComplexVec::zeros(0)];
                for (i, &yi) in y.iter().enumerate() {
                    let base = d.root(i, yi);
                    let m = d.exps[i];
                    let roots: Vec<C64> = if base.norm() == 0.0 || m == 1 {
                        vec![base]
                    } else {
                        (0..m).map(|j| base * C64::from_polar(1.0, std::f64::consts::TAU * j as f64 / m as f64)).collect()
                    };
                    out = out
                        .into_iter()
                        .flat_map(|v| {
                            roots.iter().map(move |&r| {
                                let mut w = v.clone();
                                w.0.push(r);
                                w
                            })
                        })
                        .collect();
                }
                Ok(out)
            }
            MapSpec::Product(a, b) => {
                let (y1, y2) = Self::product_split(a, b, y);
                let b1 = a.eval_inverse_branches(&y1)?;
                let b2 = b.eval_inverse_branches(&y2)?;
                Ok(b1.iter().flat_map(|u| b2.iter().map(move |v| Self::product_join(a, b, u, v))).collect())
            }
            MapSpec::Iterate(f, n) => {
                let mut cur = vec![ComplexVec::from_slice(y)];
                for _ in 0..*n {
                    let mut next = Vec::new();
                    for c in &cur {
                        next.extend(f.eval_inverse_branches(c)?);
                    }
                    cur = next;
                }
                Ok(cur)
            }
            _ => Ok(vec![self.eval_inverse(y)?]),
        }
    }

    pub fn differential(&self, x: &[C64]) -> Jacobian {
        let k = self.k();
        match self {
            MapSpec::Henon(h) => {
                let (_, dp) = h.poly.eval_with_derivative(x[0]);
                Jacobian::from_row_slice(2, 2, &[dp, -h.a, ONE, ZERO])
            }
            MapSpec::Decoupled(d) => Jacobian::from_fn(k, k, |i, j| {
                if i != j {
                    ZERO
                } else {
                    let m = d.exps[i];
                    d.coeffs[i] * m as f64 * if m == 1 { ONE } else { x[i].powu(m - 1) }
                }
            }),
            MapSpec::RegularAuto(r) => Jacobian::from_fn(k, k, |i, j| r.forward[i].partial(j, x)),
            MapSpec::Product(a, b) => {
                let (x1, x2) = Self::product_split(a, b, x);
                let ja = a.differential(&x1);
                let jb = b.differential(&x2);
                let idx = Self::product_index(a, b);
                Jacobian::from_fn(k, k, |i, j| {
                    let (fi, li) = idx[i];
                    let (fj, lj) = idx[j];
                    match (fi, fj) {
                        (0, 0) => ja[(li, lj)],
                        (1, 1) => jb[(li, lj)],
                        _ => ZERO,
                    }
                })
            }
            MapSpec::Perturbed(p) => {
                let mut j = p.base.differential(x);
                if p.eps != 0.0 {
                    let w = p.weight();
                    for t in &p.terms {
                        for c in 0..k {
                            j[(t.component, c)] += w * t.partial(c, x);
                        }
                    }
                }
                j
            }
            MapSpec::Inverted(f) => {
                let inner_y = swap_blocks(x, self.p());
                match f.inverse_differential(&inner_y) {
                    Ok(j) => permute_jacobian(&j, f.p()),
                    Err(_) => Jacobian::from_element(k, k, C64::new(f64::NAN, f64::NAN)),
                }
            }
            MapSpec::Iterate(f, n) => {
                let mut y = ComplexVec::from_slice(x);
                let mut j = Jacobian::identity(k, k);
                for _ in 0..*n {
                    j = f.differential(&y) * j;
                    y = f.eval(&y);
                }
                j
            }
        }
    }

    /// Differential of the inverse at `y`, i.e. `(Df(f⁻¹(y)))⁻¹`.
    pub fn inverse_differential(&self, y: &[C64]) -> Result<Jacobian> {
        match self {
            MapSpec::Henon(h) => {
                let (_, dp) = h.poly.eval_with_derivative(y[1]);
                Ok(Jacobian::from_row_slice(2, 2, &[ZERO, ONE, -ONE / h.a, dp / h.a]))
            }
            MapSpec::RegularAuto(r) => {
                let k = r.k();
                Ok(Jacobian::from_fn(k, k, |i, j| r.inverse[i].partial(j, y)))
            }
            MapSpec::Inverted(f) => Ok(permute_jacobian(&f.differential(&swap_blocks(y, self.p())), f.p())),
            _ => {
                let x = self.eval_inverse(y)?;
                self.differential(&x)
                    .try_inverse()
                    .ok_or_else(|| Error::InvalidArgument("singular differential".into()))
            }
        }
    }

    /// Central finite-difference Jacobian (holomorphic, so real steps suffice).
    pub fn finite_difference_jacobian(&self, x: &[C64], h: f64) -> Jacobian {
        let k = self.k();
        let mut j = Jacobian::zeros(k, k);
        for c in 0..k {
            let mut xp = ComplexVec::from_slice(x);
            let mut xm = ComplexVec::from_slice(x);
            xp[c] += h;
            xm[c] -= h;
            let (fp, fm) = (self.eval(&xp), self.eval(&xm));
            for r in 0..k {
                j[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
            }
        }
        j
    }
}

/// Re-expresses an inner Jacobian in block-swapped coordinates.
fn permute_jacobian(j: &Jacobian, inner_p: usize) -> Jacobian {
    let k = j.nrows();
    let perm = block_swap_perm(k, inner_p);
    Jacobian::from_fn(k, k, |r, c| j[(perm[r], perm[c])])
}

fn newton_inverse(map: &MapSpec, base: &MapSpec, y: &[C64]) -> Result<ComplexVec> {
    let tol = 1e-10 * y.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let mut x = base.eval_inverse(y)?;
    let mut res = f64::INFINITY;
    for _ in 0..60 {
        let fx = map.eval(&x);
        let r: Vec<C64> = fx.iter().zip(y).map(|(a, b)| a - b).collect();
        res = r.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if res <= tol {
            return Ok(x);
        }
        if !res.is_finite() {
            break;
        }
        let j = map.differential(&x);
        let rhs = nalgebra::DVector::from_vec(r);
        let Some(delta) = j.lu().solve(&rhs) else { break };
        for (xi, d) in x.iter_mut().zip(delta.iter()) {
            *xi -= d;
        }
    }
    Err(Error::NewtonFailure { residual: res })
}

fn fmt_c(c: C64) -> String {
    if c.im == 0.0 {
        format!("{}", c.re)
    } else {
        format!("{}{:+}i", c.re, c.im)
    }
}

/// Default polynomial perturbation used by the stability harness: `z·w` on the
/// first component and `z²` on the last.
pub fn default_polynomial_terms(k: usize) -> Vec<PerturbTerm> {
    let mut e1 = vec![0u16; k];
    e1[0] = 1;
    e1[k - 1] += 1;
    let mut e2 = vec![0u16; k];
    e2[0] = 2;
    vec![
        PerturbTerm { component: 0, coeff: ONE, form: TermForm::Monomial(e1) },
        PerturbTerm { component: k - 1, coeff: ONE, form: TermForm::Monomial(e2) },
    ]
}

/// Default transcendental perturbation: `exp(x₀/2 − x_{k−1}/3)` on the first component.
pub fn default_exp_terms(k: usize) -> Vec<PerturbTerm> {
    let mut l = vec![ZERO; k];
    l[0] = C64::new(0.5, 0.0);
    l[k - 1] = C64::new(-1.0 / 3.0, 0.0);
    vec![PerturbTerm { component: 0, coeff: ONE, form: TermForm::Exp(l) }]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn close(a: &[C64], b: &[C64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).norm() <= tol)
    }

    #[test]
    fn henon_examples() {
        let f = MapSpec::henon_quadratic(0.0, 0.5);
        let y = f.eval(&[c(1.0, 0.0), c(1.0, 0.0)]);
        assert!(close(&y, &[c(0.5, 0.0), c(1.0, 0.0)], 1e-15));
        let x = f.eval_inverse(&y).unwrap();
        assert!(close(&x, &[c(1.0, 0.0), c(1.0, 0.0)], 1e-15));
        let j = f.differential(&[c(1.0, 0.0), c(1.0, 0.0)]);
        assert_eq!(j, Jacobian::from_row_slice(2, 2, &[c(2.0, 0.0), c(-0.5, 0.0), ONE, ZERO]));
    }

    #[test]
    fn decoupled_examples() {
        let g = MapSpec::decoupled_model();
        let y = g.eval(&[c(2.0, 0.0), c(4.0, 0.0)]);
        assert!(close(&y, &[c(4.0, 0.0), c(1.0, 0.0)], 1e-15));
        assert!(close(&g.eval_inverse(&y).unwrap(), &[c(2.0, 0.0), c(4.0, 0.0)], 1e-15));
        let j = g.differential(&[c(2.0, 0.0), c(4.0, 0.0)]);
        assert_eq!(j, Jacobian::from_row_slice(2, 2, &[c(4.0, 0.0), ZERO, ZERO, c(0.25, 0.0)]));
        let branches = g.eval_inverse_branches(&[c(0.0, 1.0), c(1.0, 0.0)]).unwrap();
        assert_eq!(branches.len(), 2);
        for b in branches {
            assert!(close(&g.eval(&b), &[c(0.0, 1.0), c(1.0, 0.0)], 1e-14));
        }
    }

    #[test]
    fn regular_auto_constraint_enforced() {
        let t = MPoly::term;
        // (x² + y, x) has inverse (y, x − y²): d+ = d- = 2, fine for p = 1.
        let ok = RegularAuto::new(
            vec![MPoly::new(2, vec![t(1.0, &[2, 0]), t(1.0, &[0, 1])]), MPoly::new(2, vec![t(1.0, &[1, 0])])],
            vec![MPoly::new(2, vec![t(1.0, &[0, 1])]), MPoly::new(2, vec![t(1.0, &[1, 0]), t(-1.0, &[0, 2])])],
            1,
            "t",
        );
        assert!(ok.is_ok());
        // shift_square declared with p = 1 violates 2^1 = 4^2.
        let s = RegularAuto::shift_square(1.0).unwrap();
        assert!(RegularAuto::new(s.forward.clone(), s.inverse.clone(), 1, "bad").is_err());
    }

    #[test]
    fn shift_square_inverse_roundtrip() {
        let s = RegularAuto::shift_square(1.0).unwrap();
        assert_eq!((s.d_plus, s.d_minus, s.p), (2, 4, 2));
        let f = MapSpec::RegularAuto(s.clone());
        assert_eq!(f.main_degree(), 4);
        let inv = MapSpec::RegularAuto(s.inverted());
        assert_eq!((inv.p(), inv.degree_plus(), inv.main_degree()), (1, 4, 4));
        let x = [c(0.3, 0.1), c(-0.2, 0.4), c(0.5, -0.6)];
        let y = f.eval(&x);
        let back = f.eval_inverse(&y).unwrap();
        assert!(close(&back, &x, 1e-13));
        // inverted() agrees with the generic Inverted wrapper
        let g1 = inv.eval(&swap_blocks(&y, 2));
        let g2 = f.inverse().eval(&swap_blocks(&y, 2));
        assert!(close(&g1, &g2, 1e-13));
    }

    #[test]
    fn product_permutes_coordinates() {
        let f = MapSpec::henon_quadratic(0.0, 0.5);
        let g = MapSpec::decoupled_model();
        let prod = MapSpec::product(f.clone(), g.clone());
        assert_eq!((prod.k(), prod.p(), prod.main_degree()), (4, 2, 4));
        let x1 = [c(0.3, 0.2), c(-0.1, 0.5)];
        let x2 = [c(0.7, 0.0), c(0.2, -0.3)];
        let x = [x1[0], x2[0], x1[1], x2[1]];
        let y = prod.eval(&x);
        let (y1, y2) = (f.eval(&x1), g.eval(&x2));
        assert!(close(&y, &[y1[0], y2[0], y1[1], y2[1]], 0.0));
        assert_eq!(MapSpec::product(g.clone(), g.clone()).main_degree(), 4);
    }

    #[test]
    fn inverse_wrapper_and_perturbation() {
        let f = MapSpec::henon_quadratic(0.0, 0.5);
        let inv = f.inverse();
        assert_eq!((inv.p(), inv.main_degree()), (1, 2));
        let x = [c(0.3, 0.2), c(-0.1, 0.5)];
        let y = f.eval(&x);
        let back = inv.eval(&swap_blocks(&y, 1));
        assert!(close(&swap_blocks(&back, 1), &x, 1e-14));

        let dom = Domain::bidisc(2.0);
        let p0 = MapSpec::perturbed(f.clone(), default_polynomial_terms(2), 0.0, &dom).unwrap();
        assert_eq!(p0.eval(&x), f.eval(&x));
        assert_eq!(p0.eval_inverse(&y).unwrap(), f.eval_inverse(&y).unwrap());
        let pe = MapSpec::perturbed(f, default_exp_terms(2), 1e-2, &dom).unwrap();
        let ye = pe.eval(&x);
        assert!(close(&pe.eval_inverse(&ye).unwrap(), &x, 1e-10));
    }
}
