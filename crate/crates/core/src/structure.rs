//! Sampled horizontal-like certificates, the main degree by the argument
//! principle, and the perturbation-stability harness.

use crate::geometry::{Domain, Factor, Shell};
use crate::maps::{MapSpec, PerturbTerm};
use crate::{invalid, par, rng, Error, Result, C64};
use serde::Serialize;
use std::f64::consts::TAU;

/// Outcome of a Monte-Carlo check of the graph conditions. This is evidence,
/// not a proof: `sampled` is always true and is serialised as such.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StructureCertificate {
    pub is_horizontal_like: bool,
    /// Smallest distance of `π₁(x)` to `∂M` over samples with `x, f(x) ∈ D`.
    pub margin_v: f64,
    /// Smallest distance of `π₂(f(x))` to `∂N` over the same samples.
    pub margin_h: f64,
    pub samples_used: usize,
    pub samples_drawn: usize,
    pub threshold: f64,
    pub main_degree: Option<u64>,
    pub sampled: bool,
}

const SALT_CERT: u64 = 0xCE27;

/// Certifies `f` on `dom`. Half of the budget draws `x ∈ D` (itself half
/// boundary-biased), the other half draws `y ∈ D` boundary-biased and uses
/// `x = f⁻¹(y)`; only pairs with `x, f(x) ∈ D` contribute.
pub fn certify_horizontal_like(m: &MapSpec, dom: &Domain, count: usize, seed: u64) -> Result<StructureCertificate> {
    certify_with_threshold(m, dom, count, seed, 0.01 * dom.outer_radius())
}

pub fn certify_with_threshold(
    m: &MapSpec,
    dom: &Domain,
    count: usize,
    seed: u64,
    threshold: f64,
) -> Result<StructureCertificate> {
    if count < 1000 {
        return invalid("certification needs at least 1000 samples");
    }
    if m.k() != dom.k || m.p() != dom.p {
        return invalid(format!("map has (k,p)=({},{}), domain ({},{})", m.k(), m.p(), dom.k, dom.p));
    }
    let margins = par::map_indexed(count, |i| {
        let mut r = rng::stream(seed, SALT_CERT, i as u64);
        let x = if i % 2 == 0 {
            dom.sample_boundary_biased(&mut r)
        } else {
            let y = dom.sample_boundary_biased(&mut r);
            m.eval_inverse(&y).ok()?
        };
        if !x.is_finite() || !dom.in_outer(&x) {
            return None;
        }
        let fx = m.eval(&x);
        if !fx.is_finite() || !dom.in_outer(&fx) {
            return None;
        }
        let (h, _) = dom.split(&x);
        let (_, v) = dom.split(&fx);
        Some((dom.m.boundary_distance(h), dom.n.boundary_distance(v)))
    });
    let mut used = 0;
    let (mut mv, mut mh) = (f64::INFINITY, f64::INFINITY);
    for (a, b) in margins.into_iter().flatten() {
        used += 1;
        mv = mv.min(a);
        mh = mh.min(b);
    }
    let ok = used > 0 && mv > threshold && mh > threshold;
    let main_degree = if ok { main_degree(m, dom).ok() } else { None };
    Ok(StructureCertificate {
        is_horizontal_like: ok,
        margin_v: mv,
        margin_h: mh,
        samples_used: used,
        samples_drawn: count,
        threshold,
        main_degree,
        sampled: true,
    })
}

/// Result of one argument-principle evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WindingCount {
    pub degree: u64,
    /// Distance of the raw quadrature value from the returned integer.
    pub residual: f64,
}

/// Main degree with default slice choices: quadrature for `k = 2, p = 1`,
/// closed forms for regular automorphisms, multiplicativity for products.
pub fn main_degree(m: &MapSpec, dom: &Domain) -> Result<u64> {
    match m {
        MapSpec::RegularAuto(r) => Ok((r.d_plus as u64).pow(r.p as u32)),
        MapSpec::Inverted(inner) if matches!(**inner, MapSpec::RegularAuto(_)) => Ok(m.main_degree()),
        MapSpec::Product(a, b) => {
            let (da, db) = product_factor_domains(a, b, dom)?;
            Ok(main_degree(a, &da)? * main_degree(b, &db)?)
        }
        _ if m.k() == 2 && m.p() == 1 => {
            let w0 = C64::new(0.1 * dom.n.radii[2], 0.05 * dom.n.radii[2]);
            let c0 = C64::new(0.07 * dom.m.radii[2], -0.03 * dom.m.radii[2]);
            Ok(main_degree_argument_principle(m, dom, w0, c0, 4096)?.degree)
        }
        _ => Err(Error::Unsupported(format!(
            "main degree of a {} map with p = {} has no quadrature here",
            m.kind_name(),
            m.p()
        ))),
    }
}

/// Factor domains of a product domain, inferring dimensions from the factor maps.
pub fn product_factor_domains(a: &MapSpec, b: &MapSpec, dom: &Domain) -> Result<(Domain, Domain)> {
    if dom.k != a.k() + b.k() || dom.p != a.p() + b.p() {
        return invalid("domain does not match the product map");
    }
    let mk = |p: usize, q: usize| -> Result<Domain> {
        Domain::new(
            Factor { dim: p, ..dom.m.clone() },
            Factor { dim: q, ..dom.n.clone() },
        )
    };
    Ok((mk(a.p(), a.k() - a.p())?, mk(b.p(), b.k() - b.p())?))
}

/// Counts solutions of `π₁ f(z, w₀) = c₀` with `z ∈ M` by the argument
/// principle on `∂M`, on the nominal slice and two jittered ones.
pub fn main_degree_argument_principle(
    m: &MapSpec,
    dom: &Domain,
    w0: C64,
    c0: C64,
    quad_points: usize,
) -> Result<WindingCount> {
    if m.k() != 2 || m.p() != 1 {
        if let MapSpec::RegularAuto(r) = m {
            return Ok(WindingCount { degree: (r.d_plus as u64).pow(r.p as u32), residual: 0.0 });
        }
        return Err(Error::Unsupported("argument principle needs k = 2, p = 1".into()));
    }
    if quad_points < 16 {
        return invalid("quad_points must be at least 16");
    }
    if !dom.m.contains(Shell::Second, &[c0]) {
        return invalid("c0 must lie in M″");
    }
    let r = dom.m.radii[0];
    let jit = 1e-3 * r;
    let mut counts = Vec::new();
    for attempt in 0..3 {
        let (dw, dc) = match attempt {
            0 => (C64::new(0.0, 0.0), C64::new(0.0, 0.0)),
            1 => (C64::new(jit, -0.5 * jit), C64::new(-0.7 * jit, jit)),
            _ => (C64::new(-0.3 * jit, 0.9 * jit), C64::new(0.6 * jit, 0.4 * jit)),
        };
        let mut c = c0 + dc;
        let mut result = None;
        for retry in 0..4 {
            match winding(m, r, w0 + dw, c, quad_points) {
                Some(v) => {
                    result = Some(v);
                    break;
                }
                None => c += C64::from_polar(jit * (retry + 1) as f64, 1.3 * retry as f64),
            }
        }
        let value = result.ok_or_else(|| Error::Quadrature("roots on the contour after jitter".into()))?;
        let n = value.re.round();
        let residual = (value - C64::new(n, 0.0)).norm();
        if residual > 0.1 || n < 1.0 {
            return Err(Error::Quadrature(format!(
                "winding value {value} is not a positive integer (residual {residual:.3}); increase quad_points"
            )));
        }
        counts.push(WindingCount { degree: n as u64, residual });
    }
    if counts.iter().any(|c| c.degree != counts[0].degree) {
        return Err(Error::Quadrature(format!(
            "jittered slices disagree: {:?}",
            counts.iter().map(|c| c.degree).collect::<Vec<_>>()
        )));
    }
    let worst = counts.iter().map(|c| c.residual).fold(0.0, f64::max);
    Ok(WindingCount { degree: counts[0].degree, residual: worst })
}

/// `(1/2πi)∮ g′/(g − c) dz` with the trapezoid rule; `None` if the contour passes too close to a root.
fn winding(m: &MapSpec, r: f64, w0: C64, c: C64, n: usize) -> Option<C64> {
    let terms = par::map_indexed(n, |j| {
        let z = C64::from_polar(r, TAU * j as f64 / n as f64);
        let x = [z, w0];
        let g = m.eval(&x)[0] - c;
        let dg = m.differential(&x)[(0, 0)];
        (dg * z / g, g.norm())
    });
    let scale = terms.iter().map(|t| t.1).fold(0.0, f64::max);
    let closest = terms.iter().map(|t| t.1).fold(f64::INFINITY, f64::min);
    if !(closest > 1e-9 * scale.max(1.0)) || terms.iter().any(|t| !t.0.re.is_finite() || !t.0.im.is_finite()) {
        return None;
    }
    let re = par::ksum(terms.iter().map(|t| t.0.re));
    let im = par::ksum(terms.iter().map(|t| t.0.im));
    Some(C64::new(re, im) / n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScanEntry {
    pub eps: f64,
    pub certificate: StructureCertificate,
    pub degree: Option<u64>,
    pub preserved: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScanReport {
    pub base: StructureCertificate,
    /// Base map certified on `D′` with the same samples as the scan.
    pub base_on_prime: StructureCertificate,
    pub entries: Vec<ScanEntry>,
    pub largest_preserved_eps: Option<f64>,
}

/// Certifies `base + ε·terms` on `D′` for each `ε` and recomputes the main degree there.
pub fn perturbation_stability_scan(
    m: &MapSpec,
    dom: &Domain,
    eps_list: &[f64],
    terms: &[PerturbTerm],
    count: usize,
    seed: u64,
) -> Result<ScanReport> {
    let base = certify_horizontal_like(m, dom, count, seed)?;
    if !base.is_horizontal_like {
        return invalid("base map is not certified horizontal-like on the domain");
    }
    let base_degree = base.main_degree;
    let shrunk = dom.shrink(Shell::Prime);
    let threshold = base.threshold;
    let base_on_prime = certify_with_threshold(m, &shrunk, count, seed, threshold)?;
    let mut entries = Vec::new();
    let mut largest = None;
    for &eps in eps_list {
        let pm = MapSpec::perturbed(m.clone(), terms.to_vec(), eps, dom)?;
        let cert = certify_with_threshold(&pm, &shrunk, count, seed, threshold)?;
        let degree = if cert.is_horizontal_like { main_degree(&pm, &shrunk).ok() } else { None };
        let preserved = cert.is_horizontal_like && degree.is_some() && degree == base_degree;
        if preserved && largest.is_none_or(|l: f64| eps > l) {
            largest = Some(eps);
        }
        entries.push(ScanEntry { eps, certificate: cert, degree, preserved });
    }
    Ok(ScanReport { base, base_on_prime, entries, largest_preserved_eps: largest })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::{Henon, Poly};

    #[test]
    fn henon_certificate_and_degree() {
        let f = MapSpec::henon_quadratic(0.0, 0.5);
        let c = certify_horizontal_like(&f, &Domain::bidisc(2.0), 20_000, 3).unwrap();
        assert!(c.is_horizontal_like);
        let analytic = 2.0 - 3f64.sqrt();
        assert!(c.margin_v >= analytic - 1e-12);
        assert!((c.margin_v - analytic) / analytic < 0.05, "margin {}", c.margin_v);
        assert_eq!(c.main_degree, Some(2));
    }

    #[test]
    fn decoupled_margin() {
        let g = MapSpec::decoupled_model();
        let c = certify_horizontal_like(&g, &Domain::bidisc(2.0), 20_000, 3).unwrap();
        assert!(c.is_horizontal_like);
        let analytic = 2.0 - 2f64.sqrt();
        assert!(c.margin_v >= analytic - 1e-12 && (c.margin_v - analytic) / analytic < 0.05);
    }

    #[test]
    fn small_domain_fails() {
        let f = MapSpec::henon_quadratic(0.0, 0.5);
        let c = certify_horizontal_like(&f, &Domain::bidisc(0.5), 5000, 3).unwrap();
        assert!(!c.is_horizontal_like);
        assert!(certify_horizontal_like(&f, &Domain::bidisc(2.0), 10, 3).is_err());
    }

    #[test]
    fn cubic_henon_degree() {
        let f = MapSpec::Henon(Henon::new(Poly::from_real(&[0.0, -1.0, 0.0, 1.0]), C64::new(0.3, 0.0)).unwrap());
        let d = main_degree_argument_principle(&f, &Domain::bidisc(3.0), C64::new(0.1, 0.0), C64::new(0.2, 0.1), 4096).unwrap();
        assert_eq!(d.degree, 3);
        assert!(d.residual < 1e-8);
    }

    #[test]
    fn too_few_nodes_fail_loudly() {
        let f = MapSpec::henon_quadratic(0.0, 0.5);
        let r = main_degree_argument_principle(&f, &Domain::bidisc(2.0), C64::new(0.1, 0.0), C64::new(0.2, 0.0), 16);
        assert!(r.is_ok() || matches!(r, Err(Error::Quadrature(_))));
    }
}
