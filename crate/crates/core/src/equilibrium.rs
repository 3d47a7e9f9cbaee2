//! The equilibrium measure `μ = T₊ ∧ T₋` in `C²` as a mixed Monge–Ampère
//! measure of two potential grids, plus probes of its convergence,
//! invariance, support and integrability of plurisubharmonic functions.

use crate::currents::{pullback_normalized, pushforward_normalized, GridSpec, Orientation, PotentialGrid};
use crate::fit::fit_line;
use crate::geometry::{Domain, Shell};
use crate::maps::swap_blocks;
use crate::green::{GreenParams, GreenSolver};
use crate::maps::MapSpec;
use crate::observables::Observable;
use crate::report::ExperimentReport;
use crate::{invalid, par, rng, ComplexVec, Error, Result, C64};
use serde::Serialize;
use std::f64::consts::PI;

/// Weighted point cloud with weights summing to 1.
#[derive(Clone, Debug, Serialize)]
pub struct SampleMeasure {
    #[serde(skip)]
    pub points: Vec<ComplexVec>,
    pub weights: Vec<f64>,
    pub provenance: String,
    /// Half-width of the cell each point stands for, per complex coordinate
    /// (applies to real and imaginary parts alike).
    pub cell: Option<Vec<f64>>,
}

const SALT_RESAMPLE: u64 = 0x5E5A;

impl SampleMeasure {
    pub fn new(points: Vec<ComplexVec>, weights: Vec<f64>, provenance: &str) -> Result<Self> {
        if points.len() != weights.len() || points.is_empty() {
            return invalid("need equally many (and at least one) points and weights");
        }
        let k = points[0].len();
        if points.iter().any(|p| p.len() != k || !p.is_finite()) {
            return invalid("points must be finite and of equal dimension");
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return invalid("weights must be finite and nonnegative");
        }
        let total = par::ksum(weights.iter().copied());
        if total <= 0.0 {
            return invalid("total weight is zero");
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(SampleMeasure { points, weights, provenance: provenance.into(), cell: None })
    }

    pub fn uniform(points: Vec<ComplexVec>, provenance: &str) -> Result<Self> {
        let n = points.len();
        Self::new(points, vec![1.0; n], provenance)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn k(&self) -> usize {
        self.points[0].len()
    }

    pub fn total_weight(&self) -> f64 {
        par::ksum(self.weights.iter().copied())
    }

    /// `Σ wᵢ f(xᵢ)`
    pub fn integrate<F>(&self, f: F) -> f64
    where
        F: Fn(&[C64]) -> f64 + Sync + Send,
    {
        let terms = par::map_indexed(self.len(), |i| self.weights[i] * f(&self.points[i]));
        par::ksum(terms)
    }

    pub fn expect(&self, obs: &Observable) -> f64 {
        self.integrate(|x| obs.eval(x))
    }

    pub fn mean_coordinate(&self, i: usize) -> C64 {
        C64::new(self.integrate(|x| x[i].re), self.integrate(|x| x[i].im))
    }

    /// Systematic resampling: `count` equally weighted points.
    pub fn resample(&self, count: usize, seed: u64) -> Vec<ComplexVec> {
        let mut r = rng::stream(seed, SALT_RESAMPLE, 0);
        let u0 = rng::uniform(&mut r) / count as f64;
        let mut out = Vec::with_capacity(count);
        let mut cum = self.weights[0];
        let mut i = 0;
        for j in 0..count {
            let target = u0 + j as f64 / count as f64;
            while cum < target && i + 1 < self.len() {
                i += 1;
                cum += self.weights[i];
            }
            out.push(self.points[i].clone());
        }
        out
    }

    /// The same measure in coordinates where the first `p` coordinates move to the back.
    pub fn swapped(&self, p: usize) -> SampleMeasure {
        SampleMeasure {
            points: self.points.iter().map(|x| swap_blocks(x, p)).collect(),
            weights: self.weights.clone(),
            provenance: format!("swapped({})", self.provenance),
            cell: self.cell.as_ref().map(|c| {
                let mut c = c.clone();
                c.rotate_left(p);
                c
            }),
        }
    }

    /// Fraction of the mass lying in the given shell of `dom`.
    pub fn mass_in(&self, dom: &Domain, shell: Shell) -> f64 {
        self.integrate(|x| if dom.contains_unchecked(shell, x) { 1.0 } else { 0.0 })
    }
}

/// A mixed Monge–Ampère measure with the diagnostics of its construction.
#[derive(Clone, Debug, Serialize)]
pub struct MixedMeasure {
    pub measure: SampleMeasure,
    pub spec: GridSpec,
    /// Flat grid index of every point of `measure`.
    #[serde(skip)]
    pub nodes: Vec<usize>,
    /// Mass before normalization, in the units where `log⁺|z|, log⁺|w|` give 1.
    pub raw_mass: f64,
    /// Negative mass removed by clipping, relative to the positive mass.
    pub negative_fraction: f64,
    /// Largest single negative cell mass relative to the positive mass.
    pub noise_level: f64,
    /// `|Σ cross terms| / Σ |cell mass|`
    pub cross_fraction: f64,
    pub reliable: bool,
}

#[derive(Default)]
struct RowScan {
    pos: Vec<f64>,
    neg: Vec<f64>,
    abs: Vec<f64>,
    cross: Vec<f64>,
    max_neg: f64,
    obs: Vec<Vec<f64>>,
    kept: Vec<(usize, f64)>,
}

struct Scan {
    positive: f64,
    negative: f64,
    abs_total: f64,
    cross: f64,
    max_neg: f64,
    obs: Vec<f64>,
    kept: Vec<(usize, f64)>,
}

fn check_pair(u: &PotentialGrid, v: &PotentialGrid) -> Result<()> {
    if u.orientation != Orientation::Vertical || v.orientation != Orientation::Horizontal {
        return invalid("mixed Monge–Ampère needs a vertical and a horizontal grid");
    }
    if u.spec != v.spec {
        return invalid("potential grids must share the lattice");
    }
    Ok(())
}

/// Walks every interior node once, computing the clipped cell masses of
/// `dd^c u ∧ dd^c v` by centred second differences.
fn scan(u: &PotentialGrid, v: &PotentialGrid, observables: &[Observable], keep: bool) -> Scan {
    let s = u.spec;
    let (nz, nw) = (s.nz, s.nw);
    let sd = 1usize;
    let sc = nw;
    let sb = nw * nw;
    let sa = nz * nw * nw;
    let (hz, hw) = (s.hz(), s.hw());
    let cell = (2.0 / PI).powi(2) * hz * hz * hw * hw;
    let (hz2, hw2, hzw) = (hz * hz, hw * hw, 4.0 * hz * hw);
    let rows = par::map_indexed(nz * nz, |zi| {
        let mut out = RowScan { obs: vec![Vec::new(); observables.len()], ..Default::default() };
        let (a, b) = (zi / nz, zi % nz);
        if a == 0 || b == 0 || a + 1 == nz || b + 1 == nz {
            return out;
        }
        let z = s.z_node(zi);
        for c in 1..nw - 1 {
            for d in 1..nw - 1 {
                let i = zi * sb + c * sc + d;
                let parts = |f: &[f64]| {
                    let dz = (f[i + sa] + f[i - sa] + f[i + sb] + f[i - sb] - 4.0 * f[i]) / hz2;
                    let dw = (f[i + sc] + f[i - sc] + f[i + sd] + f[i - sd] - 4.0 * f[i]) / hw2;
                    let mixed = |p: usize, q: usize| (f[i + p + q] - f[i + p - q] - f[i - p + q] + f[i - p - q]) / hzw;
                    let (xa, yb, xb, ya) = (mixed(sa, sc), mixed(sb, sd), mixed(sa, sd), mixed(sb, sc));
                    (0.25 * dz, 0.25 * dw, C64::new(0.25 * (xa + yb), 0.25 * (xb - ya)))
                };
                let (uzz, uww, uzw) = parts(&u.values);
                let (vzz, vww, vzw) = parts(&v.values);
                let cross = -2.0 * (uzw * vzw.conj()).re;
                let m = (uzz * vww + uww * vzz + cross) * cell;
                out.cross.push(cross * cell);
                out.abs.push(m.abs());
                if m > 0.0 {
                    out.pos.push(m);
                    if !observables.is_empty() {
                        let x = [z, s.w_node(c * nw + d)];
                        for (o, acc) in observables.iter().zip(out.obs.iter_mut()) {
                            acc.push(m * o.eval(&x));
                        }
                    }
                    if keep {
                        out.kept.push((i, m));
                    }
                } else if m < 0.0 {
                    out.neg.push(-m);
                    out.max_neg = out.max_neg.max(-m);
                }
            }
        }
        out
    });
    let mut obs = vec![0.0; observables.len()];
    let mut pos = Vec::with_capacity(rows.len());
    let mut neg = Vec::with_capacity(rows.len());
    let mut abs = Vec::with_capacity(rows.len());
    let mut cross = Vec::with_capacity(rows.len());
    let mut obs_rows: Vec<Vec<f64>> = vec![Vec::with_capacity(rows.len()); observables.len()];
    let mut max_neg: f64 = 0.0;
    let mut kept = Vec::new();
    for r in rows {
        pos.push(par::ksum(r.pos));
        neg.push(par::ksum(r.neg));
        abs.push(par::ksum(r.abs));
        cross.push(par::ksum(r.cross));
        max_neg = max_neg.max(r.max_neg);
        for (acc, v) in obs_rows.iter_mut().zip(r.obs) {
            acc.push(par::ksum(v));
        }
        kept.extend(r.kept);
    }
    for (o, rowsums) in obs.iter_mut().zip(obs_rows) {
        *o = par::ksum(rowsums);
    }
    Scan {
        positive: par::ksum(pos),
        negative: par::ksum(neg),
        abs_total: par::ksum(abs),
        cross: par::ksum(cross),
        max_neg,
        obs,
        kept,
    }
}

/// `dd^c u ∧ dd^c v` as a weighted cloud of node centres, negative cells clipped.
pub fn mixed_ma_measure(u: &PotentialGrid, v: &PotentialGrid) -> Result<MixedMeasure> {
    check_pair(u, v)?;
    let sc = scan(u, v, &[], true);
    if sc.positive <= 0.0 {
        return Err(Error::Resolution("mixed Monge–Ampère mass vanishes on the grid".into()));
    }
    let s = u.spec;
    let nodes: Vec<usize> = sc.kept.iter().map(|(i, _)| *i).collect();
    let points = nodes
        .iter()
        .map(|&i| {
            let (z, w) = s.node(i);
            ComplexVec::from_slice(&[z, w])
        })
        .collect();
    let weights = sc.kept.iter().map(|(_, m)| *m).collect();
    let mut measure = SampleMeasure::new(points, weights, &format!("mixed_ma[{} | {}] on {}x{}", u.provenance, v.provenance, s.nz, s.nw))?;
    measure.cell = Some(vec![0.5 * s.hz(), 0.5 * s.hw()]);
    let negative_fraction = sc.negative / sc.positive;
    Ok(MixedMeasure {
        measure,
        spec: s,
        nodes,
        raw_mass: sc.positive - sc.negative,
        negative_fraction,
        noise_level: sc.max_neg / sc.positive,
        cross_fraction: sc.cross.abs() / sc.abs_total.max(f64::MIN_POSITIVE),
        reliable: negative_fraction <= 0.05,
    })
}

/// `⟨μ, φ⟩` for the normalized clipped wedge without materializing the points.
/// Returns the pairings and the negative-mass fraction.
pub fn ma_pairings(u: &PotentialGrid, v: &PotentialGrid, observables: &[Observable]) -> Result<(Vec<f64>, f64)> {
    check_pair(u, v)?;
    let sc = scan(u, v, observables, false);
    if sc.positive <= 0.0 {
        return Err(Error::Resolution("mixed Monge–Ampère mass vanishes on the grid".into()));
    }
    Ok((sc.obs.iter().map(|o| o / sc.positive).collect(), sc.negative / sc.positive))
}

/// Grid of `G⁺` (vertical) or `G⁻` (horizontal) evaluated pointwise.
pub fn green_grid(solver: &GreenSolver, orientation: Orientation, spec: GridSpec, n_max: u32) -> Result<PotentialGrid> {
    let params = GreenParams { n_max, r_esc: None };
    PotentialGrid::from_fn(orientation, spec, 1.0, &format!("green[{:?}, n_max={n_max}]", solver.direction), |z, w| {
        solver.eval(&[z, w], &params).map(|g| g.value).unwrap_or(f64::NAN)
    })
}

/// Reference values `⟨μ_∞, φ⟩` for [`measure_convergence_probe`].
#[derive(Clone, Debug)]
pub enum MeasureReference {
    /// Wedge of the Green-function grids on the same lattice.
    Green,
    /// Known values, one per observable.
    Exact(Vec<f64>),
}

#[derive(Clone, Debug, Serialize)]
pub struct MeasureProbe {
    /// `[observable][n]`
    pub values: Vec<Vec<f64>>,
    pub reference: Vec<f64>,
    pub rates: Vec<Option<f64>>,
    pub negative_fraction: Vec<f64>,
    pub report: ExperimentReport,
}

/// `⟨μₙ, φ⟩` for `μₙ = dd^c Lⁿu₀ ∧ dd^c L₋ⁿv₀` and the fitted geometric rate
/// of `|⟨μₙ, φ⟩ − ⟨μ_∞, φ⟩|`.
pub fn measure_convergence_probe(
    m: &MapSpec,
    u0: &PotentialGrid,
    v0: &PotentialGrid,
    observables: &[Observable],
    n_max: usize,
    reference: MeasureReference,
) -> Result<MeasureProbe> {
    check_pair(u0, v0)?;
    if observables.is_empty() || n_max == 0 || n_max > 12 {
        return invalid("need observables and 1 <= n_max <= 12");
    }
    let reference = match reference {
        MeasureReference::Exact(v) if v.len() == observables.len() => v,
        MeasureReference::Exact(_) => return invalid("one reference value per observable"),
        MeasureReference::Green => {
            let gp = green_grid(&GreenSolver::plus(m)?, Orientation::Vertical, u0.spec, 48)?;
            let gm = green_grid(&GreenSolver::minus(m)?, Orientation::Horizontal, u0.spec, 48)?;
            ma_pairings(&gp, &gm, observables)?.0
        }
    };
    let mut values = vec![Vec::with_capacity(n_max + 1); observables.len()];
    let mut negative_fraction = Vec::with_capacity(n_max + 1);
    let (mut u, mut v) = (u0.clone(), v0.clone());
    for n in 0..=n_max {
        if n > 0 {
            u = pullback_normalized(m, &u)?;
            v = pushforward_normalized(m, &v)?;
        }
        let (vals, neg) = ma_pairings(&u, &v, observables)?;
        for (acc, x) in values.iter_mut().zip(vals) {
            acc.push(x);
        }
        negative_fraction.push(neg);
    }
    let rates: Vec<Option<f64>> = values
        .iter()
        .zip(&reference)
        .map(|(seq, r)| {
            let (xs, ys): (Vec<f64>, Vec<f64>) =
                seq.iter().enumerate().filter(|(_, a)| (*a - r).abs() > 1e-12).map(|(n, a)| (n as f64, (a - r).abs().ln())).unzip();
            fit_line(&xs, &ys).map(|l| (-l.slope).exp())
        })
        .collect();
    let mut report = ExperimentReport::new("measure-converge", &m.describe(), 0);
    for (j, o) in observables.iter().enumerate() {
        report.note(&format!("phi{j}"), o.name());
        report.series(&format!("pairing.phi{j}"), &values[j]);
        report.scalar(&format!("reference.phi{j}"), reference[j]);
        report.opt_scalar(&format!("lambda_hat.phi{j}"), rates[j]);
    }
    report.series("negative_fraction", &negative_fraction);
    if negative_fraction.iter().any(|f| *f > 0.05) {
        report.mark_unreliable("negative Monge–Ampère mass above 5% at some n");
    }
    Ok(MeasureProbe { values, reference, rates, negative_fraction, report })
}

/// `log(δ + |ℓ(x)|)` probe with `ℓ(x) = Σ aᵢxᵢ + b`.
#[derive(Clone, Debug, Serialize)]
pub struct PoleProbe {
    pub label: String,
    pub coeffs: Vec<(f64, f64)>,
    pub offset: (f64, f64),
}

#[derive(Clone, Debug, Serialize)]
pub struct PoleProbeResult {
    pub label: String,
    pub deltas: Vec<f64>,
    pub values: Vec<f64>,
    /// Mean decrease per halving of `δ` over the last five halvings, in units
    /// of `log 2`: the mass of an atom sitting on the pole.
    pub pole_mass: f64,
    pub bounded: bool,
}

/// `⟨μ, log(δ + |ℓ|)⟩` for `δ = 2⁻¹ … 2⁻³⁰`. The family is PB-consistent when
/// no probe sees an atom of mass above 1% at its pole.
pub fn pb_probe(mu: &SampleMeasure, family: &[PoleProbe]) -> Result<(Vec<PoleProbeResult>, ExperimentReport)> {
    if family.is_empty() {
        return invalid("empty probe family");
    }
    let deltas: Vec<f64> = (1..=30).map(|j| 0.5f64.powi(j)).collect();
    let mut results = Vec::new();
    let mut report = ExperimentReport::new("pb-probe", &mu.provenance, 0);
    for p in family {
        if p.coeffs.len() != mu.k() {
            return Err(Error::Dimension { expected: mu.k(), got: p.coeffs.len() });
        }
        let values: Vec<f64> = deltas
            .iter()
            .map(|&delta| mu.expect(&Observable::LogDistance { coeffs: p.coeffs.clone(), offset: p.offset, delta }))
            .collect();
        let n = values.len();
        let pole_mass = (values[n - 6] - values[n - 1]) / (5.0 * 2f64.ln());
        let bounded = pole_mass < 0.01 && values.iter().all(|v| v.is_finite());
        report.series(&format!("value.{}", p.label), &values);
        report.scalar(&format!("pole_mass.{}", p.label), pole_mass);
        report.flag(&format!("bounded.{}", p.label), bounded);
        results.push(PoleProbeResult { label: p.label.clone(), deltas: deltas.clone(), values, pole_mass, bounded });
    }
    report.series("delta", &deltas);
    report.flag("pb_consistent", results.iter().all(|r| r.bounded));
    Ok((results, report))
}

/// `|⟨μ, φ∘f⟩ − ⟨μ, φ⟩|` for each observable.
pub fn invariance_defects(m: &MapSpec, mu: &SampleMeasure, observables: &[Observable]) -> Vec<f64> {
    let images: Vec<ComplexVec> = par::map_indexed(mu.len(), |i| m.eval(&mu.points[i]));
    observables
        .iter()
        .map(|o| {
            let before = mu.expect(o);
            let after = par::ksum(images.iter().zip(&mu.weights).map(|(y, w)| w * o.eval(y)));
            (after - before).abs()
        })
        .collect()
}

/// Support containment on the lattice.
#[derive(Clone, Debug, Serialize)]
pub struct SupportCheck {
    pub eps_plus: f64,
    pub eps_minus: f64,
    /// Cells whose weight exceeds the clipping noise level.
    pub cells_checked: usize,
    pub cells_outside: usize,
    /// Mass of all cells (noise included) that fail the test.
    pub mass_outside: f64,
}

/// Largest difference between adjacent node values along any real axis.
pub fn grid_modulus(g: &PotentialGrid) -> f64 {
    let s = g.spec;
    let (nz, nw) = (s.nz, s.nw);
    let strides = [nz * nw * nw, nw * nw, nw, 1];
    let counts = [nz, nz, nw, nw];
    let rows = par::map_indexed(nz * nz, |zi| {
        let (a, b) = (zi / nz, zi % nz);
        let mut best: f64 = 0.0;
        for c in 0..nw {
            for d in 0..nw {
                let i = zi * nw * nw + c * nw + d;
                let pos = [a, b, c, d];
                for ax in 0..4 {
                    if pos[ax] + 1 < counts[ax] {
                        best = best.max((g.values[i + strides[ax]] - g.values[i]).abs());
                    }
                }
            }
        }
        best
    });
    rows.into_iter().fold(0.0, f64::max)
}

/// Checks that every cell of `mu` whose weight exceeds its clipping noise
/// level lies within one cell diagonal of `{G⁺ ≤ ε⁺} ∩ {G⁻ ≤ ε⁻}`, where `ε±`
/// is the grid modulus of each Green grid.
pub fn support_check(mu: &MixedMeasure, gplus: &PotentialGrid, gminus: &PotentialGrid) -> Result<SupportCheck> {
    if gplus.spec != mu.spec || gminus.spec != mu.spec {
        return invalid("Green grids must live on the measure's lattice");
    }
    let s = mu.spec;
    let eps_plus = grid_modulus(gplus);
    let eps_minus = grid_modulus(gminus);
    let (nz, nw) = (s.nz as isize, s.nw as isize);
    let noise = mu.noise_level;
    let flags = par::map_indexed(mu.nodes.len(), |j| {
        let idx = mu.nodes[j];
        let sw = (nw * nw) as usize;
        let (zi, wi) = (idx / sw, idx % sw);
        let pos = [(zi / s.nz) as isize, (zi % s.nz) as isize, (wi / s.nw) as isize, (wi % s.nw) as isize];
        let counts = [nz, nz, nw, nw];
        for o in 0..81isize {
            let off = [o / 27 - 1, (o / 9) % 3 - 1, (o / 3) % 3 - 1, o % 3 - 1];
            let q: Vec<isize> = (0..4).map(|a| pos[a] + off[a]).collect();
            if (0..4).any(|a| q[a] < 0 || q[a] >= counts[a]) {
                continue;
            }
            let i = (((q[0] * nz + q[1]) * nw + q[2]) * nw + q[3]) as usize;
            if gplus.values[i] <= eps_plus && gminus.values[i] <= eps_minus {
                return true;
            }
        }
        false
    });
    let mut check = SupportCheck { eps_plus, eps_minus, cells_checked: 0, cells_outside: 0, mass_outside: 0.0 };
    let mut outside = Vec::new();
    for (j, inside) in flags.into_iter().enumerate() {
        let w = mu.measure.weights[j];
        let significant = w > noise;
        check.cells_checked += significant as usize;
        if !inside {
            check.cells_outside += significant as usize;
            outside.push(w);
        }
    }
    check.mass_outside = par::ksum(outside);
    Ok(check)
}

/// Builds the grid equilibrium measure of `m` from its Green functions.
pub fn green_equilibrium(m: &MapSpec, spec: GridSpec) -> Result<(MixedMeasure, PotentialGrid, PotentialGrid)> {
    let gp = green_grid(&GreenSolver::plus(m)?, Orientation::Vertical, spec, 48)?;
    let gm = green_grid(&GreenSolver::minus(m)?, Orientation::Horizontal, spec, 48)?;
    let mu = mixed_ma_measure(&gp, &gm)?;
    Ok((mu, gp, gm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::currents::Potential;

    fn torus_measure(n: usize) -> MixedMeasure {
        let spec = GridSpec::new(n, n / 2, 1.6, 1.6).unwrap();
        let u = PotentialGrid::from_potential(Orientation::Vertical, spec, &Potential::log_plus()).unwrap();
        let v = PotentialGrid::from_potential(Orientation::Horizontal, spec, &Potential::log_plus()).unwrap();
        mixed_ma_measure(&u, &v).unwrap()
    }

    #[test]
    fn torus_moments_and_mass() {
        let mu = torus_measure(48);
        let m = &mu.measure;
        assert!((m.total_weight() - 1.0).abs() < 1e-12);
        assert!(m.mean_coordinate(0).norm() < 0.02);
        assert!(m.mean_coordinate(1).norm() < 0.02);
        assert!((m.expect(&Observable::Modulus { index: 0 }) - 1.0).abs() < 0.02);
        assert!((m.expect(&Observable::Modulus { index: 1 }) - 1.0).abs() < 0.02);
        assert!(mu.cross_fraction < 1e-12);
        assert!((mu.raw_mass - 1.0).abs() < 0.01, "{}", mu.raw_mass);
        assert!(mu.reliable);
    }

    #[test]
    fn fubini_study_wedge_is_smooth_and_normalized() {
        let spec = GridSpec::new(24, 12, 2.0, 2.0).unwrap();
        let u = PotentialGrid::from_potential(Orientation::Vertical, spec, &Potential::fubini_study()).unwrap();
        let v = PotentialGrid::from_potential(Orientation::Horizontal, spec, &Potential::fubini_study()).unwrap();
        let mu = mixed_ma_measure(&u, &v).unwrap();
        assert_eq!(mu.negative_fraction, 0.0);
        assert!((mu.measure.total_weight() - 1.0).abs() < 1e-12);
        let (vals, _) = ma_pairings(&u, &v, &[Observable::constant(1.0), Observable::re(0, 2)]).unwrap();
        assert!((vals[0] - 1.0).abs() < 1e-12);
        assert!(vals[1].abs() < 1e-12);
    }

    #[test]
    fn systematic_resampling_follows_weights() {
        let pts = vec![ComplexVec::from_pairs(&[(0.0, 0.0)]), ComplexVec::from_pairs(&[(1.0, 0.0)])];
        let mu = SampleMeasure::new(pts, vec![0.25, 0.75], "two atoms").unwrap();
        let s = mu.resample(1000, 3);
        let ones = s.iter().filter(|p| p[0].re == 1.0).count();
        assert!((ones as i64 - 750).abs() <= 1);
        assert!(SampleMeasure::new(vec![ComplexVec::zeros(1)], vec![-1.0], "bad").is_err());
    }

    #[test]
    fn pole_probe_on_torus() {
        let mu = torus_measure(48);
        let fam = [
            PoleProbe { label: "z".into(), coeffs: vec![(1.0, 0.0), (0.0, 0.0)], offset: (0.0, 0.0) },
            PoleProbe { label: "z-1".into(), coeffs: vec![(1.0, 0.0), (0.0, 0.0)], offset: (-1.0, 0.0) },
        ];
        let (res, rep) = pb_probe(&mu.measure, &fam).unwrap();
        assert!(res[0].values.last().unwrap().abs() < 0.02);
        assert!(res[1].values.last().unwrap().abs() < 0.1, "{:?}", res[1].values.last());
        assert_eq!(rep.flags["pb_consistent"], true);
    }

    #[test]
    fn smooth_observable_pairing_equals_weighted_sum() {
        let mu = torus_measure(32);
        let o = Observable::Monomial { index: 0, power: 1, coeff: (1.0, 0.0) };
        let direct: f64 = mu.measure.points.iter().zip(&mu.measure.weights).map(|(x, w)| w * x[0].re).sum();
        assert!((mu.measure.expect(&o) - direct).abs() < 1e-12);
    }
}
