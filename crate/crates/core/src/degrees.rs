//! Dynamical degree estimates from the volume growth of iterated discs.
//!
//! A disc is an affine-plus-quadratic map `ψ` from the unit polydisc of
//! `C^q` into `D″`. The volume of `fⁿ(ψ(B)) ∩ (M″ × N)` is integrated over
//! the parameter polydisc with adaptive cells. In polar coordinates
//! `t = √s·e^{iθ}` per complex parameter the area element is `½ ds dθ`, so
//! cells are boxes in `(s, θ)` with exact volume. A cell is accepted once its
//! image is small (the Jacobian times the cell radius stays under a tolerance
//! at every step); otherwise it is split, up to a depth and budget limit.
//! Parameters whose orbit leaves the padded box (twice the domain) are not
//! trackable and carry no volume.

use crate::ergodic::TimeDirection;
use crate::fit::fit_line;
use crate::geometry::{Domain, Shell};
use crate::maps::{swap_blocks, MapSpec};
use crate::report::ExperimentReport;
use crate::{invalid, par, ComplexVec, Error, Result, C64};
use nalgebra::DMatrix;
use serde::Serialize;
use std::f64::consts::PI;

/// `t ↦ center + L·t + Σⱼ tⱼ²·quad[j]` on the unit polydisc of `C^q`.
#[derive(Clone, Debug, Serialize)]
pub struct DiscFamily {
    pub q: usize,
    pub direction: TimeDirection,
    #[serde(skip)]
    pub center: ComplexVec,
    /// `k × q`
    #[serde(skip)]
    pub linear: DMatrix<C64>,
    #[serde(skip)]
    pub quad: Vec<ComplexVec>,
}

impl DiscFamily {
    /// Disc moving in the first `q` horizontal coordinates at height `offset`
    /// in the vertical block, with a small quadratic bend.
    pub fn horizontal(dom: &Domain, q: usize, offset: &[C64]) -> Result<Self> {
        Self::build(dom, q, offset, TimeDirection::Forward)
    }

    /// Disc moving in the first `q` vertical coordinates.
    pub fn vertical(dom: &Domain, q: usize, offset: &[C64]) -> Result<Self> {
        Self::build(dom, q, offset, TimeDirection::Backward)
    }

    fn build(dom: &Domain, q: usize, offset: &[C64], direction: TimeDirection) -> Result<Self> {
        let (k, p) = (dom.k, dom.p);
        let (start, len, fac, other) = match direction {
            TimeDirection::Forward => (0, p, &dom.m, &dom.n),
            TimeDirection::Backward => (p, k - p, &dom.n, &dom.m),
        };
        if q > len {
            return invalid(format!("disc dimension {q} exceeds the block dimension {len}"));
        }
        if offset.len() != k - len {
            return Err(Error::Dimension { expected: k - len, got: offset.len() });
        }
        let r = fac.radius(Shell::Second) * if fac.shape == crate::geometry::Shape::Ball { 0.95 / (q.max(1) as f64).sqrt() } else { 0.95 };
        let mut center = ComplexVec::zeros(k);
        let others: Vec<usize> = (0..k).filter(|i| *i < start || *i >= start + len).collect();
        for (i, o) in others.iter().zip(offset) {
            center.0[*i] = *o;
        }
        let mut linear = DMatrix::zeros(k, q);
        for j in 0..q {
            linear[(start + j, j)] = C64::new(r, 0.0);
        }
        let bend = 0.02 * other.radius(Shell::Second);
        let quad = (0..q)
            .map(|_| {
                let mut v = ComplexVec::zeros(k);
                if let Some(&i) = others.first() {
                    v.0[i] = C64::new(bend, 0.0);
                }
                v
            })
            .collect();
        let disc = DiscFamily { q, direction, center, linear, quad };
        disc.validate(dom)?;
        Ok(disc)
    }

    pub fn point(&self, t: &[C64]) -> ComplexVec {
        let mut x = self.center.clone();
        for j in 0..self.q {
            for i in 0..x.len() {
                x.0[i] += self.linear[(i, j)] * t[j] + self.quad[j][i] * t[j] * t[j];
            }
        }
        x
    }

    /// `dψ/dt`, a `k × q` matrix.
    pub fn tangent(&self, t: &[C64]) -> DMatrix<C64> {
        let mut d = self.linear.clone();
        for j in 0..self.q {
            for i in 0..d.nrows() {
                d[(i, j)] += C64::new(2.0, 0.0) * self.quad[j][i] * t[j];
            }
        }
        d
    }

    /// The image must lie in `D″`; checked on a polar lattice of the
    /// distinguished boundary and the centre.
    pub fn validate(&self, dom: &Domain) -> Result<()> {
        if self.center.len() != dom.k || self.linear.nrows() != dom.k || self.linear.ncols() != self.q || self.quad.len() != self.q {
            return Err(Error::Dimension { expected: dom.k, got: self.center.len() });
        }
        let probes = 64usize;
        for i in 0..probes.pow(self.q.min(2) as u32).max(1) {
            let t: Vec<C64> = (0..self.q).map(|j| C64::from_polar(1.0, 2.0 * PI * ((i / probes.pow(j.min(1) as u32)) % probes) as f64 / probes as f64)).collect();
            if !dom.contains(Shell::Second, &self.point(&t))? {
                return invalid("disc image leaves D″");
            }
        }
        Ok(())
    }

    /// The same disc in the coordinates of the inverse map.
    fn swapped(&self, p: usize) -> DiscFamily {
        let k = self.center.len();
        let perm = crate::maps::block_swap_perm(k, p);
        let mut linear = DMatrix::zeros(k, self.q);
        for (new, &old) in perm.iter().enumerate() {
            for j in 0..self.q {
                linear[(new, j)] = self.linear[(old, j)];
            }
        }
        DiscFamily {
            q: self.q,
            direction: TimeDirection::Forward,
            center: swap_blocks(&self.center, p),
            linear,
            quad: self.quad.iter().map(|v| swap_blocks(v, p)).collect(),
        }
    }
}

/// `log det(J*J)`: the log of the real `2q`-volume density of a `k × q` complex Jacobian.
pub fn gram_log_volume(j: &DMatrix<C64>) -> f64 {
    let g = j.adjoint() * j;
    g.determinant().re.ln()
}

#[derive(Clone, Debug, Serialize)]
pub struct VolumeParams {
    /// Largest image radius of an accepted cell, as a fraction of the smallest `D″` radius.
    pub tolerance: f64,
    pub max_depth: usize,
    pub max_cells: usize,
    /// Initial cells per real parameter axis.
    pub initial: usize,
}

impl Default for VolumeParams {
    fn default() -> Self {
        VolumeParams { tolerance: 0.2, max_depth: 40, max_cells: 8_000_000, initial: 8 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct VolumeGrowth {
    pub q: usize,
    pub direction: TimeDirection,
    pub n_list: Vec<usize>,
    pub log_volume: Vec<f64>,
    pub slope: Option<f64>,
    /// `exp(slope)`
    pub delta_hat: Option<f64>,
    /// Two-point slopes between consecutive `n`.
    pub local_slopes: Vec<f64>,
    pub stable: bool,
    /// Fraction of accepted cells whose image ends in `M″ × N`.
    pub surviving_fraction: f64,
    /// Share of the volume from cells that hit the depth or budget limit.
    pub unresolved_share: f64,
    pub cells: usize,
    pub report: ExperimentReport,
}

/// Running `log Σ exp(xᵢ)`.
#[derive(Clone, Copy, Debug)]
struct LogSum {
    max: f64,
    acc: f64,
}

impl LogSum {
    const EMPTY: LogSum = LogSum { max: f64::NEG_INFINITY, acc: 0.0 };

    fn add(&mut self, x: f64) {
        if x == f64::NEG_INFINITY {
            return;
        }
        if x > self.max {
            self.acc = self.acc * (self.max - x).exp() + 1.0;
            self.max = x;
        } else {
            self.acc += (x - self.max).exp();
        }
    }

    fn merge(&mut self, o: LogSum) {
        if o.max == f64::NEG_INFINITY {
            return;
        }
        if o.max > self.max {
            self.acc = self.acc * (self.max - o.max).exp() + o.acc;
            self.max = o.max;
        } else {
            self.acc += o.acc * (o.max - self.max).exp();
        }
    }

    fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.acc.ln()
        }
    }
}

#[derive(Clone)]
struct Accum {
    volume: Vec<LogSum>,
    unresolved: Vec<LogSum>,
    accepted: usize,
    surviving: usize,
    cells: usize,
}

struct Walker<'a> {
    m: &'a MapSpec,
    disc: &'a DiscFamily,
    inner: Domain,
    padded: Domain,
    n_list: &'a [usize],
    n_max: usize,
    tol: f64,
    max_depth: usize,
    budget: usize,
}

enum Fate {
    Gone,
    Unclear,
    Stays,
}

/// Orbit of the cell centre with the log-scaled image radius at each step.
struct CellOrbit {
    points: Vec<ComplexVec>,
    log_radius: Vec<f64>,
    log_gram: Vec<f64>,
}

impl Walker<'_> {
    /// `lo, hi` are `(s, θ)` corners per complex parameter, flattened.
    fn orbit(&self, lo: &[f64], hi: &[f64]) -> CellOrbit {
        let q = self.disc.q;
        let mut t = Vec::with_capacity(q);
        let mut r_param: f64 = 0.0;
        for j in 0..q {
            let (s0, s1, a0, a1) = (lo[2 * j], hi[2 * j], lo[2 * j + 1], hi[2 * j + 1]);
            let s = 0.5 * (s0 + s1);
            let rr = s.sqrt();
            t.push(C64::from_polar(rr, 0.5 * (a0 + a1)));
            let dr = s1.sqrt() - s0.sqrt();
            let arc = s1.sqrt() * (a1 - a0);
            r_param += (0.5 * dr).powi(2) + (0.5 * arc).powi(2);
        }
        let r_param = r_param.sqrt();
        let mut x = self.disc.point(&t);
        let mut jac = self.disc.tangent(&t);
        let mut log_scale = 0.0;
        let mut out = CellOrbit { points: Vec::with_capacity(self.n_max + 1), log_radius: Vec::new(), log_gram: Vec::new() };
        for step in 0..=self.n_max {
            let norm = jac.norm();
            if !(norm.is_finite() && norm > 0.0) || !x.is_finite() {
                break;
            }
            jac /= C64::new(norm, 0.0);
            log_scale += norm.ln();
            out.points.push(x.clone());
            out.log_radius.push(log_scale + r_param.ln());
            out.log_gram.push(2.0 * q as f64 * log_scale + gram_log_volume(&jac));
            if step == self.n_max || !self.padded.in_outer(&x) {
                break;
            }
            jac = self.m.differential(&x) * jac;
            x = self.m.eval(&x);
        }
        out
    }

    fn visit(&self, lo: &[f64], hi: &[f64], depth: usize, active: &[usize], acc: &mut Accum) {
        acc.cells += 1;
        let o = self.orbit(lo, hi);
        let cell_log_vol: f64 = (0..self.disc.q).map(|j| (0.5 * (hi[2 * j] - lo[2 * j]) * (hi[2 * j + 1] - lo[2 * j + 1])).ln()).sum();
        let log_tol = self.tol.ln();
        let mut refine = Vec::new();
        let can_split = depth < self.max_depth && acc.cells < self.budget;
        for &ni in active {
            let n = self.n_list[ni];
            let mut fate = Fate::Stays;
            let mut resolved = true;
            for j in 0..=n {
                if j >= o.points.len() {
                    fate = Fate::Gone;
                    break;
                }
                resolved &= o.log_radius[j] <= log_tol;
                let x = &o.points[j];
                if !self.padded.in_outer(x) {
                    let excess = (self.padded.m.gauge(&x.0[..self.padded.p]) - self.padded.m.radii[0])
                        .max(self.padded.n.gauge(&x.0[self.padded.p..]) - self.padded.n.radii[0]);
                    fate = if resolved || o.log_radius[j] < excess.ln() { Fate::Gone } else { Fate::Unclear };
                    break;
                }
            }
            match fate {
                Fate::Unclear if can_split => refine.push(ni),
                Fate::Gone | Fate::Unclear => acc.accepted += 1,
                Fate::Stays if !resolved && can_split => refine.push(ni),
                Fate::Stays => {
                    acc.accepted += 1;
                    if self.inner.in_outer(&o.points[n]) {
                        acc.surviving += 1;
                        let v = o.log_gram[n] + cell_log_vol;
                        acc.volume[ni].add(v);
                        if !resolved {
                            acc.unresolved[ni].add(v);
                        }
                    }
                }
            }
        }
        if refine.is_empty() {
            return;
        }
        let dims = 2 * self.disc.q;
        for child in 0..(1usize << dims) {
            let mut clo = lo.to_vec();
            let mut chi = hi.to_vec();
            for a in 0..dims {
                let mid = 0.5 * (lo[a] + hi[a]);
                if child >> a & 1 == 0 {
                    chi[a] = mid;
                } else {
                    clo[a] = mid;
                }
            }
            self.visit(&clo, &chi, depth + 1, &refine, acc);
        }
    }
}

/// `log Vol(fⁿ(ψ(B)) ∩ (M″ × N))` for each `n` and the fitted growth rate.
pub fn volume_growth(m: &MapSpec, dom: &Domain, disc: &DiscFamily, n_list: &[usize], prm: &VolumeParams) -> Result<VolumeGrowth> {
    if disc.q == 0 {
        return invalid("volume growth needs q >= 1; d₀ = 1 is exact");
    }
    if n_list.is_empty() {
        return invalid("empty n list");
    }
    if m.k() != dom.k || m.p() != dom.p {
        return Err(Error::Dimension { expected: m.k(), got: dom.k });
    }
    disc.validate(dom)?;
    let (map, dom2, disc2) = match disc.direction {
        TimeDirection::Forward => (m.clone(), dom.clone(), disc.clone()),
        TimeDirection::Backward => (m.inverse(), dom.swapped()?, disc.swapped(dom.p)),
    };
    let inner = Domain::new(dom2.m.shrunk(Shell::Second), dom2.n.clone())?;
    let padded = Domain::new(dom2.m.scaled(2.0), dom2.n.scaled(2.0))?;
    let tol = prm.tolerance * dom2.m.radius(Shell::Second).min(if dom2.n.dim > 0 { dom2.n.radius(Shell::Second) } else { f64::INFINITY });
    let n_max = *n_list.iter().max().unwrap();
    let q = disc2.q;
    let per_axis = prm.initial.max(1);
    let tops = per_axis.pow(2 * q as u32);
    let walker = Walker {
        m: &map,
        disc: &disc2,
        inner,
        padded,
        n_list,
        n_max,
        tol,
        max_depth: prm.max_depth,
        budget: prm.max_cells / tops.max(1),
    };
    let active: Vec<usize> = (0..n_list.len()).collect();
    let parts = par::map_indexed(tops, |c| {
        let mut lo = vec![0.0; 2 * q];
        let mut hi = vec![0.0; 2 * q];
        let mut rest = c;
        for a in 0..2 * q {
            let i = rest % per_axis;
            rest /= per_axis;
            let (min, max) = if a % 2 == 0 { (0.0, 1.0) } else { (0.0, 2.0 * PI) };
            let w = (max - min) / per_axis as f64;
            lo[a] = min + i as f64 * w;
            hi[a] = lo[a] + w;
        }
        let mut acc = Accum {
            volume: vec![LogSum::EMPTY; n_list.len()],
            unresolved: vec![LogSum::EMPTY; n_list.len()],
            accepted: 0,
            surviving: 0,
            cells: 0,
        };
        walker.visit(&lo, &hi, 0, &active, &mut acc);
        acc
    });
    let mut volume = vec![LogSum::EMPTY; n_list.len()];
    let mut unresolved = vec![LogSum::EMPTY; n_list.len()];
    let (mut accepted, mut surviving, mut cells) = (0, 0, 0);
    for a in parts {
        for i in 0..n_list.len() {
            volume[i].merge(a.volume[i]);
            unresolved[i].merge(a.unresolved[i]);
        }
        accepted += a.accepted;
        surviving += a.surviving;
        cells += a.cells;
    }
    let log_volume: Vec<f64> = volume.iter().map(|v| v.value()).collect();
    let unresolved_share = (0..n_list.len())
        .map(|i| (unresolved[i].value() - log_volume[i]).exp())
        .filter(|x| x.is_finite())
        .fold(0.0, f64::max);
    let finite: Vec<(f64, f64)> = n_list.iter().zip(&log_volume).filter(|(_, v)| v.is_finite()).map(|(&n, &v)| (n as f64, v)).collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = finite.iter().copied().unzip();
    let fit = fit_line(&xs, &ys);
    let local_slopes: Vec<f64> = finite.windows(2).map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0)).collect();
    let stable = local_slopes.len() >= 2 && {
        let tail = &local_slopes[local_slopes.len().saturating_sub(2)..];
        let (a, b) = (tail[0], tail[tail.len() - 1]);
        (a - b).abs() <= 0.15 * a.abs().max(b.abs())
    };
    let surviving_fraction = surviving as f64 / accepted.max(1) as f64;
    let slope = fit.map(|f| f.slope);
    let delta_hat = slope.map(f64::exp);
    let mut report = ExperimentReport::new("degrees", &m.describe(), 0);
    let tag = format!("q{}.{}", disc.q, if disc.direction == TimeDirection::Forward { "forward" } else { "backward" });
    report
        .series(&format!("{tag}.n"), &n_list.iter().map(|&n| n as f64).collect::<Vec<_>>())
        .series(&format!("{tag}.log_volume"), &log_volume)
        .series(&format!("{tag}.local_slope"), &local_slopes)
        .opt_scalar(&format!("{tag}.slope"), slope)
        .opt_scalar(&format!("{tag}.delta_hat"), delta_hat)
        .scalar(&format!("{tag}.surviving_fraction"), surviving_fraction)
        .scalar(&format!("{tag}.unresolved_share"), unresolved_share)
        .scalar(&format!("{tag}.cells"), cells as f64)
        .flag(&format!("{tag}.stable"), stable);
    if surviving_fraction < 0.01 {
        report.mark_unreliable(format!("{tag}: fewer than 1% of accepted cells survive"));
    }
    if unresolved_share > 0.05 {
        report.mark_unreliable(format!("{tag}: more than 5% of the volume comes from unresolved cells"));
    }
    Ok(VolumeGrowth {
        q: disc.q,
        direction: disc.direction,
        n_list: n_list.to_vec(),
        log_volume,
        slope,
        delta_hat,
        local_slopes,
        stable,
        surviving_fraction,
        unresolved_share,
        cells,
        report,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct DegreeSummary {
    pub d: f64,
    pub delta_plus: f64,
    pub delta_minus: f64,
    /// `d / max(δ̂₊, δ̂₋) − 1`
    pub margin: f64,
    /// `max(δ̂₊, δ̂₋) < 0.9·d`
    pub gap_holds: bool,
    pub report: ExperimentReport,
}

/// `δ̂₊` (resp. `δ̂₋`) is the largest forward (backward) growth rate over
/// `q = 0..p−1` (resp. `0..k−p−1`). The `q = 0` rate is exactly 1.
pub fn degree_summary(m: &MapSpec, reports: &[VolumeGrowth]) -> Result<DegreeSummary> {
    let (k, p) = (m.k(), m.p());
    let mut report = ExperimentReport::new("degree-summary", &m.describe(), 0);
    let mut collect = |dir: TimeDirection, top: usize, label: &str| -> Result<f64> {
        let mut best: f64 = 1.0;
        report.scalar(&format!("{label}.q0"), 1.0);
        for q in 1..top {
            let r = reports
                .iter()
                .find(|r| r.q == q && r.direction == dir)
                .ok_or_else(|| Error::InvalidArgument(format!("missing {label} report for q={q}")))?;
            let v = r.delta_hat.ok_or_else(|| Error::InvalidArgument(format!("{label} report for q={q} has no slope")))?;
            report.scalar(&format!("{label}.q{q}"), v);
            report.absorb(label, &r.report);
            best = best.max(v);
        }
        Ok(best)
    };
    let delta_plus = collect(TimeDirection::Forward, p, "forward")?;
    let delta_minus = collect(TimeDirection::Backward, k - p, "backward")?;
    let d = m.main_degree() as f64;
    let worst = delta_plus.max(delta_minus);
    let margin = d / worst - 1.0;
    let gap_holds = worst < 0.9 * d;
    report
        .scalar("d", d)
        .scalar("delta_plus_hat", delta_plus)
        .scalar("delta_minus_hat", delta_minus)
        .scalar("margin", margin)
        .flag("gap_holds", gap_holds)
        .note("label", "lower-bound estimates from single smooth discs");
    Ok(DegreeSummary { d, delta_plus, delta_minus, margin, gap_holds, report })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minor2(m: &DMatrix<C64>, r0: usize, r1: usize) -> C64 {
        m[(r0, 0)] * m[(r1, 1)] - m[(r0, 1)] * m[(r1, 0)]
    }

    #[test]
    fn gram_volume_matches_cauchy_binet() {
        let a = DMatrix::from_row_slice(
            3,
            3,
            &[
                C64::new(1.0, 0.5),
                C64::new(-0.3, 0.2),
                C64::new(0.0, 1.0),
                C64::new(0.7, 0.0),
                C64::new(2.0, -1.0),
                C64::new(0.1, 0.1),
                C64::new(-1.2, 0.4),
                C64::new(0.0, 0.0),
                C64::new(0.5, 0.5),
            ],
        );
        let b = DMatrix::from_row_slice(3, 2, &[C64::new(1.0, 0.0), C64::new(0.2, 0.1), C64::new(0.0, 0.3), C64::new(1.0, 0.0), C64::new(0.4, 0.0), C64::new(-0.5, 0.2)]);
        let j = &a * &b;
        let closed: f64 = [(0, 1), (0, 2), (1, 2)].iter().map(|&(r0, r1)| minor2(&j, r0, r1).norm_sqr()).sum();
        let g = gram_log_volume(&j).exp();
        assert!((g - closed).abs() / closed < 1e-8, "{g} vs {closed}");
        let v = DMatrix::from_column_slice(2, 1, &[C64::new(3.0, 4.0), C64::new(0.0, 1.0)]);
        assert!((gram_log_volume(&v).exp() - 26.0).abs() < 1e-12);
    }

    #[test]
    fn linear_disc_volume_is_exact() {
        let m = MapSpec::Decoupled(crate::maps::Decoupled::new(vec![C64::new(0.5, 0.0), C64::new(0.5, 0.0)], vec![1, 1], 1).unwrap());
        let dom = Domain::bidisc(2.0);
        let disc = DiscFamily::horizontal(&dom, 1, &[C64::new(0.1, 0.0)]).unwrap();
        let v = volume_growth(&m, &dom, &disc, &[0, 1, 2], &VolumeParams::default()).unwrap();
        let r = 0.95 * 1.6;
        for (i, n) in [0usize, 1, 2].iter().enumerate() {
            let s = 0.5f64.powi(*n as i32);
            let bend = 0.02 * 1.6;
            let area = PI * s * s * (r * r + 2.0 * bend * bend);
            assert!((v.log_volume[i] - area.ln()).abs() < 1e-8, "n={n}: {} vs {}", v.log_volume[i].exp(), area);
        }
        assert!((v.slope.unwrap() - 2.0 * 0.5f64.ln()).abs() < 1e-8);
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let m = MapSpec::henon_quadratic(0.0, 0.5);
        let dom = Domain::bidisc(2.0);
        assert!(DiscFamily::horizontal(&dom, 2, &[C64::new(0.0, 0.0)]).is_err());
        let d0 = DiscFamily::horizontal(&dom, 0, &[C64::new(0.0, 0.0)]).unwrap();
        assert!(volume_growth(&m, &dom, &d0, &[1, 2], &VolumeParams::default()).is_err());
        let s = degree_summary(&m, &[]).unwrap();
        assert_eq!(s.delta_plus, 1.0);
        assert!(s.gap_holds);
    }
}
