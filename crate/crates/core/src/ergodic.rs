//! Ergodic statistics of the equilibrium measure: Lyapunov exponents by QR
//! along orbits, entropy from separated sets and Bowen balls, decay of
//! correlations, and the closing checklist.

use crate::degrees::DegreeSummary;
use crate::equilibrium::SampleMeasure;
use crate::fit::{fit_line, mean_std, median};
use crate::geometry::{Domain, Shell};
use crate::maps::MapSpec;
use crate::observables::Observable;
use crate::report::ExperimentReport;
use crate::{invalid, par, rng, ComplexVec, Result, C64};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use std::ops::Range;

const SALT_JITTER: u64 = 0x4A17;
const SALT_LYAP: u64 = 0x1A9A;
const SALT_CANDIDATE: u64 = 0xE7A0;
const SALT_CENTERS: u64 = 0xB0E4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeDirection {
    Forward,
    Backward,
}

impl TimeDirection {
    pub fn reversed(self) -> Self {
        match self {
            TimeDirection::Forward => TimeDirection::Backward,
            TimeDirection::Backward => TimeDirection::Forward,
        }
    }
}

fn step(m: &MapSpec, dir: TimeDirection, x: &[C64]) -> Option<ComplexVec> {
    let y = match dir {
        TimeDirection::Forward => m.eval(x),
        TimeDirection::Backward => m.eval_inverse(x).ok()?,
    };
    y.is_finite().then_some(y)
}

/// Number of steps (up to `horizon`) before the orbit leaves the ball of radius `r`.
fn survival(m: &MapSpec, dir: TimeDirection, x: &[C64], horizon: u32, r: f64) -> u32 {
    let mut y = ComplexVec::from_slice(x);
    for n in 0..horizon {
        match step(m, dir, &y) {
            Some(z) if z.norm() <= r => y = z,
            _ => return n,
        }
    }
    horizon
}

/// Settings of the Julia-set refinement.
#[derive(Clone, Debug, Serialize)]
pub struct RefineParams {
    /// Orbit length that counts as bounded.
    pub horizon: u32,
    /// Steps taken after landing on `J±` before a point is used.
    pub warmup: u32,
    /// Further steps a point must survive after the warm-up.
    pub reserve: u32,
    /// Steps used to contract onto the Julia set when refining from the other side.
    pub settle: u32,
    pub escape_radius: f64,
}

impl RefineParams {
    pub fn for_domain(dom: &Domain) -> Self {
        RefineParams { horizon: 60, warmup: 12, reserve: 20, settle: 30, escape_radius: 10.0 * dom.outer_radius() }
    }
}

fn crossing_coin(x: &ComplexVec) -> bool {
    let mut h = 0x9E37_79B9_7F4A_7C15u64;
    for z in x.iter() {
        for b in [z.re.to_bits(), z.im.to_bits()] {
            h = (h ^ b).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            h ^= h >> 31;
        }
    }
    h & 1 == 0
}

fn expanding_block(m: &MapSpec, dir: TimeDirection) -> Option<Range<usize>> {
    let (k, p) = (m.k(), m.p());
    match dir {
        TimeDirection::Forward if p > 0 => Some(0..p),
        TimeDirection::Backward if p < k => Some(p..k),
        _ => None,
    }
}

/// Moves `x` along the first coordinate of `block` to the boundary of the set
/// of points whose orbit survives `horizon` steps, preferring the crossing
/// closest to `x`. Without a crossing in reach, zooms onto the longest survivor.
fn refine_line(m: &MapSpec, dir: TimeDirection, x: &ComplexVec, block: Range<usize>, scale: f64, prm: &RefineParams) -> ComplexVec {
    let axis = block.start;
    let at = |s: f64| {
        let mut y = x.clone();
        y.0[axis] += C64::new(s, 0.0);
        y
    };
    let bounded = |s: f64| survival(m, dir, &at(s), prm.horizon, prm.escape_radius) == prm.horizon;
    let (mut c, mut half) = (0.0, scale);
    let mut expansions = 0;
    for _ in 0..25 {
        let ss: Vec<f64> = (0..9).map(|j| c + half * (j as f64 - 4.0) / 4.0).collect();
        let tau: Vec<u32> = ss.iter().map(|&s| survival(m, dir, &at(s), prm.horizon, prm.escape_radius)).collect();
        let crossing = (0..8)
            .filter(|&j| (tau[j] == prm.horizon) != (tau[j + 1] == prm.horizon))
            .min_by(|&a, &b| (ss[a] + ss[a + 1]).abs().total_cmp(&(ss[b] + ss[b + 1]).abs()));
        if let Some(j) = crossing {
            let (mut lo, mut hi) = if tau[j] == prm.horizon { (ss[j], ss[j + 1]) } else { (ss[j + 1], ss[j]) };
            for _ in 0..64 {
                let mid = 0.5 * (lo + hi);
                if mid == lo || mid == hi {
                    break;
                }
                if bounded(mid) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            // The crossing lies between two adjacent floats; a fair coin keyed
            // on the start point picks the side, so refined points carry no
            // one-signed offset from the Julia set.
            return at(if crossing_coin(x) { lo } else { hi });
        }
        if tau.iter().all(|&t| t == prm.horizon) && expansions < 3 {
            half *= 4.0;
            expansions += 1;
            continue;
        }
        let best = (0..9).max_by(|&a, &b| tau[a].cmp(&tau[b]).then(ss[b].abs().total_cmp(&ss[a].abs()))).unwrap();
        c = ss[best];
        half /= 4.0;
    }
    at(c)
}

/// Refines `x` onto `J₊` (forward) or `J₋` (backward) along the expanding
/// block, then advances `warmup` steps in the same direction so that the
/// contracted coordinates settle onto the Julia set. Points that do not
/// survive a further `reserve` steps are rejected.
///
/// The start point is first refined along the expanding block of the
/// opposite direction, so the coordinates that contract along the requested
/// orbits already lie near the other Julia set.
///
/// When the slices of the bounded set are too thin for a line search (a
/// volume-contracting direction), the point is instead refined for the
/// opposite direction and then pushed `settle` steps against it, which
/// contracts it onto the requested Julia set.
pub fn refine_to_julia(m: &MapSpec, x: &ComplexVec, dir: TimeDirection, scale: f64, prm: &RefineParams) -> Option<ComplexVec> {
    let other = dir.reversed();
    let pre = expanding_block(m, other).map(|b| refine_line(m, other, x, b, scale, prm));
    refine_direct(m, pre.as_ref().unwrap_or(x), dir, scale, prm).or_else(|| {
        let mut y = refine_direct(m, x, other, scale, prm)?;
        for _ in 0..prm.settle {
            y = step(m, other, &y).filter(|z| z.norm() <= prm.escape_radius)?;
        }
        (survival(m, dir, &y, prm.reserve, prm.escape_radius) == prm.reserve).then_some(y)
    })
}

fn refine_direct(m: &MapSpec, x: &ComplexVec, dir: TimeDirection, scale: f64, prm: &RefineParams) -> Option<ComplexVec> {
    let block = expanding_block(m, dir)?;
    let mut y = refine_line(m, dir, x, block, scale, prm);
    for _ in 0..prm.warmup {
        y = step(m, dir, &y).filter(|z| z.norm() <= prm.escape_radius)?;
    }
    (survival(m, dir, &y, prm.reserve, prm.escape_radius) == prm.reserve).then_some(y)
}

#[derive(Clone, Debug, Serialize)]
pub struct SamplerStats {
    pub requested: usize,
    pub accepted: usize,
}

/// Draws `count` points from `mu` (systematic resampling, uniform jitter
/// inside each cell) and refines each onto the Julia set for orbits running
/// in direction `dir`.
pub fn sample_on_julia(m: &MapSpec, dom: &Domain, mu: &SampleMeasure, count: usize, dir: TimeDirection, seed: u64) -> Result<(SampleMeasure, SamplerStats)> {
    sample_on_julia_with(m, dom, mu, count, dir, seed, &RefineParams::for_domain(dom))
}

pub fn sample_on_julia_with(
    m: &MapSpec,
    dom: &Domain,
    mu: &SampleMeasure,
    count: usize,
    dir: TimeDirection,
    seed: u64,
    prm: &RefineParams,
) -> Result<(SampleMeasure, SamplerStats)> {
    if count == 0 {
        return invalid("count must be positive");
    }
    let starts = mu.resample(count, seed);
    let cell = mu.cell.clone();
    let scale = cell.as_ref().map(|c| 4.0 * c.iter().fold(0.0, |a: f64, b| a.max(*b))).unwrap_or(0.1 * dom.outer_radius());
    let refined = par::map_indexed(count, |i| {
        let mut x = starts[i].clone();
        if let Some(c) = &cell {
            let mut r = rng::stream(seed, SALT_JITTER, i as u64);
            for (j, xi) in x.0.iter_mut().enumerate() {
                let h = c[j.min(c.len() - 1)];
                *xi += C64::new(h * (2.0 * rng::uniform(&mut r) - 1.0), h * (2.0 * rng::uniform(&mut r) - 1.0));
            }
        }
        refine_to_julia(m, &x, dir, scale, prm)
    });
    let points: Vec<ComplexVec> = refined.into_iter().flatten().collect();
    let stats = SamplerStats { requested: count, accepted: points.len() };
    if points.is_empty() {
        return invalid("no sample point could be refined onto the Julia set");
    }
    let out = SampleMeasure::uniform(points, &format!("julia-refined[{dir:?}]({})", mu.provenance))?;
    Ok((out, stats))
}

/// Seeded candidates in `D″` refined onto the Julia set for forward orbits.
pub fn julia_candidates(m: &MapSpec, dom: &Domain, count: usize, seed: u64) -> Vec<ComplexVec> {
    let prm = RefineParams::for_domain(dom);
    let scale = 0.25 * dom.outer_radius();
    par::map_indexed(count, |i| {
        let mut r = rng::stream(seed, SALT_CANDIDATE, i as u64);
        let x = dom.sample_interior(&mut r, Shell::Second);
        refine_to_julia(m, &x, TimeDirection::Forward, scale, &prm)
    })
    .into_iter()
    .flatten()
    .collect()
}

fn cell_key(x: &[C64], h: f64) -> Vec<i64> {
    x.iter().flat_map(|z| [(z.re / h).floor() as i64, (z.im / h).floor() as i64]).collect()
}

fn neighbour_keys(key: &[i64]) -> impl Iterator<Item = Vec<i64>> + '_ {
    let n = key.len() as u32;
    (0..3usize.pow(n)).map(move |mut o| {
        key.iter()
            .map(|&c| {
                let d = (o % 3) as i64 - 1;
                o /= 3;
                c + d
            })
            .collect()
    })
}

/// Union of lattice cells around a point cloud, dilated by one cell.
#[derive(Clone, Debug)]
pub struct SupportMask {
    cell: f64,
    cells: HashSet<Vec<i64>>,
}

impl SupportMask {
    pub fn from_points(points: &[ComplexVec], cell: f64) -> Self {
        let mut cells = HashSet::new();
        for p in points {
            for key in neighbour_keys(&cell_key(p, cell)) {
                cells.insert(key);
            }
        }
        SupportMask { cell, cells }
    }

    pub fn contains(&self, x: &[C64]) -> bool {
        self.cells.contains(&cell_key(x, self.cell))
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct LyapunovParams {
    pub orbits: usize,
    pub steps: usize,
    pub seed: u64,
    /// Lattice size of the support mask; `None` disables the mask.
    pub mask_cell: Option<f64>,
    /// `(δ̃₊, δ̃₋)` used for the theorem bounds.
    pub delta_tilde: (f64, f64),
    /// Counted steps per segment; every segment restarts from a fresh draw of `mu`.
    pub block: usize,
    /// Uncounted steps that align the QR frame at the start of a segment.
    pub warmup: usize,
}

impl LyapunovParams {
    pub fn new(orbits: usize, steps: usize, seed: u64) -> Self {
        LyapunovParams { orbits, steps, seed, mask_cell: None, delta_tilde: (1.0, 1.0), block: 14, warmup: 6 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LyapunovReport {
    pub exponents: Vec<f64>,
    /// Largest standard deviation of the per-orbit estimates.
    pub spread: f64,
    pub orbits_used: usize,
    pub steps_used: usize,
    pub theorem_floor: f64,
    pub theorem_ceiling_neg: f64,
    /// Share of segments that left the domain or the support mask.
    pub lost_fraction: f64,
    pub discarded_steps: usize,
    pub count_consistent: bool,
    pub report: ExperimentReport,
}

fn draw_index(cum: &[f64], u: f64) -> usize {
    cum.partition_point(|&c| c < u).min(cum.len() - 1)
}

struct OrbitRun {
    sums: Vec<f64>,
    steps: usize,
    segments: usize,
    restarts: usize,
    discarded: usize,
}

/// Exponents from the log-diagonals of successive QR factors of the
/// complex Jacobian cocycle along `mu`-sampled orbit segments in `dom`.
/// Segments are kept short so that rounding never carries an orbit off the
/// Julia set it was sampled on.
pub fn lyapunov_qr(m: &MapSpec, dom: &Domain, mu: &SampleMeasure, prm: &LyapunovParams) -> Result<LyapunovReport> {
    if prm.orbits < 30 || prm.steps < 100 {
        return invalid("need at least 30 orbits of at least 100 steps");
    }
    if mu.k() != m.k() {
        return Err(crate::Error::Dimension { expected: m.k(), got: mu.k() });
    }
    let k = m.k();
    let mut cum = Vec::with_capacity(mu.len());
    let mut acc = 0.0;
    for w in &mu.weights {
        acc += w;
        cum.push(acc);
    }
    let mask = prm.mask_cell.map(|h| SupportMask::from_points(&mu.points, h));
    let alive = |x: &[C64]| x.iter().all(|z| z.is_finite()) && dom.in_outer(x) && mask.as_ref().is_none_or(|s| s.contains(x));
    let max_attempts = 50 * prm.steps;
    let runs = par::map_indexed(prm.orbits, |i| {
        let mut r = rng::stream(prm.seed, SALT_LYAP, i as u64);
        let mut run = OrbitRun { sums: vec![0.0; k], steps: 0, segments: 0, restarts: 0, discarded: 0 };
        let mut attempts = 0;
        'restart: while run.steps < prm.steps && attempts < max_attempts {
            let mut x = mu.points[draw_index(&cum, rng::uniform(&mut r))].clone();
            run.segments += 1;
            let mut q = DMatrix::<C64>::identity(k, k);
            let mut block = vec![0.0; k];
            let mut len = 0;
            let mut t = 0;
            while run.steps < prm.steps {
                attempts += 1;
                let j = m.differential(&x) * &q;
                x = m.eval(&x);
                if !alive(&x) {
                    run.restarts += 1;
                    run.discarded += len;
                    continue 'restart;
                }
                let qr = j.qr();
                let rr = qr.r();
                q = qr.q();
                t += 1;
                if t <= prm.warmup {
                    continue;
                }
                for (b, d) in block.iter_mut().zip(rr.diagonal().iter()) {
                    *b += d.norm().ln();
                }
                len += 1;
                if len == prm.block {
                    for (s, b) in run.sums.iter_mut().zip(block.iter_mut()) {
                        *s += *b;
                        *b = 0.0;
                    }
                    run.steps += len;
                    continue 'restart;
                }
            }
        }
        run
    });
    let usable: Vec<&OrbitRun> = runs.iter().filter(|r| r.steps > 0).collect();
    if usable.is_empty() {
        return invalid("every orbit was lost before completing a block");
    }
    let per_orbit: Vec<Vec<f64>> = usable
        .iter()
        .map(|r| {
            let mut v: Vec<f64> = r.sums.iter().map(|s| s / r.steps as f64).collect();
            v.sort_by(|a, b| b.total_cmp(a));
            v
        })
        .collect();
    let mut exponents = Vec::with_capacity(k);
    let mut spread: f64 = 0.0;
    for i in 0..k {
        let col: Vec<f64> = per_orbit.iter().map(|v| v[i]).collect();
        let (mean, sd) = mean_std(&col);
        exponents.push(mean);
        spread = spread.max(sd);
    }
    let steps_used: usize = usable.iter().map(|r| r.steps).sum();
    let restarts: usize = runs.iter().map(|r| r.restarts).sum();
    let discarded: usize = runs.iter().map(|r| r.discarded).sum();
    let segments: usize = runs.iter().map(|r| r.segments).sum();
    let lost_fraction = restarts as f64 / segments.max(1) as f64;
    let d = m.main_degree() as f64;
    let scale = 1.0 / (2.0 * k as f64);
    let theorem_floor = scale * (d / prm.delta_tilde.0).ln();
    let theorem_ceiling_neg = -scale * (d / prm.delta_tilde.1).ln();
    let p = m.p();
    let count_consistent = exponents.iter().filter(|&&e| e >= theorem_floor - 0.05).count() == p
        && exponents.iter().filter(|&&e| e <= theorem_ceiling_neg + 0.05).count() == k - p;
    let mut report = ExperimentReport::new("lyapunov", &m.describe(), prm.seed);
    report
        .series("exponents", &exponents)
        .scalar("spread", spread)
        .scalar("orbits_used", usable.len() as f64)
        .scalar("steps_used", steps_used as f64)
        .scalar("theorem_floor", theorem_floor)
        .scalar("theorem_ceiling_neg", theorem_ceiling_neg)
        .scalar("lost_fraction", lost_fraction)
        .scalar("discarded_steps", discarded as f64)
        .flag("count_consistent", count_consistent);
    if usable.len() < prm.orbits {
        report.note("short_orbits", format!("{} orbits produced no complete block", prm.orbits - usable.len()));
    }
    if lost_fraction > 0.2 {
        report.mark_unreliable("more than 20% of orbit segments left the domain");
    }
    Ok(LyapunovReport {
        exponents,
        spread,
        orbits_used: usable.len(),
        steps_used,
        theorem_floor,
        theorem_ceiling_neg,
        lost_fraction,
        discarded_steps: discarded,
        count_consistent,
        report,
    })
}

/// Exponents of the inverse map, in the inverse's coordinates. `mu` should be
/// refined for backward orbits.
pub fn inverse_lyapunov(m: &MapSpec, dom: &Domain, mu: &SampleMeasure, prm: &LyapunovParams) -> Result<LyapunovReport> {
    let p = m.p();
    let inv = m.inverse();
    let mut prm = prm.clone();
    prm.delta_tilde = (prm.delta_tilde.1, prm.delta_tilde.0);
    lyapunov_qr(&inv, &dom.swapped()?, &mu.swapped(p), &prm)
}

/// `E_μ log|det Df|`
pub fn mean_log_jacobian(m: &MapSpec, mu: &SampleMeasure) -> f64 {
    mu.integrate(|x| m.differential(x).determinant().norm().ln())
}

fn slope_fit(ns: &[usize], values: &[f64]) -> Option<crate::fit::LineFit> {
    let xs: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    fit_line(&xs, values)
}

/// Greedy `(n, ε)`-separated subsets of Julia-refined candidates whose
/// forward orbits stay in `D″`; the slope of `log count` against `n`
/// estimates the entropy.
pub fn entropy_separated_sets(m: &MapSpec, dom: &Domain, eps: f64, n_list: &[usize], budget: usize, seed: u64) -> Result<ExperimentReport> {
    if n_list.len() < 3 {
        return invalid("slope needs at least three values of n");
    }
    if !(eps > 0.0) || budget == 0 {
        return invalid("need eps > 0 and a positive budget");
    }
    let candidates = julia_candidates(m, dom, budget, seed);
    separated_set_report(m, dom, &candidates, eps, n_list, seed)
}

/// Counts above this share of the surviving candidates are treated as saturated.
const SATURATION: f64 = 0.25;

/// As [`entropy_separated_sets`] on a prepared candidate cloud. The slope is
/// fitted over the `n` whose count is unsaturated.
pub fn separated_set_report(m: &MapSpec, dom: &Domain, candidates: &[ComplexVec], eps: f64, n_list: &[usize], seed: u64) -> Result<ExperimentReport> {
    if n_list.len() < 3 {
        return invalid("slope needs at least three values of n");
    }
    let n_max = *n_list.iter().max().unwrap();
    let inner = dom.shrink(Shell::Second);
    let orbits: Vec<Option<Vec<ComplexVec>>> = par::map_indexed(candidates.len(), |i| {
        let mut o = vec![candidates[i].clone()];
        for _ in 0..n_max {
            let y = m.eval(o.last().unwrap());
            if !y.is_finite() {
                break;
            }
            o.push(y);
        }
        Some(o)
    });
    let stays = |o: &[ComplexVec], n: usize| o.len() > n && o[..=n].iter().all(|x| inner.in_outer(x));
    let mut counts = Vec::new();
    let mut survivors = Vec::new();
    let mut saturated = false;
    for &n in n_list {
        let mut grid: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
        let mut accepted: Vec<&[ComplexVec]> = Vec::new();
        let mut alive = 0usize;
        for o in orbits.iter().flatten() {
            if !stays(o, n) {
                continue;
            }
            alive += 1;
            let key = cell_key(&o[0], eps);
            let close = neighbour_keys(&key).any(|nk| {
                grid.get(&nk).is_some_and(|ids| ids.iter().any(|&a| (0..=n).all(|j| accepted[a][j].dist(&o[j]) <= eps)))
            });
            if !close {
                grid.entry(key).or_default().push(accepted.len());
                accepted.push(&o[..=n]);
            }
        }
        counts.push(accepted.len() as f64);
        survivors.push(alive as f64);
    }
    let window: Vec<usize> = (0..n_list.len()).filter(|&i| counts[i] >= 1.0 && counts[i] <= SATURATION * survivors[i]).collect();
    if window.len() < 3 {
        saturated = true;
    }
    let fit_idx: Vec<usize> = if saturated { (0..n_list.len()).collect() } else { window.clone() };
    let fit_n: Vec<usize> = fit_idx.iter().map(|&i| n_list[i]).collect();
    let logs: Vec<f64> = fit_idx.iter().map(|&i| counts[i].max(1.0).ln()).collect();
    let fit = slope_fit(&fit_n, &logs);
    let log_d = (m.main_degree() as f64).ln();
    let mut report = ExperimentReport::new("entropy", &m.describe(), seed);
    report
        .series("n", &n_list.iter().map(|&n| n as f64).collect::<Vec<_>>())
        .series("count", &counts)
        .series("survivors", &survivors)
        .scalar("eps", eps)
        .scalar("candidates", candidates.len() as f64)
        .scalar("fit_points", fit_n.len() as f64)
        .opt_scalar("h_separated", fit.map(|f| f.slope))
        .opt_scalar("fit_r2", fit.map(|f| f.r2))
        .scalar("log_d", log_d)
        .flag("saturated", saturated);
    if let Some(f) = fit {
        report.scalar("ratio_to_log_d", f.slope / log_d);
    }
    if saturated {
        report.mark_unreliable("separated-set counts saturate the candidate budget; the slope is a lower bound");
    }
    Ok(report)
}

/// Forward balls are used for maps without a single-valued inverse.
pub fn default_bowen_direction(m: &MapSpec) -> TimeDirection {
    match m {
        MapSpec::Decoupled(_) => TimeDirection::Forward,
        _ => TimeDirection::Backward,
    }
}

/// `μ(B_{±n}(x, ε))` by weighted counts of sample points, for sampled
/// centres. Each centre's slope of `−log mass` against `n` is fitted over the
/// `n` where its ball still holds at least five other points; the median
/// slope is the entropy estimate.
pub fn bowen_ball_mass(
    m: &MapSpec,
    mu: &SampleMeasure,
    eps: f64,
    n_list: &[usize],
    centers: usize,
    direction: TimeDirection,
    seed: u64,
) -> Result<ExperimentReport> {
    if n_list.is_empty() || !(eps > 0.0) || centers == 0 {
        return invalid("need n values, eps > 0 and at least one centre");
    }
    let n_max = *n_list.iter().max().unwrap();
    let r_esc = 1e6;
    let orbits: Vec<Vec<ComplexVec>> = par::map_indexed(mu.len(), |i| {
        let mut o = vec![mu.points[i].clone()];
        for _ in 0..n_max {
            match step(m, direction, o.last().unwrap()) {
                Some(y) if y.norm() <= r_esc => o.push(y),
                _ => break,
            }
        }
        o
    });
    let mut grid: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
    for (i, x) in mu.points.iter().enumerate() {
        grid.entry(cell_key(x, eps)).or_default().push(i);
    }
    let mut r = rng::stream(seed, SALT_CENTERS, 0);
    let picks: Vec<usize> = (0..centers).map(|_| ((rng::uniform(&mut r) * mu.len() as f64) as usize).min(mu.len() - 1)).collect();
    let per_center = par::map_indexed(picks.len(), |ci| {
        let c = picks[ci];
        let oc = &orbits[c];
        let mut mass = vec![0.0; n_list.len()];
        let mut count = vec![0usize; n_list.len()];
        for key in neighbour_keys(&cell_key(&mu.points[c], eps)) {
            let Some(ids) = grid.get(&key) else { continue };
            for &y in ids {
                if y == c {
                    continue;
                }
                let oy = &orbits[y];
                let mut exit = 0;
                while exit <= n_max && exit < oy.len() && exit < oc.len() && oy[exit].dist(&oc[exit]) <= eps {
                    exit += 1;
                }
                for (j, &n) in n_list.iter().enumerate() {
                    if exit > n {
                        mass[j] += mu.weights[y];
                        count[j] += 1;
                    }
                }
            }
        }
        (mass, count)
    });
    let mut slopes = Vec::new();
    let mut dropped = 0usize;
    let mut mean_log_mass = vec![Vec::new(); n_list.len()];
    for (mass, count) in &per_center {
        let keep: Vec<usize> = (0..n_list.len()).filter(|&j| count[j] >= 5).collect();
        for &j in &keep {
            mean_log_mass[j].push(-mass[j].ln());
        }
        if keep.len() < 3 {
            dropped += 1;
            continue;
        }
        let ns: Vec<usize> = keep.iter().map(|&j| n_list[j]).collect();
        let ys: Vec<f64> = keep.iter().map(|&j| -mass[j].ln()).collect();
        if let Some(f) = slope_fit(&ns, &ys) {
            slopes.push(f.slope);
        } else {
            dropped += 1;
        }
    }
    let log_d = (m.main_degree() as f64).ln();
    let mut report = ExperimentReport::new("bowen", &m.describe(), seed);
    report
        .note("direction", format!("{direction:?}").to_lowercase())
        .series("n", &n_list.iter().map(|&n| n as f64).collect::<Vec<_>>())
        .series("median_neg_log_mass", &mean_log_mass.iter().map(|v| median(v).unwrap_or(f64::NAN)).collect::<Vec<_>>())
        .scalar("eps", eps)
        .scalar("centers", centers as f64)
        .scalar("dropped_fraction", dropped as f64 / centers as f64)
        .scalar("log_d", log_d);
    if slopes.is_empty() {
        report.mark_unreliable("every centre's ball emptied below the sample resolution");
        return Ok(report);
    }
    let h = median(&slopes).unwrap_or(f64::NAN);
    report
        .scalar("h_bowen", h)
        .scalar("ratio_to_log_d", h / log_d)
        .flag("below_maximal", h <= log_d + 0.1);
    Ok(report)
}

#[derive(Clone, Debug, Serialize)]
pub struct CorrelationReport {
    pub correlations: Vec<f64>,
    pub noise_floor: f64,
    /// Number of leading `n` above the noise floor.
    pub pre_floor: usize,
    pub lambda_hat: Option<f64>,
    pub r2: Option<f64>,
    pub dropped_fraction: f64,
    pub report: ExperimentReport,
}

/// `Iₙ = E[φ∘fⁿ · ψ] − E[φ∘fⁿ]·E[ψ]` over the sample, `n = 0..=n_max`,
/// with a log-linear fit of `|Iₙ|` before the noise floor
/// `3/√N · σ(φ)σ(ψ)`. Points whose orbit leaves `dom` are dropped.
pub fn correlation_decay(m: &MapSpec, dom: &Domain, mu: &SampleMeasure, phi: &Observable, psi: &Observable, n_max: usize) -> Result<CorrelationReport> {
    let orbits = par::map_indexed(mu.len(), |i| {
        let mut x = mu.points[i].clone();
        let mut vals = Vec::with_capacity(n_max + 1);
        for n in 0..=n_max {
            if n > 0 {
                x = m.eval(&x);
            }
            if !(x.is_finite() && dom.in_outer(&x)) {
                return None;
            }
            vals.push(phi.eval(&x));
        }
        Some((vals, psi.eval(&mu.points[i]), mu.weights[i]))
    });
    let kept: Vec<(Vec<f64>, f64, f64)> = orbits.into_iter().flatten().collect();
    if kept.len() < 2 {
        return invalid("fewer than two orbits stay in the domain");
    }
    let dropped_fraction = 1.0 - kept.len() as f64 / mu.len() as f64;
    let total = par::ksum(kept.iter().map(|k| k.2));
    let e = |f: &dyn Fn(&(Vec<f64>, f64, f64)) -> f64| par::ksum(kept.iter().map(|k| k.2 * f(k))) / total;
    let mean_psi = e(&|k| k.1);
    let sd = |g: &dyn Fn(&(Vec<f64>, f64, f64)) -> f64, mean: f64| e(&|k| (g(k) - mean).powi(2)).sqrt();
    let mean_phi0 = e(&|k| k.0[0]);
    let sigma_phi = sd(&|k| k.0[0], mean_phi0);
    let sigma_psi = sd(&|k| k.1, mean_psi);
    let noise_floor = 3.0 / (kept.len() as f64).sqrt() * sigma_phi * sigma_psi;
    let correlations: Vec<f64> = (0..=n_max)
        .map(|n| {
            let mean_phi = e(&|k| k.0[n]);
            e(&|k| k.0[n] * k.1) - mean_phi * mean_psi
        })
        .collect();
    if correlations[0].abs() <= noise_floor {
        return invalid("|I₀| is below the noise floor: degenerate observables");
    }
    let pre_floor = correlations.iter().take_while(|c| c.abs() > noise_floor).count();
    let fit = if pre_floor >= 3 {
        let ns: Vec<usize> = (0..pre_floor).collect();
        let ys: Vec<f64> = correlations[..pre_floor].iter().map(|c| c.abs().ln()).collect();
        slope_fit(&ns, &ys)
    } else {
        None
    };
    let lambda_hat = fit.map(|f| (-f.slope).exp());
    let r2 = fit.map(|f| f.r2);
    let mut report = ExperimentReport::new("mixing", &m.describe(), 0);
    report
        .note("phi", phi.name())
        .note("psi", psi.name())
        .series("correlation", &correlations)
        .scalar("noise_floor", noise_floor)
        .scalar("pre_floor", pre_floor as f64)
        .opt_scalar("lambda_hat", lambda_hat)
        .opt_scalar("fit_r2", r2)
        .scalar("dropped_fraction", dropped_fraction)
        .flag("below_floor_after_0", correlations[1..].iter().all(|c| c.abs() <= noise_floor));
    Ok(CorrelationReport { correlations, noise_floor, pre_floor, lambda_hat, r2, dropped_fraction, report })
}

/// Collected estimates for [`degree_gap_dashboard`].
#[derive(Clone, Debug, Default)]
pub struct DashboardInputs<'a> {
    pub certified: bool,
    pub degrees: Option<&'a DegreeSummary>,
    pub lyapunov: Option<&'a LyapunovReport>,
    pub mixing: Option<&'a CorrelationReport>,
}

/// One verdict record checking the degree gap, the Lyapunov signs and mixing.
pub fn degree_gap_dashboard(m: &MapSpec, inputs: &DashboardInputs) -> ExperimentReport {
    let mut report = ExperimentReport::new("dashboard", &m.describe(), 0);
    let d = m.main_degree() as f64;
    report.scalar("d", d);
    if !inputs.certified {
        report.note("verdict", "not applicable");
        return report;
    }
    let mut missing = Vec::new();
    let mut failed = Vec::new();
    match inputs.degrees {
        Some(s) => {
            report.scalar("delta_plus_hat", s.delta_plus).scalar("delta_minus_hat", s.delta_minus).flag("degree_gap", s.gap_holds);
            if !s.gap_holds {
                failed.push("degree gap");
            }
        }
        None => missing.push("degrees"),
    }
    match inputs.lyapunov {
        Some(l) => {
            report.series("exponents", &l.exponents).flag("lyapunov_signs", l.count_consistent);
            if !l.count_consistent {
                failed.push("lyapunov signs");
            }
        }
        None => missing.push("lyapunov"),
    }
    match inputs.mixing {
        Some(c) => {
            let ok = c.lambda_hat.is_some_and(|l| l > 1.0) || c.correlations[1..].iter().all(|x| x.abs() <= c.noise_floor);
            report.opt_scalar("mixing_lambda_hat", c.lambda_hat).flag("mixing", ok);
            if !ok {
                failed.push("mixing");
            }
        }
        None => missing.push("mixing"),
    }
    let verdict = if !failed.is_empty() {
        format!("inconsistent: {}", failed.join(", "))
    } else if !missing.is_empty() {
        format!("incomplete: missing {}", missing.join(", "))
    } else {
        "hyperbolic + mixing consistent".to_string()
    };
    report.note("verdict", verdict);
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(c: &[f64]) -> MapSpec {
        MapSpec::Decoupled(crate::maps::Decoupled::new(c.iter().map(|&x| C64::new(x, 0.0)).collect(), vec![1; c.len()], 1).unwrap())
    }

    #[test]
    fn linear_diagonal_exponents_are_exact() {
        let m = diag(&[3.0, 0.25]);
        let dom = Domain::bidisc(2.0);
        let mu = SampleMeasure::uniform(vec![ComplexVec::zeros(2)], "origin").unwrap();
        let l = lyapunov_qr(&m, &dom, &mu, &LyapunovParams::new(30, 100, 1)).unwrap();
        assert!((l.exponents[0] - 3f64.ln()).abs() < 1e-12);
        assert!((l.exponents[1] - 0.25f64.ln()).abs() < 1e-12);
        assert_eq!(l.lost_fraction, 0.0);
        assert!(l.spread < 1e-12);
    }

    #[test]
    fn bad_arguments_are_rejected() {
        let m = diag(&[3.0, 0.25]);
        let dom = Domain::bidisc(2.0);
        let mu = SampleMeasure::uniform(vec![ComplexVec::zeros(2)], "origin").unwrap();
        assert!(lyapunov_qr(&m, &dom, &mu, &LyapunovParams::new(10, 100, 1)).is_err());
        assert!(entropy_separated_sets(&m, &dom, 0.05, &[3], 100, 1).is_err());
    }

    #[test]
    fn refinement_lands_on_the_unit_circle_for_the_model() {
        let g = MapSpec::decoupled_model();
        let dom = Domain::bidisc(2.0);
        let prm = RefineParams::for_domain(&dom);
        let x = ComplexVec::from_pairs(&[(0.7, 0.4), (0.05, 0.0)]);
        let y = refine_to_julia(&g, &x, TimeDirection::Forward, 0.2, &prm).unwrap();
        assert!((y[0].norm() - 1.0).abs() < 1e-9, "{:?}", y);
        assert!(y[1].norm() < 1e-8);
        let y = refine_to_julia(&g, &x, TimeDirection::Backward, 0.2, &prm).unwrap();
        assert!(y[1].norm() < 1e-20, "{:?}", y);
    }

    #[test]
    fn constant_observable_has_zero_correlation() {
        let g = MapSpec::decoupled_model();
        let dom = Domain::bidisc(2.0);
        let pts: Vec<ComplexVec> = (0..200).map(|i| ComplexVec::from_slice(&[C64::from_polar(1.0, i as f64 * 0.1), C64::new(0.0, 0.0)])).collect();
        let mu = SampleMeasure::uniform(pts, "circle").unwrap();
        let re = Observable::re(0, 2);
        let c = correlation_decay(&g, &dom, &mu, &Observable::constant(1.0), &re, 3);
        assert!(c.is_err());
        let c = correlation_decay(&g, &dom, &mu, &re, &re, 3).unwrap();
        assert!((c.correlations[0] - 0.5).abs() < 0.05);
    }

    #[test]
    fn dashboard_without_certificate_is_not_applicable() {
        let r = degree_gap_dashboard(&MapSpec::decoupled_model(), &DashboardInputs::default());
        assert_eq!(r.notes["verdict"], "not applicable");
    }
}
