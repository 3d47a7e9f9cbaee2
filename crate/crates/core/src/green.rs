//! Green functions `G± = lim d±⁻ⁿ log⁺‖f^{±n}‖` with calibrated tail bounds.
//!
//! A solver is calibrated once per map and direction. Calibration finds an
//! escape radius `R_esc` such that points of the escape cone beyond it at
//! least double their norm in one step. It then samples the signed defect
//! `δ(y) = log‖f(y)‖ − d·log‖y‖` over images `y` of such points, takes its
//! limit `c` from the outermost radii and tabulates `C(r) = sup |δ − c|`
//! over `‖y‖ ≥ r`. Stopping at step `n` with `‖yₙ‖ = ρ` gives
//! `G ≈ d⁻ⁿ(log ρ + c/(d − 1))` with error at most `C(ρ)·d⁻ⁿ/(d − 1)`.

use crate::geometry::{ComplexVec, Domain, Shell};
use crate::maps::{swap_blocks, MapSpec};
use crate::{fit, invalid, par, rng, Error, Result, C64};
use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    fn flip(self) -> Direction {
        match self {
            Direction::Forward => Direction::Backward,
            Direction::Backward => Direction::Forward,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum GreenStatus {
    Escaped { n_esc: u32 },
    Bounded { n_max: u32 },
    Truncated,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GreenEval {
    pub value: f64,
    pub status: GreenStatus,
    pub error_bound: f64,
}

impl GreenEval {
    pub fn status_name(&self) -> &'static str {
        match self.status {
            GreenStatus::Escaped { .. } => "escaped",
            GreenStatus::Bounded { .. } => "bounded",
            GreenStatus::Truncated => "truncated",
        }
    }
}

/// Orbits whose norm passes this threshold stop iterating.
pub const OVERFLOW_GUARD: f64 = 1e100;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GreenParams {
    pub n_max: u32,
    /// Escape radius override; must be at least the calibrated one.
    pub r_esc: Option<f64>,
}

impl Default for GreenParams {
    fn default() -> Self {
        GreenParams { n_max: 200, r_esc: None }
    }
}

#[derive(Clone, Debug)]
struct Calibration {
    map: MapSpec,
    dir: Direction,
    degree: f64,
    r_esc: f64,
    /// Limit of `log‖f(y)‖ − d·log‖y‖` as `‖y‖ → ∞` in the escape region.
    limit: f64,
    /// `(radius, sup |defect − limit|)` with radius increasing and envelope non-increasing.
    envelope: Vec<(f64, f64)>,
    /// False when the defect grows with the radius (no geometric tail).
    consistent: bool,
}

#[derive(Clone, Debug)]
enum Solver {
    Direct(Calibration),
    Swapped { p: usize, inner: Box<Solver> },
    Product { a: MapSpec, b: MapSpec, parts: Vec<(usize, Solver)> },
}

/// Calibrated evaluator of `G⁺` (forward) or `G⁻` (backward) for one map.
#[derive(Clone, Debug)]
pub struct GreenSolver {
    solver: Solver,
    pub direction: Direction,
    pub degree: f64,
}

const SALT_CAL: u64 = 0xCA1B;

impl GreenSolver {
    pub fn calibrate(m: &MapSpec, dir: Direction) -> Result<GreenSolver> {
        let solver = build(m, dir)?;
        let degree = match dir {
            Direction::Forward => m.degree_plus(),
            Direction::Backward => m.degree_minus(),
        } as f64;
        Ok(GreenSolver { solver, direction: dir, degree })
    }

    pub fn plus(m: &MapSpec) -> Result<GreenSolver> {
        Self::calibrate(m, Direction::Forward)
    }

    pub fn minus(m: &MapSpec) -> Result<GreenSolver> {
        Self::calibrate(m, Direction::Backward)
    }

    /// Largest calibrated escape radius among the components.
    pub fn escape_radius(&self) -> f64 {
        fn go(s: &Solver) -> f64 {
            match s {
                Solver::Direct(c) => c.r_esc,
                Solver::Swapped { inner, .. } => go(inner),
                Solver::Product { parts, .. } => parts.iter().map(|(_, s)| go(s)).fold(0.0, f64::max),
            }
        }
        go(&self.solver)
    }

    /// Whether the defect envelope supports a geometric tail bound.
    pub fn tail_consistent(&self) -> bool {
        fn go(s: &Solver) -> bool {
            match s {
                Solver::Direct(c) => c.consistent,
                Solver::Swapped { inner, .. } => go(inner),
                Solver::Product { parts, .. } => parts.iter().all(|(_, s)| go(s)),
            }
        }
        go(&self.solver)
    }

    pub fn eval(&self, x: &[C64], params: &GreenParams) -> Result<GreenEval> {
        if params.n_max < 1 {
            return invalid("N_max must be at least 1");
        }
        if let Some(r) = params.r_esc {
            if !(r >= self.escape_radius()) {
                return invalid(format!("R_esc = {r} is below the calibrated escape radius {}", self.escape_radius()));
            }
        }
        if x.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return invalid("non-finite point");
        }
        Ok(eval_solver(&self.solver, x, params))
    }

    /// Value only, with default parameters; panics never, returns NaN on failure.
    pub fn value(&self, x: &[C64]) -> f64 {
        self.eval(x, &GreenParams::default()).map(|g| g.value).unwrap_or(f64::NAN)
    }
}

fn build(m: &MapSpec, dir: Direction) -> Result<Solver> {
    match m {
        MapSpec::Perturbed(_) => Err(Error::Unsupported("no pointwise Green function for perturbed maps".into())),
        MapSpec::Inverted(inner) => Ok(Solver::Swapped { p: m.p(), inner: Box::new(build(inner, dir.flip())?) }),
        MapSpec::Product(a, b) => {
            let deg = |f: &MapSpec| match dir {
                Direction::Forward => f.degree_plus(),
                Direction::Backward => f.degree_minus(),
            };
            let top = deg(a).max(deg(b));
            let mut parts = Vec::new();
            for (i, f) in [a, b].into_iter().enumerate() {
                if deg(f) == top {
                    parts.push((i, build(f, dir)?));
                }
            }
            Ok(Solver::Product { a: (**a).clone(), b: (**b).clone(), parts })
        }
        _ => Ok(Solver::Direct(calibrate_direct(m, dir)?)),
    }
}

fn step(map: &MapSpec, dir: Direction, y: &[C64]) -> Option<ComplexVec> {
    let out = match dir {
        Direction::Forward => map.eval(y),
        Direction::Backward => map.eval_inverse(y).ok()?,
    };
    out.is_finite().then_some(out)
}

/// Forward cone: horizontal block dominates; backward cone: vertical block dominates.
fn in_cone(p: usize, dir: Direction, y: &[C64]) -> bool {
    let h = y[..p].iter().map(|z| z.norm()).fold(0.0, f64::max);
    let v = y[p..].iter().map(|z| z.norm()).fold(0.0, f64::max);
    match dir {
        Direction::Forward => h >= v,
        Direction::Backward => v >= h,
    }
}

fn cone_sample(r: &mut rng::StreamRng, k: usize, p: usize, dir: Direction, radius: f64) -> ComplexVec {
    loop {
        let g = rng::complex_gaussian(r, k);
        let v = ComplexVec::from(g);
        let n = v.norm();
        if n > 1e-12 && in_cone(p, dir, &v) {
            return ComplexVec(v.iter().map(|z| z * (radius / n)).collect());
        }
    }
}

fn calibrate_direct(m: &MapSpec, dir: Direction) -> Result<Calibration> {
    let (k, p) = (m.k(), m.p());
    let degree = match dir {
        Direction::Forward => m.degree_plus(),
        Direction::Backward => m.degree_minus(),
    } as f64;
    if degree < 2.0 {
        return Err(Error::Unsupported("Green functions need degree at least 2".into()));
    }
    const SAMPLES: usize = 1000;
    let mut r_esc = None;
    for j in 1..=60 {
        let radius = 2f64.powi(j);
        let ok = (0..SAMPLES).all(|i| {
            let mut r = rng::stream(SALT_CAL, j as u64, i as u64);
            let x = cone_sample(&mut r, k, p, dir, radius);
            step(m, dir, &x).is_some_and(|y| y.norm() >= 2.0 * radius && in_cone(p, dir, &y))
        });
        if ok {
            r_esc = Some(radius);
            break;
        }
    }
    let r_esc = r_esc.ok_or_else(|| Error::Unsupported(format!("no escape radius found for {}", m.describe())))?;
    // Radii whose images can be stepped once more without overflow.
    let max_log = 280.0 * std::f64::consts::LN_10 / (degree * degree);
    let mut samples: Vec<(f64, f64)> = Vec::new();
    let mut buckets: Vec<Vec<f64>> = Vec::new();
    let mut radius = r_esc;
    let mut j = 0u64;
    while radius.ln() <= max_log && j < 64 {
        let mut b = Vec::new();
        for i in 0..200 {
            let mut r = rng::stream(SALT_CAL, 1000 + j, i);
            let x = cone_sample(&mut r, k, p, dir, radius);
            let Some(y) = step(m, dir, &x) else { continue };
            let Some(z) = step(m, dir, &y) else { continue };
            let ny = y.norm();
            let defect = z.norm().ln() - degree * ny.ln();
            if defect.is_finite() {
                b.push(defect);
                samples.push((ny, defect));
            }
        }
        buckets.push(b);
        radius *= 4.0;
        j += 1;
    }
    if samples.is_empty() || buckets.len() < 2 {
        return Err(Error::Unsupported("defect calibration produced too few samples".into()));
    }
    // The signed defect tends to a constant (log of a leading coefficient);
    // its limit is taken from the outermost bucket.
    let top = buckets.iter().rev().find(|b| !b.is_empty()).expect("nonempty");
    let limit = fit::median(top).expect("nonempty");
    samples.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut envelope = vec![(0.0, 0.0); samples.len()];
    let mut run: f64 = 0.0;
    for i in (0..samples.len()).rev() {
        run = run.max((samples[i].1 - limit).abs());
        envelope[i] = (samples[i].0, run);
    }
    let half = buckets.len() / 2;
    let spread = buckets[half..].iter().flatten().map(|d| (d - limit).abs()).fold(0.0, f64::max);
    let consistent = spread < 1e-3;
    Ok(Calibration { map: m.clone(), dir, degree, r_esc, limit, envelope, consistent })
}

impl Calibration {
    fn envelope_at(&self, rho: f64) -> f64 {
        let i = self.envelope.partition_point(|e| e.0 < rho);
        if i == 0 {
            self.envelope[0].1
        } else if i >= self.envelope.len() {
            self.envelope.last().map(|e| e.1).unwrap_or(0.0)
        } else {
            // samples at radius ≥ ρ start at i; the envelope at i covers them all
            self.envelope[i].1
        }
    }

    fn eval(&self, x: &[C64], params: &GreenParams) -> GreenEval {
        let d = self.degree;
        let r_esc = params.r_esc.unwrap_or(self.r_esc);
        let p = self.map.p();
        let mut y = ComplexVec::from_slice(x);
        let mut escaped_at: Option<u32> = None;
        let mut scale = 1.0; // d⁻ⁿ
        for n in 0..=params.n_max {
            let rho = y.norm();
            if let Some(n_esc) = escaped_at {
                if n > n_esc {
                    let value = (rho.ln() + self.limit / (d - 1.0)) * scale;
                    let bound = if self.consistent { self.envelope_at(rho) * scale / (d - 1.0) } else { value };
                    let done = rho >= OVERFLOW_GUARD || n == params.n_max || bound <= 1e-15 * value;
                    if done {
                        let status = if self.consistent { GreenStatus::Escaped { n_esc } } else { GreenStatus::Truncated };
                        return GreenEval { value: value.max(0.0), status, error_bound: bound };
                    }
                }
            } else if rho >= r_esc && in_cone(p, self.dir, &y) {
                escaped_at = Some(n);
            }
            if n == params.n_max {
                break;
            }
            match step(&self.map, self.dir, &y) {
                Some(next) => y = next,
                None => {
                    let v = y.norm().ln().max(0.0) * scale;
                    return GreenEval { value: v, status: GreenStatus::Truncated, error_bound: v.max(f64::MIN_POSITIVE) };
                }
            }
            scale /= d;
        }
        let rho = y.norm();
        if escaped_at.is_none() && rho < r_esc {
            let slack = r_esc.ln() * scale * d / (d - 1.0);
            GreenEval { value: 0.0, status: GreenStatus::Bounded { n_max: params.n_max }, error_bound: slack }
        } else {
            let v = rho.ln().max(0.0) * scale;
            GreenEval { value: v, status: GreenStatus::Truncated, error_bound: v }
        }
    }
}

fn eval_solver(s: &Solver, x: &[C64], params: &GreenParams) -> GreenEval {
    match s {
        Solver::Direct(c) => c.eval(x, params),
        Solver::Swapped { p, inner } => eval_solver(inner, &swap_blocks(x, *p), params),
        Solver::Product { a, b, parts } => {
            let (x1, x2) = MapSpec::product_split(a, b, x);
            let evals: Vec<GreenEval> = parts
                .iter()
                .map(|(i, s)| eval_solver(s, if *i == 0 { &x1 } else { &x2 }, params))
                .collect();
            let value = evals.iter().map(|e| e.value).fold(0.0, f64::max);
            let error_bound = evals.iter().map(|e| e.error_bound).fold(0.0, f64::max);
            let status = if evals.iter().all(|e| matches!(e.status, GreenStatus::Bounded { .. })) {
                GreenStatus::Bounded { n_max: params.n_max }
            } else if evals.iter().any(|e| e.status == GreenStatus::Truncated) {
                GreenStatus::Truncated
            } else {
                let n_esc = evals
                    .iter()
                    .filter_map(|e| match e.status {
                        GreenStatus::Escaped { n_esc } => Some(n_esc),
                        _ => None,
                    })
                    .max()
                    .unwrap_or(0);
                GreenStatus::Escaped { n_esc }
            };
            GreenEval { value, status, error_bound }
        }
    }
}

/// One-shot `G⁺` evaluation (calibrates on every call).
pub fn green_plus(m: &MapSpec, x: &[C64], n_max: u32, r_esc: Option<f64>) -> Result<GreenEval> {
    GreenSolver::plus(m)?.eval(x, &GreenParams { n_max, r_esc })
}

/// One-shot `G⁻` evaluation (calibrates on every call).
pub fn green_minus(m: &MapSpec, x: &[C64], n_max: u32, r_esc: Option<f64>) -> Result<GreenEval> {
    GreenSolver::minus(m)?.eval(x, &GreenParams { n_max, r_esc })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HolderEstimate {
    /// Fitted slope, `None` when the probe is not applicable.
    pub exponent: Option<f64>,
    pub r2: Option<f64>,
    /// `(distance, largest observed |ΔG|)` per dyadic level.
    pub levels: Vec<(f64, f64)>,
    pub pairs: usize,
}

const SALT_HOLDER: u64 = 0x401D;

/// Largest `|G(x) − G(y)|` over seeded pairs at distances `2⁻ʲ`, `j = 2..13`,
/// fitted on a log-log scale.
pub fn holder_probe(solver: &GreenSolver, dom: &Domain, pairs: usize, seed: u64) -> Result<HolderEstimate> {
    if pairs < 1000 {
        return invalid("holder probe needs at least 1000 pairs");
    }
    const LEVELS: [i32; 12] = [2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13];
    let params = GreenParams::default();
    let diffs = par::map_indexed(pairs, |i| {
        let level = i % LEVELS.len();
        let delta = 2f64.powi(-LEVELS[level]);
        let mut r = rng::stream(seed, SALT_HOLDER, i as u64);
        let x = dom.sample_interior(&mut r, Shell::Outer);
        let u = ComplexVec::from(rng::complex_gaussian(&mut r, dom.k));
        let un = u.norm();
        let y = x.add_scaled(C64::new(delta / un, 0.0), &u);
        let gx = solver.eval(&x, &params).map(|g| g.value).unwrap_or(f64::NAN);
        let gy = solver.eval(&y, &params).map(|g| g.value).unwrap_or(f64::NAN);
        (level, (gx - gy).abs())
    });
    let mut maxima = vec![0.0f64; LEVELS.len()];
    for (l, d) in diffs {
        if d.is_finite() {
            maxima[l] = maxima[l].max(d);
        }
    }
    let levels: Vec<(f64, f64)> = LEVELS.iter().zip(&maxima).map(|(&j, &m)| (2f64.powi(-j), m)).collect();
    let pts: Vec<(f64, f64)> = levels.iter().filter(|l| l.1 > 0.0).map(|l| (l.0.ln(), l.1.ln())).collect();
    let lf = if pts.len() >= 3 {
        fit::fit_line(&pts.iter().map(|p| p.0).collect::<Vec<_>>(), &pts.iter().map(|p| p.1).collect::<Vec<_>>())
    } else {
        None
    };
    Ok(HolderEstimate { exponent: lf.map(|f| f.slope), r2: lf.map(|f| f.r2), levels, pairs })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn decoupled_examples() {
        let g = MapSpec::decoupled_model();
        let e = green_plus(&g, &[c(2.0, 0.0), c(0.0, 0.0)], 200, None).unwrap();
        assert!(matches!(e.status, GreenStatus::Escaped { .. }));
        assert!((e.value - 2f64.ln()).abs() <= e.error_bound.max(1e-12));
        let b = green_plus(&g, &[c(0.5, 0.0), c(0.5, 0.0)], 200, None).unwrap();
        assert_eq!(b.value, 0.0);
        assert!(matches!(b.status, GreenStatus::Bounded { .. }));
    }

    #[test]
    fn decoupled_backward_has_no_geometric_tail() {
        let g = MapSpec::decoupled_model();
        let s = GreenSolver::minus(&g).unwrap();
        assert!(!s.tail_consistent());
        let e = s.eval(&[c(0.0, 0.0), c(1.0, 0.0)], &GreenParams::default()).unwrap();
        // direct table: 2⁻ⁿ log‖g⁻ⁿ(0, 1)‖ = 2⁻ⁿ n log 4
        let table30 = 30.0 * 4f64.ln() / 2f64.powi(30);
        assert!(e.value >= 0.0 && e.value <= table30);
        assert_eq!(e.status, GreenStatus::Truncated);
    }

    #[test]
    fn henon_plus_and_minus_recursion() {
        let f = MapSpec::henon_quadratic(0.0, 0.5);
        let sp = GreenSolver::plus(&f).unwrap();
        let sm = GreenSolver::minus(&f).unwrap();
        assert!(sp.tail_consistent() && sm.tail_consistent());
        let x = [c(300.0, 40.0), c(-2.0, 1.0)];
        let gx = sp.eval(&x, &GreenParams::default()).unwrap();
        let gfx = sp.eval(&f.eval(&x), &GreenParams::default()).unwrap();
        assert!((gfx.value - 2.0 * gx.value).abs() <= gfx.error_bound + 2.0 * gx.error_bound + 1e-12);
        let y = [c(1.0, 0.0), c(500.0, -20.0)];
        let gy = sm.eval(&y, &GreenParams::default()).unwrap();
        let gy1 = sm.eval(&f.eval_inverse(&y).unwrap(), &GreenParams::default()).unwrap();
        assert!((gy1.value - 2.0 * gy.value).abs() <= gy1.error_bound + 2.0 * gy.error_bound + 1e-12);
        assert!(gy.value > 0.0);
    }

    #[test]
    fn escape_radius_override_checked() {
        let f = MapSpec::henon_quadratic(0.0, 0.5);
        let s = GreenSolver::plus(&f).unwrap();
        let x = [c(0.1, 0.0), c(0.0, 0.0)];
        assert!(s.eval(&x, &GreenParams { n_max: 10, r_esc: Some(1e-3) }).is_err());
        assert!(s.eval(&x, &GreenParams { n_max: 0, r_esc: None }).is_err());
    }

    #[test]
    fn holder_probe_decoupled_is_lipschitz() {
        let g = MapSpec::decoupled_model();
        let s = GreenSolver::plus(&g).unwrap();
        let h = holder_probe(&s, &Domain::bidisc(2.0), 4000, 5).unwrap();
        let e = h.exponent.unwrap();
        assert!((e - 1.0).abs() < 0.1, "exponent {e}");
    }

    #[test]
    fn holder_probe_constant_region_not_applicable() {
        let g = MapSpec::decoupled_model();
        let s = GreenSolver::plus(&g).unwrap();
        let h = holder_probe(&s, &Domain::bidisc(0.5), 2000, 5).unwrap();
        assert_eq!(h.exponent, None);
    }
}
