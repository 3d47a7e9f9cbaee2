//! Config-driven experiment runners shared by the command-line tool and the
//! acceptance suite. Every runner is a pure function of the [`Config`]: it
//! returns the report, the CSV tables and the SVG plots in memory and leaves
//! all file handling to the caller.

use crate::config::Config;
use crate::currents::{
    convergence_rate_probe, pushforward_normalized, Bump, GridSpec, Orientation, Potential, PotentialGrid, TestForm,
};
use crate::degrees::{degree_summary, volume_growth, DiscFamily, VolumeGrowth, VolumeParams};
use crate::equilibrium::{
    green_equilibrium, mixed_ma_measure, pb_probe, support_check, MixedMeasure, PoleProbe, SampleMeasure,
};
use crate::ergodic::{
    bowen_ball_mass, correlation_decay, default_bowen_direction, degree_gap_dashboard, entropy_separated_sets,
    inverse_lyapunov, lyapunov_qr, mean_log_jacobian, sample_on_julia, CorrelationReport, DashboardInputs, LyapunovParams,
    LyapunovReport, TimeDirection,
};
use crate::geometry::{Domain, Shell};
use crate::green::{GreenParams, GreenSolver};
use crate::observables::Observable;
use crate::report::{Cell, ExperimentReport, Table};
use crate::structure::{certify_with_threshold, main_degree, StructureCertificate};
use crate::svg::{heatmap, LinePlot};
use crate::{invalid, par, rng, Error, MapSpec, Result, C64};
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    CheckStructure,
    Green,
    CurrentConverge,
    Measure,
    Lyapunov,
    Entropy,
    Mixing,
    Degrees,
    Dashboard,
}

impl Experiment {
    pub const ALL: [Experiment; 9] = [
        Experiment::CheckStructure,
        Experiment::Green,
        Experiment::CurrentConverge,
        Experiment::Measure,
        Experiment::Lyapunov,
        Experiment::Entropy,
        Experiment::Mixing,
        Experiment::Degrees,
        Experiment::Dashboard,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::CheckStructure => "check-structure",
            Experiment::Green => "green",
            Experiment::CurrentConverge => "current-converge",
            Experiment::Measure => "measure",
            Experiment::Lyapunov => "lyapunov",
            Experiment::Entropy => "entropy",
            Experiment::Mixing => "mixing",
            Experiment::Degrees => "degrees",
            Experiment::Dashboard => "dashboard",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown experiment {s:?}")))
    }
}

/// Everything an experiment produces.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub report: ExperimentReport,
    /// `(file stem, table)`, written as `<stem>.csv`.
    pub tables: Vec<(String, Table)>,
    /// `(file stem, document)`, written as `<stem>.svg`.
    pub plots: Vec<(String, String)>,
    /// `(file name, bytes)` written verbatim.
    pub files: Vec<(String, Vec<u8>)>,
}

impl Outcome {
    fn new(report: ExperimentReport) -> Self {
        Outcome { report, tables: Vec::new(), plots: Vec::new(), files: Vec::new() }
    }
}

pub fn run(exp: Experiment, cfg: &Config) -> Result<Outcome> {
    let m = cfg.map()?;
    let dom = cfg.domain_for(&m)?;
    let seed = cfg.seed()?;
    let mut out = match exp {
        Experiment::CheckStructure => check_structure(cfg, &m, &dom, seed)?,
        Experiment::Green => green(cfg, &m, &dom, seed)?,
        Experiment::CurrentConverge => current_converge(cfg, &m, &dom)?,
        Experiment::Measure => measure(cfg, &m, &dom)?,
        Experiment::Lyapunov => lyapunov(cfg, &m, &dom, seed)?.0,
        Experiment::Entropy => entropy(cfg, &m, &dom, seed)?,
        Experiment::Mixing => mixing(cfg, &m, &dom, seed)?.0,
        Experiment::Degrees => degrees(cfg, &m, &dom)?.0,
        Experiment::Dashboard => dashboard(cfg, &m, &dom, seed)?,
    };
    let r = &mut out.report;
    r.experiment = exp.name().into();
    r.map = m.describe();
    r.seed = seed;
    r.config = cfg.echo();
    Ok(out)
}

fn row(cells: impl IntoIterator<Item = Cell>) -> Vec<Cell> {
    cells.into_iter().collect()
}

fn coord_headers(k: usize) -> Vec<String> {
    (0..k).flat_map(|i| [format!("x{i}_re"), format!("x{i}_im")]).collect()
}

fn series_plot(title: &str, xlabel: &str, ylabel: &str, series: Vec<(String, Vec<(f64, f64)>)>) -> String {
    LinePlot { title, xlabel, ylabel, series }.render()
}

// ---------------------------------------------------------------- structure

fn certificate(cfg: &Config, m: &MapSpec, dom: &Domain, seed: u64) -> Result<StructureCertificate> {
    let samples = cfg.get_or("structure", "samples", 400_000usize)?;
    let threshold = cfg.get_or("structure", "threshold", 0.01 * dom.outer_radius())?;
    certify_with_threshold(m, dom, samples, seed, threshold)
}

fn check_structure(cfg: &Config, m: &MapSpec, dom: &Domain, seed: u64) -> Result<Outcome> {
    let c = certificate(cfg, m, dom, seed)?;
    let mut r = ExperimentReport::new("check-structure", "", seed);
    r.flag("horizontal_like", c.is_horizontal_like)
        .flag("sampled", c.sampled)
        .scalar("margin_v", c.margin_v)
        .scalar("margin_h", c.margin_h)
        .scalar("threshold", c.threshold)
        .scalar("samples_used", c.samples_used as f64)
        .scalar("samples_drawn", c.samples_drawn as f64)
        .opt_scalar("main_degree", c.main_degree.map(|d| d as f64));
    if c.is_horizontal_like {
        match MapSpec::iterate(m.clone(), 2).and_then(|f2| main_degree(&f2, dom)) {
            Ok(d2) => {
                r.scalar("main_degree_iterate2", d2 as f64);
            }
            Err(e) => {
                r.note("main_degree_iterate2", e.to_string());
            }
        }
    } else {
        r.mark_unreliable("graph conditions fail on the sampled points");
    }
    let mut t = Table::new(&["quantity", "value"]);
    t.push(row(["margin_v".into(), c.margin_v.into()]));
    t.push(row(["margin_h".into(), c.margin_h.into()]));
    t.push(row(["samples_used".into(), c.samples_used.into()]));
    t.push(row(["main_degree".into(), c.main_degree.map_or(Cell::Text(String::new()), |d| Cell::Int(d as i64))]));
    let mut out = Outcome::new(r);
    out.tables.push(("certificate".into(), t));
    Ok(out)
}

// ---------------------------------------------------------------- green

const SALT_GREEN_POINTS: u64 = 0x6EE7;

fn green(cfg: &Config, m: &MapSpec, dom: &Domain, seed: u64) -> Result<Outcome> {
    let count = cfg.get_or("green", "points", 10_000usize)?;
    let n_max = cfg.get_or("green", "n_max", 200u32)?;
    if count == 0 {
        return invalid("[green] points must be positive");
    }
    let params = GreenParams { n_max, r_esc: None };
    let plus = GreenSolver::plus(m)?;
    let minus = GreenSolver::minus(m).ok().filter(|s| s.tail_consistent());
    let k = m.k();
    let rows = par::map_indexed(count, |i| {
        let mut r = rng::stream(seed, SALT_GREEN_POINTS, i as u64);
        let x = dom.sample_interior(&mut r, Shell::Outer);
        let gp = plus.eval(&x, &params);
        let gpf = plus.eval(&m.eval(&x), &params);
        let gm = minus.as_ref().map(|s| (s.eval(&x, &params), m.eval_inverse(&x).ok().map(|y| s.eval(&y, &params))));
        (x, gp, gpf, gm)
    });
    let mut headers = coord_headers(k);
    headers.extend(["g_plus", "g_plus_error", "status_plus", "g_minus", "g_minus_error", "status_minus"].map(String::from));
    let mut table = Table { headers, rows: Vec::with_capacity(count) };
    let (mut escaped, mut bounded, mut truncated) = (0usize, 0usize, 0usize);
    let (mut inv_plus, mut inv_minus): (f64, f64) = (0.0, 0.0);
    let (mut viol_plus, mut viol_minus) = (0usize, 0usize);
    let mut max_err: f64 = 0.0;
    for (x, gp, gpf, gm) in rows {
        let gp = gp?;
        let gpf = gpf?;
        match gp.status_name() {
            "escaped" => escaped += 1,
            "bounded" => bounded += 1,
            _ => truncated += 1,
        }
        max_err = max_err.max(gp.error_bound);
        let defect = (gpf.value - plus.degree * gp.value).abs();
        let allowed = gpf.error_bound + plus.degree * gp.error_bound;
        inv_plus = inv_plus.max(defect - allowed);
        viol_plus += usize::from(defect > allowed);
        let mut cells: Vec<Cell> = x.0.iter().flat_map(|z| [Cell::Num(z.re), Cell::Num(z.im)]).collect();
        cells.extend([gp.value.into(), gp.error_bound.into(), gp.status_name().into()]);
        match gm {
            Some((Ok(g), Some(Ok(gy)))) => {
                let d = minus.as_ref().map_or(1.0, |s| s.degree);
                let defect = (gy.value - d * g.value).abs();
                let allowed = gy.error_bound + d * g.error_bound;
                inv_minus = inv_minus.max(defect - allowed);
                viol_minus += usize::from(defect > allowed);
                cells.extend([g.value.into(), g.error_bound.into(), g.status_name().into()]);
            }
            Some((Ok(g), _)) => cells.extend([g.value.into(), g.error_bound.into(), g.status_name().into()]),
            _ => cells.extend([Cell::Num(f64::NAN), Cell::Num(f64::NAN), "unavailable".into()]),
        }
        table.rows.push(cells);
    }
    let mut r = ExperimentReport::new("green", "", seed);
    r.scalar("points", count as f64)
        .scalar("escaped", escaped as f64)
        .scalar("bounded", bounded as f64)
        .scalar("truncated", truncated as f64)
        .scalar("escape_radius_plus", plus.escape_radius())
        .scalar("max_error_bound_plus", max_err)
        .scalar("invariance_excess_plus", inv_plus)
        .scalar("invariance_violations_plus", viol_plus as f64)
        .flag("invariance_plus", viol_plus == 0)
        .flag("tail_consistent_plus", plus.tail_consistent());
    match &minus {
        Some(_) => {
            r.scalar("invariance_excess_minus", inv_minus)
                .scalar("invariance_violations_minus", viol_minus as f64)
                .flag("invariance_minus", viol_minus == 0);
        }
        None => {
            r.note("g_minus", "backward Green function has no geometric tail for this map; not evaluated");
        }
    }
    if viol_plus > 0 || viol_minus > 0 {
        r.mark_unreliable("Green invariance exceeds the reported error bounds");
    }
    let mut out = Outcome::new(r);
    if k == 2 {
        let n = 96;
        let half = dom.m.radii[0];
        let vals = par::map_indexed(n * n, |i| {
            let (iy, ix) = (i / n, i % n);
            let z = C64::new(-half + 2.0 * half * (ix as f64 + 0.5) / n as f64, -half + 2.0 * half * (iy as f64 + 0.5) / n as f64);
            plus.eval(&[z, C64::new(0.0, 0.0)], &params).map_or(f64::NAN, |g| g.value)
        });
        out.plots.push(("g_plus_slice".into(), heatmap("G+ on the slice w = 0", n, n, &vals)));
    }
    out.tables.push(("green".into(), table));
    Ok(out)
}

// ---------------------------------------------------------------- currents

fn potential_by_name(name: &str) -> Result<Potential> {
    match name {
        "fubini_study" => Ok(Potential::fubini_study()),
        "log_plus" => Ok(Potential::log_plus()),
        "smooth_log_plus" => Ok(Potential::SmoothLogPlus { center: (0.1, 0.0), slope: (0.2, 0.0), radius: 1.0, width: 0.3 }),
        other => Err(Error::Config(format!("unknown potential {other:?}"))),
    }
}

/// Test forms used by `current-converge`: a bump off the unit circle and one across it.
pub fn default_test_forms() -> Vec<TestForm> {
    vec![
        TestForm { main: Bump::normalized((0.9, 0.3), 0.5), other: Bump::normalized((0.0, 0.0), 0.8) },
        TestForm { main: Bump::normalized((-0.4, 0.5), 0.6), other: Bump::normalized((0.1, 0.0), 0.8) },
    ]
}

fn current_converge(cfg: &Config, m: &MapSpec, dom: &Domain) -> Result<Outcome> {
    let nz = cfg.get_or("currents", "nz", 96usize)?;
    let nw = cfg.get_or("currents", "nw", 48usize)?;
    let n_max = cfg.get_or("currents", "n_max", 8usize)?;
    let names = cfg.list_or("currents", "potentials", vec!["fubini_study".to_string()])?;
    let spec = GridSpec::for_domain_with(dom, nz, nw)?;
    let u0: Vec<PotentialGrid> = names
        .iter()
        .map(|n| PotentialGrid::from_potential(Orientation::Vertical, spec, &potential_by_name(n)?))
        .collect::<Result<_>>()?;
    let forms = default_test_forms();
    let probe = convergence_rate_probe(m, &u0, &forms, n_max)?;
    let mut table = Table::new(&["n", "potential", "test_form", "pairing", "grid_error"]);
    for (ui, name) in names.iter().enumerate() {
        for pi in 0..forms.len() {
            for n in 0..=n_max {
                table.push(row([
                    n.into(),
                    name.as_str().into(),
                    pi.into(),
                    probe.pairings[ui][pi][n].into(),
                    probe.grid_error[ui][pi][n].into(),
                ]));
            }
        }
    }
    let series = names
        .iter()
        .enumerate()
        .flat_map(|(ui, name)| {
            let limits = &probe.limits[ui];
            let pr = &probe.pairings[ui];
            (0..forms.len()).map(move |pi| {
                let pts = pr[pi].iter().enumerate().map(|(n, a)| (n as f64, (a - limits[pi]).abs().max(1e-16).log10())).collect();
                (format!("{name} / form {pi}"), pts)
            })
        })
        .collect();
    let probe_finals = probe.finals;
    let mut out = Outcome::new(probe.report);
    out.plots.push(("pairing_convergence".into(), series_plot("log10 |a_n - a_inf|", "n", "log10 deviation", series)));
    out.tables.push(("pairings".into(), table));
    if cfg.get_or("currents", "snapshots", false)? {
        for (name, grid) in names.iter().zip(&probe_finals) {
            let mut bytes = Vec::with_capacity(8 * grid.values.len() + 64);
            grid.write_snapshot(&mut bytes).map_err(|e| Error::InvalidArgument(format!("snapshot: {e}")))?;
            out.files.push((format!("final_{name}.bin"), bytes));
            out.files.push((format!("final_{name}.json"), grid.sidecar_json().into_bytes()));
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------- measure

/// Grid equilibrium measure for `k = 2` maps and the two potentials it was
/// built from. Maps whose Green functions both have geometric tails use the
/// Green grids; otherwise `v` is the horizontal `log⁺` potential pushed
/// forward `iterations` times and `u` the vertical one pulled back.
pub struct GridEquilibrium {
    pub mu: MixedMeasure,
    pub u: PotentialGrid,
    pub v: PotentialGrid,
    pub provenance: String,
}

pub fn grid_equilibrium(m: &MapSpec, spec: GridSpec, iterations: usize) -> Result<GridEquilibrium> {
    if m.k() != 2 || m.p() != 1 {
        return Err(Error::Unsupported("grid equilibrium measures need k = 2, p = 1".into()));
    }
    let tails = GreenSolver::plus(m).is_ok_and(|s| s.tail_consistent()) && GreenSolver::minus(m).is_ok_and(|s| s.tail_consistent());
    if tails {
        let (mu, u, v) = green_equilibrium(m, spec)?;
        return Ok(GridEquilibrium { mu, u, v, provenance: "green".into() });
    }
    let mut u = PotentialGrid::from_potential(Orientation::Vertical, spec, &Potential::log_plus())?;
    let mut v = PotentialGrid::from_potential(Orientation::Horizontal, spec, &Potential::log_plus())?;
    for _ in 0..iterations {
        u = crate::currents::pullback_normalized(m, &u)?;
        v = pushforward_normalized(m, &v)?;
    }
    let mu = mixed_ma_measure(&u, &v)?;
    Ok(GridEquilibrium { mu, u, v, provenance: format!("iterated log_plus potentials, n = {iterations}") })
}

/// Ten smooth observables for the invariance probe.
pub fn invariance_observables() -> Vec<Observable> {
    let bump = |c: [(f64, f64); 2], r: f64| Observable::bump(&c.map(|p| C64::new(p.0, p.1)), r);
    vec![
        Observable::re(0, 2),
        Observable::im(0, 2),
        Observable::re(1, 2),
        Observable::im(1, 2),
        Observable::Monomial { index: 0, power: 2, coeff: (1.0, 0.0) },
        Observable::Monomial { index: 0, power: 2, coeff: (0.0, 1.0) },
        Observable::Monomial { index: 1, power: 2, coeff: (1.0, 0.0) },
        bump([(0.0, 0.0), (0.0, 0.0)], 2.0),
        bump([(1.0, 0.0), (1.0, 0.0)], 1.5),
        Observable::ModulusBump { index: 0, r0: 1.0, width: 0.8 },
    ]
}

fn measure_grid(cfg: &Config, dom: &Domain) -> Result<(GridSpec, usize)> {
    let nz = cfg.get_or("measure", "nz", 48usize)?;
    let nw = cfg.get_or("measure", "nw", 24usize)?;
    let it = cfg.get_or("measure", "iterations", 3usize)?;
    Ok((GridSpec::for_domain_with(dom, nz, nw)?, it))
}

fn measure(cfg: &Config, m: &MapSpec, dom: &Domain) -> Result<Outcome> {
    let (spec, iterations) = measure_grid(cfg, dom)?;
    let eq = grid_equilibrium(m, spec, iterations)?;
    let coarse = grid_equilibrium(m, spec.coarsened()?, iterations)?;
    let mu = &eq.mu.measure;
    let obs = invariance_observables();
    let fine: Vec<f64> = obs.iter().map(|o| mu.expect(o)).collect();
    let rough: Vec<f64> = obs.iter().map(|o| coarse.mu.measure.expect(o)).collect();
    let grid_errors: Vec<f64> = fine.iter().zip(&rough).map(|(a, b)| (a - b).abs()).collect();
    let grid_error = grid_errors.iter().copied().fold(0.0, f64::max);
    let defects = crate::equilibrium::invariance_defects(m, mu, &obs);
    let support = support_check(&eq.mu, &eq.u, &eq.v)?;
    let poles = [
        PoleProbe { label: "z".into(), coeffs: vec![(1.0, 0.0), (0.0, 0.0)], offset: (0.0, 0.0) },
        PoleProbe { label: "w".into(), coeffs: vec![(0.0, 0.0), (1.0, 0.0)], offset: (0.0, 0.0) },
        PoleProbe { label: "z-1".into(), coeffs: vec![(1.0, 0.0), (0.0, 0.0)], offset: (-1.0, 0.0) },
    ];
    let (_, pb) = pb_probe(mu, &poles)?;
    let mut r = ExperimentReport::new("measure", "", 0);
    r.note("potentials", eq.provenance.clone())
        .scalar("grid.nz", spec.nz as f64)
        .scalar("grid.nw", spec.nw as f64)
        .scalar("cells", mu.len() as f64)
        .scalar("total_mass_error", (mu.total_weight() - 1.0).abs())
        .scalar("raw_mass", eq.mu.raw_mass)
        .scalar("negative_fraction", eq.mu.negative_fraction)
        .scalar("cross_fraction", eq.mu.cross_fraction)
        .scalar("noise_level", eq.mu.noise_level)
        .scalar("mean_z_abs", mu.mean_coordinate(0).norm())
        .scalar("mean_w_abs", mu.mean_coordinate(1).norm())
        .scalar("mean_modulus_z", mu.expect(&Observable::Modulus { index: 0 }))
        .scalar("mean_modulus_w", mu.expect(&Observable::Modulus { index: 1 }))
        .series("invariance_defect", &defects)
        .series("grid_error", &grid_errors)
        .scalar("grid_error_estimate", grid_error)
        .flag("invariance_within_3x_grid_error", defects.iter().all(|d| *d <= 3.0 * grid_error))
        .scalar("support.eps_plus", support.eps_plus)
        .scalar("support.eps_minus", support.eps_minus)
        .scalar("support.cells_checked", support.cells_checked as f64)
        .scalar("support.cells_outside", support.cells_outside as f64)
        .scalar("support.mass_outside", support.mass_outside)
        .flag("support_within_one_cell", support.cells_outside == 0)
        .flag("reliable", eq.mu.reliable);
    for (j, o) in obs.iter().enumerate() {
        r.note(&format!("observable{j}"), o.name());
    }
    r.absorb("pb", &pb);
    if !eq.mu.reliable {
        r.mark_unreliable(format!("negative Monge–Ampère mass {:.3} exceeds 5% before clipping", eq.mu.negative_fraction));
    }
    let mut headers = coord_headers(2);
    headers.push("weight".into());
    let mut cloud = Table { headers, rows: Vec::with_capacity(mu.len()) };
    for (x, w) in mu.points.iter().zip(&mu.weights) {
        cloud.rows.push(vec![x[0].re.into(), x[0].im.into(), x[1].re.into(), x[1].im.into(), (*w).into()]);
    }
    let (sz, sw) = spec.plane_sizes();
    let mut marginal = vec![0.0; sz];
    for (node, w) in eq.mu.nodes.iter().zip(&mu.weights) {
        marginal[node / sw] += w;
    }
    // z nodes are stored real-part major; the heatmap wants rows of constant Im z.
    let n = spec.nz;
    let grid: Vec<f64> = (0..sz).map(|i| marginal[(i % n) * n + i / n]).collect();
    let mut out = Outcome::new(r);
    out.tables.push(("measure".into(), cloud));
    out.plots.push(("z_marginal".into(), heatmap("z-marginal of the equilibrium measure", n, n, &grid)));
    Ok(out)
}

/// Grid measure refined onto the Julia sets for forward (and optionally backward) orbits.
pub struct JuliaSamples {
    pub forward: SampleMeasure,
    pub backward: Option<SampleMeasure>,
    pub report: ExperimentReport,
}

pub fn julia_samples(cfg: &Config, m: &MapSpec, dom: &Domain, seed: u64, backward: bool) -> Result<JuliaSamples> {
    let (spec, iterations) = measure_grid(cfg, dom)?;
    let count = cfg.get_or("sample", "count", 10_000usize)?;
    let eq = grid_equilibrium(m, spec, iterations)?;
    let (fwd, sf) = sample_on_julia(m, dom, &eq.mu.measure, count, TimeDirection::Forward, seed)?;
    let mut r = ExperimentReport::new("sample", "", seed);
    r.note("potentials", eq.provenance)
        .scalar("measure.negative_fraction", eq.mu.negative_fraction)
        .scalar("sample.requested", sf.requested as f64)
        .scalar("sample.forward_accepted", sf.accepted as f64);
    let bwd = if backward {
        let (b, sb) = sample_on_julia(m, dom, &eq.mu.measure, count, TimeDirection::Backward, seed)?;
        r.scalar("sample.backward_accepted", sb.accepted as f64);
        Some(b)
    } else {
        None
    };
    if !eq.mu.reliable {
        r.note("measure_noise", "grid measure exceeds the 5% negative-mass level; samples are refined onto the Julia set regardless");
    }
    Ok(JuliaSamples { forward: fwd, backward: bwd, report: r })
}

// ---------------------------------------------------------------- ergodic

fn lyapunov(cfg: &Config, m: &MapSpec, dom: &Domain, seed: u64) -> Result<(Outcome, LyapunovReport)> {
    let s = julia_samples(cfg, m, dom, seed, true)?;
    let mut prm = LyapunovParams::new(cfg.get_or("lyapunov", "orbits", 100usize)?, cfg.get_or("lyapunov", "steps", 1000usize)?, seed);
    prm.mask_cell = cfg.get("lyapunov", "mask_cell")?;
    let fwd = lyapunov_qr(m, dom, &s.forward, &prm)?;
    let inv = inverse_lyapunov(m, dom, s.backward.as_ref().expect("backward sample requested"), &prm)?;
    let jac = mean_log_jacobian(m, &s.forward);
    let k = fwd.exponents.len();
    let mirrored: Vec<f64> = (0..k).map(|i| -inv.exponents[k - 1 - i]).collect();
    let tol = 2.0 * fwd.spread.max(inv.spread);
    let inverse_gap = fwd.exponents.iter().zip(&mirrored).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let sum: f64 = fwd.exponents.iter().sum();
    let mut r = ExperimentReport::new("lyapunov", "", seed);
    r.absorb("sampling", &s.report);
    r.absorb("forward", &fwd.report);
    r.absorb("inverse", &inv.report);
    r.series("exponents", &fwd.exponents)
        .series("inverse_exponents_mirrored", &mirrored)
        .scalar("spread", fwd.spread)
        .scalar("inverse_gap", inverse_gap)
        .flag("inverse_consistent", inverse_gap <= tol)
        .scalar("exponent_sum", sum)
        .scalar("mean_log_jacobian", jac)
        .flag("sum_rule_consistent", (sum - jac).abs() <= 2.0 * fwd.spread)
        .scalar("theorem_floor", fwd.theorem_floor)
        .scalar("theorem_ceiling_neg", fwd.theorem_ceiling_neg);
    let mut t = Table::new(&["index", "forward", "inverse_mirrored"]);
    for i in 0..k {
        t.push(row([i.into(), fwd.exponents[i].into(), mirrored[i].into()]));
    }
    let mut out = Outcome::new(r);
    out.tables.push(("exponents".into(), t));
    Ok((out, fwd))
}

fn entropy(cfg: &Config, m: &MapSpec, dom: &Domain, seed: u64) -> Result<Outcome> {
    let eps = cfg.get_or("entropy", "eps", 0.2)?;
    let n_list = cfg.list_or("entropy", "n_list", (1..=8).collect::<Vec<usize>>())?;
    let budget = cfg.get_or("entropy", "budget", 20_000usize)?;
    let sep = entropy_separated_sets(m, dom, eps, &n_list, budget, seed)?;
    let dir = default_bowen_direction(m);
    let s = julia_samples(cfg, m, dom, seed, dir == TimeDirection::Backward)?;
    let mu = match dir {
        TimeDirection::Forward => &s.forward,
        TimeDirection::Backward => s.backward.as_ref().expect("backward sample requested"),
    };
    let beps = cfg.get_or("bowen", "eps", 0.2)?;
    let bn = cfg.list_or("bowen", "n_list", (0..=6).collect::<Vec<usize>>())?;
    let centers = cfg.get_or("bowen", "centers", 400usize)?;
    let bowen = bowen_ball_mass(m, mu, beps, &bn, centers, dir, seed)?;
    let log_d = (m.main_degree() as f64).ln();
    let mut r = ExperimentReport::new("entropy", "", seed);
    r.absorb("sampling", &s.report);
    r.absorb("separated", &sep);
    r.absorb("bowen", &bowen);
    r.scalar("log_d", log_d);
    r.opt_scalar("h_separated", sep.get("h_separated"));
    r.opt_scalar("h_bowen", bowen.get("h_bowen"));
    let mut t = Table::new(&["method", "n", "value"]);
    let mut plot = Vec::new();
    let mut push = |method: &str, ns: &[usize], vals: Option<&Vec<Option<f64>>>, transform: fn(f64) -> f64| {
        let Some(vals) = vals else { return };
        let mut pts = Vec::new();
        for (n, v) in ns.iter().zip(vals) {
            let v = v.unwrap_or(f64::NAN);
            t.push(row([method.into(), (*n).into(), v.into()]));
            pts.push((*n as f64, transform(v)));
        }
        plot.push((method.to_string(), pts));
    };
    push("separated_log_count", &n_list, sep.series.get("count"), |c| c.max(1.0).ln());
    push("bowen_median_neg_log_mass", &bn, bowen.series.get("median_neg_log_mass"), |v| v);
    let mut out = Outcome::new(r);
    out.plots.push(("entropy".into(), series_plot("entropy growth", "n", "log count / -log mass", plot)));
    out.tables.push(("entropy".into(), t));
    Ok(out)
}

/// Parses `re:I`, `im:I`, `bump:R[:c0re,c0im,...]` (centre defaults to the
/// origin) and `modbump:I:R0:WIDTH`.
pub fn parse_observable(s: &str, k: usize) -> Result<Observable> {
    let bad = || Error::Config(format!("cannot parse observable {s:?}"));
    let parts: Vec<&str> = s.trim().split(':').collect();
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad());
    let idx = |t: &str| t.trim().parse::<usize>().ok().filter(|&i| i < k).ok_or_else(bad);
    match parts.as_slice() {
        ["re", i] => Ok(Observable::re(idx(i)?, k)),
        ["im", i] => Ok(Observable::im(idx(i)?, k)),
        ["bump", r] => Ok(Observable::bump(&vec![C64::new(0.0, 0.0); k], num(r)?)),
        ["bump", r, c] => {
            let v: Vec<f64> = c.split(',').map(num).collect::<Result<_>>()?;
            if v.len() != 2 * k {
                return Err(bad());
            }
            let centre: Vec<C64> = v.chunks(2).map(|p| C64::new(p[0], p[1])).collect();
            Ok(Observable::bump(&centre, num(r)?))
        }
        ["modbump", i, r0, w] => Ok(Observable::ModulusBump { index: idx(i)?, r0: num(r0)?, width: num(w)? }),
        _ => Err(bad()),
    }
}

fn mixing(cfg: &Config, m: &MapSpec, dom: &Domain, seed: u64) -> Result<(Outcome, CorrelationReport)> {
    let n_max = cfg.get_or("mixing", "n_max", 10usize)?;
    let k = m.k();
    let phi = parse_observable(cfg.raw("mixing", "phi").unwrap_or("bump:2"), k)?;
    let psi = parse_observable(cfg.raw("mixing", "psi").unwrap_or("bump:3"), k)?;
    let s = julia_samples(cfg, m, dom, seed, false)?;
    let c = correlation_decay(m, dom, &s.forward, &phi, &psi, n_max)?;
    let mut r = ExperimentReport::new("mixing", "", seed);
    r.absorb("sampling", &s.report);
    for (key, v) in &c.report.scalars {
        r.scalars.insert(key.clone(), *v);
    }
    for (key, v) in &c.report.series {
        r.series.insert(key.clone(), v.clone());
    }
    for (key, v) in &c.report.flags {
        r.flags.insert(key.clone(), *v);
    }
    for (key, v) in &c.report.notes {
        r.notes.insert(key.clone(), v.clone());
    }
    let mut t = Table::new(&["n", "correlation", "noise_floor"]);
    for (n, v) in c.correlations.iter().enumerate() {
        t.push(row([n.into(), (*v).into(), c.noise_floor.into()]));
    }
    let pts = c.correlations.iter().enumerate().map(|(n, v)| (n as f64, v.abs().max(1e-300).log10())).collect();
    let floor = (0..c.correlations.len()).map(|n| (n as f64, c.noise_floor.log10())).collect();
    let mut out = Outcome::new(r);
    out.plots.push(("correlations".into(), series_plot("log10 |I_n|", "n", "log10 |I_n|", vec![("|I_n|".into(), pts), ("noise floor".into(), floor)])));
    out.tables.push(("correlations".into(), t));
    Ok((out, c))
}

// ---------------------------------------------------------------- degrees

fn degrees(cfg: &Config, m: &MapSpec, dom: &Domain) -> Result<(Outcome, crate::degrees::DegreeSummary)> {
    let n_list = cfg.list_or("degrees", "n_list", (1..=8).collect::<Vec<usize>>())?;
    let prm = VolumeParams {
        tolerance: cfg.get_or("degrees", "tolerance", VolumeParams::default().tolerance)?,
        max_cells: cfg.get_or("degrees", "max_cells", VolumeParams::default().max_cells)?,
        ..VolumeParams::default()
    };
    let (k, p) = (m.k(), m.p());
    let offset = |len: usize| vec![C64::new(0.1, 0.05); len];
    let mut runs: Vec<VolumeGrowth> = Vec::new();
    for q in 1..=p {
        runs.push(volume_growth(m, dom, &DiscFamily::horizontal(dom, q, &offset(k - p))?, &n_list, &prm)?);
    }
    for q in 1..=k - p {
        runs.push(volume_growth(m, dom, &DiscFamily::vertical(dom, q, &offset(p))?, &n_list, &prm)?);
    }
    let summary = degree_summary(m, &runs)?;
    let log_d = (m.main_degree() as f64).ln();
    let mut r = ExperimentReport::new("degrees", "", 0);
    r.absorb("summary", &summary.report);
    r.scalar("d", summary.d)
        .scalar("delta_plus_hat", summary.delta_plus)
        .scalar("delta_minus_hat", summary.delta_minus)
        .scalar("margin", summary.margin)
        .flag("gap_holds", summary.gap_holds);
    let mut t = Table::new(&["direction", "q", "n", "log_volume"]);
    let mut plot = Vec::new();
    let mut control_ok = true;
    for g in &runs {
        let dir = if g.direction == TimeDirection::Forward { "forward" } else { "backward" };
        r.absorb("volume", &g.report);
        for (n, v) in g.n_list.iter().zip(&g.log_volume) {
            t.push(row([dir.into(), g.q.into(), (*n).into(), (*v).into()]));
        }
        plot.push((format!("{dir} q={}", g.q), g.n_list.iter().zip(&g.log_volume).map(|(n, v)| (*n as f64, *v)).collect()));
        let full = g.q == if g.direction == TimeDirection::Forward { p } else { k - p };
        if full {
            let slope = g.slope.unwrap_or(f64::NAN);
            r.scalar(&format!("control.{dir}.slope"), slope);
            control_ok &= (slope - log_d).abs() <= 0.1 * log_d;
        }
    }
    r.scalar("log_d", log_d).flag("control_matches_log_d", control_ok);
    // The observed growth rates in q, which need not be monotone.
    let mono = |dir: TimeDirection, top: usize| {
        let rates: Vec<f64> = std::iter::once(1.0)
            .chain((1..=top).filter_map(|q| runs.iter().find(|g| g.q == q && g.direction == dir).and_then(|g| g.delta_hat)))
            .collect();
        rates.windows(2).all(|w| w[1] >= w[0])
    };
    r.flag("observed_increasing.forward", mono(TimeDirection::Forward, p));
    r.flag("observed_increasing.backward", mono(TimeDirection::Backward, k - p));
    let mut out = Outcome::new(r);
    out.plots.push(("volume_growth".into(), series_plot("log volume of image discs", "n", "log volume", plot)));
    out.tables.push(("volumes".into(), t));
    Ok((out, summary))
}

fn dashboard(cfg: &Config, m: &MapSpec, dom: &Domain, seed: u64) -> Result<Outcome> {
    let cert = certificate(cfg, m, dom, seed)?;
    let mut r = ExperimentReport::new("dashboard", "", seed);
    r.flag("horizontal_like", cert.is_horizontal_like).opt_scalar("main_degree", cert.main_degree.map(|d| d as f64));
    let mut tables = Vec::new();
    let (deg, lyap, mix) = if cert.is_horizontal_like {
        let (dout, summary) = degrees(cfg, m, dom)?;
        let (lout, lrep) = lyapunov(cfg, m, dom, seed)?;
        let (mout, mrep) = mixing(cfg, m, dom, seed)?;
        r.absorb("degrees", &dout.report);
        r.absorb("lyapunov", &lout.report);
        r.absorb("mixing", &mout.report);
        for (name, o) in [("degrees", dout), ("lyapunov", lout), ("mixing", mout)] {
            tables.extend(o.tables.into_iter().map(|(stem, t)| (format!("{name}_{stem}"), t)));
        }
        (Some(summary), Some(lrep), Some(mrep))
    } else {
        (None, None, None)
    };
    let verdict = degree_gap_dashboard(
        m,
        &DashboardInputs { certified: cert.is_horizontal_like, degrees: deg.as_ref(), lyapunov: lyap.as_ref(), mixing: mix.as_ref() },
    );
    for (key, v) in &verdict.scalars {
        r.scalars.insert(key.clone(), *v);
    }
    for (key, v) in &verdict.series {
        r.series.insert(key.clone(), v.clone());
    }
    for (key, v) in &verdict.flags {
        r.flags.insert(key.clone(), *v);
    }
    for (key, v) in &verdict.notes {
        r.notes.insert(key.clone(), v.clone());
    }
    let mut out = Outcome::new(r);
    out.tables = tables;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn experiment_names_round_trip() {
        for e in Experiment::ALL {
            assert_eq!(e.name().parse::<Experiment>().unwrap(), e);
        }
        assert!("nope".parse::<Experiment>().is_err());
    }

    #[test]
    fn observable_syntax() {
        let x = [C64::new(0.5, 0.25), C64::new(-1.0, 2.0)];
        assert_eq!(parse_observable("re:1", 2).unwrap().eval(&x), -1.0);
        assert_eq!(parse_observable("im:0", 2).unwrap().eval(&x), 0.25);
        assert!(parse_observable("bump:2", 2).unwrap().eval(&[C64::new(0.0, 0.0); 2]) > 0.0);
        assert!(parse_observable("bump:1:0,0,0,0", 2).is_ok());
        assert!(parse_observable("bump:1:0,0", 2).is_err());
        assert!(parse_observable("re:5", 2).is_err());
        assert!(parse_observable("cosine:1", 2).is_err());
    }

    #[test]
    fn structure_run_reports_certificate() {
        let cfg = Config::parse("[run]\nseed = 3\n[map]\nkind = henon\n[structure]\nsamples = 20000\n").unwrap();
        let out = run(Experiment::CheckStructure, &cfg).unwrap();
        assert!(out.report.flags["horizontal_like"]);
        assert_eq!(out.report.get("main_degree"), Some(2.0));
        assert_eq!(out.report.get("main_degree_iterate2"), Some(4.0));
        assert_eq!(out.report.config["run"]["seed"], "3");
        assert!(!out.report.is_unreliable());
    }

    #[test]
    fn unsupported_measure_is_an_error() {
        let cfg = Config::parse("[run]\nseed = 3\n[map]\nkind = product_inverse\n").unwrap();
        assert!(run(Experiment::Measure, &cfg).is_err());
    }
}
