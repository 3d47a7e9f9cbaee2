//! Normalized transport of potentials and the convergence-rate probe.

use super::{pair_with_test_form, Bump, probe_slice_masses, GridSpec, Lookup, Orientation, PotentialGrid, TestForm};
use crate::fit::fit_line;
use crate::maps::MapSpec;
use crate::report::ExperimentReport;
use crate::{invalid, par, Error, Result, C64};
use serde::Serialize;

/// Where the transported nodes landed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct TransportStats {
    pub nodes: usize,
    /// Lookups continued by the logarithmic extension.
    pub extended: usize,
    /// Lookups whose transverse coordinate left the box by more than 10%.
    pub far_outside: usize,
}

impl TransportStats {
    pub fn far_fraction(&self) -> f64 {
        self.far_outside as f64 / self.nodes.max(1) as f64
    }
}

fn check_map(m: &MapSpec) -> Result<f64> {
    if m.k() != 2 || m.p() != 1 {
        return Err(Error::Unsupported(format!("grid transport needs k = 2, p = 1, got {}", m.describe())));
    }
    Ok(m.main_degree() as f64)
}

fn transport<F>(g: &PotentialGrid, d: f64, label: &str, eval_node: F) -> Result<(PotentialGrid, TransportStats)>
where
    F: Fn(C64, C64) -> Result<(f64, usize, usize)> + Sync + Send,
{
    let s = g.spec;
    let (nzp, nwp) = s.plane_sizes();
    let rows = par::map_indexed(nzp, |zi| -> Result<(Vec<f64>, usize, usize)> {
        let z = s.z_node(zi);
        let mut row = Vec::with_capacity(nwp);
        let (mut ext, mut far) = (0, 0);
        for wi in 0..nwp {
            let (v, e, f) = eval_node(z, s.w_node(wi))?;
            if !v.is_finite() {
                return Err(Error::Resolution(format!("transported potential is not finite at ({z}, {})", s.w_node(wi))));
            }
            row.push(v / d);
            ext += e;
            far += f;
        }
        Ok((row, ext, far))
    });
    let mut values = Vec::with_capacity(s.len());
    let mut stats = TransportStats { nodes: s.len(), ..Default::default() };
    for r in rows {
        let (row, e, f) = r?;
        values.extend_from_slice(&row);
        stats.extended += e;
        stats.far_outside += f;
    }
    if stats.far_fraction() > 0.05 {
        return Err(Error::Resolution(format!(
            "{:.1}% of transported nodes fall far outside the sampling box",
            100.0 * stats.far_fraction()
        )));
    }
    let out = PotentialGrid::assemble(g.orientation, s, values, g.mass, &format!("{label}({})", g.provenance));
    Ok((out, stats))
}

fn tally(l: Lookup) -> (usize, usize) {
    match l {
        Lookup::Inside => (0, 0),
        Lookup::Extended => (1, 0),
        Lookup::FarOutside => (0, 1),
    }
}

/// `L u = d⁻¹·u∘f` on a vertical grid.
pub fn pullback_normalized(m: &MapSpec, g: &PotentialGrid) -> Result<PotentialGrid> {
    pullback_with_stats(m, g).map(|r| r.0)
}

pub fn pullback_with_stats(m: &MapSpec, g: &PotentialGrid) -> Result<(PotentialGrid, TransportStats)> {
    let d = check_map(m)?;
    if g.orientation != Orientation::Vertical {
        return invalid("pull-back acts on vertical grids");
    }
    transport(g, d, "L", |z, w| {
        let y = m.eval(&[z, w]);
        let (v, l) = g.lookup(y[0], y[1]);
        let (e, f) = tally(l);
        Ok((v, e, f))
    })
}

/// `d⁻¹·Σ_b v∘f_b⁻¹` over all inverse branches, on a horizontal grid.
pub fn pushforward_normalized(m: &MapSpec, g: &PotentialGrid) -> Result<PotentialGrid> {
    pushforward_with_stats(m, g).map(|r| r.0)
}

pub fn pushforward_with_stats(m: &MapSpec, g: &PotentialGrid) -> Result<(PotentialGrid, TransportStats)> {
    let d = check_map(m)?;
    if g.orientation != Orientation::Horizontal {
        return invalid("push-forward acts on horizontal grids");
    }
    transport(g, d, "L-", |z, w| {
        let mut acc = 0.0;
        let (mut e, mut f) = (0, 0);
        for x in m.eval_inverse_branches(&[z, w])? {
            let (v, l) = g.lookup(x[0], x[1]);
            let (de, df) = tally(l);
            acc += v;
            e += de;
            f += df;
        }
        Ok((acc, e.min(1), f.min(1)))
    })
}

/// Outcome of [`convergence_rate_probe`]; indices are `[potential][test form][n]`.
#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceProbe {
    pub pairings: Vec<Vec<Vec<f64>>>,
    pub coarse_pairings: Vec<Vec<Vec<f64>>>,
    /// `|aₙ(h) − aₙ(2h)|`
    pub grid_error: Vec<Vec<Vec<f64>>>,
    pub limits: Vec<Vec<f64>>,
    pub rates: Vec<Vec<Option<f64>>>,
    pub fit_r2: Vec<Vec<Option<f64>>>,
    /// Per `n`: max over test forms and pairs of potentials of `|aₙ(u) − aₙ(u′)|`.
    pub cross_difference: Vec<f64>,
    /// Per `n`: max over potentials and test forms of the grid error.
    pub grid_error_max: Vec<f64>,
    /// Per potential and `n`: smallest probed slice mass relative to the target.
    pub mass_ratio_min: Vec<Vec<f64>>,
    pub mass_ratio_max: Vec<Vec<f64>>,
    /// Per potential and `n`: smallest node value of `h²Δu` on slices.
    pub min_laplacian: Vec<Vec<f64>>,
    /// Per potential and `n`: smallest pairing with a fixed family of
    /// nonnegative bumps (positivity of the current in the weak sense).
    pub min_weak_positivity: Vec<Vec<f64>>,
    /// Final iterate for each initial potential.
    #[serde(skip)]
    pub finals: Vec<PotentialGrid>,
    pub resolution_limited: bool,
    pub report: ExperimentReport,
}

/// Aitken extrapolation from the last three terms; falls back to the last term.
fn aitken_limit(a: &[f64]) -> f64 {
    let n = a.len();
    if n < 3 {
        return *a.last().unwrap_or(&f64::NAN);
    }
    let (x0, x1, x2) = (a[n - 3], a[n - 2], a[n - 1]);
    let d1 = x1 - x0;
    let d2 = x2 - x1;
    let denom = d2 - d1;
    let ratio = d2 / d1;
    if d1 == 0.0 || denom == 0.0 || !(0.0..1.0).contains(&ratio.abs()) || ratio < 0.0 && ratio.abs() > 0.9 {
        return x2;
    }
    x2 - d2 * d2 / denom
}

struct Fitted {
    limit: f64,
    rate: Option<f64>,
    r2: Option<f64>,
    resolution_limited: bool,
}

fn fit_rate(a: &[f64], err: &[f64]) -> Fitted {
    let limit = aitken_limit(a);
    let floor = 1e-9 * limit.abs().max(1.0);
    let last_fit = a.len().saturating_sub(2);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (n, v) in a.iter().enumerate().take(last_fit) {
        let e = (v - limit).abs();
        if e <= floor {
            break;
        }
        xs.push(n as f64);
        ys.push(e.ln());
    }
    let line = (xs.len() >= 2).then(|| fit_line(&xs, &ys)).flatten();
    let dev: Vec<f64> = a.iter().map(|v| (v - limit).abs()).collect();
    let tail_start = xs.len();
    let resolution_limited = (tail_start.max(1)..a.len()).any(|n| dev[n] - dev[n - 1] > err[n].max(floor));
    Fitted {
        limit,
        rate: line.map(|l| (-l.slope).exp()),
        r2: line.map(|l| l.r2),
        resolution_limited,
    }
}

/// Iterates `L` (vertical grids) or the normalized push-forward (horizontal
/// grids) `n_max` times from each initial grid, pairs every iterate with every
/// test form, and fits `|aₙ − a_∞| ≈ A λ⁻ⁿ`.
///
/// The grid-error estimate repeats the iteration on the lattice with half as
/// many nodes per axis, seeded with the fine initial grid interpolated there.
pub fn convergence_rate_probe(m: &MapSpec, u0_list: &[PotentialGrid], phi_list: &[TestForm], n_max: usize) -> Result<ConvergenceProbe> {
    check_map(m)?;
    if u0_list.is_empty() || phi_list.is_empty() {
        return invalid("need at least one initial potential and one test form");
    }
    if n_max == 0 || n_max > 12 {
        return invalid(format!("n_max must be in 1..=12, got {n_max}"));
    }
    let orientation = u0_list[0].orientation;
    if u0_list.iter().any(|u| u.orientation != orientation || u.spec != u0_list[0].spec) {
        return invalid("initial potentials must share orientation and lattice");
    }
    let step = |g: &PotentialGrid| match orientation {
        Orientation::Vertical => pullback_normalized(m, g),
        Orientation::Horizontal => pushforward_normalized(m, g),
    };
    let coarse_spec = u0_list[0].spec.coarsened()?;
    let nu = u0_list.len();
    let np = phi_list.len();
    let mut pairings = vec![vec![Vec::with_capacity(n_max + 1); np]; nu];
    let mut coarse_pairings = pairings.clone();
    let mut mass_ratio_min = vec![Vec::new(); nu];
    let mut mass_ratio_max = vec![Vec::new(); nu];
    let mut min_laplacian = vec![Vec::new(); nu];
    let mut min_weak_positivity = vec![Vec::new(); nu];
    let mut finals = Vec::with_capacity(nu);
    let probes = positivity_forms(&u0_list[0]);
    for (ui, u0) in u0_list.iter().enumerate() {
        let mut g = u0.clone();
        let mut gc = coarse_copy(u0, coarse_spec)?;
        for n in 0..=n_max {
            if n > 0 {
                g = step(&g)?;
                gc = step(&gc)?;
            }
            for (pi, phi) in phi_list.iter().enumerate() {
                pairings[ui][pi].push(pair_with_test_form(&g, phi)?);
                coarse_pairings[ui][pi].push(pair_with_test_form(&gc, phi)?);
            }
            let masses = probe_slice_masses(&g)?;
            let ratios: Vec<f64> = masses.iter().map(|s| s.mass / g.mass).collect();
            mass_ratio_min[ui].push(ratios.iter().copied().fold(f64::INFINITY, f64::min));
            mass_ratio_max[ui].push(ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max));
            min_laplacian[ui].push(g.min_slice_laplacian());
            let mut weak = f64::INFINITY;
            for phi in &probes {
                weak = weak.min(pair_with_test_form(&g, phi)?);
            }
            min_weak_positivity[ui].push(weak);
        }
        finals.push(g);
    }
    let grid_error: Vec<Vec<Vec<f64>>> = (0..nu)
        .map(|ui| {
            (0..np)
                .map(|pi| pairings[ui][pi].iter().zip(&coarse_pairings[ui][pi]).map(|(a, b)| (a - b).abs()).collect())
                .collect()
        })
        .collect();
    let mut limits = vec![vec![0.0; np]; nu];
    let mut rates = vec![vec![None; np]; nu];
    let mut fit_r2 = vec![vec![None; np]; nu];
    let mut resolution_limited = false;
    for ui in 0..nu {
        for pi in 0..np {
            let f = fit_rate(&pairings[ui][pi], &grid_error[ui][pi]);
            limits[ui][pi] = f.limit;
            rates[ui][pi] = f.rate;
            fit_r2[ui][pi] = f.r2;
            resolution_limited |= f.resolution_limited;
        }
    }
    let cross_difference: Vec<f64> = (0..=n_max)
        .map(|n| {
            let mut best: f64 = 0.0;
            for pi in 0..np {
                for a in 0..nu {
                    for b in a + 1..nu {
                        best = best.max((pairings[a][pi][n] - pairings[b][pi][n]).abs());
                    }
                }
            }
            best
        })
        .collect();
    let grid_error_max: Vec<f64> = (0..=n_max)
        .map(|n| grid_error.iter().flatten().map(|e| e[n]).fold(0.0, f64::max))
        .collect();

    let mut report = ExperimentReport::new("current-converge", &m.describe(), 0);
    report.scalar("n_max", n_max as f64);
    report.scalar("grid.nz", u0_list[0].spec.nz as f64);
    report.scalar("grid.nw", u0_list[0].spec.nw as f64);
    for ui in 0..nu {
        report.note(&format!("u{ui}"), u0_list[ui].provenance.clone());
        for pi in 0..np {
            let key = format!("u{ui}.phi{pi}");
            report.series(&format!("pairing.{key}"), &pairings[ui][pi]);
            report.series(&format!("grid_error.{key}"), &grid_error[ui][pi]);
            report.scalar(&format!("limit.{key}"), limits[ui][pi]);
            report.opt_scalar(&format!("lambda_hat.{key}"), rates[ui][pi]);
            report.opt_scalar(&format!("fit_r2.{key}"), fit_r2[ui][pi]);
        }
        report.series(&format!("mass_ratio_min.u{ui}"), &mass_ratio_min[ui]);
        report.series(&format!("mass_ratio_max.u{ui}"), &mass_ratio_max[ui]);
        report.series(&format!("min_laplacian.u{ui}"), &min_laplacian[ui]);
        report.series(&format!("min_weak_positivity.u{ui}"), &min_weak_positivity[ui]);
    }
    report.series("cross_difference", &cross_difference);
    report.series("grid_error_max", &grid_error_max);
    let last = n_max;
    report.scalar("cross_difference.final", cross_difference[last]);
    report.scalar("grid_error.final", grid_error_max[last]);
    if nu > 1 {
        report.flag("unique_limit_consistent", cross_difference[last] <= 10.0 * grid_error_max[last]);
    }
    report.flag("resolution_limited", resolution_limited);
    if resolution_limited {
        report.note("resolution", "pairing tail is non-monotone beyond the grid-error estimate");
    }
    Ok(ConvergenceProbe {
        pairings,
        coarse_pairings,
        grid_error,
        limits,
        rates,
        fit_r2,
        cross_difference,
        grid_error_max,
        mass_ratio_min,
        mass_ratio_max,
        min_laplacian,
        min_weak_positivity,
        finals,
        resolution_limited,
        report,
    })
}

/// Nonnegative radial bumps spread over the inner half of both boxes.
pub fn positivity_forms(g: &PotentialGrid) -> Vec<TestForm> {
    let (main_half, other_half) = match g.orientation {
        Orientation::Vertical => (g.spec.z_half, g.spec.w_half),
        Orientation::Horizontal => (g.spec.w_half, g.spec.z_half),
    };
    let r = 0.3 * main_half;
    let ro = 0.3 * other_half;
    let mut out = Vec::new();
    for (cx, cy) in [(0.0, 0.0), (0.5, 0.0), (-0.5, 0.0), (0.0, 0.5), (0.0, -0.5), (0.35, 0.35)] {
        let other = Bump::normalized((0.2 * cx * other_half, 0.2 * cy * other_half), ro);
        out.push(TestForm { main: Bump::normalized((cx * main_half, cy * main_half), r), other });
    }
    out
}

fn coarse_copy(g: &PotentialGrid, spec: GridSpec) -> Result<PotentialGrid> {
    let mut c = PotentialGrid::from_fn(g.orientation, spec, g.mass, &g.provenance, |z, w| g.interpolate(z, w))?;
    c.provenance = format!("coarse({})", g.provenance);
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::currents::{slice_mass, Potential};

    fn spec() -> GridSpec {
        GridSpec::new(64, 12, 2.2, 2.2).unwrap()
    }

    #[test]
    fn log_plus_is_fixed_by_decoupled_pullback() {
        let g = PotentialGrid::from_potential(Orientation::Vertical, spec(), &Potential::log_plus()).unwrap();
        let (l, stats) = pullback_with_stats(&MapSpec::decoupled_model(), &g).unwrap();
        assert_eq!(stats.far_outside, 0);
        assert!(stats.extended > 0);
        let h = spec().hz();
        assert!(l.sup_distance(&g).unwrap() < h, "{}", l.sup_distance(&g).unwrap());
    }

    #[test]
    fn smooth_potential_keeps_slice_mass_under_henon() {
        let p = Potential::SmoothLogPlus { center: (0.1, 0.0), slope: (0.0, 0.0), radius: 1.0, width: 0.3 };
        let g = PotentialGrid::from_potential(Orientation::Vertical, spec(), &p).unwrap();
        let l = pullback_normalized(&MapSpec::henon_quadratic(0.0, 0.5), &g).unwrap();
        for w0 in [C64::new(0.0, 0.0), C64::new(0.7, -0.3)] {
            let m = slice_mass(&l, w0).unwrap();
            assert!((m.mass - 1.0).abs() < 0.02, "{m:?}");
        }
    }

    #[test]
    fn pushforward_of_decoupled_model_concentrates_on_w_zero() {
        let g = PotentialGrid::from_potential(Orientation::Horizontal, spec(), &Potential::log_plus()).unwrap();
        let m = MapSpec::decoupled_model();
        let mut cur = g;
        for _ in 0..3 {
            cur = pushforward_normalized(&m, &cur).unwrap();
        }
        let target = |w: C64| (64.0 * w.norm()).ln().max(0.0);
        let s = spec();
        let err = (0..s.len())
            .step_by(97)
            .map(|i| {
                let (_, w) = s.node(i);
                (cur.values[i] - target(w)).abs()
            })
            .fold(0.0, f64::max);
        assert!(err < 0.05, "{err}");
    }

    #[test]
    fn aitken_recovers_geometric_limit() {
        let a: Vec<f64> = (0..8).map(|n| 1.5 + 0.3 * 0.25f64.powi(n)).collect();
        assert!((aitken_limit(&a) - 1.5).abs() < 1e-12);
        let f = fit_rate(&a, &[0.0; 8]);
        assert!((f.rate.unwrap() - 4.0).abs() < 1e-6);
        assert!(!f.resolution_limited);
    }

    #[test]
    fn probe_rejects_bad_arguments() {
        let g = PotentialGrid::from_potential(Orientation::Vertical, spec(), &Potential::log_plus()).unwrap();
        let phi = TestForm { main: Bump::normalized((0.0, 0.0), 1.5), other: Bump::normalized((0.0, 0.0), 1.0) };
        let m = MapSpec::decoupled_model();
        assert!(convergence_rate_probe(&m, &[g.clone()], &[phi], 13).is_err());
        assert!(convergence_rate_probe(&m, &[], &[phi], 3).is_err());
        assert!(convergence_rate_probe(&MapSpec::product(m.clone(), m.clone()), &[g], &[phi], 3).is_err());
    }
}
