//! Potential grids for positive closed (1,1)-currents in `C²` with `p = 1`.
//!
//! A vertical current is stored through a potential `u(z, w)` that is
//! subharmonic in `z`; a horizontal one through a potential subharmonic in
//! `w`. The current itself is never differentiated during transport: the
//! normalized pull-back is the composition `d⁻¹·u∘f` and pairings move the
//! Laplacian onto the test form.

mod potential;
mod transport;

pub use potential::{Bump, Potential, TestForm, BUMP_INTEGRAL};
pub use transport::{
    convergence_rate_probe, positivity_forms, pullback_normalized, pullback_with_stats, pushforward_normalized,
    pushforward_with_stats, ConvergenceProbe, TransportStats,
};

use crate::geometry::Domain;
use crate::{invalid, par, Error, Result, C64};
use serde::Serialize;
use std::f64::consts::PI;
use std::io::{Read, Write};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    Vertical,
    Horizontal,
}

/// Node counts per real axis and half-widths of the square boxes in `z` and `w`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GridSpec {
    pub nz: usize,
    pub nw: usize,
    pub z_half: f64,
    pub w_half: f64,
}

impl GridSpec {
    pub fn new(nz: usize, nw: usize, z_half: f64, w_half: f64) -> Result<Self> {
        if nz < 8 || nw < 4 {
            return invalid(format!("grid needs nz >= 8 and nw >= 4, got {nz}x{nw}"));
        }
        if !(z_half > 0.0 && w_half > 0.0) {
            return invalid("box half-widths must be positive");
        }
        Ok(GridSpec { nz, nw, z_half, w_half })
    }

    /// Default lattice: 96² nodes in `z`, 48² in `w`, boxes 10% wider than the domain.
    pub fn for_domain(dom: &Domain) -> Result<Self> {
        Self::for_domain_with(dom, 96, 48)
    }

    pub fn for_domain_with(dom: &Domain, nz: usize, nw: usize) -> Result<Self> {
        if dom.k != 2 || dom.p != 1 {
            return Err(Error::Unsupported("potential grids need k = 2, p = 1".into()));
        }
        Self::new(nz, nw, 1.1 * dom.m.radii[0], 1.1 * dom.n.radii[0])
    }

    /// The same boxes with half as many nodes per axis.
    pub fn coarsened(&self) -> Result<Self> {
        Self::new(self.nz.div_ceil(2), self.nw.div_ceil(2), self.z_half, self.w_half)
    }

    pub fn hz(&self) -> f64 {
        2.0 * self.z_half / (self.nz - 1) as f64
    }

    pub fn hw(&self) -> f64 {
        2.0 * self.w_half / (self.nw - 1) as f64
    }

    pub fn len(&self) -> usize {
        self.nz * self.nz * self.nw * self.nw
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of `z` nodes (`nz²`) and of `w` nodes (`nw²`).
    pub fn plane_sizes(&self) -> (usize, usize) {
        (self.nz * self.nz, self.nw * self.nw)
    }

    pub fn z_node(&self, zi: usize) -> C64 {
        let h = self.hz();
        C64::new(-self.z_half + (zi / self.nz) as f64 * h, -self.z_half + (zi % self.nz) as f64 * h)
    }

    pub fn w_node(&self, wi: usize) -> C64 {
        let h = self.hw();
        C64::new(-self.w_half + (wi / self.nw) as f64 * h, -self.w_half + (wi % self.nw) as f64 * h)
    }

    /// Coordinates of the node with flat index `idx`.
    pub fn node(&self, idx: usize) -> (C64, C64) {
        let sw = self.nw * self.nw;
        (self.z_node(idx / sw), self.w_node(idx % sw))
    }

    /// Index of the `w` node nearest to `w`, if `w` lies in the box.
    pub fn nearest_w(&self, w: C64) -> Option<usize> {
        let h = self.hw();
        let r = ((w.re + self.w_half) / h).round();
        let i = ((w.im + self.w_half) / h).round();
        let n = self.nw as f64;
        (r >= 0.0 && i >= 0.0 && r < n && i < n).then(|| r as usize * self.nw + i as usize)
    }

    pub fn nearest_z(&self, z: C64) -> Option<usize> {
        let h = self.hz();
        let r = ((z.re + self.z_half) / h).round();
        let i = ((z.im + self.z_half) / h).round();
        let n = self.nz as f64;
        (r >= 0.0 && i >= 0.0 && r < n && i < n).then(|| r as usize * self.nz + i as usize)
    }
}

#[inline]
fn locate(x: f64, half: f64, h: f64, n: usize) -> (usize, f64) {
    let t = ((x + half) / h).clamp(0.0, (n - 1) as f64);
    let i = (t.floor() as usize).min(n - 2);
    (i, t - i as f64)
}

#[inline]
fn in_square(x: C64, half: f64) -> bool {
    x.re.abs() <= half && x.im.abs() <= half
}

#[inline]
fn clamp_square(x: C64, half: f64) -> C64 {
    C64::new(x.re.clamp(-half, half), x.im.clamp(-half, half))
}

/// Where a lookup landed relative to the box.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Lookup {
    Inside,
    /// The main coordinate left the box; the logarithmic extension was used.
    Extended,
    /// The transverse coordinate left the box by more than 10% and was clamped.
    FarOutside,
}

/// Discretized potential on the lattice described by [`GridSpec`].
///
/// Values are stored with flat index `zi·nw² + wi` where
/// `zi = i_re·nz + i_im` and `wi = j_re·nw + j_im`.
#[derive(Clone, Debug)]
pub struct PotentialGrid {
    pub orientation: Orientation,
    pub spec: GridSpec,
    pub values: Vec<f64>,
    /// Target slice mass.
    pub mass: f64,
    pub provenance: String,
    /// Per transverse node: Fourier coefficients `c_0, c_{-1}, …, c_{-K}` of
    /// the potential on the rim circle.
    rim: Vec<C64>,
    /// Highest rim mode whose coefficient exceeds `1e-9` at some node.
    rim_modes: usize,
}

const RIM_MODES: usize = 32;
const RIM_SAMPLES: usize = 128;

/// Result of [`slice_mass`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SliceMass {
    pub mass: f64,
    /// Share of the mass carried by the three rings of nodes next to the contour.
    pub contour_fraction: f64,
    pub reliable: bool,
}

impl PotentialGrid {
    pub fn from_fn<F>(orientation: Orientation, spec: GridSpec, mass: f64, provenance: &str, f: F) -> Result<Self>
    where
        F: Fn(C64, C64) -> f64 + Sync + Send,
    {
        let sw = spec.nw * spec.nw;
        let mut values = vec![0.0; spec.len()];
        par::for_each_chunk(&mut values, sw, |zi, row| {
            let z = spec.z_node(zi);
            for (wi, v) in row.iter_mut().enumerate() {
                *v = f(z, spec.w_node(wi));
            }
        });
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            let (z, w) = spec.node(i);
            return invalid(format!("potential is not finite at node ({z}, {w})"));
        }
        Ok(Self::assemble(orientation, spec, values, mass, provenance))
    }

    /// Wraps finished node values and prepares the exterior extension.
    pub fn assemble(orientation: Orientation, spec: GridSpec, values: Vec<f64>, mass: f64, provenance: &str) -> Self {
        let mut g = PotentialGrid { orientation, spec, values, mass, provenance: provenance.into(), rim: Vec::new(), rim_modes: 0 };
        g.rim = g.rim_coefficients();
        g.rim_modes = g
            .rim
            .chunks(RIM_MODES + 1)
            .map(|c| (1..=RIM_MODES).rev().find(|&k| c[k].norm() > 1e-9).unwrap_or(0))
            .max()
            .unwrap_or(0);
        g
    }

    fn rim_radius(&self) -> f64 {
        let (half, h) = self.main_half();
        half - h
    }

    fn other_nodes(&self) -> (usize, f64, f64) {
        match self.orientation {
            Orientation::Vertical => (self.spec.nw, self.spec.w_half, self.spec.hw()),
            Orientation::Horizontal => (self.spec.nz, self.spec.z_half, self.spec.hz()),
        }
    }

    fn rim_coefficients(&self) -> Vec<C64> {
        let rho = self.rim_radius();
        let (n, half, h) = self.other_nodes();
        let roots: Vec<C64> = (0..RIM_SAMPLES).map(|j| C64::from_polar(1.0, 2.0 * PI * j as f64 / RIM_SAMPLES as f64)).collect();
        let per_node = par::map_indexed(n * n, |oi| {
            let other = C64::new(-half + (oi / n) as f64 * h, -half + (oi % n) as f64 * h);
            let samples: Vec<f64> = roots.iter().map(|&e| self.eval_oriented(e * rho, other)).collect();
            (0..=RIM_MODES)
                .map(|k| {
                    let mut acc = C64::new(0.0, 0.0);
                    for (j, v) in samples.iter().enumerate() {
                        acc += roots[(j * k) % RIM_SAMPLES] * v;
                    }
                    acc / RIM_SAMPLES as f64
                })
                .collect::<Vec<C64>>()
        });
        per_node.into_iter().flatten().collect()
    }

    /// Exterior harmonic continuation `c_0 + 2 Re Σ c_{-k} (ρ/ζ)^k + mass·log(|ζ|/ρ)`
    /// of the rim values, with coefficients interpolated in the transverse variable.
    fn exterior(&self, main: C64, other: C64) -> f64 {
        let rho = self.rim_radius();
        let (n, half, h) = self.other_nodes();
        let (c, tc) = locate(other.re, half, h, n);
        let (d, td) = locate(other.im, half, h, n);
        let weights = [((c, d), (1.0 - tc) * (1.0 - td)), ((c, d + 1), (1.0 - tc) * td), ((c + 1, d), tc * (1.0 - td)), ((c + 1, d + 1), tc * td)];
        let r2 = main.norm_sqr();
        let q = rho * main.conj() / r2;
        let q_abs = rho / r2.sqrt();
        let needed = (-21.0 / q_abs.ln()).ceil();
        let modes = if needed.is_finite() && needed >= 0.0 { (needed as usize).min(self.rim_modes) } else { self.rim_modes };
        let mut coef = [C64::new(0.0, 0.0); RIM_MODES + 1];
        for ((a, b), wgt) in weights {
            if wgt == 0.0 {
                continue;
            }
            let base = (a * n + b) * (RIM_MODES + 1);
            for (cf, r) in coef[..=modes].iter_mut().zip(&self.rim[base..=base + modes]) {
                *cf += r * wgt;
            }
        }
        let mut acc = C64::new(0.0, 0.0);
        for cf in coef[1..=modes].iter().rev() {
            acc = (acc + cf) * q;
        }
        coef[0].re + 2.0 * acc.re + self.mass * 0.5 * (r2 / (rho * rho)).ln()
    }

    pub fn from_potential(orientation: Orientation, spec: GridSpec, p: &Potential) -> Result<Self> {
        Self::from_fn(orientation, spec, p.mass(), &p.name(), |z, w| match orientation {
            Orientation::Vertical => p.eval(z, w),
            Orientation::Horizontal => p.eval(w, z),
        })
    }

    fn main_half(&self) -> (f64, f64) {
        match self.orientation {
            Orientation::Vertical => (self.spec.z_half, self.spec.hz()),
            Orientation::Horizontal => (self.spec.w_half, self.spec.hw()),
        }
    }

    /// Quadrilinear interpolation; coordinates outside the box are clamped.
    pub fn interpolate(&self, z: C64, w: C64) -> f64 {
        let s = &self.spec;
        let (hz, hw) = (s.hz(), s.hw());
        let (a, ta) = locate(z.re, s.z_half, hz, s.nz);
        let (b, tb) = locate(z.im, s.z_half, hz, s.nz);
        let (c, tc) = locate(w.re, s.w_half, hw, s.nw);
        let (d, td) = locate(w.im, s.w_half, hw, s.nw);
        let sw = s.nw * s.nw;
        let wa = [1.0 - ta, ta];
        let wb = [1.0 - tb, tb];
        let wc = [1.0 - tc, tc];
        let wd = [1.0 - td, td];
        let mut acc = 0.0;
        for (da, &fa) in wa.iter().enumerate() {
            for (db, &fb) in wb.iter().enumerate() {
                let fab = fa * fb;
                if fab == 0.0 {
                    continue;
                }
                let base = ((a + da) * s.nz + b + db) * sw;
                for (dc, &fc) in wc.iter().enumerate() {
                    let row = base + (c + dc) * s.nw + d;
                    acc += fab * fc * (wd[0] * self.values[row] + wd[1] * self.values[row + 1]);
                }
            }
        }
        acc
    }

    /// Evaluates the potential anywhere in `C²`.
    ///
    /// Outside the rim circle (one cell inside the inscribed disc of the main
    /// square) the potential is continued by the harmonic function with the
    /// rim values and growth `mass·log|ζ|`. This is exact whenever the slice
    /// Laplacian is supported inside the rim. The transverse coordinate is clamped.
    pub fn lookup(&self, z: C64, w: C64) -> (f64, Lookup) {
        let (main, other, other_half) = match self.orientation {
            Orientation::Vertical => (z, w, self.spec.w_half),
            Orientation::Horizontal => (w, z, self.spec.z_half),
        };
        let far = !in_square(other, 1.1 * other_half);
        let other = clamp_square(other, other_half);
        let rho = self.rim_radius();
        let (value, status) = if main.norm_sqr() <= rho * rho {
            (self.eval_oriented(main, other), Lookup::Inside)
        } else {
            (self.exterior(main, other), Lookup::Extended)
        };
        (value, if far { Lookup::FarOutside } else { status })
    }

    pub fn eval(&self, z: C64, w: C64) -> f64 {
        self.lookup(z, w).0
    }

    fn eval_oriented(&self, main: C64, other: C64) -> f64 {
        match self.orientation {
            Orientation::Vertical => self.interpolate(main, other),
            Orientation::Horizontal => self.interpolate(other, main),
        }
    }

    /// Value at the node `(zi, wi)`.
    #[inline]
    pub fn at(&self, zi: usize, wi: usize) -> f64 {
        self.values[zi * self.spec.nw * self.spec.nw + wi]
    }

    /// Five-point sum `Σ neighbours − 4u` in the main variable (that is `h²Δu`),
    /// for a node that is not on the edge of the main square.
    fn main_second_difference(&self, zi: usize, wi: usize) -> f64 {
        let s = &self.spec;
        match self.orientation {
            Orientation::Vertical => {
                let n = s.nz;
                self.at(zi + n, wi) + self.at(zi - n, wi) + self.at(zi + 1, wi) + self.at(zi - 1, wi) - 4.0 * self.at(zi, wi)
            }
            Orientation::Horizontal => {
                let n = s.nw;
                self.at(zi, wi + n) + self.at(zi, wi - n) + self.at(zi, wi + 1) + self.at(zi, wi - 1) - 4.0 * self.at(zi, wi)
            }
        }
    }

    /// Smallest `h²Δu` over all nodes interior to the main square; the
    /// positivity tolerance is `−1e-6`.
    pub fn min_slice_laplacian(&self) -> f64 {
        let s = self.spec;
        let (nzp, nwp) = s.plane_sizes();
        let (n_main, n_other) = match self.orientation {
            Orientation::Vertical => (s.nz, nwp),
            Orientation::Horizontal => (s.nw, nzp),
        };
        let mins = par::map_indexed(n_main * n_main, |mi| {
            let (r, i) = (mi / n_main, mi % n_main);
            if r == 0 || i == 0 || r + 1 == n_main || i + 1 == n_main {
                return f64::INFINITY;
            }
            (0..n_other)
                .map(|oi| match self.orientation {
                    Orientation::Vertical => self.main_second_difference(mi, oi),
                    Orientation::Horizontal => self.main_second_difference(oi, mi),
                })
                .fold(f64::INFINITY, f64::min)
        });
        mins.into_iter().fold(f64::INFINITY, f64::min)
    }

    /// Sup-norm distance to another grid on the same lattice.
    pub fn sup_distance(&self, other: &PotentialGrid) -> Result<f64> {
        if self.spec != other.spec {
            return invalid("grids live on different lattices");
        }
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }

    /// Pointwise linear combination `a·self + b·other`.
    pub fn combine(&self, a: f64, other: &PotentialGrid, b: f64) -> Result<PotentialGrid> {
        if self.spec != other.spec || self.orientation != other.orientation {
            return invalid("grids live on different lattices");
        }
        let values = self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect();
        let provenance = format!("{a}*[{}] + {b}*[{}]", self.provenance, other.provenance);
        Ok(Self::assemble(self.orientation, self.spec, values, a * self.mass + b * other.mass, &provenance))
    }

    /// Writes the flat binary snapshot: an 8-byte magic, the orientation,
    /// node counts, box half-widths and mass, then the values, all little-endian.
    pub fn write_snapshot<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(SNAPSHOT_MAGIC)?;
        out.write_all(&(self.orientation as u64).to_le_bytes())?;
        out.write_all(&(self.spec.nz as u64).to_le_bytes())?;
        out.write_all(&(self.spec.nw as u64).to_le_bytes())?;
        for x in [self.spec.z_half, self.spec.w_half, self.mass] {
            out.write_all(&x.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(8 * 4096);
        for chunk in self.values.chunks(4096) {
            buf.clear();
            for v in chunk {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            out.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut input: R) -> Result<PotentialGrid> {
        let io = |e: std::io::Error| Error::InvalidArgument(format!("snapshot: {e}"));
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic).map_err(io)?;
        if &magic != SNAPSHOT_MAGIC {
            return invalid("snapshot: bad magic");
        }
        let mut word = [0u8; 8];
        let mut next = |input: &mut R| -> Result<[u8; 8]> {
            input.read_exact(&mut word).map_err(io)?;
            Ok(word)
        };
        let orientation = match u64::from_le_bytes(next(&mut input)?) {
            0 => Orientation::Vertical,
            1 => Orientation::Horizontal,
            o => return invalid(format!("snapshot: unknown orientation {o}")),
        };
        let nz = u64::from_le_bytes(next(&mut input)?) as usize;
        let nw = u64::from_le_bytes(next(&mut input)?) as usize;
        let z_half = f64::from_le_bytes(next(&mut input)?);
        let w_half = f64::from_le_bytes(next(&mut input)?);
        let mass = f64::from_le_bytes(next(&mut input)?);
        let spec = GridSpec::new(nz, nw, z_half, w_half)?;
        let mut bytes = vec![0u8; spec.len() * 8];
        input.read_exact(&mut bytes).map_err(io)?;
        let values = bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        Ok(Self::assemble(orientation, spec, values, mass, "snapshot"))
    }

    /// JSON sidecar describing a snapshot.
    pub fn sidecar_json(&self) -> String {
        let meta = serde_json::json!({
            "format": "HZPOTGRD",
            "byte_order": "little_endian",
            "value_type": "f64",
            "layout": "index = ((z_re*nz + z_im)*nw + w_re)*nw + w_im",
            "orientation": self.orientation,
            "nz": self.spec.nz,
            "nw": self.spec.nw,
            "z_box": [-self.spec.z_half, self.spec.z_half],
            "w_box": [-self.spec.w_half, self.spec.w_half],
            "mass": self.mass,
            "provenance": self.provenance,
        });
        serde_json::to_string_pretty(&meta).expect("sidecar serializes")
    }
}

const SNAPSHOT_MAGIC: &[u8; 8] = b"HZPOTGRD";

/// Width in nodes of the frame left between the contour and the box edge.
const CONTOUR_INSET: usize = 2;

/// Slice mass `(1/2π)∫ Δ_z u(·, w0)` of a vertical grid, computed as the
/// flux of the discrete gradient through a square contour two cells inside
/// the box (discrete divergence theorem).
pub fn slice_mass(g: &PotentialGrid, w0: C64) -> Result<SliceMass> {
    if g.orientation != Orientation::Vertical {
        return invalid("slice_mass needs a vertical grid");
    }
    let s = &g.spec;
    let wi = s.nearest_w(w0).ok_or_else(|| Error::InvalidArgument(format!("w0 = {w0} is outside the grid box")))?;
    let (r, i) = (wi / s.nw, wi % s.nw);
    if r == 0 || i == 0 || r + 1 == s.nw || i + 1 == s.nw {
        return invalid("w0 must be an interior grid node");
    }
    slice_mass_at(g, wi)
}

fn slice_mass_at(g: &PotentialGrid, oi: usize) -> Result<SliceMass> {
    let s = &g.spec;
    let n = match g.orientation {
        Orientation::Vertical => s.nz,
        Orientation::Horizontal => s.nw,
    };
    let lo = CONTOUR_INSET + 1;
    let hi = n - 2 - CONTOUR_INSET;
    if hi <= lo + 6 {
        return Err(Error::Resolution("grid too small for the slice contour".into()));
    }
    let mut total = Vec::new();
    let mut band = Vec::new();
    for a in lo..=hi {
        for b in lo..=hi {
            let mi = a * n + b;
            let v = match g.orientation {
                Orientation::Vertical => g.main_second_difference(mi, oi),
                Orientation::Horizontal => g.main_second_difference(oi, mi),
            };
            total.push(v);
            let ring = (a - lo).min(b - lo).min(hi - a).min(hi - b);
            if ring < 3 {
                band.push(v);
            }
        }
    }
    let mass = par::ksum(total) / (2.0 * PI);
    let band_mass = par::ksum(band) / (2.0 * PI);
    let contour_fraction = band_mass.abs() / mass.abs().max(1e-3);
    Ok(SliceMass { mass, contour_fraction, reliable: contour_fraction <= 0.02 })
}

/// Slice mass of a horizontal grid at `z0` (the mirror of [`slice_mass`]).
pub fn horizontal_slice_mass(g: &PotentialGrid, z0: C64) -> Result<SliceMass> {
    if g.orientation != Orientation::Horizontal {
        return invalid("horizontal_slice_mass needs a horizontal grid");
    }
    let s = &g.spec;
    let zi = s.nearest_z(z0).ok_or_else(|| Error::InvalidArgument(format!("z0 = {z0} is outside the grid box")))?;
    let (r, i) = (zi / s.nz, zi % s.nz);
    if r == 0 || i == 0 || r + 1 == s.nz || i + 1 == s.nz {
        return invalid("z0 must be an interior grid node");
    }
    slice_mass_at(g, zi)
}

/// Slice masses at a fixed set of transverse probe points (the centre and
/// four points at half the box), used to check mass preservation.
pub fn probe_slice_masses(g: &PotentialGrid) -> Result<Vec<SliceMass>> {
    let half = match g.orientation {
        Orientation::Vertical => g.spec.w_half,
        Orientation::Horizontal => g.spec.z_half,
    };
    let pts = [C64::new(0.0, 0.0), C64::new(0.5 * half, 0.0), C64::new(-0.5 * half, 0.0), C64::new(0.0, 0.5 * half), C64::new(0.0, -0.5 * half)];
    pts.iter()
        .map(|&p| match g.orientation {
            Orientation::Vertical => slice_mass(g, p),
            Orientation::Horizontal => horizontal_slice_mass(g, p),
        })
        .collect()
}

/// `⟨dd^c u, φ⟩ = (1/2π) Σ u · Δφ_main · φ_other · h_z² h_w²`.
pub fn pair_with_test_form(g: &PotentialGrid, phi: &TestForm) -> Result<f64> {
    let s = &g.spec;
    let (main_half, other_half) = match g.orientation {
        Orientation::Vertical => (s.z_half, s.w_half),
        Orientation::Horizontal => (s.w_half, s.z_half),
    };
    if !phi.main.inside_square(main_half) || !phi.other.inside_square(other_half) {
        return invalid("test form support exceeds the grid box");
    }
    let (nzp, nwp) = s.plane_sizes();
    let zw: Vec<f64>;
    let ww: Vec<f64>;
    match g.orientation {
        Orientation::Vertical => {
            zw = (0..nzp).map(|zi| phi.main.value_laplacian(s.z_node(zi)).1).collect();
            ww = (0..nwp).map(|wi| phi.other.value(s.w_node(wi))).collect();
        }
        Orientation::Horizontal => {
            zw = (0..nzp).map(|zi| phi.other.value(s.z_node(zi))).collect();
            ww = (0..nwp).map(|wi| phi.main.value_laplacian(s.w_node(wi)).1).collect();
        }
    }
    let rows = par::map_indexed(nzp, |zi| {
        if zw[zi] == 0.0 {
            return 0.0;
        }
        let row = &g.values[zi * nwp..(zi + 1) * nwp];
        zw[zi] * par::ksum(row.iter().zip(&ww).map(|(u, b)| u * b))
    });
    let (hz, hw) = (s.hz(), s.hw());
    Ok(par::ksum(rows) * hz * hz * hw * hw / (2.0 * PI))
}

/// `‖dd^c φ‖_{L¹}`, the Lipschitz constant of the pairing in the sup-norm of `u`,
/// evaluated with the same quadrature.
pub fn test_form_l1(spec: &GridSpec, orientation: Orientation, phi: &TestForm) -> f64 {
    let (nzp, nwp) = spec.plane_sizes();
    let (hz, hw) = (spec.hz(), spec.hw());
    let z_nodes = (0..nzp).map(|i| spec.z_node(i));
    let w_nodes = (0..nwp).map(|i| spec.w_node(i));
    let (a, b) = match orientation {
        Orientation::Vertical => (
            par::ksum(z_nodes.map(|z| phi.main.value_laplacian(z).1.abs())) * hz * hz,
            par::ksum(w_nodes.map(|w| phi.other.value(w).abs())) * hw * hw,
        ),
        Orientation::Horizontal => (
            par::ksum(w_nodes.map(|w| phi.main.value_laplacian(w).1.abs())) * hw * hw,
            par::ksum(z_nodes.map(|z| phi.other.value(z).abs())) * hz * hz,
        ),
    };
    a * b / (2.0 * PI)
}
