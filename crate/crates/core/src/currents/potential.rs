//! Closed-form initial potentials and smooth test forms.

use crate::C64;
use serde::Serialize;
use std::f64::consts::PI;

/// Plurisubharmonic potential of a vertical (or horizontal) current of slice
/// mass 1. `ζ = main − center − slope·other`, where `main` is `z` for vertical
/// and `w` for horizontal orientation.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Potential {
    Zero,
    /// `log max(|ζ|, 1)`
    LogPlus { center: (f64, f64), slope: (f64, f64) },
    /// `½ log(1 + |ζ|²)`
    FubiniStudy { center: (f64, f64), slope: (f64, f64) },
    /// `ψ(log|ζ|)` with `ψ` a smooth convex version of `max(·, log r)` that
    /// differs from it only for `|log|ζ| − log r| < width`.
    SmoothLogPlus { center: (f64, f64), slope: (f64, f64), radius: f64, width: f64 },
    /// `log|ζ|` (the current of integration on `ζ = 0`)
    Log { center: (f64, f64), slope: (f64, f64) },
}

fn c(p: (f64, f64)) -> C64 {
    C64::new(p.0, p.1)
}

impl Potential {
    pub fn log_plus() -> Self {
        Potential::LogPlus { center: (0.0, 0.0), slope: (0.0, 0.0) }
    }

    pub fn fubini_study() -> Self {
        Potential::FubiniStudy { center: (0.0, 0.0), slope: (0.0, 0.0) }
    }

    pub fn name(&self) -> String {
        match self {
            Potential::Zero => "zero".into(),
            Potential::LogPlus { center, slope } => format!("log_plus(c={center:?}, s={slope:?})"),
            Potential::FubiniStudy { center, slope } => format!("fubini_study(c={center:?}, s={slope:?})"),
            Potential::SmoothLogPlus { center, slope, radius, width } => {
                format!("smooth_log_plus(c={center:?}, s={slope:?}, r={radius}, width={width})")
            }
            Potential::Log { center, slope } => format!("log(c={center:?}, s={slope:?})"),
        }
    }

    /// Slice mass of `dd^c` of the potential (1 except for `Zero`).
    pub fn mass(&self) -> f64 {
        if matches!(self, Potential::Zero) {
            0.0
        } else {
            1.0
        }
    }

    pub fn eval(&self, main: C64, other: C64) -> f64 {
        match *self {
            Potential::Zero => 0.0,
            Potential::LogPlus { center, slope } => (main - c(center) - c(slope) * other).norm().ln().max(0.0),
            Potential::FubiniStudy { center, slope } => 0.5 * (main - c(center) - c(slope) * other).norm_sqr().ln_1p(),
            Potential::SmoothLogPlus { center, slope, radius, width } => {
                let t = (main - c(center) - c(slope) * other).norm().ln();
                smooth_max(t, radius.ln(), width)
            }
            Potential::Log { center, slope } => (main - c(center) - c(slope) * other).norm().ln(),
        }
    }
}

/// `C³` convex smoothing of `max(t, t0)` on `|t − t0| < δ`.
fn smooth_max(t: f64, t0: f64, delta: f64) -> f64 {
    let s = t - t0;
    if s <= -delta {
        t0
    } else if s >= delta {
        t
    } else {
        let x = s / delta;
        let x2 = x * x;
        t0 + delta * (15.0 / 16.0) * (x2 / 2.0 - x2 * x2 / 6.0 + x2 * x2 * x2 / 30.0 + 8.0 * x / 15.0 + 1.0 / 6.0)
    }
}

/// `∫₀¹ exp(−1/(1−s)) ds`
pub const BUMP_INTEGRAL: f64 = 0.148_495_506_775_922_05;

/// `A · β(|ζ−c|²/ρ²) · (α + βx·Re(ζ−c) + βy·Im(ζ−c))` with `β(s) = exp(−1/(1−s))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Bump {
    pub center: (f64, f64),
    pub radius: f64,
    pub amplitude: f64,
    pub linear: (f64, f64, f64),
}

impl Bump {
    /// Radial bump with unit integral over `C`.
    pub fn normalized(center: (f64, f64), radius: f64) -> Self {
        Bump { center, radius, amplitude: 1.0 / (PI * radius * radius * BUMP_INTEGRAL), linear: (1.0, 0.0, 0.0) }
    }

    pub fn with_linear(mut self, alpha: f64, bx: f64, by: f64) -> Self {
        self.linear = (alpha, bx, by);
        self
    }

    /// Returns `(value, Laplacian)` at `ζ`.
    pub fn value_laplacian(&self, zeta: C64) -> (f64, f64) {
        let (dx, dy) = (zeta.re - self.center.0, zeta.im - self.center.1);
        let r2 = self.radius * self.radius;
        let s = (dx * dx + dy * dy) / r2;
        if s >= 1.0 {
            return (0.0, 0.0);
        }
        let q = 1.0 / (1.0 - s);
        let b = (-q).exp();
        let b1 = -q * q * b;
        let b2 = (q * q * q * q - 2.0 * q * q * q) * b;
        let lap_b = 4.0 / r2 * (s * b2 + b1);
        let (a, bx, by) = self.linear;
        let p = a + bx * dx + by * dy;
        let grad_dot = 2.0 * b1 / r2 * (bx * dx + by * dy);
        (self.amplitude * b * p, self.amplitude * (p * lap_b + 2.0 * grad_dot))
    }

    pub fn value(&self, zeta: C64) -> f64 {
        self.value_laplacian(zeta).0
    }

    /// Whether the support lies inside the square `|Re|, |Im| < half`.
    pub fn inside_square(&self, half: f64) -> bool {
        self.center.0.abs() + self.radius < half && self.center.1.abs() + self.radius < half
    }
}

/// Product test form `φ_main(main) · φ_other(other)`; the Laplacian acts on the main factor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TestForm {
    pub main: Bump,
    pub other: Bump,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bump_integral_constant() {
        let n = 200_000;
        let h = 1.0 / n as f64;
        let s: f64 = (0..n)
            .map(|i| {
                let t = (i as f64 + 0.5) * h;
                (-1.0 / (1.0 - t)).exp()
            })
            .sum::<f64>()
            * h;
        assert!((s - BUMP_INTEGRAL).abs() < 1e-9);
    }

    #[test]
    fn bump_laplacian_matches_finite_differences() {
        let b = Bump::normalized((0.2, -0.1), 0.9).with_linear(1.0, 0.3, -0.4);
        let z = C64::new(0.5, 0.2);
        let h = 1e-4;
        let f = |d: C64| b.value(z + d);
        let fd = (f(C64::new(h, 0.0)) + f(C64::new(-h, 0.0)) + f(C64::new(0.0, h)) + f(C64::new(0.0, -h)) - 4.0 * f(C64::new(0.0, 0.0))) / (h * h);
        let (_, lap) = b.value_laplacian(z);
        assert!((fd - lap).abs() < 1e-5 * lap.abs().max(1.0), "{fd} vs {lap}");
    }

    #[test]
    fn smooth_log_plus_is_continuous_and_matches_outside() {
        let p = Potential::SmoothLogPlus { center: (0.0, 0.0), slope: (0.0, 0.0), radius: 1.0, width: 0.2 };
        let lo = (-0.2f64).exp();
        let hi = (0.2f64).exp();
        assert!((p.eval(C64::new(lo, 0.0), C64::new(0.0, 0.0)) - 0.0).abs() < 1e-14);
        assert!((p.eval(C64::new(hi, 0.0), C64::new(0.0, 0.0)) - 0.2).abs() < 1e-14);
        assert_eq!(p.eval(C64::new(2.0, 0.0), C64::new(0.0, 0.0)), 2f64.ln());
    }
}
