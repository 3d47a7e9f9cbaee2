//! Strict INI-style experiment configuration.
//!
//! Grammar: `[section]` headers followed by `key = value` lines; `#` and `;`
//! start comments; lists are comma-separated. Every key must belong to a
//! section, appear at most once, and be listed in [`SCHEMA`]. `[run] seed`
//! is mandatory.

use crate::geometry::{Domain, Factor, Shape, Shell};
use crate::maps::{default_polynomial_terms, Henon, MapSpec, Poly, RegularAuto};
use crate::{Error, Result, C64};
use ini::{Ini, ParseOption};
use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

/// Allowed keys per section.
pub const SCHEMA: &[(&str, &[&str])] = &[
    ("run", &["seed", "workers"]),
    ("map", &["kind", "c", "c_im", "a", "degree", "eps"]),
    ("domain", &["shape", "r", "r_prime", "r_second"]),
    ("structure", &["samples", "threshold"]),
    ("green", &["points", "n_max"]),
    ("currents", &["nz", "nw", "n_max", "potentials", "snapshots"]),
    ("measure", &["nz", "nw", "iterations"]),
    ("sample", &["count"]),
    ("lyapunov", &["orbits", "steps", "mask_cell"]),
    ("entropy", &["eps", "n_list", "budget"]),
    ("bowen", &["eps", "n_list", "centers"]),
    ("mixing", &["n_max", "phi", "psi"]),
    ("degrees", &["n_list", "tolerance", "max_cells"]),
];

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    values: BTreeMap<String, BTreeMap<String, String>>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let opt = ParseOption { enabled_quote: false, enabled_escape: false, ..Default::default() };
        let ini = Ini::load_from_str_opt(text, opt).map_err(|e| cfg_err(format!("parse error: {e}")))?;
        for line in text.lines().map(str::trim) {
            if !(line.is_empty() || line.starts_with(['#', ';', '[']) || line.contains('=')) {
                return Err(cfg_err(format!("malformed line: {line:?}")));
            }
        }
        let mut values: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        for (section, props) in ini.iter() {
            let Some(section) = section else {
                if let Some((k, _)) = props.iter().next() {
                    return Err(cfg_err(format!("key {k:?} outside any section")));
                }
                continue;
            };
            let allowed = SCHEMA
                .iter()
                .find(|(s, _)| *s == section)
                .map(|(_, keys)| *keys)
                .ok_or_else(|| cfg_err(format!("unknown section [{section}]")))?;
            let entry = values.entry(section.to_string()).or_default();
            for (k, v) in props.iter() {
                if !allowed.contains(&k) {
                    return Err(cfg_err(format!("unknown key {k:?} in [{section}]")));
                }
                if entry.insert(k.to_string(), v.trim().to_string()).is_some() {
                    return Err(cfg_err(format!("duplicate key {k:?} in [{section}]")));
                }
            }
        }
        let cfg = Config { values };
        cfg.seed()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| cfg_err(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn seed(&self) -> Result<u64> {
        self.get::<u64>("run", "seed")?.ok_or_else(|| cfg_err("missing [run] seed"))
    }

    /// Overrides or inserts a value (used by command-line flags).
    pub fn set(&mut self, section: &str, key: &str, value: &str) {
        self.values.entry(section.into()).or_default().insert(key.into(), value.into());
    }

    pub fn raw(&self, section: &str, key: &str) -> Option<&str> {
        self.values.get(section)?.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<T>> {
        self.raw(section, key)
            .map(|v| v.parse::<T>().map_err(|_| cfg_err(format!("[{section}] {key} = {v:?} does not parse"))))
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, section: &str, key: &str, default: T) -> Result<T> {
        Ok(self.get(section, key)?.unwrap_or(default))
    }

    pub fn list<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<Vec<T>>> {
        self.raw(section, key)
            .map(|v| {
                v.split(',')
                    .map(|s| s.trim().parse::<T>().map_err(|_| cfg_err(format!("[{section}] {key}: bad list item {s:?}"))))
                    .collect()
            })
            .transpose()
    }

    pub fn list_or<T: FromStr>(&self, section: &str, key: &str, default: Vec<T>) -> Result<Vec<T>> {
        Ok(self.list(section, key)?.unwrap_or(default))
    }

    /// All values, for echoing into reports.
    pub fn echo(&self) -> BTreeMap<String, BTreeMap<String, String>> {
        self.values.clone()
    }

    /// The map named by `[map] kind`.
    pub fn map(&self) -> Result<MapSpec> {
        let kind = self.raw("map", "kind").ok_or_else(|| cfg_err("missing [map] kind"))?;
        let c = C64::new(self.get_or("map", "c", 0.0)?, self.get_or("map", "c_im", 0.0)?);
        let a: f64 = self.get_or("map", "a", 0.5)?;
        let degree: usize = self.get_or("map", "degree", 2)?;
        let henon = || -> Result<MapSpec> {
            if degree < 2 {
                return Err(cfg_err("[map] degree must be at least 2"));
            }
            let mut coeffs = vec![C64::new(0.0, 0.0); degree + 1];
            coeffs[0] = c;
            coeffs[degree] = C64::new(1.0, 0.0);
            Ok(MapSpec::Henon(Henon::new(Poly::new(coeffs), C64::new(a, 0.0))?))
        };
        match kind {
            "henon" => henon(),
            "decoupled" => Ok(MapSpec::decoupled_model()),
            "regular_auto" => Ok(MapSpec::RegularAuto(RegularAuto::shift_square(a)?)),
            "product_inverse" => {
                let f = henon()?;
                Ok(MapSpec::product(f.clone(), f.inverse()))
            }
            "perturbed" => {
                let f = henon()?;
                let eps: f64 = self.get_or("map", "eps", 1e-3)?;
                let dom = self.domain_for(&f)?;
                MapSpec::perturbed(f, default_polynomial_terms(2), eps, &dom)
            }
            other => Err(cfg_err(format!("unsupported map kind {other:?}"))),
        }
    }

    /// `[domain]` sized for `m`: a polydisc (default) or ball pair of radius `r`.
    pub fn domain_for(&self, m: &MapSpec) -> Result<Domain> {
        let (k, p) = (m.k(), m.p());
        let r: f64 = self.get_or("domain", "r", 2.0)?;
        let shape = match self.raw("domain", "shape").unwrap_or("polydisc") {
            "polydisc" => Shape::Polydisc,
            "ball" => Shape::Ball,
            s => return Err(cfg_err(format!("unknown domain shape {s:?}"))),
        };
        let r1: f64 = self.get_or("domain", "r_prime", 0.9 * r)?;
        let r2: f64 = self.get_or("domain", "r_second", 0.8 * r)?;
        let dom = Domain::new(Factor::new(p, shape, [r, r1, r2])?, Factor::new(k - p, shape, [r, r1, r2])?)?;
        debug_assert!(dom.m.radius(Shell::Second) == r2);
        Ok(dom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const OK: &str = "[run]\nseed = 7\n\n[map]\nkind = henon\nc = 0.0\na = 0.5\n\n[entropy]\nn_list = 1, 2, 3\n";

    #[test]
    fn parses_typed_values_and_lists() {
        let c = Config::parse(OK).unwrap();
        assert_eq!(c.seed().unwrap(), 7);
        assert_eq!(c.list::<usize>("entropy", "n_list").unwrap().unwrap(), vec![1, 2, 3]);
        assert_eq!(c.get_or("lyapunov", "orbits", 30usize).unwrap(), 30);
        assert_eq!(c.map().unwrap().main_degree(), 2);
        assert_eq!(c.domain_for(&c.map().unwrap()).unwrap().m.radii[0], 2.0);
    }

    #[test]
    fn strictness() {
        assert!(Config::parse("[map]\nkind = henon\n").is_err(), "missing seed");
        assert!(Config::parse("[run]\nseed = 1\nbogus = 2\n").is_err(), "unknown key");
        assert!(Config::parse("[run]\nseed = 1\n[nowhere]\nx = 1\n").is_err(), "unknown section");
        assert!(Config::parse("seed = 1\n").is_err(), "key outside section");
        assert!(Config::parse("[run]\nseed = 1\nseed = 2\n").is_err(), "duplicate");
        assert!(Config::parse("[run]\nseed = 1\njust words\n").is_err(), "malformed");
        assert!(Config::parse("[run]\nseed = x\n").is_err(), "bad seed");
        let c = Config::parse("[run]\nseed = 1\n[map]\nkind = mystery\n").unwrap();
        assert!(c.map().is_err());
    }
}
