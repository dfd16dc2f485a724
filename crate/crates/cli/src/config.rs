//! Run configuration: defaults, then a flat `key = value` file, then flag
//! overrides, applied in that order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use visitpat::appropagation::{ApParams, PreferenceMode};
use visitpat::patterns::Grouping;
use visitpat::synth::{ModeSpec, SynthParams};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub delta_s: u32,
    /// When set, preprocess estimates delta from the gap quantile instead.
    pub delta_quantile: Option<f64>,
    pub delta_per_subject: bool,
    pub lambda_s: u32,
    pub omega_s: u32,
    pub omegas: Vec<u32>,
    pub alpha: usize,
    pub preference_mode: PreferenceMode,
    pub damping: f64,
    pub max_iter: usize,
    pub stable_iters: usize,
    pub seed: u64,
    /// Unit-interval windows `[le, ri)`; empty means the full day.
    pub windows: Vec<(usize, usize)>,
    pub grouping: Grouping,
    pub utc_offset_s: i32,
    pub beta: f64,
    pub normalize: bool,
    pub synth_n: usize,
    pub synth_p: f64,
    pub synth_sigma: f64,
    pub synth_len: usize,
    /// `(start, end, weight)` in units; empty means the built-in modes.
    pub synth_modes: Vec<(f64, f64, f64)>,
    /// Column mapping keys (`col.*`), passed to the trace parser.
    pub columns: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            delta_s: 900,
            delta_quantile: None,
            delta_per_subject: false,
            lambda_s: 450,
            omega_s: 1800,
            omegas: vec![900, 1800, 2700, 3600],
            alpha: 3,
            preference_mode: PreferenceMode::Minimizing,
            damping: 0.9,
            max_iter: 1000,
            stable_iters: 50,
            seed: 0,
            windows: Vec::new(),
            grouping: Grouping::Pooled,
            utc_offset_s: 0,
            beta: 2.0,
            normalize: true,
            synth_n: 1000,
            synth_p: 0.2,
            synth_sigma: 4.0 / 3.0,
            synth_len: 192,
            synth_modes: Vec::new(),
            columns: BTreeMap::new(),
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.parse()
        .map_err(|_| CliError::Input(format!("config `{key}`: cannot parse `{v}`")))
}

fn flag(key: &str, v: &str) -> Result<bool, CliError> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(CliError::Input(format!("config `{key}`: expected a boolean, got `{v}`"))),
    }
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>, CliError> {
    v.split([',', ';'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| num(key, s))
        .collect()
}

/// `le:ri` in unit intervals.
pub fn parse_window(s: &str) -> Result<(usize, usize), CliError> {
    let (le, ri) = s
        .split_once(':')
        .ok_or_else(|| CliError::Input(format!("window `{s}` must be le:ri")))?;
    let le = num("window", le.trim())?;
    let ri = num("window", ri.trim())?;
    if le >= ri {
        return Err(CliError::Input(format!("window `{s}` is empty")));
    }
    Ok((le, ri))
}

/// `start-end:weight` in units.
fn parse_mode(s: &str) -> Result<(f64, f64, f64), CliError> {
    let bad = || CliError::Input(format!("synth mode `{s}` must be start-end:weight"));
    let (span, weight) = s.split_once(':').ok_or_else(bad)?;
    let (a, b) = span.split_once('-').ok_or_else(bad)?;
    Ok((num("synth.modes", a.trim())?, num("synth.modes", b.trim())?, num("synth.modes", weight.trim())?))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), CliError> {
        let v = v.trim();
        match key {
            "delta_s" => self.delta_s = num(key, v)?,
            "delta_quantile" => self.delta_quantile = if v.is_empty() { None } else { Some(num(key, v)?) },
            "delta_per_subject" => self.delta_per_subject = flag(key, v)?,
            "lambda_s" => self.lambda_s = num(key, v)?,
            "omega_s" => self.omega_s = num(key, v)?,
            "omegas" => self.omegas = list(key, v)?,
            "alpha" => self.alpha = num(key, v)?,
            "preference_mode" => self.preference_mode = v.parse()?,
            "damping" => self.damping = num(key, v)?,
            "max_iter" => self.max_iter = num(key, v)?,
            "stable_iters" => self.stable_iters = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "windows" => {
                self.windows = v
                    .split([',', ';'])
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(parse_window)
                    .collect::<Result<_, _>>()?
            }
            "grouping" => self.grouping = v.parse()?,
            "utc_offset_s" => self.utc_offset_s = num(key, v)?,
            "beta" => self.beta = num(key, v)?,
            "normalize" => self.normalize = flag(key, v)?,
            "synth.n" => self.synth_n = num(key, v)?,
            "synth.p" => self.synth_p = num(key, v)?,
            "synth.sigma" => self.synth_sigma = num(key, v)?,
            "synth.len" => self.synth_len = num(key, v)?,
            "synth.modes" => {
                self.synth_modes = v
                    .split([',', ';'])
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(parse_mode)
                    .collect::<Result<_, _>>()?
            }
            k if k.starts_with("col.") => {
                self.columns.insert(k.to_string(), v.to_string());
            }
            _ => return Err(CliError::Input(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Apply every `key = value` line of a config file. Blank lines and `#`
    /// comments are skipped.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Input(format!("{}:{}: expected key = value", path.display(), n + 1))
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.lambda_s == 0 {
            return Err(CliError::Input("lambda_s must be positive".into()));
        }
        for &om in std::iter::once(&self.omega_s).chain(&self.omegas) {
            if om == 0 || om % self.lambda_s != 0 {
                return Err(CliError::Input(format!(
                    "omega {om} s is not a positive multiple of lambda {} s",
                    self.lambda_s
                )));
            }
        }
        if self.alpha == 0 {
            return Err(CliError::Input("alpha must be at least 1".into()));
        }
        if !(0.5..1.0).contains(&self.damping) {
            return Err(CliError::Input(format!("damping {} outside [0.5, 1)", self.damping)));
        }
        if self.beta <= 0.0 {
            return Err(CliError::Input("beta must be positive".into()));
        }
        Ok(())
    }

    pub fn w_units(&self, omega_s: u32) -> usize {
        (omega_s / self.lambda_s) as usize
    }

    pub fn ap_params(&self) -> ApParams {
        ApParams {
            damping: self.damping,
            max_iter: self.max_iter,
            stable_iters: self.stable_iters,
            seed: self.seed,
        }
    }

    pub fn synth_params(&self) -> SynthParams {
        let mut p = SynthParams::defaults(self.seed);
        p.n = self.synth_n;
        p.false_neg_p = self.synth_p;
        p.lambda = self.lambda_s;
        p.len = self.synth_len;
        if self.synth_modes.is_empty() {
            for m in &mut p.modes {
                m.sigma_units = self.synth_sigma;
            }
        } else {
            p.modes = self
                .synth_modes
                .iter()
                .map(|&(s, e, w)| ModeSpec {
                    mean_start: s,
                    mean_end: e,
                    sigma_units: self.synth_sigma,
                    weight: w,
                })
                .collect();
        }
        p
    }

    /// Windows to scan for sequences of length `len`.
    pub fn windows_for(&self, len: usize) -> Vec<(usize, usize)> {
        if self.windows.is_empty() {
            vec![(0, len)]
        } else {
            self.windows.clone()
        }
    }
}
