//! Planted multimodal visiting data: block visits with Gaussian endpoint
//! jitter and independent per-bin false negatives.

use std::io::Write;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{SeqKey, SECONDS_PER_DAY};
use crate::par;
use crate::preprocess::{bis_len, Bis};

const MAX_RESAMPLE: usize = 16;

/// One visiting mode; endpoints are in unit intervals, `[start, end)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSpec {
    pub mean_start: f64,
    pub mean_end: f64,
    pub sigma_units: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub modes: Vec<ModeSpec>,
    pub n: usize,
    pub false_neg_p: f64,
    pub lambda: u32,
    pub len: usize,
    pub seed: u64,
}

impl SynthParams {
    /// Four default modes, 1000 sequences, 7.5-minute bins, 20% false negatives.
    pub fn defaults(seed: u64) -> Self {
        let lambda = 450;
        Self {
            modes: default_modes(4.0 / 3.0),
            n: 1000,
            false_neg_p: 0.2,
            lambda,
            len: bis_len(SECONDS_PER_DAY, lambda),
            seed,
        }
    }
}

/// Three nested near-full-day stays plus one localized midday visit, on a
/// 192-bin day. Neighbouring stays differ by 12 bins at each end.
pub fn default_modes(sigma_units: f64) -> Vec<ModeSpec> {
    [(4.0, 188.0), (16.0, 176.0), (28.0, 164.0), (72.0, 120.0)]
        .into_iter()
        .map(|(s, e)| ModeSpec {
            mean_start: s,
            mean_end: e,
            sigma_units,
            weight: 0.25,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedDataset {
    pub sequences: Vec<Bis>,
    /// Mode id of every sequence.
    pub labels: Vec<usize>,
    /// Bits before false negatives were applied.
    pub clean: Vec<Vec<bool>>,
    pub params: SynthParams,
}

impl PlantedDataset {
    /// Fraction of clean 1-bits turned off by noise.
    pub fn flip_rate(&self) -> f64 {
        let (mut ones, mut flipped) = (0usize, 0usize);
        for (clean, seq) in self.clean.iter().zip(&self.sequences) {
            for (&c, &b) in clean.iter().zip(&seq.bits) {
                if c {
                    ones += 1;
                    flipped += usize::from(!b);
                }
            }
        }
        if ones == 0 {
            0.0
        } else {
            flipped as f64 / ones as f64
        }
    }

    /// Fraction of runs of `k` consecutive clean 1-bits that were all lost.
    pub fn run_loss_rate(&self, k: usize) -> f64 {
        let (mut runs, mut lost) = (0usize, 0usize);
        for (clean, seq) in self.clean.iter().zip(&self.sequences) {
            for j in 0..clean.len().saturating_sub(k - 1) {
                if clean[j..j + k].iter().all(|&c| c) {
                    runs += 1;
                    lost += usize::from(seq.bits[j..j + k].iter().all(|&b| !b));
                }
            }
        }
        if runs == 0 {
            0.0
        } else {
            lost as f64 / runs as f64
        }
    }
}

fn validate(p: &SynthParams) -> Result<()> {
    if p.n == 0 {
        return Err(Error::Param("n must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&p.false_neg_p) {
        return Err(Error::Param(format!("false_neg_p {} outside [0, 1)", p.false_neg_p)));
    }
    if p.lambda == 0 || p.len == 0 {
        return Err(Error::Param("lambda and len must be positive".into()));
    }
    if p.modes.is_empty() {
        return Err(Error::Param("at least one mode required".into()));
    }
    for (i, m) in p.modes.iter().enumerate() {
        let ok = m.mean_start < m.mean_end && m.sigma_units >= 0.0 && m.weight > 0.0;
        if !ok {
            return Err(Error::Param(format!("mode {i} is degenerate: {m:?}")));
        }
    }
    let total: f64 = p.modes.iter().map(|m| m.weight).sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::Param(format!("mode weights sum to {total}, expected 1")));
    }
    Ok(())
}

fn jitter(rng: &mut ChaCha8Rng, mean: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return mean.round();
    }
    let d = Normal::new(mean, sigma).expect("finite sigma");
    d.sample(rng).round()
}

fn endpoints(rng: &mut ChaCha8Rng, m: &ModeSpec, len: usize) -> (usize, usize) {
    let top = len as f64;
    let draw_start = |rng: &mut ChaCha8Rng| jitter(rng, m.mean_start, m.sigma_units).clamp(0.0, top - 1.0) as usize;
    let draw_end = |rng: &mut ChaCha8Rng| jitter(rng, m.mean_end, m.sigma_units).clamp(0.0, top) as usize;
    let start = draw_start(rng);
    let mut end = draw_end(rng);
    for _ in 0..MAX_RESAMPLE {
        if start < end {
            return (start, end);
        }
        end = draw_end(rng);
    }
    (start, start + 1)
}

/// Draw a planted dataset. Sequence `i` uses its own ChaCha stream, so the
/// output does not depend on thread count.
pub fn generate(params: &SynthParams) -> Result<PlantedDataset> {
    validate(params)?;
    let weights = WeightedIndex::new(params.modes.iter().map(|m| m.weight))
        .map_err(|e| Error::Param(e.to_string()))?;
    let day = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
    let rows = par::map_range(params.n, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(i as u64);
        let mode = weights.sample(&mut rng);
        let (start, end) = endpoints(&mut rng, &params.modes[mode], params.len);
        let mut clean = vec![false; params.len];
        clean[start..end].iter_mut().for_each(|b| *b = true);
        let bits: Vec<bool> = clean
            .iter()
            .map(|&c| c && !rng.random_bool(params.false_neg_p))
            .collect();
        (mode, clean, bits)
    });
    let mut sequences = Vec::with_capacity(params.n);
    let mut labels = Vec::with_capacity(params.n);
    let mut clean = Vec::with_capacity(params.n);
    for (i, (mode, c, bits)) in rows.into_iter().enumerate() {
        let key = SeqKey {
            subject_id: format!("p{i:05}"),
            day,
        };
        sequences.push(Bis::new(key, params.lambda, bits));
        labels.push(mode);
        clean.push(c);
    }
    Ok(PlantedDataset {
        sequences,
        labels,
        clean,
        params: params.clone(),
    })
}

pub fn write_labels<W: Write>(mut w: W, labels: &[usize]) -> Result<()> {
    writeln!(w, "index,mode_id")?;
    for (i, l) in labels.iter().enumerate() {
        writeln!(w, "{i},{l}")?;
    }
    Ok(())
}

pub fn read_labels<R: std::io::BufRead>(r: R) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if n == 0 || line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: &str| Error::Parse {
            line: n + 1,
            msg: msg.to_string(),
        };
        let (i, l) = line.split_once(',').ok_or_else(|| parse_err("expected index,mode_id"))?;
        let i: usize = i.trim().parse().map_err(|_| parse_err("bad index"))?;
        if i != out.len() {
            return Err(parse_err("indices must be 0..n in order"));
        }
        out.push(l.trim().parse().map_err(|_| parse_err("bad mode id"))?);
    }
    Ok(out)
}

/// Sensor records that preprocess back to the given sequences: one detection
/// at the start of every 1-bin. Runs separated by a single 0-bin merge when
/// sessionized with `delta = 2 * lambda`, so exact recovery needs gaps of at
/// least two bins.
pub fn write_raw<W: Write>(mut w: W, seqs: &[Bis]) -> Result<()> {
    writeln!(w, "device,subject,timestamp,rssi")?;
    for s in seqs {
        let base = s
            .key
            .day
            .and_hms_opt(0, 0, 0)
            .expect("midnight")
            .and_utc()
            .timestamp();
        for (j, _) in s.bits.iter().enumerate().filter(|(_, &b)| b) {
            let t = base + j as i64 * i64::from(s.lambda);
            writeln!(w, "synth,{},{t},-60", s.key.subject_id)?;
        }
    }
    Ok(())
}
