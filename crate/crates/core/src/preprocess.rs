//! Sessionization of point sequences into interval sequences, and
//! discretization into fixed-length binary interval sequences (BIS).

use std::io::{BufRead, Write};

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::ingest::{PointSequence, SeqKey, SECONDS_PER_DAY};

/// Presence intervals for one subject-day, half-open `[start, end)` seconds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntervalSequence {
    pub key: SeqKey,
    pub intervals: Vec<(u32, u32)>,
}

/// Binary interval sequence over unit intervals of width `lambda` seconds.
/// `true` is a detection; `false` means absent or undetected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bis {
    pub key: SeqKey,
    pub lambda: u32,
    pub bits: Vec<bool>,
}

impl Bis {
    pub fn new(key: SeqKey, lambda: u32, bits: Vec<bool>) -> Self {
        Self { key, lambda, bits }
    }

    /// Anonymous sequence, handy for synthetic data and tests.
    pub fn from_bits(index: usize, lambda: u32, bits: Vec<bool>) -> Self {
        Self {
            key: SeqKey {
                subject_id: format!("s{index}"),
                day: NaiveDate::from_ymd_opt(1970, 1, 1).unwrap(),
            },
            lambda,
            bits,
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn bitstring(&self) -> String {
        self.bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }
}

/// Parse a `0`/`1` string into bits.
pub fn parse_bits(s: &str) -> Option<Vec<bool>> {
    s.chars()
        .map(|c| match c {
            '0' => Some(false),
            '1' => Some(true),
            _ => None,
        })
        .collect()
}

/// Number of unit intervals in a day of `day_len` seconds.
pub fn bis_len(day_len: u32, lambda: u32) -> usize {
    day_len.div_ceil(lambda) as usize
}

/// Merge consecutive detections whose gap is at most `delta` seconds.
/// Each run `[first, .., last]` becomes `[first, last + 1)`.
pub fn sessionize(ps: &PointSequence, delta: u32) -> IntervalSequence {
    let mut intervals: Vec<(u32, u32)> = Vec::new();
    for &t in &ps.timestamps {
        match intervals.last_mut() {
            Some((_, end)) if t + 1 - *end <= delta => *end = t + 1,
            _ => intervals.push((t, t + 1)),
        }
    }
    IntervalSequence {
        key: ps.key.clone(),
        intervals,
    }
}

/// Set bit `j` iff `[j * lambda, (j + 1) * lambda)` overlaps any interval.
pub fn discretize(is: &IntervalSequence, lambda: u32, day_len: u32) -> Bis {
    let len = bis_len(day_len, lambda);
    let mut bits = vec![false; len];
    for &(start, end) in &is.intervals {
        if start >= end || start >= day_len {
            continue;
        }
        let first = (start / lambda) as usize;
        let last = ((end.min(day_len) - 1) / lambda) as usize;
        for b in &mut bits[first..=last.min(len - 1)] {
            *b = true;
        }
    }
    Bis::new(is.key.clone(), lambda, bits)
}

/// Sessionize then discretize with a full 24 h day.
pub fn to_bis(ps: &PointSequence, delta: u32, lambda: u32) -> Bis {
    discretize(&sessionize(ps, delta), lambda, SECONDS_PER_DAY)
}

/// BIS file line: `subject,day,lambda,bitstring`.
pub fn write_bis<'a, W, I>(mut w: W, seqs: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a Bis>,
{
    for b in seqs {
        writeln!(
            w,
            "{},{},{},{}",
            b.key.subject_id,
            b.key.day,
            b.lambda,
            b.bitstring()
        )?;
    }
    Ok(())
}

pub fn read_bis<R: BufRead>(r: R) -> Result<Vec<Bis>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: &str| Error::Parse {
            line: i + 1,
            msg: msg.to_string(),
        };
        let fields: Vec<&str> = line.trim_end().split(',').collect();
        let [subject, day, lambda, bits] = fields[..] else {
            return Err(err("expected 4 fields"));
        };
        let day = day.parse::<NaiveDate>().map_err(|_| err("bad day"))?;
        let lambda = lambda
            .parse::<u32>()
            .ok()
            .filter(|&l| l > 0)
            .ok_or_else(|| err("bad lambda"))?;
        let bits = parse_bits(bits).ok_or_else(|| err("bitstring must be 0/1"))?;
        out.push(Bis::new(
            SeqKey {
                subject_id: subject.to_string(),
                day,
            },
            lambda,
            bits,
        ));
    }
    Ok(out)
}
