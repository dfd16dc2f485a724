//! Bounded temporal dissimilarity between equal-length BIS segments, and the
//! sparse symmetric matrices built from it.
//!
//! Distances are kept in unit-interval counts as an exact `(sum, weight)`
//! pair, where `sum` adds the nearest-match offsets in both directions and
//! `weight` is the number of 1-bits on both sides. The quotient is only
//! formed at API boundaries.

use std::cmp::Ordering;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::par;

/// Maximum permitted local mismatch, as seconds and as unit intervals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowBound {
    pub omega: u32,
    pub w_units: usize,
}

impl WindowBound {
    pub fn new(omega: u32, lambda: u32) -> Result<Self> {
        if lambda == 0 || omega == 0 || !omega.is_multiple_of(lambda) {
            return Err(Error::Param(format!(
                "omega {omega} s must be a positive multiple of lambda {lambda} s"
            )));
        }
        Ok(Self {
            omega,
            w_units: (omega / lambda) as usize,
        })
    }

    pub fn from_units(w_units: usize, lambda: u32) -> Self {
        assert!(w_units >= 1, "window must span at least one unit");
        Self {
            omega: w_units as u32 * lambda,
            w_units,
        }
    }
}

/// A segment `[lo, hi)` of a full-day bit vector that may read `extension`
/// bits past either bound. Reads past the day edges are zero.
#[derive(Debug, Clone, Copy)]
pub struct SegmentView<'a> {
    pub bits: &'a [bool],
    pub lo: usize,
    pub hi: usize,
    pub extension: usize,
}

impl<'a> SegmentView<'a> {
    /// View with `w_units` of context on each side (the eBIS).
    pub fn extended(bits: &'a [bool], lo: usize, hi: usize, w_units: usize) -> Self {
        debug_assert!(lo <= hi && hi <= bits.len());
        Self {
            bits,
            lo,
            hi,
            extension: w_units,
        }
    }

    /// View that sees nothing outside its own bounds.
    pub fn clipped(bits: &'a [bool], lo: usize, hi: usize) -> Self {
        Self::extended(bits, lo, hi, 0)
    }

    /// The whole slice as one segment.
    pub fn whole(bits: &'a [bool]) -> Self {
        Self::clipped(bits, 0, bits.len())
    }

    pub fn len(&self) -> usize {
        self.hi - self.lo
    }

    pub fn is_empty(&self) -> bool {
        self.hi == self.lo
    }

    /// Bit at absolute index `i`, honoring the extension limits.
    pub fn get(&self, i: isize) -> bool {
        let lo = self.lo as isize - self.extension as isize;
        let hi = (self.hi + self.extension) as isize;
        if i < lo.max(0) || i >= hi.min(self.bits.len() as isize) {
            return false;
        }
        self.bits[i as usize]
    }

    pub fn ones(&self) -> usize {
        self.bits[self.lo..self.hi].iter().filter(|&&b| b).count()
    }
}

/// Smallest `d < w_units` with a 1-bit at `i + d` or `i - d`, or `None`.
pub fn min_itdist(view: &SegmentView<'_>, i: usize, w_units: usize) -> Option<u32> {
    let i = i as isize;
    (0..w_units as isize)
        .find(|&d| view.get(i + d) || view.get(i - d))
        .map(|d| d as u32)
}

/// One-directional match: every 1-bit of `a` looked up in `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PartialDistance {
    /// Sum of nearest-match offsets; `None` when some 1-bit has no match.
    pub sum: Option<u32>,
    /// Number of 1-bits in the source segment.
    pub cnt: u32,
}

pub fn partial_distance(a: &SegmentView<'_>, b: &SegmentView<'_>, w_units: usize) -> PartialDistance {
    let cnt = a.ones() as u32;
    let mut sum = 0u32;
    for i in a.lo..a.hi {
        if a.bits[i] {
            match min_itdist(b, i, w_units) {
                Some(d) => sum += d,
                None => return PartialDistance { sum: None, cnt },
            }
        }
    }
    PartialDistance { sum: Some(sum), cnt }
}

/// Exact finite distance `sum / weight` in unit intervals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PairDistance {
    pub sum: u32,
    pub weight: u32,
}

impl PairDistance {
    pub const ZERO: PairDistance = PairDistance { sum: 0, weight: 0 };

    /// Distance in unit intervals; zero when neither side has a 1-bit.
    pub fn value(&self) -> f64 {
        if self.weight == 0 {
            0.0
        } else {
            f64::from(self.sum) / f64::from(self.weight)
        }
    }
}

impl PartialOrd for PairDistance {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for PairDistance {
    fn cmp(&self, other: &Self) -> Ordering {
        let lhs = u64::from(self.sum) * u64::from(other.weight.max(1));
        let rhs = u64::from(other.sum) * u64::from(self.weight.max(1));
        lhs.cmp(&rhs)
    }
}

/// Symmetric temporal distance; `None` is the infinite (undefined) case.
pub fn tdist(a: &SegmentView<'_>, b: &SegmentView<'_>, w_units: usize) -> Option<PairDistance> {
    let ab = partial_distance(a, b, w_units);
    let ba = partial_distance(b, a, w_units);
    Some(PairDistance {
        sum: ab.sum? + ba.sum?,
        weight: ab.cnt + ba.cnt,
    })
}

/// Per-position offset to the nearest 1-bit, capped at `w_units`.
/// Looking a 1-bit of another sequence up here is the same as running
/// [`min_itdist`] on a view with full-day context.
#[derive(Debug, Clone)]
pub struct NearestProfile {
    near: Vec<u32>,
}

impl NearestProfile {
    pub fn new(bits: &[bool], w_units: usize) -> Self {
        let cap = w_units as u32;
        let n = bits.len();
        let mut near = vec![cap; n];
        let mut last: Option<usize> = None;
        for i in 0..n {
            if bits[i] {
                last = Some(i);
            }
            if let Some(l) = last {
                near[i] = near[i].min(((i - l) as u32).min(cap));
            }
        }
        last = None;
        for i in (0..n).rev() {
            if bits[i] {
                last = Some(i);
            }
            if let Some(l) = last {
                near[i] = near[i].min(((l - i) as u32).min(cap));
            }
        }
        Self { near }
    }

    #[inline]
    pub fn at(&self, i: usize) -> u32 {
        self.near[i]
    }
}

/// Sequences prepared once for repeated matrix builds over many segments.
#[derive(Debug, Clone)]
pub struct PreparedSet {
    pub w_units: usize,
    pub len: usize,
    profiles: Vec<NearestProfile>,
    ones: Vec<Vec<u32>>,
}

impl PreparedSet {
    pub fn new(seqs: &[&[bool]], w_units: usize) -> Result<Self> {
        let len = seqs.first().map_or(0, |s| s.len());
        if let Some(bad) = seqs.iter().find(|s| s.len() != len) {
            return Err(Error::LengthMismatch {
                left: len,
                right: bad.len(),
            });
        }
        let profiles = par::map_slice(seqs, |s| NearestProfile::new(s, w_units));
        let ones = seqs
            .iter()
            .map(|s| {
                s.iter()
                    .enumerate()
                    .filter(|(_, &b)| b)
                    .map(|(i, _)| i as u32)
                    .collect()
            })
            .collect();
        Ok(Self {
            w_units,
            len,
            profiles,
            ones,
        })
    }

    pub fn n(&self) -> usize {
        self.profiles.len()
    }

    fn ones_in(&self, i: usize, lo: usize, hi: usize) -> &[u32] {
        let o = &self.ones[i];
        let a = o.partition_point(|&x| (x as usize) < lo);
        let b = o.partition_point(|&x| (x as usize) < hi);
        &o[a..b]
    }

    fn directed_sum(&self, ones: &[u32], target: usize) -> Option<u32> {
        let prof = &self.profiles[target];
        let cap = self.w_units as u32;
        let mut sum = 0;
        for &i in ones {
            let d = prof.at(i as usize);
            if d >= cap {
                return None;
            }
            sum += d;
        }
        Some(sum)
    }

    /// Distance matrix of segment `[lo, hi)` with full-day extension context.
    pub fn segment_matrix(&self, lo: usize, hi: usize) -> DistanceMatrix {
        let n = self.n();
        let seg_ones: Vec<&[u32]> = (0..n).map(|i| self.ones_in(i, lo, hi)).collect();
        let counts: Vec<u32> = seg_ones.iter().map(|o| o.len() as u32).collect();
        let rows = par::map_range(n, |i| {
            let mut row = Vec::new();
            for j in i + 1..n {
                if counts[i] + counts[j] == 0 {
                    continue;
                }
                let Some(ab) = self.directed_sum(seg_ones[i], j) else {
                    continue;
                };
                let Some(ba) = self.directed_sum(seg_ones[j], i) else {
                    continue;
                };
                row.push((j as u32, ab + ba));
            }
            row
        });
        DistanceMatrix { counts, rows }
    }
}

/// Sparse symmetric matrix of exact distances for one segment.
///
/// Only the upper triangle is stored. A pair where neither sequence has a
/// 1-bit in the segment is implicitly at distance zero; any other pair that
/// is not stored is infinite.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistanceMatrix {
    counts: Vec<u32>,
    rows: Vec<Vec<(u32, u32)>>,
}

impl DistanceMatrix {
    /// Assemble from per-sequence 1-bit counts and `(i, j, sum)` triples.
    /// Triples on zero-weight pairs or the diagonal are ignored.
    pub fn from_parts(counts: Vec<u32>, entries: impl IntoIterator<Item = (usize, usize, u32)>) -> Result<Self> {
        let n = counts.len();
        let mut rows: Vec<Vec<(u32, u32)>> = vec![Vec::new(); n];
        for (i, j, sum) in entries {
            if i >= n || j >= n {
                return Err(Error::Build(format!("entry ({i}, {j}) outside n = {n}")));
            }
            let (i, j) = if i < j { (i, j) } else { (j, i) };
            if i == j || counts[i] + counts[j] == 0 {
                continue;
            }
            rows[i].push((j as u32, sum));
        }
        for r in &mut rows {
            r.sort_unstable_by_key(|e| e.0);
            r.dedup_by_key(|e| e.0);
        }
        Ok(Self { counts, rows })
    }

    pub fn n(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Number of explicitly stored entries.
    pub fn stored_entries(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    fn lookup(&self, i: usize, j: usize) -> Option<u32> {
        let row = &self.rows[i];
        row.binary_search_by_key(&(j as u32), |e| e.0)
            .ok()
            .map(|k| row[k].1)
    }

    pub fn get(&self, i: usize, j: usize) -> Option<PairDistance> {
        if i == j {
            return Some(PairDistance {
                sum: 0,
                weight: 2 * self.counts[i],
            });
        }
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        let weight = self.counts[i] + self.counts[j];
        if weight == 0 {
            return Some(PairDistance::ZERO);
        }
        self.lookup(i, j).map(|sum| PairDistance { sum, weight })
    }

    pub fn is_finite(&self, i: usize, j: usize) -> bool {
        self.get(i, j).is_some()
    }

    /// Every finite off-diagonal pair `(i, j, d)` with `i < j`, row-major.
    pub fn finite_pairs(&self) -> Vec<(usize, usize, PairDistance)> {
        let n = self.n();
        let mut out = Vec::new();
        for i in 0..n {
            let row = &self.rows[i];
            let mut k = 0;
            for j in i + 1..n {
                let weight = self.counts[i] + self.counts[j];
                if weight == 0 {
                    out.push((i, j, PairDistance::ZERO));
                } else {
                    while k < row.len() && (row[k].0 as usize) < j {
                        k += 1;
                    }
                    if k < row.len() && row[k].0 as usize == j {
                        out.push((i, j, PairDistance { sum: row[k].1, weight }));
                    }
                }
            }
        }
        out
    }

    /// Finite neighbours of `i` (excluding `i`), ascending.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.n())
            .filter(|&j| j != i && self.is_finite(i, j))
            .collect()
    }

    /// Columns `j` with `(i, j)` finite, including `i`.
    pub fn covering_row(&self, i: usize) -> Vec<usize> {
        (0..self.n()).filter(|&j| self.is_finite(i, j)).collect()
    }

    /// Dense view of distances as floats, `None` for infinite.
    pub fn to_dense(&self) -> Vec<Vec<Option<f64>>> {
        let n = self.n();
        (0..n)
            .map(|i| (0..n).map(|j| self.get(i, j).map(|d| d.value())).collect())
            .collect()
    }

    /// Submatrix over `idx`; row `k` of the result is row `idx[k]` here.
    pub fn restrict(&self, idx: &[usize]) -> Result<DistanceMatrix> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.n()) {
            return Err(Error::Build(format!("index {bad} outside n = {}", self.n())));
        }
        let counts = idx.iter().map(|&i| self.counts[i]).collect();
        let mut entries = Vec::new();
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate().skip(a + 1) {
                let (lo, hi) = if i < j { (i, j) } else { (j, i) };
                if let Some(sum) = self.lookup(lo, hi) {
                    entries.push((a, b, sum));
                }
            }
        }
        DistanceMatrix::from_parts(counts, entries)
    }
}

/// Matrix of `views` computed pair by pair with [`tdist`].
pub fn build_matrix(views: &[SegmentView<'_>], w_units: usize) -> Result<DistanceMatrix> {
    if let Some(first) = views.first() {
        if let Some(bad) = views.iter().find(|v| v.lo != first.lo || v.hi != first.hi) {
            return Err(Error::Build(format!(
                "segment [{}, {}) differs from [{}, {})",
                bad.lo, bad.hi, first.lo, first.hi
            )));
        }
    }
    let n = views.len();
    let counts: Vec<u32> = views.iter().map(|v| v.ones() as u32).collect();
    let rows = par::map_range(n, |i| {
        (i + 1..n)
            .filter(|&j| counts[i] + counts[j] > 0)
            .filter_map(|j| tdist(&views[i], &views[j], w_units).map(|d| (j as u32, d.sum)))
            .collect()
    });
    Ok(DistanceMatrix { counts, rows })
}

/// Merge two matrices over disjoint segments of the same sequences.
pub(crate) fn combine_pair(p: &DistanceMatrix, q: &DistanceMatrix) -> Result<DistanceMatrix> {
    if p.n() != q.n() {
        return Err(Error::Combine(format!("n mismatch: {} vs {}", p.n(), q.n())));
    }
    let n = p.n();
    let counts: Vec<u32> = p.counts.iter().zip(&q.counts).map(|(a, b)| a + b).collect();
    let rows = par::map_range(n, |i| {
        let (rp, rq) = (&p.rows[i], &q.rows[i]);
        let status = |m: &DistanceMatrix, stored: Option<u32>, j: usize| {
            stored.or_else(|| (m.counts[i] + m.counts[j] == 0).then_some(0))
        };
        let mut out = Vec::with_capacity(rp.len().max(rq.len()));
        let (mut a, mut b) = (0, 0);
        while a < rp.len() || b < rq.len() {
            let ja = rp.get(a).map_or(u32::MAX, |e| e.0);
            let jb = rq.get(b).map_or(u32::MAX, |e| e.0);
            let j = ja.min(jb);
            let sp = (ja == j).then(|| rp[a].1);
            let sq = (jb == j).then(|| rq[b].1);
            if ja == j {
                a += 1;
            }
            if jb == j {
                b += 1;
            }
            let j = j as usize;
            if let (Some(x), Some(y)) = (status(p, sp, j), status(q, sq, j)) {
                out.push((j as u32, x + y));
            }
        }
        out
    });
    Ok(DistanceMatrix { counts, rows })
}

/// Euclidean distance between two bit vectors.
pub fn euclidean(a: &[bool], b: &[bool]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok((a.iter().zip(b).filter(|(x, y)| x != y).count() as f64).sqrt())
}

/// Unconstrained dynamic time warping with absolute-difference local cost.
pub fn dtw(a: &[bool], b: &[bool]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Param("dtw of an empty sequence".into()));
    }
    let m = b.len();
    let mut prev = vec![u32::MAX; m];
    let mut cur = vec![0u32; m];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            let best = match (i, j) {
                (0, 0) => 0,
                (0, _) => cur[j - 1],
                (_, 0) => prev[0],
                _ => prev[j].min(prev[j - 1]).min(cur[j - 1]),
            };
            cur[j] = best + u32::from(x != y);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(f64::from(prev[m - 1]))
}

/// Sparse triplet export: header `n,w_units,lambda`, then `i,j,value` for every
/// finite off-diagonal pair with `i < j`. Infinite pairs are omitted.
pub fn write_triplets<W: Write>(mut w: W, m: &DistanceMatrix, w_units: usize, lambda: u32) -> Result<()> {
    writeln!(w, "{},{},{}", m.n(), w_units, lambda)?;
    for (i, j, d) in m.finite_pairs() {
        writeln!(w, "{i},{j},{}", d.value())?;
    }
    Ok(())
}

/// Exact on-disk form: the triplet header, a `counts,...` line, then
/// `i,j,sum/weight` for each stored entry.
pub fn write_exact<W: Write>(mut w: W, m: &DistanceMatrix, w_units: usize, lambda: u32) -> Result<()> {
    writeln!(w, "{},{},{}", m.n(), w_units, lambda)?;
    let counts: Vec<String> = m.counts.iter().map(u32::to_string).collect();
    writeln!(w, "counts,{}", counts.join(";"))?;
    for (i, row) in m.rows.iter().enumerate() {
        for &(j, sum) in row {
            writeln!(w, "{i},{j},{sum}/{}", m.counts[i] + m.counts[j as usize])?;
        }
    }
    Ok(())
}

/// Header of a matrix file: `(n, w_units, lambda)`.
pub type MatrixHeader = (usize, usize, u32);

pub fn read_exact<R: BufRead>(r: R) -> Result<(MatrixHeader, DistanceMatrix)> {
    let mut lines = r.lines().enumerate();
    let perr = |line: usize, msg: &str| Error::Parse {
        line: line + 1,
        msg: msg.to_string(),
    };
    let (ln, header) = lines.next().ok_or_else(|| perr(0, "missing header"))?;
    let header = header?;
    let h: Vec<&str> = header.split(',').collect();
    let parse_usize = |s: &str| s.parse::<usize>().map_err(|_| perr(ln, "bad header"));
    let [n, w, lambda] = h[..] else {
        return Err(perr(ln, "header must be n,w_units,lambda"));
    };
    let hdr = (
        parse_usize(n)?,
        parse_usize(w)?,
        lambda.parse::<u32>().map_err(|_| perr(ln, "bad lambda"))?,
    );
    let (ln, counts_line) = lines.next().ok_or_else(|| perr(1, "missing counts"))?;
    let counts_line = counts_line?;
    let body = counts_line
        .strip_prefix("counts,")
        .ok_or_else(|| perr(ln, "expected counts line"))?;
    let counts: Vec<u32> = if body.is_empty() {
        Vec::new()
    } else {
        body.split(';')
            .map(|c| c.parse().map_err(|_| perr(ln, "bad count")))
            .collect::<Result<_>>()?
    };
    if counts.len() != hdr.0 {
        return Err(perr(ln, "counts length differs from n"));
    }
    let mut entries = Vec::new();
    for (ln, line) in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let [i, j, v] = f[..] else {
            return Err(perr(ln, "expected i,j,sum/weight"));
        };
        let (sum, weight) = v.split_once('/').ok_or_else(|| perr(ln, "expected sum/weight"))?;
        let i: usize = i.parse().map_err(|_| perr(ln, "bad i"))?;
        let j: usize = j.parse().map_err(|_| perr(ln, "bad j"))?;
        let sum: u32 = sum.parse().map_err(|_| perr(ln, "bad sum"))?;
        let weight: u32 = weight.parse().map_err(|_| perr(ln, "bad weight"))?;
        if i >= counts.len() || j >= counts.len() || counts[i] + counts[j] != weight {
            return Err(perr(ln, "weight disagrees with counts"));
        }
        entries.push((i, j, sum));
    }
    Ok((hdr, DistanceMatrix::from_parts(counts, entries)?))
}
