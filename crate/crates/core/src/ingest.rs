//! Raw sensor traces to per-(subject, day) point sequences, plus the
//! sessionization threshold estimate from inter-packet gaps.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use chrono::{DateTime, Days, NaiveDate, NaiveDateTime};

use crate::error::{Error, Result};

pub const SECONDS_PER_DAY: u32 = 86_400;

/// One detection of a subject by a sensing device.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorRecord {
    pub device_id: String,
    pub subject_id: String,
    pub timestamp: i64,
    pub rssi: Option<i32>,
    pub latitude: Option<f64>,
    pub longitude: Option<f64>,
}

/// Column mapping for delimited trace files.
///
/// Keys mirror the config file: `col.subject`, `col.timestamp`, `col.rssi`,
/// `col.device`, `col.lat`, `col.lon`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceSchema {
    pub subject: String,
    pub timestamp: String,
    pub rssi: Option<String>,
    pub device: Option<String>,
    pub latitude: Option<String>,
    pub longitude: Option<String>,
}

impl Default for TraceSchema {
    fn default() -> Self {
        Self {
            subject: "subject".into(),
            timestamp: "timestamp".into(),
            rssi: Some("rssi".into()),
            device: Some("device".into()),
            latitude: Some("lat".into()),
            longitude: Some("lon".into()),
        }
    }
}

impl TraceSchema {
    /// Apply `col.*` overrides from a flat key-value map.
    pub fn with_overrides(mut self, kv: &BTreeMap<String, String>) -> Self {
        let opt = |v: &String| if v.is_empty() { None } else { Some(v.clone()) };
        for (k, v) in kv {
            match k.as_str() {
                "col.subject" => self.subject = v.clone(),
                "col.timestamp" => self.timestamp = v.clone(),
                "col.rssi" => self.rssi = opt(v),
                "col.device" => self.device = opt(v),
                "col.lat" => self.latitude = opt(v),
                "col.lon" => self.longitude = opt(v),
                _ => {}
            }
        }
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedTrace {
    pub records: Vec<SensorRecord>,
    pub skipped: usize,
}

/// Parse a delimited trace with a header row. The delimiter (comma or tab) is
/// sniffed from the header. Malformed rows are counted and skipped; if more
/// than half of the data rows are malformed the schema is rejected.
pub fn parse_trace<R: BufRead>(source: R, schema: &TraceSchema) -> Result<ParsedTrace> {
    let mut lines = source.lines();
    let header = loop {
        match lines.next() {
            None => return Err(Error::Input("trace has no header row".into())),
            Some(line) => {
                let line = line.map_err(|e| Error::Input(e.to_string()))?;
                if !line.trim().is_empty() {
                    break line;
                }
            }
        }
    };
    let delim = if header.contains('\t') { '\t' } else { ',' };
    let columns: Vec<&str> = header.split(delim).map(str::trim).collect();
    let find = |name: &str| columns.iter().position(|c| *c == name);
    let find_opt = |name: &Option<String>| name.as_deref().and_then(find);

    let subject_col = find(&schema.subject)
        .ok_or_else(|| Error::Schema(format!("missing subject column `{}`", schema.subject)))?;
    let ts_col = find(&schema.timestamp).ok_or_else(|| {
        Error::Schema(format!("missing timestamp column `{}`", schema.timestamp))
    })?;
    let rssi_col = find_opt(&schema.rssi);
    let device_col = find_opt(&schema.device);
    let lat_col = find_opt(&schema.latitude);
    let lon_col = find_opt(&schema.longitude);

    let mut out = ParsedTrace::default();
    let mut rows = 0usize;
    for line in lines {
        let line = line.map_err(|e| Error::Input(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        rows += 1;
        let fields: Vec<&str> = line.split(delim).map(str::trim).collect();
        let get = |c: Option<usize>| c.and_then(|c| fields.get(c)).copied().filter(|s| !s.is_empty());

        let subject = get(Some(subject_col));
        let ts = get(Some(ts_col)).and_then(parse_timestamp);
        let (Some(subject), Some(timestamp)) = (subject, ts) else {
            out.skipped += 1;
            continue;
        };
        if timestamp < 0 {
            out.skipped += 1;
            continue;
        }
        out.records.push(SensorRecord {
            device_id: get(device_col).unwrap_or_default().to_string(),
            subject_id: subject.to_string(),
            timestamp,
            rssi: get(rssi_col).and_then(|s| s.parse().ok()),
            latitude: get(lat_col).and_then(|s| s.parse().ok()),
            longitude: get(lon_col).and_then(|s| s.parse().ok()),
        });
    }
    if rows > 0 && out.skipped * 2 > rows {
        return Err(Error::Schema(format!(
            "{} of {} rows malformed",
            out.skipped, rows
        )));
    }
    Ok(out)
}

/// Integer epoch seconds, RFC 3339, or a naive ISO-8601 datetime read as UTC.
pub fn parse_timestamp(s: &str) -> Option<i64> {
    if let Ok(v) = s.parse::<i64>() {
        return Some(v);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    None
}

/// Identifies one clustering row: a subject on a calendar day.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SeqKey {
    pub subject_id: String,
    pub day: NaiveDate,
}

/// Detection times for one subject on one day, in seconds since local midnight.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PointSequence {
    pub key: SeqKey,
    pub timestamps: Vec<u32>,
    /// Records collapsed into an existing timestamp.
    pub duplicates: usize,
}

fn epoch() -> NaiveDate {
    NaiveDate::from_ymd_opt(1970, 1, 1).unwrap()
}

/// Split an epoch timestamp into (local day, seconds within that day).
pub fn day_and_offset(timestamp: i64, utc_offset_s: i32) -> (NaiveDate, u32) {
    let local = timestamp + i64::from(utc_offset_s);
    let day = local.div_euclid(i64::from(SECONDS_PER_DAY));
    let within = local.rem_euclid(i64::from(SECONDS_PER_DAY)) as u32;
    let date = if day >= 0 {
        epoch().checked_add_days(Days::new(day as u64))
    } else {
        epoch().checked_sub_days(Days::new(day.unsigned_abs()))
    };
    (date.expect("date in range"), within)
}

/// Group records into point sequences keyed by (subject, local day).
pub fn build_point_sequences(
    records: &[SensorRecord],
    utc_offset_s: i32,
) -> BTreeMap<SeqKey, PointSequence> {
    let mut grouped: HashMap<SeqKey, Vec<u32>> = HashMap::new();
    for r in records {
        let (day, t) = day_and_offset(r.timestamp, utc_offset_s);
        grouped
            .entry(SeqKey {
                subject_id: r.subject_id.clone(),
                day,
            })
            .or_default()
            .push(t);
    }
    grouped
        .into_iter()
        .map(|(key, mut ts)| {
            let total = ts.len();
            ts.sort_unstable();
            ts.dedup();
            let duplicates = total - ts.len();
            (
                key.clone(),
                PointSequence {
                    key,
                    timestamps: ts,
                    duplicates,
                },
            )
        })
        .collect()
}

/// Positive inter-packet gaps, in seconds.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GapHistogram {
    pub gaps: Vec<u32>,
}

impl GapHistogram {
    pub fn from_sequences<'a, I>(seqs: I) -> Self
    where
        I: IntoIterator<Item = &'a PointSequence>,
    {
        let mut gaps = Vec::new();
        for ps in seqs {
            gaps.extend(
                ps.timestamps
                    .windows(2)
                    .map(|w| w[1] - w[0])
                    .filter(|&g| g > 0),
            );
        }
        Self { gaps }
    }

    /// One histogram per subject, for the per-subject override.
    pub fn per_subject<'a, I>(seqs: I) -> BTreeMap<String, GapHistogram>
    where
        I: IntoIterator<Item = &'a PointSequence>,
    {
        let mut out: BTreeMap<String, Vec<&PointSequence>> = BTreeMap::new();
        for ps in seqs {
            out.entry(ps.key.subject_id.clone()).or_default().push(ps);
        }
        out.into_iter()
            .map(|(s, v)| (s, GapHistogram::from_sequences(v)))
            .collect()
    }
}

/// Smallest observed gap `g` with at least `quantile` of all gaps `<= g`.
pub fn estimate_delta(hist: &GapHistogram, quantile: f64) -> Result<u32> {
    if hist.gaps.is_empty() {
        return Err(Error::Estimation("empty gap histogram".into()));
    }
    if !(quantile > 0.0 && quantile <= 1.0) {
        return Err(Error::Param(format!("quantile {quantile} outside (0, 1]")));
    }
    let mut sorted = hist.gaps.clone();
    sorted.sort_unstable();
    let n = sorted.len();
    // smallest k with k / n >= quantile; the epsilon absorbs 0.95 * 100 = 94.999..
    let k = ((quantile * n as f64) - 1e-9).ceil().max(1.0) as usize;
    Ok(sorted[k.min(n) - 1])
}

/// Canonical point-sequence line: `subject,day,t1;t2;...`.
pub fn write_point_sequences<'a, W, I>(mut w: W, seqs: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a PointSequence>,
{
    for ps in seqs {
        let mut line = format!("{},{},", ps.key.subject_id, ps.key.day);
        for (i, t) in ps.timestamps.iter().enumerate() {
            if i > 0 {
                line.push(';');
            }
            write!(line, "{t}").unwrap();
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn read_point_sequences<R: BufRead>(r: R) -> Result<Vec<PointSequence>> {
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
        let mut parts = line.splitn(3, ',');
        let subject = parts.next().filter(|s| !s.is_empty()).ok_or_else(|| err("missing subject"))?;
        let day = parts
            .next()
            .and_then(|d| d.parse::<NaiveDate>().ok())
            .ok_or_else(|| err("bad day"))?;
        let ts_field = parts.next().ok_or_else(|| err("missing timestamps"))?;
        let timestamps = if ts_field.is_empty() {
            Vec::new()
        } else {
            ts_field
                .split(';')
                .map(|t| t.parse::<u32>().map_err(|_| err("bad timestamp")))
                .collect::<Result<Vec<_>>>()?
        };
        if timestamps.windows(2).any(|w| w[0] >= w[1])
            || timestamps.iter().any(|&t| t >= SECONDS_PER_DAY)
        {
            return Err(err("timestamps must be strictly increasing within the day"));
        }
        out.push(PointSequence {
            key: SeqKey {
                subject_id: subject.to_string(),
                day,
            },
            timestamps,
            duplicates: 0,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(subject: &str, ts: i64) -> SensorRecord {
        SensorRecord {
            device_id: "psu-1".into(),
            subject_id: subject.into(),
            timestamp: ts,
            rssi: None,
            latitude: None,
            longitude: None,
        }
    }

    #[test]
    fn parses_single_row() {
        let csv = "device,subject,timestamp,rssi\npsu-1,ab12,1000,-60\n";
        let out = parse_trace(csv.as_bytes(), &TraceSchema::default()).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].rssi, Some(-60));
        assert_eq!(out.skipped, 0);
    }

    #[test]
    fn skips_empty_subject() {
        let csv = "subject,timestamp\nab,10\n,20\nab,30\n";
        let out = parse_trace(csv.as_bytes(), &TraceSchema::default()).unwrap();
        assert_eq!(out.records.len(), 2);
        assert_eq!(out.skipped, 1);
    }

    #[test]
    fn tab_delimited_iso_timestamps_and_overrides() {
        let tsv = "mac\ttime\nx\t1970-01-01T00:01:40Z\nx\t1970-01-01 00:02:00\n";
        let mut kv = BTreeMap::new();
        kv.insert("col.subject".to_string(), "mac".to_string());
        kv.insert("col.timestamp".to_string(), "time".to_string());
        let schema = TraceSchema::default().with_overrides(&kv);
        let out = parse_trace(tsv.as_bytes(), &schema).unwrap();
        let ts: Vec<i64> = out.records.iter().map(|r| r.timestamp).collect();
        assert_eq!(ts, vec![100, 120]);
    }

    #[test]
    fn mostly_malformed_is_schema_error() {
        let csv = "subject,timestamp\na,x\nb,y\nc,1\n";
        assert!(matches!(
            parse_trace(csv.as_bytes(), &TraceSchema::default()),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn missing_header_is_input_error() {
        assert!(matches!(
            parse_trace("".as_bytes(), &TraceSchema::default()),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn dedupes_and_sorts() {
        let recs = vec![rec("a", 10), rec("a", 10), rec("a", 5)];
        let m = build_point_sequences(&recs, 0);
        let ps = m.values().next().unwrap();
        assert_eq!(ps.timestamps, vec![5, 10]);
        assert_eq!(ps.duplicates, 1);
    }

    #[test]
    fn midnight_splits_days() {
        let recs = vec![rec("a", 86_399), rec("a", 86_400)];
        let m = build_point_sequences(&recs, 0);
        assert_eq!(m.len(), 2);
        let days: Vec<_> = m.keys().map(|k| k.day.to_string()).collect();
        assert_eq!(days, vec!["1970-01-01", "1970-01-02"]);
        // shifting the clock moves both into one local day
        assert_eq!(build_point_sequences(&recs, -3600).len(), 1);
    }

    #[test]
    fn empty_input_empty_map() {
        assert!(build_point_sequences(&[], 0).is_empty());
    }

    #[test]
    fn delta_estimates() {
        let flat = GapHistogram { gaps: vec![60; 40] };
        assert_eq!(estimate_delta(&flat, 0.95).unwrap(), 60);
        let ramp = GapHistogram {
            gaps: (1..=100).collect(),
        };
        assert_eq!(estimate_delta(&ramp, 0.95).unwrap(), 95);
        assert!(estimate_delta(&GapHistogram::default(), 0.95).is_err());
    }

    #[test]
    fn delta_from_line_of_sight_sample() {
        // 95 short probe gaps up to 900 s and 5 long dropouts
        let mut gaps: Vec<u32> = (0..95).map(|i| 30 + (i * 870) / 94).collect();
        gaps.extend([1800, 2400, 3600, 5000, 7200]);
        let hist = GapHistogram { gaps };
        assert_eq!(estimate_delta(&hist, 0.95).unwrap(), 900);
    }

    #[test]
    fn point_sequence_file_round_trip() {
        let recs = vec![rec("a", 5), rec("a", 9), rec("b", 86_401)];
        let m = build_point_sequences(&recs, 0);
        let mut buf = Vec::new();
        write_point_sequences(&mut buf, m.values()).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "a,1970-01-01,5;9\nb,1970-01-02,1\n"
        );
        let back = read_point_sequences(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].timestamps, vec![5, 9]);
    }

    proptest! {
        #[test]
        fn grouping_is_permutation_invariant(
            ts in prop::collection::vec((0u8..3, 0i64..300_000), 0..60),
            seed in any::<u64>(),
        ) {
            let recs: Vec<_> = ts.iter().map(|(s, t)| rec(&s.to_string(), *t)).collect();
            let mut shuffled = recs.clone();
            // deterministic Fisher-Yates driven by the seed
            let mut state = seed | 1;
            for i in (1..shuffled.len()).rev() {
                state ^= state << 13; state ^= state >> 7; state ^= state << 17;
                shuffled.swap(i, (state % (i as u64 + 1)) as usize);
            }
            let a = build_point_sequences(&recs, 0);
            let b = build_point_sequences(&shuffled, 0);
            prop_assert_eq!(&a, &b);
            let total: usize = a.values().map(|p| p.timestamps.len() + p.duplicates).sum();
            prop_assert_eq!(total, recs.len());
        }

        #[test]
        fn delta_monotone_in_quantile(
            gaps in prop::collection::vec(1u32..5000, 1..80),
            q1 in 0.01f64..1.0, q2 in 0.01f64..1.0,
        ) {
            let h = GapHistogram { gaps };
            let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
            prop_assert!(estimate_delta(&h, lo).unwrap() <= estimate_delta(&h, hi).unwrap());
        }
    }
}
