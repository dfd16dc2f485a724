use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Cursor;

use proptest::prelude::*;
use visitpat::ingest::{
    build_point_sequences, estimate_delta, parse_trace, GapHistogram, SensorRecord, TraceSchema,
};
use visitpat::preprocess::{sessionize, to_bis};
use visitpat::synth::{generate, write_raw, SynthParams};

fn record(subject: &str, timestamp: i64) -> SensorRecord {
    SensorRecord {
        device_id: "d".into(),
        subject_id: subject.into(),
        timestamp,
        rssi: None,
        latitude: None,
        longitude: None,
    }
}

#[test]
fn large_trace_keeps_every_row() {
    let mut text = String::from("device,subject,timestamp,rssi,lat,lon\n");
    for i in 0..11_853u32 {
        writeln!(
            text,
            "ap{},u{},{},{},34.02,-118.28",
            i % 7,
            i % 131,
            1_500_000_000 + i64::from(i) * 37,
            -40 - (i % 50) as i32
        )
        .unwrap();
    }
    let parsed = parse_trace(Cursor::new(text), &TraceSchema::default()).unwrap();
    assert_eq!(parsed.records.len(), 11_853);
    assert_eq!(parsed.skipped, 0);
    assert_eq!(parsed.records[5].subject_id, "u5");
    assert_eq!(parsed.records[5].rssi, Some(-45));
}

#[test]
fn midnight_and_offset_split_days() {
    let recs = [record("a", 86_399), record("a", 86_400), record("a", 3_600)];
    let utc = build_point_sequences(&recs, 0);
    assert_eq!(utc.len(), 2);
    // at UTC+2 the first and third land on the same local day
    let east = build_point_sequences(&recs, 7_200);
    let sizes: Vec<usize> = east.values().map(|ps| ps.timestamps.len()).collect();
    assert_eq!(sizes, vec![1, 2]);
}

fn arb_records() -> impl Strategy<Value = Vec<(u8, i64)>> {
    proptest::collection::vec((0u8..4, 0i64..3 * 86_400), 0..60)
}

proptest! {
    #[test]
    fn grouping_ignores_record_order(recs in arb_records(), seed in any::<u64>()) {
        let recs: Vec<SensorRecord> = recs.iter().map(|&(s, t)| record(&format!("s{s}"), t)).collect();
        let mut shuffled = recs.clone();
        let n = shuffled.len();
        for i in (1..n).rev() {
            shuffled.swap(i, (seed.wrapping_mul(i as u64 + 7) % (i as u64 + 1)) as usize);
        }
        let a = build_point_sequences(&recs, 0);
        prop_assert_eq!(&a, &build_point_sequences(&shuffled, 0));

        let mut per_key: BTreeMap<_, usize> = BTreeMap::new();
        for r in &recs {
            let (day, _) = visitpat::ingest::day_and_offset(r.timestamp, 0);
            *per_key.entry((r.subject_id.clone(), day)).or_default() += 1;
        }
        for (k, ps) in &a {
            prop_assert!(ps.timestamps.windows(2).all(|w| w[0] < w[1]));
            prop_assert_eq!(ps.timestamps.len() + ps.duplicates, per_key[&(k.subject_id.clone(), k.day)]);
        }
    }

    #[test]
    fn delta_is_monotone_in_quantile(
        gaps in proptest::collection::vec(1u32..5000, 1..80),
        q1 in 0.01f64..1.0,
        q2 in 0.01f64..1.0,
    ) {
        let h = GapHistogram { gaps };
        let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
        prop_assert!(estimate_delta(&h, lo).unwrap() <= estimate_delta(&h, hi).unwrap());
    }

    #[test]
    fn wide_gaps_leave_a_zero_bit(start in 0u32..40_000, gap in 901u32..20_000) {
        let ps = visitpat::ingest::PointSequence {
            key: visitpat::ingest::SeqKey {
                subject_id: "x".into(),
                day: chrono::NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            },
            timestamps: vec![start, start + gap],
            duplicates: 0,
        };
        prop_assert_eq!(sessionize(&ps, 900).intervals.len(), 2);
        let bis = to_bis(&ps, 900, 450);
        let (a, b) = ((start / 450) as usize, ((start + gap) / 450) as usize);
        prop_assert!(bis.bits[a] && bis.bits[b]);
        prop_assert!(bis.bits[a..=b].iter().any(|&x| !x));
    }
}

#[test]
fn raw_export_preprocesses_back_to_the_same_bits() {
    let data = generate(&SynthParams {
        n: 80,
        false_neg_p: 0.0,
        ..SynthParams::defaults(3)
    })
    .unwrap();
    let mut raw = Vec::new();
    write_raw(&mut raw, &data.sequences).unwrap();
    let parsed = parse_trace(Cursor::new(raw), &TraceSchema::default()).unwrap();
    let ps = build_point_sequences(&parsed.records, 0);
    let back: BTreeMap<String, Vec<bool>> = ps
        .values()
        .map(|p| (p.key.subject_id.clone(), to_bis(p, 900, 450).bits))
        .collect();
    assert_eq!(back.len(), data.sequences.len());
    for s in &data.sequences {
        assert_eq!(back[&s.key.subject_id], s.bits, "{}", s.key.subject_id);
    }
}
