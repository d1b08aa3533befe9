use std::collections::{BTreeMap, BTreeSet};

use medsyn_core::icd10::CodeTable;
use medsyn_core::record_pipeline::{
    build_records, corpus_stats, generate_raw_corpus, generate_synthetic, read_diagnoses, read_notes, read_store,
    sample_test_set, write_rows, write_store, RawCorpusSpec, SynthConfig,
};
use proptest::prelude::*;

#[test]
fn raw_corpus_round_trips_through_files() {
    let table = CodeTable::bundled_sample();
    let spec = RawCorpusSpec::new(30, 6, 4);
    let (notes, diags) = generate_raw_corpus(5, &spec, &table);
    let dir = tempfile::tempdir().unwrap();
    for (n, d) in [("notes.csv", "diagnoses.csv"), ("notes.jsonl", "diagnoses.jsonl")] {
        write_rows(dir.path().join(n), &notes).unwrap();
        write_rows(dir.path().join(d), &diags).unwrap();
        let notes_back = read_notes(dir.path().join(n)).unwrap();
        let diags_back = read_diagnoses(dir.path().join(d)).unwrap();
        assert_eq!(notes_back, notes);
        assert_eq!(diags_back, diags);

        let report = build_records(&notes_back, &diags_back);
        assert_eq!(report.records.len(), 30);
        let counts: BTreeMap<_, _> = report.drop_counts().into_iter().collect();
        assert_eq!(counts.get("deceased_or_expired"), Some(&6));
        assert_eq!(counts.get("missing_section"), Some(&4));
        assert_eq!(report.non_icd10_rows, spec.total());
        for r in &report.records {
            let redacted = r.redacted_note();
            assert!(!redacted.contains(&r.gold_diagnosis_text));
        }
    }
}

#[test]
fn store_round_trip_and_sampling() {
    let table = CodeTable::bundled_sample();
    let records = generate_synthetic(13, 120, &table, &SynthConfig::default());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("records.jsonl");
    write_store(&path, &records).unwrap();
    let back = read_store(&path).unwrap();
    assert_eq!(back, records);

    let a = sample_test_set(&back, 40, 13).unwrap();
    let b = sample_test_set(&records, 40, 13).unwrap();
    assert_eq!(a, b);
    let ids: BTreeSet<_> = a.iter().map(|r| r.record_id.as_str()).collect();
    assert_eq!(ids.len(), 40);
    assert_ne!(a, sample_test_set(&records, 40, 14).unwrap());
    assert!(sample_test_set(&records, 121, 13).is_err());
}

#[test]
fn stats_match_a_recount() {
    let table = CodeTable::bundled_sample();
    let records = generate_synthetic(3, 500, &table, &SynthConfig::default());
    let stats = corpus_stats(&records).unwrap();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for r in &records {
        for c in &r.gold_codes {
            *counts.entry(c.normalized().to_string()).or_default() += 1;
        }
    }
    let total: usize = counts.values().sum();
    assert_eq!(stats.record_count, 500);
    assert_eq!(stats.total_code_count, total);
    assert_eq!(stats.unique_diagnosis_count, counts.len());
    assert!((stats.mean_as_f64() - total as f64 / 500.0).abs() < 1e-12);
    let max = *counts.values().max().unwrap();
    let first_max = counts.iter().find(|(_, n)| **n == max).unwrap().0;
    assert_eq!(stats.most_common_count, max);
    assert_eq!(stats.most_common_code.normalized(), first_max);
    let min = *counts.values().min().unwrap();
    assert_eq!(stats.rarest_count, min);
    assert_eq!(stats.rarest_codes.len(), counts.values().filter(|n| **n == min).count());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn sampling_is_a_subset_without_repeats(n_records in 1usize..60, frac in 0.0f64..=1.0, seed in any::<u64>()) {
        let table = CodeTable::bundled_sample();
        let records = generate_synthetic(1, n_records, &table, &SynthConfig::default());
        let n = ((n_records as f64) * frac) as usize;
        let s = sample_test_set(&records, n, seed).unwrap();
        prop_assert_eq!(s.len(), n);
        let ids: BTreeSet<_> = s.iter().map(|r| r.record_id.clone()).collect();
        prop_assert_eq!(ids.len(), n);
        prop_assert!(s.iter().all(|r| records.contains(r)));
        prop_assert_eq!(s, sample_test_set(&records, n, seed).unwrap());
    }
}
