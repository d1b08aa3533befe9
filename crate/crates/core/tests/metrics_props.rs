//! Set metrics against a brute-force oracle.

use std::collections::BTreeSet;

use medsyn_core::exact;
use medsyn_core::icd10::{normalize, ChapterTable, Icd10Code};
use medsyn_core::metrics::{sample_metrics, Granularity, SampleScore};
use num_rational::BigRational;
use proptest::prelude::*;

fn code_token() -> impl Strategy<Value = String> {
    prop_oneof![
        8 => ("[EIJMZ]", 0u8..12, proptest::option::of(0u8..10)).prop_map(|(l, n, s)| match s {
            Some(s) => format!("{l}{n:02}.{s}"),
            None => format!("{l}{n:02}"),
        }),
        1 => Just("10.9".to_string()),
        1 => Just("E1.09".to_string()),
    ]
}

fn codes(min: usize) -> impl Strategy<Value = Vec<Icd10Code>> {
    proptest::collection::vec(code_token(), min..7)
        .prop_map(|toks| toks.iter().map(|t| normalize(t).unwrap()).collect())
}

/// Linear-scan chapter lookup over the table rows.
fn chapter_scan(category: &str) -> Option<String> {
    ChapterTable::default_cm()
        .rows()
        .iter()
        .find(|r| r.start.as_str() <= category && category <= r.end.as_str())
        .map(|r| r.id.as_str().to_string())
}

fn oracle_set(codes: &[Icd10Code], g: Granularity, side: &str) -> BTreeSet<String> {
    codes
        .iter()
        .map(|c| {
            let n = c.normalized();
            let valid = n.len() >= 3
                && n.len() <= 7
                && n.as_bytes()[0].is_ascii_uppercase()
                && n.bytes().all(|b| b.is_ascii_uppercase() || b.is_ascii_digit());
            let key = if valid {
                match g {
                    Granularity::Category => Some(n[..3].to_string()),
                    Granularity::Chapter => chapter_scan(&n[..3]),
                }
            } else {
                None
            };
            key.unwrap_or_else(|| format!("{side}:{n}"))
        })
        .collect()
}

/// Returns (jaccard, precision, recall, f1) as plain fractions.
fn oracle(gold: &[Icd10Code], pred: &[Icd10Code], g: Granularity) -> [(usize, usize); 4] {
    let gs = oracle_set(gold, g, "gold");
    let ps = oracle_set(pred, g, "pred");
    let inter = gs.intersection(&ps).count();
    let union = gs.union(&ps).count();
    let p = (inter, ps.len().max(1));
    let r = (inter, gs.len());
    // f1 = 2pr/(p+r) = 2*inter/(|P|+|G|) whenever inter > 0
    let f1 = if inter == 0 { (0, 1) } else { (2 * inter, ps.len() + gs.len()) };
    [(inter, union), p, r, f1]
}

fn frac((n, d): (usize, usize)) -> BigRational {
    exact::from_ratio(n, d)
}

fn check(s: &SampleScore, want: [(usize, usize); 4]) -> Result<(), TestCaseError> {
    prop_assert_eq!(&s.jaccard, &frac(want[0]));
    prop_assert_eq!(&s.precision, &frac(want[1]));
    prop_assert_eq!(&s.recall, &frac(want[2]));
    prop_assert_eq!(&s.f1, &frac(want[3]));
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn matches_oracle(gold in codes(1), pred in codes(0)) {
        for g in [Granularity::Category, Granularity::Chapter] {
            let s = sample_metrics(&gold, &pred, g).unwrap();
            check(&s, oracle(&gold, &pred, g))?;
        }
    }

    #[test]
    fn bounds_and_orderings(gold in codes(1), pred in codes(0)) {
        let zero = BigRational::from_integer(0.into());
        let one = BigRational::from_integer(1.into());
        for g in [Granularity::Category, Granularity::Chapter] {
            let s = sample_metrics(&gold, &pred, g).unwrap();
            for v in [&s.jaccard, &s.precision, &s.recall, &s.f1] {
                prop_assert!(*v >= zero && *v <= one);
            }
            prop_assert!(s.jaccard <= s.precision && s.jaccard <= s.recall);
            let lo = (&s.precision).min(&s.recall);
            let hi = (&s.precision).max(&s.recall);
            prop_assert!(&s.f1 >= lo && &s.f1 <= hi);
        }
        // chapter sets are never larger than category sets
        let cat = oracle_set(&gold, Granularity::Category, "gold");
        let chap = oracle_set(&gold, Granularity::Chapter, "gold");
        prop_assert!(chap.len() <= cat.len());
    }

    #[test]
    fn permutation_and_duplicate_invariance(gold in codes(1), pred in codes(0), seed in any::<u64>()) {
        let mut shuffled = pred.clone();
        let k = shuffled.len().max(1);
        shuffled.rotate_left((seed as usize) % k);
        shuffled.extend(pred.iter().take(2).cloned());
        for g in [Granularity::Category, Granularity::Chapter] {
            let a = sample_metrics(&gold, &pred, g).unwrap();
            let b = sample_metrics(&gold, &shuffled, g).unwrap();
            prop_assert_eq!((a.jaccard, a.precision, a.recall, a.f1), (b.jaccard, b.precision, b.recall, b.f1));
        }
    }

    #[test]
    fn identity_scores_one(gold in codes(1)) {
        let one = BigRational::from_integer(1.into());
        for g in [Granularity::Category, Granularity::Chapter] {
            let s = sample_metrics(&gold, &gold, g).unwrap();
            // invalid gold tokens cannot be matched by a prediction
            let invalid = gold.iter().any(|c| !c.is_syntactically_valid());
            if !invalid {
                prop_assert_eq!(&s.f1, &one);
                prop_assert_eq!(&s.jaccard, &one);
            }
        }
    }
}
