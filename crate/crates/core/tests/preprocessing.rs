use std::collections::BTreeMap;

use foldkin::dataset::{
    parse_records, serialize_records, split_ab, synthesize_dataset, train_test_partition, Dataset,
    FoldType, ProteinRecord,
};
use foldkin::preprocess::{
    encode_category, filter_outliers, fit_iqr, fit_m_estimate, fit_pipeline, fit_zscore,
    apply_zscore, raw_numeric, standardize_rate, PreprocessConfig, RateStandardizationParams,
    CATEGORICAL_FEATURES, NUMERIC_FEATURES,
};
use proptest::prelude::*;

fn record() -> impl Strategy<Value = ProteinRecord> {
    (
        "[A-Za-z0-9_]{1,8}",
        prop::sample::select(vec!["alpha", "beta", "alpha/beta", "alpha+beta"]),
        prop::sample::select(vec!["SH3", "Ig-like", "ferredoxin", "a,b fold"]),
        1u32..400,
        0u32..400,
        0.0f64..=14.0,
        -10.0f64..80.0,
        any::<bool>(),
        -20.0f64..20.0,
        0.0f64..=1.0,
        prop::option::of(-10.0f64..15.0),
    )
        .prop_map(|(psn, class, fold, l, lpdb, ph, temp, two, ln_ku, beta_t, ln_kf)| ProteinRecord {
            psn,
            class: class.into(),
            fold: fold.into(),
            lpdb: lpdb.min(l),
            l,
            ph,
            temp,
            f_type: if two { FoldType::TwoState } else { FoldType::MultiState },
            ln_ku,
            beta_t,
            ln_kf,
        })
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    sorted[lo] + (h - h.floor()) * (sorted[hi] - sorted[lo])
}

fn category<'a>(r: &'a ProteinRecord, name: &str) -> &'a str {
    match name {
        "class" => &r.class,
        "fold" => &r.fold,
        _ => r.f_type.as_str(),
    }
}

/// Every stage written out longhand for the default configuration.
fn brute_force_transform(train: &[ProteinRecord], r: &ProteinRecord) -> Vec<f64> {
    let rate = RateStandardizationParams::default();
    let to_ref = |ln_k: f64, temp: f64| {
        let t = temp + 273.15;
        ln_k + (rate.t_ref / t).ln()
    };
    let raw = |r: &ProteinRecord, name: &str| raw_numeric(r, name).unwrap();

    let mut kept: Vec<&ProteinRecord> = train.iter().collect();
    let mut bounds = Vec::new();
    for name in NUMERIC_FEATURES {
        let mut col: Vec<f64> = train.iter().map(|r| raw(r, name)).collect();
        col.sort_by(f64::total_cmp);
        let (q1, q3) = (quantile(&col, 0.25), quantile(&col, 0.75));
        bounds.push((name, q1 - 1.5 * (q3 - q1), q3 + 1.5 * (q3 - q1)));
    }
    kept.retain(|r| bounds.iter().all(|&(n, lo, hi)| (lo..=hi).contains(&raw(r, n))));

    let mut numeric = Vec::new();
    for name in NUMERIC_FEATURES {
        let adjust = |r: &ProteinRecord| {
            if name == "ln_ku" {
                to_ref(r.ln_ku, r.temp)
            } else {
                raw(r, name)
            }
        };
        let v = adjust(r);
        if ["lpdb", "l", "ph", "temp"].contains(&name) {
            let n = kept.len() as f64;
            let mean = kept.iter().map(|k| adjust(k)).sum::<f64>() / n;
            let var = kept.iter().map(|k| (adjust(k) - mean).powi(2)).sum::<f64>() / n;
            numeric.push(if var == 0.0 { 0.0 } else { (v - mean) / var.sqrt() });
        } else {
            numeric.push(v);
        }
    }

    let targets: Vec<f64> = kept.iter().map(|k| to_ref(k.ln_kf.unwrap(), k.temp)).collect();
    let prior = targets.iter().sum::<f64>() / targets.len() as f64;
    let mut encoded = Vec::new();
    for name in CATEGORICAL_FEATURES {
        let c = category(r, name);
        let (mut n, mut s) = (0.0, 0.0);
        for (k, t) in kept.iter().zip(&targets) {
            if category(k, name) == c {
                n += 1.0;
                s += t;
            }
        }
        encoded.push((s + 20.0 * prior) / (n + 20.0));
    }
    numeric.extend(encoded);
    numeric
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_round_trip(records in prop::collection::vec(record(), 0..20)) {
        let text = serialize_records(&records).unwrap();
        prop_assert_eq!(parse_records(&text, true).unwrap(), records);
    }

    #[test]
    fn synthetic_records_validate(n in 1usize..200, seed in any::<u64>()) {
        let d = synthesize_dataset(n, seed).unwrap();
        prop_assert_eq!(d.len(), n);
        for r in d.records() {
            prop_assert!(r.validate().is_ok());
        }
        prop_assert_eq!(&synthesize_dataset(n, seed).unwrap(), &d);
    }

    #[test]
    fn ab_split_partitions(n in 1usize..120, seed in any::<u64>()) {
        let d = synthesize_dataset(n, seed).unwrap();
        let s = split_ab(&d);
        prop_assert_eq!(s.a.len() + s.b.len(), n);
        prop_assert!(s.a.records().iter().all(|r| r.f_type == FoldType::TwoState));
        prop_assert!(s.b.records().iter().all(|r| r.f_type == FoldType::MultiState));
    }

    #[test]
    fn train_test_partition_is_a_deterministic_partition(
        n in 2usize..150,
        frac in 0.05f64..0.95,
        seed in any::<u64>(),
    ) {
        let d = synthesize_dataset(n, 3).unwrap();
        let (train, test) = train_test_partition(&d, frac, seed).unwrap();
        prop_assert!(!train.is_empty() && !test.is_empty());
        let mut names: Vec<&str> = train.records().iter().chain(test.records()).map(|r| r.psn.as_str()).collect();
        names.sort_unstable();
        let mut all: Vec<&str> = d.records().iter().map(|r| r.psn.as_str()).collect();
        all.sort_unstable();
        prop_assert_eq!(names, all);
        let again = train_test_partition(&d, frac, seed).unwrap();
        prop_assert_eq!(again, (train, test));
    }

    #[test]
    fn iqr_bounds_are_ordered(values in prop::collection::vec(-1e6f64..1e6, 4..100)) {
        let b = fit_iqr(&values).unwrap();
        prop_assert!(b.lower <= b.q1 && b.q1 <= b.q3 && b.q3 <= b.upper);
    }

    #[test]
    fn outlier_filter_is_a_subset_and_idempotent(n in 8usize..120, seed in any::<u64>()) {
        let d = synthesize_dataset(n, seed).unwrap();
        let mut bounds = BTreeMap::new();
        for name in NUMERIC_FEATURES {
            let col: Vec<f64> = d.records().iter().map(|r| raw_numeric(r, name).unwrap()).collect();
            bounds.insert(name.to_string(), fit_iqr(&col).unwrap());
        }
        let (kept, removed) = filter_outliers(&d, &bounds).unwrap();
        prop_assert_eq!(kept.len() + removed, n);
        prop_assert!(kept.records().iter().all(|r| d.records().contains(r)));
        let (twice, again) = filter_outliers(&kept, &bounds).unwrap();
        prop_assert_eq!(again, 0);
        prop_assert_eq!(twice.records(), kept.records());
    }

    #[test]
    fn rate_at_reference_temperature_is_identity(ln_k in -30.0f64..30.0) {
        let p = RateStandardizationParams::default();
        prop_assert_eq!(standardize_rate(ln_k, 25.0, &p).unwrap(), ln_k);
    }

    #[test]
    fn zscored_column_is_standard(values in prop::collection::vec(-1e3f64..1e3, 2..200)) {
        let p = fit_zscore(&values).unwrap();
        prop_assume!(p.std > 1e-6);
        let z: Vec<f64> = values.iter().map(|&v| apply_zscore(v, &p)).collect();
        let n = z.len() as f64;
        let mean = z.iter().sum::<f64>() / n;
        let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        prop_assert!(mean.abs() < 1e-9);
        prop_assert!((var.sqrt() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn encoding_lies_between_prior_and_category_mean(
        rows in prop::collection::vec((0usize..4, -10.0f64..10.0), 1..60),
        m in 0.0f64..50.0,
    ) {
        let names = ["a", "b", "c", "d"];
        let cats: Vec<&str> = rows.iter().map(|(c, _)| names[*c]).collect();
        let targets: Vec<f64> = rows.iter().map(|(_, t)| *t).collect();
        let table = fit_m_estimate(&cats, &targets, m).unwrap();
        for (name, s) in &table.per_category {
            let mean = s.target_sum / s.count as f64;
            let e = encode_category(name, &table);
            let (lo, hi) = (mean.min(table.prior), mean.max(table.prior));
            prop_assert!(e >= lo - 1e-9 && e <= hi + 1e-9);
        }
        prop_assert_eq!(encode_category("unseen", &table), table.prior);
    }

    #[test]
    fn pipeline_matches_brute_force(n in 8usize..50, seed in any::<u64>()) {
        let d = synthesize_dataset(n, seed).unwrap();
        let fitted = fit_pipeline(&d, &PreprocessConfig::default()).unwrap();
        for r in d.records() {
            let got = fitted.transform(r).unwrap();
            let want = brute_force_transform(d.records(), r);
            for (g, w) in got.iter().zip(&want) {
                prop_assert!((g - w).abs() <= 1e-9, "{:?} vs {:?}", got, want);
            }
        }
    }

    #[test]
    fn transform_is_pure(n in 8usize..80, seed in any::<u64>()) {
        let d = synthesize_dataset(n, seed).unwrap();
        let before = d.clone();
        let fitted = fit_pipeline(&d, &PreprocessConfig::default()).unwrap();
        let frozen = fitted.clone();
        let first = fitted.transform_all(&d).unwrap();
        prop_assert_eq!(fitted.transform_all(&d).unwrap(), first);
        prop_assert_eq!(fitted, frozen);
        prop_assert_eq!(d, before);
    }
}

#[test]
fn preprocessor_json_round_trip() {
    let d: Dataset = synthesize_dataset(60, 9).unwrap();
    let fitted = fit_pipeline(&d, &PreprocessConfig::default()).unwrap();
    let back = foldkin::preprocess::FittedPreprocessor::from_json(&fitted.to_json().unwrap()).unwrap();
    assert_eq!(back, fitted);
}
