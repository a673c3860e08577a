//! Correlation ranking of transformed features against the folding rate and
//! the named feature subsets built from it.

use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute Pearson correlation. A zero-variance input yields 0.
pub fn pearson_abs(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::InsufficientData(
            "correlation needs at least 2 points".into(),
        ));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok((sxy / (sxx * syy).sqrt()).abs().min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub feature: String,
    pub r: f64,
}

/// Features sorted by descending |R|; ties go to the lexicographically
/// smaller name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRanking {
    pub entries: Vec<RankedFeature>,
}

impl CorrelationRanking {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `feature,r` rows with a header, for external plotting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("feature,r\n");
        for e in &self.entries {
            out.push_str(&format!("{},{}\n", e.feature, e.r));
        }
        out
    }
}

/// Ranks the columns of a row-major matrix by |R| against `target`.
pub fn rank_features(
    names: &[String],
    rows: &[Vec<f64>],
    target: &[f64],
) -> Result<CorrelationRanking> {
    if rows.len() != target.len() {
        return Err(Error::DimensionMismatch {
            expected: target.len(),
            actual: rows.len(),
        });
    }
    if let Some(bad) = rows.iter().find(|r| r.len() != names.len()) {
        return Err(Error::DimensionMismatch {
            expected: names.len(),
            actual: bad.len(),
        });
    }
    let mut entries = names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            Ok(RankedFeature {
                feature: name.clone(),
                r: pearson_abs(&col, target)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    entries.sort_by(|a, b| {
        b.r.partial_cmp(&a.r)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.feature.cmp(&b.feature))
    });
    Ok(CorrelationRanking { entries })
}

/// An ordered, duplicate-free, non-empty selection of feature names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSubset {
    pub name: String,
    features: Vec<String>,
}

impl FeatureSubset {
    pub fn new(name: impl Into<String>, features: Vec<String>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::invalid("feature subset must not be empty"));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = features.iter().find(|f| !seen.insert(*f)) {
            return Err(Error::validation(dup, "duplicate feature in subset"));
        }
        Ok(FeatureSubset {
            name: name.into(),
            features,
        })
    }

    pub fn features(&self) -> &[String] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn contains(&self, feature: &str) -> bool {
        self.features.iter().any(|f| f == feature)
    }
}

/// The `n` best-ranked features, named `F{n}_{tag}`.
pub fn top_n(ranking: &CorrelationRanking, n: usize, tag: &str) -> Result<FeatureSubset> {
    if n == 0 || n > ranking.len() {
        return Err(Error::invalid(format!(
            "subset size {n} outside 1..={}",
            ranking.len()
        )));
    }
    FeatureSubset::new(
        format!("F{n}_{tag}"),
        ranking.entries[..n].iter().map(|e| e.feature.clone()).collect(),
    )
}

/// `a`'s features followed by the ones only `b` has. Named `{a}|{b}`.
pub fn subset_union(a: &FeatureSubset, b: &FeatureSubset) -> FeatureSubset {
    let mut features = a.features.clone();
    features.extend(b.features.iter().filter(|f| !a.contains(f)).cloned());
    FeatureSubset {
        name: format!("{}|{}", a.name, b.name),
        features,
    }
}

/// Features of `a` also in `b`, in `a`'s order. Named `{a}&{b}`.
///
/// An empty intersection cannot be used for training and is reported as an
/// error.
pub fn subset_intersection(a: &FeatureSubset, b: &FeatureSubset) -> Result<FeatureSubset> {
    let features: Vec<String> = a.features.iter().filter(|f| b.contains(f)).cloned().collect();
    if features.is_empty() {
        return Err(Error::invalid(format!(
            "intersection of {} and {} is empty",
            a.name, b.name
        )));
    }
    Ok(FeatureSubset {
        name: format!("{}&{}", a.name, b.name),
        features,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn subset(name: &str, fs: &[&str]) -> FeatureSubset {
        FeatureSubset::new(name, fs.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    #[test]
    fn pearson_examples() {
        assert_eq!(pearson_abs(&[1., 2., 3.], &[2., 4., 6.]).unwrap(), 1.0);
        assert_eq!(pearson_abs(&[1., 2., 3.], &[3., 2., 1.]).unwrap(), 1.0);
        assert!((pearson_abs(&[1., 2., 3., 4.], &[1., 3., 2., 4.]).unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(pearson_abs(&[1., 1., 1.], &[1., 2., 3.]).unwrap(), 0.0);
        assert!(pearson_abs(&[1.], &[1.]).is_err());
        assert!(pearson_abs(&[1., 2.], &[1.]).is_err());
    }

    #[test]
    fn ranking_copy_of_target_first() {
        let names = vec!["noise".to_string(), "copy".to_string()];
        let target = [1.0, 5.0, 2.0, 8.0];
        let rows: Vec<Vec<f64>> = target.iter().zip([3.0, 1.0, 1.0, 2.0]).map(|(&t, n)| vec![n, t]).collect();
        let r = rank_features(&names, &rows, &target).unwrap();
        assert_eq!(r.entries[0].feature, "copy");
        assert_eq!(r.entries[0].r, 1.0);
        assert_eq!(r, rank_features(&names, &rows, &target).unwrap());
        assert!(rank_features(&names, &rows[..3], &target).is_err());
    }

    #[test]
    fn ranking_of_noise_is_weak() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let names: Vec<String> = (0..5).map(|i| format!("n{i}")).collect();
        let rows: Vec<Vec<f64>> = (0..200).map(|_| (0..5).map(|_| rng.gen::<f64>()).collect()).collect();
        let target: Vec<f64> = (0..200).map(|_| rng.gen::<f64>()).collect();
        let r = rank_features(&names, &rows, &target).unwrap();
        assert_eq!(r.len(), 5);
        assert!(r.entries.iter().all(|e| e.r < 0.3));
        assert!(r.entries.windows(2).all(|w| w[0].r >= w[1].r));
    }

    #[test]
    fn ties_break_by_name() {
        let names = vec!["b".to_string(), "a".to_string()];
        let rows = vec![vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]];
        let r = rank_features(&names, &rows, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r.entries[0].feature, "a");
    }

    #[test]
    fn top_n_prefixes() {
        let ranking = CorrelationRanking {
            entries: ["a", "b", "c"]
                .iter()
                .zip([0.9, 0.5, 0.1])
                .map(|(f, r)| RankedFeature { feature: f.to_string(), r })
                .collect(),
        };
        let s = top_n(&ranking, 2, "A").unwrap();
        assert_eq!(s.name, "F2_A");
        assert_eq!(s.features(), ["a", "b"]);
        assert_eq!(top_n(&ranking, 3, "A").unwrap().len(), 3);
        assert_eq!(top_n(&ranking, 1, "B").unwrap().features(), ["a"]);
        assert!(top_n(&ranking, 0, "A").is_err());
        assert!(top_n(&ranking, 4, "A").is_err());
        assert!(ranking.to_csv().starts_with("feature,r\na,0.9\n"));
    }

    #[test]
    fn union_and_intersection() {
        let a = subset("A", &["f1", "f2"]);
        let b = subset("B", &["f2", "f3"]);
        assert_eq!(subset_union(&a, &b).features(), ["f1", "f2", "f3"]);
        assert_eq!(subset_intersection(&a, &b).unwrap().features(), ["f2"]);
        assert_eq!(subset_union(&a, &a).features(), a.features());
        assert_eq!(subset_intersection(&a, &a).unwrap().features(), a.features());
        let c = subset("C", &["f9"]);
        assert!(subset_intersection(&a, &c).is_err());
    }

    #[test]
    fn subset_invariants() {
        assert!(FeatureSubset::new("x", vec![]).is_err());
        assert!(FeatureSubset::new("x", vec!["a".into(), "a".into()]).is_err());
    }
}
