//! Dataset analyses: score distributions per engagement level, two-sample
//! Kolmogorov-Smirnov tests, and adjective frequency tables.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotate::{extract_adjectives, AnnotatedBatch, Lexicon, Sentiment};

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("empty sample passed to K-S test")]
    EmptySample,
    #[error("non-finite value in sample")]
    NonFinite,
}

/// Highest engagement action taken on an item. Levels are mutually
/// exclusive: purchased > liked > clicked > not clicked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engagement {
    NotClicked,
    Clicked,
    Liked,
    Purchased,
}

impl Engagement {
    pub fn from_flags(clicked: bool, liked: bool, purchased: bool) -> Self {
        if purchased {
            Engagement::Purchased
        } else if liked {
            Engagement::Liked
        } else if clicked {
            Engagement::Clicked
        } else {
            Engagement::NotClicked
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Engagement::NotClicked => "not_clicked",
            Engagement::Clicked => "clicked",
            Engagement::Liked => "liked",
            Engagement::Purchased => "purchased",
        }
    }
}

/// One normalized score with its engagement label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreSample {
    pub norm_score: f64,
    pub engagement: Engagement,
}

/// Flatten annotated batches into engagement-labelled score samples.
pub fn collect_samples(annotated: &[AnnotatedBatch]) -> Vec<ScoreSample> {
    let mut out = Vec::new();
    for ab in annotated {
        for (item, ann) in ab.batch.items.iter().zip(&ab.annotations) {
            out.push(ScoreSample {
                norm_score: ann.norm_score,
                engagement: Engagement::from_flags(item.clicked, item.liked, item.purchased),
            });
        }
    }
    out
}

pub const HISTOGRAM_BINS: usize = 20;

/// Per-group descriptive statistics over [0, 1] scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    /// 20 equal bins over [0, 1]; the last bin is closed at 1.0.
    pub histogram: Vec<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SummaryReport {
    pub groups: BTreeMap<String, GroupSummary>,
    pub warnings: Vec<String>,
}

fn summarize_group(scores: &mut Vec<f64>) -> GroupSummary {
    scores.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    let count = scores.len();
    let mean = scores.iter().sum::<f64>() / count as f64;
    let median = if count % 2 == 1 {
        scores[count / 2]
    } else {
        (scores[count / 2 - 1] + scores[count / 2]) / 2.0
    };
    let mut histogram = vec![0usize; HISTOGRAM_BINS];
    for &s in scores.iter() {
        let bin = ((s * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
        histogram[bin] += 1;
    }
    GroupSummary {
        count,
        mean,
        median,
        histogram,
    }
}

/// Group samples by engagement level; empty levels are omitted with a
/// warning entry.
pub fn summarize(samples: &[ScoreSample]) -> SummaryReport {
    let mut buckets: BTreeMap<&'static str, Vec<f64>> = BTreeMap::new();
    for s in samples {
        buckets.entry(s.engagement.label()).or_default().push(s.norm_score);
    }
    let mut report = SummaryReport::default();
    for level in [
        Engagement::NotClicked,
        Engagement::Clicked,
        Engagement::Liked,
        Engagement::Purchased,
    ] {
        match buckets.get_mut(level.label()) {
            Some(scores) if !scores.is_empty() => {
                report
                    .groups
                    .insert(level.label().to_string(), summarize_group(scores));
            }
            _ => report
                .warnings
                .push(format!("group {} is empty; omitted", level.label())),
        }
    }
    report
}

/// Two-sample K-S test outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub d_statistic: f64,
    pub p_value: f64,
    pub n1: usize,
    pub n2: usize,
}

/// Two-sided two-sample Kolmogorov-Smirnov test.
///
/// `D = sup |ECDF_a − ECDF_b|`, evaluated at the pooled sorted points so
/// ties are handled exactly. The p-value uses the asymptotic Kolmogorov
/// distribution with effective size `n = n1·n2/(n1+n2)`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult, AnalyticsError> {
    if a.is_empty() || b.is_empty() {
        return Err(AnalyticsError::EmptySample);
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(AnalyticsError::NonFinite);
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_unstable_by(|p, q| p.partial_cmp(q).expect("finite"));
    ys.sort_unstable_by(|p, q| p.partial_cmp(q).expect("finite"));

    let n1 = xs.len();
    let n2 = ys.len();
    let mut d: f64 = 0.0;
    let (mut i, mut j) = (0usize, 0usize);
    // Sweep the pooled values; at each distinct value x advance both counts
    // past every element equal to x, then compare the ECDFs at x.
    while i < n1 || j < n2 {
        let x = match (xs.get(i), ys.get(j)) {
            (Some(&xv), Some(&yv)) => xv.min(yv),
            (Some(&xv), None) => xv,
            (None, Some(&yv)) => yv,
            (None, None) => break,
        };
        while i < n1 && xs[i] <= x {
            i += 1;
        }
        while j < n2 && ys[j] <= x {
            j += 1;
        }
        let diff = (i as f64 / n1 as f64 - j as f64 / n2 as f64).abs();
        if diff > d {
            d = diff;
        }
    }

    let n_eff = (n1 as f64 * n2 as f64) / (n1 + n2) as f64;
    let lambda = n_eff.sqrt() * d;
    Ok(KsResult {
        d_statistic: d,
        p_value: kolmogorov_survival(lambda),
        n1,
        n2,
    })
}

/// Survival function of the Kolmogorov distribution,
/// `Q(λ) = 2 Σ_{j≥1} (−1)^{j−1} e^{−2 j² λ²}`, truncated when terms drop
/// below 1e-12. Below λ = 0.2 the series value is 1 within that truncation
/// tolerance, so 1.0 is returned directly.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=1000 {
        let term = (-2.0 * (j as f64) * (j as f64) * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-12 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(f64::MIN_POSITIVE, 1.0)
}

/// One named distribution contrast with its significance flag.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Contrast {
    pub name: String,
    pub result: KsResult,
    pub significant: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ContrastReport {
    pub alpha: f64,
    pub contrasts: Vec<Contrast>,
    pub warnings: Vec<String>,
}

/// K-S contrasts of each engagement level against not-clicked, plus
/// liked-vs-clicked and purchased-vs-clicked. Contrasts with an empty side
/// are omitted with a warning.
pub fn engagement_contrasts(samples: &[ScoreSample], alpha: f64) -> ContrastReport {
    let scores_of = |level: Engagement| -> Vec<f64> {
        samples
            .iter()
            .filter(|s| s.engagement == level)
            .map(|s| s.norm_score)
            .collect()
    };
    let pairs = [
        ("clicked_vs_not_clicked", Engagement::Clicked, Engagement::NotClicked),
        ("liked_vs_not_clicked", Engagement::Liked, Engagement::NotClicked),
        ("purchased_vs_not_clicked", Engagement::Purchased, Engagement::NotClicked),
        ("liked_vs_clicked", Engagement::Liked, Engagement::Clicked),
        ("purchased_vs_clicked", Engagement::Purchased, Engagement::Clicked),
    ];
    let mut report = ContrastReport {
        alpha,
        ..ContrastReport::default()
    };
    for (name, lhs, rhs) in pairs {
        let a = scores_of(lhs);
        let b = scores_of(rhs);
        if a.is_empty() || b.is_empty() {
            report
                .warnings
                .push(format!("contrast {name} omitted: empty group"));
            continue;
        }
        let result = ks_two_sample(&a, &b).expect("non-empty samples");
        report.contrasts.push(Contrast {
            name: name.to_string(),
            significant: result.p_value < alpha,
            result,
        });
    }
    report
}

/// Frequency of one adjective in one click-status group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreqEntry {
    pub adjective: String,
    pub count: usize,
    pub sentiment: Sentiment,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AdjectiveTable {
    pub clicked: Vec<FreqEntry>,
    pub not_clicked: Vec<FreqEntry>,
    /// In the clicked top-N but not the not-clicked top-N.
    pub unique_to_clicked: Vec<String>,
    pub unique_to_not_clicked: Vec<String>,
    pub top_n: usize,
}

/// Count lexicon adjectives per click status across all annotations. An
/// adjective counts once per item analysis. "Unique" lists compare the two
/// groups' top-N entries.
pub fn adjective_table(
    annotated: &[AnnotatedBatch],
    lexicon: &Lexicon,
    top_n: usize,
) -> AdjectiveTable {
    let mut clicked: BTreeMap<String, usize> = BTreeMap::new();
    let mut not_clicked: BTreeMap<String, usize> = BTreeMap::new();
    for ab in annotated {
        for (item, ann) in ab.batch.items.iter().zip(&ab.annotations) {
            let bucket = if item.clicked {
                &mut clicked
            } else {
                &mut not_clicked
            };
            for (adj, _) in extract_adjectives(&ann.analysis_text, lexicon) {
                *bucket.entry(adj).or_insert(0) += 1;
            }
        }
    }
    let rank = |m: &BTreeMap<String, usize>| -> Vec<FreqEntry> {
        let mut entries: Vec<FreqEntry> = m
            .iter()
            .map(|(adj, &count)| FreqEntry {
                adjective: adj.clone(),
                count,
                sentiment: lexicon.get(adj).unwrap_or(Sentiment::Neutral),
            })
            .collect();
        entries.sort_by(|a, b| b.count.cmp(&a.count).then(a.adjective.cmp(&b.adjective)));
        entries.truncate(top_n);
        entries
    };
    let clicked_top = rank(&clicked);
    let not_clicked_top = rank(&not_clicked);
    let names = |v: &[FreqEntry]| -> Vec<String> {
        v.iter().map(|e| e.adjective.clone()).collect()
    };
    let clicked_names = names(&clicked_top);
    let not_clicked_names = names(&not_clicked_top);
    AdjectiveTable {
        unique_to_clicked: clicked_names
            .iter()
            .filter(|a| !not_clicked_names.contains(a))
            .cloned()
            .collect(),
        unique_to_not_clicked: not_clicked_names
            .iter()
            .filter(|a| !clicked_names.contains(a))
            .cloned()
            .collect(),
        clicked: clicked_top,
        not_clicked: not_clicked_top,
        top_n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent oracle: evaluate both ECDFs at every pooled point by
    /// linear counting.
    fn ks_d_brute_force(a: &[f64], b: &[f64]) -> f64 {
        let mut d: f64 = 0.0;
        for &x in a.iter().chain(b) {
            let ca = a.iter().filter(|&&v| v <= x).count() as f64 / a.len() as f64;
            let cb = b.iter().filter(|&&v| v <= x).count() as f64 / b.len() as f64;
            d = d.max((ca - cb).abs());
        }
        d
    }

    #[test]
    fn identical_samples_give_zero_d_and_p_one() {
        let a = [0.4, 0.1, 0.9, 0.3];
        let r = ks_two_sample(&a, &a).unwrap();
        assert_eq!(r.d_statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn disjoint_supports_give_d_one() {
        let a = [0.1, 0.2, 0.3];
        let b = [0.7, 0.8, 0.9];
        let r = ks_two_sample(&a, &b).unwrap();
        assert_eq!(r.d_statistic, 1.0);
    }

    #[test]
    fn overlapping_integer_samples_match_hand_enumeration() {
        // Pooled points 1..5: ECDF_a = .25/.5/.75/1/1, ECDF_b = 0/.25/.5/.75/1,
        // so D = 0.25 at every interior point.
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [2.0, 3.0, 4.0, 5.0];
        let r = ks_two_sample(&a, &b).unwrap();
        assert_eq!(r.d_statistic, 0.25);
        assert_eq!(r.d_statistic, ks_d_brute_force(&a, &b));
    }

    #[test]
    fn empty_sample_is_an_error() {
        assert!(matches!(
            ks_two_sample(&[], &[1.0]),
            Err(AnalyticsError::EmptySample)
        ));
    }

    #[test]
    fn survival_function_reference_values() {
        // Q(λ) spot values from the series definition itself, computed at
        // high truncation depth externally: Q(0.5) ≈ 0.9639, Q(1.0) ≈ 0.2700,
        // Q(1.5) ≈ 0.0222, Q(2.0) ≈ 0.000670.
        let cases = [
            (0.5, 0.9639, 1e-3),
            (1.0, 0.2700, 1e-3),
            (1.5, 0.0222, 1e-3),
            (2.0, 0.000670, 1e-5),
        ];
        for (lambda, expected, tol) in cases {
            let got = kolmogorov_survival(lambda);
            assert!(
                (got - expected).abs() < tol,
                "Q({lambda}) = {got}, expected ≈ {expected}"
            );
        }
        assert_eq!(kolmogorov_survival(0.0), 1.0);
    }

    #[test]
    fn summarize_basics() {
        let samples: Vec<ScoreSample> = [0.2, 0.6, 1.0]
            .iter()
            .map(|&s| ScoreSample {
                norm_score: s,
                engagement: Engagement::Clicked,
            })
            .collect();
        let report = summarize(&samples);
        let g = &report.groups["clicked"];
        assert!((g.mean - 0.6).abs() < 1e-12);
        assert_eq!(g.median, 0.6);
        assert_eq!(g.count, 3);
        assert_eq!(g.histogram.iter().sum::<usize>(), 3);
        // Other three groups are empty and warned about.
        assert_eq!(report.warnings.len(), 3);
    }

    #[test]
    fn summarize_single_sample() {
        let samples = vec![ScoreSample {
            norm_score: 0.5,
            engagement: Engagement::Purchased,
        }];
        let report = summarize(&samples);
        let g = &report.groups["purchased"];
        assert_eq!(g.mean, 0.5);
        assert_eq!(g.median, 0.5);
    }

    #[test]
    fn median_uses_midpoint_for_even_counts() {
        let samples: Vec<ScoreSample> = [0.1, 0.2, 0.8, 0.9]
            .iter()
            .map(|&s| ScoreSample {
                norm_score: s,
                engagement: Engagement::NotClicked,
            })
            .collect();
        let report = summarize(&samples);
        assert_eq!(report.groups["not_clicked"].median, 0.5);
    }

    #[test]
    fn contrasts_detect_planted_shift() {
        // liked scores shifted +0.3 against not_clicked.
        let mut samples = Vec::new();
        for i in 0..200 {
            let base = (i % 100) as f64 / 200.0;
            samples.push(ScoreSample {
                norm_score: base,
                engagement: Engagement::NotClicked,
            });
            samples.push(ScoreSample {
                norm_score: (base + 0.3).min(1.0),
                engagement: Engagement::Liked,
            });
        }
        let report = engagement_contrasts(&samples, 0.05);
        let liked = report
            .contrasts
            .iter()
            .find(|c| c.name == "liked_vs_not_clicked")
            .unwrap();
        assert!(liked.significant, "p = {}", liked.result.p_value);
    }

    #[test]
    fn contrast_with_empty_group_is_omitted() {
        let samples = vec![
            ScoreSample {
                norm_score: 0.2,
                engagement: Engagement::NotClicked,
            },
            ScoreSample {
                norm_score: 0.8,
                engagement: Engagement::Clicked,
            },
        ];
        let report = engagement_contrasts(&samples, 0.05);
        assert!(report.contrasts.iter().all(|c| !c.name.contains("purchased")));
        assert!(report
            .warnings
            .iter()
            .any(|w| w.contains("purchased_vs_not_clicked")));
    }

    fn table_fixture(clicked_text: &str, unclicked_text: &str) -> Vec<AnnotatedBatch> {
        use crate::annotate::QualityAnnotation;
        use crate::ingest::{CandidateBatch, Impression};
        let items: Vec<Impression> = (0..2)
            .map(|i| Impression {
                item_id: format!("it{i}"),
                position: i as u32,
                price: 10,
                clicked: i == 0,
                liked: false,
                purchased: false,
                image_ref: format!("img{i}"),
                title: String::new(),
            })
            .collect();
        let annotations = vec![
            QualityAnnotation {
                item_id: "it0".into(),
                raw_score: 8.0,
                norm_score: 1.0,
                analysis_text: clicked_text.to_string(),
                adjectives: vec![],
            },
            QualityAnnotation {
                item_id: "it1".into(),
                raw_score: 3.0,
                norm_score: 0.0,
                analysis_text: unclicked_text.to_string(),
                adjectives: vec![],
            },
        ];
        vec![AnnotatedBatch {
            batch: CandidateBatch {
                serp_id: "s".into(),
                query: "q".into(),
                en_query: "q".into(),
                items,
                clicked_index: 0,
            },
            annotations,
            labeler_id: "test".into(),
            prompt_hash: "h".into(),
        }]
    }

    #[test]
    fn adjective_table_unique_sides() {
        let lex = Lexicon::default_lexicon();
        let annotated = table_fixture("a clear photo", "a blurry photo");
        let table = adjective_table(&annotated, &lex, 30);
        assert_eq!(table.unique_to_clicked, vec!["clear".to_string()]);
        assert_eq!(table.unique_to_not_clicked, vec!["blurry".to_string()]);
    }

    #[test]
    fn adjective_table_identical_texts_have_no_uniques() {
        let lex = Lexicon::default_lexicon();
        let annotated = table_fixture("a clean bright photo", "a clean bright photo");
        let table = adjective_table(&annotated, &lex, 30);
        assert!(table.unique_to_clicked.is_empty());
        assert!(table.unique_to_not_clicked.is_empty());
    }

    #[test]
    fn adjective_counts_match_independent_recount() {
        let lex = Lexicon::default_lexicon();
        let texts = [
            ("a clear bright photo", "a dark photo"),
            ("bright but noisy", "dark and blurry"),
            ("clean and clear", "blurry blurry blurry"),
        ];
        let mut annotated = Vec::new();
        for (c, u) in texts {
            annotated.extend(table_fixture(c, u));
        }
        let table = adjective_table(&annotated, &lex, 30);
        // Independent recount with a different traversal.
        let mut expect_clicked: BTreeMap<String, usize> = BTreeMap::new();
        for (c, _) in texts {
            for (adj, _) in extract_adjectives(c, &lex) {
                *expect_clicked.entry(adj).or_insert(0) += 1;
            }
        }
        for entry in &table.clicked {
            assert_eq!(
                entry.count,
                expect_clicked[&entry.adjective],
                "adjective {}",
                entry.adjective
            );
        }
        let blurry = table
            .not_clicked
            .iter()
            .find(|e| e.adjective == "blurry")
            .unwrap();
        // "blurry blurry blurry" counts once; "dark and blurry" once more.
        assert_eq!(blurry.count, 2);
    }

    proptest! {
        #[test]
        fn ks_is_symmetric(
            a in proptest::collection::vec(0.0f64..1.0, 1..40),
            b in proptest::collection::vec(0.0f64..1.0, 1..40),
        ) {
            let r1 = ks_two_sample(&a, &b).unwrap();
            let r2 = ks_two_sample(&b, &a).unwrap();
            prop_assert_eq!(r1.d_statistic, r2.d_statistic);
            prop_assert_eq!(r1.p_value, r2.p_value);
        }

        #[test]
        fn ks_matches_brute_force_exactly(
            a in proptest::collection::vec(0.0f64..1.0, 1..50),
            b in proptest::collection::vec(0.0f64..1.0, 1..50),
            quantize in any::<bool>(),
        ) {
            // Quantized inputs exercise tie handling.
            let q = |v: Vec<f64>| -> Vec<f64> {
                if quantize {
                    v.into_iter().map(|x| (x * 8.0).round() / 8.0).collect()
                } else {
                    v
                }
            };
            let a = q(a);
            let b = q(b);
            let r = ks_two_sample(&a, &b).unwrap();
            prop_assert_eq!(r.d_statistic, ks_d_brute_force(&a, &b));
        }

        #[test]
        fn ks_d_invariant_under_increasing_transform(
            a in proptest::collection::vec(-3.0f64..3.0, 1..30),
            b in proptest::collection::vec(-3.0f64..3.0, 1..30),
        ) {
            let f = |x: f64| x.exp();
            let fa: Vec<f64> = a.iter().map(|&x| f(x)).collect();
            let fb: Vec<f64> = b.iter().map(|&x| f(x)).collect();
            let r1 = ks_two_sample(&a, &b).unwrap();
            let r2 = ks_two_sample(&fa, &fb).unwrap();
            prop_assert_eq!(r1.d_statistic, r2.d_statistic);
        }

        #[test]
        fn histogram_bins_sum_to_count(
            scores in proptest::collection::vec(0.0f64..=1.0, 1..100)
        ) {
            let samples: Vec<ScoreSample> = scores
                .iter()
                .map(|&s| ScoreSample { norm_score: s, engagement: Engagement::Clicked })
                .collect();
            let report = summarize(&samples);
            let g = &report.groups["clicked"];
            prop_assert_eq!(g.histogram.iter().sum::<usize>(), g.count);
        }
    }
}
