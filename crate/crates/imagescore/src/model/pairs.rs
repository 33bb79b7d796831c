//! Preference pair construction from annotated batches.
//!
//! Only the clicked item and the non-clicked items the labeler scored
//! strictly below it are eligible; every ordered pair among the eligible
//! set with strictly different scores becomes a training pair. Pair counts
//! are therefore bounded by C(|eligible|, 2).

use serde::{Deserialize, Serialize};

use crate::annotate::AnnotatedBatch;

/// One ordered (winner, loser) training pair. Keys index the embedding
/// store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub winner_key: String,
    pub loser_key: String,
    pub winner_score: f64,
    pub loser_score: f64,
    pub serp_id: String,
    /// True when the winner is the clicked item of its SERP.
    pub winner_clicked: bool,
}

/// Build all preference pairs for one annotated batch.
pub fn build_pairs(annotated: &AnnotatedBatch) -> Vec<PreferencePair> {
    let batch = &annotated.batch;
    let anns = &annotated.annotations;
    let clicked = batch.clicked_index;
    let clicked_norm = anns[clicked].norm_score;
    let eligible: Vec<usize> = (0..batch.items.len())
        .filter(|&i| i == clicked || anns[i].norm_score < clicked_norm)
        .collect();
    let mut pairs = Vec::new();
    for &i in &eligible {
        for &j in &eligible {
            if anns[i].norm_score > anns[j].norm_score {
                pairs.push(PreferencePair {
                    winner_key: batch.items[i].image_ref.clone(),
                    loser_key: batch.items[j].image_ref.clone(),
                    winner_score: anns[i].norm_score,
                    loser_score: anns[j].norm_score,
                    serp_id: batch.serp_id.clone(),
                    winner_clicked: i == clicked,
                });
            }
        }
    }
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotate::QualityAnnotation;
    use crate::ingest::{CandidateBatch, Impression};
    use proptest::prelude::*;

    fn annotated(norms: &[f64], clicked_index: usize) -> AnnotatedBatch {
        let items: Vec<Impression> = (0..norms.len())
            .map(|i| Impression {
                item_id: format!("it{i}"),
                position: i as u32,
                price: 100,
                clicked: i == clicked_index,
                liked: false,
                purchased: false,
                image_ref: format!("img{i}"),
                title: String::new(),
            })
            .collect();
        let annotations: Vec<QualityAnnotation> = norms
            .iter()
            .enumerate()
            .map(|(i, &n)| QualityAnnotation {
                item_id: format!("it{i}"),
                raw_score: n * 10.0,
                norm_score: n,
                analysis_text: String::new(),
                adjectives: vec![],
            })
            .collect();
        AnnotatedBatch {
            batch: CandidateBatch {
                serp_id: "s".into(),
                query: "q".into(),
                en_query: "q".into(),
                items,
                clicked_index,
            },
            annotations,
            labeler_id: "test".into(),
            prompt_hash: "h".into(),
        }
    }

    #[test]
    fn higher_scored_unclicked_items_are_excluded() {
        // clicked 0.8; others 0.9 / 0.7 / 0.6. The 0.9 item is out, so the
        // eligible set is {0.8c, 0.7, 0.6} and exactly three pairs form.
        let ab = annotated(&[0.8, 0.9, 0.7, 0.6], 0);
        let pairs = build_pairs(&ab);
        let as_tuples: Vec<(f64, f64, bool)> = pairs
            .iter()
            .map(|p| (p.winner_score, p.loser_score, p.winner_clicked))
            .collect();
        assert_eq!(
            as_tuples,
            vec![(0.8, 0.7, true), (0.8, 0.6, true), (0.7, 0.6, false)]
        );
    }

    #[test]
    fn all_tied_yields_no_pairs() {
        let ab = annotated(&[0.5, 0.5, 0.5], 1);
        assert!(build_pairs(&ab).is_empty());
    }

    #[test]
    fn clicked_lowest_yields_no_pairs() {
        // Eligible set collapses to the clicked item alone.
        let ab = annotated(&[0.9, 0.7, 0.1], 2);
        assert!(build_pairs(&ab).is_empty());
    }

    proptest! {
        #[test]
        fn pair_count_bounded_and_winners_strictly_higher(
            norms in proptest::collection::vec(0.0f64..=1.0, 2..8),
            clicked in 0usize..8,
        ) {
            let clicked = clicked % norms.len();
            let ab = annotated(&norms, clicked);
            let pairs = build_pairs(&ab);
            let eligible = norms
                .iter()
                .enumerate()
                .filter(|&(i, &n)| i == clicked || n < norms[clicked])
                .count();
            prop_assert!(pairs.len() <= eligible * (eligible - 1) / 2);
            for p in &pairs {
                prop_assert!(p.winner_score > p.loser_score);
            }
        }
    }
}
