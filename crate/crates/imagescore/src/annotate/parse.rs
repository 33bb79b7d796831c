//! Response parsing grammar for labeler transcripts.
//!
//! Accepted score forms, case-insensitive, one per image section, in image
//! order:
//!
//! ```text
//! Score: 7
//! Score: 7.5/10
//! 7/10
//! ```
//!
//! Scores are clipped to [0, 10]. Finding more or fewer scores than items
//! is a hard parse error rather than a silent guess.

use regex::Regex;
use std::sync::OnceLock;

use super::AnnotateError;

// The `Score:`-prefixed alternative comes first so "Score: 8/10" is
// consumed whole and not double-counted by the bare "8/10" form.
fn score_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)score\s*:\s*(\d+(?:\.\d+)?)(?:\s*/\s*10)?|(\d+(?:\.\d+)?)\s*/\s*10")
            .expect("valid regex")
    })
}

/// Extract exactly `n_items` scores from a labeler response.
pub fn parse_scores(response_text: &str, n_items: usize) -> Result<Vec<f64>, AnnotateError> {
    parse_response(response_text, n_items).map(|v| v.into_iter().map(|(s, _)| s).collect())
}

/// Extract `(score, analysis_text)` per image section. The analysis text of
/// section `k` is everything between the previous score line (or the start
/// of the response) and section `k`'s score token.
pub fn parse_response(
    response_text: &str,
    n_items: usize,
) -> Result<Vec<(f64, String)>, AnnotateError> {
    let mut out = Vec::new();
    let mut section_start = 0usize;
    for caps in score_regex().captures_iter(response_text) {
        let m = caps.get(0).expect("whole match");
        let num = caps
            .get(1)
            .or_else(|| caps.get(2))
            .expect("one numeric group matches")
            .as_str();
        let score: f64 = num.parse().map_err(|_| AnnotateError::Parse {
            found: out.len(),
            expected: n_items,
            raw: response_text.to_string(),
        })?;
        let analysis = response_text[section_start..m.start()].trim().to_string();
        out.push((score.clamp(0.0, 10.0), analysis));
        section_start = m.end();
    }
    if out.len() != n_items {
        return Err(AnnotateError::Parse {
            found: out.len(),
            expected: n_items,
            raw: response_text.to_string(),
        });
    }
    Ok(out)
}
