//! Seed-record filtering and deduplication.

use std::collections::HashSet;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::transcript::collapse_whitespace;

/// A question/background pair from a community Q&A dump.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceRecord {
    pub id: String,
    pub title: String,
    pub content: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RejectReason {
    TitleTooShort,
    ContentTooShort,
    TitleEqualsContent,
    #[serde(rename = "ContainsURL")]
    ContainsUrl,
    Duplicate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub accepted: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reject_reason: Option<RejectReason>,
}

impl FilterDecision {
    pub const ACCEPT: FilterDecision = FilterDecision { accepted: true, reject_reason: None };

    pub fn reject(reason: RejectReason) -> Self {
        FilterDecision { accepted: false, reject_reason: Some(reason) }
    }
}

#[derive(Debug, Error)]
pub enum FilterConfigError {
    #[error("minimum lengths must be at least 1")]
    ZeroLength,
    #[error("bad url pattern {pattern:?}: {source}")]
    Pattern { pattern: String, source: regex::Error },
}

/// Lengths are counted in characters of the trimmed text. Patterns are
/// case-insensitive regular expressions.
#[derive(Debug, Clone)]
pub struct FilterConfig {
    pub min_title_chars: usize,
    pub min_content_chars: usize,
    pub url_patterns: Vec<Regex>,
    pub case_fold_identity_check: bool,
}

pub const DEFAULT_MIN_TITLE_CHARS: usize = 15;
pub const DEFAULT_MIN_CONTENT_CHARS: usize = 50;
pub const DEFAULT_URL_PATTERNS: [&str; 3] = [r"https?://", r"www\.", r"ftp://"];

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig::new(DEFAULT_MIN_TITLE_CHARS, DEFAULT_MIN_CONTENT_CHARS, &[]).expect("default patterns compile")
    }
}

impl FilterConfig {
    /// Defaults URL patterns plus any `extra_patterns`.
    pub fn new(min_title: usize, min_content: usize, extra_patterns: &[&str]) -> Result<Self, FilterConfigError> {
        if min_title == 0 || min_content == 0 {
            return Err(FilterConfigError::ZeroLength);
        }
        let url_patterns = DEFAULT_URL_PATTERNS
            .iter()
            .chain(extra_patterns)
            .map(|p| {
                RegexBuilder::new(p)
                    .case_insensitive(true)
                    .build()
                    .map_err(|source| FilterConfigError::Pattern { pattern: p.to_string(), source })
            })
            .collect::<Result<_, _>>()?;
        Ok(FilterConfig { min_title_chars: min_title, min_content_chars: min_content, url_patterns, case_fold_identity_check: true })
    }
}

/// Whitespace-collapsed, optionally case-folded form used for identity and
/// duplicate checks.
pub fn normalize_text(s: &str, case_fold: bool) -> String {
    let collapsed = collapse_whitespace(s);
    if case_fold {
        collapsed.to_lowercase()
    } else {
        collapsed
    }
}

/// Apply the rules in order; the first failure is the reject reason.
pub fn filter_record(r: &SourceRecord, cfg: &FilterConfig) -> FilterDecision {
    if r.title.trim().chars().count() < cfg.min_title_chars {
        return FilterDecision::reject(RejectReason::TitleTooShort);
    }
    if r.content.trim().chars().count() < cfg.min_content_chars {
        return FilterDecision::reject(RejectReason::ContentTooShort);
    }
    let fold = cfg.case_fold_identity_check;
    if normalize_text(&r.title, fold) == normalize_text(&r.content, fold) {
        return FilterDecision::reject(RejectReason::TitleEqualsContent);
    }
    if cfg.url_patterns.iter().any(|p| p.is_match(&r.title) || p.is_match(&r.content)) {
        return FilterDecision::reject(RejectReason::ContainsUrl);
    }
    FilterDecision::ACCEPT
}

/// Streaming deduplicator over normalized (title, content) pairs.
#[derive(Debug, Default)]
pub struct Dedup {
    seen: HashSet<(String, String)>,
}

impl Dedup {
    pub fn new() -> Self {
        Self::default()
    }

    /// True the first time a normalized pair is offered.
    pub fn first_sighting(&mut self, r: &SourceRecord) -> bool {
        self.seen.insert((normalize_text(&r.title, true), normalize_text(&r.content, true)))
    }
}

/// Keep the first record of each normalized pair, preserving order.
pub fn dedup_stream<I>(records: I) -> impl Iterator<Item = SourceRecord>
where
    I: IntoIterator<Item = SourceRecord>,
{
    let mut dedup = Dedup::new();
    records.into_iter().filter(move |r| dedup.first_sighting(r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::FIG_TOPIC;
    use proptest::prelude::*;

    fn rec(id: &str, title: &str, content: &str) -> SourceRecord {
        SourceRecord { id: id.into(), title: title.into(), content: content.into() }
    }

    const BACKGROUND: &str = "I've always wondered why the emergency number is 911. Who picked it, and was there a reason it couldn't be 999 like in the UK?";

    #[test]
    fn figure_topic_accepted() {
        assert_eq!(filter_record(&rec("1", FIG_TOPIC, BACKGROUND), &FilterConfig::default()), FilterDecision::ACCEPT);
    }

    #[test]
    fn identical_short_pair_fails_length_first() {
        let r = rec("1", "help me", "help me");
        assert_eq!(filter_record(&r, &FilterConfig::default()).reject_reason, Some(RejectReason::TitleTooShort));
        let loose = FilterConfig::new(1, 1, &[]).unwrap();
        assert_eq!(filter_record(&r, &loose).reject_reason, Some(RejectReason::TitleEqualsContent));
    }

    #[test]
    fn identity_check_respects_case_fold() {
        let mut cfg = FilterConfig::new(1, 1, &[]).unwrap();
        let r = rec("1", "Help  Me", "help me");
        assert_eq!(filter_record(&r, &cfg).reject_reason, Some(RejectReason::TitleEqualsContent));
        cfg.case_fold_identity_check = false;
        assert!(filter_record(&r, &cfg).accepted);
    }

    #[test]
    fn url_rejected() {
        let cfg = FilterConfig::new(1, 1, &[]).unwrap();
        let r = rec("1", "What is this website about?", "see http://spam.example for details");
        assert_eq!(filter_record(&r, &cfg).reject_reason, Some(RejectReason::ContainsUrl));
        let r = rec("1", "Visit WWW.SPAM.COM now", "content without links here");
        assert_eq!(filter_record(&r, &cfg).reject_reason, Some(RejectReason::ContainsUrl));
        let custom = FilterConfig::new(1, 1, &[r"\.onion\b"]).unwrap();
        let r = rec("1", "title", "go to abc.onion today");
        assert_eq!(filter_record(&r, &custom).reject_reason, Some(RejectReason::ContainsUrl));
    }

    #[test]
    fn zero_thresholds_rejected() {
        assert!(matches!(FilterConfig::new(0, 5, &[]), Err(FilterConfigError::ZeroLength)));
    }

    #[test]
    fn dedup_examples() {
        let a = rec("a", "Title A", "Content A");
        let b = rec("b", "Title B", "Content B");
        let out: Vec<_> = dedup_stream(vec![a.clone(), a.clone(), b.clone()]).collect();
        assert_eq!(out, [a.clone(), b]);

        let a2 = rec("a2", "Title A", "  Content   A \n");
        let out: Vec<_> = dedup_stream(vec![a.clone(), a2]).collect();
        assert_eq!(out, [a]);

        assert_eq!(dedup_stream(Vec::new()).count(), 0);
    }

    fn arb_record() -> impl Strategy<Value = SourceRecord> {
        (0u32..1000, "[a-c ]{0,30}", "[a-c :/w.]{0,80}").prop_map(|(id, t, c)| rec(&id.to_string(), &t, &c))
    }

    proptest! {
        #[test]
        fn dedup_output_is_unique_subsequence(records in proptest::collection::vec(arb_record(), 0..40)) {
            let out: Vec<_> = dedup_stream(records.clone()).collect();
            let keys: HashSet<_> = out.iter().map(|r| (normalize_text(&r.title, true), normalize_text(&r.content, true))).collect();
            prop_assert_eq!(keys.len(), out.len());
            let mut it = records.iter();
            for r in &out {
                prop_assert!(it.any(|x| x == r));
            }
        }

        #[test]
        fn loosening_lengths_is_monotone(r in arb_record(), t in 1usize..20, c in 1usize..60, dt in 0usize..10, dc in 0usize..30) {
            let strict = FilterConfig::new(t + dt, c + dc, &[]).unwrap();
            let loose = FilterConfig::new(t, c, &[]).unwrap();
            if filter_record(&r, &strict).accepted {
                prop_assert!(filter_record(&r, &loose).accepted);
            }
        }
    }
}
