//! Access to next-token logits behind a small provider contract.
//!
//! A provider lists its vocabulary and scores a set of candidate tokens at the
//! position right after a prompt. Two backends exist: [`HttpProvider`] speaks
//! the JSON wire protocol of the model sidecar, and [`SyntheticProvider`] is a
//! deterministic planted-label model used for testing and calibration.

mod http;
mod synthetic;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::fingerprint;

pub use http::{HttpOptions, HttpProvider, DEFAULT_TIMEOUT, ENDPOINT_ENV};
pub use synthetic::{SyntheticConfig, SyntheticProvider};

pub const DEFAULT_BOUNDARY_MARKER: &str = "Ġ";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenEntry {
    #[serde(rename = "id")]
    pub token_id: u32,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderCapabilities {
    pub model_id: String,
    pub max_concurrency: usize,
    pub deterministic: bool,
}

pub trait LogitProvider: Send + Sync {
    fn capabilities(&self) -> ProviderCapabilities;

    /// Tokens whose surface text starts with `prefix`, in any order.
    fn list_tokens(&self, prefix: &str) -> Result<Vec<TokenEntry>>;

    /// Raw next-token logits for `candidates` after `prompt`. Callers should go
    /// through [`score_label_position`], which validates the response.
    fn score(&self, prompt: &str, candidates: &[TokenEntry]) -> Result<Vec<f64>>;
}

impl<P: LogitProvider + ?Sized> LogitProvider for &P {
    fn capabilities(&self) -> ProviderCapabilities {
        (**self).capabilities()
    }
    fn list_tokens(&self, prefix: &str) -> Result<Vec<TokenEntry>> {
        (**self).list_tokens(prefix)
    }
    fn score(&self, prompt: &str, candidates: &[TokenEntry]) -> Result<Vec<f64>> {
        (**self).score(prompt, candidates)
    }
}

impl<P: LogitProvider + ?Sized> LogitProvider for Box<P> {
    fn capabilities(&self) -> ProviderCapabilities {
        (**self).capabilities()
    }
    fn list_tokens(&self, prefix: &str) -> Result<Vec<TokenEntry>> {
        (**self).list_tokens(prefix)
    }
    fn score(&self, prompt: &str, candidates: &[TokenEntry]) -> Result<Vec<f64>> {
        (**self).score(prompt, candidates)
    }
}

/// The restricted set of word-initial tokens that labels are drawn from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateVocabulary {
    tokens: Vec<TokenEntry>,
    boundary_marker: String,
    fingerprint: String,
    by_text: HashMap<String, usize>,
}

impl CandidateVocabulary {
    pub fn new(model_id: &str, boundary_marker: &str, mut tokens: Vec<TokenEntry>) -> Result<Self> {
        if boundary_marker.is_empty() {
            return Err(Error::InvalidArgument(
                "boundary marker must be non-empty".into(),
            ));
        }
        if tokens.is_empty() {
            return Err(Error::EmptyVocabulary(boundary_marker.to_string()));
        }
        tokens.sort_by_key(|t| t.token_id);
        let mut by_text = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if !t.text.starts_with(boundary_marker) || t.text.len() == boundary_marker.len() {
                return Err(Error::InvalidArgument(format!(
                    "token {:?} does not start a word with {boundary_marker:?}",
                    t.text
                )));
            }
            if i > 0 && tokens[i - 1].token_id == t.token_id {
                return Err(Error::InvalidArgument(format!(
                    "duplicate token id {}",
                    t.token_id
                )));
            }
            if by_text.insert(t.text.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate token text {:?}",
                    t.text
                )));
            }
        }
        let fp = fingerprint(
            [
                model_id.as_bytes().to_vec(),
                boundary_marker.as_bytes().to_vec(),
            ]
            .into_iter()
            .chain(
                tokens
                    .iter()
                    .map(|t| format!("{}\t{}", t.token_id, t.text).into_bytes()),
            ),
        );
        Ok(CandidateVocabulary {
            tokens,
            boundary_marker: boundary_marker.to_string(),
            fingerprint: fp,
            by_text,
        })
    }

    pub fn tokens(&self) -> &[TokenEntry] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn boundary_marker(&self) -> &str {
        &self.boundary_marker
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn get(&self, index: usize) -> Option<&TokenEntry> {
        self.tokens.get(index)
    }

    pub fn index_of(&self, text: &str) -> Option<usize> {
        self.by_text.get(text).copied()
    }

    /// Token text with the boundary marker removed, as it reads after a space.
    pub fn display(&self, index: usize) -> &str {
        &self.tokens[index].text[self.boundary_marker.len()..]
    }
}

pub fn fetch_vocabulary<P: LogitProvider + ?Sized>(
    provider: &P,
    boundary_marker: &str,
) -> Result<CandidateVocabulary> {
    if boundary_marker.is_empty() {
        return Err(Error::InvalidArgument(
            "boundary marker must be non-empty".into(),
        ));
    }
    let caps = provider.capabilities();
    let tokens: Vec<TokenEntry> = provider
        .list_tokens(boundary_marker)?
        .into_iter()
        .filter(|t| t.text.starts_with(boundary_marker) && t.text.len() > boundary_marker.len())
        .collect();
    if tokens.is_empty() {
        return Err(Error::EmptyVocabulary(boundary_marker.to_string()));
    }
    CandidateVocabulary::new(&caps.model_id, boundary_marker, tokens)
}

/// Next-token logits for `candidates` after `prompt`, aligned by index.
pub fn score_label_position<P: LogitProvider + ?Sized>(
    provider: &P,
    prompt: &str,
    candidates: &[TokenEntry],
) -> Result<Vec<f64>> {
    if prompt.is_empty() {
        return Err(Error::InvalidArgument("prompt must be non-empty".into()));
    }
    if candidates.is_empty() {
        return Err(Error::InvalidArgument(
            "no candidate tokens to score".into(),
        ));
    }
    let logits = provider.score(prompt, candidates)?;
    if logits.len() != candidates.len() {
        return Err(Error::LogitCount {
            expected: candidates.len(),
            got: logits.len(),
        });
    }
    if let Some((index, &value)) = logits.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFiniteLogit {
            index,
            token: candidates[index].text.clone(),
            value,
        });
    }
    Ok(logits)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed {
        logits: Vec<f64>,
    }

    impl LogitProvider for Fixed {
        fn capabilities(&self) -> ProviderCapabilities {
            ProviderCapabilities {
                model_id: "fixed".into(),
                max_concurrency: 1,
                deterministic: true,
            }
        }
        fn list_tokens(&self, _prefix: &str) -> Result<Vec<TokenEntry>> {
            Ok(vec![
                TokenEntry {
                    token_id: 7,
                    text: "Ġb".into(),
                },
                TokenEntry {
                    token_id: 3,
                    text: "Ġa".into(),
                },
                TokenEntry {
                    token_id: 9,
                    text: "c".into(),
                },
            ])
        }
        fn score(&self, _prompt: &str, _c: &[TokenEntry]) -> Result<Vec<f64>> {
            Ok(self.logits.clone())
        }
    }

    fn tok(id: u32, text: &str) -> TokenEntry {
        TokenEntry {
            token_id: id,
            text: text.into(),
        }
    }

    #[test]
    fn vocabulary_filters_and_orders() {
        let v = fetch_vocabulary(&Fixed { logits: vec![] }, "Ġ").unwrap();
        let ids: Vec<u32> = v.tokens().iter().map(|t| t.token_id).collect();
        assert_eq!(ids, vec![3, 7]);
        assert_eq!(v.display(0), "a");
        assert_eq!(v.index_of("Ġb"), Some(1));
    }

    #[test]
    fn empty_marker_rejected() {
        assert!(fetch_vocabulary(&Fixed { logits: vec![] }, "").is_err());
    }

    #[test]
    fn marker_matching_nothing_is_an_error() {
        assert!(matches!(
            fetch_vocabulary(&Fixed { logits: vec![] }, "▁"),
            Err(Error::EmptyVocabulary(_))
        ));
    }

    #[test]
    fn duplicate_texts_rejected() {
        assert!(CandidateVocabulary::new("m", "Ġ", vec![tok(1, "Ġa"), tok(2, "Ġa")]).is_err());
        assert!(CandidateVocabulary::new("m", "Ġ", vec![tok(1, "Ġa"), tok(1, "Ġb")]).is_err());
    }

    #[test]
    fn fingerprint_depends_on_model_and_tokens() {
        let a = CandidateVocabulary::new("m", "Ġ", vec![tok(1, "Ġa")]).unwrap();
        let b = CandidateVocabulary::new("n", "Ġ", vec![tok(1, "Ġa")]).unwrap();
        let c = CandidateVocabulary::new("m", "Ġ", vec![tok(2, "Ġa")]).unwrap();
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn non_finite_logits_are_errors() {
        let p = Fixed {
            logits: vec![1.0, f64::NAN],
        };
        let err = score_label_position(&p, "x", &[tok(1, "Ġa"), tok(2, "Ġb")]).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLogit { index: 1, .. }));
        let p = Fixed {
            logits: vec![f64::INFINITY],
        };
        assert!(score_label_position(&p, "x", &[tok(1, "Ġa")]).is_err());
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let p = Fixed { logits: vec![1.0] };
        assert!(matches!(
            score_label_position(&p, "x", &[tok(1, "Ġa"), tok(2, "Ġb")]),
            Err(Error::LogitCount {
                expected: 2,
                got: 1
            })
        ));
    }

    #[test]
    fn singleton_and_preconditions() {
        let p = Fixed { logits: vec![0.5] };
        assert_eq!(
            score_label_position(&p, "x", &[tok(1, "Ġa")]).unwrap(),
            vec![0.5]
        );
        assert!(score_label_position(&p, "", &[tok(1, "Ġa")]).is_err());
        assert!(score_label_position(&p, "x", &[]).is_err());
    }
}
