//! Planted-label logit model.
//!
//! Each class `c` gets a unit vector `e_c` and each token `t` a unit vector
//! `u_t`; planted gold tokens copy their class vector. For a prompt whose query
//! sentence `x` has class `c`:
//!
//! ```text
//! logit(t) = α·⟨e_c, u_t⟩ + σ·η(x, t) + β·Σ_{demos labeled t} ⟨z_d, z_x⟩ / (N + κ)
//! ```
//!
//! `η` is a standard normal that is a pure function of `(x, t, seed)` and `z_x`
//! is a per-sentence unit vector scattered around its class vector. The last
//! term depends only on which token labels which demonstrations, never on the
//! token itself, so it rewards consistent demonstrations under any label set.
//! It is off by default (`β = 0`).

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{LogitProvider, ProviderCapabilities, TokenEntry, DEFAULT_BOUNDARY_MARKER};
use crate::error::{Error, Result};
use crate::eval::PromptTemplate;
use crate::util::{fingerprint, hash_str, mix64, rng_for};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub num_classes: usize,
    pub vocab_size: usize,
    /// Zero-based token index per class.
    pub planted_gold: Vec<usize>,
    pub signal_strength: f64,
    pub noise_scale: f64,
    pub seed: u64,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default)]
    pub demo_strength: f64,
    #[serde(default = "default_demo_saturation")]
    pub demo_saturation: f64,
    /// Spread of sentence vectors around their class vector.
    #[serde(default = "default_sentence_spread")]
    pub sentence_spread: f64,
    #[serde(default = "default_marker")]
    pub boundary_marker: String,
}

fn default_embed_dim() -> usize {
    16
}
fn default_demo_saturation() -> f64 {
    8.0
}
fn default_sentence_spread() -> f64 {
    0.5
}
fn default_marker() -> String {
    DEFAULT_BOUNDARY_MARKER.to_string()
}

impl SyntheticConfig {
    pub fn new(
        num_classes: usize,
        vocab_size: usize,
        planted_gold: Vec<usize>,
        signal: f64,
        noise: f64,
        seed: u64,
    ) -> Self {
        SyntheticConfig {
            num_classes,
            vocab_size,
            planted_gold,
            signal_strength: signal,
            noise_scale: noise,
            seed,
            embed_dim: default_embed_dim(),
            demo_strength: 0.0,
            demo_saturation: default_demo_saturation(),
            sentence_spread: default_sentence_spread(),
            boundary_marker: default_marker(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("synthetic config: {m}")));
        if self.num_classes < 2 {
            return bad("num_classes must be at least 2".into());
        }
        if self.planted_gold.len() != self.num_classes {
            return bad(format!(
                "{} planted tokens for {} classes",
                self.planted_gold.len(),
                self.num_classes
            ));
        }
        let mut seen = vec![false; self.vocab_size];
        for &g in &self.planted_gold {
            if g >= self.vocab_size {
                return bad(format!(
                    "planted token {g} outside vocabulary of {}",
                    self.vocab_size
                ));
            }
            if std::mem::replace(&mut seen[g], true) {
                return bad(format!("planted token {g} used twice"));
            }
        }
        if !(self.signal_strength > 0.0 && self.signal_strength.is_finite()) {
            return bad("signal_strength must be positive".into());
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return bad("noise_scale must be non-negative".into());
        }
        if self.embed_dim < 1 {
            return bad("embed_dim must be at least 1".into());
        }
        if !(self.demo_strength >= 0.0
            && self.demo_saturation >= 0.0
            && self.sentence_spread >= 0.0)
        {
            return bad(
                "demo_strength, demo_saturation and sentence_spread must be non-negative".into(),
            );
        }
        if self.boundary_marker.is_empty() {
            return bad("boundary_marker must be non-empty".into());
        }
        Ok(())
    }

    pub fn token_text(&self, index: usize) -> String {
        format!("{}tok{index}", self.boundary_marker)
    }

    fn fingerprint(&self) -> String {
        fingerprint([serde_json::to_vec(self).expect("config serializes")])
    }
}

struct SentenceInfo {
    class: usize,
    hash: u64,
    embedding: Vec<f64>,
}

pub struct SyntheticProvider {
    cfg: SyntheticConfig,
    template: PromptTemplate,
    class_vecs: Vec<Vec<f64>>,
    token_vecs: Vec<Vec<f64>>,
    by_text: HashMap<String, usize>,
    sentences: HashMap<String, SentenceInfo>,
    model_id: String,
}

fn unit_vector<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl SyntheticProvider {
    /// `class_of` maps every sentence that will be scored to its 1-based class.
    pub fn new(
        cfg: SyntheticConfig,
        class_of: impl IntoIterator<Item = (String, usize)>,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng_for(cfg.seed, &[0x5e7]);
        let class_vecs: Vec<Vec<f64>> = (0..cfg.num_classes)
            .map(|_| unit_vector(&mut rng, cfg.embed_dim))
            .collect();
        let mut token_vecs: Vec<Vec<f64>> = (0..cfg.vocab_size)
            .map(|_| unit_vector(&mut rng, cfg.embed_dim))
            .collect();
        for (c, &g) in cfg.planted_gold.iter().enumerate() {
            token_vecs[g] = class_vecs[c].clone();
        }
        let by_text = (0..cfg.vocab_size)
            .map(|i| (cfg.token_text(i), i))
            .collect();
        let mut sentences = HashMap::new();
        for (text, class) in class_of {
            if class == 0 || class > cfg.num_classes {
                return Err(Error::UnknownClass(class));
            }
            let hash = hash_str(&text);
            let mut srng = rng_for(cfg.seed ^ hash, &[0xe3b]);
            let jitter = unit_vector(&mut srng, cfg.embed_dim);
            let raw: Vec<f64> = class_vecs[class - 1]
                .iter()
                .zip(&jitter)
                .map(|(e, j)| e + cfg.sentence_spread * j)
                .collect();
            let n = raw.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            let embedding = raw.into_iter().map(|x| x / n).collect();
            sentences.insert(
                text,
                SentenceInfo {
                    class,
                    hash,
                    embedding,
                },
            );
        }
        let model_id = format!("synthetic-{}", cfg.fingerprint());
        Ok(SyntheticProvider {
            cfg,
            template: PromptTemplate::default(),
            class_vecs,
            token_vecs,
            by_text,
            sentences,
            model_id,
        })
    }

    /// Template used to locate the query and demonstrations inside prompts.
    pub fn with_template(mut self, template: PromptTemplate) -> Self {
        self.template = template;
        self
    }

    pub fn config(&self) -> &SyntheticConfig {
        &self.cfg
    }

    /// Token entries of the planted gold labels, in class order.
    pub fn gold_tokens(&self) -> Vec<TokenEntry> {
        self.cfg
            .planted_gold
            .iter()
            .map(|&g| TokenEntry {
                token_id: g as u32,
                text: self.cfg.token_text(g),
            })
            .collect()
    }

    fn sentence(&self, text: &str) -> Result<&SentenceInfo> {
        self.sentences
            .get(text)
            .ok_or_else(|| Error::UnknownSentence(text.to_string()))
    }

    fn noise(&self, sentence_hash: u64, token: usize) -> f64 {
        let mut rng = rng_for(self.cfg.seed, &[sentence_hash, mix64(token as u64)]);
        StandardNormal.sample(&mut rng)
    }

    /// Prior logit of token `t` for a query sentence, without demonstrations.
    fn prior(&self, query: &SentenceInfo, t: usize) -> f64 {
        let signal =
            self.cfg.signal_strength * dot(&self.class_vecs[query.class - 1], &self.token_vecs[t]);
        if self.cfg.noise_scale == 0.0 {
            signal
        } else {
            signal + self.cfg.noise_scale * self.noise(query.hash, t)
        }
    }
}

impl LogitProvider for SyntheticProvider {
    fn capabilities(&self) -> ProviderCapabilities {
        ProviderCapabilities {
            model_id: self.model_id.clone(),
            max_concurrency: std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1),
            deterministic: true,
        }
    }

    fn list_tokens(&self, prefix: &str) -> Result<Vec<TokenEntry>> {
        Ok((0..self.cfg.vocab_size)
            .map(|i| TokenEntry {
                token_id: i as u32,
                text: self.cfg.token_text(i),
            })
            .filter(|t| t.text.starts_with(prefix))
            .collect())
    }

    fn score(&self, prompt: &str, candidates: &[TokenEntry]) -> Result<Vec<f64>> {
        let parsed = self.template.parse(prompt).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "prompt does not match template {}",
                self.template.fingerprint()
            ))
        })?;
        let query = self.sentence(parsed.query)?;

        // per-token demonstration evidence
        let mut evidence: HashMap<usize, f64> = HashMap::new();
        if self.cfg.demo_strength > 0.0 && !parsed.demos.is_empty() {
            let norm = parsed.demos.len() as f64 + self.cfg.demo_saturation;
            for (text, label) in &parsed.demos {
                let demo = self.sentence(text)?;
                let token_text = format!("{}{label}", self.cfg.boundary_marker);
                let t = *self.by_text.get(&token_text).ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "demonstration label {label:?} is not a vocabulary token"
                    ))
                })?;
                *evidence.entry(t).or_insert(0.0) +=
                    self.cfg.demo_strength * dot(&demo.embedding, &query.embedding) / norm;
            }
        }

        candidates
            .iter()
            .enumerate()
            .map(|(index, c)| {
                let t = *self
                    .by_text
                    .get(&c.text)
                    .ok_or_else(|| Error::UnknownToken {
                        token: c.text.clone(),
                        index,
                        message: "not in synthetic vocabulary".into(),
                    })?;
                Ok(self.prior(query, t) + evidence.get(&t).copied().unwrap_or(0.0))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{fetch_vocabulary, score_label_position};

    fn sentences(n: usize, classes: usize) -> Vec<(String, usize)> {
        (0..n)
            .map(|i| (format!("sentence number {i}"), i % classes + 1))
            .collect()
    }

    #[test]
    fn vocabulary_names_and_fingerprint() {
        let cfg = SyntheticConfig::new(3, 50, vec![0, 1, 2], 1.0, 0.0, 1);
        let p = SyntheticProvider::new(cfg.clone(), sentences(3, 3)).unwrap();
        let v = fetch_vocabulary(&p, "Ġ").unwrap();
        assert_eq!(v.len(), 50);
        assert_eq!(v.tokens()[7].text, "Ġtok7");
        let p2 = SyntheticProvider::new(cfg, sentences(3, 3)).unwrap();
        assert_eq!(
            v.fingerprint(),
            fetch_vocabulary(&p2, "Ġ").unwrap().fingerprint()
        );
    }

    #[test]
    fn noise_free_gold_is_strict_argmax() {
        let cfg = SyntheticConfig::new(3, 50, vec![4, 17, 33], 1.0, 0.0, 5);
        let data = sentences(30, 3);
        let p = SyntheticProvider::new(cfg.clone(), data.clone()).unwrap();
        let all: Vec<TokenEntry> = p.list_tokens("Ġ").unwrap();
        let t = PromptTemplate::default();
        for (text, class) in &data {
            let logits = score_label_position(&p, &t.render_query(text), &all).unwrap();
            let gold = cfg.planted_gold[class - 1];
            for (i, &l) in logits.iter().enumerate() {
                if i != gold {
                    assert!(
                        logits[gold] > l,
                        "token {i} ties or beats gold for class {class}"
                    );
                }
            }
        }
    }

    #[test]
    fn replay_is_bitwise_identical() {
        let cfg = SyntheticConfig::new(3, 20, vec![0, 1, 2], 1.0, 0.7, 9);
        let data = sentences(6, 3);
        let a = SyntheticProvider::new(cfg.clone(), data.clone()).unwrap();
        let b = SyntheticProvider::new(cfg, data.clone()).unwrap();
        let toks = a.list_tokens("Ġ").unwrap();
        let prompt = PromptTemplate::default().render_query(&data[2].0);
        let x = a.score(&prompt, &toks).unwrap();
        assert_eq!(x, a.score(&prompt, &toks).unwrap());
        assert_eq!(x, b.score(&prompt, &toks).unwrap());
    }

    #[test]
    fn unknown_inputs_are_errors() {
        let cfg = SyntheticConfig::new(2, 5, vec![0, 1], 1.0, 0.0, 1);
        let p = SyntheticProvider::new(cfg, sentences(2, 2)).unwrap();
        let toks = p.list_tokens("Ġ").unwrap();
        let t = PromptTemplate::default();
        assert!(matches!(
            p.score(&t.render_query("never seen"), &toks),
            Err(Error::UnknownSentence(_))
        ));
        let bogus = [TokenEntry {
            token_id: 99,
            text: "Ġnope".into(),
        }];
        assert!(matches!(
            p.score(&t.render_query("sentence number 0"), &bogus),
            Err(Error::UnknownToken { index: 0, .. })
        ));
    }

    #[test]
    fn config_validation() {
        assert!(SyntheticConfig::new(3, 10, vec![0, 0, 1], 1.0, 0.0, 0)
            .validate()
            .is_err());
        assert!(SyntheticConfig::new(3, 10, vec![0, 1, 10], 1.0, 0.0, 0)
            .validate()
            .is_err());
        assert!(SyntheticConfig::new(3, 10, vec![0, 1], 1.0, 0.0, 0)
            .validate()
            .is_err());
        assert!(SyntheticConfig::new(3, 10, vec![0, 1, 2], 0.0, 0.0, 0)
            .validate()
            .is_err());
        assert!(SyntheticConfig::new(3, 10, vec![0, 1, 2], 1.0, -1.0, 0)
            .validate()
            .is_err());
    }

    #[test]
    fn demonstrations_shift_only_their_label_tokens() {
        let mut cfg = SyntheticConfig::new(2, 10, vec![0, 1], 1.0, 0.3, 2);
        cfg.demo_strength = 4.0;
        let data = sentences(4, 2);
        let p = SyntheticProvider::new(cfg, data.clone()).unwrap();
        let t = PromptTemplate::default();
        let toks = p.list_tokens("Ġ").unwrap();
        let zero = p.score(&t.render_query(&data[0].0), &toks).unwrap();
        // demo of the same class labeled with tok5
        let prompt = format!(
            "{}{}{}",
            t.render_demo(&data[2].0, "tok5"),
            t.separator(),
            t.render_query(&data[0].0)
        );
        let one = p.score(&prompt, &toks).unwrap();
        for i in 0..10 {
            if i == 5 {
                assert!(one[i] > zero[i]);
            } else {
                assert_eq!(one[i], zero[i]);
            }
        }
    }
}
