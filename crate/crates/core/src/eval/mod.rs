//! N-shot prompting and accuracy sweeps.

mod sweep;
mod template;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledSentence;
use crate::error::{Error, Result};
use crate::gateway::{score_label_position, CandidateVocabulary, LogitProvider, TokenEntry};
use crate::labelopt::LabelAssignment;
use crate::util::{parallel_map, rng_for};

pub use sweep::{
    read_records, run_sweep, CellFailure, ManifestLabelSet, ResultsStore, SweepManifest,
    SweepOutcome, SweepPlan,
};
pub use template::{ParsedPrompt, PromptTemplate};

/// A named label assignment and the labeling-set size it was fitted on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    pub id: String,
    pub k: usize,
    pub assignment: LabelAssignment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShotSpec {
    pub n_shots: usize,
    pub run_index: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRecord {
    pub label_set_id: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub n_shots: usize,
    pub run: usize,
    pub accuracy: f64,
    pub n_test: usize,
}

impl AccuracyRecord {
    pub fn correct(&self) -> usize {
        (self.accuracy * self.n_test as f64).round() as usize
    }
}

/// Demonstrations in order, then the query, joined by the template separator.
/// Demo labels are the assigned tokens with the boundary marker stripped.
pub fn build_prompt(
    demos: &[&LabeledSentence],
    query: &LabeledSentence,
    a: &LabelAssignment,
    vocab: &CandidateVocabulary,
    t: &PromptTemplate,
) -> Result<String> {
    a.check_vocab(vocab)?;
    let mut out = String::new();
    for d in demos {
        if d.text == query.text {
            return Err(Error::InvalidArgument(
                "query sentence appears among the demonstrations".into(),
            ));
        }
        if d.class_id == 0 || d.class_id > a.num_classes() {
            return Err(Error::UnknownClass(d.class_id));
        }
        out.push_str(&t.render_demo(&d.text, vocab.display(a.token_for(d.class_id))));
        out.push_str(t.separator());
    }
    out.push_str(&t.render_query(&query.text));
    Ok(out)
}

/// 1-based class with the largest logit; ties go to the lowest class.
pub fn argmax_class(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best + 1
}

fn assigned_tokens(a: &LabelAssignment, vocab: &CandidateVocabulary) -> Vec<TokenEntry> {
    a.labels()
        .iter()
        .map(|&l| vocab.tokens()[l].clone())
        .collect()
}

/// Restricted argmax over the assigned label tokens at the label position.
pub fn predict<P: LogitProvider + ?Sized>(
    provider: &P,
    prompt: &str,
    a: &LabelAssignment,
    vocab: &CandidateVocabulary,
) -> Result<usize> {
    a.check_vocab(vocab)?;
    let logits = score_label_position(provider, prompt, &assigned_tokens(a, vocab))?;
    Ok(argmax_class(&logits))
}

/// Demonstrations for one (N, run): N draws without replacement, in draw order.
pub fn sample_demos<'a>(
    demo_split: &[&'a LabeledSentence],
    spec: &ShotSpec,
) -> Result<Vec<&'a LabeledSentence>> {
    if spec.n_shots > demo_split.len() {
        return Err(Error::SampleSize {
            requested: spec.n_shots,
            available: demo_split.len(),
        });
    }
    if spec.n_shots == 0 {
        return Ok(Vec::new());
    }
    let mut pool: Vec<usize> = (0..demo_split.len()).collect();
    let mut rng = rng_for(spec.seed, &[spec.n_shots as u64, spec.run_index as u64]);
    let (chosen, _) = pool.partial_shuffle(&mut rng, spec.n_shots);
    Ok(chosen.iter().map(|&i| demo_split[i]).collect())
}

/// Accuracy over the whole test split with one demonstration sample shared by
/// every query.
pub fn evaluate_nshot<P: LogitProvider + ?Sized>(
    provider: &P,
    label_set: &LabelSet,
    vocab: &CandidateVocabulary,
    demo_split: &[&LabeledSentence],
    test_split: &[&LabeledSentence],
    spec: &ShotSpec,
    t: &PromptTemplate,
) -> Result<AccuracyRecord> {
    if test_split.is_empty() {
        return Err(Error::InvalidArgument("empty test split".into()));
    }
    let a = &label_set.assignment;
    a.check_vocab(vocab)?;
    let demos = sample_demos(demo_split, spec)?;
    let candidates = assigned_tokens(a, vocab);
    let workers = provider.capabilities().max_concurrency;
    let hits = parallel_map(test_split, workers, |_, q| {
        let prompt = build_prompt(&demos, q, a, vocab, t)?;
        let logits = score_label_position(provider, &prompt, &candidates)?;
        Ok::<_, Error>(argmax_class(&logits) == q.class_id)
    })?;
    let correct = hits.iter().filter(|&&h| h).count();
    Ok(AccuracyRecord {
        label_set_id: label_set.id.clone(),
        k: label_set.k,
        n_shots: spec.n_shots,
        run: spec.run_index,
        accuracy: correct as f64 / test_split.len() as f64,
        n_test: test_split.len(),
    })
}
