//! Label-set search.
//!
//! The objective for an assignment `τ = (l_1, …, l_C)` over labeling rows
//! `(x_k, y_k)` is the summed log-softmax of the correct label restricted to
//! the assigned tokens:
//!
//! ```text
//! J(τ) = Σ_k [ f(x_k, l_{y_k}) − log Σ_c exp f(x_k, l_c) ]
//! ```
//!
//! [`hill_climb`] is coordinate ascent over classes: each pass tries every
//! free token for one class at a time, takes the best strictly improving swap
//! and starts the next pass from the first class. [`optimize_labels`] runs it
//! from several random injective starts and keeps the best.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cache::LogitMatrix;
use crate::error::{Error, Result};
use crate::gateway::CandidateVocabulary;
use crate::util::rng_for;

pub const DEFAULT_RESTARTS: usize = 10;
pub const DEFAULT_MAX_ITERATIONS: usize = 100;
/// Upper bound on assignments enumerated by [`brute_force_optimum`].
pub const BRUTE_FORCE_LIMIT: u128 = 1_000_000;

/// Class → token map; `labels[c]` is the vocabulary index naming class `c + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelAssignment {
    labels: Vec<usize>,
    vocab_fingerprint: String,
}

impl LabelAssignment {
    pub fn new(
        labels: Vec<usize>,
        vocab_size: usize,
        vocab_fingerprint: impl Into<String>,
    ) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 labels, got {}",
                labels.len()
            )));
        }
        for (i, &l) in labels.iter().enumerate() {
            if l >= vocab_size {
                return Err(Error::InvalidArgument(format!(
                    "label {l} outside vocabulary of {vocab_size}"
                )));
            }
            if labels[..i].contains(&l) {
                return Err(Error::InvalidArgument(format!(
                    "token {l} assigned to two classes"
                )));
            }
        }
        Ok(LabelAssignment {
            labels,
            vocab_fingerprint: vocab_fingerprint.into(),
        })
    }

    /// Resolves label texts (with boundary marker) against a vocabulary.
    pub fn from_texts<S: AsRef<str>>(texts: &[S], vocab: &CandidateVocabulary) -> Result<Self> {
        let labels = texts
            .iter()
            .map(|t| {
                vocab.index_of(t.as_ref()).ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "label {:?} is not in the candidate vocabulary",
                        t.as_ref()
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(labels, vocab.len(), vocab.fingerprint())
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn vocab_fingerprint(&self) -> &str {
        &self.vocab_fingerprint
    }

    /// Token index for a 1-based class id.
    pub fn token_for(&self, class_id: usize) -> usize {
        self.labels[class_id - 1]
    }

    pub fn check_vocab(&self, vocab: &CandidateVocabulary) -> Result<()> {
        if self.vocab_fingerprint != vocab.fingerprint() {
            return Err(Error::FingerprintMismatch {
                what: "vocabulary",
                expected: vocab.fingerprint().to_string(),
                found: self.vocab_fingerprint.clone(),
            });
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l >= vocab.len()) {
            return Err(Error::InvalidArgument(format!(
                "label {l} outside vocabulary"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub assignment: LabelAssignment,
    pub objective: f64,
    /// `(iteration, objective)`: the starting point, then one entry per accepted move.
    pub trace: Vec<(usize, f64)>,
    pub restarts_run: usize,
    pub seed: u64,
    /// Index of the restart that produced this result.
    pub best_restart: usize,
    pub iterations: usize,
    /// False when the iteration cap stopped the search before a pass without improvement.
    pub converged: bool,
}

/// Validated view of a matrix plus 0-based row classes.
struct Problem<'a> {
    m: &'a LogitMatrix,
    classes: Vec<usize>,
}

impl<'a> Problem<'a> {
    fn new(m: &'a LogitMatrix, classes: &[usize], num_classes: usize) -> Result<Self> {
        if classes.len() != m.rows() {
            return Err(Error::InvalidArgument(format!(
                "{} class ids for {} matrix rows",
                classes.len(),
                m.rows()
            )));
        }
        if num_classes < 2 {
            return Err(Error::InvalidArgument("need at least 2 classes".into()));
        }
        if num_classes > m.cols() {
            return Err(Error::InvalidArgument(format!(
                "{num_classes} classes cannot get distinct labels from {} tokens",
                m.cols()
            )));
        }
        let classes = classes
            .iter()
            .map(|&c| {
                if c == 0 || c > num_classes {
                    Err(Error::UnknownClass(c))
                } else {
                    Ok(c - 1)
                }
            })
            .collect::<Result<_>>()?;
        Ok(Problem { m, classes })
    }

    fn check_assignment(&self, a: &LabelAssignment) -> Result<()> {
        if a.vocab_fingerprint != self.m.vocab_fingerprint() {
            return Err(Error::FingerprintMismatch {
                what: "vocabulary",
                expected: self.m.vocab_fingerprint().to_string(),
                found: a.vocab_fingerprint.clone(),
            });
        }
        if let Some(&l) = a.labels.iter().find(|&&l| l >= self.m.cols()) {
            return Err(Error::InvalidArgument(format!(
                "label {l} outside matrix columns"
            )));
        }
        Ok(())
    }

    /// Stable evaluation: per row, shift by the max over assigned tokens.
    fn eval(&self, labels: &[usize]) -> f64 {
        let mut total = 0.0;
        for (k, &y) in self.classes.iter().enumerate() {
            let row = self.m.row(k);
            let mut max = f64::NEG_INFINITY;
            for &l in labels {
                max = max.max(row[l]);
            }
            let mut sum = 0.0;
            for &l in labels {
                sum += (row[l] - max).exp();
            }
            total += row[labels[y]] - max - sum.ln();
        }
        total
    }

    fn hill_climb(
        &self,
        initial: &[usize],
        max_iterations: usize,
    ) -> (Vec<usize>, f64, Vec<(usize, f64)>, usize, bool) {
        let mut labels = initial.to_vec();
        let mut current = self.eval(&labels);
        let mut trace = vec![(0, current)];
        let mut iterations = 0;
        let mut converged = false;
        let mut trial = labels.clone();
        while iterations < max_iterations {
            iterations += 1;
            let mut improved = false;
            for c in 0..labels.len() {
                let mut best: Option<(f64, usize)> = None;
                trial.copy_from_slice(&labels);
                for t in 0..self.m.cols() {
                    if labels.contains(&t) {
                        continue;
                    }
                    trial[c] = t;
                    let value = self.eval(&trial);
                    if best.is_none_or(|(b, _)| value > b) {
                        best = Some((value, t));
                    }
                }
                if let Some((value, t)) = best {
                    if value > current {
                        labels[c] = t;
                        current = value;
                        trace.push((iterations, current));
                        improved = true;
                        break;
                    }
                }
            }
            if !improved {
                converged = true;
                break;
            }
        }
        (labels, current, trace, iterations, converged)
    }
}

/// Summed log-softmax of the correct label over the assigned tokens. Always `<= 0`.
pub fn objective(m: &LogitMatrix, classes: &[usize], a: &LabelAssignment) -> Result<f64> {
    let p = Problem::new(m, classes, a.num_classes())?;
    p.check_assignment(a)?;
    Ok(p.eval(&a.labels))
}

/// Coordinate ascent from `initial`; stops after a pass with no strict
/// improvement or after `max_iterations` passes. Candidate tokens exclude every
/// token currently held by any class, and equal-valued candidates resolve to
/// the lowest token index.
pub fn hill_climb(
    m: &LogitMatrix,
    classes: &[usize],
    initial: &LabelAssignment,
    max_iterations: usize,
) -> Result<FitResult> {
    if max_iterations < 1 {
        return Err(Error::InvalidArgument(
            "max_iterations must be at least 1".into(),
        ));
    }
    let p = Problem::new(m, classes, initial.num_classes())?;
    p.check_assignment(initial)?;
    let (labels, objective, trace, iterations, converged) =
        p.hill_climb(&initial.labels, max_iterations);
    Ok(FitResult {
        assignment: LabelAssignment {
            labels,
            vocab_fingerprint: initial.vocab_fingerprint.clone(),
        },
        objective,
        trace,
        restarts_run: 1,
        seed: 0,
        best_restart: 0,
        iterations,
        converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptimizeOptions {
    pub restarts: usize,
    pub seed: u64,
    pub max_iterations: usize,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        OptimizeOptions {
            restarts: DEFAULT_RESTARTS,
            seed: 0,
            max_iterations: DEFAULT_MAX_ITERATIONS,
        }
    }
}

/// Uniform random injective assignment for restart `restart`.
pub fn random_assignment(
    vocab_size: usize,
    num_classes: usize,
    seed: u64,
    restart: usize,
) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..vocab_size).collect();
    let (chosen, _) = pool.partial_shuffle(&mut rng_for(seed, &[restart as u64]), num_classes);
    chosen.to_vec()
}

/// Best of `opts.restarts` hill climbs from seeded random starts; equal
/// objectives go to the lower restart index.
pub fn optimize_labels(
    m: &LogitMatrix,
    classes: &[usize],
    num_classes: usize,
    opts: &OptimizeOptions,
) -> Result<FitResult> {
    if opts.restarts < 1 {
        return Err(Error::InvalidArgument("restarts must be at least 1".into()));
    }
    if opts.max_iterations < 1 {
        return Err(Error::InvalidArgument(
            "max_iterations must be at least 1".into(),
        ));
    }
    let p = Problem::new(m, classes, num_classes)?;
    let runs: Vec<_> = (0..opts.restarts)
        .into_par_iter()
        .map(|r| {
            let init = random_assignment(m.cols(), num_classes, opts.seed, r);
            p.hill_climb(&init, opts.max_iterations)
        })
        .collect();
    let mut best = 0;
    for (r, run) in runs.iter().enumerate() {
        if run.1 > runs[best].1 {
            best = r;
        }
    }
    let (labels, objective, trace, iterations, converged) = runs.into_iter().nth(best).unwrap();
    Ok(FitResult {
        assignment: LabelAssignment {
            labels,
            vocab_fingerprint: m.vocab_fingerprint().to_string(),
        },
        objective,
        trace,
        restarts_run: opts.restarts,
        seed: opts.seed,
        best_restart: best,
        iterations,
        converged,
    })
}

fn permutations_count(n: usize, k: usize) -> u128 {
    (0..k).fold(1u128, |acc, i| acc.saturating_mul((n - i) as u128))
}

/// Exact maximizer over all injective assignments, enumerated in
/// lexicographic order; the first maximum wins.
pub fn brute_force_optimum(
    m: &LogitMatrix,
    classes: &[usize],
    num_classes: usize,
) -> Result<FitResult> {
    let p = Problem::new(m, classes, num_classes)?;
    let count = permutations_count(m.cols(), num_classes);
    if count > BRUTE_FORCE_LIMIT {
        return Err(Error::SearchTooLarge {
            count,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let mut labels = vec![0usize; num_classes];
    let mut used = vec![false; m.cols()];
    let mut best = (f64::NEG_INFINITY, Vec::new());
    fn rec(
        p: &Problem,
        depth: usize,
        labels: &mut [usize],
        used: &mut [bool],
        best: &mut (f64, Vec<usize>),
    ) {
        if depth == labels.len() {
            let v = p.eval(labels);
            if v > best.0 {
                *best = (v, labels.to_vec());
            }
            return;
        }
        for t in 0..used.len() {
            if used[t] {
                continue;
            }
            used[t] = true;
            labels[depth] = t;
            rec(p, depth + 1, labels, used, best);
            used[t] = false;
        }
    }
    rec(&p, 0, &mut labels, &mut used, &mut best);
    Ok(FitResult {
        assignment: LabelAssignment {
            labels: best.1,
            vocab_fingerprint: m.vocab_fingerprint().to_string(),
        },
        objective: best.0,
        trace: vec![(0, best.0)],
        restarts_run: 0,
        seed: 0,
        best_restart: 0,
        iterations: 0,
        converged: true,
    })
}

/// On-disk label set: one file per (K, model).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSetFile {
    pub labels: Vec<String>,
    pub token_ids: Vec<u32>,
    pub objective: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub seed: u64,
    pub restarts: usize,
}

impl LabelSetFile {
    pub fn from_fit(fit: &FitResult, vocab: &CandidateVocabulary, k: usize) -> Self {
        let tokens: Vec<_> = fit
            .assignment
            .labels
            .iter()
            .map(|&l| &vocab.tokens()[l])
            .collect();
        LabelSetFile {
            labels: tokens.iter().map(|t| t.text.clone()).collect(),
            token_ids: tokens.iter().map(|t| t.token_id).collect(),
            objective: fit.objective,
            k,
            seed: fit.seed,
            restarts: fit.restarts_run,
        }
    }

    pub fn assignment(&self, vocab: &CandidateVocabulary) -> Result<LabelAssignment> {
        let a = LabelAssignment::from_texts(&self.labels, vocab)?;
        for (&l, &id) in a.labels.iter().zip(&self.token_ids) {
            if vocab.tokens()[l].token_id != id {
                return Err(Error::InvalidArgument(format!(
                    "label {:?} has token id {} in this vocabulary, file says {id}",
                    vocab.tokens()[l].text,
                    vocab.tokens()[l].token_id
                )));
            }
        }
        Ok(a)
    }
}
