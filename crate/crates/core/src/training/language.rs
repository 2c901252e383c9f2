use serde::{Deserialize, Serialize};

use crate::categorical::sample_unchecked;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::vocab::{TokenSequence, Vocab};

/// Upper bound on the number of sequences [`SyntheticLanguage::enumerate`]
/// will visit.
pub const ENUMERATION_LIMIT: usize = 1 << 22;

/// Generative rule of a synthetic language over data tokens `0..n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LanguageKind {
    /// First-order chain. `initial` defaults to the stationary distribution.
    MarkovChain {
        transition: Vec<Vec<f64>>,
        #[serde(default)]
        initial: Option<Vec<f64>>,
    },
    /// Bracket strings over `{0 = open, 1 = close}` whose nesting depth stays
    /// in `[0, max_depth]`; at interior depths an open bracket has
    /// probability `open_prob`, at the walls the move is forced.
    Parenthesis { max_depth: usize, open_prob: f64 },
    /// A weighted choice among fixed templates, each token then replaced by a
    /// uniformly random data token with probability `noise`.
    Template {
        data_tokens: usize,
        templates: Vec<Vec<usize>>,
        weights: Vec<f64>,
        noise: f64,
    },
}

/// A distribution over length-`L` sequences with exact sampling and
/// log-probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticLanguage {
    #[serde(flatten)]
    pub kind: LanguageKind,
    pub seq_len: usize,
}

fn check_simplex(p: &[f64], what: &str) -> Result<()> {
    let sum: f64 = p.iter().sum();
    if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("{what} is not a probability vector: {p:?}")));
    }
    Ok(())
}

impl SyntheticLanguage {
    pub fn new(kind: LanguageKind, seq_len: usize) -> Result<Self> {
        let lang = Self { kind, seq_len };
        lang.validate()?;
        Ok(lang)
    }

    /// Markov chain started from its stationary distribution.
    pub fn markov(transition: Vec<Vec<f64>>, seq_len: usize) -> Result<Self> {
        Self::new(
            LanguageKind::MarkovChain {
                transition,
                initial: None,
            },
            seq_len,
        )
    }

    /// Two-state chain with `P(stay) = stay` in both states.
    pub fn two_state(stay: f64, seq_len: usize) -> Result<Self> {
        Self::markov(vec![vec![stay, 1.0 - stay], vec![1.0 - stay, stay]], seq_len)
    }

    /// The language containing a single sequence.
    pub fn deterministic(sequence: Vec<usize>, data_tokens: usize) -> Result<Self> {
        let len = sequence.len();
        Self::new(
            LanguageKind::Template {
                data_tokens,
                templates: vec![sequence],
                weights: vec![1.0],
                noise: 0.0,
            },
            len,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.seq_len == 0 {
            return Err(Error::Config("language: seq_len must be positive".into()));
        }
        match &self.kind {
            LanguageKind::MarkovChain { transition, initial } => {
                let n = transition.len();
                if n < 2 {
                    return Err(Error::Config("markov_chain: need at least two states".into()));
                }
                for (i, row) in transition.iter().enumerate() {
                    if row.len() != n {
                        return Err(Error::Config(format!("markov_chain: transition row {i} has wrong length")));
                    }
                    check_simplex(row, &format!("markov_chain: transition row {i}"))?;
                }
                if let Some(init) = initial {
                    if init.len() != n {
                        return Err(Error::Config("markov_chain: initial has wrong length".into()));
                    }
                    check_simplex(init, "markov_chain: initial")?;
                }
            }
            LanguageKind::Parenthesis { max_depth, open_prob } => {
                if *max_depth == 0 || !(0.0..=1.0).contains(open_prob) {
                    return Err(Error::Config(
                        "parenthesis: need max_depth ≥ 1 and open_prob in [0, 1]".into(),
                    ));
                }
            }
            LanguageKind::Template {
                data_tokens,
                templates,
                weights,
                noise,
            } => {
                if *data_tokens < 2 || templates.is_empty() || templates.len() != weights.len() {
                    return Err(Error::Config(
                        "template: need ≥ 2 data tokens and one weight per template".into(),
                    ));
                }
                check_simplex(weights, "template: weights")?;
                if !(0.0..=1.0).contains(noise) {
                    return Err(Error::Config("template: noise must be in [0, 1]".into()));
                }
                for t in templates {
                    if t.len() != self.seq_len || t.iter().any(|&v| v >= *data_tokens) {
                        return Err(Error::Config(format!(
                            "template {t:?} must have length {} over tokens < {data_tokens}",
                            self.seq_len
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    /// Number of distinct data tokens.
    pub fn data_tokens(&self) -> usize {
        match &self.kind {
            LanguageKind::MarkovChain { transition, .. } => transition.len(),
            LanguageKind::Parenthesis { .. } => 2,
            LanguageKind::Template { data_tokens, .. } => *data_tokens,
        }
    }

    /// Markov initial distribution (stationary if unspecified).
    fn markov_initial(transition: &[Vec<f64>], initial: &Option<Vec<f64>>) -> Vec<f64> {
        if let Some(init) = initial {
            return init.clone();
        }
        stationary_distribution(transition)
    }

    pub fn sample(&self, rng: &mut RngStream) -> Vec<usize> {
        let len = self.seq_len;
        match &self.kind {
            LanguageKind::MarkovChain { transition, initial } => {
                let init = Self::markov_initial(transition, initial);
                let mut out = Vec::with_capacity(len);
                let mut s = sample_unchecked(&init, rng);
                out.push(s);
                for _ in 1..len {
                    s = sample_unchecked(&transition[s], rng);
                    out.push(s);
                }
                out
            }
            LanguageKind::Parenthesis { max_depth, open_prob } => {
                let mut depth = 0;
                (0..len)
                    .map(|_| {
                        let p_open = parenthesis_open_prob(depth, *max_depth, *open_prob);
                        let open = rng.uniform() < p_open;
                        if open {
                            depth += 1;
                            0
                        } else {
                            depth -= 1;
                            1
                        }
                    })
                    .collect()
            }
            LanguageKind::Template {
                data_tokens,
                templates,
                weights,
                noise,
            } => {
                let tpl = &templates[sample_unchecked(weights, rng)];
                tpl.iter()
                    .map(|&tok| {
                        if rng.uniform() < *noise {
                            rng.below(*data_tokens as u64) as usize
                        } else {
                            tok
                        }
                    })
                    .collect()
            }
        }
    }

    /// A clean [`TokenSequence`] drawn from the language.
    pub fn sample_sequence(&self, vocab: Vocab, rng: &mut RngStream) -> Result<TokenSequence> {
        self.check_vocab(vocab)?;
        Ok(TokenSequence::from_parts_unchecked(self.sample(rng), vocab))
    }

    /// With probability `fraction`, the sequence is cut to a length drawn
    /// uniformly from `1..=L`; the tail is padded with token 0. Returns the
    /// sequence and its unpadded length.
    pub fn sample_with_random_length(
        &self,
        vocab: Vocab,
        fraction: f64,
        rng: &mut RngStream,
    ) -> Result<(TokenSequence, usize)> {
        let mut seq = self.sample_sequence(vocab, rng)?;
        let mut len = self.seq_len;
        if fraction > 0.0 && rng.uniform() < fraction {
            len = 1 + rng.below(self.seq_len as u64) as usize;
            seq.tokens_mut()[len..].iter_mut().for_each(|t| *t = 0);
        }
        Ok((seq, len))
    }

    pub fn check_vocab(&self, vocab: Vocab) -> Result<()> {
        if vocab.data_size() != self.data_tokens() {
            return Err(Error::Mismatch(format!(
                "language has {} data tokens but the vocabulary has {}",
                self.data_tokens(),
                vocab.data_size()
            )));
        }
        Ok(())
    }

    /// Exact `log p(x)`; `−∞` off the support or for out-of-range tokens.
    pub fn log_prob(&self, x: &[usize]) -> f64 {
        if x.len() != self.seq_len || x.iter().any(|&v| v >= self.data_tokens()) {
            return f64::NEG_INFINITY;
        }
        match &self.kind {
            LanguageKind::MarkovChain { transition, initial } => {
                let init = Self::markov_initial(transition, initial);
                let mut lp = init[x[0]].ln();
                for w in x.windows(2) {
                    lp += transition[w[0]][w[1]].ln();
                }
                lp
            }
            LanguageKind::Parenthesis { max_depth, open_prob } => {
                let mut depth = 0usize;
                let mut lp = 0.0;
                for &tok in x {
                    let p_open = parenthesis_open_prob(depth, *max_depth, *open_prob);
                    if tok == 0 {
                        lp += p_open.ln();
                        depth += 1;
                    } else {
                        if depth == 0 {
                            return f64::NEG_INFINITY;
                        }
                        lp += (1.0 - p_open).ln();
                        depth -= 1;
                    }
                }
                lp
            }
            LanguageKind::Template {
                data_tokens,
                templates,
                weights,
                noise,
            } => {
                let k = *data_tokens as f64;
                let p: f64 = templates
                    .iter()
                    .zip(weights)
                    .map(|(tpl, w)| {
                        w * tpl
                            .iter()
                            .zip(x)
                            .map(|(&a, &b)| noise / k + if a == b { 1.0 - noise } else { 0.0 })
                            .product::<f64>()
                    })
                    .sum();
                p.ln()
            }
        }
    }

    /// Every sequence with positive probability, with its probability.
    pub fn enumerate(&self) -> Result<Vec<(Vec<usize>, f64)>> {
        let n = self.data_tokens();
        let total = (n as u128).checked_pow(self.seq_len as u32).unwrap_or(u128::MAX);
        if total > ENUMERATION_LIMIT as u128 {
            return Err(Error::StateSpace(format!(
                "{n}^{} sequences exceed the enumeration limit {ENUMERATION_LIMIT}",
                self.seq_len
            )));
        }
        let mut out = Vec::new();
        let mut x = vec![0usize; self.seq_len];
        for _ in 0..total {
            let lp = self.log_prob(&x);
            if lp > f64::NEG_INFINITY {
                out.push((x.clone(), lp.exp()));
            }
            for d in x.iter_mut().rev() {
                *d += 1;
                if *d < n {
                    break;
                }
                *d = 0;
            }
        }
        Ok(out)
    }

    /// Exact entropy `H(X)` of a whole sequence in nats.
    pub fn sequence_entropy(&self) -> Result<f64> {
        match &self.kind {
            LanguageKind::MarkovChain { transition, initial } => {
                let mut marginal = Self::markov_initial(transition, initial);
                let mut h = crate::categorical::entropy(&marginal);
                for _ in 1..self.seq_len {
                    h += marginal
                        .iter()
                        .zip(transition)
                        .map(|(p, row)| p * crate::categorical::entropy(row))
                        .sum::<f64>();
                    marginal = step_marginal(&marginal, transition);
                }
                Ok(h)
            }
            _ => Ok(self
                .enumerate()?
                .iter()
                .map(|(_, p)| -p * p.ln())
                .sum()),
        }
    }

    /// Stationary entropy rate of a Markov chain, nats per token.
    pub fn entropy_rate(&self) -> Option<f64> {
        match &self.kind {
            LanguageKind::MarkovChain { transition, .. } => {
                let pi = stationary_distribution(transition);
                Some(
                    pi.iter()
                        .zip(transition)
                        .map(|(p, row)| p * crate::categorical::entropy(row))
                        .sum(),
                )
            }
            _ => None,
        }
    }
}

fn parenthesis_open_prob(depth: usize, max_depth: usize, open_prob: f64) -> f64 {
    if depth == 0 {
        1.0
    } else if depth >= max_depth {
        0.0
    } else {
        open_prob
    }
}

fn step_marginal(p: &[f64], transition: &[Vec<f64>]) -> Vec<f64> {
    let n = p.len();
    (0..n).map(|j| (0..n).map(|i| p[i] * transition[i][j]).sum()).collect()
}

/// Stationary distribution by power iteration on the lazy chain
/// `(I + P) / 2`, which converges for every irreducible chain.
pub fn stationary_distribution(transition: &[Vec<f64>]) -> Vec<f64> {
    let n = transition.len();
    let mut p = vec![1.0 / n as f64; n];
    for _ in 0..100_000 {
        let stepped = step_marginal(&p, transition);
        let next: Vec<f64> = p.iter().zip(&stepped).map(|(a, b)| 0.5 * (a + b)).collect();
        let diff: f64 = next.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum();
        p = next;
        if diff < 1e-15 {
            break;
        }
    }
    let s: f64 = p.iter().sum();
    p.iter().map(|v| v / s).collect()
}
