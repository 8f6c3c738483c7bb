//! Constrained beam search over a bitmask constraint automaton.
//!
//! A constraint set is an ordered list of disjunctive token groups. The
//! automaton state is the set of groups already satisfied; emitting any member
//! of group `g` sets bit `g`. Search keeps a separate beam for each of the
//! `2^n` states, so hypotheses that have met fewer constraints never crowd
//! out the ones that have met more.

use std::cmp::Ordering;

use crate::captioner::ImageContext;
use crate::converter::{BiasPolicy, EmbeddingTables};
use crate::error::{Error, Result};
use crate::features::ImageRecord;
use crate::model::CaptionModel;
use crate::numerics::{log_sum_exp, Vector};
use crate::vocab::{TokenId, Vocabulary, BOS, EOS, UNK};

pub const DEFAULT_MAX_GROUPS: usize = 3;
pub const DEFAULT_BEAM_SIZE: usize = 5;
pub const DEFAULT_MAX_LEN: usize = 20;

/// Under the exact-mask policy a forced constraint token scores as if its
/// logit were this far below the smallest finite logit of the step.
pub const SURROGATE_LOGIT_GAP: f64 = 1.0;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConstraintSet {
    groups: Vec<Vec<TokenId>>,
}

impl ConstraintSet {
    pub fn empty() -> Self {
        ConstraintSet::default()
    }

    /// Groups must be nonempty and pairwise disjoint.
    pub fn new(groups: Vec<Vec<TokenId>>, max_groups: usize) -> Result<Self> {
        if groups.len() > max_groups {
            return Err(Error::config(format!(
                "{} constraint groups exceed the maximum of {max_groups}",
                groups.len()
            )));
        }
        if groups.len() > 16 {
            return Err(Error::config("at most 16 constraint groups are supported"));
        }
        let mut seen = std::collections::HashSet::new();
        for g in &groups {
            if g.is_empty() {
                return Err(Error::data("empty constraint group"));
            }
            for t in g {
                if !seen.insert(*t) {
                    return Err(Error::data(format!("token {t} appears in two constraint groups")));
                }
            }
        }
        Ok(ConstraintSet { groups })
    }

    pub fn groups(&self) -> &[Vec<TokenId>] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Indices of the groups with at least one member in `tokens`.
    pub fn satisfied_groups(&self, tokens: &[TokenId]) -> Vec<usize> {
        self.groups
            .iter()
            .enumerate()
            .filter(|(_, g)| g.iter().any(|t| tokens.contains(t)))
            .map(|(i, _)| i)
            .collect()
    }
}

/// One group per tag: the singular phrase, plus the plural phrase when the
/// tag says several instances are present. Repeated categories merge into
/// one group; groups beyond `max_groups` are dropped in input order.
pub fn build_constraints(tags: &[(usize, bool)], vocab: &Vocabulary, max_groups: usize) -> Result<ConstraintSet> {
    let mut merged: Vec<(usize, bool)> = Vec::new();
    for &(category, plural) in tags {
        if vocab.category_tokens(category).is_none() {
            return Err(Error::data(format!(
                "tag refers to category {category}, which is not in the vocabulary"
            )));
        }
        match merged.iter_mut().find(|(c, _)| *c == category) {
            Some(entry) => entry.1 |= plural,
            None => merged.push((category, plural)),
        }
    }
    merged.truncate(max_groups);
    let groups = merged
        .into_iter()
        .map(|(category, plural)| {
            let (s, p) = vocab.category_tokens(category).expect("checked above");
            if plural {
                vec![s, p]
            } else {
                vec![s]
            }
        })
        .collect();
    ConstraintSet::new(groups, max_groups)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TagScope {
    /// Only tags naming categories added after training become constraints.
    Novel,
    All,
}

/// Maps an image's tags to `(category index, plural)` pairs.
pub fn resolve_tags(model: &CaptionModel, record: &ImageRecord, scope: TagScope) -> Result<Vec<(usize, bool)>> {
    let mut out = Vec::new();
    for tag in &record.tags {
        let idx = model.category_index(&tag.category).ok_or_else(|| {
            Error::data(format!(
                "image '{}' is tagged with unknown category '{}'",
                record.image_id, tag.category
            ))
        })?;
        if scope == TagScope::All || model.is_novel_category(idx) {
            out.push((idx, tag.plural));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct ConstraintAutomaton {
    group_of: Vec<Option<u8>>,
    groups: usize,
}

impl ConstraintAutomaton {
    pub fn new(constraints: &ConstraintSet, vocab_size: usize) -> Result<Self> {
        let mut group_of = vec![None; vocab_size];
        for (g, members) in constraints.groups().iter().enumerate() {
            for t in members {
                let slot = group_of
                    .get_mut(t.index())
                    .ok_or_else(|| Error::data(format!("constraint token {t} outside vocabulary")))?;
                *slot = Some(g as u8);
            }
        }
        Ok(ConstraintAutomaton {
            group_of,
            groups: constraints.len(),
        })
    }

    pub fn num_states(&self) -> usize {
        1 << self.groups
    }

    pub fn accepting(&self) -> u32 {
        (1u32 << self.groups) - 1
    }

    pub fn transition(&self, state: u32, token: TokenId) -> u32 {
        match self.group_of.get(token.index()).copied().flatten() {
            Some(g) => state | (1 << g),
            None => state,
        }
    }

    pub fn is_constraint_token(&self, token: TokenId) -> bool {
        self.group_of.get(token.index()).copied().flatten().is_some()
    }

    pub fn run(&self, tokens: &[TokenId]) -> u32 {
        tokens.iter().fold(0, |s, &t| self.transition(s, t))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Generated tokens, without the leading `<bos>`; ends with `<eos>` when
    /// finished.
    pub tokens: Vec<TokenId>,
    pub logprob: f64,
    pub fsm_state: u32,
    pub rnn_state: Vector,
    pub finished: bool,
}

/// Ranking order: higher log-probability first, then the lexicographically
/// smaller token sequence (which puts a prefix before its extensions).
pub fn rank_order(a_score: f64, a_tokens: &[TokenId], b_score: f64, b_tokens: &[TokenId]) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_tokens.cmp(b_tokens))
}

fn sort_ranked(hyps: &mut [Hypothesis]) {
    hyps.sort_by(|a, b| rank_order(a.logprob, &a.tokens, b.logprob, &b.tokens));
}

/// A model prepared for decoding under one bias policy.
pub struct Decoder<'m> {
    model: &'m CaptionModel,
    tables: EmbeddingTables,
    banned: Vec<bool>,
}

impl<'m> Decoder<'m> {
    pub fn new(model: &'m CaptionModel, policy: BiasPolicy) -> Result<Self> {
        let tables = model.tables_with(policy)?;
        Decoder::with_tables(model, tables)
    }

    /// Decoder over externally supplied tables (same shape as the model's).
    pub fn with_tables(model: &'m CaptionModel, tables: EmbeddingTables) -> Result<Self> {
        let v = model.vocab_size();
        if tables.vocab_size() != v || tables.u.rows() != v || tables.m.rows() != v {
            return Err(Error::shape("tables do not match the model vocabulary"));
        }
        let mut banned = vec![false; v];
        banned[BOS.index()] = true;
        banned[UNK.index()] = true;
        Ok(Decoder { model, tables, banned })
    }

    pub fn model(&self) -> &CaptionModel {
        self.model
    }

    pub fn tables(&self) -> &EmbeddingTables {
        &self.tables
    }

    pub fn context(&self, feature: &[f64]) -> Result<ImageContext> {
        self.model.params.captioner.image_context(feature)
    }

    pub fn step(&self, ctx: &ImageContext, state: &[f64], w_prev: TokenId) -> Result<(Vector, Vector)> {
        self.model.params.captioner.step_logits(ctx, &self.tables, state, w_prev)
    }

    /// Next-token log-probabilities. `<bos>` and `<unk>` are never generated.
    /// Tokens with a −∞ logit stay impossible unless `automaton` marks them
    /// as constraint tokens, in which case they receive the surrogate logit.
    pub fn scores(&self, logits: &[f64], automaton: Option<&ConstraintAutomaton>) -> Result<Vec<f64>> {
        let lse = log_sum_exp(logits)?;
        let min_finite = logits
            .iter()
            .copied()
            .filter(|l| l.is_finite())
            .fold(f64::INFINITY, f64::min);
        let surrogate = min_finite - SURROGATE_LOGIT_GAP;
        Ok(logits
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                if self.banned[i] {
                    f64::NEG_INFINITY
                } else if l.is_finite() {
                    l - lse
                } else if automaton.is_some_and(|a| a.is_constraint_token(TokenId(i as u32))) {
                    surrogate - lse
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    /// Finished hypotheses of the chosen automaton state, best first. When
    /// nothing finished, the single best unfinished hypothesis.
    pub hypotheses: Vec<Hypothesis>,
    /// Automaton state the hypotheses come from.
    pub state: u32,
    /// Whether `state` is the accepting (all-groups) state.
    pub accepting: bool,
    /// No hypothesis emitted `<eos>` within `max_len`.
    pub truncated: bool,
}

impl SearchResult {
    pub fn best(&self) -> &Hypothesis {
        &self.hypotheses[0]
    }
}

struct Candidate {
    score: f64,
    parent: usize,
    token: TokenId,
    next_state: u32,
}

fn check_search_args(beam_size: usize, max_len: usize) -> Result<()> {
    if beam_size < 1 {
        return Err(Error::config("beam size must be at least 1"));
    }
    if max_len < 2 {
        return Err(Error::config("max_len must be at least 2"));
    }
    Ok(())
}

/// Beam search with one beam of `beam_size` per automaton state. `max_len`
/// bounds the number of generated tokens, `<eos>` included.
///
/// Final ranking: finished hypotheses of the accepting state; failing that,
/// the state with the most satisfied groups (then the best log-probability)
/// among states holding a finished hypothesis; failing that, the best
/// unfinished hypothesis, flagged `truncated`.
pub fn constrained_beam_search(
    decoder: &Decoder<'_>,
    feature: &[f64],
    constraints: &ConstraintSet,
    beam_size: usize,
    max_len: usize,
) -> Result<SearchResult> {
    check_search_args(beam_size, max_len)?;
    let automaton = ConstraintAutomaton::new(constraints, decoder.tables().vocab_size())?;
    let ctx = decoder.context(feature)?;
    let n_states = automaton.num_states();
    let accept = automaton.accepting();
    let mut live: Vec<Vec<Hypothesis>> = vec![Vec::new(); n_states];
    live[0].push(Hypothesis {
        tokens: Vec::new(),
        logprob: 0.0,
        fsm_state: 0,
        rnn_state: ctx.h0.clone(),
        finished: false,
    });
    let mut finished: Vec<Vec<Hypothesis>> = vec![Vec::new(); n_states];
    let mut exhausted: Vec<Hypothesis> = Vec::new();

    for step in 0..max_len {
        let mut parents: Vec<(Hypothesis, Vector)> = Vec::new();
        let mut buckets: Vec<Vec<Candidate>> = (0..n_states).map(|_| Vec::new()).collect();
        for hyp in live.iter_mut().flat_map(std::mem::take) {
            let last = hyp.tokens.last().copied().unwrap_or(BOS);
            let (logits, h) = decoder.step(&ctx, &hyp.rnn_state, last)?;
            let scores = decoder.scores(&logits, Some(&automaton))?;
            let parent = parents.len();
            for (t, &s) in scores.iter().enumerate() {
                if s == f64::NEG_INFINITY {
                    continue;
                }
                let token = TokenId(t as u32);
                let next_state = automaton.transition(hyp.fsm_state, token);
                buckets[next_state as usize].push(Candidate {
                    score: hyp.logprob + s,
                    parent,
                    token,
                    next_state,
                });
            }
            parents.push((hyp, h));
        }
        let last_step = step + 1 == max_len;
        for (state, mut cands) in buckets.into_iter().enumerate() {
            cands.sort_by(|a, b| {
                let ta = &parents[a.parent].0.tokens;
                let tb = &parents[b.parent].0.tokens;
                b.score
                    .total_cmp(&a.score)
                    .then_with(|| ta.iter().chain([&a.token]).cmp(tb.iter().chain([&b.token])))
            });
            let mut kept = 0;
            // Every live hypothesis may finish; only the top `beam_size`
            // unfinished extensions survive.
            for c in &cands {
                let is_eos = c.token == EOS;
                if !is_eos && kept >= beam_size {
                    continue;
                }
                let (parent, h) = &parents[c.parent];
                let mut tokens = parent.tokens.clone();
                tokens.push(c.token);
                let hyp = Hypothesis {
                    tokens,
                    logprob: c.score,
                    fsm_state: c.next_state,
                    rnn_state: h.clone(),
                    finished: is_eos,
                };
                if is_eos {
                    finished[state].push(hyp);
                } else {
                    kept += 1;
                    if last_step {
                        exhausted.push(hyp);
                    } else {
                        live[state].push(hyp);
                    }
                }
            }
        }
        let any_live = live.iter().any(|b| !b.is_empty());
        if !any_live {
            break;
        }
        // Log-probabilities only fall as tokens are appended.
        if let Some(best) = finished[accept as usize].iter().map(|h| h.logprob).reduce(f64::max) {
            if live.iter().flatten().all(|h| h.logprob < best) {
                break;
            }
        }
    }

    if !finished[accept as usize].is_empty() {
        let mut hyps = std::mem::take(&mut finished[accept as usize]);
        sort_ranked(&mut hyps);
        return Ok(SearchResult {
            hypotheses: hyps,
            state: accept,
            accepting: true,
            truncated: false,
        });
    }
    let fallback = (0..n_states)
        .filter(|&s| !finished[s].is_empty())
        .max_by(|&a, &b| {
            let best = |s: usize| finished[s].iter().map(|h| h.logprob).fold(f64::NEG_INFINITY, f64::max);
            (a as u32)
                .count_ones()
                .cmp(&(b as u32).count_ones())
                .then_with(|| best(a).total_cmp(&best(b)))
                .then_with(|| b.cmp(&a))
        });
    if let Some(state) = fallback {
        let mut hyps = std::mem::take(&mut finished[state]);
        sort_ranked(&mut hyps);
        return Ok(SearchResult {
            hypotheses: hyps,
            state: state as u32,
            accepting: false,
            truncated: false,
        });
    }
    let mut pool: Vec<Hypothesis> = exhausted.into_iter().chain(live.into_iter().flatten()).collect();
    pool.sort_by(|a, b| {
        b.fsm_state
            .count_ones()
            .cmp(&a.fsm_state.count_ones())
            .then_with(|| rank_order(a.logprob, &a.tokens, b.logprob, &b.tokens))
    });
    let best = pool
        .into_iter()
        .next()
        .ok_or_else(|| Error::data("beam search produced no hypotheses"))?;
    Ok(SearchResult {
        state: best.fsm_state,
        accepting: best.fsm_state == accept,
        hypotheses: vec![best],
        truncated: true,
    })
}

/// Ordinary beam search (no constraints) with the same candidate selection
/// and ranking rules as [`constrained_beam_search`].
pub fn beam_search(
    decoder: &Decoder<'_>,
    feature: &[f64],
    beam_size: usize,
    max_len: usize,
) -> Result<SearchResult> {
    check_search_args(beam_size, max_len)?;
    let ctx = decoder.context(feature)?;
    let mut beam = vec![Hypothesis {
        tokens: Vec::new(),
        logprob: 0.0,
        fsm_state: 0,
        rnn_state: ctx.h0.clone(),
        finished: false,
    }];
    let mut done: Vec<Hypothesis> = Vec::new();
    for step in 0..max_len {
        let mut cands: Vec<Hypothesis> = Vec::new();
        for hyp in &beam {
            let last = hyp.tokens.last().copied().unwrap_or(BOS);
            let (logits, h) = decoder.step(&ctx, &hyp.rnn_state, last)?;
            for (t, s) in decoder.scores(&logits, None)?.into_iter().enumerate() {
                if s == f64::NEG_INFINITY {
                    continue;
                }
                let mut tokens = hyp.tokens.clone();
                tokens.push(TokenId(t as u32));
                cands.push(Hypothesis {
                    finished: t == EOS.index(),
                    tokens,
                    logprob: hyp.logprob + s,
                    fsm_state: 0,
                    rnn_state: h.clone(),
                });
            }
        }
        sort_ranked(&mut cands);
        let mut next = Vec::with_capacity(beam_size);
        for c in cands {
            if c.finished {
                done.push(c);
            } else if next.len() < beam_size {
                next.push(c);
            }
        }
        beam = next;
        if beam.is_empty() || step + 1 == max_len {
            break;
        }
        if let Some(best) = done.iter().map(|h| h.logprob).reduce(f64::max) {
            if beam.iter().all(|h| h.logprob < best) {
                break;
            }
        }
    }
    if done.is_empty() {
        sort_ranked(&mut beam);
        let best = beam
            .into_iter()
            .next()
            .ok_or_else(|| Error::data("beam search produced no hypotheses"))?;
        return Ok(SearchResult {
            hypotheses: vec![best],
            state: 0,
            accepting: true,
            truncated: true,
        });
    }
    sort_ranked(&mut done);
    Ok(SearchResult {
        hypotheses: done,
        state: 0,
        accepting: true,
        truncated: false,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaptionOptions {
    pub beam_size: usize,
    pub max_len: usize,
    pub article_fix: bool,
    pub use_constraints: bool,
    pub scope: TagScope,
    pub max_groups: usize,
}

impl Default for CaptionOptions {
    fn default() -> Self {
        CaptionOptions {
            beam_size: DEFAULT_BEAM_SIZE,
            max_len: DEFAULT_MAX_LEN,
            article_fix: true,
            use_constraints: true,
            scope: TagScope::Novel,
            max_groups: DEFAULT_MAX_GROUPS,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Caption {
    pub text: String,
    /// Full token sequence including `<bos>` (and `<eos>` unless truncated).
    pub tokens: Vec<TokenId>,
    pub logprob: f64,
    pub constraints: ConstraintSet,
    pub satisfied: Vec<usize>,
    pub truncated: bool,
}

/// Tags → constraints → search → text for the best hypothesis.
pub fn caption_image(decoder: &Decoder<'_>, record: &ImageRecord, opts: &CaptionOptions) -> Result<Caption> {
    let model = decoder.model();
    let constraints = if opts.use_constraints {
        let tags = resolve_tags(model, record, opts.scope)?;
        build_constraints(&tags, &model.vocab, opts.max_groups)?
    } else {
        ConstraintSet::empty()
    };
    let result = constrained_beam_search(decoder, &record.feature, &constraints, opts.beam_size, opts.max_len)?;
    let best = result.best();
    let mut tokens = Vec::with_capacity(best.tokens.len() + 2);
    tokens.push(BOS);
    tokens.extend_from_slice(&best.tokens);
    let framed = if best.finished {
        tokens.clone()
    } else {
        let mut t = tokens.clone();
        t.push(EOS);
        t
    };
    let text = model.vocab.detokenize(&framed, opts.article_fix)?;
    Ok(Caption {
        text,
        satisfied: constraints.satisfied_groups(&best.tokens),
        constraints,
        logprob: best.logprob,
        tokens,
        truncated: result.truncated,
    })
}
