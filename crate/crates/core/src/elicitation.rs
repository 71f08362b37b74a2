//! Sure-option ladders, the Study 3 prompt, answer parsing and empirical
//! certainty equivalents.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::persona::Persona;
use crate::prompts::{self, fill, money_fixed, money_repr, money_trimmed, percent};
use crate::prospect::{Composition, Decision, DecisionSequence, Prospect};

pub const DEFAULT_RUNGS: usize = 7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LadderError {
    #[error("ladder needs at least 3 rungs, got {0}")]
    TooFewRungs(usize),
    #[error("degenerate prospect: |x_max| equals |x_min|")]
    Degenerate,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("empty answer")]
    Empty,
    #[error("expected {expected} decisions, found {found}")]
    WrongArity { expected: usize, found: usize },
    #[error("token {0:?} is neither accept nor reject")]
    InvalidToken(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExtractError {
    #[error("sequence has {found} decisions, ladder has {expected} rungs")]
    LengthMismatch { expected: usize, found: usize },
    #[error("decisions switch {transitions} times in preference order")]
    Monotonicity { transitions: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Spacing {
    Geometric,
    Arithmetic,
}

/// Sure options offered against one prospect, in rendered order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SureOptionLadder {
    rungs: Vec<f64>,
    prospect: Prospect,
    spacing: Spacing,
}

impl SureOptionLadder {
    pub fn rungs(&self) -> &[f64] {
        &self.rungs
    }

    pub fn len(&self) -> usize {
        self.rungs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rungs.is_empty()
    }

    pub fn prospect(&self) -> &Prospect {
        &self.prospect
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    /// Stable identifier of the generating prospect.
    pub fn prospect_ref(&self) -> String {
        prospect_ref(&self.prospect)
    }

    /// Rung indices from most to least preferred (descending money).
    pub fn preference_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.rungs.len()).collect();
        idx.sort_by(|&a, &b| self.rungs[b].total_cmp(&self.rungs[a]));
        idx
    }

    pub fn best(&self) -> f64 {
        self.rungs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn worst(&self) -> f64 {
        self.rungs.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

pub fn prospect_ref(p: &Prospect) -> String {
    format!("{}|{}|{}|{}", p.x1(), p.x2(), p.p1(), p.p2())
}

/// Builds the ladder of sure options between the prospect's extreme
/// outcomes, largest magnitude first.
///
/// Same-sign prospects get geometric spacing. Mixed-sign prospects and those
/// with a zero outcome get arithmetic spacing from best to worst (gains,
/// mixed) or worst to best (losses).
pub fn build_ladder(prospect: &Prospect, n_rungs: usize) -> Result<SureOptionLadder, LadderError> {
    if n_rungs < 3 {
        return Err(LadderError::TooFewRungs(n_rungs));
    }
    let (lo, hi) = (prospect.min_outcome(), prospect.max_outcome());
    let last = (n_rungs - 1) as f64;
    let geometric = (lo > 0.0) || (hi < 0.0);

    let (start, end) = match prospect.composition() {
        Composition::LossOnly => (lo, hi),
        _ => (hi, lo),
    };

    let mut rungs = Vec::with_capacity(n_rungs);
    let spacing = if geometric {
        if start.abs() == end.abs() {
            return Err(LadderError::Degenerate);
        }
        let ratio = end.abs() / start.abs();
        let sign = start.signum();
        for i in 0..n_rungs {
            rungs.push(sign * start.abs() * ratio.powf(i as f64 / last));
        }
        Spacing::Geometric
    } else {
        for i in 0..n_rungs {
            rungs.push(start + (end - start) * (i as f64 / last));
        }
        Spacing::Arithmetic
    };
    rungs[0] = start;
    rungs[n_rungs - 1] = end;

    Ok(SureOptionLadder {
        rungs,
        prospect: *prospect,
        spacing,
    })
}

/// `"{s} dollars with 100% probability"` as listed in the Study 3 prompt.
pub fn option_line(s: f64) -> String {
    format!("{} dollars with 100% probability", money_repr(s))
}

/// Bracketed label used in answers: `"[200.00 dollars with 100% probability]"`.
pub fn answer_label(s: f64) -> String {
    format!("[{} dollars with 100% probability]", money_fixed(s))
}

pub fn render_study3_prompt(persona: &Persona, prospect: &Prospect, ladder: &SureOptionLadder) -> String {
    let options: Vec<String> = ladder.rungs().iter().map(|&s| option_line(s)).collect();
    fill(
        prompts::STUDY3_TEMPLATE,
        &[
            ("n", &ladder.len().to_string()),
            ("x1", &money_trimmed(prospect.x1())),
            ("p1", &percent(prospect.p1())),
            ("x2", &money_trimmed(prospect.x2())),
            ("p2", &percent(prospect.p2())),
            ("ev", &money_trimmed(prospect.expected_value())),
            ("options", &options.join(" ")),
            ("persona", &persona.description),
        ],
    )
}

/// Formats a decision sequence in the answer format, optionally followed by a
/// `Reason:` clause.
pub fn format_answer(seq: &DecisionSequence, ladder: &SureOptionLadder, reason: Option<&str>) -> String {
    let mut parts: Vec<String> = ladder
        .rungs()
        .iter()
        .zip(seq.decisions())
        .map(|(&s, d)| format!("{}: {}", answer_label(s), d.as_str()))
        .collect();
    if let Some(r) = reason {
        parts.push(format!("Reason: {r}"));
    }
    parts.join(" ")
}

fn token_patterns() -> &'static [Regex; 3] {
    static PATTERNS: OnceLock<[Regex; 3]> = OnceLock::new();
    PATTERNS.get_or_init(|| {
        [
            // "[... probability]: accept" or "... probability: [reject]"
            Regex::new(r"(?i)probability\s*\]?\s*:\s*\[?\s*([a-z]+)").unwrap(),
            // "[anything]: accept"
            Regex::new(r"(?i)\]\s*:\s*\[?\s*([a-z]+)").unwrap(),
            Regex::new(r"(?i)\b(accept|reject)\b").unwrap(),
        ]
    })
}

fn reason_split() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\breason\s*:").unwrap())
}

/// Extracts one accept/reject token per rung, case-insensitively. Text after
/// a `Reason:` marker is ignored.
pub fn parse_decision_sequence(text: &str, ladder: &SureOptionLadder) -> Result<DecisionSequence, ParseError> {
    let body = match reason_split().find(text) {
        Some(m) => &text[..m.start()],
        None => text,
    };
    if body.trim().is_empty() {
        return Err(ParseError::Empty);
    }
    let tokens: Vec<String> = token_patterns()
        .iter()
        .map(|re| re.captures_iter(body).map(|c| c[1].to_string()).collect::<Vec<_>>())
        .find(|v| !v.is_empty())
        .unwrap_or_default();

    let mut decisions = Vec::with_capacity(tokens.len());
    for t in &tokens {
        match t.to_ascii_lowercase().as_str() {
            "accept" => decisions.push(Decision::Accept),
            "reject" => decisions.push(Decision::Reject),
            _ => return Err(ParseError::InvalidToken(t.clone())),
        }
    }
    if decisions.len() != ladder.len() {
        return Err(ParseError::WrongArity {
            expected: ladder.len(),
            found: decisions.len(),
        });
    }
    Ok(DecisionSequence(decisions))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Censoring {
    None,
    /// Every sure option rejected: the CE is at or above the best rung.
    AtBest,
    /// Every sure option accepted: the CE is at or below the worst rung.
    AtWorst,
}

/// One empirical certainty equivalent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeObservation {
    pub prospect: Prospect,
    pub ce: f64,
    pub censoring: Censoring,
    pub raw_sequence: DecisionSequence,
}

/// Reads the accept→reject turning point off a decision sequence.
///
/// The CE is the midpoint of the last accepted and first rejected rung in
/// preference order.
pub fn extract_empirical_ce(seq: &DecisionSequence, ladder: &SureOptionLadder) -> Result<CeObservation, ExtractError> {
    if seq.len() != ladder.len() {
        return Err(ExtractError::LengthMismatch {
            expected: ladder.len(),
            found: seq.len(),
        });
    }
    if !seq.is_coherent(ladder) {
        return Err(ExtractError::Monotonicity {
            transitions: seq.transitions(ladder),
        });
    }
    let order = ladder.preference_order();
    let ordered = seq.in_preference_order(ladder);
    let accepts = ordered.iter().take_while(|d| **d == Decision::Accept).count();
    let rungs = ladder.rungs();
    let (ce, censoring) = if accepts == 0 {
        (rungs[order[0]], Censoring::AtBest)
    } else if accepts == ordered.len() {
        (rungs[order[order.len() - 1]], Censoring::AtWorst)
    } else {
        let last_accepted = rungs[order[accepts - 1]];
        let first_rejected = rungs[order[accepts]];
        (0.5 * (last_accepted + first_rejected), Censoring::None)
    };
    Ok(CeObservation {
        prospect: *ladder.prospect(),
        ce,
        censoring,
        raw_sequence: seq.clone(),
    })
}
