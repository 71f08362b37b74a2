//! Prospect-theory agent that answers the prompts this crate renders.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AgentBackend, AgentError, BackendIdentity, RequestContext};
use crate::elicitation::{build_ladder, format_answer, option_line, SureOptionLadder};
use crate::prompts::{money_trimmed, CASE_STUDY_MARKER, STUDY1_MARKER, STUDY2_MARKER, STUDY3_MARKER};
use crate::prospect::{optimal_decisions, prospect_utility, value, Decision, DecisionSequence, Prospect, PtParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Noise {
    #[default]
    Off,
    /// Accept with probability `sigmoid((v(s) - U) / scale)`; `scale` is in
    /// utility units.
    Logistic { scale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticAgentSpec {
    pub params: PtParams,
    #[serde(default)]
    pub noise: Noise,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticAgentSpec {
    pub fn noiseless(params: PtParams) -> Self {
        Self {
            params,
            noise: Noise::Off,
            seed: 0,
        }
    }
}

/// Raw draws and their single-transition repair, both in display order.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDecisions {
    pub raw: DecisionSequence,
    pub coherent: DecisionSequence,
}

const REASON: &str = "The turning point reflects the risk preference inferred from my persona.";

fn prospect_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"The prospect is (-?[0-9.]+) dollars with ([0-9.]+)% probability and (-?[0-9.]+) dollars with ([0-9.]+)% probability\.",
        )
        .unwrap()
    })
}

fn option_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(-?[0-9.]+) dollars with 100% probability").unwrap())
}

fn num(s: &str) -> Result<f64, AgentError> {
    s.parse().map_err(|_| AgentError::Template(format!("bad number {s:?}")))
}

/// Recovers the prospect and ladder from the last elicitation block of a
/// Study 3 prompt (any demonstrations come earlier).
pub(crate) fn ladder_from_prompt(prompt: &str) -> Result<SureOptionLadder, AgentError> {
    let caps = prospect_pattern()
        .captures_iter(prompt)
        .last()
        .ok_or_else(|| AgentError::Template("no prospect sentence".into()))?;
    let x1 = num(&caps[1])?;
    let p1 = num(&caps[2])? / 100.0;
    let x2 = num(&caps[3])?;
    let p2 = num(&caps[4])? / 100.0;
    let prospect = Prospect::new(x1, x2, p1, p2).map_err(|e| AgentError::Template(e.to_string()))?;

    let tail = &prompt[caps.get(0).unwrap().end()..];
    let tail = tail.split("OUTPUT:").next().unwrap_or(tail);
    let options: Vec<&str> = option_pattern().find_iter(tail).map(|m| m.as_str()).collect();
    let ladder = build_ladder(&prospect, options.len()).map_err(|e| AgentError::Template(e.to_string()))?;
    for (rung, shown) in ladder.rungs().iter().zip(&options) {
        if option_line(*rung) != *shown {
            return Err(AgentError::Template(format!(
                "sure option {shown:?} does not match the ladder for the stated prospect"
            )));
        }
    }
    Ok(ladder)
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// The single-transition sequence closest in Hamming distance to `raw`
/// (preference order), ties going to the one with fewer accepts.
pub fn coherent_sequence(raw: &DecisionSequence, ladder: &SureOptionLadder) -> DecisionSequence {
    let order = ladder.preference_order();
    let ordered = raw.in_preference_order(ladder);
    let n = ordered.len();
    let cost = |k: usize| {
        ordered
            .iter()
            .enumerate()
            .filter(|(i, d)| (*i < k) != (**d == Decision::Accept))
            .count()
    };
    let best_k = (0..=n).min_by_key(|&k| (cost(k), k)).unwrap_or(0);
    let mut out = vec![Decision::Reject; n];
    for (rank, &idx) in order.iter().enumerate() {
        if rank < best_k {
            out[idx] = Decision::Accept;
        }
    }
    DecisionSequence(out)
}

fn rng_for(seed: u64, prompt: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(prompt.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Decisions of the agent on `ladder`. `prompt` only feeds the noise seed, so
/// answers do not depend on request order.
pub fn synthetic_decisions(spec: &SyntheticAgentSpec, ladder: &SureOptionLadder, prompt: &str) -> SyntheticDecisions {
    let prospect = ladder.prospect();
    match spec.noise {
        Noise::Off => {
            let d = optimal_decisions(prospect, ladder, &spec.params);
            SyntheticDecisions {
                raw: d.clone(),
                coherent: d,
            }
        }
        Noise::Logistic { scale } => {
            let u = prospect_utility(prospect, &spec.params);
            let mut rng = rng_for(spec.seed, prompt);
            let raw = DecisionSequence(
                ladder
                    .rungs()
                    .iter()
                    .map(|&s| {
                        let p = sigmoid((value(s, &spec.params) - u) / scale);
                        if rng.random::<f64>() < p {
                            Decision::Accept
                        } else {
                            Decision::Reject
                        }
                    })
                    .collect(),
            );
            let coherent = coherent_sequence(&raw, ladder);
            SyntheticDecisions { raw, coherent }
        }
    }
}

/// Risk-seeking when gains are valued convexly, averse when concave.
fn study1_answer(p: &PtParams) -> &'static str {
    if p.alpha() > 1.02 {
        "(1)"
    } else if p.alpha() < 0.98 {
        "(3)"
    } else {
        "(2)"
    }
}

fn study2_answer(p: &PtParams) -> String {
    money_trimmed((5.0 * p.alpha()).clamp(0.0, 10.0))
}

fn case_study_answer(p: &PtParams) -> String {
    let slot = match (p.alpha() > 1.0, p.beta() > 1.0) {
        (true, true) => 0,
        (true, false) => 1,
        (false, true) => 2,
        (false, false) => 3,
    };
    let names = [
        "Cryptocurrencies",
        "Growth Stocks",
        "Distressed Bonds",
        "Government Bonds",
    ];
    names
        .iter()
        .enumerate()
        .map(|(i, n)| format!("{n} : {}", if i == slot { 100 } else { 0 }))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Answers any prompt rendered by this crate.
///
/// Study 3 prompts get prospect-theory decisions in the bracketed answer
/// format. Study 1, Study 2 and the case study get fixed heuristics of the
/// parameters (see the crate README).
pub fn synthetic_respond(spec: &SyntheticAgentSpec, prompt: &str) -> Result<String, AgentError> {
    if prompt.contains(STUDY3_MARKER) {
        let ladder = ladder_from_prompt(prompt)?;
        let d = synthetic_decisions(spec, &ladder, prompt);
        Ok(format_answer(&d.coherent, &ladder, Some(REASON)))
    } else if prompt.contains(STUDY1_MARKER) {
        Ok(study1_answer(&spec.params).to_string())
    } else if prompt.contains(STUDY2_MARKER) {
        Ok(study2_answer(&spec.params))
    } else if prompt.contains(CASE_STUDY_MARKER) {
        Ok(case_study_answer(&spec.params))
    } else {
        Err(AgentError::Template("unknown prompt template".into()))
    }
}

/// Synthetic agents keyed by persona id, with an optional fallback.
#[derive(Debug, Clone, Default, Serialize)]
pub struct SyntheticBackend {
    agents: BTreeMap<String, SyntheticAgentSpec>,
    fallback: Option<SyntheticAgentSpec>,
}

impl SyntheticBackend {
    pub fn uniform(spec: SyntheticAgentSpec) -> Self {
        Self {
            agents: BTreeMap::new(),
            fallback: Some(spec),
        }
    }

    pub fn from_agents(agents: BTreeMap<String, SyntheticAgentSpec>) -> Self {
        Self { agents, fallback: None }
    }

    pub fn with_fallback(mut self, spec: SyntheticAgentSpec) -> Self {
        self.fallback = Some(spec);
        self
    }

    pub fn spec_for(&self, persona_id: &str) -> Option<&SyntheticAgentSpec> {
        self.agents.get(persona_id).or(self.fallback.as_ref())
    }
}

impl AgentBackend for SyntheticBackend {
    fn respond(&self, prompt: &str, ctx: &RequestContext) -> Result<String, AgentError> {
        let spec = self
            .spec_for(&ctx.persona_id)
            .ok_or_else(|| AgentError::Config(format!("no synthetic agent for persona {:?}", ctx.persona_id)))?;
        synthetic_respond(spec, prompt)
    }

    fn identity(&self) -> BackendIdentity {
        BackendIdentity::new("synthetic", self)
    }
}
