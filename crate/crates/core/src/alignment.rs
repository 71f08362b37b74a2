//! Preference-pair datasets for DPO training and in-context demonstrations.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentBackend, AgentError, RequestContext};
use crate::elicitation::{build_ladder, format_answer, option_line, SureOptionLadder, DEFAULT_RUNGS};
use crate::fitting::Battery;
use crate::persona::{read_jsonl, Persona, PersonaError};
use crate::prompts::{fill, money_fixed, percent, render_study1, ICL_DEMO_TEMPLATE};
use crate::prospect::{optimal_decisions, Composition, DecisionSequence, Prospect, PtParams};

#[derive(Debug, Error)]
pub enum AlignmentError {
    #[error("statement bank {0} is empty")]
    EmptyBank(RiskLabel),
    #[error("no exemplar personas for class {0}")]
    EmptyExemplarList(RiskClass),
    #[error("no choice token in answer {0:?}")]
    Parse(String),
    #[error("{0}")]
    Shape(String),
    #[error("battery has no gain-only or loss-only prospect for demonstrations")]
    NoDemoProspect,
    #[error("invalid class ranges: {0}")]
    Ranges(String),
    #[error(transparent)]
    Records(#[from] PersonaError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed record: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RiskLabel {
    #[serde(rename = "RS", alias = "RiskSeeking")]
    RiskSeeking,
    #[serde(rename = "RN", alias = "RiskNeutral")]
    RiskNeutral,
    #[serde(rename = "RA", alias = "RiskAverse")]
    RiskAverse,
}

impl RiskLabel {
    pub const ALL: [RiskLabel; 3] = [RiskLabel::RiskSeeking, RiskLabel::RiskNeutral, RiskLabel::RiskAverse];

    pub fn code(&self) -> &'static str {
        match self {
            RiskLabel::RiskSeeking => "RS",
            RiskLabel::RiskNeutral => "RN",
            RiskLabel::RiskAverse => "RA",
        }
    }

    /// Ordinal risk-seeking score: averse 0, neutral 1, seeking 2.
    pub fn ordinal(&self) -> f64 {
        match self {
            RiskLabel::RiskSeeking => 2.0,
            RiskLabel::RiskNeutral => 1.0,
            RiskLabel::RiskAverse => 0.0,
        }
    }
}

impl fmt::Display for RiskLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

fn choice_patterns() -> &'static [Regex; 2] {
    static RE: OnceLock<[Regex; 2]> = OnceLock::new();
    RE.get_or_init(|| {
        [
            Regex::new(r"\(\s*([123])\s*\)").unwrap(),
            Regex::new(r"^\s*([123])\b").unwrap(),
        ]
    })
}

/// Reads the first `(1)`/`(2)`/`(3)` choice (or a bare leading digit) from a
/// Study 1 answer.
pub fn parse_study1_choice(answer: &str) -> Result<RiskLabel, AlignmentError> {
    let digit = choice_patterns()
        .iter()
        .find_map(|re| re.captures(answer).map(|c| c[1].to_string()))
        .ok_or_else(|| AlignmentError::Parse(answer.to_string()))?;
    Ok(match digit.as_str() {
        "1" => RiskLabel::RiskSeeking,
        "2" => RiskLabel::RiskNeutral,
        _ => RiskLabel::RiskAverse,
    })
}

/// Labels a persona by asking the backend the Study 1 question.
pub fn pseudo_label(persona: &Persona, backend: &dyn AgentBackend) -> Result<RiskLabel, AlignmentError> {
    let answer = backend.respond(
        &render_study1(&persona.description),
        &RequestContext::for_persona(&persona.id),
    )?;
    parse_study1_choice(&answer)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatementRecord {
    pub text: String,
    pub class: RiskLabel,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatementBanks {
    rs: Vec<String>,
    rn: Vec<String>,
    ra: Vec<String>,
}

impl StatementBanks {
    /// Builds the banks, dropping repeated statements within a class (first
    /// occurrence kept).
    pub fn new(records: impl IntoIterator<Item = StatementRecord>) -> Result<Self, AlignmentError> {
        let mut banks = Self {
            rs: Vec::new(),
            rn: Vec::new(),
            ra: Vec::new(),
        };
        let mut seen: HashSet<(RiskLabel, String)> = HashSet::new();
        for r in records {
            let text = r.text.trim().to_string();
            if text.is_empty() || !seen.insert((r.class, text.clone())) {
                continue;
            }
            banks.bank_mut(r.class).push(text);
        }
        for l in RiskLabel::ALL {
            if banks.bank(l).is_empty() {
                return Err(AlignmentError::EmptyBank(l));
            }
        }
        Ok(banks)
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self, AlignmentError> {
        let records: Vec<(usize, StatementRecord)> = read_jsonl(reader)?;
        Self::new(records.into_iter().map(|(_, r)| r))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AlignmentError> {
        Self::read_jsonl(BufReader::new(File::open(path)?))
    }

    pub fn bank(&self, label: RiskLabel) -> &[String] {
        match label {
            RiskLabel::RiskSeeking => &self.rs,
            RiskLabel::RiskNeutral => &self.rn,
            RiskLabel::RiskAverse => &self.ra,
        }
    }

    fn bank_mut(&mut self, label: RiskLabel) -> &mut Vec<String> {
        match label {
            RiskLabel::RiskSeeking => &mut self.rs,
            RiskLabel::RiskNeutral => &mut self.rn,
            RiskLabel::RiskAverse => &mut self.ra,
        }
    }
}

pub const DPO_PROMPT_PREFIX: &str = "Pretend you are an agent with the following persona: ";
pub const DPO_PROMPT_SUFFIX: &str =
    " Here is something you would say based on the risk preference inferred from your persona:";

pub fn dpo_prompt(persona: &str) -> String {
    format!("{DPO_PROMPT_PREFIX}{persona}{DPO_PROMPT_SUFFIX}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairProvenance {
    pub persona_id: String,
    pub label: RiskLabel,
    pub positive_index: usize,
    pub negative_class: RiskLabel,
    pub negative_index: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreferencePair {
    pub persona_prompt: String,
    pub positive: String,
    pub negative: String,
    pub provenance: PairProvenance,
}

/// One or more pairs per persona. The positive statement is drawn uniformly
/// from the bank matching the label; the negative uniformly from the union of
/// the other two banks.
pub fn build_preference_pairs(
    personas: &[Persona],
    labels: &[RiskLabel],
    banks: &StatementBanks,
    seed: u64,
    pairs_per_persona: usize,
) -> Result<Vec<PreferencePair>, AlignmentError> {
    if personas.len() != labels.len() {
        return Err(AlignmentError::Shape(format!(
            "{} personas but {} labels",
            personas.len(),
            labels.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(personas.len() * pairs_per_persona);
    for (persona, &label) in personas.iter().zip(labels) {
        let positives = banks.bank(label);
        let others: Vec<RiskLabel> = RiskLabel::ALL.into_iter().filter(|l| *l != label).collect();
        let union_len: usize = others.iter().map(|l| banks.bank(*l).len()).sum();
        for _ in 0..pairs_per_persona {
            let positive_index = rng.random_range(0..positives.len());
            let mut k = rng.random_range(0..union_len);
            let mut negative_class = others[0];
            for &l in &others {
                let n = banks.bank(l).len();
                if k < n {
                    negative_class = l;
                    break;
                }
                k -= n;
            }
            out.push(PreferencePair {
                persona_prompt: dpo_prompt(&persona.description),
                positive: positives[positive_index].clone(),
                negative: banks.bank(negative_class)[k].clone(),
                provenance: PairProvenance {
                    persona_id: persona.id.clone(),
                    label,
                    positive_index,
                    negative_class,
                    negative_index: k,
                    seed,
                },
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DpoRecord {
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    pub metadata: PairProvenance,
}

impl From<&PreferencePair> for DpoRecord {
    fn from(p: &PreferencePair) -> Self {
        Self {
            prompt: p.persona_prompt.clone(),
            chosen: p.positive.clone(),
            rejected: p.negative.clone(),
            metadata: p.provenance.clone(),
        }
    }
}

impl From<DpoRecord> for PreferencePair {
    fn from(r: DpoRecord) -> Self {
        Self {
            persona_prompt: r.prompt,
            positive: r.chosen,
            negative: r.rejected,
            provenance: r.metadata,
        }
    }
}

/// Path of the trainer-config sidecar written next to a DPO dataset.
pub fn sidecar_path(dataset: &Path) -> PathBuf {
    let mut name = dataset.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".trainer.json");
    dataset.with_file_name(name)
}

/// Writes the dataset as JSON lines plus a sidecar naming the training
/// objective. Loss hyperparameters are left to the trainer.
pub fn emit_dpo_dataset(pairs: &[PreferencePair], path: &Path) -> Result<(), AlignmentError> {
    let mut w = BufWriter::new(File::create(path)?);
    for p in pairs {
        serde_json::to_writer(&mut w, &DpoRecord::from(p))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    let sidecar = serde_json::json!({
        "objective": "direct_preference_optimization",
        "dataset": path.file_name().map(|n| n.to_string_lossy().into_owned()),
        "fields": {"prompt": "prompt", "chosen": "chosen", "rejected": "rejected"},
        "records": pairs.len(),
        "trainer_owned": ["policy_model", "reference_model", "beta", "loss_type"],
    });
    let mut s = serde_json::to_string_pretty(&sidecar)?;
    s.push('\n');
    std::fs::write(sidecar_path(path), s)?;
    Ok(())
}

pub fn read_dpo_dataset(path: &Path) -> Result<Vec<PreferencePair>, AlignmentError> {
    let records: Vec<(usize, DpoRecord)> = read_jsonl(BufReader::new(File::open(path)?))?;
    Ok(records.into_iter().map(|(_, r)| r.into()).collect())
}

/// The four gain/loss risk profiles of the evaluation personas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RiskClass {
    C1,
    C2,
    C3,
    C4,
}

impl RiskClass {
    pub const ALL: [RiskClass; 4] = [RiskClass::C1, RiskClass::C2, RiskClass::C3, RiskClass::C4];

    /// Risk-seeking for gains (large α)?
    pub fn large_alpha(&self) -> bool {
        matches!(self, RiskClass::C1 | RiskClass::C2)
    }

    /// Risk-seeking for losses (large β)?
    pub fn large_beta(&self) -> bool {
        matches!(self, RiskClass::C1 | RiskClass::C3)
    }

    pub fn from_profile(large_alpha: bool, large_beta: bool) -> Self {
        match (large_alpha, large_beta) {
            (true, true) => RiskClass::C1,
            (true, false) => RiskClass::C2,
            (false, true) => RiskClass::C3,
            (false, false) => RiskClass::C4,
        }
    }

    pub fn description(&self) -> &'static str {
        match self {
            RiskClass::C1 => "risk-seeking for gains and losses",
            RiskClass::C2 => "risk-seeking for gains, risk-averse for losses",
            RiskClass::C3 => "risk-averse for gains, risk-seeking for losses",
            RiskClass::C4 => "risk-averse for both gains and losses",
        }
    }

    pub fn index(&self) -> usize {
        *self as usize
    }
}

impl fmt::Display for RiskClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "C{}", self.index() + 1)
    }
}

/// Parameter ranges per class. Large values lie in `(large_min, large_max]`,
/// small values in `[small_min, small_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassRanges {
    pub large_min: f64,
    pub large_max: f64,
    pub small_min: f64,
    pub small_max: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub phi: f64,
}

impl Default for ClassRanges {
    fn default() -> Self {
        Self {
            large_min: 1.0,
            large_max: 1.3,
            small_min: 0.7,
            small_max: 1.0,
            lambda_min: 0.8,
            lambda_max: 1.5,
            phi: 1.0,
        }
    }
}

impl ClassRanges {
    pub fn validate(&self) -> Result<(), AlignmentError> {
        let ok = self.small_min < self.small_max
            && self.large_min < self.large_max
            && self.lambda_min <= self.lambda_max
            && self.small_min > 0.0
            && self.lambda_min > 0.0
            && self.phi > 0.0;
        if ok {
            Ok(())
        } else {
            Err(AlignmentError::Ranges(format!("{self:?}")))
        }
    }

    pub fn admits_alpha(&self, class: RiskClass, a: f64) -> bool {
        self.admits(class.large_alpha(), a)
    }

    pub fn admits_beta(&self, class: RiskClass, b: f64) -> bool {
        self.admits(class.large_beta(), b)
    }

    fn admits(&self, large: bool, x: f64) -> bool {
        if large {
            x > self.large_min && x <= self.large_max
        } else {
            x >= self.small_min && x < self.small_max
        }
    }

    fn draw(&self, large: bool, rng: &mut ChaCha8Rng) -> f64 {
        let u: f64 = rng.random();
        if large {
            self.large_max - u * (self.large_max - self.large_min)
        } else {
            self.small_min + u * (self.small_max - self.small_min)
        }
    }

    /// Rounds to two decimals, stepping 0.01 inwards if rounding left the
    /// half-open range.
    fn round_within(&self, large: bool, x: f64) -> f64 {
        let r = (x * 100.0).round() / 100.0;
        if self.admits(large, r) {
            r
        } else if large {
            ((r + 0.01) * 100.0).round() / 100.0
        } else {
            ((r - 0.01) * 100.0).round() / 100.0
        }
    }
}

pub fn sample_class_params(class: RiskClass, seed: u64, ranges: &ClassRanges) -> PtParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_with(class, &mut rng, ranges)
}

fn sample_with(class: RiskClass, rng: &mut ChaCha8Rng, ranges: &ClassRanges) -> PtParams {
    let alpha = ranges.draw(class.large_alpha(), rng);
    let beta = ranges.draw(class.large_beta(), rng);
    let u: f64 = rng.random();
    let lambda = ranges.lambda_min + u * (ranges.lambda_max - ranges.lambda_min);
    PtParams::new(alpha, beta, lambda, ranges.phi).expect("class ranges lie within the parameter sanity range")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DemoMode {
    /// Demonstration drawn from the target persona's class.
    Consistent,
    /// Demonstration class drawn uniformly from all four.
    Random,
}

impl fmt::Display for DemoMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DemoMode::Consistent => "consistent",
            DemoMode::Random => "random",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IclDemo {
    pub mode: DemoMode,
    pub target_class: RiskClass,
    pub class: RiskClass,
    pub exemplar_id: String,
    /// Two-decimal parameters, as printed in the premise.
    pub params: PtParams,
    pub prospect: Prospect,
    pub ladder: SureOptionLadder,
    pub decisions: DecisionSequence,
    pub text: String,
}

/// Groups personas by class for use as demonstration exemplars.
pub fn exemplars_by_class<'a>(
    tagged: impl IntoIterator<Item = (&'a Persona, RiskClass)>,
) -> BTreeMap<RiskClass, Vec<Persona>> {
    let mut m: BTreeMap<RiskClass, Vec<Persona>> = RiskClass::ALL.iter().map(|c| (*c, Vec::new())).collect();
    for (p, c) in tagged {
        m.entry(c).or_default().push(p.clone());
    }
    m
}

/// Builds one worked demonstration: class premise with parameters, a gain or
/// loss prospect from the battery, its ladder, and the decisions those
/// parameters imply.
pub fn build_icl_demo(
    mode: DemoMode,
    target_class: RiskClass,
    seed: u64,
    exemplars: &BTreeMap<RiskClass, Vec<Persona>>,
    battery: &Battery,
    ranges: &ClassRanges,
) -> Result<IclDemo, AlignmentError> {
    for c in RiskClass::ALL {
        if exemplars.get(&c).is_none_or(|v| v.is_empty()) {
            return Err(AlignmentError::EmptyExemplarList(c));
        }
    }
    let candidates: Vec<&Prospect> = battery
        .prospects()
        .iter()
        .filter(|p| p.composition() != Composition::Mixed)
        .collect();
    if candidates.is_empty() {
        return Err(AlignmentError::NoDemoProspect);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let class = match mode {
        DemoMode::Consistent => target_class,
        DemoMode::Random => RiskClass::ALL[rng.random_range(0..4)],
    };
    let pool = &exemplars[&class];
    let exemplar = &pool[rng.random_range(0..pool.len())];
    let raw = sample_with(class, &mut rng, ranges);
    let alpha = ranges.round_within(class.large_alpha(), raw.alpha());
    let beta = ranges.round_within(class.large_beta(), raw.beta());
    let lambda = (raw.lambda() * 100.0).round() / 100.0;
    let params = PtParams::new(alpha, beta, lambda, raw.phi()).expect("rounded class parameters stay valid");
    let prospect = *candidates[rng.random_range(0..candidates.len())];
    let ladder = build_ladder(&prospect, DEFAULT_RUNGS).expect("battery prospects have distinct outcomes");
    let decisions = optimal_decisions(&prospect, &ladder, &params);
    let options: Vec<String> = ladder.rungs().iter().map(|&s| option_line(s)).collect();
    let text = fill(
        ICL_DEMO_TEMPLATE,
        &[
            ("class", &class.to_string()),
            ("alpha", &format!("{alpha:.2}")),
            ("beta", &format!("{beta:.2}")),
            ("lambda", &format!("{lambda:.2}")),
            ("x1", &money_fixed(prospect.x1())),
            ("p1", &percent(prospect.p1())),
            ("x2", &money_fixed(prospect.x2())),
            ("p2", &percent(prospect.p2())),
            ("ev", &money_fixed(prospect.expected_value())),
            ("options", &options.join("\n")),
            ("output", &format_answer(&decisions, &ladder, None)),
            ("persona", &exemplar.description),
        ],
    );
    Ok(IclDemo {
        mode,
        target_class,
        class,
        exemplar_id: exemplar.id.clone(),
        params,
        prospect,
        ladder,
        decisions,
        text,
    })
}

/// A task prompt preceded by its demonstration.
pub fn with_demonstration(demo: &IclDemo, task_prompt: &str) -> String {
    format!("{}\n{}", demo.text, task_prompt)
}
