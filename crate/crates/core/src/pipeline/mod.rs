//! Study orchestration: render prompts per persona, query a backend, parse,
//! score, and persist.

mod config;
mod parse;
mod report;

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{
    build_backend, load_synthetic_backend, BackendConfig, BackendKind, DpoOptions, MarketStats, MatchedAssets,
    PipelineConfig, SyntheticConfig,
};
pub use parse::{parse_allocation, parse_study2_amount, AnswerError};
pub use report::{emit_reports, format_rds_cell, write_manifest, write_results, LabelledRun};

use crate::agents::{sha256_hex, AgentBackend, AgentError, BackendIdentity, RequestContext};
use crate::alignment::{parse_study1_choice, AlignmentError, RiskClass, RiskLabel};
use crate::elicitation::{
    build_ladder, extract_empirical_ce, parse_decision_sequence, render_study3_prompt, CeObservation,
};
use crate::fitting::{fit_pt_params, Battery, BatteryError, FitConfig, FitError, FitResult};
use crate::metrics::{rds_report, RdsReport, ReferenceOrderings};
use crate::parallel::{self, Execution};
use crate::persona::{read_jsonl, validate_personas, Persona, PersonaError};
use crate::prompts::{render_case_study, render_study1, render_study2};
use crate::prospect::Prospect;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Persona(#[from] PersonaError),
    #[error(transparent)]
    Battery(#[from] BatteryError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Alignment(#[from] AlignmentError),
    #[error("{study} aborted: {failures} of {total} personas failed")]
    Aborted {
        study: Study,
        failures: usize,
        total: usize,
        run: Box<StudyRun>,
    },
    #[error("no runs to report")]
    EmptyRunSet,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Study {
    Study1,
    Study2,
    Study3,
    CaseStudy,
}

impl fmt::Display for Study {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Study::Study1 => "study1",
            Study::Study2 => "study2",
            Study::Study3 => "study3",
            Study::CaseStudy => "case-study",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Asset {
    Cryptocurrencies,
    GrowthStocks,
    DistressedBonds,
    GovernmentBonds,
}

impl Asset {
    pub const ALL: [Asset; 4] = [
        Asset::Cryptocurrencies,
        Asset::GrowthStocks,
        Asset::DistressedBonds,
        Asset::GovernmentBonds,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Asset::Cryptocurrencies => "Cryptocurrencies",
            Asset::GrowthStocks => "Growth Stocks",
            Asset::DistressedBonds => "Distressed Bonds",
            Asset::GovernmentBonds => "Government Bonds",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunOptions {
    /// Extra attempts after a parse or coherence failure.
    pub retries: u32,
    /// Abort when more than this share of personas fail.
    pub abort_threshold: f64,
    pub rungs: usize,
    pub fit: FitConfig,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            retries: 1,
            abort_threshold: 0.5,
            rungs: crate::elicitation::DEFAULT_RUNGS,
            fit: FitConfig::default(),
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedProspect {
    pub prospect: Prospect,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StudyOutput {
    RiskLabel {
        label: RiskLabel,
        score: f64,
    },
    Investment {
        amount: f64,
    },
    Fit {
        observations: Vec<CeObservation>,
        dropped: Vec<DroppedProspect>,
        fit: FitResult,
    },
    Allocation {
        class: RiskClass,
        allocation: [f64; 4],
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaRecord {
    pub persona_id: String,
    /// Raw answers in the order they were received, retries included.
    pub answers: Vec<String>,
    pub output: Option<StudyOutput>,
    pub failure: Option<String>,
}

impl PersonaRecord {
    pub fn is_success(&self) -> bool {
        self.failure.is_none()
    }

    pub fn fit(&self) -> Option<&FitResult> {
        match &self.output {
            Some(StudyOutput::Fit { fit, .. }) if self.is_success() => Some(fit),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAllocation {
    pub class: RiskClass,
    pub n: usize,
    /// Mean dollars per asset, in [`Asset::ALL`] order.
    pub mean: [f64; 4],
    pub matched_asset: Asset,
    pub matched_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRun {
    pub study: Study,
    pub backend: BackendIdentity,
    pub config_digest: String,
    pub started_at: String,
    pub finished_at: String,
    /// One record per persona, in input order.
    pub records: Vec<PersonaRecord>,
    /// Disparity reports keyed by measure (`risk`, `investment`, `alpha`, `beta`).
    pub rds: BTreeMap<String, RdsReport>,
    pub case_study: Vec<ClassAllocation>,
}

impl StudyRun {
    pub fn successes(&self) -> usize {
        self.records.iter().filter(|r| r.is_success()).count()
    }

    pub fn failures(&self) -> usize {
        self.records.len() - self.successes()
    }

    pub fn record(&self, persona_id: &str) -> Option<&PersonaRecord> {
        self.records.iter().find(|r| r.persona_id == persona_id)
    }
}

/// Personas of the evaluation set, each tagged with its class.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalClassDataset {
    entries: Vec<(Persona, RiskClass)>,
}

#[derive(Deserialize)]
struct EvalRecord {
    #[serde(flatten)]
    persona: Persona,
    risk_class: RiskClass,
}

impl EvalClassDataset {
    pub fn new(entries: Vec<(Persona, RiskClass)>) -> Result<Self, PipelineError> {
        let personas: Vec<(usize, Persona)> = entries
            .iter()
            .enumerate()
            .map(|(i, (p, _))| (i + 1, p.clone()))
            .collect();
        validate_personas(personas)?;
        Ok(Self { entries })
    }

    pub fn read_jsonl<R: std::io::BufRead>(reader: R) -> Result<Self, PipelineError> {
        let recs: Vec<(usize, EvalRecord)> = read_jsonl(reader)?;
        let classes: Vec<RiskClass> = recs.iter().map(|(_, r)| r.risk_class).collect();
        let personas = validate_personas(recs.into_iter().map(|(l, r)| (l, r.persona)).collect())?;
        Ok(Self {
            entries: personas.into_iter().zip(classes).collect(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        Self::read_jsonl(BufReader::new(File::open(path)?))
    }

    pub fn entries(&self) -> &[(Persona, RiskClass)] {
        &self.entries
    }

    pub fn personas(&self) -> Vec<Persona> {
        self.entries.iter().map(|(p, _)| p.clone()).collect()
    }

    pub fn classes(&self) -> BTreeMap<String, RiskClass> {
        self.entries.iter().map(|(p, c)| (p.id.clone(), *c)).collect()
    }

    pub fn class_counts(&self) -> BTreeMap<RiskClass, usize> {
        let mut m: BTreeMap<RiskClass, usize> = RiskClass::ALL.iter().map(|c| (*c, 0)).collect();
        for (_, c) in &self.entries {
            *m.entry(*c).or_default() += 1;
        }
        m
    }

    /// Every class present with the same count.
    pub fn is_balanced(&self) -> bool {
        let counts = self.class_counts();
        let first = counts[&RiskClass::C1];
        first > 0 && counts.values().all(|&n| n == first)
    }
}

struct Session<'a> {
    backend: &'a dyn AgentBackend,
    persona: &'a Persona,
    retries: u32,
    answers: Vec<String>,
}

impl Session<'_> {
    /// Queries with the retry policy: parse failures are retried up to
    /// `retries` times; backend errors are not.
    fn ask<T, E: fmt::Display>(&mut self, prompt: &str, parse: impl Fn(&str) -> Result<T, E>) -> Result<T, String> {
        let mut last = String::new();
        for attempt in 0..=self.retries {
            let ctx = RequestContext {
                persona_id: self.persona.id.clone(),
                attempt,
            };
            let answer = self.backend.respond(prompt, &ctx).map_err(|e| e.to_string())?;
            let parsed = parse(&answer);
            self.answers.push(answer);
            match parsed {
                Ok(v) => return Ok(v),
                Err(e) => last = e.to_string(),
            }
        }
        Err(last)
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339()
}

fn digest_of(opts: &RunOptions, extra: &impl Serialize) -> String {
    let json = serde_json::to_string(&(opts, extra)).expect("options serialise");
    sha256_hex(json.as_bytes())
}

fn fan_out<F>(personas: &[Persona], backend: &dyn AgentBackend, exec: Execution, f: F) -> Vec<PersonaRecord>
where
    F: Fn(&Persona) -> PersonaRecord + Sync + Send,
{
    match backend.max_concurrency() {
        usize::MAX => parallel::map(personas, exec, f),
        n => parallel::map_bounded(personas, exec, n.max(1), f),
    }
}

fn finish(
    study: Study,
    backend: &dyn AgentBackend,
    config_digest: String,
    started_at: String,
    records: Vec<PersonaRecord>,
    opts: &RunOptions,
) -> Result<StudyRun, PipelineError> {
    let run = StudyRun {
        study,
        backend: backend.identity(),
        config_digest,
        started_at,
        finished_at: now(),
        records,
        rds: BTreeMap::new(),
        case_study: Vec::new(),
    };
    let total = run.records.len();
    let failures = run.failures();
    for r in run.records.iter().filter(|r| !r.is_success()) {
        log::warn!(
            "{study}: persona {} failed: {}",
            r.persona_id,
            r.failure.as_deref().unwrap_or("")
        );
    }
    if failures as f64 > opts.abort_threshold * total as f64 {
        return Err(PipelineError::Aborted {
            study,
            failures,
            total,
            run: Box::new(run),
        });
    }
    Ok(run)
}

fn require_personas(personas: &[Persona]) -> Result<(), PipelineError> {
    if personas.is_empty() {
        Err(PipelineError::Config("no personas".into()))
    } else {
        Ok(())
    }
}

fn scalar_outputs(run: &StudyRun, pick: impl Fn(&StudyOutput) -> Option<f64>) -> BTreeMap<String, f64> {
    run.records
        .iter()
        .filter(|r| r.is_success())
        .filter_map(|r| r.output.as_ref().and_then(&pick).map(|v| (r.persona_id.clone(), v)))
        .collect()
}

/// Study 1: risk attitude class, scored averse 0, neutral 1, seeking 2.
pub fn run_study1(
    personas: &[Persona],
    backend: &dyn AgentBackend,
    references: &ReferenceOrderings,
    opts: &RunOptions,
) -> Result<StudyRun, PipelineError> {
    require_personas(personas)?;
    let started = now();
    let records = fan_out(personas, backend, opts.execution, |p| {
        let mut s = Session {
            backend,
            persona: p,
            retries: opts.retries,
            answers: Vec::new(),
        };
        let res = s.ask(&render_study1(&p.description), parse_study1_choice);
        match res {
            Ok(label) => PersonaRecord {
                persona_id: p.id.clone(),
                answers: s.answers,
                output: Some(StudyOutput::RiskLabel {
                    label,
                    score: label.ordinal(),
                }),
                failure: None,
            },
            Err(e) => PersonaRecord {
                persona_id: p.id.clone(),
                answers: s.answers,
                output: None,
                failure: Some(e),
            },
        }
    });
    let mut run = finish(
        Study::Study1,
        backend,
        digest_of(opts, references),
        started,
        records,
        opts,
    )?;
    let scores = scalar_outputs(&run, |o| match o {
        StudyOutput::RiskLabel { score, .. } => Some(*score),
        _ => None,
    });
    run.rds.insert("risk".into(), rds_report(&scores, personas, references));
    Ok(run)
}

/// Study 2: dollars (of 10) put in the risky asset.
pub fn run_study2(
    personas: &[Persona],
    backend: &dyn AgentBackend,
    market: &MarketStats,
    references: &ReferenceOrderings,
    opts: &RunOptions,
) -> Result<StudyRun, PipelineError> {
    require_personas(personas)?;
    let (sp500, treasury) = match (&market.sp500, &market.treasury) {
        (Some(s), Some(t)) => (s.as_str(), t.as_str()),
        _ => {
            return Err(PipelineError::Config(
                "Study 2 needs market.sp500 and market.treasury statistics".into(),
            ))
        }
    };
    let started = now();
    let records = fan_out(personas, backend, opts.execution, |p| {
        let mut s = Session {
            backend,
            persona: p,
            retries: opts.retries,
            answers: Vec::new(),
        };
        match s.ask(&render_study2(&p.description, sp500, treasury), parse_study2_amount) {
            Ok(amount) => PersonaRecord {
                persona_id: p.id.clone(),
                answers: s.answers,
                output: Some(StudyOutput::Investment { amount }),
                failure: None,
            },
            Err(e) => PersonaRecord {
                persona_id: p.id.clone(),
                answers: s.answers,
                output: None,
                failure: Some(e),
            },
        }
    });
    let mut run = finish(
        Study::Study2,
        backend,
        digest_of(opts, &(market, references)),
        started,
        records,
        opts,
    )?;
    let amounts = scalar_outputs(&run, |o| match o {
        StudyOutput::Investment { amount } => Some(*amount),
        _ => None,
    });
    run.rds
        .insert("investment".into(), rds_report(&amounts, personas, references));
    Ok(run)
}

/// Optional per-persona text placed before each Study 3 prompt, e.g. an
/// in-context demonstration.
pub type PromptPrefixes = BTreeMap<String, String>;

/// Study 3: certainty equivalents over the battery, then a per-persona fit.
///
/// A prospect whose answer fails to parse or is incoherent is asked again
/// `opts.retries` times and then dropped. A persona fails when nothing can
/// be fitted or the fit is underdetermined.
pub fn run_study3(
    personas: &[Persona],
    backend: &dyn AgentBackend,
    battery: &Battery,
    references: &ReferenceOrderings,
    prefixes: Option<&PromptPrefixes>,
    opts: &RunOptions,
) -> Result<StudyRun, PipelineError> {
    require_personas(personas)?;
    let ladders = battery
        .prospects()
        .iter()
        .map(|p| build_ladder(p, opts.rungs))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| PipelineError::Config(format!("battery: {e}")))?;
    let started = now();
    let records = fan_out(personas, backend, opts.execution, |p| {
        let mut s = Session {
            backend,
            persona: p,
            retries: opts.retries,
            answers: Vec::new(),
        };
        let mut observations = Vec::new();
        let mut dropped = Vec::new();
        for ladder in &ladders {
            let mut prompt = render_study3_prompt(p, ladder.prospect(), ladder);
            if let Some(prefix) = prefixes.and_then(|m| m.get(&p.id)) {
                prompt = format!("{prefix}\n{prompt}");
            }
            let res = s.ask(&prompt, |a| {
                let seq = parse_decision_sequence(a, ladder).map_err(|e| e.to_string())?;
                extract_empirical_ce(&seq, ladder).map_err(|e| e.to_string())
            });
            match res {
                Ok(o) => observations.push(o),
                Err(reason) => dropped.push(DroppedProspect {
                    prospect: *ladder.prospect(),
                    reason,
                }),
            }
        }
        let (output, failure) = match fit_pt_params(&observations, &opts.fit) {
            Ok(fit) => (
                Some(StudyOutput::Fit {
                    observations,
                    dropped,
                    fit,
                }),
                None,
            ),
            Err(FitError::Underdetermined { reason, result }) => (
                Some(StudyOutput::Fit {
                    observations,
                    dropped,
                    fit: *result,
                }),
                Some(format!("fit underdetermined: {reason}")),
            ),
            Err(e) => (None, Some(format!("fit failed: {e}"))),
        };
        PersonaRecord {
            persona_id: p.id.clone(),
            answers: s.answers,
            output,
            failure,
        }
    });
    let mut run = finish(
        Study::Study3,
        backend,
        digest_of(opts, &(battery.prospects(), references, prefixes)),
        started,
        records,
        opts,
    )?;
    let alpha = scalar_outputs(&run, |o| match o {
        StudyOutput::Fit { fit, .. } => Some(fit.params.alpha()),
        _ => None,
    });
    let beta = scalar_outputs(&run, |o| match o {
        StudyOutput::Fit { fit, .. } => Some(fit.params.beta()),
        _ => None,
    });
    run.rds.insert("alpha".into(), rds_report(&alpha, personas, references));
    run.rds.insert("beta".into(), rds_report(&beta, personas, references));
    Ok(run)
}

/// Case study: four-asset allocation of 100 dollars, summarised per class.
pub fn run_case_study(
    dataset: &EvalClassDataset,
    backend: &dyn AgentBackend,
    matched: &MatchedAssets,
    opts: &RunOptions,
) -> Result<StudyRun, PipelineError> {
    let personas = dataset.personas();
    require_personas(&personas)?;
    let classes = dataset.classes();
    let started = now();
    let records = fan_out(&personas, backend, opts.execution, |p| {
        let mut s = Session {
            backend,
            persona: p,
            retries: opts.retries,
            answers: Vec::new(),
        };
        match s.ask(&render_case_study(&p.description), parse_allocation) {
            Ok(allocation) => PersonaRecord {
                persona_id: p.id.clone(),
                answers: s.answers,
                output: Some(StudyOutput::Allocation {
                    class: classes[&p.id],
                    allocation,
                }),
                failure: None,
            },
            Err(e) => PersonaRecord {
                persona_id: p.id.clone(),
                answers: s.answers,
                output: None,
                failure: Some(e),
            },
        }
    });
    let mut run = finish(
        Study::CaseStudy,
        backend,
        digest_of(opts, matched),
        started,
        records,
        opts,
    )?;
    run.case_study = summarise_allocations(&run, matched);
    Ok(run)
}

fn summarise_allocations(run: &StudyRun, matched: &MatchedAssets) -> Vec<ClassAllocation> {
    let mut acc: BTreeMap<RiskClass, (usize, [f64; 4])> = BTreeMap::new();
    for r in run.records.iter().filter(|r| r.is_success()) {
        if let Some(StudyOutput::Allocation { class, allocation }) = &r.output {
            let e = acc.entry(*class).or_insert((0, [0.0; 4]));
            e.0 += 1;
            for (s, v) in e.1.iter_mut().zip(allocation) {
                *s += v;
            }
        }
    }
    acc.into_iter()
        .map(|(class, (n, sums))| {
            let mean = sums.map(|s| s / n as f64);
            let matched_asset = matched.for_class(class);
            ClassAllocation {
                class,
                n,
                mean,
                matched_asset,
                matched_mean: mean[matched_asset as usize],
            }
        })
        .collect()
}
