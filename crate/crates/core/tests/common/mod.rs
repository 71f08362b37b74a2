#![allow(dead_code)]

use std::collections::BTreeMap;

use persona_risk::agents::{SyntheticAgentSpec, SyntheticBackend};
use persona_risk::alignment::{RiskClass, RiskLabel, StatementBanks, StatementRecord};
use persona_risk::persona::{AgeBand, Education, Gender, IncomeBand};
use persona_risk::pipeline::EvalClassDataset;
use persona_risk::{Persona, PtParams};

const GENDERS: [Gender; 2] = [Gender::Male, Gender::Female];
const AGES: [AgeBand; 4] = [
    AgeBand::Age20To30,
    AgeBand::Age30To40,
    AgeBand::Age40To50,
    AgeBand::Age50To60,
];
const EDUCATION: [Education; 3] = [Education::BelowBachelor, Education::Bachelor, Education::MasterOrAbove];
const INCOMES: [IncomeBand; 4] = [
    IncomeBand::Under50k,
    IncomeBand::From50kTo100k,
    IncomeBand::From100kTo200k,
    IncomeBand::Over200k,
];

/// `n` personas cycling through every attribute at co-prime strides so all
/// groups are populated.
pub fn population(n: usize) -> Vec<Persona> {
    (0..n)
        .map(|i| {
            let gender = GENDERS[i % 2];
            let age = AGES[(i / 2) % 4];
            let education = EDUCATION[i % 3];
            let income = INCOMES[(i / 3) % 4];
            Persona {
                id: format!("p{i:04}"),
                description: format!(
                    "A {} aged {} with {} education earning {} a year (respondent {i}).",
                    gender.label().to_lowercase(),
                    age.label(),
                    education.label(),
                    income.label()
                ),
                gender,
                age_band: age,
                education,
                income_band: income,
            }
        })
        .collect()
}

pub fn personas_jsonl(personas: &[Persona]) -> String {
    personas
        .iter()
        .map(|p| serde_json::to_string(p).unwrap() + "\n")
        .collect()
}

/// Ten personas per class, the class following the position.
pub fn eval_dataset(per_class: usize) -> EvalClassDataset {
    let ps = population(4 * per_class);
    let entries = ps
        .into_iter()
        .enumerate()
        .map(|(i, p)| (p, RiskClass::ALL[i % 4]))
        .collect();
    EvalClassDataset::new(entries).unwrap()
}

pub fn eval_jsonl(dataset: &EvalClassDataset) -> String {
    dataset
        .entries()
        .iter()
        .map(|(p, c)| {
            let mut v = serde_json::to_value(p).unwrap();
            v["risk_class"] = serde_json::to_value(c).unwrap();
            v.to_string() + "\n"
        })
        .collect()
}

/// Synthetic agents whose gain curvature cycles through seeking, neutral and
/// averse, so Study 1 labels cover all three classes.
pub fn mixed_backend(personas: &[Persona]) -> SyntheticBackend {
    let alphas = [1.15, 1.0, 0.85];
    let agents: BTreeMap<String, SyntheticAgentSpec> = personas
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let params = PtParams::new(alphas[i % 3], 0.9, 1.5, 0.8).unwrap();
            (p.id.clone(), SyntheticAgentSpec::noiseless(params))
        })
        .collect();
    SyntheticBackend::from_agents(agents)
}

pub fn statement_records() -> Vec<StatementRecord> {
    let mut out = Vec::new();
    for (class, stem) in [
        (RiskLabel::RiskSeeking, "I chase big wins"),
        (RiskLabel::RiskNeutral, "I weigh odds evenly"),
        (RiskLabel::RiskAverse, "I keep my savings safe"),
    ] {
        for k in 0..5 {
            out.push(StatementRecord {
                text: format!("{stem}, statement {k}."),
                class,
            });
        }
    }
    out
}

pub fn statement_banks() -> StatementBanks {
    StatementBanks::new(statement_records()).unwrap()
}

pub fn statements_jsonl() -> String {
    statement_records()
        .iter()
        .map(|r| serde_json::to_string(r).unwrap() + "\n")
        .collect()
}
