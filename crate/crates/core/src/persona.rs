//! Personas and their demographic attributes.

use std::collections::HashSet;
use std::fmt;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gender {
    Male,
    Female,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgeBand {
    #[serde(rename = "20-30")]
    Age20To30,
    #[serde(rename = "30-40")]
    Age30To40,
    #[serde(rename = "40-50")]
    Age40To50,
    #[serde(rename = "50-60")]
    Age50To60,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Education {
    BelowBachelor,
    Bachelor,
    MasterOrAbove,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IncomeBand {
    #[serde(rename = "0-50k")]
    Under50k,
    #[serde(rename = "50-100k")]
    From50kTo100k,
    #[serde(rename = "100-200k")]
    From100kTo200k,
    #[serde(rename = ">200k")]
    Over200k,
}

impl Gender {
    pub const ALL: [Gender; 2] = [Gender::Male, Gender::Female];
    pub fn label(&self) -> &'static str {
        match self {
            Gender::Male => "Male",
            Gender::Female => "Female",
        }
    }
}

impl AgeBand {
    pub const ALL: [AgeBand; 4] = [
        AgeBand::Age20To30,
        AgeBand::Age30To40,
        AgeBand::Age40To50,
        AgeBand::Age50To60,
    ];
    pub fn label(&self) -> &'static str {
        match self {
            AgeBand::Age20To30 => "20-30",
            AgeBand::Age30To40 => "30-40",
            AgeBand::Age40To50 => "40-50",
            AgeBand::Age50To60 => "50-60",
        }
    }
}

impl Education {
    pub const ALL: [Education; 3] = [Education::BelowBachelor, Education::Bachelor, Education::MasterOrAbove];
    pub fn label(&self) -> &'static str {
        match self {
            Education::BelowBachelor => "BelowBachelor",
            Education::Bachelor => "Bachelor",
            Education::MasterOrAbove => "MasterOrAbove",
        }
    }
}

impl IncomeBand {
    pub const ALL: [IncomeBand; 4] = [
        IncomeBand::Under50k,
        IncomeBand::From50kTo100k,
        IncomeBand::From100kTo200k,
        IncomeBand::Over200k,
    ];
    pub fn label(&self) -> &'static str {
        match self {
            IncomeBand::Under50k => "0-50k",
            IncomeBand::From50kTo100k => "50-100k",
            IncomeBand::From100kTo200k => "100-200k",
            IncomeBand::Over200k => ">200k",
        }
    }
}

/// The four demographic attributes scored by the disparity metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Attribute {
    Gender,
    Age,
    Education,
    Income,
}

impl Attribute {
    pub const ALL: [Attribute; 4] = [
        Attribute::Gender,
        Attribute::Age,
        Attribute::Education,
        Attribute::Income,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Attribute::Gender => "Gender",
            Attribute::Age => "Age",
            Attribute::Education => "Education",
            Attribute::Income => "Income",
        }
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Persona {
    pub id: String,
    pub description: String,
    pub gender: Gender,
    pub age_band: AgeBand,
    pub education: Education,
    pub income_band: IncomeBand,
}

impl Persona {
    /// Group label of this persona for `attr`.
    pub fn group(&self, attr: Attribute) -> &'static str {
        match attr {
            Attribute::Gender => self.gender.label(),
            Attribute::Age => self.age_band.label(),
            Attribute::Education => self.education.label(),
            Attribute::Income => self.income_band.label(),
        }
    }
}

#[derive(Debug, Error)]
pub enum PersonaError {
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("line {line}: duplicate persona id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Parses line-delimited JSON records of type `T`, skipping blank lines.
/// Returns each record with its 1-based line number.
pub fn read_jsonl<T, R>(reader: R) -> Result<Vec<(usize, T)>, PersonaError>
where
    T: serde::de::DeserializeOwned,
    R: BufRead,
{
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| PersonaError::Schema {
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push((idx + 1, rec));
    }
    Ok(out)
}

pub fn parse_personas<R: BufRead>(reader: R) -> Result<Vec<Persona>, PersonaError> {
    validate_personas(read_jsonl(reader)?)
}

/// Rejects empty ids or descriptions and repeated ids.
pub(crate) fn validate_personas(records: Vec<(usize, Persona)>) -> Result<Vec<Persona>, PersonaError> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(records.len());
    for (line, p) in records {
        if p.id.trim().is_empty() {
            return Err(PersonaError::Schema {
                line,
                message: "empty id".into(),
            });
        }
        if p.description.trim().is_empty() {
            return Err(PersonaError::Schema {
                line,
                message: "empty description".into(),
            });
        }
        if !seen.insert(p.id.clone()) {
            return Err(PersonaError::DuplicateId { line, id: p.id });
        }
        out.push(p);
    }
    Ok(out)
}

pub fn load_personas(path: impl AsRef<Path>) -> Result<Vec<Persona>, PersonaError> {
    let f = std::fs::File::open(path)?;
    parse_personas(std::io::BufReader::new(f))
}
