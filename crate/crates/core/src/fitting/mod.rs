//! Per-persona estimation of prospect-theory parameters from empirical
//! certainty equivalents.
//!
//! The objective is the residual sum of squares in money units: each
//! observed CE is compared with the model CE `inverse_value(U(prospect))`.
//! Censored observations (all-accept / all-reject) contribute one-sided hinge
//! residuals. The minimiser is a box-clamped Nelder–Mead restarted from a fixed
//! lattice, so a fit is a pure function of its inputs.

mod nelder_mead;

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use nelder_mead::{minimize, NelderMeadOptions, NelderMeadResult};

use crate::elicitation::{CeObservation, Censoring};
use crate::parallel::{self, Execution};
use crate::persona::{read_jsonl, PersonaError};
use crate::prospect::{certainty_equivalent, Composition, Prospect, PtParams};

#[derive(Debug, Error)]
pub enum FitError {
    #[error("no observations to fit")]
    EmptyBattery,
    /// The composition requirement is unmet. The fit was still run and is
    /// attached, but should not be trusted.
    #[error("underdetermined fit: {reason}")]
    Underdetermined { reason: String, result: Box<FitResult> },
}

#[derive(Debug, Error)]
pub enum BatteryError {
    #[error("battery has no {0:?} prospect")]
    MissingComposition(Composition),
    #[error(transparent)]
    Read(#[from] PersonaError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Bounds of the search box, one `[lo, hi]` pair per parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub alpha: [f64; 2],
    pub beta: [f64; 2],
    pub lambda: [f64; 2],
    pub phi: [f64; 2],
}

impl Default for ParamBox {
    fn default() -> Self {
        Self {
            alpha: [0.28, 2.5],
            beta: [0.28, 2.5],
            lambda: [0.1, 5.0],
            phi: [0.28, 1.5],
        }
    }
}

impl ParamBox {
    fn bounds(&self) -> [[f64; 2]; 4] {
        [self.alpha, self.beta, self.lambda, self.phi]
    }

    pub fn to_unit(&self, p: &PtParams) -> [f64; 4] {
        let b = self.bounds();
        let v = p.to_array();
        std::array::from_fn(|i| (v[i] - b[i][0]) / (b[i][1] - b[i][0]))
    }

    pub fn from_unit(&self, u: &[f64]) -> PtParams {
        let b = self.bounds();
        let v: [f64; 4] = std::array::from_fn(|i| b[i][0] + u[i].clamp(0.0, 1.0) * (b[i][1] - b[i][0]));
        PtParams::from_array(v).expect("box lies inside the sanity range")
    }

    pub fn contains(&self, p: &PtParams) -> bool {
        self.bounds()
            .iter()
            .zip(p.to_array())
            .all(|(b, v)| v >= b[0] && v <= b[1])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub bounds: ParamBox,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub initial_step: f64,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            bounds: ParamBox::default(),
            max_iterations: 2000,
            tolerance: 1e-6,
            initial_step: 0.1,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: PtParams,
    /// Residual sum of squares in dollars squared.
    pub rss: f64,
    pub n_obs: usize,
    pub n_censored: usize,
    pub converged: bool,
    pub starts_tried: usize,
    /// Index into [`start_lattice`] of the winning start.
    pub best_start: usize,
    /// False when no mixed-sign prospect was observed.
    pub lambda_identified: bool,
}

/// Starting points: every combination of alpha, beta in {0.6, 1.0, 1.4},
/// lambda in {0.5, 1.0, 2.5}, phi in {0.5, 1.0}, then the canonical
/// (0.88, 0.88, 2.25, 0.65).
pub fn start_lattice() -> Vec<PtParams> {
    let mut out = Vec::with_capacity(55);
    for a in [0.6, 1.0, 1.4] {
        for b in [0.6, 1.0, 1.4] {
            for l in [0.5, 1.0, 2.5] {
                for p in [0.5, 1.0] {
                    out.push(PtParams::new(a, b, l, p).expect("lattice point in range"));
                }
            }
        }
    }
    out.push(PtParams::canonical());
    out
}

/// Money-unit residual of one observation at `params`.
pub fn residual(params: &PtParams, obs: &CeObservation) -> f64 {
    let model = certainty_equivalent(&obs.prospect, params);
    match obs.censoring {
        Censoring::None => obs.ce - model,
        Censoring::AtBest => {
            if model >= obs.ce {
                0.0
            } else {
                obs.ce - model
            }
        }
        Censoring::AtWorst => {
            if model <= obs.ce {
                0.0
            } else {
                obs.ce - model
            }
        }
    }
}

pub fn residuals(params: &PtParams, observations: &[CeObservation]) -> Result<Vec<f64>, FitError> {
    if observations.is_empty() {
        return Err(FitError::EmptyBattery);
    }
    Ok(observations.iter().map(|o| residual(params, o)).collect())
}

pub fn rss(params: &PtParams, observations: &[CeObservation]) -> f64 {
    observations
        .iter()
        .map(|o| {
            let r = residual(params, o);
            r * r
        })
        .sum()
}

fn composition_check(observations: &[CeObservation]) -> (Option<String>, bool) {
    let uncensored: Vec<&CeObservation> = observations.iter().filter(|o| o.censoring == Censoring::None).collect();
    let has = |c: Composition| uncensored.iter().any(|o| o.prospect.composition() == c);
    let lambda_identified = observations
        .iter()
        .any(|o| o.prospect.composition() == Composition::Mixed);
    let reason = if uncensored.len() < 4 {
        Some(format!("{} uncensored observations, need at least 4", uncensored.len()))
    } else if !has(Composition::GainOnly) {
        Some("no uncensored gain observation".to_string())
    } else if !has(Composition::LossOnly) {
        Some("no uncensored loss observation".to_string())
    } else {
        None
    };
    (reason, lambda_identified)
}

/// Fits prospect-theory parameters to a set of CE observations.
pub fn fit_pt_params(observations: &[CeObservation], config: &FitConfig) -> Result<FitResult, FitError> {
    if observations.is_empty() {
        return Err(FitError::EmptyBattery);
    }
    let bounds = config.bounds;
    let opts = NelderMeadOptions {
        max_iterations: config.max_iterations,
        tolerance: config.tolerance,
        initial_step: config.initial_step,
        ..Default::default()
    };
    let objective = |u: &[f64]| rss(&bounds.from_unit(u), observations);
    let starts = start_lattice();
    let runs = parallel::map(&starts, config.execution, |s| {
        let u0 = bounds.to_unit(s);
        minimize(objective, &u0, &opts)
    });

    // lowest RSS wins, ties go to the earliest lattice index
    let mut best = 0;
    for (i, r) in runs.iter().enumerate().skip(1) {
        if r.fx < runs[best].fx {
            best = i;
        }
    }
    let winner = &runs[best];
    let (reason, lambda_identified) = composition_check(observations);
    let result = FitResult {
        params: bounds.from_unit(&winner.x),
        rss: winner.fx,
        n_obs: observations.len(),
        n_censored: observations.iter().filter(|o| o.censoring != Censoring::None).count(),
        converged: winner.converged,
        starts_tried: starts.len(),
        best_start: best,
        lambda_identified,
    };
    match reason {
        Some(reason) => Err(FitError::Underdetermined {
            reason,
            result: Box::new(result),
        }),
        None => Ok(result),
    }
}

/// A set of prospects presented to every persona.
#[derive(Debug, Clone, PartialEq)]
pub struct Battery {
    prospects: Vec<Prospect>,
}

impl Battery {
    /// Requires at least one gain-only, loss-only and mixed prospect.
    pub fn new(prospects: Vec<Prospect>) -> Result<Self, BatteryError> {
        for c in [Composition::GainOnly, Composition::LossOnly, Composition::Mixed] {
            if !prospects.iter().any(|p| p.composition() == c) {
                return Err(BatteryError::MissingComposition(c));
            }
        }
        Ok(Self { prospects })
    }

    pub fn prospects(&self) -> &[Prospect] {
        &self.prospects
    }

    pub fn len(&self) -> usize {
        self.prospects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prospects.is_empty()
    }

    pub fn tagged(&self) -> impl Iterator<Item = (Composition, &Prospect)> {
        self.prospects.iter().map(|p| (p.composition(), p))
    }

    /// One `{x1, x2, p1, p2}` JSON record per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for p in &self.prospects {
            serde_json::to_writer(&mut w, p)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, BatteryError> {
        let recs: Vec<(usize, Prospect)> = read_jsonl(r)?;
        Self::new(recs.into_iter().map(|(_, p)| p).collect())
    }
}

/// The standard 24-prospect battery: 10 gain, 10 loss, 4 mixed.
pub fn default_battery() -> Battery {
    let mut gains = Vec::new();
    for (a, b) in [(200.0, 100.0), (400.0, 100.0), (150.0, 50.0)] {
        for p in [0.25, 0.5, 0.75] {
            gains.push((a, b, p));
        }
    }
    gains.push((200.0, 100.0, 0.3));
    let mut prospects: Vec<Prospect> = gains
        .iter()
        .map(|&(a, b, p)| Prospect::with_p1(a, b, p).expect("valid gain prospect"))
        .collect();
    prospects.extend(
        gains
            .iter()
            .map(|&(a, b, p)| Prospect::with_p1(-a, -b, p).expect("valid loss prospect")),
    );
    for (a, b) in [(120.0, -80.0), (200.0, -100.0)] {
        for p in [0.3, 0.7] {
            prospects.push(Prospect::with_p1(a, b, p).expect("valid mixed prospect"));
        }
    }
    Battery::new(prospects).expect("default battery covers all compositions")
}
