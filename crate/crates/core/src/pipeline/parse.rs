//! Parsers for Study 2 and case-study answers.

use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use super::Asset;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnswerError {
    #[error("no numeric amount in answer")]
    Parse,
    #[error("amount {0} outside [0, 10]")]
    Range(f64),
    #[error("malformed allocation: {0}")]
    Format(String),
    #[error("allocations sum to {0}, not 100")]
    Sum(f64),
}

fn number() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"-?[0-9]+(?:\.[0-9]+)?").unwrap())
}

/// First number in the answer, which must lie in `[0, 10]`.
pub fn parse_study2_amount(answer: &str) -> Result<f64, AnswerError> {
    let m = number().find(answer).ok_or(AnswerError::Parse)?;
    let v: f64 = m.as_str().parse().map_err(|_| AnswerError::Parse)?;
    if !(0.0..=10.0).contains(&v) {
        return Err(AnswerError::Range(v));
    }
    Ok(v)
}

fn asset_pattern(asset: Asset) -> &'static Regex {
    static RE: OnceLock<Vec<Regex>> = OnceLock::new();
    let all = RE.get_or_init(|| {
        Asset::ALL
            .iter()
            .map(|a| {
                Regex::new(&format!(
                    r"(?i){}\s*:\s*\[?\s*\$?\s*([^\s,\]]+)",
                    regex::escape(a.label())
                ))
                .unwrap()
            })
            .collect()
    });
    &all[asset as usize]
}

/// Parses `Cryptocurrencies : x, Growth Stocks : x, Distressed Bonds : x,
/// Government Bonds : x` and checks the amounts sum to 100 within 0.01.
pub fn parse_allocation(answer: &str) -> Result<[f64; 4], AnswerError> {
    let mut out = [0.0; 4];
    for asset in Asset::ALL {
        let caps = asset_pattern(asset)
            .captures(answer)
            .ok_or_else(|| AnswerError::Format(format!("missing {}", asset.label())))?;
        let raw = caps[1].trim_end_matches('.');
        let v: f64 = raw
            .parse()
            .map_err(|_| AnswerError::Format(format!("{}: {:?} is not a number", asset.label(), raw)))?;
        if !v.is_finite() || v < 0.0 {
            return Err(AnswerError::Format(format!(
                "{}: {v} is not a valid amount",
                asset.label()
            )));
        }
        out[asset as usize] = v;
    }
    let sum: f64 = out.iter().sum();
    if (sum - 100.0).abs() > 0.01 {
        return Err(AnswerError::Sum(sum));
    }
    Ok(out)
}
