//! Risk Disparity Score: the share of output variance explained by
//! demographic group membership, plus tendency signs checked against
//! reference orderings of the groups.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::persona::{Attribute, Persona};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("need at least two distinct groups, found {0}")]
    Group(usize),
    #[error("group {0:?} missing from the reference ordering")]
    UnknownGroup(String),
}

/// One output per persona, tagged with the persona's group for an attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedSample {
    values: Vec<f64>,
    groups: Vec<String>,
    attribute: Attribute,
}

impl GroupedSample {
    pub fn new(values: Vec<f64>, groups: Vec<String>, attribute: Attribute) -> Result<Self, MetricsError> {
        if values.len() != groups.len() {
            return Err(MetricsError::Shape(format!(
                "{} values but {} group labels",
                values.len(),
                groups.len()
            )));
        }
        if values.len() < 2 {
            return Err(MetricsError::Shape(format!(
                "{} samples, need at least 2",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(MetricsError::Shape("non-finite value".into()));
        }
        let distinct = groups.iter().collect::<std::collections::BTreeSet<_>>().len();
        if distinct < 2 {
            return Err(MetricsError::Group(distinct));
        }
        Ok(Self {
            values,
            groups,
            attribute,
        })
    }

    pub fn attribute(&self) -> Attribute {
        self.attribute
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn group_means(&self) -> BTreeMap<String, f64> {
        let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for (v, g) in self.values.iter().zip(&self.groups) {
            let e = acc.entry(g.clone()).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
        acc.into_iter().map(|(g, (s, n))| (g, s / n as f64)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rds {
    pub value: f64,
    /// Total variance was zero; `value` is reported as 0.
    pub degenerate: bool,
}

/// Between-group sum of squares over total sum of squares.
pub fn rds(sample: &GroupedSample) -> Rds {
    let values = &sample.values;
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if lo == hi {
        return Rds {
            value: 0.0,
            degenerate: true,
        };
    }
    let n = values.len() as f64;
    let grand = values.iter().sum::<f64>() / n;
    let total: f64 = values.iter().map(|y| (y - grand).powi(2)).sum();

    let mut acc: HashMap<&str, (f64, usize)> = HashMap::new();
    for (v, g) in values.iter().zip(&sample.groups) {
        let e = acc.entry(g.as_str()).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }
    // sum in a fixed group order so the result does not depend on hashing
    let mut groups: Vec<(&str, (f64, usize))> = acc.into_iter().collect();
    groups.sort_by(|a, b| a.0.cmp(b.0));
    let between: f64 = groups
        .iter()
        .map(|(_, (s, k))| {
            let m = s / *k as f64;
            *k as f64 * (m - grand).powi(2)
        })
        .sum();
    Rds {
        value: (between / total).clamp(0.0, 1.0),
        degenerate: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
    #[serde(rename = "n/a")]
    NotApplicable,
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sign::Plus => "+",
            Sign::Minus => "-",
            Sign::NotApplicable => "n/a",
        })
    }
}

/// Compares group means against a reference ordering listed from least to
/// most risk-seeking.
///
/// `+` when the means are weakly increasing along the reference with at least
/// one strict step, `-` when any adjacent pair decreases, `n/a` when all means
/// are equal. Reference groups with no observations are skipped.
pub fn tendency_sign(group_means: &BTreeMap<String, f64>, reference: &[String]) -> Result<Sign, MetricsError> {
    for g in group_means.keys() {
        if !reference.contains(g) {
            return Err(MetricsError::UnknownGroup(g.clone()));
        }
    }
    let ordered: Vec<f64> = reference.iter().filter_map(|g| group_means.get(g).copied()).collect();
    let mut strict_up = false;
    for w in ordered.windows(2) {
        if w[1] < w[0] {
            return Ok(Sign::Minus);
        }
        if w[1] > w[0] {
            strict_up = true;
        }
    }
    Ok(if strict_up { Sign::Plus } else { Sign::NotApplicable })
}

/// Group orderings from least to most risk-seeking, per attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReferenceOrderings {
    pub gender: Vec<String>,
    pub age: Vec<String>,
    pub education: Vec<String>,
    pub income: Vec<String>,
}

impl Default for ReferenceOrderings {
    /// Men more risk-seeking than women; risk taking falls with age and rises
    /// with education and income.
    fn default() -> Self {
        let v = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        Self {
            gender: v(&["Female", "Male"]),
            age: v(&["50-60", "40-50", "30-40", "20-30"]),
            education: v(&["BelowBachelor", "Bachelor", "MasterOrAbove"]),
            income: v(&["0-50k", "50-100k", "100-200k", ">200k"]),
        }
    }
}

impl ReferenceOrderings {
    pub fn for_attribute(&self, attr: Attribute) -> &[String] {
        match attr {
            Attribute::Gender => &self.gender,
            Attribute::Age => &self.age,
            Attribute::Education => &self.education,
            Attribute::Income => &self.income,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeRds {
    pub attribute: Attribute,
    pub rds: f64,
    pub sign: Sign,
    pub group_means: BTreeMap<String, f64>,
    pub degenerate: bool,
    /// Set when the attribute could not be scored; `rds` is then 0.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdsReport {
    pub entries: Vec<AttributeRds>,
    /// Mean RDS over the attributes, failed ones counted as 0.
    pub average: f64,
}

impl RdsReport {
    pub fn entry(&self, attr: Attribute) -> Option<&AttributeRds> {
        self.entries.iter().find(|e| e.attribute == attr)
    }
}

/// Scores every demographic attribute. Personas without an output are
/// skipped; an attribute that cannot be scored is marked failed rather than
/// aborting the report.
pub fn rds_report(outputs: &BTreeMap<String, f64>, personas: &[Persona], references: &ReferenceOrderings) -> RdsReport {
    let scored: Vec<(&Persona, f64)> = personas
        .iter()
        .filter_map(|p| outputs.get(&p.id).map(|v| (p, *v)))
        .collect();
    let entries: Vec<AttributeRds> = Attribute::ALL
        .iter()
        .map(|&attr| {
            let values = scored.iter().map(|(_, v)| *v).collect();
            let groups = scored.iter().map(|(p, _)| p.group(attr).to_string()).collect();
            let scored_entry = GroupedSample::new(values, groups, attr).and_then(|s| {
                let r = rds(&s);
                let means = s.group_means();
                let sign = tendency_sign(&means, references.for_attribute(attr))?;
                Ok(AttributeRds {
                    attribute: attr,
                    rds: r.value,
                    sign,
                    group_means: means,
                    degenerate: r.degenerate,
                    error: None,
                })
            });
            scored_entry.unwrap_or_else(|e| AttributeRds {
                attribute: attr,
                rds: 0.0,
                sign: Sign::NotApplicable,
                group_means: BTreeMap::new(),
                degenerate: false,
                error: Some(e.to_string()),
            })
        })
        .collect();
    let average = entries.iter().map(|e| e.rds).sum::<f64>() / entries.len() as f64;
    RdsReport { entries, average }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(pairs: &[(&str, f64)]) -> GroupedSample {
        GroupedSample::new(
            pairs.iter().map(|p| p.1).collect(),
            pairs.iter().map(|p| p.0.to_string()).collect(),
            Attribute::Gender,
        )
        .unwrap()
    }

    #[test]
    fn equal_means_give_zero() {
        let s = sample(&[("A", 2.0), ("A", 4.0), ("B", 2.0), ("B", 4.0)]);
        assert_eq!(rds(&s).value, 0.0);
    }

    #[test]
    fn zero_within_variance_gives_one() {
        let s = sample(&[("A", 1.0), ("A", 1.0), ("B", 3.0), ("B", 3.0)]);
        assert_eq!(rds(&s).value, 1.0);
    }

    #[test]
    fn hand_computed_fixture() {
        // between 4*(2)^2... = 16, total 20
        let s = sample(&[("A", 1.0), ("A", 3.0), ("B", 5.0), ("B", 7.0)]);
        assert!((rds(&s).value - 0.8).abs() < 1e-12);
    }

    #[test]
    fn constant_outputs_are_degenerate() {
        let s = sample(&[("A", 0.1), ("A", 0.1), ("B", 0.1)]);
        assert_eq!(
            rds(&s),
            Rds {
                value: 0.0,
                degenerate: true
            }
        );
    }

    #[test]
    fn shape_and_group_errors() {
        assert!(matches!(
            GroupedSample::new(vec![1.0, 2.0], vec!["A".into()], Attribute::Age),
            Err(MetricsError::Shape(_))
        ));
        assert_eq!(
            GroupedSample::new(vec![1.0, 2.0], vec!["A".into(), "A".into()], Attribute::Age),
            Err(MetricsError::Group(1))
        );
    }

    fn means(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(g, v)| (g.to_string(), *v)).collect()
    }

    fn refs(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn tendency_signs() {
        let gender = refs(&["Female", "Male"]);
        assert_eq!(
            tendency_sign(&means(&[("Female", 1.2), ("Male", 1.8)]), &gender),
            Ok(Sign::Plus)
        );
        assert_eq!(
            tendency_sign(&means(&[("Female", 1.8), ("Male", 1.2)]), &gender),
            Ok(Sign::Minus)
        );
        assert_eq!(
            tendency_sign(&means(&[("Female", 1.5), ("Male", 1.5)]), &gender),
            Ok(Sign::NotApplicable)
        );
        let age = refs(&["50-60", "40-50", "30-40", "20-30"]);
        let m = means(&[("20-30", 1.9), ("30-40", 1.5), ("40-50", 1.5), ("50-60", 0.7)]);
        assert_eq!(tendency_sign(&m, &age), Ok(Sign::Plus));
        let bad = means(&[("20-30", 1.9), ("30-40", 2.0), ("40-50", 1.5), ("50-60", 0.7)]);
        assert_eq!(tendency_sign(&bad, &age), Ok(Sign::Minus));
        assert_eq!(
            tendency_sign(&means(&[("Other", 1.0)]), &gender),
            Err(MetricsError::UnknownGroup("Other".into()))
        );
    }

    #[test]
    fn report_average_includes_failures_as_zero() {
        use crate::persona::*;
        let mk = |id: &str, g| Persona {
            id: id.into(),
            description: "x".into(),
            gender: g,
            age_band: AgeBand::Age20To30,
            education: Education::Bachelor,
            income_band: IncomeBand::Under50k,
        };
        let ps = vec![
            mk("a", Gender::Female),
            mk("b", Gender::Female),
            mk("c", Gender::Male),
            mk("d", Gender::Male),
        ];
        let out: BTreeMap<String, f64> = [("a", 0.0), ("b", 0.0), ("c", 2.0), ("d", 2.0)]
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect();
        let r = rds_report(&out, &ps, &ReferenceOrderings::default());
        let g = r.entry(Attribute::Gender).unwrap();
        assert_eq!(g.rds, 1.0);
        assert_eq!(g.sign, Sign::Plus);
        // single age, education and income group: those attributes fail
        assert!(r.entry(Attribute::Age).unwrap().error.is_some());
        assert!((r.average - 0.25).abs() < 1e-15);

        let same: BTreeMap<String, f64> = out.keys().map(|k| (k.clone(), 1.0)).collect();
        let r = rds_report(&same, &ps, &ReferenceOrderings::default());
        assert!(r.entry(Attribute::Gender).unwrap().degenerate);
        assert_eq!(r.average, 0.0);
    }

    #[test]
    fn average_of_four() {
        let entries = [0.9, 0.8, 0.7, 0.6]
            .iter()
            .zip(Attribute::ALL)
            .map(|(&v, a)| AttributeRds {
                attribute: a,
                rds: v,
                sign: Sign::Plus,
                group_means: BTreeMap::new(),
                degenerate: false,
                error: None,
            })
            .collect::<Vec<_>>();
        let avg = entries.iter().map(|e| e.rds).sum::<f64>() / 4.0;
        assert!((avg - 0.75).abs() < 1e-15);
    }

    fn labelled() -> impl Strategy<Value = (Vec<f64>, Vec<String>)> {
        prop::collection::vec((-100.0f64..100.0, 0usize..4), 4..60).prop_filter_map("two groups", |v| {
            let groups: Vec<String> = v.iter().map(|(_, g)| format!("g{g}")).collect();
            let distinct = groups.iter().collect::<std::collections::BTreeSet<_>>().len();
            (distinct >= 2).then(|| (v.iter().map(|(x, _)| *x).collect(), groups))
        })
    }

    proptest! {
        #[test]
        fn bounded_and_affine_invariant((vals, groups) in labelled(), a in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0], b in -50.0f64..50.0) {
            let s = GroupedSample::new(vals.clone(), groups.clone(), Attribute::Income).unwrap();
            let r = rds(&s).value;
            prop_assert!((0.0..=1.0).contains(&r));
            let t = GroupedSample::new(vals.iter().map(|v| a * v + b).collect(), groups, Attribute::Income).unwrap();
            prop_assert!((rds(&t).value - r).abs() <= 1e-12);
        }

        #[test]
        fn permutation_invariant((vals, groups) in labelled(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut idx: Vec<usize> = (0..vals.len()).collect();
            idx.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let s = GroupedSample::new(vals.clone(), groups.clone(), Attribute::Age).unwrap();
            let p = GroupedSample::new(idx.iter().map(|&i| vals[i]).collect(), idx.iter().map(|&i| groups[i].clone()).collect(), Attribute::Age).unwrap();
            prop_assert!((rds(&s).value - rds(&p).value).abs() <= 1e-12);
        }
    }

    #[test]
    fn moving_a_group_away_increases_rds() {
        let base = [("A", 1.0), ("A", 2.0), ("B", 2.5), ("B", 3.5), ("C", 2.0), ("C", 3.0)];
        let r0 = rds(&sample(&base)).value;
        let shifted: Vec<(&str, f64)> = base
            .iter()
            .map(|&(g, v)| if g == "B" { (g, v + 2.0) } else { (g, v) })
            .collect();
        assert!(rds(&sample(&shifted)).value >= r0);
    }
}
