//! Prospect-theory primitives: value function, probability weighting,
//! prospect utility, certainty equivalents and the decision rule used
//! against a ladder of sure options.
//!
//! Utility is evaluated per outcome, `v(x1)·w(p1) + v(x2)·w(p2)`, with a
//! single weighting curvature shared by gains and losses. This is not the
//! rank-dependent cumulative form.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::elicitation::SureOptionLadder;

/// Wide sanity bound applied at construction.
pub const SANITY_MIN: f64 = 0.05;
pub const SANITY_MAX: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProspectError {
    #[error("parameter {name} = {value} outside [{SANITY_MIN}, {SANITY_MAX}]")]
    ParamOutOfRange { name: &'static str, value: f64 },
    #[error("probabilities {p1} + {p2} do not sum to 1")]
    ProbabilitySum { p1: f64, p2: f64 },
    #[error("probability {0} outside [0, 1]")]
    ProbabilityDomain(f64),
    #[error("degenerate prospect: both outcomes equal {0}")]
    Degenerate(f64),
    #[error("non-finite outcome")]
    NonFinite,
}

/// Prospect-theory parameters `(alpha, beta, lambda, phi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct PtParams {
    alpha: f64,
    beta: f64,
    lambda: f64,
    phi: f64,
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    alpha: f64,
    beta: f64,
    lambda: f64,
    phi: f64,
}

impl TryFrom<RawParams> for PtParams {
    type Error = ProspectError;
    fn try_from(r: RawParams) -> Result<Self, Self::Error> {
        PtParams::new(r.alpha, r.beta, r.lambda, r.phi)
    }
}

impl From<PtParams> for RawParams {
    fn from(p: PtParams) -> Self {
        RawParams {
            alpha: p.alpha,
            beta: p.beta,
            lambda: p.lambda,
            phi: p.phi,
        }
    }
}

impl PtParams {
    pub fn new(alpha: f64, beta: f64, lambda: f64, phi: f64) -> Result<Self, ProspectError> {
        for (name, value) in [("alpha", alpha), ("beta", beta), ("lambda", lambda), ("phi", phi)] {
            if !value.is_finite() || !(SANITY_MIN..=SANITY_MAX).contains(&value) {
                return Err(ProspectError::ParamOutOfRange { name, value });
            }
        }
        Ok(Self {
            alpha,
            beta,
            lambda,
            phi,
        })
    }

    /// Linear value, linear weights.
    pub fn risk_neutral() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            lambda: 1.0,
            phi: 1.0,
        }
    }

    /// The Tversky–Kahneman median estimates.
    pub fn canonical() -> Self {
        Self {
            alpha: 0.88,
            beta: 0.88,
            lambda: 2.25,
            phi: 0.65,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.alpha, self.beta, self.lambda, self.phi]
    }

    pub fn from_array(v: [f64; 4]) -> Result<Self, ProspectError> {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl fmt::Display for PtParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "alpha={:.4}, beta={:.4}, lambda={:.4}, phi={:.4}",
            self.alpha, self.beta, self.lambda, self.phi
        )
    }
}

/// Sign composition of a prospect's outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Composition {
    GainOnly,
    LossOnly,
    Mixed,
}

/// A two-outcome gamble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProspect", into = "RawProspect")]
pub struct Prospect {
    x1: f64,
    x2: f64,
    p1: f64,
    p2: f64,
}

#[derive(Serialize, Deserialize)]
struct RawProspect {
    x1: f64,
    x2: f64,
    p1: f64,
    p2: f64,
}

impl TryFrom<RawProspect> for Prospect {
    type Error = ProspectError;
    fn try_from(r: RawProspect) -> Result<Self, Self::Error> {
        Prospect::new(r.x1, r.x2, r.p1, r.p2)
    }
}

impl From<Prospect> for RawProspect {
    fn from(p: Prospect) -> Self {
        RawProspect {
            x1: p.x1,
            x2: p.x2,
            p1: p.p1,
            p2: p.p2,
        }
    }
}

impl Prospect {
    pub fn new(x1: f64, x2: f64, p1: f64, p2: f64) -> Result<Self, ProspectError> {
        if !x1.is_finite() || !x2.is_finite() {
            return Err(ProspectError::NonFinite);
        }
        for p in [p1, p2] {
            if !(0.0..=1.0).contains(&p) {
                return Err(ProspectError::ProbabilityDomain(p));
            }
        }
        if ((p1 + p2) - 1.0).abs() > 1e-9 {
            return Err(ProspectError::ProbabilitySum { p1, p2 });
        }
        if x1 == x2 {
            return Err(ProspectError::Degenerate(x1));
        }
        Ok(Self { x1, x2, p1, p2 })
    }

    /// Shorthand for `new(x1, x2, p1, 1 - p1)`.
    pub fn with_p1(x1: f64, x2: f64, p1: f64) -> Result<Self, ProspectError> {
        Self::new(x1, x2, p1, 1.0 - p1)
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn x2(&self) -> f64 {
        self.x2
    }
    pub fn p1(&self) -> f64 {
        self.p1
    }
    pub fn p2(&self) -> f64 {
        self.p2
    }

    pub fn min_outcome(&self) -> f64 {
        self.x1.min(self.x2)
    }

    pub fn max_outcome(&self) -> f64 {
        self.x1.max(self.x2)
    }

    pub fn expected_value(&self) -> f64 {
        self.x1 * self.p1 + self.x2 * self.p2
    }

    pub fn composition(&self) -> Composition {
        let (lo, hi) = (self.min_outcome(), self.max_outcome());
        if lo >= 0.0 {
            Composition::GainOnly
        } else if hi <= 0.0 {
            Composition::LossOnly
        } else {
            Composition::Mixed
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Decision {
    Accept,
    Reject,
}

impl Decision {
    pub fn as_str(&self) -> &'static str {
        match self {
            Decision::Accept => "accept",
            Decision::Reject => "reject",
        }
    }
}

/// One decision per ladder rung, in rendered rung order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionSequence(pub Vec<Decision>);

impl DecisionSequence {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn decisions(&self) -> &[Decision] {
        &self.0
    }

    /// Decisions reordered so the most preferred sure option comes first.
    pub fn in_preference_order(&self, ladder: &SureOptionLadder) -> Vec<Decision> {
        ladder.preference_order().into_iter().map(|i| self.0[i]).collect()
    }

    /// Number of Accept/Reject changes along the preference order.
    pub fn transitions(&self, ladder: &SureOptionLadder) -> usize {
        let ordered = self.in_preference_order(ladder);
        ordered.windows(2).filter(|w| w[0] != w[1]).count()
    }

    /// True when the preference-ordered sequence is `A…AR…R` (either run may be empty).
    pub fn is_coherent(&self, ladder: &SureOptionLadder) -> bool {
        let ordered = self.in_preference_order(ladder);
        ordered
            .windows(2)
            .all(|w| !(w[0] == Decision::Reject && w[1] == Decision::Accept))
    }
}

pub fn value(x: f64, params: &PtParams) -> f64 {
    if x >= 0.0 {
        x.powf(params.alpha)
    } else {
        -params.lambda * (-x).powf(params.beta)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("probability {0} outside [0, 1]")]
pub struct WeightDomainError(pub f64);

pub fn weight(p: f64, params: &PtParams) -> Result<f64, WeightDomainError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(WeightDomainError(p));
    }
    Ok(weight_unchecked(p, params.phi))
}

pub(crate) fn weight_unchecked(p: f64, phi: f64) -> f64 {
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let a = p.powf(phi);
    let b = (1.0 - p).powf(phi);
    a / (a + b).powf(1.0 / phi)
}

pub fn prospect_utility(prospect: &Prospect, params: &PtParams) -> f64 {
    value(prospect.x1, params) * weight_unchecked(prospect.p1, params.phi)
        + value(prospect.x2, params) * weight_unchecked(prospect.p2, params.phi)
}

/// Money amount whose value equals `u`.
pub fn inverse_value(u: f64, params: &PtParams) -> f64 {
    if u >= 0.0 {
        u.powf(1.0 / params.alpha)
    } else {
        -(-u / params.lambda).powf(1.0 / params.beta)
    }
}

pub fn certainty_equivalent(prospect: &Prospect, params: &PtParams) -> f64 {
    inverse_value(prospect_utility(prospect, params), params)
}

/// Accept a sure option iff its value is at least the prospect's utility.
pub fn optimal_decisions(prospect: &Prospect, ladder: &SureOptionLadder, params: &PtParams) -> DecisionSequence {
    let u = prospect_utility(prospect, params);
    DecisionSequence(
        ladder
            .rungs()
            .iter()
            .map(|&s| {
                if value(s, params) >= u {
                    Decision::Accept
                } else {
                    Decision::Reject
                }
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elicitation::build_ladder;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn params(a: f64, b: f64, l: f64, p: f64) -> PtParams {
        PtParams::new(a, b, l, p).unwrap()
    }

    #[test]
    fn value_examples() {
        let any = PtParams::canonical();
        assert_eq!(value(0.0, &any), 0.0);
        assert_eq!(value(100.0, &params(1.0, 1.0, 1.0, 1.0)), 100.0);
        // mpmath, 30 digits: -1.24 * 50^0.92
        let v = value(-50.0, &params(1.06, 0.92, 1.24, 1.0));
        assert_relative_eq!(v, -45.339_224_671_385_52, max_relative = 1e-12);
    }

    #[test]
    fn weight_examples() {
        let lin = params(1.0, 1.0, 1.0, 1.0);
        for p in [0.0, 0.1, 0.3, 0.77, 1.0] {
            assert_relative_eq!(weight(p, &lin).unwrap(), p, epsilon = 1e-15);
        }
        for phi in [0.28, 0.65, 1.5] {
            let th = params(1.0, 1.0, 1.0, phi);
            assert_eq!(weight(1.0, &th).unwrap(), 1.0);
            assert_eq!(weight(0.0, &th).unwrap(), 0.0);
        }
        // mpmath reference
        let w = weight(0.3, &params(1.0, 1.0, 1.0, 0.65)).unwrap();
        assert_relative_eq!(w, 0.324_248_011_878_968_6, max_relative = 1e-12);
        assert!(weight(1.2, &lin).is_err());
        assert!(weight(-0.01, &lin).is_err());
    }

    #[test]
    fn expected_value_anchors() {
        let lin = PtParams::risk_neutral();
        let gain = Prospect::new(200.0, 100.0, 0.3, 0.7).unwrap();
        let loss = Prospect::new(-55.0, -75.0, 0.25, 0.75).unwrap();
        assert_eq!(prospect_utility(&gain, &lin), 130.0);
        assert_eq!(prospect_utility(&loss, &lin), -70.0);
        assert_eq!(certainty_equivalent(&gain, &lin), 130.0);
        assert_eq!(certainty_equivalent(&loss, &lin), -70.0);
        let sure = Prospect::new(42.0, 10.0, 1.0, 0.0).unwrap();
        let th = PtParams::canonical();
        assert_eq!(prospect_utility(&sure, &th), value(42.0, &th));
    }

    #[test]
    fn inverse_value_examples() {
        let th = params(1.0, 0.9, 2.0, 0.7);
        assert_eq!(inverse_value(0.0, &th), 0.0);
        assert_eq!(inverse_value(130.0, &th), 130.0);
    }

    #[test]
    fn loss_ce_is_lambda_free() {
        let loss = Prospect::new(-55.0, -75.0, 0.25, 0.75).unwrap();
        let ces: Vec<f64> = [0.5, 1.0, 2.25]
            .iter()
            .map(|&l| certainty_equivalent(&loss, &params(0.9, 0.8, l, 0.7)))
            .collect();
        for c in &ces[1..] {
            assert_relative_eq!(*c, ces[0], max_relative = 1e-9);
        }
    }

    #[test]
    fn construction_rejects_bad_inputs() {
        assert!(PtParams::new(0.01, 1.0, 1.0, 1.0).is_err());
        assert!(PtParams::new(1.0, f64::NAN, 1.0, 1.0).is_err());
        assert!(PtParams::new(1.0, 1.0, 11.0, 1.0).is_err());
        assert!(Prospect::new(1.0, 1.0, 0.5, 0.5).is_err());
        assert!(Prospect::new(1.0, 2.0, 0.5, 0.6).is_err());
        assert!(Prospect::new(1.0, 2.0, -0.1, 1.1).is_err());
    }

    #[test]
    fn risk_neutral_gain_ladder_decisions() {
        let gain = Prospect::new(200.0, 100.0, 0.3, 0.7).unwrap();
        let ladder = build_ladder(&gain, 7).unwrap();
        let seq = optimal_decisions(&gain, &ladder, &PtParams::risk_neutral());
        use Decision::*;
        assert_eq!(seq.0, vec![Accept, Accept, Accept, Accept, Reject, Reject, Reject]);
    }

    #[test]
    fn strongly_convex_gains_keep_only_top_rungs() {
        // mpmath: alpha=10 gives [A,A,R,R,R,R,R] for phi in {0.5, 1, 1.5}. The top
        // rung equals the best outcome, so it can never be rejected.
        let gain = Prospect::new(200.0, 100.0, 0.3, 0.7).unwrap();
        let ladder = build_ladder(&gain, 7).unwrap();
        use Decision::*;
        for phi in [0.5, 1.0, 1.5] {
            let seq = optimal_decisions(&gain, &ladder, &params(10.0, 1.0, 1.0, phi));
            assert_eq!(seq.0, vec![Accept, Accept, Reject, Reject, Reject, Reject, Reject]);
        }
    }

    #[test]
    fn appendix_loss_demo_agent() {
        // U = -61.7522, CE = -69.9546 (mpmath): rungs above -69.95 are accepted.
        let loss = Prospect::new(-55.0, -75.0, 0.25, 0.75).unwrap();
        let ladder = build_ladder(&loss, 7).unwrap();
        let th = params(1.06, 0.92, 1.24, 1.0);
        assert_relative_eq!(
            prospect_utility(&loss, &th),
            -61.752_241_144_980_65,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            certainty_equivalent(&loss, &th),
            -69.954_611_077_738_3,
            max_relative = 1e-12
        );
        use Decision::*;
        assert_eq!(
            optimal_decisions(&loss, &ladder, &th).0,
            vec![Reject, Reject, Accept, Accept, Accept, Accept, Accept]
        );
    }

    fn box_params() -> impl Strategy<Value = PtParams> {
        (0.28f64..2.5, 0.28f64..2.5, 0.1f64..5.0, 0.28f64..1.5)
            .prop_map(|(a, b, l, p)| PtParams::new(a, b, l, p).unwrap())
    }

    fn same_sign_prospect() -> impl Strategy<Value = Prospect> {
        (1.0f64..500.0, 0.05f64..0.95, 0.05f64..0.95, any::<bool>()).prop_map(|(hi, frac, p, neg)| {
            let sign = if neg { -1.0 } else { 1.0 };
            Prospect::with_p1(sign * hi, sign * hi * frac, p).unwrap()
        })
    }

    proptest! {
        #[test]
        fn value_strictly_increasing(th in box_params(), mut xs in prop::collection::vec(-1000.0f64..1000.0, 2..40)) {
            xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            xs.dedup();
            for w in xs.windows(2) {
                prop_assert!(value(w[0], &th) < value(w[1], &th));
            }
        }

        #[test]
        fn weight_increasing(th in box_params(), mut ps in prop::collection::vec(0.0f64..=1.0, 2..40)) {
            ps.sort_by(|a, b| a.partial_cmp(b).unwrap());
            ps.dedup();
            for w in ps.windows(2) {
                prop_assert!(weight(w[0], &th).unwrap() < weight(w[1], &th).unwrap());
            }
        }

        #[test]
        fn inverse_value_round_trip(th in box_params(), x in -1000.0f64..1000.0) {
            let back = inverse_value(value(x, &th), &th);
            prop_assert!((back - x).abs() <= 1e-9 * x.abs().max(1e-12));
        }

        #[test]
        fn round_trip_fixed_loss(th in box_params()) {
            let back = inverse_value(value(-37.5, &th), &th);
            prop_assert!((back + 37.5).abs() <= 1e-9 * 37.5);
        }

        #[test]
        fn ce_betweenness_at_linear_weights(th in box_params(), pr in same_sign_prospect()) {
            let th = PtParams::new(th.alpha(), th.beta(), th.lambda(), 1.0).unwrap();
            let ce = certainty_equivalent(&pr, &th);
            let tol = 1e-9 * pr.max_outcome().abs().max(pr.min_outcome().abs());
            prop_assert!(ce >= pr.min_outcome() - tol && ce <= pr.max_outcome() + tol);
        }

        #[test]
        fn gain_ce_free_of_beta_and_lambda(th in box_params(), b2 in 0.28f64..2.5, l2 in 0.1f64..5.0,
                                            hi in 1.0f64..500.0, frac in 0.0f64..0.95, p in 0.05f64..0.95) {
            let pr = Prospect::with_p1(hi, hi * frac, p).unwrap();
            let other = PtParams::new(th.alpha(), b2, l2, th.phi()).unwrap();
            let a = certainty_equivalent(&pr, &th);
            let b = certainty_equivalent(&pr, &other);
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }

        #[test]
        fn loss_ce_free_of_lambda(th in box_params(), l2 in 0.1f64..5.0,
                                  hi in 1.0f64..500.0, frac in 0.0f64..0.95, p in 0.05f64..0.95) {
            let pr = Prospect::with_p1(-hi, -hi * frac, p).unwrap();
            let other = PtParams::new(th.alpha(), th.beta(), l2, th.phi()).unwrap();
            let a = certainty_equivalent(&pr, &th);
            let b = certainty_equivalent(&pr, &other);
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }
    }

    #[test]
    fn optimal_decisions_single_transition_sweep() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let th = params(
                rng.random_range(0.28..2.5),
                rng.random_range(0.28..2.5),
                rng.random_range(0.1..5.0),
                rng.random_range(0.28..1.5),
            );
            let hi: f64 = rng.random_range(10.0..500.0);
            let lo = rng.random_range(-500.0..hi - 1.0);
            let pr = Prospect::with_p1(hi, lo, rng.random_range(0.05..0.95)).unwrap();
            let ladder = build_ladder(&pr, 7).unwrap();
            let seq = optimal_decisions(&pr, &ladder, &th);
            assert!(seq.transitions(&ladder) <= 1);
            assert!(seq.is_coherent(&ladder));
        }
    }
}
