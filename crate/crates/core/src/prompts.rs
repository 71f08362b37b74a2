//! Prompt templates and the number formatting they depend on.
//!
//! Templates live in `assets/` and are versioned by file name. Any change to
//! the wording must bump the version and the golden files under
//! `tests/fixtures/golden/`.

pub const STUDY1_TEMPLATE: &str = include_str!("../assets/study1_v1.txt");
pub const STUDY2_TEMPLATE: &str = include_str!("../assets/study2_v1.txt");
pub const STUDY3_TEMPLATE: &str = include_str!("../assets/study3_v1.txt");
pub const CASE_STUDY_TEMPLATE: &str = include_str!("../assets/case_study_v1.txt");
pub const ICL_DEMO_TEMPLATE: &str = include_str!("../assets/icl_demo_v1.txt");

pub const TEMPLATE_VERSION: &str = "v1";

/// Leading sentence of the Study 3 template, used to recognise it.
pub const STUDY3_MARKER: &str = "Premise: Pretend you are an agent with the given following persona.";
pub const STUDY1_MARKER: &str = "What is his/her attitude towards risk as an investor?";
pub const STUDY2_MARKER: &str = "You have an endowment of 10 dollars.";
pub const CASE_STUDY_MARKER: &str = "You have an endowment of 100 dollars.";

/// Fills `{name}` placeholders in order. Values are substituted one key at a
/// time, so the persona text (which may itself contain braces) should come last.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (k, v) in vars {
        out = out.replace(&format!("{{{k}}}"), v);
    }
    out
}

pub fn render_study1(persona: &str) -> String {
    fill(STUDY1_TEMPLATE, &[("persona", persona)])
}

/// `sp500` and `treasury` are the market statistics sentences, supplied by
/// configuration.
pub fn render_study2(persona: &str, sp500: &str, treasury: &str) -> String {
    fill(
        STUDY2_TEMPLATE,
        &[("sp500", sp500), ("treasury", treasury), ("persona", persona)],
    )
}

pub fn render_case_study(persona: &str) -> String {
    fill(CASE_STUDY_TEMPLATE, &[("persona", persona)])
}

fn round2(x: f64) -> f64 {
    let r = (x * 100.0).round() / 100.0;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Two fixed decimals: `-75.00`, `178.18`.
pub fn money_fixed(x: f64) -> String {
    format!("{:.2}", round2(x))
}

/// Two decimals with trailing zeros and point removed: `130`, `12.5`.
pub fn money_trimmed(x: f64) -> String {
    let s = money_fixed(x);
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Two decimals with trailing zeros removed but at least one decimal kept:
/// `200.0`, `178.18`, `-75.0`.
pub fn money_repr(x: f64) -> String {
    let s = money_fixed(x);
    let t = s.trim_end_matches('0');
    if t.ends_with('.') {
        format!("{t}0")
    } else {
        t.to_string()
    }
}

/// Probability as a trimmed percentage: `0.3 -> "30"`, `0.125 -> "12.5"`.
pub fn percent(p: f64) -> String {
    money_trimmed(p * 100.0)
}
