//! Result files, summary tables and charts. Everything written here is a
//! pure function of the runs, so re-rendering yields identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::json;

use super::{Asset, PipelineError, Study, StudyRun};
use crate::alignment::RiskClass;
use crate::metrics::{AttributeRds, RdsReport};
use crate::persona::Attribute;
use crate::stats::{stars, welch_t_test};

pub struct LabelledRun<'a> {
    pub label: &'a str,
    pub run: &'a StudyRun,
}

/// `"96.30%(+)"`.
pub fn format_rds_cell(e: &AttributeRds) -> String {
    format!("{:.2}%({})", 100.0 * e.rds, e.sign)
}

/// One persona record per line.
pub fn write_results(run: &StudyRun, path: &Path) -> Result<(), PipelineError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in &run.records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Run metadata that varies between invocations (backend, timestamps).
pub fn write_manifest(run: &StudyRun, path: &Path) -> Result<(), PipelineError> {
    let m = json!({
        "study": run.study,
        "backend": run.backend,
        "config_digest": run.config_digest,
        "started_at": run.started_at,
        "finished_at": run.finished_at,
        "personas": run.records.len(),
        "successes": run.successes(),
        "failures": run.failures(),
    });
    let mut s = serde_json::to_string_pretty(&m)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn rds_rows(runs: &[LabelledRun]) -> Vec<(String, String, RdsReport)> {
    runs.iter()
        .flat_map(|lr| {
            lr.run
                .rds
                .iter()
                .map(move |(m, r)| (lr.label.to_string(), m.clone(), r.clone()))
        })
        .collect()
}

fn rds_tables(runs: &[LabelledRun]) -> (String, String) {
    let mut txt = format!("{:<14}{:<12}", "run", "measure");
    for a in Attribute::ALL {
        let _ = write!(txt, "{:<14}", a.label());
    }
    txt.push_str("Aver\n");
    let mut csv = String::from("run,measure");
    for a in Attribute::ALL {
        let l = a.label().to_lowercase();
        let _ = write!(csv, ",{l},{l}_sign");
    }
    csv.push_str(",average\n");

    for (label, measure, report) in rds_rows(runs) {
        let _ = write!(txt, "{label:<14}{measure:<12}");
        let _ = write!(csv, "{label},{measure}");
        for a in Attribute::ALL {
            match report.entry(a) {
                Some(e) => {
                    let _ = write!(txt, "{:<14}", format_rds_cell(e));
                    let _ = write!(csv, ",{:.6},{}", e.rds, e.sign);
                }
                None => {
                    let _ = write!(txt, "{:<14}", "-");
                    csv.push_str(",,");
                }
            }
        }
        let _ = writeln!(txt, "{:.2}%", 100.0 * report.average);
        let _ = writeln!(csv, ",{:.6}", report.average);
    }
    (txt, csv)
}

fn class_values(run: &StudyRun, classes: &BTreeMap<String, RiskClass>, class: RiskClass) -> (Vec<f64>, Vec<f64>) {
    let mut a = Vec::new();
    let mut b = Vec::new();
    for r in &run.records {
        if classes.get(&r.persona_id) != Some(&class) {
            continue;
        }
        if let Some(fit) = r.fit() {
            a.push(fit.params.alpha());
            b.push(fit.params.beta());
        }
    }
    (a, b)
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn opt4(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.4}")).unwrap_or_default()
}

/// Per-class mean α and β for each Study 3 run, with the difference from the
/// first run and Welch significance stars.
fn class_param_tables(runs: &[&LabelledRun], classes: &BTreeMap<String, RiskClass>) -> (String, String) {
    let mut txt = format!("{:<8}", "class");
    for lr in runs {
        let _ = write!(
            txt,
            "{:<22}{:<22}",
            format!("{}_alpha", lr.label),
            format!("{}_beta", lr.label)
        );
    }
    txt.push('\n');
    let mut csv = String::from("run,class,n,alpha_mean,beta_mean,alpha_delta,alpha_p,beta_delta,beta_p\n");

    for class in RiskClass::ALL {
        let _ = write!(txt, "{:<8}", class.to_string());
        let (base_a, base_b) = class_values(runs[0].run, classes, class);
        for (i, lr) in runs.iter().enumerate() {
            let (a, b) = class_values(lr.run, classes, class);
            let (ma, mb) = (mean(&a), mean(&b));
            let cell = |m: Option<f64>, xs: &[f64], base: &[f64]| -> (String, String, String) {
                let Some(m) = m else {
                    return ("-".into(), String::new(), String::new());
                };
                if i == 0 {
                    return (format!("{m:.4}"), String::new(), String::new());
                }
                let delta = mean(base).map(|b0| m - b0);
                let p = welch_t_test(xs, base).ok().map(|t| t.p_value);
                let star = p.map(stars).unwrap_or("");
                let shown = match delta {
                    Some(d) => format!("{m:.4}({d:+.4}{star})"),
                    None => format!("{m:.4}"),
                };
                (shown, opt4(delta), opt4(p))
            };
            let (ta, da, pa) = cell(ma, &a, &base_a);
            let (tb, db, pb) = cell(mb, &b, &base_b);
            let _ = write!(txt, "{ta:<22}{tb:<22}");
            let _ = writeln!(
                csv,
                "{},{class},{},{},{},{da},{pa},{db},{pb}",
                lr.label,
                a.len(),
                opt4(ma),
                opt4(mb)
            );
        }
        txt.push('\n');
    }
    (txt, csv)
}

fn case_study_csv(runs: &[&LabelledRun]) -> String {
    let mut csv = String::from("run,class,n");
    for a in Asset::ALL {
        let _ = write!(csv, ",{}", a.label());
    }
    csv.push_str(",matched_asset,matched_mean\n");
    for lr in runs {
        for c in &lr.run.case_study {
            let _ = write!(csv, "{},{},{}", lr.label, c.class, c.n);
            for v in c.mean {
                let _ = write!(csv, ",{v:.4}");
            }
            let _ = writeln!(csv, ",{},{:.4}", c.matched_asset.label(), c.matched_mean);
        }
    }
    csv
}

const COLOURS: [&str; 4] = ["#d95f02", "#1b9e77", "#7570b3", "#666666"];

/// Grouped bars: one panel per run, classes on the x axis, one bar per asset.
fn case_study_svg(runs: &[&LabelledRun]) -> String {
    let (w, panel_h, top) = (640.0, 240.0, 40.0);
    let h = top + panel_h * runs.len() as f64 + 10.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    for (i, a) in Asset::ALL.iter().enumerate() {
        let x = 60.0 + 140.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{x}" y="10" width="10" height="10" fill="{}"/>"#,
            COLOURS[i]
        );
        let _ = writeln!(s, r#"<text x="{}" y="19">{}</text>"#, x + 14.0, a.label());
    }
    for (pi, lr) in runs.iter().enumerate() {
        let y0 = top + panel_h * pi as f64;
        let base = y0 + panel_h - 30.0;
        let scale = (panel_h - 60.0) / 100.0;
        let _ = writeln!(
            s,
            r#"<text x="10" y="{}" font-weight="bold">{}</text>"#,
            y0 + 14.0,
            xml_escape(lr.label)
        );
        let _ = writeln!(
            s,
            r#"<line x1="50" y1="{base}" x2="{}" y2="{base}" stroke="black"/>"#,
            w - 10.0
        );
        let _ = writeln!(
            s,
            r#"<line x1="50" y1="{base}" x2="50" y2="{}" stroke="black"/>"#,
            base - 100.0 * scale
        );
        for tick in [0, 50, 100] {
            let ty = base - tick as f64 * scale;
            let _ = writeln!(s, r#"<text x="45" y="{}" text-anchor="end">{tick}</text>"#, ty + 4.0);
        }
        for (ci, class) in RiskClass::ALL.iter().enumerate() {
            let gx = 70.0 + 140.0 * ci as f64;
            let Some(c) = lr.run.case_study.iter().find(|c| c.class == *class) else {
                continue;
            };
            for (ai, v) in c.mean.iter().enumerate() {
                let bh = v * scale;
                let _ = writeln!(
                    s,
                    r#"<rect x="{:.1}" y="{:.2}" width="24" height="{:.2}" fill="{}"/>"#,
                    gx + 26.0 * ai as f64,
                    base - bh,
                    bh,
                    COLOURS[ai]
                );
            }
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{}" text-anchor="middle">{class}</text>"#,
                gx + 51.0,
                base + 16.0
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes results, summary tables (text and CSV) and charts for `runs` into
/// `out_dir`. `classes` maps persona ids to evaluation classes and enables
/// the per-class parameter table for Study 3 runs.
pub fn emit_reports(
    runs: &[LabelledRun],
    classes: Option<&BTreeMap<String, RiskClass>>,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, PipelineError> {
    if runs.is_empty() {
        return Err(PipelineError::EmptyRunSet);
    }
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for lr in runs {
        let p = out_dir.join(format!("results_{}.jsonl", lr.label));
        write_results(lr.run, &p)?;
        written.push(p);
    }
    let mut put = |name: &str, body: &str| -> Result<(), PipelineError> {
        let p = out_dir.join(name);
        fs::write(&p, body)?;
        written.push(p);
        Ok(())
    };

    if runs.iter().any(|lr| !lr.run.rds.is_empty()) {
        let (txt, csv) = rds_tables(runs);
        put("rds_summary.txt", &txt)?;
        put("rds_summary.csv", &csv)?;
    }

    let study3: Vec<&LabelledRun> = runs.iter().filter(|lr| lr.run.study == Study::Study3).collect();
    if let (Some(classes), false) = (classes, study3.is_empty()) {
        let (txt, csv) = class_param_tables(&study3, classes);
        put("class_params.txt", &txt)?;
        put("class_params.csv", &csv)?;
    }

    let cases: Vec<&LabelledRun> = runs.iter().filter(|lr| lr.run.study == Study::CaseStudy).collect();
    if !cases.is_empty() {
        put("case_study.csv", &case_study_csv(&cases))?;
        put("case_study.svg", &case_study_svg(&cases))?;
    }
    written.sort();
    Ok(written)
}
