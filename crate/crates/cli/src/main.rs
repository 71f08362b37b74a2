use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::json;

use persona_risk::agents::AgentBackend;
use persona_risk::alignment::{
    build_icl_demo, build_preference_pairs, emit_dpo_dataset, exemplars_by_class, pseudo_label, sidecar_path, DemoMode,
    RiskLabel, StatementBanks,
};
use persona_risk::fitting::{fit_pt_params, Battery, FitError};
use persona_risk::metrics::rds_report;
use persona_risk::persona::{load_personas, read_jsonl, Attribute};
use persona_risk::pipeline::{
    build_backend, emit_reports, format_rds_cell, run_case_study, run_study1, run_study2, run_study3, write_manifest,
    BackendKind, EvalClassDataset, LabelledRun, PipelineConfig, PipelineError, PromptPrefixes, StudyRun,
};
use persona_risk::{CeObservation, Persona};

#[derive(Parser)]
#[command(
    name = "persona-risk",
    version,
    about = "Risk preferences of persona-conditioned language agents"
)]
struct Cli {
    /// Agent backend; overrides `backend.kind` in the config.
    #[arg(long, global = true, value_enum)]
    backend: Option<Backend>,
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for sampled demonstrations and preference pairs; overrides `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Synthetic,
    Replay,
    Http,
}

impl From<Backend> for BackendKind {
    fn from(b: Backend) -> Self {
        match b {
            Backend::Synthetic => BackendKind::Synthetic,
            Backend::Replay => BackendKind::Replay,
            Backend::Http => BackendKind::Http,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Consistent,
    Random,
}

impl From<Mode> for DemoMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Consistent => DemoMode::Consistent,
            Mode::Random => DemoMode::Random,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Persona file checks.
    Personas {
        #[command(subcommand)]
        action: PersonasAction,
    },
    /// Study 1: risk attitude class.
    Study1 {
        #[command(subcommand)]
        action: RunAction<PersonaInput>,
    },
    /// Study 2: investment amount.
    Study2 {
        #[command(subcommand)]
        action: RunAction<PersonaInput>,
    },
    /// Study 3: certainty equivalents and parameter fits.
    Study3 {
        #[command(subcommand)]
        action: RunAction<Study3Input>,
    },
    /// Four-asset allocation over the evaluation personas.
    CaseStudy {
        #[command(subcommand)]
        action: RunAction<DatasetInput>,
    },
    /// Fit prospect-theory parameters to certainty-equivalent observations.
    Fit {
        /// JSON lines of observations.
        #[arg(long)]
        observations: PathBuf,
    },
    /// Risk Disparity Scores for per-persona values.
    Rds {
        /// JSON lines of `{"persona_id": .., "value": ..}`.
        #[arg(long)]
        values: PathBuf,
        #[arg(long)]
        personas: PathBuf,
        /// Measure name used in the output file.
        #[arg(long, default_value = "value")]
        measure: String,
    },
    /// In-context demonstrations.
    Icl {
        #[command(subcommand)]
        action: IclAction,
    },
    /// Preference pairs for DPO training.
    DpoPairs {
        #[command(subcommand)]
        action: DpoAction,
    },
    /// Summary tables and charts from saved runs.
    Report {
        /// Saved run (`run_<label>.json`), optionally as `PATH=LABEL`.
        #[arg(long = "run", required = true)]
        runs: Vec<String>,
        /// Evaluation dataset, enabling the per-class parameter table.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum PersonasAction {
    Validate { file: PathBuf },
}

#[derive(Subcommand)]
enum RunAction<T: Args> {
    Run {
        #[command(flatten)]
        input: T,
        /// Label for the output files; the study name if unset.
        #[arg(long)]
        label: Option<String>,
    },
}

#[derive(Args)]
struct PersonaInput {
    #[arg(long)]
    personas: PathBuf,
}

#[derive(Args)]
struct DatasetInput {
    /// Evaluation personas with their `risk_class`.
    #[arg(long)]
    dataset: PathBuf,
}

#[derive(Args)]
struct Study3Input {
    #[arg(long, required_unless_present = "dataset", conflicts_with = "dataset")]
    personas: Option<PathBuf>,
    /// Evaluation personas; needed for demonstrations.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Prefix each prompt with a demonstration drawn in this mode.
    #[arg(long, value_enum, requires = "dataset")]
    icl: Option<Mode>,
}

#[derive(Subcommand)]
enum IclAction {
    Build {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
    },
}

#[derive(Subcommand)]
enum DpoAction {
    Build {
        #[arg(long)]
        personas: PathBuf,
        /// Statement banks; `dpo.statements` from the config if unset.
        #[arg(long)]
        statements: Option<PathBuf>,
        /// JSON lines of `{"persona_id": .., "label": ..}`; labels are
        /// elicited from the backend if unset.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
}

struct Ctx {
    cfg: PipelineConfig,
    seed: u64,
    out: PathBuf,
}

impl Ctx {
    fn backend(&self) -> Result<Box<dyn AgentBackend>> {
        Ok(build_backend(&self.cfg.backend)?)
    }

    fn out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        Ok(&self.out)
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(b) = cli.backend {
        cfg.backend.kind = b.into();
    }
    let seed = cli.seed.unwrap_or(cfg.seed);
    let ctx = Ctx {
        cfg,
        seed,
        out: cli.out,
    };
    match cli.command {
        Command::Personas {
            action: PersonasAction::Validate { file },
        } => validate(&file),
        Command::Study1 {
            action: RunAction::Run { input, label },
        } => {
            let personas = load_personas(&input.personas)?;
            let backend = ctx.backend()?;
            let res = run_study1(&personas, backend.as_ref(), &ctx.cfg.references, &ctx.cfg.run);
            save_run(&ctx, label.as_deref().unwrap_or("study1"), res, None)
        }
        Command::Study2 {
            action: RunAction::Run { input, label },
        } => {
            let personas = load_personas(&input.personas)?;
            let backend = ctx.backend()?;
            let res = run_study2(
                &personas,
                backend.as_ref(),
                &ctx.cfg.market,
                &ctx.cfg.references,
                &ctx.cfg.run,
            );
            save_run(&ctx, label.as_deref().unwrap_or("study2"), res, None)
        }
        Command::Study3 {
            action: RunAction::Run { input, label },
        } => study3(&ctx, input, label),
        Command::CaseStudy {
            action: RunAction::Run { input, label },
        } => {
            let dataset = EvalClassDataset::load(&input.dataset)?;
            let backend = ctx.backend()?;
            let res = run_case_study(&dataset, backend.as_ref(), &ctx.cfg.matched_assets, &ctx.cfg.run);
            save_run(&ctx, label.as_deref().unwrap_or("case-study"), res, Some(&dataset))
        }
        Command::Fit { observations } => fit(&ctx, &observations),
        Command::Rds {
            values,
            personas,
            measure,
        } => rds(&ctx, &values, &personas, &measure),
        Command::Icl {
            action: IclAction::Build { dataset, mode },
        } => icl(&ctx, &dataset, mode.into()),
        Command::DpoPairs {
            action:
                DpoAction::Build {
                    personas,
                    statements,
                    labels,
                },
        } => dpo(&ctx, &personas, statements, labels),
        Command::Report { runs, dataset } => report(&ctx, &runs, dataset.as_deref()),
    }
}

fn validate(file: &Path) -> Result<()> {
    let personas = load_personas(file).with_context(|| format!("validating {}", file.display()))?;
    println!("{}: {} personas", file.display(), personas.len());
    for attr in Attribute::ALL {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for p in &personas {
            *counts.entry(p.group(attr)).or_default() += 1;
        }
        let cells: Vec<String> = counts.iter().map(|(g, n)| format!("{g}={n}")).collect();
        println!("  {:<10} {}", attr.label(), cells.join(" "));
    }
    Ok(())
}

fn save_run(
    ctx: &Ctx,
    label: &str,
    res: Result<StudyRun, PipelineError>,
    dataset: Option<&EvalClassDataset>,
) -> Result<()> {
    let out = ctx.out_dir()?;
    let run = match res {
        Ok(run) => run,
        Err(PipelineError::Aborted {
            study,
            failures,
            total,
            run,
        }) => {
            write_run(out, label, &run)?;
            bail!(
                "{study} aborted: {failures} of {total} personas failed; partial run saved in {}",
                out.display()
            );
        }
        Err(e) => return Err(e.into()),
    };
    write_run(out, label, &run)?;
    let classes = dataset.map(|d| d.classes());
    let files = emit_reports(&[LabelledRun { label, run: &run }], classes.as_ref(), out)?;
    println!(
        "{} {label}: {} succeeded, {} failed ({})",
        run.study,
        run.successes(),
        run.failures(),
        run.backend
    );
    for (measure, r) in &run.rds {
        let cells: Vec<String> = Attribute::ALL
            .iter()
            .map(|a| match r.entry(*a) {
                Some(e) => format!("{}={}", a.label(), format_rds_cell(e)),
                None => format!("{}=-", a.label()),
            })
            .collect();
        println!("  {measure}: {} avg={:.2}%", cells.join(" "), 100.0 * r.average);
    }
    for f in files {
        log::info!("wrote {}", f.display());
    }
    Ok(())
}

fn write_run(out: &Path, label: &str, run: &StudyRun) -> Result<()> {
    let path = out.join(format!("run_{label}.json"));
    let mut s = serde_json::to_string_pretty(run)?;
    s.push('\n');
    fs::write(&path, s)?;
    write_manifest(run, &out.join(format!("manifest_{label}.json")))?;
    Ok(())
}

fn study3(ctx: &Ctx, input: Study3Input, label: Option<String>) -> Result<()> {
    let battery = ctx.cfg.battery()?;
    let dataset = input.dataset.as_ref().map(EvalClassDataset::load).transpose()?;
    let personas = match (&input.personas, &dataset) {
        (Some(p), _) => load_personas(p)?,
        (None, Some(d)) => d.personas(),
        (None, None) => bail!("study3 needs --personas or --dataset"),
    };
    let prefixes = match (input.icl, &dataset) {
        (Some(mode), Some(d)) => Some(demo_prefixes(ctx, d, mode.into(), &battery)?),
        _ => None,
    };
    let backend = ctx.backend()?;
    let res = run_study3(
        &personas,
        backend.as_ref(),
        &battery,
        &ctx.cfg.references,
        prefixes.as_ref(),
        &ctx.cfg.run,
    );
    let default_label = match input.icl {
        Some(Mode::Consistent) => "study3-icl-consistent",
        Some(Mode::Random) => "study3-icl-random",
        None => "study3",
    };
    save_run(ctx, label.as_deref().unwrap_or(default_label), res, dataset.as_ref())
}

/// One demonstration per evaluation persona; persona `i` uses seed `seed + i`.
fn demo_prefixes(ctx: &Ctx, dataset: &EvalClassDataset, mode: DemoMode, battery: &Battery) -> Result<PromptPrefixes> {
    let exemplars = exemplars_by_class(dataset.entries().iter().map(|(p, c)| (p, *c)));
    let mut out = PromptPrefixes::new();
    for (i, (p, class)) in dataset.entries().iter().enumerate() {
        let demo = build_icl_demo(
            mode,
            *class,
            ctx.seed.wrapping_add(i as u64),
            &exemplars,
            battery,
            &ctx.cfg.class_ranges,
        )?;
        out.insert(p.id.clone(), demo.text);
    }
    Ok(out)
}

fn fit(ctx: &Ctx, path: &Path) -> Result<()> {
    let obs: Vec<CeObservation> = read_jsonl(BufReader::new(File::open(path)?))?
        .into_iter()
        .map(|(_, o)| o)
        .collect();
    let result = match fit_pt_params(&obs, &ctx.cfg.run.fit) {
        Ok(r) => r,
        Err(FitError::Underdetermined { reason, result }) => {
            log::warn!("fit underdetermined: {reason}");
            *result
        }
        Err(e) => return Err(e.into()),
    };
    let s = serde_json::to_string_pretty(&result)?;
    fs::write(ctx.out_dir()?.join("fit.json"), format!("{s}\n"))?;
    println!("{s}");
    Ok(())
}

#[derive(Deserialize)]
struct ValueRecord {
    persona_id: String,
    value: f64,
}

fn rds(ctx: &Ctx, values: &Path, personas: &Path, measure: &str) -> Result<()> {
    let personas = load_personas(personas)?;
    let values: BTreeMap<String, f64> = read_jsonl::<ValueRecord, _>(BufReader::new(File::open(values)?))?
        .into_iter()
        .map(|(_, r)| (r.persona_id, r.value))
        .collect();
    let report = rds_report(&values, &personas, &ctx.cfg.references);
    for e in &report.entries {
        match &e.error {
            Some(err) => println!("{:<10} failed: {err}", e.attribute.label()),
            None => println!("{:<10} {}", e.attribute.label(), format_rds_cell(e)),
        }
    }
    println!("{:<10} {:.2}%", "Aver", 100.0 * report.average);
    let s = serde_json::to_string_pretty(&report)?;
    fs::write(ctx.out_dir()?.join(format!("rds_{measure}.json")), format!("{s}\n"))?;
    Ok(())
}

fn icl(ctx: &Ctx, dataset: &Path, mode: DemoMode) -> Result<()> {
    let dataset = EvalClassDataset::load(dataset)?;
    let battery = ctx.cfg.battery()?;
    let exemplars = exemplars_by_class(dataset.entries().iter().map(|(p, c)| (p, *c)));
    let path = ctx.out_dir()?.join(format!("icl_{mode}.jsonl"));
    let mut w = std::io::BufWriter::new(File::create(&path)?);
    for (i, (p, class)) in dataset.entries().iter().enumerate() {
        let seed = ctx.seed.wrapping_add(i as u64);
        let demo = build_icl_demo(mode, *class, seed, &exemplars, &battery, &ctx.cfg.class_ranges)?;
        let rec = json!({
            "persona_id": p.id,
            "seed": seed,
            "mode": demo.mode,
            "target_class": demo.target_class,
            "class": demo.class,
            "exemplar_id": demo.exemplar_id,
            "params": demo.params,
            "prospect": demo.prospect,
            "text": demo.text,
        });
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    println!(
        "{} {mode} demonstrations written to {}",
        dataset.entries().len(),
        path.display()
    );
    Ok(())
}

#[derive(Deserialize)]
struct LabelRecord {
    persona_id: String,
    label: RiskLabel,
}

fn dpo(ctx: &Ctx, personas: &Path, statements: Option<PathBuf>, labels: Option<PathBuf>) -> Result<()> {
    let personas = load_personas(personas)?;
    let statements = statements
        .or_else(|| ctx.cfg.dpo.statements.clone())
        .context("no statement banks: pass --statements or set dpo.statements")?;
    let banks = StatementBanks::load(&statements)?;
    let out = ctx.out_dir()?;
    let (kept, labels): (Vec<Persona>, Vec<RiskLabel>) = match labels {
        Some(path) => {
            let given: BTreeMap<String, RiskLabel> = read_jsonl::<LabelRecord, _>(BufReader::new(File::open(path)?))?
                .into_iter()
                .map(|(_, r)| (r.persona_id, r.label))
                .collect();
            personas
                .into_iter()
                .filter_map(|p| match given.get(&p.id) {
                    Some(l) => Some((p, *l)),
                    None => {
                        log::warn!("no label for persona {}; skipped", p.id);
                        None
                    }
                })
                .unzip()
        }
        None => {
            let backend = ctx.backend()?;
            let labelled = elicit_labels(&personas, backend.as_ref());
            let mut w = std::io::BufWriter::new(File::create(out.join("pseudo_labels.jsonl"))?);
            for (p, l) in &labelled {
                serde_json::to_writer(&mut w, &json!({"persona_id": p.id, "label": l}))?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
            labelled.into_iter().unzip()
        }
    };
    if kept.is_empty() {
        bail!("no labelled personas");
    }
    let pairs = build_preference_pairs(&kept, &labels, &banks, ctx.seed, ctx.cfg.dpo.pairs_per_persona)?;
    let path = out.join("dpo_pairs.jsonl");
    emit_dpo_dataset(&pairs, &path)?;
    println!(
        "{} pairs for {} personas written to {} (trainer config {})",
        pairs.len(),
        kept.len(),
        path.display(),
        sidecar_path(&path).display()
    );
    Ok(())
}

fn elicit_labels(personas: &[Persona], backend: &dyn AgentBackend) -> Vec<(Persona, RiskLabel)> {
    personas
        .iter()
        .filter_map(|p| match pseudo_label(p, backend) {
            Ok(l) => Some((p.clone(), l)),
            Err(e) => {
                log::warn!("persona {}: no pseudo label ({e}); skipped", p.id);
                None
            }
        })
        .collect()
}

fn report(ctx: &Ctx, specs: &[String], dataset: Option<&Path>) -> Result<()> {
    let mut loaded: Vec<(String, StudyRun)> = Vec::new();
    for spec in specs {
        let (path, label) = match spec.rsplit_once('=') {
            Some((p, l)) => (PathBuf::from(p), l.to_string()),
            None => {
                let p = PathBuf::from(spec);
                let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
                let label = stem.strip_prefix("run_").unwrap_or(stem).to_string();
                (p, label)
            }
        };
        let run: StudyRun = serde_json::from_reader(BufReader::new(
            File::open(&path).with_context(|| format!("opening {}", path.display()))?,
        ))
        .with_context(|| format!("reading {}", path.display()))?;
        loaded.push((label, run));
    }
    let classes = dataset.map(EvalClassDataset::load).transpose()?.map(|d| d.classes());
    let runs: Vec<LabelledRun> = loaded.iter().map(|(l, r)| LabelledRun { label: l, run: r }).collect();
    let files = emit_reports(&runs, classes.as_ref(), ctx.out_dir()?)?;
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}
