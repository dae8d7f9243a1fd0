//! Command-line front end.
//!
//! Every command reads an optional JSON [`ExperimentConfig`], applies the
//! global flag overrides, validates, and only then computes. Tables go to
//! stdout in fixed-width form and to `--out` as `.txt`, `.csv` and `.json`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::adaptation::AdaptationStudy;
use crate::data::{generate_corpus, read_corpus, write_corpus, Corpus, Emotion};
use crate::error::{PeftError, Result};
use crate::experiment::{adaptation_study, policy_label, train_table, ExperimentConfig, ResultsTable, TrainDomain};
use crate::training::{audit_published, save_checkpoint};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

const DEFAULT_OUT: &str = "out";

#[derive(Debug, Parser)]
#[command(name = "peftlab", version, about = "Parameter-efficient finetuning lab for emotion recognition")]
pub struct Cli {
    /// JSON experiment config; every key is optional.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory [default: out].
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Run a single leave-one-session-out fold instead of all of them.
    #[arg(long, global = true, value_name = "K")]
    pub fold: Option<usize>,
    /// Worker threads for fold- and seed-level parallelism.
    #[arg(long, global = true, value_name = "N", default_value_t = 1)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write the acted and natural corpora as JSON Lines.
    GenData,
    /// Train every configured row with cross-validation.
    Train,
    /// Run the two-stage acted-to-natural freeze matrix.
    Adapt,
    /// Count adaptor parameters at full upstream sizes.
    AuditParams,
    /// Re-render saved results.
    Report,
}

/// Exit code for an error: 1 for configuration problems, 2 otherwise.
pub fn exit_code(err: &PeftError) -> i32 {
    match err {
        PeftError::Config(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

/// Parses `args` (program name first), runs, and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(text) => {
            print!("{text}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Resolves the config file and flag overrides into a validated config.
pub fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| PeftError::config(format!("cannot read config {}: {e}", path.display())))?;
            ExperimentConfig::from_json(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = Some(o.clone());
    }
    if cli.fold.is_some() {
        cfg.fold = cli.fold;
    }
    if cli.jobs == 0 {
        return Err(PeftError::config("--jobs must be at least 1"));
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs one command and returns what it prints.
pub fn run(cli: &Cli) -> Result<String> {
    let cfg = load_config(cli)?;
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .map_err(|e| PeftError::config(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::GenData => gen_data(&cfg, &out),
        Command::Train => cmd_train(&cfg, &out),
        Command::Adapt => cmd_adapt(&cfg, &out),
        Command::AuditParams => audit_params(&out),
        Command::Report => report(&out),
    })
}

fn write_table(out: &Path, stem: &str, text: &str, csv: &str, json: Option<String>) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join(format!("{stem}.txt")), text)?;
    fs::write(out.join(format!("{stem}.csv")), csv)?;
    if let Some(j) = json {
        fs::write(out.join(format!("{stem}.json")), j)?;
    }
    Ok(())
}

/// Per-session class counts as `(text, csv)`.
pub fn count_summary(named: &[(&str, &Corpus)]) -> (String, String) {
    let mut header = vec!["domain", "session"];
    header.extend(Emotion::ALL.iter().map(|e| e.as_str()));
    header.push("total");
    let mut rows: Vec<Vec<String>> = Vec::new();
    for (name, corpus) in named {
        let counts = corpus.cell_counts();
        let mut sum = [0usize; 4];
        for c in &counts {
            for (s, v) in sum.iter_mut().zip(c) {
                *s += v;
            }
        }
        let sessions = counts.iter().enumerate().map(|(i, c)| ((i + 1).to_string(), *c));
        for (session, c) in sessions.chain(std::iter::once(("all".to_string(), sum))) {
            let mut row = vec![name.to_string(), session];
            row.extend(c.iter().map(usize::to_string));
            row.push(c.iter().sum::<usize>().to_string());
            rows.push(row);
        }
    }
    let mut text = format!("{:<10}{:<9}", header[0], header[1]);
    for h in &header[2..] {
        write!(text, "{h:>9}").unwrap();
    }
    text.push('\n');
    for row in &rows {
        write!(text, "{:<10}{:<9}", row[0], row[1]).unwrap();
        for v in &row[2..] {
            write!(text, "{v:>9}").unwrap();
        }
        text.push('\n');
    }
    (text, crate::table::csv_string(&header, &rows))
}

fn gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let acted = generate_corpus(&cfg.acted_spec())?;
    let natural = generate_corpus(&cfg.natural_spec())?;
    fs::create_dir_all(out)?;
    write_corpus(out.join("acted.jsonl"), &acted)?;
    write_corpus(out.join("natural.jsonl"), &natural)?;
    let (text, csv) = count_summary(&[("acted", &acted), ("natural", &natural)]);
    write_table(out, "counts", &text, &csv, None)?;
    Ok(text)
}

fn load_generated(out: &Path, name: &str) -> Result<Corpus> {
    let path = out.join(format!("{name}.jsonl"));
    if !path.exists() {
        return Err(PeftError::input(format!("missing corpus {}; run gen-data first", path.display())));
    }
    read_corpus(path)
}

fn save_resolved(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join("config.resolved.json"), serde_json::to_string_pretty(cfg)?)?;
    Ok(())
}

fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let name = match cfg.train_domain {
        TrainDomain::Acted => "acted",
        TrainDomain::Natural => "natural",
    };
    let corpus = load_generated(out, name)?;
    save_resolved(cfg, out)?;
    let base = cfg.base_encoder()?;
    let ckpt_dir = out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir)?;
    let train_cfg = cfg.train_config();
    let table = train_table(&base, &corpus, cfg, |policy, run| {
        let path = ckpt_dir.join(format!("{}-fold{}.json", policy_label(policy), run.fold));
        save_checkpoint(path, &run.model, Some(&train_cfg), Some(policy))
    })?;
    let text = table.render();
    write_table(out, "results", &text, &table.to_csv(), Some(serde_json::to_string_pretty(&table)?))?;
    Ok(text)
}

fn cmd_adapt(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let acted = load_generated(out, "acted")?;
    let natural = load_generated(out, "natural")?;
    save_resolved(cfg, out)?;
    let base = cfg.base_encoder()?;
    let study = adaptation_study(&base, &acted, &natural, cfg)?;
    let text = study.render();
    write_table(out, "adapt", &text, &study.to_csv(), Some(serde_json::to_string_pretty(&study)?))?;
    Ok(text)
}

fn audit_params(out: &Path) -> Result<String> {
    let table = audit_published()?;
    let mut text = table.render();
    writeln!(
        text,
        "FT rows are informational: the linear frontend stands in for the convolutional feature extractor, which is excluded."
    )
    .unwrap();
    write_table(out, "audit", &text, &table.to_csv(), Some(serde_json::to_string_pretty(&table)?))?;
    Ok(text)
}

/// Re-renders `results.json` and `adapt.json`, whichever exist, and
/// rewrites their `.txt` and `.csv` companions.
fn report(out: &Path) -> Result<String> {
    let mut text = String::new();
    let results = out.join("results.json");
    if results.exists() {
        let table: ResultsTable = serde_json::from_slice(&fs::read(&results)?)?;
        let t = table.render();
        write_table(out, "results", &t, &table.to_csv(), None)?;
        text.push_str(&t);
    }
    let adapt = out.join("adapt.json");
    if adapt.exists() {
        let study: AdaptationStudy = serde_json::from_slice(&fs::read(&adapt)?)?;
        let t = study.render();
        write_table(out, "adapt", &t, &study.to_csv(), None)?;
        if !text.is_empty() {
            text.push('\n');
        }
        text.push_str(&t);
    }
    if text.is_empty() {
        return Err(PeftError::input(format!("no results.json or adapt.json in {}", out.display())));
    }
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("peftlab").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn global_flags_after_subcommand() {
        let cli = parse(&["train", "--seed", "7", "--fold", "1", "--jobs", "2", "--out", "x"]);
        assert_eq!(cli.command, Command::Train);
        let cfg = load_config(&cli).unwrap();
        assert_eq!((cfg.seed, cfg.fold), (7, Some(1)));
        assert_eq!(cfg.out, Some(PathBuf::from("x")));
    }

    #[test]
    fn config_errors_exit_one() {
        assert_eq!(main_with_args(["peftlab", "train", "--fold", "9", "--out", "/nonexistent/x"]), EXIT_CONFIG);
        assert_eq!(main_with_args(["peftlab", "frobnicate"]), EXIT_CONFIG);
        assert_eq!(main_with_args(["peftlab", "--config", "/nonexistent.json", "audit-params"]), EXIT_CONFIG);
    }

    #[test]
    fn missing_corpus_is_runtime_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        assert_eq!(main_with_args(["peftlab", "train", "--out", out]), EXIT_RUNTIME);
    }

    #[test]
    fn counts_sum_to_total() {
        let corpus = generate_corpus(&crate::data::CorpusSpec { per_cell: 2, ..crate::data::CorpusSpec::acted(0) }).unwrap();
        let (_, csv) = count_summary(&[("acted", &corpus)]);
        let all = csv.lines().find(|l| l.starts_with("acted,all")).unwrap();
        assert_eq!(all.rsplit(',').next().unwrap(), corpus.len().to_string());
    }
}
