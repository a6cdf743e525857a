//! The `gen`, `run`, `ablate`, and `report` subcommands.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use fedskip::fed::Update;
use fedskip::nn::tensor::fnv1a64;
use fedskip::nn::ParamSet;
use fedskip::orch::{generate_datasets, pretrain_backbone, run_mode, Datasets, Examples, ExperimentConfig, Mode, TaskKind};
use fedskip::wire::{decode_update, encode_update};
use fedskip::{Error, Result};

use crate::config::{echo, CliConfig};
use crate::report::{markdown, parse_csv, summary_line, svg_plot, Table};

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::from(e).context(format!("writing {}", path.display())))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::from(e).context(format!("reading {}", path.display())))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::from(e).context(format!("creating {}", path.display())))
}

pub fn data_dir(out: &Path) -> PathBuf {
    out.join("data")
}

fn client_file(i: usize) -> String {
    format!("client_{i:03}.bin")
}

fn task_name(t: TaskKind) -> &'static str {
    match t {
        TaskKind::Tagging => "tagging",
        TaskKind::Multilabel => "multilabel",
    }
}

/// Manifest text: seeds, grammar hash, and example counts.
pub fn manifest(ec: &ExperimentConfig, d: &Datasets) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "seed = {}", ec.fed.master_seed);
    let _ = writeln!(s, "task = {}", task_name(ec.task));
    let _ = writeln!(s, "grammar_hash = {:#018x}", ec.grammar.hash());
    for (i, name) in ["corpus", "train", "test", "partition"].iter().enumerate() {
        let _ = writeln!(s, "seed.{name} = {}", ec.data_seed(i as u64));
    }
    let _ = writeln!(s, "alpha = {:?}", ec.alpha);
    let _ = writeln!(s, "corpus_sequences = {}", d.corpus.len());
    let _ = writeln!(s, "clients = {}", d.clients.len());
    let mut total = 0;
    for (i, c) in d.clients.iter().enumerate() {
        let h: Vec<String> = c.histogram(ec.grammar.n_types).iter().map(usize::to_string).collect();
        let _ = writeln!(s, "client.{i}.examples = {}", c.len());
        let _ = writeln!(s, "client.{i}.type_histogram = {}", h.join(","));
        total += c.len();
    }
    let _ = writeln!(s, "test_examples = {}", d.test.len());
    let _ = writeln!(s, "total_examples = {}", total + d.test.len());
    s
}

/// Writes the corpus, test set, client partitions, and manifest.
pub fn cmd_gen(c: &CliConfig) -> Result<String> {
    let ec = &c.experiment;
    let d = generate_datasets(ec)?;
    let dir = data_dir(&c.out_dir);
    create_dir(&dir)?;
    write(&dir.join("corpus.bin"), fedskip::data::io::encode_records(&d.corpus))?;
    write(&dir.join("test.bin"), d.test.encode())?;
    for (i, cl) in d.clients.iter().enumerate() {
        write(&dir.join(client_file(i)), cl.encode())?;
    }
    let m = manifest(ec, &d);
    write(&dir.join("manifest.txt"), &m)?;
    write(&c.out_dir.join("config.resolved"), echo(c))?;
    Ok(format!("wrote {} clients, {} test examples to {}", d.clients.len(), d.test.len(), dir.display()))
}

/// Loads datasets written by `gen`, checking they match the config.
pub fn load_datasets(c: &CliConfig) -> Result<Datasets> {
    let ec = &c.experiment;
    let dir = data_dir(&c.out_dir);
    let missing = |e: Error| e.context("dataset missing or unreadable; run `fedskip gen` first");
    let corpus = fedskip::data::io::decode_records(&read(&dir.join("corpus.bin")).map_err(missing)?)?;
    let test = Examples::decode(ec.task, &read(&dir.join("test.bin")).map_err(missing)?)?;
    let mut clients = Vec::new();
    for i in 0..ec.fed.n_clients {
        clients.push(Examples::decode(ec.task, &read(&dir.join(client_file(i))).map_err(missing)?)?);
    }
    let d = Datasets { corpus, test, clients };
    let on_disk = String::from_utf8_lossy(&read(&dir.join("manifest.txt")).map_err(missing)?).into_owned();
    if on_disk != manifest(ec, &d) {
        return Err(Error::input(format!("{} does not match the configuration; rerun `fedskip gen`", dir.display())));
    }
    Ok(d)
}

fn backbone_path(c: &CliConfig) -> PathBuf {
    let ec = &c.experiment;
    let key = format!("{:?}|{:?}|{}|{}|{}", ec.mlm_model(), ec.pretrain, ec.pretrain_seed(), ec.grammar.hash(), ec.n_pretrain);
    c.out_dir.join(format!("backbone-{:016x}.bin", fnv1a64(key.as_bytes())))
}

/// Pretrained backbone, from the cache when present.
pub fn backbone(c: &CliConfig, d: &Datasets) -> Result<ParamSet<f32>> {
    let path = backbone_path(c);
    if path.exists() {
        return Ok(decode_update::<f32>(&read(&path)?)?.params);
    }
    let p = pretrain_backbone(&c.experiment, &d.corpus)?;
    write(&path, encode_update(&Update { round: 0, client_id: 0, weight: 0, params: p.clone() }))?;
    Ok(p)
}

pub fn history_file(mode: Mode) -> String {
    format!("history_{}.csv", mode.name())
}

/// Runs the configured mode; writes its history CSV and summary.
pub fn cmd_run(c: &CliConfig) -> Result<String> {
    let d = load_datasets(c)?;
    let bb = backbone(c, &d)?;
    let out = run_mode(&c.experiment, c.mode, &bb, &d)?;
    let csv = out.history.to_csv();
    write(&c.out_dir.join(history_file(c.mode)), &csv)?;
    write(&c.out_dir.join("config.resolved"), echo(c))?;
    let line = summary_line(c.mode.name(), &parse_csv(&csv)?)?;
    write(&c.out_dir.join(format!("summary_{}.txt", c.mode.name())), format!("{line}\n"))?;
    Ok(line)
}

/// Which partitions an ablation covers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AblationRow {
    TopK(usize),
    All,
}

pub const ABLATION_HEADER: &str = "k,final_micro_f1,comm_fraction,rounds_to_90";

/// One layer-skip run per entry; writes `ablation.csv`.
pub fn cmd_ablate(c: &CliConfig, rows: &[AblationRow]) -> Result<String> {
    let d = load_datasets(c)?;
    let bb = backbone(c, &d)?;
    let l = c.experiment.fed.model.n_blocks;
    let mut csv = format!("{ABLATION_HEADER}\n");
    for row in rows {
        let mut ec = c.experiment.clone();
        let (label, mode) = match *row {
            AblationRow::TopK(k) => {
                if k == 0 || k > l {
                    return Err(Error::config(format!("k = {k} outside 1..={l}")));
                }
                ec.top_k = k;
                (k.to_string(), Mode::LayerSkip)
            }
            AblationRow::All => ("all".to_string(), Mode::FedavgFull),
        };
        let out = run_mode(&ec, mode, &bb, &d)?;
        let csv_run = out.history.to_csv();
        write(&c.out_dir.join(format!("history_k{label}.csv")), &csv_run)?;
        let t = parse_csv(&csv_run)?;
        let r90 = t.rounds_to(0.9)?.unwrap_or_else(|| "NA".into());
        let _ = writeln!(csv, "{label},{},{:.6},{r90}", t.last("micro_f1"), out.comm_fraction);
    }
    write(&c.out_dir.join("ablation.csv"), &csv)?;
    write(&c.out_dir.join("config.resolved"), echo(c))?;
    Ok(csv)
}

/// Parses a k-list such as `1,2,all`.
pub fn parse_k_list(s: &str) -> Result<Vec<AblationRow>> {
    s.split(',')
        .map(|t| match t.trim() {
            "all" => Ok(AblationRow::All),
            v => v.parse().map(AblationRow::TopK).map_err(|_| Error::config(format!("bad k-list entry `{v}`"))),
        })
        .collect()
}

fn method_name(path: &Path) -> String {
    let stem = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
    stem.strip_prefix("history_").map(str::to_string).unwrap_or(stem)
}

/// Comparison table and plots from history CSVs.
pub fn cmd_report(csvs: &[PathBuf], out: &Path) -> Result<String> {
    if csvs.is_empty() {
        return Err(Error::config("report needs at least one CSV"));
    }
    let mut runs: Vec<(String, Table)> = Vec::new();
    for p in csvs {
        let text = String::from_utf8(read(p)?).map_err(|_| Error::input(format!("{} is not UTF-8", p.display())))?;
        runs.push((method_name(p), parse_csv(&text).map_err(|e| e.context(p.display()))?));
    }
    create_dir(out)?;
    let mut md = String::from("# Run comparison\n\n");
    md.push_str(&markdown(&runs)?);
    md.push('\n');
    for metric in ["micro_f1", "loss"] {
        let file = format!("plot_{metric}.svg");
        write(&out.join(&file), svg_plot(&runs, metric)?)?;
        let _ = writeln!(md, "![{metric} by round]({file})\n");
    }
    write(&out.join("report.md"), &md)?;
    let lines: Vec<String> = runs.iter().map(|(n, t)| summary_line(n, t)).collect::<Result<_>>()?;
    Ok(lines.join("\n"))
}
