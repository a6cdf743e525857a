//! End-to-end runs of the `fedskip` binary on a tiny configuration.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = "\
# tiny experiment
seed = 5
model.n_blocks = 4
model.d_model = 16
model.n_heads = 2
fed.clients = 3
fed.rounds = 3
fed.eval_every = 2
grammar.seq_len = 8
data.n_pretrain = 60
data.n_train = 30
data.n_test = 12
pretrain.steps = 5
";

fn fedskip(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedskip")).args(args).output().expect("binary runs")
}

fn setup(dir: &Path, extra: &str) -> String {
    let cfg = dir.join("exp.cfg");
    fs::write(&cfg, format!("{CONFIG}{extra}")).unwrap();
    cfg.to_str().unwrap().to_string()
}

fn ok(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn gen_is_deterministic_and_conserves_counts() {
    let t = tempfile::tempdir().unwrap();
    let cfg = setup(t.path(), "");
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    ok(&fedskip(&["gen", "--config", &cfg, "--out", a.to_str().unwrap()]));
    ok(&fedskip(&["gen", "--config", &cfg, "--out", b.to_str().unwrap()]));
    assert_eq!(dir_bytes(&a.join("data")), dir_bytes(&b.join("data")));
    let manifest = fs::read_to_string(a.join("data/manifest.txt")).unwrap();
    let get = |k: &str| -> usize {
        manifest.lines().find_map(|l| l.strip_prefix(&format!("{k} = "))).unwrap().parse().unwrap()
    };
    let clients: usize = (0..3).map(|i| get(&format!("client.{i}.examples"))).sum();
    assert_eq!(get("total_examples"), clients + get("test_examples"));
    assert_eq!(clients, 30);
    assert!(a.join("config.resolved").exists());
}

#[test]
fn config_errors_exit_two_and_name_the_key() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("bad.cfg");
    fs::write(&cfg, CONFIG.replace("model.n_blocks = 4\n", "")).unwrap();
    let o = fedskip(&["gen", "--config", cfg.to_str().unwrap(), "--out", t.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("model.n_blocks"));
    let cfg = setup(t.path(), "fed.typo = 1\n");
    let o = fedskip(&["gen", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("fed.typo"));
}

#[test]
fn run_without_data_exits_three() {
    let t = tempfile::tempdir().unwrap();
    let cfg = setup(t.path(), "");
    let o = fedskip(&["run", "--config", &cfg, "--out", t.path().join("none").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn run_report_round_trip() {
    let t = tempfile::tempdir().unwrap();
    let cfg = setup(t.path(), "");
    let out = t.path().join("o");
    let o = out.to_str().unwrap();
    ok(&fedskip(&["gen", "--config", &cfg, "--out", o]));
    let line = ok(&fedskip(&["run", "--config", &cfg, "--out", o, "--mode", "layer_skip"]));
    let csv = fs::read_to_string(out.join("history_layer_skip.csv")).unwrap();
    // Rounds 2 and 3 are evaluated.
    assert_eq!(csv.lines().count(), 3);
    assert!(line.starts_with("method=layer_skip rounds=3 final_micro_f1="), "{line}");
    assert!(line.contains("rounds_to_90="));
    ok(&fedskip(&["run", "--config", &cfg, "--out", o, "--mode", "layer_skip"]));
    assert_eq!(fs::read_to_string(out.join("history_layer_skip.csv")).unwrap(), csv);

    ok(&fedskip(&["run", "--config", &cfg, "--out", o, "--mode", "fedavg_full"]));
    let full = fs::read_to_string(out.join("history_fedavg_full.csv")).unwrap();
    for row in full.lines().skip(1) {
        assert_eq!(row.rsplit(',').next(), Some("1.000000"));
    }

    let rep = out.join("rep");
    let single = ok(&fedskip(&["report", "--out", rep.to_str().unwrap(), out.join("history_layer_skip.csv").to_str().unwrap()]));
    assert_eq!(single.trim(), line.trim());
    let both = ok(&fedskip(&[
        "report",
        "--out",
        rep.to_str().unwrap(),
        out.join("history_layer_skip.csv").to_str().unwrap(),
        out.join("history_fedavg_full.csv").to_str().unwrap(),
    ]));
    assert_eq!(both.lines().count(), 2);
    let md = fs::read_to_string(rep.join("report.md")).unwrap();
    assert_eq!(md.lines().filter(|l| l.starts_with("| layer_skip") || l.starts_with("| fedavg_full")).count(), 2);
    assert!(rep.join("plot_micro_f1.svg").exists());

    let broken = out.join("broken.csv");
    fs::write(&broken, csv.replace("macro_f1", "macro")).unwrap();
    let o = fedskip(&["report", "--out", rep.to_str().unwrap(), broken.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("macro_f1"));
}

#[test]
fn ablation_fractions() {
    let t = tempfile::tempdir().unwrap();
    let cfg = setup(t.path(), "");
    let out = t.path().join("o");
    let o = out.to_str().unwrap();
    ok(&fedskip(&["gen", "--config", &cfg, "--out", o]));
    ok(&fedskip(&["ablate", "--config", &cfg, "--out", o, "--k-list", "1,2,4,all"]));
    let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
    let fracs: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert_eq!(fracs.len(), 4);
    assert!(fracs.windows(2).all(|w| w[0] < w[1]), "{fracs:?}");
    assert!(fracs[2] < 1.0);
    assert_eq!(fracs[3], 1.0);
    let o = fedskip(&["ablate", "--config", &cfg, "--out", o, "--k-list", "5"]);
    assert_eq!(o.status.code(), Some(2));
}
