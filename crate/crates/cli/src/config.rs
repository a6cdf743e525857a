//! Flat `key = value` experiment configuration.
//!
//! Lines are `key = value`; `#` starts a comment; blank lines are ignored.
//! Unknown or repeated keys are errors.
//!
//! | key | default |
//! |-----|---------|
//! | `model.n_blocks`, `model.d_model`, `model.n_heads` | required |
//! | `fed.clients`, `fed.rounds` | required |
//! | `seed` | 0 |
//! | `task` | `tagging` (or `multilabel`) |
//! | `model.d_ff` | 2 × d_model |
//! | `grammar.vocab_size` / `n_types` / `lexicon_size` / `seq_len` | 160 / 3 / 32 / 16 |
//! | `grammar.span_rate` / `topic_purity` | 0.3 / 0.8 |
//! | `grammar.type_weights` | all 1 (comma list) |
//! | `data.n_pretrain` / `n_train` / `n_test` | 4000 / 300 / 300 |
//! | `data.alpha` | 0.5 |
//! | `pretrain.steps` / `batch_size` / `lr` | see [`fedskip::orch::desk_config`] |
//! | `fed.mode` | `layer_skip` |
//! | `fed.top_k` | max(1, n_blocks / 4) |
//! | `fed.baseline` | `all` (or `top_k`) |
//! | `fed.client_fraction` / `eval_every` | 1.0 / 1 |
//! | `fed.head_aggregation` / `parallel` | true / false |
//! | `train.lr` / `local_epochs` / `batch_size` | see [`fedskip::orch::desk_config`] |
//! | `train.beta1` / `beta2` / `eps` / `weight_decay` | 0.9 / 0.999 / 1e-8 / 0.01 |
//! | `dp.enabled` | false |
//! | `dp.clip` / `dp.delta` / `dp.steps` | 1.0 / 1e-5 / 1 |
//! | `dp.sigma`, `dp.epsilon` | unset; at most one may be given |
//! | `secagg.enabled` / `secagg.scale` | false / 2^20 |
//! | `out.dir` | `out` |

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use fedskip::fed::Strategy;
use fedskip::orch::{desk_config, ExperimentConfig, Mode, TaskKind};
use fedskip::{Error, Result};

pub const REQUIRED: [&str; 5] = ["model.n_blocks", "model.d_model", "model.n_heads", "fed.clients", "fed.rounds"];

pub const KNOWN: [&str; 44] = [
    "seed",
    "task",
    "model.n_blocks",
    "model.d_model",
    "model.n_heads",
    "model.d_ff",
    "grammar.vocab_size",
    "grammar.n_types",
    "grammar.lexicon_size",
    "grammar.seq_len",
    "grammar.span_rate",
    "grammar.topic_purity",
    "grammar.type_weights",
    "data.n_pretrain",
    "data.n_train",
    "data.n_test",
    "data.alpha",
    "pretrain.steps",
    "pretrain.batch_size",
    "pretrain.lr",
    "fed.clients",
    "fed.rounds",
    "fed.mode",
    "fed.top_k",
    "fed.baseline",
    "fed.client_fraction",
    "fed.eval_every",
    "fed.head_aggregation",
    "fed.parallel",
    "train.lr",
    "train.local_epochs",
    "train.batch_size",
    "train.beta1",
    "train.beta2",
    "train.eps",
    "train.weight_decay",
    "dp.enabled",
    "dp.clip",
    "dp.delta",
    "dp.steps",
    "dp.sigma",
    "dp.epsilon",
    "secagg.enabled",
    "secagg.scale",
];

/// Keys that are accepted but do not change the experiment itself.
pub const OUTPUT_KEYS: [&str; 1] = ["out.dir"];

/// Parsed configuration plus the CLI-level settings.
#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub experiment: ExperimentConfig,
    pub mode: Mode,
    pub out_dir: PathBuf,
}

/// Raw key/value pairs in file order of first appearance.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}: expected `key = value`", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if !KNOWN.contains(&k) && !OUTPUT_KEYS.contains(&k) {
            return Err(Error::config(format!("line {}: unknown key `{k}`", n + 1)));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::config(format!("line {}: key `{k}` given twice", n + 1)));
        }
    }
    Ok(out)
}

struct Pairs(BTreeMap<String, String>);

impl Pairs {
    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.0
            .get(key)
            .map(|v| v.parse::<T>().map_err(|_| Error::config(format!("key `{key}`: cannot parse `{v}`"))))
            .transpose()
    }

    fn set<T: FromStr>(&self, key: &str, slot: &mut T) -> Result<()> {
        if let Some(v) = self.get(key)? {
            *slot = v;
        }
        Ok(())
    }

    fn required<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?.ok_or_else(|| Error::config(format!("missing required key `{key}`")))
    }
}

pub fn parse_config(text: &str) -> Result<CliConfig> {
    let p = Pairs(parse_pairs(text)?);
    for k in REQUIRED {
        if !p.0.contains_key(k) {
            return Err(Error::config(format!("missing required key `{k}`")));
        }
    }
    let seed: u64 = p.get("seed")?.unwrap_or(0);
    let mut ec = desk_config(seed);
    ec.task = match p.0.get("task").map(String::as_str) {
        None | Some("tagging") => TaskKind::Tagging,
        Some("multilabel") => TaskKind::Multilabel,
        Some(other) => return Err(Error::config(format!("key `task`: unknown task `{other}`"))),
    };
    let m = &mut ec.fed.model;
    m.n_blocks = p.required("model.n_blocks")?;
    m.d_model = p.required("model.d_model")?;
    m.n_heads = p.required("model.n_heads")?;
    m.d_ff = p.get("model.d_ff")?.unwrap_or(2 * m.d_model);

    let g = &mut ec.grammar;
    p.set("grammar.vocab_size", &mut g.vocab_size)?;
    p.set("grammar.n_types", &mut g.n_types)?;
    p.set("grammar.lexicon_size", &mut g.lexicon_size)?;
    p.set("grammar.seq_len", &mut g.seq_len)?;
    p.set("grammar.span_rate", &mut g.span_rate)?;
    p.set("grammar.topic_purity", &mut g.topic_purity)?;
    g.type_weights = match p.0.get("grammar.type_weights") {
        Some(list) => list
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| Error::config(format!("key `grammar.type_weights`: cannot parse `{s}`"))))
            .collect::<Result<_>>()?,
        None => vec![1.0; g.n_types],
    };
    ec.pretrain.mask_id = g.mask_id();

    p.set("data.n_pretrain", &mut ec.n_pretrain)?;
    p.set("data.n_train", &mut ec.n_train)?;
    p.set("data.n_test", &mut ec.n_test)?;
    p.set("data.alpha", &mut ec.alpha)?;
    p.set("pretrain.steps", &mut ec.pretrain.steps)?;
    p.set("pretrain.batch_size", &mut ec.pretrain.batch_size)?;
    p.set("pretrain.lr", &mut ec.pretrain.adamw.lr)?;

    let f = &mut ec.fed;
    f.n_clients = p.required("fed.clients")?;
    f.rounds = p.required("fed.rounds")?;
    p.set("fed.client_fraction", &mut f.client_fraction)?;
    p.set("fed.eval_every", &mut f.eval_every)?;
    p.set("fed.head_aggregation", &mut f.train.head_aggregation)?;
    p.set("fed.parallel", &mut f.parallel)?;
    p.set("train.lr", &mut f.train.adamw.lr)?;
    p.set("train.local_epochs", &mut f.train.local_epochs)?;
    p.set("train.batch_size", &mut f.train.batch_size)?;
    p.set("train.beta1", &mut f.train.adamw.beta1)?;
    p.set("train.beta2", &mut f.train.adamw.beta2)?;
    p.set("train.eps", &mut f.train.adamw.eps)?;
    p.set("train.weight_decay", &mut f.train.adamw.weight_decay)?;
    p.set("dp.enabled", &mut f.dp.enabled)?;
    p.set("dp.clip", &mut f.dp.clip_norm)?;
    p.set("dp.delta", &mut f.dp.delta)?;
    p.set("dp.steps", &mut f.dp.accounting_steps)?;
    let sigma: Option<f64> = p.get("dp.sigma")?;
    let eps: Option<f64> = p.get("dp.epsilon")?;
    match (sigma, eps) {
        (Some(_), Some(_)) => return Err(Error::config("keys `dp.sigma` and `dp.epsilon` are mutually exclusive")),
        (Some(s), None) => f.dp.noise_multiplier = s,
        (None, e) => f.dp.target_epsilon = e,
    }
    if f.dp.enabled && sigma.is_none() && eps.is_none() {
        return Err(Error::config("dp.enabled needs `dp.sigma` or `dp.epsilon`"));
    }
    p.set("secagg.enabled", &mut f.secure_agg)?;
    p.set("secagg.scale", &mut f.secagg_scale)?;

    ec.top_k = p.get("fed.top_k")?.unwrap_or((ec.fed.model.n_blocks / 4).max(1));
    ec.baseline_strategy = match p.0.get("fed.baseline").map(String::as_str) {
        None | Some("all") => Strategy::All,
        Some("top_k") => Strategy::TopK(ec.top_k),
        Some(other) => return Err(Error::config(format!("key `fed.baseline`: unknown value `{other}`"))),
    };
    let mode = match p.0.get("fed.mode") {
        Some(m) => Mode::parse(m).map_err(|e| e.context("key `fed.mode`"))?,
        None => Mode::LayerSkip,
    };
    let out_dir = PathBuf::from(p.0.get("out.dir").map_or("out", String::as_str));
    let cfg = CliConfig { experiment: ec, mode, out_dir };
    cfg.experiment.validate()?;
    Ok(cfg)
}

fn fmt_f(v: f64) -> String {
    format!("{v:?}")
}

/// Fully resolved configuration, defaults included, in the input syntax.
pub fn echo(c: &CliConfig) -> String {
    let ec = &c.experiment;
    let f = &ec.fed;
    let g = &ec.grammar;
    let weights: Vec<String> = g.type_weights.iter().map(|w| fmt_f(*w)).collect();
    let baseline = match ec.baseline_strategy {
        Strategy::All => "all",
        Strategy::TopK(_) => "top_k",
    };
    let task = match ec.task {
        TaskKind::Tagging => "tagging",
        TaskKind::Multilabel => "multilabel",
    };
    let mut lines = vec![
        format!("seed = {}", f.master_seed),
        format!("task = {task}"),
        format!("model.n_blocks = {}", f.model.n_blocks),
        format!("model.d_model = {}", f.model.d_model),
        format!("model.n_heads = {}", f.model.n_heads),
        format!("model.d_ff = {}", f.model.d_ff),
        format!("grammar.vocab_size = {}", g.vocab_size),
        format!("grammar.n_types = {}", g.n_types),
        format!("grammar.lexicon_size = {}", g.lexicon_size),
        format!("grammar.seq_len = {}", g.seq_len),
        format!("grammar.span_rate = {}", fmt_f(g.span_rate)),
        format!("grammar.topic_purity = {}", fmt_f(g.topic_purity)),
        format!("grammar.type_weights = {}", weights.join(",")),
        format!("data.n_pretrain = {}", ec.n_pretrain),
        format!("data.n_train = {}", ec.n_train),
        format!("data.n_test = {}", ec.n_test),
        format!("data.alpha = {}", fmt_f(ec.alpha)),
        format!("pretrain.steps = {}", ec.pretrain.steps),
        format!("pretrain.batch_size = {}", ec.pretrain.batch_size),
        format!("pretrain.lr = {}", fmt_f(ec.pretrain.adamw.lr)),
        format!("fed.clients = {}", f.n_clients),
        format!("fed.rounds = {}", f.rounds),
        format!("fed.mode = {}", c.mode.name()),
        format!("fed.top_k = {}", ec.top_k),
        format!("fed.baseline = {baseline}"),
        format!("fed.client_fraction = {}", fmt_f(f.client_fraction)),
        format!("fed.eval_every = {}", f.eval_every),
        format!("fed.head_aggregation = {}", f.train.head_aggregation),
        format!("fed.parallel = {}", f.parallel),
        format!("train.lr = {}", fmt_f(f.train.adamw.lr)),
        format!("train.local_epochs = {}", f.train.local_epochs),
        format!("train.batch_size = {}", f.train.batch_size),
        format!("train.beta1 = {}", fmt_f(f.train.adamw.beta1)),
        format!("train.beta2 = {}", fmt_f(f.train.adamw.beta2)),
        format!("train.eps = {}", fmt_f(f.train.adamw.eps)),
        format!("train.weight_decay = {}", fmt_f(f.train.adamw.weight_decay)),
        format!("dp.enabled = {}", f.dp.enabled),
        format!("dp.clip = {}", fmt_f(f.dp.clip_norm)),
        format!("dp.delta = {}", fmt_f(f.dp.delta)),
        format!("dp.steps = {}", f.dp.accounting_steps),
    ];
    match f.dp.target_epsilon {
        Some(e) => lines.push(format!("dp.epsilon = {}", fmt_f(e))),
        None => lines.push(format!("dp.sigma = {}", fmt_f(f.dp.noise_multiplier))),
    }
    lines.push(format!("secagg.enabled = {}", f.secure_agg));
    lines.push(format!("secagg.scale = {}", fmt_f(f.secagg_scale)));
    lines.push(format!("out.dir = {}", c.out_dir.display()));
    lines.join("\n") + "\n"
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIN: &str = "model.n_blocks = 4\nmodel.d_model = 16\nmodel.n_heads = 2\nfed.clients = 3\nfed.rounds = 2\n";

    #[test]
    fn minimal_config_and_defaults() {
        let c = parse_config(MIN).unwrap();
        assert_eq!(c.experiment.fed.model.d_ff, 32);
        assert_eq!(c.experiment.top_k, 1);
        assert_eq!(c.mode, Mode::LayerSkip);
    }

    #[test]
    fn echo_parses_back_to_the_same_config() {
        let text = format!("{MIN}dp.enabled = true\ndp.epsilon = 4 # budget\ngrammar.type_weights = 1,2,3\n");
        let c = parse_config(&text).unwrap();
        assert_eq!(parse_config(&echo(&c)).unwrap(), c);
    }

    #[test]
    fn errors_name_the_key() {
        let e = parse_config("model.d_model = 16\n").unwrap_err().to_string();
        assert!(e.contains("model.n_blocks"), "{e}");
        let e = parse_config(&format!("{MIN}fed.roundz = 3\n")).unwrap_err().to_string();
        assert!(e.contains("fed.roundz"), "{e}");
        let e = parse_config(&format!("{MIN}dp.sigma = 1\ndp.epsilon = 2\n")).unwrap_err().to_string();
        assert!(e.contains("mutually exclusive"), "{e}");
        let e = parse_config(&format!("{MIN}train.lr = fast\n")).unwrap_err().to_string();
        assert!(e.contains("train.lr"), "{e}");
        assert!(parse_config(&format!("{MIN}fed.rounds = 3\n")).is_err());
    }
}
