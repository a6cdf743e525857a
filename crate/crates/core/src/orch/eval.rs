use crate::data::{evaluate_multilabel, evaluate_tagging, Metrics};
use crate::error::{Error, Result};
use crate::nn::kernels::sigmoid;
use crate::nn::{forward_seq, ModelConfig, ParamSet, Sample, Target, Task};

/// Scores `params` on `test` with the metrics of the model's task.
pub fn evaluate_params(cfg: &ModelConfig, params: &ParamSet<f32>, test: &[Sample]) -> Result<Metrics> {
    match cfg.task {
        Task::Tagging { types } => {
            let c = 2 * types + 1;
            let mut pred = Vec::with_capacity(test.len());
            let mut gold = Vec::with_capacity(test.len());
            for s in test {
                let Target::PerToken(t) = &s.target else {
                    return Err(Error::input("tagging evaluation needs per-token targets"));
                };
                let logits = forward_seq(cfg, params, &s.tokens)?;
                pred.push(logits.chunks(c).map(argmax).collect());
                gold.push(t.iter().map(|v| v.unwrap_or(0)).collect());
            }
            evaluate_tagging(&pred, &gold, c)
        }
        Task::Multilabel { .. } => {
            let mut scores = Vec::with_capacity(test.len());
            let mut gold = Vec::with_capacity(test.len());
            for s in test {
                let Target::Labels(l) = &s.target else {
                    return Err(Error::input("multilabel evaluation needs label targets"));
                };
                let logits = forward_seq(cfg, params, &s.tokens)?;
                scores.push(logits.iter().map(|&z| sigmoid(z as f64)).collect());
                gold.push(l.clone());
            }
            evaluate_multilabel(&scores, &gold)
        }
        Task::Mlm => Err(Error::config("no task metrics for the MLM objective")),
    }
}

fn argmax(row: &[f32]) -> u32 {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best as u32
}

/// Mean of the defined values of each metric.
pub fn mean_metrics(all: &[Metrics]) -> Metrics {
    let mean = |f: fn(&Metrics) -> Option<f64>| {
        let v: Vec<f64> = all.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    Metrics {
        micro_f1: mean(|m| m.micro_f1),
        macro_f1: mean(|m| m.macro_f1),
        auc: mean(|m| m.auc),
        skipped: Vec::new(),
    }
}
