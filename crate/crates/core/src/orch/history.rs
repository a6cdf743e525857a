use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::data::Metrics;
use crate::error::{Error, Result};
use crate::nn::ParamSet;

/// One evaluated round. Byte counts are cumulative from the first round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: u32,
    pub metrics: Metrics,
    pub uplink_bytes: u64,
    pub downlink_bytes: u64,
    pub comm_fraction: f64,
    /// Mean training loss of the round.
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub rounds: Vec<RoundMetrics>,
    pub final_params: Option<ParamSet<f32>>,
    /// Checksums of frozen groups before the first round.
    pub initial_frozen: BTreeMap<usize, u64>,
    /// Checksums of frozen groups after each recorded round.
    pub frozen_checksums: Vec<BTreeMap<usize, u64>>,
}

pub const CSV_HEADER: &str = "round,micro_f1,macro_f1,auc,loss,uplink_bytes,downlink_bytes,comm_fraction";

/// Fixed-format float, or `NA` when undefined.
pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), fmt_f64)
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.6}")
}

impl History {
    pub fn last(&self) -> Option<&RoundMetrics> {
        self.rounds.last()
    }

    pub fn final_micro_f1(&self) -> Option<f64> {
        self.last().and_then(|r| r.metrics.micro_f1)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rounds {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.round,
                fmt_opt(r.metrics.micro_f1),
                fmt_opt(r.metrics.macro_f1),
                fmt_opt(r.metrics.auc),
                fmt_f64(r.loss),
                r.uplink_bytes,
                r.downlink_bytes,
                fmt_f64(r.comm_fraction)
            );
        }
        s
    }
}

/// Position of the first value reaching `frac` times the maximum.
pub fn first_reaching(values: &[f64], frac: f64) -> Result<Option<usize>> {
    if !(frac > 0.0 && frac <= 1.0) {
        return Err(Error::input("fraction must lie in (0, 1]"));
    }
    if values.is_empty() {
        return Err(Error::input("empty history"));
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(values.iter().position(|&v| v >= frac * max))
}

/// Smallest recorded round whose micro-F1 reaches `frac` of the run's
/// maximum. Undefined values count as zero.
pub fn rounds_to_fraction(h: &History, frac: f64) -> Result<Option<u32>> {
    let values: Vec<f64> = h.rounds.iter().map(|r| r.metrics.micro_f1.unwrap_or(0.0)).collect();
    Ok(first_reaching(&values, frac)?.map(|i| h.rounds[i].round))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hist(v: &[f64]) -> History {
        History {
            rounds: v
                .iter()
                .enumerate()
                .map(|(i, &f)| RoundMetrics {
                    round: 2 * i as u32 + 2,
                    metrics: Metrics { micro_f1: Some(f), ..Default::default() },
                    uplink_bytes: 0,
                    downlink_bytes: 0,
                    comm_fraction: 1.0,
                    loss: 0.0,
                })
                .collect(),
            ..Default::default()
        }
    }

    #[test]
    fn crafted_history() {
        assert_eq!(rounds_to_fraction(&hist(&[0.1, 0.5, 0.8, 0.88, 0.90]), 0.9).unwrap(), Some(8));
        assert_eq!(rounds_to_fraction(&hist(&[0.4, 0.4, 0.4]), 0.9).unwrap(), Some(2));
        assert_eq!(rounds_to_fraction(&hist(&[0.1, 0.7, 0.3, 0.7]), 1.0).unwrap(), Some(4));
        assert!(rounds_to_fraction(&hist(&[]), 0.9).is_err());
        assert!(rounds_to_fraction(&hist(&[0.1]), 0.0).is_err());
    }

    #[test]
    fn csv_shape() {
        let mut h = hist(&[0.5]);
        h.rounds[0].metrics.auc = None;
        let csv = h.to_csv();
        assert_eq!(csv, format!("{CSV_HEADER}\n2,0.500000,NA,NA,0.000000,0,0,1.000000\n"));
    }
}
