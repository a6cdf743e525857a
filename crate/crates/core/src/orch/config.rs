use crate::error::{Error, Result};
use crate::fed::{calibrate_sigma, DpConfig, Strategy, TrainConfig, DEFAULT_SCALE};
use crate::nn::ModelConfig;

/// Everything that defines one federated run.
#[derive(Debug, Clone, PartialEq)]
pub struct FederationConfig {
    pub model: ModelConfig,
    pub strategy: Strategy,
    pub n_clients: usize,
    pub rounds: u32,
    /// Share of clients sampled each round; `ceil(fraction * N)` take part.
    pub client_fraction: f64,
    pub train: TrainConfig,
    pub dp: DpConfig,
    pub secure_agg: bool,
    pub secagg_scale: f64,
    /// Evaluate every this many rounds; the last round is always evaluated.
    pub eval_every: u32,
    pub master_seed: u64,
    /// Run the clients of a round on the rayon pool.
    pub parallel: bool,
}

impl FederationConfig {
    pub fn new(model: ModelConfig, strategy: Strategy, n_clients: usize, rounds: u32) -> Self {
        Self {
            model,
            strategy,
            n_clients,
            rounds,
            client_fraction: 1.0,
            train: TrainConfig::default(),
            dp: DpConfig::default(),
            secure_agg: false,
            secagg_scale: DEFAULT_SCALE,
            eval_every: 1,
            master_seed: 0,
            parallel: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.dp.enabled {
            self.dp.validate()?;
        }
        if self.rounds == 0 {
            return Err(Error::config("fed.rounds must be >= 1"));
        }
        if self.n_clients == 0 {
            return Err(Error::config("fed.clients must be >= 1"));
        }
        if !(self.client_fraction > 0.0 && self.client_fraction <= 1.0) {
            return Err(Error::config("fed.client_fraction must lie in (0, 1]"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("fed.eval_every must be >= 1"));
        }
        if !(self.secagg_scale > 0.0) {
            return Err(Error::config("secagg.scale must be > 0"));
        }
        Ok(())
    }

    /// Clients sampled per round.
    pub fn cohort_size(&self) -> usize {
        ((self.client_fraction * self.n_clients as f64).ceil() as usize).clamp(1, self.n_clients)
    }

    /// DP settings with the noise multiplier filled in from the target
    /// epsilon when one is set.
    pub fn resolved_dp(&self) -> Result<DpConfig> {
        let mut dp = self.dp;
        if dp.enabled {
            if let Some(eps) = dp.target_epsilon {
                dp.noise_multiplier = calibrate_sigma(eps, dp.delta, dp.accounting_steps)?;
            }
        }
        Ok(dp)
    }

    pub fn is_evaluated(&self, round: u32) -> bool {
        round % self.eval_every == 0 || round == self.rounds
    }
}
