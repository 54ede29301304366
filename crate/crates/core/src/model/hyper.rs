use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{AdamConfig, CellKind};

/// Complete training configuration. Defaults are the best configuration
/// reported for the LSTM variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub sae_layers: Vec<usize>,
    /// Upper bound on autoencoder pretraining epochs; early stopping decides
    /// the actual stop. Zero skips pretraining.
    pub sae_epochs: usize,
    pub common_layers: Vec<usize>,
    pub common_dropout: f64,
    pub rnn_kind: CellKind,
    pub rnn_hidden: usize,
    pub rnn_layers: usize,
    /// Dense widths of each of the building and floor heads; the last is 1.
    pub bf_head_layers: Vec<usize>,
    pub bf_dropout: f64,
    pub bf_epochs: usize,
    /// Dense widths of the position head; the last is 2.
    pub position_layers: Vec<usize>,
    pub position_dropout: f64,
    pub position_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub min_epochs: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            sae_layers: vec![256, 128, 64],
            sae_epochs: 20,
            common_layers: vec![128, 128],
            common_dropout: 0.2,
            rnn_kind: CellKind::Lstm,
            rnn_hidden: 128,
            rnn_layers: 2,
            bf_head_layers: vec![32, 1],
            bf_dropout: 0.2,
            bf_epochs: 10,
            position_layers: vec![128, 128, 2],
            position_dropout: 0.1,
            position_epochs: 30,
            batch_size: 32,
            patience: 5,
            min_epochs: 5,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

pub const KEYS: [&str; 21] = [
    "sae_layers",
    "sae_epochs",
    "common_layers",
    "common_dropout",
    "rnn_kind",
    "rnn_hidden",
    "rnn_layers",
    "bf_head_layers",
    "bf_dropout",
    "bf_epochs",
    "position_layers",
    "position_dropout",
    "position_epochs",
    "batch_size",
    "patience",
    "min_epochs",
    "learning_rate",
    "beta1",
    "beta2",
    "epsilon",
    "seed",
];

fn widths_to_string(w: &[usize]) -> String {
    w.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn parse_widths(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::invalid(format!("{key}: `{value}` is not a comma-separated list of widths")))
        })
        .collect()
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::invalid(format!("{key}: cannot parse `{value}`")))
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid(msg));
        for (name, widths) in [
            ("sae_layers", &self.sae_layers),
            ("common_layers", &self.common_layers),
            ("bf_head_layers", &self.bf_head_layers),
            ("position_layers", &self.position_layers),
        ] {
            if widths.is_empty() || widths.contains(&0) {
                return bad(format!("{name} must be a nonempty list of widths >= 1, got {widths:?}"));
            }
        }
        if self.bf_head_layers.last() != Some(&1) {
            return bad(format!("bf_head_layers must end in 1, got {:?}", self.bf_head_layers));
        }
        if self.position_layers.last() != Some(&2) {
            return bad(format!("position_layers must end in 2, got {:?}", self.position_layers));
        }
        for (name, rate) in [
            ("common_dropout", self.common_dropout),
            ("bf_dropout", self.bf_dropout),
            ("position_dropout", self.position_dropout),
        ] {
            if !(0.0..1.0).contains(&rate) {
                return bad(format!("{name} must be in [0, 1), got {rate}"));
            }
        }
        for (name, v) in [
            ("rnn_hidden", self.rnn_hidden),
            ("rnn_layers", self.rnn_layers),
            ("bf_epochs", self.bf_epochs),
            ("position_epochs", self.position_epochs),
            ("batch_size", self.batch_size),
            ("patience", self.patience),
        ] {
            if v == 0 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        let a = &self.adam;
        if !(a.learning_rate > 0.0 && a.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", a.learning_rate));
        }
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
            return bad(format!("betas must be in [0, 1), got {} and {}", a.beta1, a.beta2));
        }
        if !(a.epsilon > 0.0) {
            return bad(format!("epsilon must be positive, got {}", a.epsilon));
        }
        Ok(())
    }

    /// Sets one field from its textual form. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "sae_layers" => self.sae_layers = parse_widths(key, value)?,
            "sae_epochs" => self.sae_epochs = parse_num(key, value)?,
            "common_layers" => self.common_layers = parse_widths(key, value)?,
            "common_dropout" => self.common_dropout = parse_num(key, value)?,
            "rnn_kind" => {
                self.rnn_kind = CellKind::from_name(value.trim())
                    .ok_or_else(|| Error::invalid(format!("rnn_kind: `{value}` is not standard or lstm")))?
            }
            "rnn_hidden" => self.rnn_hidden = parse_num(key, value)?,
            "rnn_layers" => self.rnn_layers = parse_num(key, value)?,
            "bf_head_layers" => self.bf_head_layers = parse_widths(key, value)?,
            "bf_dropout" => self.bf_dropout = parse_num(key, value)?,
            "bf_epochs" => self.bf_epochs = parse_num(key, value)?,
            "position_layers" => self.position_layers = parse_widths(key, value)?,
            "position_dropout" => self.position_dropout = parse_num(key, value)?,
            "position_epochs" => self.position_epochs = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "patience" => self.patience = parse_num(key, value)?,
            "min_epochs" => self.min_epochs = parse_num(key, value)?,
            "learning_rate" => self.adam.learning_rate = parse_num(key, value)?,
            "beta1" => self.adam.beta1 = parse_num(key, value)?,
            "beta2" => self.adam.beta2 = parse_num(key, value)?,
            "epsilon" => self.adam.epsilon = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            _ => return Err(Error::invalid(format!("unknown hyperparameter `{key}`"))),
        }
        Ok(())
    }

    /// All fields as `(key, value)` text pairs, in [`KEYS`] order. Floats use
    /// the shortest representation that parses back to the same value.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("sae_layers", widths_to_string(&self.sae_layers)),
            ("sae_epochs", self.sae_epochs.to_string()),
            ("common_layers", widths_to_string(&self.common_layers)),
            ("common_dropout", self.common_dropout.to_string()),
            ("rnn_kind", self.rnn_kind.name().to_string()),
            ("rnn_hidden", self.rnn_hidden.to_string()),
            ("rnn_layers", self.rnn_layers.to_string()),
            ("bf_head_layers", widths_to_string(&self.bf_head_layers)),
            ("bf_dropout", self.bf_dropout.to_string()),
            ("bf_epochs", self.bf_epochs.to_string()),
            ("position_layers", widths_to_string(&self.position_layers)),
            ("position_dropout", self.position_dropout.to_string()),
            ("position_epochs", self.position_epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("patience", self.patience.to_string()),
            ("min_epochs", self.min_epochs.to_string()),
            ("learning_rate", self.adam.learning_rate.to_string()),
            ("beta1", self.adam.beta1.to_string()),
            ("beta2", self.adam.beta2.to_string()),
            ("epsilon", self.adam.epsilon.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }
}
