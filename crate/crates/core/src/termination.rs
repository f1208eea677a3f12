//! Sequence termination: the sigmoid EOS head and the progress-counter
//! baseline, both wrapped by a hard frame cap.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::sigmoid;

#[derive(Debug, Clone, PartialEq)]
pub struct EosHead {
    pub weight: Vec<f64>,
    pub bias: f64,
}

impl EosHead {
    pub fn logit(&self, hidden: &[f64]) -> Result<f64> {
        if hidden.len() != self.weight.len() {
            return Err(Error::Shape {
                context: "eos head hidden state".into(),
                expected: self.weight.len(),
                found: hidden.len(),
            });
        }
        Ok(self.weight.iter().zip(hidden).map(|(w, h)| w * h).sum::<f64>() + self.bias)
    }
}

/// `σ(W·h + B)`.
pub fn eos_probability(hidden: &[f64], head: &EosHead) -> Result<f64> {
    Ok(sigmoid(head.logit(hidden)?))
}

/// Continue iff `p > tau`.
pub fn eos_decision(p: f64, tau: f64) -> bool {
    p > tau
}

/// Continue iff the predicted progress counter is still below 1.
pub fn counter_decision(counter: f64) -> bool {
    counter < 1.0
}

/// Training target of the progress counter at 1-based frame `t` of `len`.
pub fn counter_target(t: usize, len: usize) -> f64 {
    t as f64 / len as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TerminationMode {
    #[default]
    Eos,
    Counter,
}

impl fmt::Display for TerminationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TerminationMode::Eos => "eos",
            TerminationMode::Counter => "counter",
        })
    }
}

impl FromStr for TerminationMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eos" => Ok(TerminationMode::Eos),
            "counter" => Ok(TerminationMode::Counter),
            _ => Err(Error::invalid(format!("unknown termination mode `{s}`"))),
        }
    }
}

/// What the EOS head's probability means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EosPolarity {
    /// Probability of continuing; stop when it drops to `tau` or below.
    #[default]
    Continue,
    /// Probability of ending; stop when it exceeds `tau`.
    End,
}

impl EosPolarity {
    /// Training target for 1-based frame `t` of a sequence of `len` frames.
    pub fn target(self, t: usize, len: usize) -> f64 {
        let cont = if t < len { 1.0 } else { 0.0 };
        match self {
            EosPolarity::Continue => cont,
            EosPolarity::End => 1.0 - cont,
        }
    }

    pub fn continue_probability(self, p: f64) -> f64 {
        match self {
            EosPolarity::Continue => p,
            EosPolarity::End => 1.0 - p,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminationConfig {
    #[serde(default)]
    pub mode: TerminationMode,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_max_frames")]
    pub max_frames: usize,
    #[serde(default)]
    pub eos_polarity: EosPolarity,
}

fn default_tau() -> f64 {
    0.5
}

fn default_max_frames() -> usize {
    512
}

impl Default for TerminationConfig {
    fn default() -> Self {
        TerminationConfig {
            mode: TerminationMode::Eos,
            tau: default_tau(),
            max_frames: default_max_frames(),
            eos_polarity: EosPolarity::Continue,
        }
    }
}

impl TerminationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config(format!("tau must lie in (0, 1), got {}", self.tau)));
        }
        if self.max_frames == 0 {
            return Err(Error::Config("max_frames must be at least 1".into()));
        }
        Ok(())
    }

    /// Decision after emitting frame `emitted` (1-based), given the step's
    /// EOS probability and counter prediction.
    pub fn should_continue(&self, emitted: usize, eos_prob: f64, counter: f64) -> bool {
        if emitted >= self.max_frames {
            return false;
        }
        match self.mode {
            TerminationMode::Eos => {
                eos_decision(self.eos_polarity.continue_probability(eos_prob), self.tau)
            }
            TerminationMode::Counter => counter_decision(counter),
        }
    }
}
