use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::tasksets::TASKSETS;
use crate::error::{Error, Result};

/// Registered algorithm names, in registry order.
pub const ALGORITHMS: [&str; 7] = [
    "maml",
    "fomaml",
    "anil",
    "metasgd",
    "metacurvature",
    "metakfo",
    "hypergrad",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Maml,
    Fomaml,
    Anil,
    MetaSgd,
    MetaCurvature,
    MetaKfo,
    Hypergrad,
}

impl Algorithm {
    pub const ALL: [Algorithm; 7] = [
        Algorithm::Maml,
        Algorithm::Fomaml,
        Algorithm::Anil,
        Algorithm::MetaSgd,
        Algorithm::MetaCurvature,
        Algorithm::MetaKfo,
        Algorithm::Hypergrad,
    ];

    pub fn name(self) -> &'static str {
        ALGORITHMS[self as usize]
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm `{s}`; valid: {}", ALGORITHMS.join(", "))))
    }
}

/// One benchmark run. Serialized verbatim into the result file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub benchmark: String,
    pub algorithm: String,
    pub ways: usize,
    /// Support samples per class (support points for `sine`, support
    /// episodes for `particles2d`).
    pub shots: usize,
    pub query_shots: usize,
    pub adapt_steps: usize,
    pub inner_lr: f64,
    pub outer_lr: f64,
    pub iterations: usize,
    pub task_batch: usize,
    pub seed: u64,
}

impl ExperimentConfig {
    /// Checks every field; errors name the field and its valid range.
    pub fn validate(&self) -> Result<Algorithm> {
        if !TASKSETS.contains(&self.benchmark.as_str()) {
            return Err(Error::Config(format!(
                "unknown benchmark `{}`; valid: {}",
                self.benchmark,
                TASKSETS.join(", ")
            )));
        }
        let algorithm: Algorithm = self.algorithm.parse()?;
        for (name, value) in [
            ("ways", self.ways),
            ("shots", self.shots),
            ("query-shots", self.query_shots),
            ("adapt-steps", self.adapt_steps),
            ("task-batch", self.task_batch),
        ] {
            if value == 0 {
                return Err(Error::Config(format!("--{name} must be at least 1")));
            }
        }
        for (name, value) in [("inner-lr", self.inner_lr), ("outer-lr", self.outer_lr)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Config(format!(
                    "--{name} must be a positive finite number, got {value}"
                )));
            }
        }
        Ok(algorithm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> ExperimentConfig {
        ExperimentConfig {
            benchmark: "sine".into(),
            algorithm: "maml".into(),
            ways: 1,
            shots: 5,
            query_shots: 10,
            adapt_steps: 1,
            inner_lr: 0.01,
            outer_lr: 0.001,
            iterations: 0,
            task_batch: 4,
            seed: 42,
        }
    }

    #[test]
    fn names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
    }

    #[test]
    fn validation_names_the_field() {
        assert_eq!(config().validate().unwrap(), Algorithm::Maml);
        let mut c = config();
        c.task_batch = 0;
        assert!(c.validate().unwrap_err().to_string().contains("task-batch"));
        let mut c = config();
        c.inner_lr = f64::NAN;
        assert!(c.validate().is_err());
        let mut c = config();
        c.algorithm = "reptile".into();
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("maml, fomaml"));
    }
}
