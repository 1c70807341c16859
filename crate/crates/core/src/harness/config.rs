//! The experiment document: a single JSON object with `"schema": 1`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adversary::{LossPattern, TransitionAdversary};
use crate::error::{Error, Result};
use crate::mdp::LayeredMdp;
use crate::reduction::{BaseKind, Betas};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_ENUMERATION_CAP: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub mdp: MdpSpec,
    pub horizon: usize,
    #[serde(default)]
    pub transitions: TransitionSpec,
    pub losses: LossSpec,
    pub learner: LearnerSpec,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Seeds the environment: ground-truth transition, loss tables, means.
    #[serde(default)]
    pub env_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default = "default_cap")]
    pub enumeration_cap: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpSpec {
    pub layer_sizes: Vec<usize>,
    pub num_actions: usize,
    /// Dirichlet concentration of the random ground-truth transition.
    #[serde(default = "default_concentration")]
    pub concentration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionSpec {
    pub kind: TransitionAdversary,
    #[serde(default)]
    pub budget: f64,
}

impl Default for TransitionSpec {
    fn default() -> Self {
        Self {
            kind: TransitionAdversary::None,
            budget: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossSpec {
    Adversarial {
        #[serde(flatten)]
        pattern: LossPattern,
    },
    /// Bernoulli losses around a planted mean whose Q-gaps are `gap`.
    Stochastic {
        gap: f64,
        #[serde(default)]
        expectation: bool,
    },
    CorruptedStochastic {
        gap: f64,
        #[serde(default)]
        expectation: bool,
        budget: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Alg1,
    Alg4,
    Reduction,
    /// Plays the comparator; its regret is identically zero.
    Comparator,
    Uniform,
}

impl LearnerKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Alg1 => "alg1",
            Self::Alg4 => "alg4",
            Self::Reduction => "reduction",
            Self::Comparator => "comparator",
            Self::Uniform => "uniform",
        }
    }
}

impl std::str::FromStr for LearnerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Config(format!("unknown learner '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerSpec {
    pub kind: LearnerKind,
    /// Corruption guess; defaults to the declared transition budget.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub betas: Option<Betas>,
    #[serde(default)]
    pub base: BaseKind,
}

impl LearnerSpec {
    pub fn new(kind: LearnerKind) -> Self {
        Self {
            kind,
            theta: None,
            delta: None,
            eta: None,
            betas: None,
            base: BaseKind::default(),
        }
    }
}

/// Grid for `sweep`; an empty list keeps the base value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default)]
    pub horizons: Vec<usize>,
    #[serde(default)]
    pub budgets: Vec<f64>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_cap() -> usize {
    DEFAULT_ENUMERATION_CAP
}

fn default_concentration() -> f64 {
    1.0
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn build_mdp(&self) -> Result<LayeredMdp> {
        LayeredMdp::new(self.mdp.layer_sizes.clone(), self.mdp.num_actions)
            .map_err(|e| Error::Config(e.to_string()))
    }

    /// Corruption guess handed to the learner.
    pub fn theta(&self) -> f64 {
        self.learner.theta.unwrap_or(self.transitions.budget)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.schema != SCHEMA_VERSION {
            return bad(format!(
                "schema {} is not supported (expected {SCHEMA_VERSION})",
                self.schema
            ));
        }
        let mdp = self.build_mdp()?;
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if !(self.mdp.concentration > 0.0 && self.mdp.concentration.is_finite()) {
            return bad("concentration must be positive".into());
        }
        let max = 2.0 * mdp.num_layers() as f64;
        let budgets = self
            .sweep
            .as_ref()
            .map(|s| s.budgets.clone())
            .unwrap_or_default();
        let horizons = self
            .sweep
            .as_ref()
            .map(|s| s.horizons.clone())
            .unwrap_or_default();
        if horizons.contains(&0) {
            return bad("sweep horizons must be at least 1".into());
        }
        let min_t = horizons.iter().copied().chain([self.horizon]).min().unwrap();
        for c in budgets.iter().copied().chain([self.transitions.budget]) {
            if !(c >= 0.0 && c.is_finite()) {
                return bad(format!("transition budget {c} must be nonnegative"));
            }
            if c > max * min_t as f64 {
                return bad(format!(
                    "transition budget {c} exceeds 2LT = {}",
                    max * min_t as f64
                ));
            }
        }
        match &self.losses {
            LossSpec::Adversarial { pattern } => match *pattern {
                LossPattern::Alternating { period: 0 } | LossPattern::PhaseSwitching { phase_len: 0 } => {
                    return bad("loss pattern length must be positive".into())
                }
                _ => {}
            },
            LossSpec::Stochastic { gap, .. } | LossSpec::CorruptedStochastic { gap, .. } => {
                if !(*gap > 0.0 && *gap <= 1.0) {
                    return bad(format!("gap {gap} must lie in (0, 1]"));
                }
            }
        }
        if let LossSpec::CorruptedStochastic { budget, .. } = self.losses {
            if !(budget >= 0.0 && budget.is_finite()) {
                return bad("loss budget must be nonnegative".into());
            }
        }
        let l = &self.learner;
        if let Some(t) = l.theta {
            if !(t >= 0.0 && t.is_finite()) {
                return bad("theta must be nonnegative".into());
            }
        }
        if let Some(d) = l.delta {
            if !(d > 0.0 && d < 1.0) {
                return bad("delta must lie in (0, 1)".into());
            }
        }
        if let Some(e) = l.eta {
            let cap = 1.0 / (8.0 * mdp.num_layers() as f64);
            if !(e > 0.0 && e <= cap) {
                return bad(format!("eta {e} must lie in (0, {cap}]"));
            }
        }
        if let Some(b) = l.betas {
            if !(b.beta1 > 0.0 && b.beta2 > 0.0 && b.beta3 > 0.0) {
                return bad("betas must be positive".into());
            }
        }
        if self.enumeration_cap == 0 {
            return bad("enumeration cap must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DOC: &str = r#"{
        "schema": 1,
        "mdp": {"layer_sizes": [1, 3, 3, 1], "num_actions": 2},
        "horizon": 256,
        "transitions": {"kind": "burst", "budget": 12},
        "losses": {"kind": "adversarial", "pattern": "phase_switching", "phase_len": 32},
        "learner": {"kind": "alg1"},
        "seeds": [1, 2]
    }"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ExperimentConfig::from_json(DOC).unwrap();
        assert_eq!(cfg.theta(), 12.0);
        assert_eq!(cfg.enumeration_cap, 1_000_000);
        assert_eq!(
            cfg.losses,
            LossSpec::Adversarial {
                pattern: LossPattern::PhaseSwitching { phase_len: 32 }
            }
        );
        let back = ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_bad_documents() {
        let cases = [
            DOC.replace("\"schema\": 1", "\"schema\": 2"),
            DOC.replace("256", "0"),
            DOC.replace("[1, 2]", "[]"),
            DOC.replace("\"budget\": 12", "\"budget\": 1e9"),
            DOC.replace("alg1", "alg9"),
            DOC.replace("\"alg1\"", "\"alg1\", \"eta\": 0.2"),
            DOC.replace("\"horizon\"", "\"horizn\""),
            DOC.replace("[1, 3, 3, 1]", "[2, 3, 1]"),
            "{".to_string(),
        ];
        for doc in cases {
            assert!(matches!(ExperimentConfig::from_json(&doc), Err(Error::Config(_))), "{doc}");
        }
    }

    #[test]
    fn learner_names_parse() {
        for k in [LearnerKind::Alg1, LearnerKind::Alg4, LearnerKind::Reduction] {
            assert_eq!(k.name().parse::<LearnerKind>().unwrap(), k);
        }
        assert!("nope".parse::<LearnerKind>().is_err());
    }
}
