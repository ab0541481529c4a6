//! Run configuration in a flat TOML table.
//!
//! ```toml
//! problem = "quadratic"        # quadratic | composite | erm | composite-erm
//! dim = 20
//! mu = 1.0
//! lip_grad = 100.0
//! sigma2 = 4.0
//! tail = "student_t(2.5)"
//! problem_seed = 7
//! methods = ["boost-alg", "naive-markov"]
//! oracle = "sgd"               # sgd | acc-sgd | prox-sgd | exact
//! epsilon_rel = 0.01           # or `epsilon`, or `gamma` for erm
//! p = 0.1
//! initial_gap = 1000.0
//! replications = 300
//! base_seed = 1
//! ```

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::{CompositeKind, Tail};
use crate::trace::Method;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemFamily {
    Quadratic,
    Composite,
    Erm,
    CompositeErm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleKind {
    Sgd,
    AccSgd,
    ProxSgd,
    Exact,
}

impl FromStr for OracleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OracleKind::Sgd),
            "acc-sgd" => Ok(OracleKind::AccSgd),
            "prox-sgd" => Ok(OracleKind::ProxSgd),
            "exact" => Ok(OracleKind::Exact),
            _ => Err(Error::Config(format!("unknown oracle `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemFamily,
    pub dim: usize,
    pub mu: f64,
    pub lip_grad: f64,
    /// Per-sample smoothness for the ERM families.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lip_grad_hat: Option<f64>,
    #[serde(default)]
    pub sigma2: f64,
    #[serde(default = "default_tail")]
    pub tail: String,
    /// `ball(r)`, `box(lo,hi)` or `l1(w)` for the composite family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_pop: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_min: Option<u64>,
    /// Huber parameter for the composite ERM family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    /// Ball radius for the composite ERM family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default)]
    pub problem_seed: u64,

    pub methods: Vec<Method>,
    #[serde(default = "default_oracle")]
    pub oracle: OracleKind,
    /// Absolute target gap.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Target gap as a fraction of the initial gap.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon_rel: Option<f64>,
    /// Target relative error `γ'` for the nonnegative ERM family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    pub p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_override: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_override: Option<usize>,
    /// Gap of the starting point for streaming problems; the origin otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_gap: Option<f64>,

    pub replications: u64,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
}

fn default_tail() -> String {
    Tail::default().to_string()
}

fn default_oracle() -> OracleKind {
    OracleKind::Sgd
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Returns a copy with `key` set to `value`, parsed as a TOML value
    /// (falling back to a string).
    pub fn with_override(&self, key: &str, value: &str) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(&self.to_toml()?).map_err(|e| Error::Config(e.to_string()))?;
        let parsed = format!("v = {value}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        table.insert(key.to_string(), parsed);
        let text = toml::to_string(&table).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_toml(&text)
    }

    pub fn tail(&self) -> Result<Tail> {
        self.tail.parse()
    }

    pub fn constraint(&self) -> Result<CompositeKind> {
        self.constraint
            .as_deref()
            .ok_or_else(|| Error::Config("composite problems need `constraint`".into()))?
            .parse()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.replications == 0 {
            return bad("replications must be at least 1");
        }
        if self.methods.is_empty() {
            return bad("at least one method is required");
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return bad("p must lie in (0,1)");
        }
        if self.jobs == Some(0) {
            return bad("jobs must be positive");
        }
        self.tail()?;
        let targets = [self.epsilon.is_some(), self.epsilon_rel.is_some(), self.gamma.is_some()];
        if targets.iter().filter(|t| **t).count() != 1 {
            return bad("set exactly one of epsilon, epsilon_rel, gamma");
        }
        use Method::*;
        let allowed: &[Method] = match self.problem {
            ProblemFamily::Quadratic => &[NaiveMarkov, BestOfM, RobustDistance, Proxboost, BoostAlg],
            ProblemFamily::Composite => &[NaiveMarkov, BoostAlgc],
            ProblemFamily::Erm => &[BoostErm],
            ProblemFamily::CompositeErm => &[BoostErmc],
        };
        if let Some(m) = self.methods.iter().find(|m| !allowed.contains(m)) {
            return Err(Error::Config(format!(
                "method `{m}` does not apply to this problem family"
            )));
        }
        let oracle_ok = match self.problem {
            ProblemFamily::Quadratic => matches!(self.oracle, OracleKind::Sgd | OracleKind::AccSgd | OracleKind::Exact),
            ProblemFamily::Composite => matches!(self.oracle, OracleKind::ProxSgd | OracleKind::Exact),
            _ => true,
        };
        if !oracle_ok {
            return bad("oracle does not apply to this problem family");
        }
        match self.problem {
            ProblemFamily::Composite => {
                self.constraint()?;
            }
            ProblemFamily::Erm | ProblemFamily::CompositeErm => {
                if self.lip_grad_hat.is_none() || self.n_pop.is_none() {
                    return bad("ERM problems need lip_grad_hat and n_pop");
                }
                if self.problem == ProblemFamily::Erm && self.gamma.is_none() {
                    return bad("the nonnegative ERM family takes a relative target `gamma`");
                }
                if self.problem == ProblemFamily::CompositeErm && self.gamma.is_some() {
                    return bad("composite ERM takes an absolute or initial-gap-relative target");
                }
            }
            ProblemFamily::Quadratic => {}
        }
        if self.gamma.is_some() && self.problem != ProblemFamily::Erm {
            return bad("gamma applies to the nonnegative ERM family only");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
problem = "quadratic"
dim = 5
mu = 1.0
lip_grad = 10.0
sigma2 = 1.0
methods = ["boost-alg", "naive-markov"]
epsilon_rel = 0.01
p = 0.1
initial_gap = 100.0
replications = 4
base_seed = 3
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = RunConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(cfg.tail().unwrap(), Tail::StudentT(2.5));
        assert_eq!(cfg.oracle, OracleKind::Sgd);
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn overrides_keep_types() {
        let cfg = RunConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(cfg.with_override("p", "0.05").unwrap().p, 0.05);
        assert_eq!(cfg.with_override("dim", "7").unwrap().dim, 7);
        assert_eq!(cfg.with_override("tail", "gaussian").unwrap().tail, "gaussian");
        assert!(cfg.with_override("replications", "0").is_err());
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(RunConfig::from_toml(&SAMPLE.replace("replications = 4", "replications = 0")).is_err());
        assert!(RunConfig::from_toml(&SAMPLE.replace("\"naive-markov\"", "\"boost-erm\"")).is_err());
        assert!(RunConfig::from_toml(&SAMPLE.replace("epsilon_rel", "epsilonrel")).is_err());
        assert!(RunConfig::from_toml(&format!("{SAMPLE}epsilon = 1.0\n")).is_err());
    }
}
