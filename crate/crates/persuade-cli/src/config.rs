//! The scenario schema. One document per run; `kind` picks the scenario and
//! unknown keys are rejected.
//!
//! ```json
//! {
//!   "kind": "binary",
//!   "seed": 0,
//!   "out": "strategy.json",
//!   "spec": {"mu0": 0.4, "v_ell": 0.0, "v_r": 0.546,
//!            "h_ell": {"family": "log", "scale": 0.5},
//!            "h_r": {"family": "log", "scale": 1.0}},
//!   "verify_lp": 0.01
//! }
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use persuade::binary::BinaryPersuasionSpec;
use persuade::censorship::PriorSpec;
use persuade::consistency::{CoaseSpec, FiniteBeliefProcess, GoalpostsSpec};
use persuade::model::Primitives;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Read with [`parse_config`]; serializes back to the same flat layout.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioConfig {
    /// Seed for every random draw in the run.
    pub seed: u64,
    /// Verifier tolerance; each scenario has its own default.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    /// Primary artifact. Sidecar files are written next to it.
    pub out: PathBuf,
    #[serde(flatten)]
    pub scenario: Scenario,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scenario {
    Grid(GridScenario),
    Binary(BinaryScenario),
    Censorship(CensorshipScenario),
    Goalposts(GoalpostsScenario),
    Consistency(ConsistencyScenario),
    Coase(CoaseScenario),
}

impl Scenario {
    pub fn kind(&self) -> &'static str {
        match self {
            Scenario::Grid(_) => "grid",
            Scenario::Binary(_) => "binary",
            Scenario::Censorship(_) => "censorship",
            Scenario::Goalposts(_) => "goalposts",
            Scenario::Consistency(_) => "consistency",
            Scenario::Coase(_) => "coase",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    /// The exact linear program.
    #[default]
    Lp,
    /// Min-max iterations with primal recovery.
    Saddle,
}

fn default_belief_grid() -> usize {
    101
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridScenario {
    /// Inline problem; exclusive with `problem_file`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<Primitives>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem_file: Option<PathBuf>,
    /// Cap on the number of lattice beliefs.
    #[serde(default = "default_belief_grid")]
    pub belief_grid: usize,
    #[serde(default)]
    pub solver: Solver,
    /// Convergence tolerance of the saddle solver.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver_tol: Option<f64>,
    /// Replayed sample paths written to a CSV; 0 writes none.
    #[serde(default)]
    pub sample_paths: usize,
    /// Check a previously written solution instead of solving.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify_solution: Option<PathBuf>,
}

fn default_samples() -> usize {
    201
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinaryScenario {
    pub spec: BinaryPersuasionSpec,
    /// Time step of the oracle cross-check; omitted means no check.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify_lp: Option<f64>,
    #[serde(default = "default_belief_grid")]
    pub belief_grid: usize,
    /// Rows of the path table.
    #[serde(default = "default_samples")]
    pub samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleGrid {
    pub n_theta: usize,
    pub n_t: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CensorshipScenario {
    pub prior: PriorSpec,
    pub r: f64,
    pub theta_bar: f64,
    /// Discretized oracle cross-check; omitted means no check.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleGrid>,
}

fn default_dt() -> f64 {
    0.025
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalpostsScenario {
    #[serde(default = "GoalpostsSpec::reference")]
    pub params: GoalpostsSpec,
    #[serde(default = "default_dt")]
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsistencyScenario {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<Primitives>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub process: Option<FiniteBeliefProcess>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub process_file: Option<PathBuf>,
    #[serde(default = "default_belief_grid")]
    pub belief_grid: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoaseScenario {
    /// Defaults to the canonical two-period game.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<CoaseSpec>,
}

/// Parses a document, reporting the path of the first bad field.
pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| schema_error(e.path(), e.inner()))
}

/// Parses a config. The shared keys and `kind` are read first; the rest
/// goes to the scenario's own schema so errors keep their field path.
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let mut doc: serde_json::Map<String, Value> = parse_json(text)?;
    let kind = match doc.remove("kind") {
        Some(Value::String(k)) => k,
        Some(_) => bail!("schema error at kind: must be a string"),
        None => bail!("schema error at kind: missing"),
    };
    let seed = match doc.remove("seed") {
        None => 0,
        Some(v) => v.as_u64().ok_or_else(|| anyhow!("schema error at seed: must be a nonnegative integer"))?,
    };
    let tol = match doc.remove("tol") {
        None | Some(Value::Null) => None,
        Some(v) => Some(v.as_f64().ok_or_else(|| anyhow!("schema error at tol: must be a number"))?),
    };
    let out = match doc.remove("out") {
        Some(Value::String(p)) => PathBuf::from(p),
        Some(_) => bail!("schema error at out: must be a path"),
        None => bail!("schema error at out: missing"),
    };
    let rest = Value::Object(doc);
    let scenario = match kind.as_str() {
        "grid" => Scenario::Grid(from_value(rest)?),
        "binary" => Scenario::Binary(from_value(rest)?),
        "censorship" => Scenario::Censorship(from_value(rest)?),
        "goalposts" => Scenario::Goalposts(from_value(rest)?),
        "consistency" => Scenario::Consistency(from_value(rest)?),
        "coase" => Scenario::Coase(from_value(rest)?),
        other => bail!(
            "schema error at kind: unknown kind {other:?}; expected grid, binary, censorship, goalposts, consistency or coase"
        ),
    };
    let cfg = ScenarioConfig { seed, tol, out, scenario };
    cfg.check_shape()?;
    Ok(cfg)
}

fn from_value<T: DeserializeOwned>(v: Value) -> Result<T> {
    serde_path_to_error::deserialize(v).map_err(|e| schema_error(e.path(), e.inner()))
}

fn schema_error(path: &serde_path_to_error::Path, inner: &dyn std::fmt::Display) -> anyhow::Error {
    let path = path.to_string();
    if path == "." {
        anyhow!("schema error: {inner}")
    } else {
        anyhow!("schema error at {path}: {inner}")
    }
}

/// Reads a config file; relative paths inside it resolve against its directory.
pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg = parse_config(&text).with_context(|| format!("in {}", path.display()))?;
    if let Some(dir) = path.parent() {
        cfg.rebase(dir);
    }
    Ok(cfg)
}

fn one_of<A, B>(a: &Option<A>, b: &Option<B>, name: &str) -> Result<()> {
    match (a.is_some(), b.is_some()) {
        (true, false) | (false, true) => Ok(()),
        (true, true) => bail!("schema error at {name}: give either {name} or {name}_file, not both"),
        (false, false) => bail!("schema error at {name}: missing {name} (or {name}_file)"),
    }
}

impl ScenarioConfig {
    /// Checks the constraints serde cannot express.
    pub fn check_shape(&self) -> Result<()> {
        if let Some(t) = self.tol {
            if !(t > 0.0 && t.is_finite()) {
                bail!("schema error at tol: must be positive");
            }
        }
        match &self.scenario {
            Scenario::Grid(g) => one_of(&g.problem, &g.problem_file, "problem"),
            Scenario::Consistency(c) => {
                one_of(&c.problem, &c.problem_file, "problem")?;
                one_of(&c.process, &c.process_file, "process")
            }
            _ => Ok(()),
        }
    }

    fn rebase(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        fix(&mut self.out);
        match &mut self.scenario {
            Scenario::Grid(g) => {
                g.problem_file.as_mut().map(fix);
                g.verify_solution.as_mut().map(fix);
            }
            Scenario::Consistency(c) => {
                c.problem_file.as_mut().map(fix);
                c.process_file.as_mut().map(fix);
            }
            _ => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let doc = r#"{"kind": "coase", "out": "x.json", "bogus": 1}"#;
        let err = parse_config(doc).unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn defaults_fill_in() {
        let cfg = parse_config(r#"{"kind": "goalposts", "out": "g.json"}"#).unwrap();
        assert_eq!(cfg.seed, 0);
        match cfg.scenario {
            Scenario::Goalposts(g) => {
                assert_eq!(g.params, GoalpostsSpec::reference());
                assert_eq!(g.dt, 0.025);
            }
            other => panic!("wrong kind {other:?}"),
        }
    }

    #[test]
    fn problem_sources_are_exclusive() {
        let doc = r#"{"kind": "grid", "out": "s.json"}"#;
        assert!(parse_config(doc).unwrap_err().to_string().contains("problem"));
    }

    #[test]
    fn nested_errors_carry_a_path() {
        let doc = r#"{"kind": "censorship", "out": "p.csv", "prior": {"family": "beta", "a": 1}, "r": 1, "theta_bar": 0.9}"#;
        let err = parse_config(doc).unwrap_err().to_string();
        assert!(err.contains("prior"), "{err}");
    }
}
