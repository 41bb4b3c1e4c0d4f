//! JSON scenario files: tree, barriers, driver, market and game settings.

use serde::{Deserialize, Serialize};

use crate::bsde::{driver_library, Driver};
use crate::dynkin::StoppingTime;
use crate::error::{Error, Result};
use crate::pricing::{build_market, payoff_builders, MarketModel, MarketParams};
use crate::process::{AdmissiblePair, LadlagProcess};
use crate::tree::{build_tree, ScenarioTree, Scheme, TimeGrid};

/// Drivers whose parameters default to the scenario market.
const MARKET_DRIVERS: [&str; 3] = ["perfect", "two_rates", "repo"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub tree: TreeSpec,
    pub barriers: BarrierSpec,
    pub driver: DriverSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub market: Option<MarketParams>,
    #[serde(default)]
    pub game: GameSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outputs: Option<OutputSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeSpec {
    pub grid: GridSpec,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
}

impl TreeSpec {
    pub fn build(&self) -> Result<ScenarioTree> {
        let grid = match &self.grid {
            GridSpec::Times(t) => TimeGrid::new(t.clone())?,
            GridSpec::Uniform { horizon, steps } => TimeGrid::uniform(*horizon, *steps)?,
        };
        build_tree(grid, self.lambda, self.scheme)
    }
}

fn default_scheme() -> Scheme {
    Scheme::Three
}

/// Explicit times, or a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Times(Vec<f64>),
    Uniform { horizon: f64, steps: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BarrierSpec {
    Tables {
        xi: SlotTable,
        zeta: SlotTable,
    },
    Builder {
        builder: String,
        #[serde(default)]
        params: serde_json::Value,
    },
}

/// Per-node values at the instants and, optionally, on the following intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlotTable {
    pub at: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right: Option<Vec<f64>>,
}

impl SlotTable {
    pub fn from_process(p: &LadlagProcess) -> Self {
        Self {
            at: p.at.clone(),
            right: Some(p.right.clone()),
        }
    }

    fn process(&self, tree: &ScenarioTree) -> Result<LadlagProcess> {
        let right = self.right.clone().unwrap_or_else(|| self.at.clone());
        LadlagProcess::new(tree, self.at.clone(), right)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriverSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub params: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameSpec {
    #[serde(default = "default_theta")]
    pub theta: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub systems: bool,
}

fn default_theta() -> String {
    "root".into()
}

impl Default for GameSpec {
    fn default() -> Self {
        Self {
            theta: default_theta(),
            epsilon: None,
            systems: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: String,
}

/// A scenario with every object built.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub tree: ScenarioTree,
    pub pair: AdmissiblePair,
    pub driver: Driver,
    pub market: Option<MarketModel>,
    pub theta: StoppingTime,
    pub epsilon: Option<f64>,
    pub systems: bool,
}

impl ScenarioFile {
    /// Parses JSON; syntax and schema errors read `origin:line:column: message`.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            let msg = e.to_string();
            // serde_json appends " at line L column C"; the prefix carries it instead.
            let msg = msg.split(" at line ").next().unwrap_or(&msg).to_string();
            Error::Scenario(format!("{origin}:{}:{}: {msg}", e.line(), e.column()))
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn build_tree(&self) -> Result<ScenarioTree> {
        self.tree.build()
    }

    pub fn resolve(&self) -> Result<Resolved> {
        let tree = self.build_tree()?;
        let market_params = self.market.clone().unwrap_or_default();
        let needs_market = self.market.is_some()
            || matches!(self.barriers, BarrierSpec::Builder { .. })
            || MARKET_DRIVERS.contains(&self.driver.name.as_str());
        let market = if needs_market {
            Some(build_market(&market_params, &tree)?)
        } else {
            None
        };
        let pair = match &self.barriers {
            BarrierSpec::Tables { xi, zeta } => {
                let xi = xi.process(&tree).map_err(|e| ctx("barriers.xi", e))?;
                let zeta = zeta.process(&tree).map_err(|e| ctx("barriers.zeta", e))?;
                AdmissiblePair::new(&tree, xi, zeta)?
            }
            BarrierSpec::Builder { builder, params } => payoff_builders(
                builder,
                params,
                market.as_ref().expect("builders build the market"),
                &tree,
            )?,
        };
        let params = if self.driver.params.is_null() && MARKET_DRIVERS.contains(&self.driver.name.as_str()) {
            serde_json::to_value(&market_params).expect("market serializes")
        } else {
            self.driver.params.clone()
        };
        let driver = driver_library(&self.driver.name, &params, &tree)?;
        let theta = parse_theta(&self.game.theta, &tree)?;
        Ok(Resolved {
            tree,
            pair,
            driver,
            market,
            theta,
            epsilon: self.game.epsilon,
            systems: self.game.systems,
        })
    }
}

fn ctx(field: &str, e: Error) -> Error {
    Error::Scenario(format!("{field}: {e}"))
}

/// `root`, `terminal`, `level:i` or `nodes:a,b,c`.
pub fn parse_theta(spec: &str, tree: &ScenarioTree) -> Result<StoppingTime> {
    let bad = || Error::Scenario(format!("invalid theta `{spec}`"));
    match spec.trim() {
        "root" => Ok(StoppingTime::at_root(tree)),
        "terminal" => Ok(StoppingTime::terminal(tree)),
        s => {
            if let Some(level) = s.strip_prefix("level:") {
                let level: usize = level.trim().parse().map_err(|_| bad())?;
                if level > tree.depth() {
                    return Err(Error::Scenario(format!(
                        "theta level {level} is beyond the horizon (depth {})",
                        tree.depth()
                    )));
                }
                Ok(StoppingTime::at_level(tree, level))
            } else if let Some(list) = s.strip_prefix("nodes:") {
                let nodes = list
                    .split(',')
                    .map(|v| v.trim().parse::<usize>().map_err(|_| bad()))
                    .collect::<Result<Vec<_>>>()?;
                StoppingTime::at_nodes(tree, &nodes)
            } else {
                Err(bad())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GAP: &str = r#"{
  "tree": {"grid": [0.0, 1.0], "lambda": 0.0, "scheme": "three"},
  "barriers": {"xi": {"at": [0, 0, 0], "right": [1, 0, 0]}, "zeta": {"at": [2, 0, 0]}},
  "driver": {"name": "zero"}
}"#;

    #[test]
    fn gap_fixture_resolves() {
        let s = ScenarioFile::parse(GAP, "gap.json").unwrap();
        let r = s.resolve().unwrap();
        assert_eq!(r.tree.len(), 3);
        assert_eq!(r.pair.xi.right[0], 1.0);
        assert_eq!(r.pair.zeta.right[0], 2.0);
        let back = ScenarioFile::parse(&s.to_json(), "x").unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn errors_are_line_anchored() {
        let text = GAP.replace("\"lambda\"", "\"lambada\"");
        let e = ScenarioFile::parse(&text, "f.json").unwrap_err().to_string();
        assert!(e.contains("f.json:2:"), "{e}");
    }

    #[test]
    fn theta_specs() {
        let s = ScenarioFile::parse(GAP, "gap.json").unwrap();
        let t = s.build_tree().unwrap();
        assert_eq!(parse_theta("root", &t).unwrap().effective_nodes(&t), vec![0]);
        assert_eq!(parse_theta("level:1", &t).unwrap().effective_nodes(&t), vec![1, 2]);
        assert_eq!(parse_theta("nodes:2", &t).unwrap().effective_nodes(&t), vec![1, 2]);
        assert!(parse_theta("level:5", &t).is_err());
        assert!(parse_theta("soon", &t).is_err());
    }
}
