//! Run configuration: a JSON document plus `--set key=value` overrides.
//!
//! A run names a target and either pins the three grid sizes directly or
//! states an accuracy budget and lets the solver pick them. The two ways
//! in are mutually exclusive, so a config that supplies both (or neither)
//! is rejected before anything is built.

use serde::Deserialize;
use std::path::Path;

use rsx::builder::{solve_hyperparams, BudgetMode, HolderBudget};
use rsx::grid::{Hyperparams, PNorm};
use rsx::target::{parse_target, TargetFunction};
use rsx::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    OffRegion,
    Lp,
    Linf,
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSpec {
    pub mu: f64,
    pub alpha: f64,
    pub epsilon: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub target: String,
    pub d: usize,
    pub mode: Mode,
    #[serde(default)]
    pub n: Option<u64>,
    #[serde(default)]
    pub m: Option<u32>,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub p: Option<f64>,
    #[serde(default)]
    pub budget: Option<BudgetSpec>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub samples: Option<u64>,
    #[serde(default)]
    pub grid: Option<usize>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let explicit = [self.n.is_some(), self.m.is_some(), self.delta.is_some()];
        if self.budget.is_some() {
            if explicit.iter().any(|&b| b) {
                return Err(Error::Config(
                    "a budget and explicit sizes (n, m, delta) are mutually exclusive".into(),
                ));
            }
        } else if !explicit.iter().all(|&b| b) {
            return Err(Error::Config(
                "supply either a budget or all three of n, m, delta".into(),
            ));
        }
        match self.mode {
            Mode::Lp => {
                if self.p.is_none() {
                    return Err(Error::Config("lp mode needs a norm order p".into()));
                }
            }
            Mode::OffRegion | Mode::Linf => {
                if self.p.is_some() {
                    return Err(Error::Config(
                        "a norm order p is only meaningful in lp mode".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn target_fn(&self) -> Result<TargetFunction> {
        parse_target(&self.target, self.d)
    }

    /// Resolve the grid sizes, either from the explicit fields or through
    /// the budget solver. Returns the parameters together with any solver
    /// notes worth surfacing.
    pub fn resolve_params(&self) -> Result<(Hyperparams, Vec<String>)> {
        if let Some(b) = self.budget {
            let mode = match self.mode {
                Mode::OffRegion => BudgetMode::OffRegion,
                Mode::Lp => BudgetMode::Lp,
                Mode::Linf => BudgetMode::Linf,
            };
            let budget = HolderBudget::new(b.mu, b.alpha, b.epsilon, mode)?;
            let p = self.p.map(PNorm::Finite);
            let solved = solve_hyperparams(&budget, self.d, p, None)?;
            Ok((solved.params, solved.notes))
        } else {
            let p = match self.mode {
                Mode::Lp => PNorm::Finite(self.p.expect("validated")),
                Mode::OffRegion | Mode::Linf => PNorm::Infinity,
            };
            let params =
                Hyperparams::new(self.d, self.n.unwrap(), self.m.unwrap(), self.delta.unwrap(), p)?;
            Ok((params, Vec::new()))
        }
    }
}

fn set_path(root: &mut serde_json::Value, dotted: &str, val: serde_json::Value) -> Result<()> {
    let parts: Vec<&str> = dotted.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("--set key {dotted:?} is malformed")));
    }
    let (last, prefix) = parts.split_last().expect("split always yields a part");
    let mut cur = root;
    for part in prefix {
        let map = cur.as_object_mut().ok_or_else(|| {
            Error::Config(format!("--set key {dotted:?} descends into a non-object field"))
        })?;
        cur = map
            .entry(part.to_string())
            .or_insert_with(|| serde_json::Value::Object(serde_json::Map::new()));
    }
    let map = cur.as_object_mut().ok_or_else(|| {
        Error::Config(format!("--set key {dotted:?} descends into a non-object field"))
    })?;
    map.insert(last.to_string(), val);
    Ok(())
}

/// Read a config file and fold in `--set key=value` overrides. Values are
/// parsed as JSON where possible (numbers, booleans, null, quoted strings)
/// and taken as bare strings otherwise, so `--set target=sq` and
/// `--set budget.epsilon=0.25` both do the obvious thing.
pub fn load_config(path: &Path, sets: &[String]) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("config {} is not valid: {e}", path.display())))?;
    if !value.is_object() {
        return Err(Error::Config(format!(
            "config {} must be a JSON object",
            path.display()
        )));
    }
    for s in sets {
        let (key, raw) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set needs key=value, got {s:?}")))?;
        let val = serde_json::from_str(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        set_path(&mut value, key, val)?;
    }
    let config: RunConfig = serde_json::from_value(value)
        .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?;
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_config(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn explicit_sizes_resolve() {
        let f = write_config(
            r#"{"target": "sq", "d": 1, "mode": "off-region", "n": 4, "m": 3, "delta": 0.05}"#,
        );
        let cfg = load_config(f.path(), &[]).unwrap();
        let (params, notes) = cfg.resolve_params().unwrap();
        assert_eq!((params.n(), params.m()), (4, 3));
        assert!(params.p().is_infinity());
        assert!(notes.is_empty());
    }

    #[test]
    fn budget_and_sizes_conflict() {
        let f = write_config(
            r#"{"target": "x", "d": 1, "mode": "lp", "p": 2, "n": 4, "m": 3, "delta": 0.05,
                "budget": {"mu": 1, "alpha": 1, "epsilon": 0.5}}"#,
        );
        assert!(matches!(load_config(f.path(), &[]), Err(Error::Config(_))));
    }

    #[test]
    fn lp_mode_needs_p() {
        let f = write_config(
            r#"{"target": "x", "d": 1, "mode": "lp", "budget": {"mu": 1, "alpha": 1, "epsilon": 0.5}}"#,
        );
        assert!(matches!(load_config(f.path(), &[]), Err(Error::Config(_))));
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let f = write_config(
            r#"{"target": "x", "d": 1, "mode": "lp", "p": 1,
                "budget": {"mu": 1, "alpha": 1, "epsilon": 0.5}}"#,
        );
        let cfg = load_config(
            f.path(),
            &["budget.epsilon=0.25".into(), "seed=7".into(), "target=sq".into()],
        )
        .unwrap();
        assert_eq!(cfg.budget.unwrap().epsilon, 0.25);
        assert_eq!(cfg.seed, Some(7));
        assert_eq!(cfg.target, "sq");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let f = write_config(
            r#"{"target": "x", "d": 1, "mode": "linf", "n": 4, "m": 3, "delta": 0.05, "bogus": 1}"#,
        );
        assert!(matches!(load_config(f.path(), &[]), Err(Error::Config(_))));
    }

    #[test]
    fn budget_solver_is_wired_through() {
        let f = write_config(
            r#"{"target": "x", "d": 1, "mode": "lp", "p": 1,
                "budget": {"mu": 1, "alpha": 1, "epsilon": 0.5}}"#,
        );
        let cfg = load_config(f.path(), &[]).unwrap();
        let (params, _) = cfg.resolve_params().unwrap();
        assert_eq!((params.n(), params.m()), (6, 3));
    }
}
