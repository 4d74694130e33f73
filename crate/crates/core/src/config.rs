//! TOML experiment configuration.
//!
//! A config file is a [`SweepPlan`] written as TOML. Unknown keys and type
//! mismatches are hard errors that name the offending key and line; omitted
//! keys take documented defaults, and [`echo`] prints the fully resolved plan
//! in a form that parses back to the same value.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::harness::SweepPlan;

/// Parses and validates a plan from TOML text; `path` only labels errors.
pub fn parse_plan(text: &str, path: &Path) -> Result<SweepPlan> {
    let plan: SweepPlan = toml::from_str(text).map_err(|e| Error::Config {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    plan.validate().map_err(|e| Error::Config {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if plan.master_seed > i64::MAX as u64 {
        return Err(Error::Config {
            path: path.to_path_buf(),
            message: format!("master_seed must be at most {}", i64::MAX),
        });
    }
    Ok(plan)
}

pub fn parse_config(path: &Path) -> Result<SweepPlan> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    parse_plan(&text, path)
}

/// The resolved plan as TOML, every default spelled out.
pub fn echo(plan: &SweepPlan) -> Result<String> {
    toml::to_string(plan).map_err(|e| Error::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{LambdaPolicy, SweepTask};
    use crate::network::Activation;
    use crate::synthesis::{NoiseModel, TargetKind};

    const MINIMAL: &str = "task = \"regression\"\nn_grid = [128, 256, 512, 1024]\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let plan = parse_plan(MINIMAL, Path::new("min.toml")).unwrap();
        assert_eq!(plan, SweepPlan::new(SweepTask::Regression, vec![128, 256, 512, 1024]));
        assert_eq!(plan.replicates, 10);
        assert_eq!(plan.activation, Activation::Tanh);
        assert_eq!(plan.lambda_policy, LambdaPolicy::TheoremFormula);
        assert_eq!(plan.noise_model(), Some(NoiseModel::Gaussian { sigma: 1.0 }));
    }

    #[test]
    fn typo_names_the_key() {
        let text = format!("{MINIMAL}lamda = 3.0\n");
        let err = parse_plan(&text, Path::new("typo.toml")).unwrap_err().to_string();
        assert!(err.contains("lamda"), "{err}");
        assert!(err.contains("typo.toml"), "{err}");
        let nested = format!("{MINIMAL}[sampler]\nburnin = 10\n");
        let err = parse_plan(&nested, Path::new("s.toml")).unwrap_err().to_string();
        assert!(err.contains("burnin"), "{err}");
        let target = format!("{MINIMAL}[target]\nid = \"sine_mix\"\nscael = 0.5\n");
        let err = parse_plan(&target, Path::new("t.toml")).unwrap_err().to_string();
        assert!(err.contains("scael"), "{err}");
    }

    #[test]
    fn type_and_constraint_errors() {
        let err = parse_plan("task = \"regression\"\nn_grid = \"big\"\n", Path::new("a.toml")).unwrap_err().to_string();
        assert!(err.contains("n_grid"), "{err}");
        let err = parse_plan("task = \"regression\"\nn_grid = [256, 128]\n", Path::new("b.toml")).unwrap_err().to_string();
        assert!(err.contains("strictly increasing"), "{err}");
        assert!(parse_plan("n_grid = [128]\n", Path::new("c.toml")).is_err());
        assert!(matches!(parse_config(Path::new("/nonexistent/plan.toml")), Err(Error::Config { .. })));
    }

    #[test]
    fn echo_round_trips() {
        let text = r#"
task = "cls_misclass"
schedule = "cls_entropy"
n_grid = [64, 128, 256, 512]
replicates = 3
lambda_policy = { manual = 2.5 }
activation = "leaky_relu(0.2)"
margin_c = 9.0
master_seed = 77

[target]
id = "linear"
slope = 2.0
offset = 0.5

[prior]
variance = 2.0
truncation = 5.0

[sampler]
kind = "rwmh"
n_chains = 2
"#;
        let plan = parse_plan(text, Path::new("full.toml")).unwrap();
        assert_eq!(plan.lambda_policy, LambdaPolicy::Manual(2.5));
        assert_eq!(plan.target, TargetKind::Linear { slope: 2.0, offset: 0.5 });
        assert_eq!(plan.sampler.n_chains, 2);
        assert_eq!(plan.sampler.burn_in, 2000);
        let echoed = echo(&plan).unwrap();
        assert_eq!(parse_plan(&echoed, Path::new("echo.toml")).unwrap(), plan);
        let min = parse_plan(MINIMAL, Path::new("m.toml")).unwrap();
        assert_eq!(parse_plan(&echo(&min).unwrap(), Path::new("e.toml")).unwrap(), min);
    }
}
