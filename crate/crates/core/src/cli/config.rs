//! Flat `key=value` run configuration.
//!
//! Values are resolved in three layers: built-in defaults, then a config
//! file, then command-line overrides. The resolved map is what gets embedded
//! in every artifact, so a run can be repeated from its outputs alone.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::infer::{FitConfig, FitMode, LocalSettings, ScalarSolver};
use crate::mathfn::GammaParams;
use crate::model::{ModelConfig, Variant};
use crate::optim::RobbinsMonroSchedule;

/// Keys that never enter artifacts: they change how a run executes, not
/// what it computes.
pub const EXECUTION_KEYS: &[&str] = &["threads"];

/// Every accepted key with its default value.
pub fn default_entries() -> Vec<(&'static str, String)> {
    let m = ModelConfig::default();
    let f = FitConfig::default();
    vec![
        ("truncation", m.truncation.to_string()),
        ("dim", m.dim.to_string()),
        ("sigma_l2", m.sigma_l2.to_string()),
        ("sigma_m2", m.sigma_m2.to_string()),
        ("atom_shape", m.atom_prior.shape.to_string()),
        ("atom_rate", m.atom_prior.rate.to_string()),
        ("alpha_shape", m.alpha_prior.shape.to_string()),
        ("alpha_rate", m.alpha_prior.rate.to_string()),
        ("c_shape", m.c_prior.shape.to_string()),
        ("c_rate", m.c_prior.rate.to_string()),
        ("variant", m.variant.to_string()),
        ("allow_divergent_prior", m.allow_divergent_prior.to_string()),
        ("mode", f.mode.name().to_string()),
        ("max_iters", f.max_iters.to_string()),
        ("min_iters", f.min_iters.to_string()),
        ("eval_every", f.eval_every.to_string()),
        ("patience", f.patience.to_string()),
        ("local_tol", f.local.tol.to_string()),
        ("local_max_iters", f.local.max_iters.to_string()),
        ("rate_offset", f.schedule.offset.to_string()),
        ("rate_exponent", f.schedule.exponent.to_string()),
        ("tau", f.tau.to_string()),
        ("step_scale", f.step_scale.to_string()),
        ("batch_size", f.batch_size.to_string()),
        ("with_replacement", f.with_replacement.to_string()),
        ("track_elbo", f.track_elbo.to_string()),
        ("scalar_solver", f.scalar_solver.name().to_string()),
        ("scalar_newton_iters", f.scalar_newton_iters.to_string()),
        ("checkpoint_every", "0".to_string()),
        ("seed", "0".to_string()),
        ("validation_rows", "0".to_string()),
        ("heldout_rows", "1000".to_string()),
        ("obs_fraction", "0.1".to_string()),
        ("threads", "0".to_string()),
    ]
}

/// Parses `key=value` lines. Blank lines and `#` comments are skipped;
/// keys and values are trimmed. Later duplicates are an error.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(line_no, "expected `key=value`"))?;
        let key = key.trim();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(Error::parse(line_no, format!("bad key `{key}`")));
        }
        if out.insert(key.to_string(), value.trim().to_string()).is_some() {
            return Err(Error::parse(line_no, format!("duplicate key `{key}`")));
        }
    }
    Ok(out)
}

/// The fully resolved configuration of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: default_entries()
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
        }
    }
}

impl RunConfig {
    /// Defaults, overlaid with `file` (if any), overlaid with `overrides`.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            for (k, v) in parse_config(&text)? {
                cfg.set(&k, &v)?;
            }
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.model()?;
        cfg.fit()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(Error::invalid(format!("unknown config key `{key}`"))),
        }
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .values
            .get(key)
            .ok_or_else(|| Error::invalid(format!("unknown config key `{key}`")))?;
        raw.parse()
            .map_err(|_| Error::invalid(format!("config key `{key}`: cannot parse `{raw}`")))
    }

    /// The resolved values without execution-only keys.
    pub fn provenance(&self) -> BTreeMap<String, String> {
        self.values
            .iter()
            .filter(|(k, _)| !EXECUTION_KEYS.contains(&k.as_str()))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    /// `key=value` text that [`parse_config`] reads back to the same map.
    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn model(&self) -> Result<ModelConfig> {
        let variant: String = self.get("variant")?;
        let cfg = ModelConfig {
            truncation: self.get("truncation")?,
            dim: self.get("dim")?,
            sigma_l2: self.get("sigma_l2")?,
            sigma_m2: self.get("sigma_m2")?,
            atom_prior: GammaParams {
                shape: self.get("atom_shape")?,
                rate: self.get("atom_rate")?,
            },
            alpha_prior: GammaParams {
                shape: self.get("alpha_shape")?,
                rate: self.get("alpha_rate")?,
            },
            c_prior: GammaParams {
                shape: self.get("c_shape")?,
                rate: self.get("c_rate")?,
            },
            variant: Variant::parse(&variant)?,
            allow_divergent_prior: self.get("allow_divergent_prior")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn fit(&self) -> Result<FitConfig> {
        let mode: String = self.get("mode")?;
        let solver: String = self.get("scalar_solver")?;
        let cfg = FitConfig {
            mode: FitMode::parse(&mode)?,
            max_iters: self.get("max_iters")?,
            min_iters: self.get("min_iters")?,
            eval_every: self.get("eval_every")?,
            patience: self.get("patience")?,
            local: LocalSettings {
                tol: self.get("local_tol")?,
                max_iters: self.get("local_max_iters")?,
            },
            schedule: RobbinsMonroSchedule::new(self.get("rate_offset")?, self.get("rate_exponent")?)?,
            tau: self.get("tau")?,
            step_scale: self.get("step_scale")?,
            batch_size: self.get("batch_size")?,
            with_replacement: self.get("with_replacement")?,
            track_elbo: self.get("track_elbo")?,
            scalar_solver: ScalarSolver::parse(&solver)?,
            scalar_newton_iters: self.get("scalar_newton_iters")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
