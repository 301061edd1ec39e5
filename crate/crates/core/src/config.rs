//! Run configuration as `key=value` lines.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::pipeline::{PipelineParams, TrackingMode};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Window width; 15-35 ms works well.
    pub delta_t_ms: f64,
    pub pipeline: PipelineParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            delta_t_ms: 30.0,
            pipeline: PipelineParams::default(),
        }
    }
}

/// Every accepted key, in the order [`RunConfig::to_text`] writes them.
pub const KEYS: &[&str] = &[
    "delta_t_ms",
    "seed",
    "tracking",
    "tracker.max_corners",
    "tracker.quality_level",
    "tracker.min_distance",
    "tracker.lk_levels",
    "tracker.lk_window",
    "tracker.blur_sigma",
    "tracker.k_neighbors",
    "tracker.smoothing_eps",
    "level1.zeta",
    "level1.mu",
    "level1.napsac_radius",
    "level1.gc_lambda",
    "level1.pearl_lambda",
    "level1.pearl_beta",
    "level1.outlier_cost",
    "level1.k_max",
    "level1.max_rejections",
    "level2.lambda_potts",
    "level2.beta_mdl",
    "level2.outlier_cost",
    "level2.k_neighbors",
    "level2.alpha_scale",
    "level2.max_bcd_rounds",
    "level2.cm_eval_budget",
    "level2.iwe_eps",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: invalid value '{value}'")))
}

impl RunConfig {
    pub fn delta_t_us(&self) -> u64 {
        (self.delta_t_ms * 1000.0).round() as u64
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let p = &mut self.pipeline;
        match key {
            "delta_t_ms" => self.delta_t_ms = parse(key, value)?,
            "seed" => p.seed = parse(key, value)?,
            "tracking" => {
                p.tracking = match value {
                    "halves" => TrackingMode::Halves,
                    "consecutive" => TrackingMode::Consecutive,
                    _ => return Err(Error::Config(format!("tracking: expected halves or consecutive, got '{value}'"))),
                }
            }
            "tracker.max_corners" => p.tracker.max_corners = parse(key, value)?,
            "tracker.quality_level" => p.tracker.quality_level = parse(key, value)?,
            "tracker.min_distance" => p.tracker.min_distance = parse(key, value)?,
            "tracker.lk_levels" => p.tracker.lk_levels = parse(key, value)?,
            "tracker.lk_window" => p.tracker.lk_window = parse(key, value)?,
            "tracker.blur_sigma" => p.tracker.blur_sigma = parse(key, value)?,
            "tracker.k_neighbors" => p.tracker.k_neighbors = parse(key, value)?,
            "tracker.smoothing_eps" => p.tracker.smoothing_eps = parse(key, value)?,
            "level1.zeta" => p.level1.zeta = parse(key, value)?,
            "level1.mu" => p.level1.mu = parse(key, value)?,
            "level1.napsac_radius" => p.level1.napsac_radius = parse(key, value)?,
            "level1.gc_lambda" => p.level1.gc_lambda = parse(key, value)?,
            "level1.pearl_lambda" => p.level1.pearl_lambda = parse(key, value)?,
            "level1.pearl_beta" => p.level1.pearl_beta = parse(key, value)?,
            "level1.outlier_cost" => p.level1.outlier_cost = parse(key, value)?,
            "level1.k_max" => p.level1.k_max = parse(key, value)?,
            "level1.max_rejections" => p.level1.max_rejections = parse(key, value)?,
            "level2.lambda_potts" => p.level2.lambda_potts = parse(key, value)?,
            "level2.beta_mdl" => p.level2.beta_mdl = parse(key, value)?,
            "level2.outlier_cost" => p.level2.outlier_cost = parse(key, value)?,
            "level2.k_neighbors" => p.level2.k_neighbors = parse(key, value)?,
            "level2.alpha_scale" => {
                p.level2.alpha_scale = if value == "auto" {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            "level2.max_bcd_rounds" => p.level2.max_bcd_rounds = parse(key, value)?,
            "level2.cm_eval_budget" => p.level2.cm_eval_budget = parse(key, value)?,
            "level2.iwe_eps" => p.level2.iwe_eps = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines on top of the current values. Blank lines and
    /// lines starting with `#` are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
            self.set(k.trim(), v).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", n + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    /// Applies a `--key=value` command-line override.
    pub fn apply_flag(&mut self, flag: &str) -> Result<()> {
        let body = flag
            .strip_prefix("--")
            .ok_or_else(|| Error::Config(format!("unexpected argument '{flag}'")))?;
        let (k, v) = body
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{flag}' must be --key=value")))?;
        self.set(k, v)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta_t_ms > 0.0) || self.delta_t_us() == 0 {
            return Err(Error::Config("delta_t_ms must be positive".into()));
        }
        self.pipeline.level1.validate()?;
        self.pipeline.level2.validate()
    }

    fn get(&self, key: &str) -> String {
        let p = &self.pipeline;
        match key {
            "delta_t_ms" => self.delta_t_ms.to_string(),
            "seed" => p.seed.to_string(),
            "tracking" => match p.tracking {
                TrackingMode::Halves => "halves".into(),
                TrackingMode::Consecutive => "consecutive".into(),
            },
            "tracker.max_corners" => p.tracker.max_corners.to_string(),
            "tracker.quality_level" => p.tracker.quality_level.to_string(),
            "tracker.min_distance" => p.tracker.min_distance.to_string(),
            "tracker.lk_levels" => p.tracker.lk_levels.to_string(),
            "tracker.lk_window" => p.tracker.lk_window.to_string(),
            "tracker.blur_sigma" => p.tracker.blur_sigma.to_string(),
            "tracker.k_neighbors" => p.tracker.k_neighbors.to_string(),
            "tracker.smoothing_eps" => p.tracker.smoothing_eps.to_string(),
            "level1.zeta" => p.level1.zeta.to_string(),
            "level1.mu" => p.level1.mu.to_string(),
            "level1.napsac_radius" => p.level1.napsac_radius.to_string(),
            "level1.gc_lambda" => p.level1.gc_lambda.to_string(),
            "level1.pearl_lambda" => p.level1.pearl_lambda.to_string(),
            "level1.pearl_beta" => p.level1.pearl_beta.to_string(),
            "level1.outlier_cost" => p.level1.outlier_cost.to_string(),
            "level1.k_max" => p.level1.k_max.to_string(),
            "level1.max_rejections" => p.level1.max_rejections.to_string(),
            "level2.lambda_potts" => p.level2.lambda_potts.to_string(),
            "level2.beta_mdl" => p.level2.beta_mdl.to_string(),
            "level2.outlier_cost" => p.level2.outlier_cost.to_string(),
            "level2.k_neighbors" => p.level2.k_neighbors.to_string(),
            "level2.alpha_scale" => p.level2.alpha_scale.map_or("auto".into(), |a| a.to_string()),
            "level2.max_bcd_rounds" => p.level2.max_bcd_rounds.to_string(),
            "level2.cm_eval_budget" => p.level2.cm_eval_budget.to_string(),
            "level2.iwe_eps" => p.level2.iwe_eps.to_string(),
            _ => unreachable!("{key} missing from KEYS"),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in KEYS {
            let _ = writeln!(s, "{k}={}", self.get(k));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.set("level1.zeta", "2.25").unwrap();
        c.set("level2.alpha_scale", "400").unwrap();
        c.set("tracking", "halves").unwrap();
        let mut d = RunConfig::default();
        d.apply_text(&c.to_text()).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn unknown_key_is_an_error() {
        let mut c = RunConfig::default();
        let e = c.apply_text("delta_t_ms=20\nlevel1.zetta=2\n").unwrap_err();
        assert_eq!(e, Error::Config("line 2: unknown key 'level1.zetta'".into()));
    }

    #[test]
    fn flags_override() {
        let mut c = RunConfig::default();
        c.apply_text("delta_t_ms=20").unwrap();
        c.apply_flag("--delta_t_ms=25").unwrap();
        assert_eq!(c.delta_t_us(), 25_000);
        assert!(c.apply_flag("--delta_t_ms").is_err());
        assert!(c.apply_flag("--seed=x").is_err());
    }

    #[test]
    fn rejects_nonpositive_window() {
        let mut c = RunConfig::default();
        c.set("delta_t_ms", "0").unwrap();
        assert!(c.validate().is_err());
    }
}
