use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::WorkspaceError;

/// Pipeline tunables. Persisted as `key = value` lines in `teeport.conf`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Maximum number of refinement steps per function.
    pub refinement_threshold: u32,
    /// Consecutive non-improving coverage iterations before a suite stagnates.
    pub coverage_stagnation_limit: u32,
    pub few_shot_example_count: u32,
    pub backend_id: String,
    pub toolchain_id: String,
    pub tee_profile_id: String,
    pub run_repeat_count: u32,
    /// Absolute cap on coverage-loop iterations; stagnation normally fires first.
    pub coverage_iteration_cap: u32,
    pub case_timeout_ms: u64,
    /// 1..=3; values below 3 only exist to compare prompt-round ablations.
    pub identification_rounds: u32,
    pub llm_retry_limit: u32,
    pub llm_model: String,
    /// Fixed-point string so the config stays `Eq`; parsed as f64 by the live backend.
    pub llm_temperature: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            refinement_threshold: 20,
            coverage_stagnation_limit: 3,
            few_shot_example_count: 3,
            backend_id: "replay".into(),
            toolchain_id: "cargo".into(),
            tee_profile_id: "process".into(),
            run_repeat_count: 5,
            coverage_iteration_cap: 10,
            case_timeout_ms: 10_000,
            identification_rounds: 3,
            llm_retry_limit: 3,
            llm_model: "gpt-4o".into(),
            llm_temperature: "0".into(),
        }
    }
}

const KEYS: &[&str] = &[
    "refinement_threshold",
    "coverage_stagnation_limit",
    "few_shot_example_count",
    "backend_id",
    "toolchain_id",
    "tee_profile_id",
    "run_repeat_count",
    "coverage_iteration_cap",
    "case_timeout_ms",
    "identification_rounds",
    "llm_retry_limit",
    "llm_model",
    "llm_temperature",
];

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), WorkspaceError> {
        let counts = [
            ("refinement_threshold", self.refinement_threshold as u64),
            (
                "coverage_stagnation_limit",
                self.coverage_stagnation_limit as u64,
            ),
            ("few_shot_example_count", self.few_shot_example_count as u64),
            ("run_repeat_count", self.run_repeat_count as u64),
            ("coverage_iteration_cap", self.coverage_iteration_cap as u64),
            ("case_timeout_ms", self.case_timeout_ms),
            ("identification_rounds", self.identification_rounds as u64),
            ("llm_retry_limit", self.llm_retry_limit as u64),
        ];
        for (key, v) in counts {
            if v < 1 {
                return Err(WorkspaceError::Config(format!("{key} must be at least 1")));
            }
        }
        if self.identification_rounds > 3 {
            return Err(WorkspaceError::Config(
                "identification_rounds must be 1, 2 or 3".into(),
            ));
        }
        if self.llm_temperature.parse::<f64>().is_err() {
            return Err(WorkspaceError::Config(
                "llm_temperature must be a number".into(),
            ));
        }
        Ok(())
    }

    fn to_map(&self) -> BTreeMap<&'static str, String> {
        let mut m = BTreeMap::new();
        m.insert(
            "refinement_threshold",
            self.refinement_threshold.to_string(),
        );
        m.insert(
            "coverage_stagnation_limit",
            self.coverage_stagnation_limit.to_string(),
        );
        m.insert(
            "few_shot_example_count",
            self.few_shot_example_count.to_string(),
        );
        m.insert("backend_id", self.backend_id.clone());
        m.insert("toolchain_id", self.toolchain_id.clone());
        m.insert("tee_profile_id", self.tee_profile_id.clone());
        m.insert("run_repeat_count", self.run_repeat_count.to_string());
        m.insert(
            "coverage_iteration_cap",
            self.coverage_iteration_cap.to_string(),
        );
        m.insert("case_timeout_ms", self.case_timeout_ms.to_string());
        m.insert(
            "identification_rounds",
            self.identification_rounds.to_string(),
        );
        m.insert("llm_retry_limit", self.llm_retry_limit.to_string());
        m.insert("llm_model", self.llm_model.clone());
        m.insert("llm_temperature", self.llm_temperature.clone());
        m
    }

    /// Keys whose values differ between two configs.
    pub fn diff(&self, other: &PipelineConfig) -> Vec<String> {
        let a = self.to_map();
        let b = other.to_map();
        KEYS.iter()
            .filter(|k| a.get(*k) != b.get(*k))
            .map(|k| format!("{k}: stored={} requested={}", b[*k], a[*k]))
            .collect()
    }

    /// Apply one `key=value` override (used by the CLI).
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), WorkspaceError> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T, WorkspaceError> {
            v.trim()
                .parse()
                .map_err(|_| WorkspaceError::Config(format!("{key}: `{v}` is not a valid number")))
        }
        let v = value.trim();
        match key.trim() {
            "refinement_threshold" => self.refinement_threshold = num(key, v)?,
            "coverage_stagnation_limit" => self.coverage_stagnation_limit = num(key, v)?,
            "few_shot_example_count" => self.few_shot_example_count = num(key, v)?,
            "backend_id" => self.backend_id = v.to_string(),
            "toolchain_id" => self.toolchain_id = v.to_string(),
            "tee_profile_id" => self.tee_profile_id = v.to_string(),
            "run_repeat_count" => self.run_repeat_count = num(key, v)?,
            "coverage_iteration_cap" => self.coverage_iteration_cap = num(key, v)?,
            "case_timeout_ms" => self.case_timeout_ms = num(key, v)?,
            "identification_rounds" => self.identification_rounds = num(key, v)?,
            "llm_retry_limit" => self.llm_retry_limit = num(key, v)?,
            "llm_model" => self.llm_model = v.to_string(),
            "llm_temperature" => self.llm_temperature = v.to_string(),
            other => {
                return Err(WorkspaceError::Config(format!(
                    "unknown config key `{other}`"
                )))
            }
        }
        Ok(())
    }
}

impl fmt::Display for PipelineConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# teeport pipeline configuration")?;
        let map = self.to_map();
        for key in KEYS {
            writeln!(f, "{key} = {}", map[key])?;
        }
        Ok(())
    }
}

impl FromStr for PipelineConfig {
    type Err = WorkspaceError;

    /// Missing keys keep their defaults; unknown keys are rejected.
    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut cfg = PipelineConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                WorkspaceError::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = PipelineConfig::default();
        assert_eq!(
            (
                c.refinement_threshold,
                c.coverage_stagnation_limit,
                c.few_shot_example_count,
                c.run_repeat_count
            ),
            (20, 3, 3, 5)
        );
    }

    #[test]
    fn text_roundtrip() {
        let mut c = PipelineConfig::default();
        c.refinement_threshold = 7;
        c.llm_model = "local-model".into();
        let back: PipelineConfig = c.to_string().parse().unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_zero_counts_and_unknown_keys() {
        assert!("refinement_threshold = 0"
            .parse::<PipelineConfig>()
            .is_err());
        assert!("bogus = 1".parse::<PipelineConfig>().is_err());
        assert!("identification_rounds = 4"
            .parse::<PipelineConfig>()
            .is_err());
    }
}
