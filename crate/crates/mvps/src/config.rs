//! Experiment configuration: a single JSON document describing the model,
//! the task parameters, and where to put outputs.
//!
//! The schema is strict: unknown fields are rejected at parse time, and
//! [`ExperimentConfig::validate`] names the offending path for semantic
//! problems (for example `model.kernel: exactly one of matrix, builtin,
//! from_partition must be set`). Numbers are ordinary JSON numbers read as
//! 64-bit floats.
//!
//! A finite model gives `labels`, `nu`, and a kernel `matrix` (or the
//! `dirac` / `iid` builtins, or `from_partition` with an optional null set
//! `z`). A general model picks a sampler builtin (`dirac_normal`,
//! `symmetrized_normal`, `shifted_normal`, `histogram_normal`) and omits
//! `labels` and `nu`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::general::GeneralKernel;
use crate::kernel::{
    exchangeable_kernel_from_partition, FiniteKernel, KernelError, Partition,
};
use crate::measure::{FiniteMeasure, MeasureError, ProbabilityVector, Space};
use crate::urn::{GeneralUrnSpec, UrnError, UrnSpec};

/// Errors from loading, validating, or instantiating a configuration.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config does not parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Urn(#[from] UrnError),
}

fn invalid(path: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        path: path.to_string(),
        message: message.into(),
    }
}

/// How the reinforcement kernel is specified.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    /// Explicit row-major matrix over the model's labels.
    pub matrix: Option<Vec<Vec<f64>>>,
    /// Named kernel: finite `dirac` or `iid`; general `dirac_normal`,
    /// `symmetrized_normal`, `shifted_normal`, `histogram_normal`.
    pub builtin: Option<String>,
    /// Shift for the `shifted_normal` builtin.
    pub shift: Option<f64>,
    /// Ascending cut points for the `histogram_normal` builtin.
    pub cuts: Option<Vec<f64>>,
    /// Build the exchangeable block kernel from `model.partition` and
    /// `model.z`.
    pub from_partition: Option<bool>,
}

/// The model block: parameters of the reinforced urn.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub theta: f64,
    /// State labels of a finite model.
    #[serde(default)]
    pub labels: Option<Vec<String>>,
    /// Base weights over `labels`; normalized on load.
    #[serde(default)]
    pub nu: Option<Vec<f64>>,
    pub kernel: KernelConfig,
    /// Blocks of state labels.
    #[serde(default)]
    pub partition: Option<Vec<Vec<String>>>,
    /// Null-set state labels.
    #[serde(default)]
    pub z: Option<Vec<String>>,
}

/// The task block: subcommand parameters; all optional with subcommand
/// defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    /// Draws to simulate, or tuple length for law computations.
    pub n: Option<usize>,
    /// History depth for exchangeability and martingale checks.
    pub depth: Option<usize>,
    /// Monte Carlo replicates or prior draws.
    pub replicates: Option<usize>,
    pub seed: Option<u64>,
    /// Steps at which diagnostics series are evaluated.
    pub checkpoints: Option<Vec<usize>>,
    /// Tolerance override for exact checks.
    pub tol: Option<f64>,
    /// Thresholds defining half-line test sets for sampler-defined kernels.
    pub test_points: Option<Vec<f64>>,
    /// Sample count for sampler-defined kernel checks.
    pub samples: Option<usize>,
    /// Truncation target for stick-breaking samplers.
    pub truncation_epsilon: Option<f64>,
    /// Observed data, as state labels, for posterior sampling.
    pub data: Option<Vec<String>>,
}

/// The output block.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Output directory; overridden by `--out`, then the `MVPS_OUT`
    /// environment variable, with `mvps-out` as the fallback.
    pub dir: Option<PathBuf>,
    /// Any of `json`, `csv`; both by default.
    pub formats: Option<Vec<String>>,
}

/// A complete experiment description.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub task: TaskConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

const FINITE_BUILTINS: [&str; 2] = ["dirac", "iid"];
const GENERAL_BUILTINS: [&str; 4] = [
    "dirac_normal",
    "symmetrized_normal",
    "shifted_normal",
    "histogram_normal",
];

impl ExperimentConfig {
    /// Parses a config file and validates it.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let config: ExperimentConfig = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    /// Whether the model lives on a sampler-defined general space.
    pub fn is_general(&self) -> bool {
        matches!(&self.model.kernel.builtin,
                 Some(name) if GENERAL_BUILTINS.contains(&name.as_str()))
    }

    /// Semantic validation; errors name the offending config path.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let m = &self.model;
        if !(m.theta > 0.0) || !m.theta.is_finite() {
            return Err(invalid(
                "model.theta",
                format!("must be a positive finite number, got {}", m.theta),
            ));
        }
        let sources = [
            m.kernel.matrix.is_some(),
            m.kernel.builtin.is_some(),
            m.kernel.from_partition == Some(true),
        ];
        if sources.iter().filter(|&&s| s).count() != 1 {
            return Err(invalid(
                "model.kernel",
                "exactly one of matrix, builtin, from_partition must be set",
            ));
        }
        if let Some(name) = &m.kernel.builtin {
            if !FINITE_BUILTINS.contains(&name.as_str())
                && !GENERAL_BUILTINS.contains(&name.as_str())
            {
                return Err(invalid(
                    "model.kernel.builtin",
                    format!(
                        "unknown builtin {name:?}; finite: {FINITE_BUILTINS:?}, general: {GENERAL_BUILTINS:?}"
                    ),
                ));
            }
            if name == "shifted_normal" && m.kernel.shift.is_none() {
                return Err(invalid("model.kernel.shift", "required by shifted_normal"));
            }
            if name == "histogram_normal" && m.kernel.cuts.is_none() {
                return Err(invalid("model.kernel.cuts", "required by histogram_normal"));
            }
        }

        if self.is_general() {
            if m.labels.is_some() || m.nu.is_some() {
                return Err(invalid(
                    "model.labels",
                    "a general model takes no labels or nu; its base is the kernel's sampler",
                ));
            }
            if m.partition.is_some() || m.z.is_some() {
                return Err(invalid(
                    "model.partition",
                    "partitions and null sets apply to finite models only",
                ));
            }
        } else {
            let labels = m
                .labels
                .as_ref()
                .ok_or_else(|| invalid("model.labels", "required for a finite model"))?;
            if labels.is_empty() {
                return Err(invalid("model.labels", "must list at least one state"));
            }
            let space = Space::new(labels.iter().cloned())
                .map_err(|e| invalid("model.labels", e.to_string()))?;
            let nu = m
                .nu
                .as_ref()
                .ok_or_else(|| invalid("model.nu", "required for a finite model"))?;
            if nu.len() != labels.len() {
                return Err(invalid(
                    "model.nu",
                    format!("{} weights for {} labels", nu.len(), labels.len()),
                ));
            }
            if let Some(matrix) = &m.kernel.matrix {
                if matrix.len() != labels.len()
                    || matrix.iter().any(|row| row.len() != labels.len())
                {
                    return Err(invalid(
                        "model.kernel.matrix",
                        format!("must be square of size {}", labels.len()),
                    ));
                }
                if matrix.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(invalid("model.kernel.matrix", "entries must be finite"));
                }
            }
            if let Some(partition) = &m.partition {
                for (j, block) in partition.iter().enumerate() {
                    for label in block {
                        space.index_of(label).map_err(|_| {
                            invalid(
                                &format!("model.partition[{j}]"),
                                format!("unknown label {label:?}"),
                            )
                        })?;
                    }
                }
            }
            if let Some(z) = &m.z {
                for label in z {
                    space.index_of(label).map_err(|_| {
                        invalid("model.z", format!("unknown label {label:?}"))
                    })?;
                }
            }
            if m.kernel.from_partition == Some(true) && m.partition.is_none() {
                return Err(invalid(
                    "model.partition",
                    "required when kernel.from_partition is set",
                ));
            }
        }

        let t = &self.task;
        if let Some(tol) = t.tol {
            if !(tol > 0.0) || !tol.is_finite() {
                return Err(invalid("task.tol", format!("must be positive, got {tol}")));
            }
        }
        if let Some(eps) = t.truncation_epsilon {
            if !(eps > 0.0 && eps < 1.0) {
                return Err(invalid(
                    "task.truncation_epsilon",
                    format!("must lie in (0, 1), got {eps}"),
                ));
            }
        }
        if let Some(checkpoints) = &t.checkpoints {
            if checkpoints.windows(2).any(|w| w[1] <= w[0]) {
                return Err(invalid(
                    "task.checkpoints",
                    "must be strictly increasing",
                ));
            }
        }
        if let Some(formats) = &self.output.formats {
            for f in formats {
                if f != "json" && f != "csv" {
                    return Err(invalid(
                        "output.formats",
                        format!("unknown format {f:?}; known: json, csv"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// The raw kernel matrix, when one was given.
    pub fn raw_matrix(&self) -> Option<&Vec<Vec<f64>>> {
        self.model.kernel.matrix.as_ref()
    }

    /// The finite state space of the model.
    pub fn space(&self) -> Result<Arc<Space>, ConfigError> {
        let labels = self
            .model
            .labels
            .as_ref()
            .ok_or_else(|| invalid("model.labels", "required for a finite model"))?;
        Ok(Arc::new(Space::new(labels.iter().cloned())?))
    }

    /// The base probability vector of a finite model.
    pub fn nu(&self) -> Result<ProbabilityVector, ConfigError> {
        let space = self.space()?;
        let weights = self
            .model
            .nu
            .clone()
            .ok_or_else(|| invalid("model.nu", "required for a finite model"))?;
        Ok(FiniteMeasure::new(space, weights)?.normalize()?)
    }

    /// The partition of a finite model, when one was given.
    pub fn partition(&self) -> Result<Option<Partition>, ConfigError> {
        match &self.model.partition {
            None => Ok(None),
            Some(blocks) => {
                let space = self.space()?;
                Ok(Some(Partition::from_labels(space, blocks)?))
            }
        }
    }

    /// Null-set state indices of a finite model; empty when absent.
    pub fn z_indices(&self) -> Result<Vec<usize>, ConfigError> {
        let space = self.space()?;
        match &self.model.z {
            None => Ok(Vec::new()),
            Some(z) => z
                .iter()
                .map(|label| Ok(space.index_of(label)?))
                .collect(),
        }
    }

    /// Observed data as state indices; empty when absent.
    pub fn data_indices(&self) -> Result<Vec<usize>, ConfigError> {
        let space = self.space()?;
        match &self.task.data {
            None => Ok(Vec::new()),
            Some(data) => data
                .iter()
                .map(|label| Ok(space.index_of(label)?))
                .collect(),
        }
    }

    /// Builds the finite kernel described by the model block.
    pub fn finite_kernel(&self) -> Result<FiniteKernel, ConfigError> {
        let space = self.space()?;
        if let Some(matrix) = &self.model.kernel.matrix {
            return Ok(FiniteKernel::from_matrix(space, matrix.clone())?);
        }
        if let Some(name) = &self.model.kernel.builtin {
            return match name.as_str() {
                "dirac" => Ok(FiniteKernel::identity(space)),
                "iid" => Ok(FiniteKernel::constant(space, &self.nu()?)?),
                other => Err(invalid(
                    "model.kernel.builtin",
                    format!("{other:?} is not a finite builtin"),
                )),
            };
        }
        if self.model.kernel.from_partition == Some(true) {
            let partition = self.partition()?.ok_or_else(|| {
                invalid("model.partition", "required when kernel.from_partition is set")
            })?;
            let z = self.z_indices()?;
            let z_arg = if z.is_empty() { None } else { Some(z.as_slice()) };
            return Ok(exchangeable_kernel_from_partition(
                &self.nu()?,
                &partition,
                z_arg,
            )?);
        }
        Err(invalid("model.kernel", "no kernel source given"))
    }

    /// Builds the finite urn spec described by the model block.
    pub fn finite_spec(&self) -> Result<Arc<UrnSpec>, ConfigError> {
        Ok(Arc::new(UrnSpec::new(
            self.model.theta,
            self.nu()?,
            self.finite_kernel()?,
        )?))
    }

    /// Builds the sampler-defined kernel of a general model.
    pub fn general_kernel(&self) -> Result<GeneralKernel, ConfigError> {
        let name = self.model.kernel.builtin.as_deref().ok_or_else(|| {
            invalid("model.kernel.builtin", "required for a general model")
        })?;
        match name {
            "dirac_normal" => Ok(GeneralKernel::dirac_normal()),
            "symmetrized_normal" => Ok(GeneralKernel::symmetrized_normal()),
            "shifted_normal" => {
                let shift = self
                    .model
                    .kernel
                    .shift
                    .ok_or_else(|| invalid("model.kernel.shift", "required by shifted_normal"))?;
                Ok(GeneralKernel::shifted_normal(shift))
            }
            "histogram_normal" => {
                let cuts = self
                    .model
                    .kernel
                    .cuts
                    .clone()
                    .ok_or_else(|| invalid("model.kernel.cuts", "required by histogram_normal"))?;
                Ok(GeneralKernel::histogram_normal(cuts)?)
            }
            other => Err(invalid(
                "model.kernel.builtin",
                format!("{other:?} is not a general builtin"),
            )),
        }
    }

    /// Builds the general urn spec described by the model block.
    pub fn general_spec(&self) -> Result<GeneralUrnSpec, ConfigError> {
        let name = self.model.kernel.builtin.clone().unwrap_or_default();
        Ok(GeneralUrnSpec::new(
            self.model.theta,
            self.general_kernel()?,
            name,
        )?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> ExperimentConfig {
        serde_json::from_str(
            r#"{
                "model": {
                    "theta": 1.0,
                    "labels": ["0", "1"],
                    "nu": [0.5, 0.5],
                    "kernel": {"builtin": "dirac"}
                }
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn minimal_config_builds_a_polya_spec() {
        let config = minimal();
        config.validate().unwrap();
        assert!(!config.is_general());
        let spec = config.finite_spec().unwrap();
        assert_eq!(spec.space().len(), 2);
        assert!((spec.nu().prob(0) - 0.5).abs() <= crate::EXACT_TOL);
    }

    #[test]
    fn unknown_fields_are_rejected_at_parse_time() {
        let err = serde_json::from_str::<ExperimentConfig>(
            r#"{"model": {"theta": 1.0, "thetaa": 2.0, "kernel": {}}}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("thetaa"));
    }

    #[test]
    fn validation_names_the_offending_path() {
        let mut config = minimal();
        config.model.theta = -1.0;
        let err = config.validate().unwrap_err();
        assert!(err.to_string().starts_with("model.theta"));

        let mut config = minimal();
        config.model.kernel.builtin = Some("nonsense".to_string());
        let err = config.validate().unwrap_err();
        assert!(err.to_string().starts_with("model.kernel.builtin"));

        let mut config = minimal();
        config.model.kernel = KernelConfig::default();
        let err = config.validate().unwrap_err();
        assert!(err.to_string().starts_with("model.kernel"));

        let mut config = minimal();
        config.model.nu = Some(vec![0.5]);
        let err = config.validate().unwrap_err();
        assert!(err.to_string().starts_with("model.nu"));

        let mut config = minimal();
        config.task.truncation_epsilon = Some(2.0);
        let err = config.validate().unwrap_err();
        assert!(err.to_string().starts_with("task.truncation_epsilon"));
    }

    #[test]
    fn matrix_kernel_round_trips() {
        let config: ExperimentConfig = serde_json::from_str(
            r#"{
                "model": {
                    "theta": 1.0,
                    "labels": ["1", "2"],
                    "nu": [0.4, 0.6],
                    "kernel": {"matrix": [[0.5, 0.5], [0.25, 0.75]]}
                }
            }"#,
        )
        .unwrap();
        config.validate().unwrap();
        let kernel = config.finite_kernel().unwrap();
        assert_eq!(kernel.matrix(), vec![vec![0.5, 0.5], vec![0.25, 0.75]]);
        let json = serde_json::to_string(&config).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(config, back);
    }

    #[test]
    fn partition_kernel_with_null_set() {
        let config: ExperimentConfig = serde_json::from_str(
            r#"{
                "model": {
                    "theta": 1.0,
                    "labels": ["1", "2", "3"],
                    "nu": [0.25, 0.25, 0.5],
                    "kernel": {"from_partition": true},
                    "partition": [["1"], ["2"], ["3"]],
                    "z": ["3"]
                }
            }"#,
        )
        .unwrap();
        config.validate().unwrap();
        let kernel = config.finite_kernel().unwrap();
        assert_eq!(kernel.null_states(), vec![2]);
        assert_eq!(config.z_indices().unwrap(), vec![2]);
    }

    #[test]
    fn general_model_builds_a_sampler_spec() {
        let config: ExperimentConfig = serde_json::from_str(
            r#"{
                "model": {
                    "theta": 1.0,
                    "kernel": {"builtin": "symmetrized_normal"}
                },
                "task": {"samples": 1000}
            }"#,
        )
        .unwrap();
        config.validate().unwrap();
        assert!(config.is_general());
        config.general_spec().unwrap();
        assert!(config.finite_spec().is_err());
    }

    #[test]
    fn general_model_rejects_finite_fields() {
        let config: ExperimentConfig = serde_json::from_str(
            r#"{
                "model": {
                    "theta": 1.0,
                    "labels": ["a"],
                    "kernel": {"builtin": "dirac_normal"}
                }
            }"#,
        )
        .unwrap();
        assert!(config.validate().is_err());
    }

    #[test]
    fn negative_matrix_parses_but_does_not_build() {
        let config: ExperimentConfig = serde_json::from_str(
            r#"{
                "model": {
                    "theta": 1.0,
                    "labels": ["1", "2"],
                    "nu": [0.5, 0.5],
                    "kernel": {"matrix": [[-0.5, 0.5], [0.0, 1.0]]}
                }
            }"#,
        )
        .unwrap();
        config.validate().unwrap();
        assert!(config.raw_matrix().is_some());
        assert!(matches!(
            config.finite_kernel(),
            Err(ConfigError::Kernel(KernelError::NegativeEntry { .. }))
        ));
    }

    #[test]
    fn unknown_labels_in_data_fail() {
        let mut config = minimal();
        config.task.data = Some(vec!["0".into(), "oops".into()]);
        assert!(config.data_indices().is_err());
    }
}
