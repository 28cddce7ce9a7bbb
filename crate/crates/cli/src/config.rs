use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use transport_core::{
    make_grid, BiasFunctionSpec, Design, DgpConfig, Estimator, InferenceConfig, ModelSpec, ModulationConfig, Schema,
    Target,
};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub path: Option<PathBuf>,
    #[serde(flatten)]
    pub schema: Schema,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub u0: Vec<f64>,
    pub delta: Vec<f64>,
    pub modulation: Option<ModulationConfig>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            u0: vec![-40.0, 0.0, 40.0],
            delta: (-3..=3).map(|k| 20.0 * k as f64).collect(),
            modulation: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub csv: bool,
    pub json: bool,
    pub plot: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("results"),
            csv: true,
            json: true,
            plot: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub design: Design,
    /// Defaults to the non-randomized population.
    pub target: Target,
    pub data: DataConfig,
    pub models: ModelSpec,
    /// Defaults to every estimator of the target.
    pub estimators: Option<Vec<Estimator>>,
    pub grid: GridConfig,
    pub inference: InferenceConfig,
    pub positivity_threshold: f64,
    pub output: OutputConfig,
    pub simulation: Option<DgpConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            design: Design::NonNested,
            target: Target::NonRandomized,
            data: DataConfig::default(),
            models: ModelSpec::default(),
            estimators: None,
            grid: GridConfig::default(),
            inference: InferenceConfig::default(),
            positivity_threshold: transport_core::positivity::DEFAULT_THRESHOLD,
            output: OutputConfig::default(),
            simulation: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage("config", format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::usage("config", format!("{}: {e}", path.display())))
    }

    pub fn estimators(&self) -> Vec<Estimator> {
        self.estimators.clone().unwrap_or_else(|| {
            Estimator::ALL
                .into_iter()
                .filter(|e| e.target() == self.target)
                .collect()
        })
    }

    /// Checks the design/target/estimator combination.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.target == Target::WholePopulation && self.design != Design::Nested {
            return Err(CliError::usage(
                "config",
                "the whole-population target is identified only under a nested design; set \"design\": \"nested\"",
            ));
        }
        let estimators = self.estimators();
        if estimators.is_empty() {
            return Err(CliError::usage("config", "no estimators requested"));
        }
        if let Some(e) = estimators.iter().find(|e| e.target() != self.target) {
            return Err(CliError::usage(
                "config",
                format!("estimator {e} does not target the {} population", self.target.name()),
            ));
        }
        if !(self.positivity_threshold > 0.0 && self.positivity_threshold < 0.5) {
            return Err(CliError::usage(
                "config",
                format!("positivity_threshold {} must lie in (0, 0.5)", self.positivity_threshold),
            ));
        }
        Ok(())
    }

    pub fn data_path(&self) -> Result<&Path, CliError> {
        self.data
            .path
            .as_deref()
            .ok_or_else(|| CliError::usage("config", "no data file given (use --data or \"data\": {\"path\": ...})"))
    }

    pub fn bias_grid(&self, covariate_names: &[String]) -> Result<Vec<BiasFunctionSpec>, CliError> {
        let modulation = self
            .grid
            .modulation
            .as_ref()
            .map(|m| m.resolve(covariate_names))
            .transpose()
            .map_err(|e| CliError::usage("bias", e.to_string()))?;
        make_grid(&self.grid.u0, &self.grid.delta, modulation.as_ref()).map_err(|e| CliError::usage("bias", e.to_string()))
    }
}
