use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tbm_core::solver::SolverConfig;
use tbm_core::volume::{DEFAULT_FLOOR, DEFAULT_TARGET_MASS};

use crate::error::CliError;

/// Pipeline configuration file. Relative paths are resolved against the
/// directory holding the file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub solver: SolverConfig,
    /// Subject volumes, TBMV1 or single-file NIfTI-1 (`.nii`).
    #[serde(default)]
    pub inputs: Vec<PathBuf>,
    /// Directory scanned for `*.tbmv` and `*.nii`, in name order.
    #[serde(default)]
    pub input_dir: Option<PathBuf>,
    /// CSV with header `subject_id,value[,label]`.
    #[serde(default)]
    pub covariates: Option<PathBuf>,
    #[serde(default)]
    pub preprocess: Preprocess,
    /// Existing template volume; the subjects' mean when absent.
    #[serde(default)]
    pub template: Option<PathBuf>,
    #[serde(default)]
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub synthesis: SynthesisSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub jobs: Option<usize>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Preprocess {
    pub target_mass: f64,
    pub floor: f64,
}

impl Default for Preprocess {
    fn default() -> Self {
        Self {
            target_mass: DEFAULT_TARGET_MASS,
            floor: DEFAULT_FLOOR,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Pca {
        rank: usize,
    },
    Regress {
        #[serde(default = "default_permutations")]
        permutations: usize,
    },
    Plda {
        alpha: f64,
        /// Multiply `alpha` by the cohort's total variance.
        #[serde(default)]
        relative_alpha: bool,
        #[serde(default = "default_permutations")]
        permutations: usize,
        /// Optional alpha values for the subspace stability table.
        #[serde(default)]
        alpha_scan: Vec<f64>,
    },
}

fn default_permutations() -> usize {
    1000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisSpec {
    /// Offsets along the direction in units of the subjects' score
    /// standard deviation.
    pub nus: Vec<f64>,
    /// 1-based principal component sampled by a PCA model.
    pub component: usize,
    /// Slices of 3D volumes. 2D volumes are written whole.
    pub slices: Vec<SliceSpec>,
}

impl Default for SynthesisSpec {
    fn default() -> Self {
        Self {
            nus: vec![-2.0, -1.0, 0.0, 1.0, 2.0],
            component: 1,
            slices: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceSpec {
    pub axis: usize,
    pub index: usize,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.inputs.iter_mut().for_each(fix);
        for p in [&mut self.input_dir, &mut self.covariates, &mut self.template, &mut self.out]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.solver.validate()?;
        if !(self.preprocess.target_mass > 0.0 && self.preprocess.target_mass.is_finite()) {
            return Err(CliError::Config("preprocess.target_mass must be > 0".into()));
        }
        if !(self.preprocess.floor >= 0.0 && self.preprocess.floor.is_finite()) {
            return Err(CliError::Config("preprocess.floor must be >= 0".into()));
        }
        if self.synthesis.nus.iter().any(|v| !v.is_finite()) {
            return Err(CliError::Config("synthesis.nus must be finite".into()));
        }
        if self.synthesis.component == 0 {
            return Err(CliError::Config("synthesis.component is 1-based".into()));
        }
        if self.jobs == Some(0) {
            return Err(CliError::Config("jobs must be >= 1".into()));
        }
        match &self.model {
            Some(ModelSpec::Regress { permutations }) | Some(ModelSpec::Plda { permutations, .. }) if *permutations == 0 => {
                Err(CliError::Config("model.permutations must be >= 1".into()))
            }
            Some(ModelSpec::Plda { alpha, alpha_scan, .. })
                if !(*alpha >= 0.0 && alpha.is_finite()) || alpha_scan.iter().any(|a| !(*a >= 0.0 && a.is_finite())) =>
            {
                Err(CliError::Config("model alpha values must be finite and >= 0".into()))
            }
            _ => Ok(()),
        }
    }

    /// Input volume paths: `inputs` followed by the contents of `input_dir`.
    pub fn input_paths(&self) -> Result<Vec<PathBuf>, CliError> {
        let mut out = self.inputs.clone();
        if let Some(dir) = &self.input_dir {
            let mut found: Vec<PathBuf> = std::fs::read_dir(dir)
                .map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("tbmv") | Some("nii")))
                .collect();
            found.sort();
            out.extend(found);
        }
        if out.is_empty() {
            return Err(CliError::Config("no input volumes: set inputs or input_dir".into()));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let c: PipelineConfig = serde_json::from_str(r#"{"input_dir": "subjects"}"#).unwrap();
        assert_eq!(c.solver, SolverConfig::default());
        assert_eq!(c.synthesis.nus.len(), 5);
        assert_eq!(c.seed, 0);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"inputz": []}"#).is_err());
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"solver": {"lamda": 1}}"#).is_err());
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"model": {"kind": "pca", "rank": 2, "x": 1}}"#).is_err());
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"model": {"kind": "lda"}}"#).is_err());
    }

    #[test]
    fn model_variants() {
        let c: PipelineConfig =
            serde_json::from_str(r#"{"model": {"kind": "plda", "alpha": 0.1, "relative_alpha": true}}"#).unwrap();
        assert_eq!(
            c.model,
            Some(ModelSpec::Plda {
                alpha: 0.1,
                relative_alpha: true,
                permutations: 1000,
                alpha_scan: vec![]
            })
        );
        let bad: PipelineConfig = serde_json::from_str(r#"{"model": {"kind": "regress", "permutations": 0}}"#).unwrap();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let mut c: PipelineConfig = serde_json::from_str(r#"{"inputs": ["a.tbmv", "/abs/b.tbmv"]}"#).unwrap();
        c.resolve(Path::new("/data/run"));
        assert_eq!(c.inputs, vec![PathBuf::from("/data/run/a.tbmv"), PathBuf::from("/abs/b.tbmv")]);
    }
}
