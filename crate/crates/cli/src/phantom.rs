use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use tbm_core::oracles::{make_phantom_cohort, PhantomFamily, PhantomSpec};
use tbm_core::solver::SolverConfig;
use tbm_core::volume::write_volume;

use crate::config::{ModelSpec, PipelineConfig, Preprocess, SynthesisSpec};
use crate::error::CliError;
use crate::manifest::Manifest;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Family {
    Translation,
    Aging,
    TwoClass,
}

#[derive(Clone, Debug)]
pub struct PhantomArgs {
    pub family: Family,
    pub count: usize,
    pub dims: Vec<usize>,
    pub sigma: Option<f64>,
    pub step: Option<f64>,
    pub noise: Option<f64>,
    pub separation: Option<f64>,
    pub jitter: Option<f64>,
}

/// Pipeline config matching the family, so the generated directory can be
/// fed straight to `transform`, `model` and `synthesize`.
fn pipeline_for(family: Family) -> PipelineConfig {
    let (solver, model) = match family {
        Family::Translation => (
            SolverConfig {
                gamma: 6.5e6,
                mse_termination: 1e-5,
                ..Default::default()
            },
            ModelSpec::Pca { rank: 3 },
        ),
        Family::Aging => (
            SolverConfig {
                mse_termination: 1e-3,
                ..Default::default()
            },
            ModelSpec::Regress { permutations: 1000 },
        ),
        Family::TwoClass => (
            SolverConfig::default(),
            ModelSpec::Plda {
                alpha: 0.1,
                relative_alpha: true,
                permutations: 1000,
                alpha_scan: vec![1e-3, 1e-2, 1e-1, 1.0, 10.0],
            },
        ),
    };
    PipelineConfig {
        solver,
        inputs: Vec::new(),
        input_dir: Some(PathBuf::from("subjects")),
        covariates: Some(PathBuf::from("covariates.csv")),
        preprocess: Preprocess::default(),
        template: None,
        model: Some(model),
        synthesis: SynthesisSpec::default(),
        seed: 0,
        jobs: None,
        out: Some(PathBuf::from("results")),
    }
}

pub fn run(args: &PhantomArgs, seed: u64, out: &Path) -> Result<(), CliError> {
    let family = match args.family {
        Family::Translation => PhantomFamily::Translation {
            sigma: args.sigma.unwrap_or(4.0),
            step: args.step.unwrap_or(1.0),
        },
        Family::Aging => PhantomFamily::Aging {
            noise: args.noise.unwrap_or(0.05),
        },
        Family::TwoClass => PhantomFamily::TwoClass {
            sigma: args.sigma.unwrap_or(5.0),
            separation: args.separation.unwrap_or(4.0),
            jitter: args.jitter.unwrap_or(2.0),
        },
    };
    let cohort = make_phantom_cohort(&PhantomSpec {
        family,
        dims: args.dims.clone(),
        count: args.count,
        seed,
    })?;
    let labelled = cohort.labels().is_some();
    let mut m = Manifest::open(out)?;
    let mut csv = String::from(if labelled { "subject_id,value,label\n" } else { "subject_id,value\n" });
    for s in &cohort.subjects {
        m.write_with(&format!("subjects/{}.tbmv", s.id), |p| write_volume(&s.volume, p))?;
        let _ = write!(csv, "{},{:e}", s.id, s.covariate);
        if let Some(l) = s.label {
            let _ = write!(csv, ",{l}");
        }
        csv.push('\n');
    }
    m.write("covariates.csv", csv.as_bytes())?;
    let mut json = serde_json::to_string_pretty(&pipeline_for(args.family)).expect("config serializes");
    json.push('\n');
    m.write("pipeline.json", json.as_bytes())?;
    m.finish()?;
    eprintln!("phantom: {} subjects written to {}", cohort.subjects.len(), out.display());
    Ok(())
}
