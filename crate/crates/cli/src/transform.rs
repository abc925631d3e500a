use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use tbm_core::lot::{analyze_with_result, build_template, LotEmbedding, Template};
use tbm_core::solver::SolveResult;
use tbm_core::volume::{normalize_density, read_nifti1, read_volume, write_volume};
use tbm_core::{DensityVolume, Result as CoreResult};

use crate::config::PipelineConfig;
use crate::error::CliError;
use crate::manifest::Manifest;

pub const TEMPLATE: &str = "template.tbmv";
pub const SUBJECTS: &str = "subjects.txt";

pub fn embedding_path(id: &str) -> String {
    format!("embeddings/{id}.tbmv")
}

pub fn load_volume(path: &Path) -> CoreResult<DensityVolume> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("nii") => read_nifti1(path),
        _ => read_volume(path),
    }
}

fn subject_id(path: &Path) -> Result<String, CliError> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .filter(|s| !s.is_empty() && !s.contains(',') && !s.contains(char::is_whitespace))
        .map(str::to_string)
        .ok_or_else(|| CliError::Config(format!("cannot derive a subject id from {}", path.display())))
}

fn load_inputs(cfg: &PipelineConfig, paths: &[PathBuf]) -> Result<(Vec<String>, Vec<DensityVolume>), CliError> {
    let mut ids = Vec::with_capacity(paths.len());
    let mut seen = BTreeSet::new();
    for p in paths {
        let id = subject_id(p)?;
        if !seen.insert(id.clone()) {
            return Err(CliError::Config(format!("duplicate subject id {id}")));
        }
        ids.push(id);
    }
    let vols = paths
        .par_iter()
        .map(|p| {
            let v = load_volume(p)?;
            normalize_density(&v, cfg.preprocess.target_mass, cfg.preprocess.floor)
        })
        .collect::<CoreResult<Vec<_>>>()?;
    for v in &vols[1..] {
        vols[0].grid().ensure_matches(v.grid())?;
    }
    Ok((ids, vols))
}

fn row(id: &str, r: &CoreResult<(LotEmbedding, SolveResult)>) -> String {
    match r {
        Ok((_, s)) => format!(
            "{id},{},{:?},{:e},{:e},{:e},{:e},{:e},{}",
            if s.converged { "converged" } else { "not_converged" },
            s.stop_reason,
            s.rel_mse,
            s.mean_curl,
            s.transport_cost,
            s.normalized_cost,
            s.min_det,
            s.rejected_steps
        ),
        Err(e) => format!("{id},failed,\"{}\",,,,,,", e.to_string().replace('"', "'")),
    }
}

pub fn run(cfg: &PipelineConfig, out: &Path) -> Result<(), CliError> {
    let paths = cfg.input_paths()?;
    let (ids, vols) = load_inputs(cfg, &paths)?;
    let template = match &cfg.template {
        Some(p) => {
            let t = normalize_density(&load_volume(p)?, cfg.preprocess.target_mass, cfg.preprocess.floor)?;
            t.grid().ensure_matches(vols[0].grid())?;
            Template::new(t, vec![p.display().to_string()])
        }
        None => {
            let t = build_template(&vols, &ids)?;
            Template::new(t.density.with_mass(cfg.preprocess.target_mass)?, t.provenance)
        }
    };
    let results: Vec<_> = vols.par_iter().map(|v| analyze_with_result(&template, v, &cfg.solver)).collect();

    let mut m = Manifest::open(out)?;
    m.write_with(TEMPLATE, |p| write_volume(&template.density, p))?;
    let mut table = String::from(
        "subject_id,status,stop_reason,rel_mse,mean_curl,transport_cost,normalized_cost,min_det,rejected_steps\n",
    );
    let mut listed = String::new();
    let mut bad = Vec::new();
    for (id, r) in ids.iter().zip(&results) {
        let _ = writeln!(table, "{}", row(id, r));
        match r {
            Ok((e, s)) => {
                m.write_with(&embedding_path(id), |p| e.write(p))?;
                m.write(&format!("traces/{id}.csv"), s.trace.to_csv().as_bytes())?;
                let _ = writeln!(listed, "{id}");
                if !s.converged {
                    bad.push(id.clone());
                }
            }
            Err(_) => bad.push(id.clone()),
        }
    }
    m.write("transform.csv", table.as_bytes())?;
    m.write(SUBJECTS, listed.as_bytes())?;
    m.finish()?;
    eprintln!("transform: {} subjects, {} did not converge", ids.len(), bad.len());
    if bad.is_empty() {
        Ok(())
    } else {
        Err(CliError::NotConverged(format!("subjects without a converged map: {}", bad.join(", "))))
    }
}
