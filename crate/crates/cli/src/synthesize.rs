use std::path::Path;

use serde::Serialize;
use tbm_core::lot::{sample_direction, LotEmbedding, Template};
use tbm_core::volume::{read_volume, write_volume};
use tbm_core::DensityVolume;

use crate::config::{PipelineConfig, SliceSpec};
use crate::error::CliError;
use crate::manifest::Manifest;
use crate::model::{read_subjects, ModelRecord, MEAN, MODEL_JSON};
use crate::pgm;
use crate::transform::TEMPLATE;

#[derive(Serialize)]
struct SeriesEntry {
    nu: f64,
    /// `nu` times the score standard deviation: the step taken in
    /// embedding space.
    offset: f64,
    status: String,
    volume: Option<String>,
}

#[derive(Serialize)]
struct SliceScaling {
    name: String,
    axis: Option<usize>,
    index: Option<usize>,
    /// Values mapped to grey levels 0 and 255, shared by the whole series.
    min: f64,
    max: f64,
    files: Vec<String>,
}

#[derive(Serialize)]
struct Sidecar {
    direction: String,
    score_sd: f64,
    entries: Vec<SeriesEntry>,
    slices: Vec<SliceScaling>,
}

fn sections(cfg: &PipelineConfig, ndim: usize, dims: &[usize]) -> Result<Vec<Option<SliceSpec>>, CliError> {
    if ndim == 2 {
        if !cfg.synthesis.slices.is_empty() {
            return Err(CliError::Config("slices apply to 3D volumes only".into()));
        }
        return Ok(vec![None]);
    }
    if cfg.synthesis.slices.is_empty() {
        return Ok(vec![Some(SliceSpec {
            axis: ndim - 1,
            index: dims[ndim - 1] / 2,
        })]);
    }
    for s in &cfg.synthesis.slices {
        if s.axis >= ndim || s.index >= dims[s.axis] {
            return Err(CliError::Config(format!("slice axis {} index {} is outside the grid", s.axis, s.index)));
        }
    }
    Ok(cfg.synthesis.slices.iter().copied().map(Some).collect())
}

pub fn run(cfg: &PipelineConfig, out: &Path) -> Result<(), CliError> {
    let model_path = out.join(MODEL_JSON);
    let text = std::fs::read_to_string(&model_path)
        .map_err(|e| CliError::Config(format!("{}: {e} (run model first)", model_path.display())))?;
    let record: ModelRecord =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", model_path.display())))?;
    let k = if record.kind == "pca" { cfg.synthesis.component - 1 } else { 0 };
    let entry = record
        .directions
        .get(k)
        .ok_or_else(|| CliError::Config(format!("model has no component {}", k + 1)))?;

    let template = Template::new(read_volume(out.join(TEMPLATE))?, read_subjects(out)?);
    let mean = LotEmbedding::read(out.join(MEAN))?;
    let direction = LotEmbedding::read(out.join(&entry.file))?;
    let offsets: Vec<f64> = cfg.synthesis.nus.iter().map(|nu| nu * entry.score_sd).collect();
    let series = sample_direction(&template, &mean, &direction, &offsets)?;

    let grid = template.grid().clone();
    let secs = sections(cfg, grid.ndim(), grid.dims())?;
    let mut m = Manifest::open(out)?;
    let mut entries = Vec::new();
    let mut ok: Vec<(usize, DensityVolume)> = Vec::new();
    let mut failed = Vec::new();
    for (i, (r, (&nu, &offset))) in series.into_iter().zip(cfg.synthesis.nus.iter().zip(&offsets)).enumerate() {
        match r {
            Ok(v) => {
                let rel = format!("series/nu_{i:02}.tbmv");
                m.write_with(&rel, |p| write_volume(&v, p))?;
                entries.push(SeriesEntry {
                    nu,
                    offset,
                    status: "ok".into(),
                    volume: Some(rel),
                });
                ok.push((i, v));
            }
            Err(e) => {
                entries.push(SeriesEntry {
                    nu,
                    offset,
                    status: e.to_string(),
                    volume: None,
                });
                failed.push(nu);
            }
        }
    }

    let mut scalings = Vec::new();
    for sec in secs {
        let name = match sec {
            None => "image".to_string(),
            Some(s) => format!("axis{}_index{}", s.axis, s.index),
        };
        let cut: Vec<(usize, pgm::Slice)> = ok
            .iter()
            .map(|(i, v)| (*i, pgm::extract(v, sec.map(|s| (s.axis, s.index))).expect("section checked against the grid")))
            .collect();
        let refs: Vec<&pgm::Slice> = cut.iter().map(|(_, s)| s).collect();
        let (lo, hi) = if refs.is_empty() { (0.0, 0.0) } else { pgm::range(&refs) };
        let mut files = Vec::new();
        for (i, s) in &cut {
            let rel = format!("series/{name}_nu_{i:02}.pgm");
            m.write(&rel, &pgm::encode(s, lo, hi))?;
            files.push(rel);
        }
        scalings.push(SliceScaling {
            name,
            axis: sec.map(|s| s.axis),
            index: sec.map(|s| s.index),
            min: lo,
            max: hi,
            files,
        });
    }
    let sidecar = Sidecar {
        direction: entry.file.clone(),
        score_sd: entry.score_sd,
        entries,
        slices: scalings,
    };
    let mut json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    json.push('\n');
    m.write("series/series.json", json.as_bytes())?;
    m.finish()?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("synthesis failed at nu {failed:?}")))
    }
}
