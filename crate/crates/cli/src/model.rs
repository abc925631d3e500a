use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tbm_core::lot::LotEmbedding;
use tbm_core::stats::{
    alpha_stability_scan, correlation_test, pca, plda_test, read_covariates, reduce, Cohort, CovariateRecord, DirectionResult,
};
use tbm_core::GridSpec;

use crate::config::{ModelSpec, PipelineConfig};
use crate::error::CliError;
use crate::manifest::Manifest;
use crate::transform::{embedding_path, SUBJECTS};

pub const MODEL_JSON: &str = "model/model.json";
pub const MEAN: &str = "model/mean.tbmv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectionEntry {
    /// Path relative to the output directory.
    pub file: String,
    /// Population standard deviation of the subjects' scores.
    pub score_sd: f64,
}

/// Written by `model`, read by `synthesize`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelRecord {
    pub kind: String,
    pub subjects: Vec<String>,
    pub directions: Vec<DirectionEntry>,
    pub statistic: f64,
    pub p_value: Option<f64>,
}

pub fn read_subjects(out: &Path) -> Result<Vec<String>, CliError> {
    let path = out.join(SUBJECTS);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Config(format!("{}: {e} (run transform first)", path.display())))?;
    Ok(text.lines().filter(|l| !l.is_empty()).map(str::to_string).collect())
}

fn sd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt()
}

fn records_for(cfg: &PipelineConfig, ids: &[String]) -> Result<Vec<CovariateRecord>, CliError> {
    let path = cfg
        .covariates
        .as_ref()
        .ok_or_else(|| CliError::Config("this model needs a covariates file".into()))?;
    let all = read_covariates(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let by_id: BTreeMap<&str, &CovariateRecord> = all.iter().map(|r| (r.subject_id.as_str(), r)).collect();
    ids.iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .map(|r| (*r).clone())
                .ok_or_else(|| CliError::Config(format!("no covariate row for subject {id}")))
        })
        .collect()
}

fn write_direction(m: &mut Manifest, grid: &GridSpec, rel: &str, v: &[f64]) -> Result<(), CliError> {
    let e = LotEmbedding::from_vector(grid, v)?;
    m.write_with(rel, |p| e.write(p))
}

fn scores_csv(ids: &[String], header: &str, cols: &[Vec<f64>], extra: Option<Vec<String>>) -> String {
    let mut s = format!("subject_id,{header}\n");
    for (k, id) in ids.iter().enumerate() {
        let vals: Vec<String> = cols.iter().map(|c| format!("{:e}", c[k])).collect();
        let _ = write!(s, "{id},{}", vals.join(","));
        if let Some(x) = &extra {
            let _ = write!(s, ",{}", x[k]);
        }
        s.push('\n');
    }
    s
}

fn fmt_p(p: Option<f64>) -> String {
    p.map_or(String::new(), |p| format!("{p:e}"))
}

pub fn run(cfg: &PipelineConfig, out: &Path) -> Result<(), CliError> {
    let spec = cfg
        .model
        .clone()
        .ok_or_else(|| CliError::Config("config has no model section".into()))?;
    let ids = read_subjects(out)?;
    let emb = ids
        .iter()
        .map(|id| LotEmbedding::read(out.join(embedding_path(id))))
        .collect::<tbm_core::Result<Vec<_>>>()?;
    if emb.is_empty() {
        return Err(CliError::Config("no embeddings to model".into()));
    }
    let grid = emb[0].grid().clone();
    let cohort = Cohort::from_embeddings(ids.clone(), &emb)?;
    let mut m = Manifest::open(out)?;
    write_direction(&mut m, &grid, MEAN, cohort.mean().as_slice())?;

    let mut summary = format!("subjects: {}\n", ids.len());
    let record = match spec {
        ModelSpec::Pca { rank } => {
            let model = pca(&cohort, rank)?;
            let scores = reduce(&cohort, rank)?.scores;
            let mut directions = Vec::new();
            let mut table = String::from("component,variance,explained_ratio\n");
            let mut cols = Vec::new();
            for k in 0..model.variances.len() {
                let rel = format!("model/pc{}.tbmv", k + 1);
                let col: Vec<f64> = model.components.column(k).iter().copied().collect();
                write_direction(&mut m, &grid, &rel, &col)?;
                let s: Vec<f64> = scores.row(k).iter().copied().collect();
                directions.push(DirectionEntry {
                    file: rel,
                    score_sd: sd(&s),
                });
                cols.push(s);
                let _ = writeln!(table, "{},{:e},{:e}", k + 1, model.variances[k], model.explained_ratio(k));
                let _ = writeln!(
                    summary,
                    "PC{}: variance {:.6e}, {:.2}% of total",
                    k + 1,
                    model.variances[k],
                    100.0 * model.explained_ratio(k)
                );
            }
            let header: Vec<String> = (1..=cols.len()).map(|k| format!("pc{k}")).collect();
            m.write("model/scores.csv", scores_csv(&ids, &header.join(","), &cols, None).as_bytes())?;
            m.write("model/variances.csv", table.as_bytes())?;
            summary.insert_str(0, "model: pca\n");
            ModelRecord {
                kind: "pca".into(),
                subjects: ids.clone(),
                directions,
                statistic: model.explained_ratio(0),
                p_value: None,
            }
        }
        ModelSpec::Regress { permutations } => {
            let recs = records_for(cfg, &ids)?;
            let v: Vec<f64> = recs.iter().map(|r| r.value).collect();
            let c = cohort.clone().with_covariate(v.clone())?;
            let res = correlation_test(&c, permutations, cfg.seed)?;
            let extra = v.iter().map(|x| format!("{x:e}")).collect();
            finish_direction(&mut m, &grid, &ids, &res, "covariate", extra)?;
            let _ = writeln!(summary, "pearson r: {:.6}", res.statistic);
            let _ = writeln!(summary, "permutation p: {} ({permutations} permutations)", fmt_p(res.p_value));
            summary.insert_str(0, "model: regress\n");
            record("regress", &ids, &res)
        }
        ModelSpec::Plda {
            alpha,
            relative_alpha,
            permutations,
            alpha_scan,
        } => {
            let recs = records_for(cfg, &ids)?;
            let labels = recs
                .iter()
                .map(|r| r.label.ok_or_else(|| CliError::Config(format!("subject {} has no label", r.subject_id))))
                .collect::<Result<Vec<usize>, _>>()?;
            let c = cohort.clone().with_labels(labels.clone())?;
            let scale = if relative_alpha { c.total_variance() } else { 1.0 };
            let res = plda_test(&c, alpha * scale, permutations, cfg.seed)?;
            let extra = labels.iter().map(|l| l.to_string()).collect();
            finish_direction(&mut m, &grid, &ids, &res, "label", extra)?;
            let _ = writeln!(summary, "alpha: {:e}", alpha * scale);
            let _ = writeln!(summary, "rayleigh quotient: {:.6e}", res.statistic);
            let _ = writeln!(summary, "permutation p: {} ({permutations} permutations)", fmt_p(res.p_value));
            let _ = writeln!(summary, "training overlap: {}", overlap(&res.scores, &labels));
            if !alpha_scan.is_empty() {
                let alphas: Vec<f64> = alpha_scan.iter().map(|a| a * scale).collect();
                let scan = alpha_stability_scan(&c, &alphas)?;
                m.write("model/alpha_scan.csv", scan.to_csv().as_bytes())?;
                for w in &scan.warnings {
                    let _ = writeln!(summary, "alpha scan: {w}");
                }
            }
            summary.insert_str(0, "model: plda\n");
            record("plda", &ids, &res)
        }
    };
    let mut results = String::from("model,statistic,p_value,score_sd\n");
    let _ = writeln!(
        results,
        "{},{:e},{},{:e}",
        record.kind,
        record.statistic,
        fmt_p(record.p_value),
        record.directions[0].score_sd
    );
    m.write("model/results.csv", results.as_bytes())?;
    m.write("model/summary.txt", summary.as_bytes())?;
    let mut json = serde_json::to_string_pretty(&record).expect("model record serializes");
    json.push('\n');
    m.write(MODEL_JSON, json.as_bytes())?;
    m.finish()?;
    print!("{summary}");
    Ok(())
}

fn finish_direction(
    m: &mut Manifest,
    grid: &GridSpec,
    ids: &[String],
    res: &DirectionResult,
    extra_name: &str,
    extra: Vec<String>,
) -> Result<(), CliError> {
    write_direction(m, grid, "model/direction.tbmv", &res.direction)?;
    let header = format!("score,{extra_name}");
    m.write(
        "model/scores.csv",
        scores_csv(ids, &header, std::slice::from_ref(&res.scores), Some(extra)).as_bytes(),
    )
}

fn record(kind: &str, ids: &[String], res: &DirectionResult) -> ModelRecord {
    ModelRecord {
        kind: kind.into(),
        subjects: ids.to_vec(),
        directions: vec![DirectionEntry {
            file: "model/direction.tbmv".into(),
            score_sd: sd(&res.scores),
        }],
        statistic: res.statistic,
        p_value: res.p_value,
    }
}

/// `none` when every class occupies its own score interval.
fn overlap(scores: &[f64], labels: &[usize]) -> String {
    let mut ranges: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
    for (s, l) in scores.iter().zip(labels) {
        let r = ranges.entry(*l).or_insert((f64::INFINITY, f64::NEG_INFINITY));
        r.0 = r.0.min(*s);
        r.1 = r.1.max(*s);
    }
    let mut v: Vec<(f64, f64)> = ranges.into_values().collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    if v.windows(2).all(|w| w[0].1 < w[1].0) {
        "none".into()
    } else {
        "overlapping".into()
    }
}
