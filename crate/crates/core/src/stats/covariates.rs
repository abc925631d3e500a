use std::io::Read;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Result, TbmError};

/// One row of a covariate file `subject_id,value[,label]`.
#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct CovariateRecord {
    pub subject_id: String,
    pub value: f64,
    #[serde(default)]
    pub label: Option<usize>,
}

fn bad(msg: impl Into<String>) -> TbmError {
    TbmError::InvalidCohort(msg.into())
}

pub fn parse_covariates(input: impl Read) -> Result<Vec<CovariateRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers().map_err(|e| bad(format!("covariate header: {e}")))?.clone();
    let names: Vec<&str> = headers.iter().collect();
    if names != ["subject_id", "value"] && names != ["subject_id", "value", "label"] {
        return Err(bad(format!("covariate header must be subject_id,value[,label], found {}", names.join(","))));
    }
    let mut out: Vec<CovariateRecord> = Vec::new();
    for (line, row) in rdr.deserialize().enumerate() {
        let r: CovariateRecord = row.map_err(|e| bad(format!("covariate row {}: {e}", line + 1)))?;
        if !r.value.is_finite() {
            return Err(bad(format!("covariate row {}: non-finite value", line + 1)));
        }
        if out.iter().any(|o| o.subject_id == r.subject_id) {
            return Err(bad(format!("duplicate subject id {}", r.subject_id)));
        }
        out.push(r);
    }
    Ok(out)
}

pub fn read_covariates(path: impl AsRef<Path>) -> Result<Vec<CovariateRecord>> {
    parse_covariates(std::fs::File::open(path)?)
}
