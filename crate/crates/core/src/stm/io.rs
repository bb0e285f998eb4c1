//! On-disk formats for fitted models.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{build_design, DocPosterior, FittedStm, PrevalenceDesign, StmConfig, StmModel, COVARIATE_NAMES};
use crate::corpus::BinaryLabel;
use crate::dialect::csv_field;
use crate::error::{Error, Result};
use crate::scalar::{softmax_pinned, Scalar};

pub const MODEL_FORMAT: &str = "stmaudit-stm";
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// SHA-256 of the vocabulary (terms joined by newlines), hex encoded.
pub fn vocabulary_hash(vocabulary: &[String]) -> String {
    let mut h = Sha256::new();
    for (i, t) in vocabulary.iter().enumerate() {
        if i > 0 {
            h.update(b"\n");
        }
        h.update(t.as_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Serialized model. Matrices are stored row-major with explicit shapes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub config: StmConfig,
    pub vocabulary_sha256: String,
    pub n_topics: usize,
    pub n_terms: usize,
    pub covariates: Vec<String>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub sigma: Vec<f64>,
    pub elbo_trace: Vec<f64>,
    pub converged: bool,
}

fn row_major<T: Scalar>(m: &DMatrix<T>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)].as_f64());
        }
    }
    out
}

fn from_row_major<T: Scalar>(rows: usize, cols: usize, data: &[f64], what: &str) -> Result<DMatrix<T>> {
    if data.len() != rows * cols {
        return Err(Error::Alignment(format!("{what} has {} entries, expected {rows}x{cols}", data.len())));
    }
    Ok(DMatrix::from_fn(rows, cols, |r, c| T::of(data[r * cols + c])))
}

impl ModelFile {
    pub fn from_fitted<T: Scalar>(fitted: &FittedStm<T>, vocabulary: &[String]) -> Self {
        ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_FORMAT_VERSION,
            config: fitted.config.clone(),
            vocabulary_sha256: vocabulary_hash(vocabulary),
            n_topics: fitted.model.n_topics(),
            n_terms: fitted.model.n_terms(),
            covariates: COVARIATE_NAMES.iter().map(|s| s.to_string()).collect(),
            beta: row_major(&fitted.model.beta),
            gamma: row_major(&fitted.model.gamma),
            sigma: row_major(&fitted.model.sigma),
            elbo_trace: fitted.elbo_trace.iter().map(|v| v.as_f64()).collect(),
            converged: fitted.converged,
        }
    }

    pub fn model<T: Scalar>(&self) -> Result<StmModel<T>> {
        let k = self.n_topics;
        if k == 0 {
            return Err(Error::InvalidArgument("model has no topics".into()));
        }
        Ok(StmModel {
            beta: from_row_major(k, self.n_terms, &self.beta, "beta")?,
            gamma: from_row_major(self.covariates.len(), k - 1, &self.gamma, "gamma")?,
            sigma: from_row_major(k - 1, k - 1, &self.sigma, "sigma")?,
        })
    }

    pub fn check_vocabulary(&self, vocabulary: &[String]) -> Result<()> {
        if vocabulary_hash(vocabulary) != self.vocabulary_sha256 {
            return Err(Error::Alignment("model was fitted on a different vocabulary".into()));
        }
        Ok(())
    }
}

pub fn write_model_json<T: Scalar>(path: &Path, fitted: &FittedStm<T>, vocabulary: &[String]) -> Result<()> {
    let file = ModelFile::from_fitted(fitted, vocabulary);
    let mut text = serde_json::to_string_pretty(&file)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_model_json(path: &Path) -> Result<ModelFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ModelFile = serde_json::from_str(&text)?;
    if file.format != MODEL_FORMAT || file.version != MODEL_FORMAT_VERSION {
        return Err(Error::InvalidArgument(format!(
            "unsupported model format {} v{}",
            file.format, file.version
        )));
    }
    Ok(file)
}

/// One line of the posterior file: mode, Laplace covariance (row-major) and bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredPosterior {
    pub doc_id: String,
    pub eta: Vec<f64>,
    pub nu: Vec<f64>,
    pub bound: f64,
}

impl StoredPosterior {
    pub fn to_posterior<T: Scalar>(&self) -> Result<DocPosterior<T>> {
        let km1 = self.eta.len();
        let eta: Vec<T> = self.eta.iter().map(|&e| T::of(e)).collect();
        Ok(DocPosterior {
            theta: softmax_pinned(&eta),
            nu: from_row_major(km1, km1, &self.nu, "nu")?,
            eta_hat: eta,
            bound: T::of(self.bound),
            phi: Vec::new(),
            newton_iters: 0,
        })
    }
}

pub fn write_posteriors_jsonl<T: Scalar>(path: &Path, doc_ids: &[String], posteriors: &[DocPosterior<T>]) -> Result<()> {
    if doc_ids.len() != posteriors.len() {
        return Err(Error::Alignment("doc ids and posteriors differ in length".into()));
    }
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for (id, p) in doc_ids.iter().zip(posteriors) {
        let stored = StoredPosterior {
            doc_id: id.clone(),
            eta: p.eta_hat.iter().map(|v| v.as_f64()).collect(),
            nu: row_major(&p.nu),
            bound: p.bound.as_f64(),
        };
        serde_json::to_writer(&mut w, &stored)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_posteriors_jsonl(path: &Path) -> Result<Vec<StoredPosterior>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?,
        );
    }
    Ok(out)
}

/// CSV `doc_id,theta_1,...,theta_K`.
pub fn write_theta_csv<T: Scalar>(path: &Path, doc_ids: &[String], posteriors: &[DocPosterior<T>]) -> Result<()> {
    if doc_ids.len() != posteriors.len() {
        return Err(Error::Alignment("doc ids and posteriors differ in length".into()));
    }
    let k = posteriors.first().map(|p| p.theta.len()).unwrap_or(0);
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let io = |e| Error::io(path, e);
    write!(w, "doc_id").map_err(io)?;
    for t in 1..=k {
        write!(w, ",theta_{t}").map_err(io)?;
    }
    writeln!(w).map_err(io)?;
    for (id, p) in doc_ids.iter().zip(posteriors) {
        write!(w, "{}", csv_field(id)).map_err(io)?;
        for v in &p.theta {
            write!(w, ",{}", v.as_f64()).map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// CSV `doc_id,intercept,positive,p_aae,positive_x_p_aae`.
pub fn write_design_csv<T: Scalar>(path: &Path, doc_ids: &[String], design: &PrevalenceDesign<T>) -> Result<()> {
    if doc_ids.len() != design.n_docs() {
        return Err(Error::Alignment("doc ids and design rows differ in length".into()));
    }
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(w, "doc_id,{}", COVARIATE_NAMES.join(",")).map_err(io)?;
    for (d, id) in doc_ids.iter().enumerate() {
        let r = design.row(d);
        writeln!(w, "{},{},{},{},{}", csv_field(id), r[0].as_f64(), r[1].as_f64(), r[2].as_f64(), r[3].as_f64())
            .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Read a design CSV back as document ids and a validated design. The
/// interaction column is recomputed from the label and probability columns.
pub fn read_design_csv<T: Scalar>(path: &Path) -> Result<(Vec<String>, PrevalenceDesign<T>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse { line: 1, message: format!("missing column {name}") })
    };
    let (id_col, pos_col, p_col) = (col("doc_id")?, col("positive")?, col("p_aae")?);
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut p = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let field = |c: usize| rec.get(c).ok_or_else(|| Error::Parse { line, message: "short row".into() });
        let num = |c: usize| -> Result<f64> {
            field(c)?
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse { line, message: e.to_string() })
        };
        ids.push(field(id_col)?.to_string());
        labels.push(match num(pos_col)? {
            1.0 => BinaryLabel::Positive,
            0.0 => BinaryLabel::Normal,
            v => return Err(Error::InvalidCovariate { index: i, value: v }),
        });
        p.push(T::of(num(p_col)?));
    }
    let design = build_design(&labels, &p)?;
    Ok((ids, design))
}
