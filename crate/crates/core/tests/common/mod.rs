#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde_json::Value;
use stmaudit::corpus::DocumentTermMatrix;
use stmaudit::pipeline::PipelineConfig;
use stmaudit::stm::{build_design, PrevalenceDesign, StmModel};
use stmaudit::corpus::BinaryLabel;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn expected(name: &str) -> Value {
    let path = fixture(&format!("expected/{name}"));
    serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap()
}

pub fn load_json(name: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(fixture(name)).unwrap()).unwrap()
}

pub fn f64s(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

pub fn strings(v: &Value) -> Vec<String> {
    v.as_array().unwrap().iter().map(|x| x.as_str().unwrap().to_string()).collect()
}

pub fn matrix(v: &Value) -> DMatrix<f64> {
    let rows: Vec<Vec<f64>> = v.as_array().unwrap().iter().map(f64s).collect();
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    DMatrix::from_row_slice(rows.len(), rows[0].len(), &flat)
}

/// The 8-term, 6-document diagnostics fixture.
pub fn toy_dtm() -> DocumentTermMatrix {
    let toy = load_json("toy_diagnostics.json");
    let vocab = strings(&toy["vocabulary"]);
    let rows: Vec<Vec<(u32, u32)>> = toy["rows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| {
            r.as_array()
                .unwrap()
                .iter()
                .map(|p| (p[0].as_u64().unwrap() as u32, p[1].as_u64().unwrap() as u32))
                .collect()
        })
        .collect();
    let ids = (0..rows.len()).map(|i| format!("t{}", i + 1)).collect();
    DocumentTermMatrix::new(vocab, ids, rows).unwrap()
}

/// K=2, V=3 model with prior mean `mu` and variance `sigma2` on the single
/// free logit (intercept-only design row).
pub fn laplace_toy() -> (StmModel<f64>, Vec<(u32, u32)>) {
    let toy = load_json("laplace_toy.json");
    let beta = matrix(&toy["beta"]);
    let mut gamma = DMatrix::zeros(4, 1);
    gamma[(0, 0)] = toy["mu"].as_f64().unwrap();
    let sigma = DMatrix::from_element(1, 1, toy["sigma2"].as_f64().unwrap());
    let counts = toy["counts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| (p[0].as_u64().unwrap() as u32, p[1].as_u64().unwrap() as u32))
        .collect();
    (StmModel { beta, gamma, sigma }, counts)
}

pub const INTERCEPT_ROW: [f64; 4] = [1.0, 0.0, 0.0, 0.0];

/// E[sigmoid(η)] for η ~ N(mean, var), trapezoid rule over ±12 sd.
pub fn gaussian_sigmoid_mean(mean: f64, var: f64) -> f64 {
    let sd = var.sqrt();
    let n = 20_000;
    let (lo, hi) = (mean - 12.0 * sd, mean + 12.0 * sd);
    let h = (hi - lo) / n as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..=n {
        let e = lo + i as f64 * h;
        let w = if i == 0 || i == n { 0.5 } else { 1.0 };
        let dens = (-(e - mean).powi(2) / (2.0 * var)).exp();
        num += w * dens / (1.0 + (-e).exp());
        den += w * dens;
    }
    num / den
}

/// Design from the 6-document OLS fixture plus its response column.
pub fn ols_six() -> (Vec<String>, PrevalenceDesign<f64>, Vec<f64>) {
    let mut rdr = csv::Reader::from_path(fixture("ols_six.csv")).unwrap();
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut p = Vec::new();
    let mut y = Vec::new();
    for rec in rdr.records() {
        let rec = rec.unwrap();
        ids.push(rec[0].to_string());
        labels.push(if &rec[1] == "1" { BinaryLabel::Positive } else { BinaryLabel::Normal });
        p.push(rec[2].parse::<f64>().unwrap());
        y.push(rec[3].parse::<f64>().unwrap());
    }
    (ids, build_design(&labels, &p).unwrap(), y)
}

/// Micro-corpus run settings: toy dialect model, min_df 2, a small K.
pub fn micro_config(out: &Path, k: usize) -> PipelineConfig {
    let mut config = PipelineConfig::new(fixture("micro_corpus.jsonl"), fixture("toy_dialect.tsv"), out.to_path_buf());
    config.min_df = 2;
    config.k = k;
    config.seed = 7;
    config.em.max_em_iters = 30;
    config.effects.draws = 5;
    config.effects.sims = 100;
    config
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
