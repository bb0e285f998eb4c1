use nalgebra::DMatrix;
use proptest::prelude::*;
use stmaudit::corpus::DocumentTermMatrix;
use stmaudit::stm::{read_design_csv, write_design_csv};
use stmaudit::synth::{align_topics, generate_corpus, read_truth_json, write_truth_json, GroundTruth, SynthShape};

fn shape(docs: usize, terms: usize, topics: usize) -> SynthShape {
    SynthShape { docs, terms, topics, mean_length: 30.0, ..Default::default() }
}

#[test]
fn truth_and_corpus_round_trip_through_files() {
    let truth = GroundTruth::<f64>::sample(&shape(80, 25, 3), 5).unwrap().with_planted_interaction(1, 2.0);
    let corpus = generate_corpus(&truth, 5).unwrap();
    let dir = tempfile::tempdir().unwrap();

    let tpath = dir.path().join("truth.json");
    write_truth_json(&tpath, &truth).unwrap();
    let file = read_truth_json(&tpath).unwrap();
    assert_eq!(file.n_topics, 3);
    assert_eq!(file.n_terms, 25);
    assert_eq!(DMatrix::from_row_slice(3, 25, &file.beta), truth.beta_true);
    assert_eq!(DMatrix::from_row_slice(4, 2, &file.gamma), truth.gamma_true);
    assert_eq!(file.gamma[3 * 2 + 1], 2.0);
    assert_eq!(file.doc_lengths, truth.doc_lengths);

    corpus.dtm.write_dir(dir.path()).unwrap();
    let back = DocumentTermMatrix::read_dir(dir.path()).unwrap();
    assert_eq!(back.rows(), corpus.dtm.rows());
    for d in 0..back.n_docs() {
        assert_eq!(back.doc_total(d), truth.doc_lengths[d] as u64);
    }

    let dpath = dir.path().join("design.csv");
    write_design_csv(&dpath, corpus.dtm.doc_ids(), &truth.design_true).unwrap();
    let (ids, design) = read_design_csv::<f64>(&dpath).unwrap();
    assert_eq!(ids, corpus.dtm.doc_ids());
    assert_eq!(design, truth.design_true);
}

#[test]
fn long_document_matches_its_mixture() {
    let mut truth = GroundTruth::<f64>::sample(&shape(1, 20, 3), 9).unwrap();
    truth.doc_lengths = vec![100_000];
    let corpus = generate_corpus(&truth, 9).unwrap();
    let theta = &corpus.theta_true[0];
    let n = corpus.dtm.doc_total(0) as f64;
    let mut empirical = [0.0; 20];
    for &(v, c) in corpus.dtm.row(0) {
        empirical[v as usize] = c as f64 / n;
    }
    for v in 0..20 {
        let p: f64 = (0..3).map(|k| theta[k] * truth.beta_true[(k, v)]).sum();
        assert!((empirical[v] - p).abs() < 0.01, "term {v}: {} vs {p}", empirical[v]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generated_theta_on_simplex(seed in any::<u64>(), k in 1usize..5) {
        let truth = GroundTruth::<f64>::sample(&shape(30, 15, k), seed).unwrap();
        let corpus = generate_corpus(&truth, seed).unwrap();
        for th in &corpus.theta_true {
            prop_assert_eq!(th.len(), k);
            prop_assert!(th.iter().all(|&t| t >= 0.0));
            prop_assert!((th.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        for row in truth.beta_true.row_iter() {
            prop_assert!((row.sum() - 1.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn alignment_is_a_bijection(
        raw_a in prop::collection::vec(0.0f64..1.0, 24),
        raw_b in prop::collection::vec(0.0f64..1.0, 24),
        k in 1usize..5,
    ) {
        let v = 24 / k;
        let a = DMatrix::from_row_slice(k, v, &raw_a[..k * v]);
        let b = DMatrix::from_row_slice(k, v, &raw_b[..k * v]);
        prop_assume!(a.row_iter().all(|r| r.sum() > 0.0) && b.row_iter().all(|r| r.sum() > 0.0));
        let al = align_topics(&a, &b).unwrap();
        let mut seen = al.permutation.clone();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..k).collect::<Vec<_>>());
        prop_assert!(al.cosines.iter().all(|c| (-1e-12..=1.0 + 1e-12).contains(c)));
    }
}
