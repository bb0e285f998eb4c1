mod common;

use common::{expected, f64s, fixture, strings};
use proptest::prelude::*;
use stmaudit::corpus::{default_stopwords, load_corpus, normalize_text, CorpusFormat};
use stmaudit::dialect::{fit_mixture, load_dialect_model, score_corpus, score_document, DialectModel, N_CLASSES};

const FIXED_POINT_TOL: f64 = 1e-9;

fn toy() -> DialectModel<f64> {
    load_dialect_model(&fixture("toy_dialect.tsv")).unwrap()
}

fn assert_simplex(pi: &[f64; N_CLASSES]) {
    assert!(pi.iter().all(|&p| p >= 0.0));
    assert!((pi.iter().sum::<f64>() - 1.0).abs() <= 1e-12, "{pi:?}");
}

#[test]
fn normalized_table_matches_reference() {
    let exp = expected("dialect.json");
    let model = toy();
    assert_eq!(model.classes().to_vec(), strings(&exp["classes"]));
    let table = exp["table"].as_object().unwrap();
    assert_eq!(model.vocabulary_size(), table.len());
    for (term, want) in table {
        let got = model.probabilities(term).unwrap();
        assert!(common::max_abs_diff(got, &f64s(want)) <= 1e-15, "{term}");
    }
    // the all-zero row is out of vocabulary
    assert!(model.probabilities("zzz").is_none());
}

#[test]
fn per_document_fixed_points() {
    let exp = expected("dialect.json");
    let model = toy();
    let stop = default_stopwords();
    let corpus = load_corpus(&fixture("micro_corpus.jsonl"), CorpusFormat::Jsonl).unwrap();
    let docs = exp["documents"].as_object().unwrap();
    let mut scored = 0;
    for d in corpus.documents() {
        let tokens = normalize_text(&d.text, &stop);
        match (fit_mixture(&model, &tokens), docs.get(&d.id)) {
            (Some(fit), Some(want)) => {
                scored += 1;
                let diff = common::max_abs_diff(&fit.pi, &f64s(&want["pi"]));
                assert!(diff <= FIXED_POINT_TOL, "{}: {diff}", d.id);
                assert_eq!(fit.iterations as u64, want["iterations"].as_u64().unwrap(), "{}", d.id);
                // the stopping rule leaves pi within a few tolerances of the 100-iteration value
                assert!(common::max_abs_diff(&fit.pi, &f64s(&want["pi_100"])) <= 1e-8);
                assert_eq!(fit.n_scored_tokens as u64, want["n_scored"].as_u64().unwrap());
                let first = want["loglik_first"].as_f64().unwrap();
                assert!((fit.loglik_trace[0] - first).abs() <= 1e-12 * first.abs());
                assert_simplex(&fit.pi);
            }
            (None, None) => {}
            (got, want) => panic!("{}: scored {} but reference {}", d.id, got.is_some(), want.is_some()),
        }
    }
    assert_eq!(scored, docs.len());
}

#[test]
fn hand_picked_examples() {
    let exp = expected("dialect.json");
    let model = toy();
    for (name, want) in exp["examples"].as_object().unwrap() {
        let tokens = strings(&want["tokens"]);
        let fit = fit_mixture(&model, &tokens).unwrap();
        let diff = common::max_abs_diff(&fit.pi, &f64s(&want["pi"]));
        assert!(diff <= FIXED_POINT_TOL, "{name}: {diff}");
        assert_eq!(fit.n_scored_tokens as u64, want["n_scored"].as_u64().unwrap());
    }
}

#[test]
fn loglik_non_decreasing_on_every_document() {
    let model = toy();
    let stop = default_stopwords();
    let corpus = load_corpus(&fixture("micro_corpus.jsonl"), CorpusFormat::Jsonl).unwrap();
    for d in corpus.documents() {
        if let Some(fit) = fit_mixture(&model, &normalize_text(&d.text, &stop)) {
            for w in fit.loglik_trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-12, "{}: {} -> {}", d.id, w[0], w[1]);
            }
        }
    }
}

#[test]
fn mixed_five_and_unscoreable() {
    let exp = expected("dialect.json");
    let model = toy();
    let stop = default_stopwords();
    let corpus = load_corpus(&fixture("micro_corpus.jsonl"), CorpusFormat::Jsonl).unwrap();
    let ids: Vec<String> = corpus.documents().iter().map(|d| d.id.clone()).collect();
    let tokens: Vec<Vec<String>> = corpus.documents().iter().map(|d| normalize_text(&d.text, &stop)).collect();

    let five = strings(&exp["mixed_five"]);
    let pick: Vec<usize> = five.iter().map(|id| ids.iter().position(|x| x == id).unwrap()).collect();
    let sub_ids: Vec<String> = pick.iter().map(|&i| ids[i].clone()).collect();
    let sub_tokens: Vec<Vec<String>> = pick.iter().map(|&i| tokens[i].clone()).collect();
    let scores = score_corpus(&model, &sub_ids, &sub_tokens).unwrap();
    assert!(scores.dropped_doc_ids.is_empty());
    for p in &scores.posteriors {
        let want = f64s(&exp["documents"][&p.doc_id]["pi"]);
        assert!(common::max_abs_diff(&p.pi, &want) <= FIXED_POINT_TOL);
        assert_eq!(p.p_aae, p.pi[model.aae_index()]);
    }

    let all = score_corpus(&model, &ids, &tokens).unwrap();
    let scored: Vec<&str> = all.posteriors.iter().map(|p| p.doc_id.as_str()).collect();
    let want: Vec<&str> = ids.iter().map(String::as_str).filter(|id| exp["documents"].get(*id).is_some()).collect();
    assert_eq!(scored, want);
    // m09 and m29 are mentions and URLs only
    assert!(all.dropped_doc_ids.contains(&"m09".to_string()));
    assert!(all.dropped_doc_ids.contains(&"m29".to_string()));
}

#[test]
fn exclusive_tokens_force_the_class() {
    let model = toy();
    let fit = score_document(&model, "x", &["homie", "homie"]).unwrap();
    assert!((fit.pi[model.aae_index()] - 1.0).abs() < 1e-9, "{:?}", fit.pi);
}

fn weights() -> Vec<(String, [f64; N_CLASSES])> {
    let text = std::fs::read_to_string(fixture("toy_dialect.tsv")).unwrap();
    text.lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            (f[0].to_string(), std::array::from_fn(|c| f[c + 1].parse().unwrap()))
        })
        .collect()
}

fn classes() -> [String; N_CLASSES] {
    ["sae", "aae", "hispanic", "asian"].map(String::from)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn token_order_does_not_matter(idx in prop::collection::vec(0usize..50, 1..12), seed in any::<u64>()) {
        let model = toy();
        let w = weights();
        let tokens: Vec<String> = idx.iter().map(|&i| w[i].0.clone()).collect();
        let mut shuffled = tokens.clone();
        // deterministic Fisher-Yates from the seed
        let mut s = seed;
        for i in (1..shuffled.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        let a = fit_mixture(&model, &tokens);
        let b = fit_mixture(&model, &shuffled);
        prop_assert_eq!(a.is_some(), b.is_some());
        if let (Some(a), Some(b)) = (a, b) {
            prop_assert_eq!(a.pi, b.pi);
        }
    }

    #[test]
    fn column_scaling_is_absorbed(
        idx in prop::collection::vec(0usize..50, 1..12),
        class in 0usize..N_CLASSES,
        factor in 0.01f64..100.0,
    ) {
        let base = DialectModel::<f64>::from_weights(classes(), weights()).unwrap();
        let scaled_rows = weights()
            .into_iter()
            .map(|(t, mut w)| {
                w[class] *= factor;
                (t, w)
            })
            .collect();
        let scaled = DialectModel::<f64>::from_weights(classes(), scaled_rows).unwrap();
        let w = weights();
        let tokens: Vec<String> = idx.iter().map(|&i| w[i].0.clone()).collect();
        if let (Some(a), Some(b)) = (fit_mixture(&base, &tokens), fit_mixture(&scaled, &tokens)) {
            prop_assert!(common::max_abs_diff(&a.pi, &b.pi) <= 1e-9);
        }
    }

    #[test]
    fn simplex_and_monotone(idx in prop::collection::vec(0usize..50, 1..20)) {
        let model = toy();
        let w = weights();
        let tokens: Vec<String> = idx.iter().map(|&i| w[i].0.clone()).collect();
        if let Some(fit) = fit_mixture(&model, &tokens) {
            prop_assert!(fit.pi.iter().all(|&p| p >= 0.0));
            prop_assert!((fit.pi.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            for pair in fit.loglik_trace.windows(2) {
                prop_assert!(pair[1] >= pair[0] - 1e-12);
            }
        }
    }
}
