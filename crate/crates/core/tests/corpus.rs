use appearance_elements::corpus::{
    build_lexicon, generate_corpus, read_jsonl, render_background, render_pedestrian,
    sample_pedestrian, validate_description, AttributeType, Category, CorpusConfig, CorpusError,
    Validator, ATTRIBUTE_PROBABILITY,
};
use appearance_elements::numerics::{derived_stream, stream};

fn config(n_ped: usize, n_bg: usize, seed: u64) -> CorpusConfig {
    CorpusConfig {
        n_ped,
        n_bg,
        seed,
        external_bg_file: None,
    }
}

fn jsonl(cfg: &CorpusConfig) -> Vec<u8> {
    let corpus = generate_corpus(cfg, &build_lexicon()).unwrap();
    let mut out = Vec::new();
    corpus.write_jsonl(&mut out).unwrap();
    out
}

// frozen from the first run
const GOLDEN_SEED_42: &str =
    "A jpeg corrupted photo of a small commuter in blue playing soccer in the scene.";

#[test]
fn seed_42_golden_string() {
    let lex = build_lexicon();
    let d = render_pedestrian(&mut stream(42), &lex);
    assert_eq!(d.text, GOLDEN_SEED_42);
    let report = validate_description(&d.text, &lex);
    assert!(report.conforms, "{report:?}");
    assert_eq!(report.category, Some(Category::Pedestrian));
    assert_eq!(report.attributes, d.attributes);
}

#[test]
fn regeneration_is_byte_identical() {
    let cfg = config(5_000, 5_000, 7);
    let a = jsonl(&cfg);
    let b = jsonl(&cfg);
    assert!(!a.is_empty());
    assert!(a == b, "two runs with seed 7 differ");
    assert_ne!(a, jsonl(&config(5_000, 5_000, 8)));
}

#[test]
fn default_counts_are_exact() {
    let corpus = generate_corpus(&CorpusConfig::default(), &build_lexicon()).unwrap();
    assert_eq!(corpus.counts.pedestrian, 5_000);
    assert_eq!(corpus.counts.background, 5_000);
    let ped = corpus
        .descriptions
        .iter()
        .filter(|d| d.category == Category::Pedestrian)
        .count();
    assert_eq!(ped, 5_000);
    assert_eq!(corpus.len(), 10_000);
}

#[test]
fn every_generated_line_conforms() {
    let lex = build_lexicon();
    let corpus = generate_corpus(&CorpusConfig::default(), &lex).unwrap();
    let validator = Validator::new(&lex);
    for d in &corpus.descriptions {
        let r = validator.validate(&d.text);
        assert!(r.conforms, "{:?}: {:?}", d.text, r.reason);
        assert_eq!(r.category, Some(d.category), "{}", d.text);
        assert_eq!(r.template_id, d.template_id, "{}", d.text);
        if d.category == Category::Pedestrian {
            assert_eq!(r.attributes, d.attributes, "{}", d.text);
        }
    }
}

#[test]
fn jsonl_round_trip() {
    let cfg = config(300, 300, 3);
    let bytes = jsonl(&cfg);
    let back = read_jsonl(bytes.as_slice()).unwrap();
    let corpus = generate_corpus(&cfg, &build_lexicon()).unwrap();
    assert_eq!(back, corpus.descriptions);
}

#[test]
fn zero_pedestrians_is_a_precondition_error() {
    let err = generate_corpus(&config(0, 10, 0), &build_lexicon()).unwrap_err();
    assert!(matches!(err, CorpusError::EmptyRequest { field: "n_ped" }));
}

#[test]
fn attribute_inclusion_rate_over_ten_thousand_renders() {
    let lex = build_lexicon();
    let validator = Validator::new(&lex);
    let n = 10_000;
    let mut included = [0usize; AttributeType::ALL.len()];
    for i in 0..n {
        let mut rng = derived_stream(11, "test/inclusion", &[i]);
        let d = render_pedestrian(&mut rng, &lex);
        // count from the rendered text, not from the sampler
        let parsed = validator.validate(&d.text);
        assert!(parsed.conforms, "{}", d.text);
        for (k, ty) in AttributeType::ALL.iter().enumerate() {
            included[k] += usize::from(parsed.attributes.contains_key(ty));
        }
    }
    for (k, ty) in AttributeType::ALL.iter().enumerate() {
        let rate = included[k] as f64 / n as f64;
        assert!(
            (rate - ATTRIBUTE_PROBABILITY).abs() <= 0.02,
            "{}: rate {rate}",
            ty.as_str()
        );
    }
}

#[test]
fn sampler_draws_are_position_independent() {
    let lex = build_lexicon();
    let a = sample_pedestrian(&mut derived_stream(5, "test/pos", &[3]), &lex);
    let b = sample_pedestrian(&mut derived_stream(5, "test/pos", &[3]), &lex);
    assert_eq!(a, b);
}

#[test]
fn background_renders_never_name_a_pedestrian() {
    let lex = build_lexicon();
    for i in 0..2_000 {
        let d = render_background(&mut derived_stream(9, "test/bg", &[i]), &lex);
        assert_eq!(d.category, Category::Background);
        let words = appearance_elements::corpus::words(&d.text);
        assert!(
            !words.iter().any(|w| lex.is_pedestrian_word(w)),
            "{}",
            d.text
        );
    }
}

#[test]
fn external_background_lines_are_ingested() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bg.txt");
    std::fs::write(
        &path,
        "A rusty mailbox by the road.\nA pedestrian waiting.\n\nA rusty mailbox by the road.\n",
    )
    .unwrap();
    let mut cfg = config(20, 20, 1);
    cfg.external_bg_file = Some(path);
    let corpus = generate_corpus(&cfg, &build_lexicon()).unwrap();
    assert_eq!(corpus.ingest.accepted, 1);
    assert_eq!(corpus.ingest.filtered, 1);
    assert_eq!(corpus.ingest.duplicates, 1);
    assert_eq!(corpus.counts.background, 21);
    let last = corpus.descriptions.last().unwrap();
    assert_eq!(last.template_id, None);
    assert_eq!(last.category, Category::Background);
}
