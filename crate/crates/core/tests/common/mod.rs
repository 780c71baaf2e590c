//! Default pipeline shared by the integration tests: the balanced 5000+5000
//! corpus, 128-wide pseudo embeddings, K=200 centroids and
//! dot-product assignments.
#![allow(dead_code)]

use std::sync::OnceLock;

use appearance_elements::clustering::{
    assign_all, kmeans, label_elements, CentroidSet, ElementPartition, KmeansConfig,
};
use appearance_elements::corpus::{
    build_lexicon, generate_corpus, AttributeLexicon, Corpus, CorpusConfig,
};
use appearance_elements::embedding::{AppearanceKnowledgeSet, PseudoEncoder};

pub const K: usize = 200;
pub const DIM: usize = 128;

pub struct Pipeline {
    pub lex: AttributeLexicon,
    pub corpus: Corpus,
    pub set: AppearanceKnowledgeSet,
    pub centroids: CentroidSet,
    pub assignments: Vec<usize>,
    pub partition: ElementPartition,
}

pub fn pipeline() -> &'static Pipeline {
    static P: OnceLock<Pipeline> = OnceLock::new();
    P.get_or_init(|| {
        let lex = build_lexicon();
        let corpus = generate_corpus(&CorpusConfig::default(), &lex).unwrap();
        let set = PseudoEncoder::new(DIM, 0, &lex)
            .unwrap()
            .encode_all(&corpus.descriptions);
        let centroids = kmeans(&set, &KmeansConfig::new(K, 0)).unwrap();
        let assignments = assign_all(&set.to_f64(), &centroids.centroids).unwrap();
        let partition = label_elements(&assignments, set.labels(), K).unwrap();
        Pipeline {
            lex,
            corpus,
            set,
            centroids,
            assignments,
            partition,
        }
    })
}

pub fn tuned() -> &'static appearance_elements::prompting::TuneOutcome {
    use appearance_elements::prompting::{prompt_tune, TuneConfig};
    static T: OnceLock<appearance_elements::prompting::TuneOutcome> = OnceLock::new();
    T.get_or_init(|| {
        let p = pipeline();
        prompt_tune(
            &p.assignments,
            p.set.labels(),
            &p.centroids.centroids,
            &TuneConfig::default(),
        )
        .unwrap()
    })
}
