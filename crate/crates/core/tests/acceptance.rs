//! One PASS/FAIL line per acceptance criterion. Runs as a plain binary so
//! the lines are always printed; exits non-zero if any criterion fails.

mod common;

use std::time::Instant;

use appearance_elements::clustering::ElementPartition;
use appearance_elements::clustering::{
    adjusted_rand_index, assign, attribute_report, kmeans, kmeans_rows, report_vocabulary,
    KmeansConfig,
};
use appearance_elements::container::{Container, ContainerError, HEADER_LEN};
use appearance_elements::corpus::{
    generate_corpus, render_pedestrian, AttributeType, CorpusConfig, Validator,
};
use appearance_elements::embedding::{load_embeddings, save_embeddings, EmbeddingError};
use appearance_elements::fidelity::{gradient_suite, PATHS};
use appearance_elements::integration::{reference_loss, IntegrationConfig, IntegrationModule};
use appearance_elements::numerics::{derived_stream, init};
use appearance_elements::prompting::{
    classify_element, compose_elements, prompt_tune, ClassifierHead, PromptSet, TuneConfig,
};
use appearance_elements::toy::{
    ablation_k_sweep, overhead_report, sweep_summary, SweepConfig, ToyModel,
};
use ndarray::Axis;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let checks = gradient_suite(20).expect("suite runs");
    let secs = start.elapsed().as_secs_f64();
    let worst: Vec<String> = PATHS
        .iter()
        .map(|p| {
            let m = checks
                .iter()
                .filter(|c| c.path == *p)
                .map(|c| c.report.max_rel_error)
                .fold(0.0, f64::max);
            format!("{p} {m:.1e}")
        })
        .collect();
    let pass = checks.iter().all(|c| c.passed()) && secs < 60.0;
    outcome(
        pass,
        format!(
            "{} paths x 20 seeds in {secs:.2}s; worst: {}",
            PATHS.len(),
            worst.join(", ")
        ),
    )
}

fn dot_assignment_oracle() -> Outcome {
    let mut mismatches = 0;
    let sizes = [(50, 8), (200, 128), (1_000, 64)];
    for (k, d) in sizes {
        let mut rng = derived_stream(k as u64, "acceptance/eq1", &[d as u64]);
        let c = init::normal(k, d, 1.0, &mut rng);
        let probes = init::normal(1_000, d, 1.0, &mut rng);
        for p in probes.rows() {
            let mut best = (0, f64::NEG_INFINITY);
            for j in 0..k {
                let dot: f64 = (0..d).map(|t| p[t] * c[[j, t]]).sum();
                if dot > best.1 {
                    best = (j, dot);
                }
            }
            mismatches += usize::from(assign(p, &c).expect("dims agree") != best.0);
        }
    }
    outcome(
        mismatches == 0,
        format!("1000 probes x K in {{50, 200, 1000}}: {mismatches} mismatches"),
    )
}

fn reference_identities() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;
    for k in [4usize, 50, 200] {
        let mut exact = true;
        for n_bg in 1..k {
            let labels: Vec<u8> = (0..k).map(|i| u8::from(i >= n_bg)).collect();
            let p = ElementPartition::from_labels(labels);
            let row = vec![1.0 / k as f64; k];
            for is_ped in [true, false] {
                exact &= reference_loss(&row, &p, is_ped).expect("valid") == 1.0 / k as f64;
            }
        }
        pass &= exact;
        notes.push(format!(
            "uniform K={k} {}",
            if exact { "exact" } else { "INEXACT" }
        ));
    }
    let p = ElementPartition::from_labels(vec![1, 1, 0, 0]);
    let zero = reference_loss(&[0.6, 0.4, 0.0, 0.0], &p, true).expect("valid");
    let hand = reference_loss(&[0.4, 0.3, 0.2, 0.1], &p, true).expect("valid");
    pass &= zero == 0.0 && (hand - 0.15).abs() <= 1e-15;
    notes.push(format!("correct-side {zero}, hand case {hand}"));

    let m = IntegrationModule::init(IntegrationConfig::new(8, 6, 8, 1), 5).expect("valid");
    let mut strict = m.clone();
    strict.cfg.strict_single_softmax = true;
    let mut rng = derived_stream(5, "acceptance/strict", &[]);
    let q = init::normal(9, 8, 1.0, &mut rng);
    let e = init::normal(13, 6, 1.0, &mut rng);
    let same =
        strict.reference_attention(&q, &e).expect("dims") == m.forward(&q, &e).expect("dims").1;
    pass &= same;
    notes.push(format!("strict = head mean at H=1: {same}"));
    outcome(pass, notes.join("; "))
}

fn kmeans_properties(p: &common::Pipeline) -> Outcome {
    let mut runs = 0;
    let mut monotone = true;
    let mut min_ari = f64::INFINITY;
    for seed in 0..5u64 {
        let mut rng = derived_stream(seed, "acceptance/planted", &[]);
        let mut x = init::normal(800, 16, 1.0, &mut rng);
        let truth: Vec<usize> = (0..800).map(|i| i / 200).collect();
        for (i, mut row) in x.rows_mut().into_iter().enumerate() {
            row[truth[i]] += 10.0 / 2f64.sqrt();
        }
        let (_, stats, found) = kmeans_rows(&x, &KmeansConfig::new(4, seed)).expect("valid");
        monotone &= stats.history.windows(2).all(|w| w[1] <= w[0]);
        runs += 1;
        min_ari = min_ari.min(adjusted_rand_index(&truth, &found));
    }
    let rows = p.set.to_f64();
    let (c, stats, _) = kmeans_rows(&rows, &KmeansConfig::new(1, 0)).expect("valid");
    monotone &= stats.history.windows(2).all(|w| w[1] <= w[0]);
    runs += 1;
    let mean = rows.mean_axis(Axis(0)).expect("non-empty");
    let mean_err = c
        .row(0)
        .iter()
        .zip(&mean)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    for k in [100, 200, 300] {
        for seed in 0..3 {
            let cs = kmeans(&p.set, &KmeansConfig::new(k, seed)).expect("valid");
            monotone &= cs.stats.history.windows(2).all(|w| w[1] <= w[0]);
            runs += 1;
        }
    }
    outcome(
        monotone && min_ari >= 0.99 && mean_err <= 1e-12,
        format!(
            "{runs} runs monotone: {monotone}; planted ARI min {min_ari:.4} over 5 seeds; K=1 max |c - mean| {mean_err:.1e}"
        ),
    )
}

fn corpus_properties(p: &common::Pipeline) -> Outcome {
    let validator = Validator::new(&p.lex);
    let conforming = p
        .corpus
        .descriptions
        .iter()
        .filter(|d| validator.validate(&d.text).conforms)
        .count();
    let cfg = CorpusConfig {
        n_ped: 5_000,
        n_bg: 5_000,
        seed: 7,
        external_bg_file: None,
    };
    let bytes = || {
        let mut out = Vec::new();
        generate_corpus(&cfg, &p.lex)
            .expect("valid")
            .write_jsonl(&mut out)
            .expect("in memory");
        out
    };
    let identical = bytes() == bytes();
    let n = 10_000;
    let mut included = [0usize; 8];
    for i in 0..n {
        let d = render_pedestrian(
            &mut derived_stream(11, "acceptance/inclusion", &[i]),
            &p.lex,
        );
        let parsed = validator.validate(&d.text);
        for (k, ty) in AttributeType::ALL.iter().enumerate() {
            included[k] += usize::from(parsed.attributes.contains_key(ty));
        }
    }
    let rates: Vec<f64> = included.iter().map(|&c| c as f64 / n as f64).collect();
    let (lo, hi) = rates
        .iter()
        .fold((1.0f64, 0.0f64), |(l, h), &r| (l.min(r), h.max(r)));
    outcome(
        conforming == p.corpus.len() && identical && lo >= 0.48 && hi <= 0.52,
        format!(
            "conformance {conforming}/{}; seed-7 regeneration identical: {identical}; inclusion rates {lo:.4}..{hi:.4} over {n} renders",
            p.corpus.len()
        ),
    )
}

fn task_prompting(p: &common::Pipeline) -> Outcome {
    let tuned = common::tuned();
    let bce = *tuned.curve.last().expect("epochs > 0");
    let elements = compose_elements(&p.centroids.centroids, &tuned.prompts, p.partition.clone())
        .expect("shapes agree");
    let (mut populated, mut agree, mut all_agree) = (0, 0, 0);
    for k in 0..common::K {
        let hit = u8::from(classify_element(elements.elements.row(k), &tuned.head) > 0.5)
            == elements.partition.labels[k];
        all_agree += usize::from(hit);
        if !elements.partition.members[k].is_empty() {
            populated += 1;
            agree += usize::from(hit);
        }
    }
    let zero = TuneConfig {
        epochs: 0,
        ..Default::default()
    };
    let id = prompt_tune(
        &p.assignments,
        p.set.labels(),
        &p.centroids.centroids,
        &zero,
    )
    .expect("valid");
    let identity = id.prompts == PromptSet::zeros(common::K, common::DIM)
        && id.head == ClassifierHead::init(common::DIM, zero.hidden, zero.seed);
    outcome(
        bce < 0.1 && agree == populated && identity,
        format!(
            "final BCE {bce:.4}; agreement {agree}/{populated} populated elements ({} empty; {all_agree}/{} over all K); epochs=0 identity: {identity}",
            common::K - populated,
            common::K
        ),
    )
}

fn element_balance(p: &common::Pipeline) -> Outcome {
    let f = p.partition.pedestrian_fraction();
    let report = attribute_report(
        &p.partition,
        &p.corpus.descriptions,
        &p.assignments,
        &p.lex,
        8,
    )
    .expect("lengths agree");
    let vocab = report_vocabulary(&p.lex);
    let padded: Vec<String> = p
        .corpus
        .descriptions
        .iter()
        .map(|d| {
            let t: String = d
                .text
                .chars()
                .map(|c| {
                    if c.is_alphanumeric() || c == '-' || c == '\'' {
                        c.to_ascii_lowercase()
                    } else {
                        ' '
                    }
                })
                .collect();
            format!(" {} ", t.split_whitespace().collect::<Vec<_>>().join(" "))
        })
        .collect();
    let mut mismatched = 0;
    for (&k, s) in &report.elements {
        let members = &p.partition.members[k];
        for (value, freq) in &s.top {
            assert!(vocab.contains(value));
            let needle = format!(" {} ", value.to_lowercase());
            let n = members
                .iter()
                .filter(|&&i| padded[i].contains(&needle))
                .count();
            mismatched += usize::from(n as f64 / members.len() as f64 != *freq);
        }
    }
    outcome(
        (0.40..=0.60).contains(&f) && mismatched == 0,
        format!(
            "pedestrian elements {}/{} ({:.3}); report recount mismatches {mismatched}",
            p.partition.pedestrian().len(),
            common::K,
            f
        ),
    )
}

fn k_sweep(p: &common::Pipeline) -> Outcome {
    let start = Instant::now();
    let cfg = SweepConfig::default();
    let entries = ablation_k_sweep(&p.set, &p.lex, &cfg).expect("sweep runs");
    let secs = start.elapsed().as_secs_f64();
    let summary = sweep_summary(&entries);
    let base = summary.iter().find(|s| s.0 == 0).expect("K=0 present").1;
    let fused: Vec<&(usize, f64, f64)> = summary.iter().filter(|s| s.0 > 0).collect();
    let above = fused.iter().all(|s| s.1 >= base);
    let (lo, hi) = fused
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), s| {
            (l.min(s.1), h.max(s.1))
        });
    let spread = (hi - lo) * 100.0;
    let mut mass_ok = true;
    let mut masses = Vec::new();
    for &(k, _, _) in &fused {
        let of_k: Vec<_> = entries.iter().filter(|e| e.k == *k).collect();
        let mean = |f: &dyn Fn(&&appearance_elements::toy::SweepEntry) -> f64| {
            of_k.iter().map(f).sum::<f64>() / of_k.len() as f64
        };
        let init_mass = mean(&|e| e.initial_ref_mass.expect("fused run"));
        let final_mass = mean(&|e| e.ref_mass.expect("fused run"));
        mass_ok &= (init_mass - 0.5).abs() <= 0.1 && final_mass >= 0.9;
        masses.push(format!("K={k} {init_mass:.3}->{final_mass:.3}"));
    }
    let accs: Vec<String> = summary
        .iter()
        .map(|(k, m, s)| format!("K={k} {:.2}+-{:.2}", m * 100.0, s * 100.0))
        .collect();
    outcome(
        above && spread <= 2.0 && mass_ok,
        format!(
            "acc {}; spread {spread:.2} pts; mass {}; {secs:.0}s",
            accs.join(", "),
            masses.join(", ")
        ),
    )
}

fn parameter_overhead() -> Outcome {
    let (d_v, d, d_m, h) = (64usize, 768usize, 64usize, 8usize);
    let formula = d_v * d_m + 2 * d * d_m + d_m * d_v + 2 * d_v + 3 * d_m + d_v;
    let cfg = IntegrationConfig::new(d_v, d, d_m, h);
    let m = IntegrationModule::init(cfg, 0).expect("valid");
    let counted = m.param_count();
    let report = || {
        let with = ToyModel::with_module(cfg, 0).expect("valid");
        serde_json::to_vec(&overhead_report(&with, &ToyModel::baseline(d_v, 0)))
            .expect("serialises")
    };
    let (a, b) = (report(), report());
    outcome(
        counted == formula && cfg.param_count() == formula && a == b,
        format!(
            "module params {counted} (formula {formula}); report {}; identical on rerun: {}",
            String::from_utf8_lossy(&a),
            a == b
        ),
    )
}

fn file_format(p: &common::Pipeline) -> Outcome {
    let dir = tempfile::tempdir().expect("temp dir");
    let path = dir.path().join("set.ldae");
    save_embeddings(&p.set, &path).expect("writes");
    let back = load_embeddings(&path).expect("reads");
    let bits_equal = back
        .data()
        .iter()
        .zip(p.set.data())
        .all(|(a, b)| a.to_bits() == b.to_bits())
        && back.labels() == p.set.labels()
        && back == p.set;
    let bytes = std::fs::read(&path).expect("reads");
    let mut bad = bytes.clone();
    bad[..4].copy_from_slice(b"XXXX");
    std::fs::write(&path, &bad).expect("writes");
    let magic = matches!(
        load_embeddings(&path),
        Err(EmbeddingError::Container(ContainerError::BadMagic(_)))
    );
    let mut truncations = 0;
    let mut designated = 0;
    let cuts = [
        0,
        3,
        HEADER_LEN - 1,
        HEADER_LEN,
        HEADER_LEN + 10,
        bytes.len() / 2,
        bytes.len() - 1,
    ];
    for cut in cuts {
        truncations += 1;
        designated += usize::from(matches!(
            Container::decode(&bytes[..cut]),
            Err(ContainerError::Truncated { .. })
        ));
    }
    outcome(
        bits_equal && magic && designated == truncations,
        format!(
            "{}x{} round trip bit-exact: {bits_equal}; bad magic: {magic}; truncations reported {designated}/{truncations}",
            p.set.count(),
            p.set.dim()
        ),
    )
}

fn main() {
    let p = common::pipeline();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("gradient fidelity", Box::new(gradient_fidelity)),
        (
            "dot-product assignment oracle",
            Box::new(dot_assignment_oracle),
        ),
        ("reference loss identities", Box::new(reference_identities)),
        ("k-means", Box::new(|| kmeans_properties(p))),
        ("corpus", Box::new(|| corpus_properties(p))),
        ("task prompting", Box::new(|| task_prompting(p))),
        (
            "element balance and attribute report",
            Box::new(|| element_balance(p)),
        ),
        ("K sweep", Box::new(|| k_sweep(p))),
        ("parameter overhead", Box::new(parameter_overhead)),
        ("file format", Box::new(|| file_format(p))),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let o = check();
        failed += usize::from(!o.pass);
        println!(
            "{} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
