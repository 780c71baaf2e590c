//! One function per subcommand. Each reads its inputs from the output
//! directory, writes its artifacts there and returns their names.

use std::path::Path;

use appearance_elements::clustering::{
    assign_all, assignment_disagreement, attribute_report, kmeans, label_elements, AttributeReport,
    ElementPartition,
};
use appearance_elements::container::{encode_bundle, write_atomic, Container};
use appearance_elements::corpus::{build_lexicon, generate_corpus, read_jsonl, Description};
use appearance_elements::embedding::{
    load_embeddings, save_embeddings, AppearanceKnowledgeSet, PseudoEncoder,
};
use appearance_elements::fidelity::{gradient_suite, PathCheck, SUITE_EPS, SUITE_TOLERANCE};
use appearance_elements::prompting::{
    classify_element, compose_elements, element_agreement, prompt_tune,
};
use appearance_elements::toy::{
    ablation_k_sweep, overhead_report, sweep_csv, sweep_summary, sweep_svg, synth_dataset,
    train_toy_model, OverheadReport, SweepEntry, ToyModel, ToyRun,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{PipelineConfig, Provider};
use crate::error::CliError;
use crate::manifest::{Outcome, StageRunner};

/// Entries shown per element in the attribute report.
pub const REPORT_TOP_N: usize = 8;

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    write_atomic(path, bytes).map_err(|e| CliError::run(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(v).expect("artifact serialises");
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::run(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::run(format!("{}: {e}", path.display())))
}

fn read_corpus(path: &Path) -> Result<Vec<Description>, CliError> {
    let f =
        std::fs::File::open(path).map_err(|e| CliError::run(format!("{}: {e}", path.display())))?;
    read_jsonl(std::io::BufReader::new(f))
        .map_err(|e| CliError::run(format!("{}: {e}", path.display())))
}

fn read_embeddings(path: &Path) -> Result<AppearanceKnowledgeSet, CliError> {
    load_embeddings(path).map_err(|e| CliError::run(format!("{}: {e}", path.display())))
}

fn read_matrix(path: &Path) -> Result<Container, CliError> {
    Container::load(path).map_err(|e| CliError::run(format!("{}: {e}", path.display())))
}

pub fn gen_corpus(r: &StageRunner, cfg: &PipelineConfig) -> Result<Outcome, CliError> {
    let lex = build_lexicon();
    let config = json!({ "corpus": cfg.corpus, "lexicon_version": lex.version });
    r.run("gen-corpus", &[], config, || {
        let corpus = generate_corpus(&cfg.corpus_config(), &lex).map_err(CliError::run)?;
        let mut bytes = Vec::new();
        corpus.write_jsonl(&mut bytes).map_err(CliError::run)?;
        write_bytes(&r.path("corpus.jsonl"), &bytes)?;
        println!(
            "corpus: {} pedestrian, {} background ({} external accepted, {} filtered, {} malformed, {} duplicate)",
            corpus.counts.pedestrian,
            corpus.counts.background,
            corpus.ingest.accepted,
            corpus.ingest.filtered,
            corpus.ingest.malformed,
            corpus.ingest.duplicates
        );
        Ok(vec!["corpus.jsonl".into()])
    })
}

pub fn encode(r: &StageRunner, cfg: &PipelineConfig) -> Result<Outcome, CliError> {
    let mut inputs = json!({ "embedding": cfg.embedding });
    if let (Provider::File, Some(p)) = (cfg.embedding.provider, &cfg.embedding.path) {
        inputs["file_digest"] = Value::String(crate::manifest::file_digest(p)?);
    }
    r.run("encode", &["corpus.jsonl"], inputs, || {
        let corpus = read_corpus(&r.path("corpus.jsonl"))?;
        let set = match cfg.embedding.provider {
            Provider::Pseudo => {
                let lex = build_lexicon();
                PseudoEncoder::new(cfg.embedding.dim, cfg.embedding.seed, &lex)
                    .map_err(CliError::run)?
                    .encode_all(&corpus)
            }
            Provider::File => {
                let path = cfg.embedding.path.as_ref().expect("validated");
                let set = read_embeddings(path)?;
                if set.count() != corpus.len() {
                    return Err(CliError::run(format!(
                        "{}: {} rows for {} corpus lines",
                        path.display(),
                        set.count(),
                        corpus.len()
                    )));
                }
                if let Some(i) =
                    (0..corpus.len()).find(|&i| set.labels()[i] != corpus[i].category.label())
                {
                    return Err(CliError::run(format!(
                        "{}: row {i} label {} does not match corpus category {:?}",
                        path.display(),
                        set.labels()[i],
                        corpus[i].category
                    )));
                }
                if cfg.embedding.normalize && !set.normalized() {
                    set.normalized_copy().map_err(CliError::run)?
                } else {
                    set
                }
            }
        };
        save_embeddings(&set, r.path("embeddings.ldae")).map_err(CliError::run)?;
        println!("embeddings: {} x {}", set.count(), set.dim());
        Ok(vec!["embeddings.ldae".into()])
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ClusterStats {
    pub k: usize,
    pub iterations: usize,
    pub objective: f64,
    pub converged: bool,
    pub history: Vec<f64>,
    pub source_digest: String,
    pub empty_elements: Vec<usize>,
    pub pedestrian_elements: usize,
    pub pedestrian_fraction: f64,
    pub dot_euclidean_disagreement: usize,
}

pub fn cluster(r: &StageRunner, cfg: &PipelineConfig) -> Result<Outcome, CliError> {
    let config = json!({ "cluster": cfg.cluster });
    r.run("cluster", &["embeddings.ldae"], config, || {
        let set = read_embeddings(&r.path("embeddings.ldae"))?;
        let kc = cfg.kmeans_config();
        let cs = kmeans(&set, &kc).map_err(CliError::run)?;
        let rows = set.to_f64();
        let assignments = assign_all(&rows, &cs.centroids).map_err(CliError::run)?;
        let partition = label_elements(&assignments, set.labels(), kc.k).map_err(CliError::run)?;
        let stats = ClusterStats {
            k: kc.k,
            iterations: cs.stats.iterations,
            objective: cs.stats.objective,
            converged: cs.stats.converged,
            history: cs.stats.history.clone(),
            source_digest: cs.source_digest.clone(),
            empty_elements: (0..kc.k)
                .filter(|&k| partition.members[k].is_empty())
                .collect(),
            pedestrian_elements: partition.pedestrian().len(),
            pedestrian_fraction: partition.pedestrian_fraction(),
            dot_euclidean_disagreement: assignment_disagreement(&rows, &cs.centroids)
                .map_err(CliError::run)?,
        };
        cs.to_container()
            .save(r.path("centroids.ldae"))
            .map_err(CliError::run)?;
        write_json(&r.path("assignments.json"), &assignments)?;
        write_json(&r.path("partition.json"), &partition)?;
        write_json(&r.path("cluster_stats.json"), &stats)?;
        println!(
            "cluster: K={} in {} iterations, {} pedestrian elements ({:.3}), {} empty",
            kc.k,
            stats.iterations,
            stats.pedestrian_elements,
            stats.pedestrian_fraction,
            stats.empty_elements.len()
        );
        Ok([
            "centroids.ldae",
            "assignments.json",
            "partition.json",
            "cluster_stats.json",
        ]
        .map(String::from)
        .to_vec())
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TuneSummary {
    pub epochs: usize,
    pub steps: u64,
    pub final_bce: Option<f64>,
    pub agreement_all: f64,
    pub populated_elements: usize,
    pub populated_agreeing: usize,
    pub mean_prob_pedestrian: f64,
    pub mean_prob_background: f64,
    pub centroid_digest: String,
    pub prompt_digest: String,
}

pub fn tune(r: &StageRunner, cfg: &PipelineConfig) -> Result<Outcome, CliError> {
    let config = json!({ "tune": cfg.tune });
    let inputs = [
        "embeddings.ldae",
        "centroids.ldae",
        "assignments.json",
        "partition.json",
    ];
    r.run("tune", &inputs, config, || {
        let set = read_embeddings(&r.path("embeddings.ldae"))?;
        let centroids = read_matrix(&r.path("centroids.ldae"))?.to_matrix();
        let assignments: Vec<usize> = read_json(&r.path("assignments.json"))?;
        let partition: ElementPartition = read_json(&r.path("partition.json"))?;
        let out = prompt_tune(&assignments, set.labels(), &centroids, &cfg.tune_config())
            .map_err(CliError::run)?;
        let elements =
            compose_elements(&centroids, &out.prompts, partition).map_err(CliError::run)?;
        let probs: Vec<f64> = elements
            .elements
            .rows()
            .into_iter()
            .map(|e| classify_element(e, &out.head))
            .collect();
        let p = &elements.partition;
        let mean = |idx: Vec<usize>| {
            if idx.is_empty() {
                f64::NAN
            } else {
                idx.iter().map(|&k| probs[k]).sum::<f64>() / idx.len() as f64
            }
        };
        let populated: Vec<usize> = (0..p.k()).filter(|&k| !p.members[k].is_empty()).collect();
        let summary = TuneSummary {
            epochs: out.curve.len(),
            steps: out.prompts.steps,
            final_bce: out.curve.last().copied(),
            agreement_all: element_agreement(&elements, &out.head),
            populated_elements: populated.len(),
            populated_agreeing: populated
                .iter()
                .filter(|&&k| u8::from(probs[k] > 0.5) == p.labels[k])
                .count(),
            mean_prob_pedestrian: mean(p.pedestrian()),
            mean_prob_background: mean(p.background()),
            centroid_digest: elements.centroid_digest.clone(),
            prompt_digest: elements.prompt_digest.clone(),
        };
        elements
            .to_container()
            .save(r.path("elements.ldae"))
            .map_err(CliError::run)?;
        Container::from_matrix(&out.prompts.prompts)
            .save(r.path("prompts.ldae"))
            .map_err(CliError::run)?;
        write_bytes(&r.path("head.ldae"), &encode_bundle(&out.head.sections()))?;
        write_bytes(&r.path("tune_curve.csv"), out.curve_csv().as_bytes())?;
        write_json(&r.path("tune_summary.json"), &summary)?;
        println!(
            "tune: final BCE {}, agreement {}/{} populated elements",
            summary
                .final_bce
                .map_or("n/a".into(), |b| format!("{b:.4}")),
            summary.populated_agreeing,
            summary.populated_elements
        );
        Ok([
            "elements.ldae",
            "prompts.ldae",
            "head.ldae",
            "tune_curve.csv",
            "tune_summary.json",
        ]
        .map(String::from)
        .to_vec())
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Analysis {
    pub pedestrian_elements: usize,
    pub background_elements: usize,
    pub pedestrian_fraction: f64,
    pub report: AttributeReport,
}

pub fn analyze(r: &StageRunner, _cfg: &PipelineConfig) -> Result<Outcome, CliError> {
    let config = json!({ "top_n": REPORT_TOP_N });
    let inputs = ["corpus.jsonl", "assignments.json", "partition.json"];
    r.run("analyze", &inputs, config, || {
        let corpus = read_corpus(&r.path("corpus.jsonl"))?;
        let assignments: Vec<usize> = read_json(&r.path("assignments.json"))?;
        let partition: ElementPartition = read_json(&r.path("partition.json"))?;
        let lex = build_lexicon();
        let report = attribute_report(&partition, &corpus, &assignments, &lex, REPORT_TOP_N)
            .map_err(CliError::run)?;
        let a = Analysis {
            pedestrian_elements: partition.pedestrian().len(),
            background_elements: partition.background().len(),
            pedestrian_fraction: partition.pedestrian_fraction(),
            report,
        };
        write_json(&r.path("attribute_report.json"), &a)?;
        println!(
            "analyze: {} pedestrian / {} background elements",
            a.pedestrian_elements, a.background_elements
        );
        Ok(vec!["attribute_report.json".into()])
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SeedRuns {
    pub seed: u64,
    pub baseline: ToyRun,
    pub fused: ToyRun,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ToyRuns {
    pub k: usize,
    pub runs: Vec<SeedRuns>,
    pub baseline_mean_accuracy: f64,
    pub fused_mean_accuracy: f64,
}

fn model_bundle(m: &ToyModel) -> Vec<u8> {
    let mut sections = m.module.as_ref().map(|x| x.sections()).unwrap_or_default();
    sections.push(("classifier_w".into(), Container::from_matrix(&m.w)));
    sections.push(("classifier_b".into(), Container::from_matrix(&m.b)));
    encode_bundle(&sections)
}

pub fn train_toy(r: &StageRunner, cfg: &PipelineConfig) -> Result<Outcome, CliError> {
    let config = json!({
        "integrate": cfg.integrate,
        "toy": cfg.toy,
        "embedding_seed": cfg.embedding.seed,
    });
    r.run("train-toy", &["elements.ldae"], config, || {
        let c = read_matrix(&r.path("elements.ldae"))?;
        let labels = c
            .labels
            .clone()
            .ok_or_else(|| CliError::run("elements.ldae has no partition labels"))?;
        let partition = ElementPartition::from_labels(labels);
        let elements = c.to_matrix();
        let lex = build_lexicon();
        let mut runs = Vec::new();
        let mut written = vec!["toy_runs.json".to_string(), "overhead.json".to_string()];
        let mut overhead: Option<OverheadReport> = None;
        for &seed in &cfg.toy.seeds {
            let toy = cfg.toy_config(seed);
            let train = synth_dataset(&toy, "train", toy.n_train, &lex).map_err(CliError::run)?;
            let eval = synth_dataset(&toy, "eval", toy.n_eval, &lex).map_err(CliError::run)?;
            let (baseline, base_model) = train_toy_model(&train, &eval, None, &toy).map_err(CliError::run)?;
            let (fused, model) = train_toy_model(&train, &eval, Some((&elements, &partition)), &toy)
                .map_err(CliError::run)?;
            overhead.get_or_insert_with(|| overhead_report(&model, &base_model));
            let name = format!("toy_model_seed{seed}.ldae");
            write_bytes(&r.path(&name), &model_bundle(&model))?;
            written.push(name);
            println!(
                "train-toy seed {seed}: baseline acc {:.4}, with elements acc {:.4}, correct mass {:.3} -> {:.3}",
                baseline.last().accuracy,
                fused.last().accuracy,
                fused.epochs[0].correct_mass.unwrap_or(f64::NAN),
                fused.last().correct_mass.unwrap_or(f64::NAN)
            );
            runs.push(SeedRuns { seed, baseline, fused });
        }
        let mean = |f: &dyn Fn(&SeedRuns) -> f64| runs.iter().map(f).sum::<f64>() / runs.len() as f64;
        let summary = ToyRuns {
            k: elements.nrows(),
            baseline_mean_accuracy: mean(&|s| s.baseline.last().accuracy),
            fused_mean_accuracy: mean(&|s| s.fused.last().accuracy),
            runs,
        };
        write_json(&r.path("toy_runs.json"), &summary)?;
        write_json(&r.path("overhead.json"), &overhead.expect("at least one seed"))?;
        Ok(written)
    })
}

pub fn sweep(r: &StageRunner, cfg: &PipelineConfig) -> Result<Outcome, CliError> {
    let config = json!({
        "cluster": { "max_iters": cfg.cluster.max_iters, "rel_tol": cfg.cluster.rel_tol },
        "tune": cfg.tune,
        "integrate": cfg.integrate,
        "toy": cfg.toy,
        "embedding_seed": cfg.embedding.seed,
    });
    r.run("sweep", &["embeddings.ldae"], config, || {
        let set = read_embeddings(&r.path("embeddings.ldae"))?;
        let entries: Vec<SweepEntry> =
            ablation_k_sweep(&set, &build_lexicon(), &cfg.sweep_config()).map_err(CliError::run)?;
        write_bytes(&r.path("sweep.csv"), sweep_csv(&entries).as_bytes())?;
        write_bytes(&r.path("sweep.svg"), sweep_svg(&entries).as_bytes())?;
        write_json(&r.path("sweep.json"), &entries)?;
        for (k, mean, sd) in sweep_summary(&entries) {
            println!(
                "sweep K={k}: accuracy {:.2} +- {:.2}",
                mean * 100.0,
                sd * 100.0
            );
        }
        Ok(["sweep.csv", "sweep.svg", "sweep.json"]
            .map(String::from)
            .to_vec())
    })
}

#[derive(Debug, Serialize)]
pub struct GradcheckRecord {
    pub seeds: u64,
    pub eps: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub failures: usize,
    pub max_rel_error: f64,
    pub checks: Vec<PathCheck>,
}

/// Runs the suite; the caller turns a recorded failure into exit code 4.
pub fn gradcheck(r: &StageRunner, seeds: u64) -> Result<(Outcome, bool), CliError> {
    let outcome = r.run("gradcheck", &[], json!({ "seeds": seeds }), || {
        let checks = gradient_suite(seeds).map_err(CliError::run)?;
        let failures = checks.iter().filter(|c| !c.passed()).count();
        let record = GradcheckRecord {
            seeds,
            eps: SUITE_EPS,
            tolerance: SUITE_TOLERANCE,
            passed: failures == 0,
            failures,
            max_rel_error: checks
                .iter()
                .map(|c| c.report.max_rel_error)
                .fold(0.0, f64::max),
            checks,
        };
        write_json(&r.path("gradcheck.json"), &record)?;
        println!(
            "gradcheck: {} checks, {failures} failures, max relative error {:.2e}",
            record.checks.len(),
            record.max_rel_error
        );
        Ok(vec!["gradcheck.json".into()])
    })?;
    let record: Value = read_json(&r.path("gradcheck.json"))?;
    let passed = record["passed"].as_bool().unwrap_or(false);
    Ok((outcome, passed))
}

pub fn report(r: &StageRunner, _cfg: &PipelineConfig) -> Result<Outcome, CliError> {
    let inputs = [
        "cluster_stats.json",
        "tune_summary.json",
        "attribute_report.json",
        "toy_runs.json",
        "overhead.json",
    ];
    // optional inputs still change the report, so they enter the config digest
    let mut optional = serde_json::Map::new();
    for name in ["sweep.csv", "gradcheck.json"] {
        let p = r.path(name);
        if p.is_file() {
            optional.insert(
                name.into(),
                Value::String(crate::manifest::file_digest(&p)?),
            );
        }
    }
    r.run("report", &inputs, json!({ "optional": optional }), || {
        let stats: ClusterStats = read_json(&r.path("cluster_stats.json"))?;
        let tune: TuneSummary = read_json(&r.path("tune_summary.json"))?;
        let analysis: Analysis = read_json(&r.path("attribute_report.json"))?;
        let toy: ToyRuns = read_json(&r.path("toy_runs.json"))?;
        let overhead: OverheadReport = read_json(&r.path("overhead.json"))?;
        let mut s = String::from("# Pipeline report\n\n");
        s.push_str(&format!(
            "## Elements\n\nK = {}, {} k-means iterations, objective {:.4}.\n{} pedestrian and {} background elements (pedestrian fraction {:.3}); {} empty.\n\n",
            stats.k,
            stats.iterations,
            stats.objective,
            analysis.pedestrian_elements,
            analysis.background_elements,
            analysis.pedestrian_fraction,
            stats.empty_elements.len()
        ));
        s.push_str("| element | label | members | top attributes |\n|---|---|---|---|\n");
        for (k, e) in analysis.report.elements.iter().take(10) {
            let top: Vec<String> = e.top.iter().take(4).map(|(v, f)| format!("({v}, {f:.2})")).collect();
            s.push_str(&format!("| {k} | {} | {} | {} |\n", e.label, e.members, top.join(" ")));
        }
        s.push_str(&format!(
            "\n## Task prompting\n\nFinal BCE {}; {}/{} populated elements agree with their majority label; mean head output {:.3} on pedestrian and {:.3} on background elements.\n\n",
            tune.final_bce.map_or("n/a".into(), |b| format!("{b:.4}")),
            tune.populated_agreeing,
            tune.populated_elements,
            tune.mean_prob_pedestrian,
            tune.mean_prob_background
        ));
        s.push_str("## Toy detection\n\n| seed | baseline acc | with elements acc | correct mass (start -> end) |\n|---|---|---|---|\n");
        for run in &toy.runs {
            s.push_str(&format!(
                "| {} | {:.4} | {:.4} | {:.3} -> {:.3} |\n",
                run.seed,
                run.baseline.last().accuracy,
                run.fused.last().accuracy,
                run.fused.epochs[0].correct_mass.unwrap_or(f64::NAN),
                run.fused.last().correct_mass.unwrap_or(f64::NAN)
            ));
        }
        s.push_str(&format!(
            "\nMean accuracy: baseline {:.4}, with elements {:.4}.\n\n## Overhead\n\nModule parameters {}, baseline {}, total {}, ratio {:.4}.\n",
            toy.baseline_mean_accuracy,
            toy.fused_mean_accuracy,
            overhead.module_params,
            overhead.baseline_params,
            overhead.total_params,
            overhead.ratio
        ));
        if r.path("sweep.csv").is_file() {
            let csv = std::fs::read_to_string(r.path("sweep.csv")).map_err(CliError::run)?;
            s.push_str("\n## K sweep\n\n```text\n");
            s.push_str(&csv);
            s.push_str("```\n");
        }
        if r.path("gradcheck.json").is_file() {
            let g: Value = read_json(&r.path("gradcheck.json"))?;
            s.push_str(&format!(
                "\n## Gradient checks\n\n{} checks over {} seeds, passed: {}, max relative error {:.2e}.\n",
                g["checks"].as_array().map_or(0, Vec::len),
                g["seeds"],
                g["passed"],
                g["max_rel_error"].as_f64().unwrap_or(f64::NAN)
            ));
        }
        write_bytes(&r.path("report.md"), s.as_bytes())?;
        println!("report: report.md");
        Ok(vec!["report.md".into()])
    })
}
