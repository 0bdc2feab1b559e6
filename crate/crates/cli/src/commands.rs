use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use serde_json::json;
use topiclabel::corpus::{load_corpus, Stopwords, VocabConfig, Vocabulary};
use topiclabel::metrics::{
    adjusted_nmi, adjusted_rand_index, coherence_report, purity, Clustering, CoherenceIndex, MetricsError,
};
use topiclabel::session::{Condition, RetrainMode, SessionConfig, SessionData};
use topiclabel::simulation::synthetic::{hierarchical_corpus, HierarchySpec};
use topiclabel::simulation::{export_curves, run_simulation, SimulationConfig};
use topiclabel::topic_models::{
    import_external_topics, train_lda, train_slda, LdaConfig, ResponseMatrix, SldaConfig, TopicModel,
};
use topiclabel_server::{AppState, CorpusEntry};

use crate::manifest::{file_sha256, Manifest};
use crate::{CliError, ModelKind, PrepareArgs, ServeArgs, SimulateArgs, SynthArgs, TopicArgs, TrainArgs};

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const VOCAB_FILE: &str = "vocabulary.json";
pub const TFIDF_FILE: &str = "tfidf.json";
pub const BOW_FILE: &str = "bow.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TOPICS_FILE: &str = "topics.json";
pub const COHERENCE_FILE: &str = "coherence.json";
pub const CURVES_FILE: &str = "curves.csv";

const COHERENCE_WORDS: usize = 10;
const SERVED_CORPUS: &str = "default";

/// Creates `dir`, refusing when it already holds a manifest unless forced.
fn output_dir(dir: &Path, force: bool) -> Result<(), CliError> {
    if dir.join(MANIFEST_FILE).exists() && !force {
        return Err(CliError::Usage(format!(
            "{} already contains outputs; pass --force to overwrite",
            dir.display()
        )));
    }
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let bytes = serde_json::to_vec(value).map_err(CliError::runtime)?;
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn synth(args: &SynthArgs) -> Result<(), CliError> {
    if args.out.exists() && !args.force {
        return Err(CliError::Usage(format!(
            "{} exists; pass --force to overwrite",
            args.out.display()
        )));
    }
    let spec = HierarchySpec {
        n_docs: args.docs,
        seed: args.seed,
        ..Default::default()
    };
    let corpus = hierarchical_corpus(&spec).map_err(CliError::data)?;
    corpus.write_jsonl(&args.out).map_err(CliError::data)?;
    let dir = args.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = args.out.file_name().unwrap_or_default().to_string_lossy().into_owned();
    let mut manifest = Manifest::new("synth", &spec, vec![args.seed])?;
    manifest.add(dir, &name)?;
    manifest.write(&args.out.with_extension("manifest.json"))?;
    println!("wrote {} documents to {}", corpus.len(), args.out.display());
    Ok(())
}

pub fn prepare(args: &PrepareArgs) -> Result<(), CliError> {
    let corpus = load_corpus(&args.corpus).map_err(CliError::data)?;
    let (stopwords, stopwords_source) = match &args.stopwords {
        Some(path) => (Stopwords::from_file(path).map_err(CliError::data)?, file_sha256(path)?),
        None => (Stopwords::english(), "builtin-english".to_string()),
    };
    let vocab_config = VocabConfig {
        min_df: args.min_df,
        max_df_fraction: args.max_df,
    };
    output_dir(&args.out, args.force)?;
    let data = SessionData::prepare(corpus, &stopwords, &vocab_config).map_err(CliError::data)?;
    let out = &args.out;
    data.corpus.write_jsonl(&out.join(CORPUS_FILE)).map_err(CliError::data)?;
    write_json(&out.join(VOCAB_FILE), &data.vocab)?;
    write_json(&out.join(TFIDF_FILE), &data.tfidf)?;
    write_json(&out.join(BOW_FILE), &data.bow)?;

    let config = json!({
        "corpus_sha256": file_sha256(&args.corpus)?,
        "stopwords": stopwords_source,
        "vocab": vocab_config,
    });
    let mut manifest = Manifest::new("prepare", config, Vec::new())?;
    for name in [CORPUS_FILE, VOCAB_FILE, TFIDF_FILE, BOW_FILE] {
        manifest.add(out, name)?;
    }
    manifest.write(&out.join(MANIFEST_FILE))?;
    println!(
        "{} documents, {} terms -> {}",
        data.corpus.len(),
        data.vocab.len(),
        out.display()
    );
    Ok(())
}

/// Loads a `prepare` output directory. Features are rebuilt from the
/// corpus and vocabulary, which is deterministic.
pub fn load_prepared(dir: &Path) -> Result<SessionData, CliError> {
    let manifest = dir.join(MANIFEST_FILE);
    if !manifest.exists() {
        return Err(CliError::Data(format!(
            "{} is not a prepared corpus directory (no {MANIFEST_FILE})",
            dir.display()
        )));
    }
    let corpus = load_corpus(&dir.join(CORPUS_FILE)).map_err(CliError::data)?;
    let vocab: Vocabulary = read_json(&dir.join(VOCAB_FILE))?;
    Ok(SessionData::from_vocabulary(corpus, vocab))
}

/// `doc_id,label` rows.
pub fn read_label_csv(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let headers = reader.headers().map_err(CliError::data)?.clone();
    if headers.iter().collect::<Vec<_>>() != ["doc_id", "label"] {
        return Err(CliError::Data(format!(
            "{}: expected header `doc_id,label`",
            path.display()
        )));
    }
    reader
        .records()
        .map(|r| {
            let r = r.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            Ok((r[0].to_string(), r[1].to_string()))
        })
        .collect()
}

fn responses_for(data: &SessionData, path: &Path) -> Result<ResponseMatrix, CliError> {
    let pairs = read_label_csv(path)?;
    let mut by_doc: HashMap<&str, &str> = HashMap::new();
    for (doc, label) in &pairs {
        if data.corpus.index_of(doc).is_none() {
            return Err(CliError::Data(format!("{}: unknown document `{doc}`", path.display())));
        }
        by_doc.insert(doc, label);
    }
    let labels: Vec<String> = pairs.iter().map(|p| p.1.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let per_doc: Vec<Option<&str>> = data.corpus.ids().map(|id| by_doc.get(id).copied()).collect();
    ResponseMatrix::from_labels(&labels, &per_doc).map_err(CliError::data)
}

#[derive(Serialize)]
struct TrainConfig<'a> {
    model: &'a str,
    prepared_config_hash: String,
    lda: LdaConfig,
    responses_sha256: Option<String>,
}

pub fn train(args: &TrainArgs) -> Result<(), CliError> {
    let data = load_prepared(&args.prepared)?;
    let lda = LdaConfig {
        k: args.k,
        iterations: args.iterations,
        seed: args.seed,
        ..Default::default()
    };
    if args.responses.is_some() && args.model == ModelKind::Lda {
        return Err(CliError::Usage("--responses only applies to --model slda".into()));
    }
    output_dir(&args.out, args.force)?;
    let terms = data.vocab.terms();
    let model = match args.model {
        ModelKind::Lda => train_lda(&data.bow, terms, &lda).map_err(CliError::runtime)?.0,
        ModelKind::Slda => {
            let responses = match &args.responses {
                Some(path) => responses_for(&data, path)?,
                None => ResponseMatrix::empty(data.corpus.len()),
            };
            let config = SldaConfig {
                lda,
                ..Default::default()
            };
            train_slda(&data.bow, terms, &responses, &config).map_err(CliError::runtime)?.0
        }
    };
    let out = &args.out;
    model.save(&out.join(TOPICS_FILE)).map_err(CliError::runtime)?;

    let docs: Vec<Vec<&str>> = (0..data.corpus.len())
        .map(|d| data.bow.rows[d].iter().map(|&(w, _)| data.vocab.term(w as usize)).collect())
        .collect();
    let index = CoherenceIndex::new(docs.iter().map(|d| d.iter().copied())).map_err(CliError::data)?;
    let coherence = coherence_report(&model, &index, COHERENCE_WORDS).map_err(CliError::runtime)?;
    write_json(&out.join(COHERENCE_FILE), &coherence)?;

    let prepared: Manifest = read_json(&args.prepared.join(MANIFEST_FILE))?;
    let config = TrainConfig {
        model: match args.model {
            ModelKind::Lda => "lda",
            ModelKind::Slda => "slda",
        },
        prepared_config_hash: prepared.config_hash,
        lda,
        responses_sha256: args.responses.as_deref().map(file_sha256).transpose()?,
    };
    let mut manifest = Manifest::new("train", &config, vec![args.seed])?;
    manifest.add(out, TOPICS_FILE)?;
    manifest.add(out, COHERENCE_FILE)?;
    manifest.write(&out.join(MANIFEST_FILE))?;
    let mean = coherence.iter().map(|c| c.npmi).sum::<f64>() / coherence.len() as f64;
    let source = serde_json::to_value(model.source).map_err(CliError::runtime)?;
    println!(
        "{} model with {} topics, mean NPMI {mean:.4} -> {}",
        source.as_str().unwrap_or_default(),
        model.k,
        out.display()
    );
    Ok(())
}

fn load_topics(args: &TopicArgs, data: &SessionData) -> Result<Option<TopicModel>, CliError> {
    if let Some(path) = &args.model {
        return TopicModel::load(path).map(Some).map_err(CliError::data);
    }
    match (&args.theta, &args.keywords) {
        (Some(theta), Some(keywords)) => {
            let ids: Vec<&str> = data.corpus.ids().collect();
            import_external_topics(theta, keywords, &ids).map(Some).map_err(CliError::data)
        }
        _ => Ok(None),
    }
}

#[derive(Serialize)]
struct SimulateManifestConfig {
    prepared_config_hash: String,
    simulation: SimulationConfig,
    topics_sha256: Vec<String>,
}

pub fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let mut cfg: SimulationConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => SimulationConfig::default(),
    };
    if let Some(c) = args.condition {
        cfg.condition = c;
    }
    cfg.runs = args.runs.unwrap_or(cfg.runs);
    cfg.docs_to_label = args.docs.unwrap_or(cfg.docs_to_label);
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    cfg.k = args.k.unwrap_or(cfg.k);
    cfg.iterations = args.iterations.unwrap_or(cfg.iterations);
    cfg.retrain_every = args.retrain_every.unwrap_or(cfg.retrain_every);

    let data = Arc::new(load_prepared(&args.prepared)?);
    if !data.corpus.has_hierarchical_labels() {
        return Err(CliError::Data("simulation needs major and sub labels on every document".into()));
    }
    cfg.validate(data.corpus.len()).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut topics = load_topics(&args.topics, &data)?;
    let mut topic_inputs: Vec<&Path> = Vec::new();
    topic_inputs.extend(args.topics.model.as_deref());
    topic_inputs.extend(args.topics.theta.as_deref());
    topic_inputs.extend(args.topics.keywords.as_deref());
    if cfg.condition == Condition::None {
        topics = None;
    } else if topics.is_none() {
        if cfg.condition == Condition::Imported {
            return Err(CliError::Usage("the imported condition needs --theta and --keywords".into()));
        }
        log::info!("training LDA with k={} for {} iterations", cfg.k, cfg.iterations);
        let lda = LdaConfig {
            k: cfg.k,
            iterations: cfg.iterations,
            seed: cfg.seed,
            ..Default::default()
        };
        topics = Some(train_lda(&data.bow, data.vocab.terms(), &lda).map_err(CliError::runtime)?.0);
    }
    output_dir(&args.out, args.force)?;
    let curves = run_simulation(&data, topics.as_ref(), &cfg).map_err(CliError::runtime)?;
    export_curves(&curves, &args.out.join(CURVES_FILE)).map_err(CliError::runtime)?;

    let prepared: Manifest = read_json(&args.prepared.join(MANIFEST_FILE))?;
    let config = SimulateManifestConfig {
        prepared_config_hash: prepared.config_hash,
        simulation: cfg,
        topics_sha256: topic_inputs.into_iter().map(file_sha256).collect::<Result<_, _>>()?,
    };
    let mut manifest = Manifest::new("simulate", config, cfg.seeds())?;
    manifest.add(&args.out, CURVES_FILE)?;
    manifest.write(&args.out.join(MANIFEST_FILE))?;
    match curves.final_median() {
        Some(p) => println!(
            "final medians at {} labels: purity {} ari {} anmi {}",
            p.labeled_count, p.purity, p.ari, p.anmi
        ),
        None => println!("no checkpoints recorded"),
    }
    Ok(())
}

pub fn eval(args: &crate::EvalArgs) -> Result<(), CliError> {
    let pred = Clustering::from_pairs(read_label_csv(&args.pred)?);
    let gold = Clustering::from_pairs(read_label_csv(&args.gold)?);
    let (p, g) = pred.align(&gold).map_err(CliError::data)?;
    let anmi = match adjusted_nmi(&p, &g) {
        Ok(v) => Some(v),
        Err(MetricsError::DegenerateDenominator) => None,
        Err(e) => return Err(CliError::data(e)),
    };
    let report = json!({
        "purity": purity(&p, &g).map_err(CliError::data)?,
        "ari": adjusted_rand_index(&p, &g).map_err(CliError::data)?,
        "anmi": anmi,
    });
    println!("{report}");
    Ok(())
}

pub fn serve(args: &ServeArgs) -> Result<(), CliError> {
    let data = Arc::new(load_prepared(&args.prepared)?);
    let topics = load_topics(&args.topics, &data)?;
    let corpora = HashMap::from([(SERVED_CORPUS.to_string(), CorpusEntry { data, topics })]);
    let state = match &args.sessions {
        Some(dir) => AppState::restore(corpora, PathBuf::from(dir), RetrainMode::Background).map_err(CliError::data)?,
        None => AppState::new(corpora, None, RetrainMode::Background),
    };
    if let Some(condition) = args.condition {
        let config = SessionConfig {
            seed: args.seed,
            ..Default::default()
        };
        let id = state
            .create_session(SERVED_CORPUS, condition, config)
            .map_err(|e| CliError::Runtime(format!("{e:?}")))?;
        println!("session {id} ({condition})");
    }
    for id in state.session_ids() {
        log::info!("session available: {id}");
    }
    let runtime = tokio::runtime::Runtime::new().map_err(CliError::runtime)?;
    runtime
        .block_on(topiclabel_server::serve(Arc::new(state), args.addr))
        .map_err(|e| CliError::Runtime(format!("{}: {e}", args.addr)))
}
