use std::fs;
use std::io::{IsTerminal, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use probunk_core::concept::{
    export_prototypes, prototype_csv, train_concept_classifier, train_prototypical, ConceptConfig, ConceptModel,
    EpisodeConfig, ExportConfig, ProtoModel, CONCEPT_KIND, PROTO_KIND,
};
use probunk_core::corpus::{
    assign_splits, filter_problems, load_concepts_file, parse_dump_file, shipped_concepts, Concept, Corpus, Split,
    SplitFractions, TagPolicy,
};
use probunk_core::embed::{fake_embeddings, EmbeddingTable};
use probunk_core::eval::{
    evaluate_concept_model, evaluate_prototypes, evaluate_unknown_baseline, evaluate_unknown_model, Baseline,
};
use probunk_core::graph::{build_graph, contexts, train_link_prediction, LinkConfig, LinkModel, LINK_KIND};
use probunk_core::metrics::EvalReport;
use probunk_core::nn::Checkpoint;
use probunk_core::stats::corpus_stats;
use probunk_core::synth::{synthesize, SynthConfig};
use probunk_core::unknown::{
    annotations_jsonl, build_sentence_dataset, predictions_jsonl, read_annotations_file, train_unknown_model,
    AnnotationSet, NthRule, PredictionRow, UnknownConfig, UnknownModel, UNKNOWN_KIND,
};
use probunk_service::{AnnotationStore, AppState};

/// Pipeline for concept classification and unknown extraction on
/// probability problems.
#[derive(Parser, Debug)]
#[command(name = "probunk", version)]
struct Cli {
    /// Seed for every random choice; overrides the seed in --config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON file with the command's configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct CorpusArg {
    /// Corpus directory with problems.jsonl and answers.jsonl.
    #[arg(long)]
    corpus: PathBuf,
}

#[derive(Args, Debug)]
struct ConceptsArg {
    /// Concept JSONL; the shipped list when absent.
    #[arg(long)]
    concepts: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EmbedArg {
    /// Embedding prefix (PREFIX.index.json and PREFIX.bin).
    #[arg(long)]
    embeddings: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Filter a posts dump into problems and accepted answers.
    Ingest {
        #[arg(long)]
        dump: PathBuf,
        /// `default` or a JSON tag policy.
        #[arg(long, default_value = "default")]
        policy: String,
        #[command(flatten)]
        concepts: ConceptsArg,
    },
    /// Assign train/dev/test splits.
    Split {
        #[command(flatten)]
        corpus: CorpusArg,
        /// Train, dev and test fractions; defaults to 904/110/157 of 1,171.
        #[arg(long, value_delimiter = ',', num_args = 3)]
        fractions: Option<Vec<f64>>,
    },
    /// Validate and write the concept list.
    Concepts {
        #[command(flatten)]
        concepts: ConceptsArg,
    },
    /// Deterministic token embeddings for tests and demos.
    EmbedFake {
        #[command(flatten)]
        corpus: CorpusArg,
        #[command(flatten)]
        concepts: ConceptsArg,
        #[arg(long, default_value_t = 768)]
        dim: usize,
    },
    /// Sentences-per-problem and unknown-position histograms as CSV.
    Stats {
        #[command(flatten)]
        corpus: CorpusArg,
        #[arg(long)]
        annotations: Option<PathBuf>,
    },
    /// Build the concept/problem/answer graph and export it.
    GraphBuild {
        #[command(flatten)]
        corpus: CorpusArg,
        #[command(flatten)]
        concepts: ConceptsArg,
        #[command(flatten)]
        embeddings: EmbedArg,
    },
    /// Train the GCN on problem-has-type link prediction.
    GraphTrain {
        #[command(flatten)]
        corpus: CorpusArg,
        #[command(flatten)]
        concepts: ConceptsArg,
        #[command(flatten)]
        embeddings: EmbedArg,
        /// Also write the per-epoch log as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train a multi-label concept classifier.
    TrainConcept {
        #[command(flatten)]
        corpus: CorpusArg,
        #[command(flatten)]
        embeddings: EmbedArg,
        /// maxent, mlp, lstm, gru or cnn.
        #[arg(long, default_value = "cnn")]
        preset: String,
        /// Also write the dev-split report.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train a prototypical network on single-concept problems.
    TrainProto {
        #[command(flatten)]
        corpus: CorpusArg,
        #[command(flatten)]
        concepts: ConceptsArg,
        #[command(flatten)]
        embeddings: EmbedArg,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Project prototypes and prototypical dev problems to 2-D as CSV.
    ExportPrototypes {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        corpus: CorpusArg,
        #[command(flatten)]
        concepts: ConceptsArg,
        #[command(flatten)]
        embeddings: EmbedArg,
    },
    /// Train a sentence-level unknown extractor.
    TrainUnknown {
        #[command(flatten)]
        corpus: CorpusArg,
        #[command(flatten)]
        embeddings: EmbedArg,
        #[arg(long)]
        annotations: PathBuf,
        /// One of maxent, mlp, cnn, cnn_nocontext, cnn_graph, cnn_graph_lstm, cnn_graph_gru.
        #[arg(long, default_value = "cnn")]
        preset: String,
        /// Link-prediction checkpoint supplying graph contexts.
        #[arg(long)]
        graph: Option<PathBuf>,
        #[command(flatten)]
        concepts: ConceptsArg,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Score a non-learning baseline.
    Baseline {
        #[arg(long, default_value = "unknown")]
        task: String,
        #[command(flatten)]
        corpus: CorpusArg,
        #[arg(long)]
        annotations: PathBuf,
        /// 1-based sentence position, or `last`.
        #[arg(long, conflicts_with = "majority")]
        nth: Option<NthRule>,
        /// Predict no unknown sentence anywhere.
        #[arg(long)]
        majority: bool,
        #[arg(long, default_value = "dev")]
        split: Split,
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        corpus: CorpusArg,
        #[command(flatten)]
        concepts: ConceptsArg,
        #[command(flatten)]
        embeddings: EmbedArg,
        /// Required for unknown-extraction checkpoints.
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long, default_value = "dev")]
        split: Split,
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Run the annotation HTTP service.
    Serve {
        #[command(flatten)]
        corpus: CorpusArg,
        /// Journal file of the annotation store.
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
    /// Write annotation JSONL from a running service or a store file.
    ExportAnnotations {
        #[arg(long, conflicts_with = "store", required_unless_present = "store")]
        url: Option<String>,
        #[arg(long, requires = "corpus")]
        store: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Generate a corpus with one planted question sentence per problem.
    Synth {
        #[arg(long)]
        problems: Option<usize>,
        #[command(flatten)]
        concepts: ConceptsArg,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::FAILURE
        }
    }
}

/// The error chain, skipping causes already quoted by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn run(cli: Cli) -> Result<()> {
    let g = Globals {
        seed: cli.seed,
        config: cli.config,
        out: cli.out,
    };
    match cli.command {
        Command::Ingest { dump, policy, concepts } => ingest(&g, &dump, &policy, &concepts),
        Command::Split { corpus, fractions } => split(&g, &corpus.corpus, fractions),
        Command::Concepts { concepts } => {
            let cs = load_concepts(&concepts)?;
            let mut text = String::new();
            for c in &cs {
                text.push_str(&serde_json::to_string(c)?);
                text.push('\n');
            }
            g.emit(&text)
        }
        Command::EmbedFake { corpus, concepts, dim } => {
            let c = read_corpus(&corpus.corpus)?;
            let table = fake_embeddings(&c, &load_concepts(&concepts)?, g.seed.unwrap_or(0), dim)?;
            table.write_prefix(g.out()?)?;
            tracing::info!(items = table.len(), dim, "embeddings written");
            Ok(())
        }
        Command::Stats { corpus, annotations } => {
            let c = read_corpus(&corpus.corpus)?;
            let ann = annotations.as_deref().map(read_annotations).transpose()?;
            g.emit(&corpus_stats(&c, ann.as_ref()).to_csv())
        }
        Command::GraphBuild {
            corpus,
            concepts,
            embeddings,
        } => {
            let c = read_corpus(&corpus.corpus)?;
            let graph = build_graph(&c, &load_concepts(&concepts)?, &read_table(&embeddings.embeddings)?)?;
            let out = g.out()?;
            graph.export_jsonl(out)?;
            fs::write(out.join("graph_stats.csv"), graph.stats_csv()).with_context(|| out.display().to_string())?;
            tracing::info!(nodes = graph.len(), edges = graph.edges.len(), "graph written");
            Ok(())
        }
        Command::GraphTrain {
            corpus,
            concepts,
            embeddings,
            report,
        } => {
            let c = read_corpus(&corpus.corpus)?;
            let graph = build_graph(&c, &load_concepts(&concepts)?, &read_table(&embeddings.embeddings)?)?;
            let mut cfg: LinkConfig = g.config()?;
            g.override_seed(&mut cfg.seed);
            let model = train_link_prediction(&graph, &cfg)?;
            model.to_checkpoint().write(g.out()?)?;
            if let Some(last) = model.log.last() {
                tracing::info!(loss = last.loss, pos = last.train_pos_mean, neg = last.train_neg_mean, "link prediction trained");
            }
            if let Some(path) = report {
                write_file(&path, &(serde_json::to_string_pretty(&model.log)? + "\n"))?;
            }
            Ok(())
        }
        Command::TrainConcept {
            corpus,
            embeddings,
            preset,
            report,
        } => {
            let c = read_corpus(&corpus.corpus)?;
            let table = read_table(&embeddings.embeddings)?;
            let mut cfg = g.config_or(|| ConceptConfig::preset(&preset))?;
            g.override_seed(&mut cfg.seed);
            let trained = train_concept_classifier(&c, &table, &cfg, None)?;
            trained.model.to_checkpoint(&trained.epoch_loss).write(g.out()?)?;
            if let Some(path) = report {
                write_report(&path, &evaluate_concept_model(&trained.model, &c, &table, Split::Dev)?)?;
            }
            Ok(())
        }
        Command::TrainProto {
            corpus,
            concepts,
            embeddings,
            report,
        } => {
            let c = read_corpus(&corpus.corpus)?;
            let table = read_table(&embeddings.embeddings)?;
            let mut cfg: EpisodeConfig = g.config()?;
            g.override_seed(&mut cfg.seed);
            let (model, log) = train_prototypical(&c, &table, &cfg)?;
            model.to_checkpoint(&log).write(g.out()?)?;
            if let Some(path) = report {
                let r = evaluate_prototypes(&model, &c, &table, &load_concepts(&concepts)?, Split::Dev)?;
                write_report(&path, &r)?;
            }
            Ok(())
        }
        Command::ExportPrototypes {
            checkpoint,
            corpus,
            concepts,
            embeddings,
        } => {
            let model = ProtoModel::from_checkpoint(&Checkpoint::read(&checkpoint)?)?;
            let c = read_corpus(&corpus.corpus)?;
            let table = read_table(&embeddings.embeddings)?;
            let mut cfg: ExportConfig = g.config()?;
            g.override_seed(&mut cfg.seed);
            let points = export_prototypes(&model, &c, &table, &load_concepts(&concepts)?, &cfg)?;
            g.emit(&prototype_csv(&points))
        }
        Command::TrainUnknown {
            corpus,
            embeddings,
            annotations,
            preset,
            graph,
            concepts,
            report,
        } => {
            let c = read_corpus(&corpus.corpus)?;
            let table = read_table(&embeddings.embeddings)?;
            let ann = read_annotations(&annotations)?;
            let mut cfg = g.config_or(|| UnknownConfig::preset(&preset))?;
            g.override_seed(&mut cfg.seed);
            let graph_context = match graph {
                Some(path) => {
                    let link = LinkModel::from_checkpoint(&Checkpoint::read(&path)?)?;
                    let hg = build_graph(&c, &load_concepts(&concepts)?, &table)?;
                    Some(contexts(&hg, &link)?)
                }
                None => None,
            };
            let train = build_sentence_dataset(&c, &ann, Some(Split::Train))?;
            let trained = train_unknown_model(&train, &c, &table, &cfg, graph_context)?;
            trained.model.to_checkpoint(&trained.epoch_loss).write(g.out()?)?;
            if let Some(path) = report {
                let (r, _) = evaluate_unknown_model(&trained.model, &c, &table, &ann, Split::Dev)?;
                write_report(&path, &r)?;
            }
            Ok(())
        }
        Command::Baseline {
            task,
            corpus,
            annotations,
            nth,
            majority,
            split,
            predictions,
        } => {
            if task != "unknown" {
                bail!("baselines exist only for the unknown task, got `{task}`");
            }
            let baseline = match (nth, majority) {
                (_, true) => Baseline::Majority,
                (Some(rule), false) => Baseline::Position(rule),
                (None, false) => bail!("pass --nth or --majority"),
            };
            let c = read_corpus(&corpus.corpus)?;
            let (report, rows) = evaluate_unknown_baseline(baseline, &c, &read_annotations(&annotations)?, split)?;
            write_predictions(predictions.as_deref(), &rows)?;
            g.emit(&report.to_json()?)
        }
        Command::Eval {
            checkpoint,
            corpus,
            concepts,
            embeddings,
            annotations,
            split,
            predictions,
        } => {
            let ck = Checkpoint::read(&checkpoint)?;
            let c = read_corpus(&corpus.corpus)?;
            let table = read_table(&embeddings.embeddings)?;
            let report = match ck.kind.as_str() {
                UNKNOWN_KIND => {
                    let path = annotations.context("--annotations is required for unknown-extraction checkpoints")?;
                    let model = UnknownModel::from_checkpoint(&ck)?;
                    let (r, rows) = evaluate_unknown_model(&model, &c, &table, &read_annotations(&path)?, split)?;
                    write_predictions(predictions.as_deref(), &rows)?;
                    r
                }
                CONCEPT_KIND => evaluate_concept_model(&ConceptModel::from_checkpoint(&ck)?, &c, &table, split)?,
                PROTO_KIND => {
                    let model = ProtoModel::from_checkpoint(&ck)?;
                    evaluate_prototypes(&model, &c, &table, &load_concepts(&concepts)?, split)?
                }
                LINK_KIND => bail!("link-prediction checkpoints are scored by graph-train --report"),
                other => bail!("unknown checkpoint kind `{other}`"),
            };
            g.emit(&report.to_json()?)
        }
        Command::Serve { corpus, store, addr } => {
            let c = Arc::new(read_corpus(&corpus.corpus)?);
            let s = AnnotationStore::open(&store, &c)?;
            tracing::info!(problems = c.len(), annotated = s.len(), "store opened");
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(probunk_service::serve(addr, AppState::new(c, s)))?;
            Ok(())
        }
        Command::ExportAnnotations { url, store, corpus } => {
            let text = match (url, store, corpus) {
                (Some(url), _, _) => {
                    let rt = tokio::runtime::Runtime::new()?;
                    rt.block_on(probunk_client::Client::new(url).export())?
                }
                (None, Some(store), Some(corpus)) => {
                    let c = read_corpus(&corpus)?;
                    AnnotationStore::open(&store, &c)?.export()
                }
                _ => bail!("pass --url, or --store with --corpus"),
            };
            g.emit(&text)
        }
        Command::Synth { problems, concepts } => {
            let mut cfg: SynthConfig = g.config()?;
            g.override_seed(&mut cfg.seed);
            if let Some(n) = problems {
                cfg.problems = n;
            }
            let data = synthesize(&cfg, &load_concepts(&concepts)?)?;
            let out = g.out()?;
            data.corpus.write_dir(out)?;
            write_file(&out.join("annotations.jsonl"), &annotations_jsonl(data.annotations.values())?)?;
            let mut cs = String::new();
            for c in &data.concepts {
                cs.push_str(&serde_json::to_string(c)?);
                cs.push('\n');
            }
            write_file(&out.join("concepts.jsonl"), &cs)?;
            tracing::info!(problems = data.corpus.len(), "synthetic corpus written");
            Ok(())
        }
    }
}

struct Globals {
    seed: Option<u64>,
    config: Option<PathBuf>,
    out: Option<PathBuf>,
}

impl Globals {
    fn out(&self) -> Result<&Path> {
        self.out.as_deref().context("--out is required for this command")
    }

    /// Writes to --out, or to standard output when absent.
    fn emit(&self, text: &str) -> Result<()> {
        match &self.out {
            Some(p) => write_file(p, text),
            None => {
                std::io::stdout().write_all(text.as_bytes())?;
                Ok(())
            }
        }
    }

    fn config<T: DeserializeOwned + Default>(&self) -> Result<T> {
        self.config_or(|| Ok(T::default()))
    }

    /// The --config file when given, else `fallback`.
    fn config_or<T: DeserializeOwned>(&self, fallback: impl FnOnce() -> probunk_core::Result<T>) -> Result<T> {
        match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| path.display().to_string())?;
                serde_json::from_str(&text).with_context(|| format!("config {}", path.display()))
            }
            None => Ok(fallback()?),
        }
    }

    fn override_seed(&self, seed: &mut u64) {
        if let Some(s) = self.seed {
            *seed = s;
        }
    }
}

fn ingest(g: &Globals, dump: &Path, policy: &str, concepts: &ConceptsArg) -> Result<()> {
    let cs = load_concepts(concepts)?;
    let policy = if policy == "default" {
        TagPolicy::stats_default(&cs)
    } else {
        let text = fs::read_to_string(policy).with_context(|| policy.to_owned())?;
        serde_json::from_str(&text).with_context(|| format!("tag policy {policy}"))?
    };
    let posts = parse_dump_file(dump)?;
    let (problems, answers, report) = filter_problems(&posts, &policy)?;
    let corpus = Corpus::new(problems, answers)?;
    let out = g.out()?;
    corpus.write_dir(out)?;
    write_json(&out.join("filter_report.json"), &report)?;
    tracing::info!(kept = report.kept, questions = report.questions, "corpus written");
    Ok(())
}

fn split(g: &Globals, dir: &Path, fractions: Option<Vec<f64>>) -> Result<()> {
    let corpus = read_corpus(dir)?;
    let fractions = match fractions.as_deref() {
        Some([t, d, e]) => SplitFractions::new(*t, *d, *e)?,
        Some(_) => bail!("--fractions takes three numbers"),
        None => SplitFractions::STANDARD,
    };
    let ids: Vec<String> = corpus.problems().iter().map(|p| p.id.clone()).collect();
    let assignment = assign_splits(&ids, fractions, g.seed.unwrap_or(0))?;
    let corpus = corpus.with_splits(&assignment)?;
    corpus.write_dir(g.out()?)?;
    for s in Split::ALL {
        tracing::info!(split = %s, problems = corpus.split(s).count());
    }
    Ok(())
}

fn load_concepts(arg: &ConceptsArg) -> Result<Vec<Concept>> {
    Ok(match &arg.concepts {
        Some(p) => load_concepts_file(p)?,
        None => shipped_concepts(),
    })
}

fn read_corpus(dir: &Path) -> Result<Corpus> {
    Corpus::read_dir(dir).with_context(|| format!("reading corpus {}", dir.display()))
}

fn read_table(prefix: &Path) -> Result<EmbeddingTable> {
    EmbeddingTable::read_prefix(prefix).with_context(|| format!("reading embeddings {}", prefix.display()))
}

fn read_annotations(path: &Path) -> Result<AnnotationSet> {
    read_annotations_file(path).with_context(|| format!("reading annotations {}", path.display()))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| dir.display().to_string())?;
    }
    fs::write(path, text).with_context(|| path.display().to_string())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn write_report(path: &Path, report: &EvalReport) -> Result<()> {
    write_file(path, &report.to_json()?)
}

fn write_predictions(path: Option<&Path>, rows: &[PredictionRow]) -> Result<()> {
    match path {
        Some(p) => write_file(p, &predictions_jsonl(rows)?),
        None => Ok(()),
    }
}
