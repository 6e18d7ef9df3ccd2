use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ngramconv::arch::ArchitectureSpec;
use ngramconv::checkpoint::{ModelState, Provenance};
use ngramconv::corpus::{self, CorpusConfig, IndexedDocument, TokenizedDocument};
use ngramconv::embeddings::{load_vectors, EmbeddingTable};
use ngramconv::folksonomy::{self, AnnotationResult, ClusterModel, Label, TagProfile};
use ngramconv::nn::AdamConfig;
use ngramconv::trainer::{self, GridSpec, Metrics, Splits, TrainConfig};
use ngramconv::{Error, Result};
use serde::Serialize;

use crate::manifest::{digest, peak_memory_kb, RunManifest};
use crate::{AnnotateMode, Command, SplitChoice, TrainingArgs};

struct RunInfo<'a> {
    name: &'static str,
    inputs: Vec<&'a Path>,
    seed: Option<u64>,
    out: Option<&'a Path>,
}

fn describe(cmd: &Command) -> RunInfo<'_> {
    let info = |name, inputs, seed, out| RunInfo { name, inputs, seed, out };
    match cmd {
        Command::Preprocess(a) => info("preprocess", vec![a.input.as_path(), &a.vectors.vectors], None, Some(a.out.as_path())),
        Command::EmbedInfo(a) => info("embed-info", vec![a.vectors.as_path()], None, None),
        Command::Train(a) => info(
            "train",
            vec![a.data.as_path(), &a.vectors.vectors, &a.arch],
            Some(a.training.seed),
            Some(a.out.as_path()),
        ),
        Command::Eval(a) => {
            let mut inputs = vec![a.ckpt.as_path(), &a.data];
            if let Some(v) = &a.vectors {
                inputs.push(v);
            }
            info("eval", inputs, a.seed, None)
        }
        Command::Grid(a) => info(
            "grid",
            vec![a.data.as_path(), &a.vectors.vectors, &a.spec_grid],
            Some(a.training.seed),
            Some(a.report.as_path()),
        ),
        Command::Baseline(a) => info("baseline", vec![a.data.as_path()], Some(a.seed), None),
        Command::Annotate(a) => info("annotate", vec![a.tags.as_path()], Some(a.seed), Some(a.out.as_path())),
        Command::FolksonomyOpt(a) => info(
            "folksonomy-opt",
            vec![a.pools.as_path(), &a.vectors.vectors],
            None,
            a.out.as_deref(),
        ),
        Command::Report(a) => info("report", vec![a.grid.as_path()], None, None),
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = OsString::from(path.as_os_str());
    s.push(suffix);
    PathBuf::from(s)
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn run(cmd: &Command) -> Result<()> {
    let start = Instant::now();
    let info = describe(cmd);
    let mut inputs = BTreeMap::new();
    for p in &info.inputs {
        inputs.insert(p.display().to_string(), digest(p).map_err(|e| Error::io(*p, e))?);
    }
    match cmd {
        Command::Preprocess(a) => preprocess(a)?,
        Command::EmbedInfo(a) => embed_info(a)?,
        Command::Train(a) => train(a)?,
        Command::Eval(a) => eval(a)?,
        Command::Grid(a) => grid(a)?,
        Command::Baseline(a) => baseline(a)?,
        Command::Annotate(a) => annotate(a)?,
        Command::FolksonomyOpt(a) => folksonomy_opt(a)?,
        Command::Report(a) => report(a)?,
    }
    let manifest = RunManifest {
        command: info.name.to_string(),
        flags: serde_json::to_value(cmd).unwrap_or(serde_json::Value::Null),
        seed: info.seed,
        inputs,
        version: env!("CARGO_PKG_VERSION").to_string(),
        seconds: start.elapsed().as_secs_f64(),
        peak_memory_kb: peak_memory_kb(),
    };
    let json = serde_json::to_string(&manifest).expect("manifest serializes");
    eprintln!("manifest: {json}");
    if let Some(out) = info.out {
        write(&with_suffix(out, ".manifest.json"), json + "\n")?;
    }
    Ok(())
}

fn is_token_index(path: &Path) -> Result<bool> {
    if path.is_dir() {
        return Ok(false);
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    Ok(!first.contains('\t') && first.split_whitespace().all(|t| t.parse::<usize>().is_ok()))
}

fn tokenized(path: &Path, used_length: usize) -> Result<Vec<TokenizedDocument>> {
    let cfg = CorpusConfig::new(used_length)?;
    let raw = corpus::load_dataset(path)?;
    Ok(raw.iter().map(|d| corpus::preprocess(d, &cfg)).collect())
}

/// Raw datasets are cleaned and indexed; token-index files are checked against the table.
fn indexed(path: &Path, table: &EmbeddingTable, used_length: usize) -> Result<Vec<IndexedDocument>> {
    if is_token_index(path)? {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let docs = corpus::parse_token_index(&text)?;
        for (i, d) in docs.iter().enumerate() {
            if d.indices.len() != used_length {
                return Err(Error::Data(format!(
                    "document {} has {} indices, the model reads {used_length}",
                    i + 1,
                    d.indices.len()
                )));
            }
            if let Some(bad) = d.indices.iter().find(|&&x| x >= table.rows()) {
                return Err(Error::Data(format!("document {}: index {bad} outside the vector table", i + 1)));
            }
        }
        return Ok(docs);
    }
    Ok(corpus::index_corpus(&tokenized(path, used_length)?, used_length, table))
}

fn preprocess(a: &crate::PreprocessArgs) -> Result<()> {
    let table = load_vectors(&a.vectors.vectors, a.vectors.vectors_limit)?;
    let docs = tokenized(&a.input, a.used_length)?;
    let stats = corpus::length_stats(&docs)?;
    let indexed = corpus::index_corpus(&docs, a.used_length, &table);
    write(&a.out, corpus::format_token_index(&indexed))?;
    println!(
        "documents: {}\nmin length: {}\navg length: {:.4}\nmax length: {}\nused length: {}",
        stats.doc_count, stats.min_len, stats.avg_len, stats.max_len, a.used_length
    );
    Ok(())
}

fn embed_info(a: &crate::EmbedInfoArgs) -> Result<()> {
    let table = load_vectors(&a.vectors, a.limit)?;
    println!("dimension: {}\nvocabulary: {}", table.dim(), table.vocab_size());
    Ok(())
}

fn train_config(t: &TrainingArgs) -> Result<TrainConfig> {
    let cfg = TrainConfig {
        batch_size: t.batch,
        epochs: t.epochs,
        seed: t.seed,
        adam: AdamConfig {
            lr: t.lr,
            ..AdamConfig::default()
        },
        ..TrainConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn check_dims(spec_dim: usize, table: &EmbeddingTable) -> Result<()> {
    if spec_dim != table.dim() {
        return Err(Error::Config(format!(
            "architecture expects {spec_dim}-dimensional vectors, the vector file has {}",
            table.dim()
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct TrainReport<'a> {
    dev: &'a Metrics,
    test: &'a Metrics,
    params: usize,
    final_map_len: usize,
}

fn train(a: &crate::TrainArgs) -> Result<()> {
    let cfg = train_config(&a.training)?;
    let spec = ArchitectureSpec::load(&a.arch)?;
    let graph = spec.build()?;
    let table = load_vectors(&a.vectors.vectors, a.vectors.vectors_limit)?;
    check_dims(spec.embed_dim, &table)?;
    let docs = indexed(&a.data, &table, spec.input_length)?;
    let parts = trainer::split(&docs, &cfg)?;
    eprintln!(
        "train/dev/test: {}/{}/{}; parameters: {}",
        parts.train.len(),
        parts.dev.len(),
        parts.test.len(),
        graph.param_count()
    );
    let (mut state, dev) = trainer::train_with_progress(&graph, &table, &parts.train, &parts.dev, &cfg, |r| {
        eprintln!(
            "epoch {}: train loss {:.4}, dev accuracy {:.4}, dev loss {:.4}",
            r.epoch, r.train_loss, r.dev_accuracy, r.dev_loss
        )
    })?;
    state.source = Some(Provenance {
        vectors: a.vectors.vectors.display().to_string(),
        vectors_limit: a.vectors.vectors_limit,
        seed: cfg.seed,
    });
    state.save(&a.out)?;
    let test = trainer::evaluate(&graph, &state, &table, &parts.test)?;
    let report = TrainReport {
        dev: &dev,
        test: &test,
        params: graph.param_count(),
        final_map_len: graph.final_map_len(),
    };
    let json = serde_json::to_string_pretty(&report).expect("metrics serialize");
    let metrics_path = a.metrics.clone().unwrap_or_else(|| with_suffix(&a.out, ".metrics.json"));
    write(&metrics_path, json + "\n")?;
    println!(
        "best epoch {}: dev accuracy {:.4}, test accuracy {:.4}, {:.1} s",
        dev.best_epoch.unwrap_or(0),
        dev.accuracy,
        test.accuracy,
        dev.seconds
    );
    Ok(())
}

fn eval(a: &crate::EvalArgs) -> Result<()> {
    let state = ModelState::load(&a.ckpt)?;
    let graph = state.graph()?;
    let source = state.source.clone();
    let (vectors, limit) = match (&a.vectors, &source) {
        (Some(v), _) => (v.clone(), source.as_ref().and_then(|s| s.vectors_limit)),
        (None, Some(s)) => (PathBuf::from(&s.vectors), s.vectors_limit),
        (None, None) => return Err(Error::Config("checkpoint records no vector file; pass --vectors".into())),
    };
    let table = load_vectors(&vectors, limit)?;
    check_dims(state.spec.embed_dim, &table)?;
    let docs = indexed(&a.data, &table, state.spec.input_length)?;
    let seed = a.seed.or(source.map(|s| s.seed)).unwrap_or(crate::DEFAULT_SEED);
    let docs = match a.split {
        SplitChoice::All => docs,
        choice => {
            let cfg = TrainConfig {
                seed,
                ..TrainConfig::default()
            };
            let Splits { train, dev, test } = trainer::split(&docs, &cfg)?;
            match choice {
                SplitChoice::Train => train,
                SplitChoice::Dev => dev,
                _ => test,
            }
        }
    };
    let metrics = trainer::evaluate(&graph, &state, &table, &docs)?;
    println!("{}", serde_json::to_string_pretty(&metrics).expect("metrics serialize"));
    Ok(())
}

fn grid(a: &crate::GridArgs) -> Result<()> {
    let cfg = train_config(&a.training)?;
    let grid = GridSpec::load(&a.spec_grid)?;
    let table = load_vectors(&a.vectors.vectors, a.vectors.vectors_limit)?;
    let specs = grid.points(table.dim());
    for s in &specs {
        s.build()?;
    }
    let docs = indexed(&a.data, &table, grid.input_length)?;
    let parts = trainer::split(&docs, &cfg)?;
    eprintln!("{} grid points, jobs {}", specs.len(), a.jobs.max(1));
    let points = trainer::grid_search(&specs, &parts, &table, &cfg, a.jobs.max(1))?;
    let mut buf = Vec::new();
    trainer::write_grid_csv(&points, &mut buf, a.timing)?;
    write(&a.report, buf)?;
    print!("{}", trainer::render_report(&points));
    Ok(())
}

fn baseline(a: &crate::BaselineArgs) -> Result<()> {
    let docs = tokenized(&a.data, usize::MAX)?;
    let cfg = TrainConfig {
        seed: a.seed,
        ..TrainConfig::default()
    };
    let report = trainer::tfidf_logreg(&docs, &cfg)?;
    let mut s = String::new();
    for (c, acc) in &report.dev_accuracy {
        let _ = writeln!(s, "C = {c}: dev accuracy {acc:.4}");
    }
    let _ = writeln!(
        s,
        "chosen C = {}; {} features; test accuracy {:.4} on {} documents; {:.1} s",
        report.chosen_c, report.features, report.test.accuracy, report.test.count, report.test.seconds
    );
    print!("{s}");
    Ok(())
}

fn annotate(a: &crate::AnnotateArgs) -> Result<()> {
    let model = ClusterModel::reference();
    let songs = folksonomy::load_tag_dump(&a.tags)?;
    let rows: Vec<(AnnotationResult, TagProfile)> = songs
        .iter()
        .map(|(id, tags)| {
            let profile = folksonomy::count_tags(id, tags, &model);
            let result = match a.mode {
                AnnotateMode::Quadrant => folksonomy::annotate_quadrant(&profile),
                AnnotateMode::Binary => {
                    let (pos, neg) = profile.polarity_counts();
                    folksonomy::annotate_binary(id, pos, neg)
                }
            };
            (result, profile)
        })
        .collect();
    let classes: &[Label] = match a.mode {
        AnnotateMode::Quadrant => &Label::QUADRANTS,
        AnnotateMode::Binary => &Label::POLARITIES,
    };
    let rows = match a.balance {
        None => rows,
        Some(total) => {
            if total % classes.len() != 0 {
                return Err(Error::Config(format!(
                    "balance target {total} is not divisible by {} classes",
                    classes.len()
                )));
            }
            folksonomy::balance(&rows, |r| r.0.label, classes, total / classes.len(), a.seed)?
        }
    };
    let mut buf = Vec::new();
    folksonomy::write_annotations(&rows, &mut buf)?;
    write(&a.out, buf)?;
    let mut counts: BTreeMap<Label, usize> = BTreeMap::new();
    for (r, _) in &rows {
        *counts.entry(r.label).or_default() += 1;
    }
    for (label, n) in counts {
        println!("{label}: {n}");
    }
    Ok(())
}

fn folksonomy_opt(a: &crate::FolksonomyOptArgs) -> Result<()> {
    let text = fs::read_to_string(&a.pools).map_err(|e| Error::io(&a.pools, e))?;
    let pools = folksonomy::parse_pools(&text)?;
    let table = load_vectors(&a.vectors.vectors, a.vectors.vectors_limit)?;
    let model = folksonomy::select_cluster_tags(&pools, a.size, &table)?;
    let sim = folksonomy::cluster_similarity(&model, &table)?;
    let mut toml_out = String::new();
    for (c, intra) in model.clusters().iter().zip(&sim.intra) {
        println!("{} (intra {:.4}): {}", c.name, intra, c.terms.join(", "));
        let terms: Vec<String> = c.terms.iter().map(|t| format!("{t:?}")).collect();
        let _ = writeln!(toml_out, "[[cluster]]\nname = {:?}\nterms = [{}]\n", c.name, terms.join(", "));
    }
    println!("inter-cluster similarity {:.4}", sim.inter);
    if let Some(out) = &a.out {
        write(out, toml_out)?;
    }
    Ok(())
}

fn report(a: &crate::ReportArgs) -> Result<()> {
    let text = fs::read_to_string(&a.grid).map_err(|e| Error::io(&a.grid, e))?;
    let points = trainer::read_grid_csv(&text)?;
    print!("{}", trainer::render_report(&points));
    Ok(())
}
