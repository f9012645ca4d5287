//! One function per subcommand. Each loads its inputs, produces its
//! artifacts, and finishes by writing a manifest beside the primary output,
//! so a manifest on disk means the command ran to completion.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};

use rerank_core::bm25::{build_index, load_index, save_index, search, Bm25Params};
use rerank_core::corpus::{
    generate_synthetic_dataset, load_collection, load_qrels, load_queries, load_run, write_run,
    Collection, Qrels, QuerySet, RankedList, SynthSpec,
};
use rerank_core::eval::{map_metric, mrr_at_10, rerank_run, MetricReport};
use rerank_core::model::{init_params, load_checkpoint, save_checkpoint, ModelConfig};
use rerank_core::tokenizer::{build_vocab, Vocab};
use rerank_core::train::{
    sample_training_pairs, train, OptimizerHyper, TrainLogRow, TrainOptions, TrainingExample,
};

use crate::manifest::{display, RunManifest};
use crate::vocab_io::{load_vocab, save_vocab};
use crate::{CurveArgs, EvalArgs, IndexArgs, RerankArgs, SearchArgs, SynthArgs, TrainArgs};

fn opt_string<T: ToString>(value: &Option<T>) -> String {
    value
        .as_ref()
        .map_or_else(|| "none".to_string(), ToString::to_string)
}

fn load_collection_at(path: &Path) -> Result<Collection> {
    load_collection(path).with_context(|| format!("reading collection {}", path.display()))
}

fn load_queries_at(path: &Path) -> Result<QuerySet> {
    load_queries(path).with_context(|| format!("reading queries {}", path.display()))
}

fn load_qrels_at(path: &Path) -> Result<Qrels> {
    load_qrels(path).with_context(|| format!("reading qrels {}", path.display()))
}

fn load_run_at(path: &Path) -> Result<Vec<RankedList>> {
    load_run(path).with_context(|| format!("reading run {}", path.display()))
}

pub fn cmd_index(args: IndexArgs) -> Result<()> {
    let collection = load_collection_at(&args.collection)?;
    let index = build_index(
        &collection,
        Bm25Params {
            k1: args.k1,
            b: args.b,
        },
    )?;
    save_index(&index, &args.out)
        .with_context(|| format!("writing index {}", args.out.display()))?;

    let mut manifest = RunManifest::new("index", None);
    manifest
        .flag("collection", display(&args.collection))
        .flag("out", display(&args.out))
        .flag("k1", args.k1)
        .flag("b", args.b)
        .input(&args.collection)
        .output(&args.out);
    manifest.write_beside(&args.out)?;
    Ok(())
}

pub fn cmd_search(args: SearchArgs) -> Result<()> {
    let index = load_index(&args.index)
        .with_context(|| format!("reading index {}", args.index.display()))?;
    let queries = load_queries_at(&args.queries)?;

    let mut run = Vec::new();
    for query in queries.iter() {
        let list = search(&index, query, args.k)?;
        // Queries that match nothing are omitted from the run file.
        if !list.entries.is_empty() {
            run.push(list);
        }
    }
    write_run(&run, &args.tag, &args.out)
        .with_context(|| format!("writing run {}", args.out.display()))?;

    let mut manifest = RunManifest::new("search", None);
    manifest
        .flag("index", display(&args.index))
        .flag("queries", display(&args.queries))
        .flag("out", display(&args.out))
        .flag("k", args.k)
        .flag("tag", &args.tag)
        .input(&args.index)
        .input(&args.queries)
        .output(&args.out);
    manifest.write_beside(&args.out)?;
    Ok(())
}

struct ResolvedDims {
    layers: usize,
    heads: usize,
    hidden_dim: usize,
    ffn_dim: usize,
    dropout: f64,
}

fn resolve_dims(
    layers: Option<usize>,
    heads: Option<usize>,
    hidden_dim: Option<usize>,
    ffn_dim: Option<usize>,
    dropout: Option<f64>,
) -> ResolvedDims {
    ResolvedDims {
        layers: layers.unwrap_or(2),
        heads: heads.unwrap_or(4),
        hidden_dim: hidden_dim.unwrap_or(32),
        ffn_dim: ffn_dim.unwrap_or(64),
        dropout: dropout.unwrap_or(0.1),
    }
}

fn write_loss_log(rows: &[TrainLogRow], path: &Path) -> Result<()> {
    let mut body = String::new();
    for row in rows {
        writeln!(body, "{}\t{:.6e}\t{:.6}", row.step, row.lr, row.loss).unwrap();
    }
    std::fs::write(path, body).with_context(|| format!("writing loss log {}", path.display()))?;
    Ok(())
}

pub fn cmd_train(args: TrainArgs) -> Result<()> {
    if args.total_steps == 0 {
        ensure!(
            args.resume.is_some(),
            "--total-steps 0 only makes sense with --resume (checkpoint passthrough)"
        );
    } else {
        ensure!(
            args.warmup_steps < args.total_steps,
            "--warmup-steps ({}) must be below --total-steps ({})",
            args.warmup_steps,
            args.total_steps
        );
    }
    let dims_given = args.layers.is_some()
        || args.heads.is_some()
        || args.hidden_dim.is_some()
        || args.ffn_dim.is_some()
        || args.dropout.is_some();
    if args.resume.is_some() && dims_given {
        bail!(
            "model shape comes from the checkpoint when resuming; drop --layers, --heads, \
             --hidden-dim, --ffn-dim, and --dropout"
        );
    }

    let log_out = args
        .log_out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.log.tsv", args.checkpoint_out.display())));
    let dims = resolve_dims(
        args.layers,
        args.heads,
        args.hidden_dim,
        args.ffn_dim,
        args.dropout,
    );
    let dim_flag = |value: String| -> String {
        if args.resume.is_some() {
            "from-checkpoint".to_string()
        } else {
            value
        }
    };

    let collection = load_collection_at(&args.collection)?;
    let queries = load_queries_at(&args.queries)?;
    let qrels = load_qrels_at(&args.qrels)?;
    let run = load_run_at(&args.run)?;

    let vocab = build_vocab(&collection, &queries, args.max_vocab)?;
    save_vocab(&vocab, &args.vocab_out)?;

    let log_rows;
    if args.total_steps == 0 {
        let source = args.resume.as_ref().expect("checked above");
        let bytes = std::fs::read(source)
            .with_context(|| format!("reading checkpoint {}", source.display()))?;
        std::fs::write(&args.checkpoint_out, bytes)
            .with_context(|| format!("writing checkpoint {}", args.checkpoint_out.display()))?;
        log_rows = Vec::new();
    } else {
        let mut params = match &args.resume {
            Some(path) => load_checkpoint(path)
                .with_context(|| format!("reading checkpoint {}", path.display()))?,
            None => init_params(&ModelConfig {
                num_layers: dims.layers,
                num_heads: dims.heads,
                hidden_dim: dims.hidden_dim,
                ffn_dim: dims.ffn_dim,
                vocab_size: vocab.size(),
                max_positions: args.max_total_pieces,
                dropout: dims.dropout,
                seed: args.seed,
            })?,
        };

        let examples = sample_training_pairs(
            &qrels,
            &run,
            args.depth,
            args.negatives_per_query,
            args.seed,
        );
        let hyper = OptimizerHyper {
            base_lr: args.base_lr,
            ..OptimizerHyper::with_schedule(args.warmup_steps, args.total_steps)
        };
        let options = TrainOptions {
            batch_size: args.batch_size,
            max_query_pieces: args.max_query_pieces,
            max_total_pieces: args.max_total_pieces,
            grad_clip: args.grad_clip,
        };
        log_rows = train(
            &mut params,
            &examples,
            &collection,
            &queries,
            &vocab,
            &hyper,
            &options,
        )?;
        save_checkpoint(&params, &args.checkpoint_out)
            .with_context(|| format!("writing checkpoint {}", args.checkpoint_out.display()))?;
    }
    write_loss_log(&log_rows, &log_out)?;

    let mut manifest = RunManifest::new("train", Some(args.seed));
    manifest
        .flag("collection", display(&args.collection))
        .flag("queries", display(&args.queries))
        .flag("qrels", display(&args.qrels))
        .flag("run", display(&args.run))
        .flag("checkpoint-out", display(&args.checkpoint_out))
        .flag("vocab-out", display(&args.vocab_out))
        .flag("log-out", display(&log_out))
        .flag(
            "resume",
            opt_string(&args.resume.as_ref().map(|p| display(p))),
        )
        .flag("batch-size", args.batch_size)
        .flag("base-lr", args.base_lr)
        .flag("warmup-steps", args.warmup_steps)
        .flag("total-steps", args.total_steps)
        .flag("depth", args.depth)
        .flag("negatives-per-query", args.negatives_per_query)
        .flag("seed", args.seed)
        .flag("grad-clip", opt_string(&args.grad_clip))
        .flag("layers", dim_flag(dims.layers.to_string()))
        .flag("heads", dim_flag(dims.heads.to_string()))
        .flag("hidden-dim", dim_flag(dims.hidden_dim.to_string()))
        .flag("ffn-dim", dim_flag(dims.ffn_dim.to_string()))
        .flag("dropout", dim_flag(dims.dropout.to_string()))
        .flag("max-vocab", args.max_vocab)
        .flag("max-query-pieces", args.max_query_pieces)
        .flag("max-total-pieces", args.max_total_pieces)
        .input(&args.collection)
        .input(&args.queries)
        .input(&args.qrels)
        .input(&args.run)
        .output(&args.checkpoint_out)
        .output(&args.vocab_out)
        .output(&log_out);
    if let Some(resume) = &args.resume {
        manifest.input(resume);
    }
    manifest.write_beside(&args.checkpoint_out)?;
    Ok(())
}

pub fn cmd_rerank(args: RerankArgs) -> Result<()> {
    let params = load_checkpoint(&args.checkpoint)
        .with_context(|| format!("reading checkpoint {}", args.checkpoint.display()))?;
    let vocab = load_vocab(&args.vocab)?;
    let collection = load_collection_at(&args.collection)?;
    let queries = load_queries_at(&args.queries)?;
    let run = load_run_at(&args.run)?;

    let reranked = rerank_run(
        &params,
        &vocab,
        &collection,
        &queries,
        &run,
        args.max_query_pieces,
        args.max_total_pieces,
    )?;
    write_run(&reranked, &args.tag, &args.out)
        .with_context(|| format!("writing run {}", args.out.display()))?;

    let mut manifest = RunManifest::new("rerank", None);
    manifest
        .flag("checkpoint", display(&args.checkpoint))
        .flag("vocab", display(&args.vocab))
        .flag("collection", display(&args.collection))
        .flag("queries", display(&args.queries))
        .flag("run", display(&args.run))
        .flag("out", display(&args.out))
        .flag("tag", &args.tag)
        .flag("max-query-pieces", args.max_query_pieces)
        .flag("max-total-pieces", args.max_total_pieces)
        .input(&args.checkpoint)
        .input(&args.vocab)
        .input(&args.collection)
        .input(&args.queries)
        .input(&args.run)
        .output(&args.out);
    manifest.write_beside(&args.out)?;
    Ok(())
}

fn evaluate_metric(metric: &str, run: &[RankedList], qrels: &Qrels) -> Result<MetricReport> {
    match metric {
        "mrr10" => Ok(mrr_at_10(run, qrels)?),
        "map" => Ok(map_metric(run, qrels)?),
        other => bail!("unknown metric {other:?}: valid options are mrr10, map"),
    }
}

pub fn cmd_eval(args: EvalArgs) -> Result<()> {
    let mut run = load_run_at(&args.run)?;
    let qrels = load_qrels_at(&args.qrels)?;
    if let Some(cutoff) = args.cutoff {
        ensure!(cutoff > 0, "--cutoff must be at least 1");
        for list in &mut run {
            list.entries.truncate(cutoff);
        }
    }

    let report = evaluate_metric(&args.metric, &run, &qrels)?;
    let line = format!(
        "{}\t{:.6}\t{}\t{}\n",
        args.metric, report.value, report.num_queries_evaluated, report.num_queries_skipped
    );
    std::fs::write(&args.out, line)
        .with_context(|| format!("writing report {}", args.out.display()))?;
    println!(
        "{} = {:.6} ({} queries evaluated, {} skipped)",
        report.name, report.value, report.num_queries_evaluated, report.num_queries_skipped
    );

    let mut manifest = RunManifest::new("eval", None);
    manifest
        .flag("run", display(&args.run))
        .flag("qrels", display(&args.qrels))
        .flag("metric", &args.metric)
        .flag("out", display(&args.out))
        .flag("cutoff", opt_string(&args.cutoff))
        .input(&args.run)
        .input(&args.qrels)
        .output(&args.out);
    manifest.write_beside(&args.out)?;
    Ok(())
}

fn curve_point(
    examples: &[TrainingExample],
    pairs: u64,
    args: &CurveArgs,
    dims: &ResolvedDims,
    collection: &Collection,
    queries: &QuerySet,
    qrels: &Qrels,
    vocab: &Vocab,
    eval_split: &[RankedList],
) -> Result<f64> {
    let steps = (pairs / args.batch_size as u64).max(1);
    let hyper = OptimizerHyper {
        base_lr: args.base_lr,
        ..OptimizerHyper::with_schedule((steps / 10).max(1), steps)
    };
    let options = TrainOptions {
        batch_size: args.batch_size,
        max_query_pieces: args.max_query_pieces,
        max_total_pieces: args.max_total_pieces,
        grad_clip: args.grad_clip,
    };
    let mut params = init_params(&ModelConfig {
        num_layers: dims.layers,
        num_heads: dims.heads,
        hidden_dim: dims.hidden_dim,
        ffn_dim: dims.ffn_dim,
        vocab_size: vocab.size(),
        max_positions: args.max_total_pieces,
        dropout: dims.dropout,
        seed: args.seed,
    })?;
    train(
        &mut params,
        examples,
        collection,
        queries,
        vocab,
        &hyper,
        &options,
    )
    .with_context(|| format!("training the {pairs}-pair model"))?;

    let reranked = rerank_run(
        &params,
        vocab,
        collection,
        queries,
        eval_split,
        args.max_query_pieces,
        args.max_total_pieces,
    )?;
    Ok(mrr_at_10(&reranked, qrels)?.value)
}

pub fn cmd_learning_curve(args: CurveArgs) -> Result<()> {
    ensure!(!args.sizes.is_empty(), "--sizes needs at least one entry");
    for pair in args.sizes.windows(2) {
        ensure!(
            pair[0] < pair[1],
            "--sizes must be strictly increasing, got {} before {}",
            pair[0],
            pair[1]
        );
    }
    ensure!(args.holdout > 0, "--holdout must be at least 1");

    let collection = load_collection_at(&args.collection)?;
    let queries = load_queries_at(&args.queries)?;
    let qrels = load_qrels_at(&args.qrels)?;
    let run = load_run_at(&args.run)?;
    ensure!(
        run.len() > args.holdout,
        "run has {} query lists, cannot hold out {}",
        run.len(),
        args.holdout
    );

    let vocab = build_vocab(&collection, &queries, args.max_vocab)?;
    let dims = resolve_dims(
        args.layers,
        args.heads,
        args.hidden_dim,
        args.ffn_dim,
        args.dropout,
    );
    let (train_split, eval_split) = run.split_at(run.len() - args.holdout);
    let examples = sample_training_pairs(
        &qrels,
        train_split,
        args.depth,
        args.negatives_per_query,
        args.seed,
    );

    let mut body = String::new();
    for &pairs in &args.sizes {
        let mrr = curve_point(
            &examples,
            pairs,
            &args,
            &dims,
            &collection,
            &queries,
            &qrels,
            &vocab,
            eval_split,
        )?;
        writeln!(body, "{pairs}\t{mrr:.6}").unwrap();
    }
    std::fs::write(&args.out, body)
        .with_context(|| format!("writing curve {}", args.out.display()))?;

    let sizes_text = args
        .sizes
        .iter()
        .map(u64::to_string)
        .collect::<Vec<_>>()
        .join(",");
    let mut manifest = RunManifest::new("learning-curve", Some(args.seed));
    manifest
        .flag("collection", display(&args.collection))
        .flag("queries", display(&args.queries))
        .flag("qrels", display(&args.qrels))
        .flag("run", display(&args.run))
        .flag("sizes", sizes_text)
        .flag("out", display(&args.out))
        .flag("holdout", args.holdout)
        .flag("batch-size", args.batch_size)
        .flag("base-lr", args.base_lr)
        .flag("seed", args.seed)
        .flag("depth", args.depth)
        .flag("negatives-per-query", args.negatives_per_query)
        .flag("grad-clip", opt_string(&args.grad_clip))
        .flag("layers", dims.layers)
        .flag("heads", dims.heads)
        .flag("hidden-dim", dims.hidden_dim)
        .flag("ffn-dim", dims.ffn_dim)
        .flag("dropout", dims.dropout)
        .flag("max-vocab", args.max_vocab)
        .flag("max-query-pieces", args.max_query_pieces)
        .flag("max-total-pieces", args.max_total_pieces)
        .input(&args.collection)
        .input(&args.queries)
        .input(&args.qrels)
        .input(&args.run)
        .output(&args.out);
    manifest.write_beside(&args.out)?;
    Ok(())
}

pub fn cmd_synth(args: SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        num_passages: args.num_passages,
        num_queries: args.num_queries,
        vocab_words: args.vocab_words,
        passage_len_range: (args.len_lo, args.len_hi),
        relevant_per_query: args.relevant_per_query,
        seed: args.seed,
    };
    let (collection, queries, qrels) = generate_synthetic_dataset(&spec)?;

    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let collection_path = args.out_dir.join("collection.tsv");
    let queries_path = args.out_dir.join("queries.tsv");
    let qrels_path = args.out_dir.join("qrels.txt");

    let mut body = String::new();
    for passage in collection.iter() {
        writeln!(body, "{}\t{}", passage.id, passage.text).unwrap();
    }
    std::fs::write(&collection_path, &body)
        .with_context(|| format!("writing {}", collection_path.display()))?;

    body.clear();
    for query in queries.iter() {
        writeln!(body, "{}\t{}", query.id, query.text).unwrap();
    }
    std::fs::write(&queries_path, &body)
        .with_context(|| format!("writing {}", queries_path.display()))?;

    body.clear();
    for query in queries.iter() {
        if let Some(relevant) = qrels.relevant(&query.id) {
            for passage_id in relevant {
                writeln!(body, "{} 0 {} 1", query.id, passage_id).unwrap();
            }
        }
    }
    std::fs::write(&qrels_path, &body)
        .with_context(|| format!("writing {}", qrels_path.display()))?;

    let mut manifest = RunManifest::new("synth", Some(args.seed));
    manifest
        .flag("out-dir", display(&args.out_dir))
        .flag("num-passages", args.num_passages)
        .flag("num-queries", args.num_queries)
        .flag("vocab-words", args.vocab_words)
        .flag("len-lo", args.len_lo)
        .flag("len-hi", args.len_hi)
        .flag("relevant-per-query", args.relevant_per_query)
        .flag("seed", args.seed)
        .output(&collection_path)
        .output(&queries_path)
        .output(&qrels_path);
    manifest.write_to(&args.out_dir.join("manifest.json"))?;
    Ok(())
}
