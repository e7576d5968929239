use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use credgraph::features::{ingest_snapshot, synth_generate, write_snapshot, FeatureStore};
use credgraph::fl::{
    build_clients, cost_infer, cost_train, derive_seed, edges_by_id, train, CostLedger, EvalSet, LogRow, TrainContext,
    TrainResult, TrainRun, INIT_STREAM,
};
use credgraph::graph::{
    make_split, partition, read_graph_file, write_graph_file, AdminId, EdgeScope, GraphFile, PartitionSizes,
    Partitioned, PasswordReuseGraph, SplitPlan,
};
use credgraph::model::{Model, ModelConfig};
use credgraph::predict::{
    candidate_lists, classification_metrics, mse, ranking_metrics, tune_threshold, write_loss_plot, Prediction,
    RankingRow, RiskReport,
};
use credgraph::{CoreError, Result};
use ndgrad::ParamSet;
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::Command;
use crate::config::{EvalSplit, Paths, RunConfig, PARTITION_STREAM, RANK_STREAM, SPLIT_STREAM};

pub const BEST_CHECKPOINT: &str = "model.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const TRAIN_LOG: &str = "train_log.jsonl";

/// Runs one command and returns a summary for stdout.
pub fn run(cmd: Command, cfg: &RunConfig) -> Result<Value> {
    match cmd {
        Command::Generate => generate(cfg),
        Command::Ingest => ingest(cfg),
        Command::Partition => cmd_partition(cfg),
        Command::Train => cmd_train(cfg),
        Command::Evaluate => evaluate(cfg, false),
        Command::Rank => rank(cfg),
        Command::Report => evaluate(cfg, true),
        Command::Cost => cost(cfg),
        Command::Sweep => sweep(cfg),
    }
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = Paths::need(&cfg.paths.out, "out")?.to_path_buf();
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}

fn read_graph(cfg: &RunConfig) -> Result<GraphFile> {
    read_graph_file(Paths::need(&cfg.paths.graph, "graph")?)
}

fn load_partitioned(cfg: &RunConfig) -> Result<Partitioned> {
    let file = read_graph(cfg)?;
    if !file.is_partitioned() {
        return Err(CoreError::data("graph has no admin assignment; run partition first"));
    }
    Partitioned::from_assigned(file.build(cfg.label)?)
}

fn load_store(cfg: &RunConfig, graph: &PasswordReuseGraph) -> Result<FeatureStore> {
    let records = ingest_snapshot(Paths::need(&cfg.paths.snapshot, "snapshot")?)?;
    let store: FeatureStore = records.into_iter().map(|r| (r.site_id, r.features)).collect();
    if let Some(missing) = graph.node_ids().find(|id| !store.contains_key(id)) {
        return Err(CoreError::data(format!("snapshot has no features for node {missing}")));
    }
    Ok(store)
}

fn load_split(cfg: &RunConfig) -> Result<SplitPlan> {
    SplitPlan::load(Paths::need(&cfg.paths.split, "split")?)
}

fn generate(cfg: &RunConfig) -> Result<Value> {
    let dir = out_dir(cfg)?;
    let out = synth_generate(&cfg.synth)?;
    let header = cfg.to_json();
    write_graph_file(dir.join("graph.jsonl"), &out.graph, Some(&header))?;
    write_snapshot(
        dir.join("snapshot.jsonl"),
        out.features.iter().map(|(&k, v)| (k, v)),
        Some(&header),
    )?;
    Ok(json!({ "sites": out.graph.nodes.len(), "pairs": out.graph.stats.len() }))
}

fn ingest(cfg: &RunConfig) -> Result<Value> {
    let dir = out_dir(cfg)?;
    let records = ingest_snapshot(Paths::need(&cfg.paths.snapshot, "snapshot")?)?;
    let mut defaulted: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &records {
        for &f in &r.defaulted {
            *defaulted.entry(f).or_default() += 1;
        }
    }
    let header = cfg.to_json();
    write_snapshot(
        dir.join("snapshot.jsonl"),
        records.iter().map(|r| (r.site_id, &r.features)),
        Some(&header),
    )?;
    let summary = json!({ "records": records.len(), "defaulted": defaulted });
    write_json(
        &dir.join("ingest.json"),
        &json!({ "config": header, "summary": summary }),
    )?;
    Ok(summary)
}

fn partition_sizes(cfg: &RunConfig) -> PartitionSizes {
    match cfg.block_size {
        Some(b) => PartitionSizes::Block(b),
        None => PartitionSizes::Even,
    }
}

fn split_summary(parts: &Partitioned, split: &SplitPlan) -> Value {
    let sizes: Vec<usize> = parts.locals.iter().map(PasswordReuseGraph::node_count).collect();
    json!({
        "admins": parts.k(),
        "sizes": sizes,
        "train": split.train.len(),
        "valid": split.valid.len(),
        "test": split.test.len(),
        "valid_pair": [split.valid_pair.0 .0, split.valid_pair.1 .0],
    })
}

fn cmd_partition(cfg: &RunConfig) -> Result<Value> {
    let dir = out_dir(cfg)?;
    let graph = read_graph(cfg)?.build(cfg.label)?;
    let parts = partition(
        &graph,
        cfg.clients,
        &partition_sizes(cfg),
        derive_seed(cfg.seed, PARTITION_STREAM),
    )?;
    let split = make_split(&parts, cfg.valid_pair(), derive_seed(cfg.seed, SPLIT_STREAM))?;
    let header = cfg.to_json();
    write_graph_file(
        dir.join("partitioned.jsonl"),
        &GraphFile::from_graph(&parts.graph),
        Some(&header),
    )?;
    split.save(dir.join("split.json"), &header)?;
    Ok(split_summary(&parts, &split))
}

fn checkpoint_meta(cfg: &RunConfig, model: &ModelConfig, next_round: usize) -> Value {
    json!({ "config": cfg.to_json(), "model": model, "round": next_round })
}

fn write_log(path: &Path, cfg: &RunConfig, rows: &[LogRow]) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(&mut out, &json!({ "config": cfg.to_json() }))?;
    out.write_all(b"\n")?;
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Log rows of a training log, skipping its config header.
pub fn read_log(path: &Path) -> Result<Vec<LogRow>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || (i == 0 && line.starts_with("{\"config\"")) {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| CoreError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(rows)
}

fn ledger_json(ledger: &CostLedger) -> Value {
    json!({
        "bytes_per_scalar": ledger.bytes_per_scalar,
        "scalars": ledger.scalars,
        "clients": ledger.clients,
        "rounds": ledger.rounds.len(),
        "uploaded_bytes": ledger.uploaded,
        "downloaded_bytes": ledger.downloaded,
        "total_bytes": ledger.training_total(),
    })
}

/// Loads a checkpoint and the model configuration stored with it.
pub fn load_checkpoint(path: &Path) -> Result<(Model, ParamSet, Value)> {
    let (params, meta) = ParamSet::load(path)?;
    let mcfg: ModelConfig = serde_json::from_value(meta["model"].clone())
        .map_err(|e| CoreError::data(format!("checkpoint {} has no model config: {e}", path.display())))?;
    let model = Model::locate(&mcfg, &params)?;
    Ok((model, params, meta))
}

/// Trains on an already loaded corpus. `clients` limits the federation to
/// admins below that id.
fn train_on(
    cfg: &RunConfig,
    parts: &Partitioned,
    split: &SplitPlan,
    store: &FeatureStore,
    clients: Option<usize>,
) -> Result<(Model, TrainResult, usize)> {
    let (mut model, mut params) = Model::init(&cfg.model, derive_seed(cfg.seed, INIT_STREAM))?;
    let mut start = 0;
    if let Some(path) = &cfg.paths.resume {
        let (m, p, meta) = load_checkpoint(path)?;
        if m.cfg != cfg.model {
            return Err(CoreError::config(
                "resumed checkpoint was trained with a different model config",
            ));
        }
        start = meta["round"]
            .as_u64()
            .ok_or_else(|| CoreError::data("checkpoint has no round counter"))? as usize;
        model = m;
        params = p;
    }
    let mut all = build_clients(parts, split, &params, cfg.train.seed, cfg.centralized)?;
    if let Some(k) = clients {
        all.retain(|c| (c.admin.0 as usize) < k);
    }
    let valid = edges_by_id(parts, &split.valid)?;
    let valid = if valid.is_empty() {
        None
    } else {
        Some(EvalSet::new(&parts.graph, store, valid, cfg.model.layers)?)
    };
    let ctx = TrainContext {
        model: &model,
        store,
        cfg: &cfg.train,
    };
    let mut trainer = TrainRun::new(ctx, params, all, !cfg.centralized)?;
    trainer.round = start;
    let result = train(trainer, valid.as_ref())?;
    Ok((model, result, start))
}

fn cmd_train(cfg: &RunConfig) -> Result<Value> {
    let dir = out_dir(cfg)?;
    let parts = load_partitioned(cfg)?;
    let split = load_split(cfg)?;
    let store = load_store(cfg, &parts.graph)?;
    let (model, result, start) = train_on(cfg, &parts, &split, &store, None)?;
    let best_next = result.best_round.map_or(start, |r| r + 1);
    result
        .best
        .save(dir.join(BEST_CHECKPOINT), &checkpoint_meta(cfg, &model.cfg, best_next))?;
    let last_next = start + result.rounds_run;
    result
        .last
        .save(dir.join(LAST_CHECKPOINT), &checkpoint_meta(cfg, &model.cfg, last_next))?;
    write_log(&dir.join(TRAIN_LOG), cfg, &result.log)?;
    write_loss_plot(
        dir.join("loss.csv"),
        result.log.iter().map(|r| (r.round, r.mean_loss, r.valid_f1)),
    )?;
    let cost = ledger_json(&result.ledger);
    write_json(
        &dir.join("cost.json"),
        &json!({ "config": cfg.to_json(), "training": cost }),
    )?;
    Ok(json!({
        "rounds_run": result.rounds_run,
        "best_round": result.best_round,
        "best_valid_f1": result.best_f1,
        "scalars": result.best.total_scalars(),
        "training_bytes": result.ledger.training_total(),
    }))
}

struct Scored {
    predictions: Vec<Prediction>,
    threshold: f64,
    checkpoint: Value,
    d: usize,
    queries: u64,
}

fn score(cfg: &RunConfig) -> Result<Scored> {
    let parts = load_partitioned(cfg)?;
    let split = load_split(cfg)?;
    let store = load_store(cfg, &parts.graph)?;
    let (model, params, meta) = load_checkpoint(Paths::need(&cfg.paths.checkpoint, "checkpoint")?)?;
    let hops = model.cfg.layers;
    let threshold = if cfg.tune_threshold {
        let valid = EvalSet::new(&parts.graph, &store, edges_by_id(&parts, &split.valid)?, hops)?;
        if valid.is_empty() {
            return Err(CoreError::data("threshold tuning needs validation edges"));
        }
        tune_threshold(&valid.predict(&model, &params, cfg.train.tau_pred)?)
    } else {
        cfg.train.tau_pred
    };
    let ids = match cfg.eval_on {
        EvalSplit::Train => &split.train,
        EvalSplit::Valid => &split.valid,
        EvalSplit::Test => &split.test,
    };
    let edges = edges_by_id(&parts, ids)?;
    let queries = edges.iter().filter(|e| e.scope == EdgeScope::CrossAdmin).count() as u64;
    let set = EvalSet::new(&parts.graph, &store, edges, hops)?;
    let predictions = set.predict(&model, &params, threshold)?;
    Ok(Scored {
        predictions,
        threshold,
        checkpoint: meta["config"].clone(),
        d: model.cfg.d,
        queries,
    })
}

fn report_config(cfg: &RunConfig, s: &Scored) -> Value {
    json!({ "run": cfg.to_json(), "checkpoint": s.checkpoint, "threshold": s.threshold })
}

fn rank_rows(cfg: &RunConfig, predictions: &[Prediction]) -> Result<Vec<RankingRow>> {
    let max_k = *cfg.rank.ks.iter().max().expect("validated non-empty");
    let lists = candidate_lists(
        predictions,
        cfg.rank.candidates,
        max_k,
        derive_seed(cfg.seed, RANK_STREAM),
    )?;
    ranking_metrics(&lists, &cfg.rank.ks)
}

fn evaluate(cfg: &RunConfig, with_ranking: bool) -> Result<Value> {
    let dir = out_dir(cfg)?;
    let s = score(cfg)?;
    let ranking = if with_ranking {
        rank_rows(cfg, &s.predictions)?
    } else {
        Vec::new()
    };
    let report = RiskReport::new(report_config(cfg, &s), &s.predictions, ranking);
    report.write(&dir)?;
    let mut ledger = CostLedger::new(cfg.train.bytes_per_scalar, cfg.train.delta, 0, 0);
    let bytes = ledger.record_inference(s.d as u64, s.queries)?;
    write_json(
        &dir.join("cost.json"),
        &json!({
            "config": report.config,
            "inference": {
                "delta": cfg.train.delta,
                "bytes_per_scalar": cfg.train.bytes_per_scalar,
                "d": s.d,
                "queries": s.queries,
                "embedding_bytes": bytes,
            }
        }),
    )?;
    Ok(json!({
        "edges": s.predictions.len(),
        "threshold": s.threshold,
        "metrics": report.metrics,
        "ranking": report.ranking,
        "embedding_bytes": bytes,
    }))
}

fn rank(cfg: &RunConfig) -> Result<Value> {
    let dir = out_dir(cfg)?;
    let s = score(cfg)?;
    let rows = rank_rows(cfg, &s.predictions)?;
    write_json(
        &dir.join("ranking.json"),
        &json!({ "config": report_config(cfg, &s), "ranking": rows }),
    )?;
    let mut w = csv::Writer::from_path(dir.join("ranking.csv")).map_err(|e| CoreError::Runtime(e.to_string()))?;
    for r in &rows {
        w.serialize(r).map_err(|e| CoreError::Runtime(e.to_string()))?;
    }
    w.flush()?;
    Ok(json!({ "ranking": rows }))
}

fn cost(cfg: &RunConfig) -> Result<Value> {
    let b = cfg.train.bytes_per_scalar;
    let scalars = match &cfg.paths.checkpoint {
        Some(path) => Some(ParamSet::load(path)?.0.total_scalars() as u64),
        None => cfg.cost.scalars,
    };
    let mut out = serde_json::Map::new();
    out.insert("config".into(), cfg.to_json());
    let k = cfg.clients as u64;
    if let Some(w) = scalars {
        let closed = cost_train(b, w, k, cfg.train.rounds as u64)?;
        out.insert("scalars".into(), json!(w));
        out.insert("train_bytes_scheduled".into(), json!(closed));
        if let Some(log) = &cfg.paths.log {
            let rows = read_log(log)?;
            let t = rows.len() as u64;
            let expected = if cfg.centralized { 0 } else { cost_train(b, w, k, t)? };
            let logged = rows.last().map_or(0, |r| r.cum_upload_bytes + r.cum_download_bytes);
            out.insert("rounds_run".into(), json!(t));
            out.insert("train_bytes".into(), json!(expected));
            out.insert("logged_bytes".into(), json!(logged));
            if expected != logged {
                return Err(CoreError::Runtime(format!(
                    "ledger mismatch: log records {logged} bytes, closed form gives {expected}"
                )));
            }
        }
    } else if cfg.paths.log.is_some() {
        return Err(CoreError::config(
            "--log needs --checkpoint or --scalars for the parameter count",
        ));
    }
    if let Some(q) = cfg.cost.queries {
        out.insert(
            "infer_bytes".into(),
            json!(cost_infer(cfg.train.delta, b, cfg.model.d as u64, q)?),
        );
    }
    let value = Value::Object(out);
    if let Some(dir) = &cfg.paths.out {
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join("cost.json"), &value)?;
    }
    Ok(value)
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub clients: usize,
    pub seed: u64,
    pub rounds_run: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mse: Option<f64>,
}

/// Partitions once at the largest size with a fixed validation pair so
/// every federation size is scored on the same test edges; size `K`
/// trains admins `0..K`.
fn sweep(cfg: &RunConfig) -> Result<Value> {
    let dir = out_dir(cfg)?;
    let kmax = *cfg.sweep_clients.iter().max().expect("validated non-empty");
    let graph = read_graph(cfg)?.build(cfg.label)?;
    let store = load_store(cfg, &graph)?;
    let parts = partition(
        &graph,
        kmax,
        &partition_sizes(cfg),
        derive_seed(cfg.seed, PARTITION_STREAM),
    )?;
    let pair = cfg.valid_pair().unwrap_or((AdminId(0), AdminId(1)));
    let split = make_split(&parts, Some(pair), derive_seed(cfg.seed, SPLIT_STREAM))?;
    let test = EvalSet::new(
        &parts.graph,
        &store,
        edges_by_id(&parts, &split.test)?,
        cfg.model.layers,
    )?;
    let mut rows = Vec::new();
    let mut ks = cfg.sweep_clients.clone();
    ks.sort_unstable();
    ks.dedup();
    for &k in &ks {
        for s in 0..cfg.sweep_seeds as u64 {
            let mut run_cfg = cfg.clone();
            run_cfg.seed = derive_seed(cfg.seed, 100 + s);
            run_cfg.paths.resume = None;
            let run_cfg = run_cfg.finalize()?;
            let (model, result, _) = train_on(&run_cfg, &parts, &split, &store, Some(k))?;
            let preds = test.predict(&model, &result.best, cfg.train.tau_pred)?;
            let m = classification_metrics(&preds);
            rows.push(SweepRow {
                clients: k,
                seed: run_cfg.seed,
                rounds_run: result.rounds_run,
                precision: m.precision,
                recall: m.recall,
                f1: m.f1,
                mse: mse(&preds),
            });
        }
    }
    write_json(
        &dir.join("sweep.json"),
        &json!({ "config": cfg.to_json(), "rows": rows }),
    )?;
    let mut w = csv::Writer::from_path(dir.join("sweep.csv")).map_err(|e| CoreError::Runtime(e.to_string()))?;
    for r in &rows {
        w.serialize(r).map_err(|e| CoreError::Runtime(e.to_string()))?;
    }
    w.flush()?;
    Ok(json!({ "rows": rows, "test_edges": split.test.len() }))
}
