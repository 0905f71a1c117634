use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use conssent_core::dataset::{
    generate_pairs, generate_single, write_pairs, write_probe, write_single,
};
use conssent_core::encoder::{encode_stack, load_checkpoint, save_checkpoint, CheckpointMeta};
use conssent_core::ensemble::{ensemble_accuracy, normalize_weights, EnsembleSpec};
use conssent_core::probes::{
    encode_probe, eval_logreg, eval_mlp_probe, select_logreg, untrained_encoder, ProbeTable,
    ProbeTask,
};
use conssent_core::train::{
    run_gradcheck, train_multitask, train_single_task, EpochMetrics, GradcheckConfig, Objective,
    TrainData, TrainOutcome,
};
use conssent_core::{EncoderConfig, EncoderParams, Model, Task, TokenSequence, Vocabulary};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::data::{load_data, probe_tasks, Data};
use crate::{NumericFailure, UsageError};

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn write_run_record(dir: &Path, cfg: &RunConfig) -> Result<()> {
    write_json(
        &dir.join("run.json"),
        &json!({ "config_hash": cfg.hash(), "config": cfg }),
    )
}

fn write_vocab(dir: &Path, vocab: &Vocabulary) -> Result<()> {
    vocab.write_to(BufWriter::new(File::create(dir.join("vocab.txt"))?))?;
    Ok(())
}

fn read_vocab(path: &Path) -> Result<Vocabulary> {
    let file =
        File::open(path).with_context(|| format!("opening vocabulary {}", path.display()))?;
    Ok(Vocabulary::read_from(BufReader::new(file))?)
}

fn create(path: PathBuf) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(&path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

pub fn gen(cfg: &RunConfig, out: &Path, with_probes: bool) -> Result<()> {
    let task = cfg.train.task;
    let Some(objective) = task.objective() else {
        bail!(UsageError(
            "gen needs a single task (D, P, I, R, C or N), not MT".into()
        ));
    };
    let data = load_data(cfg)?;
    create_dir(out)?;
    write_run_record(out, cfg)?;
    write_vocab(out, &data.corpus.vocab)?;
    let t = &cfg.train;
    for (name, sentences, offset) in [("train", &data.train, 0), ("valid", &data.valid, 1)] {
        let seed = t.seed.wrapping_add(offset);
        let w = create(out.join(format!("{name}.tsv")))?;
        let skipped = match objective {
            Objective::Single(kind) => {
                let (examples, skipped) =
                    generate_single(sentences, kind, t.k, t.gate_p, &data.corpus.vocab, seed);
                write_single(w, &examples, &data.corpus.vocab)?;
                skipped
            }
            Objective::Pair(kind) => {
                let (batches, skipped) = generate_pairs(sentences, kind, t.k, t.batch_size, seed)?;
                write_pairs(w, &batches, &data.corpus.vocab)?;
                skipped
            }
        };
        if skipped > 0 {
            log::warn!(
                "{name}: skipped {skipped} sentences too short for {task}({})",
                t.k
            );
        }
    }
    if with_probes {
        let dir = out.join("probes");
        create_dir(&dir)?;
        for probe in probe_tasks(cfg, &data.corpus.vocab)? {
            write_probe(
                create(dir.join(format!("{}.tsv", probe.kind)))?,
                &probe,
                &data.corpus.vocab,
            )?;
        }
    }
    log::info!("wrote {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct MetricsLine<'a> {
    #[serde(flatten)]
    metrics: &'a EpochMetrics,
    config_hash: &'a str,
}

#[derive(Clone, Debug, Serialize)]
pub struct GroupSummary {
    pub label: String,
    pub best_epoch: usize,
    pub best_valid_acc: f64,
    pub final_train_loss: f64,
    /// Bit pattern of `final_train_loss`, for exact comparisons.
    pub final_train_loss_bits: String,
    pub member_valid_acc: BTreeMap<String, f64>,
    pub steps: usize,
    pub max_applied_norm: f64,
    pub skipped: usize,
    pub checkpoint: PathBuf,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainSummary {
    pub config_hash: String,
    pub task: String,
    pub k: usize,
    pub output_dim: usize,
    pub groups: Vec<GroupSummary>,
}

impl TrainSummary {
    pub fn checkpoints(&self) -> Vec<PathBuf> {
        self.groups.iter().map(|g| g.checkpoint.clone()).collect()
    }

    pub fn best_valid_acc(&self) -> f64 {
        self.groups.iter().map(|g| g.best_valid_acc).sum::<f64>() / self.groups.len() as f64
    }
}

fn save_group(
    cfg: &RunConfig,
    out: &Path,
    file: &str,
    outcome: &TrainOutcome,
    vocab: &Vocabulary,
    metrics: &mut impl Write,
) -> Result<GroupSummary> {
    let hash = cfg.hash();
    for m in &outcome.history {
        serde_json::to_writer(
            &mut *metrics,
            &MetricsLine {
                metrics: m,
                config_hash: &hash,
            },
        )?;
        writeln!(metrics)?;
    }
    let model = &outcome.model;
    let meta = CheckpointMeta {
        vocab_size: model.encoder.vocab_size(),
        embed_dim: model.encoder.embed_dim(),
        hidden_dim: model.encoder.hidden_dim(),
        head_dim: model
            .heads
            .first()
            .map_or(cfg.train.head_dim, |h| h.hidden_dim()),
        num_heads: model.heads.len(),
        head_tasks: outcome
            .objectives
            .iter()
            .filter(|o| matches!(o, Objective::Single(_)))
            .map(|o| o.task().to_string())
            .collect(),
        vocab_hash: vocab.content_hash(),
        task: cfg.train.task.to_string(),
        k: cfg.train.k,
        config_hash: hash,
    };
    let path = out.join(file);
    save_checkpoint(&path, model, &meta)?;
    let loss = outcome.final_train_loss();
    Ok(GroupSummary {
        label: outcome
            .history
            .first()
            .map_or_else(String::new, |m| m.task.clone()),
        best_epoch: outcome.best_epoch,
        best_valid_acc: outcome.best_valid_acc,
        final_train_loss: loss,
        final_train_loss_bits: format!("{:016x}", loss.to_bits()),
        member_valid_acc: outcome.best_member_acc().clone(),
        steps: outcome.steps.len(),
        max_applied_norm: outcome
            .steps
            .iter()
            .map(|s| s.applied_norm)
            .fold(0.0, f64::max),
        skipped: outcome.skipped,
        checkpoint: path,
    })
}

/// Trains on already loaded data and writes metrics, checkpoints and a
/// summary into `out`.
pub fn train_into(cfg: &RunConfig, data: &Data, out: &Path) -> Result<TrainSummary> {
    create_dir(out)?;
    write_run_record(out, cfg)?;
    write_vocab(out, &data.corpus.vocab)?;
    let train_data = TrainData {
        vocab: &data.corpus.vocab,
        train: &data.train,
        valid: &data.valid,
    };
    let mut metrics = create(out.join("metrics.jsonl"))?;
    let vocab = &data.corpus.vocab;
    let (groups, output_dim) = if cfg.train.task == Task::MT {
        let mt = train_multitask(&cfg.train, train_data)?;
        let first = save_group(cfg, out, "model_e1.csnt", &mt.first, vocab, &mut metrics)?;
        let second = save_group(cfg, out, "model_e2.csnt", &mt.second, vocab, &mut metrics)?;
        (vec![first, second], mt.output_dim())
    } else {
        let outcome = train_single_task(&cfg.train, train_data)?;
        let dim = outcome.model.encoder.output_dim();
        (
            vec![save_group(
                cfg,
                out,
                "model.csnt",
                &outcome,
                vocab,
                &mut metrics,
            )?],
            dim,
        )
    };
    metrics.flush()?;
    let summary = TrainSummary {
        config_hash: cfg.hash(),
        task: cfg.train.task.to_string(),
        k: cfg.train.k,
        output_dim,
        groups,
    };
    write_json(&out.join("summary.json"), &summary)?;
    for g in &summary.groups {
        log::info!(
            "{}: best valid {:.4} at epoch {}, final train loss {:.6}",
            g.label,
            g.best_valid_acc,
            g.best_epoch,
            g.final_train_loss
        );
    }
    Ok(summary)
}

pub fn train(cfg: &RunConfig, out: &Path) -> Result<()> {
    let data = load_data(cfg)?;
    train_into(cfg, &data, out)?;
    Ok(())
}

/// Loaded encoders whose encodings are concatenated.
pub struct EncoderStack {
    pub encoders: Vec<EncoderParams>,
    pub vocab: Vocabulary,
}

impl EncoderStack {
    pub fn load(checkpoints: &[PathBuf], vocab_path: Option<&Path>) -> Result<Self> {
        let Some(first) = checkpoints.first() else {
            bail!(UsageError("no checkpoint given".into()));
        };
        let vocab_path = match vocab_path {
            Some(p) => p.to_path_buf(),
            None => first.parent().unwrap_or(Path::new(".")).join("vocab.txt"),
        };
        let vocab = read_vocab(&vocab_path)?;
        let mut encoders = Vec::new();
        for path in checkpoints {
            let (model, meta): (Model, CheckpointMeta) =
                load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
            if meta.vocab_hash != vocab.content_hash() {
                bail!(UsageError(format!(
                    "{} was trained with a different vocabulary than {}",
                    path.display(),
                    vocab_path.display()
                )));
            }
            encoders.push(model.encoder);
        }
        Ok(EncoderStack { encoders, vocab })
    }

    pub fn output_dim(&self) -> usize {
        self.encoders.iter().map(|e| e.output_dim()).sum()
    }

    pub fn encode(&self, s: &TokenSequence) -> Vec<f64> {
        let refs: Vec<&EncoderParams> = self.encoders.iter().collect();
        encode_stack(s, &refs)
    }
}

/// Test accuracy under "logreg"/"mlp" and the validation accuracy of the
/// selected configuration, per task.
fn probe_encoder(
    encode_fn: impl Fn(&TokenSequence) -> Vec<f64> + Sync,
    tasks: &[ProbeTask],
    cfg: &RunConfig,
    prefix: &str,
    test: &mut ProbeTable,
    valid: &mut ProbeTable,
) -> Result<()> {
    for task in tasks {
        let enc = encode_probe(task, &encode_fn);
        let name = task.kind.to_string();
        let lr = eval_logreg(&enc, &cfg.probe.l2_grid)?;
        log::info!(
            "{prefix}{name}: logreg test {:.4} ({})",
            lr.test_acc,
            lr.config
        );
        test.insert(&name, &format!("{prefix}logreg"), lr.test_acc);
        valid.insert(&name, &format!("{prefix}logreg"), lr.valid_acc);
        if cfg.mlp {
            let mlp = eval_mlp_probe(&enc, &cfg.probe)?;
            log::info!(
                "{prefix}{name}: mlp test {:.4} ({})",
                mlp.test_acc,
                mlp.config
            );
            test.insert(&name, &format!("{prefix}mlp"), mlp.test_acc);
            valid.insert(&name, &format!("{prefix}mlp"), mlp.valid_acc);
        }
    }
    Ok(())
}

fn untrained_config(
    cfg: &RunConfig,
    vocab_size: usize,
    hidden_dim: usize,
    embed_dim: usize,
) -> EncoderConfig {
    EncoderConfig {
        embed_init: cfg.train.embed_init,
        lstm_init_gain: cfg.train.lstm_init_gain,
        ..EncoderConfig::new(vocab_size, embed_dim, hidden_dim)
    }
}

pub fn probe(
    cfg: &RunConfig,
    checkpoints: &[PathBuf],
    vocab: Option<&Path>,
    untrained: bool,
    out: &Path,
) -> Result<ProbeTable> {
    if checkpoints.is_empty() && !untrained {
        bail!(UsageError("probe needs --checkpoint or --untrained".into()));
    }
    create_dir(out)?;
    write_run_record(out, cfg)?;
    let mut test = ProbeTable::default();
    let mut valid = ProbeTable::default();
    let (vocab, stack) = if checkpoints.is_empty() {
        (load_data(cfg)?.corpus.vocab, None)
    } else {
        let stack = EncoderStack::load(checkpoints, vocab)?;
        (stack.vocab.clone(), Some(stack))
    };
    let tasks = probe_tasks(cfg, &vocab)?;
    if let Some(stack) = &stack {
        probe_encoder(|s| stack.encode(s), &tasks, cfg, "", &mut test, &mut valid)?;
    }
    if untrained {
        let (dim, embed) = match &stack {
            Some(s) => (s.output_dim(), s.encoders[0].embed_dim()),
            None => (2 * cfg.train.hidden_dim, cfg.train.embed_dim),
        };
        let enc_cfg = untrained_config(cfg, vocab.len(), dim / 2, embed);
        let encoder = untrained_encoder(&enc_cfg, cfg.train.seed);
        probe_encoder(
            |s| conssent_core::encode(s, &encoder).into_vec(),
            &tasks,
            cfg,
            "untrained-",
            &mut test,
            &mut valid,
        )?;
    }
    let hash = cfg.hash();
    write_json(
        &out.join("probe_results.json"),
        &json!({ "config_hash": hash, "test": test, "valid": valid }),
    )?;
    fs::write(out.join("probe_results.tsv"), test.to_tsv())?;
    Ok(test)
}

/// Parses `a..b`, `a..=b` (both inclusive) or a single value.
pub fn parse_k_range(s: &str) -> Result<Vec<usize>> {
    let parse = |v: &str| -> Result<usize> {
        v.trim()
            .parse()
            .map_err(|_| UsageError(format!("bad k range {s:?}")).into())
    };
    let (lo, hi) = match s.split_once("..") {
        Some((a, b)) => (parse(a)?, parse(b.trim_start_matches('='))?),
        None => {
            let v = parse(s)?;
            (v, v)
        }
    };
    if lo > hi || lo == 0 {
        bail!(UsageError(format!("bad k range {s:?}")));
    }
    Ok((lo..=hi).collect())
}

pub fn sweep(cfg: &RunConfig, ks: &[usize], out: &Path) -> Result<()> {
    create_dir(out)?;
    write_run_record(out, cfg)?;
    let data = load_data(cfg)?;
    let tasks = probe_tasks(cfg, &data.corpus.vocab)?;
    let mut rows = Vec::new();
    let mut table = ProbeTable::default();
    for &k in ks {
        let mut run = cfg.clone();
        run.train.k = k;
        run.validate()?;
        let dir = out.join(format!("k{k}"));
        log::info!("sweep: {}({k})", run.train.task);
        let summary = train_into(&run, &data, &dir)?;
        let stack = EncoderStack::load(&summary.checkpoints(), None)?;
        let mut test = ProbeTable::default();
        let mut valid = ProbeTable::default();
        probe_encoder(|s| stack.encode(s), &tasks, &run, "", &mut test, &mut valid)?;
        let label = format!("{}({k})", run.train.task);
        table.insert("valid", &label, summary.best_valid_acc());
        for (task, accs) in &test.0 {
            for (clf, acc) in accs {
                table.insert(&format!("{task}/{clf}"), &label, *acc);
            }
        }
        rows.push(json!({ "k": k, "best_valid_acc": summary.best_valid_acc(), "probes": test }));
    }
    write_json(
        &out.join("sweep.json"),
        &json!({ "config_hash": cfg.hash(), "task": cfg.train.task, "runs": rows }),
    )?;
    fs::write(out.join("sweep.tsv"), table.to_tsv())?;
    Ok(())
}

pub fn ensemble(
    cfg: &RunConfig,
    manifest: &Path,
    vocab: Option<&Path>,
    out: &Path,
) -> Result<ProbeTable> {
    let spec = EnsembleSpec::load(manifest)
        .map_err(|e| UsageError(format!("manifest {}: {e}", manifest.display())))?;
    create_dir(out)?;
    write_run_record(out, cfg)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let resolve = |p: &PathBuf| {
        if p.is_absolute() {
            p.clone()
        } else {
            base.join(p)
        }
    };
    let members = spec
        .members
        .iter()
        .map(|m| {
            let paths: Vec<PathBuf> = m.checkpoints.iter().map(resolve).collect();
            EncoderStack::load(&paths, vocab)
        })
        .collect::<Result<Vec<_>>>()?;
    if members
        .windows(2)
        .any(|w| w[0].vocab.content_hash() != w[1].vocab.content_hash())
    {
        bail!(UsageError(
            "ensemble members use different vocabularies".into()
        ));
    }
    let tasks = probe_tasks(cfg, &members[0].vocab)?;
    let listed = spec.tasks();
    let mut table = ProbeTable::default();
    let mut weights = BTreeMap::new();
    for task in &tasks {
        let name = task.kind.to_string();
        if !listed.is_empty() && !listed.contains(&name) {
            continue;
        }
        let mut probs = Vec::new();
        let mut valid_scores = Vec::new();
        let mut labels = Vec::new();
        for (i, member) in members.iter().enumerate() {
            let enc = encode_probe(task, |s| member.encode(s));
            let (model, result) = select_logreg(&enc, &cfg.probe.l2_grid)?;
            table.insert(&name, &format!("member{i}"), result.test_acc);
            probs.push(
                enc.test
                    .features
                    .iter()
                    .map(|f| model.predict_proba(f))
                    .collect::<Vec<_>>(),
            );
            valid_scores.push(result.valid_acc);
            labels = enc.test.labels;
        }
        let w = if listed.contains(&name) {
            spec.weights(&name)?
        } else {
            normalize_weights(&valid_scores)?
        };
        let acc = ensemble_accuracy(&probs, &w, &labels)?;
        log::info!("{name}: ensemble test {acc:.4}");
        table.insert(&name, "ensemble", acc);
        weights.insert(name, w);
    }
    write_json(
        &out.join("ensemble.json"),
        &json!({ "config_hash": cfg.hash(), "results": table, "weights": weights }),
    )?;
    fs::write(out.join("ensemble.tsv"), table.to_tsv())?;
    Ok(table)
}

pub fn gradcheck(models: usize, seed: u64) -> Result<()> {
    let report = run_gradcheck(&GradcheckConfig {
        models,
        seed,
        ..GradcheckConfig::default()
    })?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    if !(report.max_rel_err() < GRADCHECK_TOLERANCE) {
        bail!(NumericFailure(format!(
            "max relative error {:e} exceeds {GRADCHECK_TOLERANCE:e}",
            report.max_rel_err()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_ranges() {
        assert_eq!(parse_k_range("2..6").unwrap(), [2, 3, 4, 5, 6]);
        assert_eq!(parse_k_range("2..=3").unwrap(), [2, 3]);
        assert_eq!(parse_k_range("4").unwrap(), [4]);
        assert!(parse_k_range("6..2").is_err());
        assert!(parse_k_range("a..b").is_err());
    }
}
