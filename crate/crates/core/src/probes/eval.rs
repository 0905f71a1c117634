//! Frozen-encoder evaluation and result tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::logreg::{fit_logreg, LogReg};
use super::mlp::{fit_mlp, MlpSettings};
use super::{ProbeConfig, ProbeTask, Split};
use crate::corpus::TokenSequence;
use crate::encoder::{encode, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::rng::{domain, RngStream};

/// Features and labels of one split.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SplitData {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

/// Precomputed encodings of every split of a probe task.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeEncodings {
    pub num_classes: usize,
    pub train: SplitData,
    pub valid: SplitData,
    pub test: SplitData,
}

impl ProbeEncodings {
    pub fn split(&self, split: Split) -> &SplitData {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn dim(&self) -> usize {
        self.train.features.first().map_or(0, Vec::len)
    }
}

pub fn encode_probe<F>(task: &ProbeTask, encode_fn: F) -> ProbeEncodings
where
    F: Fn(&TokenSequence) -> Vec<f64> + Sync,
{
    let split = |s: Split| SplitData {
        features: task
            .split(s)
            .par_iter()
            .map(|ex| encode_fn(&ex.tokens))
            .collect(),
        labels: task.split(s).iter().map(|ex| ex.class).collect(),
    };
    ProbeEncodings {
        num_classes: task.num_classes,
        train: split(Split::Train),
        valid: split(Split::Valid),
        test: split(Split::Test),
    }
}

/// Outcome of a grid search: the selected configuration and its test
/// accuracy, plus the validation accuracy of every grid cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub config: String,
    pub test_acc: f64,
    pub valid_acc: f64,
    pub grid: BTreeMap<String, f64>,
}

/// Index of the first maximum.
fn select(valid: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in valid.iter().enumerate() {
        if v > valid[best] {
            best = i;
        }
    }
    best
}

/// Logistic regression per L2 value; the first value with the highest
/// validation accuracy wins. Returns the selected model too.
pub fn select_logreg(enc: &ProbeEncodings, l2_grid: &[f64]) -> Result<(LogReg, ProbeResult)> {
    if l2_grid.is_empty() {
        return Err(Error::Config("empty L2 grid".into()));
    }
    let models = l2_grid
        .par_iter()
        .map(|&l2| fit_logreg(&enc.train.features, &enc.train.labels, enc.num_classes, l2))
        .collect::<Result<Vec<_>>>()?;
    let valid: Vec<f64> = models
        .iter()
        .map(|m| m.accuracy(&enc.valid.features, &enc.valid.labels))
        .collect();
    let best = select(&valid);
    let names: Vec<String> = l2_grid.iter().map(|l2| format!("l2={l2:e}")).collect();
    let result = ProbeResult {
        config: names[best].clone(),
        test_acc: models[best].accuracy(&enc.test.features, &enc.test.labels),
        valid_acc: valid[best],
        grid: names.into_iter().zip(valid).collect(),
    };
    Ok((
        models.into_iter().nth(best).expect("non-empty grid"),
        result,
    ))
}

pub fn eval_logreg(enc: &ProbeEncodings, l2_grid: &[f64]) -> Result<ProbeResult> {
    Ok(select_logreg(enc, l2_grid)?.1)
}

/// Grid over hidden size × dropout, enumerated hidden-major in ascending
/// order so that ties resolve to the smaller hidden size, then the smaller
/// dropout.
pub fn eval_mlp_probe(enc: &ProbeEncodings, cfg: &ProbeConfig) -> Result<ProbeResult> {
    cfg.validate()?;
    let mut hidden = cfg.mlp_hidden.clone();
    hidden.sort_unstable();
    let mut dropout = cfg.dropout.clone();
    dropout.sort_by(f64::total_cmp);
    let cells: Vec<(usize, f64)> = hidden
        .iter()
        .flat_map(|&h| dropout.iter().map(move |&p| (h, p)))
        .collect();
    let models = cells
        .par_iter()
        .map(|&(h, p)| {
            let settings = MlpSettings {
                hidden: h,
                dropout: p,
                epochs: cfg.epochs,
                lr: cfg.mlp_lr,
                batch_size: cfg.batch_size,
                seed: cfg.seed,
            };
            fit_mlp(
                &enc.train.features,
                &enc.train.labels,
                enc.num_classes,
                &settings,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let valid: Vec<f64> = models
        .iter()
        .map(|m| m.accuracy(&enc.valid.features, &enc.valid.labels))
        .collect();
    let best = select(&valid);
    let names: Vec<String> = cells
        .iter()
        .map(|(h, p)| format!("hidden={h},dropout={p}"))
        .collect();
    Ok(ProbeResult {
        config: names[best].clone(),
        test_acc: models[best].accuracy(&enc.test.features, &enc.test.labels),
        valid_acc: valid[best],
        grid: names.into_iter().zip(valid).collect(),
    })
}

/// Test accuracies by probe task and classifier.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbeTable(pub BTreeMap<String, BTreeMap<String, f64>>);

impl ProbeTable {
    pub fn insert(&mut self, task: &str, config: &str, acc: f64) {
        self.0
            .entry(task.to_string())
            .or_default()
            .insert(config.to_string(), acc);
    }

    pub fn get(&self, task: &str, config: &str) -> Option<f64> {
        self.0.get(task).and_then(|row| row.get(config)).copied()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("task\tconfig\taccuracy\n");
        for (task, row) in &self.0 {
            for (config, acc) in row {
                writeln!(out, "{task}\t{config}\t{acc:.6}").expect("write to string");
            }
        }
        out
    }
}

/// Evaluates a frozen encoding function on every task with logistic
/// regression and, when `with_mlp`, the MLP grid.
pub fn evaluate_encoder<F>(
    encode_fn: F,
    tasks: &[ProbeTask],
    cfg: &ProbeConfig,
    with_mlp: bool,
) -> Result<ProbeTable>
where
    F: Fn(&TokenSequence) -> Vec<f64> + Sync,
{
    cfg.validate()?;
    let mut table = ProbeTable::default();
    for task in tasks {
        let enc = encode_probe(task, &encode_fn);
        let name = task.kind.to_string();
        let lr = eval_logreg(&enc, &cfg.l2_grid)?;
        log::info!("{name}: logreg {:.4} ({})", lr.test_acc, lr.config);
        table.insert(&name, "logreg", lr.test_acc);
        if with_mlp {
            let mlp = eval_mlp_probe(&enc, cfg)?;
            log::info!("{name}: mlp {:.4} ({})", mlp.test_acc, mlp.config);
            table.insert(&name, "mlp", mlp.test_acc);
        }
    }
    Ok(table)
}

/// Randomly initialized encoder drawn from the same stream a training run
/// with `seed` would start from, evaluated exactly like a trained one.
pub fn untrained_encoder(config: &EncoderConfig, seed: u64) -> EncoderParams {
    EncoderParams::new(config, &mut RngStream::keyed(seed, &[domain::INIT, 0]))
}

/// Probes an untrained encoder. `trained_dim` is the output size of the
/// model it is compared with; a different size is an error.
pub fn eval_untrained_baseline(
    config: &EncoderConfig,
    trained_dim: usize,
    seed: u64,
    tasks: &[ProbeTask],
    cfg: &ProbeConfig,
    with_mlp: bool,
) -> Result<ProbeTable> {
    if config.output_dim() != trained_dim {
        return Err(Error::DimMismatch {
            expected: trained_dim,
            got: config.output_dim(),
        });
    }
    let encoder = untrained_encoder(config, seed);
    evaluate_encoder(|s| encode(s, &encoder).into_vec(), tasks, cfg, with_mlp)
}

#[cfg(test)]
mod tests {
    use sha2::{Digest, Sha256};

    use super::*;
    use crate::corpus::synthetic::ToyGrammar;
    use crate::corpus::Corpus;
    use crate::encoder::Params;
    use crate::probes::{gen_probe_sentlen, LengthBins};

    fn checksum<P: Params>(p: &P) -> Vec<u8> {
        let mut h = Sha256::new();
        for t in p.tensors() {
            for v in t {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().to_vec()
    }

    fn setup() -> (Corpus, EncoderConfig, ProbeTask) {
        let corpus = Corpus::from_lines(&ToyGrammar::default().generate(1000, 5), 1, None).unwrap();
        let config = EncoderConfig::new(corpus.vocab.len(), 16, 16);
        let task = gen_probe_sentlen(&corpus.sentences, &LengthBins::default(), 1).unwrap();
        (corpus, config, task)
    }

    #[test]
    fn select_takes_first_maximum() {
        assert_eq!(select(&[0.5, 0.7, 0.7, 0.6]), 1);
        assert_eq!(select(&[0.9, 0.9]), 0);
    }

    #[test]
    fn mlp_grid_tie_prefers_small_cells() {
        let x: Vec<Vec<f64>> = (0..120)
            .map(|i| vec![if i % 2 == 0 { 3.0 } else { -3.0 }, 0.1 * (i % 7) as f64])
            .collect();
        let y: Vec<usize> = (0..120).map(|i| i % 2).collect();
        let data = |r: std::ops::Range<usize>| SplitData {
            features: x[r.clone()].to_vec(),
            labels: y[r].to_vec(),
        };
        let enc = ProbeEncodings {
            num_classes: 2,
            train: data(0..80),
            valid: data(80..100),
            test: data(100..120),
        };
        let cfg = ProbeConfig {
            mlp_hidden: vec![200, 50, 100],
            dropout: vec![0.2, 0.0, 0.1],
            epochs: 20,
            ..ProbeConfig::default()
        };
        let r = eval_mlp_probe(&enc, &cfg).unwrap();
        assert!(r.grid.values().all(|&v| v == 1.0));
        assert_eq!(r.config, "hidden=50,dropout=0");
        assert_eq!(r.grid.len(), 9);
        assert_eq!(r.test_acc, 1.0);
        let lr = eval_logreg(&enc, &cfg.l2_grid).unwrap();
        assert_eq!(lr.config, "l2=1e-4");
    }

    #[test]
    fn untrained_sentlen_above_chance_and_seeded() {
        let (_, config, task) = setup();
        let cfg = ProbeConfig::default();
        let a = eval_untrained_baseline(
            &config,
            config.output_dim(),
            3,
            std::slice::from_ref(&task),
            &cfg,
            false,
        )
        .unwrap();
        let acc = a.get("SentLen", "logreg").unwrap();
        assert!(acc > 0.25 + 0.15, "{acc}");
        let b =
            eval_untrained_baseline(&config, config.output_dim(), 3, &[task], &cfg, false).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn untrained_dim_mismatch() {
        let (_, config, task) = setup();
        let err = eval_untrained_baseline(&config, 64, 3, &[task], &ProbeConfig::default(), false);
        assert!(matches!(
            err,
            Err(Error::DimMismatch {
                expected: 64,
                got: 32
            })
        ));
    }

    #[test]
    fn evaluation_leaves_encoder_untouched() {
        let (_, config, task) = setup();
        let encoder = untrained_encoder(&config, 8);
        let before = checksum(&encoder);
        let cfg = ProbeConfig {
            mlp_hidden: vec![50],
            dropout: vec![0.0],
            epochs: 2,
            ..ProbeConfig::default()
        };
        evaluate_encoder(|s| encode(s, &encoder).into_vec(), &[task], &cfg, true).unwrap();
        assert_eq!(checksum(&encoder), before);
    }

    #[test]
    fn table_formats() {
        let mut t = ProbeTable::default();
        t.insert("SentLen", "logreg", 0.5);
        t.insert("BigramShift", "mlp", 0.75);
        assert_eq!(
            t.to_tsv(),
            "task\tconfig\taccuracy\nBigramShift\tmlp\t0.750000\nSentLen\tlogreg\t0.500000\n"
        );
        let back: ProbeTable = serde_json::from_str(&t.to_json().unwrap()).unwrap();
        assert_eq!(back, t);
    }
}
