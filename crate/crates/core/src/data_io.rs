//! File formats: supervised CSV, bandit-log CSV, JSON model files, and
//! training traces (CSV plus a JSON sidecar). Reals are written as shortest
//! round-trip decimals, so every format reads back bit-exactly.
//!
//! Writers go through a temporary file in the target directory and rename it
//! into place, so a failed write never leaves a partial file behind.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::boosting::{Algorithm, RoundStats, StopReason, TrainTrace};
use crate::error::{Error, Result};
use crate::estimators::{BanditDataset, LoggedExample};
use crate::policy::{Beta, Ensemble, Predictor, PredictorKind, SoftmaxPolicy};
use crate::simulation::{SupervisedExample, Task};
use crate::tree::{Node, Tree};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_real(x: f64) -> String {
    format!("{x:?}")
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Writes through `<path>.tmp` and renames on success.
pub fn write_atomic(path: &Path, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let result = (|| {
        let mut w = BufWriter::new(File::create(&tmp)?);
        write(&mut w)?;
        w.flush()?;
        Ok(())
    })();
    match result {
        Ok(()) => Ok(std::fs::rename(&tmp, path)?),
        Err(e) => {
            let _ = std::fs::remove_file(&tmp);
            Err(e)
        }
    }
}

fn feature_header(d: usize) -> impl Iterator<Item = String> {
    (0..d).map(|j| format!("f{j}"))
}

fn check_feature_header(path: &Path, header: &csv::StringRecord, skip: usize) -> Result<usize> {
    for (j, name) in header.iter().skip(skip).enumerate() {
        if name != format!("f{j}") {
            return Err(parse_err(path, 1, format!("expected column f{j}, found {name:?}")));
        }
    }
    Ok(header.len() - skip)
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?)
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

fn parse_real(path: &Path, line: u64, field: &str, what: &str) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("invalid {what} {field:?}")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("non-finite {what} {field:?}")));
    }
    Ok(v)
}

fn parse_index(path: &Path, line: u64, field: &str, what: &str) -> Result<usize> {
    field
        .trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("invalid {what} {field:?}")))
}

/// Reads `label,f0,..` (multiclass) or `labels,f0,..` with `;`-separated
/// label sets (multilabel).
pub fn read_supervised_csv(path: &Path, task: Task) -> Result<Vec<SupervisedExample>> {
    let mut rdr = reader(path)?;
    let header = rdr.headers()?.clone();
    let want = match task {
        Task::Multiclass => "label",
        Task::Multilabel => "labels",
    };
    if header.get(0) != Some(want) {
        return Err(parse_err(
            path,
            1,
            format!("first column must be {want:?}, found {:?}", header.get(0).unwrap_or("")),
        ));
    }
    let d = check_feature_header(path, &header, 1)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        if rec.len() != d + 1 {
            return Err(parse_err(path, line, format!("expected {} fields, found {}", d + 1, rec.len())));
        }
        let labels: Vec<usize> = match task {
            Task::Multiclass => vec![parse_index(path, line, &rec[0], "label")?],
            Task::Multilabel => rec[0]
                .split(';')
                .filter(|s| !s.trim().is_empty())
                .map(|s| parse_index(path, line, s, "label"))
                .collect::<Result<_>>()?,
        };
        let features = rec
            .iter()
            .skip(1)
            .map(|f| parse_real(path, line, f, "feature"))
            .collect::<Result<Vec<_>>>()?;
        out.push(SupervisedExample::new(features, labels));
    }
    Ok(out)
}

pub fn write_supervised_csv(path: &Path, examples: &[SupervisedExample], task: Task) -> Result<()> {
    let d = examples.first().map_or(0, |e| e.features.len());
    if let Some(e) = examples.iter().find(|e| e.features.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: e.features.len(),
        });
    }
    write_atomic(path, |w| {
        let mut wtr = csv::Writer::from_writer(w);
        let first = match task {
            Task::Multiclass => "label",
            Task::Multilabel => "labels",
        };
        wtr.write_record(std::iter::once(first.to_string()).chain(feature_header(d)))?;
        for e in examples {
            let labels = match task {
                Task::Multiclass => {
                    if e.labels.len() != 1 {
                        return Err(Error::Schema("multiclass example needs exactly one label".into()));
                    }
                    e.labels[0].to_string()
                }
                Task::Multilabel => e.labels.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(";"),
            };
            wtr.write_record(std::iter::once(labels).chain(e.features.iter().map(|&v| fmt_real(v))))?;
        }
        wtr.flush()?;
        Ok(())
    })
}

/// Reads `action,propensity,reward,f0,..`. Without `num_actions` the count is
/// `max action + 1`.
pub fn read_bandit_log(path: &Path, num_actions: Option<usize>) -> Result<BanditDataset> {
    let mut rdr = reader(path)?;
    let header = rdr.headers()?.clone();
    let lead: Vec<&str> = header.iter().take(3).collect();
    if lead != ["action", "propensity", "reward"] {
        return Err(parse_err(path, 1, "header must start with action,propensity,reward"));
    }
    let d = check_feature_header(path, &header, 3)?;
    let mut examples = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        if rec.len() != d + 3 {
            return Err(parse_err(path, line, format!("expected {} fields, found {}", d + 3, rec.len())));
        }
        let action = parse_index(path, line, &rec[0], "action")?;
        let propensity = parse_real(path, line, &rec[1], "propensity")?;
        if !(propensity > 0.0 && propensity <= 1.0) {
            return Err(parse_err(path, line, format!("propensity {propensity} outside (0, 1]")));
        }
        if let Some(k) = num_actions {
            if action >= k {
                return Err(parse_err(path, line, format!("action {action} out of range for {k} actions")));
            }
        }
        let reward = parse_real(path, line, &rec[2], "reward")?;
        let features = rec
            .iter()
            .skip(3)
            .map(|f| parse_real(path, line, f, "feature"))
            .collect::<Result<Vec<_>>>()?;
        examples.push(LoggedExample {
            features,
            action,
            propensity,
            reward,
        });
    }
    let k = match num_actions {
        Some(k) => k,
        None => examples.iter().map(|e| e.action + 1).max().ok_or(Error::EmptyData)?,
    };
    BanditDataset::new(examples, k, d)
}

pub fn write_bandit_log(path: &Path, data: &BanditDataset) -> Result<()> {
    write_atomic(path, |w| {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(
            ["action", "propensity", "reward"]
                .into_iter()
                .map(String::from)
                .chain(feature_header(data.feature_dim())),
        )?;
        for e in data.examples() {
            wtr.write_record(
                [e.action.to_string(), fmt_real(e.propensity), fmt_real(e.reward)]
                    .into_iter()
                    .chain(e.features.iter().map(|&v| fmt_real(v))),
            )?;
        }
        wtr.flush()?;
        Ok(())
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub is_leaf: bool,
    pub feature: usize,
    pub threshold: f64,
    pub value: f64,
    pub left: usize,
    pub right: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberRecord {
    pub alpha: f64,
    pub kind: PredictorKind,
    pub scale: f64,
    pub tree: Vec<NodeRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub algorithm: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
}

/// Versioned JSON model document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub num_actions: usize,
    pub feature_dim: usize,
    pub beta: Beta,
    pub members: Vec<MemberRecord>,
    pub metadata: ModelMetadata,
}

impl ModelFile {
    pub fn from_policy(policy: &SoftmaxPolicy, metadata: ModelMetadata) -> Self {
        let e = &policy.ensemble;
        let members = e
            .members()
            .iter()
            .map(|m| MemberRecord {
                alpha: m.weight,
                kind: m.predictor.kind(),
                scale: m.predictor.scale(),
                tree: m
                    .predictor
                    .tree()
                    .nodes()
                    .iter()
                    .map(|n| match *n {
                        Node::Leaf { value } => NodeRecord {
                            is_leaf: true,
                            feature: 0,
                            threshold: 0.0,
                            value,
                            left: 0,
                            right: 0,
                        },
                        Node::Split {
                            feature,
                            threshold,
                            left,
                            right,
                        } => NodeRecord {
                            is_leaf: false,
                            feature,
                            threshold,
                            value: 0.0,
                            left,
                            right,
                        },
                    })
                    .collect(),
            })
            .collect();
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            num_actions: e.num_actions(),
            feature_dim: e.feature_dim(),
            beta: policy.beta,
            members,
            metadata,
        }
    }

    pub fn to_policy(&self) -> Result<SoftmaxPolicy> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                expected: MODEL_FORMAT_VERSION,
                found: self.format_version,
            });
        }
        let mut e = Ensemble::new(self.num_actions, self.feature_dim)?;
        for m in &self.members {
            let nodes = m
                .tree
                .iter()
                .map(|n| {
                    if n.is_leaf {
                        Node::Leaf { value: n.value }
                    } else {
                        Node::Split {
                            feature: n.feature,
                            threshold: n.threshold,
                            left: n.left,
                            right: n.right,
                        }
                    }
                })
                .collect();
            let p = Predictor::new(m.kind, Tree::from_nodes(nodes)?, m.scale).map_err(|e| match e {
                Error::InvalidConfig(s) => Error::Schema(s),
                other => other,
            })?;
            e.push(m.alpha, p).map_err(|e| Error::Schema(e.to_string()))?;
        }
        SoftmaxPolicy::new(e, self.beta)
    }
}

pub fn write_model(path: &Path, model: &ModelFile) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, model)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

pub fn read_model(path: &Path) -> Result<ModelFile> {
    let text = std::fs::read_to_string(path)?;
    let probe: serde_json::Value = serde_json::from_str(&text)?;
    let version = probe
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Schema("missing format_version".into()))?;
    if version != MODEL_FORMAT_VERSION as u64 {
        return Err(Error::VersionMismatch {
            expected: MODEL_FORMAT_VERSION,
            found: version as u32,
        });
    }
    let model: ModelFile = serde_json::from_value(probe).map_err(|e| Error::Schema(e.to_string()))?;
    model.to_policy()?;
    Ok(model)
}

/// Run-level part of a trace, stored next to the CSV as `<trace>.meta.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub algorithm: Algorithm,
    pub omega: f64,
    pub min_emp_risk: f64,
    pub initial_excess_risk: f64,
    pub initial_emp_risk: f64,
    pub initial_surrogate_risk: f64,
    pub stop_reason: StopReason,
    pub kept_rounds: usize,
    pub config: serde_json::Value,
}

pub const TRACE_COLUMNS: [&str; 11] = [
    "t",
    "alpha",
    "grad_term",
    "grad_norm",
    "emp_risk",
    "surrogate_risk",
    "snips_train",
    "bound",
    "error_rate",
    "raw_omega",
    "validation_reward",
];

pub fn trace_meta_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".meta.json");
    PathBuf::from(p)
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_real).unwrap_or_default()
}

/// Writes the per-round CSV and its sidecar. Per-example switch vectors are
/// not stored.
pub fn write_trace(path: &Path, trace: &TrainTrace, config: serde_json::Value) -> Result<()> {
    let meta = TraceMeta {
        algorithm: trace.algorithm,
        omega: trace.omega,
        min_emp_risk: trace.min_emp_risk,
        initial_excess_risk: trace.initial_excess_risk,
        initial_emp_risk: trace.initial_emp_risk,
        initial_surrogate_risk: trace.initial_surrogate_risk,
        stop_reason: trace.stop_reason,
        kept_rounds: trace.kept_rounds,
        config,
    };
    write_atomic(path, |w| {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(TRACE_COLUMNS)?;
        for r in &trace.rounds {
            wtr.write_record([
                r.round.to_string(),
                fmt_real(r.alpha),
                fmt_real(r.grad_term),
                fmt_real(r.grad_norm),
                fmt_real(r.emp_risk),
                opt(r.surrogate_risk),
                opt(r.snips_train),
                opt(r.bound),
                opt(r.error_rate),
                fmt_real(r.raw_omega),
                opt(r.validation_reward),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    })?;
    write_atomic(&trace_meta_path(path), |w| {
        serde_json::to_writer_pretty(&mut *w, &meta)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

/// Reads a trace written by [`write_trace`]; switch vectors come back empty.
pub fn read_trace(path: &Path) -> Result<(TrainTrace, serde_json::Value)> {
    let meta: TraceMeta = serde_json::from_str(&std::fs::read_to_string(trace_meta_path(path))?)
        .map_err(|e| Error::Schema(e.to_string()))?;
    let mut rdr = reader(path)?;
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != TRACE_COLUMNS {
        return Err(parse_err(path, 1, "unexpected trace columns"));
    }
    let mut rounds = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        if rec.len() != TRACE_COLUMNS.len() {
            return Err(parse_err(path, line, "wrong number of fields"));
        }
        let real = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| parse_err(path, line, format!("invalid {} {:?}", TRACE_COLUMNS[i], &rec[i])))
        };
        let maybe = |i: usize| -> Result<Option<f64>> {
            if rec[i].is_empty() {
                Ok(None)
            } else {
                real(i).map(Some)
            }
        };
        rounds.push(RoundStats {
            round: parse_index(path, line, &rec[0], "t")?,
            alpha: real(1)?,
            grad_term: real(2)?,
            grad_norm: real(3)?,
            emp_risk: real(4)?,
            surrogate_risk: maybe(5)?,
            snips_train: maybe(6)?,
            bound: maybe(7)?,
            error_rate: maybe(8)?,
            raw_omega: real(9)?,
            surrogate_switch: Vec::new(),
            validation_reward: maybe(10)?,
        });
    }
    Ok((
        TrainTrace {
            algorithm: meta.algorithm,
            omega: meta.omega,
            min_emp_risk: meta.min_emp_risk,
            initial_excess_risk: meta.initial_excess_risk,
            initial_emp_risk: meta.initial_emp_risk,
            initial_surrogate_risk: meta.initial_surrogate_risk,
            smoothness_switch: Vec::new(),
            rounds,
            stop_reason: meta.stop_reason,
            kept_rounds: meta.kept_rounds,
        },
        meta.config,
    ))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&std::fs::read_to_string(path)?).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boosting::{train, BaseKind, BoostConfig};
    use crate::simulation::{convert, synthetic_multilabel, LoggingPolicy, RewardSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn meta() -> ModelMetadata {
        ModelMetadata {
            algorithm: "bopl".into(),
            config: serde_json::json!({"rounds": 3}),
            seed: Some(1),
        }
    }

    #[test]
    fn single_multiclass_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        std::fs::write(&p, "label,f0,f1\n2,0.5,-1\n").unwrap();
        let ex = read_supervised_csv(&p, Task::Multiclass).unwrap();
        assert_eq!(ex, vec![SupervisedExample::new(vec![0.5, -1.0], vec![2])]);
    }

    #[test]
    fn multilabel_sets() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        std::fs::write(&p, "labels,f0\n1;3,0.25\n,1\n").unwrap();
        let ex = read_supervised_csv(&p, Task::Multilabel).unwrap();
        assert_eq!(ex[0].labels, vec![1, 3]);
        assert!(ex[1].labels.is_empty());
    }

    #[test]
    fn malformed_rows_report_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        std::fs::write(&p, "label,f0\n1,0.5\n1,abc\n").unwrap();
        match read_supervised_csv(&p, Task::Multiclass) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        std::fs::write(&p, "label,f0\n1,0.5,0.7\n").unwrap();
        assert!(matches!(read_supervised_csv(&p, Task::Multiclass), Err(Error::Parse { line: 2, .. })));
        std::fs::write(&p, "labels,f0\n1,0.5\n").unwrap();
        assert!(read_supervised_csv(&p, Task::Multiclass).is_err());
    }

    #[test]
    fn thousand_rows_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ex: Vec<_> = (0..1000)
            .map(|_| {
                let f = (0..4).map(|_| rng.gen::<f64>() * 1e3 - 500.0).collect();
                let labels = (0..5).filter(|_| rng.gen_bool(0.4)).collect();
                SupervisedExample::new(f, labels)
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        write_supervised_csv(&p, &ex, Task::Multilabel).unwrap();
        assert_eq!(read_supervised_csv(&p, Task::Multilabel).unwrap(), ex);
    }

    #[test]
    fn bandit_log_round_trip_and_rejections() {
        let ex = synthetic_multilabel(200, 3, 4, 1);
        let spec = RewardSpec::new(Task::Multilabel, None, 0.25, 4).unwrap();
        let mut lp = LoggingPolicy::uniform(4, 3).with_epsilon(0.1).unwrap();
        lp.weights[0] = 0.3;
        let log = convert(&ex, &lp, &spec, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.csv");
        write_bandit_log(&p, &log).unwrap();
        assert_eq!(read_bandit_log(&p, Some(4)).unwrap(), log);

        std::fs::write(&p, "action,propensity,reward,f0\n0,0,1,0.5\n").unwrap();
        assert!(matches!(read_bandit_log(&p, None), Err(Error::Parse { line: 2, .. })));
        std::fs::write(&p, "action,propensity,reward,f0\n3,0.5,1,0.5\n").unwrap();
        assert!(read_bandit_log(&p, Some(2)).is_err());
        assert_eq!(read_bandit_log(&p, None).unwrap().num_actions(), 4);
    }

    #[test]
    fn empty_ensemble_round_trip() {
        let pol = SoftmaxPolicy::argmax(Ensemble::new(3, 2).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        write_model(&p, &ModelFile::from_policy(&pol, meta())).unwrap();
        let back = read_model(&p).unwrap().to_policy().unwrap();
        assert_eq!(back, pol);
        assert_eq!(back.ensemble.score(&[1.0, 2.0]).unwrap().values, vec![0.0; 3]);
    }

    #[test]
    fn trained_model_and_trace_round_trip() {
        let ex = synthetic_multilabel(80, 4, 3, 2);
        let spec = RewardSpec::new(Task::Multilabel, None, 0.25, 3).unwrap();
        let log = convert(&ex, &LoggingPolicy::uniform(3, 4), &spec, 9).unwrap();
        for base in [BaseKind::Regression, BaseKind::Classification] {
            let config = BoostConfig {
                rounds: 12,
                base,
                reward_translation: -0.1,
                ..BoostConfig::default()
            };
            let (ens, trace) = train(&log, &config, None).unwrap();
            let pol = SoftmaxPolicy::new(ens, Beta::Finite(1.0)).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let mp = dir.path().join("m.json");
            write_model(&mp, &ModelFile::from_policy(&pol, meta())).unwrap();
            let back = read_model(&mp).unwrap().to_policy().unwrap();
            assert_eq!(back, pol);
            for e in &ex {
                assert_eq!(
                    back.ensemble.score(&e.features).unwrap().values,
                    pol.ensemble.score(&e.features).unwrap().values
                );
            }
            let tp = dir.path().join("trace.csv");
            write_trace(&tp, &trace, serde_json::json!({"x": 1})).unwrap();
            let (t2, cfg) = read_trace(&tp).unwrap();
            assert_eq!(cfg, serde_json::json!({"x": 1}));
            let mut expect = trace.clone();
            for r in &mut expect.rounds {
                r.surrogate_switch.clear();
            }
            expect.smoothness_switch.clear();
            assert_eq!(t2, expect);
        }
    }

    #[test]
    fn model_version_and_schema_checks() {
        let pol = SoftmaxPolicy::argmax(Ensemble::new(2, 1).unwrap());
        let mut mf = ModelFile::from_policy(&pol, meta());
        mf.format_version = 7;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        write_model(&p, &mf).unwrap();
        assert!(matches!(read_model(&p), Err(Error::VersionMismatch { found: 7, .. })));
        mf.format_version = MODEL_FORMAT_VERSION;
        mf.members.push(MemberRecord {
            alpha: 1.0,
            kind: PredictorKind::ClassificationTree,
            scale: 1.0,
            tree: vec![NodeRecord {
                is_leaf: true,
                feature: 0,
                threshold: 0.0,
                value: 0.5,
                left: 0,
                right: 0,
            }],
        });
        write_model(&p, &mf).unwrap();
        assert!(matches!(read_model(&p), Err(Error::Schema(_))));
    }

    #[test]
    fn failed_write_leaves_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        let r = write_atomic(&p, |_| Err(Error::EmptyData));
        assert!(r.is_err());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }
}
