//! Token-set precision, recall and F1, corpus reports and the
//! frequency-weighted random baseline.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::CorpusStats;
use crate::naming::NameTokens;
use crate::rng::XorShiftRng;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("reference name is empty")]
    EmptyReference,
    #[error("no reference for {} prediction(s): {}", .0.len(), .0.join(", "))]
    MissingReferences(Vec<String>),
    #[error("empty reference for function(s): {}", .0.join(", "))]
    EmptyReferences(Vec<String>),
    #[error("duplicate prediction for `{0}`")]
    DuplicatePrediction(String),
    #[error("prediction file, line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    #[serde(rename = "id")]
    pub function_id: String,
    pub tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
}

impl Prediction {
    pub fn new(function_id: impl Into<String>, tokens: Vec<String>) -> Self {
        Self {
            function_id: function_id.into(),
            tokens,
            scores: None,
        }
    }
}

/// 1 when `token` is in `reference`, else 0.
pub fn membership(token: &str, reference: &HashSet<&str>) -> u8 {
    u8::from(reference.contains(token))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Set-based precision, recall and F1 of one prediction.
///
/// Both lists are reduced to sets. An empty prediction scores zero
/// everywhere; an empty reference is an error.
pub fn prf1<R: AsRef<str>, P: AsRef<str>>(reference: &[R], predicted: &[P]) -> Result<Prf1, EvalError> {
    let reference: HashSet<&str> = reference.iter().map(AsRef::as_ref).collect();
    if reference.is_empty() {
        return Err(EvalError::EmptyReference);
    }
    let predicted: HashSet<&str> = predicted.iter().map(AsRef::as_ref).collect();
    if predicted.is_empty() {
        return Ok(Prf1 {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
        });
    }
    let hits: u32 = predicted.iter().map(|t| u32::from(membership(t, &reference))).sum();
    let precision = f64::from(hits) / predicted.len() as f64;
    let recall = f64::from(hits) / reference.len() as f64;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(Prf1 { precision, recall, f1 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionScore {
    pub function_id: String,
    #[serde(flatten)]
    pub scores: Prf1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Sorted by function id.
    pub per_function: Vec<FunctionScore>,
    /// Macro averages.
    pub aggregate: Prf1,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub group_breakdowns: BTreeMap<String, Prf1>,
}

fn macro_mean<'a, I: IntoIterator<Item = &'a Prf1>>(scores: I) -> Prf1 {
    let mut n = 0usize;
    let (mut p, mut r, mut f) = (0.0, 0.0, 0.0);
    for s in scores {
        n += 1;
        p += s.precision;
        r += s.recall;
        f += s.f1;
    }
    let n = n.max(1) as f64;
    Prf1 {
        precision: p / n,
        recall: r / n,
        f1: f / n,
    }
}

impl MetricsReport {
    /// `scope<TAB>precision<TAB>recall<TAB>f1<TAB>functions`, overall then
    /// one row per group.
    pub fn write_summary_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "scope\tprecision\trecall\tf1\tfunctions")?;
        let a = &self.aggregate;
        writeln!(
            out,
            "all\t{:.6}\t{:.6}\t{:.6}\t{}",
            a.precision,
            a.recall,
            a.f1,
            self.per_function.len()
        )?;
        for (group, g) in &self.group_breakdowns {
            writeln!(out, "group:{group}\t{:.6}\t{:.6}\t{:.6}\t", g.precision, g.recall, g.f1)?;
        }
        Ok(())
    }
}

/// Scores every prediction against its reference and macro-averages.
///
/// The report is ordered by function id, so it does not depend on the
/// order of `predictions`.
pub fn evaluate_corpus(
    predictions: &[Prediction],
    references: &BTreeMap<String, NameTokens>,
    groups: Option<&BTreeMap<String, String>>,
) -> Result<MetricsReport, EvalError> {
    let mut sorted: Vec<&Prediction> = predictions.iter().collect();
    sorted.sort_by(|a, b| a.function_id.cmp(&b.function_id));
    if let Some(dup) = sorted.windows(2).find(|w| w[0].function_id == w[1].function_id) {
        return Err(EvalError::DuplicatePrediction(dup[0].function_id.clone()));
    }
    let missing: Vec<String> = sorted
        .iter()
        .filter(|p| !references.contains_key(&p.function_id))
        .map(|p| p.function_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(EvalError::MissingReferences(missing));
    }
    let empty: Vec<String> = sorted
        .iter()
        .filter(|p| references[&p.function_id].is_empty())
        .map(|p| p.function_id.clone())
        .collect();
    if !empty.is_empty() {
        return Err(EvalError::EmptyReferences(empty));
    }
    let per_function: Vec<FunctionScore> = sorted
        .iter()
        .map(|p| {
            let scores = prf1(references[&p.function_id].tokens(), &p.tokens)?;
            Ok(FunctionScore {
                function_id: p.function_id.clone(),
                scores,
            })
        })
        .collect::<Result<_, EvalError>>()?;
    let aggregate = macro_mean(per_function.iter().map(|s| &s.scores));
    let mut group_breakdowns = BTreeMap::new();
    if let Some(groups) = groups {
        let mut by_group: BTreeMap<&str, Vec<&Prf1>> = BTreeMap::new();
        for s in &per_function {
            if let Some(g) = groups.get(&s.function_id) {
                by_group.entry(g.as_str()).or_default().push(&s.scores);
            }
        }
        for (g, scores) in by_group {
            group_breakdowns.insert(g.to_string(), macro_mean(scores));
        }
    }
    Ok(MetricsReport {
        per_function,
        aggregate,
        group_breakdowns,
    })
}

/// Predictions drawn at random from training statistics.
///
/// For each reference function (in id order) a length is drawn from the
/// training name-length histogram, then that many distinct tokens are drawn
/// without replacement with probability proportional to training frequency.
pub fn random_baseline(
    train_stats: &CorpusStats,
    references: &BTreeMap<String, NameTokens>,
    seed: u64,
) -> Vec<Prediction> {
    let ranked = train_stats.ranked_tokens();
    let tokens: Vec<&str> = ranked.iter().map(|&(t, _)| t).collect();
    let mut cumulative = Vec::with_capacity(ranked.len());
    let mut acc = 0u64;
    for &(_, f) in &ranked {
        acc += f;
        cumulative.push(acc);
    }
    let lengths: Vec<usize> = train_stats.name_length_histogram.keys().copied().collect();
    let length_weights: Vec<f64> = train_stats.name_length_histogram.values().map(|&c| c as f64).collect();
    let mut rng = XorShiftRng::new(seed);
    let draw_token = |rng: &mut XorShiftRng| -> usize {
        let target = (rng.next_f64() * acc as f64) as u64;
        cumulative.partition_point(|&c| c <= target).min(tokens.len() - 1)
    };
    references
        .keys()
        .map(|id| {
            let k = lengths[rng.weighted_index(&length_weights)].min(tokens.len());
            // rejection of repeats is equivalent to sequential sampling
            // without replacement
            let mut chosen: Vec<usize> = Vec::with_capacity(k);
            while chosen.len() < k {
                let t = draw_token(&mut rng);
                if !chosen.contains(&t) {
                    chosen.push(t);
                }
            }
            Prediction::new(id.clone(), chosen.into_iter().map(|i| tokens[i].to_string()).collect())
        })
        .collect()
}

/// Record of an external prediction file: either final tokens or a raw
/// name to be normalized.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub id: String,
    #[serde(default)]
    pub tokens: Option<Vec<String>>,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub scores: Option<Vec<f64>>,
}

pub fn read_prediction_records<R: BufRead>(reader: R) -> Result<Vec<PredictionRecord>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredictionRecord = serde_json::from_str(&line).map_err(|e| EvalError::Format {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if rec.tokens.is_none() && rec.name.is_none() {
            return Err(EvalError::Format {
                line: i + 1,
                reason: "record needs `tokens` or `name`".into(),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

/// Reads `{"id": ..., "tokens": [...]}` lines.
pub fn read_predictions<R: BufRead>(reader: R) -> Result<Vec<Prediction>, EvalError> {
    read_prediction_records(reader)?
        .into_iter()
        .enumerate()
        .map(|(i, rec)| match rec.tokens {
            Some(tokens) => Ok(Prediction {
                function_id: rec.id,
                tokens,
                scores: rec.scores,
            }),
            None => Err(EvalError::Format {
                line: i + 1,
                reason: "record has no `tokens`".into(),
            }),
        })
        .collect()
}

pub fn write_predictions<W: Write>(mut out: W, predictions: &[Prediction]) -> std::io::Result<()> {
    for p in predictions {
        serde_json::to_writer(&mut out, &serde_json::to_value(p).expect("prediction serializes"))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Distinct tokens of a name list.
pub fn token_set(tokens: &[String]) -> BTreeSet<&str> {
    tokens.iter().map(String::as_str).collect()
}
