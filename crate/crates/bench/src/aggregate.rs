//! Deterministic grouping and summary statistics over records.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};
use crate::eval::SetupName;
use crate::record::ScenarioRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupField {
    Scenario,
    Method,
    BasisVariant,
    NTrain,
    Sigma,
    Seed,
}

impl GroupField {
    pub fn as_str(&self) -> &'static str {
        match self {
            GroupField::Scenario => "scenario",
            GroupField::Method => "method",
            GroupField::BasisVariant => "basis_variant",
            GroupField::NTrain => "n_train",
            GroupField::Sigma => "sigma",
            GroupField::Seed => "seed",
        }
    }
}

/// The per-record quantity being summarized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Mse(SetupName),
    WallTime,
    GramCondition,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Median,
    Min,
    /// Fraction of records flagged successful; needs an MSE metric.
    SuccessRate,
}

/// One component of a group key, ordered numerically where numeric.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum KeyValue {
    Text(String),
    Int(u64),
    /// Bits of a non-negative float.
    Float(u64),
}

impl fmt::Display for KeyValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KeyValue::Text(s) => f.write_str(s),
            KeyValue::Int(v) => write!(f, "{v}"),
            KeyValue::Float(bits) => write!(f, "{}", f64::from_bits(*bits)),
        }
    }
}

fn key_value(r: &ScenarioRecord, field: GroupField) -> KeyValue {
    match field {
        GroupField::Scenario => KeyValue::Text(r.scenario.as_str().into()),
        GroupField::Method => KeyValue::Text(r.method.as_str().into()),
        GroupField::BasisVariant => KeyValue::Text(r.basis_variant.as_str().into()),
        GroupField::NTrain => KeyValue::Int(r.n_train as u64),
        GroupField::Sigma => KeyValue::Float(r.sigma.to_bits()),
        GroupField::Seed => KeyValue::Int(r.seed),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub key: Vec<KeyValue>,
    pub value: f64,
    pub count: usize,
}

/// Median with the mean of the two central values for even counts; `+inf`
/// and NaN sort last.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(BenchError::EmptyGroup("median of no values".into()));
    }
    let mut v: Vec<f64> = values.iter().map(|x| if x.is_nan() { f64::INFINITY } else { *x }).collect();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Ok(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

pub fn minimum(values: &[f64]) -> Result<f64> {
    values
        .iter()
        .map(|x| if x.is_nan() { f64::INFINITY } else { *x })
        .min_by(f64::total_cmp)
        .ok_or_else(|| BenchError::EmptyGroup("minimum of no values".into()))
}

pub fn success_rate(flags: &[bool]) -> Result<f64> {
    if flags.is_empty() {
        return Err(BenchError::EmptyGroup("success rate of no runs".into()));
    }
    Ok(flags.iter().filter(|&&f| f).count() as f64 / flags.len() as f64)
}

fn metric_value(r: &ScenarioRecord, metric: Metric) -> f64 {
    match metric {
        Metric::Mse(s) => r.mse(s),
        Metric::WallTime => r.wall_time,
        Metric::GramCondition => r.gram_condition.unwrap_or(f64::NAN),
    }
}

/// Groups `records` by `group_by` (rows ordered by key) and summarizes
/// `metric` in each group.
pub fn aggregate(
    records: &[ScenarioRecord],
    group_by: &[GroupField],
    metric: Metric,
    statistic: Statistic,
) -> Result<Vec<AggregateRow>> {
    if records.is_empty() {
        let fields: Vec<&str> = group_by.iter().map(GroupField::as_str).collect();
        return Err(BenchError::EmptyGroup(format!("({})", fields.join(", "))));
    }
    let setup = match (statistic, metric) {
        (Statistic::SuccessRate, Metric::Mse(s)) => Some(s),
        (Statistic::SuccessRate, _) => {
            return Err(BenchError::Invalid("success rate needs an MSE metric".into()));
        }
        _ => None,
    };
    let mut groups: BTreeMap<Vec<KeyValue>, Vec<&ScenarioRecord>> = BTreeMap::new();
    for r in records {
        let key = group_by.iter().map(|f| key_value(r, *f)).collect();
        groups.entry(key).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(key, members)| {
            let value = match (statistic, setup) {
                (Statistic::SuccessRate, Some(s)) => {
                    success_rate(&members.iter().map(|r| r.succeeded(s)).collect::<Vec<_>>())?
                }
                (Statistic::Min, _) => minimum(&members.iter().map(|r| metric_value(r, metric)).collect::<Vec<_>>())?,
                _ => median(&members.iter().map(|r| metric_value(r, metric)).collect::<Vec<_>>())?,
            };
            Ok(AggregateRow {
                key,
                value,
                count: members.len(),
            })
        })
        .collect()
}

/// Single summary over all records, e.g. a pooled success rate.
pub fn summarize(records: &[ScenarioRecord], metric: Metric, statistic: Statistic) -> Result<f64> {
    Ok(aggregate(records, &[], metric, statistic)?[0].value)
}
