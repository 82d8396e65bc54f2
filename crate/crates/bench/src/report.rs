//! Long-format plot tables derived from result records.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::aggregate::{aggregate, GroupField, KeyValue, Metric, Statistic};
use crate::error::{BenchError, Result};
use crate::eval::SetupName;
use crate::record::{canonical_order, Scenario, ScenarioRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FigureId {
    S1Table,
    S2ExIt,
    S2ExOot,
    S2ExOod,
    S3Success,
    S3Box10,
    S3Box500,
    S4Ood,
    S4Exit,
    S4Oot,
    S4Time,
}

impl FigureId {
    pub const ALL: [FigureId; 11] = [
        FigureId::S1Table,
        FigureId::S2ExIt,
        FigureId::S2ExOot,
        FigureId::S2ExOod,
        FigureId::S3Success,
        FigureId::S3Box10,
        FigureId::S3Box500,
        FigureId::S4Ood,
        FigureId::S4Exit,
        FigureId::S4Oot,
        FigureId::S4Time,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            FigureId::S1Table => "s1_table",
            FigureId::S2ExIt => "s2_ex_it",
            FigureId::S2ExOot => "s2_ex_oot",
            FigureId::S2ExOod => "s2_ex_ood",
            FigureId::S3Success => "s3_success",
            FigureId::S3Box10 => "s3_box_10",
            FigureId::S3Box500 => "s3_box_500",
            FigureId::S4Ood => "s4_ood",
            FigureId::S4Exit => "s4_exit",
            FigureId::S4Oot => "s4_oot",
            FigureId::S4Time => "s4_time",
        }
    }

    pub fn scenario(&self) -> Scenario {
        match self {
            FigureId::S1Table => Scenario::S1,
            FigureId::S2ExIt | FigureId::S2ExOot | FigureId::S2ExOod => Scenario::S2,
            FigureId::S3Success | FigureId::S3Box10 | FigureId::S3Box500 => Scenario::S3,
            _ => Scenario::S4,
        }
    }

    pub fn for_scenario(scenario: Scenario) -> Vec<FigureId> {
        Self::ALL.into_iter().filter(|f| f.scenario() == scenario).collect()
    }

    pub fn valid_ids() -> String {
        Self::ALL.iter().map(|f| f.as_str()).collect::<Vec<_>>().join(", ")
    }
}

impl fmt::Display for FigureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FigureId {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| BenchError::Invalid(format!("unknown figure {s:?}; valid ids: {}", Self::valid_ids())))
    }
}

/// A table with a header row, ready for CSV output.
#[derive(Debug, Clone, PartialEq)]
pub struct FigureData {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl FigureData {
    fn new(header: &[&str]) -> Self {
        FigureData {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn num(v: f64) -> String {
    format!("{v:?}")
}

fn key_text(k: &[KeyValue]) -> Vec<String> {
    k.iter().map(|v| v.to_string()).collect()
}

/// Raw per-run values in long format, plus a `best` row per cell.
fn long_format(
    records: &[ScenarioRecord],
    x: GroupField,
    group: impl Fn(&ScenarioRecord) -> String,
    value: impl Fn(&ScenarioRecord) -> f64,
    with_best: bool,
) -> FigureData {
    let mut fig = FigureData::new(&["x", "group", "value"]);
    let x_of = |r: &ScenarioRecord| match x {
        GroupField::NTrain => r.n_train.to_string(),
        GroupField::Sigma => num(r.sigma),
        _ => unreachable!(),
    };
    let mut best: std::collections::BTreeMap<(String, String), (f64, usize, f64)> = Default::default();
    for r in records {
        let (xv, g, v) = (x_of(r), group(r), value(r));
        fig.rows.push(vec![xv.clone(), g.clone(), num(v)]);
        let sort_key = match x {
            GroupField::NTrain => r.n_train as f64,
            _ => r.sigma,
        };
        let e = best.entry((g, xv)).or_insert((f64::INFINITY, 0, sort_key));
        if v < e.0 {
            e.0 = v;
        }
        e.1 += 1;
    }
    if with_best {
        let mut extra: Vec<_> = best.into_iter().collect();
        extra.sort_by(|a, b| a.0 .0.cmp(&b.0 .0).then(a.1 .2.total_cmp(&b.1 .2)));
        for ((g, xv), (v, _, _)) in extra {
            fig.rows.push(vec![xv, format!("{g} best"), num(v)]);
        }
    }
    fig
}

/// Builds the table for `id` from the records of its scenario.
pub fn figure(records: &[ScenarioRecord], id: FigureId) -> Result<FigureData> {
    let scenario = id.scenario();
    let recs: Vec<ScenarioRecord> = canonical_order(records.iter().filter(|r| r.scenario == scenario).cloned());
    if recs.is_empty() {
        return Err(BenchError::EmptyGroup(format!("no {scenario} records for {id}")));
    }
    let fig = match id {
        FigureId::S1Table => {
            let mut fig = FigureData::new(&["method", "ex_it", "ex_oot", "ex_ood"]);
            let cols: Vec<Vec<_>> = SetupName::ALL
                .iter()
                .map(|s| aggregate(&recs, &[GroupField::Method], Metric::Mse(*s), Statistic::Median))
                .collect::<Result<_>>()?;
            for (i, row) in cols[0].iter().enumerate() {
                let mut out = key_text(&row.key);
                out.extend(cols.iter().map(|c| num(c[i].value)));
                fig.rows.push(out);
            }
            fig
        }
        FigureId::S2ExIt | FigureId::S2ExOot | FigureId::S2ExOod => {
            let setup = match id {
                FigureId::S2ExIt => SetupName::ExIt,
                FigureId::S2ExOot => SetupName::ExOot,
                _ => SetupName::ExOod,
            };
            long_format(&recs, GroupField::NTrain, |r| r.method.as_str().into(), |r| r.mse(setup), true)
        }
        FigureId::S3Success => {
            let mut fig = FigureData::new(&["method", "sigma", "n_train", "setup", "rate"]);
            for setup in SetupName::ALL {
                let rows = aggregate(
                    &recs,
                    &[GroupField::Method, GroupField::Sigma, GroupField::NTrain],
                    Metric::Mse(setup),
                    Statistic::SuccessRate,
                )?;
                for row in rows {
                    let mut out = key_text(&row.key);
                    out.push(setup.as_str().into());
                    out.push(num(row.value));
                    fig.rows.push(out);
                }
            }
            fig
        }
        FigureId::S3Box10 | FigureId::S3Box500 => {
            let n = if id == FigureId::S3Box10 { 10 } else { 500 };
            let sub: Vec<ScenarioRecord> = recs.iter().filter(|r| r.n_train == n).cloned().collect();
            if sub.is_empty() {
                return Err(BenchError::EmptyGroup(format!("no S3 records with n_train = {n}")));
            }
            let mut fig = FigureData::new(&["x", "group", "value"]);
            for setup in SetupName::ALL {
                let part = long_format(
                    &sub,
                    GroupField::Sigma,
                    |r| format!("{} {}", r.method.as_str(), setup.as_str()),
                    |r| r.mse(setup),
                    false,
                );
                fig.rows.extend(part.rows);
            }
            fig
        }
        FigureId::S4Ood | FigureId::S4Exit | FigureId::S4Oot | FigureId::S4Time => {
            let group = |r: &ScenarioRecord| format!("{} sigma={}", r.basis_variant.as_str(), r.sigma);
            match id {
                FigureId::S4Ood => long_format(&recs, GroupField::NTrain, group, |r| r.mse_ex_ood, false),
                FigureId::S4Exit => long_format(&recs, GroupField::NTrain, group, |r| r.mse_ex_it, false),
                FigureId::S4Oot => long_format(&recs, GroupField::NTrain, group, |r| r.mse_ex_oot, false),
                _ => long_format(&recs, GroupField::NTrain, group, |r| r.wall_time, false),
            }
        }
    };
    Ok(fig)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::tests::sample;
    use chaosode::pipeline::RhsKind;

    fn s1_records() -> Vec<ScenarioRecord> {
        let mut out = Vec::new();
        for (m, v) in [(RhsKind::Chaos, 1e-6), (RhsKind::Kernel, 1e-3), (RhsKind::Neural, 1.0)] {
            for seed in 0..3 {
                let mut r = sample([v * (1.0 + seed as f64), 2.0 * v, 3.0 * v], seed);
                r.scenario = Scenario::S1;
                r.method = m;
                out.push(r);
            }
        }
        out
    }

    #[test]
    fn ids_parse_and_list() {
        for f in FigureId::ALL {
            assert_eq!(f.as_str().parse::<FigureId>().unwrap(), f);
        }
        let err = "s9".parse::<FigureId>().unwrap_err().to_string();
        assert!(err.contains("s3_box_500"));
    }

    #[test]
    fn s1_table_layout() {
        let fig = figure(&s1_records(), FigureId::S1Table).unwrap();
        assert_eq!(fig.header, ["method", "ex_it", "ex_oot", "ex_ood"]);
        assert_eq!(fig.rows.len(), 3);
        assert_eq!(fig.rows[0][0], "chaos");
        assert_eq!(fig.rows[0][1], num(2e-6));
        assert_eq!(fig.rows[2][3], "3.0");
    }

    #[test]
    fn s3_success_columns() {
        let mut recs = Vec::new();
        for (seed, v) in [(0, 1.0), (1, 20.0)] {
            let mut r = sample([v, v, v], seed);
            r.scenario = Scenario::S3;
            recs.push(r);
        }
        let fig = figure(&recs, FigureId::S3Success).unwrap();
        assert_eq!(fig.header, ["method", "sigma", "n_train", "setup", "rate"]);
        assert_eq!(fig.rows[0], ["chaos", "0", "35", "ex_it", "0.5"]);
        assert_eq!(fig.rows.len(), 3);
    }

    #[test]
    fn empty_scenario_is_empty_group() {
        assert!(matches!(figure(&s1_records(), FigureId::S2ExIt), Err(BenchError::EmptyGroup(_))));
        assert!(matches!(figure(&[], FigureId::S1Table), Err(BenchError::EmptyGroup(_))));
    }

    #[test]
    fn s2_long_format_marks_best() {
        let mut recs = Vec::new();
        for (seed, v) in [(0, 3.0), (1, 1.0)] {
            let mut r = sample([v, v, v], seed);
            r.scenario = Scenario::S2;
            recs.push(r);
        }
        let fig = figure(&recs, FigureId::S2ExOod).unwrap();
        assert_eq!(fig.rows.len(), 3);
        assert_eq!(fig.rows[2], ["35", "chaos best", "1.0"]);
    }
}
