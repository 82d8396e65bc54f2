//! One row of benchmark output per training run, and the result files.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use chaosode::apce::BasisVariant;
use chaosode::pipeline::{PipelineConfig, RhsKind};
use serde::{Deserialize, Serialize};

use crate::data::DataSpec;
use crate::error::{BenchError, Result};
use crate::eval::SetupName;

/// Runs whose setup MSE exceeds this value count as failures.
pub const SUCCESS_THRESHOLD: f64 = 10.0;

/// `mse <= 10`; non-finite values fail.
pub fn is_success(mse: f64) -> bool {
    mse <= SUCCESS_THRESHOLD
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scenario {
    S1,
    S2,
    S3,
    S4,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::S1, Scenario::S2, Scenario::S3, Scenario::S4];

    pub fn as_str(&self) -> &'static str {
        match self {
            Scenario::S1 => "S1",
            Scenario::S2 => "S2",
            Scenario::S3 => "S3",
            Scenario::S4 => "S4",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "S1" => Ok(Scenario::S1),
            "S2" => Ok(Scenario::S2),
            "S3" => Ok(Scenario::S3),
            "S4" => Ok(Scenario::S4),
            _ => Err(BenchError::Invalid(format!("unknown scenario {s:?} (expected S1..S4)"))),
        }
    }
}

/// Basis label of a record; non-polynomial methods carry `n/a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VariantLabel {
    #[serde(rename = "orthonormal")]
    Orthonormal,
    #[serde(rename = "monomial")]
    Monomial,
    #[serde(rename = "n/a")]
    NotApplicable,
}

impl VariantLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            VariantLabel::Orthonormal => "orthonormal",
            VariantLabel::Monomial => "monomial",
            VariantLabel::NotApplicable => "n/a",
        }
    }
}

impl From<BasisVariant> for VariantLabel {
    fn from(v: BasisVariant) -> Self {
        match v {
            BasisVariant::Orthonormal => VariantLabel::Orthonormal,
            BasisVariant::Monomial => VariantLabel::Monomial,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuccessFlags {
    pub ex_it: bool,
    pub ex_oot: bool,
    pub ex_ood: bool,
}

/// JSON numbers for finite values, the strings `"inf"`, `"-inf"` and `"nan"`
/// otherwise.
pub mod lossless_f64 {
    use serde::de::{self, Visitor};
    use serde::{Deserializer, Serializer};
    use std::fmt;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    struct F;

    impl Visitor<'_> for F {
        type Value = f64;
        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("a number or one of \"inf\", \"-inf\", \"nan\"")
        }
        fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
            Ok(v)
        }
        fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
            Ok(v as f64)
        }
        fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
            Ok(v as f64)
        }
        fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
            match v {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                _ => Err(E::invalid_value(de::Unexpected::Str(v), &self)),
            }
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        d.deserialize_any(F)
    }

    pub mod option {
        use serde::{Deserialize, Deserializer, Serialize, Serializer};

        #[derive(Serialize, Deserialize)]
        struct W(#[serde(with = "super")] f64);

        pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
            v.map(W).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
            Ok(Option::<W>::deserialize(d)?.map(|w| w.0))
        }
    }
}

/// Outcome of one training run evaluated in all three setups.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioRecord {
    pub scenario: Scenario,
    pub method: RhsKind,
    pub basis_variant: VariantLabel,
    pub n_train: usize,
    pub sigma: f64,
    pub seed: u64,
    #[serde(with = "lossless_f64")]
    pub mse_ex_it: f64,
    #[serde(with = "lossless_f64")]
    pub mse_ex_oot: f64,
    #[serde(with = "lossless_f64")]
    pub mse_ex_ood: f64,
    pub success: SuccessFlags,
    pub wall_time: f64,
    /// Condition number of the basis Gram matrix over the build sample
    /// (polynomial methods only).
    #[serde(with = "lossless_f64::option")]
    pub gram_condition: Option<f64>,
    /// Noise level not on the reference grid `{0, 0.001, 0.01, 1}`.
    pub interpolated_sigma: bool,
    /// Error that stopped training, if any.
    pub failure: Option<String>,
    pub data: DataSpec,
    pub config: PipelineConfig,
}

impl PartialEq for ScenarioRecord {
    fn eq(&self, other: &Self) -> bool {
        serde_json::to_string(self).ok() == serde_json::to_string(other).ok()
    }
}

/// Identity of a sweep cell; orders records in result files.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub scenario: Scenario,
    pub method: RhsKind,
    pub basis_variant: VariantLabel,
    pub n_train: usize,
    /// `sigma.to_bits()`; monotone for non-negative levels.
    pub sigma_bits: u64,
    pub seed: u64,
}

impl ScenarioRecord {
    pub fn key(&self) -> CellKey {
        CellKey {
            scenario: self.scenario,
            method: self.method,
            basis_variant: self.basis_variant,
            n_train: self.n_train,
            sigma_bits: self.sigma.to_bits(),
            seed: self.seed,
        }
    }

    pub fn mse(&self, setup: SetupName) -> f64 {
        match setup {
            SetupName::ExIt => self.mse_ex_it,
            SetupName::ExOot => self.mse_ex_oot,
            SetupName::ExOod => self.mse_ex_ood,
        }
    }

    pub fn succeeded(&self, setup: SetupName) -> bool {
        match setup {
            SetupName::ExIt => self.success.ex_it,
            SetupName::ExOot => self.success.ex_oot,
            SetupName::ExOod => self.success.ex_ood,
        }
    }

    /// Success flags derived from the stored errors.
    pub fn flags_for(mse: [f64; 3]) -> SuccessFlags {
        SuccessFlags {
            ex_it: is_success(mse[0]),
            ex_oot: is_success(mse[1]),
            ex_ood: is_success(mse[2]),
        }
    }

    pub fn flags_consistent(&self) -> bool {
        self.success == Self::flags_for([self.mse_ex_it, self.mse_ex_oot, self.mse_ex_ood])
    }

    /// Copy with `wall_time` zeroed, for byte comparisons across runs.
    pub fn without_timings(&self) -> ScenarioRecord {
        ScenarioRecord {
            wall_time: 0.0,
            ..self.clone()
        }
    }

    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Reads a JSON-lines results file. A truncated final line (from an
/// interrupted writer) is ignored; any other malformed line is an error.
pub fn read_jsonl(path: &Path) -> Result<Vec<ScenarioRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let lines: Vec<String> = reader.lines().collect::<std::io::Result<_>>()?;
    let mut out = Vec::with_capacity(lines.len());
    let last = lines.len().saturating_sub(1);
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(r) => out.push(r),
            Err(_) if i == last => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(out)
}

/// Appends one record and flushes, so completed cells survive a kill.
pub fn append_jsonl(path: &Path, record: &ScenarioRecord) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    let mut line = record.to_json_line()?;
    line.push('\n');
    f.write_all(line.as_bytes())?;
    f.flush()?;
    Ok(())
}

/// Sorts by cell key, keeps the last record per key.
pub fn canonical_order(records: impl IntoIterator<Item = ScenarioRecord>) -> Vec<ScenarioRecord> {
    let map: BTreeMap<CellKey, ScenarioRecord> = records.into_iter().map(|r| (r.key(), r)).collect();
    map.into_values().collect()
}

/// Rewrites `path` with `records` in cell-key order.
pub fn write_jsonl(path: &Path, records: &[ScenarioRecord]) -> Result<()> {
    let mut out = String::new();
    for r in canonical_order(records.iter().cloned()) {
        out.push_str(&r.to_json_line()?);
        out.push('\n');
    }
    let tmp = path.with_extension("jsonl.tmp");
    File::create(&tmp)?.write_all(out.as_bytes())?;
    std::fs::rename(tmp, path)?;
    Ok(())
}

pub const CSV_COLUMNS: [&str; 13] = [
    "scenario",
    "method",
    "basis_variant",
    "n_train",
    "sigma",
    "seed",
    "mse_ex_it",
    "mse_ex_oot",
    "mse_ex_ood",
    "success_ex_it",
    "success_ex_oot",
    "success_ex_ood",
    "wall_time_s",
];

/// Flat CSV export in cell-key order.
pub fn write_csv(path: &Path, records: &[ScenarioRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_COLUMNS)?;
    for r in canonical_order(records.iter().cloned()) {
        w.write_record([
            r.scenario.as_str().to_string(),
            r.method.as_str().to_string(),
            r.basis_variant.as_str().to_string(),
            r.n_train.to_string(),
            format!("{:?}", r.sigma),
            r.seed.to_string(),
            format!("{:?}", r.mse_ex_it),
            format!("{:?}", r.mse_ex_oot),
            format!("{:?}", r.mse_ex_ood),
            r.success.ex_it.to_string(),
            r.success.ex_oot.to_string(),
            r.success.ex_ood.to_string(),
            format!("{:?}", r.wall_time),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn sample(mse: [f64; 3], seed: u64) -> ScenarioRecord {
        ScenarioRecord {
            scenario: Scenario::S2,
            method: RhsKind::Chaos,
            basis_variant: VariantLabel::Orthonormal,
            n_train: 35,
            sigma: 0.0,
            seed,
            mse_ex_it: mse[0],
            mse_ex_oot: mse[1],
            mse_ex_ood: mse[2],
            success: ScenarioRecord::flags_for(mse),
            wall_time: 1.25,
            gram_condition: Some(1.5),
            interpolated_sigma: false,
            failure: None,
            data: DataSpec::default(),
            config: PipelineConfig::default(),
        }
    }

    #[test]
    fn threshold_is_inclusive() {
        assert!(is_success(10.0));
        assert!(!is_success(10.000001));
        assert!(!is_success(f64::INFINITY));
        assert!(!is_success(f64::NAN));
    }

    #[test]
    fn non_finite_values_round_trip() {
        let mut r = sample([f64::INFINITY, 1e-3, f64::NAN], 3);
        r.gram_condition = Some(f64::INFINITY);
        let json = r.to_json_line().unwrap();
        assert!(json.contains("\"mse_ex_it\":\"inf\""));
        let back: ScenarioRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back.mse_ex_it, f64::INFINITY);
        assert!(back.mse_ex_ood.is_nan());
        assert_eq!(back.gram_condition, Some(f64::INFINITY));
        assert_eq!(back.to_json_line().unwrap(), json);
    }

    #[test]
    fn variant_labels() {
        let mut r = sample([0.0; 3], 0);
        r.basis_variant = VariantLabel::NotApplicable;
        r.gram_condition = None;
        let v: serde_json::Value = serde_json::from_str(&r.to_json_line().unwrap()).unwrap();
        assert_eq!(v["basis_variant"], "n/a");
        assert_eq!(v["scenario"], "S2");
        assert_eq!(v["method"], "chaos");
    }

    #[test]
    fn files_round_trip_and_tolerate_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.jsonl");
        let records = vec![sample([1.0, 2.0, 3.0], 2), sample([0.5, 20.0, f64::INFINITY], 1)];
        write_jsonl(&path, &records).unwrap();
        let back = read_jsonl(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].seed, 1);
        assert_eq!(back[1], records[0]);

        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str("{\"scenario\":\"S2\",\"meth");
        std::fs::write(&path, text).unwrap();
        assert_eq!(read_jsonl(&path).unwrap().len(), 2);

        append_jsonl(&dir.path().join("a.jsonl"), &records[0]).unwrap();
        assert_eq!(read_jsonl(&dir.path().join("a.jsonl")).unwrap(), vec![records[0].clone()]);
    }

    #[test]
    fn csv_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.csv");
        write_csv(&path, &[sample([1.0, 2.0, 30.0], 0)]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_COLUMNS.join(","));
        assert_eq!(lines.next().unwrap(), "S2,chaos,orthonormal,35,0.0,0,1.0,2.0,30.0,true,true,false,1.25");
    }

    proptest! {
        #[test]
        fn record_round_trip(
            a in prop_oneof![any::<f64>(), Just(f64::INFINITY)],
            b in 0.0f64..1e3,
            c in any::<f64>(),
            seed in any::<u64>(),
            sigma in 0.0f64..2.0,
        ) {
            let mut r = sample([a, b, c], seed);
            r.sigma = sigma;
            let json = r.to_json_line().unwrap();
            let back: ScenarioRecord = serde_json::from_str(&json).unwrap();
            prop_assert_eq!(back.to_json_line().unwrap(), json);
            prop_assert!(back.flags_consistent());
            prop_assert_eq!(back.mse_ex_it.to_bits() == a.to_bits() || (a.is_nan() && back.mse_ex_it.is_nan()), true);
        }
    }
}
