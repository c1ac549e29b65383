//! Report assembly and output formats.

use std::io::Write;
use std::path::Path;

use oneshot_core::mc::{trial_rng, McEstimate};
use rand::RngCore;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;
pub const LIBRARY_VERSION: &str = env!("CARGO_PKG_VERSION");

/// A real as JSON: finite values stay numbers, the rest become strings.
pub fn num(x: f64) -> Value {
    if x.is_finite() {
        Value::from(x)
    } else if x.is_nan() {
        Value::from("nan")
    } else if x > 0.0 {
        Value::from("inf")
    } else {
        Value::from("-inf")
    }
}

/// One inequality evaluated on the run.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundCheck {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub holds: bool,
    /// Whether the hypotheses of the inequality were met, so that a failure
    /// is a genuine violation.
    pub applicable: bool,
}

impl BoundCheck {
    /// `value <= bound`.
    pub fn le(name: &str, value: f64, bound: f64, applicable: bool) -> Self {
        Self { name: name.to_string(), value, bound, holds: value <= bound, applicable }
    }

    pub fn violated(&self) -> bool {
        self.applicable && !self.holds
    }

    fn to_json(&self) -> Value {
        json!({
            "name": self.name,
            "value": num(self.value),
            "bound": num(self.bound),
            "holds": self.holds,
            "applicable": self.applicable,
        })
    }
}

/// What an experiment hands back to the runner.
#[derive(Clone, Debug, Default)]
pub struct Outcome {
    /// Named per-trial estimates, in report order.
    pub quantities: Vec<(String, McEstimate)>,
    pub bounds: Vec<BoundCheck>,
    pub details: Map<String, Value>,
    /// Number of trial streams drawn.
    pub streams: u64,
    /// Master seed of those streams when it is not the config seed.
    pub stream_seed: Option<u64>,
}

impl Outcome {
    pub fn quantity(&mut self, name: &str, est: McEstimate) {
        self.quantities.push((name.to_string(), est));
    }

    pub fn detail(&mut self, key: &str, v: Value) {
        self.details.insert(key.to_string(), v);
    }

    pub fn bound(&mut self, b: BoundCheck) {
        self.bounds.push(b);
    }

    pub fn violations(&self) -> usize {
        self.bounds.iter().filter(|b| b.violated()).count()
    }

    pub fn get(&self, name: &str) -> Option<&McEstimate> {
        self.quantities.iter().find(|(n, _)| n == name).map(|(_, e)| e)
    }
}

/// SHA-256 over the master seed and the first word of every stream used.
pub fn stream_digest(seed: u64, streams: u64) -> String {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(streams.to_le_bytes());
    for t in 0..streams {
        h.update(trial_rng(seed, t).next_u64().to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Finished report: config echo, results and run metadata.
#[derive(Clone, Debug)]
pub struct Report {
    pub config: ExperimentConfig,
    pub outcome: Outcome,
    pub wall_time_s: f64,
    pub threads: usize,
}

impl Report {
    pub fn status(&self) -> &'static str {
        if self.outcome.violations() > 0 {
            "bound-violated"
        } else {
            "ok"
        }
    }

    pub fn exit_code(&self) -> i32 {
        if self.outcome.violations() > 0 {
            2
        } else {
            0
        }
    }

    pub fn to_json(&self) -> Result<Value, CliError> {
        let mut quantities = Map::new();
        for (name, est) in &self.outcome.quantities {
            quantities.insert(
                name.clone(),
                json!({"mean": num(est.mean), "stderr": num(est.stderr), "trials": est.trials()}),
            );
        }
        let bounds: Vec<Value> = self.outcome.bounds.iter().map(BoundCheck::to_json).collect();
        Ok(json!({
            "schema_version": SCHEMA_VERSION,
            "library_version": LIBRARY_VERSION,
            "experiment": self.config.experiment.name(),
            "config": serde_json::to_value(&self.config).map_err(|e| CliError::Config(e.to_string()))?,
            "status": self.status(),
            "quantities": quantities,
            "bounds": bounds,
            "details": self.outcome.details,
            "rng_stream_digest": stream_digest(self.outcome.stream_seed.unwrap_or(self.config.seed), self.outcome.streams),
            "run": {"wall_time_s": num(self.wall_time_s), "threads": self.threads},
        }))
    }

    pub fn write_json(&self, path: &Path) -> Result<(), CliError> {
        let v = self.to_json()?;
        let mut f = std::fs::File::create(path)?;
        f.write_all(&to_pretty_string(&v))?;
        f.write_all(b"\n")?;
        Ok(())
    }

    /// One row per (trial, quantity).
    pub fn write_csv(&self, path: &Path) -> Result<(), CliError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["trial", "seed_stream", "quantity", "value"])?;
        for (name, est) in &self.outcome.quantities {
            for (t, v) in est.values.iter().enumerate() {
                w.write_record([t.to_string(), t.to_string(), name.clone(), fmt_real(*v)])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Seventeen significant digits.
pub fn fmt_real(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

/// Pretty printer that writes every float with seventeen significant digits.
struct SciFormatter(serde_json::ser::PrettyFormatter<'static>);

macro_rules! delegate {
    ($($name:ident),*) => {$(
        fn $name<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
            self.0.$name(w)
        }
    )*};
}

impl serde_json::ser::Formatter for SciFormatter {
    fn write_f64<W: ?Sized + std::io::Write>(&mut self, w: &mut W, v: f64) -> std::io::Result<()> {
        w.write_all(fmt_real(v).as_bytes())
    }

    fn write_f32<W: ?Sized + std::io::Write>(&mut self, w: &mut W, v: f32) -> std::io::Result<()> {
        self.write_f64(w, v as f64)
    }

    delegate!(begin_array, end_array, begin_object, end_object, end_object_value, end_array_value);

    fn begin_array_value<W: ?Sized + std::io::Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn begin_object_key<W: ?Sized + std::io::Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object_value(w)
    }
}

pub fn to_pretty_string(v: &Value) -> Vec<u8> {
    use serde::Serialize;
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, SciFormatter(serde_json::ser::PrettyFormatter::new()));
    v.serialize(&mut ser).expect("serializing a JSON value into memory cannot fail");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn non_finite_reals_become_strings() {
        assert_eq!(num(f64::INFINITY), Value::from("inf"));
        assert_eq!(num(f64::NEG_INFINITY), Value::from("-inf"));
        assert_eq!(num(f64::NAN), Value::from("nan"));
    }

    #[test]
    fn floats_use_seventeen_digits() {
        let s = String::from_utf8(to_pretty_string(&json!({"x": 0.1, "n": 3}))).unwrap();
        assert!(s.contains("\"x\": 1.0000000000000001e-1"), "{s}");
        assert!(s.contains("\"n\": 3"), "{s}");
    }

    #[test]
    fn digest_depends_on_seed_and_streams() {
        assert_eq!(stream_digest(1, 10), stream_digest(1, 10));
        assert_ne!(stream_digest(1, 10), stream_digest(2, 10));
        assert_ne!(stream_digest(1, 10), stream_digest(1, 11));
    }

    proptest! {
        #[test]
        fn printed_reals_round_trip(x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
            let s = String::from_utf8(to_pretty_string(&num(x))).unwrap();
            let back: f64 = s.parse().unwrap();
            prop_assert_eq!(back.to_bits(), x.to_bits());
        }
    }
}
