//! Experiment configuration (JSON).

use std::collections::BTreeMap;

use oneshot_core::linalg::{c64, CMatrix, DensityOperator, TensorLayout};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Largest factor dimension accepted from a config.
pub const DIM_CAP: usize = 64;
/// Largest total side of a generated state.
pub const SIDE_CAP: usize = 256;
/// Largest trial count.
pub const TRIAL_CAP: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    FlattenVerify,
    Divergence,
    ConvexSplit,
    Covering,
    Cmg,
    WiretapPrivacy,
    Decouple,
    TwirlCheck,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::FlattenVerify => "flatten-verify",
            ExperimentKind::Divergence => "divergence",
            ExperimentKind::ConvexSplit => "convex-split",
            ExperimentKind::Covering => "covering",
            ExperimentKind::Cmg => "cmg",
            ExperimentKind::WiretapPrivacy => "wiretap-privacy",
            ExperimentKind::Decouple => "decouple",
            ExperimentKind::TwirlCheck => "twirl-check",
        }
    }
}

fn default_trials() -> usize {
    100
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub sizes: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance: Option<InstanceSpec>,
    #[serde(default)]
    pub options: Options,
}

/// Either a generator (seeded random instance) or explicit matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InstanceSpec {
    Random(RandomSpec),
    Inline(InlineSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomSpec {
    pub seed: u64,
    pub dims: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineSpec {
    pub dims: Vec<usize>,
    /// Row-major matrices; entries are reals or `[re, im]` pairs.
    pub states: Vec<Vec<Vec<Entry>>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Entry {
    Real(f64),
    Complex([f64; 2]),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizationOpt {
    #[default]
    Uniform,
    AsPrinted,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantOpt {
    #[default]
    Lemma,
    Theorem,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelOpt {
    #[default]
    Random,
    /// Same output state for every input (cmg, wiretap-privacy).
    Constant,
    FullTrace,
    Identity,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairsOpt {
    #[default]
    Random,
    /// Inputs block-diagonal in the eigenbasis of sigma on `A`.
    SigmaDiagonal,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerOpt {
    #[default]
    Sticky,
    Iid,
}

/// Experiment-specific knobs; every field has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Options {
    pub normalization: NormalizationOpt,
    pub variant: VariantOpt,
    pub channel: ChannelOpt,
    pub pairs: PairsOpt,
    pub sampler: SamplerOpt,
    /// Use the tilted pair in twirl-check.
    pub tilted: bool,
    /// Simulate the hat-extended instance in decouple.
    pub hat: bool,
    /// Certificate budget `e` for covering.
    pub budget: f64,
    /// `(R1, R1', R2, R2')` in bits for wiretap-privacy.
    pub rates: [f64; 4],
    /// Decoder-side conditions supplied from outside; echoed only.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub decoder_conditions: BTreeMap<String, bool>,
}

impl Default for Options {
    fn default() -> Self {
        Self {
            normalization: NormalizationOpt::Uniform,
            variant: VariantOpt::Lemma,
            channel: ChannelOpt::Random,
            pairs: PairsOpt::Random,
            sampler: SamplerOpt::Sticky,
            tilted: false,
            hat: true,
            budget: 0.0,
            rates: [0.0; 4],
            decoder_conditions: BTreeMap::new(),
        }
    }
}

/// Parse a config, reporting line and column on malformed input.
pub fn parse(text: &str) -> Result<ExperimentConfig, CliError> {
    let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| {
        CliError::Config(format!("line {} column {}: {}", e.line(), e.column(), e))
    })?;
    cfg.validate()?;
    Ok(cfg)
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl ExperimentConfig {
    /// Checks that do not depend on the experiment.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.trials == 0 || self.trials > TRIAL_CAP {
            return Err(bad(format!("trials must be in 1..={TRIAL_CAP}")));
        }
        for (name, v) in [("epsilon", self.epsilon), ("eta", self.eta), ("delta", self.delta)] {
            if let Some(x) = v {
                if !x.is_finite() || x < 0.0 {
                    return Err(bad(format!("{name} must be a finite non-negative number")));
                }
            }
        }
        if !(0.0..1.0).contains(&self.options.budget) {
            return Err(bad("options.budget must lie in [0, 1)"));
        }
        if let Some(inst) = &self.instance {
            let dims = match inst {
                InstanceSpec::Random(r) => &r.dims,
                InstanceSpec::Inline(i) => &i.dims,
            };
            if dims.is_empty() || dims.iter().any(|&d| d == 0 || d > DIM_CAP) {
                return Err(bad(format!("instance dims must be in 1..={DIM_CAP}")));
            }
            let side = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).unwrap_or(usize::MAX);
            if side > SIDE_CAP {
                return Err(CliError::Config(format!("instance side {side} exceeds cap {SIDE_CAP}")));
            }
            if let InstanceSpec::Random(RandomSpec { rank: Some(0), .. }) = inst {
                return Err(bad("rank must be positive"));
            }
        }
        Ok(())
    }

    pub fn size(&self, key: &str, default: usize) -> usize {
        self.sizes.get(key).copied().unwrap_or(default)
    }

    /// Reject size keys the experiment does not read.
    pub fn expect_sizes(&self, allowed: &[&str]) -> Result<(), CliError> {
        for (k, &v) in &self.sizes {
            if !allowed.contains(&k.as_str()) {
                return Err(bad(format!("unknown size `{k}` for {}; expected one of {allowed:?}", self.experiment.name())));
            }
            if v == 0 {
                return Err(bad(format!("size `{k}` must be positive")));
            }
        }
        Ok(())
    }

    /// Random spec with defaults, or an error if inline matrices were given.
    pub fn random_instance(&self, default_dims: &[usize]) -> Result<RandomSpec, CliError> {
        match &self.instance {
            None => Ok(RandomSpec { seed: self.seed, dims: default_dims.to_vec(), rank: None }),
            Some(InstanceSpec::Random(r)) => {
                if r.dims.len() != default_dims.len() {
                    return Err(bad(format!(
                        "{} expects {} instance dims, got {}",
                        self.experiment.name(),
                        default_dims.len(),
                        r.dims.len()
                    )));
                }
                Ok(r.clone())
            }
            Some(InstanceSpec::Inline(_)) => {
                Err(bad(format!("{} does not accept inline instances", self.experiment.name())))
            }
        }
    }

    pub fn epsilon_or(&self, default: f64) -> f64 {
        self.epsilon.unwrap_or(default)
    }
}

impl InlineSpec {
    /// Matrix `k` as a density operator on `layout`.
    pub fn state(&self, k: usize, layout: &TensorLayout) -> Result<DensityOperator, CliError> {
        let rows = self.states.get(k).ok_or_else(|| bad(format!("inline instance needs state #{k}")))?;
        let n = layout.side();
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(bad(format!("inline state #{k} must be {n}x{n}")));
        }
        let m = CMatrix::from_fn(n, n, |i, j| match rows[i][j] {
            Entry::Real(x) => c64(x, 0.0),
            Entry::Complex([re, im]) => c64(re, im),
        });
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(bad(format!("inline state #{k} has non-finite entries")));
        }
        DensityOperator::from_matrix(m, layout.clone()).map_err(|e| bad(format!("inline state #{k}: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse(r#"{"experiment": "covering"}"#).unwrap();
        assert_eq!(c.experiment, ExperimentKind::Covering);
        assert_eq!(c.trials, 100);
        assert_eq!(c.options, Options::default());
    }

    #[test]
    fn malformed_json_reports_position() {
        let err = parse("{\n  \"experiment\": \"cmg\",\n  \"seed\": ,\n}").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3 column"), "{msg}");
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(parse(r#"{"experiment": "cmg", "sead": 3}"#).is_err());
        assert!(parse(r#"{"experiment": "cmg", "options": {"tilt": true}}"#).is_err());
        assert!(parse(r#"{"experiment": "flatten"}"#).is_err());
    }

    #[test]
    fn inline_entries_accept_real_and_complex() {
        let c = parse(
            r#"{"experiment": "divergence",
                "instance": {"inline": {"dims": [2], "states": [[[0.5, [0.0, 0.1]], [[0.0, -0.1], 0.5]]]}}}"#,
        )
        .unwrap();
        let Some(InstanceSpec::Inline(spec)) = &c.instance else { panic!() };
        let rho = spec.state(0, &TensorLayout::single("A", 2).unwrap()).unwrap();
        assert!((rho.matrix()[(0, 1)].im - 0.1).abs() < 1e-15);
        assert!(spec.state(1, &TensorLayout::single("A", 2).unwrap()).is_err());
    }

    #[test]
    fn caps_enforced() {
        assert!(parse(r#"{"experiment": "decouple", "instance": {"random": {"seed": 1, "dims": [65]}}}"#).is_err());
        assert!(parse(r#"{"experiment": "decouple", "instance": {"random": {"seed": 1, "dims": [16, 16, 2]}}}"#).is_err());
        assert!(parse(r#"{"experiment": "decouple", "trials": 0}"#).is_err());
    }

    #[test]
    fn echo_round_trips() {
        let c = parse(r#"{"experiment": "wiretap-privacy", "seed": 9, "epsilon": 0.05, "sizes": {"l": 4}}"#).unwrap();
        let back: ExperimentConfig = serde_json::from_value(serde_json::to_value(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
