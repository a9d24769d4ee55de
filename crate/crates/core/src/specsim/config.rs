use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::interp::{InitState, Num};

pub const LINE_BYTES: u64 = 64;

pub fn line_of(addr: u64) -> u64 {
    addr & !(LINE_BYTES - 1)
}

/// Latencies and widths of the modelled core. Defaults are plausible for a
/// recent out-of-order x86 core; they are knobs, not measurements.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingConfig {
    pub schema: u32,
    pub issue_width: u32,
    pub lat_alu: u64,
    pub lat_load_warm: u64,
    pub lat_load_cold: u64,
    pub branch_resolve_extra: u64,
    /// Unresolved speculated branches allowed in flight; 0 disables
    /// speculation.
    pub max_spec_depth: u32,
    /// Cache lines resident before the run (any address in the line).
    pub warm_lines: BTreeSet<Num>,
}

impl Default for TimingConfig {
    fn default() -> Self {
        TimingConfig {
            schema: 1,
            issue_width: 4,
            lat_alu: 1,
            lat_load_warm: 4,
            lat_load_cold: 200,
            branch_resolve_extra: 1,
            max_spec_depth: 4,
            warm_lines: BTreeSet::new(),
        }
    }
}

impl TimingConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.schema != 1 {
            return Err(format!("unsupported timing schema {}", self.schema));
        }
        if self.issue_width == 0 {
            return Err("issue_width must be at least 1".into());
        }
        for (name, v) in [
            ("lat_alu", self.lat_alu),
            ("lat_load_warm", self.lat_load_warm),
            ("lat_load_cold", self.lat_load_cold),
        ] {
            if v == 0 {
                return Err(format!("{} must be at least 1", name));
            }
        }
        Ok(())
    }

    pub fn warm<I: IntoIterator<Item = u64>>(mut self, lines: I) -> Self {
        self.warm_lines
            .extend(lines.into_iter().map(|a| Num(line_of(a))));
        self
    }
}

/// How the adversary steers the predictor. `true` in `Chosen` predicts taken.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MispredictPolicy {
    /// Every prediction is correct.
    #[default]
    Never,
    AlwaysWrong,
    Chosen {
        #[serde(deserialize_with = "site_keys")]
        directions: BTreeMap<usize, bool>,
    },
}

fn site_keys<'de, D: serde::Deserializer<'de>>(d: D) -> Result<BTreeMap<usize, bool>, D::Error> {
    let raw = BTreeMap::<String, bool>::deserialize(d)?;
    raw.into_iter()
        .map(|(k, v)| {
            k.parse()
                .map(|k| (k, v))
                .map_err(|_| serde::de::Error::custom(format!("bad branch site `{}`", k)))
        })
        .collect()
}

impl MispredictPolicy {
    pub fn parse_name(s: &str) -> Option<MispredictPolicy> {
        match s {
            "never" => Some(MispredictPolicy::Never),
            "always-wrong" | "always_wrong" => Some(MispredictPolicy::AlwaysWrong),
            _ => None,
        }
    }

    /// Predicted direction of branch `site` whose real direction is `actual`.
    pub fn predict(&self, site: usize, actual: bool) -> Option<bool> {
        match self {
            MispredictPolicy::Never => Some(actual),
            MispredictPolicy::AlwaysWrong => Some(!actual),
            MispredictPolicy::Chosen { directions } => directions.get(&site).copied(),
        }
    }

    /// All `2^n` chosen policies over sites `0..n`.
    pub fn enumerate(n: usize) -> impl Iterator<Item = MispredictPolicy> {
        assert!(n < 32, "too many branch sites to enumerate");
        (0u32..1 << n).map(move |bits| MispredictPolicy::Chosen {
            directions: (0..n).map(|s| (s, bits >> s & 1 == 1)).collect(),
        })
    }
}

/// A simulator input file: an initial state plus optional cache, policy and
/// timing settings.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimInput {
    #[serde(flatten)]
    pub init: InitState,
    #[serde(default)]
    pub warm_lines: Vec<Num>,
    #[serde(default)]
    pub policy: Option<MispredictPolicy>,
    #[serde(default)]
    pub timing: Option<TimingConfig>,
}

impl SimInput {
    pub fn from_json(text: &str) -> Result<SimInput, crate::interp::InitError> {
        let s: SimInput = serde_json::from_str(text)?;
        s.init.check()?;
        Ok(s)
    }
}
