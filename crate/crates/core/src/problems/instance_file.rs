//! Plain-text instance descriptions.
//!
//! Grammar, one entry per line:
//!
//! ```text
//! file    := line*
//! line    := blank | comment | entry
//! comment := '#' any*
//! entry   := key ws* '=' ws* value ws* comment?
//! key     := [a-z_0-9]+
//! ```
//!
//! Keys may appear at most once. `problem` is required and selects the
//! remaining vocabulary:
//!
//! | problem      | keys (default)                                                      |
//! |--------------|---------------------------------------------------------------------|
//! | `example1`   | `cost_model` (`normal`; or `two_point`)                             |
//! | `rideshare`  | `instance` (`D5`), `desk` (`true`), `width`, `height`, `horizon`,    |
//! |              | `r_max`, `w_base`, `w_dist`, `move_cost`, `request_rate`,            |
//! |              | `pool_size`, `max_trip_distance`, `pool_seed`,                       |
//! |              | `status_rule` (`coherent`/`literal`), `enumeration_limit`            |
//! | `random_mdp` | `states`, `actions`, `outcomes`, `horizon` (all required), `seed`    |
//! |              | (`0`), `reward_model` (`state_action`/`per_outcome`)                 |
//!
//! Ride-share keys other than `instance` and `desk` override the preset that
//! those two select.
//!
//! ```text
//! # desk-scale D5 with a longer horizon
//! problem = rideshare
//! instance = D5
//! horizon = 16
//! pool_seed = 7
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::problems::random_mdp::{RandomMdpSizes, RewardModel};
use crate::problems::rideshare::{InstanceTag, RideShareConfig, StatusRule};
use crate::problems::shortest_path::CostModel;

#[derive(Debug, Clone, PartialEq)]
pub enum InstanceSpec {
    Example1 {
        cost_model: CostModel,
    },
    RideShare(RideShareConfig),
    RandomMdp {
        sizes: RandomMdpSizes,
        reward_model: RewardModel,
        seed: u64,
    },
}

impl InstanceSpec {
    /// Built-in tags: `example1`, `example1-two-point`, `D5`, `D10`, `D15`
    /// (desk scale) and `D5-full`, `D10-full`, `D15-full`.
    pub fn builtin(tag: &str) -> Option<Self> {
        let lower = tag.to_ascii_lowercase();
        match lower.as_str() {
            "example1" => Some(InstanceSpec::Example1 {
                cost_model: CostModel::Normal,
            }),
            "example1-two-point" => Some(InstanceSpec::Example1 {
                cost_model: CostModel::TwoPoint,
            }),
            _ => {
                let (name, desk) = match lower.strip_suffix("-full") {
                    Some(name) => (name, false),
                    None => (lower.as_str(), true),
                };
                let tag = InstanceTag::parse(name).ok()?;
                Some(InstanceSpec::RideShare(RideShareConfig::for_instance(tag, desk)))
            }
        }
    }

    /// A built-in tag, or else the path of an instance file.
    pub fn resolve(reference: &str) -> Result<Self> {
        if let Some(spec) = Self::builtin(reference) {
            return Ok(spec);
        }
        let path = Path::new(reference);
        if !path.exists() {
            return Err(Error::config(format!(
                "{reference:?} is neither a built-in problem nor an existing instance file"
            )));
        }
        load_instance(path)
    }
}

pub fn load_instance(path: &Path) -> Result<InstanceSpec> {
    let text = std::fs::read_to_string(path)?;
    parse_with_origin(&text, &path.display().to_string())
}

pub fn parse_instance(text: &str) -> Result<InstanceSpec> {
    parse_with_origin(text, "<input>")
}

struct Entry {
    value: String,
    line: usize,
}

struct Entries<'a> {
    origin: &'a str,
    map: BTreeMap<String, Entry>,
}

impl Entries<'_> {
    fn error(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            location: format!("{}:{line}", self.origin),
            message: message.into(),
        }
    }

    fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        match self.map.remove(key) {
            None => Ok(None),
            Some(e) => e
                .value
                .parse()
                .map(Some)
                .map_err(|err| self.error(e.line, format!("bad value for {key}: {err}"))),
        }
    }

    fn take_with<T>(&mut self, key: &str, f: impl Fn(&str) -> Option<T>) -> Result<Option<T>> {
        match self.map.remove(key) {
            None => Ok(None),
            Some(e) => f(&e.value)
                .map(Some)
                .ok_or_else(|| self.error(e.line, format!("bad value for {key}: {:?}", e.value))),
        }
    }

    fn require<T: FromStr>(&mut self, key: &str) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        self.take(key)?
            .ok_or_else(|| self.error(0, format!("missing required key {key}")))
    }

    fn finish(self) -> Result<()> {
        match self.map.iter().min_by_key(|(_, e)| e.line) {
            None => Ok(()),
            Some((key, e)) => Err(self.error(e.line, format!("unknown key {key}"))),
        }
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn parse_with_origin(text: &str, origin: &str) -> Result<InstanceSpec> {
    let mut entries = Entries {
        origin,
        map: BTreeMap::new(),
    };
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(entries.error(line, "expected `key = value`"));
        };
        let key = key.trim();
        let value = value.trim();
        if key.is_empty()
            || !key
                .chars()
                .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
        {
            return Err(entries.error(line, format!("invalid key {key:?}")));
        }
        if value.is_empty() {
            return Err(entries.error(line, format!("empty value for {key}")));
        }
        if let Some(prev) = entries.map.get(key) {
            return Err(entries.error(
                line,
                format!("duplicate key {key} (first set on line {})", prev.line),
            ));
        }
        entries.map.insert(
            key.to_string(),
            Entry {
                value: value.to_string(),
                line,
            },
        );
    }

    let problem: String = entries.require("problem")?;
    let spec = match problem.as_str() {
        "example1" => {
            let cost_model = entries
                .take_with("cost_model", |v| match v {
                    "normal" => Some(CostModel::Normal),
                    "two_point" => Some(CostModel::TwoPoint),
                    _ => None,
                })?
                .unwrap_or_default();
            InstanceSpec::Example1 { cost_model }
        }
        "rideshare" => {
            let tag = entries
                .take_with("instance", |v| InstanceTag::parse(v).ok())?
                .unwrap_or(InstanceTag::D5);
            let desk = entries.take("desk")?.unwrap_or(true);
            let mut c = RideShareConfig::for_instance(tag, desk);
            set(&mut c.width, entries.take("width")?);
            set(&mut c.height, entries.take("height")?);
            set(&mut c.horizon, entries.take("horizon")?);
            set(&mut c.r_max, entries.take("r_max")?);
            set(&mut c.w_base, entries.take("w_base")?);
            set(&mut c.w_dist, entries.take("w_dist")?);
            set(&mut c.move_cost, entries.take("move_cost")?);
            set(&mut c.request_rate, entries.take("request_rate")?);
            set(&mut c.pool_size, entries.take("pool_size")?);
            set(&mut c.max_trip_distance, entries.take("max_trip_distance")?);
            set(&mut c.pool_seed, entries.take("pool_seed")?);
            set(&mut c.enumeration_limit, entries.take("enumeration_limit")?);
            set(
                &mut c.status_rule,
                entries.take_with("status_rule", |v| match v {
                    "coherent" => Some(StatusRule::Coherent),
                    "literal" => Some(StatusRule::Literal),
                    _ => None,
                })?,
            );
            c.validate()?;
            InstanceSpec::RideShare(c)
        }
        "random_mdp" => {
            let sizes = RandomMdpSizes {
                states: entries.require("states")?,
                actions: entries.require("actions")?,
                outcomes: entries.require("outcomes")?,
                horizon: entries.require("horizon")?,
            };
            sizes.validate()?;
            let seed = entries.take("seed")?.unwrap_or(0);
            let reward_model = entries
                .take_with("reward_model", |v| match v {
                    "state_action" => Some(RewardModel::StateAction),
                    "per_outcome" => Some(RewardModel::PerOutcome),
                    _ => None,
                })?
                .unwrap_or_default();
            InstanceSpec::RandomMdp {
                sizes,
                reward_model,
                seed,
            }
        }
        other => return Err(entries.error(0, format!("unknown problem {other:?}"))),
    };
    entries.finish()?;
    Ok(spec)
}
