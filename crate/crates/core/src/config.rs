//! TOML configuration: a flat key space plus one optional `[step_weights]`
//! table, with `--set key=value` overrides layered on top.
//!
//! Parsing is strict: unknown keys are hard errors, and every value error
//! names the key and the constraint it broke. Worker threads are not a
//! config key; they come from the environment so that a config file pins
//! the experiment, not the machine.

use toml::value::{Table, Value};

use crate::experiments::{ExperimentConfig, GammaPolicy, SplitSpec};
use crate::functionals::FunctionalSpec;
use crate::group::GroupDescriptor;
use crate::walk::StepDistribution;
use crate::{Error, Result};

fn bad(msg: String) -> Error {
    Error::Config(msg)
}

/// Parses config text and applies overrides, producing a validated
/// [`ExperimentConfig`]. Each override is parsed as a one-line TOML
/// document; if that fails, everything after the first `=` is retried as
/// a string value, so `--set functional=geomhalf` works unquoted.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut table: Table = text
        .parse()
        .map_err(|e| bad(format!("config is not valid TOML: {e}")))?;
    for line in overrides {
        let patch = parse_override(line)?;
        merge(&mut table, patch);
    }
    interpret(table)
}

fn parse_override(line: &str) -> Result<Table> {
    if let Ok(t) = line.parse::<Table>() {
        if !t.is_empty() {
            return Ok(t);
        }
    }
    let (key, value) = line
        .split_once('=')
        .ok_or_else(|| bad(format!("override \"{line}\" is not of the form key=value")))?;
    let quoted = format!("{} = {:?}", key.trim(), value.trim());
    quoted
        .parse::<Table>()
        .map_err(|e| bad(format!("override \"{line}\": {e}")))
}

/// Top-level keys replace; tables merge one level deep so a single
/// `step_weights.x` override does not wipe the rest of the table.
fn merge(base: &mut Table, patch: Table) {
    for (key, value) in patch {
        match (base.get_mut(&key), value) {
            (Some(Value::Table(old)), Value::Table(new)) => old.extend(new),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

fn interpret(mut table: Table) -> Result<ExperimentConfig> {
    let group = parse_group(&mut table)?;
    let dist = match table.remove("step_weights") {
        Some(Value::Table(weights)) => parse_step_weights(&group, weights)?,
        Some(other) => {
            return Err(bad(format!(
                "step_weights must be a table of element = weight, got {}",
                other.type_str()
            )))
        }
        None => StepDistribution::standard_srw(group),
    };

    let steps = take_u64(&mut table, "steps", 1)?;
    let checkpoint_list = take_u64_array(&mut table, "checkpoints", 1)?;
    let checkpoints = match (steps, checkpoint_list) {
        (Some(_), Some(_)) => {
            return Err(bad(
                "steps and checkpoints are mutually exclusive; set one".into(),
            ))
        }
        (Some(n), None) => vec![n],
        (None, Some(list)) => list,
        (None, None) => return Err(bad("one of steps or checkpoints is required".into())),
    };

    let mut cfg = ExperimentConfig::new(dist, checkpoints);
    if let Some(seed) = take_u64_min0(&mut table, "seed")? {
        cfg.master_seed = seed;
    }
    if let Some(replicas) = take_u64(&mut table, "replicas", 2)? {
        cfg.replicas = replicas;
    }
    if let Some(text) = take_string(&mut table, "functional")? {
        cfg.functional = Some(FunctionalSpec::parse(&text)?);
    }
    if let Some(text) = take_string(&mut table, "gamma")? {
        cfg.gamma_policy = parse_gamma_policy(&text)?;
    }
    if let Some(v) = take_u32(&mut table, "k_max", 1)? {
        cfg.k_max = v;
    }
    if let Some(v) = take_u32(&mut table, "j_max", 1)? {
        cfg.j_max = v;
    }
    if let Some(list) = take_u64_array(&mut table, "p_list", 1)? {
        cfg.p_list = list
            .into_iter()
            .map(|p| {
                u32::try_from(p).map_err(|_| bad(format!("p_list entry {p} is too large")))
            })
            .collect::<Result<_>>()?;
    }
    if let Some(list) = take_u64_array_min0(&mut table, "offsets")? {
        cfg.offsets = list;
    }
    if let Some(v) = take_u64(&mut table, "window", 1)? {
        cfg.window = v;
    }
    if let Some(v) = take_u32(&mut table, "shift_j", 1)? {
        cfg.shift_j = v;
    }
    if let Some(v) = take_u64(&mut table, "horizon", 1)? {
        cfg.horizon = v;
    }
    if let Some(v) = take_u64(&mut table, "return_replicas", 2)? {
        cfg.return_replicas = v;
    }
    if let Some(text) = take_string(&mut table, "splits")? {
        cfg.splits = parse_splits(&text)?;
    }

    if let Some(key) = table.keys().next() {
        return Err(bad(format!("unknown config key \"{key}\"")));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_group(table: &mut Table) -> Result<GroupDescriptor> {
    let kind = take_string(table, "group")?
        .ok_or_else(|| bad("group is required (\"lattice\" or \"free\")".into()))?;
    let dim = take_u64(table, "dim", 1)?;
    let rank = take_u64(table, "rank", 2)?;
    match kind.as_str() {
        "lattice" => {
            if rank.is_some() {
                return Err(bad("rank only applies to free groups".into()));
            }
            let dim = dim.ok_or_else(|| bad("lattice groups need dim >= 1".into()))?;
            GroupDescriptor::lattice(dim as usize)
        }
        "free" => {
            if dim.is_some() {
                return Err(bad("dim only applies to lattice groups".into()));
            }
            let rank = rank.ok_or_else(|| bad("free groups need rank >= 2".into()))?;
            GroupDescriptor::free(rank as usize)
        }
        other => Err(bad(format!(
            "group must be \"lattice\" or \"free\", got \"{other}\""
        ))),
    }
}

fn parse_step_weights(group: &GroupDescriptor, weights: Table) -> Result<StepDistribution> {
    let mut support = Vec::with_capacity(weights.len());
    for (literal, value) in weights {
        let element = group.parse_element(&literal)?;
        let weight = match value {
            Value::Float(w) => w,
            Value::Integer(w) => w as f64,
            other => {
                return Err(bad(format!(
                    "step_weights.{literal} must be a number, got {}",
                    other.type_str()
                )))
            }
        };
        support.push((element, weight));
    }
    StepDistribution::new(*group, support)
}

fn parse_gamma_policy(text: &str) -> Result<GammaPolicy> {
    match text {
        "auto" => Ok(GammaPolicy::Auto),
        "exact" => Ok(GammaPolicy::Exact),
        "range" => Ok(GammaPolicy::Range),
        other => match other.strip_prefix("escape:") {
            Some(n) => {
                let horizon: u64 = n
                    .parse()
                    .map_err(|_| bad(format!("gamma escape horizon \"{n}\" is not a count")))?;
                if horizon == 0 {
                    return Err(bad("gamma escape horizon must be >= 1".into()));
                }
                Ok(GammaPolicy::Escape { horizon })
            }
            None => Err(bad(format!(
                "gamma must be auto, exact, range, or escape:<horizon>; got \"{other}\""
            ))),
        },
    }
}

fn parse_splits(text: &str) -> Result<SplitSpec> {
    if text == "quartiles" {
        return Ok(SplitSpec::Quartiles);
    }
    if let Some(c) = text.strip_prefix("random:") {
        let count: u32 = c
            .parse()
            .map_err(|_| bad(format!("splits random count \"{c}\" is not a count")))?;
        if count == 0 {
            return Err(bad("splits random count must be >= 1".into()));
        }
        return Ok(SplitSpec::Random { count });
    }
    if let Some(list) = text.strip_prefix("fixed:") {
        let points = list
            .split(',')
            .map(|m| {
                m.trim()
                    .parse::<u64>()
                    .map_err(|_| bad(format!("splits entry \"{m}\" is not a position")))
            })
            .collect::<Result<Vec<u64>>>()?;
        if points.is_empty() {
            return Err(bad("splits fixed list must be nonempty".into()));
        }
        return Ok(SplitSpec::Fixed(points));
    }
    Err(bad(format!(
        "splits must be quartiles, random:<count>, or fixed:<m1,m2,...>; got \"{text}\""
    )))
}

fn take_value(table: &mut Table, key: &str) -> Option<Value> {
    table.remove(key)
}

fn take_string(table: &mut Table, key: &str) -> Result<Option<String>> {
    match take_value(table, key) {
        None => Ok(None),
        Some(Value::String(s)) => Ok(Some(s)),
        Some(other) => Err(bad(format!(
            "{key} must be a string, got {}",
            other.type_str()
        ))),
    }
}

fn int_of(key: &str, value: Value) -> Result<i64> {
    match value {
        Value::Integer(v) => Ok(v),
        other => Err(bad(format!(
            "{key} must be an integer, got {}",
            other.type_str()
        ))),
    }
}

fn take_u64(table: &mut Table, key: &str, min: u64) -> Result<Option<u64>> {
    match take_value(table, key) {
        None => Ok(None),
        Some(value) => {
            let v = int_of(key, value)?;
            if v < min as i64 {
                return Err(bad(format!("{key} must be >= {min}, got {v}")));
            }
            Ok(Some(v as u64))
        }
    }
}

fn take_u64_min0(table: &mut Table, key: &str) -> Result<Option<u64>> {
    match take_value(table, key) {
        None => Ok(None),
        Some(value) => {
            let v = int_of(key, value)?;
            if v < 0 {
                return Err(bad(format!("{key} must be >= 0, got {v}")));
            }
            Ok(Some(v as u64))
        }
    }
}

fn take_u32(table: &mut Table, key: &str, min: u32) -> Result<Option<u32>> {
    match take_u64(table, key, u64::from(min))? {
        None => Ok(None),
        Some(v) => Ok(Some(u32::try_from(v).map_err(|_| {
            bad(format!("{key} value {v} is too large"))
        })?)),
    }
}

fn take_u64_array(table: &mut Table, key: &str, min: u64) -> Result<Option<Vec<u64>>> {
    match take_u64_array_min0(table, key)? {
        None => Ok(None),
        Some(list) => {
            if list.iter().any(|&v| v < min) {
                return Err(bad(format!("{key} entries must be >= {min}")));
            }
            Ok(Some(list))
        }
    }
}

fn take_u64_array_min0(table: &mut Table, key: &str) -> Result<Option<Vec<u64>>> {
    match take_value(table, key) {
        None => Ok(None),
        Some(Value::Array(items)) => {
            let mut out = Vec::with_capacity(items.len());
            for item in items {
                let v = int_of(key, item)?;
                if v < 0 {
                    return Err(bad(format!("{key} entries must be >= 0, got {v}")));
                }
                out.push(v as u64);
            }
            Ok(Some(out))
        }
        Some(other) => Err(bad(format!(
            "{key} must be an array of integers, got {}",
            other.type_str()
        ))),
    }
}
