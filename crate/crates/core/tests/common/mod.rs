//! Oracles and validators shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use hcrl_core::nn::{log_softmax, Mlp, MlpSpec};
use hcrl_core::ppo::{ppo_objective, PpoConfig, Sample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

/// GAE straight from its definition: `A_t = Σ_l (γλ)^l δ_{t+l}`, summing
/// forward until the episode ends, with `δ` cut at terminals.
#[allow(clippy::needless_range_loop)]
pub fn gae_oracle(
    rewards: &[f64],
    values: &[f64],
    terminals: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Vec<f64> {
    let n = rewards.len();
    let next_value = |t: usize| {
        if terminals[t] {
            0.0
        } else if t + 1 < n {
            values[t + 1]
        } else {
            bootstrap
        }
    };
    let delta = |t: usize| rewards[t] + gamma * next_value(t) - values[t];
    (0..n)
        .map(|t| {
            let mut sum = 0.0;
            let mut weight = 1.0;
            for k in t..n {
                sum += weight * delta(k);
                if terminals[k] {
                    break;
                }
                weight *= gamma * lambda;
            }
            sum
        })
        .collect()
}

/// The usual backward recursion, written independently of the crate:
/// `A_t = δ_t + γλ(1 - done_t) A_{t+1}`.
pub fn gae_backward_oracle(
    rewards: &[f64],
    values: &[f64],
    terminals: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Vec<f64> {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = bootstrap;
    for t in (0..n).rev() {
        let live = if terminals[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        adv[t] = delta + gamma * lambda * live * next_adv;
        next_adv = adv[t];
        next_value = values[t];
    }
    adv
}

pub struct GradientCheck {
    pub max_relative_error: f64,
    pub params: usize,
}

/// Relative error `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Central differences of the full PPO loss on a random batch. Old
/// log-probabilities sit within ±0.1 of the current ones so every ratio
/// stays away from the clip boundaries (where the loss has kinks).
pub fn ppo_gradient_check(spec: &MlpSpec, batch: usize, seed: u64, eps: f64, floor: f64) -> GradientCheck {
    let mlp = Mlp::new(spec.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params: Vec<f64> = (0..spec.param_count()).map(|_| rng.random_range(-0.7..0.7)).collect();
    let obs: Vec<Vec<f64>> =
        (0..batch).map(|_| (0..spec.input_dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let samples: Vec<Sample<'_>> = obs
        .iter()
        .map(|o| {
            let lp = log_softmax(&mlp.forward(&params, o).unwrap().logits);
            let action = rng.random_range(0..spec.action_count);
            Sample {
                obs: o,
                action,
                old_log_prob: lp[action] + rng.random_range(-0.1..0.1),
                advantage: rng.random_range(-2.0..2.0),
                ret: rng.random_range(-1.0..1.0),
            }
        })
        .collect();
    let config = PpoConfig::default();
    let analytic = ppo_objective(&mlp, &params, &samples, &config).unwrap().gradient;
    let mut worst = 0.0f64;
    let mut p = params.clone();
    for i in 0..params.len() {
        p[i] = params[i] + eps;
        let up = ppo_objective(&mlp, &p, &samples, &config).unwrap().loss;
        p[i] = params[i] - eps;
        let down = ppo_objective(&mlp, &p, &samples, &config).unwrap().loss;
        p[i] = params[i];
        let numeric = (up - down) / (2.0 * eps);
        worst = worst.max(relative_error(analytic[i], numeric, floor));
    }
    GradientCheck { max_relative_error: worst, params: params.len() }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldType {
    String,
    Integer,
    Number,
    Boolean,
    Literals(Vec<String>),
    Object(String),
    Array(Box<FieldType>),
    Nullable(Box<FieldType>),
}

#[derive(Debug, Clone)]
pub struct Field {
    pub ty: FieldType,
    pub required: bool,
}

type Table = BTreeMap<String, Field>;

/// The field tables of `docs/protocol.md`.
#[derive(Debug, Default)]
pub struct ProtocolSpec {
    pub server_envelope: Table,
    pub client_envelope: Table,
    pub server: BTreeMap<String, Table>,
    pub client: BTreeMap<String, Table>,
    pub objects: BTreeMap<String, Table>,
}

pub fn protocol_doc_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../docs/protocol.md")
}

fn split_cells(row: &str) -> Vec<String> {
    let inner = row.trim().trim_start_matches('|').trim_end_matches('|');
    let mut cells = vec![String::new()];
    let mut chars = inner.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '\\' if chars.peek() == Some(&'|') => {
                cells.last_mut().unwrap().push('|');
                chars.next();
            }
            '|' => cells.push(String::new()),
            c => cells.last_mut().unwrap().push(c),
        }
    }
    cells.into_iter().map(|c| c.trim().to_string()).collect()
}

fn parse_type(text: &str) -> FieldType {
    let alternatives: Vec<&str> = text.split('|').map(str::trim).collect();
    if alternatives.len() > 1 {
        if alternatives.iter().all(|a| a.starts_with('"')) {
            return FieldType::Literals(alternatives.iter().map(|a| a.trim_matches('"').to_string()).collect());
        }
        let non_null: Vec<&str> = alternatives.iter().copied().filter(|a| *a != "null").collect();
        assert_eq!(non_null.len(), 1, "unsupported union '{text}'");
        return FieldType::Nullable(Box::new(parse_type(non_null[0])));
    }
    if let Some(inner) = text.strip_suffix("[]") {
        return FieldType::Array(Box::new(parse_type(inner)));
    }
    match text {
        "string" => FieldType::String,
        "integer" => FieldType::Integer,
        "number" => FieldType::Number,
        "boolean" => FieldType::Boolean,
        other if other.starts_with('"') => FieldType::Literals(vec![other.trim_matches('"').to_string()]),
        other => FieldType::Object(other.to_string()),
    }
}

pub fn load_protocol_spec() -> ProtocolSpec {
    let text = std::fs::read_to_string(protocol_doc_path()).expect("docs/protocol.md is readable");
    let mut spec = ProtocolSpec::default();
    let mut section = String::new();
    let mut current: Option<(String, String, Table)> = None;
    let flush = |current: &mut Option<(String, String, Table)>, spec: &mut ProtocolSpec| {
        if let Some((section, name, table)) = current.take() {
            match section.as_str() {
                "Envelope" if name == "server" => spec.server_envelope = table,
                "Envelope" if name == "client" => spec.client_envelope = table,
                "Server messages" => {
                    spec.server.insert(name, table);
                }
                "Client messages" => {
                    spec.client.insert(name, table);
                }
                "Objects" => {
                    spec.objects.insert(name, table);
                }
                _ => {}
            }
        }
    };
    for line in text.lines() {
        if let Some(title) = line.strip_prefix("## ") {
            flush(&mut current, &mut spec);
            section = title.trim().to_string();
        } else if let Some(title) = line.strip_prefix("### ") {
            flush(&mut current, &mut spec);
            let name = title.trim().trim_matches('`').to_string();
            current = Some((section.clone(), name, Table::new()));
        } else if line.trim_start().starts_with('|') {
            let cells = split_cells(line);
            if cells.len() != 3 || cells[0] == "field" || cells[0].starts_with('-') {
                continue;
            }
            if let Some((_, _, table)) = current.as_mut() {
                let required = match cells[2].as_str() {
                    "yes" => true,
                    "no" => false,
                    other => panic!("bad required column '{other}'"),
                };
                table.insert(cells[0].clone(), Field { ty: parse_type(&cells[1]), required });
            }
        }
    }
    flush(&mut current, &mut spec);
    spec
}

impl ProtocolSpec {
    fn check_value(&self, path: &str, ty: &FieldType, value: &Value) -> Result<(), String> {
        let ok = match ty {
            FieldType::String => value.is_string(),
            FieldType::Integer => value.is_u64() || value.is_i64(),
            FieldType::Number => value.is_number(),
            FieldType::Boolean => value.is_boolean(),
            FieldType::Literals(options) => value.as_str().is_some_and(|s| options.iter().any(|o| o == s)),
            FieldType::Nullable(inner) => return if value.is_null() { Ok(()) } else { self.check_value(path, inner, value) },
            FieldType::Array(inner) => {
                let items = value.as_array().ok_or_else(|| format!("{path}: expected array"))?;
                for (i, item) in items.iter().enumerate() {
                    self.check_value(&format!("{path}[{i}]"), inner, item)?;
                }
                true
            }
            FieldType::Object(name) => {
                let table = self.objects.get(name).ok_or_else(|| format!("{path}: undocumented object {name}"))?;
                return self.check_table(path, value, &[table]);
            }
        };
        if ok {
            Ok(())
        } else {
            Err(format!("{path}: {value} is not {ty:?}"))
        }
    }

    fn check_table(&self, path: &str, value: &Value, tables: &[&Table]) -> Result<(), String> {
        let map = value.as_object().ok_or_else(|| format!("{path}: expected object"))?;
        for (key, v) in map {
            let field = tables
                .iter()
                .find_map(|t| t.get(key))
                .ok_or_else(|| format!("{path}: undocumented field '{key}'"))?;
            self.check_value(&format!("{path}.{key}"), &field.ty, v)?;
        }
        for table in tables {
            for (key, field) in table.iter() {
                if field.required && !map.contains_key(key) {
                    return Err(format!("{path}: missing required field '{key}'"));
                }
            }
        }
        Ok(())
    }

    /// Validates one server line against its documented table.
    pub fn validate_server_line(&self, line: &str) -> Result<String, String> {
        let value: Value = serde_json::from_str(line).map_err(|e| format!("not JSON: {e}"))?;
        let kind = value["type"].as_str().ok_or("missing type")?.to_string();
        let table = self.server.get(&kind).ok_or_else(|| format!("undocumented server message '{kind}'"))?;
        self.check_table(&kind, &value, &[&self.server_envelope, table])?;
        Ok(kind)
    }

    pub fn validate_client_line(&self, line: &str) -> Result<String, String> {
        let value: Value = serde_json::from_str(line).map_err(|e| format!("not JSON: {e}"))?;
        let kind = value["type"].as_str().ok_or("missing type")?.to_string();
        let table = self.client.get(&kind).ok_or_else(|| format!("undocumented client message '{kind}'"))?;
        self.check_table(&kind, &value, &[&self.client_envelope, table])?;
        Ok(kind)
    }
}
