//! Run configuration: defaults, TOML overlay, validation.
//!
//! Config files are flat TOML — dotted key paths to scalar values:
//!
//! ```toml
//! agent = "td3-ts"
//! train_steps = 50000
//! env.traffic.phi = 80.0
//! hyper.ts.heads = 4
//! sync.sync_period = 100
//! ```
//!
//! Every field falls back to the per-agent defaults, so a file only states
//! what it overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::{AgentHyper, AgentKind};
use crate::env::EnvConfig;
use crate::error::{Result, SimError};
use crate::federation::SyncConfig;

/// Everything one run needs (output location excluded: paths are not part of
/// a run's identity).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub agent: AgentKind,
    pub seed: u64,
    pub train_steps: u64,
    /// Exploration-free evaluation episodes after training.
    pub eval_episodes: u64,
    /// Evaluation window length in slots (per cell).
    pub eval_window_slots: u64,
    /// Training metrics window length in slots.
    pub train_window_slots: u64,
    /// Window outage threshold for the compliance fraction.
    pub compliance_threshold: f64,
    pub env: EnvConfig,
    pub hyper: AgentHyper,
    pub sync: SyncConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::defaults_for(AgentKind::Td3)
    }
}

impl RunConfig {
    /// Desk-scale defaults for one agent kind.
    pub fn defaults_for(agent: AgentKind) -> Self {
        Self {
            agent,
            seed: 1,
            train_steps: 50_000,
            eval_episodes: 20,
            eval_window_slots: 100,
            train_window_slots: 1000,
            compliance_threshold: 1e-2,
            env: EnvConfig::default(),
            hyper: AgentHyper::defaults_for(agent),
            sync: Self::default_sync_for(agent),
        }
    }

    /// PGAC is on-policy: sync every rollout and drain all pooled segments.
    pub fn default_sync_for(agent: AgentKind) -> SyncConfig {
        match agent {
            AgentKind::Pgac => SyncConfig {
                sync_period: 20,
                central_updates_per_round: 64,
            },
            _ => SyncConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.eval_episodes == 0 {
            errs.push("eval_episodes: must be >= 1".to_string());
        }
        if self.eval_window_slots == 0 {
            errs.push("eval_window_slots: must be >= 1".to_string());
        }
        if self.train_window_slots == 0 {
            errs.push("train_window_slots: must be >= 1".to_string());
        }
        if !(self.compliance_threshold >= 0.0 && self.compliance_threshold <= 1.0) {
            errs.push(format!(
                "compliance_threshold: must be in [0, 1], got {}",
                self.compliance_threshold
            ));
        }
        errs.extend(self.hyper.validate());
        errs.extend(self.sync.validation_errors());
        if let Err(SimError::Config(env_errs)) = self.env.validate() {
            errs.extend(env_errs);
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(SimError::Config(errs))
        }
    }

    /// Parse a TOML config file over the per-agent defaults.
    ///
    /// `agent_override` (e.g. from the CLI) wins over the file's `agent` key
    /// and decides which defaults apply.
    pub fn from_toml_str(text: &str, agent_override: Option<AgentKind>) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e| SimError::parse("config", format!("{e}")))?;
        let value = toml::Value::Table(table);
        let agent = match agent_override {
            Some(a) => a,
            None => match value.get("agent") {
                Some(toml::Value::String(s)) => s.parse()?,
                Some(other) => {
                    return Err(SimError::parse(
                        "config",
                        format!("agent must be a string, got {other}"),
                    ))
                }
                None => AgentKind::Td3,
            },
        };
        let defaults = Self::defaults_for(agent);
        let default_value =
            toml::Value::try_from(&defaults).map_err(|e| SimError::parse("config", e.to_string()))?;
        let merged = merge_toml(default_value, value);
        let mut cfg: RunConfig = merged
            .try_into()
            .map_err(|e| SimError::Config(vec![format!("config: {e}")]))?;
        if let Some(a) = agent_override {
            cfg.agent = a;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_file(path: &Path, agent_override: Option<AgentKind>) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::parse(path.display().to_string(), e.to_string()))?;
        Self::from_toml_str(&text, agent_override)
    }

    /// Canonical JSON (sorted keys) of the whole config.
    pub fn canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        canonicalize(&value)
    }

    /// Hash of the full resolved config; stable under key reordering in the
    /// source file because hashing happens on the canonical form.
    pub fn config_hash(&self) -> String {
        sha256_hex(self.canonical_json().as_bytes())
    }

    /// Hash of the fields that must agree for runs to be comparable: the
    /// environment plus the evaluation protocol.
    pub fn env_hash(&self) -> String {
        let v = serde_json::json!({
            "env": serde_json::to_value(&self.env).expect("env serializes"),
            "eval_episodes": self.eval_episodes,
            "eval_window_slots": self.eval_window_slots,
        });
        sha256_hex(canonicalize(&v).as_bytes())
    }
}

/// Overlay `over` onto `base`, table by table.
fn merge_toml(base: toml::Value, over: toml::Value) -> toml::Value {
    match (base, over) {
        (toml::Value::Table(mut b), toml::Value::Table(o)) => {
            for (k, v) in o {
                let merged = match b.remove(&k) {
                    Some(existing) => merge_toml(existing, v),
                    None => v,
                };
                b.insert(k, merged);
            }
            toml::Value::Table(b)
        }
        (_, over) => over,
    }
}

/// Deterministic JSON with sorted object keys.
pub fn canonicalize(value: &serde_json::Value) -> String {
    fn write(value: &serde_json::Value, out: &mut String) {
        match value {
            serde_json::Value::Object(map) => {
                let mut keys: Vec<&String> = map.keys().collect();
                keys.sort();
                out.push('{');
                for (i, k) in keys.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    out.push_str(&serde_json::to_string(k).expect("string"));
                    out.push(':');
                    write(&map[*k], out);
                }
                out.push('}');
            }
            serde_json::Value::Array(items) => {
                out.push('[');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    write(item, out);
                }
                out.push(']');
            }
            scalar => out.push_str(&serde_json::to_string(scalar).expect("scalar")),
        }
    }
    let mut out = String::new();
    write(value, &mut out);
    out
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(bytes);
    let mut hex = String::with_capacity(64);
    for b in digest {
        use std::fmt::Write;
        write!(hex, "{b:02x}").expect("write to string");
    }
    hex
}
