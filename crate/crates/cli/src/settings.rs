//! Plain-text `key = value` files supplying benchmark defaults.
//!
//! Keys are [`BenchConfig`] field names. Blank lines and lines starting with
//! `#` are ignored.

use std::str::FromStr;

use thiserror::Error;

use crate::bench::BenchConfig;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SettingsError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value `{value}` for `{key}`")]
    BadValue { line: usize, key: String, value: String },
}

/// Parses `key = value` lines, keeping their 1-based line numbers.
pub fn parse_settings(text: &str) -> Result<Vec<(usize, String, String)>, SettingsError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(SettingsError::Syntax { line: i + 1 })?;
        out.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn parse<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T, SettingsError> {
    value.parse().map_err(|_| SettingsError::BadValue { line, key: key.into(), value: value.into() })
}

impl BenchConfig {
    /// Sets one field by name.
    pub fn set(&mut self, line: usize, key: &str, value: &str) -> Result<(), SettingsError> {
        match key {
            "clients" => self.clients = parse(line, key, value)?,
            "conflict_rate" => self.conflict_rate = parse(line, key, value)?,
            "batch_size" => self.batch_size = parse(line, key, value)?,
            "duration_ms" => self.duration_ms = parse(line, key, value)?,
            "warmup_ms" => self.warmup_ms = parse(line, key, value)?,
            "commands_per_client" => self.commands_per_client = Some(parse(line, key, value)?),
            "f" => self.f = parse(line, key, value)?,
            "leaders" => self.leaders = parse(line, key, value)?,
            "proposers" => self.proposers = Some(parse(line, key, value)?),
            "replicas" => self.replicas = Some(parse(line, key, value)?),
            "thrifty" => self.thrifty = parse(line, key, value)?,
            "seed" => self.seed = parse(line, key, value)?,
            "transport" => self.transport = parse(line, key, value)?,
            "coupled" => self.coupled = parse(line, key, value)?,
            "service_cost_us" => self.service_cost_us = parse(line, key, value)?,
            "delay_min_us" => self.delay_min_us = parse(line, key, value)?,
            "delay_max_us" => self.delay_max_us = parse(line, key, value)?,
            _ => return Err(SettingsError::UnknownKey { line, key: key.into() }),
        }
        Ok(())
    }

    /// Applies every setting in `text` on top of `self`.
    pub fn apply_settings(&mut self, text: &str) -> Result<(), SettingsError> {
        for (line, k, v) in parse_settings(text)? {
            self.set(line, &k, &v)?;
        }
        Ok(())
    }
}
