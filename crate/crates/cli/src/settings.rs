//! Flag, config-file and default precedence.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use lluad_daemon::config::KeyValues;

use crate::CliError;

/// Config-file values for one command. Every key must be consumed.
pub struct Settings {
    kv: KeyValues,
    used: RefCell<BTreeSet<String>>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let kv = match path {
            Some(p) => KeyValues::load(p)?,
            None => KeyValues::default(),
        };
        Ok(Self { kv, used: RefCell::new(BTreeSet::new()) })
    }

    pub fn opt<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError> {
        self.used.borrow_mut().insert(key.to_string());
        if flag.is_some() {
            return Ok(flag);
        }
        match self.kv.get(key) {
            Some(v) => v.parse().map(Some).map_err(|_| CliError::Config(format!("`{key}`: cannot parse {v:?}"))),
            None => Ok(None),
        }
    }

    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError> {
        Ok(self.opt(flag, key)?.unwrap_or(default))
    }

    /// Fails on config keys that no option read.
    pub fn finish(&self) -> Result<(), CliError> {
        let used = self.used.borrow();
        match self.kv.keys().find(|k| !used.contains(*k)) {
            Some(k) => Err(CliError::Config(format!("unknown config key `{k}`"))),
            None => Ok(()),
        }
    }
}

/// Comma-separated values, as in `--n-popular 100,1000`.
#[derive(Clone, Debug, PartialEq)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T>
where
    T::Err: Display,
{
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let items = s
            .split(',')
            .map(|p| p.trim().parse::<T>().map_err(|e| format!("{p:?}: {e}")))
            .collect::<Result<Vec<_>, _>>()?;
        if items.is_empty() {
            return Err("empty list".into());
        }
        Ok(Self(items))
    }
}
