//! Run configuration: a key=value file overlaid with command-line settings.
//! Every value a command reads is recorded, so the resolved file written next
//! to the outputs replays the run exactly.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use exitrack_core::kv::KvMap;

use crate::CliError;

/// Name of the resolved-config sidecar for `command`.
pub fn sidecar_name(command: &str) -> String {
    format!("{command}.config.txt")
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    given: KvMap,
    resolved: KvMap,
}

impl RunConfig {
    /// Merges `file` (if any) with `overrides`; rejects keys outside `allowed`.
    pub fn load(
        file: Option<&Path>,
        overrides: &[(String, String)],
        allowed: &[&str],
    ) -> Result<Self, CliError> {
        let mut given = match file {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
                KvMap::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
            }
            None => KvMap::new(),
        };
        for (k, v) in overrides {
            given.set(k.as_str(), v);
        }
        for (k, _) in given.iter() {
            if !allowed.contains(&k) {
                return Err(CliError::Usage(format!("unknown config key `{k}`")));
            }
        }
        Ok(RunConfig {
            given,
            resolved: KvMap::new(),
        })
    }

    pub fn given(&self) -> &KvMap {
        &self.given
    }

    pub fn get_or<T>(&mut self, key: &str, default: T) -> Result<T, CliError>
    where
        T: FromStr + ToString,
    {
        let v = match self.given.get(key) {
            Some(s) => s
                .parse()
                .map_err(|_| CliError::Usage(format!("config `{key}`: cannot parse `{s}`")))?,
            None => default,
        };
        self.resolved.set(key, v.to_string());
        Ok(v)
    }

    pub fn path(&mut self, key: &str) -> Result<PathBuf, CliError> {
        match self.given.get(key) {
            Some(s) => {
                self.resolved.set(key, s);
                Ok(PathBuf::from(s))
            }
            None => Err(CliError::Usage(format!("missing required setting `{key}`"))),
        }
    }

    /// Records values resolved by a typed config's own `write_kv`.
    pub fn record(&mut self, m: &KvMap) {
        self.resolved.merge(m);
    }

    pub fn resolved(&self) -> &KvMap {
        &self.resolved
    }

    pub fn write_sidecar(&self, dir: &Path, command: &str) -> Result<PathBuf, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let p = dir.join(sidecar_name(command));
        fs::write(&p, self.resolved.to_text()).map_err(|e| CliError::io(&p, e))?;
        Ok(p)
    }
}
