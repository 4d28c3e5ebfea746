//! TOML configuration, overridable per flag. Relative paths are taken from
//! the directory holding the config file.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use namelt_core::chaincore::{ChainConfig, PublicKey};
use serde::Deserialize;

use crate::error::{Class, CliError, CliResult};

pub const CONFIG_ENV: &str = "NAMELT_CONFIG";

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    chain: Option<PathBuf>,
    key: Option<PathBuf>,
    verbosity: Option<u8>,
    resolver: Option<ResolverSection>,
    chain_config: Option<ChainConfig>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResolverSection {
    endpoint: Option<String>,
    pubkey: Option<String>,
    fingerprint: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct CliConfig {
    pub chain: Option<PathBuf>,
    pub key: Option<PathBuf>,
    pub resolver_endpoint: Option<SocketAddr>,
    pub resolver_pubkey: Option<PublicKey>,
    pub fingerprint: Option<[u8; 32]>,
    pub verbosity: u8,
    pub chain_config: ChainConfig,
}

fn bad(msg: String) -> CliError {
    CliError::new(Class::Other, msg)
}

pub fn parse_endpoint(s: &str) -> CliResult<SocketAddr> {
    s.parse().map_err(|e| CliError::usage(format!("endpoint {s:?}: {e}")))
}

pub fn parse_pubkey(s: &str) -> CliResult<PublicKey> {
    let bytes = hex::decode(s.trim()).map_err(|e| CliError::usage(format!("public key: {e}")))?;
    Ok(PublicKey::from_sec1(&bytes)?)
}

pub fn parse_fingerprint(s: &str) -> CliResult<[u8; 32]> {
    hex::decode(s.trim())
        .ok()
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| CliError::usage("fingerprint must be 32 bytes of hex"))
}

impl CliConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::new(Class::Io, format!("{}: {e}", path.display())))?;
        let file: FileConfig = toml::from_str(&text).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rel = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
        let r = file.resolver.unwrap_or_default();
        Ok(CliConfig {
            chain: file.chain.map(rel),
            key: file.key.map(rel),
            resolver_endpoint: r.endpoint.as_deref().map(parse_endpoint).transpose()?,
            resolver_pubkey: r.pubkey.as_deref().map(parse_pubkey).transpose()?,
            fingerprint: r.fingerprint.as_deref().map(parse_fingerprint).transpose()?,
            verbosity: file.verbosity.unwrap_or(0),
            chain_config: file.chain_config.unwrap_or_default(),
        })
    }

    pub fn chain_path(&self) -> CliResult<&Path> {
        self.chain.as_deref().ok_or_else(|| CliError::usage("no chain file: pass --chain or set `chain` in the config"))
    }

    pub fn key_path(&self) -> CliResult<&Path> {
        self.key.as_deref().ok_or_else(|| CliError::usage("no key file: pass --key or set `key` in the config"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("namelt.toml");
        fs::write(&p, "chain = \"chain.jsonl\"\nkey = \"/abs/wallet.key\"\n[resolver]\nendpoint = \"127.0.0.1:5353\"\n").unwrap();
        let c = CliConfig::load(&p).unwrap();
        assert_eq!(c.chain.unwrap(), dir.path().join("chain.jsonl"));
        assert_eq!(c.key.unwrap(), PathBuf::from("/abs/wallet.key"));
        assert_eq!(c.resolver_endpoint.unwrap().port(), 5353);
        fs::write(&p, "chian = 1\n").unwrap();
        assert!(CliConfig::load(&p).is_err());
    }
}
