//! Key files: 32 secret bytes as one line of hex, readable by the owner only.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use namelt_core::chaincore::KeyPair;
use x25519_dalek::StaticSecret;

use crate::error::{Class, CliError, CliResult};

#[cfg(unix)]
fn check_private(path: &Path) -> CliResult<()> {
    use std::os::unix::fs::PermissionsExt;
    let mode = fs::metadata(path)?.permissions().mode();
    if mode & 0o004 != 0 {
        return Err(CliError::new(
            Class::Other,
            format!("refusing world-readable key file {} (mode {:o}); chmod 600 it", path.display(), mode & 0o777),
        ));
    }
    Ok(())
}

#[cfg(not(unix))]
fn check_private(_: &Path) -> CliResult<()> {
    Ok(())
}

pub fn read_secret(path: &Path) -> CliResult<[u8; 32]> {
    check_private(path)?;
    let text = fs::read_to_string(path).map_err(|e| CliError::new(Class::Io, format!("{}: {e}", path.display())))?;
    let bytes = hex::decode(text.trim()).map_err(|e| CliError::new(Class::Crypto, format!("{}: {e}", path.display())))?;
    bytes
        .try_into()
        .map_err(|_| CliError::new(Class::Crypto, format!("{}: expected 32 bytes of hex", path.display())))
}

pub fn write_secret(path: &Path, secret: &[u8; 32], force: bool) -> CliResult<()> {
    let mut opts = OpenOptions::new();
    opts.write(true);
    if force {
        opts.create(true).truncate(true);
    } else {
        opts.create_new(true);
    }
    #[cfg(unix)]
    {
        use std::os::unix::fs::OpenOptionsExt;
        opts.mode(0o600);
    }
    let mut f = opts.open(path).map_err(|e| CliError::new(Class::Io, format!("{}: {e}", path.display())))?;
    writeln!(f, "{}", hex::encode(secret))?;
    Ok(())
}

pub fn read_keypair(path: &Path) -> CliResult<KeyPair> {
    Ok(KeyPair::from_private_bytes(&read_secret(path)?)?)
}

pub fn read_x25519(path: &Path) -> CliResult<StaticSecret> {
    Ok(StaticSecret::from(read_secret(path)?))
}
