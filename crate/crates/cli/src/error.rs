//! Error classes and their exit codes.

use std::fmt;

use namelt_core::chaincore::{KeyError, MempoolError, StoreError, TxError, ValidationError};
use namelt_core::nameregistry::{ParseError, RegistryError, ResolveError};
use namelt_core::netsim::ScriptError;
use namelt_core::resolver::{BindError, ClientError};
use namelt_core::transport::udp::FetchError;
use namelt_core::transport::ConnectError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Class {
    Other = 1,
    Usage = 2,
    NotFound = 3,
    Expired = 4,
    Validation = 5,
    Io = 6,
    Crypto = 7,
    Timeout = 8,
}

#[derive(Debug)]
pub struct CliError {
    pub class: Class,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn new(class: Class, message: impl Into<String>) -> Self {
        CliError { class, message: message.into() }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(Class::Usage, message)
    }

    pub fn exit_code(&self) -> i32 {
        self.class as i32
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

macro_rules! classify {
    ($($t:ty => $class:expr),* $(,)?) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::new($class, e.to_string())
            }
        })*
    };
}

classify! {
    std::io::Error => Class::Io,
    StoreError => Class::Io,
    BindError => Class::Io,
    KeyError => Class::Crypto,
    ConnectError => Class::Crypto,
    TxError => Class::Validation,
    ValidationError => Class::Validation,
    MempoolError => Class::Validation,
    ParseError => Class::Validation,
    RegistryError => Class::Validation,
    ScriptError => Class::Validation,
}

impl From<ResolveError> for CliError {
    fn from(e: ResolveError) -> Self {
        let class = match e {
            ResolveError::NotFound => Class::NotFound,
            ResolveError::Expired => Class::Expired,
            ResolveError::BadFqdn(_) => Class::Usage,
            ResolveError::Corrupt(_) => Class::Validation,
        };
        CliError::new(class, e.to_string())
    }
}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> Self {
        let class = match e {
            ClientError::Timeout(_) => Class::Timeout,
            ClientError::BadSignature | ClientError::FingerprintMismatch => Class::Crypto,
            ClientError::NotFound => Class::NotFound,
            ClientError::Expired => Class::Expired,
            ClientError::BadRecord(_) => Class::Validation,
            ClientError::Server(_) => Class::Other,
            ClientError::Io(_) => Class::Io,
        };
        CliError::new(class, e.to_string())
    }
}

impl From<FetchError> for CliError {
    fn from(e: FetchError) -> Self {
        let class = match e {
            FetchError::Io(_) => Class::Io,
            FetchError::Connect(_) => Class::Crypto,
            FetchError::Timeout(_) => Class::Timeout,
            FetchError::BadReply => Class::Other,
        };
        CliError::new(class, e.to_string())
    }
}
