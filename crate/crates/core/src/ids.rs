//! Identifier newtypes and ledger account addresses.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({:?})", stringify!($name), self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }
    };
}

string_id!(
    /// Node identity. Ordering is lexicographic and doubles as the scheduler tie-break.
    NodeId
);
string_id!(TaskId);
string_id!(PocId);
string_id!(OfferId);
string_id!(KeyId);

/// A balance-holding party on the ledger.
///
/// `Mint` never holds a balance; it appears only as the source of minted rewards.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum AccountId {
    Mint,
    Node(NodeId),
    Escrow(TaskId),
}

impl fmt::Display for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AccountId::Mint => f.write_str("mint"),
            AccountId::Node(n) => write!(f, "node:{n}"),
            AccountId::Escrow(t) => write!(f, "escrow:{t}"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("invalid account id `{0}`")]
pub struct ParseAccountError(String);

impl FromStr for AccountId {
    type Err = ParseAccountError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "mint" {
            return Ok(AccountId::Mint);
        }
        match s.split_once(':') {
            Some(("node", id)) if !id.is_empty() => Ok(AccountId::Node(NodeId::new(id))),
            Some(("escrow", id)) if !id.is_empty() => Ok(AccountId::Escrow(TaskId::new(id))),
            _ => Err(ParseAccountError(s.to_owned())),
        }
    }
}

impl Serialize for AccountId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AccountId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
