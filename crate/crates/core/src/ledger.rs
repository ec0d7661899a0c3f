//! Token accounting split by pipeline stage.

use core::fmt;
use core::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl TokenUsage {
    pub const ZERO: TokenUsage = TokenUsage {
        input_tokens: 0,
        output_tokens: 0,
    };

    pub const fn new(input_tokens: u64, output_tokens: u64) -> Self {
        Self {
            input_tokens,
            output_tokens,
        }
    }

    pub fn total(&self) -> u64 {
        self.input_tokens + self.output_tokens
    }
}

impl Add for TokenUsage {
    type Output = TokenUsage;

    fn add(self, rhs: TokenUsage) -> TokenUsage {
        TokenUsage {
            input_tokens: self.input_tokens + rhs.input_tokens,
            output_tokens: self.output_tokens + rhs.output_tokens,
        }
    }
}

impl AddAssign for TokenUsage {
    fn add_assign(&mut self, rhs: TokenUsage) {
        *self = *self + rhs;
    }
}

impl core::iter::Sum for TokenUsage {
    fn sum<I: Iterator<Item = TokenUsage>>(iter: I) -> Self {
        iter.fold(TokenUsage::ZERO, Add::add)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Actor,
    Reflector,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Actor => "actor",
            Role::Reflector => "reflector",
        })
    }
}

/// Per-role usage. The total is always derived, never stored.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLedger {
    pub actor: TokenUsage,
    pub reflector: TokenUsage,
}

impl TokenLedger {
    pub fn total(&self) -> TokenUsage {
        self.actor + self.reflector
    }

    pub fn get(&self, role: Role) -> TokenUsage {
        match role {
            Role::Actor => self.actor,
            Role::Reflector => self.reflector,
        }
    }

    pub fn record(&mut self, role: Role, usage: TokenUsage) {
        match role {
            Role::Actor => self.actor += usage,
            Role::Reflector => self.reflector += usage,
        }
    }
}

/// Value-style accumulation: returns the ledger with `usage` added to `role`.
pub fn record_usage(mut ledger: TokenLedger, role: Role, usage: TokenUsage) -> TokenLedger {
    ledger.record(role, usage);
    ledger
}

impl Add for TokenLedger {
    type Output = TokenLedger;

    fn add(self, rhs: TokenLedger) -> TokenLedger {
        TokenLedger {
            actor: self.actor + rhs.actor,
            reflector: self.reflector + rhs.reflector,
        }
    }
}

impl AddAssign for TokenLedger {
    fn add_assign(&mut self, rhs: TokenLedger) {
        *self = *self + rhs;
    }
}
