use serde::{Deserialize, Serialize};

/// Reversibility envelope of a handler. Only non-irreversible handlers may be
/// pre-launched speculatively.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SafetyClass {
    /// Repeating the call has no additional effect (reads, lookups).
    Idempotent,
    /// Side effects exist but can be rolled back or overwritten.
    Reversible,
    /// Externally visible, cannot be undone (orders, deletions, refunds).
    Irreversible,
}

impl SafetyClass {
    pub fn allows_prelaunch(self) -> bool {
        !matches!(self, SafetyClass::Irreversible)
    }
}
