use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

/// Buffer-assigned record identifier. Ids are dense and start at 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RecordId(pub u64);

impl fmt::Display for RecordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Ok,
    Failed,
    Timeout,
    ParseFailed,
}

impl RecordStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RecordStatus::Ok => "ok",
            RecordStatus::Failed => "failed",
            RecordStatus::Timeout => "timeout",
            RecordStatus::ParseFailed => "parse_failed",
        }
    }
}

/// One entry of the evolve buffer: a candidate program, its evaluation and
/// its natural-language abstract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolveRecord {
    pub id: RecordId,
    pub parent_id: Option<RecordId>,
    pub iteration: u32,
    pub code: String,
    pub metrics: BTreeMap<String, f64>,
    /// Internal fitness, always higher-is-better.
    pub combined_score: f64,
    /// Score in the task's display orientation, present only for `ok` records.
    pub reported_score: Option<f64>,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub status: RecordStatus,
    pub code_hash: u64,
    pub created_at: u64,
    /// Set when the same code was already present in the buffer.
    pub duplicate_of: Option<RecordId>,
    /// Degradation markers (fallback abstract, fallback exemplars, ...).
    pub flags: Vec<String>,
}

impl EvolveRecord {
    pub fn is_ok(&self) -> bool {
        self.status == RecordStatus::Ok
    }
}

/// Everything needed to insert a record; the buffer assigns id, hash and
/// duplicate marker.
#[derive(Debug, Clone, PartialEq)]
pub struct NewRecord {
    pub parent_id: Option<RecordId>,
    pub iteration: u32,
    pub code: String,
    pub metrics: BTreeMap<String, f64>,
    pub combined_score: f64,
    pub reported_score: Option<f64>,
    pub abstract_text: String,
    pub status: RecordStatus,
    pub created_at: u64,
    pub flags: Vec<String>,
}

impl NewRecord {
    /// A record with no metrics and score 0, e.g. for candidates that never
    /// reached the evaluator.
    pub fn unscored(parent_id: Option<RecordId>, iteration: u32, code: String, status: RecordStatus) -> Self {
        NewRecord {
            parent_id,
            iteration,
            code,
            metrics: BTreeMap::new(),
            combined_score: 0.0,
            reported_score: None,
            abstract_text: String::new(),
            status,
            created_at: 0,
            flags: Vec::new(),
        }
    }
}

/// 64-bit FNV-1a over the exact bytes of `code`.
pub fn code_hash(code: &str) -> u64 {
    fnv1a(code.as_bytes())
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes.iter().fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a(b"foobar"), 0x8594_4171_f739_67e8);
    }

    #[test]
    fn hash_is_over_exact_bytes() {
        assert_ne!(code_hash("x = 1"), code_hash("x =  1"));
        assert_ne!(code_hash("x = 1"), code_hash("x = 1\n"));
    }
}
