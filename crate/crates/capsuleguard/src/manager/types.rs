//! Domain types for the capsule store: capsules, grants, jobs, and the
//! manager's error taxonomy.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::analyzer::AnalysisState;
use crate::policy::Policy;
use crate::table::ColType;

use super::crypto::NonceBytes;

/// Principal id reserved for the manager itself. Capsules produced by jobs
/// are owned by the manager: their payloads may mix rows from several data
/// owners, so no single owner may open them directly — access always goes
/// through the policy gate.
pub const MANAGER_PRINCIPAL: &str = "manager";

/// One ancestry step of a derived capsule: which capsule it came from and
/// the hash of the program that produced it.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LineageEntry {
    /// Parent capsule id.
    pub parent: String,
    /// SHA-256 (hex) of the producing program's source text.
    pub program_hash: String,
}

/// A unit of governed data: an encrypted table plus the policy that gates
/// every view of it. Metadata is plaintext; the payload is sealed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataCapsule {
    /// Content-derived id: SHA-256 (hex) over ciphertext, canonical policy
    /// text, and lineage serialization.
    pub id: String,
    /// Principal who created the capsule ([`MANAGER_PRINCIPAL`] for
    /// job-derived capsules).
    pub owner: String,
    /// Policy gating access. For derived capsules, the residual reported by
    /// the analyzer for the producing output.
    pub policy: Policy,
    /// Column names and types of the sealed table, in column order.
    pub schema: Vec<(String, ColType)>,
    /// Rows in the sealed table.
    pub row_count: u64,
    /// Store-relative path of the ciphertext blob (content-addressed).
    pub ciphertext_ref: String,
    /// AEAD nonce used when sealing.
    pub nonce: NonceBytes,
    /// Ancestry; empty for owner-uploaded (root) capsules.
    pub lineage: Vec<LineageEntry>,
    /// For derived capsules: the abstract value of the producing output
    /// variable, letting follow-up analyses resume with the evidence the
    /// producing pipeline already established.
    pub analysis_state: Option<AnalysisState>,
}

impl DataCapsule {
    /// True for capsules produced by a job rather than uploaded by an owner.
    pub fn is_derived(&self) -> bool {
        !self.lineage.is_empty()
    }
}

/// Which capsules a grant covers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GrantScope {
    /// Every capsule the granting owner owns, now or later, and every
    /// capsule derived from them.
    All,
    /// An explicit set of capsule ids (and capsules derived from them).
    Capsules(BTreeSet<String>),
}

/// An owner's authorization for one analyst: the roles and purposes the
/// analyst may claim when working with the covered capsules.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grant {
    /// Grant id, assigned by the store (`g1`, `g2`, ...).
    pub id: String,
    /// Granting owner.
    pub owner: String,
    /// Authorized analyst.
    pub analyst: String,
    /// Roles the analyst holds toward the covered capsules.
    pub roles: BTreeSet<String>,
    /// Purposes the analyst may declare for the covered capsules.
    pub purposes: BTreeSet<String>,
    /// Covered capsules.
    pub scope: GrantScope,
}

/// Job lifecycle states.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum JobStatus {
    /// Submitted, not yet processed.
    Queued,
    /// Analyzed noncompliant: outputs stored as derived capsules, residual
    /// policies returned, payloads withheld.
    Analyzed,
    /// Analyzed compliant and executed: plaintext results on the job.
    Executed,
    /// Stopped by an error (authorization, parse, analysis, or execution).
    Rejected,
}

impl fmt::Display for JobStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            JobStatus::Queued => "queued",
            JobStatus::Analyzed => "analyzed",
            JobStatus::Executed => "executed",
            JobStatus::Rejected => "rejected",
        })
    }
}

/// One released output of a compliant job.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum JobOutput {
    /// A released table, as CSV text.
    Table { csv: String },
    /// A released scalar.
    Scalar { value: f64 },
}

/// What a processed job produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JobResult {
    /// Not processed yet.
    Pending,
    /// Compliant: plaintext outputs, keyed by output variable.
    Released { outputs: BTreeMap<String, JobOutput> },
    /// Noncompliant: per-output residual policy text and the id of the
    /// derived capsule holding the (sealed) output.
    Residuals {
        residuals: BTreeMap<String, String>,
        derived: BTreeMap<String, String>,
    },
    /// Rejected: machine-readable code plus a human-readable message.
    Error { code: ErrorCode, message: String },
}

/// A submitted analysis run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Job {
    /// Job id, assigned by the store (`j1`, `j2`, ...). Resubmitting the
    /// same program creates a new job; processing is at-most-once per id.
    pub id: String,
    /// Submitting analyst.
    pub analyst: String,
    /// Declared purpose; must be authorized by the covering grants.
    pub purpose: String,
    /// Program source text. Never shown to data owners.
    pub program_source: String,
    /// SHA-256 (hex) of `program_source`.
    pub program_hash: String,
    /// Capsules the program is declared to read.
    pub declared_inputs: Vec<String>,
    /// Roles snapshot taken from the covering grants at submission time;
    /// later grant changes do not affect this job.
    pub ctx_roles: BTreeSet<String>,
    /// Execution seed (explicit, or derived from the job id).
    pub seed: u64,
    /// Analyst-provided summary for the data owner; the owner-facing result
    /// channel. Owners see this and the result, never `program_source`.
    pub notes: Option<String>,
    /// Lifecycle state.
    pub status: JobStatus,
    /// Outcome.
    pub result: JobResult,
}

/// Machine-readable error codes, stable across the API and the CLI.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorCode {
    PolicySyntax,
    CsvMalformed,
    DuplicateCapsule,
    NotOwner,
    UnknownPrincipal,
    NotAuthorized,
    ParseFailed,
    AnalysisFailed,
    ExecFailed,
    PolicyPending,
    DecryptFailed,
    NotFound,
    StoreCorrupt,
    Io,
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Errors from store operations. Messages never contain payload bytes.
#[derive(Debug, thiserror::Error)]
pub enum ManagerError {
    #[error("policy does not parse: {0}")]
    PolicySyntax(#[from] crate::policy::PolicyError),
    #[error("CSV does not parse: {0}")]
    CsvMalformed(#[from] crate::table::TableError),
    #[error("capsule {id} already exists (identical data, policy, and key)")]
    DuplicateCapsule { id: String },
    #[error("{principal:?} does not own {what}")]
    NotOwner { principal: String, what: String },
    #[error("unknown principal {principal:?}: principals become known by owning a capsule")]
    UnknownPrincipal { principal: String },
    #[error("{analyst:?} is not authorized: {detail}")]
    NotAuthorized { analyst: String, detail: String },
    #[error("program does not parse: {detail}")]
    ParseFailed { detail: String },
    #[error("analysis failed: {detail}")]
    AnalysisFailed { detail: String },
    #[error("execution failed: {detail}")]
    ExecFailed { detail: String },
    #[error("policy pending: requirements remain\n{residual}")]
    PolicyPending { residual: String },
    #[error("decryption failed: wrong key or tampered capsule data")]
    DecryptFailed,
    #[error("{kind} {id:?} not found")]
    NotFound { kind: &'static str, id: String },
    #[error("store is corrupt: {detail}")]
    StoreCorrupt { detail: String },
    #[error("store I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl ManagerError {
    /// The stable machine-readable code for this error.
    pub fn code(&self) -> ErrorCode {
        match self {
            ManagerError::PolicySyntax(_) => ErrorCode::PolicySyntax,
            ManagerError::CsvMalformed(_) => ErrorCode::CsvMalformed,
            ManagerError::DuplicateCapsule { .. } => ErrorCode::DuplicateCapsule,
            ManagerError::NotOwner { .. } => ErrorCode::NotOwner,
            ManagerError::UnknownPrincipal { .. } => ErrorCode::UnknownPrincipal,
            ManagerError::NotAuthorized { .. } => ErrorCode::NotAuthorized,
            ManagerError::ParseFailed { .. } => ErrorCode::ParseFailed,
            ManagerError::AnalysisFailed { .. } => ErrorCode::AnalysisFailed,
            ManagerError::ExecFailed { .. } => ErrorCode::ExecFailed,
            ManagerError::PolicyPending { .. } => ErrorCode::PolicyPending,
            ManagerError::DecryptFailed => ErrorCode::DecryptFailed,
            ManagerError::NotFound { .. } => ErrorCode::NotFound,
            ManagerError::StoreCorrupt { .. } => ErrorCode::StoreCorrupt,
            ManagerError::Io(_) => ErrorCode::Io,
        }
    }
}
