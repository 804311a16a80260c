//! The data manager: an encrypted capsule store with lineage, analyst
//! authorization, and the job pipeline (parse → analyze → execute or derive
//! a residual capsule).
//!
//! The manager is the trust boundary of the system. Data owners upload
//! tables sealed under their own keys; analysts never receive payload bytes
//! unless the static analyzer discharges every requirement of the governing
//! policies (or an owner-granted role/purpose discharges the rest). A
//! noncompliant job still runs — inside the boundary — but its outputs are
//! sealed into *derived capsules* whose policies are the residuals the
//! analyzer reported, ready for a follow-up program to finish the job.
//!
//! Process boundary in place of enclave hardware: this build simulates the
//! trusted execution environment. Anyone who can read the store directory
//! (specifically `manager.key` and `keys.jsonl`) can read every payload;
//! see `docs/threat-model.md`.

pub mod crypto;
mod store;
mod types;

pub use store::LogEvent;
pub use types::{
    DataCapsule, ErrorCode, Grant, GrantScope, Job, JobOutput, JobResult, JobStatus,
    LineageEntry, ManagerError, MANAGER_PRINCIPAL,
};

use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::RwLock;

use crate::analyzer::{analyze_with_stubs, CapsuleFacts, RequestContext, StubRegistry};
use crate::executor::{execute_with_stubs, Output};
use crate::frontend::parse_program_with_stubs;
use crate::policy::{Policy, Requirement};
use crate::table::{ColType, Table, TableError, Value};

use crypto::KeyBytes;
use store::{State, Store};

/// Roles and purposes a set of grants confers on an analyst for a set of
/// capsules (unions across the covering grants).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Authorization {
    pub roles: BTreeSet<String>,
    pub purposes: BTreeSet<String>,
}

/// In-memory shared state guarded by one lock: readers take snapshots,
/// writers mutate and append to the log before releasing.
struct Shared {
    state: State,
    capsule_keys: BTreeMap<String, KeyBytes>,
    /// Jobs currently inside `process_job`, to keep execution at-most-once
    /// under concurrent callers. Not persisted: a crash mid-processing
    /// leaves the job `Queued`, and a later `process_job` retries it.
    in_flight: BTreeSet<String>,
}

/// The capsule store and job pipeline. All methods take `&self`; the
/// manager is safe to share across threads.
pub struct Manager {
    store: Store,
    manager_key: KeyBytes,
    shared: RwLock<Shared>,
    registry: StubRegistry,
}

/// What the pipeline decided about one processed job.
enum PipelineOutcome {
    /// Every output compliant: release plaintext.
    Released { outputs: BTreeMap<String, JobOutput> },
    /// Some requirement undischarged: seal outputs as derived capsules,
    /// keyed by output variable.
    Derived {
        residuals: BTreeMap<String, String>,
        capsules: Vec<(String, DataCapsule, KeyBytes, Vec<u8>)>,
    },
    /// Stopped; the job is rejected with this code and message.
    Stopped { code: ErrorCode, message: String },
}

impl Manager {
    /// Opens (or initializes) the store at `root` and replays its logs.
    /// The stock stub operations are registered.
    pub fn open(root: &Path) -> Result<Manager, ManagerError> {
        let recovered = Store::open(root)?;
        Ok(Manager {
            store: recovered.store,
            manager_key: recovered.manager_key,
            shared: RwLock::new(Shared {
                state: recovered.state,
                capsule_keys: recovered.capsule_keys,
                in_flight: BTreeSet::new(),
            }),
            registry: StubRegistry::with_stock_stubs(),
        })
    }

    // ------------------------------------------------------------------
    // Capsules

    /// Seals `table_csv` under `owner_key` and records the capsule. The id
    /// is content-derived: identical data, policy, and key produce the
    /// identical id, and re-uploading is reported as [`ManagerError::DuplicateCapsule`].
    pub fn create_capsule(
        &self,
        owner: &str,
        table_csv: &[u8],
        policy_text: &str,
        owner_key: &KeyBytes,
    ) -> Result<String, ManagerError> {
        validate_principal(owner)?;
        let policy = Policy::parse(policy_text)?.normalize();
        let text = std::str::from_utf8(table_csv).map_err(|_| {
            ManagerError::CsvMalformed(TableError::CsvMalformed {
                line: 0,
                message: "payload is not valid UTF-8".to_string(),
            })
        })?;
        let table = Table::from_csv(text, None)?;
        let schema: Vec<(String, ColType)> =
            table.schema().iter().map(|(n, t)| (n.clone(), *t)).collect();

        let lineage: Vec<LineageEntry> = Vec::new();
        let aad = capsule_aad(&policy, &lineage);
        let (nonce, ciphertext) = crypto::seal(owner_key, &aad, table_csv);
        let id = capsule_id(&ciphertext, &policy, &lineage);

        let ciphertext_ref = self.store.write_blob(&ciphertext)?;
        let capsule = DataCapsule {
            id: id.clone(),
            owner: owner.to_string(),
            policy,
            schema,
            row_count: table.row_count() as u64,
            ciphertext_ref,
            nonce,
            lineage,
            analysis_state: None,
        };

        let mut shared = self.write_lock();
        if shared.state.capsules.contains_key(&id) {
            return Err(ManagerError::DuplicateCapsule { id });
        }
        self.store.append(&LogEvent::Capsule { capsule: capsule.clone() })?;
        self.store.append_key(&id, owner_key)?;
        shared.capsule_keys.insert(id.clone(), *owner_key);
        shared.state.capsules.insert(id.clone(), capsule);
        Ok(id)
    }

    /// Capsule metadata by id. Never returns payload bytes.
    pub fn capsule(&self, id: &str) -> Option<DataCapsule> {
        self.read_lock().state.capsules.get(id).cloned()
    }

    /// All capsule metadata, in id order.
    pub fn capsules(&self) -> Vec<DataCapsule> {
        self.read_lock().state.capsules.values().cloned().collect()
    }

    /// Returns the plaintext payload of a capsule, policy permitting.
    ///
    /// The capsule's own creator may always open it (they hold the data key
    /// anyway). Anyone else needs grants covering every root ancestor;
    /// ROLE/PURPOSE requirements are discharged against the union of the
    /// covering grants' roles and purposes, and whatever policy remains
    /// must already be satisfied — otherwise [`ManagerError::PolicyPending`]
    /// reports the printed residual.
    pub fn open_capsule(&self, requester: &str, id: &str) -> Result<Vec<u8>, ManagerError> {
        validate_principal(requester)?;
        let shared = self.read_lock();
        let capsule = shared
            .state
            .capsules
            .get(id)
            .ok_or_else(|| ManagerError::NotFound { kind: "capsule", id: id.to_string() })?;

        if capsule.owner != requester {
            let authz =
                authorize(&shared.state, requester, std::slice::from_ref(&id.to_string()), None)?;
            let residual = capsule.policy.residual_with(|r| match r {
                Requirement::Role(role) => authz.roles.contains(role),
                Requirement::Purpose(purpose) => authz.purposes.contains(purpose),
                _ => false,
            });
            if !residual.is_satisfied() {
                return Err(ManagerError::PolicyPending { residual: residual.to_string() });
            }
        }

        let key = shared
            .capsule_keys
            .get(id)
            .ok_or_else(|| ManagerError::StoreCorrupt { detail: format!("no key for capsule {id}") })?;
        let ciphertext = self.store.read_blob(&capsule.ciphertext_ref)?;
        let aad = capsule_aad(&capsule.policy, &capsule.lineage);
        crypto::open(key, &capsule.nonce, &aad, &ciphertext).map_err(|_| ManagerError::DecryptFailed)
    }

    // ------------------------------------------------------------------
    // Grants

    /// Records an owner's authorization of an analyst. The owner must
    /// already own at least one capsule, and every capsule in an explicit
    /// scope must be theirs.
    pub fn grant(
        &self,
        owner: &str,
        analyst: &str,
        roles: BTreeSet<String>,
        purposes: BTreeSet<String>,
        scope: GrantScope,
    ) -> Result<String, ManagerError> {
        validate_principal(owner)?;
        validate_principal(analyst)?;
        let mut shared = self.write_lock();
        if !shared.state.capsules.values().any(|c| c.owner == owner) {
            return Err(ManagerError::UnknownPrincipal { principal: owner.to_string() });
        }
        if let GrantScope::Capsules(ids) = &scope {
            for id in ids {
                let capsule = shared.state.capsules.get(id).ok_or_else(|| {
                    ManagerError::NotFound { kind: "capsule", id: id.clone() }
                })?;
                if capsule.owner != owner {
                    return Err(ManagerError::NotOwner {
                        principal: owner.to_string(),
                        what: format!("capsule {id}"),
                    });
                }
            }
        }
        let id = shared.state.next_grant_id();
        let grant = Grant {
            id: id.clone(),
            owner: owner.to_string(),
            analyst: analyst.to_string(),
            roles,
            purposes,
            scope,
        };
        self.store.append(&LogEvent::Grant { grant: grant.clone() })?;
        shared.state.grants.insert(id.clone(), grant);
        Ok(id)
    }

    /// Revokes a grant. Only the granting owner may revoke it; jobs already
    /// submitted keep the authorization snapshot they were submitted with.
    pub fn revoke(&self, owner: &str, grant_id: &str) -> Result<(), ManagerError> {
        let mut shared = self.write_lock();
        let grant = shared
            .state
            .grants
            .get(grant_id)
            .ok_or_else(|| ManagerError::NotFound { kind: "grant", id: grant_id.to_string() })?;
        if grant.owner != owner {
            return Err(ManagerError::NotOwner {
                principal: owner.to_string(),
                what: format!("grant {grant_id}"),
            });
        }
        self.store.append(&LogEvent::Revoke { grant_id: grant_id.to_string() })?;
        shared.state.grants.remove(grant_id);
        Ok(())
    }

    /// Active grants, in id order.
    pub fn grants(&self) -> Vec<Grant> {
        self.read_lock().state.grants.values().cloned().collect()
    }

    // ------------------------------------------------------------------
    // Jobs

    /// Records a job for processing. Authorization is checked now, against
    /// the current grant set: the analyst needs, for every root ancestor of
    /// every declared input, a covering grant that includes the declared
    /// purpose. The covering grants' roles are snapshotted onto the job;
    /// later grant changes do not affect it.
    pub fn submit_job(
        &self,
        analyst: &str,
        program_source: &str,
        purpose: &str,
        declared_inputs: &[String],
        seed: Option<u64>,
        notes: Option<String>,
    ) -> Result<String, ManagerError> {
        validate_principal(analyst)?;
        let mut shared = self.write_lock();
        for id in declared_inputs {
            if !shared.state.capsules.contains_key(id) {
                return Err(ManagerError::NotFound { kind: "capsule", id: id.clone() });
            }
        }
        let authz = authorize(&shared.state, analyst, declared_inputs, Some(purpose))?;

        let id = shared.state.next_job_id();
        let job = Job {
            id: id.clone(),
            analyst: analyst.to_string(),
            purpose: purpose.to_string(),
            program_source: program_source.to_string(),
            program_hash: hex::encode(Sha256::digest(program_source.as_bytes())),
            declared_inputs: declared_inputs.to_vec(),
            ctx_roles: authz.roles,
            seed: seed.unwrap_or_else(|| seed_from_job_id(&id)),
            notes,
            status: JobStatus::Queued,
            result: JobResult::Pending,
        };
        self.store.append(&LogEvent::Job { job: job.clone() })?;
        shared.state.jobs.insert(id.clone(), job);
        Ok(id)
    }

    /// Job record by id. Presentation layers decide which fields a caller
    /// may see (owners get status, result, and notes — never the source).
    pub fn job(&self, id: &str) -> Option<Job> {
        self.read_lock().state.jobs.get(id).cloned()
    }

    /// All jobs, in id order.
    pub fn jobs(&self) -> Vec<Job> {
        self.read_lock().state.jobs.values().cloned().collect()
    }

    /// Runs the pipeline for a queued job and returns the final record.
    /// Processing is at-most-once: calling again (or concurrently) returns
    /// the job as it stands without re-executing anything.
    pub fn process_job(&self, job_id: &str) -> Result<Job, ManagerError> {
        // Claim the job, snapshotting everything the pipeline needs.
        let (job, read_capsules, keys) = {
            let mut shared = self.write_lock();
            let job = shared
                .state
                .jobs
                .get(job_id)
                .ok_or_else(|| ManagerError::NotFound { kind: "job", id: job_id.to_string() })?
                .clone();
            if job.status != JobStatus::Queued || shared.in_flight.contains(job_id) {
                return Ok(job);
            }
            shared.in_flight.insert(job_id.to_string());
            let mut capsules = BTreeMap::new();
            let mut keys = BTreeMap::new();
            for id in &job.declared_inputs {
                if let Some(c) = shared.state.capsules.get(id) {
                    capsules.insert(id.clone(), c.clone());
                }
                if let Some(k) = shared.capsule_keys.get(id) {
                    keys.insert(id.clone(), *k);
                }
            }
            (job, capsules, keys)
        };

        let outcome = self.run_pipeline(&job, &read_capsules, &keys);
        self.finalize_job(job_id, outcome)
    }

    /// Parse → analyze → execute. Pure with respect to the store: all
    /// writes happen in `finalize_job`.
    fn run_pipeline(
        &self,
        job: &Job,
        capsules: &BTreeMap<String, DataCapsule>,
        keys: &BTreeMap<String, KeyBytes>,
    ) -> PipelineOutcome {
        let stop = |code, message: String| PipelineOutcome::Stopped { code, message };

        // Parse.
        let program = match parse_program_with_stubs(&job.program_source, &self.registry.stub_names())
        {
            Ok(p) => p,
            Err(e) => return stop(ErrorCode::ParseFailed, e.to_string()),
        };

        // The program may only read capsules the job declared (and was
        // authorized for).
        let reads = program.read_capsules();
        for id in &reads {
            if !capsules.contains_key(id) {
                return stop(
                    ErrorCode::NotAuthorized,
                    format!("program reads capsule {id:?}, which the job did not declare"),
                );
            }
        }

        // Analyze against metadata only.
        let facts: BTreeMap<String, CapsuleFacts> = reads
            .iter()
            .map(|id| {
                let c = &capsules[id];
                (
                    id.clone(),
                    CapsuleFacts {
                        policy: c.policy.clone(),
                        schema: c.schema.iter().map(|(n, _)| n.clone()).collect(),
                        row_count: Some(c.row_count),
                        analysis_state: c.analysis_state.clone(),
                    },
                )
            })
            .collect();
        let ctx = RequestContext { roles: job.ctx_roles.clone(), purpose: job.purpose.clone() };
        let analysis = match analyze_with_stubs(&program, &facts, &ctx, &self.registry) {
            Ok(a) => a,
            Err(e) => return stop(ErrorCode::AnalysisFailed, e.to_string()),
        };

        // Decrypt inputs inside the boundary.
        let mut tables = BTreeMap::new();
        for id in &reads {
            let c = &capsules[id];
            let Some(key) = keys.get(id) else {
                return stop(ErrorCode::StoreCorrupt, format!("no key recorded for capsule {id}"));
            };
            let ciphertext = match self.store.read_blob(&c.ciphertext_ref) {
                Ok(b) => b,
                Err(e) => return stop(ErrorCode::Io, format!("reading capsule {id} payload: {e}")),
            };
            let aad = capsule_aad(&c.policy, &c.lineage);
            let plaintext = match crypto::open(key, &c.nonce, &aad, &ciphertext) {
                Ok(p) => p,
                Err(_) => {
                    return stop(
                        ErrorCode::DecryptFailed,
                        format!("capsule {id} payload failed authentication"),
                    )
                }
            };
            let text = match std::str::from_utf8(&plaintext) {
                Ok(t) => t,
                Err(_) => {
                    return stop(ErrorCode::StoreCorrupt, format!("capsule {id} payload is not UTF-8"))
                }
            };
            // The payload was validated at creation; a parse failure here
            // means the store no longer matches its metadata. Keep the
            // message opaque: this path must never echo payload bytes.
            match Table::from_csv(text, Some(&c.schema)) {
                Ok(t) => tables.insert(id.clone(), t),
                Err(_) => {
                    return stop(
                        ErrorCode::StoreCorrupt,
                        format!("capsule {id} payload does not match its recorded schema"),
                    )
                }
            };
        }

        // Execute.
        let outcome = match execute_with_stubs(&program, &tables, job.seed, false, &self.registry) {
            Ok(o) => o,
            Err(e) => return stop(ErrorCode::ExecFailed, e.to_string()),
        };

        if analysis.compliant() {
            let outputs = outcome
                .outputs
                .into_iter()
                .map(|(var, out)| {
                    let payload = match out {
                        Output::Table(t) => JobOutput::Table { csv: t.to_csv() },
                        Output::Scalar(v) => JobOutput::Scalar { value: v },
                    };
                    (var, payload)
                })
                .collect();
            return PipelineOutcome::Released { outputs };
        }

        // Noncompliant: seal every output as a derived capsule carrying its
        // residual. The analyst gets ids and residual text, never payloads.
        let mut residuals = BTreeMap::new();
        let mut derived = Vec::new();
        for (var, residual) in &analysis.per_output {
            residuals.insert(var.clone(), residual.to_string());
            let Some(output) = outcome.outputs.get(var) else {
                return stop(
                    ErrorCode::StoreCorrupt,
                    format!("analysis reported output {var:?} but execution did not produce it"),
                );
            };
            let (table, schema) = match output {
                Output::Table(t) => {
                    let schema: Vec<(String, ColType)> =
                        t.schema().iter().map(|(n, ty)| (n.clone(), *ty)).collect();
                    (t.clone(), schema)
                }
                Output::Scalar(v) => {
                    let schema = vec![("value".to_string(), ColType::Float)];
                    let table = Table::new(schema.clone(), vec![vec![Value::Float(*v)]])
                        .expect("a single finite float is a valid table");
                    (table, schema)
                }
            };
            let state = analysis.per_output_state.get(var).cloned();
            let parents: BTreeSet<String> = state
                .as_ref()
                .map(|s| s.0.sources.clone())
                .unwrap_or_else(|| reads.clone());
            let lineage: Vec<LineageEntry> = parents
                .into_iter()
                .map(|parent| LineageEntry { parent, program_hash: job.program_hash.clone() })
                .collect();
            let key = crypto::derive_capsule_key(&self.manager_key, &job.id, var);
            let payload = table.to_csv().into_bytes();
            let aad = capsule_aad(residual, &lineage);
            let (nonce, ciphertext) = crypto::seal(&key, &aad, &payload);
            let id = capsule_id(&ciphertext, residual, &lineage);
            let capsule = DataCapsule {
                id,
                owner: MANAGER_PRINCIPAL.to_string(),
                policy: residual.clone(),
                schema,
                row_count: table.row_count() as u64,
                ciphertext_ref: String::new(), // assigned when the blob is written
                nonce,
                lineage,
                analysis_state: state,
            };
            derived.push((var.clone(), capsule, key, ciphertext));
        }
        PipelineOutcome::Derived { residuals, capsules: derived }
    }

    /// Writes the pipeline outcome to the store and releases the job's
    /// in-flight claim, even on I/O errors.
    fn finalize_job(&self, job_id: &str, outcome: PipelineOutcome) -> Result<Job, ManagerError> {
        let result = self.commit_outcome(job_id, outcome);
        self.write_lock().in_flight.remove(job_id);
        result
    }

    fn commit_outcome(&self, job_id: &str, outcome: PipelineOutcome) -> Result<Job, ManagerError> {
        let (status, result, new_capsules) = match outcome {
            PipelineOutcome::Released { outputs } => {
                (JobStatus::Executed, JobResult::Released { outputs }, Vec::new())
            }
            PipelineOutcome::Stopped { code, message } => {
                (JobStatus::Rejected, JobResult::Error { code, message }, Vec::new())
            }
            PipelineOutcome::Derived { residuals, capsules } => {
                let mut stored = Vec::new();
                let mut derived_ids = BTreeMap::new();
                for (var, mut capsule, key, ciphertext) in capsules {
                    capsule.ciphertext_ref = self.store.write_blob(&ciphertext)?;
                    derived_ids.insert(var, capsule.id.clone());
                    stored.push((capsule, key));
                }
                (
                    JobStatus::Analyzed,
                    JobResult::Residuals { residuals, derived: derived_ids },
                    stored,
                )
            }
        };

        let mut shared = self.write_lock();
        for (capsule, key) in &new_capsules {
            self.store.append(&LogEvent::Capsule { capsule: capsule.clone() })?;
            self.store.append_key(&capsule.id, key)?;
            shared.capsule_keys.insert(capsule.id.clone(), *key);
            shared.state.capsules.insert(capsule.id.clone(), capsule.clone());
        }
        self.store.append(&LogEvent::JobUpdate {
            job_id: job_id.to_string(),
            status,
            result: result.clone(),
        })?;
        let job = shared
            .state
            .jobs
            .get_mut(job_id)
            .ok_or_else(|| ManagerError::NotFound { kind: "job", id: job_id.to_string() })?;
        job.status = status;
        job.result = result;
        Ok(job.clone())
    }

    /// Submits and immediately processes a job — the synchronous local-mode
    /// path used by the CLI.
    pub fn run_job(
        &self,
        analyst: &str,
        program_source: &str,
        purpose: &str,
        declared_inputs: &[String],
        seed: Option<u64>,
        notes: Option<String>,
    ) -> Result<Job, ManagerError> {
        let id = self.submit_job(analyst, program_source, purpose, declared_inputs, seed, notes)?;
        self.process_job(&id)
    }

    fn read_lock(&self) -> std::sync::RwLockReadGuard<'_, Shared> {
        self.shared.read().expect("manager state poisoned")
    }

    fn write_lock(&self) -> std::sync::RwLockWriteGuard<'_, Shared> {
        self.shared.write().expect("manager state poisoned")
    }
}

// ----------------------------------------------------------------------
// Authorization

/// The root ancestors of a capsule: itself for an uploaded capsule, the
/// union of its parents' roots for a derived one.
fn root_ancestors(state: &State, id: &str) -> Result<BTreeSet<String>, ManagerError> {
    let mut roots = BTreeSet::new();
    let mut stack = vec![id.to_string()];
    let mut seen = BTreeSet::new();
    while let Some(current) = stack.pop() {
        if !seen.insert(current.clone()) {
            continue;
        }
        let capsule = state.capsules.get(&current).ok_or_else(|| ManagerError::StoreCorrupt {
            detail: format!("lineage references unknown capsule {current}"),
        })?;
        if capsule.lineage.is_empty() {
            roots.insert(current);
        } else {
            stack.extend(capsule.lineage.iter().map(|l| l.parent.clone()));
        }
    }
    Ok(roots)
}

/// Checks that `analyst` holds grants covering every root ancestor of every
/// target capsule (each grant also naming `required_purpose`, when given)
/// and returns the union of the covering grants' roles and purposes.
fn authorize(
    state: &State,
    analyst: &str,
    targets: &[String],
    required_purpose: Option<&str>,
) -> Result<Authorization, ManagerError> {
    let mut authz = Authorization::default();
    for target in targets {
        if !state.capsules.contains_key(target) {
            return Err(ManagerError::NotFound { kind: "capsule", id: target.clone() });
        }
        for root in root_ancestors(state, target)? {
            let mut covered = false;
            for grant in state.grants.values() {
                if grant.analyst != analyst {
                    continue;
                }
                if let Some(p) = required_purpose {
                    if !grant.purposes.contains(p) {
                        continue;
                    }
                }
                let in_scope = match &grant.scope {
                    GrantScope::All => {
                        state.capsules.get(&root).is_some_and(|c| c.owner == grant.owner)
                    }
                    GrantScope::Capsules(ids) => ids.contains(&root),
                };
                if in_scope {
                    covered = true;
                    authz.roles.extend(grant.roles.iter().cloned());
                    authz.purposes.extend(grant.purposes.iter().cloned());
                }
            }
            if !covered {
                let why = match required_purpose {
                    Some(p) => format!(
                        "no grant covering capsule {target} (root {root}) authorizes purpose {p:?}"
                    ),
                    None => format!("no grant covers capsule {target} (root {root})"),
                };
                return Err(ManagerError::NotAuthorized {
                    analyst: analyst.to_string(),
                    detail: why,
                });
            }
        }
    }
    Ok(authz)
}

// ----------------------------------------------------------------------
// Content addressing

/// Associated data binding a payload to its policy and lineage.
fn capsule_aad(policy: &Policy, lineage: &[LineageEntry]) -> Vec<u8> {
    let mut aad = policy.to_string().into_bytes();
    aad.push(0);
    aad.extend(serde_json::to_string(lineage).expect("lineage serializes").into_bytes());
    aad
}

/// Content-derived capsule id: SHA-256 over ciphertext, canonical policy
/// text, and lineage serialization.
fn capsule_id(ciphertext: &[u8], policy: &Policy, lineage: &[LineageEntry]) -> String {
    let mut h = Sha256::new();
    h.update(ciphertext);
    h.update(policy.to_string().as_bytes());
    h.update(serde_json::to_string(lineage).expect("lineage serializes").as_bytes());
    hex::encode(h.finalize())
}

/// Default execution seed for a job: the first eight bytes of the SHA-256
/// of its id.
fn seed_from_job_id(id: &str) -> u64 {
    let digest = Sha256::digest(id.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 8+ bytes"))
}

fn validate_principal(name: &str) -> Result<(), ManagerError> {
    if name.is_empty() || name.chars().any(|c| c.is_whitespace() || c.is_control()) {
        return Err(ManagerError::UnknownPrincipal { principal: name.to_string() });
    }
    if name == MANAGER_PRINCIPAL {
        return Err(ManagerError::NotAuthorized {
            analyst: name.to_string(),
            detail: format!("{MANAGER_PRINCIPAL:?} is reserved for the store itself"),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    const CSV: &str = "date,merchant,category,amount\n2024-01-02,m1,food,12.5\n2024-01-03,m2,travel,80.0\n2024-01-04,m1,food,7.25\n";
    const POLICY: &str = "ALLOW REDACT merchant AND PRIVACY AGGREGATE(2)";

    fn manager() -> (TempDir, Manager) {
        let dir = tempfile::tempdir().unwrap();
        let m = Manager::open(dir.path()).unwrap();
        (dir, m)
    }

    fn key(b: u8) -> KeyBytes {
        [b; 32]
    }

    fn upload(m: &Manager, policy: &str) -> String {
        m.create_capsule("alice", CSV.as_bytes(), policy, &key(1)).unwrap()
    }

    #[test]
    fn create_then_owner_open_roundtrips_bytes() {
        let (_dir, m) = manager();
        let id = upload(&m, POLICY);
        assert_eq!(m.open_capsule("alice", &id).unwrap(), CSV.as_bytes());
        let info = m.capsule(&id).unwrap();
        assert_eq!(info.row_count, 3);
        assert_eq!(info.schema.len(), 4);
        assert!(info.lineage.is_empty());
    }

    #[test]
    fn duplicate_upload_is_reported_with_the_same_id() {
        let (_dir, m) = manager();
        let id = upload(&m, POLICY);
        match m.create_capsule("alice", CSV.as_bytes(), POLICY, &key(1)) {
            Err(ManagerError::DuplicateCapsule { id: dup }) => assert_eq!(dup, id),
            other => panic!("expected DuplicateCapsule, got {other:?}"),
        }
        // A different key is different content: new capsule, not a duplicate.
        let other = m.create_capsule("alice", CSV.as_bytes(), POLICY, &key(2)).unwrap();
        assert_ne!(other, id);
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        let (_dir, m) = manager();
        assert!(matches!(
            m.create_capsule("alice", CSV.as_bytes(), "ALLOW NONSENSE", &key(1)),
            Err(ManagerError::PolicySyntax(_))
        ));
        assert!(matches!(
            m.create_capsule("alice", b"a,b\n1", &POLICY.to_string(), &key(1)),
            Err(ManagerError::CsvMalformed(_))
        ));
        assert!(matches!(
            m.create_capsule("manager", CSV.as_bytes(), POLICY, &key(1)),
            Err(ManagerError::NotAuthorized { .. })
        ));
    }

    #[test]
    fn grants_enforce_ownership_and_revocation() {
        let (_dir, m) = manager();
        let id = upload(&m, POLICY);
        assert!(matches!(
            m.grant("mallory", "bob", BTreeSet::new(), BTreeSet::new(), GrantScope::All),
            Err(ManagerError::UnknownPrincipal { .. })
        ));
        let gid = m
            .grant(
                "alice",
                "bob",
                ["doctor".to_string()].into(),
                ["research".to_string()].into(),
                GrantScope::Capsules([id.clone()].into()),
            )
            .unwrap();
        assert!(matches!(
            m.revoke("bob", &gid),
            Err(ManagerError::NotOwner { .. })
        ));
        m.revoke("alice", &gid).unwrap();
        assert!(matches!(m.revoke("alice", &gid), Err(ManagerError::NotFound { .. })));
    }

    #[test]
    fn open_capsule_gates_on_policy_and_grants() {
        let (_dir, m) = manager();
        let gated = m
            .create_capsule("alice", CSV.as_bytes(), "ALLOW ROLE doctor AND PURPOSE treatment", &key(1))
            .unwrap();
        let open_pol = m.create_capsule("alice", CSV.as_bytes(), "EMPTY", &key(1)).unwrap();

        // No grant at all.
        assert!(matches!(
            m.open_capsule("bob", &gated),
            Err(ManagerError::NotAuthorized { .. })
        ));

        // Granted, but without the doctor role: pending with a printed residual.
        let g1 = m
            .grant("alice", "bob", BTreeSet::new(), ["treatment".to_string()].into(), GrantScope::All)
            .unwrap();
        match m.open_capsule("bob", &gated) {
            Err(ManagerError::PolicyPending { residual }) => {
                assert_eq!(residual, "ALLOW ROLE doctor");
            }
            other => panic!("expected PolicyPending, got {other:?}"),
        }
        // An EMPTY policy opens for any granted analyst.
        assert_eq!(m.open_capsule("bob", &open_pol).unwrap(), CSV.as_bytes());

        // With the role, the payload is released.
        m.revoke("alice", &g1).unwrap();
        m.grant(
            "alice",
            "bob",
            ["doctor".to_string()].into(),
            ["treatment".to_string()].into(),
            GrantScope::All,
        )
        .unwrap();
        assert_eq!(m.open_capsule("bob", &gated).unwrap(), CSV.as_bytes());
    }

    const COMPLIANT: &str = r#"df = read_capsule("CAP")
safe = hash_column(df, "merchant")
by_cat = safe.groupby("category").agg({"amount": "mean"})
big = filter_groups(by_cat, min_size=2)
output(big)
"#;

    fn grant_all(m: &Manager) {
        m.grant(
            "alice",
            "bob",
            BTreeSet::new(),
            ["research".to_string()].into(),
            GrantScope::All,
        )
        .unwrap();
    }

    #[test]
    fn compliant_job_releases_plaintext() {
        let (_dir, m) = manager();
        let id = upload(&m, POLICY);
        grant_all(&m);
        let program = COMPLIANT.replace("CAP", &id);
        let job = m
            .run_job("bob", &program, "research", &[id.clone()], Some(7), None)
            .unwrap();
        assert_eq!(job.status, JobStatus::Executed);
        assert_eq!(job.seed, 7);
        let JobResult::Released { outputs } = &job.result else {
            panic!("expected released outputs, got {:?}", job.result);
        };
        let JobOutput::Table { csv } = &outputs["big"] else { panic!("expected a table") };
        assert!(csv.contains("category"), "{csv}");
        assert!(csv.contains("food"), "{csv}");
        assert!(!csv.contains("m1"), "merchant must be hashed: {csv}");
    }

    #[test]
    fn noncompliant_job_returns_residuals_and_seals_a_derived_capsule() {
        let (_dir, m) = manager();
        let id = upload(&m, POLICY);
        grant_all(&m);
        let program = format!("df = read_capsule(\"{id}\")\noutput(df)\n");
        let job = m.run_job("bob", &program, "research", &[id.clone()], None, None).unwrap();
        assert_eq!(job.status, JobStatus::Analyzed);
        let JobResult::Residuals { residuals, derived } = &job.result else {
            panic!("expected residuals, got {:?}", job.result);
        };
        // Untouched data leaves the policy untouched (canonical print order).
        let canonical = Policy::parse(POLICY).unwrap().normalize().to_string();
        assert_eq!(residuals["df"], canonical);
        let derived_id = &derived["df"];
        let capsule = m.capsule(derived_id).unwrap();
        assert_eq!(capsule.owner, MANAGER_PRINCIPAL);
        assert_eq!(capsule.policy.to_string(), canonical);
        assert_eq!(capsule.lineage, vec![LineageEntry { parent: id.clone(), program_hash: job.program_hash.clone() }]);
        assert_eq!(capsule.row_count, 3);
        assert!(capsule.analysis_state.is_some());

        // The analyst cannot open the derived capsule: the residual pends.
        match m.open_capsule("bob", derived_id) {
            Err(ManagerError::PolicyPending { residual }) => assert_eq!(residual, canonical),
            other => panic!("expected PolicyPending, got {other:?}"),
        }
        // Neither can the uploading owner: derived capsules belong to the
        // manager, and alice holds no grant for herself.
        assert!(matches!(
            m.open_capsule("alice", derived_id),
            Err(ManagerError::NotAuthorized { .. })
        ));
    }

    #[test]
    fn follow_up_job_on_a_derived_capsule_finishes_the_work() {
        let (_dir, m) = manager();
        let id = upload(&m, POLICY);
        grant_all(&m);
        // Step 1: pseudonymize only — AGGREGATE(2) still pends.
        let step1 = format!(
            "df = read_capsule(\"{id}\")\nsafe = hash_column(df, \"merchant\")\noutput(safe)\n"
        );
        let job1 = m.run_job("bob", &step1, "research", &[id.clone()], None, None).unwrap();
        assert_eq!(job1.status, JobStatus::Analyzed);
        let JobResult::Residuals { residuals, derived } = &job1.result else { panic!() };
        assert_eq!(residuals["safe"], "ALLOW PRIVACY AGGREGATE(2)");
        let mid = derived["safe"].clone();

        // Step 2: finish the aggregation on the derived capsule. The grant
        // covers it through its root ancestor.
        let step2 = format!(
            "df = read_capsule(\"{mid}\")\nby = df.groupby(\"category\").agg({{\"amount\": \"mean\"}})\nbig = filter_groups(by, min_size=2)\noutput(big)\n"
        );
        let job2 = m.run_job("bob", &step2, "research", &[mid.clone()], None, None).unwrap();
        assert_eq!(job2.status, JobStatus::Executed, "result: {:?}", job2.result);
        let JobResult::Released { outputs } = &job2.result else { panic!() };
        assert!(matches!(&outputs["big"], JobOutput::Table { .. }));
    }

    #[test]
    fn processing_is_at_most_once() {
        let (_dir, m) = manager();
        let id = upload(&m, POLICY);
        grant_all(&m);
        let program = format!("df = read_capsule(\"{id}\")\noutput(df)\n");
        let jid = m
            .submit_job("bob", &program, "research", &[id.clone()], None, None)
            .unwrap();
        let first = m.process_job(&jid).unwrap();
        let again = m.process_job(&jid).unwrap();
        assert_eq!(first, again, "reprocessing returns the same record");
        // Only one derived capsule was created for the single output.
        let derived: Vec<_> = m.capsules().into_iter().filter(|c| c.is_derived()).collect();
        assert_eq!(derived.len(), 1);
    }

    #[test]
    fn authorization_failures_reject_early_or_late() {
        let (_dir, m) = manager();
        let id = upload(&m, POLICY);
        let id2 = m
            .create_capsule("carol-owner", CSV.as_bytes(), POLICY, &key(3))
            .unwrap();
        grant_all(&m);

        // Undeclared input: declared set authorized, program reads more.
        let sneaky = format!(
            "a = read_capsule(\"{id}\")\nb = read_capsule(\"{id2}\")\nj = join(a, b, on=\"category\")\noutput(j)\n"
        );
        let job = m.run_job("bob", &sneaky, "research", &[id.clone()], None, None).unwrap();
        assert_eq!(job.status, JobStatus::Rejected);
        let JobResult::Error { code, .. } = &job.result else { panic!() };
        assert_eq!(*code, ErrorCode::NotAuthorized);

        // Declared but ungranted input fails at submission.
        assert!(matches!(
            m.submit_job("bob", &sneaky, "research", &[id.clone(), id2.clone()], None, None),
            Err(ManagerError::NotAuthorized { .. })
        ));

        // Purpose not covered by any grant fails at submission.
        assert!(matches!(
            m.submit_job("bob", &sneaky, "billing", &[id.clone()], None, None),
            Err(ManagerError::NotAuthorized { .. })
        ));

        // Unparseable program is rejected with diagnostics at processing.
        let bad = m.run_job("bob", "df = read_capsule(\n", "research", &[id.clone()], None, None);
        let job = bad.unwrap();
        assert_eq!(job.status, JobStatus::Rejected);
        let JobResult::Error { code, message } = &job.result else { panic!() };
        assert_eq!(*code, ErrorCode::ParseFailed);
        assert!(message.starts_with("1:"), "diagnostics carry a position: {message}");
    }

    #[test]
    fn store_survives_restart() {
        let dir = tempfile::tempdir().unwrap();
        let (id, jid);
        {
            let m = Manager::open(dir.path()).unwrap();
            id = m.create_capsule("alice", CSV.as_bytes(), POLICY, &key(1)).unwrap();
            grant_all(&m);
            let program = format!("df = read_capsule(\"{id}\")\noutput(df)\n");
            jid = m
                .submit_job("bob", &program, "research", &[id.clone()], None, None)
                .unwrap();
            m.process_job(&jid).unwrap();
        }
        let m = Manager::open(dir.path()).unwrap();
        assert_eq!(m.open_capsule("alice", &id).unwrap(), CSV.as_bytes());
        let job = m.job(&jid).unwrap();
        assert_eq!(job.status, JobStatus::Analyzed);
        let JobResult::Residuals { derived, .. } = &job.result else { panic!() };
        // The derived capsule's key replays too: a follow-up job can read it.
        let step2 = format!(
            "df = read_capsule(\"{}\")\nsafe = hash_column(df, \"merchant\")\nby = safe.groupby(\"category\").agg({{\"amount\": \"mean\"}})\nbig = filter_groups(by, min_size=2)\noutput(big)\n",
            derived["df"]
        );
        let job2 = m.run_job("bob", &step2, "research", &[derived["df"].clone()], None, None).unwrap();
        assert_eq!(job2.status, JobStatus::Executed, "result: {:?}", job2.result);
    }

    #[test]
    fn default_seed_is_stable_per_job_id() {
        let (_dir, m) = manager();
        let id = upload(&m, "EMPTY");
        grant_all(&m);
        let program = format!("df = read_capsule(\"{id}\")\noutput(df)\n");
        let j1 = m.run_job("bob", &program, "research", &[id.clone()], None, None).unwrap();
        assert_eq!(j1.seed, seed_from_job_id(&j1.id));
    }
}
