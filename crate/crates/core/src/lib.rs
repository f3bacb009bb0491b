//! Consensus-gated version control for research artefacts.
//!
//! Artefacts are immutable, content-addressed records. Every state change
//! that matters to a research team (closing a cycle, advancing a phase,
//! merging branches, releasing a curated collection) is authorised by a
//! vote round whose verdict is recomputed from the stored ballots.

pub mod artefact;
pub mod audit;
pub mod canonical;
pub mod consensus;
pub mod error;
pub mod store;
pub mod views;
pub mod workflow;

pub use artefact::{
    ActionRecord, Artefact, DocumentRef, Metadata, MetadataOrigin, Narrative, OperationDescriptor,
    ProjectPhase, ResearcherId,
};
pub use canonical::{Digest, Timestamp};
pub use consensus::{
    DecisionSubject, GateConfig, GateOverrides, PreferenceBallot, RoundState, Strategy, SubjectKind, Verdict,
    VoteRound,
};
pub use error::{Error, Result};
pub use store::{Branch, Commit, CommitKind, Release, Repository, Snapshot, Tag};
pub use workflow::{PhaseConfig, PhaseId, PhaseStats, ProjectConfig, Researcher};

/// Preference score type used for ballots and persisted rounds.
pub type Pref = f64;

/// Exact preference arithmetic, for reproducing hand-derived consensus values.
pub type ExactPref = num_rational::Ratio<i64>;

/// Identifier of an artefact version.
pub type ArtefactId = Digest;
/// Identifier of a stored narrative.
pub type NarrativeId = Digest;
/// Identifier of a stored action record.
pub type ActionRecordId = Digest;
/// Identifier of a commit.
pub type CommitId = Digest;
/// Identifier of a collection snapshot.
pub type SnapshotId = Digest;
