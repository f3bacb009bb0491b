use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::artefact::{ResearcherId, StoredObject};
use crate::canonical::{Digest, Timestamp};
use crate::workflow::PhaseId;
use crate::{ArtefactId, CommitId, NarrativeId, SnapshotId};

/// Collection of artefacts at one point in history: logical path to
/// artefact version.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub entries: BTreeMap<String, ArtefactId>,
}

impl StoredObject for Snapshot {
    const KIND: &'static str = "snapshot";
}

impl Snapshot {
    pub fn contains_artefact(&self, id: &ArtefactId) -> bool {
        self.entries.values().any(|v| v == id)
    }

    pub fn path_of(&self, id: &ArtefactId) -> Option<&str> {
        self.entries
            .iter()
            .find_map(|(p, v)| (v == id).then_some(p.as_str()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries whose path starts with `prefix`.
    pub fn filtered(&self, prefix: &str) -> Snapshot {
        Snapshot {
            entries: self
                .entries
                .iter()
                .filter(|(p, _)| p.starts_with(prefix))
                .map(|(p, v)| (p.clone(), v.clone()))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum CommitKind {
    /// First commit of a phase.
    Root,
    Change,
    /// Head of a freshly forked branch.
    Branch,
    Tag,
    CycleClose,
    PhaseAdvance,
    Merge,
}

impl CommitKind {
    /// Kinds that may only be written under an accepted vote round.
    pub fn is_gated(&self) -> bool {
        matches!(
            self,
            CommitKind::CycleClose | CommitKind::PhaseAdvance | CommitKind::Merge
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Commit {
    pub parent_ids: Vec<CommitId>,
    pub snapshot: SnapshotId,
    pub message: String,
    pub author: ResearcherId,
    pub timestamp: Timestamp,
    pub phase: PhaseId,
    pub cycle: u32,
    pub kind: CommitKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consensus_round_id: Option<String>,
    /// Digest of the closed round file, pinning the ballots this commit
    /// was authorised by.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consensus_round_digest: Option<Digest>,
}

impl StoredObject for Commit {
    const KIND: &'static str = "commit";
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Branch {
    pub name: String,
    pub phase: PhaseId,
    pub head: CommitId,
}

/// A consensus-validated, immutable tagged snapshot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Release {
    pub tag: String,
    pub commit: CommitId,
    pub phase: PhaseId,
    pub consensus_round_id: String,
    pub consensus_round_digest: Digest,
    pub timestamp: Timestamp,
}

/// Request to attach a stored narrative to an artefact in the head snapshot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tag {
    pub target: ArtefactId,
    pub narrative: NarrativeId,
    pub author: ResearcherId,
    pub timestamp: Timestamp,
}

/// Pending changes for one phase.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseStage {
    #[serde(default)]
    pub adds: BTreeMap<String, ArtefactId>,
    #[serde(default)]
    pub removes: BTreeSet<String>,
}

impl PhaseStage {
    pub fn is_empty(&self) -> bool {
        self.adds.is_empty() && self.removes.is_empty()
    }

    pub fn apply(&self, base: &Snapshot) -> Snapshot {
        let mut entries = base.entries.clone();
        for p in &self.removes {
            entries.remove(p);
        }
        for (p, id) in &self.adds {
            entries.insert(p.clone(), id.clone());
        }
        Snapshot { entries }
    }
}

/// Contents of `STAGE.json`: staged changes per phase.
pub type Staging = BTreeMap<PhaseId, PhaseStage>;
