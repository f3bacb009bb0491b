//! Phase state machine: project setup, the curation loop, cycle closing
//! and gated phase transitions.

mod phase;
pub mod replay;
pub mod stats;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use phase::{PhaseConfig, PhaseId, STAGE_LABELS};
pub use stats::{compute_stats, PhaseStats, ProjectStats, ReleaseStats};

use crate::artefact::{
    self, Artefact, DocumentRef, Metadata, Narrative, ObjectStore, ResearcherId, StoredObject,
};
use crate::consensus::{GateConfig, SubjectKind};
use crate::error::{Error, Result};
use crate::store::{Commit, CommitKind, Release, Repository, MAIN};
use crate::{ActionRecordId, ArtefactId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Researcher {
    pub id: ResearcherId,
    #[serde(default)]
    pub display_name: String,
    /// 0 is the most senior level.
    #[serde(default)]
    pub hierarchy_level: u32,
}

impl Researcher {
    pub fn new(id: &str, display_name: &str, hierarchy_level: u32) -> Self {
        Researcher {
            id: ResearcherId::new(id),
            display_name: display_name.to_owned(),
            hierarchy_level,
        }
    }
}

/// Persistent project state, stored as `config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProjectConfig {
    pub project: String,
    pub phases: PhaseConfig,
    pub roster: Vec<Researcher>,
    /// Index into `phases`.
    pub current_phase: usize,
    pub current_cycle: u32,
    pub defaults: GateConfig,
}

impl ProjectConfig {
    pub fn new(project: &str, phases: PhaseConfig, roster: Vec<Researcher>, defaults: GateConfig) -> Self {
        ProjectConfig {
            project: project.to_owned(),
            phases,
            roster,
            current_phase: 0,
            current_cycle: 1,
            defaults,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.project.trim().is_empty() {
            return Err(Error::InvalidName(self.project.clone()));
        }
        if self.roster.is_empty() {
            return Err(Error::InvalidRoster("roster is empty".into()));
        }
        for (i, r) in self.roster.iter().enumerate() {
            if r.id.as_str().is_empty() || r.id.as_str().chars().any(char::is_whitespace) {
                return Err(Error::InvalidRoster(format!("invalid researcher id {:?}", r.id.as_str())));
            }
            if self.roster[..i].iter().any(|o| o.id == r.id) {
                return Err(Error::InvalidRoster(format!("{} listed twice", r.id)));
            }
        }
        if self.current_phase >= self.phases.len() || self.current_cycle == 0 {
            return Err(Error::InvalidPhaseConfig("phase or cycle pointer out of range".into()));
        }
        self.defaults.validate()
    }

    pub fn member(&self, id: &ResearcherId) -> Option<&Researcher> {
        self.roster.iter().find(|r| r.id == *id)
    }

    pub fn is_last_phase(&self) -> bool {
        self.current_phase + 1 == self.phases.len()
    }
}

/// Initialises a repository for a new project at `path`.
pub fn create_project(path: &Path, config: ProjectConfig) -> Result<Repository> {
    Repository::init(path, config)
}

impl Repository {
    /// One pass of the curation loop: store `artefact` unless already
    /// present, attach `metadata` in order, attach the optional narrative
    /// with the action it interprets, stage the result at `path` and commit.
    pub fn run_curation_step(
        &mut self,
        artefact: &Artefact,
        metadata: &[Metadata],
        ritl: Option<(&Narrative, &ActionRecordId)>,
        path: &str,
        author: &ResearcherId,
    ) -> Result<Commit> {
        self.require_member(author)?;
        self.write_txn(|r| {
            let id = artefact.id();
            let mut current = if r.objects().has(&id)? {
                id
            } else {
                r.store_artefact(artefact)?
            };
            for entry in metadata {
                current = artefact::add_metadata(r.objects_mut(), entry.clone(), &current)?.0;
            }
            if let Some((narrative, action)) = ritl {
                current = artefact::add_ritl(r.objects_mut(), narrative, action, &current)?.0;
            }
            r.restage(path, &current)?;
            r.commit_internal(CommitKind::Change, &format!("curate {path}"), author)
        })
    }

    /// Closes the current cycle under an accepted CYCLE_CLOSE round on the
    /// head commit. Staged changes are included in the closing commit.
    pub fn close_cycle(&mut self, round: &str, author: &ResearcherId) -> Result<Commit> {
        let kind = self.round(round)?.subject.kind;
        if kind != SubjectKind::CycleClose {
            return Err(Error::WrongSubjectKind {
                expected: SubjectKind::CycleClose.to_string(),
                found: kind.to_string(),
            });
        }
        let cycle = self.config().current_cycle;
        self.commit(&format!("close cycle {cycle}"), author, Some(round))
    }

    /// Leaves the current phase under an accepted PHASE_ADVANCE round, or a
    /// RELEASE round when `release` names a tag, targeting the phase's
    /// `main` head. In the last phase only a release is possible and the
    /// phase pointer stays put.
    pub fn advance_phase(
        &mut self,
        round: &str,
        release: Option<&str>,
        author: &ResearcherId,
    ) -> Result<Option<Release>> {
        self.require_member(author)?;
        self.write_txn(|r| {
            let kind = if release.is_some() {
                SubjectKind::Release
            } else {
                SubjectKind::PhaseAdvance
            };
            let gate = r.accepted_round(round, &[kind])?;
            let phase = r.current_phase();
            let head = r.branch_head(&phase, MAIN)?;
            r.check_target(&gate.0, head.as_ref())?;
            let last = r.config().is_last_phase();
            if last && release.is_none() {
                return Err(Error::LastPhase);
            }
            let written = match release {
                Some(tag) => Some(r.release(tag, round)?),
                None => None,
            };
            if last {
                return Ok(written);
            }

            let snapshot = r.head_snapshot_of(&phase, MAIN)?;
            r.checkout(MAIN)?;
            let next_index = r.config().current_phase + 1;
            let next = r.config().phases.get(next_index).expect("not last").clone();
            r.append_commit(
                CommitKind::PhaseAdvance,
                &format!("advance {phase} -> {next}"),
                author,
                &snapshot,
                None,
                Some(gate),
            )?;
            let config = r.config_mut();
            config.current_phase = next_index;
            config.current_cycle = 1;
            r.save_config()?;
            r.open_phase(&next, author)?;
            Ok(written)
        })
    }

    /// Creates an artefact around `content`, with manual `metadata` by
    /// `author`, and stages it at `path`.
    pub fn add_document(
        &mut self,
        path: &str,
        content: DocumentRef,
        metadata: &[(String, String)],
        author: &ResearcherId,
    ) -> Result<ArtefactId> {
        self.write_txn(|r| {
            let mut a = r.new_artefact(content, author)?;
            for (key, value) in metadata {
                a.meta_data.push(Metadata::manual(key, value, author.clone(), a.timestamp));
            }
            r.stage_add(&a, path)
        })
    }

    /// Adds (or with `update`, replaces) a metadata entry on the artefact at
    /// `path` and stages the new version there.
    pub fn annotate_path(
        &mut self,
        path: &str,
        key: &str,
        value: &str,
        author: &ResearcherId,
        update: bool,
    ) -> Result<ArtefactId> {
        self.require_member(author)?;
        self.write_txn(|r| {
            let id = r.resolve_path(path)?;
            let floor = r.artefact(&id)?.timestamp;
            let entry = Metadata::manual(key, value, author.clone(), r.tick_after(Some(floor)));
            let (next, _) = if update {
                artefact::update_metadata(r.objects_mut(), entry, &id)?
            } else {
                artefact::add_metadata(r.objects_mut(), entry, &id)?
            };
            r.restage(path, &next)?;
            Ok(next)
        })
    }

    pub(crate) fn head_snapshot_of(&self, phase: &PhaseId, branch: &str) -> Result<crate::Snapshot> {
        match self.branch_head(phase, branch)? {
            Some(h) => self.commit_snapshot(&h),
            None => Ok(crate::Snapshot::default()),
        }
    }
}
