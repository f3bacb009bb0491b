//! Content-addressed object store and per-phase commit DAG.
//!
//! A repository lives in a `.curator/` directory:
//!
//! ```text
//! .curator/config.json                           project, phases, roster, gate defaults
//! .curator/objects/ab/abcdef...                  canonical JSON or raw blob
//! .curator/refs/phases/<phase>/branches/<name>   head commit id + "\n"
//! .curator/refs/releases/<tag>                   release record
//! .curator/rounds/<id>.json                      vote round with ballots
//! .curator/STAGE.json                            staged changes per phase
//! .curator/HEAD                                  "<phase>/<branch>\n"
//! .curator/lock                                  writer lock
//! ```
//!
//! Mutating operations take the writer lock for their duration. Objects are
//! only ever created, never rewritten.

mod disk;
mod model;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

pub use disk::{DiskObjects, Layout, RepoLock, REPO_DIR};
pub use model::{Branch, Commit, CommitKind, PhaseStage, Release, Snapshot, Staging, Tag};

use crate::artefact::{
    self, get_object, put_object, Artefact, DocumentRef, Narrative, ObjectStore, ResearcherId,
};
use crate::canonical::{is_canonical, to_canonical_bytes, Digest, Timestamp};
use crate::consensus::{DecisionSubject, GateConfig, SubjectKind, Verdict, VoteRound};
use crate::error::{Error, Result};
use crate::workflow::{PhaseId, ProjectConfig};
use crate::{ActionRecordId, ArtefactId, CommitId};

use disk::{read_optional, write_atomic};

pub const MAIN: &str = "main";

/// Source of timestamps for new records.
#[derive(Debug, Clone, Copy)]
pub enum Clock {
    System,
    /// Fixed time set by a replay script; successive records still get
    /// strictly increasing timestamps.
    Scripted(Timestamp),
}

#[derive(Debug)]
pub struct Repository {
    root: PathBuf,
    layout: Layout,
    objects: DiskObjects,
    config: ProjectConfig,
    clock: Clock,
    last_time: Option<Timestamp>,
    lock: Option<RepoLock>,
}

pub(crate) fn check_name(name: &str) -> Result<()> {
    let ok = !name.is_empty()
        && !name.starts_with('.')
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidName(name.to_owned()))
    }
}

fn check_path(path: &str) -> Result<()> {
    let ok = !path.is_empty()
        && !path.starts_with('/')
        && !path.ends_with('/')
        && path.split('/').all(|seg| !seg.is_empty() && seg != "." && seg != "..")
        && !path.chars().any(char::is_control);
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidName(path.to_owned()))
    }
}

/// Accepts a local path or a `file://` URL.
fn source_path(source: &str) -> Result<PathBuf> {
    if let Some(rest) = source.strip_prefix("file://") {
        return Ok(PathBuf::from(rest));
    }
    if source.contains("://") {
        return Err(Error::SourceUnavailable(format!(
            "{source}: only local paths and file:// URLs are supported"
        )));
    }
    Ok(PathBuf::from(source))
}

impl Repository {
    /// Creates the repository layout with the first phase active and a root
    /// commit on its `main` branch.
    pub fn init(root: &Path, config: ProjectConfig) -> Result<Self> {
        Self::init_with_clock(root, config, Clock::System)
    }

    /// Like [`Repository::init`], stamping the root commit with `at`.
    pub fn init_at(root: &Path, config: ProjectConfig, at: Timestamp) -> Result<Self> {
        Self::init_with_clock(root, config, Clock::Scripted(at))
    }

    fn init_with_clock(root: &Path, config: ProjectConfig, clock: Clock) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(root);
        if layout.dir.exists() {
            return Err(Error::AlreadyInitialized(root.to_path_buf()));
        }
        fs::create_dir_all(&layout.dir).map_err(|e| Error::io(&layout.dir, e))?;
        for dir in [layout.objects(), layout.phases(), layout.releases(), layout.rounds()] {
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        let mut repo = Repository {
            root: root.to_path_buf(),
            objects: DiskObjects::new(layout.objects()),
            layout,
            config,
            clock,
            last_time: None,
            lock: None,
        };
        repo.write_txn(|r| {
            r.save_config()?;
            r.save_staging(&Staging::new())?;
            let phase = r.current_phase();
            let author = r.config.roster[0].id.clone();
            r.open_phase(&phase, &author)
        })?;
        Ok(repo)
    }

    pub fn open(root: &Path) -> Result<Self> {
        let layout = Layout::new(root);
        let bytes = read_optional(&layout.config())?
            .ok_or_else(|| Error::NotARepository(root.to_path_buf()))?;
        let config: ProjectConfig = serde_json::from_slice(&bytes)?;
        let mut repo = Repository {
            root: root.to_path_buf(),
            objects: DiskObjects::new(layout.objects()),
            layout,
            config,
            clock: Clock::System,
            last_time: None,
            lock: None,
        };
        repo.last_time = repo.latest_head_time()?;
        Ok(repo)
    }

    /// Opens the repository at `start` or the nearest ancestor holding one.
    pub fn discover(start: &Path) -> Result<Self> {
        let mut cur = Some(start);
        while let Some(dir) = cur {
            if dir.join(REPO_DIR).join("config.json").is_file() {
                return Self::open(dir);
            }
            cur = dir.parent();
        }
        Err(Error::NotARepository(start.to_path_buf()))
    }

    /// Copies a repository and re-verifies every object hash in the copy.
    pub fn clone_from(source: &str, dest: &Path) -> Result<Self> {
        let src_root = source_path(source)?;
        let src = Layout::new(&src_root);
        if !src.config().is_file() {
            return Err(Error::SourceUnavailable(format!(
                "{} is not a repository",
                src_root.display()
            )));
        }
        let dst = Layout::new(dest);
        if dst.dir.exists() {
            return Err(Error::AlreadyInitialized(dest.to_path_buf()));
        }
        let copied = (|| -> Result<Self> {
            for entry in walkdir::WalkDir::new(&src.dir) {
                let entry = entry.map_err(|e| Error::SourceUnavailable(e.to_string()))?;
                let rel = entry.path().strip_prefix(&src.dir).expect("walk stays inside");
                let target = dst.dir.join(rel);
                if entry.file_type().is_dir() {
                    fs::create_dir_all(&target).map_err(|e| Error::io(&target, e))?;
                } else if entry.path() != src.lock() && !disk::is_temp_file(entry.path()) {
                    fs::copy(entry.path(), &target).map_err(|e| Error::io(&target, e))?;
                }
            }
            let repo = Self::open(dest)?;
            repo.verify()?;
            Ok(repo)
        })();
        if copied.is_err() {
            let _ = fs::remove_dir_all(&dst.dir);
        }
        copied
    }

    /// Re-hashes every object and checks that every ref resolves.
    pub fn verify(&self) -> Result<usize> {
        let n = self.objects.verify_all()?;
        for phase in self.config.phases.phases() {
            for branch in self.branches(phase)? {
                self.commit_object(&branch.head)?;
            }
        }
        for release in self.releases()? {
            self.commit_object(&release.commit)?;
        }
        Ok(n)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn config(&self) -> &ProjectConfig {
        &self.config
    }

    pub(crate) fn config_mut(&mut self) -> &mut ProjectConfig {
        &mut self.config
    }

    pub fn objects(&self) -> &DiskObjects {
        &self.objects
    }

    pub fn objects_mut(&mut self) -> &mut DiskObjects {
        &mut self.objects
    }

    pub fn current_phase(&self) -> PhaseId {
        self.config
            .phases
            .get(self.config.current_phase)
            .expect("current phase index valid")
            .clone()
    }

    pub fn set_clock(&mut self, clock: Clock) {
        self.clock = clock;
    }

    /// Next record timestamp: the clock's time, bumped so timestamps never
    /// repeat or go backwards within this handle.
    pub fn tick(&mut self) -> Timestamp {
        self.tick_after(None)
    }

    pub(crate) fn tick_after(&mut self, floor: Option<Timestamp>) -> Timestamp {
        let now = match self.clock {
            Clock::System => Timestamp::now(),
            Clock::Scripted(t) => t,
        };
        let mut t = now;
        for bound in [self.last_time, floor].into_iter().flatten() {
            if t <= bound {
                t = bound.plus_millis(1);
            }
        }
        self.last_time = Some(t);
        t
    }

    /// Holds the writer lock until [`Repository::unlock`].
    pub fn lock(&mut self) -> Result<()> {
        if self.lock.is_none() {
            self.lock = Some(RepoLock::acquire(&self.layout)?);
            self.reload_config()?;
        }
        Ok(())
    }

    pub fn unlock(&mut self) {
        self.lock = None;
    }

    /// Runs `f` under the writer lock, reusing it when already held.
    pub(crate) fn write_txn<T>(&mut self, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        if self.lock.is_some() {
            return f(self);
        }
        self.lock()?;
        let out = f(self);
        self.unlock();
        out
    }

    fn reload_config(&mut self) -> Result<()> {
        if let Some(bytes) = read_optional(&self.layout.config())? {
            self.config = serde_json::from_slice(&bytes)?;
        }
        Ok(())
    }

    pub(crate) fn save_config(&self) -> Result<()> {
        write_atomic(&self.layout.config(), &to_canonical_bytes(&self.config)?)
    }

    fn latest_head_time(&self) -> Result<Option<Timestamp>> {
        let phase = self.current_phase();
        let mut latest = None;
        for b in self.branches(&phase)? {
            let t = self.commit_object(&b.head)?.timestamp;
            latest = latest.max(Some(t));
        }
        Ok(latest)
    }

    pub fn require_member(&self, who: &ResearcherId) -> Result<()> {
        if self.config.member(who).is_some() {
            Ok(())
        } else {
            Err(Error::UnknownResearcher(who.to_string()))
        }
    }

    // ---- objects ----------------------------------------------------------

    pub fn artefact(&self, id: &ArtefactId) -> Result<Artefact> {
        get_object(&self.objects, id)
    }

    pub fn commit_object(&self, id: &CommitId) -> Result<Commit> {
        get_object(&self.objects, id).map_err(|e| match e {
            Error::UnresolvedReference(id) => Error::UnknownCommit(id),
            other => other,
        })
    }

    pub fn snapshot(&self, id: &Digest) -> Result<Snapshot> {
        get_object(&self.objects, id)
    }

    pub fn commit_snapshot(&self, id: &CommitId) -> Result<Snapshot> {
        let commit = self.commit_object(id)?;
        self.snapshot(&commit.snapshot)
    }

    pub fn put_blob(&mut self, bytes: &[u8], media_type: &str) -> Result<DocumentRef> {
        let digest = self.objects.put(bytes)?;
        Ok(DocumentRef::Blob {
            digest,
            media_type: media_type.to_owned(),
            size: bytes.len() as u64,
        })
    }

    pub fn store_artefact(&mut self, artefact: &Artefact) -> Result<ArtefactId> {
        artefact::store_artefact(&mut self.objects, artefact)
    }

    /// Builds a new artefact in the current phase, timestamped now.
    pub fn new_artefact(&mut self, content: DocumentRef, producer: &ResearcherId) -> Result<Artefact> {
        self.require_member(producer)?;
        let now = self.tick();
        artefact::create_artefact(
            content,
            producer.clone(),
            &self.current_phase(),
            &self.config.project,
            &self.config.phases,
            now,
        )
    }

    // ---- refs -------------------------------------------------------------

    /// `(phase, branch)` named by HEAD.
    pub fn head_ref(&self) -> Result<(PhaseId, String)> {
        let bytes = read_optional(&self.layout.head())?
            .ok_or_else(|| Error::NotARepository(self.root.clone()))?;
        let text = String::from_utf8_lossy(&bytes);
        let (phase, branch) = text
            .trim_end()
            .split_once('/')
            .ok_or_else(|| Error::CorruptObject {
                id: "HEAD".into(),
                reason: format!("malformed HEAD {text:?}"),
            })?;
        Ok((phase.parse()?, branch.to_owned()))
    }

    fn set_head(&self, phase: &PhaseId, branch: &str) -> Result<()> {
        write_atomic(&self.layout.head(), format!("{phase}/{branch}\n").as_bytes())
    }

    pub fn branch_head(&self, phase: &PhaseId, name: &str) -> Result<Option<CommitId>> {
        let Some(bytes) = read_optional(&self.layout.branch(&phase.to_string(), name))? else {
            return Ok(None);
        };
        let text = String::from_utf8_lossy(&bytes);
        Ok(Some(text.trim_end().parse()?))
    }

    fn set_branch(&self, phase: &PhaseId, name: &str, head: &CommitId) -> Result<()> {
        let path = self.layout.branch(&phase.to_string(), name);
        write_atomic(&path, format!("{head}\n").as_bytes())
    }

    pub fn branches(&self, phase: &PhaseId) -> Result<Vec<Branch>> {
        let dir = self.layout.branches(&phase.to_string());
        let mut out = Vec::new();
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
            Err(e) => return Err(Error::io(&dir, e)),
        };
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            if disk::is_temp_file(&entry.path()) {
                continue;
            }
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Some(head) = self.branch_head(phase, &name)? {
                out.push(Branch {
                    name,
                    phase: phase.clone(),
                    head,
                });
            }
        }
        out.sort_by(|a, b| a.name.cmp(&b.name));
        Ok(out)
    }

    /// Head commit of the HEAD branch, if the branch has any history.
    pub fn head_commit(&self) -> Result<Option<CommitId>> {
        let (phase, branch) = self.head_ref()?;
        self.branch_head(&phase, &branch)
    }

    /// Head snapshot of the HEAD branch, empty when there is no history.
    pub fn head_snapshot(&self) -> Result<Snapshot> {
        match self.head_commit()? {
            Some(id) => self.commit_snapshot(&id),
            None => Ok(Snapshot::default()),
        }
    }

    /// Resolves `name` or `phase/name` to a branch.
    pub fn resolve_branch(&self, spec: &str) -> Result<Branch> {
        let (phase, name) = match spec.split_once('/') {
            Some((p, n)) => (p.parse()?, n.to_owned()),
            None => (self.head_ref()?.0, spec.to_owned()),
        };
        let head = self
            .branch_head(&phase, &name)?
            .ok_or_else(|| Error::UnknownBranch(format!("{phase}/{name}")))?;
        Ok(Branch { name, phase, head })
    }

    // ---- staging ----------------------------------------------------------

    pub fn staging(&self) -> Result<Staging> {
        match read_optional(&self.layout.stage())? {
            Some(bytes) => Ok(serde_json::from_slice(&bytes)?),
            None => Ok(Staging::new()),
        }
    }

    pub fn phase_stage(&self, phase: &PhaseId) -> Result<PhaseStage> {
        Ok(self.staging()?.remove(phase).unwrap_or_default())
    }

    fn save_staging(&self, staging: &Staging) -> Result<()> {
        let pruned: Staging = staging
            .iter()
            .filter(|(_, s)| !s.is_empty())
            .map(|(p, s)| (p.clone(), s.clone()))
            .collect();
        write_atomic(&self.layout.stage(), &to_canonical_bytes(&pruned)?)
    }

    fn update_stage<T>(&mut self, f: impl FnOnce(&mut PhaseStage) -> Result<T>) -> Result<T> {
        let phase = self.current_phase();
        let mut staging = self.staging()?;
        let out = f(staging.entry(phase).or_default())?;
        self.save_staging(&staging)?;
        Ok(out)
    }

    /// Stores `artefact` (with the objects it references already present)
    /// and stages it at `path`.
    pub fn stage_add(&mut self, artefact: &Artefact, path: &str) -> Result<ArtefactId> {
        let ids = self.stage_add_many(std::slice::from_ref(&(artefact.clone(), path.to_owned())))?;
        Ok(ids.into_iter().next().expect("one id per entry"))
    }

    /// Stores and stages a batch of artefacts with a single stage write.
    /// Nothing is staged if any entry fails.
    pub fn stage_add_many(&mut self, entries: &[(Artefact, String)]) -> Result<Vec<ArtefactId>> {
        for (_, path) in entries {
            check_path(path)?;
        }
        self.write_txn(|r| {
            let mut ids = Vec::with_capacity(entries.len());
            for (artefact, _) in entries {
                ids.push(r.store_artefact(artefact)?);
            }
            r.update_stage(|stage| {
                for ((_, path), id) in entries.iter().zip(&ids) {
                    match stage.adds.get(path) {
                        Some(existing) if existing != id => {
                            return Err(Error::PathConflict {
                                path: path.clone(),
                                existing: existing.to_string(),
                            })
                        }
                        _ => {}
                    }
                    stage.removes.remove(path);
                    stage.adds.insert(path.clone(), id.clone());
                }
                Ok(())
            })?;
            Ok(ids)
        })
    }

    /// Stages an already stored version at `path`, replacing whatever is
    /// staged there. Used when an annotation supersedes a staged version.
    pub fn restage(&mut self, path: &str, id: &ArtefactId) -> Result<()> {
        check_path(path)?;
        if !self.objects.has(id)? {
            return Err(Error::UnresolvedReference(id.to_string()));
        }
        self.write_txn(|r| {
            r.update_stage(|stage| {
                stage.removes.remove(path);
                stage.adds.insert(path.to_owned(), id.clone());
                Ok(())
            })
        })
    }

    /// Marks `path` for removal in the next commit. Object bytes stay.
    pub fn stage_remove(&mut self, path: &str) -> Result<()> {
        self.stage_remove_many(&[path.to_owned()])
    }

    /// Marks every path for removal with a single stage write. Nothing is
    /// staged if any path is unknown.
    pub fn stage_remove_many(&mut self, paths: &[String]) -> Result<()> {
        self.write_txn(|r| {
            let head = r.head_snapshot()?;
            r.update_stage(|stage| {
                for path in paths {
                    let was_staged = stage.adds.remove(path).is_some();
                    if head.entries.contains_key(path) {
                        stage.removes.insert(path.clone());
                    } else if !was_staged {
                        return Err(Error::PathNotFound(path.clone()));
                    }
                }
                Ok(())
            })
        })
    }

    /// Artefact currently at `path`: staged version first, then head.
    pub fn resolve_path(&self, path: &str) -> Result<ArtefactId> {
        let stage = self.phase_stage(&self.current_phase())?;
        if let Some(id) = stage.adds.get(path) {
            return Ok(id.clone());
        }
        if stage.removes.contains(path) {
            return Err(Error::PathNotFound(path.to_owned()));
        }
        self.head_snapshot()?
            .entries
            .get(path)
            .cloned()
            .ok_or_else(|| Error::PathNotFound(path.to_owned()))
    }

    // ---- commits ----------------------------------------------------------

    fn write_commit(&mut self, commit: &Commit) -> Result<CommitId> {
        put_object(&mut self.objects, commit)
    }

    fn put_snapshot(&mut self, snapshot: &Snapshot) -> Result<Digest> {
        put_object(&mut self.objects, snapshot)
    }

    /// Root commit over the empty snapshot on `main` of `phase`; HEAD moves
    /// there.
    pub(crate) fn open_phase(&mut self, phase: &PhaseId, author: &ResearcherId) -> Result<CommitId> {
        let snapshot = self.put_snapshot(&Snapshot::default())?;
        let timestamp = self.tick();
        let commit = Commit {
            parent_ids: Vec::new(),
            snapshot,
            message: format!("open phase {phase}"),
            author: author.clone(),
            timestamp,
            phase: phase.clone(),
            cycle: self.config.current_cycle,
            kind: CommitKind::Root,
            consensus_round_id: None,
            consensus_round_digest: None,
        };
        let id = self.write_commit(&commit)?;
        self.set_branch(phase, MAIN, &id)?;
        self.set_head(phase, MAIN)?;
        Ok(id)
    }

    /// Appends a commit to the HEAD branch. A branch with no history (after
    /// a stage drop) gets a new root commit.
    pub(crate) fn append_commit(
        &mut self,
        kind: CommitKind,
        message: &str,
        author: &ResearcherId,
        snapshot: &Snapshot,
        extra_parent: Option<CommitId>,
        round: Option<(VoteRound, Digest)>,
    ) -> Result<(CommitId, Commit)> {
        let (phase, branch) = self.head_ref()?;
        let head = self.branch_head(&phase, &branch)?;
        let floor = match &head {
            Some(h) => Some(self.commit_object(h)?.timestamp),
            None => None,
        };
        let snapshot_id = self.put_snapshot(snapshot)?;
        let timestamp = self.tick_after(floor);
        let parent_ids = head.into_iter().chain(extra_parent).collect();
        let commit = Commit {
            parent_ids,
            snapshot: snapshot_id,
            message: message.to_owned(),
            author: author.clone(),
            timestamp,
            phase: phase.clone(),
            cycle: self.config.current_cycle,
            kind: if floor.is_none() { CommitKind::Root } else { kind },
            consensus_round_id: round.as_ref().map(|(r, _)| r.id.clone()),
            consensus_round_digest: round.map(|(_, d)| d),
        };
        let id = self.write_commit(&commit)?;
        self.set_branch(&phase, &branch, &id)?;
        Ok((id, commit))
    }

    /// Commits staged changes to the HEAD branch.
    ///
    /// With a round, the round must be closed with an ACCEPT verdict. A
    /// `CYCLE_CLOSE` round makes this the cycle-closing commit: the round
    /// must target the current head and the cycle counter advances.
    pub fn commit(&mut self, message: &str, author: &ResearcherId, round: Option<&str>) -> Result<Commit> {
        self.require_member(author)?;
        self.write_txn(|r| {
            let phase = r.current_phase();
            let stage = r.phase_stage(&phase)?;
            let gate = match round {
                Some(id) => Some(r.accepted_round(
                    id,
                    &[SubjectKind::CycleClose, SubjectKind::ArtefactValidation],
                )?),
                None => None,
            };
            if stage.is_empty() && gate.is_none() {
                return Err(Error::NothingToCommit);
            }
            let head = r.head_snapshot()?;
            let snapshot = stage.apply(&head);
            let mut kind = CommitKind::Change;
            if let Some((round, _)) = &gate {
                match round.subject.kind {
                    SubjectKind::CycleClose => {
                        r.check_target(round, r.head_commit()?.as_ref())?;
                        kind = CommitKind::CycleClose;
                    }
                    _ => {
                        if !snapshot.contains_artefact(&round.subject.target) {
                            return Err(Error::GateNotPassed(format!(
                                "validated artefact {} is not in the committed collection",
                                round.subject.target
                            )));
                        }
                    }
                }
            }
            let (_, commit) = r.append_commit(kind, message, author, &snapshot, None, gate)?;
            let mut staging = r.staging()?;
            staging.remove(&phase);
            r.save_staging(&staging)?;
            if kind == CommitKind::CycleClose {
                r.config.current_cycle += 1;
                r.save_config()?;
            }
            Ok(commit)
        })
    }

    pub(crate) fn check_target(&self, round: &VoteRound, expected: Option<&CommitId>) -> Result<()> {
        match expected {
            Some(h) if *h == round.subject.target => Ok(()),
            other => Err(Error::StaleRound {
                round_target: round.subject.target.to_string(),
                head: other.map_or_else(|| "(none)".to_owned(), |h| h.to_string()),
            }),
        }
    }

    /// True when some path of `at`'s snapshot maps to `id`.
    pub fn contains(&self, id: &ArtefactId, at: &CommitId) -> Result<bool> {
        Ok(self.commit_snapshot(at)?.contains_artefact(id))
    }

    /// Commits from a branch head back to its root along first parents.
    pub fn log(&self, branch: &str) -> Result<Vec<(CommitId, Commit)>> {
        let b = self.resolve_branch(branch)?;
        let mut out = Vec::new();
        let mut cursor = Some(b.head);
        while let Some(id) = cursor {
            let commit = self.commit_object(&id)?;
            cursor = commit.parent_ids.first().cloned();
            out.push((id, commit));
        }
        Ok(out)
    }

    // ---- branches ---------------------------------------------------------

    /// Forks a branch from `from` (default: HEAD's head), keeping only paths
    /// under `filter` when given. The fork point gets a new commit.
    pub fn branch(
        &mut self,
        name: &str,
        from: Option<&CommitId>,
        filter: Option<&str>,
        author: &ResearcherId,
    ) -> Result<Branch> {
        check_name(name)?;
        self.require_member(author)?;
        self.write_txn(|r| {
            let phase = r.current_phase();
            if r.branch_head(&phase, name)?.is_some() {
                return Err(Error::DuplicateBranch(name.to_owned()));
            }
            let base_id = match from {
                Some(id) => id.clone(),
                None => {
                    let branch = r.head_ref()?.1;
                    r.head_commit()?
                        .ok_or_else(|| Error::UnknownBranch(format!("{phase}/{branch}")))?
                }
            };
            let base = r.commit_object(&base_id)?;
            if base.phase != phase {
                return Err(Error::UnknownCommit(format!(
                    "{base_id} belongs to phase {}, not {phase}",
                    base.phase
                )));
            }
            let snapshot = r.snapshot(&base.snapshot)?;
            let snapshot = filter.map_or(snapshot.clone(), |p| snapshot.filtered(p));
            let snapshot_id = r.put_snapshot(&snapshot)?;
            let timestamp = r.tick_after(Some(base.timestamp));
            let commit = Commit {
                parent_ids: vec![base_id],
                snapshot: snapshot_id,
                message: format!("branch {name}"),
                author: author.clone(),
                timestamp,
                phase: phase.clone(),
                cycle: r.config.current_cycle,
                kind: CommitKind::Branch,
                consensus_round_id: None,
                consensus_round_digest: None,
            };
            let head = r.write_commit(&commit)?;
            r.set_branch(&phase, name, &head)?;
            Ok(Branch {
                name: name.to_owned(),
                phase,
                head,
            })
        })
    }

    /// Points HEAD at another branch of the current phase.
    pub fn checkout(&mut self, name: &str) -> Result<Branch> {
        self.write_txn(|r| {
            let phase = r.current_phase();
            let head = r
                .branch_head(&phase, name)?
                .ok_or_else(|| Error::UnknownBranch(format!("{phase}/{name}")))?;
            r.set_head(&phase, name)?;
            Ok(Branch {
                name: name.to_owned(),
                phase,
                head,
            })
        })
    }

    /// Merges `from` into `into` (default: HEAD branch) under an accepted
    /// MERGE round targeting `from`'s head. Paths present on both sides with
    /// different versions need an entry in `resolver`.
    pub fn merge(
        &mut self,
        from: &str,
        into: Option<&str>,
        resolver: &BTreeMap<String, ArtefactId>,
        author: &ResearcherId,
        round: &str,
    ) -> Result<Commit> {
        self.require_member(author)?;
        self.write_txn(|r| {
            let from_b = r.resolve_branch(from)?;
            let into_b = match into {
                Some(spec) => r.resolve_branch(spec)?,
                None => r.resolve_branch(&r.head_ref()?.1)?,
            };
            if from_b.phase != into_b.phase || from_b.phase != r.current_phase() {
                return Err(Error::UnknownBranch(format!(
                    "{}/{} and {}/{} are not both in the current phase",
                    from_b.phase, from_b.name, into_b.phase, into_b.name
                )));
            }
            let gate = r.accepted_round(round, &[SubjectKind::Merge])?;
            r.check_target(&gate.0, Some(&from_b.head))?;

            let ours = r.commit_snapshot(&into_b.head)?;
            let theirs = r.commit_snapshot(&from_b.head)?;
            let merged = merge_snapshots(&ours, &theirs, resolver)?;

            // Write on `into` by pointing HEAD there for the append.
            let previous_head = r.head_ref()?;
            r.set_head(&into_b.phase, &into_b.name)?;
            let message = format!("merge {} into {}", from_b.name, into_b.name);
            let result = r.append_commit(
                CommitKind::Merge,
                &message,
                author,
                &merged,
                Some(from_b.head.clone()),
                Some(gate),
            );
            r.set_head(&previous_head.0, &previous_head.1)?;
            Ok(result?.1)
        })
    }

    /// [`Repository::merge`] with conflicts resolved by name: each path maps
    /// to `ours`, `theirs` or an explicit artefact id.
    pub fn merge_choosing(
        &mut self,
        from: &str,
        into: Option<&str>,
        choices: &BTreeMap<String, String>,
        author: &ResearcherId,
        round: &str,
    ) -> Result<Commit> {
        let into_name = match into {
            Some(i) => i.to_owned(),
            None => self.head_ref()?.1,
        };
        let ours = self.commit_snapshot(&self.resolve_branch(&into_name)?.head)?;
        let theirs = self.commit_snapshot(&self.resolve_branch(from)?.head)?;
        let mut resolver = BTreeMap::new();
        for (path, choice) in choices {
            let side = match choice.as_str() {
                "ours" => ours.entries.get(path).cloned(),
                "theirs" => theirs.entries.get(path).cloned(),
                other => Some(other.parse::<Digest>()?),
            };
            let side = side.ok_or_else(|| Error::PathNotFound(path.clone()))?;
            resolver.insert(path.clone(), side);
        }
        self.merge(from, Some(&into_name), &resolver, author, round)
    }

    /// Deletes a branch ref. Its head is kept under the phase's dropped
    /// refs so the history still counts towards the phase.
    pub fn drop_branch(&mut self, name: &str) -> Result<()> {
        self.write_txn(|r| {
            let phase = r.current_phase();
            if name == MAIN {
                return Err(Error::ProtectedBranch(name.to_owned()));
            }
            let head = r
                .branch_head(&phase, name)?
                .ok_or_else(|| Error::UnknownBranch(format!("{phase}/{name}")))?;
            for release in r.releases()? {
                if r.is_ancestor(&head, &release.commit)? {
                    return Err(Error::ProtectedBranch(format!(
                        "{name} (reachable from release {})",
                        release.tag
                    )));
                }
            }
            let path = r.layout.branch(&phase.to_string(), name);
            let kept = r
                .layout
                .dropped(&phase.to_string())
                .join(format!("{name}@{}", head.short()));
            write_atomic(&kept, format!("{head}\n").as_bytes())?;
            fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
            if r.head_ref()? == (phase.clone(), name.to_owned()) {
                r.set_head(&phase, MAIN)?;
            }
            Ok(())
        })
    }

    /// Discards all branches and history of `phase`, keeping the content of
    /// its `main` head as staged additions of that phase.
    pub fn drop_stage(&mut self, phase: &PhaseId) -> Result<()> {
        if !self.config.phases.contains(phase) {
            return Err(Error::UnknownPhase(phase.to_string()));
        }
        self.write_txn(|r| {
            if r.releases()?.iter().any(|rel| rel.phase == *phase) {
                return Err(Error::PhaseHasReleases(phase.to_string()));
            }
            let content = match r.branch_head(phase, MAIN)? {
                Some(h) => r.commit_snapshot(&h)?,
                None => Snapshot::default(),
            };
            let mut staging = r.staging()?;
            let stage = staging.entry(phase.clone()).or_default();
            for (path, id) in content.entries {
                stage.adds.entry(path).or_insert(id);
            }
            stage.removes.clear();
            r.save_staging(&staging)?;
            let dir = r.layout.phases().join(phase.to_string());
            match fs::remove_dir_all(&dir) {
                Ok(()) => {}
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => return Err(Error::io(&dir, e)),
            }
            let (head_phase, _) = r.head_ref()?;
            if head_phase == *phase {
                r.set_head(phase, MAIN)?;
            }
            Ok(())
        })
    }

    /// True when `ancestor` is `descendant` or reachable from it.
    pub fn is_ancestor(&self, ancestor: &CommitId, descendant: &CommitId) -> Result<bool> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![descendant.clone()];
        while let Some(id) = stack.pop() {
            if id == *ancestor {
                return Ok(true);
            }
            if seen.insert(id.clone()) {
                stack.extend(self.commit_object(&id)?.parent_ids);
            }
        }
        Ok(false)
    }

    // ---- tagging ----------------------------------------------------------

    /// Attaches a stored narrative to a staged or committed artefact,
    /// restages the successor version at the same path and commits it as
    /// `tag:<path>`. With an action record, the narrative is attached as a
    /// researcher-in-the-loop interpretation of that action.
    pub fn tag_artefact(&mut self, tag: &Tag, action: Option<&ActionRecordId>) -> Result<Commit> {
        self.require_member(&tag.author)?;
        self.write_txn(|r| {
            let stage = r.phase_stage(&r.current_phase())?;
            let staged = stage
                .adds
                .iter()
                .find_map(|(p, id)| (*id == tag.target).then(|| p.clone()));
            let path = match staged {
                Some(p) => p,
                None => r
                    .head_snapshot()?
                    .path_of(&tag.target)
                    .filter(|p| !stage.removes.contains(*p))
                    .map(str::to_owned)
                    .ok_or_else(|| Error::PathNotFound(tag.target.to_string()))?,
            };
            let narrative: Narrative = get_object(&r.objects, &tag.narrative)?;
            let (id, _) = match action {
                Some(a) => artefact::add_ritl(&mut r.objects, &narrative, a, &tag.target)?,
                None => artefact::add_tag(&mut r.objects, &narrative, &tag.target)?,
            };
            r.restage(&path, &id)?;
            r.commit_internal(CommitKind::Tag, &format!("tag:{path}"), &tag.author)
        })
    }

    /// Creates a narrative from `text` and tags the artefact at `path`.
    pub fn tag_path(
        &mut self,
        path: &str,
        text: &str,
        author: &ResearcherId,
        action: Option<&ActionRecordId>,
    ) -> Result<Commit> {
        self.require_member(author)?;
        self.write_txn(|r| {
            let target = r.resolve_path(path)?;
            let floor = r.artefact(&target)?.timestamp;
            let timestamp = r.tick_after(Some(floor));
            let narrative = Narrative::text(text, author.clone(), timestamp);
            let narrative_id = artefact::store_narrative(&mut r.objects, &narrative)?;
            r.tag_artefact(
                &Tag {
                    target,
                    narrative: narrative_id,
                    author: author.clone(),
                    timestamp,
                },
                action,
            )
        })
    }

    pub(crate) fn commit_internal(
        &mut self,
        kind: CommitKind,
        message: &str,
        author: &ResearcherId,
    ) -> Result<Commit> {
        let phase = self.current_phase();
        let stage = self.phase_stage(&phase)?;
        if stage.is_empty() {
            return Err(Error::NothingToCommit);
        }
        let snapshot = stage.apply(&self.head_snapshot()?);
        let (_, commit) = self.append_commit(kind, message, author, &snapshot, None, None)?;
        let mut staging = self.staging()?;
        staging.remove(&phase);
        self.save_staging(&staging)?;
        Ok(commit)
    }

    // ---- releases ---------------------------------------------------------

    /// Writes an immutable release of the current phase's `main` head under
    /// an accepted RELEASE round targeting that head.
    pub fn release(&mut self, tag: &str, round: &str) -> Result<Release> {
        check_name(tag)?;
        self.write_txn(|r| {
            if r.layout.release(tag).exists() {
                return Err(Error::DuplicateTag(tag.to_owned()));
            }
            let (vote, digest) = r.accepted_round(round, &[SubjectKind::Release])?;
            let phase = r.current_phase();
            let head = r.branch_head(&phase, MAIN)?;
            r.check_target(&vote, head.as_ref())?;
            let timestamp = r.tick();
            let release = Release {
                tag: tag.to_owned(),
                commit: vote.subject.target.clone(),
                phase,
                consensus_round_id: vote.id.clone(),
                consensus_round_digest: digest,
                timestamp,
            };
            let path = r.layout.release(tag);
            write_atomic(&path, &to_canonical_bytes(&release)?)?;
            Ok(release)
        })
    }

    pub fn releases(&self) -> Result<Vec<Release>> {
        let dir = self.layout.releases();
        let mut out = Vec::new();
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
            Err(e) => return Err(Error::io(&dir, e)),
        };
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            if disk::is_temp_file(&entry.path()) {
                continue;
            }
            let bytes = fs::read(entry.path()).map_err(|e| Error::io(entry.path(), e))?;
            out.push(serde_json::from_slice::<Release>(&bytes)?);
        }
        out.sort_by(|a, b| (a.timestamp, &a.tag).cmp(&(b.timestamp, &b.tag)));
        Ok(out)
    }

    // ---- rounds -----------------------------------------------------------

    /// Loads a round and the digest of its file bytes.
    pub fn round_with_digest(&self, id: &str) -> Result<(VoteRound, Digest)> {
        check_name(id).map_err(|_| Error::UnknownRound(id.to_owned()))?;
        let path = self.layout.round(id);
        let bytes = read_optional(&path)?.ok_or_else(|| Error::UnknownRound(id.to_owned()))?;
        if !is_canonical(&bytes) {
            return Err(Error::CorruptObject {
                id: format!("round {id}"),
                reason: "round file is not canonical JSON".into(),
            });
        }
        let round: VoteRound = serde_json::from_slice(&bytes).map_err(|e| Error::CorruptObject {
            id: format!("round {id}"),
            reason: e.to_string(),
        })?;
        Ok((round, Digest::of(&bytes)))
    }

    pub fn round(&self, id: &str) -> Result<VoteRound> {
        Ok(self.round_with_digest(id)?.0)
    }

    pub fn rounds(&self) -> Result<Vec<VoteRound>> {
        let dir = self.layout.rounds();
        let mut ids = Vec::new();
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Some(id) = name.strip_suffix(".json") {
                if !name.starts_with('.') {
                    ids.push(id.to_owned());
                }
            }
        }
        let mut rounds = ids.iter().map(|id| self.round(id)).collect::<Result<Vec<_>>>()?;
        rounds.sort_by_key(|r| round_ordinal(&r.id));
        Ok(rounds)
    }

    fn save_round(&self, round: &VoteRound) -> Result<Digest> {
        let bytes = round.canonical_bytes()?;
        write_atomic(&self.layout.round(&round.id), &bytes)?;
        Ok(Digest::of(&bytes))
    }

    /// Opens a round on `target`. The group defaults to the whole roster and
    /// the config to the project defaults.
    pub fn open_round(
        &mut self,
        kind: SubjectKind,
        target: &Digest,
        group: Option<&[ResearcherId]>,
        config: Option<GateConfig>,
    ) -> Result<VoteRound> {
        self.write_txn(|r| {
            r.check_subject(kind, target)?;
            let members: Vec<ResearcherId> = match group {
                Some(g) => g.to_vec(),
                None => r.config.roster.iter().map(|m| m.id.clone()).collect(),
            };
            let mut with_levels = Vec::with_capacity(members.len());
            for m in members {
                let level = r
                    .config
                    .member(&m)
                    .ok_or_else(|| Error::UnknownResearcher(m.to_string()))?
                    .hierarchy_level;
                with_levels.push((m, level));
            }
            let next = r.rounds()?.iter().map(|x| round_ordinal(&x.id)).max().unwrap_or(0) + 1;
            let now = r.tick();
            let round = VoteRound::open(
                format!("r{next}"),
                DecisionSubject {
                    kind,
                    target: target.clone(),
                },
                r.current_phase(),
                with_levels,
                config.unwrap_or(r.config.defaults),
                now,
            )?;
            r.save_round(&round)?;
            Ok(round)
        })
    }

    fn check_subject(&self, kind: SubjectKind, target: &Digest) -> Result<()> {
        let unknown = || Error::UnknownSubject(target.to_string());
        let Some(bytes) = self.objects.get(target)? else {
            return Err(unknown());
        };
        let ok = match kind {
            SubjectKind::ArtefactValidation => {
                artefact::decode_object::<Artefact>(target, &bytes).is_ok()
            }
            _ => artefact::decode_object::<Commit>(target, &bytes).is_ok(),
        };
        if ok {
            Ok(())
        } else {
            Err(unknown())
        }
    }

    pub fn cast_vote(
        &mut self,
        id: &str,
        voter: &ResearcherId,
        pref: f64,
        credits: Option<u64>,
    ) -> Result<VoteRound> {
        self.write_txn(|r| {
            let mut round = r.round(id)?;
            let now = r.tick();
            round.cast(voter.clone(), pref, credits, now)?;
            r.save_round(&round)?;
            Ok(round)
        })
    }

    /// Closes a round with its verdict. Closing a closed round is a no-op.
    pub fn close_round(&mut self, id: &str) -> Result<VoteRound> {
        self.write_txn(|r| {
            let mut round = r.round(id)?;
            if round.is_closed() {
                return Ok(round);
            }
            let now = r.tick();
            round.decide(now)?;
            r.save_round(&round)?;
            Ok(round)
        })
    }

    /// A closed round of one of `kinds` whose stored and recomputed verdicts
    /// are both ACCEPT, with the digest of its file.
    pub(crate) fn accepted_round(&self, id: &str, kinds: &[SubjectKind]) -> Result<(VoteRound, Digest)> {
        let (round, digest) = self.round_with_digest(id)?;
        if !kinds.contains(&round.subject.kind) {
            let expected: Vec<&str> = kinds.iter().map(|k| k.as_str()).collect();
            return Err(Error::WrongSubjectKind {
                expected: expected.join("|"),
                found: round.subject.kind.to_string(),
            });
        }
        if !round.is_closed() {
            return Err(Error::GateNotPassed(format!("round {id} is still open")));
        }
        let recomputed = round.recompute().map_err(|e| Error::GateNotPassed(e.to_string()))?;
        if recomputed != Verdict::Accept || round.verdict != Some(Verdict::Accept) {
            return Err(Error::GateNotPassed(format!("round {id} verdict is {recomputed}")));
        }
        Ok((round, digest))
    }

    /// Every commit reachable from `phase`'s branches and releases.
    pub fn phase_commits(&self, phase: &PhaseId) -> Result<Vec<(CommitId, Commit)>> {
        let mut starts: Vec<CommitId> = self.branches(phase)?.into_iter().map(|b| b.head).collect();
        let dropped = self.layout.dropped(&phase.to_string());
        if dropped.is_dir() {
            for entry in fs::read_dir(&dropped).map_err(|e| Error::io(&dropped, e))? {
                let entry = entry.map_err(|e| Error::io(&dropped, e))?;
                if disk::is_temp_file(&entry.path()) {
                    continue;
                }
                let bytes = fs::read(entry.path()).map_err(|e| Error::io(entry.path(), e))?;
                starts.push(String::from_utf8_lossy(&bytes).trim_end().parse()?);
            }
        }
        starts.extend(
            self.releases()?
                .into_iter()
                .filter(|r| r.phase == *phase)
                .map(|r| r.commit),
        );
        let mut seen: HashMap<CommitId, Commit> = HashMap::new();
        let mut stack = starts;
        while let Some(id) = stack.pop() {
            if seen.contains_key(&id) {
                continue;
            }
            let commit = self.commit_object(&id)?;
            if commit.phase != *phase {
                continue;
            }
            stack.extend(commit.parent_ids.iter().cloned());
            seen.insert(id, commit);
        }
        let mut out: Vec<(CommitId, Commit)> = seen.into_iter().collect();
        out.sort_by(|a, b| (a.1.timestamp, &a.0).cmp(&(b.1.timestamp, &b.0)));
        Ok(out)
    }
}

fn round_ordinal(id: &str) -> u64 {
    id.strip_prefix('r').and_then(|n| n.parse().ok()).unwrap_or(0)
}

/// Union of two snapshots. Paths mapped to different versions on the two
/// sides take the version chosen in `resolver`.
pub fn merge_snapshots(
    ours: &Snapshot,
    theirs: &Snapshot,
    resolver: &BTreeMap<String, ArtefactId>,
) -> Result<Snapshot> {
    let mut entries = ours.entries.clone();
    let mut unresolved = Vec::new();
    for (path, their_id) in &theirs.entries {
        match ours.entries.get(path) {
            None => {
                entries.insert(path.clone(), their_id.clone());
            }
            Some(our_id) if our_id == their_id => {}
            Some(our_id) => match resolver.get(path) {
                Some(choice) if choice == our_id || choice == their_id => {
                    entries.insert(path.clone(), choice.clone());
                }
                Some(choice) => {
                    return Err(Error::InvalidResolution {
                        path: path.clone(),
                        chosen: choice.to_string(),
                    })
                }
                None => unresolved.push(path.clone()),
            },
        }
    }
    if unresolved.is_empty() {
        Ok(Snapshot { entries })
    } else {
        Err(Error::UnresolvedConflict(unresolved))
    }
}
