//! Deterministic replay of JSON event scripts.
//!
//! A script is either a bare array of events or `{"events": [...]}`. Every
//! event is an object with an `op` field plus optional `at` (timestamp) and
//! `author` fields. Events without `at` run one second after the previous
//! event, so a script replays to byte-identical repositories. The event
//! catalogue is documented in `docs/replay-format.md`.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::Deserialize;
use serde_json::Value;

use crate::artefact::{
    self, ActionRecord, DocumentRef, Metadata, Narrative, OperationDescriptor,
    ResearcherId,
};
use crate::canonical::{Digest, Timestamp};
use crate::consensus::{GateConfig, GateOverrides, Strategy, SubjectKind};
use crate::error::{Error, Result};
use crate::store::{Clock, Repository, MAIN};
use crate::workflow::{PhaseConfig, PhaseId, ProjectConfig, Researcher};
use crate::ActionRecordId;

const DEFAULT_START: i64 = 1_577_836_800_000; // 2020-01-01T00:00:00Z
const STEP_MS: i64 = 1000;

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum ScriptFile {
    List(Vec<Value>),
    Object { events: Vec<Value> },
}

/// A parsed event script.
#[derive(Debug, Clone)]
pub struct Script {
    events: Vec<Value>,
}

impl Script {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let file: ScriptFile =
            serde_json::from_slice(bytes).map_err(|e| Error::MalformedScript(e.to_string()))?;
        let events = match file {
            ScriptFile::List(e) | ScriptFile::Object { events: e } => e,
        };
        Ok(Script { events })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&bytes)
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "camelCase")]
struct Envelope {
    #[serde(default)]
    at: Option<Timestamp>,
    #[serde(default)]
    author: Option<String>,
    #[serde(flatten)]
    event: Event,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum PhaseList {
    Text(String),
    List(Vec<PhaseId>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "camelCase")]
struct MetaSpec {
    key: String,
    #[serde(default)]
    value: Option<String>,
    /// Cycled through by `createMany`.
    #[serde(default)]
    values: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum Votes {
    Map(BTreeMap<String, f64>),
    List(Vec<VoteSpec>),
}

#[derive(Debug, Clone, Deserialize)]
struct VoteSpec {
    voter: String,
    pref: f64,
    #[serde(default)]
    credits: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "op", rename_all = "camelCase")]
enum Event {
    #[serde(rename_all = "camelCase")]
    Init {
        project: String,
        phases: PhaseList,
        roster: Vec<Researcher>,
        #[serde(default)]
        defaults: Option<GateConfig>,
    },
    #[serde(rename_all = "camelCase")]
    Create {
        path: String,
        text: String,
        #[serde(default)]
        media_type: Option<String>,
        #[serde(default)]
        metadata: Vec<MetaSpec>,
    },
    #[serde(rename_all = "camelCase")]
    CreateMany {
        prefix: String,
        count: usize,
        #[serde(default = "one")]
        start: usize,
        #[serde(default = "four")]
        width: usize,
        /// `{n}` is replaced by the zero-padded index.
        text: String,
        #[serde(default)]
        media_type: Option<String>,
        #[serde(default)]
        metadata: Vec<MetaSpec>,
    },
    AddMetadata {
        path: String,
        key: String,
        value: String,
    },
    UpdateMetadata {
        path: String,
        key: String,
        value: String,
    },
    Revise {
        path: String,
        text: String,
    },
    #[serde(rename_all = "camelCase")]
    Action {
        #[serde(rename = "as")]
        label: String,
        original: String,
        result: String,
        name: String,
        #[serde(default)]
        parameters: BTreeMap<String, String>,
        #[serde(default)]
        scores: BTreeMap<String, f64>,
    },
    Tag {
        path: String,
        text: String,
        #[serde(default)]
        action: Option<String>,
    },
    Remove {
        path: String,
    },
    RemoveMany {
        prefix: String,
        #[serde(default)]
        count: Option<usize>,
    },
    Commit {
        message: String,
        #[serde(default)]
        round: Option<String>,
    },
    Curate {
        path: String,
        #[serde(default)]
        text: Option<String>,
        #[serde(default)]
        metadata: Vec<MetaSpec>,
        #[serde(default)]
        narrative: Option<String>,
        #[serde(default)]
        action: Option<String>,
    },
    #[serde(rename_all = "camelCase")]
    Round {
        #[serde(default, rename = "as")]
        label: Option<String>,
        kind: SubjectKind,
        #[serde(default = "head")]
        target: String,
        #[serde(default)]
        group: Option<Vec<String>>,
        #[serde(default)]
        strategy: Option<Strategy>,
        #[serde(default)]
        pref_threshold: Option<f64>,
        #[serde(default)]
        dis_threshold: Option<Value>,
        #[serde(default)]
        quorum: Option<f64>,
        #[serde(default)]
        votes: Option<Votes>,
        #[serde(default)]
        close: Option<bool>,
    },
    Vote {
        round: String,
        voter: String,
        pref: f64,
        #[serde(default)]
        credits: Option<u64>,
    },
    CloseRound {
        round: String,
    },
    CloseCycle {
        round: String,
    },
    Advance {
        round: String,
        #[serde(default)]
        release: Option<String>,
    },
    Branch {
        name: String,
        #[serde(default)]
        from: Option<String>,
        #[serde(default)]
        filter: Option<String>,
    },
    Checkout {
        branch: String,
    },
    Merge {
        from: String,
        #[serde(default)]
        into: Option<String>,
        round: String,
        #[serde(default)]
        resolve: BTreeMap<String, String>,
    },
    DropBranch {
        name: String,
    },
    DropStage {
        phase: PhaseId,
    },
    Release {
        tag: String,
        round: String,
    },
}

fn one() -> usize {
    1
}

fn four() -> usize {
    4
}

fn head() -> String {
    "head".to_owned()
}

/// Replay state carried between events.
struct Replayer {
    repo: Option<Repository>,
    root: std::path::PathBuf,
    rounds: HashMap<String, String>,
    actions: HashMap<String, ActionRecordId>,
    time: Timestamp,
}

/// Runs `script` against the repository at `root`, creating it when the
/// script starts with an `init` event or no repository exists yet.
pub fn replay(root: &Path, script: &Script) -> Result<Repository> {
    let mut r = Replayer {
        repo: None,
        root: root.to_path_buf(),
        rounds: HashMap::new(),
        actions: HashMap::new(),
        time: Timestamp::from_millis(DEFAULT_START),
    };
    for (index, raw) in script.events.iter().enumerate() {
        r.step(index, raw)
            .map_err(|source| Error::ScriptError {
                index,
                source: Box::new(source),
            })?;
    }
    match r.repo.take() {
        Some(mut repo) => {
            repo.unlock();
            repo.set_clock(Clock::System);
            Ok(repo)
        }
        None => r.default_repo(),
    }
}

pub fn replay_file(root: &Path, script: &Path) -> Result<Repository> {
    replay(root, &Script::load(script)?)
}

/// Project used when a script has no `init` event and no repository exists.
fn default_config() -> ProjectConfig {
    ProjectConfig::new(
        "project",
        PhaseConfig::standard(),
        vec![Researcher::new("R0", "", 0)],
        GateConfig::default(),
    )
}

impl Replayer {
    fn default_repo(&mut self) -> Result<Repository> {
        if self.root.join(crate::store::REPO_DIR).exists() {
            Repository::open(&self.root)
        } else {
            let mut repo = Repository::init_at(&self.root, default_config(), self.time)?;
            repo.set_clock(Clock::System);
            Ok(repo)
        }
    }

    fn repo(&mut self) -> Result<&mut Repository> {
        if self.repo.is_none() {
            let mut repo = self.default_repo()?;
            repo.lock()?;
            self.repo = Some(repo);
        }
        let time = self.time;
        let repo = self.repo.as_mut().expect("set above");
        repo.set_clock(Clock::Scripted(time));
        Ok(repo)
    }

    fn author(&mut self, given: Option<&str>) -> Result<ResearcherId> {
        match given {
            Some(a) => Ok(ResearcherId::new(a)),
            None => Ok(self.repo()?.config().roster[0].id.clone()),
        }
    }

    fn round_id(&self, name: &str) -> String {
        self.rounds.get(name).cloned().unwrap_or_else(|| name.to_owned())
    }

    fn action_id(&self, name: &str) -> Result<ActionRecordId> {
        match self.actions.get(name) {
            Some(id) => Ok(id.clone()),
            None => name.parse(),
        }
    }

    fn step(&mut self, index: usize, raw: &Value) -> Result<()> {
        let env: Envelope =
            serde_json::from_value(raw.clone()).map_err(|e| Error::MalformedScript(e.to_string()))?;
        self.time = match env.at {
            Some(t) => t,
            None if index == 0 => self.time,
            None => self.time.plus_millis(STEP_MS),
        };
        let author = env.author.as_deref();
        match env.event {
            Event::Init {
                project,
                phases,
                roster,
                defaults,
            } => {
                let phases = match phases {
                    PhaseList::Text(s) => PhaseConfig::parse(&s)?,
                    PhaseList::List(l) => PhaseConfig::new(l)?,
                };
                let config = ProjectConfig::new(&project, phases, roster, defaults.unwrap_or_default());
                let mut repo = Repository::init_at(&self.root, config, self.time)?;
                repo.lock()?;
                self.repo = Some(repo);
            }
            Event::Create {
                path,
                text,
                media_type,
                metadata,
            } => {
                let who = self.author(author)?;
                let repo = self.repo()?;
                let content = document(repo, &text, media_type.as_deref())?;
                let mut a = repo.new_artefact(content, &who)?;
                for m in &metadata {
                    let value = m.value.clone().or_else(|| m.values.first().cloned()).unwrap_or_default();
                    a.meta_data.push(Metadata::manual(&m.key, &value, who.clone(), a.timestamp));
                }
                repo.stage_add(&a, &path)?;
            }
            Event::CreateMany {
                prefix,
                count,
                start,
                width,
                text,
                media_type,
                metadata,
            } => {
                let who = self.author(author)?;
                let repo = self.repo()?;
                let mut batch = Vec::with_capacity(count);
                for i in 0..count {
                    let n = format!("{:0width$}", start + i);
                    let content = document(repo, &text.replace("{n}", &n), media_type.as_deref())?;
                    let mut a = repo.new_artefact(content, &who)?;
                    for m in &metadata {
                        let value = if m.values.is_empty() {
                            m.value.clone().unwrap_or_default()
                        } else {
                            m.values[i % m.values.len()].clone()
                        };
                        a.meta_data.push(Metadata::automatic(&m.key, &value, a.timestamp));
                    }
                    batch.push((a, format!("{prefix}{n}")));
                }
                repo.stage_add_many(&batch)?;
            }
            Event::AddMetadata { path, key, value } => {
                let who = self.author(author)?;
                self.repo()?.annotate_path(&path, &key, &value, &who, false)?;
            }
            Event::UpdateMetadata { path, key, value } => {
                let who = self.author(author)?;
                self.repo()?.annotate_path(&path, &key, &value, &who, true)?;
            }
            Event::Revise { path, text } => {
                let who = self.author(author)?;
                let repo = self.repo()?;
                let id = repo.resolve_path(&path)?;
                let floor = repo.artefact(&id)?.timestamp;
                let t = repo.tick_after(Some(floor));
                let (next, _) =
                    artefact::revise_content(repo.objects_mut(), DocumentRef::text(text), who, &id, t)?;
                repo.restage(&path, &next)?;
            }
            Event::Action {
                label,
                original,
                result,
                name,
                parameters,
                scores,
            } => {
                let who = self.author(author)?;
                let repo = self.repo()?;
                let original = repo.resolve_path(&original)?;
                let result = repo.resolve_path(&result)?;
                let t = repo.tick();
                let record = ActionRecord {
                    original,
                    result,
                    operation: OperationDescriptor {
                        name,
                        parameters,
                        assessment_scores: scores,
                    },
                    producer: who,
                    timestamp: t,
                };
                let id = artefact::record_action(repo.objects_mut(), &record)?;
                self.actions.insert(label, id);
            }
            Event::Tag { path, text, action } => {
                let who = self.author(author)?;
                let action = action.map(|a| self.action_id(&a)).transpose()?;
                self.repo()?.tag_path(&path, &text, &who, action.as_ref())?;
            }
            Event::Remove { path } => self.repo()?.stage_remove(&path)?,
            Event::RemoveMany { prefix, count } => {
                let repo = self.repo()?;
                let snapshot = repo.head_snapshot()?;
                let paths: Vec<String> = snapshot
                    .entries
                    .keys()
                    .filter(|p| p.starts_with(&prefix))
                    .take(count.unwrap_or(usize::MAX))
                    .cloned()
                    .collect();
                if let Some(n) = count {
                    if paths.len() < n {
                        return Err(Error::PathNotFound(format!("{n} paths under {prefix}")));
                    }
                }
                repo.stage_remove_many(&paths)?;
            }
            Event::Commit { message, round } => {
                let who = self.author(author)?;
                let round = round.map(|r| self.round_id(&r));
                self.repo()?.commit(&message, &who, round.as_deref())?;
            }
            Event::Curate {
                path,
                text,
                metadata,
                narrative,
                action,
            } => {
                let who = self.author(author)?;
                let action = action.map(|a| self.action_id(&a)).transpose()?;
                let repo = self.repo()?;
                let base = match (text, repo.resolve_path(&path)) {
                    (Some(text), _) => repo.new_artefact(DocumentRef::text(text), &who)?,
                    (None, Ok(id)) => repo.artefact(&id)?,
                    (None, Err(e)) => return Err(e),
                };
                let mut floor = base.timestamp;
                let mut entries = Vec::new();
                for m in &metadata {
                    let t = repo.tick_after(Some(floor));
                    floor = t;
                    let value = m.value.clone().unwrap_or_default();
                    entries.push(Metadata::manual(&m.key, &value, who.clone(), t));
                }
                let ritl = match (narrative, action) {
                    (Some(text), Some(a)) => {
                        let t = repo.tick_after(Some(floor));
                        Some((Narrative::text(&text, who.clone(), t), a))
                    }
                    (None, None) => None,
                    _ => {
                        return Err(Error::MalformedScript(
                            "curate needs both narrative and action, or neither".into(),
                        ))
                    }
                };
                let ritl_ref = ritl.as_ref().map(|(n, a)| (n, a));
                repo.run_curation_step(&base, &entries, ritl_ref, &path, &who)?;
            }
            Event::Round {
                label,
                kind,
                target,
                group,
                strategy,
                pref_threshold,
                dis_threshold,
                quorum,
                votes,
                close,
            } => {
                let repo = self.repo()?;
                let target = resolve_target(repo, &target)?;
                let group: Option<Vec<ResearcherId>> =
                    group.map(|g| g.iter().map(|m| ResearcherId::new(m)).collect());
                let config = GateOverrides {
                    strategy,
                    pref_threshold,
                    dis_threshold,
                    quorum,
                }
                .apply(repo.config().defaults)?;
                let round = repo.open_round(kind, &target, group.as_deref(), Some(config))?;
                let ballots: Vec<VoteSpec> = match votes {
                    None => Vec::new(),
                    Some(Votes::Map(m)) => m
                        .into_iter()
                        .map(|(voter, pref)| VoteSpec {
                            voter,
                            pref,
                            credits: None,
                        })
                        .collect(),
                    Some(Votes::List(l)) => l,
                };
                let had_votes = !ballots.is_empty();
                for v in ballots {
                    repo.cast_vote(&round.id, &ResearcherId::new(&v.voter), v.pref, v.credits)?;
                }
                if close.unwrap_or(had_votes) {
                    repo.close_round(&round.id)?;
                }
                if let Some(l) = label {
                    self.rounds.insert(l, round.id);
                }
            }
            Event::Vote {
                round,
                voter,
                pref,
                credits,
            } => {
                let id = self.round_id(&round);
                self.repo()?.cast_vote(&id, &ResearcherId::new(&voter), pref, credits)?;
            }
            Event::CloseRound { round } => {
                let id = self.round_id(&round);
                self.repo()?.close_round(&id)?;
            }
            Event::CloseCycle { round } => {
                let who = self.author(author)?;
                let id = self.round_id(&round);
                self.repo()?.close_cycle(&id, &who)?;
            }
            Event::Advance { round, release } => {
                let who = self.author(author)?;
                let id = self.round_id(&round);
                self.repo()?.advance_phase(&id, release.as_deref(), &who)?;
            }
            Event::Branch { name, from, filter } => {
                let who = self.author(author)?;
                let repo = self.repo()?;
                let from = match from {
                    Some(f) => Some(resolve_target(repo, &f)?),
                    None => None,
                };
                repo.branch(&name, from.as_ref(), filter.as_deref(), &who)?;
            }
            Event::Checkout { branch } => {
                self.repo()?.checkout(&branch)?;
            }
            Event::Merge {
                from,
                into,
                round,
                resolve,
            } => {
                let who = self.author(author)?;
                let id = self.round_id(&round);
                self.repo()?.merge_choosing(&from, into.as_deref(), &resolve, &who, &id)?;
            }
            Event::DropBranch { name } => self.repo()?.drop_branch(&name)?,
            Event::DropStage { phase } => self.repo()?.drop_stage(&phase)?,
            Event::Release { tag, round } => {
                let id = self.round_id(&round);
                self.repo()?.release(&tag, &id)?;
            }
        }
        Ok(())
    }
}

fn document(repo: &mut Repository, text: &str, media_type: Option<&str>) -> Result<DocumentRef> {
    match media_type {
        Some(mt) => repo.put_blob(text.as_bytes(), mt),
        None => Ok(DocumentRef::text(text)),
    }
}

/// Resolves a round or branch target: `head` (HEAD branch head), `main`,
/// `branch:<name>`, `path:<path>` (artefact at a path) or a literal digest.
pub fn resolve_target(repo: &Repository, spec: &str) -> Result<Digest> {
    if spec == "head" {
        return repo
            .head_commit()?
            .ok_or_else(|| Error::UnknownBranch(repo.head_ref().map(|h| h.1).unwrap_or_default()));
    }
    if spec == MAIN {
        return Ok(repo.resolve_branch(MAIN)?.head);
    }
    if let Some(name) = spec.strip_prefix("branch:") {
        return Ok(repo.resolve_branch(name)?.head);
    }
    if let Some(path) = spec.strip_prefix("path:") {
        return repo.resolve_path(path);
    }
    spec.parse()
}

