use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad classification of an error, used by front-ends to pick exit codes
/// and HTTP statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Input failed validation before touching any state.
    Invalid,
    /// A referenced id, path, branch or round does not exist.
    NotFound,
    /// The request conflicts with repository state or a consensus gate.
    Conflict,
    /// Storage or environment failure.
    Internal,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("unresolved reference {0}")]
    UnresolvedReference(String),
    #[error("no metadata entry with key {0:?}")]
    KeyNotFound(String),
    #[error("action record {action} references neither side of artefact {artefact}")]
    ActionMismatch { action: String, artefact: String },
    #[error("action record must link two distinct artefacts")]
    InvalidAction,
    #[error("metadata entry ({key}, {timestamp}, {producer}) already present")]
    DuplicateMetadata {
        key: String,
        timestamp: String,
        producer: String,
    },
    #[error("metadata key must be non-empty")]
    EmptyMetadataKey,
    #[error("narrative text must be non-empty")]
    EmptyNarrative,
    #[error("timestamp {new} does not follow predecessor timestamp {previous}")]
    NonMonotonicTimestamp { previous: String, new: String },
    #[error("invalid timestamp {0:?}")]
    InvalidTimestamp(String),
    #[error("invalid object id {0:?}")]
    InvalidId(String),
    #[error("unknown phase {0}")]
    UnknownPhase(String),
    #[error("invalid phase configuration: {0}")]
    InvalidPhaseConfig(String),
    #[error("invalid gate configuration: {0}")]
    InvalidGateConfig(String),
    #[error("unknown researcher {0}")]
    UnknownResearcher(String),
    #[error("invalid roster: {0}")]
    InvalidRoster(String),

    #[error("repository already initialized at {}", .0.display())]
    AlreadyInitialized(PathBuf),
    #[error("no repository found at {}", .0.display())]
    NotARepository(PathBuf),
    #[error("clone source unavailable: {0}")]
    SourceUnavailable(String),
    #[error("corrupt object {id}: {reason}")]
    CorruptObject { id: String, reason: String },
    #[error("path {path} already staged with artefact {existing}")]
    PathConflict { path: String, existing: String },
    #[error("path {0} not found")]
    PathNotFound(String),
    #[error("unknown commit {0}")]
    UnknownCommit(String),
    #[error("nothing to commit")]
    NothingToCommit,
    #[error("consensus gate not passed: {0}")]
    GateNotPassed(String),
    #[error("branch {0} already exists in this phase")]
    DuplicateBranch(String),
    #[error("unknown branch {0}")]
    UnknownBranch(String),
    #[error("unresolved merge conflict on {}", .0.join(", "))]
    UnresolvedConflict(Vec<String>),
    #[error("resolution for {path} picks {chosen}, which is on neither side")]
    InvalidResolution { path: String, chosen: String },
    #[error("branch {0} is protected")]
    ProtectedBranch(String),
    #[error("phase {0} has releases")]
    PhaseHasReleases(String),
    #[error("release tag {0} already exists")]
    DuplicateTag(String),
    #[error("invalid name {0:?}")]
    InvalidName(String),
    #[error("repository lock held by another writer")]
    LockHeld,

    #[error("missing ballots from {}", .0.join(", "))]
    MissingBallot(Vec<String>),
    #[error("group is empty")]
    EmptyGroup,
    #[error("disagreement needs at least two group members")]
    GroupTooSmall,
    #[error("quorum not met: {cast} of {required} required ballots")]
    QuorumNotMet { cast: usize, required: usize },
    #[error("round {0} is closed")]
    RoundClosed(String),
    #[error("round {0} is still open")]
    RoundOpen(String),
    #[error("voter {0} is not in the round group")]
    VoterNotInGroup(String),
    #[error("preference {0} outside [0, 1]")]
    PrefOutOfRange(f64),
    #[error("unknown decision subject {0}")]
    UnknownSubject(String),
    #[error("unknown round {0}")]
    UnknownRound(String),
    #[error("round subject kind {found} where {expected} is required")]
    WrongSubjectKind { expected: String, found: String },
    #[error("round targets {round_target}, current head is {head}")]
    StaleRound { round_target: String, head: String },
    #[error("already in the last phase")]
    LastPhase,

    #[error("script event {index}: {source}")]
    ScriptError {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("malformed script: {0}")]
    MalformedScript(String),

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable identifier printed by the CLI and returned by the HTTP API.
    pub fn code(&self) -> &'static str {
        use Error::*;
        match self {
            UnresolvedReference(_) => "UnresolvedReference",
            KeyNotFound(_) => "KeyNotFound",
            ActionMismatch { .. } => "ActionMismatch",
            InvalidAction => "InvalidAction",
            DuplicateMetadata { .. } => "DuplicateMetadata",
            EmptyMetadataKey => "EmptyMetadataKey",
            EmptyNarrative => "EmptyNarrative",
            NonMonotonicTimestamp { .. } => "NonMonotonicTimestamp",
            InvalidTimestamp(_) => "InvalidTimestamp",
            InvalidId(_) => "InvalidId",
            UnknownPhase(_) => "UnknownPhase",
            InvalidPhaseConfig(_) => "InvalidPhaseConfig",
            InvalidGateConfig(_) => "InvalidGateConfig",
            UnknownResearcher(_) => "UnknownResearcher",
            InvalidRoster(_) => "InvalidRoster",
            AlreadyInitialized(_) => "AlreadyInitialized",
            NotARepository(_) => "NotARepository",
            SourceUnavailable(_) => "SourceUnavailable",
            CorruptObject { .. } => "CorruptObject",
            PathConflict { .. } => "PathConflict",
            PathNotFound(_) => "PathNotFound",
            UnknownCommit(_) => "UnknownCommit",
            NothingToCommit => "NothingToCommit",
            GateNotPassed(_) => "GateNotPassed",
            DuplicateBranch(_) => "DuplicateBranch",
            UnknownBranch(_) => "UnknownBranch",
            UnresolvedConflict(_) => "UnresolvedConflict",
            InvalidResolution { .. } => "InvalidResolution",
            ProtectedBranch(_) => "ProtectedBranch",
            PhaseHasReleases(_) => "PhaseHasReleases",
            DuplicateTag(_) => "DuplicateTag",
            InvalidName(_) => "InvalidName",
            LockHeld => "LockHeld",
            MissingBallot(_) => "MissingBallot",
            EmptyGroup => "EmptyGroup",
            GroupTooSmall => "GroupTooSmall",
            QuorumNotMet { .. } => "QuorumNotMet",
            RoundClosed(_) => "RoundClosed",
            RoundOpen(_) => "RoundOpen",
            VoterNotInGroup(_) => "VoterNotInGroup",
            PrefOutOfRange(_) => "PrefOutOfRange",
            UnknownSubject(_) => "UnknownSubject",
            UnknownRound(_) => "UnknownRound",
            WrongSubjectKind { .. } => "WrongSubjectKind",
            StaleRound { .. } => "StaleRound",
            LastPhase => "LastPhase",
            ScriptError { .. } => "ScriptError",
            MalformedScript(_) => "MalformedScript",
            Io { .. } => "Io",
            Json(_) => "Json",
        }
    }

    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            InvalidTimestamp(_)
            | InvalidId(_)
            | EmptyMetadataKey
            | EmptyNarrative
            | InvalidPhaseConfig(_)
            | InvalidGateConfig(_)
            | InvalidRoster(_)
            | InvalidName(_)
            | PrefOutOfRange(_)
            | InvalidAction
            | MalformedScript(_)
            | Json(_) => ErrorClass::Invalid,
            UnresolvedReference(_)
            | UnknownPhase(_)
            | UnknownResearcher(_)
            | NotARepository(_)
            | PathNotFound(_)
            | UnknownCommit(_)
            | UnknownBranch(_)
            | UnknownSubject(_)
            | UnknownRound(_)
            | KeyNotFound(_) => ErrorClass::NotFound,
            Io { .. } => ErrorClass::Internal,
            ScriptError { source, .. } => source.class(),
            _ => ErrorClass::Conflict,
        }
    }
}
