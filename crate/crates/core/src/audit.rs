//! Gate soundness checker.
//!
//! Every gated commit (cycle close, phase advance, merge), every commit that
//! names a round, and every release must point at a round file that still
//! hashes to the recorded digest, is closed, and recomputes to ACCEPT from
//! its stored ballots.

use serde::Serialize;

use crate::consensus::{SubjectKind, Verdict, VoteRound};
use crate::error::Result;
use crate::store::{Commit, CommitKind, Release, Repository};
use crate::Digest;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Finding {
    /// Commit id or `release:<tag>`.
    pub subject: String,
    pub problem: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct AuditReport {
    pub commits_checked: usize,
    pub gated_checked: usize,
    pub releases_checked: usize,
    pub findings: Vec<Finding>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }
}

/// Walks every phase's commits and every release.
pub fn audit(repo: &Repository) -> Result<AuditReport> {
    let mut report = AuditReport::default();
    for phase in repo.config().phases.phases() {
        for (id, commit) in repo.phase_commits(phase)? {
            report.commits_checked += 1;
            if !commit.kind.is_gated() && commit.consensus_round_id.is_none() {
                continue;
            }
            report.gated_checked += 1;
            if let Err(problem) = check_commit(repo, &commit) {
                report.findings.push(Finding {
                    subject: id.to_string(),
                    problem,
                });
            }
        }
    }
    for release in repo.releases()? {
        report.releases_checked += 1;
        if let Err(problem) = check_release(repo, &release) {
            report.findings.push(Finding {
                subject: format!("release:{}", release.tag),
                problem,
            });
        }
    }
    Ok(report)
}

fn load(repo: &Repository, id: Option<&String>, digest: Option<&Digest>) -> Result<VoteRound, String> {
    let id = id.ok_or("no consensus round recorded")?;
    let digest = digest.ok_or("no consensus round digest recorded")?;
    let (round, actual) = repo
        .round_with_digest(id)
        .map_err(|e| format!("round {id}: {e}"))?;
    if actual != *digest {
        return Err(format!("round {id} file hashes to {actual}, recorded {digest}"));
    }
    if !round.is_closed() || round.verdict != Some(Verdict::Accept) {
        return Err(format!("round {id} is not closed with ACCEPT"));
    }
    match round.recompute() {
        Ok(Verdict::Accept) => Ok(round),
        Ok(v) => Err(format!("round {id} recomputes to {v}")),
        Err(e) => Err(format!("round {id} cannot be recomputed: {e}")),
    }
}

fn check_commit(repo: &Repository, commit: &Commit) -> Result<(), String> {
    let round = load(
        repo,
        commit.consensus_round_id.as_ref(),
        commit.consensus_round_digest.as_ref(),
    )?;
    let kind = round.subject.kind;
    let target = &round.subject.target;
    let parent = |i: usize| commit.parent_ids.get(i);
    let ok = match commit.kind {
        CommitKind::CycleClose => kind == SubjectKind::CycleClose && parent(0) == Some(target),
        CommitKind::PhaseAdvance => {
            matches!(kind, SubjectKind::PhaseAdvance | SubjectKind::Release) && parent(0) == Some(target)
        }
        CommitKind::Merge => kind == SubjectKind::Merge && parent(1) == Some(target),
        CommitKind::Change => {
            kind == SubjectKind::ArtefactValidation
                && repo
                    .snapshot(&commit.snapshot)
                    .map(|s| s.contains_artefact(target))
                    .unwrap_or(false)
        }
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(format!(
            "{kind} round on {} does not authorise a {:?} commit",
            target.short(),
            commit.kind
        ))
    }
}

fn check_release(repo: &Repository, release: &Release) -> Result<(), String> {
    let round = load(
        repo,
        Some(&release.consensus_round_id),
        Some(&release.consensus_round_digest),
    )?;
    if round.subject.kind != SubjectKind::Release || round.subject.target != release.commit {
        return Err(format!(
            "{} round on {} does not authorise releasing {}",
            round.subject.kind,
            round.subject.target.short(),
            release.commit.short()
        ));
    }
    Ok(())
}
