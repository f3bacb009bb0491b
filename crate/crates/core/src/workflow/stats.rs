//! Per-phase project statistics, derived from the commit DAG, snapshots and
//! round files. Nothing here is persisted.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::Serialize;

use crate::artefact::{content_versions, StoredObject};
use crate::consensus::Verdict;
use crate::error::Result;
use crate::store::{CommitKind, Repository, Snapshot, MAIN};
use crate::workflow::PhaseId;
use crate::{CommitId, NarrativeId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct PhaseStats {
    pub phase: PhaseId,
    /// Distinct cycles with at least one commit other than the phase exit.
    pub cycle_count: u32,
    /// Commits other than the empty root that opens the phase.
    pub commit_count: usize,
    /// Live branches besides `main`.
    pub branch_count: usize,
    pub merge_count: usize,
    /// Paths in the `main` head snapshot.
    pub artefact_count: usize,
    /// Distinct narratives attached to artefacts in the `main` head.
    pub narrative_count: usize,
    /// Most narratives on a single artefact in the `main` head.
    pub max_narratives: usize,
    /// Most distinct contents along one artefact's version chain.
    pub max_content_versions: usize,
    /// Most paths added by a single commit relative to its first parent.
    pub largest_addition: usize,
    pub round_count: usize,
    pub reject_count: usize,
    pub release_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ReleaseStats {
    pub tag: String,
    pub phase: PhaseId,
    pub commit: CommitId,
    pub artefact_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ProjectStats {
    pub project: String,
    pub current_phase: PhaseId,
    pub current_cycle: u32,
    pub phases: Vec<PhaseStats>,
    pub releases: Vec<ReleaseStats>,
}

pub fn compute_stats(repo: &Repository) -> Result<ProjectStats> {
    let rounds = repo.rounds()?;
    let releases = repo.releases()?;
    let empty = Snapshot::default().id();
    let mut phases = Vec::new();
    for phase in repo.config().phases.phases() {
        let commits = repo.phase_commits(phase)?;
        let cycles: BTreeSet<u32> = commits
            .iter()
            .filter(|(_, c)| c.kind != CommitKind::PhaseAdvance)
            .map(|(_, c)| c.cycle)
            .collect();

        let mut largest_addition = 0;
        for (_, c) in &commits {
            let snapshot = repo.snapshot(&c.snapshot)?;
            let base = match c.parent_ids.first() {
                Some(p) => repo.commit_snapshot(p)?,
                None => Default::default(),
            };
            let added = snapshot
                .entries
                .keys()
                .filter(|p| !base.entries.contains_key(*p))
                .count();
            largest_addition = largest_addition.max(added);
        }

        let head = repo.head_snapshot_of(phase, MAIN)?;
        let mut narratives: BTreeSet<&NarrativeId> = BTreeSet::new();
        let mut artefacts = Vec::with_capacity(head.len());
        for id in head.entries.values() {
            artefacts.push((id, repo.artefact(id)?));
        }
        let mut max_narratives = 0;
        let mut max_content_versions = 0;
        for (id, a) in &artefacts {
            narratives.extend(a.list_of_tags.iter());
            max_narratives = max_narratives.max(a.list_of_tags.len());
            max_content_versions = max_content_versions.max(content_versions(repo.objects(), id)?);
        }

        let phase_rounds: Vec<_> = rounds.iter().filter(|r| r.phase == *phase).collect();
        phases.push(PhaseStats {
            phase: phase.clone(),
            cycle_count: cycles.len() as u32,
            commit_count: commits
                .iter()
                .filter(|(_, c)| !(c.kind == CommitKind::Root && c.snapshot == empty))
                .count(),
            branch_count: repo.branches(phase)?.iter().filter(|b| b.name != MAIN).count(),
            merge_count: commits.iter().filter(|(_, c)| c.kind == CommitKind::Merge).count(),
            artefact_count: head.len(),
            narrative_count: narratives.len(),
            max_narratives,
            max_content_versions,
            largest_addition,
            round_count: phase_rounds.len(),
            reject_count: phase_rounds
                .iter()
                .filter(|r| r.verdict == Some(Verdict::Reject))
                .count(),
            release_count: releases.iter().filter(|r| r.phase == *phase).count(),
        });
    }

    let mut release_stats = Vec::with_capacity(releases.len());
    for r in &releases {
        release_stats.push(ReleaseStats {
            tag: r.tag.clone(),
            phase: r.phase.clone(),
            commit: r.commit.clone(),
            artefact_count: repo.commit_snapshot(&r.commit)?.len(),
        });
    }

    Ok(ProjectStats {
        project: repo.config().project.clone(),
        current_phase: repo.current_phase(),
        current_cycle: repo.config().current_cycle,
        phases,
        releases: release_stats,
    })
}

/// Aligned plain-text rendering, one row per phase then one per release.
pub fn render_table(stats: &ProjectStats) -> String {
    let header = [
        "phase", "cycles", "commits", "branches", "merges", "artefacts", "narratives",
        "maxNarr", "maxVers", "maxAdd", "rounds", "rejects", "releases",
    ];
    let mut rows: Vec<Vec<String>> = vec![header.iter().map(|h| h.to_string()).collect()];
    for p in &stats.phases {
        rows.push(vec![
            p.phase.to_string(),
            p.cycle_count.to_string(),
            p.commit_count.to_string(),
            p.branch_count.to_string(),
            p.merge_count.to_string(),
            p.artefact_count.to_string(),
            p.narrative_count.to_string(),
            p.max_narratives.to_string(),
            p.max_content_versions.to_string(),
            p.largest_addition.to_string(),
            p.round_count.to_string(),
            p.reject_count.to_string(),
            p.release_count.to_string(),
        ]);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|i| rows.iter().map(|r| r[i].len()).max().unwrap_or(0))
        .collect();

    let mut out = format!(
        "project {}  phase {}  cycle {}\n",
        stats.project, stats.current_phase, stats.current_cycle
    );
    for row in &rows {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    if !stats.releases.is_empty() {
        out.push('\n');
        let tag_w = stats.releases.iter().map(|r| r.tag.len()).max().unwrap_or(0).max(3);
        let _ = writeln!(out, "{:<tag_w$}  {:<5}  {:<12}  artefacts", "tag", "phase", "commit");
        for r in &stats.releases {
            let _ = writeln!(
                out,
                "{:<tag_w$}  {:<5}  {:<12}  {:>9}",
                r.tag,
                r.phase.to_string(),
                r.commit.short(),
                r.artefact_count
            );
        }
    }
    out
}
