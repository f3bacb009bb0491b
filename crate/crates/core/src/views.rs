//! JSON documents shared by the CLI (`--json`) and the HTTP service, so both
//! front-ends emit the same bytes for the same repository state.

use serde_json::{json, Value};

use crate::artefact::{get_object, get_ritl, version_chain, Narrative};
use crate::canonical::to_canonical_string;
use crate::consensus::VoteRound;
use crate::error::Result;
use crate::store::Repository;
use crate::workflow::{compute_stats, PhaseId};
use crate::{ArtefactId, Digest};

/// Canonical text of a view document.
pub fn render(value: &Value) -> Result<String> {
    to_canonical_string(value)
}

pub fn project(repo: &Repository) -> Result<Value> {
    let (phase, branch) = repo.head_ref()?;
    let head = repo.head_commit()?;
    let mut v = serde_json::to_value(repo.config())?;
    v["head"] = json!({
        "phase": phase,
        "branch": branch,
        "commit": head,
    });
    v["currentPhaseId"] = json!(repo.current_phase());
    Ok(v)
}

pub fn stats(repo: &Repository) -> Result<Value> {
    Ok(serde_json::to_value(compute_stats(repo)?)?)
}

pub fn log(repo: &Repository, phase: &PhaseId, branch: &str) -> Result<Value> {
    let entries = repo.log(&format!("{phase}/{branch}"))?;
    let mut out = Vec::with_capacity(entries.len());
    for (id, commit) in entries {
        let mut v = serde_json::to_value(&commit)?;
        v["id"] = json!(id);
        out.push(v);
    }
    Ok(Value::Array(out))
}

pub fn artefact(repo: &Repository, id: &ArtefactId) -> Result<Value> {
    let a = repo.artefact(id)?;
    let mut narratives = Vec::with_capacity(a.list_of_tags.len());
    for n in &a.list_of_tags {
        let narrative: Narrative = get_object(repo.objects(), n)?;
        let mut v = serde_json::to_value(narrative)?;
        v["id"] = json!(n);
        narratives.push(v);
    }
    let ritl: Vec<Value> = get_ritl(repo.objects(), id)?
        .into_iter()
        .map(|(n, a)| json!({ "narrative": n, "action": a }))
        .collect();
    let chain: Vec<Digest> = version_chain(repo.objects(), id)?
        .into_iter()
        .map(|(v, _)| v)
        .collect();
    Ok(json!({
        "id": id,
        "artefact": a,
        "narratives": narratives,
        "ritl": ritl,
        "versionChain": chain,
    }))
}

pub fn releases(repo: &Repository) -> Result<Value> {
    Ok(serde_json::to_value(repo.releases()?)?)
}

pub fn round(round: &VoteRound) -> Result<Value> {
    let mut v = serde_json::to_value(round)?;
    let live = round.aggregate().ok();
    v["live"] = match live {
        Some(o) => json!({
            "score": o.score,
            "disagreement": o.disagreement,
            "verdict": o.verdict(&round.config),
        }),
        None => Value::Null,
    };
    Ok(v)
}

pub fn rounds(repo: &Repository) -> Result<Value> {
    let all = repo.rounds()?;
    let mut out = Vec::with_capacity(all.len());
    for r in &all {
        out.push(round(r)?);
    }
    Ok(Value::Array(out))
}
