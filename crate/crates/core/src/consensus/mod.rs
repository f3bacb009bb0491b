//! Vote rounds that gate versioning decisions.
//!
//! A round collects one preference ballot per group member for a decision
//! subject, aggregates them with the configured strategy and closes with a
//! verdict. The verdict is a pure function of the stored ballots, config and
//! group, so any closed round can be recomputed and checked.

pub mod math;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::artefact::ResearcherId;
use crate::canonical::{to_canonical_bytes, Digest, Timestamp};
use crate::error::{Error, Result};
use crate::workflow::PhaseId;
use crate::Pref;

/// Slack applied to threshold comparisons so that boundary cases such as
/// `dis({0.8, 0.4}) <= 0.4` are decided as written rather than by rounding.
pub const GATE_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SubjectKind {
    ArtefactValidation,
    CycleClose,
    PhaseAdvance,
    Release,
    Merge,
}

impl SubjectKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SubjectKind::ArtefactValidation => "ARTEFACT_VALIDATION",
            SubjectKind::CycleClose => "CYCLE_CLOSE",
            SubjectKind::PhaseAdvance => "PHASE_ADVANCE",
            SubjectKind::Release => "RELEASE",
            SubjectKind::Merge => "MERGE",
        }
    }
}

impl fmt::Display for SubjectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SubjectKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_uppercase().replace('-', "_");
        serde_json::from_value(serde_json::Value::String(norm))
            .map_err(|_| Error::InvalidGateConfig(format!("unknown subject kind {s:?}")))
    }
}

/// What a round decides on: an artefact version or a commit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionSubject {
    pub kind: SubjectKind,
    pub target: Digest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Strategy {
    Average,
    Plurality,
    LeastMisery,
    Quadratic,
    ExpertWeighted,
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_uppercase().replace('-', "_");
        serde_json::from_value(serde_json::Value::String(norm))
            .map_err(|_| Error::InvalidGateConfig(format!("unknown strategy {s:?}")))
    }
}

/// Accept rule parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GateConfig {
    pub strategy: Strategy,
    pub pref_threshold: f64,
    /// `None` disables the disagreement gate.
    #[serde(with = "dis_threshold")]
    pub dis_threshold: Option<f64>,
    pub quorum: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig {
            strategy: Strategy::Average,
            pref_threshold: 0.6,
            dis_threshold: Some(0.4),
            quorum: 1.0,
        }
    }
}

/// Per-round changes to the project's default gate. `disThreshold` takes a
/// number or the string `"DISABLED"`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GateOverrides {
    #[serde(default)]
    pub strategy: Option<Strategy>,
    #[serde(default)]
    pub pref_threshold: Option<f64>,
    #[serde(default)]
    pub dis_threshold: Option<serde_json::Value>,
    #[serde(default)]
    pub quorum: Option<f64>,
}

impl GateOverrides {
    pub fn apply(&self, base: GateConfig) -> Result<GateConfig> {
        let mut config = base;
        if let Some(s) = self.strategy {
            config.strategy = s;
        }
        if let Some(p) = self.pref_threshold {
            config.pref_threshold = p;
        }
        if let Some(d) = &self.dis_threshold {
            config.dis_threshold = match d {
                serde_json::Value::String(s) if s == "DISABLED" => None,
                serde_json::Value::Number(n) => n.as_f64(),
                other => return Err(Error::InvalidGateConfig(format!("disThreshold {other}"))),
            };
        }
        if let Some(q) = self.quorum {
            config.quorum = q;
        }
        config.validate()?;
        Ok(config)
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.pref_threshold) {
            return Err(Error::InvalidGateConfig(format!(
                "prefThreshold {} outside [0, 1]",
                self.pref_threshold
            )));
        }
        if let Some(d) = self.dis_threshold {
            if !unit(d) {
                return Err(Error::InvalidGateConfig(format!("disThreshold {d} outside [0, 1]")));
            }
        }
        if !(self.quorum > 0.0 && self.quorum <= 1.0) {
            return Err(Error::InvalidGateConfig(format!(
                "quorum {} outside (0, 1]",
                self.quorum
            )));
        }
        Ok(())
    }
}

mod dis_threshold {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        match v {
            Some(x) => s.serialize_f64(*x),
            None => s.serialize_str("DISABLED"),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<f64>, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(x) => Ok(Some(x)),
            Raw::Str(s) if s == "DISABLED" => Ok(None),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("bad disThreshold {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceBallot {
    pub voter: ResearcherId,
    pub subject: DecisionSubject,
    pub pref: Pref,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credits: Option<u64>,
    pub timestamp: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RoundState {
    Open,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Accept,
    Reject,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Accept => "ACCEPT",
            Verdict::Reject => "REJECT",
        })
    }
}

/// Aggregated score and, for groups of two or more, the disagreement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub score: Pref,
    pub disagreement: Option<Pref>,
}

impl Outcome {
    pub fn verdict(&self, config: &GateConfig) -> Verdict {
        let pref_ok = self.score >= config.pref_threshold - GATE_EPSILON;
        let dis_ok = match (config.dis_threshold, self.disagreement) {
            (Some(limit), Some(d)) => d <= limit + GATE_EPSILON,
            _ => true,
        };
        if pref_ok && dis_ok {
            Verdict::Accept
        } else {
            Verdict::Reject
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct VoteRound {
    pub id: String,
    pub subject: DecisionSubject,
    pub phase: PhaseId,
    pub group: Vec<ResearcherId>,
    /// Hierarchy level of each group member when the round opened.
    pub hierarchy: BTreeMap<ResearcherId, u32>,
    pub config: GateConfig,
    pub ballots: Vec<PreferenceBallot>,
    pub state: RoundState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<Pref>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disagreement: Option<Pref>,
    pub opened_at: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closed_at: Option<Timestamp>,
}

/// `(1/|G|) Σ pref(u)` over a group, requiring a ballot from every member.
pub fn gpref(ballots: &[PreferenceBallot], group: &[ResearcherId]) -> Result<Pref> {
    if group.is_empty() {
        return Err(Error::EmptyGroup);
    }
    math::gpref(&prefs_for(ballots, group)?)
}

/// Pairwise disagreement over a group, requiring a ballot from every member.
pub fn dis(ballots: &[PreferenceBallot], group: &[ResearcherId]) -> Result<Pref> {
    if group.len() < 2 {
        return Err(Error::GroupTooSmall);
    }
    math::dis(&prefs_for(ballots, group)?)
}

fn prefs_for(ballots: &[PreferenceBallot], group: &[ResearcherId]) -> Result<Vec<Pref>> {
    let mut missing = Vec::new();
    let mut prefs = Vec::with_capacity(group.len());
    for member in group {
        match ballots.iter().rev().find(|b| &b.voter == member) {
            Some(b) => prefs.push(b.pref),
            None => missing.push(member.to_string()),
        }
    }
    if missing.is_empty() {
        Ok(prefs)
    } else {
        Err(Error::MissingBallot(missing))
    }
}

fn check_pref(pref: Pref) -> Result<()> {
    if pref.is_finite() && (0.0..=1.0).contains(&pref) {
        Ok(())
    } else {
        Err(Error::PrefOutOfRange(pref))
    }
}

impl VoteRound {
    pub fn open(
        id: String,
        subject: DecisionSubject,
        phase: PhaseId,
        group: Vec<(ResearcherId, u32)>,
        config: GateConfig,
        now: Timestamp,
    ) -> Result<Self> {
        if group.is_empty() {
            return Err(Error::EmptyGroup);
        }
        config.validate()?;
        let mut members = Vec::with_capacity(group.len());
        let mut hierarchy = BTreeMap::new();
        for (id, level) in group {
            if hierarchy.insert(id.clone(), level).is_some() {
                return Err(Error::InvalidRoster(format!("{id} listed twice in group")));
            }
            members.push(id);
        }
        Ok(VoteRound {
            id,
            subject,
            phase,
            group: members,
            hierarchy,
            config,
            ballots: Vec::new(),
            state: RoundState::Open,
            verdict: None,
            score: None,
            disagreement: None,
            opened_at: now,
            closed_at: None,
        })
    }

    pub fn is_closed(&self) -> bool {
        self.state == RoundState::Closed
    }

    /// Records a ballot, replacing any earlier ballot by the same voter.
    pub fn cast(&mut self, voter: ResearcherId, pref: Pref, credits: Option<u64>, now: Timestamp) -> Result<()> {
        if self.is_closed() {
            return Err(Error::RoundClosed(self.id.clone()));
        }
        if !self.group.contains(&voter) {
            return Err(Error::VoterNotInGroup(voter.to_string()));
        }
        check_pref(pref)?;
        self.ballots.retain(|b| b.voter != voter);
        self.ballots.push(PreferenceBallot {
            voter,
            subject: self.subject.clone(),
            pref,
            credits,
            timestamp: now,
        });
        Ok(())
    }

    fn required_ballots(&self) -> usize {
        let needed = (self.config.quorum * self.group.len() as f64 - GATE_EPSILON).ceil();
        (needed.max(1.0) as usize).min(self.group.len())
    }

    /// Ballots from current group members, in group order.
    fn effective_ballots(&self) -> Vec<&PreferenceBallot> {
        self.group
            .iter()
            .filter_map(|m| self.ballots.iter().find(|b| &b.voter == m))
            .collect()
    }

    /// Strategy score and disagreement over the cast ballots.
    pub fn aggregate(&self) -> Result<Outcome> {
        let ballots = self.effective_ballots();
        let required = self.required_ballots();
        if ballots.len() < required {
            return Err(Error::QuorumNotMet {
                cast: ballots.len(),
                required,
            });
        }
        for b in &ballots {
            check_pref(b.pref)?;
        }
        let prefs: Vec<Pref> = ballots.iter().map(|b| b.pref).collect();
        let score = match self.config.strategy {
            Strategy::Average => math::gpref(&prefs)?,
            Strategy::Plurality => math::plurality(&prefs)?,
            Strategy::LeastMisery => math::least_misery(&prefs)?,
            Strategy::Quadratic => {
                let pairs: Vec<(u64, Pref)> =
                    ballots.iter().map(|b| (b.credits.unwrap_or(1), b.pref)).collect();
                math::quadratic(&pairs)?
            }
            Strategy::ExpertWeighted => {
                let pairs: Vec<(u32, Pref)> = ballots
                    .iter()
                    .map(|b| (self.hierarchy.get(&b.voter).copied().unwrap_or(0), b.pref))
                    .collect();
                math::expert_weighted(&pairs)?
            }
        };
        let disagreement = if prefs.len() >= 2 {
            Some(math::dis(&prefs)?)
        } else {
            None
        };
        Ok(Outcome { score, disagreement })
    }

    /// Verdict implied by the stored ballots, without touching the round.
    pub fn recompute(&self) -> Result<Verdict> {
        Ok(self.aggregate()?.verdict(&self.config))
    }

    /// Closes the round with its verdict. Closing a closed round returns the
    /// stored verdict.
    pub fn decide(&mut self, now: Timestamp) -> Result<Verdict> {
        if let (RoundState::Closed, Some(v)) = (self.state, self.verdict) {
            return Ok(v);
        }
        let outcome = self.aggregate()?;
        let verdict = outcome.verdict(&self.config);
        self.score = Some(outcome.score);
        self.disagreement = outcome.disagreement;
        self.verdict = Some(verdict);
        self.state = RoundState::Closed;
        self.closed_at = Some(now);
        Ok(verdict)
    }

    pub fn canonical_bytes(&self) -> Result<Vec<u8>> {
        to_canonical_bytes(self)
    }

    pub fn digest(&self) -> Result<Digest> {
        Ok(Digest::of(&self.canonical_bytes()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(ms: i64) -> Timestamp {
        Timestamp::from_millis(1_680_000_000_000 + ms)
    }

    fn subject() -> DecisionSubject {
        DecisionSubject {
            kind: SubjectKind::CycleClose,
            target: Digest::of(b"head"),
        }
    }

    fn round(config: GateConfig) -> VoteRound {
        VoteRound::open(
            "r1".into(),
            subject(),
            "G1".parse().unwrap(),
            vec![("R1".into(), 0), ("R0".into(), 1)],
            config,
            ts(0),
        )
        .unwrap()
    }

    fn voted(config: GateConfig, r1: f64, r0: f64) -> VoteRound {
        let mut r = round(config);
        r.cast("R1".into(), r1, None, ts(1)).unwrap();
        r.cast("R0".into(), r0, None, ts(2)).unwrap();
        r
    }

    #[test]
    fn open_starts_empty_and_rejects_empty_group() {
        let r = round(GateConfig::default());
        assert_eq!(r.state, RoundState::Open);
        assert!(r.ballots.is_empty());
        let err = VoteRound::open(
            "r2".into(),
            subject(),
            "G1".parse().unwrap(),
            vec![],
            GateConfig::default(),
            ts(0),
        )
        .unwrap_err();
        assert_eq!(err.code(), "EmptyGroup");
    }

    #[test]
    fn cast_validates_and_replaces() {
        let mut r = round(GateConfig::default());
        r.cast("R0".into(), 0.3, None, ts(1)).unwrap();
        assert_eq!(r.ballots.len(), 1);
        r.cast("R0".into(), 0.9, None, ts(2)).unwrap();
        assert_eq!(r.ballots.len(), 1);
        assert_eq!(r.ballots[0].pref, 0.9);
        assert_eq!(r.cast("R9".into(), 0.5, None, ts(3)).unwrap_err().code(), "VoterNotInGroup");
        assert_eq!(r.cast("R1".into(), 1.5, None, ts(3)).unwrap_err().code(), "PrefOutOfRange");
        assert_eq!(r.cast("R1".into(), f64::NAN, None, ts(3)).unwrap_err().code(), "PrefOutOfRange");
    }

    #[test]
    fn average_gate_examples() {
        let cfg = GateConfig {
            strategy: Strategy::Average,
            pref_threshold: 0.6,
            dis_threshold: Some(0.5),
            quorum: 1.0,
        };
        let mut r = voted(cfg, 0.8, 0.4);
        let out = r.aggregate().unwrap();
        assert!((out.score - 0.6).abs() < 1e-12);
        assert!((out.disagreement.unwrap() - 0.4).abs() < 1e-12);
        assert_eq!(r.decide(ts(5)).unwrap(), Verdict::Accept);

        let strict = GateConfig {
            dis_threshold: Some(0.3),
            ..cfg
        };
        assert_eq!(voted(strict, 0.8, 0.4).decide(ts(5)).unwrap(), Verdict::Reject);
    }

    #[test]
    fn boundary_ties_are_inclusive() {
        // dis = 0.4 exactly against the default 0.4 limit.
        let mut r = voted(GateConfig::default(), 0.8, 0.4);
        assert_eq!(r.decide(ts(5)).unwrap(), Verdict::Accept);
    }

    #[test]
    fn unanimous_full_preference_always_accepts() {
        for strategy in [
            Strategy::Average,
            Strategy::Plurality,
            Strategy::LeastMisery,
            Strategy::Quadratic,
            Strategy::ExpertWeighted,
        ] {
            let cfg = GateConfig {
                strategy,
                pref_threshold: 1.0,
                dis_threshold: Some(0.0),
                quorum: 1.0,
            };
            assert_eq!(voted(cfg, 1.0, 1.0).decide(ts(5)).unwrap(), Verdict::Accept);
        }
    }

    #[test]
    fn expert_weighting_uses_hierarchy_snapshot() {
        let cfg = GateConfig {
            strategy: Strategy::ExpertWeighted,
            dis_threshold: None,
            ..GateConfig::default()
        };
        let r = voted(cfg, 1.0, 0.4);
        assert!((r.aggregate().unwrap().score - 0.8).abs() < 1e-12);
    }

    #[test]
    fn quorum_counts_group_members() {
        let mut r = round(GateConfig::default());
        r.cast("R1".into(), 0.9, None, ts(1)).unwrap();
        assert_eq!(r.decide(ts(2)).unwrap_err().code(), "QuorumNotMet");
        assert_eq!(r.state, RoundState::Open);

        let half = GateConfig {
            quorum: 0.5,
            ..GateConfig::default()
        };
        let mut r = round(half);
        r.cast("R1".into(), 0.9, None, ts(1)).unwrap();
        let out = r.aggregate().unwrap();
        assert_eq!(out.disagreement, None);
        assert_eq!(r.decide(ts(2)).unwrap(), Verdict::Accept);
    }

    #[test]
    fn decide_is_idempotent_and_closes() {
        let mut r = voted(GateConfig::default(), 0.9, 0.8);
        let v = r.decide(ts(5)).unwrap();
        let closed_at = r.closed_at;
        assert_eq!(r.decide(ts(9)).unwrap(), v);
        assert_eq!(r.closed_at, closed_at);
        assert_eq!(r.cast("R0".into(), 0.1, None, ts(10)).unwrap_err().code(), "RoundClosed");
        assert_eq!(r.recompute().unwrap(), v);
    }

    #[test]
    fn group_level_functions_require_every_ballot() {
        let r = round(GateConfig::default());
        let mut partial = r.clone();
        partial.cast("R1".into(), 0.5, None, ts(1)).unwrap();
        match gpref(&partial.ballots, &partial.group).unwrap_err() {
            Error::MissingBallot(who) => assert_eq!(who, vec!["R0".to_owned()]),
            other => panic!("unexpected {other}"),
        }
        assert_eq!(dis(&partial.ballots, &partial.group[..1]).unwrap_err().code(), "GroupTooSmall");
        assert_eq!(gpref(&[], &[]).unwrap_err().code(), "EmptyGroup");
        let full = voted(GateConfig::default(), 0.8, 0.4);
        assert!((gpref(&full.ballots, &full.group).unwrap() - 0.6).abs() < 1e-12);
        assert!((dis(&full.ballots, &full.group).unwrap() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn gate_config_serializes_disabled_threshold() {
        let cfg = GateConfig {
            dis_threshold: None,
            ..GateConfig::default()
        };
        let s = crate::canonical::to_canonical_string(&cfg).unwrap();
        assert_eq!(
            s,
            r#"{"disThreshold":"DISABLED","prefThreshold":0.6,"quorum":1.0,"strategy":"AVERAGE"}"#
        );
        let back: GateConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, cfg);
        assert!(GateConfig {
            quorum: 0.0,
            ..cfg
        }
        .validate()
        .is_err());
    }

    #[test]
    fn parses_strategy_and_kind_names() {
        assert_eq!("least-misery".parse::<Strategy>().unwrap(), Strategy::LeastMisery);
        assert_eq!("cycle_close".parse::<SubjectKind>().unwrap(), SubjectKind::CycleClose);
        assert!("median".parse::<Strategy>().is_err());
    }
}
