use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Canonical stage labels, in workflow order.
pub const STAGE_LABELS: [&str; 5] = [
    "problem_statement",
    "data_acquisition",
    "data_management",
    "analysis",
    "reporting",
];

/// A workflow phase: one stage, or a contiguous run of merged stages.
///
/// Written `G1` for a single stage and `G3-4` for merged stages 3 and 4.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PhaseId {
    first: u8,
    last: u8,
}

impl PhaseId {
    pub fn single(stage: u8) -> Result<Self> {
        Self::span(stage, stage)
    }

    pub fn span(first: u8, last: u8) -> Result<Self> {
        if (1..=5).contains(&first) && (first..=5).contains(&last) {
            Ok(PhaseId { first, last })
        } else {
            Err(Error::InvalidPhaseConfig(format!("stages {first}..{last} out of range")))
        }
    }

    pub fn stages(&self) -> std::ops::RangeInclusive<u8> {
        self.first..=self.last
    }

    pub fn labels(&self) -> Vec<&'static str> {
        self.stages().map(|s| STAGE_LABELS[usize::from(s) - 1]).collect()
    }
}

impl fmt::Display for PhaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.first == self.last {
            write!(f, "G{}", self.first)
        } else {
            write!(f, "G{}-{}", self.first, self.last)
        }
    }
}

impl FromStr for PhaseId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::UnknownPhase(s.to_owned());
        if let Some(i) = STAGE_LABELS.iter().position(|l| *l == s) {
            return PhaseId::single(i as u8 + 1);
        }
        let body = s.strip_prefix(['G', 'g']).ok_or_else(bad)?;
        let (a, b) = match body.split_once('-') {
            Some((a, b)) => (a, b),
            None => (body, body),
        };
        let first: u8 = a.parse().map_err(|_| bad())?;
        let last: u8 = b.parse().map_err(|_| bad())?;
        PhaseId::span(first, last).map_err(|_| bad())
    }
}

impl Serialize for PhaseId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PhaseId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Ordered phases covering the five stages exactly once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhaseConfig(Vec<PhaseId>);

impl PhaseConfig {
    pub fn new(phases: Vec<PhaseId>) -> Result<Self> {
        let mut next = 1u8;
        for p in &phases {
            if p.first != next {
                return Err(Error::InvalidPhaseConfig(format!(
                    "phase {p} out of order: expected a phase starting at stage {next}"
                )));
            }
            next = p.last + 1;
        }
        if next != 6 {
            return Err(Error::InvalidPhaseConfig(format!(
                "stages {next}..5 ({}) are not covered",
                STAGE_LABELS[usize::from(next) - 1..].join(", ")
            )));
        }
        Ok(PhaseConfig(phases))
    }

    /// The unmerged five-phase workflow.
    pub fn standard() -> Self {
        PhaseConfig((1..=5).map(|s| PhaseId { first: s, last: s }).collect())
    }

    /// Parses a comma-separated list such as `G1,G2,G3-4,G5`.
    pub fn parse(spec: &str) -> Result<Self> {
        let phases = spec
            .split(',')
            .map(|p| {
                p.trim()
                    .parse()
                    .map_err(|_| Error::InvalidPhaseConfig(format!("bad phase {p:?}")))
            })
            .collect::<Result<Vec<PhaseId>>>()?;
        Self::new(phases)
    }

    pub fn phases(&self) -> &[PhaseId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, phase: &PhaseId) -> bool {
        self.0.contains(phase)
    }

    pub fn index_of(&self, phase: &PhaseId) -> Option<usize> {
        self.0.iter().position(|p| p == phase)
    }

    pub fn get(&self, index: usize) -> Option<&PhaseId> {
        self.0.get(index)
    }
}

impl fmt::Display for PhaseConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|p| p.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

impl Serialize for PhaseConfig {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

impl<'de> Deserialize<'de> for PhaseConfig {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let phases = Vec::<PhaseId>::deserialize(d)?;
        PhaseConfig::new(phases).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_has_five_phases() {
        let c = PhaseConfig::standard();
        assert_eq!(c.len(), 5);
        assert_eq!(c.to_string(), "G1,G2,G3,G4,G5");
    }

    #[test]
    fn merged_config() {
        let c = PhaseConfig::parse("G1,G2,G3-4,G5").unwrap();
        assert_eq!(c.len(), 4);
        assert_eq!(c.phases()[2].labels(), vec!["data_management", "analysis"]);
        assert_eq!(c.index_of(&"G5".parse().unwrap()), Some(3));
    }

    #[test]
    fn rejects_missing_duplicate_and_unordered() {
        for bad in ["G1,G2,G3,G4", "G1,G1,G2,G3,G4,G5", "G2,G1,G3,G4,G5", "G1,G2-4,G4,G5", "G1,G9"] {
            let err = PhaseConfig::parse(bad).unwrap_err();
            assert_eq!(err.code(), "InvalidPhaseConfig", "{bad}");
        }
    }

    #[test]
    fn phase_ids_parse_labels_and_ranges() {
        assert_eq!("reporting".parse::<PhaseId>().unwrap().to_string(), "G5");
        assert_eq!("g3-4".parse::<PhaseId>().unwrap().to_string(), "G3-4");
        assert!("G4-3".parse::<PhaseId>().is_err());
        assert!("X1".parse::<PhaseId>().is_err());
    }
}
