//! Immutable artefact object model: artefacts, metadata, narratives and
//! action records, plus the annotation operations over them.
//!
//! Every annotation produces a new artefact version linked to the previous
//! one through `predecessor`; stored versions are never rewritten.

use std::collections::BTreeMap;
use std::fmt;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::canonical::{to_typed_canonical_bytes, Digest, Timestamp};
use crate::error::{Error, Result};
use crate::workflow::{PhaseConfig, PhaseId};
use crate::{ActionRecordId, ArtefactId, NarrativeId};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ResearcherId(String);

impl ResearcherId {
    pub fn new(id: impl Into<String>) -> Self {
        ResearcherId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ResearcherId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ResearcherId {
    fn from(s: &str) -> Self {
        ResearcherId(s.to_owned())
    }
}

/// The document an artefact wraps: inline text, or a blob in the object store.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum DocumentRef {
    Inline {
        text: String,
    },
    Blob {
        digest: Digest,
        #[serde(rename = "mediaType")]
        media_type: String,
        size: u64,
    },
}

impl DocumentRef {
    pub fn text(text: impl Into<String>) -> Self {
        DocumentRef::Inline { text: text.into() }
    }
}

/// Workflow phase and project an artefact was produced in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectPhase {
    pub phase: PhaseId,
    pub project: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetadataOrigin {
    Automatic,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub key: String,
    pub value: String,
    pub origin: MetadataOrigin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub producer: Option<ResearcherId>,
    pub timestamp: Timestamp,
}

impl Metadata {
    pub fn manual(key: &str, value: &str, producer: ResearcherId, timestamp: Timestamp) -> Self {
        Metadata {
            key: key.to_owned(),
            value: value.to_owned(),
            origin: MetadataOrigin::Manual,
            producer: Some(producer),
            timestamp,
        }
    }

    pub fn automatic(key: &str, value: &str, timestamp: Timestamp) -> Self {
        Metadata {
            key: key.to_owned(),
            value: value.to_owned(),
            origin: MetadataOrigin::Automatic,
            producer: None,
            timestamp,
        }
    }

    fn identity(&self) -> (&str, Timestamp, Option<&ResearcherId>) {
        (&self.key, self.timestamp, self.producer.as_ref())
    }
}

/// Researcher commentary attached to an artefact. Stored as its own object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Narrative {
    pub content: DocumentRef,
    pub narrative: String,
    pub producer: ResearcherId,
    pub timestamp: Timestamp,
}

impl Narrative {
    /// A narrative whose document is its own text.
    pub fn text(text: &str, producer: ResearcherId, timestamp: Timestamp) -> Self {
        Narrative {
            content: DocumentRef::text(text),
            narrative: text.to_owned(),
            producer,
            timestamp,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct OperationDescriptor {
    pub name: String,
    #[serde(default)]
    pub parameters: BTreeMap<String, String>,
    #[serde(default)]
    pub assessment_scores: BTreeMap<String, f64>,
}

/// Provenance of an operation that turned one artefact into another.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub original: ArtefactId,
    pub result: ArtefactId,
    pub operation: OperationDescriptor,
    pub producer: ResearcherId,
    pub timestamp: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Artefact {
    pub content: DocumentRef,
    pub producer: ResearcherId,
    pub timestamp: Timestamp,
    pub project_wf_ph: ProjectPhase,
    pub meta_data: Vec<Metadata>,
    pub list_of_tags: Vec<NarrativeId>,
    pub list_of_actions: Vec<ActionRecordId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predecessor: Option<ArtefactId>,
}

/// Records that live in the object store as typed canonical JSON.
pub trait StoredObject: Serialize + DeserializeOwned {
    const KIND: &'static str;

    fn canonical_bytes(&self) -> Result<Vec<u8>> {
        to_typed_canonical_bytes(Self::KIND, self)
    }

    fn id(&self) -> Digest {
        Digest::of(&self.canonical_bytes().expect("stored objects serialize"))
    }
}

impl StoredObject for Artefact {
    const KIND: &'static str = "artefact";
}

impl StoredObject for Narrative {
    const KIND: &'static str = "narrative";
}

impl StoredObject for ActionRecord {
    const KIND: &'static str = "action";
}

/// Content-addressed byte storage.
pub trait ObjectStore {
    fn get(&self, id: &Digest) -> Result<Option<Vec<u8>>>;

    /// Stores `bytes` under their digest. Existing objects are left untouched.
    fn put(&mut self, bytes: &[u8]) -> Result<Digest>;

    fn has(&self, id: &Digest) -> Result<bool> {
        Ok(self.get(id)?.is_some())
    }
}

/// In-memory object store, used by tests and dry runs.
#[derive(Debug, Default, Clone)]
pub struct MemoryObjects {
    objects: BTreeMap<Digest, Vec<u8>>,
}

impl MemoryObjects {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }
}

impl ObjectStore for MemoryObjects {
    fn get(&self, id: &Digest) -> Result<Option<Vec<u8>>> {
        Ok(self.objects.get(id).cloned())
    }

    fn put(&mut self, bytes: &[u8]) -> Result<Digest> {
        let id = Digest::of(bytes);
        self.objects.entry(id.clone()).or_insert_with(|| bytes.to_vec());
        Ok(id)
    }
}

pub fn put_object<T: StoredObject>(store: &mut impl ObjectStore, value: &T) -> Result<Digest> {
    store.put(&value.canonical_bytes()?)
}

pub fn get_object<T: StoredObject>(store: &impl ObjectStore, id: &Digest) -> Result<T> {
    let bytes = store
        .get(id)?
        .ok_or_else(|| Error::UnresolvedReference(id.to_string()))?;
    decode_object(id, &bytes)
}

pub(crate) fn decode_object<T: StoredObject>(id: &Digest, bytes: &[u8]) -> Result<T> {
    let corrupt = |reason: String| Error::CorruptObject {
        id: id.to_string(),
        reason,
    };
    let mut tree: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|e| corrupt(e.to_string()))?;
    let kind = tree
        .as_object_mut()
        .and_then(|m| m.remove("type"))
        .ok_or_else(|| corrupt("missing type".into()))?;
    if kind != T::KIND {
        return Err(corrupt(format!("expected {}, found {kind}", T::KIND)));
    }
    serde_json::from_value(tree).map_err(|e| corrupt(e.to_string()))
}

fn require(store: &impl ObjectStore, id: &Digest) -> Result<()> {
    if store.has(id)? {
        Ok(())
    } else {
        Err(Error::UnresolvedReference(id.to_string()))
    }
}

/// Canonical bytes of `artefact`, checking that everything it references is
/// present in `store`. Hashing the result yields the artefact id.
pub fn canonicalize(artefact: &Artefact, store: &impl ObjectStore) -> Result<Vec<u8>> {
    for id in artefact.list_of_tags.iter().chain(&artefact.list_of_actions) {
        require(store, id)?;
    }
    if let Some(pred) = &artefact.predecessor {
        require(store, pred)?;
    }
    if let DocumentRef::Blob { digest, .. } = &artefact.content {
        require(store, digest)?;
    }
    artefact.canonical_bytes()
}

/// Builds a fresh artefact with no annotations and no predecessor.
pub fn create_artefact(
    content: DocumentRef,
    producer: ResearcherId,
    phase: &PhaseId,
    project: &str,
    phases: &PhaseConfig,
    now: Timestamp,
) -> Result<Artefact> {
    if !phases.contains(phase) {
        return Err(Error::UnknownPhase(phase.to_string()));
    }
    Ok(Artefact {
        content,
        producer,
        timestamp: now,
        project_wf_ph: ProjectPhase {
            phase: phase.clone(),
            project: project.to_owned(),
        },
        meta_data: Vec::new(),
        list_of_tags: Vec::new(),
        list_of_actions: Vec::new(),
        predecessor: None,
    })
}

/// Validates and stores an artefact version, returning its id.
pub fn store_artefact(store: &mut impl ObjectStore, artefact: &Artefact) -> Result<ArtefactId> {
    let bytes = canonicalize(artefact, store)?;
    store.put(&bytes)
}

pub fn store_narrative(store: &mut impl ObjectStore, narrative: &Narrative) -> Result<NarrativeId> {
    if narrative.narrative.trim().is_empty() {
        return Err(Error::EmptyNarrative);
    }
    if let DocumentRef::Blob { digest, .. } = &narrative.content {
        require(store, digest)?;
    }
    put_object(store, narrative)
}

/// Stores an action record. Both sides must already be stored.
pub fn record_action(store: &mut impl ObjectStore, action: &ActionRecord) -> Result<ActionRecordId> {
    if action.original == action.result {
        return Err(Error::InvalidAction);
    }
    require(store, &action.original)?;
    require(store, &action.result)?;
    put_object(store, action)
}

fn successor(
    store: &impl ObjectStore,
    id: &ArtefactId,
    at: Timestamp,
) -> Result<Artefact> {
    let previous: Artefact = get_object(store, id)?;
    if at <= previous.timestamp {
        return Err(Error::NonMonotonicTimestamp {
            previous: previous.timestamp.to_string(),
            new: at.to_string(),
        });
    }
    Ok(Artefact {
        timestamp: at,
        predecessor: Some(id.clone()),
        ..previous
    })
}

fn check_metadata(entry: &Metadata, existing: &[Metadata]) -> Result<()> {
    if entry.key.is_empty() {
        return Err(Error::EmptyMetadataKey);
    }
    if existing.iter().any(|m| m.identity() == entry.identity()) {
        return Err(Error::DuplicateMetadata {
            key: entry.key.clone(),
            timestamp: entry.timestamp.to_string(),
            producer: entry
                .producer
                .as_ref()
                .map_or_else(|| "automatic".to_owned(), |p| p.to_string()),
        });
    }
    Ok(())
}

/// Appends `entry` to the metadata of `id`, yielding a new stored version.
pub fn add_metadata(
    store: &mut impl ObjectStore,
    entry: Metadata,
    id: &ArtefactId,
) -> Result<(ArtefactId, Artefact)> {
    let mut next = successor(store, id, entry.timestamp)?;
    check_metadata(&entry, &next.meta_data)?;
    if let Some(p) = &entry.producer {
        next.producer = p.clone();
    }
    next.meta_data.push(entry);
    let new_id = store_artefact(store, &next)?;
    Ok((new_id, next))
}

/// Replaces the most recent entry sharing `entry.key`.
pub fn update_metadata(
    store: &mut impl ObjectStore,
    entry: Metadata,
    id: &ArtefactId,
) -> Result<(ArtefactId, Artefact)> {
    let mut next = successor(store, id, entry.timestamp)?;
    let slot = next
        .meta_data
        .iter()
        .rposition(|m| m.key == entry.key)
        .ok_or_else(|| Error::KeyNotFound(entry.key.clone()))?;
    let mut others = next.meta_data.clone();
    others.remove(slot);
    check_metadata(&entry, &others)?;
    if let Some(p) = &entry.producer {
        next.producer = p.clone();
    }
    next.meta_data[slot] = entry;
    let new_id = store_artefact(store, &next)?;
    Ok((new_id, next))
}

pub fn get_metadata(store: &impl ObjectStore, id: &ArtefactId) -> Result<Vec<Metadata>> {
    let artefact: Artefact = get_object(store, id)?;
    Ok(artefact.meta_data)
}

/// Attaches a researcher narrative together with the action record it
/// interprets. The action must have some version of the target artefact
/// as its original or its result.
pub fn add_ritl(
    store: &mut impl ObjectStore,
    narrative: &Narrative,
    action: &ActionRecordId,
    id: &ArtefactId,
) -> Result<(ArtefactId, Artefact)> {
    let record: ActionRecord = get_object(store, action)?;
    let chain = version_chain(store, id)?;
    let linked = chain
        .iter()
        .any(|(v, _)| record.original == *v || record.result == *v);
    if !linked {
        return Err(Error::ActionMismatch {
            action: action.to_string(),
            artefact: id.to_string(),
        });
    }
    let mut next = successor(store, id, narrative.timestamp)?;
    let narrative_id = store_narrative(store, narrative)?;
    next.producer = narrative.producer.clone();
    next.list_of_tags.push(narrative_id);
    next.list_of_actions.push(action.clone());
    let new_id = store_artefact(store, &next)?;
    Ok((new_id, next))
}

/// Attaches a narrative with no accompanying action.
pub fn add_tag(
    store: &mut impl ObjectStore,
    narrative: &Narrative,
    id: &ArtefactId,
) -> Result<(ArtefactId, Artefact)> {
    let mut next = successor(store, id, narrative.timestamp)?;
    let narrative_id = store_narrative(store, narrative)?;
    next.producer = narrative.producer.clone();
    next.list_of_tags.push(narrative_id);
    let new_id = store_artefact(store, &next)?;
    Ok((new_id, next))
}

/// New version with replaced document content; annotations carry over.
pub fn revise_content(
    store: &mut impl ObjectStore,
    content: DocumentRef,
    producer: ResearcherId,
    id: &ArtefactId,
    now: Timestamp,
) -> Result<(ArtefactId, Artefact)> {
    let mut next = successor(store, id, now)?;
    next.content = content;
    next.producer = producer;
    let new_id = store_artefact(store, &next)?;
    Ok((new_id, next))
}

/// Versions from `id` back to its creation, newest first.
pub fn version_chain(store: &impl ObjectStore, id: &ArtefactId) -> Result<Vec<(ArtefactId, Artefact)>> {
    let mut chain = Vec::new();
    let mut cursor = Some(id.clone());
    while let Some(cur) = cursor {
        let artefact: Artefact = get_object(store, &cur)?;
        cursor = artefact.predecessor.clone();
        chain.push((cur, artefact));
    }
    Ok(chain)
}

/// (narrative, action) pairs attached through [`add_ritl`], oldest first.
///
/// Only `add_ritl` grows the action list, so a version whose action list is
/// one longer than its predecessor's marks one attachment.
pub fn get_ritl(store: &impl ObjectStore, id: &ArtefactId) -> Result<Vec<(Narrative, ActionRecord)>> {
    let chain = version_chain(store, id)?;
    let mut pairs = Vec::new();
    for (i, (_, version)) in chain.iter().enumerate() {
        let before = chain.get(i + 1).map_or(0, |(_, p)| p.list_of_actions.len());
        if version.list_of_actions.len() == before + 1 {
            let (Some(narrative), Some(action)) =
                (version.list_of_tags.last(), version.list_of_actions.last())
            else {
                continue;
            };
            pairs.push((get_object(store, narrative)?, get_object(store, action)?));
        }
    }
    pairs.reverse();
    Ok(pairs)
}

/// Number of distinct documents along the version chain of `id`.
pub fn content_versions(store: &impl ObjectStore, id: &ArtefactId) -> Result<usize> {
    let chain = version_chain(store, id)?;
    let mut seen: Vec<&DocumentRef> = Vec::new();
    for (_, v) in &chain {
        if !seen.contains(&&v.content) {
            seen.push(&v.content);
        }
    }
    Ok(seen.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(s: &str) -> Timestamp {
        s.parse().unwrap()
    }

    fn phases() -> PhaseConfig {
        PhaseConfig::standard()
    }

    fn g1() -> PhaseId {
        "G1".parse().unwrap()
    }

    fn fixture() -> Artefact {
        create_artefact(
            DocumentRef::text("RQ draft"),
            "R0".into(),
            &g1(),
            "P1",
            &phases(),
            ts("2023-03-01T10:00:00Z"),
        )
        .unwrap()
    }

    fn stored(store: &mut MemoryObjects) -> ArtefactId {
        store_artefact(store, &fixture()).unwrap()
    }

    #[test]
    fn create_copies_fields() {
        let a = fixture();
        assert_eq!(a.producer.as_str(), "R0");
        assert_eq!(a.project_wf_ph.phase, g1());
        assert!(a.meta_data.is_empty() && a.list_of_tags.is_empty() && a.list_of_actions.is_empty());
        assert!(a.predecessor.is_none());
    }

    #[test]
    fn create_rejects_unconfigured_phase() {
        let merged = PhaseConfig::parse("G1,G2,G3-4,G5").unwrap();
        let err = create_artefact(
            DocumentRef::text("x"),
            "R0".into(),
            &"G3".parse().unwrap(),
            "P1",
            &merged,
            ts("2023-03-01"),
        )
        .unwrap_err();
        assert_eq!(err.code(), "UnknownPhase");
    }

    #[test]
    fn identical_inputs_give_identical_ids_and_time_changes_id() {
        assert_eq!(fixture().id(), fixture().id());
        let mut later = fixture();
        later.timestamp = ts("2023-03-01T10:00:00.001Z");
        assert_ne!(fixture().id(), later.id());
    }

    #[test]
    fn canonical_form_is_deterministic_and_injective() {
        let store = MemoryObjects::new();
        let a = fixture();
        assert_eq!(canonicalize(&a, &store).unwrap(), canonicalize(&a, &store).unwrap());
        let mut b = a.clone();
        b.meta_data.push(Metadata::automatic("size", "12", ts("2023-03-01")));
        assert_ne!(canonicalize(&a, &store).unwrap(), canonicalize(&b, &store).unwrap());
    }

    #[test]
    fn canonicalize_reports_unresolved_tags() {
        let store = MemoryObjects::new();
        let mut a = fixture();
        a.list_of_tags.push(Digest::of(b"missing"));
        assert_eq!(canonicalize(&a, &store).unwrap_err().code(), "UnresolvedReference");
    }

    #[test]
    fn canonical_bytes_match_golden_digest() {
        // Frozen regression value. The digest was checked with coreutils
        // `sha256sum` over the printed bytes.
        let bytes = canonicalize(&fixture(), &MemoryObjects::new()).unwrap();
        assert_eq!(
            String::from_utf8(bytes.clone()).unwrap(),
            concat!(
                r#"{"content":{"kind":"inline","text":"RQ draft"},"listOfActions":[],"listOfTags":[],"#,
                r#""metaData":[],"producer":"R0","projectWfPh":{"phase":"G1","project":"P1"},"#,
                r#""timestamp":"2023-03-01T10:00:00.000Z","type":"artefact"}"#
            )
        );
        assert_eq!(Digest::of(&bytes).as_str(), GOLDEN_FIXTURE_DIGEST);
    }

    const GOLDEN_FIXTURE_DIGEST: &str =
        "65f9e5c260a2499c39413f68b49c917e7decb4c0c4c3af0a9f2d9e498c95d0eb";

    #[test]
    fn add_metadata_appends_and_links() {
        let mut store = MemoryObjects::new();
        let id0 = stored(&mut store);
        let mu = Metadata::manual("area", "docks", "R0".into(), ts("2023-03-02"));
        let (id1, v1) = add_metadata(&mut store, mu.clone(), &id0).unwrap();
        assert_eq!(v1.meta_data.len(), 1);
        assert_eq!(v1.predecessor.as_ref(), Some(&id0));
        assert_ne!(id0, id1);
        assert!(get_metadata(&store, &id0).unwrap().is_empty());

        let mut again = mu;
        again.timestamp = ts("2023-03-03");
        let (_, v2) = add_metadata(&mut store, again, &id1).unwrap();
        assert_eq!(v2.meta_data.len(), 2);
    }

    #[test]
    fn add_metadata_rejects_stale_time_and_unknown_target() {
        let mut store = MemoryObjects::new();
        let id0 = stored(&mut store);
        let mu = Metadata::manual("area", "docks", "R0".into(), ts("2023-03-02"));
        let (id1, _) = add_metadata(&mut store, mu.clone(), &id0).unwrap();
        assert_eq!(
            add_metadata(&mut store, mu, &id1).unwrap_err().code(),
            "NonMonotonicTimestamp"
        );
        let unknown = Digest::of(b"nope");
        let mu = Metadata::manual("k", "v", "R0".into(), ts("2023-03-09"));
        assert_eq!(
            add_metadata(&mut store, mu, &unknown).unwrap_err().code(),
            "UnresolvedReference"
        );
    }

    #[test]
    fn update_metadata_replaces_latest_entry() {
        let mut store = MemoryObjects::new();
        let id0 = stored(&mut store);
        let (id1, _) = add_metadata(
            &mut store,
            Metadata::manual("area", "docks", "R0".into(), ts("2023-03-02")),
            &id0,
        )
        .unwrap();
        let (id2, v2) = update_metadata(
            &mut store,
            Metadata::manual("area", "old town", "R1".into(), ts("2023-03-03")),
            &id1,
        )
        .unwrap();
        assert_eq!(v2.meta_data.len(), 1);
        assert_eq!(get_metadata(&store, &id2).unwrap()[0].value, "old town");
        assert_eq!(get_metadata(&store, &id1).unwrap()[0].value, "docks");

        let err = update_metadata(
            &mut store,
            Metadata::manual("camera", "x", "R0".into(), ts("2023-03-04")),
            &id2,
        )
        .unwrap_err();
        assert_eq!(err.code(), "KeyNotFound");
    }

    fn action_between(
        store: &mut MemoryObjects,
        original: &ArtefactId,
        result: &ArtefactId,
        at: &str,
    ) -> ActionRecordId {
        let record = ActionRecord {
            original: original.clone(),
            result: result.clone(),
            operation: OperationDescriptor {
                name: "k-means".into(),
                parameters: [("k".to_owned(), "4".to_owned())].into(),
                assessment_scores: [("silhouette".to_owned(), 0.41)].into(),
            },
            producer: "R1".into(),
            timestamp: ts(at),
        };
        record_action(store, &record).unwrap()
    }

    fn second_artefact(store: &mut MemoryObjects) -> ArtefactId {
        let mut other = fixture();
        other.content = DocumentRef::text("k-means clusters");
        store_artefact(store, &other).unwrap()
    }

    #[test]
    fn ritl_round_trip() {
        let mut store = MemoryObjects::new();
        let dataset = stored(&mut store);
        let result = second_artefact(&mut store);
        let action = action_between(&mut store, &dataset, &result, "2023-03-05");
        assert!(get_ritl(&store, &result).unwrap().is_empty());

        let eta = Narrative::text("clusters match districts", "R1".into(), ts("2023-03-06"));
        let (v1, a1) = add_ritl(&mut store, &eta, &action, &result).unwrap();
        assert_eq!((a1.list_of_tags.len(), a1.list_of_actions.len()), (1, 1));
        let pairs = get_ritl(&store, &v1).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].0, eta);
        assert_eq!(pairs[0].1.operation.name, "k-means");

        // Metadata edits leave the RITL list unchanged.
        let (v2, _) = add_metadata(
            &mut store,
            Metadata::automatic("silhouette", "0.41", ts("2023-03-07")),
            &v1,
        )
        .unwrap();
        assert_eq!(get_ritl(&store, &v2).unwrap(), pairs);

        // A second attachment grows the list in order. The action still
        // names the original result, so it is attached to v2 through `original`.
        let action2 = action_between(&mut store, &v2, &dataset, "2023-03-08");
        let eta2 = Narrative::text("second reading", "R0".into(), ts("2023-03-09"));
        let (v3, _) = add_ritl(&mut store, &eta2, &action2, &v2).unwrap();
        let pairs = get_ritl(&store, &v3).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[1].0.narrative, "second reading");
    }

    #[test]
    fn ritl_rejects_unrelated_action() {
        let mut store = MemoryObjects::new();
        let a = stored(&mut store);
        let b = second_artefact(&mut store);
        let mut third = fixture();
        third.content = DocumentRef::text("unrelated");
        let c = store_artefact(&mut store, &third).unwrap();
        let action = action_between(&mut store, &a, &b, "2023-03-05");
        let eta = Narrative::text("note", "R0".into(), ts("2023-03-06"));
        assert_eq!(
            add_ritl(&mut store, &eta, &action, &c).unwrap_err().code(),
            "ActionMismatch"
        );
    }

    #[test]
    fn action_records_need_distinct_resolved_sides() {
        let mut store = MemoryObjects::new();
        let a = stored(&mut store);
        let record = ActionRecord {
            original: a.clone(),
            result: a.clone(),
            operation: OperationDescriptor::default(),
            producer: "R0".into(),
            timestamp: ts("2023-03-02"),
        };
        assert_eq!(record_action(&mut store, &record).unwrap_err().code(), "InvalidAction");
        let dangling = ActionRecord {
            result: Digest::of(b"elsewhere"),
            ..record
        };
        assert_eq!(
            record_action(&mut store, &dangling).unwrap_err().code(),
            "UnresolvedReference"
        );
    }

    #[test]
    fn empty_narratives_are_rejected() {
        let mut store = MemoryObjects::new();
        let a = stored(&mut store);
        let eta = Narrative::text("  ", "R0".into(), ts("2023-03-06"));
        assert_eq!(add_tag(&mut store, &eta, &a).unwrap_err().code(), "EmptyNarrative");
    }

    #[test]
    fn fifteen_comments_build_a_chain_of_fifteen_successors() {
        let mut store = MemoryObjects::new();
        let mut id = stored(&mut store);
        let base = ts("2023-03-01T10:00:00Z");
        for i in 1..=15 {
            let who = if i % 2 == 0 { "R0" } else { "R1" };
            let eta = Narrative::text(&format!("comment {i}"), who.into(), base.plus_millis(i * 60_000));
            id = add_tag(&mut store, &eta, &id).unwrap().0;
        }
        let chain = version_chain(&store, &id).unwrap();
        assert_eq!(chain.len(), 16);
        assert_eq!(chain[0].1.list_of_tags.len(), 15);
        assert_eq!(content_versions(&store, &id).unwrap(), 1);
    }

    #[test]
    fn revisions_count_as_content_versions() {
        let mut store = MemoryObjects::new();
        let mut id = stored(&mut store);
        for (i, text) in ["v2", "v3", "v4"].iter().enumerate() {
            let at = ts("2023-03-02").plus_millis(i as i64);
            id = revise_content(&mut store, DocumentRef::text(*text), "R1".into(), &id, at)
                .unwrap()
                .0;
        }
        assert_eq!(content_versions(&store, &id).unwrap(), 4);
    }

    #[test]
    fn typed_decoding_checks_kind() {
        let mut store = MemoryObjects::new();
        let a = stored(&mut store);
        let err = get_object::<Narrative>(&store, &a).unwrap_err();
        assert_eq!(err.code(), "CorruptObject");
    }
}
