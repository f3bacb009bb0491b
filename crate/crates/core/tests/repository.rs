use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use curator_core::store::{Clock, MAIN};
use curator_core::workflow::compute_stats;
use curator_core::{
    Artefact, CommitKind, DocumentRef, GateConfig, PhaseConfig, ProjectConfig, Repository,
    Researcher, ResearcherId, SubjectKind, Timestamp, Verdict,
};

fn r0() -> ResearcherId {
    ResearcherId::new("R0")
}

fn init(dir: &Path) -> Repository {
    let config = ProjectConfig::new(
        "P1",
        PhaseConfig::standard(),
        vec![Researcher::new("R0", "junior", 1), Researcher::new("R1", "senior", 0)],
        GateConfig::default(),
    );
    let mut repo = Repository::init(dir, config).unwrap();
    repo.set_clock(Clock::Scripted(Timestamp::from_millis(1_680_000_000_000)));
    repo
}

fn artefact(repo: &mut Repository, text: &str) -> Artefact {
    repo.new_artefact(DocumentRef::text(text), &r0()).unwrap()
}

fn add_and_commit(repo: &mut Repository, path: &str, text: &str) -> curator_core::Commit {
    let a = artefact(repo, text);
    repo.stage_add(&a, path).unwrap();
    repo.commit(&format!("add {path}"), &r0(), None).unwrap()
}

/// Opens a round on `target`, casts both ballots and closes it.
fn decided(repo: &mut Repository, kind: SubjectKind, target: &curator_core::Digest, p0: f64, p1: f64) -> String {
    let round = repo.open_round(kind, target, None, None).unwrap();
    repo.cast_vote(&round.id, &"R0".into(), p0, None).unwrap();
    repo.cast_vote(&round.id, &"R1".into(), p1, None).unwrap();
    repo.close_round(&round.id).unwrap();
    round.id
}

fn head(repo: &Repository) -> curator_core::Digest {
    repo.head_commit().unwrap().unwrap()
}

#[test]
fn init_creates_main_with_a_root_commit() {
    let dir = tempfile::tempdir().unwrap();
    let repo = init(dir.path());
    let log = repo.log(MAIN).unwrap();
    assert_eq!(log.len(), 1);
    assert!(log[0].1.parent_ids.is_empty());
    assert_eq!(repo.head_ref().unwrap(), ("G1".parse().unwrap(), MAIN.to_owned()));
    assert_eq!(repo.config().current_cycle, 1);

    let config = repo.config().clone();
    assert_eq!(Repository::init(dir.path(), config).unwrap_err().code(), "AlreadyInitialized");
}

#[test]
fn commit_appends_to_root() {
    let dir = tempfile::tempdir().unwrap();
    let mut repo = init(dir.path());
    let root = repo.log(MAIN).unwrap()[0].0.clone();
    add_and_commit(&mut repo, "rq/v1", "research question");
    let log = repo.log(MAIN).unwrap();
    assert_eq!(log.len(), 2);
    assert_eq!(log[0].1.parent_ids, vec![root]);
    assert_eq!(repo.head_snapshot().unwrap().len(), 1);
}

#[test]
fn staging_is_idempotent_and_detects_conflicts() {
    let dir = tempfile::tempdir().unwrap();
    let mut repo = init(dir.path());
    let a = artefact(&mut repo, "rq");
    repo.stage_add(&a, "rq/v1").unwrap();
    repo.stage_add(&a, "rq/v1").unwrap();
    assert_eq!(repo.phase_stage(&repo.current_phase()).unwrap().adds.len(), 1);
    let b = artefact(&mut repo, "other");
    assert_eq!(repo.stage_add(&b, "rq/v1").unwrap_err().code(), "PathConflict");
}

#[test]
fn staging_a_thousand_and_fifty_photos() {
    let dir = tempfile::tempdir().unwrap();
    let mut repo = init(dir.path());
    let batch: Vec<(Artefact, String)> = (1..=1050)
        .map(|n| (artefact(&mut repo, &format!("photo {n}")), format!("graffiti/raw/{n:04}")))
        .collect();
    repo.stage_add_many(&batch).unwrap();
    assert_eq!(repo.phase_stage(&repo.current_phase()).unwrap().adds.len(), 1050);
    repo.commit("harvest", &r0(), None).unwrap();
    let remove: Vec<String> = (1..=504).map(|n| format!("graffiti/raw/{n:04}")).collect();
    repo.stage_remove_many(&remove).unwrap();
    repo.commit("validate", &r0(), None).unwrap();
    assert_eq!(repo.head_snapshot().unwrap().len(), 546);
}

#[test]
fn remove_and_contains_follow_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let mut repo = init(dir.path());
    add_and_commit(&mut repo, "rq/v1", "rq");
    let id = repo.head_snapshot().unwrap().entries["rq/v1"].clone();
    let with = head(&repo);
    assert!(repo.contains(&id, &with).unwrap());

    repo.stage_remove("rq/v1").unwrap();
    repo.commit("drop rq", &r0(), None).unwrap();
    add_and_commit(&mut repo, "notes", "n");
    assert!(repo.contains(&id, &with).unwrap());
    assert!(!repo.contains(&id, &head(&repo)).unwrap());
    assert_eq!(repo.resolve_path("rq/v1").unwrap_err().code(), "PathNotFound");
    assert_eq!(repo.stage_remove("missing").unwrap_err().code(), "PathNotFound");

    let never = artefact(&mut repo, "never added");
    let never_id = repo.store_artefact(&never).unwrap();
    assert!(!repo.contains(&never_id, &head(&repo)).unwrap());
    assert_eq!(
        repo.contains(&id, &curator_core::Digest::of(b"nope")).unwrap_err().code(),
        "UnknownCommit"
    );
}

#[test]
fn commit_requires_changes_or_an_accepted_round() {
    let dir = tempfile::tempdir().unwrap();
    let mut repo = init(dir.path());
    assert_eq!(repo.commit("empty", &r0(), None).unwrap_err().code(), "NothingToCommit");

    let target = head(&repo);
    let reject = decided(&mut repo, SubjectKind::CycleClose, &target, 0.9, 0.3);
    assert_eq!(repo.round(&reject).unwrap().verdict, Some(Verdict::Reject));
    assert_eq!(repo.commit("close", &r0(), Some(&reject)).unwrap_err().code(), "GateNotPassed");
    assert_eq!(repo.config().current_cycle, 1);

    let accept = decided(&mut repo, SubjectKind::CycleClose, &target, 0.8, 0.7);
    let c = repo.commit("close", &r0(), Some(&accept)).unwrap();
    assert_eq!(c.kind, CommitKind::CycleClose);
    assert_eq!(repo.config().current_cycle, 2);
}

#[test]
fn open_rounds_and_stale_targets_do_not_pass() {
    let dir = tempfile::tempdir().unwrap();
    let mut repo = init(dir.path());
    let target = head(&repo);
    let open = repo.open_round(SubjectKind::CycleClose, &target, None, None).unwrap();
    assert_eq!(repo.close_cycle(&open.id, &r0()).unwrap_err().code(), "GateNotPassed");

    let accept = decided(&mut repo, SubjectKind::CycleClose, &target, 0.8, 0.8);
    add_and_commit(&mut repo, "rq", "moved the head");
    assert_eq!(repo.close_cycle(&accept, &r0()).unwrap_err().code(), "StaleRound");

    let wrong = { let t = head(&repo); decided(&mut repo, SubjectKind::PhaseAdvance, &t, 0.8, 0.8) };
    assert_eq!(repo.close_cycle(&wrong, &r0()).unwrap_err().code(), "WrongSubjectKind");
}

#[test]
fn branches_fork_from_one_commit_and_filter() {
    let dir = tempfile::tempdir().unwrap();
    let mut repo = init(dir.path());
    add_and_commit(&mut repo, "graffiti/1", "photo");
    add_and_commit(&mut repo, "rq", "question");
    let base = head(&repo);
    let manual = repo.branch("manual-classification", None, None, &r0()).unwrap();
    let ml = repo.branch("ml-classification", Some(&base), Some("graffiti/"), &r0()).unwrap();
    let parent = |b: &curator_core::Branch| repo.commit_object(&b.head).unwrap().parent_ids;
    assert_eq!(parent(&manual), vec![base.clone()]);
    assert_eq!(parent(&ml), vec![base.clone()]);
    let ml_snapshot = repo.commit_snapshot(&ml.head).unwrap();
    assert_eq!(ml_snapshot.entries.keys().collect::<Vec<_>>(), vec!["graffiti/1"]);
    assert_eq!(
        repo.branch("ml-classification", None, None, &r0()).unwrap_err().code(),
        "DuplicateBranch"
    );
    assert_eq!(
        repo.branch("x", Some(&curator_core::Digest::of(b"no")), None, &r0()).unwrap_err().code(),
        "UnknownCommit"
    );
    // HEAD did not move.
    assert_eq!(repo.head_ref().unwrap().1, MAIN);
}

#[test]
fn merges_need_an_accepted_round_and_cover_conflicts() {
    let dir = tempfile::tempdir().unwrap();
    let mut repo = init(dir.path());
    add_and_commit(&mut repo, "shared", "base");
    repo.branch("side", None, None, &r0()).unwrap();
    repo.checkout("side").unwrap();
    add_and_commit(&mut repo, "side-only", "s");
    let a = artefact(&mut repo, "side version");
    let side_version = repo.store_artefact(&a).unwrap();
    repo.restage("shared", &side_version).unwrap();
    repo.commit("edit shared on side", &r0(), None).unwrap();
    repo.checkout(MAIN).unwrap();
    add_and_commit(&mut repo, "main-only", "m");
    let b = artefact(&mut repo, "main version");
    let main_version = repo.store_artefact(&b).unwrap();
    repo.restage("shared", &main_version).unwrap();
    repo.commit("edit shared on main", &r0(), None).unwrap();

    let side_head = repo.resolve_branch("side").unwrap().head;
    let reject = decided(&mut repo, SubjectKind::Merge, &side_head, 0.2, 0.2);
    assert_eq!(
        repo.merge("side", None, &BTreeMap::new(), &r0(), &reject).unwrap_err().code(),
        "GateNotPassed"
    );
    let round = decided(&mut repo, SubjectKind::Merge, &side_head, 0.9, 0.8);
    match repo.merge("side", None, &BTreeMap::new(), &r0(), &round).unwrap_err() {
        curator_core::Error::UnresolvedConflict(paths) => assert_eq!(paths, vec!["shared".to_owned()]),
        other => panic!("unexpected {other}"),
    }
    let resolver = BTreeMap::from([("shared".to_owned(), main_version.clone())]);
    let merge = repo.merge("side", None, &resolver, &r0(), &round).unwrap();
    assert_eq!(merge.parent_ids.len(), 2);
    assert_eq!(merge.parent_ids[1], side_head);
    let snapshot = repo.head_snapshot().unwrap();
    assert_eq!(snapshot.len(), 3);
    assert_eq!(snapshot.entries["shared"], main_version);
    assert_eq!(repo.log(MAIN).unwrap()[0].1.parent_ids.len(), 2);

    repo.drop_branch("side").unwrap();
    assert!(repo.resolve_branch("side").is_err());
    repo.commit_object(&merge.parent_ids[1]).unwrap();
}

#[test]
fn disjoint_branches_merge_to_the_union() {
    let dir = tempfile::tempdir().unwrap();
    let mut repo = init(dir.path());
    repo.branch("a", None, None, &r0()).unwrap();
    repo.checkout("a").unwrap();
    add_and_commit(&mut repo, "a/1", "a");
    repo.checkout(MAIN).unwrap();
    add_and_commit(&mut repo, "m/1", "m");
    let round = { let t = repo.resolve_branch("a").unwrap().head; decided(&mut repo, SubjectKind::Merge, &t, 0.7, 0.7) };
    repo.merge("a", None, &BTreeMap::new(), &r0(), &round).unwrap();
    let keys: Vec<String> = repo.head_snapshot().unwrap().entries.into_keys().collect();
    assert_eq!(keys, vec!["a/1", "m/1"]);
}

#[test]
fn protected_branches_cannot_be_dropped() {
    let dir = tempfile::tempdir().unwrap();
    let mut repo = init(dir.path());
    assert_eq!(repo.drop_branch(MAIN).unwrap_err().code(), "ProtectedBranch");
    assert_eq!(repo.drop_branch("ghost").unwrap_err().code(), "UnknownBranch");

    repo.branch("released", None, None, &r0()).unwrap();
    let side = repo.resolve_branch("released").unwrap().head;
    let round = decided(&mut repo, SubjectKind::Merge, &side, 0.8, 0.8);
    repo.merge("released", None, &BTreeMap::new(), &r0(), &round).unwrap();
    let release_round = { let t = head(&repo); decided(&mut repo, SubjectKind::Release, &t, 0.8, 0.8) };
    repo.release("v1", &release_round).unwrap();
    assert_eq!(repo.drop_branch("released").unwrap_err().code(), "ProtectedBranch");
}

#[test]
fn dropping_a_branch_keeps_commit_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut repo = init(dir.path());
    add_and_commit(&mut repo, "x", "x");
    repo.branch("tmp", None, None, &r0()).unwrap();
    let before = compute_stats(&repo).unwrap().phases[0].clone();
    repo.drop_branch("tmp").unwrap();
    let after = compute_stats(&repo).unwrap().phases[0].clone();
    assert_eq!(after.branch_count + 1, before.branch_count);
    assert_eq!(after.commit_count, before.commit_count);
}

#[test]
fn drop_stage_exports_the_head_as_staging() {
    let dir = tempfile::tempdir().unwrap();
    let mut repo = init(dir.path());
    for p in ["a", "b", "c"] {
        add_and_commit(&mut repo, p, p);
    }
    let before = repo.head_snapshot().unwrap();
    let phase = repo.current_phase();
    repo.drop_stage(&phase).unwrap();
    assert!(repo.branches(&phase).unwrap().is_empty());
    assert_eq!(repo.phase_stage(&phase).unwrap().adds, before.entries);

    // The next commit starts a fresh history.
    let c = repo.commit("re-import", &r0(), None).unwrap();
    assert!(c.parent_ids.is_empty());
    assert_eq!(repo.head_snapshot().unwrap(), before);
}

#[test]
fn drop_stage_on_fresh_and_released_phases() {
    let dir = tempfile::tempdir().unwrap();
    let mut repo = init(dir.path());
    let phase = repo.current_phase();
    repo.drop_stage(&phase).unwrap();
    assert!(repo.phase_stage(&phase).unwrap().is_empty());

    let dir = tempfile::tempdir().unwrap();
    let mut repo = init(dir.path());
    let round = { let t = head(&repo); decided(&mut repo, SubjectKind::Release, &t, 0.9, 0.9) };
    repo.release("gamma1-v1", &round).unwrap();
    assert_eq!(repo.drop_stage(&phase).unwrap_err().code(), "PhaseHasReleases");
}

#[test]
fn tags_create_successor_versions() {
    let dir = tempfile::tempdir().unwrap();
    let mut repo = init(dir.path());
    add_and_commit(&mut repo, "graffiti/0001", "photo");
    let c1 = repo.tag_path("graffiti/0001", "old town, 41.38N 2.17E", &r0(), None).unwrap();
    assert_eq!(c1.message, "tag:graffiti/0001");
    repo.tag_path("graffiti/0001", "stencil", &"R1".into(), None).unwrap();
    let id = repo.head_snapshot().unwrap().entries["graffiti/0001"].clone();
    let chain = curator_core::artefact::version_chain(repo.objects(), &id).unwrap();
    assert_eq!(chain.len(), 3);
    assert_eq!(repo.artefact(&id).unwrap().list_of_tags.len(), 2);
    assert_eq!(repo.log(MAIN).unwrap().len(), 4);
    assert_eq!(repo.tag_path("nope", "x", &r0(), None).unwrap_err().code(), "PathNotFound");
}

#[test]
fn releases_are_gated_and_unique() {
    let dir = tempfile::tempdir().unwrap();
    let mut repo = init(dir.path());
    add_and_commit(&mut repo, "d", "dataset");
    let bad = { let t = head(&repo); decided(&mut repo, SubjectKind::Release, &t, 0.3, 0.3) };
    assert_eq!(repo.release("gamma2-dataset-v1", &bad).unwrap_err().code(), "GateNotPassed");
    let good = { let t = head(&repo); decided(&mut repo, SubjectKind::Release, &t, 0.8, 0.7) };
    let rel = repo.release("gamma2-dataset-v1", &good).unwrap();
    assert_eq!(rel.commit, head(&repo));
    assert_eq!(repo.releases().unwrap(), vec![rel]);
    assert_eq!(repo.release("gamma2-dataset-v1", &good).unwrap_err().code(), "DuplicateTag");
}

#[test]
fn clone_preserves_history_and_detects_corruption() {
    let src = tempfile::tempdir().unwrap();
    let mut repo = init(src.path());
    for p in ["a", "b", "c"] {
        add_and_commit(&mut repo, p, p);
    }
    let round = { let t = head(&repo); decided(&mut repo, SubjectKind::Release, &t, 0.9, 0.9) };
    let rel = repo.release("v1", &round).unwrap();

    let dst = tempfile::tempdir().unwrap();
    let copy = Repository::clone_from(src.path().to_str().unwrap(), &dst.path().join("c")).unwrap();
    assert_eq!(copy.log(MAIN).unwrap(), repo.log(MAIN).unwrap());
    assert_eq!(copy.releases().unwrap(), vec![rel]);

    let url = format!("file://{}", src.path().display());
    Repository::clone_from(&url, &dst.path().join("u")).unwrap();
    assert_eq!(
        Repository::clone_from("/nonexistent/repo", &dst.path().join("x")).unwrap_err().code(),
        "SourceUnavailable"
    );

    let obj = repo.objects().path_for(&head(&repo));
    let mut bytes = fs::read(&obj).unwrap();
    bytes[10] ^= 0x01;
    fs::write(&obj, bytes).unwrap();
    let target = dst.path().join("bad");
    assert_eq!(
        Repository::clone_from(src.path().to_str().unwrap(), &target).unwrap_err().code(),
        "CorruptObject"
    );
    assert!(!target.join(".curator").exists());
}

#[test]
fn second_writer_fails_fast() {
    let dir = tempfile::tempdir().unwrap();
    let mut first = init(dir.path());
    first.lock().unwrap();
    let mut second = Repository::open(dir.path()).unwrap();
    let a = second.new_artefact(DocumentRef::text("x"), &r0()).unwrap();
    assert_eq!(second.stage_add(&a, "x").unwrap_err().code(), "LockHeld");
    first.unlock();
    second.stage_add(&a, "x").unwrap();
}

#[test]
fn log_of_unknown_branch_fails() {
    let dir = tempfile::tempdir().unwrap();
    let repo = init(dir.path());
    assert_eq!(repo.log("nope").unwrap_err().code(), "UnknownBranch");
}
