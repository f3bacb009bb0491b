use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::Value;

use curator_core::artefact::{get_metadata, StoredObject};
use curator_core::audit::audit;
use curator_core::workflow::replay::{replay, resolve_target, Script};
use curator_core::workflow::stats::render_table;
use curator_core::workflow::{compute_stats, create_project};
use curator_core::{
    views, Digest, DocumentRef, Error, GateConfig, GateOverrides, PhaseConfig, PhaseId, ProjectConfig,
    Repository, Researcher, ResearcherId, VoteRound,
};
use curator_service::ServiceConfig;

use crate::args::{Command, CycleCommand, GateArgs, MetaCommand, PhaseCommand, RoundCommand};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

/// `println!` that ignores a closed stdout, e.g. when piped into `head`.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

fn env_dir() -> Option<PathBuf> {
    std::env::var_os("CURATOR_DIR").filter(|v| !v.is_empty()).map(PathBuf::from)
}

fn cwd() -> Result<PathBuf> {
    std::env::current_dir().map_err(|e| Error::io(Path::new("."), e).into())
}

fn target_dir(explicit: Option<PathBuf>) -> Result<PathBuf> {
    match explicit.or_else(env_dir) {
        Some(d) => Ok(d),
        None => cwd(),
    }
}

fn open() -> Result<Repository> {
    Ok(match env_dir() {
        Some(d) => Repository::open(&d)?,
        None => Repository::discover(&cwd()?)?,
    })
}

fn author() -> Result<ResearcherId> {
    match std::env::var("CURATOR_AUTHOR") {
        Ok(a) if !a.trim().is_empty() => Ok(ResearcherId::new(a.trim())),
        _ => Err(CliError::MissingAuthor),
    }
}

fn print_json(value: &Value) -> Result<()> {
    out!("{}", views::render(value)?);
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e).into())
}

fn key_value(spec: &str, what: &str) -> Result<(String, String)> {
    spec.split_once('=')
        .map(|(k, v)| (k.to_owned(), v.to_owned()))
        .ok_or_else(|| CliError::BadArgument(format!("{what} must be key=value, got {spec:?}")))
}

fn overrides(gate: GateArgs) -> Result<GateOverrides> {
    let dis_threshold = match gate.dis {
        None => None,
        Some(d) if d.eq_ignore_ascii_case("disabled") => Some(Value::String("DISABLED".into())),
        Some(d) => {
            let x: f64 = d
                .parse()
                .map_err(|_| CliError::BadArgument(format!("--dis expects a number or `disabled`, got {d:?}")))?;
            Some(serde_json::json!(x))
        }
    };
    Ok(GateOverrides {
        strategy: gate.strategy.as_deref().map(str::parse).transpose()?,
        pref_threshold: gate.pref,
        dis_threshold,
        quorum: gate.quorum,
    })
}

fn member(spec: &str) -> Result<Researcher> {
    let mut parts = spec.splitn(3, ':');
    let id = parts.next().unwrap_or_default();
    let name = parts.next().unwrap_or(id);
    let level = match parts.next() {
        Some(l) => l
            .parse()
            .map_err(|_| CliError::BadArgument(format!("hierarchy level in {spec:?} is not a number")))?,
        None => 0,
    };
    Ok(Researcher::new(id, name, level))
}

fn round_line(r: &VoteRound) -> String {
    let mut line = format!(
        "{}  {}  {}  {:?}  {}/{} ballots",
        r.id,
        r.subject.kind,
        r.subject.target.short(),
        r.state,
        r.ballots.len(),
        r.group.len()
    );
    if let (Some(v), Some(s), Some(d)) = (r.verdict, r.score, r.disagreement) {
        line.push_str(&format!("  {v}  score={s:.4} dis={d:.4}"));
    } else if let Ok(o) = r.aggregate() {
        line.push_str(&format!("  live score={:.4}", o.score));
        if let Some(d) = o.disagreement {
            line.push_str(&format!(" dis={d:.4}"));
        }
    }
    line
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Init {
            dir,
            project,
            phases,
            members,
            gate,
        } => {
            let root = target_dir(dir)?;
            std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
            let roster = if members.is_empty() {
                let who = author().unwrap_or_else(|_| ResearcherId::new("R0"));
                vec![Researcher::new(who.as_str(), who.as_str(), 0)]
            } else {
                members.iter().map(|m| member(m)).collect::<Result<_>>()?
            };
            let name = match project {
                Some(p) => p,
                None => root
                    .canonicalize()
                    .ok()
                    .and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
                    .unwrap_or_else(|| "project".into()),
            };
            let defaults = overrides(gate)?.apply(GateConfig::default())?;
            let config = ProjectConfig::new(&name, PhaseConfig::parse(&phases)?, roster, defaults);
            let repo = create_project(&root, config)?;
            out!("{}", repo.layout().dir.display());
        }
        Command::Clone { source, dest } => {
            let dest = match dest {
                Some(d) => d,
                None => {
                    let base = source.trim_end_matches('/').rsplit('/').next().unwrap_or("clone");
                    PathBuf::from(base)
                }
            };
            let repo = Repository::clone_from(&source, &dest)?;
            out!("cloned into {} ({} objects verified)", dest.display(), repo.verify()?);
        }
        Command::Add {
            path,
            file,
            media_type,
            meta,
        } => {
            let who = author()?;
            let mut repo = open()?;
            let bytes = read_file(&file)?;
            let metadata: Vec<(String, String)> =
                meta.iter().map(|m| key_value(m, "--meta")).collect::<Result<_>>()?;
            let content = match (media_type, String::from_utf8(bytes)) {
                (None, Ok(text)) => DocumentRef::text(text),
                (Some(mt), Ok(text)) => repo.put_blob(text.as_bytes(), &mt)?,
                (mt, Err(e)) => {
                    let mt = mt.unwrap_or_else(|| "application/octet-stream".into());
                    repo.put_blob(e.as_bytes(), &mt)?
                }
            };
            let id = repo.add_document(&path, content, &metadata, &who)?;
            out!("staged {path} {}", id.short());
        }
        Command::Rm { paths } => {
            author()?;
            let mut repo = open()?;
            repo.stage_remove_many(&paths)?;
            for p in paths {
                out!("staged removal of {p}");
            }
        }
        Command::Commit { message, round } => {
            let who = author()?;
            let mut repo = open()?;
            let c = repo.commit(&message, &who, round.as_deref())?;
            out!("[{} {}] {}", c.phase, c.id().short(), c.message);
        }
        Command::Branch { name, from, filter } => {
            let mut repo = open()?;
            match name {
                Some(name) => {
                    let who = author()?;
                    let from = from.map(|f| resolve_target(&repo, &f)).transpose()?;
                    let b = repo.branch(&name, from.as_ref(), filter.as_deref(), &who)?;
                    out!("branch {}/{} at {}", b.phase, b.name, b.head.short());
                }
                None => {
                    let current = repo.head_ref()?;
                    for b in repo.branches(&repo.current_phase())? {
                        let mark = if (&b.phase, &b.name) == (&current.0, &current.1) { '*' } else { ' ' };
                        out!("{mark} {}  {}", b.name, b.head.short());
                    }
                }
            }
        }
        Command::Checkout { branch } => {
            author()?;
            let b = open()?.checkout(&branch)?;
            out!("on {}/{}", b.phase, b.name);
        }
        Command::Merge {
            from,
            into,
            resolve,
            round,
        } => {
            let who = author()?;
            let mut repo = open()?;
            let choices: BTreeMap<String, String> =
                resolve.iter().map(|r| key_value(r, "--resolve")).collect::<Result<_>>()?;
            let c = repo.merge_choosing(&from, into.as_deref(), &choices, &who, &round)?;
            out!("[{} {}] {}", c.phase, c.id().short(), c.message);
        }
        Command::DropBranch { name } => {
            author()?;
            open()?.drop_branch(&name)?;
            out!("dropped {name}");
        }
        Command::DropStage { phase } => {
            author()?;
            let phase: PhaseId = phase.parse()?;
            open()?.drop_stage(&phase)?;
            out!("dropped stage {phase}");
        }
        Command::Tag {
            path,
            narrative,
            action,
        } => {
            let who = author()?;
            let mut repo = open()?;
            let text = String::from_utf8_lossy(&read_file(&narrative)?).into_owned();
            let action: Option<Digest> = action.map(|a| a.parse()).transpose()?;
            let c = repo.tag_path(&path, &text, &who, action.as_ref())?;
            out!("[{} {}] {}", c.phase, c.id().short(), c.message);
        }
        Command::Round(cmd) => round(cmd)?,
        Command::Cycle(CycleCommand::Close { round }) => {
            let who = author()?;
            let c = open()?.close_cycle(&round, &who)?;
            out!("[{} {}] {}", c.phase, c.id().short(), c.message);
        }
        Command::Phase(PhaseCommand::Advance { round, release }) => {
            let who = author()?;
            let mut repo = open()?;
            let from = repo.current_phase();
            if let Some(r) = repo.advance_phase(&round, release.as_deref(), &who)? {
                out!("released {} at {}", r.tag, r.commit.short());
            }
            let to = repo.current_phase();
            if from != to {
                out!("advanced {from} -> {to}");
            }
        }
        Command::Meta(cmd) => meta(cmd)?,
        Command::Log { branch, json } => {
            let repo = open()?;
            let b = match branch {
                Some(spec) => repo.resolve_branch(&spec)?,
                None => repo.resolve_branch(&repo.head_ref()?.1)?,
            };
            if json {
                print_json(&views::log(&repo, &b.phase, &b.name)?)?;
            } else {
                for (id, c) in repo.log(&format!("{}/{}", b.phase, b.name))? {
                    let gate = c.consensus_round_id.map(|r| format!(" [{r}]")).unwrap_or_default();
                    out!("{}  {}  c{}  {:?}  {}{gate}", id.short(), c.timestamp, c.cycle, c.kind, c.message);
                }
            }
        }
        Command::Show { target, json } => {
            let repo = open()?;
            let id = match target.parse::<Digest>() {
                Ok(d) if target.len() == 64 => d,
                _ => repo.resolve_path(&target)?,
            };
            let doc = views::artefact(&repo, &id)?;
            if json {
                print_json(&doc)?;
            } else {
                out!("{}", serde_json::to_string_pretty(&doc).map_err(Error::from)?);
            }
        }
        Command::Stats { json } => {
            let repo = open()?;
            if json {
                print_json(&views::stats(&repo)?)?;
            } else {
                out!("{}", render_table(&compute_stats(&repo)?).trim_end());
            }
        }
        Command::Project { json } => {
            let repo = open()?;
            if json {
                print_json(&views::project(&repo)?)?;
            } else {
                let c = repo.config();
                let (phase, branch) = repo.head_ref()?;
                out!("project {}", c.project);
                out!("phase {} cycle {}", repo.current_phase(), c.current_cycle);
                out!("on {phase}/{branch}");
                for r in &c.roster {
                    out!("member {} ({}, level {})", r.id, r.display_name, r.hierarchy_level);
                }
            }
        }
        Command::Releases { json } => {
            let repo = open()?;
            if json {
                print_json(&views::releases(&repo)?)?;
            } else {
                for r in repo.releases()? {
                    out!("{}  {}  {}  {}", r.tag, r.phase, r.commit.short(), r.consensus_round_id);
                }
            }
        }
        Command::Status => {
            let repo = open()?;
            let (phase, branch) = repo.head_ref()?;
            out!("phase {} cycle {} on {phase}/{branch}", repo.current_phase(), repo.config().current_cycle);
            let stage = repo.phase_stage(&phase)?;
            if stage.is_empty() {
                out!("nothing staged");
            }
            for (path, id) in &stage.adds {
                out!("  add     {path}  {}", id.short());
            }
            for path in &stage.removes {
                out!("  remove  {path}");
            }
        }
        Command::Audit { json } => {
            let repo = open()?;
            let report = audit(&repo)?;
            if json {
                print_json(&serde_json::to_value(&report).map_err(Error::from)?)?;
            } else {
                out!(
                    "{} commits, {} gated, {} releases checked",
                    report.commits_checked, report.gated_checked, report.releases_checked
                );
                for f in &report.findings {
                    out!("  {}: {}", f.subject, f.problem);
                }
            }
            if !report.is_clean() {
                return Err(CliError::AuditFailed(report.findings.len()));
            }
        }
        Command::Verify => {
            let n = open()?.verify()?;
            out!("{n} objects verified");
        }
        Command::Replay { script, into } => {
            let root = target_dir(into)?;
            let script = Script::load(&script)?;
            let repo = replay(&root, &script)?;
            out!(
                "replayed {} events into {}",
                script.len(),
                repo.layout().dir.display()
            );
        }
        Command::Serve { port, ui } => {
            let repo = open()?;
            let mut config = ServiceConfig::new(repo.root().to_path_buf());
            config.ui = ui;
            let root = repo.root().display().to_string();
            curator_service::run(config, port, |addr| eprintln!("serving {root} on http://{addr}"))?;
        }
    }
    Ok(())
}

fn round(cmd: RoundCommand) -> Result<()> {
    match cmd {
        RoundCommand::Open {
            kind,
            target,
            group,
            gate,
        } => {
            author()?;
            let mut repo = open()?;
            let target = resolve_target(&repo, &target)?;
            let config = overrides(gate)?.apply(repo.config().defaults)?;
            let group: Option<Vec<ResearcherId>> = group.map(|g| g.iter().map(ResearcherId::new).collect());
            let r = repo.open_round(kind.parse()?, &target, group.as_deref(), Some(config))?;
            out!("{}", round_line(&r));
        }
        RoundCommand::Vote { id, pref, credits } => {
            let who = author()?;
            let r = open()?.cast_vote(&id, &who, pref, credits)?;
            out!("{}", round_line(&r));
        }
        RoundCommand::Close { id } => {
            author()?;
            let r = open()?.close_round(&id)?;
            out!("{}", round_line(&r));
        }
        RoundCommand::Show { id, json } => {
            let r = open()?.round(&id)?;
            if json {
                print_json(&views::round(&r)?)?;
            } else {
                out!("{}", round_line(&r));
                for b in &r.ballots {
                    out!("  {}  {}", b.voter, b.pref);
                }
            }
        }
        RoundCommand::List { json } => {
            let repo = open()?;
            if json {
                print_json(&views::rounds(&repo)?)?;
            } else {
                for r in repo.rounds()? {
                    out!("{}", round_line(&r));
                }
            }
        }
    }
    Ok(())
}

fn meta(cmd: MetaCommand) -> Result<()> {
    match cmd {
        MetaCommand::Add { path, key, value } => {
            let who = author()?;
            let id = open()?.annotate_path(&path, &key, &value, &who, false)?;
            out!("staged {path} {}", id.short());
        }
        MetaCommand::Update { path, key, value } => {
            let who = author()?;
            let id = open()?.annotate_path(&path, &key, &value, &who, true)?;
            out!("staged {path} {}", id.short());
        }
        MetaCommand::List { path, json } => {
            let repo = open()?;
            let id = repo.resolve_path(&path)?;
            let entries = get_metadata(repo.objects(), &id)?;
            if json {
                print_json(&serde_json::to_value(&entries).map_err(Error::from)?)?;
            } else {
                for m in entries {
                    out!("{} = {}", m.key, m.value);
                }
            }
        }
    }
    Ok(())
}
