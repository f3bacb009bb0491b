use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Consensus-gated version control for research artefacts.
#[derive(Debug, Parser)]
#[command(name = "curator", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a repository in DIR (default: CURATOR_DIR or the current directory).
    Init {
        dir: Option<PathBuf>,
        #[arg(long)]
        project: Option<String>,
        /// Comma-separated phase ids, e.g. G1,G2,G3-4,G5.
        #[arg(long, default_value = "G1,G2,G3,G4,G5")]
        phases: String,
        /// Roster entry `id[:name[:level]]`; repeatable.
        #[arg(long = "member")]
        members: Vec<String>,
        #[command(flatten)]
        gate: GateArgs,
    },
    /// Copy a repository and re-verify every object.
    Clone { source: String, dest: Option<PathBuf> },
    /// Stage FILE as a new artefact at PATH.
    Add {
        path: String,
        file: PathBuf,
        /// Store the file as a blob with this media type.
        #[arg(long)]
        media_type: Option<String>,
        /// Manual metadata `key=value`; repeatable.
        #[arg(long = "meta")]
        meta: Vec<String>,
    },
    /// Stage removal of paths.
    Rm {
        #[arg(required = true)]
        paths: Vec<String>,
    },
    Commit {
        #[arg(short, long)]
        message: String,
        /// ARTEFACT_VALIDATION or CYCLE_CLOSE round authorising the commit.
        #[arg(long)]
        round: Option<String>,
    },
    /// Create a branch, or list branches of the current phase.
    Branch {
        name: Option<String>,
        #[arg(long)]
        from: Option<String>,
        #[arg(long)]
        filter: Option<String>,
    },
    Checkout { branch: String },
    Merge {
        from: String,
        #[arg(long)]
        into: Option<String>,
        /// `path=ours|theirs|<artefact id>`; repeatable.
        #[arg(long = "resolve")]
        resolve: Vec<String>,
        #[arg(long)]
        round: String,
    },
    DropBranch { name: String },
    DropStage { phase: String },
    /// Attach a narrative, read from FILE, to the artefact at PATH.
    Tag {
        path: String,
        #[arg(long)]
        narrative: PathBuf,
        /// Action record the narrative interprets.
        #[arg(long)]
        action: Option<String>,
    },
    #[command(subcommand)]
    Round(RoundCommand),
    #[command(subcommand)]
    Cycle(CycleCommand),
    #[command(subcommand)]
    Phase(PhaseCommand),
    #[command(subcommand)]
    Meta(MetaCommand),
    /// Commits on a branch (`name` or `phase/name`), newest first.
    Log {
        branch: Option<String>,
        #[arg(long)]
        json: bool,
    },
    /// An artefact by path or id.
    Show {
        target: String,
        #[arg(long)]
        json: bool,
    },
    Stats {
        #[arg(long)]
        json: bool,
    },
    Project {
        #[arg(long)]
        json: bool,
    },
    Releases {
        #[arg(long)]
        json: bool,
    },
    /// Staged changes of the current phase.
    Status,
    /// Check every gated commit and release against its round file.
    Audit {
        #[arg(long)]
        json: bool,
    },
    /// Re-hash every stored object.
    Verify,
    /// Build a repository from a JSON event script.
    Replay {
        script: PathBuf,
        #[arg(long)]
        into: Option<PathBuf>,
    },
    /// Serve the HTTP API on localhost.
    Serve {
        #[arg(long, default_value_t = 7878)]
        port: u16,
        /// Static web UI assets to serve under /ui.
        #[arg(long)]
        ui: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct GateArgs {
    #[arg(long)]
    pub strategy: Option<String>,
    /// Preference threshold.
    #[arg(long, allow_negative_numbers = true)]
    pub pref: Option<f64>,
    /// Disagreement threshold, or `disabled`.
    #[arg(long)]
    pub dis: Option<String>,
    #[arg(long)]
    pub quorum: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum RoundCommand {
    Open {
        /// ARTEFACT_VALIDATION, CYCLE_CLOSE, PHASE_ADVANCE, RELEASE or MERGE.
        kind: String,
        /// `head`, `main`, `branch:<name>`, `path:<path>` or a digest.
        #[arg(long, default_value = "head")]
        target: String,
        /// Comma-separated voters (default: whole roster).
        #[arg(long, value_delimiter = ',')]
        group: Option<Vec<String>>,
        #[command(flatten)]
        gate: GateArgs,
    },
    Vote {
        id: String,
        #[arg(long, allow_negative_numbers = true)]
        pref: f64,
        #[arg(long)]
        credits: Option<u64>,
    },
    Close { id: String },
    Show {
        id: String,
        #[arg(long)]
        json: bool,
    },
    List {
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum CycleCommand {
    Close {
        #[arg(long)]
        round: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum PhaseCommand {
    Advance {
        #[arg(long)]
        round: String,
        #[arg(long)]
        release: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum MetaCommand {
    Add { path: String, key: String, value: String },
    Update { path: String, key: String, value: String },
    List {
        path: String,
        #[arg(long)]
        json: bool,
    },
}
