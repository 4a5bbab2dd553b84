//! The `galforge` command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use galforge_core::generator::{pretrain_generator, GeneratorModel};
use galforge_core::world::{make_world, World};

use crate::checkpoint::{load_generator, save_generator};
use crate::config::{Config, KEYS};
use crate::engine::{audit_pseudo_labels, render_audit, reuse_dataset, run_experiment};
use crate::error::{Error, Result};
use crate::fsutil::atomic_write;
use crate::manifest::{digest_path, read_config, RunManifest, FILE_NAME};
use crate::results::{self, ResultRow};
use crate::snapshot::{load_world, read_snapshot, save_world, write_snapshot};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub const RESULTS_FILE: &str = "results.csv";

pub fn snapshot_file(seed: u64) -> String {
    format!("snapshot_seed{seed}.csv")
}

#[derive(Debug, Parser)]
#[command(name = "galforge", version, about = "Generative active learning on synthetic worlds")]
pub struct Cli {
    /// `key = value` configuration file applied over the defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set opt.k=6`. Repeatable; applied last.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build or inspect the synthetic world.
    #[command(subcommand)]
    World(WorldCommand),
    /// Pre-train the conditional generator.
    #[command(subcommand)]
    Generator(GeneratorCommand),
    /// Run the active-learning cycles for every seed.
    Run(RunArgs),
    /// Repeat `run` once per value of one key.
    Ablate(AblateArgs),
    /// Oracle-judged pseudo-label accuracy over radii and templates.
    Audit(AuditArgs),
    /// Retrain another architecture on the saved data of a run.
    Reuse(ReuseArgs),
    /// Merge results files into an accuracy-vs-budget matrix.
    Report(ReportArgs),
    /// List every configuration key with its default.
    Keys,
}

#[derive(Debug, Subcommand)]
pub enum WorldCommand {
    /// Generate the pretrain, pool and test splits plus the embedding table.
    Make {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum GeneratorCommand {
    /// Train the noise predictor and write a checkpoint.
    Pretrain {
        /// World directory; built from the configuration when omitted.
        #[arg(long)]
        world: Option<PathBuf>,
        /// Checkpoint path.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct Inputs {
    /// World directory; built from the configuration when omitted.
    #[arg(long)]
    pub world: Option<PathBuf>,
    /// Generator checkpoint; required by every mode that generates.
    #[arg(long)]
    pub generator_ckpt: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    /// Output directory for results, snapshots and the manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Shorthand for `--set run.mode=...`.
    #[arg(long)]
    pub mode: Option<String>,
    /// Shorthand for `--set run.cycles=...`.
    #[arg(long)]
    pub cycles: Option<String>,
    /// Shorthand for `--set al.b_al=...`.
    #[arg(long)]
    pub b_al: Option<String>,
    /// Shorthand for `--set run.seeds=...`.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Shorthand for `--set classifier.arch=...`.
    #[arg(long)]
    pub arch: Option<String>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Configuration key to vary.
    pub key: String,
    /// Comma-separated grid.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<String>,
    #[command(flatten)]
    pub inputs: Inputs,
    /// One `KEY=value` subdirectory per value is created here.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    /// CSV table path.
    #[arg(long)]
    pub out: PathBuf,
    /// Ball radii around the anchor.
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,1")]
    pub eps: Vec<f64>,
    /// Template ids; all templates when omitted.
    #[arg(long, value_delimiter = ',')]
    pub templates: Vec<usize>,
    /// Samples per cell.
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ReuseArgs {
    /// Output directory of an earlier `run`.
    #[arg(long)]
    pub from: PathBuf,
    /// Architecture to retrain, e.g. `mlp-128x128`.
    #[arg(long)]
    pub arch: String,
    /// World directory; rebuilt from the run's configuration when omitted.
    #[arg(long)]
    pub world: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// `results.csv` files; rows are grouped by their method column.
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
    /// Write the matrix here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parse `argv` (including the program name), execute, and return the exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let cfg = match resolve_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            eprintln!("run `galforge keys` for the recognised keys");
            return EXIT_USAGE;
        }
    };
    match execute(cli.command, cfg) {
        Ok(()) => EXIT_OK,
        Err(Error::Config(msg)) => {
            eprintln!("error: config: {msg}");
            EXIT_USAGE
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<Config> {
    let mut cfg = Config::default();
    if let Some(p) = &cli.config {
        cfg.apply_file(p)?;
    }
    if let Command::Run(a) = &cli.command {
        let flags = [
            ("run.mode", &a.mode),
            ("run.cycles", &a.cycles),
            ("al.b_al", &a.b_al),
            ("run.seeds", &a.seeds),
            ("classifier.arch", &a.arch),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, v)?;
            }
        }
    }
    for s in &cli.set {
        cfg.apply_override(s)?;
    }
    Ok(cfg)
}

fn execute(command: Command, mut cfg: Config) -> Result<()> {
    match command {
        Command::Keys => {
            for (k, v, doc) in KEYS {
                emit(&format!("{k} = {v}    # {doc}\n"));
            }
            Ok(())
        }
        Command::World(WorldCommand::Make { out }) => {
            let world = make_world(&cfg.world_spec()?)?;
            save_world(&out, &world)?;
            emit(&format!("world written to {} (Bayes ceiling {:.4})\n", out.display(), world.bayes_ceiling()));
            Ok(())
        }
        Command::Generator(GeneratorCommand::Pretrain { world, out }) => {
            let world = world_input(world.as_deref(), &mut cfg)?;
            let gcfg = cfg.generator_config()?;
            let (gen, report) = pretrain_generator(&world.pretrain, world.embeddings.clone(), &gcfg)?;
            save_generator(&out, &gen)?;
            emit(&format!(
                "generator written to {} (held-out denoising MSE {:.4} -> {:.4})\n",
                out.display(),
                report.initial_heldout_mse,
                report.heldout_mse
            ));
            Ok(())
        }
        Command::Run(a) => {
            let (world, gen, digests) = load_inputs(&a.inputs, &mut cfg)?;
            run_into(&a.out, "run", &cfg, &world, gen.as_ref(), &digests)
        }
        Command::Ablate(a) => {
            let (world, gen, digests) = load_inputs(&a.inputs, &mut cfg)?;
            let mut failed = None;
            for v in &a.values {
                let mut c = cfg.clone();
                c.set(&a.key, v)?;
                c.experiment()?;
                let dir = a.out.join(format!("{}={v}", a.key));
                if let Err(e) = run_into(&dir, "ablate", &c, &world, gen.as_ref(), &digests) {
                    eprintln!("error: {}={v}: {e}", a.key);
                    failed.get_or_insert(e);
                }
            }
            failed.map_or(Ok(()), Err)
        }
        Command::Audit(a) => {
            let (world, gen, _) = load_inputs(&a.inputs, &mut cfg)?;
            let gen = gen.ok_or_else(|| Error::Config("audit needs --generator-ckpt".into()))?;
            let templates = if a.templates.is_empty() {
                (0..gen.embeddings.templates()).collect()
            } else {
                a.templates.clone()
            };
            if let Some(&t) = templates.iter().find(|&&t| t >= gen.embeddings.templates()) {
                return Err(Error::Config(format!("template {t} out of range")));
            }
            let cells = audit_pseudo_labels(&gen, &world, &a.eps, &templates, a.n, a.seed)?;
            atomic_write(&a.out, render_audit(&cells).as_bytes())?;
            for c in &cells {
                emit(&format!("template {} eps {}: {:.4}\n", c.template, c.epsilon, c.accuracy()));
            }
            Ok(())
        }
        Command::Reuse(a) => {
            let mut cfg = read_config(&a.from.join(FILE_NAME))?;
            cfg.set("classifier.arch", &a.arch)?;
            let world = world_input(a.world.as_deref(), &mut cfg)?;
            let exp = cfg.experiment()?;
            let mut snaps = Vec::new();
            for &seed in &exp.seeds {
                let (dim, rows) = read_snapshot(&a.from.join(snapshot_file(seed)))?;
                world.check_dim(dim)?;
                snaps.push((seed, rows));
            }
            let mut m = RunManifest::new("reuse", &cfg);
            m.digests.push(("source".into(), digest_path(&a.from.join(RESULTS_FILE))?));
            std::fs::create_dir_all(&a.out).map_err(crate::error::io_err(&a.out))?;
            m.write(&a.out)?;
            let rows = reuse_dataset(&snaps, &a.arch, &world, &exp, None, &m.run_id);
            finish(&a.out, &mut m, rows.as_deref().unwrap_or(&[]), rows.as_ref().err())?;
            rows.map(|_| ())
        }
        Command::Report(a) => {
            let mut rows = Vec::new();
            for f in &a.files {
                rows.extend(results::read(f)?);
            }
            let text = results::report(&rows).render();
            match &a.out {
                Some(p) => atomic_write(p, text.as_bytes())?,
                None => emit(&text),
            }
            Ok(())
        }
    }
}

/// Load the world from `dir` (echoing its spec into `cfg`) or build it from `cfg`.
fn world_input(dir: Option<&Path>, cfg: &mut Config) -> Result<World> {
    match dir {
        Some(d) => {
            let w = load_world(d)?;
            let s = &w.spec;
            let pairs = [
                ("world.classes", s.classes.to_string()),
                ("world.dim", s.dim.to_string()),
                ("world.layout", s.layout.name().to_string()),
                ("world.class_std", s.class_std.to_string()),
                ("world.spacing", s.spacing.to_string()),
                ("world.pretrain_n", s.pretrain_n.to_string()),
                ("world.pool_n", s.pool_n.to_string()),
                ("world.test_n", s.test_n.to_string()),
                ("world.seed", s.seed.to_string()),
            ];
            for (k, v) in pairs {
                cfg.set(k, &v)?;
            }
            Ok(w)
        }
        None => Ok(make_world(&cfg.world_spec()?)?),
    }
}

type Loaded = (World, Option<GeneratorModel>, Vec<(String, String)>);

fn load_inputs(inputs: &Inputs, cfg: &mut Config) -> Result<Loaded> {
    let world = world_input(inputs.world.as_deref(), cfg)?;
    let mut digests = Vec::new();
    if let Some(w) = &inputs.world {
        digests.push(("world".to_string(), digest_path(w)?));
    }
    let gen = match &inputs.generator_ckpt {
        Some(p) => {
            digests.push(("generator".to_string(), digest_path(p)?));
            Some(load_generator(p)?)
        }
        None => None,
    };
    Ok((world, gen, digests))
}

fn run_into(
    out: &Path,
    command: &str,
    cfg: &Config,
    world: &World,
    gen: Option<&GeneratorModel>,
    digests: &[(String, String)],
) -> Result<()> {
    let exp = cfg.experiment()?;
    std::fs::create_dir_all(out).map_err(crate::error::io_err(out))?;
    let mut m = RunManifest::new(command, cfg);
    m.digests = digests.to_vec();
    m.write(out)?;
    let output = run_experiment(&exp, world, gen, &m.run_id);
    for (seed, rows) in &output.snapshots {
        write_snapshot(&out.join(snapshot_file(*seed)), world.dim(), rows)?;
    }
    finish(out, &mut m, &output.rows, output.error.as_ref())?;
    match output.error {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn finish(out: &Path, m: &mut RunManifest, rows: &[ResultRow], err: Option<&Error>) -> Result<()> {
    let msg = err.map(|e| e.to_string());
    atomic_write(&out.join(RESULTS_FILE), results::render(rows, msg.as_deref()).as_bytes())?;
    m.finish(out, if err.is_some() { "aborted" } else { "ok" })
}

/// Write to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}
