use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tristage::panel::write_panel;
use tristage::pipeline::{
    check_config, demo_config, emit_report, Format, LoadedConfig, PipelineError, ReportBundle, Session,
};
use tristage::synthetic::{demo_data, DEMO_SEED};

#[derive(Parser)]
#[command(name = "tristage", version, about = "DEA, clustering and PLS path analysis of panel data")]
struct Cli {
    /// Only print errors
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Pipeline config (JSON)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: the config's output.dir)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report formats, comma separated: csv, json, text
    #[arg(long, value_delimiter = ',')]
    format: Vec<Format>,
    /// Seed for every stochastic stage, overriding the config
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Check a config and its dataset
    Validate {
        /// Config path (same as --config)
        path: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the DEA stage
    Dea {
        #[command(flatten)]
        common: Common,
        /// Restrict to one period
        #[arg(long)]
        period: Option<String>,
    },
    /// Run the cluster stage on a report written by `dea`
    Cluster {
        #[command(flatten)]
        common: Common,
        /// report.json from the previous stage
        #[arg(long)]
        input: PathBuf,
    },
    /// Run the PLS stage on a report written by `cluster`
    Pls {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
    },
    /// Run every stage
    Pipeline {
        /// Config path (same as --config)
        path: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Write the synthetic demo dataset and config, then run the pipeline
    Demo {
        #[command(flatten)]
        common: Common,
        /// Seed for the synthetic data
        #[arg(long, default_value_t = DEMO_SEED)]
        data_seed: u64,
    },
}

struct Ctx {
    quiet: bool,
}

impl Ctx {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }
}

fn config_path(positional: Option<PathBuf>, flag: Option<PathBuf>) -> Result<PathBuf, PipelineError> {
    positional
        .or(flag)
        .ok_or_else(|| PipelineError::Usage("a config is required (--config <path>)".into()))
}

fn emit(ctx: &Ctx, loaded: &LoadedConfig, common: &Common, bundle: &ReportBundle, force_json: bool) -> Result<(), PipelineError> {
    let dir = loaded.output_dir(common.out.as_deref());
    let mut formats = if common.format.is_empty() {
        loaded.config.output.formats.clone()
    } else {
        common.format.clone()
    };
    if force_json && !formats.contains(&Format::Json) {
        formats.push(Format::Json);
    }
    for f in emit_report(bundle, &dir, &formats)? {
        ctx.say(format!("wrote {}", f.display()));
    }
    summarize(ctx, bundle);
    Ok(())
}

fn summarize(ctx: &Ctx, bundle: &ReportBundle) {
    if let Some(tables) = bundle.cluster.completed() {
        for t in tables {
            match t.selected_k {
                Some(k) => ctx.say(format!("{}: selected k = {k}", t.analysis)),
                None => ctx.say(format!("{}: no significant k", t.analysis)),
            }
        }
    }
    if let Some(c) = bundle.correspondence.completed() {
        for t in &c.tables {
            ctx.say(format!("{} vs {}: {} of {} DMUs in the same cluster", t.rows, t.columns, t.agreement, t.total));
        }
    }
}

/// Turns stage failures recorded in the bundle into an error after the
/// partial report has been written.
fn finish(bundle: &ReportBundle) -> Result<(), PipelineError> {
    match bundle.diagnostics.first() {
        Some(d) => Err(PipelineError::Stage {
            stage: d.stage.clone(),
            message: d.message.clone(),
        }),
        None => Ok(()),
    }
}

fn read_bundle(path: &Path) -> Result<ReportBundle, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    ReportBundle::from_json(&text)
}

fn run_chained(
    ctx: &Ctx,
    common: &Common,
    input: &Path,
    step: impl Fn(&Session, &mut ReportBundle),
) -> Result<(), PipelineError> {
    let loaded = LoadedConfig::load(&config_path(None, common.config.clone())?)?;
    let session = Session::open(&loaded, common.seed)?;
    let mut bundle = read_bundle(input)?;
    session.adopt(&bundle)?;
    step(&session, &mut bundle);
    emit(ctx, &loaded, common, &bundle, true)?;
    finish(&bundle)
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let ctx = Ctx { quiet: cli.quiet };
    match cli.command {
        Command::Validate { path, config } => {
            let loaded = LoadedConfig::load(&config_path(path, config)?)?;
            let check = check_config(&loaded)?;
            if check.is_ok() {
                ctx.say(check.to_string().trim_end());
                Ok(())
            } else {
                Err(PipelineError::Invalid(check))
            }
        }
        Command::Dea { common, period } => {
            let loaded = LoadedConfig::load(&config_path(None, common.config.clone())?)?;
            let session = Session::open(&loaded, common.seed)?;
            let mut bundle = session.new_bundle();
            let periods = period.map(|p| vec![p]);
            session.run_dea(&mut bundle, periods.as_deref());
            emit(&ctx, &loaded, &common, &bundle, true)?;
            finish(&bundle)
        }
        Command::Cluster { common, input } => run_chained(&ctx, &common, &input, |s, b| s.run_cluster(b)),
        Command::Pls { common, input } => run_chained(&ctx, &common, &input, |s, b| s.run_pls(b)),
        Command::Pipeline { path, common } => {
            let loaded = LoadedConfig::load(&config_path(path, common.config.clone())?)?;
            let bundle = Session::open(&loaded, common.seed)?.run_all();
            emit(&ctx, &loaded, &common, &bundle, false)?;
            finish(&bundle)
        }
        Command::Demo { common, data_seed } => {
            let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("demo"));
            std::fs::create_dir_all(&dir).map_err(|e| PipelineError::Io {
                path: dir.clone(),
                source: e,
            })?;
            let data = demo_data(data_seed);
            let mut csv = Vec::new();
            write_panel(&data.panel, &mut csv).map_err(|e| PipelineError::Usage(e.to_string()))?;
            let write = |name: &str, bytes: &[u8]| {
                let path = dir.join(name);
                std::fs::write(&path, bytes).map_err(|e| PipelineError::Io { path, source: e })
            };
            write("demo_panel.csv", &csv)?;
            let mut config = demo_config("demo_panel.csv");
            config.output.dir = "report".into();
            write("demo.json", config.to_json().as_bytes())?;
            ctx.say(format!("wrote {} and {}", dir.join("demo_panel.csv").display(), dir.join("demo.json").display()));
            let loaded = LoadedConfig::load(&dir.join("demo.json"))?;
            let bundle = Session::open(&loaded, common.seed)?.run_all();
            let common = Common {
                out: Some(dir.join("report")),
                ..common
            };
            emit(&ctx, &loaded, &common, &bundle, false)?;
            finish(&bundle)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
