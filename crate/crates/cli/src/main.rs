use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use epv_core::duels::AdvantageMode;
use epv_core::event::{DuelKind, Format};
use epv_core::pipeline::{IngestSource, PipelineConfig, PipelineError, Stage, Workspace, CONFIG_FILE};
use epv_core::pv::PvVariant;
use epv_core::testkit::{generate, SynthLeagueSpec};

#[derive(Parser)]
#[command(name = "epv", version, about = "Possession value, duel ratings and season forecasts from event streams")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Global {
    /// Work directory holding artifacts, manifest and the run's config.
    #[arg(long, global = true, default_value = "epv-work", visible_alias = "models")]
    work: PathBuf,
    /// Pipeline configuration (TOML); defaults to the work directory's saved one.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed mixed into every learner.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Validate and normalize events plus fixture, squad and lineup tables.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "jsonl")]
        format: Format,
        /// Directory with matches.csv, players.csv and lineups.csv.
        #[arg(long)]
        sidecars: Option<PathBuf>,
    },
    /// Train the open-play and set-piece xG models.
    TrainXg {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute possession-value targets.
    Label {
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        variant: Option<PvVariant>,
        /// Lookahead horizon, effective seconds.
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the duel context models and run the rating periods.
    RateDuels {
        #[arg(long, default_value = "aerial", value_parser = parse_kind)]
        kind: DuelKind,
        #[arg(long)]
        advantage: Option<AdvantageMode>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        min_duels: Option<u32>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the EPV models.
    TrainEpv {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-action rewards.
    Rewards {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Season lines and PCR rankings.
    Pcr {
        #[arg(long)]
        season: Option<String>,
        #[arg(long)]
        min_minutes: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Duels following a player's long passes, per target.
    DuelReport {
        #[arg(long)]
        player: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the season forecast and emit a shortlist.
    Forecast {
        #[arg(long)]
        season: Option<String>,
        #[arg(long)]
        destination: Option<String>,
        #[arg(long)]
        top_n: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Hold-out evaluation against the persistence baseline.
    Evaluate {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Every stage from ingest through evaluate.
    Run {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "jsonl")]
        format: Format,
        #[arg(long)]
        sidecars: Option<PathBuf>,
        /// Last stage to run.
        #[arg(long, value_parser = parse_stage)]
        until: Option<Stage>,
    },
    /// Generate a synthetic league with planted skills.
    Synth {
        /// League spec (TOML); defaults apply to missing keys.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Events file; sidecar tables are written next to it.
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_kind(s: &str) -> Result<DuelKind, String> {
    DuelKind::parse(s).ok_or_else(|| format!("unknown duel kind `{s}` (aerial or ground)"))
}

fn parse_stage(s: &str) -> Result<Stage, String> {
    Stage::parse(s).ok_or_else(|| format!("unknown stage `{s}`"))
}

fn load_config(g: &Global) -> anyhow::Result<PipelineConfig> {
    let path = match &g.config {
        Some(p) => Some(p.clone()),
        None => Some(g.work.join(CONFIG_FILE)).filter(|p| p.exists()),
    };
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
            PipelineConfig::from_toml(&text)?
        }
        None => PipelineConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn synth(spec: Option<&Path>, out: &Path, seed: Option<u64>) -> anyhow::Result<()> {
    let mut spec = match spec {
        Some(p) => SynthLeagueSpec::from_toml(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
            .map_err(|e| PipelineError::Config(e.to_string()))?,
        None => SynthLeagueSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let league = generate(&spec);
    let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    league.write_dir(dir)?;
    let written = dir.join("events.jsonl");
    if written != out {
        std::fs::rename(&written, out)?;
    }
    println!("{} matches, {} events -> {}", league.matches.len(), league.events.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Cmd::Synth { spec, out } = &cli.cmd {
        return synth(spec.as_deref(), out, cli.global.seed);
    }
    let mut cfg = load_config(&cli.global)?;
    match &cli.cmd {
        Cmd::Label { gamma, variant, horizon, .. } => {
            cfg.gamma = gamma.unwrap_or(cfg.gamma);
            cfg.variant = variant.unwrap_or(cfg.variant);
            cfg.horizon_s = horizon.unwrap_or(cfg.horizon_s);
        }
        Cmd::RateDuels { advantage, tau, min_duels, .. } => {
            cfg.advantage = advantage.unwrap_or(cfg.advantage);
            cfg.glicko.tau = tau.unwrap_or(cfg.glicko.tau);
            cfg.rating_min_duels = min_duels.unwrap_or(cfg.rating_min_duels);
        }
        Cmd::Pcr { min_minutes, .. } => cfg.ranking_min_minutes = min_minutes.unwrap_or(cfg.ranking_min_minutes),
        Cmd::DuelReport { player: Some(p), .. } => cfg.report_player = Some(p.clone()),
        Cmd::Forecast { season, destination, top_n, .. } => {
            if season.is_some() {
                cfg.forecast_season = season.clone();
            }
            if destination.is_some() {
                cfg.destination = destination.clone();
            }
            cfg.forecast.top_n = top_n.unwrap_or(cfg.forecast.top_n);
        }
        _ => {}
    }
    let ws = Workspace::new(&cli.global.work, cfg);
    match cli.cmd {
        Cmd::Ingest { input, format, sidecars } => {
            ws.ingest(&IngestSource { events: input, format, sidecars })?;
            println!("ingested into {}", ws.dir.display());
        }
        Cmd::TrainXg { out } => {
            ws.train_xg()?;
            copy(&ws, Stage::TrainXg, "xg_model.json", out)?;
        }
        Cmd::Label { out, .. } => {
            println!("{} labeled actions", ws.label()?);
            copy(&ws, Stage::Label, "labels.csv", out)?;
        }
        Cmd::RateDuels { kind, out, .. } => {
            let run = ws.rate_duels()?;
            println!("{} rating periods", run.periods.len());
            copy(&ws, Stage::RateDuels, &format!("ratings_{}.csv", kind.as_str()), out)?;
        }
        Cmd::TrainEpv { out } => {
            for f in ws.train_epv()?.fits {
                println!("{}: {} rows, rmse {:.4}", f.model, f.rows, f.rmse);
            }
            copy(&ws, Stage::TrainEpv, "epv_model.json", out)?;
        }
        Cmd::Rewards { out } => {
            println!("{} rewards", ws.rewards()?.len());
            copy(&ws, Stage::Rewards, "rewards.csv", out)?;
        }
        Cmd::Pcr { season, out, .. } => {
            println!("{} season lines", ws.pcr()?.len());
            match (season, out) {
                (Some(s), Some(out)) => ws.export(Stage::Pcr, &out, &ws.rankings(Some(&s))?)?,
                (None, out) => copy(&ws, Stage::Pcr, "pcr_rankings.csv", out)?,
                (Some(_), None) => {}
            }
        }
        Cmd::DuelReport { out, .. } => {
            println!("{} report rows", ws.duel_report()?.len());
            copy(&ws, Stage::DuelReport, "duel_report.csv", out)?;
        }
        Cmd::Forecast { out, .. } => {
            println!("{} shortlisted", ws.forecast()?.len());
            copy(&ws, Stage::Forecast, "shortlist.csv", out)?;
        }
        Cmd::Evaluate { out } => {
            let report = ws.evaluate()?;
            for n in &report.notes {
                eprintln!("note: {n}");
            }
            println!("{} evaluation cells", report.cells.len());
            copy(&ws, Stage::Evaluate, "evaluation.csv", out)?;
        }
        Cmd::Run { input, format, sidecars, until } => {
            let last = until.unwrap_or(Stage::Evaluate);
            let stages: Vec<Stage> = Stage::ALL.into_iter().filter(|s| *s <= last).collect();
            ws.run_pipeline(&stages, Some(&IngestSource { events: input, format, sidecars }))?;
            println!("ran {} stages into {}", stages.len(), ws.dir.display());
        }
        Cmd::Synth { .. } => unreachable!(),
    }
    Ok(())
}

fn copy(ws: &Workspace, stage: Stage, name: &str, out: Option<PathBuf>) -> anyhow::Result<()> {
    if let Some(out) = out {
        ws.copy_artifact(stage, name, &out)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<PipelineError>().map_or(2, PipelineError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
