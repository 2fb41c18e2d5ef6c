//! File-backed stage runner over a work directory.
//!
//! Each stage reads the artifacts of the stages it depends on and writes its
//! own. Every artifact starts with the hash of the configuration slice that
//! produced it (its own stage and all upstream stages), and a stage refuses
//! inputs whose hash disagrees with the current configuration.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use num_traits::Float;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::duels::{
    collect_duels, rating_table, run_rating_pipeline, train_context_model, AdvantageMode, ContextModels, DuelRecord,
    RatedDuel, RatingRun,
};
use crate::event::{
    filter_noncore, ingest_events_with, write_jsonl, ControlKind, DuelKind, Event, Format, IngestOptions, MatchEvents,
    MatchId, PlayerId, PositionGroup, PossessionView, SeasonId, TeamId,
};
use crate::forecast::{
    build_training_rows, evaluate_forecast, next_season, rate_clubs, shortlist, train_forecast, EvalReport,
    ForecastConfig, ForecastData, ForecastModels,
};
use crate::glicko::GlickoParams;
use crate::learn::{GbtConfig, MODEL_FORMAT_VERSION};
use crate::pv::{label_dataset, ActionClass, LabeledAction, PvConfig, PvVariant};
use crate::reward::{
    compute_rewards, epv_training_rows, predict_epv, train_epv_with, DuelSkill, EpvModelSet, RewardRecord, Scenario,
};
use crate::roster::{read_table, write_table, LineupRecord, MatchRecord, PlayerRecord};
use crate::season::{long_pass_duel_report, season_lines, season_rankings, LongPassRule, MatchInput, ReportMatch, SeasonLine};
use crate::xg::{assign_xg, collect_shots, train_xg_with, XgModelPair};

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";
const HASH_PREFIX: &str = "# config-hash: ";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Mixed into every learner seed.
    pub seed: u64,
    pub gamma: f64,
    pub horizon_s: f64,
    pub variant: PvVariant,
    pub stoppage_gap_s: f64,
    /// Length and width of the input coordinate system.
    pub source_pitch: (f64, f64),
    pub glicko: GlickoParams<f64>,
    pub club_glicko: GlickoParams<f64>,
    pub advantage: AdvantageMode,
    pub weighted: bool,
    pub xg_model: GbtConfig<f64>,
    pub context_model: GbtConfig<f64>,
    pub epv_model: GbtConfig<f64>,
    pub rating_min_duels: u32,
    pub ranking_min_minutes: f64,
    pub long_pass: LongPassRule,
    /// Passer for the long-pass duel report; the most frequent one if unset.
    pub report_player: Option<String>,
    pub forecast: ForecastConfig,
    /// Base season of the shortlist; the latest if unset.
    pub forecast_season: Option<String>,
    /// Hypothetical destination club; each player's own club if unset.
    pub destination: Option<String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let pv = PvConfig::<f64>::default();
        PipelineConfig {
            seed: 0,
            gamma: pv.gamma,
            horizon_s: pv.horizon_s,
            variant: pv.variant,
            stoppage_gap_s: crate::event::DEFAULT_STOPPAGE_GAP_S,
            source_pitch: (crate::event::pitch::LENGTH, crate::event::pitch::WIDTH),
            glicko: GlickoParams::default(),
            club_glicko: GlickoParams::default(),
            advantage: AdvantageMode::default(),
            weighted: true,
            xg_model: GbtConfig { trees: 100, depth: 3, lr: 0.1, ..GbtConfig::default() },
            context_model: GbtConfig { trees: 100, depth: 3, lr: 0.1, ..GbtConfig::default() },
            epv_model: GbtConfig { trees: 100, depth: 4, lr: 0.1, ..GbtConfig::default() },
            rating_min_duels: 0,
            ranking_min_minutes: 1000.0,
            long_pass: LongPassRule::default(),
            report_player: None,
            forecast: ForecastConfig::default(),
            forecast_season: None,
            destination: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is plain data")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.pv().map_err(|e| PipelineError::Config(e.to_string()))?;
        if !(self.stoppage_gap_s > 0.0) {
            return Err(PipelineError::Config(format!("stoppage_gap_s must be positive, got {}", self.stoppage_gap_s)));
        }
        if !(self.source_pitch.0 > 0.0 && self.source_pitch.1 > 0.0) {
            return Err(PipelineError::Config("source_pitch dimensions must be positive".into()));
        }
        for (name, g) in [("glicko", &self.glicko), ("club_glicko", &self.club_glicko)] {
            if !(g.tau > 0.0 && g.initial_phi > 0.0 && g.initial_sigma > 0.0 && g.epsilon > 0.0) {
                return Err(PipelineError::Config(format!("{name}: parameters must be positive")));
            }
        }
        for (name, m) in [
            ("xg_model", &self.xg_model),
            ("context_model", &self.context_model),
            ("epv_model", &self.epv_model),
            ("forecast.pcr_model", &self.forecast.pcr_model),
            ("forecast.stay_model", &self.forecast.stay_model),
        ] {
            if m.trees == 0 || m.depth == 0 || !(m.lr > 0.0) || !(m.subsample > 0.0 && m.subsample <= 1.0) {
                return Err(PipelineError::Config(format!("{name}: trees, depth and lr must be positive, subsample in (0, 1]")));
            }
        }
        if self.forecast.top_n == 0 || self.forecast.top_n_by_league.values().any(|&n| n == 0) {
            return Err(PipelineError::Config("forecast.top_n must be positive".into()));
        }
        Ok(())
    }

    pub fn pv(&self) -> Result<PvConfig<f64>, crate::pv::PvError> {
        PvConfig::new(self.gamma, self.horizon_s, self.variant)
    }

    fn learner(&self, base: &GbtConfig<f64>) -> GbtConfig<f64> {
        GbtConfig { seed: base.seed.wrapping_add(self.seed), ..*base }
    }

    fn forecast_cfg(&self) -> ForecastConfig {
        let mut f = self.forecast.clone();
        f.pcr_model = self.learner(&f.pcr_model);
        f.stay_model = self.learner(&f.stay_model);
        f
    }

    /// The part of the configuration a stage itself reads.
    fn fragment(&self, stage: Stage) -> Value {
        match stage {
            Stage::Ingest => json!({ "stoppage_gap_s": self.stoppage_gap_s, "source_pitch": self.source_pitch }),
            Stage::TrainXg => json!({ "model": self.learner(&self.xg_model), "weighted": self.weighted }),
            Stage::Label => json!({ "gamma": self.gamma, "horizon_s": self.horizon_s, "variant": self.variant }),
            Stage::RateDuels => json!({
                "glicko": self.glicko,
                "advantage": self.advantage,
                "model": self.learner(&self.context_model),
                "min_duels": self.rating_min_duels,
            }),
            Stage::TrainEpv => json!({ "model": self.learner(&self.epv_model), "weighted": self.weighted }),
            Stage::Rewards => json!({}),
            Stage::Pcr => json!({ "min_minutes": self.ranking_min_minutes }),
            Stage::DuelReport => json!({ "rule": self.long_pass, "player": self.report_player }),
            Stage::Forecast => json!({
                "glicko": self.club_glicko,
                "forecast": self.forecast_cfg(),
                "season": self.forecast_season,
                "destination": self.destination,
            }),
            Stage::Evaluate => json!({ "glicko": self.club_glicko, "forecast": self.forecast_cfg() }),
        }
    }

    /// Hash of the whole configuration.
    pub fn hash(&self) -> String {
        digest(&serde_json::to_vec(&json!({ "version": env!("CARGO_PKG_VERSION"), "config": self })).expect("json"))
    }

    /// Hash of the configuration slices `stage` and its upstream stages read.
    pub fn stage_hash(&self, stage: Stage) -> String {
        let parts: BTreeMap<&str, Value> = stage.ancestors().into_iter().map(|s| (s.name(), self.fragment(s))).collect();
        let v = json!({ "version": env!("CARGO_PKG_VERSION"), "stages": parts });
        digest(&serde_json::to_vec(&v).expect("json"))
    }
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..8])
}

fn sha256(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    TrainXg,
    Label,
    RateDuels,
    TrainEpv,
    Rewards,
    Pcr,
    DuelReport,
    Forecast,
    Evaluate,
}

impl Stage {
    /// In dependency order.
    pub const ALL: [Stage; 10] = [
        Stage::Ingest,
        Stage::TrainXg,
        Stage::Label,
        Stage::RateDuels,
        Stage::TrainEpv,
        Stage::Rewards,
        Stage::Pcr,
        Stage::DuelReport,
        Stage::Forecast,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::TrainXg => "train-xg",
            Stage::Label => "label",
            Stage::RateDuels => "rate-duels",
            Stage::TrainEpv => "train-epv",
            Stage::Rewards => "rewards",
            Stage::Pcr => "pcr",
            Stage::DuelReport => "duel-report",
            Stage::Forecast => "forecast",
            Stage::Evaluate => "evaluate",
        }
    }

    pub fn parse(s: &str) -> Option<Stage> {
        match s {
            "rate" => Some(Stage::RateDuels),
            "train" => Some(Stage::TrainEpv),
            "report" => Some(Stage::DuelReport),
            _ => Stage::ALL.into_iter().find(|st| st.name() == s),
        }
    }

    /// Stages whose artifacts this stage reads.
    pub fn deps(self) -> &'static [Stage] {
        use Stage::*;
        match self {
            Ingest => &[],
            TrainXg => &[Ingest],
            Label => &[Ingest, TrainXg],
            RateDuels => &[Ingest],
            TrainEpv => &[Ingest, Label, RateDuels],
            Rewards => &[Ingest, RateDuels, TrainEpv],
            Pcr => &[Ingest, Label, Rewards],
            DuelReport => &[Ingest, RateDuels, TrainEpv],
            Forecast => &[Ingest, Pcr],
            Evaluate => &[Ingest, Pcr],
        }
    }

    pub fn outputs(self) -> &'static [&'static str] {
        use Stage::*;
        match self {
            Ingest => &["events.jsonl", "matches.csv", "players.csv", "lineups.csv"],
            TrainXg => &["xg_model.json"],
            Label => &["labels.csv"],
            RateDuels => &["context_model.json", "rated_duels.csv", "ratings_aerial.csv", "ratings_ground.csv"],
            TrainEpv => &["epv_model.json", "epv_fit.csv"],
            Rewards => &["rewards.csv"],
            Pcr => &["season_lines.csv", "pcr_rankings.csv"],
            DuelReport => &["duel_report.csv"],
            Forecast => &["club_ratings.csv", "forecast_model.json", "shortlist.csv"],
            Evaluate => &["evaluation.csv"],
        }
    }

    /// This stage and everything upstream of it, in dependency order.
    pub fn ancestors(self) -> Vec<Stage> {
        let mut seen = vec![self];
        let mut stack = vec![self];
        while let Some(s) = stack.pop() {
            for &d in s.deps() {
                if !seen.contains(&d) {
                    seen.push(d);
                    stack.push(d);
                }
            }
        }
        seen.sort();
        seen
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{artifact} is missing; run `{stage}` first")]
    Missing { stage: Stage, artifact: String },
    #[error("{artifact} was produced under a different configuration; rerun `{stage}`")]
    Stale { stage: Stage, artifact: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid input: {0}")]
    Input(String),
    #[error("{stage}: {message}")]
    Stage { stage: Stage, message: String },
}

impl PipelineError {
    /// 3 for missing or stale upstream artifacts, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Missing { .. } | PipelineError::Stale { .. } => 3,
            _ => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.display().to_string(), source }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub config_hash: String,
    /// sha256 of every file read, by name.
    pub inputs: BTreeMap<String, String>,
    /// sha256 of every file written, by name.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub crate_version: String,
    pub model_format_version: u32,
    pub config_hash: String,
    pub config: Value,
    pub stages: BTreeMap<String, StageRecord>,
}

/// Where the raw inputs of `ingest` live. Sidecars default to the events
/// file's directory; `lineups.csv` is optional.
#[derive(Clone, Debug)]
pub struct IngestSource {
    pub events: PathBuf,
    pub format: Format,
    pub sidecars: Option<PathBuf>,
}

impl IngestSource {
    pub fn new(events: impl Into<PathBuf>, format: Format) -> Self {
        IngestSource { events: events.into(), format, sidecars: None }
    }

    fn sidecar(&self, name: &str) -> PathBuf {
        let dir = self.sidecars.clone().or_else(|| self.events.parent().map(Path::to_path_buf)).unwrap_or_default();
        dir.join(name)
    }
}

#[derive(Clone, Debug)]
pub struct Workspace {
    pub dir: PathBuf,
    pub config: PipelineConfig,
}

/// One stage execution: tracks what it read and wrote for the manifest.
struct Run<'a> {
    ws: &'a Workspace,
    stage: Stage,
    record: StageRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct LabelRow {
    match_id: MatchId,
    event_index: u32,
    kind: ActionClass,
    pv: f64,
    xg: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RewardRow {
    match_id: MatchId,
    event_index: u32,
    player_id: PlayerId,
    scenario: Scenario,
    delta_epv: f64,
}

#[derive(Serialize, Deserialize)]
struct Stamped<T> {
    config_hash: String,
    body: T,
}

/// Matches with their filtered views, in match-id order.
struct Matches {
    records: Vec<MatchRecord>,
    views: Vec<PossessionView>,
}

impl Matches {
    fn period(&self, k: usize) -> &str {
        &self.records[k].date
    }
}

fn stage_err(stage: Stage) -> impl Fn(&dyn std::fmt::Display) -> PipelineError {
    move |e| PipelineError::Stage { stage, message: e.to_string() }
}

impl<'a> Run<'a> {
    fn new(ws: &'a Workspace, stage: Stage) -> Self {
        Run { ws, stage, record: StageRecord { config_hash: ws.config.stage_hash(stage), ..Default::default() } }
    }

    fn fail(&self, e: impl std::fmt::Display) -> PipelineError {
        stage_err(self.stage)(&e)
    }

    /// Body of an upstream artifact after its hash line.
    fn read(&mut self, from: Stage, name: &str) -> Result<Vec<u8>, PipelineError> {
        debug_assert!(self.stage.deps().contains(&from), "{} does not declare {}", self.stage, from);
        let path = self.ws.dir.join(name);
        if !path.exists() {
            return Err(PipelineError::Missing { stage: from, artifact: name.to_string() });
        }
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let stale = || PipelineError::Stale { stage: from, artifact: name.to_string() };
        let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(stale)?;
        let first = std::str::from_utf8(&bytes[..nl]).map_err(|_| stale())?;
        if first.strip_prefix(HASH_PREFIX) != Some(self.ws.config.stage_hash(from).as_str()) {
            return Err(stale());
        }
        self.record.inputs.insert(name.to_string(), sha256(&bytes));
        Ok(bytes[nl + 1..].to_vec())
    }

    fn read_json<T: DeserializeOwned>(&mut self, from: Stage, name: &str) -> Result<T, PipelineError> {
        let body = self.read(from, name)?;
        serde_json::from_slice(&body).map_err(|e| self.fail(format!("{name}: {e}")))
    }

    fn read_csv<T: DeserializeOwned>(&mut self, from: Stage, name: &str) -> Result<Vec<T>, PipelineError> {
        let body = self.read(from, name)?;
        read_table(body.as_slice()).map_err(|e| self.fail(format!("{name}: {e}")))
    }

    fn write(&mut self, name: &str, body: &[u8]) -> Result<(), PipelineError> {
        debug_assert!(self.stage.outputs().contains(&name));
        let mut bytes = format!("{HASH_PREFIX}{}\n", self.record.config_hash).into_bytes();
        bytes.extend_from_slice(body);
        let path = self.ws.dir.join(name);
        fs::write(&path, &bytes).map_err(io_err(&path))?;
        self.record.outputs.insert(name.to_string(), sha256(&bytes));
        Ok(())
    }

    fn write_csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<(), PipelineError> {
        let mut buf = Vec::new();
        write_table(&mut buf, rows).map_err(|e| self.fail(e))?;
        self.write(name, &buf)
    }

    fn write_json<T: Serialize>(&mut self, name: &str, body: &T) -> Result<(), PipelineError> {
        let mut buf = serde_json::to_vec(body).map_err(|e| self.fail(e))?;
        buf.push(b'\n');
        self.write(name, &buf)
    }

    fn finish(self) -> Result<(), PipelineError> {
        self.ws.record(self.stage, self.record)
    }

    fn events(&mut self) -> Result<Vec<MatchEvents>, PipelineError> {
        let body = self.read(Stage::Ingest, "events.jsonl")?;
        crate::event::ingest_events(body.as_slice(), Format::Jsonl).map_err(|e| self.fail(e))
    }

    fn matches(&mut self) -> Result<Matches, PipelineError> {
        let events = self.events()?;
        let fixtures: HashMap<MatchId, MatchRecord> =
            self.read_csv::<MatchRecord>(Stage::Ingest, "matches.csv")?.into_iter().map(|m| (m.match_id.clone(), m)).collect();
        let gap = self.ws.config.stoppage_gap_s;
        let views: Vec<PossessionView> = events
            .into_par_iter()
            .map(|m| PossessionView::build(m.match_id.clone(), m.events, gap).map(|v| filter_noncore(&v)))
            .collect::<Result<_, _>>()
            .map_err(|e| self.fail(e))?;
        let records = views
            .iter()
            .map(|v| fixtures.get(&v.match_id).cloned().ok_or_else(|| self.fail(format!("match {} has no fixture row", v.match_id))))
            .collect::<Result<_, _>>()?;
        Ok(Matches { records, views })
    }

    fn positions(&mut self) -> Result<HashMap<PlayerId, PositionGroup>, PipelineError> {
        let mut players = self.read_csv::<PlayerRecord>(Stage::Ingest, "players.csv")?;
        players.sort_by(|a, b| a.season_id.cmp(&b.season_id));
        Ok(players.into_iter().map(|p| (p.player_id, p.position)).collect())
    }

    fn labels(&mut self, m: &Matches) -> Result<Vec<(Vec<LabeledAction<f64>>, Vec<Option<f64>>)>, PipelineError> {
        let rows = self.read_csv::<LabelRow>(Stage::Label, "labels.csv")?;
        let mut by_match: HashMap<MatchId, Vec<LabelRow>> = HashMap::new();
        for r in rows {
            by_match.entry(r.match_id.clone()).or_default().push(r);
        }
        m.views
            .iter()
            .map(|v| {
                let index = position_index(v);
                let mut labels = Vec::new();
                let mut xg = vec![None; v.len()];
                for r in by_match.remove(&v.match_id).unwrap_or_default() {
                    let &i = index.get(&r.event_index).ok_or_else(|| self.fail(format!("label for unknown event ({}, {})", r.match_id, r.event_index)))?;
                    xg[i] = r.xg;
                    labels.push(LabeledAction { position: i, event_index: r.event_index, kind: r.kind, pv: r.pv, epv: None });
                }
                Ok((labels, xg))
            })
            .collect()
    }

    fn ratings(&mut self) -> Result<(ContextModels, RatingRun), PipelineError> {
        let ctx: Stamped<ContextModels> = self.read_json(Stage::RateDuels, "context_model.json")?;
        let rated = self.read_csv::<RatedDuel>(Stage::RateDuels, "rated_duels.csv")?;
        let run = run_rating_pipeline(&rated, &self.ws.config.glicko, self.ws.config.advantage).map_err(|e| self.fail(e))?;
        Ok((ctx.body, run))
    }

    fn epv(&mut self) -> Result<EpvModelSet, PipelineError> {
        Ok(self.read_json::<Stamped<EpvModelSet>>(Stage::TrainEpv, "epv_model.json")?.body)
    }
}

fn position_index(v: &PossessionView) -> HashMap<u32, usize> {
    v.events.iter().enumerate().map(|(i, a)| (a.event.event_index, i)).collect()
}

impl Workspace {
    pub fn new(dir: impl Into<PathBuf>, config: PipelineConfig) -> Self {
        Workspace { dir: dir.into(), config }
    }

    /// Opens `dir`, taking the configuration saved by an earlier run if there
    /// is one and the defaults otherwise.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, PipelineError> {
        let dir = dir.into();
        let path = dir.join(CONFIG_FILE);
        let config = if path.exists() {
            PipelineConfig::from_toml(&fs::read_to_string(&path).map_err(io_err(&path))?)?
        } else {
            PipelineConfig::default()
        };
        Ok(Workspace { dir, config })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn prepare(&self) -> Result<(), PipelineError> {
        self.config.validate()?;
        fs::create_dir_all(&self.dir).map_err(io_err(&self.dir))?;
        let path = self.dir.join(CONFIG_FILE);
        fs::write(&path, self.config.to_toml()).map_err(io_err(&path))
    }

    pub fn manifest(&self) -> Result<Manifest, PipelineError> {
        let path = self.dir.join(MANIFEST);
        if !path.exists() {
            return Ok(Manifest::default());
        }
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Input(format!("{}: {e}", path.display())))
    }

    fn record(&self, stage: Stage, rec: StageRecord) -> Result<(), PipelineError> {
        let mut m = self.manifest().unwrap_or_default();
        m.crate_version = env!("CARGO_PKG_VERSION").to_string();
        m.model_format_version = MODEL_FORMAT_VERSION;
        m.config_hash = self.config.hash();
        m.config = serde_json::to_value(&self.config).expect("config is plain data");
        m.stages.insert(stage.name().to_string(), rec);
        let path = self.dir.join(MANIFEST);
        let mut text = serde_json::to_string_pretty(&m).expect("manifest is plain data");
        text.push('\n');
        fs::write(&path, text).map_err(io_err(&path))
    }

    /// Body of an artifact without its hash line, checked against the
    /// current configuration.
    pub fn artifact(&self, stage: Stage, name: &str) -> Result<Vec<u8>, PipelineError> {
        let path = self.dir.join(name);
        if !path.exists() {
            return Err(PipelineError::Missing { stage, artifact: name.to_string() });
        }
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let expected = format!("{HASH_PREFIX}{}", self.config.stage_hash(stage));
        match bytes.iter().position(|&b| b == b'\n') {
            Some(nl) if bytes[..nl] == *expected.as_bytes() => Ok(bytes[nl + 1..].to_vec()),
            _ => Err(PipelineError::Stale { stage, artifact: name.to_string() }),
        }
    }

    pub fn ingest(&self, src: &IngestSource) -> Result<(), PipelineError> {
        self.prepare()?;
        let mut run = Run::new(self, Stage::Ingest);
        let bytes = fs::read(&src.events).map_err(io_err(&src.events))?;
        run.record.inputs.insert(file_name(&src.events), sha256(&bytes));
        let opts = IngestOptions { source_pitch: self.config.source_pitch };
        let matches = ingest_events_with(bytes.as_slice(), src.format, &opts).map_err(|e| PipelineError::Input(e.to_string()))?;

        let mut sidecar = |name: &str, required: bool| -> Result<Option<Vec<u8>>, PipelineError> {
            let path = src.sidecar(name);
            if !path.exists() {
                return if required { Err(PipelineError::Input(format!("{} not found", path.display()))) } else { Ok(None) };
            }
            let bytes = fs::read(&path).map_err(io_err(&path))?;
            run.record.inputs.insert(name.to_string(), sha256(&bytes));
            Ok(Some(bytes))
        };
        let mut fixtures: Vec<MatchRecord> = read_table(sidecar("matches.csv", true)?.unwrap_or_default().as_slice())
            .map_err(|e| PipelineError::Input(format!("matches.csv: {e}")))?;
        let players: Vec<PlayerRecord> = read_table(sidecar("players.csv", true)?.unwrap_or_default().as_slice())
            .map_err(|e| PipelineError::Input(format!("players.csv: {e}")))?;
        let lineups: Vec<LineupRecord> = match sidecar("lineups.csv", false)? {
            Some(b) => read_table(b.as_slice()).map_err(|e| PipelineError::Input(format!("lineups.csv: {e}")))?,
            None => Vec::new(),
        };

        fixtures.sort_by(|a, b| a.date.cmp(&b.date).then(a.match_id.cmp(&b.match_id)));
        let known: HashMap<&MatchId, &MatchRecord> = fixtures.iter().map(|m| (&m.match_id, m)).collect();
        if known.len() != fixtures.len() {
            return Err(PipelineError::Input("matches.csv: duplicate match_id".into()));
        }
        for m in &matches {
            let Some(f) = known.get(&m.match_id) else {
                return Err(PipelineError::Input(format!("match {} has no row in matches.csv", m.match_id)));
            };
            if let Some(e) = m.events.iter().find(|e| e.team_id != f.home_team && e.team_id != f.away_team) {
                return Err(PipelineError::Input(format!(
                    "match {}: event {} team {} is neither {} nor {}",
                    m.match_id, e.event_index, e.team_id, f.home_team, f.away_team
                )));
            }
            PossessionView::build(m.match_id.clone(), m.events.clone(), self.config.stoppage_gap_s)
                .map_err(|e| PipelineError::Input(format!("match {}: {e}", m.match_id)))?;
        }

        let mut buf = Vec::new();
        write_jsonl(&mut buf, matches.iter().flat_map(|m| m.events.iter())).map_err(|e| run.fail(e))?;
        run.write("events.jsonl", &buf)?;
        run.write_csv("matches.csv", &fixtures)?;
        run.write_csv("players.csv", &players)?;
        run.write_csv("lineups.csv", &lineups)?;
        run.finish()
    }

    pub fn train_xg(&self) -> Result<XgModelPair, PipelineError> {
        self.prepare()?;
        let mut run = Run::new(self, Stage::TrainXg);
        let m = run.matches()?;
        let shots = collect_shots(&m.views);
        let pair = train_xg_with(&shots, &self.config.learner(&self.config.xg_model), self.config.weighted).map_err(|e| run.fail(e))?;
        run.write_json("xg_model.json", &Stamped { config_hash: run.record.config_hash.clone(), body: &pair })?;
        run.finish()?;
        Ok(pair)
    }

    pub fn label(&self) -> Result<usize, PipelineError> {
        self.prepare()?;
        let mut run = Run::new(self, Stage::Label);
        let m = run.matches()?;
        let pair: Stamped<XgModelPair> = run.read_json(Stage::TrainXg, "xg_model.json")?;
        let pv = self.config.pv().map_err(|e| run.fail(e))?;
        let per_match: Vec<Vec<LabelRow>> = m
            .views
            .par_iter()
            .map(|v| {
                let xg = assign_xg(&pair.body, v);
                let labels = label_dataset(v, &xg, &pv)?;
                Ok(labels
                    .into_iter()
                    .map(|l| LabelRow { match_id: v.match_id.clone(), event_index: l.event_index, kind: l.kind, pv: l.pv, xg: xg[l.position] })
                    .collect())
            })
            .collect::<Result<_, crate::pv::PvError>>()
            .map_err(|e| run.fail(e))?;
        let rows: Vec<LabelRow> = per_match.into_iter().flatten().collect();
        run.write_csv("labels.csv", &rows)?;
        run.finish()?;
        Ok(rows.len())
    }

    pub fn rate_duels(&self) -> Result<RatingRun, PipelineError> {
        self.prepare()?;
        let mut run = Run::new(self, Stage::RateDuels);
        let m = run.matches()?;
        let positions = run.positions()?;
        let duels: Vec<Vec<DuelRecord>> = m.views.par_iter().map(collect_duels).collect();
        let cfg = self.config.learner(&self.config.context_model);
        let train = |kind| train_context_model(duels.iter().flatten(), &positions, kind, &cfg).map_err(|e| run.fail(e));
        let ctx = ContextModels { aerial: train(DuelKind::Aerial)?, ground: train(DuelKind::Ground)? };
        let rated: Vec<RatedDuel> = duels
            .iter()
            .enumerate()
            .flat_map(|(k, ds)| ds.iter().filter_map(|d| RatedDuel::from_record(d, m.period(k), &ctx)).collect::<Vec<_>>())
            .collect();
        let ratings = run_rating_pipeline(&rated, &self.config.glicko, self.config.advantage).map_err(|e| run.fail(e))?;
        run.write_json("context_model.json", &Stamped { config_hash: run.record.config_hash.clone(), body: &ctx })?;
        run.write_csv("rated_duels.csv", &rated)?;
        for (kind, name) in [(DuelKind::Aerial, "ratings_aerial.csv"), (DuelKind::Ground, "ratings_ground.csv")] {
            run.write_csv(name, &rating_table(&ratings, kind, &positions, self.config.rating_min_duels))?;
        }
        run.finish()?;
        Ok(ratings)
    }

    pub fn train_epv(&self) -> Result<EpvModelSet, PipelineError> {
        self.prepare()?;
        let mut run = Run::new(self, Stage::TrainEpv);
        let m = run.matches()?;
        let labels = run.labels(&m)?;
        let (ctx, ratings) = run.ratings()?;
        let rows: Vec<_> = (0..m.views.len())
            .into_par_iter()
            .map(|k| {
                let skill = DuelSkill { context: &ctx, ratings: &ratings, period: m.period(k) };
                epv_training_rows(&m.views[k], &labels[k].0, &skill)
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| run.fail(e))?;
        let rows = rows.into_iter().flatten().collect();
        let models = train_epv_with(rows, &self.config.learner(&self.config.epv_model), self.config.weighted).map_err(|e| run.fail(e))?;
        run.write_json("epv_model.json", &Stamped { config_hash: run.record.config_hash.clone(), body: &models })?;
        run.write_csv("epv_fit.csv", &models.fits)?;
        run.finish()?;
        Ok(models)
    }

    pub fn rewards(&self) -> Result<Vec<RewardRecord>, PipelineError> {
        self.prepare()?;
        let mut run = Run::new(self, Stage::Rewards);
        let m = run.matches()?;
        let (ctx, ratings) = run.ratings()?;
        let models = run.epv()?;
        let per_match: Vec<Vec<RewardRecord>> = (0..m.views.len())
            .into_par_iter()
            .map(|k| {
                let skill = DuelSkill { context: &ctx, ratings: &ratings, period: m.period(k) };
                let epv = predict_epv(&models, &m.views[k], &skill)?;
                compute_rewards(&m.views[k], &epv)
            })
            .collect::<Result<_, _>>()
            .map_err(|e| run.fail(e))?;
        let records: Vec<RewardRecord> = per_match.into_iter().flatten().collect();
        let rows: Vec<RewardRow> = records
            .iter()
            .map(|r| RewardRow {
                match_id: r.match_id.clone(),
                event_index: r.event_index,
                player_id: r.player_id.clone(),
                scenario: r.scenario,
                delta_epv: r.delta_epv,
            })
            .collect();
        run.write_csv("rewards.csv", &rows)?;
        run.finish()?;
        Ok(records)
    }

    pub fn pcr(&self) -> Result<Vec<SeasonLine>, PipelineError> {
        self.prepare()?;
        let mut run = Run::new(self, Stage::Pcr);
        let m = run.matches()?;
        let labels = run.labels(&m)?;
        let lineups = run.read_csv::<LineupRecord>(Stage::Ingest, "lineups.csv")?;
        let rewards = run.read_csv::<RewardRow>(Stage::Rewards, "rewards.csv")?;
        let mut lineups_by: HashMap<MatchId, Vec<LineupRecord>> = HashMap::new();
        for l in lineups {
            lineups_by.entry(l.match_id.clone()).or_default().push(l);
        }
        let mut rewards_by: HashMap<MatchId, Vec<RewardRow>> = HashMap::new();
        for r in rewards {
            rewards_by.entry(r.match_id.clone()).or_default().push(r);
        }
        let mut inputs = Vec::with_capacity(m.views.len());
        for (k, v) in m.views.iter().enumerate() {
            let index = position_index(v);
            let recs = rewards_by
                .remove(&v.match_id)
                .unwrap_or_default()
                .into_iter()
                .map(|r| {
                    let &i = index.get(&r.event_index).ok_or_else(|| run.fail(format!("reward for unknown event ({}, {})", r.match_id, r.event_index)))?;
                    Ok(reward_record(v, i, r))
                })
                .collect::<Result<Vec<_>, PipelineError>>()?;
            inputs.push((k, recs, collect_duels(v), lineups_by.remove(&v.match_id).unwrap_or_default()));
        }
        let lines = season_lines(inputs.iter().map(|(k, rewards, duels, lineups)| MatchInput {
            record: &m.records[*k],
            view: &m.views[*k],
            xg: &labels[*k].1,
            rewards,
            duels,
            lineups,
        }));
        run.write_csv("season_lines.csv", &lines)?;
        run.write_csv("pcr_rankings.csv", &season_rankings(&lines, self.config.ranking_min_minutes))?;
        run.finish()?;
        Ok(lines)
    }

    pub fn duel_report(&self) -> Result<Vec<crate::season::DuelReportRow>, PipelineError> {
        self.prepare()?;
        let mut run = Run::new(self, Stage::DuelReport);
        let m = run.matches()?;
        let (ctx, ratings) = run.ratings()?;
        let models = run.epv()?;
        let passer = match &self.config.report_player {
            Some(p) => PlayerId::from(p.as_str()),
            None => busiest_long_passer(&m.views, &self.config.long_pass).ok_or_else(|| run.fail("no long pass ends in a duel"))?,
        };
        let epv: Vec<_> = (0..m.views.len())
            .into_par_iter()
            .map(|k| predict_epv(&models, &m.views[k], &DuelSkill { context: &ctx, ratings: &ratings, period: m.period(k) }))
            .collect::<Result<_, _>>()
            .map_err(|e| run.fail(e))?;
        let report: Vec<ReportMatch> = (0..m.views.len())
            .map(|k| ReportMatch {
                view: &m.views[k],
                epv: &epv[k],
                skill: DuelSkill { context: &ctx, ratings: &ratings, period: m.period(k) },
            })
            .collect();
        let rows = long_pass_duel_report(&report, &passer, &self.config.long_pass).map_err(|e| run.fail(e))?;
        run.write_csv("duel_report.csv", &rows)?;
        run.finish()?;
        Ok(rows)
    }

    fn forecast_inputs(&self, run: &mut Run) -> Result<(Vec<SeasonLine>, Vec<PlayerRecord>, Vec<MatchRecord>), PipelineError> {
        let lines = run.read_csv::<SeasonLine>(Stage::Pcr, "season_lines.csv")?;
        let players = run.read_csv::<PlayerRecord>(Stage::Ingest, "players.csv")?;
        let fixtures = run.read_csv::<MatchRecord>(Stage::Ingest, "matches.csv")?;
        Ok((lines, players, fixtures))
    }

    pub fn forecast(&self) -> Result<Vec<crate::forecast::ShortlistRow>, PipelineError> {
        self.prepare()?;
        let mut run = Run::new(self, Stage::Forecast);
        let (lines, players, fixtures) = self.forecast_inputs(&mut run)?;
        let cfg = self.config.forecast_cfg();
        let clubs = rate_clubs(&fixtures, &self.config.club_glicko).map_err(|e| run.fail(e))?;
        let data = ForecastData::new(&lines, &players, &clubs, &cfg);
        let rows = build_training_rows(&data, &cfg).map_err(|e| run.fail(e))?;
        let models: ForecastModels = train_forecast(&rows, &cfg).map_err(|e| run.fail(e))?;
        let season = match &self.config.forecast_season {
            Some(s) => SeasonId::from(s.as_str()),
            None => lines.iter().map(|l| l.season_id.clone()).max().ok_or_else(|| run.fail("no season lines"))?,
        };
        let destination = self.config.destination.as_deref().map(TeamId::from);
        let table = shortlist(&data, &models, &season, destination.as_ref(), &cfg).map_err(|e| run.fail(e))?;
        let after = next_season(&season).map_err(|e| run.fail(e))?;
        let mut clubs_table = clubs.club_ratings(&after);
        clubs_table.sort_by(|a, b| b.rating.total_cmp(&a.rating).then(a.team_id.cmp(&b.team_id)));
        run.write_csv("club_ratings.csv", &clubs_table)?;
        run.write_json("forecast_model.json", &Stamped { config_hash: run.record.config_hash.clone(), body: &models })?;
        run.write_csv("shortlist.csv", &table)?;
        run.finish()?;
        Ok(table)
    }

    pub fn evaluate(&self) -> Result<EvalReport, PipelineError> {
        self.prepare()?;
        let mut run = Run::new(self, Stage::Evaluate);
        let (lines, players, fixtures) = self.forecast_inputs(&mut run)?;
        let cfg = self.config.forecast_cfg();
        let clubs = rate_clubs(&fixtures, &self.config.club_glicko).map_err(|e| run.fail(e))?;
        let data = ForecastData::new(&lines, &players, &clubs, &cfg);
        let report = evaluate_forecast(&data, &cfg).map_err(|e| run.fail(e))?;
        run.write_csv("evaluation.csv", &report.cells)?;
        run.finish()?;
        Ok(report)
    }

    /// Rankings of one season (or all) from the stored season lines.
    pub fn rankings(&self, season: Option<&str>) -> Result<Vec<crate::season::RankingRow>, PipelineError> {
        let body = self.artifact(Stage::Pcr, "season_lines.csv")?;
        let mut lines: Vec<SeasonLine> = read_table(body.as_slice()).map_err(|e| stage_err(Stage::Pcr)(&e))?;
        if let Some(s) = season {
            lines.retain(|l| l.season_id.as_str() == s);
        }
        Ok(season_rankings(&lines, self.config.ranking_min_minutes))
    }

    /// Writes `rows` to `path` as CSV under the hash line of `stage`.
    pub fn export<T: Serialize>(&self, stage: Stage, path: &Path, rows: &[T]) -> Result<(), PipelineError> {
        let mut bytes = format!("{HASH_PREFIX}{}\n", self.config.stage_hash(stage)).into_bytes();
        write_table(&mut bytes, rows).map_err(|e| stage_err(stage)(&e))?;
        write_bytes(path, &bytes)
    }

    /// Copies an artifact, hash line included, after checking it is current.
    pub fn copy_artifact(&self, stage: Stage, name: &str, to: &Path) -> Result<(), PipelineError> {
        self.artifact(stage, name)?;
        fs::copy(self.dir.join(name), to).map_err(io_err(to))?;
        Ok(())
    }

    /// Runs one stage. `source` is only read by `ingest`.
    pub fn run_stage(&self, stage: Stage, source: Option<&IngestSource>) -> Result<(), PipelineError> {
        match stage {
            Stage::Ingest => {
                let src = source.ok_or_else(|| PipelineError::Input("ingest needs an events file".into()))?;
                self.ingest(src)
            }
            Stage::TrainXg => self.train_xg().map(drop),
            Stage::Label => self.label().map(drop),
            Stage::RateDuels => self.rate_duels().map(drop),
            Stage::TrainEpv => self.train_epv().map(drop),
            Stage::Rewards => self.rewards().map(drop),
            Stage::Pcr => self.pcr().map(drop),
            Stage::DuelReport => self.duel_report().map(drop),
            Stage::Forecast => self.forecast().map(drop),
            Stage::Evaluate => self.evaluate().map(drop),
        }
    }

    /// Runs `stages` in dependency order.
    pub fn run_pipeline(&self, stages: &[Stage], source: Option<&IngestSource>) -> Result<(), PipelineError> {
        let mut todo = stages.to_vec();
        todo.sort();
        todo.dedup();
        for s in todo {
            self.run_stage(s, source)?;
        }
        Ok(())
    }
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| p.display().to_string())
}

fn reward_record(v: &PossessionView, i: usize, r: RewardRow) -> RewardRecord {
    let e: &Event = v.event(i);
    RewardRecord {
        match_id: r.match_id,
        event_index: r.event_index,
        position: i,
        player_id: r.player_id,
        team_id: e.team_id.clone(),
        action: e.action,
        is_set_piece: e.is_set_piece(),
        scenario: r.scenario,
        delta_epv: r.delta_epv,
        epv_self: f64::nan(),
        epv_next: f64::nan(),
        kickoff_missing: false,
        effective_minute: v.time(i) / 60.0,
    }
}

/// The player with the most long passes followed directly by a duel.
fn busiest_long_passer(views: &[PossessionView], rule: &LongPassRule) -> Option<PlayerId> {
    let mut counts: BTreeMap<&PlayerId, usize> = BTreeMap::new();
    for v in views {
        for i in 0..v.len() {
            let e = v.event(i);
            if e.control_kind() != Some(ControlKind::Pass) {
                continue;
            }
            let (ex, ey) = e.end_point();
            if rule.accepts(e.x, e.y, ex, ey) && v.next_in_half(i).is_some_and(|j| v.event(j).is_duel()) {
                *counts.entry(&e.player_id).or_default() += 1;
            }
        }
    }
    let best = counts.values().copied().max()?;
    counts.into_iter().find(|&(_, c)| c == best).map(|(p, _)| p.clone())
}

pub fn write_bytes(path: &Path, body: &[u8]) -> Result<(), PipelineError> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(body).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ancestors_close_over_deps() {
        assert_eq!(Stage::Ingest.ancestors(), vec![Stage::Ingest]);
        let a = Stage::Rewards.ancestors();
        for s in [Stage::Ingest, Stage::TrainXg, Stage::Label, Stage::RateDuels, Stage::TrainEpv, Stage::Rewards] {
            assert!(a.contains(&s), "{s}");
        }
        assert!(!a.contains(&Stage::Pcr));
        for s in Stage::ALL {
            assert!(s.deps().iter().all(|d| *d < s), "{s} depends on a later stage");
            assert_eq!(Stage::parse(s.name()), Some(s));
        }
    }

    #[test]
    fn stage_hash_only_sees_upstream_changes() {
        let a = PipelineConfig::default();
        let b = PipelineConfig { gamma: 0.9, ..a.clone() };
        assert_eq!(a.stage_hash(Stage::Ingest), b.stage_hash(Stage::Ingest));
        assert_eq!(a.stage_hash(Stage::RateDuels), b.stage_hash(Stage::RateDuels));
        assert_ne!(a.stage_hash(Stage::Label), b.stage_hash(Stage::Label));
        assert_ne!(a.stage_hash(Stage::Pcr), b.stage_hash(Stage::Pcr));
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let mut c = PipelineConfig { gamma: 0.9, report_player: Some("P1".into()), ..Default::default() };
        c.forecast.top_n_by_league.insert("L1".into(), 12);
        let back = PipelineConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(PipelineConfig::from_toml("").unwrap(), PipelineConfig::default());
        assert!(PipelineConfig::from_toml("gamma = 1.5").is_err());
        assert!(PipelineConfig::from_toml("gama = 0.9").is_err());
    }

    #[test]
    fn missing_upstream_names_the_stage() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::new(dir.path(), PipelineConfig::default());
        let err = ws.label().unwrap_err();
        assert!(matches!(err, PipelineError::Missing { stage: Stage::Ingest, .. }), "{err}");
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("run `ingest` first"));
    }
}
