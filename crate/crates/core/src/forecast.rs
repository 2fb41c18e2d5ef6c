//! Next-season PCR forecasts: club and league ratings, the feature registry,
//! stay and PCR models, transfer scenarios and the evaluation grid.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::{CompetitionId, PlayerId, PositionGroup, SeasonId, TeamId};
use crate::glicko::{glicko_update, GlickoError, GlickoParams, GlickoState, Matchup, DISPLAY_CENTER};
use crate::learn::{train_gbt, GbtConfig, LearnError, Model, Objective, TrainingRow};
use crate::roster::{MatchRecord, PlayerRecord};
use crate::season::SeasonLine;

pub type Glicko = GlickoState<f64>;

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error("match {match_id} on {date} is earlier than a previous result")]
    OutOfOrder { match_id: String, date: String },
    #[error("league {league} has {have} clubs, top-{need} requested")]
    TooFewClubs { league: String, have: usize, need: usize },
    #[error("no rating for {0}")]
    MissingRating(String),
    #[error("player {player} season {season}: missing {fields:?}")]
    MissingFields { player: String, season: String, fields: Vec<&'static str> },
    #[error("unknown team {0}")]
    UnknownTeam(String),
    #[error("unknown player {0}")]
    UnknownPlayer(String),
    #[error("cannot order season id `{0}`")]
    SeasonId(String),
    #[error("stay labels are all {0}")]
    SingleClass(bool),
    #[error("no rows for the {0} model")]
    Empty(&'static str),
    #[error("feature `{name}` is dated {as_of:?}, after the season-start snapshot")]
    Leak { name: &'static str, as_of: AsOf },
    #[error("{model} model: {source}")]
    Training {
        model: &'static str,
        #[source]
        source: LearnError,
    },
    #[error(transparent)]
    Glicko(#[from] GlickoError),
}

/// Season that follows `s`: `2023` → `2024`, `2023-24` → `2024-25`.
pub fn next_season(s: &SeasonId) -> Result<SeasonId, ForecastError> {
    let t = s.as_str();
    if let Ok(y) = t.parse::<i32>() {
        return Ok(SeasonId::new((y + 1).to_string()));
    }
    if let Some((a, b)) = t.split_once('-') {
        if let (Ok(y), Ok(z)) = (a.parse::<i32>(), b.parse::<i32>()) {
            return Ok(SeasonId::new(match b.len() {
                2 => format!("{}-{:02}", y + 1, (z + 1) % 100),
                _ => format!("{}-{}", y + 1, z + 1),
            }));
        }
    }
    Err(ForecastError::SeasonId(t.to_string()))
}

/// Club ratings replayed over match results, with per-season snapshots taken
/// before each season's first match day.
#[derive(Clone, Debug, Default)]
pub struct ClubHistory {
    pub params: GlickoParams<f64>,
    snapshots: BTreeMap<SeasonId, BTreeMap<TeamId, Glicko>>,
    season_start: BTreeMap<SeasonId, String>,
    final_state: BTreeMap<TeamId, Glicko>,
    membership: BTreeMap<TeamId, BTreeMap<SeasonId, CompetitionId>>,
    opponents: BTreeMap<(SeasonId, TeamId), Vec<TeamId>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClubRating {
    pub team_id: TeamId,
    #[serde(serialize_with = "crate::roster::whole")]
    pub rating: f64,
    #[serde(serialize_with = "crate::roster::fixed4")]
    pub rd: f64,
    pub as_of: String,
}

fn score(home: u32, away: u32) -> f64 {
    match home.cmp(&away) {
        std::cmp::Ordering::Greater => 1.0,
        std::cmp::Ordering::Equal => 0.5,
        std::cmp::Ordering::Less => 0.0,
    }
}

/// Standard Glicko-2 over results, one rating period per match day. Input
/// must be in date order; fixtures without a score are ignored.
pub fn rate_clubs(matches: &[MatchRecord], params: &GlickoParams<f64>) -> Result<ClubHistory, ForecastError> {
    let mut h = ClubHistory { params: *params, ..Default::default() };
    let mut counts: BTreeMap<(SeasonId, TeamId), BTreeMap<CompetitionId, usize>> = BTreeMap::new();
    let mut last = "";
    for m in matches {
        if m.date.as_str() < last {
            return Err(ForecastError::OutOfOrder { match_id: m.match_id.to_string(), date: m.date.clone() });
        }
        last = &m.date;
        h.season_start.entry(m.season_id.clone()).or_insert_with(|| m.date.clone());
        for (t, o) in [(&m.home_team, &m.away_team), (&m.away_team, &m.home_team)] {
            *counts.entry((m.season_id.clone(), t.clone())).or_default().entry(m.competition_id.clone()).or_default() += 1;
            h.opponents.entry((m.season_id.clone(), t.clone())).or_default().push(o.clone());
        }
    }
    for ((season, team), c) in counts {
        let best = c.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(k, _)| k.clone());
        h.membership.entry(team).or_default().insert(season, best.expect("non-empty count map"));
    }
    let init = GlickoState::initial(params);
    let mut state: BTreeMap<TeamId, Glicko> = BTreeMap::new();
    let mut i = 0;
    while i < matches.len() {
        let date = &matches[i].date;
        let mut j = i;
        while j < matches.len() && matches[j].date == *date {
            j += 1;
        }
        for (s, start) in &h.season_start {
            if start == date && !h.snapshots.contains_key(s) {
                h.snapshots.insert(s.clone(), state.clone());
            }
        }
        let mut games: BTreeMap<TeamId, Vec<Matchup<f64>>> = BTreeMap::new();
        for m in &matches[i..j] {
            state.entry(m.home_team.clone()).or_insert(init);
            state.entry(m.away_team.clone()).or_insert(init);
            let (Some(hg), Some(ag)) = (m.home_goals, m.away_goals) else { continue };
            let s = score(hg, ag);
            let (ht, at) = (state[&m.home_team], state[&m.away_team]);
            games.entry(m.home_team.clone()).or_default().push(Matchup { mu: at.mu, phi: at.phi, score: s, advantage: 0.0 });
            games.entry(m.away_team.clone()).or_default().push(Matchup { mu: ht.mu, phi: ht.phi, score: 1.0 - s, advantage: 0.0 });
        }
        let mut next = state.clone();
        for (t, st) in next.iter_mut() {
            *st = match games.get(t) {
                Some(g) => glicko_update(&state[t], g, params)?,
                None => st.idle(),
            };
        }
        state = next;
        i = j;
    }
    h.final_state = state;
    Ok(h)
}

impl ClubHistory {
    pub fn seasons(&self) -> impl Iterator<Item = &SeasonId> {
        self.season_start.keys()
    }

    /// Ratings entering `season`: the snapshot of the first season at or
    /// after it, or the final state past the data.
    pub fn snapshot(&self, season: &SeasonId) -> &BTreeMap<TeamId, Glicko> {
        self.snapshots.range(season.clone()..).next().map_or(&self.final_state, |(_, s)| s)
    }

    pub fn snapshot_date(&self, season: &SeasonId) -> Option<&str> {
        self.season_start.get(season).map(String::as_str)
    }

    pub fn knows(&self, team: &TeamId) -> bool {
        self.final_state.contains_key(team)
    }

    /// Display rating of `team` entering `season`. Clubs first seen later
    /// stand at the initial rating.
    pub fn rating(&self, season: &SeasonId, team: &TeamId) -> Result<f64, ForecastError> {
        if !self.knows(team) {
            return Err(ForecastError::UnknownTeam(team.to_string()));
        }
        Ok(self.snapshot(season).get(team).map_or(DISPLAY_CENTER, |s| s.display_rating()))
    }

    pub fn club_ratings(&self, season: &SeasonId) -> Vec<ClubRating> {
        let as_of = self.snapshot_date(season).unwrap_or("end").to_string();
        self.final_state
            .keys()
            .map(|t| {
                let s = self.snapshot(season).get(t).copied().unwrap_or_else(|| GlickoState::initial(&self.params));
                ClubRating { team_id: t.clone(), rating: s.display_rating(), rd: s.display_rd(), as_of: as_of.clone() }
            })
            .collect()
    }

    /// League a club played in, falling back to its latest earlier season.
    pub fn league_of(&self, season: &SeasonId, team: &TeamId) -> Option<&CompetitionId> {
        self.membership.get(team)?.range(..=season.clone()).next_back().map(|(_, l)| l)
    }

    pub fn league_clubs(&self, season: &SeasonId, league: &CompetitionId) -> Vec<&TeamId> {
        self.final_state.keys().filter(|t| self.league_of(season, t) == Some(league)).collect()
    }

    /// Strength of `league` entering `season`, over the membership of
    /// `members_season`.
    pub fn league_rating(&self, season: &SeasonId, members_season: &SeasonId, league: &CompetitionId, n: usize) -> Result<f64, ForecastError> {
        let ratings: Vec<f64> = self
            .league_clubs(members_season, league)
            .into_iter()
            .map(|t| self.rating(season, t))
            .collect::<Result<_, _>>()?;
        league_strength(&ratings, n).map_err(|e| match e {
            ForecastError::TooFewClubs { have, need, .. } => ForecastError::TooFewClubs { league: league.to_string(), have, need },
            e => e,
        })
    }

    pub fn opponents(&self, season: &SeasonId, team: &TeamId) -> &[TeamId] {
        self.opponents.get(&(season.clone(), team.clone())).map_or(&[], Vec::as_slice)
    }
}

/// Mean of the `n` highest ratings.
pub fn league_strength(ratings: &[f64], n: usize) -> Result<f64, ForecastError> {
    if n == 0 || ratings.len() < n {
        return Err(ForecastError::TooFewClubs { league: String::new(), have: ratings.len(), need: n });
    }
    let mut r = ratings.to_vec();
    r.sort_by(|a, b| b.total_cmp(a));
    Ok(r[..n].iter().sum::<f64>() / n as f64)
}

pub fn delta_ratings(new_league: Option<f64>, old_league: Option<f64>) -> Result<f64, ForecastError> {
    match (new_league, old_league) {
        (Some(n), Some(o)) => Ok((n - o) / DISPLAY_CENTER),
        (None, _) => Err(ForecastError::MissingRating("new league".into())),
        (_, None) => Err(ForecastError::MissingRating("old league".into())),
    }
}

/// Presence-only discount of a PCR forecast; `pl` is the probability of
/// leaving the data.
pub fn adjust_pcr(pcr_pred: f64, delta_ratings: f64, pl: f64) -> f64 {
    pcr_pred * 0.8_f64.powf(delta_ratings + pl)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureGroup {
    Player,
    Performance,
    TeamContribution,
    LeagueStyle,
    Strength,
}

/// Latest information a feature may read, relative to a forecast made for
/// the season after the base season.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AsOf {
    BaseSeasonEnd,
    TargetSeasonStart,
    TargetSeasonEnd,
}

/// Strength context of a forecast, all read from the target-season snapshot.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StrengthInputs {
    pub old_team: f64,
    pub new_team: f64,
    pub old_league: f64,
    pub new_league: f64,
    pub mean_opponent: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LeagueStyle {
    pub mean_pcr: f64,
    pub mean_xg90: f64,
}

pub struct FeatureInput<'a> {
    /// Player's seasons up to the base season, oldest first.
    pub history: &'a [&'a SeasonLine],
    pub record: &'a PlayerRecord,
    pub strength: StrengthInputs,
    pub league: LeagueStyle,
}

impl FeatureInput<'_> {
    fn last(&self, k: usize) -> &[&SeasonLine] {
        &self.history[self.history.len().saturating_sub(k)..]
    }

    fn pcr_over(&self, k: usize) -> f64 {
        let s = self.last(k);
        let m: f64 = s.iter().map(|l| l.effective_minutes).sum();
        if m > 0.0 {
            s.iter().map(|l| l.pcr * l.effective_minutes).sum::<f64>() / m
        } else {
            0.0
        }
    }

    fn per90(&self, k: usize, f: fn(&SeasonLine) -> f64) -> f64 {
        let s = self.last(k);
        let m: f64 = s.iter().map(|l| l.effective_minutes).sum();
        if m > 0.0 {
            90.0 * s.iter().map(|l| f(l)).sum::<f64>() / m
        } else {
            0.0
        }
    }

    fn mean_minutes(&self, k: usize) -> f64 {
        let s = self.last(k);
        s.iter().map(|l| l.effective_minutes).sum::<f64>() / s.len() as f64
    }

    fn ratio(&self, k: usize, num: fn(&SeasonLine) -> f64, den: fn(&SeasonLine) -> f64) -> f64 {
        let s = self.last(k);
        let d: f64 = s.iter().map(|l| den(l)).sum();
        if d > 0.0 {
            s.iter().map(|l| num(l)).sum::<f64>() / d
        } else {
            0.0
        }
    }

    fn base(&self) -> &SeasonLine {
        self.history.last().expect("history ends with the base season")
    }
}

pub struct FeatureDef {
    pub name: &'static str,
    pub group: FeatureGroup,
    pub as_of: AsOf,
    /// Used by the stay model.
    pub stay: bool,
    pub compute: fn(&FeatureInput) -> f64,
}

fn pos(x: &FeatureInput, g: PositionGroup) -> f64 {
    f64::from(u8::from(x.record.position == g))
}

macro_rules! feat {
    ($name:literal, $group:ident, $as_of:ident, $stay:literal, $f:expr) => {
        FeatureDef { name: $name, group: FeatureGroup::$group, as_of: AsOf::$as_of, stay: $stay, compute: $f }
    };
}

pub static REGISTRY: &[FeatureDef] = &[
    feat!("age", Player, BaseSeasonEnd, true, |x| f64::from(x.record.age)),
    feat!("height_cm", Player, BaseSeasonEnd, true, |x| x.record.height_cm),
    feat!("pos_central_def", Player, BaseSeasonEnd, true, |x| pos(x, PositionGroup::CentralDef)),
    feat!("pos_lateral", Player, BaseSeasonEnd, true, |x| pos(x, PositionGroup::FullBack)),
    feat!("pos_midfielder", Player, BaseSeasonEnd, true, |x| pos(x, PositionGroup::Midfielder)),
    feat!("pos_central_forward", Player, BaseSeasonEnd, true, |x| pos(x, PositionGroup::CentralForward)),
    feat!("pos_wing", Player, BaseSeasonEnd, true, |x| pos(x, PositionGroup::Wing)),
    feat!("pos_goalkeeper", Player, BaseSeasonEnd, true, |x| pos(x, PositionGroup::Goalkeeper)),
    feat!("contract_months", Player, BaseSeasonEnd, true, |x| x.record.contract_months.unwrap_or(-1.0)),
    feat!("contract_missing", Player, BaseSeasonEnd, true, |x| f64::from(u8::from(x.record.contract_months.is_none()))),
    feat!("pcr_1", Performance, BaseSeasonEnd, true, |x| x.pcr_over(1)),
    feat!("pcr_2", Performance, BaseSeasonEnd, true, |x| x.pcr_over(2)),
    feat!("pcr_3", Performance, BaseSeasonEnd, true, |x| x.pcr_over(3)),
    feat!("pcr_5", Performance, BaseSeasonEnd, true, |x| x.pcr_over(5)),
    feat!("pcr_trend", Performance, BaseSeasonEnd, true, |x| x.pcr_over(1) - x.pcr_over(3)),
    feat!("minutes_1", Performance, BaseSeasonEnd, true, |x| x.mean_minutes(1)),
    feat!("minutes_3", Performance, BaseSeasonEnd, true, |x| x.mean_minutes(3)),
    feat!("minutes_5", Performance, BaseSeasonEnd, true, |x| x.mean_minutes(5)),
    feat!("matches_1", Performance, BaseSeasonEnd, true, |x| f64::from(x.base().matches)),
    feat!("xg90_1", Performance, BaseSeasonEnd, true, |x| x.per90(1, |l| l.xg)),
    feat!("xg90_3", Performance, BaseSeasonEnd, true, |x| x.per90(3, |l| l.xg)),
    feat!("xg90_5", Performance, BaseSeasonEnd, true, |x| x.per90(5, |l| l.xg)),
    feat!("goals90_1", Performance, BaseSeasonEnd, true, |x| x.per90(1, |l| f64::from(l.goals))),
    feat!("goals90_3", Performance, BaseSeasonEnd, true, |x| x.per90(3, |l| f64::from(l.goals))),
    feat!("goals90_5", Performance, BaseSeasonEnd, true, |x| x.per90(5, |l| f64::from(l.goals))),
    feat!("shots90_1", Performance, BaseSeasonEnd, true, |x| x.per90(1, |l| f64::from(l.shots))),
    feat!("shots90_3", Performance, BaseSeasonEnd, true, |x| x.per90(3, |l| f64::from(l.shots))),
    feat!("aerial_duels90_1", Performance, BaseSeasonEnd, true, |x| x.per90(1, |l| f64::from(l.aerial_duels))),
    feat!("ground_duels90_1", Performance, BaseSeasonEnd, true, |x| x.per90(1, |l| f64::from(l.ground_duels))),
    feat!("aerial_win_1", Performance, BaseSeasonEnd, true, |x| x.ratio(1, |l| f64::from(l.aerial_wins), |l| f64::from(l.aerial_duels))),
    feat!("aerial_win_3", Performance, BaseSeasonEnd, true, |x| x.ratio(3, |l| f64::from(l.aerial_wins), |l| f64::from(l.aerial_duels))),
    feat!("ground_win_1", Performance, BaseSeasonEnd, true, |x| x.ratio(1, |l| f64::from(l.ground_wins), |l| f64::from(l.ground_duels))),
    feat!("ground_win_3", Performance, BaseSeasonEnd, true, |x| x.ratio(3, |l| f64::from(l.ground_wins), |l| f64::from(l.ground_duels))),
    feat!("seasons_available", Performance, BaseSeasonEnd, true, |x| x.history.len() as f64),
    feat!("history_short_3", Performance, BaseSeasonEnd, true, |x| f64::from(u8::from(x.history.len() < 3))),
    feat!("history_short_5", Performance, BaseSeasonEnd, true, |x| f64::from(u8::from(x.history.len() < 5))),
    feat!("xg_share_1", TeamContribution, BaseSeasonEnd, true, |x| x.ratio(1, |l| l.xg, |l| l.team_xg_on_pitch)),
    feat!("xg_share_3", TeamContribution, BaseSeasonEnd, true, |x| x.ratio(3, |l| l.xg, |l| l.team_xg_on_pitch)),
    feat!("team_xg90_on_pitch_1", TeamContribution, BaseSeasonEnd, true, |x| x.per90(1, |l| l.team_xg_on_pitch)),
    feat!("league_mean_pcr", LeagueStyle, BaseSeasonEnd, true, |x| x.league.mean_pcr),
    feat!("league_mean_xg90", LeagueStyle, BaseSeasonEnd, true, |x| x.league.mean_xg90),
    feat!("pcr_vs_league", LeagueStyle, BaseSeasonEnd, true, |x| x.pcr_over(1) - x.league.mean_pcr),
    feat!("old_team_rating", Strength, TargetSeasonStart, true, |x| x.strength.old_team),
    feat!("old_league_rating", Strength, TargetSeasonStart, true, |x| x.strength.old_league),
    feat!("mean_opponent_rating", Strength, TargetSeasonStart, true, |x| x.strength.mean_opponent),
    feat!("old_team_vs_league", Strength, TargetSeasonStart, true, |x| x.strength.old_team - x.strength.old_league),
    feat!("new_team_rating", Strength, TargetSeasonStart, false, |x| x.strength.new_team),
    feat!("new_league_rating", Strength, TargetSeasonStart, false, |x| x.strength.new_league),
    feat!("delta_ratings", Strength, TargetSeasonStart, false, |x| (x.strength.new_league - x.strength.old_league) / DISPLAY_CENTER),
    feat!("delta_team_rating", Strength, TargetSeasonStart, false, |x| (x.strength.new_team - x.strength.old_team) / DISPLAY_CENTER),
    feat!("new_team_vs_league", Strength, TargetSeasonStart, false, |x| x.strength.new_team - x.strength.new_league),
    feat!("pcr_1_shifted", Strength, TargetSeasonStart, false, |x| {
        x.pcr_over(1) * 0.8_f64.powf((x.strength.new_league - x.strength.old_league) / DISPLAY_CENTER)
    }),
    feat!("pcr_3_shifted", Strength, TargetSeasonStart, false, |x| {
        x.pcr_over(3) * 0.8_f64.powf((x.strength.new_league - x.strength.old_league) / DISPLAY_CENTER)
    }),
];

/// Rejects any feature dated after the target-season snapshot.
pub fn audit_registry(defs: &[FeatureDef]) -> Result<(), ForecastError> {
    for d in defs {
        if d.as_of > AsOf::TargetSeasonStart {
            return Err(ForecastError::Leak { name: d.name, as_of: d.as_of });
        }
    }
    Ok(())
}

pub fn feature_names() -> Vec<String> {
    REGISTRY.iter().map(|d| d.name.to_string()).collect()
}

pub fn stay_feature_names() -> Vec<String> {
    REGISTRY.iter().filter(|d| d.stay).map(|d| d.name.to_string()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForecastConfig {
    /// Minimum minutes in both seasons for a PCR training row.
    pub min_minutes: f64,
    /// Second evaluation threshold.
    pub strong_minutes: f64,
    pub top_n: usize,
    #[serde(default)]
    pub top_n_by_league: BTreeMap<String, usize>,
    pub pcr_model: GbtConfig<f64>,
    pub stay_model: GbtConfig<f64>,
    /// Target seasons held out by the evaluation.
    pub holdout_seasons: usize,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        ForecastConfig {
            min_minutes: 100.0,
            strong_minutes: 1000.0,
            top_n: 10,
            top_n_by_league: BTreeMap::new(),
            pcr_model: GbtConfig { trees: 200, depth: 3, lr: 0.05, lambda: 5.0, ..GbtConfig::default() },
            stay_model: GbtConfig { trees: 100, depth: 3, lr: 0.1, ..GbtConfig::default() },
            holdout_seasons: 1,
        }
    }
}

impl ForecastConfig {
    pub fn top_n_for(&self, league: &CompetitionId) -> usize {
        self.top_n_by_league.get(league.as_str()).copied().unwrap_or(self.top_n)
    }
}

/// Season lines, squads and club ratings, indexed for feature building.
pub struct ForecastData<'a> {
    pub clubs: &'a ClubHistory,
    lines: BTreeMap<PlayerId, Vec<&'a SeasonLine>>,
    records: HashMap<(SeasonId, PlayerId), &'a PlayerRecord>,
    league_style: HashMap<(SeasonId, CompetitionId), LeagueStyle>,
    pub seasons: Vec<SeasonId>,
}

impl<'a> ForecastData<'a> {
    pub fn new(lines: &'a [SeasonLine], players: &'a [PlayerRecord], clubs: &'a ClubHistory, cfg: &ForecastConfig) -> Self {
        let mut by_player: BTreeMap<PlayerId, Vec<&SeasonLine>> = BTreeMap::new();
        for l in lines {
            by_player.entry(l.player_id.clone()).or_default().push(l);
        }
        for v in by_player.values_mut() {
            v.sort_by(|a, b| a.season_id.cmp(&b.season_id));
        }
        let mut sums: HashMap<(SeasonId, CompetitionId), (f64, f64, f64, usize)> = HashMap::new();
        for l in lines.iter().filter(|l| l.effective_minutes >= cfg.min_minutes) {
            let s = sums.entry((l.season_id.clone(), l.competition_id.clone())).or_default();
            s.0 += l.pcr;
            s.1 += l.xg;
            s.2 += l.effective_minutes;
            s.3 += 1;
        }
        let league_style = sums
            .into_iter()
            .map(|(k, (p, x, m, n))| (k, LeagueStyle { mean_pcr: p / n as f64, mean_xg90: 90.0 * x / m }))
            .collect();
        let seasons: BTreeSet<SeasonId> = lines.iter().map(|l| l.season_id.clone()).collect();
        ForecastData {
            clubs,
            lines: by_player,
            records: players.iter().map(|p| ((p.season_id.clone(), p.player_id.clone()), p)).collect(),
            league_style,
            seasons: seasons.into_iter().collect(),
        }
    }

    pub fn line(&self, player: &PlayerId, season: &SeasonId) -> Option<&'a SeasonLine> {
        self.lines.get(player)?.iter().find(|l| l.season_id == *season).copied()
    }

    pub fn players(&self) -> impl Iterator<Item = &PlayerId> {
        self.lines.keys()
    }
}

/// One player-season projected onto the next season.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ForecastRow {
    pub player_id: PlayerId,
    pub base_season: SeasonId,
    pub target_season: SeasonId,
    pub old_team: TeamId,
    pub new_team: TeamId,
    pub old_league: CompetitionId,
    pub new_league: CompetitionId,
    pub age: u32,
    pub pcr_base: f64,
    pub minutes_base: f64,
    pub delta_ratings: f64,
    pub features: Vec<f64>,
    /// Next-season outcome when the data has it.
    pub target_pcr: Option<f64>,
    pub target_minutes: Option<f64>,
}

impl ForecastRow {
    pub fn stays(&self, cfg: &ForecastConfig) -> bool {
        self.target_minutes.is_some_and(|m| m >= cfg.min_minutes)
    }

    pub fn stay_features(&self) -> Vec<f64> {
        REGISTRY.iter().zip(&self.features).filter(|(d, _)| d.stay).map(|(_, v)| *v).collect()
    }
}

/// Builds the feature row for `player` after `base`, assuming they play for
/// `new_team` (their next-season club when the data has one, else the
/// current club).
pub fn build_features(
    data: &ForecastData,
    player: &PlayerId,
    base: &SeasonId,
    new_team: Option<&TeamId>,
    cfg: &ForecastConfig,
) -> Result<ForecastRow, ForecastError> {
    let all = data.lines.get(player).ok_or_else(|| ForecastError::UnknownPlayer(player.to_string()))?;
    let upto = all.partition_point(|l| l.season_id <= *base);
    let history = &all[..upto];
    let Some(line) = history.last().filter(|l| l.season_id == *base) else {
        return Err(ForecastError::MissingFields { player: player.to_string(), season: base.to_string(), fields: vec!["season_line"] });
    };
    let record = data
        .records
        .get(&(base.clone(), player.clone()))
        .ok_or_else(|| ForecastError::MissingFields { player: player.to_string(), season: base.to_string(), fields: vec!["age", "height_cm", "position"] })?;
    let target = next_season(base)?;
    let next_line = data.line(player, &target);
    let new_team = new_team.cloned().or_else(|| next_line.map(|l| l.team_id.clone())).unwrap_or_else(|| line.team_id.clone());
    let clubs = data.clubs;
    let old_league = clubs.league_of(base, &line.team_id).cloned().unwrap_or_else(|| line.competition_id.clone());
    let new_league = clubs
        .league_of(&target, &new_team)
        .cloned()
        .ok_or_else(|| ForecastError::UnknownTeam(new_team.to_string()))?;
    let opp = clubs.opponents(base, &line.team_id);
    let mean_opponent = if opp.is_empty() {
        DISPLAY_CENTER
    } else {
        opp.iter().map(|t| clubs.rating(&target, t)).sum::<Result<f64, _>>()? / opp.len() as f64
    };
    let strength = StrengthInputs {
        old_team: clubs.rating(&target, &line.team_id)?,
        new_team: clubs.rating(&target, &new_team)?,
        old_league: clubs.league_rating(&target, base, &old_league, cfg.top_n_for(&old_league))?,
        new_league: clubs.league_rating(&target, &target_members(clubs, &target), &new_league, cfg.top_n_for(&new_league))?,
        mean_opponent,
    };
    let league = data.league_style.get(&(base.clone(), line.competition_id.clone())).copied().unwrap_or_default();
    let input = FeatureInput { history, record, strength, league };
    let features = REGISTRY.iter().map(|d| (d.compute)(&input)).collect();
    Ok(ForecastRow {
        player_id: player.clone(),
        base_season: base.clone(),
        target_season: target.clone(),
        old_team: line.team_id.clone(),
        new_team,
        old_league,
        new_league,
        age: record.age,
        pcr_base: line.pcr,
        minutes_base: line.effective_minutes,
        delta_ratings: delta_ratings(Some(strength.new_league), Some(strength.old_league))?,
        features,
        target_pcr: next_line.map(|l| l.pcr),
        target_minutes: data.seasons.contains(&target).then(|| next_line.map_or(0.0, |l| l.effective_minutes)),
    })
}

/// Membership season for the target: the target itself when it has fixtures,
/// else the latest season with any.
fn target_members(clubs: &ClubHistory, target: &SeasonId) -> SeasonId {
    if clubs.snapshot_date(target).is_some() {
        target.clone()
    } else {
        clubs.seasons().last().cloned().unwrap_or_else(|| target.clone())
    }
}

/// Rows for every base season that has a following season in the data.
pub fn build_training_rows(data: &ForecastData, cfg: &ForecastConfig) -> Result<Vec<ForecastRow>, ForecastError> {
    audit_registry(REGISTRY)?;
    let mut rows = Vec::new();
    let last = data.seasons.last();
    for (p, lines) in &data.lines {
        for l in lines {
            if Some(&l.season_id) == last || l.effective_minutes < cfg.min_minutes {
                continue;
            }
            let r = build_features(data, p, &l.season_id, None, cfg)?;
            if r.target_minutes.is_some() {
                rows.push(r);
            }
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastModels {
    pub pcr: Model<f64>,
    pub stay: Model<f64>,
}

pub fn train_stay_model(rows: &[ForecastRow], cfg: &ForecastConfig) -> Result<Model<f64>, ForecastError> {
    let data: Vec<TrainingRow<f64>> = rows
        .iter()
        .map(|r| TrainingRow::new(r.stay_features(), f64::from(u8::from(r.stays(cfg))), r.player_id.clone()))
        .collect();
    if data.is_empty() {
        return Err(ForecastError::Empty("stay"));
    }
    let first = data[0].target;
    if data.iter().all(|r| r.target == first) {
        return Err(ForecastError::SingleClass(first == 1.0));
    }
    Ok(train_gbt(&data, Objective::WeightedLogloss, &cfg.stay_model)
        .map_err(|source| ForecastError::Training { model: "stay", source })?
        .with_feature_names(stay_feature_names()))
}

/// PCR regressor on rows with enough minutes in both seasons.
pub fn train_pcr_model(rows: &[ForecastRow], cfg: &ForecastConfig) -> Result<Model<f64>, ForecastError> {
    let data: Vec<TrainingRow<f64>> = rows
        .iter()
        .filter(|r| r.minutes_base >= cfg.min_minutes && r.target_minutes.is_some_and(|m| m >= cfg.min_minutes))
        .filter_map(|r| Some(TrainingRow::new(r.features.clone(), r.target_pcr?, r.player_id.clone())))
        .collect();
    if data.is_empty() {
        return Err(ForecastError::Empty("pcr"));
    }
    Ok(train_gbt(&data, Objective::WeightedMse, &cfg.pcr_model)
        .map_err(|source| ForecastError::Training { model: "pcr", source })?
        .with_feature_names(feature_names()))
}

pub fn train_forecast(rows: &[ForecastRow], cfg: &ForecastConfig) -> Result<ForecastModels, ForecastError> {
    Ok(ForecastModels { pcr: train_pcr_model(rows, cfg)?, stay: train_stay_model(rows, cfg)? })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub pcr_pred: f64,
    pub stay_proba: f64,
    pub pcr_adj: f64,
}

pub fn predict(models: &ForecastModels, row: &ForecastRow) -> Prediction {
    let pcr_pred = models.pcr.predict(&row.features).expect("registry dimension");
    let stay_proba = models.stay.predict(&row.stay_features()).expect("registry dimension");
    Prediction { pcr_pred, stay_proba, pcr_adj: adjust_pcr(pcr_pred, row.delta_ratings, 1.0 - stay_proba) }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ShortlistRow {
    pub rank: usize,
    pub player: PlayerId,
    pub team: TeamId,
    pub age: u32,
    #[serde(rename = "PCR")]
    #[serde(serialize_with = "crate::roster::fixed4")]
    pub pcr: f64,
    #[serde(rename = "PCR_pred")]
    #[serde(serialize_with = "crate::roster::fixed4")]
    pub pcr_pred: f64,
    #[serde(rename = "PCR_adj")]
    #[serde(serialize_with = "crate::roster::fixed4")]
    pub pcr_adj: f64,
    #[serde(serialize_with = "crate::roster::fixed4")]
    pub stay_proba: f64,
}

pub const SHORTLIST_COLUMNS: &[&str] = &["rank", "player", "team", "age", "PCR", "PCR_pred", "PCR_adj", "stay_proba"];

/// Forecast for `player` after their latest season, moved to `destination`.
pub fn what_if_transfer(
    data: &ForecastData,
    models: &ForecastModels,
    player: &PlayerId,
    destination: &TeamId,
    cfg: &ForecastConfig,
) -> Result<(ForecastRow, Prediction), ForecastError> {
    if !data.clubs.knows(destination) {
        return Err(ForecastError::UnknownTeam(destination.to_string()));
    }
    let base = data
        .lines
        .get(player)
        .and_then(|l| l.last())
        .map(|l| l.season_id.clone())
        .ok_or_else(|| ForecastError::UnknownPlayer(player.to_string()))?;
    let row = build_features(data, player, &base, Some(destination), cfg)?;
    let p = predict(models, &row);
    Ok((row, p))
}

/// Players of `season` with enough minutes, ranked by adjusted forecast at
/// `destination` (or their own club).
pub fn shortlist(
    data: &ForecastData,
    models: &ForecastModels,
    season: &SeasonId,
    destination: Option<&TeamId>,
    cfg: &ForecastConfig,
) -> Result<Vec<ShortlistRow>, ForecastError> {
    if let Some(d) = destination {
        if !data.clubs.knows(d) {
            return Err(ForecastError::UnknownTeam(d.to_string()));
        }
    }
    let mut out = Vec::new();
    for p in data.players() {
        let Some(line) = data.line(p, season) else { continue };
        if line.effective_minutes < cfg.min_minutes {
            continue;
        }
        let new_team = destination.unwrap_or(&line.team_id);
        let row = build_features(data, p, season, Some(new_team), cfg)?;
        let pr = predict(models, &row);
        out.push(ShortlistRow {
            rank: 0,
            player: p.clone(),
            team: line.team_id.clone(),
            age: row.age,
            pcr: line.pcr,
            pcr_pred: pr.pcr_pred,
            pcr_adj: pr.pcr_adj,
            stay_proba: pr.stay_proba,
        });
    }
    out.sort_by(|a, b| b.pcr_adj.total_cmp(&a.pcr_adj).then(a.player.cmp(&b.player)));
    for (i, r) in out.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    Ok(out)
}

pub fn rmse(actual: &[f64], pred: &[f64]) -> f64 {
    (actual.iter().zip(pred).map(|(a, p)| (a - p).powi(2)).sum::<f64>() / actual.len() as f64).sqrt()
}

pub fn mae(actual: &[f64], pred: &[f64]) -> f64 {
    actual.iter().zip(pred).map(|(a, p)| (a - p).abs()).sum::<f64>() / actual.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferGroup {
    All,
    SameTeamSameLeague,
    SameTeamNewLeague,
    NewTeamSameLeague,
    NewTeamNewLeague,
}

impl TransferGroup {
    pub const GRID: [TransferGroup; 5] = [
        TransferGroup::All,
        TransferGroup::SameTeamSameLeague,
        TransferGroup::SameTeamNewLeague,
        TransferGroup::NewTeamSameLeague,
        TransferGroup::NewTeamNewLeague,
    ];

    pub fn of(same_team: bool, same_league: bool) -> Self {
        match (same_team, same_league) {
            (true, true) => TransferGroup::SameTeamSameLeague,
            (true, false) => TransferGroup::SameTeamNewLeague,
            (false, true) => TransferGroup::NewTeamSameLeague,
            (false, false) => TransferGroup::NewTeamNewLeague,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TransferGroup::All => "all",
            TransferGroup::SameTeamSameLeague => "same_team_same_league",
            TransferGroup::SameTeamNewLeague => "same_team_new_league",
            TransferGroup::NewTeamSameLeague => "new_team_same_league",
            TransferGroup::NewTeamNewLeague => "new_team_new_league",
        }
    }
}

/// One aligned player-season pair.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalPoint {
    pub actual: f64,
    pub model: f64,
    pub baseline: f64,
    pub group: TransferGroup,
    /// Minutes in the weaker of the two seasons.
    pub min_minutes: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalCell {
    pub group: TransferGroup,
    #[serde(serialize_with = "crate::roster::fixed4")]
    pub min_minutes: f64,
    pub rows: usize,
    #[serde(serialize_with = "crate::roster::fixed4")]
    pub model_rmse: f64,
    #[serde(serialize_with = "crate::roster::fixed4")]
    pub model_mae: f64,
    #[serde(serialize_with = "crate::roster::fixed4")]
    pub baseline_rmse: f64,
    #[serde(serialize_with = "crate::roster::fixed4")]
    pub baseline_mae: f64,
    #[serde(skip)]
    pub model_sse: f64,
    #[serde(skip)]
    pub baseline_sse: f64,
}

pub const EVAL_COLUMNS: &[&str] = &["group", "min_minutes", "rows", "model_rmse", "model_mae", "baseline_rmse", "baseline_mae"];

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EvalReport {
    pub cells: Vec<EvalCell>,
    /// Empty cells, omitted from `cells`.
    pub notes: Vec<String>,
}

/// Group × minutes-threshold grid; the baseline predicts last season's PCR.
pub fn evaluate(points: &[EvalPoint], thresholds: &[f64]) -> EvalReport {
    let mut report = EvalReport::default();
    for &t in thresholds {
        for g in TransferGroup::GRID {
            let sel: Vec<&EvalPoint> = points.iter().filter(|p| p.min_minutes > t && (g == TransferGroup::All || p.group == g)).collect();
            if sel.is_empty() {
                report.notes.push(format!("{} >{t} min: no rows", g.as_str()));
                continue;
            }
            let a: Vec<f64> = sel.iter().map(|p| p.actual).collect();
            let m: Vec<f64> = sel.iter().map(|p| p.model).collect();
            let b: Vec<f64> = sel.iter().map(|p| p.baseline).collect();
            let sse = |p: &[f64]| a.iter().zip(p).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
            report.cells.push(EvalCell {
                group: g,
                min_minutes: t,
                rows: sel.len(),
                model_rmse: rmse(&a, &m),
                model_mae: mae(&a, &m),
                baseline_rmse: rmse(&a, &b),
                baseline_mae: mae(&a, &b),
                model_sse: sse(&m),
                baseline_sse: sse(&b),
            });
        }
    }
    report
}

/// Trains on all but the last `holdout_seasons` target seasons and scores
/// the held-out pairs on the grid.
pub fn evaluate_forecast(data: &ForecastData, cfg: &ForecastConfig) -> Result<EvalReport, ForecastError> {
    let rows = build_training_rows(data, cfg)?;
    let targets: BTreeSet<&SeasonId> = rows.iter().map(|r| &r.target_season).collect();
    let cut: BTreeSet<&SeasonId> = targets.iter().rev().take(cfg.holdout_seasons).copied().collect();
    let (test, train): (Vec<&ForecastRow>, Vec<&ForecastRow>) = rows.iter().partition(|r| cut.contains(&r.target_season));
    let train: Vec<ForecastRow> = train.into_iter().cloned().collect();
    let model = train_pcr_model(&train, cfg)?;
    let points: Vec<EvalPoint> = test
        .into_iter()
        .filter(|r| r.target_minutes.is_some_and(|m| m >= cfg.min_minutes))
        .filter_map(|r| {
            Some(EvalPoint {
                actual: r.target_pcr?,
                model: model.predict(&r.features).expect("registry dimension"),
                baseline: r.pcr_base,
                group: TransferGroup::of(r.old_team == r.new_team, r.old_league == r.new_league),
                min_minutes: r.minutes_base.min(r.target_minutes?),
            })
        })
        .collect();
    Ok(evaluate(&points, &[cfg.min_minutes, cfg.strong_minutes]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adjust_arithmetic() {
        assert!((adjust_pcr(0.2, 0.1, 0.05) - 0.1934).abs() < 1e-4);
        assert_eq!(adjust_pcr(0.37, 0.0, 0.0), 0.37);
        assert!(adjust_pcr(0.2, 0.2, 0.05) < adjust_pcr(0.2, 0.1, 0.05));
        assert!(adjust_pcr(0.2, 0.1, 0.5) < adjust_pcr(0.2, 0.1, 0.05));
    }

    #[test]
    fn delta_ratings_arithmetic() {
        assert_eq!(delta_ratings(Some(1500.0), Some(1500.0)).unwrap(), 0.0);
        assert!((delta_ratings(Some(1650.0), Some(1500.0)).unwrap() - 0.1).abs() < 1e-15);
        assert!((delta_ratings(Some(1400.0), Some(1550.0)).unwrap() + 0.1).abs() < 1e-15);
        assert!(delta_ratings(None, Some(1500.0)).is_err());
    }

    #[test]
    fn league_strength_cases() {
        assert_eq!(league_strength(&[1600.0, 1500.0, 1400.0], 2).unwrap(), 1550.0);
        assert_eq!(league_strength(&[1600.0, 1500.0, 1400.0], 1).unwrap(), 1600.0);
        assert_eq!(league_strength(&[1512.0; 4], 4).unwrap(), 1512.0);
        assert!(matches!(league_strength(&[1500.0], 2), Err(ForecastError::TooFewClubs { .. })));
    }

    #[test]
    fn hand_vector_metrics() {
        assert!((rmse(&[0.1, 0.3], &[0.2, 0.2]) - 0.1).abs() < 1e-12);
        assert!((mae(&[0.1, 0.3], &[0.2, 0.2]) - 0.1).abs() < 1e-12);
        assert_eq!(rmse(&[0.1, 0.3], &[0.1, 0.3]), 0.0);
    }

    #[test]
    fn season_successor() {
        assert_eq!(next_season(&"2023".into()).unwrap().as_str(), "2024");
        assert_eq!(next_season(&"2023-24".into()).unwrap().as_str(), "2024-25");
        assert_eq!(next_season(&"1999-00".into()).unwrap().as_str(), "2000-01");
        assert!(next_season(&"spring".into()).is_err());
    }

    fn rec(id: &str, date: &str, h: &str, a: &str, hg: u32, ag: u32) -> MatchRecord {
        MatchRecord {
            match_id: id.into(),
            season_id: date[..4].into(),
            competition_id: "L".into(),
            round: 1,
            date: date.into(),
            home_team: h.into(),
            away_team: a.into(),
            home_goals: Some(hg),
            away_goals: Some(ag),
        }
    }

    #[test]
    fn club_ratings_replay() {
        let params = GlickoParams::default();
        let ms = [rec("1", "2021-08-01", "A", "B", 2, 0), rec("2", "2021-08-08", "B", "C", 1, 1), rec("3", "2022-08-01", "A", "C", 1, 0)];
        let h = rate_clubs(&ms, &params).unwrap();
        assert_eq!(h.rating(&"2021".into(), &"A".into()).unwrap(), 1500.0);
        assert!(h.rating(&"2022".into(), &"A".into()).unwrap() > 1500.0);
        assert!(h.rating(&"2022".into(), &"B".into()).unwrap() < 1500.0);
        assert!(h.rating(&"2022".into(), &"Z".into()).is_err());
        let rev = [ms[1].clone(), ms[0].clone()];
        assert!(matches!(rate_clubs(&rev, &params), Err(ForecastError::OutOfOrder { .. })));
    }

    #[test]
    fn registry_is_clean_and_stable() {
        audit_registry(REGISTRY).unwrap();
        assert_eq!(feature_names(), feature_names());
        let names = feature_names();
        let unique: BTreeSet<&String> = names.iter().collect();
        assert_eq!(unique.len(), names.len());
        let stay = stay_feature_names();
        assert!(!stay.iter().any(|n| n.starts_with("new_") || n.starts_with("delta_")));
        let bad = [FeatureDef { name: "next_minutes", group: FeatureGroup::Performance, as_of: AsOf::TargetSeasonEnd, stay: true, compute: |_| 0.0 }];
        assert!(matches!(audit_registry(&bad), Err(ForecastError::Leak { name: "next_minutes", .. })));
    }

    #[test]
    fn grid_partitions_rows() {
        let pts: Vec<EvalPoint> = (0..40)
            .map(|i| EvalPoint {
                actual: f64::from(i) * 0.01,
                model: 0.2,
                baseline: 0.1,
                group: TransferGroup::of(i % 2 == 0, i % 3 == 0),
                min_minutes: 50.0 * f64::from(i),
            })
            .collect();
        let r = evaluate(&pts, &[100.0, 1000.0]);
        for t in [100.0, 1000.0] {
            let cells: Vec<&EvalCell> = r.cells.iter().filter(|c| c.min_minutes == t).collect();
            let all = cells.iter().find(|c| c.group == TransferGroup::All).unwrap();
            let parts: Vec<&&EvalCell> = cells.iter().filter(|c| c.group != TransferGroup::All).collect();
            assert_eq!(parts.iter().map(|c| c.rows).sum::<usize>(), all.rows);
            let sse: f64 = parts.iter().map(|c| c.model_sse).sum();
            assert!((sse - all.model_sse).abs() < 1e-12);
        }
        let exact: Vec<EvalPoint> = pts.iter().map(|p| EvalPoint { model: p.actual, ..p.clone() }).collect();
        assert!(evaluate(&exact, &[100.0]).cells.iter().all(|c| c.model_rmse == 0.0 && c.model_mae == 0.0));
    }
}
