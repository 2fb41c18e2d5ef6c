//! Duel difficulty, advantage-shifted Glicko-2 ratings per duel kind, and the
//! rating tables.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::{duel_winner, pitch, DuelKind, MatchId, PlayerId, PossessionView, PositionGroup, SetPiece, TeamId};
use crate::glicko::{expected, glicko_update, GlickoError, GlickoParams, GlickoState, Matchup};
use crate::learn::{inverse_frequency, normalize_mean_weight, train_gbt, GbtConfig, LearnError, Model, Objective, TrainingRow};
use crate::scalar::logit;
use crate::xg::audit_feature_names;

pub type Glicko = GlickoState<f64>;

#[derive(Debug, Error)]
pub enum DuelError {
    #[error("no same-position {0} duels to train the context model")]
    EmptyContextSet(&'static str),
    #[error("context model: {0}")]
    Training(#[from] LearnError),
    #[error("probability {0} outside (0, 1)")]
    Probability(f64),
    #[error("rating update: {0}")]
    Glicko(#[from] GlickoError),
    #[error("forbidden context feature `{0}`")]
    Forbidden(String),
}

pub const CONTEXT_FEATURES: &[&str] = &[
    "duel_x",
    "duel_y",
    "pass_x",
    "pass_y",
    "pass_length",
    "sp_none",
    "sp_corner",
    "sp_free_kick",
    "sp_throw_in",
    "sp_goal_kick",
    "sp_kickoff",
    "opponents_nearby",
];

/// Skill-free description of a duel, in the attacking team's frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DuelContext {
    pub duel_x: f64,
    pub duel_y: f64,
    pub pass_x: f64,
    pub pass_y: f64,
    pub pass_length: f64,
    pub pass_set_piece: Option<SetPiece>,
    pub opponents_nearby: u32,
    /// The duel's `player_id` is the defending participant.
    pub defender_is_actor: bool,
}

impl DuelContext {
    pub fn vector(&self) -> Vec<f64> {
        let sp = |s: Option<SetPiece>| if self.pass_set_piece == s { 1.0 } else { 0.0 };
        vec![
            self.duel_x,
            self.duel_y,
            self.pass_x,
            self.pass_y,
            self.pass_length,
            sp(None),
            sp(Some(SetPiece::Corner)),
            sp(Some(SetPiece::FreeKick)),
            sp(Some(SetPiece::ThrowIn)),
            sp(Some(SetPiece::GoalKick)),
            sp(Some(SetPiece::Kickoff)),
            f64::from(self.opponents_nearby),
        ]
    }
}

/// Context of the duel at position `i`. The attacking side is the team of
/// the last control action before the duel in the same half; without one the
/// duel has no context.
pub fn duel_context(view: &PossessionView, i: usize) -> Option<DuelContext> {
    let duel = view.event(i);
    if !duel.is_duel() {
        return None;
    }
    let p = view.prev_control_in_half(i)?;
    let pass = view.event(p);
    let defender_is_actor = pass.team_id != duel.team_id;
    let (dx, dy) = if defender_is_actor { pitch::flip(duel.x, duel.y) } else { (duel.x, duel.y) };
    let (ex, ey) = pass.end_point();
    Some(DuelContext {
        duel_x: dx,
        duel_y: dy,
        pass_x: pass.x,
        pass_y: pass.y,
        pass_length: (ex - pass.x).hypot(ey - pass.y),
        pass_set_piece: pass.set_piece,
        opponents_nearby: duel.opponents_nearby.unwrap_or(0),
        defender_is_actor,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DuelRecord {
    pub match_id: MatchId,
    pub event_index: u32,
    /// Position in the view it was read from.
    pub position: usize,
    pub kind: DuelKind,
    pub actor: PlayerId,
    pub actor_team: TeamId,
    pub opponent: Option<PlayerId>,
    pub winner: Option<PlayerId>,
    pub context: Option<DuelContext>,
}

impl DuelRecord {
    pub fn defender(&self) -> Option<&PlayerId> {
        let ctx = self.context.as_ref()?;
        if ctx.defender_is_actor {
            Some(&self.actor)
        } else {
            self.opponent.as_ref()
        }
    }

    pub fn attacker(&self) -> Option<&PlayerId> {
        let ctx = self.context.as_ref()?;
        if ctx.defender_is_actor {
            self.opponent.as_ref()
        } else {
            Some(&self.actor)
        }
    }

    /// Rated duels have a resolved winner, a known opponent and a context.
    pub fn is_rateable(&self) -> bool {
        self.winner.is_some() && self.opponent.is_some() && self.context.is_some()
    }
}

pub fn collect_duels(view: &PossessionView) -> Vec<DuelRecord> {
    let mut out = Vec::new();
    for i in 0..view.len() {
        let e = view.event(i);
        let Some(kind) = e.duel_kind() else { continue };
        let next_team = view.next_control_in_half(i).map(|j| &view.event(j).team_id);
        let winner = duel_winner(e, next_team).ok().cloned();
        out.push(DuelRecord {
            match_id: e.match_id.clone(),
            event_index: e.event_index,
            position: i,
            kind,
            actor: e.player_id.clone(),
            actor_team: e.team_id.clone(),
            opponent: e.opponent_id.clone(),
            winner,
            context: duel_context(view, i),
        });
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextModels {
    pub aerial: Model<f64>,
    pub ground: Model<f64>,
}

impl ContextModels {
    pub fn get(&self, kind: DuelKind) -> &Model<f64> {
        match kind {
            DuelKind::Aerial => &self.aerial,
            DuelKind::Ground => &self.ground,
        }
    }

    /// P(defending participant wins | context).
    pub fn defender_probability(&self, kind: DuelKind, ctx: &DuelContext) -> f64 {
        self.get(kind).predict(&ctx.vector()).expect("context dimension fixed by registry").clamp(1e-6, 1.0 - 1e-6)
    }
}

/// Trains P(defender wins | context) on duels whose participants share a
/// position group, weighting each duel by the defender's inverse frequency.
pub fn train_context_model<'a>(
    duels: impl IntoIterator<Item = &'a DuelRecord>,
    positions: &HashMap<PlayerId, PositionGroup>,
    kind: DuelKind,
    cfg: &GbtConfig<f64>,
) -> Result<Model<f64>, DuelError> {
    audit_feature_names(CONTEXT_FEATURES).map_err(DuelError::Forbidden)?;
    let mut rows = Vec::new();
    for d in duels {
        if d.kind != kind || !d.is_rateable() {
            continue;
        }
        let (Some(def), Some(att)) = (d.defender(), d.attacker()) else { continue };
        match (positions.get(def), positions.get(att)) {
            (Some(a), Some(b)) if a == b => {}
            _ => continue,
        }
        let won = d.winner.as_ref() == Some(def);
        let ctx = d.context.as_ref().expect("rateable duel has context");
        rows.push(TrainingRow::new(ctx.vector(), if won { 1.0 } else { 0.0 }, def.clone()));
    }
    if rows.is_empty() {
        return Err(DuelError::EmptyContextSet(kind.as_str()));
    }
    let ids: Vec<&PlayerId> = rows.iter().map(|r| &r.player_id).collect();
    let w: Vec<f64> = inverse_frequency(&ids);
    rows.iter_mut().zip(w).for_each(|(r, w)| r.weight = w);
    normalize_mean_weight(&mut rows);
    let names = CONTEXT_FEATURES.iter().map(|s| s.to_string()).collect();
    Ok(train_gbt(&rows, Objective::WeightedLogloss, cfg)?.with_feature_names(names))
}

/// Internal-scale advantage that makes the expected score of two equally
/// rated players equal `p` in the zero-deviation limit.
pub fn advantage_of(p: f64) -> Result<f64, DuelError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(DuelError::Probability(p));
    }
    Ok(logit(p))
}

/// Probability that `a` beats `b`, with `advantage_a` added to `a`'s rating.
pub fn win_probability(a: &Glicko, b: &Glicko, advantage_a: f64) -> f64 {
    expected(a.mu + advantage_a, b.mu, b.phi)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdvantageMode {
    /// Advantage from each duel's own context probability.
    #[default]
    PerDuel,
    /// One advantage per duel kind: the mean context logit.
    GlobalMean,
}

impl std::str::FromStr for AdvantageMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per-duel" => Ok(AdvantageMode::PerDuel),
            "global-mean" => Ok(AdvantageMode::GlobalMean),
            other => Err(format!("unknown advantage mode `{other}`")),
        }
    }
}

/// A duel with both participants and a context, placed in a rating period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatedDuel {
    /// Periods are processed in ascending order.
    pub period: String,
    pub match_id: MatchId,
    pub event_index: u32,
    pub kind: DuelKind,
    pub defender: PlayerId,
    pub attacker: PlayerId,
    /// `None` for unresolved duels, which do not update ratings.
    pub defender_won: Option<bool>,
    /// Context-model P(defender wins).
    pub p_defender: f64,
}

impl RatedDuel {
    pub fn from_record(d: &DuelRecord, period: impl Into<String>, models: &ContextModels) -> Option<Self> {
        let ctx = d.context.as_ref()?;
        let defender = d.defender()?.clone();
        let attacker = d.attacker()?.clone();
        Some(RatedDuel {
            period: period.into(),
            match_id: d.match_id.clone(),
            event_index: d.event_index,
            kind: d.kind,
            defender_won: d.winner.as_ref().map(|w| *w == defender),
            defender,
            attacker,
            p_defender: models.defender_probability(d.kind, ctx),
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlayerDuelStats {
    pub duels: u32,
    pub wins: u32,
}

#[derive(Clone, Debug, Default)]
pub struct RatingRun {
    pub params: GlickoParams<f64>,
    /// Sorted period keys.
    pub periods: Vec<String>,
    pub ratings: BTreeMap<(DuelKind, PlayerId), Glicko>,
    pub stats: BTreeMap<(DuelKind, PlayerId), PlayerDuelStats>,
    /// Post-period states, by period ordinal, for periods with games.
    history: HashMap<(DuelKind, PlayerId), Vec<(usize, Glicko)>>,
}

impl RatingRun {
    pub fn rating(&self, kind: DuelKind, player: &PlayerId) -> Glicko {
        self.ratings.get(&(kind, player.clone())).copied().unwrap_or_else(|| GlickoState::initial(&self.params))
    }

    /// State entering `period`: the last rated state, inflated once for
    /// every idle period since.
    pub fn rating_before(&self, kind: DuelKind, player: &PlayerId, period: &str) -> Glicko {
        let idx = self.periods.partition_point(|p| p.as_str() < period);
        let Some(h) = self.history.get(&(kind, player.clone())) else {
            return GlickoState::initial(&self.params);
        };
        let k = h.partition_point(|(p, _)| *p < idx);
        if k == 0 {
            return GlickoState::initial(&self.params);
        }
        let (p, mut s) = h[k - 1];
        for _ in p + 1..idx {
            s = s.idle();
        }
        s
    }
}

/// Sequential rating periods. Within a period every participant is updated
/// once against the pre-period states of all their opponents; the defender
/// receives `+a` and the attacker `−a`.
pub fn run_rating_pipeline(duels: &[RatedDuel], params: &GlickoParams<f64>, mode: AdvantageMode) -> Result<RatingRun, DuelError> {
    let mut global: HashMap<DuelKind, f64> = HashMap::new();
    if mode == AdvantageMode::GlobalMean {
        for kind in DuelKind::ALL {
            let logits: Vec<f64> = duels.iter().filter(|d| d.kind == kind).map(|d| logit(d.p_defender)).collect();
            if !logits.is_empty() {
                global.insert(kind, logits.iter().sum::<f64>() / logits.len() as f64);
            }
        }
    }
    let mut by_period: BTreeMap<&str, Vec<&RatedDuel>> = BTreeMap::new();
    for d in duels {
        by_period.entry(d.period.as_str()).or_default().push(d);
    }
    let mut run = RatingRun { params: *params, periods: by_period.keys().map(|p| p.to_string()).collect(), ..Default::default() };
    let init = GlickoState::initial(params);
    for (idx, period) in by_period.into_values().enumerate() {
        let mut games: BTreeMap<(DuelKind, PlayerId), Vec<Matchup<f64>>> = BTreeMap::new();
        for d in period {
            let Some(def_won) = d.defender_won else { continue };
            let a = match mode {
                AdvantageMode::PerDuel => advantage_of(d.p_defender)?,
                AdvantageMode::GlobalMean => global[&d.kind],
            };
            let def = run.ratings.get(&(d.kind, d.defender.clone())).copied().unwrap_or(init);
            let att = run.ratings.get(&(d.kind, d.attacker.clone())).copied().unwrap_or(init);
            let s = if def_won { 1.0 } else { 0.0 };
            games
                .entry((d.kind, d.defender.clone()))
                .or_default()
                .push(Matchup { mu: att.mu, phi: att.phi, score: s, advantage: a });
            games
                .entry((d.kind, d.attacker.clone()))
                .or_default()
                .push(Matchup { mu: def.mu, phi: def.phi, score: 1.0 - s, advantage: -a });
            for (p, won) in [(&d.defender, def_won), (&d.attacker, !def_won)] {
                let st = run.stats.entry((d.kind, p.clone())).or_default();
                st.duels += 1;
                st.wins += u32::from(won);
            }
        }
        for (key, state) in run.ratings.iter_mut() {
            if !games.contains_key(key) {
                *state = state.idle();
            }
        }
        for (key, m) in games {
            let cur = run.ratings.get(&key).copied().unwrap_or(init);
            let next = glicko_update(&cur, &m, params)?;
            run.history.entry(key.clone()).or_default().push((idx, next));
            run.ratings.insert(key, next);
        }
    }
    Ok(run)
}

/// Probability that `a` beats `b` in a duel whose context model gives the
/// defender probability `p_defender`.
pub fn win_probability_in_context(a: &Glicko, b: &Glicko, a_defending: bool, p_defender: f64) -> Result<f64, DuelError> {
    let adv = advantage_of(p_defender)?;
    Ok(win_probability(a, b, if a_defending { adv } else { -adv }))
}

/// One row of the duel rating tables.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RatingRow {
    pub rank: usize,
    pub player: PlayerId,
    pub position: String,
    pub rating: i64,
    pub duels: u32,
    #[serde(serialize_with = "crate::roster::fixed4")]
    pub win_pct: f64,
}

pub const RATING_TABLE_COLUMNS: &[&str] = &["rank", "player", "position", "rating", "duels", "win_pct"];

/// Rating table sorted by rating desc, then duels desc, then player id.
pub fn rating_table(
    run: &RatingRun,
    kind: DuelKind,
    positions: &HashMap<PlayerId, PositionGroup>,
    min_duels: u32,
) -> Vec<RatingRow> {
    let mut rows: Vec<(f64, RatingRow)> = run
        .stats
        .iter()
        .filter(|((k, _), s)| *k == kind && s.duels >= min_duels)
        .map(|((_, p), s)| {
            let r = run.rating(kind, p).display_rating();
            (
                r,
                RatingRow {
                    rank: 0,
                    player: p.clone(),
                    position: positions.get(p).map_or_else(String::new, |g| g.as_str().to_string()),
                    rating: r.round() as i64,
                    duels: s.duels,
                    win_pct: 100.0 * f64::from(s.wins) / f64::from(s.duels),
                },
            )
        })
        .collect();
    rows.sort_by(|(ra, a), (rb, b)| rb.total_cmp(ra).then(b.duels.cmp(&a.duels)).then(a.player.cmp(&b.player)));
    rows.into_iter()
        .enumerate()
        .map(|(i, (_, mut row))| {
            row.rank = i + 1;
            row
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{ActionKind, Event};

    fn state(mu: f64, phi: f64) -> Glicko {
        GlickoState { mu, phi, sigma: 0.06, games: 0 }
    }

    #[test]
    fn advantage_values() {
        assert_eq!(advantage_of(0.5).unwrap(), 0.0);
        assert!((advantage_of(0.6).unwrap() - 0.405_465).abs() < 1e-6);
        assert!((advantage_of(0.4).unwrap() + advantage_of(0.6).unwrap()).abs() < 1e-15);
        assert!(matches!(advantage_of(1.0), Err(DuelError::Probability(_))));
        assert!(matches!(advantage_of(0.0), Err(DuelError::Probability(_))));
    }

    #[test]
    fn win_probability_cases() {
        let s = state(0.0, 1.0);
        assert_eq!(win_probability(&s, &s, 0.0), 0.5);
        let a = advantage_of(0.6).unwrap();
        let z = state(0.0, 0.0);
        assert!((win_probability(&z, &z, a) - 0.6).abs() < 1e-12);
        assert!(win_probability(&state(0.5, 1.0), &s, 0.0) > 0.5);
    }

    fn duel_view(actor_team: &str) -> PossessionView {
        let mut pass = Event::new("m", 0, 0.0, 1, "A", "a1", ActionKind::parse("pass"), 30.0, 20.0);
        pass.end_x = Some(70.0);
        pass.end_y = Some(30.0);
        let mut duel = Event::new("m", 1, 2.0, 1, actor_team, "x", ActionKind::parse("aerial_duel"), 70.0, 30.0);
        duel.opponent_id = Some("y".into());
        duel.first_touch_by = Some("x".into());
        let follow = Event::new("m", 2, 3.0, 1, actor_team, "x", ActionKind::parse("pass"), 70.0, 30.0);
        PossessionView::build("m".into(), vec![pass, duel, follow], 15.0).unwrap()
    }

    #[test]
    fn context_is_in_attacking_frame() {
        let attacking = duel_context(&duel_view("A"), 1).unwrap();
        assert!(!attacking.defender_is_actor);
        assert_eq!((attacking.duel_x, attacking.duel_y), (70.0, 30.0));
        let mut v = duel_view("B");
        v.events[1].event.x = 35.0;
        v.events[1].event.y = 38.0;
        let defending = duel_context(&v, 1).unwrap();
        assert!(defending.defender_is_actor);
        assert_eq!((defending.duel_x, defending.duel_y), (70.0, 30.0));
        assert!((attacking.pass_length - 41.231_056).abs() < 1e-6);
        assert_eq!(attacking.vector().len(), CONTEXT_FEATURES.len());
    }

    #[test]
    fn records_resolve_roles() {
        let recs = collect_duels(&duel_view("A"));
        assert_eq!(recs.len(), 1);
        let r = &recs[0];
        assert_eq!(r.attacker().unwrap().as_str(), "x");
        assert_eq!(r.defender().unwrap().as_str(), "y");
        assert_eq!(r.winner.as_ref().unwrap().as_str(), "x");
    }

    #[test]
    fn mixed_positions_are_excluded() {
        let recs = collect_duels(&duel_view("A"));
        let mut pos = HashMap::new();
        pos.insert(PlayerId::new("x"), PositionGroup::CentralForward);
        pos.insert(PlayerId::new("y"), PositionGroup::CentralDef);
        assert!(matches!(
            train_context_model(&recs, &pos, DuelKind::Aerial, &GbtConfig::default()),
            Err(DuelError::EmptyContextSet("aerial"))
        ));
    }

    fn rd(period: &str, def: &str, att: &str, won: bool) -> RatedDuel {
        RatedDuel {
            period: period.into(),
            match_id: MatchId::new(period),
            event_index: 0,
            kind: DuelKind::Aerial,
            defender: def.into(),
            attacker: att.into(),
            defender_won: Some(won),
            p_defender: 0.5,
        }
    }

    #[test]
    fn pipeline_tables_and_untouched_players() {
        let params = GlickoParams::default();
        let duels = vec![rd("01", "a", "b", true), rd("02", "a", "c", true), rd("03", "b", "c", false)];
        let run = run_rating_pipeline(&duels, &params, AdvantageMode::PerDuel).unwrap();
        let table = rating_table(&run, DuelKind::Aerial, &HashMap::new(), 0);
        assert_eq!(table[0].player.as_str(), "a");
        assert_eq!(table.iter().map(|r| r.rank).collect::<Vec<_>>(), vec![1, 2, 3]);
        let ghost = run.rating(DuelKind::Aerial, &"nobody".into());
        assert_eq!(ghost.display_rating(), 1500.0);
        assert!((ghost.phi - 2.0147).abs() < 1e-4);
        for w in table.windows(2) {
            assert!(w[0].rating >= w[1].rating);
        }
        let prefix = run_rating_pipeline(&duels[..2], &params, AdvantageMode::PerDuel).unwrap();
        let a: PlayerId = "a".into();
        assert_eq!(run.rating_before(DuelKind::Aerial, &a, "03"), prefix.rating(DuelKind::Aerial, &a));
        assert_eq!(run.rating_before(DuelKind::Aerial, &a, "04"), run.rating(DuelKind::Aerial, &a));
        assert_eq!(run.rating_before(DuelKind::Aerial, &a, "01").games, 0);
        let again = run_rating_pipeline(&duels, &params, AdvantageMode::PerDuel).unwrap();
        assert_eq!(again.ratings, run.ratings);
    }

    #[test]
    fn global_mean_mode_uses_one_advantage() {
        let params = GlickoParams::default();
        let mut duels = vec![rd("01", "a", "b", true), rd("01", "c", "d", true)];
        duels[0].p_defender = 0.7;
        duels[1].p_defender = 0.5;
        duels[1].event_index = 1;
        let run = run_rating_pipeline(&duels, &params, AdvantageMode::GlobalMean).unwrap();
        let a = run.rating(DuelKind::Aerial, &"a".into());
        let c = run.rating(DuelKind::Aerial, &"c".into());
        assert_eq!(a, c);
        let per = run_rating_pipeline(&duels, &params, AdvantageMode::PerDuel).unwrap();
        assert_ne!(per.ratings, run.ratings);
    }
}
