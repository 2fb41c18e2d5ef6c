//! EPV models and per-action rewards.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::duels::{duel_context, win_probability, ContextModels, RatingRun};
use crate::event::{pitch, ActionKind, BodyPart, ControlKind, DuelKind, Event, MatchId, PlayerId, PossessionView, SetPiece, TeamId};
use crate::learn::{normalize_mean_weight, per_player_weights, train_gbt, GbtConfig, LearnError, Model, Objective, TrainingRow};
use crate::pv::{ActionClass, LabeledAction};
use crate::scalar::logit;
use crate::xg::{audit_feature_names, distance_to_goal, goal_angle};

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("event {0} is neither a control action nor a duel")]
    NotValued(usize),
    #[error("event {0} follows a non-core event; filter the view first")]
    Unfiltered(usize),
    #[error("duel {0} is flagged as a goal")]
    DuelGoal(usize),
    #[error("no training rows for the {0} model")]
    EmptyModel(&'static str),
    #[error("{model} model: {source}")]
    Training {
        model: &'static str,
        #[source]
        source: LearnError,
    },
    #[error("forbidden feature `{0}`")]
    Forbidden(String),
    #[error("missing EPV value for event {0}")]
    MissingValue(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpvPath {
    ControlOpen,
    ControlSetPiece,
    DuelAvg(DuelKind),
    DuelInd(DuelKind),
}

impl EpvPath {
    pub const ALL: [EpvPath; 6] = [
        EpvPath::ControlOpen,
        EpvPath::ControlSetPiece,
        EpvPath::DuelAvg(DuelKind::Aerial),
        EpvPath::DuelAvg(DuelKind::Ground),
        EpvPath::DuelInd(DuelKind::Aerial),
        EpvPath::DuelInd(DuelKind::Ground),
    ];

    pub fn name(self) -> &'static str {
        match self {
            EpvPath::ControlOpen => "control_open",
            EpvPath::ControlSetPiece => "control_set_piece",
            EpvPath::DuelAvg(DuelKind::Aerial) => "duel_avg_aerial",
            EpvPath::DuelAvg(DuelKind::Ground) => "duel_avg_ground",
            EpvPath::DuelInd(DuelKind::Aerial) => "duel_ind_aerial",
            EpvPath::DuelInd(DuelKind::Ground) => "duel_ind_ground",
        }
    }

    pub fn feature_names(self) -> &'static [&'static str] {
        match self {
            EpvPath::ControlOpen => CONTROL_OPEN_FEATURES,
            EpvPath::ControlSetPiece => CONTROL_SET_PIECE_FEATURES,
            EpvPath::DuelAvg(_) => DUEL_AVG_FEATURES,
            EpvPath::DuelInd(_) => DUEL_IND_FEATURES,
        }
    }

    /// Control path for a control action.
    pub fn control(e: &Event) -> Self {
        if e.is_set_piece() {
            EpvPath::ControlSetPiece
        } else {
            EpvPath::ControlOpen
        }
    }
}

pub const CONTROL_OPEN_FEATURES: &[&str] = &[
    "x",
    "y",
    "end_x",
    "end_y",
    "distance_m",
    "angle_rad",
    "kind_pass",
    "kind_carry",
    "kind_dribble",
    "kind_shot",
    "body_head",
    "body_other",
    "prev_control_same",
    "prev_control_opp",
    "prev_duel",
    "prev_none",
    "prev_x",
    "prev_y",
    "time_since_prev_s",
];

pub const CONTROL_SET_PIECE_FEATURES: &[&str] = &[
    "x",
    "y",
    "end_x",
    "end_y",
    "distance_m",
    "angle_rad",
    "sp_penalty",
    "sp_free_kick",
    "sp_corner",
    "sp_goal_kick",
    "sp_throw_in",
    "sp_kickoff",
    "body_head",
];

pub const DUEL_AVG_FEATURES: &[&str] = &[
    "x",
    "y",
    "distance_m",
    "context_p_win",
    "actor_defending",
    "has_context",
    "prev_control_same",
    "prev_control_opp",
    "prev_duel",
    "prev_none",
    "prev_x",
    "prev_y",
    "time_since_prev_s",
];

pub const DUEL_IND_FEATURES: &[&str] = &[
    "x",
    "y",
    "distance_m",
    "context_p_win",
    "actor_defending",
    "has_context",
    "prev_control_same",
    "prev_control_opp",
    "prev_duel",
    "prev_none",
    "prev_x",
    "prev_y",
    "time_since_prev_s",
    "win_probability",
    "own_rating",
    "opp_rating",
];

/// Duel-side inputs to the EPV features: the context model and the ratings
/// entering the match's rating period.
#[derive(Clone, Copy, Debug)]
pub struct DuelSkill<'a> {
    pub context: &'a ContextModels,
    pub ratings: &'a RatingRun,
    pub period: &'a str,
}

/// Skill terms of a duel from the acting player's side.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DuelTerms {
    pub kind: DuelKind,
    pub has_context: bool,
    pub actor_defending: bool,
    /// Context-only P(actor wins).
    pub p_context: f64,
    /// Rating-aware P(actor wins).
    pub p_win: f64,
    pub own_rating: f64,
    pub opp_rating: f64,
}

pub fn duel_terms(view: &PossessionView, i: usize, skill: &DuelSkill) -> Result<DuelTerms, RewardError> {
    let e = view.event(i);
    let kind = e.duel_kind().ok_or(RewardError::NotValued(i))?;
    let ctx = duel_context(view, i);
    let (p_context, actor_defending) = match &ctx {
        Some(c) => {
            let p_def = skill.context.defender_probability(kind, c);
            (if c.defender_is_actor { p_def } else { 1.0 - p_def }, c.defender_is_actor)
        }
        None => (0.5, false),
    };
    let own = skill.ratings.rating_before(kind, &e.player_id, skill.period);
    let opp = match &e.opponent_id {
        Some(o) => skill.ratings.rating_before(kind, o, skill.period),
        None => crate::glicko::GlickoState::initial(&skill.ratings.params),
    };
    Ok(DuelTerms {
        kind,
        has_context: ctx.is_some(),
        actor_defending,
        p_context,
        p_win: win_probability(&own, &opp, logit(p_context)),
        own_rating: own.display_rating(),
        opp_rating: opp.display_rating(),
    })
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Previous-event block shared by the open-play and duel paths, in the
/// actor's frame.
fn prev_block(view: &PossessionView, i: usize, out: &mut Vec<f64>) {
    let e = view.event(i);
    match view.prev_in_half(i) {
        Some(p) => {
            let prev = view.event(p);
            let same = prev.team_id == e.team_id;
            let (px, py) = if same { (prev.x, prev.y) } else { pitch::flip(prev.x, prev.y) };
            out.extend([
                flag(prev.is_control() && same),
                flag(prev.is_control() && !same),
                flag(prev.is_duel()),
                0.0,
                px,
                py,
                view.time(i) - view.time(p),
            ]);
        }
        None => out.extend([0.0, 0.0, 0.0, 1.0, e.x, e.y, 0.0]),
    }
}

/// Feature vector of event `i` for the given model path. Duel paths need
/// `skill`; the set-piece path reads the current action only.
pub fn extract_epv_features(
    view: &PossessionView,
    i: usize,
    path: EpvPath,
    skill: Option<&DuelSkill>,
) -> Result<Vec<f64>, RewardError> {
    let e = view.event(i);
    let mut f = Vec::with_capacity(path.feature_names().len());
    match path {
        EpvPath::ControlOpen | EpvPath::ControlSetPiece => {
            if !e.is_control() {
                return Err(RewardError::NotValued(i));
            }
            let (ex, ey) = e.end_point();
            f.extend([e.x, e.y, ex, ey, distance_to_goal(e.x, e.y), goal_angle(e.x, e.y)]);
            if path == EpvPath::ControlOpen {
                let k = e.control_kind();
                f.extend([
                    flag(k == Some(ControlKind::Pass)),
                    flag(k == Some(ControlKind::Carry)),
                    flag(k == Some(ControlKind::Dribble)),
                    flag(e.is_shot()),
                    flag(e.body_part == Some(BodyPart::Head)),
                    flag(e.body_part == Some(BodyPart::Other)),
                ]);
                prev_block(view, i, &mut f);
            } else {
                f.extend(SetPiece::ALL.iter().map(|&s| flag(e.set_piece == Some(s))));
                f.push(flag(e.body_part == Some(BodyPart::Head)));
            }
        }
        EpvPath::DuelAvg(kind) | EpvPath::DuelInd(kind) => {
            if e.duel_kind() != Some(kind) {
                return Err(RewardError::NotValued(i));
            }
            let t = duel_terms(view, i, skill.expect("duel features need ratings and a context model"))?;
            f.extend([e.x, e.y, distance_to_goal(e.x, e.y), t.p_context, flag(t.actor_defending), flag(t.has_context)]);
            prev_block(view, i, &mut f);
            if matches!(path, EpvPath::DuelInd(_)) {
                f.extend([t.p_win, t.own_rating, t.opp_rating]);
            }
        }
    }
    debug_assert_eq!(f.len(), path.feature_names().len());
    Ok(f)
}

/// Training rows for every labeled action: controls feed one control path;
/// each duel feeds both the average and the individual model of its kind.
pub fn epv_training_rows(
    view: &PossessionView,
    labels: &[LabeledAction<f64>],
    skill: &DuelSkill,
) -> Result<Vec<(EpvPath, TrainingRow<f64>)>, RewardError> {
    let mut out = Vec::with_capacity(labels.len());
    for l in labels {
        let e = view.event(l.position);
        let paths: Vec<EpvPath> = match (l.kind, e.duel_kind()) {
            (ActionClass::Control, _) => vec![EpvPath::control(e)],
            (ActionClass::Duel, Some(k)) => vec![EpvPath::DuelAvg(k), EpvPath::DuelInd(k)],
            (ActionClass::Duel, None) => return Err(RewardError::NotValued(l.position)),
        };
        for p in paths {
            let f = extract_epv_features(view, l.position, p, Some(skill))?;
            out.push((p, TrainingRow::new(f, l.pv, e.player_id.clone())));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFit {
    pub model: String,
    pub rows: usize,
    /// Weighted training RMSE.
    pub rmse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpvModelSet {
    pub control_open: Model<f64>,
    pub control_set_piece: Model<f64>,
    pub duel_avg_aerial: Model<f64>,
    pub duel_avg_ground: Model<f64>,
    pub duel_ind_aerial: Model<f64>,
    pub duel_ind_ground: Model<f64>,
    pub fits: Vec<ModelFit>,
}

impl EpvModelSet {
    pub fn get(&self, path: EpvPath) -> &Model<f64> {
        match path {
            EpvPath::ControlOpen => &self.control_open,
            EpvPath::ControlSetPiece => &self.control_set_piece,
            EpvPath::DuelAvg(DuelKind::Aerial) => &self.duel_avg_aerial,
            EpvPath::DuelAvg(DuelKind::Ground) => &self.duel_avg_ground,
            EpvPath::DuelInd(DuelKind::Aerial) => &self.duel_ind_aerial,
            EpvPath::DuelInd(DuelKind::Ground) => &self.duel_ind_ground,
        }
    }

    /// Prediction clamped to [−1, 1].
    pub fn predict(&self, path: EpvPath, features: &[f64]) -> f64 {
        self.get(path).predict(features).expect("feature dimension fixed by path").clamp(-1.0, 1.0)
    }
}

pub fn train_epv(rows: Vec<(EpvPath, TrainingRow<f64>)>, cfg: &GbtConfig<f64>) -> Result<EpvModelSet, RewardError> {
    train_epv_with(rows, cfg, true)
}

/// `weighted = false` trains with unit weights, for comparison runs.
pub fn train_epv_with(
    rows: Vec<(EpvPath, TrainingRow<f64>)>,
    cfg: &GbtConfig<f64>,
    weighted: bool,
) -> Result<EpvModelSet, RewardError> {
    let mut sets: BTreeMap<EpvPath, Vec<TrainingRow<f64>>> = BTreeMap::new();
    for (p, r) in rows {
        sets.entry(p).or_default().push(r);
    }
    let mut models = BTreeMap::new();
    let mut fits = Vec::new();
    for path in EpvPath::ALL {
        let name = path.name();
        if !matches!(path, EpvPath::DuelInd(_)) {
            audit_feature_names(path.feature_names()).map_err(RewardError::Forbidden)?;
        }
        let mut set = sets.remove(&path).unwrap_or_default();
        if set.is_empty() {
            return Err(RewardError::EmptyModel(name));
        }
        if weighted {
            per_player_weights(&mut set);
            normalize_mean_weight(&mut set);
        }
        let names = path.feature_names().iter().map(|s| s.to_string()).collect();
        let model = train_gbt(&set, Objective::WeightedMse, cfg)
            .map_err(|source| RewardError::Training { model: name, source })?
            .with_feature_names(names);
        let (mut se, mut w) = (0.0, 0.0);
        for r in &set {
            let d = model.predict(&r.features).expect("dimension checked in training") - r.target;
            se += r.weight * d * d;
            w += r.weight;
        }
        fits.push(ModelFit { model: name.to_string(), rows: set.len(), rmse: (se / w).sqrt() });
        models.insert(path, model);
    }
    let mut take = |p: EpvPath| models.remove(&p).expect("every path trained");
    Ok(EpvModelSet {
        control_open: take(EpvPath::ControlOpen),
        control_set_piece: take(EpvPath::ControlSetPiece),
        duel_avg_aerial: take(EpvPath::DuelAvg(DuelKind::Aerial)),
        duel_avg_ground: take(EpvPath::DuelAvg(DuelKind::Ground)),
        duel_ind_aerial: take(EpvPath::DuelInd(DuelKind::Aerial)),
        duel_ind_ground: take(EpvPath::DuelInd(DuelKind::Ground)),
        fits,
    })
}

/// EPV of one event, from the acting team's side.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EpvValue {
    None,
    Control(f64),
    Duel { avg: f64, ind: f64 },
}

pub fn predict_epv(models: &EpvModelSet, view: &PossessionView, skill: &DuelSkill) -> Result<Vec<EpvValue>, RewardError> {
    (0..view.len())
        .map(|i| {
            let e = view.event(i);
            if e.is_control() {
                let p = EpvPath::control(e);
                Ok(EpvValue::Control(models.predict(p, &extract_epv_features(view, i, p, None)?)))
            } else if let Some(k) = e.duel_kind() {
                let avg = models.predict(EpvPath::DuelAvg(k), &extract_epv_features(view, i, EpvPath::DuelAvg(k), Some(skill))?);
                let ind = models.predict(EpvPath::DuelInd(k), &extract_epv_features(view, i, EpvPath::DuelInd(k), Some(skill))?);
                Ok(EpvValue::Duel { avg, ind })
            } else {
                Ok(EpvValue::None)
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    SameTeamControl,
    Turnover,
    Goal,
    HalfEnd,
    IntoDuel,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::SameTeamControl => "same_team_control",
            Scenario::Turnover => "turnover",
            Scenario::Goal => "goal",
            Scenario::HalfEnd => "half_end",
            Scenario::IntoDuel => "into_duel",
        }
    }

    pub fn number(self) -> u8 {
        match self {
            Scenario::SameTeamControl => 1,
            Scenario::Turnover => 2,
            Scenario::Goal => 3,
            Scenario::HalfEnd => 4,
            Scenario::IntoDuel => 5,
        }
    }
}

/// Outcome class of event `i` on a view without non-core events.
pub fn classify_scenario(view: &PossessionView, i: usize) -> Result<Scenario, RewardError> {
    let e = view.event(i);
    if !e.is_control() && !e.is_duel() {
        return Err(RewardError::NotValued(i));
    }
    if e.is_shot() && e.is_goal {
        return Ok(Scenario::Goal);
    }
    let Some(j) = view.next_in_half(i) else {
        return Ok(Scenario::HalfEnd);
    };
    let next = view.event(j);
    if next.is_duel() {
        Ok(Scenario::IntoDuel)
    } else if !next.is_control() {
        Err(RewardError::Unfiltered(j))
    } else if next.team_id == e.team_id {
        Ok(Scenario::SameTeamControl)
    } else {
        Ok(Scenario::Turnover)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RewardRecord {
    pub match_id: MatchId,
    pub event_index: u32,
    #[serde(skip)]
    pub position: usize,
    pub player_id: PlayerId,
    pub team_id: TeamId,
    #[serde(skip)]
    pub action: ActionKind,
    #[serde(skip)]
    pub is_set_piece: bool,
    pub scenario: Scenario,
    pub delta_epv: f64,
    /// Baseline value of the action itself.
    pub epv_self: f64,
    /// Value of what followed, oriented to the acting team; zero when absent.
    pub epv_next: f64,
    /// A goal with no kickoff left in the half.
    pub kickoff_missing: bool,
    pub effective_minute: f64,
}

fn control_value(epv: &[EpvValue], i: usize) -> Result<f64, RewardError> {
    match epv.get(i) {
        Some(EpvValue::Control(v)) => Ok(*v),
        _ => Err(RewardError::MissingValue(i)),
    }
}

fn duel_values(epv: &[EpvValue], i: usize) -> Result<(f64, f64), RewardError> {
    match epv.get(i) {
        Some(EpvValue::Duel { avg, ind }) => Ok((*avg, *ind)),
        _ => Err(RewardError::MissingValue(i)),
    }
}

fn kickoff_after(view: &PossessionView, i: usize) -> Option<usize> {
    (i + 1..view.half_range(i).end).find(|&j| {
        let e = view.event(j);
        e.is_control() && e.set_piece == Some(SetPiece::Kickoff)
    })
}

fn effective_minute(view: &PossessionView, i: usize) -> f64 {
    let half = view.event(i).half;
    let before: f64 = view.half_durations().iter().filter(|(h, _)| *h < half).map(|(_, d)| d).sum();
    (before + view.time(i)) / 60.0
}

/// Value of the event after `i`, seen from the team of `i`; individual-skill
/// values for a following duel.
fn next_value(view: &PossessionView, epv: &[EpvValue], i: usize, scenario: Scenario) -> Result<f64, RewardError> {
    let j = i + 1;
    let sign = if view.event(j).team_id == view.event(i).team_id { 1.0 } else { -1.0 };
    match scenario {
        Scenario::IntoDuel => Ok(sign * duel_values(epv, j)?.1),
        _ => Ok(sign * control_value(epv, j)?),
    }
}

fn record(view: &PossessionView, i: usize, scenario: Scenario, delta: f64, own: f64, next: f64, missing: bool) -> RewardRecord {
    let e = view.event(i);
    RewardRecord {
        match_id: e.match_id.clone(),
        event_index: e.event_index,
        position: i,
        player_id: e.player_id.clone(),
        team_id: e.team_id.clone(),
        action: e.action,
        is_set_piece: e.is_set_piece(),
        scenario,
        delta_epv: delta,
        epv_self: own,
        epv_next: next,
        kickoff_missing: missing,
        effective_minute: effective_minute(view, i),
    }
}

/// Reward of control action `i`.
pub fn delta_epv_control(view: &PossessionView, epv: &[EpvValue], i: usize) -> Result<RewardRecord, RewardError> {
    if !view.event(i).is_control() {
        return Err(RewardError::NotValued(i));
    }
    let scenario = classify_scenario(view, i)?;
    let own = control_value(epv, i)?;
    let (delta, next, missing) = match scenario {
        Scenario::HalfEnd => (0.0, 0.0, false),
        Scenario::Goal => match kickoff_after(view, i) {
            Some(k) => {
                let ko = control_value(epv, k)?;
                (1.0 - own - ko, ko, false)
            }
            None => (1.0 - own, 0.0, true),
        },
        _ => {
            let next = next_value(view, epv, i, scenario)?;
            (next - own, next, false)
        }
    };
    Ok(record(view, i, scenario, delta, own, next, missing))
}

/// Reward of duel `i`, measured against the skill-free duel value.
pub fn delta_epv_duel(view: &PossessionView, epv: &[EpvValue], i: usize) -> Result<RewardRecord, RewardError> {
    if !view.event(i).is_duel() {
        return Err(RewardError::NotValued(i));
    }
    if view.event(i).is_goal {
        return Err(RewardError::DuelGoal(i));
    }
    let scenario = classify_scenario(view, i)?;
    let (avg, _) = duel_values(epv, i)?;
    let (delta, next) = match scenario {
        Scenario::HalfEnd => (0.0, 0.0),
        Scenario::Goal => return Err(RewardError::DuelGoal(i)),
        _ => {
            let next = next_value(view, epv, i, scenario)?;
            (next - avg, next)
        }
    };
    Ok(record(view, i, scenario, delta, avg, next, false))
}

/// Rewards for every control action and duel of a filtered view.
pub fn compute_rewards(view: &PossessionView, epv: &[EpvValue]) -> Result<Vec<RewardRecord>, RewardError> {
    let mut out = Vec::new();
    for i in 0..view.len() {
        let e = view.event(i);
        if e.is_control() {
            out.push(delta_epv_control(view, epv, i)?);
        } else if e.is_duel() {
            out.push(delta_epv_duel(view, epv, i)?);
        }
    }
    Ok(out)
}

pub const REWARD_COLUMNS: &[&str] = &["match_id", "event_index", "player_id", "scenario", "delta_epv"];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::Event;

    fn view(rows: &[(&str, &str)]) -> PossessionView {
        let events = rows
            .iter()
            .enumerate()
            .map(|(i, &(team, action))| Event::new("m", i as u32, i as f64, 1, team, format!("{team}{i}"), ActionKind::parse(action), 50.0, 34.0))
            .collect();
        PossessionView::build("m".into(), events, 15.0).unwrap()
    }

    #[test]
    fn scenarios() {
        let v = view(&[("A", "pass"), ("A", "carry"), ("B", "pass"), ("B", "pass"), ("A", "aerial_duel"), ("B", "pass")]);
        let s: Vec<Scenario> = (0..v.len()).map(|i| classify_scenario(&v, i).unwrap()).collect();
        assert_eq!(
            s,
            vec![
                Scenario::SameTeamControl,
                Scenario::Turnover,
                Scenario::SameTeamControl,
                Scenario::IntoDuel,
                Scenario::Turnover,
                Scenario::HalfEnd
            ]
        );
        let o = view(&[("A", "pass"), ("A", "save"), ("A", "pass")]);
        assert!(matches!(classify_scenario(&o, 0), Err(RewardError::Unfiltered(1))));
        assert!(matches!(classify_scenario(&o, 1), Err(RewardError::NotValued(1))));
    }

    #[test]
    fn control_arithmetic() {
        let v = view(&[("A", "pass"), ("A", "carry")]);
        let epv = [EpvValue::Control(0.05), EpvValue::Control(0.08)];
        let r = delta_epv_control(&v, &epv, 0).unwrap();
        assert!((r.delta_epv - 0.03).abs() < 1e-15);
        assert_eq!(delta_epv_control(&v, &epv, 1).unwrap().delta_epv, 0.0);

        let t = view(&[("A", "pass"), ("B", "carry")]);
        assert!((delta_epv_control(&t, &epv, 0).unwrap().delta_epv + 0.13).abs() < 1e-15);
    }

    #[test]
    fn goal_uses_kickoff() {
        let mut v = view(&[("A", "shot"), ("B", "pass"), ("B", "pass")]);
        v.events[0].event.is_goal = true;
        v.events[1].event.set_piece = Some(SetPiece::Kickoff);
        let epv = [EpvValue::Control(0.3), EpvValue::Control(0.01), EpvValue::Control(0.02)];
        let r = delta_epv_control(&v, &epv, 0).unwrap();
        assert_eq!(r.scenario, Scenario::Goal);
        assert!((r.delta_epv - 0.69).abs() < 1e-12);
        assert!(!r.kickoff_missing);

        let mut end = view(&[("A", "shot")]);
        end.events[0].event.is_goal = true;
        let r = delta_epv_control(&end, &epv[..1], 0).unwrap();
        assert!(r.kickoff_missing);
        assert!((r.delta_epv - 0.7).abs() < 1e-12);
    }

    #[test]
    fn duel_arithmetic() {
        let v = view(&[("A", "ground_duel"), ("A", "pass")]);
        let epv = [EpvValue::Duel { avg: 0.04, ind: 0.09 }, EpvValue::Control(0.1)];
        assert!((delta_epv_duel(&v, &epv, 0).unwrap().delta_epv - 0.06).abs() < 1e-15);

        let chain = view(&[("A", "aerial_duel"), ("B", "aerial_duel"), ("B", "pass")]);
        let epv = [EpvValue::Duel { avg: 0.04, ind: 0.5 }, EpvValue::Duel { avg: 0.02, ind: 0.03 }, EpvValue::Control(0.1)];
        let r = delta_epv_duel(&chain, &epv, 0).unwrap();
        assert_eq!(r.scenario, Scenario::IntoDuel);
        assert!((r.delta_epv - (-0.03 - 0.04)).abs() < 1e-15);

        let last = view(&[("A", "aerial_duel")]);
        assert_eq!(delta_epv_duel(&last, &epv[..1], 0).unwrap().delta_epv, 0.0);
    }

    #[test]
    fn pass_into_duel_uses_individual_value() {
        let v = view(&[("A", "pass"), ("A", "aerial_duel"), ("A", "pass")]);
        let epv = [EpvValue::Control(0.05), EpvValue::Duel { avg: 0.01, ind: 0.07 }, EpvValue::Control(0.1)];
        assert!((delta_epv_control(&v, &epv, 0).unwrap().delta_epv - 0.02).abs() < 1e-15);
    }

    #[test]
    fn set_piece_path_ignores_history() {
        let mut v = view(&[("A", "pass"), ("A", "corner_kick")]);
        v.events[1].event.set_piece = Some(SetPiece::Corner);
        let corner = extract_epv_features(&v, 1, EpvPath::ControlSetPiece, None).unwrap();
        assert_eq!(corner.len(), CONTROL_SET_PIECE_FEATURES.len());
        v.events[0].event.x = 10.0;
        assert_eq!(extract_epv_features(&v, 1, EpvPath::ControlSetPiece, None).unwrap(), corner);
        assert_eq!(extract_epv_features(&v, 0, EpvPath::ControlOpen, None).unwrap().len(), CONTROL_OPEN_FEATURES.len());
        assert!(matches!(extract_epv_features(&v, 0, EpvPath::DuelAvg(DuelKind::Aerial), None), Err(RewardError::NotValued(0))));
    }

    #[test]
    fn skill_features_are_only_in_individual_models() {
        for name in ["win_probability", "own_rating", "opp_rating"] {
            assert!(!DUEL_AVG_FEATURES.contains(&name));
            assert!(DUEL_IND_FEATURES.contains(&name));
        }
        assert!(DUEL_AVG_FEATURES.contains(&"context_p_win"));
    }

    #[test]
    fn empty_duel_models_error() {
        let row = TrainingRow::new(vec![0.0; CONTROL_OPEN_FEATURES.len()], 0.1, "p");
        let err = train_epv(vec![(EpvPath::ControlOpen, row)], &GbtConfig::default()).unwrap_err();
        assert!(matches!(err, RewardError::EmptyModel("control_set_piece")));
    }
}
