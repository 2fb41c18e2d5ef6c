//! Expected-goals models: one for set-piece shots, one for open play.
//!
//! Features describe only the shot and the action before it. Team, score,
//! competition and player identity never enter a feature vector.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::{pitch, ActionKind, BodyPart, ControlKind, PlayerId, PossessionView, SetPiece};
use crate::learn::{normalize_mean_weight, per_player_weights, train_gbt, GbtConfig, LearnError, Model, Objective, TrainingRow};

#[derive(Debug, Error)]
pub enum XgError {
    #[error("position {0} is not a shot")]
    NotAShot(usize),
    #[error("{model} xG model: {source}")]
    Training { model: &'static str, source: LearnError },
    #[error("{0} xG model needs both goals and misses")]
    SingleClass(&'static str),
    #[error("forbidden feature `{0}` in xG registry")]
    Forbidden(String),
}

/// Words that mark a skill- or context-leaking feature.
pub const FORBIDDEN_TOKENS: &[&str] = &["team", "score", "competition", "league", "player", "rating"];

/// Fails on the first feature name containing a forbidden token.
pub fn audit_feature_names<S: AsRef<str>>(names: &[S]) -> Result<(), String> {
    for n in names {
        let n = n.as_ref();
        if n.split('_').any(|tok| FORBIDDEN_TOKENS.contains(&tok)) {
            return Err(n.to_string());
        }
    }
    Ok(())
}

pub const SET_PIECE_FEATURES: &[&str] =
    &["x", "y", "distance_m", "angle_rad", "sp_penalty", "sp_free_kick", "sp_corner", "sp_other", "body_head"];

pub const OPEN_PLAY_FEATURES: &[&str] = &[
    "x",
    "y",
    "distance_m",
    "angle_rad",
    "body_head",
    "body_other",
    "prev_pass",
    "prev_carry",
    "prev_dribble",
    "prev_duel",
    "prev_set_piece",
    "prev_other",
    "prev_dx",
    "prev_dy",
    "time_since_prev_s",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShotFeatures {
    pub x: f64,
    pub y: f64,
    pub distance_m: f64,
    pub angle_rad: f64,
    pub set_piece: Option<SetPiece>,
    pub body_part: Option<BodyPart>,
    pub prev_action: Option<ActionKind>,
    pub prev_dx: f64,
    pub prev_dy: f64,
    pub time_since_prev_s: f64,
}

pub fn distance_to_goal(x: f64, y: f64) -> f64 {
    (pitch::LENGTH - x).hypot(pitch::CENTER.1 - y)
}

/// Angle subtended by the goal mouth, in [0, π].
pub fn goal_angle(x: f64, y: f64) -> f64 {
    let (ax, ay) = (pitch::LENGTH - x, pitch::GOAL_Y_LOW - y);
    let (bx, by) = (pitch::LENGTH - x, pitch::GOAL_Y_HIGH - y);
    let cross = ax * by - ay * bx;
    let dot = ax * bx + ay * by;
    cross.atan2(dot).abs()
}

pub fn extract_shot_features(view: &PossessionView, i: usize) -> Result<ShotFeatures, XgError> {
    let e = view.event(i);
    if !e.is_shot() {
        return Err(XgError::NotAShot(i));
    }
    let mut f = ShotFeatures {
        x: e.x,
        y: e.y,
        distance_m: distance_to_goal(e.x, e.y),
        angle_rad: goal_angle(e.x, e.y),
        set_piece: e.set_piece,
        body_part: e.body_part,
        prev_action: None,
        prev_dx: 0.0,
        prev_dy: 0.0,
        time_since_prev_s: 0.0,
    };
    if f.set_piece.is_none() {
        if let Some(p) = view.prev_in_half(i) {
            let prev = view.event(p);
            let (px, py) = if prev.team_id == e.team_id { (prev.x, prev.y) } else { pitch::flip(prev.x, prev.y) };
            f.prev_action = Some(prev.action);
            f.prev_dx = e.x - px;
            f.prev_dy = e.y - py;
            f.time_since_prev_s = view.time(i) - view.time(p);
        }
    }
    Ok(f)
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

impl ShotFeatures {
    pub fn is_set_piece(&self) -> bool {
        self.set_piece.is_some()
    }

    pub fn set_piece_vector(&self) -> Vec<f64> {
        let sp = self.set_piece;
        vec![
            self.x,
            self.y,
            self.distance_m,
            self.angle_rad,
            flag(sp == Some(SetPiece::Penalty)),
            flag(sp == Some(SetPiece::FreeKick)),
            flag(sp == Some(SetPiece::Corner)),
            flag(!matches!(sp, Some(SetPiece::Penalty | SetPiece::FreeKick | SetPiece::Corner))),
            flag(self.body_part == Some(BodyPart::Head)),
        ]
    }

    pub fn open_play_vector(&self) -> Vec<f64> {
        let prev = self.prev_action;
        let prev_ctrl = |k: ControlKind| flag(prev == Some(ActionKind::Control(k)));
        let prev_sp = matches!(
            prev,
            Some(ActionKind::Control(
                ControlKind::FreeKick | ControlKind::CornerKick | ControlKind::ThrowIn | ControlKind::GoalKick
            ))
        );
        let prev_other = matches!(
            prev,
            Some(ActionKind::Other(_)) | Some(ActionKind::Control(ControlKind::Shot | ControlKind::Penalty))
        ) || prev.is_none();
        vec![
            self.x,
            self.y,
            self.distance_m,
            self.angle_rad,
            flag(self.body_part == Some(BodyPart::Head)),
            flag(self.body_part == Some(BodyPart::Other)),
            prev_ctrl(ControlKind::Pass),
            prev_ctrl(ControlKind::Carry),
            prev_ctrl(ControlKind::Dribble),
            flag(matches!(prev, Some(ActionKind::SymmetricalDuel(_)))),
            flag(prev_sp),
            flag(prev_other),
            self.prev_dx,
            self.prev_dy,
            self.time_since_prev_s,
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShotSample {
    pub features: ShotFeatures,
    pub goal: bool,
    pub player_id: PlayerId,
}

/// Every shot in the views with its outcome.
pub fn collect_shots<'a>(views: impl IntoIterator<Item = &'a PossessionView>) -> Vec<ShotSample> {
    let mut out = Vec::new();
    for v in views {
        for i in 0..v.len() {
            if let Ok(features) = extract_shot_features(v, i) {
                let e = v.event(i);
                out.push(ShotSample { features, goal: e.is_goal, player_id: e.player_id.clone() });
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct XgModelPair {
    pub open_play: Model<f64>,
    pub set_piece: Model<f64>,
}

fn train_one(
    name: &'static str,
    samples: &[&ShotSample],
    vector: fn(&ShotFeatures) -> Vec<f64>,
    names: &[&str],
    cfg: &GbtConfig<f64>,
    weighted: bool,
) -> Result<Model<f64>, XgError> {
    let goals = samples.iter().filter(|s| s.goal).count();
    if samples.is_empty() {
        return Err(XgError::Training { model: name, source: LearnError::Empty });
    }
    if goals == 0 || goals == samples.len() {
        return Err(XgError::SingleClass(name));
    }
    let mut rows: Vec<TrainingRow<f64>> = samples
        .iter()
        .map(|s| TrainingRow::new(vector(&s.features), flag(s.goal), s.player_id.clone()))
        .collect();
    if weighted {
        per_player_weights(&mut rows);
        normalize_mean_weight(&mut rows);
    }
    let model = train_gbt(&rows, Objective::WeightedLogloss, cfg).map_err(|source| XgError::Training { model: name, source })?;
    Ok(model.with_feature_names(names.iter().map(|s| s.to_string()).collect()))
}

pub fn train_xg(samples: &[ShotSample], cfg: &GbtConfig<f64>) -> Result<XgModelPair, XgError> {
    train_xg_with(samples, cfg, true)
}

/// `weighted = false` trains with unit weights, for A/B comparisons.
pub fn train_xg_with(samples: &[ShotSample], cfg: &GbtConfig<f64>, weighted: bool) -> Result<XgModelPair, XgError> {
    for names in [SET_PIECE_FEATURES, OPEN_PLAY_FEATURES] {
        audit_feature_names(names).map_err(XgError::Forbidden)?;
    }
    let (sp, op): (Vec<&ShotSample>, Vec<&ShotSample>) = samples.iter().partition(|s| s.features.is_set_piece());
    Ok(XgModelPair {
        open_play: train_one("open-play", &op, ShotFeatures::open_play_vector, OPEN_PLAY_FEATURES, cfg, weighted)?,
        set_piece: train_one("set-piece", &sp, ShotFeatures::set_piece_vector, SET_PIECE_FEATURES, cfg, weighted)?,
    })
}

impl XgModelPair {
    pub fn predict(&self, f: &ShotFeatures) -> f64 {
        let p = if f.is_set_piece() {
            self.set_piece.predict(&f.set_piece_vector())
        } else {
            self.open_play.predict(&f.open_play_vector())
        };
        p.expect("xG feature dimension fixed by registry").clamp(1e-6, 1.0 - 1e-6)
    }
}

pub fn xg_of(pair: &XgModelPair, view: &PossessionView, i: usize) -> Result<f64, XgError> {
    Ok(pair.predict(&extract_shot_features(view, i)?))
}

/// xG per view position; `None` for non-shots.
pub fn assign_xg(pair: &XgModelPair, view: &PossessionView) -> Vec<Option<f64>> {
    (0..view.len()).map(|i| xg_of(pair, view, i).ok()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{Event, MatchId};
    use std::f64::consts::PI;

    fn view_of(events: Vec<Event>) -> PossessionView {
        PossessionView::build(MatchId::new("m"), events, 15.0).unwrap()
    }

    #[test]
    fn penalty_geometry() {
        let mut pen = Event::new("m", 0, 0.0, 1, "A", "p", ActionKind::parse("penalty"), 94.0, 34.0);
        pen.set_piece = Some(SetPiece::Penalty);
        let f = extract_shot_features(&view_of(vec![pen]), 0).unwrap();
        assert!((f.distance_m - 11.0).abs() < 1e-12);
        assert_eq!(f.set_piece, Some(SetPiece::Penalty));
        assert!(f.prev_action.is_none());
    }

    #[test]
    fn goal_line_angle_is_pi() {
        assert!((goal_angle(105.0, 34.0) - PI).abs() < 1e-12);
        assert!(goal_angle(52.5, 34.0) > 0.0 && goal_angle(52.5, 34.0) < 0.2);
        assert!(goal_angle(105.0, 0.0).abs() < 1e-12);
    }

    #[test]
    fn header_after_cross() {
        let cross = Event::new("m", 0, 0.0, 1, "A", "a", ActionKind::parse("pass"), 95.0, 5.0);
        let mut head = Event::new("m", 1, 2.0, 1, "A", "b", ActionKind::parse("shot"), 99.0, 33.0);
        head.body_part = Some(BodyPart::Head);
        let view = view_of(vec![cross, head]);
        let f = extract_shot_features(&view, 1).unwrap();
        assert_eq!(f.body_part, Some(BodyPart::Head));
        assert_eq!(f.prev_action, Some(ActionKind::parse("pass")));
        assert_eq!((f.prev_dx, f.prev_dy, f.time_since_prev_s), (4.0, 28.0, 2.0));
        assert!(matches!(extract_shot_features(&view, 0), Err(XgError::NotAShot(0))));
    }

    #[test]
    fn opponent_previous_event_is_flipped() {
        let clear = Event::new("m", 0, 0.0, 1, "B", "b", ActionKind::parse("clearance_touch"), 10.0, 30.0);
        let shot = Event::new("m", 1, 1.0, 1, "A", "a", ActionKind::parse("shot"), 90.0, 40.0);
        let f = extract_shot_features(&view_of(vec![clear, shot]), 1).unwrap();
        assert_eq!((f.prev_dx, f.prev_dy), (-5.0, 2.0));
    }

    #[test]
    fn registries_are_skill_free() {
        assert!(audit_feature_names(OPEN_PLAY_FEATURES).is_ok());
        assert!(audit_feature_names(SET_PIECE_FEATURES).is_ok());
        assert_eq!(audit_feature_names(&["x", "team_strength"]), Err("team_strength".to_string()));
        assert_eq!(OPEN_PLAY_FEATURES.len(), ShotFeatures {
            x: 0.0, y: 0.0, distance_m: 0.0, angle_rad: 0.0, set_piece: None, body_part: None,
            prev_action: None, prev_dx: 0.0, prev_dy: 0.0, time_since_prev_s: 0.0,
        }.open_play_vector().len());
    }

    #[test]
    fn train_errors() {
        assert!(matches!(train_xg(&[], &GbtConfig::default()), Err(XgError::Training { .. })));
        let v = view_of(vec![Event::new("m", 0, 0.0, 1, "A", "a", ActionKind::parse("shot"), 90.0, 34.0)]);
        let one = collect_shots([&v]);
        assert!(matches!(train_xg(&one, &GbtConfig::default()), Err(XgError::SingleClass("open-play"))));
    }
}
