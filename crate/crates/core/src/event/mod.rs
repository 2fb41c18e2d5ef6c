//! Event data model, ingestion, possession segmentation and effective time.

mod duel;
mod ingest;
mod possession;

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use duel::{duel_winner, DuelWinnerError};
pub use ingest::{ingest_events, ingest_events_with, write_jsonl, Format, IngestError, IngestOptions, MatchEvents};
pub use possession::{
    effective_times, filter_noncore, segment_possessions, AnnotatedEvent, PossessionView, TimeError,
    DEFAULT_STOPPAGE_GAP_S,
};

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

id_type!(MatchId);
id_type!(TeamId);
id_type!(PlayerId);
id_type!(SeasonId);
id_type!(CompetitionId);

/// Pitch geometry in meters. Coordinates are expressed in the acting team's
/// frame: origin at the corner of its own goal line, attacking towards `x = 105`.
pub mod pitch {
    pub const LENGTH: f64 = 105.0;
    pub const WIDTH: f64 = 68.0;
    pub const GOAL_WIDTH: f64 = 7.32;
    pub const GOAL_Y_LOW: f64 = (WIDTH - GOAL_WIDTH) / 2.0;
    pub const GOAL_Y_HIGH: f64 = (WIDTH + GOAL_WIDTH) / 2.0;
    pub const CENTER: (f64, f64) = (LENGTH / 2.0, WIDTH / 2.0);
    pub const PENALTY_SPOT: (f64, f64) = (LENGTH - 11.0, WIDTH / 2.0);

    /// Maps a point into the opposing team's frame.
    pub fn flip(x: f64, y: f64) -> (f64, f64) {
        (LENGTH - x, WIDTH - y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ControlKind {
    Pass,
    Shot,
    Dribble,
    Carry,
    FreeKick,
    GoalKick,
    Penalty,
    CornerKick,
    ThrowIn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DuelKind {
    Aerial,
    Ground,
}

impl DuelKind {
    pub const ALL: [DuelKind; 2] = [DuelKind::Aerial, DuelKind::Ground];

    pub fn as_str(self) -> &'static str {
        match self {
            DuelKind::Aerial => "aerial",
            DuelKind::Ground => "ground",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "aerial" => Some(DuelKind::Aerial),
            "ground" => Some(DuelKind::Ground),
            _ => None,
        }
    }
}

impl fmt::Display for DuelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OtherKind {
    Interception,
    ClearanceTouch,
    Save,
    Block,
    Other,
}

/// Dribbles are control actions; only aerial and ground contests are duels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ActionKind {
    Control(ControlKind),
    SymmetricalDuel(DuelKind),
    Other(OtherKind),
}

impl ActionKind {
    pub const WIRE_NAMES: [&'static str; 16] = [
        "pass",
        "shot",
        "dribble",
        "carry",
        "free_kick",
        "goal_kick",
        "penalty",
        "corner_kick",
        "throw_in",
        "aerial_duel",
        "ground_duel",
        "interception",
        "clearance_touch",
        "save",
        "block",
        "other",
    ];

    /// Total: unrecognized names become `Other(Other)`.
    pub fn parse(s: &str) -> Self {
        use ActionKind::*;
        match s.trim() {
            "pass" => Control(ControlKind::Pass),
            "shot" => Control(ControlKind::Shot),
            "dribble" => Control(ControlKind::Dribble),
            "carry" => Control(ControlKind::Carry),
            "free_kick" => Control(ControlKind::FreeKick),
            "goal_kick" => Control(ControlKind::GoalKick),
            "penalty" => Control(ControlKind::Penalty),
            "corner_kick" => Control(ControlKind::CornerKick),
            "throw_in" => Control(ControlKind::ThrowIn),
            "aerial_duel" => SymmetricalDuel(DuelKind::Aerial),
            "ground_duel" => SymmetricalDuel(DuelKind::Ground),
            "interception" => Other(OtherKind::Interception),
            "clearance_touch" => Other(OtherKind::ClearanceTouch),
            "save" => Other(OtherKind::Save),
            "block" => Other(OtherKind::Block),
            _ => Other(OtherKind::Other),
        }
    }

    pub fn as_str(self) -> &'static str {
        use ActionKind::*;
        match self {
            Control(ControlKind::Pass) => "pass",
            Control(ControlKind::Shot) => "shot",
            Control(ControlKind::Dribble) => "dribble",
            Control(ControlKind::Carry) => "carry",
            Control(ControlKind::FreeKick) => "free_kick",
            Control(ControlKind::GoalKick) => "goal_kick",
            Control(ControlKind::Penalty) => "penalty",
            Control(ControlKind::CornerKick) => "corner_kick",
            Control(ControlKind::ThrowIn) => "throw_in",
            SymmetricalDuel(DuelKind::Aerial) => "aerial_duel",
            SymmetricalDuel(DuelKind::Ground) => "ground_duel",
            Other(OtherKind::Interception) => "interception",
            Other(OtherKind::ClearanceTouch) => "clearance_touch",
            Other(OtherKind::Save) => "save",
            Other(OtherKind::Block) => "block",
            Other(OtherKind::Other) => "other",
        }
    }

    /// Set-piece type implied by the action itself, if any.
    pub fn implied_set_piece(self) -> Option<SetPiece> {
        match self {
            ActionKind::Control(ControlKind::FreeKick) => Some(SetPiece::FreeKick),
            ActionKind::Control(ControlKind::GoalKick) => Some(SetPiece::GoalKick),
            ActionKind::Control(ControlKind::Penalty) => Some(SetPiece::Penalty),
            ActionKind::Control(ControlKind::CornerKick) => Some(SetPiece::Corner),
            ActionKind::Control(ControlKind::ThrowIn) => Some(SetPiece::ThrowIn),
            _ => None,
        }
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for ActionKind {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ActionKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(ActionKind::parse(&s))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BodyPart {
    Foot,
    Head,
    Other,
}

impl BodyPart {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "foot" => Some(BodyPart::Foot),
            "head" => Some(BodyPart::Head),
            "other" => Some(BodyPart::Other),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Complete,
    Incomplete,
}

impl Outcome {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "complete" => Some(Outcome::Complete),
            "incomplete" => Some(Outcome::Incomplete),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetPiece {
    Penalty,
    FreeKick,
    Corner,
    GoalKick,
    ThrowIn,
    Kickoff,
}

impl SetPiece {
    pub const ALL: [SetPiece; 6] = [
        SetPiece::Penalty,
        SetPiece::FreeKick,
        SetPiece::Corner,
        SetPiece::GoalKick,
        SetPiece::ThrowIn,
        SetPiece::Kickoff,
    ];

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "penalty" => Some(SetPiece::Penalty),
            "free_kick" => Some(SetPiece::FreeKick),
            "corner" => Some(SetPiece::Corner),
            "goal_kick" => Some(SetPiece::GoalKick),
            "throw_in" => Some(SetPiece::ThrowIn),
            "kickoff" => Some(SetPiece::Kickoff),
            _ => None,
        }
    }
}

/// Six position categories used to pair like-for-like duels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PositionGroup {
    #[serde(rename = "central_def")]
    CentralDef,
    #[serde(rename = "lateral", alias = "full_back")]
    FullBack,
    #[serde(rename = "midfielder")]
    Midfielder,
    #[serde(rename = "central_forward")]
    CentralForward,
    #[serde(rename = "wing")]
    Wing,
    #[serde(rename = "goalkeeper")]
    Goalkeeper,
}

impl PositionGroup {
    pub const ALL: [PositionGroup; 6] = [
        PositionGroup::CentralDef,
        PositionGroup::FullBack,
        PositionGroup::Midfielder,
        PositionGroup::CentralForward,
        PositionGroup::Wing,
        PositionGroup::Goalkeeper,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PositionGroup::CentralDef => "central_def",
            PositionGroup::FullBack => "lateral",
            PositionGroup::Midfielder => "midfielder",
            PositionGroup::CentralForward => "central_forward",
            PositionGroup::Wing => "wing",
            PositionGroup::Goalkeeper => "goalkeeper",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "central_def" => Some(PositionGroup::CentralDef),
            "lateral" | "full_back" => Some(PositionGroup::FullBack),
            "midfielder" => Some(PositionGroup::Midfielder),
            "central_forward" => Some(PositionGroup::CentralForward),
            "wing" => Some(PositionGroup::Wing),
            "goalkeeper" => Some(PositionGroup::Goalkeeper),
            _ => None,
        }
    }
}

impl fmt::Display for PositionGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One timestamped on-pitch action.
///
/// A duel is stored once, from the perspective of `player_id`; the other
/// participant is `opponent_id` and belongs to the other team of the match.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub match_id: MatchId,
    pub event_index: u32,
    pub wall_clock_s: f64,
    pub half: u8,
    pub team_id: TeamId,
    pub player_id: PlayerId,
    pub action: ActionKind,
    pub x: f64,
    pub y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_y: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body_part: Option<BodyPart>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<Outcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub set_piece: Option<SetPiece>,
    #[serde(default)]
    pub is_goal: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub foul_suffered_by: Option<PlayerId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_touch_by: Option<PlayerId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub opponent_id: Option<PlayerId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub opponents_nearby: Option<u32>,
}

impl Event {
    /// Minimal open-play event; the remaining fields default to absent.
    pub fn new(
        match_id: impl Into<MatchId>,
        event_index: u32,
        wall_clock_s: f64,
        half: u8,
        team_id: impl Into<TeamId>,
        player_id: impl Into<PlayerId>,
        action: ActionKind,
        x: f64,
        y: f64,
    ) -> Self {
        Event {
            match_id: match_id.into(),
            event_index,
            wall_clock_s,
            half,
            team_id: team_id.into(),
            player_id: player_id.into(),
            action,
            x,
            y,
            end_x: None,
            end_y: None,
            body_part: None,
            outcome: None,
            set_piece: None,
            is_goal: false,
            foul_suffered_by: None,
            first_touch_by: None,
            opponent_id: None,
            opponents_nearby: None,
        }
    }

    pub fn is_control(&self) -> bool {
        matches!(self.action, ActionKind::Control(_))
    }

    /// Shots include penalty kicks.
    pub fn is_shot(&self) -> bool {
        matches!(
            self.action,
            ActionKind::Control(ControlKind::Shot) | ActionKind::Control(ControlKind::Penalty)
        )
    }

    pub fn is_duel(&self) -> bool {
        matches!(self.action, ActionKind::SymmetricalDuel(_))
    }

    pub fn duel_kind(&self) -> Option<DuelKind> {
        match self.action {
            ActionKind::SymmetricalDuel(k) => Some(k),
            _ => None,
        }
    }

    pub fn control_kind(&self) -> Option<ControlKind> {
        match self.action {
            ActionKind::Control(k) => Some(k),
            _ => None,
        }
    }

    pub fn is_other(&self) -> bool {
        matches!(self.action, ActionKind::Other(_))
    }

    /// Restart after a dead ball.
    pub fn is_set_piece(&self) -> bool {
        self.set_piece.is_some()
    }

    /// Target point, or the origin for actions without one.
    pub fn end_point(&self) -> (f64, f64) {
        (self.end_x.unwrap_or(self.x), self.end_y.unwrap_or(self.y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn action_names_roundtrip() {
        for name in ActionKind::WIRE_NAMES {
            assert_eq!(ActionKind::parse(name).as_str(), name);
        }
        assert_eq!(ActionKind::parse("bicycle_kick"), ActionKind::Other(OtherKind::Other));
    }

    #[test]
    fn dribble_is_control_not_duel() {
        let k = ActionKind::parse("dribble");
        assert_eq!(k, ActionKind::Control(ControlKind::Dribble));
        assert!(!matches!(k, ActionKind::SymmetricalDuel(_)));
    }

    #[test]
    fn six_position_groups() {
        assert_eq!(PositionGroup::ALL.len(), 6);
        for g in PositionGroup::ALL {
            assert_eq!(PositionGroup::parse(g.as_str()), Some(g));
        }
        assert_eq!(PositionGroup::parse("full_back"), Some(PositionGroup::FullBack));
    }

    #[test]
    fn penalty_counts_as_shot() {
        let e = Event::new("m", 0, 0.0, 1, "A", "p", ActionKind::parse("penalty"), 94.0, 34.0);
        assert!(e.is_shot() && e.is_control());
    }

    #[test]
    fn goal_mouth_geometry() {
        assert!((pitch::GOAL_Y_HIGH - pitch::GOAL_Y_LOW - 7.32).abs() < 1e-12);
        assert!((pitch::GOAL_Y_LOW - 30.34).abs() < 1e-12);
    }
}
