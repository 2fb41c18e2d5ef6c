use thiserror::Error;

use super::{Event, PlayerId, TeamId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DuelWinnerError {
    #[error("event {0} is not a symmetrical duel")]
    NotADuel(u32),
    /// No foul, no first touch and no later possession: the duel is left out
    /// of rating updates.
    #[error("duel {0}: winner cannot be resolved")]
    Unresolved(u32),
    #[error("duel {0}: opponent participant unknown")]
    MissingOpponent(u32),
}

/// Winner by cascade: foul suffered, then first touch, then the side whose
/// team has the next possession.
pub fn duel_winner<'a>(
    duel: &'a Event,
    next_possession_team: Option<&TeamId>,
) -> Result<&'a PlayerId, DuelWinnerError> {
    if !duel.is_duel() {
        return Err(DuelWinnerError::NotADuel(duel.event_index));
    }
    if let Some(p) = &duel.foul_suffered_by {
        return Ok(p);
    }
    if let Some(p) = &duel.first_touch_by {
        return Ok(p);
    }
    match next_possession_team {
        None => Err(DuelWinnerError::Unresolved(duel.event_index)),
        Some(team) if team == &duel.team_id => Ok(&duel.player_id),
        Some(_) => duel.opponent_id.as_ref().ok_or(DuelWinnerError::MissingOpponent(duel.event_index)),
    }
}
