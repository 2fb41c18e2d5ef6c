use std::ops::Range;

use thiserror::Error;

use super::{Event, MatchId, TeamId};

pub const DEFAULT_STOPPAGE_GAP_S: f64 = 15.0;

#[derive(Debug, Error, PartialEq)]
pub enum TimeError {
    #[error("match {match_id}: wall clock goes backwards by {delta_s}s at event {event_index}")]
    NegativeDelta { match_id: MatchId, event_index: u32, delta_s: f64 },
    #[error("match {match_id}: half {half} appears after half {previous} at event {event_index}")]
    HalfOrder { match_id: MatchId, event_index: u32, half: u8, previous: u8 },
}

/// Possession index per event.
///
/// The index advances only when a control action is made by a team other than
/// the current owner. Duels and other touches keep the running index.
pub fn segment_possessions(events: &[Event]) -> Vec<u32> {
    let mut owner: Option<&TeamId> = None;
    let mut index = 0u32;
    events
        .iter()
        .map(|e| {
            if e.is_control() {
                match owner {
                    None => owner = Some(&e.team_id),
                    Some(team) if team != &e.team_id => {
                        index += 1;
                        owner = Some(&e.team_id);
                    }
                    Some(_) => {}
                }
            }
            index
        })
        .collect()
}

/// Ball-in-play clock per event, restarting at zero each half.
///
/// Gaps between consecutive events are capped at `stoppage_gap_s`; the gap
/// leading into a set-piece restart contributes nothing.
pub fn effective_times(events: &[Event], stoppage_gap_s: f64) -> Result<Vec<f64>, TimeError> {
    let mut out = Vec::with_capacity(events.len());
    let mut prev: Option<&Event> = None;
    let mut t = 0.0;
    for e in events {
        match prev {
            Some(p) if p.half == e.half => {
                let delta = e.wall_clock_s - p.wall_clock_s;
                if delta < 0.0 {
                    return Err(TimeError::NegativeDelta {
                        match_id: e.match_id.clone(),
                        event_index: e.event_index,
                        delta_s: delta,
                    });
                }
                if !e.is_set_piece() {
                    t += delta.min(stoppage_gap_s);
                }
            }
            Some(p) if e.half < p.half => {
                return Err(TimeError::HalfOrder {
                    match_id: e.match_id.clone(),
                    event_index: e.event_index,
                    half: e.half,
                    previous: p.half,
                });
            }
            _ => t = 0.0,
        }
        out.push(t);
        prev = Some(e);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedEvent {
    pub event: Event,
    pub possession: u32,
    pub effective_s: f64,
}

/// Events of one match with possession index and effective time attached.
#[derive(Clone, Debug, PartialEq)]
pub struct PossessionView {
    pub match_id: MatchId,
    pub events: Vec<AnnotatedEvent>,
    halves: Vec<Range<usize>>,
    half_slot: Vec<usize>,
    teams: Vec<TeamId>,
}

impl PossessionView {
    pub fn build(match_id: MatchId, events: Vec<Event>, stoppage_gap_s: f64) -> Result<Self, TimeError> {
        let possession = segment_possessions(&events);
        let times = effective_times(&events, stoppage_gap_s)?;
        let annotated = events
            .into_iter()
            .zip(possession)
            .zip(times)
            .map(|((event, possession), effective_s)| AnnotatedEvent { event, possession, effective_s })
            .collect();
        Ok(Self::from_annotated(match_id, annotated))
    }

    pub fn from_annotated(match_id: MatchId, events: Vec<AnnotatedEvent>) -> Self {
        let mut halves: Vec<Range<usize>> = Vec::new();
        let mut half_slot = Vec::with_capacity(events.len());
        let mut teams: Vec<TeamId> = Vec::new();
        for (i, a) in events.iter().enumerate() {
            match halves.last_mut() {
                Some(r) if events[r.start].event.half == a.event.half => r.end = i + 1,
                _ => halves.push(i..i + 1),
            }
            half_slot.push(halves.len() - 1);
            if !teams.contains(&a.event.team_id) {
                teams.push(a.event.team_id.clone());
            }
        }
        PossessionView { match_id, events, halves, half_slot, teams }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn event(&self, i: usize) -> &Event {
        &self.events[i].event
    }

    pub fn time(&self, i: usize) -> f64 {
        self.events[i].effective_s
    }

    pub fn possession(&self, i: usize) -> u32 {
        self.events[i].possession
    }

    /// Positions sharing the half of event `i`.
    pub fn half_range(&self, i: usize) -> Range<usize> {
        self.halves[self.half_slot[i]].clone()
    }

    pub fn halves(&self) -> &[Range<usize>] {
        &self.halves
    }

    /// Teams in order of first appearance.
    pub fn teams(&self) -> &[TeamId] {
        &self.teams
    }

    pub fn opponent_of(&self, team: &TeamId) -> Option<&TeamId> {
        self.teams.iter().find(|t| *t != team)
    }

    pub fn next_in_half(&self, i: usize) -> Option<usize> {
        let j = i + 1;
        (j < self.half_range(i).end).then_some(j)
    }

    pub fn prev_in_half(&self, i: usize) -> Option<usize> {
        (i > self.half_range(i).start).then(|| i - 1)
    }

    pub fn is_last_in_half(&self, i: usize) -> bool {
        i + 1 == self.half_range(i).end
    }

    pub fn next_control_in_half(&self, i: usize) -> Option<usize> {
        (i + 1..self.half_range(i).end).find(|&j| self.event(j).is_control())
    }

    pub fn prev_control_in_half(&self, i: usize) -> Option<usize> {
        (self.half_range(i).start..i).rev().find(|&j| self.event(j).is_control())
    }

    /// Effective seconds covered by each half: the clock of its last event.
    pub fn half_durations(&self) -> Vec<(u8, f64)> {
        self.halves
            .iter()
            .map(|r| (self.event(r.start).half, self.time(r.end - 1)))
            .collect()
    }
}

/// Drops `Other`-kind touches; neighbours are then adjacent in the result.
pub fn filter_noncore(view: &PossessionView) -> PossessionView {
    let kept = view.events.iter().filter(|a| !a.event.is_other()).cloned().collect();
    PossessionView::from_annotated(view.match_id.clone(), kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{ActionKind, SetPiece};

    fn ev(i: u32, t: f64, team: &str, action: &str) -> Event {
        Event::new("m", i, t, 1, team, format!("{team}{i}"), ActionKind::parse(action), 50.0, 34.0)
    }

    #[test]
    fn single_team_passes_one_possession() {
        let events: Vec<Event> = (0..5).map(|i| ev(i, i as f64, "A", "pass")).collect();
        assert_eq!(segment_possessions(&events), vec![0; 5]);
    }

    #[test]
    fn interception_without_control_keeps_possession() {
        let events = vec![ev(0, 0.0, "A", "pass"), ev(1, 1.0, "B", "interception"), ev(2, 2.0, "A", "pass")];
        assert_eq!(segment_possessions(&events), vec![0, 0, 0]);
    }

    #[test]
    fn save_then_corner_keeps_attacking_possession() {
        let mut corner = ev(2, 30.0, "A", "corner_kick");
        corner.set_piece = Some(SetPiece::Corner);
        let events = vec![ev(0, 0.0, "A", "shot"), ev(1, 1.0, "B", "save"), corner, ev(3, 33.0, "A", "shot")];
        let s = segment_possessions(&events);
        assert_eq!(s, vec![0, 0, 0, 0]);
        assert_eq!(events.iter().filter(|e| e.is_shot()).count(), 2);
    }

    #[test]
    fn turnover_increments_and_duel_keeps_previous() {
        let events = vec![
            ev(0, 0.0, "A", "pass"),
            ev(1, 1.0, "B", "aerial_duel"),
            ev(2, 2.0, "B", "pass"),
            ev(3, 3.0, "A", "interception"),
            ev(4, 4.0, "A", "carry"),
        ];
        assert_eq!(segment_possessions(&events), vec![0, 0, 1, 1, 2]);
    }

    #[test]
    fn effective_time_rules() {
        let events = vec![ev(0, 100.0, "A", "pass"), ev(1, 105.0, "A", "pass")];
        assert_eq!(effective_times(&events, 15.0).unwrap(), vec![0.0, 5.0]);

        let mut corner = ev(1, 190.0, "A", "corner_kick");
        corner.set_piece = Some(SetPiece::Corner);
        let events = vec![ev(0, 100.0, "A", "pass"), corner];
        assert_eq!(effective_times(&events, 15.0).unwrap(), vec![0.0, 0.0]);

        let events = vec![ev(0, 100.0, "A", "pass"), ev(1, 140.0, "A", "pass")];
        assert_eq!(effective_times(&events, 15.0).unwrap(), vec![0.0, 15.0]);
    }

    #[test]
    fn effective_time_resets_per_half_and_rejects_backwards() {
        let mut second = ev(2, 3.0, "B", "pass");
        second.half = 2;
        let events = vec![ev(0, 0.0, "A", "pass"), ev(1, 10.0, "A", "pass"), second];
        assert_eq!(effective_times(&events, 15.0).unwrap(), vec![0.0, 10.0, 0.0]);

        let events = vec![ev(0, 10.0, "A", "pass"), ev(1, 9.0, "A", "pass")];
        assert!(matches!(effective_times(&events, 15.0), Err(TimeError::NegativeDelta { event_index: 1, .. })));
    }

    #[test]
    fn filter_drops_other_and_is_idempotent() {
        let events = vec![ev(0, 0.0, "A", "pass"), ev(1, 1.0, "B", "interception"), ev(2, 2.0, "A", "shot")];
        let view = PossessionView::build("m".into(), events, 15.0).unwrap();
        let f = filter_noncore(&view);
        let kinds: Vec<&str> = f.events.iter().map(|a| a.event.action.as_str()).collect();
        assert_eq!(kinds, vec!["pass", "shot"]);
        assert_eq!(filter_noncore(&f), f);
        assert_eq!(f.next_in_half(0), Some(1));

        let all_other = vec![ev(0, 0.0, "A", "block"), ev(1, 1.0, "B", "save")];
        let view = PossessionView::build("m".into(), all_other, 15.0).unwrap();
        assert!(filter_noncore(&view).is_empty());
    }

    #[test]
    fn view_navigation() {
        let mut h2 = ev(3, 0.0, "B", "pass");
        h2.half = 2;
        let events = vec![ev(0, 0.0, "A", "pass"), ev(1, 1.0, "B", "ground_duel"), ev(2, 2.0, "A", "pass"), h2];
        let view = PossessionView::build("m".into(), events, 15.0).unwrap();
        assert_eq!(view.halves().len(), 2);
        assert!(view.is_last_in_half(2));
        assert_eq!(view.next_control_in_half(1), Some(2));
        assert_eq!(view.next_control_in_half(2), None);
        assert_eq!(view.opponent_of(&"A".into()).map(|t| t.as_str()), Some("B"));
        assert_eq!(view.half_durations(), vec![(1, 2.0), (2, 0.0)]);
    }
}
