//! Season aggregates: effective minutes, PCR, ranking tables and the
//! long-pass duel report.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::duels::DuelRecord;
use crate::event::{CompetitionId, ControlKind, DuelKind, PlayerId, PossessionView, SeasonId, TeamId};
use crate::reward::{duel_terms, DuelSkill, EpvValue, RewardError, RewardRecord};
use crate::roster::{LineupRecord, MatchRecord};

#[derive(Debug, Error)]
pub enum SeasonError {
    #[error("effective minutes must be positive, got {0}")]
    NonPositiveMinutes(f64),
    #[error(transparent)]
    Reward(#[from] RewardError),
}

/// Rate per 60 effective minutes.
pub fn pcr(sum_delta: f64, minutes: f64) -> Result<f64, SeasonError> {
    if !(minutes > 0.0) {
        return Err(SeasonError::NonPositiveMinutes(minutes));
    }
    Ok(60.0 * sum_delta / minutes)
}

/// Passes, carries and dribbles in open play.
pub fn counts_for_pcr(r: &RewardRecord) -> bool {
    use crate::event::ActionKind::Control;
    matches!(r.action, Control(ControlKind::Pass | ControlKind::Carry | ControlKind::Dribble))
        && !r.is_set_piece
}

/// Effective seconds elapsed at wall-clock `wall` in `half`: the clock of the
/// last event at or before it.
fn effective_at(view: &PossessionView, half: u8, wall: f64) -> f64 {
    let Some(r) = view.halves().iter().find(|r| view.event(r.start).half == half) else {
        return 0.0;
    };
    let k = r.clone().rev().find(|&j| view.event(j).wall_clock_s <= wall);
    k.map_or(0.0, |j| view.time(j))
}

/// On-pitch intervals of a lineup row, per half, in wall-clock seconds.
fn intervals(l: &LineupRecord, halves: &[u8]) -> Vec<(u8, f64, f64)> {
    halves
        .iter()
        .filter(|&&h| l.on_half <= h && h <= l.off_half)
        .map(|&h| {
            let start = if l.on_half == h { l.on_s } else { f64::NEG_INFINITY };
            let end = if l.off_half == h { l.off_s } else { f64::INFINITY };
            (h, start, end)
        })
        .collect()
}

/// Effective minutes per player in one match. Without lineup rows every
/// player with an event is credited the whole match.
pub fn effective_minutes(view: &PossessionView, lineups: &[LineupRecord]) -> BTreeMap<PlayerId, f64> {
    let halves: Vec<u8> = view.halves().iter().map(|r| view.event(r.start).half).collect();
    let mut out = BTreeMap::new();
    if lineups.is_empty() {
        let total: f64 = view.half_durations().iter().map(|(_, d)| d).sum();
        for a in &view.events {
            out.insert(a.event.player_id.clone(), total / 60.0);
        }
        return out;
    }
    for l in lineups {
        let secs: f64 = intervals(l, &halves)
            .into_iter()
            .map(|(h, s, e)| (effective_at(view, h, e) - effective_at(view, h, s)).max(0.0))
            .sum();
        *out.entry(l.player_id.clone()).or_insert(0.0) += secs / 60.0;
    }
    out
}

fn on_pitch(lineup: Option<&Vec<&LineupRecord>>, half: u8, wall: f64) -> bool {
    match lineup {
        None => true,
        Some(rows) => rows.iter().any(|l| {
            let after_on = (l.on_half, l.on_s) <= (half, wall) || l.on_half < half;
            let before_off = (half, wall) < (l.off_half, l.off_s) || l.off_half > half;
            after_on && before_off
        }),
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SeasonLine {
    pub player_id: PlayerId,
    pub season_id: SeasonId,
    pub team_id: TeamId,
    pub competition_id: CompetitionId,
    pub matches: u32,
    pub effective_minutes: f64,
    pub sum_pcr_delta: f64,
    pub pcr: f64,
    pub xg: f64,
    pub goals: u32,
    pub shots: u32,
    /// Team xG while the player was on the pitch.
    pub team_xg_on_pitch: f64,
    pub aerial_duels: u32,
    pub aerial_wins: u32,
    pub ground_duels: u32,
    pub ground_wins: u32,
}

/// Everything season aggregation reads from one match.
#[derive(Clone, Copy, Debug)]
pub struct MatchInput<'a> {
    pub record: &'a MatchRecord,
    pub view: &'a PossessionView,
    pub xg: &'a [Option<f64>],
    pub rewards: &'a [RewardRecord],
    pub duels: &'a [DuelRecord],
    pub lineups: &'a [LineupRecord],
}

fn touch<'a>(acc: &'a mut BTreeMap<(SeasonId, PlayerId), Acc>, season: &SeasonId, p: &PlayerId) -> &'a mut Acc {
    acc.entry((season.clone(), p.clone())).or_insert_with(|| Acc {
        line: SeasonLine { player_id: p.clone(), season_id: season.clone(), ..Default::default() },
        ..Default::default()
    })
}

#[derive(Default)]
struct Acc {
    line: SeasonLine,
    minutes_by_team: BTreeMap<TeamId, f64>,
    minutes_by_comp: BTreeMap<CompetitionId, f64>,
}

fn argmax<K: Clone + Ord>(m: &BTreeMap<K, f64>) -> Option<K> {
    m.iter().fold(None::<(&K, f64)>, |best, (k, &v)| match best {
        Some((_, bv)) if bv >= v => best,
        _ => Some((k, v)),
    })
    .map(|(k, _)| k.clone())
}

/// Player-season lines. A player's team and competition are the ones where
/// they played the most effective minutes.
pub fn season_lines<'a>(matches: impl IntoIterator<Item = MatchInput<'a>>) -> Vec<SeasonLine> {
    let mut acc: BTreeMap<(SeasonId, PlayerId), Acc> = BTreeMap::new();
    for m in matches {
        let season = &m.record.season_id;
        let minutes = effective_minutes(m.view, m.lineups);
        let mut team_of: HashMap<&PlayerId, &TeamId> = m.lineups.iter().map(|l| (&l.player_id, &l.team_id)).collect();
        for a in &m.view.events {
            team_of.entry(&a.event.player_id).or_insert(&a.event.team_id);
        }
        let mut by_player: HashMap<&PlayerId, Vec<&LineupRecord>> = HashMap::new();
        for l in m.lineups {
            by_player.entry(&l.player_id).or_default().push(l);
        }
        for (p, &mins) in &minutes {
            let a = touch(&mut acc, season, p);
            a.line.matches += 1;
            a.line.effective_minutes += mins;
            if let Some(t) = team_of.get(p) {
                *a.minutes_by_team.entry((*t).clone()).or_insert(0.0) += mins;
            }
            *a.minutes_by_comp.entry(m.record.competition_id.clone()).or_insert(0.0) += mins;
        }
        for r in m.rewards.iter().filter(|r| counts_for_pcr(r)) {
            touch(&mut acc, season, &r.player_id).line.sum_pcr_delta += r.delta_epv;
        }
        for (i, x) in m.xg.iter().enumerate() {
            let Some(x) = *x else { continue };
            let e = m.view.event(i);
            let a = touch(&mut acc, season, &e.player_id);
            a.line.xg += x;
            a.line.shots += 1;
            a.line.goals += u32::from(e.is_goal);
            for (p, t) in &team_of {
                if **t == e.team_id && on_pitch(by_player.get(p), e.half, e.wall_clock_s) && minutes.contains_key(*p) {
                    touch(&mut acc, season, p).line.team_xg_on_pitch += x;
                }
            }
        }
        for d in m.duels {
            let Some(w) = &d.winner else { continue };
            for p in [Some(&d.actor), d.opponent.as_ref()].into_iter().flatten() {
                let a = touch(&mut acc, season, p);
                let won = u32::from(w == p);
                match d.kind {
                    DuelKind::Aerial => {
                        a.line.aerial_duels += 1;
                        a.line.aerial_wins += won;
                    }
                    DuelKind::Ground => {
                        a.line.ground_duels += 1;
                        a.line.ground_wins += won;
                    }
                }
            }
        }
    }
    acc.into_values()
        .map(|a| {
            let mut line = a.line;
            line.team_id = argmax(&a.minutes_by_team).unwrap_or_default();
            line.competition_id = argmax(&a.minutes_by_comp).unwrap_or_default();
            line.pcr = pcr(line.sum_pcr_delta, line.effective_minutes).unwrap_or(0.0);
            line
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankingRow {
    pub rank: usize,
    pub player: PlayerId,
    pub team: TeamId,
    pub competition: CompetitionId,
    pub season: SeasonId,
    #[serde(rename = "PCR")]
    #[serde(serialize_with = "crate::roster::fixed4")]
    pub pcr: f64,
    #[serde(serialize_with = "crate::roster::fixed4")]
    pub eff_time: f64,
}

pub const RANKING_COLUMNS: &[&str] = &["rank", "player", "team", "competition", "season", "PCR", "eff_time"];

/// Lines with at least `min_minutes`, by PCR desc, then minutes desc, then
/// player id.
pub fn season_rankings(lines: &[SeasonLine], min_minutes: f64) -> Vec<RankingRow> {
    let mut kept: Vec<&SeasonLine> = lines.iter().filter(|l| l.effective_minutes >= min_minutes).collect();
    kept.sort_by(|a, b| {
        b.pcr
            .total_cmp(&a.pcr)
            .then(b.effective_minutes.total_cmp(&a.effective_minutes))
            .then(a.player_id.cmp(&b.player_id))
            .then(a.season_id.cmp(&b.season_id))
    });
    kept.into_iter()
        .enumerate()
        .map(|(i, l)| RankingRow {
            rank: i + 1,
            player: l.player_id.clone(),
            team: l.team_id.clone(),
            competition: l.competition_id.clone(),
            season: l.season_id.clone(),
            pcr: l.pcr,
            eff_time: l.effective_minutes,
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LongPassRule {
    pub min_distance: f64,
    /// Minimum gain towards the opponent goal.
    pub min_forward: f64,
}

impl Default for LongPassRule {
    fn default() -> Self {
        LongPassRule { min_distance: 40.0, min_forward: 10.0 }
    }
}

impl LongPassRule {
    pub fn accepts(&self, x: f64, y: f64, end_x: f64, end_y: f64) -> bool {
        (end_x - x).hypot(end_y - y) > self.min_distance && end_x - x > self.min_forward
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ReportMatch<'a> {
    pub view: &'a PossessionView,
    pub epv: &'a [EpvValue],
    pub skill: DuelSkill<'a>,
}

/// One long pass that ended in a duel, seen from the target's side.
#[derive(Clone, Debug, PartialEq)]
pub struct LongPassDuel {
    pub target: PlayerId,
    pub kind: DuelKind,
    pub saved: bool,
    pub apriori: f64,
    pub win_duel: f64,
    pub rating: f64,
    pub opp_rating: f64,
    pub duel_epv: f64,
    pub epv_ind_duel: f64,
}

pub fn long_pass_duels(m: &ReportMatch, passer: &PlayerId, rule: &LongPassRule) -> Result<Vec<LongPassDuel>, SeasonError> {
    let v = m.view;
    let mut out = Vec::new();
    for i in 0..v.len() {
        let e = v.event(i);
        if e.player_id != *passer || e.control_kind() != Some(ControlKind::Pass) {
            continue;
        }
        let (ex, ey) = e.end_point();
        if !rule.accepts(e.x, e.y, ex, ey) {
            continue;
        }
        let Some(j) = v.next_in_half(i) else { continue };
        let d = v.event(j);
        let Some(kind) = d.duel_kind() else { continue };
        let actor_is_target = d.team_id == e.team_id;
        let target = if actor_is_target { d.player_id.clone() } else if let Some(o) = &d.opponent_id { o.clone() } else { continue };
        let t = duel_terms(v, j, &m.skill)?;
        let EpvValue::Duel { avg, ind } = m.epv[j] else { return Err(RewardError::MissingValue(j).into()) };
        let sign = if actor_is_target { 1.0 } else { -1.0 };
        let saved = v.next_control_in_half(j).is_some_and(|k| v.event(k).team_id == e.team_id);
        out.push(if actor_is_target {
            LongPassDuel { target, kind, saved, apriori: t.p_context, win_duel: t.p_win, rating: t.own_rating, opp_rating: t.opp_rating, duel_epv: avg, epv_ind_duel: ind }
        } else {
            LongPassDuel {
                target,
                kind,
                saved,
                apriori: 1.0 - t.p_context,
                win_duel: 1.0 - t.p_win,
                rating: t.opp_rating,
                opp_rating: t.own_rating,
                duel_epv: sign * avg,
                epv_ind_duel: sign * ind,
            }
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DuelReportRow {
    pub player: PlayerId,
    pub duel: DuelKind,
    pub duels: usize,
    /// Percent of duels after which the passer's team kept the ball.
    #[serde(serialize_with = "crate::roster::fixed4")]
    pub saved: f64,
    /// Mean context-only win probability, percent.
    #[serde(serialize_with = "crate::roster::fixed4")]
    pub apriori: f64,
    /// Mean rating-aware win probability, percent.
    #[serde(serialize_with = "crate::roster::fixed4")]
    pub win_duel: f64,
    pub rating: i64,
    pub opp_rating: i64,
    #[serde(serialize_with = "crate::roster::fixed4")]
    pub duel_epv: f64,
    #[serde(serialize_with = "crate::roster::fixed4")]
    pub epv_ind_duel: f64,
}

pub const DUEL_REPORT_COLUMNS: &[&str] =
    &["player", "duel", "duels", "saved", "apriori", "win_duel", "rating", "opp_rating", "duel_epv", "epv_ind_duel"];

/// Per-target table of the passer's long passes into duels, most frequent
/// targets first.
pub fn long_pass_duel_report(matches: &[ReportMatch], passer: &PlayerId, rule: &LongPassRule) -> Result<Vec<DuelReportRow>, SeasonError> {
    let mut groups: BTreeMap<(PlayerId, DuelKind), Vec<LongPassDuel>> = BTreeMap::new();
    for m in matches {
        for d in long_pass_duels(m, passer, rule)? {
            groups.entry((d.target.clone(), d.kind)).or_default().push(d);
        }
    }
    let mut rows: Vec<DuelReportRow> = groups
        .into_iter()
        .map(|((player, duel), ds)| {
            let n = ds.len() as f64;
            let mean = |f: fn(&LongPassDuel) -> f64| ds.iter().map(f).sum::<f64>() / n;
            DuelReportRow {
                player,
                duel,
                duels: ds.len(),
                saved: 100.0 * ds.iter().filter(|d| d.saved).count() as f64 / n,
                apriori: 100.0 * mean(|d| d.apriori),
                win_duel: 100.0 * mean(|d| d.win_duel),
                rating: mean(|d| d.rating).round() as i64,
                opp_rating: mean(|d| d.opp_rating).round() as i64,
                duel_epv: mean(|d| d.duel_epv),
                epv_ind_duel: mean(|d| d.epv_ind_duel),
            }
        })
        .collect();
    rows.sort_by(|a, b| b.duels.cmp(&a.duels).then(a.player.cmp(&b.player)).then(a.duel.cmp(&b.duel)));
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{ActionKind, Event};

    #[test]
    fn pcr_arithmetic() {
        assert!((pcr(0.5, 150.0).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(pcr(0.0, 90.0).unwrap(), 0.0);
        assert_eq!(pcr(0.37, 1234.5).unwrap(), pcr(0.74, 2469.0).unwrap());
        assert!(matches!(pcr(1.0, 0.0), Err(SeasonError::NonPositiveMinutes(_))));
    }

    #[test]
    fn long_pass_thresholds() {
        let rule = LongPassRule::default();
        assert!(!rule.accepts(0.0, 0.0, 39.0, 0.0));
        assert!(rule.accepts(30.0, 34.0, 30.0 + 11.0, 34.0 + 39.5));
        assert!(!rule.accepts(30.0, 10.0, 35.0, 60.0));
    }

    fn view() -> PossessionView {
        let events = (0..10)
            .map(|i| {
                let half = if i < 5 { 1 } else { 2 };
                Event::new("m", i, f64::from(i % 5) * 10.0, half, "A", "a", ActionKind::parse("pass"), 50.0, 34.0)
            })
            .collect();
        PossessionView::build("m".into(), events, 15.0).unwrap()
    }

    fn lineup(player: &str, on: (u8, f64), off: (u8, f64)) -> LineupRecord {
        LineupRecord { match_id: "m".into(), player_id: player.into(), team_id: "A".into(), on_half: on.0, on_s: on.1, off_half: off.0, off_s: off.1 }
    }

    #[test]
    fn minutes_from_lineups() {
        let v = view();
        let rows = [lineup("s", (1, -1.0), (2, 1e9)), lineup("sub", (2, 20.0), (2, 1e9)), lineup("off", (1, -1.0), (1, 25.0))];
        let m = effective_minutes(&v, &rows);
        assert!((m[&PlayerId::new("s")] - 80.0 / 60.0).abs() < 1e-12);
        assert!((m[&PlayerId::new("sub")] - 20.0 / 60.0).abs() < 1e-12);
        assert!((m[&PlayerId::new("off")] - 20.0 / 60.0).abs() < 1e-12);
        let all = effective_minutes(&v, &[]);
        assert!((all[&PlayerId::new("a")] - 80.0 / 60.0).abs() < 1e-12);
    }

    fn line(p: &str, pcr: f64, mins: f64) -> SeasonLine {
        SeasonLine { player_id: p.into(), season_id: "2021".into(), pcr, effective_minutes: mins, ..Default::default() }
    }

    #[test]
    fn rankings_filter_and_order() {
        let lines = [line("a", 0.1, 1200.0), line("b", 0.3, 900.0), line("c", 0.2, 1500.0), line("d", 0.2, 2000.0)];
        let t = season_rankings(&lines, 1000.0);
        let order: Vec<&str> = t.iter().map(|r| r.player.as_str()).collect();
        assert_eq!(order, vec!["d", "c", "a"]);
        assert!(season_rankings(&lines, 1e6).is_empty());
    }
}
