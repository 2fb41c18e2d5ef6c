//! Event-level match simulator with planted skills.

use std::io::{self, Write};
use std::path::Path;

use chrono::{Duration, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::event::{
    pitch, write_jsonl, ActionKind, BodyPart, CompetitionId, ControlKind, DuelKind, Event, MatchId, OtherKind,
    Outcome, PlayerId, PositionGroup, SeasonId, SetPiece, TeamId,
};
use crate::roster::{write_table, LineupRecord, MatchRecord, PlayerRecord};
use crate::scalar::{logit, sigmoid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthLeagueSpec {
    pub seed: u64,
    pub n_seasons: u32,
    pub divisions: u32,
    pub teams_per_division: u32,
    /// League rounds per season; absent means a double round robin.
    pub rounds_per_season: Option<u32>,
    /// Cross-division rounds per season (needs two or more divisions).
    pub cup_rounds: u32,
    pub first_season: u32,
    pub half_minutes: f64,
    pub mean_gap_s: f64,
    pub penalty_conversion: f64,
    pub penalties_per_match: f64,
    pub defender_aerial_edge: f64,
    pub defender_ground_edge: f64,
    /// Internal-scale duel-skill gap between the high and low tier.
    pub duel_tier_gap: f64,
    /// Strength gap between consecutive divisions.
    pub division_strength_gap: f64,
    pub transfer_rate: f64,
}

impl Default for SynthLeagueSpec {
    fn default() -> Self {
        SynthLeagueSpec {
            seed: 1,
            n_seasons: 1,
            divisions: 1,
            teams_per_division: 6,
            rounds_per_season: None,
            cup_rounds: 0,
            first_season: 2021,
            half_minutes: 45.0,
            mean_gap_s: 4.0,
            penalty_conversion: 0.75,
            penalties_per_match: 0.3,
            defender_aerial_edge: 0.6,
            defender_ground_edge: 0.5,
            duel_tier_gap: 1.2,
            division_strength_gap: 0.6,
            transfer_rate: 0.08,
        }
    }
}

impl SynthLeagueSpec {
    pub fn league_rounds(&self) -> u32 {
        self.rounds_per_season.unwrap_or(2 * self.teams_per_division.saturating_sub(1))
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlayerTruth {
    pub player_id: PlayerId,
    pub position: PositionGroup,
    /// 1 for the high duel-skill tier, 0 for the low one.
    pub tier: u8,
    pub aerial_mu: f64,
    pub ground_mu: f64,
    pub pass_quality: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeamTruth {
    pub team_id: TeamId,
    pub division: u32,
    pub strength: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShotTruth {
    pub match_id: MatchId,
    pub event_index: u32,
    pub p_goal: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub spec: SynthLeagueSpec,
    pub players: Vec<PlayerTruth>,
    pub teams: Vec<TeamTruth>,
    pub shots: Vec<ShotTruth>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthLeague {
    pub events: Vec<Event>,
    pub matches: Vec<MatchRecord>,
    pub players: Vec<PlayerRecord>,
    pub lineups: Vec<LineupRecord>,
    pub truth: Truth,
}

impl SynthLeague {
    pub fn events_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write_jsonl(&mut out, &self.events).expect("in-memory write");
        out
    }

    /// Writes `events.jsonl`, `matches.csv`, `players.csv`, `lineups.csv` and
    /// `truth.json`.
    pub fn write_dir(&self, dir: &Path) -> io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("events.jsonl"), self.events_jsonl())?;
        let table = |name: &str, f: &dyn Fn(&mut Vec<u8>) -> Result<(), csv::Error>| -> io::Result<()> {
            let mut buf = Vec::new();
            f(&mut buf).map_err(io::Error::other)?;
            std::fs::write(dir.join(name), buf)
        };
        table("matches.csv", &|b| write_table(b, &self.matches))?;
        table("players.csv", &|b| write_table(b, &self.players))?;
        table("lineups.csv", &|b| write_table(b, &self.lineups))?;
        let mut f = std::fs::File::create(dir.join("truth.json"))?;
        serde_json::to_writer_pretty(&mut f, &self.truth).map_err(io::Error::other)?;
        f.write_all(b"\n")
    }
}

const SQUAD: [PositionGroup; 16] = {
    use PositionGroup::*;
    [
        Goalkeeper, CentralDef, CentralDef, FullBack, FullBack, Midfielder, Midfielder, Midfielder, Wing, Wing,
        CentralForward, Goalkeeper, CentralDef, Midfielder, Wing, CentralForward,
    ]
};
const STARTERS: usize = 11;

#[derive(Clone, Debug)]
struct Player {
    id: PlayerId,
    pos: PositionGroup,
    tier: u8,
    aerial: f64,
    ground: f64,
    pass: f64,
    age: u32,
    height: f64,
    contract: f64,
}

#[derive(Clone, Debug)]
struct Team {
    id: TeamId,
    division: u32,
    strength: f64,
    squad: Vec<usize>,
}

/// Planted open-play goal probability.
pub fn true_xg(x: f64, y: f64, head: bool) -> f64 {
    let d = (pitch::LENGTH - x).hypot(pitch::CENTER.1 - y).max(1.0);
    let p = (1.6 / d).clamp(0.02, 0.6);
    if head {
        p * 0.6
    } else {
        p
    }
}

fn position_skill(pos: PositionGroup) -> (f64, f64) {
    use PositionGroup::*;
    match pos {
        CentralDef => (0.3, 0.1),
        CentralForward => (0.2, 0.0),
        FullBack => (0.0, 0.1),
        Midfielder => (0.0, 0.1),
        Wing => (-0.2, 0.0),
        Goalkeeper => (-0.3, -0.3),
    }
}

struct World {
    rng: ChaCha8Rng,
    spec: SynthLeagueSpec,
    players: Vec<Player>,
    teams: Vec<Team>,
    next_player: usize,
}

impl World {
    fn new_player(&mut self, pos: PositionGroup, age: u32) -> usize {
        self.next_player += 1;
        let tier = if pos == PositionGroup::Goalkeeper { 0 } else { u8::from(self.rng.gen_bool(0.5)) };
        let half_gap = self.spec.duel_tier_gap / 2.0;
        let tier_shift = if tier == 1 { half_gap } else { -half_gap };
        let (a, g) = position_skill(pos);
        let noise = Normal::new(0.0, 0.15).unwrap();
        let p = Player {
            id: PlayerId::new(format!("P{:04}", self.next_player)),
            pos,
            tier,
            aerial: a + tier_shift + noise.sample(&mut self.rng),
            ground: g + tier_shift + noise.sample(&mut self.rng),
            pass: Normal::new(0.0, 0.4).unwrap().sample(&mut self.rng),
            age,
            height: Normal::new(181.0_f64, 6.0).unwrap().sample(&mut self.rng).round(),
            contract: f64::from(self.rng.gen_range(0..5u32) * 12),
        };
        self.players.push(p);
        self.players.len() - 1
    }

    fn build(spec: &SynthLeagueSpec) -> Self {
        let mut w = World {
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            spec: spec.clone(),
            players: Vec::new(),
            teams: Vec::new(),
            next_player: 0,
        };
        for d in 0..spec.divisions {
            for k in 0..spec.teams_per_division {
                let noise = Normal::new(0.0, 0.15).unwrap().sample(&mut w.rng);
                let strength = -(d as f64) * spec.division_strength_gap + noise;
                let squad = SQUAD
                    .iter()
                    .map(|&pos| {
                        let age = w.rng.gen_range(18..34);
                        w.new_player(pos, age)
                    })
                    .collect();
                w.teams.push(Team {
                    id: TeamId::new(format!("T{}{:02}", d + 1, k + 1)),
                    division: d,
                    strength,
                    squad,
                });
            }
        }
        w
    }

    /// End-of-season churn: ageing, form drift, retirements and swaps.
    fn evolve(&mut self) {
        let drift = Normal::new(0.0, 0.1).unwrap();
        for t in 0..self.teams.len() {
            for s in 0..self.teams[t].squad.len() {
                let p = self.teams[t].squad[s];
                let retire = {
                    let pl = &self.players[p];
                    let z = -4.0 + 0.45 * (pl.age as f64 - 31.0) + if s >= STARTERS { 1.0 } else { 0.0 };
                    self.rng.gen::<f64>() < sigmoid(z)
                };
                if retire {
                    let pos = self.players[p].pos;
                    let age = self.rng.gen_range(18..21);
                    let np = self.new_player(pos, age);
                    self.teams[t].squad[s] = np;
                } else {
                    let pl = &mut self.players[p];
                    pl.age += 1;
                    pl.pass += drift.sample(&mut self.rng);
                    pl.contract = if pl.contract >= 12.0 { pl.contract - 12.0 } else { f64::from(self.rng.gen_range(1..5u32) * 12) };
                }
            }
        }
        let n = self.teams.len();
        if n < 2 {
            return;
        }
        for t in 0..n {
            for s in 0..SQUAD.len() {
                if self.rng.gen::<f64>() < self.spec.transfer_rate {
                    let other = (t + self.rng.gen_range(1..n)) % n;
                    let a = self.teams[t].squad[s];
                    self.teams[t].squad[s] = self.teams[other].squad[s];
                    self.teams[other].squad[s] = a;
                }
            }
        }
        for t in &mut self.teams {
            t.strength += drift.sample(&mut self.rng) * 0.5;
        }
    }
}

struct MatchSim<'w> {
    w: &'w mut World,
    match_id: MatchId,
    side_team: [usize; 2],
    on_pitch: [Vec<usize>; 2],
    events: Vec<Event>,
    shot_truth: Vec<ShotTruth>,
    goals: [u32; 2],
    half: u8,
    t: f64,
    owner: usize,
    carrier: usize,
    x: f64,
    y: f64,
    /// Set piece of the pending restart, if any.
    restart: Option<SetPiece>,
    penalty_times: Vec<f64>,
    gap: Exp<f64>,
}

#[derive(Clone, Copy, PartialEq)]
enum After {
    Continue,
    Goal,
}

impl<'w> MatchSim<'w> {
    fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.w.rng
    }

    fn player(&self, p: usize) -> &Player {
        &self.w.players[p]
    }

    fn team_id(&self, side: usize) -> TeamId {
        self.w.teams[self.side_team[side]].id.clone()
    }

    fn strength_diff(&self) -> f64 {
        self.w.teams[self.side_team[self.owner]].strength - self.w.teams[self.side_team[1 - self.owner]].strength
    }

    fn advance(&mut self) {
        let g: f64 = self.gap.sample(&mut self.w.rng);
        self.t += g.clamp(0.4, 12.0);
    }

    fn emit(&mut self, side: usize, player: usize, action: ActionKind, x: f64, y: f64) -> usize {
        let mut e = Event::new(
            self.match_id.clone(),
            self.events.len() as u32,
            (self.t * 10.0).round() / 10.0,
            self.half,
            self.team_id(side),
            self.player(player).id.clone(),
            action,
            x.clamp(0.0, pitch::LENGTH),
            y.clamp(0.0, pitch::WIDTH),
        );
        e.set_piece = self.restart.take();
        if e.set_piece.is_none() {
            e.set_piece = action.implied_set_piece();
        }
        self.events.push(e);
        self.events.len() - 1
    }

    fn pick(&mut self, side: usize, groups: &[PositionGroup], exclude: Option<usize>) -> usize {
        let pool: Vec<usize> = self.on_pitch[side]
            .iter()
            .copied()
            .filter(|&p| Some(p) != exclude && groups.contains(&self.player(p).pos))
            .collect();
        if let Some(&p) = pool.choose(&mut self.w.rng) {
            return p;
        }
        let any: Vec<usize> = self.on_pitch[side].iter().copied().filter(|&p| Some(p) != exclude).collect();
        *any.choose(&mut self.w.rng).expect("teams field more than one player")
    }

    fn pick_by_zone(&mut self, side: usize, x: f64, exclude: Option<usize>) -> usize {
        use PositionGroup::*;
        let groups: &[PositionGroup] = if x < 35.0 {
            &[CentralDef, FullBack, Midfielder]
        } else if x < 70.0 {
            &[Midfielder, FullBack, Wing]
        } else {
            &[Wing, CentralForward, Midfielder]
        };
        self.pick(side, groups, exclude)
    }

    fn marker_for(&mut self, attacker: usize) -> usize {
        use PositionGroup::*;
        let pos = self.player(attacker).pos;
        let groups: &[PositionGroup] = if self.rng().gen_bool(0.5) {
            match pos {
                CentralDef => &[CentralDef],
                FullBack => &[FullBack],
                Midfielder => &[Midfielder],
                CentralForward => &[CentralForward],
                Wing => &[Wing],
                Goalkeeper => &[Goalkeeper],
            }
        } else {
            match pos {
                CentralForward | Goalkeeper => &[CentralDef],
                Wing => &[FullBack],
                Midfielder => &[Midfielder],
                FullBack => &[Wing],
                CentralDef => &[CentralForward],
            }
        };
        self.pick(1 - self.owner, groups, None)
    }

    fn turnover(&mut self, at: (f64, f64)) {
        let (fx, fy) = pitch::flip(at.0, at.1);
        self.owner = 1 - self.owner;
        self.carrier = self.pick_by_zone(self.owner, fx, None);
        self.x = fx;
        self.y = fy;
    }

    fn kickoff(&mut self, side: usize) {
        self.owner = side;
        let cf = self.pick(side, &[PositionGroup::CentralForward], None);
        let mid = self.pick(side, &[PositionGroup::Midfielder], Some(cf));
        self.restart = Some(SetPiece::Kickoff);
        let i = self.emit(side, cf, ActionKind::Control(ControlKind::Pass), pitch::CENTER.0, pitch::CENTER.1);
        self.events[i].end_x = Some(45.0);
        self.events[i].end_y = Some(34.0);
        self.events[i].outcome = Some(Outcome::Complete);
        self.carrier = mid;
        self.x = 45.0;
        self.y = 34.0;
    }

    /// Duel between the attacking receiver and a defender at (x, y) in the
    /// attacking frame. Leaves the ball with the winner's side.
    fn duel(&mut self, kind: DuelKind, attacker: usize, x: f64, y: f64) {
        let att_side = self.owner;
        let defender = self.marker_for(attacker);
        let (mu_a, mu_d, edge) = match kind {
            DuelKind::Aerial => (self.player(attacker).aerial, self.player(defender).aerial, self.w.spec.defender_aerial_edge),
            DuelKind::Ground => (self.player(attacker).ground, self.player(defender).ground, self.w.spec.defender_ground_edge),
        };
        let p_def = sigmoid(mu_d - mu_a + logit(edge));
        let def_wins = self.rng().gen::<f64>() < p_def;
        self.t += self.rng().gen_range(0.8..2.0);
        let i = self.emit(att_side, attacker, ActionKind::SymmetricalDuel(kind), x, y);
        let winner = if def_wins { defender } else { attacker };
        self.events[i].opponent_id = Some(self.player(defender).id.clone());
        self.events[i].opponents_nearby = Some(self.rng().gen_range(0..4));
        if kind == DuelKind::Aerial && self.rng().gen_bool(0.5) {
            self.events[i].body_part = Some(BodyPart::Head);
        }
        let r: f64 = self.rng().gen();
        let fouled = r >= 0.75 && r < 0.83;
        if r < 0.75 {
            self.events[i].first_touch_by = Some(self.player(winner).id.clone());
        } else if fouled {
            self.events[i].foul_suffered_by = Some(self.player(winner).id.clone());
        }
        if def_wins {
            self.turnover((x, y));
            self.carrier = defender;
        } else {
            self.carrier = attacker;
            self.x = x;
            self.y = y;
        }
        if fouled {
            self.t += self.rng().gen_range(20.0..40.0);
            self.restart = Some(SetPiece::FreeKick);
        }
    }

    fn pass(&mut self, kind: ControlKind, long_bias: f64) -> After {
        let passer = self.carrier;
        let (x, y) = (self.x, self.y);
        let corner = kind == ControlKind::CornerKick;
        let long = !corner && x < 60.0 && self.rng().gen::<f64>() < 0.08 + long_bias;
        let (ex, ey) = if corner {
            (self.rng().gen_range(94.0..103.0), self.rng().gen_range(26.0..42.0))
        } else if long {
            let len = self.rng().gen_range(40.0..62.0);
            let ang: f64 = self.rng().gen_range(-0.5..0.5);
            (x + len * ang.cos(), y + len * ang.sin())
        } else {
            let dx = Normal::new(5.0, 9.0).unwrap().sample(&mut self.w.rng);
            let dy = Normal::new(0.0, 11.0).unwrap().sample(&mut self.w.rng);
            (x + dx, y + dy)
        };
        let (ex, ey) = (ex.clamp(0.5, 104.5), ey.clamp(0.5, 67.5));
        let receiver = self.pick_by_zone(self.owner, ex, Some(passer));
        let len = (ex - x).hypot(ey - y);
        let i = self.emit(self.owner, passer, ActionKind::Control(kind), x, y);
        self.events[i].end_x = Some(ex);
        self.events[i].end_y = Some(ey);
        if corner || (long && self.rng().gen::<f64>() < 0.85) {
            let before = self.owner;
            self.duel(DuelKind::Aerial, receiver, ex, ey);
            let kept = self.owner == before;
            self.events[i].outcome = Some(if kept { Outcome::Complete } else { Outcome::Incomplete });
            if kept && ex > 92.0 && self.rng().gen_bool(0.45) {
                return self.shoot(true);
            }
            return After::Continue;
        }
        let z = 2.4 + self.player(passer).pass + 0.8 * self.strength_diff() - 0.035 * len - 0.03 * (ex - 70.0).max(0.0);
        let success = self.rng().gen::<f64>() < sigmoid(z);
        self.events[i].outcome = Some(if success { Outcome::Complete } else { Outcome::Incomplete });
        if success {
            self.carrier = receiver;
            self.x = ex;
            self.y = ey;
            if self.rng().gen::<f64>() < 0.06 {
                self.duel(DuelKind::Ground, receiver, ex, ey);
            }
        } else {
            self.turnover((ex, ey));
            if self.rng().gen_bool(0.5) {
                self.t += 0.6;
                let c = self.carrier;
                let (fx, fy) = (self.x, self.y);
                self.emit(self.owner, c, ActionKind::Other(OtherKind::Interception), fx, fy);
            }
        }
        After::Continue
    }

    fn carry(&mut self, dribble: bool) -> After {
        let p = self.carrier;
        let (x, y) = (self.x, self.y);
        let dx = self.rng().gen_range(2.0..11.0);
        let dy = Normal::new(0.0, 4.0).unwrap().sample(&mut self.w.rng);
        let (ex, ey) = ((x + dx).clamp(0.5, 104.5), (y + dy).clamp(0.5, 67.5));
        let kind = if dribble { ControlKind::Dribble } else { ControlKind::Carry };
        let i = self.emit(self.owner, p, ActionKind::Control(kind), x, y);
        self.events[i].end_x = Some(ex);
        self.events[i].end_y = Some(ey);
        let p_ok = if dribble { sigmoid(0.3 + self.player(p).ground + 0.5 * self.strength_diff()) } else { 0.97 };
        if self.rng().gen::<f64>() < p_ok {
            self.events[i].outcome = Some(Outcome::Complete);
            self.x = ex;
            self.y = ey;
        } else {
            self.events[i].outcome = Some(Outcome::Incomplete);
            self.turnover((ex, ey));
        }
        After::Continue
    }

    fn shoot(&mut self, header: bool) -> After {
        self.advance();
        let shooter = self.carrier;
        let (x, y) = (self.x, self.y);
        let p = true_xg(x, y, header);
        let goal = self.rng().gen::<f64>() < p;
        let i = self.emit(self.owner, shooter, ActionKind::Control(ControlKind::Shot), x, y);
        self.events[i].body_part = Some(if header { BodyPart::Head } else { BodyPart::Foot });
        self.events[i].end_x = Some(pitch::LENGTH);
        self.events[i].end_y = Some(pitch::CENTER.1);
        self.events[i].is_goal = goal;
        self.shot_truth.push(ShotTruth { match_id: self.match_id.clone(), event_index: i as u32, p_goal: p });
        self.after_shot(goal)
    }

    fn after_shot(&mut self, goal: bool) -> After {
        if goal {
            self.goals[self.owner] += 1;
            self.t += self.rng().gen_range(40.0..70.0);
            let other = 1 - self.owner;
            self.kickoff(other);
            return After::Goal;
        }
        let r: f64 = self.rng().gen();
        let def = 1 - self.owner;
        if r < 0.35 {
            self.t += 1.0;
            let gk = self.pick(def, &[PositionGroup::Goalkeeper], None);
            self.emit(def, gk, ActionKind::Other(OtherKind::Save), 2.0, 34.0);
            if self.rng().gen_bool(0.4) {
                self.t += self.rng().gen_range(15.0..30.0);
                let taker = self.pick(self.owner, &[PositionGroup::Wing, PositionGroup::Midfielder], None);
                self.carrier = taker;
                self.x = 104.5;
                self.y = if self.rng().gen_bool(0.5) { 0.5 } else { 67.5 };
                self.restart = Some(SetPiece::Corner);
                return self.pass(ControlKind::CornerKick, 0.0);
            }
            self.owner = def;
            self.carrier = gk;
            self.x = 6.0;
            self.y = 34.0;
        } else if r < 0.8 {
            self.t += self.rng().gen_range(15.0..30.0);
            self.owner = def;
            self.carrier = self.pick(def, &[PositionGroup::Goalkeeper], None);
            self.x = 5.5;
            self.y = 34.0;
            self.restart = Some(SetPiece::GoalKick);
            self.advance();
            return self.pass(ControlKind::GoalKick, 0.7);
        } else {
            self.t += 0.5;
            let blocker = self.pick(def, &[PositionGroup::CentralDef, PositionGroup::FullBack], None);
            let (fx, fy) = pitch::flip(self.x, self.y);
            self.emit(def, blocker, ActionKind::Other(OtherKind::Block), fx, fy);
            if self.rng().gen_bool(0.5) {
                self.carrier = self.pick_by_zone(self.owner, self.x, None);
                self.x -= 6.0;
            } else {
                self.turnover((self.x, self.y));
            }
        }
        After::Continue
    }

    fn penalty(&mut self) -> After {
        // Foul in the box on a ground duel, then the spot kick.
        let side = self.owner;
        let attacker = self.pick(side, &[PositionGroup::CentralForward, PositionGroup::Wing], None);
        self.advance();
        let (bx, by) = (96.0, self.rng().gen_range(28.0..40.0));
        let defender = self.pick(1 - side, &[PositionGroup::CentralDef, PositionGroup::FullBack], None);
        let i = self.emit(side, attacker, ActionKind::SymmetricalDuel(DuelKind::Ground), bx, by);
        self.events[i].opponent_id = Some(self.player(defender).id.clone());
        self.events[i].foul_suffered_by = Some(self.player(attacker).id.clone());
        self.events[i].opponents_nearby = Some(2);
        self.t += self.rng().gen_range(50.0..90.0);
        let taker = self.pick(side, &[PositionGroup::CentralForward], None);
        self.carrier = taker;
        self.x = pitch::PENALTY_SPOT.0;
        self.y = pitch::PENALTY_SPOT.1;
        let goal = self.rng().gen::<f64>() < self.w.spec.penalty_conversion;
        self.restart = Some(SetPiece::Penalty);
        let i = self.emit(side, taker, ActionKind::Control(ControlKind::Penalty), self.x, self.y);
        self.events[i].body_part = Some(BodyPart::Foot);
        self.events[i].is_goal = goal;
        self.shot_truth.push(ShotTruth {
            match_id: self.match_id.clone(),
            event_index: i as u32,
            p_goal: self.w.spec.penalty_conversion,
        });
        self.after_shot(goal)
    }

    fn step(&mut self) -> After {
        if let Some(&tp) = self.penalty_times.first() {
            if self.t >= tp {
                self.penalty_times.remove(0);
                return self.penalty();
            }
        }
        if let Some(sp) = self.restart {
            self.advance();
            let kind = match sp {
                SetPiece::FreeKick => ControlKind::FreeKick,
                _ => ControlKind::Pass,
            };
            return self.pass(kind, if self.x < 60.0 { 0.4 } else { 0.0 });
        }
        let r: f64 = self.rng().gen();
        if r < 0.025 {
            // Ball out: throw-in for either side after a dead-ball gap.
            self.t += self.rng().gen_range(12.0..30.0);
            if self.rng().gen_bool(0.45) {
                self.turnover((self.x, self.y));
            }
            self.carrier = self.pick(self.owner, &[PositionGroup::FullBack, PositionGroup::Wing], None);
            self.y = if self.y < 34.0 { 0.3 } else { 67.7 };
            self.restart = Some(SetPiece::ThrowIn);
            self.advance();
            return self.pass(ControlKind::ThrowIn, 0.0);
        }
        self.advance();
        let central = (self.y - 34.0).abs() < 22.0;
        let shot_p = if self.x > 90.0 && central {
            0.3
        } else if self.x > 82.0 && central {
            0.1
        } else {
            0.0
        };
        let r: f64 = self.rng().gen();
        if r < shot_p {
            return self.shoot(false);
        }
        let r: f64 = self.rng().gen();
        let gk = self.player(self.carrier).pos == PositionGroup::Goalkeeper;
        if r < 0.66 || gk {
            self.pass(ControlKind::Pass, if gk { 0.5 } else { 0.0 })
        } else if r < 0.9 {
            self.carry(false)
        } else {
            self.carry(true)
        }
    }

    fn play(&mut self, lineups: &mut Vec<LineupRecord>) {
        let half_len = self.w.spec.half_minutes * 60.0;
        let lambda = self.w.spec.penalties_per_match;
        let mut subs: [Vec<(f64, usize, usize)>; 2] = [Vec::new(), Vec::new()];
        for (side, side_subs) in subs.iter_mut().enumerate() {
            let squad = self.w.teams[self.side_team[side]].squad.clone();
            let bench = squad[STARTERS..].iter().copied().filter(|&p| self.w.players[p].pos != PositionGroup::Goalkeeper);
            for b in bench.take(3) {
                let pos = self.w.players[b].pos;
                let out = squad[1..STARTERS]
                    .iter()
                    .copied()
                    .find(|&p| self.w.players[p].pos == pos && !side_subs.iter().any(|s| s.1 == p))
                    .unwrap_or(squad[1 + side_subs.len()]);
                let t = self.w.rng.gen_range(0.2..0.9) * half_len;
                side_subs.push((t, out, b));
            }
            side_subs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        }
        let mut on_since: Vec<(usize, usize, f64)> = Vec::new();
        for side in 0..2 {
            for &p in &self.on_pitch[side] {
                on_since.push((side, p, -1.0));
            }
        }
        for half in 1..=2u8 {
            self.half = half;
            self.t = 0.0;
            let end = half_len + self.rng().gen_range(30.0..240.0);
            let n_pen = Poisson::draw(self.rng(), lambda / 2.0);
            let mut times: Vec<f64> = (0..n_pen).map(|_| self.w.rng.gen_range(60.0..half_len)).collect();
            times.sort_by(|a, b| a.partial_cmp(b).unwrap());
            self.penalty_times = times;
            self.restart = None;
            self.kickoff(if half == 1 { 0 } else { 1 });
            while self.t < end {
                if half == 2 {
                    for side in 0..2 {
                        while let Some(&(ts, out, inn)) = subs[side].first() {
                            if self.t < ts {
                                break;
                            }
                            subs[side].remove(0);
                            let Some(k) = self.on_pitch[side].iter().position(|&p| p == out) else { continue };
                            self.on_pitch[side][k] = inn;
                            if self.carrier == out {
                                self.carrier = inn;
                            }
                            let since = on_since.iter().position(|&(_, p, _)| p == out).expect("player on pitch");
                            let (_, _, on_t) = on_since.remove(since);
                            lineups.push(self.lineup(side, out, on_t, self.t));
                            on_since.push((side, inn, self.t));
                        }
                    }
                }
                self.step();
            }
        }
        let final_t = self.t;
        for (side, p, on_t) in on_since {
            lineups.push(self.lineup(side, p, on_t, final_t));
        }
    }

    /// `on_t < 0` marks a starter; substitutions happen in the second half.
    fn lineup(&self, side: usize, p: usize, on_t: f64, off_t: f64) -> LineupRecord {
        let round = |t: f64| (t * 10.0).round() / 10.0;
        let (on_half, on_s) = if on_t < 0.0 { (1, 0.0) } else { (2, round(on_t)) };
        LineupRecord {
            match_id: self.match_id.clone(),
            player_id: self.player(p).id.clone(),
            team_id: self.team_id(side),
            on_half,
            on_s,
            off_half: 2,
            off_s: round(off_t),
        }
    }
}

pub(super) struct Poisson;

impl Poisson {
    pub(super) fn draw(rng: &mut ChaCha8Rng, lambda: f64) -> u32 {
        if lambda <= 0.0 {
            return 0;
        }
        rand_distr::Poisson::new(lambda).map(|d| d.sample(rng) as u32).unwrap_or(0)
    }
}

/// Circle-method round robin over `n` slots: rounds of (home, away) pairs.
pub(super) fn round_robin(n: usize, rounds: usize) -> Vec<Vec<(usize, usize)>> {
    let mut slots: Vec<usize> = (0..n).collect();
    let mut out = Vec::with_capacity(rounds);
    for r in 0..rounds {
        let mut pairs = Vec::with_capacity(n / 2);
        for k in 0..n / 2 {
            let (a, b) = (slots[k], slots[n - 1 - k]);
            let flip = (r / (n - 1).max(1)) % 2 == 1;
            pairs.push(if flip { (b, a) } else { (a, b) });
        }
        out.push(pairs);
        slots[1..].rotate_right(1);
    }
    out
}

/// Simulates the whole league. Same spec, same output.
pub fn generate(spec: &SynthLeagueSpec) -> SynthLeague {
    let mut w = World::build(spec);
    let mut events = Vec::new();
    let mut matches = Vec::new();
    let mut players = Vec::new();
    let mut lineups = Vec::new();
    let mut shots = Vec::new();
    let tpd = spec.teams_per_division as usize;
    let rounds = spec.league_rounds() as usize;

    for s in 0..spec.n_seasons {
        let season = SeasonId::new((spec.first_season + s).to_string());
        let start = NaiveDate::from_ymd_opt((spec.first_season + s) as i32, 8, 1).expect("valid season start");
        for t in &w.teams {
            for &p in &t.squad {
                let pl = &w.players[p];
                players.push(PlayerRecord {
                    season_id: season.clone(),
                    player_id: pl.id.clone(),
                    team_id: t.id.clone(),
                    position: pl.pos,
                    age: pl.age,
                    height_cm: pl.height,
                    contract_months: Some(pl.contract),
                });
            }
        }

        let mut fixtures: Vec<(u32, CompetitionId, NaiveDate, usize, usize)> = Vec::new();
        if tpd >= 2 {
            let schedule = round_robin(tpd, rounds);
            for d in 0..spec.divisions as usize {
                let comp = CompetitionId::new(format!("D{}", d + 1));
                for (r, pairs) in schedule.iter().enumerate() {
                    let date = start + Duration::days(7 * r as i64);
                    for &(h, a) in pairs {
                        fixtures.push((r as u32 + 1, comp.clone(), date, d * tpd + h, d * tpd + a));
                    }
                }
            }
        }
        if spec.divisions >= 2 && tpd >= 1 {
            for c in 0..spec.cup_rounds as usize {
                let at = (c + 1) * rounds / (spec.cup_rounds as usize + 1);
                let date = start + Duration::days(7 * at as i64 + 3);
                let mut lower: Vec<usize> = (tpd..2 * tpd).collect();
                lower.rotate_left(c % tpd);
                for (k, &b) in lower.iter().enumerate() {
                    let pair = if c % 2 == 0 { (k, b) } else { (b, k) };
                    fixtures.push((c as u32 + 1, CompetitionId::new("CUP"), date, pair.0, pair.1));
                }
            }
        }
        fixtures.sort_by(|a, b| (a.2, &a.1).cmp(&(b.2, &b.1)));

        let mut counter: std::collections::HashMap<(String, u32), u32> = Default::default();
        for (round, comp, date, h, a) in fixtures {
            let k = counter.entry((comp.as_str().to_string(), round)).or_default();
            *k += 1;
            let match_id = MatchId::new(format!("{}-{}-R{:02}-{:02}", season, comp, round, k));
            let on_pitch = [w.teams[h].squad[..STARTERS].to_vec(), w.teams[a].squad[..STARTERS].to_vec()];
            let gap = Exp::new(1.0 / spec.mean_gap_s.max(0.5)).unwrap();
            let mut sim = MatchSim {
                w: &mut w,
                match_id: match_id.clone(),
                side_team: [h, a],
                on_pitch,
                events: Vec::new(),
                shot_truth: Vec::new(),
                goals: [0, 0],
                half: 1,
                t: 0.0,
                owner: 0,
                carrier: 0,
                x: 0.0,
                y: 0.0,
                restart: None,
                penalty_times: Vec::new(),
                gap,
            };
            sim.play(&mut lineups);
            let goals = sim.goals;
            events.extend(sim.events);
            shots.extend(sim.shot_truth);
            matches.push(MatchRecord {
                match_id,
                season_id: season.clone(),
                competition_id: comp,
                round,
                date: date.format("%Y-%m-%d").to_string(),
                home_team: w.teams[h].id.clone(),
                away_team: w.teams[a].id.clone(),
                home_goals: Some(goals[0]),
                away_goals: Some(goals[1]),
            });
        }
        if s + 1 < spec.n_seasons {
            w.evolve();
        }
    }

    let truth = Truth {
        spec: spec.clone(),
        players: w
            .players
            .iter()
            .map(|p| PlayerTruth {
                player_id: p.id.clone(),
                position: p.pos,
                tier: p.tier,
                aerial_mu: p.aerial,
                ground_mu: p.ground,
                pass_quality: p.pass,
            })
            .collect(),
        teams: w
            .teams
            .iter()
            .map(|t| TeamTruth { team_id: t.id.clone(), division: t.division, strength: t.strength })
            .collect(),
        shots,
    };
    SynthLeague { events, matches, players, lineups, truth }
}
