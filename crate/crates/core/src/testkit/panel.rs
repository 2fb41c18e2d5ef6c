//! Season-level career panel with planted persistence, a league-strength
//! shift on PCR and age/minutes-driven exits.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::sim::{round_robin, Poisson};
use crate::event::{CompetitionId, MatchId, PlayerId, PositionGroup, SeasonId, TeamId};
use crate::roster::{write_table, MatchRecord, PlayerRecord};
use crate::scalar::sigmoid;
use crate::season::SeasonLine;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PanelSpec {
    pub seed: u64,
    pub leagues: u32,
    pub teams_per_league: u32,
    pub squad_size: u32,
    pub seasons: u32,
    pub first_season: u32,
    /// Internal-scale club strength step between consecutive leagues.
    pub league_gap: f64,
    /// PCR multiplier is `exp(-league_shift · league_strength)`.
    pub league_shift: f64,
    pub talent_mean: f64,
    pub talent_sd: f64,
    /// Season-to-season talent drift.
    pub drift_sd: f64,
    /// PCR noise at 900 minutes; scales with 1/√minutes.
    pub noise_sd: f64,
    pub transfer_rate: f64,
    /// Share of transfers that change league.
    pub cross_league_share: f64,
    pub cup_rounds: u32,
}

impl Default for PanelSpec {
    fn default() -> Self {
        PanelSpec {
            seed: 7,
            leagues: 4,
            teams_per_league: 16,
            squad_size: 24,
            seasons: 6,
            first_season: 2018,
            league_gap: 0.5,
            league_shift: 0.4,
            talent_mean: 0.12,
            talent_sd: 0.05,
            drift_sd: 0.01,
            noise_sd: 0.04,
            transfer_rate: 0.2,
            cross_league_share: 0.4,
            cup_rounds: 3,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PanelTruth {
    /// Mean internal club strength per league.
    pub league_strength: BTreeMap<String, f64>,
    pub team_strength: BTreeMap<TeamId, f64>,
    /// League-neutral PCR level per player-season.
    pub talent: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Panel {
    pub lines: Vec<SeasonLine>,
    pub players: Vec<PlayerRecord>,
    pub matches: Vec<MatchRecord>,
    pub truth: PanelTruth,
}

impl Panel {
    pub fn write_dir(&self, dir: &Path) -> io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let csv_err = |e: csv::Error| io::Error::new(io::ErrorKind::Other, e);
        write_table(std::fs::File::create(dir.join("season_lines.csv"))?, &self.lines).map_err(csv_err)?;
        write_table(std::fs::File::create(dir.join("players.csv"))?, &self.players).map_err(csv_err)?;
        write_table(std::fs::File::create(dir.join("matches.csv"))?, &self.matches).map_err(csv_err)?;
        std::fs::write(dir.join("panel_truth.json"), serde_json::to_vec_pretty(&self.truth)?)
    }
}

struct Player {
    id: PlayerId,
    position: PositionGroup,
    age: u32,
    height: f64,
    talent: f64,
    role: f64,
    team: usize,
}

const POSITIONS: [PositionGroup; 6] = [
    PositionGroup::CentralDef,
    PositionGroup::FullBack,
    PositionGroup::Midfielder,
    PositionGroup::CentralForward,
    PositionGroup::Wing,
    PositionGroup::Goalkeeper,
];

fn xg90(p: PositionGroup) -> f64 {
    match p {
        PositionGroup::CentralForward => 0.4,
        PositionGroup::Wing => 0.25,
        PositionGroup::Midfielder => 0.12,
        PositionGroup::FullBack | PositionGroup::CentralDef => 0.05,
        PositionGroup::Goalkeeper => 0.0,
    }
}

struct Gen {
    spec: PanelSpec,
    rng: ChaCha8Rng,
    next_id: u32,
    players: Vec<Player>,
    team_ids: Vec<TeamId>,
    team_league: Vec<usize>,
    team_mu: Vec<f64>,
}

impl Gen {
    fn new_player(&mut self, team: usize, young: bool) -> Player {
        let s = &self.spec;
        let id = PlayerId::new(format!("Q{:05}", self.next_id));
        self.next_id += 1;
        let age = if young { self.rng.gen_range(18..=22) } else { self.rng.gen_range(18..=34) };
        Player {
            id,
            position: *POSITIONS.choose(&mut self.rng).expect("non-empty"),
            age,
            height: Normal::new(181.0_f64, 6.0).expect("valid").sample(&mut self.rng).round(),
            talent: Normal::new(s.talent_mean, s.talent_sd).expect("valid").sample(&mut self.rng),
            role: self.rng.gen_range(0.05..1.0),
            team,
        }
    }

    fn league_mu(&self, l: usize) -> f64 {
        let n = self.spec.leagues as f64;
        self.spec.league_gap * ((n - 1.0) / 2.0 - l as f64)
    }

    fn play(&mut self, h: usize, a: usize) -> (u32, u32) {
        let d = self.team_mu[h] - self.team_mu[a];
        let u: f64 = self.rng.gen();
        let base = Poisson::draw(&mut self.rng, 1.0);
        if u < 0.25 {
            (base, base)
        } else if u < 0.25 + 0.75 * sigmoid(2.0 * d) {
            (base + 1 + Poisson::draw(&mut self.rng, 0.5), base)
        } else {
            (base, base + 1 + Poisson::draw(&mut self.rng, 0.5))
        }
    }
}

/// Builds the panel. Same spec, same panel.
pub fn generate_panel(spec: &PanelSpec) -> Panel {
    let mut g = Gen {
        spec: spec.clone(),
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        next_id: 0,
        players: Vec::new(),
        team_ids: Vec::new(),
        team_league: Vec::new(),
        team_mu: Vec::new(),
    };
    let mut truth = PanelTruth::default();
    for l in 0..spec.leagues as usize {
        truth.league_strength.insert(format!("L{}", l + 1), g.league_mu(l));
        for k in 0..spec.teams_per_league {
            let t = g.team_ids.len();
            g.team_ids.push(TeamId::new(format!("C{}{:02}", l + 1, k + 1)));
            g.team_league.push(l);
            let mu = g.league_mu(l) + Normal::new(0.0, 0.2).expect("valid").sample(&mut g.rng);
            g.team_mu.push(mu);
            truth.team_strength.insert(g.team_ids[t].clone(), mu);
            for _ in 0..spec.squad_size {
                let p = g.new_player(t, false);
                g.players.push(p);
            }
        }
    }
    let mut panel = Panel::default();
    let n_teams = g.team_ids.len();
    let tpl = spec.teams_per_league as usize;
    for s in 0..spec.seasons {
        let year = spec.first_season + s;
        let season = SeasonId::new(year.to_string());
        let start = NaiveDate::from_ymd_opt(year as i32, 8, 1).expect("valid date");

        let mut fixtures: Vec<(NaiveDate, CompetitionId, u32, usize, usize)> = Vec::new();
        let rounds = 2 * (tpl - 1);
        for l in 0..spec.leagues as usize {
            let comp = CompetitionId::new(format!("L{}", l + 1));
            for (r, pairs) in round_robin(tpl, rounds).into_iter().enumerate() {
                let date = start + Duration::days(7 * r as i64);
                for (h, a) in pairs {
                    fixtures.push((date, comp.clone(), r as u32 + 1, l * tpl + h, l * tpl + a));
                }
            }
        }
        for c in 0..spec.cup_rounds {
            let date = start + Duration::days(7 * (3 * c as i64 + 1) + 3);
            let mut order: Vec<usize> = (0..n_teams).collect();
            order.shuffle(&mut g.rng);
            for pair in order.chunks(2).filter(|p| p.len() == 2) {
                fixtures.push((date, CompetitionId::new("CUP"), c + 1, pair[0], pair[1]));
            }
        }
        fixtures.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
        for (k, (date, comp, round, h, a)) in fixtures.into_iter().enumerate() {
            let (hg, ag) = g.play(h, a);
            panel.matches.push(MatchRecord {
                match_id: MatchId::new(format!("{season}-{comp}-{round:02}-{k:04}")),
                season_id: season.clone(),
                competition_id: comp,
                round,
                date: date.format("%Y-%m-%d").to_string(),
                home_team: g.team_ids[h].clone(),
                away_team: g.team_ids[a].clone(),
                home_goals: Some(hg),
                away_goals: Some(ag),
            });
        }

        let mut exits = Vec::new();
        for i in 0..g.players.len() {
            let (team, league) = (g.players[i].team, g.team_league[g.players[i].team]);
            let league_mu = g.league_mu(league);
            let mult = (-spec.league_shift * league_mu).exp();
            let p = &g.players[i];
            let minutes = (3300.0 * p.role + Normal::new(0.0, 250.0).expect("valid").sample(&mut g.rng)).clamp(0.0, 3420.0);
            truth.talent.insert(format!("{season}/{}", p.id), p.talent);
            let noise = spec.noise_sd * (900.0 / minutes.max(90.0)).sqrt();
            let pcr = p.talent * mult + Normal::new(0.0, noise).expect("valid").sample(&mut g.rng);
            let xg = xg90(p.position) * mult * minutes / 90.0;
            let mut rate = |r: f64| Poisson::draw(&mut g.rng, r * minutes / 90.0);
            let (aerial, ground) = (rate(2.0), rate(4.0));
            let win = |n: u32, rng: &mut ChaCha8Rng| Binomial::new(u64::from(n), 0.5).map_or(0, |b| b.sample(rng) as u32);
            let p = &g.players[i];
            let line = SeasonLine {
                player_id: p.id.clone(),
                season_id: season.clone(),
                team_id: g.team_ids[team].clone(),
                competition_id: CompetitionId::new(format!("L{}", league + 1)),
                matches: (minutes / 80.0).round() as u32,
                effective_minutes: minutes,
                sum_pcr_delta: pcr * minutes / 60.0,
                pcr,
                xg,
                goals: Poisson::draw(&mut g.rng, xg),
                shots: Poisson::draw(&mut g.rng, 8.0 * xg),
                team_xg_on_pitch: 1.3 * mult * minutes / 90.0,
                aerial_duels: aerial,
                aerial_wins: win(aerial, &mut g.rng),
                ground_duels: ground,
                ground_wins: win(ground, &mut g.rng),
            };
            if minutes > 0.0 {
                panel.lines.push(line);
            }
            let p = &g.players[i];
            panel.players.push(PlayerRecord {
                season_id: season.clone(),
                player_id: p.id.clone(),
                team_id: g.team_ids[team].clone(),
                position: p.position,
                age: p.age,
                height_cm: p.height,
                contract_months: Some(f64::from(g.rng.gen_range(0..5u32) * 12)),
            });
            let leave = sigmoid(0.7 * (f64::from(p.age) - 31.0) - (minutes - 1200.0) / 400.0);
            if g.rng.gen::<f64>() < leave {
                exits.push(i);
            }
        }

        for &i in exits.iter().rev() {
            let team = g.players[i].team;
            g.players[i] = g.new_player(team, true);
        }
        let drift = Normal::new(0.0, spec.drift_sd).expect("valid");
        for i in 0..g.players.len() {
            let age_trend = match g.players[i].age {
                a if a < 24 => 0.004,
                a if a > 30 => -0.004,
                _ => 0.0,
            };
            let d = drift.sample(&mut g.rng);
            let p = &mut g.players[i];
            p.talent += d + age_trend;
            p.age += 1;
            p.role = (p.role + Normal::new(0.0, 0.1).expect("valid").sample(&mut g.rng)).clamp(0.05, 1.0);
        }
        for i in 0..g.players.len() {
            if g.rng.gen::<f64>() >= spec.transfer_rate {
                continue;
            }
            let from = g.players[i].team;
            let league = g.team_league[from];
            let cross = spec.leagues > 1 && g.rng.gen::<f64>() < spec.cross_league_share;
            let to = loop {
                let t = g.rng.gen_range(0..n_teams);
                let ok = if cross { g.team_league[t] != league } else { g.team_league[t] == league && t != from };
                if ok || tpl < 2 {
                    break t;
                }
            };
            g.players[i].team = to;
        }
    }
    panel
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> PanelSpec {
        PanelSpec { leagues: 2, teams_per_league: 4, squad_size: 10, seasons: 3, ..PanelSpec::default() }
    }

    #[test]
    fn deterministic() {
        assert_eq!(generate_panel(&small()), generate_panel(&small()));
    }

    #[test]
    fn matches_are_dated_in_order() {
        let p = generate_panel(&small());
        assert!(p.matches.windows(2).all(|w| w[0].date <= w[1].date));
        assert_eq!(p.players.len(), 2 * 4 * 10 * 3);
    }

    #[test]
    fn weaker_leagues_inflate_pcr() {
        let p = generate_panel(&PanelSpec { seasons: 2, ..PanelSpec::default() });
        let mean = |l: &str| {
            let v: Vec<f64> = p.lines.iter().filter(|x| x.competition_id.as_str() == l).map(|x| x.pcr).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(mean("L4") > mean("L1"));
    }
}
