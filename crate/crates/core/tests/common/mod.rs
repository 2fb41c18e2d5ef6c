#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

use epv_core::duels::{collect_duels, run_rating_pipeline, train_context_model, ContextModels, RatedDuel, RatingRun};
use epv_core::event::{filter_noncore, DuelKind, Event, MatchId, PlayerId, PositionGroup, PossessionView};
use epv_core::pipeline::PipelineConfig;
use epv_core::reward::{compute_rewards, epv_training_rows, predict_epv, train_epv, DuelSkill, EpvModelSet, EpvValue, RewardRecord};
use epv_core::testkit::{SynthLeague, SynthLeagueSpec};
use epv_core::xg::{assign_xg, collect_shots, train_xg, XgModelPair};

/// Filtered views in match-id order with each match's date.
pub fn views_of(league: &SynthLeague, gap: f64) -> (Vec<PossessionView>, Vec<String>) {
    let mut by_match: BTreeMap<MatchId, Vec<Event>> = BTreeMap::new();
    for e in &league.events {
        by_match.entry(e.match_id.clone()).or_default().push(e.clone());
    }
    let dates: HashMap<&MatchId, &String> = league.matches.iter().map(|m| (&m.match_id, &m.date)).collect();
    by_match
        .into_iter()
        .map(|(id, events)| {
            let date = dates[&id].clone();
            (filter_noncore(&PossessionView::build(id, events, gap).unwrap()), date)
        })
        .unzip()
}

/// The whole valuation chain, in memory, with the pipeline's default settings.
pub struct Trained {
    pub league: SynthLeague,
    pub views: Vec<PossessionView>,
    pub periods: Vec<String>,
    pub xg_model: XgModelPair,
    pub xg: Vec<Vec<Option<f64>>>,
    pub context: ContextModels,
    pub ratings: RatingRun,
    pub epv_models: EpvModelSet,
    pub epv: Vec<Vec<EpvValue>>,
    pub rewards: Vec<Vec<RewardRecord>>,
}

impl Trained {
    pub fn skill(&self, k: usize) -> DuelSkill<'_> {
        DuelSkill { context: &self.context, ratings: &self.ratings, period: &self.periods[k] }
    }

    pub fn tiers(&self) -> HashMap<PlayerId, u8> {
        self.league.truth.players.iter().map(|p| (p.player_id.clone(), p.tier)).collect()
    }
}

pub fn train(league: SynthLeague) -> Trained {
    let cfg = PipelineConfig::default();
    let (views, periods) = views_of(&league, cfg.stoppage_gap_s);
    let xg_model = train_xg(&collect_shots(&views), &cfg.xg_model).unwrap();
    let xg: Vec<Vec<Option<f64>>> = views.iter().map(|v| assign_xg(&xg_model, v)).collect();
    let pv = cfg.pv().unwrap();
    let labels: Vec<_> = views.iter().zip(&xg).map(|(v, x)| epv_core::pv::label_dataset(v, x, &pv).unwrap()).collect();

    let positions: HashMap<PlayerId, PositionGroup> =
        league.players.iter().map(|p| (p.player_id.clone(), p.position)).collect();
    let duels: Vec<_> = views.iter().map(collect_duels).collect();
    let context = ContextModels {
        aerial: train_context_model(duels.iter().flatten(), &positions, DuelKind::Aerial, &cfg.context_model).unwrap(),
        ground: train_context_model(duels.iter().flatten(), &positions, DuelKind::Ground, &cfg.context_model).unwrap(),
    };
    let rated: Vec<RatedDuel> = duels
        .iter()
        .zip(&periods)
        .flat_map(|(ds, p)| ds.iter().filter_map(|d| RatedDuel::from_record(d, p.as_str(), &context)).collect::<Vec<_>>())
        .collect();
    let ratings = run_rating_pipeline(&rated, &cfg.glicko, cfg.advantage).unwrap();

    let skill = |k: usize| DuelSkill { context: &context, ratings: &ratings, period: &periods[k] };
    let rows: Vec<_> = (0..views.len()).flat_map(|k| epv_training_rows(&views[k], &labels[k], &skill(k)).unwrap()).collect();
    let epv_models = train_epv(rows, &cfg.epv_model).unwrap();
    let epv: Vec<Vec<EpvValue>> = (0..views.len()).map(|k| predict_epv(&epv_models, &views[k], &skill(k)).unwrap()).collect();
    let rewards = (0..views.len()).map(|k| compute_rewards(&views[k], &epv[k]).unwrap()).collect();
    Trained { league, views, periods, xg_model, xg, context, ratings, epv_models, epv, rewards }
}

/// One division of six with enough rounds for ratings to settle.
pub fn rating_league(rounds: u32) -> SynthLeagueSpec {
    SynthLeagueSpec { seed: 21, rounds_per_season: Some(rounds), ..SynthLeagueSpec::default() }
}
