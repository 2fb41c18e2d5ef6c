mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::OnceLock;

use epv_core::duels::collect_duels;
use epv_core::event::{ActionKind, ControlKind, DuelKind, PlayerId};
use epv_core::forecast::{build_training_rows, rate_clubs, train_stay_model, ForecastConfig, ForecastData};
use epv_core::glicko::GlickoParams;
use epv_core::season::{season_lines, season_rankings, MatchInput};
use epv_core::testkit::{generate, generate_panel, PanelSpec};

fn trained() -> &'static common::Trained {
    static T: OnceLock<common::Trained> = OnceLock::new();
    T.get_or_init(|| common::train(generate(&common::rating_league(30))))
}

#[test]
fn context_models_recover_defender_edges() {
    let t = trained();
    for (kind, planted) in [(DuelKind::Aerial, 0.6), (DuelKind::Ground, 0.5)] {
        let p: Vec<f64> = t
            .views
            .iter()
            .flat_map(collect_duels)
            .filter(|d| d.kind == kind)
            .filter_map(|d| Some(t.context.defender_probability(kind, d.context.as_ref()?)))
            .collect();
        let mean = p.iter().sum::<f64>() / p.len() as f64;
        assert!((mean - planted).abs() < 0.03, "{kind:?}: mean P(defender) {mean:.4} over {} duels", p.len());
    }
}

#[test]
fn ratings_stay_centered() {
    let t = trained();
    for kind in DuelKind::ALL {
        let r: Vec<f64> = t.ratings.ratings.iter().filter(|((k, _), _)| *k == kind).map(|(_, g)| g.display_rating()).collect();
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        assert!((mean - 1500.0).abs() < 15.0, "{kind:?}: mean rating {mean:.1} over {} players", r.len());
    }
}

#[test]
fn pcr_lines_match_a_direct_recount() {
    let t = trained();
    let records: HashMap<_, _> = t.league.matches.iter().map(|m| (m.match_id.clone(), m)).collect();
    let mut lineups: HashMap<_, Vec<_>> = HashMap::new();
    for l in &t.league.lineups {
        lineups.entry(l.match_id.clone()).or_default().push(l.clone());
    }
    let duels: Vec<_> = t.views.iter().map(collect_duels).collect();
    let inputs = (0..t.views.len()).map(|k| MatchInput {
        record: records[&t.views[k].match_id],
        view: &t.views[k],
        lineups: lineups.get(&t.views[k].match_id).map_or(&[][..], |v| v.as_slice()),
        rewards: &t.rewards[k],
        xg: &t.xg[k],
        duels: &duels[k],
    });
    let lines = season_lines(inputs);

    let mut sums: BTreeMap<(String, PlayerId), f64> = BTreeMap::new();
    for (k, v) in t.views.iter().enumerate() {
        let season = records[&v.match_id].season_id.to_string();
        for r in &t.rewards[k] {
            let e = v.event(r.position);
            let open = e.set_piece.is_none();
            if open && matches!(e.action, ActionKind::Control(ControlKind::Pass | ControlKind::Carry | ControlKind::Dribble)) {
                *sums.entry((season.clone(), e.player_id.clone())).or_default() += r.delta_epv;
            }
        }
    }
    for l in &lines {
        let want = sums.get(&(l.season_id.to_string(), l.player_id.clone())).copied().unwrap_or(0.0);
        assert!((l.sum_pcr_delta - want).abs() < 1e-9, "{}: {} vs {want}", l.player_id, l.sum_pcr_delta);
        if l.effective_minutes > 0.0 {
            assert!((l.pcr - 60.0 * want / l.effective_minutes).abs() < 1e-12);
        }
    }

    let ranked = season_rankings(&lines, 300.0);
    let eligible: BTreeSet<_> = lines.iter().filter(|l| l.effective_minutes >= 300.0).map(|l| (&l.player_id, &l.season_id)).collect();
    assert_eq!(ranked.len(), eligible.len());
    assert!(ranked.windows(2).all(|w| w[0].pcr >= w[1].pcr));
    assert!(ranked.iter().enumerate().all(|(i, r)| r.rank == i + 1));
}

fn auc(scores: &[(f64, bool)]) -> f64 {
    let pos: Vec<f64> = scores.iter().filter(|s| s.1).map(|s| s.0).collect();
    let neg: Vec<f64> = scores.iter().filter(|s| !s.1).map(|s| s.0).collect();
    let mut wins = 0.0;
    for p in &pos {
        for n in &neg {
            wins += if p > n { 1.0 } else if p == n { 0.5 } else { 0.0 };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

#[test]
fn stay_model_ranks_held_out_players() {
    let panel = generate_panel(&PanelSpec::default());
    let cfg = ForecastConfig::default();
    let clubs = rate_clubs(&panel.matches, &GlickoParams::default()).unwrap();
    let data = ForecastData::new(&panel.lines, &panel.players, &clubs, &cfg);
    let rows = build_training_rows(&data, &cfg).unwrap();
    let last = rows.iter().map(|r| r.target_season.clone()).max().unwrap();
    let (test, train): (Vec<_>, Vec<_>) = rows.into_iter().partition(|r| r.target_season == last);
    let model = train_stay_model(&train, &cfg).unwrap();
    let scores: Vec<(f64, bool)> = test.iter().map(|r| (model.predict(&r.stay_features()).unwrap(), r.stays(&cfg))).collect();
    let a = auc(&scores);
    assert!(a > 0.8, "held-out stay AUC {a:.3} over {} rows", scores.len());
}
