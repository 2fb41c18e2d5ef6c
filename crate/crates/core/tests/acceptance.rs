//! One line per acceptance criterion; exits non-zero if any fails.

mod common;

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use num_rational::Rational64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use epv_core::duels::rating_table;
use epv_core::event::{
    effective_times, segment_possessions, ActionKind, AnnotatedEvent, DuelKind, Event, Format, MatchId, PossessionView,
    SetPiece,
};
use epv_core::forecast::{adjust_pcr, evaluate_forecast, mae, rate_clubs, rmse, ForecastConfig, ForecastData};
use epv_core::glicko::{expected, glicko_update, GlickoParams, GlickoState, Matchup, DISPLAY_CENTER, SCALE};
use epv_core::learn::{inverse_frequency, Objective};
use epv_core::pipeline::{IngestSource, PipelineConfig, Stage, Workspace};
use epv_core::pv::{label_dataset, pv_basic, pv_decay, pv_risk_terms, PvConfig, PvVariant};
use epv_core::reward::{EpvValue, Scenario};
use epv_core::scalar::logit;
use epv_core::season::{long_pass_duels, pcr, LongPassRule, ReportMatch};
use epv_core::testkit::oracle::{oracle_effective_times, oracle_glicko, oracle_pv, oracle_segment, OracleMatch};
use epv_core::testkit::{generate, generate_panel, PanelSpec, SynthLeagueSpec};
use epv_core::xg::{assign_xg, collect_shots, train_xg};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

fn annotated(e: Event, t: f64, possession: u32) -> AnnotatedEvent {
    AnnotatedEvent { event: e, possession, effective_s: t }
}

/// A control action 30 effective seconds before an opponent penalty.
fn penalty_view(penalty: Event) -> PossessionView {
    let other = if penalty.team_id.as_str() == "A" { "B" } else { "A" };
    let before = Event::new(penalty.match_id.clone(), 0, 0.0, penalty.half, other, "p", ActionKind::parse("pass"), 40.0, 30.0);
    let mut pen = penalty;
    pen.event_index = 1;
    PossessionView::from_annotated("w".into(), vec![annotated(before, 0.0, 0), annotated(pen, 30.0, 1)])
}

fn worked_example() -> Outcome {
    let t = Instant::now();
    let mut pen = Event::new("w", 1, 30.0, 1, "B", "q", ActionKind::parse("penalty"), 94.0, 34.0);
    pen.set_piece = Some(SetPiece::Penalty);
    let view = penalty_view(pen);
    let (_, opp): (f64, f64) = pv_risk_terms(&view, &[None, Some(0.75)], 0, 0.95, 300.0).map_err(|e| e.to_string())?;
    let raw_time = t.elapsed();

    let t = Instant::now();
    let league = generate(&SynthLeagueSpec { seed: 3, rounds_per_season: Some(40), penalties_per_match: 1.5, ..Default::default() });
    let (views, _) = common::views_of(&league, 15.0);
    let model = train_xg(&collect_shots(&views), &PipelineConfig::default().xg_model).map_err(|e| e.to_string())?;
    let mut terms = Vec::new();
    for v in &views {
        let xg = assign_xg(&model, v);
        for (i, a) in v.events.iter().enumerate() {
            if a.event.action.as_str() == "penalty" {
                let w = penalty_view(a.event.clone());
                let (_, opp): (f64, f64) = pv_risk_terms(&w, &[None, xg[i]], 0, 0.95, 300.0).map_err(|e| e.to_string())?;
                terms.push(opp);
            }
        }
    }
    let e2e = terms.iter().sum::<f64>() / terms.len() as f64;
    let e2e_time = t.elapsed();
    check(
        (opp - 0.1610).abs() <= 0.001
            && (e2e - 0.1610).abs() <= 0.02
            && raw_time.as_secs_f64() < 1.0
            && e2e_time.as_secs_f64() < 60.0,
        format!(
            "raw term {opp:.5} in {}, trained term {e2e:.4} over {} penalties in {}",
            secs(raw_time),
            terms.len(),
            secs(e2e_time)
        ),
    )
}

fn random_xg(views: &[PossessionView], rng: &mut ChaCha8Rng) -> Vec<Vec<Option<f64>>> {
    views
        .iter()
        .map(|v| v.events.iter().map(|a| a.event.is_shot().then(|| rng.gen_range(0.01..0.95))).collect())
        .collect()
}

fn gamma_one_reduction() -> Outcome {
    let league = generate(&SynthLeagueSpec { seed: 8, rounds_per_season: Some(30), ..Default::default() });
    let views: Vec<PossessionView> = {
        let mut by: std::collections::BTreeMap<MatchId, Vec<Event>> = Default::default();
        for e in &league.events {
            by.entry(e.match_id.clone()).or_default().push(e.clone());
        }
        by.into_iter().map(|(id, ev)| PossessionView::build(id, ev, 15.0).unwrap()).collect()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let xg = random_xg(&views, &mut rng);
    let (mut n, mut worst) = (0usize, 0.0f64);
    for (v, x) in views.iter().zip(&xg) {
        n += v.len();
        for i in 0..v.len() {
            if v.event(i).is_control() {
                let a = pv_decay(v, x, i, 1.0).map_err(|e| e.to_string())?;
                let b = pv_basic(v, x, i).map_err(|e| e.to_string())?;
                worst = worst.max((a - b).abs());
            }
        }
    }
    check(n >= 100_000 && worst < 1e-12, format!("{n} events, max |decay(γ=1) − basic| = {worst:.1e}"))
}

fn oracle_equivalence() -> Outcome {
    let t = Instant::now();
    let (mut matches, mut seg_bad, mut time_worst, mut pv_worst, mut labels) = (0usize, 0usize, 0.0f64, 0.0f64, 0usize);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for chunk in 0..10u64 {
        let league = generate(&SynthLeagueSpec { seed: 100 + chunk, teams_per_division: 10, rounds_per_season: Some(20), ..Default::default() });
        let mut by: std::collections::BTreeMap<MatchId, Vec<Event>> = Default::default();
        for e in league.events {
            by.entry(e.match_id.clone()).or_default().push(e);
        }
        for (id, events) in by {
            matches += 1;
            let seg = segment_possessions(&events);
            if seg != oracle_segment(&events) {
                seg_bad += 1;
            }
            let times = effective_times(&events, 15.0).map_err(|e| e.to_string())?;
            for (a, b) in times.iter().zip(oracle_effective_times(&events, 15.0)) {
                time_worst = time_worst.max((a - b).abs());
            }
            let xg: Vec<Option<f64>> = events.iter().map(|e| e.is_shot().then(|| rng.gen_range(0.01..0.95))).collect();
            let om = OracleMatch { events: &events, possession: &seg, time: &times, xg: &xg };
            let view = PossessionView::build(id, events.clone(), 15.0).map_err(|e| e.to_string())?;
            for variant in [PvVariant::Basic, PvVariant::Decay, PvVariant::Risk] {
                let cfg = PvConfig::new(0.95, 300.0, variant).unwrap();
                let got = label_dataset(&view, &xg, &cfg).map_err(|e| e.to_string())?;
                let want = oracle_pv(&om, variant, 0.95, 300.0);
                let mut seen = vec![false; events.len()];
                for l in &got {
                    seen[l.position] = true;
                    let w = want[l.position].ok_or_else(|| format!("oracle has no value at {}", l.position))?;
                    pv_worst = pv_worst.max((l.pv - w).abs());
                }
                labels += got.len();
                if want.iter().zip(&seen).any(|(w, s)| w.is_some() != *s) {
                    return Err(format!("labelled positions differ from the oracle in match {}", view.match_id));
                }
            }
        }
    }
    let el = t.elapsed();
    check(
        matches == 1000 && seg_bad == 0 && pv_worst < 1e-12 && time_worst < 1e-9 && el.as_secs_f64() < 120.0,
        format!(
            "{matches} matches, {seg_bad} segmentation mismatches, max effective-time diff {time_worst:.1e}, \
             max PV diff {pv_worst:.1e} over {labels} labels, {}",
            secs(el)
        ),
    )
}

fn telescoping(t: &common::Trained) -> Outcome {
    let (mut chains, mut goal_chains, mut worst) = (0usize, 0usize, 0.0f64);
    let control = |k: usize, i: usize| match t.epv[k][i] {
        EpvValue::Control(x) => x,
        _ => panic!("position {i} is not a control action"),
    };
    for k in 0..100.min(t.views.len()) {
        let v = &t.views[k];
        let by_pos: HashMap<usize, &epv_core::reward::RewardRecord> = t.rewards[k].iter().map(|r| (r.position, r)).collect();
        let mut i = 0;
        while i < v.len() {
            let starts = v.event(i).is_control()
                && !(i > 0 && by_pos.get(&(i - 1)).is_some_and(|r| r.scenario == Scenario::SameTeamControl));
            if !starts {
                i += 1;
                continue;
            }
            let (first, mut j, mut sum) = (i, i, 0.0);
            while by_pos[&j].scenario == Scenario::SameTeamControl {
                sum += by_pos[&j].delta_epv;
                j += 1;
            }
            if j > first {
                chains += 1;
                worst = worst.max((sum - (control(k, j) - control(k, first))).abs());
            }
            if by_pos[&j].scenario == Scenario::Goal {
                let kickoff = (j + 1..v.half_range(j).end)
                    .find(|&q| v.event(q).is_control() && v.event(q).set_piece == Some(SetPiece::Kickoff));
                if let Some(q) = kickoff {
                    goal_chains += 1;
                    let total = sum + by_pos[&j].delta_epv;
                    worst = worst.max((total - (1.0 - control(k, first) - control(k, q))).abs());
                }
            }
            i = j + 1;
        }
    }
    check(
        chains > 1000 && goal_chains > 50 && worst < 1e-9,
        format!("{chains} same-team chains, {goal_chains} goal chains in 100 matches, max error {worst:.1e}"),
    )
}

fn glicko_reduction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let tau = rng.gen_range(0.3..1.2);
        let params = GlickoParams { tau, ..GlickoParams::default() };
        let (r, rd, vol) = (rng.gen_range(1000.0..2000.0), rng.gen_range(30.0..350.0), rng.gen_range(0.03..0.1));
        let n = rng.gen_range(0..8);
        let opps: Vec<(f64, f64, f64)> = (0..n)
            .map(|_| (rng.gen_range(1000.0..2000.0), rng.gen_range(30.0..350.0), [0.0, 0.5, 1.0][rng.gen_range(0..3)]))
            .collect();
        let state = GlickoState::from_display(r, rd, vol);
        let m: Vec<Matchup<f64>> = opps
            .iter()
            .map(|&(rj, rdj, s)| Matchup { mu: (rj - DISPLAY_CENTER) / SCALE, phi: rdj / SCALE, score: s, advantage: 0.0 })
            .collect();
        let got = glicko_update(&state, &m, &params).map_err(|e| e.to_string())?;
        let (wr, wrd, wvol) = oracle_glicko(r, rd, vol, &opps, tau);
        worst = worst.max((got.display_rating() - wr).abs()).max((got.display_rd() - wrd).abs()).max((got.sigma - wvol).abs());
    }
    let mut trip = 0.0f64;
    for _ in 0..10_000 {
        let p: f64 = rng.gen_range(0.001..0.999);
        let mu = rng.gen_range(-3.0..3.0);
        trip = trip.max((expected(mu + logit(p), mu, 0.0) - p).abs());
    }
    check(
        worst < 1e-9 && trip < 1e-9,
        format!("10^4 periods, max deviation from reference {worst:.1e}; advantage round trip max error {trip:.1e}"),
    )
}

fn objective_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-12);
    for obj in [Objective::WeightedLogloss, Objective::WeightedMse] {
        for _ in 0..100 {
            let m: f64 = rng.gen_range(-4.0..4.0);
            let y = if obj == Objective::WeightedLogloss { f64::from(rng.gen_range(0..2)) } else { rng.gen_range(-2.0..2.0) };
            let w = rng.gen_range(0.1..3.0);
            let h = 1e-4;
            let (g, hs) = obj.grad_hess(m, y, w);
            let fd_g = (obj.loss(m + h, y, w) - obj.loss(m - h, y, w)) / (2.0 * h);
            let fd_h = (obj.grad_hess(m + h, y, w).0 - obj.grad_hess(m - h, y, w).0) / (2.0 * h);
            worst = worst.max(rel(g, fd_g)).max(rel(hs, fd_h));
        }
    }
    let keys: Vec<u32> = (0..5000).map(|_| rng.gen_range(0..300)).collect();
    let w: Vec<Rational64> = inverse_frequency(&keys);
    let mut sums: HashMap<u32, Rational64> = HashMap::new();
    for (k, x) in keys.iter().zip(&w) {
        *sums.entry(*k).or_insert_with(|| Rational64::from_integer(0)) += *x;
    }
    let exact = sums.values().all(|s| *s == Rational64::from_integer(1));
    check(
        worst < 1e-5 && exact,
        format!("max relative error {worst:.1e} over 2×100 triples; per-player weight sums exactly 1 for {} players: {exact}", sums.len()),
    )
}

fn planted_skill(t: &common::Trained) -> Outcome {
    let tiers = t.tiers();
    let positions = t.league.players.iter().map(|p| (p.player_id.clone(), p.position)).collect();
    let mut gaps = Vec::new();
    for kind in DuelKind::ALL {
        let rows = rating_table(&t.ratings, kind, &positions, 10);
        let mean = |tier: u8| {
            let r: Vec<f64> = rows.iter().filter(|r| tiers.get(&r.player) == Some(&tier)).map(|r| r.rating as f64).collect();
            r.iter().sum::<f64>() / r.len().max(1) as f64
        };
        gaps.push((kind, mean(1) - mean(0)));
    }

    let league = generate(&SynthLeagueSpec {
        seed: 9,
        n_seasons: 3,
        divisions: 2,
        teams_per_division: 6,
        cup_rounds: 4,
        ..Default::default()
    });
    let clubs = rate_clubs(&league.matches, &GlickoParams::default()).map_err(|e| e.to_string())?;
    let after = epv_core::forecast::next_season(&league.matches.last().unwrap().season_id).map_err(|e| e.to_string())?;
    let mean_div = |d: u32| {
        let r: Vec<f64> = league
            .truth
            .teams
            .iter()
            .filter(|t| t.division == d)
            .map(|t| clubs.rating(&after, &t.team_id).unwrap())
            .collect();
        r.iter().sum::<f64>() / r.len() as f64
    };
    let club_gap = mean_div(0) - mean_div(1);
    let rounds = t.periods.iter().collect::<std::collections::BTreeSet<_>>().len();
    let ok = rounds >= 50 && gaps.iter().all(|(_, g)| *g > 100.0) && club_gap > 100.0;
    check(
        ok,
        format!(
            "after {rounds} rounds: aerial tier gap {:.0}, ground tier gap {:.0}; division gap after 3 seasons {club_gap:.0}",
            gaps[0].1, gaps[1].1
        ),
    )
}

fn forecast_arithmetic() -> Outcome {
    let base = pcr(0.37, 1237.0).map_err(|e| e.to_string())?;
    let invariant = [2.0, 4.0, 0.5, 1024.0, 0.125].iter().all(|k| pcr(0.37 * k, 1237.0 * k).unwrap() == base);
    let adj = adjust_pcr(0.2, 0.1, 0.05);
    let identity = [0.0, 0.2, 0.355, 1.7].iter().all(|&p| adjust_pcr(p, 0.0, 0.0) == p);
    check(
        invariant && (adj - 0.1934).abs() <= 1e-4 && identity,
        format!("scale invariant {invariant}; adjust_pcr(0.2, 0.1, 0.05) = {adj:.5}; zero adjustment identity {identity}"),
    )
}

fn evaluation_harness() -> Outcome {
    let panel = generate_panel(&PanelSpec::default());
    let cfg = ForecastConfig { holdout_seasons: 2, ..ForecastConfig::default() };
    let clubs = rate_clubs(&panel.matches, &GlickoParams::default()).map_err(|e| e.to_string())?;
    let data = ForecastData::new(&panel.lines, &panel.players, &clubs, &cfg);
    let report = evaluate_forecast(&data, &cfg).map_err(|e| e.to_string())?;
    let big: Vec<_> = report.cells.iter().filter(|c| c.rows >= 200).collect();
    let losing: Vec<String> = big
        .iter()
        .filter(|c| c.model_rmse > c.baseline_rmse)
        .map(|c| format!("{}>{}", c.group.as_str(), c.min_minutes))
        .collect();
    let hand = rmse(&[0.0, 0.0], &[3.0, 4.0]) == 12.5f64.sqrt()
        && mae(&[1.0, 2.0, 4.0], &[2.0, 4.0, 4.0]) == 1.0
        && rmse(&[1.0, 2.0], &[1.0, 2.0]) == 0.0;
    let summary: Vec<String> =
        big.iter().map(|c| format!("{}>{}: {:.4} vs {:.4}", c.group.as_str(), c.min_minutes, c.model_rmse, c.baseline_rmse)).collect();
    check(
        big.len() >= 2 && losing.is_empty() && hand,
        format!("{} cells with >=200 rows, model beats persistence in all but {:?} [{}]; hand vectors {hand}", big.len(), losing, summary.join("; ")),
    )
}

fn pipeline_spec() -> SynthLeagueSpec {
    SynthLeagueSpec {
        seed: 11,
        n_seasons: 3,
        divisions: 2,
        teams_per_division: 6,
        rounds_per_season: Some(5),
        cup_rounds: 1,
        transfer_rate: 0.2,
        ..SynthLeagueSpec::default()
    }
}

fn pipeline_config() -> PipelineConfig {
    let mut cfg = PipelineConfig { seed: 3, ranking_min_minutes: 300.0, ..PipelineConfig::default() };
    cfg.forecast.top_n = 4;
    cfg
}

fn run_pipeline(input: &Path, work: &Path) -> Result<Duration, String> {
    let t = Instant::now();
    let ws = Workspace::new(work, pipeline_config());
    ws.run_pipeline(&Stage::ALL, Some(&IngestSource::new(input.join("events.jsonl"), Format::Jsonl))).map_err(|e| e.to_string())?;
    Ok(t.elapsed())
}

fn header(work: &Path, name: &str) -> String {
    std::fs::read_to_string(work.join(name)).unwrap().lines().nth(1).unwrap_or_default().to_string()
}

fn table_schemas(work: &Path, t: &common::Trained) -> Outcome {
    let want = [
        ("ratings_aerial.csv", "rank,player,position,rating,duels,win_pct"),
        ("ratings_ground.csv", "rank,player,position,rating,duels,win_pct"),
        ("pcr_rankings.csv", "rank,player,team,competition,season,PCR,eff_time"),
        ("duel_report.csv", "player,duel,duels,saved,apriori,win_duel,rating,opp_rating,duel_epv,epv_ind_duel"),
        ("shortlist.csv", "rank,player,team,age,PCR,PCR_pred,PCR_adj,stay_proba"),
    ];
    let bad: Vec<&str> = want.iter().filter(|(f, h)| header(work, f) != *h).map(|(f, _)| *f).collect();

    let tiers = t.tiers();
    let rule = LongPassRule::default();
    let passers: std::collections::BTreeSet<_> = t
        .views
        .iter()
        .flat_map(|v| v.events.iter().filter(|a| a.event.control_kind().is_some()).map(|a| a.event.player_id.clone()))
        .collect();
    // (sum of epv_ind_duel − duel_epv, count) per target tier
    let mut by_tier: HashMap<u8, (f64, usize)> = HashMap::new();
    for k in 0..t.views.len() {
        let m = ReportMatch { view: &t.views[k], epv: &t.epv[k], skill: t.skill(k) };
        for p in &passers {
            for d in long_pass_duels(&m, p, &rule).map_err(|e| e.to_string())? {
                let e = by_tier.entry(tiers[&d.target]).or_default();
                e.0 += d.epv_ind_duel - d.duel_epv;
                e.1 += 1;
            }
        }
    }
    let mean = |tier: u8| by_tier.get(&tier).map_or(f64::NAN, |(s, n)| s / *n as f64);
    let (strong, weak) = (mean(1), mean(0));
    let counts = (by_tier.get(&1).map_or(0, |e| e.1), by_tier.get(&0).map_or(0, |e| e.1));
    check(
        bad.is_empty() && strong > 0.0 && weak < 0.0,
        format!(
            "headers mismatched: {bad:?}; long-pass duels to strong targets ({}) epv_ind_duel − duel_epv = {strong:+.5}, weak targets ({}) {weak:+.5}",
            counts.0, counts.1
        ),
    )
}

fn determinism(a: &Path, b: &Path, first: Duration, second: Duration) -> Outcome {
    let mut differ = Vec::new();
    let mut files = 0;
    for s in Stage::ALL {
        for name in s.outputs() {
            files += 1;
            if std::fs::read(a.join(name)).ok() != std::fs::read(b.join(name)).ok() {
                differ.push(*name);
            }
        }
    }
    check(
        differ.is_empty() && first.as_secs_f64() < 60.0,
        format!("{files} artifacts compared, differing: {differ:?}; end to end {} and {} on ~100 matches", secs(first), secs(second)),
    )
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut run = |name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let (tag, detail) = match &out {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("{tag} {name}: {detail}");
        results.push((name, out));
    };

    run("worked decay example", &mut worked_example);
    run("gamma = 1 reduction", &mut gamma_one_reduction);
    run("oracle equivalence", &mut oracle_equivalence);

    let trained = common::train(generate(&common::rating_league(50)));
    run("telescoping rewards", &mut || telescoping(&trained));
    run("glicko reduction", &mut glicko_reduction);
    run("objective gradients and weights", &mut objective_gradients);
    run("planted skill recovery", &mut || planted_skill(&trained));
    run("pcr and adjustment arithmetic", &mut forecast_arithmetic);
    run("evaluation harness", &mut evaluation_harness);

    let input = tempfile::tempdir().unwrap();
    generate(&pipeline_spec()).write_dir(input.path()).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = run_pipeline(input.path(), a.path());
    let second = run_pipeline(input.path(), b.path());
    run("table schemas and report pattern", &mut || {
        first.as_ref().map_err(|e| e.clone())?;
        table_schemas(a.path(), &trained)
    });
    run("determinism and runtime", &mut || {
        let (f, s) = (first.clone()?, second.clone()?);
        determinism(a.path(), b.path(), f, s)
    });

    let failed = results.iter().filter(|(_, r)| r.is_err()).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
