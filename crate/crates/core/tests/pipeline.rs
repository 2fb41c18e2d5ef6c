use std::fs;
use std::path::Path;
use std::time::Instant;

use epv_core::event::Format;
use epv_core::pipeline::{IngestSource, PipelineConfig, PipelineError, Stage, Workspace, MANIFEST};
use epv_core::testkit::{generate, SynthLeagueSpec};

fn league_spec() -> SynthLeagueSpec {
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

pub fn small_config() -> PipelineConfig {
    let mut cfg = PipelineConfig { seed: 3, ranking_min_minutes: 300.0, ..PipelineConfig::default() };
    cfg.forecast.top_n = 4;
    cfg.forecast.pcr_model.trees = 60;
    cfg.forecast.stay_model.trees = 40;
    cfg
}

fn run_all(input: &Path, work: &Path, cfg: &PipelineConfig) -> Result<(), PipelineError> {
    let ws = Workspace::new(work, cfg.clone());
    let src = IngestSource::new(input.join("events.jsonl"), Format::Jsonl);
    ws.run_pipeline(&Stage::ALL, Some(&src))
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn full_dag_is_complete_and_deterministic() {
    let league = generate(&league_spec());
    assert!((90..=110).contains(&league.matches.len()), "{} matches", league.matches.len());
    let input = tempfile::tempdir().unwrap();
    league.write_dir(input.path()).unwrap();
    let cfg = small_config();

    let a = tempfile::tempdir().unwrap();
    let t = Instant::now();
    run_all(input.path(), a.path(), &cfg).unwrap();
    let elapsed = t.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "end to end took {elapsed:?}");

    let ws = Workspace::new(a.path(), cfg.clone());
    let manifest = ws.manifest().unwrap();
    assert_eq!(manifest.config_hash, cfg.hash());
    for s in Stage::ALL {
        let rec = &manifest.stages[s.name()];
        assert_eq!(rec.config_hash, cfg.stage_hash(s));
        for name in s.outputs() {
            assert!(rec.outputs.contains_key(*name), "{s}: {name} not in manifest");
            assert_eq!(header(&a.path().join(name)), format!("# config-hash: {}", cfg.stage_hash(s)), "{name}");
        }
        assert!(!rec.inputs.is_empty(), "{s}: no inputs recorded");
    }

    let b = tempfile::tempdir().unwrap();
    run_all(input.path(), b.path(), &cfg).unwrap();
    for s in Stage::ALL {
        for name in s.outputs() {
            assert!(fs::read(a.path().join(name)).unwrap() == fs::read(b.path().join(name)).unwrap(), "{name} differs between runs");
        }
    }
    assert_eq!(fs::read(a.path().join(MANIFEST)).unwrap(), fs::read(b.path().join(MANIFEST)).unwrap());
}

#[test]
fn changed_config_rejects_stale_inputs() {
    let league = generate(&SynthLeagueSpec { seed: 5, rounds_per_season: Some(6), ..SynthLeagueSpec::default() });
    let input = tempfile::tempdir().unwrap();
    league.write_dir(input.path()).unwrap();
    let work = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let ws = Workspace::new(work.path(), cfg.clone());
    ws.ingest(&IngestSource::new(input.path().join("events.jsonl"), Format::Jsonl)).unwrap();
    ws.train_xg().unwrap();

    let moved = Workspace::new(work.path(), PipelineConfig { stoppage_gap_s: 20.0, ..cfg.clone() });
    let err = moved.train_xg().unwrap_err();
    assert!(matches!(err, PipelineError::Stale { stage: Stage::Ingest, .. }), "{err}");
    assert_eq!(err.exit_code(), 3);

    let relabel = Workspace::new(work.path(), PipelineConfig { gamma: 0.9, ..cfg.clone() });
    relabel.label().unwrap();
    let err = ws.train_epv().unwrap_err();
    assert!(matches!(err, PipelineError::Stale { stage: Stage::Label, .. } | PipelineError::Missing { .. }), "{err}");

    let err = ws.pcr().unwrap_err();
    assert!(matches!(err, PipelineError::Missing { stage: Stage::Rewards, .. } | PipelineError::Stale { .. }), "{err}");
}

#[test]
fn ingest_reports_bad_input_as_validation() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("events.jsonl"), "{\"match_id\": \"m\"}\n").unwrap();
    let ws = Workspace::new(dir.path().join("work"), PipelineConfig::default());
    let err = ws.ingest(&IngestSource::new(dir.path().join("events.jsonl"), Format::Jsonl)).unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");
}
