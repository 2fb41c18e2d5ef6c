use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader, Read, Write};

use serde_json::{Map, Value};
use thiserror::Error;

use super::{pitch, ActionKind, BodyPart, Event, MatchId, Outcome, PlayerId, SetPiece, TeamId};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Jsonl,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" | "ndjson" => Ok(Format::Jsonl),
            "csv" => Ok(Format::Csv),
            other => Err(format!("unknown event format `{other}` (expected jsonl or csv)")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct IngestOptions {
    /// Length and width of the source coordinate system; rescaled to 105×68.
    pub source_pitch: (f64, f64),
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions { source_pitch: (pitch::LENGTH, pitch::WIDTH) }
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("read error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed record: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: field `{field}`: {message}")]
    Field { line: usize, field: &'static str, message: String },
    #[error("line {line}: duplicate event ({match_id}, {event_index})")]
    Duplicate { line: usize, match_id: MatchId, event_index: u32 },
    #[error("match {match_id}: more than two teams ({teams})")]
    TooManyTeams { match_id: MatchId, teams: String },
}

impl IngestError {
    pub fn line(&self) -> Option<usize> {
        match self {
            IngestError::Syntax { line, .. }
            | IngestError::Field { line, .. }
            | IngestError::Duplicate { line, .. } => Some(*line),
            _ => None,
        }
    }
}

/// All events of one match, sorted by `event_index`.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchEvents {
    pub match_id: MatchId,
    pub events: Vec<Event>,
}

pub fn ingest_events<R: Read>(source: R, format: Format) -> Result<Vec<MatchEvents>, IngestError> {
    ingest_events_with(source, format, &IngestOptions::default())
}

pub fn ingest_events_with<R: Read>(
    source: R,
    format: Format,
    options: &IngestOptions,
) -> Result<Vec<MatchEvents>, IngestError> {
    let mut parsed: Vec<(usize, Event)> = Vec::new();
    match format {
        Format::Jsonl => {
            let reader = BufReader::new(source);
            for (n, line) in reader.lines().enumerate() {
                let line = line?;
                let lineno = n + 1;
                if line.trim().is_empty() {
                    continue;
                }
                let value: Value = serde_json::from_str(&line)
                    .map_err(|e| IngestError::Syntax { line: lineno, message: e.to_string() })?;
                let Value::Object(map) = value else {
                    return Err(IngestError::Syntax {
                        line: lineno,
                        message: "expected a JSON object".into(),
                    });
                };
                let rec = JsonRecord(&map);
                parsed.push((lineno, parse_event(&rec, lineno, options)?));
            }
        }
        Format::Csv => {
            let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(source);
            let headers = reader
                .headers()
                .map_err(|e| IngestError::Syntax { line: 1, message: e.to_string() })?
                .clone();
            for (n, record) in reader.records().enumerate() {
                let record = record.map_err(|e| IngestError::Syntax {
                    line: e.position().map(|p| p.line() as usize).unwrap_or(n + 2),
                    message: e.to_string(),
                })?;
                let lineno = record.position().map(|p| p.line() as usize).unwrap_or(n + 2);
                let rec = CsvRecord { headers: &headers, record: &record };
                parsed.push((lineno, parse_event(&rec, lineno, options)?));
            }
        }
    }
    group_matches(parsed)
}

fn group_matches(parsed: Vec<(usize, Event)>) -> Result<Vec<MatchEvents>, IngestError> {
    let mut by_match: BTreeMap<MatchId, Vec<Event>> = BTreeMap::new();
    let mut seen: HashSet<(MatchId, u32)> = HashSet::new();
    for (line, event) in parsed {
        if !seen.insert((event.match_id.clone(), event.event_index)) {
            return Err(IngestError::Duplicate {
                line,
                match_id: event.match_id.clone(),
                event_index: event.event_index,
            });
        }
        by_match.entry(event.match_id.clone()).or_default().push(event);
    }
    let mut out = Vec::with_capacity(by_match.len());
    for (match_id, mut events) in by_match {
        events.sort_by_key(|e| e.event_index);
        let mut teams: Vec<&TeamId> = Vec::new();
        for e in &events {
            if !teams.contains(&&e.team_id) {
                teams.push(&e.team_id);
            }
        }
        if teams.len() > 2 {
            let teams = teams.iter().map(|t| t.as_str()).collect::<Vec<_>>().join(", ");
            return Err(IngestError::TooManyTeams { match_id, teams });
        }
        out.push(MatchEvents { match_id, events });
    }
    Ok(out)
}

/// Writes events as JSON lines in the ingestion schema.
pub fn write_jsonl<'a, W: Write>(
    mut out: W,
    events: impl IntoIterator<Item = &'a Event>,
) -> std::io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

enum Raw<'a> {
    Json(&'a Value),
    Text(&'a str),
}

trait RecordSource {
    fn raw(&self, field: &str) -> Option<Raw<'_>>;
}

struct JsonRecord<'a>(&'a Map<String, Value>);

impl RecordSource for JsonRecord<'_> {
    fn raw(&self, field: &str) -> Option<Raw<'_>> {
        match self.0.get(field) {
            None | Some(Value::Null) => None,
            Some(v) => Some(Raw::Json(v)),
        }
    }
}

struct CsvRecord<'a> {
    headers: &'a csv::StringRecord,
    record: &'a csv::StringRecord,
}

impl RecordSource for CsvRecord<'_> {
    fn raw(&self, field: &str) -> Option<Raw<'_>> {
        let idx = self.headers.iter().position(|h| h.trim() == field)?;
        let s = self.record.get(idx)?.trim();
        if s.is_empty() {
            None
        } else {
            Some(Raw::Text(s))
        }
    }
}

struct Fields<'r, R: RecordSource> {
    rec: &'r R,
    line: usize,
}

impl<R: RecordSource> Fields<'_, R> {
    fn err(&self, field: &'static str, message: impl Into<String>) -> IngestError {
        IngestError::Field { line: self.line, field, message: message.into() }
    }

    fn opt_str(&self, field: &'static str) -> Result<Option<String>, IngestError> {
        match self.rec.raw(field) {
            None => Ok(None),
            Some(Raw::Text(s)) => Ok(Some(s.to_owned())),
            Some(Raw::Json(Value::String(s))) => Ok(Some(s.clone())),
            Some(Raw::Json(Value::Number(n))) => Ok(Some(n.to_string())),
            Some(Raw::Json(v)) => Err(self.err(field, format!("expected string, got {v}"))),
        }
    }

    fn req_str(&self, field: &'static str) -> Result<String, IngestError> {
        self.opt_str(field)?.ok_or_else(|| self.err(field, "missing"))
    }

    fn opt_f64(&self, field: &'static str) -> Result<Option<f64>, IngestError> {
        let v = match self.rec.raw(field) {
            None => return Ok(None),
            Some(Raw::Text(s)) => s.parse::<f64>().map_err(|_| self.err(field, format!("not a number: `{s}`")))?,
            Some(Raw::Json(Value::Number(n))) => n.as_f64().ok_or_else(|| self.err(field, "not a finite number"))?,
            Some(Raw::Json(Value::String(s))) => {
                s.parse::<f64>().map_err(|_| self.err(field, format!("not a number: `{s}`")))?
            }
            Some(Raw::Json(v)) => return Err(self.err(field, format!("expected number, got {v}"))),
        };
        if !v.is_finite() {
            return Err(self.err(field, "not a finite number"));
        }
        Ok(Some(v))
    }

    fn req_f64(&self, field: &'static str) -> Result<f64, IngestError> {
        self.opt_f64(field)?.ok_or_else(|| self.err(field, "missing"))
    }

    fn opt_u32(&self, field: &'static str) -> Result<Option<u32>, IngestError> {
        match self.opt_f64(field)? {
            None => Ok(None),
            Some(v) if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 => Ok(Some(v as u32)),
            Some(v) => Err(self.err(field, format!("expected a non-negative integer, got {v}"))),
        }
    }

    fn opt_bool(&self, field: &'static str) -> Result<Option<bool>, IngestError> {
        match self.rec.raw(field) {
            None => Ok(None),
            Some(Raw::Json(Value::Bool(b))) => Ok(Some(*b)),
            Some(Raw::Text(s)) => match s.to_ascii_lowercase().as_str() {
                "true" | "1" => Ok(Some(true)),
                "false" | "0" => Ok(Some(false)),
                _ => Err(self.err(field, format!("expected boolean, got `{s}`"))),
            },
            Some(Raw::Json(v)) => Err(self.err(field, format!("expected boolean, got {v}"))),
        }
    }

    fn opt_enum<T>(&self, field: &'static str, parse: impl Fn(&str) -> Option<T>) -> Result<Option<T>, IngestError> {
        match self.opt_str(field)? {
            None => Ok(None),
            Some(s) => parse(&s).map(Some).ok_or_else(|| self.err(field, format!("unknown value `{s}`"))),
        }
    }
}

fn parse_event<R: RecordSource>(rec: &R, line: usize, options: &IngestOptions) -> Result<Event, IngestError> {
    let f = Fields { rec, line };
    let (sx, sy) = (pitch::LENGTH / options.source_pitch.0, pitch::WIDTH / options.source_pitch.1);

    let event_index = f.opt_u32("event_index")?.ok_or_else(|| f.err("event_index", "missing"))?;
    let half = f.opt_u32("half")?.ok_or_else(|| f.err("half", "missing"))?;
    if half != 1 && half != 2 {
        return Err(f.err("half", format!("expected 1 or 2, got {half}")));
    }
    let wall_clock_s = f.req_f64("wall_clock_s")?;
    if wall_clock_s < 0.0 {
        return Err(f.err("wall_clock_s", "negative"));
    }
    let action = ActionKind::parse(&f.req_str("action")?);

    let coord = |field: &'static str, v: f64, scale: f64, max: f64| -> Result<f64, IngestError> {
        let v = v * scale;
        // Tolerate rounding noise from the rescale.
        if !(-1e-9..=max + 1e-9).contains(&v) {
            return Err(f.err(field, format!("coordinate {v} outside [0, {max}]")));
        }
        Ok(v.clamp(0.0, max))
    };
    let x = coord("x", f.req_f64("x")?, sx, pitch::LENGTH)?;
    let y = coord("y", f.req_f64("y")?, sy, pitch::WIDTH)?;
    let end_x = f.opt_f64("end_x")?.map(|v| coord("end_x", v, sx, pitch::LENGTH)).transpose()?;
    let end_y = f.opt_f64("end_y")?.map(|v| coord("end_y", v, sy, pitch::WIDTH)).transpose()?;

    let mut event = Event {
        match_id: MatchId(f.req_str("match_id")?),
        event_index,
        wall_clock_s,
        half: half as u8,
        team_id: TeamId(f.req_str("team_id")?),
        player_id: PlayerId(f.req_str("player_id")?),
        action,
        x,
        y,
        end_x,
        end_y,
        body_part: f.opt_enum("body_part", BodyPart::parse)?,
        outcome: f.opt_enum("outcome", Outcome::parse)?,
        set_piece: f.opt_enum("set_piece", SetPiece::parse)?,
        is_goal: f.opt_bool("is_goal")?.unwrap_or(false),
        foul_suffered_by: f.opt_str("foul_suffered_by")?.map(PlayerId),
        first_touch_by: f.opt_str("first_touch_by")?.map(PlayerId),
        opponent_id: f.opt_str("opponent_id")?.map(PlayerId),
        opponents_nearby: f.opt_u32("opponents_nearby")?,
    };

    if event.is_goal && !event.is_shot() {
        return Err(f.err("is_goal", format!("only shots can score, action is `{}`", event.action)));
    }
    if event.set_piece.is_none() {
        event.set_piece = event.action.implied_set_piece();
    }
    if event.is_duel() {
        for (field, who) in [("foul_suffered_by", &event.foul_suffered_by), ("first_touch_by", &event.first_touch_by)] {
            if let (Some(who), Some(opp)) = (who, &event.opponent_id) {
                if who != &event.player_id && who != opp {
                    return Err(f.err(field, format!("`{who}` is not a participant of the duel")));
                }
            }
        }
        if event.opponent_id.as_ref() == Some(&event.player_id) {
            return Err(f.err("opponent_id", "duel opponent equals the acting player"));
        }
    }
    Ok(event)
}
