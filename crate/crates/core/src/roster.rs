//! Sidecar tables that accompany an event stream: fixtures, squads and
//! lineups.

use std::io::{Read, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize, Serializer};

use crate::event::{CompetitionId, MatchId, PlayerId, PositionGroup, SeasonId, TeamId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub match_id: MatchId,
    pub season_id: SeasonId,
    pub competition_id: CompetitionId,
    pub round: u32,
    /// ISO date, `YYYY-MM-DD`.
    pub date: String,
    pub home_team: TeamId,
    pub away_team: TeamId,
    #[serde(default)]
    pub home_goals: Option<u32>,
    #[serde(default)]
    pub away_goals: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlayerRecord {
    pub season_id: SeasonId,
    pub player_id: PlayerId,
    pub team_id: TeamId,
    pub position: PositionGroup,
    pub age: u32,
    pub height_cm: f64,
    #[serde(default)]
    pub contract_months: Option<f64>,
}

/// On-pitch interval of one player in one match, in wall-clock seconds from
/// the start of the given half.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineupRecord {
    pub match_id: MatchId,
    pub player_id: PlayerId,
    pub team_id: TeamId,
    pub on_half: u8,
    pub on_s: f64,
    pub off_half: u8,
    pub off_s: f64,
}

/// Four decimals, the precision of the published tables.
pub fn fixed4<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(&format_args!("{v:.4}"))
}

/// Rounded to an integer, for ratings.
pub fn whole<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_i64(v.round() as i64)
}

/// Reads a headed CSV table, skipping `#` comment lines.
pub fn read_table<T: DeserializeOwned, R: Read>(source: R) -> Result<Vec<T>, csv::Error> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(source);
    rdr.deserialize().collect()
}

pub fn write_table<T: Serialize, W: Write>(sink: W, rows: &[T]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(sink);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn match_table_roundtrip_and_optional_goals() {
        let text = "# config-hash: ab\nmatch_id,season_id,competition_id,round,date,home_team,away_team\nm1,2021,D1,1,2021-08-01,A,B\n";
        let rows: Vec<MatchRecord> = read_table(text.as_bytes()).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].home_goals, None);
        let mut out = Vec::new();
        write_table(&mut out, &rows).unwrap();
        let back: Vec<MatchRecord> = read_table(out.as_slice()).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn player_positions_parse() {
        let text = "season_id,player_id,team_id,position,age,height_cm,contract_months\n2021,p,A,full_back,23,181,\n2021,q,A,central_def,30,190,12\n";
        let rows: Vec<PlayerRecord> = read_table(text.as_bytes()).unwrap();
        assert_eq!(rows[0].position, PositionGroup::FullBack);
        assert_eq!(rows[1].contract_months, Some(12.0));
    }
}
