//! Rally-level event model for singles matches and the JSON match file format.
//!
//! A rally is an ordered list of ball bounces: it opens with a `Serve`, continues
//! with zero or more `Play` bounces and ends with an `Error`. Every bounce carries
//! the table half it is attributed to, and the point winner follows from comparing
//! the side of the opening bounce with the side of the terminating one.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rallies with at least this many shots count as long.
pub const LONG_RALLY_MIN_SHOTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    A,
    B,
}

impl Side {
    pub fn opponent(self) -> Side {
        match self {
            Side::A => Side::B,
            Side::B => Side::A,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BounceKind {
    Serve,
    Play,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stroke {
    #[serde(rename = "fh")]
    Forehand,
    #[serde(rename = "bh")]
    Backhand,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RallyLength {
    Short,
    Long,
}

/// One ball bounce. `x` runs along the table width, `y` along the depth of one half.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BounceEvent {
    pub kind: BounceKind,
    pub side: Side,
    pub x: f64,
    pub y: f64,
    /// Stroke of the shot that produced this bounce, when annotated.
    #[serde(default)]
    pub stroke: Option<Stroke>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rally {
    pub set_number: u32,
    pub server: Side,
    pub bounces: Vec<BounceEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchRecord {
    pub match_id: String,
    pub player_a_id: String,
    pub player_b_id: String,
    pub rank_a: Option<u32>,
    pub rank_b: Option<u32>,
    pub rallies: Vec<Rally>,
    pub winner: Side,
}

impl MatchRecord {
    pub fn player_id(&self, side: Side) -> &str {
        match side {
            Side::A => &self.player_a_id,
            Side::B => &self.player_b_id,
        }
    }

    pub fn rank(&self, side: Side) -> Option<u32> {
        match side {
            Side::A => self.rank_a,
            Side::B => self.rank_b,
        }
    }

    /// The side `player_id` plays on in this match, if they played it.
    pub fn side_of(&self, player_id: &str) -> Option<Side> {
        if self.player_a_id == player_id {
            Some(Side::A)
        } else if self.player_b_id == player_id {
            Some(Side::B)
        } else {
            None
        }
    }
}

/// Cell of the 3x3 grid over one table half, numbered row-major from 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ZoneIndex(u8);

impl ZoneIndex {
    pub fn new(value: u8) -> Result<Self> {
        if (1..=9).contains(&value) {
            Ok(ZoneIndex(value))
        } else {
            Err(Error::domain(format!("zone index {value} outside 1..=9")))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }
}

impl BounceEvent {
    fn check_coordinates(&self) -> std::result::Result<(), String> {
        for (name, v) in [("x", self.x), ("y", self.y)] {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(format!("coordinate {name}={v} outside [0, 1]"));
            }
        }
        Ok(())
    }
}

impl Rally {
    /// Checks the structural invariants: serve first, error last, play in between.
    ///
    /// A single-bounce rally is a service fault and its only bounce is the `Error`.
    pub fn check(&self) -> std::result::Result<(), String> {
        if self.set_number == 0 {
            return Err("set number must be positive".into());
        }
        let n = self.bounces.len();
        if n == 0 {
            return Err("rally has no bounces".into());
        }
        for (i, b) in self.bounces.iter().enumerate() {
            b.check_coordinates()
                .map_err(|e| format!("bounce {i}: {e}"))?;
            let expected = if i == n - 1 {
                BounceKind::Error
            } else if i == 0 {
                BounceKind::Serve
            } else {
                BounceKind::Play
            };
            if b.kind != expected {
                return Err(format!(
                    "bounce {i} has kind {:?}, expected {:?}",
                    b.kind, expected
                ));
            }
        }
        Ok(())
    }

    /// Server wins when the opening and terminating bounces are on opposite halves.
    pub fn winner(&self) -> Side {
        rally_winner(self)
    }

    pub fn shot_count(&self) -> usize {
        rally_shot_count(self)
    }

    pub fn length_class(&self) -> RallyLength {
        classify_rally(self)
    }
}

pub fn rally_winner(rally: &Rally) -> Side {
    let first = rally.bounces.first().map(|b| b.side);
    let last = rally.bounces.last().map(|b| b.side);
    if first != last {
        rally.server
    } else {
        rally.server.opponent()
    }
}

/// One shot per bounce, serve and terminating error included.
pub fn rally_shot_count(rally: &Rally) -> usize {
    rally.bounces.len()
}

pub fn classify_rally(rally: &Rally) -> RallyLength {
    if rally_shot_count(rally) >= LONG_RALLY_MIN_SHOTS {
        RallyLength::Long
    } else {
        RallyLength::Short
    }
}

pub fn zone_of(bounce: &BounceEvent) -> Result<ZoneIndex> {
    bounce.check_coordinates().map_err(Error::Domain)?;
    let cell = |v: f64| ((3.0 * v).floor() as u8).min(2);
    let (row, col) = (cell(bounce.y), cell(bounce.x));
    ZoneIndex::new(3 * row + col + 1)
}

/// Stroke of the last successful shot, i.e. the last bounce before the error.
pub fn winning_stroke(rally: &Rally) -> Option<Stroke> {
    rally
        .bounces
        .iter()
        .rev()
        .find(|b| b.kind != BounceKind::Error)
        .and_then(|b| b.stroke)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Keep,
    Drop(String),
}

impl Verdict {
    pub fn is_keep(&self) -> bool {
        matches!(self, Verdict::Keep)
    }
}

/// Winner implied by the rallies: per-set point majority, then set majority.
///
/// Returns `None` when a set or the match is tied.
pub fn derived_winner(m: &MatchRecord) -> Option<Side> {
    let mut sets: BTreeMap<u32, [u32; 2]> = BTreeMap::new();
    for r in &m.rallies {
        let tally = sets.entry(r.set_number).or_default();
        match r.winner() {
            Side::A => tally[0] += 1,
            Side::B => tally[1] += 1,
        }
    }
    let mut won = [0u32; 2];
    for [a, b] in sets.into_values() {
        match a.cmp(&b) {
            std::cmp::Ordering::Greater => won[0] += 1,
            std::cmp::Ordering::Less => won[1] += 1,
            std::cmp::Ordering::Equal => return None,
        }
    }
    match won[0].cmp(&won[1]) {
        std::cmp::Ordering::Greater => Some(Side::A),
        std::cmp::Ordering::Less => Some(Side::B),
        std::cmp::Ordering::Equal => None,
    }
}

pub fn validate_match(m: &MatchRecord) -> Verdict {
    if m.rank_a.is_none() || m.rank_b.is_none() {
        return Verdict::Drop("missing rank".into());
    }
    if m.rallies.is_empty() {
        return Verdict::Drop("no rallies".into());
    }
    for (i, r) in m.rallies.iter().enumerate() {
        if let Err(e) = r.check() {
            return Verdict::Drop(format!("invalid rally {i}: {e}"));
        }
    }
    if derived_winner(m) != Some(m.winner) {
        return Verdict::Drop("winner mismatch".into());
    }
    Verdict::Keep
}

// Wire format.

#[derive(Serialize, Deserialize)]
struct WirePlayer {
    id: String,
    #[serde(default)]
    rank: Option<i64>,
}

#[derive(Serialize, Deserialize)]
struct WirePlayers {
    a: WirePlayer,
    b: WirePlayer,
}

#[derive(Serialize, Deserialize)]
struct WireRally {
    set: i64,
    server: Side,
    bounces: Vec<BounceEvent>,
}

#[derive(Serialize, Deserialize)]
struct WireMatch {
    match_id: String,
    players: WirePlayers,
    winner: Side,
    rallies: Vec<WireRally>,
}

fn convert(w: WireMatch) -> Result<MatchRecord> {
    let invalid = |rally: Option<usize>, message: String| Error::Validation {
        match_id: w.match_id.clone(),
        rally,
        message,
    };
    if w.match_id.is_empty() {
        return Err(invalid(None, "empty match id".into()));
    }
    if w.players.a.id.is_empty() || w.players.b.id.is_empty() {
        return Err(invalid(None, "empty player id".into()));
    }
    if w.players.a.id == w.players.b.id {
        return Err(invalid(None, "player ids must differ".into()));
    }
    let rank = |r: Option<i64>| -> Result<Option<u32>> {
        match r {
            None => Ok(None),
            Some(v) if v >= 1 && v <= u32::MAX as i64 => Ok(Some(v as u32)),
            Some(v) => Err(invalid(None, format!("rank {v} is not a positive integer"))),
        }
    };
    let rank_a = rank(w.players.a.rank)?;
    let rank_b = rank(w.players.b.rank)?;

    let mut rallies = Vec::with_capacity(w.rallies.len());
    for (i, r) in w.rallies.iter().enumerate() {
        if r.set < 1 || r.set > u32::MAX as i64 {
            return Err(invalid(
                Some(i),
                format!("set number {} is not positive", r.set),
            ));
        }
        let rally = Rally {
            set_number: r.set as u32,
            server: r.server,
            bounces: r.bounces.clone(),
        };
        rally.check().map_err(|e| invalid(Some(i), e))?;
        rallies.push(rally);
    }
    Ok(MatchRecord {
        match_id: w.match_id.clone(),
        player_a_id: w.players.a.id.clone(),
        player_b_id: w.players.b.id.clone(),
        rank_a,
        rank_b,
        rallies,
        winner: w.winner,
    })
}

fn to_wire(m: &MatchRecord) -> WireMatch {
    WireMatch {
        match_id: m.match_id.clone(),
        players: WirePlayers {
            a: WirePlayer {
                id: m.player_a_id.clone(),
                rank: m.rank_a.map(i64::from),
            },
            b: WirePlayer {
                id: m.player_b_id.clone(),
                rank: m.rank_b.map(i64::from),
            },
        },
        winner: m.winner,
        rallies: m
            .rallies
            .iter()
            .map(|r| WireRally {
                set: i64::from(r.set_number),
                server: r.server,
                bounces: r.bounces.clone(),
            })
            .collect(),
    }
}

/// Parses a match file. Every returned record satisfies the type invariants.
pub fn parse_matches(input: &[u8]) -> Result<Vec<MatchRecord>> {
    let wire: Vec<WireMatch> = serde_json::from_slice(input)?;
    wire.into_iter().map(convert).collect()
}

pub fn read_matches<R: Read>(mut reader: R) -> Result<Vec<MatchRecord>> {
    let mut buf = Vec::new();
    reader.read_to_end(&mut buf)?;
    parse_matches(&buf)
}

pub fn serialize_matches(matches: &[MatchRecord]) -> Result<Vec<u8>> {
    let wire: Vec<WireMatch> = matches.iter().map(to_wire).collect();
    Ok(serde_json::to_vec_pretty(&wire)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bounce(kind: BounceKind, side: Side, stroke: Option<Stroke>) -> BounceEvent {
        BounceEvent {
            kind,
            side,
            x: 0.5,
            y: 0.5,
            stroke,
        }
    }

    fn rally(server: Side, sides: &[Side]) -> Rally {
        let n = sides.len();
        let bounces = sides
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let kind = if i == n - 1 {
                    BounceKind::Error
                } else if i == 0 {
                    BounceKind::Serve
                } else {
                    BounceKind::Play
                };
                bounce(kind, s, None)
            })
            .collect();
        Rally {
            set_number: 1,
            server,
            bounces,
        }
    }

    const MINIMAL: &str = r#"[{"match_id":"m1","players":{"a":{"id":"p1","rank":3},"b":{"id":"p2","rank":9}},
        "winner":"b","rallies":[{"set":1,"server":"a","bounces":[
        {"kind":"serve","side":"a","x":0.1,"y":0.2,"stroke":"fh"},
        {"kind":"play","side":"b","x":0.5,"y":0.5,"stroke":"bh"},
        {"kind":"error","side":"a","x":0.9,"y":1.0,"stroke":null}]}]}]"#;

    #[test]
    fn empty_list_parses_to_nothing() {
        assert!(parse_matches(b"[]").unwrap().is_empty());
    }

    #[test]
    fn minimal_record() {
        let ms = parse_matches(MINIMAL.as_bytes()).unwrap();
        assert_eq!(ms.len(), 1);
        assert_eq!(ms[0].rallies.len(), 1);
        assert_eq!(ms[0].rallies[0].bounces.len(), 3);
        assert_eq!(ms[0].rank_b, Some(9));
    }

    #[test]
    fn serve_mid_rally_is_rejected_with_rally_index() {
        let bad = MINIMAL.replacen(r#""kind":"play""#, r#""kind":"serve""#, 1);
        match parse_matches(bad.as_bytes()) {
            Err(Error::Validation {
                match_id, rally, ..
            }) => {
                assert_eq!(match_id, "m1");
                assert_eq!(rally, Some(0));
            }
            other => panic!("expected validation error, got {other:?}"),
        }
        let bad = MINIMAL.replacen(r#""kind":"error""#, r#""kind":"serve""#, 1);
        assert!(matches!(
            parse_matches(bad.as_bytes()),
            Err(Error::Validation { rally: Some(0), .. })
        ));
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err = parse_matches(b"[{\"match_id\": }]").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err:?}");
        let missing = MINIMAL.replace(r#""winner":"b","#, "");
        assert!(matches!(
            parse_matches(missing.as_bytes()),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn unknown_keys_are_ignored() {
        let extra = MINIMAL.replacen(r#""winner":"b""#, r#""winner":"b","venue":"Tokyo""#, 1);
        assert_eq!(parse_matches(extra.as_bytes()).unwrap().len(), 1);
    }

    #[test]
    fn out_of_range_coordinate_and_bad_rank_rejected() {
        let bad = MINIMAL.replacen(r#""x":0.1"#, r#""x":1.5"#, 1);
        assert!(matches!(
            parse_matches(bad.as_bytes()),
            Err(Error::Validation { .. })
        ));
        let bad = MINIMAL.replacen(r#""rank":3"#, r#""rank":0"#, 1);
        assert!(matches!(
            parse_matches(bad.as_bytes()),
            Err(Error::Validation { rally: None, .. })
        ));
        let same = MINIMAL.replacen(r#""id":"p2""#, r#""id":"p1""#, 1);
        assert!(parse_matches(same.as_bytes()).is_err());
    }

    #[test]
    fn winner_rule() {
        use Side::*;
        assert_eq!(rally(A, &[A, B, A]).winner(), B);
        assert_eq!(rally(A, &[A, B]).winner(), A);
        assert_eq!(rally(B, &[B, B]).winner(), A);
    }

    #[test]
    fn shot_count_classes() {
        use Side::*;
        for n in 1..=10usize {
            let sides: Vec<Side> = (0..n).map(|i| if i % 2 == 0 { A } else { B }).collect();
            let r = rally(A, &sides);
            assert_eq!(r.shot_count(), n);
            let expected = if n >= 5 {
                RallyLength::Long
            } else {
                RallyLength::Short
            };
            assert_eq!(r.length_class(), expected, "n = {n}");
        }
    }

    #[test]
    fn single_bounce_rally_is_a_service_fault() {
        let r = Rally {
            set_number: 1,
            server: Side::A,
            bounces: vec![bounce(BounceKind::Error, Side::A, Some(Stroke::Forehand))],
        };
        assert!(r.check().is_ok());
        assert_eq!(r.winner(), Side::B);
        assert_eq!(winning_stroke(&r), None);
    }

    #[test]
    fn zone_corners_and_centre() {
        let at = |x, y| {
            zone_of(&BounceEvent {
                kind: BounceKind::Play,
                side: Side::A,
                x,
                y,
                stroke: None,
            })
        };
        assert_eq!(at(0.0, 0.0).unwrap().value(), 1);
        assert_eq!(at(1.0, 1.0).unwrap().value(), 9);
        assert_eq!(at(0.5, 0.34).unwrap().value(), 5);
        assert!(at(-0.01, 0.5).is_err());
        assert!(at(0.5, f64::NAN).is_err());
    }

    #[test]
    fn zone_matches_cell_centre_enumeration() {
        // Brute force: the centre of cell (row, col) must land in 3*row + col + 1.
        for row in 0..3u8 {
            for col in 0..3u8 {
                let b = BounceEvent {
                    kind: BounceKind::Play,
                    side: Side::B,
                    x: (f64::from(col) + 0.5) / 3.0,
                    y: (f64::from(row) + 0.5) / 3.0,
                    stroke: None,
                };
                assert_eq!(zone_of(&b).unwrap().value(), 3 * row + col + 1);
            }
        }
    }

    #[test]
    fn winning_stroke_cases() {
        use BounceKind::*;
        let mk = |bs: Vec<BounceEvent>| Rally {
            set_number: 1,
            server: Side::A,
            bounces: bs,
        };
        let r = mk(vec![
            bounce(Serve, Side::A, Some(Stroke::Forehand)),
            bounce(Play, Side::B, Some(Stroke::Backhand)),
            bounce(Error, Side::A, Some(Stroke::Forehand)),
        ]);
        assert_eq!(winning_stroke(&r), Some(Stroke::Backhand));
        let r = mk(vec![
            bounce(Serve, Side::A, Some(Stroke::Forehand)),
            bounce(Error, Side::B, None),
        ]);
        assert_eq!(winning_stroke(&r), Some(Stroke::Forehand));
        let r = mk(vec![
            bounce(Serve, Side::A, Some(Stroke::Forehand)),
            bounce(Play, Side::B, None),
            bounce(Error, Side::A, None),
        ]);
        assert_eq!(winning_stroke(&r), None);
    }

    fn scripted_match(winner: Side, rank_a: Option<u32>) -> MatchRecord {
        use Side::*;
        // A takes 11 straight points in each of four sets.
        let mut rallies = Vec::new();
        for set in 1..=4 {
            for _ in 0..11 {
                let mut r = rally(A, &[A, B]);
                r.set_number = set;
                rallies.push(r);
            }
        }
        MatchRecord {
            match_id: "m".into(),
            player_a_id: "p".into(),
            player_b_id: "q".into(),
            rank_a,
            rank_b: Some(4),
            rallies,
            winner,
        }
    }

    #[test]
    fn validate_verdicts() {
        assert_eq!(
            validate_match(&scripted_match(Side::A, None)),
            Verdict::Drop("missing rank".into())
        );
        assert_eq!(
            validate_match(&scripted_match(Side::A, Some(1))),
            Verdict::Keep
        );
        assert_eq!(
            validate_match(&scripted_match(Side::B, Some(1))),
            Verdict::Drop("winner mismatch".into())
        );
    }
}
