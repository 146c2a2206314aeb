#![allow(dead_code)]

use ttpredict::match_data::{BounceEvent, BounceKind, MatchRecord, Rally, Side, Stroke};

pub fn bounce(kind: BounceKind, side: Side, stroke: Option<Stroke>) -> BounceEvent {
    BounceEvent {
        kind,
        side,
        x: 0.5,
        y: 0.5,
        stroke,
    }
}

/// Rally whose bounces alternate sides starting on the server's half.
/// `strokes[i]` annotates bounce `i`; the final error is unannotated.
pub fn alternating(set: u32, server: Side, strokes: &[Option<Stroke>]) -> Rally {
    let n = strokes.len() + 1;
    let bounces = (0..n)
        .map(|i| {
            let side = if i % 2 == 0 {
                server
            } else {
                server.opponent()
            };
            let kind = if i == n - 1 {
                BounceKind::Error
            } else if i == 0 {
                BounceKind::Serve
            } else {
                BounceKind::Play
            };
            bounce(kind, side, strokes.get(i).copied().flatten())
        })
        .collect();
    Rally {
        set_number: set,
        server,
        bounces,
    }
}

/// Rally won by `winner` with the given length class, the winning shot
/// annotated with `stroke` and every other shot a forehand.
pub fn won_rally(
    set: u32,
    server: Side,
    winner: Side,
    long: bool,
    stroke: Option<Stroke>,
) -> Rally {
    let n = match (winner == server, long) {
        (true, false) => 2,
        (false, false) => 3,
        (true, true) => 6,
        (false, true) => 5,
    };
    let mut strokes = vec![Some(Stroke::Forehand); n - 1];
    strokes[n - 2] = stroke;
    alternating(set, server, &strokes)
}

pub fn record(id: &str, rallies: Vec<Rally>, winner: Side) -> MatchRecord {
    MatchRecord {
        match_id: id.to_string(),
        player_a_id: "pa".into(),
        player_b_id: "pb".into(),
        rank_a: Some(5),
        rank_b: Some(12),
        rallies,
        winner,
    }
}

/// Independent score keeper under standard rules: games to 11 won by two,
/// best of seven, service in pairs until 10-10 and alternating after,
/// first server alternating between games.
#[derive(Debug, PartialEq, Eq)]
pub struct ScoreSheet {
    pub games: Vec<(u32, u32)>,
    pub winner: Side,
}

pub fn score_match(m: &MatchRecord) -> Result<ScoreSheet, String> {
    let mut games = Vec::new();
    let mut idx = 0;
    let mut games_won = (0, 0);
    let mut first_server = None;
    while games_won.0 < 4 && games_won.1 < 4 {
        let game_no = games.len() as u32 + 1;
        let (mut a, mut b) = (0u32, 0u32);
        loop {
            let done = (a >= 11 || b >= 11) && a.abs_diff(b) >= 2;
            if done {
                break;
            }
            let r = m
                .rallies
                .get(idx)
                .ok_or_else(|| format!("ran out of rallies in game {game_no} at {a}-{b}"))?;
            if r.set_number != game_no {
                return Err(format!(
                    "rally {idx} labelled set {} during game {game_no}",
                    r.set_number
                ));
            }
            let opener = *first_server.get_or_insert(r.server);
            let this_game_first = if game_no % 2 == 1 {
                opener
            } else {
                opener.opponent()
            };
            let played = a + b;
            let turn = if played >= 20 { played } else { played / 2 };
            let expected = if turn % 2 == 0 {
                this_game_first
            } else {
                this_game_first.opponent()
            };
            if r.server != expected {
                return Err(format!(
                    "rally {idx}: {:?} served, expected {:?}",
                    r.server, expected
                ));
            }
            let first = r.bounces[0].side;
            let last = r.bounces[r.bounces.len() - 1].side;
            let server_won = first != last;
            if server_won == (r.server == Side::A) {
                a += 1;
            } else {
                b += 1;
            }
            idx += 1;
        }
        if a > b {
            games_won.0 += 1;
        } else {
            games_won.1 += 1;
        }
        games.push((a, b));
    }
    if idx != m.rallies.len() {
        return Err(format!(
            "{} rallies after the match ended",
            m.rallies.len() - idx
        ));
    }
    Ok(ScoreSheet {
        games,
        winner: if games_won.0 > games_won.1 {
            Side::A
        } else {
            Side::B
        },
    })
}
