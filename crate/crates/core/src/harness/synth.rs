//! Synthetic singles matches from a latent skill model.
//!
//! Each player has a skill, a serve advantage, a forehand bias and a
//! long-rally bias. Points are played under standard scoring (sets to 11,
//! win by two, best of seven; service changes every two points and every
//! point from 10-10). The server wins a point with probability
//! `logistic(skill gap + serve advantage + long-rally term + form gap)`,
//! where form is a per-match normal draw scaled by `noise`.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::match_data::{BounceEvent, BounceKind, MatchRecord, Rally, Side, Stroke};
use crate::util::{derive_seed, rng_from_seed, sigmoid, Rng};

const POINTS_PER_SET: u32 = 11;
const SETS_TO_WIN: u32 = 4;
const LONG_RALLY_PROB: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_players: usize,
    pub n_matches: usize,
    pub skill_spread: f64,
    pub serve_adv_spread: f64,
    pub stroke_bias_spread: f64,
    pub rally_len_bias_spread: f64,
    /// Standard deviation of each player's per-match form.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_players: 40,
            n_matches: 400,
            skill_spread: 0.14,
            serve_adv_spread: 0.1,
            stroke_bias_spread: 0.5,
            rally_len_bias_spread: 0.1,
            noise: 0.1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_players < 2 {
            return Err(Error::domain("synthetic config needs at least two players"));
        }
        if self.n_matches == 0 {
            return Err(Error::domain("synthetic config needs at least one match"));
        }
        let spreads = [
            self.skill_spread,
            self.serve_adv_spread,
            self.stroke_bias_spread,
            self.rally_len_bias_spread,
            self.noise,
        ];
        if spreads.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::domain(
                "synthetic spreads must be finite and non-negative",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Player {
    pub id: String,
    pub skill: f64,
    /// Logit bonus while serving.
    pub serve_adv: f64,
    /// Logit of a won point ending on a forehand.
    pub forehand_bias: f64,
    /// Logit bonus in long rallies, equal penalty in short ones.
    pub long_rally_bias: f64,
    pub rank: u32,
}

impl Player {
    pub fn new(id: impl Into<String>, skill: f64) -> Self {
        Player {
            id: id.into(),
            skill,
            serve_adv: 0.0,
            forehand_bias: 0.0,
            long_rally_bias: 0.0,
            rank: 1,
        }
    }
}

fn normal(rng: &mut Rng, sd: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    sd * z
}

/// Draws the population; ranks follow latent skill (1 = strongest).
pub fn draw_players(cfg: &SynthConfig) -> Result<Vec<Player>> {
    cfg.validate()?;
    let mut rng = rng_from_seed(derive_seed(cfg.seed, 0));
    let mut players: Vec<Player> = (0..cfg.n_players)
        .map(|i| Player {
            id: format!("p{:03}", i + 1),
            skill: normal(&mut rng, cfg.skill_spread),
            serve_adv: normal(&mut rng, cfg.serve_adv_spread),
            forehand_bias: normal(&mut rng, cfg.stroke_bias_spread),
            long_rally_bias: normal(&mut rng, cfg.rally_len_bias_spread),
            rank: 0,
        })
        .collect();
    let mut order: Vec<usize> = (0..players.len()).collect();
    order.sort_by(|&a, &b| {
        players[b]
            .skill
            .total_cmp(&players[a].skill)
            .then(a.cmp(&b))
    });
    for (r, &i) in order.iter().enumerate() {
        players[i].rank = r as u32 + 1;
    }
    Ok(players)
}

fn server_logit(server: &Player, receiver: &Player, form_gap: f64, long: bool) -> f64 {
    let rally_term = server.long_rally_bias - receiver.long_rally_bias;
    server.skill - receiver.skill
        + server.serve_adv
        + form_gap
        + if long { rally_term } else { -rally_term }
}

/// Probability that `a` wins a point against `b`, averaged over who serves
/// and over rally length, at neutral form.
pub fn expected_point_win_prob(a: &Player, b: &Player) -> f64 {
    let serving = |s: &Player, r: &Player| {
        LONG_RALLY_PROB * sigmoid(server_logit(s, r, 0.0, true))
            + (1.0 - LONG_RALLY_PROB) * sigmoid(server_logit(s, r, 0.0, false))
    };
    0.5 * serving(a, b) + 0.5 * (1.0 - serving(b, a))
}

/// Shot count with the parity that puts the last error on the loser's side.
fn rally_length(rng: &mut Rng, server_won: bool, long: bool) -> usize {
    // Even counts end on the receiver's half (server wins), odd on the server's.
    let base = if long {
        let mut extra = 0;
        while rng.random_bool(0.5) && extra < 20 {
            extra += 1;
        }
        5 + 2 * extra
    } else if server_won {
        if rng.random_bool(0.4) {
            2
        } else {
            4
        }
    } else if rng.random_bool(0.1) {
        1
    } else {
        3
    };
    if long && server_won {
        base + 1
    } else {
        base
    }
}

fn random_stroke(rng: &mut Rng) -> Stroke {
    if rng.random_bool(0.5) {
        Stroke::Forehand
    } else {
        Stroke::Backhand
    }
}

fn build_rally(
    rng: &mut Rng,
    set_number: u32,
    server: Side,
    shots: usize,
    winner_forehand_prob: f64,
) -> Rally {
    let bounces = (0..shots)
        .map(|i| {
            let side = if i % 2 == 0 {
                server
            } else {
                server.opponent()
            };
            let kind = if i == shots - 1 {
                BounceKind::Error
            } else if i == 0 {
                BounceKind::Serve
            } else {
                BounceKind::Play
            };
            let stroke = if kind == BounceKind::Error {
                None
            } else if shots >= 2 && i == shots - 2 {
                Some(if rng.random_bool(winner_forehand_prob) {
                    Stroke::Forehand
                } else {
                    Stroke::Backhand
                })
            } else {
                Some(random_stroke(rng))
            };
            BounceEvent {
                kind,
                side,
                x: rng.random::<f64>(),
                y: rng.random::<f64>(),
                stroke,
            }
        })
        .collect();
    Rally {
        set_number,
        server,
        bounces,
    }
}

/// Plays one match point by point.
pub fn simulate_match(
    match_id: impl Into<String>,
    a: &Player,
    b: &Player,
    noise: f64,
    rng: &mut Rng,
) -> MatchRecord {
    let form_gap = normal(rng, noise) - normal(rng, noise);
    let player = |s: Side| if s == Side::A { a } else { b };
    let mut first_server = if rng.random_bool(0.5) {
        Side::A
    } else {
        Side::B
    };
    let mut sets = [0u32; 2];
    let mut rallies = Vec::new();
    let mut set_number = 1;
    while sets[0] < SETS_TO_WIN && sets[1] < SETS_TO_WIN {
        let mut score = [0u32; 2];
        loop {
            let (hi, lo) = (score[0].max(score[1]), score[0].min(score[1]));
            if hi >= POINTS_PER_SET && hi - lo >= 2 {
                break;
            }
            let played = score[0] + score[1];
            let server = if played >= 2 * (POINTS_PER_SET - 1) {
                if played % 2 == 0 {
                    first_server
                } else {
                    first_server.opponent()
                }
            } else if (played / 2) % 2 == 0 {
                first_server
            } else {
                first_server.opponent()
            };
            let (s, r) = (player(server), player(server.opponent()));
            let gap = if server == Side::A {
                form_gap
            } else {
                -form_gap
            };
            let long = rng.random_bool(LONG_RALLY_PROB);
            let server_won = rng.random_bool(sigmoid(server_logit(s, r, gap, long)));
            let winner = if server_won {
                server
            } else {
                server.opponent()
            };
            let shots = rally_length(rng, server_won, long);
            let fh_prob = sigmoid(player(winner).forehand_bias);
            rallies.push(build_rally(rng, set_number, server, shots, fh_prob));
            score[winner as usize] += 1;
        }
        sets[usize::from(score[1] > score[0])] += 1;
        first_server = first_server.opponent();
        set_number += 1;
    }
    MatchRecord {
        match_id: match_id.into(),
        player_a_id: a.id.clone(),
        player_b_id: b.id.clone(),
        rank_a: Some(a.rank),
        rank_b: Some(b.rank),
        rallies,
        winner: if sets[0] > sets[1] { Side::A } else { Side::B },
    }
}

fn draw_pair(rng: &mut Rng, n: usize) -> (usize, usize) {
    let i = rng.random_range(0..n);
    let mut j = rng.random_range(0..n - 1);
    if j >= i {
        j += 1;
    }
    (i, j)
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<Vec<MatchRecord>> {
    let players = draw_players(cfg)?;
    Ok(generate_with_players(cfg, &players))
}

pub fn generate_with_players(cfg: &SynthConfig, players: &[Player]) -> Vec<MatchRecord> {
    let mut rng = rng_from_seed(derive_seed(cfg.seed, 1));
    (0..cfg.n_matches)
        .map(|m| {
            let (i, j) = draw_pair(&mut rng, players.len());
            simulate_match(
                format!("m{:05}", m + 1),
                &players[i],
                &players[j],
                cfg.noise,
                &mut rng,
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BayesEstimate {
    pub accuracy: f64,
    pub std_error: f64,
    pub n_sim: usize,
}

pub const MIN_BAYES_SIMULATIONS: usize = 1000;

/// Monte-Carlo accuracy of predicting the player with the higher expected
/// point-win probability, over the configured population and pairing.
pub fn bayes_accuracy(cfg: &SynthConfig, n_sim: usize) -> Result<BayesEstimate> {
    bayes_accuracy_with_stream(cfg, n_sim, derive_seed(cfg.seed, 2))
}

/// As [`bayes_accuracy`], with the simulation randomness drawn from `stream`.
pub fn bayes_accuracy_with_stream(
    cfg: &SynthConfig,
    n_sim: usize,
    stream: u64,
) -> Result<BayesEstimate> {
    if n_sim < MIN_BAYES_SIMULATIONS {
        return Err(Error::domain(format!(
            "need at least {MIN_BAYES_SIMULATIONS} simulations, got {n_sim}"
        )));
    }
    let players = draw_players(cfg)?;
    let mut rng = rng_from_seed(stream);
    let mut credit = 0.0;
    for _ in 0..n_sim {
        let (i, j) = draw_pair(&mut rng, players.len());
        let (a, b) = (&players[i], &players[j]);
        let p = expected_point_win_prob(a, b);
        let m = simulate_match("sim", a, b, cfg.noise, &mut rng);
        credit += if p == 0.5 {
            0.5
        } else if (p > 0.5) == (m.winner == Side::A) {
            1.0
        } else {
            0.0
        };
    }
    let accuracy = credit / n_sim as f64;
    Ok(BayesEstimate {
        accuracy,
        std_error: (accuracy * (1.0 - accuracy) / n_sim as f64).sqrt(),
        n_sim,
    })
}
