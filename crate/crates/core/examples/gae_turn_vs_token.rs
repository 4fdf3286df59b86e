//! Advantages for a three-turn episode, once over turns and once over the
//! flattened token chain with the reward on each turn's last token.

use era_core::rl::{gae_token, gae_turn, place_turn_reward, td_residuals};

fn main() {
    let (gamma, lambda) = (0.99, 0.95);
    let rewards = [1.0, -0.5, 4.0];
    let values = [0.8, 0.6, 2.5];
    let lens = [4, 3, 5];

    let turn = gae_turn(&td_residuals(&rewards, &values, gamma).unwrap(), gamma, lambda);
    println!("turn-level: {turn:.3?}");

    let tok_r: Vec<Vec<f64>> = rewards.iter().zip(lens).map(|(&r, n)| place_turn_reward(r, n)).collect();
    let tok_v: Vec<Vec<f64>> = values.iter().zip(lens).map(|(&v, n)| vec![v; n]).collect();
    for (t, a) in gae_token(&tok_r, &tok_v, gamma, lambda).unwrap().iter().enumerate() {
        println!("token-level turn {t}: {a:.3?}");
    }
}
