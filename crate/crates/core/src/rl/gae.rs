//! TD residuals and generalized advantage estimates.

use super::RlError;

/// `δ_t = r_t + γ V(x_{t+1}) − V(x_t)`, with the value after the last
/// step taken as 0.
pub fn td_residuals(rewards: &[f64], values: &[f64], gamma: f64) -> Result<Vec<f64>, RlError> {
    if rewards.len() != values.len() {
        return Err(RlError::LengthMismatch { rewards: rewards.len(), values: values.len() });
    }
    Ok((0..rewards.len())
        .map(|t| {
            let next = values.get(t + 1).copied().unwrap_or(0.0);
            rewards[t] + gamma * next - values[t]
        })
        .collect())
}

/// Backward recursion `A_t = δ_t + γλ A_{t+1}`.
pub fn gae_turn(deltas: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let mut adv = vec![0.0; deltas.len()];
    let mut acc = 0.0;
    for t in (0..deltas.len()).rev() {
        acc = deltas[t] + gamma * lambda * acc;
        adv[t] = acc;
    }
    adv
}

/// Explicit sum `A_t = Σ_l (γλ)^l δ_{t+l}`; quadratic, used as an oracle.
pub fn gae_turn_sum(deltas: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let gl = gamma * lambda;
    (0..deltas.len())
        .map(|t| {
            let mut w = 1.0;
            let mut s = 0.0;
            for d in &deltas[t..] {
                s += w * d;
                w *= gl;
            }
            s
        })
        .collect()
}

/// Per-token rewards for one turn: everything on the final token.
pub fn place_turn_reward(reward: f64, len: usize) -> Vec<f64> {
    let mut r = vec![0.0; len];
    if let Some(last) = r.last_mut() {
        *last = reward;
    }
    r
}

/// GAE over the flattened token chain of an episode. `rewards[t]` and
/// `values[t]` hold the per-token rewards and values of turn `t`; the result
/// has the same shape.
pub fn gae_token(rewards: &[Vec<f64>], values: &[Vec<f64>], gamma: f64, lambda: f64) -> Result<Vec<Vec<f64>>, RlError> {
    let flat_r: Vec<f64> = rewards.iter().flatten().copied().collect();
    let flat_v: Vec<f64> = values.iter().flatten().copied().collect();
    if rewards.iter().map(Vec::len).ne(values.iter().map(Vec::len)) {
        return Err(RlError::LengthMismatch { rewards: flat_r.len(), values: flat_v.len() });
    }
    let adv = gae_turn(&td_residuals(&flat_r, &flat_v, gamma)?, gamma, lambda);
    let mut out = Vec::with_capacity(rewards.len());
    let mut at = 0;
    for r in rewards {
        out.push(adv[at..at + r.len()].to_vec());
        at += r.len();
    }
    Ok(out)
}

/// One advantage repeated over every token of its turn.
pub fn broadcast_advantage(advantage: f64, len: usize) -> Vec<f64> {
    vec![advantage; len]
}
