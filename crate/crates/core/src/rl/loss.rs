//! Clipped policy objective and clipped value regression, each with its
//! analytic gradient.

use serde::{Deserialize, Serialize};

use super::{GaeMode, TurnRecord};
use crate::policy::{actor_backward, actor_forward, value_token, value_token_and_grad, value_turn, value_turn_backward, PolicyParams, ValueParams};

/// Terms of the policy objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyTerms {
    pub clip_eps: f64,
    pub entropy_coef: f64,
    /// Weight of the `log π − log π_ref` penalty; 0 disables it.
    pub kl_coef: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PolicyStats {
    /// Value of the maximised objective (surrogate + entropy − KL).
    pub objective: f64,
    pub surrogate: f64,
    /// Mean per-token entropy.
    pub entropy: f64,
    /// Fraction of tokens whose clipped branch was selected.
    pub clip_frac: f64,
}

/// Objective `J = mean_t (1/|y_t|) Σ_i [min(ρ_i A_ti, clip(ρ_i, 1±ε) A_ti)
/// + c_H H_ti − β (log π_i − log π_ref,i)]` and `∂J/∂θ`. Training ascends
/// `J`. Returns zeros for an empty batch.
pub fn ppo_policy_objective(params: &PolicyParams, batch: &[&TurnRecord], terms: &PolicyTerms) -> (PolicyStats, Vec<f64>) {
    let mut g = vec![0.0; params.len()];
    let mut st = PolicyStats::default();
    if batch.is_empty() {
        return (st, g);
    }
    let b = batch.len() as f64;
    let mut tokens = 0usize;
    for rec in batch {
        let y = &rec.response;
        let n = y.len();
        let w = 1.0 / (b * n as f64);
        let pass = actor_forward(params, &rec.feats, y);
        let mut w_logp = vec![0.0; n];
        let w_ent = vec![terms.entropy_coef * w; n];
        for i in 0..n {
            let lp = pass.trace.token_logp[i];
            let a = rec.advantages[i];
            let rho = (lp - rec.old_logp[i]).exp();
            let unclipped = rho * a;
            let clipped = rho.clamp(1.0 - terms.clip_eps, 1.0 + terms.clip_eps) * a;
            let kl = rec.ref_logp.as_ref().map(|r| lp - r[i]).unwrap_or(0.0);
            if unclipped <= clipped {
                st.surrogate += w * unclipped;
                w_logp[i] += w * unclipped;
            } else {
                st.surrogate += w * clipped;
                st.clip_frac += 1.0;
            }
            if terms.kl_coef != 0.0 && rec.ref_logp.is_some() {
                st.objective -= w * terms.kl_coef * kl;
                w_logp[i] -= w * terms.kl_coef;
            }
            st.objective += w * terms.entropy_coef * pass.entropy[i];
            st.entropy += pass.entropy[i];
        }
        tokens += n;
        actor_backward(params, &rec.feats, y, &pass, &w_logp, &w_ent, &mut g);
    }
    st.objective += st.surrogate;
    st.entropy /= tokens as f64;
    st.clip_frac /= tokens as f64;
    (st, g)
}

/// `½ max((V − R)², (V_old + clip(V − V_old, ±c) − R)²)` and its slope in `V`.
fn clipped_sq(v: f64, old: f64, target: f64, clip: f64) -> (f64, f64) {
    let u = (v - target).powi(2);
    // Inside the band `old + (v − old)` can round away from `v`.
    if (v - old).abs() <= clip {
        return (0.5 * u, v - target);
    }
    let vc = old + (v - old).clamp(-clip, clip);
    let w = (vc - target).powi(2);
    if u >= w {
        (0.5 * u, v - target)
    } else {
        (0.5 * w, 0.0)
    }
}

/// Mean clipped value loss and `∂L/∂φ`. Targets are stored numbers, so the
/// gradient only flows through the prediction. Turn mode has one target per
/// turn; token mode averages over each turn's tokens first.
pub fn value_loss(phi: &ValueParams, batch: &[&TurnRecord], value_clip: f64, mode: GaeMode) -> (f64, Vec<f64>) {
    let mut g = vec![0.0; phi.len()];
    if batch.is_empty() {
        return (0.0, g);
    }
    let b = batch.len() as f64;
    let mut loss = 0.0;
    for rec in batch {
        match mode {
            GaeMode::TurnLevel => {
                let v = value_turn(phi, &rec.feats);
                let (l, dv) = clipped_sq(v, rec.old_values[0], rec.targets[0], value_clip);
                loss += l / b;
                if dv != 0.0 {
                    value_turn_backward(phi, &rec.feats, dv / b, &mut g);
                }
            }
            GaeMode::TokenLevel => {
                let n = rec.response.len() as f64;
                let vs = value_token(phi, &rec.feats, &rec.response);
                let mut dv = vec![0.0; vs.len()];
                for i in 0..vs.len() {
                    let (l, d) = clipped_sq(vs[i], rec.old_values[i], rec.targets[i], value_clip);
                    loss += l / (b * n);
                    dv[i] = d / (b * n);
                }
                value_token_and_grad(phi, &rec.feats, &rec.response, &dv, &mut g);
            }
        }
    }
    (loss, g)
}
