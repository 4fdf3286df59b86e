use super::gradcheck::{max_rel_error, perturbed_actor, perturbed_critic, probe_indices, random_prompt, random_response};
use super::*;
use crate::types::EnvKind;

const TOL: f64 = 1e-3;
const EPS: f64 = 1e-5;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn log_prob_gradient_matches_finite_differences() {
    let mut r = rng(1);
    for _ in 0..12 {
        let p = perturbed_actor(6, &mut r);
        let f = featurize(&random_prompt(&mut r));
        let y = random_response(&mut r, 6);
        let (_, g) = log_prob_and_grad(&p, &f, &y);
        let idx = probe_indices(&g, 24, &mut r);
        let obj = |th: &[f64]| {
            let q = PolicyParams { config: p.config, theta: th.to_vec() };
            actor_forward(&q, &f, &y).trace.total
        };
        let err = max_rel_error(obj, &p.theta, &g, &idx, EPS);
        assert!(err < TOL, "rel err {err}");
    }
}

#[test]
fn entropy_gradient_matches_finite_differences() {
    let mut r = rng(2);
    for _ in 0..8 {
        let p = perturbed_actor(6, &mut r);
        let f = featurize(&random_prompt(&mut r));
        let y = random_response(&mut r, 5);
        let wl: Vec<f64> = (0..y.len()).map(|_| r.gen_range(-1.0..1.0)).collect();
        let we: Vec<f64> = (0..y.len()).map(|_| r.gen_range(-1.0..1.0)).collect();
        let pass = actor_forward(&p, &f, &y);
        let mut g = vec![0.0; p.len()];
        actor_backward(&p, &f, &y, &pass, &wl, &we, &mut g);
        let idx = probe_indices(&g, 24, &mut r);
        let obj = |th: &[f64]| {
            let q = PolicyParams { config: p.config, theta: th.to_vec() };
            let a = actor_forward(&q, &f, &y);
            (0..y.len()).map(|i| wl[i] * a.trace.token_logp[i] + we[i] * a.entropy[i]).sum()
        };
        let err = max_rel_error(obj, &p.theta, &g, &idx, EPS);
        assert!(err < TOL, "rel err {err}");
    }
}

#[test]
fn value_gradients_match_finite_differences() {
    let mut r = rng(3);
    for _ in 0..8 {
        let v = perturbed_critic(6, &mut r);
        let f = featurize(&random_prompt(&mut r));
        let (_, g) = value_and_grad_turn(&v, &f);
        let idx = probe_indices(&g, 24, &mut r);
        let obj = |ph: &[f64]| value_turn(&ValueParams { config: v.config, phi: ph.to_vec() }, &f);
        assert!(max_rel_error(obj, &v.phi, &g, &idx, EPS) < TOL);

        let y = random_response(&mut r, 6);
        let dv: Vec<f64> = (0..y.len()).map(|_| r.gen_range(-1.0..1.0)).collect();
        let mut g = vec![0.0; v.len()];
        value_token_and_grad(&v, &f, &y, &dv, &mut g);
        let idx = probe_indices(&g, 24, &mut r);
        let obj = |ph: &[f64]| {
            let q = ValueParams { config: v.config, phi: ph.to_vec() };
            value_token(&q, &f, &y).iter().zip(&dv).map(|(a, b)| a * b).sum()
        };
        assert!(max_rel_error(obj, &v.phi, &g, &idx, EPS) < TOL);
    }
}

#[test]
fn softmax_is_normalised_and_shift_invariant() {
    let mut r = rng(4);
    for _ in 0..50 {
        let z: Vec<f64> = (0..30).map(|_| r.gen_range(-20.0..20.0)).collect();
        let (p, lp) = log_softmax(&z);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let c = r.gen_range(-500.0..500.0);
        let (_, lq) = log_softmax(&z.iter().map(|x| x + c).collect::<Vec<_>>());
        for (a, b) in lp.iter().zip(&lq) {
            assert!((a - b).abs() < 1e-9);
        }
    }
    let (p, _) = log_softmax(&[1000.0, 0.0]);
    assert!(p.iter().all(|x| x.is_finite()));
}

#[test]
fn sampling_trace_matches_forward_pass() {
    let mut r = rng(5);
    let p = perturbed_actor(16, &mut r);
    let f = featurize(&random_prompt(&mut r));
    let (y, trace) = sample_response(&p, &f, &mut r, 1.0, 10);
    let pass = actor_forward(&p, &f, &y);
    for (a, b) in trace.token_logp.iter().zip(&pass.trace.token_logp) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn greedy_is_deterministic_and_the_cold_limit() {
    let mut r = rng(6);
    let p = perturbed_actor(16, &mut r);
    let f = featurize(&random_prompt(&mut r));
    let (a, _) = sample_response(&p, &f, &mut rng(10), 0.0, 12);
    let (b, _) = sample_response(&p, &f, &mut rng(11), 0.0, 12);
    let (c, _) = sample_response(&p, &f, &mut rng(12), 1e-9, 12);
    assert_eq!(a, b);
    assert_eq!(a, c);
}

#[test]
fn untrained_head_has_uniform_loss() {
    let mut p = PolicyParams::init(NetConfig { hidden: 8, ..NetConfig::default() }, 0);
    p.theta.iter_mut().for_each(|x| *x = 0.0);
    let data = crate::priors::build_corpus(
        crate::priors::PriorKind::MaskedAction,
        EnvKind::High,
        4,
        0,
        &Default::default(),
    )
    .unwrap();
    let ce = token_cross_entropy(&p, &data);
    assert!((ce - (vocab().len() as f64).ln()).abs() < 1e-12);
}

#[test]
fn supervised_training_memorises_a_small_set() {
    let data = crate::priors::build_corpus(
        crate::priors::PriorKind::TrajAug,
        EnvKind::High,
        1,
        3,
        &Default::default(),
    )
    .unwrap();
    let mut p = PolicyParams::init(NetConfig { hidden: 32, ..NetConfig::default() }, 1);
    let cfg = EplConfig { epochs: 60, lr: 1e-2, batch: 4, ..EplConfig::default() };
    let rep = epl_train(&mut p, &data, &cfg).unwrap();
    assert!(rep.epoch_token_loss.last().unwrap() < &rep.epoch_token_loss[0]);
    let mut r = rng(0);
    for d in &data {
        let (y, _) = sample_response(&p, &featurize(&d.prompt), &mut r, 0.0, 40);
        assert_eq!(vocab().render(&y), vocab().render(&d.target));
    }
    assert!(matches!(epl_train(&mut p, &[], &cfg), Err(EplError::EmptyDataset)));
}

#[test]
fn clip_scales_to_max_norm() {
    let mut g = vec![3.0, 4.0];
    assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
    assert!((g[0] - 0.6).abs() < 1e-12 && (g[1] - 0.8).abs() < 1e-12);
    let mut h = vec![0.3, 0.4];
    clip_grad_norm(&mut h, 1.0);
    assert_eq!(h, vec![0.3, 0.4]);
}

#[test]
fn checkpoint_round_trip_and_guards() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    let a = PolicyParams::init(NetConfig { hidden: 4, ..NetConfig::default() }, 9);
    let ck = Checkpoint::new(a.clone(), Some(ValueParams::from_actor(&a)));
    ck.save(&path).unwrap();
    assert_eq!(Checkpoint::load(&path).unwrap(), ck);

    let mut bad = ck.clone();
    bad.vocab_version = "0".into();
    bad.save(&path).unwrap();
    assert!(matches!(Checkpoint::load(&path), Err(CheckpointError::VocabMismatch { .. })));
    let mut bad = ck;
    bad.config_hash = "deadbeef".into();
    bad.save(&path).unwrap();
    assert!(matches!(Checkpoint::load(&path), Err(CheckpointError::HashMismatch)));
}
