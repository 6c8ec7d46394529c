//! Instance generators shared by the integration and acceptance tests.
#![allow(dead_code)]

use persuade::model::Primitives;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn even_times(n: usize, horizon: f64) -> Vec<f64> {
    (0..n).map(|k| horizon * k as f64 / (n - 1) as f64).collect()
}

pub fn random_prior(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut p: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..1.0)).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= s);
    let head: f64 = p[..n - 1].iter().sum();
    p[n - 1] = 1.0 - head;
    p
}

/// Action-form instance: the agent pays a flow cost `c t`, the principal's
/// payoff drifts by `d_a t` per action.
pub fn action_form(rng: &mut ChaCha8Rng, max_states: usize, max_actions: usize, max_times: usize) -> Primitives {
    let n = rng.gen_range(2..=max_states);
    let na = rng.gen_range(2..=max_actions);
    let nt = rng.gen_range(2..=max_times);
    let prior = random_prior(rng, n);
    let ub: Vec<f64> = (0..n * na).map(|_| rng.gen_range(0.0..1.0)).collect();
    let vb: Vec<f64> = (0..n * na).map(|_| rng.gen_range(0.0..1.0)).collect();
    let drift: Vec<f64> = (0..na).map(|_| rng.gen_range(-0.3..0.6)).collect();
    let c = rng.gen_range(0.05..0.5);
    Primitives::from_fn(
        n,
        na,
        even_times(nt, 1.0),
        prior,
        |s, a, t| ub[s * na + a] - c * t,
        |s, a, t| vb[s * na + a] + drift[a] * t,
    )
    .expect("generated instance is valid")
}

/// Match-the-state environment where the principal gains from delay and
/// prefers one action: information is worth rationing over time.
pub fn delay_rewarding(rng: &mut ChaCha8Rng) -> Primitives {
    let n = rng.gen_range(2..=3);
    let nt = rng.gen_range(3..=6);
    let prior = random_prior(rng, n);
    let c = rng.gen_range(0.1..0.4);
    let bonus: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    let d = rng.gen_range(0.2..1.0);
    Primitives::from_fn(
        n,
        n,
        even_times(nt, 1.0),
        prior,
        |s, a, t| f64::from(s == a) - c * t,
        |_, a, t| bonus[a] + d * t,
    )
    .expect("generated instance is valid")
}
