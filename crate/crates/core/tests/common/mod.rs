//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use std::collections::HashMap;

use rrll::nn::Mlp;

/// Plain forward pass over an [`Mlp`] parameter vector, written without the
/// crate's own forward code: rectified hidden layers, linear output.
pub fn mlp_output(sizes: &[usize], params: &[f64], input: &[f64]) -> Vec<f64> {
    let mut x = input.to_vec();
    let mut off = 0;
    for l in 0..sizes.len() - 1 {
        let (n_in, n_out) = (sizes[l], sizes[l + 1]);
        let mut y = vec![0.0; n_out];
        for (o, yo) in y.iter_mut().enumerate() {
            let mut z = params[off + n_in * n_out + o];
            for i in 0..n_in {
                z += params[off + o * n_in + i] * x[i];
            }
            *yo = if l + 2 == sizes.len() { z } else { z.max(0.0) };
        }
        off += n_in * n_out + n_out;
        x = y;
    }
    x
}

/// `log softmax(q / eta)[a]` computed directly.
pub fn log_softmax_at(logits: &[f64], eta: f64, a: usize) -> f64 {
    let z: Vec<f64> = logits.iter().map(|q| q / eta).collect();
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z[a] - lse
}

/// Central finite differences of `f` around `params` with step `h`.
pub fn finite_difference(params: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..params.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let plus = f(&p);
            p[i] = orig - h;
            let minus = f(&p);
            p[i] = orig;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// Largest component-wise relative error `|a - n| / max(|a| + |n|, floor)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / (a.abs() + n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// `||a - n|| / (||a|| + ||n||)` over the whole vector.
pub fn vector_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let total = norm(&mut analytic.iter().copied()) + norm(&mut numeric.iter().copied());
    if total == 0.0 {
        0.0
    } else {
        diff / total
    }
}

pub fn clone_with(net: &Mlp, params: &[f64]) -> Mlp {
    Mlp::from_parts(net.sizes().to_vec(), params.to_vec()).unwrap()
}

/// Mutual information based NMI from explicit probability tables.
pub fn brute_nmi(x: &[usize], y: &[usize]) -> f64 {
    let n = x.len() as f64;
    let mut px: HashMap<usize, f64> = HashMap::new();
    let mut py: HashMap<usize, f64> = HashMap::new();
    let mut pxy: HashMap<(usize, usize), f64> = HashMap::new();
    for i in 0..x.len() {
        *px.entry(x[i]).or_default() += 1.0 / n;
        *py.entry(y[i]).or_default() += 1.0 / n;
        *pxy.entry((x[i], y[i])).or_default() += 1.0 / n;
    }
    let h = |p: &HashMap<usize, f64>| -> f64 { p.values().map(|v| -v * v.ln()).sum() };
    let mut mi = 0.0;
    for (&(a, b), &p) in &pxy {
        mi += p * (p / (px[&a] * py[&b])).ln();
    }
    mi / (h(&px) * h(&py)).sqrt()
}

/// Adjusted Rand index by enumerating all unordered pairs.
pub fn brute_ari(x: &[usize], y: &[usize]) -> f64 {
    let (mut a, mut b, mut c, mut d) = (0f64, 0f64, 0f64, 0f64);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            match (x[i] == x[j], y[i] == y[j]) {
                (true, true) => a += 1.0,
                (true, false) => b += 1.0,
                (false, true) => c += 1.0,
                (false, false) => d += 1.0,
            }
        }
    }
    2.0 * (a * d - b * c) / ((a + b) * (b + d) + (a + c) * (c + d))
}

/// Cohen's kappa by definition, from raw label lists.
pub fn brute_kappa(x: &[usize], y: &[usize], k: usize) -> f64 {
    let n = x.len() as f64;
    let agree = x.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / n;
    let mut expected = 0.0;
    for c in 0..k {
        let px = x.iter().filter(|&&v| v == c).count() as f64 / n;
        let py = y.iter().filter(|&&v| v == c).count() as f64 / n;
        expected += px * py;
    }
    (agree - expected) / (1.0 - expected)
}

/// Eq. (1)-style decision table written as an explicit lookup over the case
/// predicates, independent of the crate's branching.
pub fn table_reward_full(y: usize, p: usize, a: usize, reachable: bool) -> i32 {
    let rows: [(bool, i32); 7] = [
        (y == a && a != p, 1),
        (y == p && p == a, 0),
        (y != p && p == a, -1),
        (y != p && p != a && y != a && reachable, -2),
        (y == p && p != a && reachable, -3),
        (y != p && p != a && y != a && !reachable, -4),
        // y = pred != a into an unreachable label
        (y == p && p != a && !reachable, -4),
    ];
    let hits: Vec<i32> = rows
        .iter()
        .filter(|(hit, _)| *hit)
        .map(|(_, r)| *r)
        .collect();
    assert_eq!(
        hits.len(),
        1,
        "cases must partition the tuple space: y={y} p={p} a={a} reachable={reachable}"
    );
    hits[0]
}

/// Smallest |pre-activation| over all hidden units. Central differences are
/// only meaningful away from the rectifier kink.
pub fn min_abs_hidden_preactivation(sizes: &[usize], params: &[f64], input: &[f64]) -> f64 {
    let mut off = 0;
    let mut best = f64::INFINITY;
    for l in 1..sizes.len() - 1 {
        off += sizes[l - 1] * sizes[l] + sizes[l];
        let pre = mlp_output(&sizes[..=l], &params[..off], input);
        best = pre.iter().map(|v| v.abs()).fold(best, f64::min);
    }
    best
}

pub mod grad {
    use super::*;
    use rand::Rng;
    use rrll::nn::{Baseline, Policy};

    pub const H: f64 = 1e-5;
    pub const FLOOR: f64 = 1e-6;
    pub const KINK_MARGIN: f64 = 1e-3;

    pub fn random_state(rng: &mut impl Rng, k: usize, m: usize) -> Vec<f64> {
        let mut s = vec![0.0; 2 * k + m];
        s[rng.random_range(0..k)] = 1.0;
        for v in &mut s[k..k + m] {
            *v = rng.random_range(-1.5..1.5);
        }
        s[k + m + rng.random_range(0..k)] = 1.0;
        s
    }

    fn smooth_state(rng: &mut impl Rng, net: &Mlp, k: usize, m: usize) -> Vec<f64> {
        loop {
            let s = random_state(rng, k, m);
            if min_abs_hidden_preactivation(net.sizes(), net.params(), &s) > KINK_MARGIN {
                return s;
            }
        }
    }

    /// Worst relative error over `configs` random (network, states, actions,
    /// coefficients) draws for `sum_i c_i log pi(a_i | s_i)`, component-wise.
    pub fn policy_worst(
        rng: &mut impl Rng,
        k: usize,
        m: usize,
        configs: usize,
        etas: &[f64],
    ) -> f64 {
        policy_errors(rng, k, m, configs, etas).0
    }

    /// Component-wise and whole-vector worst relative errors.
    pub fn policy_errors(
        rng: &mut impl Rng,
        k: usize,
        m: usize,
        configs: usize,
        etas: &[f64],
    ) -> (f64, f64) {
        let mut worst = 0.0f64;
        let mut worst_vec = 0.0f64;
        for _ in 0..configs {
            let eta = etas[rng.random_range(0..etas.len())];
            let policy = Policy::new(k, m, eta, rng).unwrap();
            let states: Vec<Vec<f64>> = (0..3)
                .map(|_| smooth_state(rng, &policy.net, k, m))
                .collect();
            let actions: Vec<usize> = (0..3).map(|_| rng.random_range(0..k)).collect();
            let coefs: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
            let mut grad = policy.net.zero_grad();
            for i in 0..3 {
                let out = policy.forward(&states[i]).unwrap();
                policy
                    .backward_log_prob(&out, actions[i], coefs[i], &mut grad)
                    .unwrap();
            }
            let sizes = policy.net.sizes().to_vec();
            let numeric = finite_difference(policy.net.params(), H, |p| {
                (0..3)
                    .map(|i| {
                        coefs[i]
                            * log_softmax_at(&mlp_output(&sizes, p, &states[i]), eta, actions[i])
                    })
                    .sum()
            });
            worst = worst.max(max_relative_error(&grad, &numeric, FLOOR));
            worst_vec = worst_vec.max(vector_relative_error(&grad, &numeric));
        }
        (worst, worst_vec)
    }

    /// Same for `(b(s) - target)^2`.
    pub fn baseline_worst(rng: &mut impl Rng, k: usize, m: usize, configs: usize) -> f64 {
        let mut worst = 0.0f64;
        for _ in 0..configs {
            let baseline = Baseline::new(k, m, rng).unwrap();
            let state = smooth_state(rng, &baseline.net, k, m);
            let target = rng.random_range(-20.0..5.0);
            let (_, cache) = baseline.forward(&state).unwrap();
            let mut grad = baseline.net.zero_grad();
            baseline
                .backward_squared_error(&cache, target, &mut grad)
                .unwrap();
            let sizes = baseline.net.sizes().to_vec();
            let numeric = finite_difference(baseline.net.params(), H, |p| {
                let v = mlp_output(&sizes, p, &state)[0];
                (v - target) * (v - target)
            });
            worst = worst.max(max_relative_error(&grad, &numeric, FLOOR));
        }
        worst
    }
}
