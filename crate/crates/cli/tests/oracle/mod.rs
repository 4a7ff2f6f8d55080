//! Reference computations written independently of the library code paths.

#![allow(dead_code)]

/// Dense Gaussian elimination with partial pivoting; solves `m x = b`.
pub fn solve_dense(mut m: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        m.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                m[row][k] -= f * m[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| m[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / m[i][i];
    }
    x
}

/// One input point: (scaled action, context, round).
#[derive(Clone, Debug)]
pub struct Point {
    pub action: f64,
    pub context: Vec<f64>,
    pub round: usize,
}

/// `(1−α)^{|Δt|/2} · exp(−‖Δz‖ / (2 s²))` with `z = [action, context]`.
pub fn kernel(alpha: f64, s: f64, a: &Point, b: &Point) -> f64 {
    let mut sq = (a.action - b.action).powi(2);
    for (x, y) in a.context.iter().zip(&b.context) {
        sq += (x - y).powi(2);
    }
    let dt = (a.round as f64 - b.round as f64).abs();
    (1.0 - alpha).powf(dt / 2.0) * (-sq.sqrt() / (2.0 * s * s)).exp()
}

/// Posterior mean and variance by two dense solves.
pub fn gp_posterior(
    alpha: f64,
    s: f64,
    noise: f64,
    history: &[(Point, f64)],
    query: &Point,
) -> (f64, f64) {
    let n = history.len();
    let gram: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    kernel(alpha, s, &history[i].0, &history[j].0)
                        + if i == j { noise * noise } else { 0.0 }
                })
                .collect()
        })
        .collect();
    let kq: Vec<f64> = history.iter().map(|(p, _)| kernel(alpha, s, p, query)).collect();
    let rewards: Vec<f64> = history.iter().map(|(_, r)| *r).collect();
    let w = solve_dense(gram.clone(), rewards);
    let v = solve_dense(gram, kq.clone());
    let mean = kq.iter().zip(&w).map(|(a, b)| a * b).sum();
    let var = kernel(alpha, s, query, query) - kq.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
    (mean, var)
}

/// Plain Cholesky; `None` if a pivot is not positive.
pub fn cholesky_ok(m: &[Vec<f64>]) -> bool {
    let n = m.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = m[i][i] - s;
                if !(d > 0.0) {
                    return false;
                }
                l[i][i] = d.sqrt();
            } else {
                l[i][j] = (m[i][j] - s) / l[j][j];
            }
        }
    }
    true
}

/// Brute-force LP value. An optimal vertex of the column-simplex LP with one
/// coupling row has at most one fractional column mixing two actions, so we
/// enumerate pure assignments plus every (column, action pair, grid weight)
/// split with the remaining columns pure.
pub fn lp_grid_value(rewards: &[Vec<f64>], costs: &[f64], cap: f64, step: f64) -> Option<f64> {
    let a = costs.len();
    let t0 = rewards[0].len();
    let tf = t0 as f64;
    let mut best: Option<f64> = None;
    let mut consider = |v: f64| {
        best = Some(best.map_or(v, |b: f64| b.max(v)));
    };
    let total = a.pow(t0 as u32);
    let steps = (1.0 / step).round() as usize;
    for code in 0..total {
        let mut pick = vec![0; t0];
        let mut c = code;
        for slot in pick.iter_mut() {
            *slot = c % a;
            c /= a;
        }
        let val: f64 = (0..t0).map(|t| rewards[pick[t]][t]).sum::<f64>() / tf;
        let cost: f64 = pick.iter().map(|&x| costs[x]).sum::<f64>() / tf;
        if cost <= cap + 1e-12 {
            consider(val);
        }
        // Column 0..t0 takes the split; its pure pick is replaced.
        for j in 0..t0 {
            let rest_val = val - rewards[pick[j]][j] / tf;
            let rest_cost = cost - costs[pick[j]] / tf;
            for lo in 0..a {
                for hi in lo + 1..a {
                    for k in 0..=steps {
                        let w = k as f64 * step;
                        let cval = ((1.0 - w) * rewards[lo][j] + w * rewards[hi][j]) / tf;
                        let ccost = ((1.0 - w) * costs[lo] + w * costs[hi]) / tf;
                        if rest_cost + ccost <= cap + 1e-12 {
                            consider(rest_val + cval);
                        }
                    }
                }
            }
        }
    }
    best
}

/// Exact optimum of the single-column, two-action LP.
pub fn lp_two_action(r: [f64; 2], c: [f64; 2], cap: f64) -> f64 {
    if cap >= c[1] {
        return r[0].max(r[1]);
    }
    if r[1] <= r[0] {
        return r[0];
    }
    let w = (cap - c[0]) / (c[1] - c[0]);
    (1.0 - w) * r[0] + w * r[1]
}

/// Generalized-KL projection of a positive vector onto `{λ ≥ 0, Σλ ≤ radius}`
/// found by bisection on the multiplier of the sum constraint.
pub fn kl_project(y: &[f64], radius: f64) -> Vec<f64> {
    let sum: f64 = y.iter().sum();
    if sum <= radius {
        return y.to_vec();
    }
    // λ_i = y_i e^{−ν}; find ν with Σλ = radius.
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while y.iter().map(|v| v * (-hi).exp()).sum::<f64>() > radius {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if y.iter().map(|v| v * (-mid).exp()).sum::<f64>() > radius {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let nu = 0.5 * (lo + hi);
    y.iter().map(|v| v * (-nu).exp()).collect()
}
