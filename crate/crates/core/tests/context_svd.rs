use bgt_core::context::{reduce, InteractionMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One-sided Jacobi SVD; singular values in descending order.
fn jacobi_singular_values(a: &[Vec<f64>]) -> Vec<f64> {
    let rows = a.len();
    let cols = a[0].len();
    // Work on columns of A (or of Aᵀ when wide) so there are at most min(m, n) of them.
    let mut cols_vec: Vec<Vec<f64>> = if rows >= cols {
        (0..cols).map(|j| (0..rows).map(|i| a[i][j]).collect()).collect()
    } else {
        a.to_vec()
    };
    let n = cols_vec.len();
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha: f64 = cols_vec[p].iter().map(|v| v * v).sum();
                let beta: f64 = cols_vec[q].iter().map(|v| v * v).sum();
                let gamma: f64 = cols_vec[p].iter().zip(&cols_vec[q]).map(|(x, y)| x * y).sum();
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..cols_vec[p].len() {
                    let x = cols_vec[p][k];
                    let y = cols_vec[q][k];
                    cols_vec[p][k] = c * x - s * y;
                    cols_vec[q][k] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = cols_vec
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

#[test]
fn singular_values_match_jacobi() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..5 {
        let (rows, cols) = if trial % 2 == 0 { (50, 80) } else { (80, 50) };
        let mut m = InteractionMatrix::new(rows, cols);
        while m.nnz() < 400 {
            m.insert(rng.random_range(0..rows), rng.random_range(0..cols)).unwrap();
        }
        let dense: Vec<Vec<f64>> = (0..rows)
            .map(|u| (0..cols).map(|i| if m.contains(u, i) { 1.0 } else { 0.0 }).collect())
            .collect();
        let expect = jacobi_singular_values(&dense);
        let raw = reduce(&m, 8, false).unwrap();
        let scaled = reduce(&m, 8, true).unwrap();
        for k in 0..8 {
            assert!((raw.values()[k] - expect[k]).abs() < 1e-8, "σ{k}: {} vs {}", raw.values()[k], expect[k]);
            assert!((scaled.values()[k] - expect[k] / 20.0).abs() < 1e-8);
        }
        let energy: f64 = expect.iter().map(|s| s * s).sum();
        assert!((energy - 400.0).abs() < 1e-8);
    }
}
