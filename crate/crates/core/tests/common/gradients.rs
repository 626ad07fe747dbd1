//! Central finite-difference checks of analytic gradients.

use precursor::gbm::softmax_logloss;
use precursor::stack::{meta_objective, META_C};
use rand::Rng;

const H: f64 = 1e-5;

/// `|a - b| / max(|a|, |b|)` over whole vectors, 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn central<F: Fn(&[f64]) -> f64>(f: F, x: &[f64]) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + H;
            let up = f(&p);
            p[i] = x[i] - H;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * H)
        })
        .collect()
}

/// Worst relative error of the boosting loss gradient and diagonal
/// Hessian over `points` random score vectors.
pub fn softmax_logloss_worst(points: usize, seed: u64) -> (f64, f64) {
    let mut rng = precursor::rng::seeded(seed);
    let (mut worst_g, mut worst_h) = (0.0_f64, 0.0_f64);
    for _ in 0..points {
        let k = rng.gen_range(2..=6);
        let scores: Vec<f64> = (0..k).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let label = rng.gen_range(0..k);
        let weight = rng.gen_range(0.5..4.0);
        let t = softmax_logloss(&scores, label, weight);
        let fd = central(|s| softmax_logloss(s, label, weight).loss, &scores);
        worst_g = worst_g.max(relative_error(&t.gradient, &fd));
        let diag: Vec<f64> = (0..k)
            .map(|j| central(|s| softmax_logloss(s, label, weight).gradient[j], &scores)[j])
            .collect();
        worst_h = worst_h.max(relative_error(&t.hessian, &diag));
    }
    (worst_g, worst_h)
}

/// Worst relative error of the meta-model objective gradient over
/// `points` random parameter vectors and datasets.
pub fn meta_gradient_worst(points: usize, seed: u64) -> f64 {
    let mut rng = precursor::rng::seeded(seed);
    let mut worst = 0.0_f64;
    for _ in 0..points {
        let k = rng.gen_range(2..=5);
        let n = rng.gen_range(5..30);
        let inputs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..k).map(|_| rng.gen_range(0.0..2.0)).collect())
            .collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let theta: Vec<f64> = (0..k * (k + 1)).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let (_, grad) = meta_objective(&theta, &inputs, &labels, k, META_C);
        let fd = central(|t| meta_objective(t, &inputs, &labels, k, META_C).0, &theta);
        worst = worst.max(relative_error(&grad, &fd));
    }
    worst
}
