//! Independent reference models used by the acceptance harness.

use ratnet_core::datagen::Sample;

/// Multinomial logistic regression on standardized raw features, trained by
/// full-batch gradient descent. Returns test accuracy.
pub fn logistic_oracle_accuracy(train: &[Sample], test: &[Sample], classes: usize) -> f64 {
    let d = train[0].features.len();
    let n = train.len() as f64;
    let mut mu = vec![0.0; d];
    let mut sd = vec![0.0; d];
    for s in train {
        for (m, x) in mu.iter_mut().zip(&s.features) {
            *m += x / n;
        }
    }
    for s in train {
        for ((v, m), x) in sd.iter_mut().zip(&mu).zip(&s.features) {
            *v += (x - m).powi(2) / n;
        }
    }
    let sd: Vec<f64> = sd.iter().map(|v| v.sqrt().max(1e-12)).collect();
    let z = |x: &[f64]| -> Vec<f64> { (0..d).map(|j| (x[j] - mu[j]) / sd[j]).collect() };
    let xs: Vec<Vec<f64>> = train.iter().map(|s| z(&s.features)).collect();

    let mut w = vec![vec![0.0; d + 1]; classes];
    let logits = |w: &[Vec<f64>], x: &[f64]| -> Vec<f64> {
        w.iter()
            .map(|wc| wc[d] + wc[..d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    };
    let lr = 0.5;
    let l2 = 1e-4;
    for _ in 0..800 {
        let mut grad = vec![vec![0.0; d + 1]; classes];
        for (x, s) in xs.iter().zip(train) {
            let l = logits(&w, x);
            let m = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = l.iter().map(|v| (v - m).exp()).collect();
            let sum: f64 = e.iter().sum();
            for c in 0..classes {
                let g = e[c] / sum - if c == s.local_label { 1.0 } else { 0.0 };
                for j in 0..d {
                    grad[c][j] += g * x[j] / n;
                }
                grad[c][d] += g / n;
            }
        }
        for c in 0..classes {
            for j in 0..=d {
                let reg = if j < d { l2 * w[c][j] } else { 0.0 };
                w[c][j] -= lr * (grad[c][j] + reg);
            }
        }
    }
    let correct = test
        .iter()
        .filter(|s| {
            let l = logits(&w, &z(&s.features));
            let pred = (0..classes).fold(0, |b, c| if l[c] > l[b] { c } else { b });
            pred == s.local_label
        })
        .count();
    correct as f64 / test.len() as f64
}
