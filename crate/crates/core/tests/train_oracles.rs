use mixssm_core::train::{Adam, Metrics};
use mixssm_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn adam_matches_scripted_reference_on_x_squared() {
    let (lr, b1, b2, eps) = (0.1, 0.9, 0.999, 1e-8);
    let (mut x, mut m, mut v) = (1.0f64, 0.0, 0.0);
    let mut reference = Vec::new();
    for t in 1..=3 {
        let g = 2.0 * x;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mhat = m / (1.0 - b1.powi(t));
        let vhat = v / (1.0 - b2.powi(t));
        x -= lr * mhat / (vhat.sqrt() + eps);
        reference.push(x);
    }

    let mut p = Tensor::<f64>::param(&[1], vec![1.0]).unwrap();
    let mut adam = Adam::new(lr);
    for expect in reference {
        let loss = p.square().unwrap().sum_all().unwrap();
        loss.backward().unwrap();
        let g = p.grad();
        adam.step_tensors(&mut [&mut p], &[g]).unwrap();
        assert!((p.data()[0] - expect).abs() < 1e-10);
    }
    assert_eq!(adam.t, 3);
}

/// Brute force: count every (actual, predicted) pair by scanning, then
/// compute per-class scores from explicit sums.
fn brute_force(pred: &[usize], actual: &[usize], k: usize) -> (f64, f64, f64, f64, Vec<Vec<usize>>) {
    let mut cm = vec![vec![0; k]; k];
    for a in 0..k {
        for p in 0..k {
            cm[a][p] = pred.iter().zip(actual).filter(|(&x, &y)| x == p && y == a).count();
        }
    }
    let n = pred.len() as f64;
    let acc = pred.iter().zip(actual).filter(|(x, y)| x == y).count() as f64 / n;
    let (mut ps, mut rs, mut fs) = (0.0, 0.0, 0.0);
    for c in 0..k {
        let tp = pred.iter().zip(actual).filter(|(&x, &y)| x == c && y == c).count() as f64;
        let fp = pred.iter().zip(actual).filter(|(&x, &y)| x == c && y != c).count() as f64;
        let fnn = pred.iter().zip(actual).filter(|(&x, &y)| x != c && y == c).count() as f64;
        let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let r = if tp + fnn > 0.0 { tp / (tp + fnn) } else { 0.0 };
        ps += p;
        rs += r;
        fs += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    }
    let kf = k as f64;
    (acc, ps / kf, rs / kf, fs / kf, cm)
}

#[test]
fn metrics_equal_brute_force_on_100_random_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..100 {
        let k = rng.random_range(2..=6);
        let len = rng.random_range(1..=60);
        let actual: Vec<usize> = (0..len).map(|_| rng.random_range(0..k)).collect();
        let pred: Vec<usize> = (0..len).map(|_| rng.random_range(0..k)).collect();
        let m = Metrics::from_predictions(&pred, &actual, k).unwrap();
        let (acc, p, r, f, cm) = brute_force(&pred, &actual, k);
        assert_eq!(m.confusion, cm);
        assert_eq!(m.total(), len);
        for (x, y) in [(m.accuracy, acc), (m.precision, p), (m.recall, r), (m.f1, f)] {
            assert!((x - y).abs() <= 1e-12, "{x} vs {y}");
            assert!((0.0..=1.0).contains(&x));
        }
    }
}
