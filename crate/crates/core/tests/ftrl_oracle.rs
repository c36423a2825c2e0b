use adplace_core::features::{feature_token, hash_token};
use adplace_core::math::{log_loss, sigmoid};
use adplace_core::{train_parallel, Example, FeatureVector, FtrlModel, FtrlParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Minimizes `z*w + l1*|w| + 0.5*q*w^2` by a coarse grid followed by
/// golden-section refinement around the best grid point.
///
/// Points are compared through the factored difference
/// `f(a) - f(b) = (a - b) * (z + l1*(|a| - |b|)/(a - b) + q*(a + b)/2)`,
/// which keeps its sign accurate where the raw objective values agree to
/// nearly every digit.
pub fn brute_force_weight(z: f64, n: f64, p: &FtrlParams) -> f64 {
    let q = p.lambda2 + (p.beta + n.sqrt()) / p.alpha;
    let less = |a: f64, b: f64| {
        if a == b {
            return false;
        }
        let d = (a - b) * (z + p.lambda1 * (a.abs() - b.abs()) / (a - b) + 0.5 * q * (a + b));
        d < 0.0
    };
    let radius = (z.abs() + p.lambda1) / q + 1.0;
    let steps = 2000;
    let h = 2.0 * radius / steps as f64;
    let mut best = -radius;
    for i in 1..=steps {
        let w = -radius + i as f64 * h;
        if less(w, best) {
            best = w;
        }
    }
    let (mut lo, mut hi) = (best - h, best + h);
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    while hi - lo > 1e-13 * (1.0 + lo.abs().max(hi.abs())) {
        let a = hi - ratio * (hi - lo);
        let b = lo + ratio * (hi - lo);
        if a <= lo || b >= hi {
            break;
        }
        if less(a, b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    let w = 0.5 * (lo + hi);
    // The kink at zero is an exact minimizer whenever it is not beaten.
    if less(w, 0.0) {
        w
    } else {
        0.0
    }
}

#[test]
fn closed_form_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..10_000 {
        let params = FtrlParams::new(
            rng.random_range(0.01..1.0),
            rng.random_range(0.1..2.0),
            rng.random_range(0.0..100.0),
            rng.random_range(0.0..50.0),
        )
        .unwrap();
        let z: f32 = rng.random_range(-200.0..200.0);
        let n: f32 = rng.random_range(0.0..100.0);
        let model = FtrlModel::from_parts(params, vec![z], vec![n]).unwrap();
        let w = model.weight(0).unwrap();
        let oracle = brute_force_weight(z as f64, n as f64, &params);
        assert!((w - oracle).abs() < 1e-6, "z={z} n={n} {params:?}: {w} vs {oracle}");
    }
}

#[test]
fn worked_weight_example() {
    let params = FtrlParams::default();
    let oracle = brute_force_weight(-100.0, 4.0, &params);
    assert!((oracle - 25.0 / 55.0).abs() < 1e-12, "{oracle}");
    let model = FtrlModel::from_parts(params, vec![-100.0], vec![4.0]).unwrap();
    assert!((model.weight(0).unwrap() - oracle).abs() < 1e-12);
}

/// Scalar f64 FTRL-Proximal on a single coordinate.
struct ScalarFtrl {
    z: f64,
    n: f64,
    p: FtrlParams,
}

impl ScalarFtrl {
    fn w(&self) -> f64 {
        if self.z.abs() <= self.p.lambda1 {
            0.0
        } else {
            -(self.z - self.z.signum() * self.p.lambda1)
                / ((self.p.beta + self.n.sqrt()) / self.p.alpha + self.p.lambda2)
        }
    }

    fn step(&mut self, y: bool) {
        let w = self.w();
        let g = 1.0 / (1.0 + (-w).exp()) - y as u8 as f64;
        let sigma = ((self.n + g * g).sqrt() - self.n.sqrt()) / self.p.alpha;
        self.z += g - sigma * w;
        self.n += g * g;
    }
}

#[test]
fn update_matches_scalar_reference() {
    let params = FtrlParams::new(0.5, 1.0, 0.2, 0.1).unwrap();
    let mut model = FtrlModel::new(params, 1).unwrap();
    let mut reference = ScalarFtrl {
        z: 0.0,
        n: 0.0,
        p: params,
    };
    let x = FeatureVector::new(vec![0], 1).unwrap();

    model.fit_one(&x, true).unwrap();
    reference.step(true);
    assert_eq!(model.accumulators(0).unwrap(), (-0.5, 0.25));
    assert_eq!((reference.z, reference.n), (-0.5, 0.25));

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..200 {
        let y = rng.random_bool(0.7);
        model.fit_one(&x, y).unwrap();
        reference.step(y);
        let (z, n) = model.accumulators(0).unwrap();
        assert!((z as f64 - reference.z).abs() <= 1e-4 * (1.0 + reference.z.abs()));
        assert!((n as f64 - reference.n).abs() <= 1e-4 * (1.0 + reference.n));
    }
}

/// Binary vectors with 10 active coordinates out of 100, labelled by the sign
/// of a fixed weight vector with a margin of at least 0.5.
pub fn separable_data(n: usize, seed: u64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth: Vec<f64> = {
        let mut r = ChaCha8Rng::seed_from_u64(1234);
        (0..100).map(|_| r.random_range(-1.0..1.0)).collect()
    };
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let idx: Vec<u32> = (0..10).map(|_| rng.random_range(0..100)).collect();
        let x = FeatureVector::new(idx, 100).unwrap();
        let s: f64 = x.indices().iter().map(|&i| truth[i as usize]).sum();
        if s.abs() >= 0.5 {
            out.push(Example::new(x, s > 0.0));
        }
    }
    out
}

#[test]
fn learns_separable_data() {
    let params = FtrlParams::new(0.5, 1.0, 0.1, 0.1).unwrap();
    let mut model = FtrlModel::new(params, 100).unwrap();
    train_parallel(&mut model, separable_data(50_000, 1), 1).unwrap();
    let test = separable_data(10_000, 2);
    let mut correct = 0;
    let mut loss = 0.0;
    for ex in &test {
        let p = model.predict(&ex.x).unwrap();
        correct += ((p > 0.5) == ex.y) as usize;
        loss += log_loss(p, ex.y);
    }
    let acc = correct as f64 / test.len() as f64;
    let loss = loss / test.len() as f64;
    assert!(acc > 0.95, "accuracy {acc}");
    assert!(loss < 0.2, "log-loss {loss}");
}

#[test]
fn save_load_after_many_updates_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ftrl");
    let mut model = FtrlModel::new(FtrlParams::new(0.1, 1.0, 1.0, 1.0).unwrap(), 1000).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10_000 {
        let idx: Vec<u32> = (0..8).map(|_| rng.random_range(0..1000)).collect();
        model
            .fit_one(&FeatureVector::new(idx, 1000).unwrap(), rng.random_bool(0.1))
            .unwrap();
    }
    model.save(&path).unwrap();
    let back = FtrlModel::load(&path).unwrap();
    assert_eq!(back, model);
    for i in 0..1000 {
        let (a, b) = (model.accumulators(i).unwrap(), back.accumulators(i).unwrap());
        assert_eq!(a.0.to_bits(), b.0.to_bits());
        assert_eq!(a.1.to_bits(), b.1.to_bits());
    }

    let fresh = FtrlModel::new(FtrlParams::default(), 3).unwrap();
    fresh.save(&path).unwrap();
    assert_eq!(FtrlModel::load(&path).unwrap(), fresh);

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(FtrlModel::load(&path).is_err());
}

#[test]
fn hash_collision_rate_near_birthday_bound() {
    let n = 100_000usize;
    let buckets = 1u64 << 24;
    let mut seen = std::collections::HashSet::with_capacity(n);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut tokens = std::collections::HashSet::with_capacity(n);
    while tokens.len() < n {
        tokens.insert(feature_token(
            rng.random_range(0..74_000),
            rng.random_range(0..10_000) as f64,
        ));
    }
    for t in &tokens {
        seen.insert(hash_token(t) as u64 % buckets);
    }
    let observed = (n - seen.len()) as f64 / n as f64;
    let m = buckets as f64;
    let expected_distinct = m * (1.0 - (1.0 - 1.0 / m).powf(n as f64));
    let expected = (n as f64 - expected_distinct) / n as f64;
    assert!(
        observed <= 3.0 * expected && observed >= expected / 3.0,
        "{observed} vs {expected}"
    );
}

#[test]
fn sigmoid_of_predict_is_consistent() {
    let params = FtrlParams::new(0.5, 1.0, 0.1, 0.1).unwrap();
    let mut model = FtrlModel::new(params, 100).unwrap();
    train_parallel(&mut model, separable_data(2_000, 3), 1).unwrap();
    let x = FeatureVector::new(vec![1, 5, 9], 100).unwrap();
    assert_eq!(model.predict(&x).unwrap(), sigmoid(model.margin(&x).unwrap()));
}
