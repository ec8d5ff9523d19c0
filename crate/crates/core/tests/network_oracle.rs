//! Network evaluation checked against a naive double-loop evaluator and the
//! analytic gradient against central finite differences.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rankscope_core::cnn::{self, CnnParams};
use rankscope_core::data::{make_basis, sample_dataset, BasisMode, Label, PatchedDataset, SPolicy};
use rankscope_core::train::init_params;

fn naive_act(z: f64, q: u32, kappa: f64) -> f64 {
    if z <= 0.0 {
        0.0
    } else if z < kappa {
        z.powi(q as i32) / (q as f64 * kappa.powi(q as i32 - 1))
    } else {
        z - (1.0 - 1.0 / q as f64) * kappa
    }
}

/// Plain-loop network value; no matrix products, no shared accumulators.
fn naive_forward(params: &CnnParams, x: &DMatrix<f64>) -> f64 {
    let mut parts = [0.0f64; 2];
    for (ci, class) in [Label::Plus, Label::Minus].into_iter().enumerate() {
        let bank = params.bank(class);
        for r in 0..params.m {
            for p in 0..x.ncols() {
                let mut pre = 0.0;
                for i in 0..params.d {
                    pre += bank[(i, r)] * x[(i, p)];
                }
                parts[ci] += naive_act(pre, params.q, params.kappa);
            }
        }
    }
    (parts[0] - parts[1]) / params.m as f64
}

fn random_setup(rng: &mut ChaCha8Rng, sigma: f64) -> (PatchedDataset, CnnParams) {
    let k = rng.gen_range(1..=2);
    let d = rng.gen_range(3 * k..=12).max(2 * k + 1);
    let m = rng.gen_range(1..=3);
    let n = rng.gen_range(1..=4);
    let p = rng.gen_range(2..=3);
    let q = *[3u32, 4, 6].get(rng.gen_range(0..3)).unwrap();
    let kappa = rng.gen_range(0.05..0.3);
    let basis = make_basis(d, k, BasisMode::OneHot, rng.gen::<u32>() as u64).unwrap();
    let data = sample_dataset(
        &basis,
        n,
        p,
        SPolicy::FixedSize { s: 1 },
        sigma,
        rng.gen::<u32>() as u64,
    )
    .unwrap();
    let params = init_params(d, m, q, kappa, 0.1, rng.gen::<u32>() as u64).unwrap();
    (data, params)
}

#[test]
fn forward_matches_naive_evaluator() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..30 {
        let (data, params) = random_setup(&mut rng, 0.3);
        for x in &data.inputs {
            let fast = cnn::forward(&params, x).unwrap();
            let slow = naive_forward(&params, x);
            assert!(
                (fast - slow).abs() <= 1e-12 * fast.abs().max(1.0),
                "{fast} vs {slow}"
            );
        }
        // margins are y * f and the loss is their mean logistic value
        let margins = cnn::margins(&params, &data).unwrap();
        for (i, &z) in margins.iter().enumerate() {
            let expect = data.labels[i].sign() * naive_forward(&params, &data.inputs[i]);
            assert!((z - expect).abs() <= 1e-12 * expect.abs().max(1.0));
        }
        let loss = cnn::training_loss(&params, &data).unwrap();
        let naive_loss: f64 =
            margins.iter().map(|&z| cnn::logistic_loss(z)).sum::<f64>() / margins.len() as f64;
        assert!((loss - naive_loss).abs() <= 1e-12);
    }
}

/// Central differences of the training loss, avoiding configurations where a
/// perturbed coordinate could push a pre-activation across a kink.
#[test]
fn gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(555);
    let h = 1e-6;
    let guard = 1e-4;
    let mut tested = 0;
    for trial in 0..100 {
        let sigma = if trial % 4 == 0 { 0.0 } else { 0.25 };
        let (data, params) = random_setup(&mut rng, sigma);

        // kink safety: a coordinate move of h only matters for patches that
        // read that coordinate; zero patches are exempt
        let mut safe = true;
        'scan: for class in [Label::Plus, Label::Minus] {
            let bank = params.bank(class);
            for r in 0..params.m {
                for x in &data.inputs {
                    for p in 0..x.ncols() {
                        let col = x.column(p);
                        if col.norm() == 0.0 {
                            continue;
                        }
                        let pre = bank.column(r).dot(&col);
                        if pre.abs() < guard || (pre - params.kappa).abs() < guard {
                            safe = false;
                            break 'scan;
                        }
                    }
                }
            }
        }
        if !safe {
            continue;
        }
        tested += 1;

        let (g_plus, g_minus) = cnn::gradient(&params, &data).unwrap();
        for _ in 0..3 {
            let class = if rng.gen::<bool>() { Label::Plus } else { Label::Minus };
            let r = rng.gen_range(0..params.m);
            let i = rng.gen_range(0..params.d);

            let mut up = params.clone();
            up.bank_mut(class)[(i, r)] += h;
            let mut down = params.clone();
            down.bank_mut(class)[(i, r)] -= h;
            let fd = (cnn::training_loss(&up, &data).unwrap()
                - cnn::training_loss(&down, &data).unwrap())
                / (2.0 * h);
            let g = match class {
                Label::Plus => g_plus[(i, r)],
                Label::Minus => g_minus[(i, r)],
            };
            assert!(
                (fd - g).abs() <= 1e-6 + 1e-4 * g.abs(),
                "trial {trial}: fd {fd} vs grad {g}"
            );
        }
    }
    assert!(tested >= 70, "only {tested} configurations were kink-safe");
}

#[test]
fn act_prime_matches_numeric_derivative() {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let h = 1e-7;
    for _ in 0..1000 {
        let q = if rng.gen::<bool>() { 3u32 } else { 6 };
        let kappa = rng.gen_range(0.1..0.4);
        let z: f64 = rng.gen_range(-0.5..0.8);
        if z.abs() < 1e-5 || (z - kappa).abs() < 1e-5 {
            continue;
        }
        let fd = (cnn::act(z + h, q, kappa) - cnn::act(z - h, q, kappa)) / (2.0 * h);
        let g = cnn::act_prime(z, q, kappa);
        assert!(
            (fd - g).abs() <= 1e-5 * g.abs().max(1.0),
            "z {z} q {q} kappa {kappa}: fd {fd} vs {g}"
        );
    }
    // the kinks themselves take the middle-branch derivative
    assert_eq!(cnn::act_prime(0.0, 3, 0.2), 0.0);
    assert!((cnn::act_prime(0.2, 3, 0.2) - 1.0).abs() <= 1e-15);
}

#[test]
fn loss_prime_matches_numeric_derivative() {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    for _ in 0..1000 {
        let z: f64 = rng.gen_range(-30.0..30.0);
        let h = 1e-6 * z.abs().max(1.0);
        let fd = (cnn::logistic_loss(z + h) - cnn::logistic_loss(z - h)) / (2.0 * h);
        let g = cnn::logistic_loss_prime(z);
        assert!((fd - g).abs() <= 1e-7, "z {z}: fd {fd} vs {g}");
    }
}
