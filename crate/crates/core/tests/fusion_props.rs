use hipbi::experts::ExpertEval;
use hipbi::fusion::{fuse, fused_mean, log_density, optimal_action, BlendWeights};
use nalgebra::{DMatrix, DVector, SMatrix, SVector};
use proptest::prelude::*;

/// Random SPD matrix `A A^T + 0.1 I` from `d*d` entries in [-1, 1].
fn spd<const D: usize>(entries: &[f64]) -> SMatrix<f64, D, D> {
    let a = SMatrix::<f64, D, D>::from_iterator(entries.iter().copied());
    a * a.transpose() + SMatrix::identity() * 0.1
}

fn experts<const D: usize>(raw: &[(Vec<f64>, Vec<f64>)]) -> Vec<ExpertEval<f64, D>> {
    raw.iter()
        .map(|(mu, l)| ExpertEval::new(SVector::from_iterator(mu.iter().copied()), spd::<D>(l)))
        .collect()
}

fn normalize(w: &[f64]) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    w.iter().map(|x| x / s).collect()
}

/// Minimizer of `sum_i beta_i (a - mu_i)^T L_i (a - mu_i) / 2`, assembled
/// with dynamic matrices and solved by LU.
fn oracle<const D: usize>(evals: &[ExpertEval<f64, D>], beta: &[f64]) -> DVector<f64> {
    let mut h = DMatrix::<f64>::zeros(D, D);
    let mut g = DVector::<f64>::zeros(D);
    for (e, &b) in evals.iter().zip(beta) {
        let l = DMatrix::from_column_slice(D, D, e.lambda.as_slice());
        let m = DVector::from_column_slice(e.mu.as_slice());
        g += &l * &m * b;
        h += l * b;
    }
    h.lu().solve(&g).expect("sum of SPD matrices is invertible")
}

fn case<const D: usize>() -> impl Strategy<Value = (Vec<(Vec<f64>, Vec<f64>)>, Vec<f64>)> {
    (1usize..=5).prop_flat_map(|n| {
        (
            prop::collection::vec(
                (prop::collection::vec(-10.0..10.0f64, D), prop::collection::vec(-1.0..1.0f64, D * D)),
                n,
            ),
            prop::collection::vec(0.01..1.0f64, n),
        )
    })
}

fn check_oracle<const D: usize>(raw: &[(Vec<f64>, Vec<f64>)], w: &[f64]) -> Result<(), TestCaseError> {
    let evals = experts::<D>(raw);
    let beta = normalize(w);
    let fused = fuse(&evals, &BlendWeights::new(beta.clone()).unwrap()).unwrap();
    let want = oracle(&evals, &beta);
    for i in 0..D {
        prop_assert!((fused.mu[i] - want[i]).abs() < 1e-8, "dim {i}: {} vs {}", fused.mu[i], want[i]);
    }
    prop_assert!((fused.lambda - fused.lambda.transpose()).amax() < 1e-10);
    prop_assert!(fused.log_partition.is_finite());
    prop_assert_eq!(fused_mean(&evals, &beta).unwrap(), fused.mu);
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matches_quadratic_oracle_d1((raw, w) in case::<1>()) { check_oracle::<1>(&raw, &w)?; }

    #[test]
    fn matches_quadratic_oracle_d2((raw, w) in case::<2>()) { check_oracle::<2>(&raw, &w)?; }

    #[test]
    fn matches_quadratic_oracle_d3((raw, w) in case::<3>()) { check_oracle::<3>(&raw, &w)?; }

    #[test]
    fn matches_quadratic_oracle_d4((raw, w) in case::<4>()) { check_oracle::<4>(&raw, &w)?; }

    #[test]
    fn argmax_invariant_to_weight_scale((raw, w) in case::<3>(), scale in 0.01..100.0f64) {
        let evals = experts::<3>(&raw);
        let a = fuse(&evals, &BlendWeights::new(w.clone()).unwrap()).unwrap();
        let scaled: Vec<f64> = w.iter().map(|x| x * scale).collect();
        let b = fuse(&evals, &BlendWeights::new(scaled).unwrap()).unwrap();
        prop_assert!((optimal_action(&a) - optimal_action(&b)).amax() < 1e-9);
    }

    #[test]
    fn product_closure(
        raw in prop::collection::vec((prop::collection::vec(-10.0..10.0f64, 2), prop::collection::vec(-1.0..1.0f64, 4)), 3),
        w in prop::collection::vec(0.05..1.0f64, 3),
    ) {
        let evals = experts::<2>(&raw);
        let ab = fuse(&evals[..2], &BlendWeights::new(w[..2].to_vec()).unwrap()).unwrap();
        let nested = fuse(
            &[ExpertEval::new(ab.mu, ab.lambda), evals[2]],
            &BlendWeights::new(vec![1.0, w[2]]).unwrap(),
        ).unwrap();
        let flat = fuse(&evals, &BlendWeights::new(w.clone()).unwrap()).unwrap();
        let scale = 1.0 + flat.mu.amax();
        prop_assert!((nested.mu - flat.mu).amax() < 1e-10 * scale);
        prop_assert!((nested.lambda - flat.lambda).amax() < 1e-10 * (1.0 + flat.lambda.amax()));
    }

    #[test]
    fn mean_is_the_mode(
        raw in prop::collection::vec((prop::collection::vec(-5.0..5.0f64, 2), prop::collection::vec(-1.0..1.0f64, 4)), 1..5),
        offset in prop::collection::vec(-3.0..3.0f64, 2),
    ) {
        let evals = experts::<2>(&raw);
        let fused = fuse(&evals, &BlendWeights::uniform(evals.len())).unwrap();
        let a = fused.mu + SVector::<f64, 2>::from_column_slice(&offset);
        prop_assert!(log_density(&fused, &fused.mu) >= log_density(&fused, &a));
    }
}

/// Composite Simpson rule on [lo, hi] with `n` (even) intervals.
fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / n as f64;
    let inner: f64 = (1..n).map(|k| f(lo + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 }).sum();
    (f(lo) + f(hi) + inner) * h / 3.0
}

#[test]
fn partition_matches_quadrature() {
    let cases = [
        (vec![(0.0, 1.0), (2.0, 1.0)], vec![1.0, 1.0]),
        (vec![(-1.5, 0.3), (4.0, 2.0), (0.5, 0.7)], vec![0.2, 0.5, 0.3]),
        (vec![(3.0, 5.0)], vec![0.4]),
    ];
    for (raw, w) in cases {
        let evals: Vec<ExpertEval<f64, 1>> = raw
            .iter()
            .map(|&(m, l)| ExpertEval::new(SVector::from([m]), SMatrix::from([[l]])))
            .collect();
        let fused = fuse(&evals, &BlendWeights::new(w.clone()).unwrap()).unwrap();
        // unnormalized product of the weighted expert densities
        let product = |a: f64| {
            raw.iter()
                .zip(&w)
                .map(|(&(m, l), &b)| {
                    let log_n = 0.5 * (l / (2.0 * std::f64::consts::PI)).ln() - 0.5 * l * (a - m) * (a - m);
                    b * log_n
                })
                .sum::<f64>()
                .exp()
        };
        let sd = fused.lambda[(0, 0)].recip().sqrt();
        let mu = fused.mu[0];
        let integral = simpson(product, mu - 12.0 * sd, mu + 12.0 * sd, 20_000);
        let rel = (integral - fused.log_partition.exp()).abs() / integral;
        assert!(rel < 1e-6, "relative error {rel}");
    }
}

#[test]
fn two_expert_hand_case_and_grid() {
    let evals = [
        ExpertEval::new(SVector::<f64, 1>::from([0.0]), SMatrix::from([[1.0]])),
        ExpertEval::new(SVector::<f64, 1>::from([2.0]), SMatrix::from([[1.0]])),
    ];
    let fused = fuse(&evals, &BlendWeights::new(vec![1.0, 1.0]).unwrap()).unwrap();
    assert!((fused.mu[0] - 1.0).abs() < 1e-12);
    assert!((fused.lambda[(0, 0)] - 2.0).abs() < 1e-12);

    // brute-force maximum of the summed log-densities
    let objective = |a: f64| -0.5 * a * a - 0.5 * (a - 2.0) * (a - 2.0);
    let best = (0..=40_000)
        .map(|k| -10.0 + k as f64 * 5e-4)
        .max_by(|a, b| objective(*a).total_cmp(&objective(*b)))
        .unwrap();
    assert!((best - 1.0).abs() < 1e-3);
}

#[test]
fn unit_weight_selects_one_expert() {
    let evals = experts::<2>(&[
        (vec![1.0, -3.0], vec![0.3, 0.1, -0.2, 0.9]),
        (vec![4.0, 2.0], vec![0.5, 0.5, 0.1, -0.4]),
    ]);
    let fused = fuse(&evals, &BlendWeights::unit(2, 1)).unwrap();
    assert!((fused.mu - evals[1].mu).amax() < 1e-12);
    assert!((fused.lambda - evals[1].lambda).amax() < 1e-12);
}

#[test]
fn single_precision_alias_agrees() {
    let evals64 = experts::<2>(&[
        (vec![1.0, -3.0], vec![0.3, 0.1, -0.2, 0.9]),
        (vec![4.0, 2.0], vec![0.5, 0.5, 0.1, -0.4]),
    ]);
    let evals32: Vec<hipbi::Eval2f32> = evals64.iter().map(|e| ExpertEval::new(e.mu.cast(), e.lambda.cast())).collect();
    let a = fuse(&evals64, &BlendWeights::uniform(2)).unwrap();
    let b: hipbi::Fused2f32 = fuse(&evals32, &BlendWeights::uniform(2)).unwrap();
    assert!((a.mu.cast::<f32>() - b.mu).amax() < 1e-4);
}
