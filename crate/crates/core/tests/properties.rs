use lvd_core::conformal::{
    collect_residuals, lvd_interval, mad_interval, split_interval, CalibrationSet,
};
use lvd_core::kernel::{fit_normalization, MetricModel};
use lvd_core::train::{full_loss, loss_and_gradient, train_metric, TrainConfig};
use lvd_core::{Matrix, PreparedCalibration};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn matrix_strategy(k: usize, h: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-3.0f64..3.0, k * h)
        .prop_map(move |v| Matrix::from_row_major(k, h, v).unwrap())
}

proptest! {
    #[test]
    fn kernel_is_symmetric_and_bounded(
        a in matrix_strategy(2, 3),
        u in prop::collection::vec(-5.0f64..5.0, 3),
        v in prop::collection::vec(-5.0f64..5.0, 3),
    ) {
        let m = MetricModel::on_normalized(a).unwrap();
        let kuv = m.kernel_value(&u, &v).unwrap();
        prop_assert_eq!(kuv, m.kernel_value(&v, &u).unwrap());
        prop_assert!(kuv <= 1.0);
        prop_assert!(kuv >= 0.0);
        prop_assert_eq!(m.kernel_value(&u, &u).unwrap(), 1.0);
    }

    #[test]
    fn normalization_is_idempotent(
        rows in prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 4), 3..40),
    ) {
        let norm = fit_normalization(&rows).unwrap();
        let once = norm.normalize_all(&rows).unwrap();
        let refit = fit_normalization(&once).unwrap();
        prop_assert_eq!(refit.kept_dims().len(), once[0].len());
        let twice = refit.normalize_all(&once).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            for (x, y) in a.iter().zip(b) {
                prop_assert!((x - y).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn intervals_nest_as_alpha_shrinks(
        a in -4.0f64..4.0,
        cal_x in prop::collection::vec(-2.0f64..2.0, 0..40),
        x in -3.0f64..3.0,
        alphas in prop::collection::vec(0.001f64..0.999, 2..8),
    ) {
        let m = MetricModel::on_normalized(Matrix::from_row_major(1, 1, vec![a]).unwrap()).unwrap();
        let residuals: Vec<f64> = cal_x.iter().map(|v| v * v - 0.5).collect();
        let scales: Vec<f64> = cal_x.iter().map(|v| 0.5 + v.abs()).collect();
        let cal = CalibrationSet::new(cal_x.iter().map(|&v| vec![v]).collect(), residuals, Some(scales)).unwrap();
        let mut sorted = alphas.clone();
        sorted.sort_by(|p, q| p.partial_cmp(q).unwrap());
        for pair in sorted.windows(2) {
            let (small, large) = (pair[0], pair[1]);
            prop_assert!(
                lvd_interval(0.0, &m, &[x], &cal, large).unwrap().half_width
                    <= lvd_interval(0.0, &m, &[x], &cal, small).unwrap().half_width
            );
            prop_assert!(
                split_interval(0.0, &cal, large).unwrap().half_width
                    <= split_interval(0.0, &cal, small).unwrap().half_width
            );
            prop_assert!(
                mad_interval(0.0, &m, &[x], &cal, large, 1.7).unwrap().half_width
                    <= mad_interval(0.0, &m, &[x], &cal, small, 1.7).unwrap().half_width
            );
        }
    }

    #[test]
    fn prepared_matches_direct_bitwise(
        a in matrix_strategy(2, 2),
        cal_pts in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0, 0u8..6, 1u8..4), 1..60),
        x in prop::collection::vec(-3.0f64..3.0, 2),
        sigma in 0.25f64..4.0,
        alphas in prop::collection::vec(0.001f64..0.999, 1..6),
    ) {
        // Few distinct residuals and scales, so ties are common.
        let m = MetricModel::on_normalized(a).unwrap();
        let cal = CalibrationSet::new(
            cal_pts.iter().map(|t| vec![t.0, t.1]).collect(),
            cal_pts.iter().map(|t| f64::from(t.2) - 2.5).collect(),
            Some(cal_pts.iter().map(|t| f64::from(t.3) / 2.0).collect()),
        )
        .unwrap();
        let prep = PreparedCalibration::new(&m, &cal).unwrap();
        let lvd = prep.lvd_half_widths(&x, &alphas).unwrap();
        let mad = prep.mad_half_widths(&x, sigma, &alphas).unwrap();
        for (j, &alpha) in alphas.iter().enumerate() {
            let direct = lvd_interval(0.0, &m, &x, &cal, alpha).unwrap().half_width;
            prop_assert_eq!(lvd[j].to_bits(), direct.to_bits());
            let direct = mad_interval(0.0, &m, &x, &cal, alpha, sigma).unwrap().half_width;
            prop_assert_eq!(mad[j].to_bits(), direct.to_bits());
        }
    }

    #[test]
    fn half_widths_are_translation_invariant(
        ys in prop::collection::vec(-400i32..400, 1..40),
        preds in prop::collection::vec(-400i32..400, 40),
        shift in -1000i32..1000,
        alpha in 0.01f64..0.99,
    ) {
        // Eighths keep every sum exact.
        let y: Vec<f64> = ys.iter().map(|&v| f64::from(v) / 8.0).collect();
        let p: Vec<f64> = preds[..y.len()].iter().map(|&v| f64::from(v) / 8.0).collect();
        let c = f64::from(shift);
        let y2: Vec<f64> = y.iter().map(|v| v + c).collect();
        let p2: Vec<f64> = p.iter().map(|v| v + c).collect();
        let emb: Vec<Vec<f64>> = (0..y.len()).map(|i| vec![i as f64 / 10.0]).collect();
        let cal = collect_residuals(&y, &p, None).unwrap().with_embeddings(emb.clone()).unwrap();
        let cal2 = collect_residuals(&y2, &p2, None).unwrap().with_embeddings(emb).unwrap();
        let m = MetricModel::on_normalized(Matrix::from_row_major(1, 1, vec![2.0]).unwrap()).unwrap();
        let a = lvd_interval(1.0, &m, &[0.3], &cal, alpha).unwrap();
        let b = lvd_interval(1.0 + c, &m, &[0.3], &cal2, alpha).unwrap();
        prop_assert_eq!(a.half_width, b.half_width);
        prop_assert_eq!(
            split_interval(0.0, &cal, alpha).unwrap().half_width,
            split_interval(c, &cal2, alpha).unwrap().half_width
        );
    }
}

fn random_cal(rng: &mut ChaCha8Rng, m: usize, h: usize, scales: Option<f64>) -> CalibrationSet {
    let emb: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..h).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let res: Vec<f64> = (0..m).map(|_| rng.random_range(-3.0..3.0)).collect();
    CalibrationSet::new(emb, res, scales.map(|c| vec![c; m])).unwrap()
}

#[test]
fn zero_transform_reduces_lvd_to_split() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for m in [0usize, 1, 9, 50, 333] {
        let cal = random_cal(&mut rng, m, 3, None);
        let model = MetricModel::on_normalized(Matrix::zeros(2, 3)).unwrap();
        let prep = PreparedCalibration::new(&model, &cal).unwrap();
        for _ in 0..20 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-10.0..10.0)).collect();
            for alpha in [0.01, 0.05, 0.1, 0.2, 0.5, 0.9] {
                let lvd = lvd_interval(0.0, &model, &x, &cal, alpha)
                    .unwrap()
                    .half_width;
                let split = split_interval(0.0, &cal, alpha).unwrap().half_width;
                assert_eq!(lvd.to_bits(), split.to_bits());
                let fast = prep.lvd_half_widths(&x, &[alpha]).unwrap()[0];
                assert_eq!(fast.to_bits(), split.to_bits());
            }
        }
    }
}

#[test]
fn constant_mad_scale_reduces_to_lvd() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let model = MetricModel::on_normalized(
        Matrix::from_row_major(2, 3, vec![0.8, -0.2, 0.1, 0.3, 0.9, -0.4]).unwrap(),
    )
    .unwrap();
    for c in [0.5, 1.0, 2.0] {
        let cal = random_cal(&mut rng, 200, 3, Some(c));
        for _ in 0..30 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            for alpha in [0.05, 0.1, 0.3] {
                let base = lvd_interval(0.0, &model, &x, &cal, alpha)
                    .unwrap()
                    .half_width;
                let mad = mad_interval(0.0, &model, &x, &cal, alpha, c)
                    .unwrap()
                    .half_width;
                if base.is_infinite() {
                    assert!(mad.is_infinite());
                } else {
                    assert!((mad - base).abs() <= 1e-9 * base.abs().max(f64::MIN_POSITIVE));
                }
            }
        }
    }
}

fn coordinate_target_data(seed: u64, n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let ys = xs.iter().map(|x| x[1]).collect();
    (xs, ys)
}

#[test]
fn training_lowers_loo_loss_on_coordinate_target() {
    let (xs, ys) = coordinate_target_data(5, 300);
    let cfg = TrainConfig {
        rank: 2,
        max_batches: 300,
        seed: 3,
        ..TrainConfig::default()
    };
    let (_, summary) = train_metric(&xs, &ys, &cfg).unwrap();
    assert!(summary.initial_loss > 1e-8);
    assert!(
        summary.final_loss < summary.initial_loss,
        "{} !< {}",
        summary.final_loss,
        summary.initial_loss
    );
    assert!(!summary.reverted_to_init);
}

#[test]
fn training_is_deterministic_per_seed() {
    let (xs, ys) = coordinate_target_data(6, 150);
    let cfg = TrainConfig {
        rank: 2,
        max_batches: 60,
        batch_size: 32,
        neighbor_cap: 50,
        neighbor_sample: Some(20),
        seed: 99,
        ..TrainConfig::default()
    };
    let (a, sa) = train_metric(&xs, &ys, &cfg).unwrap();
    let (b, sb) = train_metric(&xs, &ys, &cfg).unwrap();
    let bits = |m: &MetricModel| {
        m.transform()
            .as_slice()
            .iter()
            .map(|v| v.to_bits())
            .collect::<Vec<_>>()
    };
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(sa, sb);
    let (c, _) = train_metric(&xs, &ys, &TrainConfig { seed: 100, ..cfg }).unwrap();
    assert_ne!(bits(&a), bits(&c));
}

#[test]
fn returned_model_is_never_worse_than_init() {
    for seed in 0..6 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<Vec<f64>> = (0..60)
            .map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        // Pure noise targets: training may not find anything to learn.
        let ys: Vec<f64> = (0..60).map(|_| rng.random_range(-1.0..1.0)).collect();
        for smooth in [false, true] {
            let cfg = TrainConfig {
                rank: 2,
                max_batches: 80,
                batch_size: 10,
                learning_rate: 0.2,
                smooth,
                seed,
                ..TrainConfig::default()
            };
            let (model, summary) = train_metric(&xs, &ys, &cfg).unwrap();
            let norm_xs = model.norm().normalize_all(&xs).unwrap();
            let loss = full_loss(&model, &norm_xs, &ys, &cfg).unwrap();
            assert_eq!(loss, summary.final_loss);
            assert!(summary.final_loss <= summary.initial_loss);
        }
    }
}

#[test]
fn two_point_closed_form() {
    let xs = vec![vec![0.0, 1.0], vec![3.0, -1.0]];
    let ys = vec![2.0, -1.0];
    let cfg = TrainConfig {
        smooth: false,
        ..TrainConfig::default()
    };
    let (model, summary) = train_metric(&xs, &ys, &cfg).unwrap();
    assert_eq!(summary.final_loss, 9.0);
    let norm_xs = model.norm().normalize_all(&xs).unwrap();
    let (loss, grad) = loss_and_gradient(&model, &[0, 1], &norm_xs, &ys, &cfg).unwrap();
    assert_eq!(loss, 9.0);
    assert!(grad.as_slice().iter().all(|&g| g == 0.0));
}
