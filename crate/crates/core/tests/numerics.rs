use proptest::prelude::*;
use protofeedback::numerics::gradcheck::{grad_check, GradCheckConfig, Stencil};
use protofeedback::numerics::gru::{gru_cell, gru_cell_backward, gru_cell_cached, GruWeights};
use protofeedback::numerics::kernels::*;
use protofeedback::numerics::Matrix;
use protofeedback::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn triple_loop(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            let mut s = 0.0;
            for p in 0..a.cols() {
                s += a.get(i, p) * b.get(p, j);
            }
            out.set(i, j, s);
        }
    }
    out
}

/// Checks a matrix-valued op by contracting its output with a fixed random
/// functional. `forward` maps flat inputs to the output; `backward` maps
/// flat inputs and the upstream gradient to flat input gradients.
fn check_composed(
    name: &str,
    rng: &mut ChaCha8Rng,
    point: &[f64],
    forward: impl Fn(&[f64]) -> Matrix,
    backward: impl Fn(&[f64], &Matrix) -> Vec<f64>,
    config: &GradCheckConfig,
) -> f64 {
    let out = forward(point);
    // Coefficients bounded away from zero keep every gradient entry well
    // above the finite-difference noise floor.
    let functional = Matrix::from_fn(out.rows(), out.cols(), |_, _| {
        let m: f64 = rng.random_range(0.5..1.5);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    });
    let scalar = |x: &[f64]| {
        let o = forward(x);
        Ok(o.data().iter().zip(functional.data()).map(|(a, b)| a * b).sum())
    };
    let analytic = backward(point, &functional);
    let report = grad_check(name, scalar, point, &analytic, config).unwrap();
    assert!(report.pass, "{name}: {report:?}");
    report.max_relative_error
}

fn split(x: &[f64], shapes: &[(usize, usize)]) -> Vec<Matrix> {
    let mut off = 0;
    shapes
        .iter()
        .map(|&(r, c)| {
            let m = Matrix::new(r, c, x[off..off + r * c].to_vec()).unwrap();
            off += r * c;
            m
        })
        .collect()
}

fn flat(ms: &[Matrix]) -> Vec<f64> {
    ms.iter().flat_map(|m| m.data().to_vec()).collect()
}

#[test]
fn matmul_identity_and_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let m = rand_matrix(&mut rng, 3, 4);
    assert_eq!(matmul(&Matrix::identity(3), &m).unwrap(), m);
    let z = matmul(&m, &Matrix::zeros(4, 2)).unwrap();
    assert!(z.data().iter().all(|&v| v == 0.0));
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = rand_matrix(&mut rng, 4, 3);
    let b = rand_matrix(&mut rng, 3, 2);
    assert!(matmul(&a, &b).unwrap().max_abs_diff(&triple_loop(&a, &b)) <= 1e-12);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let err = matmul(&Matrix::zeros(2, 3), &Matrix::zeros(2, 3)).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, Error::Dimension { .. }));
    assert!(msg.contains("(2, 3)"), "{msg}");
}

#[test]
fn softmax_examples() {
    let eq = softmax_rows(&Matrix::row_vector(&[0.7; 5])).unwrap();
    for v in eq.data() {
        assert!((v - 0.2).abs() < 1e-15);
    }
    let single = softmax_rows(&Matrix::new(2, 1, vec![-300.0, 42.0]).unwrap()).unwrap();
    assert_eq!(single.data(), &[1.0, 1.0]);

    // Independent form: w_i = 1 / Σ_k exp(l_k − l_i).
    let logits = [1.0, 2.0, 3.0];
    let s = softmax_rows(&Matrix::row_vector(&logits)).unwrap();
    for (i, li) in logits.iter().enumerate() {
        let oracle = 1.0 / logits.iter().map(|lk| (lk - li).exp()).sum::<f64>();
        assert!((s.get(0, i) - oracle).abs() < 1e-15);
    }
    assert!(matches!(softmax_rows(&Matrix::zeros(3, 0)), Err(Error::Degenerate(_))));
}

#[test]
fn layer_norm_examples() {
    let ones = vec![1.0; 4];
    let zeros = vec![0.0; 4];
    let out = layer_norm(&[3.5; 4], &ones, &zeros, 1e-5).unwrap();
    assert!(out.iter().all(|&v| v == 0.0));

    let out = layer_norm(&[1.0, -1.0], &[1.0, 1.0], &[0.0, 0.0], 1e-14).unwrap();
    assert!((out[0] - 1.0).abs() < 1e-12 && (out[1] + 1.0).abs() < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x: Vec<f64> = (0..8).map(|_| rng.random_range(-3.0..3.0)).collect();
    let g: Vec<f64> = (0..8).map(|_| rng.random_range(0.5..1.5)).collect();
    let b: Vec<f64> = (0..8).map(|_| rng.random_range(-0.5..0.5)).collect();
    let mean = x.iter().sum::<f64>() / 8.0;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
    let out = layer_norm(&x, &g, &b, 1e-5).unwrap();
    for i in 0..8 {
        let oracle = g[i] * (x[i] - mean) / (var + 1e-5).sqrt() + b[i];
        assert!((out[i] - oracle).abs() < 1e-12);
    }
    assert!(matches!(
        layer_norm(&[1.0, 2.0], &[1.0], &[0.0, 0.0], 1e-5),
        Err(Error::Dimension { .. })
    ));
}

fn random_gru(rng: &mut ChaCha8Rng, input: usize, hidden: usize) -> GruWeights {
    let mut w = GruWeights::zeros(input, hidden);
    for m in [
        &mut w.w_iz,
        &mut w.w_ir,
        &mut w.w_in,
        &mut w.w_hz,
        &mut w.w_hr,
        &mut w.w_hn,
        &mut w.b_iz,
        &mut w.b_ir,
        &mut w.b_in,
        &mut w.b_hz,
        &mut w.b_hr,
        &mut w.b_hn,
    ] {
        *m = rand_matrix(rng, m.rows(), m.cols());
    }
    w
}

/// Scalar re-evaluation of the cell equations, one unit at a time.
fn gru_reference(x: &[f64], h: &[f64], w: &GruWeights) -> Vec<f64> {
    let dot = |m: &Matrix, i: usize, v: &[f64]| -> f64 { (0..v.len()).map(|k| m.get(i, k) * v[k]).sum() };
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    (0..h.len())
        .map(|i| {
            let z = sig(dot(&w.w_iz, i, x) + w.b_iz.get(0, i) + dot(&w.w_hz, i, h) + w.b_hz.get(0, i));
            let r = sig(dot(&w.w_ir, i, x) + w.b_ir.get(0, i) + dot(&w.w_hr, i, h) + w.b_hr.get(0, i));
            let n = (dot(&w.w_in, i, x) + w.b_in.get(0, i) + r * (dot(&w.w_hn, i, h) + w.b_hn.get(0, i))).tanh();
            (1.0 - z) * n + z * h[i]
        })
        .collect()
}

#[test]
fn gru_zero_parameters_halve_hidden() {
    let w = GruWeights::zeros(3, 3);
    let h = Matrix::row_vector(&[0.4, -2.0, 1.0]);
    let out = gru_cell(&Matrix::row_vector(&[5.0, 1.0, -1.0]), &h, &w).unwrap();
    for (o, hv) in out.data().iter().zip(h.data()) {
        assert!((o - 0.5 * hv).abs() < 1e-15);
    }
}

#[test]
fn gru_saturated_update_gate_passes_hidden_through() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut w = random_gru(&mut rng, 4, 4);
    w.b_iz = Matrix::filled(1, 4, 50.0);
    w.b_hz = Matrix::filled(1, 4, 50.0);
    let h = rand_matrix(&mut rng, 3, 4);
    let out = gru_cell(&rand_matrix(&mut rng, 3, 4), &h, &w).unwrap();
    assert!(out.max_abs_diff(&h) <= 1e-6);
}

#[test]
fn gru_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let w = random_gru(&mut rng, 3, 5);
    let x = rand_matrix(&mut rng, 4, 3);
    let h = rand_matrix(&mut rng, 4, 5);
    let out = gru_cell(&x, &h, &w).unwrap();
    for i in 0..4 {
        let oracle = gru_reference(x.row(i), h.row(i), &w);
        for (a, b) in out.row(i).iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-13);
        }
    }
    assert!(gru_cell(&x, &Matrix::zeros(4, 4), &w).is_err());
}

#[test]
fn elementwise_examples() {
    assert_eq!(sigmoid(0.0), 0.5);
    assert!((sigmoid(50.0) - 1.0).abs() < 1e-15);
    assert!((sigmoid(-1.3) - 1.0 / (1.0 + 1.3f64.exp())).abs() < 1e-15);
    let t = tanh_m(&Matrix::row_vector(&[0.0, 0.5]));
    assert_eq!(t.get(0, 0), 0.0);
    assert!((t.get(0, 1) - (1.0f64.exp() - 1.0) / (1.0f64.exp() + 1.0)).abs() < 1e-15);
    assert!((tanh_m(&Matrix::row_vector(&[40.0])).get(0, 0) - 1.0).abs() < 1e-15);
    let r = relu_m(&Matrix::row_vector(&[-2.0, 0.0, 3.0]));
    assert_eq!(r.data(), &[0.0, 0.0, 3.0]);
}

#[test]
fn concat_and_affine_examples() {
    assert_eq!(concat(&[1.0], &[2.0, 3.0]), vec![1.0, 2.0, 3.0]);
    assert_eq!(concat(&[], &[2.0]), vec![2.0]);
    let a = Matrix::new(2, 1, vec![1.0, 2.0]).unwrap();
    let b = Matrix::new(2, 2, vec![3.0, 4.0, 5.0, 6.0]).unwrap();
    let c = concat_cols(&a, &b).unwrap();
    assert_eq!(c.row(1), &[2.0, 5.0, 6.0]);
    assert!(concat_cols(&a, &Matrix::zeros(3, 1)).is_err());

    let x = Matrix::row_vector(&[1.0, -2.0, 0.5]);
    let id = affine(&x, &Matrix::identity(3), &Matrix::zeros(1, 3)).unwrap();
    assert_eq!(id, x);
    let zero = affine(&x, &Matrix::zeros(2, 3), &Matrix::row_vector(&[7.0, 8.0])).unwrap();
    assert_eq!(zero.data(), &[7.0, 8.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let w = rand_matrix(&mut rng, 2, 3);
    let bias = rand_matrix(&mut rng, 1, 2);
    let y = affine(&x, &w, &bias).unwrap();
    for i in 0..2 {
        let oracle: f64 = (0..3).map(|k| w.get(i, k) * x.get(0, k)).sum::<f64>() + bias.get(0, i);
        assert!((y.get(0, i) - oracle).abs() < 1e-14);
    }
}

#[test]
fn normalize_distance_cosine_examples() {
    let n = l2_normalize_rows(&Matrix::new(2, 2, vec![3.0, 4.0, 0.0, 0.0]).unwrap());
    assert_eq!(n.row(0), &[0.6, 0.8]);
    assert_eq!(n.row(1), &[0.0, 0.0]);
    let unit = l2_normalize_rows(&Matrix::row_vector(&[0.0, 1.0]));
    assert_eq!(unit.data(), &[0.0, 1.0]);

    assert_eq!(squared_distance(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
    assert_eq!(squared_distance(&[0.0, 0.0], &[3.0, 4.0]), 25.0);
    let (a, b) = ([0.3, -1.2, 2.0], [1.5, 0.2, -0.7]);
    let oracle: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
    assert!((squared_distance(&a, &b) - oracle).abs() < 1e-15);

    assert!((cosine(&[1.0, 2.0], &[2.0, 4.0]) - 1.0).abs() < 1e-15);
    assert_eq!(cosine(&[1.0, 0.0], &[0.0, 3.0]), 0.0);
    assert_eq!(cosine(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!((cosine(&a, &b) - dot / (na * nb)).abs() < 1e-15);
}

#[test]
fn linear_function_checks_exactly() {
    let coeffs = [2.0, -4.0, 8.0];
    let f = |x: &[f64]| Ok(x.iter().zip(&coeffs).map(|(a, b)| a * b).sum::<f64>());
    let report = grad_check("linear", f, &[0.5, 0.25, -0.125], &coeffs, &GradCheckConfig::default()).unwrap();
    assert!(report.max_relative_error <= 1e-10, "{report:?}");
    assert!(report.pass);
}

#[test]
fn sign_flipped_backward_fails() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = rand_matrix(&mut rng, 2, 3);
    let forward = |p: &[f64]| softmax_rows(&split(p, &[(2, 3)])[0]).unwrap();
    let out = forward(x.data());
    let functional = rand_matrix(&mut rng, 2, 3);
    let mut analytic = softmax_rows_backward(&out, &functional).into_data();
    analytic[0] = -analytic[0];
    let scalar = |p: &[f64]| {
        Ok(forward(p)
            .data()
            .iter()
            .zip(functional.data())
            .map(|(a, b)| a * b)
            .sum())
    };
    let report = grad_check("softmax", scalar, x.data(), &analytic, &GradCheckConfig::default()).unwrap();
    assert!(!report.pass);
}

#[test]
fn non_finite_evaluation_is_a_numeric_error() {
    let f = |x: &[f64]| Ok(1.0 / x[0]);
    let err = grad_check("reciprocal", f, &[0.0], &[0.0], &GradCheckConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Numeric(ref op) if op == "reciprocal"));
}

#[test]
fn every_kernel_backward_passes_at_20_points() {
    let cfg = GradCheckConfig {
        stencil: Stencil::Central4,
        step: 1e-4,
        ..Default::default()
    };
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);

        let shapes = [(3, 4), (4, 2)];
        let p = flat(&[rand_matrix(&mut rng, 3, 4), rand_matrix(&mut rng, 4, 2)]);
        check_composed(
            "matmul",
            &mut rng,
            &p,
            |x| {
                let m = split(x, &shapes);
                matmul(&m[0], &m[1]).unwrap()
            },
            |x, g| {
                let m = split(x, &shapes);
                let (ga, gb) = matmul_backward(&m[0], &m[1], g).unwrap();
                flat(&[ga, gb])
            },
            &cfg,
        );

        let p = rand_matrix(&mut rng, 3, 5).scale(3.0).into_data();
        check_composed(
            "softmax_rows",
            &mut rng,
            &p,
            |x| softmax_rows(&split(x, &[(3, 5)])[0]).unwrap(),
            |x, g| {
                let y = softmax_rows(&split(x, &[(3, 5)])[0]).unwrap();
                softmax_rows_backward(&y, g).into_data()
            },
            &cfg,
        );

        let shapes = [(3, 6), (1, 6), (1, 6)];
        let p = flat(&[
            rand_matrix(&mut rng, 3, 6).scale(2.0),
            rand_matrix(&mut rng, 1, 6),
            rand_matrix(&mut rng, 1, 6),
        ]);
        check_composed(
            "layer_norm",
            &mut rng,
            &p,
            |x| {
                let m = split(x, &shapes);
                layer_norm_rows(&m[0], &m[1], &m[2], LAYER_NORM_EPS).unwrap()
            },
            |x, g| {
                let m = split(x, &shapes);
                let (a, b, c) = layer_norm_rows_backward(&m[0], &m[1], LAYER_NORM_EPS, g);
                flat(&[a, b, c])
            },
            &cfg,
        );

        let w = random_gru(&mut rng, 3, 4);
        let x0 = rand_matrix(&mut rng, 2, 3);
        let h0 = rand_matrix(&mut rng, 2, 4);
        let mut parts = vec![x0, h0];
        parts.extend(w.clone().into_parts());
        let shapes: Vec<_> = parts.iter().map(Matrix::shape).collect();
        let p = flat(&parts);
        let unpack = |x: &[f64]| {
            let mut m = split(x, &shapes);
            let rest: [Matrix; 12] = m.split_off(2).try_into().unwrap();
            (m.remove(0), m.remove(0), GruWeights::from_parts(rest))
        };
        check_composed(
            "gru_cell",
            &mut rng,
            &p,
            |x| {
                let (i, h, w) = unpack(x);
                gru_cell(&i, &h, &w).unwrap()
            },
            |x, g| {
                let (i, h, w) = unpack(x);
                let (_, cache) = gru_cell_cached(&i, &h, &w).unwrap();
                let (gi, gh, gw) = gru_cell_backward(&i, &h, &w, &cache, g).unwrap();
                let mut all = vec![gi, gh];
                all.extend(gw.into_parts());
                flat(&all)
            },
            &cfg,
        );

        let p = rand_matrix(&mut rng, 2, 4).scale(3.0).into_data();
        check_composed(
            "sigmoid",
            &mut rng,
            &p,
            |x| sigmoid_m(&split(x, &[(2, 4)])[0]),
            |x, g| sigmoid_backward(&sigmoid_m(&split(x, &[(2, 4)])[0]), g).into_data(),
            &cfg,
        );
        check_composed(
            "tanh",
            &mut rng,
            &p,
            |x| tanh_m(&split(x, &[(2, 4)])[0]),
            |x, g| tanh_backward(&tanh_m(&split(x, &[(2, 4)])[0]), g).into_data(),
            &cfg,
        );
        // Keep relu inputs away from the kink.
        let p: Vec<f64> = p.iter().map(|v| if v.abs() < 0.05 { v + 0.1 } else { *v }).collect();
        check_composed(
            "relu",
            &mut rng,
            &p,
            |x| relu_m(&split(x, &[(2, 4)])[0]),
            |x, g| relu_backward(&split(x, &[(2, 4)])[0], g).into_data(),
            &cfg,
        );

        let shapes = [(2, 3), (2, 2)];
        let p = flat(&[rand_matrix(&mut rng, 2, 3), rand_matrix(&mut rng, 2, 2)]);
        check_composed(
            "concat_cols",
            &mut rng,
            &p,
            |x| {
                let m = split(x, &shapes);
                concat_cols(&m[0], &m[1]).unwrap()
            },
            |_, g| {
                let (a, b) = concat_cols_backward(3, g);
                flat(&[a, b])
            },
            &cfg,
        );

        let shapes = [(3, 4), (2, 4), (1, 2)];
        let p = flat(&[
            rand_matrix(&mut rng, 3, 4),
            rand_matrix(&mut rng, 2, 4),
            rand_matrix(&mut rng, 1, 2),
        ]);
        check_composed(
            "affine",
            &mut rng,
            &p,
            |x| {
                let m = split(x, &shapes);
                affine(&m[0], &m[1], &m[2]).unwrap()
            },
            |x, g| {
                let m = split(x, &shapes);
                let (a, b, c) = affine_backward(&m[0], &m[1], g).unwrap();
                flat(&[a, b, c])
            },
            &cfg,
        );

        let p = rand_matrix(&mut rng, 3, 4).into_data();
        check_composed(
            "l2_normalize_rows",
            &mut rng,
            &p,
            |x| l2_normalize_rows(&split(x, &[(3, 4)])[0]),
            |x, g| l2_normalize_rows_backward(&split(x, &[(3, 4)])[0], g).into_data(),
            &cfg,
        );

        let p = rand_matrix(&mut rng, 1, 10).into_data();
        check_composed(
            "squared_distance",
            &mut rng,
            &p,
            |x| Matrix::scalar(squared_distance(&x[..5], &x[5..])),
            |x, g| {
                let ga = squared_distance_backward(&x[..5], &x[5..], g.get(0, 0));
                let gb: Vec<f64> = ga.iter().map(|v| -v).collect();
                concat(&ga, &gb)
            },
            &cfg,
        );
        check_composed(
            "cosine",
            &mut rng,
            &p,
            |x| Matrix::scalar(cosine(&x[..5], &x[5..])),
            |x, g| {
                let (ga, gb) = cosine_backward(&x[..5], &x[5..], g.get(0, 0));
                concat(&ga, &gb)
            },
            &cfg,
        );
    }
}

#[test]
fn kernels_are_bit_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = rand_matrix(&mut rng, 5, 7);
    let b = rand_matrix(&mut rng, 7, 3);
    let first = softmax_rows(&matmul(&a, &b).unwrap()).unwrap();
    for _ in 0..3 {
        let again = softmax_rows(&matmul(&a, &b).unwrap()).unwrap();
        assert!(first
            .data()
            .iter()
            .zip(again.data())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

fn finite_row(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0f64..50.0, len)
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant(row in finite_row(6), shift in -100.0f64..100.0) {
        let s = softmax_rows(&Matrix::row_vector(&row)).unwrap();
        prop_assert!((s.sum() - 1.0).abs() <= 1e-9);
        prop_assert!(s.data().iter().all(|&v| v >= 0.0));
        let shifted: Vec<f64> = row.iter().map(|v| v + shift).collect();
        let t = softmax_rows(&Matrix::row_vector(&shifted)).unwrap();
        prop_assert!(s.max_abs_diff(&t) <= 1e-12);
    }

    #[test]
    fn layer_norm_standardizes(row in finite_row(9)) {
        let n = row.len() as f64;
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        prop_assume!(var >= 1e-3);
        let out = layer_norm(&row, &[1.0; 9], &[0.0; 9], LAYER_NORM_EPS).unwrap();
        let m = out.iter().sum::<f64>() / n;
        let v = out.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
        prop_assert!(m.abs() <= 1e-12);
        prop_assert!((v - 1.0).abs() <= 1e-4);
    }

    #[test]
    fn gru_output_is_bounded(seed in 0u64..1000, scale in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = random_gru(&mut rng, 3, 3);
        let x = rand_matrix(&mut rng, 2, 3).scale(scale);
        let h = rand_matrix(&mut rng, 2, 3).scale(scale);
        let out = gru_cell(&x, &h, &w).unwrap();
        for (o, hv) in out.data().iter().zip(h.data()) {
            prop_assert!(o.abs() <= hv.abs().max(1.0) + 1e-15);
        }
    }
}
