use proptest::prelude::*;
use protofeedback::losses::{
    class_weights, loss_align, loss_align_backward, loss_cls, loss_cls_backward, loss_reg, loss_reg_backward,
    total_loss, LossConfig, RegTerms,
};
use protofeedback::{Error, Matrix};

fn rows(r: &[&[f64]]) -> Matrix {
    let cols = r[0].len();
    Matrix::from_rows(&r.iter().map(|x| x.to_vec()).collect::<Vec<_>>(), cols).unwrap()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

/// Direct transcription of both regularisers.
fn reg_oracle(p: &Matrix, gamma: f64) -> (f64, f64) {
    let r = p.rows();
    let u: Vec<Vec<f64>> = (0..r).map(|i| unit(p.row(i))).collect();
    let mut sim = 0.0;
    for a in &u {
        let row: Vec<f64> = u
            .iter()
            .map(|b| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
            .collect();
        sim += row.iter().map(|x| x * x).sum::<f64>().sqrt();
    }
    let mut div = 0.0;
    for i in 0..r {
        let nearest = (0..r)
            .filter(|&q| q != i)
            .map(|q| dist2(&u[i], &u[q]))
            .fold(f64::INFINITY, f64::min);
        div += (gamma - nearest).max(0.0);
    }
    (sim / (r * r) as f64, div / r as f64)
}

fn align_oracle(e: &Matrix, labels: &[usize], p: &Matrix, gamma: f64) -> f64 {
    let mut total = 0.0;
    for (j, &y) in labels.iter().enumerate() {
        let pos = dist2(e.row(j), p.row(y));
        let neg = (0..p.rows())
            .filter(|&r| r != y)
            .map(|r| dist2(e.row(j), p.row(r)))
            .fold(f64::INFINITY, f64::min);
        total += (pos - neg + gamma).max(0.0);
    }
    total / labels.len() as f64
}

/// Distance of every hinge argument and nearest-neighbour choice from a tie.
fn align_margin(e: &Matrix, labels: &[usize], p: &Matrix, gamma: f64) -> f64 {
    let mut margin = f64::INFINITY;
    for (j, &y) in labels.iter().enumerate() {
        let mut d: Vec<f64> = (0..p.rows())
            .filter(|&r| r != y)
            .map(|r| dist2(e.row(j), p.row(r)))
            .collect();
        d.sort_by(f64::total_cmp);
        let hinge = dist2(e.row(j), p.row(y)) - d[0] + gamma;
        margin = margin.min(hinge.abs());
        if d.len() > 1 {
            margin = margin.min(d[1] - d[0]);
        }
    }
    margin
}

fn reg_margin(p: &Matrix, gamma: f64) -> f64 {
    let u: Vec<Vec<f64>> = (0..p.rows()).map(|i| unit(p.row(i))).collect();
    let mut margin = f64::INFINITY;
    for i in 0..u.len() {
        let mut d: Vec<f64> = (0..u.len()).filter(|&q| q != i).map(|q| dist2(&u[i], &u[q])).collect();
        d.sort_by(f64::total_cmp);
        margin = margin.min((gamma - d[0]).abs()).min(d[1] - d[0]);
    }
    margin
}

fn cls_oracle(logits: &Matrix, labels: &[usize], w: Option<&[f64]>) -> f64 {
    let mut total = 0.0;
    for (j, &y) in labels.iter().enumerate() {
        let z: f64 = logits.row(j).iter().map(|v| v.exp()).sum();
        let p = logits.get(j, y).exp() / z;
        total += -w.map_or(1.0, |w| w[y]) * p.ln();
    }
    total / labels.len() as f64
}

#[test]
fn orthonormal_prototypes() {
    let reg = loss_reg(&Matrix::identity(2), 3.0).unwrap();
    assert_eq!(reg, RegTerms { sim: 0.5, div: 1.0 });
}

#[test]
fn duplicated_prototypes() {
    let reg = loss_reg(&rows(&[&[1.0, 0.0], &[1.0, 0.0]]), 3.0).unwrap();
    assert_eq!(reg.div, 3.0);
    assert!((reg.sim - 2f64.sqrt() / 2.0).abs() < 1e-15);
}

#[test]
fn reg_is_scale_invariant_per_row() {
    let p = rows(&[&[1.0, 2.0, 0.5], &[-1.0, 0.3, 2.0], &[0.2, -0.7, 1.1]]);
    let scaled = rows(&[&[10.0, 20.0, 5.0], &[-0.1, 0.03, 0.2], &[0.2, -0.7, 1.1]]);
    let (a, b) = (loss_reg(&p, 3.0).unwrap(), loss_reg(&scaled, 3.0).unwrap());
    assert!((a.sim - b.sim).abs() < 1e-14 && (a.div - b.div).abs() < 1e-14);
}

#[test]
fn reg_needs_two_prototypes() {
    assert!(matches!(loss_reg(&rows(&[&[1.0, 0.0]]), 3.0), Err(Error::Config(_))));
}

#[test]
fn align_hinge_closed_forms() {
    let p = rows(&[&[0.0, 0.0], &[3.0, 4.0]]);
    assert_eq!(loss_align(&rows(&[&[0.0, 0.0]]), &[0], &p, 20.0).unwrap(), 0.0);
    assert_eq!(loss_align(&rows(&[&[1.5, 2.0]]), &[0], &p, 20.0).unwrap(), 20.0);
    // pos 25, neg 0: 25 + 20
    assert_eq!(loss_align(&rows(&[&[3.0, 4.0]]), &[0], &p, 20.0).unwrap(), 45.0);
}

#[test]
fn align_rejects_bad_labels() {
    let p = rows(&[&[0.0, 0.0], &[3.0, 4.0]]);
    assert!(loss_align(&rows(&[&[0.0, 0.0]]), &[2], &p, 20.0).is_err());
    assert_eq!(loss_align(&Matrix::zeros(0, 2), &[], &p, 20.0).unwrap(), 0.0);
}

#[test]
fn cls_uniform_logits() {
    let logits = Matrix::zeros(3, 4);
    let v = loss_cls(&logits, &[0, 1, 3], None).unwrap();
    assert!((v - 4f64.ln()).abs() < 1e-15);
    let w = [2.0, 1.0, 1.0, 0.5];
    let v = loss_cls(&logits, &[0, 1, 3], Some(&w)).unwrap();
    assert!((v - 3.5 / 3.0 * 4f64.ln()).abs() < 1e-15);
}

#[test]
fn cls_is_stable_for_large_logits() {
    let logits = rows(&[&[1000.0, 0.0], &[-1000.0, 1000.0]]);
    let v = loss_cls(&logits, &[0, 1], None).unwrap();
    assert!(v.abs() < 1e-12);
    let v = loss_cls(&logits, &[1, 0], None).unwrap();
    assert!((v - 1500.0).abs() < 1e-9);
}

#[test]
fn cls_weight_length_checked() {
    assert!(matches!(
        loss_cls(&Matrix::zeros(1, 3), &[0], Some(&[1.0])),
        Err(Error::Data(_))
    ));
}

#[test]
fn class_weight_examples() {
    let w = class_weights(&[100, 10, 1], 0.5, [0.1, 10.0]).unwrap();
    let expected = [(10.0f64 / 100.0).sqrt(), 1.0, 10f64.sqrt()];
    for (a, b) in w.iter().zip(expected) {
        assert!((a - b).abs() < 1e-15);
    }
    let w = class_weights(&[1000, 10, 0], 1.0, [0.1, 5.0]).unwrap();
    assert_eq!(w, vec![0.1, 1.0, 5.0]);
    assert!(class_weights(&[0, 0], 0.5, [0.1, 10.0]).is_err());
}

#[test]
fn total_is_weighted_sum() {
    let cfg = LossConfig {
        lambda_sim: 2.0,
        lambda_div: 0.5,
        lambda_align: 0.25,
        ..LossConfig::default()
    };
    let b = total_loss(1.0, RegTerms { sim: 3.0, div: 4.0 }, 8.0, &cfg);
    assert_eq!(b.total, 1.0 + 6.0 + 2.0 + 2.0);
    let zero = LossConfig {
        lambda_sim: 0.0,
        lambda_div: 0.0,
        lambda_align: 0.0,
        ..LossConfig::default()
    };
    assert_eq!(total_loss(1.5, RegTerms { sim: 3.0, div: 4.0 }, 8.0, &zero).total, 1.5);
}

#[test]
fn config_validation() {
    assert!(LossConfig::default().validate().is_ok());
    let bad = LossConfig {
        gamma_align: 0.0,
        ..LossConfig::default()
    };
    assert!(bad.validate().is_err());
    let bad = LossConfig {
        lambda_div: -1.0,
        ..LossConfig::default()
    };
    assert!(bad.validate().is_err());
}

fn matrix(r: usize, c: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-2.0f64..2.0, r * c).prop_map(move |d| Matrix::new(r, c, d).unwrap())
}

fn central(f: impl Fn(&Matrix) -> f64, at: &Matrix, i: usize) -> f64 {
    let h = 1e-6;
    let (mut a, mut b) = (at.clone(), at.clone());
    a.data_mut()[i] += h;
    b.data_mut()[i] -= h;
    (f(&a) - f(&b)) / (2.0 * h)
}

proptest! {
    #[test]
    fn reg_matches_oracle(p in matrix(4, 3), gamma in 0.5f64..4.0) {
        prop_assume!(p.iter_rows().all(|r| r.iter().map(|v| v * v).sum::<f64>() > 1e-3));
        let reg = loss_reg(&p, gamma).unwrap();
        let (sim, div) = reg_oracle(&p, gamma);
        prop_assert!((reg.sim - sim).abs() < 1e-12);
        prop_assert!((reg.div - div).abs() < 1e-12);
        prop_assert!(reg.sim >= 0.0 && reg.div >= 0.0 && reg.div <= gamma);
    }

    #[test]
    fn align_matches_oracle(e in matrix(5, 3), p in matrix(4, 3), labels in prop::collection::vec(0usize..4, 5)) {
        let v = loss_align(&e, &labels, &p, 2.0).unwrap();
        prop_assert!((v - align_oracle(&e, &labels, &p, 2.0)).abs() < 1e-12);
        prop_assert!(v >= 0.0);
    }

    #[test]
    fn cls_matches_oracle(logits in matrix(4, 5), labels in prop::collection::vec(0usize..5, 4), w in prop::collection::vec(0.1f64..3.0, 5)) {
        let plain = loss_cls(&logits, &labels, None).unwrap();
        prop_assert!((plain - cls_oracle(&logits, &labels, None)).abs() < 1e-12);
        let weighted = loss_cls(&logits, &labels, Some(&w)).unwrap();
        prop_assert!((weighted - cls_oracle(&logits, &labels, Some(&w))).abs() < 1e-12);
        prop_assert!(plain > 0.0);
    }

    #[test]
    fn cls_gradient_rows_sum_to_zero(logits in matrix(3, 4), labels in prop::collection::vec(0usize..4, 3)) {
        let g = loss_cls_backward(&logits, &labels, None, 1.0);
        for j in 0..3 {
            prop_assert!(g.row(j).iter().sum::<f64>().abs() < 1e-12);
        }
        for i in 0..g.len() {
            let fd = central(|m| loss_cls(m, &labels, None).unwrap(), &logits, i);
            prop_assert!((fd - g.data()[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn align_gradient_matches_differences(e in matrix(3, 2), p in matrix(3, 2), labels in prop::collection::vec(0usize..3, 3)) {
        prop_assume!(align_margin(&e, &labels, &p, 1.0) > 1e-3);
        let (ge, gp) = loss_align_backward(&e, &labels, &p, 1.0, 1.0);
        for i in 0..e.len() {
            let fd = central(|m| loss_align(m, &labels, &p, 1.0).unwrap(), &e, i);
            prop_assert!((fd - ge.data()[i]).abs() < 1e-5 * ge.data()[i].abs().max(1.0));
        }
        for i in 0..p.len() {
            let fd = central(|m| loss_align(&e, &labels, m, 1.0).unwrap(), &p, i);
            prop_assert!((fd - gp.data()[i]).abs() < 1e-5 * gp.data()[i].abs().max(1.0));
        }
    }

    #[test]
    fn reg_gradient_matches_differences(p in matrix(3, 3)) {
        prop_assume!(p.iter_rows().all(|r| r.iter().map(|v| v * v).sum::<f64>() > 0.1));
        prop_assume!(reg_margin(&p, 3.0) > 1e-3);
        let g = loss_reg_backward(&p, 3.0, 1.0, 1.0);
        let f = |m: &Matrix| { let r = loss_reg(m, 3.0).unwrap(); r.sim + r.div };
        for i in 0..p.len() {
            let fd = central(f, &p, i);
            prop_assert!((fd - g.data()[i]).abs() < 1e-5 * g.data()[i].abs().max(1.0));
        }
    }
}
