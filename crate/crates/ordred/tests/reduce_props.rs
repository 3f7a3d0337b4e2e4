//! Reduction-layer behavior: posterior weights, recode invariance,
//! equivariance, the single-index contract, and tabulation.

use nalgebra::DMatrix;
use ordred::em::{fit, FitOptions};
use ordred::model::{BasisSpec, OrdinalDataset, Response};
use ordred::reduce::{
    posterior_weights, reduce, reduce_dataset, ses_index, tabulate, ReduceOptions, TabulateOutcome,
};
use ordred::simulate::{generate, SimDesign};
use ordred::Error;

fn small_fit(seed: u64) -> (OrdinalDataset, ordred::FittedModel) {
    let design = SimDesign {
        n: 120,
        p: 3,
        g: vec![3; 3],
        structure_seed: 18,
        ..SimDesign::validate_estep(seed)
    };
    let (data, _) = generate(&design).unwrap();
    let opts = FitOptions {
        max_iter: 80,
        seed,
        ..Default::default()
    };
    let model = fit(&data, &BasisSpec::Polynomial { degree: 2 }, 2, &opts).unwrap();
    (data, model)
}

#[test]
fn weights_sum_to_one_for_every_observation() {
    let (data, model) = small_fit(1);
    let opts = ReduceOptions::default();
    for i in (0..data.n()).step_by(7) {
        let w = posterior_weights(&data.row(i), &model, &opts).unwrap();
        assert_eq!(w.len(), model.mixture.slices.len());
        let sum: f64 = w.iter().sum();
        assert!((sum - 1.0).abs() < 1e-10, "weights sum {sum}");
        assert!(w.iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn weights_equal_priors_when_predictors_ignore_response() {
    // With Psi = 0 the likelihood factor cancels in the Bayes ratio.
    let (data, mut model) = small_fit(2);
    let p = model.params.p();
    let r = model.params.r();
    model.params.alpha = DMatrix::zeros(p, 0);
    model.params.xi = DMatrix::zeros(0, r);
    let opts = ReduceOptions::default();
    let w = posterior_weights(&data.row(0), &model, &opts).unwrap();
    for (ws, slice) in w.iter().zip(model.mixture.slices.iter()) {
        assert!(
            (ws - slice.prior).abs() < 1e-10,
            "weight {ws} vs prior {}",
            slice.prior
        );
    }
}

#[test]
fn reduce_is_bitwise_deterministic() {
    let (data, model) = small_fit(3);
    let opts = ReduceOptions::default();
    let a = reduce(&data.row(5), &model, &opts).unwrap();
    let b = reduce(&data.row(5), &model, &opts).unwrap();
    assert_eq!(a, b);
    let r1 = reduce_dataset(&data, &model).unwrap();
    let r2 = reduce_dataset(&data, &model).unwrap();
    assert_eq!(r1.r, r2.r);
    assert!(r1.cache_hits + r1.cache_misses >= data.n() as u64);
    // Repeated observations hit the cache given only 27 possible cells.
    assert!(r1.cache_hits > 0);
}

#[test]
fn rotation_equivariance_of_reduction() {
    let (data, model) = small_fit(4);
    let opts = ReduceOptions::default();
    let base = reduce(&data.row(0), &model, &opts).unwrap();
    // Replace alpha by alpha * O for an orthogonal O.
    let theta = 0.55_f64;
    let o = DMatrix::from_row_slice(2, 2, &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()]);
    let mut rotated = model.clone();
    rotated.params.alpha = &model.params.alpha * &o;
    // xi transforms contragradiently so Psi (hence weights) is unchanged.
    rotated.params.xi = o.transpose() * &model.params.xi;
    let out = reduce(&data.row(0), &rotated, &opts).unwrap();
    let expect = o.transpose() * &base;
    assert!((out - expect).norm() < 1e-10);
}

#[test]
fn recode_invariance_end_to_end() {
    // The internal codes depend only on level order, so refitting the same
    // sample rebuilt from its own codes is bit-identical.
    let design = SimDesign {
        n: 100,
        p: 3,
        g: vec![3; 3],
        structure_seed: 18,
        ..SimDesign::validate_estep(5)
    };
    let (data, _) = generate(&design).unwrap();
    let y = data.y().clone();
    let rows1: Vec<Vec<u32>> = (0..data.n()).map(|i| data.row(i)).collect();
    let d1 = OrdinalDataset::from_codes(&rows1, data.g().to_vec(), y.clone()).unwrap();
    let opts = FitOptions {
        max_iter: 60,
        ..Default::default()
    };
    let m1 = fit(&d1, &BasisSpec::Polynomial { degree: 2 }, 2, &opts).unwrap();
    let m2 = fit(&data, &BasisSpec::Polynomial { degree: 2 }, 2, &opts).unwrap();
    assert_eq!(m1.params.alpha, m2.params.alpha);
    assert_eq!(m1.q_trace, m2.q_trace);
    let r1 = reduce_dataset(&d1, &m1).unwrap();
    let r2 = reduce_dataset(&data, &m2).unwrap();
    assert_eq!(r1.r, r2.r);
}

#[test]
fn ses_index_contract() {
    let design = SimDesign {
        d: 1,
        ..SimDesign::income_like(7)
    };
    let (data, _) = generate(&design).unwrap();
    let opts = FitOptions {
        max_iter: 60,
        ..Default::default()
    };
    let model = fit(&data, &BasisSpec::Polynomial { degree: 2 }, 1, &opts).unwrap();
    let ropts = ReduceOptions {
        prob_points: 1 << 10,
        ..Default::default()
    };
    let idx = ses_index(&data, &model, &ropts).unwrap();
    let min = idx.values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = idx.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(min, 0.0);
    assert_eq!(max, 1.0);
    // Orientation: non-negative correlation with the response.
    let y = match data.y() {
        Response::Continuous(v) => v.clone(),
        _ => unreachable!(),
    };
    let n = y.len() as f64;
    let my = y.iter().sum::<f64>() / n;
    let mi = idx.values.iter().sum::<f64>() / n;
    let cov: f64 = y
        .iter()
        .zip(idx.values.iter())
        .map(|(a, b)| (a - my) * (b - mi))
        .sum();
    assert!(cov >= 0.0, "index anti-correlated with the response");
}

#[test]
fn ses_index_requires_dimension_one() {
    let (data, model) = small_fit(8);
    let err = ses_index(&data, &model, &ReduceOptions::default()).unwrap_err();
    assert!(matches!(err, Error::DimensionNotOne { d: 2 }));
}

#[test]
fn tabulate_small_space_and_refusal() {
    let (data, model) = small_fit(9);
    let opts = ReduceOptions {
        prob_points: 1 << 8,
        ..Default::default()
    };
    // 27 cells fit easily.
    match tabulate(&model, 1 << 20, &opts).unwrap() {
        TabulateOutcome::Table(t) => {
            assert_eq!(t.len(), 27);
            let direct = reduce(&data.row(0), &model, &opts).unwrap();
            let looked = t.lookup(&model.map_codes(&data.row(0)));
            for k in 0..2 {
                assert!((looked[k] - direct[k]).abs() < 1e-12);
            }
        }
        TabulateOutcome::Refusal { .. } => panic!("refused a 27-cell table"),
    }
    // A tight budget forces refusal with the exact estimate.
    match tabulate(&model, 64, &opts).unwrap() {
        TabulateOutcome::Refusal { bytes_needed, cells } => {
            assert_eq!(cells, 27);
            assert_eq!(bytes_needed, 27 * 8 * 2);
        }
        TabulateOutcome::Table(_) => panic!("built a table over budget"),
    }
}

#[test]
fn paper_scale_table_is_refused() {
    // p = 20 predictors with 3 levels and d = 1 needs ~26 GB.
    let design = SimDesign {
        n: 60,
        p: 20,
        d: 1,
        g: vec![3; 20],
        ..SimDesign::performance(60, ordred::simulate::ErrorKind::Normal, 11)
    };
    let (data, _) = generate(&design).unwrap();
    let opts = FitOptions {
        max_iter: 10,
        ..Default::default()
    };
    let model = fit(&data, &BasisSpec::Polynomial { degree: 2 }, 1, &opts).unwrap();
    match tabulate(&model, 8 << 30, &ReduceOptions::default()).unwrap() {
        TabulateOutcome::Refusal { bytes_needed, .. } => {
            let gb = bytes_needed as f64 / (1u64 << 30) as f64;
            assert!((gb - 26.0).abs() < 1.0, "estimated {gb:.1} GiB");
        }
        TabulateOutcome::Table(_) => panic!("built a 26 GB table"),
    }
}
