use ordred::em::{fit, FitOptions};
use ordred::model::BasisSpec;
use ordred::simulate::{generate, subspace_angle, SimDesign};
use ordred::tmvn::Backend;
use rayon::prelude::*;
use std::time::Instant;

fn main() {
    let mut means = Vec::new();
    for backend in [Backend::Approximate, Backend::Exact { points: 1 << 13 }] {
        let t0 = Instant::now();
        let angles: Vec<f64> = (0..25u64).into_par_iter().map(|s| {
            let (data, truth) = generate(&SimDesign::validate_estep(1000 + s)).unwrap();
            let opts = FitOptions { backend, seed: s, ..Default::default() };
            let model = fit(&data, &BasisSpec::Polynomial { degree: 2 }, 2, &opts).unwrap();
            subspace_angle(&model.params.alpha, &truth.alpha).unwrap()
        }).collect();
        let mean = angles.iter().sum::<f64>() / angles.len() as f64;
        let sd = (angles.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 24.0).sqrt();
        println!("{backend:?}: mean = {mean:.2} sd = {sd:.2}, total = {:.0}s", t0.elapsed().as_secs_f64());
        means.push(mean);
    }
    println!("diff (approx - exact) = {:.2}", means[0] - means[1]);
}
