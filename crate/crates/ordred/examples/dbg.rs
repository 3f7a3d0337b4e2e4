use ordred::em::{fit, FitOptions};
use ordred::model::BasisSpec;
use ordred::simulate::{generate, SimDesign};
use ordred::tmvn::Backend;
use std::time::Instant;

fn main() {
    let (data, _) = generate(&SimDesign::validate_estep(1001)).unwrap();
    let t0 = Instant::now();
    let opts = FitOptions {
        backend: Backend::Exact { points: 1 << 13 },
        ..Default::default()
    };
    let model = fit(&data, &BasisSpec::Polynomial { degree: 2 }, 2, &opts).unwrap();
    println!(
        "exact fit: {:.1}s, iters {}, converged {}",
        t0.elapsed().as_secs_f64(),
        model.iterations,
        model.converged
    );
    let t0 = Instant::now();
    let model = fit(&data, &BasisSpec::Polynomial { degree: 2 }, 2, &FitOptions::default()).unwrap();
    println!("approx fit: {:.3}s, iters {}", t0.elapsed().as_secs_f64(), model.iterations);
}
