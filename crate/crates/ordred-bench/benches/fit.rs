use criterion::{criterion_group, criterion_main, Criterion};
use ordred::em::{fit, FitOptions};
use ordred::model::BasisSpec;
use ordred::simulate::{generate, SimDesign};

fn bench_fit(c: &mut Criterion) {
    let (data, _) = generate(&SimDesign::validate_estep(1)).unwrap();
    let spec = BasisSpec::Polynomial { degree: 2 };
    c.bench_function("fit p=5 n=100 approximate (20 iters)", |b| {
        let opts = FitOptions {
            max_iter: 20,
            ..Default::default()
        };
        b.iter(|| fit(&data, &spec, 2, &opts).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench_fit
}
criterion_main!(benches);
