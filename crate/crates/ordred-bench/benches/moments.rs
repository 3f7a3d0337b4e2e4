use criterion::{black_box, criterion_group, criterion_main, Criterion};
use nalgebra::{DMatrix, DVector};
use ordred::tmvn::{self, ConditionalSolver, Rectangle};

fn bench_trunc_1d(c: &mut Criterion) {
    c.bench_function("trunc_moments_1d bulk", |b| {
        b.iter(|| {
            let mut acc = 0.0;
            for i in 0..100 {
                let mu = -2.0 + 0.04 * i as f64;
                let (m, s) = tmvn::trunc_moments_1d(black_box(mu), 1.0, -0.7, 1.1).unwrap();
                acc += m + s;
            }
            acc
        })
    });
}

fn equicorr(p: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { rho })
}

fn bench_conditional(c: &mut Criterion) {
    let p = 5;
    let delta = equicorr(p, 0.3);
    let solver = ConditionalSolver::new(&delta).unwrap();
    let rect = Rectangle::new(
        DVector::from_element(p, -0.6),
        DVector::from_element(p, 0.9),
    )
    .unwrap();
    let mean = DVector::from_fn(p, |i, _| 0.1 * i as f64);
    c.bench_function("approx conditional moments p=5", |b| {
        b.iter(|| solver.moments(black_box(&rect), black_box(&mean)).unwrap())
    });
    c.bench_function("exact conditional moments p=5 (2^10)", |b| {
        b.iter(|| {
            tmvn::exact_moments_for_rect(black_box(&mean), &delta, &rect, 1 << 10, 7).unwrap()
        })
    });
    c.bench_function("rect_prob p=5 (2^10)", |b| {
        b.iter(|| tmvn::rect_prob(black_box(&mean), &delta, &rect, 1 << 10, 7).unwrap())
    });
}

criterion_group!(benches, bench_trunc_1d, bench_conditional);
criterion_main!(benches);
