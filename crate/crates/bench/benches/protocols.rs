use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ptinfer_bench::{random_real_matrix, random_ring_matrix, session};
use ptinfer_core::matmul::run_matmul_protocol;
use ptinfer_core::mpc::arith::p_elemul;
use ptinfer_core::mpc::session::run_local;
use ptinfer_core::mpc::share::share_secret;
use ptinfer_core::FixedPointParams;

fn matmul(c: &mut Criterion) {
    let mut g = c.benchmark_group("matmul_protocol");
    g.sample_size(10);
    for (m, r, n) in [(32, 128, 64), (32, 128, 384), (128, 128, 128)] {
        let a = random_ring_matrix(m, r, 1);
        let b = random_ring_matrix(r, n, 2);
        g.bench_function(BenchmarkId::from_parameter(format!("{m}x{r}x{n}")), |bench| {
            bench.iter(|| {
                run_local(
                    session(8192),
                    |s| run_matmul_protocol(s, &b, (m, r, n), true),
                    |s| run_matmul_protocol(s, &a, (m, r, n), true),
                )
                .unwrap()
            })
        });
    }
    g.finish();
}

fn elemul(c: &mut Criterion) {
    let fp = FixedPointParams::default();
    let mut g = c.benchmark_group("elemul");
    g.sample_size(10);
    for len in [1024, 16384] {
        let x = random_real_matrix(1, len, 4.0, 3);
        let y = random_real_matrix(1, len, 4.0, 4);
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(5);
        let (x0, x1) = share_secret(&x, &fp, &mut rng);
        let (y0, y1) = share_secret(&y, &fp, &mut rng);
        g.bench_function(BenchmarkId::from_parameter(len), |bench| {
            bench.iter(|| run_local(session(8192), |s| p_elemul(s, &x0, &y0), |s| p_elemul(s, &x1, &y1)).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, matmul, elemul);
criterion_main!(benches);
