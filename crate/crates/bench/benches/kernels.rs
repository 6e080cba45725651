use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use setvec_bench::{tensor, wave};
use setvec_core::eval::{auc_pairwise, latent_spectrum, roc_curve};
use setvec_core::gradcheck::grad_check;
use setvec_core::ops::{conv2d, conv3d, Conv, DifferentiableOp};

fn conv(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv");
    let x = tensor(&[35, 1, 28, 28], 0.1);
    let k = tensor(&[8, 1, 3, 3], 0.2);
    let b = tensor(&[8], 0.3);
    g.bench_function("conv2d_bag35_28x28", |bn| bn.iter(|| conv2d(black_box(&x), &k, &b, 2).unwrap()));
    let v = tensor(&[27, 1, 32, 32, 32], 0.1);
    let k3 = tensor(&[8, 1, 3, 3, 3], 0.2);
    g.bench_function("conv3d_bag27_32cube", |bn| bn.iter(|| conv3d(black_box(&v), &k3, &b, 2).unwrap()));
    g.bench_function("conv2d_backward_bag35", |bn| {
        let mut op = Conv::new(2, 2);
        let y = op.forward(&[&x, &k, &b]).unwrap();
        let gy = tensor(y.shape(), 0.4);
        bn.iter(|| op.backward(&[&x, &k, &b], &y, black_box(&gy), &[true, true, true]).unwrap())
    });
    g.finish();
}

fn metrics(c: &mut Criterion) {
    let mut g = c.benchmark_group("metrics");
    for n in [50usize, 500] {
        let s = wave(n, 0.5);
        let l: Vec<bool> = (0..n).map(|i| i % 3 == 0).collect();
        g.bench_with_input(BenchmarkId::new("roc_curve", n), &n, |bn, _| {
            bn.iter(|| roc_curve(black_box(&s), &l).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("auc_pairwise", n), &n, |bn, _| {
            bn.iter(|| auc_pairwise(black_box(&s), &l))
        });
    }
    let h = tensor(&[2000, 16], 0.7);
    g.bench_function("latent_spectrum_2000x16", |bn| bn.iter(|| latent_spectrum(black_box(&h)).unwrap()));
    g.finish();
}

fn gradcheck(c: &mut Criterion) {
    let x = tensor(&[2, 1, 7, 7], 0.1);
    let k = tensor(&[2, 1, 3, 3], 0.2);
    let b = tensor(&[2], 0.3);
    c.bench_function("grad_check_conv2d_small", |bn| {
        bn.iter(|| grad_check(&mut Conv::new(2, 2), black_box(&[x.clone(), k.clone(), b.clone()]), 1e-3).unwrap())
    });
}

criterion_group!(benches, conv, metrics, gradcheck);
criterion_main!(benches);
