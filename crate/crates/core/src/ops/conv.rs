//! Valid (unpadded) strided convolution and its adjoint, for 2-D and 3-D
//! inputs. 2-D tensors are handled as 3-D with a unit depth axis so both
//! share one im2col implementation.

use super::{arity, DifferentiableOp, Grads};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Geometry of one valid cross-correlation, always in 3-D form.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Geom {
    input: [usize; 3],
    kernel: [usize; 3],
    stride: [usize; 3],
    output: [usize; 3],
}

impl Geom {
    fn kvol(&self) -> usize {
        self.kernel.iter().product()
    }

    fn in_vol(&self) -> usize {
        self.input.iter().product()
    }

    fn out_vol(&self) -> usize {
        self.output.iter().product()
    }
}

/// Batch view of an activation tensor: `[n, c, spatial]` or `[c, spatial]`.
struct Layout {
    batched: bool,
    n: usize,
    c: usize,
    spatial: [usize; 3],
}

fn layout(op: &'static str, rank: usize, x: &[usize]) -> Result<Layout> {
    let batched = match x.len() {
        l if l == rank + 1 => false,
        l if l == rank + 2 => true,
        _ => {
            return Err(Error::dim(
                op,
                format!("expected a {}-D or {}-D input, got {x:?}", rank + 1, rank + 2),
            ))
        }
    };
    let (n, rest) = if batched { (x[0], &x[1..]) } else { (1, x) };
    Ok(Layout {
        batched,
        n,
        c: rest[0],
        spatial: lift(rank, &rest[1..]),
    })
}

fn lift(rank: usize, s: &[usize]) -> [usize; 3] {
    if rank == 2 {
        [1, s[0], s[1]]
    } else {
        [s[0], s[1], s[2]]
    }
}

fn lift_stride(rank: usize, stride: usize) -> [usize; 3] {
    if rank == 2 {
        [1, stride, stride]
    } else {
        [stride; 3]
    }
}

fn out_shape(rank: usize, l: &Layout, c: usize, spatial: [usize; 3]) -> Vec<usize> {
    let mut s = Vec::with_capacity(rank + 2);
    if l.batched {
        s.push(l.n);
    }
    s.push(c);
    if rank == 2 {
        s.extend_from_slice(&spatial[1..]);
    } else {
        s.extend_from_slice(&spatial);
    }
    s
}

/// Validates a kernel of shape `[a, b, k...]` and returns `(a, b, k)`.
fn kernel_dims(op: &'static str, rank: usize, k: &[usize]) -> Result<(usize, usize, [usize; 3])> {
    if k.len() != rank + 2 {
        return Err(Error::dim(op, format!("kernel must be {}-D, got {k:?}", rank + 2)));
    }
    if k[2..].contains(&0) {
        return Err(Error::dim(op, format!("empty kernel {k:?}")));
    }
    Ok((k[0], k[1], lift(rank, &k[2..])))
}

/// Unfolds one sample `[c, input]` into `[c·kvol, out_vol]`.
fn im2col<T: Scalar>(x: &[T], c: usize, g: &Geom, col: &mut [T]) {
    let [_, ih, iw] = g.input;
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let [od, oh, ow] = g.output;
    let p = g.out_vol();
    let mut row = 0;
    for ci in 0..c {
        let xc = &x[ci * g.in_vol()..(ci + 1) * g.in_vol()];
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    let dst = &mut col[row * p..(row + 1) * p];
                    let mut q = 0;
                    for zd in 0..od {
                        let id = zd * sd + a;
                        for zh in 0..oh {
                            let base = (id * ih + zh * sh + b) * iw + e;
                            for zw in 0..ow {
                                dst[q] = xc[base + zw * sw];
                                q += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `[c·kvol, out_vol]` back, accumulating.
fn col2im<T: Scalar>(col: &[T], c: usize, g: &Geom, x: &mut [T]) {
    let [_, ih, iw] = g.input;
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let [od, oh, ow] = g.output;
    let p = g.out_vol();
    let mut row = 0;
    for ci in 0..c {
        let xc = &mut x[ci * g.in_vol()..(ci + 1) * g.in_vol()];
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    let src = &col[row * p..(row + 1) * p];
                    let mut q = 0;
                    for zd in 0..od {
                        let id = zd * sd + a;
                        for zh in 0..oh {
                            let base = (id * ih + zh * sh + b) * iw + e;
                            for zw in 0..ow {
                                let t = &mut xc[base + zw * sw];
                                *t = *t + src[q];
                                q += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn add_bias<T: Scalar>(out: &mut [T], bias: &[T], per_channel: usize) {
    for (chunk, &b) in out.chunks_mut(per_channel).zip(bias.iter().cycle()) {
        chunk.iter_mut().for_each(|v| *v = *v + b);
    }
}

fn bias_grad<T: Scalar>(g: &[T], channels: usize, per_channel: usize) -> Tensor<T> {
    let mut gb = vec![T::zero(); channels];
    for (i, chunk) in g.chunks(per_channel).enumerate() {
        gb[i % channels] = gb[i % channels] + chunk.iter().copied().sum::<T>();
    }
    Tensor::from_vec(gb)
}

/// Strided valid cross-correlation. Inputs: `[x, kernel[c_out,c_in,k..], bias[c_out]]`.
#[derive(Clone, Debug)]
pub struct Conv<T> {
    rank: usize,
    stride: usize,
    geom: Option<Geom>,
    cols: Vec<Vec<T>>,
}

impl<T: Scalar> Conv<T> {
    pub fn new(rank: usize, stride: usize) -> Self {
        assert!(rank == 2 || rank == 3, "conv rank must be 2 or 3");
        Self {
            rank,
            stride,
            geom: None,
            cols: Vec::new(),
        }
    }
}

impl<T: Scalar> DifferentiableOp<T> for Conv<T> {
    fn name(&self) -> &'static str {
        "conv"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        arity("conv", inputs, 3)?;
        let (x, k, b) = (inputs[0], inputs[1], inputs[2]);
        if self.stride == 0 {
            return Err(Error::Domain("conv stride must be >= 1".into()));
        }
        let l = layout("conv", self.rank, x.shape())?;
        let (co, ci, kernel) = kernel_dims("conv", self.rank, k.shape())?;
        if ci != l.c {
            return Err(Error::shapes("conv", x.shape(), k.shape()));
        }
        if b.shape() != [co] {
            return Err(Error::shapes("conv", k.shape(), b.shape()));
        }
        if kernel.iter().zip(&l.spatial).any(|(&kk, &s)| kk > s) {
            return Err(Error::dim(
                "conv",
                format!("kernel {:?} larger than input {:?}", k.shape(), x.shape()),
            ));
        }
        let stride = lift_stride(self.rank, self.stride);
        let mut output = [0; 3];
        for i in 0..3 {
            output[i] = (l.spatial[i] - kernel[i]) / stride[i] + 1;
        }
        let g = Geom {
            input: l.spatial,
            kernel,
            stride,
            output,
        };
        let (ck, p) = (ci * g.kvol(), g.out_vol());
        let mut out = vec![T::zero(); l.n * co * p];
        self.cols = Vec::with_capacity(l.n);
        for s in 0..l.n {
            let mut col = vec![T::zero(); ck * p];
            im2col(&x.data()[s * ci * g.in_vol()..(s + 1) * ci * g.in_vol()], ci, &g, &mut col);
            let dst = &mut out[s * co * p..(s + 1) * co * p];
            T::gemm(false, false, co, p, ck, T::one(), k.data(), &col, T::zero(), dst);
            add_bias(dst, b.data(), p);
            self.cols.push(col);
        }
        self.geom = Some(g);
        Tensor::new(out_shape(self.rank, &l, co, output), out)
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        wanted: &[bool],
    ) -> Result<Grads<T>> {
        let (x, k) = (inputs[0], inputs[1]);
        let g = self
            .geom
            .ok_or_else(|| Error::Usage("conv backward before forward".into()))?;
        let l = layout("conv", self.rank, x.shape())?;
        let (co, ci) = (k.shape()[0], k.shape()[1]);
        let (ck, p) = (ci * g.kvol(), g.out_vol());
        let mut gx = wanted[0].then(|| Tensor::zeros(x.shape().to_vec()));
        let mut gk = wanted[1].then(|| Tensor::zeros(k.shape().to_vec()));
        let mut gcol = vec![T::zero(); if wanted[0] { ck * p } else { 0 }];
        for s in 0..l.n {
            let gs = &grad.data()[s * co * p..(s + 1) * co * p];
            if let Some(gk) = gk.as_mut() {
                T::gemm(false, true, co, ck, p, T::one(), gs, &self.cols[s], T::one(), gk.data_mut());
            }
            if let Some(gx) = gx.as_mut() {
                T::gemm(true, false, ck, p, co, T::one(), k.data(), gs, T::zero(), &mut gcol);
                let in_len = ci * g.in_vol();
                col2im(&gcol, ci, &g, &mut gx.data_mut()[s * in_len..(s + 1) * in_len]);
            }
        }
        let gb = wanted[2].then(|| bias_grad(grad.data(), co, p));
        Ok(vec![gx, gk, gb])
    }
}

/// Adjoint of [`Conv`]: `[z[.., c_z, ..], kernel[c_z,c_out,k..], bias[c_out]]`.
/// Output extent per axis is `(z − 1)·stride + k`.
#[derive(Clone, Debug)]
pub struct ConvTranspose<T> {
    rank: usize,
    stride: usize,
    geom: Option<Geom>,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar> ConvTranspose<T> {
    pub fn new(rank: usize, stride: usize) -> Self {
        assert!(rank == 2 || rank == 3, "conv rank must be 2 or 3");
        Self {
            rank,
            stride,
            geom: None,
            _marker: std::marker::PhantomData,
        }
    }
}

impl<T: Scalar> DifferentiableOp<T> for ConvTranspose<T> {
    fn name(&self) -> &'static str {
        "conv_transpose"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        arity("conv_transpose", inputs, 3)?;
        let (z, k, b) = (inputs[0], inputs[1], inputs[2]);
        if self.stride == 0 {
            return Err(Error::Domain("conv_transpose stride must be >= 1".into()));
        }
        let l = layout("conv_transpose", self.rank, z.shape())?;
        let (cz, co, kernel) = kernel_dims("conv_transpose", self.rank, k.shape())?;
        if cz != l.c {
            return Err(Error::shapes("conv_transpose", z.shape(), k.shape()));
        }
        if b.shape() != [co] {
            return Err(Error::shapes("conv_transpose", k.shape(), b.shape()));
        }
        let stride = lift_stride(self.rank, self.stride);
        let mut input = [0; 3];
        for i in 0..3 {
            if l.spatial[i] == 0 {
                return Err(Error::dim("conv_transpose", format!("empty input {:?}", z.shape())));
            }
            input[i] = (l.spatial[i] - 1) * stride[i] + kernel[i];
        }
        let g = Geom {
            input,
            kernel,
            stride,
            output: l.spatial,
        };
        let (ck, p, vol) = (co * g.kvol(), g.out_vol(), g.in_vol());
        let mut out = vec![T::zero(); l.n * co * vol];
        let mut col = vec![T::zero(); ck * p];
        for s in 0..l.n {
            let zs = &z.data()[s * cz * p..(s + 1) * cz * p];
            T::gemm(true, false, ck, p, cz, T::one(), k.data(), zs, T::zero(), &mut col);
            let dst = &mut out[s * co * vol..(s + 1) * co * vol];
            col2im(&col, co, &g, dst);
            add_bias(dst, b.data(), vol);
        }
        self.geom = Some(g);
        Tensor::new(out_shape(self.rank, &l, co, input), out)
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        wanted: &[bool],
    ) -> Result<Grads<T>> {
        let (z, k) = (inputs[0], inputs[1]);
        let g = self
            .geom
            .ok_or_else(|| Error::Usage("conv_transpose backward before forward".into()))?;
        let l = layout("conv_transpose", self.rank, z.shape())?;
        let (cz, co) = (k.shape()[0], k.shape()[1]);
        let (ck, p, vol) = (co * g.kvol(), g.out_vol(), g.in_vol());
        let mut gz = wanted[0].then(|| Tensor::zeros(z.shape().to_vec()));
        let mut gk = wanted[1].then(|| Tensor::zeros(k.shape().to_vec()));
        if gz.is_some() || gk.is_some() {
            let mut col = vec![T::zero(); ck * p];
            for s in 0..l.n {
                im2col(&grad.data()[s * co * vol..(s + 1) * co * vol], co, &g, &mut col);
                let zs = &z.data()[s * cz * p..(s + 1) * cz * p];
                if let Some(gz) = gz.as_mut() {
                    let dst = &mut gz.data_mut()[s * cz * p..(s + 1) * cz * p];
                    T::gemm(false, false, cz, p, ck, T::one(), k.data(), &col, T::zero(), dst);
                }
                if let Some(gk) = gk.as_mut() {
                    T::gemm(false, true, cz, ck, p, T::one(), zs, &col, T::one(), gk.data_mut());
                }
            }
        }
        let gb = wanted[2].then(|| bias_grad(grad.data(), co, vol));
        Ok(vec![gz, gk, gb])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::{conv2d, conv3d, conv_transpose2d, conv_transpose3d};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Direct nested-loop cross-correlation used as an oracle.
    fn naive_conv2d(x: &Tensor<f64>, k: &Tensor<f64>, b: &Tensor<f64>, s: usize) -> Vec<f64> {
        let (ci, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (co, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
        let (oh, ow) = ((h - kh) / s + 1, (w - kw) / s + 1);
        let mut out = vec![0.0; co * oh * ow];
        for o in 0..co {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = b.data()[o];
                    for c in 0..ci {
                        for a in 0..kh {
                            for e in 0..kw {
                                acc += x.get(&[c, i * s + a, j * s + e]).unwrap()
                                    * k.get(&[o, c, a, e]).unwrap();
                            }
                        }
                    }
                    out[(o * oh + i) * ow + j] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv2d_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_t(&mut rng, &[2, 7, 6]);
        let k = rand_t(&mut rng, &[3, 2, 3, 2]);
        let b = rand_t(&mut rng, &[3]);
        for s in [1, 2, 3] {
            let y = conv2d(&x, &k, &b, s).unwrap();
            let want = naive_conv2d(&x, &k, &b, s);
            for (a, e) in y.data().iter().zip(&want) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv2d_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_t(&mut rng, &[1, 5, 4]);
        let y = conv2d(&x, &Tensor::full([1, 1, 1, 1], 2.0), &Tensor::zeros([1]), 1).unwrap();
        assert_eq!(y.shape(), &[1, 5, 4]);
        for (a, b) in y.data().iter().zip(x.data()) {
            assert_eq!(*a, 2.0 * b);
        }
        let c = 0.7;
        let y = conv2d(
            &Tensor::<f64>::full([1, 6, 6], c),
            &Tensor::full([1, 1, 3, 3], 1.0),
            &Tensor::zeros([1]),
            1,
        )
        .unwrap();
        assert_eq!(y.shape(), &[1, 4, 4]);
        assert!(y.data().iter().all(|&v| (v - 9.0 * c).abs() < 1e-12));
        let y = conv2d(
            &Tensor::<f64>::zeros([1, 4, 4]),
            &Tensor::zeros([1, 1, 2, 2]),
            &Tensor::zeros([1]),
            2,
        )
        .unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        let err = conv2d(
            &Tensor::zeros([1, 2, 2]),
            &Tensor::zeros([1, 1, 3, 3]),
            &Tensor::<f64>::zeros([1]),
            1,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn conv3d_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_t(&mut rng, &[1, 3, 4, 5]);
        let y = conv3d(&x, &Tensor::full([1, 1, 1, 1, 1], 1.0), &Tensor::zeros([1]), 1).unwrap();
        assert_eq!(y, x);
        let y = conv3d(
            &Tensor::<f64>::full([1, 4, 4, 4], 1.5),
            &Tensor::full([1, 1, 2, 2, 2], 1.0),
            &Tensor::zeros([1]),
            1,
        )
        .unwrap();
        assert!(y.data().iter().all(|&v| (v - 12.0).abs() < 1e-12));
        let y = conv3d(
            &Tensor::<f64>::zeros([1, 32, 32, 32]),
            &Tensor::zeros([2, 1, 3, 3, 3]),
            &Tensor::zeros([2]),
            2,
        )
        .unwrap();
        assert_eq!(y.shape(), &[2, 15, 15, 15]);
    }

    #[test]
    fn conv_transpose_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = rand_t(&mut rng, &[1, 3, 3]);
        let y = conv_transpose2d(&z, &Tensor::full([1, 1, 1, 1], -0.5), &Tensor::zeros([1]), 1)
            .unwrap();
        for (a, b) in y.data().iter().zip(z.data()) {
            assert_eq!(*a, -0.5 * b);
        }
        let y = conv_transpose2d(
            &Tensor::zeros([1, 2, 2]),
            &Tensor::zeros([1, 1, 2, 2]),
            &Tensor::<f64>::zeros([1]),
            2,
        )
        .unwrap();
        assert_eq!(y.shape(), &[1, 4, 4]);
        let y = conv_transpose3d(
            &Tensor::zeros([16, 7, 7, 7]),
            &Tensor::zeros([16, 8, 3, 3, 3]),
            &Tensor::<f64>::zeros([8]),
            2,
        )
        .unwrap();
        assert_eq!(y.shape(), &[8, 15, 15, 15]);
    }

    #[test]
    fn adjoint_identity_2d_and_3d() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (rank, xs, ks, stride) in [
            (2, vec![2, 9, 8], vec![3, 2, 3, 2], 2),
            (2, vec![3, 2, 11, 6], vec![4, 2, 2, 3], 3),
            (3, vec![2, 6, 7, 4], vec![3, 2, 2, 3, 2], 2),
        ] {
            let x = rand_t(&mut rng, &xs);
            let k = rand_t(&mut rng, &ks);
            let co = ks[0];
            let zero = Tensor::zeros([co]);
            let zero_in = Tensor::zeros([ks[1]]);
            let y_shape = Conv::new(rank, stride).forward(&[&x, &k, &zero]).unwrap();
            let y = rand_t(&mut rng, y_shape.shape());
            let lhs = y_shape.dot(&y).unwrap();
            let xt = ConvTranspose::new(rank, stride).forward(&[&y, &k, &zero_in]).unwrap();
            assert_eq!(xt.shape(), x.shape());
            let rhs = x.dot(&xt).unwrap();
            assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
        }
    }
}
