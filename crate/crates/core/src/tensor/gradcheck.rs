//! Finite-difference gradient verification.
//!
//! The checker only ever evaluates the forward pass, so it is independent of
//! the backward formulas it validates. Used by the unit tests and the
//! acceptance suite.

use super::Tensor;
use crate::error::TensorError;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Builds leaves from `(shape, data)` pairs, evaluates `f` to a scalar, and
/// compares each leaf's analytic gradient against central finite differences.
/// Returns the maximum relative error over all leaf elements.
pub fn max_rel_err<F>(
    f: &F,
    inputs: &[(Vec<usize>, Vec<f64>)],
    step: f64,
) -> Result<f64, TensorError>
where
    F: Fn(&[Tensor]) -> Result<Tensor, TensorError>,
{
    let eval = |values: &[Vec<f64>]| -> Result<f64, TensorError> {
        let leaves: Vec<Tensor> = inputs
            .iter()
            .zip(values)
            .map(|((shape, _), v)| Tensor::leaf(shape, v.clone(), false))
            .collect::<Result<_, _>>()?;
        Ok(f(&leaves)?.item())
    };

    // Analytic gradients.
    let leaves: Vec<Tensor> = inputs
        .iter()
        .map(|(shape, data)| Tensor::leaf(shape, data.clone(), true))
        .collect::<Result<_, _>>()?;
    let loss = f(&leaves)?;
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|l| l.grad().expect("leaf grad"))
        .collect();

    let mut values: Vec<Vec<f64>> = inputs.iter().map(|(_, d)| d.clone()).collect();
    let mut worst = 0.0f64;
    for li in 0..inputs.len() {
        for ei in 0..values[li].len() {
            let orig = values[li][ei];
            values[li][ei] = orig + step;
            let up = eval(&values)?;
            values[li][ei] = orig - step;
            let down = eval(&values)?;
            values[li][ei] = orig;
            let fd = (up - down) / (2.0 * step);
            let a = analytic[li][ei];
            let denom = a.abs().max(fd.abs()).max(1e-6);
            worst = worst.max((a - fd).abs() / denom);
        }
    }
    Ok(worst)
}

/// Convenience wrapper asserting the error bound used throughout the specs
/// of the differentiable primitives.
pub fn assert_grad<F>(f: F, inputs: &[(Vec<usize>, Vec<f64>)], tol: f64)
where
    F: Fn(&[Tensor]) -> Result<Tensor, TensorError>,
{
    let err = max_rel_err(&f, inputs, DEFAULT_STEP).expect("gradcheck eval");
    assert!(
        err < tol,
        "gradient mismatch: max relative error {err:.3e} >= {tol:.1e}"
    );
}

/// Weighted scalar reduction: sum(out * cycle(w)). The fixed random weights
/// make the output gradient non-uniform, probing the full Jacobian rather
/// than its row sums.
fn weighted(out: &Tensor, w: &[f64]) -> Result<Tensor, TensorError> {
    let ww: Vec<f64> = (0..out.numel()).map(|i| w[i % w.len()]).collect();
    let wt = Tensor::from_vec(out.shape(), ww)?;
    out.mul(&wt)?.sum().ok()
}

/// Runs every differentiable primitive through the finite-difference checker
/// on `cases` random inputs each and reports the worst relative error per
/// primitive. Inputs are drawn away from non-differentiable points (zero for
/// `abs`, non-positive values for `sqrt`, zero modulus for the DFT).
pub fn primitive_suite(cases: usize, seed: u64) -> Vec<(&'static str, f64)> {
    use crate::rng::Streams;
    use rand::Rng;

    let streams = Streams::new(seed);
    let uniform = |tag: &str, case: usize, n: usize, lo: f64, hi: f64| -> Vec<f64> {
        let mut rng = streams.stream(tag, &[case as u64]);
        (0..n).map(|_| rng.gen_range(lo..hi)).collect()
    };

    type OpFn = dyn Fn(&[Tensor], &[f64]) -> Result<Tensor, TensorError>;
    let mut results = Vec::new();
    let mut run = |name: &'static str, f: &OpFn, shapes: &[Vec<usize>], lo: f64, hi: f64| {
        let mut worst = 0.0f64;
        for case in 0..cases {
            let inputs: Vec<(Vec<usize>, Vec<f64>)> = shapes
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let n = s.iter().product();
                    (s.clone(), uniform(&format!("{name}/{i}"), case, n, lo, hi))
                })
                .collect();
            let w = uniform(&format!("{name}/w"), case, 64, -1.0, 1.0);
            let g = |leaves: &[Tensor]| f(leaves, &w);
            let err = max_rel_err(&g, &inputs, DEFAULT_STEP).expect(name);
            worst = worst.max(err);
        }
        results.push((name, worst));
    };

    let s44 = vec![4usize, 4];
    run(
        "add",
        &|l, w| weighted(&l[0].add(&l[1])?, w),
        &[s44.clone(), s44.clone()],
        -2.0,
        2.0,
    );
    run(
        "sub",
        &|l, w| weighted(&l[0].sub(&l[1])?, w),
        &[s44.clone(), s44.clone()],
        -2.0,
        2.0,
    );
    run(
        "mul_elementwise",
        &|l, w| weighted(&l[0].mul(&l[1])?, w),
        &[s44.clone(), s44.clone()],
        -2.0,
        2.0,
    );
    run(
        "mul_scalar",
        &|l, w| weighted(&l[0].mul_scalar(1.7), w),
        &[s44.clone()],
        -2.0,
        2.0,
    );
    run(
        "matmul",
        &|l, w| weighted(&l[0].matmul(&l[1])?, w),
        &[vec![3, 4], vec![4, 2]],
        -1.0,
        1.0,
    );
    run(
        "linear",
        &|l, w| weighted(&l[0].linear(&l[1], &l[2])?, w),
        &[vec![3, 5], vec![4, 5], vec![4]],
        -1.0,
        1.0,
    );
    run(
        "conv2d",
        &|l, w| weighted(&l[0].conv2d(&l[1], &l[2], (1, 1), (1, 1))?, w),
        &[vec![1, 2, 5, 5], vec![3, 2, 3, 3], vec![3]],
        -1.0,
        1.0,
    );
    run(
        "conv2d_strided",
        &|l, w| weighted(&l[0].conv2d(&l[1], &l[2], (2, 1), (1, 0))?, w),
        &[vec![2, 1, 6, 5], vec![2, 1, 3, 3], vec![2]],
        -1.0,
        1.0,
    );
    run("silu", &|l, w| weighted(&l[0].silu(), w), &[s44.clone()], -3.0, 3.0);
    run(
        "group_norm",
        &|l, w| weighted(&l[0].group_norm(&l[1], &l[2], 2, 1e-5)?, w),
        &[vec![2, 4, 3, 3], vec![4], vec![4]],
        -1.5,
        1.5,
    );
    run(
        "nearest_upsample",
        &|l, w| weighted(&l[0].upsample_nearest2()?, w),
        &[vec![1, 2, 3, 3]],
        -2.0,
        2.0,
    );
    run(
        "strided_downsample",
        &|l, w| weighted(&l[0].downsample2()?, w),
        &[vec![1, 2, 4, 4]],
        -2.0,
        2.0,
    );
    run(
        "adaptive_avg_pool",
        &|l, w| weighted(&l[0].adaptive_avg_pool(3, 2)?, w),
        &[vec![1, 2, 5, 7]],
        -2.0,
        2.0,
    );
    run("mean", &|l, _| l[0].mean().ok(), &[s44.clone()], -2.0, 2.0);
    run("sum", &|l, _| l[0].sum().ok(), &[s44.clone()], -2.0, 2.0);
    run("abs", &|l, w| weighted(&l[0].abs(), w), &[s44.clone()], 0.3, 1.5);
    run(
        "square",
        &|l, w| weighted(&l[0].square(), w),
        &[s44.clone()],
        -2.0,
        2.0,
    );
    run("sqrt", &|l, w| weighted(&l[0].sqrt(), w), &[s44.clone()], 0.5, 2.0);
    run(
        "concat_channels",
        &|l, w| weighted(&l[0].concat_channels(&l[1])?, w),
        &[vec![2, 2, 3, 3], vec![2, 1, 3, 3]],
        -2.0,
        2.0,
    );
    run(
        "add_channel_bias",
        &|l, w| weighted(&l[0].add_channel_bias(&l[1])?, w),
        &[vec![2, 3, 4, 4], vec![2, 3]],
        -2.0,
        2.0,
    );
    run(
        "dft2_modulus",
        &|l, _| l[0].dft2_modulus()?.sum().ok(),
        &[vec![6, 6]],
        0.5,
        1.5,
    );
    results
}

trait IntoOk {
    fn ok(self) -> Result<Tensor, TensorError>;
}

impl IntoOk for Tensor {
    fn ok(self) -> Result<Tensor, TensorError> {
        Ok(self)
    }
}
