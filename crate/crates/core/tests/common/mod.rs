#![allow(dead_code)]

use dagvi::dag_sampler::{PosteriorNoise, PosteriorParams, Relaxation};
use dagvi::diffcore::{
    finite_difference_check, Axis, DiffError, GradCheckReport, Tape, Tensor, Var,
};
use dagvi::vi::{
    flat_params, negative_elbo_on_tape, FunctionalModels, ModelKind, ParamVars, PriorSpec,
    TrainConfig, ViError,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type LossFn = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var, DiffError>>;

fn uniform(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(r, c, |_, _| rng.random_range(lo..hi))
}

/// Values in [−3, 3] kept away from the ReLU kink.
fn off_kink(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::from_fn(r, c, |_, _| {
        let v: f64 = rng.random_range(0.05..3.0);
        if rng.random_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

/// Central-difference check of every tape primitive on random inputs in
/// [−3, 3] (positive for `log`). Each output is reduced to a scalar through
/// a fixed random weighting so every output element contributes.
pub fn primitive_reports(seed: u64, tolerance: f64) -> Vec<(&'static str, GradCheckReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (r, c) = (3, 4);
    let weigh =
        |rng: &mut ChaCha8Rng, rows: usize, cols: usize| uniform(rng, rows, cols, -1.0, 1.0);

    let mut cases: Vec<(&'static str, Vec<Tensor>, LossFn)> = Vec::new();
    macro_rules! unary {
        ($name:expr, $input:expr, $out_shape:expr, |$t:ident, $x:ident| $body:expr) => {{
            let w = weigh(&mut rng, $out_shape.0, $out_shape.1);
            let f: LossFn = Box::new(move |$t: &mut Tape, v: &[Var]| {
                let $x = v[0];
                let y = $body?;
                let y = $t.mul_const(y, &w)?;
                $t.sum(y)
            });
            cases.push(($name, vec![$input], f));
        }};
    }
    macro_rules! binary {
        ($name:expr, $a:expr, $b:expr, $out_shape:expr, |$t:ident, $x:ident, $y:ident| $body:expr) => {{
            let w = weigh(&mut rng, $out_shape.0, $out_shape.1);
            let f: LossFn = Box::new(move |$t: &mut Tape, v: &[Var]| {
                let ($x, $y) = (v[0], v[1]);
                let z = $body?;
                let z = $t.mul_const(z, &w)?;
                $t.sum(z)
            });
            cases.push(($name, vec![$a, $b], f));
        }};
    }

    let a = uniform(&mut rng, r, c, -3.0, 3.0);
    let b = uniform(&mut rng, r, c, -3.0, 3.0);
    binary!("add", a.clone(), b.clone(), (r, c), |t, x, y| t.add(x, y));
    binary!("sub", a.clone(), b.clone(), (r, c), |t, x, y| t.sub(x, y));
    binary!("mul", a.clone(), b.clone(), (r, c), |t, x, y| t.mul(x, y));
    let m = uniform(&mut rng, c, 2, -3.0, 3.0);
    binary!("matmul", a.clone(), m, (r, 2), |t, x, y| t.matmul(x, y));
    unary!("scale", a.clone(), (r, c), |t, x| t.scale(x, -1.7));
    unary!("neg", a.clone(), (r, c), |t, x| t.neg(x));
    unary!("add_scalar", a.clone(), (r, c), |t, x| t.add_scalar(x, 0.3));
    let mask = uniform(&mut rng, r, c, -2.0, 2.0);
    unary!("mul_const", a.clone(), (r, c), |t, x| t.mul_const(x, &mask));
    unary!("mask_rows", a.clone(), (r, c), |t, x| t
        .mask_rows(x, &[1.0, 0.0, 1.0]));
    unary!("mask_cols", a.clone(), (r, c), |t, x| t
        .mask_cols(x, &[0.0, 1.0, 1.0, 0.0]));
    unary!("sigmoid", a.clone(), (r, c), |t, x| t.sigmoid(x));
    unary!("log_sigmoid", a.clone(), (r, c), |t, x| t.log_sigmoid(x));
    unary!("relu", off_kink(&mut rng, r, c), (r, c), |t, x| t.relu(x));
    unary!("exp", a.clone(), (r, c), |t, x| t.exp(x));
    unary!("log", uniform(&mut rng, r, c, 0.1, 3.0), (r, c), |t, x| t
        .log(x));
    unary!("square", a.clone(), (r, c), |t, x| t.square(x));
    unary!("softmax_rows", a.clone(), (r, c), |t, x| t
        .softmax(x, Axis::Rows));
    unary!("softmax_cols", a.clone(), (r, c), |t, x| t
        .softmax(x, Axis::Cols));
    unary!("sum", a.clone(), (1, 1), |t, x| t.sum(x));
    unary!("mean", a.clone(), (1, 1), |t, x| t.mean(x));
    unary!("transpose", a.clone(), (c, r), |t, x| t.transpose(x));
    unary!(
        "broadcast_rows",
        uniform(&mut rng, 1, c, -3.0, 3.0),
        (r, c),
        |t, x| t.broadcast_rows(x, r)
    );
    unary!(
        "broadcast_cols",
        uniform(&mut rng, r, 1, -3.0, 3.0),
        (r, c),
        |t, x| t.broadcast_cols(x, c)
    );

    cases
        .into_iter()
        .map(|(name, params, f)| {
            let report = finite_difference_check(|t, v| f(t, v), &params, 1e-5, tolerance)
                .expect("primitive evaluates");
            (name, report)
        })
        .collect()
}

/// Random posterior, randomized mechanism weights, data and fixed noise.
pub fn elbo_setup(
    d: usize,
    kind: ModelKind,
    seed: u64,
) -> (
    PosteriorParams,
    FunctionalModels,
    Tensor,
    Vec<PosteriorNoise>,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = PosteriorParams::new(
        uniform(&mut rng, d, d, -1.5, 1.5),
        uniform(&mut rng, 1, d, -0.5, 0.5),
        uniform(&mut rng, 1, d, -1.5, -0.5),
    )
    .unwrap();
    let mut models = FunctionalModels::init(kind, d, 3, &mut rng).unwrap();
    for t in models.tensors_mut() {
        *t = uniform(&mut rng, t.rows(), t.cols(), -1.0, 1.0);
    }
    let x = uniform(&mut rng, 7, d, -2.0, 2.0);
    let noise = vec![
        PosteriorNoise::draw(d, &mut rng),
        PosteriorNoise::draw(d, &mut rng),
    ];
    (params, models, x, noise)
}

/// Gradient check of the relaxed negative ELBO with respect to every
/// trainable parameter.
pub fn elbo_surrogate_report(
    d: usize,
    kind: ModelKind,
    seed: u64,
    tolerance: f64,
) -> GradCheckReport {
    let (params, models, x, noise) = elbo_setup(d, kind, seed);
    let cfg = TrainConfig::default();
    let prior = PriorSpec::default();
    finite_difference_check(
        |tape, vars| {
            let pv = ParamVars::from_flat(vars, &models);
            let xv = tape.constant(x.clone());
            Ok(
                negative_elbo_on_tape(tape, &pv, xv, &noise, &prior, &cfg, Relaxation::Soft)
                    .map_err(|e| match e {
                        ViError::Diff(d) => d,
                        other => panic!("{other}"),
                    })?
                    .loss,
            )
        },
        &flat_params(&params, &models),
        1e-6,
        tolerance,
    )
    .unwrap()
}

/// Mean and standard error.
pub fn mean_se(vals: &[f64]) -> (f64, f64) {
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Number of labeled DAGs on `n` nodes by Robinson's recurrence.
pub fn labeled_dag_count(n: usize) -> u64 {
    let mut a = vec![1u64];
    for m in 1..=n {
        let mut total: i128 = 0;
        let mut binom: i128 = 1;
        for k in 1..=m {
            binom = binom * (m - k + 1) as i128 / k as i128;
            let term = binom * (1i128 << (k * (m - k))) * a[m - k] as i128;
            total += if k % 2 == 1 { term } else { -term };
        }
        a.push(total as u64);
    }
    a[n]
}

/// Every DAG on `n` labeled nodes, by filtering all off-diagonal patterns.
pub fn all_dags(n: usize) -> Vec<Tensor> {
    let slots: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    (0u64..1 << slots.len())
        .filter_map(|mask| {
            let mut a = Tensor::zeros(n, n);
            for (k, &(i, j)) in slots.iter().enumerate() {
                if mask >> k & 1 == 1 {
                    a.set(i, j, 1.0);
                }
            }
            dagvi::dag_sampler::is_acyclic(&a).then_some(a)
        })
        .collect()
}

/// A random DAG: random node order, each forward pair an edge with
/// probability `p`.
pub fn random_dag(d: usize, p: f64, rng: &mut ChaCha8Rng) -> Tensor {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..d).collect();
    order.shuffle(rng);
    let mut a = Tensor::zeros(d, d);
    for x in 0..d {
        for y in x + 1..d {
            if rng.random_bool(p) {
                a.set(order[x], order[y], 1.0);
            }
        }
    }
    a
}

/// Posterior parameters spread over the regimes the sampler meets.
pub fn random_posterior(d: usize, rng: &mut ChaCha8Rng) -> PosteriorParams {
    PosteriorParams::new(
        uniform(rng, d, d, -4.0, 4.0),
        uniform(rng, 1, d, -2.0, 2.0),
        Tensor::scalar(rng.random_range(-4.0..1.0)),
    )
    .unwrap()
}
