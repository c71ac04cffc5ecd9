//! Finite-difference harness for the op-level gradient sweep, shared
//! between the dedicated gradient test target and the acceptance checks.
//!
//! Each op runs random 64-bit trials. The analytic gradient of a randomly
//! weighted scalar projection of the op's output is compared against
//! central finite differences; the weighting keeps degenerate directions
//! (such as the constant sum of a softmax lane) visible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rcnf::tensor::{max_relative_error, numerical_gradient, ReduceKind, Tape, Tensor, Var};
use rcnf::Result;

pub const TRIALS: usize = 20;
pub const TOLERANCE: f64 = 1e-4;
pub const STEP: f64 = 1e-5;

pub fn sample(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let mut t = Tensor::zeros(shape.to_vec());
    t.fill_uniform(rng, 2.0);
    t
}

/// Resample entries until none sits within `margin` of zero. Used for ops
/// with a kink at the origin, where a finite-difference step would
/// straddle the non-differentiable point.
pub fn sample_away_from_zero(shape: &[usize], margin: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let mut t = sample(shape, rng);
    while t.data().iter().any(|v| v.abs() < margin) {
        t = sample(shape, rng);
    }
    t
}

/// Compare analytic and numeric gradients of
/// `sum(weights ⊙ build(inputs))` for every differentiable input.
/// Panics past tolerance; returns the worst relative error seen.
pub fn check_once(
    name: &str,
    trial: usize,
    inputs: &[Tensor<f64>],
    build: &dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let forward = |tape: &mut Tape<f64>, tensors: &[Tensor<f64>]| -> Result<(Vec<Var>, Var)> {
        let vars: Vec<Var> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let y = build(tape, &vars)?;
        Ok((vars, y))
    };

    let mut tape = Tape::new();
    let (vars, y) = forward(&mut tape, inputs).expect("forward");
    let weights = sample(tape.value(y).shape(), rng);
    let projected = {
        let w = tape.constant(weights.clone());
        tape.mul(y, w).expect("projection")
    };
    let loss = tape.sum(projected, None).expect("loss");
    tape.backward(loss).expect("backward");
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .map(|&v| tape.grad(v).cloned().expect("leaf gradient"))
        .collect();

    let mut worst = 0.0f64;
    for (i, at) in inputs.iter().enumerate() {
        let numeric = numerical_gradient(
            |probe: &Tensor<f64>| {
                let mut tape = Tape::new();
                let mut tensors: Vec<Tensor<f64>> = inputs.to_vec();
                tensors[i] = probe.clone();
                let (_, y) = forward(&mut tape, &tensors)?;
                let w = tape.constant(weights.clone());
                let projected = tape.mul(y, w)?;
                let loss = tape.sum(projected, None)?;
                Ok(tape.value(loss).item())
            },
            at,
            STEP,
        )
        .expect("numeric gradient");
        let err = max_relative_error(&analytic[i], &numeric);
        assert!(
            err < TOLERANCE,
            "{name}: input {i}, trial {trial}: relative error {err:.3e}"
        );
        worst = worst.max(err);
    }
    worst
}

pub fn check_op(
    name: &str,
    seed: u64,
    shapes: &[&[usize]],
    build: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for trial in 0..TRIALS {
        let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| sample(s, &mut rng)).collect();
        worst = worst.max(check_once(name, trial, &inputs, &build, &mut rng));
    }
    worst
}

fn check_relu() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let mut worst = 0.0f64;
    for trial in 0..TRIALS {
        let input = sample_away_from_zero(&[3, 4], 1e-3, &mut rng);
        worst = worst.max(check_once("relu", trial, &[input], &|t, v| t.relu(v[0]), &mut rng));
    }
    worst
}

fn check_coupled_sum() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(123);
    let mut worst = 0.0f64;
    for trial in 0..TRIALS {
        let uhat = sample(&[2, 3, 2, 4], &mut rng);
        // Couplings are held constant by design; normalize a random draw
        // over the class axis so it looks like a routing output.
        let mut couplings = Tensor::<f64>::zeros(vec![2, 3, 2]);
        couplings.fill_uniform(&mut rng, 1.0);
        for pair in couplings.data_mut().chunks_mut(2) {
            let total: f64 = pair.iter().map(|v| v.abs() + 0.1).sum();
            for v in pair.iter_mut() {
                *v = (v.abs() + 0.1) / total;
            }
        }
        let c = couplings.clone();
        worst = worst.max(check_once(
            "coupled_sum",
            trial,
            &[uhat],
            &move |t, v| t.coupled_sum(v[0], c.clone()),
            &mut rng,
        ));
    }
    worst
}

fn check_select_capsule() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(125);
    let mut worst = 0.0f64;
    for trial in 0..TRIALS {
        let x = sample(&[3, 4, 5], &mut rng);
        let indices = vec![trial % 4, (trial + 2) % 4, 3 - trial % 4];
        let idx = indices.clone();
        worst = worst.max(check_once(
            "select_capsule",
            trial,
            &[x],
            &move |t, v| t.select_capsule(v[0], &idx),
            &mut rng,
        ));
    }
    worst
}

/// Run the full op sweep; each entry is (op name, worst relative error).
pub fn op_errors() -> Vec<(&'static str, f64)> {
    let mut out: Vec<(&'static str, f64)> = vec![
        ("add", check_op("add", 101, &[&[3, 4], &[3, 4]], |t, v| t.add(v[0], v[1]))),
        ("mul", check_op("mul", 102, &[&[3, 4], &[3, 4]], |t, v| t.mul(v[0], v[1]))),
        ("affine", check_op("affine", 103, &[&[3, 4]], |t, v| t.affine(v[0], 1.7, -0.3))),
        ("sub", check_op("sub", 104, &[&[3, 4], &[3, 4]], |t, v| t.sub(v[0], v[1]))),
        ("square", check_op("square", 105, &[&[3, 4]], |t, v| t.square(v[0]))),
        ("relu", check_relu()),
        ("sigmoid", check_op("sigmoid", 107, &[&[3, 4]], |t, v| t.sigmoid(v[0]))),
        ("reshape", check_op("reshape", 108, &[&[2, 6]], |t, v| {
            t.reshape(v[0], vec![3, 4])
        })),
        ("concat_channels", check_op(
            "concat_channels",
            109,
            &[&[2, 3, 4, 4], &[2, 2, 4, 4]],
            |t, v| t.concat_channels(v[0], v[1]),
        )),
        ("conv2d stride 1", check_op(
            "conv2d stride 1",
            110,
            &[&[2, 2, 5, 5], &[3, 2, 3, 3], &[3]],
            |t, v| t.conv2d(v[0], v[1], v[2], 1),
        )),
        ("conv2d stride 2", check_op(
            "conv2d stride 2",
            111,
            &[&[2, 2, 5, 5], &[3, 2, 3, 3], &[3]],
            |t, v| t.conv2d(v[0], v[1], v[2], 2),
        )),
        ("linear", check_op("linear", 112, &[&[4, 3], &[5, 3], &[5]], |t, v| {
            t.linear(v[0], v[1], v[2])
        })),
        ("softmax axis 1", check_op("softmax axis 1", 113, &[&[2, 3, 4]], |t, v| {
            t.softmax(v[0], 1)
        })),
        ("softmax axis 2", check_op("softmax axis 2", 114, &[&[2, 3, 4]], |t, v| {
            t.softmax(v[0], 2)
        })),
    ];
    for (name, seed, kind, axis) in [
        ("sum all", 115, ReduceKind::Sum, None),
        ("sum axis 0", 116, ReduceKind::Sum, Some(0)),
        ("mean all", 117, ReduceKind::Mean, None),
        ("mean axis 1", 118, ReduceKind::Mean, Some(1)),
        ("sq_l2_norm all", 119, ReduceKind::SqL2Norm, None),
        ("sq_l2_norm axis 1", 120, ReduceKind::SqL2Norm, Some(1)),
    ] {
        out.push((name, check_op(name, seed, &[&[3, 4]], move |t, v| {
            t.reduce(v[0], kind, axis)
        })));
    }
    out.extend([
        ("squash", check_op("squash", 121, &[&[2, 3, 4]], |t, v| t.squash(v[0]))),
        ("capsule_transform", check_op(
            "capsule_transform",
            122,
            &[&[2, 4, 5], &[3, 2, 5]],
            |t, v| t.capsule_transform(v[0], v[1]),
        )),
        ("coupled_sum", check_coupled_sum()),
        ("norm_last_axis", check_op("norm_last_axis", 124, &[&[2, 3, 4]], |t, v| {
            t.norm_last_axis(v[0])
        })),
        ("select_capsule", check_select_capsule()),
    ]);
    out
}
