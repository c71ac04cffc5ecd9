//! Dynamic routing between primary and class capsules.
//!
//! The agreement iterations run on plain values. Only the final aggregation
//! (coupled sum and squash) is recorded on the tape, with the couplings
//! frozen: gradients flow through the last iteration's computation and the
//! routing logits are never trained. Logits start at zero on every forward
//! pass.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Coupling coefficients used at each iteration, one [N,P,J] tensor per
/// iteration. Element `t` is the softmax of the logits entering iteration
/// `t`, so `trace[0]` is always the uniform 1/J distribution.
pub fn routing_trace<F: Scalar>(uhat: &Tensor<F>, iterations: usize) -> Result<Vec<Tensor<F>>> {
    if uhat.rank() != 4 {
        return Err(Error::Shape {
            op: "dynamic_routing",
            detail: format!("û must be [N,P,J,D], got {:?}", uhat.shape()),
        });
    }
    if iterations == 0 {
        return Err(Error::InvalidSpec("routing needs at least 1 iteration".into()));
    }
    let [n_batch, p_caps, j_caps, d] = [
        uhat.shape()[0],
        uhat.shape()[1],
        uhat.shape()[2],
        uhat.shape()[3],
    ];
    let mut logits = Tensor::<F>::zeros(vec![n_batch, p_caps, j_caps]);
    let mut trace = Vec::with_capacity(iterations);
    for it in 0..iterations {
        let couplings = crate::tensor::softmax_values(&logits, 2);
        trace.push(couplings);
        if it + 1 == iterations {
            break;
        }
        let couplings = trace.last().unwrap();
        let s = crate::tensor::coupled_sum_values(uhat, couplings);
        let v = crate::tensor::squash_values(&s);
        // b[n,p,j] += û[n,p,j,:] · v[n,j,:]
        let ud = uhat.data();
        let vd = v.data();
        let ld = logits.data_mut();
        for n in 0..n_batch {
            for p in 0..p_caps {
                for j in 0..j_caps {
                    let u_base = ((n * p_caps + p) * j_caps + j) * d;
                    let v_base = (n * j_caps + j) * d;
                    let mut dot = F::zero();
                    for k in 0..d {
                        dot += ud[u_base + k] * vd[v_base + k];
                    }
                    ld[(n * p_caps + p) * j_caps + j] += dot;
                }
            }
        }
    }
    Ok(trace)
}

/// Couplings of the final iteration, the ones the output actually uses.
pub fn final_couplings<F: Scalar>(uhat: &Tensor<F>, iterations: usize) -> Result<Tensor<F>> {
    Ok(routing_trace(uhat, iterations)?.pop().unwrap())
}

/// Value-level routing: û [N,P,J,D] -> (v [N,J,D], couplings [N,P,J]).
pub fn dynamic_routing<F: Scalar>(
    uhat: &Tensor<F>,
    iterations: usize,
) -> Result<(Tensor<F>, Tensor<F>)> {
    let c = final_couplings(uhat, iterations)?;
    let s = crate::tensor::coupled_sum_values(uhat, &c);
    let v = crate::tensor::squash_values(&s);
    Ok((v, c))
}

/// Tape-level routing. Returns the class capsule var and the (constant)
/// couplings that were applied.
pub fn routing_on_tape<F: Scalar>(
    tape: &mut Tape<F>,
    uhat: Var,
    iterations: usize,
) -> Result<(Var, Tensor<F>)> {
    let couplings = final_couplings(tape.value(uhat), iterations)?;
    let s = tape.coupled_sum(uhat, couplings.clone())?;
    let v = tape.squash(s)?;
    Ok((v, couplings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_iteration_single_input_capsule_uses_half_couplings() {
        // P=1, J=2, identical predictions: b=0 gives c=[0.5,0.5], so both
        // class capsules see squash(0.5·û).
        let d = 4;
        let base = vec![0.8f64, -0.2, 0.4, 0.1];
        let mut uhat = Tensor::zeros(vec![1, 1, 2, d]);
        uhat.data_mut()[..d].copy_from_slice(&base);
        uhat.data_mut()[d..].copy_from_slice(&base);
        let (v, c) = dynamic_routing(&uhat, 1).unwrap();
        assert_eq!(c.data(), &[0.5, 0.5]);

        let half = Tensor::new(vec![1, d], base.iter().map(|x| 0.5 * x).collect()).unwrap();
        let expect = crate::tensor::squash_values(&half);
        for j in 0..2 {
            for k in 0..d {
                assert!((v.data()[j * d + k] - expect.data()[k]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_predictions_give_zero_outputs_and_uniform_couplings() {
        let uhat = Tensor::<f64>::zeros(vec![2, 3, 4, 8]);
        let (v, c) = dynamic_routing(&uhat, 3).unwrap();
        assert!(v.data().iter().all(|&x| x == 0.0));
        assert!(c.data().iter().all(|&x| (x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn one_iteration_equals_uniform_aggregation_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut uhat = Tensor::<f64>::zeros(vec![2, 3, 4, 8]);
        for v in uhat.data_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let (v, c) = dynamic_routing(&uhat, 1).unwrap();

        let uniform = Tensor::full(vec![2, 3, 4], 1.0 / 4.0);
        assert_eq!(c, uniform);
        let s = crate::tensor::coupled_sum_values(&uhat, &uniform);
        let expect = crate::tensor::squash_values(&s);
        assert_eq!(v, expect);
    }

    #[test]
    fn couplings_sum_to_one_at_every_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut uhat = Tensor::<f64>::zeros(vec![2, 5, 3, 8]);
        for v in uhat.data_mut() {
            *v = rng.random_range(-2.0..2.0);
        }
        let trace = routing_trace(&uhat, 3).unwrap();
        assert_eq!(trace.len(), 3);
        for c in &trace {
            for row in c.data().chunks(3) {
                let sum: f64 = row.iter().sum();
                assert!((sum - 1.0).abs() < 1e-6);
                assert!(row.iter().all(|&x| x > 0.0));
            }
        }
    }

    /// Straight-line reimplementation with nothing shared: own softmax
    /// (plain exp/sum), own squash, scalar loops throughout.
    fn scalar_routing_oracle(uhat: &[f64], p: usize, j: usize, d: usize, iters: usize) -> Vec<f64> {
        let mut b = vec![0.0f64; p * j];
        let mut v = vec![0.0f64; j * d];
        for it in 0..iters {
            let mut c = vec![0.0f64; p * j];
            for i in 0..p {
                let denom: f64 = (0..j).map(|k| b[i * j + k].exp()).sum();
                for k in 0..j {
                    c[i * j + k] = b[i * j + k].exp() / denom;
                }
            }
            for k in 0..j {
                let mut s = vec![0.0f64; d];
                for i in 0..p {
                    for x in 0..d {
                        s[x] += c[i * j + k] * uhat[(i * j + k) * d + x];
                    }
                }
                let n2: f64 = s.iter().map(|x| x * x).sum();
                let scale = n2 / ((1.0 + n2) * (n2.sqrt() + 1e-9));
                for x in 0..d {
                    v[k * d + x] = scale * s[x];
                }
            }
            if it + 1 < iters {
                for i in 0..p {
                    for k in 0..j {
                        let mut dot = 0.0;
                        for x in 0..d {
                            dot += uhat[(i * j + k) * d + x] * v[k * d + x];
                        }
                        b[i * j + k] += dot;
                    }
                }
            }
        }
        v
    }

    #[test]
    fn three_iterations_match_scalar_oracle() {
        let (p, j, d) = (2, 2, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut flat = vec![0.0f64; p * j * d];
        for v in &mut flat {
            *v = rng.random_range(-1.5..1.5);
        }
        let uhat = Tensor::new(vec![1, p, j, d], flat.clone()).unwrap();
        let (v, _) = dynamic_routing(&uhat, 3).unwrap();
        let oracle = scalar_routing_oracle(&flat, p, j, d, 3);
        for k in 0..j * d {
            assert!(
                (v.data()[k] - oracle[k]).abs() < 1e-6,
                "element {k}: {} vs oracle {}",
                v.data()[k],
                oracle[k]
            );
        }
    }

    #[test]
    fn routing_on_tape_propagates_gradients_only_through_final_pass() {
        // FD check of the tape path: perturbing û moves the loss both through
        // the final aggregation and through the frozen couplings; the tape
        // ignores the coupling dependence by design, so compare against an
        // oracle that also freezes them.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut uhat0 = Tensor::<f64>::zeros(vec![1, 2, 2, 4]);
        for v in uhat0.data_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let frozen = final_couplings(&uhat0, 3).unwrap();

        let mut tape = Tape::new();
        let u = tape.leaf(uhat0.clone());
        let (v, used) = routing_on_tape(&mut tape, u, 3).unwrap();
        assert_eq!(used, frozen);
        let loss = tape.sq_l2_norm(v, None).unwrap();
        tape.backward(loss).unwrap();
        let analytic = tape.grad(u).unwrap().clone();

        let numeric = crate::tensor::numerical_gradient(
            |t| {
                let mut tape = Tape::new();
                let u = tape.leaf(t.clone());
                let s = tape.coupled_sum(u, frozen.clone())?;
                let v = tape.squash(s)?;
                let l = tape.sq_l2_norm(v, None)?;
                Ok(tape.value(l).item())
            },
            &uhat0,
            1e-5,
        )
        .unwrap();
        assert!(crate::tensor::max_relative_error(&analytic, &numeric) < 1e-4);
    }
}
