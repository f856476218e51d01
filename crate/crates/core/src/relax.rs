//! Concrete (binary) relaxation: reparameterized soft Bernoulli gates with
//! an annealed temperature, shared by the learned mask explainers and the
//! stochastic selector trainers.

use rand::Rng;

use crate::error::Result;
use crate::tape::{Tape, VarId};
use crate::tensor::Tensor;

/// Geometric anneal from 1.0 down to 0.1 across `total` epochs.
pub fn temperature(epoch: usize, total: usize) -> f64 {
    let span = total.saturating_sub(1).max(1) as f64;
    let frac = (epoch as f64 / span).min(1.0);
    10f64.powf(-frac)
}

/// One sample of logistic noise `log u - log(1 - u)`, `u ~ U(0, 1)` open.
pub fn logistic_noise<R: Rng>(rng: &mut R) -> f64 {
    let u: f64 = rng.gen_range(f64::EPSILON..1.0 - f64::EPSILON);
    (u / (1.0 - u)).ln()
}

/// Relaxed Bernoulli gates `sigmoid((logits + noise) / tau)` on the tape.
/// `logits` has shape `(n, 1)`; `noise` supplies one draw per gate.
pub fn concrete_gate(tape: &mut Tape, logits: VarId, noise: &[f64], tau: f64) -> Result<VarId> {
    let shape = tape.value(logits).shape().to_vec();
    let noise = tape.leaf(Tensor::new(shape, noise.to_vec())?);
    let shifted = tape.add(logits, noise)?;
    let scaled = tape.mul_scalar(shifted, 1.0 / tau);
    Ok(tape.sigmoid(scaled))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn temperature_spans_one_to_tenth() {
        assert_eq!(temperature(0, 50), 1.0);
        assert!((temperature(49, 50) - 0.1).abs() < 1e-12);
        for e in 1..50 {
            assert!(temperature(e, 50) < temperature(e - 1, 50));
        }
        assert_eq!(temperature(0, 1), 1.0);
    }

    #[test]
    fn gates_sharpen_as_temperature_drops() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise: Vec<f64> = (0..4).map(|_| logistic_noise(&mut rng)).collect();
        let logits = Tensor::new(vec![4, 1], vec![2.0, -2.0, 1.5, -0.5]).unwrap();
        let at = |tau: f64| {
            let mut tape = Tape::new();
            let l = tape.leaf(logits.clone());
            let g = concrete_gate(&mut tape, l, &noise, tau).unwrap();
            tape.value(g).data().to_vec()
        };
        let warm = at(1.0);
        let cold = at(0.1);
        for (w, c) in warm.iter().zip(&cold) {
            assert!((0.0..=1.0).contains(w));
            // Colder gates push every value toward its side of 1/2.
            if *w > 0.5 {
                assert!(c >= w);
            } else {
                assert!(c <= w);
            }
        }
    }

    #[test]
    fn gate_gradients_flow_to_logits() {
        let mut tape = Tape::new();
        let l = tape.var(Tensor::new(vec![3, 1], vec![0.3, -0.1, 0.8]).unwrap());
        let g = concrete_gate(&mut tape, l, &[0.2, -0.4, 0.1], 0.5).unwrap();
        let s = tape.sum(g);
        let grads = tape.backward(s).unwrap();
        assert!(grads.wrt(l).data().iter().all(|d| d.is_finite() && *d > 0.0));
    }
}
