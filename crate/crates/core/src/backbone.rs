//! Small feed-forward backbone producing the FC activation vector.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::params::{GroupName, ParamGroup};
use crate::Scalar;

/// Dense layers `input -> hidden... -> output` with rectifiers between
/// hidden layers and a linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Backbone<S> {
    widths: Vec<usize>,
    params: ParamGroup<S>,
}

impl<S: Scalar> Backbone<S> {
    /// `widths` lists every layer size including input and output.
    /// Weights are uniform in `+-1/sqrt(fan_in)`, biases zero.
    pub fn init<R: Rng>(widths: &[usize], rng: &mut R) -> Self {
        assert!(widths.len() >= 2, "backbone needs input and output widths");
        let mut tensors = Vec::with_capacity(2 * (widths.len() - 1));
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = (0..fan_in * fan_out)
                .map(|_| S::lit(rng.gen_range(-bound..bound)))
                .collect();
            tensors.push(Tensor::matrix(fan_in, fan_out, w).expect("layer shape"));
            tensors.push(Tensor::zeros(&[1, fan_out]));
        }
        Self {
            widths: widths.to_vec(),
            params: ParamGroup::new(GroupName::Backbone, tensors),
        }
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("non-empty widths")
    }

    pub fn params(&self) -> &ParamGroup<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamGroup<S> {
        &mut self.params
    }

    /// Records the forward pass of `x` (`N x input`) given bound parameters.
    pub fn forward(tape: &mut Tape<S>, vars: &[Var], x: Var) -> Result<Var, AutodiffError> {
        let layers = vars.len() / 2;
        let mut h = x;
        for (i, wb) in vars.chunks(2).enumerate() {
            h = tape.matmul(h, wb[0])?;
            h = tape.add(h, wb[1])?;
            if i + 1 < layers {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }

    /// Plain forward pass for one input row.
    pub fn eval(&self, x: &[S]) -> Vec<S> {
        let mut h = x.to_vec();
        let layers = self.params.tensors.len() / 2;
        for (i, wb) in self.params.tensors.chunks(2).enumerate() {
            let (w, b) = (&wb[0], &wb[1]);
            let mut out = b.as_slice().to_vec();
            for (p, &hp) in h.iter().enumerate() {
                for (o, &wv) in out.iter_mut().zip(w.row_slice(p)) {
                    *o += hp * wv;
                }
            }
            if i + 1 < layers {
                out.iter_mut().for_each(|v| *v = v.max(S::zero()));
            }
            h = out;
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn graph_and_plain_forward_agree() {
        let net = Backbone::<f64>::init(&[3, 5, 4], &mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(net.params().len(), 3 * 5 + 5 + 5 * 4 + 4);
        let rows = vec![vec![0.5, -1.0, 2.0], vec![0.0, 0.3, -0.7]];
        let mut tape = Tape::new();
        let vars = net.params().bind(&mut tape);
        let x = tape.constant(Tensor::from_rows(&rows).unwrap());
        let fc = Backbone::forward(&mut tape, &vars, x).unwrap();
        assert_eq!(tape.value(fc).shape(), &[2, 4]);
        for (i, r) in rows.iter().enumerate() {
            let plain = net.eval(r);
            for (a, b) in tape.value(fc).row_slice(i).iter().zip(&plain) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }
}
