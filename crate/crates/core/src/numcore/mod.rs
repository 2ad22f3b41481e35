//! Dense tensors, reverse-mode differentiation, MLPs and optimizers.

mod adam;
mod checkpoint;
mod graph;
mod mlp;
mod params;
mod tensor;

pub use adam::{sgd_step, AdamState};
pub use checkpoint::{Checkpoint, HEADER as CHECKPOINT_HEADER};
pub use graph::{BoundParams, Gradients, Graph, Var};
pub use mlp::{Activation, MlpSpec};
pub use params::{ParamVector, Segment};
pub use tensor::Tensor;

/// Central finite-difference gradient of `loss` at `params`.
///
/// Used as an oracle against [`Graph::backward`].
pub fn finite_difference_grad(
    params: &ParamVector,
    h: f64,
    mut loss: impl FnMut(&ParamVector) -> crate::Result<f64>,
) -> crate::Result<Vec<f64>> {
    let mut probe = params.clone();
    let mut out = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = probe.values()[i];
        probe.values_mut()[i] = orig + h;
        let up = loss(&probe)?;
        probe.values_mut()[i] = orig - h;
        let down = loss(&probe)?;
        probe.values_mut()[i] = orig;
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, floor)`.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_param(v: f64) -> ParamVector {
        let mut p = ParamVector::new();
        p.push("w", vec![1], vec![v]).unwrap();
        p
    }

    #[test]
    fn square_gradient() {
        let mut p = scalar_param(3.0);
        let mut g = Graph::new();
        let b = g.bind(&p).unwrap();
        let w = b.get("w").unwrap();
        let l = g.square(w).unwrap();
        let grads = g.backward(l).unwrap();
        grads.accumulate(&b, &mut p).unwrap();
        assert_eq!(p.grad(), &[6.0]);
    }

    #[test]
    fn tanh_gradient_at_zero() {
        let mut p = scalar_param(0.0);
        let mut g = Graph::new();
        let b = g.bind(&p).unwrap();
        let t = g.tanh(b.get("w").unwrap()).unwrap();
        let l = g.sum(t).unwrap();
        g.backward(l).unwrap().accumulate(&b, &mut p).unwrap();
        assert_eq!(p.grad(), &[1.0]);
    }

    #[test]
    fn backward_twice_is_an_error() {
        let p = scalar_param(1.0);
        let mut g = Graph::new();
        let b = g.bind(&p).unwrap();
        let l = g.square(b.get("w").unwrap()).unwrap();
        g.backward(l).unwrap();
        assert!(matches!(g.backward(l), Err(Error::BackwardConsumed)));
    }

    #[test]
    fn unreachable_params_get_zero_grad() {
        let mut p = ParamVector::new();
        p.push("a", vec![1], vec![2.0]).unwrap();
        p.push("b", vec![1], vec![5.0]).unwrap();
        let mut g = Graph::new();
        let bound = g.bind(&p).unwrap();
        let l = g.square(bound.get("a").unwrap()).unwrap();
        g.backward(l).unwrap().accumulate(&bound, &mut p).unwrap();
        assert_eq!(p.grad(), &[4.0, 0.0]);
    }

    #[test]
    fn non_finite_is_rejected_at_source() {
        let p = scalar_param(1000.0);
        let mut g = Graph::new();
        let b = g.bind(&p).unwrap();
        assert!(matches!(g.exp(b.get("w").unwrap()), Err(Error::NonFinite("exp"))));
    }

    fn mlp_loss_graph(spec: &MlpSpec, p: &ParamVector, x: &Tensor, y: &Tensor) -> (Graph, BoundParams, Var) {
        let mut g = Graph::new();
        let b = g.bind(p).unwrap();
        let xv = g.constant(x.clone()).unwrap();
        let yv = g.constant(y.clone()).unwrap();
        let out = spec.forward(&mut g, &b, "", xv).unwrap();
        let d = g.sub(out, yv).unwrap();
        let sq = g.square(d).unwrap();
        let l = g.mean(sq).unwrap();
        (g, b, l)
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for act in [Activation::Tanh, Activation::Relu] {
            let spec = MlpSpec::new(vec![3, 6, 5, 2], act).unwrap();
            let mut p = spec.init(&mut rng).unwrap();
            let x = Tensor::from_rows(&[vec![0.2, -0.7, 1.1], vec![-1.3, 0.4, 0.05]]).unwrap();
            let y = Tensor::from_rows(&[vec![0.5, -0.5], vec![1.0, 0.0]]).unwrap();
            let (mut g, b, l) = mlp_loss_graph(&spec, &p, &x, &y);
            g.backward(l).unwrap().accumulate(&b, &mut p).unwrap();
            let fd = finite_difference_grad(&p, 1e-5, |q| {
                let (g, _, l) = mlp_loss_graph(&spec, q, &x, &y);
                g.value(l).item()
            })
            .unwrap();
            assert!(relative_error(p.grad(), &fd, 1e-8) < 1e-4, "{act:?}");
        }
    }

    #[test]
    fn elementwise_ops_match_finite_differences() {
        let mut p = ParamVector::new();
        p.push("a", vec![2, 3], vec![0.3, -0.8, 1.2, 0.1, 0.9, -0.4]).unwrap();
        let build = |q: &ParamVector| {
            let mut g = Graph::new();
            let b = g.bind(q).unwrap();
            let a = b.get("a").unwrap();
            let e = g.exp(a).unwrap();
            let c = g.clamp(e, 0.6, 2.0).unwrap();
            let s = g.slice_cols(c, 1, 3).unwrap();
            let t = g.slice_cols(a, 0, 2).unwrap();
            let m = g.minimum(s, t).unwrap();
            let rs = g.sum_cols(m).unwrap();
            let sq = g.square(rs).unwrap();
            let l = g.sum(sq).unwrap();
            (g, b, l)
        };
        let (mut g, b, l) = build(&p);
        g.backward(l).unwrap().accumulate(&b, &mut p).unwrap();
        let fd = finite_difference_grad(&p, 1e-6, |q| {
            let (g, _, l) = build(q);
            g.value(l).item()
        })
        .unwrap();
        assert!(relative_error(p.grad(), &fd, 1e-8) < 1e-6);
    }
}
