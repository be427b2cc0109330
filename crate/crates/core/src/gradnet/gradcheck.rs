use crate::error::Result;
use crate::gradnet::tape::{Tape, Var};
use crate::gradnet::tensor::{ParamId, ParamStore};
use crate::scalar::Scalar;

/// Central-difference step used by [`grad_check`].
pub const FD_STEP: f64 = 1e-5;

/// Gradients below this magnitude are compared absolutely.
pub const ABS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub n_checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Compares tape gradients of `loss_fn` with central differences for every
/// parameter value in `store`.
///
/// The relative error of one coordinate is
/// `|analytic - numeric| / max(|analytic|, |numeric|, ABS_FLOOR)`.
pub fn grad_check<T, F>(
    store: &mut ParamStore<T>,
    loss_fn: F,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &ParamStore<T>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, store)?;
    tape.backward(loss, store)?;
    let analytic: Vec<Vec<T>> = store
        .iter()
        .map(|(_, t)| t.grad().expect("backward fills every gradient").to_vec())
        .collect();

    let h = T::lit(FD_STEP);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        n_checked: 0,
        tolerance,
    };
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        for i in 0..store.get(id).len() {
            let original = store.get(id).values()[i];
            let mut eval = |x: T| -> Result<f64> {
                store.get_mut(id).values_mut()[i] = x;
                let mut t = Tape::new();
                let l = loss_fn(&mut t, store)?;
                Ok(t.scalar_value(l)?.as_f64())
            };
            let plus = eval(original + h)?;
            let minus = eval(original - h)?;
            store.get_mut(id).values_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic[id.index()][i].as_f64();
            let denom = a.abs().max(numeric.abs()).max(ABS_FLOOR);
            let rel = (a - numeric).abs() / denom;
            report.n_checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = store.name(id).to_string();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradnet::layers::{Activation, LinearLayer, Mlp};
    use crate::gradnet::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_squared_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::<f64>::new();
        let layer = LinearLayer::new(&mut store, "lin", 4, 3, &mut rng);
        let x: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..15).map(|_| rng.random_range(-1.0..1.0)).collect();
        let report = grad_check(
            &mut store,
            |tape, store| {
                let xv = tape.input(&Tensor::matrix(5, 4, x.clone())?);
                let yv = tape.input(&Tensor::matrix(5, 3, y.clone())?);
                let out = layer.forward(tape, store, xv)?;
                let d = tape.sub(out, yv)?;
                let sq = tape.square(d)?;
                tape.sum(sq)
            },
            1e-6,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.n_checked, 15);
    }

    #[test]
    fn two_hidden_layer_relu_net() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut store = ParamStore::<f64>::new();
        let net = Mlp::new(
            &mut store,
            "net",
            &[4, 6, 5, 2],
            Activation::Relu,
            false,
            &mut rng,
        );
        // nonzero biases move pre-activations off the kink at zero
        for layer in &net.layers {
            let b = store.get_mut(layer.bias);
            for v in b.values_mut() {
                *v = rng.random_range(0.05..0.3);
            }
        }
        let x: Vec<f64> = (0..24).map(|_| rng.random_range(-1.0..1.0)).collect();
        let report = grad_check(
            &mut store,
            |tape, store| {
                let xv = tape.input(&Tensor::matrix(6, 4, x.clone())?);
                let out = net.forward(tape, store, xv)?;
                let sq = tape.square(out)?;
                tape.mean(sq)
            },
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }
}
