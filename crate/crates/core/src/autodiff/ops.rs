//! Elementwise and reduction primitives.

use super::graph::{Graph, Primitive, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

fn same_shape(name: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(name, a.shape(), b.shape()));
    }
    Ok(())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data).expect("operands share a shape")
}

#[derive(Debug, Clone, Copy)]
pub struct Identity;

impl Primitive for Identity {
    fn name(&self) -> &'static str {
        "identity"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        Ok(inputs[0].clone())
    }

    fn backward(&self, _: &[&Tensor], _: &Tensor, grad: &Tensor) -> Result<Vec<Tensor>> {
        Ok(vec![grad.clone()])
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Add;

impl Primitive for Add {
    fn name(&self) -> &'static str {
        "add"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        same_shape("add", inputs[0], inputs[1])?;
        Ok(zip_map(inputs[0], inputs[1], |x, y| x + y))
    }

    fn backward(&self, _: &[&Tensor], _: &Tensor, grad: &Tensor) -> Result<Vec<Tensor>> {
        Ok(vec![grad.clone(), grad.clone()])
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Sub;

impl Primitive for Sub {
    fn name(&self) -> &'static str {
        "sub"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        same_shape("sub", inputs[0], inputs[1])?;
        Ok(zip_map(inputs[0], inputs[1], |x, y| x - y))
    }

    fn backward(&self, _: &[&Tensor], _: &Tensor, grad: &Tensor) -> Result<Vec<Tensor>> {
        Ok(vec![grad.clone(), grad.map(|g| -g)])
    }
}

/// Elementwise (Hadamard) product.
#[derive(Debug, Clone, Copy)]
pub struct Mul;

impl Primitive for Mul {
    fn name(&self) -> &'static str {
        "mul"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        same_shape("mul", inputs[0], inputs[1])?;
        Ok(zip_map(inputs[0], inputs[1], |x, y| x * y))
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor) -> Result<Vec<Tensor>> {
        Ok(vec![
            zip_map(grad, inputs[1], |g, y| g * y),
            zip_map(grad, inputs[0], |g, x| g * x),
        ])
    }
}

/// Multiplication by a fixed scalar.
#[derive(Debug, Clone, Copy)]
pub struct Scale(pub f64);

impl Primitive for Scale {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        Ok(inputs[0].map(|x| x * self.0))
    }

    fn backward(&self, _: &[&Tensor], _: &Tensor, grad: &Tensor) -> Result<Vec<Tensor>> {
        Ok(vec![grad.map(|g| g * self.0)])
    }
}

/// Sum of all entries, as a `[1]` tensor.
#[derive(Debug, Clone, Copy)]
pub struct Sum;

impl Primitive for Sum {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        Ok(Tensor::scalar(inputs[0].sum()))
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor) -> Result<Vec<Tensor>> {
        Ok(vec![Tensor::full(inputs[0].shape(), grad.item())])
    }
}

#[derive(Debug, Clone)]
pub struct Reshape(pub Vec<usize>);

impl Primitive for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        inputs[0].clone().reshape(self.0.clone())
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor) -> Result<Vec<Tensor>> {
        Ok(vec![grad.clone().reshape(inputs[0].shape())?])
    }
}

/// `Σ_{i labeled} ln(min(p[i, y_i] + eps, 1))` over a `[B, C]` probability
/// matrix. The cap keeps every term nonpositive when `p` rounds to 1.
///
/// Unlabeled rows contribute nothing; a batch with no labels yields 0.
#[derive(Debug, Clone)]
pub struct LabelLogLikelihood {
    pub labels: Vec<Option<usize>>,
    pub eps: f64,
}

impl LabelLogLikelihood {
    fn check(&self, probs: &Tensor) -> Result<usize> {
        let [rows, classes] = probs.shape() else {
            return Err(Error::Invalid(format!(
                "label log-likelihood expects [B, C] input, got {:?}",
                probs.shape()
            )));
        };
        if *rows != self.labels.len() {
            return Err(Error::shape(
                "label log-likelihood rows",
                &[self.labels.len()],
                &[*rows],
            ));
        }
        if let Some(bad) = self.labels.iter().flatten().find(|&&y| y >= *classes) {
            return Err(Error::Invalid(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(*classes)
    }
}

impl Primitive for LabelLogLikelihood {
    fn name(&self) -> &'static str {
        "label_log_likelihood"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let classes = self.check(inputs[0])?;
        let p = inputs[0].data();
        let total = self
            .labels
            .iter()
            .enumerate()
            .filter_map(|(i, y)| y.map(|y| (p[i * classes + y] + self.eps).min(1.0).ln()))
            .sum();
        Ok(Tensor::scalar(total))
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor) -> Result<Vec<Tensor>> {
        let classes = self.check(inputs[0])?;
        let p = inputs[0].data();
        let g = grad.item();
        let mut out = Tensor::zeros(inputs[0].shape());
        let d = out.data_mut();
        for (i, y) in self.labels.iter().enumerate() {
            if let Some(y) = *y {
                let k = i * classes + y;
                let shifted = p[k] + self.eps;
                if shifted < 1.0 {
                    d[k] = g / shifted;
                }
            }
        }
        Ok(vec![out])
    }
}

impl Graph {
    pub fn identity(&mut self, a: Var) -> Result<Var> {
        self.apply(Identity, &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Mul, &[a, b])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        self.apply(Scale(factor), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.apply(Sum, &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        self.apply(Reshape(shape.into()), &[a])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::record;

    #[test]
    fn record_identity_has_single_entry() {
        let ((), g) = record(|g| {
            let x = g.param(Tensor::from_vec(vec![2.0]));
            let y = g.identity(x)?;
            assert_eq!(g.value(y).data(), &[2.0]);
            Ok(())
        })
        .unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g.entry_name(crate::autodiff::Var::from_index(1)), "identity");
    }

    #[test]
    fn doubling() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![1.5]));
        let y = g.add(x, x).unwrap();
        assert_eq!(g.value(y).data(), &[3.0]);
        let grads = g.backward(y, &Tensor::scalar(1.0)).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0]);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let x = g.param(Tensor::new([2, 3], vec![0.3, -1.0, 4.0, 2.0, 0.0, 9.0]).unwrap());
        let s = g.sum(x).unwrap();
        let grads = g.backward(s, &Tensor::scalar(1.0)).unwrap();
        assert_eq!(grads.get(x).unwrap(), &Tensor::ones([2, 3]));
    }

    #[test]
    fn square_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![3.0]));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq).unwrap();
        let grads = g.backward(s, &Tensor::scalar(1.0)).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn seed_shape_mismatch_names_entry() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![1.0, 2.0]));
        let y = g.scale(x, 2.0).unwrap();
        let err = g.backward(y, &Tensor::scalar(1.0)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("#1") && msg.contains("scale"), "{msg}");
    }

    #[derive(Debug)]
    struct Opaque;

    impl Primitive for Opaque {
        fn name(&self) -> &'static str {
            "opaque"
        }
        fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
            Ok(inputs[0].clone())
        }
        fn has_backward(&self) -> bool {
            false
        }
        fn backward(&self, _: &[&Tensor], _: &Tensor, _: &Tensor) -> Result<Vec<Tensor>> {
            Err(Error::Unsupported(self.name().into()))
        }
    }

    #[test]
    fn unregistered_primitive_is_rejected_while_recording() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(1.0));
        assert!(matches!(g.apply(Opaque, &[x]), Err(Error::Unsupported(name)) if name == "opaque"));

        let mut inf = Graph::inference();
        let x = inf.constant(Tensor::scalar(1.0));
        assert!(inf.apply(Opaque, &[x]).is_ok());
    }

    #[test]
    fn untouched_trainable_leaf_gets_zero_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![1.0, 2.0]));
        let unused = g.param(Tensor::from_vec(vec![5.0]));
        let s = g.sum(x).unwrap();
        let grads = g.backward(s, &Tensor::scalar(1.0)).unwrap();
        assert_eq!(grads.get(unused).unwrap().data(), &[0.0]);
    }

    #[test]
    fn label_log_likelihood_skips_unlabeled_rows() {
        let mut g = Graph::new();
        let p = g.param(Tensor::new([2, 2], vec![0.25, 0.75, 0.5, 0.5]).unwrap());
        let op = LabelLogLikelihood {
            labels: vec![Some(1), None],
            eps: 0.0,
        };
        let ll = g.apply(op, &[p]).unwrap();
        assert!((g.value(ll).item() - 0.75f64.ln()).abs() < 1e-15);
        let grads = g.backward(ll, &Tensor::scalar(1.0)).unwrap();
        assert_eq!(grads.get(p).unwrap().data(), &[0.0, 1.0 / 0.75, 0.0, 0.0]);
    }
}
