//! The joint objective: masked cross-entropy on the supervised logits plus a
//! ramped mean-squared consistency term between the two paths.

use serde::{Deserialize, Serialize};

use crate::autodiff::ops::LabelLogLikelihood;
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Added inside the logarithm of the cross-entropy.
pub const LOG_EPS: f64 = 1e-12;

/// Scalar components of one evaluation of the objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub supervised: f64,
    pub unsupervised: f64,
    pub weight: f64,
    pub total: f64,
}

/// Gaussian ramp-up `w(t) = w_max · exp(-5 (1 - min(t, T)/T)²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RampSchedule {
    pub w_max: f64,
    pub t_ramp: f64,
}

impl RampSchedule {
    pub fn new(w_max: f64, t_ramp: f64) -> Result<Self> {
        if !(w_max >= 0.0 && w_max.is_finite()) {
            return Err(Error::Invalid(format!("w_max must be a nonnegative number, got {w_max}")));
        }
        if !(t_ramp > 0.0 && t_ramp.is_finite()) {
            return Err(Error::Invalid(format!("t_ramp must be positive, got {t_ramp}")));
        }
        Ok(RampSchedule { w_max, t_ramp })
    }

    pub fn weight(&self, t: f64) -> Result<f64> {
        ramp_weight(t, self)
    }
}

pub fn ramp_weight(t: f64, schedule: &RampSchedule) -> Result<f64> {
    if !(schedule.t_ramp > 0.0) {
        return Err(Error::Invalid(format!("t_ramp must be positive, got {}", schedule.t_ramp)));
    }
    if !(t >= 0.0) {
        return Err(Error::Invalid(format!("epoch index must be nonnegative, got {t}")));
    }
    let phase = 1.0 - t.min(schedule.t_ramp) / schedule.t_ramp;
    Ok(schedule.w_max * (-5.0 * phase * phase).exp())
}

fn batch_dims(z: &Tensor) -> Result<(usize, usize)> {
    match *z.shape() {
        [b, c] => Ok((b, c)),
        _ => Err(Error::Invalid(format!("logits must be [B, C], got {:?}", z.shape()))),
    }
}

/// Graph handles for the three loss scalars.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub supervised: Var,
    pub unsupervised: Var,
    pub total: Var,
}

/// `-(1/|B|) Σ_{labeled i} ln(softmax(z_i)[y_i] + 1e-12)`; the divisor is the
/// full batch size, not the labeled count.
pub fn supervised_loss_graph(g: &mut Graph, z: Var, labels: &[Option<usize>]) -> Result<Var> {
    let (batch, _) = batch_dims(g.value(z))?;
    let p = g.softmax(z)?;
    let ll = g.apply(
        LabelLogLikelihood {
            labels: labels.to_vec(),
            eps: LOG_EPS,
        },
        &[p],
    )?;
    g.scale(ll, -1.0 / batch as f64)
}

/// `(1/(C|B|)) Σ_i ||z_i - z'_i||²` on raw logits.
pub fn consistency_loss_graph(g: &mut Graph, z: Var, z_prime: Var) -> Result<Var> {
    let (batch, classes) = batch_dims(g.value(z))?;
    g.value(z_prime).expect_shape("consistency loss", &[batch, classes])?;
    let diff = g.sub(z, z_prime)?;
    let sq = g.mul(diff, diff)?;
    let s = g.sum(sq)?;
    g.scale(s, 1.0 / (classes * batch) as f64)
}

/// Records `l + w · l'` on `g`.
pub fn total_loss_graph(
    g: &mut Graph,
    z: Var,
    z_prime: Var,
    labels: &[Option<usize>],
    weight: f64,
) -> Result<LossVars> {
    let supervised = supervised_loss_graph(g, z, labels)?;
    let unsupervised = consistency_loss_graph(g, z, z_prime)?;
    let weighted = g.scale(unsupervised, weight)?;
    let total = g.add(supervised, weighted)?;
    Ok(LossVars {
        supervised,
        unsupervised,
        total,
    })
}

impl LossVars {
    pub fn breakdown(&self, g: &Graph, weight: f64) -> LossBreakdown {
        LossBreakdown {
            supervised: g.value(self.supervised).item(),
            unsupervised: g.value(self.unsupervised).item(),
            weight,
            total: g.value(self.total).item(),
        }
    }
}

pub fn supervised_loss(z: &Tensor, labels: &[Option<usize>]) -> Result<f64> {
    let mut g = Graph::inference();
    let zv = g.constant(z.clone());
    let l = supervised_loss_graph(&mut g, zv, labels)?;
    Ok(g.value(l).item())
}

pub fn consistency_loss(z: &Tensor, z_prime: &Tensor) -> Result<f64> {
    let mut g = Graph::inference();
    let a = g.constant(z.clone());
    let b = g.constant(z_prime.clone());
    let l = consistency_loss_graph(&mut g, a, b)?;
    Ok(g.value(l).item())
}

/// Evaluates the full objective at epoch index `t`.
pub fn total_loss(
    z: &Tensor,
    z_prime: &Tensor,
    labels: &[Option<usize>],
    t: f64,
    schedule: &RampSchedule,
) -> Result<LossBreakdown> {
    let weight = ramp_weight(t, schedule)?;
    let mut g = Graph::inference();
    let a = g.constant(z.clone());
    let b = g.constant(z_prime.clone());
    let vars = total_loss_graph(&mut g, a, b, labels, weight)?;
    Ok(vars.breakdown(&g, weight))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn z(b: usize, c: usize, v: &[f64]) -> Tensor {
        Tensor::new([b, c], v.to_vec()).unwrap()
    }

    #[test]
    fn supervised_examples() {
        assert_eq!(supervised_loss(&z(2, 2, &[1.0, 2.0, 3.0, 4.0]), &[None, None]).unwrap(), 0.0);
        let l = supervised_loss(&z(1, 2, &[0.0, 0.0]), &[Some(0)]).unwrap();
        assert!((l - 0.693147).abs() < 1e-6);
        let l = supervised_loss(&z(1, 2, &[3f64.ln(), 0.0]), &[Some(0)]).unwrap();
        assert!((l - 0.287682).abs() < 1e-6);
        assert!(supervised_loss(&z(1, 2, &[0.0, 0.0]), &[Some(2)]).is_err());
    }

    #[test]
    fn supervised_divides_by_full_batch() {
        let one = supervised_loss(&z(1, 2, &[0.0, 0.0]), &[Some(1)]).unwrap();
        let half = supervised_loss(&z(2, 2, &[0.0, 0.0, 5.0, 1.0]), &[Some(1), None]).unwrap();
        assert!((half - one / 2.0).abs() < 1e-15);
    }

    #[test]
    fn consistency_examples() {
        let a = z(1, 2, &[1.0, 0.0]);
        assert_eq!(consistency_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(consistency_loss(&a, &z(1, 2, &[0.0, 1.0])).unwrap(), 1.0);
        let l = consistency_loss(&z(2, 2, &[0.3, -0.4, 0.0, 0.0]), &Tensor::zeros([2, 2])).unwrap();
        assert!((l - 0.0625).abs() < 1e-15);
        assert!(consistency_loss(&a, &Tensor::zeros([2, 1])).is_err());
    }

    #[test]
    fn ramp_examples() {
        let s = RampSchedule::new(1.0, 80.0).unwrap();
        assert_eq!(s.weight(80.0).unwrap(), 1.0);
        assert!((s.weight(0.0).unwrap() - (-5f64).exp()).abs() < 1e-15);
        let s2 = RampSchedule::new(2.0, 80.0).unwrap();
        // 2·e^(-1.25)
        assert!((s2.weight(40.0).unwrap() - 0.573010).abs() < 1e-6);
        assert_eq!(s.weight(500.0).unwrap(), 1.0);
        assert!(RampSchedule::new(1.0, 0.0).is_err());
        let bad = RampSchedule { w_max: 1.0, t_ramp: -1.0 };
        assert!(ramp_weight(3.0, &bad).is_err());
        assert!(s.weight(-1.0).is_err());
    }

    #[test]
    fn total_examples() {
        let zs = z(1, 2, &[1.0, 0.0]);
        let zp = z(1, 2, &[0.0, 1.0]);
        let zero_w = RampSchedule::new(0.0, 80.0).unwrap();
        let b = total_loss(&zs, &zp, &[Some(1)], 10.0, &zero_w).unwrap();
        assert_eq!(b.total, b.supervised);

        let s = RampSchedule::new(1.0, 80.0).unwrap();
        let b = total_loss(&zs, &zp, &[None], 40.0, &s).unwrap();
        assert_eq!(b.supervised, 0.0);
        assert_eq!(b.total, b.weight * b.unsupervised);

        // l = ln 2 (uniform logits), l' = 1 (unit swap), w = 0.5
        let w_half = RampSchedule::new(0.5, 80.0).unwrap();
        let b = total_loss(&z(1, 2, &[0.5, 0.5]), &z(1, 2, &[-0.5, 1.5]), &[Some(0)], 80.0, &w_half).unwrap();
        assert!((b.supervised - 0.693147).abs() < 1e-6);
        assert_eq!(b.unsupervised, 1.0);
        assert!((b.total - 1.193147).abs() < 1e-6);
    }

    fn logits(b: usize, c: usize) -> impl Strategy<Value = Tensor> {
        proptest::collection::vec(-5.0f64..5.0, b * c).prop_map(move |v| Tensor::new([b, c], v).unwrap())
    }

    proptest! {
        #[test]
        fn consistency_is_symmetric_and_nonnegative(a in logits(3, 2), b in logits(3, 2)) {
            let ab = consistency_loss(&a, &b).unwrap();
            let ba = consistency_loss(&b, &a).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab == 0.0, a == b);
        }

        #[test]
        fn supervised_is_shift_invariant(a in logits(4, 3), shift in -50.0f64..50.0, y in proptest::collection::vec(proptest::option::of(0usize..3), 4)) {
            let shifted = a.map(|v| v + shift);
            let l1 = supervised_loss(&a, &y).unwrap();
            let l2 = supervised_loss(&shifted, &y).unwrap();
            prop_assert!((l1 - l2).abs() <= 1e-10);
            prop_assert!(l1 >= 0.0);
        }

        #[test]
        fn ramp_is_monotone(w_max in 0.0f64..10.0, t_ramp in 1usize..200) {
            let s = RampSchedule::new(w_max, t_ramp as f64).unwrap();
            let mut prev = 0.0;
            for t in 0..=2 * t_ramp {
                let w = s.weight(t as f64).unwrap();
                prop_assert!(w >= prev);
                if t >= t_ramp {
                    prop_assert_eq!(w, w_max);
                }
                prev = w;
            }
        }
    }
}
