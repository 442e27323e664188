//! Finite-difference checks of every backward rule and of the full training
//! objective.
//!
//! Each check draws inputs in `[-1, 1]`, contracts the output with a random
//! projection and compares the analytic gradient of that scalar with central
//! differences. An entry whose `+h` and `-h` probes land on different smooth
//! pieces (a ReLU sign flip or a change of pooling winner) is excluded and
//! counted.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::ops::{Add, LabelLogLikelihood, Mul, Reshape, Scale, Sub, Sum};
use crate::autodiff::{relative_error, Graph, Primitive, Tensor, Var};
use crate::error::{Error, Result};
use crate::layers::{Conv2d, Dense, MaxPool2, Mode, Relu, Softmax};
use crate::network::{forward_graph, init_network, Architecture, Dropout, FilterPlan, ParamVars};
use crate::objective::{total_loss_graph, LOG_EPS};
use crate::seed::derive_seed;

pub const TOLERANCE: f64 = 1e-5;
pub const STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentReport {
    pub name: String,
    pub max_relative_error: f64,
    /// Worst entry, as `operand:flat index`.
    pub worst_entry: Option<(usize, usize)>,
    pub checked: usize,
    pub excluded: usize,
    pub note: String,
}

impl ComponentReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_relative_error <= tolerance
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub step: f64,
    pub components: Vec<ComponentReport>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.components.iter().all(|c| c.passed(self.tolerance))
    }

    pub fn offenders(&self) -> Vec<&ComponentReport> {
        self.components.iter().filter(|c| !c.passed(self.tolerance)).collect()
    }

    pub fn max_relative_error(&self) -> f64 {
        self.components.iter().map(|c| c.max_relative_error).fold(0.0, f64::max)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<14} {:>12} {:>8} {:>9}  {:<6} note",
            "component", "max rel err", "checked", "excluded", "status"
        );
        for c in &self.components {
            let status = if c.passed(self.tolerance) { "ok" } else { "FAIL" };
            let _ = writeln!(
                out,
                "{:<14} {:>12.3e} {:>8} {:>9}  {:<6} {}",
                c.name, c.max_relative_error, c.checked, c.excluded, status, c.note
            );
        }
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        let _ = writeln!(out, "tolerance {:e}, step {:e}: {verdict}", self.tolerance, self.step);
        out
    }
}

/// Compares the analytic and numeric gradient of `<projection, build(inputs)>`
/// with respect to every entry of every input.
pub fn check_function(
    name: &str,
    inputs: &[Tensor],
    seed: u64,
    build: impl Fn(&mut Graph, &[Var]) -> Result<Var>,
) -> Result<ComponentReport> {
    let eval = |values: &[Tensor]| -> Result<(Tensor, Vec<u8>)> {
        let mut g = Graph::inference();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        Ok((g.value(out).clone(), g.branch_signature()))
    };
    let (out0, _) = eval(inputs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let projection = Tensor::new(out0.shape(), (0..out0.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let contract = |t: &Tensor| t.data().iter().zip(projection.data()).map(|(a, b)| a * b).sum::<f64>();

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    let grads = g.backward(out, &projection)?;

    let mut report = ComponentReport {
        name: name.to_string(),
        max_relative_error: 0.0,
        worst_entry: None,
        checked: 0,
        excluded: 0,
        note: String::new(),
    };
    let mut probe = inputs.to_vec();
    for (k, &var) in vars.iter().enumerate() {
        let analytic = grads.get(var).expect("input is trainable");
        for i in 0..inputs[k].len() {
            let orig = inputs[k].data()[i];
            probe[k].data_mut()[i] = orig + STEP;
            let (plus, sig_plus) = eval(&probe)?;
            probe[k].data_mut()[i] = orig - STEP;
            let (minus, sig_minus) = eval(&probe)?;
            probe[k].data_mut()[i] = orig;
            if sig_plus != sig_minus {
                report.excluded += 1;
                continue;
            }
            let (fp, fm) = (contract(&plus), contract(&minus));
            if !fp.is_finite() || !fm.is_finite() {
                return Err(Error::NonFinite(format!("{name}: probe of operand {k} entry {i}")));
            }
            let numeric = (fp - fm) / (2.0 * STEP);
            let err = relative_error(analytic.data()[i], numeric);
            report.checked += 1;
            if report.worst_entry.is_none() || err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst_entry = Some((k, i));
            }
        }
    }
    Ok(report)
}

/// [`check_function`] for a single primitive applied to all inputs.
pub fn check_primitive<P: Primitive + Clone + 'static>(
    name: &str,
    op: P,
    inputs: &[Tensor],
    seed: u64,
) -> Result<ComponentReport> {
    check_function(name, inputs, seed, |g, vars| g.apply(op.clone(), vars))
}

fn uniform(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape matches")
}

/// Values in `[-1, 1]` whose magnitude is at least `margin`.
fn away_from_zero(rng: &mut impl Rng, shape: &[usize], margin: f64) -> Tensor {
    uniform(rng, shape).map(|v| if v.abs() < margin { v.signum() * margin + v } else { v })
}

/// Distinct values in `[-1, 1]` at least `gap` apart, in random order.
fn well_separated(rng: &mut impl Rng, shape: &[usize], gap: f64) -> Tensor {
    use rand::seq::SliceRandom;
    let n: usize = shape.iter().product();
    let span = 2.0 / n as f64;
    assert!(span >= gap, "too many entries for the requested gap");
    let mut v: Vec<f64> = (0..n).map(|i| -1.0 + span * (i as f64 + 0.5)).collect();
    v.shuffle(rng);
    Tensor::new(shape, v).expect("shape matches")
}

/// Small network used for the end-to-end objective check.
pub fn tiny_architecture() -> Architecture {
    Architecture::new(16, 8, 2).with_filters(FilterPlan::from_array([2, 3, 2, 3, 2, 3, 4, 3, 2]))
}

/// Gradient of the full objective (both paths, dropout active, mixed
/// labeled/unlabeled batch, nonzero consistency weight) with respect to
/// every parameter of a tiny network.
pub fn check_objective(arch: Architecture, seed: u64) -> Result<ComponentReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, 0x0B7]));
    let mut params = init_network(arch, seed)?;
    // zero biases put whole windows of padding exactly on the ReLU kink
    for t in params.tensors_mut() {
        if t.shape().len() == 1 {
            *t = uniform(&mut rng, t.shape()).map(|v| 0.1 * v);
        }
    }
    let batch = 4;
    let x = uniform(&mut rng, &arch.input_shape(batch));
    let labels: Vec<Option<usize>> = (0..batch)
        .map(|i| (i % 2 == 0).then(|| rng.gen_range(0..arch.classes)))
        .collect();
    let weight = 0.7;
    let dropout = Dropout {
        rate: 0.3,
        mode: Mode::Training,
        seed: derive_seed(&[seed, 0xD0]),
    };
    let inputs: Vec<Tensor> = params.tensors().into_iter().cloned().collect();
    let mut report = check_function("objective", &inputs, seed, |g, vars| {
        let bound = ParamVars::from_vars(vars.to_vec());
        let xv = g.constant(x.clone());
        let out = forward_graph(g, &params, &bound, xv, &dropout)?;
        Ok(total_loss_graph(g, out.z, out.z_prime, &labels, weight)?.total)
    })?;
    report.note = format!(
        "{} parameters, dropout {}, weight {weight}",
        params.parameter_count(),
        dropout.rate
    );
    Ok(report)
}

/// Runs every component check.
pub fn run_gradcheck(seed: u64) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = || derive_seed(&[seed, rng.gen()]);
    let mut r = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, 1]));
    let mut components = Vec::new();

    let x = uniform(&mut r, &[2, 2, 5, 6]);
    let w = uniform(&mut r, &[3, 2, 3, 3]);
    let b = uniform(&mut r, &[3]);
    components.push(check_primitive("conv2d", Conv2d, &[x, w, b], s())?);

    let x = well_separated(&mut r, &[2, 2, 5, 7], 1e-2);
    let mut c = check_primitive("maxpool2", MaxPool2, &[x], s())?;
    c.note = "inputs at least 1e-2 apart, no ties".into();
    components.push(c);

    let margin = 1e-3;
    let mut c = check_primitive("relu", Relu, &[away_from_zero(&mut r, &[4, 9], margin)], s())?;
    c.note = format!("inputs at least {margin:e} from the kink");
    components.push(c);

    let x = uniform(&mut r, &[3, 5]);
    let w = uniform(&mut r, &[4, 5]);
    let b = uniform(&mut r, &[4]);
    components.push(check_primitive("dense", Dense, &[x, w, b], s())?);

    components.push(check_primitive("softmax", Softmax, &[uniform(&mut r, &[3, 4])], s())?);

    let p = crate::layers::softmax(&uniform(&mut r, &[4, 3]))?;
    let ll = LabelLogLikelihood {
        labels: vec![Some(2), None, Some(0), Some(1)],
        eps: LOG_EPS,
    };
    components.push(check_primitive("log-likelihood", ll, &[p], s())?);

    let (a, b2) = (uniform(&mut r, &[3, 4]), uniform(&mut r, &[3, 4]));
    components.push(check_primitive("add", Add, &[a.clone(), b2.clone()], s())?);
    components.push(check_primitive("sub", Sub, &[a.clone(), b2.clone()], s())?);
    components.push(check_primitive("mul", Mul, &[a.clone(), b2], s())?);
    components.push(check_primitive("scale", Scale(-1.7), &[a.clone()], s())?);
    components.push(check_primitive("sum", Sum, &[a.clone()], s())?);
    components.push(check_primitive("reshape", Reshape(vec![2, 6]), &[a], s())?);

    let x = uniform(&mut r, &[3, 10]);
    let mask_seed = s();
    components.push(check_function("dropout", &[x], s(), |g, v| {
        g.dropout(v[0], 0.4, Mode::Training, &mut ChaCha8Rng::seed_from_u64(mask_seed))
    })?);

    components.push(check_objective(tiny_architecture(), s())?);

    Ok(GradcheckReport {
        tolerance: TOLERANCE,
        step: STEP,
        components,
    })
}
