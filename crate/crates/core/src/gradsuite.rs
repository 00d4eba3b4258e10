//! Finite-difference verification of every registered operation and every
//! architecture at toy sizes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{grad_check, GradCheck, Graph, Tensor, Var};
use crate::error::Result;
use crate::models::{build, ArchKind, Mode, ModelSpec};

pub const TOLERANCE: f64 = 1e-4;
pub const EPS: f64 = 1e-5;
pub const SEEDS: u64 = 10;

/// Toy architecture fixture: `B × T × C` inputs, `N` classes.
pub const TOY_BATCH: usize = 2;
pub const TOY_LEN: usize = 10;
pub const TOY_CHANNELS: usize = 3;
pub const TOY_CLASSES: usize = 4;

type Program = fn(&mut Graph, &[Var]) -> Result<Var>;

/// One op under test: the scalar program and its input shapes. `away` keeps
/// inputs at least 0.1 from zero so ReLU kinks stay outside the stencil.
pub struct OpCase {
    pub name: &'static str,
    pub program: Program,
    pub shapes: Vec<Vec<usize>>,
    pub away: bool,
}

fn case(name: &'static str, program: Program, shapes: &[&[usize]], away: bool) -> OpCase {
    OpCase {
        name,
        program,
        shapes: shapes.iter().map(|s| s.to_vec()).collect(),
        away,
    }
}

/// Each program squares or otherwise mixes the op output so that the
/// gradient is not constant.
pub fn op_cases() -> Vec<OpCase> {
    vec![
        case("matmul", |g, v| { let y = g.matmul(v[0], v[1])?; let y = g.mul(y, y)?; g.sum(y) }, &[&[2, 3, 4], &[4, 2]], false),
        case("add_bias", |g, v| { let y = g.add_bias(v[0], v[1])?; let y = g.mul(y, y)?; g.sum(y) }, &[&[3, 4], &[4]], false),
        case("add", |g, v| { let y = g.add(v[0], v[1])?; let y = g.mul(y, y)?; g.sum(y) }, &[&[3, 2], &[3, 2]], false),
        case("sub", |g, v| { let y = g.sub(v[0], v[1])?; let y = g.mul(y, y)?; g.sum(y) }, &[&[3, 2], &[3, 2]], false),
        case("mul", |g, v| { let y = g.mul(v[0], v[1])?; g.sum(y) }, &[&[5], &[5]], false),
        case("scale", |g, v| { let y = g.scale(v[0], -2.5)?; let y = g.mul(y, v[0])?; g.sum(y) }, &[&[4]], false),
        case("relu", |g, v| { let y = g.relu(v[0])?; let y = g.mul(y, y)?; g.sum(y) }, &[&[6]], true),
        case("tanh", |g, v| { let y = g.tanh(v[0])?; g.sum(y) }, &[&[6]], false),
        case("sigmoid", |g, v| { let y = g.sigmoid(v[0])?; let y = g.mul(y, y)?; g.sum(y) }, &[&[6]], false),
        case("sum", |g, v| { let y = g.sum(v[0])?; g.mul(y, y) }, &[&[2, 3]], false),
        case("mean", |g, v| { let y = g.mul(v[0], v[0])?; g.mean(y) }, &[&[2, 3]], false),
        case("reshape", |g, v| { let y = g.reshape(v[0], &[3, 2])?; let y = g.matmul(y, v[1])?; let y = g.mul(y, y)?; g.sum(y) }, &[&[2, 3], &[2, 2]], false),
        case("slice_last", |g, v| { let y = g.slice_last(v[0], 1, 2)?; let y = g.mul(y, y)?; g.sum(y) }, &[&[3, 4]], false),
        case("conv1d", |g, v| { let y = g.conv1d(v[0], v[1], 2, 1)?; let y = g.mul(y, y)?; g.sum(y) }, &[&[2, 7, 3], &[2, 3, 3]], false),
        case("max_pool1d", |g, v| { let y = g.max_pool1d(v[0], 2)?; let y = g.mul(y, y)?; g.sum(y) }, &[&[2, 6, 3]], false),
        case("mean_time", |g, v| { let y = g.mean_time(v[0])?; let y = g.mul(y, y)?; g.sum(y) }, &[&[2, 4, 3]], false),
        case("select_time", |g, v| { let y = g.select_time(v[0], 2)?; let y = g.mul(y, y)?; g.sum(y) }, &[&[2, 4, 3]], false),
        case("repeat_time", |g, v| { let y = g.repeat_time(v[0], 3)?; let y = g.mul(y, v[1])?; g.sum(y) }, &[&[2, 3], &[2, 3, 3]], false),
        case("lstm_cell", |g, v| { let (h, c) = g.lstm_cell(v[0], v[1], v[2], v[3], v[4], v[5])?; let y = g.mul(h, c)?; let y = g.add(h, y)?; g.sum(y) }, &[&[2, 3], &[2, 4], &[2, 4], &[3, 16], &[4, 16], &[16]], false),
        case("lstm_seq", |g, v| { let y = g.lstm_seq(v[0], v[1], v[2], v[3])?; let y = g.mul(y, y)?; g.sum(y) }, &[&[2, 4, 3], &[3, 8], &[2, 8], &[8]], false),
        case("dropout", |g, v| { let y = g.dropout(v[0], 0.4, 17)?; let y = g.mul(y, y)?; g.sum(y) }, &[&[10]], false),
        case("cross_entropy", |g, v| g.cross_entropy(v[0], &[1, 0, 3]), &[&[3, 4]], false),
        case("mse", |g, v| g.mse(v[0], v[1]), &[&[3, 4], &[3, 4]], false),
    ]
}

/// `U(−1, 1)` values, or magnitudes in `[0.1, 1)` with random sign.
pub fn random_tensor(shape: &[usize], seed: u64, away: bool) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| {
        if away {
            let m = rng.random_range(0.1..1.0);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        } else {
            rng.random_range(-1.0..1.0)
        }
    })
}

impl OpCase {
    pub fn inputs(&self, seed: u64) -> Vec<Tensor> {
        self.shapes
            .iter()
            .enumerate()
            .map(|(i, s)| random_tensor(s, seed.wrapping_mul(31).wrapping_add(i as u64), self.away))
            .collect()
    }
}

/// Architecture fixture for one seed: initialised parameters, a unit-variance
/// input batch and labels.
pub struct ArchCase {
    pub kind: ArchKind,
    pub params: Vec<Tensor>,
    pub input: Tensor,
    pub labels: Vec<usize>,
}

pub fn arch_case(kind: ArchKind, seed: u64) -> Result<ArchCase> {
    let spec = ModelSpec::toy(kind, TOY_LEN, TOY_CHANNELS, TOY_CLASSES);
    let model = build(&spec, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    let bound = 3f64.sqrt();
    let input = Tensor::from_fn(&[TOY_BATCH, TOY_LEN, TOY_CHANNELS], |_| rng.random_range(-bound..bound));
    let labels = (0..TOY_BATCH).map(|_| rng.random_range(0..TOY_CLASSES)).collect();
    Ok(ArchCase {
        kind,
        params: model.params().iter().map(|p| p.tensor.clone()).collect(),
        input,
        labels,
    })
}

impl ArchCase {
    /// Full training loss (dropout off) as a function of the parameters.
    pub fn program(&self) -> Result<impl Fn(&mut Graph, &[Var]) -> Result<Var> + '_> {
        let model = build(&ModelSpec::toy(self.kind, TOY_LEN, TOY_CHANNELS, TOY_CLASSES), 0)?;
        Ok(move |g: &mut Graph, v: &[Var]| {
            let x = g.constant(self.input.clone());
            let out = model.forward(g, v, x, Mode::Eval)?;
            model.loss(g, &out, x, &self.labels)
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteEntry {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_seed: u64,
    pub worst_input: usize,
    pub worst_coordinate: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub passed: bool,
}

impl SuiteEntry {
    fn fold(name: &str, checks: Vec<(u64, GradCheck)>) -> Self {
        let (seed, worst) = checks
            .into_iter()
            .max_by(|a, b| a.1.max_rel_error.total_cmp(&b.1.max_rel_error))
            .expect("at least one seed");
        SuiteEntry {
            name: name.to_string(),
            max_rel_error: worst.max_rel_error,
            worst_seed: seed,
            worst_input: worst.input,
            worst_coordinate: worst.coordinate,
            analytic: worst.analytic,
            numeric: worst.numeric,
            passed: worst.max_rel_error < TOLERANCE,
        }
    }
}

pub fn check_op(op: &OpCase, seeds: u64) -> Result<SuiteEntry> {
    let mut checks = Vec::new();
    for seed in 0..seeds {
        checks.push((seed, grad_check(op.program, &op.inputs(seed), EPS)?));
    }
    Ok(SuiteEntry::fold(op.name, checks))
}

pub fn check_arch(kind: ArchKind, seeds: u64) -> Result<SuiteEntry> {
    let mut checks = Vec::new();
    for seed in 0..seeds {
        let case = arch_case(kind, seed)?;
        checks.push((seed, grad_check(case.program()?, &case.params, EPS)?));
    }
    Ok(SuiteEntry::fold(kind.as_str(), checks))
}

/// A squaring op whose registered derivative is `3x` instead of `2x`.
pub fn faulty_case() -> OpCase {
    case(
        "faulty_square",
        |g, v| {
            let y = g.map(v[0], |x| x * x, |x| 3.0 * x)?;
            g.sum(y)
        },
        &[&[4]],
        false,
    )
}

/// Runs every op and architecture over `seeds` seeds.
pub fn run_suite(seeds: u64, inject_fault: bool) -> Result<Vec<SuiteEntry>> {
    let mut cases = op_cases();
    if inject_fault {
        cases.push(faulty_case());
    }
    let mut out = Vec::new();
    for op in &cases {
        out.push(check_op(op, seeds)?);
    }
    for kind in ArchKind::ALL {
        out.push(check_arch(kind, seeds)?);
    }
    Ok(out)
}
