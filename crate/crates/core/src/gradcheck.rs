//! Central finite-difference checks of the reverse-mode gradients, and a
//! suite that runs them over every tape operation and network layer.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::network::layers::{Init, Sgcam, Ssab, Ssan};
use crate::network::{ModelConfig, SscanModel};
use crate::tensor::{Backend, OpKind, ParamStore, PoolMode, Tape, Tensor, Var};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Operations and layers covered by [`run_suite`], in run order.
pub const SUITE_OPS: [&str; 14] = [
    "conv2d",
    "relu",
    "sigmoid",
    "pool_spatial",
    "pool_channel",
    "concat_channels",
    "slice_channels",
    "add",
    "mul",
    "mse_loss",
    "sgcam",
    "ssab",
    "ssan",
    "sscan",
];

/// Worst coordinate of one check. Error is `|a − n| / max(1, |a|)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

impl FdReport {
    fn from_pairs(analytic: &[f64], numeric: &[f64]) -> Self {
        let mut report = FdReport {
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: analytic.first().copied().unwrap_or(0.0),
            numeric: numeric.first().copied().unwrap_or(0.0),
            coordinates: analytic.len(),
        };
        for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
            let err = (a - n).abs() / a.abs().max(1.0);
            // NaN compares false, so route it through explicitly.
            if err > report.max_rel_error || err.is_nan() && !report.max_rel_error.is_nan() {
                report.max_rel_error = err;
                report.worst_index = i;
                report.analytic = a;
                report.numeric = n;
            }
        }
        report
    }
}

fn tape_for(store: Option<&ParamStore>, fault: Option<OpKind>) -> Tape<'_> {
    let mut tape = match store {
        Some(s) => Tape::with_params(s),
        None => Tape::new(),
    };
    if let Some(kind) = fault {
        tape.inject_fault(kind);
    }
    tape
}

fn scalar(tape: &Tape<'_>, v: Var) -> Result<f64> {
    match tape.value(v) {
        [s] => Ok(*s),
        _ => Err(Error::NonScalarRoot(tape.shape_of(v).to_vec())),
    }
}

fn input_check<F>(
    store: Option<&ParamStore>,
    f: &F,
    x: &Tensor,
    step: f64,
    fault: Option<OpKind>,
) -> Result<FdReport>
where
    F: Fn(&mut Tape<'_>, Var) -> Result<Var> + Sync,
{
    let mut tape = tape_for(store, fault);
    let leaf = tape.leaf(&x.clone().with_requires_grad(true));
    let root = f(&mut tape, leaf)?;
    scalar(&tape, root)?;
    let grads = tape.backward(root)?;
    let analytic = grads
        .wrt(leaf)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; x.numel()]);

    let eval = |shifted: &Tensor| -> Result<f64> {
        let mut t = tape_for(store, None);
        let v = t.constant(shifted);
        let root = f(&mut t, v)?;
        scalar(&t, root)
    };
    let numeric = (0..x.numel())
        .into_par_iter()
        .map_init(
            || x.clone(),
            |buf, i| {
                let orig = buf.data()[i];
                buf.data_mut()[i] = orig + step;
                let plus = eval(buf);
                buf.data_mut()[i] = orig - step;
                let minus = eval(buf);
                buf.data_mut()[i] = orig;
                Ok((plus? - minus?) / (2.0 * step))
            },
        )
        .collect::<Result<Vec<_>>>()?;
    Ok(FdReport::from_pairs(&analytic, &numeric))
}

/// Compares the tape gradient of the scalar `f(x)` against central
/// differences with the given step, coordinate by coordinate.
pub fn finite_difference_check<F>(f: F, x: &Tensor, step: f64) -> Result<FdReport>
where
    F: Fn(&mut Tape<'_>, Var) -> Result<Var> + Sync,
{
    input_check(None, &f, x, step, None)
}

/// As [`finite_difference_check`], with parameters resolved from `store`.
pub fn finite_difference_check_with_params<F>(
    store: &ParamStore,
    f: F,
    x: &Tensor,
    step: f64,
) -> Result<FdReport>
where
    F: Fn(&mut Tape<'_>, Var) -> Result<Var> + Sync,
{
    input_check(Some(store), &f, x, step, None)
}

/// Result of a parameter check; `parameter` names the tensor holding the
/// worst coordinate and `report.worst_index` indexes into it.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamFdReport {
    pub parameter: String,
    pub report: FdReport,
}

fn param_check<F>(store: &ParamStore, f: &F, step: f64, fault: Option<OpKind>) -> Result<ParamFdReport>
where
    F: Fn(&mut Tape<'_>) -> Result<Var> + Sync,
{
    let mut tape = tape_for(Some(store), fault);
    let root = f(&mut tape)?;
    scalar(&tape, root)?;
    let mut analytic: Vec<Vec<f64>> = store.iter().map(|(_, p)| vec![0.0; p.tensor.numel()]).collect();
    for (id, g) in tape.backward_params(root)? {
        analytic[id.index()] = g;
    }
    drop(tape);

    let coords: Vec<(usize, usize)> = store
        .iter()
        .flat_map(|(id, p)| (0..p.tensor.numel()).map(move |j| (id.index(), j)))
        .collect();
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut t = Tape::with_params(s);
        let root = f(&mut t)?;
        scalar(&t, root)
    };
    let numeric = coords
        .par_iter()
        .map_init(
            || store.clone(),
            |s, &(p, j)| {
                let id = ids[p];
                let orig = s.get(id).tensor.data()[j];
                s.tensor_mut(id).data_mut()[j] = orig + step;
                let plus = eval(s);
                s.tensor_mut(id).data_mut()[j] = orig - step;
                let minus = eval(s);
                s.tensor_mut(id).data_mut()[j] = orig;
                Ok((plus? - minus?) / (2.0 * step))
            },
        )
        .collect::<Result<Vec<_>>>()?;

    let flat: Vec<f64> = analytic.concat();
    let mut report = FdReport::from_pairs(&flat, &numeric);
    let (p, j) = coords.get(report.worst_index).copied().unwrap_or((0, 0));
    report.worst_index = j;
    Ok(ParamFdReport {
        parameter: store
            .iter()
            .nth(p)
            .map(|(_, param)| param.name.clone())
            .unwrap_or_default(),
        report,
    })
}

/// Checks the gradient of the scalar `f` with respect to every parameter
/// coordinate in `store`.
pub fn parameter_gradient_check<F>(store: &ParamStore, f: F, step: f64) -> Result<ParamFdReport>
where
    F: Fn(&mut Tape<'_>) -> Result<Var> + Sync,
{
    param_check(store, &f, step, None)
}

#[derive(Debug, Clone)]
pub struct SuiteConfig {
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
    /// Restrict the run to these entries of [`SUITE_OPS`]; `None` runs all.
    pub ops: Option<Vec<String>>,
    /// Corrupt one backward rule to confirm the suite notices.
    pub fault: Option<OpKind>,
    /// Network used by the layer checks; `bands`, grouping, widths and
    /// depths are taken from here.
    pub model: ModelConfig,
    pub spatial: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            step: DEFAULT_STEP,
            tolerance: DEFAULT_TOLERANCE,
            seed: 11,
            ops: None,
            fault: None,
            model: ModelConfig::tiny(),
            spatial: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub op: &'static str,
    /// What was differentiated: `input`, a named operand, or `parameters`.
    pub target: String,
    /// Worst coordinate, e.g. `input[17]` or `sgcam.trunk0.weight[3]`.
    pub location: String,
    pub report: FdReport,
    pub passed: bool,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<16} {:<12} max_rel_error={:.3e} at {} (analytic {:.6e}, numeric {:.6e}, {} coords)",
            if self.passed { "PASS" } else { "FAIL" },
            self.op,
            self.target,
            self.report.max_rel_error,
            self.location,
            self.report.analytic,
            self.report.numeric,
            self.report.coordinates,
        )
    }
}

struct Suite<'c> {
    cfg: &'c SuiteConfig,
    rng: ChaCha8Rng,
    out: Vec<CheckOutcome>,
}

impl Suite<'_> {
    fn tensor(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        Tensor::from_fn(shape, |_| self.rng.random_range(lo..hi))
    }

    /// Values bounded away from zero, so ReLU kinks are not straddled.
    fn away_from_zero(&mut self, shape: &[usize]) -> Tensor {
        Tensor::from_fn(shape, |_| {
            let mag = self.rng.random_range(0.05..1.0);
            if self.rng.random_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
    }

    fn record(&mut self, op: &'static str, target: &str, location: String, report: FdReport) {
        let passed = report.max_rel_error <= self.cfg.tolerance;
        self.out.push(CheckOutcome {
            op,
            target: target.to_string(),
            location,
            report,
            passed,
        });
    }

    /// Checks `f` with respect to `x`, reading the output through a fixed
    /// random weighting so every output coordinate contributes an O(1)
    /// gradient.
    fn input<F>(&mut self, op: &'static str, target: &str, store: Option<&ParamStore>, x: &Tensor, f: F) -> Result<()>
    where
        F: Fn(&mut Tape<'_>, Var) -> Result<Var> + Sync,
    {
        let weights = self.readout_weights(store, x, &f)?;
        let g = |t: &mut Tape<'_>, v: Var| -> Result<Var> {
            let y = f(t, v)?;
            readout(t, y, &weights)
        };
        let report = input_check(store, &g, x, self.cfg.step, self.cfg.fault)?;
        self.record(op, target, format!("{target}[{}]", report.worst_index), report);
        Ok(())
    }

    fn readout_weights<F>(&mut self, store: Option<&ParamStore>, x: &Tensor, f: &F) -> Result<Option<Tensor>>
    where
        F: Fn(&mut Tape<'_>, Var) -> Result<Var>,
    {
        let mut t = tape_for(store, None);
        let v = t.constant(x);
        let y = f(&mut t, v)?;
        let shape = t.shape_of(y).to_vec();
        if shape.iter().product::<usize>() == 1 {
            return Ok(None);
        }
        Ok(Some(self.tensor(&shape, -1.0, 1.0)))
    }

    fn params<F>(&mut self, op: &'static str, store: &ParamStore, f: F) -> Result<()>
    where
        F: Fn(&mut Tape<'_>) -> Result<Var> + Sync,
    {
        let weights = {
            let mut t = Tape::with_params(store);
            let y = f(&mut t)?;
            let shape = t.shape_of(y).to_vec();
            (shape.iter().product::<usize>() != 1).then(|| self.tensor(&shape, -1.0, 1.0))
        };
        let g = |t: &mut Tape<'_>| -> Result<Var> {
            let y = f(t)?;
            readout(t, y, &weights)
        };
        let r = param_check(store, &g, self.cfg.step, self.cfg.fault)?;
        let location = format!("{}[{}]", r.parameter, r.report.worst_index);
        self.record(op, "parameters", location, r.report);
        Ok(())
    }
}

fn readout(t: &mut Tape<'_>, y: Var, weights: &Option<Tensor>) -> Result<Var> {
    match weights {
        None => Ok(y),
        Some(w) => {
            let w = t.constant(w);
            let p = t.mul(&y, &w)?;
            Ok(t.sum(p))
        }
    }
}

fn seeded_init(store: &mut ParamStore, seed: u64) -> Init<'_> {
    Init {
        store,
        rng: ChaCha8Rng::seed_from_u64(seed),
    }
}

/// Runs the selected checks and returns one outcome per check, passing or
/// not. Errors only on invalid configuration or a failed forward pass.
pub fn run_suite(cfg: &SuiteConfig) -> Result<Vec<CheckOutcome>> {
    if let Some(ops) = &cfg.ops {
        for op in ops {
            if !SUITE_OPS.contains(&op.as_str()) {
                return Err(Error::invalid(
                    "ops",
                    format!("unknown operation `{op}`; expected one of {}", SUITE_OPS.join(", ")),
                ));
            }
        }
    }
    cfg.model.validate()?;
    let selected = |op: &str| cfg.ops.as_ref().is_none_or(|ops| ops.iter().any(|o| o == op));
    let mut s = Suite {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        out: Vec::new(),
    };
    let hw = cfg.spatial;

    if selected("conv2d") {
        let x = s.tensor(&[2, 3, 8, 8], -1.0, 1.0);
        let w = s.tensor(&[4, 3, 3, 3], -0.5, 0.5);
        let b = s.tensor(&[4], -0.5, 0.5);
        s.input("conv2d", "input", None, &x, |t, v| {
            let (w, b) = (t.constant(&w), t.constant(&b));
            t.conv2d(&v, &w, &b, 1, 1)
        })?;
        s.input("conv2d", "input/stride2", None, &x, |t, v| {
            let (w, b) = (t.constant(&w), t.constant(&b));
            t.conv2d(&v, &w, &b, 1, 2)
        })?;
        s.input("conv2d", "weight", None, &w, |t, v| {
            let (x, b) = (t.constant(&x), t.constant(&b));
            t.conv2d(&x, &v, &b, 1, 1)
        })?;
        s.input("conv2d", "bias", None, &b, |t, v| {
            let (x, w) = (t.constant(&x), t.constant(&w));
            t.conv2d(&x, &w, &v, 0, 1)
        })?;
    }
    if selected("relu") {
        let x = s.away_from_zero(&[2, 3, 4, 4]);
        s.input("relu", "input", None, &x, |t, v| Ok(t.relu(&v)))?;
    }
    if selected("sigmoid") {
        let x = s.tensor(&[2, 3, 4, 4], -4.0, 4.0);
        s.input("sigmoid", "input", None, &x, |t, v| Ok(t.sigmoid(&v)))?;
    }
    for (op, pool) in [("pool_spatial", true), ("pool_channel", false)] {
        if !selected(op) {
            continue;
        }
        let x = s.tensor(&[2, 3, 5, 4], -1.0, 1.0);
        for (target, mode) in [("input/max", PoolMode::Max), ("input/avg", PoolMode::Avg)] {
            s.input(op, target, None, &x, move |t, v| {
                if pool {
                    t.pool_spatial(&v, mode)
                } else {
                    t.pool_channel(&v, mode)
                }
            })?;
        }
    }
    if selected("concat_channels") {
        let a = s.tensor(&[2, 2, 3, 3], -1.0, 1.0);
        let b = s.tensor(&[2, 3, 3, 3], -1.0, 1.0);
        s.input("concat_channels", "left", None, &a, |t, v| {
            let b = t.constant(&b);
            t.concat_channels(&v, &b)
        })?;
        s.input("concat_channels", "right", None, &b, |t, v| {
            let a = t.constant(&a);
            t.concat_channels(&a, &v)
        })?;
    }
    if selected("slice_channels") {
        let x = s.tensor(&[2, 5, 3, 3], -1.0, 1.0);
        s.input("slice_channels", "input", None, &x, |t, v| t.slice_channels(&v, 1, 3))?;
    }
    for op in ["add", "mul"] {
        if !selected(op) {
            continue;
        }
        let full = s.tensor(&[2, 3, 4, 4], -1.0, 1.0);
        let per_channel = s.tensor(&[2, 3, 1, 1], -1.0, 1.0);
        let per_pixel = s.tensor(&[2, 1, 4, 4], -1.0, 1.0);
        let apply = move |t: &mut Tape<'_>, a: Var, b: Var| if op == "add" { t.add(&a, &b) } else { t.mul(&a, &b) };
        s.input(op, "left", None, &full, |t, v| {
            let m = t.constant(&per_channel);
            apply(t, v, m)
        })?;
        s.input(op, "channel-mask", None, &per_channel, |t, v| {
            let x = t.constant(&full);
            apply(t, x, v)
        })?;
        s.input(op, "pixel-mask", None, &per_pixel, |t, v| {
            let x = t.constant(&full);
            apply(t, v, x)
        })?;
    }
    if selected("mse_loss") {
        let pred = s.tensor(&[2, 3, 4, 4], -1.0, 1.0);
        let target = s.tensor(&[2, 3, 4, 4], -1.0, 1.0);
        s.input("mse_loss", "pred", None, &pred, |t, v| {
            let y = t.constant(&target);
            t.mse_loss(v, y, 2)
        })?;
    }

    let m = &cfg.model;
    if selected("sgcam") {
        let mut store = ParamStore::new();
        let layer = Sgcam::new(
            &mut seeded_init(&mut store, cfg.seed),
            "sgcam",
            m.group_size,
            m.trunk_channels,
            m.group_channels,
            m.reduction,
            m.trunk_activation,
        )?;
        let g = s.tensor(&[1, m.group_size, hw, hw], 0.0, 1.0);
        let next = s.tensor(&[1, m.group_size, hw, hw], 0.0, 1.0);
        s.input("sgcam", "group", Some(&store), &g, |t, v| {
            let n = t.constant(&next);
            layer.forward(t, &v, &n)
        })?;
        s.input("sgcam", "next-group", Some(&store), &next, |t, v| {
            let g = t.constant(&g);
            layer.forward(t, &g, &v)
        })?;
        s.params("sgcam", &store, |t| {
            let (g, n) = (t.constant(&g), t.constant(&next));
            layer.forward(t, &g, &n)
        })?;
    }
    if selected("ssab") {
        let mut store = ParamStore::new();
        let layer = Ssab::new(
            &mut seeded_init(&mut store, cfg.seed),
            "ssab",
            m.group_channels,
            m.reduction,
            m.spatial_kernel,
            m.ssab_trunk,
        )?;
        let x = s.tensor(&[1, m.group_channels, hw, hw], -1.0, 1.0);
        s.input("ssab", "input", Some(&store), &x, |t, v| layer.forward(t, &v))?;
        s.params("ssab", &store, |t| {
            let v = t.constant(&x);
            layer.forward(t, &v)
        })?;
    }
    if selected("ssan") {
        let depth = m.n_ssab.max(1);
        let mut store = ParamStore::new();
        let layer = Ssan::new(
            &mut seeded_init(&mut store, cfg.seed),
            "ssan",
            depth,
            m.group_channels,
            m.reduction,
            m.spatial_kernel,
            m.ssab_trunk,
        )?;
        let x = s.tensor(&[1, m.group_channels, hw, hw], -1.0, 1.0);
        s.input("ssan", "input", Some(&store), &x, |t, v| layer.forward(t, &v))?;
        s.params("ssan", &store, |t| {
            let v = t.constant(&x);
            layer.forward(t, &v)
        })?;
    }
    if selected("sscan") {
        let mut model = SscanModel::new(*m)?;
        // The zero-initialized reconstruction would hide every upstream
        // gradient; give it random weights first.
        let rec = model.reconstruct.weight;
        let w = s.tensor(model.params().get(rec).tensor.shape(), -0.2, 0.2);
        model.params_mut().tensor_mut(rec).data_mut().copy_from_slice(w.data());
        let x = s.tensor(&[1, m.bands, hw, hw], 0.0, 1.0);
        let target = s.tensor(&[1, m.bands, hw, hw], 0.0, 1.0);
        let model = &model;
        let loss = |t: &mut Tape<'_>, v: Var| -> Result<Var> {
            let y = model.forward(t, &v)?;
            let c = t.constant(&target);
            t.mse_loss(y, c, 1)
        };
        s.input("sscan", "input", Some(model.params()), &x, loss)?;
        s.params("sscan", model.params(), |t| {
            let v = t.constant(&x);
            loss(t, v)
        })?;
    }
    Ok(s.out)
}
