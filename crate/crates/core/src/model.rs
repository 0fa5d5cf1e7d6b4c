//! Softmax classifier with analytic gradients and per-class logit re-weighting.
//!
//! The classifier is either linear (`z = W x + b`) or has one rectified hidden
//! layer (`z = W relu(V x + c) + b`). Gradients are taken with respect to the
//! batch-mean cross-entropy. Before the chain rule, each per-sample logit
//! gradient `sigma_j - 1[y = j]` can be scaled by a per-class coefficient: the
//! positive coefficient when `y = j`, the negative one otherwise.

use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelMode {
    Linear,
    Mlp,
}

/// Fully connected layer, `rows x cols` weights stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.weights[r * self.cols..(r + 1) * self.cols]
    }

    fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.weights[r * self.cols..(r + 1) * self.cols]
    }

    fn apply(&self, input: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            *o = self.bias[r] + dot(self.row(r), input);
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Model parameters: optional hidden layer plus the classifier whose row `j`
/// is the weight vector of class `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub hidden: Option<Dense>,
    pub classifier: Dense,
}

impl ModelParams {
    pub fn num_classes(&self) -> usize {
        self.classifier.rows
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.as_ref().map_or(self.classifier.cols, |h| h.cols)
    }

    pub fn mode(&self) -> ModelMode {
        if self.hidden.is_some() {
            ModelMode::Mlp
        } else {
            ModelMode::Linear
        }
    }

    /// All parameter buffers in a fixed order.
    pub fn buffers(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(4);
        if let Some(h) = &self.hidden {
            out.push(&h.weights);
            out.push(&h.bias);
        }
        out.push(&self.classifier.weights);
        out.push(&self.classifier.bias);
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(4);
        if let Some(h) = &mut self.hidden {
            out.push(&mut h.weights);
            out.push(&mut h.bias);
        }
        out.push(&mut self.classifier.weights);
        out.push(&mut self.classifier.bias);
        out
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.buffers().concat()
    }

    pub fn same_shape(&self, other: &ModelParams) -> bool {
        let dims = |p: &ModelParams| {
            (
                p.hidden.as_ref().map(|h| (h.rows, h.cols)),
                p.classifier.rows,
                p.classifier.cols,
            )
        };
        dims(self) == dims(other)
    }

    pub fn is_finite(&self) -> bool {
        self.buffers().iter().all(|b| b.iter().all(|x| x.is_finite()))
    }

    fn zeros_like(&self) -> Self {
        Self {
            hidden: self.hidden.as_ref().map(|h| Dense::zeros(h.rows, h.cols)),
            classifier: Dense::zeros(self.classifier.rows, self.classifier.cols),
        }
    }
}

fn init_dense(rows: usize, cols: usize, rng: &mut impl Rng) -> Dense {
    let scale = 1.0 / (cols as f64).sqrt();
    Dense {
        rows,
        cols,
        weights: (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect(),
        bias: vec![0.0; rows],
    }
}

/// Uniform `+-1/sqrt(fan_in)` weights, zero biases. `hidden_dim` is ignored
/// in linear mode.
pub fn init_model(
    input_dim: usize,
    hidden_dim: usize,
    num_classes: usize,
    mode: ModelMode,
    seed: u64,
) -> Result<ModelParams> {
    if input_dim == 0 || num_classes == 0 || (mode == ModelMode::Mlp && hidden_dim == 0) {
        return Err(Error::invalid("dimensions", "all dimensions must be >= 1"));
    }
    let mut rng = stream_rng(seed, 0, 0, Stream::ModelInit);
    Ok(match mode {
        ModelMode::Linear => ModelParams {
            hidden: None,
            classifier: init_dense(num_classes, input_dim, &mut rng),
        },
        ModelMode::Mlp => {
            let hidden = init_dense(hidden_dim, input_dim, &mut rng);
            ModelParams {
                hidden: Some(hidden),
                classifier: init_dense(num_classes, hidden_dim, &mut rng),
            }
        }
    })
}

/// Cached activations of one forward pass. All matrices are `batch x width`
/// row-major.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub batch: usize,
    pub num_classes: usize,
    pub hidden_pre: Option<Vec<f64>>,
    pub hidden_act: Option<Vec<f64>>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl ForwardTrace {
    pub fn logits_of(&self, i: usize) -> &[f64] {
        &self.logits[i * self.num_classes..(i + 1) * self.num_classes]
    }

    pub fn probs_of(&self, i: usize) -> &[f64] {
        &self.probs[i * self.num_classes..(i + 1) * self.num_classes]
    }

    /// Argmax of the logits per sample, ties to the lowest class index.
    pub fn predictions(&self) -> Vec<usize> {
        (0..self.batch)
            .map(|i| {
                let z = self.logits_of(i);
                let mut best = 0;
                for (j, &v) in z.iter().enumerate() {
                    if v > z[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - max).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

pub fn forward(params: &ModelParams, inputs: &[&[f64]]) -> Result<ForwardTrace> {
    let batch = inputs.len();
    let dim = params.input_dim();
    if let Some(bad) = inputs.iter().position(|x| x.len() != dim) {
        return Err(Error::ShapeMismatch(format!(
            "input {bad} has {} features, model expects {dim}",
            inputs[bad].len()
        )));
    }
    let m = params.num_classes();
    let (hidden_pre, hidden_act) = match &params.hidden {
        Some(h) => {
            let mut pre = vec![0.0; batch * h.rows];
            for (x, row) in inputs.iter().zip(pre.chunks_mut(h.rows)) {
                h.apply(x, row);
            }
            let act: Vec<f64> = pre.iter().map(|&a| a.max(0.0)).collect();
            (Some(pre), Some(act))
        }
        None => (None, None),
    };
    let mut logits = vec![0.0; batch * m];
    match &hidden_act {
        Some(act) => {
            let width = params.classifier.cols;
            for (h, z) in act.chunks(width).zip(logits.chunks_mut(m)) {
                params.classifier.apply(h, z);
            }
        }
        None => {
            for (x, z) in inputs.iter().zip(logits.chunks_mut(m)) {
                params.classifier.apply(x, z);
            }
        }
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFinite("logits"));
    }
    let mut probs = vec![0.0; batch * m];
    for (z, p) in logits.chunks(m).zip(probs.chunks_mut(m)) {
        softmax(z, p);
    }
    Ok(ForwardTrace {
        batch,
        num_classes: m,
        hidden_pre,
        hidden_act,
        logits,
        probs,
    })
}

/// Batch-mean cross-entropy, computed from the logits via log-sum-exp.
pub fn ce_loss(trace: &ForwardTrace, labels: &[usize]) -> f64 {
    if trace.batch == 0 {
        return 0.0;
    }
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let z = trace.logits_of(i);
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            lse - z[y]
        })
        .sum();
    total / trace.batch as f64
}

/// Per-class positive and negative logit-gradient magnitudes of one batch.
///
/// `pos[j]` sums `1 - sigma_j` over samples labelled `j`; `neg[j]` sums
/// `sigma_j` over samples with any other label.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitGradientSplit {
    pub pos: Vec<f64>,
    pub neg: Vec<f64>,
}

pub fn logit_gradient_split(trace: &ForwardTrace, labels: &[usize]) -> LogitGradientSplit {
    let m = trace.num_classes;
    let mut pos = vec![0.0; m];
    let mut neg = vec![0.0; m];
    for (i, &y) in labels.iter().enumerate() {
        for (j, &p) in trace.probs_of(i).iter().enumerate() {
            if j == y {
                pos[j] += 1.0 - p;
            } else {
                neg[j] += p;
            }
        }
    }
    LogitGradientSplit { pos, neg }
}

/// Scale applied to class `j`'s positive and negative logit gradients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub pos: f64,
    pub neg: f64,
}

impl Coefficients {
    pub const NEUTRAL: Coefficients = Coefficients { pos: 1.0, neg: 1.0 };
}

/// Parameter-shaped gradient of the re-weighted batch-mean loss.
pub fn reweighted_gradients(
    params: &ModelParams,
    trace: &ForwardTrace,
    inputs: &[&[f64]],
    labels: &[usize],
    coeffs: &[Coefficients],
) -> Result<ModelParams> {
    let m = params.num_classes();
    if coeffs.len() != m || labels.len() != trace.batch || inputs.len() != trace.batch {
        return Err(Error::ShapeMismatch(format!(
            "{} coefficients / {} labels / {} inputs for {m} classes and batch {}",
            coeffs.len(),
            labels.len(),
            inputs.len(),
            trace.batch
        )));
    }
    if coeffs
        .iter()
        .any(|c| !(c.pos >= 0.0 && c.neg >= 0.0 && c.pos.is_finite() && c.neg.is_finite()))
    {
        return Err(Error::invalid("coefficients", "must be finite and >= 0"));
    }
    let mut grad = params.zeros_like();
    if trace.batch == 0 {
        return Ok(grad);
    }
    let inv_batch = 1.0 / trace.batch as f64;

    let mut dz = vec![0.0; trace.batch * m];
    for (i, &y) in labels.iter().enumerate() {
        let probs = trace.probs_of(i);
        let row = &mut dz[i * m..(i + 1) * m];
        for j in 0..m {
            row[j] = if j == y {
                coeffs[j].pos * (probs[j] - 1.0)
            } else {
                coeffs[j].neg * probs[j]
            } * inv_batch;
        }
    }

    let width = params.classifier.cols;
    for i in 0..trace.batch {
        let feat: &[f64] = match &trace.hidden_act {
            Some(act) => &act[i * width..(i + 1) * width],
            None => inputs[i],
        };
        for j in 0..m {
            let g = dz[i * m + j];
            if g == 0.0 {
                continue;
            }
            grad.classifier.bias[j] += g;
            grad.classifier
                .row_mut(j)
                .iter_mut()
                .zip(feat)
                .for_each(|(w, x)| *w += g * x);
        }
    }

    if let (Some(hidden), Some(pre), Some(hgrad)) =
        (&params.hidden, &trace.hidden_pre, grad.hidden.as_mut())
    {
        let mut da = vec![0.0; hidden.rows];
        for i in 0..trace.batch {
            da.iter_mut().for_each(|v| *v = 0.0);
            for j in 0..m {
                let g = dz[i * m + j];
                if g == 0.0 {
                    continue;
                }
                da.iter_mut()
                    .zip(params.classifier.row(j))
                    .for_each(|(d, w)| *d += g * w);
            }
            let a = &pre[i * hidden.rows..(i + 1) * hidden.rows];
            for (r, d) in da.iter().enumerate() {
                if a[r] <= 0.0 || *d == 0.0 {
                    continue;
                }
                hgrad.bias[r] += d;
                hgrad
                    .row_mut(r)
                    .iter_mut()
                    .zip(inputs[i])
                    .for_each(|(w, x)| *w += d * x);
            }
        }
    }
    Ok(grad)
}

/// One plain SGD step on the re-weighted loss.
pub fn apply_reweighted_backprop(
    params: &mut ModelParams,
    trace: &ForwardTrace,
    inputs: &[&[f64]],
    labels: &[usize],
    coeffs: &[Coefficients],
    lr: f64,
) -> Result<()> {
    let grad = reweighted_gradients(params, trace, inputs, labels, coeffs)?;
    for (p, g) in params.buffers_mut().into_iter().zip(grad.buffers()) {
        p.iter_mut().zip(g).for_each(|(p, g)| *p -= lr * g);
    }
    if !params.is_finite() {
        return Err(Error::NonFinite("parameters after update"));
    }
    Ok(())
}

/// L2 norm of each classifier row (biases excluded).
pub fn classifier_weight_norms(params: &ModelParams) -> Vec<f64> {
    let c = &params.classifier;
    (0..c.rows).map(|j| dot(c.row(j), c.row(j)).sqrt()).collect()
}

/// Rescale classifier row `j` to `w_j / |w_j|^tau`. Zero rows and biases are
/// left alone.
pub fn tau_normalize(params: &ModelParams, tau: f64) -> Result<ModelParams> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::invalid("tau", format!("must lie in [0, 1], got {tau}")));
    }
    let mut out = params.clone();
    for (j, norm) in classifier_weight_norms(params).into_iter().enumerate() {
        if norm > 0.0 {
            let scale = norm.powf(-tau);
            out.classifier.row_mut(j).iter_mut().for_each(|w| *w *= scale);
        }
    }
    Ok(out)
}

/// Text checkpoint: a shape header per layer followed by row-major values.
pub fn write_checkpoint<W: Write>(mut out: W, params: &ModelParams) -> std::io::Result<()> {
    writeln!(out, "fedgrab-params 1")?;
    let layers: Vec<(&str, &Dense)> = params
        .hidden
        .iter()
        .map(|h| ("hidden", h))
        .chain(std::iter::once(("classifier", &params.classifier)))
        .collect();
    for (name, layer) in layers {
        writeln!(out, "{name} {} {}", layer.rows, layer.cols)?;
        for r in 0..layer.rows {
            let row: Vec<String> = layer.row(r).iter().map(|v| format!("{v:?}")).collect();
            writeln!(out, "{}", row.join(" "))?;
        }
        let bias: Vec<String> = layer.bias.iter().map(|v| format!("{v:?}")).collect();
        writeln!(out, "{}", bias.join(" "))?;
    }
    Ok(())
}

pub fn read_checkpoint<R: BufRead>(input: R) -> Result<ModelParams> {
    let bad = |what: &str| Error::invalid("checkpoint", what.to_string());
    let mut lines = input.lines();
    let mut next = || -> Result<String> {
        lines
            .next()
            .ok_or_else(|| bad("unexpected end of file"))?
            .map_err(|e| Error::io("<checkpoint>", e))
    };
    if next()?.trim() != "fedgrab-params 1" {
        return Err(bad("unrecognized header"));
    }
    let parse_row = |line: String, n: usize| -> Result<Vec<f64>> {
        let vals = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| bad("bad number")))
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != n {
            return Err(bad("row length does not match header"));
        }
        Ok(vals)
    };
    let mut layers = Vec::new();
    for _ in 0..2 {
        let header = match next() {
            Ok(h) => h,
            Err(_) if !layers.is_empty() => break,
            Err(e) => return Err(e),
        };
        let parts: Vec<&str> = header.split_whitespace().collect();
        let [name, rows, cols] = parts[..] else {
            return Err(bad("bad layer header"));
        };
        let rows: usize = rows.parse().map_err(|_| bad("bad row count"))?;
        let cols: usize = cols.parse().map_err(|_| bad("bad column count"))?;
        let mut weights = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            weights.extend(parse_row(next()?, cols)?);
        }
        let bias = parse_row(next()?, rows)?;
        let layer = Dense { rows, cols, weights, bias };
        let last = name == "classifier";
        layers.push((name.to_string(), layer));
        if last {
            break;
        }
    }
    match layers.len() {
        1 if layers[0].0 == "classifier" => Ok(ModelParams {
            hidden: None,
            classifier: layers.pop().unwrap().1,
        }),
        2 if layers[0].0 == "hidden" && layers[1].0 == "classifier" => {
            let classifier = layers.pop().unwrap().1;
            let hidden = layers.pop().unwrap().1;
            if classifier.cols != hidden.rows {
                return Err(bad("classifier width does not match hidden layer"));
            }
            Ok(ModelParams {
                hidden: Some(hidden),
                classifier,
            })
        }
        _ => Err(bad("expected [hidden] classifier layers")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(weights: Vec<f64>, rows: usize, cols: usize) -> ModelParams {
        ModelParams {
            hidden: None,
            classifier: Dense {
                rows,
                cols,
                weights,
                bias: vec![0.0; rows],
            },
        }
    }

    fn trace_from_logits(logits: Vec<f64>, m: usize) -> ForwardTrace {
        let batch = logits.len() / m;
        let mut probs = vec![0.0; logits.len()];
        for (z, p) in logits.chunks(m).zip(probs.chunks_mut(m)) {
            softmax(z, p);
        }
        ForwardTrace {
            batch,
            num_classes: m,
            hidden_pre: None,
            hidden_act: None,
            logits,
            probs,
        }
    }

    #[test]
    fn init_is_deterministic_with_zero_bias() {
        let a = init_model(4, 6, 3, ModelMode::Mlp, 1).unwrap();
        let b = init_model(4, 6, 3, ModelMode::Mlp, 1).unwrap();
        assert_eq!(a, b);
        assert!(a.classifier.bias.iter().all(|&v| v == 0.0));
        assert!(a.hidden.as_ref().unwrap().bias.iter().all(|&v| v == 0.0));
        let bound = 1.0 / 6f64.sqrt();
        assert!(a.classifier.weights.iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn linear_mode_shape() {
        let p = init_model(5, 99, 3, ModelMode::Linear, 2).unwrap();
        assert!(p.hidden.is_none());
        assert_eq!((p.classifier.rows, p.classifier.cols), (3, 5));
    }

    #[test]
    fn softmax_closed_forms() {
        let mut p = [0.0; 4];
        softmax(&[0.3; 4], &mut p);
        p.iter().for_each(|&v| assert!((v - 0.25).abs() < 1e-15));
        let mut q = [0.0; 2];
        softmax(&[2f64.ln(), 0.0], &mut q);
        assert!((q[0] - 2.0 / 3.0).abs() < 1e-15 && (q[1] - 1.0 / 3.0).abs() < 1e-15);
        let mut shifted = [0.0; 2];
        softmax(&[2f64.ln() + 700.0, 700.0], &mut shifted);
        assert!((shifted[0] - q[0]).abs() < 1e-12);
    }

    #[test]
    fn forward_rejects_wrong_width_and_overflow() {
        let p = linear(vec![1.0, 0.0, 0.0, 1.0], 2, 2);
        assert!(matches!(forward(&p, &[&[1.0][..]]), Err(Error::ShapeMismatch(_))));
        let huge = linear(vec![f64::MAX, f64::MAX, 0.0, 0.0], 2, 2);
        assert!(matches!(
            forward(&huge, &[&[2.0, 2.0][..]]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn ce_loss_cases() {
        let t = trace_from_logits(vec![0.0, 0.0, 0.0, 0.0], 2);
        assert!((ce_loss(&t, &[0, 1]) - 2f64.ln()).abs() < 1e-15);
        let confident = trace_from_logits(vec![800.0, 0.0], 2);
        assert_eq!(ce_loss(&confident, &[0]), 0.0);
    }

    #[test]
    fn split_single_sample() {
        let t = trace_from_logits(vec![0.0, 0.0], 2);
        let s = logit_gradient_split(&t, &[0]);
        assert_eq!(s.pos, vec![0.5, 0.0]);
        assert_eq!(s.neg, vec![0.0, 0.5]);
    }

    #[test]
    fn split_confident_and_absent_class() {
        let t = trace_from_logits(vec![60.0, 0.0, 0.0, 0.0, 60.0, 0.0], 3);
        let s = logit_gradient_split(&t, &[0, 1]);
        assert!(s.pos.iter().chain(&s.neg).all(|&v| v < 1e-20));
        assert_eq!(s.pos[2], 0.0);
    }

    #[test]
    fn zero_coefficients_leave_params_unchanged() {
        let mut p = init_model(3, 4, 3, ModelMode::Mlp, 3).unwrap();
        let before = p.clone();
        let x = [[0.5, -1.0, 2.0], [1.0, 1.0, 1.0]];
        let inputs: Vec<&[f64]> = x.iter().map(|r| &r[..]).collect();
        let t = forward(&p, &inputs).unwrap();
        let zero = vec![Coefficients { pos: 0.0, neg: 0.0 }; 3];
        apply_reweighted_backprop(&mut p, &t, &inputs, &[0, 2], &zero, 0.1).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn negative_coefficients_rejected() {
        let p = init_model(2, 1, 2, ModelMode::Linear, 3).unwrap();
        let t = forward(&p, &[&[1.0, 1.0][..]]).unwrap();
        let bad = vec![Coefficients { pos: -1.0, neg: 1.0 }; 2];
        assert!(reweighted_gradients(&p, &t, &[&[1.0, 1.0][..]], &[0], &bad).is_err());
    }

    #[test]
    fn neutral_step_reduces_loss() {
        let mut p = init_model(3, 5, 3, ModelMode::Mlp, 8).unwrap();
        let x = [[1.0, 0.2, -0.3], [-0.5, 1.0, 0.1], [0.0, -0.4, 1.2], [0.7, 0.7, 0.0]];
        let labels = [0, 1, 2, 0];
        let inputs: Vec<&[f64]> = x.iter().map(|r| &r[..]).collect();
        let t = forward(&p, &inputs).unwrap();
        let before = ce_loss(&t, &labels);
        apply_reweighted_backprop(&mut p, &t, &inputs, &labels, &[Coefficients::NEUTRAL; 3], 0.05)
            .unwrap();
        let after = ce_loss(&forward(&p, &inputs).unwrap(), &labels);
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn weight_norm_cases() {
        let zero = linear(vec![0.0; 6], 2, 3);
        assert_eq!(classifier_weight_norms(&zero), vec![0.0, 0.0]);
        let unit = linear(vec![1.0, 0.0, 0.0, 3.0, 4.0, 0.0], 2, 3);
        assert_eq!(classifier_weight_norms(&unit), vec![1.0, 5.0]);
        let doubled = linear(unit.classifier.weights.iter().map(|w| 2.0 * w).collect(), 2, 3);
        assert_eq!(classifier_weight_norms(&doubled), vec![2.0, 10.0]);
    }

    #[test]
    fn tau_normalize_cases() {
        let mut p = linear(vec![3.0, 4.0, 0.0, 0.0, 1.0, 1.0], 3, 2);
        p.classifier.bias = vec![0.5, -0.5, 0.1];
        assert_eq!(tau_normalize(&p, 0.0).unwrap(), p);
        let unit = tau_normalize(&p, 1.0).unwrap();
        let norms = classifier_weight_norms(&unit);
        assert!((norms[0] - 1.0).abs() < 1e-15 && (norms[2] - 1.0).abs() < 1e-15);
        assert_eq!(norms[1], 0.0);
        assert_eq!(unit.classifier.bias, p.classifier.bias);
        let half = classifier_weight_norms(&tau_normalize(&p, 0.5).unwrap());
        assert!(half[0] > half[2] && half[2] > half[1]);
        assert!(tau_normalize(&p, 1.5).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        for mode in [ModelMode::Linear, ModelMode::Mlp] {
            let p = init_model(3, 4, 2, mode, 12).unwrap();
            let mut buf = Vec::new();
            write_checkpoint(&mut buf, &p).unwrap();
            assert_eq!(read_checkpoint(buf.as_slice()).unwrap(), p);
        }
        assert!(read_checkpoint("garbage\n".as_bytes()).is_err());
    }
}
