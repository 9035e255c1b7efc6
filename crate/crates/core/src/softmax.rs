//! Multinomial logistic regression trained with L-BFGS.
//!
//! Weights are stored class-major: class `c` owns `features + 1` values, the
//! last being its bias. The bias is not regularized.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, FormatError, Result};
use crate::exec::ChunkExecutor;
use crate::format::ModelHeader;
use crate::matrix::{ChunkPlan, MatrixView};
use crate::optim::{lbfgs_minimize_observed, IterationRecord, LbfgsOptions, LbfgsReport, Objective};
use crate::vecops::{add_assign, axpy, dot};

pub const DEFAULT_LAMBDA: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxModel {
    pub weights: Vec<f64>,
    pub num_classes: usize,
    pub features: usize,
    pub lambda: f64,
}

impl SoftmaxModel {
    pub fn zeros(num_classes: usize, features: usize, lambda: f64) -> Self {
        Self { weights: vec![0.0; num_classes * (features + 1)], num_classes, features, lambda }
    }

    pub fn from_weights(weights: Vec<f64>, num_classes: usize, features: usize, lambda: f64) -> Result<Self> {
        if weights.len() != num_classes * (features + 1) {
            return Err(Error::Shape("weights length is not num_classes * (features + 1)"));
        }
        check_finite(&weights)?;
        Ok(Self { weights, num_classes, features, lambda })
    }

    pub fn class_weights(&self, class: usize) -> &[f64] {
        let stride = self.features + 1;
        &self.weights[class * stride..class * stride + self.features]
    }

    pub fn bias(&self, class: usize) -> f64 {
        self.weights[class * (self.features + 1) + self.features]
    }

    /// Argmax class score of one row; ties go to the smaller class index.
    pub fn predict_row(&self, x: &[f64]) -> usize {
        let stride = self.features + 1;
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (c, w) in self.weights.chunks_exact(stride).enumerate() {
            let score = dot(&w[..self.features], x) + w[self.features];
            if score > best_score || c == 0 {
                best = c;
                best_score = score;
            }
        }
        best
    }

    pub fn header(&self) -> ModelHeader {
        ModelHeader {
            num_classes: self.num_classes as u32,
            features: self.features as u64,
            lambda: self.lambda,
        }
    }

    /// `M3MD` serialization.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.header().encode_with(&self.weights)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, weights) = ModelHeader::decode_with(bytes)?;
        let features = usize::try_from(h.features).map_err(|_| FormatError::TruncatedOrCorrupt)?;
        Self::from_weights(weights, h.num_classes as usize, features, h.lambda)
    }
}

fn check_finite(weights: &[f64]) -> Result<()> {
    match weights.iter().position(|w| !w.is_finite()) {
        Some(index) => Err(Error::NonFiniteWeights { index }),
        None => Ok(()),
    }
}

pub fn validate_labels(labels: &[u8], num_classes: usize) -> Result<()> {
    match labels.iter().position(|&l| usize::from(l) >= num_classes) {
        Some(row) => Err(Error::LabelOutOfRange { row, label: labels[row], num_classes }),
        None => Ok(()),
    }
}

/// Relabels for a one-vs-rest problem: class 1 is `positive`, everything
/// else is class 0.
pub fn one_vs_rest(labels: &[u8], positive: u8) -> Vec<u8> {
    labels.iter().map(|&l| u8::from(l == positive)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogregConfig {
    /// L2 strength on non-bias weights.
    pub lambda: f64,
    /// Multiplier applied to every feature before scoring; 1.0 leaves data raw.
    pub feature_scale: f64,
    pub plan: ChunkPlan,
}

impl Default for LogregConfig {
    fn default() -> Self {
        Self { lambda: DEFAULT_LAMBDA, feature_scale: 1.0, plan: ChunkPlan::default() }
    }
}

struct Problem<'a> {
    data: MatrixView<'a>,
    labels: &'a [u8],
    num_classes: usize,
    config: LogregConfig,
}

impl Problem<'_> {
    fn check(&self, weights: &[f64]) -> Result<()> {
        if self.labels.len() != self.data.rows() {
            return Err(Error::Shape("label count differs from row count"));
        }
        if weights.len() != self.num_classes * (self.data.cols() + 1) {
            return Err(Error::Shape("weights length is not num_classes * (cols + 1)"));
        }
        if self.num_classes == 0 {
            return Err(Error::InvalidOption("num_classes must be at least 1"));
        }
        validate_labels(self.labels, self.num_classes)
    }

    /// Unnormalized `(sum of -log p_y, sum of gradients)` over one chunk.
    fn chunk_partial(&self, weights: &[f64], index: usize) -> (f64, Vec<f64>) {
        let cols = self.data.cols();
        let stride = cols + 1;
        let scale = self.config.feature_scale;
        let (offset, block) = self.data.chunk(self.config.plan, index);
        let labels = &self.labels[offset..offset + block.rows()];

        let mut loss = 0.0;
        let mut grad = vec![0.0; weights.len()];
        let mut scores = vec![0.0; self.num_classes];
        for (x, &y) in block.iter_rows().zip(labels) {
            let mut max = f64::NEG_INFINITY;
            for (s, w) in scores.iter_mut().zip(weights.chunks_exact(stride)) {
                let raw = dot(&w[..cols], x);
                *s = if scale == 1.0 { raw } else { scale * raw } + w[cols];
                max = max.max(*s);
            }
            let y = usize::from(y);
            let score_y = scores[y];
            let mut z = 0.0;
            for s in scores.iter_mut() {
                *s = libm::exp(*s - max);
                z += *s;
            }
            loss += max + libm::log(z) - score_y;

            for (c, g) in grad.chunks_exact_mut(stride).enumerate() {
                let mut r = scores[c] / z;
                if c == y {
                    r -= 1.0;
                }
                axpy(r * scale, x, &mut g[..cols]);
                g[cols] += r;
            }
        }
        (loss, grad)
    }

    fn loss_grad<E: ChunkExecutor>(&self, weights: &[f64], exec: &E, grad: &mut [f64]) -> f64 {
        let count = self.config.plan.count(self.data.rows());
        let partials = exec.map_chunks(count, |i| self.chunk_partial(weights, i));

        grad.fill(0.0);
        let mut loss = 0.0;
        for (l, g) in &partials {
            loss += l;
            add_assign(grad, g);
        }
        let n = self.data.rows();
        if n > 0 {
            let inv = 1.0 / n as f64;
            loss *= inv;
            for g in grad.iter_mut() {
                *g *= inv;
            }
        }

        let cols = self.data.cols();
        let lambda = self.config.lambda;
        if lambda != 0.0 {
            let mut sq = 0.0;
            for (w, g) in weights.chunks_exact(cols + 1).zip(grad.chunks_exact_mut(cols + 1)) {
                sq += dot(&w[..cols], &w[..cols]);
                axpy(lambda, &w[..cols], &mut g[..cols]);
            }
            loss += 0.5 * lambda * sq;
        }
        loss
    }
}

/// Mean cross-entropy plus `lambda/2 |W_nobias|^2`, with its gradient written
/// to `grad`. Per-chunk partial sums are combined in ascending chunk order.
#[allow(clippy::too_many_arguments)]
pub fn softmax_loss_grad<E: ChunkExecutor>(
    weights: &[f64],
    data: MatrixView<'_>,
    labels: &[u8],
    num_classes: usize,
    config: &LogregConfig,
    exec: &E,
    grad: &mut [f64],
) -> Result<f64> {
    let problem = Problem { data, labels, num_classes, config: *config };
    problem.check(weights)?;
    check_finite(weights)?;
    if grad.len() != weights.len() {
        return Err(Error::Shape("gradient buffer length differs from weights"));
    }
    Ok(problem.loss_grad(weights, exec, grad))
}

/// The training loss as an [`Objective`] over flattened weights.
pub struct SoftmaxObjective<'a, E> {
    problem: Problem<'a>,
    exec: &'a E,
    evaluations: usize,
}

impl<'a, E: ChunkExecutor> SoftmaxObjective<'a, E> {
    pub fn new(
        data: MatrixView<'a>,
        labels: &'a [u8],
        num_classes: usize,
        config: LogregConfig,
        exec: &'a E,
    ) -> Result<Self> {
        let problem = Problem { data, labels, num_classes, config };
        problem.check(&vec![0.0; num_classes * (data.cols() + 1)])?;
        Ok(Self { problem, exec, evaluations: 0 })
    }

    pub fn evaluations(&self) -> usize {
        self.evaluations
    }
}

impl<E: ChunkExecutor> Objective for SoftmaxObjective<'_, E> {
    fn dim(&self) -> usize {
        self.problem.num_classes * (self.problem.data.cols() + 1)
    }

    fn evaluate(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.evaluations += 1;
        self.problem.loss_grad(x, self.exec, grad)
    }
}

#[derive(Debug, Clone)]
pub struct LogregFit {
    pub model: SoftmaxModel,
    pub report: LbfgsReport,
}

pub fn train_logreg<E: ChunkExecutor>(
    data: MatrixView<'_>,
    labels: &[u8],
    num_classes: usize,
    config: &LogregConfig,
    opts: &LbfgsOptions,
    exec: &E,
) -> Result<LogregFit> {
    train_logreg_observed(data, labels, num_classes, config, opts, exec, |_| {})
}

/// Trains from all-zero weights. When `feature_scale != 1` the returned model
/// has the scale folded into its weights, so it scores raw rows.
pub fn train_logreg_observed<E, C>(
    data: MatrixView<'_>,
    labels: &[u8],
    num_classes: usize,
    config: &LogregConfig,
    opts: &LbfgsOptions,
    exec: &E,
    observer: C,
) -> Result<LogregFit>
where
    E: ChunkExecutor,
    C: FnMut(&IterationRecord),
{
    let mut objective = SoftmaxObjective::new(data, labels, num_classes, *config, exec)?;
    let x0 = vec![0.0; objective.dim()];
    let report = lbfgs_minimize_observed(&mut objective, &x0, opts, observer)?;

    let cols = data.cols();
    let mut weights = report.x.clone();
    if config.feature_scale != 1.0 {
        for w in weights.chunks_exact_mut(cols + 1) {
            for v in &mut w[..cols] {
                *v *= config.feature_scale;
            }
        }
    }
    let model = SoftmaxModel::from_weights(weights, num_classes, cols, config.lambda)?;
    Ok(LogregFit { model, report })
}

pub fn predict<E: ChunkExecutor>(
    model: &SoftmaxModel,
    data: MatrixView<'_>,
    plan: ChunkPlan,
    exec: &E,
) -> Result<Vec<u8>> {
    if data.cols() != model.features {
        return Err(Error::Shape("feature count differs from model"));
    }
    let parts = exec.map_chunks(plan.count(data.rows()), |i| {
        let (_, block) = data.chunk(plan, i);
        block.iter_rows().map(|x| model.predict_row(x) as u8).collect::<Vec<u8>>()
    });
    Ok(parts.concat())
}

/// Fraction of positions where `pred == truth`; NaN when both are empty.
pub fn accuracy(pred: &[u8], truth: &[u8]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Shape("prediction count differs from label count"));
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Sequential;
    use crate::optim::check_gradient;
    use crate::prng::SplitMix64;
    use proptest::prelude::*;

    fn random_problem(seed: u64, rows: usize, cols: usize, classes: usize) -> (Vec<f64>, Vec<u8>, Vec<f64>) {
        let mut rng = SplitMix64::new(seed);
        let data = (0..rows * cols).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
        let labels = (0..rows).map(|_| (rng.next_u64() % classes as u64) as u8).collect();
        let w = (0..classes * (cols + 1)).map(|_| rng.next_f64() - 0.5).collect();
        (data, labels, w)
    }

    #[test]
    fn zero_weights_give_log_num_classes() {
        let (data, labels, _) = random_problem(1, 37, 6, 10);
        let view = MatrixView::new(&data, 37, 6).unwrap();
        let cfg = LogregConfig { lambda: 0.0, ..Default::default() };
        let w = vec![0.0; 10 * 7];
        let mut g = vec![0.0; w.len()];
        let loss = softmax_loss_grad(&w, view, &labels, 10, &cfg, &Sequential, &mut g).unwrap();
        // ln 10 frozen as a literal, independent of the std constant.
        #[allow(clippy::approx_constant)]
        let ln10 = 2.302585092994046;
        assert!((loss - ln10).abs() < 1e-12, "{loss}");
    }

    #[test]
    fn two_sample_brute_force() {
        // x = [1.5, -2.0], y = [1, 0]; W rows: class0 = (0.3, -0.1), class1 = (-0.7, 0.4).
        let data = [1.5f64, -2.0];
        let labels = [1u8, 0];
        let w = [0.3f64, -0.1, -0.7, 0.4];
        let lambda = 0.2;

        let mut loss = 0.0;
        let mut grad = [0.0; 4];
        for i in 0..2 {
            let s0 = w[0] * data[i] + w[1];
            let s1 = w[2] * data[i] + w[3];
            let p0 = s0.exp() / (s0.exp() + s1.exp());
            let p1 = s1.exp() / (s0.exp() + s1.exp());
            loss -= if labels[i] == 0 { p0.ln() } else { p1.ln() };
            let r0 = p0 - f64::from(labels[i] == 0);
            let r1 = p1 - f64::from(labels[i] == 1);
            grad[0] += r0 * data[i];
            grad[1] += r0;
            grad[2] += r1 * data[i];
            grad[3] += r1;
        }
        loss = loss / 2.0 + lambda / 2.0 * (w[0] * w[0] + w[2] * w[2]);
        for g in grad.iter_mut() {
            *g /= 2.0;
        }
        grad[0] += lambda * w[0];
        grad[2] += lambda * w[2];

        let view = MatrixView::new(&data, 2, 1).unwrap();
        let cfg = LogregConfig { lambda, ..Default::default() };
        let mut g = [0.0; 4];
        let got = softmax_loss_grad(&w, view, &labels, 2, &cfg, &Sequential, &mut g).unwrap();
        assert!((got - loss).abs() < 1e-14, "{got} vs {loss}");
        for (a, b) in g.iter().zip(&grad) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let data = [0.0; 4];
        let view = MatrixView::new(&data, 2, 2).unwrap();
        let cfg = LogregConfig::default();
        let mut g = [0.0; 6];
        let err = softmax_loss_grad(&[0.0; 6], view, &[0, 2], 2, &cfg, &Sequential, &mut g).unwrap_err();
        assert_eq!(err, Error::LabelOutOfRange { row: 1, label: 2, num_classes: 2 });
        let mut w = [0.0; 6];
        w[3] = f64::NAN;
        let err = softmax_loss_grad(&w, view, &[0, 1], 2, &cfg, &Sequential, &mut g).unwrap_err();
        assert_eq!(err, Error::NonFiniteWeights { index: 3 });
        assert!(softmax_loss_grad(&[0.0; 5], view, &[0, 1], 2, &cfg, &Sequential, &mut g).is_err());
        assert!(softmax_loss_grad(&[0.0; 6], view, &[0], 2, &cfg, &Sequential, &mut g).is_err());
    }

    #[test]
    fn separable_toy_set() {
        let data = [0.0, 0.0, 0.0, 1.0, 3.0, 3.0, 3.0, 4.0];
        let labels = [0u8, 0, 1, 1];
        let view = MatrixView::new(&data, 4, 2).unwrap();
        let cfg = LogregConfig { lambda: 1e-4, ..Default::default() };
        let opts = LbfgsOptions { max_iterations: 200, ..Default::default() };
        let fit = train_logreg(view, &labels, 2, &cfg, &opts, &Sequential).unwrap();
        let pred = predict(&fit.model, view, cfg.plan, &Sequential).unwrap();
        assert_eq!(accuracy(&pred, &labels).unwrap(), 1.0);
    }

    #[test]
    fn heavy_regularization_flattens_weights() {
        let (data, labels, _) = random_problem(5, 40, 3, 3);
        let view = MatrixView::new(&data, 40, 3).unwrap();
        let cfg = LogregConfig { lambda: 1e6, ..Default::default() };
        let opts = LbfgsOptions { max_iterations: 100, ..Default::default() };
        let fit = train_logreg(view, &labels, 3, &cfg, &opts, &Sequential).unwrap();
        let norm: f64 = (0..3).map(|c| dot(fit.model.class_weights(c), fit.model.class_weights(c))).sum();
        assert!(norm.sqrt() < 1e-6, "{norm}");
        // Predictions follow the biases alone.
        let best_bias = (0..3).fold(0, |b, c| if fit.model.bias(c) > fit.model.bias(b) { c } else { b });
        let pred = predict(&fit.model, view, cfg.plan, &Sequential).unwrap();
        assert!(pred.iter().all(|&p| usize::from(p) == best_bias));
    }

    #[test]
    fn zero_model_predicts_class_zero() {
        let (data, _, _) = random_problem(2, 9, 4, 3);
        let view = MatrixView::new(&data, 9, 4).unwrap();
        let model = SoftmaxModel::zeros(3, 4, 0.0);
        let pred = predict(&model, view, ChunkPlan::default(), &Sequential).unwrap();
        assert_eq!(pred, [0u8; 9]);
    }

    #[test]
    fn accuracy_fraction() {
        assert_eq!(accuracy(&[1, 2], &[1, 3]).unwrap(), 0.5);
        assert!(accuracy(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn feature_scale_folds_into_model() {
        let (data, labels, _) = random_problem(8, 30, 4, 2);
        let scaled: Vec<f64> = data.iter().map(|v| v * 0.5).collect();
        let opts = LbfgsOptions::benchmark(3);
        let fold = LogregConfig { feature_scale: 0.5, ..Default::default() };
        let raw = LogregConfig::default();
        let a = train_logreg(MatrixView::new(&data, 30, 4).unwrap(), &labels, 2, &fold, &opts, &Sequential).unwrap();
        let b = train_logreg(MatrixView::new(&scaled, 30, 4).unwrap(), &labels, 2, &raw, &opts, &Sequential).unwrap();
        assert!((a.report.value - b.report.value).abs() < 1e-12);
        let view = MatrixView::new(&data, 30, 4).unwrap();
        let scaled_view = MatrixView::new(&scaled, 30, 4).unwrap();
        assert_eq!(
            predict(&a.model, view, raw.plan, &Sequential).unwrap(),
            predict(&b.model, scaled_view, raw.plan, &Sequential).unwrap()
        );
    }

    #[test]
    fn model_bytes_round_trip() {
        let (_, _, w) = random_problem(4, 1, 3, 4);
        let model = SoftmaxModel::from_weights(w, 4, 3, 0.25).unwrap();
        assert_eq!(SoftmaxModel::from_bytes(&model.to_bytes()).unwrap(), model);
    }

    #[test]
    fn chunk_plan_changes_only_rounding() {
        let (data, labels, w) = random_problem(6, 50, 5, 4);
        let view = MatrixView::new(&data, 50, 5).unwrap();
        let mut g1 = vec![0.0; w.len()];
        let mut g2 = vec![0.0; w.len()];
        let one = LogregConfig { plan: ChunkPlan::new(50).unwrap(), ..Default::default() };
        let many = LogregConfig { plan: ChunkPlan::new(7).unwrap(), ..Default::default() };
        let l1 = softmax_loss_grad(&w, view, &labels, 4, &one, &Sequential, &mut g1).unwrap();
        let l2 = softmax_loss_grad(&w, view, &labels, 4, &many, &Sequential, &mut g2).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn gradient_matches_central_difference(
            seed: u64, rows in 1usize..=50, cols in 1usize..=10, classes in 2usize..=5,
        ) {
            let (data, labels, w) = random_problem(seed, rows, cols, classes);
            let view = MatrixView::new(&data, rows, cols).unwrap();
            let cfg = LogregConfig { lambda: 0.01, plan: ChunkPlan::new(8).unwrap(), ..Default::default() };
            let mut obj = SoftmaxObjective::new(view, &labels, classes, cfg, &Sequential).unwrap();
            let err = check_gradient(&mut obj, &w);
            prop_assert!(err < 1e-6, "max relative error {}", err);
        }

        #[test]
        fn shifting_all_classes_keeps_argmax(
            seed: u64, rows in 1usize..20, cols in 1usize..6, classes in 1usize..5,
        ) {
            // Small integers keep every score exact, so the shift cannot
            // perturb near-ties.
            let mut rng = SplitMix64::new(seed);
            let mut int = |span: u64| (rng.next_u64() % span) as f64 - (span / 2) as f64;
            let data: Vec<f64> = (0..rows * cols).map(|_| int(9)).collect();
            let w: Vec<f64> = (0..classes * (cols + 1)).map(|_| int(9)).collect();
            let shift: Vec<f64> = (0..cols + 1).map(|_| int(9)).collect();
            let mut shifted = w.clone();
            for row in shifted.chunks_exact_mut(cols + 1) {
                for (a, s) in row.iter_mut().zip(&shift) {
                    *a += s;
                }
            }
            let view = MatrixView::new(&data, rows, cols).unwrap();
            let a = SoftmaxModel::from_weights(w, classes, cols, 0.0).unwrap();
            let b = SoftmaxModel::from_weights(shifted, classes, cols, 0.0).unwrap();
            let plan = ChunkPlan::default();
            prop_assert_eq!(
                predict(&a, view, plan, &Sequential).unwrap(),
                predict(&b, view, plan, &Sequential).unwrap()
            );
        }
    }
}
