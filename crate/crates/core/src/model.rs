//! Hard-parameter-sharing multi-task network: a shared trunk of dense layers
//! feeding `K` task branches.
//!
//! Parameters live in one flat vector ordered trunk first, then branch 1..K.
//! Inside a block each dense layer stores its kernel (`input × output`,
//! row-major) followed by its bias. The vector is partitioned into the shared
//! block `w0` and the task blocks `w1..wK`; `w_ts` is the contiguous tail made
//! of the task blocks.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gemm_nn, gemm_nt, gemm_tn, Matrix, Rng};
use crate::verify::WorkCounter;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Linear,
    Softmax,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Linear => "linear",
            Activation::Softmax => "softmax",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "relu" => Ok(Activation::Relu),
            "linear" => Ok(Activation::Linear),
            "softmax" => Ok(Activation::Softmax),
            other => Err(Error::InvalidArchitecture(format!("unknown activation `{other}`"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input_width: usize,
    pub output_width: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(input_width: usize, output_width: usize, activation: Activation) -> Self {
        Self {
            input_width,
            output_width,
            activation,
        }
    }

    pub fn param_count(&self) -> usize {
        self.input_width * self.output_width + self.output_width
    }
}

/// Which gradient block a backward pass materializes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    /// All `p` parameters.
    Full,
    /// Only the trunk block `w0`; the chain rule still runs through the branches.
    SharedOnly,
    /// Only `w_ts`; propagation stops at the trunk/branch boundary.
    TaskSpecificOnly,
}

impl Scope {
    pub fn name(self) -> &'static str {
        match self {
            Scope::Full => "full",
            Scope::SharedOnly => "shared_only",
            Scope::TaskSpecificOnly => "task_specific_only",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MtnnArchitecture {
    trunk: Vec<LayerSpec>,
    branches: Vec<Vec<LayerSpec>>,
}

impl MtnnArchitecture {
    pub fn new(trunk: Vec<LayerSpec>, branches: Vec<Vec<LayerSpec>>) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidArchitecture(msg));
        if trunk.is_empty() {
            return bad("trunk must contain at least one layer".into());
        }
        if branches.is_empty() {
            return bad("at least one task branch is required".into());
        }
        check_chain("trunk", &trunk)?;
        if trunk.iter().any(|l| l.activation == Activation::Softmax) {
            return bad("softmax is only allowed as the final layer of a branch".into());
        }
        let shared_width = trunk.last().map(|l| l.output_width).unwrap_or_default();
        for (k, branch) in branches.iter().enumerate() {
            let name = format!("branch {}", k + 1);
            if branch.is_empty() {
                return bad(format!("{name} must contain at least one layer"));
            }
            check_chain(&name, branch)?;
            if branch[0].input_width != shared_width {
                return bad(format!(
                    "{name} input width {} does not match trunk output width {shared_width}",
                    branch[0].input_width
                ));
            }
            if branch[..branch.len() - 1]
                .iter()
                .any(|l| l.activation == Activation::Softmax)
            {
                return bad(format!("{name}: softmax is only allowed as the final layer"));
            }
        }
        Ok(Self { trunk, branches })
    }

    /// Builds an architecture from `(width, activation)` lists, chaining input widths.
    pub fn from_widths(
        input_width: usize,
        trunk: &[(usize, Activation)],
        branches: &[Vec<(usize, Activation)>],
    ) -> Result<Self> {
        let chain = |mut width: usize, layers: &[(usize, Activation)]| {
            layers
                .iter()
                .map(|&(out, act)| {
                    let spec = LayerSpec::new(width, out, act);
                    width = out;
                    spec
                })
                .collect::<Vec<_>>()
        };
        let trunk_specs = chain(input_width, trunk);
        let shared = trunk.last().map_or(input_width, |l| l.0);
        let branch_specs = branches.iter().map(|b| chain(shared, b)).collect();
        Self::new(trunk_specs, branch_specs)
    }

    /// The two-task quadrant/circle network: three relu trunk layers of `width`,
    /// a 4-way softmax branch and a single-logit linear branch, each with two
    /// relu hidden layers of `width`.
    pub fn quadrant_circle(width: usize) -> Self {
        use Activation::*;
        Self::from_widths(
            2,
            &[(width, Relu), (width, Relu), (width, Relu)],
            &[
                vec![(width, Relu), (width, Relu), (4, Softmax)],
                vec![(width, Relu), (width, Relu), (1, Linear)],
            ],
        )
        .expect("fixed architecture is valid")
    }

    pub fn trunk(&self) -> &[LayerSpec] {
        &self.trunk
    }

    pub fn branch(&self, k: usize) -> &[LayerSpec] {
        &self.branches[k]
    }

    pub fn branches(&self) -> &[Vec<LayerSpec>] {
        &self.branches
    }

    /// `n`
    pub fn input_width(&self) -> usize {
        self.trunk[0].input_width
    }

    /// `m0`
    pub fn shared_width(&self) -> usize {
        self.trunk[self.trunk.len() - 1].output_width
    }

    /// `K`
    pub fn task_count(&self) -> usize {
        self.branches.len()
    }

    /// `m_k` for task `k` (0-based).
    pub fn output_width(&self, k: usize) -> usize {
        self.branches[k].last().map(|l| l.output_width).unwrap_or_default()
    }

    pub fn head_activation(&self, k: usize) -> Activation {
        self.branches[k][self.branches[k].len() - 1].activation
    }

    /// `p0`
    pub fn shared_param_count(&self) -> usize {
        self.trunk.iter().map(LayerSpec::param_count).sum()
    }

    /// `p_k` for task `k` (0-based).
    pub fn task_param_count(&self, k: usize) -> usize {
        self.branches[k].iter().map(LayerSpec::param_count).sum()
    }

    /// `p_ts`
    pub fn task_specific_param_count(&self) -> usize {
        (0..self.task_count()).map(|k| self.task_param_count(k)).sum()
    }

    /// `p`
    pub fn param_count(&self) -> usize {
        self.shared_param_count() + self.task_specific_param_count()
    }

    /// Block boundaries `[0, p0, p0 + p1, ..., p]`.
    pub fn partition(&self) -> Vec<usize> {
        let mut offsets = vec![0, self.shared_param_count()];
        for k in 0..self.task_count() {
            let last = offsets[offsets.len() - 1];
            offsets.push(last + self.task_param_count(k));
        }
        offsets
    }

    /// Same trunk, only branch `k`.
    pub fn single_task(&self, k: usize) -> MtnnArchitecture {
        MtnnArchitecture {
            trunk: self.trunk.clone(),
            branches: vec![self.branches[k].clone()],
        }
    }
}

fn check_chain(name: &str, layers: &[LayerSpec]) -> Result<()> {
    for (i, l) in layers.iter().enumerate() {
        if l.input_width == 0 || l.output_width == 0 {
            return Err(Error::InvalidArchitecture(format!(
                "{name} layer {i}: widths must be at least 1"
            )));
        }
        if i > 0 && layers[i - 1].output_width != l.input_width {
            return Err(Error::InvalidArchitecture(format!(
                "{name} layer {i}: input width {} does not match previous output width {}",
                l.input_width,
                layers[i - 1].output_width
            )));
        }
    }
    Ok(())
}

/// Flat trainable parameters with their block partition.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    offsets: Vec<usize>,
}

impl ParamVector {
    pub fn zeros(arch: &MtnnArchitecture) -> Self {
        Self {
            values: vec![0.0; arch.param_count()],
            offsets: arch.partition(),
        }
    }

    pub fn from_values(arch: &MtnnArchitecture, values: Vec<f64>) -> Result<Self> {
        if values.len() != arch.param_count() {
            return Err(Error::dims("ParamVector::from_values", arch.param_count(), values.len()));
        }
        Ok(Self {
            values,
            offsets: arch.partition(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn task_count(&self) -> usize {
        self.offsets.len() - 2
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn shared_range(&self) -> Range<usize> {
        0..self.offsets[1]
    }

    pub fn task_range(&self, k: usize) -> Range<usize> {
        self.offsets[k + 1]..self.offsets[k + 2]
    }

    pub fn task_specific_range(&self) -> Range<usize> {
        self.offsets[1]..self.values.len()
    }

    /// Parameter range a gradient of the given scope addresses.
    pub fn scope_range(&self, scope: Scope) -> Range<usize> {
        match scope {
            Scope::Full => 0..self.values.len(),
            Scope::SharedOnly => self.shared_range(),
            Scope::TaskSpecificOnly => self.task_specific_range(),
        }
    }

    pub fn shared(&self) -> &[f64] {
        &self.values[self.shared_range()]
    }

    pub fn task(&self, k: usize) -> &[f64] {
        &self.values[self.task_range(k)]
    }

    pub fn task_specific(&self) -> &[f64] {
        &self.values[self.task_specific_range()]
    }

    pub fn scoped(&self, scope: Scope) -> &[f64] {
        &self.values[self.scope_range(scope)]
    }

    pub fn scoped_mut(&mut self, scope: Scope) -> &mut [f64] {
        let r = self.scope_range(scope);
        &mut self.values[r]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Glorot-uniform kernels and zero biases.
pub fn init_params(arch: &MtnnArchitecture, rng: &mut Rng) -> ParamVector {
    let mut params = ParamVector::zeros(arch);
    let values = params.as_mut_slice();
    let mut offset = 0;
    let layers = arch.trunk.iter().chain(arch.branches.iter().flatten());
    for layer in layers {
        let fan = (layer.input_width + layer.output_width) as f64;
        let limit = (6.0 / fan).sqrt();
        let n = layer.input_width * layer.output_width;
        let w = rng
            .uniform(-limit, limit, n)
            .expect("glorot limit is positive and finite");
        values[offset..offset + n].copy_from_slice(&w);
        offset += layer.param_count();
    }
    params
}

/// Cached pre-activations and activations of one block.
#[derive(Clone, Debug, Default)]
pub struct BlockTrace {
    pub pre: Vec<Vec<f64>>,
    pub post: Vec<Vec<f64>>,
}

/// Everything a backward pass needs from one forward pass on a mini-batch.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    batch: usize,
    param_len: usize,
    inputs: Matrix,
    trunk: BlockTrace,
    branches: Vec<BlockTrace>,
}

impl ForwardTrace {
    pub fn batch_size(&self) -> usize {
        self.batch
    }

    pub fn trunk(&self) -> &BlockTrace {
        &self.trunk
    }

    pub fn branch(&self, k: usize) -> &BlockTrace {
        &self.branches[k]
    }

    /// Final pre-activation of branch `k` (the logits).
    pub fn logits(&self, k: usize) -> &[f64] {
        let b = &self.branches[k];
        &b.pre[b.pre.len() - 1]
    }

    fn shared_features(&self) -> &[f64] {
        &self.trunk.post[self.trunk.post.len() - 1]
    }
}

fn layer_forward(layer: &LayerSpec, weights: &[f64], input: &[f64], batch: usize) -> (Vec<f64>, Vec<f64>) {
    let (n_in, n_out) = (layer.input_width, layer.output_width);
    let (kernel, bias) = weights.split_at(n_in * n_out);
    let mut pre = Vec::with_capacity(batch * n_out);
    for _ in 0..batch {
        pre.extend_from_slice(bias);
    }
    gemm_nn(input, kernel, &mut pre, batch, n_in, n_out);
    let mut post = pre.clone();
    match layer.activation {
        Activation::Linear => {}
        Activation::Relu => {
            for v in &mut post {
                if *v <= 0.0 {
                    *v = 0.0;
                }
            }
        }
        Activation::Softmax => {
            for row in post.chunks_mut(n_out) {
                softmax_in_place(row);
            }
        }
    }
    (pre, post)
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn block_forward(layers: &[LayerSpec], params: &[f64], input: &[f64], batch: usize) -> BlockTrace {
    let mut trace = BlockTrace::default();
    let mut offset = 0;
    for (i, layer) in layers.iter().enumerate() {
        let weights = &params[offset..offset + layer.param_count()];
        let x = if i == 0 { input } else { &trace.post[i - 1] };
        let (pre, post) = layer_forward(layer, weights, x, batch);
        trace.pre.push(pre);
        trace.post.push(post);
        offset += layer.param_count();
    }
    trace
}

/// Runs the trunk once and every branch on its output. Returns the `K`
/// per-task output matrices (after each branch's final activation).
pub fn forward(
    arch: &MtnnArchitecture,
    params: &ParamVector,
    inputs: &Matrix,
) -> Result<(Vec<Matrix>, ForwardTrace)> {
    if inputs.cols() != arch.input_width() {
        return Err(Error::dims("forward", format!("{} input columns", arch.input_width()), inputs.cols()));
    }
    if params.len() != arch.param_count() {
        return Err(Error::dims("forward", format!("{} parameters", arch.param_count()), params.len()));
    }
    let batch = inputs.rows();
    let trunk = block_forward(&arch.trunk, params.shared(), inputs.as_slice(), batch);
    let features = &trunk.post[trunk.post.len() - 1];
    let branches: Vec<BlockTrace> = (0..arch.task_count())
        .map(|k| block_forward(&arch.branches[k], params.task(k), features, batch))
        .collect();
    let outputs = branches
        .iter()
        .enumerate()
        .map(|(k, b)| {
            Matrix::new(batch, arch.output_width(k), b.post[b.post.len() - 1].clone())
                .expect("branch output shape")
        })
        .collect();
    let trace = ForwardTrace {
        batch,
        param_len: params.len(),
        inputs: inputs.clone(),
        trunk,
        branches,
    };
    Ok((outputs, trace))
}

/// Result of a scoped backward pass.
#[derive(Clone, Debug)]
pub struct Backward {
    /// Gradient block laid out like the parameter range of the scope.
    pub gradient: Vec<f64>,
    pub work: WorkCounter,
}

/// Backpropagates through one block.
///
/// `delta` is the gradient w.r.t. the block's last pre-activation. When
/// `param_grads` is `Some`, kernel and bias gradients are accumulated into it.
/// Returns the gradient w.r.t. the block input when `want_input_grad`.
fn block_backward(
    layers: &[LayerSpec],
    params: &[f64],
    trace: &BlockTrace,
    input: &[f64],
    batch: usize,
    mut delta: Vec<f64>,
    mut param_grads: Option<&mut [f64]>,
    want_input_grad: bool,
    work: &mut WorkCounter,
) -> Option<Vec<f64>> {
    let mut offsets = Vec::with_capacity(layers.len());
    let mut acc = 0;
    for l in layers {
        offsets.push(acc);
        acc += l.param_count();
    }
    for i in (0..layers.len()).rev() {
        let layer = &layers[i];
        let (n_in, n_out) = (layer.input_width, layer.output_width);
        let x = if i == 0 { input } else { &trace.post[i - 1] };
        if let Some(grads) = param_grads.as_deref_mut() {
            let g = &mut grads[offsets[i]..offsets[i] + layer.param_count()];
            let (gk, gb) = g.split_at_mut(n_in * n_out);
            gemm_tn(x, &delta, gk, batch, n_in, n_out);
            for row in delta.chunks(n_out) {
                for (b, d) in gb.iter_mut().zip(row) {
                    *b += d;
                }
            }
            work.multiply_accumulate_count += (batch * n_in * n_out + batch * n_out) as u64;
        }
        if i == 0 && !want_input_grad {
            return None;
        }
        let kernel = &params[offsets[i]..offsets[i] + n_in * n_out];
        let mut upstream = vec![0.0; batch * n_in];
        gemm_nt(&delta, kernel, &mut upstream, batch, n_out, n_in);
        work.multiply_accumulate_count += (batch * n_in * n_out) as u64;
        if i == 0 {
            return Some(upstream);
        }
        match layers[i - 1].activation {
            Activation::Relu => {
                for (u, &z) in upstream.iter_mut().zip(&trace.pre[i - 1]) {
                    if z <= 0.0 {
                        *u = 0.0;
                    }
                }
            }
            Activation::Linear => {}
            Activation::Softmax => unreachable!("softmax is only a final layer"),
        }
        delta = upstream;
    }
    None
}

/// Scoped backpropagation.
///
/// `output_grads[k]` is the gradient of the (weighted) loss with respect to
/// branch `k`'s final pre-activation; see [`crate::loss::output_gradient`].
pub fn backward(
    arch: &MtnnArchitecture,
    params: &ParamVector,
    trace: &ForwardTrace,
    output_grads: &[Matrix],
    scope: Scope,
) -> Result<Backward> {
    if trace.param_len != params.len() || params.len() != arch.param_count() {
        return Err(Error::dims("backward", "trace built from these parameters", "different parameter length"));
    }
    if output_grads.len() != arch.task_count() || trace.branches.len() != arch.task_count() {
        return Err(Error::dims("backward", format!("{} task gradients", arch.task_count()), output_grads.len()));
    }
    let batch = trace.batch;
    for (k, g) in output_grads.iter().enumerate() {
        if g.shape() != (batch, arch.output_width(k)) {
            return Err(Error::dims(
                "backward",
                format!("{batch}x{}", arch.output_width(k)),
                format!("{}x{} for task {}", g.rows(), g.cols(), k + 1),
            ));
        }
    }

    let p0 = arch.shared_param_count();
    let range = params.scope_range(scope);
    let mut gradient = vec![0.0; range.len()];
    let mut work = WorkCounter {
        multiply_accumulate_count: 0,
        materialized_gradient_entries: range.len() as u64,
    };
    let want_branch_params = scope != Scope::SharedOnly;
    let want_trunk = scope != Scope::TaskSpecificOnly;
    let features = trace.shared_features();
    let mut feature_grad = want_trunk.then(|| vec![0.0; batch * arch.shared_width()]);

    for k in 0..arch.task_count() {
        let grads = if want_branch_params {
            let r = params.task_range(k);
            let base = range.start;
            Some(&mut gradient[r.start - base..r.end - base])
        } else {
            None
        };
        let upstream = block_backward(
            &arch.branches[k],
            params.task(k),
            &trace.branches[k],
            features,
            batch,
            output_grads[k].as_slice().to_vec(),
            grads,
            want_trunk,
            &mut work,
        );
        if let (Some(total), Some(u)) = (feature_grad.as_mut(), upstream) {
            for (t, v) in total.iter_mut().zip(&u) {
                *t += v;
            }
        }
    }

    if let Some(mut delta) = feature_grad {
        let last = arch.trunk.len() - 1;
        if arch.trunk[last].activation == Activation::Relu {
            for (d, &z) in delta.iter_mut().zip(&trace.trunk.pre[last]) {
                if z <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        block_backward(
            &arch.trunk,
            params.shared(),
            &trace.trunk,
            trace.inputs.as_slice(),
            batch,
            delta,
            Some(&mut gradient[..p0]),
            false,
            &mut work,
        );
    }
    Ok(Backward { gradient, work })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_linear() -> MtnnArchitecture {
        use Activation::Linear;
        MtnnArchitecture::from_widths(2, &[(1, Linear)], &[vec![(1, Linear)], vec![(1, Linear)]]).unwrap()
    }

    #[test]
    fn quadrant_circle_parameter_counts() {
        let arch = MtnnArchitecture::quadrant_circle(512);
        assert_eq!(arch.shared_param_count(), 526_848);
        assert_eq!(arch.task_param_count(0), 527_364);
        assert_eq!(arch.task_param_count(1), 525_825);
        assert_eq!(arch.task_specific_param_count(), 1_053_189);
        assert_eq!(arch.param_count(), 1_580_037);
        assert_eq!(arch.trunk()[0].param_count(), 1_536);
        assert_eq!(arch.branch(0)[2].param_count(), 2_052);
        assert_eq!(arch.branch(1)[2].param_count(), 513);
    }

    #[test]
    fn rejects_bad_architectures() {
        use Activation::*;
        assert!(MtnnArchitecture::from_widths(2, &[], &[vec![(1, Linear)]]).is_err());
        assert!(MtnnArchitecture::from_widths(2, &[(3, Relu)], &[]).is_err());
        assert!(MtnnArchitecture::from_widths(2, &[(3, Softmax)], &[vec![(1, Linear)]]).is_err());
        assert!(MtnnArchitecture::from_widths(2, &[(3, Relu)], &[vec![(2, Softmax), (1, Linear)]]).is_err());
        assert!(MtnnArchitecture::from_widths(2, &[(0, Relu)], &[vec![(1, Linear)]]).is_err());
        assert!(MtnnArchitecture::from_widths(2, &[(3, Relu)], &[vec![]]).is_err());
        let mismatched = MtnnArchitecture::new(
            vec![LayerSpec::new(2, 3, Relu)],
            vec![vec![LayerSpec::new(4, 1, Linear)]],
        );
        assert!(mismatched.is_err());
    }

    #[test]
    fn partition_offsets() {
        let arch = tiny_linear();
        // trunk 2*1+1, branches 1*1+1 each
        assert_eq!(arch.partition(), vec![0, 3, 5, 7]);
        let p = ParamVector::zeros(&arch);
        assert_eq!(p.task_specific_range(), 3..7);
        assert_eq!(p.task_range(1), 5..7);
    }

    #[test]
    fn init_is_deterministic_and_within_glorot_bound() {
        let arch = MtnnArchitecture::from_widths(2, &[(2, Activation::Linear)], &[vec![(2, Activation::Linear)]]).unwrap();
        let a = init_params(&arch, &mut Rng::new(0));
        let b = init_params(&arch, &mut Rng::new(0));
        assert_eq!(a, b);
        let bound = (6.0f64 / 4.0).sqrt();
        // kernel then bias for each layer
        for layer_start in [0, 6] {
            assert!(a.as_slice()[layer_start..layer_start + 4].iter().all(|w| w.abs() <= bound));
            assert!(a.as_slice()[layer_start..layer_start + 4].iter().any(|w| *w != 0.0));
            assert_eq!(&a.as_slice()[layer_start + 4..layer_start + 6], &[0.0, 0.0]);
        }
    }

    #[test]
    fn zero_params_softmax_is_uniform() {
        use Activation::*;
        let arch = MtnnArchitecture::from_widths(3, &[(5, Relu)], &[vec![(4, Softmax)]]).unwrap();
        let params = ParamVector::zeros(&arch);
        let x = Matrix::new(2, 3, vec![0.3, -1.0, 2.0, 1.0, 1.0, 1.0]).unwrap();
        let (out, _) = forward(&arch, &params, &x).unwrap();
        assert!(out[0].as_slice().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn hand_evaluated_linear_net() {
        let arch = tiny_linear();
        // trunk kernel (1,1) bias 0; branch kernels 2 and -3, biases 0
        let params = ParamVector::from_values(&arch, vec![1.0, 1.0, 0.0, 2.0, 0.0, -3.0, 0.0]).unwrap();
        let x = Matrix::new(1, 2, vec![1.0, 2.0]).unwrap();
        let (out, _) = forward(&arch, &params, &x).unwrap();
        assert_eq!(out[0].as_slice(), &[6.0]);
        assert_eq!(out[1].as_slice(), &[-9.0]);
    }

    #[test]
    fn quadrant_circle_output_shapes() {
        let arch = MtnnArchitecture::quadrant_circle(16);
        let params = init_params(&arch, &mut Rng::new(2));
        let x = Matrix::new(256, 2, Rng::new(3).uniform(-2.0, 2.0, 512).unwrap()).unwrap();
        let (out, trace) = forward(&arch, &params, &x).unwrap();
        assert_eq!(out[0].shape(), (256, 4));
        assert_eq!(out[1].shape(), (256, 1));
        assert_eq!(trace.batch_size(), 256);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let arch = tiny_linear();
        let params = ParamVector::zeros(&arch);
        assert!(forward(&arch, &params, &Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn backward_scopes_materialize_their_blocks() {
        let arch = MtnnArchitecture::quadrant_circle(8);
        let params = init_params(&arch, &mut Rng::new(4));
        let x = Matrix::new(3, 2, Rng::new(5).uniform(-2.0, 2.0, 6).unwrap()).unwrap();
        let (_, trace) = forward(&arch, &params, &x).unwrap();
        let grads = vec![Matrix::zeros(3, 4), Matrix::zeros(3, 1)];
        let full = backward(&arch, &params, &trace, &grads, Scope::Full).unwrap();
        let shared = backward(&arch, &params, &trace, &grads, Scope::SharedOnly).unwrap();
        let ts = backward(&arch, &params, &trace, &grads, Scope::TaskSpecificOnly).unwrap();
        assert_eq!(full.gradient.len(), arch.param_count());
        assert_eq!(shared.gradient.len(), arch.shared_param_count());
        assert_eq!(ts.gradient.len(), arch.task_specific_param_count());
        assert_eq!(ts.work.materialized_gradient_entries, arch.task_specific_param_count() as u64);
    }

    #[test]
    fn backward_rejects_mismatched_gradients() {
        let arch = tiny_linear();
        let params = ParamVector::zeros(&arch);
        let (_, trace) = forward(&arch, &params, &Matrix::zeros(2, 2)).unwrap();
        let wrong = vec![Matrix::zeros(3, 1), Matrix::zeros(2, 1)];
        assert!(backward(&arch, &params, &trace, &wrong, Scope::Full).is_err());
        assert!(backward(&arch, &params, &trace, &wrong[1..], Scope::Full).is_err());
    }
}
