use ndarray::{Array1, Array2};

use crate::cluster::PhenotypeTensor;
use crate::error::{Error, Result};
use crate::model::{AttentionKind, InstancePool, ModelConfig, ModelParams, REP_WIDTH};

/// Forward output for one patient.
///
/// `attention` and `instance_reps` are indexed by instance: the phenotype
/// tensors in the order they were passed (zeros at empty clusters) for the
/// siamese model, or the patches in concatenated ascending-cluster order when
/// clusters are ignored.
#[derive(Debug, Clone)]
pub struct RiskOutput {
    pub risk: f64,
    pub attention: Vec<f64>,
    pub instance_reps: Array2<f64>,
    pub patient_rep: Array1<f64>,
}

/// Cached intermediates of one encoder stack application.
pub(crate) struct StackCache {
    /// Input to each layer; `inputs[0]` is the raw feature matrix.
    pub inputs: Vec<Array2<f64>>,
    pub pre_acts: Vec<Array2<f64>>,
    /// Output rows after the final ReLU.
    pub output: Array2<f64>,
}

pub(crate) struct ClusterCache {
    pub stack: StackCache,
    pub pooled: Array1<f64>,
    /// Per-column source row for max pooling gradient routing.
    pub argmax_rows: Option<Vec<usize>>,
}

pub(crate) enum InstanceData {
    /// Non-empty clusters in ascending cluster-index order.
    Clusters(Vec<ClusterCache>),
    /// All patches pushed through the shared embedding; reps are the rows.
    Patches(StackCache),
}

pub(crate) struct AttnCache {
    pub tanh_v: Array1<f64>,
    pub sig_u: Option<Array1<f64>>,
}

pub(crate) struct ForwardPass {
    pub output: RiskOutput,
    pub instances: InstanceData,
    /// Attention internals per masked-in instance, processing order.
    pub attn: Vec<AttnCache>,
    /// Attention weights in processing order.
    pub attention_in: Vec<f64>,
    pub z: Array1<f64>,
    pub h1_pre: Array1<f64>,
    pub h1: Array1<f64>,
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn run_stack(params: &ModelParams, features: &Array2<f64>) -> StackCache {
    let mut inputs = Vec::with_capacity(params.mi_fcn.len());
    let mut pre_acts = Vec::with_capacity(params.mi_fcn.len());
    let mut h = features.clone();
    for layer in &params.mi_fcn {
        let pre = h.dot(&layer.weight.t()) + &layer.bias;
        inputs.push(std::mem::replace(&mut h, pre.mapv(relu)));
        pre_acts.push(pre);
    }
    StackCache {
        inputs,
        pre_acts,
        output: h,
    }
}

/// Column mean with addends summed in value order, so patch order never
/// affects the result bits.
fn pool_average(output: &Array2<f64>) -> Array1<f64> {
    let m = output.nrows() as f64;
    Array1::from_iter(output.columns().into_iter().map(|col| {
        let mut vals: Vec<f64> = col.to_vec();
        vals.sort_unstable_by(f64::total_cmp);
        vals.iter().sum::<f64>() / m
    }))
}

/// Column max; ties resolve to the lowest row index for gradient routing.
fn pool_max(output: &Array2<f64>) -> (Array1<f64>, Vec<usize>) {
    let mut pooled = Array1::zeros(output.ncols());
    let mut rows = vec![0usize; output.ncols()];
    for (j, col) in output.columns().into_iter().enumerate() {
        let mut best = f64::NEG_INFINITY;
        let mut best_row = 0;
        for (i, &v) in col.iter().enumerate() {
            if v > best {
                best = v;
                best_row = i;
            }
        }
        pooled[j] = best;
        rows[j] = best_row;
    }
    (pooled, rows)
}

fn pool(config: &ModelConfig, output: &Array2<f64>) -> (Array1<f64>, Option<Vec<usize>>) {
    match config.instance_pool {
        InstancePool::Average => (pool_average(output), None),
        InstancePool::Max => {
            let (pooled, rows) = pool_max(output);
            (pooled, Some(rows))
        }
    }
}

/// Shared-weight encoder applied to one phenotype tensor: every patch runs
/// through the affine+ReLU pairs independently, then global pooling over the
/// patch axis yields the 64-wide representation.
pub fn mi_fcn_forward(
    params: &ModelParams,
    config: &ModelConfig,
    tensor: &PhenotypeTensor,
) -> Result<Array1<f64>> {
    params.check_shapes(config)?;
    if tensor.is_empty() {
        return Err(Error::EmptyInput("phenotype tensor has no patches"));
    }
    let stack = run_stack(params, &tensor.features);
    Ok(pool(config, &stack.output).0)
}

fn attention_score(
    params: &ModelParams,
    kind: AttentionKind,
    rep: &Array1<f64>,
) -> (f64, AttnCache) {
    let tanh_v = params.attention_v.dot(rep).mapv(f64::tanh);
    match kind {
        AttentionKind::Gated => {
            let sig_u = params
                .attention_u
                .as_ref()
                .expect("checked by shape validation")
                .dot(rep)
                .mapv(sigmoid);
            let score = params
                .attention_w
                .iter()
                .zip(tanh_v.iter())
                .zip(sig_u.iter())
                .map(|((w, t), g)| w * t * g)
                .sum();
            (
                score,
                AttnCache {
                    tanh_v,
                    sig_u: Some(sig_u),
                },
            )
        }
        _ => {
            let score = params.attention_w.dot(&tanh_v);
            (
                score,
                AttnCache {
                    tanh_v,
                    sig_u: None,
                },
            )
        }
    }
}

/// Attention weights and pooled representation over masked-in rows.
/// Scores feed a softmax computed with max subtraction; uniform attention
/// assigns equal weight to every masked-in instance.
fn attention_forward(
    params: &ModelParams,
    kind: AttentionKind,
    reps: &[Array1<f64>],
) -> (Vec<f64>, Array1<f64>, Vec<AttnCache>) {
    let n = reps.len();
    let (weights, caches) = if kind == AttentionKind::Uniform {
        (vec![1.0 / n as f64; n], Vec::new())
    } else {
        let mut scores = Vec::with_capacity(n);
        let mut caches = Vec::with_capacity(n);
        for rep in reps {
            let (score, cache) = attention_score(params, kind, rep);
            scores.push(score);
            caches.push(cache);
        }
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let denom: f64 = exps.iter().sum();
        (exps.into_iter().map(|e| e / denom).collect(), caches)
    };

    let mut z = Array1::zeros(REP_WIDTH);
    for (a, rep) in weights.iter().zip(reps) {
        z.scaled_add(*a, rep);
    }
    (weights, z, caches)
}

/// Attention MIL pooling over a full representation matrix with a mask.
/// Masked-out rows get attention exactly zero; masked-in weights are a
/// softmax over the scores and sum to one.
pub fn attention_pool(
    params: &ModelParams,
    config: &ModelConfig,
    reps: &Array2<f64>,
    mask: &[bool],
) -> Result<(Array1<f64>, Vec<f64>)> {
    params.check_shapes(config)?;
    if reps.nrows() != mask.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} mask entries for {} representations",
            mask.len(),
            reps.nrows()
        )));
    }
    if reps.ncols() != REP_WIDTH {
        return Err(Error::ShapeMismatch(format!(
            "representations must be {REP_WIDTH} wide, got {}",
            reps.ncols()
        )));
    }
    let rows: Vec<Array1<f64>> = mask
        .iter()
        .zip(reps.rows())
        .filter(|(m, _)| **m)
        .map(|(_, row)| row.to_owned())
        .collect();
    if rows.is_empty() {
        return Err(Error::AllClustersEmpty);
    }
    let (weights, z, _) = attention_forward(params, config.attention_kind, &rows);
    let mut attention = vec![0.0; mask.len()];
    let mut iter = weights.into_iter();
    for (a, &m) in attention.iter_mut().zip(mask) {
        if m {
            *a = iter.next().expect("one weight per masked-in row");
        }
    }
    Ok((z, attention))
}

fn head_forward(
    params: &ModelParams,
    config: &ModelConfig,
    z: &Array1<f64>,
) -> (Array1<f64>, Array1<f64>, f64) {
    let h1_pre = params.head1.weight.dot(z) + &params.head1.bias;
    let h1 = if config.head_relu {
        h1_pre.mapv(relu)
    } else {
        h1_pre.clone()
    };
    let risk = params.head2.weight.row(0).dot(&h1) + params.head2.bias[0];
    (h1_pre, h1, risk)
}

/// Full forward pass with cached intermediates for the backward pass.
/// Instances are processed in ascending cluster-index order so that
/// permutations of the input tensors reproduce the same floating-point sums.
pub(crate) fn forward_pass(
    params: &ModelParams,
    config: &ModelConfig,
    tensors: &[PhenotypeTensor],
) -> Result<ForwardPass> {
    if tensors.is_empty() {
        return Err(Error::EmptyInput("no phenotype tensors"));
    }
    for t in tensors {
        if !t.is_empty() && t.features.ncols() != config.feature_dim {
            return Err(Error::ShapeMismatch(format!(
                "tensor {} has dimension {}, model expects {}",
                t.cluster_index,
                t.features.ncols(),
                config.feature_dim
            )));
        }
    }
    let mut order: Vec<usize> = (0..tensors.len()).collect();
    order.sort_by_key(|&i| tensors[i].cluster_index);

    let (instances, reps_in, out_len, out_positions): (
        InstanceData,
        Vec<Array1<f64>>,
        usize,
        Vec<usize>,
    ) = if config.siamese {
        let mut clusters = Vec::new();
        let mut reps = Vec::new();
        let mut positions = Vec::new();
        for &i in &order {
            if tensors[i].is_empty() {
                continue;
            }
            let stack = run_stack(params, &tensors[i].features);
            let (pooled, argmax_rows) = pool(config, &stack.output);
            reps.push(pooled.clone());
            positions.push(i);
            clusters.push(ClusterCache {
                stack,
                pooled,
                argmax_rows,
            });
        }
        if clusters.is_empty() {
            return Err(Error::AllClustersEmpty);
        }
        (
            InstanceData::Clusters(clusters),
            reps,
            tensors.len(),
            positions,
        )
    } else {
        let total: usize = order.iter().map(|&i| tensors[i].n_patches()).sum();
        if total == 0 {
            return Err(Error::AllClustersEmpty);
        }
        let d = config.feature_dim;
        let mut all = Array2::zeros((total, d));
        let mut row = 0;
        for &i in &order {
            for patch in tensors[i].features.rows() {
                all.row_mut(row).assign(&patch);
                row += 1;
            }
        }
        let stack = run_stack(params, &all);
        let reps: Vec<Array1<f64>> = stack.output.rows().into_iter().map(|r| r.to_owned()).collect();
        let positions = (0..total).collect();
        (InstanceData::Patches(stack), reps, total, positions)
    };

    let (weights, z, attn) = attention_forward(params, config.attention_kind, &reps_in);
    let (h1_pre, h1, risk) = head_forward(params, config, &z);

    let mut attention = vec![0.0; out_len];
    let mut instance_reps = Array2::zeros((out_len, REP_WIDTH));
    for ((&pos, a), rep) in out_positions.iter().zip(&weights).zip(&reps_in) {
        attention[pos] = *a;
        instance_reps.row_mut(pos).assign(rep);
    }

    Ok(ForwardPass {
        output: RiskOutput {
            risk,
            attention,
            instance_reps,
            patient_rep: z.clone(),
        },
        instances,
        attn,
        attention_in: weights,
        z,
        h1_pre,
        h1,
    })
}

/// One patient through the whole network: encode each non-empty phenotype,
/// pool with attention (empty clusters masked to weight zero), then the
/// 64-32-1 head yields the hazard score.
pub fn risk_forward(
    params: &ModelParams,
    config: &ModelConfig,
    tensors: &[PhenotypeTensor],
) -> Result<RiskOutput> {
    params.check_shapes(config)?;
    forward_pass(params, config, tensors).map(|pass| pass.output)
}
