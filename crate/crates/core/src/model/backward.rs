use ndarray::{Array1, Array2};

use crate::cluster::PhenotypeTensor;
use crate::error::{Error, Result};
use crate::model::forward::{forward_pass, ForwardPass, InstanceData, StackCache};
use crate::model::{AttentionKind, ModelConfig, ModelParams, ParamGrads};

/// Reverse an encoder stack application: `d_output` is the gradient at the
/// post-ReLU output rows; accumulates layer gradients and returns nothing
/// (input gradients are not needed).
fn backward_stack(
    params: &ModelParams,
    stack: &StackCache,
    d_output: Array2<f64>,
    grads: &mut ParamGrads,
) {
    let mut d_h = d_output;
    for l in (0..params.mi_fcn.len()).rev() {
        // ReLU subgradient at zero is zero: strict positivity gates flow.
        let mut d_pre = d_h;
        d_pre.zip_mut_with(&stack.pre_acts[l], |g, &a| {
            if a <= 0.0 {
                *g = 0.0;
            }
        });
        grads.mi_fcn[l]
            .weight
            .scaled_add(1.0, &d_pre.t().dot(&stack.inputs[l]));
        grads.mi_fcn[l]
            .bias
            .scaled_add(1.0, &d_pre.sum_axis(ndarray::Axis(0)));
        if l > 0 {
            d_h = d_pre.dot(&params.mi_fcn[l].weight);
        } else {
            break;
        }
    }
}

/// Propagate one patient's `d_risk = dL/do` through the cached forward pass,
/// accumulating into `grads`.
pub(crate) fn backward_pass(
    params: &ModelParams,
    config: &ModelConfig,
    pass: &ForwardPass,
    d_risk: f64,
    grads: &mut ParamGrads,
) {
    // Head: o = W2 h1 + b2, h1 = relu?(W1 z + b1).
    grads.head2.bias[0] += d_risk;
    grads
        .head2
        .weight
        .row_mut(0)
        .scaled_add(d_risk, &pass.h1);
    let mut d_h1: Array1<f64> = params.head2.weight.row(0).mapv(|w| w * d_risk);
    if config.head_relu {
        d_h1.zip_mut_with(&pass.h1_pre, |g, &a| {
            if a <= 0.0 {
                *g = 0.0;
            }
        });
    }
    grads.head1.bias.scaled_add(1.0, &d_h1);
    for (mut row, &g) in grads.head1.weight.rows_mut().into_iter().zip(d_h1.iter()) {
        row.scaled_add(g, &pass.z);
    }
    let d_z: Array1<f64> = params.head1.weight.t().dot(&d_h1);

    // Attention: z = sum_j a_j r_j over masked-in instances.
    let reps: Vec<Array1<f64>> = match &pass.instances {
        InstanceData::Clusters(clusters) => {
            clusters.iter().map(|c| c.pooled.clone()).collect()
        }
        InstanceData::Patches(stack) => stack
            .output
            .rows()
            .into_iter()
            .map(|r| r.to_owned())
            .collect(),
    };
    let n_in = reps.len();
    let a = &pass.attention_in;

    let mut d_reps: Vec<Array1<f64>> = (0..n_in)
        .map(|j| d_z.mapv(|v| v * a[j]))
        .collect();

    if config.attention_kind != AttentionKind::Uniform {
        // Softmax backward: ds_j = a_j (da_j - sum_l a_l da_l).
        let d_a: Vec<f64> = reps.iter().map(|r| d_z.dot(r)).collect();
        let weighted_sum: f64 = a.iter().zip(&d_a).map(|(aj, dj)| aj * dj).sum();
        for j in 0..n_in {
            let d_score = a[j] * (d_a[j] - weighted_sum);
            let cache = &pass.attn[j];
            match config.attention_kind {
                AttentionKind::Plain => {
                    // s = w . tanh(V r)
                    grads.attention_w.scaled_add(d_score, &cache.tanh_v);
                    let d_tanh: Array1<f64> = params
                        .attention_w
                        .iter()
                        .zip(cache.tanh_v.iter())
                        .map(|(w, t)| d_score * w * (1.0 - t * t))
                        .collect();
                    for (mut row, &g) in grads
                        .attention_v
                        .rows_mut()
                        .into_iter()
                        .zip(d_tanh.iter())
                    {
                        row.scaled_add(g, &reps[j]);
                    }
                    d_reps[j].scaled_add(1.0, &params.attention_v.t().dot(&d_tanh));
                }
                AttentionKind::Gated => {
                    // s = w . (tanh(V r) * sigmoid(U r))
                    let g_vec = cache.sig_u.as_ref().expect("gated cache");
                    let t_vec = &cache.tanh_v;
                    for ((gw, t), g) in grads
                        .attention_w
                        .iter_mut()
                        .zip(t_vec.iter())
                        .zip(g_vec.iter())
                    {
                        *gw += d_score * t * g;
                    }
                    let d_tanh: Array1<f64> = params
                        .attention_w
                        .iter()
                        .zip(t_vec.iter())
                        .zip(g_vec.iter())
                        .map(|((w, t), g)| d_score * w * g * (1.0 - t * t))
                        .collect();
                    let d_sig: Array1<f64> = params
                        .attention_w
                        .iter()
                        .zip(t_vec.iter())
                        .zip(g_vec.iter())
                        .map(|((w, t), g)| d_score * w * t * g * (1.0 - g))
                        .collect();
                    for (mut row, &gv) in grads
                        .attention_v
                        .rows_mut()
                        .into_iter()
                        .zip(d_tanh.iter())
                    {
                        row.scaled_add(gv, &reps[j]);
                    }
                    let grad_u = grads.attention_u.as_mut().expect("gated gradients");
                    for (mut row, &gu) in grad_u.rows_mut().into_iter().zip(d_sig.iter()) {
                        row.scaled_add(gu, &reps[j]);
                    }
                    d_reps[j].scaled_add(1.0, &params.attention_v.t().dot(&d_tanh));
                    d_reps[j].scaled_add(
                        1.0,
                        &params
                            .attention_u
                            .as_ref()
                            .expect("gated params")
                            .t()
                            .dot(&d_sig),
                    );
                }
                AttentionKind::Uniform => unreachable!(),
            }
        }
    }

    // Instance representations back through pooling and the encoder stack.
    match &pass.instances {
        InstanceData::Clusters(clusters) => {
            for (cluster, d_rep) in clusters.iter().zip(d_reps) {
                let rows = cluster.stack.output.nrows();
                let cols = cluster.stack.output.ncols();
                let mut d_out = Array2::zeros((rows, cols));
                match &cluster.argmax_rows {
                    None => {
                        let scale = 1.0 / rows as f64;
                        for mut row in d_out.rows_mut() {
                            row.assign(&d_rep.mapv(|v| v * scale));
                        }
                    }
                    Some(argmax) => {
                        for (j, &src_row) in argmax.iter().enumerate() {
                            d_out[[src_row, j]] = d_rep[j];
                        }
                    }
                }
                backward_stack(params, &cluster.stack, d_out, grads);
            }
        }
        InstanceData::Patches(stack) => {
            let mut d_out = Array2::zeros(stack.output.dim());
            for (mut row, d_rep) in d_out.rows_mut().into_iter().zip(d_reps) {
                row.assign(&d_rep);
            }
            backward_stack(params, stack, d_out, grads);
        }
    }
}

/// Exact gradient of `sum_i loss_grad[i] * o_i` over a batch of patients
/// with respect to every parameter. Accumulation runs in batch order.
pub fn model_gradient(
    params: &ModelParams,
    config: &ModelConfig,
    batch: &[Vec<PhenotypeTensor>],
    loss_grad: &[f64],
) -> Result<ParamGrads> {
    params.check_shapes(config)?;
    if batch.len() != loss_grad.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} patients for {} loss gradient entries",
            batch.len(),
            loss_grad.len()
        )));
    }
    let mut grads = ModelParams::zeros(config)?;
    for (tensors, &d_risk) in batch.iter().zip(loss_grad) {
        let pass = forward_pass(params, config, tensors)?;
        backward_pass(params, config, &pass, d_risk, &mut grads);
    }
    Ok(grads)
}
