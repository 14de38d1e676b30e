use std::fmt::Write as _;

use crate::data::{Checkpoint, Dataset};
use crate::error::{arg_err, Result};
use crate::inference::{
    linear_probe, per_layer_accuracy, sip_accuracy, traces_from_layers, GoodnessTrace, LayerAccuracy,
    ProbeConfig, SipInterval,
};
use crate::layers::Network;
use crate::numerics::Tensor;

const EVAL_BATCH: usize = 256;

/// Inference results for a whole dataset.
#[derive(Debug, Clone)]
pub struct ForwardSummary {
    pub traces: Vec<GoodnessTrace>,
    /// Spatially pooled post-ReLU activations of the last layer, `[N, C]`.
    pub final_preact: Tensor<f32>,
    /// Spatially pooled decoupled features of the last layer, `[N, C]`.
    pub final_decoupled: Tensor<f32>,
}

fn concat_rows(parts: &[Tensor<f32>]) -> Result<Tensor<f32>> {
    let cols = parts.first().map_or(0, |p| p.shape()[1]);
    let rows = parts.iter().map(|p| p.shape()[0]).sum();
    let data = parts.iter().flat_map(|p| p.data().iter().copied()).collect();
    Tensor::from_vec(&[rows, cols], data)
}

pub fn forward_dataset(network: &Network<f32>, data: &Dataset) -> Result<ForwardSummary> {
    let mut traces = Vec::with_capacity(data.len());
    let (mut pre, mut dec) = (Vec::new(), Vec::new());
    let ids: Vec<usize> = (0..data.len()).collect();
    for chunk in ids.chunks(EVAL_BATCH) {
        let (x, _) = data.gather(chunk)?;
        let out = network.forward(&x)?;
        traces.extend(traces_from_layers(&out.goodness)?);
        pre.push(out.final_preact);
        dec.push(out.final_decoupled);
    }
    Ok(ForwardSummary {
        traces,
        final_preact: concat_rows(&pre)?,
        final_decoupled: concat_rows(&dec)?,
    })
}

/// Evaluation of a checkpoint on one dataset.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub layer_accuracy: LayerAccuracy,
    /// Interval stored in the checkpoint, or all layers if none was selected.
    pub sip: SipInterval,
    pub sip_accuracy: f64,
    pub all_layers_accuracy: f64,
    pub last_layer_accuracy: f64,
    /// Linear probe on the last layer's pooled activations before decoupling.
    pub probe_pre_norm: Option<f64>,
    /// Linear probe on the last layer's pooled decoupled features.
    pub probe_post_norm: Option<f64>,
}

pub const REPORT_HEADER: &str = "metric,layer,level,s,e,value";

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{REPORT_HEADER}\n");
        let l = self.layer_accuracy.fine.len();
        for (layer, acc) in self.layer_accuracy.fine.data().iter().enumerate() {
            let _ = writeln!(out, "layer_accuracy,{layer},,,,{acc}");
        }
        for layer in 0..l {
            for level in 1..=self.layer_accuracy.num_levels() {
                let acc = self.layer_accuracy.at_level(layer, level);
                let _ = writeln!(out, "super_class_accuracy,{layer},{level},,,{acc}");
            }
        }
        let _ = writeln!(out, "sip_accuracy,,,{},{},{}", self.sip.s, self.sip.e, self.sip_accuracy);
        let _ = writeln!(out, "all_layers_accuracy,,,0,{},{}", l - 1, self.all_layers_accuracy);
        let _ = writeln!(out, "last_layer_accuracy,,,{0},{0},{1}", l - 1, self.last_layer_accuracy);
        if let Some(v) = self.probe_pre_norm {
            let _ = writeln!(out, "probe_pre_norm,,,,,{v}");
        }
        if let Some(v) = self.probe_post_norm {
            let _ = writeln!(out, "probe_post_norm,,,,,{v}");
        }
        out
    }
}

/// Probe accuracies on pooled final features, trained on `train` and
/// measured on `held_out`. Returns (before decoupling, after decoupling).
pub fn probe_accuracies(
    train: &ForwardSummary,
    train_labels: &[usize],
    held_out: &ForwardSummary,
    held_out_labels: &[usize],
    num_classes: usize,
    cfg: &ProbeConfig,
) -> Result<(f64, f64)> {
    let (_, pre) = linear_probe(
        (&train.final_preact, train_labels),
        (&held_out.final_preact, held_out_labels),
        num_classes,
        cfg,
    )?;
    let (_, post) = linear_probe(
        (&train.final_decoupled, train_labels),
        (&held_out.final_decoupled, held_out_labels),
        num_classes,
        cfg,
    )?;
    Ok((pre, post))
}

/// Accuracy report for `data`. Probe rows are included when `probe_train`
/// supplies the probe's training set.
pub fn evaluate(ckpt: &Checkpoint, data: &Dataset, probe_train: Option<&Dataset>) -> Result<EvalReport> {
    let net = &ckpt.network;
    if data.num_classes() != net.spec.num_classes {
        return Err(arg_err!(
            "dataset has {} classes, network {}",
            data.num_classes(),
            net.spec.num_classes
        ));
    }
    let summary = forward_dataset(net, data)?;
    let labels = data.labels();
    let l = net.num_layers();
    let layer_accuracy = per_layer_accuracy(&summary.traces, labels, &ckpt.hierarchy)?;
    let sip = ckpt.sip.unwrap_or(SipInterval {
        s: 0,
        e: l - 1,
        val_accuracy: f64::NAN,
    });
    let interval = |s, e| SipInterval { s, e, val_accuracy: f64::NAN };
    let sip_acc = sip_accuracy(&summary.traces, labels, &sip)?;
    let all_layers = sip_accuracy(&summary.traces, labels, &interval(0, l - 1))?;
    let last_layer = sip_accuracy(&summary.traces, labels, &interval(l - 1, l - 1))?;
    let (probe_pre_norm, probe_post_norm) = match probe_train {
        Some(train) => {
            let train_summary = forward_dataset(net, train)?;
            let probe_cfg = ProbeConfig {
                seed: ckpt.seed,
                ..ckpt.config.probe
            };
            let (pre, post) = probe_accuracies(
                &train_summary,
                train.labels(),
                &summary,
                labels,
                net.spec.num_classes,
                &probe_cfg,
            )?;
            (Some(pre), Some(post))
        }
        None => (None, None),
    };
    Ok(EvalReport {
        layer_accuracy,
        sip,
        sip_accuracy: sip_acc,
        all_layers_accuracy: all_layers,
        last_layer_accuracy: last_layer,
        probe_pre_norm,
        probe_post_norm,
    })
}
