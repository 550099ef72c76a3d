//! Small hand-shaped workloads with known analytic behavior, used by the
//! test suites, the CLI and the Python smoke test.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::synthetic::{SyntheticSpec, SyntheticTask};
use crate::trace::{GradientBucketMap, LaneId, Phase, TaskKind};

pub const CPU: &str = "0";
pub const STREAM: &str = "0:7";
pub const OPTIMIZER_LAYER: &str = "optimizer";

fn cpu() -> LaneId {
    LaneId::cpu(CPU)
}

fn stream() -> LaneId {
    LaneId::gpu(STREAM)
}

/// One CPU thread launching kernels onto one stream.
#[derive(Debug, Default)]
pub struct Builder {
    pub spec: SyntheticSpec,
    corr: u64,
}

impl Builder {
    pub fn new() -> Self {
        let mut b = Builder::default();
        b.spec.lane(cpu());
        b
    }

    /// A launch call and its kernel.
    pub fn kernel(&mut self, name: &str, launch_us: f64, kernel_us: f64, tag: Option<(&str, Phase)>) -> &mut Self {
        let c = self.corr;
        self.corr += 1;
        let mut launch = SyntheticTask::new("cudaLaunchKernel", TaskKind::CpuApi, launch_us).corr(c);
        let mut kernel = SyntheticTask::new(name, TaskKind::GpuKernel, kernel_us).corr(c);
        if let Some((layer, phase)) = tag {
            launch = launch.tag(layer, phase);
            kernel = kernel.tag(layer, phase);
        }
        self.spec.lane(cpu()).push(launch);
        self.spec.lane(stream()).push(kernel);
        self
    }

    pub fn cpu(&mut self, name: &str, us: f64, tag: Option<(&str, Phase)>) -> &mut Self {
        let mut t = SyntheticTask::new(name, TaskKind::CpuOther, us);
        if let Some((layer, phase)) = tag {
            t = t.tag(layer, phase);
        }
        self.spec.lane(cpu()).push(t);
        self
    }

    pub fn sync(&mut self) -> &mut Self {
        self.spec
            .lane(cpu())
            .push(SyntheticTask::new("cudaDeviceSynchronize", TaskKind::Sync, 0.0));
        self
    }

    pub fn build(&mut self) -> SyntheticSpec {
        std::mem::take(&mut self.spec)
    }
}

/// GPU-bound: zero-cost launches feeding a serial stream of compute
/// (`sgemm`) and memory-bound (`elementwise`) kernels, after an optional
/// CPU-only prologue.
pub fn amp_gpu_bound(prologue_us: f64) -> SyntheticSpec {
    let mut b = Builder::new();
    if prologue_us > 0.0 {
        b.cpu("data_prep", prologue_us, None);
    }
    let kernels = [
        ("volta_sgemm_128x64_nn", 30.0),
        ("elementwise_kernel", 10.0),
        ("volta_sgemm_32x32_tn", 31.0),
        ("scudnn_winograd_128x128", 17.003),
        ("elementwise_add", 7.001),
        ("reduce_kernel", 3.0),
    ];
    for (name, us) in kernels {
        b.kernel(name, 0.0, us, None);
    }
    b.build()
}

/// CPU-bound: a 100 µs CPU chain fully hiding a 20 µs kernel.
pub fn amp_cpu_bound() -> SyntheticSpec {
    let mut b = Builder::new();
    b.kernel("volta_sgemm_128x64_nn", 1.0, 12.0, None)
        .kernel("elementwise_kernel", 1.0, 8.0, None)
        .cpu("aten::python_overhead", 98.0, None);
    b.build()
}

/// `n` weight-update launch/kernel pairs, then an independent CPU tail long
/// enough to hide a fused kernel.
pub fn fused_adam(n: usize, launch_us: f64, kernel_us: f64, tail_us: f64) -> SyntheticSpec {
    let mut b = Builder::new();
    b.kernel("scudnn_conv_fwd", 1.0, 20.0, Some(("conv1", Phase::Forward)));
    for _ in 0..n {
        b.kernel("adam_update_kernel", launch_us, kernel_us, Some((OPTIMIZER_LAYER, Phase::WeightUpdate)));
    }
    b.cpu("aten::host_bookkeeping", tail_us, None);
    b.build()
}

/// A layer of a [`model`]: kernel durations per phase and gradient size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kernel: String,
    pub fwd_us: f64,
    pub bwd_us: f64,
    pub grad_bytes: u64,
}

impl LayerSpec {
    pub fn new(name: &str, kernel: &str, fwd_us: f64, bwd_us: f64, grad_bytes: u64) -> Self {
        LayerSpec {
            name: name.into(),
            kernel: kernel.into(),
            fwd_us,
            bwd_us,
            grad_bytes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub layers: Vec<LayerSpec>,
    /// Launch cost, at least 1 ns so layer markers have extent.
    pub launch_us: f64,
    /// Weight-update kernels after the backward pass.
    pub wu_kernels: usize,
    pub wu_us: f64,
    /// Appends the next iteration's forward pass.
    pub next_forward: bool,
    /// One gradient bucket per this many layers (in backward order); 0 puts
    /// every layer in one bucket.
    pub layers_per_bucket: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            layers: Vec::new(),
            launch_us: 0.0,
            wu_kernels: 1,
            wu_us: 5.0,
            next_forward: false,
            layers_per_bucket: 1,
        }
    }
}

/// One training iteration of a sequential model on one CPU thread and one
/// stream, with layer markers and gradient buckets.
pub fn model(m: &ModelSpec) -> SyntheticSpec {
    let mut b = Builder::new();
    let launch_us = m.launch_us.max(0.001);
    let fwd = |b: &mut Builder| {
        for l in &m.layers {
            b.kernel(&format!("{}_fwd", l.kernel), launch_us, l.fwd_us, Some((&l.name, Phase::Forward)));
        }
    };
    fwd(&mut b);
    for l in m.layers.iter().rev() {
        b.kernel(&format!("{}_bwd", l.kernel), launch_us, l.bwd_us, Some((&l.name, Phase::Backward)));
    }
    for _ in 0..m.wu_kernels {
        b.kernel("sgd_update_kernel", launch_us, m.wu_us, Some((OPTIMIZER_LAYER, Phase::WeightUpdate)));
    }
    if m.next_forward {
        fwd(&mut b);
    }
    let mut spec = b.build();
    let mut buckets = GradientBucketMap::default();
    let per = if m.layers_per_bucket == 0 { usize::MAX } else { m.layers_per_bucket };
    for (i, l) in m.layers.iter().rev().filter(|l| l.grad_bytes > 0).enumerate() {
        let bucket = i / per;
        buckets.bucket_of_layer.insert(l.name.clone(), bucket);
        *buckets.bucket_size_bytes.entry(bucket).or_default() += l.grad_bytes;
        buckets.layer_gradient_bytes.insert(l.name.clone(), l.grad_bytes);
    }
    if !buckets.bucket_of_layer.is_empty() {
        spec.gradient_buckets = Some(buckets);
    }
    spec
}

/// Two layers trained with a parameter server: layer 2's gradient is ready
/// first, and a first-come schedule lets its pull delay layer 1's push.
pub fn p3_two_layer() -> SyntheticSpec {
    model(&ModelSpec {
        layers: vec![
            LayerSpec::new("fc1", "sgemm", 10.0, 10.0, 1_000_000),
            LayerSpec::new("fc2", "sgemm", 10.0, 10.0, 1_000_000),
        ],
        launch_us: 0.0,
        wu_kernels: 1,
        wu_us: 1.0,
        next_forward: true,
        layers_per_bucket: 1,
    })
}

/// A small convolutional network: conv → relu → pool → conv → bn → relu →
/// pool → fc.
pub fn convnet() -> ModelSpec {
    ModelSpec {
        layers: vec![
            LayerSpec::new("conv1", "scudnn_conv", 40.0, 80.0, 400_000),
            LayerSpec::new("relu1", "elementwise_relu", 6.0, 6.0, 0),
            LayerSpec::new("pool1", "pooling", 8.0, 10.0, 0),
            LayerSpec::new("conv2", "scudnn_conv", 50.0, 100.0, 800_000),
            LayerSpec::new("bn2", "batchnorm", 12.0, 14.0, 8_000),
            LayerSpec::new("relu2", "elementwise_relu", 6.0, 6.0, 0),
            LayerSpec::new("pool2", "pooling", 8.0, 10.0, 0),
            LayerSpec::new("fc", "volta_sgemm", 30.0, 60.0, 4_000_000),
        ],
        launch_us: 2.0,
        wu_kernels: 4,
        wu_us: 3.0,
        next_forward: false,
        layers_per_bucket: 2,
    }
}

/// Named fixtures, for the CLI and bindings.
pub fn named() -> BTreeMap<&'static str, SyntheticSpec> {
    BTreeMap::from([
        ("amp_gpu_bound", amp_gpu_bound(0.0)),
        ("amp_cpu_bound", amp_cpu_bound()),
        ("fused_adam", fused_adam(100, 5.0, 1.0, 200.0)),
        ("p3_two_layer", p3_two_layer()),
        ("convnet", model(&convnet())),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::generate_synthetic_trace;

    #[test]
    fn fixtures_generate() {
        for (name, spec) in named() {
            let (trace, makespan) = generate_synthetic_trace(&spec, 0).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(makespan > 0, "{name}");
            trace.validate().unwrap();
        }
    }

    #[test]
    fn shapes() {
        assert_eq!(generate_synthetic_trace(&amp_gpu_bound(0.0), 0).unwrap().1, 98_004);
        assert_eq!(generate_synthetic_trace(&amp_cpu_bound(), 0).unwrap().1, 100_000);
        assert_eq!(generate_synthetic_trace(&fused_adam(100, 5.0, 1.0, 200.0), 0).unwrap().1, 701_000);
    }
}
