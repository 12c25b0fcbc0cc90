//! Model configuration, parameter management, and per-sample gradients for
//! the 9-weighted-layer residual conv family used by all experiments.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::{sigmoid, Activation};
use crate::layers::{backward_layer, forward_layer, Cache, Layer, Value};
use crate::loss::{bce_logit_gradient, weighted_bce_sample};
use crate::tensor::Tensor3;
use crate::NnError;

/// Architecture family: a prep conv block, three downsampling stages (the
/// first two carrying residual blocks), global max pooling, and a linear
/// head. Widths, normalization groups, activation, and input shape are all
/// configurable so the same generator expresses the full-scale network and
/// tiny test-scale variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Input channels (1 for native grayscale, 3 for replicated RGB shape).
    pub input_channels: usize,
    /// Square input side length; must be ≥ 8 so three poolings stay nonempty.
    pub input_size: usize,
    /// Channel widths after the prep block and each of the three stages.
    pub stage_widths: [usize; 4],
    /// Group count for every normalization layer; must divide each width.
    pub groups_per_norm: usize,
    pub activation: Activation,
    pub num_labels: usize,
}

impl ModelConfig {
    /// Full-scale configuration: 512×512 3-channel input, widths chosen so
    /// the trainable parameter count lands at 4 922 184 (within 0.5% of the
    /// 4.9M reference), 32-way group norm, 8 labels.
    pub fn full_scale() -> Self {
        Self {
            input_channels: 3,
            input_size: 512,
            stage_widths: [64, 160, 352, 512],
            groups_per_norm: 32,
            activation: Activation::Mish,
            num_labels: 8,
        }
    }

    /// Small configuration sized for CPU test runs: single-channel input,
    /// narrow widths, 4-way group norm.
    pub fn test_scale(input_size: usize, num_labels: usize) -> Self {
        Self {
            input_channels: 1,
            input_size,
            stage_widths: [8, 8, 16, 16],
            groups_per_norm: 4,
            activation: Activation::Mish,
            num_labels,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.input_channels == 0 {
            return Err(NnError::InvalidConfig("input_channels must be ≥ 1".into()));
        }
        if self.input_size < 8 {
            return Err(NnError::InvalidConfig(format!(
                "input_size {} too small: three 2x2 poolings need ≥ 8",
                self.input_size
            )));
        }
        if self.num_labels == 0 {
            return Err(NnError::InvalidConfig("num_labels must be ≥ 1".into()));
        }
        if self.groups_per_norm == 0 {
            return Err(NnError::InvalidConfig("groups_per_norm must be ≥ 1".into()));
        }
        for (i, &w) in self.stage_widths.iter().enumerate() {
            if w == 0 {
                return Err(NnError::InvalidConfig(format!("stage width {i} is zero")));
            }
            if w % self.groups_per_norm != 0 {
                return Err(NnError::InvalidConfig(format!(
                    "stage width {w} not divisible by {} norm groups",
                    self.groups_per_norm
                )));
            }
        }
        Ok(())
    }

    /// Trainable parameter count of the generated architecture.
    pub fn param_count(&self) -> usize {
        build_layers(self).1
    }
}

fn conv_block(layers: &mut Vec<Layer>, offset: &mut usize, in_ch: usize, out_ch: usize, cfg: &ModelConfig) {
    layers.push(Layer::Conv3x3 {
        in_ch,
        out_ch,
        offset: *offset,
    });
    *offset += out_ch * in_ch * 9;
    layers.push(Layer::GroupNorm {
        channels: out_ch,
        groups: cfg.groups_per_norm,
        offset: *offset,
    });
    *offset += 2 * out_ch;
    layers.push(Layer::Act(cfg.activation));
}

fn residual_block(offset: &mut usize, ch: usize, cfg: &ModelConfig) -> Layer {
    let mut inner = Vec::new();
    conv_block(&mut inner, offset, ch, ch, cfg);
    conv_block(&mut inner, offset, ch, ch, cfg);
    Layer::Residual(inner)
}

fn build_layers(cfg: &ModelConfig) -> (Vec<Layer>, usize) {
    let [c0, c1, c2, c3] = cfg.stage_widths;
    let mut layers = Vec::new();
    let mut offset = 0usize;
    conv_block(&mut layers, &mut offset, cfg.input_channels, c0, cfg);
    conv_block(&mut layers, &mut offset, c0, c1, cfg);
    layers.push(Layer::MaxPool2);
    layers.push(residual_block(&mut offset, c1, cfg));
    conv_block(&mut layers, &mut offset, c1, c2, cfg);
    layers.push(Layer::MaxPool2);
    layers.push(residual_block(&mut offset, c2, cfg));
    conv_block(&mut layers, &mut offset, c2, c3, cfg);
    layers.push(Layer::MaxPool2);
    layers.push(Layer::GlobalMaxPool);
    layers.push(Layer::Linear {
        in_f: c3,
        out_f: cfg.num_labels,
        offset,
    });
    offset += cfg.num_labels * c3 + cfg.num_labels;
    (layers, offset)
}

/// Un-aggregated gradients: one flat row per sample, row i being exactly the
/// gradient of sample i's loss alone.
#[derive(Debug, Clone, PartialEq)]
pub struct PerSampleGradients {
    pub batch_size: usize,
    pub param_count: usize,
    /// Row-major batch_size × param_count matrix.
    pub values: Vec<f64>,
}

impl PerSampleGradients {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.param_count..(i + 1) * self.param_count]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.param_count.max(1))
    }
}

/// An input volume paired with its 0/1 multi-label targets.
#[derive(Debug, Clone)]
pub struct LabeledSample {
    pub image: Tensor3,
    pub targets: Vec<f64>,
}

/// A network instance: immutable topology plus a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    layers: Vec<Layer>,
    params: Vec<f64>,
    master_seed: u64,
}

impl Model {
    /// Builds the architecture and initializes weights deterministically
    /// from `master_seed` (He-style normal fan-in scaling for conv/linear,
    /// identity affine for the norms, zero biases).
    pub fn new(config: ModelConfig, master_seed: u64) -> Result<Self, NnError> {
        config.validate()?;
        let (layers, count) = build_layers(&config);
        let mut params = vec![0.0; count];
        let mut rng = rngutil::substream(master_seed, "init", 0);
        init_layers(&layers, &mut params, &mut rng);
        Ok(Self {
            config,
            layers,
            params,
            master_seed,
        })
    }

    /// Rebuilds a model around an existing parameter vector (e.g. loaded
    /// from a checkpoint).
    pub fn with_params(
        config: ModelConfig,
        params: Vec<f64>,
        master_seed: u64,
    ) -> Result<Self, NnError> {
        config.validate()?;
        let (layers, count) = build_layers(&config);
        if params.len() != count {
            return Err(NnError::ParamLength {
                expected: count,
                got: params.len(),
            });
        }
        Ok(Self {
            config,
            layers,
            params,
            master_seed,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<(), NnError> {
        if params.len() != self.params.len() {
            return Err(NnError::ParamLength {
                expected: self.params.len(),
                got: params.len(),
            });
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    fn check_input(&self, image: &Tensor3) -> Result<(), NnError> {
        if image.channels() != self.config.input_channels
            || image.height() != self.config.input_size
            || image.width() != self.config.input_size
        {
            return Err(NnError::ShapeMismatch(format!(
                "model expects {}x{}x{} input, got {}x{}x{}",
                self.config.input_channels,
                self.config.input_size,
                self.config.input_size,
                image.channels(),
                image.height(),
                image.width()
            )));
        }
        Ok(())
    }

    fn forward_cached(&self, image: &Tensor3) -> Result<(Vec<f64>, Vec<Cache>), NnError> {
        self.check_input(image)?;
        let mut v = Value::Spatial(image.clone());
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (nv, c) = forward_layer(layer, &self.params, v)?;
            v = nv;
            caches.push(c);
        }
        match v {
            Value::Flat(logits) => Ok((logits, caches)),
            Value::Spatial(_) => Err(NnError::ShapeMismatch(
                "network did not reduce to a flat output".into(),
            )),
        }
    }

    /// Raw pre-sigmoid outputs for one sample.
    pub fn logits(&self, image: &Tensor3) -> Result<Vec<f64>, NnError> {
        Ok(self.forward_cached(image)?.0)
    }

    /// Per-label probabilities (sigmoid of the logits) for one sample.
    pub fn predict(&self, image: &Tensor3) -> Result<Vec<f64>, NnError> {
        Ok(self.logits(image)?.into_iter().map(sigmoid).collect())
    }

    /// Probabilities for a whole batch; rows keep the input order regardless
    /// of how the work is scheduled across threads.
    pub fn predict_batch(&self, images: &[Tensor3]) -> Result<Vec<Vec<f64>>, NnError> {
        images.par_iter().map(|im| self.predict(im)).collect()
    }

    /// Gradient of one sample's loss w.r.t. all parameters, plus the loss.
    fn sample_gradient(
        &self,
        sample: &LabeledSample,
        pos_weights: &[f64],
        index: usize,
    ) -> Result<(Vec<f64>, f64), NnError> {
        let (logits, caches) = self.forward_cached(&sample.image)?;
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite {
                context: format!("logits of sample {index}"),
            });
        }
        let probs: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
        let loss = weighted_bce_sample(&probs, &sample.targets, pos_weights)?;
        let dz = bce_logit_gradient(&probs, &sample.targets, pos_weights);

        let mut grad = vec![0.0; self.params.len()];
        let mut v = Value::Flat(dz);
        for (layer, cache) in self.layers.iter().zip(&caches).rev() {
            v = backward_layer(layer, &self.params, cache, v, &mut grad)?;
        }
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite {
                context: format!("gradient of sample {index}"),
            });
        }
        Ok((grad, loss))
    }

    /// Per-sample gradient matrix and per-sample losses for a batch. Rows
    /// are computed independently (possibly in parallel) and assembled in
    /// input order, so results are identical for any worker-thread count.
    pub fn per_sample_gradients(
        &self,
        batch: &[LabeledSample],
        pos_weights: &[f64],
    ) -> Result<(PerSampleGradients, Vec<f64>), NnError> {
        let results: Vec<(Vec<f64>, f64)> = batch
            .par_iter()
            .enumerate()
            .map(|(i, s)| self.sample_gradient(s, pos_weights, i))
            .collect::<Result<_, _>>()?;
        let param_count = self.params.len();
        let mut values = Vec::with_capacity(batch.len() * param_count);
        let mut losses = Vec::with_capacity(batch.len());
        for (row, loss) in results {
            values.extend_from_slice(&row);
            losses.push(loss);
        }
        Ok((
            PerSampleGradients {
                batch_size: batch.len(),
                param_count,
                values,
            },
            losses,
        ))
    }

    /// Mean-loss batch gradient: per-sample rows reduced in input order
    /// (bit-stable across thread counts), divided by the batch size.
    pub fn batch_gradient(
        &self,
        batch: &[LabeledSample],
        pos_weights: &[f64],
    ) -> Result<(Vec<f64>, f64), NnError> {
        if batch.is_empty() {
            return Err(NnError::ShapeMismatch("gradient of an empty batch".into()));
        }
        let (grads, losses) = self.per_sample_gradients(batch, pos_weights)?;
        let mut mean = vec![0.0; grads.param_count];
        for row in grads.rows() {
            for (m, g) in mean.iter_mut().zip(row) {
                *m += g;
            }
        }
        let b = batch.len() as f64;
        for m in &mut mean {
            *m /= b;
        }
        let loss = losses.iter().sum::<f64>() / b;
        Ok((mean, loss))
    }
}

fn init_layers(layers: &[Layer], params: &mut [f64], rng: &mut rngutil::Substream) {
    for layer in layers {
        match layer {
            Layer::Conv3x3 {
                in_ch,
                out_ch,
                offset,
            } => {
                let std = (2.0 / (in_ch * 9) as f64).sqrt();
                for p in &mut params[*offset..*offset + out_ch * in_ch * 9] {
                    let z: f64 = StandardNormal.sample(rng);
                    *p = z * std;
                }
            }
            Layer::GroupNorm {
                channels, offset, ..
            } => {
                for p in &mut params[*offset..*offset + *channels] {
                    *p = 1.0;
                }
                // beta stays zero
            }
            Layer::Linear { in_f, out_f, offset } => {
                let std = (2.0 / *in_f as f64).sqrt();
                for p in &mut params[*offset..*offset + out_f * in_f] {
                    let z: f64 = StandardNormal.sample(rng);
                    *p = z * std;
                }
                // bias stays zero
            }
            Layer::Residual(inner) => init_layers(inner, params, rng),
            Layer::Act(_) | Layer::MaxPool2 | Layer::GlobalMaxPool => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_scale_param_count_within_two_percent_of_reference() {
        let cfg = ModelConfig::full_scale();
        let count = cfg.param_count();
        assert_eq!(count, 4_922_184);
        let rel = (count as f64 - 4.9e6).abs() / 4.9e6;
        assert!(rel <= 0.02, "relative deviation {rel}");
    }

    #[test]
    fn widths_not_divisible_by_groups_rejected() {
        let mut cfg = ModelConfig::test_scale(16, 3);
        cfg.stage_widths = [6, 8, 16, 16];
        assert!(matches!(
            Model::new(cfg, 0),
            Err(NnError::InvalidConfig(_))
        ));
    }

    #[test]
    fn tiny_inputs_rejected() {
        let cfg = ModelConfig::test_scale(7, 2);
        assert!(Model::new(cfg, 0).is_err());
    }

    #[test]
    fn zero_weights_give_coin_flip_probabilities() {
        let cfg = ModelConfig::test_scale(8, 4);
        let mut model = Model::new(cfg, 7).unwrap();
        let zeros = vec![0.0; model.param_count()];
        model.set_params(&zeros).unwrap();
        let image = Tensor3::from_vec(1, 8, 8, (0..64).map(|i| i as f64 * 0.1).collect()).unwrap();
        let probs = model.predict(&image).unwrap();
        assert_eq!(probs.len(), 4);
        for p in probs {
            assert!((p - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let cfg = ModelConfig::test_scale(8, 2);
        let a = Model::new(cfg, 42).unwrap();
        let b = Model::new(cfg, 42).unwrap();
        let c = Model::new(cfg, 43).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn identical_inputs_give_identical_rows_in_any_order() {
        let cfg = ModelConfig::test_scale(8, 2);
        let model = Model::new(cfg, 3).unwrap();
        let im1 =
            Tensor3::from_vec(1, 8, 8, (0..64).map(|i| (i as f64).sin()).collect()).unwrap();
        let im2 =
            Tensor3::from_vec(1, 8, 8, (0..64).map(|i| (i as f64).cos()).collect()).unwrap();
        let out = model
            .predict_batch(&[im1.clone(), im2.clone(), im1.clone()])
            .unwrap();
        assert_eq!(out[0], out[2]);
        // Permuting the batch permutes outputs identically.
        let permuted = model.predict_batch(&[im2, im1]).unwrap();
        assert_eq!(permuted[0], out[1]);
        assert_eq!(permuted[1], out[0]);
    }

    #[test]
    fn per_sample_rows_are_independent() {
        // Zeroing sample j's input changes only row j.
        let cfg = ModelConfig::test_scale(8, 2);
        let model = Model::new(cfg, 11).unwrap();
        let mk = |scale: f64| {
            Tensor3::from_vec(1, 8, 8, (0..64).map(|i| scale * ((i * 7 % 13) as f64 - 6.0)).collect())
                .unwrap()
        };
        let weights = [1.0, 2.0];
        let batch: Vec<LabeledSample> = (0..3)
            .map(|i| LabeledSample {
                image: mk(1.0 + i as f64),
                targets: vec![(i % 2) as f64, 1.0],
            })
            .collect();
        let mut zeroed = batch.clone();
        zeroed[1].image = Tensor3::zeros(1, 8, 8);
        let (g1, _) = model.per_sample_gradients(&batch, &weights).unwrap();
        let (g2, _) = model.per_sample_gradients(&zeroed, &weights).unwrap();
        assert_eq!(g1.row(0), g2.row(0));
        assert_eq!(g1.row(2), g2.row(2));
        assert_ne!(g1.row(1), g2.row(1));
    }

    #[test]
    fn batch_gradient_is_mean_of_rows() {
        let cfg = ModelConfig::test_scale(8, 3);
        let model = Model::new(cfg, 5).unwrap();
        let weights = [1.0, 1.5, 0.5];
        let batch: Vec<LabeledSample> = (0..4)
            .map(|i| LabeledSample {
                image: Tensor3::from_vec(
                    1,
                    8,
                    8,
                    (0..64).map(|j| ((i * 64 + j) as f64 * 0.37).sin()).collect(),
                )
                .unwrap(),
                targets: vec![(i % 2) as f64, ((i + 1) % 2) as f64, 1.0],
            })
            .collect();
        let (rows, _) = model.per_sample_gradients(&batch, &weights).unwrap();
        let (mean, _) = model.batch_gradient(&batch, &weights).unwrap();
        for k in 0..mean.len() {
            let direct: f64 = (0..4).map(|i| rows.row(i)[k]).sum::<f64>() / 4.0;
            assert!((mean[k] - direct).abs() <= 1e-10 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn nonfinite_parameters_are_reported() {
        let cfg = ModelConfig::test_scale(8, 2);
        let mut model = Model::new(cfg, 1).unwrap();
        let n = model.param_count();
        model.params_mut()[n / 2] = f64::NAN;
        let sample = LabeledSample {
            image: Tensor3::from_vec(1, 8, 8, vec![0.5; 64]).unwrap(),
            targets: vec![1.0, 0.0],
        };
        let err = model
            .per_sample_gradients(std::slice::from_ref(&sample), &[1.0, 1.0])
            .unwrap_err();
        assert!(matches!(err, NnError::NonFinite { .. }), "{err}");
    }
}
