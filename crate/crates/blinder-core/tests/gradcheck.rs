//! Central finite-difference verification of every layer kind's analytic
//! gradients. Runs in f64 so rounding noise stays far below the tolerance.

use blinder_core::nn::{Init, LayerSpec, Network};
use blinder_core::rng::Seeder;
use blinder_core::tensor::Tensor;
use rand::Rng;

const FD_STEP: f64 = 1e-4;
const TOLERANCE: f64 = 1e-4;

/// A deterministic scalar loss over the network output: a random linear term
/// plus a random quadratic term, so output gradients are non-trivial.
struct ProbeLoss {
    linear: Vec<f64>,
    quadratic: Vec<f64>,
}

impl ProbeLoss {
    fn new(len: usize, seed: u64) -> Self {
        let mut rng = Seeder::new(seed).derive("probe-loss").rng();
        ProbeLoss {
            linear: (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            quadratic: (0..len).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        }
    }

    fn value(&self, y: &Tensor<f64>) -> f64 {
        y.data()
            .iter()
            .zip(self.linear.iter().zip(&self.quadratic))
            .map(|(&v, (&l, &q))| l * v + 0.5 * q * v * v)
            .sum()
    }

    fn grad(&self, y: &Tensor<f64>) -> Tensor<f64> {
        let data = y
            .data()
            .iter()
            .zip(self.linear.iter().zip(&self.quadratic))
            .map(|(&v, (&l, &q))| l + q * v)
            .collect();
        Tensor::from_vec(y.shape().to_vec(), data).unwrap()
    }
}

fn assert_close(analytic: f64, numeric: f64, what: &str) {
    let diff = (analytic - numeric).abs();
    let scale = analytic.abs().max(numeric.abs()).max(1e-3);
    assert!(
        diff / scale <= TOLERANCE,
        "{what}: analytic={analytic} numeric={numeric} rel={}",
        diff / scale
    );
}

/// Checks every parameter gradient and every input gradient of `net` against
/// central finite differences of the probe loss.
fn check_network(specs: &[LayerSpec], input: Tensor<f64>, seed: u64) {
    let mut net = Network::<f64>::build(specs, seed).unwrap();
    let param_total: usize = net.params().scalar_count();
    assert!(param_total <= 1_000, "gradcheck nets stay small");

    let out = net.forward(&input).unwrap();
    let probe = ProbeLoss::new(out.len(), seed ^ 0xABCD);
    let bp = net.backward(&probe.grad(&out)).unwrap();

    // Parameters.
    for entry in 0..net.params().len() {
        let len = net.params().tensor(entry).len();
        let name = net.params().entries()[entry].name.clone();
        for i in 0..len {
            let orig = net.params().tensor(entry).data()[i];
            net.params_mut().tensor_mut(entry).data_mut()[i] = orig + FD_STEP;
            let plus = probe.value(&net.forward_inference(&input).unwrap());
            net.params_mut().tensor_mut(entry).data_mut()[i] = orig - FD_STEP;
            let minus = probe.value(&net.forward_inference(&input).unwrap());
            net.params_mut().tensor_mut(entry).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let analytic = bp.grads.grads[entry].tensor.data()[i];
            assert_close(analytic, numeric, &format!("{name}[{i}]"));
        }
    }

    // Input.
    let mut x = input.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + FD_STEP;
        let plus = probe.value(&net.forward_inference(&x).unwrap());
        x.data_mut()[i] = orig - FD_STEP;
        let minus = probe.value(&net.forward_inference(&x).unwrap());
        x.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        assert_close(bp.input_grad.data()[i], numeric, &format!("input[{i}]"));
    }
}

fn random_input(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = Seeder::new(seed).derive("input").rng();
    let len: usize = shape.iter().product();
    Tensor::from_vec(
        shape.to_vec(),
        (0..len).map(|_| rng.gen_range(-1.5..1.5)).collect(),
    )
    .unwrap()
}

#[test]
fn dense_leaky_relu_sigmoid_stack() {
    let specs = [
        LayerSpec::Dense {
            in_dim: 6,
            out_dim: 9,
            init: Init::He,
        },
        LayerSpec::LeakyRelu,
        LayerSpec::Dense {
            in_dim: 9,
            out_dim: 5,
            init: Init::Xavier,
        },
        LayerSpec::Sigmoid,
    ];
    check_network(&specs, random_input(&[3, 6], 11), 21);
}

#[test]
fn dense_relu_stack() {
    let specs = [
        LayerSpec::Dense {
            in_dim: 5,
            out_dim: 7,
            init: Init::He,
        },
        LayerSpec::Relu,
        LayerSpec::Dense {
            in_dim: 7,
            out_dim: 4,
            init: Init::He,
        },
    ];
    check_network(&specs, random_input(&[2, 5], 5), 33);
}

#[test]
fn conv1d_stack() {
    let specs = [
        LayerSpec::Dense {
            in_dim: 14,
            out_dim: 14,
            init: Init::Xavier,
        },
        LayerSpec::Unflatten { channels: 2 },
        LayerSpec::Conv1d {
            channels_in: 2,
            channels_out: 3,
            kernel: 3,
            stride: 2,
            init: Init::He,
        },
        LayerSpec::LeakyRelu,
        LayerSpec::Flatten,
        LayerSpec::Dense {
            in_dim: 9,
            out_dim: 4,
            init: Init::He,
        },
    ];
    check_network(&specs, random_input(&[2, 14], 17), 44);
}

#[test]
fn conv1d_transpose_stack() {
    let specs = [
        LayerSpec::Dense {
            in_dim: 8,
            out_dim: 8,
            init: Init::Xavier,
        },
        LayerSpec::Unflatten { channels: 2 },
        LayerSpec::Conv1dTranspose {
            channels_in: 2,
            channels_out: 2,
            kernel: 4,
            stride: 2,
            init: Init::He,
        },
        LayerSpec::LeakyRelu,
        LayerSpec::Flatten,
        LayerSpec::Dense {
            in_dim: 20,
            out_dim: 3,
            init: Init::He,
        },
    ];
    check_network(&specs, random_input(&[2, 8], 3), 55);
}

#[test]
fn softmax_head() {
    let specs = [
        LayerSpec::Dense {
            in_dim: 6,
            out_dim: 8,
            init: Init::He,
        },
        LayerSpec::LeakyRelu,
        LayerSpec::Dense {
            in_dim: 8,
            out_dim: 4,
            init: Init::Xavier,
        },
        LayerSpec::Softmax,
    ];
    check_network(&specs, random_input(&[3, 6], 29), 66);
}

mod composite {
    use super::{FD_STEP, assert_close};
    use blinder_core::anonymizer::{Batch, BlinderModel, LossWeights, ModelConfig};
    use blinder_core::data::{DatasetSchema, PrivateAttribute};
    use blinder_core::rng::{normal_tensor, Seeder};
    use blinder_core::tensor::Tensor;
    use rand::Rng;

    fn schema() -> DatasetSchema {
        DatasetSchema {
            channels: 1,
            window: 6,
            stride: 3,
            public_classes: 2,
            private_attributes: vec![
                PrivateAttribute { name: "a".into(), classes: 2 },
                PrivateAttribute { name: "b".into(), classes: 3 },
            ],
            magnitude_mode: false,
        }
    }

    fn config() -> ModelConfig {
        ModelConfig {
            latent_dim: 3,
            hidden: vec![7, 5],
            disc_hidden: vec![6],
            weights: LossWeights::default(),
            conv_frontend: None,
        }
    }

    fn batch(n: usize, seed: u64) -> Batch<f64> {
        let mut rng = Seeder::new(seed).derive("batch").rng();
        let dim = schema().segment_len();
        Batch {
            x: Tensor::from_vec(
                vec![n, dim],
                (0..n * dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap(),
            public: (0..n).map(|i| i % 2).collect(),
            privates: vec![(0..n).map(|i| i % 2).collect(), (0..n).map(|i| i % 3).collect()],
        }
    }

    /// The total objective (reconstruction + KL - discriminator terms) with
    /// frozen discriminators: analytic encoder/decoder gradients against
    /// central finite differences over every parameter.
    #[test]
    fn composite_total_loss_gradients() {
        let schema = schema();
        let config = config();
        let mut model = BlinderModel::<f64>::build(&schema, &config, 71).unwrap();
        let total_params = model.params().encoder.scalar_count()
            + model.params().decoder.scalar_count();
        assert!(total_params <= 1_000, "stay on small nets; {total_params}");
        let b = batch(4, 72);
        let eps = normal_tensor::<f64, _>(&[4, config.latent_dim], &mut Seeder::new(73).rng());
        let weights = LossWeights::default();

        let (_, enc_g, dec_g) = model.vae_grads(&b, &eps, &weights).unwrap();

        let loss_at = |m: &BlinderModel<f64>| m.evaluate_losses(&b, &eps, &weights).unwrap().total;

        // Encoder parameters.
        let mut params = model.params();
        for (entry, grad) in enc_g.grads.iter().enumerate() {
            for i in 0..grad.tensor.len() {
                let orig = params.encoder.tensor(entry).data()[i];
                params.encoder.tensor_mut(entry).data_mut()[i] = orig + FD_STEP;
                model.set_params(&params).unwrap();
                let plus = loss_at(&model);
                params.encoder.tensor_mut(entry).data_mut()[i] = orig - FD_STEP;
                model.set_params(&params).unwrap();
                let minus = loss_at(&model);
                params.encoder.tensor_mut(entry).data_mut()[i] = orig;
                model.set_params(&params).unwrap();
                let numeric = (plus - minus) / (2.0 * FD_STEP);
                assert_close(grad.tensor.data()[i], numeric, &format!("enc {entry}[{i}]"));
            }
        }

        // Decoder parameters.
        for (entry, grad) in dec_g.grads.iter().enumerate() {
            for i in 0..grad.tensor.len() {
                let orig = params.decoder.tensor(entry).data()[i];
                params.decoder.tensor_mut(entry).data_mut()[i] = orig + FD_STEP;
                model.set_params(&params).unwrap();
                let plus = loss_at(&model);
                params.decoder.tensor_mut(entry).data_mut()[i] = orig - FD_STEP;
                model.set_params(&params).unwrap();
                let minus = loss_at(&model);
                params.decoder.tensor_mut(entry).data_mut()[i] = orig;
                model.set_params(&params).unwrap();
                let numeric = (plus - minus) / (2.0 * FD_STEP);
                assert_close(dec_g.grads[entry].tensor.data()[i], numeric, &format!("dec {entry}[{i}]"));
            }
        }
    }

    /// Discriminator cross-entropy gradients (encoder frozen) against
    /// central finite differences.
    #[test]
    fn discriminator_loss_gradients() {
        let schema = schema();
        let config = config();
        let mut model = BlinderModel::<f64>::build(&schema, &config, 81).unwrap();
        let mut rng = Seeder::new(82).derive("z").rng();
        let z = normal_tensor::<f64, _>(&[5, config.latent_dim], &mut rng);
        let labels = vec![
            (0..5).map(|i| i % 2).collect::<Vec<_>>(),
            (0..5).map(|i| (i + 1) % 3).collect::<Vec<_>>(),
        ];

        let (_, grads) = model.disc_grads(&z, &labels).unwrap();
        let mut params = model.params();
        for j in 0..2 {
            for (entry, grad) in grads[j].grads.iter().enumerate() {
                for i in 0..grad.tensor.len() {
                    let orig = params.discriminators[j].tensor(entry).data()[i];
                    params.discriminators[j].tensor_mut(entry).data_mut()[i] = orig + FD_STEP;
                    model.set_params(&params).unwrap();
                    let plus = blinder_core::anonymizer::disc_loss(
                        &model.discriminate(&z, j).unwrap(),
                        &labels[j],
                    );
                    params.discriminators[j].tensor_mut(entry).data_mut()[i] = orig - FD_STEP;
                    model.set_params(&params).unwrap();
                    let minus = blinder_core::anonymizer::disc_loss(
                        &model.discriminate(&z, j).unwrap(),
                        &labels[j],
                    );
                    params.discriminators[j].tensor_mut(entry).data_mut()[i] = orig;
                    model.set_params(&params).unwrap();
                    let numeric = (plus - minus) / (2.0 * FD_STEP);
                    assert_close(grad.tensor.data()[i], numeric, &format!("disc{j} {entry}[{i}]"));
                }
            }
        }
    }
}

mod meta_gradient {
    use blinder_core::anonymizer::{Batch, BlinderModel, LossWeights, ModelConfig, ModelParams};
    use blinder_core::data::{DatasetSchema, PrivateAttribute};
    use blinder_core::fed::{client_meta_step, MetaStep, MetaStepResult};
    use blinder_core::rng::Seeder;
    use blinder_core::tensor::Tensor;
    use rand::Rng;

    const H: f64 = 1e-4;

    fn schema() -> DatasetSchema {
        DatasetSchema {
            channels: 1,
            window: 4,
            stride: 2,
            public_classes: 2,
            private_attributes: vec![PrivateAttribute { name: "a".into(), classes: 2 }],
            magnitude_mode: false,
        }
    }

    /// gamma = 0 detaches the discriminator from the generator adaptation,
    /// so each network group's meta gradient depends only on its own
    /// adaptation path — exactly what the Hessian correction tracks.
    fn config() -> ModelConfig {
        ModelConfig {
            latent_dim: 2,
            hidden: vec![6, 4],
            disc_hidden: vec![4],
            weights: LossWeights { alpha: 0.9, beta: 2.0, gamma: 0.0 },
            conv_frontend: None,
        }
    }

    fn batch(n: usize, seed: u64) -> Batch<f64> {
        let mut rng = Seeder::new(seed).derive("b").rng();
        Batch {
            x: Tensor::from_vec(
                vec![n, 4],
                (0..n * 4).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap(),
            public: (0..n).map(|i| i % 2).collect(),
            privates: vec![(0..n).map(|i| (i + 1) % 2).collect()],
        }
    }

    fn run(
        base: &BlinderModel<f64>,
        params: &ModelParams<f64>,
        support: &Batch<f64>,
        query: &Batch<f64>,
        second_order: bool,
    ) -> MetaStepResult<f64> {
        let mut model = base.clone();
        model.set_params(params).unwrap();
        let step = MetaStep {
            local_lr: 0.5,
            local_steps: 1,
            shadow: false,
            second_order,
        };
        let mut adapt = Seeder::new(1001).derive("adapt").rng();
        let mut qrng = Seeder::new(1002).derive("query").rng();
        client_meta_step(&model, support, query, &step, &mut adapt, &mut qrng).unwrap()
    }

    #[test]
    fn second_order_meta_gradient_matches_numeric_oracle() {
        let base = BlinderModel::<f64>::build(&schema(), &config(), 91).unwrap();
        let params = base.params();
        let support = batch(3, 92);
        let query = batch(5, 93);

        let corrected = run(&base, &params, &support, &query, true);
        let first_order = run(&base, &params, &support, &query, false);

        // Numeric oracle over the discriminator parameters: the query-set
        // discriminator loss after the full two-phase adaptation, as a
        // function of the pre-adaptation parameters.
        let mut max_second = 0.0f64;
        let mut max_first = 0.0f64;
        let mut p = params.clone();
        for entry in 0..p.discriminators[0].len() {
            for i in 0..p.discriminators[0].tensor(entry).len() {
                let orig = p.discriminators[0].tensor(entry).data()[i];
                p.discriminators[0].tensor_mut(entry).data_mut()[i] = orig + H;
                let plus = run(&base, &p, &support, &query, false).disc_query[0];
                p.discriminators[0].tensor_mut(entry).data_mut()[i] = orig - H;
                let minus = run(&base, &p, &support, &query, false).disc_query[0];
                p.discriminators[0].tensor_mut(entry).data_mut()[i] = orig;
                let numeric = (plus - minus) / (2.0 * H);
                let scale = numeric.abs().max(1e-3);
                let d2 = (corrected.grads.discriminators[0].grads[entry].tensor.data()[i]
                    - numeric)
                    .abs()
                    / scale;
                let d1 = (first_order.grads.discriminators[0].grads[entry].tensor.data()[i]
                    - numeric)
                    .abs()
                    / scale;
                max_second = max_second.max(d2);
                max_first = max_first.max(d1);
            }
        }
        assert!(max_second < 1e-3, "corrected deviation {max_second}");
        assert!(
            max_first > max_second * 5.0,
            "first-order ({max_first}) should be visibly worse than corrected ({max_second})"
        );

        // Same oracle over the encoder parameters and the query total loss.
        let mut enc_second = 0.0f64;
        let mut enc_first = 0.0f64;
        for entry in 0..p.encoder.len() {
            for i in 0..p.encoder.tensor(entry).len() {
                let orig = p.encoder.tensor(entry).data()[i];
                p.encoder.tensor_mut(entry).data_mut()[i] = orig + H;
                let plus = run(&base, &p, &support, &query, false).query_loss.total;
                p.encoder.tensor_mut(entry).data_mut()[i] = orig - H;
                let minus = run(&base, &p, &support, &query, false).query_loss.total;
                p.encoder.tensor_mut(entry).data_mut()[i] = orig;
                let numeric = (plus - minus) / (2.0 * H);
                let scale = numeric.abs().max(1e-3);
                enc_second = enc_second.max(
                    (corrected.grads.encoder.grads[entry].tensor.data()[i] - numeric).abs()
                        / scale,
                );
                enc_first = enc_first.max(
                    (first_order.grads.encoder.grads[entry].tensor.data()[i] - numeric).abs()
                        / scale,
                );
            }
        }
        assert!(enc_second < 1e-3, "corrected encoder deviation {enc_second}");
        assert!(
            enc_first > enc_second,
            "first-order encoder ({enc_first}) should be worse than corrected ({enc_second})"
        );
    }
}
