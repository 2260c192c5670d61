use candle_core::{DType, Tensor, Var};
use corgi_core::backbone::tiny::{build_tiny_snapshot, default_corpus, TinyConfig};
use corgi_core::backbone::{load_backbone, BackboneKind};
use corgi_core::encoder::{EncoderConfig, Normalizer, TrajectoryEncoder};
use corgi_core::model::{CorgiModel, Example};
use corgi_core::prompt::LossScope;
use corgi_core::synthetic::{bigger_smaller, SyntheticConfig};
use corgi_core::traj::{Split, MAX_WIDTH};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;

fn values(v: &Var) -> Vec<f64> {
    v.as_tensor().flatten_all().unwrap().to_vec1::<f64>().unwrap()
}

fn set(v: &Var, vals: Vec<f64>) {
    let t = Tensor::from_vec(vals, v.as_tensor().shape(), v.as_tensor().device()).unwrap();
    v.set(&t).unwrap();
}

#[test]
fn encoder_gradients_match_central_differences() {
    let dir = tempfile::tempdir().unwrap();
    let tiny = TinyConfig { embed_dim: 8, n_head: 2, n_layer: 1, pretrain_steps: 20, ..TinyConfig::default() };
    build_tiny_snapshot(dir.path(), &default_corpus(), &tiny).unwrap();
    let lm = load_backbone(dir.path(), BackboneKind::PretrainedCausal, 0, DType::F64).unwrap();

    let data = bigger_smaller(&SyntheticConfig::overfit());
    let cfg = EncoderConfig { n_tokens: 2, embed_dim: 8, init_std: 0.2, seed: 11, ..EncoderConfig::default() };
    let mut encoder = TrajectoryEncoder::init(&cfg, 8, DType::F64).unwrap();
    encoder.set_normalizer(Normalizer::fit(&data));
    let model = CorgiModel::new(lm, encoder, LossScope::CorrectionOnly, true).unwrap();
    let samples: Vec<_> = data.split(Split::Train).take(2).collect();
    let examples: Vec<Example> = samples.iter().map(|s| Example::of(&data, s)).collect();
    let loss = || -> f64 { model.batch_losses(&examples).unwrap().mean_all().unwrap().to_scalar::<f64>().unwrap() };

    let grads = model.batch_losses(&examples).unwrap().mean_all().unwrap().backward().unwrap();
    let vars = model.encoder().vars();
    let steps = data.student(samples[0]).len();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut checked = 0;
    for (layer, var) in vars.iter().enumerate() {
        let analytic = grads.get(var.as_tensor()).expect("every encoder var gets a gradient");
        let analytic = analytic.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let base = values(var);
        let cols = var.as_tensor().dims().last().copied().unwrap();
        let picks: Vec<usize> = (0..12)
            .map(|k| {
                if layer == 0 && k % 2 == 0 {
                    // first-layer rows fed by non-padding features
                    let row = rng.gen_range(0..steps) * MAX_WIDTH + rng.gen_range(0..2);
                    row * cols + rng.gen_range(0..cols)
                } else {
                    rng.gen_range(0..base.len())
                }
            })
            .collect();
        for i in picks {
            let mut plus = base.clone();
            plus[i] += EPS;
            set(var, plus);
            let lp = loss();
            let mut minus = base.clone();
            minus[i] -= EPS;
            set(var, minus);
            let lm_ = loss();
            set(var, base.clone());
            let numeric = (lp - lm_) / (2.0 * EPS);
            let a = analytic[i];
            let scale = a.abs().max(numeric.abs());
            if scale > 1e-7 {
                let rel = (a - numeric).abs() / scale;
                assert!(rel <= 1e-3, "var {layer} index {i}: analytic {a}, numeric {numeric}, rel {rel}");
                checked += 1;
            } else {
                assert!((a - numeric).abs() < 1e-9);
            }
        }
    }
    assert!(checked >= 30, "only {checked} coordinates had measurable gradients");
}
