//! Finite-difference checks of every hand-written gradient.

use hdbn::emotion_led::{led_backward, led_forward, InferenceNets, LedNoise, LedOptions, LedRecord, LedWeights};
use hdbn::mood_model::{bnn_shape, BnnPosterior, Example, WeightPrior};
use hdbn::numerics::{grad_check, softmax, Activation, MlpShape, Rng};

const TOL: f64 = 1e-4;
/// Central-difference step. Smaller steps lose the comparison to roundoff in
/// the O(1) loss values.
const STEP: f64 = 1e-5;

fn random_simplex(rng: &mut Rng, n: usize) -> Vec<f64> {
    softmax(&rng.normal_vec(n).iter().map(|x| 2.0 * x).collect::<Vec<_>>())
}

fn bnn_batch(rng: &mut Rng, n: usize, dim: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let inputs = (0..n).map(|_| rng.normal_vec(dim)).collect();
    let targets = (0..n).map(|_| random_simplex(rng, 9)).collect();
    (inputs, targets)
}

fn check_bnn(shape: MlpShape, alpha: f64, prior_anchor: bool, stochastic: bool) {
    let mut rng = Rng::new(21);
    let n = shape.num_params();
    let mu = shape.init_params(&mut rng);
    let rho: Vec<f64> = (0..n).map(|_| -3.0 + 0.5 * rng.normal()).collect();
    let post = BnnPosterior::from_parts(shape.clone(), mu, rho).unwrap();
    let anchor_mu: Vec<f64> = post.mu().iter().map(|m| m + 0.05 * rng.normal()).collect();
    let anchor_rho: Vec<f64> = post.rho().iter().map(|r| r + 0.3).collect();
    let anchor = BnnPosterior::from_parts(shape.clone(), anchor_mu, anchor_rho).unwrap();
    let (inputs, targets) = bnn_batch(&mut rng, 16, shape.input_dim());
    let batch: Vec<Example> = inputs
        .iter()
        .zip(&targets)
        .map(|(i, t)| Example { input: i, target: t })
        .collect();
    let eps = rng.normal_vec(n);
    let mut params = post.mu().to_vec();
    params.extend_from_slice(post.rho());
    let prior = if prior_anchor { WeightPrior::Anchor(&anchor) } else { WeightPrior::StandardNormal };
    let report = grad_check(
        |p| {
            let q = BnnPosterior::from_parts(post.shape().clone(), p[..n].to_vec(), p[n..].to_vec()).unwrap();
            let (loss, g) = q.objective(&batch, prior, alpha, stochastic.then_some(eps.as_slice())).unwrap();
            let mut flat = g.mu;
            flat.extend(g.rho);
            (loss.total, flat)
        },
        &params,
        STEP,
    );
    assert!(report.max_rel_error < TOL, "{report:?}");
}

#[test]
fn pretraining_objective_gradient() {
    check_bnn(bnn_shape(16), 1e-5, false, true);
}

#[test]
fn finetuning_objective_gradient() {
    check_bnn(bnn_shape(16), 1e-5, true, true);
}

#[test]
fn deterministic_objective_gradient() {
    check_bnn(bnn_shape(16), 1e-5, false, false);
}

/// A small network keeps the weight-KL sum O(1) so its gradient can be
/// checked at full weight.
#[test]
fn weight_kl_dominated_gradients() {
    let small = MlpShape::new(&[4, 5, 9], Activation::Relu, Activation::Identity);
    check_bnn(small.clone(), 1.0, false, true);
    check_bnn(small, 1.0, true, true);
}

struct LedFixture {
    nets: InferenceNets,
    users: Vec<Vec<f64>>,
    tags: Vec<Vec<f64>>,
    owner: Vec<usize>,
    noise: LedNoise,
}

fn led_fixture() -> LedFixture {
    let mut rng = Rng::new(77);
    let mut nets = InferenceNets::new(64, 16, 16, &mut rng);
    // Move the zero-initialized heads so every branch carries gradient.
    for net in [&mut nets.theta1, &mut nets.theta2] {
        for p in net.params.iter_mut() {
            *p += 0.1 * rng.normal();
        }
    }
    let users: Vec<Vec<f64>> = (0..5).map(|_| rng.normal_vec(64).iter().map(|x| 0.3 * x).collect()).collect();
    let tags: Vec<Vec<f64>> = (0..16).map(|_| rng.normal_vec(16)).collect();
    let owner: Vec<usize> = (0..16).map(|i| i % 5).collect();
    let noise = LedNoise::draw(5, 16, 16, &mut rng);
    LedFixture {
        nets,
        users,
        tags,
        owner,
        noise,
    }
}

fn led_loss(f: &LedFixture, nets: &InferenceNets, users: &[Vec<f64>], w: LedWeights, opts: LedOptions) -> (f64, hdbn::emotion_led::NetGrads, Vec<Vec<f64>>) {
    let refs: Vec<&[f64]> = users.iter().map(Vec::as_slice).collect();
    let recs: Vec<LedRecord> = f
        .owner
        .iter()
        .zip(&f.tags)
        .map(|(&u, s)| LedRecord { user: u, s })
        .collect();
    let pass = led_forward(nets, &refs, &recs, Some(&f.noise), opts).unwrap();
    let l = pass.losses;
    let value = w.kl1 * l.kl1 + w.kl2 * l.kl2 + w.mse1 * l.mse1 + w.mse2 * l.mse2;
    let mut grads = nets.zero_grads();
    let mut du = vec![vec![0.0; 64]; users.len()];
    led_backward(nets, &pass, w, None, &mut grads, &mut du);
    (value, grads, du)
}

fn with_params(nets: &InferenceNets, p: &[f64]) -> InferenceNets {
    let mut n = nets.clone();
    let mut off = 0;
    for net in [&mut n.theta1, &mut n.theta2, &mut n.phi1, &mut n.phi2] {
        let len = net.params.len();
        net.params.copy_from_slice(&p[off..off + len]);
        off += len;
    }
    n
}

#[test]
fn led_terms_gradients() {
    let f = led_fixture();
    let one_hot = [
        LedWeights { kl1: 1.0, ..Default::default() },
        LedWeights { kl2: 1.0, ..Default::default() },
        LedWeights { mse1: 1.0, ..Default::default() },
        LedWeights { mse2: 1.0, ..Default::default() },
    ];
    for opts in [
        LedOptions::default(),
        LedOptions { across_users: false, within_user: true },
    ] {
        for w in one_hot {
            let mut params = Vec::new();
            for net in [&f.nets.theta1, &f.nets.theta2, &f.nets.phi1, &f.nets.phi2] {
                params.extend_from_slice(&net.params);
            }
            let report = grad_check(
                |p| {
                    let nets = with_params(&f.nets, p);
                    let (v, g, _) = led_loss(&f, &nets, &f.users, w, opts);
                    (v, g.flatten())
                },
                &params,
                STEP,
            );
            assert!(report.max_rel_error < TOL, "{w:?} {opts:?}: {report:?}");

            let flat_users: Vec<f64> = f.users.iter().flatten().copied().collect();
            let report = grad_check(
                |p| {
                    let users: Vec<Vec<f64>> = p.chunks(64).map(<[f64]>::to_vec).collect();
                    let (v, _, du) = led_loss(&f, &f.nets, &users, w, opts);
                    (v, du.concat())
                },
                &flat_users,
                STEP,
            );
            assert!(report.max_rel_error < TOL, "user embeddings {w:?} {opts:?}: {report:?}");
        }
    }
}
