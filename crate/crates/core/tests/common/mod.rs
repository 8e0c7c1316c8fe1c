//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use featreplay_core::data::{synth_gaussian_clusters, FeatureDataset, SynthConfig};
use featreplay_core::losses::{latent_loss_standard, recon_loss, LossWeights};
use featreplay_core::model::{ModelConfig, ModelState, ReconKind};
use featreplay_core::ndcore::{Graph, SeededRng, Tensor};
use featreplay_core::replay::{build_replay_batch, ReplayBatch, ReplayConfig};
use featreplay_core::trainer::{current_terms, replay_terms, ModelOptions, ScenarioConfig};

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_REL_TOL: f64 = 1e-4;
/// Denominator floor for the relative error of near-zero gradients.
pub const GRAD_FLOOR: f64 = 1e-6;

/// A small model partway into its second task, with one current batch and
/// one replay batch from its frozen predecessor.
pub struct GradCase {
    pub state: ModelState,
    pub old: ModelState,
    pub x: Tensor,
    pub labels: Vec<usize>,
    pub replay: ReplayBatch,
    pub noise_seed: u64,
    pub temperature: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Term {
    Recon,
    Latent,
    ClassCe,
    LatentMatch,
    ReplayRecon,
    ReplayLatent,
    Distill,
    LatentDistill,
}

impl Term {
    pub const ALL: [Term; 8] = [
        Term::Recon,
        Term::Latent,
        Term::ClassCe,
        Term::LatentMatch,
        Term::ReplayRecon,
        Term::ReplayLatent,
        Term::Distill,
        Term::LatentDistill,
    ];

    fn is_replay(self) -> bool {
        matches!(
            self,
            Term::ReplayRecon | Term::ReplayLatent | Term::Distill | Term::LatentDistill
        )
    }

    /// Weights that keep this term alone.
    pub fn weights(self) -> LossWeights {
        let mut w = LossWeights {
            recon: 0.0,
            latent: 0.0,
            class_ce: 0.0,
            distill: 0.0,
            latent_match: 0.0,
            latent_distill: 0.0,
        };
        match self {
            Term::Recon | Term::ReplayRecon => w.recon = 1.0,
            Term::Latent | Term::ReplayLatent => w.latent = 1.0,
            Term::ClassCe => w.class_ce = 1.0,
            Term::Distill => w.distill = 1.0,
            Term::LatentMatch => w.latent_match = 1.0,
            Term::LatentDistill => w.latent_distill = 1.0,
        }
        w
    }
}

fn perturb(state: &mut ModelState, scale: f64, rng: &mut SeededRng) {
    for p in state.params_mut() {
        for v in p.data_mut() {
            *v += scale * rng.normal();
        }
    }
}

/// Builds a random case, or `None` when some ReLU input sits too close to
/// its kink for central differences to be meaningful.
pub fn grad_case(seed: u64, recon: ReconKind) -> Option<GradCase> {
    let mut rng = SeededRng::new(seed);
    let cfg = ModelConfig {
        input_dim: 2 + rng.below(3),
        latent_dim: 1 + rng.below(3),
        hidden: vec![2 + rng.below(3)],
        n_classes: 4,
        recon,
    };
    let mut old = ModelState::new(cfg.clone(), &mut rng).unwrap();
    old.prior.activate(&[0, 1], &mut rng).unwrap();
    for v in old.prior.means.data_mut() {
        *v = rng.normal();
    }
    for v in old.prior.log_sigma.data_mut() {
        *v = 0.4 * (rng.uniform() - 0.5);
    }
    old.task = 1;
    let mut state = old.clone();
    state.prior.activate(&[2], &mut rng).unwrap();
    perturb(&mut state, 0.1, &mut rng);

    let b = 2 + rng.below(3);
    let x = Tensor::matrix(
        b,
        cfg.input_dim,
        (0..b * cfg.input_dim)
            .map(|_| match recon {
                ReconKind::Bernoulli => 0.05 + 0.9 * rng.uniform(),
                ReconKind::Gaussian => rng.normal(),
            })
            .collect(),
    )
    .unwrap();
    let labels = (0..b).map(|_| rng.below(3)).collect();
    let temperature = 0.5 + 2.5 * rng.uniform();
    let replay = build_replay_batch(
        &old,
        &ReplayConfig {
            batch_size: 2 + rng.below(3),
            n_cycles: rng.below(3),
            temperature,
        },
        &mut rng,
    )
    .unwrap();
    let case = GradCase {
        state,
        old,
        x,
        labels,
        replay,
        noise_seed: seed ^ 0x5eed,
        temperature,
    };
    (relu_margin(&case) > 1e-3).then_some(case)
}

fn min_abs(t: &Tensor) -> f64 {
    t.data().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))
}

fn sample_z(state: &ModelState, x: &Tensor, eps: &Tensor) -> Tensor {
    let (mu, logvar) = state.encode(x).unwrap();
    mu.add(&logvar.scale(0.5).unwrap().exp().unwrap().mul(eps).unwrap())
        .unwrap()
}

/// Smallest hidden pre-activation magnitude over every network pass the
/// term graphs make.
fn relu_margin(c: &GradCase) -> f64 {
    let s = &c.state;
    let d = s.latent_dim();
    let enc = |x: &Tensor| min_abs(&s.encoder.layers[0].forward(x).unwrap());
    let dec = |z: &Tensor| min_abs(&s.decoder.layers[0].forward(z).unwrap());
    let eps = SeededRng::new(c.noise_seed).normal_tensor(&[c.x.rows(), d]);
    let z = sample_z(s, &c.x, &eps);
    let x_hat = s.decode(&z).unwrap();
    let eps_r = SeededRng::new(c.noise_seed).normal_tensor(&[c.replay.len(), d]);
    let z_r = sample_z(s, &c.replay.features, &eps_r);
    [enc(&c.x), dec(&z), enc(&x_hat), enc(&c.replay.features), dec(&z_r)]
        .into_iter()
        .fold(f64::INFINITY, f64::min)
}

/// Value of one term as the trainer builds it, and optionally its gradient
/// with respect to every parameter of `state`.
pub fn term_value(state: &ModelState, c: &GradCase, term: Term, with_grad: bool) -> (f64, Vec<Tensor>) {
    let mut g = Graph::new();
    let bm = state.bind(&mut g);
    let mut rng = SeededRng::new(c.noise_seed);
    let w = term.weights();
    let composed = if term.is_replay() {
        replay_terms(&mut g, &bm, state, &c.replay, &w, c.temperature, &mut rng).unwrap()
    } else {
        current_terms(&mut g, &bm, state, &c.x, &c.labels, &w, &mut rng).unwrap()
    };
    let value = g.scalar_value(composed.total).unwrap();
    if !with_grad {
        return (value, Vec::new());
    }
    let grads = g.backward(composed.total).unwrap();
    let grads = bm
        .params()
        .into_iter()
        .zip(state.params())
        .map(|(id, p)| grads.get_or_zeros(id, p.shape()))
        .collect();
    (value, grads)
}

/// Latent matching with the first-pass posterior and sample held at their
/// values under `frozen`, evaluated directly on tensors.
pub fn frozen_match_value(state: &ModelState, frozen: &ModelState, c: &GradCase) -> f64 {
    let eps = SeededRng::new(c.noise_seed).normal_tensor(&[c.x.rows(), frozen.latent_dim()]);
    let (mu0, lv0) = frozen.encode(&c.x).unwrap();
    let z0 = sample_z(frozen, &c.x, &eps);
    let x_hat = state.decode(&z0).unwrap();
    let (mu_r, lv_r) = state.encode(&x_hat).unwrap();
    let sq: f64 = mu_r
        .data()
        .iter()
        .zip(mu0.data())
        .chain(lv_r.data().iter().zip(lv0.data()))
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    0.5 * sq / c.x.rows() as f64
}

/// Central differences of `f` over every parameter entry of `state`.
pub fn numeric_grad(state: &ModelState, f: impl Fn(&ModelState) -> f64) -> Vec<Tensor> {
    let shapes: Vec<Vec<usize>> = state.params().iter().map(|p| p.shape().to_vec()).collect();
    let mut out = Vec::with_capacity(shapes.len());
    for (pi, shape) in shapes.iter().enumerate() {
        let n: usize = shape.iter().product();
        let mut data = vec![0.0; n];
        for (k, slot) in data.iter_mut().enumerate() {
            let mut plus = state.clone();
            plus.params_mut()[pi].data_mut()[k] += FD_STEP;
            let mut minus = state.clone();
            minus.params_mut()[pi].data_mut()[k] -= FD_STEP;
            *slot = (f(&plus) - f(&minus)) / (2.0 * FD_STEP);
        }
        out.push(Tensor::new(shape.clone(), data).unwrap());
    }
    out
}

/// Largest entrywise relative error between two gradient lists.
pub fn max_rel_err(analytic: &[Tensor], numeric: &[Tensor]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .flat_map(|(a, n)| a.data().iter().zip(n.data()))
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(GRAD_FLOOR))
        .fold(0.0, f64::max)
}

/// Worst relative gradient error of `term` on `c`. Latent matching is
/// checked against the oracle that holds its first pass constant.
pub fn term_grad_error(c: &GradCase, term: Term) -> f64 {
    let (_, analytic) = term_value(&c.state, c, term, true);
    let numeric = if term == Term::LatentMatch {
        numeric_grad(&c.state, |s| frozen_match_value(s, &c.state, c))
    } else {
        numeric_grad(&c.state, |s| term_value(s, c, term, false).0)
    };
    max_rel_err(&analytic, &numeric)
}

/// Worst relative gradient error of the standard-normal KL and the
/// probability-space BCE, neither of which the trainer uses, with respect
/// to their inputs.
pub fn standalone_grad_error(seed: u64) -> f64 {
    let mut rng = SeededRng::new(seed);
    let (b, d) = (1 + rng.below(4), 1 + rng.below(4));
    let x = Tensor::matrix(b, d, (0..b * d).map(|_| rng.uniform()).collect()).unwrap();
    let inputs = [
        rng.normal_tensor(&[b, d]),
        rng.normal_tensor(&[b, d]),
        Tensor::matrix(b, d, (0..b * d).map(|_| 0.1 + 0.8 * rng.uniform()).collect()).unwrap(),
    ];
    let eval = |v: &[Tensor; 3]| {
        let mut g = Graph::new();
        let ids = [g.param(v[0].clone()), g.param(v[1].clone()), g.param(v[2].clone())];
        let xn = g.constant(x.clone());
        let kl = latent_loss_standard(&mut g, ids[0], ids[1]).unwrap();
        let bce = recon_loss(&mut g, xn, ids[2]).unwrap();
        let total = g.add(kl, bce).unwrap();
        let grads = g.backward(total).unwrap();
        (
            g.scalar_value(total).unwrap(),
            ids.map(|id| grads.get(id).unwrap().clone()),
        )
    };
    let (_, analytic) = eval(&inputs);
    let mut numeric = Vec::new();
    for (which, a) in analytic.iter().enumerate() {
        let mut data = vec![0.0; a.numel()];
        for (k, slot) in data.iter_mut().enumerate() {
            let shifted = |delta: f64| {
                let mut v = inputs.clone();
                v[which].data_mut()[k] += delta;
                eval(&v).0
            };
            *slot = (shifted(FD_STEP) - shifted(-FD_STEP)) / (2.0 * FD_STEP);
        }
        numeric.push(Tensor::new(a.shape().to_vec(), data).unwrap());
    }
    max_rel_err(&analytic, &numeric)
}

/// `KL(N(μq, vq) || N(μp, vp))` for one coordinate by composite Simpson
/// quadrature of `q log(q / p)` over `μq ± 12 σq`.
pub fn kl_quadrature(mu_q: f64, var_q: f64, mu_p: f64, var_p: f64) -> f64 {
    let sq = var_q.sqrt();
    let (a, b) = (mu_q - 12.0 * sq, mu_q + 12.0 * sq);
    let n = 20_000;
    let h = (b - a) / n as f64;
    let log_n = |z: f64, m: f64, v: f64| -0.5 * ((2.0 * std::f64::consts::PI * v).ln() + (z - m).powi(2) / v);
    let f = |z: f64| {
        let lq = log_n(z, mu_q, var_q);
        lq.exp() * (lq - log_n(z, mu_p, var_p))
    };
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// The synthetic class-incremental benchmark: 10 Gaussian classes in 20
/// dimensions, min-max normalised.
pub fn benchmark_dataset() -> FeatureDataset {
    synth_gaussian_clusters(&SynthConfig {
        classes: 10,
        dim: 20,
        per_class: 200,
        separation: 3.0,
        sigma: 1.0,
        seed: 7,
    })
    .unwrap()
    .normalize()
    .unwrap()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Finetune,
    Baseline,
    Match,
    MatchDistill,
    Full,
}

impl Variant {
    pub const ABLATION: [Variant; 4] = [Variant::Baseline, Variant::Match, Variant::MatchDistill, Variant::Full];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Finetune => "finetune",
            Variant::Baseline => "baseline",
            Variant::Match => "+latent_match",
            Variant::MatchDistill => "+latent_match+latent_distill",
            Variant::Full => "+all+cycling",
        }
    }
}

/// First task of 5 classes, then five single-class tasks.
pub fn benchmark_config(variant: Variant, seed: u64) -> ScenarioConfig {
    let mut c = ScenarioConfig::new(10, 5, 5);
    c.first_task_iters = 2000;
    c.later_task_iters = 800;
    c.batch_size = 64;
    c.adam.lr = 2e-3;
    c.model = ModelOptions {
        latent_dim: 2,
        hidden: vec![64],
        recon: ReconKind::Bernoulli,
    };
    c.log_every = 100;
    c.seed = seed;
    let (replay, matching, distill, cycles) = match variant {
        Variant::Finetune => (false, false, false, 0),
        Variant::Baseline => (true, false, false, 0),
        Variant::Match => (true, true, false, 0),
        Variant::MatchDistill => (true, true, true, 0),
        Variant::Full => (true, true, true, 10),
    };
    c.replay = replay;
    if !replay {
        c.weights.distill = 0.0;
    }
    c.weights.latent_match = if matching { 1.0 } else { 0.0 };
    c.weights.latent_distill = if distill { 1.0 } else { 0.0 };
    c.n_cycles = cycles;
    c
}
