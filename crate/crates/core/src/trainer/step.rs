//! One optimisation step: graph construction for the current and replay
//! batches, backward pass and Adam update.

use crate::error::{Error, Result};
use crate::losses::{
    class_loss, compose_current, compose_replay, compose_total, distill_loss, latent_distill_loss, latent_loss_hard,
    latent_loss_soft, latent_match_loss, recon_loss_logits, Composed, LossReport, LossWeights, PriorNodes, TermNodes,
};
use crate::model::{BoundModel, ModelState, ReconKind};
use crate::ndcore::{AdamState, Graph, NodeId, SeededRng, Tensor};
use crate::replay::ReplayBatch;

/// Decoder output in feature space: sigmoid for Bernoulli, identity for
/// Gaussian.
fn decoded(g: &mut Graph, logits: NodeId, kind: ReconKind) -> Result<NodeId> {
    match kind {
        ReconKind::Bernoulli => g.sigmoid(logits),
        ReconKind::Gaussian => Ok(logits),
    }
}

fn prior_nodes(bm: &BoundModel) -> PriorNodes {
    PriorNodes {
        means: bm.prior_means,
        log_sigma: bm.prior_log_sigma,
    }
}

/// `L_current` on labelled data of the task being learned.
pub fn current_terms(
    g: &mut Graph,
    bm: &BoundModel,
    state: &ModelState,
    x: &Tensor,
    labels: &[usize],
    weights: &LossWeights,
    rng: &mut SeededRng,
) -> Result<Composed> {
    let seen = state.seen();
    let xn = g.constant(x.clone());
    let (mu, logvar) = bm.encode(g, xn)?;
    let eps = g.constant(rng.normal_tensor(g.value(mu).shape()));
    let z = bm.reparameterize(g, mu, logvar, eps)?;
    let logits = bm.decode_logits(g, z)?;

    let mut t = TermNodes {
        recon: Some(recon_loss_logits(g, xn, logits, bm.recon)?),
        latent: Some(latent_loss_hard(g, mu, logvar, labels, prior_nodes(bm), seen)?),
        ..Default::default()
    };
    let cls = bm.classifier_logits(g, z)?;
    t.class_ce = Some(class_loss(g, cls, labels, seen)?);
    if weights.latent_match != 0.0 {
        // The match branch starts from a constant z so its gradient reaches
        // the decoder and the second encoder pass only.
        let z_const = g.detach(z);
        let logits_const = bm.decode_logits(g, z_const)?;
        let x_hat = decoded(g, logits_const, bm.recon)?;
        let (mu_r, logvar_r) = bm.encode(g, x_hat)?;
        t.latent_match = Some(latent_match_loss(g, mu, logvar, mu_r, logvar_r)?);
    }
    compose_current(g, &t, weights)
}

/// `L_replay` on a generated batch labelled by the previous model.
pub fn replay_terms(
    g: &mut Graph,
    bm: &BoundModel,
    state: &ModelState,
    batch: &ReplayBatch,
    weights: &LossWeights,
    temperature: f64,
    rng: &mut SeededRng,
) -> Result<Composed> {
    let xn = g.constant(batch.features.clone());
    let (mu, logvar) = bm.encode(g, xn)?;
    let eps = g.constant(rng.normal_tensor(g.value(mu).shape()));
    let z = bm.reparameterize(g, mu, logvar, eps)?;
    let logits = bm.decode_logits(g, z)?;

    let mut t = TermNodes {
        recon: Some(recon_loss_logits(g, xn, logits, bm.recon)?),
        latent: Some(latent_loss_soft(
            g,
            mu,
            logvar,
            &batch.targets,
            prior_nodes(bm),
            state.seen(),
            eps,
        )?),
        ..Default::default()
    };
    let cls = bm.classifier_logits(g, z)?;
    // The student's softmax runs over every class it has seen, so mass it
    // puts on the newest classes is penalised on replayed samples.
    let targets = batch.targets.extend_to(&state.seen_vec())?;
    t.distill = Some(distill_loss(g, cls, &targets, temperature)?);
    if weights.latent_distill != 0.0 {
        let mu_old = g.constant(batch.old_mu.clone());
        let lv_old = g.constant(batch.old_logvar.clone());
        t.latent_distill = Some(latent_distill_loss(g, mu, logvar, mu_old, lv_old)?);
    }
    compose_replay(g, &t, weights)
}

/// Builds `L_total`, differentiates it and applies one Adam update to every
/// model parameter. Nothing is written when the loss is not finite.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    state: &mut ModelState,
    adam: &mut AdamState,
    x: &Tensor,
    labels: &[usize],
    replay: Option<&ReplayBatch>,
    weights: &LossWeights,
    temperature: f64,
    rng: &mut SeededRng,
) -> Result<LossReport> {
    let mut g = Graph::new();
    let bm = state.bind(&mut g);
    let current = current_terms(&mut g, &bm, state, x, labels, weights, rng)?;
    let replayed = match replay {
        Some(b) => Some(replay_terms(&mut g, &bm, state, b, weights, temperature, rng)?),
        None => None,
    };
    let total = compose_total(&mut g, &current, replayed.as_ref())?;
    if !total.report.is_finite() {
        return Err(Error::NonFinite { op: "loss" });
    }
    let grads = g.backward(total.total)?;
    let grads: Vec<Tensor> = bm
        .params()
        .into_iter()
        .zip(state.params())
        .map(|(id, p)| grads.get_or_zeros(id, p.shape()))
        .collect();
    adam.step(&mut state.params_mut(), &grads)?;
    Ok(total.report)
}
