//! Loss terms and their composition into the current, replay and total
//! objectives.
//!
//! Every term is oriented as a quantity to minimize and is reduced by summing
//! over feature/latent dimensions and averaging over the batch.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ReconKind, LOG_SIGMA_MAX, LOG_SIGMA_MIN};
use crate::ndcore::{Graph, NodeId, Tensor};

/// Log-probability substituted for zero soft-target mass in the mixture.
const LOG_ZERO_MASS: f64 = -745.0;

/// Temperature-softened class distribution produced by a previous model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftTarget {
    pub classes: Vec<usize>,
    pub probs: Vec<f64>,
    pub temperature: f64,
}

/// A batch of soft targets over one shared class list.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftTargets {
    /// Class id of each column of `probs`.
    pub classes: Vec<usize>,
    /// `[batch, classes.len()]`
    pub probs: Tensor,
    pub temperature: f64,
}

impl SoftTargets {
    pub fn new(classes: Vec<usize>, probs: Tensor, temperature: f64) -> Result<Self> {
        let st = Self {
            classes,
            probs,
            temperature,
        };
        st.validate()?;
        Ok(st)
    }

    pub fn validate(&self) -> Result<()> {
        let (r, c) = self.probs.dims2()?;
        if c != self.classes.len() {
            return Err(Error::dim("soft_targets", self.probs.shape(), &[self.classes.len()]));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::domain("soft_targets", "temperature must be positive"));
        }
        for i in 0..r {
            let row = self.probs.row(i);
            if row.iter().any(|&p| p < 0.0) {
                return Err(Error::domain("soft_targets", format!("negative mass in row {i}")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::domain("soft_targets", format!("row {i} sums to {s}")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.probs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> SoftTarget {
        SoftTarget {
            classes: self.classes.clone(),
            probs: self.probs.row(i).to_vec(),
            temperature: self.temperature,
        }
    }

    /// Same distributions over a superset of classes, with zero mass on the
    /// added ones. Column order follows `classes`.
    pub fn extend_to(&self, classes: &[usize]) -> Result<Self> {
        let pos: Vec<usize> = self
            .classes
            .iter()
            .map(|c| classes.iter().position(|k| k == c).ok_or(Error::UnseenClass(*c)))
            .collect::<Result<_>>()?;
        let (b, _) = self.probs.dims2()?;
        let mut data = vec![0.0; b * classes.len()];
        for i in 0..b {
            for (j, &p) in pos.iter().enumerate() {
                data[i * classes.len() + p] = self.probs.get(i, j);
            }
        }
        Self::new(
            classes.to_vec(),
            Tensor::matrix(b, classes.len(), data)?,
            self.temperature,
        )
    }

    /// Batch of one-hot targets, mostly for tests.
    pub fn one_hot(classes: Vec<usize>, labels: &[usize], temperature: f64) -> Result<Self> {
        let mut data = vec![0.0; labels.len() * classes.len()];
        for (i, y) in labels.iter().enumerate() {
            let j = classes.iter().position(|c| c == y).ok_or(Error::UnseenClass(*y))?;
            data[i * classes.len() + j] = 1.0;
        }
        let probs = Tensor::matrix(labels.len(), classes.len(), data)?;
        Self::new(classes, probs, temperature)
    }
}

/// Graph handles for the class prior table.
#[derive(Clone, Copy, Debug)]
pub struct PriorNodes {
    pub means: NodeId,
    pub log_sigma: NodeId,
}

fn per_sample_mean(g: &mut Graph, per_elem: NodeId) -> Result<NodeId> {
    let rows = g.sum_rows(per_elem)?;
    g.mean(rows)
}

/// Binary cross-entropy between targets `x ∈ [0,1]` and reconstructions
/// `x̂ ∈ (0,1)`.
pub fn recon_loss(g: &mut Graph, x: NodeId, x_hat: NodeId) -> Result<NodeId> {
    check_unit_interval(g.value(x))?;
    let log_p = g.log(x_hat)?;
    let one_minus = g.scale(x_hat, -1.0)?;
    let one_minus = g.add_scalar(one_minus, 1.0)?;
    let log_q = g.log(one_minus)?;
    let xc = g.constant(g.value(x).map(|v| 1.0 - v));
    let a = g.mul(x, log_p)?;
    let b = g.mul(xc, log_q)?;
    let ll = g.add(a, b)?;
    let nll = g.scale(ll, -1.0)?;
    per_sample_mean(g, nll)
}

/// Reconstruction loss from decoder pre-activations. For the Bernoulli case
/// this is BCE with logits, `softplus(l) - x·l`, which never takes the log
/// of a saturated sigmoid.
pub fn recon_loss_logits(g: &mut Graph, x: NodeId, logits: NodeId, kind: ReconKind) -> Result<NodeId> {
    match kind {
        ReconKind::Bernoulli => {
            check_unit_interval(g.value(x))?;
            let sp = g.softplus(logits)?;
            let xl = g.mul(x, logits)?;
            let per = g.sub(sp, xl)?;
            per_sample_mean(g, per)
        }
        ReconKind::Gaussian => {
            let diff = g.sub(x, logits)?;
            let sq = g.square(diff)?;
            let half = g.scale(sq, 0.5)?;
            per_sample_mean(g, half)
        }
    }
}

fn check_unit_interval(x: &Tensor) -> Result<()> {
    match x.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        Some(bad) => Err(Error::domain("recon_loss", format!("target {bad} outside [0, 1]"))),
        None => Ok(()),
    }
}

/// `KL(N(μ, σ²) || N(0, I)) = ½ Σ (μ² + σ² - log σ² - 1)`.
pub fn latent_loss_standard(g: &mut Graph, mu: NodeId, logvar: NodeId) -> Result<NodeId> {
    let mu2 = g.square(mu)?;
    let var = g.exp(logvar)?;
    let a = g.add(mu2, var)?;
    let b = g.sub(a, logvar)?;
    let c = g.add_scalar(b, -1.0)?;
    let half = g.scale(c, 0.5)?;
    per_sample_mean(g, half)
}

fn class_positions(classes: &[usize], seen: &BTreeSet<usize>) -> Result<()> {
    if seen.is_empty() {
        return Err(Error::EmptyClassSet);
    }
    match classes.iter().find(|c| !seen.contains(c)) {
        Some(&c) => Err(Error::UnseenClass(c)),
        None => Ok(()),
    }
}

/// Closed-form `KL(N(μ^(x), σ^(x)²) || N(μ^y, σ^y²))` against each sample's
/// own class component.
pub fn latent_loss_hard(
    g: &mut Graph,
    mu: NodeId,
    logvar: NodeId,
    labels: &[usize],
    prior: PriorNodes,
    seen: &BTreeSet<usize>,
) -> Result<NodeId> {
    class_positions(labels, seen)?;
    let m = g.gather_rows(prior.means, labels)?;
    let ls_raw = g.gather_rows(prior.log_sigma, labels)?;
    let ls = g.clamp(ls_raw, LOG_SIGMA_MIN, LOG_SIGMA_MAX)?;
    let log_var_y = g.scale(ls, 2.0)?;
    let neg = g.scale(ls, -2.0)?;
    let inv_var_y = g.exp(neg)?;

    let var_x = g.exp(logvar)?;
    let diff = g.sub(mu, m)?;
    let diff2 = g.square(diff)?;
    let num = g.add(var_x, diff2)?;
    let ratio = g.mul(num, inv_var_y)?;
    let a = g.sub(log_var_y, logvar)?;
    let b = g.add(a, ratio)?;
    let c = g.add_scalar(b, -1.0)?;
    let half = g.scale(c, 0.5)?;
    per_sample_mean(g, half)
}

/// Single-sample estimate of `KL(q || Σ_c ỹ_c N(μ^c, σ^c²))`:
/// `-H[q] - log Σ_c ỹ_c N(z | μ^c, σ^c²)` with `z = μ + σ ⊙ ε`.
///
/// `eps` holds the standard-normal noise, one row per sample.
pub fn latent_loss_soft(
    g: &mut Graph,
    mu: NodeId,
    logvar: NodeId,
    targets: &SoftTargets,
    prior: PriorNodes,
    seen: &BTreeSet<usize>,
    eps: NodeId,
) -> Result<NodeId> {
    targets.validate()?;
    let (b, d) = g.value(mu).dims2()?;
    if targets.len() != b {
        return Err(Error::dim(
            "latent_loss_soft",
            g.value(mu).shape(),
            targets.probs.shape(),
        ));
    }
    let live: Vec<usize> = (0..targets.classes.len())
        .filter(|&j| (0..b).any(|i| targets.probs.get(i, j) > 0.0))
        .collect();
    if live.is_empty() {
        return Err(Error::EmptyClassSet);
    }
    let live_classes: Vec<usize> = live.iter().map(|&j| targets.classes[j]).collect();
    class_positions(&live_classes, seen)?;

    // z = μ + σ ⊙ ε
    let half_lv = g.scale(logvar, 0.5)?;
    let sigma = g.exp(half_lv)?;
    let noise = g.mul(sigma, eps)?;
    let z = g.add(mu, noise)?;

    // Component log-densities, [B, C]:
    // log N(z | m, s²) = -½ (D log 2π + Σ log s² + Σ (z - m)² / s²)
    // with Σ (z - m)² w = z² · w - 2 z · (m w) + m² · w.
    let m = g.gather_rows(prior.means, &live_classes)?;
    let ls_raw = g.gather_rows(prior.log_sigma, &live_classes)?;
    let ls = g.clamp(ls_raw, LOG_SIGMA_MIN, LOG_SIGMA_MAX)?;
    let neg = g.scale(ls, -2.0)?;
    let w = g.exp(neg)?;
    let wt = g.transpose(w)?;
    let z2 = g.square(z)?;
    let t1 = g.matmul(z2, wt)?;
    let mw = g.mul(m, w)?;
    let mwt = g.transpose(mw)?;
    let zm = g.matmul(z, mwt)?;
    let t2 = g.scale(zm, -2.0)?;
    let m2 = g.square(m)?;
    let m2w = g.mul(m2, w)?;
    let t3v = g.sum_rows(m2w)?;
    let t3 = g.repeat_rows(t3v, b)?;
    let logdet_v = g.sum_rows(ls)?;
    let logdet_v = g.scale(logdet_v, 2.0)?;
    let logdet = g.repeat_rows(logdet_v, b)?;
    let quad = g.add(t1, t2)?;
    let quad = g.add(quad, t3)?;
    let inner = g.add(quad, logdet)?;
    let inner = g.add_scalar(inner, d as f64 * (2.0 * PI).ln())?;
    let log_n = g.scale(inner, -0.5)?;

    let log_w = Tensor::matrix(
        b,
        live.len(),
        (0..b)
            .flat_map(|i| {
                live.iter().map(move |&j| {
                    let p = targets.probs.get(i, j);
                    if p > 0.0 {
                        p.ln()
                    } else {
                        LOG_ZERO_MASS
                    }
                })
            })
            .collect(),
    )?;
    let log_w = g.constant(log_w);
    let joint = g.add(log_n, log_w)?;
    let log_mix = g.logsumexp_rows(joint)?;

    // -H[q] = -½ Σ (1 + log 2π + log σ²)
    let lv_sum = g.sum_rows(logvar)?;
    let neg_h = g.add_scalar(lv_sum, d as f64 * (1.0 + (2.0 * PI).ln()))?;
    let neg_h = g.scale(neg_h, -0.5)?;
    let per = g.sub(neg_h, log_mix)?;
    g.mean(per)
}

/// `-log p(y | x)` over the seen classes.
pub fn class_loss(g: &mut Graph, logits: NodeId, labels: &[usize], seen: &BTreeSet<usize>) -> Result<NodeId> {
    class_positions(labels, seen)?;
    let cols: Vec<usize> = seen.iter().copied().collect();
    let pos: Vec<usize> = labels
        .iter()
        .map(|y| cols.binary_search(y).expect("checked above"))
        .collect();
    let sel = g.select_columns(logits, &cols)?;
    let ls = g.log_softmax_with_temperature(sel, 1.0)?;
    let picked = g.pick_per_row(ls, &pos)?;
    let m = g.mean(picked)?;
    g.scale(m, -1.0)
}

/// `-T² Σ_c ỹ_c log softmax(logits / T)_c` over the target's classes.
pub fn distill_loss(g: &mut Graph, logits: NodeId, targets: &SoftTargets, temperature: f64) -> Result<NodeId> {
    if !(temperature > 0.0) {
        return Err(Error::domain(
            "distill_loss",
            format!("temperature {temperature} must be positive"),
        ));
    }
    targets.validate()?;
    let sel = g.select_columns(logits, &targets.classes)?;
    let ls = g.log_softmax_with_temperature(sel, temperature)?;
    let y = g.constant(targets.probs.clone());
    let prod = g.mul(ls, y)?;
    let per = per_sample_mean(g, prod)?;
    g.scale(per, -temperature * temperature)
}

fn squared_match(
    g: &mut Graph,
    mu: NodeId,
    logvar: NodeId,
    mu_target: NodeId,
    logvar_target: NodeId,
) -> Result<NodeId> {
    for (a, b) in [(mu, mu_target), (logvar, logvar_target)] {
        if g.value(a).shape() != g.value(b).shape() {
            return Err(Error::dim("latent_match", g.value(a).shape(), g.value(b).shape()));
        }
    }
    let mt = g.detach(mu_target);
    let lt = g.detach(logvar_target);
    let dm = g.sub(mu, mt)?;
    let dl = g.sub(logvar, lt)?;
    let dm2 = g.square(dm)?;
    let dl2 = g.square(dl)?;
    let s = g.add(dm2, dl2)?;
    let half = g.scale(s, 0.5)?;
    per_sample_mean(g, half)
}

/// `½‖μ_r − μ_o‖² + ½‖log σ²_r − log σ²_o‖²` between the posterior of a
/// sample (`_o`, held constant) and that of its reconstruction (`_r`).
pub fn latent_match_loss(
    g: &mut Graph,
    mu_orig: NodeId,
    logvar_orig: NodeId,
    mu_recon: NodeId,
    logvar_recon: NodeId,
) -> Result<NodeId> {
    squared_match(g, mu_recon, logvar_recon, mu_orig, logvar_orig)
}

/// Same squared form between the current encoder's posterior and the frozen
/// previous encoder's posterior on the same input.
pub fn latent_distill_loss(
    g: &mut Graph,
    mu_new: NodeId,
    logvar_new: NodeId,
    mu_old: NodeId,
    logvar_old: NodeId,
) -> Result<NodeId> {
    squared_match(g, mu_new, logvar_new, mu_old, logvar_old)
}

/// Per-term multipliers. A zero weight drops the term entirely.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub recon: f64,
    pub latent: f64,
    pub class_ce: f64,
    pub distill: f64,
    pub latent_match: f64,
    pub latent_distill: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            recon: 1.0,
            latent: 1.0,
            class_ce: 1.0,
            distill: 1.0,
            latent_match: 1.0,
            latent_distill: 1.0,
        }
    }
}

/// Per-batch loss values. Terms hold their weighted contributions, so
/// `total` is always the plain sum of the present terms.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub recon: Option<f64>,
    pub latent: Option<f64>,
    pub class_ce: Option<f64>,
    pub distill: Option<f64>,
    pub latent_match: Option<f64>,
    pub latent_distill: Option<f64>,
    pub total: f64,
}

impl LossReport {
    pub fn terms(&self) -> [(&'static str, Option<f64>); 6] {
        [
            ("recon", self.recon),
            ("latent", self.latent),
            ("class_ce", self.class_ce),
            ("distill", self.distill),
            ("latent_match", self.latent_match),
            ("latent_distill", self.latent_distill),
        ]
    }

    pub fn sum_of_terms(&self) -> f64 {
        self.terms().iter().filter_map(|t| t.1).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.terms().iter().all(|t| t.1.is_none_or(f64::is_finite))
    }

    /// Term-wise sum of two reports.
    pub fn merge(&self, other: &LossReport) -> LossReport {
        fn add(a: Option<f64>, b: Option<f64>) -> Option<f64> {
            match (a, b) {
                (None, None) => None,
                (a, b) => Some(a.unwrap_or(0.0) + b.unwrap_or(0.0)),
            }
        }
        LossReport {
            recon: add(self.recon, other.recon),
            latent: add(self.latent, other.latent),
            class_ce: add(self.class_ce, other.class_ce),
            distill: add(self.distill, other.distill),
            latent_match: add(self.latent_match, other.latent_match),
            latent_distill: add(self.latent_distill, other.latent_distill),
            total: self.total + other.total,
        }
    }
}

impl fmt::Display for LossReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "total={}", self.total)?;
        for (name, v) in self.terms() {
            if let Some(v) = v {
                write!(f, " {name}={v}")?;
            }
        }
        Ok(())
    }
}

/// Graph nodes of the individual terms of one batch.
#[derive(Clone, Copy, Debug, Default)]
pub struct TermNodes {
    pub recon: Option<NodeId>,
    pub latent: Option<NodeId>,
    pub class_ce: Option<NodeId>,
    pub distill: Option<NodeId>,
    pub latent_match: Option<NodeId>,
    pub latent_distill: Option<NodeId>,
}

/// A composed objective: the scalar node to differentiate and its report.
#[derive(Clone, Debug)]
pub struct Composed {
    pub total: NodeId,
    pub report: LossReport,
}

fn weighted_sum(g: &mut Graph, terms: [(Option<NodeId>, f64, &'static str, bool); 6]) -> Result<Composed> {
    let mut report = LossReport::default();
    let mut total: Option<NodeId> = None;
    for (node, weight, name, required) in terms {
        let Some(node) = node else {
            if required && weight != 0.0 {
                return Err(Error::MissingTerm(name));
            }
            continue;
        };
        if weight == 0.0 {
            continue;
        }
        let scaled = if weight == 1.0 { node } else { g.scale(node, weight)? };
        let value = g.scalar_value(scaled)?;
        let slot = match name {
            "recon" => &mut report.recon,
            "latent" => &mut report.latent,
            "class_ce" => &mut report.class_ce,
            "distill" => &mut report.distill,
            "latent_match" => &mut report.latent_match,
            _ => &mut report.latent_distill,
        };
        *slot = Some(value);
        total = Some(match total {
            None => scaled,
            Some(t) => g.add(t, scaled)?,
        });
    }
    let total = match total {
        Some(t) => t,
        None => g.constant(Tensor::scalar(0.0)),
    };
    report.total = g.scalar_value(total)?;
    Ok(Composed { total, report })
}

/// `L_current = L_G + L_C + L_latent_match` (recon + latent form `L_G`).
pub fn compose_current(g: &mut Graph, t: &TermNodes, w: &LossWeights) -> Result<Composed> {
    if t.distill.is_some() || t.latent_distill.is_some() {
        return Err(Error::Contract("current batch cannot carry replay terms".into()));
    }
    weighted_sum(
        g,
        [
            (t.recon, w.recon, "recon", true),
            (t.latent, w.latent, "latent", true),
            (t.class_ce, w.class_ce, "class_ce", true),
            (None, 0.0, "distill", false),
            (t.latent_match, w.latent_match, "latent_match", false),
            (None, 0.0, "latent_distill", false),
        ],
    )
}

/// `L_replay = L_G + L_D + L_latent_distill`.
pub fn compose_replay(g: &mut Graph, t: &TermNodes, w: &LossWeights) -> Result<Composed> {
    if t.class_ce.is_some() || t.latent_match.is_some() {
        return Err(Error::Contract("replay batch cannot carry current-task terms".into()));
    }
    weighted_sum(
        g,
        [
            (t.recon, w.recon, "recon", true),
            (t.latent, w.latent, "latent", true),
            (None, 0.0, "class_ce", false),
            (t.distill, w.distill, "distill", true),
            (None, 0.0, "latent_match", false),
            (t.latent_distill, w.latent_distill, "latent_distill", false),
        ],
    )
}

/// `L_total = L_current + L_replay`.
pub fn compose_total(g: &mut Graph, current: &Composed, replay: Option<&Composed>) -> Result<Composed> {
    match replay {
        None => Ok(current.clone()),
        Some(r) => {
            let total = g.add(current.total, r.total)?;
            let mut report = current.report.merge(&r.report);
            report.total = g.scalar_value(total)?;
            Ok(Composed { total, report })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(g: &Graph, id: NodeId) -> f64 {
        g.scalar_value(id).unwrap()
    }

    fn row(v: Vec<f64>) -> Tensor {
        let n = v.len();
        Tensor::matrix(1, n, v).unwrap()
    }

    fn prior(means: Vec<Vec<f64>>, log_sigma: Vec<Vec<f64>>, g: &mut Graph) -> PriorNodes {
        PriorNodes {
            means: g.param(Tensor::from_rows(&means).unwrap()),
            log_sigma: g.param(Tensor::from_rows(&log_sigma).unwrap()),
        }
    }

    #[test]
    fn bce_at_half() {
        let n = 7;
        let mut g = Graph::new();
        let x = g.constant(row(vec![0.5; n]));
        let xh = g.param(row(vec![0.5; n]));
        let l = recon_loss(&mut g, x, xh).unwrap();
        assert!((scalar(&g, l) - n as f64 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bce_perfect_reconstruction_limit() {
        let mut g = Graph::new();
        let x = g.constant(row(vec![1.0]));
        let xh = g.param(row(vec![1.0 - 1e-12]));
        let l = recon_loss(&mut g, x, xh).unwrap();
        assert!((scalar(&g, l) - 1e-12).abs() < 1e-15);
    }

    #[test]
    fn bce_rejects_out_of_range_target() {
        let mut g = Graph::new();
        let x = g.constant(row(vec![1.5]));
        let xh = g.param(row(vec![0.5]));
        assert!(matches!(recon_loss(&mut g, x, xh), Err(Error::Domain { .. })));
    }

    #[test]
    fn bce_logits_matches_probability_form() {
        let mut g = Graph::new();
        let x = g.constant(row(vec![0.0, 0.3, 1.0, 0.9]));
        let l = g.param(row(vec![-2.0, 0.1, 3.0, 0.0]));
        let p = g.sigmoid(l).unwrap();
        let a = recon_loss(&mut g, x, p).unwrap();
        let b = recon_loss_logits(&mut g, x, l, ReconKind::Bernoulli).unwrap();
        assert!((scalar(&g, a) - scalar(&g, b)).abs() < 1e-12);
    }

    #[test]
    fn standard_kl_values() {
        let cases = [
            (vec![0.0], vec![0.0], 0.0),
            (vec![1.0], vec![0.0], 0.5),
            (vec![0.0], vec![2f64.ln()], 0.5 * (2.0 - 1.0 - 2f64.ln())),
        ];
        for (mu, lv, want) in cases {
            let mut g = Graph::new();
            let m = g.param(row(mu));
            let v = g.param(row(lv));
            let l = latent_loss_standard(&mut g, m, v).unwrap();
            assert!((scalar(&g, l) - want).abs() < 1e-12);
        }
        assert!((0.5 * (2.0 - 1.0 - 2f64.ln()) - 0.1534).abs() < 1e-4);
    }

    #[test]
    fn hard_kl_zero_at_prior_and_mean_shift() {
        let mut g = Graph::new();
        let p = prior(
            vec![vec![0.3, -0.2], vec![0.0, 0.0]],
            vec![vec![0.4, -0.1], vec![0.0, 0.0]],
            &mut g,
        );
        let seen: BTreeSet<usize> = [0, 1].into();
        let m = g.param(row(vec![0.3, -0.2]));
        let v = g.param(row(vec![0.8, -0.2]));
        let l = latent_loss_hard(&mut g, m, v, &[0], p, &seen).unwrap();
        assert!(scalar(&g, l).abs() < 1e-12);

        let m = g.param(row(vec![1.0, 0.0]));
        let v = g.param(row(vec![0.0, 0.0]));
        let l = latent_loss_hard(&mut g, m, v, &[1], p, &seen).unwrap();
        assert!((scalar(&g, l) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn hard_kl_rejects_unseen_class() {
        let mut g = Graph::new();
        let p = prior(vec![vec![0.0], vec![0.0]], vec![vec![0.0], vec![0.0]], &mut g);
        let seen: BTreeSet<usize> = [0].into();
        let m = g.param(row(vec![0.0]));
        let v = g.param(row(vec![0.0]));
        assert!(matches!(
            latent_loss_hard(&mut g, m, v, &[1], p, &seen),
            Err(Error::UnseenClass(1))
        ));
    }

    #[test]
    fn soft_identical_components_equal_one_hot() {
        let mut g = Graph::new();
        let p = prior(
            vec![vec![0.5, -1.0], vec![0.5, -1.0]],
            vec![vec![0.2, 0.1], vec![0.2, 0.1]],
            &mut g,
        );
        let seen: BTreeSet<usize> = [0, 1].into();
        let m = g.param(row(vec![0.1, 0.2]));
        let v = g.param(row(vec![-0.3, 0.4]));
        let eps = g.constant(row(vec![0.7, -1.1]));
        let half = SoftTargets::new(vec![0, 1], row(vec![0.5, 0.5]), 2.0).unwrap();
        let hot = SoftTargets::one_hot(vec![0, 1], &[1], 2.0).unwrap();
        let a = latent_loss_soft(&mut g, m, v, &half, p, &seen, eps).unwrap();
        let b = latent_loss_soft(&mut g, m, v, &hot, p, &seen, eps).unwrap();
        assert!((scalar(&g, a) - scalar(&g, b)).abs() < 1e-12);
    }

    #[test]
    fn soft_is_stable_for_far_components() {
        let mut g = Graph::new();
        let p = prior(
            vec![vec![100.0, 100.0], vec![-100.0, 100.0]],
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            &mut g,
        );
        let seen: BTreeSet<usize> = [0, 1].into();
        let m = g.param(row(vec![0.0, 0.0]));
        let v = g.param(row(vec![0.0, 0.0]));
        let eps = g.constant(row(vec![0.0, 0.0]));
        let t = SoftTargets::new(vec![0, 1], row(vec![0.3, 0.7]), 1.0).unwrap();
        let l = latent_loss_soft(&mut g, m, v, &t, p, &seen, eps).unwrap();
        let val = scalar(&g, l);
        assert!(val.is_finite() && val > 9e3);
        let grads = g.backward(l).unwrap();
        assert!(grads.get(m).unwrap().data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn soft_rejects_mass_on_unseen_classes() {
        let mut g = Graph::new();
        let p = prior(vec![vec![0.0], vec![0.0]], vec![vec![0.0], vec![0.0]], &mut g);
        let seen: BTreeSet<usize> = [0].into();
        let m = g.param(row(vec![0.0]));
        let v = g.param(row(vec![0.0]));
        let eps = g.constant(row(vec![0.0]));
        let t = SoftTargets::one_hot(vec![0, 1], &[1], 1.0).unwrap();
        assert!(latent_loss_soft(&mut g, m, v, &t, p, &seen, eps).is_err());
    }

    #[test]
    fn class_loss_uniform_and_confident() {
        let seen: BTreeSet<usize> = [0, 1, 2, 3].into();
        let mut g = Graph::new();
        let l = g.param(row(vec![0.0; 4]));
        let ce = class_loss(&mut g, l, &[2], &seen).unwrap();
        assert!((scalar(&g, ce) - 4f64.ln()).abs() < 1e-12);

        let l = g.param(row(vec![0.0, 0.0, 50.0, 0.0]));
        let ce = class_loss(&mut g, l, &[2], &seen).unwrap();
        assert!(scalar(&g, ce) < 1e-20);
    }

    #[test]
    fn class_loss_matches_direct_formula() {
        let seen: BTreeSet<usize> = [0, 2, 4].into();
        let logits = vec![0.3, 9.0, -1.2, 7.0, 2.5];
        let mut g = Graph::new();
        let l = g.param(row(logits.clone()));
        let ce = class_loss(&mut g, l, &[4], &seen).unwrap();
        let z: f64 = [0.3f64, -1.2, 2.5].iter().map(|v| v.exp()).sum();
        let want = -(2.5f64.exp() / z).ln();
        assert!((scalar(&g, ce) - want).abs() < 1e-12);
    }

    #[test]
    fn distill_reduces_to_class_loss_at_unit_temperature() {
        let seen: BTreeSet<usize> = [0, 1, 2].into();
        let mut g = Graph::new();
        let l = g.param(row(vec![0.4, -1.3, 2.2]));
        let ce = class_loss(&mut g, l, &[1], &seen).unwrap();
        let t = SoftTargets::one_hot(vec![0, 1, 2], &[1], 1.0).unwrap();
        let d = distill_loss(&mut g, l, &t, 1.0).unwrap();
        assert!((scalar(&g, ce) - scalar(&g, d)).abs() < 1e-12);
    }

    #[test]
    fn distill_uniform_symmetry() {
        for t in [0.5, 1.0, 2.0, 7.0] {
            let mut g = Graph::new();
            let l = g.param(row(vec![1.0; 5]));
            let y = SoftTargets::new(vec![0, 1, 2, 3, 4], row(vec![0.2; 5]), t).unwrap();
            let d = distill_loss(&mut g, l, &y, t).unwrap();
            assert!((scalar(&g, d) - t * t * 5f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn distill_two_class_hand_value() {
        let mut g = Graph::new();
        let l = g.param(row(vec![2.0, 0.0]));
        let y = SoftTargets::new(vec![0, 1], row(vec![0.7, 0.3]), 2.0).unwrap();
        let d = distill_loss(&mut g, l, &y, 2.0).unwrap();
        // softmax([1, 0]) = (e/(e+1), 1/(e+1))
        let e = 1f64.exp();
        let want = 4.0 * (0.7 * -(e / (e + 1.0)).ln() + 0.3 * -(1.0 / (e + 1.0)).ln());
        assert!((scalar(&g, d) - want).abs() < 1e-12);
        assert!((want - 2.4532).abs() < 1e-3);
    }

    #[test]
    fn distill_rejects_bad_temperature() {
        let mut g = Graph::new();
        let l = g.param(row(vec![0.0, 0.0]));
        let y = SoftTargets::new(vec![0, 1], row(vec![0.5, 0.5]), 1.0).unwrap();
        assert!(distill_loss(&mut g, l, &y, 0.0).is_err());
    }

    #[test]
    fn latent_match_values() {
        let mut g = Graph::new();
        let mo = g.param(row(vec![0.0, 0.0]));
        let lo = g.param(row(vec![0.1, 0.2]));
        let mr = g.param(row(vec![1.0, 1.0]));
        let lr = g.param(row(vec![0.1, 0.2]));
        let l = latent_match_loss(&mut g, mo, lo, mr, lr).unwrap();
        assert!((scalar(&g, l) - 1.0).abs() < 1e-15);
        let l0 = latent_match_loss(&mut g, mo, lo, mo, lo).unwrap();
        assert_eq!(scalar(&g, l0), 0.0);
        let grads = g.backward(l).unwrap();
        assert!(grads.get(mo).is_none());
        assert!(grads.get(mr).is_some());
    }

    #[test]
    fn latent_distill_symmetric_in_value() {
        let mut g = Graph::new();
        let a = g.param(row(vec![0.3, -0.7]));
        let b = g.param(row(vec![0.1, 0.4]));
        let c = g.param(row(vec![-1.0, 2.0]));
        let d = g.param(row(vec![0.5, 0.5]));
        let x = latent_distill_loss(&mut g, a, b, c, d).unwrap();
        let y = latent_distill_loss(&mut g, c, d, a, b).unwrap();
        assert_eq!(scalar(&g, x), scalar(&g, y));
    }

    #[test]
    fn latent_match_shape_mismatch() {
        let mut g = Graph::new();
        let a = g.param(row(vec![0.0, 0.0]));
        let b = g.param(row(vec![0.0]));
        assert!(latent_match_loss(&mut g, a, a, b, b).is_err());
    }

    fn consts(g: &mut Graph, vals: &[f64]) -> Vec<NodeId> {
        vals.iter().map(|&v| g.param(Tensor::scalar(v))).collect()
    }

    #[test]
    fn compose_sums() {
        let mut g = Graph::new();
        let n = consts(&mut g, &[1.0, 2.0, 3.0]);
        let t = TermNodes {
            recon: Some(n[0]),
            latent: Some(n[1]),
            class_ce: Some(n[2]),
            ..Default::default()
        };
        let c = compose_current(&mut g, &t, &LossWeights::default()).unwrap();
        assert_eq!(c.report.total, 6.0);
        assert_eq!(c.report.sum_of_terms(), 6.0);
    }

    #[test]
    fn compose_all_zero() {
        let mut g = Graph::new();
        let n = consts(&mut g, &[0.0; 4]);
        let t = TermNodes {
            recon: Some(n[0]),
            latent: Some(n[1]),
            distill: Some(n[2]),
            latent_distill: Some(n[3]),
            ..Default::default()
        };
        let c = compose_replay(&mut g, &t, &LossWeights::default()).unwrap();
        assert_eq!(c.report.total, 0.0);
    }

    #[test]
    fn zero_weight_drops_latent_match() {
        let mut g = Graph::new();
        let n = consts(&mut g, &[1.5, 0.25, 0.75, 9.0]);
        let with = TermNodes {
            recon: Some(n[0]),
            latent: Some(n[1]),
            class_ce: Some(n[2]),
            latent_match: Some(n[3]),
            ..Default::default()
        };
        let without = TermNodes {
            latent_match: None,
            ..with
        };
        let w0 = LossWeights {
            latent_match: 0.0,
            ..LossWeights::default()
        };
        let a = compose_current(&mut g, &with, &w0).unwrap();
        let b = compose_current(&mut g, &without, &LossWeights::default()).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(a.report.latent_match, None);
    }

    #[test]
    fn compose_reports_missing_term() {
        let mut g = Graph::new();
        let n = consts(&mut g, &[1.0, 1.0]);
        let t = TermNodes {
            recon: Some(n[0]),
            latent: Some(n[1]),
            ..Default::default()
        };
        assert!(matches!(
            compose_current(&mut g, &t, &LossWeights::default()),
            Err(Error::MissingTerm("class_ce"))
        ));
        assert!(matches!(
            compose_replay(&mut g, &t, &LossWeights::default()),
            Err(Error::MissingTerm("distill"))
        ));
    }

    #[test]
    fn total_adds_current_and_replay() {
        let mut g = Graph::new();
        let n = consts(&mut g, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let cur = compose_current(
            &mut g,
            &TermNodes {
                recon: Some(n[0]),
                latent: Some(n[1]),
                class_ce: Some(n[2]),
                ..Default::default()
            },
            &LossWeights::default(),
        )
        .unwrap();
        let rep = compose_replay(
            &mut g,
            &TermNodes {
                recon: Some(n[3]),
                latent: Some(n[4]),
                distill: Some(n[5]),
                ..Default::default()
            },
            &LossWeights::default(),
        )
        .unwrap();
        let tot = compose_total(&mut g, &cur, Some(&rep)).unwrap();
        assert_eq!(tot.report.total, 21.0);
        assert_eq!(tot.report.recon, Some(5.0));
        assert!((tot.report.sum_of_terms() - tot.report.total).abs() < 1e-10);
    }
}
