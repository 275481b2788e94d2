//! One synchronous network iteration per algorithm.

use log::warn;

use super::{AlgorithmKind, AlgorithmState, DualUpdate, GradientSource};
use crate::error::{Error, Result};
use crate::graph::{periodic_matrix, CombinationMatrix, IncidenceFactor, LaplacianMatrix, Network};
use crate::stacked::NetworkVector;

fn check_mu(mu: f64) -> Result<()> {
    if mu > 0.0 && mu.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!("step size must be > 0, got {mu}")))
    }
}

fn check_matrix(state: &AlgorithmState, a: &CombinationMatrix) -> Result<()> {
    if a.size() != state.agents() {
        return Err(Error::shape(format!("{0}x{0} combination matrix", state.agents()), a.size()));
    }
    Ok(())
}

fn gradients<G: GradientSource>(order: &[usize], grads: &mut G, at: &NetworkVector, out: &mut NetworkVector) {
    for &k in order {
        grads.gradient(k, at.block(k), out.block_mut(k));
    }
}

/// `out = x - mu g`.
#[inline]
fn descend(out: &mut NetworkVector, x: &NetworkVector, mu: f64, g: &NetworkVector) {
    for ((o, a), b) in out.as_mut_slice().iter_mut().zip(x.as_slice()).zip(g.as_slice()) {
        *o = a - mu * b;
    }
}

/// Dispatches on `kind`. `a` is the combination matrix for this iteration.
pub fn step<G: GradientSource>(
    kind: &AlgorithmKind,
    state: &mut AlgorithmState,
    network: &Network,
    a: &CombinationMatrix,
    grads: &mut G,
    mu: f64,
) -> Result<()> {
    match *kind {
        AlgorithmKind::NonCooperative => step_non_cooperative(state, grads, mu),
        AlgorithmKind::ConsensusInnovation => step_consensus_innovation(state, a, grads, mu),
        AlgorithmKind::DiffusionAtc => step_diffusion_atc(state, a, grads, mu),
        AlgorithmKind::DiffusionCta => step_diffusion_cta(state, a, grads, mu),
        AlgorithmKind::AugmentedLagrangianPd { eta, dual } => {
            let eta = eta.unwrap_or(1.0 / mu);
            step_augmented_lagrangian(state, &network.penalty_incidence, grads, mu, eta, dual)
        }
        AlgorithmKind::Extra => step_extra(state, a, grads, mu),
        AlgorithmKind::ExactDiffusion => step_exact_diffusion(state, a, grads, mu),
        AlgorithmKind::Diging => step_diging(state, a, grads, mu),
        AlgorithmKind::AugDgm => step_aug_dgm(state, a, grads, mu),
        AlgorithmKind::FederatedAveraging { period } => step_federated(state, grads, mu, period),
        AlgorithmKind::GraphFilterDenoise { eta } => step_graph_filter(state, &network.laplacian, eta, grads, mu),
    }
}

/// `w_k <- w_k - mu grad_hat J_k(w_k)`, no exchange.
pub fn step_non_cooperative<G: GradientSource>(s: &mut AlgorithmState, grads: &mut G, mu: f64) -> Result<()> {
    check_mu(mu)?;
    gradients(&s.order, grads, &s.w, &mut s.grad);
    std::mem::swap(&mut s.w, &mut s.buf);
    descend(&mut s.w, &s.buf, mu, &s.grad);
    s.iter += 1;
    Ok(())
}

/// `w_k <- sum_l a_lk w_l - mu grad_hat J_k(w_k)`.
pub fn step_consensus_innovation<G: GradientSource>(
    s: &mut AlgorithmState,
    a: &CombinationMatrix,
    grads: &mut G,
    mu: f64,
) -> Result<()> {
    check_mu(mu)?;
    check_matrix(s, a)?;
    gradients(&s.order, grads, &s.w, &mut s.grad);
    a.combine(&s.w, &mut s.buf);
    descend(&mut s.w, &s.buf, mu, &s.grad);
    s.iter += 1;
    Ok(())
}

/// Adapt `psi = w - mu grad`, then combine `w = A^T psi`.
pub fn step_diffusion_atc<G: GradientSource>(
    s: &mut AlgorithmState,
    a: &CombinationMatrix,
    grads: &mut G,
    mu: f64,
) -> Result<()> {
    check_mu(mu)?;
    check_matrix(s, a)?;
    gradients(&s.order, grads, &s.w, &mut s.grad);
    descend(&mut s.buf, &s.w, mu, &s.grad);
    a.combine(&s.buf, &mut s.w);
    s.iter += 1;
    Ok(())
}

/// Combine `phi = A^T w`, then adapt at the combined point.
pub fn step_diffusion_cta<G: GradientSource>(
    s: &mut AlgorithmState,
    a: &CombinationMatrix,
    grads: &mut G,
    mu: f64,
) -> Result<()> {
    check_mu(mu)?;
    check_matrix(s, a)?;
    a.combine(&s.w, &mut s.buf);
    gradients(&s.order, grads, &s.buf, &mut s.grad);
    descend(&mut s.w, &s.buf, mu, &s.grad);
    s.iter += 1;
    Ok(())
}

/// Primal-dual step on `min J(W) s.t. B W = 0` with penalty `eta`:
/// `W_i = W - mu grad - mu eta B^T (B W + lambda)`, then the dual ascent.
pub fn step_augmented_lagrangian<G: GradientSource>(
    s: &mut AlgorithmState,
    incidence: &IncidenceFactor,
    grads: &mut G,
    mu: f64,
    eta: f64,
    update: DualUpdate,
) -> Result<()> {
    check_mu(mu)?;
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::Parameter(format!("penalty eta must be > 0, got {eta}")));
    }
    let m = s.dim();
    let edges = incidence.edge_count();
    let dual = s
        .dual
        .as_mut()
        .ok_or_else(|| Error::Contract("primal-dual state has no dual variable".into()))?;
    if dual.agents() != edges || dual.dim() != m {
        return Err(Error::shape(format!("{edges} dual blocks"), dual.agents()));
    }
    let c = mu * eta;
    gradients(&s.order, grads, &s.w, &mut s.grad);

    // buf2 holds B W_{i-1} in its first E blocks when simultaneous
    let mut bw = NetworkVector::zeros(edges, m);
    let mut z = NetworkVector::zeros(edges, m);
    for (e, &(l, k, sq)) in incidence.rows().iter().enumerate() {
        let (wl, wk) = (s.w.block(l), s.w.block(k));
        let lam = dual.block(e);
        let bwe = bw.block_mut(e);
        for j in 0..m {
            bwe[j] = sq * (wl[j] - wk[j]);
        }
        let ze = z.block_mut(e);
        for j in 0..m {
            ze[j] = bwe[j] + lam[j];
        }
    }
    // buf = B^T z
    s.buf.as_mut_slice().iter_mut().for_each(|x| *x = 0.0);
    for (e, &(l, k, sq)) in incidence.rows().iter().enumerate() {
        for j in 0..m {
            let v = sq * z.block(e)[j];
            s.buf.block_mut(l)[j] += v;
            s.buf.block_mut(k)[j] -= v;
        }
    }
    for ((x, g), p) in s.w.as_mut_slice().iter_mut().zip(s.grad.as_slice()).zip(s.buf.as_slice()) {
        *x = *x - mu * g - c * p;
    }
    for (e, &(l, k, sq)) in incidence.rows().iter().enumerate() {
        for j in 0..m {
            let b = match update {
                DualUpdate::Incremental => sq * (s.w.block(l)[j] - s.w.block(k)[j]),
                DualUpdate::Simultaneous => bw.block(e)[j],
            };
            dual.block_mut(e)[j] += c * b;
        }
    }
    s.iter += 1;
    Ok(())
}

/// `phi_i = A^T w_{i-1} - mu grad(w_{i-1})`,
/// `w_i = phi_i + (A^T w_{i-1} - phi_{i-1})`; the correction is absent on
/// the first step.
pub fn step_extra<G: GradientSource>(
    s: &mut AlgorithmState,
    a: &CombinationMatrix,
    grads: &mut G,
    mu: f64,
) -> Result<()> {
    check_mu(mu)?;
    check_matrix(s, a)?;
    gradients(&s.order, grads, &s.w, &mut s.grad);
    a.combine(&s.w, &mut s.buf);
    descend(&mut s.buf2, &s.buf, mu, &s.grad);
    match &s.prev_inter {
        Some(prev) => {
            for (((x, phi), aw), pp) in s
                .w
                .as_mut_slice()
                .iter_mut()
                .zip(s.buf2.as_slice())
                .zip(s.buf.as_slice())
                .zip(prev.as_slice())
            {
                *x = phi + (aw - pp);
            }
        }
        None => s.w.as_mut_slice().copy_from_slice(s.buf2.as_slice()),
    }
    match &mut s.prev_inter {
        Some(prev) => prev.as_mut_slice().copy_from_slice(s.buf2.as_slice()),
        None => s.prev_inter = Some(s.buf2.clone()),
    }
    s.iter += 1;
    Ok(())
}

/// Adapt, correct, combine:
/// `psi_i = w - mu grad`, `phi_i = psi_i + (w - psi_{i-1})`, `w_i = A^T phi_i`.
pub fn step_exact_diffusion<G: GradientSource>(
    s: &mut AlgorithmState,
    a: &CombinationMatrix,
    grads: &mut G,
    mu: f64,
) -> Result<()> {
    check_mu(mu)?;
    check_matrix(s, a)?;
    let prev = s
        .prev_inter
        .as_mut()
        .ok_or_else(|| Error::Contract("exact diffusion state has no previous intermediate".into()))?;
    gradients(&s.order, grads, &s.w, &mut s.grad);
    descend(&mut s.buf, &s.w, mu, &s.grad);
    for (((phi, psi), w), pp) in s
        .buf2
        .as_mut_slice()
        .iter_mut()
        .zip(s.buf.as_slice())
        .zip(s.w.as_slice())
        .zip(prev.as_slice())
    {
        *phi = psi + (w - pp);
    }
    prev.as_mut_slice().copy_from_slice(s.buf.as_slice());
    a.combine(&s.buf2, &mut s.w);
    s.iter += 1;
    Ok(())
}

fn tracker_parts(s: &mut AlgorithmState) -> Result<(&mut NetworkVector, &mut NetworkVector)> {
    match (s.tracker.as_mut(), s.prev_grad.as_mut()) {
        (Some(t), Some(g)) => Ok((t, g)),
        _ => Err(Error::Contract("gradient-tracking state has no tracker".into())),
    }
}

/// `w_i = A^T w - mu g`; `g_i = A^T g + grad(w_i) - grad(w_{i-1})`.
pub fn step_diging<G: GradientSource>(
    s: &mut AlgorithmState,
    a: &CombinationMatrix,
    grads: &mut G,
    mu: f64,
) -> Result<()> {
    check_mu(mu)?;
    check_matrix(s, a)?;
    tracker_parts(s)?;
    let (tracker, prev) = (s.tracker.as_mut().unwrap(), s.prev_grad.as_mut().unwrap());
    a.combine(&s.w, &mut s.buf);
    descend(&mut s.w, &s.buf, mu, tracker);
    gradients(&s.order, grads, &s.w, &mut s.grad);
    a.combine(tracker, &mut s.buf);
    for (((t, ag), g), p) in tracker
        .as_mut_slice()
        .iter_mut()
        .zip(s.buf.as_slice())
        .zip(s.grad.as_slice())
        .zip(prev.as_slice())
    {
        *t = ag + (g - p);
    }
    prev.as_mut_slice().copy_from_slice(s.grad.as_slice());
    s.iter += 1;
    Ok(())
}

/// `psi = w - mu g`, `w_i = A^T psi`; `g_i = A^T (g + grad(w_i) - grad(w_{i-1}))`.
pub fn step_aug_dgm<G: GradientSource>(
    s: &mut AlgorithmState,
    a: &CombinationMatrix,
    grads: &mut G,
    mu: f64,
) -> Result<()> {
    check_mu(mu)?;
    check_matrix(s, a)?;
    tracker_parts(s)?;
    let (tracker, prev) = (s.tracker.as_mut().unwrap(), s.prev_grad.as_mut().unwrap());
    descend(&mut s.buf, &s.w, mu, tracker);
    a.combine(&s.buf, &mut s.w);
    gradients(&s.order, grads, &s.w, &mut s.grad);
    for ((u, g), p) in s
        .buf2
        .as_mut_slice()
        .iter_mut()
        .zip(s.grad.as_slice())
        .zip(prev.as_slice())
    {
        *u = g - p;
    }
    for (u, t) in s.buf2.as_mut_slice().iter_mut().zip(tracker.as_slice()) {
        *u += t;
    }
    a.combine(&s.buf2, tracker);
    prev.as_mut_slice().copy_from_slice(s.grad.as_slice());
    s.iter += 1;
    Ok(())
}

/// ATC diffusion with `A_i = 11^T/K` on steps `i` divisible by `period`
/// (steps counted from 1) and `A_i = I` otherwise.
pub fn step_federated<G: GradientSource>(s: &mut AlgorithmState, grads: &mut G, mu: f64, period: usize) -> Result<()> {
    let a = periodic_matrix(s.agents(), s.iter + 1, period)?;
    step_diffusion_atc(s, &a, grads, mu)
}

/// IIR graph filter `w_i = (1 - mu) w - mu eta L w + mu gamma_i`, written as
/// `w - mu (w - gamma_i) - mu eta L w` so the observation enters through the
/// denoising gradient.
pub fn step_graph_filter<G: GradientSource>(
    s: &mut AlgorithmState,
    laplacian: &LaplacianMatrix,
    eta: f64,
    grads: &mut G,
    mu: f64,
) -> Result<()> {
    check_mu(mu)?;
    if !(eta >= 0.0) {
        return Err(Error::Parameter(format!("filter coupling eta must be >= 0, got {eta}")));
    }
    let k = s.agents();
    if laplacian.size() != k {
        return Err(Error::shape(format!("{k}x{k} Laplacian"), laplacian.size()));
    }
    gradients(&s.order, grads, &s.w, &mut s.grad);
    let l = laplacian.matrix();
    let m = s.dim();
    for r in 0..k {
        let out = s.buf.block_mut(r);
        out.iter_mut().for_each(|x| *x = 0.0);
        for c in 0..k {
            let lrc = l[(r, c)];
            if lrc != 0.0 {
                let wc = s.w.block(c);
                for j in 0..m {
                    out[j] += lrc * wc[j];
                }
            }
        }
    }
    let c = mu * eta;
    for ((x, g), lw) in s.w.as_mut_slice().iter_mut().zip(s.grad.as_slice()).zip(s.buf.as_slice()) {
        *x = *x - mu * g - c * lw;
    }
    s.iter += 1;
    Ok(())
}

/// Spectral radius of `I - mu I - mu eta L`; warns when it is not below one.
pub fn graph_filter_radius(laplacian: &LaplacianMatrix, mu: f64, eta: f64) -> f64 {
    let r = laplacian
        .eigenvalues()
        .iter()
        .map(|l| (1.0 - mu - mu * eta * l).abs())
        .fold(0.0, f64::max);
    if r >= 1.0 {
        warn!("graph filter unstable: spectral radius {r:.4} >= 1 at mu = {mu}, eta = {eta}");
    }
    r
}

/// `||I - mu eta L||`; warns when it exceeds one.
pub fn penalty_norm(laplacian: &LaplacianMatrix, mu: f64, eta: f64) -> f64 {
    let r = laplacian
        .eigenvalues()
        .iter()
        .map(|l| (1.0 - mu * eta * l).abs())
        .fold(0.0, f64::max);
    if r > 1.0 + 1e-12 {
        warn!("augmented Lagrangian: ||I - mu eta L|| = {r:.4} exceeds 1 at mu = {mu}, eta = {eta}");
    }
    r
}
