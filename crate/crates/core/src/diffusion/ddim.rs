//! Deterministic DDIM stepping: the reverse update that removes predicted
//! noise, and its exact inverse used to lift an existing latent back to the
//! noisy end of the trajectory.

use super::schedule::NoiseSchedule;
use super::{AttentionStack, Denoiser, DiffusionError, LatentGrid, TokenId};

/// Convergence tolerance for the per-step inversion solve (max abs change
/// between iterates).
const INVERSION_TOL: f64 = 1e-13;
const INVERSION_MAX_ITERS: usize = 32;

/// A full latent trajectory indexed by diffusion time: `states[0]` is the
/// clean input, `states[T]` the fully noised end.
#[derive(Debug, Clone)]
pub struct LatentTrajectory {
    states: Vec<LatentGrid>,
}

impl LatentTrajectory {
    pub fn new(states: Vec<LatentGrid>) -> Self {
        Self { states }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn get(&self, t: usize) -> &LatentGrid {
        &self.states[t]
    }

    pub fn first(&self) -> &LatentGrid {
        self.states.first().expect("trajectory is never empty")
    }

    pub fn last(&self) -> &LatentGrid {
        self.states.last().expect("trajectory is never empty")
    }
}

impl std::ops::Index<usize> for LatentTrajectory {
    type Output = LatentGrid;

    fn index(&self, t: usize) -> &LatentGrid {
        &self.states[t]
    }
}

fn check_step(z: &LatentGrid, eps: &LatentGrid, t: usize, schedule: &NoiseSchedule) -> Result<(), DiffusionError> {
    if t == 0 || t > schedule.steps() {
        return Err(DiffusionError::InvalidSchedule(format!(
            "step time {t} outside 1..={}",
            schedule.steps()
        )));
    }
    if !z.same_shape(eps) {
        return Err(DiffusionError::ShapeMismatch {
            expected: format!("{:?}", z.shape()),
            got: format!("{:?}", eps.shape()),
        });
    }
    Ok(())
}

/// One deterministic reverse step `t -> t-1`.
///
/// The current latent is first projected to its clean estimate by removing
/// the predicted noise, then re-noised to the target time:
/// `z0_hat = (z - noise(t) * eps) / signal(t)` and
/// `z_out = signal(t-1) * z0_hat + noise(t-1) * eps`.
pub fn ddim_reverse_step(
    z: &LatentGrid,
    eps: &LatentGrid,
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<LatentGrid, DiffusionError> {
    check_step(z, eps, t, schedule)?;
    let (s_t, n_t) = (schedule.signal(t), schedule.noise(t));
    let (s_prev, n_prev) = (schedule.signal(t - 1), schedule.noise(t - 1));
    let mut out = z.clone();
    let ratio = s_prev / s_t;
    for (o, e) in out.data_mut().iter_mut().zip(eps.data()) {
        let z0_hat_scaled = *o - n_t * e;
        *o = ratio * z0_hat_scaled + n_prev * e;
    }
    out.set_step_index(t - 1);
    Ok(out)
}

/// The exact algebraic inverse of [`ddim_reverse_step`] for known `eps`:
/// `z_t = signal(t)/signal(t-1) * (z_prev - noise(t-1) * eps) + noise(t) * eps`.
fn ddim_forward_step(
    z_prev: &LatentGrid,
    eps: &LatentGrid,
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<LatentGrid, DiffusionError> {
    check_step(z_prev, eps, t, schedule)?;
    let ratio = schedule.signal(t) / schedule.signal(t - 1);
    let n_t = schedule.noise(t);
    let n_prev = schedule.noise(t - 1);
    let mut out = z_prev.clone();
    for (o, e) in out.data_mut().iter_mut().zip(eps.data()) {
        *o = ratio * (*o - n_prev * e) + n_t * e;
    }
    out.set_step_index(t);
    Ok(out)
}

fn invert_one_step(
    z_prev: &LatentGrid,
    t: usize,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    tokens: &[TokenId],
) -> Result<(LatentGrid, AttentionStack), DiffusionError> {
    // eps in the exact inverse is evaluated at the unknown z_t; solve by
    // fixed point, seeding with the prediction at the known z_prev.
    let seed_out = denoiser.denoise(z_prev, t, tokens)?;
    let mut z_t = ddim_forward_step(z_prev, &seed_out.eps, t, schedule)?;
    for _ in 0..INVERSION_MAX_ITERS {
        let out = denoiser.denoise(&z_t, t, tokens)?;
        let next = ddim_forward_step(z_prev, &out.eps, t, schedule)?;
        let delta = next.max_abs_diff(&z_t);
        z_t = next;
        if delta < INVERSION_TOL {
            break;
        }
    }
    // Attention reported at the converged point.
    let final_out = denoiser.denoise(&z_t, t, tokens)?;
    Ok((z_t, final_out.attention))
}

/// Lifts a clean latent to the noisy end of the trajectory by inverting
/// every reverse step in turn. Returns all `steps + 1` latents.
pub fn ddim_inversion(
    z0: &LatentGrid,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
) -> Result<LatentTrajectory, DiffusionError> {
    let (traj, _) = ddim_inversion_with_attention(z0, denoiser, schedule, &[])?;
    Ok(traj)
}

/// As [`ddim_inversion`], additionally recording the attention stack seen at
/// each inverted step (entry `i` belongs to diffusion time `i + 1`).
pub fn ddim_inversion_with_attention(
    z0: &LatentGrid,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    tokens: &[TokenId],
) -> Result<(LatentTrajectory, Vec<AttentionStack>), DiffusionError> {
    if !z0.is_finite() {
        return Err(DiffusionError::InvalidLatent("non-finite input to inversion".into()));
    }
    let mut states = Vec::with_capacity(schedule.steps() + 1);
    let mut attn = Vec::with_capacity(schedule.steps());
    let mut z = z0.clone().with_step_index(0);
    states.push(z.clone());
    for t in 1..=schedule.steps() {
        let (z_t, a) = invert_one_step(&z, t, denoiser, schedule, tokens)?;
        states.push(z_t.clone());
        attn.push(a);
        z = z_t;
    }
    Ok((LatentTrajectory::new(states), attn))
}

#[cfg(test)]
mod tests {
    use super::super::reference::ReferenceDenoiser;
    use super::*;
    use approx::assert_relative_eq;

    fn schedule() -> NoiseSchedule {
        NoiseSchedule::default_linear()
    }

    #[test]
    fn reverse_step_with_zero_eps_rescales() {
        let s = schedule();
        let z = LatentGrid::seeded_normal(2, 4, 4, 50, 1);
        let eps = LatentGrid::zeros(2, 4, 4, 50);
        let out = ddim_reverse_step(&z, &eps, 50, &s).unwrap();
        let ratio = s.signal(49) / s.signal(50);
        for (o, i) in out.data().iter().zip(z.data()) {
            assert_relative_eq!(*o, ratio * i, max_relative = 1e-14);
        }
        assert_eq!(out.step_index(), 49);
    }

    #[test]
    fn reverse_step_rejects_bad_time_and_shape() {
        let s = schedule();
        let z = LatentGrid::zeros(1, 2, 2, 0);
        let eps = LatentGrid::zeros(1, 2, 2, 0);
        assert!(ddim_reverse_step(&z, &eps, 0, &s).is_err());
        assert!(ddim_reverse_step(&z, &eps, 51, &s).is_err());
        let bad = LatentGrid::zeros(1, 2, 3, 0);
        assert!(ddim_reverse_step(&z, &bad, 1, &s).is_err());
    }

    #[test]
    fn forward_step_is_exact_inverse_for_fixed_eps() {
        let s = schedule();
        let z = LatentGrid::seeded_normal(2, 3, 3, 7, 5);
        let eps = LatentGrid::seeded_normal(2, 3, 3, 7, 6);
        let back = ddim_reverse_step(&z, &eps, 7, &s).unwrap();
        let again = ddim_forward_step(&back, &eps, 7, &s).unwrap();
        assert!(again.max_abs_diff(&z) < 1e-12);
    }

    #[test]
    fn inversion_matches_closed_form_for_linear_eps() {
        // With eps(z) = lambda * z each inverted step solves a scalar linear
        // equation exactly; compare the iterative solve against it.
        let s = schedule();
        let lambda = 0.1;
        let den = ReferenceDenoiser::new(11, lambda);
        let z0 = LatentGrid::seeded_normal(2, 4, 4, 0, 3);
        let traj = ddim_inversion(&z0, &den, &s).unwrap();
        let mut expected = z0.clone();
        for t in 1..=s.steps() {
            let ratio = s.signal(t) / s.signal(t - 1);
            let denom = 1.0 + ratio * s.noise(t - 1) * lambda - s.noise(t) * lambda;
            expected = expected.scaled(ratio / denom);
            assert!(
                traj[t].max_abs_diff(&expected) < 1e-11,
                "diverged from closed form at t={t}"
            );
        }
    }

    #[test]
    fn inversion_then_reverse_roundtrips() {
        let s = schedule();
        let den = ReferenceDenoiser::new(21, 0.1);
        let z0 = LatentGrid::seeded_normal(4, 16, 16, 0, 42);
        let traj = ddim_inversion(&z0, &den, &s).unwrap();
        assert_eq!(traj.len(), 51);
        assert_eq!(traj[0].data(), z0.data());
        assert_eq!(traj[50].step_index(), 50);

        let mut z = traj.last().clone();
        for t in (1..=s.steps()).rev() {
            let out = den.denoise(&z, t, &[]).unwrap();
            z = ddim_reverse_step(&z, &out.eps, t, &s).unwrap();
        }
        assert!(z.max_abs_diff(&z0) < 1e-8, "roundtrip error {}", z.max_abs_diff(&z0));
    }

    #[test]
    fn inversion_records_attention_per_step() {
        let s = NoiseSchedule::linear_beta(5, 1e-4, 2e-2).unwrap();
        let den = ReferenceDenoiser::new(4, 0.1);
        let z0 = LatentGrid::seeded_normal(2, 4, 4, 0, 9);
        let (traj, attn) = ddim_inversion_with_attention(&z0, &den, &s, &[0, 3]).unwrap();
        assert_eq!(traj.len(), 6);
        assert_eq!(attn.len(), 5);
        for a in &attn {
            assert_eq!(a.len(), 2);
            assert!(a.get(0).is_some() && a.get(3).is_some());
        }
    }
}
