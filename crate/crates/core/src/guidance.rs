// SPDX-License-Identifier: MIT OR Apache-2.0

//! Noise-prediction arithmetic: classifier-free guidance and the slider
//! combination `eps_base + mu * (eps_pos - eps_neg)`.
//!
//! All combinations accumulate in f64 and round once to f32. The identity
//! cases (`guidance` 0 or 1, `mu` 0) return an input unchanged so that a
//! neutral branch stays bit-identical to a plain generation.

use crate::error::Result;
use crate::tensor::LatentTensor;

/// `uncond + guidance * (text - uncond)`.
pub fn cfg_combine(
    eps_uncond: &LatentTensor,
    eps_text: &LatentTensor,
    guidance: f64,
) -> Result<LatentTensor> {
    eps_uncond.ensure_same_shape(eps_text)?;
    if guidance == 0.0 {
        return Ok(eps_uncond.clone());
    }
    if guidance == 1.0 {
        return Ok(eps_text.clone());
    }
    eps_uncond.map_with(eps_text, |u, t| {
        let u = f64::from(u);
        (u + guidance * (f64::from(t) - u)) as f32
    })
}

/// `eps_base + mu * (eps_pos - eps_neg)`.
pub fn guided_epsilon(
    eps_base: &LatentTensor,
    eps_pos: &LatentTensor,
    eps_neg: &LatentTensor,
    scale: f64,
) -> Result<LatentTensor> {
    guided_epsilon_multi(eps_base, &[(eps_pos, eps_neg, scale)])
}

/// `eps_base + sum_j mu_j * (eps_pos_j - eps_neg_j)`; terms with `mu_j == 0`
/// are skipped.
pub fn guided_epsilon_multi(
    eps_base: &LatentTensor,
    terms: &[(&LatentTensor, &LatentTensor, f64)],
) -> Result<LatentTensor> {
    for (pos, neg, _) in terms {
        eps_base.ensure_same_shape(pos)?;
        eps_base.ensure_same_shape(neg)?;
    }
    let active: Vec<_> = terms.iter().filter(|(_, _, mu)| *mu != 0.0).collect();
    if active.is_empty() {
        return Ok(eps_base.clone());
    }
    let values = eps_base
        .values()
        .iter()
        .enumerate()
        .map(|(i, &e)| {
            let shift: f64 = active
                .iter()
                .map(|(p, n, mu)| mu * (f64::from(p.values()[i]) - f64::from(n.values()[i])))
                .sum();
            (f64::from(e) + shift) as f32
        })
        .collect();
    Ok(LatentTensor::from_parts_unchecked(
        eps_base.shape().to_vec(),
        values,
    ))
}
