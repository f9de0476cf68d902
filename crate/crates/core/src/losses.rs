//! Training objective: least-squares adversarial terms, L1 reconstruction of
//! images, content and style codes, the semantic constraint, and the
//! weighted total.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::{Float, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_x: f64,
    pub lambda_c: f64,
    pub lambda_s: f64,
    pub lambda_u: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_x: 10.0, lambda_c: 1.0, lambda_s: 1.0, lambda_u: 1.0 }
    }
}

impl LossWeights {
    /// Same weights with the semantic term switched off.
    pub fn baseline(self) -> Self {
        Self { lambda_u: 0.0, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_x", self.lambda_x),
            ("lambda_c", self.lambda_c),
            ("lambda_s", self.lambda_s),
            ("lambda_u", self.lambda_u),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(alloc::format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Per-direction loss components. `_a` terms start from domain-A images
/// (translated A→B), `_b` terms from domain-B images; `gan_a`/`gan_b` are the
/// generator-side adversarial terms of discriminators A and B.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub gan_a: f64,
    pub gan_b: f64,
    pub recon_x_a: f64,
    pub recon_x_b: f64,
    pub recon_c_a: f64,
    pub recon_c_b: f64,
    pub recon_s_a: f64,
    pub recon_s_b: f64,
    pub sem_a: f64,
    pub sem_b: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub gan_a: f64,
    pub gan_b: f64,
    pub recon_x_a: f64,
    pub recon_x_b: f64,
    pub recon_c_a: f64,
    pub recon_c_b: f64,
    pub recon_s_a: f64,
    pub recon_s_b: f64,
    pub sem_a: f64,
    pub sem_b: f64,
    pub total: f64,
    /// Discriminator objectives from the update that preceded this one.
    pub disc_a: f64,
    pub disc_b: f64,
}

impl LossBreakdown {
    pub fn terms(&self) -> LossTerms {
        LossTerms {
            gan_a: self.gan_a,
            gan_b: self.gan_b,
            recon_x_a: self.recon_x_a,
            recon_x_b: self.recon_x_b,
            recon_c_a: self.recon_c_a,
            recon_c_b: self.recon_c_b,
            recon_s_a: self.recon_s_a,
            recon_s_b: self.recon_s_b,
            sem_a: self.sem_a,
            sem_b: self.sem_b,
        }
    }

    pub fn all_finite(&self) -> bool {
        let t = self.terms();
        [
            t.gan_a,
            t.gan_b,
            t.recon_x_a,
            t.recon_x_b,
            t.recon_c_a,
            t.recon_c_b,
            t.recon_s_a,
            t.recon_s_b,
            t.sem_a,
            t.sem_b,
            self.total,
            self.disc_a,
            self.disc_b,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// `gan_A + gan_B + λx(x_A + x_B) + λc(c_A + c_B) + λs(s_A + s_B) + λU(u_A + u_B)`.
pub fn total_loss(t: &LossTerms, w: &LossWeights) -> Result<LossBreakdown> {
    w.validate()?;
    let total = t.gan_a
        + t.gan_b
        + w.lambda_x * (t.recon_x_a + t.recon_x_b)
        + w.lambda_c * (t.recon_c_a + t.recon_c_b)
        + w.lambda_s * (t.recon_s_a + t.recon_s_b)
        + w.lambda_u * (t.sem_a + t.sem_b);
    Ok(LossBreakdown {
        gan_a: t.gan_a,
        gan_b: t.gan_b,
        recon_x_a: t.recon_x_a,
        recon_x_b: t.recon_x_b,
        recon_c_a: t.recon_c_a,
        recon_c_b: t.recon_c_b,
        recon_s_a: t.recon_s_a,
        recon_s_b: t.recon_s_b,
        sem_a: t.sem_a,
        sem_b: t.sem_b,
        total,
        disc_a: 0.0,
        disc_b: 0.0,
    })
}

fn check_scales(a: &[NodeId], b: Option<&[NodeId]>) -> Result<()> {
    if a.is_empty() {
        return Err(Error::Argument("no discriminator score maps".into()));
    }
    if let Some(b) = b {
        if b.len() != a.len() {
            return Err(Error::Argument(alloc::format!("{} fake score maps vs {} real", a.len(), b.len())));
        }
    }
    Ok(())
}

/// Discriminator objective averaged over scales:
/// `½·E[D(fake)²] + E[(D(real) − 1)²]`.
pub fn gan_d_node<F: Float>(g: &mut Graph<F>, fake: &[NodeId], real: &[NodeId]) -> Result<NodeId> {
    check_scales(fake, Some(real))?;
    let inv = 1.0 / fake.len() as f64;
    let mut terms = Vec::with_capacity(2 * fake.len());
    for (&f, &r) in fake.iter().zip(real) {
        terms.push((g.mean_sq_diff_const(f, F::zero())?, F::from_f64_lossy(0.5 * inv)));
        terms.push((g.mean_sq_diff_const(r, F::one())?, F::from_f64_lossy(inv)));
    }
    g.weighted_sum(&terms)
}

/// Generator-side adversarial term averaged over scales: `E[(D(fake) − 1)²]`.
pub fn gan_g_node<F: Float>(g: &mut Graph<F>, fake: &[NodeId]) -> Result<NodeId> {
    check_scales(fake, None)?;
    let inv = F::from_f64_lossy(1.0 / fake.len() as f64);
    let mut terms = Vec::with_capacity(fake.len());
    for &f in fake {
        terms.push((g.mean_sq_diff_const(f, F::one())?, inv));
    }
    g.weighted_sum(&terms)
}

fn constants<F: Float>(g: &mut Graph<F>, maps: &[Tensor<F>]) -> Vec<NodeId> {
    maps.iter().map(|m| g.constant(m.clone())).collect()
}

pub fn adversarial_loss_d<F: Float>(fake: &[Tensor<F>], real: &[Tensor<F>]) -> Result<f64> {
    let mut g = Graph::new();
    let f = constants(&mut g, fake);
    let r = constants(&mut g, real);
    let out = gan_d_node(&mut g, &f, &r)?;
    Ok(g.scalar(out).to_f64_lossy())
}

pub fn adversarial_loss_g<F: Float>(fake: &[Tensor<F>]) -> Result<f64> {
    let mut g = Graph::new();
    let f = constants(&mut g, fake);
    let out = gan_g_node(&mut g, &f)?;
    Ok(g.scalar(out).to_f64_lossy())
}

/// Mean absolute difference.
pub fn mean_l1<F: Float>(a: &Tensor<F>, b: &Tensor<F>) -> Result<f64> {
    let mut g = Graph::new();
    let an = g.constant(a.clone());
    let bn = g.constant(b.clone());
    let out = g.mean_abs_diff(an, bn)?;
    Ok(g.scalar(out).to_f64_lossy())
}

pub fn image_recon_loss<F: Float>(x: &Tensor<F>, x_rec: &Tensor<F>) -> Result<f64> {
    mean_l1(x, x_rec)
}

pub fn content_recon_loss<F: Float>(c: &Tensor<F>, c_rec: &Tensor<F>) -> Result<f64> {
    mean_l1(c, c_rec)
}

pub fn style_recon_loss<F: Float>(s_sampled: &Tensor<F>, s_rec: &Tensor<F>) -> Result<f64> {
    mean_l1(s_sampled, s_rec)
}

/// `E‖u_trans − u_src‖` as a mean absolute difference of semantic features.
pub fn semantic_constraint_loss<F: Float>(u_src: &Tensor<F>, u_trans: &Tensor<F>) -> Result<f64> {
    mean_l1(u_trans, u_src)
}
