//! Synthetic embeddings with a planted utility direction.
//!
//! Every vector is `utility_scale * utility * u + noise`, where `u` is a unit
//! vector fixed by `utility_direction_seed` and the Gaussian noise is seeded
//! from a digest of the text. The utility of a text is read from a
//! `[u=<value>]` tag inside it, so synthetic scenarios keep their utility
//! through any prompt template. Text without a tag has utility 0.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::EmbedError;
use crate::data::{RawPair, Scenario, Split};
use crate::digest::digest_u64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub dim: usize,
    pub utility_direction_seed: u64,
    pub noise_sigma: f64,
    pub utility_scale: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            dim: 256,
            utility_direction_seed: 0,
            noise_sigma: 0.0,
            utility_scale: 1.0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.dim == 0 {
            return Err(EmbedError::InvalidSpec("synthetic dim must be positive".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(EmbedError::InvalidSpec(format!(
                "noise_sigma must be finite and >= 0, got {}",
                self.noise_sigma
            )));
        }
        if !self.utility_scale.is_finite() {
            return Err(EmbedError::InvalidSpec("utility_scale must be finite".into()));
        }
        Ok(())
    }
}

/// The planted unit direction for `seed`.
pub fn utility_direction(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Embedder with the direction precomputed.
#[derive(Debug, Clone)]
pub struct SyntheticEmbedder {
    cfg: SyntheticConfig,
    direction: Vec<f64>,
}

impl SyntheticEmbedder {
    pub fn new(cfg: SyntheticConfig) -> Result<Self, EmbedError> {
        cfg.validate()?;
        let direction = utility_direction(cfg.dim, cfg.utility_direction_seed);
        Ok(Self { cfg, direction })
    }

    pub fn config(&self) -> &SyntheticConfig {
        &self.cfg
    }

    pub fn direction(&self) -> &[f64] {
        &self.direction
    }

    pub fn embed_with_utility(&self, text: &str, planted_utility: f64) -> Vec<f64> {
        let a = self.cfg.utility_scale * planted_utility;
        let mut v: Vec<f64> = self.direction.iter().map(|u| a * u).collect();
        if self.cfg.noise_sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(digest_u64(&[b"noise", text.as_bytes()]));
            for x in &mut v {
                let z: f64 = StandardNormal.sample(&mut rng);
                *x += self.cfg.noise_sigma * z;
            }
        }
        v
    }

    /// Embeds `text` using the utility tagged inside it.
    pub fn embed(&self, text: &str) -> Vec<f64> {
        self.embed_with_utility(text, planted_utility(text).unwrap_or(0.0))
    }
}

/// One-off version of [`SyntheticEmbedder::embed_with_utility`].
pub fn synthetic_embed(
    cfg: &SyntheticConfig,
    text: &str,
    planted_utility: f64,
) -> Result<Vec<f64>, EmbedError> {
    Ok(SyntheticEmbedder::new(cfg.clone())?.embed_with_utility(text, planted_utility))
}

const TAG_OPEN: &str = "[u=";

/// Utility tagged in `text` as `[u=<float>]`; the last tag wins.
pub fn planted_utility(text: &str) -> Option<f64> {
    let start = text.rfind(TAG_OPEN)? + TAG_OPEN.len();
    let end = start + text[start..].find(']')?;
    text[start..end].parse().ok()
}

fn tagged(base: &str, utility: f64) -> String {
    format!("{base} [u={utility:+.6}]")
}

/// Scenario pairs with standard-normal utilities, better scenario first.
/// Texts are unique per (split, index) so splits never share embeddings.
pub fn synthetic_pairs(n: usize, split: Split, seed: u64) -> Vec<RawPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ digest_u64(&[b"pairs", split.as_str().as_bytes()]));
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let i = out.len();
        let ua: f64 = StandardNormal.sample(&mut rng);
        let ub: f64 = StandardNormal.sample(&mut rng);
        // compare what the tag will carry
        let ta: f64 = format!("{ua:.6}").parse().unwrap_or(ua);
        let tb: f64 = format!("{ub:.6}").parse().unwrap_or(ub);
        if ta == tb {
            continue;
        }
        let (hi, lo) = if ta > tb { (ta, tb) } else { (tb, ta) };
        let better = tagged(&format!("Synthetic {split} scenario {i} (a)"), hi);
        let worse = tagged(&format!("Synthetic {split} scenario {i} (b)"), lo);
        out.push(RawPair {
            better: Scenario::new(better).expect("non-empty"),
            worse: Scenario::new(worse).expect("non-empty"),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    fn cfg(dim: usize, sigma: f64, scale: f64) -> SyntheticConfig {
        SyntheticConfig {
            dim,
            utility_direction_seed: 11,
            noise_sigma: sigma,
            utility_scale: scale,
        }
    }

    #[test]
    fn direction_is_unit_and_seeded() {
        let u = utility_direction(64, 3);
        assert!((dot(&u, &u) - 1.0).abs() < 1e-12);
        assert_eq!(u, utility_direction(64, 3));
        assert_ne!(u, utility_direction(64, 4));
    }

    #[test]
    fn noiseless_contrast_is_twice_the_scale() {
        let e = SyntheticEmbedder::new(cfg(32, 0.0, 1.5)).unwrap();
        let hp = e.embed_with_utility("p", 1.0);
        let hm = e.embed_with_utility("m", -1.0);
        let u = e.direction();
        assert!((dot(u, &hp) - dot(u, &hm) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_utility_no_noise_is_zero() {
        let v = synthetic_embed(&cfg(16, 0.0, 2.0), "anything", 0.0).unwrap();
        assert!(v.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn same_text_same_vector() {
        let e = SyntheticEmbedder::new(cfg(16, 1.0, 1.0)).unwrap();
        assert_eq!(e.embed("abc [u=0.5]"), e.embed("abc [u=0.5]"));
        assert_ne!(e.embed("abc [u=0.5]"), e.embed("abd [u=0.5]"));
    }

    #[test]
    fn sign_recovery_rate_at_unit_noise() {
        // dot(u, H) = 2 * (+-1) + N(0, 1): expected agreement Phi(2) ~ 0.977
        let e = SyntheticEmbedder::new(cfg(64, 1.0, 2.0)).unwrap();
        let n = 10_000;
        let hits = (0..n)
            .filter(|i| {
                let y = if i % 2 == 0 { 1.0 } else { -1.0 };
                let h = e.embed_with_utility(&format!("draw {i}"), y);
                dot(e.direction(), &h).signum() == y
            })
            .count();
        let rate = hits as f64 / n as f64;
        assert!(rate >= 0.95, "{rate}");
        assert!((rate - 0.977).abs() < 0.01, "{rate}");
    }

    #[test]
    fn correlation_tends_to_one_as_noise_vanishes() {
        let mut last = 0.0;
        for sigma in [1.0, 0.3, 0.1, 0.01] {
            let e = SyntheticEmbedder::new(cfg(32, sigma, 1.0)).unwrap();
            let (mut xs, mut ys) = (Vec::new(), Vec::new());
            for i in 0..400 {
                let ut = (i as f64 / 200.0) - 1.0;
                xs.push(ut);
                ys.push(dot(e.direction(), &e.embed_with_utility(&format!("t{i}"), ut)));
            }
            let mx = xs.iter().sum::<f64>() / 400.0;
            let my = ys.iter().sum::<f64>() / 400.0;
            let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
            let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
            let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
            let r = cov / (vx * vy).sqrt();
            assert!(r >= last - 1e-3, "sigma {sigma}: {r} < {last}");
            last = r;
        }
        assert!(last > 0.999);
    }

    #[test]
    fn tag_parsing() {
        assert_eq!(planted_utility("x [u=+0.250000]"), Some(0.25));
        assert_eq!(planted_utility("How? \"x [u=-1.5]\""), Some(-1.5));
        assert_eq!(planted_utility("no tag"), None);
        assert_eq!(planted_utility("[u=bad]"), None);
    }

    #[test]
    fn pairs_are_ordered_and_unique() {
        let p = synthetic_pairs(300, Split::Train, 1);
        assert_eq!(p.len(), 300);
        for r in &p {
            assert!(planted_utility(r.better.text()) > planted_utility(r.worse.text()));
        }
        let q = synthetic_pairs(300, Split::Test, 1);
        assert!(p.iter().zip(&q).all(|(a, b)| a.better != b.better));
        assert_eq!(p, synthetic_pairs(300, Split::Train, 1));
    }

    #[test]
    fn invalid_configs() {
        assert!(cfg(0, 0.0, 1.0).validate().is_err());
        assert!(cfg(4, -1.0, 1.0).validate().is_err());
        assert!(cfg(4, f64::NAN, 1.0).validate().is_err());
    }
}
