use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::text::TextEncoder;
use super::vocab::PROMPT_TEMPLATE;
use super::{mix_seed, RgbdImage, SynthError};
use crate::numerics::Tensor;

/// Steps of the noise schedule.
pub const NOISE_STEPS: usize = 10;
const LATENT_CHANNELS: usize = 4;
const HIDDEN_CHANNELS: usize = 8;
const ORACLE_SEED: u64 = 0x5eed_0ac1e;

/// `alpha_t`, linear from 1.0 at `t = 0` to 0.1 at the last step.
pub fn alpha(t: usize) -> f64 {
    1.0 - 0.9 * t as f64 / (NOISE_STEPS - 1) as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct SemanticTarget {
    /// `H x W x D_f`.
    pub features: Tensor,
    pub prompt: Vec<String>,
}

/// Frozen stand-in for a diffusion backbone: a per-pixel image encoder, one
/// step of forward noising, then two prompt-conditioned 3x3 convolutions.
#[derive(Clone, Debug)]
pub struct SemanticOracle {
    feature_dim: usize,
    text: TextEncoder,
    enc_w: [[f64; 3]; LATENT_CHANNELS],
    enc_b: [f64; LATENT_CHANNELS],
    conv1: Vec<f64>,
    prompt_proj: Vec<f64>,
    conv2: Vec<f64>,
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n)
        .map(|_| std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect()
}

/// 3x3 convolution with zero padding; `w` is `[out][in][3][3]`.
fn conv3x3(input: &[f64], h: usize, w: usize, cin: usize, weights: &[f64], cout: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w * cout];
    for r in 0..h {
        for c in 0..w {
            let o = &mut out[(r * w + c) * cout..(r * w + c + 1) * cout];
            for dr in 0..3 {
                for dc in 0..3 {
                    let (rr, cc) = (r + dr, c + dc);
                    if rr < 1 || cc < 1 || rr > h || cc > w {
                        continue;
                    }
                    let px = &input[((rr - 1) * w + (cc - 1)) * cin..((rr - 1) * w + cc) * cin];
                    for (oc, acc) in o.iter_mut().enumerate() {
                        for (ic, &x) in px.iter().enumerate() {
                            *acc += weights[((oc * cin + ic) * 3 + dr) * 3 + dc] * x;
                        }
                    }
                }
            }
        }
    }
    out
}

impl SemanticOracle {
    pub fn frozen(feature_dim: usize, text: TextEncoder) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(ORACLE_SEED ^ feature_dim as u64);
        let enc = gaussian(&mut rng, LATENT_CHANNELS * 4, 1.0);
        let mut enc_w = [[0.0; 3]; LATENT_CHANNELS];
        let mut enc_b = [0.0; LATENT_CHANNELS];
        for k in 0..LATENT_CHANNELS {
            enc_w[k].copy_from_slice(&enc[k * 4..k * 4 + 3]);
            enc_b[k] = 0.1 * enc[k * 4 + 3];
        }
        let conv1 = gaussian(
            &mut rng,
            HIDDEN_CHANNELS * LATENT_CHANNELS * 9,
            1.0 / libm::sqrt((LATENT_CHANNELS * 9) as f64),
        );
        let prompt_proj = gaussian(&mut rng, HIDDEN_CHANNELS * text.dim(), 0.5);
        let conv2 = gaussian(
            &mut rng,
            feature_dim * HIDDEN_CHANNELS * 9,
            1.0 / libm::sqrt((HIDDEN_CHANNELS * 9) as f64),
        );
        Self {
            feature_dim,
            text,
            enc_w,
            enc_b,
            conv1,
            prompt_proj,
            conv2,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Oracle prompt: the template token followed by the instruction.
    pub fn prompt(instruction: &[String]) -> Vec<String> {
        let mut p = Vec::with_capacity(instruction.len() + 1);
        p.push(String::from(PROMPT_TEMPLATE));
        p.extend(instruction.iter().cloned());
        p
    }

    /// Per-pixel latent `tanh(A rgb + b)`, `H x W x 4`.
    pub fn encode_image(&self, image: &RgbdImage) -> Vec<f64> {
        let mut z = Vec::with_capacity(image.pixels() * LATENT_CHANNELS);
        for px in image.data.chunks(4) {
            for k in 0..LATENT_CHANNELS {
                let w = &self.enc_w[k];
                z.push(libm::tanh(w[0] * px[0] + w[1] * px[1] + w[2] * px[2] + self.enc_b[k]));
            }
        }
        z
    }

    /// Noised latent `sqrt(a) z + sqrt(1-a) eps` with `eps` keyed by
    /// `(episode_key, camera)`.
    pub fn noised_latent(
        &self,
        image: &RgbdImage,
        t: usize,
        episode_key: u64,
        camera: usize,
    ) -> Result<Vec<f64>, SynthError> {
        if t >= NOISE_STEPS {
            return Err(SynthError::ScheduleStep(t));
        }
        let a = alpha(t);
        let mut z = self.encode_image(image);
        if a < 1.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[0x0e75, episode_key, camera as u64]));
            let (sa, sn) = (libm::sqrt(a), libm::sqrt(1.0 - a));
            for x in z.iter_mut() {
                let e: f64 = StandardNormal.sample(&mut rng);
                *x = sa * *x + sn * e;
            }
        }
        Ok(z)
    }

    pub fn semantic_target(
        &self,
        image: &RgbdImage,
        instruction: &[String],
        t: usize,
        episode_key: u64,
        camera: usize,
    ) -> Result<SemanticTarget, SynthError> {
        let y = self.noised_latent(image, t, episode_key, camera)?;
        let prompt = Self::prompt(instruction);
        let lp = self.text.encode(&prompt)?.sentence;
        let bias: Vec<f64> = (0..HIDDEN_CHANNELS)
            .map(|k| {
                self.prompt_proj[k * lp.len()..(k + 1) * lp.len()]
                    .iter()
                    .zip(&lp)
                    .map(|(w, x)| w * x)
                    .sum()
            })
            .collect();
        let (h, w) = (image.height, image.width);
        let mut hidden = conv3x3(&y, h, w, LATENT_CHANNELS, &self.conv1, HIDDEN_CHANNELS);
        for px in hidden.chunks_mut(HIDDEN_CHANNELS) {
            for (x, b) in px.iter_mut().zip(&bias) {
                *x = (*x + b).max(0.0);
            }
        }
        let out = conv3x3(&hidden, h, w, HIDDEN_CHANNELS, &self.conv2, self.feature_dim);
        Ok(SemanticTarget {
            features: Tensor::new(vec![h, w, self.feature_dim], out)
                .expect("oracle output is finite"),
            prompt,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthbench::text::tokens;

    fn image(w: usize, h: usize, f: impl Fn(usize, usize) -> [f64; 3]) -> RgbdImage {
        let mut data = Vec::new();
        for r in 0..h {
            for c in 0..w {
                let p = f(r, c);
                data.extend_from_slice(&[p[0], p[1], p[2], 1.0]);
            }
        }
        RgbdImage {
            width: w,
            height: h,
            data,
        }
    }

    fn oracle() -> SemanticOracle {
        SemanticOracle::frozen(16, TextEncoder::frozen(64))
    }

    #[test]
    fn schedule_endpoints() {
        assert_eq!(alpha(0), 1.0);
        assert!((alpha(NOISE_STEPS - 1) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn step_zero_has_no_noise() {
        let o = oracle();
        let img = image(6, 5, |r, c| [r as f64 / 5.0, c as f64 / 6.0, 0.3]);
        assert_eq!(o.noised_latent(&img, 0, 3, 1).unwrap(), o.encode_image(&img));
        assert_ne!(o.noised_latent(&img, 4, 3, 1).unwrap(), o.encode_image(&img));
        assert!(o.noised_latent(&img, NOISE_STEPS, 3, 1).is_err());
    }

    #[test]
    fn deterministic_per_key() {
        let o = oracle();
        let img = image(8, 8, |r, _| [0.1 * r as f64, 0.5, 0.2]);
        let instr = tokens(&["open", "the", "small", "grill"]);
        let a = o.semantic_target(&img, &instr, 3, 11, 2).unwrap();
        let b = o.semantic_target(&img, &instr, 3, 11, 2).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.prompt[0], PROMPT_TEMPLATE);
        let c = o.semantic_target(&img, &instr, 3, 12, 2).unwrap();
        assert_ne!(a.features, c.features);
    }

    #[test]
    fn local_receptive_field() {
        let o = oracle();
        let (w, h) = (12, 12);
        let base = image(w, h, |_, _| [0.2, 0.3, 0.4]);
        let changed = image(w, h, |r, c| {
            if (5..7).contains(&r) && (5..7).contains(&c) {
                [0.9, 0.1, 0.1]
            } else {
                [0.2, 0.3, 0.4]
            }
        });
        let instr = tokens(&["stack", "the", "cup"]);
        let fa = o.semantic_target(&base, &instr, 2, 5, 0).unwrap().features;
        let fb = o.semantic_target(&changed, &instr, 2, 5, 0).unwrap().features;
        let d = o.feature_dim();
        let mut inside = 0.0;
        for r in 0..h {
            for c in 0..w {
                let near = (3..9).contains(&r) && (3..9).contains(&c);
                let i = (r * w + c) * d;
                let dist: f64 = (0..d)
                    .map(|k| (fa.data()[i + k] - fb.data()[i + k]).powi(2))
                    .sum();
                if near {
                    inside += dist;
                } else {
                    assert_eq!(dist, 0.0, "pixel ({r},{c}) outside the receptive field changed");
                }
            }
        }
        assert!(inside > 0.0);
    }
}
