use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::model::{ConvOccNet, NetConfig};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Seed for the parameters a geometric initialization leaves random.
const GEOMETRIC_SEED: u64 = 0x5a0c;

/// Logit slope of the geometric initialization: `g(q, 0) ~ SLOPE * (|q - c| - r)`.
pub const GEOMETRIC_SLOPE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitMode {
    /// Kaiming-normal weights (`N(0, 2 / fan_in)`), zero biases.
    Random { seed: u64 },
    /// Decoder starts as the signed distance of a sphere of `radius` about
    /// the cube center (positive outside) when volume features vanish.
    Geometric { radius: f64 },
}

impl ConvOccNet {
    pub fn new(config: NetConfig, mode: InitMode) -> Result<Self> {
        config.validate()?;
        let seed = match mode {
            InitMode::Random { seed } => seed,
            InitMode::Geometric { radius } => {
                if !(radius > 0.0 && radius < 0.5) {
                    return Err(Error::contract(format!("geometric init radius must lie in (0, 0.5), got {radius}")));
                }
                GEOMETRIC_SEED
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let named = config
            .parameter_layout()
            .into_iter()
            .map(|(name, shape)| {
                let t = kaiming(&mut rng, &name, shape);
                (name, t)
            })
            .collect();
        let mut model = ConvOccNet::from_named(config, named)?;
        if let InitMode::Geometric { radius } = mode {
            geometric_decoder(&mut model, radius)?;
        }
        Ok(model)
    }
}

fn kaiming(rng: &mut ChaCha8Rng, name: &str, shape: Vec<usize>) -> Tensor {
    let n: usize = shape.iter().product();
    if name.ends_with(".bias") {
        return Tensor::zeros(shape);
    }
    let fan_in: usize = shape[1..].iter().product();
    let std = (2.0 / fan_in as f64).sqrt();
    let data = (0..n)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            z * std
        })
        .collect();
    Tensor::new(shape, data).expect("finite by construction")
}

/// Unit directions spread over the sphere (Fibonacci lattice).
fn sphere_directions(n: usize) -> Vec<[f64; 3]> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|k| {
            let z = 1.0 - (2 * k + 1) as f64 / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * k as f64;
            [r * phi.cos(), r * phi.sin(), z]
        })
        .collect()
}

/// Lift units come in pairs `relu(+d.(q-c))`, `relu(-d.(q-c))` whose sum is
/// `|d.(q-c)|`; averaged over directions that is `|q-c| / 2`. Residual
/// blocks start as the identity and the head turns the sum back into a
/// distance.
fn geometric_decoder(model: &mut ConvOccNet, radius: f64) -> Result<()> {
    let cfg = *model.config();
    let hd = cfg.decoder_hidden;
    let cols = 3 + cfg.feature_dim;
    let pairs = hd / 2;
    if pairs == 0 {
        return Err(Error::Config("geometric init needs decoder_hidden >= 2".into()));
    }
    let center = [0.5; 3];
    let mut w = vec![0.0; hd * cols];
    let mut b = vec![0.0; hd];
    for (k, d) in sphere_directions(pairs).into_iter().enumerate() {
        for (unit, sign) in [(2 * k, 1.0), (2 * k + 1, -1.0)] {
            for a in 0..3 {
                w[unit * cols + a] = sign * d[a];
            }
            b[unit] = -sign * (d[0] * center[0] + d[1] * center[1] + d[2] * center[2]);
        }
    }
    set(model, "decoder.fc_in.weight", w)?;
    set(model, "decoder.fc_in.bias", b)?;
    for i in 0..cfg.decoder_blocks {
        set(model, &format!("decoder.block{i}.fc1.weight"), vec![0.0; hd * hd])?;
        set(model, &format!("decoder.block{i}.fc1.bias"), vec![0.0; hd])?;
    }
    let mut head = vec![0.0; hd];
    head[..2 * pairs].fill(GEOMETRIC_SLOPE * 2.0 / pairs as f64);
    set(model, "decoder.fc_out.weight", head)?;
    set(model, "decoder.fc_out.bias", vec![-GEOMETRIC_SLOPE * radius])
}

fn set(model: &mut ConvOccNet, name: &str, data: Vec<f64>) -> Result<()> {
    let t = model
        .param_mut(name)
        .ok_or_else(|| Error::contract(format!("no parameter {name}")))?;
    let shape = t.shape().to_vec();
    *t = Tensor::new(shape, data)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn directions_are_unit_and_balanced() {
        let dirs = sphere_directions(16);
        let mut mean = [0.0; 3];
        for d in &dirs {
            let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            assert!((n - 1.0).abs() < 1e-12);
            for a in 0..3 {
                mean[a] += d[a] / 16.0;
            }
        }
        assert!(mean.iter().all(|m| m.abs() < 0.1));
    }

    #[test]
    fn kaiming_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = kaiming(&mut rng, "x.weight", vec![200, 50]);
        let var = t.data().iter().map(|v| v * v).sum::<f64>() / t.numel() as f64;
        assert!((var - 2.0 / 50.0).abs() < 0.004, "{var}");
        assert!(kaiming(&mut rng, "x.bias", vec![7]).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rejects_bad_radius() {
        let cfg = NetConfig::with_sizes(8, 4, 1);
        assert!(ConvOccNet::new(cfg, InitMode::Geometric { radius: 0.6 }).is_err());
        assert!(ConvOccNet::new(cfg, InitMode::Geometric { radius: 0.0 }).is_err());
    }
}
