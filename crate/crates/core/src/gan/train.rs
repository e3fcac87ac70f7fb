//! The Wasserstein training loop.
//!
//! One step = one critic update followed by one generator update:
//! the critic ascends `mean D(real) - mean D(fake)`, the generator ascends
//! `mean D(fake)`, both through RMSProp at the configured rate. The critic's
//! weights get singular value clipping every `svc_interval` steps.
//!
//! Determinism: all randomness (batch indices, latents) is drawn from one
//! sequential ChaCha stream before the per-sample gradient maps run, and the
//! maps collect in input order, so the parameter trajectory is identical
//! for any worker count.

use super::model::{bind, disc_forward, generator_forward, mask_to_tensor, volume_to_tensor};
use super::svc::singular_value_clip;
use super::{Checkpoint, DiscriminatorParams, GanArch, GanError, TrganConfig};
use crate::checkpoint::RngStateSer;
use crate::nn::init::hex_string;
use crate::nn::{Graph, Tensor};
use crate::volume::Sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Observers for training-time events.
#[derive(Default)]
pub struct TrainHooks<'a> {
    pub on_checkpoint: Option<Box<dyn FnMut(&Checkpoint) + 'a>>,
    /// Called right after each singular value clipping with the freshly
    /// clipped critic.
    pub on_clip: Option<Box<dyn FnMut(u64, &DiscriminatorParams) + 'a>>,
}

pub(crate) fn rng_state(rng: &ChaCha8Rng) -> RngStateSer {
    RngStateSer {
        seed_hex: hex_string(&rng.get_seed()),
        stream: rng.get_stream(),
        word_pos: rng.get_word_pos().to_string(),
    }
}

/// Trains on `dataset`, returning every emitted checkpoint (one per
/// `checkpoint_interval` plus the final step).
pub fn train_trgan(dataset: &[Sample], config: &TrganConfig) -> Result<Vec<Checkpoint>, GanError> {
    train_trgan_with(dataset, config, &mut TrainHooks::default())
}

pub fn train_trgan_with(
    dataset: &[Sample],
    config: &TrganConfig,
    hooks: &mut TrainHooks<'_>,
) -> Result<Vec<Checkpoint>, GanError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(GanError::EmptyDataset);
    }
    let dims = dataset[0].volume.dims;
    for s in dataset {
        if s.volume.dims != dims || s.mask.dims != dims {
            return Err(GanError::GridMismatch(format!("sample {} is not on grid {dims:?}", s.id)));
        }
    }
    let arch = GanArch::new(dims, config)?;
    let digest = config.digest();

    let mut rng = crate::seed::rng_from_seed(config.seed);
    let mut gen = super::init_generator(&arch, &mut rng);
    let mut disc = super::init_discriminator(&arch, &mut rng);
    let mut opt_g = crate::nn::optim::RmsProp::new(config.learning_rate, &gen.set);
    let mut opt_d = crate::nn::optim::RmsProp::new(config.learning_rate, &disc.set);

    let volumes: Vec<Tensor> = dataset.iter().map(|s| volume_to_tensor(&s.volume)).collect();
    let masks: Vec<Tensor> = dataset.iter().map(|s| mask_to_tensor(&s.mask)).collect();

    let n = dataset.len();
    let batch = config.batch_size.min(n);
    let mut checkpoints = Vec::new();

    for step in 1..=config.total_steps {
        // batch indices and latents come off the sequential stream first
        let indices: Vec<usize> = rand::seq::index::sample(&mut rng, n, batch).into_vec();
        let draw_latents = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..batch)
                .map(|_| (0..arch.d0).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
                .collect()
        };
        let z_disc = draw_latents(&mut rng);

        // critic update: ascend mean D(real) - mean D(fake)
        let items: Vec<(usize, Vec<f64>)> = indices.iter().copied().zip(z_disc).collect();
        let results = crate::exec::map_slice(&items, |(idx, z0)| {
            let mut g = Graph::new();
            let bg = bind(&mut g, &gen.set, false);
            let bd = bind(&mut g, &disc.set, true);
            let z0n = g.constant(Tensor::from_slice(vec![arch.d0], z0));
            let fake = generator_forward(&mut g, &arch, &bg, z0n, &masks[*idx]);
            let mask_node = g.constant(masks[*idx].clone());
            let s_fake = disc_forward(&mut g, &arch, &bd, fake, mask_node, config.omega);
            let real_node = g.constant(volumes[*idx].clone());
            let mask_node = g.constant(masks[*idx].clone());
            let s_real = disc_forward(&mut g, &arch, &bd, real_node, mask_node, config.omega);
            let loss = g.sub(s_fake, s_real);
            let grads = g.backward(loss);
            (g.value(loss).item(), bd.extract_grads(&disc.set, &grads))
        });
        let (d_loss, d_grads) = average_grads(results, batch);
        if !d_loss.is_finite() {
            return Err(GanError::NonFiniteLoss { step, part: "discriminator" });
        }
        opt_d.step(&mut disc.set, &d_grads);

        if step % config.svc_interval == 0 {
            singular_value_clip(&mut disc.set);
            if config.svc_on_generator {
                singular_value_clip(&mut gen.set);
            }
            if let Some(on_clip) = hooks.on_clip.as_mut() {
                on_clip(step, &disc);
            }
        }

        // generator update: ascend mean D(fake)
        let z_gen = draw_latents(&mut rng);
        let items: Vec<(usize, Vec<f64>)> = indices.iter().copied().zip(z_gen).collect();
        let results = crate::exec::map_slice(&items, |(idx, z0)| {
            let mut g = Graph::new();
            let bg = bind(&mut g, &gen.set, true);
            let bd = bind(&mut g, &disc.set, false);
            let z0n = g.constant(Tensor::from_slice(vec![arch.d0], z0));
            let fake = generator_forward(&mut g, &arch, &bg, z0n, &masks[*idx]);
            let mask_node = g.constant(masks[*idx].clone());
            let score = disc_forward(&mut g, &arch, &bd, fake, mask_node, config.omega);
            let loss = g.affine(score, -1.0, 0.0);
            let grads = g.backward(loss);
            (g.value(loss).item(), bg.extract_grads(&gen.set, &grads))
        });
        let (g_loss, g_grads) = average_grads(results, batch);
        if !g_loss.is_finite() {
            return Err(GanError::NonFiniteLoss { step, part: "generator" });
        }
        opt_g.step(&mut gen.set, &g_grads);

        if step % config.checkpoint_interval == 0 || step == config.total_steps {
            let checkpoint = Checkpoint {
                step,
                config_digest: digest.clone(),
                generator: gen.clone(),
                discriminator: disc.clone(),
                rng: rng_state(&rng),
            };
            if let Some(on_checkpoint) = hooks.on_checkpoint.as_mut() {
                on_checkpoint(&checkpoint);
            }
            checkpoints.push(checkpoint);
        }
    }
    Ok(checkpoints)
}

/// Mean loss and per-parameter mean gradients over the batch, reduced in
/// input order.
fn average_grads(results: Vec<(f64, Vec<Tensor>)>, batch: usize) -> (f64, Vec<Tensor>) {
    let scale = 1.0 / batch as f64;
    let mut iter = results.into_iter();
    let (first_loss, mut acc) = iter.next().expect("nonempty batch");
    let mut loss = first_loss;
    for (l, grads) in iter {
        loss += l;
        for (a, g) in acc.iter_mut().zip(grads) {
            for (av, gv) in a.data.iter_mut().zip(g.data) {
                *av += gv;
            }
        }
    }
    for g in &mut acc {
        for v in &mut g.data {
            *v *= scale;
        }
    }
    (loss * scale, acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gan::svc::max_weight_singular_value;
    use crate::volume::{generate_population, PhantomConfig};

    fn tiny_gan_config() -> TrganConfig {
        TrganConfig {
            d0: 8,
            d1: 8,
            g0_hidden: 8,
            g1_base_channels: 4,
            g1_mid_channels: 4,
            mask_channels: 2,
            disc_channels: vec![4, 8],
            learning_rate: 1e-3,
            batch_size: 4,
            total_steps: 10,
            checkpoint_interval: 5,
            svc_interval: 5,
            seed: 3,
            ..Default::default()
        }
    }

    fn tiny_dataset() -> Vec<crate::volume::Sample> {
        let config = PhantomConfig {
            dims: crate::volume::GridDims::new(8, 8, 4),
            tumour_semiaxes: crate::volume::IntensityRange::new(1.0, 1.4),
            seed: 5,
            ..Default::default()
        };
        generate_population(&config, 4).unwrap()
    }

    #[test]
    fn checkpoint_cadence_and_determinism() {
        let dataset = tiny_dataset();
        let config = tiny_gan_config();
        let a = train_trgan(&dataset, &config).unwrap();
        assert_eq!(a.iter().map(|c| c.step).collect::<Vec<_>>(), vec![5, 10]);
        let b = train_trgan(&dataset, &config).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.generator.set.digest(), y.generator.set.digest());
            assert_eq!(x.discriminator.set.digest(), y.discriminator.set.digest());
        }
    }

    #[test]
    fn final_step_checkpoint_forced() {
        let dataset = tiny_dataset();
        let config = TrganConfig { total_steps: 7, checkpoint_interval: 100, ..tiny_gan_config() };
        let ckpts = train_trgan(&dataset, &config).unwrap();
        assert_eq!(ckpts.iter().map(|c| c.step).collect::<Vec<_>>(), vec![7]);
    }

    #[test]
    fn clipping_keeps_critic_spectra_bounded() {
        let dataset = tiny_dataset();
        let config = tiny_gan_config();
        let mut clipped_at = Vec::new();
        let mut hooks = TrainHooks {
            on_clip: Some(Box::new(|step, disc: &DiscriminatorParams| {
                clipped_at.push(step);
                assert!(max_weight_singular_value(&disc.set) <= 1.0 + 1e-6);
            })),
            ..Default::default()
        };
        train_trgan_with(&dataset, &config, &mut hooks).unwrap();
        drop(hooks);
        assert_eq!(clipped_at, vec![5, 10]);
    }

    #[test]
    fn checkpoint_file_round_trip_reproduces_generation() {
        let dataset = tiny_dataset();
        let config = tiny_gan_config();
        let ckpts = train_trgan(&dataset, &config).unwrap();
        let last = ckpts.last().unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gan.ckpt");
        last.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.step, last.step);
        assert_eq!(loaded.config_digest, last.config_digest);

        let mut rng = crate::seed::rng_from_seed(17);
        let z0 = crate::gan::sample_latent(&config, &mut rng).z0;
        let mask = &dataset[0].mask;
        let (_, original) = crate::gan::synthesize(&last.generator, &z0, mask).unwrap();
        let (_, reloaded) = crate::gan::synthesize(&loaded.generator, &z0, mask).unwrap();
        for (a, b) in original.data.iter().zip(&reloaded.data) {
            assert!((f64::from(*a) - f64::from(*b)).abs() <= 1e-6);
        }
    }
}
