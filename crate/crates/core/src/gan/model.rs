//! Network construction and forward passes.

use super::{DiscriminatorParams, GanArch, GanError, GeneratorParams, LatentSeed, TrganConfig};
use crate::nn::init::{he_normal, xavier_normal, ParamKind, ParamSet};
use crate::nn::{Graph, NodeId, Tensor};
use crate::volume::{Mask, Volume};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Parameter leaves bound into one graph, in set order.
pub(crate) struct Bound {
    pairs: Vec<(String, NodeId)>,
}

impl Bound {
    pub(crate) fn get(&self, name: &str) -> NodeId {
        self.pairs
            .iter()
            .find(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("unbound parameter {name}"))
            .1
    }

    /// Gradients per parameter, in set order; zeros where a parameter did
    /// not participate.
    pub(crate) fn extract_grads(&self, set: &ParamSet, grads: &[Option<Tensor>]) -> Vec<Tensor> {
        self.pairs
            .iter()
            .zip(&set.entries)
            .map(|((_, id), entry)| {
                grads[id.0]
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(entry.tensor.shape.clone()))
            })
            .collect()
    }
}

pub(crate) fn bind(g: &mut Graph, set: &ParamSet, trainable: bool) -> Bound {
    let pairs = set
        .entries
        .iter()
        .map(|e| {
            let id = if trainable { g.param(e.tensor.clone()) } else { g.constant(e.tensor.clone()) };
            (e.name.clone(), id)
        })
        .collect();
    Bound { pairs }
}

pub(crate) fn volume_to_tensor(v: &Volume) -> Tensor {
    let data = v.data.iter().map(|&x| f64::from(x)).collect();
    Tensor::new(vec![1, v.dims.depth, v.dims.height, v.dims.width], data)
}

pub(crate) fn mask_to_tensor(m: &Mask) -> Tensor {
    let data = m.data.iter().map(|&x| f64::from(x)).collect();
    Tensor::new(vec![1, m.dims.depth, m.dims.height, m.dims.width], data)
}

fn mask_slice_tensor(m: &Tensor, t: usize) -> Tensor {
    let (h, w) = (m.shape[2], m.shape[3]);
    let slice = &m.data[t * h * w..(t + 1) * h * w];
    Tensor::from_slice(vec![1, 1, h, w], slice)
}

pub fn init_generator(arch: &GanArch, rng: &mut ChaCha8Rng) -> GeneratorParams {
    let mut set = ParamSet::new();
    for i in 0..arch.g0_stages {
        let cin = if i == 0 { arch.d0 } else { arch.g0_hidden };
        let cout = if i + 1 == arch.g0_stages { arch.d1 } else { arch.g0_hidden };
        let shape = vec![cin, cout, 1, 1, 4];
        let weight = if i + 1 == arch.g0_stages {
            xavier_normal(shape, cin * 4, cout * 4, rng)
        } else {
            he_normal(shape, cin * 4, rng)
        };
        set.push(format!("g0.stage{i}.weight"), weight, ParamKind::Weight { out_axis: 1 });
        set.push(format!("g0.stage{i}.bias"), Tensor::zeros(vec![cout]), ParamKind::Bias);
    }

    let (h4, w4) = (arch.height / 4, arch.width / 4);
    let cb = arch.g1_base_channels;
    let zdim = arch.d0 + arch.d1;
    set.push(
        "g1.project.weight",
        he_normal(vec![cb * h4 * w4, zdim], zdim, rng),
        ParamKind::Weight { out_axis: 0 },
    );
    set.push("g1.project.bias", Tensor::zeros(vec![cb * h4 * w4]), ParamKind::Bias);

    let me = arch.mask_channels;
    set.push(
        "g1.mask0.weight",
        he_normal(vec![me, 1, 1, 4, 4], 16, rng),
        ParamKind::Weight { out_axis: 0 },
    );
    set.push("g1.mask0.bias", Tensor::zeros(vec![me]), ParamKind::Bias);
    set.push(
        "g1.mask1.weight",
        he_normal(vec![me, me, 1, 4, 4], me * 16, rng),
        ParamKind::Weight { out_axis: 0 },
    );
    set.push("g1.mask1.bias", Tensor::zeros(vec![me]), ParamKind::Bias);

    let mid = arch.g1_mid_channels;
    set.push(
        "g1.up0.weight",
        he_normal(vec![cb + me, mid, 1, 4, 4], (cb + me) * 16, rng),
        ParamKind::Weight { out_axis: 1 },
    );
    set.push("g1.up0.bias", Tensor::zeros(vec![mid]), ParamKind::Bias);
    set.push(
        "g1.up1.weight",
        xavier_normal(vec![mid, 1, 1, 4, 4], mid * 16, 16, rng),
        ParamKind::Weight { out_axis: 1 },
    );
    set.push("g1.up1.bias", Tensor::zeros(vec![1]), ParamKind::Bias);

    GeneratorParams { arch: arch.clone(), set }
}

pub fn init_discriminator(arch: &GanArch, rng: &mut ChaCha8Rng) -> DiscriminatorParams {
    let mut set = ParamSet::new();
    let mut cin = 2usize;
    for (i, &cout) in arch.disc_channels.iter().enumerate() {
        set.push(
            format!("d.stage{i}.weight"),
            he_normal(vec![cout, cin, 4, 4, 4], cin * 64, rng),
            ParamKind::Weight { out_axis: 0 },
        );
        set.push(format!("d.stage{i}.bias"), Tensor::zeros(vec![cout]), ParamKind::Bias);
        cin = cout;
    }
    let flat = arch.disc_flat();
    set.push(
        "d.head.weight",
        xavier_normal(vec![1, flat], flat, 1, rng),
        ParamKind::Weight { out_axis: 0 },
    );
    set.push("d.head.bias", Tensor::zeros(vec![1]), ParamKind::Bias);
    DiscriminatorParams { arch: arch.clone(), set }
}

/// Temporal stack: z0 [d0] -> [d1, 1, 1, T].
pub(crate) fn g0_forward(g: &mut Graph, arch: &GanArch, b: &Bound, z0: NodeId) -> NodeId {
    let mut x = g.reshape(z0, vec![arch.d0, 1, 1, 1]);
    for i in 0..arch.g0_stages {
        let w = b.get(&format!("g0.stage{i}.weight"));
        let bias = b.get(&format!("g0.stage{i}.bias"));
        x = g.conv3d_t(x, w, bias, [1, 1, 2], [0, 0, 1]);
        x = if i + 1 == arch.g0_stages { g.tanh(x) } else { g.relu(x) };
    }
    x
}

/// One slice: (z0 [d0], z1t [d1], mask slice [1,1,H,W]) -> [1, H, W].
pub(crate) fn g1_forward(
    g: &mut Graph,
    arch: &GanArch,
    b: &Bound,
    z0: NodeId,
    z1t: NodeId,
    mask_slice: NodeId,
) -> NodeId {
    let (h4, w4) = (arch.height / 4, arch.width / 4);
    let z = g.concat_channels(z0, z1t);
    let proj = g.linear(b.get("g1.project.weight"), z, b.get("g1.project.bias"));
    let proj = g.relu(proj);
    let feat = g.reshape(proj, vec![arch.g1_base_channels, 1, h4, w4]);

    let m0 = g.conv3d(mask_slice, b.get("g1.mask0.weight"), b.get("g1.mask0.bias"), [1, 2, 2], [0, 1, 1]);
    let m0 = g.relu(m0);
    let m1 = g.conv3d(m0, b.get("g1.mask1.weight"), b.get("g1.mask1.bias"), [1, 2, 2], [0, 1, 1]);
    let m1 = g.relu(m1);

    let cat = g.concat_channels(feat, m1);
    let up = g.conv3d_t(cat, b.get("g1.up0.weight"), b.get("g1.up0.bias"), [1, 2, 2], [0, 1, 1]);
    let up = g.relu(up);
    let out = g.conv3d_t(up, b.get("g1.up1.weight"), b.get("g1.up1.bias"), [1, 2, 2], [0, 1, 1]);
    let out = g.tanh(out);
    g.reshape(out, vec![1, arch.height, arch.width])
}

/// Full generator: z0 node + mask tensor -> volume node [1, T, H, W].
pub(crate) fn generator_forward(
    g: &mut Graph,
    arch: &GanArch,
    b: &Bound,
    z0: NodeId,
    mask: &Tensor,
) -> NodeId {
    let seq = g0_forward(g, arch, b, z0);
    let seq = g.reshape(seq, vec![arch.d1, arch.depth]);
    let mut slices = Vec::with_capacity(arch.depth);
    for t in 0..arch.depth {
        let z1t = g.index_last_axis(seq, t);
        let ms = g.constant(mask_slice_tensor(mask, t));
        slices.push(g1_forward(g, arch, b, z0, z1t, ms));
    }
    g.stack_slices(&slices)
}

/// Critic: omega-weighted two-channel input -> scalar node in [-1, 1].
pub(crate) fn disc_forward(
    g: &mut Graph,
    arch: &GanArch,
    b: &Bound,
    volume: NodeId,
    mask: NodeId,
    omega: f64,
) -> NodeId {
    let img = g.affine(volume, 1.0 - omega, 0.0);
    let msk = g.affine(mask, omega, 0.0);
    let mut x = g.concat_channels(img, msk);
    for i in 0..arch.disc_channels.len() {
        let w = b.get(&format!("d.stage{i}.weight"));
        let bias = b.get(&format!("d.stage{i}.bias"));
        x = g.conv3d(x, w, bias, [2, 2, 2], [1, 1, 1]);
        x = g.leaky_relu(x, 0.2);
    }
    let flat = g.reshape(x, vec![arch.disc_flat()]);
    let y = g.linear(b.get("d.head.weight"), flat, b.get("d.head.bias"));
    g.tanh(y)
}

/// Draws `z0` i.i.d. standard normal; `z1` is left empty and is produced by
/// [`temporal_generate`].
pub fn sample_latent(config: &TrganConfig, rng: &mut ChaCha8Rng) -> LatentSeed {
    let z0 = (0..config.d0).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    LatentSeed { z0, z1: Vec::new() }
}

/// Runs the temporal generator: one `d1`-vector per slice.
pub fn temporal_generate(gen: &GeneratorParams, z0: &[f64]) -> Result<Vec<Vec<f64>>, GanError> {
    let arch = &gen.arch;
    if z0.len() != arch.d0 {
        return Err(GanError::Dimension(format!("z0 has {} components, expected {}", z0.len(), arch.d0)));
    }
    let mut g = Graph::new();
    let b = bind(&mut g, &gen.set, false);
    let z0n = g.constant(Tensor::from_slice(vec![arch.d0], z0));
    let seq = g0_forward(&mut g, arch, &b, z0n);
    let value = g.value(seq);
    let t_len = arch.depth;
    let mut out = vec![vec![0.0; arch.d1]; t_len];
    for c in 0..arch.d1 {
        for (t, slot) in out.iter_mut().enumerate() {
            slot[c] = value.data[c * t_len + t];
        }
    }
    Ok(out)
}

/// Renders a volume from a complete latent seed, conditioned on `mask`.
/// Slice `t` of the output depends on `(z0, z1[t], mask slice t)` only.
pub fn generate_volume(gen: &GeneratorParams, seed: &LatentSeed, mask: &Mask) -> Result<Volume, GanError> {
    let arch = &gen.arch;
    if mask.dims != arch.dims() {
        return Err(GanError::GridMismatch(format!(
            "mask grid {:?} vs model grid {:?}",
            mask.dims,
            arch.dims()
        )));
    }
    if seed.z1.len() != mask.dims.depth {
        return Err(GanError::DepthMismatch { seed: seed.z1.len(), mask: mask.dims.depth });
    }
    if seed.z0.len() != arch.d0 {
        return Err(GanError::Dimension(format!(
            "z0 has {} components, expected {}",
            seed.z0.len(),
            arch.d0
        )));
    }
    for (t, z) in seed.z1.iter().enumerate() {
        if z.len() != arch.d1 {
            return Err(GanError::Dimension(format!(
                "z1[{t}] has {} components, expected {}",
                z.len(),
                arch.d1
            )));
        }
    }

    let mask_t = mask_to_tensor(mask);
    let mut g = Graph::new();
    let b = bind(&mut g, &gen.set, false);
    let z0n = g.constant(Tensor::from_slice(vec![arch.d0], &seed.z0));
    let mut slices = Vec::with_capacity(arch.depth);
    for (t, z1) in seed.z1.iter().enumerate() {
        let z1t = g.constant(Tensor::from_slice(vec![arch.d1], z1));
        let ms = g.constant(mask_slice_tensor(&mask_t, t));
        slices.push(g1_forward(&mut g, arch, &b, z0n, z1t, ms));
    }
    let out = g.stack_slices(&slices);
    let value = g.value(out);
    let data = value.data.iter().map(|&v| v as f32).collect();
    Ok(Volume { dims: mask.dims, voxel_size_mm: mask.voxel_size_mm, data })
}

/// Convenience: temporal expansion plus rendering in one call.
pub fn synthesize(gen: &GeneratorParams, z0: &[f64], mask: &Mask) -> Result<(LatentSeed, Volume), GanError> {
    let z1 = temporal_generate(gen, z0)?;
    let seed = LatentSeed { z0: z0.to_vec(), z1 };
    let volume = generate_volume(gen, &seed, mask)?;
    Ok((seed, volume))
}

/// The omega-weighted two-channel tensor the critic consumes.
pub fn weighted_input(volume: &Volume, mask: &Mask, omega: f64) -> Tensor {
    let (t, h, w) = (volume.dims.depth, volume.dims.height, volume.dims.width);
    let mut data = Vec::with_capacity(2 * t * h * w);
    data.extend(volume.data.iter().map(|&v| (1.0 - omega) * f64::from(v)));
    data.extend(mask.data.iter().map(|&m| omega * f64::from(m)));
    Tensor::new(vec![2, t, h, w], data)
}

/// Critic score for one volume/mask pair.
pub fn discriminate(
    disc: &DiscriminatorParams,
    volume: &Volume,
    mask: &Mask,
    omega: f64,
) -> Result<f64, GanError> {
    let arch = &disc.arch;
    if volume.dims != arch.dims() || mask.dims != arch.dims() {
        return Err(GanError::GridMismatch(format!(
            "volume {:?} / mask {:?} vs model grid {:?}",
            volume.dims,
            mask.dims,
            arch.dims()
        )));
    }
    let mut g = Graph::new();
    let b = bind(&mut g, &disc.set, false);
    let vol = g.constant(volume_to_tensor(volume));
    let msk = g.constant(mask_to_tensor(mask));
    let score = disc_forward(&mut g, arch, &b, vol, msk, omega);
    Ok(g.value(score).item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gan::TrganConfig;
    use crate::volume::{GridDims, IntensityRange, PhantomConfig};

    fn tiny_config() -> TrganConfig {
        TrganConfig {
            d0: 8,
            d1: 8,
            g0_hidden: 8,
            g1_base_channels: 4,
            g1_mid_channels: 4,
            mask_channels: 2,
            disc_channels: vec![4, 8],
            ..Default::default()
        }
    }

    fn tiny_setup() -> (GeneratorParams, DiscriminatorParams, crate::volume::Sample) {
        let config = tiny_config();
        let arch = GanArch::new(GridDims::new(8, 8, 4), &config).unwrap();
        let mut rng = crate::seed::rng_from_seed(1);
        let gen = init_generator(&arch, &mut rng);
        let disc = init_discriminator(&arch, &mut rng);
        let phantom = PhantomConfig {
            dims: GridDims::new(8, 8, 4),
            tumour_semiaxes: IntensityRange::new(1.0, 1.4),
            seed: 2,
            ..Default::default()
        };
        let sample = crate::volume::generate_phantom(&phantom, 0).unwrap();
        (gen, disc, sample)
    }

    #[test]
    fn temporal_generate_shapes_and_determinism() {
        let (gen, _, _) = tiny_setup();
        let z0: Vec<f64> = (0..8).map(|i| (i as f64 * 0.3).sin()).collect();
        let z1 = temporal_generate(&gen, &z0).unwrap();
        assert_eq!(z1.len(), 4);
        assert!(z1.iter().all(|v| v.len() == 8));
        assert_eq!(z1, temporal_generate(&gen, &z0).unwrap());

        let other: Vec<f64> = (0..8).map(|i| (i as f64 * 0.3).cos()).collect();
        assert_ne!(z1, temporal_generate(&gen, &other).unwrap());

        assert!(temporal_generate(&gen, &z0[..4]).is_err());
    }

    #[test]
    fn sample_latent_statistics() {
        let config = TrganConfig { d0: 4, ..tiny_config() };
        let mut rng = crate::seed::rng_from_seed(11);
        let first = sample_latent(&config, &mut rng);
        assert_eq!(first.z0.len(), 4);
        assert!(first.z1.is_empty());
        let mut rng2 = crate::seed::rng_from_seed(11);
        assert_eq!(first, sample_latent(&config, &mut rng2));

        let n = 100_000;
        let mut sums = [0.0f64; 4];
        let mut sq = [0.0f64; 4];
        let mut rng = crate::seed::rng_from_seed(12);
        for _ in 0..n {
            let s = sample_latent(&config, &mut rng);
            for (i, v) in s.z0.iter().enumerate() {
                sums[i] += v;
                sq[i] += v * v;
            }
        }
        for i in 0..4 {
            let mean = sums[i] / n as f64;
            let var = sq[i] / n as f64 - mean * mean;
            assert!(mean.abs() < 0.05, "mean {mean}");
            assert!((0.9..1.1).contains(&var), "var {var}");
        }
    }

    #[test]
    fn generated_volume_matches_grid_and_bounds() {
        let (gen, _, sample) = tiny_setup();
        let z0: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7).sin()).collect();
        let (seed, vol) = synthesize(&gen, &z0, &sample.mask).unwrap();
        assert_eq!(vol.dims, sample.mask.dims);
        assert!(vol.data.iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(seed.z1.len(), 4);
        // pure function of (params, seed, mask)
        let again = generate_volume(&gen, &seed, &sample.mask).unwrap();
        assert_eq!(vol, again);
    }

    #[test]
    fn permuting_z1_permutes_slices_under_uniform_mask() {
        let (gen, _, sample) = tiny_setup();
        // depth-uniform mask: copy slice 0 of the phantom mask everywhere
        let dims = sample.mask.dims;
        let hw = dims.width * dims.height;
        let mut data = Vec::with_capacity(dims.voxel_count());
        for _ in 0..dims.depth {
            data.extend_from_slice(&sample.mask.data[..hw]);
        }
        let mask = Mask::new(dims, sample.mask.voxel_size_mm, data).unwrap();

        let z0: Vec<f64> = (0..8).map(|i| (i as f64 * 0.9).cos()).collect();
        let z1 = temporal_generate(&gen, &z0).unwrap();
        let seed = LatentSeed { z0: z0.clone(), z1: z1.clone() };
        let vol = generate_volume(&gen, &seed, &mask).unwrap();

        let perm = [2usize, 0, 3, 1];
        let permuted_z1: Vec<Vec<f64>> = perm.iter().map(|&p| z1[p].clone()).collect();
        let permuted = generate_volume(&gen, &LatentSeed { z0, z1: permuted_z1 }, &mask).unwrap();
        for (t, &p) in perm.iter().enumerate() {
            let got = &permuted.data[t * hw..(t + 1) * hw];
            let expected = &vol.data[p * hw..(p + 1) * hw];
            assert_eq!(got, expected, "slice {t} should equal original slice {p}");
        }
    }

    #[test]
    fn depth_mismatch_is_rejected() {
        let (gen, _, sample) = tiny_setup();
        let z0: Vec<f64> = vec![0.1; 8];
        let seed = LatentSeed { z0, z1: vec![vec![0.0; 8]; 3] };
        assert!(matches!(
            generate_volume(&gen, &seed, &sample.mask),
            Err(GanError::DepthMismatch { seed: 3, mask: 4 })
        ));
    }

    #[test]
    fn discriminator_output_bounded_and_weighting_exact() {
        let (gen, disc, sample) = tiny_setup();
        let z0: Vec<f64> = (0..8).map(|i| 0.2 * i as f64 - 0.8).collect();
        let (_, fake) = synthesize(&gen, &z0, &sample.mask).unwrap();
        for vol in [&sample.volume, &fake] {
            let score = discriminate(&disc, vol, &sample.mask, 0.01).unwrap();
            assert!((-1.0..=1.0).contains(&score), "score {score}");
        }

        // omega arithmetic: mask of ones scales to omega, image 1.0 to 1-omega
        let dims = sample.volume.dims;
        let ones_mask = Mask::new(dims, sample.volume.voxel_size_mm, vec![1; dims.voxel_count()]).unwrap();
        let unit_vol = Volume::new(dims, sample.volume.voxel_size_mm, vec![1.0; dims.voxel_count()]).unwrap();
        let weighted = weighted_input(&unit_vol, &ones_mask, 0.01);
        let n = dims.voxel_count();
        assert!(weighted.data[..n].iter().all(|&v| (v - 0.99).abs() < 1e-12));
        assert!(weighted.data[n..].iter().all(|&v| (v - 0.01).abs() < 1e-12));

        // omega = 0 zeroes the mask channel: scores ignore the mask
        let zeros_mask = Mask::new(dims, sample.volume.voxel_size_mm, vec![0; dims.voxel_count()]).unwrap();
        let a = discriminate(&disc, &sample.volume, &ones_mask, 0.0).unwrap();
        let b = discriminate(&disc, &sample.volume, &zeros_mask, 0.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let (gen, disc, sample) = tiny_setup();
        let phantom = PhantomConfig {
            dims: GridDims::new(8, 8, 8),
            tumour_semiaxes: IntensityRange::new(1.0, 1.4),
            seed: 2,
            ..Default::default()
        };
        let other = crate::volume::generate_phantom(&phantom, 0).unwrap();
        assert!(discriminate(&disc, &other.volume, &other.mask, 0.01).is_err());
        let z0 = vec![0.0; 8];
        assert!(synthesize(&gen, &z0, &other.mask).is_err());
    }
}
