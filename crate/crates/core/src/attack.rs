//! The two membership inference attacks.
//!
//! Discriminator attack: score every sample with the critic and rank. An
//! overfit critic scores training samples higher.
//!
//! Generator attack: train an inverter network A (two dense layers, ReLU
//! hidden) that maps a flattened sample to a latent `z0`; the victim's own
//! temporal stack expands it, the slice generator renders it conditioned on
//! the sample's mask, and the L2 reconstruction error is the loss. The
//! minimum per-sample loss over all iterations ranks samples: members
//! reconstruct better when the generator has memorized them. Scores are the
//! negated minima so that "higher score = more likely member" holds for
//! both attacks.

use crate::gan::{GanError, GeneratorParams};
use crate::metrics::{auc, roc_curve, welch_t_test, MetricsError, RocCurve};
use crate::nn::init::{he_normal, xavier_normal, ParamKind, ParamSet};
use crate::nn::optim::Adam;
use crate::nn::{Graph, NodeId, Tensor};
use crate::volume::Sample;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("scenario: {0}")]
    ScenarioInvalid(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("non-finite attack loss at iteration {iteration}")]
    NonFiniteLoss { iteration: u64 },
    #[error("top-m count {m} out of range for {n} samples")]
    MOutOfRange { m: usize, n: usize },
    #[error(transparent)]
    Gan(#[from] GanError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Samples with membership ground truth; `n` total, `m` members.
#[derive(Debug, Clone)]
pub struct AttackScenario {
    samples: Vec<Sample>,
}

impl AttackScenario {
    pub fn new(samples: Vec<Sample>) -> Result<Self, AttackError> {
        if samples.is_empty() {
            return Err(AttackError::ScenarioInvalid("no samples".into()));
        }
        let dims = samples[0].volume.dims;
        let mut members = 0usize;
        for s in &samples {
            match s.member {
                Some(true) => members += 1,
                Some(false) => {}
                None => {
                    return Err(AttackError::ScenarioInvalid(format!(
                        "sample {} lacks membership truth",
                        s.id
                    )))
                }
            }
            if s.volume.dims != dims {
                return Err(AttackError::ScenarioInvalid(format!("sample {} off-grid", s.id)));
            }
        }
        if members == 0 || members == samples.len() {
            return Err(AttackError::ScenarioInvalid(format!(
                "need 0 < m < n, got m={members} n={}",
                samples.len()
            )));
        }
        Ok(Self { samples })
    }

    /// First `m` of `train` as members plus the first `n - m` of `holdout`
    /// as non-members.
    pub fn assemble(train: &[Sample], holdout: &[Sample], n: usize, m: usize) -> Result<Self, AttackError> {
        if m == 0 || m >= n {
            return Err(AttackError::ScenarioInvalid(format!("need 0 < m < n, got m={m} n={n}")));
        }
        if m > train.len() || n - m > holdout.len() {
            return Err(AttackError::ScenarioInvalid(format!(
                "m={m} members from {} train, {} non-members from {} holdout",
                train.len(),
                n - m,
                holdout.len()
            )));
        }
        let mut samples = Vec::with_capacity(n);
        for s in &train[..m] {
            let mut s = s.clone();
            s.member = Some(true);
            samples.push(s);
        }
        for s in &holdout[..n - m] {
            let mut s = s.clone();
            s.member = Some(false);
            samples.push(s);
        }
        Self::new(samples)
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn n(&self) -> usize {
        self.samples.len()
    }

    pub fn m(&self) -> usize {
        self.samples.iter().filter(|s| s.member == Some(true)).count()
    }
}

/// Inverter network configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackNetConfig {
    pub hidden: usize,
    pub iterations: u64,
    pub step_size: f64,
    /// Train one independent network per sample instead of a single shared
    /// network over all samples.
    pub per_sample: bool,
    pub seed: u64,
}

impl Default for AttackNetConfig {
    fn default() -> Self {
        Self { hidden: 64, iterations: 10_000, step_size: 1e-4, per_sample: false, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Discriminator,
    Generator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub id: String,
    pub score: f64,
    pub member: bool,
}

/// Per-sample scores plus every metric derived from them. The derived
/// fields are always recomputable from `(score, member)` alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub kind: AttackKind,
    pub checkpoint_step: u64,
    pub n: usize,
    pub m: usize,
    pub samples: Vec<ScoredSample>,
    pub roc: RocCurve,
    pub auc: f64,
    /// `None` when a score group is degenerate (e.g. a constant critic).
    pub t_statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub top_m_accuracy: f64,
}

impl AttackResult {
    pub fn from_scores(
        kind: AttackKind,
        samples: Vec<ScoredSample>,
        checkpoint_step: u64,
    ) -> Result<Self, AttackError> {
        let n = samples.len();
        let m = samples.iter().filter(|s| s.member).count();
        let scores: Vec<f64> = samples.iter().map(|s| s.score).collect();
        let labels: Vec<bool> = samples.iter().map(|s| s.member).collect();
        let roc = roc_curve(&scores, &labels)?;
        let auc_value = auc(&scores, &labels)?;
        let member_scores: Vec<f64> = samples.iter().filter(|s| s.member).map(|s| s.score).collect();
        let other_scores: Vec<f64> = samples.iter().filter(|s| !s.member).map(|s| s.score).collect();
        let (t_statistic, p_value) = match welch_t_test(&member_scores, &other_scores) {
            Ok((t, p)) => (Some(t), Some(p)),
            Err(MetricsError::GroupTooSmall(_)) | Err(MetricsError::ZeroVariance) => (None, None),
            Err(e) => return Err(e.into()),
        };
        let (_, top_m_accuracy) = top_m_classify(&samples, m)?;
        Ok(Self { kind, checkpoint_step, n, m, samples, roc, auc: auc_value, t_statistic, p_value, top_m_accuracy })
    }
}

/// Labels the `m` highest scores as members, ties broken by id order.
/// Accuracy is the fraction of those `m` member labels that are correct,
/// so a random ranking scores m/n in expectation, the same as the dummy
/// classifier that calls everything a member.
pub fn top_m_classify(samples: &[ScoredSample], m: usize) -> Result<(Vec<bool>, f64), AttackError> {
    let n = samples.len();
    if m == 0 || m > n {
        return Err(AttackError::MOutOfRange { m, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        samples[b]
            .score
            .partial_cmp(&samples[a].score)
            .unwrap()
            .then_with(|| samples[a].id.cmp(&samples[b].id))
    });
    let mut labels = vec![false; n];
    for &idx in &order[..m] {
        labels[idx] = true;
    }
    let hits = order[..m].iter().filter(|&&idx| samples[idx].member).count();
    Ok((labels, hits as f64 / m as f64))
}

/// Ranks every scenario sample by the critic's score.
pub fn discriminator_attack(
    disc: &crate::gan::DiscriminatorParams,
    scenario: &AttackScenario,
    omega: f64,
) -> Result<AttackResult, AttackError> {
    let scores = crate::exec::map_slice(scenario.samples(), |s| {
        crate::gan::discriminate(disc, &s.volume, &s.mask, omega)
    });
    let mut scored = Vec::with_capacity(scenario.n());
    for (s, score) in scenario.samples().iter().zip(scores) {
        scored.push(ScoredSample { id: s.id.clone(), score: score?, member: s.member.unwrap() });
    }
    AttackResult::from_scores(AttackKind::Discriminator, scored, 0)
}

/// The inverter network: flattened volume -> hidden ReLU -> z0.
#[derive(Debug, Clone)]
pub struct AttackNetParams {
    pub input_dim: usize,
    pub hidden: usize,
    pub d0: usize,
    pub set: ParamSet,
}

pub fn init_attack_net(
    input_dim: usize,
    hidden: usize,
    d0: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> AttackNetParams {
    let mut set = ParamSet::new();
    set.push("a.fc0.weight", he_normal(vec![hidden, input_dim], input_dim, rng), ParamKind::Weight { out_axis: 0 });
    set.push("a.fc0.bias", Tensor::zeros(vec![hidden]), ParamKind::Bias);
    set.push("a.fc1.weight", xavier_normal(vec![d0, hidden], hidden, d0, rng), ParamKind::Weight { out_axis: 0 });
    set.push("a.fc1.bias", Tensor::zeros(vec![d0]), ParamKind::Bias);
    AttackNetParams { input_dim, hidden, d0, set }
}

fn flat_volume_tensor(s: &Sample) -> Tensor {
    let data: Vec<f64> = s.volume.data.iter().map(|&v| f64::from(v)).collect();
    Tensor::new(vec![data.len()], data)
}

/// L2 reconstruction loss of one sample through the attack net + generator.
pub fn reconstruction_loss(
    attack: &AttackNetParams,
    gen: &GeneratorParams,
    sample: &Sample,
) -> Result<f64, AttackError> {
    let (loss, _) = reconstruction_eval(attack, gen, sample, false)?;
    Ok(loss)
}

/// Loss plus gradients with respect to the attack-net parameters.
pub fn reconstruction_grads(
    attack: &AttackNetParams,
    gen: &GeneratorParams,
    sample: &Sample,
) -> Result<(f64, Vec<Tensor>), AttackError> {
    let (loss, grads) = reconstruction_eval(attack, gen, sample, true)?;
    Ok((loss, grads.expect("gradients requested")))
}

fn reconstruction_eval(
    attack: &AttackNetParams,
    gen: &GeneratorParams,
    sample: &Sample,
    with_grads: bool,
) -> Result<(f64, Option<Vec<Tensor>>), AttackError> {
    if sample.volume.dims != gen.arch.dims() {
        return Err(AttackError::GridMismatch(format!(
            "sample {} grid {:?} vs generator grid {:?}",
            sample.id,
            sample.volume.dims,
            gen.arch.dims()
        )));
    }
    let mut g = Graph::new();
    let ids: Vec<NodeId> = attack
        .set
        .entries
        .iter()
        .map(|e| if with_grads { g.param(e.tensor.clone()) } else { g.constant(e.tensor.clone()) })
        .collect();
    let flat = flat_volume_tensor(sample);
    let x = g.constant(flat);
    let h = g.linear(ids[0], x, ids[1]);
    let h = g.relu(h);
    let z0 = g.linear(ids[2], h, ids[3]);

    let mask_t = crate::gan::mask_to_tensor(&sample.mask);
    let bound = crate::gan::bind(&mut g, &gen.set, false);
    let vol = crate::gan::generator_forward(&mut g, &gen.arch, &bound, z0, &mask_t);
    let target = g.constant(crate::gan::volume_to_tensor(&sample.volume));
    let diff = g.sub(vol, target);
    let sq = g.mul(diff, diff);
    let total = g.sum(sq);
    let loss = g.sqrt(total);
    let value = g.value(loss).item();
    if !with_grads {
        return Ok((value, None));
    }
    let grads = g.backward(loss);
    let out = ids
        .iter()
        .zip(&attack.set.entries)
        .map(|(id, e)| grads[id.0].clone().unwrap_or_else(|| Tensor::zeros(e.tensor.shape.clone())))
        .collect();
    Ok((value, Some(out)))
}

/// Per-sample minimum reconstruction losses over all iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackLossTable {
    /// `(sample id, L_min)` in scenario order.
    pub min_loss: Vec<(String, f64)>,
}

/// Trains the inverter and records per-sample losses every iteration,
/// returning each sample's minimum.
pub fn train_attack_network(
    gen: &GeneratorParams,
    scenario: &AttackScenario,
    config: &AttackNetConfig,
) -> Result<AttackLossTable, AttackError> {
    if config.iterations == 0 {
        return Err(AttackError::ScenarioInvalid("iterations must be >= 1".into()));
    }
    if config.per_sample {
        return train_attack_per_sample(gen, scenario, config);
    }
    let input_dim = gen.arch.dims().voxel_count();
    let mut rng = crate::seed::rng_from_seed(config.seed);
    let mut attack = init_attack_net(input_dim, config.hidden, gen.arch.d0, &mut rng);
    let mut opt = Adam::new(config.step_size, &attack.set);

    let n = scenario.n();
    let mut min_loss = vec![f64::INFINITY; n];
    for iteration in 1..=config.iterations {
        let results = crate::exec::map_slice(scenario.samples(), |s| reconstruction_grads(&attack, gen, s));
        let mut mean_loss = 0.0;
        let mut acc: Option<Vec<Tensor>> = None;
        for (i, r) in results.into_iter().enumerate() {
            let (loss, grads) = r?;
            min_loss[i] = min_loss[i].min(loss);
            mean_loss += loss;
            match &mut acc {
                None => acc = Some(grads),
                Some(acc) => {
                    for (a, g) in acc.iter_mut().zip(grads) {
                        for (av, gv) in a.data.iter_mut().zip(g.data) {
                            *av += gv;
                        }
                    }
                }
            }
        }
        mean_loss /= n as f64;
        if !mean_loss.is_finite() {
            return Err(AttackError::NonFiniteLoss { iteration });
        }
        let mut grads = acc.expect("nonempty scenario");
        for g in &mut grads {
            for v in &mut g.data {
                *v /= n as f64;
            }
        }
        opt.step(&mut attack.set, &grads);
    }
    Ok(AttackLossTable {
        min_loss: scenario
            .samples()
            .iter()
            .zip(min_loss)
            .map(|(s, l)| (s.id.clone(), l))
            .collect(),
    })
}

fn train_attack_per_sample(
    gen: &GeneratorParams,
    scenario: &AttackScenario,
    config: &AttackNetConfig,
) -> Result<AttackLossTable, AttackError> {
    let input_dim = gen.arch.dims().voxel_count();
    let results = crate::exec::map_slice(scenario.samples(), |s| -> Result<f64, AttackError> {
        let seed = crate::seed::derive_seed(config.seed, &format!("attack/{}", s.id));
        let mut rng = crate::seed::rng_from_seed(seed);
        let mut attack = init_attack_net(input_dim, config.hidden, gen.arch.d0, &mut rng);
        let mut opt = Adam::new(config.step_size, &attack.set);
        let mut best = f64::INFINITY;
        for iteration in 1..=config.iterations {
            let (loss, grads) = reconstruction_grads(&attack, gen, s)?;
            if !loss.is_finite() {
                return Err(AttackError::NonFiniteLoss { iteration });
            }
            best = best.min(loss);
            opt.step(&mut attack.set, &grads);
        }
        Ok(best)
    });
    let mut min_loss = Vec::with_capacity(scenario.n());
    for (s, r) in scenario.samples().iter().zip(results) {
        min_loss.push((s.id.clone(), r?));
    }
    Ok(AttackLossTable { min_loss })
}

/// Full generator attack: train the inverter, then rank by negated minimum
/// reconstruction loss.
pub fn generator_attack(
    gen: &GeneratorParams,
    scenario: &AttackScenario,
    config: &AttackNetConfig,
) -> Result<AttackResult, AttackError> {
    let table = train_attack_network(gen, scenario, config)?;
    let scored: Vec<ScoredSample> = scenario
        .samples()
        .iter()
        .zip(&table.min_loss)
        .map(|(s, (_, l))| ScoredSample { id: s.id.clone(), score: -l, member: s.member.unwrap() })
        .collect();
    AttackResult::from_scores(AttackKind::Generator, scored, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gan::{init_discriminator, init_generator, GanArch, TrganConfig};
    use crate::volume::{generate_population, GridDims, IntensityRange, PhantomConfig};

    fn tiny_gan_config() -> TrganConfig {
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

    fn tiny_scenario(n: usize, m: usize, seed: u64) -> AttackScenario {
        let config = PhantomConfig {
            dims: GridDims::new(8, 8, 4),
            tumour_semiaxes: IntensityRange::new(1.0, 1.4),
            seed,
            ..Default::default()
        };
        let samples = generate_population(&config, n).unwrap();
        AttackScenario::assemble(&samples[..m], &samples[m..], n, m).unwrap()
    }

    fn tiny_generator(seed: u64) -> GeneratorParams {
        let arch = GanArch::new(GridDims::new(8, 8, 4), &tiny_gan_config()).unwrap();
        let mut rng = crate::seed::rng_from_seed(seed);
        init_generator(&arch, &mut rng)
    }

    /// Generator double that ignores the latent: final kernel zeroed, final
    /// bias c, so every voxel is tanh(c).
    fn constant_generator(c: f64, seed: u64) -> (GeneratorParams, f64) {
        let mut gen = tiny_generator(seed);
        for v in &mut gen.set.get_mut("g1.up1.weight").data {
            *v = 0.0;
        }
        gen.set.get_mut("g1.up1.bias").data[0] = c;
        (gen, c.tanh())
    }

    #[test]
    fn scenario_validation() {
        let config = PhantomConfig {
            dims: GridDims::new(8, 8, 4),
            tumour_semiaxes: IntensityRange::new(1.0, 1.4),
            seed: 1,
            ..Default::default()
        };
        let samples = generate_population(&config, 4).unwrap();
        // missing membership
        assert!(AttackScenario::new(samples.clone()).is_err());
        // all members
        let mut all = samples.clone();
        for s in &mut all {
            s.member = Some(true);
        }
        assert!(AttackScenario::new(all).is_err());
        let scenario = AttackScenario::assemble(&samples[..2], &samples[2..], 4, 2).unwrap();
        assert_eq!((scenario.n(), scenario.m()), (4, 2));
    }

    #[test]
    fn top_m_trivial_cases() {
        let scored = |scores: &[f64], members: &[bool]| -> Vec<ScoredSample> {
            scores
                .iter()
                .zip(members)
                .enumerate()
                .map(|(i, (s, m))| ScoredSample { id: format!("s{i}"), score: *s, member: *m })
                .collect()
        };
        // perfect separation
        let s = scored(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]);
        assert_eq!(top_m_classify(&s, 2).unwrap().1, 1.0);
        // anti-correlated: non-members outrank members
        let s = scored(&[0.1, 0.2, 0.9, 0.8], &[true, true, false, false]);
        assert_eq!(top_m_classify(&s, 2).unwrap().1, 0.0);
        // all-equal scores, ties broken by id: top-2 = {s0, s1}, members {s0, s2}
        let s = scored(&[0.5, 0.5, 0.5, 0.5], &[true, false, true, false]);
        let (labels, acc) = top_m_classify(&s, 2).unwrap();
        assert_eq!(labels, vec![true, true, false, false]);
        assert_eq!(acc, 0.5); // equals the m/n dummy baseline
        assert!(matches!(top_m_classify(&s, 5), Err(AttackError::MOutOfRange { m: 5, n: 4 })));
    }

    #[test]
    fn top_m_random_expectation_matches_hypergeometric_oracle() {
        // E[|top-m ∩ members|] / m under uniform ranking equals m/n;
        // brute-force the expectation from the hypergeometric pmf
        let (n, m) = (200usize, 150usize);
        let ln_choose = |n: usize, k: usize| -> f64 {
            crate::metrics::ln_gamma(n as f64 + 1.0)
                - crate::metrics::ln_gamma(k as f64 + 1.0)
                - crate::metrics::ln_gamma((n - k) as f64 + 1.0)
        };
        let mut expectation = 0.0;
        for k in 0..=m {
            if m - k > n - m {
                continue;
            }
            let ln_p = ln_choose(m, k) + ln_choose(n - m, m - k) - ln_choose(n, m);
            expectation += k as f64 * ln_p.exp();
        }
        let exact = expectation / m as f64;
        assert!((exact - m as f64 / n as f64).abs() < 1e-10, "oracle expectation {exact}");

        // empirical check over random rankings
        use rand::Rng;
        let mut rng = crate::seed::rng_from_seed(77);
        let mut total = 0.0;
        let trials = 400;
        for _ in 0..trials {
            let samples: Vec<ScoredSample> = (0..n)
                .map(|i| ScoredSample {
                    id: format!("s{i:03}"),
                    score: rng.gen::<f64>(),
                    member: i < m,
                })
                .collect();
            total += top_m_classify(&samples, m).unwrap().1;
        }
        let mean = total / trials as f64;
        assert!((mean - 0.75).abs() < 0.02, "empirical mean {mean}");
    }

    #[test]
    fn constant_critic_gives_exactly_half_auc() {
        let scored: Vec<ScoredSample> = (0..10)
            .map(|i| ScoredSample { id: format!("s{i}"), score: 0.25, member: i % 2 == 0 })
            .collect();
        let result = AttackResult::from_scores(AttackKind::Discriminator, scored, 0).unwrap();
        assert_eq!(result.auc, 0.5);
        assert_eq!(result.t_statistic, None);
        assert_eq!(result.p_value, None);
    }

    #[test]
    fn flipping_membership_mirrors_auc() {
        let mut rng = crate::seed::rng_from_seed(5);
        use rand::Rng;
        let scored: Vec<ScoredSample> = (0..20)
            .map(|i| ScoredSample {
                id: format!("s{i:02}"),
                score: rng.gen_range(-1.0..1.0),
                member: i < 8,
            })
            .collect();
        let flipped: Vec<ScoredSample> = scored
            .iter()
            .map(|s| ScoredSample { id: s.id.clone(), score: s.score, member: !s.member })
            .collect();
        let a = AttackResult::from_scores(AttackKind::Discriminator, scored, 0).unwrap();
        let b = AttackResult::from_scores(AttackKind::Discriminator, flipped, 0).unwrap();
        assert!((a.auc + b.auc - 1.0).abs() < 1e-12);
    }

    #[test]
    fn derived_fields_recomputable_from_scores_alone() {
        let disc = {
            let arch = GanArch::new(GridDims::new(8, 8, 4), &tiny_gan_config()).unwrap();
            let mut rng = crate::seed::rng_from_seed(13);
            init_discriminator(&arch, &mut rng)
        };
        let scenario = tiny_scenario(6, 3, 21);
        let result = discriminator_attack(&disc, &scenario, 0.01).unwrap();
        let recomputed =
            AttackResult::from_scores(result.kind, result.samples.clone(), result.checkpoint_step).unwrap();
        assert_eq!(result, recomputed);
    }

    #[test]
    fn single_iteration_min_is_the_recorded_loss() {
        let gen = tiny_generator(31);
        let scenario = tiny_scenario(4, 2, 41);
        let config = AttackNetConfig { iterations: 1, seed: 3, ..Default::default() };
        let table = train_attack_network(&gen, &scenario, &config).unwrap();

        // the single recorded loss is the loss at the freshly initialized net
        let input_dim = gen.arch.dims().voxel_count();
        let mut rng = crate::seed::rng_from_seed(config.seed);
        let attack = init_attack_net(input_dim, config.hidden, gen.arch.d0, &mut rng);
        for (s, (id, l_min)) in scenario.samples().iter().zip(&table.min_loss) {
            assert_eq!(&s.id, id);
            let direct = reconstruction_loss(&attack, &gen, s).unwrap();
            assert!((l_min - direct).abs() < 1e-12, "{id}: {l_min} vs {direct}");
        }
    }

    #[test]
    fn min_loss_is_monotone_in_iteration_budget() {
        let gen = tiny_generator(37);
        let scenario = tiny_scenario(4, 2, 43);
        let short = AttackNetConfig { iterations: 5, seed: 7, ..Default::default() };
        let long = AttackNetConfig { iterations: 15, seed: 7, ..Default::default() };
        let a = train_attack_network(&gen, &scenario, &short).unwrap();
        let b = train_attack_network(&gen, &scenario, &long).unwrap();
        for ((_, la), (_, lb)) in a.min_loss.iter().zip(&b.min_loss) {
            assert!(lb <= la, "budget 15 min {lb} > budget 5 min {la}");
        }
    }

    #[test]
    fn constant_generator_losses_are_closed_form() {
        let (gen, level) = constant_generator(0.3, 51);
        let scenario = tiny_scenario(6, 3, 53);
        let config = AttackNetConfig { iterations: 3, seed: 9, ..Default::default() };
        let table = train_attack_network(&gen, &scenario, &config).unwrap();
        for (s, (_, l_min)) in scenario.samples().iter().zip(&table.min_loss) {
            let expected: f64 = s
                .volume
                .data
                .iter()
                .map(|&v| (level - f64::from(v)).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(
                (l_min - expected).abs() < 1e-9,
                "{}: L_min {l_min} vs ||v - x|| {expected}",
                s.id
            );
        }
    }

    #[test]
    fn per_sample_mode_produces_comparable_table() {
        let gen = tiny_generator(61);
        let scenario = tiny_scenario(4, 2, 63);
        let config = AttackNetConfig { iterations: 3, seed: 11, per_sample: true, ..Default::default() };
        let table = train_attack_network(&gen, &scenario, &config).unwrap();
        assert_eq!(table.min_loss.len(), 4);
        assert!(table.min_loss.iter().all(|(_, l)| l.is_finite() && *l > 0.0));
        // deterministic
        let again = train_attack_network(&gen, &scenario, &config).unwrap();
        assert_eq!(table, again);
    }

    #[test]
    fn untrained_generator_attack_runs_and_orients_scores() {
        let gen = tiny_generator(71);
        let scenario = tiny_scenario(8, 4, 73);
        let config = AttackNetConfig { iterations: 10, seed: 13, ..Default::default() };
        let result = generator_attack(&gen, &scenario, &config).unwrap();
        assert_eq!(result.kind, AttackKind::Generator);
        assert_eq!((result.n, result.m), (8, 4));
        // scores are negated losses
        assert!(result.samples.iter().all(|s| s.score < 0.0));
        assert!((0.0..=1.0).contains(&result.auc));
    }
}
