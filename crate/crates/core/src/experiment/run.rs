//! Batch orchestration: phantoms, split, training, per-checkpoint
//! evaluation, attacks, figures, report.

use super::config::{ExperimentConfig, MaskSource};
use super::figures::emit_figures;
use super::report::{attack_result_text, curve_table, roc_table, runs_table, Report, Versions};
use super::ExperimentError;
use crate::attack::{discriminator_attack, generator_attack, AttackResult, AttackScenario};
use crate::gan::{train_trgan, Checkpoint, GeneratorParams};
use crate::metrics::{privacy_protection, utility_augmentation, utility_synthetic, PrivacyUtilityPoint};
use crate::radiomics::{fidelity_score, radiomic_features, RadiomicVector};
use crate::segmenter::{segment, train_segmenter, SegmenterParams};
use crate::volume::{generate_population, Mask, Sample, Volume};
use rand_distr::StandardNormal;
use std::collections::HashMap;
use std::path::{Path, PathBuf};

fn stage<E: std::fmt::Display>(name: &'static str) -> impl Fn(E) -> ExperimentError {
    move |e| ExperimentError::stage(name, e.to_string())
}

/// Everything [`evaluate_checkpoint`] needs besides the checkpoint itself.
pub struct EvalContext<'a> {
    pub config: &'a ExperimentConfig,
    pub repeat: u32,
    pub train: &'a [Sample],
    pub holdout: &'a [Sample],
    pub scenario: &'a AttackScenario,
    pub real_features: &'a [RadiomicVector],
    /// Digest the checkpoint must carry; evaluation refuses drifted configs.
    pub expected_digest: &'a str,
}

/// Synthesizes one volume per mask, deterministic in `seed`.
pub fn synthesize_population(
    gen: &GeneratorParams,
    masks: &[&Mask],
    seed: u64,
) -> Result<Vec<Volume>, ExperimentError> {
    use rand::Rng;
    let mut rng = crate::seed::rng_from_seed(seed);
    let latents: Vec<Vec<f64>> = masks
        .iter()
        .map(|_| (0..gen.arch.d0).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let items: Vec<(usize, &Vec<f64>)> = latents.iter().enumerate().collect();
    let volumes = crate::exec::map_slice(&items, |(i, z0)| {
        crate::gan::synthesize(gen, z0, masks[*i]).map(|(_, v)| v)
    });
    volumes
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .map_err(stage("synthesize"))
}

/// Extracts features from a synthetic population, with masks chosen by
/// `mask_source`; samples with empty predicted masks are dropped.
fn synthetic_features(
    volumes: &[Volume],
    conditioning: &[&Mask],
    seg: &SegmenterParams,
    threshold: f64,
    mask_source: MaskSource,
) -> Result<Vec<RadiomicVector>, ExperimentError> {
    let masks: Vec<Mask> = match mask_source {
        MaskSource::Conditioning => conditioning.iter().map(|&m| m.clone()).collect(),
        MaskSource::Predicted => {
            let preds = crate::exec::map_slice(volumes, |v| segment(seg, v, threshold));
            preds.into_iter().collect::<Result<Vec<_>, _>>().map_err(stage("fidelity"))?
        }
    };
    let pairs: Vec<(usize, &Mask)> = masks.iter().enumerate().filter(|(_, m)| !m.is_empty()).collect();
    let features = crate::exec::map_slice(&pairs, |(i, m)| radiomic_features(&volumes[*i], m));
    features
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .map_err(stage("fidelity"))
}

/// The per-checkpoint evaluation bundle: fidelity, utility, and the
/// discriminator attack whose AUC defines privacy.
pub fn evaluate_checkpoint(
    checkpoint: &Checkpoint,
    ctx: &EvalContext<'_>,
) -> Result<(PrivacyUtilityPoint, AttackResult), ExperimentError> {
    if checkpoint.config_digest != ctx.expected_digest {
        return Err(ExperimentError::stage(
            "evaluate",
            format!(
                "config digest mismatch: checkpoint {}, expected {}",
                checkpoint.config_digest, ctx.expected_digest
            ),
        ));
    }
    let step = checkpoint.step;
    let config = ctx.config;

    let masks: Vec<&Mask> = ctx.train.iter().map(|s| &s.mask).collect();
    let synth = synthesize_population(
        &checkpoint.generator,
        &masks,
        config.synth_seed(ctx.repeat, step),
    )?;

    let mut seg_config = config.segmenter.clone();
    seg_config.seed = config.segmenter_seed(ctx.repeat, step);
    let train_masks: Vec<Mask> = ctx.train.iter().map(|s| s.mask.clone()).collect();
    let seg = train_segmenter(&synth, &train_masks, &seg_config).map_err(stage("segmenter"))?;

    let utility = utility_synthetic(&seg, ctx.holdout, seg_config.threshold).map_err(stage("utility"))?;

    let syn_features = synthetic_features(
        &synth,
        &masks,
        &seg,
        seg_config.threshold,
        config.eval.synthetic_mask_source,
    )?;
    let fidelity = fidelity_score(ctx.real_features, &syn_features).map_err(stage("fidelity"))?;

    let mut attack = discriminator_attack(&checkpoint.discriminator, ctx.scenario, config.trgan.omega)
        .map_err(stage("attack"))?;
    attack.checkpoint_step = step;
    let privacy = privacy_protection(attack.auc).map_err(stage("attack"))?;

    Ok((PrivacyUtilityPoint { step, utility, privacy, auc: attack.auc, fidelity }, attack))
}

/// Builds the per-repeat dataset: phantoms, split, attack scenario, real
/// features.
pub struct RunData {
    pub train: Vec<Sample>,
    pub holdout: Vec<Sample>,
    pub scenario: AttackScenario,
    pub real_features: Vec<RadiomicVector>,
}

pub fn prepare_run_data(config: &ExperimentConfig, repeat: u32) -> Result<RunData, ExperimentError> {
    let phantom_config = config.effective_phantom(repeat);
    let population = generate_population(&phantom_config, config.data.n_cases).map_err(stage("phantoms"))?;

    let ids: Vec<String> = population.iter().map(|s| s.id.clone()).collect();
    let split = crate::volume::split_dataset(&ids, config.data.n_holdout, config.split_seed(repeat))
        .map_err(stage("split"))?;
    let by_id: HashMap<&str, &Sample> = population.iter().map(|s| (s.id.as_str(), s)).collect();
    let pick = |ids: &[String]| -> Vec<Sample> {
        ids.iter().map(|id| (*by_id.get(id.as_str()).expect("split id exists")).clone()).collect()
    };
    let train = pick(&split.train_ids);
    let holdout = pick(&split.holdout_ids);

    let scenario = AttackScenario::assemble(&train, &holdout, config.data.attack_n, config.data.attack_m)
        .map_err(stage("split"))?;

    let feature_results = crate::exec::map_slice(&population, |s| radiomic_features(&s.volume, &s.mask));
    let real_features = feature_results
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .map_err(stage("fidelity"))?;

    Ok(RunData { train, holdout, scenario, real_features })
}

/// Runs the full study described by `config` into `config.output_dir`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Report, ExperimentError> {
    run_experiment_with(config, &mut |_| {})
}

/// Like [`run_experiment`] with a progress sink.
pub fn run_experiment_with(
    config: &ExperimentConfig,
    progress: &mut dyn FnMut(&str),
) -> Result<Report, ExperimentError> {
    config.validate()?;
    let started = std::time::Instant::now();
    let out_dir = PathBuf::from(&config.output_dir);
    let mkdir = |p: &Path| {
        std::fs::create_dir_all(p)
            .map_err(|e| ExperimentError::stage("report", format!("{}: {e}", p.display())))
    };
    mkdir(&out_dir)?;
    mkdir(&out_dir.join("checkpoints"))?;
    mkdir(&out_dir.join("attacks"))?;

    let mut files: Vec<String> = Vec::new();
    let mut runs: Vec<Vec<PrivacyUtilityPoint>> = Vec::new();
    let mut anomalies: Vec<String> = Vec::new();
    let mut checkpoint_steps: Vec<u64> = Vec::new();
    let mut disc_result: Option<AttackResult> = None;
    let mut gen_result: Option<AttackResult> = None;
    let mut aug_utility: Option<f64> = None;

    for repeat in 0..config.eval.repeats {
        progress(&format!("repeat {repeat}: generating {} phantoms", config.data.n_cases));
        let data = prepare_run_data(config, repeat)?;

        let trgan_config = config.effective_trgan(repeat);
        let digest = trgan_config.digest();
        progress(&format!(
            "repeat {repeat}: training {} steps on {} cases",
            trgan_config.total_steps,
            data.train.len()
        ));
        let checkpoints = train_trgan(&data.train, &trgan_config).map_err(stage("train"))?;
        if repeat == 0 {
            checkpoint_steps = checkpoints.iter().map(|c| c.step).collect();
        }
        for c in &checkpoints {
            let rel = format!("checkpoints/run{repeat}_step{:06}.ckpt", c.step);
            c.save(&out_dir.join(&rel)).map_err(stage("train"))?;
            files.push(rel);
        }

        let ctx = EvalContext {
            config,
            repeat,
            train: &data.train,
            holdout: &data.holdout,
            scenario: &data.scenario,
            real_features: &data.real_features,
            expected_digest: &digest,
        };

        let mut points = Vec::with_capacity(checkpoints.len());
        let mut per_step_attacks = Vec::with_capacity(checkpoints.len());
        for c in &checkpoints {
            progress(&format!("repeat {repeat}: evaluating checkpoint step {}", c.step));
            let (point, attack) = evaluate_checkpoint(c, &ctx)?;
            if point.privacy > 1.0 {
                anomalies.push(format!(
                    "run {repeat} step {}: attack AUC {} below 0.5, privacy {} above 1",
                    point.step, point.auc, point.privacy
                ));
            }
            let rel = format!("attacks/discriminator_run{repeat}_step{:06}.tsv", c.step);
            std::fs::write(out_dir.join(&rel), attack_result_text(&attack))
                .map_err(|e| ExperimentError::stage("report", e.to_string()))?;
            files.push(rel);
            points.push(point);
            per_step_attacks.push(attack);
        }

        if repeat == 0 {
            let designated = if config.eval.generator_attack_step == 0 {
                *checkpoint_steps.last().expect("at least one checkpoint")
            } else {
                config.eval.generator_attack_step
            };
            let position = checkpoints
                .iter()
                .position(|c| c.step == designated)
                .ok_or_else(|| {
                    ExperimentError::stage("evaluate", format!("no checkpoint at step {designated}"))
                })?;
            disc_result = Some(per_step_attacks[position].clone());

            progress(&format!(
                "repeat {repeat}: generator attack at step {designated} ({} iterations)",
                config.attack.iterations
            ));
            let mut attack_config = config.attack.clone();
            attack_config.seed = config.attack_seed(repeat);
            let mut result = generator_attack(&checkpoints[position].generator, &data.scenario, &attack_config)
                .map_err(stage("attack"))?;
            result.checkpoint_step = designated;
            gen_result = Some(result);

            if config.eval.utility_augmentation {
                progress(&format!("repeat {repeat}: augmentation utility"));
                aug_utility = Some(run_augmentation(
                    config,
                    repeat,
                    &checkpoints[position].generator,
                    &data.train,
                    &data.holdout,
                )?);
            }
        }
        runs.push(points);
    }

    let curve = Report::aggregate_runs(&runs);

    // metric tables
    let mut write_table = |rel: &str, text: String| -> Result<(), ExperimentError> {
        std::fs::write(out_dir.join(rel), text)
            .map_err(|e| ExperimentError::stage("report", format!("{rel}: {e}")))?;
        files.push(rel.to_string());
        Ok(())
    };
    write_table("curve.tsv", curve_table(&curve))?;
    write_table("curve_runs.tsv", runs_table(&runs))?;
    let disc = disc_result.expect("discriminator attack always runs");
    let gen = gen_result.expect("generator attack always runs");
    write_table("attack_discriminator.tsv", attack_result_text(&disc))?;
    write_table("attack_generator.tsv", attack_result_text(&gen))?;
    write_table("roc_discriminator.tsv", roc_table(&disc))?;
    write_table("roc_generator.tsv", roc_table(&gen))?;

    let mut report = Report {
        config: config.clone(),
        versions: Versions::default(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        checkpoint_steps,
        runs,
        curve,
        discriminator_attack: Some(disc),
        generator_attack: Some(gen),
        utility_augmentation: aug_utility,
        anomalies,
        files,
    };

    progress("emitting figures");
    let figure_files = emit_figures(&report, &out_dir.join("figures"))?;
    report.files.extend(figure_files.into_iter().map(|f| format!("figures/{f}")));

    report.save(&out_dir.join("report.json"))?;
    progress(&format!("report written to {}", out_dir.join("report.json").display()));
    Ok(report)
}

/// Augmentation study: baseline segmenter on a small real subset versus the
/// same subset plus synthetic volumes generated from the remaining masks.
fn run_augmentation(
    config: &ExperimentConfig,
    repeat: u32,
    gen: &GeneratorParams,
    train: &[Sample],
    holdout: &[Sample],
) -> Result<f64, ExperimentError> {
    let keep = config.eval.augmentation_real_count;
    let cut = train.len() - keep;
    let (synth_source, real_kept) = train.split_at(cut);

    let run_seed = config.repeat_seed(repeat);
    let mut seg_config = config.segmenter.clone();

    let real_images: Vec<Volume> = real_kept.iter().map(|s| s.volume.clone()).collect();
    let real_masks: Vec<Mask> = real_kept.iter().map(|s| s.mask.clone()).collect();
    seg_config.seed = crate::seed::derive_seed(run_seed, "segmenter-baseline");
    let baseline = train_segmenter(&real_images, &real_masks, &seg_config).map_err(stage("augmentation"))?;

    let source_masks: Vec<&Mask> = synth_source.iter().map(|s| &s.mask).collect();
    let synth = synthesize_population(gen, &source_masks, crate::seed::derive_seed(run_seed, "synthesize-aug"))?;
    let mut aug_images = real_images;
    let mut aug_masks = real_masks;
    aug_images.extend(synth);
    aug_masks.extend(synth_source.iter().map(|s| s.mask.clone()));
    seg_config.seed = crate::seed::derive_seed(run_seed, "segmenter-augmented");
    let augmented = train_segmenter(&aug_images, &aug_masks, &seg_config).map_err(stage("augmentation"))?;

    utility_augmentation(&augmented, &baseline, holdout, seg_config.threshold).map_err(stage("augmentation"))
}
