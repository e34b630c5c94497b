//! AR pretraining, diffusion fine-tuning with the 1/t-weighted objective,
//! and the initialization/label-shift ablation grid.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mask::apply_random_mask;
use crate::net::{
    gradients, LossSpec, ModelConfig, ModelGrads, ModelParams, PredConvention,
};
use crate::rng::RngStream;
use crate::synth::{sample_training_layout, ProcessSpec, TrainExample};
use crate::vocab::Vocab;

/// Masking rates below this are redrawn: the 1/t weight is singular at
/// t -> 0 and unbounded weights destroy gradient variance.
pub const T_FLOOR_RESAMPLE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub grad_clip_norm: f64,
    pub seed: u64,
    pub eval_every: usize,
    pub eval_set_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            batch_size: 16,
            // desk-scale default; tiny models want much larger steps than
            // the 1e-5 a 0.5B model trains with
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip_norm: 5.0,
            seed: 0,
            eval_every: 100,
            eval_set_size: 128,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || self.grad_clip_norm <= 0.0 {
            return Err(invalid("learning_rate and grad_clip_norm must be positive"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be >= 1"));
        }
        Ok(())
    }
}

/// Scales gradients so the global L2 norm never exceeds `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut ModelGrads, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

/// Adam with bias correction; slot order follows the canonical tensor order.
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(params: &ModelParams) -> Adam {
        let shapes: Vec<usize> = params.tensors().iter().map(|(_, t, _)| t.len()).collect();
        Adam {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelGrads, cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        for ((slot, g), (m, v)) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..slot.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                slot[i] -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.adam_eps);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub train_loss: f64,
    pub eval_loss: f64,
}

/// Finished training run: final parameters, eval curve, and the largest
/// post-clip gradient norm seen (must stay at or below the clip value).
pub struct TrainRun {
    pub params: ModelParams,
    pub curve: Vec<CurvePoint>,
    pub final_eval: f64,
    pub max_postclip_norm: f64,
    pub steps_done: usize,
}

impl TrainRun {
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("step,train_loss,eval_loss\n");
        for p in &self.curve {
            out.push_str(&format!("{},{:.9},{:.9}\n", p.step, p.train_loss, p.eval_loss));
        }
        out
    }
}

/// Frozen held-out items for comparable diffusion evals: fixed layouts,
/// fixed per-sequence t, fixed mask patterns.
pub struct DiffusionEvalSet {
    items: Vec<(TrainExample, Vec<u32>, crate::mask::MaskState, f64)>,
}

impl DiffusionEvalSet {
    pub fn build(
        spec: &ProcessSpec,
        vocab: &Vocab,
        prompt_len: usize,
        n: usize,
        seed: u64,
    ) -> Result<DiffusionEvalSet> {
        let mut rng = RngStream::new(seed).split("diffusion-eval");
        let mut items = Vec::with_capacity(n);
        for _ in 0..n {
            let ex = sample_training_layout(spec, vocab, prompt_len, &mut rng)?;
            let t = draw_mask_rate(&mut rng);
            let (masked_tokens, mask) = apply_random_mask(&ex.layout, t, &mut rng)?;
            items.push((ex, masked_tokens, mask, t));
        }
        Ok(DiffusionEvalSet { items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn eval(&self, params: &ModelParams, conv: PredConvention) -> Result<f64> {
        let specs: Vec<LossSpec> = self
            .items
            .iter()
            .map(|(ex, masked, mask, t)| LossSpec::Diffusion {
                layout: &ex.layout,
                masked_tokens: masked,
                mask,
                t: *t,
                conv,
            })
            .collect();
        let (loss, _) = gradients(params, &specs)?;
        Ok(loss)
    }
}

fn ar_eval_loss(
    params: &ModelParams,
    spec: &ProcessSpec,
    vocab: &Vocab,
    prompt_len: usize,
    n: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = RngStream::new(seed).split("ar-eval");
    let mut examples = Vec::with_capacity(n);
    for _ in 0..n {
        examples.push(sample_training_layout(spec, vocab, prompt_len, &mut rng)?);
    }
    let specs: Vec<LossSpec> =
        examples.iter().map(|ex| LossSpec::Ar { layout: &ex.layout }).collect();
    let (loss, _) = gradients(params, &specs)?;
    Ok(loss)
}

/// t ~ U(0,1), redrawn while it falls below the resampling floor.
pub fn draw_mask_rate(rng: &mut RngStream) -> f64 {
    loop {
        let t = rng.f64();
        if t >= T_FLOOR_RESAMPLE {
            return t;
        }
    }
}

fn abort_if_diverged(loss: f64, step: usize) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::NumericError(format!(
            "training diverged: loss {loss} at step {step}"
        )));
    }
    Ok(())
}

/// Next-token pretraining in causal mode on sampled layouts.
pub fn pretrain_ar(
    model_config: &ModelConfig,
    config: &TrainConfig,
    spec: &ProcessSpec,
    vocab: &Vocab,
    prompt_len: usize,
) -> Result<TrainRun> {
    config.validate()?;
    let root = RngStream::new(config.seed);
    let mut params = ModelParams::init_random(model_config, &mut root.split("init"))?;
    let mut opt = Adam::new(&params);
    let mut data_rng = root.split("data");
    let mut curve = Vec::new();
    let mut max_norm: f64 = 0.0;
    for step in 0..config.steps {
        let batch: Vec<TrainExample> = (0..config.batch_size)
            .map(|_| sample_training_layout(spec, vocab, prompt_len, &mut data_rng))
            .collect::<Result<_>>()?;
        let specs: Vec<LossSpec> =
            batch.iter().map(|ex| LossSpec::Ar { layout: &ex.layout }).collect();
        let (loss, mut grads) = gradients(&params, &specs)?;
        abort_if_diverged(loss, step)?;
        clip_global_norm(&mut grads, config.grad_clip_norm);
        max_norm = max_norm.max(grads.global_norm());
        opt.step(&mut params, &grads, config);
        if (step + 1) % config.eval_every == 0 || step + 1 == config.steps {
            let eval =
                ar_eval_loss(&params, spec, vocab, prompt_len, config.eval_set_size, config.seed)?;
            curve.push(CurvePoint { step: step + 1, train_loss: loss, eval_loss: eval });
        }
    }
    let final_eval = curve.last().map(|p| p.eval_loss).unwrap_or(f64::NAN);
    Ok(TrainRun { params, curve, final_eval, max_postclip_norm: max_norm, steps_done: config.steps })
}

/// Diffusion fine-tuning: per sequence sample t, corrupt the target span,
/// minimize the 1/t-weighted masked cross entropy in bidirectional mode.
pub fn finetune_diffusion(
    init_params: ModelParams,
    config: &TrainConfig,
    spec: &ProcessSpec,
    vocab: &Vocab,
    prompt_len: usize,
    conv: PredConvention,
) -> Result<TrainRun> {
    config.validate()?;
    let root = RngStream::new(config.seed);
    let mut params = init_params;
    let mut opt = Adam::new(&params);
    let mut data_rng = root.split("data");
    let eval_set =
        DiffusionEvalSet::build(spec, vocab, prompt_len, config.eval_set_size, config.seed)?;
    let mut curve = Vec::new();
    let mut max_norm: f64 = 0.0;
    for step in 0..config.steps {
        let mut batch = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            let ex = sample_training_layout(spec, vocab, prompt_len, &mut data_rng)?;
            let t = draw_mask_rate(&mut data_rng);
            let (masked_tokens, mask) = apply_random_mask(&ex.layout, t, &mut data_rng)?;
            batch.push((ex, masked_tokens, mask, t));
        }
        let specs: Vec<LossSpec> = batch
            .iter()
            .map(|(ex, masked, mask, t)| LossSpec::Diffusion {
                layout: &ex.layout,
                masked_tokens: masked,
                mask,
                t: *t,
                conv,
            })
            .collect();
        let (loss, mut grads) = gradients(&params, &specs)?;
        abort_if_diverged(loss, step)?;
        clip_global_norm(&mut grads, config.grad_clip_norm);
        max_norm = max_norm.max(grads.global_norm());
        opt.step(&mut params, &grads, config);
        if (step + 1) % config.eval_every == 0 || step + 1 == config.steps {
            let eval = eval_set.eval(&params, conv)?;
            curve.push(CurvePoint { step: step + 1, train_loss: loss, eval_loss: eval });
        }
    }
    let final_eval = if config.steps == 0 {
        eval_set.eval(&params, conv)?
    } else {
        curve.last().map(|p| p.eval_loss).unwrap_or(f64::NAN)
    };
    Ok(TrainRun { params, curve, final_eval, max_postclip_norm: max_norm, steps_done: config.steps })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationArm {
    FromScratch,
    ArInitNoShift,
    ArInitWithShift,
    ArWeightsNoTraining,
}

impl AblationArm {
    pub const ALL: [AblationArm; 4] = [
        AblationArm::FromScratch,
        AblationArm::ArInitNoShift,
        AblationArm::ArInitWithShift,
        AblationArm::ArWeightsNoTraining,
    ];

    pub fn conv(&self) -> PredConvention {
        match self {
            AblationArm::ArInitNoShift => PredConvention::Unshifted,
            _ => PredConvention::Shifted,
        }
    }
}

impl fmt::Display for AblationArm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AblationArm::FromScratch => "from_scratch",
            AblationArm::ArInitNoShift => "ar_init_no_shift",
            AblationArm::ArInitWithShift => "ar_init_shift",
            AblationArm::ArWeightsNoTraining => "ar_weights_only",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for AblationArm {
    type Err = Error;
    fn from_str(s: &str) -> Result<AblationArm> {
        match s {
            "from_scratch" => Ok(AblationArm::FromScratch),
            "ar_init_no_shift" => Ok(AblationArm::ArInitNoShift),
            "ar_init_shift" => Ok(AblationArm::ArInitWithShift),
            "ar_weights_only" => Ok(AblationArm::ArWeightsNoTraining),
            other => Err(Error::Usage(format!(
                "unknown arm '{other}'; arms: from_scratch, ar_init_no_shift, \
                 ar_init_shift, ar_weights_only"
            ))),
        }
    }
}

/// Initializes a model for one ablation arm from a shared AR checkpoint.
pub fn arm_init(
    arm: AblationArm,
    ar_checkpoint: &ModelParams,
    vocab: &Vocab,
    seed: u64,
) -> Result<ModelParams> {
    let mut rng = RngStream::new(seed).split("arm-init");
    match arm {
        AblationArm::FromScratch => ModelParams::init_random(&ar_checkpoint.config, &mut rng),
        _ => ModelParams::init_from_ar(ar_checkpoint, vocab.mask_id, &mut rng),
    }
}

/// Trains one arm at the given step budget. `ArWeightsNoTraining` skips the
/// optimizer entirely (epoch-0 row). Arms share the data stream seed, so at
/// matched steps they differ only in initialization and shift convention.
pub fn train_arm(
    arm: AblationArm,
    ar_checkpoint: &ModelParams,
    config: &TrainConfig,
    spec: &ProcessSpec,
    vocab: &Vocab,
    prompt_len: usize,
) -> Result<TrainRun> {
    let init = arm_init(arm, ar_checkpoint, vocab, config.seed)?;
    let mut cfg = *config;
    if arm == AblationArm::ArWeightsNoTraining {
        cfg.steps = 0;
    }
    finetune_diffusion(init, &cfg, spec, vocab, prompt_len, arm.conv())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub arm: String,
    pub seed: u64,
    pub eval_diffusion_loss: f64,
    pub decode_metric: f64,
    pub decode_metric_kind: String,
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("arm,seed,eval_diffusion_loss,decode_metric,decode_metric_kind\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.9},{:.9},{}\n",
            r.arm, r.seed, r.eval_diffusion_loss, r.decode_metric, r.decode_metric_kind
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::AttentionMode;
    use crate::synth::process_vocab;

    fn small_model(vocab: &Vocab) -> ModelConfig {
        ModelConfig {
            d_model: 16,
            n_layers: 1,
            n_heads: 2,
            d_ff: 32,
            vocab_size: vocab.size as usize,
            max_len: 48,
            default_mode: AttentionMode::Causal,
        }
    }

    fn iid_spec(v: usize, len: usize) -> ProcessSpec {
        let row = vec![1.0 / v as f64; v];
        ProcessSpec::markov(row.clone(), vec![row; v], len).unwrap()
    }

    #[test]
    fn clip_bounds_global_norm() {
        let vocab = Vocab::canonical(1, 4).unwrap();
        let cfg = small_model(&vocab);
        let params = ModelParams::init_random(&cfg, &mut RngStream::new(0)).unwrap();
        let mut grads = ModelGrads::zeros_like(&params);
        grads.tok_emb[0] = 100.0;
        grads.out_proj[3] = -40.0;
        let pre = clip_global_norm(&mut grads, 5.0);
        assert!(pre > 5.0);
        assert!(grads.global_norm() <= 5.0 + 1e-9);
        // already-small gradients pass through untouched
        let mut small = ModelGrads::zeros_like(&params);
        small.tok_emb[0] = 0.25;
        clip_global_norm(&mut small, 5.0);
        assert_eq!(small.tok_emb[0], 0.25);
    }

    #[test]
    fn adam_moves_against_gradient() {
        let vocab = Vocab::canonical(1, 4).unwrap();
        let cfg = small_model(&vocab);
        let mut params = ModelParams::init_random(&cfg, &mut RngStream::new(0)).unwrap();
        let before = params.tok_emb[0];
        let mut grads = ModelGrads::zeros_like(&params);
        grads.tok_emb[0] = 1.0;
        let tc = TrainConfig::default();
        let mut opt = Adam::new(&params);
        opt.step(&mut params, &grads, &tc);
        assert!(params.tok_emb[0] < before);
    }

    #[test]
    fn iid_pretraining_plateaus_at_entropy() {
        // irreducible next-token loss on an iid uniform process is ln V
        let spec = iid_spec(4, 8);
        let vocab = process_vocab(&spec).unwrap();
        let tc = TrainConfig {
            steps: 400,
            batch_size: 8,
            eval_every: 100,
            eval_set_size: 64,
            seed: 5,
            ..TrainConfig::default()
        };
        let run = pretrain_ar(&small_model(&vocab), &tc, &spec, &vocab, 2).unwrap();
        let entropy = 4f64.ln();
        assert!(
            (run.final_eval - entropy).abs() < 0.05,
            "eval {} vs ln V {}",
            run.final_eval,
            entropy
        );
        assert!(run.max_postclip_norm <= 5.0 + 1e-9);
    }

    #[test]
    fn deterministic_expansion_pretraining_learns() {
        let spec = ProcessSpec::text_expansion(3, 2, false, 3).unwrap();
        let vocab = process_vocab(&spec).unwrap();
        let tc = TrainConfig {
            steps: 600,
            batch_size: 8,
            eval_every: 200,
            eval_set_size: 64,
            seed: 11,
            ..TrainConfig::default()
        };
        let run = pretrain_ar(&small_model(&vocab), &tc, &spec, &vocab, 0).unwrap();
        assert!(run.final_eval < 0.05, "AR eval loss {}", run.final_eval);
        // eval curve roughly monotone: later points never rise much
        for w in run.curve.windows(2) {
            assert!(w[1].eval_loss < w[0].eval_loss + 0.1);
        }
    }

    #[test]
    fn finetune_is_deterministic_given_seed() {
        let spec = iid_spec(3, 6);
        let vocab = process_vocab(&spec).unwrap();
        let cfg = small_model(&vocab);
        let tc = TrainConfig {
            steps: 12,
            batch_size: 4,
            eval_every: 6,
            eval_set_size: 8,
            seed: 3,
            ..TrainConfig::default()
        };
        let init = ModelParams::init_random(&cfg, &mut RngStream::new(1)).unwrap();
        let a = finetune_diffusion(init.clone(), &tc, &spec, &vocab, 2, PredConvention::Shifted)
            .unwrap();
        let b = finetune_diffusion(init, &tc, &spec, &vocab, 2, PredConvention::Shifted).unwrap();
        assert_eq!(a.final_eval.to_bits(), b.final_eval.to_bits());
        for ((_, x, _), (_, y, _)) in a.params.tensors().iter().zip(b.params.tensors().iter()) {
            for (p, q) in x.iter().zip(y.iter()) {
                assert_eq!(p.to_bits(), q.to_bits());
            }
        }
        assert!(a.max_postclip_norm <= 5.0 + 1e-9);
    }

    #[test]
    fn estimator_variance_shrinks_with_sample_count() {
        // sanity for the stochastic objective: the standard error of the
        // mean over n (t, mask) draws shrinks roughly like 1/sqrt(n)
        let spec = iid_spec(3, 6);
        let vocab = process_vocab(&spec).unwrap();
        let cfg = small_model(&vocab);
        let params = ModelParams::init_random(&cfg, &mut RngStream::new(2)).unwrap();
        let mut rng = RngStream::new(400);
        let ex = sample_training_layout(&spec, &vocab, 2, &mut rng).unwrap();
        let mut draw_loss = |rng: &mut RngStream| -> f64 {
            let t = draw_mask_rate(rng);
            let (masked, mask) = apply_random_mask(&ex.layout, t, rng).unwrap();
            crate::net::loss_diffusion(
                &params, &ex.layout, &masked, &mask, t, PredConvention::Shifted,
            )
            .unwrap()
        };
        let stderr_of_mean = |n: usize, rng: &mut RngStream| -> f64 {
            let xs: Vec<f64> = (0..n).map(|_| draw_loss(rng)).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        };
        let s1 = stderr_of_mean(200, &mut rng);
        let s2 = stderr_of_mean(800, &mut rng);
        let s3 = stderr_of_mean(3200, &mut rng);
        assert!(s2 < s1 && s3 < s2, "stderr not shrinking: {s1} {s2} {s3}");
        // each 4x sample increase should roughly halve the error
        assert!(s3 / s1 < 0.5, "stderr ratio {s3}/{s1}");
    }

    #[test]
    fn arm_parsing_and_conventions() {
        assert_eq!(
            "ar_init_shift".parse::<AblationArm>().unwrap(),
            AblationArm::ArInitWithShift
        );
        assert!("bogus".parse::<AblationArm>().is_err());
        assert_eq!(AblationArm::ArInitNoShift.conv(), PredConvention::Unshifted);
        assert_eq!(AblationArm::FromScratch.conv(), PredConvention::Shifted);
    }

    #[test]
    fn epoch_zero_arm_skips_training() {
        let spec = iid_spec(3, 6);
        let vocab = process_vocab(&spec).unwrap();
        let cfg = small_model(&vocab);
        let tc = TrainConfig {
            steps: 50,
            batch_size: 4,
            eval_set_size: 8,
            seed: 9,
            ..TrainConfig::default()
        };
        let ar = ModelParams::init_random(&cfg, &mut RngStream::new(33)).unwrap();
        let run = train_arm(AblationArm::ArWeightsNoTraining, &ar, &tc, &spec, &vocab, 2).unwrap();
        assert_eq!(run.steps_done, 0);
        // weights unchanged except the redrawn mask embedding row
        assert_eq!(run.params.out_proj, ar.out_proj);
    }
}
