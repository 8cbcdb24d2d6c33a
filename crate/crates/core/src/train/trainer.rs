//! Joint optimisation of `L_P + λ·L_OT` with per-epoch model selection.

use std::collections::BTreeMap;

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, CheckpointMeta, KNOWLEDGE_TENSOR};
use crate::autodiff::{Adam, Matrix, ParamSet, Tape, Var};
use crate::encoder::{
    bce_with_logits, deviation_loss_tape, encode, encode_tape, head_tape, init_encoder, init_head,
    prior_stats, score, EncoderSpec, HeadOutput, HeadSpec, LossKind, Mode, DEVIATION_MARGIN,
    PRIOR_SAMPLES,
};
use crate::error::{Error, Result};
use crate::eval::{auprc, Dataset};
use crate::ot::{
    cost_matrix_tape, ot_distance_tape, sinkhorn, sinkhorn_tape, CostMetric, Marginals,
    SinkhornConfig,
};
use crate::util::{derive_seed, derive_step_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GradientMode {
    /// Plan treated as a constant; gradients flow through `C` only.
    #[default]
    Detached,
    /// Differentiate through a fixed number of Sinkhorn iterations.
    Unrolled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OtConfig {
    pub enabled: bool,
    pub metric: CostMetric,
    pub epsilon_scale: f64,
    /// Absolute `ε`, replacing `epsilon_scale·mean(C)` when set.
    pub epsilon: Option<f64>,
    pub max_iter: usize,
    pub tol: f64,
    /// Relative `ν` mass of labeled anomalies (1 = uniform).
    pub anomaly_mass_boost: f64,
    pub gradient: GradientMode,
    pub unrolled_iters: usize,
}

impl Default for OtConfig {
    fn default() -> Self {
        let s = SinkhornConfig::default();
        OtConfig {
            enabled: true,
            metric: CostMetric::SquaredEuclidean,
            epsilon_scale: s.epsilon_scale,
            epsilon: None,
            max_iter: s.max_iter,
            tol: s.tol,
            anomaly_mass_boost: 1.0,
            gradient: GradientMode::Detached,
            unrolled_iters: 50,
        }
    }
}

impl OtConfig {
    pub fn sinkhorn(&self) -> SinkhornConfig {
        SinkhornConfig {
            epsilon_scale: self.epsilon_scale,
            max_iter: self.max_iter,
            tol: self.tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub loss: LossKind,
    /// Stop after this many epochs without a validation improvement (0 = never).
    pub patience: usize,
    pub ot: OtConfig,
    /// Keep per-batch transport diagnostics in the outcome.
    pub record_ot: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.1,
            epochs: 30,
            batch_size: 128,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            loss: LossKind::Bce,
            patience: 0,
            ot: OtConfig::default(),
            record_ot: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            errs.push("train.lambda must be finite and >= 0".to_string());
        }
        if self.epochs == 0 {
            errs.push("train.epochs must be >= 1".to_string());
        }
        if self.batch_size == 0 {
            errs.push("train.batch_size must be >= 1".to_string());
        }
        if !(self.lr > 0.0) {
            errs.push("train.lr must be positive".to_string());
        }
        if !(self.ot.epsilon_scale > 0.0) {
            errs.push("ot.epsilon_scale must be positive".to_string());
        }
        if self.ot.epsilon.is_some_and(|e| !(e > 0.0 && e.is_finite())) {
            errs.push("ot.epsilon must be positive and finite".to_string());
        }
        if !(self.ot.anomaly_mass_boost > 0.0) {
            errs.push("ot.anomaly_mass_boost must be positive".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub encoder: EncoderSpec,
    pub head: HeadSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    #[serde(rename = "L_P")]
    pub l_p: f64,
    #[serde(rename = "L_OT")]
    pub l_ot: f64,
    pub total: f64,
    pub val_auprc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OtDiagnostics {
    pub epoch: usize,
    pub batch: usize,
    pub iterations: usize,
    pub row_residual: f64,
    pub col_residual: f64,
    pub epsilon: f64,
    pub converged: bool,
    pub plan: Matrix,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochRecord>,
    /// Total loss of every optimisation step, in order.
    pub step_losses: Vec<f64>,
    /// Eval-mode training scores after the last epoch.
    pub final_train_scores: Vec<f64>,
    pub ot_diagnostics: Vec<OtDiagnostics>,
}

/// Initial encoder and head parameters for `seed`.
pub fn init_model(spec: &ModelSpec, seed: u64) -> Result<ParamSet> {
    let mut ps = init_encoder(&spec.encoder, derive_seed(seed, "encoder"))?;
    ps.extend(init_head(&spec.head, spec.encoder.embed_dim, derive_seed(seed, "head"))?)?;
    Ok(ps)
}

/// Head output transform implied by the loss.
pub fn effective_head(head: &HeadSpec, loss: LossKind) -> HeadSpec {
    HeadSpec {
        hidden: head.hidden.clone(),
        output: match loss {
            LossKind::Bce => HeadOutput::Sigmoid,
            LossKind::Deviation => HeadOutput::Raw,
        },
    }
}

pub struct StepLoss {
    pub total: Var,
    pub l_p: f64,
    pub l_ot: f64,
    pub plan: Option<crate::ot::TransportPlan>,
}

/// Builds `L_P + λ·L_OT` for one batch on `tape`. With `knowledge = None`
/// the OT term is omitted.
#[allow(clippy::too_many_arguments)]
pub fn batch_loss(
    tape: &mut Tape,
    spec: &ModelSpec,
    params: &ParamSet,
    x: &Matrix,
    y: &[f64],
    knowledge: Option<&Matrix>,
    config: &TrainConfig,
    mode: Mode,
    step_seed: u64,
) -> Result<StepLoss> {
    let xv = tape.constant(x.clone());
    let e = encode_tape(tape, xv, &spec.encoder, params, mode)?;
    let z = head_tape(tape, e, &spec.head, params)?;
    let lp = match config.loss {
        LossKind::Bce => bce_with_logits(tape, z, y)?,
        LossKind::Deviation => {
            let prior = prior_stats(PRIOR_SAMPLES, step_seed)?;
            deviation_loss_tape(tape, z, y, prior, DEVIATION_MARGIN)?
        }
    };
    let l_p = tape.value(lp).item();
    let Some(ef) = knowledge else {
        return Ok(StepLoss {
            total: lp,
            l_p,
            l_ot: 0.0,
            plan: None,
        });
    };
    let ot = &config.ot;
    let efv = tape.constant(ef.clone());
    let c = cost_matrix_tape(tape, efv, e, ot.metric)?;
    let cval = tape.value(c).clone();
    // The adaptive ε is a per-batch constant; no gradient flows through it.
    let eps = ot.epsilon.unwrap_or_else(|| ot.sinkhorn().epsilon_for(&cval));
    let flagged: Vec<bool> = y.iter().map(|&v| v == 1.0).collect();
    let marg = Marginals::boosted(ef.rows(), &flagged, ot.anomaly_mass_boost);
    let (lot, plan) = match ot.gradient {
        GradientMode::Detached => {
            let plan = sinkhorn(&cval, &marg, eps, ot.max_iter, ot.tol)?;
            (ot_distance_tape(tape, c, &plan.plan)?, Some(plan))
        }
        GradientMode::Unrolled => {
            let s = sinkhorn_tape(tape, c, &marg, eps, ot.unrolled_iters)?;
            let prod = tape.hadamard(c, s)?;
            (tape.sum(prod)?, None)
        }
    };
    let l_ot = tape.value(lot).item();
    let weighted = tape.scale(lot, config.lambda)?;
    let total = tape.add(lp, weighted)?;
    Ok(StepLoss {
        total,
        l_p,
        l_ot,
        plan,
    })
}

fn eval_scores(spec: &ModelSpec, params: &ParamSet, x: &Matrix) -> Result<Vec<f64>> {
    let e = encode(x, &spec.encoder, params, Mode::Eval)?;
    score(&e, &spec.head, params)
}

/// Trains encoder and head on `data`. `knowledge` is the frozen `E_F`
/// (`s×h`); pass `None`, or disable `config.ot`, for the plain baseline.
pub fn train(data: &Dataset, knowledge: Option<&Matrix>, spec: &ModelSpec, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    spec.encoder.validate()?;
    let spec = ModelSpec {
        encoder: spec.encoder.clone(),
        head: effective_head(&spec.head, config.loss),
    };
    if data.dim() != spec.encoder.input_dim {
        return Err(Error::shape(
            "train",
            format!("data has {} features, encoder expects {}", data.dim(), spec.encoder.input_dim),
        ));
    }
    // With λ = 0 the objective is L_P alone; skipping OT keeps the run
    // bit-identical to one with OT disabled.
    let knowledge = if config.ot.enabled && config.lambda > 0.0 { knowledge } else { None };
    if let Some(ef) = knowledge {
        if ef.cols() != spec.encoder.embed_dim || ef.rows() == 0 {
            return Err(Error::shape(
                "train",
                format!("E_F is {:?}, embedding width is {}", ef.shape(), spec.encoder.embed_dim),
            ));
        }
    }
    let labeled: Vec<usize> = (0..data.train_y.len()).filter(|&i| data.train_y[i] == 1).collect();
    let unlabeled: Vec<usize> = (0..data.train_y.len()).filter(|&i| data.train_y[i] == 0).collect();
    if unlabeled.is_empty() {
        return Err(Error::Data("training split has no unlabeled samples".into()));
    }
    let fill = config.batch_size.saturating_sub(labeled.len()).max(1);
    let has_val_pos = data.val_y.contains(&1);
    if !has_val_pos {
        warn!("validation split has no anomalies; the last epoch is kept");
    }

    let mut params = init_model(&spec, config.seed)?;
    let mut adam = Adam::with_moments(config.lr, config.beta1, config.beta2, config.adam_eps);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "batches"));
    let mut best: Option<(f64, usize, ParamSet)> = None;
    let mut log = Vec::new();
    let mut step_losses = Vec::new();
    let mut diagnostics = Vec::new();
    let mut step: u64 = 0;
    let mut since_best = 0;

    for epoch in 1..=config.epochs {
        let mut order = unlabeled.clone();
        order.shuffle(&mut shuffle_rng);
        let (mut sum_lp, mut sum_lot, mut sum_total) = (0.0, 0.0, 0.0);
        let mut failures = 0;
        let batches: Vec<&[usize]> = order.chunks(fill).collect();
        for (b, chunk) in batches.iter().enumerate() {
            let rows: Vec<usize> = labeled.iter().chain(chunk.iter()).copied().collect();
            let x = data.train_x.select_rows(&rows);
            let y: Vec<f64> = rows.iter().map(|&r| f64::from(data.train_y[r])).collect();
            let mut tape = Tape::new();
            let sl = batch_loss(
                &mut tape,
                &spec,
                &params,
                &x,
                &y,
                knowledge,
                config,
                Mode::Train(derive_step_seed(config.seed, "dropout", step)),
                derive_step_seed(config.seed, "prior", step),
            )?;
            let total = tape.value(sl.total).item();
            if !total.is_finite() {
                return Err(Error::Numeric(format!("loss is {total} at epoch {epoch}, batch {b}")));
            }
            if let Some(plan) = &sl.plan {
                if !plan.converged {
                    failures += 1;
                    debug!("sinkhorn did not converge: residual {:.3e}", plan.residual());
                }
                if config.record_ot {
                    diagnostics.push(OtDiagnostics {
                        epoch,
                        batch: b,
                        iterations: plan.iterations,
                        row_residual: plan.row_residual,
                        col_residual: plan.col_residual,
                        epsilon: plan.epsilon,
                        converged: plan.converged,
                        plan: plan.plan.clone(),
                    });
                }
            }
            tape.backward_into(sl.total, &mut params)?;
            adam.step(&mut params);
            sum_lp += sl.l_p;
            sum_lot += sl.l_ot;
            sum_total += total;
            step_losses.push(total);
            step += 1;
        }
        if knowledge.is_some() && failures * 2 > batches.len() {
            return Err(Error::Numeric(format!(
                "sinkhorn failed to converge in {failures} of {} batches in epoch {epoch}",
                batches.len()
            )));
        }
        let val_auprc = if has_val_pos {
            auprc(&eval_scores(&spec, &params, &data.val_x)?, &data.val_y)?
        } else {
            f64::NAN
        };
        let n = batches.len() as f64;
        let rec = EpochRecord {
            epoch,
            l_p: sum_lp / n,
            l_ot: sum_lot / n,
            total: sum_total / n,
            val_auprc,
        };
        info!(
            "epoch {epoch}: L_P {:.5} L_OT {:.5} total {:.5} val_auprc {:.4}",
            rec.l_p, rec.l_ot, rec.total, rec.val_auprc
        );
        log.push(rec);
        let improved = match &best {
            None => true,
            Some((b, _, _)) => !has_val_pos || val_auprc > *b,
        };
        if improved {
            best = Some((val_auprc, epoch, params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if config.patience > 0 && since_best >= config.patience {
                info!("early stop after epoch {epoch}");
                break;
            }
        }
    }

    let final_train_scores = eval_scores(&spec, &params, &data.train_x)?;
    let (val_auprc, epoch, mut chosen) = best.expect("at least one epoch");
    chosen.zero_grad();
    let mut ck = Checkpoint::new(CheckpointMeta {
        encoder: Some(spec.encoder.clone()),
        head: Some(spec.head.clone()),
        loss: Some(config.loss),
        know_encoder: None,
        seed: config.seed,
        epoch,
        val_auprc: val_auprc.is_finite().then_some(val_auprc),
        notes: BTreeMap::new(),
    });
    ck.insert_params(&chosen);
    if let Some(ef) = knowledge {
        ck.tensors.insert(KNOWLEDGE_TENSOR.to_string(), ef.clone());
    }
    Ok(TrainOutcome {
        checkpoint: ck,
        log,
        step_losses,
        final_train_scores,
        ot_diagnostics: diagnostics,
    })
}

/// Test-time scores `φ_O(φ_X(X_T))`; the knowledge path is not used.
pub fn infer(ck: &Checkpoint, x: &Matrix) -> Result<Vec<f64>> {
    let encoder = ck
        .meta
        .encoder
        .clone()
        .ok_or_else(|| Error::Checkpoint("checkpoint holds no data encoder".into()))?;
    let head = ck
        .meta
        .head
        .clone()
        .ok_or_else(|| Error::Checkpoint("checkpoint holds no scoring head".into()))?;
    if x.cols() != encoder.input_dim {
        return Err(Error::shape(
            "infer",
            format!("input has {} columns, model expects {}", x.cols(), encoder.input_dim),
        ));
    }
    if x.rows() == 0 {
        return Ok(Vec::new());
    }
    let mut params = ck.params("encoder/");
    params.extend(ck.params("head/"))?;
    eval_scores(&ModelSpec { encoder, head }, &params, x)
}
