use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::derive_seed;
use crate::error::{Error, Result};
use crate::losses::{dc_loss_graph, joint_loss_graph, pairwise_costs_graph, LossReport};
use crate::matrix::Matrix;
use crate::neural::{AdamState, ArchConfig, Checkpoint, Graph, LineageEntry, Model, ModelKind, ParamGrads, Stage};
use crate::pipeline::config::TrainConfig;
use crate::pipeline::data::{Dataset, Prepared};
use crate::dsp::NormStats;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub epoch: usize,
    /// Optimizer steps taken so far in this stage.
    pub step: usize,
    pub stage: Stage,
    /// Training-set means over the epoch; zero at epoch 0.
    pub loss: f64,
    pub j_dc: f64,
    pub phi_star: f64,
    pub dl_term: f64,
    pub dev_loss: f64,
    /// Mean non-chosen minus chosen permutation cost on the dev set.
    pub dev_gap: f64,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<TrainLogEntry>,
}

/// `(λ, use_dl)` of the objective optimized in `stage`.
pub fn stage_objective(stage: Stage, cfg: &TrainConfig) -> (f64, bool) {
    match stage {
        Stage::Dc => (1.0, false),
        Stage::Joint => (cfg.lambda, false),
        Stage::Dl => (cfg.lambda, true),
        Stage::Upit => (0.0, false),
    }
}

/// Builds the loss of one utterance on `g`.
pub fn build_loss(g: &mut Graph, model: &Model, feat: &Matrix, utt: &Prepared, stage: Stage, cfg: &TrainConfig) -> Result<(crate::neural::Var, LossReport)> {
    let (lambda, use_dl) = stage_objective(stage, cfg);
    let out = model.forward(g, feat, stage != Stage::Dc)?;
    let j_dc = match out.embeddings {
        Some(v) if lambda > 0.0 => Some(dc_loss_graph(g, v, &utt.membership, cfg.dc_norm)?),
        _ => None,
    };
    if stage == Stage::Dc {
        let v = j_dc.ok_or_else(|| Error::UnsupportedStage("embedding stage needs an embedding network".into()))?;
        let value = g.scalar(v);
        let report = LossReport {
            total: value,
            j_dc: value,
            phi_star: 0.0,
            dl_term: 0.0,
            table: None,
            lambda: 1.0,
            alpha: cfg.alpha,
            use_dl: false,
        };
        return Ok((v, report));
    }
    let pairwise = pairwise_costs_graph(g, &out.masks, utt.magnitude(), &utt.targets)?;
    joint_loss_graph(g, j_dc, &pairwise, lambda, cfg.alpha, use_dl)
}

fn check_init(stage: Stage, init: Option<&Checkpoint>) -> Result<()> {
    let want = match stage {
        Stage::Dc | Stage::Upit => None,
        Stage::Joint => Some(Stage::Dc),
        Stage::Dl => Some(Stage::Joint),
    };
    match (want, init.map(|c| c.stage)) {
        (None, None) => Ok(()),
        (Some(w), Some(got)) if w == got => Ok(()),
        (None, Some(got)) => Err(Error::StageOrderViolation(format!("stage {stage} starts from scratch, got a {got} checkpoint"))),
        (Some(w), got) => Err(Error::StageOrderViolation(format!(
            "stage {stage} needs a {w} checkpoint, got {}",
            got.map_or("none".to_string(), |s| s.to_string())
        ))),
    }
}

struct Eval {
    loss: f64,
    gap: f64,
}

fn evaluate(model: &Model, norm: &NormStats, utts: &[Prepared], stage: Stage, cfg: &TrainConfig) -> Result<Eval> {
    if utts.is_empty() {
        return Ok(Eval { loss: 0.0, gap: 0.0 });
    }
    let per = utts
        .par_iter()
        .map(|u| {
            let mut g = Graph::new(false, 0);
            let feat = norm.normalize(&model.arch.input_features(u.magnitude()))?;
            let (_, r) = build_loss(&mut g, model, &feat, u, stage, cfg)?;
            g.guard()?;
            Ok((r.total, r.table.map_or(0.0, |t| t.separation_gap())))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = per.len() as f64;
    Ok(Eval {
        loss: per.iter().map(|p| p.0).sum::<f64>() / n,
        gap: per.iter().map(|p| p.1).sum::<f64>() / n,
    })
}

/// Mean dev loss and permutation gap of a checkpoint under `stage`'s objective.
pub fn dev_metrics(ckpt: &Checkpoint, data: &Dataset, stage: Stage, cfg: &TrainConfig) -> Result<(f64, f64)> {
    let e = evaluate(&ckpt.model, &ckpt.norm, &data.dev, stage, cfg)?;
    Ok((e.loss, e.gap))
}

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> T {
    if jobs == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Trains one stage. `dc` and `upit` start from freshly initialized
/// weights; `joint` continues a `dc` checkpoint and `dl` a `joint` one.
pub fn train_stage(cfg: &TrainConfig, arch: &ArchConfig, stage: Stage, data: &Dataset, init: Option<&Checkpoint>) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_init(stage, init)?;
    with_pool(cfg.jobs, || train_inner(cfg, arch, stage, data, init))
}

fn train_inner(cfg: &TrainConfig, arch: &ArchConfig, stage: Stage, data: &Dataset, init: Option<&Checkpoint>) -> Result<TrainOutcome> {
    let (mut model, norm, mut lineage) = match init {
        Some(c) => {
            let mut lineage = c.lineage.clone();
            lineage.push(LineageEntry {
                stage: c.stage,
                hash: c.hash(),
            });
            (c.model.clone(), c.norm.clone(), lineage)
        }
        None => {
            let kind = if stage == Stage::Upit { ModelKind::Baseline } else { ModelKind::Def };
            let model = Model::new(kind, arch, derive_seed(cfg.seed, &format!("init-{stage}"), 0))?;
            let inputs: Vec<Matrix> = data.train.iter().map(|u| arch.input_features(u.magnitude())).collect();
            (model, NormStats::from_magnitudes(inputs.iter())?, Vec::new())
        }
    };
    if stage != Stage::Upit && model.kind != ModelKind::Def {
        return Err(Error::StageOrderViolation(format!("stage {stage} needs a deep-embedding model")));
    }
    let feats: Vec<Matrix> = data
        .train
        .par_iter()
        .map(|u| norm.normalize(&model.arch.input_features(u.magnitude())))
        .collect::<Result<_>>()?;

    // The discriminative stage fine-tunes, so it resumes the optimizer
    // (moments and decayed rate) of the joint checkpoint.
    let mut opt = match init {
        Some(c) if stage == Stage::Dl => c.optimizer.clone(),
        _ => AdamState::new(cfg.lr_init)?,
    };
    let mut log = Vec::new();
    let first = evaluate(&model, &norm, &data.dev, stage, cfg)?;
    log.push(TrainLogEntry {
        epoch: 0,
        step: 0,
        stage,
        loss: 0.0,
        j_dc: 0.0,
        phi_star: 0.0,
        dl_term: 0.0,
        dev_loss: first.loss,
        dev_gap: first.gap,
        lr: opt.lr,
    });
    let mut prev_dev = first.loss;
    let mut step = 0;
    let n = data.train.len();
    let max_epochs = if stage == Stage::Dc { cfg.min_epochs } else { cfg.max_epochs };

    for epoch in 1..=max_epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("shuffle-{stage}"), epoch as u64)));
        let mut sums = [0.0; 4];
        for batch in order.chunks(cfg.batch_utts) {
            let results = batch
                .par_iter()
                .map(|&i| {
                    let seed = derive_seed(cfg.seed, &format!("dropout-{stage}-{epoch}"), i as u64);
                    let mut g = Graph::new(true, seed);
                    let (loss, report) = build_loss(&mut g, &model, &feats[i], &data.train[i], stage, cfg)?;
                    Ok((g.backward(loss)?.into_params(), report))
                })
                .collect::<Result<Vec<(ParamGrads, LossReport)>>>()?;
            let mut grads = ParamGrads(BTreeMap::new());
            for (gr, r) in &results {
                grads.accumulate(gr);
                sums[0] += r.total;
                sums[1] += r.j_dc;
                sums[2] += r.phi_star;
                sums[3] += r.dl_term;
            }
            grads.scale(1.0 / batch.len() as f64);
            opt.step(&mut model, &grads)?;
            step += 1;
        }
        let dev = evaluate(&model, &norm, &data.dev, stage, cfg)?;
        let nf = n as f64;
        log.push(TrainLogEntry {
            epoch,
            step,
            stage,
            loss: sums[0] / nf,
            j_dc: sums[1] / nf,
            phi_star: sums[2] / nf,
            dl_term: sums[3] / nf,
            dev_loss: dev.loss,
            dev_gap: dev.gap,
            lr: opt.lr,
        });
        log::info!("{stage} epoch {epoch}: train {:.6} dev {:.6} lr {:.6}", sums[0] / nf, dev.loss, opt.lr);
        let rel = (prev_dev - dev.loss) / prev_dev.abs().max(f64::MIN_POSITIVE);
        if dev.loss > prev_dev {
            opt.lr *= cfg.lr_decay;
        }
        prev_dev = dev.loss;
        if stage != Stage::Dc && epoch >= cfg.min_epochs && rel < cfg.early_stop_rel {
            break;
        }
    }

    let mut metadata = BTreeMap::new();
    metadata.insert("seed".to_string(), cfg.seed.to_string());
    metadata.insert("lambda".to_string(), stage_objective(stage, cfg).0.to_string());
    metadata.insert("alpha".to_string(), cfg.alpha.to_string());
    metadata.insert("epochs".to_string(), (log.len() - 1).to_string());
    metadata.insert("final_dev_loss".to_string(), prev_dev.to_string());
    if init.is_none() {
        lineage.clear();
    }
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            stage,
            model,
            optimizer: opt,
            norm,
            lineage,
            metadata,
        },
        log,
    })
}
