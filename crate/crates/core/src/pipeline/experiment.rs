use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::Split;
use crate::error::{Error, Result};
use crate::metrics::{AssignMode, CorpusReport};
use crate::neural::{Checkpoint, Stage};
use crate::pipeline::config::RunConfig;
use crate::pipeline::data::Dataset;
use crate::pipeline::infer::{evaluate_system, System};
use crate::pipeline::train::{dev_metrics, train_stage, TrainLogEntry};

pub const BASELINE: &str = "uPIT";
pub const DEF_DL: &str = "uPIT+DEF+DL";
pub const DC_KMEANS: &str = "DC+K-means";
pub const IPSM_ORACLE: &str = "IPSM oracle";
pub const MIXTURE: &str = "mixture";

/// Report name of the joint system trained with weight `lambda`.
pub fn def_name(lambda: f64) -> String {
    format!("uPIT+DEF(λ={lambda})")
}

const MODES: [AssignMode; 2] = [AssignMode::Optimal, AssignMode::Default];
const EVAL_SPLITS: [Split; 2] = [Split::Dev, Split::Test];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub report: CorpusReport,
    pub logs: BTreeMap<String, Vec<TrainLogEntry>>,
    pub checkpoint_hashes: BTreeMap<String, String>,
    /// Dev permutation gap of the joint checkpoint the fine-tune starts from.
    pub dl_init_gap: f64,
    /// Dev permutation gap after the discriminative fine-tune.
    pub dl_final_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config_hash: String,
    pub systems: Vec<String>,
    pub seeds: Vec<SeedResult>,
    /// Seed-independent reference rows (oracle masks, unprocessed mixture).
    pub reference: CorpusReport,
}

fn mean(x: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = x.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

impl ExperimentReport {
    /// Seed-averaged `(SDR, SIR, SAR, SDRi)` of one table cell.
    pub fn cell(&self, system: &str, split: Split, mode: AssignMode) -> Option<(f64, f64, f64, f64)> {
        let rows: Vec<_> = if [IPSM_ORACLE, MIXTURE].contains(&system) {
            self.reference.row(system, split.as_str(), mode).into_iter().collect()
        } else {
            self.seeds
                .iter()
                .filter_map(|s| s.report.row(system, split.as_str(), mode))
                .collect()
        };
        if rows.is_empty() {
            return None;
        }
        Some((
            mean(rows.iter().map(|r| r.sdr)),
            mean(rows.iter().map(|r| r.sir)),
            mean(rows.iter().map(|r| r.sar)),
            mean(rows.iter().map(|r| r.sdri)),
        ))
    }

    /// Mean SDR of `system` per seed, in seed order.
    pub fn seed_sdrs(&self, system: &str, split: Split, mode: AssignMode) -> Vec<f64> {
        self.seeds
            .iter()
            .filter_map(|s| s.report.row(system, split.as_str(), mode).map(|r| r.sdr))
            .collect()
    }

    /// Systems × assignment modes, closed (dev) and open (test) conditions.
    pub fn table(&self) -> String {
        let mut names: Vec<&str> = self.systems.iter().map(String::as_str).collect();
        names.extend([IPSM_ORACLE, MIXTURE]);
        let w = names.iter().map(|n| n.chars().count()).max().unwrap_or(6);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<w$}  {:<7}  {:>7} {:>7} {:>7}  {:>7} {:>7} {:>7}  {:>7}",
            "", "", "CC", "", "", "OC", "", "", ""
        );
        let _ = writeln!(
            out,
            "{:<w$}  {:<7}  {:>7} {:>7} {:>7}  {:>7} {:>7} {:>7}  {:>7}",
            "system", "assign", "SDR", "SIR", "SAR", "SDR", "SIR", "SAR", "SDRi"
        );
        for name in names {
            for mode in MODES {
                let (Some(cc), Some(oc)) = (self.cell(name, Split::Dev, mode), self.cell(name, Split::Test, mode)) else {
                    continue;
                };
                let pad = w + name.len() - name.chars().count();
                let _ = writeln!(
                    out,
                    "{name:<pad$}  {:<7}  {:>7.2} {:>7.2} {:>7.2}  {:>7.2} {:>7.2} {:>7.2}  {:>7.2}",
                    mode.as_str(),
                    cc.0,
                    cc.1,
                    cc.2,
                    oc.0,
                    oc.1,
                    oc.2,
                    oc.3
                );
            }
        }
        let _ = writeln!(out, "seeds: {:?}", self.seeds.iter().map(|s| s.seed).collect::<Vec<_>>());
        for s in &self.seeds {
            let _ = writeln!(
                out,
                "seed {}: dev permutation gap {:.6} (joint init) -> {:.6} (after fine-tune)",
                s.seed, s.dl_init_gap, s.dl_final_gap
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, body: String| {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))
        };
        write("report.txt", self.table())?;
        write("report.json", self.to_json())?;
        let mut jsonl = self.reference.to_jsonl();
        for s in &self.seeds {
            jsonl.push_str(&s.report.to_jsonl());
        }
        write("records.jsonl", jsonl)
    }
}

fn evaluate_all(system: System<'_>, name: &str, data: &Dataset) -> Result<CorpusReport> {
    let mut report = CorpusReport::default();
    for split in EVAL_SPLITS {
        report.merge(evaluate_system(system, name, data.split(split), &data.stft, &MODES)?);
    }
    Ok(report)
}

fn keep(ckpts: Option<&Path>, seed: u64, name: &str, c: &Checkpoint) -> Result<()> {
    match ckpts {
        Some(dir) => c.save(dir.join(format!("seed-{seed}")).join(format!("{name}.ckpt"))),
        None => Ok(()),
    }
}

/// Trains and scores the baseline, the joint systems of the λ sweep and
/// the discriminative fine-tune, for every configured seed.
pub fn run_experiment(cfg: &RunConfig, data: &Dataset, checkpoint_dir: Option<&Path>) -> Result<ExperimentReport> {
    cfg.validate()?;
    let ex = &cfg.experiment;
    let mut systems = vec![BASELINE.to_string()];
    systems.extend(ex.lambdas.iter().map(|&l| def_name(l)));
    systems.push(DEF_DL.to_string());
    if ex.dc_kmeans {
        systems.push(DC_KMEANS.to_string());
    }

    let mut reference = evaluate_all(System::IpsmOracle, IPSM_ORACLE, data)?;
    reference.merge(evaluate_all(System::Mixture, MIXTURE, data)?);

    let mut seeds = Vec::new();
    for &seed in &ex.seeds {
        let mut tc = cfg.train.clone();
        tc.seed = seed;
        let mut report = CorpusReport::default();
        let mut logs = BTreeMap::new();
        let mut hashes = BTreeMap::new();

        let base = train_stage(&tc, &cfg.arch, Stage::Upit, data, None)?;
        report.merge(evaluate_all(System::Model(&base.checkpoint), BASELINE, data)?);
        keep(checkpoint_dir, seed, "upit", &base.checkpoint)?;
        hashes.insert(BASELINE.to_string(), base.checkpoint.hash());
        logs.insert(BASELINE.to_string(), base.log);

        let dc = train_stage(&tc, &cfg.arch, Stage::Dc, data, None)?;
        if ex.dc_kmeans {
            let sys = System::DcKmeans(&dc.checkpoint, seed, tc.kmeans_max_iter);
            report.merge(evaluate_all(sys, DC_KMEANS, data)?);
        }
        keep(checkpoint_dir, seed, "dc", &dc.checkpoint)?;
        hashes.insert("DC".to_string(), dc.checkpoint.hash());
        logs.insert("DC".to_string(), dc.log);

        let mut dl_init = None;
        for &lambda in &ex.lambdas {
            let mut jc = tc.clone();
            jc.lambda = lambda;
            let joint = train_stage(&jc, &cfg.arch, Stage::Joint, data, Some(&dc.checkpoint))?;
            let name = def_name(lambda);
            report.merge(evaluate_all(System::Model(&joint.checkpoint), &name, data)?);
            keep(checkpoint_dir, seed, &format!("joint-{lambda}"), &joint.checkpoint)?;
            hashes.insert(name.clone(), joint.checkpoint.hash());
            logs.insert(name, joint.log);
            if lambda == ex.dl_init_lambda {
                dl_init = Some(joint.checkpoint);
            }
        }
        let init = dl_init.expect("validated: dl_init_lambda is swept");
        let mut dc_cfg = tc.clone();
        dc_cfg.lambda = ex.dl_init_lambda;
        let dl = train_stage(&dc_cfg, &cfg.arch, Stage::Dl, data, Some(&init))?;
        let (_, dl_init_gap) = dev_metrics(&init, data, Stage::Dl, &dc_cfg)?;
        let (_, dl_final_gap) = dev_metrics(&dl.checkpoint, data, Stage::Dl, &dc_cfg)?;
        report.merge(evaluate_all(System::Model(&dl.checkpoint), DEF_DL, data)?);
        keep(checkpoint_dir, seed, "dl", &dl.checkpoint)?;
        hashes.insert(DEF_DL.to_string(), dl.checkpoint.hash());
        logs.insert(DEF_DL.to_string(), dl.log);

        seeds.push(SeedResult {
            seed,
            report,
            logs,
            checkpoint_hashes: hashes,
            dl_init_gap,
            dl_final_gap,
        });
    }
    Ok(ExperimentReport {
        config_hash: cfg.hash(),
        systems,
        seeds,
        reference,
    })
}
