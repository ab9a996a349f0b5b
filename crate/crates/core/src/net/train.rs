use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::model::Network;
use super::tensor::Tensor;
use crate::augment::{apply_transform, draw_similarity, sample_patch, PatchSpec};
use crate::error::{Error, Result};
use crate::rng::{self, stream};
use crate::volume::{Interpolation, Volume3D};

#[derive(Clone, Debug)]
pub struct Case {
    pub id: String,
    pub image: Volume3D,
    pub label: Volume3D,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentBounds {
    pub max_scale_pct: f64,
    pub max_rot_deg: f64,
}

impl Default for AugmentBounds {
    fn default() -> Self {
        AugmentBounds {
            max_scale_pct: 10.0,
            max_rot_deg: 10.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub id: String,
    pub cases: Vec<Case>,
    /// Random similarity augmentation applied before patch sampling.
    pub augment: Option<AugmentBounds>,
}

fn default_batch() -> usize {
    8
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase {
    pub dataset_id: String,
    pub iterations: u64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSchedule {
    pub phases: Vec<Phase>,
    pub seed: u64,
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.phases.is_empty() {
            return Err(Error::Config("training schedule has no phases".into()));
        }
        for (i, p) in self.phases.iter().enumerate() {
            if p.iterations == 0 || p.batch_size == 0 {
                return Err(Error::Config(format!("phase {i} needs iterations and batch_size >= 1")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    pub patch: PatchSpec,
    pub adam: AdamConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    /// Global iteration across phases, from 0.
    pub iteration: u64,
    pub phase: usize,
    pub loss: f64,
}

pub fn write_loss_curve<W: Write>(curve: &[LossRecord], mut w: W) -> Result<()> {
    let mut out = String::from("iteration,phase,loss\n");
    for r in curve {
        out.push_str(&format!("{},{},{}\n", r.iteration, r.phase, r.loss));
    }
    w.write_all(out.as_bytes()).map_err(|e| Error::io("<loss curve>", e))
}

/// Stepwise trainer. Adam moments restart at every phase boundary while
/// parameters carry over, so a multi-phase run equals running its phases
/// one after another on the carried network.
pub struct Trainer<'a> {
    net: Network,
    datasets: Vec<&'a Dataset>,
    schedule: TrainSchedule,
    options: TrainOptions,
    state: AdamState,
    phase: usize,
    local: u64,
    global: u64,
    curve: Vec<LossRecord>,
}

impl<'a> Trainer<'a> {
    pub fn new(net: Network, schedule: TrainSchedule, datasets: &'a [Dataset], options: TrainOptions) -> Result<Self> {
        schedule.validate()?;
        options.patch.validate()?;
        options.adam.validate()?;
        let d = net.config().divisor();
        if options.patch.size.iter().any(|&n| n % d != 0) {
            return Err(Error::Config(format!(
                "patch size {:?} must be a multiple of {d}",
                options.patch.size
            )));
        }
        let mut resolved = Vec::new();
        for p in &schedule.phases {
            let ds = datasets
                .iter()
                .find(|d| d.id == p.dataset_id)
                .ok_or_else(|| Error::Config(format!("unknown dataset {:?}", p.dataset_id)))?;
            if ds.cases.is_empty() {
                return Err(Error::Empty(format!("dataset {:?} has no cases", ds.id)));
            }
            resolved.push(ds);
        }
        let state = AdamState::new(options.adam, net.params().len());
        Ok(Trainer {
            net,
            datasets: resolved,
            schedule,
            options,
            state,
            phase: 0,
            local: 0,
            global: 0,
            curve: Vec::new(),
        })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn adam_state(&self) -> &AdamState {
        &self.state
    }

    pub fn curve(&self) -> &[LossRecord] {
        &self.curve
    }

    pub fn is_done(&self) -> bool {
        self.phase >= self.schedule.phases.len()
    }

    /// Input and target for batch element `b` of local iteration `it`.
    pub fn sample(&self, phase: usize, it: u64, b: usize) -> Result<(Tensor, Vec<f64>)> {
        let ds = self.datasets[phase];
        let seed = self.schedule.seed;
        let key = |k: u64| [seed, stream::BATCH, rng::str_key(&ds.id), it, b as u64, k];
        let case = &ds.cases[rng::below(&key(0), ds.cases.len() as u64) as usize];
        let index = rng::hash(&key(1));
        let warped;
        let (image, label) = match ds.augment {
            Some(a) => {
                let t = draw_similarity(seed, index, a.max_scale_pct, a.max_rot_deg);
                warped = (
                    apply_transform(&case.image, &t, Interpolation::Trilinear)?,
                    apply_transform(&case.label, &t, Interpolation::Nearest)?,
                );
                (&warped.0, &warped.1)
            }
            None => (&case.image, &case.label),
        };
        let patch = sample_patch(image, label, &self.options.patch, seed, index)?;
        let target = Tensor::from_volume(&patch.label).data;
        Ok((Tensor::from_volume(&patch.image), target))
    }

    /// Run one iteration; returns its mean batch loss, or `None` once the
    /// schedule is exhausted.
    pub fn step(&mut self) -> Result<Option<f64>> {
        if self.is_done() {
            return Ok(None);
        }
        let phase = &self.schedule.phases[self.phase];
        if self.local == 0 {
            self.state = AdamState::new(self.options.adam, self.net.params().len());
        }
        let params = self.net.params_f64();
        let cfg = self.net.config();
        let (p, it) = (self.phase, self.local);
        let results: Vec<(f64, Vec<f64>)> = (0..phase.batch_size)
            .into_par_iter()
            .map(|b| {
                let (x, t) = self.sample(p, it, b)?;
                super::model::loss_and_gradient(cfg, &params, &x, &t)
            })
            .collect::<Result<_>>()?;
        let scale = 1.0 / phase.batch_size as f64;
        let mut grad = vec![0.0; params.len()];
        let mut loss = 0.0;
        for (l, g) in &results {
            loss += l;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        loss *= scale;
        grad.iter_mut().for_each(|g| *g *= scale);
        if !loss.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite loss at phase {p}, iteration {it} (dataset {:?})",
                phase.dataset_id
            )));
        }
        self.state
            .step(self.net.params_mut(), &grad)
            .map_err(|e| Error::Numerical(format!("phase {p}, iteration {it}: {e}")))?;
        self.curve.push(LossRecord {
            iteration: self.global,
            phase: p,
            loss,
        });
        self.global += 1;
        self.local += 1;
        if self.local == phase.iterations {
            log::debug!("phase {p} finished after {it} iterations, loss {loss}");
            self.phase += 1;
            self.local = 0;
        }
        Ok(Some(loss))
    }

    pub fn finish(mut self) -> Result<(Network, AdamState, Vec<LossRecord>)> {
        while self.step()?.is_some() {}
        Ok((self.net, self.state, self.curve))
    }
}

/// Run a whole schedule and return the trained network and loss curve.
pub fn train(
    net: Network,
    schedule: &TrainSchedule,
    datasets: &[Dataset],
    options: &TrainOptions,
) -> Result<(Network, Vec<LossRecord>)> {
    let (net, _, curve) = Trainer::new(net, schedule.clone(), datasets, options.clone())?.finish()?;
    Ok((net, curve))
}
