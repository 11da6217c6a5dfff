//! Mock annealer that follows the QPU submission workflow on the exact
//! simulator: disjoint tiles of one composed problem, spin-reversal gauges,
//! per-tile evolution and sampling, de-tiling.

use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::CalibrationTable;
use crate::dynamics::{
    anneal_evolve, gauge_spins, gauge_transform, pinned_initial_state, sample_z, ungauge,
    DynamicsError, EvolutionConfig, IsingModel, SampleMetadata, SampleSet, StateVector,
};
use crate::pegasus::TilingResult;
use crate::scalar::Real;
use crate::schedule::{AnnealSchedule, HGainSchedule, ScheduleKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("tiles overlap on qubit {0}")]
    Overlap(usize),
    #[error("embedding of tile {0} does not cover the model")]
    TileSize(usize),
    #[error("invalid request: {0}")]
    Request(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Which qubits hold which copy. `qubits[t][k]` carries node `nodes[k]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileIndex {
    pub nodes: Vec<usize>,
    pub qubits: Vec<Vec<usize>>,
}

/// Copies `model` (on lattice nodes) onto every embedding of the tiling.
/// The composed model is block diagonal, one block per tile.
pub fn compose_tiles<T: Real>(
    model: &IsingModel<T>,
    tiling: &TilingResult,
) -> Result<(IsingModel<T>, TileIndex), BackendError> {
    model.check()?;
    let n = model.n_nodes();
    let mut labels = Vec::with_capacity(n * tiling.embeddings.len());
    let mut h = Vec::with_capacity(labels.capacity());
    let mut couplers = Vec::new();
    let mut j = Vec::new();
    let mut used = HashSet::new();
    let mut qubits = Vec::with_capacity(tiling.embeddings.len());
    for (t, e) in tiling.embeddings.iter().enumerate() {
        let offset = labels.len();
        let mut tile = Vec::with_capacity(n);
        for (k, &node) in model.labels.iter().enumerate() {
            let &q = e.map.get(node).ok_or(BackendError::TileSize(t))?;
            if !used.insert(q) {
                return Err(BackendError::Overlap(q));
            }
            labels.push(q);
            h.push(model.h[k]);
            tile.push(q);
        }
        for (&(a, b), &v) in model.couplers.iter().zip(&model.j) {
            couplers.push((offset + a, offset + b));
            j.push(v);
        }
        qubits.push(tile);
    }
    let composed = IsingModel::new(labels, h, couplers, j)?;
    Ok((
        composed,
        TileIndex {
            nodes: model.labels.clone(),
            qubits,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SamplerRequest<T: Real> {
    pub model: IsingModel<T>,
    /// Tile layout; without it every connected component is a tile and
    /// samples stay on the model's labels.
    #[serde(default)]
    pub tiles: Option<TileIndex>,
    pub schedule: AnnealSchedule<T>,
    #[serde(default)]
    pub hgain: Option<HGainSchedule<T>>,
    /// Classical start state, one ±1 spin per model node.
    #[serde(default)]
    pub initial_state: Option<Vec<i8>>,
    pub num_reads: u64,
    #[serde(default)]
    pub gauges: usize,
    #[serde(default = "default_true")]
    pub reinitialize_state: bool,
    pub seed: u64,
}

fn default_true() -> bool {
    true
}

/// Simulated time accounting; never QPU access time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub simulated: bool,
    pub anneal_duration_us: f64,
    pub num_reads: u64,
    pub n_tiles: usize,
    pub total_anneal_time_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerResponse {
    pub tiles: Vec<SampleSet>,
    pub timing: TimingReport,
}

pub struct MockSampler<T: Real> {
    pub calibration: CalibrationTable<T>,
    pub evolution: EvolutionConfig,
}

struct TileJob {
    index: usize,
    labels: Vec<usize>,
    out_labels: Vec<usize>,
}

impl<T: Real> MockSampler<T> {
    pub fn new(calibration: CalibrationTable<T>, evolution: EvolutionConfig) -> Self {
        MockSampler { calibration, evolution }
    }

    fn check(&self, req: &SamplerRequest<T>) -> Result<(), BackendError> {
        req.model.check()?;
        if req.num_reads == 0 {
            return Err(BackendError::Request("num_reads must be at least 1".into()));
        }
        req.schedule
            .check_shape()
            .map_err(|e| BackendError::Request(e.to_string()))?;
        if req.schedule.kind == ScheduleKind::Reverse && req.initial_state.is_none() {
            return Err(BackendError::Request("reverse schedules need an initial_state".into()));
        }
        if let Some(s) = &req.initial_state {
            if s.len() != req.model.n_nodes() || s.iter().any(|&x| x != 1 && x != -1) {
                return Err(BackendError::Request("initial_state needs one ±1 spin per node".into()));
            }
        }
        Ok(())
    }

    /// Runs every tile and returns one sample set per tile in tile order.
    /// Tiles are evolved in parallel; results depend only on `seed`.
    pub fn run(&self, req: &SamplerRequest<T>) -> Result<SamplerResponse, BackendError> {
        self.check(req)?;
        let jobs: Vec<TileJob> = match &req.tiles {
            Some(ti) => ti
                .qubits
                .iter()
                .enumerate()
                .map(|(index, q)| TileJob {
                    index,
                    labels: q.clone(),
                    out_labels: ti.nodes.clone(),
                })
                .collect(),
            None => req
                .model
                .components()
                .into_iter()
                .enumerate()
                .map(|(index, labels)| TileJob {
                    index,
                    out_labels: labels.clone(),
                    labels,
                })
                .collect(),
        };
        let covered: usize = jobs.iter().map(|j| j.labels.len()).sum();
        if covered != req.model.n_nodes() {
            return Err(BackendError::Request("tiles must cover every model node exactly once".into()));
        }
        let tiles = jobs
            .par_iter()
            .map(|job| self.run_tile(req, job))
            .collect::<Result<Vec<_>, _>>()?;
        let duration = req.schedule.duration_us().as_f64();
        Ok(SamplerResponse {
            timing: TimingReport {
                simulated: true,
                anneal_duration_us: duration,
                num_reads: req.num_reads,
                n_tiles: tiles.len(),
                total_anneal_time_us: duration * req.num_reads as f64,
            },
            tiles,
        })
    }

    fn run_tile(&self, req: &SamplerRequest<T>, job: &TileJob) -> Result<SampleSet, BackendError> {
        let sub = req.model.restrict(&job.labels)?;
        let n = sub.n_nodes();
        let start: Vec<i8> = match &req.initial_state {
            Some(all) => {
                let pos = req.model.position_map();
                job.labels.iter().map(|l| all[pos[l]]).collect()
            }
            None => vec![1; n],
        };

        let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
        rng.set_stream(job.index as u64);
        let n_gauges = req.gauges.max(1);
        let gauges: Vec<Vec<i8>> = if req.gauges == 0 {
            vec![vec![1; n]]
        } else {
            (0..n_gauges)
                .map(|_| (0..n).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect())
                .collect()
        };
        let models = gauges
            .iter()
            .map(|r| gauge_transform(&sub, r))
            .collect::<Result<Vec<_>, _>>()?;

        let mut reads: Vec<(Vec<i8>, u64)> = Vec::new();
        if req.reinitialize_state || req.schedule.kind != ScheduleKind::Reverse {
            for (g, (r, model)) in gauges.iter().zip(&models).enumerate() {
                let count = req.num_reads / n_gauges as u64 + u64::from((g as u64) < req.num_reads % n_gauges as u64);
                if count == 0 {
                    continue;
                }
                let psi = self.evolve(req, model, &gauge_spins(&start, r))?;
                let shots = sample_z(&psi, &job.labels, count, rng.gen());
                let back = ungauge(&shots, r)?;
                reads.extend(back.records.into_iter().map(|rec| (rec.spins, rec.multiplicity)));
            }
        } else {
            // each read starts from the previous read's outcome
            let mut cache: HashMap<(usize, Vec<i8>), StateVector<T>> = HashMap::new();
            let mut current = start.clone();
            for read in 0..req.num_reads {
                let g = (read % n_gauges as u64) as usize;
                let r = &gauges[g];
                let init = gauge_spins(&current, r);
                let key = (g, init.clone());
                if !cache.contains_key(&key) {
                    let psi = self.evolve(req, &models[g], &init)?;
                    cache.insert(key.clone(), psi);
                }
                let shot = sample_z(&cache[&key], &job.labels, 1, rng.gen());
                current = gauge_spins(&shot.records[0].spins, r);
                reads.push((current.clone(), 1));
            }
        }
        Ok(SampleSet::aggregate(
            job.out_labels.clone(),
            reads,
            SampleMetadata {
                tile: Some(job.index),
                gauge: None,
                seed: req.seed,
            },
        ))
    }

    fn evolve(
        &self,
        req: &SamplerRequest<T>,
        model: &IsingModel<T>,
        spins: &[i8],
    ) -> Result<StateVector<T>, BackendError> {
        let initial = match req.schedule.kind {
            ScheduleKind::Forward => pinned_initial_state(
                model,
                &req.schedule,
                req.hgain.as_ref(),
                &self.calibration,
                self.evolution.transverse_sign,
            )?,
            ScheduleKind::Reverse | ScheduleKind::Hold => StateVector::from_spins(spins),
        };
        Ok(anneal_evolve(
            model,
            &req.schedule,
            req.hgain.as_ref(),
            &self.calibration,
            &self.evolution,
            &initial,
        )?)
    }
}
