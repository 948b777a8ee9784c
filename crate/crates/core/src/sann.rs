//! The stochastic network ensemble.
//!
//! Every member is trained on the complete dataset; the spread between members
//! comes only from independent initialization and shuffling. Proposals rotate
//! through the members, so over any `k·size` consecutive proposals each member
//! is sampled exactly `k` times.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::mlp::{MlpConfig, MlpNetwork, Normalizer, TrainReport};
use crate::observation::Observation;
use crate::{seed, Error, Result};

pub const DEFAULT_ENSEMBLE_SIZE: usize = 3;

const INIT_STREAM: u64 = 0x1000;
const REINIT_STREAM: u64 = 0x2000;
const TRAIN_STREAM: u64 = 0x3000;

/// Mean and population standard deviation of the member predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mean: f64,
    pub spread: f64,
    pub per_member: Vec<f64>,
}

impl Prediction {
    pub fn from_members(per_member: Vec<f64>) -> Self {
        let n = per_member.len() as f64;
        // Shifting by one member keeps identical predictions exactly spread-free.
        let pivot = per_member.first().copied().unwrap_or(0.0);
        let offset = per_member.iter().map(|v| v - pivot).sum::<f64>() / n;
        let mean = pivot + offset;
        let var = per_member.iter().map(|v| (v - pivot - offset).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            spread: var.sqrt(),
            per_member,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SannEnsemble {
    config: MlpConfig,
    members: Vec<MlpNetwork>,
    normalizer: Option<Normalizer>,
    next_member: usize,
    trainings: u64,
    reinits: u64,
}

impl SannEnsemble {
    /// `size` independently He-initialized members for `input_dim` inputs.
    pub fn new(config: MlpConfig, input_dim: usize, size: usize) -> Result<Self> {
        config.validate()?;
        if size == 0 {
            return Err(Error::InvalidConfig("ensemble size must be at least 1".into()));
        }
        if input_dim == 0 {
            return Err(Error::InvalidConfig("input dimension must be at least 1".into()));
        }
        let members = (0..size as u64)
            .map(|i| {
                let mut rng = seed::rng(config.seed, INIT_STREAM + i);
                MlpNetwork::he_init(&config, input_dim, &mut rng)
            })
            .collect();
        Ok(Self {
            config,
            members,
            normalizer: None,
            next_member: 0,
            trainings: 0,
            reinits: 0,
        })
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self) -> &[MlpNetwork] {
        &self.members
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn normalizer(&self) -> Option<&Normalizer> {
        self.normalizer.as_ref()
    }

    /// Installs the shared normalizer. It stays fixed for the session.
    pub fn set_normalizer(&mut self, normalizer: Normalizer) {
        self.normalizer = Some(normalizer);
    }

    pub fn is_trained(&self) -> bool {
        self.trainings > 0
    }

    /// Trains every member on the full set of observations, warm-starting
    /// from the current weights.
    ///
    /// A member whose training diverges is re-initialized from a fresh seed
    /// and trained once more; a second divergence is returned as an error.
    pub fn retrain_all(&mut self, observations: &[Observation]) -> Result<Vec<TrainReport>> {
        if observations.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let norm = match &self.normalizer {
            Some(n) => n.clone(),
            None => {
                let n = Normalizer::fit(observations)?;
                self.normalizer = Some(n.clone());
                n
            }
        };
        let generation = self.trainings;
        self.trainings += 1;

        let mut reports = Vec::with_capacity(self.members.len());
        for k in 0..self.members.len() {
            let stream = TRAIN_STREAM + ((generation << 8) | k as u64);
            let mut rng = seed::rng(self.config.seed, stream);
            let report = match self.members[k].train(&norm, observations, &mut rng) {
                Ok(report) => report,
                Err(Error::TrainingDiverged) => {
                    warn!("ensemble member {k} diverged; re-initializing");
                    let input_dim = self.members[k].input_dim();
                    let mut init_rng = seed::rng(self.config.seed, REINIT_STREAM + self.reinits);
                    self.reinits += 1;
                    self.members[k] = MlpNetwork::he_init(&self.config, input_dim, &mut init_rng);
                    self.members[k].train(&norm, observations, &mut rng)?
                }
                Err(e) => return Err(e),
            };
            reports.push(report);
        }
        Ok(reports)
    }

    /// Picks the member whose minimum is proposed next (round robin).
    pub fn thompson_sample(&mut self) -> usize {
        let k = self.next_member;
        self.next_member = (self.next_member + 1) % self.members.len();
        k
    }

    pub fn next_member(&self) -> usize {
        self.next_member
    }

    /// Restores the rotation position, e.g. when resuming from an archive.
    pub fn set_next_member(&mut self, k: usize) {
        self.next_member = k % self.members.len();
    }

    fn norm(&self) -> Result<&Normalizer> {
        self.normalizer.as_ref().ok_or(Error::NotTrained)
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        let norm = self.norm()?;
        let per_member = self
            .members
            .iter()
            .map(|m| m.forward(norm, x))
            .collect::<Result<Vec<_>>>()?;
        Ok(Prediction::from_members(per_member))
    }

    /// Predicted cost of member `k` at `x`, with its input gradient in `grad`.
    pub fn member_value_and_gradient(&self, k: usize, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        self.members[k].value_and_gradient(self.norm()?, x, grad)
    }

    #[cfg(test)]
    pub(crate) fn members_mut(&mut self) -> &mut [MlpNetwork] {
        &mut self.members
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observation::Source;

    fn config() -> MlpConfig {
        MlpConfig {
            hidden_layers: 2,
            hidden_width: 16,
            epochs_per_iteration: 30,
            seed: 17,
            ..MlpConfig::default()
        }
    }

    fn obs(i: u64, params: Vec<f64>, cost: f64) -> Observation {
        Observation {
            run_index: i,
            source: Source::InitDe,
            params,
            raw_cost: cost,
            scaled_cost: 0.0,
            bad: false,
            wall_time: 0.0,
        }
    }

    fn data() -> Vec<Observation> {
        (0..24)
            .map(|i| {
                let x = i as f64 / 23.0 * 2.0 - 1.0;
                let y = ((i * 7) % 24) as f64 / 23.0 * 2.0 - 1.0;
                obs(i, vec![x, y], x * x + 0.5 * y * y)
            })
            .collect()
    }

    #[test]
    fn members_start_distinct() {
        let e = SannEnsemble::new(config(), 2, 3).unwrap();
        assert_ne!(e.members[0], e.members[1]);
        assert_ne!(e.members[1], e.members[2]);
        assert_ne!(e.members[0], e.members[2]);
    }

    #[test]
    fn rotation_is_round_robin() {
        let mut e = SannEnsemble::new(config(), 2, 3).unwrap();
        let picks: Vec<_> = (0..6).map(|_| e.thompson_sample()).collect();
        assert_eq!(picks, vec![0, 1, 2, 0, 1, 2]);

        e.set_next_member(2);
        assert_eq!(e.thompson_sample(), 2);
        assert_eq!(e.thompson_sample(), 0);

        let mut single = SannEnsemble::new(config(), 2, 1).unwrap();
        assert!((0..5).all(|_| single.thompson_sample() == 0));
    }

    #[test]
    fn retrain_keeps_members_distinct_and_finite() {
        let mut e = SannEnsemble::new(config(), 2, 3).unwrap();
        let reports = e.retrain_all(&data()).unwrap();
        assert_eq!(reports.len(), 3);
        assert!(e.members.iter().all(MlpNetwork::is_finite));
        assert_ne!(e.members[0], e.members[1]);
    }

    #[test]
    fn single_point_is_interpolated_by_every_member() {
        let point = vec![obs(0, vec![0.3, -0.4], 2.5)];
        let mut e = SannEnsemble::new(config(), 2, 3).unwrap();
        e.retrain_all(&point).unwrap();
        let norm = e.normalizer().unwrap().clone();
        let p = e.predict(&[0.3, -0.4]).unwrap();
        for v in p.per_member {
            assert!((norm.normalize_cost(v) - norm.normalize_cost(2.5)).abs() < 1e-2);
        }
    }

    #[test]
    fn diverged_member_is_reinitialized() {
        let mut e = SannEnsemble::new(config(), 2, 3).unwrap();
        e.members_mut()[1].layers[0].weights[[0, 0]] = f64::NAN;
        e.retrain_all(&data()).unwrap();
        assert_eq!(e.size(), 3);
        assert!(e.members.iter().all(MlpNetwork::is_finite));
    }

    #[test]
    fn prediction_statistics() {
        let p = Prediction::from_members(vec![1.0, 2.0, 3.0]);
        assert_eq!(p.mean, 2.0);
        assert!((p.spread - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(Prediction::from_members(vec![0.7; 3]).spread, 0.0);
    }

    #[test]
    fn predict_reports_each_member_forward() {
        let mut e = SannEnsemble::new(config(), 2, 3).unwrap();
        let d = data();
        e.retrain_all(&d).unwrap();
        let x = [0.1, 0.2];
        let p = e.predict(&x).unwrap();
        for (k, v) in p.per_member.iter().enumerate() {
            assert_eq!(*v, e.members[k].forward(e.normalizer().unwrap(), &x).unwrap());
        }
    }

    #[test]
    fn mean_prediction_error_is_bounded_by_training_loss() {
        let mut e = SannEnsemble::new(config(), 2, 3).unwrap();
        let d = data();
        let reports = e.retrain_all(&d).unwrap();
        let norm = e.normalizer().unwrap().clone();
        let mean_loss = reports.iter().map(|r| r.final_loss).sum::<f64>() / 3.0;
        let mse = d
            .iter()
            .map(|o| {
                let p = e.predict(&o.params).unwrap().mean;
                (norm.normalize_cost(p) - norm.normalize_cost(o.raw_cost)).powi(2)
            })
            .sum::<f64>()
            / d.len() as f64;
        assert!(mse.sqrt() <= mean_loss.sqrt() + 1e-6);
    }

    #[test]
    fn predict_before_training_is_an_error() {
        let e = SannEnsemble::new(config(), 2, 3).unwrap();
        assert!(matches!(e.predict(&[0.0, 0.0]), Err(Error::NotTrained)));
    }
}
