use serde::{Deserialize, Serialize};

/// Provenance attached to every simulated trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub model: String,
    pub master_seed: u64,
    pub trajectory_index: u64,
    pub dt: f64,
    pub scheme: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub name: String,
    pub values: Vec<f64>,
}

/// Uniformly sampled observables. Channel 0 is the order parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub t0: f64,
    pub sample_dt: f64,
    pub channels: Vec<Channel>,
    /// Time of the first non-finite state, if the run blew up.
    pub diverged_at: Option<f64>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub(crate) fn new(t0: f64, sample_dt: f64, names: &[&str], capacity: usize, meta: TrajectoryMeta) -> Self {
        Self {
            t0,
            sample_dt,
            channels: names
                .iter()
                .map(|n| Channel {
                    name: n.to_string(),
                    values: Vec::with_capacity(capacity),
                })
                .collect(),
            diverged_at: None,
            meta,
        }
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, |c| c.values.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.sample_dt
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(|i| self.time(i))
    }

    /// Nearest sample index at or after `t`, clamped to the series.
    pub fn index_at(&self, t: f64) -> usize {
        let i = ((t - self.t0) / self.sample_dt - 1e-9).ceil().max(0.0) as usize;
        i.min(self.len().saturating_sub(1))
    }

    pub fn order_parameter(&self) -> &[f64] {
        &self.channels[0].values
    }

    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        self.channels
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.values.as_slice())
    }

    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }

    pub(crate) fn push(&mut self, values: &[f64]) {
        for (c, &v) in self.channels.iter_mut().zip(values) {
            c.values.push(v);
        }
    }
}
