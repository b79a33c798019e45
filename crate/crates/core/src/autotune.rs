//! Exhaustive distributed tuning: run the whole target per measurement with
//! signals reset beforehand, score each config by the slowest rank's
//! median, and agree on one config through a broadcast from rank 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::runtime::spmd;
use crate::sched::SchedulerMode;
use crate::shmem::World;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Axis {
    pub name: String,
    pub values: Vec<i64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigSpace {
    pub axes: Vec<Axis>,
}

/// One point of a [`ConfigSpace`]: a value per axis, in axis order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Config {
    pub index: usize,
    pub values: Vec<i64>,
}

impl ConfigSpace {
    pub fn new(axes: impl IntoIterator<Item = (impl Into<String>, Vec<i64>)>) -> Self {
        ConfigSpace {
            axes: axes
                .into_iter()
                .map(|(n, values)| Axis {
                    name: n.into(),
                    values,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        if self.axes.is_empty() {
            return 0;
        }
        self.axes.iter().map(|a| a.values.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Lexicographic enumeration; the last axis varies fastest.
    pub fn configs(&self) -> Vec<Config> {
        (0..self.len())
            .map(|index| {
                let mut rest = index;
                let mut values = vec![0; self.axes.len()];
                for (i, a) in self.axes.iter().enumerate().rev() {
                    values[i] = a.values[rest % a.values.len()];
                    rest /= a.values.len();
                }
                Config { index, values }
            })
            .collect()
    }

    pub fn get(&self, config: &Config, axis: &str) -> Option<i64> {
        let i = self.axes.iter().position(|a| a.name == axis)?;
        config.values.get(i).copied()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigResult {
    pub config: Config,
    /// `timings_us[iteration][rank]`.
    pub timings_us: Vec<Vec<f64>>,
    pub medians_us: Vec<f64>,
    /// Max over ranks of the per-rank median; absent if the config faulted.
    pub score_us: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub axes: Vec<Axis>,
    pub iterations: usize,
    pub results: Vec<ConfigResult>,
    pub chosen: Config,
    /// Index each rank received from the broadcast.
    pub per_rank_choice: Vec<usize>,
    /// Every measurement started from an all-zero signal pad.
    pub signals_zero_at_start: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TuneOptions {
    pub iterations: usize,
    pub mode: SchedulerMode,
}

impl Default for TuneOptions {
    fn default() -> Self {
        TuneOptions {
            iterations: 3,
            mode: SchedulerMode::RoundRobin,
        }
    }
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Max over ranks of each rank's median over iterations.
pub fn aggregate(timings_us: &[Vec<f64>]) -> (Vec<f64>, f64) {
    let ranks = timings_us.first().map_or(0, Vec::len);
    let medians: Vec<f64> = (0..ranks)
        .map(|r| median(&timings_us.iter().map(|it| it[r]).collect::<Vec<_>>()))
        .collect();
    let score = medians.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (medians, score)
}

/// Runs `target(world, config)` `iterations` times per config. The target
/// is the whole rank-collective function and returns per-rank elapsed µs.
pub fn tune<F>(
    world: &World,
    space: &ConfigSpace,
    opts: &TuneOptions,
    mut target: F,
) -> Result<TuneReport>
where
    F: FnMut(&World, &Config) -> Result<Vec<f64>>,
{
    if space.is_empty() {
        return Err(Error::Tuning("configuration space is empty".into()));
    }
    if opts.iterations == 0 {
        return Err(Error::Tuning(
            "at least one measurement iteration is needed".into(),
        ));
    }
    let w = world.world_size();
    let mut zero_at_start = true;
    let mut results = Vec::new();
    for config in space.configs() {
        let mut timings = Vec::with_capacity(opts.iterations);
        let mut error = None;
        for _ in 0..opts.iterations {
            world.reset_signals()?;
            world.reset_clocks();
            zero_at_start &= world.signals_all_zero();
            match target(world, &config) {
                Ok(t) if t.len() == w => timings.push(t),
                Ok(t) => {
                    error = Some(format!("target returned {} timings for {w} ranks", t.len()));
                    break;
                }
                Err(e) => {
                    error = Some(e.to_string());
                    world.clear_cancel();
                    world.discard_pending();
                    break;
                }
            }
        }
        let (medians, score) = if error.is_none() {
            let (m, s) = aggregate(&timings);
            (m, Some(s))
        } else {
            (Vec::new(), None)
        };
        results.push(ConfigResult {
            config,
            timings_us: timings,
            medians_us: medians,
            score_us: score,
            error,
        });
    }
    world.reset_signals()?;

    // Strict `<` keeps the lexicographically first config on ties.
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in results.iter().enumerate() {
        if let Some(s) = r.score_us {
            if best.is_none_or(|(_, b)| s < b) {
                best = Some((i, s));
            }
        }
    }
    let (best, _) = best.ok_or_else(|| Error::Tuning("every configuration faulted".into()))?;

    let slot = world.alloc_symmetric(8, 8)?;
    let per_rank_choice = spmd(world, opts.mode, |pe| {
        if pe.my_pe() == 0 {
            pe.local(slot)?.write(0, &(best as u64).to_le_bytes())?;
        }
        pe.broadcast(0, slot, 8)?;
        let mut b = [0u8; 8];
        pe.local(slot)?.read(0, &mut b)?;
        Ok(u64::from_le_bytes(b) as usize)
    })?;
    if per_rank_choice.iter().any(|&c| c != best) {
        return Err(Error::Tuning(format!(
            "ranks disagree on the chosen config: {per_rank_choice:?}"
        )));
    }
    Ok(TuneReport {
        axes: space.axes.clone(),
        iterations: opts.iterations,
        chosen: results[best].config.clone(),
        results,
        per_rank_choice,
        signals_zero_at_start: zero_at_start,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shmem::WorldSpec;

    fn world() -> World {
        World::init(WorldSpec::new(1, 2)).unwrap()
    }

    #[test]
    fn max_of_medians_picks_config_zero() {
        let space = ConfigSpace::new([("tile", vec![32, 64])]);
        let table = [[10.0, 9.0], [8.0, 11.0]];
        let r = tune(&world(), &space, &TuneOptions::default(), |_, c| {
            Ok(table[c.index].to_vec())
        })
        .unwrap();
        assert_eq!(r.results[0].score_us, Some(10.0));
        assert_eq!(r.results[1].score_us, Some(11.0));
        assert_eq!(r.chosen.index, 0);
        assert_eq!(r.per_rank_choice, vec![0, 0]);
    }

    #[test]
    fn ties_go_to_first_and_faults_are_skipped() {
        let space = ConfigSpace::new([("a", vec![1, 2]), ("b", vec![5, 6])]);
        assert_eq!(space.configs()[1].values, vec![1, 6]);
        let r = tune(&world(), &space, &TuneOptions::default(), |_, c| {
            if c.index == 0 {
                Err(Error::arg("boom"))
            } else {
                Ok(vec![1.0, 1.0])
            }
        })
        .unwrap();
        assert!(r.results[0].error.is_some());
        assert_eq!(r.chosen.index, 1);
    }

    #[test]
    fn empty_or_all_faulted_is_tuning_error() {
        let w = world();
        let empty = ConfigSpace { axes: vec![] };
        assert!(matches!(
            tune(&w, &empty, &TuneOptions::default(), |_, _| Ok(vec![])),
            Err(Error::Tuning(_))
        ));
        let one = ConfigSpace::new([("x", vec![1])]);
        let r = tune(&w, &one, &TuneOptions::default(), |_, _| {
            Err(Error::arg("no"))
        });
        assert!(matches!(r, Err(Error::Tuning(_))));
    }

    #[test]
    fn even_median() {
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
    }
}
