use std::io::{self, Write};

use log::debug;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::chromosome::{Chromosome, GeneRanges};
use super::{Fitness, SelectionError};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CrossoverKind {
    Uniform,
    OnePoint,
}

/// How the mutation probability is applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MutationMode {
    /// With the given probability, exactly one gene of the individual changes.
    PerIndividual,
    /// Every gene changes independently with the given probability.
    PerGene,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaConfig {
    pub population: usize,
    pub epochs: usize,
    pub tournament: usize,
    pub crossover: CrossoverKind,
    pub crossover_prob: f64,
    pub mutation_prob: f64,
    pub mutation_mode: MutationMode,
    pub elite: usize,
    pub seed: u64,
    pub ranges: GeneRanges,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population: 200,
            epochs: 100,
            tournament: 3,
            crossover: CrossoverKind::Uniform,
            crossover_prob: 0.8,
            mutation_prob: 0.8,
            mutation_mode: MutationMode::PerIndividual,
            elite: 1,
            seed: 0,
            ranges: GeneRanges::default(),
        }
    }
}

impl GaConfig {
    /// Smaller population and fewer epochs for quick runs.
    pub fn desk() -> Self {
        Self {
            population: 50,
            epochs: 30,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SelectionError> {
        let bad = |m: String| Err(SelectionError::InvalidConfig(m));
        if self.population < 2 {
            return bad(format!("population {} must be at least 2", self.population));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.tournament == 0 {
            return bad("tournament size must be at least 1".into());
        }
        for (name, p) in [("crossover", self.crossover_prob), ("mutation", self.mutation_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} probability {p} outside [0, 1]"));
            }
        }
        if self.elite >= self.population {
            return bad(format!("elite count {} must be below the population {}", self.elite, self.population));
        }
        self.ranges.validate().map_err(SelectionError::InvalidConfig)
    }
}

/// Summary of one generation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaEpoch {
    pub epoch: usize,
    pub best: f64,
    pub mean: f64,
    pub best_band_count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaResult {
    pub best: Chromosome,
    pub best_fitness: f64,
    pub history: Vec<GaEpoch>,
    /// Last generation with its fitness values.
    pub population: Vec<(Chromosome, f64)>,
    /// Number of fitness calls made.
    pub evaluations: usize,
}

/// Writes `epoch,best_accuracy,mean_accuracy,best_band_count` rows.
pub fn write_history_csv(history: &[GaEpoch], mut out: impl Write) -> io::Result<()> {
    writeln!(out, "epoch,best_accuracy,mean_accuracy,best_band_count")?;
    for h in history {
        writeln!(out, "{},{},{},{}", h.epoch, h.best, h.mean, h.best_band_count)?;
    }
    Ok(())
}

const STREAM_BREED: u64 = 1;
const STREAM_FITNESS: u64 = 2;

/// Index of the fittest individual; ties go to the lower index.
fn argmax(fitness: &[f64]) -> usize {
    let mut best = 0;
    for (i, f) in fitness.iter().enumerate() {
        if f.total_cmp(&fitness[best]).is_gt() {
            best = i;
        }
    }
    best
}

/// Size-`k` tournament with replacement; ties go to the first drawn.
fn tournament(fitness: &[f64], k: usize, rng: &mut ChaCha8Rng) -> usize {
    let mut winner = rng.random_range(0..fitness.len());
    for _ in 1..k {
        let c = rng.random_range(0..fitness.len());
        if fitness[c].total_cmp(&fitness[winner]).is_gt() {
            winner = c;
        }
    }
    winner
}

/// Runs the GA over chromosomes with `n_bands` band genes.
///
/// Elites keep their fitness from the generation they were evaluated in, so
/// the best fitness per generation never decreases when `elite >= 1`.
pub fn ga_optimize(config: &GaConfig, n_bands: usize, fitness: &dyn Fitness) -> Result<GaResult, SelectionError> {
    config.validate()?;
    if n_bands == 0 {
        return Err(SelectionError::InvalidConfig("no bands to select from".into()));
    }
    let mut rng = seed::rng(config.seed, &[STREAM_BREED]);
    let mut population: Vec<Chromosome> = (0..config.population)
        .map(|_| Chromosome::random(&config.ranges, n_bands, &mut rng))
        .collect();
    let mut cached: Vec<Option<f64>> = vec![None; config.population];
    let mut history = Vec::with_capacity(config.epochs);
    let mut best_ever: Option<(Chromosome, f64)> = None;
    let mut evaluations = 0;
    let mut scores = Vec::new();

    for epoch in 0..config.epochs {
        let pending: Vec<usize> = (0..population.len()).filter(|&i| cached[i].is_none()).collect();
        evaluations += pending.len();
        let results: Vec<_> = pending
            .par_iter()
            .map(|&i| {
                let s = seed::derive(config.seed, &[STREAM_FITNESS, epoch as u64, i as u64]);
                fitness.evaluate(&population[i].decode(), s)
            })
            .collect();
        for (&i, r) in pending.iter().zip(results) {
            let f = r.map_err(|source| SelectionError::Fitness {
                context: format!("individual {i} of epoch {epoch}"),
                source,
            })?;
            cached[i] = Some(f);
        }
        scores = cached.iter().map(|f| f.expect("evaluated above")).collect();

        let top = argmax(&scores);
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        history.push(GaEpoch {
            epoch,
            best: scores[top],
            mean,
            best_band_count: population[top].band_count(),
        });
        debug!("epoch {epoch}: best {:.3} mean {mean:.3}", scores[top]);
        if best_ever.as_ref().is_none_or(|(_, f)| scores[top] > *f) {
            best_ever = Some((population[top].clone(), scores[top]));
        }
        if epoch + 1 == config.epochs {
            break;
        }

        // Elites in fitness order, ties to the lower index.
        let mut order: Vec<usize> = (0..population.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let mut next: Vec<Chromosome> = Vec::with_capacity(config.population);
        let mut next_cached: Vec<Option<f64>> = Vec::with_capacity(config.population);
        for &e in &order[..config.elite] {
            next.push(population[e].clone());
            next_cached.push(Some(scores[e]));
        }
        while next.len() < config.population {
            let mut a = population[tournament(&scores, config.tournament, &mut rng)].clone();
            let mut b = population[tournament(&scores, config.tournament, &mut rng)].clone();
            if rng.random_bool(config.crossover_prob) {
                match config.crossover {
                    CrossoverKind::Uniform => Chromosome::crossover_uniform(&mut a, &mut b, &mut rng),
                    CrossoverKind::OnePoint => Chromosome::crossover_one_point(&mut a, &mut b, &mut rng),
                }
            }
            for child in [a, b] {
                if next.len() == config.population {
                    break;
                }
                let mut child = child;
                match config.mutation_mode {
                    MutationMode::PerIndividual => {
                        if rng.random_bool(config.mutation_prob) {
                            child.mutate(&config.ranges, &mut rng);
                        }
                    }
                    MutationMode::PerGene => child.mutate_per_gene(config.mutation_prob, &config.ranges, &mut rng),
                }
                child.repair(&mut rng);
                next.push(child);
                next_cached.push(None);
            }
        }
        population = next;
        cached = next_cached;
    }

    let (best, best_fitness) = best_ever.expect("at least one epoch");
    Ok(GaResult {
        best,
        best_fitness,
        history,
        population: population.into_iter().zip(scores).collect(),
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selection::{FitnessError, ModelSpec};

    fn onemax(m: &ModelSpec, _: u64) -> Result<f64, FitnessError> {
        Ok(m.features.as_ref().map_or(0, Vec::len) as f64)
    }

    #[test]
    fn onemax_reaches_near_optimum() {
        let config = GaConfig {
            seed: 42,
            ..GaConfig::desk()
        };
        let r = ga_optimize(&config, 113, &onemax).unwrap();
        assert_eq!(r.history.len(), 30);
        assert!(r.best.band_count() >= 100, "best popcount {}", r.best.band_count());
        assert_eq!(r.best_fitness, r.best.band_count() as f64);
    }

    #[test]
    fn history_best_is_monotone() {
        let noisy = |m: &ModelSpec, s: u64| -> Result<f64, FitnessError> { Ok(onemax(m, s)? + (s % 7) as f64) };
        for seed in 0..3 {
            let config = GaConfig {
                population: 20,
                epochs: 15,
                seed,
                ..GaConfig::default()
            };
            let h = ga_optimize(&config, 30, &noisy).unwrap().history;
            assert!(h.windows(2).all(|w| w[1].best >= w[0].best));
        }
    }

    #[test]
    fn without_variation_the_initial_best_takes_over() {
        let config = GaConfig {
            population: 20,
            epochs: 40,
            crossover_prob: 0.0,
            mutation_prob: 0.0,
            seed: 3,
            ..GaConfig::default()
        };
        let r = ga_optimize(&config, 25, &onemax).unwrap();
        let first = r.history[0].best;
        assert!(r.history.iter().all(|h| h.best == first));
        assert!(r.population.iter().all(|(c, _)| *c == r.best));
    }

    #[test]
    fn same_seed_same_result() {
        let config = GaConfig {
            population: 16,
            epochs: 8,
            seed: 9,
            ..GaConfig::default()
        };
        let a = ga_optimize(&config, 12, &onemax).unwrap();
        let b = ga_optimize(&config, 12, &onemax).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn evaluated_chromosomes_are_valid() {
        let ranges = GeneRanges::default();
        let check = move |m: &ModelSpec, _: u64| -> Result<f64, FitnessError> {
            let f = m.features.as_ref().unwrap();
            if f.is_empty() {
                return Err("empty band set".into());
            }
            if let crate::classifiers::ClassifierSpec::Svm(s) = &m.classifier {
                if !(ranges.nu.0..=ranges.nu.1).contains(&s.nu) {
                    return Err("nu out of range".into());
                }
            }
            Ok(1.0)
        };
        let config = GaConfig {
            population: 30,
            epochs: 10,
            mutation_mode: MutationMode::PerGene,
            mutation_prob: 0.3,
            ..GaConfig::default()
        };
        ga_optimize(&config, 3, &check).unwrap();
    }

    #[test]
    fn fitness_errors_name_the_individual() {
        let fail = |_: &ModelSpec, _: u64| -> Result<f64, FitnessError> { Err("boom".into()) };
        let err = ga_optimize(&GaConfig { population: 4, epochs: 2, ..GaConfig::default() }, 5, &fail).unwrap_err();
        assert!(err.to_string().contains("individual 0 of epoch 0"), "{err}");
    }

    #[test]
    fn rejects_bad_config() {
        for config in [
            GaConfig { population: 1, ..GaConfig::default() },
            GaConfig { elite: 200, ..GaConfig::default() },
            GaConfig { crossover_prob: 1.5, ..GaConfig::default() },
        ] {
            assert!(ga_optimize(&config, 5, &onemax).is_err());
        }
    }

    #[test]
    fn history_csv_header() {
        let mut out = Vec::new();
        write_history_csv(&[GaEpoch { epoch: 0, best: 90.5, mean: 80.0, best_band_count: 12 }], &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "epoch,best_accuracy,mean_accuracy,best_band_count\n0,90.5,80,12\n");
    }
}
