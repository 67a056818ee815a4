use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    genotype_to_perturbation, AttackContext, AttackError, AttackProbe, AttackResult, Evaluation,
    Evaluator, Genotype, NoProbe, Perturbation, PopulationSnapshots, SearchBounds, SearchMethod,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeConfig {
    pub population: usize,
    pub generations: usize,
    /// Mutation scale `F` in `M_ξ + F·(M_φ − M_η)`.
    pub scale: f64,
    /// Stop as soon as any evaluated candidate is misclassified.
    pub early_stop: bool,
    pub snapshots: bool,
    /// Reuse oracle answers for repeated perturbations.
    pub cache: bool,
}

impl Default for DeConfig {
    fn default() -> Self {
        Self {
            population: 50,
            generations: 50,
            scale: 0.5,
            early_stop: false,
            snapshots: false,
            cache: true,
        }
    }
}

impl DeConfig {
    /// Evaluations needed to run every generation: `population · (generations + 1)`.
    pub fn full_budget(&self) -> usize {
        self.population * (self.generations + 1)
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        if self.population < 4 {
            return Err(AttackError::InvalidConfig(format!(
                "population must be at least 4, got {}",
                self.population
            )));
        }
        if !(self.scale > 0.0 && self.scale <= 2.0) {
            return Err(AttackError::InvalidConfig(format!(
                "scale must lie in (0, 2], got {}",
                self.scale
            )));
        }
        Ok(())
    }
}

struct Member {
    genotype: Genotype,
    phenotype: Perturbation,
    eval: Evaluation,
}

/// Index of the lowest fitness; ties go to the earliest member.
fn best_of(pop: &[Member]) -> usize {
    let mut best = 0;
    for (i, m) in pop.iter().enumerate() {
        if m.eval.fitness < pop[best].eval.fitness {
            best = i;
        }
    }
    best
}

fn phenotypes(pop: &[Member]) -> Vec<Perturbation> {
    pop.iter().map(|m| m.phenotype.clone()).collect()
}

/// Differential evolution over `(row, col, v_1, …, v_C)`.
///
/// Generations are synchronous: every trial vector is built from the
/// current population before any is evaluated, and a trial replaces its
/// parent only when strictly fitter. No crossover is applied. The run stops
/// early when the evaluation budget is exhausted mid-generation.
pub fn de_attack(ctx: &AttackContext<'_>, cfg: &DeConfig) -> Result<AttackResult, AttackError> {
    de_attack_with_probe(ctx, cfg, &mut NoProbe)
}

pub fn de_attack_with_probe(
    ctx: &AttackContext<'_>,
    cfg: &DeConfig,
    probe: &mut dyn AttackProbe,
) -> Result<AttackResult, AttackError> {
    cfg.validate()?;
    if ctx.budget < cfg.population {
        return Err(AttackError::InvalidConfig(format!(
            "budget {} cannot cover a population of {}",
            ctx.budget, cfg.population
        )));
    }
    let bounds = ctx.bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let mut evaluator = Evaluator::new(ctx, cfg.cache);
    let mut trajectory = Vec::with_capacity(cfg.generations + 1);
    let with_trajectory = |e: AttackError, trajectory: &[f64]| match e {
        AttackError::Oracle {
            source,
            evaluations,
            ..
        } => AttackError::Oracle {
            source,
            trajectory: trajectory.to_vec(),
            evaluations,
        },
        other => other,
    };

    let mut stop = false;
    let mut pop = Vec::with_capacity(cfg.population);
    for _ in 0..cfg.population {
        let genotype = Genotype(
            (0..bounds.dims())
                .map(|k| rng.random::<f64>() * bounds.upper(k))
                .collect(),
        );
        let phenotype = genotype_to_perturbation(&genotype, &bounds)?;
        let eval = evaluator
            .evaluate(&phenotype, probe)
            .map_err(|e| with_trajectory(e, &trajectory))?;
        stop |= cfg.early_stop && eval.label != ctx.true_label;
        pop.push(Member {
            genotype,
            phenotype,
            eval,
        });
        if stop {
            break;
        }
    }
    trajectory.push(pop[best_of(&pop)].eval.fitness);

    let middle_generation = cfg.generations.div_ceil(2);
    let initial = cfg.snapshots.then(|| phenotypes(&pop));
    let mut middle = None;

    let mut generation = 0;
    while generation < cfg.generations && !stop && evaluator.remaining() > 0 {
        generation += 1;
        let trials = mutate(&pop, cfg.scale, &bounds, &mut rng, probe);
        let mut evaluated = Vec::with_capacity(trials.len());
        for genotype in trials {
            if evaluator.remaining() == 0 {
                break;
            }
            let phenotype = genotype_to_perturbation(&genotype, &bounds)?;
            let eval = evaluator
                .evaluate(&phenotype, probe)
                .map_err(|e| with_trajectory(e, &trajectory))?;
            evaluated.push(Member {
                genotype,
                phenotype,
                eval,
            });
            if cfg.early_stop && eval.label != ctx.true_label {
                stop = true;
                break;
            }
        }
        for (parent, trial) in pop.iter_mut().zip(evaluated) {
            if trial.eval.fitness < parent.eval.fitness {
                *parent = trial;
            }
        }
        trajectory.push(pop[best_of(&pop)].eval.fitness);
        if generation == middle_generation && cfg.snapshots {
            middle = Some(phenotypes(&pop));
        }
    }

    let snapshots = initial.map(|initial| {
        let final_ = phenotypes(&pop);
        PopulationSnapshots {
            initial,
            middle_generation,
            // A run cut short before the midpoint reports its last population.
            middle: middle.unwrap_or_else(|| final_.clone()),
            final_,
        }
    });
    let best = &pop[best_of(&pop)];
    log::debug!(
        "de seed={} generations={} evaluations={} best={:.6}",
        ctx.seed,
        generation,
        evaluator.evaluations(),
        best.eval.fitness
    );
    Ok(AttackResult::from_best(
        SearchMethod::DifferentialEvolution,
        ctx,
        best.phenotype.clone(),
        best.eval,
        &evaluator,
        trajectory,
        snapshots,
    ))
}

/// Builds one clamped trial vector per member from three distinct donors,
/// none of which is the member itself.
fn mutate(
    pop: &[Member],
    scale: f64,
    bounds: &SearchBounds,
    rng: &mut ChaCha8Rng,
    probe: &mut dyn AttackProbe,
) -> Vec<Genotype> {
    let n = pop.len();
    (0..n)
        .map(|i| {
            let picked = sample(rng, n - 1, 3);
            let donor = |k: usize| {
                let j = picked.index(k);
                if j >= i {
                    j + 1
                } else {
                    j
                }
            };
            let [xi, phi, eta] = [donor(0), donor(1), donor(2)];
            probe.on_mutation(i, [xi, phi, eta]);
            let (a, b, c) = (&pop[xi].genotype.0, &pop[phi].genotype.0, &pop[eta].genotype.0);
            let mut trial = Genotype(
                (0..a.len())
                    .map(|k| a[k] + scale * (b[k] - c[k]))
                    .collect(),
            );
            bounds.clamp(&mut trial);
            trial
        })
        .collect()
}
