use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    AttackContext, AttackError, AttackProbe, AttackResult, Evaluation, Evaluator, NoProbe, Perturbation,
    SearchMethod,
};

/// Uniform sampling of `draws` perturbations (capped by the budget).
///
/// Reports the draw with the lowest true-class probability, the first one
/// on ties. Success is judged on that draw.
pub fn random_search_attack(
    ctx: &AttackContext<'_>,
    draws: usize,
) -> Result<AttackResult, AttackError> {
    random_search_attack_with_probe(ctx, draws, &mut NoProbe)
}

pub fn random_search_attack_with_probe(
    ctx: &AttackContext<'_>,
    draws: usize,
    probe: &mut dyn AttackProbe,
) -> Result<AttackResult, AttackError> {
    let draws = draws.min(ctx.budget);
    if draws == 0 {
        return Err(AttackError::InvalidConfig(
            "random search needs at least one draw".into(),
        ));
    }
    let bounds = ctx.bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let mut evaluator = Evaluator::new(ctx, true);
    let mut trajectory = Vec::with_capacity(draws);
    let mut best: Option<(Perturbation, Evaluation)> = None;
    for _ in 0..draws {
        let p = Perturbation {
            row: rng.random_range(0..bounds.rows),
            col: rng.random_range(0..bounds.cols),
            values: (0..bounds.channels)
                .map(|_| rng.random_range(0..bounds.codebook_len) as u16)
                .collect(),
        };
        let eval = evaluator.evaluate(&p, probe).map_err(|e| match e {
            AttackError::Oracle {
                source,
                evaluations,
                ..
            } => AttackError::Oracle {
                source,
                trajectory: trajectory.clone(),
                evaluations,
            },
            other => other,
        })?;
        match &best {
            Some((_, b)) if eval.fitness >= b.fitness => {}
            _ => best = Some((p, eval)),
        }
        trajectory.push(best.as_ref().map(|(_, e)| e.fitness).unwrap());
    }
    let (p, eval) = best.expect("at least one draw");
    Ok(AttackResult::from_best(
        SearchMethod::RandomSearch,
        ctx,
        p,
        eval,
        &evaluator,
        trajectory,
        None,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image_io::ImageTensor;
    use crate::oracle::{ExpectedShape, OracleError, OracleHandle, ProbabilityModel};
    use crate::vq_codec::{Codebook, IndexTensor};

    struct Dark;

    impl ProbabilityModel for Dark {
        fn classes(&self) -> usize {
            2
        }
        fn expected_shape(&self) -> ExpectedShape {
            ExpectedShape::Flattened(4)
        }
        fn probabilities(&self, img: &ImageTensor) -> Result<Vec<f64>, OracleError> {
            let p0 = 1.0 - img.data().iter().map(|&v| v as f64).sum::<f64>() / (4.0 * 255.0);
            Ok(vec![p0, 1.0 - p0])
        }
    }

    #[test]
    fn keeps_the_minimum_and_respects_budget() {
        let cb = Codebook::from_rows(1, 1, &[vec![0.0], vec![255.0]]).unwrap();
        let idx = IndexTensor::new(2, 2, 1, 2, cb.id(), vec![0; 4]).unwrap();
        let oracle = OracleHandle::custom(Dark);
        let ctx = AttackContext::new(&idx, &cb, &oracle, 0, 40, 9).unwrap();
        let res = random_search_attack(&ctx, 100).unwrap();
        assert_eq!(res.evaluations, 40);
        assert_eq!(res.best.values, vec![1]);
        assert!((res.fitness - 0.75).abs() < 1e-12);
        assert!(!res.success);
        assert_eq!(res.trajectory.len(), 40);
        assert!(res.trajectory.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(random_search_attack(&ctx, 100).unwrap(), res);
    }
}
