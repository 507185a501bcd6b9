#![allow(dead_code)]

use msse::info::Distribution;
use msse::partition::{build_layers, enumerate_binary_partitions, Event, InfoSource, Partition, StateSpace};
use msse::problem::ChoiceProblem;
use rand::seq::SliceRandom;
use rand::Rng;

pub fn binary(n: usize, states: &[usize]) -> Partition {
    Partition::binary(n, Event::from_states(states.iter().copied())).unwrap()
}

pub fn source(n: usize, states: &[usize], lambda: f64) -> InfoSource {
    InfoSource::new(binary(n, states), lambda).unwrap()
}

/// Two options, four states; option 1 pays in w1, w2 and option 2 in w1, w3.
pub fn example2_with_prior(l1: f64, l2: f64, prior: Vec<f64>) -> ChoiceProblem {
    let space = StateSpace::new(["w1", "w2", "w3", "w4"]).unwrap();
    let layers = build_layers(&[source(4, &[0, 1], l1), source(4, &[0, 2], l2)]).unwrap();
    ChoiceProblem::new(
        space,
        Distribution::new(prior).unwrap(),
        vec!["opt1".into(), "opt2".into()],
        vec![vec![1.0, 1.0, 0.0, 0.0], vec![1.0, 0.0, 1.0, 0.0]],
        layers,
    )
    .unwrap()
}

pub fn example2(l1: f64, l2: f64) -> ChoiceProblem {
    example2_with_prior(l1, l2, vec![0.25; 4])
}

/// Accept/reject on an urn: states ordered from most blue to most red.
pub fn example1(l1: f64, l2: f64) -> ChoiceProblem {
    let space = StateSpace::new(["blue60", "blue51", "red51", "red60"]).unwrap();
    let layers = build_layers(&[
        source(4, &[0], l1),
        source(4, &[3], l1),
        source(4, &[1, 2], l1),
        source(4, &[0, 1], l2),
    ])
    .unwrap();
    ChoiceProblem::new(
        space,
        Distribution::uniform(4),
        vec!["accept".into(), "reject".into()],
        vec![vec![1.0, 1.0, -1.0, -1.0], vec![0.0; 4]],
        layers,
    )
    .unwrap()
}

pub fn random_prior<R: Rng>(rng: &mut R, n: usize) -> Distribution {
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    Distribution::normalized(w).unwrap()
}

/// Up to `max_sources` random binary sources on `n` states whose join is
/// discrete, with multipliers drawn from `multipliers`.
pub fn random_sources<R: Rng>(rng: &mut R, n: usize, max_sources: usize, multipliers: &[f64]) -> Vec<InfoSource> {
    let space = StateSpace::numbered(n).unwrap();
    let all = enumerate_binary_partitions(&space).unwrap();
    loop {
        let k = rng.gen_range(1..=max_sources);
        let picked: Vec<&Partition> = all.choose_multiple(rng, k).collect();
        let mut codes = vec![0u32; n];
        for p in &picked {
            for (s, c) in codes.iter_mut().enumerate() {
                *c = (*c << 1) | u32::from(p.blocks()[0].contains(s));
            }
        }
        let mut d = codes.clone();
        d.sort_unstable();
        d.dedup();
        if d.len() == n {
            return picked
                .into_iter()
                .map(|p| InfoSource::new(p.clone(), *multipliers.choose(rng).unwrap()).unwrap())
                .collect();
        }
    }
}

/// A random problem small enough for the grid oracle: at most four free
/// dimensions and at most two layers.
pub fn random_small_problem<R: Rng>(rng: &mut R) -> ChoiceProblem {
    loop {
        let n_states = rng.gen_range(2..=4);
        let n_options = rng.gen_range(2..=3);
        let l1 = rng.gen_range(0.2..1.0);
        let l2 = l1 + rng.gen_range(0.1..1.5);
        let sources = random_sources(rng, n_states, 3, &[l1, l2]);
        let layers = build_layers(&sources).unwrap();
        if layers.depth() > 2 {
            continue;
        }
        let space = StateSpace::numbered(n_states).unwrap();
        let prior = random_prior(rng, n_states);
        let payoffs = (0..n_options)
            .map(|_| (0..n_states).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let options = (0..n_options).map(|i| format!("o{i}")).collect();
        let problem = ChoiceProblem::new(space, prior, options, payoffs, layers).unwrap();
        if problem.deep_cells().len() * (n_options - 1) <= 4 {
            return problem;
        }
    }
}
