//! Random walk engine: validated step distributions and seeded walk streams.

use rand_chacha::ChaCha8Rng;

use crate::alias::AliasTable;
use crate::error::Error;
use crate::group::{apply_increment, GroupDescriptor, GroupElement};
use crate::rng::RngSpec;
use crate::Result;

/// A finitely supported step distribution on a group.
///
/// Validation guarantees: every atom belongs to the group, atoms are
/// pairwise distinct (checked through canonical encodings), weights are
/// positive and finite, normalized probabilities sum to 1 within 1e-12, and
/// at least one atom moves (a support consisting only of the identity would
/// freeze the walk forever).
#[derive(Clone, Debug)]
pub struct StepDistribution {
    group: GroupDescriptor,
    atoms: Vec<GroupElement>,
    probs: Vec<f64>,
    table: AliasTable,
}

impl StepDistribution {
    pub fn new(group: GroupDescriptor, support: Vec<(GroupElement, f64)>) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::InvalidDistribution("empty support".into()));
        }
        let mut encodings = std::collections::HashSet::new();
        for (atom, _) in &support {
            let bytes = group
                .canonical_encode(atom)
                .map_err(|e| Error::InvalidDistribution(e.to_string()))?;
            if !encodings.insert(bytes) {
                return Err(Error::InvalidDistribution(format!(
                    "duplicate atom {atom}"
                )));
            }
        }
        if support.iter().all(|(atom, _)| atom.is_identity()) {
            return Err(Error::InvalidDistribution(
                "support must contain a non-identity increment".into(),
            ));
        }
        let weights: Vec<f64> = support.iter().map(|(_, w)| *w).collect();
        let table = AliasTable::new(&weights)?;
        let total: f64 = weights.iter().sum();
        let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let psum: f64 = probs.iter().sum();
        if (psum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidDistribution(format!(
                "normalized probabilities sum to {psum}"
            )));
        }
        let atoms = support.into_iter().map(|(a, _)| a).collect();
        Ok(StepDistribution {
            group,
            atoms,
            probs,
            table,
        })
    }

    /// Uniform distribution on the standard generators and their inverses:
    /// simple random walk.
    pub fn standard_srw(group: GroupDescriptor) -> Self {
        let support = group
            .standard_generators()
            .into_iter()
            .map(|a| (a, 1.0))
            .collect();
        StepDistribution::new(group, support).expect("standard generators always validate")
    }

    pub fn group(&self) -> GroupDescriptor {
        self.group
    }

    pub fn atoms(&self) -> &[GroupElement] {
        &self.atoms
    }

    pub fn prob(&self, i: usize) -> f64 {
        self.probs[i]
    }

    /// Draw an atom index (two `u64` draws, see [`AliasTable::sample`]).
    #[inline]
    pub fn sample_index(&self, rng: &mut ChaCha8Rng) -> usize {
        self.table.sample(rng)
    }

    /// Draw a step increment.
    #[inline]
    pub fn sample_step(&self, rng: &mut ChaCha8Rng) -> &GroupElement {
        &self.atoms[self.sample_index(rng)]
    }
}

/// A walk in progress: current position `S_t`, step counter, and the stream
/// that produces future increments. Constructed at `S_0 = e`.
pub struct WalkStream {
    dist: StepDistribution,
    rng: ChaCha8Rng,
    position: GroupElement,
    step: u64,
}

impl WalkStream {
    pub fn new(dist: StepDistribution, spec: RngSpec) -> Self {
        let position = dist.group().identity();
        WalkStream {
            dist,
            rng: spec.rng(),
            position,
            step: 0,
        }
    }

    /// Advance one step (`S_{t+1} = S_t * X_{t+1}`); returns the index of
    /// the sampled atom so callers can audit or replay the increment.
    #[inline]
    pub fn advance(&mut self) -> usize {
        let idx = self.dist.sample_index(&mut self.rng);
        apply_increment(&mut self.position, &self.dist.atoms()[idx]);
        self.step += 1;
        idx
    }

    pub fn position(&self) -> &GroupElement {
        &self.position
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn at_identity(&self) -> bool {
        self.position.is_identity()
    }

    pub fn dist(&self) -> &StepDistribution {
        &self.dist
    }
}

/// Start a seeded walk at the identity.
pub fn walk(dist: &StepDistribution, spec: RngSpec) -> WalkStream {
    WalkStream::new(dist.clone(), spec)
}

/// Materialize the first `n + 1` positions `S_0, ..., S_n`.
pub fn trajectory(dist: &StepDistribution, n: u64, spec: RngSpec) -> Vec<GroupElement> {
    let mut stream = walk(dist, spec);
    let mut out = Vec::with_capacity((n + 1) as usize);
    out.push(stream.position().clone());
    for _ in 0..n {
        stream.advance();
        out.push(stream.position().clone());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamDomain;

    fn spec(seed: u64, index: u64) -> RngSpec {
        RngSpec::new(seed, StreamDomain::Replica, index)
    }

    fn z1() -> GroupDescriptor {
        GroupDescriptor::lattice(1).unwrap()
    }

    #[test]
    fn validation_rejects_degenerate_supports() {
        let g = z1();
        let e = g.identity();
        let one = GroupElement::Lattice(vec![1]);
        assert!(StepDistribution::new(g, vec![]).is_err());
        assert!(StepDistribution::new(g, vec![(e.clone(), 1.0)]).is_err());
        assert!(
            StepDistribution::new(g, vec![(one.clone(), 1.0), (one.clone(), 2.0)]).is_err()
        );
        assert!(StepDistribution::new(g, vec![(one.clone(), -1.0)]).is_err());
        let w = GroupElement::Word(vec![1]);
        assert!(StepDistribution::new(g, vec![(w, 1.0)]).is_err());
        // Lazy walk: identity atom is fine as long as something moves.
        assert!(StepDistribution::new(g, vec![(e, 1.0), (one, 1.0)]).is_ok());
    }

    #[test]
    fn deterministic_single_atom_walk_counts_up() {
        let g = z1();
        let dist =
            StepDistribution::new(g, vec![(GroupElement::Lattice(vec![1]), 1.0)]).unwrap();
        let traj = trajectory(&dist, 5, spec(0, 0));
        let coords: Vec<i64> = traj
            .iter()
            .map(|p| match p {
                GroupElement::Lattice(c) => c[0],
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(coords, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn zero_step_trajectory_is_just_the_identity() {
        let dist = StepDistribution::standard_srw(z1());
        let traj = trajectory(&dist, 0, spec(1, 0));
        assert_eq!(traj, vec![z1().identity()]);
    }

    #[test]
    fn same_spec_gives_identical_trajectories() {
        let dist = StepDistribution::standard_srw(GroupDescriptor::free(2).unwrap());
        let a = trajectory(&dist, 500, spec(99, 3));
        let b = trajectory(&dist, 500, spec(99, 3));
        assert_eq!(a, b);
        let c = trajectory(&dist, 500, spec(99, 4));
        assert_ne!(a, c);
    }

    #[test]
    fn positions_compose_from_sampled_atoms() {
        let g = GroupDescriptor::free(2).unwrap();
        let dist = StepDistribution::standard_srw(g);
        let mut stream = walk(&dist, spec(7, 0));
        let mut expected = g.identity();
        for _ in 0..300 {
            let idx = stream.advance();
            expected = g.compose(&expected, &dist.atoms()[idx]).unwrap();
            assert_eq!(stream.position(), &expected);
        }
        assert_eq!(stream.step_count(), 300);
    }

    #[test]
    fn step_frequencies_match_weights() {
        let g = z1();
        let dist = StepDistribution::new(
            g,
            vec![
                (GroupElement::Lattice(vec![1]), 1.0),
                (GroupElement::Lattice(vec![-1]), 3.0),
            ],
        )
        .unwrap();
        assert!((dist.prob(0) - 0.25).abs() < 1e-15);
        let mut stream = walk(&dist, spec(1234, 0));
        let n = 1_000_000u64;
        let mut hits = [0u64; 2];
        for _ in 0..n {
            hits[stream.advance()] += 1;
        }
        let freq = hits[0] as f64 / n as f64;
        assert!((freq - 0.25).abs() < 0.002, "freq {freq}");
    }

    #[test]
    fn srw_on_z3_has_uniform_step_frequencies() {
        let dist = StepDistribution::standard_srw(GroupDescriptor::lattice(3).unwrap());
        let mut stream = walk(&dist, spec(8, 0));
        let n = 600_000u64;
        let mut hits = [0u64; 6];
        for _ in 0..n {
            hits[stream.advance()] += 1;
        }
        for h in hits {
            let freq = h as f64 / n as f64;
            assert!((freq - 1.0 / 6.0).abs() < 0.003, "freq {freq}");
        }
    }

    #[test]
    fn free_group_positions_are_reduced_words() {
        let g = GroupDescriptor::free(3).unwrap();
        let dist = StepDistribution::standard_srw(g);
        let mut stream = walk(&dist, spec(21, 0));
        for _ in 0..2000 {
            stream.advance();
            assert!(g.belongs(stream.position()));
        }
    }
}
