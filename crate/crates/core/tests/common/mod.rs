//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use strange_reservoir::persistence::{self, Artifact, ArtifactKind};
use strange_reservoir::readout::{FeatureMap, MlpModel, RidgeModel};
use strange_reservoir::reservoir::{self, ReservoirSystem};
use strange_reservoir::{linalg, DenseMatrix, DenseVector};

/// Mostly ordinary doubles, with awkward values mixed in.
fn awkward(rng: &mut ChaCha8Rng) -> f64 {
    match rng.random_range(0..12) {
        0 => -0.0,
        1 => 5e-324,
        2 => f64::MIN_POSITIVE,
        3 => 1.0 / 3.0,
        4 => rng.random_range(-1e300..1e300),
        5 => rng.random_range(-1e-300..1e-300),
        _ => rng.random_range(-10.0..10.0),
    }
}

fn random_reservoir(rng: &mut ChaCha8Rng, awkward_input: bool) -> ReservoirSystem {
    let seed = rng.random();
    match rng.random_range(0..4) {
        0 => reservoir::build_uniform(rng.random_range(2..=12), seed).unwrap(),
        1 => reservoir::build_haar(rng.random_range(1..=20), rng.random_range(0.05..0.99), seed).unwrap(),
        2 => reservoir::build_takens(rng.random_range(1..=6)).unwrap(),
        _ => {
            let n = rng.random_range(1..=8);
            let raw = DenseMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let norm = linalg::operator_norm(&raw).unwrap();
            let a = raw.scaled(rng.random_range(0.1..0.95) / norm);
            let c = DenseVector::new(
                (0..n)
                    .map(|_| if awkward_input { awkward(rng) } else { rng.random_range(-1.0..1.0) })
                    .collect(),
            );
            ReservoirSystem::custom(a, c, seed).unwrap()
        }
    }
}

/// A valid random artifact of the given kind, determined by `seed`.
pub fn random_artifact(kind: ArtifactKind, seed: u64) -> Artifact {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        ArtifactKind::Reservoir => random_reservoir(&mut rng, true).into(),
        ArtifactKind::Ridge => {
            let dim = rng.random_range(1..=6);
            let fm = if rng.random_bool(0.3) {
                FeatureMap::linear(dim).unwrap()
            } else {
                FeatureMap::polynomial(dim, rng.random_range(1..=3)).unwrap()
            };
            let weights = DenseVector::new((0..fm.output_dim()).map(|_| awkward(&mut rng)).collect());
            RidgeModel {
                feature_map: fm,
                weights,
                lambda: rng.random_range(0.0..1.0),
            }
            .into()
        }
        ArtifactKind::Mlp => {
            let mut sizes = vec![rng.random_range(1..=6)];
            for _ in 0..rng.random_range(1..=3) {
                sizes.push(rng.random_range(1..=8));
            }
            sizes.push(1);
            let lo = rng.random_range(-50.0..50.0);
            let hi = lo + rng.random_range(1e-3..100.0);
            MlpModel::new(&sizes, lo, hi, &mut rng).unwrap().into()
        }
        ArtifactKind::Trajectory => {
            let res = random_reservoir(&mut rng, false);
            let len = rng.random_range(2..=60);
            let inputs: Vec<f64> = (0..len).map(|_| rng.random_range(-20.0..20.0)).collect();
            let washout = rng.random_range(0..len);
            reservoir::drive(&res, &inputs, None, washout)
                .unwrap()
                .with_dt(rng.random_range(1e-4..1.0))
                .into()
        }
    }
}

/// save then load through a real file; the re-serialized text must match
/// byte for byte, which for shortest round-trip floats means every double
/// kept its bits.
pub fn round_trip_identical(artifact: &Artifact, dir: &std::path::Path) -> bool {
    let path = dir.join("artifact.srj");
    persistence::save(artifact, &path).unwrap();
    let back = persistence::load(&path).unwrap();
    persistence::to_string(artifact).unwrap() == persistence::to_string(&back).unwrap()
        && std::fs::read_to_string(&path).unwrap() == persistence::to_string(&back).unwrap()
}

pub const ALL_KINDS: [ArtifactKind; 4] = [
    ArtifactKind::Reservoir,
    ArtifactKind::Ridge,
    ArtifactKind::Mlp,
    ArtifactKind::Trajectory,
];
