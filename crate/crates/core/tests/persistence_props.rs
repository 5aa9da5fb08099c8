mod common;

use proptest::prelude::*;
use strange_reservoir::persistence::{self, ArtifactKind, PersistenceError};

fn check_kind(kind: ArtifactKind, seed: u64) -> Result<(), TestCaseError> {
    let dir = tempfile::tempdir().unwrap();
    let artifact = common::random_artifact(kind, seed);
    prop_assert!(common::round_trip_identical(&artifact, dir.path()));
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn reservoirs_round_trip(seed in any::<u64>()) { check_kind(ArtifactKind::Reservoir, seed)?; }

    #[test]
    fn ridge_models_round_trip(seed in any::<u64>()) { check_kind(ArtifactKind::Ridge, seed)?; }

    #[test]
    fn mlps_round_trip(seed in any::<u64>()) { check_kind(ArtifactKind::Mlp, seed)?; }

    #[test]
    fn trajectories_round_trip(seed in any::<u64>()) { check_kind(ArtifactKind::Trajectory, seed)?; }

    /// Changing one character of the payload is caught by the parser, the
    /// checksum or the invariants, unless it only appends a digit beyond
    /// double precision and the decoded artifact is unchanged.
    #[test]
    fn corruption_is_detected(seed in any::<u64>(), pos in any::<prop::sample::Index>()) {
        let kind = common::ALL_KINDS[(seed % 4) as usize];
        let text = persistence::to_string(&common::random_artifact(kind, seed)).unwrap();
        let start = text.find("\"payload\"").unwrap();
        let end = text.find("\"checksum\"").unwrap();
        let i = start + pos.index(end - start);
        let mut bytes = text.clone().into_bytes();
        bytes[i] = if bytes[i] == b'1' { b'2' } else { b'1' };
        let corrupted = String::from_utf8(bytes).unwrap();
        match persistence::from_str(&corrupted) {
            Err(PersistenceError::Checksum { .. } | PersistenceError::Format(_) | PersistenceError::Invariant(_)) => {}
            Err(e) => prop_assert!(false, "unexpected error {e}"),
            Ok(a) => prop_assert_eq!(persistence::to_string(&a).unwrap(), text),
        }
    }
}
