mod common;

use common::scenarios;

#[test]
fn canonical_encoding_round_trips() {
    scenarios::codec_round_trip(10_000);
}

#[test]
fn frames_round_trip() {
    scenarios::frame_round_trip(10_000);
}

#[test]
fn fft_features_match_direct_dft() {
    scenarios::fft_matches_dft();
}

#[test]
fn lpc_matches_dense_normal_equations() {
    scenarios::lpc_matches_dense_solve();
}

#[test]
fn concurrent_logging_stays_ordered() {
    scenarios::log_monotonicity();
}

#[test]
fn checkpoints_follow_the_interval() {
    scenarios::checkpoint_cadence();
}
