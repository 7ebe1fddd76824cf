use se2lio_web::{evaluate_text, feature_view, simulate_and_run, MAX_FRAMES};

#[test]
fn short_run_tracks_ground_truth() {
    let run = simulate_and_run("box_room", "se2lio", 20, 0.0, 0.0, 3).unwrap();
    assert_eq!(run.frames(), 20);
    assert_eq!(run.mode(), "se2lio");
    assert_eq!(run.truth_xy().len(), run.estimate_xy().len());
    assert_eq!(run.non_converged(), 0);
    assert!(run.ate() < 0.05, "ate {}", run.ate());
}

#[test]
fn bad_arguments_are_rejected() {
    assert!(simulate_and_run("box_room", "lio", 20, 0.0, 0.0, 0).is_err());
    assert!(simulate_and_run("box_room", "se2lo", MAX_FRAMES + 1, 0.0, 0.0, 0).is_err());
    assert!(simulate_and_run("moon", "se2lo", 10, 0.0, 0.0, 0).is_err());
    assert!(simulate_and_run("box_room", "se2lo", 10, -1.0, 0.0, 0).is_err());
}

#[test]
fn features_are_subsets_of_the_sweep() {
    let v = feature_view("box_room", 0.1, 0).unwrap();
    let points = v.points_xy();
    assert!(!v.edges_xy().is_empty() && !v.planars_xy().is_empty());
    assert!(v.edges_xy().len() + v.planars_xy().len() < points.len());
    let contains = |xy: &[f64]| points.chunks(2).any(|p| p == xy);
    for e in v.edges_xy().chunks(2) {
        assert!(contains(e));
    }
}

#[test]
fn evaluate_text_reports_zero_for_identical_input() {
    let traj = "0.0 0 0 0 0 0 0 1\n0.1 1 0 0 0 0 0 1\n0.2 2 1 0 0 0 0.0998 0.995\n";
    let table = evaluate_text(traj, traj, false).unwrap();
    assert!(table.contains("estimate"), "{table}");
    assert!(evaluate_text("garbage", traj, true).is_err());
    assert!(evaluate_text("5.0 0 0 0 0 0 0 1\n", traj, false).is_err());
}
