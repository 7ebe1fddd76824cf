//! WebAssembly bindings for the in-browser demo page.
//!
//! Each export has a plain Rust counterpart returning `Result<_, String>` so
//! the same code paths run under `cargo test` on the host.

use std::path::Path;

use wasm_bindgen::prelude::*;

use se2lio::eval::{associate, evaluate, render_metrics, umeyama_alignment, Trajectory};
use se2lio::features::{extract, FeatureParams, ScanPoint};
use se2lio::io::parse_trajectory;
use se2lio::pipeline::{run_dataset, Dataset, Mode, PipelineConfig};
use se2lio::sim::{simulate, PerturbationSpec, SimConfig};

/// Upper bound on frames per demo run, to keep the page responsive.
pub const MAX_FRAMES: usize = 300;

const PAIRING_WINDOW: f64 = 0.02;

/// Outcome of a simulated run, flattened for JavaScript.
#[wasm_bindgen]
pub struct DemoRun {
    truth_xy: Vec<f64>,
    estimate_xy: Vec<f64>,
    ate: f64,
    are_deg: f64,
    frames: usize,
    non_converged: usize,
    mode: String,
}

#[wasm_bindgen]
impl DemoRun {
    /// Ground-truth positions as `[x0, y0, x1, y1, ...]`.
    #[wasm_bindgen(getter)]
    pub fn truth_xy(&self) -> Vec<f64> {
        self.truth_xy.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn estimate_xy(&self) -> Vec<f64> {
        self.estimate_xy.clone()
    }

    /// Translation RMSE, m.
    #[wasm_bindgen(getter)]
    pub fn ate(&self) -> f64 {
        self.ate
    }

    /// Rotation RMSE, degrees.
    #[wasm_bindgen(getter)]
    pub fn are_deg(&self) -> f64 {
        self.are_deg
    }

    #[wasm_bindgen(getter)]
    pub fn frames(&self) -> usize {
        self.frames
    }

    #[wasm_bindgen(getter)]
    pub fn non_converged(&self) -> usize {
        self.non_converged
    }

    /// Mode actually used, which may differ from the requested one.
    #[wasm_bindgen(getter)]
    pub fn mode(&self) -> String {
        self.mode.clone()
    }
}

/// Points of one synthetic sweep, split by feature class, in the sensor frame.
#[wasm_bindgen]
pub struct FeatureView {
    points_xy: Vec<f64>,
    edges_xy: Vec<f64>,
    planars_xy: Vec<f64>,
}

#[wasm_bindgen]
impl FeatureView {
    #[wasm_bindgen(getter)]
    pub fn points_xy(&self) -> Vec<f64> {
        self.points_xy.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn edges_xy(&self) -> Vec<f64> {
        self.edges_xy.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn planars_xy(&self) -> Vec<f64> {
        self.planars_xy.clone()
    }
}

fn trajectory_xy(traj: &Trajectory) -> Vec<f64> {
    traj.poses()
        .iter()
        .flat_map(|p| [p.pose.trans.x, p.pose.trans.y])
        .collect()
}

fn points_xy(points: &[ScanPoint]) -> Vec<f64> {
    points.iter().flat_map(|p| [p.pos.x, p.pos.y]).collect()
}

/// Simulates a loop through `scene` with the given out-of-plane motion and
/// runs odometry over it.
pub fn simulate_and_run(
    scene: &str,
    mode: &str,
    frames: usize,
    tilt_var: f64,
    sigma_z: f64,
    seed: u64,
) -> Result<DemoRun, String> {
    let mode: Mode = mode.parse().map_err(|e: se2lio::Error| e.to_string())?;
    if !(2..=MAX_FRAMES).contains(&frames) {
        return Err(format!("frames must be between 2 and {MAX_FRAMES}"));
    }
    let mut sim = SimConfig {
        scene: scene.to_string(),
        ..SimConfig::default()
    };
    sim.trajectory.frames = frames;
    sim.trajectory.seed = seed;
    sim.trajectory.perturbation = PerturbationSpec::isotropic(tilt_var, sigma_z);
    let data = simulate(&sim).map_err(|e| e.to_string())?;

    let mut config = PipelineConfig {
        mode,
        seed,
        ..PipelineConfig::default()
    };
    config.imu.gravity = sim.imu_noise.gravity;
    config.input.sweep_period = sim.trajectory.period();
    let out = run_dataset(&config, &Dataset::from_sim(&data)).map_err(|e| e.to_string())?;

    let estimate = out.trajectory();
    let assoc = associate(&estimate, &data.ground_truth, PAIRING_WINDOW).map_err(|e| e.to_string())?;
    let metrics = evaluate(&assoc);
    Ok(DemoRun {
        truth_xy: trajectory_xy(&data.ground_truth),
        estimate_xy: trajectory_xy(&estimate),
        ate: metrics.ate,
        are_deg: metrics.are_deg,
        frames: out.frames.len(),
        non_converged: out.non_converged(),
        mode: out.mode.to_string(),
    })
}

/// Extracts edge and planar features from one synthetic sweep.
pub fn feature_view(scene: &str, sigma_threshold: f64, seed: u64) -> Result<FeatureView, String> {
    let mut sim = SimConfig {
        scene: scene.to_string(),
        ..SimConfig::default()
    };
    sim.trajectory.frames = 1;
    sim.trajectory.seed = seed;
    let data = simulate(&sim).map_err(|e| e.to_string())?;
    let scan = &data.scans[0];
    let params = FeatureParams {
        sigma_threshold,
        ..FeatureParams::default()
    };
    let features = extract(scan, &params);
    Ok(FeatureView {
        points_xy: points_xy(&scan.points),
        edges_xy: points_xy(&features.edges),
        planars_xy: points_xy(&features.planars),
    })
}

/// Scores an estimated trajectory against ground truth, both given as
/// `t x y z qx qy qz qw` text. Returns the metrics table.
pub fn evaluate_text(estimate: &str, ground_truth: &str, align: bool) -> Result<String, String> {
    let est = parse_trajectory(estimate, Path::new("estimate")).map_err(|e| e.to_string())?;
    let gt = parse_trajectory(ground_truth, Path::new("ground truth")).map_err(|e| e.to_string())?;
    let mut assoc = associate(&est, &gt, PAIRING_WINDOW).map_err(|e| e.to_string())?;
    if assoc.pairs.is_empty() {
        return Err("no estimated pose has a ground-truth pose within 20 ms".into());
    }
    if align {
        let pairs: Vec<_> = assoc.pairs.iter().map(|(_, e, g)| (*e, *g)).collect();
        let t = umeyama_alignment(&pairs);
        for (_, e, _) in assoc.pairs.iter_mut() {
            *e = &t * &*e;
        }
    }
    let (table, _) = render_metrics("estimate", &evaluate(&assoc), assoc.unmatched);
    Ok(table)
}

#[wasm_bindgen(js_name = simulateAndRun)]
pub fn simulate_and_run_js(
    scene: &str,
    mode: &str,
    frames: usize,
    tilt_var: f64,
    sigma_z: f64,
    seed: u64,
) -> Result<DemoRun, JsError> {
    simulate_and_run(scene, mode, frames, tilt_var, sigma_z, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = featureView)]
pub fn feature_view_js(scene: &str, sigma_threshold: f64, seed: u64) -> Result<FeatureView, JsError> {
    feature_view(scene, sigma_threshold, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = evaluateText)]
pub fn evaluate_text_js(estimate: &str, ground_truth: &str, align: bool) -> Result<String, JsError> {
    evaluate_text(estimate, ground_truth, align).map_err(|e| JsError::new(&e))
}
