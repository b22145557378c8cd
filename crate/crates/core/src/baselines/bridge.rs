//! Brownian Bridge random walk between uniformly sampled free-cell endpoints.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{free_cells, PlanError, PlannedPath, Result, SegmentTag};
use crate::world::WorldMap;

const MAX_TRIES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BridgeParams {
    pub total_steps: usize,
    pub waypoint_count: usize,
    /// Diffusion scale, meters per square-root step.
    pub sigma: f64,
}

impl Default for BridgeParams {
    fn default() -> Self {
        Self { total_steps: 1000, waypoint_count: 10, sigma: 0.5 }
    }
}

/// Closed-form bridge from `a` to `b` over `t_steps` steps:
/// `B(t) = a + (t/T)(b − a) + σ(W(t) − (t/T)W(T))`. Returns `T + 1` points
/// with both ends pinned exactly.
pub fn brownian_bridge_unconstrained<R: Rng>(
    a: [f64; 2],
    b: [f64; 2],
    t_steps: usize,
    sigma: f64,
    rng: &mut R,
) -> Vec<[f64; 2]> {
    let n = t_steps.max(1);
    let mut w = vec![[0.0f64; 2]; n + 1];
    for t in 1..=n {
        let dx: f64 = rng.sample(StandardNormal);
        let dy: f64 = rng.sample(StandardNormal);
        w[t] = [w[t - 1][0] + dx, w[t - 1][1] + dy];
    }
    let wt = w[n];
    let mut out = Vec::with_capacity(n + 1);
    for (t, wi) in w.iter().enumerate() {
        let s = t as f64 / n as f64;
        out.push([
            a[0] + s * (b[0] - a[0]) + sigma * (wi[0] - s * wt[0]),
            a[1] + s * (b[1] - a[1]) + sigma * (wi[1] - s * wt[1]),
        ]);
    }
    out[0] = a;
    out[n] = b;
    out
}

fn valid(map: &WorldMap, p: [f64; 2]) -> bool {
    map.cell_at(p[0], p[1]).map(|c| !map.is_obstacle(c)).unwrap_or(false)
}

/// Reflects `p` back across whichever boundary the step from `from`
/// violated: a map edge, or the near face of the obstacle cell entered.
fn reflect(map: &WorldMap, from: [f64; 2], p: [f64; 2]) -> [f64; 2] {
    let (w, h) = (map.width_m(), map.height_m());
    let mut q = p;
    for (k, extent) in [(0, w), (1, h)] {
        if q[k] < 0.0 {
            q[k] = -q[k];
        } else if q[k] >= extent {
            q[k] = 2.0 * extent - q[k];
        }
    }
    if let (Ok(cf), Ok(cp)) = (map.cell_at(from[0], from[1]), map.cell_at(q[0], q[1])) {
        if map.is_obstacle(cp) {
            let c = map.cell_size();
            for (k, (fi, pi)) in [(0, (cf.col, cp.col)), (1, (cf.row, cp.row))] {
                if pi > fi {
                    q[k] = 2.0 * (pi as f64 * c) - q[k];
                } else if pi < fi {
                    q[k] = 2.0 * ((pi + 1) as f64 * c) - q[k];
                }
            }
        }
    }
    q
}

/// Random walk through `waypoint_count` endpoints drawn uniformly from free
/// cells, each pair joined by a Brownian bridge of
/// `total_steps / waypoint_count` steps.
///
/// Steps are drawn from the bridge's exact one-step conditional law. A step
/// that leaves the map or enters an obstacle is reflected once; if still
/// invalid it is redrawn, up to 100 times, after which the walk stays put
/// for that step.
pub fn brownian_bridge_walk(
    map: &WorldMap,
    start: [f64; 2],
    altitude: f64,
    params: &BridgeParams,
    seed: u64,
) -> Result<PlannedPath> {
    if !(params.sigma >= 0.0 && params.sigma.is_finite()) {
        return Err(PlanError::InvalidParameter { name: "sigma", reason: format!("{} must be >= 0", params.sigma) });
    }
    if params.waypoint_count == 0 {
        return Err(PlanError::InvalidParameter { name: "waypoint_count", reason: "must be at least 1".into() });
    }
    if !valid(map, start) {
        return Err(PlanError::BadStart { x: start[0], y: start[1] });
    }
    let free = free_cells(map);
    if free.is_empty() {
        return Err(PlanError::NoFreeCell);
    }
    let steps_per = (params.total_steps / params.waypoint_count).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut path = PlannedPath::new(altitude, start);
    let mut x = start;
    for _ in 0..params.waypoint_count {
        let cell = map.unlinear(free[rng.random_range(0..free.len())]);
        let (bx, by) = map.cell_center(cell);
        let b = [bx, by];
        for t in 0..steps_per {
            let r = (steps_per - t) as f64;
            if steps_per - t == 1 {
                x = b;
                path.push(x, SegmentTag::Bridge);
                break;
            }
            let mean = [x[0] + (b[0] - x[0]) / r, x[1] + (b[1] - x[1]) / r];
            let sd = params.sigma * ((r - 1.0) / r).sqrt();
            for _ in 0..MAX_TRIES {
                let zx: f64 = rng.sample(StandardNormal);
                let zy: f64 = rng.sample(StandardNormal);
                let mut p = [mean[0] + sd * zx, mean[1] + sd * zy];
                if !valid(map, p) {
                    p = reflect(map, x, p);
                }
                if valid(map, p) {
                    x = p;
                    path.push(x, SegmentTag::Bridge);
                    break;
                }
            }
        }
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_pins_ends() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = brownian_bridge_unconstrained([1.0, 2.0], [30.0, -4.0], 50, 2.0, &mut rng);
        assert_eq!(p.len(), 51);
        assert_eq!(p[0], [1.0, 2.0]);
        assert_eq!(p[50], [30.0, -4.0]);
    }

    #[test]
    fn zero_sigma_is_straight() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = brownian_bridge_unconstrained([0.0, 0.0], [10.0, 5.0], 10, 0.0, &mut rng);
        for (t, q) in p.iter().enumerate() {
            assert!((q[0] - t as f64).abs() < 1e-12 && (q[1] - 0.5 * t as f64).abs() < 1e-12);
        }
    }
}
