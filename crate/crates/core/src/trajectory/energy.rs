use super::{build_waypoints, Ellipse, TrajParams, TrajectoryError};
use crate::phantom::NasalCorridor;
use crate::swab::SwabBeam;

/// Track samples visited by the strain sweep.
pub const ENERGY_SAMPLES: usize = 50;
/// Shaft segments evaluated per sample.
pub const ENERGY_SEGMENTS: usize = 20;

/// Elastic energy of one deflected segment, ½·ν·d².
pub fn segment_energy(nu: f64, depth: f64) -> f64 {
    0.5 * nu * depth * depth
}

/// Quasi-static strain energy accumulated while sweeping the swab along the
/// trajectory. The sweep stops at the first sample whose tip reaches the
/// nasopharynx.
pub fn strain_energy(
    p: &TrajParams,
    corridor: &NasalCorridor,
    swab: &SwabBeam<f64>,
    ellipse: &Ellipse,
) -> Result<f64, TrajectoryError> {
    let track = build_waypoints(p, corridor, ellipse)?;
    let step = swab.l_max / ENERGY_SEGMENTS as f64;
    let mut total = 0.0;
    for k in 0..ENERGY_SAMPLES {
        let l = track.total_duration * k as f64 / (ENERGY_SAMPLES - 1) as f64;
        let tip = track.target_at(l);
        let axis = tip.z_axis();
        let depth = corridor.project(&tip.position).s;
        let (nu, _) = swab.stiffness_clamped(swab.contact_length(depth.max(0.0)));
        for j in 0..ENERGY_SEGMENTS {
            let mid = tip.position - axis * (step * (j as f64 + 0.5));
            if let Some(c) = corridor.wall_contact(&mid) {
                total += segment_energy(nu, c.penetration);
            }
        }
        if depth >= corridor.np_depth {
            break;
        }
    }
    Ok(total)
}
