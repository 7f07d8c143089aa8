//! Perfectly inelastic disc contacts against each other and the walls.

use serde::{Deserialize, Serialize};

use crate::barrier::{neighbor_pairs, Workspace};
use crate::model::{Vec2, DEFAULT_MASS};

const VELOCITY_PASSES: usize = 50;
const POSITION_PASSES: usize = 20;
/// Approach speeds at or below this are round-off, not impacts (m/s).
const APPROACH_TOLERANCE: f64 = 1e-12;
/// Overlap below this depth is round-off at a touching configuration, not contact (m).
pub const CONTACT_SLOP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionModel {
    /// Radius of each robot's contact disc (m).
    pub robot_radius: f64,
    /// Mass of every robot (kg).
    pub mass: f64,
}

impl CollisionModel {
    pub fn for_ds(ds: f64) -> Self {
        Self {
            robot_radius: 0.5 * ds,
            mass: DEFAULT_MASS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactOutcome {
    pub positions: Vec<Vec2>,
    pub velocities: Vec<Vec2>,
    /// Robot touched or overlapped another robot or a wall this tick.
    pub indicators: Vec<bool>,
    pub robot_contact: Vec<bool>,
    pub wall_contact: Vec<bool>,
    /// `max(0, (m/2)(|v_before|^2 - |v_after|^2))` per robot.
    pub energy_loss: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
enum Contact {
    Pair(usize, usize),
    /// Robot index and outward wall normal.
    Wall(usize, Vec2),
}

/// Move every disc from `prev` with `velocities` for `dt`, then resolve
/// touching or overlapping discs.
///
/// A contact is a pair of discs, or a disc and a wall, that overlap by more
/// than [`CONTACT_SLOP`] at the start of the tick or at the unconstrained end
/// positions. The approaching
/// normal velocity of each contact is removed (equal masses share it evenly),
/// positions are recomputed from the resolved velocities, and any remaining
/// overlap is pushed apart along the contact normal. Robots without contacts
/// keep their unconstrained motion exactly.
pub fn resolve_contacts(
    prev: &[Vec2],
    velocities: &[Vec2],
    dt: f64,
    ws: &Workspace,
    model: &CollisionModel,
) -> ContactOutcome {
    let n = prev.len();
    let r = model.robot_radius;
    let candidate: Vec<Vec2> = prev
        .iter()
        .zip(velocities)
        .map(|(p, v)| *p + dt * *v)
        .collect();
    let touching = |pts: &[Vec2]| {
        neighbor_pairs(pts, 2.0 * r)
            .into_iter()
            .filter(|&(i, j)| pts[i].distance(pts[j]) < 2.0 * r - CONTACT_SLOP)
            .collect::<Vec<_>>()
    };
    let mut pairs = touching(&candidate);
    pairs.extend(touching(prev));
    pairs.sort_unstable();
    pairs.dedup();
    let mut contacts: Vec<Contact> = pairs.into_iter().map(|(i, j)| Contact::Pair(i, j)).collect();
    for i in 0..n {
        let mut normals: Vec<Vec2> = wall_normals(candidate[i], ws, r).collect();
        normals.extend(wall_normals(prev[i], ws, r));
        normals.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
        normals.dedup();
        contacts.extend(normals.into_iter().map(|nrm| Contact::Wall(i, nrm)));
    }
    let mut out = ContactOutcome {
        positions: candidate.clone(),
        velocities: velocities.to_vec(),
        indicators: vec![false; n],
        robot_contact: vec![false; n],
        wall_contact: vec![false; n],
        energy_loss: vec![0.0; n],
    };
    if contacts.is_empty() {
        return out;
    }
    for c in &contacts {
        match *c {
            Contact::Pair(i, j) => {
                out.robot_contact[i] = true;
                out.robot_contact[j] = true;
            }
            Contact::Wall(i, _) => out.wall_contact[i] = true,
        }
    }
    for i in 0..n {
        out.indicators[i] = out.robot_contact[i] || out.wall_contact[i];
    }

    let normals: Vec<Vec2> = contacts
        .iter()
        .map(|c| match *c {
            Contact::Pair(i, j) => pair_normal(&candidate, prev, i, j),
            Contact::Wall(_, n) => n,
        })
        .collect();
    let v = &mut out.velocities;
    for _ in 0..VELOCITY_PASSES {
        let mut changed = false;
        for (c, nrm) in contacts.iter().zip(&normals) {
            match *c {
                Contact::Pair(i, j) => {
                    let vn = (v[i] - v[j]).dot(*nrm);
                    if vn > APPROACH_TOLERANCE {
                        v[i] -= (0.5 * vn) * *nrm;
                        v[j] += (0.5 * vn) * *nrm;
                        changed = true;
                    }
                }
                Contact::Wall(i, nrm_w) => {
                    let vn = v[i].dot(nrm_w);
                    if vn > APPROACH_TOLERANCE {
                        v[i] -= vn * nrm_w;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }

    for i in 0..n {
        if out.indicators[i] {
            out.positions[i] = prev[i] + dt * out.velocities[i];
        }
    }
    depenetrate(&mut out.positions, &contacts, &out.indicators, ws, r);

    let half_m = 0.5 * model.mass;
    for i in 0..n {
        if out.indicators[i] {
            let loss = half_m * (velocities[i].norm_squared() - out.velocities[i].norm_squared());
            out.energy_loss[i] = loss.max(0.0);
        }
    }
    out
}

/// Outward normals of the walls a disc at `p` crosses.
fn wall_normals(p: Vec2, ws: &Workspace, r: f64) -> impl Iterator<Item = Vec2> {
    let e = CONTACT_SLOP;
    [
        (p.x - r < ws.xmin - e, Vec2::new(-1.0, 0.0)),
        (p.x + r > ws.xmax + e, Vec2::new(1.0, 0.0)),
        (p.y - r < ws.ymin - e, Vec2::new(0.0, -1.0)),
        (p.y + r > ws.ymax + e, Vec2::new(0.0, 1.0)),
    ]
    .into_iter()
    .filter(|(hit, _)| *hit)
    .map(|(_, n)| n)
}

/// Unit vector from `i` toward `j`.
fn pair_normal(candidate: &[Vec2], prev: &[Vec2], i: usize, j: usize) -> Vec2 {
    for pts in [candidate, prev] {
        let d = pts[j] - pts[i];
        let len = d.norm();
        if len > 1e-12 {
            return (1.0 / len) * d;
        }
    }
    Vec2::new(1.0, 0.0)
}

fn depenetrate(pos: &mut [Vec2], contacts: &[Contact], movable: &[bool], ws: &Workspace, r: f64) {
    for _ in 0..POSITION_PASSES {
        let mut moved = false;
        for c in contacts {
            if let Contact::Pair(i, j) = *c {
                let d = pos[j] - pos[i];
                let dist = d.norm();
                let overlap = 2.0 * r - dist;
                if overlap > 0.0 {
                    let nrm = if dist > 1e-12 {
                        (1.0 / dist) * d
                    } else {
                        Vec2::new(1.0, 0.0)
                    };
                    pos[i] -= (0.5 * overlap) * nrm;
                    pos[j] += (0.5 * overlap) * nrm;
                    moved = true;
                }
            }
        }
        for (p, m) in pos.iter_mut().zip(movable) {
            if *m {
                let clamped = Vec2::new(
                    p.x.clamp(ws.xmin + r, ws.xmax - r),
                    p.y.clamp(ws.ymin + r, ws.ymax - r),
                );
                if clamped != *p {
                    *p = clamped;
                    moved = true;
                }
            }
        }
        if !moved {
            break;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DT: f64 = 1.0 / 30.0;

    fn model() -> CollisionModel {
        CollisionModel::for_ds(0.08)
    }

    #[test]
    fn no_contacts_is_identity() {
        let prev = vec![Vec2::new(0.0, 0.0), Vec2::new(0.3, 0.0)];
        let vel = vec![Vec2::new(0.05, 0.01), Vec2::new(-0.02, 0.0)];
        let out = resolve_contacts(&prev, &vel, DT, &Workspace::default(), &model());
        assert_eq!(out.velocities, vel);
        assert_eq!(out.positions[0], prev[0] + DT * vel[0]);
        assert!(out.indicators.iter().all(|i| !i));
        assert!(out.energy_loss.iter().all(|e| *e == 0.0));
    }

    #[test]
    fn wall_impact_loses_all_normal_energy() {
        let ws = Workspace::default();
        let prev = vec![Vec2::new(ws.xmax - 0.04, 0.0)];
        let out = resolve_contacts(&prev, &[Vec2::new(0.1, 0.0)], DT, &ws, &model());
        assert!(out.indicators[0] && out.wall_contact[0]);
        assert_eq!(out.velocities[0], Vec2::ZERO);
        assert!((out.energy_loss[0] - 3.0e-4).abs() < 1e-15);
        assert!(out.positions[0].x <= ws.xmax - 0.04);
    }

    #[test]
    fn glancing_contact_keeps_tangential_velocity() {
        let prev = vec![Vec2::new(0.0, 0.0), Vec2::new(0.0799, 0.0)];
        let vel = vec![Vec2::new(0.0, 0.05), Vec2::ZERO];
        let out = resolve_contacts(&prev, &vel, DT, &Workspace::default(), &model());
        assert!(out.indicators[0] && out.indicators[1]);
        assert_eq!(out.velocities, vel);
        assert_eq!(out.energy_loss, vec![0.0, 0.0]);
    }

    #[test]
    fn head_on_pair_stops_both() {
        let prev = vec![Vec2::new(-0.041, 0.0), Vec2::new(0.041, 0.0)];
        let vel = vec![Vec2::new(0.05, 0.0), Vec2::new(-0.05, 0.0)];
        let out = resolve_contacts(&prev, &vel, DT, &Workspace::default(), &model());
        assert!(out.robot_contact[0] && out.robot_contact[1]);
        for i in 0..2 {
            assert!(out.velocities[i].norm() < 1e-15);
            assert!((out.energy_loss[i] - 0.03 * 0.0025).abs() < 1e-15);
        }
        assert!(out.positions[0].distance(out.positions[1]) >= 0.08 - 1e-12);
    }

    #[test]
    fn exact_touching_is_not_contact() {
        let prev = vec![Vec2::new(0.0, 0.0), Vec2::new(0.08 - 1e-17, 0.0)];
        let out = resolve_contacts(&prev, &[Vec2::ZERO; 2], DT, &Workspace::default(), &model());
        assert!(out.indicators.iter().all(|i| !i));
    }

    #[test]
    fn overlap_is_pushed_apart() {
        let prev = vec![Vec2::new(0.0, 0.0), Vec2::new(0.06, 0.0)];
        let out = resolve_contacts(&prev, &[Vec2::ZERO; 2], DT, &Workspace::default(), &model());
        assert!((out.positions[0].distance(out.positions[1]) - 0.08).abs() < 1e-12);
        assert_eq!(out.energy_loss, vec![0.0, 0.0]);
    }
}
