//! Deterministic box placement by cyclic constraint projection.
//!
//! Variables start at the centroid of their unary-feasible grid candidates
//! and are repeatedly projected onto each constraint's feasible set until a
//! full sweep moves nothing, then the exact predicates are re-checked.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use super::constraint::{Axis, BoxRef, Constraint, ConstraintSet, Order, VarSpec};
use super::{BBox, LayoutError};

const GRID_N: usize = 32;
const MAX_SWEEPS: usize = 200;
/// Extra randomized starts tried when the deterministic pass stalls in a
/// projection limit cycle (disjointness pushing apart what closeness pulls
/// together). Each restart jitters the centers and shuffles the order the
/// constraints are projected in.
const RESTART_ATTEMPTS: usize = 8;
const CONVERGENCE_TOL: f64 = 1e-4;
const PROJECTION_MARGIN: f64 = 1e-9;
const GEOM_TOL: f64 = 1e-12;
const BISECTION_ITERS: usize = 60;

/// A solve result with the diagnostics the quality gates compare.
#[derive(Debug, Clone)]
pub struct SolveReport {
    /// One box per variable, in `ConstraintSet::vars` order.
    pub boxes: Vec<BBox>,
    /// Where each variable started.
    pub init_centers: Vec<(f64, f64)>,
    /// Euclidean distance moved, summed over variables in quadrature.
    pub displacement: f64,
    /// Projection sweeps actually run.
    pub sweeps: usize,
}

/// How much of the constraint set had to be dropped to find a layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relaxation {
    None,
    DroppedNoOverlap,
    DroppedProximity,
}

struct Geometry<'a> {
    vars: &'a [VarSpec],
    centers: Vec<(f64, f64)>,
}

fn make_box(cx: f64, cy: f64, w: f64, h: f64) -> BBox {
    BBox { x0: cx - w / 2.0, y0: cy - h / 2.0, x1: cx + w / 2.0, y1: cy + h / 2.0 }
}

impl Geometry<'_> {
    fn box_of(&self, v: usize) -> BBox {
        let (cx, cy) = self.centers[v];
        make_box(cx, cy, self.vars[v].width, self.vars[v].height)
    }

    fn resolve(&self, r: &BoxRef) -> BBox {
        match r {
            BoxRef::Var(i) => self.box_of(*i),
            BoxRef::Fixed(b) => *b,
        }
    }

    fn boxes(&self) -> Vec<BBox> {
        (0..self.vars.len()).map(|v| self.box_of(v)).collect()
    }

    fn shift(&mut self, v: usize, dx: f64, dy: f64) -> f64 {
        self.centers[v].0 += dx;
        self.centers[v].1 += dy;
        (dx * dx + dy * dy).sqrt()
    }

    fn move_to(&mut self, v: usize, tx: f64, ty: f64) -> f64 {
        let (cx, cy) = self.centers[v];
        self.shift(v, tx - cx, ty - cy)
    }
}

fn clamp_center(c: f64, lo_edge: f64, hi_edge: f64, side: f64) -> f64 {
    let lo = lo_edge + side / 2.0;
    let hi = hi_edge - side / 2.0;
    if lo > hi {
        (lo_edge + hi_edge) / 2.0
    } else {
        c.clamp(lo, hi)
    }
}

/// True when `c` constrains only variable `v` (every other reference is a
/// fixed box), so it can score a candidate position for `v` on its own.
fn involves_only(c: &Constraint, v: usize) -> bool {
    let is_v = |r: &BoxRef| matches!(r, BoxRef::Var(i) if *i == v);
    let fixed = |r: &BoxRef| matches!(r, BoxRef::Fixed(_));
    match c {
        Constraint::HalfPlane { var, .. } | Constraint::Containment { var, .. } => *var == v,
        Constraint::Proximity { a, b, .. }
        | Constraint::Overlap { a, b, .. }
        | Constraint::NoOverlap { a, b } => {
            (is_v(a) && fixed(b)) || (fixed(a) && is_v(b))
        }
    }
}

fn grid_centers() -> Vec<f64> {
    (0..GRID_N).map(|i| (i as f64 + 0.5) / GRID_N as f64).collect()
}

fn initial_centers(vars: &[VarSpec], constraints: &[Constraint]) -> Vec<(f64, f64)> {
    let ticks = grid_centers();
    let mut centers = Vec::with_capacity(vars.len());
    for (v, spec) in vars.iter().enumerate() {
        let unary: Vec<&Constraint> =
            constraints.iter().filter(|c| involves_only(c, v)).collect();
        let mut sum = (0.0, 0.0);
        let mut count = 0usize;
        for &cy in &ticks {
            for &cx in &ticks {
                let candidate = make_box(cx, cy, spec.width, spec.height);
                // Only variable v is referenced, so every slot can hold the
                // candidate without affecting the outcome.
                let scratch = vec![candidate; vars.len()];
                if unary.iter().all(|c| c.satisfied(&scratch)) {
                    sum.0 += cx;
                    sum.1 += cy;
                    count += 1;
                }
            }
        }
        if count > 0 {
            centers.push((sum.0 / count as f64, sum.1 / count as f64));
        } else {
            centers.push((0.5, 0.5));
        }
    }
    centers
}

fn project(c: &Constraint, geom: &mut Geometry<'_>, rng: &mut ChaCha12Rng) -> f64 {
    match c {
        Constraint::Containment { var, region } => {
            let (cx, cy) = geom.centers[*var];
            let tx = clamp_center(cx, region.x0, region.x1, geom.vars[*var].width);
            let ty = clamp_center(cy, region.y0, region.y1, geom.vars[*var].height);
            geom.move_to(*var, tx, ty)
        }
        Constraint::HalfPlane { var, axis, bound, order } => {
            let (cx, cy) = geom.centers[*var];
            let cur = match axis {
                Axis::X => cx,
                Axis::Y => cy,
            };
            let ok = match order {
                Order::Less => cur < *bound,
                Order::Greater => cur > *bound,
            };
            if ok {
                return 0.0;
            }
            let target = match order {
                Order::Less => bound - PROJECTION_MARGIN,
                Order::Greater => bound + PROJECTION_MARGIN,
            };
            match axis {
                Axis::X => geom.move_to(*var, target, cy),
                Axis::Y => geom.move_to(*var, cx, target),
            }
        }
        Constraint::Proximity { a, b, max_dist } => {
            let (ca, cb) = (geom.resolve(a).center(), geom.resolve(b).center());
            let (dx, dy) = (cb.0 - ca.0, cb.1 - ca.1);
            let d = (dx * dx + dy * dy).sqrt();
            if d <= max_dist + GEOM_TOL {
                return 0.0;
            }
            let (ux, uy) = (dx / d, dy / d);
            let excess = d - max_dist;
            match (a, b) {
                (BoxRef::Var(i), BoxRef::Var(j)) => {
                    let step = excess / 2.0;
                    let da = geom.shift(*i, ux * step, uy * step);
                    let db = geom.shift(*j, -ux * step, -uy * step);
                    da.max(db)
                }
                (BoxRef::Var(i), BoxRef::Fixed(_)) => geom.shift(*i, ux * excess, uy * excess),
                (BoxRef::Fixed(_), BoxRef::Var(j)) => {
                    geom.shift(*j, -ux * excess, -uy * excess)
                }
                (BoxRef::Fixed(_), BoxRef::Fixed(_)) => 0.0,
            }
        }
        Constraint::Overlap { a, b, min_iou } => {
            if geom.resolve(a).iou(&geom.resolve(b)) >= min_iou - GEOM_TOL {
                return 0.0;
            }
            // Slide the movable endpoint(s) toward each other along the
            // straight center path; bisect for the smallest sufficient step.
            let (ca, cb) = (geom.resolve(a).center(), geom.resolve(b).center());
            let (ta, tb) = match (a, b) {
                (BoxRef::Var(_), BoxRef::Var(_)) => {
                    let mid = ((ca.0 + cb.0) / 2.0, (ca.1 + cb.1) / 2.0);
                    (mid, mid)
                }
                (BoxRef::Var(_), BoxRef::Fixed(_)) => (cb, cb),
                _ => (ca, ca),
            };
            let boxes_at = |s: f64| -> (BBox, BBox) {
                let lerp = |p: (f64, f64), t: (f64, f64)| {
                    (p.0 + s * (t.0 - p.0), p.1 + s * (t.1 - p.1))
                };
                let place = |r: &BoxRef, from: (f64, f64), to: (f64, f64)| match r {
                    BoxRef::Var(i) => {
                        let (cx, cy) = lerp(from, to);
                        make_box(cx, cy, geom.vars[*i].width, geom.vars[*i].height)
                    }
                    BoxRef::Fixed(f) => *f,
                };
                (place(a, ca, ta), place(b, cb, tb))
            };
            let iou_at = |s: f64| {
                let (ba, bb) = boxes_at(s);
                ba.iou(&bb)
            };
            let s = if iou_at(1.0) < *min_iou {
                1.0
            } else {
                let (mut lo, mut hi) = (0.0f64, 1.0f64);
                for _ in 0..BISECTION_ITERS {
                    let mid = (lo + hi) / 2.0;
                    if iou_at(mid) >= *min_iou {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                hi
            };
            let mut moved = 0.0f64;
            if let BoxRef::Var(i) = a {
                let t = (ca.0 + s * (ta.0 - ca.0), ca.1 + s * (ta.1 - ca.1));
                moved = moved.max(geom.move_to(*i, t.0, t.1));
            }
            if let BoxRef::Var(j) = b {
                let t = (cb.0 + s * (tb.0 - cb.0), cb.1 + s * (tb.1 - cb.1));
                moved = moved.max(geom.move_to(*j, t.0, t.1));
            }
            moved
        }
        Constraint::NoOverlap { a, b } => {
            let (ba, bb) = (geom.resolve(a), geom.resolve(b));
            if ba.intersection_area(&bb) <= GEOM_TOL {
                return 0.0;
            }
            let ox = ba.x1.min(bb.x1) - ba.x0.max(bb.x0);
            let oy = ba.y1.min(bb.y1) - ba.y0.max(bb.y0);
            let axis = if oy < ox { Axis::Y } else { Axis::X };
            let (extent, pa, pb) = match axis {
                Axis::X => (ox, ba.center().0, bb.center().0),
                Axis::Y => (oy, ba.center().1, bb.center().1),
            };
            let sign = if pa > pb {
                1.0
            } else if pa < pb {
                -1.0
            } else if rng.gen_bool(0.5) {
                1.0
            } else {
                -1.0
            };
            let need = extent + PROJECTION_MARGIN;
            let push = |geom: &mut Geometry<'_>, v: usize, amount: f64| match axis {
                Axis::X => geom.shift(v, amount, 0.0),
                Axis::Y => geom.shift(v, 0.0, amount),
            };
            match (a, b) {
                (BoxRef::Var(i), BoxRef::Var(j)) => {
                    let da = push(geom, *i, sign * need / 2.0);
                    let db = push(geom, *j, -sign * need / 2.0);
                    da.max(db)
                }
                (BoxRef::Var(i), BoxRef::Fixed(_)) => push(geom, *i, sign * need),
                (BoxRef::Fixed(_), BoxRef::Var(j)) => push(geom, *j, -sign * need),
                (BoxRef::Fixed(_), BoxRef::Fixed(_)) => 0.0,
            }
        }
    }
}

fn active_constraints(
    set: &ConstraintSet,
    existing: &[BBox],
    relaxation: Relaxation,
) -> Vec<Constraint> {
    set.with_existing(existing)
        .into_iter()
        .filter(|c| match relaxation {
            Relaxation::None => true,
            Relaxation::DroppedNoOverlap => !matches!(c, Constraint::NoOverlap { .. }),
            Relaxation::DroppedProximity => {
                !matches!(c, Constraint::NoOverlap { .. } | Constraint::Proximity { .. })
            }
        })
        .collect()
}

fn solve_with(
    set: &ConstraintSet,
    existing: &[BBox],
    seed: u64,
    relaxation: Relaxation,
) -> Result<SolveReport, LayoutError> {
    let constraints = active_constraints(set, existing, relaxation);
    let init = initial_centers(set.vars(), &constraints);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    let mut last_unmet = String::from("an empty constraint list");
    for attempt in 0..=RESTART_ATTEMPTS {
        let mut order: Vec<usize> = (0..constraints.len()).collect();
        let centers = if attempt == 0 {
            init.clone()
        } else {
            order.shuffle(&mut rng);
            init.iter()
                .map(|c| {
                    (
                        (c.0 + rng.gen_range(-0.4..0.4)).clamp(0.02, 0.98),
                        (c.1 + rng.gen_range(-0.4..0.4)).clamp(0.02, 0.98),
                    )
                })
                .collect()
        };
        let mut geom = Geometry { vars: set.vars(), centers };

        let mut sweeps = 0usize;
        while sweeps < MAX_SWEEPS {
            let mut max_disp = 0.0f64;
            for &ci in &order {
                max_disp = max_disp.max(project(&constraints[ci], &mut geom, &mut rng));
            }
            sweeps += 1;
            if max_disp < CONVERGENCE_TOL {
                let boxes = geom.boxes();
                if constraints.iter().all(|c| c.satisfied(&boxes)) {
                    break;
                }
            }
        }

        let raw = geom.boxes();
        match constraints.iter().find(|c| !c.satisfied(&raw)) {
            Some(unmet) => last_unmet = format!("{unmet:?}"),
            None => return finish_report(raw, &geom.centers, &init, sweeps),
        }
    }
    Err(LayoutError::Infeasible(format!(
        "projection did not converge to a layout satisfying {last_unmet}"
    )))
}

/// Validates solved boxes and measures how far the final centers moved from
/// the deterministic starting centers (restart jitter does not count).
fn finish_report(
    raw: Vec<BBox>,
    finals: &[(f64, f64)],
    init: &[(f64, f64)],
    sweeps: usize,
) -> Result<SolveReport, LayoutError> {
    let boxes = raw
        .into_iter()
        .map(|b| BBox::new(b.x0, b.y0, b.x1, b.y1))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| LayoutError::Infeasible(format!("solved box left the canvas: {e}")))?;

    let displacement = init
        .iter()
        .zip(finals)
        .map(|(i, c)| (c.0 - i.0).powi(2) + (c.1 - i.1).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(SolveReport { boxes, init_centers: init.to_vec(), displacement, sweeps })
}

/// Solves the full constraint set; errors with `Infeasible` when the
/// projection loop cannot satisfy every predicate.
pub fn solve_layout_detailed(
    set: &ConstraintSet,
    existing: &[BBox],
    seed: u64,
) -> Result<SolveReport, LayoutError> {
    solve_with(set, existing, seed, Relaxation::None)
}

/// `solve_layout_detailed` reduced to the boxes.
pub fn solve_layout(
    set: &ConstraintSet,
    existing: &[BBox],
    seed: u64,
) -> Result<Vec<BBox>, LayoutError> {
    solve_layout_detailed(set, existing, seed).map(|r| r.boxes)
}

/// Solves the set, progressively dropping disjointness and then closeness
/// constraints when the stricter problem has no solution.
pub fn solve_relaxed(
    set: &ConstraintSet,
    existing: &[BBox],
    seed: u64,
) -> Result<(SolveReport, Relaxation), LayoutError> {
    for relaxation in
        [Relaxation::None, Relaxation::DroppedNoOverlap, Relaxation::DroppedProximity]
    {
        match solve_with(set, existing, seed, relaxation) {
            Ok(report) => return Ok((report, relaxation)),
            Err(LayoutError::Infeasible(_)) => continue,
            Err(other) => return Err(other),
        }
    }
    Err(LayoutError::Infeasible("no layout even with all soft constraints dropped".into()))
}
