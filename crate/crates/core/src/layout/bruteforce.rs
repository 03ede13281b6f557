//! Exhaustive grid oracle for layout problems: enumerates every assignment
//! of variable centers to a fixed grid and reports the feasible one closest
//! to the given starting centers. Slow but independent of the projection
//! solver, so the two can be compared.

use super::constraint::{BoxRef, Constraint, ConstraintSet};
use super::BBox;

const GRID_N: usize = 32;

fn make_box(cx: f64, cy: f64, w: f64, h: f64) -> BBox {
    BBox { x0: cx - w / 2.0, y0: cy - h / 2.0, x1: cx + w / 2.0, y1: cy + h / 2.0 }
}

fn unary_for(c: &Constraint, v: usize) -> bool {
    let is_v = |r: &BoxRef| matches!(r, BoxRef::Var(i) if *i == v);
    let fixed = |r: &BoxRef| matches!(r, BoxRef::Fixed(_));
    match c {
        Constraint::HalfPlane { var, .. } | Constraint::Containment { var, .. } => *var == v,
        Constraint::Proximity { a, b, .. }
        | Constraint::Overlap { a, b, .. }
        | Constraint::NoOverlap { a, b } => (is_v(a) && fixed(b)) || (fixed(a) && is_v(b)),
    }
}

/// Finds the grid assignment of all variables minimizing the Euclidean
/// distance (in the product space of centers) from `init_centers`, subject
/// to every constraint. `None` when no grid assignment is feasible.
pub fn min_displacement_assignment(
    set: &ConstraintSet,
    existing: &[BBox],
    init_centers: &[(f64, f64)],
) -> Option<(Vec<BBox>, f64)> {
    let vars = set.vars();
    assert_eq!(init_centers.len(), vars.len());
    let constraints = set.with_existing(existing);
    let ticks: Vec<f64> = (0..GRID_N).map(|i| (i as f64 + 0.5) / GRID_N as f64).collect();

    // Candidates that already fail a constraint touching only this variable
    // can never appear in a feasible assignment.
    let mut candidates: Vec<Vec<(f64, f64)>> = Vec::with_capacity(vars.len());
    for (v, spec) in vars.iter().enumerate() {
        let unary: Vec<&Constraint> = constraints.iter().filter(|c| unary_for(c, v)).collect();
        let mut list = Vec::new();
        for &cy in &ticks {
            for &cx in &ticks {
                let scratch = vec![make_box(cx, cy, spec.width, spec.height); vars.len()];
                if unary.iter().all(|c| c.satisfied(&scratch)) {
                    list.push((cx, cy));
                }
            }
        }
        if list.is_empty() {
            return None;
        }
        candidates.push(list);
    }

    let n = vars.len();
    let mut idx = vec![0usize; n];
    let mut best: Option<(Vec<BBox>, f64)> = None;
    loop {
        let centers: Vec<(f64, f64)> = (0..n).map(|v| candidates[v][idx[v]]).collect();
        let sq: f64 = centers
            .iter()
            .zip(init_centers)
            .map(|(c, i)| (c.0 - i.0).powi(2) + (c.1 - i.1).powi(2))
            .sum();
        let disp = sq.sqrt();
        if best.as_ref().map_or(true, |(_, b)| disp < *b) {
            let boxes: Vec<BBox> = (0..n)
                .map(|v| make_box(centers[v].0, centers[v].1, vars[v].width, vars[v].height))
                .collect();
            if constraints.iter().all(|c| c.satisfied(&boxes)) {
                best = Some((boxes, disp));
            }
        }

        let mut advanced = false;
        for v in 0..n {
            idx[v] += 1;
            if idx[v] < candidates[v].len() {
                advanced = true;
                break;
            }
            idx[v] = 0;
        }
        if !advanced {
            break;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::directive::parse_directive;
    use crate::layout::{relation_to_constraints, solve_layout_detailed};
    use std::collections::BTreeMap;

    fn set_for(text: &str, anchors: &[(&str, BBox)]) -> (ConstraintSet, Vec<BBox>) {
        let d = parse_directive(text).unwrap();
        let map: BTreeMap<String, BBox> =
            anchors.iter().map(|(n, b)| (n.to_string(), *b)).collect();
        let set = relation_to_constraints(&d, &map, &BBox::CANVAS).unwrap();
        (set, anchors.iter().map(|(_, b)| *b).collect())
    }

    #[test]
    fn oracle_confirms_unconstrained_center() {
        let (set, existing) = set_for("add a cat", &[]);
        let (boxes, disp) =
            min_displacement_assignment(&set, &existing, &[(0.5, 0.5)]).unwrap();
        // 0.5 falls between ticks; the closest candidate is half a tick off
        // in each axis.
        let half_tick = 0.5 / 32.0;
        assert!(disp <= half_tick * std::f64::consts::SQRT_2 + 1e-12, "{disp}");
        let (cx, cy) = boxes[0].center();
        assert!((cx - 0.5).abs() <= half_tick + 1e-12 && (cy - 0.5).abs() <= half_tick + 1e-12);
    }

    #[test]
    fn oracle_and_solver_agree_on_halfplane() {
        let yard = BBox::new(0.1, 0.1, 0.5, 0.5).unwrap();
        let (set, existing) = set_for("add a cat right of the yard", &[("yard", yard)]);
        let report = solve_layout_detailed(&set, &existing, 7).unwrap();
        let (_, grid_min) =
            min_displacement_assignment(&set, &existing, &report.init_centers).unwrap();
        assert!(
            report.displacement <= grid_min + 1e-9,
            "solver {} vs grid {}",
            report.displacement,
            grid_min
        );
    }

    #[test]
    fn oracle_reports_infeasible_as_none() {
        use crate::layout::{Axis, Order, VarSpec};
        let set = ConstraintSet::new(
            vec![VarSpec { name: "cat".into(), width: 0.3, height: 0.3 }],
            vec![
                Constraint::HalfPlane { var: 0, axis: Axis::X, bound: 0.2, order: Order::Less },
                Constraint::HalfPlane {
                    var: 0,
                    axis: Axis::X,
                    bound: 0.8,
                    order: Order::Greater,
                },
                Constraint::Containment { var: 0, region: BBox::CANVAS },
            ],
        )
        .unwrap();
        assert!(min_displacement_assignment(&set, &[], &[(0.5, 0.5)]).is_none());
    }

    #[test]
    fn oracle_handles_two_variable_problems() {
        let (set, existing) = set_for("a cat and a dog play together", &[]);
        let report = solve_layout_detailed(&set, &existing, 7).unwrap();
        let (boxes, grid_min) =
            min_displacement_assignment(&set, &existing, &report.init_centers).unwrap();
        assert_eq!(boxes.len(), 2);
        assert!(report.displacement <= grid_min + 1e-9);
    }
}
